//! The four subcommands: sampler runs, synthetic data generation,
//! posterior summarization, and the numeric self-check suite.

use std::path::Path;
use std::sync::Arc;

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

use sfc_core::diagnostics::{
    beta_summary, canonical_permutation, cluster_mean_bands, label_uncertainty, map_partition,
};
use sfc_core::error::{Result, SfcError};
use sfc_core::io::{
    read_dataset_bin, read_dataset_csv, read_manifest, read_ndjson, sha256_file, write_beta_csv,
    write_beta_trace, write_curves_csv, write_dataset_bin, write_dataset_csv, write_labels_csv,
    write_manifest, write_ndjson, write_uncertainty_csv, ChainStatus, RawDataset, RunManifest,
};
use sfc_core::lattice::SpatialLattice;
use sfc_core::model::{FunctionalDataset, ModelContext};
use sfc_core::parallel::WorkerPool;
use sfc_core::sampler::{run_chains, PosteriorSample};
use sfc_core::selftest;
use sfc_core::simulate::{preset, preset_names, simulate};
use sfc_core::wavelet::WaveletBasis;

use crate::config::{DataFormat, RunConfig};

fn load_dataset(config: &RunConfig) -> Result<RawDataset> {
    let raw = match config.data.resolved_format()? {
        DataFormat::Csv => read_dataset_csv(&config.data.path)?,
        DataFormat::Binary => read_dataset_bin(&config.data.path)?,
    };
    let expected = config.data.rows * config.data.cols;
    if raw.n != expected {
        return Err(SfcError::Data(format!(
            "dataset has {} locations but the {}x{} lattice needs {expected}",
            raw.n, config.data.rows, config.data.cols
        )));
    }
    let raw = match config.data.target_t {
        Some(t) if t != raw.t => raw.subsample_time(t)?,
        _ => raw,
    };
    if raw.t < 2 || !raw.t.is_power_of_two() {
        return Err(SfcError::Data(format!(
            "series length {} is not a power of two; set data.target_t",
            raw.t
        )));
    }
    Ok(raw)
}

/// Writes the merged posterior summary files into `out_dir`.
fn write_summary(
    out_dir: &Path,
    samples: &[PosteriorSample],
    basis: &WaveletBasis,
    p: usize,
    k_order: usize,
) -> Result<()> {
    let map = map_partition(samples)?;
    write_labels_csv(&out_dir.join("labels.csv"), &map.labels)?;
    write_uncertainty_csv(&out_dir.join("uncertainty.csv"), &label_uncertainty(samples)?)?;
    write_curves_csv(&out_dir.join("curves.csv"), &cluster_mean_bands(samples, &map, basis)?)?;
    write_beta_csv(&out_dir.join("beta.csv"), &beta_summary(samples, &map, basis, p)?)?;

    let exemplar = &samples[map.draws[0]];
    let (_, perm) = canonical_permutation(&exemplar.labels);
    let d = map.labels.iter().copied().max().map_or(0, |m| m + 1);
    let centers: Vec<usize> = (0..d)
        .map(|r| {
            let orig = perm.iter().position(|&q| q == r).expect("complete permutation");
            exemplar.clusters[orig].center
        })
        .collect();
    let map_json = serde_json::json!({
        "d": d,
        "centers": centers,
        "K": k_order,
        "labels": map.labels,
        "support": map.support,
        "total_draws": samples.len(),
    });
    let text = serde_json::to_string_pretty(&map_json)
        .map_err(|e| SfcError::Data(format!("serializing modal partition: {e}")))?;
    std::fs::write(out_dir.join("map.json"), text + "\n")?;
    Ok(())
}

/// Loads data, runs pilot and main chains, and writes per-chain logs,
/// posterior summaries, and the run manifest.
pub fn run(config_path: &Path) -> Result<i32> {
    let text = std::fs::read_to_string(config_path)
        .map_err(|e| SfcError::Config(format!("{}: {e}", config_path.display())))?;
    let config = RunConfig::parse(&text)?;

    let raw = load_dataset(&config)?;
    let input_sha256 = sha256_file(&config.data.path)?;

    let lattice = Arc::new(
        SpatialLattice::new(config.data.rows, config.data.cols)
            .map_err(|e| SfcError::Config(e.to_string()))?,
    );
    let basis = Arc::new(WaveletBasis::new(config.model.wavelet, raw.t)?);
    let dataset = Arc::new(FunctionalDataset::new(&basis, raw.y, raw.x)?);
    let ctx = ModelContext::new(
        lattice,
        basis.clone(),
        dataset,
        config.model.hyperparameters.clone(),
    )?;

    let mut cfg = config.sampler.settings.clone();
    cfg.cluster_workers = config.parallel.cluster_workers;
    let chain_pool = WorkerPool::new(config.parallel.chain_workers)?;

    println!(
        "running {} chains ({} iterations, {} pilots) on {} chain workers",
        config.sampler.chains,
        cfg.iterations,
        cfg.pilot_chains,
        chain_pool.workers()
    );
    let runs = run_chains(&ctx, &cfg, config.sampler.seed, config.sampler.chains, &chain_pool)?;

    let out_dir = &config.output.dir;
    std::fs::create_dir_all(out_dir)?;

    let mut statuses = Vec::with_capacity(runs.len());
    let mut merged: Vec<PosteriorSample> = Vec::new();
    for (c, chain) in runs.iter().enumerate() {
        match &chain.outcome {
            Ok(result) => {
                write_ndjson(&out_dir.join(format!("chain_{c}.log.ndjson")), &result.log_lines)?;
                write_ndjson(&out_dir.join(format!("chain_{c}.samples.ndjson")), &result.samples)?;
                write_beta_trace(
                    &out_dir.join(format!("chain_{c}.beta.bin")),
                    ctx.basis.t(),
                    ctx.data.p(),
                    &result.samples,
                )?;
                println!("chain {c}: ok ({} samples)", result.samples.len());
                merged.extend(result.samples.iter().cloned());
                statuses.push(ChainStatus {
                    index: c,
                    seed: chain.seed,
                    status: "ok".into(),
                    error: None,
                });
            }
            Err(e) => {
                eprintln!("chain {c}: failed: {e}");
                statuses.push(ChainStatus {
                    index: c,
                    seed: chain.seed,
                    status: "failed".into(),
                    error: Some(e.to_string()),
                });
            }
        }
    }

    let ok_count = statuses.iter().filter(|s| s.status == "ok").count();
    let status = if ok_count == runs.len() {
        "ok"
    } else if ok_count > 0 {
        "partial"
    } else {
        "failed"
    };
    let manifest = RunManifest {
        config: serde_json::to_value(&config)
            .map_err(|e| SfcError::Config(format!("echoing config: {e}")))?,
        master_seed: config.sampler.seed,
        chain_seeds: runs.iter().map(|r| r.seed).collect(),
        input_sha256,
        chains: statuses,
        status: status.into(),
    };
    write_manifest(&out_dir.join("manifest.json"), &manifest)?;

    if ok_count == 0 {
        let first = runs
            .iter()
            .find_map(|r| r.outcome.as_ref().err())
            .map_or_else(|| "unknown".to_string(), |e| e.to_string());
        return Err(SfcError::NumericDomain(format!("every chain failed; first error: {first}")));
    }
    if merged.is_empty() {
        println!("no post-burn-in samples retained; skipping posterior summaries");
    } else {
        write_summary(
            out_dir,
            &merged,
            &basis,
            ctx.data.p(),
            config.model.hyperparameters.k_order,
        )?;
        println!("summaries written to {}", out_dir.display());
    }
    println!("run {status}: manifest at {}", out_dir.join("manifest.json").display());
    Ok(0)
}

/// Generates a preset scenario deterministically from a seed and writes
/// the dataset in both formats plus the generating truth.
pub fn run_simulate(preset_name: &str, seed: u64, out_dir: &Path) -> Result<i32> {
    let spec = preset(preset_name).map_err(|_| {
        SfcError::Config(format!(
            "unknown preset {preset_name:?}; available: {}",
            preset_names().join(", ")
        ))
    })?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let sim = simulate(&spec, &mut rng)?;
    std::fs::create_dir_all(out_dir)?;

    let raw = RawDataset::from_functional(&sim.dataset);
    write_dataset_csv(&out_dir.join("dataset.csv"), &raw)?;
    write_dataset_bin(&out_dir.join("dataset.bin"), &raw)?;
    write_labels_csv(&out_dir.join("truth_labels.csv"), sim.partition.labels())?;

    let echo = serde_json::json!({
        "preset": preset_name,
        "seed": seed,
        "rows": spec.rows,
        "cols": spec.cols,
        "t": spec.t,
        "p": spec.p,
        "d": sim.partition.d(),
        "centers": sim.partition.gvt().centers(),
        "K": spec.k_order,
    });
    let text = serde_json::to_string_pretty(&echo)
        .map_err(|e| SfcError::Data(format!("serializing scenario echo: {e}")))?;
    std::fs::write(out_dir.join("simulation.json"), text + "\n")?;

    println!(
        "wrote {} locations x {} time points (p = {}) to {}",
        raw.n,
        raw.t,
        raw.p,
        out_dir.display()
    );
    Ok(0)
}

/// Merges the per-chain sample files of a finished run and rewrites the
/// posterior summaries.
pub fn summarize(run_dir: &Path, out_dir: Option<&Path>) -> Result<i32> {
    let manifest = read_manifest(&run_dir.join("manifest.json"))?;
    let config: RunConfig = serde_json::from_value(manifest.config.clone())
        .map_err(|e| SfcError::Data(format!("manifest config echo: {e}")))?;

    let mut merged: Vec<PosteriorSample> = Vec::new();
    for chain in &manifest.chains {
        if chain.status != "ok" {
            continue;
        }
        let path = run_dir.join(format!("chain_{}.samples.ndjson", chain.index));
        merged.extend(read_ndjson::<PosteriorSample>(&path)?);
    }
    if merged.is_empty() {
        return Err(SfcError::Data(format!(
            "{}: no posterior samples in any completed chain",
            run_dir.display()
        )));
    }

    let t = merged[0].clusters[0].mu.len();
    let p = merged[0].clusters[0].beta.len() / t;
    let basis = WaveletBasis::new(config.model.wavelet, t)?;
    let out_dir = out_dir.unwrap_or(run_dir);
    std::fs::create_dir_all(out_dir)?;
    write_summary(out_dir, &merged, &basis, p, config.model.hyperparameters.k_order)?;
    println!(
        "summarized {} samples from {} chains into {}",
        merged.len(),
        manifest.chains.iter().filter(|c| c.status == "ok").count(),
        out_dir.display()
    );
    Ok(0)
}

/// Runs the numeric self-checks and prints one line per check.
pub fn check() -> Result<i32> {
    let results = selftest::run_all(1);
    let mut all_passed = true;
    for r in &results {
        let tag = if r.passed { "ok  " } else { "FAIL" };
        println!("{tag} {} ({})", r.name, r.detail);
        all_passed &= r.passed;
    }
    Ok(if all_passed { 0 } else { 1 })
}
