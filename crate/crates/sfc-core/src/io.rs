//! On-disk formats: newline-delimited JSON logs, long-format dataset CSV,
//! a packed little-endian binary dataset, a binary coefficient trace, run
//! manifests, and the summary CSV files.
//!
//! Every writer is deterministic: identical inputs produce identical
//! bytes. Floats print through Rust's shortest round-trip formatting in
//! text files and as IEEE-754 little-endian in binary files.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read as _, Write as _};
use std::path::Path;

use nalgebra::DMatrix;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::diagnostics::{BetaBand, CurveBand};
use crate::error::{Result, SfcError};
use crate::model::FunctionalDataset;
use crate::sampler::PosteriorSample;

/// Writes one JSON document per line.
pub fn write_ndjson<T: Serialize>(path: &Path, items: &[T]) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    for item in items {
        let line = serde_json::to_string(item)
            .map_err(|e| SfcError::Data(format!("serializing log record: {e}")))?;
        writeln!(w, "{line}")?;
    }
    w.flush()?;
    Ok(())
}

/// Reads a newline-delimited JSON file, skipping blank lines.
pub fn read_ndjson<T: DeserializeOwned>(path: &Path) -> Result<Vec<T>> {
    let reader = BufReader::new(File::open(path)?);
    let mut out = Vec::new();
    for (ln, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line).map_err(|e| {
            SfcError::Data(format!("{}:{}: {e}", path.display(), ln + 1))
        })?);
    }
    Ok(out)
}

/// Observed curves in matrix form: `y` and each `x[i]` are T x N with one
/// column per location.
#[derive(Debug, Clone, PartialEq)]
pub struct RawDataset {
    pub n: usize,
    pub t: usize,
    pub p: usize,
    pub y: DMatrix<f64>,
    pub x: Vec<DMatrix<f64>>,
}

impl RawDataset {
    pub fn new(y: DMatrix<f64>, x: Vec<DMatrix<f64>>) -> Result<Self> {
        let (t, n) = (y.nrows(), y.ncols());
        for (i, xi) in x.iter().enumerate() {
            if xi.nrows() != t || xi.ncols() != n {
                return Err(SfcError::Data(format!(
                    "covariate {} is {}x{}, response is {t}x{n}",
                    i + 1,
                    xi.nrows(),
                    xi.ncols()
                )));
            }
        }
        Ok(Self { n, t, p: x.len(), y, x })
    }

    pub fn from_functional(data: &FunctionalDataset) -> Self {
        Self {
            n: data.n(),
            t: data.t(),
            p: data.p(),
            y: data.y_raw().clone(),
            x: (0..data.p()).map(|i| data.x_raw(i).clone()).collect(),
        }
    }

    /// Keeps every `step`-th time point starting at 0, for trimming a
    /// series down to a power-of-two length.
    pub fn subsample_time(&self, keep: usize) -> Result<Self> {
        if keep == 0 || keep > self.t {
            return Err(SfcError::Data(format!(
                "cannot keep {keep} of {} time points",
                self.t
            )));
        }
        let pick = |m: &DMatrix<f64>| {
            DMatrix::from_fn(keep, self.n, |tau, s| {
                m[(tau * self.t / keep, s)]
            })
        };
        Self::new(pick(&self.y), self.x.iter().map(pick).collect())
    }
}

/// CSV layout, one row per observation:
///
/// ```text
/// location_id,covariate_id,t,value
/// ```
///
/// `covariate_id` 0 is the response and 1..=p are the covariates. Rows are
/// ordered by (location_id, covariate_id, t) and values use shortest
/// round-trip decimal formatting.
pub fn write_dataset_csv(path: &Path, data: &RawDataset) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    writeln!(w, "location_id,covariate_id,t,value")?;
    for s in 0..data.n {
        for i in 0..=data.p {
            let m = if i == 0 { &data.y } else { &data.x[i - 1] };
            for tau in 0..data.t {
                writeln!(w, "{s},{i},{tau},{}", m[(tau, s)])?;
            }
        }
    }
    w.flush()?;
    Ok(())
}

/// Reads the long-format CSV, inferring N, T, and p from the ids and
/// requiring every (location, covariate, time) cell exactly once.
pub fn read_dataset_csv(path: &Path) -> Result<RawDataset> {
    let reader = BufReader::new(File::open(path)?);
    let mut rows: Vec<(usize, usize, usize, f64)> = Vec::new();
    for (ln, line) in reader.lines().enumerate() {
        let line = line?;
        let trimmed = line.trim();
        if trimmed.is_empty() || (ln == 0 && trimmed.starts_with("location_id")) {
            continue;
        }
        let fields: Vec<&str> = trimmed.split(',').collect();
        if fields.len() != 4 {
            return Err(SfcError::Data(format!(
                "{}:{}: expected 4 fields, got {}",
                path.display(),
                ln + 1,
                fields.len()
            )));
        }
        let bad = |what: &str, e: &dyn std::fmt::Display| {
            SfcError::Data(format!("{}:{}: {what}: {e}", path.display(), ln + 1))
        };
        let s: usize = fields[0].trim().parse().map_err(|e| bad("location_id", &e))?;
        let i: usize = fields[1].trim().parse().map_err(|e| bad("covariate_id", &e))?;
        let tau: usize = fields[2].trim().parse().map_err(|e| bad("t", &e))?;
        let v: f64 = fields[3].trim().parse().map_err(|e| bad("value", &e))?;
        rows.push((s, i, tau, v));
    }
    if rows.is_empty() {
        return Err(SfcError::Data(format!("{}: no observations", path.display())));
    }
    let n = rows.iter().map(|r| r.0).max().unwrap() + 1;
    let p = rows.iter().map(|r| r.1).max().unwrap();
    let t = rows.iter().map(|r| r.2).max().unwrap() + 1;
    let expected = n * (p + 1) * t;
    if rows.len() != expected {
        return Err(SfcError::Data(format!(
            "{}: {} observations, expected {expected} for N={n}, p={p}, T={t}",
            path.display(),
            rows.len()
        )));
    }
    let mut mats = vec![DMatrix::from_element(t, n, f64::NAN); p + 1];
    for (s, i, tau, v) in rows {
        let cell = &mut mats[i][(tau, s)];
        if !cell.is_nan() {
            return Err(SfcError::Data(format!(
                "{}: duplicate cell (location {s}, covariate {i}, t {tau})",
                path.display()
            )));
        }
        *cell = v;
    }
    if mats.iter().any(|m| m.iter().any(|v| v.is_nan())) {
        return Err(SfcError::Data(format!("{}: missing cells", path.display())));
    }
    let y = mats.remove(0);
    RawDataset::new(y, mats)
}

const DATASET_MAGIC: &[u8; 8] = b"sfcbin1\n";
const TRACE_MAGIC: &[u8; 10] = b"sfctrace1\n";

#[derive(Serialize, Deserialize)]
struct DatasetHeader {
    n: usize,
    t: usize,
    p: usize,
    layout: String,
}

fn write_json_header<T: Serialize>(w: &mut impl std::io::Write, header: &T) -> Result<()> {
    let bytes = serde_json::to_vec(header)
        .map_err(|e| SfcError::Data(format!("serializing header: {e}")))?;
    w.write_all(&(bytes.len() as u32).to_le_bytes())?;
    w.write_all(&bytes)?;
    Ok(())
}

fn read_json_header<T: DeserializeOwned>(r: &mut impl std::io::Read, path: &Path) -> Result<T> {
    let mut len = [0u8; 4];
    r.read_exact(&mut len)?;
    let mut bytes = vec![0u8; u32::from_le_bytes(len) as usize];
    r.read_exact(&mut bytes)?;
    serde_json::from_slice(&bytes)
        .map_err(|e| SfcError::Data(format!("{}: header: {e}", path.display())))
}

fn check_magic(r: &mut impl std::io::Read, magic: &[u8], path: &Path) -> Result<()> {
    let mut got = vec![0u8; magic.len()];
    r.read_exact(&mut got)?;
    if got != magic {
        return Err(SfcError::Data(format!(
            "{}: bad magic, not a recognized binary file",
            path.display()
        )));
    }
    Ok(())
}

/// Binary dataset layout:
///
/// ```text
/// 8 bytes   magic "sfcbin1\n"
/// 4 bytes   header length, u32 little-endian
/// header    JSON {"n":N,"t":T,"p":p,"layout":"row-major"}
/// payload   (p+1) blocks of N*T f64 little-endian, response first,
///           each block row-major over locations: value[s][t]
/// ```
pub fn write_dataset_bin(path: &Path, data: &RawDataset) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    w.write_all(DATASET_MAGIC)?;
    write_json_header(
        &mut w,
        &DatasetHeader { n: data.n, t: data.t, p: data.p, layout: "row-major".into() },
    )?;
    for i in 0..=data.p {
        let m = if i == 0 { &data.y } else { &data.x[i - 1] };
        for s in 0..data.n {
            for tau in 0..data.t {
                w.write_all(&m[(tau, s)].to_le_bytes())?;
            }
        }
    }
    w.flush()?;
    Ok(())
}

pub fn read_dataset_bin(path: &Path) -> Result<RawDataset> {
    let mut r = BufReader::new(File::open(path)?);
    check_magic(&mut r, DATASET_MAGIC, path)?;
    let header: DatasetHeader = read_json_header(&mut r, path)?;
    if header.layout != "row-major" {
        return Err(SfcError::Data(format!(
            "{}: unsupported layout {:?}",
            path.display(),
            header.layout
        )));
    }
    let mut read_block = || -> Result<DMatrix<f64>> {
        let mut m = DMatrix::zeros(header.t, header.n);
        let mut buf = [0u8; 8];
        for s in 0..header.n {
            for tau in 0..header.t {
                r.read_exact(&mut buf)?;
                m[(tau, s)] = f64::from_le_bytes(buf);
            }
        }
        Ok(m)
    };
    let y = read_block()?;
    let x = (0..header.p).map(|_| read_block()).collect::<Result<Vec<_>>>()?;
    RawDataset::new(y, x)
}

#[derive(Serialize, Deserialize)]
struct TraceHeader {
    t: usize,
    p: usize,
    count: usize,
}

/// One coefficient draw from the trace: the iteration it was taken at and,
/// per cluster, the center location and the p x T coefficient block.
#[derive(Debug, Clone, PartialEq)]
pub struct BetaTraceRecord {
    pub iter: u64,
    pub clusters: Vec<(u32, Vec<f64>)>,
}

/// Coefficient trace layout:
///
/// ```text
/// 10 bytes  magic "sfctrace1\n"
/// 4 bytes   header length, u32 little-endian
/// header    JSON {"t":T,"p":p,"count":records}
/// records   iter u64 LE, d u32 LE, then d blocks of
///           center u32 LE + p*T f64 LE (row-major over covariates)
/// ```
pub fn write_beta_trace(
    path: &Path,
    t: usize,
    p: usize,
    samples: &[PosteriorSample],
) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    w.write_all(TRACE_MAGIC)?;
    write_json_header(&mut w, &TraceHeader { t, p, count: samples.len() })?;
    for sample in samples {
        w.write_all(&sample.iter.to_le_bytes())?;
        w.write_all(&(sample.clusters.len() as u32).to_le_bytes())?;
        for cluster in &sample.clusters {
            if cluster.beta.len() != p * t {
                return Err(SfcError::Data(format!(
                    "coefficient block has {} entries, expected {}",
                    cluster.beta.len(),
                    p * t
                )));
            }
            w.write_all(&(cluster.center as u32).to_le_bytes())?;
            for &b in &cluster.beta {
                w.write_all(&b.to_le_bytes())?;
            }
        }
    }
    w.flush()?;
    Ok(())
}

pub fn read_beta_trace(path: &Path) -> Result<(usize, usize, Vec<BetaTraceRecord>)> {
    let mut r = BufReader::new(File::open(path)?);
    check_magic(&mut r, TRACE_MAGIC, path)?;
    let header: TraceHeader = read_json_header(&mut r, path)?;
    let mut records = Vec::with_capacity(header.count);
    let mut u4 = [0u8; 4];
    let mut u8b = [0u8; 8];
    for _ in 0..header.count {
        r.read_exact(&mut u8b)?;
        let iter = u64::from_le_bytes(u8b);
        r.read_exact(&mut u4)?;
        let d = u32::from_le_bytes(u4) as usize;
        let mut clusters = Vec::with_capacity(d);
        for _ in 0..d {
            r.read_exact(&mut u4)?;
            let center = u32::from_le_bytes(u4);
            let mut beta = Vec::with_capacity(header.p * header.t);
            for _ in 0..header.p * header.t {
                r.read_exact(&mut u8b)?;
                beta.push(f64::from_le_bytes(u8b));
            }
            clusters.push((center, beta));
        }
        records.push(BetaTraceRecord { iter, clusters });
    }
    Ok((header.t, header.p, records))
}

/// Hex SHA-256 of a byte slice.
pub fn sha256_hex(bytes: &[u8]) -> String {
    let digest = Sha256::digest(bytes);
    digest.iter().map(|b| format!("{b:02x}")).collect()
}

/// Hex SHA-256 of a file's contents.
pub fn sha256_file(path: &Path) -> Result<String> {
    let mut f = File::open(path)?;
    let mut hasher = Sha256::new();
    let mut buf = [0u8; 65536];
    loop {
        let n = f.read(&mut buf)?;
        if n == 0 {
            break;
        }
        hasher.update(&buf[..n]);
    }
    Ok(Sha256::finalize(hasher).iter().map(|b| format!("{b:02x}")).collect())
}

/// Outcome of one chain as recorded in the manifest.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ChainStatus {
    pub index: usize,
    pub seed: u64,
    pub status: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

/// Run manifest: the configuration that produced the run, the seeds, a
/// content hash of the input data, and per-chain completion status.
/// `status` is "ok" when every chain finished, "partial" when some did,
/// and "failed" when none did.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunManifest {
    pub config: serde_json::Value,
    pub master_seed: u64,
    pub chain_seeds: Vec<u64>,
    pub input_sha256: String,
    pub chains: Vec<ChainStatus>,
    pub status: String,
}

pub fn write_manifest(path: &Path, manifest: &RunManifest) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    let text = serde_json::to_string_pretty(manifest)
        .map_err(|e| SfcError::Data(format!("serializing manifest: {e}")))?;
    writeln!(w, "{text}")?;
    w.flush()?;
    Ok(())
}

pub fn read_manifest(path: &Path) -> Result<RunManifest> {
    let text = std::fs::read_to_string(path)?;
    serde_json::from_str(&text)
        .map_err(|e| SfcError::Data(format!("{}: {e}", path.display())))
}

/// `location_id,label` rows.
pub fn write_labels_csv(path: &Path, labels: &[usize]) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    writeln!(w, "location_id,label")?;
    for (s, &l) in labels.iter().enumerate() {
        writeln!(w, "{s},{l}")?;
    }
    w.flush()?;
    Ok(())
}

/// `location_id,uncertainty` rows.
pub fn write_uncertainty_csv(path: &Path, uncertainty: &[f64]) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    writeln!(w, "location_id,uncertainty")?;
    for (s, &u) in uncertainty.iter().enumerate() {
        writeln!(w, "{s},{u}")?;
    }
    w.flush()?;
    Ok(())
}

/// Long-format cluster mean curves: `cluster,t,mean,lower,upper`.
pub fn write_curves_csv(path: &Path, bands: &[CurveBand]) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    writeln!(w, "cluster,t,mean,lower,upper")?;
    for band in bands {
        for tau in 0..band.mean.len() {
            writeln!(
                w,
                "{},{tau},{},{},{}",
                band.cluster, band.mean[tau], band.lower[tau], band.upper[tau]
            )?;
        }
    }
    w.flush()?;
    Ok(())
}

/// Long-format coefficient summaries:
/// `cluster,covariate,t,mean,lower,upper,significant`.
pub fn write_beta_csv(path: &Path, bands: &[BetaBand]) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    writeln!(w, "cluster,covariate,t,mean,lower,upper,significant")?;
    for band in bands {
        for tau in 0..band.mean.len() {
            writeln!(
                w,
                "{},{},{tau},{},{},{},{}",
                band.cluster,
                band.covariate + 1,
                band.mean[tau],
                band.lower[tau],
                band.upper[tau],
                band.significant[tau]
            )?;
        }
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sampler::SampleCluster;
    use tempfile::tempdir;

    fn toy_dataset() -> RawDataset {
        let y = DMatrix::from_row_slice(2, 3, &[1.0, 2.0, 3.0, 4.5, -0.25, 6.125]);
        let x = vec![DMatrix::from_row_slice(2, 3, &[0.5, 0.0, 1.0, 2.0, 3.0, -4.0])];
        RawDataset::new(y, x).unwrap()
    }

    #[test]
    fn csv_round_trips_and_orders_rows() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("data.csv");
        let data = toy_dataset();
        write_dataset_csv(&path, &data).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        let mut lines = text.lines();
        assert_eq!(lines.next().unwrap(), "location_id,covariate_id,t,value");
        assert_eq!(lines.next().unwrap(), "0,0,0,1");
        assert_eq!(lines.next().unwrap(), "0,0,1,4.5");
        assert_eq!(lines.next().unwrap(), "0,1,0,0.5");
        let back = read_dataset_csv(&path).unwrap();
        assert_eq!(back, data);
    }

    #[test]
    fn csv_reader_rejects_missing_and_duplicate_cells() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("bad.csv");
        std::fs::write(&path, "location_id,covariate_id,t,value\n0,0,0,1.0\n").unwrap();
        // A single cell implies N=1, p=0, T=1 and is complete; drop to the
        // genuinely incomplete case.
        assert!(read_dataset_csv(&path).is_ok());
        std::fs::write(&path, "location_id,covariate_id,t,value\n0,0,1,1.0\n").unwrap();
        assert!(matches!(read_dataset_csv(&path), Err(SfcError::Data(_))));
        std::fs::write(
            &path,
            "location_id,covariate_id,t,value\n0,0,0,1.0\n0,0,0,2.0\n",
        )
        .unwrap();
        assert!(matches!(read_dataset_csv(&path), Err(SfcError::Data(_))));
    }

    #[test]
    fn binary_dataset_round_trips_bit_exactly() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("data.bin");
        let data = toy_dataset();
        write_dataset_bin(&path, &data).unwrap();
        let bytes = std::fs::read(&path).unwrap();
        assert_eq!(&bytes[..8], b"sfcbin1\n");
        let back = read_dataset_bin(&path).unwrap();
        assert_eq!(back, data);
        write_dataset_bin(&path, &data).unwrap();
        assert_eq!(std::fs::read(&path).unwrap(), bytes);
    }

    #[test]
    fn corrupt_magic_is_a_data_error() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("data.bin");
        std::fs::write(&path, b"not a dataset at all").unwrap();
        assert!(matches!(read_dataset_bin(&path), Err(SfcError::Data(_))));
    }

    #[test]
    fn ndjson_round_trips_samples() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("samples.ndjson");
        let samples = vec![PosteriorSample {
            iter: 7,
            alpha: 0.5,
            labels: vec![0, 0, 1],
            log_marginal_total: -12.25,
            log_posterior: -15.5,
            clusters: vec![SampleCluster {
                center: 0,
                sigma2: 1.5,
                beta: vec![0.0, 1.0],
                mu: vec![0.25, -0.75],
            }],
        }];
        write_ndjson(&path, &samples).unwrap();
        let back: Vec<PosteriorSample> = read_ndjson(&path).unwrap();
        assert_eq!(back.len(), 1);
        assert_eq!(back[0].iter, 7);
        assert_eq!(back[0].labels, samples[0].labels);
        assert_eq!(back[0].clusters[0].mu, samples[0].clusters[0].mu);
    }

    #[test]
    fn beta_trace_round_trips() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("beta.bin");
        let samples = vec![
            PosteriorSample {
                iter: 10,
                alpha: 0.5,
                labels: vec![0, 1],
                log_marginal_total: 0.0,
                log_posterior: 0.0,
                clusters: vec![
                    SampleCluster {
                        center: 0,
                        sigma2: 1.0,
                        beta: vec![1.0, 2.0, 3.0, 4.0],
                        mu: vec![0.0, 0.0],
                    },
                    SampleCluster {
                        center: 1,
                        sigma2: 1.0,
                        beta: vec![-1.0, -2.0, -3.0, -4.0],
                        mu: vec![0.0, 0.0],
                    },
                ],
            },
        ];
        write_beta_trace(&path, 2, 2, &samples).unwrap();
        let (t, p, records) = read_beta_trace(&path).unwrap();
        assert_eq!((t, p), (2, 2));
        assert_eq!(records.len(), 1);
        assert_eq!(records[0].iter, 10);
        assert_eq!(records[0].clusters[0], (0, vec![1.0, 2.0, 3.0, 4.0]));
        assert_eq!(records[0].clusters[1].0, 1);
    }

    #[test]
    fn manifest_round_trips_with_partial_status() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("manifest.json");
        let manifest = RunManifest {
            config: serde_json::json!({"sampler": {"iterations": 100}}),
            master_seed: 42,
            chain_seeds: vec![1, 2],
            input_sha256: sha256_hex(b"data"),
            chains: vec![
                ChainStatus { index: 0, seed: 1, status: "ok".into(), error: None },
                ChainStatus {
                    index: 1,
                    seed: 2,
                    status: "failed".into(),
                    error: Some("numeric domain error: collapsed support".into()),
                },
            ],
            status: "partial".into(),
        };
        write_manifest(&path, &manifest).unwrap();
        let back = read_manifest(&path).unwrap();
        assert_eq!(back.status, "partial");
        assert_eq!(back.chains[1].error.as_deref().unwrap_or(""), manifest.chains[1].error.as_deref().unwrap());
        assert_eq!(back.input_sha256, manifest.input_sha256);
    }

    #[test]
    fn sha256_matches_known_vector() {
        assert_eq!(
            sha256_hex(b"abc"),
            "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad"
        );
        let dir = tempdir().unwrap();
        let path = dir.path().join("f");
        std::fs::write(&path, b"abc").unwrap();
        assert_eq!(sha256_file(&path).unwrap(), sha256_hex(b"abc"));
    }

    #[test]
    fn summary_csvs_have_documented_headers() {
        let dir = tempdir().unwrap();
        let labels = dir.path().join("labels.csv");
        write_labels_csv(&labels, &[0, 0, 1]).unwrap();
        let text = std::fs::read_to_string(&labels).unwrap();
        assert_eq!(text, "location_id,label\n0,0\n1,0\n2,1\n");

        let unc = dir.path().join("uncertainty.csv");
        write_uncertainty_csv(&unc, &[0.0, 0.25]).unwrap();
        let text = std::fs::read_to_string(&unc).unwrap();
        assert_eq!(text, "location_id,uncertainty\n0,0\n1,0.25\n");

        let curves = dir.path().join("curves.csv");
        write_curves_csv(
            &curves,
            &[CurveBand {
                cluster: 0,
                mean: vec![1.0, 2.0],
                lower: vec![0.5, 1.5],
                upper: vec![1.5, 2.5],
            }],
        )
        .unwrap();
        let text = std::fs::read_to_string(&curves).unwrap();
        assert_eq!(text, "cluster,t,mean,lower,upper\n0,0,1,0.5,1.5\n0,1,2,1.5,2.5\n");

        let beta = dir.path().join("beta.csv");
        write_beta_csv(
            &beta,
            &[BetaBand {
                cluster: 0,
                covariate: 0,
                mean: vec![0.2],
                lower: vec![0.1],
                upper: vec![0.3],
                significant: vec![true],
            }],
        )
        .unwrap();
        let text = std::fs::read_to_string(&beta).unwrap();
        assert_eq!(text, "cluster,covariate,t,mean,lower,upper,significant\n0,1,0,0.2,0.1,0.3,true\n");
    }

    #[test]
    fn time_subsampling_keeps_a_regular_grid() {
        let y = DMatrix::from_fn(8, 2, |tau, s| (tau * 10 + s) as f64);
        let data = RawDataset::new(y, vec![]).unwrap();
        let half = data.subsample_time(4).unwrap();
        assert_eq!(half.t, 4);
        assert_eq!(half.y[(0, 0)], 0.0);
        assert_eq!(half.y[(1, 0)], 20.0);
        assert_eq!(half.y[(3, 1)], 61.0);
        assert!(data.subsample_time(0).is_err());
    }
}
