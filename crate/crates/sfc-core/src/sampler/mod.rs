//! Markov chain driver: per-iteration partition moves, within-cluster
//! parameter sweeps, and a concentration update, all drawing from
//! counter-keyed random streams so the same seed reproduces the same chain
//! byte for byte under any worker layout.

pub mod gibbs;
pub mod griddy;
pub mod moves;
pub mod rng;

use serde::{Deserialize, Serialize};

use crate::error::{Result, SfcError};
use crate::likelihood::ClusterModel;
use crate::model::{LowerParams, ModelContext};
use crate::parallel::WorkerPool;
use crate::partition::{log_prior_d, Gvt, Partition};
use crate::stats;
use moves::{
    draw_merge_randomness, draw_relocate_randomness, draw_split_randomness, eval_merge,
    eval_relocate, eval_split, AcceptanceTerms, ClusterCarry, MoveKind, MoveOutcome, MoveRecord,
    ProposedState,
};
use rand::Rng;
use rng::{Purpose, SERIAL_LANE};

/// One cluster's full parameter state.
pub struct ClusterState {
    pub model: ClusterModel,
    pub lower: LowerParams,
}

impl ClusterState {
    /// Rebuilds an equivalent state with fresh caches.
    pub fn deep_clone(&self) -> Result<Self> {
        let model = ClusterModel::new(
            self.model.ctx().clone(),
            self.model.members().to_vec(),
            self.model.theta1().clone(),
            self.model.gamma().to_vec(),
        )?;
        Ok(Self { model, lower: self.lower.clone() })
    }
}

/// Run-level sampler settings; model-level settings live in
/// [`crate::model::Hyperparameters`].
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct SamplerConfig {
    pub iterations: usize,
    pub burn_in: usize,
    /// Keep every `thin`-th post-burn-in iteration as a posterior sample.
    pub thin: usize,
    /// Probabilities of proposing a split, merge, or relocation; fixed
    /// regardless of which kinds are currently available.
    pub move_probs: [f64; 3],
    pub pilot_chains: usize,
    pub pilot_iterations: usize,
    /// Freeze the partition: no moves, no concentration update.
    pub fixed_partition: bool,
    /// Drop all cluster parameters and score every state equally; the
    /// chain then targets the partition prior alone.
    pub constant_likelihood: bool,
    /// Score relocations by the center-degree ratio alone.
    pub paper_cancellation: bool,
    /// Collapse every ambiguous location onto its lowest admissible label,
    /// reducing the tessellation to plain nearest-center cells.
    pub vt_baseline: bool,
    /// Threads for the within-iteration sweep over clusters. An execution
    /// resource, not part of the statistical configuration, so it is
    /// excluded from serialized echoes.
    #[serde(skip)]
    pub cluster_workers: usize,
    /// Starting centers; a single uniform center when absent.
    pub init_centers: Option<Vec<usize>>,
    pub alpha_init: f64,
}

impl Default for SamplerConfig {
    fn default() -> Self {
        Self {
            iterations: 10_000,
            burn_in: 2_000,
            thin: 10,
            move_probs: [0.25, 0.25, 0.5],
            pilot_chains: 50,
            pilot_iterations: 200,
            fixed_partition: false,
            constant_likelihood: false,
            paper_cancellation: false,
            vt_baseline: false,
            cluster_workers: 1,
            init_centers: None,
            alpha_init: 0.5,
        }
    }
}

impl SamplerConfig {
    pub fn validate(&self) -> Result<()> {
        if self.iterations == 0 {
            return Err(SfcError::Config("iterations must be positive".into()));
        }
        if self.burn_in > self.iterations {
            return Err(SfcError::Config(format!(
                "burn-in {} exceeds iteration count {}",
                self.burn_in, self.iterations
            )));
        }
        if self.thin == 0 {
            return Err(SfcError::Config("thinning interval must be positive".into()));
        }
        if self.move_probs.iter().any(|&p| !(0.0..=1.0).contains(&p) || p.is_nan()) {
            return Err(SfcError::Config("move probabilities must lie in [0, 1]".into()));
        }
        if self.move_probs.iter().sum::<f64>() <= 0.0 {
            return Err(SfcError::Config("move probabilities must not all vanish".into()));
        }
        if !(self.alpha_init > 0.0 && self.alpha_init < 1.0) {
            return Err(SfcError::Config(format!(
                "initial concentration {} outside (0, 1)",
                self.alpha_init
            )));
        }
        Ok(())
    }
}

/// Full state of one chain.
pub struct ChainState {
    pub partition: Partition,
    /// One entry per cluster, in label order; empty in
    /// constant-likelihood mode.
    pub clusters: Vec<ClusterState>,
    pub alpha: f64,
}

impl ChainState {
    pub fn new(partition: Partition, clusters: Vec<ClusterState>, alpha: f64) -> Result<Self> {
        if !(alpha > 0.0 && alpha < 1.0) {
            return Err(SfcError::Input(format!("concentration {alpha} outside (0, 1)")));
        }
        if !clusters.is_empty() {
            if clusters.len() != partition.d() {
                return Err(SfcError::Input(format!(
                    "{} cluster states for {} clusters",
                    clusters.len(),
                    partition.d()
                )));
            }
            for (r, cluster) in clusters.iter().enumerate() {
                if cluster.model.members() != partition.members(r).as_slice() {
                    return Err(SfcError::Input(format!(
                        "cluster {r} state does not match its membership"
                    )));
                }
            }
        }
        Ok(Self { partition, clusters, alpha })
    }

    pub fn d(&self) -> usize {
        self.partition.d()
    }

    /// Sum of the per-cluster collapsed evidence terms (zero when no
    /// cluster parameters are carried).
    pub fn log_marginal_total(&mut self) -> Result<f64> {
        let mut total = 0.0;
        for cluster in &mut self.clusters {
            total += cluster.model.log_ml()?;
        }
        Ok(total)
    }

    pub fn deep_clone(&self) -> Result<Self> {
        let clusters = self
            .clusters
            .iter()
            .map(|c| c.deep_clone())
            .collect::<Result<Vec<_>>>()?;
        Ok(Self { partition: self.partition.clone(), clusters, alpha: self.alpha })
    }
}

/// Joint log posterior of a state up to the normalizing constant:
/// partition prior plus, per cluster, collapsed evidence and scale and
/// inclusion priors.
pub fn state_log_posterior(ctx: &ModelContext, state: &mut ChainState) -> Result<f64> {
    let hyper = &ctx.hyper;
    let mut lp = state.partition.log_prior(hyper.center_prior, state.alpha, hyper.n_max);
    for cluster in &mut state.clusters {
        lp += cluster.model.log_ml()?
            + cluster.model.log_prior_theta1()
            + cluster.model.log_prior_gamma();
    }
    Ok(lp)
}

/// Partition snapshot as it appears in logs and summaries: cluster
/// count, center locations, neighborhood order, and the full label
/// vector.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PartitionRecord {
    pub d: usize,
    pub centers: Vec<usize>,
    #[serde(rename = "K")]
    pub k: usize,
    pub labels: Vec<usize>,
}

impl PartitionRecord {
    pub fn from_partition(partition: &Partition) -> Self {
        Self {
            d: partition.d(),
            centers: partition.gvt().centers().to_vec(),
            k: partition.gvt().k_order(),
            labels: partition.labels().to_vec(),
        }
    }
}

/// One line of the per-iteration progress log.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LogRecord {
    pub iter: u64,
    #[serde(rename = "move")]
    pub move_kind: String,
    pub accepted: bool,
    pub d: usize,
    pub log_marginal_total: f64,
    pub alpha: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub partition: Option<PartitionRecord>,
}

/// Per-cluster content of a posterior sample; matrices are flattened
/// row-major.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SampleCluster {
    pub center: usize,
    pub sigma2: f64,
    /// p x T coefficients, row-major, transform domain.
    pub beta: Vec<f64>,
    /// Cluster mean curve in the transform domain, length T.
    pub mu: Vec<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PosteriorSample {
    pub iter: u64,
    pub alpha: f64,
    pub labels: Vec<usize>,
    pub log_marginal_total: f64,
    pub log_posterior: f64,
    pub clusters: Vec<SampleCluster>,
}

pub struct ChainResult {
    pub samples: Vec<PosteriorSample>,
    pub log_lines: Vec<LogRecord>,
    pub moves: Vec<MoveRecord>,
    pub final_state: ChainState,
}

/// Initial chain state: given or uniformly drawn centers, sampled labels
/// retried until admissible, cluster parameters from their priors.
pub fn initial_state(ctx: &ModelContext, cfg: &SamplerConfig, seed: u64) -> Result<ChainState> {
    let hyper = &ctx.hyper;
    let mut init_rng = rng::stream(seed, 0, SERIAL_LANE, Purpose::Init);
    let centers = match &cfg.init_centers {
        Some(c) => c.clone(),
        None => vec![init_rng.random_range(0..ctx.n())],
    };
    let gvt = Gvt::new(ctx.lattice.clone(), centers, hyper.k_order, cfg.vt_baseline)?;
    let mut partition = None;
    for _ in 0..200 {
        let candidate = gvt.clone().sample_labels(&mut init_rng);
        if candidate.validate(hyper.n_min, hyper.enforce_connectivity).is_ok() {
            partition = Some(candidate);
            break;
        }
    }
    let partition = match partition {
        Some(p) => p,
        None => {
            let fallback = gvt.deterministic_partition();
            fallback.validate(hyper.n_min, hyper.enforce_connectivity)?;
            fallback
        }
    };
    let clusters = if cfg.constant_likelihood {
        Vec::new()
    } else {
        (0..partition.d())
            .map(|r| {
                let mut model =
                    ClusterModel::from_prior(ctx.clone(), partition.members(r), &mut init_rng)?;
                let lower = model.draw_theta2(&mut init_rng)?;
                Ok(ClusterState { model, lower })
            })
            .collect::<Result<Vec<_>>>()?
    };
    let alpha = hyper.alpha_fixed.unwrap_or(cfg.alpha_init);
    ChainState::new(partition, clusters, alpha)
}

fn draw_kind<R: Rng + ?Sized>(probs: &[f64; 3], rng: &mut R) -> MoveKind {
    let total: f64 = probs.iter().sum();
    let u = rng.random::<f64>() * total;
    if u < probs[0] {
        MoveKind::Split
    } else if u < probs[0] + probs[1] {
        MoveKind::Merge
    } else {
        MoveKind::RelocateBoundary
    }
}

fn rejected_outright() -> MoveOutcome {
    MoveOutcome {
        terms: AcceptanceTerms {
            log_lik_ratio: 0.0,
            log_prior_ratio: 0.0,
            log_proposal_ratio: f64::NEG_INFINITY,
            log_jacobian: 0.0,
        },
        proposal: None,
    }
}

/// Installs an accepted proposal, redrawing effects for every cluster
/// whose membership changed.
fn install_proposal<R: Rng + ?Sized>(
    state: &mut ChainState,
    proposal: ProposedState,
    rng: &mut R,
) -> Result<()> {
    let mut old: Vec<Option<ClusterState>> = state.clusters.drain(..).map(Some).collect();
    let mut clusters = Vec::with_capacity(proposal.carry.len());
    for carry in proposal.carry {
        match carry {
            ClusterCarry::Kept(r) => {
                clusters.push(old[r].take().expect("kept cluster moved once"))
            }
            ClusterCarry::Rebuilt(mut model) => {
                let lower = model.draw_theta2(rng)?;
                clusters.push(ClusterState { model, lower });
            }
        }
    }
    state.partition = proposal.partition;
    state.clusters = clusters;
    Ok(())
}

/// One iteration's partition move; returns its record.
fn move_phase(
    ctx: &ModelContext,
    state: &mut ChainState,
    cfg: &SamplerConfig,
    seed: u64,
    iter: u64,
) -> Result<MoveRecord> {
    let mut move_rng = rng::stream(seed, iter, SERIAL_LANE, Purpose::Move);
    let kind = draw_kind(&cfg.move_probs, &mut move_rng);
    let outcome = match kind {
        MoveKind::Split => match draw_split_randomness(ctx, &state.partition, &mut move_rng) {
            Some(rand) => eval_split(
                ctx,
                &state.partition,
                &mut state.clusters,
                state.alpha,
                cfg,
                &rand,
                &mut move_rng,
            )?,
            None => rejected_outright(),
        },
        MoveKind::Merge => match draw_merge_randomness(&state.partition, &mut move_rng) {
            Some(rand) => eval_merge(
                ctx,
                &state.partition,
                &mut state.clusters,
                state.alpha,
                cfg,
                &rand,
                &mut move_rng,
            )?,
            None => rejected_outright(),
        },
        MoveKind::RelocateBoundary => {
            match draw_relocate_randomness(&state.partition, &mut move_rng) {
                Some(rand) => eval_relocate(
                    ctx,
                    &state.partition,
                    &mut state.clusters,
                    state.alpha,
                    cfg,
                    &rand,
                    &mut move_rng,
                )?,
                None => rejected_outright(),
            }
        }
    };
    let mut accepted = false;
    let mut log_u = None;
    if let Some(proposal) = outcome.proposal {
        let total = outcome.terms.total();
        let lu = move_rng.random::<f64>().ln();
        log_u = Some(lu);
        if lu < total {
            install_proposal(state, proposal, &mut move_rng)?;
            accepted = true;
        }
    }
    Ok(MoveRecord { kind, terms: outcome.terms, accepted, log_u })
}

/// Metropolis step on the log-odds of the concentration.
fn alpha_phase(ctx: &ModelContext, state: &mut ChainState, seed: u64, iter: u64) {
    let mut alpha_rng = rng::stream(seed, iter, SERIAL_LANE, Purpose::Alpha);
    let d = state.partition.d();
    let n_max = ctx.hyper.n_max;
    let current = state.alpha;
    let proposed =
        stats::sigmoid(stats::logit(current) + 0.5 * stats::draw_standard_normal(&mut alpha_rng));
    let log_ratio = log_prior_d(d, proposed, n_max) - log_prior_d(d, current, n_max)
        + proposed.ln()
        + (1.0 - proposed).ln()
        - current.ln()
        - (1.0 - current).ln();
    if alpha_rng.random::<f64>().ln() < log_ratio {
        state.alpha = proposed;
    }
}

fn kind_name(kind: MoveKind) -> &'static str {
    match kind {
        MoveKind::Split => "split",
        MoveKind::Merge => "merge",
        MoveKind::RelocateBoundary => "relocate_boundary",
    }
}

fn make_sample(
    ctx: &ModelContext,
    state: &mut ChainState,
    iter: u64,
    log_marginal_total: f64,
) -> Result<PosteriorSample> {
    let log_posterior = state_log_posterior(ctx, state)?;
    let (p, t) = (ctx.p(), ctx.t());
    let centers = state.partition.gvt().centers().to_vec();
    let mut clusters = Vec::with_capacity(state.clusters.len());
    for (r, cluster) in state.clusters.iter_mut().enumerate() {
        let mean = cluster.model.regression_mean(&cluster.lower.beta) + &cluster.lower.u;
        let n_r = mean.nrows() as f64;
        let mu: Vec<f64> = (0..t).map(|tau| mean.column(tau).sum() / n_r).collect();
        let beta: Vec<f64> = (0..p)
            .flat_map(|i| (0..t).map(move |tau| (i, tau)))
            .map(|(i, tau)| cluster.lower.beta[(i, tau)])
            .collect();
        clusters.push(SampleCluster {
            center: centers[r],
            sigma2: cluster.lower.sigma2,
            beta,
            mu,
        });
    }
    Ok(PosteriorSample {
        iter,
        alpha: state.alpha,
        labels: state.partition.labels().to_vec(),
        log_marginal_total,
        log_posterior,
        clusters,
    })
}

/// Runs one chain to completion. Numeric failures abort the chain and
/// surface as errors; the caller decides whether other chains continue.
pub fn run_chain(
    ctx: &ModelContext,
    cfg: &SamplerConfig,
    seed: u64,
    init: Option<ChainState>,
    pool: &WorkerPool,
) -> Result<ChainResult> {
    cfg.validate()?;
    let mut state = match init {
        Some(s) => s,
        None => initial_state(ctx, cfg, seed)?,
    };
    let alpha_updates = ctx.hyper.alpha_fixed.is_none() && !cfg.fixed_partition;
    let mut samples = Vec::new();
    let mut log_lines = Vec::with_capacity(cfg.iterations);
    let mut move_records = Vec::new();

    for iter in 0..cfg.iterations as u64 {
        let mut kind = "none";
        let mut accepted = false;
        if !cfg.fixed_partition {
            let record = move_phase(ctx, &mut state, cfg, seed, iter)?;
            kind = kind_name(record.kind);
            accepted = record.accepted;
            move_records.push(record);
        }

        if !cfg.constant_likelihood {
            pool.for_each_mut(&mut state.clusters, |r, cluster| {
                let mut sweep_rng = rng::stream(seed, iter, r as u64, Purpose::Gibbs);
                gibbs::sweep_cluster(&mut cluster.model, &mut cluster.lower, &mut sweep_rng)?;
                cluster.model.log_ml()?;
                Ok(())
            })?;
        }

        if alpha_updates {
            alpha_phase(ctx, &mut state, seed, iter);
        }

        let log_marginal_total = state.log_marginal_total()?;
        let thinned = iter as usize >= cfg.burn_in
            && (iter as usize - cfg.burn_in) % cfg.thin == 0;
        log_lines.push(LogRecord {
            iter,
            move_kind: kind.to_string(),
            accepted,
            d: state.d(),
            log_marginal_total,
            alpha: state.alpha,
            partition: thinned.then(|| PartitionRecord::from_partition(&state.partition)),
        });
        if thinned {
            samples.push(make_sample(ctx, &mut state, iter, log_marginal_total)?);
        }
    }

    Ok(ChainResult { samples, log_lines, moves: move_records, final_state: state })
}

const PILOT_SALT: u64 = 0x70696c_6f74_u64;

/// Short exploratory chains whose best final states seed the main chains,
/// ranked by joint log posterior.
pub fn pilot_anchors(
    ctx: &ModelContext,
    cfg: &SamplerConfig,
    master_seed: u64,
    count: usize,
    pool: &WorkerPool,
) -> Result<Vec<ChainState>> {
    if cfg.pilot_chains == 0 || count == 0 {
        return Ok(Vec::new());
    }
    let mut pilot_cfg = cfg.clone();
    pilot_cfg.iterations = cfg.pilot_iterations.max(1);
    pilot_cfg.burn_in = pilot_cfg.iterations;
    pilot_cfg.pilot_chains = 0;
    pilot_cfg.init_centers = None;
    let outcomes: Vec<Option<(f64, ChainState)>> = pool.map_indexed(cfg.pilot_chains, |k| {
        let seed = rng::chain_seed(master_seed ^ PILOT_SALT, k as u64);
        let inner = WorkerPool::new(1).ok()?;
        let result = run_chain(ctx, &pilot_cfg, seed, None, &inner).ok()?;
        let mut final_state = result.final_state;
        let lp = state_log_posterior(ctx, &mut final_state).ok()?;
        lp.is_finite().then_some((lp, final_state))
    });
    let mut ranked: Vec<(f64, ChainState)> = outcomes.into_iter().flatten().collect();
    ranked.sort_by(|a, b| b.0.partial_cmp(&a.0).unwrap_or(std::cmp::Ordering::Equal));
    ranked.truncate(count);
    Ok(ranked.into_iter().map(|(_, s)| s).collect())
}

pub struct ChainRun {
    pub seed: u64,
    pub outcome: Result<ChainResult>,
}

/// Runs `n_chains` chains with per-chain seeds derived from the master
/// seed, optionally anchored at pilot states. Chains are scheduled on
/// `chain_pool`; each runs its cluster sweeps on its own workers.
pub fn run_chains(
    ctx: &ModelContext,
    cfg: &SamplerConfig,
    master_seed: u64,
    n_chains: usize,
    chain_pool: &WorkerPool,
) -> Result<Vec<ChainRun>> {
    cfg.validate()?;
    let anchors = pilot_anchors(ctx, cfg, master_seed, n_chains, chain_pool)?;
    Ok(chain_pool.map_indexed(n_chains, |c| {
        let seed = rng::chain_seed(master_seed, c as u64);
        let outcome = (|| {
            let init = match anchors.get(c) {
                Some(a) => Some(a.deep_clone()?),
                None => None,
            };
            let inner = WorkerPool::new(cfg.cluster_workers)?;
            run_chain(ctx, cfg, seed, init, &inner)
        })();
        ChainRun { seed, outcome }
    }))
}

#[cfg(test)]
mod driver_tests {
    use super::*;
    use crate::model::{default_hyperparameters, FunctionalDataset};
    use crate::lattice::SpatialLattice;
    use crate::stats;
    use crate::wavelet::{WaveletBasis, WaveletFamily};
    use nalgebra::DMatrix;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use std::sync::Arc;

    fn grid_context(rows: usize, cols: usize, t: usize, p_extra: usize, seed: u64) -> ModelContext {
        let lattice = Arc::new(SpatialLattice::new(rows, cols).unwrap());
        let basis = Arc::new(WaveletBasis::new(WaveletFamily::Haar, t).unwrap());
        let n = rows * cols;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let y_raw = DMatrix::from_fn(t, n, |_, _| stats::draw_standard_normal(&mut rng));
        let mut x_raw = vec![DMatrix::from_element(t, n, 1.0)];
        for _ in 0..p_extra {
            x_raw.push(DMatrix::from_fn(t, n, |_, _| stats::draw_standard_normal(&mut rng)));
        }
        let data = Arc::new(FunctionalDataset::new(&basis, y_raw, x_raw).unwrap());
        ModelContext::new(lattice, basis, data, default_hyperparameters()).unwrap()
    }

    fn short_config() -> SamplerConfig {
        SamplerConfig {
            iterations: 30,
            burn_in: 10,
            thin: 5,
            pilot_chains: 0,
            cluster_workers: 1,
            ..SamplerConfig::default()
        }
    }

    #[test]
    fn chains_replay_byte_for_byte() {
        let ctx = grid_context(4, 4, 4, 1, 1);
        let cfg = short_config();
        let pool = WorkerPool::new(1).unwrap();
        let a = run_chain(&ctx, &cfg, 42, None, &pool).unwrap();
        let b = run_chain(&ctx, &cfg, 42, None, &pool).unwrap();
        let ser = |r: &ChainResult| {
            r.log_lines
                .iter()
                .map(|l| serde_json::to_string(l).unwrap())
                .collect::<Vec<_>>()
                .join("\n")
        };
        assert_eq!(ser(&a), ser(&b));
        let moves_a = serde_json::to_string(&a.moves).unwrap();
        let moves_b = serde_json::to_string(&b.moves).unwrap();
        assert_eq!(moves_a, moves_b);
    }

    #[test]
    fn worker_count_leaves_the_log_unchanged() {
        let ctx = grid_context(4, 6, 4, 1, 2);
        let mut cfg = short_config();
        cfg.init_centers = Some(vec![3, 20]);
        let seq = WorkerPool::new(1).unwrap();
        let par = WorkerPool::new(4).unwrap();
        let a = run_chain(&ctx, &cfg, 7, None, &seq).unwrap();
        let b = run_chain(&ctx, &cfg, 7, None, &par).unwrap();
        let ser = |r: &ChainResult| serde_json::to_string(&r.log_lines).unwrap();
        assert_eq!(ser(&a), ser(&b));
    }

    #[test]
    fn state_stays_consistent_across_iterations() {
        let ctx = grid_context(4, 5, 4, 1, 3);
        let mut cfg = short_config();
        cfg.iterations = 60;
        cfg.burn_in = 0;
        let pool = WorkerPool::new(1).unwrap();
        let result = run_chain(&ctx, &cfg, 11, None, &pool).unwrap();
        let state = result.final_state;
        assert_eq!(state.clusters.len(), state.partition.d());
        for (r, cluster) in state.clusters.iter().enumerate() {
            assert_eq!(cluster.model.members(), state.partition.members(r).as_slice());
        }
        assert!(state.alpha > 0.0 && state.alpha < 1.0);
        assert!(result.samples.iter().all(|s| s.log_posterior.is_finite()));
        assert!(!result.moves.is_empty());
        let accepted = result.moves.iter().filter(|m| m.accepted).count();
        assert!(accepted <= result.moves.len());
    }

    #[test]
    fn constant_likelihood_explores_without_clusters() {
        let ctx = grid_context(3, 3, 2, 0, 4);
        let mut cfg = short_config();
        cfg.constant_likelihood = true;
        cfg.iterations = 200;
        cfg.burn_in = 0;
        cfg.thin = 1;
        let mut hyper = default_hyperparameters();
        hyper.alpha_fixed = Some(0.5);
        hyper.n_min = 1;
        hyper.enforce_connectivity = false;
        let ctx = ModelContext::new(
            ctx.lattice.clone(),
            ctx.basis.clone(),
            ctx.data.clone(),
            hyper,
        )
        .unwrap();
        let pool = WorkerPool::new(1).unwrap();
        let result = run_chain(&ctx, &cfg, 19, None, &pool).unwrap();
        assert!(result.final_state.clusters.is_empty());
        assert!(result.log_lines.iter().all(|l| l.log_marginal_total == 0.0));
        let d_values: std::collections::HashSet<usize> =
            result.log_lines.iter().map(|l| l.d).collect();
        assert!(d_values.len() > 1, "cluster count never moved: {d_values:?}");
        let accepted = result.moves.iter().filter(|m| m.accepted).count();
        assert!(accepted > 0, "no accepted partition moves in 200 iterations");
    }

    #[test]
    fn fixed_partition_disables_moves_and_alpha_updates() {
        let ctx = grid_context(4, 4, 4, 0, 5);
        let mut cfg = short_config();
        cfg.fixed_partition = true;
        cfg.init_centers = Some(vec![1, 14]);
        let pool = WorkerPool::new(1).unwrap();
        let result = run_chain(&ctx, &cfg, 23, None, &pool).unwrap();
        assert!(result.moves.is_empty());
        assert!(result.log_lines.iter().all(|l| l.move_kind == "none" && !l.accepted));
        assert!(result.log_lines.iter().all(|l| l.alpha == cfg.alpha_init));
        assert_eq!(result.final_state.partition.gvt().centers(), &[1, 14]);
    }

    #[test]
    fn pilot_anchors_rank_by_posterior() {
        let ctx = grid_context(3, 4, 2, 0, 6);
        let mut cfg = short_config();
        cfg.pilot_chains = 4;
        cfg.pilot_iterations = 5;
        let pool = WorkerPool::new(1).unwrap();
        let anchors = pilot_anchors(&ctx, &cfg, 99, 3, &pool).unwrap();
        assert!(!anchors.is_empty() && anchors.len() <= 3);
        let mut scores = Vec::new();
        for mut anchor in anchors {
            scores.push(state_log_posterior(&ctx, &mut anchor).unwrap());
        }
        assert!(scores.windows(2).all(|w| w[0] >= w[1]), "{scores:?}");
    }

    #[test]
    fn run_chains_produces_indexed_outcomes() {
        let ctx = grid_context(3, 4, 2, 0, 7);
        let mut cfg = short_config();
        cfg.iterations = 10;
        cfg.burn_in = 5;
        cfg.pilot_chains = 2;
        cfg.pilot_iterations = 4;
        let pool = WorkerPool::new(2).unwrap();
        let runs = run_chains(&ctx, &cfg, 1234, 3, &pool).unwrap();
        assert_eq!(runs.len(), 3);
        for (c, run) in runs.iter().enumerate() {
            assert_eq!(run.seed, rng::chain_seed(1234, c as u64));
            assert!(run.outcome.is_ok());
        }
    }
}
