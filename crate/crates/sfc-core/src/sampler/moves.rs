//! Partition moves over the center set and boundary labels: center birth
//! (split), center death (merge), and center relocation with a boundary
//! refresh.
//!
//! Split and merge are evaluated by functions over injected randomness so
//! a (split, merge) pair at matched inputs can be checked for exact ratio
//! reciprocity. Scale parameters for a newborn cluster are proposed as a
//! donor-weighted sum on transformed axes; the merge direction recovers
//! the instrumental Gaussian deterministically by inverting that map.
//!
//! All three moves handle boundary labels the same way: a label carries
//! over wherever the location keeps the same admissible centers, and is
//! otherwise drawn from a per-location fit score against each admissible
//! cluster (a synthetic stand-in represents a nascent cluster before its
//! parameters exist). Both the forward and reverse label masses enter the
//! acceptance ratio, so the scores only shape the proposal.

use std::collections::HashMap;

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{ClusterState, SamplerConfig};
use crate::error::{Result, SfcError};
use crate::likelihood::ClusterModel;
use crate::model::{HigherParams, ModelContext};
use crate::partition::{Gvt, Partition};
use crate::stats;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MoveKind {
    Split,
    Merge,
    RelocateBoundary,
}

/// Additive decomposition of the log acceptance ratio.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct AcceptanceTerms {
    pub log_lik_ratio: f64,
    pub log_prior_ratio: f64,
    pub log_proposal_ratio: f64,
    pub log_jacobian: f64,
}

impl AcceptanceTerms {
    pub fn zero() -> Self {
        Self {
            log_lik_ratio: 0.0,
            log_prior_ratio: 0.0,
            log_proposal_ratio: 0.0,
            log_jacobian: 0.0,
        }
    }

    pub fn total(&self) -> f64 {
        self.log_lik_ratio + self.log_prior_ratio + self.log_proposal_ratio + self.log_jacobian
    }
}

/// One attempted move and its decision trail.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MoveRecord {
    pub kind: MoveKind,
    pub terms: AcceptanceTerms,
    pub accepted: bool,
    /// Log of the decision uniform; absent when the proposal had zero
    /// prior or proposal mass and was rejected outright.
    pub log_u: Option<f64>,
}

/// How each cluster of an accepted proposal is obtained.
pub enum ClusterCarry {
    /// Membership unchanged; reuse the state at this old index.
    Kept(usize),
    /// Membership changed or cluster newborn; effects need a redraw.
    Rebuilt(ClusterModel),
}

pub struct ProposedState {
    pub partition: Partition,
    /// One entry per proposed cluster; empty when the run carries no
    /// cluster parameters (constant-likelihood mode).
    pub carry: Vec<ClusterCarry>,
}

pub struct MoveOutcome {
    pub terms: AcceptanceTerms,
    /// None marks an outright rejection (zero prior or proposal mass).
    pub proposal: Option<ProposedState>,
}

impl MoveOutcome {
    fn rejected(reason_on_prior_side: bool) -> Self {
        let mut terms = AcceptanceTerms::zero();
        if reason_on_prior_side {
            terms.log_prior_ratio = f64::NEG_INFINITY;
        } else {
            terms.log_proposal_ratio = f64::NEG_INFINITY;
        }
        Self { terms, proposal: None }
    }
}

/// Injected randomness of a split; fields are listed in draw order.
#[derive(Debug, Clone)]
pub struct SplitRandomness {
    pub new_center: usize,
    /// Pinned labels for the grown tessellation, in its boundary order;
    /// None lets the evaluation draw the non-carried ones.
    pub boundary_labels: Option<Vec<usize>>,
    /// Instrumental Gaussian, one entry per scale-parameter component.
    pub v: Vec<f64>,
    /// Unit uniforms deciding the newborn cluster's inclusions, slot-major
    /// per covariate.
    pub gamma_unit: Vec<f64>,
}

/// Injected randomness of a merge.
#[derive(Debug, Clone)]
pub struct MergeRandomness {
    pub victim: usize,
    /// Pinned labels for the reduced tessellation, in its boundary order;
    /// None lets the evaluation draw the non-carried ones.
    pub boundary_labels: Option<Vec<usize>>,
}

/// Injected center choice of a relocation; labels are drawn during
/// evaluation because their proposal law depends on the destination.
#[derive(Debug, Clone)]
pub struct RelocateRandomness {
    pub cluster: usize,
    pub destination: usize,
}

// ---------------------------------------------------------------------
// Transformed axes for scale-parameter proposals.

#[derive(Debug, Clone, Copy)]
enum MapKind {
    Log,
    Logistic(f64, f64),
}

fn map_forward(kind: MapKind, x: f64) -> Result<f64> {
    match kind {
        MapKind::Log => {
            if x > 0.0 {
                Ok(x.ln())
            } else {
                Err(SfcError::Proposal(format!("log map needs a positive value, got {x}")))
            }
        }
        MapKind::Logistic(a, b) => {
            if x > a && x < b {
                Ok(((x - a) / (b - x)).ln())
            } else {
                Err(SfcError::Proposal(format!("value {x} outside the open interval ({a}, {b})")))
            }
        }
    }
}

fn map_inverse(kind: MapKind, z: f64) -> f64 {
    match kind {
        MapKind::Log => z.exp(),
        MapKind::Logistic(a, b) => {
            if z >= 0.0 {
                let e = (-z).exp();
                (a * e + b) / (e + 1.0)
            } else {
                let e = z.exp();
                (a + b * e) / (1.0 + e)
            }
        }
    }
}

fn softplus(z: f64) -> f64 {
    z.max(0.0) + (-z.abs()).exp().ln_1p()
}

/// Log derivative of the inverse map at transformed coordinate `z`.
fn map_log_jacobian(kind: MapKind, z: f64) -> f64 {
    match kind {
        MapKind::Log => z,
        MapKind::Logistic(a, b) => (b - a).ln() + z - 2.0 * softplus(z),
    }
}

/// Component count of the scale-parameter vector for one cluster.
pub fn theta1_dim(p: usize, levels: usize, t: usize) -> usize {
    (t - 1) + 2 * p * (levels + 1) + 2 * t
}

/// The per-component transform kinds in canonical order: slot noise
/// scales, slab scales, inclusion probabilities, spatial scales, spatial
/// dependence (the last on the target cluster's support).
fn component_kinds(p: usize, levels: usize, t: usize, support: (f64, f64)) -> Vec<MapKind> {
    let mut kinds = Vec::with_capacity(theta1_dim(p, levels, t));
    kinds.extend(std::iter::repeat(MapKind::Log).take(t - 1));
    kinds.extend(std::iter::repeat(MapKind::Log).take(p * (levels + 1)));
    kinds.extend(std::iter::repeat(MapKind::Logistic(0.0, 1.0)).take(p * (levels + 1)));
    kinds.extend(std::iter::repeat(MapKind::Log).take(t));
    kinds.extend(std::iter::repeat(MapKind::Logistic(support.0, support.1)).take(t));
    kinds
}

fn component_values(theta1: &HigherParams, p: usize, levels: usize, t: usize) -> Vec<f64> {
    let mut values = Vec::with_capacity(theta1_dim(p, levels, t));
    values.extend_from_slice(&theta1.m[1..]);
    for i in 0..p {
        for j in 0..=levels {
            values.push(theta1.lambda[(i, j)]);
        }
    }
    for i in 0..p {
        for j in 0..=levels {
            values.push(theta1.pi[(i, j)]);
        }
    }
    values.extend_from_slice(&theta1.h);
    values.extend_from_slice(&theta1.phi);
    values
}

fn theta1_from_values(values: &[f64], p: usize, levels: usize, t: usize) -> HigherParams {
    debug_assert_eq!(values.len(), theta1_dim(p, levels, t));
    let mut m = Vec::with_capacity(t);
    m.push(1.0);
    m.extend_from_slice(&values[..t - 1]);
    let cols = levels + 1;
    let mut at = t - 1;
    let lambda = DMatrix::from_fn(p, cols, |i, j| values[at + i * cols + j]);
    at += p * cols;
    let pi = DMatrix::from_fn(p, cols, |i, j| values[at + i * cols + j]);
    at += p * cols;
    let h = values[at..at + t].to_vec();
    at += t;
    let phi = values[at..at + t].to_vec();
    HigherParams { m, lambda, pi, h, phi }
}

/// Weighted-sum proposal on transformed axes: for each component,
/// z = v + sum_r w_r f(theta_r), theta* = f^{-1}(z). Returns the newborn
/// parameter set and the log Jacobian of the inverse map at z.
pub fn propose_theta1_split(
    donors: &[(&HigherParams, f64)],
    new_support: (f64, f64),
    v: &[f64],
    p: usize,
    levels: usize,
    t: usize,
) -> Result<(HigherParams, f64)> {
    let kinds = component_kinds(p, levels, t, new_support);
    if v.len() != kinds.len() {
        return Err(SfcError::Input(format!(
            "expected {} instrumental components, got {}",
            kinds.len(),
            v.len()
        )));
    }
    let donor_values: Vec<(Vec<f64>, f64)> = donors
        .iter()
        .filter(|(_, w)| *w > 0.0)
        .map(|(theta1, w)| (component_values(theta1, p, levels, t), *w))
        .collect();
    let mut values = Vec::with_capacity(kinds.len());
    let mut log_jacobian = 0.0;
    for (c, &kind) in kinds.iter().enumerate() {
        let mut z = v[c];
        for (dv, w) in &donor_values {
            z += w * map_forward(kind, dv[c])?;
        }
        values.push(map_inverse(kind, z));
        log_jacobian += map_log_jacobian(kind, z);
    }
    Ok((theta1_from_values(&values, p, levels, t), log_jacobian))
}

/// Deterministic inverse of [`propose_theta1_split`]: recovers the
/// instrumental vector that would have produced `target` from `donors`,
/// with the log Jacobian evaluated at the same transformed coordinates.
pub fn recover_split_randomness(
    target: &HigherParams,
    donors: &[(&HigherParams, f64)],
    target_support: (f64, f64),
    p: usize,
    levels: usize,
    t: usize,
) -> Result<(Vec<f64>, f64)> {
    let kinds = component_kinds(p, levels, t, target_support);
    let target_values = component_values(target, p, levels, t);
    let donor_values: Vec<(Vec<f64>, f64)> = donors
        .iter()
        .filter(|(_, w)| *w > 0.0)
        .map(|(theta1, w)| (component_values(theta1, p, levels, t), *w))
        .collect();
    let mut v = Vec::with_capacity(kinds.len());
    let mut log_jacobian = 0.0;
    for (c, &kind) in kinds.iter().enumerate() {
        let z = map_forward(kind, target_values[c])?;
        let mut shift = 0.0;
        for (dv, w) in &donor_values {
            shift += w * map_forward(kind, dv[c])?;
        }
        v.push(z - shift);
        log_jacobian += map_log_jacobian(kind, z);
    }
    Ok((v, log_jacobian))
}

// ---------------------------------------------------------------------
// Shared pieces.

/// Fraction of `members` carrying each label under `labels`, over `d`
/// clusters.
fn label_fractions(members: &[usize], labels: &[usize], d: usize) -> Vec<f64> {
    let mut w = vec![0.0; d];
    for &s in members {
        w[labels[s]] += 1.0;
    }
    let total = members.len() as f64;
    for x in &mut w {
        *x /= total;
    }
    w
}

fn log_normal_density_sum(v: &[f64], variance: f64) -> f64 {
    v.iter().map(|&x| stats::normal_logpdf(x, 0.0, variance)).sum()
}

/// Sum of the cached per-cluster evidence terms; call after ensuring every
/// model's marginal is up to date.
fn cluster_side_terms(cluster: &mut ClusterState) -> Result<(f64, f64)> {
    let ml = cluster.model.log_ml()?;
    let prior = cluster.model.log_prior_theta1();
    Ok((ml, prior))
}

fn rebuild_cluster(
    ctx: &ModelContext,
    members: Vec<usize>,
    theta1: HigherParams,
    gamma: Vec<Vec<bool>>,
) -> Option<ClusterModel> {
    ClusterModel::new(ctx.clone(), members, theta1, gamma).ok()
}

/// Draws inclusions for a newborn cluster by thresholding unit uniforms
/// against its inclusion probabilities.
fn gamma_from_units(
    ctx: &ModelContext,
    pi: &DMatrix<f64>,
    units: &[f64],
) -> Vec<Vec<bool>> {
    let (p, t) = (ctx.p(), ctx.t());
    (0..p)
        .map(|i| {
            (0..t)
                .map(|tau| {
                    let (j, _) = ctx.basis.level_of(tau);
                    units[i * t + tau] < pi[(i, j)]
                })
                .collect()
        })
        .collect()
}

// ---------------------------------------------------------------------
// Boundary-label transfer between related tessellations.

/// Snapshot of one label candidate for boundary scoring: its scale
/// parameters, inclusions, and the fitted coefficients and noise variance
/// under its current members.
struct ScorerCandidate {
    theta1: HigherParams,
    gamma: Vec<Vec<bool>>,
    beta_hat: DMatrix<f64>,
    sigma2_hat: f64,
}

/// Summarizes a cluster state into a scoring candidate; None when the fit
/// is unusable (degenerate marginal or too little data for a variance).
fn scorer_candidate(model: &mut ClusterModel) -> Option<ScorerCandidate> {
    let prior = model.ctx().hyper.sigma2;
    let (p, t) = (model.p(), model.t());
    let marginal = model.marginal().ok()?;
    let (shape, rate) = marginal.sigma2_posterior(prior.shape, prior.rate);
    if shape <= 1.0 {
        return None;
    }
    Some(ScorerCandidate {
        theta1: model.theta1().clone(),
        gamma: model.gamma().to_vec(),
        beta_hat: marginal.beta_hat_matrix(p, t),
        sigma2_hat: rate / (shape - 1.0),
    })
}

/// Deterministic stand-in for a cluster that does not exist yet: scale
/// parameters from the donor-weighted map at zero instrumental noise,
/// inclusions from the dominant donor, coefficients refit on the nascent
/// cluster's own nearest-center cell.
fn synthetic_candidate(
    ctx: &ModelContext,
    grown: &Gvt,
    src_labels: &[usize],
    donors: &[(&HigherParams, &[Vec<bool>])],
) -> Option<ScorerCandidate> {
    let newborn = grown.d() - 1;
    let cell = grown.clone().deterministic_partition().members(newborn);
    if cell.len() < 2 {
        return None;
    }
    let car = ctx.lattice.car_matrices(&cell).ok()?;
    let (lo, hi) = car.phi_support();
    let margin = 1e-6 * (hi - lo);
    let weights = label_fractions(&cell, src_labels, donors.len());
    // Donor dependence values live on their own supports; pull them into
    // the cell's before mapping.
    let clamped: Vec<HigherParams> = donors
        .iter()
        .map(|&(theta1, _)| {
            let mut adj = theta1.clone();
            for phi in &mut adj.phi {
                *phi = phi.clamp(lo + margin, hi - margin);
            }
            adj
        })
        .collect();
    let weighted: Vec<(&HigherParams, f64)> = clamped
        .iter()
        .zip(weights.iter())
        .map(|(theta1, &w)| (theta1, w))
        .collect();
    let (p, levels, t) = (ctx.p(), ctx.levels(), ctx.t());
    let zeros = vec![0.0; theta1_dim(p, levels, t)];
    let (theta1, _) =
        propose_theta1_split(&weighted, (lo, hi), &zeros, p, levels, t).ok()?;
    let mut dominant = 0;
    for (r, &w) in weights.iter().enumerate() {
        if w > weights[dominant] {
            dominant = r;
        }
    }
    let gamma = donors[dominant].1.to_vec();
    let mut model = ClusterModel::new(ctx.clone(), cell, theta1, gamma).ok()?;
    scorer_candidate(&mut model)
}

/// True when the location's admissible centers agree between the two
/// tessellations, compared as lattice cells rather than label indices.
fn same_choice_centers(a: &Gvt, b: &Gvt, s: usize) -> bool {
    let mut ca: Vec<usize> = a.choice_set(s).iter().map(|&l| a.centers()[l]).collect();
    let mut cb: Vec<usize> = b.choice_set(s).iter().map(|&l| b.centers()[l]).collect();
    if ca.len() != cb.len() {
        return false;
    }
    ca.sort_unstable();
    cb.sort_unstable();
    ca == cb
}

/// Maps a source label into a tessellation with `victim` removed; None
/// for the victim itself.
fn map_src_label(label: usize, victim: Option<usize>) -> Option<usize> {
    match victim {
        None => Some(label),
        Some(v) if label == v => None,
        Some(v) if label > v => Some(label - 1),
        Some(_) => Some(label),
    }
}

/// One draw from normalized log masses; mirrors the inversion used for
/// every categorical label draw so streams stay reproducible.
fn sample_categorical_log<R: Rng + ?Sized>(masses: &[f64], rng: &mut R) -> usize {
    let u = rng.random::<f64>();
    let mut acc = 0.0;
    let mut chosen = masses.len() - 1;
    for (idx, &lm) in masses.iter().enumerate() {
        acc += lm.exp();
        if u < acc {
            chosen = idx;
            break;
        }
    }
    chosen
}

struct LabelTransfer {
    labels: Vec<usize>,
    log_mass: f64,
}

/// Moves boundary labels from one tessellation onto a related one. A label
/// carries over wherever the location is ambiguous in both tessellations
/// with the same admissible centers; everywhere else the label is drawn
/// from the per-location scores, accumulating the chosen log mass.
/// `victim` names a source label with no destination counterpart. `forced`
/// pins the drawn labels (destination boundary order) and returns the mass
/// they would have received; the transfer is None when a pinned label is
/// inadmissible or contradicts a carried one.
fn transfer_labels<R: Rng + ?Sized>(
    src_gvt: &Gvt,
    src_labels: &[usize],
    victim: Option<usize>,
    dst: &Gvt,
    scorer: &mut LabelScorer,
    forced: Option<&[usize]>,
    rng: &mut R,
) -> Option<LabelTransfer> {
    if let Some(f) = forced {
        debug_assert_eq!(f.len(), dst.boundary().len());
    }
    let mut labels = Vec::with_capacity(dst.boundary().len());
    let mut log_mass = 0.0;
    for (pos, &s) in dst.boundary().iter().enumerate() {
        if src_gvt.is_boundary(s) && same_choice_centers(src_gvt, dst, s) {
            let l = map_src_label(src_labels[s], victim)
                .expect("a removed center cannot appear in a shared choice set");
            if let Some(f) = forced {
                if f[pos] != l {
                    return None;
                }
            }
            labels.push(l);
            continue;
        }
        let masses = scorer.log_masses(s);
        let set = dst.choice_set(s);
        let idx = match forced {
            Some(f) => set.iter().position(|&l| l == f[pos])?,
            None => sample_categorical_log(&masses, rng),
        };
        labels.push(set[idx]);
        log_mass += masses[idx];
    }
    Some(LabelTransfer { labels, log_mass })
}

// ---------------------------------------------------------------------
// Split.

/// Draws the randomness of a split with the fixed consumption order
/// (center, instrumental Gaussian, inclusion uniforms); boundary labels
/// are left free for the evaluation to draw. None when every location
/// already hosts a center.
pub fn draw_split_randomness<R: Rng + ?Sized>(
    ctx: &ModelContext,
    partition: &Partition,
    rng: &mut R,
) -> Option<SplitRandomness> {
    let gvt = partition.gvt();
    let n = ctx.n();
    let taken: Vec<bool> = {
        let mut v = vec![false; n];
        for &g in gvt.centers() {
            v[g] = true;
        }
        v
    };
    let free: Vec<usize> = (0..n).filter(|&s| !taken[s]).collect();
    if free.is_empty() {
        return None;
    }
    let new_center = free[rng.random_range(0..free.len())];
    let dim = theta1_dim(ctx.p(), ctx.levels(), ctx.t());
    let sd = ctx.hyper.vartheta2.sqrt();
    let v: Vec<f64> = (0..dim).map(|_| sd * stats::draw_standard_normal(rng)).collect();
    let gamma_unit: Vec<f64> =
        (0..ctx.p() * ctx.t()).map(|_| rng.random::<f64>()).collect();
    Some(SplitRandomness { new_center, boundary_labels: None, v, gamma_unit })
}

/// Evaluates a split at injected randomness; `rng` feeds the boundary
/// labels the randomness leaves free. Cluster states are only mutated
/// through their lazy caches.
pub fn eval_split<R: Rng + ?Sized>(
    ctx: &ModelContext,
    partition: &Partition,
    clusters: &mut [ClusterState],
    alpha: f64,
    cfg: &SamplerConfig,
    rand: &SplitRandomness,
    rng: &mut R,
) -> Result<MoveOutcome> {
    let gvt_old = partition.gvt();
    let d = partition.d();
    let n = ctx.n();
    let hyper = &ctx.hyper;
    if rand.new_center >= n || gvt_old.centers().contains(&rand.new_center) {
        return Ok(MoveOutcome::rejected(false));
    }
    let mut centers = gvt_old.centers().to_vec();
    centers.push(rand.new_center);
    let grown = match Gvt::new(ctx.lattice.clone(), centers, gvt_old.k_order(), gvt_old.vt_baseline())
    {
        Ok(g) => g,
        Err(_) => return Ok(MoveOutcome::rejected(false)),
    };

    // Forward labels onto the grown tessellation; the newborn label is
    // scored through a synthetic stand-in fitted on its nearest-center
    // cell.
    let uniform = cfg.constant_likelihood;
    let forward = {
        let mut candidates: Vec<Option<ScorerCandidate>> = Vec::new();
        if !uniform {
            for c in clusters.iter_mut() {
                candidates.push(scorer_candidate(&mut c.model));
            }
            let donor_params: Vec<(&HigherParams, &[Vec<bool>])> = clusters
                .iter()
                .map(|c| (c.model.theta1(), c.model.gamma()))
                .collect();
            candidates.push(synthetic_candidate(ctx, &grown, partition.labels(), &donor_params));
        }
        let mut scorer = LabelScorer::from_candidates(ctx, candidates, &grown, uniform);
        transfer_labels(
            gvt_old,
            partition.labels(),
            None,
            &grown,
            &mut scorer,
            rand.boundary_labels.as_deref(),
            rng,
        )
    };
    let Some(forward) = forward else {
        return Ok(MoveOutcome::rejected(false));
    };
    let proposed = match grown.assign_labels(&forward.labels) {
        Ok(p) => p,
        Err(_) => return Ok(MoveOutcome::rejected(false)),
    };
    if proposed.validate(hyper.n_min, hyper.enforce_connectivity).is_err() {
        return Ok(MoveOutcome::rejected(true));
    }
    let lp_new = proposed.log_prior(hyper.center_prior, alpha, hyper.n_max);
    let lp_old = partition.log_prior(hyper.center_prior, alpha, hyper.n_max);
    if lp_new == f64::NEG_INFINITY {
        return Ok(MoveOutcome::rejected(true));
    }
    let mut terms = AcceptanceTerms::zero();
    terms.log_prior_ratio = lp_new - lp_old;
    // Reverse center choice (victim among d+1) against forward choice
    // (one of the n-d free locations), kind odds, and the forward label
    // mass; the reverse label mass joins once the post-move states exist.
    terms.log_proposal_ratio = ((n - d) as f64 / (d + 1) as f64).ln()
        + cfg.move_probs[1].ln()
        - cfg.move_probs[0].ln()
        - forward.log_mass;
    let current_boundary = partition.boundary_labels();

    if cfg.constant_likelihood {
        let reverse = {
            let mut scorer = LabelScorer::from_candidates(ctx, Vec::new(), gvt_old, true);
            transfer_labels(
                proposed.gvt(),
                proposed.labels(),
                Some(d),
                gvt_old,
                &mut scorer,
                Some(&current_boundary),
                rng,
            )
        };
        let Some(reverse) = reverse else {
            return Ok(MoveOutcome::rejected(false));
        };
        terms.log_proposal_ratio += reverse.log_mass;
        return Ok(MoveOutcome {
            terms,
            proposal: Some(ProposedState { partition: proposed, carry: Vec::new() }),
        });
    }

    let new_members = proposed.members(d);
    let car_new = match ctx.lattice.car_matrices(&new_members) {
        Ok(c) => c,
        Err(_) => return Ok(MoveOutcome::rejected(true)),
    };
    let weights = label_fractions(&new_members, partition.labels(), d);
    let donors: Vec<(&HigherParams, f64)> = clusters
        .iter()
        .zip(weights.iter())
        .map(|(c, &w)| (c.model.theta1(), w))
        .collect();
    let (p, levels, t) = (ctx.p(), ctx.levels(), ctx.t());
    let (theta1_star, log_jacobian) =
        match propose_theta1_split(&donors, car_new.phi_support(), &rand.v, p, levels, t) {
            Ok(out) => out,
            Err(SfcError::Proposal(_)) => return Ok(MoveOutcome::rejected(false)),
            Err(e) => return Err(e),
        };
    let gamma_star = gamma_from_units(ctx, &theta1_star.pi, &rand.gamma_unit);
    let mut newborn =
        match rebuild_cluster(ctx, new_members, theta1_star, gamma_star) {
            Some(m) => m,
            None => return Ok(MoveOutcome::rejected(true)),
        };

    let mut carry = Vec::with_capacity(d + 1);
    let mut log_lik = 0.0;
    let mut log_theta_prior = 0.0;
    for r in 0..d {
        let members_new = proposed.members(r);
        if members_new == partition.members(r) {
            carry.push(ClusterCarry::Kept(r));
            continue;
        }
        let (old_ml, old_prior) = cluster_side_terms(&mut clusters[r])?;
        let mut rebuilt = match rebuild_cluster(
            ctx,
            members_new,
            clusters[r].model.theta1().clone(),
            clusters[r].model.gamma().to_vec(),
        ) {
            Some(m) => m,
            None => return Ok(MoveOutcome::rejected(true)),
        };
        log_lik += rebuilt.log_ml()? - old_ml;
        log_theta_prior += rebuilt.log_prior_theta1() - old_prior;
        carry.push(ClusterCarry::Rebuilt(rebuilt));
    }
    log_lik += newborn.log_ml()?;
    log_theta_prior += newborn.log_prior_theta1();
    let gamma_mass = newborn.log_prior_gamma();

    // Reverse labels: the matched merge must redraw the current boundary
    // labels on the old tessellation, scored from the post-move survivor
    // states.
    let reverse = {
        let mut rev_candidates: Vec<Option<ScorerCandidate>> = Vec::with_capacity(d);
        for entry in carry.iter_mut().take(d) {
            rev_candidates.push(match entry {
                ClusterCarry::Kept(r) => scorer_candidate(&mut clusters[*r].model),
                ClusterCarry::Rebuilt(m) => scorer_candidate(m),
            });
        }
        let mut scorer = LabelScorer::from_candidates(ctx, rev_candidates, gvt_old, false);
        transfer_labels(
            proposed.gvt(),
            proposed.labels(),
            Some(d),
            gvt_old,
            &mut scorer,
            Some(&current_boundary),
            rng,
        )
    };
    let Some(reverse) = reverse else {
        return Ok(MoveOutcome::rejected(false));
    };

    terms.log_lik_ratio = log_lik;
    terms.log_prior_ratio += log_theta_prior + gamma_mass;
    terms.log_proposal_ratio += reverse.log_mass
        - log_normal_density_sum(&rand.v, hyper.vartheta2)
        - gamma_mass;
    terms.log_jacobian = log_jacobian;
    carry.push(ClusterCarry::Rebuilt(newborn));
    Ok(MoveOutcome { terms, proposal: Some(ProposedState { partition: proposed, carry }) })
}

// ---------------------------------------------------------------------
// Merge.

/// Draws the randomness of a merge (the victim; labels for the reduced
/// tessellation are left free for the evaluation to draw). None when only
/// one cluster remains.
pub fn draw_merge_randomness<R: Rng + ?Sized>(
    partition: &Partition,
    rng: &mut R,
) -> Option<MergeRandomness> {
    let d = partition.d();
    if d <= 1 {
        return None;
    }
    let victim = rng.random_range(0..d);
    Some(MergeRandomness { victim, boundary_labels: None })
}

/// Evaluates a merge at injected randomness; `rng` feeds the boundary
/// labels the randomness leaves free.
pub fn eval_merge<R: Rng + ?Sized>(
    ctx: &ModelContext,
    partition: &Partition,
    clusters: &mut [ClusterState],
    alpha: f64,
    cfg: &SamplerConfig,
    rand: &MergeRandomness,
    rng: &mut R,
) -> Result<MoveOutcome> {
    let gvt_old = partition.gvt();
    let d = partition.d();
    let n = ctx.n();
    let hyper = &ctx.hyper;
    if d <= 1 || rand.victim >= d {
        return Ok(MoveOutcome::rejected(false));
    }
    let centers: Vec<usize> = gvt_old
        .centers()
        .iter()
        .enumerate()
        .filter(|&(r, _)| r != rand.victim)
        .map(|(_, &g)| g)
        .collect();
    let reduced =
        match Gvt::new(ctx.lattice.clone(), centers, gvt_old.k_order(), gvt_old.vt_baseline()) {
            Ok(g) => g,
            Err(_) => return Ok(MoveOutcome::rejected(false)),
        };

    // Old index of each surviving cluster, in proposed order.
    let survivors: Vec<usize> =
        (0..d).filter(|&r| r != rand.victim).collect();

    // Forward labels onto the reduced tessellation, scored from the
    // surviving clusters' current fits.
    let uniform = cfg.constant_likelihood;
    let forward = {
        let mut candidates: Vec<Option<ScorerCandidate>> = Vec::new();
        if !uniform {
            for &r_old in &survivors {
                candidates.push(scorer_candidate(&mut clusters[r_old].model));
            }
        }
        let mut scorer = LabelScorer::from_candidates(ctx, candidates, &reduced, uniform);
        transfer_labels(
            gvt_old,
            partition.labels(),
            Some(rand.victim),
            &reduced,
            &mut scorer,
            rand.boundary_labels.as_deref(),
            rng,
        )
    };
    let Some(forward) = forward else {
        return Ok(MoveOutcome::rejected(false));
    };
    let proposed = match reduced.assign_labels(&forward.labels) {
        Ok(p) => p,
        Err(_) => return Ok(MoveOutcome::rejected(false)),
    };
    if proposed.validate(hyper.n_min, hyper.enforce_connectivity).is_err() {
        return Ok(MoveOutcome::rejected(true));
    }
    let lp_new = proposed.log_prior(hyper.center_prior, alpha, hyper.n_max);
    let lp_old = partition.log_prior(hyper.center_prior, alpha, hyper.n_max);
    if lp_new == f64::NEG_INFINITY {
        return Ok(MoveOutcome::rejected(true));
    }
    let mut terms = AcceptanceTerms::zero();
    terms.log_prior_ratio = lp_new - lp_old;
    // Reverse split re-adds the victim's center (one of n-(d-1) free
    // locations) against the forward victim choice among d, plus kind odds
    // and the forward label mass.
    terms.log_proposal_ratio = (d as f64 / (n - d + 1) as f64).ln()
        + cfg.move_probs[0].ln()
        - cfg.move_probs[1].ln()
        - forward.log_mass;

    // The reverse split appends the victim's center last, so the current
    // labels must be rephrased in that tessellation's indexing.
    let mut back_centers: Vec<usize> = gvt_old
        .centers()
        .iter()
        .enumerate()
        .filter(|&(r, _)| r != rand.victim)
        .map(|(_, &g)| g)
        .collect();
    back_centers.push(gvt_old.centers()[rand.victim]);
    let grown_back = match Gvt::new(
        ctx.lattice.clone(),
        back_centers,
        gvt_old.k_order(),
        gvt_old.vt_baseline(),
    ) {
        Ok(g) => g,
        Err(_) => return Ok(MoveOutcome::rejected(false)),
    };
    let forced_back: Vec<usize> = grown_back
        .boundary()
        .iter()
        .map(|&s| {
            let l = partition.labels()[s];
            if l == rand.victim {
                d - 1
            } else if l > rand.victim {
                l - 1
            } else {
                l
            }
        })
        .collect();

    if cfg.constant_likelihood {
        let reverse = {
            let mut scorer = LabelScorer::from_candidates(ctx, Vec::new(), &grown_back, true);
            transfer_labels(
                proposed.gvt(),
                proposed.labels(),
                None,
                &grown_back,
                &mut scorer,
                Some(&forced_back),
                rng,
            )
        };
        let Some(reverse) = reverse else {
            return Ok(MoveOutcome::rejected(false));
        };
        terms.log_proposal_ratio += reverse.log_mass;
        return Ok(MoveOutcome {
            terms,
            proposal: Some(ProposedState { partition: proposed, carry: Vec::new() }),
        });
    }

    let victim_members = partition.members(rand.victim);
    let weights = label_fractions(&victim_members, proposed.labels(), d - 1);
    let donors: Vec<(&HigherParams, f64)> = survivors
        .iter()
        .zip(weights.iter())
        .map(|(&r_old, &w)| (clusters[r_old].model.theta1(), w))
        .collect();
    let (p, levels, t) = (ctx.p(), ctx.levels(), ctx.t());
    let target_support = clusters[rand.victim].model.car().phi_support();
    let (v, log_jacobian) = match recover_split_randomness(
        clusters[rand.victim].model.theta1(),
        &donors,
        target_support,
        p,
        levels,
        t,
    ) {
        Ok(out) => out,
        Err(SfcError::Proposal(_)) => return Ok(MoveOutcome::rejected(false)),
        Err(e) => return Err(e),
    };

    let mut carry = Vec::with_capacity(d - 1);
    let mut log_lik = 0.0;
    let mut log_theta_prior = 0.0;
    for (new_r, &old_r) in survivors.iter().enumerate() {
        let members_new = proposed.members(new_r);
        if members_new == partition.members(old_r) {
            carry.push(ClusterCarry::Kept(old_r));
            continue;
        }
        let (old_ml, old_prior) = cluster_side_terms(&mut clusters[old_r])?;
        let mut rebuilt = match rebuild_cluster(
            ctx,
            members_new,
            clusters[old_r].model.theta1().clone(),
            clusters[old_r].model.gamma().to_vec(),
        ) {
            Some(m) => m,
            None => return Ok(MoveOutcome::rejected(true)),
        };
        log_lik += rebuilt.log_ml()? - old_ml;
        log_theta_prior += rebuilt.log_prior_theta1() - old_prior;
        carry.push(ClusterCarry::Rebuilt(rebuilt));
    }
    let (victim_ml, victim_prior) = cluster_side_terms(&mut clusters[rand.victim])?;
    log_lik -= victim_ml;
    let victim_gamma_mass = clusters[rand.victim].model.log_prior_gamma();
    log_theta_prior -= victim_prior + victim_gamma_mass;

    // Reverse labels: the matched split must redraw the current boundary
    // labels, scored from the post-merge states plus a synthetic stand-in
    // for re-adding the victim's center.
    let reverse = {
        let mut rev_candidates: Vec<Option<ScorerCandidate>> =
            Vec::with_capacity(d);
        for entry in carry.iter_mut() {
            rev_candidates.push(match entry {
                ClusterCarry::Kept(r) => scorer_candidate(&mut clusters[*r].model),
                ClusterCarry::Rebuilt(m) => scorer_candidate(m),
            });
        }
        let donor_params: Vec<(&HigherParams, &[Vec<bool>])> = carry
            .iter()
            .map(|entry| match entry {
                ClusterCarry::Kept(r) => {
                    let m = &clusters[*r].model;
                    (m.theta1(), m.gamma())
                }
                ClusterCarry::Rebuilt(m) => (m.theta1(), m.gamma()),
            })
            .collect();
        rev_candidates.push(synthetic_candidate(
            ctx,
            &grown_back,
            proposed.labels(),
            &donor_params,
        ));
        let mut scorer = LabelScorer::from_candidates(ctx, rev_candidates, &grown_back, false);
        transfer_labels(
            proposed.gvt(),
            proposed.labels(),
            None,
            &grown_back,
            &mut scorer,
            Some(&forced_back),
            rng,
        )
    };
    let Some(reverse) = reverse else {
        return Ok(MoveOutcome::rejected(false));
    };

    terms.log_lik_ratio = log_lik;
    terms.log_prior_ratio += log_theta_prior;
    terms.log_proposal_ratio += reverse.log_mass
        + log_normal_density_sum(&v, hyper.vartheta2)
        + victim_gamma_mass;
    terms.log_jacobian = -log_jacobian;
    Ok(MoveOutcome { terms, proposal: Some(ProposedState { partition: proposed, carry }) })
}

// ---------------------------------------------------------------------
// Relocation with boundary refresh.

/// Per-location label scores shared by every move's label proposal: for
/// each admissible cluster, the independent-slot Gaussian fit of the
/// location's responses under that cluster's candidate snapshot, evaluated
/// on the cluster's maximal admissible extent.
struct LabelScorer<'a> {
    ctx: &'a ModelContext,
    candidates: Vec<Option<ScorerCandidate>>,
    gvt: &'a Gvt,
    uniform: bool,
    fits: HashMap<usize, Option<CandidateFit>>,
}

struct CandidateFit {
    extent: Vec<usize>,
    /// Fitted slot means per extent row.
    mean: DMatrix<f64>,
    /// Transformed responses per extent row.
    y: DMatrix<f64>,
    sigma2_hat: f64,
    slot_precision_chol: Vec<Cholesky<f64, Dyn>>,
    m: Vec<f64>,
    h: Vec<f64>,
}

impl<'a> LabelScorer<'a> {
    fn from_states(
        ctx: &'a ModelContext,
        clusters: &mut [ClusterState],
        gvt: &'a Gvt,
        uniform: bool,
    ) -> Self {
        let candidates = if uniform {
            Vec::new()
        } else {
            clusters.iter_mut().map(|c| scorer_candidate(&mut c.model)).collect()
        };
        Self::from_candidates(ctx, candidates, gvt, uniform)
    }

    fn from_candidates(
        ctx: &'a ModelContext,
        candidates: Vec<Option<ScorerCandidate>>,
        gvt: &'a Gvt,
        uniform: bool,
    ) -> Self {
        Self { ctx, candidates, gvt, uniform, fits: HashMap::new() }
    }

    fn build_fit(&self, r: usize) -> Option<CandidateFit> {
        let cand = self.candidates.get(r)?.as_ref()?;
        let extent = self.gvt.maximal_extent(r);
        let car = self.ctx.lattice.car_matrices(&extent).ok()?;
        let (lo, hi) = car.phi_support();
        let margin = 1e-6 * (hi - lo);
        let mut theta1 = cand.theta1.clone();
        for phi in &mut theta1.phi {
            *phi = phi.clamp(lo + margin, hi - margin);
        }
        let mut model =
            ClusterModel::new(self.ctx.clone(), extent.clone(), theta1, cand.gamma.clone())
                .ok()?;
        let mean = model.regression_mean(&cand.beta_hat);
        let slot_precision_chol = (0..self.ctx.t())
            .map(|tau| Cholesky::new(car.dense_precision(model.theta1().phi[tau])))
            .collect::<Option<Vec<_>>>()?;
        Some(CandidateFit {
            extent,
            mean,
            y: model.y().clone(),
            sigma2_hat: cand.sigma2_hat,
            slot_precision_chol,
            m: model.theta1().m.clone(),
            h: model.theta1().h.clone(),
        })
    }

    /// Normalized log masses over the choice set of `s`.
    fn log_masses(&mut self, s: usize) -> Vec<f64> {
        let set = self.gvt.choice_set(s).to_vec();
        let k = set.len();
        let uniform = vec![-(k as f64).ln(); k];
        if self.uniform || self.candidates.is_empty() {
            return uniform;
        }
        let mut logs = Vec::with_capacity(k);
        for &r in &set {
            if !self.fits.contains_key(&r) {
                let fit = self.build_fit(r);
                self.fits.insert(r, fit);
            }
            let fit = match self.fits.get(&r).and_then(|f| f.as_ref()) {
                Some(f) => f,
                None => return uniform,
            };
            let pos = match fit.extent.binary_search(&s) {
                Ok(i) => i,
                Err(_) => return uniform,
            };
            let n_ext = fit.extent.len();
            let mut lf = 0.0;
            for tau in 0..self.ctx.t() {
                let mut e = DVector::zeros(n_ext);
                e[pos] = 1.0;
                let diag = fit.slot_precision_chol[tau].solve(&e)[pos];
                let var = fit.sigma2_hat * (fit.m[tau] + fit.h[tau] * diag);
                lf += stats::normal_logpdf(
                    fit.y[(pos, tau)] - fit.mean[(pos, tau)],
                    0.0,
                    var,
                );
            }
            if !lf.is_finite() {
                return uniform;
            }
            logs.push(lf);
        }
        let norm = stats::logsumexp(&logs);
        logs.iter().map(|&l| l - norm).collect()
    }
}

/// Draws the center choice of a relocation: a cluster and one lattice
/// neighbor of its center. None when the lattice has a single cell.
pub fn draw_relocate_randomness<R: Rng + ?Sized>(
    partition: &Partition,
    rng: &mut R,
) -> Option<RelocateRandomness> {
    let gvt = partition.gvt();
    let cluster = rng.random_range(0..gvt.d());
    let neighbors = gvt.lattice().neighbors(gvt.centers()[cluster]);
    if neighbors.is_empty() {
        return None;
    }
    let destination = neighbors[rng.random_range(0..neighbors.len())];
    Some(RelocateRandomness { cluster, destination })
}

/// Evaluates a relocation; `rng` feeds only the label draws for newly
/// ambiguous locations.
pub fn eval_relocate<R: Rng + ?Sized>(
    ctx: &ModelContext,
    partition: &Partition,
    clusters: &mut [ClusterState],
    alpha: f64,
    cfg: &SamplerConfig,
    rand: &RelocateRandomness,
    rng: &mut R,
) -> Result<MoveOutcome> {
    let gvt_old = partition.gvt();
    let d = partition.d();
    let hyper = &ctx.hyper;
    if rand.cluster >= d {
        return Ok(MoveOutcome::rejected(false));
    }
    let g_old = gvt_old.centers()[rand.cluster];
    if gvt_old.centers().contains(&rand.destination) {
        return Ok(MoveOutcome::rejected(false));
    }
    if !ctx.lattice.neighbors(g_old).contains(&rand.destination) {
        return Ok(MoveOutcome::rejected(false));
    }
    let deg_old = ctx.lattice.degree(g_old) as f64;
    let deg_new = ctx.lattice.degree(rand.destination) as f64;
    let mut centers = gvt_old.centers().to_vec();
    centers[rand.cluster] = rand.destination;
    let moved = match Gvt::new(ctx.lattice.clone(), centers, gvt_old.k_order(), gvt_old.vt_baseline())
    {
        Ok(g) => g,
        Err(_) => return Ok(MoveOutcome::rejected(false)),
    };

    // Forward labels: keep persisting ambiguous locations, score newly
    // ambiguous ones, let the rest take their forced label.
    let mut scorer_fwd =
        LabelScorer::from_states(ctx, clusters, &moved, cfg.constant_likelihood);
    let mut labels = Vec::with_capacity(moved.boundary().len());
    let mut log_fwd_mass = 0.0;
    for &s in moved.boundary() {
        if gvt_old.is_boundary(s) {
            let l = partition.label_of(s);
            if !moved.choice_set(s).contains(&l) {
                return Ok(MoveOutcome::rejected(false));
            }
            labels.push(l);
        } else {
            let masses = scorer_fwd.log_masses(s);
            let pick = sample_categorical_log(&masses, rng);
            labels.push(moved.choice_set(s)[pick]);
            log_fwd_mass += masses[pick];
        }
    }
    let proposed = match moved.assign_labels(&labels) {
        Ok(p) => p,
        Err(_) => return Ok(MoveOutcome::rejected(false)),
    };
    if proposed.validate(hyper.n_min, hyper.enforce_connectivity).is_err() {
        return Ok(MoveOutcome::rejected(true));
    }

    if cfg.paper_cancellation {
        let mut terms = AcceptanceTerms::zero();
        terms.log_proposal_ratio = deg_old.ln() - deg_new.ln();
        return Ok(build_relocate_proposal(ctx, partition, clusters, proposed, terms));
    }

    // Reverse labels: locations leaving the ambiguous set are the newly
    // ambiguous ones of the reverse move and are scored under the current
    // tessellation at their current labels.
    let mut log_rev_mass = 0.0;
    {
        let mut scorer_rev =
            LabelScorer::from_states(ctx, clusters, gvt_old, cfg.constant_likelihood);
        for &s in gvt_old.boundary() {
            if !proposed.gvt().is_boundary(s) {
                let masses = scorer_rev.log_masses(s);
                let set = gvt_old.choice_set(s);
                let idx = set
                    .iter()
                    .position(|&l| l == partition.label_of(s))
                    .expect("current label admissible in its own choice set");
                log_rev_mass += masses[idx];
            }
        }
    }

    let lp_new = proposed.log_prior(hyper.center_prior, alpha, hyper.n_max);
    let lp_old = partition.log_prior(hyper.center_prior, alpha, hyper.n_max);
    let mut terms = AcceptanceTerms::zero();
    terms.log_prior_ratio = lp_new - lp_old;
    terms.log_proposal_ratio =
        deg_old.ln() - deg_new.ln() + log_rev_mass - log_fwd_mass;
    Ok(build_relocate_proposal(ctx, partition, clusters, proposed, terms))
}

/// Fills the likelihood and parameter-prior terms of a relocation from the
/// clusters whose membership changed, then packages the proposal.
fn build_relocate_proposal(
    ctx: &ModelContext,
    partition: &Partition,
    clusters: &mut [ClusterState],
    proposed: Partition,
    mut terms: AcceptanceTerms,
) -> MoveOutcome {
    let d = partition.d();
    let mut carry = Vec::with_capacity(d);
    if clusters.is_empty() {
        return MoveOutcome { terms, proposal: Some(ProposedState { partition: proposed, carry }) };
    }
    for r in 0..d {
        let members_new = proposed.members(r);
        if members_new == partition.members(r) {
            carry.push(ClusterCarry::Kept(r));
            continue;
        }
        let (old_ml, old_prior) = match cluster_side_terms(&mut clusters[r]) {
            Ok(v) => v,
            Err(_) => return MoveOutcome::rejected(true),
        };
        let mut rebuilt = match rebuild_cluster(
            ctx,
            members_new,
            clusters[r].model.theta1().clone(),
            clusters[r].model.gamma().to_vec(),
        ) {
            Some(m) => m,
            None => return MoveOutcome::rejected(true),
        };
        let new_ml = match rebuilt.log_ml() {
            Ok(v) => v,
            Err(_) => return MoveOutcome::rejected(true),
        };
        terms.log_lik_ratio += new_ml - old_ml;
        terms.log_prior_ratio += rebuilt.log_prior_theta1() - old_prior;
        carry.push(ClusterCarry::Rebuilt(rebuilt));
    }
    MoveOutcome { terms, proposal: Some(ProposedState { partition: proposed, carry }) }
}
