//! Generalized Voronoi tessellation of the lattice. A set of centers induces
//! per-location label choice sets: locations near cell borders (within graph
//! distance K of a competing cell, or equidistant between centers) may take
//! any label in their choice set, so cluster boundaries are not restricted
//! to plain nearest-center cells.

use crate::error::{Result, SfcError};
use crate::lattice::SpatialLattice;
use rand::Rng;
use serde::{Deserialize, Serialize};
use std::sync::Arc;

/// Prior placed on the center tuple given the number of clusters.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CenterPriorMode {
    /// Ordered center tuples are uniform given d, and boundary labels are
    /// uniform over each choice set; both terms enter the prior explicitly.
    UniformOnCenters,
    /// (centers, labels) pairs are uniform given d. The center weight is
    /// proportional to the number of label configurations, which cancels the
    /// label term; the per-d pair count is treated as constant.
    UniformOnCenterLabelPairs,
}

/// Log prior mass of the cluster count: a geometric law in d truncated to
/// 1..=n_max and renormalized.
pub fn log_prior_d(d: usize, alpha: f64, n_max: usize) -> f64 {
    if d < 1 || d > n_max {
        return f64::NEG_INFINITY;
    }
    if !(alpha > 0.0 && alpha < 1.0) {
        // Degenerate endpoint: alpha = 1 puts all mass on d = 1.
        return if alpha >= 1.0 && d == 1 { 0.0 } else { f64::NEG_INFINITY };
    }
    let log_c = alpha.ln() - (-((1.0 - alpha).powi(n_max as i32) - 1.0)).ln();
    log_c + (d as f64 - 1.0) * (1.0 - alpha).ln()
}

/// Tessellation geometry induced by an ordered center tuple: choice sets,
/// boundary locations, and nearest-center labels.
#[derive(Debug, Clone)]
pub struct Gvt {
    lattice: Arc<SpatialLattice>,
    k_order: usize,
    vt_baseline: bool,
    centers: Vec<usize>,
    choice_sets: Vec<Vec<usize>>,
    boundary: Vec<usize>,
    vt_labels: Vec<usize>,
    is_tied: Vec<bool>,
}

impl Gvt {
    /// Builds the geometry for an ordered tuple of distinct centers.
    ///
    /// With `vt_baseline` set, every choice set collapses to the single
    /// nearest center (ties broken toward the lowest index) and the boundary
    /// is empty.
    pub fn new(
        lattice: Arc<SpatialLattice>,
        centers: Vec<usize>,
        k_order: usize,
        vt_baseline: bool,
    ) -> Result<Self> {
        let n = lattice.n();
        let d = centers.len();
        if d == 0 || d > n {
            return Err(SfcError::Input(format!("center count {d} out of range 1..={n}")));
        }
        let mut seen = vec![false; n];
        for &g in &centers {
            if g >= n {
                return Err(SfcError::Input(format!("center {g} outside the lattice")));
            }
            if seen[g] {
                return Err(SfcError::Input(format!("duplicate center {g}")));
            }
            seen[g] = true;
        }

        // Distance table, nearest labels, ties.
        let mut dist = vec![0usize; n * d];
        let mut vt_labels = vec![0usize; n];
        let mut is_tied = vec![false; n];
        for s in 0..n {
            let mut best = usize::MAX;
            let mut best_r = 0;
            let mut tie = false;
            for (r, &g) in centers.iter().enumerate() {
                let e = lattice.graph_distance(s, g)?;
                dist[s * d + r] = e;
                if e < best {
                    best = e;
                    best_r = r;
                    tie = false;
                } else if e == best {
                    tie = true;
                }
            }
            vt_labels[s] = best_r;
            is_tied[s] = tie;
        }

        let mut choice_sets = vec![Vec::new(); n];
        if vt_baseline {
            for s in 0..n {
                choice_sets[s].push(vt_labels[s]);
            }
        } else {
            let (rows, cols) = (lattice.rows() as isize, lattice.cols() as isize);
            for s in 0..n {
                if is_tied[s] {
                    // Equidistant points choose among all minimizing centers.
                    let best = dist[s * d + vt_labels[s]];
                    for r in 0..d {
                        if dist[s * d + r] == best {
                            choice_sets[s].push(r);
                        }
                    }
                } else {
                    // Labels of non-tied locations within graph distance K,
                    // the location itself included.
                    let (row, col) = lattice.row_col(s);
                    let k = k_order as isize;
                    let mut set = Vec::new();
                    for dr in -k..=k {
                        let span = k - dr.abs();
                        for dc in -span..=span {
                            let (rr, cc) = (row as isize + dr, col as isize + dc);
                            if rr < 0 || cc < 0 || rr >= rows || cc >= cols {
                                continue;
                            }
                            let x = lattice.index(rr as usize, cc as usize);
                            if !is_tied[x] && !set.contains(&vt_labels[x]) {
                                set.push(vt_labels[x]);
                            }
                        }
                    }
                    set.sort_unstable();
                    choice_sets[s] = set;
                }
            }
        }
        let boundary = (0..n).filter(|&s| choice_sets[s].len() > 1).collect();
        Ok(Self { lattice, k_order, vt_baseline, centers, choice_sets, boundary, vt_labels, is_tied })
    }

    pub fn lattice(&self) -> &Arc<SpatialLattice> {
        &self.lattice
    }

    pub fn k_order(&self) -> usize {
        self.k_order
    }

    pub fn vt_baseline(&self) -> bool {
        self.vt_baseline
    }

    /// Number of clusters d.
    pub fn d(&self) -> usize {
        self.centers.len()
    }

    /// Ordered center tuple; cluster r is the cell of `centers()[r]`.
    pub fn centers(&self) -> &[usize] {
        &self.centers
    }

    /// Locations with more than one admissible label, ascending.
    pub fn boundary(&self) -> &[usize] {
        &self.boundary
    }

    pub fn is_boundary(&self, s: usize) -> bool {
        self.choice_sets[s].len() > 1
    }

    /// Whether `s` is equidistant between two or more centers.
    pub fn is_tied(&self, s: usize) -> bool {
        self.is_tied[s]
    }

    /// Admissible cluster labels for `s`, ascending.
    pub fn choice_set(&self, s: usize) -> &[usize] {
        &self.choice_sets[s]
    }

    /// Nearest-center label (lowest index on ties).
    pub fn vt_label(&self, s: usize) -> usize {
        self.vt_labels[s]
    }

    /// log of the uniform label prior over the boundary,
    /// sum over boundary locations of -log |choice set|.
    pub fn log_label_prior(&self) -> f64 {
        self.boundary.iter().map(|&s| -((self.choice_sets[s].len() as f64).ln())).sum()
    }

    /// Every location whose choice set contains cluster r: the largest
    /// region the cluster can occupy under this geometry.
    pub fn maximal_extent(&self, r: usize) -> Vec<usize> {
        (0..self.lattice.n()).filter(|&s| self.choice_sets[s].contains(&r)).collect()
    }

    /// Fixes boundary labels (parallel to [`Self::boundary`]) and returns the
    /// full partition; non-boundary locations take their forced label.
    pub fn assign_labels(self, boundary_labels: &[usize]) -> Result<Partition> {
        if boundary_labels.len() != self.boundary.len() {
            return Err(SfcError::Input(format!(
                "expected {} boundary labels, got {}",
                self.boundary.len(),
                boundary_labels.len()
            )));
        }
        let mut labels = self.vt_labels.clone();
        for (i, &s) in self.boundary.iter().enumerate() {
            let l = boundary_labels[i];
            if !self.choice_sets[s].contains(&l) {
                return Err(SfcError::Input(format!(
                    "label {l} not admissible at location {s}"
                )));
            }
            labels[s] = l;
        }
        Ok(Partition { gvt: self, labels })
    }

    /// Draws every boundary label uniformly from its choice set.
    pub fn sample_labels<R: Rng + ?Sized>(self, rng: &mut R) -> Partition {
        let mut labels = self.vt_labels.clone();
        for &s in &self.boundary {
            let set = &self.choice_sets[s];
            labels[s] = set[rng.random_range(0..set.len())];
        }
        Partition { gvt: self, labels }
    }

    /// The partition with every location at its nearest-center label.
    pub fn deterministic_partition(self) -> Partition {
        let labels = self.vt_labels.clone();
        Partition { gvt: self, labels }
    }

    /// Candidate targets for each dimension-changing or relocation move:
    /// new-center locations for splits, cluster indices for merges, and
    /// (cluster, adjacent destination) pairs for center relocations.
    pub fn enumerate_moves(&self, n_max: usize) -> MoveCandidates {
        let n = self.lattice.n();
        let mut is_center = vec![false; n];
        for &g in &self.centers {
            is_center[g] = true;
        }
        let split_targets = if self.d() < n_max {
            (0..n).filter(|&s| !is_center[s]).collect()
        } else {
            Vec::new()
        };
        let merge_targets = if self.d() > 1 { (0..self.d()).collect() } else { Vec::new() };
        let mut relocate_targets = Vec::new();
        for (r, &g) in self.centers.iter().enumerate() {
            for &t in self.lattice.neighbors(g) {
                if !is_center[t] {
                    relocate_targets.push((r, t));
                }
            }
        }
        MoveCandidates { split_targets, merge_targets, relocate_targets }
    }
}

/// Available targets per move kind; see [`Gvt::enumerate_moves`].
#[derive(Debug, Clone)]
pub struct MoveCandidates {
    pub split_targets: Vec<usize>,
    pub merge_targets: Vec<usize>,
    pub relocate_targets: Vec<(usize, usize)>,
}

/// A tessellation geometry plus one admissible label per location.
#[derive(Debug, Clone)]
pub struct Partition {
    gvt: Gvt,
    labels: Vec<usize>,
}

impl Partition {
    pub fn gvt(&self) -> &Gvt {
        &self.gvt
    }

    pub fn d(&self) -> usize {
        self.gvt.d()
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn label_of(&self, s: usize) -> usize {
        self.labels[s]
    }

    /// Labels at the boundary locations, in boundary order.
    pub fn boundary_labels(&self) -> Vec<usize> {
        self.gvt.boundary().iter().map(|&s| self.labels[s]).collect()
    }

    /// Member locations of cluster r, ascending.
    pub fn members(&self, r: usize) -> Vec<usize> {
        (0..self.labels.len()).filter(|&s| self.labels[s] == r).collect()
    }

    /// Member lists for all clusters in one pass, each ascending.
    pub fn all_members(&self) -> Vec<Vec<usize>> {
        let mut out = vec![Vec::new(); self.d()];
        for (s, &l) in self.labels.iter().enumerate() {
            out[l].push(s);
        }
        out
    }

    pub fn cluster_sizes(&self) -> Vec<usize> {
        let mut out = vec![0usize; self.d()];
        for &l in &self.labels {
            out[l] += 1;
        }
        out
    }

    /// Checks the hard partition constraints: every cluster has at least
    /// `n_min` members and (optionally) induces a connected subgraph.
    pub fn validate(&self, n_min: usize, enforce_connectivity: bool) -> Result<()> {
        let members = self.all_members();
        for (r, m) in members.iter().enumerate() {
            if m.len() < n_min {
                return Err(SfcError::DegenerateCluster(format!(
                    "cluster {r} has {} members, need at least {n_min}",
                    m.len()
                )));
            }
            if enforce_connectivity && !self.gvt.lattice().is_connected(m) {
                return Err(SfcError::DegenerateCluster(format!("cluster {r} is disconnected")));
            }
        }
        Ok(())
    }

    /// Log prior of (d, centers, labels) under the chosen center prior and
    /// the truncated geometric law on d.
    pub fn log_prior(&self, mode: CenterPriorMode, alpha: f64, n_max: usize) -> f64 {
        let d_term = log_prior_d(self.d(), alpha, n_max);
        match mode {
            CenterPriorMode::UniformOnCenters => {
                let n = self.gvt.lattice().n();
                let centers_term: f64 =
                    (0..self.d()).map(|i| -(((n - i) as f64).ln())).sum();
                d_term + centers_term + self.gvt.log_label_prior()
            }
            CenterPriorMode::UniformOnCenterLabelPairs => d_term,
        }
    }
}
