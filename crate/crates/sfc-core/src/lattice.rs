//! Regular 2-D lattice: 4-neighborhood adjacency, graph distances, and the
//! per-subset CAR matrices (F, Q) with their spectral bounds.

use crate::error::{Result, SfcError};
use nalgebra::{DMatrix, DVector};

/// A rows x cols grid of locations indexed row-major in `0..N`.
///
/// Adjacency is the 4-neighborhood (rook moves), so the graph distance
/// between two cells equals their Manhattan distance.
#[derive(Debug, Clone)]
pub struct SpatialLattice {
    rows: usize,
    cols: usize,
    neighbors: Vec<Vec<usize>>,
}

impl SpatialLattice {
    pub fn new(rows: usize, cols: usize) -> Result<Self> {
        if rows == 0 || cols == 0 {
            return Err(SfcError::Input("lattice dimensions must be positive".into()));
        }
        let n = rows * cols;
        let mut neighbors = vec![Vec::with_capacity(4); n];
        for r in 0..rows {
            for c in 0..cols {
                let s = r * cols + c;
                if r > 0 {
                    neighbors[s].push(s - cols);
                }
                if c > 0 {
                    neighbors[s].push(s - 1);
                }
                if c + 1 < cols {
                    neighbors[s].push(s + 1);
                }
                if r + 1 < rows {
                    neighbors[s].push(s + cols);
                }
            }
        }
        Ok(Self { rows, cols, neighbors })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    /// Total number of locations, `rows * cols`.
    pub fn n(&self) -> usize {
        self.rows * self.cols
    }

    pub fn index(&self, row: usize, col: usize) -> usize {
        debug_assert!(row < self.rows && col < self.cols);
        row * self.cols + col
    }

    pub fn row_col(&self, s: usize) -> (usize, usize) {
        debug_assert!(s < self.n());
        (s / self.cols, s % self.cols)
    }

    /// Lattice neighbors of `s`, sorted ascending.
    pub fn neighbors(&self, s: usize) -> &[usize] {
        &self.neighbors[s]
    }

    /// Number of lattice neighbors (2, 3, or 4).
    pub fn degree(&self, s: usize) -> usize {
        self.neighbors[s].len()
    }

    fn check_location(&self, s: usize) -> Result<()> {
        if s >= self.n() {
            return Err(SfcError::Input(format!(
                "location id {s} out of range for a {}x{} lattice",
                self.rows, self.cols
            )));
        }
        Ok(())
    }

    /// Shortest-path distance in the 4-neighborhood graph, which on a full
    /// rectangular grid is the Manhattan distance.
    pub fn graph_distance(&self, s1: usize, s2: usize) -> Result<usize> {
        self.check_location(s1)?;
        self.check_location(s2)?;
        let (r1, c1) = self.row_col(s1);
        let (r2, c2) = self.row_col(s2);
        Ok(r1.abs_diff(r2) + c1.abs_diff(c2))
    }

    /// Whether `subset` induces a connected subgraph. Duplicates are not
    /// allowed; the empty set is considered disconnected.
    pub fn is_connected(&self, subset: &[usize]) -> bool {
        if subset.is_empty() {
            return false;
        }
        let n = self.n();
        let mut pos = vec![usize::MAX; n];
        for (i, &s) in subset.iter().enumerate() {
            if s >= n || pos[s] != usize::MAX {
                return false;
            }
            pos[s] = i;
        }
        let mut seen = vec![false; subset.len()];
        let mut stack = vec![subset[0]];
        seen[0] = true;
        let mut count = 1;
        while let Some(s) = stack.pop() {
            for &t in &self.neighbors[s] {
                let i = pos[t];
                if i != usize::MAX && !seen[i] {
                    seen[i] = true;
                    count += 1;
                    stack.push(t);
                }
            }
        }
        count == subset.len()
    }

    /// CAR matrices for one cluster: the within-subset neighbor matrix Q,
    /// the diagonal neighbor-count matrix F, and the spectrum of
    /// F^{-1/2} Q F^{-1/2} which bounds the admissible spatial-dependence
    /// parameter.
    pub fn car_matrices(&self, subset: &[usize]) -> Result<CarMatrices> {
        if subset.len() < 2 {
            return Err(SfcError::DegenerateCluster(format!(
                "CAR matrices need at least 2 locations, got {}",
                subset.len()
            )));
        }
        for &s in subset {
            self.check_location(s)?;
        }
        if !self.is_connected(subset) {
            return Err(SfcError::DegenerateCluster(
                "subset is disconnected or contains duplicates".into(),
            ));
        }
        let n = subset.len();
        let mut pos = vec![usize::MAX; self.n()];
        for (i, &s) in subset.iter().enumerate() {
            pos[s] = i;
        }
        let mut edges = Vec::new();
        let mut f_diag: DVector<f64> = DVector::zeros(n);
        for (i, &s) in subset.iter().enumerate() {
            for &t in &self.neighbors[s] {
                let j = pos[t];
                if j != usize::MAX {
                    f_diag[i] += 1.0;
                    if i < j {
                        edges.push((i, j));
                    }
                }
            }
        }
        // Connectivity with n >= 2 guarantees every within-subset degree >= 1,
        // but keep the guard so F^{-1/2} is always well defined.
        if f_diag.iter().any(|&f| f < 1.0) {
            return Err(SfcError::DegenerateCluster(
                "a member has no within-cluster neighbor".into(),
            ));
        }

        // Spectrum of F^{-1/2} Q F^{-1/2}.
        let mut scaled = DMatrix::zeros(n, n);
        for &(i, j) in &edges {
            let v = 1.0 / (f_diag[i] * f_diag[j]).sqrt();
            scaled[(i, j)] = v;
            scaled[(j, i)] = v;
        }
        let mut rho: Vec<f64> = scaled.symmetric_eigen().eigenvalues.iter().copied().collect();
        rho.sort_by(|a, b| a.partial_cmp(b).expect("eigenvalues are finite"));
        let rho_min = rho[0];
        let rho_max = rho[n - 1];
        if !(rho_min < 0.0 && rho_max > 0.0) {
            return Err(SfcError::DegenerateCluster(format!(
                "unexpected eigenvalue range [{rho_min}, {rho_max}]"
            )));
        }
        let log_det_f = f_diag.iter().map(|&f| f.ln()).sum();
        Ok(CarMatrices {
            subset: subset.to_vec(),
            edges,
            f_diag,
            rho: DVector::from_vec(rho),
            rho_min,
            rho_max,
            log_det_f,
        })
    }
}

/// Q, F, and the eigen-bounds for one cluster subset.
///
/// Member order follows the `subset` vector handed to
/// [`SpatialLattice::car_matrices`]; all vectors and matrices returned by the
/// methods below are indexed in that order.
#[derive(Debug, Clone)]
pub struct CarMatrices {
    subset: Vec<usize>,
    /// Within-subset adjacency as local index pairs (i, j) with i < j.
    edges: Vec<(usize, usize)>,
    f_diag: DVector<f64>,
    /// Full spectrum of F^{-1/2} Q F^{-1/2}, ascending.
    rho: DVector<f64>,
    rho_min: f64,
    rho_max: f64,
    log_det_f: f64,
}

impl CarMatrices {
    /// Cluster size n_r.
    pub fn n(&self) -> usize {
        self.subset.len()
    }

    pub fn subset(&self) -> &[usize] {
        &self.subset
    }

    pub fn f_diag(&self) -> &DVector<f64> {
        &self.f_diag
    }

    pub fn rho_min(&self) -> f64 {
        self.rho_min
    }

    pub fn rho_max(&self) -> f64 {
        self.rho_max
    }

    /// Spectrum of F^{-1/2} Q F^{-1/2}, ascending.
    pub fn rho(&self) -> &DVector<f64> {
        &self.rho
    }

    /// Open interval of spatial-dependence values phi for which F - phi*Q is
    /// positive definite: (1/rho_min, 1/rho_max).
    pub fn phi_support(&self) -> (f64, f64) {
        (1.0 / self.rho_min, 1.0 / self.rho_max)
    }

    /// Whether `phi` lies strictly inside the admissible interval.
    pub fn phi_in_support(&self, phi: f64) -> bool {
        let (lo, hi) = self.phi_support();
        phi > lo && phi < hi
    }

    /// Dense Q (0/1 within-subset neighbor matrix).
    pub fn dense_q(&self) -> DMatrix<f64> {
        let n = self.n();
        let mut q = DMatrix::zeros(n, n);
        for &(i, j) in &self.edges {
            q[(i, j)] = 1.0;
            q[(j, i)] = 1.0;
        }
        q
    }

    /// Dense F - phi*Q.
    pub fn dense_precision(&self, phi: f64) -> DMatrix<f64> {
        let n = self.n();
        let mut a = DMatrix::zeros(n, n);
        for i in 0..n {
            a[(i, i)] = self.f_diag[i];
        }
        for &(i, j) in &self.edges {
            a[(i, j)] = -phi;
            a[(j, i)] = -phi;
        }
        a
    }

    /// log |F - phi*Q| via the stored spectrum:
    /// log|F| + sum_i log(1 - phi*rho_i). Requires phi strictly inside the
    /// support; outside it the determinant is not positive and the result is
    /// NaN.
    pub fn log_det_precision(&self, phi: f64) -> f64 {
        let mut acc = self.log_det_f;
        for &r in self.rho.iter() {
            acc += (1.0 - phi * r).ln();
        }
        acc
    }

    /// (F - phi*Q) v without forming the matrix.
    pub fn apply_precision(&self, phi: f64, v: &DVector<f64>) -> DVector<f64> {
        let mut out = DVector::zeros(self.n());
        for i in 0..self.n() {
            out[i] = self.f_diag[i] * v[i];
        }
        for &(i, j) in &self.edges {
            out[i] -= phi * v[j];
            out[j] -= phi * v[i];
        }
        out
    }

    /// v' Q v.
    pub fn quad_q(&self, v: &DVector<f64>) -> f64 {
        2.0 * self.edges.iter().map(|&(i, j)| v[i] * v[j]).sum::<f64>()
    }

    /// v' (F - phi*Q) v.
    pub fn quad_precision(&self, phi: f64, v: &DVector<f64>) -> f64 {
        let mut acc = 0.0;
        for i in 0..self.n() {
            acc += self.f_diag[i] * v[i] * v[i];
        }
        acc - phi * self.quad_q(v)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn bfs_distance(lat: &SpatialLattice, s1: usize, s2: usize) -> usize {
        let mut dist = vec![usize::MAX; lat.n()];
        dist[s1] = 0;
        let mut queue = std::collections::VecDeque::from([s1]);
        while let Some(s) = queue.pop_front() {
            if s == s2 {
                return dist[s];
            }
            for &t in lat.neighbors(s) {
                if dist[t] == usize::MAX {
                    dist[t] = dist[s] + 1;
                    queue.push_back(t);
                }
            }
        }
        unreachable!("grid is connected")
    }

    #[test]
    fn distance_identity_and_example() {
        let lat = SpatialLattice::new(18, 24).unwrap();
        let s = lat.index(4, 9);
        assert_eq!(lat.graph_distance(s, s).unwrap(), 0);
        // (1,1) vs (3,4): 2 + 3 = 5.
        let a = lat.index(1, 1);
        let b = lat.index(3, 4);
        assert_eq!(lat.graph_distance(a, b).unwrap(), 5);
        assert_eq!(lat.graph_distance(b, a).unwrap(), 5);
        assert!(lat.graph_distance(0, lat.n()).is_err());
    }

    #[test]
    fn distance_matches_breadth_first_search_on_5x5() {
        let lat = SpatialLattice::new(5, 5).unwrap();
        for s1 in 0..lat.n() {
            for s2 in 0..lat.n() {
                let d = lat.graph_distance(s1, s2).unwrap();
                assert_eq!(d, bfs_distance(&lat, s1, s2));
                assert_eq!(d == 1, lat.neighbors(s1).contains(&s2));
            }
        }
    }

    #[test]
    fn distance_triangle_inequality() {
        let lat = SpatialLattice::new(4, 6).unwrap();
        for a in 0..lat.n() {
            for b in 0..lat.n() {
                for c in 0..lat.n() {
                    let ab = lat.graph_distance(a, b).unwrap();
                    let bc = lat.graph_distance(b, c).unwrap();
                    let ac = lat.graph_distance(a, c).unwrap();
                    assert!(ac <= ab + bc);
                }
            }
        }
    }

    #[test]
    fn degrees_are_two_three_or_four() {
        let lat = SpatialLattice::new(3, 4).unwrap();
        for s in 0..lat.n() {
            assert!(matches!(lat.degree(s), 2..=4));
        }
        assert_eq!(lat.degree(0), 2);
        assert_eq!(lat.degree(1), 3);
        assert_eq!(lat.degree(lat.index(1, 1)), 4);
    }

    #[test]
    fn two_adjacent_cells() {
        let lat = SpatialLattice::new(9, 9).unwrap();
        let car = lat.car_matrices(&[0, 1]).unwrap();
        assert_eq!(car.dense_q(), DMatrix::from_row_slice(2, 2, &[0.0, 1.0, 1.0, 0.0]));
        assert_eq!(car.f_diag(), &DVector::from_vec(vec![1.0, 1.0]));
        assert_relative_eq!(car.rho_min(), -1.0, epsilon = 1e-12);
        assert_relative_eq!(car.rho_max(), 1.0, epsilon = 1e-12);
        let (lo, hi) = car.phi_support();
        assert_relative_eq!(lo, -1.0, epsilon = 1e-12);
        assert_relative_eq!(hi, 1.0, epsilon = 1e-12);
    }

    #[test]
    fn path_of_three_cells() {
        let lat = SpatialLattice::new(1, 3).unwrap();
        let car = lat.car_matrices(&[0, 1, 2]).unwrap();
        let rho = car.rho();
        assert_relative_eq!(rho[0], -1.0, epsilon = 1e-12);
        assert_relative_eq!(rho[1], 0.0, epsilon = 1e-12);
        assert_relative_eq!(rho[2], 1.0, epsilon = 1e-12);
        // F - phi*Q stays positive definite across the interior.
        let (lo, hi) = car.phi_support();
        for k in 1..=10 {
            let phi = lo + (hi - lo) * k as f64 / 11.0;
            assert!(car.dense_precision(phi).cholesky().is_some(), "phi = {phi}");
        }
    }

    #[test]
    fn full_3x3_block() {
        let lat = SpatialLattice::new(3, 3).unwrap();
        let subset: Vec<usize> = (0..9).collect();
        let car = lat.car_matrices(&subset).unwrap();
        assert!(car.rho_max() <= 1.0 + 1e-10);
        assert!(car.rho_min() >= -1.0 - 1e-10);
        let (lo, hi) = car.phi_support();
        for k in 1..=20 {
            let phi = lo + (hi - lo) * k as f64 / 21.0;
            assert!(car.dense_precision(phi).cholesky().is_some(), "phi = {phi}");
        }
        // At the upper endpoint the matrix is singular: Cholesky must fail
        // (or the smallest pivot must be ~0 within tolerance).
        let at_edge = car.dense_precision(hi);
        if let Some(chol) = at_edge.cholesky() {
            let min_pivot = chol.l().diagonal().iter().fold(f64::MAX, |a, &b| a.min(b));
            assert!(min_pivot * min_pivot < 1e-8);
        }
    }

    #[test]
    fn degenerate_subsets_are_rejected() {
        let lat = SpatialLattice::new(3, 3).unwrap();
        assert!(lat.car_matrices(&[4]).is_err());
        // Two opposite corners are not adjacent.
        assert!(lat.car_matrices(&[0, 8]).is_err());
        // Duplicates.
        assert!(lat.car_matrices(&[0, 0, 1]).is_err());
    }

    #[test]
    fn spectrum_matches_dense_determinant() {
        let lat = SpatialLattice::new(3, 3).unwrap();
        let subset = vec![0, 1, 2, 4, 5, 7];
        let car = lat.car_matrices(&subset).unwrap();
        let (lo, hi) = car.phi_support();
        for k in 1..=7 {
            let phi = lo + (hi - lo) * k as f64 / 8.0;
            let dense = car.dense_precision(phi);
            let chol = dense.clone().cholesky().unwrap();
            let logdet_dense = 2.0 * chol.l().diagonal().iter().map(|d| d.ln()).sum::<f64>();
            assert_relative_eq!(car.log_det_precision(phi), logdet_dense, epsilon = 1e-9);
            // Matrix-free application agrees with the dense product.
            let v = DVector::from_fn(car.n(), |i, _| (i as f64 * 0.7 + 0.3).sin());
            assert_relative_eq!(car.apply_precision(phi, &v), &dense * &v, epsilon = 1e-12);
            assert_relative_eq!(
                car.quad_precision(phi, &v),
                (&dense * &v).dot(&v),
                epsilon = 1e-10
            );
        }
    }
}
