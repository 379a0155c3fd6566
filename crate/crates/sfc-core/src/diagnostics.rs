//! Posterior summarization: modal partition, per-location label
//! uncertainty, cluster mean curves with credible bands, coefficient
//! summaries with significance masks, and partition agreement. Every
//! summary canonicalizes labels first, so cluster numbering in the input
//! draws never matters.

use std::collections::HashMap;

use crate::error::{Result, SfcError};
use crate::sampler::PosteriorSample;
use crate::stats;
use crate::wavelet::WaveletBasis;

/// Relabels so clusters appear in order of their smallest member id:
/// location 0's cluster becomes 0, the next unseen cluster becomes 1, and
/// so on.
pub fn canonical_labels(labels: &[usize]) -> Vec<usize> {
    canonical_permutation(labels).0
}

/// Canonical labels together with the permutation taking each original
/// cluster index to its canonical one.
pub fn canonical_permutation(labels: &[usize]) -> (Vec<usize>, Vec<usize>) {
    let d = labels.iter().copied().max().map_or(0, |m| m + 1);
    let mut perm = vec![usize::MAX; d];
    let mut next = 0;
    let mut out = Vec::with_capacity(labels.len());
    for &l in labels {
        if perm[l] == usize::MAX {
            perm[l] = next;
            next += 1;
        }
        out.push(perm[l]);
    }
    (out, perm)
}

/// The most frequent canonicalized partition and the draws supporting it.
pub struct MapPartition {
    pub labels: Vec<usize>,
    /// Number of draws equal to the mode.
    pub support: usize,
    /// Indices into the sample list of the supporting draws.
    pub draws: Vec<usize>,
}

/// Most frequent canonicalized partition; frequency ties go to the
/// partition with the higher average joint log posterior.
pub fn map_partition(samples: &[PosteriorSample]) -> Result<MapPartition> {
    if samples.is_empty() {
        return Err(SfcError::Input("no posterior samples to summarize".into()));
    }
    let mut groups: HashMap<Vec<usize>, Vec<usize>> = HashMap::new();
    for (b, sample) in samples.iter().enumerate() {
        groups.entry(canonical_labels(&sample.labels)).or_default().push(b);
    }
    let score = |draws: &[usize]| {
        let mean_lp =
            draws.iter().map(|&b| samples[b].log_posterior).sum::<f64>() / draws.len() as f64;
        (draws.len(), mean_lp)
    };
    let (labels, draws) = groups
        .into_iter()
        .max_by(|(_, a), (_, b)| {
            let (ca, la) = score(a);
            let (cb, lb) = score(b);
            ca.cmp(&cb).then(la.partial_cmp(&lb).unwrap_or(std::cmp::Ordering::Equal))
        })
        .expect("at least one group");
    Ok(MapPartition { support: draws.len(), labels, draws })
}

/// Per-location 1 - max_r P(label = r), estimated over all draws after
/// canonicalization.
pub fn label_uncertainty(samples: &[PosteriorSample]) -> Result<Vec<f64>> {
    if samples.is_empty() {
        return Err(SfcError::Input("no posterior samples to summarize".into()));
    }
    let n = samples[0].labels.len();
    let mut counts: Vec<HashMap<usize, usize>> = vec![HashMap::new(); n];
    for sample in samples {
        if sample.labels.len() != n {
            return Err(SfcError::Input("samples disagree on location count".into()));
        }
        for (s, &l) in canonical_labels(&sample.labels).iter().enumerate() {
            *counts[s].entry(l).or_insert(0) += 1;
        }
    }
    let total = samples.len() as f64;
    Ok(counts
        .iter()
        .map(|c| 1.0 - c.values().copied().max().unwrap_or(0) as f64 / total)
        .collect())
}

/// Adjusted-for-chance agreement between two labelings of the same
/// locations; 1 for identical partitions up to relabeling.
pub fn adjusted_rand_index(a: &[usize], b: &[usize]) -> f64 {
    assert_eq!(a.len(), b.len(), "labelings must cover the same locations");
    let n = a.len();
    if n == 0 {
        return 1.0;
    }
    let mut table: HashMap<(usize, usize), f64> = HashMap::new();
    let mut rows: HashMap<usize, f64> = HashMap::new();
    let mut cols: HashMap<usize, f64> = HashMap::new();
    for (&x, &y) in a.iter().zip(b) {
        *table.entry((x, y)).or_insert(0.0) += 1.0;
        *rows.entry(x).or_insert(0.0) += 1.0;
        *cols.entry(y).or_insert(0.0) += 1.0;
    }
    let choose2 = |x: f64| x * (x - 1.0) / 2.0;
    let index: f64 = table.values().map(|&v| choose2(v)).sum();
    let row_sum: f64 = rows.values().map(|&v| choose2(v)).sum();
    let col_sum: f64 = cols.values().map(|&v| choose2(v)).sum();
    let expected = row_sum * col_sum / choose2(n as f64);
    let max = 0.5 * (row_sum + col_sum);
    if (max - expected).abs() < 1e-12 {
        return 1.0;
    }
    (index - expected) / (max - expected)
}

/// Pointwise summary of one curve in the data domain.
#[derive(Debug, Clone)]
pub struct CurveBand {
    pub cluster: usize,
    pub mean: Vec<f64>,
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
}

fn band_from_draws(cluster: usize, draws: &[Vec<f64>], t: usize) -> CurveBand {
    let mut mean = vec![0.0; t];
    let mut lower = vec![0.0; t];
    let mut upper = vec![0.0; t];
    for tau in 0..t {
        let mut xs: Vec<f64> = draws.iter().map(|c| c[tau]).collect();
        xs.sort_by(|a, b| a.partial_cmp(b).expect("finite curve values"));
        mean[tau] = xs.iter().sum::<f64>() / xs.len() as f64;
        lower[tau] = stats::quantile(&xs, 0.025);
        upper[tau] = stats::quantile(&xs, 0.975);
    }
    CurveBand { cluster, mean, lower, upper }
}

/// For each draw supporting the modal partition, finds the original index
/// of canonical cluster `r`.
fn original_index(sample: &PosteriorSample, canonical_r: usize) -> Option<usize> {
    let (_, perm) = canonical_permutation(&sample.labels);
    perm.iter().position(|&p| p == canonical_r)
}

/// Cluster mean curves with pointwise mean and 2.5/97.5% bands in the
/// data domain, over the draws whose partition equals the mode.
pub fn cluster_mean_bands(
    samples: &[PosteriorSample],
    map: &MapPartition,
    basis: &WaveletBasis,
) -> Result<Vec<CurveBand>> {
    let t = basis.t();
    let d = map.labels.iter().copied().max().map_or(0, |m| m + 1);
    let mut bands = Vec::with_capacity(d);
    for r in 0..d {
        let mut draws = Vec::with_capacity(map.draws.len());
        for &b in &map.draws {
            let sample = &samples[b];
            let orig = original_index(sample, r).ok_or_else(|| {
                SfcError::Input(format!("modal cluster {r} missing from a supporting draw"))
            })?;
            let curve = basis.inverse(&sample.clusters[orig].mu);
            draws.push(curve.iter().copied().collect::<Vec<f64>>());
        }
        if draws.is_empty() {
            return Err(SfcError::Input("no draws support the modal partition".into()));
        }
        bands.push(band_from_draws(r, &draws, t));
    }
    Ok(bands)
}

/// Pointwise coefficient summary for one (cluster, covariate) pair in the
/// data domain; `significant` flags time points whose equal-tailed 95%
/// interval excludes zero.
#[derive(Debug, Clone)]
pub struct BetaBand {
    pub cluster: usize,
    pub covariate: usize,
    pub mean: Vec<f64>,
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
    pub significant: Vec<bool>,
}

/// Coefficient-curve summaries over the draws supporting the modal
/// partition.
pub fn beta_summary(
    samples: &[PosteriorSample],
    map: &MapPartition,
    basis: &WaveletBasis,
    p: usize,
) -> Result<Vec<BetaBand>> {
    let t = basis.t();
    let d = map.labels.iter().copied().max().map_or(0, |m| m + 1);
    let mut out = Vec::with_capacity(d * p);
    for r in 0..d {
        for i in 0..p {
            let mut draws = Vec::with_capacity(map.draws.len());
            for &b in &map.draws {
                let sample = &samples[b];
                let orig = original_index(sample, r).ok_or_else(|| {
                    SfcError::Input(format!("modal cluster {r} missing from a supporting draw"))
                })?;
                let flat = &sample.clusters[orig].beta;
                let row: Vec<f64> = flat[i * t..(i + 1) * t].to_vec();
                draws.push(basis.inverse(&row).iter().copied().collect::<Vec<f64>>());
            }
            if draws.is_empty() {
                return Err(SfcError::Input("no draws support the modal partition".into()));
            }
            let band = band_from_draws(r, &draws, t);
            let significant =
                (0..t).map(|tau| band.lower[tau] > 0.0 || band.upper[tau] < 0.0).collect();
            out.push(BetaBand {
                cluster: r,
                covariate: i,
                mean: band.mean,
                lower: band.lower,
                upper: band.upper,
                significant,
            });
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sampler::{PosteriorSample, SampleCluster};
    use crate::wavelet::WaveletFamily;

    fn sample(labels: Vec<usize>, log_posterior: f64, clusters: Vec<SampleCluster>) -> PosteriorSample {
        PosteriorSample {
            iter: 0,
            alpha: 0.5,
            labels,
            log_marginal_total: 0.0,
            log_posterior,
            clusters,
        }
    }

    fn cluster(center: usize, mu: Vec<f64>, beta: Vec<f64>) -> SampleCluster {
        SampleCluster { center, sigma2: 1.0, beta, mu }
    }

    #[test]
    fn canonicalization_orders_by_first_appearance() {
        assert_eq!(canonical_labels(&[2, 2, 0, 1, 0]), vec![0, 0, 1, 2, 1]);
        let (labels, perm) = canonical_permutation(&[1, 1, 0]);
        assert_eq!(labels, vec![0, 0, 1]);
        assert_eq!(perm, vec![1, 0]);
    }

    #[test]
    fn permuted_copies_collapse_to_one_mode() {
        let a = sample(vec![0, 0, 1, 1], 1.0, vec![]);
        let b = sample(vec![1, 1, 0, 0], 2.0, vec![]);
        let c = sample(vec![0, 1, 0, 1], 0.0, vec![]);
        let map = map_partition(&[a, b, c]).unwrap();
        assert_eq!(map.labels, vec![0, 0, 1, 1]);
        assert_eq!(map.support, 2);
        assert_eq!(map.draws, vec![0, 1]);
    }

    #[test]
    fn frequency_ties_break_toward_higher_posterior() {
        let a = sample(vec![0, 0, 1, 1], -5.0, vec![]);
        let b = sample(vec![0, 1, 1, 0], -1.0, vec![]);
        let map = map_partition(&[a, b]).unwrap();
        assert_eq!(map.labels, vec![0, 1, 1, 0]);
    }

    #[test]
    fn uncertainty_is_zero_only_at_unanimous_locations() {
        let a = sample(vec![0, 0, 1, 1], 0.0, vec![]);
        let b = sample(vec![1, 1, 0, 0], 0.0, vec![]);
        let c = sample(vec![0, 0, 0, 1], 0.0, vec![]);
        let u = label_uncertainty(&[a, b, c]).unwrap();
        assert!(u[0].abs() < 1e-12);
        assert!(u[1].abs() < 1e-12);
        assert!((u[2] - 1.0 / 3.0).abs() < 1e-12);
        assert!(u[3].abs() < 1e-12);
    }

    #[test]
    fn rand_index_matches_contingency_oracle() {
        assert_eq!(adjusted_rand_index(&[0, 0, 1, 1], &[1, 1, 0, 0]), 1.0);
        assert_eq!(adjusted_rand_index(&[0, 0, 0, 0], &[0, 0, 0, 0]), 1.0);
        // One pair grouped against all singletons on 4 items: the
        // contingency table gives (0 - e) / (h - e) with
        // index = 0 over singleton columns is impossible, so compute by
        // hand: rows {2,1,1}, cols {1,1,1,1}, sum C(n_ij,2) = 0,
        // row_sum = 1, col_sum = 0 -> expected = 0, max = 0.5, ari = 0.
        assert_eq!(adjusted_rand_index(&[0, 0, 1, 2], &[0, 1, 2, 3]), 0.0);
        // Partial agreement oracle, worked through the contingency table:
        // a = (0,0,0,1,1,1), b = (0,0,1,1,2,2): n_ij = {2,1;0,1;0,2} over
        // rows {3,3}, cols {2,2,2}; index = 1+0+0+0+0+1 = 2,
        // row_sum = 6, col_sum = 3, expected = 18/15 = 1.2,
        // max = 4.5, ari = (2-1.2)/(4.5-1.2) = 0.242424...
        let ari = adjusted_rand_index(&[0, 0, 0, 1, 1, 1], &[0, 0, 1, 1, 2, 2]);
        assert!((ari - 0.8 / 3.3).abs() < 1e-12, "{ari}");
    }

    #[test]
    fn bands_are_ordered_and_collapse_for_a_single_draw() {
        let basis = WaveletBasis::new(WaveletFamily::Haar, 4).unwrap();
        let mu = vec![1.0, 0.5, 0.0, -0.5];
        let beta = vec![0.4, 0.0, 0.0, 0.0];
        let s = sample(
            vec![0, 0, 1, 1],
            0.0,
            vec![cluster(0, mu.clone(), beta.clone()), cluster(2, vec![0.0; 4], vec![0.0; 4])],
        );
        let samples = vec![s];
        let map = map_partition(&samples).unwrap();
        let bands = cluster_mean_bands(&samples, &map, &basis).unwrap();
        assert_eq!(bands.len(), 2);
        let expect = basis.inverse(&mu);
        for tau in 0..4 {
            assert!((bands[0].mean[tau] - expect[tau]).abs() < 1e-12);
            assert!((bands[0].lower[tau] - expect[tau]).abs() < 1e-12);
            assert!((bands[0].upper[tau] - expect[tau]).abs() < 1e-12);
        }
        let beta_bands = beta_summary(&samples, &map, &basis, 1).unwrap();
        assert_eq!(beta_bands.len(), 2);
        // A constant scaling coefficient spreads to 0.4/2 = 0.2 everywhere,
        // so the single-draw interval [0.2, 0.2] excludes zero.
        assert!(beta_bands[0].significant.iter().all(|&s| s));
        assert!(beta_bands[1].significant.iter().all(|&s| !s));
    }

    #[test]
    fn summaries_ignore_cluster_numbering() {
        let basis = WaveletBasis::new(WaveletFamily::Haar, 2).unwrap();
        let mu_a = vec![1.0, 0.0];
        let mu_b = vec![-1.0, 0.0];
        let s1 = sample(
            vec![0, 0, 1],
            0.0,
            vec![
                cluster(0, mu_a.clone(), vec![0.0, 0.0]),
                cluster(2, mu_b.clone(), vec![0.0, 0.0]),
            ],
        );
        // Same partition with the cluster ids swapped.
        let s2 = sample(
            vec![1, 1, 0],
            0.0,
            vec![
                cluster(2, mu_b.clone(), vec![0.0, 0.0]),
                cluster(0, mu_a.clone(), vec![0.0, 0.0]),
            ],
        );
        let samples = vec![s1, s2];
        let map = map_partition(&samples).unwrap();
        assert_eq!(map.support, 2);
        let bands = cluster_mean_bands(&samples, &map, &basis).unwrap();
        let expect = basis.inverse(&mu_a);
        for tau in 0..2 {
            assert!((bands[0].mean[tau] - expect[tau]).abs() < 1e-12);
            assert!((bands[0].upper[tau] - bands[0].lower[tau]).abs() < 1e-12);
        }
    }
}
