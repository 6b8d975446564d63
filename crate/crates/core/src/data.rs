//! Synthetic Gaussian-blob datasets and non-IID federated partitioning.

use std::io::{BufRead, Write};

use rand::seq::SliceRandom;
use rand_distr::{Distribution, Gamma};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::rng::Stream;

/// Distance from the origin to each class mean in [`generate_blobs`].
pub const DEFAULT_SEPARATION: f64 = 4.0;

#[derive(Debug, Error)]
pub enum DataError {
    #[error("infeasible partition: {0}")]
    InfeasiblePartition(String),
    #[error("line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Row-major feature matrix with one class label per row.
#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    features: Vec<f64>,
    feature_dim: usize,
    labels: Vec<usize>,
    num_classes: usize,
}

impl Dataset {
    /// # Panics
    /// If the shapes disagree or a label is out of range.
    pub fn new(features: Vec<f64>, feature_dim: usize, labels: Vec<usize>, num_classes: usize) -> Self {
        assert!(feature_dim > 0, "feature_dim must be positive");
        assert_eq!(features.len(), labels.len() * feature_dim, "feature matrix shape");
        assert!(labels.iter().all(|&l| l < num_classes), "label out of range");
        Self {
            features,
            feature_dim,
            labels,
            num_classes,
        }
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn feature_dim(&self) -> usize {
        self.feature_dim
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.features[i * self.feature_dim..(i + 1) * self.feature_dim]
    }

    pub fn label(&self, i: usize) -> usize {
        self.labels[i]
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn features(&self) -> &[f64] {
        &self.features
    }

    /// New dataset holding the given rows, in the given order.
    pub fn subset(&self, indices: &[usize]) -> Dataset {
        let mut features = Vec::with_capacity(indices.len() * self.feature_dim);
        let mut labels = Vec::with_capacity(indices.len());
        for &i in indices {
            features.extend_from_slice(self.row(i));
            labels.push(self.labels[i]);
        }
        Dataset::new(features, self.feature_dim, labels, self.num_classes)
    }

    /// Splits off the first `count` rows as the first dataset.
    pub fn split_at(&self, count: usize) -> (Dataset, Dataset) {
        let head: Vec<usize> = (0..count).collect();
        let tail: Vec<usize> = (count..self.len()).collect();
        (self.subset(&head), self.subset(&tail))
    }

    pub fn class_histogram(&self) -> Vec<usize> {
        let mut h = vec![0; self.num_classes];
        for &l in &self.labels {
            h[l] += 1;
        }
        h
    }

    /// Text dump: a `# classes dim` header, then one sample per line as the
    /// label followed by its features, space-separated. Floats use Rust's
    /// shortest round-trip formatting.
    pub fn write_text(&self, mut w: impl Write) -> std::io::Result<()> {
        writeln!(w, "# {} {}", self.num_classes, self.feature_dim)?;
        for i in 0..self.len() {
            write!(w, "{}", self.labels[i])?;
            for x in self.row(i) {
                write!(w, " {x}")?;
            }
            writeln!(w)?;
        }
        Ok(())
    }

    pub fn read_text(r: impl BufRead) -> Result<Dataset, DataError> {
        let mut header: Option<(usize, usize)> = None;
        let mut features = Vec::new();
        let mut labels = Vec::new();
        for (idx, line) in r.lines().enumerate() {
            let line = line?;
            let lineno = idx + 1;
            let err = |msg: String| DataError::Parse { line: lineno, msg };
            let trimmed = line.trim();
            if trimmed.is_empty() {
                continue;
            }
            if let Some(rest) = trimmed.strip_prefix('#') {
                if header.is_none() {
                    let parts: Vec<&str> = rest.split_whitespace().collect();
                    if parts.len() != 2 {
                        return Err(err("header must be `# <classes> <dim>`".into()));
                    }
                    let c = parts[0].parse().map_err(|_| err("bad class count".into()))?;
                    let d = parts[1].parse().map_err(|_| err("bad feature dim".into()))?;
                    header = Some((c, d));
                }
                continue;
            }
            let (classes, dim) = header.ok_or_else(|| err("missing header".into()))?;
            let mut fields = trimmed.split_whitespace();
            let label: usize = fields
                .next()
                .and_then(|s| s.parse().ok())
                .ok_or_else(|| err("bad label".into()))?;
            if label >= classes {
                return Err(err(format!("label {label} >= {classes}")));
            }
            let row: Vec<f64> = fields
                .map(|s| s.parse::<f64>().map_err(|_| err(format!("bad feature `{s}`"))))
                .collect::<Result<_, _>>()?;
            if row.len() != dim {
                return Err(err(format!("expected {dim} features, found {}", row.len())));
            }
            labels.push(label);
            features.extend(row);
        }
        let (classes, dim) = header.ok_or(DataError::Parse {
            line: 0,
            msg: "empty input".into(),
        })?;
        Ok(Dataset::new(features, dim, labels, classes))
    }
}

/// Default class means: `separation * e_c` when there are no more classes
/// than dimensions, otherwise random directions of length `separation`.
pub fn class_means(num_classes: usize, feature_dim: usize, separation: f64, rng: &mut Stream) -> Vec<Vec<f64>> {
    (0..num_classes)
        .map(|c| {
            if num_classes <= feature_dim {
                let mut m = vec![0.0; feature_dim];
                m[c] = separation;
                m
            } else {
                let v: Vec<f64> = (0..feature_dim).map(|_| rng.normal()).collect();
                let n = v.iter().map(|x| x * x).sum::<f64>().sqrt().max(f64::MIN_POSITIVE);
                v.into_iter().map(|x| x * separation / n).collect()
            }
        })
        .collect()
}

/// Isotropic Gaussian blobs, one per class, shuffled.
pub fn generate_blobs(
    num_classes: usize,
    feature_dim: usize,
    samples_per_class: usize,
    spread: f64,
    rng: &mut Stream,
) -> Dataset {
    generate_blobs_separated(num_classes, feature_dim, samples_per_class, spread, DEFAULT_SEPARATION, rng)
}

pub fn generate_blobs_separated(
    num_classes: usize,
    feature_dim: usize,
    samples_per_class: usize,
    spread: f64,
    separation: f64,
    rng: &mut Stream,
) -> Dataset {
    assert!(num_classes >= 1 && feature_dim >= 1 && samples_per_class >= 1);
    let means = class_means(num_classes, feature_dim, separation, rng);
    generate_blobs_with_means(&means, samples_per_class, spread, rng)
}

pub fn generate_blobs_with_means(
    means: &[Vec<f64>],
    samples_per_class: usize,
    spread: f64,
    rng: &mut Stream,
) -> Dataset {
    let num_classes = means.len();
    let dim = means[0].len();
    let mut order: Vec<usize> = (0..num_classes * samples_per_class).collect();
    order.shuffle(rng);
    let mut features = vec![0.0; order.len() * dim];
    let mut labels = vec![0; order.len()];
    // Sample k of class k / samples_per_class lands at row order[k].
    for (k, &row) in order.iter().enumerate() {
        let class = k / samples_per_class;
        labels[row] = class;
        for (j, slot) in features[row * dim..(row + 1) * dim].iter_mut().enumerate() {
            *slot = means[class][j] + spread * rng.normal();
        }
    }
    Dataset::new(features, dim, labels, num_classes)
}

/// Knobs for [`partition_non_iid`].
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PartitionConfig {
    pub num_clients: usize,
    /// Dirichlet concentration; small values give strong label skew.
    pub skew_alpha: f64,
    pub count_low_frac: f64,
    pub count_high_frac: f64,
}

impl Default for PartitionConfig {
    fn default() -> Self {
        Self {
            num_clients: 10,
            skew_alpha: 0.5,
            count_low_frac: 0.45,
            count_high_frac: 0.55,
        }
    }
}

impl PartitionConfig {
    /// Inclusive per-client count bounds for `total` samples.
    pub fn count_bounds(&self, total: usize) -> (usize, usize) {
        let mean = total as f64 / self.num_clients as f64;
        // The tolerance keeps 0.55 * 200 = 110.00000000000001 at 110.
        let lo = (self.count_low_frac * mean + 1e-9).floor() as usize;
        let hi = (self.count_high_frac * mean - 1e-9).ceil() as usize;
        (lo.max(1), hi)
    }
}

/// Draws one Dirichlet(alpha, ..., alpha) vector of length `k`.
pub fn sample_dirichlet(alpha: f64, k: usize, rng: &mut Stream) -> Vec<f64> {
    let gamma = Gamma::new(alpha, 1.0).expect("alpha must be positive");
    let draws: Vec<f64> = (0..k).map(|_| gamma.sample(rng)).collect();
    let total: f64 = draws.iter().sum();
    if !(total > 0.0) || !total.is_finite() {
        // Every gamma draw underflowed: fall back to uniform.
        return vec![1.0 / k as f64; k];
    }
    draws.into_iter().map(|d| d / total).collect()
}

/// Largest-remainder apportionment of `total` items by `props`.
fn apportion(total: usize, props: &[f64]) -> Vec<usize> {
    let raw: Vec<f64> = props.iter().map(|p| p * total as f64).collect();
    let mut counts: Vec<usize> = raw.iter().map(|r| r.floor() as usize).collect();
    let mut left = total - counts.iter().sum::<usize>();
    let mut order: Vec<usize> = (0..props.len()).collect();
    order.sort_by(|&a, &b| {
        let fa = raw[a] - raw[a].floor();
        let fb = raw[b] - raw[b].floor();
        fb.total_cmp(&fa).then(a.cmp(&b))
    });
    for &i in order.iter().cycle() {
        if left == 0 {
            break;
        }
        counts[i] += 1;
        left -= 1;
    }
    counts
}

/// Splits `d` across clients with Dirichlet label skew and bounded shard sizes.
///
/// The reference count is `n̄ = d.len() / num_clients`. Each client draws a
/// size uniformly in `[floor(low·n̄), ceil(high·n̄)]` and a label
/// distribution from Dirichlet(alpha). If the bounds admit assigning every
/// sample, sizes are nudged one at a time (least-loaded client up,
/// most-loaded client down) until they sum to `d.len()`; otherwise the
/// samples beyond the drawn total stay unassigned. Shards are disjoint.
pub fn partition_non_iid(
    d: &Dataset,
    cfg: &PartitionConfig,
    rng: &mut Stream,
) -> Result<Vec<Dataset>, DataError> {
    Ok(partition_indices(d, cfg, rng)?
        .iter()
        .map(|idx| d.subset(idx))
        .collect())
}

/// Row indices of each shard of [`partition_non_iid`], sorted ascending.
pub fn partition_indices(
    d: &Dataset,
    cfg: &PartitionConfig,
    rng: &mut Stream,
) -> Result<Vec<Vec<usize>>, DataError> {
    let n = d.len();
    let clients = cfg.num_clients;
    if clients == 0 {
        return Err(DataError::InfeasiblePartition("num_clients must be positive".into()));
    }
    if !(cfg.skew_alpha > 0.0) {
        return Err(DataError::InfeasiblePartition("skew_alpha must be positive".into()));
    }
    if !(cfg.count_low_frac > 0.0 && cfg.count_low_frac <= cfg.count_high_frac) {
        return Err(DataError::InfeasiblePartition(
            "count bounds must satisfy 0 < low <= high".into(),
        ));
    }
    if n < clients {
        return Err(DataError::InfeasiblePartition(format!(
            "{n} samples cannot cover {clients} clients"
        )));
    }
    if clients == 1 {
        return Ok(vec![(0..n).collect()]);
    }
    let (lo, hi) = cfg.count_bounds(n);
    if lo * clients > n {
        return Err(DataError::InfeasiblePartition(format!(
            "{n} samples cannot give {clients} clients at least {lo} each"
        )));
    }

    let mut sizes: Vec<usize> = (0..clients)
        .map(|_| lo + rng.below((hi - lo + 1) as u64) as usize)
        .collect();
    if n <= hi * clients {
        let mut sum: usize = sizes.iter().sum();
        while sum < n {
            let i = (0..clients)
                .filter(|&i| sizes[i] < hi)
                .min_by_key(|&i| (sizes[i], i))
                .expect("capacity remains below the upper bound");
            sizes[i] += 1;
            sum += 1;
        }
        while sum > n {
            let i = (0..clients)
                .filter(|&i| sizes[i] > lo)
                .max_by_key(|&i| (sizes[i], std::cmp::Reverse(i)))
                .expect("slack remains above the lower bound");
            sizes[i] -= 1;
            sum -= 1;
        }
    }

    let k = d.num_classes();
    let mut by_class: Vec<Vec<usize>> = vec![Vec::new(); k];
    for i in 0..n {
        by_class[d.label(i)].push(i);
    }
    for pool in &mut by_class {
        pool.shuffle(rng);
    }

    let mut shards = Vec::with_capacity(clients);
    for &size in &sizes {
        let props = sample_dirichlet(cfg.skew_alpha, k, rng);
        let mut want = apportion(size, &props);
        // Classes that ran dry hand their shortfall to the fullest remaining pools.
        let mut short = 0;
        for c in 0..k {
            if want[c] > by_class[c].len() {
                short += want[c] - by_class[c].len();
                want[c] = by_class[c].len();
            }
        }
        while short > 0 {
            let c = (0..k)
                .filter(|&c| by_class[c].len() > want[c])
                .max_by_key(|&c| (by_class[c].len() - want[c], std::cmp::Reverse(c)))
                .expect("total size never exceeds the dataset");
            want[c] += 1;
            short -= 1;
        }
        let mut idx = Vec::with_capacity(size);
        for c in 0..k {
            let keep = by_class[c].len() - want[c];
            idx.extend(by_class[c].drain(keep..));
        }
        idx.sort_unstable();
        shards.push(idx);
    }
    Ok(shards)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::seeded_rng;

    fn nearest_mean_accuracy(d: &Dataset, means: &[Vec<f64>]) -> f64 {
        let correct = (0..d.len())
            .filter(|&i| {
                let x = d.row(i);
                let best = (0..means.len())
                    .min_by(|&a, &b| {
                        let da: f64 = x.iter().zip(&means[a]).map(|(p, q)| (p - q).powi(2)).sum();
                        let db: f64 = x.iter().zip(&means[b]).map(|(p, q)| (p - q).powi(2)).sum();
                        da.total_cmp(&db)
                    })
                    .unwrap();
                best == d.label(i)
            })
            .count();
        correct as f64 / d.len() as f64
    }

    #[test]
    fn blobs_shape() {
        let d = generate_blobs(8, 32, 250, 1.0, &mut seeded_rng(1, "blobs"));
        assert_eq!(d.len(), 2000);
        assert_eq!(d.feature_dim(), 32);
        assert_eq!(d.class_histogram(), vec![250; 8]);
    }

    #[test]
    fn blobs_are_shuffled_and_deterministic() {
        let a = generate_blobs(4, 3, 20, 1.0, &mut seeded_rng(2, "blobs"));
        let b = generate_blobs(4, 3, 20, 1.0, &mut seeded_rng(2, "blobs"));
        assert_eq!(a, b);
        let sorted = a.labels().windows(2).all(|w| w[0] <= w[1]);
        assert!(!sorted);
    }

    #[test]
    fn zero_spread_collapses_to_means() {
        let mut rng = seeded_rng(3, "blobs");
        let d = generate_blobs(8, 32, 10, 0.0, &mut rng);
        let means = class_means(8, 32, DEFAULT_SEPARATION, &mut rng);
        for i in 0..d.len() {
            assert_eq!(d.row(i), means[d.label(i)].as_slice());
        }
        assert_eq!(nearest_mean_accuracy(&d, &means), 1.0);
    }

    #[test]
    fn two_gaussian_bayes_accuracy() {
        // Means 4 apart, unit spread: the Bayes rule (nearest mean) is correct
        // with probability Phi(2) = 0.977250. Estimator sd over 1000 samples
        // is 0.0047; allow 4 sd.
        let means = vec![vec![-2.0, 0.0], vec![2.0, 0.0]];
        let d = generate_blobs_with_means(&means, 500, 1.0, &mut seeded_rng(4, "bayes"));
        let acc = nearest_mean_accuracy(&d, &means);
        assert!((acc - 0.977_250).abs() < 4.0 * 0.0047, "acc {acc}");
    }

    #[test]
    fn text_round_trip() {
        let d = generate_blobs(3, 4, 5, 1.0, &mut seeded_rng(5, "txt"));
        let mut buf = Vec::new();
        d.write_text(&mut buf).unwrap();
        let back = Dataset::read_text(buf.as_slice()).unwrap();
        assert_eq!(back, d);
    }

    #[test]
    fn text_reader_reports_line_numbers() {
        let err = Dataset::read_text("# 2 2\n0 1.0 2.0\n5 1.0 2.0\n".as_bytes()).unwrap_err();
        assert!(matches!(err, DataError::Parse { line: 3, .. }), "{err}");
        let err = Dataset::read_text("# 2 2\n0 1.0\n".as_bytes()).unwrap_err();
        assert!(matches!(err, DataError::Parse { line: 2, .. }));
    }

    #[test]
    fn partition_ten_clients_within_bounds() {
        let d = generate_blobs(8, 4, 250, 1.0, &mut seeded_rng(6, "blobs"));
        let cfg = PartitionConfig {
            num_clients: 10,
            skew_alpha: 0.5,
            ..Default::default()
        };
        let shards = partition_non_iid(&d, &cfg, &mut seeded_rng(6, "part")).unwrap();
        assert_eq!(shards.len(), 10);
        // n̄ = 200, so at most 1100 of the 2000 samples are assigned.
        assert!(shards.iter().map(Dataset::len).sum::<usize>() <= 1100);
        for s in &shards {
            assert!((90..=110).contains(&s.len()), "{}", s.len());
        }
        let idx = partition_indices(&d, &cfg, &mut seeded_rng(6, "part")).unwrap();
        let mut all: Vec<usize> = idx.concat();
        let before = all.len();
        all.sort_unstable();
        all.dedup();
        assert_eq!(all.len(), before, "shards overlap");
    }

    #[test]
    fn partition_assigns_everything_when_bounds_allow() {
        let d = generate_blobs(4, 2, 100, 1.0, &mut seeded_rng(12, "blobs"));
        let cfg = PartitionConfig {
            num_clients: 8,
            skew_alpha: 0.5,
            count_low_frac: 0.5,
            count_high_frac: 1.5,
        };
        let shards = partition_non_iid(&d, &cfg, &mut seeded_rng(12, "part")).unwrap();
        assert_eq!(shards.iter().map(Dataset::len).sum::<usize>(), 400);
        for s in &shards {
            assert!((25..=75).contains(&s.len()));
        }
    }

    #[test]
    fn partition_single_client_gets_everything() {
        let d = generate_blobs(3, 2, 10, 1.0, &mut seeded_rng(7, "blobs"));
        let cfg = PartitionConfig {
            num_clients: 1,
            ..Default::default()
        };
        let shards = partition_non_iid(&d, &cfg, &mut seeded_rng(7, "part")).unwrap();
        assert_eq!(shards, vec![d]);
    }

    #[test]
    fn partition_infeasible_cases() {
        let d = generate_blobs(2, 2, 2, 1.0, &mut seeded_rng(8, "blobs"));
        let too_many = PartitionConfig {
            num_clients: 5,
            ..Default::default()
        };
        assert!(matches!(
            partition_non_iid(&d, &too_many, &mut seeded_rng(8, "p")),
            Err(DataError::InfeasiblePartition(_))
        ));
        let big = generate_blobs(2, 2, 50, 1.0, &mut seeded_rng(8, "blobs"));
        let above_mean = PartitionConfig {
            num_clients: 4,
            count_low_frac: 1.2,
            count_high_frac: 1.5,
            ..Default::default()
        };
        assert!(partition_non_iid(&big, &above_mean, &mut seeded_rng(8, "p")).is_err());
    }

    #[test]
    fn dirichlet_concentrates_at_large_alpha() {
        // Oracle: at alpha = 1e6 each coordinate has sd ~ 1/(k sqrt(k alpha)),
        // so the TV distance to uniform is ~1e-4; 0.1 is generous.
        let mut rng = seeded_rng(9, "dir");
        let k = 8;
        let max_tv = (0..1000)
            .map(|_| {
                let p = sample_dirichlet(1e6, k, &mut rng);
                assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-12);
                0.5 * p.iter().map(|x| (x - 1.0 / k as f64).abs()).sum::<f64>()
            })
            .fold(0.0, f64::max);
        assert!(max_tv < 0.1, "{max_tv}");
    }

    #[test]
    fn large_alpha_partition_is_near_iid() {
        let d = generate_blobs(8, 2, 250, 1.0, &mut seeded_rng(10, "blobs"));
        let cfg = PartitionConfig {
            num_clients: 4,
            skew_alpha: 1e6,
            ..Default::default()
        };
        let global: Vec<f64> = d.class_histogram().iter().map(|&c| c as f64 / d.len() as f64).collect();
        for s in partition_non_iid(&d, &cfg, &mut seeded_rng(10, "part")).unwrap() {
            let tv: f64 = s
                .class_histogram()
                .iter()
                .zip(&global)
                .map(|(&c, g)| (c as f64 / s.len() as f64 - g).abs())
                .sum::<f64>()
                * 0.5;
            assert!(tv < 0.1, "tv {tv}");
        }
    }

    #[test]
    fn small_alpha_partition_is_skewed() {
        let d = generate_blobs(8, 2, 250, 1.0, &mut seeded_rng(11, "blobs"));
        let cfg = PartitionConfig {
            num_clients: 10,
            skew_alpha: 0.1,
            ..Default::default()
        };
        let shards = partition_non_iid(&d, &cfg, &mut seeded_rng(11, "part")).unwrap();
        let max_share = shards
            .iter()
            .map(|s| *s.class_histogram().iter().max().unwrap() as f64 / s.len() as f64)
            .fold(0.0, f64::max);
        assert!(max_share > 0.3, "{max_share}");
    }

    #[test]
    fn apportion_sums_exactly() {
        assert_eq!(apportion(10, &[0.5, 0.25, 0.25]), vec![5, 3, 2]);
        assert_eq!(apportion(7, &[1.0 / 3.0; 3]).iter().sum::<usize>(), 7);
        assert_eq!(apportion(0, &[0.2, 0.8]), vec![0, 0]);
    }
}
