//! Performance metrics, run filtering and the rank statistics used to compare
//! block rankings across repeated runs.

use serde::{Deserialize, Serialize};
use statrs::function::erf::erfc;
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum StatsError {
    #[error("empty input")]
    Empty,
    #[error("length mismatch: {left} vs {right}")]
    LengthMismatch { left: usize, right: usize },
    #[error("inter-quartile range of the targets is zero")]
    ZeroIqr,
    #[error("every run was excluded")]
    AllRunsExcluded,
    #[error("need at least 2 runs, got {0}")]
    TooFewRuns(usize),
    #[error("rank correlation undefined for a constant vector")]
    ConstantVector,
}

// ---------------------------------------------------------------------------
// Descriptive helpers
// ---------------------------------------------------------------------------

pub fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

/// Sample standard deviation; 0 for fewer than two values.
pub fn std_dev(xs: &[f64]) -> f64 {
    if xs.len() < 2 {
        return 0.0;
    }
    let m = mean(xs);
    (xs.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (xs.len() - 1) as f64).sqrt()
}

/// Linearly interpolated quantile (R type 7 / numpy default).
pub fn quantile(xs: &[f64], q: f64) -> f64 {
    let mut sorted = xs.to_vec();
    sorted.sort_by(f64::total_cmp);
    let pos = q * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (pos - lo as f64) * (sorted[hi] - sorted[lo])
}

pub fn median(xs: &[f64]) -> f64 {
    quantile(xs, 0.5)
}

// ---------------------------------------------------------------------------
// Performance
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Task {
    Regression,
    BinaryClassification,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub r2: Option<f64>,
    pub rmse: Option<f64>,
    pub rmse_iqr: Option<f64>,
    pub accuracy: Option<f64>,
    pub f1: Option<f64>,
}

impl Metrics {
    /// The metric used to filter runs: R² for regression, accuracy otherwise.
    pub fn primary(&self) -> f64 {
        self.r2.or(self.accuracy).unwrap_or(f64::NAN)
    }
}

/// `1 - SS_res / SS_tot`.
pub fn r2_score(targets: &[f64], predictions: &[f64]) -> f64 {
    let m = mean(targets);
    let ss_res: f64 = targets.iter().zip(predictions).map(|(t, p)| (t - p) * (t - p)).sum();
    let ss_tot: f64 = targets.iter().map(|t| (t - m) * (t - m)).sum();
    1.0 - ss_res / ss_tot
}

pub fn rmse(targets: &[f64], predictions: &[f64]) -> f64 {
    (targets.iter().zip(predictions).map(|(t, p)| (t - p) * (t - p)).sum::<f64>() / targets.len() as f64).sqrt()
}

/// Metrics on a test set. Regression reports R², RMSE and RMSE / IQR(targets);
/// classification thresholds probabilities at 0.5 for accuracy and F1.
pub fn performance_metrics(task: Task, targets: &[f64], predictions: &[f64]) -> Result<Metrics, StatsError> {
    if targets.is_empty() {
        return Err(StatsError::Empty);
    }
    if targets.len() != predictions.len() {
        return Err(StatsError::LengthMismatch {
            left: targets.len(),
            right: predictions.len(),
        });
    }
    match task {
        Task::Regression => {
            let iqr = quantile(targets, 0.75) - quantile(targets, 0.25);
            if !(iqr > 0.0) {
                return Err(StatsError::ZeroIqr);
            }
            let e = rmse(targets, predictions);
            Ok(Metrics {
                r2: Some(r2_score(targets, predictions)),
                rmse: Some(e),
                rmse_iqr: Some(e / iqr),
                accuracy: None,
                f1: None,
            })
        }
        Task::BinaryClassification => {
            let (mut tp, mut fp, mut fn_, mut correct) = (0usize, 0usize, 0usize, 0usize);
            for (&t, &p) in targets.iter().zip(predictions) {
                let pred = p >= 0.5;
                let truth = t >= 0.5;
                correct += usize::from(pred == truth);
                tp += usize::from(pred && truth);
                fp += usize::from(pred && !truth);
                fn_ += usize::from(!pred && truth);
            }
            let f1 = if tp == 0 {
                0.0
            } else {
                2.0 * tp as f64 / (2 * tp + fp + fn_) as f64
            };
            Ok(Metrics {
                r2: None,
                rmse: None,
                rmse_iqr: None,
                accuracy: Some(correct as f64 / targets.len() as f64),
                f1: Some(f1),
            })
        }
    }
}

// ---------------------------------------------------------------------------
// Run filtering
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Exclusion {
    Outlier,
    BelowThreshold,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum OutlierPolicy {
    /// Exclude runs below `Q1 - 1.5 IQR` of the primary metric.
    LowIqr,
    None,
}

/// Flags runs by their primary performance metric: first low-side 1.5·IQR outliers,
/// then the remaining runs below `threshold`. Each run gets at most one flag.
pub fn filter_runs(
    primary: &[f64],
    threshold: f64,
    policy: OutlierPolicy,
) -> Result<Vec<Option<Exclusion>>, StatsError> {
    if primary.is_empty() {
        return Err(StatsError::Empty);
    }
    let fence = match policy {
        OutlierPolicy::LowIqr => {
            let q1 = quantile(primary, 0.25);
            let q3 = quantile(primary, 0.75);
            q1 - 1.5 * (q3 - q1)
        }
        OutlierPolicy::None => f64::NEG_INFINITY,
    };
    let flags: Vec<Option<Exclusion>> = primary
        .iter()
        .map(|&v| {
            if v.is_nan() || v < fence {
                Some(Exclusion::Outlier)
            } else if v < threshold {
                Some(Exclusion::BelowThreshold)
            } else {
                None
            }
        })
        .collect();
    if flags.iter().all(Option::is_some) {
        return Err(StatsError::AllRunsExcluded);
    }
    Ok(flags)
}

// ---------------------------------------------------------------------------
// Ranks
// ---------------------------------------------------------------------------

/// 1-based ranks with ties sharing their average rank.
pub fn average_ranks(xs: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..xs.len()).collect();
    idx.sort_by(|&a, &b| xs[a].total_cmp(&xs[b]));
    let mut ranks = vec![0.0; xs.len()];
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && xs[idx[j + 1]] == xs[idx[i]] {
            j += 1;
        }
        let r = (i + j) as f64 / 2.0 + 1.0;
        for &k in &idx[i..=j] {
            ranks[k] = r;
        }
        i = j + 1;
    }
    ranks
}

/// Spearman's ρ: Pearson correlation of average ranks.
pub fn spearman(a: &[f64], b: &[f64]) -> Result<f64, StatsError> {
    if a.len() != b.len() {
        return Err(StatsError::LengthMismatch {
            left: a.len(),
            right: b.len(),
        });
    }
    if a.len() < 2 {
        return Err(StatsError::TooFewRuns(a.len()));
    }
    let ra = average_ranks(a);
    let rb = average_ranks(b);
    let (ma, mb) = (mean(&ra), mean(&rb));
    let mut cov = 0.0;
    let mut va = 0.0;
    let mut vb = 0.0;
    for (x, y) in ra.iter().zip(&rb) {
        cov += (x - ma) * (y - mb);
        va += (x - ma) * (x - ma);
        vb += (y - mb) * (y - mb);
    }
    if va == 0.0 || vb == 0.0 {
        return Err(StatsError::ConstantVector);
    }
    Ok((cov / (va * vb).sqrt()).clamp(-1.0, 1.0))
}

// ---------------------------------------------------------------------------
// Wilcoxon signed-rank test
// ---------------------------------------------------------------------------

/// Largest number of non-zero differences handled by the exact null distribution.
pub const WILCOXON_EXACT_MAX: usize = 12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum WilcoxonMode {
    Exact,
    Normal,
    /// Every paired difference was zero; reported as `p = 1`.
    NoDifferences,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WilcoxonResult {
    /// Sum of ranks of the positive differences `a - b`.
    pub w_plus: f64,
    pub n_nonzero: usize,
    pub p_value: f64,
    pub mode: WilcoxonMode,
}

/// Two-sided Wilcoxon signed-rank test on paired samples.
///
/// Zero differences are dropped and tied `|d|` share average ranks. Up to
/// [`WILCOXON_EXACT_MAX`] non-zero differences the p-value comes from the exact
/// null distribution of `W⁺` given the observed ranks; beyond that from the normal
/// approximation with tie and continuity correction. `p = min(1, 2 min(P(W⁺ ≤ w), P(W⁺ ≥ w)))`.
pub fn wilcoxon_signed_rank(a: &[f64], b: &[f64]) -> Result<WilcoxonResult, StatsError> {
    if a.len() != b.len() {
        return Err(StatsError::LengthMismatch {
            left: a.len(),
            right: b.len(),
        });
    }
    let diffs: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).filter(|d| *d != 0.0).collect();
    let n = diffs.len();
    if n == 0 {
        return Ok(WilcoxonResult {
            w_plus: 0.0,
            n_nonzero: 0,
            p_value: 1.0,
            mode: WilcoxonMode::NoDifferences,
        });
    }
    let abs: Vec<f64> = diffs.iter().map(|d| d.abs()).collect();
    let ranks = average_ranks(&abs);
    let w_plus: f64 = diffs.iter().zip(&ranks).filter(|(d, _)| **d > 0.0).map(|(_, r)| r).sum();

    let (p, mode) = if n <= WILCOXON_EXACT_MAX {
        (exact_p(&ranks, w_plus), WilcoxonMode::Exact)
    } else {
        (normal_p(&ranks, w_plus), WilcoxonMode::Normal)
    };
    Ok(WilcoxonResult {
        w_plus,
        n_nonzero: n,
        p_value: p.clamp(f64::MIN_POSITIVE, 1.0),
        mode,
    })
}

/// Exact two-sided p-value by counting subset sums of the (doubled, hence integer) ranks.
fn exact_p(ranks: &[f64], w_plus: f64) -> f64 {
    let doubled: Vec<usize> = ranks.iter().map(|r| (2.0 * r).round() as usize).collect();
    let total: usize = doubled.iter().sum();
    // counts[s] = number of sign assignments whose doubled W⁺ equals s.
    let mut counts = vec![0u64; total + 1];
    counts[0] = 1;
    for &r in &doubled {
        for s in (r..=total).rev() {
            counts[s] += counts[s - r];
        }
    }
    let w = (2.0 * w_plus).round() as usize;
    let all = 2f64.powi(ranks.len() as i32);
    let lower: u64 = counts[..=w].iter().sum();
    let upper: u64 = counts[w..].iter().sum();
    (2.0 * lower.min(upper) as f64 / all).min(1.0)
}

fn normal_p(ranks: &[f64], w_plus: f64) -> f64 {
    let n = ranks.len() as f64;
    let expected = n * (n + 1.0) / 4.0;
    // Tie correction: Σ (t³ - t) / 48 over groups of equal |d|.
    let mut sorted = ranks.to_vec();
    sorted.sort_by(f64::total_cmp);
    let mut tie_term = 0.0;
    let mut i = 0;
    while i < sorted.len() {
        let mut j = i;
        while j + 1 < sorted.len() && sorted[j + 1] == sorted[i] {
            j += 1;
        }
        let t = (j - i + 1) as f64;
        tie_term += t * t * t - t;
        i = j + 1;
    }
    let var = n * (n + 1.0) * (2.0 * n + 1.0) / 24.0 - tie_term / 48.0;
    if var <= 0.0 {
        return 1.0;
    }
    let diff = w_plus - expected;
    let corrected = (diff.abs() - 0.5).max(0.0);
    let z = corrected / var.sqrt();
    // Two-sided: 2 (1 - Φ(z)) = erfc(z / √2).
    erfc(z / std::f64::consts::SQRT_2).min(1.0)
}

/// `min(1, p · m)` for a family of `m` comparisons.
pub fn bonferroni(p: f64, comparisons: usize) -> f64 {
    (p * comparisons as f64).min(1.0)
}

// ---------------------------------------------------------------------------
// Tie groups
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TieGroupRanking {
    /// Groups of block indices, most important first.
    pub groups: Vec<Vec<usize>>,
    pub alpha: f64,
    pub correction: String,
    /// Bonferroni-corrected p-value between each pair of adjacent blocks in the sorted order.
    pub adjacent_p_values: Vec<f64>,
    /// False when too few runs were available for testing; every block is then its own group.
    pub tested: bool,
}

impl TieGroupRanking {
    /// Index of the group containing `block`.
    pub fn group_of(&self, block: usize) -> Option<usize> {
        self.groups.iter().position(|g| g.contains(&block))
    }
}

/// Blocks sorted by descending median score (ties broken by mean, then index).
pub fn order_blocks(scores_by_run: &[Vec<f64>]) -> Vec<usize> {
    let n_blocks = scores_by_run.first().map_or(0, Vec::len);
    let columns: Vec<Vec<f64>> = (0..n_blocks)
        .map(|b| scores_by_run.iter().map(|run| run[b]).collect())
        .collect();
    let med: Vec<f64> = columns.iter().map(|c| median(c)).collect();
    let avg: Vec<f64> = columns.iter().map(|c| mean(c)).collect();
    let mut order: Vec<usize> = (0..n_blocks).collect();
    order.sort_by(|&x, &y| {
        med[y]
            .total_cmp(&med[x])
            .then(avg[y].total_cmp(&avg[x]))
            .then(x.cmp(&y))
    });
    order
}

/// Splits the median-sorted blocks into tie groups: adjacent blocks stay in the
/// same group while their Bonferroni-corrected Wilcoxon p-value exceeds `alpha`.
/// The correction family is all `B(B-1)/2` block pairs.
///
/// `scores_by_run[r][b]` is block `b`'s (normalized) score in run `r`.
pub fn tie_group_ranking(scores_by_run: &[Vec<f64>], alpha: f64) -> Result<TieGroupRanking, StatsError> {
    if scores_by_run.len() < 2 {
        return Err(StatsError::TooFewRuns(scores_by_run.len()));
    }
    let order = order_blocks(scores_by_run);
    let n_blocks = order.len();
    let family = n_blocks * n_blocks.saturating_sub(1) / 2;
    let column = |b: usize| -> Vec<f64> { scores_by_run.iter().map(|run| run[b]).collect() };

    let mut groups: Vec<Vec<usize>> = Vec::new();
    let mut adjacent_p_values = Vec::with_capacity(n_blocks.saturating_sub(1));
    for (k, &b) in order.iter().enumerate() {
        if k == 0 {
            groups.push(vec![b]);
            continue;
        }
        let prev = order[k - 1];
        let p = wilcoxon_signed_rank(&column(prev), &column(b))?.p_value;
        let corrected = bonferroni(p, family);
        adjacent_p_values.push(corrected);
        if corrected > alpha {
            groups.last_mut().expect("first group exists").push(b);
        } else {
            groups.push(vec![b]);
        }
    }
    Ok(TieGroupRanking {
        groups,
        alpha,
        correction: "bonferroni".into(),
        adjacent_p_values,
        tested: true,
    })
}

/// Ranking for a single run: blocks sorted by score, no significance testing.
pub fn untested_ranking(scores: &[f64], alpha: f64) -> TieGroupRanking {
    let order = order_blocks(&[scores.to_vec()]);
    TieGroupRanking {
        groups: order.into_iter().map(|b| vec![b]).collect(),
        alpha,
        correction: "none".into(),
        adjacent_p_values: Vec::new(),
        tested: false,
    }
}
