//! Plug-in mutual information from equidistant 2-D histograms.

use serde::{Deserialize, Serialize};

use super::BirError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum BinRange {
    /// Both axes share the range `[min(z ∪ z'), max(z ∪ z')]`.
    JointMinMax,
    /// Each axis uses its own `[min, max]`.
    PerVariableMinMax,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct MiConfig {
    /// Bins per axis (`ℓ`).
    pub bins: usize,
    pub range: BinRange,
}

impl Default for MiConfig {
    fn default() -> Self {
        Self {
            bins: 10,
            range: BinRange::JointMinMax,
        }
    }
}

impl MiConfig {
    /// `log₂ ℓ`, the largest value the estimate can take.
    pub fn max_bits(&self) -> f64 {
        (self.bins as f64).log2()
    }

    pub fn validate(&self) -> Result<(), BirError> {
        if self.bins < 2 {
            return Err(BirError::InvalidConfig(format!(
                "need at least 2 histogram bins, got {}",
                self.bins
            )));
        }
        Ok(())
    }
}

fn min_max(values: &[f64]) -> (f64, f64) {
    values
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v)))
}

/// Bin indices of `values` over `[lo, hi]`; everything lands in bin 0 when the range is empty.
fn bin_indices(values: &[f64], lo: f64, hi: f64, bins: usize) -> Vec<usize> {
    let span = hi - lo;
    values
        .iter()
        .map(|&v| {
            if span > 0.0 {
                let t = ((v - lo) / span * bins as f64).floor();
                (t as usize).min(bins - 1)
            } else {
                0
            }
        })
        .collect()
}

/// `Σ p(z,z') log₂(p(z,z') / (p(z) p(z')))` over an `ℓ x ℓ` histogram, in bits.
///
/// Empty cells contribute nothing. A constant input yields 0. The result lies in
/// `[0, log₂ ℓ]`; round-off outside that interval is clipped. It is exactly symmetric
/// in its arguments under [`BinRange::JointMinMax`].
pub fn mutual_information(z: &[f64], z2: &[f64], config: &MiConfig) -> Result<f64, BirError> {
    config.validate()?;
    if z.len() != z2.len() {
        return Err(BirError::LengthMismatch {
            left: z.len(),
            right: z2.len(),
        });
    }
    if z.len() < 2 {
        return Err(BirError::TooFewSamples(z.len()));
    }
    if z.iter().chain(z2).any(|v| !v.is_finite()) {
        return Err(BirError::NonFiniteInput);
    }

    let bins = config.bins;
    let (a_lo, a_hi) = min_max(z);
    let (b_lo, b_hi) = min_max(z2);
    let (a_range, b_range) = match config.range {
        BinRange::JointMinMax => {
            let r = (a_lo.min(b_lo), a_hi.max(b_hi));
            (r, r)
        }
        BinRange::PerVariableMinMax => ((a_lo, a_hi), (b_lo, b_hi)),
    };
    let ia = bin_indices(z, a_range.0, a_range.1, bins);
    let ib = bin_indices(z2, b_range.0, b_range.1, bins);

    let mut joint = vec![0u64; bins * bins];
    let mut ca = vec![0u64; bins];
    let mut cb = vec![0u64; bins];
    for (&i, &j) in ia.iter().zip(&ib) {
        joint[i * bins + j] += 1;
        ca[i] += 1;
        cb[j] += 1;
    }
    Ok(mi_from_counts(&joint, &ca, &cb, z.len() as u64).clamp(0.0, config.max_bits()))
}

/// Plug-in MI of a joint count table (row-major, `ca.len() x cb.len()`).
///
/// Terms are summed in sorted order so that transposing the table gives the
/// bitwise-same result.
pub(crate) fn mi_from_counts(joint: &[u64], ca: &[u64], cb: &[u64], n: u64) -> f64 {
    let nf = n as f64;
    let cols = cb.len();
    let mut terms: Vec<f64> = joint
        .iter()
        .enumerate()
        .filter(|(_, &c)| c > 0)
        .map(|(k, &c)| {
            let (i, j) = (k / cols, k % cols);
            let c = c as f64;
            let ratio = (c * nf) / (ca[i] as f64 * cb[j] as f64);
            c / nf * ratio.log2()
        })
        .collect();
    terms.sort_by(f64::total_cmp);
    terms.iter().sum()
}
