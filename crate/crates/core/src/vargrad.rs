//! VarGrad feature importance: the variance of input gradients under small
//! Gaussian perturbations of the (standardized) input.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::mann::{BlockSpec, MannError, MannModel, Scratch};
use crate::matrix::Matrix;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EvalSplit {
    Train,
    Test,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct VarGradConfig {
    /// Perturbation standard deviation in standardized-feature units.
    pub noise_std: f64,
    /// Perturbations per sample.
    pub n_draws: usize,
    pub eval_split: EvalSplit,
    pub seed: u64,
}

impl Default for VarGradConfig {
    fn default() -> Self {
        Self {
            noise_std: 0.05,
            n_draws: 20,
            eval_split: EvalSplit::Test,
            seed: 0,
        }
    }
}

impl VarGradConfig {
    pub fn validate(&self) -> Result<(), MannError> {
        if !(self.noise_std > 0.0) || !self.noise_std.is_finite() || self.n_draws < 2 {
            return Err(MannError::InvalidConfig(
                "vargrad needs noise_std > 0 and at least 2 draws".into(),
            ));
        }
        Ok(())
    }
}

/// Per-feature scores `α_n ≥ 0`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureImportance {
    pub scores: Vec<f64>,
    pub config: VarGradConfig,
    pub model_fingerprint: String,
}

impl FeatureImportance {
    /// `feature_index,block,score` rows.
    pub fn to_csv(&self, block_spec: &BlockSpec) -> String {
        let owner = block_spec.feature_owner();
        let mut out = String::from("feature_index,block,score\n");
        for (n, s) in self.scores.iter().enumerate() {
            let block = owner.get(n).map_or("?", |&b| block_spec.block(b).name.as_str());
            out.push_str(&format!("{n},{block},{s:?}\n"));
        }
        out
    }
}

/// `α_n` = mean over rows `x` of `data` of the sample variance, over `n_draws`
/// perturbations `ε ~ N(0, noise_std² I)`, of `∂f/∂z_n` at `z(x) + ε`.
///
/// `data` holds raw feature rows; they are standardized with the model's own
/// statistics before perturbation. Each row draws from its own RNG stream, so the
/// result does not depend on thread scheduling.
pub fn vargrad(model: &MannModel, data: &Matrix, config: &VarGradConfig) -> Result<FeatureImportance, MannError> {
    config.validate()?;
    let z = model.standardize(data)?;
    let n = z.cols();
    let k = config.n_draws;

    let per_sample: Vec<Vec<f64>> = (0..z.rows())
        .into_par_iter()
        .map_init(Scratch::default, |scratch, i| {
            let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
            rng.set_stream(i as u64);
            let base = z.row(i);
            let mut point = vec![0.0; n];
            let mut grad = vec![0.0; n];
            let mut grads = Vec::with_capacity(k * n);
            for _ in 0..k {
                for (p, &b) in point.iter_mut().zip(base) {
                    let e: f64 = rng.sample(StandardNormal);
                    *p = b + config.noise_std * e;
                }
                model.input_gradient_with(&point, &mut grad, scratch);
                grads.extend_from_slice(&grad);
            }
            sample_variance_by_column(&grads, k, n)
        })
        .collect();

    let mut scores = vec![0.0; n];
    for v in &per_sample {
        for (s, x) in scores.iter_mut().zip(v) {
            *s += x;
        }
    }
    let rows = z.rows() as f64;
    scores.iter_mut().for_each(|s| *s /= rows);

    Ok(FeatureImportance {
        scores,
        config: config.clone(),
        model_fingerprint: model.fingerprint(),
    })
}

fn sample_variance_by_column(values: &[f64], rows: usize, cols: usize) -> Vec<f64> {
    (0..cols)
        .map(|c| {
            let mean = (0..rows).map(|r| values[r * cols + c]).sum::<f64>() / rows as f64;
            (0..rows)
                .map(|r| {
                    let d = values[r * cols + c] - mean;
                    d * d
                })
                .sum::<f64>()
                / (rows - 1) as f64
        })
        .collect()
}
