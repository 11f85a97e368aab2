//! Block importance ranking: composite aggregation of feature scores, and the
//! knock-in / knock-out strategies that compare full and pseudo-outputs through
//! mutual information.

mod mi;

use std::fmt;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use mi::{mutual_information, BinRange, MiConfig};

use crate::mann::{BlockSpec, MannError, MannModel, Scratch};
use crate::matrix::Matrix;
use crate::simgen::Paradigm;
use crate::vargrad::FeatureImportance;

#[derive(Debug, Error)]
pub enum BirError {
    #[error("length mismatch: {left} vs {right}")]
    LengthMismatch { left: usize, right: usize },
    #[error("need at least 2 samples, got {0}")]
    TooFewSamples(usize),
    #[error("non-finite value in input")]
    NonFiniteInput,
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("feature importance covers {got} features, block spec has {expected}")]
    BlockSpecMismatch { expected: usize, got: usize },
    #[error("model has no recorded training-set activation means")]
    MissingActivationMeans,
    #[error("pseudo-outputs for {0} were not computed")]
    MissingPseudoOutputs(&'static str),
    #[error(transparent)]
    Model(#[from] MannError),
}

/// The five block-ranking strategies.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Strategy {
    CompositeSum,
    CompositeMean,
    CompositeMax,
    KnockIn,
    KnockOut,
}

impl Strategy {
    pub const ALL: [Strategy; 5] = [
        Strategy::CompositeSum,
        Strategy::CompositeMean,
        Strategy::CompositeMax,
        Strategy::KnockIn,
        Strategy::KnockOut,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Strategy::CompositeSum => "composite-sum",
            Strategy::CompositeMean => "composite-mean",
            Strategy::CompositeMax => "composite-max",
            Strategy::KnockIn => "knock-in",
            Strategy::KnockOut => "knock-out",
        }
    }

    pub fn is_composite(self) -> bool {
        matches!(
            self,
            Strategy::CompositeSum | Strategy::CompositeMean | Strategy::CompositeMax
        )
    }

    /// Reference paradigm a simulated ranking is compared against.
    pub fn paradigm(self) -> Paradigm {
        match self {
            Strategy::CompositeSum => Paradigm::CompositeSum,
            Strategy::CompositeMean => Paradigm::CompositeMean,
            Strategy::CompositeMax => Paradigm::CompositeMax,
            Strategy::KnockIn => Paradigm::KnockIn,
            Strategy::KnockOut => Paradigm::KnockOut,
        }
    }
}

impl fmt::Display for Strategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Strategy {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Strategy::ALL
            .into_iter()
            .find(|st| st.name() == s.trim())
            .ok_or_else(|| {
                format!(
                    "unknown strategy '{s}' (expected one of {})",
                    Strategy::ALL.map(Strategy::name).join(", ")
                )
            })
    }
}

/// Per-block scores `γ⁽ᵇ⁾` of one strategy on one model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BlockImportance {
    pub strategy: Strategy,
    pub scores: Vec<f64>,
    pub normalized: bool,
}

impl BlockImportance {
    pub fn normalize(&self) -> BlockImportance {
        BlockImportance {
            strategy: self.strategy,
            scores: min_max_normalize(&self.scores),
            normalized: true,
        }
    }

    /// `block,strategy,score,normalized_score` rows (no header).
    pub fn csv_rows(&self, block_names: &[String]) -> Vec<[String; 4]> {
        let norm = min_max_normalize(&self.scores);
        self.scores
            .iter()
            .zip(norm)
            .zip(block_names)
            .map(|((s, n), name)| [name.clone(), self.strategy.to_string(), format!("{s:?}"), format!("{n:?}")])
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Aggregate {
    Sum,
    Mean,
    Max,
}

/// `γ⁽ᵇ⁾ = φ(α of block b's features)`.
pub fn composite(
    importance: &FeatureImportance,
    block_spec: &BlockSpec,
    metric: Aggregate,
) -> Result<BlockImportance, BirError> {
    if importance.scores.len() != block_spec.n_features() {
        return Err(BirError::BlockSpecMismatch {
            expected: block_spec.n_features(),
            got: importance.scores.len(),
        });
    }
    let scores = block_spec
        .blocks()
        .iter()
        .map(|block| {
            let alphas = block.features.iter().map(|&f| importance.scores[f]);
            match metric {
                Aggregate::Sum => alphas.sum(),
                Aggregate::Mean => alphas.sum::<f64>() / block.features.len() as f64,
                Aggregate::Max => alphas.fold(f64::NEG_INFINITY, f64::max),
            }
        })
        .collect();
    let strategy = match metric {
        Aggregate::Sum => Strategy::CompositeSum,
        Aggregate::Mean => Strategy::CompositeMean,
        Aggregate::Max => Strategy::CompositeMax,
    };
    Ok(BlockImportance {
        strategy,
        scores,
        normalized: false,
    })
}

/// Full outputs `Y^F` and per-block pseudo-outputs on one evaluation set.
#[derive(Debug, Clone, PartialEq)]
pub struct PseudoOutputs {
    pub full: Vec<f64>,
    /// `Y⁽ᵇ⁾[b][i]`: only block `b` active, every other block at its training mean.
    pub knock_in: Option<Vec<Vec<f64>>>,
    /// `Y⁽⁻ᵇ⁾[b][i]`: block `b` at its training mean, every other block active.
    pub knock_out: Option<Vec<Vec<f64>>>,
}

/// Evaluates the requested pseudo-outputs on `eval_data` (raw feature rows).
pub fn pseudo_outputs(
    model: &MannModel,
    eval_data: &Matrix,
    knock_in: bool,
    knock_out: bool,
) -> Result<PseudoOutputs, BirError> {
    let means = model
        .activation_means()
        .ok_or(BirError::MissingActivationMeans)?
        .to_vec();
    let captured = model.forward(eval_data, true)?;
    let acts = captured.activations.expect("capture requested");
    let offsets = acts.offsets().to_vec();
    let n_blocks = acts.n_blocks();

    let run = |keep_only: bool| -> Result<Vec<Vec<f64>>, BirError> {
        let per_sample: Vec<Vec<f64>> = (0..acts.n_samples())
            .into_par_iter()
            .map_init(
                || (Scratch::default(), vec![0.0; means.len()]),
                |(scratch, pseudo), i| {
                    let sample = acts.sample(i);
                    (0..n_blocks)
                        .map(|b| {
                            let (lo, hi) = (offsets[b], offsets[b + 1]);
                            if keep_only {
                                pseudo.copy_from_slice(&means);
                                pseudo[lo..hi].copy_from_slice(&sample[lo..hi]);
                            } else {
                                pseudo.copy_from_slice(sample);
                                pseudo[lo..hi].copy_from_slice(&means[lo..hi]);
                            }
                            model.blender_forward_with(pseudo, scratch)
                        })
                        .collect::<Result<Vec<f64>, MannError>>()
                },
            )
            .collect::<Result<_, _>>()?;
        Ok((0..n_blocks)
            .map(|b| per_sample.iter().map(|row| row[b]).collect())
            .collect())
    };

    Ok(PseudoOutputs {
        knock_in: knock_in.then(|| run(true)).transpose()?,
        knock_out: knock_out.then(|| run(false)).transpose()?,
        full: captured.outputs,
    })
}

/// Knock-in pseudo-outputs `Y⁽ᵇ⁾` together with `Y^F`.
pub fn knock_in_outputs(model: &MannModel, eval_data: &Matrix) -> Result<PseudoOutputs, BirError> {
    pseudo_outputs(model, eval_data, true, false)
}

/// Knock-out pseudo-outputs `Y⁽⁻ᵇ⁾` together with `Y^F`.
pub fn knock_out_outputs(model: &MannModel, eval_data: &Matrix) -> Result<PseudoOutputs, BirError> {
    pseudo_outputs(model, eval_data, false, true)
}

/// `γ_KI⁽ᵇ⁾ = MI(Y^F, Y⁽ᵇ⁾) / log₂ ℓ`.
pub fn knock_in_score(outputs: &PseudoOutputs, config: &MiConfig) -> Result<BlockImportance, BirError> {
    let per_block = outputs
        .knock_in
        .as_ref()
        .ok_or(BirError::MissingPseudoOutputs("knock-in"))?;
    let max_bits = config.max_bits();
    let scores = per_block
        .iter()
        .map(|y_b| Ok(mutual_information(&outputs.full, y_b, config)? / max_bits))
        .collect::<Result<Vec<f64>, BirError>>()?;
    assert!(scores.iter().all(|s| (0.0..=1.0).contains(s)), "knock-in score outside [0, 1]");
    Ok(BlockImportance {
        strategy: Strategy::KnockIn,
        scores,
        normalized: false,
    })
}

/// `γ_KO⁽ᵇ⁾ = (log₂ ℓ − MI(Y^F, Y⁽⁻ᵇ⁾)) / log₂ ℓ`.
pub fn knock_out_score(outputs: &PseudoOutputs, config: &MiConfig) -> Result<BlockImportance, BirError> {
    let per_block = outputs
        .knock_out
        .as_ref()
        .ok_or(BirError::MissingPseudoOutputs("knock-out"))?;
    let max_bits = config.max_bits();
    let scores = per_block
        .iter()
        .map(|y_b| Ok((max_bits - mutual_information(&outputs.full, y_b, config)?) / max_bits))
        .collect::<Result<Vec<f64>, BirError>>()?;
    assert!(scores.iter().all(|s| (0.0..=1.0).contains(s)), "knock-out score outside [0, 1]");
    Ok(BlockImportance {
        strategy: Strategy::KnockOut,
        scores,
        normalized: false,
    })
}

/// Affine map of one run's scores onto `[0, 1]`; all-equal scores map to 0.5.
pub fn min_max_normalize(scores: &[f64]) -> Vec<f64> {
    let lo = scores.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = scores.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let span = hi - lo;
    if !(span > 0.0) {
        return vec![0.5; scores.len()];
    }
    scores.iter().map(|&s| (s - lo) / span).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mann::{Activation, ArchitectureSpec, OutputHead, Standardizer, TargetScale};

    fn fi(scores: &[f64]) -> FeatureImportance {
        FeatureImportance {
            scores: scores.to_vec(),
            config: Default::default(),
            model_fingerprint: String::new(),
        }
    }

    #[test]
    fn composite_metrics() {
        let spec = BlockSpec::contiguous(&[3, 1]).unwrap();
        let f = fi(&[1.0, 3.0, 2.0, 0.5]);
        assert_eq!(composite(&f, &spec, Aggregate::Max).unwrap().scores, vec![3.0, 0.5]);
        assert_eq!(composite(&f, &spec, Aggregate::Mean).unwrap().scores, vec![2.0, 0.5]);
        assert_eq!(composite(&f, &spec, Aggregate::Sum).unwrap().scores, vec![6.0, 0.5]);
        assert!(matches!(
            composite(&fi(&[1.0]), &spec, Aggregate::Sum),
            Err(BirError::BlockSpecMismatch { .. })
        ));
    }

    #[test]
    fn normalization() {
        assert_eq!(min_max_normalize(&[2.0, 4.0, 6.0]), vec![0.0, 0.5, 1.0]);
        assert_eq!(min_max_normalize(&[5.0, 5.0, 5.0]), vec![0.5, 0.5, 0.5]);
        assert_eq!(min_max_normalize(&[0.0, 1.0]), vec![0.0, 1.0]);
    }

    #[test]
    fn strategy_names_round_trip() {
        for s in Strategy::ALL {
            assert_eq!(s.name().parse::<Strategy>().unwrap(), s);
            assert_eq!(serde_json::to_string(&s).unwrap(), format!("\"{}\"", s.name()));
        }
        assert!("vargrad".parse::<Strategy>().is_err());
    }

    /// Two depth-0 blocks (one feature each) feeding a 2-node tanh layer and a linear output.
    fn two_block_model() -> MannModel {
        let spec = BlockSpec::contiguous(&[1, 1]).unwrap();
        let arch = ArchitectureSpec {
            branch_widths: vec![vec![], vec![]],
            concat_nodes: vec![1, 1],
            blender_widths: vec![2],
            activation: Activation::Tanh,
            head: OutputHead::LinearRegression,
        };
        let weights = vec![
            1.0, 0.5, // hidden row 0
            -0.3, 2.0, // hidden row 1
            0.0, 0.1, // hidden bias
            1.0, -1.0, // output weights
            0.2, // output bias
        ];
        let mut m = MannModel::from_parts(
            arch,
            spec,
            Standardizer::identity(2),
            TargetScale::IDENTITY,
            weights,
            0,
        )
        .unwrap();
        let train = Matrix::from_rows(&[[1.0, -1.0], [3.0, 0.0], [-1.0, 4.0]]);
        m.record_activation_means(&train).unwrap();
        m
    }

    fn manual(v1: f64, v2: f64) -> f64 {
        let h1 = (1.0 * v1 + 0.5 * v2).tanh();
        let h2 = (-0.3 * v1 + 2.0 * v2 + 0.1).tanh();
        h1 - h2 + 0.2
    }

    #[test]
    fn hand_built_pseudo_outputs() {
        let m = two_block_model();
        // Depth-0 branches: concat equals the input, means are column means (1, 1).
        assert_eq!(m.activation_means().unwrap(), &[1.0, 1.0]);
        let x = Matrix::from_rows(&[[0.5, -2.0], [2.0, 3.0]]);
        let po = pseudo_outputs(&m, &x, true, true).unwrap();
        let ki = po.knock_in.as_ref().unwrap();
        let ko = po.knock_out.as_ref().unwrap();
        for (i, row) in x.iter_rows().enumerate() {
            assert!((po.full[i] - manual(row[0], row[1])).abs() < 1e-12);
            assert!((ki[0][i] - manual(row[0], 1.0)).abs() < 1e-12);
            assert!((ki[1][i] - manual(1.0, row[1])).abs() < 1e-12);
            assert!((ko[0][i] - manual(1.0, row[1])).abs() < 1e-12);
            assert!((ko[1][i] - manual(row[0], 1.0)).abs() < 1e-12);
        }
        // Complementarity at B = 2.
        assert_eq!(ki[0], ko[1]);
        assert_eq!(ki[1], ko[0]);
    }

    #[test]
    fn sample_at_means_gives_equal_pseudo_outputs() {
        let m = two_block_model();
        let x = Matrix::from_rows(&[[1.0, 1.0]]);
        let po = pseudo_outputs(&m, &x, true, true).unwrap();
        let ki = po.knock_in.unwrap();
        assert_eq!(ki[0], ki[1]);
        assert_eq!(ki[0], po.full);
    }

    #[test]
    fn single_block_knock_in_is_full_and_knock_out_constant() {
        let spec = BlockSpec::contiguous(&[2]).unwrap();
        let arch = ArchitectureSpec::with_widths(&spec, OutputHead::LinearRegression, 3, &[4]);
        let mut m = MannModel::zeroed(arch, spec).unwrap();
        for (i, w) in m.weights_mut().iter_mut().enumerate() {
            *w = ((i as f64) * 0.71).sin();
        }
        let x = Matrix::from_vec(50, 2, (0..100).map(|i| ((i * 13 % 17) as f64) / 4.0 - 2.0).collect());
        m.record_activation_means(&x).unwrap();
        let po = pseudo_outputs(&m, &x, true, true).unwrap();
        assert_eq!(po.knock_in.as_ref().unwrap()[0], po.full);
        let ko = &po.knock_out.as_ref().unwrap()[0];
        assert!(ko.iter().all(|&v| v == ko[0]));
        let means = m.activation_means().unwrap().to_vec();
        assert_eq!(ko[0], m.blender_forward(&means).unwrap());

        let cfg = MiConfig::default();
        let ki = knock_in_score(&po, &cfg).unwrap();
        let h_full = mutual_information(&po.full, &po.full, &cfg).unwrap();
        assert_eq!(ki.scores[0], h_full / cfg.max_bits());
        assert_eq!(knock_out_score(&po, &cfg).unwrap().scores[0], 1.0);
    }

    #[test]
    fn silent_block_scores_zero_knock_in_and_minimal_knock_out() {
        let mut m = two_block_model();
        // Cut block 2 off: zero its outgoing blender weights.
        for o in 0..2 {
            let off = m.layout().weight_offset(0, o, 1).unwrap();
            m.weights_mut()[off] = 0.0;
        }
        let x = Matrix::from_vec(200, 2, (0..400).map(|i| ((i * 37 % 101) as f64) / 25.0 - 2.0).collect());
        m.record_activation_means(&x).unwrap();
        let po = pseudo_outputs(&m, &x, true, true).unwrap();
        let cfg = MiConfig::default();
        let ki = knock_in_score(&po, &cfg).unwrap();
        let ko = knock_out_score(&po, &cfg).unwrap();
        assert_eq!(ki.scores[1], 0.0);
        assert_eq!(po.knock_out.as_ref().unwrap()[1], po.full);
        let h = mutual_information(&po.full, &po.full, &cfg).unwrap();
        assert_eq!(ko.scores[1], (cfg.max_bits() - h) / cfg.max_bits());
        assert!(ko.scores[1] < ko.scores[0]);
    }

    #[test]
    fn missing_means_reported() {
        let spec = BlockSpec::contiguous(&[1]).unwrap();
        let arch = ArchitectureSpec::default_for(&spec, OutputHead::LinearRegression);
        let m = MannModel::zeroed(arch, spec).unwrap();
        assert!(matches!(
            knock_in_outputs(&m, &Matrix::zeros(3, 1)),
            Err(BirError::MissingActivationMeans)
        ));
        let po = PseudoOutputs { full: vec![0.0; 3], knock_in: None, knock_out: None };
        assert!(knock_out_score(&po, &MiConfig::default()).is_err());
    }
}
