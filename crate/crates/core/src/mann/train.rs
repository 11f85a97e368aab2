use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::layout::WeightLayout;
use super::model::{MannModel, Scratch, TrainingMetadata};
use super::optim::{Adam, AdamConfig};
use super::spec::{ArchitectureSpec, BlockSpec, OutputHead};
use super::standardize::{Standardizer, TargetScale};
use super::MannError;
use crate::matrix::Matrix;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum LossKind {
    Mse,
    BinaryCrossEntropy,
}

impl LossKind {
    pub fn for_head(head: OutputHead) -> Self {
        match head {
            OutputHead::LinearRegression => LossKind::Mse,
            OutputHead::SigmoidBinaryClassification => LossKind::BinaryCrossEntropy,
        }
    }

    /// Loss of one sample and its derivative w.r.t. the pre-head score.
    #[inline]
    fn eval(self, score: f64, target: f64) -> (f64, f64) {
        match self {
            LossKind::Mse => {
                let r = score - target;
                (r * r, 2.0 * r)
            }
            LossKind::BinaryCrossEntropy => {
                // log(1 + e^s) - y s, computed without overflow.
                let loss = score.max(0.0) + (-score.abs()).exp().ln_1p() - target * score;
                (loss, super::spec::sigmoid(score) - target)
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    /// Defaults to the loss matching the output head.
    pub loss: Option<LossKind>,
    pub optimizer: AdamConfig,
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            loss: None,
            optimizer: AdamConfig::default(),
            epochs: 200,
            batch_size: 64,
            seed: 0,
        }
    }
}

impl TrainConfig {
    fn validate(&self, head: OutputHead) -> Result<LossKind, MannError> {
        if self.epochs == 0 || self.batch_size == 0 {
            return Err(MannError::InvalidConfig(
                "epochs and batch size must be at least 1".into(),
            ));
        }
        let lr = self.optimizer.learning_rate;
        if !(lr > 0.0) || !lr.is_finite() {
            return Err(MannError::InvalidConfig("learning rate must be positive".into()));
        }
        let loss = self.loss.unwrap_or(LossKind::for_head(head));
        if loss != LossKind::for_head(head) {
            return Err(MannError::InvalidConfig(format!(
                "loss {loss:?} does not match output head {head:?}"
            )));
        }
        Ok(loss)
    }
}

/// Glorot-uniform weights, zero biases.
fn init_weights(layout: &WeightLayout, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let mut w = vec![0.0; layout.n_params()];
    for layer in layout.layers() {
        let limit = (6.0 / (layer.inputs + layer.outputs) as f64).sqrt();
        for v in &mut w[layer.weights..layer.biases] {
            *v = rng.random_range(-limit..limit);
        }
    }
    w
}

/// Trains all branches and the blender jointly with mini-batch Adam.
///
/// Features are standardized with statistics of `data`; regression targets are
/// scaled to unit variance during training.
pub fn train(
    data: &Matrix,
    targets: &[f64],
    block_spec: &BlockSpec,
    arch: &ArchitectureSpec,
    config: &TrainConfig,
) -> Result<MannModel, MannError> {
    if data.rows() != targets.len() {
        return Err(MannError::ShapeMismatch {
            what: "target length",
            expected: data.rows(),
            got: targets.len(),
        });
    }
    if data.cols() != block_spec.n_features() {
        return Err(MannError::ShapeMismatch {
            what: "input width",
            expected: block_spec.n_features(),
            got: data.cols(),
        });
    }
    arch.validate(block_spec)?;
    let loss_kind = config.validate(arch.head)?;

    let standardizer = Standardizer::fit(data)?;
    let target_scale = match arch.head {
        OutputHead::LinearRegression => TargetScale::fit(targets),
        OutputHead::SigmoidBinaryClassification => TargetScale::IDENTITY,
    };
    let z = standardizer.transform(data);
    let t: Vec<f64> = targets
        .iter()
        .map(|&y| (y - target_scale.mean) / target_scale.std)
        .collect();

    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let layout = WeightLayout::new(arch, block_spec);
    let weights = init_weights(&layout, &mut rng);
    let mut model = MannModel::from_parts(
        arch.clone(),
        block_spec.clone(),
        standardizer,
        target_scale,
        weights,
        config.seed,
    )?;

    let mut scratch = Scratch::default();
    let initial_loss = dataset_loss(&model, &z, &t, loss_kind, &mut scratch);
    let mut adam = Adam::new(config.optimizer, layout.n_params());
    let mut grads = vec![0.0; layout.n_params()];
    let mut order: Vec<usize> = (0..z.rows()).collect();
    let mut epoch_losses = Vec::with_capacity(config.epochs);

    for epoch in 0..config.epochs {
        order.shuffle(&mut rng);
        let mut epoch_loss = 0.0;
        for batch in order.chunks(config.batch_size) {
            grads.iter_mut().for_each(|g| *g = 0.0);
            let scale = 1.0 / batch.len() as f64;
            for &i in batch {
                let score = model.forward_score(z.row(i), &mut scratch);
                let (loss, d_score) = loss_kind.eval(score, t[i]);
                epoch_loss += loss;
                model.accumulate_param_gradient(d_score * scale, &mut grads, &mut scratch);
            }
            if !epoch_loss.is_finite() {
                return Err(MannError::NonFiniteLoss { epoch });
            }
            adam.step(&mut model.weights, &grads);
        }
        epoch_losses.push(epoch_loss / z.rows() as f64);
    }

    let final_loss = dataset_loss(&model, &z, &t, loss_kind, &mut scratch);
    if !final_loss.is_finite() || model.weights.iter().any(|w| !w.is_finite()) {
        return Err(MannError::NonFiniteLoss {
            epoch: config.epochs,
        });
    }
    model.training = TrainingMetadata {
        initial_loss,
        final_loss,
        epoch_losses,
        config_hash: None,
    };
    model.record_activation_means(data)?;
    Ok(model)
}

fn dataset_loss(model: &MannModel, z: &Matrix, t: &[f64], kind: LossKind, scratch: &mut Scratch) -> f64 {
    let total: f64 = z
        .iter_rows()
        .zip(t)
        .map(|(row, &ti)| kind.eval(model.forward_score(row, scratch), ti).0)
        .sum();
    total / z.rows() as f64
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mann::Activation;
    use rand_distr::StandardNormal;

    fn gaussian(rows: usize, cols: usize, seed: u64) -> Matrix {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let data = (0..rows * cols).map(|_| rng.sample(StandardNormal)).collect();
        Matrix::from_vec(rows, cols, data)
    }

    fn linear_arch(n: usize) -> (BlockSpec, ArchitectureSpec) {
        let spec = BlockSpec::contiguous(&[n]).unwrap();
        let arch = ArchitectureSpec {
            branch_widths: vec![vec![]],
            concat_nodes: vec![n],
            blender_widths: vec![],
            activation: Activation::Tanh,
            head: OutputHead::LinearRegression,
        };
        (spec, arch)
    }

    fn r2(pred: &[f64], y: &[f64]) -> f64 {
        let mean = y.iter().sum::<f64>() / y.len() as f64;
        let ss_res: f64 = pred.iter().zip(y).map(|(p, t)| (p - t).powi(2)).sum();
        let ss_tot: f64 = y.iter().map(|t| (t - mean).powi(2)).sum();
        1.0 - ss_res / ss_tot
    }

    #[test]
    fn learns_a_linear_target() {
        let x = gaussian(400, 1, 1);
        let y: Vec<f64> = x.column(0).iter().map(|v| 2.0 * v).collect();
        let (spec, arch) = linear_arch(1);
        let config = TrainConfig {
            epochs: 60,
            batch_size: 16,
            optimizer: AdamConfig {
                learning_rate: 1e-2,
                ..Default::default()
            },
            seed: 3,
            ..Default::default()
        };
        let model = train(&x, &y, &spec, &arch, &config).unwrap();
        let x_test = gaussian(200, 1, 2);
        let y_test: Vec<f64> = x_test.column(0).iter().map(|v| 2.0 * v).collect();
        let pred = model.predict(&x_test).unwrap();
        // Closed-form least squares fits this target exactly, so R² = 1 is attainable.
        assert!(r2(&pred, &y_test) > 0.99);
        assert!(model.training().final_loss < model.training().initial_loss);
    }

    #[test]
    fn identical_seeds_give_identical_weights() {
        let x = gaussian(100, 4, 5);
        let y: Vec<f64> = x.iter_rows().map(|r| r[0] * r[0] - r[3]).collect();
        let spec = BlockSpec::contiguous(&[2, 2]).unwrap();
        let arch = ArchitectureSpec::default_for(&spec, OutputHead::LinearRegression);
        let config = TrainConfig {
            epochs: 3,
            seed: 11,
            ..Default::default()
        };
        let a = train(&x, &y, &spec, &arch, &config).unwrap();
        let b = train(&x, &y, &spec, &arch, &config).unwrap();
        assert_eq!(a.weights(), b.weights());
        let c = train(&x, &y, &spec, &arch, &TrainConfig { seed: 12, ..config }).unwrap();
        assert_ne!(a.weights(), c.weights());
    }

    #[test]
    fn huge_learning_rate_never_yields_silent_nan() {
        let x = gaussian(64, 2, 8);
        let y: Vec<f64> = x.iter_rows().map(|r| 1e3 * r[0] * r[1]).collect();
        let spec = BlockSpec::contiguous(&[1, 1]).unwrap();
        let mut arch = ArchitectureSpec::default_for(&spec, OutputHead::LinearRegression);
        arch.activation = Activation::Relu;
        let config = TrainConfig {
            epochs: 20,
            batch_size: 8,
            optimizer: AdamConfig {
                learning_rate: 1e3,
                ..Default::default()
            },
            ..Default::default()
        };
        match train(&x, &y, &spec, &arch, &config) {
            Ok(model) => {
                assert!(model.weights().iter().all(|w| w.is_finite()));
                assert!(model.training().final_loss.is_finite());
            }
            Err(e) => assert!(matches!(e, MannError::NonFiniteLoss { .. })),
        }
    }

    #[test]
    fn shape_and_config_errors() {
        let x = gaussian(10, 2, 1);
        let spec = BlockSpec::contiguous(&[2]).unwrap();
        let arch = ArchitectureSpec::default_for(&spec, OutputHead::LinearRegression);
        let cfg = TrainConfig::default();
        assert!(matches!(
            train(&x, &[0.0; 9], &spec, &arch, &cfg),
            Err(MannError::ShapeMismatch { .. })
        ));
        let wrong = BlockSpec::contiguous(&[3]).unwrap();
        assert!(train(&x, &[0.0; 10], &wrong, &arch, &cfg).is_err());
        let zero_epochs = TrainConfig { epochs: 0, ..cfg.clone() };
        assert!(matches!(
            train(&x, &[0.0; 10], &spec, &arch, &zero_epochs),
            Err(MannError::InvalidConfig(_))
        ));
        let bce = TrainConfig { loss: Some(LossKind::BinaryCrossEntropy), ..cfg };
        assert!(train(&x, &[0.0; 10], &spec, &arch, &bce).is_err());
    }

    #[test]
    fn classification_learns_a_separable_split() {
        let x = gaussian(300, 2, 21);
        let y: Vec<f64> = x.iter_rows().map(|r| if r[0] + r[1] > 0.0 { 1.0 } else { 0.0 }).collect();
        let spec = BlockSpec::contiguous(&[1, 1]).unwrap();
        let arch = ArchitectureSpec::with_widths(&spec, OutputHead::SigmoidBinaryClassification, 2, &[4]);
        let config = TrainConfig {
            epochs: 80,
            batch_size: 16,
            optimizer: AdamConfig { learning_rate: 1e-2, ..Default::default() },
            seed: 2,
            ..Default::default()
        };
        let model = train(&x, &y, &spec, &arch, &config).unwrap();
        let p = model.predict(&x).unwrap();
        assert!(p.iter().all(|v| (0.0..=1.0).contains(v)));
        let correct = p.iter().zip(&y).filter(|(p, y)| (**p >= 0.5) == (**y == 1.0)).count();
        assert!(correct as f64 / y.len() as f64 > 0.95);
    }

    #[test]
    fn activation_means_come_from_training_data() {
        let x = gaussian(50, 3, 4);
        let y: Vec<f64> = x.iter_rows().map(|r| r[0] - r[2]).collect();
        let spec = BlockSpec::contiguous(&[1, 2]).unwrap();
        let arch = ArchitectureSpec::default_for(&spec, OutputHead::LinearRegression);
        let model = train(&x, &y, &spec, &arch, &TrainConfig { epochs: 2, ..Default::default() }).unwrap();
        let acts = model.forward(&x, true).unwrap().activations.unwrap();
        assert_eq!(model.activation_means().unwrap(), acts.means().as_slice());
    }
}
