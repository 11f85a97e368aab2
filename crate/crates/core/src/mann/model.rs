use serde::{Deserialize, Serialize};

use super::layout::{DenseLayer, WeightLayout};
use super::spec::{sigmoid, ArchitectureSpec, BlockSpec, OutputHead};
use super::standardize::{Standardizer, TargetScale};
use super::MannError;
use crate::matrix::Matrix;

/// Loss trajectory recorded while training.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainingMetadata {
    /// Full training-set loss before the first update.
    pub initial_loss: f64,
    /// Full training-set loss after the last epoch.
    pub final_loss: f64,
    /// Mean mini-batch loss of each epoch.
    pub epoch_losses: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub config_hash: Option<String>,
}

/// Concatenation-layer values captured during a forward pass.
#[derive(Debug, Clone, PartialEq)]
pub struct ConcatActivations {
    offsets: Vec<usize>,
    values: Matrix,
}

impl ConcatActivations {
    pub fn n_samples(&self) -> usize {
        self.values.rows()
    }

    pub fn n_blocks(&self) -> usize {
        self.offsets.len() - 1
    }

    pub fn nodes_per_block(&self) -> Vec<usize> {
        self.offsets.windows(2).map(|w| w[1] - w[0]).collect()
    }

    /// Start offset of each block inside a sample's concat vector, plus the total width.
    pub fn offsets(&self) -> &[usize] {
        &self.offsets
    }

    /// Full concat vector of one sample.
    pub fn sample(&self, i: usize) -> &[f64] {
        self.values.row(i)
    }

    /// Activations `c_{b,n}(x_i)` of block `b`.
    pub fn block(&self, i: usize, b: usize) -> &[f64] {
        &self.values.row(i)[self.offsets[b]..self.offsets[b + 1]]
    }

    /// Per-node arithmetic means, accumulated in sample order.
    pub fn means(&self) -> Vec<f64> {
        let mut sums = vec![0.0; self.values.cols()];
        for row in self.values.iter_rows() {
            for (s, v) in sums.iter_mut().zip(row) {
                *s += v;
            }
        }
        let n = self.values.rows() as f64;
        sums.iter().map(|s| s / n).collect()
    }
}

/// Result of [`MannModel::forward`].
#[derive(Debug, Clone)]
pub struct ForwardOutput {
    pub outputs: Vec<f64>,
    pub activations: Option<ConcatActivations>,
}

/// Reusable per-thread buffers for forward and backward passes.
#[derive(Debug, Default)]
pub(crate) struct Scratch {
    z: Vec<f64>,
    block_in: Vec<Vec<f64>>,
    branch_out: Vec<Vec<Vec<f64>>>,
    pub(crate) concat: Vec<f64>,
    blender_out: Vec<Vec<f64>>,
    d_a: Vec<f64>,
    d_b: Vec<f64>,
    d_concat: Vec<f64>,
}

/// A trained (or hand-assembled) multiblock network.
///
/// Inputs are raw feature rows; the model standardizes them with the statistics
/// fitted on its training data. Regression outputs are reported in target units,
/// classification outputs are the sigmoid probability.
#[derive(Debug, Clone)]
pub struct MannModel {
    pub(crate) architecture: ArchitectureSpec,
    pub(crate) block_spec: BlockSpec,
    pub(crate) standardizer: Standardizer,
    pub(crate) target_scale: TargetScale,
    pub(crate) weights: Vec<f64>,
    pub(crate) layout: WeightLayout,
    pub(crate) seed: u64,
    pub(crate) activation_means: Option<Vec<f64>>,
    pub(crate) training: TrainingMetadata,
}

impl MannModel {
    /// Assembles a model from explicit parts. `weights` must match the layout size.
    pub fn from_parts(
        architecture: ArchitectureSpec,
        block_spec: BlockSpec,
        standardizer: Standardizer,
        target_scale: TargetScale,
        weights: Vec<f64>,
        seed: u64,
    ) -> Result<Self, MannError> {
        architecture.validate(&block_spec)?;
        if standardizer.len() != block_spec.n_features() {
            return Err(MannError::ShapeMismatch {
                what: "standardizer width",
                expected: block_spec.n_features(),
                got: standardizer.len(),
            });
        }
        if standardizer.stds.iter().any(|&s| !(s > 0.0)) {
            return Err(MannError::InvalidArchitecture(
                "standardizer stds must be positive".into(),
            ));
        }
        let layout = WeightLayout::new(&architecture, &block_spec);
        if weights.len() != layout.n_params() {
            return Err(MannError::ShapeMismatch {
                what: "weight vector",
                expected: layout.n_params(),
                got: weights.len(),
            });
        }
        Ok(Self {
            architecture,
            block_spec,
            standardizer,
            target_scale,
            weights,
            layout,
            seed,
            activation_means: None,
            training: TrainingMetadata::default(),
        })
    }

    /// All-zero weights with identity standardization.
    pub fn zeroed(architecture: ArchitectureSpec, block_spec: BlockSpec) -> Result<Self, MannError> {
        let n = WeightLayout::new(&architecture, &block_spec).n_params();
        let standardizer = Standardizer::identity(block_spec.n_features());
        Self::from_parts(
            architecture,
            block_spec,
            standardizer,
            TargetScale::IDENTITY,
            vec![0.0; n],
            0,
        )
    }

    pub fn architecture(&self) -> &ArchitectureSpec {
        &self.architecture
    }

    pub fn block_spec(&self) -> &BlockSpec {
        &self.block_spec
    }

    pub fn standardizer(&self) -> &Standardizer {
        &self.standardizer
    }

    pub fn target_scale(&self) -> TargetScale {
        self.target_scale
    }

    pub fn layout(&self) -> &WeightLayout {
        &self.layout
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn weights_mut(&mut self) -> &mut [f64] {
        &mut self.weights
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn training(&self) -> &TrainingMetadata {
        &self.training
    }

    pub fn set_config_hash(&mut self, hash: impl Into<String>) {
        self.training.config_hash = Some(hash.into());
    }

    pub fn n_features(&self) -> usize {
        self.block_spec.n_features()
    }

    pub fn concat_width(&self) -> usize {
        self.architecture.concat_width()
    }

    /// Mean concat activations `c̄_{b,n}` over the training set, if recorded.
    pub fn activation_means(&self) -> Option<&[f64]> {
        self.activation_means.as_deref()
    }

    /// Records `c̄_{b,n}` as the mean activations of `train` (raw inputs).
    pub fn record_activation_means(&mut self, train: &Matrix) -> Result<(), MannError> {
        let captured = self.forward(train, true)?;
        let means = captured.activations.expect("capture requested").means();
        self.activation_means = Some(means);
        Ok(())
    }

    /// Short hex digest of the weights, used to tie derived results to a model.
    pub fn fingerprint(&self) -> String {
        use sha2::{Digest, Sha256};
        let mut hasher = Sha256::new();
        for w in &self.weights {
            hasher.update(w.to_le_bytes());
        }
        hex::encode(&hasher.finalize()[..8])
    }

    fn check_width(&self, width: usize) -> Result<(), MannError> {
        if width != self.n_features() {
            return Err(MannError::ShapeMismatch {
                what: "input width",
                expected: self.n_features(),
                got: width,
            });
        }
        Ok(())
    }

    pub fn standardize(&self, x: &Matrix) -> Result<Matrix, MannError> {
        self.check_width(x.cols())?;
        Ok(self.standardizer.transform(x))
    }

    /// Model outputs for every row of `x`; with `capture` also the concat-layer activations.
    pub fn forward(&self, x: &Matrix, capture: bool) -> Result<ForwardOutput, MannError> {
        self.check_width(x.cols())?;
        let mut scratch = Scratch::default();
        let mut outputs = Vec::with_capacity(x.rows());
        let width = self.concat_width();
        let mut captured = capture.then(|| Vec::with_capacity(x.rows() * width));
        let mut z = vec![0.0; x.cols()];
        for row in x.iter_rows() {
            self.standardizer.transform_row_into(row, &mut z);
            outputs.push(self.forward_standardized_with(&z, &mut scratch));
            if let Some(buf) = captured.as_mut() {
                buf.extend_from_slice(&scratch.concat);
            }
        }
        let activations = captured.map(|buf| ConcatActivations {
            offsets: self.layout.concat_offsets().to_vec(),
            values: Matrix::from_vec(x.rows(), width, buf),
        });
        Ok(ForwardOutput {
            outputs,
            activations,
        })
    }

    pub fn predict(&self, x: &Matrix) -> Result<Vec<f64>, MannError> {
        Ok(self.forward(x, false)?.outputs)
    }

    pub fn predict_row(&self, x: &[f64]) -> Result<f64, MannError> {
        self.check_width(x.len())?;
        let mut z = vec![0.0; x.len()];
        self.standardizer.transform_row_into(x, &mut z);
        Ok(self.forward_standardized_with(&z, &mut Scratch::default()))
    }

    /// Output for an already-standardized input row.
    pub fn forward_standardized(&self, z: &[f64]) -> Result<f64, MannError> {
        self.check_width(z.len())?;
        Ok(self.forward_standardized_with(z, &mut Scratch::default()))
    }

    /// Propagates a concat-layer vector through the blender network.
    pub fn blender_forward(&self, pseudo_input: &[f64]) -> Result<f64, MannError> {
        let mut scratch = Scratch::default();
        self.blender_forward_with(pseudo_input, &mut scratch)
    }

    pub(crate) fn blender_forward_with(
        &self,
        pseudo_input: &[f64],
        scratch: &mut Scratch,
    ) -> Result<f64, MannError> {
        if pseudo_input.len() != self.concat_width() {
            return Err(MannError::ShapeMismatch {
                what: "pseudo-input width",
                expected: self.concat_width(),
                got: pseudo_input.len(),
            });
        }
        Ok(self.head(self.blender_score(pseudo_input, &mut scratch.blender_out)))
    }

    /// `∂f/∂z_n` for a raw input row `x`, where `z` is the standardized input.
    pub fn input_gradient(&self, x: &[f64]) -> Result<Vec<f64>, MannError> {
        self.check_width(x.len())?;
        let mut z = vec![0.0; x.len()];
        self.standardizer.transform_row_into(x, &mut z);
        let mut grad = vec![0.0; x.len()];
        self.input_gradient_with(&z, &mut grad, &mut Scratch::default());
        Ok(grad)
    }

    /// `∂f/∂z_n` at an already-standardized input `z`.
    pub fn input_gradient_standardized(&self, z: &[f64]) -> Result<Vec<f64>, MannError> {
        self.check_width(z.len())?;
        let mut grad = vec![0.0; z.len()];
        self.input_gradient_with(z, &mut grad, &mut Scratch::default());
        Ok(grad)
    }

    pub(crate) fn input_gradient_with(&self, z: &[f64], grad: &mut [f64], scratch: &mut Scratch) {
        let score = self.forward_score(z, scratch);
        let d_score = match self.architecture.head {
            OutputHead::LinearRegression => self.target_scale.std,
            OutputHead::SigmoidBinaryClassification => {
                let p = sigmoid(score);
                p * (1.0 - p)
            }
        };
        self.backward(d_score, None, Some(grad), scratch);
    }

    /// Adds `∂(d_score * score)/∂w` into `grads` for the sample last passed to `forward_score`.
    pub(crate) fn accumulate_param_gradient(&self, d_score: f64, grads: &mut [f64], scratch: &mut Scratch) {
        self.backward(d_score, Some(grads), None, scratch);
    }

    #[inline]
    fn head(&self, score: f64) -> f64 {
        match self.architecture.head {
            OutputHead::LinearRegression => score * self.target_scale.std + self.target_scale.mean,
            OutputHead::SigmoidBinaryClassification => sigmoid(score),
        }
    }

    pub(crate) fn forward_standardized_with(&self, z: &[f64], scratch: &mut Scratch) -> f64 {
        let score = self.forward_score(z, scratch);
        self.head(score)
    }

    /// Pre-head scalar (logit or standardized regression output); leaves the trace in `scratch`.
    pub(crate) fn forward_score(&self, z: &[f64], scratch: &mut Scratch) -> f64 {
        let n_blocks = self.block_spec.len();
        scratch.block_in.resize_with(n_blocks, Vec::new);
        scratch.branch_out.resize_with(n_blocks, Vec::new);
        scratch.concat.clear();
        scratch.z.clear();
        scratch.z.extend_from_slice(z);
        for b in 0..n_blocks {
            let input = &mut scratch.block_in[b];
            input.clear();
            input.extend(self.block_spec.block(b).features.iter().map(|&f| z[f]));
            let layers = self.layout.branch(b);
            let outs = &mut scratch.branch_out[b];
            stack_forward(&self.weights, layers, input, outs);
            let last = outs.last().unwrap_or(input);
            scratch.concat.extend_from_slice(last);
        }
        self.blender_score(&scratch.concat, &mut scratch.blender_out)
    }

    fn blender_score(&self, concat: &[f64], outs: &mut Vec<Vec<f64>>) -> f64 {
        stack_forward(&self.weights, self.layout.blender(), concat, outs);
        outs.last().expect("blender has an output layer")[0]
    }

    fn backward(
        &self,
        d_score: f64,
        mut param_grads: Option<&mut [f64]>,
        input_grad: Option<&mut [f64]>,
        scratch: &mut Scratch,
    ) {
        let Scratch {
            block_in,
            branch_out,
            concat,
            blender_out,
            d_a,
            d_b,
            d_concat,
            ..
        } = scratch;

        d_a.clear();
        d_a.push(d_score);
        stack_backward(
            &self.weights,
            param_grads.as_deref_mut(),
            self.layout.blender(),
            concat,
            blender_out,
            d_a,
            d_b,
        );
        std::mem::swap(d_concat, d_a);

        let want_input = input_grad.is_some();
        let mut input_grad = input_grad;
        if let Some(g) = input_grad.as_deref_mut() {
            g.iter_mut().for_each(|v| *v = 0.0);
        }
        let offsets = self.layout.concat_offsets();
        for b in 0..self.block_spec.len() {
            let layers = self.layout.branch(b);
            d_a.clear();
            d_a.extend_from_slice(&d_concat[offsets[b]..offsets[b + 1]]);
            if !layers.is_empty() {
                if param_grads.is_none() && !want_input {
                    continue;
                }
                stack_backward(
                    &self.weights,
                    param_grads.as_deref_mut(),
                    layers,
                    &block_in[b],
                    &branch_out[b],
                    d_a,
                    d_b,
                );
            }
            if let Some(g) = input_grad.as_deref_mut() {
                for (&f, &d) in self.block_spec.block(b).features.iter().zip(d_a.iter()) {
                    g[f] = d;
                }
            }
        }
    }
}

fn dense_forward(params: &[f64], layer: &DenseLayer, input: &[f64], out: &mut Vec<f64>) {
    out.clear();
    let w = layer.weight_rows(params);
    let bias = layer.bias(params);
    for (o, row) in w.chunks_exact(layer.inputs).enumerate() {
        let s: f64 = bias[o] + row.iter().zip(input).map(|(a, b)| a * b).sum::<f64>();
        out.push(layer.activation.apply(s));
    }
}

fn stack_forward(params: &[f64], layers: &[DenseLayer], input: &[f64], outs: &mut Vec<Vec<f64>>) {
    outs.resize_with(layers.len(), Vec::new);
    for l in 0..layers.len() {
        let (done, rest) = outs.split_at_mut(l);
        let layer_in = if l == 0 { input } else { &done[l - 1] };
        dense_forward(params, &layers[l], layer_in, &mut rest[0]);
    }
}

/// Backpropagates `d_out` (gradient w.r.t. the stack's last activation) to the stack
/// input, leaving the result in `d_out`. Parameter gradients are accumulated when given.
fn stack_backward(
    params: &[f64],
    mut grads: Option<&mut [f64]>,
    layers: &[DenseLayer],
    input: &[f64],
    outs: &[Vec<f64>],
    d_out: &mut Vec<f64>,
    d_in: &mut Vec<f64>,
) {
    for l in (0..layers.len()).rev() {
        let layer = &layers[l];
        let layer_in = if l == 0 { input } else { &outs[l - 1] };
        let layer_out = &outs[l];
        d_in.clear();
        d_in.resize(layer.inputs, 0.0);
        let w = layer.weight_rows(params);
        for o in 0..layer.outputs {
            let g = d_out[o] * layer.activation.derivative_from_output(layer_out[o]);
            if g == 0.0 {
                continue;
            }
            let row = &w[o * layer.inputs..(o + 1) * layer.inputs];
            for (d, &wv) in d_in.iter_mut().zip(row) {
                *d += wv * g;
            }
            if let Some(grads) = grads.as_deref_mut() {
                let gw = &mut grads[layer.weights + o * layer.inputs..layer.weights + (o + 1) * layer.inputs];
                for (gv, &x) in gw.iter_mut().zip(layer_in) {
                    *gv += g * x;
                }
                grads[layer.biases + o] += g;
            }
        }
        std::mem::swap(d_out, d_in);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mann::{Activation, Block};

    fn two_two_one() -> MannModel {
        // Single depth-0 block of two features, one tanh hidden layer of two nodes.
        let spec = BlockSpec::contiguous(&[2]).unwrap();
        let arch = ArchitectureSpec {
            branch_widths: vec![vec![]],
            concat_nodes: vec![2],
            blender_widths: vec![2],
            activation: Activation::Tanh,
            head: OutputHead::LinearRegression,
        };
        let mut m = MannModel::zeroed(arch, spec).unwrap();
        // hidden: W = [[0.5, -1.0], [2.0, 0.25]], b = [0.1, -0.2]
        // output: v = [1.5, -0.75], c = 0.3
        m.weights_mut()
            .copy_from_slice(&[0.5, -1.0, 2.0, 0.25, 0.1, -0.2, 1.5, -0.75, 0.3]);
        m
    }

    #[test]
    fn zero_weights_give_zero_output() {
        let spec = BlockSpec::contiguous(&[2, 3]).unwrap();
        let arch = ArchitectureSpec::default_for(&spec, OutputHead::LinearRegression);
        let m = MannModel::zeroed(arch, spec).unwrap();
        let x = Matrix::from_rows(&[[1.0, -2.0, 3.0, 0.5, 9.0], [0.0; 5]]);
        assert_eq!(m.predict(&x).unwrap(), vec![0.0, 0.0]);
    }

    #[test]
    fn hand_built_network_matches_manual_arithmetic() {
        let m = two_two_one();
        let (x1, x2) = (0.7_f64, -1.2_f64);
        let h1 = (0.5 * x1 - 1.0 * x2 + 0.1).tanh();
        let h2 = (2.0 * x1 + 0.25 * x2 - 0.2).tanh();
        let expected = 1.5 * h1 - 0.75 * h2 + 0.3;
        let got = m.predict_row(&[x1, x2]).unwrap();
        assert!((got - expected).abs() < 1e-12);

        // d/dx1 = 1.5 (1-h1²) 0.5 - 0.75 (1-h2²) 2
        let g = m.input_gradient(&[x1, x2]).unwrap();
        let g1 = 1.5 * (1.0 - h1 * h1) * 0.5 - 0.75 * (1.0 - h2 * h2) * 2.0;
        let g2 = 1.5 * (1.0 - h1 * h1) * -1.0 - 0.75 * (1.0 - h2 * h2) * 0.25;
        assert!((g[0] - g1).abs() < 1e-12);
        assert!((g[1] - g2).abs() < 1e-12);
    }

    #[test]
    fn hand_built_blender_matches_manual_arithmetic() {
        let m = two_two_one();
        let v = [0.3, 0.9];
        let h1 = (0.5 * 0.3 - 1.0 * 0.9 + 0.1_f64).tanh();
        let h2 = (2.0 * 0.3 + 0.25 * 0.9 - 0.2_f64).tanh();
        let expected = 1.5 * h1 - 0.75 * h2 + 0.3;
        assert!((m.blender_forward(&v).unwrap() - expected).abs() < 1e-12);
    }

    #[test]
    fn linear_model_gradient_is_its_weights() {
        let spec = BlockSpec::contiguous(&[3]).unwrap();
        let arch = ArchitectureSpec {
            branch_widths: vec![vec![]],
            concat_nodes: vec![3],
            blender_widths: vec![],
            activation: Activation::Tanh,
            head: OutputHead::LinearRegression,
        };
        let mut m = MannModel::zeroed(arch, spec).unwrap();
        m.weights_mut().copy_from_slice(&[0.4, -2.0, 3.5, 1.0]);
        for x in [[0.0, 0.0, 0.0], [1.0, -5.0, 2.0], [100.0, 3.0, -7.0]] {
            assert_eq!(m.input_gradient(&x).unwrap(), vec![0.4, -2.0, 3.5]);
        }
    }

    #[test]
    fn blender_on_captured_activations_reproduces_forward_exactly() {
        let spec = BlockSpec::new(vec![
            Block { name: "a".into(), features: vec![0, 3] },
            Block { name: "b".into(), features: vec![1, 2, 4] },
        ])
        .unwrap();
        let arch = ArchitectureSpec::with_widths(&spec, OutputHead::SigmoidBinaryClassification, 3, &[4]);
        let mut m = MannModel::zeroed(arch, spec).unwrap();
        for (i, w) in m.weights_mut().iter_mut().enumerate() {
            *w = ((i as f64) * 0.37).sin();
        }
        let x = Matrix::from_rows(&[[0.1, 0.2, -0.3, 1.5, 2.0], [-1.0, 0.0, 0.4, 0.3, -0.8]]);
        let out = m.forward(&x, true).unwrap();
        let acts = out.activations.unwrap();
        assert_eq!(acts.nodes_per_block(), vec![3, 3]);
        for i in 0..x.rows() {
            assert_eq!(m.blender_forward(acts.sample(i)).unwrap(), out.outputs[i]);
        }
    }

    #[test]
    fn shape_errors() {
        let m = two_two_one();
        assert!(matches!(m.predict_row(&[1.0]), Err(MannError::ShapeMismatch { .. })));
        assert!(matches!(m.input_gradient(&[1.0, 2.0, 3.0]), Err(MannError::ShapeMismatch { .. })));
        assert!(matches!(m.blender_forward(&[1.0]), Err(MannError::ShapeMismatch { .. })));
        let wide = Matrix::zeros(2, 3);
        assert!(m.forward(&wide, false).is_err());
    }

    #[test]
    fn dead_feature_has_zero_gradient() {
        let spec = BlockSpec::contiguous(&[3]).unwrap();
        let arch = ArchitectureSpec::with_widths(&spec, OutputHead::LinearRegression, 4, &[5]);
        let mut m = MannModel::zeroed(arch, spec).unwrap();
        for (i, w) in m.weights_mut().iter_mut().enumerate() {
            *w = ((i as f64) * 1.3).cos();
        }
        let first = m.layout().branch(0)[0];
        for o in 0..first.outputs {
            let off = m.layout().weight_offset(0, o, 1).unwrap();
            m.weights_mut()[off] = 0.0;
        }
        let g = m.input_gradient(&[0.3, -0.4, 1.1]).unwrap();
        assert_eq!(g[1], 0.0);
        assert!(g[0] != 0.0 && g[2] != 0.0);
    }
}
