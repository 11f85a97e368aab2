use serde::{Deserialize, Serialize};

use super::spec::{Activation, ArchitectureSpec, BlockSpec};

/// Placement of one dense layer inside the flat parameter vector.
///
/// Weights are stored row-major as `outputs x inputs`, followed by `outputs` biases.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct DenseLayer {
    pub weights: usize,
    pub biases: usize,
    pub inputs: usize,
    pub outputs: usize,
    pub activation: Activation,
}

impl DenseLayer {
    pub fn n_params(&self) -> usize {
        self.inputs * self.outputs + self.outputs
    }

    #[inline]
    pub fn weight_rows<'a>(&self, params: &'a [f64]) -> &'a [f64] {
        &params[self.weights..self.weights + self.inputs * self.outputs]
    }

    #[inline]
    pub fn bias<'a>(&self, params: &'a [f64]) -> &'a [f64] {
        &params[self.biases..self.biases + self.outputs]
    }
}

/// Table mapping every `(layer, row, col)` weight and `(layer, row)` bias to its
/// offset in the flat parameter vector. Layers are numbered branch by branch,
/// then the blender; the blender's last layer is the one-node output layer.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct WeightLayout {
    branches: Vec<Vec<DenseLayer>>,
    blender: Vec<DenseLayer>,
    concat_offsets: Vec<usize>,
    n_params: usize,
}

impl WeightLayout {
    pub fn new(arch: &ArchitectureSpec, block_spec: &BlockSpec) -> Self {
        let mut next = 0usize;
        let mut push = |inputs: usize, outputs: usize, activation: Activation| {
            let layer = DenseLayer {
                weights: next,
                biases: next + inputs * outputs,
                inputs,
                outputs,
                activation,
            };
            next += layer.n_params();
            layer
        };

        let mut branches = Vec::with_capacity(block_spec.len());
        for (b, widths) in arch.branch_widths.iter().enumerate() {
            let mut layers = Vec::new();
            let mut inputs = block_spec.block(b).features.len();
            if !widths.is_empty() {
                for &w in widths {
                    layers.push(push(inputs, w, arch.activation));
                    inputs = w;
                }
                layers.push(push(inputs, arch.concat_nodes[b], arch.activation));
            }
            branches.push(layers);
        }

        let mut blender = Vec::new();
        let mut inputs = arch.concat_width();
        for &w in &arch.blender_widths {
            blender.push(push(inputs, w, arch.activation));
            inputs = w;
        }
        blender.push(push(inputs, 1, Activation::Identity));

        let mut concat_offsets = Vec::with_capacity(arch.concat_nodes.len() + 1);
        let mut acc = 0;
        concat_offsets.push(0);
        for &n in &arch.concat_nodes {
            acc += n;
            concat_offsets.push(acc);
        }

        Self {
            branches,
            blender,
            concat_offsets,
            n_params: next,
        }
    }

    pub fn n_params(&self) -> usize {
        self.n_params
    }

    pub fn branch(&self, b: usize) -> &[DenseLayer] {
        &self.branches[b]
    }

    pub fn blender(&self) -> &[DenseLayer] {
        &self.blender
    }

    /// Start offsets of each block's nodes in the concatenation layer, plus the total width.
    pub fn concat_offsets(&self) -> &[usize] {
        &self.concat_offsets
    }

    pub fn layers(&self) -> impl Iterator<Item = &DenseLayer> {
        self.branches.iter().flatten().chain(self.blender.iter())
    }

    pub fn n_layers(&self) -> usize {
        self.layers().count()
    }

    pub fn weight_offset(&self, layer: usize, row: usize, col: usize) -> Option<usize> {
        let l = self.layers().nth(layer)?;
        (row < l.outputs && col < l.inputs).then(|| l.weights + row * l.inputs + col)
    }

    pub fn bias_offset(&self, layer: usize, row: usize) -> Option<usize> {
        let l = self.layers().nth(layer)?;
        (row < l.outputs).then(|| l.biases + row)
    }
}
