use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use super::MannError;

/// One named group of input columns.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Block {
    pub name: String,
    pub features: Vec<usize>,
}

/// Partition of the input columns `[0, N)` into disjoint, non-empty blocks.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "Vec<Block>", into = "Vec<Block>")]
pub struct BlockSpec {
    blocks: Vec<Block>,
    n_features: usize,
}

impl BlockSpec {
    pub fn new(blocks: Vec<Block>) -> Result<Self, MannError> {
        if blocks.is_empty() {
            return Err(MannError::InvalidBlockSpec("at least one block is required".into()));
        }
        let mut seen = BTreeSet::new();
        for block in &blocks {
            if block.features.is_empty() {
                return Err(MannError::InvalidBlockSpec(format!(
                    "block '{}' has no features",
                    block.name
                )));
            }
            for &f in &block.features {
                if !seen.insert(f) {
                    return Err(MannError::InvalidBlockSpec(format!(
                        "feature {f} assigned to more than one block"
                    )));
                }
            }
        }
        let n_features = seen.len();
        // Disjoint indices cover [0, N) exactly iff the largest one is N - 1.
        if seen.last().copied() != Some(n_features - 1) {
            return Err(MannError::InvalidBlockSpec(format!(
                "feature indices must cover 0..{n_features} without gaps"
            )));
        }
        Ok(Self { blocks, n_features })
    }

    /// Consecutive blocks `B1, B2, ...` of the given sizes.
    pub fn contiguous(sizes: &[usize]) -> Result<Self, MannError> {
        let mut start = 0;
        let blocks = sizes
            .iter()
            .enumerate()
            .map(|(i, &n)| {
                let block = Block {
                    name: format!("B{}", i + 1),
                    features: (start..start + n).collect(),
                };
                start += n;
                block
            })
            .collect();
        Self::new(blocks)
    }

    pub fn len(&self) -> usize {
        self.blocks.len()
    }

    pub fn is_empty(&self) -> bool {
        self.blocks.is_empty()
    }

    pub fn n_features(&self) -> usize {
        self.n_features
    }

    pub fn blocks(&self) -> &[Block] {
        &self.blocks
    }

    pub fn block(&self, b: usize) -> &Block {
        &self.blocks[b]
    }

    pub fn names(&self) -> Vec<String> {
        self.blocks.iter().map(|b| b.name.clone()).collect()
    }

    /// Block index owning each feature column.
    pub fn feature_owner(&self) -> Vec<usize> {
        let mut owner = vec![0; self.n_features];
        for (b, block) in self.blocks.iter().enumerate() {
            for &f in &block.features {
                owner[f] = b;
            }
        }
        owner
    }
}

impl TryFrom<Vec<Block>> for BlockSpec {
    type Error = MannError;

    fn try_from(blocks: Vec<Block>) -> Result<Self, Self::Error> {
        Self::new(blocks)
    }
}

impl From<BlockSpec> for Vec<Block> {
    fn from(spec: BlockSpec) -> Self {
        spec.blocks
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Activation {
    Tanh,
    Relu,
    Sigmoid,
    Identity,
}

impl Activation {
    #[inline]
    pub fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Tanh => x.tanh(),
            Activation::Relu => x.max(0.0),
            Activation::Sigmoid => sigmoid(x),
            Activation::Identity => x,
        }
    }

    /// Derivative expressed through the activated value `y = apply(x)`.
    #[inline]
    pub fn derivative_from_output(self, y: f64) -> f64 {
        match self {
            Activation::Tanh => 1.0 - y * y,
            Activation::Relu => {
                if y > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Sigmoid => y * (1.0 - y),
            Activation::Identity => 1.0,
        }
    }
}

#[inline]
pub(crate) fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum OutputHead {
    LinearRegression,
    SigmoidBinaryClassification,
}

/// Layer widths of a multiblock network.
///
/// Each block runs through its own branch of hidden layers followed by a dense
/// layer onto `concat_nodes[b]` nodes. A branch with no hidden layers is the
/// identity: its block's inputs are copied into the concatenation layer, so
/// `concat_nodes[b]` must equal the block's feature count.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ArchitectureSpec {
    pub branch_widths: Vec<Vec<usize>>,
    pub concat_nodes: Vec<usize>,
    pub blender_widths: Vec<usize>,
    pub activation: Activation,
    pub head: OutputHead,
}

impl ArchitectureSpec {
    /// One tanh hidden layer of width `2 * N_b` per branch, 8 concat nodes
    /// per block and a 32-wide tanh blender layer.
    pub fn default_for(block_spec: &BlockSpec, head: OutputHead) -> Self {
        Self::with_widths(block_spec, head, 8, &[32])
    }

    pub fn with_widths(
        block_spec: &BlockSpec,
        head: OutputHead,
        concat_nodes: usize,
        blender_widths: &[usize],
    ) -> Self {
        Self {
            branch_widths: block_spec
                .blocks()
                .iter()
                .map(|b| vec![2 * b.features.len()])
                .collect(),
            concat_nodes: vec![concat_nodes; block_spec.len()],
            blender_widths: blender_widths.to_vec(),
            activation: Activation::Tanh,
            head,
        }
    }

    pub fn concat_width(&self) -> usize {
        self.concat_nodes.iter().sum()
    }

    pub fn validate(&self, block_spec: &BlockSpec) -> Result<(), MannError> {
        let invalid = |msg: String| Err(MannError::InvalidArchitecture(msg));
        if self.branch_widths.len() != block_spec.len() || self.concat_nodes.len() != block_spec.len()
        {
            return invalid(format!(
                "architecture describes {} branches / {} concat groups for {} blocks",
                self.branch_widths.len(),
                self.concat_nodes.len(),
                block_spec.len()
            ));
        }
        for (b, (widths, &n_b)) in self.branch_widths.iter().zip(&self.concat_nodes).enumerate() {
            if n_b == 0 || widths.iter().any(|&w| w == 0) {
                return invalid(format!("branch {b} has a zero-width layer"));
            }
            let n_features = block_spec.block(b).features.len();
            if widths.is_empty() && n_b != n_features {
                return invalid(format!(
                    "depth-0 branch {b} needs {n_features} concat nodes, got {n_b}"
                ));
            }
        }
        if self.blender_widths.iter().any(|&w| w == 0) {
            return invalid("blender has a zero-width layer".into());
        }
        Ok(())
    }
}
