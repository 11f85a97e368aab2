//! Synthetic multiblock regression problems with known block importances.
//!
//! Features are drawn from `N(0, Σ)` with a random correlation matrix `Σ`, split
//! into blocks by a seeded permutation, and the target is a noisy sum of
//! per-block quadratic forms `xᵀ β⁽ᵇ⁾ x`.

use std::fs;
use std::io::Write;
use std::path::Path;

use nalgebra::{DMatrix, SymmetricEigen};
use rand::seq::SliceRandom;
use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::mann::{mean_std, Block, BlockSpec};
use crate::matrix::Matrix;

#[derive(Debug, Error)]
pub enum SimError {
    #[error("invalid simulation spec: {0}")]
    InvalidSpec(String),
    #[error("dataset carries no coefficient matrices")]
    MissingBetaMatrices,
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
    #[error("malformed dataset file: {0}")]
    Malformed(String),
}

/// Coefficients of one block's quadratic form.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BlockParams {
    pub n_features: usize,
    pub n_important: usize,
    pub beta_imp: f64,
    pub beta_int: f64,
}

/// The reference setups: S1x without and S2x with interaction terms.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Setup {
    S1a,
    S1b,
    S1c,
    S2a,
    S2b,
    S2c,
}

impl Setup {
    fn interaction(self) -> f64 {
        match self {
            Setup::S1a | Setup::S1b | Setup::S1c => 0.0,
            Setup::S2a | Setup::S2b | Setup::S2c => 1.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimSpec {
    pub blocks: Vec<BlockParams>,
    /// `σ_noise` as a fraction of the standard deviation of the noiseless target.
    #[serde(default = "default_noise_fraction")]
    pub noise_fraction: f64,
    pub n_train: usize,
    pub n_test: usize,
    #[serde(default)]
    pub seed: u64,
}

fn default_noise_fraction() -> f64 {
    0.10
}

impl SimSpec {
    /// Blocks of equal size with the given `(N_imp, β_imp)` per block.
    pub fn uniform_blocks(
        n_per_block: usize,
        levels: &[(usize, f64)],
        beta_int: f64,
        n_train: usize,
        n_test: usize,
        seed: u64,
    ) -> Self {
        Self {
            blocks: levels
                .iter()
                .map(|&(n_important, beta_imp)| BlockParams {
                    n_features: n_per_block,
                    n_important,
                    beta_imp,
                    beta_int,
                })
                .collect(),
            noise_fraction: default_noise_fraction(),
            n_train,
            n_test,
            seed,
        }
    }

    /// Full-size setup: 256 features in 8 blocks of 32, 10000 train / 10000 test.
    /// B1..B7 step linearly by one level, B8 carries no signal.
    pub fn full_setup(setup: Setup, seed: u64) -> Self {
        let levels: Vec<(usize, f64)> = (0..8)
            .map(|b| {
                if b == 7 {
                    return (0, 0.0);
                }
                let desc = 7 - b; // 7, 6, ..., 1
                match setup {
                    Setup::S1a | Setup::S2a => (2, desc as f64),
                    Setup::S1b | Setup::S2b => (desc, 2.0),
                    Setup::S1c | Setup::S2c => (b + 1, desc as f64),
                }
            })
            .collect();
        Self::uniform_blocks(32, &levels, setup.interaction(), 10_000, 10_000, seed)
    }

    /// Laptop-size analogue: blocks of 16 features, 4000 train / 4000 test.
    ///
    /// * S1a/S2a: 4 blocks, `N_imp = 2`, `β_imp = 4, 3, 2, 0`
    /// * S1b/S2b: 5 blocks, `N_imp = 4, 3, 2, 1, 0`, `β_imp = 2`
    /// * S1c/S2c: 5 blocks, `N_imp = 1, 2, 3, 4, 0`, `β_imp = 4, 3, 2, 1, 0`
    pub fn desk_setup(setup: Setup, seed: u64) -> Self {
        let levels: Vec<(usize, f64)> = match setup {
            Setup::S1a | Setup::S2a => vec![(2, 4.0), (2, 3.0), (2, 2.0), (0, 0.0)],
            Setup::S1b | Setup::S2b => vec![(4, 2.0), (3, 2.0), (2, 2.0), (1, 2.0), (0, 0.0)],
            Setup::S1c | Setup::S2c => vec![(1, 4.0), (2, 3.0), (3, 2.0), (4, 1.0), (0, 0.0)],
        };
        Self::uniform_blocks(16, &levels, setup.interaction(), 4000, 4000, seed)
    }

    pub fn n_features(&self) -> usize {
        self.blocks.iter().map(|b| b.n_features).sum()
    }

    pub fn validate(&self) -> Result<(), SimError> {
        let bad = |m: String| Err(SimError::InvalidSpec(m));
        if self.blocks.is_empty() {
            return bad("at least one block is required".into());
        }
        for (i, b) in self.blocks.iter().enumerate() {
            if b.n_features == 0 {
                return bad(format!("block {} has no features", i + 1));
            }
            if b.n_important > b.n_features {
                return bad(format!(
                    "block {} has N_imp = {} > N_b = {}",
                    i + 1,
                    b.n_important,
                    b.n_features
                ));
            }
            if !b.beta_imp.is_finite() || !b.beta_int.is_finite() {
                return bad(format!("block {} has non-finite coefficients", i + 1));
            }
        }
        if !(self.noise_fraction >= 0.0) || !self.noise_fraction.is_finite() {
            return bad("noise_fraction must be finite and non-negative".into());
        }
        if self.n_train < 2 || self.n_test < 2 {
            return bad("need at least 2 train and 2 test samples".into());
        }
        Ok(())
    }
}

/// A generated dataset together with everything needed to score rankings against it.
#[derive(Debug, Clone)]
pub struct SimDataset {
    pub spec: SimSpec,
    pub train_x: Matrix,
    pub train_y: Vec<f64>,
    pub test_x: Matrix,
    pub test_y: Vec<f64>,
    pub block_spec: BlockSpec,
    /// `β⁽ᵇ⁾` in block-local feature order (row/column `i` is `block_spec.block(b).features[i]`).
    pub betas: Vec<Matrix>,
    pub covariance: Matrix,
    pub sigma_noise: f64,
    /// Standard deviation of the noiseless target over all generated samples.
    pub signal_std: f64,
}

/// Lower-triangular `N_b x N_b` coefficient matrix: `β_imp` on the first `N_imp`
/// diagonal entries and `β_int` strictly below the diagonal inside that corner.
pub fn beta_matrix(params: &BlockParams) -> Matrix {
    let n = params.n_features;
    let mut beta = Matrix::zeros(n, n);
    for i in 0..params.n_important {
        beta.set(i, i, params.beta_imp);
        for j in 0..i {
            beta.set(i, j, params.beta_int);
        }
    }
    beta
}

/// Random correlation matrix: `A Aᵀ` for standard-normal `A`, rescaled to unit diagonal.
/// Negative eigenvalues from round-off are clipped to zero.
pub fn random_correlation_matrix(n: usize, seed: u64) -> Matrix {
    assert!(n >= 1, "correlation matrix needs n >= 1");
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let a = DMatrix::<f64>::from_fn(n, n, |_, _| rng.sample(StandardNormal));
    let s = &a * a.transpose();
    let mut r = normalize_unit_diagonal(&s);

    let eig = SymmetricEigen::new(r.clone());
    if eig.eigenvalues.iter().any(|&l| l < 0.0) {
        let clipped = eig.eigenvalues.map(|l| l.max(0.0));
        let rebuilt = &eig.eigenvectors
            * DMatrix::from_diagonal(&clipped)
            * eig.eigenvectors.transpose();
        r = normalize_unit_diagonal(&rebuilt);
    }
    Matrix::from_vec(n, n, (0..n * n).map(|k| r[(k / n, k % n)]).collect())
}

fn normalize_unit_diagonal(s: &DMatrix<f64>) -> DMatrix<f64> {
    let n = s.nrows();
    let d: Vec<f64> = (0..n).map(|i| s[(i, i)].sqrt()).collect();
    DMatrix::from_fn(n, n, |i, j| {
        if i == j {
            1.0
        } else {
            // Average both triangles so the result is exactly symmetric.
            0.5 * (s[(i, j)] + s[(j, i)]) / (d[i] * d[j])
        }
    })
}

/// Lower-triangular `L` with `L Lᵀ = Σ`, falling back to `V √Λ` when `Σ` is only semi-definite.
fn sampling_factor(cov: &Matrix) -> DMatrix<f64> {
    let n = cov.rows();
    let m = DMatrix::from_fn(n, n, |i, j| cov.get(i, j));
    match m.clone().cholesky() {
        Some(c) => c.l(),
        None => {
            let eig = SymmetricEigen::new(m);
            let roots = eig.eigenvalues.map(|l| l.max(0.0).sqrt());
            eig.eigenvectors * DMatrix::from_diagonal(&roots)
        }
    }
}

/// `Σ_b (x⁽ᵇ⁾)ᵀ β⁽ᵇ⁾ x⁽ᵇ⁾` split per block.
pub fn block_terms(x: &[f64], block_spec: &BlockSpec, betas: &[Matrix]) -> Vec<f64> {
    block_spec
        .blocks()
        .iter()
        .zip(betas)
        .map(|(block, beta)| quadratic_form(x, &block.features, beta))
        .collect()
}

fn quadratic_form(x: &[f64], features: &[usize], beta: &Matrix) -> f64 {
    let mut acc = 0.0;
    for (i, &fi) in features.iter().enumerate() {
        let row = beta.row(i);
        for (j, &fj) in features.iter().enumerate() {
            let c = row[j];
            if c != 0.0 {
                acc += c * x[fi] * x[fj];
            }
        }
    }
    acc
}

/// Draws the dataset described by `spec`. Fully determined by `spec.seed`.
pub fn generate(spec: &SimSpec) -> Result<SimDataset, SimError> {
    spec.validate()?;
    let n = spec.n_features();
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);

    let covariance = random_correlation_matrix(n, rng.next_u64());

    let mut perm: Vec<usize> = (0..n).collect();
    perm.shuffle(&mut rng);
    let mut start = 0;
    let blocks = spec
        .blocks
        .iter()
        .enumerate()
        .map(|(b, p)| {
            let features = perm[start..start + p.n_features].to_vec();
            start += p.n_features;
            Block {
                name: format!("B{}", b + 1),
                features,
            }
        })
        .collect();
    let block_spec = BlockSpec::new(blocks).map_err(|e| SimError::InvalidSpec(e.to_string()))?;
    let betas: Vec<Matrix> = spec.blocks.iter().map(beta_matrix).collect();

    let factor = sampling_factor(&covariance);
    let total = spec.n_train + spec.n_test;
    let mut x = Matrix::zeros(total, n);
    let mut z = vec![0.0; n];
    for i in 0..total {
        z.iter_mut().for_each(|v| *v = rng.sample(StandardNormal));
        let row = x.row_mut(i);
        for (r, out) in row.iter_mut().enumerate() {
            *out = (0..n).map(|c| factor[(r, c)] * z[c]).sum::<f64>();
        }
    }

    let g: Vec<f64> = x
        .iter_rows()
        .map(|row| block_terms(row, &block_spec, &betas).iter().sum())
        .collect();
    let (_, signal_std) = mean_std(&g);
    let sigma_noise = spec.noise_fraction * signal_std;
    let y: Vec<f64> = g
        .iter()
        .map(|&gi| {
            let e: f64 = rng.sample(StandardNormal);
            gi + sigma_noise * e
        })
        .collect();

    let train_idx: Vec<usize> = (0..spec.n_train).collect();
    let test_idx: Vec<usize> = (spec.n_train..total).collect();
    Ok(SimDataset {
        spec: spec.clone(),
        train_x: x.select_rows(&train_idx),
        train_y: y[..spec.n_train].to_vec(),
        test_x: x.select_rows(&test_idx),
        test_y: y[spec.n_train..].to_vec(),
        block_spec,
        betas,
        covariance,
        sigma_noise,
        signal_std,
    })
}

/// Reference importance paradigms derived from the known coefficients.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Paradigm {
    CompositeSum,
    CompositeMean,
    CompositeMax,
    KnockIn,
    KnockOut,
}

impl SimDataset {
    /// Per-block reference scores; higher means more important under every paradigm.
    ///
    /// Knock-in scores are `-Var(y - t_b)` and knock-out scores `Var(y - Σ_{b'≠b} t_b')`,
    /// where `t_b` is block `b`'s quadratic term, estimated on the test split.
    pub fn ground_truth_scores(&self, paradigm: Paradigm) -> Result<Vec<f64>, SimError> {
        if self.betas.len() != self.block_spec.len() {
            return Err(SimError::MissingBetaMatrices);
        }
        let entries = |beta: &Matrix| beta.as_slice().to_vec();
        let scores = match paradigm {
            Paradigm::CompositeSum => self.betas.iter().map(|b| entries(b).iter().sum()).collect(),
            Paradigm::CompositeMean => self
                .betas
                .iter()
                .map(|b| {
                    let e = entries(b);
                    e.iter().sum::<f64>() / e.len() as f64
                })
                .collect(),
            Paradigm::CompositeMax => self
                .betas
                .iter()
                .map(|b| entries(b).into_iter().fold(f64::NEG_INFINITY, f64::max))
                .collect(),
            Paradigm::KnockIn | Paradigm::KnockOut => {
                let terms: Vec<Vec<f64>> = self
                    .test_x
                    .iter_rows()
                    .map(|row| block_terms(row, &self.block_spec, &self.betas))
                    .collect();
                (0..self.block_spec.len())
                    .map(|b| {
                        let residual: Vec<f64> = terms
                            .iter()
                            .zip(&self.test_y)
                            .map(|(t, &y)| match paradigm {
                                Paradigm::KnockIn => y - t[b],
                                _ => y - (t.iter().sum::<f64>() - t[b]),
                            })
                            .collect();
                        let var = mean_std(&residual).1.powi(2);
                        if paradigm == Paradigm::KnockIn {
                            -var
                        } else {
                            var
                        }
                    })
                    .collect()
            }
        };
        Ok(scores)
    }

    pub fn sidecar(&self, config_hash: Option<String>) -> SimSidecar {
        SimSidecar {
            config_hash,
            spec: self.spec.clone(),
            block_spec: self.block_spec.clone(),
            betas: self.betas.clone(),
            covariance: self.covariance.clone(),
            sigma_noise: self.sigma_noise,
            signal_std: self.signal_std,
        }
    }

    /// Writes `train.csv`, `test.csv` and `sidecar.json` into `dir`.
    pub fn export(&self, dir: &Path, config_hash: Option<&str>) -> Result<(), SimError> {
        fs::create_dir_all(dir)?;
        write_split_csv(&dir.join("train.csv"), &self.train_x, &self.train_y, config_hash)?;
        write_split_csv(&dir.join("test.csv"), &self.test_x, &self.test_y, config_hash)?;
        let sidecar = self.sidecar(config_hash.map(str::to_string));
        fs::write(dir.join("sidecar.json"), serde_json::to_string_pretty(&sidecar)? + "\n")?;
        Ok(())
    }

    /// Reads back a directory written by [`SimDataset::export`].
    pub fn import(dir: &Path) -> Result<Self, SimError> {
        let sidecar: SimSidecar = serde_json::from_str(&fs::read_to_string(dir.join("sidecar.json"))?)?;
        let (train_x, train_y) = read_split_csv(&dir.join("train.csv"))?;
        let (test_x, test_y) = read_split_csv(&dir.join("test.csv"))?;
        if train_x.cols() != sidecar.block_spec.n_features() || test_x.cols() != train_x.cols() {
            return Err(SimError::Malformed("feature count disagrees with sidecar".into()));
        }
        Ok(Self {
            spec: sidecar.spec,
            train_x,
            train_y,
            test_x,
            test_y,
            block_spec: sidecar.block_spec,
            betas: sidecar.betas,
            covariance: sidecar.covariance,
            sigma_noise: sidecar.sigma_noise,
            signal_std: sidecar.signal_std,
        })
    }
}

/// JSON metadata written next to an exported dataset.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SimSidecar {
    pub config_hash: Option<String>,
    pub spec: SimSpec,
    pub block_spec: BlockSpec,
    pub betas: Vec<Matrix>,
    pub covariance: Matrix,
    pub sigma_noise: f64,
    pub signal_std: f64,
}

/// Features `x0..x{N-1}` and target `y`; an optional leading `# config_hash=` comment.
pub fn write_split_csv(path: &Path, x: &Matrix, y: &[f64], config_hash: Option<&str>) -> Result<(), SimError> {
    let mut file = fs::File::create(path)?;
    if let Some(hash) = config_hash {
        writeln!(file, "# config_hash={hash}")?;
    }
    let mut w = csv::Writer::from_writer(file);
    let mut header: Vec<String> = (0..x.cols()).map(|j| format!("x{j}")).collect();
    header.push("y".into());
    w.write_record(&header)?;
    for (row, target) in x.iter_rows().zip(y) {
        let mut rec: Vec<String> = row.iter().map(|v| format!("{v:?}")).collect();
        rec.push(format!("{target:?}"));
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_split_csv(path: &Path) -> Result<(Matrix, Vec<f64>), SimError> {
    let mut r = csv::ReaderBuilder::new().comment(Some(b'#')).from_path(path)?;
    let width = r.headers()?.len();
    if width < 2 {
        return Err(SimError::Malformed(format!("{}: need features and a target", path.display())));
    }
    let mut data = Vec::new();
    let mut y = Vec::new();
    let mut rows = 0;
    for rec in r.records() {
        let rec = rec?;
        for (j, field) in rec.iter().enumerate() {
            let v: f64 = field.parse().map_err(|_| {
                SimError::Malformed(format!("{}: row {} column {j} is not a number", path.display(), rows + 1))
            })?;
            if j + 1 == width {
                y.push(v);
            } else {
                data.push(v);
            }
        }
        rows += 1;
    }
    Ok((Matrix::from_vec(rows, width - 1, data), y))
}
