//! Model files: a JSON document followed by a `sha256:<hex>` integrity line.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::layout::WeightLayout;
use super::model::{MannModel, TrainingMetadata};
use super::spec::{ArchitectureSpec, BlockSpec};
use super::standardize::{Standardizer, TargetScale};
use super::MannError;

pub const MODEL_FORMAT_VERSION: u32 = 1;
const CHECKSUM_PREFIX: &str = "sha256:";

#[derive(Debug, Clone, Serialize, Deserialize)]
struct Standardization {
    features: Standardizer,
    target: TargetScale,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct ModelFile {
    format_version: u32,
    architecture: ArchitectureSpec,
    block_spec: BlockSpec,
    standardization: Standardization,
    weights: Vec<f64>,
    seed: u64,
    activation_means: Option<Vec<f64>>,
    training_metadata: TrainingMetadata,
}

fn checksum(body: &str) -> String {
    hex::encode(Sha256::digest(body.as_bytes()))
}

/// Appends the integrity line to a serialized document.
pub(crate) fn seal(body: &str) -> String {
    format!("{body}\n{CHECKSUM_PREFIX}{}\n", checksum(body))
}

/// Serializes the model to the sealed text form.
pub fn encode_model(model: &MannModel) -> String {
    let file = ModelFile {
        format_version: MODEL_FORMAT_VERSION,
        architecture: model.architecture.clone(),
        block_spec: model.block_spec.clone(),
        standardization: Standardization {
            features: model.standardizer.clone(),
            target: model.target_scale,
        },
        weights: model.weights.clone(),
        seed: model.seed,
        activation_means: model.activation_means.clone(),
        training_metadata: model.training.clone(),
    };
    seal(&serde_json::to_string(&file).expect("model serializes"))
}

pub fn decode_model(text: &str) -> Result<MannModel, MannError> {
    let corrupt = |msg: &str| MannError::CorruptModel(msg.to_string());
    let trimmed = text.strip_suffix('\n').ok_or_else(|| corrupt("missing trailer"))?;
    let (body, trailer) = trimmed
        .rsplit_once('\n')
        .ok_or_else(|| corrupt("missing checksum line"))?;
    let digest = trailer
        .strip_prefix(CHECKSUM_PREFIX)
        .ok_or_else(|| corrupt("malformed checksum line"))?;
    if digest != checksum(body) {
        return Err(corrupt("checksum mismatch"));
    }

    let value: serde_json::Value =
        serde_json::from_str(body).map_err(|e| MannError::CorruptModel(e.to_string()))?;
    let version = value
        .get("format_version")
        .and_then(serde_json::Value::as_u64)
        .ok_or_else(|| corrupt("missing format_version"))?;
    if version != u64::from(MODEL_FORMAT_VERSION) {
        return Err(MannError::VersionMismatch {
            found: version,
            supported: MODEL_FORMAT_VERSION,
        });
    }
    let file: ModelFile =
        serde_json::from_value(value).map_err(|e| MannError::CorruptModel(e.to_string()))?;

    let layout = WeightLayout::new(&file.architecture, &file.block_spec);
    if let Some(means) = &file.activation_means {
        if means.len() != file.architecture.concat_width() {
            return Err(corrupt("activation means do not match concat width"));
        }
    }
    let mut model = MannModel::from_parts(
        file.architecture,
        file.block_spec,
        file.standardization.features,
        file.standardization.target,
        file.weights,
        file.seed,
    )
    .map_err(|e| MannError::CorruptModel(e.to_string()))?;
    debug_assert_eq!(model.layout, layout);
    model.activation_means = file.activation_means;
    model.training = file.training_metadata;
    Ok(model)
}

pub fn save_model(model: &MannModel, path: impl AsRef<Path>) -> Result<(), MannError> {
    fs::write(path, encode_model(model))?;
    Ok(())
}

pub fn load_model(path: impl AsRef<Path>) -> Result<MannModel, MannError> {
    let bytes = fs::read(path)?;
    let text = String::from_utf8(bytes).map_err(|_| MannError::CorruptModel("not UTF-8".into()))?;
    decode_model(&text)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mann::{train, OutputHead, TrainConfig};
    use crate::matrix::Matrix;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn trained() -> MannModel {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let x = Matrix::from_vec(80, 4, (0..320).map(|_| rng.random_range(-2.0..2.0)).collect());
        let y: Vec<f64> = x.iter_rows().map(|r| r[0] * r[1] + r[3].powi(2)).collect();
        let spec = BlockSpec::contiguous(&[3, 1]).unwrap();
        let arch = ArchitectureSpec::default_for(&spec, OutputHead::LinearRegression);
        train(&x, &y, &spec, &arch, &TrainConfig { epochs: 3, ..Default::default() }).unwrap()
    }

    #[test]
    fn round_trip_reproduces_outputs_bitwise() {
        let model = trained();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.model");
        save_model(&model, &path).unwrap();
        let back = load_model(&path).unwrap();

        let mut rng = ChaCha8Rng::seed_from_u64(10);
        let x = Matrix::from_vec(100, 4, (0..400).map(|_| rng.random_range(-3.0..3.0)).collect());
        assert_eq!(model.predict(&x).unwrap(), back.predict(&x).unwrap());
        assert_eq!(model.activation_means(), back.activation_means());
        assert_eq!(model.training(), back.training());
    }

    #[test]
    fn truncated_file_is_corrupt() {
        let text = encode_model(&trained());
        for cut in [0, 10, text.len() / 2, text.len() - 5] {
            assert!(matches!(decode_model(&text[..cut]), Err(MannError::CorruptModel(_))));
        }
    }

    #[test]
    fn flipped_byte_is_corrupt() {
        let text = encode_model(&trained()).replacen("\"seed\":0", "\"seed\":1", 1);
        assert!(matches!(decode_model(&text), Err(MannError::CorruptModel(_))));
    }

    #[test]
    fn future_version_is_rejected() {
        let text = encode_model(&trained());
        let body = text.split('\n').next().unwrap();
        let future = body.replacen("\"format_version\":1", "\"format_version\":99", 1);
        assert!(matches!(
            decode_model(&seal(&future)),
            Err(MannError::VersionMismatch { found: 99, .. })
        ));
    }
}
