use std::path::Path;

use serde::{Deserialize, Serialize};

use super::NormalizationRecord;
use crate::error::{Error, Result};
use crate::geometry::{Ensemble, Pose, ShapeParams, Superquadric, Vec3};

const VERSION: u64 = 1;

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct EnsembleFile {
    version: u64,
    normalization: NormalizationJson,
    primitives: Vec<PrimitiveJson>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct NormalizationJson {
    offset: [f64; 3],
    scale: f64,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct PrimitiveJson {
    alpha: [f64; 3],
    epsilon: [f64; 2],
    quaternion: [f64; 4],
    translation: [f64; 3],
    gamma: f64,
}

pub(crate) fn to_json(ensemble: &Ensemble, record: &NormalizationRecord) -> String {
    let file = EnsembleFile {
        version: VERSION,
        normalization: NormalizationJson {
            offset: record.offset.into(),
            scale: record.scale,
        },
        primitives: ensemble
            .primitives
            .iter()
            .zip(&ensemble.gamma)
            .map(|(sq, &gamma)| PrimitiveJson {
                alpha: sq.shape.alpha,
                epsilon: sq.shape.epsilon,
                quaternion: sq.pose.q,
                translation: sq.pose.t.into(),
                gamma,
            })
            .collect(),
    };
    // serde_json writes f64 with shortest round-trip formatting.
    serde_json::to_string_pretty(&file).expect("ensemble serialises")
}

pub(crate) fn from_json(text: &str) -> Result<(Ensemble, NormalizationRecord)> {
    let value: serde_json::Value =
        serde_json::from_str(text).map_err(|e| Error::Schema(format!("invalid JSON: {e}")))?;
    let version = value
        .get("version")
        .ok_or_else(|| Error::Schema("missing field `version`".into()))?
        .as_u64()
        .ok_or_else(|| Error::Schema("`version` must be a non-negative integer".into()))?;
    if version != VERSION {
        return Err(Error::UnsupportedVersion(version));
    }
    let file: EnsembleFile = serde_json::from_value(value).map_err(|e| Error::Schema(e.to_string()))?;
    let primitives = file
        .primitives
        .iter()
        .map(|p| {
            Superquadric::new(
                ShapeParams::new(p.alpha, p.epsilon)?,
                Pose {
                    q: p.quaternion,
                    t: Vec3::from(p.translation),
                },
            )
        })
        .collect::<Result<Vec<_>>>()
        .map_err(|e| Error::Schema(e.to_string()))?;
    let gamma = file.primitives.iter().map(|p| p.gamma).collect();
    let ensemble = Ensemble::new(primitives, gamma).map_err(|e| Error::Schema(e.to_string()))?;
    let scale = file.normalization.scale;
    if !(scale.is_finite() && scale > 0.0) {
        return Err(Error::Schema(format!("normalization scale {scale} must be positive")));
    }
    let record = NormalizationRecord {
        offset: Vec3::from(file.normalization.offset),
        scale,
    };
    Ok((ensemble, record))
}

pub fn save_ensemble(
    path: impl AsRef<Path>,
    ensemble: &Ensemble,
    record: &NormalizationRecord,
) -> Result<()> {
    std::fs::write(path, to_json(ensemble, record) + "\n")?;
    Ok(())
}

pub fn load_ensemble(path: impl AsRef<Path>) -> Result<(Ensemble, NormalizationRecord)> {
    from_json(&std::fs::read_to_string(path)?)
}
