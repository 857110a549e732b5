//! Frozen model file layout (all integers little-endian):
//!
//! ```text
//! magic      8 bytes  "CLKPRED\0"
//! version    u32
//! header_len u32
//! header     header_len bytes of JSON (FrozenHeader)
//! count      u64      number of f64 values that follow
//! values     count x f64  parameters in declared order, then 6 calibration values if present
//! checksum   32 bytes SHA-256 of everything above
//! ```

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::ServingError;
use crate::calibration::MatrixScaling;
use crate::encoding::EncoderConfig;
use crate::model::{ModelConfig, ModelParams, TensorShape, TrainedModel, TrainingStats};
use crate::sessions::EventType;

pub const MAGIC: &[u8; 8] = b"CLKPRED\0";
pub const FORMAT_VERSION: u32 = 1;
const CHECKSUM_LEN: usize = 32;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrozenHeader {
    pub family_id: String,
    pub version_id: String,
    pub model_config: ModelConfig,
    pub encoder_config: EncoderConfig,
    pub filtered_types: Vec<EventType>,
    pub calibrated: bool,
    pub stats: TrainingStats,
    pub shapes: Vec<TensorShape>,
}

pub fn checksum(bytes: &[u8]) -> [u8; 32] {
    Sha256::digest(bytes).into()
}

pub fn serialize_model(model: &TrainedModel) -> Result<Vec<u8>, ServingError> {
    let header = FrozenHeader {
        family_id: model.family_id.clone(),
        version_id: model.version_id.clone(),
        model_config: model.config.clone(),
        encoder_config: model.encoder.clone(),
        filtered_types: model.filtered_types.clone(),
        calibrated: model.calibration.is_some(),
        stats: model.stats.clone(),
        shapes: model.params.shapes(),
    };
    let header = serde_json::to_vec(&header).map_err(|e| ServingError::Format(e.to_string()))?;
    let mut values = model.params.to_flat();
    if let Some(c) = &model.calibration {
        values.extend_from_slice(&c.to_flat());
    }
    let mut out = Vec::with_capacity(8 + 4 + 4 + header.len() + 8 + values.len() * 8 + CHECKSUM_LEN);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    out.extend_from_slice(&(header.len() as u32).to_le_bytes());
    out.extend_from_slice(&header);
    out.extend_from_slice(&(values.len() as u64).to_le_bytes());
    for v in values {
        out.extend_from_slice(&v.to_le_bytes());
    }
    let sum = checksum(&out);
    out.extend_from_slice(&sum);
    Ok(out)
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], ServingError> {
        let end = self.pos.checked_add(n).filter(|e| *e <= self.bytes.len());
        let end = end.ok_or_else(|| ServingError::Format(format!("truncated at byte {}", self.pos)))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32, ServingError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self) -> Result<u64, ServingError> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }
}

pub fn deserialize_model(bytes: &[u8]) -> Result<TrainedModel, ServingError> {
    if bytes.len() < MAGIC.len() + CHECKSUM_LEN {
        return Err(ServingError::Format("file too short".into()));
    }
    let (body, sum) = bytes.split_at(bytes.len() - CHECKSUM_LEN);
    if checksum(body) != sum {
        return Err(ServingError::Checksum);
    }
    let mut cur = Cursor { bytes: body, pos: 0 };
    if cur.take(8)? != MAGIC {
        return Err(ServingError::Format("bad magic".into()));
    }
    let version = cur.u32()?;
    if version != FORMAT_VERSION {
        return Err(ServingError::Format(format!("unsupported format version {version}")));
    }
    let header_len = cur.u32()? as usize;
    let header: FrozenHeader =
        serde_json::from_slice(cur.take(header_len)?).map_err(|e| ServingError::Format(format!("header: {e}")))?;
    header.model_config.validate().map_err(|e| ServingError::Format(e.to_string()))?;
    header.encoder_config.validate().map_err(|e| ServingError::Format(e.to_string()))?;
    if header.encoder_config.event_vector_dim != header.model_config.event_dim
        || header.encoder_config.metadata_vector_dim != header.model_config.metadata_dim
    {
        return Err(ServingError::Format("encoder and model dimensions disagree".into()));
    }

    let mut params = ModelParams::zeros(&header.model_config);
    if params.shapes() != header.shapes {
        return Err(ServingError::Format("declared shapes do not match the model config".into()));
    }
    let expected = params.len() + if header.calibrated { 6 } else { 0 };
    let count = cur.u64()? as usize;
    if count != expected {
        return Err(ServingError::Format(format!("expected {expected} values, found {count}")));
    }
    let raw = cur.take(count.checked_mul(8).ok_or_else(|| ServingError::Format("count overflow".into()))?)?;
    if cur.pos != body.len() {
        return Err(ServingError::Format("trailing bytes".into()));
    }
    let values: Vec<f64> = raw.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes"))).collect();
    params.fill_from(&values[..params.len()]);
    if !params.all_finite() {
        return Err(ServingError::Format("non-finite parameter".into()));
    }
    let calibration = if header.calibrated {
        let c: [f64; 6] = values[params.len()..].try_into().expect("6 calibration values");
        let ms = MatrixScaling::from_flat(&c);
        if !ms.is_finite() {
            return Err(ServingError::Format("non-finite calibration".into()));
        }
        Some(ms)
    } else {
        None
    };
    Ok(TrainedModel {
        family_id: header.family_id,
        version_id: header.version_id,
        config: header.model_config,
        encoder: header.encoder_config,
        filtered_types: header.filtered_types,
        params,
        calibration,
        stats: header.stats,
    })
}

#[cfg(test)]
pub(crate) mod tests {
    use super::*;
    use crate::model::SparseInput;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    pub(crate) fn sample_model(calibrated: bool) -> TrainedModel {
        let encoder = EncoderConfig::default_for(6);
        let config = ModelConfig {
            seq_len: 6,
            event_dim: encoder.event_vector_dim,
            metadata_dim: encoder.metadata_vector_dim,
            gru_units: 5,
            mlp_layer_sizes: vec![4, 3],
            ..Default::default()
        };
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let mut params = ModelParams::init(&config, &mut rng);
        for b in &mut params.output.bias {
            *b = rng.random_range(-0.5..0.5);
        }
        TrainedModel {
            family_id: "shop".into(),
            version_id: "v0001".into(),
            config,
            encoder,
            filtered_types: vec![EventType::Log],
            params,
            calibration: calibrated.then_some(MatrixScaling {
                w: [[1.1, -0.2], [0.3, 0.9]],
                b: [0.05, -0.7],
            }),
            stats: TrainingStats {
                val_auc: 0.8123456789012345,
                val_ece: Some(0.1 + 0.2),
                loss_curve: vec![0.7, 0.6],
                ..Default::default()
            },
        }
    }

    fn random_input(m: &TrainedModel, rng: &mut ChaCha8Rng) -> SparseInput {
        SparseInput {
            steps: (0..m.config.seq_len)
                .map(|_| {
                    let mut idx: Vec<u32> = (0..4).map(|_| rng.random_range(0..m.config.event_dim as u32)).collect();
                    idx.sort_unstable();
                    idx.dedup();
                    idx.into_iter().map(|j| (j, 1.0)).collect()
                })
                .collect(),
            metadata: (0..m.config.metadata_dim).map(|_| rng.random::<f64>()).collect(),
        }
    }

    #[test]
    fn round_trip_is_bit_exact() {
        for calibrated in [false, true] {
            let m = sample_model(calibrated);
            let bytes = serialize_model(&m).unwrap();
            let back = deserialize_model(&bytes).unwrap();
            assert_eq!(back, m);
            let mut rng = ChaCha8Rng::seed_from_u64(3);
            for _ in 0..1000 {
                let x = random_input(&m, &mut rng);
                let (a, b) = (m.predict_sparse(&x).unwrap(), back.predict_sparse(&x).unwrap());
                assert_eq!(a.value.to_bits(), b.value.to_bits());
            }
            assert_eq!(serialize_model(&back).unwrap(), bytes);
        }
    }

    #[test]
    fn every_single_bit_flip_is_rejected() {
        let bytes = serialize_model(&sample_model(true)).unwrap();
        let header_end = 16 + u32::from_le_bytes(bytes[12..16].try_into().unwrap()) as usize + 8;
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let mut positions: Vec<usize> = (0..header_end * 8).collect();
        positions.extend((0..4000).map(|_| rng.random_range(0..bytes.len() * 8)));
        positions.extend((bytes.len() - 32) * 8..bytes.len() * 8);
        for p in positions {
            let mut b = bytes.clone();
            b[p / 8] ^= 1 << (p % 8);
            assert!(deserialize_model(&b).is_err(), "flip at bit {p} accepted");
        }
    }

    #[test]
    fn truncation_is_rejected() {
        let bytes = serialize_model(&sample_model(false)).unwrap();
        for n in [0, 8, 40, bytes.len() - 1] {
            assert!(deserialize_model(&bytes[..n]).is_err());
        }
    }
}
