//! Binary checkpoint (little-endian):
//!
//! ```text
//! "VSCK" | version u32 | meta_len u32 | meta JSON (UTF-8)
//! | section count u32
//! | per section: name_len u32 | name | rank u32 | dims u32×rank | f32 payload
//! ```
//!
//! Sections are named after the parameters (`embedding/0.weight`,
//! `classifier/weight`, `ga_params/w_q`, `semantic_mlp/…`, `margin/beta`) plus
//! `visual_bank/rows`. The meta block records both configs and the iteration count.

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{Model, ModelConfig, TrainConfig, TrainOutcome};
use crate::error::{Error, Result};
use crate::features::{read_file, write_file, Reader};
use crate::numerics::{HasParameters, Tensor};
use crate::visual::VisualBank;

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"VSCK";
pub const CHECKPOINT_VERSION: u32 = 1;
const BANK_SECTION: &str = "visual_bank/rows";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CheckpointMeta {
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub iteration: u64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub meta: CheckpointMeta,
    pub sections: Vec<(String, Tensor<f32>)>,
}

impl Checkpoint {
    pub fn new(model: &Model, bank: &VisualBank, meta: CheckpointMeta) -> Self {
        let mut sections: Vec<(String, Tensor<f32>)> = model
            .parameters()
            .into_iter()
            .map(|p| (p.name.clone(), p.value.clone()))
            .collect();
        sections.push((BANK_SECTION.to_string(), bank.rows.clone()));
        Self { meta, sections }
    }

    pub fn from_outcome(out: &TrainOutcome) -> Self {
        Self::new(
            &out.model,
            &out.bank,
            CheckpointMeta {
                model: out.model_config.clone(),
                train: out.config.clone(),
                iteration: out.curve.len() as u64,
            },
        )
    }

    pub fn section(&self, name: &str) -> Option<&Tensor<f32>> {
        self.sections.iter().find(|(n, _)| n == name).map(|(_, t)| t)
    }

    /// Rebuilds the model and visual bank.
    pub fn restore(&self) -> Result<(Model, VisualBank)> {
        let mut model = Model::<f32>::new(&self.meta.model, 0, self.meta.train.margin_beta)?;
        model.assign(&self.sections)?;
        let rows = self
            .section(BANK_SECTION)
            .ok_or_else(|| Error::Config(format!("checkpoint lacks section {BANK_SECTION}")))?;
        let mut bank = VisualBank::new(
            self.meta.model.num_classes,
            self.meta.model.embed_dim,
            self.meta.train.alpha,
        )?;
        if rows.shape() != bank.rows.shape() {
            return Err(Error::dim(format!(
                "bank section has shape {:?}, expected {:?}",
                rows.shape(),
                bank.rows.shape()
            )));
        }
        bank.rows = rows.clone();
        Ok((model, bank))
    }

    pub fn encode(&self) -> Vec<u8> {
        let meta = serde_json::to_string(&self.meta).expect("config serializes");
        let mut out = Vec::new();
        out.extend_from_slice(CHECKPOINT_MAGIC);
        out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
        put_str(&mut out, &meta);
        out.extend_from_slice(&(self.sections.len() as u32).to_le_bytes());
        for (name, t) in &self.sections {
            put_str(&mut out, name);
            out.extend_from_slice(&(t.shape().len() as u32).to_le_bytes());
            for &d in t.shape() {
                out.extend_from_slice(&(d as u32).to_le_bytes());
            }
            for v in t.data() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out
    }

    pub fn decode(bytes: &[u8], path: &Path) -> Result<Self> {
        let mut r = Reader { path, bytes, pos: 0 };
        r.magic(CHECKPOINT_MAGIC)?;
        r.version()?;
        let start = r.pos;
        let meta_text = r.string("config")?;
        let meta: CheckpointMeta = serde_json::from_str(&meta_text).map_err(|e| Error::Format {
            path: path.display().to_string(),
            offset: start as u64,
            message: format!("bad config block: {e}"),
        })?;
        let count = r.u32("section count")? as usize;
        let mut sections = Vec::with_capacity(count.min(1024));
        for _ in 0..count {
            let name = r.string("section name")?;
            let rank = r.u32("rank")? as usize;
            if rank == 0 || rank > 8 {
                return Err(r.err(format!("section {name} has rank {rank}")));
            }
            let mut shape = Vec::with_capacity(rank);
            for _ in 0..rank {
                shape.push(r.u32("dimension")? as usize);
            }
            if shape.contains(&0) {
                return Err(r.err(format!("section {name} has an empty dimension")));
            }
            let n = shape
                .iter()
                .try_fold(1usize, |a, &d| a.checked_mul(d))
                .ok_or_else(|| r.err("section size overflow"))?;
            let data = r.f32_block(n, &name)?;
            sections.push((name, Tensor::from_parts(shape, data)));
        }
        r.finish()?;
        Ok(Self { meta, sections })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        write_file(path.as_ref(), &self.encode())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        Self::decode(&read_file(path)?, path)
    }
}

fn put_str(out: &mut Vec<u8>, s: &str) {
    out.extend_from_slice(&(s.len() as u32).to_le_bytes());
    out.extend_from_slice(s.as_bytes());
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::training::TrainConfig;

    fn sample() -> Checkpoint {
        let train = TrainConfig {
            embed_dim: 6,
            head_hidden: vec![5],
            semantic_hidden: vec![4],
            ..TrainConfig::desk()
        };
        let model_cfg = train.model_config(4, 3, Some(2));
        let model = Model::<f32>::new(&model_cfg, 9, 1.2).unwrap();
        let mut bank = VisualBank::new(3, 6, 0.9).unwrap();
        bank.update(1, &[1.0, 2.0, 0.0, 0.0, 0.5, -1.0]).unwrap();
        Checkpoint::new(
            &model,
            &bank,
            CheckpointMeta {
                model: model_cfg,
                train,
                iteration: 17,
            },
        )
    }

    #[test]
    fn round_trip_is_bit_exact() {
        let ck = sample();
        let bytes = ck.encode();
        let back = Checkpoint::decode(&bytes, Path::new("x")).unwrap();
        assert_eq!(back, ck);
        assert_eq!(back.encode(), bytes);
        let (m, b) = back.restore().unwrap();
        assert_eq!(Checkpoint::new(&m, &b, back.meta.clone()), ck);
        assert!(ck.section("classifier/weight").is_some());
        assert!(ck.section("semantic_mlp/1.bias").is_some());
    }

    #[test]
    fn corrupt_files_report_offsets() {
        let bytes = sample().encode();
        let e = Checkpoint::decode(&bytes[..bytes.len() - 3], Path::new("x")).unwrap_err();
        assert!(matches!(e, Error::Format { .. }));
        let mut bad = bytes.clone();
        bad[0] = b'X';
        match Checkpoint::decode(&bad, Path::new("x")) {
            Err(Error::Format { offset, .. }) => assert_eq!(offset, 0),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn missing_section_fails_restore() {
        let mut ck = sample();
        ck.sections.retain(|(n, _)| n != "ga_params/w_o");
        assert!(ck.restore().is_err());
    }
}
