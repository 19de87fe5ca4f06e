//! CondenseNet-style re-identification classifier with learned group
//! convolutions, staged condensation, training and cost accounting.

mod cost;
mod model;
mod train;

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{BnStats, ParamBlob};

pub use cost::{conv_cost, count_params_flops, Cost};
pub use model::{build_condensenet, CondenseConfig, DenseLayer, LearnedGroupConv, ReidModel};
pub use train::{condensation_epochs, cosine_lr, train_reid, write_train_log, EpochLog, ReidTrainOptions};

/// Class probabilities over `N + 1` classes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreVector(pub Vec<f64>);

impl ScoreVector {
    /// Predicted class; ties go to the lower index.
    pub fn argmax(&self) -> usize {
        argmax(&self.0)
    }
}

pub(crate) fn argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in v.iter().enumerate() {
        if x > v[best] {
            best = i;
        }
    }
    best
}

pub const REID_CHECKPOINT_FORMAT: &str = "reidgen-condensenet";
pub const REID_CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ReidCheckpoint {
    pub format: String,
    pub version: u32,
    pub config: CondenseConfig,
    pub epoch: u64,
    pub stage: usize,
    pub params: ParamBlob,
    /// One `0`/`1` string per learned group convolution.
    pub masks: Vec<String>,
    pub bn_stats: Vec<BnStats>,
}

impl ReidModel {
    pub fn to_checkpoint(&self) -> ReidCheckpoint {
        ReidCheckpoint {
            format: REID_CHECKPOINT_FORMAT.into(),
            version: REID_CHECKPOINT_VERSION,
            config: self.config.clone(),
            epoch: self.epoch,
            stage: self.stage,
            params: ParamBlob::from_params(self.params()),
            masks: self
                .learned_convs()
                .map(|l| l.mask().iter().map(|&m| if m != 0.0 { '1' } else { '0' }).collect())
                .collect(),
            bn_stats: self.batch_norms().iter().map(|b| b.stats()).collect(),
        }
    }

    pub fn from_checkpoint(ck: &ReidCheckpoint) -> Result<ReidModel> {
        let bad = |m: String| Error::Checkpoint(m);
        if ck.format != REID_CHECKPOINT_FORMAT || ck.version != REID_CHECKPOINT_VERSION {
            return Err(bad(format!("unsupported checkpoint {} v{}", ck.format, ck.version)));
        }
        let mut model = build_condensenet(&ck.config, 0)?;
        ck.params.load_into(&mut model.params_mut()).map_err(bad)?;
        let stage = ck.stage;
        let lgcs: Vec<_> = model.learned_convs_mut().collect();
        if lgcs.len() != ck.masks.len() {
            return Err(bad("mask count does not match the architecture".into()));
        }
        for (lgc, bits) in lgcs.into_iter().zip(&ck.masks) {
            let mask: Vec<f64> = bits
                .chars()
                .map(|c| match c {
                    '0' => Ok(0.0),
                    '1' => Ok(1.0),
                    _ => Err(bad(format!("invalid mask character {c:?}"))),
                })
                .collect::<Result<_>>()?;
            if mask.len() != lgc.mask().len() {
                return Err(bad("mask length does not match its layer".into()));
            }
            lgc.conv.mask = Some(mask);
            lgc.stage = stage;
        }
        let bns = model.batch_norms_mut();
        if bns.len() != ck.bn_stats.len() {
            return Err(bad("batch-norm statistics do not match the architecture".into()));
        }
        for (bn, s) in bns.into_iter().zip(&ck.bn_stats) {
            if s.mean.len() != bn.channels || s.var.len() != bn.channels {
                return Err(bad("batch-norm statistics have the wrong width".into()));
            }
            bn.set_stats(s);
        }
        model.epoch = ck.epoch;
        model.stage = stage;
        Ok(model)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string(&self.to_checkpoint()).map_err(|e| Error::Checkpoint(e.to_string()))?;
        std::fs::write(path, text).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<ReidModel> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let ck: ReidCheckpoint = serde_json::from_str(&text)
            .map_err(|e| Error::Checkpoint(format!("{}: {e}", path.display())))?;
        ReidModel::from_checkpoint(&ck)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn argmax_prefers_lower_index_on_ties() {
        assert_eq!(argmax(&[0.2, 0.4, 0.4]), 1);
        assert_eq!(ScoreVector(vec![0.5, 0.5]).argmax(), 0);
    }

    #[test]
    fn checkpoint_round_trip() {
        let cfg = CondenseConfig {
            input_size: 8,
            stem_channels: 8,
            stage_depths: vec![1, 1],
            growth_rates: vec![4, 4],
            ..Default::default()
        };
        let mut m = build_condensenet(&cfg, 2).unwrap();
        m.condensation_step(1).unwrap();
        m.epoch = 7;
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("r.json");
        m.save(&path).unwrap();
        let back = ReidModel::load(&path).unwrap();
        assert_eq!(back.params(), m.params());
        assert_eq!((back.epoch, back.stage), (7, 1));
        let patch = crate::data::Patch::blank(8);
        assert_eq!(back.infer(&patch).unwrap(), m.infer(&patch).unwrap());
        let mut ck = m.to_checkpoint();
        ck.masks[0].pop();
        assert!(ReidModel::from_checkpoint(&ck).is_err());
    }
}
