//! JSON checkpoints for [`GanState`] and CSV export of its loss history.
//!
//! Parameters are stored bit-exactly, together with optimizer moments and
//! the training rng, so a resumed run continues exactly where it stopped.

use std::io::Write;
use std::path::Path;

use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{net, GanConfig, GanState, GateAudit, LossRecord, Provenance};
use crate::data::IdentityLabel;
use crate::error::{Error, Result};
use crate::nn::{Adam, BnStats, ParamBlob, Sequential};
use crate::seed;

pub const GAN_CHECKPOINT_FORMAT: &str = "reidgen-gan";
pub const GAN_CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NetState {
    pub params: ParamBlob,
    pub bn_stats: Vec<BnStats>,
}

impl NetState {
    fn capture(net: &Sequential) -> Self {
        NetState {
            params: ParamBlob::from_params(net.params()),
            bn_stats: net.bn_stats(),
        }
    }

    fn restore(&self, net: &mut Sequential, which: &str) -> Result<()> {
        self.params
            .load_into(&mut net.params_mut())
            .and_then(|_| net.set_bn_stats(&self.bn_stats))
            .map_err(|e| Error::Checkpoint(format!("{which}: {e}")))
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GanCheckpoint {
    pub format: String,
    pub version: u32,
    pub config: GanConfig,
    pub class: Option<IdentityLabel>,
    pub iteration: u64,
    pub provenance: Provenance,
    pub generator: NetState,
    pub discriminator: NetState,
    pub g_opt: Adam,
    pub d_opt: Adam,
    pub rng: ChaCha8Rng,
    pub loss_history: Vec<LossRecord>,
    pub audit: GateAudit,
    pub pending_real: Option<f64>,
}

impl GanCheckpoint {
    pub fn from_state(state: &GanState) -> Self {
        GanCheckpoint {
            format: GAN_CHECKPOINT_FORMAT.into(),
            version: GAN_CHECKPOINT_VERSION,
            config: state.config.clone(),
            class: state.class,
            iteration: state.iteration,
            provenance: state.provenance.clone(),
            generator: NetState::capture(&state.generator),
            discriminator: NetState::capture(&state.discriminator),
            g_opt: state.g_opt.clone(),
            d_opt: state.d_opt.clone(),
            rng: state.rng.clone(),
            loss_history: state.loss_history.clone(),
            audit: state.audit,
            pending_real: state.pending_real,
        }
    }

    pub fn into_state(self) -> Result<GanState> {
        if self.format != GAN_CHECKPOINT_FORMAT || self.version != GAN_CHECKPOINT_VERSION {
            return Err(Error::Checkpoint(format!(
                "unsupported checkpoint {} v{}",
                self.format, self.version
            )));
        }
        self.config.validate()?;
        // Initial values are overwritten below; any rng will do.
        let mut rng = seed::rng(0, "gan-restore", 0);
        let mut generator = net::build_generator(&self.config, &mut rng);
        let mut discriminator = net::build_discriminator(&self.config, &mut rng);
        self.generator.restore(&mut generator, "generator")?;
        self.discriminator.restore(&mut discriminator, "discriminator")?;
        Ok(GanState {
            config: self.config,
            class: self.class,
            generator,
            discriminator,
            g_opt: self.g_opt,
            d_opt: self.d_opt,
            iteration: self.iteration,
            loss_history: self.loss_history,
            rng: self.rng,
            provenance: self.provenance,
            audit: self.audit,
            pending_real: self.pending_real,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string(self).map_err(|e| Error::Checkpoint(e.to_string()))?;
        std::fs::write(path, text).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_str(&text)
            .map_err(|e| Error::Checkpoint(format!("{}: {e}", path.display())))
    }
}

impl GanState {
    pub fn save(&self, path: &Path) -> Result<()> {
        GanCheckpoint::from_state(self).save(path)
    }

    pub fn load(path: &Path) -> Result<Self> {
        GanCheckpoint::load(path)?.into_state()
    }
}

/// Writes `iteration,d_loss_real,d_loss_fake,g_loss`; a missing real loss is
/// an empty field.
pub fn export_loss_csv(history: &[LossRecord], path: &Path) -> Result<()> {
    let mut f = std::io::BufWriter::new(std::fs::File::create(path).map_err(|e| Error::io(path, e))?);
    let mut write = || -> std::io::Result<()> {
        writeln!(f, "iteration,d_loss_real,d_loss_fake,g_loss")?;
        for (i, r) in history.iter().enumerate() {
            let real = r.d_loss_real.map(|v| v.to_string()).unwrap_or_default();
            writeln!(f, "{},{},{},{}", i + 1, real, r.d_loss_fake, r.g_loss)?;
        }
        f.flush()
    };
    write().map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gan::{LatentBatch, TrainOptions};

    fn tiny() -> GanConfig {
        GanConfig {
            latent_dim: 4,
            image_size: 8,
            channel_schedule: vec![4],
            batch_size: 4,
            filter_enabled: false,
            ..Default::default()
        }
    }

    fn toy() -> Vec<crate::data::Sample> {
        let cfg = crate::data::ToyCorpusConfig {
            patch_size: 8,
            sessions: 2,
            per_session: 10,
            ..Default::default()
        };
        crate::data::synth_toy_corpus(&cfg, 3).unwrap().into_samples()
    }

    #[test]
    fn resume_matches_uninterrupted_run() {
        let dir = tempfile::tempdir().unwrap();
        let data = toy();
        let opts = TrainOptions::default();
        let mut full = GanState::init(&tiny(), 4).unwrap();
        super::super::train_dcgan(&mut full, &data, None, 6, &opts).unwrap();

        let mut half = GanState::init(&tiny(), 4).unwrap();
        super::super::train_dcgan(&mut half, &data, None, 3, &opts).unwrap();
        let path = dir.path().join("g.json");
        half.save(&path).unwrap();
        let mut resumed = GanState::load(&path).unwrap();
        super::super::train_dcgan(&mut resumed, &data, None, 3, &opts).unwrap();

        assert_eq!(full.generator_params(), resumed.generator_params());
        assert_eq!(full.loss_history, resumed.loss_history);
        assert_eq!(full.id(), resumed.id());
        let z = LatentBatch::zeros(2, 4);
        assert_eq!(full.generate(&z), resumed.generate(&z));
    }

    #[test]
    fn corrupt_checkpoint_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("g.json");
        let mut ck = GanCheckpoint::from_state(&GanState::init(&tiny(), 1).unwrap());
        ck.config.channel_schedule = vec![8];
        ck.save(&path).unwrap();
        assert!(matches!(GanState::load(&path), Err(Error::Checkpoint(_))));
        std::fs::write(&path, "{").unwrap();
        assert!(matches!(GanState::load(&path), Err(Error::Checkpoint(_))));
    }

    #[test]
    fn loss_csv_has_one_row_per_iteration() {
        let dir = tempfile::tempdir().unwrap();
        let mut s = GanState::init(&tiny(), 1).unwrap();
        super::super::train_dcgan(&mut s, &toy(), None, 4, &TrainOptions::default()).unwrap();
        let path = dir.path().join("loss.csv");
        export_loss_csv(&s.loss_history, &path).unwrap();
        let text = std::fs::read_to_string(path).unwrap();
        assert_eq!(text.lines().count(), 5);
    }
}
