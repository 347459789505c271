use std::path::Path;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::labelshift::{CmaState, MarginalMode, ProportionVector};
use crate::nncore::checkpoint::{CHECKPOINT_VERSION, NetRecord, ResidualRecord, check_version};
use crate::nncore::{ArchTag, DenseNet, InitScheme, NetSpec, ResidualMap, init_params};
use crate::ot::CostMode;
use crate::rng;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub seed: u64,
    pub latent_dim: usize,
    pub encoder_hidden: Vec<usize>,
    pub classifier_hidden: Vec<usize>,
    pub critic_hidden: Vec<usize>,
    pub phi_blocks: usize,
    pub phi_hidden: usize,
    /// Weight scheme and gain for the encoder, classifiers and critic.
    pub init_scheme: InitScheme,
    pub init_gain: f64,
    /// Weight scheme and gain for the residual map.
    pub phi_init_scheme: InitScheme,
    pub phi_init_gain: f64,
    /// Encoder and source classifier rates during pretraining.
    pub pretrain_lr_encoder: f64,
    pub pretrain_lr_classifier: f64,
    /// Encoder rate in the encoder-updating information-maximization stage.
    pub lr_encoder: f64,
    /// Target classifier rate.
    pub lr_classifier: f64,
    pub lr_phi: f64,
    pub lr_critic: f64,
    pub pretrain_epochs: usize,
    /// Alignment epochs after pretraining.
    pub epochs: usize,
    /// Proportion refresh period during the first `refresh_early_epochs`.
    pub refresh_early_period: usize,
    pub refresh_early_epochs: usize,
    pub refresh_late_period: usize,
    /// Epochs running the fixed-latent stage before the encoder stage.
    pub ss_epochs: usize,
    pub batch_size: usize,
    pub critic_steps: usize,
    pub lambda_gp: f64,
    pub lambda_ot: f64,
    pub cost_mode: CostMode,
    pub critic_enabled: bool,
    pub im_enabled: bool,
    pub marginal: MarginalMode,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            latent_dim: 2,
            encoder_hidden: vec![32, 32],
            classifier_hidden: vec![32],
            critic_hidden: vec![32, 32],
            phi_blocks: 10,
            phi_hidden: 16,
            init_scheme: InitScheme::Orthogonal,
            init_gain: 1.0,
            phi_init_scheme: InitScheme::Orthogonal,
            phi_init_gain: 0.02,
            pretrain_lr_encoder: 1e-3,
            pretrain_lr_classifier: 1e-2,
            lr_encoder: 1e-4,
            lr_classifier: 1e-3,
            lr_phi: 1e-3,
            lr_critic: 1e-2,
            pretrain_epochs: 10,
            epochs: 40,
            refresh_early_period: 2,
            refresh_early_epochs: 10,
            refresh_late_period: 5,
            ss_epochs: 10,
            batch_size: 200,
            critic_steps: 5,
            lambda_gp: 10.0,
            lambda_ot: 1e-2,
            cost_mode: CostMode::Static,
            critic_enabled: true,
            im_enabled: true,
            marginal: MarginalMode::Soft,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidSpec(m));
        if self.batch_size < 2 {
            return bad(format!("batch_size must be at least 2, got {}", self.batch_size));
        }
        if self.critic_steps == 0 {
            return bad("critic_steps must be at least 1".into());
        }
        if !(self.lambda_ot >= 0.0) || !(self.lambda_gp >= 0.0) {
            return bad("lambda_ot and lambda_gp must be nonnegative".into());
        }
        if self.ss_epochs > self.epochs {
            return bad(format!("ss_epochs ({}) exceeds epochs ({})", self.ss_epochs, self.epochs));
        }
        if self.refresh_early_period == 0 || self.refresh_late_period == 0 {
            return bad("refresh periods must be positive".into());
        }
        if self.latent_dim == 0 || self.phi_blocks == 0 || self.phi_hidden == 0 {
            return bad("latent_dim, phi_blocks and phi_hidden must be positive".into());
        }
        for (name, lr) in [
            ("pretrain_lr_encoder", self.pretrain_lr_encoder),
            ("pretrain_lr_classifier", self.pretrain_lr_classifier),
            ("lr_encoder", self.lr_encoder),
            ("lr_classifier", self.lr_classifier),
            ("lr_phi", self.lr_phi),
            ("lr_critic", self.lr_critic),
        ] {
            if !(lr > 0.0) {
                return bad(format!("{name} must be positive"));
            }
        }
        Ok(())
    }

    /// Whether the proportion estimate is refreshed at (0-indexed) `epoch`.
    pub fn refreshes_at(&self, epoch: usize) -> bool {
        if epoch < self.refresh_early_epochs {
            epoch % self.refresh_early_period == 0
        } else {
            epoch % self.refresh_late_period == 0
        }
    }
}

/// All networks of a run plus the current proportion estimate.
#[derive(Debug, Clone, PartialEq)]
pub struct OstarModel {
    pub encoder: DenseNet,
    pub source_classifier: DenseNet,
    pub target_classifier: DenseNet,
    pub phi: ResidualMap,
    pub critic: DenseNet,
    pub p_n: CmaState,
    /// Empirical source label frequencies.
    pub p_s: ProportionVector,
}

impl OstarModel {
    /// Freshly initialized networks; the target classifier starts as a copy
    /// of the source classifier.
    pub fn init(input_dim: usize, num_classes: usize, p_s: ProportionVector, cfg: &TrainConfig) -> Result<Self> {
        let s = cfg.seed;
        let d = cfg.latent_dim;
        let encoder = init_params(
            &NetSpec::new(ArchTag::Encoder, input_dim, &cfg.encoder_hidden, d),
            cfg.init_scheme,
            cfg.init_gain,
            rng::derive_seed(s, "encoder", 0),
        )?;
        let source_classifier = init_params(
            &NetSpec::new(ArchTag::Classifier, d, &cfg.classifier_hidden, num_classes),
            cfg.init_scheme,
            cfg.init_gain,
            rng::derive_seed(s, "classifier", 0),
        )?;
        let critic = init_params(
            &NetSpec::new(ArchTag::Critic, d, &cfg.critic_hidden, 1),
            cfg.init_scheme,
            cfg.init_gain,
            rng::derive_seed(s, "critic", 0),
        )?;
        let phi = ResidualMap::init(
            d,
            cfg.phi_hidden,
            cfg.phi_blocks,
            cfg.phi_init_scheme,
            cfg.phi_init_gain,
            rng::derive_seed(s, "phi", 0),
        )?;
        Ok(Self {
            target_classifier: source_classifier.clone(),
            encoder,
            source_classifier,
            phi,
            critic,
            p_n: CmaState::new(ProportionVector::uniform(num_classes)?),
            p_s,
        })
    }

    pub fn num_classes(&self) -> usize {
        self.p_s.len()
    }

    pub fn encode(&self, x: &Array2<f64>) -> Result<Array2<f64>> {
        self.encoder.predict(x)
    }

    /// Target predictions: `argmax f_N(g(x))`.
    pub fn predict_target(&self, x: &Array2<f64>) -> Result<Vec<usize>> {
        argmax_rows(&self.target_classifier.predict(&self.encode(x)?)?)
    }

    /// Source-only predictions: `argmax f_S(g(x))`.
    pub fn predict_source_only(&self, x: &Array2<f64>) -> Result<Vec<usize>> {
        argmax_rows(&self.source_classifier.predict(&self.encode(x)?)?)
    }
}

pub(crate) fn argmax_rows(scores: &Array2<f64>) -> Result<Vec<usize>> {
    Ok(scores
        .rows()
        .into_iter()
        .map(|r| crate::labelshift::argmax(r.iter().copied()))
        .collect())
}

/// Single-file JSON checkpoint of a whole model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelCheckpoint {
    pub version: String,
    pub encoder: NetRecord,
    pub source_classifier: NetRecord,
    pub target_classifier: NetRecord,
    pub phi: ResidualRecord,
    pub critic: NetRecord,
    pub p_n: ProportionVector,
    pub p_n_updates: u64,
    pub p_s: ProportionVector,
}

impl From<&OstarModel> for ModelCheckpoint {
    fn from(m: &OstarModel) -> Self {
        Self {
            version: CHECKPOINT_VERSION.to_string(),
            encoder: (&m.encoder).into(),
            source_classifier: (&m.source_classifier).into(),
            target_classifier: (&m.target_classifier).into(),
            phi: (&m.phi).into(),
            critic: (&m.critic).into(),
            p_n: m.p_n.estimate.clone(),
            p_n_updates: m.p_n.count,
            p_s: m.p_s.clone(),
        }
    }
}

impl TryFrom<ModelCheckpoint> for OstarModel {
    type Error = Error;

    fn try_from(c: ModelCheckpoint) -> Result<Self> {
        Ok(Self {
            encoder: c.encoder.try_into()?,
            source_classifier: c.source_classifier.try_into()?,
            target_classifier: c.target_classifier.try_into()?,
            phi: c.phi.try_into()?,
            critic: c.critic.try_into()?,
            p_n: CmaState {
                estimate: c.p_n,
                count: c.p_n_updates,
            },
            p_s: c.p_s,
        })
    }
}

pub fn save_model(path: &Path, model: &OstarModel) -> Result<()> {
    let text = serde_json::to_string(&ModelCheckpoint::from(model))?;
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

pub fn load_model(path: &Path) -> Result<OstarModel> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let value: serde_json::Value = serde_json::from_str(&text)?;
    check_version(&value)?;
    serde_json::from_value::<ModelCheckpoint>(value)?.try_into()
}
