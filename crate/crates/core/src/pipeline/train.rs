use ndarray::{Array2, Axis};
use serde::Serialize;

use super::losses::{class_weights, classification_loss_n, im_losses, source_loss};
use super::model::{OstarModel, TrainConfig};
use crate::data::LabeledDataset;
use crate::error::{Error, Result};
use crate::eval::balanced_accuracy;
use crate::labelshift::{ProportionVector, cma_update, soft_confusion, solve_proportions, target_prediction_marginal};
use crate::nncore::{AdamConfig, AdamState, DenseNet, adam_step};
use crate::ot::{critic_wd_loss, gradient_penalty, transport_cost_from_acts};
use crate::rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Stage {
    /// Alignment and classification only.
    Cal,
    /// Plus information maximization on the target classifier.
    CalSs,
    /// Plus information maximization through the encoder.
    CalSsg,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PretrainReport {
    pub final_loss: f64,
    pub source_accuracy: f64,
}

/// One record of the metrics stream. Losses are epoch means; fields are
/// `null` when the corresponding step did not run.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EpochMetrics {
    pub epoch: usize,
    pub loss_cls_n: Option<f64>,
    pub loss_wd: Option<f64>,
    pub loss_ot: Option<f64>,
    pub loss_ent: Option<f64>,
    pub loss_div: Option<f64>,
    pub p_n_estimate: Vec<f64>,
    pub p_n_l1_error: Option<f64>,
    pub balanced_accuracy_target: Option<f64>,
    pub stage: Stage,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunReport {
    pub pretrain: PretrainReport,
    pub epochs: Vec<EpochMetrics>,
    /// Target balanced accuracy of `f_S ∘ g` right after pretraining.
    pub source_only_accuracy: Option<f64>,
    /// Target balanced accuracy of the final `f_N ∘ g`.
    pub final_accuracy: Option<f64>,
    pub final_p_n: Vec<f64>,
    pub final_p_n_l1_error: Option<f64>,
}

/// Index batches for one pass: both sets shuffled from the run seed and the
/// epoch, `ceil(max(n, m) / N_b)` iterations, the shorter set wrapping.
struct Batches {
    source: Vec<usize>,
    target: Vec<usize>,
    size: usize,
    iters: usize,
}

impl Batches {
    fn new(n: usize, m: usize, size: usize, seed: u64, name: &str, epoch: usize) -> Self {
        let source = rng::permutation(n, &mut rng::stream(seed, &format!("{name}-source"), epoch as u64));
        let target = rng::permutation(m, &mut rng::stream(seed, &format!("{name}-target"), epoch as u64));
        Self {
            source,
            target,
            size,
            iters: n.max(m).div_ceil(size),
        }
    }

    fn take(perm: &[usize], it: usize, size: usize) -> Vec<usize> {
        let b = size.min(perm.len());
        (0..b).map(|j| perm[(it * b + j) % perm.len()]).collect()
    }

    fn source(&self, it: usize) -> Vec<usize> {
        Self::take(&self.source, it, self.size)
    }

    fn target(&self, it: usize) -> Vec<usize> {
        Self::take(&self.target, it, self.size)
    }
}

fn rows(x: &Array2<f64>, idx: &[usize]) -> Array2<f64> {
    x.select(Axis(0), idx)
}

fn picks(labels: &[usize], idx: &[usize]) -> Vec<usize> {
    idx.iter().map(|&i| labels[i]).collect()
}

/// Empirical label frequencies; every class must be present.
fn source_proportions(s: &LabeledDataset) -> Result<ProportionVector> {
    let counts = s.class_counts().ok_or_else(|| Error::InvalidDataset("source must be labeled".into()))?;
    if let Some(k) = counts.iter().position(|&c| c == 0) {
        return Err(Error::InvalidDataset(format!("class {k} has no source samples")));
    }
    let n = s.len() as f64;
    ProportionVector::new(counts.iter().map(|&c| c as f64 / n).collect())
}

/// Trains `g` and `f_S` jointly on source cross-entropy.
pub fn pretrain_encoder(
    encoder: &mut DenseNet,
    classifier: &mut DenseNet,
    s: &LabeledDataset,
    cfg: &TrainConfig,
) -> Result<PretrainReport> {
    source_proportions(s)?;
    let labels = s.labels()?;
    let mut opt_g = AdamState::new(encoder, AdamConfig::with_lr(cfg.pretrain_lr_encoder));
    let mut opt_f = AdamState::new(classifier, AdamConfig::with_lr(cfg.pretrain_lr_classifier));
    let mut final_loss = f64::NAN;
    for epoch in 0..cfg.pretrain_epochs {
        let perm = rng::permutation(s.len(), &mut rng::stream(cfg.seed, "pretrain", epoch as u64));
        let mut total = 0.0;
        let mut count = 0;
        for idx in perm.chunks(cfg.batch_size) {
            let x = rows(s.features(), idx);
            let y = picks(labels, idx);
            let acts = encoder.forward(&x)?;
            let (loss, fg, zg) = source_loss(classifier, acts.output(), &y)?;
            let gg = encoder.backward(&acts, &zg)?.grads;
            adam_step(classifier, &fg, &mut opt_f)?;
            adam_step(encoder, &gg, &mut opt_g)?;
            total += loss;
            count += 1;
        }
        final_loss = total / count as f64;
    }
    let pred = super::model::argmax_rows(&classifier.predict(&encoder.predict(s.features())?)?)?;
    let correct = pred.iter().zip(labels).filter(|(a, b)| a == b).count();
    Ok(PretrainReport {
        final_loss,
        source_accuracy: correct as f64 / s.len() as f64,
    })
}

#[derive(Debug, Default)]
struct Running {
    sum: f64,
    count: usize,
}

impl Running {
    fn add(&mut self, v: f64) {
        self.sum += v;
        self.count += 1;
    }

    fn mean(&self) -> Option<f64> {
        (self.count > 0).then(|| self.sum / self.count as f64)
    }
}

/// Per-epoch loss means of one alignment pass.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct AlignmentLosses {
    pub cls_n: Option<f64>,
    pub wd: Option<f64>,
    pub ot: Option<f64>,
}

#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct StageLosses {
    pub cls_n: Option<f64>,
    pub ent: Option<f64>,
    pub div: Option<f64>,
    pub source: Option<f64>,
}

/// Model plus optimizer state for the adaptation phase.
/// Moment decay rates of the min-max pair (critic and map).
fn adversarial(lr: f64) -> AdamConfig {
    AdamConfig {
        lr,
        beta1: 0.5,
        beta2: 0.9,
        ..AdamConfig::default()
    }
}

pub struct Trainer {
    pub model: OstarModel,
    pub config: TrainConfig,
    opt_critic: AdamState,
    opt_phi: AdamState,
    opt_fn: AdamState,
    opt_g: AdamState,
}

impl Trainer {
    pub fn new(model: OstarModel, config: TrainConfig) -> Self {
        Self {
            opt_critic: AdamState::new(&model.critic, adversarial(config.lr_critic)),
            opt_phi: AdamState::new(&model.phi, adversarial(config.lr_phi)),
            opt_fn: AdamState::new(&model.target_classifier, AdamConfig::with_lr(config.lr_classifier)),
            opt_g: AdamState::new(&model.encoder, AdamConfig::with_lr(config.lr_encoder)),
            model,
            config,
        }
    }

    /// Refreshes the proportion estimate from the confusion matrix of `f_N`
    /// on mapped source latents and its prediction marginal on the target.
    pub fn refresh_proportions(&mut self, s: &LabeledDataset, t: &LabeledDataset) -> Result<()> {
        let m = &self.model;
        let zn = m.phi.apply(&m.encode(s.features())?)?;
        let conf = soft_confusion(&m.target_classifier, &zn, s.labels()?)?;
        let marginal = target_prediction_marginal(&m.target_classifier, &m.encode(t.features())?, self.config.marginal)?;
        let est = solve_proportions(&conf, &marginal, &m.p_s)?;
        self.model.p_n = cma_update(&self.model.p_n, &est.proportions)?;
        Ok(())
    }

    /// One pass of critic, map and target-classifier updates with a frozen
    /// encoder.
    pub fn alignment_epoch(&mut self, s: &LabeledDataset, t: &LabeledDataset, epoch: usize) -> Result<AlignmentLosses> {
        let cfg = self.config.clone();
        let labels = s.labels()?;
        let k = self.model.num_classes();
        let zs_all = self.model.encode(s.features())?;
        let zt_all = self.model.encode(t.features())?;
        let batches = Batches::new(s.len(), t.len(), cfg.batch_size, cfg.seed, "align", epoch);
        let (mut cls, mut wd_run, mut ot_run) = (Running::default(), Running::default(), Running::default());
        for it in 0..batches.iters {
            let si = batches.source(it);
            let zs = rows(&zs_all, &si);
            let y = picks(labels, &si);
            let zt = rows(&zt_all, &batches.target(it));
            let w = class_weights(&y, &self.model.p_n.estimate, &self.model.p_s)?;

            if cfg.critic_enabled {
                let zn = self.model.phi.apply(&zs)?;
                for step in 0..cfg.critic_steps {
                    let wd = critic_wd_loss(&self.model.critic, &zn, &w, &zt)?;
                    let gp_seed = rng::derive_seed(cfg.seed, "gp", (epoch * batches.iters + it) as u64);
                    let gp = gradient_penalty(&self.model.critic, &zn, &zt, rng::derive_seed(gp_seed, "step", step as u64))?;
                    // Ascend L_wd − λ_gp · penalty.
                    let mut g = wd.critic_grads;
                    g.scale(-1.0);
                    let mut pg = gp.critic_grads;
                    pg.scale(cfg.lambda_gp);
                    g.add_assign(&pg);
                    adam_step(&mut self.model.critic, &g, &mut self.opt_critic)?;
                }
            }

            let acts = self.model.phi.forward(&zs)?;
            let cost = transport_cost_from_acts(&acts, &y, k, cfg.cost_mode)?;
            ot_run.add(cost.value);
            let mut out_grad = cost.out_grad * cfg.lambda_ot;
            let residual = cost
                .residual_grads
                .map(|rs| rs.into_iter().map(|r| r * cfg.lambda_ot).collect::<Vec<_>>());
            if cfg.critic_enabled {
                let wd = critic_wd_loss(&self.model.critic, &acts.output, &w, &zt)?;
                wd_run.add(wd.value);
                out_grad += &wd.mapped_grad;
            }
            let (phi_grads, _) = self.model.phi.backward(&acts, &out_grad, residual.as_deref())?;
            adam_step(&mut self.model.phi, &phi_grads, &mut self.opt_phi)?;

            let c = classification_loss_n(&self.model.target_classifier, &self.model.phi, &zs, &y, &w)?;
            cls.add(c.value);
            adam_step(&mut self.model.target_classifier, &c.classifier_grads, &mut self.opt_fn)?;
        }
        Ok(AlignmentLosses {
            cls_n: cls.mean(),
            wd: wd_run.mean(),
            ot: ot_run.mean(),
        })
    }

    /// Information maximization with the latent space fixed: updates `f_N`
    /// on the reweighted classification loss plus entropy and diversity.
    pub fn stage_ss(&mut self, s: &LabeledDataset, t: &LabeledDataset, epoch: usize) -> Result<StageLosses> {
        self.im_pass(s, t, epoch, false)
    }

    /// As [`Trainer::stage_ss`], also updating the encoder, anchored by the
    /// frozen source classifier's loss.
    pub fn stage_ssg(&mut self, s: &LabeledDataset, t: &LabeledDataset, epoch: usize) -> Result<StageLosses> {
        self.im_pass(s, t, epoch, true)
    }

    fn im_pass(&mut self, s: &LabeledDataset, t: &LabeledDataset, epoch: usize, with_encoder: bool) -> Result<StageLosses> {
        if !self.config.im_enabled {
            return Ok(StageLosses::default());
        }
        let cfg = self.config.clone();
        let labels = s.labels()?;
        let batches = Batches::new(s.len(), t.len(), cfg.batch_size, cfg.seed, "im", epoch);
        let (mut cls, mut ent, mut div, mut src) =
            (Running::default(), Running::default(), Running::default(), Running::default());
        for it in 0..batches.iters {
            let si = batches.source(it);
            let xs = rows(s.features(), &si);
            let xt = rows(t.features(), &batches.target(it));
            let y = picks(labels, &si);
            let w = class_weights(&y, &self.model.p_n.estimate, &self.model.p_s)?;
            let m = &self.model;
            let gs = m.encoder.forward(&xs)?;
            let gt = m.encoder.forward(&xt)?;

            let c = classification_loss_n(&m.target_classifier, &m.phi, gs.output(), &y, &w)?;
            let im = im_losses(&m.target_classifier, gt.output())?;
            cls.add(c.value);
            ent.add(im.entropy);
            div.add(im.diversity);
            let mut fg = c.classifier_grads;
            fg.add_assign(&im.classifier_grads);

            let encoder_grads = if with_encoder {
                let (sl, _, anchor) = source_loss(&m.source_classifier, gs.output(), &y)?;
                src.add(sl);
                let mut g = m.encoder.backward(&gs, &(c.latent_grad + &anchor))?.grads;
                g.add_assign(&m.encoder.backward(&gt, &im.latent_grad)?.grads);
                Some(g)
            } else {
                None
            };
            adam_step(&mut self.model.target_classifier, &fg, &mut self.opt_fn)?;
            if let Some(g) = encoder_grads {
                adam_step(&mut self.model.encoder, &g, &mut self.opt_g)?;
            }
        }
        Ok(StageLosses {
            cls_n: cls.mean(),
            ent: ent.mean(),
            div: div.mean(),
            source: src.mean(),
        })
    }

    pub fn stage_at(&self, epoch: usize) -> Stage {
        if !self.config.im_enabled {
            Stage::Cal
        } else if epoch < self.config.ss_epochs {
            Stage::CalSs
        } else {
            Stage::CalSsg
        }
    }

    /// One full epoch: optional proportion refresh, alignment, then the
    /// stage's information-maximization pass.
    pub fn epoch(&mut self, s: &LabeledDataset, t: &LabeledDataset, epoch: usize) -> Result<EpochMetrics> {
        if self.config.refreshes_at(epoch) {
            self.refresh_proportions(s, t)?;
        }
        let stage = self.stage_at(epoch);
        let a = self.alignment_epoch(s, t, epoch)?;
        let im = match stage {
            Stage::Cal => StageLosses::default(),
            Stage::CalSs => self.stage_ss(s, t, epoch)?,
            Stage::CalSsg => self.stage_ssg(s, t, epoch)?,
        };
        let (l1, acc) = oracle_metrics(&self.model, t)?;
        Ok(EpochMetrics {
            epoch,
            loss_cls_n: a.cls_n,
            loss_wd: a.wd,
            loss_ot: a.ot,
            loss_ent: im.ent,
            loss_div: im.div,
            p_n_estimate: self.model.p_n.estimate.values().to_vec(),
            p_n_l1_error: l1,
            balanced_accuracy_target: acc,
            stage,
        })
    }
}

/// Proportion error and balanced accuracy of `f_N ∘ g` against target
/// oracle labels, when present.
fn oracle_metrics(model: &OstarModel, t: &LabeledDataset) -> Result<(Option<f64>, Option<f64>)> {
    let Some(labels) = t.oracle_labels() else {
        return Ok((None, None));
    };
    let truth = ProportionVector::from_counts(&t.class_frequencies().expect("labels present"))?;
    let pred = model.predict_target(t.features())?;
    Ok((
        Some(model.p_n.estimate.l1_distance(&truth)),
        Some(balanced_accuracy(&pred, labels, model.num_classes())?),
    ))
}

/// Full run: pretraining, then `epochs` adaptation epochs. Target oracle
/// labels, if any, feed only the reported metrics.
pub fn run_ostar(s: &LabeledDataset, t: &LabeledDataset, cfg: &TrainConfig) -> Result<(OstarModel, RunReport)> {
    run_ostar_with(s, t, cfg, |_| Ok(()))
}

/// [`run_ostar`] with a callback receiving each epoch's metrics as produced.
pub fn run_ostar_with(
    s: &LabeledDataset,
    t: &LabeledDataset,
    cfg: &TrainConfig,
    mut on_epoch: impl FnMut(&EpochMetrics) -> Result<()>,
) -> Result<(OstarModel, RunReport)> {
    cfg.validate()?;
    if s.dim() != t.dim() || s.num_classes() != t.num_classes() {
        return Err(Error::InvalidDataset(format!(
            "source is {}-d with {} classes, target is {}-d with {} classes",
            s.dim(),
            s.num_classes(),
            t.dim(),
            t.num_classes()
        )));
    }
    let p_s = source_proportions(s)?;
    let mut model = OstarModel::init(s.dim(), s.num_classes(), p_s, cfg)?;
    let pretrain = pretrain_encoder(&mut model.encoder, &mut model.source_classifier, s, cfg)?;
    model.target_classifier = model.source_classifier.clone();
    let source_only_accuracy = match t.oracle_labels() {
        Some(l) => Some(balanced_accuracy(&model.predict_source_only(t.features())?, l, model.num_classes())?),
        None => None,
    };
    let mut trainer = Trainer::new(model, cfg.clone());
    let mut epochs = Vec::with_capacity(cfg.epochs);
    for e in 0..cfg.epochs {
        let m = trainer.epoch(s, t, e)?;
        on_epoch(&m)?;
        epochs.push(m);
    }
    let model = trainer.model;
    let (l1, acc) = oracle_metrics(&model, t)?;
    let report = RunReport {
        pretrain,
        epochs,
        source_only_accuracy,
        final_accuracy: acc,
        final_p_n: model.p_n.estimate.values().to_vec(),
        final_p_n_l1_error: l1,
    };
    Ok((model, report))
}
