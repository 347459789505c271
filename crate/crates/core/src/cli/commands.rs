use std::fmt::Write as _;
use std::fs;
use std::io::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::config::{RunConfig, generate, load_data, pointer_of};
use crate::data::{LabeledDataset, write_feature_csv, write_label_csv};
use crate::error::{Error, Result};
use crate::eval::{
    AssumptionReport, BoundReport, EvalOptions, assumption_report, balanced_accuracy, bound_terms, conditional_matching,
    mean_displacement,
};
use crate::labelshift::ProportionVector;
use crate::ot::MonotonicityReport;
use crate::pipeline::{OstarModel, RunReport, load_model, run_ostar, run_ostar_with, save_model};

fn create_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

fn write(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

/// Writes `source.csv`, `target.csv` (labels withheld), `target_labels.csv`,
/// `probe.json` and the resolved `config.json` into `out`.
pub fn cmd_generate(cfg: &RunConfig, out: &Path) -> Result<MonotonicityReport> {
    let d = generate(&cfg.data)?;
    create_dir(out)?;
    write_feature_csv(&out.join("source.csv"), &d.source, true)?;
    write_feature_csv(&out.join("target.csv"), &d.target, false)?;
    let labels = d.target.oracle_labels().expect("generated targets carry oracle labels");
    write_label_csv(&out.join("target_labels.csv"), labels)?;
    write(&out.join("probe.json"), &serde_json::to_string_pretty(&d.probe)?)?;
    write(&out.join("config.json"), &serde_json::to_string_pretty(cfg)?)?;
    Ok(d.probe)
}

/// Trains and writes `model.json`, `metrics.jsonl` (one record per epoch,
/// streamed), `report.json` and `config.json` into `out`.
pub fn cmd_train(cfg: &RunConfig, out: &Path) -> Result<RunReport> {
    let (s, t) = load_data(&cfg.data, cfg.train.seed)?;
    create_dir(out)?;
    write(&out.join("config.json"), &serde_json::to_string_pretty(cfg)?)?;
    let path = out.join("metrics.jsonl");
    let mut file = fs::File::create(&path).map_err(|e| Error::io(&path, e))?;
    let (model, report) = run_ostar_with(&s, &t, &cfg.train, |m| {
        let line = serde_json::to_string(m)?;
        writeln!(file, "{line}").map_err(|e| Error::io(&path, e))
    })?;
    save_model(&out.join("model.json"), &model)?;
    write(&out.join("report.json"), &serde_json::to_string_pretty(&report)?)?;
    Ok(report)
}

/// A report section that needs target oracle labels.
#[derive(Debug, Clone, Serialize)]
#[serde(untagged)]
pub enum Availability<T> {
    Available(T),
    Unavailable { unavailable: String },
}

impl<T> Availability<T> {
    fn from_result(r: Result<T>) -> Result<Self> {
        match r {
            Ok(v) => Ok(Self::Available(v)),
            Err(Error::UnavailableOracle(why)) => Ok(Self::Unavailable { unavailable: why }),
            Err(e) => Err(e),
        }
    }

    pub fn available(&self) -> Option<&T> {
        match self {
            Self::Available(v) => Some(v),
            Self::Unavailable { .. } => None,
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct EvalMetrics {
    pub balanced_accuracy: Option<f64>,
    /// The frozen source classifier on the checkpoint's encoder.
    pub source_classifier_accuracy: Option<f64>,
    pub p_n_estimate: Vec<f64>,
    pub p_n_l1_error: Option<f64>,
    pub mean_displacement: f64,
    /// Pairing of mapped source classes to target classes.
    pub matching: Availability<Vec<usize>>,
    pub bound: Availability<BoundReport>,
    pub assumptions: Availability<AssumptionReport>,
}

/// Scatter rows: every source sample twice (`mapped` 0 for `g(x)`, 1 for
/// `φ(g(x))`) and every target sample once. Unknown classes are `-1`.
pub fn scatter_csv(model: &OstarModel, s: &LabeledDataset, t: &LabeledDataset) -> Result<String> {
    if model.encoder.output_dim() != 2 {
        return Err(Error::Usage(format!(
            "scatter export needs a 2-D latent space, this model has {}",
            model.encoder.output_dim()
        )));
    }
    let zs = model.encode(s.features())?;
    let zn = model.phi.apply(&zs)?;
    let zt = model.encode(t.features())?;
    let mut out = String::from("domain,class,z1,z2,mapped\n");
    let ys = s.labels()?;
    for (z, mapped) in [(&zs, 0), (&zn, 1)] {
        for (r, y) in z.rows().into_iter().zip(ys) {
            writeln!(out, "source,{y},{},{},{mapped}", r[0], r[1]).expect("writing to a string");
        }
    }
    let yt: Vec<i64> = match t.oracle_labels() {
        Some(l) => l.iter().map(|&y| y as i64).collect(),
        None => vec![-1; t.len()],
    };
    for (r, y) in zt.rows().into_iter().zip(yt) {
        writeln!(out, "target,{y},{},{},0", r[0], r[1]).expect("writing to a string");
    }
    Ok(out)
}

pub fn cmd_eval(cfg: &RunConfig, checkpoint: &Path, scatter: Option<&Path>) -> Result<EvalMetrics> {
    let model = load_model(checkpoint)?;
    let (s, t) = load_data(&cfg.data, cfg.train.seed)?;
    if s.dim() != model.encoder.input_dim() || s.num_classes() != model.num_classes() {
        return Err(Error::InvalidDataset(format!(
            "checkpoint expects {}-d inputs and {} classes, data has {} and {}",
            model.encoder.input_dim(),
            model.num_classes(),
            s.dim(),
            s.num_classes()
        )));
    }
    let opts = EvalOptions {
        max_points: cfg.eval.max_points,
        seed: cfg.train.seed,
    };
    let oracle = t.oracle_labels();
    let accuracy = |pred: Vec<usize>| -> Result<Option<f64>> {
        oracle.map(|l| balanced_accuracy(&pred, l, model.num_classes())).transpose()
    };
    let truth = t
        .class_frequencies()
        .map(|f| ProportionVector::from_counts(&f))
        .transpose()?;
    let metrics = EvalMetrics {
        balanced_accuracy: accuracy(model.predict_target(t.features())?)?,
        source_classifier_accuracy: accuracy(model.predict_source_only(t.features())?)?,
        p_n_estimate: model.p_n.estimate.values().to_vec(),
        p_n_l1_error: truth.map(|p| model.p_n.estimate.l1_distance(&p)),
        mean_displacement: mean_displacement(&model.phi, &model.encode(s.features())?)?,
        matching: Availability::from_result(conditional_matching(&model, &s, &t, cfg.eval.per_class, opts.seed))?,
        bound: Availability::from_result(bound_terms(&model, &s, &t, &opts))?,
        assumptions: Availability::from_result(assumption_report(
            &model.encoder,
            &s,
            &t,
            cfg.eval.per_class,
            opts.seed,
        ))?,
    };
    if let Some(p) = scatter {
        write(p, &scatter_csv(&model, &s, &t)?)?;
    }
    Ok(metrics)
}

/// Ablation axes. Missing axes keep the configured value; seeds default to
/// the configured seed.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Sweep {
    pub lambda_ot: Option<Vec<f64>>,
    /// Initialization gain of the residual map.
    pub init_gain: Option<Vec<f64>>,
    pub im_enabled: Option<Vec<bool>>,
    pub seeds: Option<Vec<u64>>,
}

impl Sweep {
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let de = &mut serde_json::Deserializer::from_str(&text);
        serde_path_to_error::deserialize(de).map_err(|e| Error::Config {
            pointer: pointer_of(e.path()),
            message: format!("{}: {}", path.display(), e.inner()),
        })
    }

    /// `(lambda_ot, init_gain, im_enabled)` settings in sweep order.
    fn settings(&self, base: &RunConfig) -> Vec<(f64, f64, bool)> {
        let t = &base.train;
        let l = self.lambda_ot.clone().unwrap_or_else(|| vec![t.lambda_ot]);
        let g = self.init_gain.clone().unwrap_or_else(|| vec![t.phi_init_gain]);
        let im = self.im_enabled.clone().unwrap_or_else(|| vec![t.im_enabled]);
        let mut out = Vec::new();
        for &a in &l {
            for &b in &g {
                for &c in &im {
                    out.push((a, b, c));
                }
            }
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AblationRow {
    pub lambda_ot: f64,
    pub init_gain: f64,
    pub im_enabled: bool,
    pub seed: u64,
    pub balanced_accuracy: Option<f64>,
    pub source_only_accuracy: Option<f64>,
    pub p_n_l1_error: Option<f64>,
    pub mean_displacement: f64,
}

const METRICS: [&str; 4] = ["balanced_accuracy", "source_only_accuracy", "p_n_l1_error", "mean_displacement"];

fn row_metrics(r: &AblationRow) -> [Option<f64>; 4] {
    [
        r.balanced_accuracy,
        r.source_only_accuracy,
        r.p_n_l1_error,
        Some(r.mean_displacement),
    ]
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

/// Mean ± sample standard deviation; empty when any run lacks the value.
fn summary(values: &[Option<f64>]) -> String {
    let Some(v) = values.iter().copied().collect::<Option<Vec<f64>>>() else {
        return String::new();
    };
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    let sd = if v.len() > 1 {
        (v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
    } else {
        0.0
    };
    format!("{mean:.6}±{sd:.6}")
}

/// Runs every (setting, seed) cell and writes the CSV: one row per run,
/// then one summary row per setting with `seed` = `summary`.
pub fn cmd_ablate(cfg: &RunConfig, sweep: &Sweep, out: &Path) -> Result<Vec<AblationRow>> {
    let seeds = sweep.seeds.clone().unwrap_or_else(|| vec![cfg.train.seed]);
    let settings = sweep.settings(cfg);
    if seeds.is_empty() || settings.is_empty() {
        return Err(Error::Usage("the sweep has no cells".into()));
    }
    let mut rows = Vec::new();
    for &(lambda_ot, init_gain, im_enabled) in &settings {
        for &seed in &seeds {
            let mut c = cfg.clone();
            c.train.lambda_ot = lambda_ot;
            c.train.phi_init_gain = init_gain;
            c.train.im_enabled = im_enabled;
            c.train.seed = seed;
            c.data.synthetic.seed = seed;
            c.train.validate()?;
            let (s, t) = load_data(&c.data, seed)?;
            let (model, report) = run_ostar(&s, &t, &c.train)?;
            rows.push(AblationRow {
                lambda_ot,
                init_gain,
                im_enabled,
                seed,
                balanced_accuracy: report.final_accuracy,
                source_only_accuracy: report.source_only_accuracy,
                p_n_l1_error: report.final_p_n_l1_error,
                mean_displacement: mean_displacement(&model.phi, &model.encode(s.features())?)?,
            });
            eprintln!("lambda_ot={lambda_ot} init_gain={init_gain} im={im_enabled} seed={seed} done");
        }
    }
    let mut text = format!("lambda_ot,init_gain,im_enabled,seed,{}\n", METRICS.join(","));
    for r in &rows {
        let m: Vec<String> = row_metrics(r).into_iter().map(fmt_opt).collect();
        writeln!(text, "{},{},{},{},{}", r.lambda_ot, r.init_gain, r.im_enabled, r.seed, m.join(",")).expect("string");
    }
    for chunk in rows.chunks(seeds.len()) {
        let cols: Vec<String> = (0..METRICS.len())
            .map(|j| summary(&chunk.iter().map(|r| row_metrics(r)[j]).collect::<Vec<_>>()))
            .collect();
        let r = &chunk[0];
        writeln!(text, "{},{},{},summary,{}", r.lambda_ot, r.init_gain, r.im_enabled, cols.join(",")).expect("string");
    }
    if let Some(dir) = out.parent().filter(|d| !d.as_os_str().is_empty()) {
        create_dir(dir)?;
    }
    write(out, &text)?;
    Ok(rows)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn summaries_use_sample_stdev() {
        assert_eq!(summary(&[Some(1.0), Some(3.0)]), "2.000000±1.414214");
        assert_eq!(summary(&[Some(1.0), None]), "");
        assert_eq!(summary(&[Some(5.0)]), "5.000000±0.000000");
    }

    #[test]
    fn sweep_settings_are_a_product() {
        let s = Sweep {
            lambda_ot: Some(vec![0.0, 1.0]),
            im_enabled: Some(vec![true, false]),
            ..Sweep::default()
        };
        let c = RunConfig::default();
        let got = s.settings(&c);
        assert_eq!(got.len(), 4);
        assert!(got.iter().all(|&(_, g, _)| g == c.train.phi_init_gain));
    }

    #[test]
    fn empty_sweep_is_a_usage_error() {
        let dir = tempfile::tempdir().unwrap();
        let s = Sweep {
            lambda_ot: Some(vec![]),
            ..Sweep::default()
        };
        let err = cmd_ablate(&RunConfig::default(), &s, &dir.path().join("a.csv")).unwrap_err();
        assert!(matches!(err, Error::Usage(_)));
        assert_eq!(err.exit_code(), 1);
    }
}
