//! Single training runs and rate sweeps over `n × seed`.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::Write;
use std::path::Path;
use std::sync::Mutex;
use std::time::Instant;

use rayon::prelude::*;
use serde::Serialize;

use super::config::{ExperimentConfig, Generator, SweepTask};
use crate::attacks::AttackConfig;
use crate::bounds::{eps_schedule, network_shape, schedule, Task};
use crate::data::{make_holder_target, sample_classification, sample_regression, Dataset, HolderTarget, PosteriorSpec};
use crate::error::{Error, Result};
use crate::losses::LossSpec;
use crate::nn::{Architecture, NetworkParams, Predictor};
use crate::risk::{adversarial_risk_lower, l2_sq_distance, sandwich, RiskReport};
use crate::train::{adv_train, ClampedNetwork, TrainConfig, TrainHistory};
use crate::util::mix_seed;

pub const SCHEMA_VERSION: &str = "v1";

/// Inputs and outputs of one sweep run. Failed runs carry the message in `error`
/// and NaN outputs.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunRecord {
    pub schema_version: String,
    pub task: String,
    pub seed: u64,
    pub n: usize,
    pub d: usize,
    pub alpha: String,
    pub eps: f64,
    pub k: f64,
    pub width: usize,
    pub depth: usize,
    pub loss: String,
    pub attack: String,
    pub natural: f64,
    pub adv_lower: f64,
    pub adv_upper: f64,
    /// `adv_lower` of the trained model minus that of the generating target.
    pub excess_adv: f64,
    pub l2_sq: f64,
    pub l2_sq_stderr: f64,
    pub kappa: f64,
    pub seconds: f64,
    pub error: String,
}

pub const CSV_HEADER: [&str; 21] = [
    "schema_version",
    "task",
    "seed",
    "n",
    "d",
    "alpha",
    "eps",
    "k",
    "width",
    "depth",
    "loss",
    "attack",
    "natural",
    "adv_lower",
    "adv_upper",
    "excess_adv",
    "l2_sq",
    "l2_sq_stderr",
    "kappa",
    "seconds",
    "error",
];

fn num(v: f64) -> String {
    format!("{v:?}")
}

impl RunRecord {
    pub fn csv_row(&self) -> Vec<String> {
        vec![
            self.schema_version.clone(),
            self.task.clone(),
            self.seed.to_string(),
            self.n.to_string(),
            self.d.to_string(),
            self.alpha.clone(),
            num(self.eps),
            num(self.k),
            self.width.to_string(),
            self.depth.to_string(),
            self.loss.clone(),
            self.attack.clone(),
            num(self.natural),
            num(self.adv_lower),
            num(self.adv_upper),
            num(self.excess_adv),
            num(self.l2_sq),
            num(self.l2_sq_stderr),
            num(self.kappa),
            format!("{:.3}", self.seconds),
            self.error.clone(),
        ]
    }

    /// Sandwich ordering and `κ ≤ K`; failed runs are exempt.
    pub fn validate(&self) -> Result<()> {
        if !self.error.is_empty() {
            return Ok(());
        }
        let tol = 1e-9;
        if !(self.natural <= self.adv_lower + tol && self.adv_lower <= self.adv_upper + tol) {
            return Err(Error::Invariant(format!(
                "sandwich ordering violated: {} <= {} <= {}",
                self.natural, self.adv_lower, self.adv_upper
            )));
        }
        if self.kappa > self.k * (1.0 + tol) {
            return Err(Error::Invariant(format!("kappa {} exceeds K = {}", self.kappa, self.k)));
        }
        Ok(())
    }
}

/// Trained network, evaluated through the clamp when one is configured.
pub enum Model {
    Plain(NetworkParams),
    Clamped(ClampedNetwork),
}

impl Model {
    pub fn new(params: NetworkParams, clamp: Option<f64>) -> Self {
        match clamp {
            Some(bound) => Model::Clamped(ClampedNetwork { params, bound }),
            None => Model::Plain(params),
        }
    }

    pub fn predictor(&self) -> &dyn Predictor {
        match self {
            Model::Plain(p) => p,
            Model::Clamped(c) => c,
        }
    }

    pub fn params(&self) -> &NetworkParams {
        match self {
            Model::Plain(p) => p,
            Model::Clamped(c) => &c.params,
        }
    }
}

/// Generating target shared by every run of a configuration.
pub fn target_for(cfg: &ExperimentConfig) -> Result<HolderTarget> {
    make_holder_target(cfg.data.d, cfg.data.alpha_f64(), cfg.data.modes, cfg.data.seed)
}

/// Draw `n` samples from the configured generator.
pub fn sample(cfg: &ExperimentConfig, generator: Generator, target: &HolderTarget, n: usize, eps: f64, seed: u64) -> Result<Dataset> {
    match generator {
        Generator::Regression => sample_regression(target, cfg.data.sigma, n, eps, seed),
        Generator::Classification => {
            let post = PosteriorSpec::smooth(target.clone(), cfg.data.margin)?;
            sample_classification(&post, n, eps, seed)
        }
    }
}

pub struct TrainOutcome {
    pub model: Model,
    pub history: TrainHistory,
    pub train_config: TrainConfig,
    pub loss: LossSpec,
    pub data: Dataset,
}

/// Train once with the `[data]`, `[model]`, `[attack]` and `[train]` sections.
pub fn train_from_config(cfg: &ExperimentConfig) -> Result<TrainOutcome> {
    let target = target_for(cfg)?;
    let eps = cfg.data.eps;
    let data = sample(cfg, cfg.data.generator, &target, cfg.data.n, eps, cfg.data.seed)?;
    let arch = Architecture::uniform(cfg.data.d, cfg.model.width, cfg.model.depth)?;
    let attack = (eps > 0.0).then(|| cfg.attack.to_config(eps, data.len(), data.dim()));
    let train_config = cfg.train.to_config(attack, cfg.model.budget, cfg.model.clamp, cfg.train.seed)?;
    let loss = cfg.train.loss_spec(cfg.model.clamp, cfg.model.budget, eps)?;
    let (params, history) = adv_train(&data, &arch, &train_config, &loss)?;
    Ok(TrainOutcome {
        model: Model::new(params, cfg.model.clamp),
        history,
        train_config,
        loss,
        data,
    })
}

/// Risk brackets of `params` on a fresh evaluation sample.
pub fn risk_from_config(cfg: &ExperimentConfig, params: &NetworkParams) -> Result<RiskReport> {
    let target = target_for(cfg)?;
    let eps = cfg.data.eps;
    let eval = sample(cfg, cfg.data.generator, &target, cfg.data.eval_n, eps, eval_seed(cfg.data.seed))?;
    let model = Model::new(params.clone(), cfg.model.clamp);
    let loss = cfg.train.loss_spec(cfg.model.clamp, params.kappa().max(cfg.model.budget), eps)?;
    let attack = cfg.attack.to_config(eps, eval.len(), eval.dim());
    sandwich(model.predictor(), &loss, &eval, &attack)
}

fn eval_seed(seed: u64) -> u64 {
    mix_seed(seed, 0xe7a1)
}

fn generator_for(task: SweepTask) -> Generator {
    match task {
        SweepTask::ClassificationHinge => Generator::Classification,
        _ => Generator::Regression,
    }
}

/// Attack radius of a sweep run.
pub fn run_eps(cfg: &ExperimentConfig, n: usize) -> Result<f64> {
    match cfg.sweep.eps_rule {
        super::config::EpsRule::Fixed(e) => Ok(e),
        super::config::EpsRule::ScheduleEn { scale } => eps_schedule(
            n as u64,
            cfg.data.d as u32,
            cfg.data.alpha,
            cfg.sweep.task.rate_task(),
            scale,
        ),
    }
}

fn blank_record(cfg: &ExperimentConfig, n: usize, seed: u64) -> RunRecord {
    RunRecord {
        schema_version: SCHEMA_VERSION.into(),
        task: cfg.sweep.task.name().into(),
        seed,
        n,
        d: cfg.data.d,
        alpha: cfg.data.alpha.to_string(),
        eps: f64::NAN,
        k: f64::NAN,
        width: 0,
        depth: 0,
        loss: String::new(),
        attack: String::new(),
        natural: f64::NAN,
        adv_lower: f64::NAN,
        adv_upper: f64::NAN,
        excess_adv: f64::NAN,
        l2_sq: f64::NAN,
        l2_sq_stderr: f64::NAN,
        kappa: f64::NAN,
        seconds: 0.0,
        error: String::new(),
    }
}

/// One sweep run: schedule the class for `n`, train, evaluate on a fresh sample.
pub fn run_one(cfg: &ExperimentConfig, target: &HolderTarget, n: usize, seed: u64) -> RunRecord {
    let start = Instant::now();
    let mut rec = blank_record(cfg, n, seed);
    if let Err(e) = fill_run(cfg, target, n, seed, &mut rec) {
        rec.error = e.to_string();
    }
    if let Err(e) = rec.validate() {
        rec.error = e.to_string();
    }
    rec.seconds = start.elapsed().as_secs_f64();
    rec
}

fn fill_run(cfg: &ExperimentConfig, target: &HolderTarget, n: usize, seed: u64, rec: &mut RunRecord) -> Result<()> {
    let task = cfg.sweep.task;
    let (d, alpha) = (cfg.data.d as u32, cfg.data.alpha);
    let eps = run_eps(cfg, n)?;
    rec.eps = eps;
    let sched = schedule(n as u64, d, alpha, task.rate_task())?;
    let shape = network_shape(&sched, d, alpha, cfg.model.width_const)?;
    let k = sched.k.max(1.0);
    rec.k = k;
    rec.width = shape.width;
    rec.depth = shape.depth;

    let generator = generator_for(task);
    let data_seed = mix_seed(seed, n as u64);
    let train_data = sample(cfg, generator, target, n, eps, data_seed)?;
    let eval = sample(cfg, generator, target, cfg.data.eval_n, eps, eval_seed(data_seed))?;
    let loss = match task.rate_task() {
        Task::Quadratic => LossSpec::quadratic(cfg.train.m_u.unwrap_or(cfg.model.clamp.unwrap_or(1.0) + k * eps))?,
        Task::Lipschitz => LossSpec::hinge(),
    };
    rec.loss = loss.name();

    let train_attack = (eps > 0.0).then(|| cfg.attack.to_config(eps, n, cfg.data.d));
    let mut train_cfg = cfg.train.to_config(train_attack, k, cfg.model.clamp, seed)?;
    if cfg.sweep.min_steps > 0 {
        let per_epoch = n.div_ceil(train_cfg.batch_size);
        train_cfg.epochs = train_cfg.epochs.max(cfg.sweep.min_steps.div_ceil(per_epoch));
    }
    let arch = Architecture::uniform(cfg.data.d, shape.width, shape.depth)?;
    let (params, _) = adv_train(&train_data, &arch, &train_cfg, &loss)?;
    let model = Model::new(params, cfg.model.clamp);
    let f = model.predictor();

    let eval_attack: AttackConfig = cfg.attack.to_config(eps, eval.len(), cfg.data.d);
    rec.attack = eval_attack.describe();
    let report = sandwich(f, &loss, &eval, &eval_attack)?;
    rec.natural = report.natural;
    rec.adv_lower = report.adv_lower;
    rec.adv_upper = report.adv_upper;
    rec.kappa = model.params().kappa();
    let reference = adversarial_risk_lower(target, &loss, &eval, &eval_attack)?;
    rec.excess_adv = report.adv_lower - reference;
    if generator == Generator::Regression {
        let l2 = l2_sq_distance(f, target, cfg.data.mc_n, eps, eval_seed(data_seed ^ 0x12))?;
        rec.l2_sq = l2.mean;
        rec.l2_sq_stderr = l2.stderr;
    }
    Ok(())
}

/// Appends finished runs to the CSV in run order, flushing after each row.
struct OrderedWriter {
    next: usize,
    pending: BTreeMap<usize, RunRecord>,
    csv: Option<csv::Writer<File>>,
    done: Vec<RunRecord>,
}

impl OrderedWriter {
    fn push(&mut self, index: usize, rec: RunRecord) -> Result<()> {
        self.pending.insert(index, rec);
        while let Some(rec) = self.pending.remove(&self.next) {
            if let Some(w) = self.csv.as_mut() {
                w.write_record(rec.csv_row())?;
                w.flush()?;
            }
            self.done.push(rec);
            self.next += 1;
        }
        Ok(())
    }
}

/// Every `(n, seed)` run of the sweep, executed in parallel.
///
/// With `out`, writes `results.csv` (one row per run, in order, as runs finish) and
/// `results.json`.
pub fn run_sweep(cfg: &ExperimentConfig, out: Option<&Path>) -> Result<Vec<RunRecord>> {
    cfg.validate()?;
    let runs: Vec<(usize, u64)> = cfg
        .sweep
        .n_list
        .iter()
        .flat_map(|&n| cfg.sweep.seeds.iter().map(move |&s| (n, s)))
        .collect();
    if runs.len() > cfg.sweep.max_runs {
        return Err(Error::Budget(format!("{} runs exceed max_runs = {}", runs.len(), cfg.sweep.max_runs)));
    }
    let target = target_for(cfg)?;
    let csv = match out {
        Some(dir) => {
            std::fs::create_dir_all(dir)?;
            let mut w = csv::Writer::from_path(dir.join("results.csv"))?;
            w.write_record(CSV_HEADER)?;
            w.flush()?;
            Some(w)
        }
        None => None,
    };
    let writer = Mutex::new(OrderedWriter {
        next: 0,
        pending: BTreeMap::new(),
        csv,
        done: Vec::with_capacity(runs.len()),
    });
    runs.par_iter().enumerate().try_for_each(|(i, &(n, seed))| {
        let rec = run_one(cfg, &target, n, seed);
        if !rec.error.is_empty() {
            log::warn!("run n={n} seed={seed} failed: {}", rec.error);
        }
        writer.lock().expect("writer lock").push(i, rec)
    })?;
    let records = writer.into_inner().expect("writer lock").done;
    if let Some(dir) = out {
        let mut f = File::create(dir.join("results.json"))?;
        serde_json::to_writer_pretty(&mut f, &json_records(&records))?;
        f.write_all(b"\n")?;
    }
    Ok(records)
}

/// JSON has no NaN, so missing outputs become null.
fn json_records(records: &[RunRecord]) -> serde_json::Value {
    serde_json::to_value(records.iter().map(JsonRecord).collect::<Vec<_>>()).expect("serializable")
}

struct JsonRecord<'a>(&'a RunRecord);

impl Serialize for JsonRecord<'_> {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        use serde::ser::SerializeMap;
        let mut m = s.serialize_map(Some(CSV_HEADER.len()))?;
        for (k, v) in CSV_HEADER.iter().zip(self.0.csv_row()) {
            match v.parse::<f64>() {
                Ok(x) if x.is_nan() => m.serialize_entry(k, &serde_json::Value::Null)?,
                Ok(x) if !matches!(*k, "seed" | "n" | "d" | "width" | "depth" | "alpha") => m.serialize_entry(k, &x)?,
                _ => m.serialize_entry(k, &v)?,
            }
        }
        m.end()
    }
}
