//! INI experiment configuration.
//!
//! Sections are `[data]`, `[model]`, `[attack]`, `[train]`, `[sweep]` and `[verify]`.
//! Every key is optional; unknown sections and keys are rejected.

use std::collections::BTreeMap;
use std::path::Path;
use std::str::FromStr;

use ini::Ini;
use num_rational::Rational64;
use num_traits::ToPrimitive;
use serde::Serialize;

use crate::attacks::{default_tau, AttackConfig, AttackMethod, DEFAULT_COVER_BUDGET};
use crate::bounds::Task;
use crate::error::{Error, Result};
use crate::losses::LossSpec;
use crate::nn::NormBudget;
use crate::train::{LrSchedule, TrainConfig};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Generator {
    Regression,
    Classification,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DataSection {
    pub generator: Generator,
    pub n: usize,
    pub d: usize,
    pub alpha: Rational64,
    pub modes: usize,
    /// Half-width of the uniform label noise.
    pub sigma: f64,
    pub eps: f64,
    /// Posterior margin `c` for classification data.
    pub margin: f64,
    pub seed: u64,
    pub eval_n: usize,
    /// Monte Carlo points for the `L²` distance to the target.
    pub mc_n: usize,
}

impl Default for DataSection {
    fn default() -> Self {
        DataSection {
            generator: Generator::Regression,
            n: 256,
            d: 1,
            alpha: Rational64::from_integer(1),
            modes: 6,
            sigma: 0.1,
            eps: 0.05,
            margin: 0.1,
            seed: 0,
            eval_n: 1000,
            mc_n: 20_000,
        }
    }
}

impl DataSection {
    pub fn alpha_f64(&self) -> f64 {
        self.alpha.to_f64().expect("small rational")
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ModelSection {
    pub width: usize,
    pub depth: usize,
    /// Norm budget `K`.
    pub budget: f64,
    pub clamp: Option<f64>,
    /// `c_W` in `W = ceil(c_W · WL / L)` for scheduled sweeps.
    pub width_const: f64,
}

impl Default for ModelSection {
    fn default() -> Self {
        ModelSection {
            width: 16,
            depth: 2,
            budget: 4.0,
            clamp: Some(1.0),
            width_const: 8.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum MethodName {
    Pgd,
    Cover,
    Brute,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AttackSection {
    pub method: MethodName,
    pub steps: usize,
    /// Defaults to `ε/4`.
    pub step_size: Option<f64>,
    pub restarts: usize,
    /// Defaults to the budgeted cover radius for the dataset size.
    pub tau: Option<f64>,
    /// Defaults to `ε/10`.
    pub resolution: Option<f64>,
    pub seed: u64,
}

impl Default for AttackSection {
    fn default() -> Self {
        AttackSection {
            method: MethodName::Pgd,
            steps: 20,
            step_size: None,
            restarts: 3,
            tau: None,
            resolution: None,
            seed: 0,
        }
    }
}

impl AttackSection {
    /// Concrete attack for radius `eps` on `n` samples in dimension `d`.
    pub fn to_config(&self, eps: f64, n: usize, d: usize) -> AttackConfig {
        let method = match self.method {
            MethodName::Pgd => AttackMethod::Pgd {
                steps: self.steps,
                step_size: self.step_size.unwrap_or(eps / 4.0),
                restarts: self.restarts,
            },
            MethodName::Cover => AttackMethod::Cover {
                tau: self
                    .tau
                    .map(|t| t.min(eps))
                    .unwrap_or_else(|| default_tau(eps, n, d, DEFAULT_COVER_BUDGET)),
            },
            MethodName::Brute => AttackMethod::Brute {
                resolution: self.resolution.unwrap_or(eps / 10.0),
            },
        };
        AttackConfig {
            eps,
            method,
            seed: self.seed,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum LossName {
    Hinge,
    Quadratic,
    RhoMargin,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TrainSection {
    pub loss: LossName,
    pub rho: f64,
    /// Prediction bound `M_u` of the quadratic loss; defaults to `clamp + K·ε`.
    pub m_u: Option<f64>,
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub schedule: LrSchedule,
    pub seed: u64,
    /// Train against the attack (`true`) or on clean samples.
    pub adversarial: bool,
}

impl Default for TrainSection {
    fn default() -> Self {
        TrainSection {
            loss: LossName::Quadratic,
            rho: 0.5,
            m_u: None,
            epochs: 40,
            batch_size: 16,
            lr: 0.1,
            schedule: LrSchedule::Constant,
            seed: 0,
            adversarial: true,
        }
    }
}

impl TrainSection {
    pub fn loss_spec(&self, clamp: Option<f64>, budget: f64, eps: f64) -> Result<LossSpec> {
        match self.loss {
            LossName::Hinge => Ok(LossSpec::hinge()),
            LossName::RhoMargin => LossSpec::rho_margin(self.rho),
            LossName::Quadratic => {
                let m = self.m_u.unwrap_or(clamp.unwrap_or(1.0) + budget * eps);
                LossSpec::quadratic(m)
            }
        }
    }

    pub fn to_config(&self, attack: Option<AttackConfig>, budget: f64, clamp: Option<f64>, seed: u64) -> Result<TrainConfig> {
        let cfg = TrainConfig {
            epochs: self.epochs,
            batch_size: self.batch_size,
            lr: self.lr,
            schedule: self.schedule,
            attack: if self.adversarial { attack } else { None },
            budget: NormBudget::new(budget)?,
            clamp,
            seed,
            project: true,
        };
        cfg.validate()?;
        Ok(cfg)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum SweepTask {
    RegressionQuadratic,
    RegressionHinge,
    ClassificationHinge,
}

impl SweepTask {
    pub fn name(self) -> &'static str {
        match self {
            SweepTask::RegressionQuadratic => "regression_quadratic",
            SweepTask::RegressionHinge => "regression_hinge",
            SweepTask::ClassificationHinge => "classification_hinge",
        }
    }

    pub fn rate_task(self) -> Task {
        match self {
            SweepTask::RegressionQuadratic => Task::Quadratic,
            _ => Task::Lipschitz,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum EpsRule {
    Fixed(f64),
    /// `scale · n^{-e}` with the task's attack-level exponent.
    ScheduleEn { scale: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepSection {
    pub task: SweepTask,
    pub n_list: Vec<usize>,
    pub seeds: Vec<u64>,
    pub eps_rule: EpsRule,
    /// Epoch count is `max(epochs, ceil(steps / ceil(n / batch)))` when nonzero.
    pub min_steps: usize,
    pub max_runs: usize,
}

impl Default for SweepSection {
    fn default() -> Self {
        SweepSection {
            task: SweepTask::RegressionQuadratic,
            n_list: vec![128, 256, 512, 1024],
            seeds: vec![0, 1, 2],
            eps_rule: EpsRule::ScheduleEn { scale: 1.0 },
            min_steps: 0,
            max_runs: 10_000,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct VerifySection {
    pub networks: usize,
    pub pairs: usize,
    pub sandwich_models: usize,
    pub cover_instances: usize,
    pub gradient_networks: usize,
    pub feasibility_runs: usize,
    pub equivalence_instances: usize,
    pub split_instances: usize,
    pub seed: u64,
}

impl Default for VerifySection {
    fn default() -> Self {
        VerifySection {
            networks: 200,
            pairs: 100,
            sandwich_models: 100,
            cover_instances: 100,
            gradient_networks: 50,
            feasibility_runs: 4,
            equivalence_instances: 100,
            split_instances: 20,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct ExperimentConfig {
    pub data: DataSection,
    pub model: ModelSection,
    pub attack: AttackSection,
    pub train: TrainSection,
    pub sweep: SweepSection,
    pub verify: VerifySection,
}

/// Keys of one section, consumed as they are read.
struct Section {
    name: &'static str,
    keys: BTreeMap<String, String>,
}

impl Section {
    fn take<T: FromStr>(&mut self, key: &str, out: &mut T) -> Result<()> {
        if let Some(raw) = self.keys.remove(key) {
            *out = raw
                .trim()
                .parse()
                .map_err(|_| self.bad(key, &raw))?;
        }
        Ok(())
    }

    fn take_with<T>(&mut self, key: &str, out: &mut T, parse: impl Fn(&str) -> Option<T>) -> Result<()> {
        if let Some(raw) = self.keys.remove(key) {
            *out = parse(raw.trim()).ok_or_else(|| self.bad(key, &raw))?;
        }
        Ok(())
    }

    fn bad(&self, key: &str, raw: &str) -> Error {
        Error::Config(format!("[{}] {key} = {raw:?} is not a valid value", self.name))
    }

    fn finish(self) -> Result<()> {
        match self.keys.keys().next() {
            Some(k) => Err(Error::Config(format!("unknown key [{}] {k}", self.name))),
            None => Ok(()),
        }
    }
}

/// `3/2`, `2` or a decimal such as `1.5`.
pub fn parse_rational(s: &str) -> Option<Rational64> {
    Rational64::from_str(s)
        .ok()
        .or_else(|| s.parse::<f64>().ok().and_then(Rational64::approximate_float))
}

fn parse_list<T: FromStr>(s: &str) -> Option<Vec<T>> {
    s.split(',')
        .map(str::trim)
        .filter(|t| !t.is_empty())
        .map(|t| t.parse().ok())
        .collect()
}

fn parse_optional_f64(s: &str) -> Option<Option<f64>> {
    match s {
        "none" | "off" | "" => Some(None),
        _ => s.parse().ok().map(Some),
    }
}

fn parse_generator(s: &str) -> Option<Generator> {
    match s {
        "regression" => Some(Generator::Regression),
        "classification" => Some(Generator::Classification),
        _ => None,
    }
}

fn parse_method(s: &str) -> Option<MethodName> {
    match s {
        "pgd" => Some(MethodName::Pgd),
        "cover" => Some(MethodName::Cover),
        "brute" => Some(MethodName::Brute),
        _ => None,
    }
}

fn parse_loss(s: &str) -> Option<LossName> {
    match s {
        "hinge" => Some(LossName::Hinge),
        "quadratic" => Some(LossName::Quadratic),
        "rho_margin" => Some(LossName::RhoMargin),
        _ => None,
    }
}

fn parse_schedule(s: &str) -> Option<LrSchedule> {
    match s {
        "constant" => Some(LrSchedule::Constant),
        "inv_sqrt" => Some(LrSchedule::InvSqrt),
        _ => None,
    }
}

fn parse_task(s: &str) -> Option<SweepTask> {
    match s {
        "regression_quadratic" => Some(SweepTask::RegressionQuadratic),
        "regression_hinge" => Some(SweepTask::RegressionHinge),
        "classification_hinge" => Some(SweepTask::ClassificationHinge),
        _ => None,
    }
}

/// `fixed` (uses `[data] eps`) or `schedule_en`.
fn parse_eps_rule(s: &str) -> Option<bool> {
    match s {
        "fixed" => Some(false),
        "schedule_en" => Some(true),
        _ => None,
    }
}

impl ExperimentConfig {
    pub fn from_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::parse(&text)
    }

    pub fn parse(text: &str) -> Result<Self> {
        let ini = Ini::load_from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        let mut sections: BTreeMap<String, BTreeMap<String, String>> = BTreeMap::new();
        for (name, props) in ini.iter() {
            let keys: BTreeMap<String, String> = props.iter().map(|(k, v)| (k.to_string(), v.to_string())).collect();
            match name {
                None if keys.is_empty() => {}
                None => {
                    return Err(Error::Config(format!(
                        "key {:?} appears before any section",
                        keys.keys().next().expect("nonempty")
                    )))
                }
                Some(n) => sections.entry(n.to_string()).or_default().extend(keys),
            }
        }
        let mut section = |name: &'static str| Section {
            name,
            keys: sections.remove(name).unwrap_or_default(),
        };
        let mut cfg = ExperimentConfig::default();

        let mut s = section("data");
        let d = &mut cfg.data;
        s.take_with("generator", &mut d.generator, parse_generator)?;
        s.take("n", &mut d.n)?;
        s.take("d", &mut d.d)?;
        s.take_with("alpha", &mut d.alpha, parse_rational)?;
        s.take("modes", &mut d.modes)?;
        s.take("sigma", &mut d.sigma)?;
        s.take("eps", &mut d.eps)?;
        s.take("margin", &mut d.margin)?;
        s.take("seed", &mut d.seed)?;
        s.take("eval_n", &mut d.eval_n)?;
        s.take("mc_n", &mut d.mc_n)?;
        s.finish()?;

        let mut s = section("model");
        let m = &mut cfg.model;
        s.take("width", &mut m.width)?;
        s.take("depth", &mut m.depth)?;
        s.take("budget", &mut m.budget)?;
        s.take_with("clamp", &mut m.clamp, parse_optional_f64)?;
        s.take("width_const", &mut m.width_const)?;
        s.finish()?;

        let mut s = section("attack");
        let a = &mut cfg.attack;
        s.take_with("method", &mut a.method, parse_method)?;
        s.take("steps", &mut a.steps)?;
        s.take_with("step_size", &mut a.step_size, parse_optional_f64)?;
        s.take("restarts", &mut a.restarts)?;
        s.take_with("tau", &mut a.tau, parse_optional_f64)?;
        s.take_with("resolution", &mut a.resolution, parse_optional_f64)?;
        s.take("seed", &mut a.seed)?;
        s.finish()?;

        let mut s = section("train");
        let t = &mut cfg.train;
        s.take_with("loss", &mut t.loss, parse_loss)?;
        s.take("rho", &mut t.rho)?;
        s.take_with("m_u", &mut t.m_u, parse_optional_f64)?;
        s.take("epochs", &mut t.epochs)?;
        s.take("batch_size", &mut t.batch_size)?;
        s.take("lr", &mut t.lr)?;
        s.take_with("schedule", &mut t.schedule, parse_schedule)?;
        s.take("seed", &mut t.seed)?;
        s.take("adversarial", &mut t.adversarial)?;
        s.finish()?;

        let mut s = section("sweep");
        let w = &mut cfg.sweep;
        s.take_with("task", &mut w.task, parse_task)?;
        s.take_with("n_list", &mut w.n_list, parse_list)?;
        s.take_with("seeds", &mut w.seeds, parse_list)?;
        let mut scheduled = matches!(w.eps_rule, EpsRule::ScheduleEn { .. });
        s.take_with("eps_rule", &mut scheduled, parse_eps_rule)?;
        let mut scale = 1.0;
        s.take("eps_scale", &mut scale)?;
        w.eps_rule = if scheduled {
            EpsRule::ScheduleEn { scale }
        } else {
            EpsRule::Fixed(cfg.data.eps)
        };
        s.take("min_steps", &mut w.min_steps)?;
        s.take("max_runs", &mut w.max_runs)?;
        s.finish()?;

        let mut s = section("verify");
        let v = &mut cfg.verify;
        s.take("networks", &mut v.networks)?;
        s.take("pairs", &mut v.pairs)?;
        s.take("sandwich_models", &mut v.sandwich_models)?;
        s.take("cover_instances", &mut v.cover_instances)?;
        s.take("gradient_networks", &mut v.gradient_networks)?;
        s.take("feasibility_runs", &mut v.feasibility_runs)?;
        s.take("equivalence_instances", &mut v.equivalence_instances)?;
        s.take("split_instances", &mut v.split_instances)?;
        s.take("seed", &mut v.seed)?;
        s.finish()?;

        if let Some(name) = sections.keys().next() {
            return Err(Error::Config(format!("unknown section [{name}]")));
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(m.to_string()));
        if self.data.d == 0 || self.data.n == 0 || self.data.eval_n == 0 {
            return bad("[data] n, d and eval_n must be >= 1");
        }
        if self.data.alpha < Rational64::from_integer(1) {
            return bad("[data] alpha must be >= 1");
        }
        if !(0.0..0.5).contains(&self.data.eps) {
            return bad("[data] eps must lie in [0, 0.5)");
        }
        if self.sweep.n_list.windows(2).any(|w| w[0] >= w[1]) || self.sweep.n_list.is_empty() {
            return bad("[sweep] n_list must be nonempty and strictly increasing");
        }
        if self.sweep.seeds.is_empty() {
            return bad("[sweep] seeds must be nonempty");
        }
        if self.model.budget < 1.0 {
            return bad("[model] budget must be >= 1");
        }
        Ok(())
    }

    /// Replace every seed with `seed`.
    pub fn override_seed(&mut self, seed: u64) {
        self.data.seed = seed;
        self.attack.seed = seed;
        self.train.seed = seed;
        self.verify.seed = seed;
        self.sweep.seeds = vec![seed];
    }
}
