//! Adversarial empirical risk minimization over the norm-constrained class.
//!
//! Each step attacks every sample of the mini-batch, takes a gradient step on the
//! attacked loss with the attack points held fixed, and rescales the output layer
//! back into `κ ≤ K`.

use std::time::Instant;

use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::attacks::{AttackConfig, Attacker};
use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::losses::LossSpec;
use crate::nn::{project_kappa_in_place, Architecture, NetworkParams, NormBudget, Predictor};
use crate::risk;
use crate::util::{derived_rng, mean};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LrSchedule {
    Constant,
    /// `lr / sqrt(t)` with `t` the 1-based step count.
    InvSqrt,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub schedule: LrSchedule,
    /// `None` trains on clean samples.
    pub attack: Option<AttackConfig>,
    pub budget: NormBudget,
    /// Output clamp `‖f‖∞ ≤ M`.
    pub clamp: Option<f64>,
    pub seed: u64,
    /// Disabling the projection is only meant for fault injection.
    #[serde(default = "yes")]
    pub project: bool,
}

fn yes() -> bool {
    true
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 || self.batch_size == 0 {
            return Err(Error::InvalidArgument("epochs and batch size must be >= 1".into()));
        }
        if !(self.lr >= 0.0) || !self.lr.is_finite() {
            return Err(Error::InvalidArgument(format!("learning rate must be >= 0, got {}", self.lr)));
        }
        if let Some(m) = self.clamp {
            if !(m > 0.0) {
                return Err(Error::InvalidArgument("clamp M must be positive".into()));
            }
        }
        Ok(())
    }

    fn lr_at(&self, step: usize) -> f64 {
        match self.schedule {
            LrSchedule::Constant => self.lr,
            LrSchedule::InvSqrt => self.lr / ((step + 1) as f64).sqrt(),
        }
    }
}

/// A network evaluated through `min(M, max(−M, f(x)))`.
#[derive(Debug, Clone, PartialEq)]
pub struct ClampedNetwork {
    pub params: NetworkParams,
    pub bound: f64,
}

/// Wrap a network with the output clamp.
pub fn clamp_output(params: NetworkParams, bound: f64) -> Result<ClampedNetwork> {
    if !(bound > 0.0) {
        return Err(Error::InvalidArgument("clamp M must be positive".into()));
    }
    Ok(ClampedNetwork { params, bound })
}

impl Predictor for ClampedNetwork {
    fn input_dim(&self) -> usize {
        self.params.arch().input_dim
    }

    fn value(&self, x: &[f64]) -> f64 {
        self.params.eval(x).clamp(-self.bound, self.bound)
    }

    fn input_gradient(&self, x: &[f64]) -> Vec<f64> {
        let raw = self.params.eval(x);
        if raw.abs() > self.bound {
            vec![0.0; self.input_dim()]
        } else {
            self.params.input_gradient(x)
        }
    }

    /// Clamping never increases the Lipschitz constant.
    fn lipschitz_bound(&self) -> f64 {
        self.params.kappa()
    }
}

/// Predictor view used during training, with or without the clamp.
enum Model<'a> {
    Plain(&'a NetworkParams),
    Clamped(ClampedNetwork),
}

impl<'a> Model<'a> {
    fn new(params: &'a NetworkParams, clamp: Option<f64>) -> Self {
        match clamp {
            Some(m) => Model::Clamped(ClampedNetwork {
                params: params.clone(),
                bound: m,
            }),
            None => Model::Plain(params),
        }
    }

    fn as_predictor(&self) -> &dyn Predictor {
        match self {
            Model::Plain(p) => *p,
            Model::Clamped(c) => c,
        }
    }
}

/// One projected SGD step on the attacked loss of `batch` (sample indices into `data`).
///
/// `step` seeds the PGD streams and the learning-rate schedule.
#[allow(clippy::too_many_arguments)]
pub fn train_step(
    params: &NetworkParams,
    data: &Dataset,
    batch: &[usize],
    loss: &LossSpec,
    attacker: Option<&Attacker>,
    lr: f64,
    clamp: Option<f64>,
    budget: NormBudget,
    project: bool,
    step: u64,
) -> Result<NetworkParams> {
    if batch.is_empty() {
        return Err(Error::InvalidArgument("empty batch".into()));
    }
    let model = Model::new(params, clamp);
    let f = model.as_predictor();
    let points: Vec<Vec<f64>> = batch
        .par_iter()
        .map(|&i| match attacker {
            Some(a) => {
                let stream = step.wrapping_mul(data.len() as u64).wrapping_add(i as u64);
                a.attack(f, loss, &data.x[i], data.y[i], stream).map(|r| r.x_adv)
            }
            None => Ok(data.x[i].clone()),
        })
        .collect::<Result<_>>()?;

    let mut total = NetworkParams::zeros(params.arch());
    for (x, &i) in points.iter().zip(batch) {
        let u = params.eval(x);
        if clamp.is_some_and(|m| u.abs() > m) {
            continue;
        }
        let dl = loss.deriv_u(u, data.y[i])?;
        if dl == 0.0 {
            continue;
        }
        let g = params.backward(x)?;
        total.add_scaled(&g.params, dl);
    }
    let mut next = params.clone();
    next.add_scaled(&total, -lr / batch.len() as f64);
    if project {
        project_kappa_in_place(&mut next, budget);
    }
    Ok(next)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub adv_risk_est: f64,
    pub nat_risk: f64,
    pub kappa: f64,
    pub seconds: f64,
    /// SHA-256 of the parameter bits at the end of the epoch.
    pub param_hash: String,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainHistory {
    pub records: Vec<EpochRecord>,
}

impl TrainHistory {
    /// Hash over every numeric column except wall-clock time.
    pub fn trajectory_hash(&self) -> String {
        let mut h = Sha256::new();
        for r in &self.records {
            h.update((r.epoch as u64).to_le_bytes());
            h.update(r.adv_risk_est.to_bits().to_le_bytes());
            h.update(r.nat_risk.to_bits().to_le_bytes());
            h.update(r.kappa.to_bits().to_le_bytes());
            h.update(r.param_hash.as_bytes());
        }
        to_hex(&h.finalize())
    }

    /// `epoch,adv_risk_est,nat_risk,kappa,seconds`
    pub fn write_csv<W: std::io::Write>(&self, w: W) -> Result<()> {
        let mut wr = csv::Writer::from_writer(w);
        wr.write_record(["epoch", "adv_risk_est", "nat_risk", "kappa", "seconds"])?;
        for r in &self.records {
            wr.write_record([
                r.epoch.to_string(),
                format!("{:?}", r.adv_risk_est),
                format!("{:?}", r.nat_risk),
                format!("{:?}", r.kappa),
                format!("{:.6}", r.seconds),
            ])?;
        }
        wr.flush()?;
        Ok(())
    }
}

fn to_hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

pub fn params_hash(p: &NetworkParams) -> String {
    let mut h = Sha256::new();
    for v in p.flat() {
        h.update(v.to_bits().to_le_bytes());
    }
    to_hex(&h.finalize())
}

/// Uniform init, one projection, then `epochs` of shuffled mini-batch steps.
pub fn adv_train(
    data: &Dataset,
    arch: &Architecture,
    cfg: &TrainConfig,
    loss: &LossSpec,
) -> Result<(NetworkParams, TrainHistory)> {
    cfg.validate()?;
    if arch.input_dim != data.dim() {
        return Err(Error::Dimension("architecture input dimension differs from data".into()));
    }
    if data.is_empty() {
        return Err(Error::InvalidArgument("empty training set".into()));
    }
    let attacker = cfg.attack.map(|a| Attacker::new(a, data.dim())).transpose()?;
    let mut init_rng = derived_rng(cfg.seed, 0);
    let mut params = NetworkParams::init_uniform(arch, &mut init_rng);
    project_kappa_in_place(&mut params, cfg.budget);

    let mut order: Vec<usize> = (0..data.len()).collect();
    let mut shuffle_rng = derived_rng(cfg.seed, 1);
    let mut history = TrainHistory::default();
    let start = Instant::now();
    let mut step = 0u64;
    for epoch in 0..cfg.epochs {
        order.shuffle(&mut shuffle_rng);
        for batch in order.chunks(cfg.batch_size) {
            params = train_step(
                &params,
                data,
                batch,
                loss,
                attacker.as_ref(),
                cfg.lr_at(step as usize),
                cfg.clamp,
                cfg.budget,
                cfg.project,
                step,
            )?;
            step += 1;
        }
        let model = Model::new(&params, cfg.clamp);
        let f = model.as_predictor();
        let nat_risk = risk::natural_risk(f, loss, data)?;
        let adv_risk_est = match &attacker {
            Some(a) => mean(&risk::attack_values(f, loss, data, a)?),
            None => nat_risk,
        };
        history.records.push(EpochRecord {
            epoch,
            adv_risk_est,
            nat_risk,
            kappa: params.kappa(),
            seconds: start.elapsed().as_secs_f64(),
            param_hash: params_hash(&params),
        });
    }
    Ok((params, history))
}

/// Checkpoint: the network JSON layout plus the training configuration.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Checkpoint {
    pub network: serde_json::Value,
    pub train_config: TrainConfig,
}

impl Checkpoint {
    pub fn new(params: &NetworkParams, cfg: &TrainConfig) -> Result<Self> {
        Ok(Checkpoint {
            network: serde_json::from_str(&params.to_json()?)?,
            train_config: cfg.clone(),
        })
    }

    pub fn params(&self) -> Result<NetworkParams> {
        NetworkParams::from_json(&self.network.to_string())
    }
}
