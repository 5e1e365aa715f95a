//! Empirical and Monte Carlo risk functionals.
//!
//! Adversarial risks are bracketed, never computed exactly: the attack value is a
//! lower estimate of the per-sample supremum, and `natural + Lip¹(ℓ)·κ(f)·ε` is a
//! certified upper bound.

use rayon::prelude::*;
use serde::Serialize;

use crate::attacks::{AttackConfig, Attacker};
use crate::data::{Dataset, HolderTarget};
use crate::error::{Error, Result};
use crate::losses::{LossKind, LossSpec};
use crate::nn::Predictor;
use crate::util::{derived_rng, mean, McEstimate};

use rand::Rng;

pub const ORDER_TOL: f64 = 1e-9;

fn nonempty(data: &Dataset) -> Result<()> {
    if data.is_empty() {
        return Err(Error::InvalidArgument("dataset is empty".into()));
    }
    if data.dim() == 0 {
        return Err(Error::Dimension("dataset has zero dimension".into()));
    }
    Ok(())
}

/// Per-sample losses at the clean points.
pub fn clean_losses<P: Predictor + ?Sized>(f: &P, loss: &LossSpec, data: &Dataset) -> Result<Vec<f64>> {
    nonempty(data)?;
    if f.input_dim() != data.dim() {
        return Err(Error::Dimension("predictor and dataset dimensions differ".into()));
    }
    Ok(data
        .x
        .iter()
        .zip(&data.y)
        .map(|(x, &y)| loss.eval(f.value(x), y))
        .collect())
}

/// `(1/n) Σ ℓ(f(x_i), y_i)`.
pub fn natural_risk<P: Predictor + ?Sized>(f: &P, loss: &LossSpec, data: &Dataset) -> Result<f64> {
    Ok(mean(&clean_losses(f, loss, data)?))
}

/// Per-sample attack values, in sample order.
pub fn attack_values<P: Predictor + ?Sized>(
    f: &P,
    loss: &LossSpec,
    data: &Dataset,
    attacker: &Attacker,
) -> Result<Vec<f64>> {
    nonempty(data)?;
    data.x
        .par_iter()
        .zip(data.y.par_iter())
        .enumerate()
        .map(|(i, (x, &y))| attacker.attack(f, loss, x, y, i as u64).map(|r| r.value))
        .collect()
}

/// Mean attack value: a lower estimate of the empirical adversarial risk.
pub fn adversarial_risk_lower<P: Predictor + ?Sized>(
    f: &P,
    loss: &LossSpec,
    data: &Dataset,
    attack: &AttackConfig,
) -> Result<f64> {
    let attacker = Attacker::new(*attack, data.dim())?;
    Ok(mean(&attack_values(f, loss, data, &attacker)?))
}

/// Natural risk, attack lower estimate and certified upper bound.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RiskReport {
    pub natural: f64,
    pub adv_lower: f64,
    pub adv_upper: f64,
    pub n_eval: usize,
    pub eps: f64,
    pub kappa: f64,
    pub attack: String,
    pub loss: String,
}

impl RiskReport {
    pub fn check_ordering(&self) -> Result<()> {
        if self.natural <= self.adv_lower + ORDER_TOL && self.adv_lower <= self.adv_upper + ORDER_TOL {
            Ok(())
        } else {
            Err(Error::Invariant(format!(
                "sandwich ordering failed: natural={} adv_lower={} adv_upper={}",
                self.natural, self.adv_lower, self.adv_upper
            )))
        }
    }

    pub fn csv_header() -> &'static [&'static str] {
        &["natural", "adv_lower", "adv_upper", "n_eval", "eps", "kappa", "attack", "loss"]
    }

    pub fn csv_row(&self) -> Vec<String> {
        vec![
            format!("{:?}", self.natural),
            format!("{:?}", self.adv_lower),
            format!("{:?}", self.adv_upper),
            self.n_eval.to_string(),
            format!("{:?}", self.eps),
            format!("{:?}", self.kappa),
            self.attack.clone(),
            self.loss.clone(),
        ]
    }
}

/// Brackets `natural ≤ adv_lower ≤ adv_upper = natural + Lip¹(ℓ)·κ(f)·ε`.
///
/// For the quadratic loss the Lip¹ constant is only valid on `|u| ≤ M_u`, so the
/// local range `|f(x_i)| + κ·ε` must stay inside the loss's prediction bound.
pub fn sandwich<P: Predictor + ?Sized>(
    f: &P,
    loss: &LossSpec,
    data: &Dataset,
    attack: &AttackConfig,
) -> Result<RiskReport> {
    let lip1 = loss.lip1()?;
    let kappa = f.lipschitz_bound();
    let eps = attack.eps;
    let clean = clean_losses(f, loss, data)?;
    if loss.kind == LossKind::Quadratic {
        let reach = data
            .x
            .iter()
            .map(|x| f.value(x).abs())
            .fold(0.0, f64::max)
            + kappa * eps;
        if reach > loss.prediction_bound {
            return Err(Error::Precondition(format!(
                "predictions reach {reach} > M_u = {}",
                loss.prediction_bound
            )));
        }
    }
    let attacker = Attacker::new(*attack, data.dim())?;
    let natural = mean(&clean);
    let adv_lower = mean(&attack_values(f, loss, data, &attacker)?);
    let adv_upper = natural + lip1 * kappa * eps;
    let report = RiskReport {
        natural,
        adv_lower,
        adv_upper,
        n_eval: data.len(),
        eps,
        kappa,
        attack: attack.describe(),
        loss: loss.name(),
    };
    report.check_ordering()?;
    Ok(report)
}

/// `adv_lower(f) − reference`; can be slightly negative from estimation noise.
pub fn excess_adversarial<P: Predictor + ?Sized>(
    f: &P,
    loss: &LossSpec,
    data: &Dataset,
    attack: &AttackConfig,
    reference: f64,
) -> Result<f64> {
    if !reference.is_finite() {
        return Err(Error::InvalidArgument("reference risk must be finite".into()));
    }
    Ok(adversarial_risk_lower(f, loss, data, attack)? - reference)
}

/// Monte Carlo `E|f(X) − f₀(X)|²` with `X ~ U[ε, 1−ε]^d`.
pub fn l2_sq_distance<P: Predictor + ?Sized>(
    f: &P,
    target: &HolderTarget,
    mc_n: usize,
    eps: f64,
    seed: u64,
) -> Result<McEstimate> {
    if mc_n == 0 {
        return Err(Error::InvalidArgument("mc_n must be >= 1".into()));
    }
    if f.input_dim() != target.d {
        return Err(Error::Dimension("predictor and target dimensions differ".into()));
    }
    let vals: Vec<f64> = (0..mc_n)
        .into_par_iter()
        .map(|i| {
            let mut rng = derived_rng(seed, i as u64);
            let x: Vec<f64> = (0..target.d).map(|_| rng.gen_range(eps..=1.0 - eps)).collect();
            let diff = f.value(&x) - target.eval(&x);
            diff * diff
        })
        .collect();
    Ok(McEstimate::from_samples(&vals))
}

/// Clean 0-1 risk with `sign(0) = +1`.
pub fn natural_zero_one<P: Predictor + ?Sized>(f: &P, data: &Dataset) -> Result<f64> {
    natural_risk(f, &LossSpec::zero_one(), data)
}

/// Lower estimate of the adversarial 0-1 risk from attack brackets of `f` on each ball.
pub fn zero_one_adversarial<P: Predictor + ?Sized>(f: &P, data: &Dataset, attack: &AttackConfig) -> Result<f64> {
    nonempty(data)?;
    let attacker = Attacker::new(*attack, data.dim())?;
    let errs: Vec<f64> = data
        .x
        .par_iter()
        .zip(data.y.par_iter())
        .enumerate()
        .map(|(i, (x, &y))| {
            let (hi, lo) = attacker.output_extremes(f, x, i as u64)?;
            let flipped = (y > 0.0 && lo < 0.0) || (y < 0.0 && hi >= 0.0);
            Ok(if flipped { 1.0 } else { LossSpec::zero_one().eval(f.value(x), y) })
        })
        .collect::<Result<_>>()?;
    Ok(mean(&errs))
}

/// `adv_upper + 2·Lip(ℓ)·(K+1)·ε`, an upper bound on the `W₁` local worst-case risk.
pub fn w1_worst_case_upper(report: &RiskReport, loss: &LossSpec, k: f64, eps: f64) -> Result<f64> {
    let lip = loss.lip_joint()?;
    Ok(report.adv_upper + 2.0 * lip * (k + 1.0) * eps)
}
