//! Loss functions, their Lipschitz constants in the prediction, and
//! grid-certified margin-loss calibration constants.

use serde::{Serialize, Serializer};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum LossKind {
    Hinge,
    RhoMargin { rho: f64 },
    Quadratic,
    ZeroOne,
}

/// A loss together with the prediction bound `M_u` used for the quadratic Lip¹.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct LossSpec {
    pub kind: LossKind,
    pub prediction_bound: f64,
}

/// `sign(u) = 1` iff `u ≥ 0`.
pub fn sign(u: f64) -> f64 {
    if u >= 0.0 {
        1.0
    } else {
        -1.0
    }
}

impl LossSpec {
    pub fn hinge() -> Self {
        LossSpec {
            kind: LossKind::Hinge,
            prediction_bound: 1.0,
        }
    }

    pub fn rho_margin(rho: f64) -> Result<Self> {
        if !(rho > 0.0) || !rho.is_finite() {
            return Err(Error::InvalidArgument(format!("rho must be positive, got {rho}")));
        }
        Ok(LossSpec {
            kind: LossKind::RhoMargin { rho },
            prediction_bound: 1.0,
        })
    }

    pub fn quadratic(prediction_bound: f64) -> Result<Self> {
        if !(prediction_bound > 0.0) || !prediction_bound.is_finite() {
            return Err(Error::InvalidArgument(format!(
                "prediction bound must be positive, got {prediction_bound}"
            )));
        }
        Ok(LossSpec {
            kind: LossKind::Quadratic,
            prediction_bound,
        })
    }

    pub fn zero_one() -> Self {
        LossSpec {
            kind: LossKind::ZeroOne,
            prediction_bound: 1.0,
        }
    }

    pub fn name(&self) -> String {
        match self.kind {
            LossKind::Hinge => "hinge".into(),
            LossKind::RhoMargin { rho } => format!("rho_margin({rho})"),
            LossKind::Quadratic => "quadratic".into(),
            LossKind::ZeroOne => "zero_one".into(),
        }
    }

    pub fn is_margin(&self) -> bool {
        matches!(self.kind, LossKind::Hinge | LossKind::RhoMargin { .. })
    }

    /// Margin function φ with `ℓ(u, y) = φ(uy)`.
    pub fn phi(&self, t: f64) -> Result<f64> {
        match self.kind {
            LossKind::Hinge => Ok((1.0 - t).max(0.0)),
            LossKind::RhoMargin { rho } => Ok((1.0 - t / rho).clamp(0.0, 1.0)),
            _ => Err(self.not_margin()),
        }
    }

    fn not_margin(&self) -> Error {
        Error::Unsupported(format!("{} is not a margin loss", self.name()))
    }

    pub fn eval(&self, u: f64, y: f64) -> f64 {
        match self.kind {
            LossKind::Hinge => (1.0 - u * y).max(0.0),
            LossKind::RhoMargin { rho } => (1.0 - u * y / rho).clamp(0.0, 1.0),
            LossKind::Quadratic => (u - y) * (u - y),
            LossKind::ZeroOne => {
                if sign(u) * y <= 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
        }
    }

    /// Subderivative in `u`; kinks take the flat side (derivative 0).
    pub fn deriv_u(&self, u: f64, y: f64) -> Result<f64> {
        match self.kind {
            LossKind::Hinge => Ok(if u * y < 1.0 { -y } else { 0.0 }),
            LossKind::RhoMargin { rho } => {
                let t = u * y;
                Ok(if t > 0.0 && t < rho { -y / rho } else { 0.0 })
            }
            LossKind::Quadratic => Ok(2.0 * (u - y)),
            LossKind::ZeroOne => Err(Error::Unsupported(
                "zero_one loss has no useful derivative".into(),
            )),
        }
    }

    /// `Lip¹(ℓ)`, uniform over labels in `[-1, 1]`.
    pub fn lip1(&self) -> Result<f64> {
        match self.kind {
            LossKind::Hinge => Ok(1.0),
            LossKind::RhoMargin { rho } => Ok(1.0 / rho),
            LossKind::Quadratic => Ok(2.0 * (self.prediction_bound + 1.0)),
            LossKind::ZeroOne => Err(Error::Unsupported(
                "zero_one loss is not Lipschitz in the prediction".into(),
            )),
        }
    }

    /// Lipschitz constant jointly in `(u, y)`.
    pub fn lip_joint(&self) -> Result<f64> {
        self.lip1()
    }
}

pub fn c_phi(spec: &LossSpec, eta: f64, f: f64) -> Result<f64> {
    Ok(spec.phi(f)? * eta + spec.phi(-f)? * (1.0 - eta))
}

pub fn c_class(eta: f64, f: f64) -> f64 {
    if f < 0.0 {
        eta
    } else {
        1.0 - eta
    }
}

pub fn c_class_star(eta: f64) -> f64 {
    eta.min(1.0 - eta)
}

/// `C*_φ(η)` as a minimum over the α grid.
pub fn cphi_star(spec: &LossSpec, eta: f64, alpha_grid: &[f64]) -> Result<f64> {
    if !spec.is_margin() {
        return Err(spec.not_margin());
    }
    let mut best = f64::INFINITY;
    for &a in alpha_grid {
        best = best.min(c_phi(spec, eta, a)?);
    }
    Ok(best)
}

/// Evaluation grids for the calibration checks.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CalibrationGrid {
    pub eta: Vec<f64>,
    pub f: Vec<f64>,
    pub alpha: Vec<f64>,
}

/// `lo, lo + step, …, hi` computed as `lo + k·step` with the endpoint pinned.
pub fn linspace_step(lo: f64, hi: f64, step: f64) -> Vec<f64> {
    let n = ((hi - lo) / step).round() as i64;
    (0..=n)
        .map(|k| if k == n { hi } else { lo + k as f64 * step })
        .collect()
}

impl CalibrationGrid {
    pub fn new(eta: Vec<f64>, f: Vec<f64>, alpha: Vec<f64>) -> Result<Self> {
        let sorted = |v: &[f64]| v.windows(2).all(|w| w[0] < w[1]);
        if eta.is_empty() || f.is_empty() || alpha.is_empty() {
            return Err(Error::InvalidArgument("calibration grids must be nonempty".into()));
        }
        if !sorted(&eta) || !sorted(&f) || !sorted(&alpha) {
            return Err(Error::InvalidArgument("calibration grids must be strictly sorted".into()));
        }
        if eta.iter().any(|e| !(0.0..=1.0).contains(e)) {
            return Err(Error::InvalidArgument("eta grid must lie in [0, 1]".into()));
        }
        Ok(CalibrationGrid { eta, f, alpha })
    }

    /// η step `eta_step` on [0,1]; f and α steps `fa_step` on [-f_max, f_max].
    /// The α grid always contains -1, 0 and 1.
    pub fn uniform(eta_step: f64, fa_step: f64, f_max: f64) -> Result<Self> {
        let eta = linspace_step(0.0, 1.0, eta_step);
        let f = linspace_step(-f_max, f_max, fa_step);
        let mut alpha = f.clone();
        for must in [-1.0, 0.0, 1.0] {
            if !alpha.iter().any(|a| (a - must).abs() < 1e-12) {
                alpha.push(must);
            }
        }
        alpha.sort_by(|a, b| a.partial_cmp(b).unwrap());
        for a in &mut alpha {
            for must in [-1.0, 0.0, 1.0] {
                if (*a - must).abs() < 1e-12 {
                    *a = must;
                }
            }
        }
        Self::new(eta, f, alpha)
    }

    /// η step 0.01, f/α step 0.1 on [-2, 2].
    pub fn standard() -> Self {
        Self::uniform(0.01, 0.1, 2.0).expect("static grid is valid")
    }
}

/// A grid-certified constant; `+∞` when no grid point constrains it.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CalibrationCheck {
    pub holds: bool,
    pub best: f64,
}

/// Best `a` in `C_φ − C*_φ ≥ a (C_class − C*_class)` over the grid.
pub fn check_assumption_41(spec: &LossSpec, grid: &CalibrationGrid) -> Result<CalibrationCheck> {
    if !spec.is_margin() {
        return Err(spec.not_margin());
    }
    let mut best = f64::INFINITY;
    let mut violated = false;
    for &eta in &grid.eta {
        let star = cphi_star(spec, eta, &grid.alpha)?;
        let class_star = c_class_star(eta);
        for &f in &grid.f {
            let phi_gap = c_phi(spec, eta, f)? - star;
            let class_gap = c_class(eta, f) - class_star;
            if phi_gap < -1e-9 {
                violated = true;
            }
            if class_gap > 1e-12 {
                best = best.min(phi_gap / class_gap);
            }
        }
    }
    Ok(CalibrationCheck {
        holds: !violated && best > 0.0,
        best,
    })
}

/// Best `b` in `φ(0) − C*_φ ≥ b (1 − C*_class)` over grid η with `|η − 1/2| ≥ c`.
///
/// The constraint set is closed up to `1e-12`: the best constant over the open set
/// `|η − 1/2| > c` is the infimum of a continuous ratio, attained on its closure.
pub fn check_assumption_42(
    spec: &LossSpec,
    c: f64,
    grid: &CalibrationGrid,
) -> Result<CalibrationCheck> {
    if !spec.is_margin() {
        return Err(spec.not_margin());
    }
    if !(c > 0.0 && c < 0.5) {
        return Err(Error::InvalidArgument(format!("c must lie in (0, 0.5), got {c}")));
    }
    let phi0 = spec.phi(0.0)?;
    let mut best = f64::INFINITY;
    for &eta in &grid.eta {
        if (eta - 0.5).abs() < c - 1e-12 {
            continue;
        }
        let num = phi0 - cphi_star(spec, eta, &grid.alpha)?;
        let den = 1.0 - c_class_star(eta);
        best = best.min(num / den);
    }
    Ok(CalibrationCheck {
        holds: best > 0.0,
        best,
    })
}

/// Outcome of the adversarial margin-transfer check over interval extremes.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TransferCheck {
    pub cases_checked: usize,
    pub violations: usize,
    pub worst_slack: f64,
}

/// For every grid η with `|η − 1/2| ≥ c` and every pair `b ≤ a` of f-grid values
/// (the inf and sup of `f` over an attack ball), checks
/// `φ(b)η + φ(−a)(1−η) − C*_φ ≥ a_const · (1{b<0}η + 1{a≥0}(1−η) − min(η, 1−η))`.
/// The pairs cover the three sign cases (both ≥ 0, both < 0, straddling).
pub fn check_margin_transfer(
    spec: &LossSpec,
    c: f64,
    a_const: f64,
    grid: &CalibrationGrid,
) -> Result<TransferCheck> {
    if !spec.is_margin() {
        return Err(spec.not_margin());
    }
    let mut out = TransferCheck {
        cases_checked: 0,
        violations: 0,
        worst_slack: f64::INFINITY,
    };
    for &eta in &grid.eta {
        if (eta - 0.5).abs() < c - 1e-12 {
            continue;
        }
        let star = cphi_star(spec, eta, &grid.alpha)?;
        let class_star = c_class_star(eta);
        for (i, &lo) in grid.f.iter().enumerate() {
            for &hi in &grid.f[i..] {
                let phi_gap = spec.phi(lo)? * eta + spec.phi(-hi)? * (1.0 - eta) - star;
                let lo_neg = if lo < 0.0 { eta } else { 0.0 };
                let hi_pos = if hi >= 0.0 { 1.0 - eta } else { 0.0 };
                let class_gap = lo_neg + hi_pos - class_star;
                let slack = phi_gap - a_const * class_gap;
                out.cases_checked += 1;
                out.worst_slack = out.worst_slack.min(slack);
                if slack < -1e-9 {
                    out.violations += 1;
                }
            }
        }
    }
    Ok(out)
}

fn ser_extended<S: Serializer>(v: &f64, s: S) -> std::result::Result<S::Ok, S::Error> {
    if v.is_infinite() && *v > 0.0 {
        s.serialize_str("+inf")
    } else {
        s.serialize_f64(*v)
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct GridSpec {
    pub eta_points: usize,
    pub f_points: usize,
    pub alpha_points: usize,
    pub eta_range: (f64, f64),
    pub f_range: (f64, f64),
}

/// `{loss, grid_spec, holds_41, best_a, holds_42, c, best_b}`
#[derive(Debug, Clone, Serialize)]
pub struct CalibrationReport {
    pub loss: String,
    pub grid_spec: GridSpec,
    pub holds_41: bool,
    #[serde(serialize_with = "ser_extended")]
    pub best_a: f64,
    pub holds_42: bool,
    pub c: f64,
    #[serde(serialize_with = "ser_extended")]
    pub best_b: f64,
}

pub fn calibration_report(
    spec: &LossSpec,
    c: f64,
    grid: &CalibrationGrid,
) -> Result<CalibrationReport> {
    let a41 = check_assumption_41(spec, grid)?;
    let a42 = check_assumption_42(spec, c, grid)?;
    Ok(CalibrationReport {
        loss: spec.name(),
        grid_spec: GridSpec {
            eta_points: grid.eta.len(),
            f_points: grid.f.len(),
            alpha_points: grid.alpha.len(),
            eta_range: (grid.eta[0], *grid.eta.last().unwrap()),
            f_range: (grid.f[0], *grid.f.last().unwrap()),
        },
        holds_41: a41.holds,
        best_a: a41.best,
        holds_42: a42.holds,
        c,
        best_b: a42.best,
    })
}
