//! Inner maximization over the `ℓ∞` ball `B_ε(x)`.
//!
//! Three attacks are provided. The cover attack maximizes over a finite τ-net of
//! the ball and undershoots the true supremum by at most `Lip¹(ℓ)·κ(f)·τ`. PGD is
//! a signed-gradient ascent and gives a lower bound. The brute-force grid is the
//! desk-scale oracle for `d ≤ 2`.
//!
//! Every attack also scores the clean point, so the returned value never drops
//! below the clean loss. The clean point is scored last and only replaces an
//! offset on strict improvement, so ties go to the lowest offset index.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::losses::LossSpec;
use crate::nn::Predictor;
use crate::util::derived_rng;

/// Default cap on the number of cover offsets.
pub const DEFAULT_COVER_BUDGET: u64 = 1_000_000;
/// Cap on brute-force grid size.
pub const BRUTE_BUDGET: u64 = 10_000_000;

const BOX_TOL: f64 = 1e-12;

/// A finite τ-cover of `B_ε(0)` built as a product of per-axis centers.
#[derive(Debug, Clone, PartialEq)]
pub struct Cover {
    pub eps: f64,
    pub tau: f64,
    pub dim: usize,
    pub offsets: Vec<Vec<f64>>,
}

impl Cover {
    pub fn len(&self) -> usize {
        self.offsets.len()
    }

    pub fn is_empty(&self) -> bool {
        self.offsets.is_empty()
    }

    /// All multiples of `step` inside `[-ε, ε]^d`. Lattices for growing ε are nested.
    pub fn lattice(eps: f64, step: f64, dim: usize) -> Result<Self> {
        if !(step > 0.0) || !(eps >= 0.0) {
            return Err(Error::InvalidArgument("lattice needs step > 0, eps >= 0".into()));
        }
        let k = (eps / step + 1e-9).floor() as i64;
        let axis: Vec<f64> = (-k..=k).map(|i| i as f64 * step).collect();
        let count = (axis.len() as u64).checked_pow(dim as u32);
        if count.is_none_or(|c| c > DEFAULT_COVER_BUDGET) {
            return Err(Error::Budget(format!(
                "lattice would have {}^{dim} points",
                axis.len()
            )));
        }
        Ok(Cover {
            eps,
            tau: step,
            dim,
            offsets: product(&axis, dim),
        })
    }
}

fn product(axis: &[f64], dim: usize) -> Vec<Vec<f64>> {
    let mut out: Vec<Vec<f64>> = vec![Vec::with_capacity(dim)];
    for _ in 0..dim {
        let mut next = Vec::with_capacity(out.len() * axis.len());
        for prefix in &out {
            for &a in axis {
                let mut p = prefix.clone();
                p.push(a);
                next.push(p);
            }
        }
        out = next;
    }
    out
}

/// Number of per-axis centers, `ceil(ε/τ)` with a little slack against rounding.
pub(crate) fn centers_per_axis(eps: f64, tau: f64) -> u64 {
    ((eps / tau) - 1e-9).ceil().max(1.0) as u64
}

/// Product τ-cover with per-axis centers `−ε + τ(2k+1)`, the last clamped to `ε − τ`.
pub fn build_cover(eps: f64, tau: f64, dim: usize) -> Result<Cover> {
    build_cover_with_budget(eps, tau, dim, DEFAULT_COVER_BUDGET)
}

pub fn build_cover_with_budget(eps: f64, tau: f64, dim: usize, budget: u64) -> Result<Cover> {
    if !(tau > 0.0 && tau <= eps * (1.0 + 1e-12)) {
        return Err(Error::InvalidArgument(format!(
            "cover needs 0 < tau <= eps, got tau={tau}, eps={eps}"
        )));
    }
    if dim == 0 {
        return Err(Error::InvalidArgument("cover dimension must be positive".into()));
    }
    let m = centers_per_axis(eps, tau);
    let total = m.checked_pow(dim as u32);
    match total {
        Some(t) if t <= budget => {}
        _ => {
            return Err(Error::Budget(format!(
                "cover size M_tau = {m}^{dim} exceeds budget {budget}"
            )))
        }
    }
    let right = (eps - tau).max(-eps);
    let axis: Vec<f64> = (0..m)
        .map(|k| (-eps + tau * (2 * k + 1) as f64).min(right))
        .collect();
    Ok(Cover {
        eps,
        tau,
        dim,
        offsets: product(&axis, dim),
    })
}

/// Default cover radius `τ = ε / max(n, 10)`, enlarged until `M_τ` fits the budget.
pub fn default_tau(eps: f64, n: usize, dim: usize, budget: u64) -> f64 {
    let mut tau = eps / (n.max(10) as f64);
    while centers_per_axis(eps, tau)
        .checked_pow(dim as u32)
        .is_none_or(|c| c > budget)
    {
        tau *= 1.25;
    }
    tau.min(eps)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "method", rename_all = "snake_case")]
pub enum AttackMethod {
    Cover { tau: f64 },
    Pgd { steps: usize, step_size: f64, restarts: usize },
    Brute { resolution: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AttackConfig {
    pub eps: f64,
    pub method: AttackMethod,
    pub seed: u64,
}

impl AttackConfig {
    /// PGD with 20 steps, step ε/4, 3 restarts.
    pub fn pgd_default(eps: f64, seed: u64) -> Self {
        AttackConfig {
            eps,
            method: AttackMethod::Pgd {
                steps: 20,
                step_size: eps / 4.0,
                restarts: 3,
            },
            seed,
        }
    }

    pub fn validate(&self, dim: usize) -> Result<()> {
        if !(self.eps >= 0.0) || !self.eps.is_finite() {
            return Err(Error::InvalidArgument(format!("eps must be >= 0, got {}", self.eps)));
        }
        match self.method {
            AttackMethod::Cover { tau } => {
                if self.eps > 0.0 && !(tau > 0.0 && tau <= self.eps * (1.0 + 1e-12)) {
                    return Err(Error::InvalidArgument(format!("cover tau {tau} not in (0, eps]")));
                }
            }
            AttackMethod::Pgd {
                steps,
                step_size,
                restarts,
            } => {
                if steps == 0 || restarts == 0 {
                    return Err(Error::InvalidArgument("pgd needs steps >= 1, restarts >= 1".into()));
                }
                if self.eps > 0.0 && !(step_size > 0.0) {
                    return Err(Error::InvalidArgument("pgd step size must be positive".into()));
                }
            }
            AttackMethod::Brute { resolution } => {
                if !(resolution > 0.0) {
                    return Err(Error::InvalidArgument("brute resolution must be positive".into()));
                }
                if dim > 2 {
                    return Err(Error::Unsupported(format!("brute attack needs d <= 2, got {dim}")));
                }
            }
        }
        Ok(())
    }

    pub fn describe(&self) -> String {
        match self.method {
            AttackMethod::Cover { tau } => format!("cover(eps={},tau={tau})", self.eps),
            AttackMethod::Pgd {
                steps,
                step_size,
                restarts,
            } => format!(
                "pgd(eps={},steps={steps},step={step_size},restarts={restarts})",
                self.eps
            ),
            AttackMethod::Brute { resolution } => {
                format!("brute(eps={},res={resolution})", self.eps)
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AttackResult {
    pub x_adv: Vec<f64>,
    pub value: f64,
    pub clean: f64,
    pub method: &'static str,
    pub evaluations: usize,
}

/// Scalar objective of the prediction, maximized by the attacks.
#[derive(Clone, Copy)]
enum Objective<'a> {
    Loss { loss: &'a LossSpec, y: f64 },
    /// `sign · f(x)`: +1 finds the max of `f`, −1 the min.
    Output(f64),
}

impl Objective<'_> {
    fn value(&self, u: f64) -> f64 {
        match *self {
            Objective::Loss { loss, y } => loss.eval(u, y),
            Objective::Output(s) => s * u,
        }
    }

    fn deriv(&self, u: f64) -> Result<f64> {
        match *self {
            Objective::Loss { loss, y } => loss.deriv_u(u, y),
            Objective::Output(s) => Ok(s),
        }
    }
}

fn check_ball_in_box(x: &[f64], eps: f64) -> Result<()> {
    for (i, &xi) in x.iter().enumerate() {
        if xi - eps < -BOX_TOL || xi + eps > 1.0 + BOX_TOL {
            return Err(Error::Precondition(format!(
                "B_eps(x) leaves [0,1]^d on axis {i} (x={xi}, eps={eps})"
            )));
        }
    }
    Ok(())
}

fn check_dim<P: Predictor + ?Sized>(f: &P, x: &[f64]) -> Result<()> {
    if x.len() != f.input_dim() {
        return Err(Error::Dimension(format!(
            "point has length {}, predictor expects {}",
            x.len(),
            f.input_dim()
        )));
    }
    Ok(())
}

/// Argmax over `x + δ_j`, then the clean point.
fn maximize_offsets<P: Predictor + ?Sized>(
    f: &P,
    obj: Objective,
    x: &[f64],
    offsets: &[Vec<f64>],
    method: &'static str,
) -> Result<AttackResult> {
    check_dim(f, x)?;
    let clean = obj.value(f.value(x));
    let mut best: Option<(f64, Vec<f64>)> = None;
    let mut cand = vec![0.0; x.len()];
    for delta in offsets {
        for ((c, xi), di) in cand.iter_mut().zip(x).zip(delta) {
            *c = xi + di;
        }
        if cand.iter().any(|&c| !(-BOX_TOL..=1.0 + BOX_TOL).contains(&c)) {
            return Err(Error::Precondition(format!(
                "attack point {cand:?} leaves [0,1]^d"
            )));
        }
        let v = obj.value(f.value(&cand));
        if best.as_ref().is_none_or(|(b, _)| v > *b) {
            best = Some((v, cand.clone()));
        }
    }
    let (value, x_adv) = match best {
        Some((v, p)) if v >= clean => (v, p),
        _ => (clean, x.to_vec()),
    };
    Ok(AttackResult {
        x_adv,
        value,
        clean,
        method,
        evaluations: offsets.len() + 1,
    })
}

/// Maximize the loss over `x + δ_j` for the cover offsets.
pub fn attack_cover<P: Predictor + ?Sized>(
    f: &P,
    loss: &LossSpec,
    x: &[f64],
    y: f64,
    cover: &Cover,
) -> Result<AttackResult> {
    if cover.dim != x.len() {
        return Err(Error::Dimension("cover dimension differs from the point".into()));
    }
    maximize_offsets(f, Objective::Loss { loss, y }, x, &cover.offsets, "cover")
}

fn brute_offsets(eps: f64, resolution: f64, dim: usize) -> Result<Vec<Vec<f64>>> {
    if dim > 2 {
        return Err(Error::Unsupported(format!("brute attack needs d <= 2, got {dim}")));
    }
    if !(resolution > 0.0) {
        return Err(Error::InvalidArgument("resolution must be positive".into()));
    }
    if eps == 0.0 {
        return Ok(vec![vec![0.0; dim]]);
    }
    let steps = ((2.0 * eps / resolution) - 1e-9).ceil().max(1.0);
    let size = (steps + 1.0).powi(dim as i32);
    if size > BRUTE_BUDGET as f64 {
        return Err(Error::Budget(format!(
            "brute grid has {size} points (limit {BRUTE_BUDGET})"
        )));
    }
    let steps = steps as usize;
    let axis: Vec<f64> = (0..=steps)
        .map(|j| {
            if j == steps {
                eps
            } else {
                (-eps + j as f64 * resolution).min(eps)
            }
        })
        .collect();
    Ok(product(&axis, dim))
}

/// Exhaustive grid maximum over `B_ε(x)` with spacing `resolution` (`d ≤ 2`).
pub fn attack_brute<P: Predictor + ?Sized>(
    f: &P,
    loss: &LossSpec,
    x: &[f64],
    y: f64,
    eps: f64,
    resolution: f64,
) -> Result<AttackResult> {
    check_ball_in_box(x, eps)?;
    let offsets = brute_offsets(eps, resolution, x.len())?;
    maximize_offsets(f, Objective::Loss { loss, y }, x, &offsets, "brute")
}

fn pgd_inner<P: Predictor + ?Sized, R: Rng + ?Sized>(
    f: &P,
    obj: Objective,
    x: &[f64],
    eps: f64,
    steps: usize,
    step_size: f64,
    restarts: usize,
    rng: &mut R,
) -> Result<AttackResult> {
    check_dim(f, x)?;
    let clean = obj.value(f.value(x));
    let mut best_value = clean;
    let mut best_x = x.to_vec();
    let mut evaluations = 1;
    if eps > 0.0 {
        check_ball_in_box(x, eps)?;
        for _ in 0..restarts {
            let mut cur: Vec<f64> = x.iter().map(|&xi| xi + rng.gen_range(-eps..=eps)).collect();
            for _ in 0..=steps {
                let u = f.value(&cur);
                let v = obj.value(u);
                evaluations += 1;
                if v > best_value {
                    best_value = v;
                    best_x.clone_from(&cur);
                }
                let scale = obj.deriv(u)?;
                if scale == 0.0 {
                    break;
                }
                let g = f.input_gradient(&cur);
                let mut moved = false;
                for ((c, gi), xi) in cur.iter_mut().zip(&g).zip(x) {
                    let s = scale * gi;
                    if s != 0.0 {
                        let next = (*c + step_size * s.signum()).clamp(xi - eps, xi + eps);
                        moved |= next != *c;
                        *c = next;
                    }
                }
                if !moved {
                    break;
                }
            }
        }
    }
    Ok(AttackResult {
        x_adv: best_x,
        value: best_value,
        clean,
        method: "pgd",
        evaluations,
    })
}

/// Signed-gradient ascent on the loss with random restarts inside `B_ε(x)`.
pub fn attack_pgd<P: Predictor + ?Sized, R: Rng + ?Sized>(
    f: &P,
    loss: &LossSpec,
    x: &[f64],
    y: f64,
    eps: f64,
    steps: usize,
    step_size: f64,
    restarts: usize,
    rng: &mut R,
) -> Result<AttackResult> {
    loss.deriv_u(0.0, y)?;
    pgd_inner(f, Objective::Loss { loss, y }, x, eps, steps, step_size, restarts, rng)
}

/// `Lip¹(ℓ) · κ(f) · τ`.
pub fn certified_gap<P: Predictor + ?Sized>(loss: &LossSpec, f: &P, tau: f64) -> Result<f64> {
    if tau == 0.0 {
        loss.lip1()?;
        return Ok(0.0);
    }
    Ok(loss.lip1()? * f.lipschitz_bound() * tau)
}

/// A configured attack, with the cover (if any) built once.
#[derive(Debug, Clone)]
pub struct Attacker {
    cfg: AttackConfig,
    cover: Option<Cover>,
}

impl Attacker {
    pub fn new(cfg: AttackConfig, dim: usize) -> Result<Self> {
        cfg.validate(dim)?;
        let cover = match cfg.method {
            AttackMethod::Cover { tau } if cfg.eps > 0.0 => Some(build_cover(cfg.eps, tau, dim)?),
            _ => None,
        };
        Ok(Attacker { cfg, cover })
    }

    pub fn config(&self) -> &AttackConfig {
        &self.cfg
    }

    pub fn eps(&self) -> f64 {
        self.cfg.eps
    }

    fn run<P: Predictor + ?Sized>(&self, f: &P, obj: Objective, x: &[f64], index: u64) -> Result<AttackResult> {
        if self.cfg.eps == 0.0 {
            return maximize_offsets(f, obj, x, &[], "clean");
        }
        match self.cfg.method {
            AttackMethod::Cover { .. } => {
                let cover = self.cover.as_ref().expect("built for eps > 0");
                maximize_offsets(f, obj, x, &cover.offsets, "cover")
            }
            AttackMethod::Brute { resolution } => {
                check_ball_in_box(x, self.cfg.eps)?;
                let offsets = brute_offsets(self.cfg.eps, resolution, x.len())?;
                maximize_offsets(f, obj, x, &offsets, "brute")
            }
            AttackMethod::Pgd {
                steps,
                step_size,
                restarts,
            } => {
                let mut rng = derived_rng(self.cfg.seed, index);
                pgd_inner(f, obj, x, self.cfg.eps, steps, step_size, restarts, &mut rng)
            }
        }
    }

    /// Attack sample `index`; PGD draws from a stream derived from `(seed, index)`.
    pub fn attack<P: Predictor + ?Sized>(
        &self,
        f: &P,
        loss: &LossSpec,
        x: &[f64],
        y: f64,
        index: u64,
    ) -> Result<AttackResult> {
        if matches!(self.cfg.method, AttackMethod::Pgd { .. }) && self.cfg.eps > 0.0 {
            loss.deriv_u(0.0, y)?;
        }
        self.run(f, Objective::Loss { loss, y }, x, index)
    }

    /// Estimates of `(max f, min f)` over `B_ε(x)`; both bracket the clean value.
    pub fn output_extremes<P: Predictor + ?Sized>(&self, f: &P, x: &[f64], index: u64) -> Result<(f64, f64)> {
        let hi = self.run(f, Objective::Output(1.0), x, index)?.value;
        let lo = -self.run(f, Objective::Output(-1.0), x, index.wrapping_add(1 << 62))?.value;
        Ok((hi, lo))
    }
}

/// One line of an attack trace dump.
#[derive(Debug, Clone, Serialize)]
pub struct AttackTrace {
    pub index: usize,
    pub x: Vec<f64>,
    pub x_adv: Vec<f64>,
    pub clean: f64,
    pub adv: f64,
}

/// Write traces as JSON lines.
pub fn write_traces<W: std::io::Write>(mut w: W, traces: &[AttackTrace]) -> Result<()> {
    for t in traces {
        serde_json::to_writer(&mut w, t)?;
        writeln!(w)?;
    }
    Ok(())
}
