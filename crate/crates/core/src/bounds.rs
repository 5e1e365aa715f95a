//! Rate exponents, width/depth/norm schedules and the capacity bounds behind them.
//!
//! Exponent arithmetic is exact over `Rational64`; floats appear only when a
//! power of `n` has no exact rational value.

use num_rational::Rational64;
use num_traits::ToPrimitive;
use rayon::prelude::*;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::attacks::centers_per_axis;
use crate::error::{Error, Result};
use crate::util::{derived_rng, McEstimate};

fn to_f64(q: Rational64) -> f64 {
    q.to_f64().expect("small rational")
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct RateExponents {
    pub r1: Rational64,
    pub r2: Rational64,
    pub r3: Rational64,
    pub r4: Rational64,
    pub r5: Rational64,
    pub xi: Rational64,
    pub lambda: Rational64,
    pub e_n_exponent: Rational64,
    /// `ceil(log2(d + r))` with `r = ceil(α) − 1`.
    pub gamma: u32,
    /// 1 exactly when `d = 2α` (the log-factor regime), else 0.
    pub c_alpha_d: u8,
}

fn check_d_alpha(d: u32, alpha: Rational64) -> Result<()> {
    if d == 0 {
        return Err(Error::InvalidArgument("d must be >= 1".into()));
    }
    if alpha < Rational64::from_integer(1) {
        return Err(Error::InvalidArgument(format!("alpha must be >= 1, got {alpha}")));
    }
    Ok(())
}

/// `ceil(log2(d + ceil(α) − 1))`.
pub fn gamma(d: u32, alpha: Rational64) -> u32 {
    let m = d as u64 + alpha.ceil().to_integer() as u64 - 1;
    m.next_power_of_two().trailing_zeros()
}

pub fn rate_exponents(d: u32, alpha: Rational64) -> Result<RateExponents> {
    check_d_alpha(d, alpha)?;
    let dq = Rational64::from_integer(d as i64);
    let one = Rational64::from_integer(1);
    let two = Rational64::from_integer(2);
    let three = Rational64::from_integer(3);
    let five = Rational64::from_integer(5);
    let g = gamma(d, alpha);
    let gq = Rational64::from_integer(g as i64);
    let lip_den = two * dq + three * alpha;
    let quad_den = two * dq + five * alpha;
    Ok(RateExponents {
        r1: alpha / lip_den,
        r2: two * alpha / quad_den,
        r3: (dq + three * alpha - one) / lip_den,
        r4: (dq + one) / lip_den,
        r5: (dq + one) / quad_den,
        xi: one.max(gq * alpha / (dq + one)),
        lambda: one.max(two * gq * alpha / (dq + one)),
        e_n_exponent: (dq + two * alpha - one) / lip_den,
        gamma: g,
        c_alpha_d: u8::from(dq == two * alpha),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Task {
    /// Lipschitz losses such as hinge.
    Lipschitz,
    Quadratic,
}

impl Task {
    pub fn name(self) -> &'static str {
        match self {
            Task::Lipschitz => "lipschitz",
            Task::Quadratic => "quadratic",
        }
    }
}

/// `n^e` as an exact rational when `n` is a perfect power of the exponent's denominator.
pub fn exact_power(n: u64, e: Rational64) -> Option<Rational64> {
    let (p, q) = (*e.numer(), *e.denom());
    let q = u32::try_from(q).ok()?;
    let guess = (n as f64).powf(1.0 / q as f64).round() as u64;
    let root = (guess.saturating_sub(1)..=guess + 1).find(|&c| c.checked_pow(q) == Some(n))?;
    let root = i64::try_from(root).ok()?;
    let mag = root.checked_pow(u32::try_from(p.unsigned_abs()).ok()?)?;
    Some(if p >= 0 {
        Rational64::from_integer(mag)
    } else {
        Rational64::new(1, mag)
    })
}

/// `n^e`, exact when possible.
pub fn power(n: u64, e: Rational64) -> f64 {
    match exact_power(n, e) {
        Some(v) => to_f64(v),
        None => (n as f64).powf(to_f64(e)),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Schedule {
    pub n: u64,
    pub task: Task,
    pub k_exponent: Rational64,
    pub wl_exponent: Rational64,
    pub k: f64,
    pub wl: f64,
    /// Exact values when `n` is a perfect power of the exponent denominators.
    pub k_exact: Option<Rational64>,
    pub wl_exact: Option<Rational64>,
    pub gamma: u32,
}

/// Norm budget `K` and width·depth `WL` as unit-constant powers of `n`.
pub fn schedule(n: u64, d: u32, alpha: Rational64, task: Task) -> Result<Schedule> {
    check_d_alpha(d, alpha)?;
    if n == 0 {
        return Err(Error::InvalidArgument("n must be >= 1".into()));
    }
    let dq = Rational64::from_integer(d as i64);
    let one = Rational64::from_integer(1);
    let (k_exponent, wl_exponent) = match task {
        Task::Lipschitz => (
            (dq + one) / (dq * 2 + alpha * 3),
            (dq * 2 + alpha) / (dq * 4 + alpha * 6),
        ),
        Task::Quadratic => (
            (dq + one) / (dq * 2 + alpha * 5),
            (dq * 2 + alpha) / (dq * 4 + alpha * 10),
        ),
    };
    Ok(Schedule {
        n,
        task,
        k_exponent,
        wl_exponent,
        k: power(n, k_exponent),
        wl: power(n, wl_exponent),
        k_exact: exact_power(n, k_exponent),
        wl_exact: exact_power(n, wl_exponent),
        gamma: gamma(d, alpha),
    })
}

/// Attack level schedule: `n^{-(d+2α+1)/(2d+5α)}` for the quadratic task and
/// `n^{-(d+2α-1)/(2d+3α)}` for Lipschitz losses, times `scale`.
pub fn eps_schedule(n: u64, d: u32, alpha: Rational64, task: Task, scale: f64) -> Result<f64> {
    check_d_alpha(d, alpha)?;
    let dq = Rational64::from_integer(d as i64);
    let one = Rational64::from_integer(1);
    let e = match task {
        Task::Quadratic => (dq + alpha * 2 + one) / (dq * 2 + alpha * 5),
        Task::Lipschitz => (dq + alpha * 2 - one) / (dq * 2 + alpha * 3),
    };
    Ok(scale * power(n, -e))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct NetworkShape {
    pub width: usize,
    pub depth: usize,
    /// The width is below `(K / ln^γ K)^{(2d+α)/(2d+2)}`, the approximation-side requirement
    /// at unit constant.
    pub width_below_requirement: bool,
}

/// `L = max(4γ+2, 2)`, `W = ceil(width_const · WL / L)`.
pub fn network_shape(s: &Schedule, d: u32, alpha: Rational64, width_const: f64) -> Result<NetworkShape> {
    if !(width_const > 0.0) {
        return Err(Error::InvalidArgument("width constant must be positive".into()));
    }
    let depth = (4 * s.gamma as usize + 2).max(2);
    let width = ((width_const * s.wl / depth as f64).ceil() as usize).max(1);
    let required = if s.k > std::f64::consts::E {
        let base = s.k / s.k.ln().powi(s.gamma as i32);
        let a = to_f64(alpha);
        base.powf((2.0 * d as f64 + a) / (2.0 * d as f64 + 2.0))
    } else {
        0.0
    };
    Ok(NetworkShape {
        width,
        depth,
        width_below_requirement: (width as f64) < required,
    })
}

/// `C · W²L² ln(W²L)`.
pub fn pdim_bound(w: usize, l: usize, c: f64) -> Result<f64> {
    if w == 0 || l == 0 || !(c > 0.0) {
        return Err(Error::InvalidArgument("pdim needs W, L >= 1 and C > 0".into()));
    }
    let (w, l) = (w as f64, l as f64);
    let arg = w * w * l;
    if arg == 1.0 {
        log::warn!("pseudo-dimension bound is 0 at W = L = 1 (ln 1 = 0)");
    }
    Ok(c * w * w * l * l * arg.ln())
}

/// `C₁ · W²L² ln(W²L) · ln(n/u)`, a bound on the log uniform covering number.
pub fn covering_nn(u: f64, w: usize, l: usize, n: usize, c1: f64) -> Result<f64> {
    if !(u > 0.0) || n == 0 {
        return Err(Error::InvalidArgument("covering_nn needs u > 0 and n >= 1".into()));
    }
    if u >= n as f64 {
        return Err(Error::InvalidArgument(format!("ln(n/u) is not positive for u={u}, n={n}")));
    }
    Ok(pdim_bound(w, l, c1)? * (n as f64 / u).ln())
}

/// `c · u^{−d/α}`.
pub fn covering_holder(u: f64, d: u32, alpha: f64, c: f64) -> Result<f64> {
    if !(u > 0.0) {
        return Err(Error::InvalidArgument("u must be positive".into()));
    }
    Ok(c * u.powf(-(d as f64) / alpha))
}

/// Size of the constructive product τ-cover of the ε-ball and `c · d · ln(max(ε/τ, e))`.
pub fn ball_cover_count(eps: f64, tau: f64, d: u32, c: f64) -> Result<(u64, f64)> {
    if !(tau > 0.0 && tau <= eps * (1.0 + 1e-12)) {
        return Err(Error::InvalidArgument(format!("need 0 < tau <= eps, got tau={tau}, eps={eps}")));
    }
    let m = centers_per_axis(eps, tau)
        .checked_pow(d)
        .ok_or_else(|| Error::Budget("cover count overflows u64".into()))?;
    let log_bound = c * d as f64 * (eps / tau).max(std::f64::consts::E).ln();
    Ok((m, log_bound))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct DudleyResult {
    pub value: f64,
    /// Grid argmin.
    pub delta: f64,
}

const DUDLEY_PANELS: usize = 2000;

/// `∫_a^b √(H(u)/n) du` by the trapezoid rule; geometric mesh when `a > 0`.
fn chaining_integral(entropy: &dyn Fn(f64) -> f64, a: f64, b: f64, n: f64) -> Result<f64> {
    if a >= b {
        return Ok(0.0);
    }
    let nodes: Vec<f64> = if a > 0.0 {
        let ratio = (b / a).ln() / DUDLEY_PANELS as f64;
        (0..=DUDLEY_PANELS)
            .map(|i| if i == DUDLEY_PANELS { b } else { a * (ratio * i as f64).exp() })
            .collect()
    } else {
        (0..=DUDLEY_PANELS)
            .map(|i| a + (b - a) * i as f64 / DUDLEY_PANELS as f64)
            .collect()
    };
    let mut vals = Vec::with_capacity(nodes.len());
    for &u in &nodes {
        let h = entropy(u);
        if !h.is_finite() || h < 0.0 {
            return Err(Error::InvalidArgument(format!("entropy({u}) = {h} is not a finite nonnegative value")));
        }
        vals.push((h / n).sqrt());
    }
    Ok(nodes
        .windows(2)
        .zip(vals.windows(2))
        .map(|(u, v)| 0.5 * (u[1] - u[0]) * (v[0] + v[1]))
        .sum())
}

/// `min over δ in the grid of 4δ + 12 ∫_δ^B √(H(u)/n) du`.
pub fn dudley(entropy: &dyn Fn(f64) -> f64, b: f64, n: usize, delta_grid: &[f64]) -> Result<DudleyResult> {
    if !(b > 0.0) || n == 0 {
        return Err(Error::InvalidArgument("dudley needs B > 0 and n >= 1".into()));
    }
    if delta_grid.is_empty() {
        return Err(Error::InvalidArgument("empty delta grid".into()));
    }
    if let Some(bad) = delta_grid.iter().find(|d| !(**d >= 0.0 && **d <= b)) {
        return Err(Error::InvalidArgument(format!("delta {bad} outside [0, B]")));
    }
    if delta_grid.contains(&0.0) && !entropy(0.0).is_finite() {
        return Err(Error::InvalidArgument(
            "entropy is unbounded at 0; drop delta = 0 from the grid".into(),
        ));
    }
    let mut best = DudleyResult {
        value: f64::INFINITY,
        delta: f64::NAN,
    };
    for &delta in delta_grid {
        let value = 4.0 * delta + 12.0 * chaining_integral(entropy, delta, b, n as f64)?;
        if value < best.value {
            best = DudleyResult { value, delta };
        }
    }
    Ok(best)
}

/// `count` log-spaced points from `lo` to `B` (inclusive).
pub fn geometric_grid(lo: f64, b: f64, count: usize) -> Vec<f64> {
    if count <= 1 {
        return vec![b];
    }
    let step = (b / lo).ln() / (count - 1) as f64;
    (0..count)
        .map(|i| if i + 1 == count { b } else { lo * (step * i as f64).exp() })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct GenAppBounds {
    pub e_gen: f64,
    pub e_app: f64,
}

/// Unit-constant generalization and approximation terms for `𝒩𝒩(W, L, K)`.
#[allow(clippy::too_many_arguments)]
pub fn gen_app_bounds(
    n: u64,
    w: usize,
    l: usize,
    k: f64,
    eps: f64,
    d: u32,
    alpha: Rational64,
) -> Result<GenAppBounds> {
    let rates = rate_exponents(d, alpha)?;
    if !(k > std::f64::consts::E) {
        return Err(Error::InvalidArgument(format!("K must exceed e, got {k}")));
    }
    if n < 3 || w == 0 || l == 0 || !(eps >= 0.0) {
        return Err(Error::InvalidArgument("need n >= 3, W, L >= 1, eps >= 0".into()));
    }
    let (nf, wf, lf) = (n as f64, w as f64, l as f64);
    let a = to_f64(alpha);
    let ln_n = nf.ln();
    let cover_exp = 0.5_f64.min(a / d as f64);
    let e_gen = k * eps / nf
        + wf * lf * (wf * wf * lf).ln().sqrt() * ln_n.sqrt() / nf.sqrt()
        + nf.powf(-cover_exp) * ln_n.powi(rates.c_alpha_d as i32);
    let e_app = (k / k.ln().powi(rates.gamma as i32)).powf(-a / (d as f64 + 1.0));
    Ok(GenAppBounds { e_gen, e_app })
}

/// Draw count meaning "enumerate all sign vectors".
pub const EXACT_ENUMERATION: usize = 0;

fn sup_correlation(values: &[Vec<f64>], sigma: &[f64]) -> f64 {
    let n = sigma.len() as f64;
    values
        .iter()
        .map(|row| row.iter().zip(sigma).map(|(v, s)| v * s).sum::<f64>() / n)
        .fold(f64::NEG_INFINITY, f64::max)
}

/// `E_σ sup_rows (1/n) Σ σ_i v_i` over Rademacher signs.
///
/// `draws = EXACT_ENUMERATION` enumerates all `2^n` sign vectors (n ≤ 20).
pub fn empirical_rademacher(values: &[Vec<f64>], draws: usize, seed: u64) -> Result<McEstimate> {
    let n = values.first().map_or(0, Vec::len);
    if n == 0 {
        return Err(Error::InvalidArgument("value matrix needs m >= 1 rows and n >= 1 columns".into()));
    }
    if values.iter().any(|row| row.len() != n) {
        return Err(Error::Dimension("ragged value matrix".into()));
    }
    if draws == EXACT_ENUMERATION {
        if n > 20 {
            return Err(Error::Budget(format!("exact enumeration needs n <= 20, got {n}")));
        }
        // each sign vector is summed with its negation, so a single row cancels exactly
        let total: f64 = (0..1u64 << (n - 1))
            .into_par_iter()
            .map(|mask| {
                let sigma: Vec<f64> = (0..n).map(|i| if mask >> i & 1 == 1 { 1.0 } else { -1.0 }).collect();
                let flipped: Vec<f64> = sigma.iter().map(|s| -s).collect();
                sup_correlation(values, &sigma) + sup_correlation(values, &flipped)
            })
            .collect::<Vec<_>>()
            .iter()
            .sum();
        return Ok(McEstimate {
            mean: total / (1u64 << n) as f64,
            stderr: 0.0,
            samples: 1 << n,
        });
    }
    let samples: Vec<f64> = (0..draws as u64)
        .into_par_iter()
        .map(|i| {
            let mut rng = derived_rng(seed, i);
            let sigma: Vec<f64> = (0..n).map(|_| if rng.gen::<bool>() { 1.0 } else { -1.0 }).collect();
            sup_correlation(values, &sigma)
        })
        .collect();
    Ok(McEstimate::from_samples(&samples))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn r(n: i64, d: i64) -> Rational64 {
        Rational64::new(n, d)
    }

    fn int(a: i64) -> Rational64 {
        Rational64::from_integer(a)
    }

    #[test]
    fn rate_exponent_examples() {
        let e = rate_exponents(1, int(1)).unwrap();
        assert_eq!((e.r1, e.r2, e.r3, e.r4, e.r5), (r(1, 5), r(2, 7), r(3, 5), r(2, 5), r(2, 7)));
        let e = rate_exponents(2, int(2)).unwrap();
        assert_eq!((e.r1, e.r2, e.r3, e.r4, e.r5), (r(1, 5), r(2, 7), r(7, 10), r(3, 10), r(3, 14)));
        assert_eq!(rate_exponents(2, int(1)).unwrap().c_alpha_d, 1);
        assert_eq!(rate_exponents(3, int(1)).unwrap().c_alpha_d, 0);
    }

    #[test]
    fn rate_exponent_oracle_sweep() {
        for d in 1..=6u32 {
            for (p, q) in [(1, 1), (3, 2), (2, 1), (5, 2), (3, 1)] {
                let a = r(p, q);
                let e = rate_exponents(d, a).unwrap();
                // independent evaluation over the common denominator
                let (dd, pp, qq) = (d as i64, p, q);
                assert_eq!(e.r1, r(pp, 2 * dd * qq + 3 * pp));
                assert_eq!(e.r4, r((dd + 1) * qq, 2 * dd * qq + 3 * pp));
                assert_eq!(e.r3 + e.r4, int(1));
                assert_eq!(e.e_n_exponent, r((dd - 1) * qq + 2 * pp, 2 * dd * qq + 3 * pp));
                for v in [e.r1, e.r2, e.r3, e.r4, e.r5, e.xi, e.lambda] {
                    assert!(v > int(0));
                }
                assert!(e.xi >= int(1) && e.lambda >= e.xi);
            }
        }
    }

    #[test]
    fn gamma_values() {
        assert_eq!(gamma(1, int(1)), 0);
        assert_eq!(gamma(2, int(1)), 1);
        assert_eq!(gamma(3, int(1)), 2);
        assert_eq!(gamma(1, r(3, 2)), 1);
        assert_eq!(gamma(4, int(1)), 2);
        assert_eq!(gamma(5, int(1)), 3);
    }

    #[test]
    fn schedule_examples() {
        let s = schedule(1024, 1, int(1), Task::Lipschitz).unwrap();
        assert_eq!(s.k_exact, Some(int(16)));
        assert_eq!(s.wl_exact, Some(int(8)));
        assert_eq!((s.k, s.wl), (16.0, 8.0));
        for d in 1..4 {
            let s = schedule(1, d, int(1), Task::Quadratic).unwrap();
            assert_eq!((s.k, s.wl), (1.0, 1.0));
        }
        for task in [Task::Lipschitz, Task::Quadratic] {
            let mut prev = (0.0, 0.0);
            for n in 1..2000 {
                let s = schedule(n, 2, r(3, 2), task).unwrap();
                assert!(s.k >= prev.0 && s.wl >= prev.1);
                prev = (s.k, s.wl);
            }
        }
    }

    #[test]
    fn exact_power_cases() {
        assert_eq!(exact_power(1024, r(2, 5)), Some(int(16)));
        assert_eq!(exact_power(128, r(-4, 7)), Some(r(1, 16)));
        assert_eq!(exact_power(100, r(1, 3)), None);
        assert!((power(100, r(1, 3)) - 100f64.powf(1.0 / 3.0)).abs() < 1e-12);
    }

    #[test]
    fn eps_schedule_quadratic_matches_formula() {
        for n in [128u64, 300, 4096] {
            let e = eps_schedule(n, 1, int(1), Task::Quadratic, 1.0).unwrap();
            assert!((e - (n as f64).powf(-4.0 / 7.0)).abs() < 1e-12);
        }
    }

    #[test]
    fn network_shape_uses_gamma_depth() {
        let s = schedule(4096, 1, int(1), Task::Quadratic).unwrap();
        let shape = network_shape(&s, 1, int(1), 8.0).unwrap();
        assert_eq!(shape.depth, 2);
        assert_eq!(shape.width, (8.0 * s.wl / 2.0).ceil() as usize);
        let s = schedule(4096, 3, int(1), Task::Lipschitz).unwrap();
        assert_eq!(network_shape(&s, 3, int(1), 1.0).unwrap().depth, 10);
    }

    #[test]
    fn pdim_examples() {
        assert!((pdim_bound(8, 2, 1.0).unwrap() - 256.0 * 128f64.ln()).abs() < 1e-9);
        assert!((pdim_bound(8, 2, 1.0).unwrap() - 1242.12).abs() < 0.01);
        assert_eq!(pdim_bound(1, 1, 1.0).unwrap(), 0.0);
        for w in 1..40 {
            for l in 1..5 {
                if w == 1 && l == 1 {
                    continue;
                }
                let ratio = pdim_bound(2 * w, l, 1.0).unwrap() / pdim_bound(w, l, 1.0).unwrap();
                let wl = (w * w * l) as f64;
                assert!(ratio >= 4.0 && ratio <= 4.0 * (1.0 + 4f64.ln() / wl.ln()) + 1e-12);
            }
        }
    }

    #[test]
    fn covering_examples() {
        let v = covering_nn(0.1, 4, 2, 100, 1.0).unwrap();
        assert!((v - 64.0 * 32f64.ln() * 1000f64.ln()).abs() < 1e-9);
        assert!((v - 1532.1).abs() < 0.1);
        assert!(covering_nn(100.0, 4, 2, 100, 1.0).is_err());
        assert!(covering_nn(100.0 * (1.0 - 1e-9), 4, 2, 100, 1.0).unwrap() < 1e-5);
        let mut prev = f64::INFINITY;
        for i in 1..100 {
            let v = covering_nn(i as f64 * 0.5, 3, 2, 100, 1.0).unwrap();
            assert!(v < prev);
            prev = v;
        }
        assert!((covering_holder(0.1, 1, 1.0, 1.0).unwrap() - 10.0).abs() < 1e-12);
        assert_eq!(covering_holder(1.0, 3, 2.0, 2.5).unwrap(), 2.5);
        let one = covering_holder(0.3, 1, 1.0, 1.0).unwrap();
        let two = covering_holder(0.3, 2, 1.0, 1.0).unwrap();
        assert!((two.ln() - 2.0 * one.ln()).abs() < 1e-12);
    }

    #[test]
    fn ball_cover_examples() {
        assert_eq!(ball_cover_count(0.1, 0.05, 1, 2.0).unwrap().0, 2);
        assert_eq!(ball_cover_count(0.2, 0.05, 2, 2.0).unwrap().0, 16);
        for eps in [0.05, 0.1, 0.2, 0.3] {
            for k in 1..=20 {
                let tau = eps / k as f64 * 1.01;
                if tau > eps {
                    continue;
                }
                for d in 1..=3 {
                    let (m, bound) = ball_cover_count(eps, tau, d, 2.0).unwrap();
                    assert!((m as f64).ln() <= bound + 1e-12);
                    let cover = crate::attacks::build_cover(eps, tau, d as usize).unwrap();
                    assert_eq!(cover.len() as u64, m);
                }
            }
        }
    }

    #[test]
    fn dudley_zero_entropy() {
        let grid = [0.0, 0.5, 1.0];
        let res = dudley(&|_| 0.0, 1.0, 100, &grid).unwrap();
        assert_eq!(res.value, 0.0);
        assert_eq!(res.delta, 0.0);
    }

    #[test]
    fn dudley_rejects_unbounded_entropy_at_zero() {
        assert!(dudley(&|u: f64| u.powi(-2), 1.0, 100, &[0.0, 0.5]).is_err());
    }

    #[test]
    fn dudley_integral_matches_closed_form() {
        // √(u^{-2}/n) integrates to ln(B/δ)/√n
        let n = 400;
        let v = chaining_integral(&|u: f64| u.powi(-2), 0.01, 4.0, n as f64).unwrap();
        let exact = (4.0f64 / 0.01).ln() / 20.0;
        assert!((v - exact).abs() / exact < 1e-5);
    }

    #[test]
    fn dudley_respects_crude_bound_and_grid_argmin() {
        let b = 4.0;
        for n in [100usize, 1000, 10000] {
            for p in [0.5, 2.0, 4.0] {
                let h = move |u: f64| u.powf(-p);
                let grid = geometric_grid(1e-6, b, 200);
                let res = dudley(&h, b, n, &grid).unwrap();
                assert!(grid.contains(&res.delta));
                let crude = 4.0 * b + 12.0 * b * (h(grid[0]) / n as f64).sqrt();
                assert!(res.value <= crude);
            }
        }
    }

    #[test]
    fn dudley_log_regime_tracks_closed_form() {
        // entropy u^{-2}: at δ = n^{-1/2} the bound is 4/√n + 12 ln(B√n)/√n, of order n^{-1/2} ln n
        let b = 4.0;
        let grid = geometric_grid(1e-8, b, 400);
        let h = |u: f64| u.powi(-2);
        let closed = |n: f64| 4.0 / n.sqrt() + 12.0 * (b * n.sqrt()).ln() / n.sqrt();
        let v1 = dudley(&h, b, 100, &grid).unwrap().value;
        let v2 = dudley(&h, b, 10000, &grid).unwrap().value;
        // fit the constant at n = 100, predict n = 10⁴
        let c = v1 / closed(100.0);
        let predicted = c * closed(10000.0);
        assert!((v2 - predicted).abs() / predicted < 0.10);
    }

    #[test]
    fn dudley_fast_regime_ratio() {
        let b = 4.0;
        let grid = geometric_grid(1e-10, b, 400);
        let h = |u: f64| u.powf(-0.5);
        let v1 = dudley(&h, b, 100, &grid).unwrap().value;
        let v2 = dudley(&h, b, 10000, &grid).unwrap().value;
        assert!((v1 / v2 - 10.0).abs() / 10.0 < 0.15);
    }

    #[test]
    fn gen_app_examples() {
        let a = gen_app_bounds(1000, 4, 2, 10.0, 0.0, 1, int(1)).unwrap();
        let b = gen_app_bounds(1000, 4, 2, 10.0, 0.3, 1, int(1)).unwrap();
        assert!((b.e_gen - a.e_gen - 10.0 * 0.3 / 1000.0).abs() < 1e-15);
        assert!(gen_app_bounds(1000, 4, 2, 2.7, 0.0, 1, int(1)).is_err());
        assert!(gen_app_bounds(2, 4, 2, 10.0, 0.0, 1, int(1)).is_err());
    }

    #[test]
    fn e_app_decreases_beyond_e_gamma() {
        for (d, a) in [(1u32, int(1)), (2, int(1)), (3, int(1)), (4, r(3, 2))] {
            let g = gamma(d, a);
            let start = std::f64::consts::E.powi(g.max(1) as i32) * 1.01;
            let mut prev = f64::INFINITY;
            for i in 0..200 {
                let k = start * 1.05f64.powi(i);
                let v = gen_app_bounds(100, 4, 2, k, 0.0, d, a).unwrap().e_app;
                assert!(v < prev);
                prev = v;
            }
        }
    }

    #[test]
    fn gen_bounds_nonincreasing_in_n() {
        let mut prev = f64::INFINITY;
        for n in 10..3000u64 {
            let v = gen_app_bounds(n, 4, 2, 10.0, 0.1, 2, int(1)).unwrap().e_gen;
            assert!(v <= prev + 1e-15);
            prev = v;
        }
    }

    #[test]
    fn scheduled_bounds_follow_the_rate() {
        // d = 1, α = 1: K ε/n and WL/√n are both n^{-1/5}; E_app is K^{-1/2} = n^{-1/5}
        let total = |n: u64| {
            let s = schedule(n, 1, int(1), Task::Lipschitz).unwrap();
            let eps = power(n, rate_exponents(1, int(1)).unwrap().e_n_exponent);
            let l = 2usize;
            let w = (s.wl / l as f64).ceil().max(1.0) as usize;
            let b = gen_app_bounds(n, w, l, s.k, eps, 1, int(1)).unwrap();
            (b.e_gen + b.e_app) / (n as f64).ln()
        };
        let (lo, hi) = (1u64 << 10, 1u64 << 20);
        let measured = (total(hi) / total(lo)).ln() / ((hi as f64) / (lo as f64)).ln();
        assert!((measured - (-0.2)).abs() <= 0.25 * 0.2, "measured exponent {measured}");
    }

    #[test]
    fn rademacher_constant_row_is_zero() {
        let v = vec![vec![0.7; 12]];
        let est = empirical_rademacher(&v, EXACT_ENUMERATION, 0).unwrap();
        assert_eq!(est.mean, 0.0);
    }

    #[test]
    fn rademacher_two_rows_matches_binomial_mad() {
        for n in 1..=14usize {
            let v = vec![vec![1.0; n], vec![-1.0; n]];
            let est = empirical_rademacher(&v, EXACT_ENUMERATION, 0).unwrap();
            // E|S_n| with S_n a sum of n signs, by the binomial law
            let mut mad = 0.0;
            let mut choose = 1.0f64;
            for k in 0..=n {
                if k > 0 {
                    choose = choose * (n - k + 1) as f64 / k as f64;
                }
                mad += choose * (2.0 * k as f64 - n as f64).abs();
            }
            mad /= 2f64.powi(n as i32) * n as f64;
            assert!((est.mean - mad).abs() < 1e-12);
        }
    }

    #[test]
    fn rademacher_mc_close_to_exact() {
        let v: Vec<Vec<f64>> = (0..5).map(|i| (0..10).map(|j| ((i * 7 + j * 3) % 5) as f64 / 5.0).collect()).collect();
        let exact = empirical_rademacher(&v, EXACT_ENUMERATION, 0).unwrap().mean;
        let mc = empirical_rademacher(&v, 20000, 3).unwrap();
        assert!((mc.mean - exact).abs() < 5.0 * mc.stderr + 1e-9);
        assert_eq!(mc, empirical_rademacher(&v, 20000, 3).unwrap());
    }
}
