//! Invariant suites run by `advlab verify` and the acceptance tests.

use std::time::Instant;

use num_rational::Rational64;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

use super::config::VerifySection;
use crate::attacks::{attack_brute, attack_cover, build_cover, AttackConfig, AttackMethod};
use crate::bounds::{dudley, pdim_bound, rate_exponents, schedule, Task};
use crate::data::{Dataset, DatasetMeta};
use crate::dist::{equivalence_suite, split_suite};
use crate::error::{Error, Result};
use crate::losses::{check_assumption_41, check_assumption_42, check_margin_transfer, CalibrationGrid, LossSpec};
use crate::nn::{Architecture, NetworkParams, NormBudget, Predictor};
use crate::risk::sandwich;
use crate::train::{adv_train, ClampedNetwork, LrSchedule, TrainConfig};
use crate::util::{derived_rng, linf_distance, mix_seed};

pub const SUITES: [&str; 8] = [
    "kappa",
    "feasibility",
    "sandwich",
    "cover_gap",
    "gradients",
    "calibration",
    "equivalence",
    "bounds",
];

/// Deliberate defects used to check that the suites can fail.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Fault {
    /// Train without the norm projection.
    SkipProjection,
}

impl std::str::FromStr for Fault {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "skip-projection" => Ok(Fault::SkipProjection),
            _ => Err(Error::InvalidArgument(format!("unknown fault {s:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SuiteReport {
    pub name: String,
    pub passed: bool,
    pub checks: u64,
    pub violations: u64,
    pub detail: String,
    pub seconds: f64,
}

impl SuiteReport {
    pub fn line(&self) -> String {
        format!(
            "[{}] {:<12} {} checks, {} violations: {} ({:.2} s)",
            if self.passed { "PASS" } else { "FAIL" },
            self.name,
            self.checks,
            self.violations,
            self.detail,
            self.seconds
        )
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct VerifyReport {
    pub passed: bool,
    pub suites: Vec<SuiteReport>,
}

impl VerifyReport {
    pub fn text(&self) -> String {
        let mut s: String = self.suites.iter().map(|r| r.line() + "\n").collect();
        s += if self.passed { "all suites passed\n" } else { "some suites FAILED\n" };
        s
    }
}

fn report(name: &str, checks: u64, violations: u64, detail: String, start: Instant) -> SuiteReport {
    SuiteReport {
        name: name.into(),
        passed: violations == 0 && checks > 0,
        checks,
        violations,
        detail,
        seconds: start.elapsed().as_secs_f64(),
    }
}

/// Network with every parameter uniform in `[−scale, scale]`.
pub fn random_network(rng: &mut ChaCha8Rng, d: usize, width: usize, depth: usize, scale: f64) -> NetworkParams {
    let arch = Architecture::uniform(d, width, depth).expect("positive sizes");
    let mut p = NetworkParams::zeros(&arch);
    let values: Vec<f64> = (0..p.flat().len()).map(|_| rng.gen_range(-scale..=scale)).collect();
    p.set_flat(&values).expect("matching length");
    p
}

fn random_point(rng: &mut ChaCha8Rng, d: usize, margin: f64) -> Vec<f64> {
    (0..d).map(|_| rng.gen_range(margin..=1.0 - margin)).collect()
}

/// `|f(x₁) − f(x₂)| ≤ κ‖x₁ − x₂‖∞ + 1e−9` on random networks (d ≤ 3, W ≤ 16, L ≤ 4)
/// and random pairs, half of them close together.
pub fn kappa_suite(networks: usize, pairs: usize, seed: u64) -> SuiteReport {
    let start = Instant::now();
    let violations: u64 = (0..networks as u64)
        .into_par_iter()
        .map(|i| {
            let mut rng = derived_rng(seed, i);
            let d = rng.gen_range(1..=3);
            let w = rng.gen_range(1..=16);
            let l = rng.gen_range(1..=4);
            let scale = rng.gen_range(0.1..3.0);
            let net = random_network(&mut rng, d, w, l, scale);
            let kappa = net.kappa();
            let mut bad = 0;
            for j in 0..pairs {
                let x1 = random_point(&mut rng, d, 0.0);
                let x2 = if j % 2 == 0 {
                    random_point(&mut rng, d, 0.0)
                } else {
                    x1.iter().map(|v| v + rng.gen_range(-1e-3..1e-3)).collect()
                };
                let gap = (net.eval(&x1) - net.eval(&x2)).abs();
                if gap > kappa * linf_distance(&x1, &x2) + 1e-9 {
                    bad += 1;
                }
            }
            bad
        })
        .sum();
    report(
        "kappa",
        (networks * pairs) as u64,
        violations,
        format!("{networks} networks x {pairs} pairs"),
        start,
    )
}

fn step_dataset(n: usize, eps: f64) -> Dataset {
    let x: Vec<Vec<f64>> = (0..n).map(|i| vec![0.1 + 0.8 * i as f64 / (n - 1) as f64]).collect();
    let y = x.iter().map(|v| if v[0] < 0.5 { -1.0 } else { 1.0 }).collect();
    Dataset::new(
        x,
        y,
        DatasetMeta {
            n,
            d: 1,
            eps,
            generator: "step".into(),
            seed: 0,
        },
    )
    .expect("valid dataset")
}

/// Every epoch of projected training keeps `κ ≤ K(1 + 1e−9)`; the fault disables projection.
pub fn feasibility_suite(runs: usize, seed: u64, fault: Option<Fault>) -> Result<SuiteReport> {
    let start = Instant::now();
    let data = step_dataset(40, 0.05);
    let loss = LossSpec::quadratic(2.0)?;
    let arch = Architecture::uniform(1, 8, 2)?;
    let mut checks = 0;
    let mut violations = 0;
    let mut worst: f64 = 0.0;
    for r in 0..runs.max(1) {
        let k = [1.0, 2.0, 4.0, 8.0][r % 4];
        let cfg = TrainConfig {
            epochs: 30,
            batch_size: 4,
            lr: 0.5,
            schedule: LrSchedule::Constant,
            attack: Some(AttackConfig::pgd_default(0.05, mix_seed(seed, r as u64))),
            budget: NormBudget::new(k)?,
            clamp: None,
            seed: mix_seed(seed, r as u64),
            project: fault != Some(Fault::SkipProjection),
        };
        let (_, history) = adv_train(&data, &arch, &cfg, &loss)?;
        for rec in &history.records {
            checks += 1;
            worst = worst.max(rec.kappa / k);
            if rec.kappa > k * (1.0 + 1e-9) {
                violations += 1;
            }
        }
    }
    Ok(report(
        "feasibility",
        checks,
        violations,
        format!("max kappa/K = {worst:.6}"),
        start,
    ))
}

fn random_dataset(rng: &mut ChaCha8Rng, n: usize, d: usize, eps: f64, labels_pm: bool) -> Dataset {
    let x: Vec<Vec<f64>> = (0..n).map(|_| random_point(rng, d, eps)).collect();
    let y: Vec<f64> = (0..n)
        .map(|_| {
            if labels_pm {
                if rng.gen::<bool>() {
                    1.0
                } else {
                    -1.0
                }
            } else {
                rng.gen_range(-1.0..=1.0)
            }
        })
        .collect();
    Dataset::new(
        x,
        y,
        DatasetMeta {
            n,
            d,
            eps,
            generator: "random".into(),
            seed: 0,
        },
    )
    .expect("valid dataset")
}

/// `natural ≤ adv_lower ≤ natural + Lip¹·κ·ε + 1e−9` for random models, data, losses
/// and attack methods; every fifth model is clamped.
pub fn sandwich_suite(models: usize, seed: u64) -> Result<SuiteReport> {
    let start = Instant::now();
    let outcomes: Vec<Result<bool>> = (0..models as u64)
        .into_par_iter()
        .map(|i| {
            let mut rng = derived_rng(seed, i);
            let d = rng.gen_range(1..=2);
            let (w, l, scale) = (rng.gen_range(1..=8), rng.gen_range(1..=2), rng.gen_range(0.2..2.0));
            let net = random_network(&mut rng, d, w, l, scale);
            let eps = rng.gen_range(0.01..0.2);
            let hinge = i % 2 == 0;
            let data = random_dataset(&mut rng, 16, d, eps, hinge);
            let method = match i % 3 {
                0 => AttackMethod::Pgd {
                    steps: 10,
                    step_size: eps / 4.0,
                    restarts: 2,
                },
                1 => AttackMethod::Cover { tau: eps / 3.0 },
                _ => AttackMethod::Brute { resolution: eps / 5.0 },
            };
            let attack = AttackConfig { eps, method, seed: i };
            let clamped = (i % 5 == 4).then(|| {
                let top = data.x.iter().map(|x| net.eval(x).abs()).fold(0.0, f64::max);
                ClampedNetwork {
                    params: net.clone(),
                    bound: (0.5 * top).max(1e-3),
                }
            });
            let f: &dyn Predictor = match &clamped {
                Some(c) => c,
                None => &net,
            };
            let loss = if hinge {
                LossSpec::hinge()
            } else {
                let reach = data.x.iter().map(|x| f.value(x).abs()).fold(0.0, f64::max) + f.lipschitz_bound() * eps;
                LossSpec::quadratic(reach + 1.0)?
            };
            let r = match sandwich(f, &loss, &data, &attack) {
                Ok(r) => r,
                Err(Error::Invariant(_)) => return Ok(false),
                Err(e) => return Err(e),
            };
            let lip1 = loss.lip1()?;
            Ok(r.natural <= r.adv_lower + 1e-9
                && r.adv_lower <= r.natural + lip1 * r.kappa * eps + 1e-9)
        })
        .collect();
    let mut violations = 0;
    for o in outcomes {
        if !o? {
            violations += 1;
        }
    }
    Ok(report(
        "sandwich",
        models as u64,
        violations,
        format!("{models} models, hinge and quadratic, pgd/cover/brute"),
        start,
    ))
}

/// `brute(τ/20) − cover(τ) ≤ Lip¹·κ·τ + Lip¹·κ·τ/20 + 1e−9` in d ∈ {1, 2}.
pub fn cover_gap_suite(instances: usize, seed: u64) -> Result<SuiteReport> {
    let start = Instant::now();
    let outcomes: Vec<Result<(bool, f64)>> = (0..instances as u64)
        .into_par_iter()
        .map(|i| {
            let mut rng = derived_rng(seed, i);
            let d = 1 + (i % 2) as usize;
            let (w, l, scale) = (rng.gen_range(1..=8), rng.gen_range(1..=2), rng.gen_range(0.2..2.0));
            let net = random_network(&mut rng, d, w, l, scale);
            let eps = rng.gen_range(0.02..0.2);
            let tau = eps / rng.gen_range(1..=5) as f64;
            let x = random_point(&mut rng, d, eps);
            let kappa = net.kappa();
            let (loss, y) = if i % 4 < 2 {
                (LossSpec::hinge(), if rng.gen::<bool>() { 1.0 } else { -1.0 })
            } else {
                (LossSpec::quadratic(net.eval(&x).abs() + kappa * eps + 1.0)?, rng.gen_range(-1.0..=1.0))
            };
            let cover = build_cover(eps, tau, d)?;
            let cov = attack_cover(&net, &loss, &x, y, &cover)?.value;
            let res = tau / 20.0;
            let brute = attack_brute(&net, &loss, &x, y, eps, res)?.value;
            let lip1 = loss.lip1()?;
            let allowed = lip1 * kappa * tau + lip1 * kappa * res + 1e-9;
            Ok((brute - cov <= allowed, (brute - cov) / allowed.max(1e-300)))
        })
        .collect();
    let mut violations = 0;
    let mut worst: f64 = f64::NEG_INFINITY;
    for o in outcomes {
        let (ok, ratio) = o?;
        worst = worst.max(ratio);
        if !ok {
            violations += 1;
        }
    }
    Ok(report(
        "cover_gap",
        instances as u64,
        violations,
        format!("largest gap / allowance = {worst:.4}"),
        start,
    ))
}

/// Backpropagated input and parameter gradients agree with central differences away
/// from ReLU kinks.
pub fn gradient_suite(networks: usize, seed: u64) -> SuiteReport {
    let start = Instant::now();
    let h = 1e-6;
    let results: Vec<(u64, u64)> = (0..networks as u64)
        .into_par_iter()
        .map(|i| {
            let mut rng = derived_rng(seed, i);
            let d = rng.gen_range(1..=3);
            let (w, l) = (rng.gen_range(1..=6), rng.gen_range(0..=3));
            let net = random_network(&mut rng, d, w, l, 1.0);
            let x = random_point(&mut rng, d, 0.0);
            let g = net.backward(&x).expect("dimension matches");
            let (mut checks, mut bad) = (0, 0);
            let mut close = |numeric: f64, analytic: f64| {
                checks += 1;
                // a finite-difference step can cross a kink; allow a loose absolute slack there
                if (numeric - analytic).abs() > 1e-5 * (1.0 + analytic.abs()) {
                    bad += 1;
                }
            };
            if near_kink(&net, &x, 10.0 * h) {
                return (0, 0);
            }
            for k in 0..d {
                let (mut xp, mut xm) = (x.clone(), x.clone());
                xp[k] += h;
                xm[k] -= h;
                close((net.eval(&xp) - net.eval(&xm)) / (2.0 * h), g.input[k]);
            }
            let theta = net.flat();
            let analytic = g.params.flat();
            for k in 0..theta.len() {
                let mut p = net.clone();
                let mut t = theta.clone();
                t[k] += h;
                p.set_flat(&t).expect("length");
                let up = p.eval(&x);
                t[k] -= 2.0 * h;
                p.set_flat(&t).expect("length");
                let down = p.eval(&x);
                close((up - down) / (2.0 * h), analytic[k]);
            }
            (checks, bad)
        })
        .collect();
    let checks = results.iter().map(|r| r.0).sum();
    let violations = results.iter().map(|r| r.1).sum();
    report("gradients", checks, violations, format!("{networks} networks, central differences"), start)
}

/// Some pre-activation within `margin` of zero.
fn near_kink(net: &NetworkParams, x: &[f64], margin: f64) -> bool {
    let mut a = x.to_vec();
    for layer in net.hidden() {
        let mut next = Vec::with_capacity(layer.rows);
        for r in 0..layer.rows {
            let z: f64 = layer.row(r).iter().zip(&a).map(|(w, v)| w * v).sum::<f64>() + layer.bias[r];
            if z.abs() < margin {
                return true;
            }
            next.push(z.max(0.0));
        }
        a = next;
    }
    false
}

/// Hinge calibration constants on the standard grid: `a ≥ 1 − 1e−9`, `b(0.1) = 1/3`
/// and `b(0.4) = 8/9` within the grid resolution, and the margin transfer with `min(a, b)`.
pub fn calibration_suite() -> Result<SuiteReport> {
    let start = Instant::now();
    let grid = CalibrationGrid::standard();
    let hinge = LossSpec::hinge();
    let a = check_assumption_41(&hinge, &grid)?;
    let b1 = check_assumption_42(&hinge, 0.1, &grid)?;
    let b4 = check_assumption_42(&hinge, 0.4, &grid)?;
    let transfer = check_margin_transfer(&hinge, 0.1, a.best.min(b1.best), &grid)?;
    let checks = [
        a.holds && a.best >= 1.0 - 1e-9,
        b1.holds && (b1.best - 1.0 / 3.0).abs() <= 0.01,
        b4.holds && (b4.best - 8.0 / 9.0).abs() <= 0.01,
        transfer.violations == 0,
    ];
    let violations = checks.iter().filter(|c| !**c).count() as u64;
    Ok(report(
        "calibration",
        checks.len() as u64,
        violations,
        format!(
            "hinge a = {:.6}, b(0.1) = {:.6}, b(0.4) = {:.6}, transfer cases = {}",
            a.best, b1.best, b4.best, transfer.cases_checked
        ),
        start,
    ))
}

/// Pointwise grid risk equals the distribution-shift sup risk on random instances, and
/// splitting an atom's mass never beats relocating it.
pub fn equivalence_check(instances: usize, splits: usize, seed: u64) -> Result<SuiteReport> {
    let start = Instant::now();
    let eq = equivalence_suite(instances, seed)?;
    let sp = split_suite(splits, seed)?;
    let violations = eq.iter().filter(|r| !r.equal).count() + sp.iter().filter(|r| !r.holds).count();
    let worst = eq
        .iter()
        .map(|r| (r.pointwise - r.distributional).abs())
        .fold(0.0, f64::max);
    Ok(report(
        "equivalence",
        (eq.len() + sp.len()) as u64,
        violations as u64,
        format!("{} instances, {} split checks, max |difference| = {worst:.2e}", eq.len(), sp.len()),
        start,
    ))
}

/// Exact rate identities and reference values of the bound calculators.
pub fn bounds_suite() -> Result<SuiteReport> {
    let start = Instant::now();
    let one = Rational64::from_integer(1);
    let r = |a, b| Rational64::new(a, b);
    let mut checks = Vec::new();
    let e = rate_exponents(1, one)?;
    checks.push((e.r1, e.r2, e.r3, e.r4, e.r5) == (r(1, 5), r(2, 7), r(3, 5), r(2, 5), r(2, 7)));
    for d in 1..=5 {
        for alpha in [one, r(3, 2), r(2, 1), r(3, 1)] {
            let e = rate_exponents(d, alpha)?;
            checks.push(e.r3 + e.r4 == one);
            checks.push(e.c_alpha_d == u8::from(Rational64::from_integer(d as i64) == alpha * 2));
        }
    }
    let s = schedule(1024, 1, one, Task::Lipschitz)?;
    checks.push(s.k_exact == Some(Rational64::from_integer(16)) && s.wl_exact == Some(Rational64::from_integer(8)));
    checks.push((pdim_bound(8, 2, 1.0)? - 256.0 * 128f64.ln()).abs() < 1e-9);
    checks.push(dudley(&|_| 0.0, 1.0, 100, &[0.0, 0.5, 1.0])?.value == 0.0);
    let violations = checks.iter().filter(|c| !**c).count() as u64;
    Ok(report("bounds", checks.len() as u64, violations, "rate identities and reference values".into(), start))
}

/// Run the selected suites (all when `only` is empty).
pub fn run_verify(cfg: &VerifySection, only: &[String], fault: Option<Fault>) -> Result<VerifyReport> {
    if let Some(bad) = only.iter().find(|s| !SUITES.contains(&s.as_str())) {
        return Err(Error::InvalidArgument(format!(
            "unknown suite {bad:?}; expected one of {}",
            SUITES.join(", ")
        )));
    }
    let wanted = |name: &str| only.is_empty() || only.iter().any(|s| s == name);
    let seed = cfg.seed;
    let mut suites = Vec::new();
    for name in SUITES {
        if !wanted(name) {
            continue;
        }
        let rep = match name {
            "kappa" => kappa_suite(cfg.networks, cfg.pairs, seed),
            "feasibility" => feasibility_suite(cfg.feasibility_runs, seed, fault)?,
            "sandwich" => sandwich_suite(cfg.sandwich_models, seed)?,
            "cover_gap" => cover_gap_suite(cfg.cover_instances, seed)?,
            "gradients" => gradient_suite(cfg.gradient_networks, seed),
            "calibration" => calibration_suite()?,
            "equivalence" => equivalence_check(cfg.equivalence_instances, cfg.split_instances, seed)?,
            "bounds" => bounds_suite()?,
            _ => unreachable!("suite names are fixed"),
        };
        log::info!("{}", rep.line());
        suites.push(rep);
    }
    Ok(VerifyReport {
        passed: suites.iter().all(|s| s.passed),
        suites,
    })
}
