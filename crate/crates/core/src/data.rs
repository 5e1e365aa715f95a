//! Synthetic smooth targets, regression/classification samplers and dataset
//! persistence.
//!
//! Inputs are drawn uniformly from the shrunk cube `[ε, 1−ε]^d`, so every
//! attack ball `B_ε(x_i)` stays inside `[0,1]^d`.

use std::f64::consts::PI;
use std::fs::File;
use std::io::{BufReader, BufWriter};
use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::Predictor;
use crate::util::{derived_rng, McEstimate};

/// Sup-norm ceiling of a target, leaving room for noise inside `[-1, 1]`.
pub const TARGET_SUP: f64 = 0.8;

/// One cosine mode `c · cos(π⟨m, x⟩ + φ)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Mode {
    pub freq: Vec<i32>,
    pub coef: f64,
    pub phase: f64,
}

impl Mode {
    fn arg(&self, x: &[f64]) -> f64 {
        PI * self.freq.iter().zip(x).map(|(&m, &v)| m as f64 * v).sum::<f64>() + self.phase
    }

    fn l1(&self) -> f64 {
        self.freq.iter().map(|m| m.unsigned_abs() as f64).sum()
    }

    fn l2(&self) -> f64 {
        self.freq.iter().map(|&m| (m as f64).powi(2)).sum::<f64>().sqrt()
    }
}

/// Bounds that certify the rescaled target.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Certificate {
    /// Upper bound on `sup |f₀|` over `[0,1]^d`.
    pub sup_bound: f64,
    /// Upper bound on the `ℓ∞` Lipschitz constant (sup of `‖∇f₀‖₁`).
    pub lipschitz_bound: f64,
    pub grid_points: usize,
    /// Highest derivative order whose bound was certified numerically.
    pub certified_order: u32,
}

/// `f₀(x) = s · Σ_k c_k cos(π⟨m_k, x⟩ + φ_k)` with `|c_k| = ‖m_k‖₂^{−α−1}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HolderTarget {
    pub d: usize,
    pub alpha: f64,
    pub modes: Vec<Mode>,
    pub scale: f64,
    pub seed: u64,
    pub certificate: Certificate,
}

/// Unscaled coefficient magnitude for a frequency vector.
pub fn decay_coefficient(freq: &[i32], alpha: f64) -> f64 {
    let norm = freq.iter().map(|&m| (m as f64).powi(2)).sum::<f64>().sqrt();
    norm.powf(-alpha - 1.0)
}

const MAX_FREQ: i32 = 4;

/// Random target with `modes` cosine terms, rescaled to meet the sup and Lipschitz caps.
pub fn make_holder_target(d: usize, alpha: f64, modes: usize, seed: u64) -> Result<HolderTarget> {
    if d == 0 || modes == 0 {
        return Err(Error::InvalidArgument("need d >= 1 and at least one mode".into()));
    }
    if !(alpha >= 1.0) {
        return Err(Error::InvalidArgument(format!("alpha must be >= 1, got {alpha}")));
    }
    let mut rng = derived_rng(seed, 0x7a27);
    let mut list = Vec::with_capacity(modes);
    for _ in 0..modes {
        let freq = loop {
            let f: Vec<i32> = (0..d).map(|_| rng.gen_range(0..=MAX_FREQ)).collect();
            if f.iter().any(|&m| m != 0) {
                break f;
            }
        };
        let sign = if rng.gen::<bool>() { 1.0 } else { -1.0 };
        let phase = rng.gen_range(0.0..2.0 * PI);
        list.push(Mode {
            coef: sign * decay_coefficient(&freq, alpha),
            freq,
            phase,
        });
    }
    HolderTarget::from_modes(d, alpha, list, seed)
}

impl HolderTarget {
    /// Build from explicit modes and certify the scale.
    pub fn from_modes(d: usize, alpha: f64, modes: Vec<Mode>, seed: u64) -> Result<Self> {
        if modes.is_empty() || modes.iter().any(|m| m.freq.len() != d) {
            return Err(Error::Dimension("every mode needs a d-dimensional frequency".into()));
        }
        let mut t = HolderTarget {
            d,
            alpha,
            modes,
            scale: 1.0,
            seed,
            certificate: Certificate {
                sup_bound: 0.0,
                lipschitz_bound: 0.0,
                grid_points: 0,
                certified_order: 1,
            },
        };
        let (sup, lip, points) = t.certify_unit_scale();
        let s = (TARGET_SUP / sup).min(1.0 / lip);
        t.scale = s;
        t.certificate = Certificate {
            sup_bound: sup * s,
            lipschitz_bound: lip * s,
            grid_points: points,
            certified_order: 1,
        };
        Ok(t)
    }

    fn raw_value(&self, x: &[f64]) -> f64 {
        self.modes.iter().map(|m| m.coef * m.arg(x).cos()).sum()
    }

    /// Sup and Lipschitz bounds at scale 1 from a grid of ≥ 10⁴ points, inflated by
    /// the worst-case variation between a point and its nearest grid node.
    fn certify_unit_scale(&self) -> (f64, f64, usize) {
        let per_axis = ((10_000f64).powf(1.0 / self.d as f64).ceil() as usize).max(2);
        let spacing = 1.0 / (per_axis - 1) as f64;
        let half = spacing / 2.0;
        let total = per_axis.pow(self.d as u32);
        let mut sup = 0.0f64;
        let mut grad_sup = 0.0f64;
        let mut idx = vec![0usize; self.d];
        let mut x = vec![0.0; self.d];
        for _ in 0..total {
            for (xi, &i) in x.iter_mut().zip(&idx) {
                *xi = i as f64 * spacing;
            }
            sup = sup.max(self.raw_value(&x).abs());
            let g: f64 = self.raw_gradient(&x).iter().map(|v| v.abs()).sum();
            grad_sup = grad_sup.max(g);
            for i in idx.iter_mut() {
                *i += 1;
                if *i < per_axis {
                    break;
                }
                *i = 0;
            }
        }
        // sup over [0,1]^d of Σ_j |∂_j f| moves by at most H·half between nodes,
        // with H = π² Σ_k |c_k| ‖m_k‖₁².
        let hess: f64 = self
            .modes
            .iter()
            .map(|m| PI * PI * m.coef.abs() * m.l1() * m.l1())
            .sum();
        let lip = grad_sup + hess * half;
        let sup = sup + lip * half;
        (sup, lip, total)
    }

    fn raw_gradient(&self, x: &[f64]) -> Vec<f64> {
        let mut g = vec![0.0; self.d];
        for m in &self.modes {
            let s = -m.coef * m.arg(x).sin() * PI;
            for (gi, &f) in g.iter_mut().zip(&m.freq) {
                *gi += s * f as f64;
            }
        }
        g
    }

    pub fn eval(&self, x: &[f64]) -> f64 {
        self.scale * self.raw_value(x)
    }

    pub fn gradient(&self, x: &[f64]) -> Vec<f64> {
        let mut g = self.raw_gradient(x);
        for v in &mut g {
            *v *= self.scale;
        }
        g
    }

    /// Unscaled coefficients `c_k`.
    pub fn raw_coefficients(&self) -> Vec<f64> {
        self.modes.iter().map(|m| m.coef).collect()
    }

    pub fn mode_norms(&self) -> Vec<f64> {
        self.modes.iter().map(Mode::l2).collect()
    }
}

impl Predictor for HolderTarget {
    fn input_dim(&self) -> usize {
        self.d
    }

    fn value(&self, x: &[f64]) -> f64 {
        self.eval(x)
    }

    fn input_gradient(&self, x: &[f64]) -> Vec<f64> {
        self.gradient(x)
    }

    fn lipschitz_bound(&self) -> f64 {
        self.certificate.lipschitz_bound
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetMeta {
    pub n: usize,
    pub d: usize,
    pub eps: f64,
    pub generator: String,
    pub seed: u64,
}

/// Samples `(x_i, y_i)` with `x_i ∈ [ε, 1−ε]^d` and `|y_i| ≤ 1`.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub x: Vec<Vec<f64>>,
    pub y: Vec<f64>,
    pub meta: DatasetMeta,
}

impl Dataset {
    pub fn new(x: Vec<Vec<f64>>, y: Vec<f64>, meta: DatasetMeta) -> Result<Self> {
        let ds = Dataset { x, y, meta };
        ds.validate()?;
        Ok(ds)
    }

    pub fn len(&self) -> usize {
        self.y.len()
    }

    pub fn is_empty(&self) -> bool {
        self.y.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.meta.d
    }

    /// Checks sizes, `|y| ≤ 1` and `B_ε(x_i) ⊆ [0,1]^d`.
    pub fn validate(&self) -> Result<()> {
        if self.x.len() != self.y.len() || self.meta.n != self.y.len() {
            return Err(Error::Dimension("x, y and n disagree".into()));
        }
        let eps = self.meta.eps;
        for (i, (x, &y)) in self.x.iter().zip(&self.y).enumerate() {
            if x.len() != self.meta.d {
                return Err(Error::Dimension(format!("row {i} has wrong dimension")));
            }
            if !(y.abs() <= 1.0) {
                return Err(Error::Precondition(format!("row {i}: |y| = {} > 1", y.abs())));
            }
            if x.iter().any(|&v| !(v - eps >= -1e-12 && v + eps <= 1.0 + 1e-12)) {
                return Err(Error::Precondition(format!(
                    "row {i}: B_eps(x) leaves [0,1]^d"
                )));
            }
        }
        Ok(())
    }

    /// Write `x_1..x_d,y` as CSV plus a JSON sidecar `<path>.json` with the metadata.
    pub fn save(&self, csv_path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(csv_path)?;
        let mut header: Vec<String> = (1..=self.meta.d).map(|i| format!("x_{i}")).collect();
        header.push("y".into());
        w.write_record(&header)?;
        for (x, y) in self.x.iter().zip(&self.y) {
            let mut rec: Vec<String> = x.iter().map(|v| format!("{v:?}")).collect();
            rec.push(format!("{y:?}"));
            w.write_record(&rec)?;
        }
        w.flush()?;
        let side = BufWriter::new(File::create(sidecar_path(csv_path))?);
        serde_json::to_writer_pretty(side, &self.meta)?;
        Ok(())
    }

    /// Load and validate a dataset written by [`Dataset::save`].
    pub fn load(csv_path: &Path) -> Result<Self> {
        let meta: DatasetMeta =
            serde_json::from_reader(BufReader::new(File::open(sidecar_path(csv_path))?))?;
        let mut r = csv::Reader::from_path(csv_path)?;
        let mut x = Vec::new();
        let mut y = Vec::new();
        for rec in r.records() {
            let rec = rec?;
            if rec.len() != meta.d + 1 {
                return Err(Error::Dimension("csv row width differs from d + 1".into()));
            }
            let vals = rec
                .iter()
                .map(|s| {
                    s.parse::<f64>()
                        .map_err(|e| Error::InvalidArgument(format!("bad number {s:?}: {e}")))
                })
                .collect::<Result<Vec<_>>>()?;
            y.push(vals[meta.d]);
            x.push(vals[..meta.d].to_vec());
        }
        Dataset::new(x, y, meta)
    }
}

fn sidecar_path(csv_path: &Path) -> std::path::PathBuf {
    let mut s = csv_path.as_os_str().to_owned();
    s.push(".json");
    s.into()
}

fn check_eps(eps: f64) -> Result<()> {
    if !(0.0..0.5).contains(&eps) {
        return Err(Error::InvalidArgument(format!("eps must lie in [0, 0.5), got {eps}")));
    }
    Ok(())
}

fn uniform_point<R: Rng + ?Sized>(rng: &mut R, d: usize, eps: f64) -> Vec<f64> {
    (0..d).map(|_| rng.gen_range(eps..=1.0 - eps)).collect()
}

/// `Y = f₀(X) + η` with `η ~ U[−σ, σ]`, `X ~ U[ε, 1−ε]^d`.
pub fn sample_regression(target: &HolderTarget, sigma: f64, n: usize, eps: f64, seed: u64) -> Result<Dataset> {
    check_eps(eps)?;
    if !(sigma >= 0.0) {
        return Err(Error::InvalidArgument("noise half-width must be >= 0".into()));
    }
    if target.certificate.sup_bound + sigma > 1.0 {
        return Err(Error::Precondition(format!(
            "sup|f0| + sigma = {} exceeds 1",
            target.certificate.sup_bound + sigma
        )));
    }
    let mut x = Vec::with_capacity(n);
    let mut y = Vec::with_capacity(n);
    for i in 0..n {
        let mut rng = derived_rng(seed, i as u64);
        let xi = uniform_point(&mut rng, target.d, eps);
        let noise = if sigma > 0.0 { rng.gen_range(-sigma..=sigma) } else { 0.0 };
        y.push(target.eval(&xi) + noise);
        x.push(xi);
    }
    Dataset::new(
        x,
        y,
        DatasetMeta {
            n,
            d: target.d,
            eps,
            generator: format!("regression(alpha={},modes={},sigma={sigma})", target.alpha, target.modes.len()),
            seed,
        },
    )
}

/// Shape of the posterior `η(x) = P(Y = 1 | X = x)`.
#[derive(Debug, Clone, PartialEq)]
pub enum PosteriorShape {
    /// `η = 1/2 + sign(g)·(c + (1/2 − c)(0.1 + 0.9·tanh(|g|/g_scale)))`, with sign(0) = +1.
    Smooth { base: HolderTarget, g_scale: f64 },
    Constant(f64),
    /// `left` on `x_1 < 1/2`, `right` otherwise.
    Halves { left: f64, right: f64 },
}

#[derive(Debug, Clone, PartialEq)]
pub struct PosteriorSpec {
    pub shape: PosteriorShape,
    pub margin: f64,
    pub d: usize,
}

impl PosteriorSpec {
    pub fn smooth(base: HolderTarget, margin: f64) -> Result<Self> {
        if !(margin > 0.0 && margin < 0.5) {
            return Err(Error::InvalidArgument(format!("margin must lie in (0, 0.5), got {margin}")));
        }
        let d = base.d;
        let g_scale = base.certificate.sup_bound.max(1e-12) / 2.0;
        Ok(PosteriorSpec {
            shape: PosteriorShape::Smooth { base, g_scale },
            margin,
            d,
        })
    }

    /// Degenerate shapes used by tests; the margin is not enforced.
    pub fn fixed(shape: PosteriorShape, d: usize) -> Result<Self> {
        let ok = |p: f64| (0.0..=1.0).contains(&p);
        match shape {
            PosteriorShape::Constant(p) if !ok(p) => {
                return Err(Error::InvalidArgument("posterior must lie in [0,1]".into()))
            }
            PosteriorShape::Halves { left, right } if !ok(left) || !ok(right) => {
                return Err(Error::InvalidArgument("posterior must lie in [0,1]".into()))
            }
            _ => {}
        }
        Ok(PosteriorSpec { shape, margin: 0.0, d })
    }

    pub fn eta(&self, x: &[f64]) -> f64 {
        match &self.shape {
            PosteriorShape::Smooth { base, g_scale } => {
                let g = base.eval(x);
                let s = if g >= 0.0 { 1.0 } else { -1.0 };
                let c = self.margin;
                0.5 + s * (c + (0.5 - c) * (0.1 + 0.9 * (g.abs() / g_scale).tanh()))
            }
            PosteriorShape::Constant(p) => *p,
            PosteriorShape::Halves { left, right } => {
                if x[0] < 0.5 {
                    *left
                } else {
                    *right
                }
            }
        }
    }
}

/// Labels `±1` with `P(Y = 1 | X) = η(X)`.
pub fn sample_classification(post: &PosteriorSpec, n: usize, eps: f64, seed: u64) -> Result<Dataset> {
    check_eps(eps)?;
    let mut x = Vec::with_capacity(n);
    let mut y = Vec::with_capacity(n);
    for i in 0..n {
        let mut rng = derived_rng(seed, i as u64);
        let xi = uniform_point(&mut rng, post.d, eps);
        let u: f64 = rng.gen();
        y.push(if u < post.eta(&xi) { 1.0 } else { -1.0 });
        x.push(xi);
    }
    Dataset::new(
        x,
        y,
        DatasetMeta {
            n,
            d: post.d,
            eps,
            generator: format!("classification(margin={})", post.margin),
            seed,
        },
    )
}

/// Monte Carlo `E[min(η(X), 1 − η(X))]` over `X ~ U[0,1]^d`.
pub fn bayes_risk(post: &PosteriorSpec, mc_n: usize, seed: u64) -> Result<McEstimate> {
    if mc_n == 0 {
        return Err(Error::InvalidArgument("mc_n must be >= 1".into()));
    }
    let vals: Vec<f64> = (0..mc_n)
        .map(|i| {
            let mut rng = derived_rng(seed, i as u64);
            let x = uniform_point(&mut rng, post.d, 0.0);
            let e = post.eta(&x);
            e.min(1.0 - e)
        })
        .collect();
    Ok(McEstimate::from_samples(&vals))
}
