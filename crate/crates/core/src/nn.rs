//! Dense ReLU feedforward networks with the weight-norm product certificate.
//!
//! A network with `L` hidden layers computes
//!
//! ```text
//! g(x) = A_L · relu(A_{L-1} · … relu(A_0 x + b_0) … + b_{L-1})
//! ```
//!
//! The output layer carries no bias and the output dimension is always 1.
//! `kappa` is the product `‖A_L‖ · ∏ max{‖(A_i, b_i)‖, 1}` with the
//! `ℓ∞ → ℓ∞` operator norm (maximum absolute row sum), and it upper-bounds
//! the `ℓ∞` Lipschitz constant of the network.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Anything that can be attacked or evaluated as a scalar predictor on `[0,1]^d`.
pub trait Predictor: Sync {
    fn input_dim(&self) -> usize;
    fn value(&self, x: &[f64]) -> f64;
    /// Gradient of the output with respect to the input (a subgradient at kinks).
    fn input_gradient(&self, x: &[f64]) -> Vec<f64>;
    /// A certified upper bound on the `ℓ∞` Lipschitz constant.
    fn lipschitz_bound(&self) -> f64;
}

/// Layer widths of a network.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Architecture {
    pub input_dim: usize,
    pub hidden_widths: Vec<usize>,
    #[serde(default = "one")]
    pub output_dim: usize,
}

fn one() -> usize {
    1
}

impl Architecture {
    pub fn new(input_dim: usize, hidden_widths: Vec<usize>) -> Result<Self> {
        if input_dim == 0 {
            return Err(Error::InvalidArgument("input dimension must be positive".into()));
        }
        if hidden_widths.contains(&0) {
            return Err(Error::InvalidArgument("hidden widths must be positive".into()));
        }
        Ok(Architecture {
            input_dim,
            hidden_widths,
            output_dim: 1,
        })
    }

    /// `depth` hidden layers of equal `width`.
    pub fn uniform(input_dim: usize, width: usize, depth: usize) -> Result<Self> {
        Self::new(input_dim, vec![width; depth])
    }

    pub fn width(&self) -> usize {
        self.hidden_widths.iter().copied().max().unwrap_or(0)
    }

    pub fn depth(&self) -> usize {
        self.hidden_widths.len()
    }

    fn validate(&self) -> Result<()> {
        if self.output_dim != 1 {
            return Err(Error::Dimension(format!(
                "output dimension is fixed to 1, got {}",
                self.output_dim
            )));
        }
        Architecture::new(self.input_dim, self.hidden_widths.clone()).map(|_| ())
    }
}

/// One hidden affine layer, weights stored row-major `(rows = out, cols = in)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Dense {
    pub rows: usize,
    pub cols: usize,
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
}

impl Dense {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Dense {
            rows,
            cols,
            weights: vec![0.0; rows * cols],
            bias: vec![0.0; rows],
        }
    }

    pub fn from_rows(a: &[Vec<f64>], b: &[f64]) -> Result<Self> {
        let rows = a.len();
        let cols = a.first().map_or(0, Vec::len);
        if rows == 0 || cols == 0 || a.iter().any(|r| r.len() != cols) || b.len() != rows {
            return Err(Error::Dimension("ragged or empty layer matrix".into()));
        }
        Ok(Dense {
            rows,
            cols,
            weights: a.iter().flatten().copied().collect(),
            bias: b.to_vec(),
        })
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.weights[i * self.cols..(i + 1) * self.cols]
    }

    /// Row-sum norm of `[A | b]`.
    pub fn augmented_norm(&self) -> f64 {
        (0..self.rows)
            .map(|i| self.row(i).iter().map(|v| v.abs()).sum::<f64>() + self.bias[i].abs())
            .fold(0.0, f64::max)
    }

    fn pre_activation(&self, input: &[f64], out: &mut Vec<f64>) {
        out.clear();
        for i in 0..self.rows {
            let row = self.row(i);
            let mut acc = self.bias[i];
            for (w, v) in row.iter().zip(input) {
                acc += w * v;
            }
            out.push(acc);
        }
    }
}

/// Parameters `θ = (A_0, …, A_L, b_0, …, b_{L-1})`.
#[derive(Debug, Clone, PartialEq)]
pub struct NetworkParams {
    arch: Architecture,
    hidden: Vec<Dense>,
    /// The single row of `A_L`.
    output: Vec<f64>,
}

/// Parameter gradients share the parameter layout.
pub type ParamGradients = NetworkParams;

#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub input: Vec<f64>,
    pub params: ParamGradients,
}

impl NetworkParams {
    pub fn new(arch: Architecture, hidden: Vec<Dense>, output: Vec<f64>) -> Result<Self> {
        arch.validate()?;
        if hidden.len() != arch.depth() {
            return Err(Error::Dimension(format!(
                "expected {} hidden layers, got {}",
                arch.depth(),
                hidden.len()
            )));
        }
        let mut fan_in = arch.input_dim;
        for (i, (layer, &w)) in hidden.iter().zip(&arch.hidden_widths).enumerate() {
            if layer.rows != w || layer.cols != fan_in {
                return Err(Error::Dimension(format!(
                    "layer {i}: expected {w}x{fan_in}, got {}x{}",
                    layer.rows, layer.cols
                )));
            }
            if layer.weights.len() != w * fan_in || layer.bias.len() != w {
                return Err(Error::Dimension(format!("layer {i}: storage size mismatch")));
            }
            fan_in = w;
        }
        if output.len() != fan_in {
            return Err(Error::Dimension(format!(
                "output row: expected length {fan_in}, got {}",
                output.len()
            )));
        }
        Ok(NetworkParams {
            arch,
            hidden,
            output,
        })
    }

    pub fn zeros(arch: &Architecture) -> Self {
        let mut fan_in = arch.input_dim;
        let mut hidden = Vec::with_capacity(arch.depth());
        for &w in &arch.hidden_widths {
            hidden.push(Dense::zeros(w, fan_in));
            fan_in = w;
        }
        NetworkParams {
            arch: arch.clone(),
            hidden,
            output: vec![0.0; fan_in],
        }
    }

    /// Per-layer uniform init in `[-1/fan_in, 1/fan_in]` (biases included).
    pub fn init_uniform<R: Rng + ?Sized>(arch: &Architecture, rng: &mut R) -> Self {
        let mut p = Self::zeros(arch);
        for layer in &mut p.hidden {
            let r = 1.0 / layer.cols as f64;
            for w in layer.weights.iter_mut().chain(layer.bias.iter_mut()) {
                *w = rng.gen_range(-r..=r);
            }
        }
        let r = 1.0 / p.output.len() as f64;
        for w in &mut p.output {
            *w = rng.gen_range(-r..=r);
        }
        p
    }

    pub fn arch(&self) -> &Architecture {
        &self.arch
    }

    pub fn hidden(&self) -> &[Dense] {
        &self.hidden
    }

    pub fn hidden_mut(&mut self) -> &mut [Dense] {
        &mut self.hidden
    }

    pub fn output(&self) -> &[f64] {
        &self.output
    }

    pub fn output_mut(&mut self) -> &mut [f64] {
        &mut self.output
    }

    fn check_input(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.arch.input_dim {
            return Err(Error::Dimension(format!(
                "input has length {}, network expects {}",
                x.len(),
                self.arch.input_dim
            )));
        }
        Ok(())
    }

    pub fn forward(&self, x: &[f64]) -> Result<f64> {
        self.check_input(x)?;
        Ok(self.eval(x))
    }

    /// Unchecked forward pass; panics on a dimension mismatch.
    pub fn eval(&self, x: &[f64]) -> f64 {
        let mut cur = x.to_vec();
        let mut next = Vec::new();
        for layer in &self.hidden {
            layer.pre_activation(&cur, &mut next);
            for v in next.iter_mut() {
                *v = v.max(0.0);
            }
            std::mem::swap(&mut cur, &mut next);
        }
        self.output.iter().zip(&cur).map(|(w, v)| w * v).sum()
    }

    /// Reverse-mode gradients of the scalar output. ReLU'(0) is taken as 0.
    pub fn backward(&self, x: &[f64]) -> Result<Gradients> {
        self.check_input(x)?;
        let mut activations = Vec::with_capacity(self.hidden.len() + 1);
        let mut pre = Vec::with_capacity(self.hidden.len());
        activations.push(x.to_vec());
        for layer in &self.hidden {
            let mut z = Vec::new();
            layer.pre_activation(activations.last().unwrap(), &mut z);
            let a: Vec<f64> = z.iter().map(|v| v.max(0.0)).collect();
            pre.push(z);
            activations.push(a);
        }

        let mut grads = NetworkParams::zeros(&self.arch);
        let last = activations.last().unwrap();
        grads.output.copy_from_slice(last);
        // delta = d out / d activation of the current layer
        let mut delta = self.output.clone();
        for (li, layer) in self.hidden.iter().enumerate().rev() {
            let z = &pre[li];
            let input = &activations[li];
            let dz: Vec<f64> = delta
                .iter()
                .zip(z)
                .map(|(d, &zi)| if zi > 0.0 { *d } else { 0.0 })
                .collect();
            let g = &mut grads.hidden[li];
            for i in 0..layer.rows {
                g.bias[i] = dz[i];
                let row = &mut g.weights[i * layer.cols..(i + 1) * layer.cols];
                for (w, v) in row.iter_mut().zip(input) {
                    *w = dz[i] * v;
                }
            }
            let mut prev = vec![0.0; layer.cols];
            for (i, &d) in dz.iter().enumerate() {
                if d != 0.0 {
                    for (p, w) in prev.iter_mut().zip(layer.row(i)) {
                        *p += d * w;
                    }
                }
            }
            delta = prev;
        }
        Ok(Gradients {
            input: delta,
            params: grads,
        })
    }

    /// `κ(θ) = ‖A_L‖ ∏ max{‖(A_i, b_i)‖, 1}`.
    pub fn kappa(&self) -> f64 {
        let out_norm: f64 = self.output.iter().map(|v| v.abs()).sum();
        self.hidden
            .iter()
            .map(|l| l.augmented_norm().max(1.0))
            .fold(out_norm, |acc, f| acc * f)
    }

    /// Multiply `A_L` by `c`.
    pub fn scale_output(&mut self, c: f64) {
        for w in &mut self.output {
            *w *= c;
        }
    }

    /// `self += c · other` over every parameter.
    pub fn add_scaled(&mut self, other: &ParamGradients, c: f64) {
        for (l, g) in self.hidden.iter_mut().zip(&other.hidden) {
            for (w, gw) in l.weights.iter_mut().zip(&g.weights) {
                *w += c * gw;
            }
            for (b, gb) in l.bias.iter_mut().zip(&g.bias) {
                *b += c * gb;
            }
        }
        for (w, gw) in self.output.iter_mut().zip(&other.output) {
            *w += c * gw;
        }
    }

    /// All parameters flattened in layer order (weights, then bias; output row last).
    pub fn flat(&self) -> Vec<f64> {
        let mut v = Vec::new();
        for l in &self.hidden {
            v.extend_from_slice(&l.weights);
            v.extend_from_slice(&l.bias);
        }
        v.extend_from_slice(&self.output);
        v
    }

    /// Inverse of [`NetworkParams::flat`].
    pub fn set_flat(&mut self, values: &[f64]) -> Result<()> {
        if values.len() != self.flat().len() {
            return Err(Error::Dimension("flat parameter vector has wrong length".into()));
        }
        let mut it = values.iter().copied();
        for l in &mut self.hidden {
            for w in l.weights.iter_mut().chain(l.bias.iter_mut()) {
                *w = it.next().unwrap();
            }
        }
        for w in &mut self.output {
            *w = it.next().unwrap();
        }
        Ok(())
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(&ParamsJson::from(self))?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let j: ParamsJson = serde_json::from_str(s)?;
        j.try_into()
    }
}

impl Predictor for NetworkParams {
    fn input_dim(&self) -> usize {
        self.arch.input_dim
    }

    fn value(&self, x: &[f64]) -> f64 {
        self.eval(x)
    }

    fn input_gradient(&self, x: &[f64]) -> Vec<f64> {
        self.backward(x).expect("dimension checked by caller").input
    }

    fn lipschitz_bound(&self) -> f64 {
        self.kappa()
    }
}

/// Weight-norm budget `K ≥ 1`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NormBudget(f64);

impl NormBudget {
    pub fn new(k: f64) -> Result<Self> {
        if !(k >= 1.0) || !k.is_finite() {
            return Err(Error::InvalidArgument(format!(
                "norm budget must be a finite K >= 1, got {k}"
            )));
        }
        Ok(NormBudget(k))
    }

    pub fn get(self) -> f64 {
        self.0
    }
}

/// Rescale `A_L` so that `κ ≤ K`; feasible params are returned unchanged.
///
/// Rescaled params can land a few ulps above `K`; those count as feasible so the
/// projection is exactly idempotent.
pub fn project_kappa(params: &NetworkParams, budget: NormBudget) -> NetworkParams {
    let mut p = params.clone();
    project_kappa_in_place(&mut p, budget);
    p
}

pub fn project_kappa_in_place(params: &mut NetworkParams, budget: NormBudget) {
    let k = params.kappa();
    if k > budget.get() * (1.0 + 8.0 * f64::EPSILON) {
        params.scale_output(budget.get() / k);
    }
}

/// Sampled lower bound on `Lip(g)`: the largest difference quotient over the pairs.
pub fn empirical_lipschitz<P: Predictor + ?Sized>(f: &P, pairs: &[(Vec<f64>, Vec<f64>)]) -> Result<f64> {
    let mut best: Option<f64> = None;
    for (a, b) in pairs {
        if a.len() != f.input_dim() || b.len() != f.input_dim() {
            return Err(Error::Dimension("pair point has wrong dimension".into()));
        }
        let dist = crate::util::linf_distance(a, b);
        if dist == 0.0 {
            continue;
        }
        let q = (f.value(a) - f.value(b)).abs() / dist;
        best = Some(best.map_or(q, |m: f64| m.max(q)));
    }
    best.ok_or_else(|| Error::InvalidArgument("every pair has coincident points".into()))
}

#[derive(Serialize, Deserialize)]
struct LayerJson {
    #[serde(rename = "A")]
    a: Vec<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    b: Option<Vec<f64>>,
}

/// `{"arch": {...}, "layers": [{"A": [[...]], "b": [...]}, ..., {"A": [[...]]}]}`
#[derive(Serialize, Deserialize)]
struct ParamsJson {
    arch: Architecture,
    layers: Vec<LayerJson>,
}

impl From<&NetworkParams> for ParamsJson {
    fn from(p: &NetworkParams) -> Self {
        let mut layers: Vec<LayerJson> = p
            .hidden
            .iter()
            .map(|l| LayerJson {
                a: (0..l.rows).map(|i| l.row(i).to_vec()).collect(),
                b: Some(l.bias.clone()),
            })
            .collect();
        layers.push(LayerJson {
            a: vec![p.output.clone()],
            b: None,
        });
        ParamsJson {
            arch: p.arch.clone(),
            layers,
        }
    }
}

impl TryFrom<ParamsJson> for NetworkParams {
    type Error = Error;

    fn try_from(j: ParamsJson) -> Result<Self> {
        let mut layers = j.layers;
        let last = layers
            .pop()
            .ok_or_else(|| Error::Dimension("no layers in JSON".into()))?;
        if last.a.len() != 1 || last.b.as_ref().is_some_and(|b| !b.is_empty()) {
            return Err(Error::Dimension(
                "final layer must be a single bias-free row".into(),
            ));
        }
        let hidden = layers
            .iter()
            .map(|l| {
                let b = l
                    .b
                    .as_ref()
                    .ok_or_else(|| Error::Dimension("hidden layer missing bias".into()))?;
                Dense::from_rows(&l.a, b)
            })
            .collect::<Result<Vec<_>>>()?;
        NetworkParams::new(j.arch, hidden, last.a.into_iter().next().unwrap())
    }
}
