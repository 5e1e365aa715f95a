//! Grid-supported distributions, Wasserstein distances between them, and two
//! independent brute forces for the worst-case risk under distribution shifts
//! of `W∞` radius `ε` per label.

use num_rational::Rational64;
use num_traits::{ToPrimitive, Zero};
use rand::Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::losses::LossSpec;
use crate::nn::{Architecture, NetworkParams, Predictor};
use crate::util::derived_rng;

/// Largest number of grid points allowed in one ball.
pub const BALL_BUDGET: u64 = 1_000_000;
/// Largest number of joint relocations the sup-risk brute force enumerates.
pub const JOINT_BUDGET: u64 = 20_000_000;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Atom {
    /// Grid indices; the point is `x / den`.
    pub x: Vec<i64>,
    pub y: f64,
    pub mass: Rational64,
}

/// A distribution on `{0, 1/den, …, 1}^dim × labels` with exact masses.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DiscreteDistribution {
    pub dim: usize,
    pub den: i64,
    pub atoms: Vec<Atom>,
}

impl DiscreteDistribution {
    pub fn new(dim: usize, den: i64, atoms: Vec<Atom>) -> Result<Self> {
        if dim == 0 || den <= 0 {
            return Err(Error::InvalidArgument("need dim >= 1 and den >= 1".into()));
        }
        if atoms.is_empty() {
            return Err(Error::InvalidArgument("distribution has no atoms".into()));
        }
        let mut total = Rational64::zero();
        for (i, a) in atoms.iter().enumerate() {
            if a.x.len() != dim {
                return Err(Error::Dimension(format!("atom {i} has dimension {}", a.x.len())));
            }
            if a.x.iter().any(|&k| k < 0 || k > den) {
                return Err(Error::InvalidArgument(format!("atom {i} lies outside the grid")));
            }
            if a.mass <= Rational64::zero() {
                return Err(Error::InvalidArgument(format!("atom {i} has nonpositive mass")));
            }
            if !a.y.is_finite() {
                return Err(Error::InvalidArgument(format!("atom {i} has a non-finite label")));
            }
            if atoms[..i].iter().any(|b| b.x == a.x && b.y == a.y) {
                return Err(Error::InvalidArgument(format!("atom {i} duplicates an earlier atom")));
            }
            total += a.mass;
        }
        if total != Rational64::from_integer(1) {
            return Err(Error::InvalidArgument(format!("masses sum to {total}, not 1")));
        }
        Ok(DiscreteDistribution { dim, den, atoms })
    }

    /// Empirical measure of grid points; repeated points are merged.
    pub fn empirical(dim: usize, den: i64, points: &[(Vec<i64>, f64)]) -> Result<Self> {
        let n = points.len() as i64;
        let mut atoms: Vec<Atom> = Vec::new();
        for (x, y) in points {
            match atoms.iter_mut().find(|a| &a.x == x && a.y == *y) {
                Some(a) => a.mass += Rational64::new(1, n),
                None => atoms.push(Atom {
                    x: x.clone(),
                    y: *y,
                    mass: Rational64::new(1, n),
                }),
            }
        }
        DiscreteDistribution::new(dim, den, atoms)
    }

    pub fn pitch(&self) -> f64 {
        1.0 / self.den as f64
    }

    pub fn coords(&self, idx: &[i64]) -> Vec<f64> {
        idx.iter().map(|&k| k as f64 / self.den as f64).collect()
    }

    /// Grid points within `radius` steps of `center` in every coordinate.
    pub fn ball(&self, center: &[i64], radius: i64) -> Result<Vec<Vec<i64>>> {
        let axes: Vec<Vec<i64>> = center
            .iter()
            .map(|&c| ((c - radius).max(0)..=(c + radius).min(self.den)).collect())
            .collect();
        let count = axes.iter().try_fold(1u64, |acc, a| acc.checked_mul(a.len() as u64));
        if count.is_none_or(|c| c > BALL_BUDGET) {
            return Err(Error::Budget(format!("ball with radius {radius} exceeds {BALL_BUDGET} grid points")));
        }
        let mut out: Vec<Vec<i64>> = vec![Vec::new()];
        for axis in &axes {
            out = out
                .into_iter()
                .flat_map(|p| {
                    axis.iter().map(move |&k| {
                        let mut q = p.clone();
                        q.push(k);
                        q
                    })
                })
                .collect();
        }
        Ok(out)
    }
}

/// A base distribution and a perturbation radius.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GammaInstance {
    pub base: DiscreteDistribution,
    pub eps: f64,
    /// `floor(ε · den)`: the radius in grid steps.
    pub radius: i64,
    /// Whether the pitch divides `ε`.
    pub exact: bool,
}

impl GammaInstance {
    pub fn new(base: DiscreteDistribution, eps: f64) -> Result<Self> {
        if !(eps >= 0.0) || !eps.is_finite() {
            return Err(Error::InvalidArgument(format!("eps must be finite and >= 0, got {eps}")));
        }
        let steps = eps * base.den as f64;
        let radius = (steps + 1e-9).floor() as i64;
        Ok(GammaInstance {
            exact: (steps - radius as f64).abs() < 1e-9,
            radius,
            base,
            eps,
        })
    }
}

fn loss_at<P: Predictor + ?Sized>(f: &P, loss: &LossSpec, dist: &DiscreteDistribution, idx: &[i64], y: f64) -> f64 {
    loss.eval(f.value(&dist.coords(idx)), y)
}

fn check_dim<P: Predictor + ?Sized>(f: &P, dist: &DiscreteDistribution) -> Result<()> {
    if f.input_dim() != dist.dim {
        return Err(Error::Dimension(format!(
            "predictor takes {} inputs, distribution has dimension {}",
            f.input_dim(),
            dist.dim
        )));
    }
    Ok(())
}

fn mass_f64(q: Rational64) -> f64 {
    q.to_f64().expect("finite rational")
}

/// `Σ mass · max over grid points in the ε-ball of ℓ(f(x'), y)`.
pub fn adversarial_risk_discrete<P: Predictor + ?Sized>(
    f: &P,
    loss: &LossSpec,
    dist: &DiscreteDistribution,
    eps: f64,
) -> Result<f64> {
    check_dim(f, dist)?;
    let inst = GammaInstance::new(dist.clone(), eps)?;
    let mut total = 0.0;
    for a in &dist.atoms {
        let worst = dist
            .ball(&a.x, inst.radius)?
            .iter()
            .map(|p| loss_at(f, loss, dist, p, a.y))
            .fold(f64::NEG_INFINITY, f64::max);
        total += mass_f64(a.mass) * worst;
    }
    Ok(total)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SupRisk {
    pub value: f64,
    /// Destination of each atom in the maximizing relocation.
    pub witness: Vec<Vec<i64>>,
}

/// Worst-case risk over distributions reachable by moving each atom's mass within its
/// ε-ball, found by enumerating every joint relocation and scoring the moved distribution.
pub fn dp_sup_risk<P: Predictor + ?Sized>(f: &P, loss: &LossSpec, inst: &GammaInstance) -> Result<SupRisk> {
    let dist = &inst.base;
    check_dim(f, dist)?;
    if dist.atoms.len() > 6 {
        return Err(Error::Budget(format!("{} atoms exceed the limit of 6", dist.atoms.len())));
    }
    let balls: Vec<Vec<Vec<i64>>> = dist
        .atoms
        .iter()
        .map(|a| dist.ball(&a.x, inst.radius))
        .collect::<Result<_>>()?;
    if let Some(b) = balls.iter().find(|b| b.len() > 200) {
        return Err(Error::Budget(format!("ball of {} grid points exceeds the limit of 200", b.len())));
    }
    let joint = balls.iter().try_fold(1u64, |acc, b| acc.checked_mul(b.len() as u64));
    if joint.is_none_or(|j| j > JOINT_BUDGET) {
        return Err(Error::Budget("joint relocation count exceeds budget".into()));
    }
    let masses: Vec<f64> = dist.atoms.iter().map(|a| mass_f64(a.mass)).collect();
    let mut choice = vec![0usize; balls.len()];
    let mut best = SupRisk {
        value: f64::NEG_INFINITY,
        witness: Vec::new(),
    };
    loop {
        // score the relocated distribution as a whole
        let value: f64 = dist
            .atoms
            .iter()
            .zip(&choice)
            .zip(&balls)
            .zip(&masses)
            .map(|(((a, &c), ball), m)| m * loss_at(f, loss, dist, &ball[c], a.y))
            .sum();
        if value > best.value {
            best = SupRisk {
                value,
                witness: choice.iter().zip(&balls).map(|(&c, b)| b[c].clone()).collect(),
            };
        }
        // odometer step
        let mut i = 0;
        loop {
            if i == choice.len() {
                return Ok(best);
            }
            choice[i] += 1;
            if choice[i] < balls[i].len() {
                break;
            }
            choice[i] = 0;
            i += 1;
        }
    }
}

/// Denominator of the mass fractions tried by [`split_sup_risk`].
pub const SPLIT_DENOMINATOR: i64 = 16;

/// Worst-case risk over couplings that split each atom's mass `j/16 : (16−j)/16` between
/// two points of its ε-ball. Limited to two atoms.
pub fn split_sup_risk<P: Predictor + ?Sized>(f: &P, loss: &LossSpec, inst: &GammaInstance) -> Result<f64> {
    let dist = &inst.base;
    check_dim(f, dist)?;
    if dist.atoms.len() > 2 {
        return Err(Error::Budget("mass splitting is enumerated for at most two atoms".into()));
    }
    // per atom: every (p1, p2, j) option, valued with exact weights
    let mut options: Vec<Vec<f64>> = Vec::new();
    for a in &dist.atoms {
        let ball = dist.ball(&a.x, inst.radius)?;
        if ball.len() > 41 {
            return Err(Error::Budget(format!("ball of {} points is too large to split", ball.len())));
        }
        let losses: Vec<f64> = ball.iter().map(|p| loss_at(f, loss, dist, p, a.y)).collect();
        let mut opts = Vec::new();
        for &l1 in &losses {
            for &l2 in &losses {
                for j in 0..=SPLIT_DENOMINATOR {
                    let w = Rational64::new(j, SPLIT_DENOMINATOR);
                    let m1 = mass_f64(a.mass * w);
                    let m2 = mass_f64(a.mass * (Rational64::from_integer(1) - w));
                    opts.push(m1 * l1 + m2 * l2);
                }
            }
        }
        options.push(opts);
    }
    let best = match options.as_slice() {
        [a] => a.iter().copied().fold(f64::NEG_INFINITY, f64::max),
        [a, b] => a
            .par_iter()
            .map(|&va| b.iter().map(|&vb| va + vb).fold(f64::NEG_INFINITY, f64::max))
            .reduce(|| f64::NEG_INFINITY, f64::max),
        _ => unreachable!("atom count checked above"),
    };
    Ok(best)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Equivalence {
    pub equal: bool,
    pub pointwise: f64,
    pub distributional: f64,
}

/// Compare the pointwise adversarial risk with the distribution-shift sup risk.
pub fn verify_equivalence<P: Predictor + ?Sized>(
    inst: &GammaInstance,
    f: &P,
    loss: &LossSpec,
) -> Result<Equivalence> {
    let pointwise = adversarial_risk_discrete(f, loss, &inst.base, inst.eps)?;
    let distributional = dp_sup_risk(f, loss, inst)?.value;
    Ok(Equivalence {
        equal: (pointwise - distributional).abs() <= 1e-12,
        pointwise,
        distributional,
    })
}

/// `‖x − x'‖∞ + |y − y'|`.
pub fn ground_distance(x: &[f64], y: f64, x2: &[f64], y2: f64) -> f64 {
    crate::util::linf_distance(x, x2) + (y - y2).abs()
}

/// A labelled point of an equal-mass atom list.
pub type LabelledPoint = (Vec<f64>, f64);

/// Kuhn's augmenting-path matching restricted to edges `allowed[i][j]`.
fn has_perfect_matching(allowed: &[Vec<bool>]) -> bool {
    let m = allowed.len();
    let mut match_right: Vec<Option<usize>> = vec![None; m];
    fn augment(i: usize, allowed: &[Vec<bool>], seen: &mut [bool], match_right: &mut [Option<usize>]) -> bool {
        for j in 0..allowed.len() {
            if allowed[i][j] && !seen[j] {
                seen[j] = true;
                if match_right[j].is_none_or(|k| augment(k, allowed, seen, match_right)) {
                    match_right[j] = Some(i);
                    return true;
                }
            }
        }
        false
    }
    (0..m).all(|i| {
        let mut seen = vec![false; m];
        augment(i, allowed, &mut seen, &mut match_right)
    })
}

/// Bottleneck matching value between two equal-size lists of equal-mass atoms.
pub fn w_inf_points(p: &[LabelledPoint], q: &[LabelledPoint]) -> Result<f64> {
    if p.len() != q.len() {
        return Err(Error::Unsupported(format!(
            "W-infinity needs equal atom counts, got {} and {}",
            p.len(),
            q.len()
        )));
    }
    if p.is_empty() {
        return Err(Error::InvalidArgument("empty atom lists".into()));
    }
    let cost: Vec<Vec<f64>> = p
        .iter()
        .map(|(x, y)| q.iter().map(|(x2, y2)| ground_distance(x, *y, x2, *y2)).collect())
        .collect();
    let mut candidates: Vec<f64> = cost.iter().flatten().copied().collect();
    candidates.sort_by(f64::total_cmp);
    candidates.dedup();
    let feasible = |t: f64| {
        let allowed: Vec<Vec<bool>> = cost.iter().map(|row| row.iter().map(|&c| c <= t).collect()).collect();
        has_perfect_matching(&allowed)
    };
    let (mut lo, mut hi) = (0usize, candidates.len() - 1);
    while lo < hi {
        let mid = (lo + hi) / 2;
        if feasible(candidates[mid]) {
            hi = mid;
        } else {
            lo = mid + 1;
        }
    }
    Ok(candidates[lo])
}

fn weighted_points(d: &DiscreteDistribution) -> Vec<(Vec<f64>, f64, Rational64)> {
    d.atoms.iter().map(|a| (d.coords(&a.x), a.y, a.mass)).collect()
}

/// `W∞` between distributions whose atoms all carry the same mass.
pub fn w_inf_discrete(p: &DiscreteDistribution, q: &DiscreteDistribution) -> Result<f64> {
    let m = p.atoms.len();
    let uniform = Rational64::new(1, m as i64);
    if q.atoms.len() != m || p.atoms.iter().chain(&q.atoms).any(|a| a.mass != uniform) {
        return Err(Error::Unsupported("W-infinity is implemented for equal-mass atom lists only".into()));
    }
    let pts = |d: &DiscreteDistribution| -> Vec<LabelledPoint> { d.atoms.iter().map(|a| (d.coords(&a.x), a.y)).collect() };
    w_inf_points(&pts(p), &pts(q))
}

/// Largest atom count accepted by the transport solver.
pub const TRANSPORT_ATOMS: usize = 200;

/// Min-cost transport between rational mass vectors by successive shortest paths over
/// integer mass units.
fn min_cost_transport(a: &[Rational64], b: &[Rational64], cost: &[Vec<f64>]) -> Result<f64> {
    let lcm = a.iter().chain(b).fold(1i64, |acc, m| {
        let d = *m.denom();
        acc / gcd(acc, d) * d
    });
    let supply: Vec<i64> = a.iter().map(|m| (*m * lcm).to_integer()).collect();
    let demand: Vec<i64> = b.iter().map(|m| (*m * lcm).to_integer()).collect();
    let (na, nb) = (a.len(), b.len());
    // nodes: source, a-side, b-side, sink
    let node_count = na + nb + 2;
    let (src, sink) = (0, node_count - 1);
    let mut g = FlowGraph::new(node_count);
    for (i, &s) in supply.iter().enumerate() {
        g.add_edge(src, 1 + i, s, 0.0);
    }
    for (j, &t) in demand.iter().enumerate() {
        g.add_edge(1 + na + j, sink, t, 0.0);
    }
    for i in 0..na {
        for j in 0..nb {
            g.add_edge(1 + i, 1 + na + j, i64::MAX / 4, cost[i][j]);
        }
    }
    let total_units: i64 = supply.iter().sum();
    let (flow, cost) = g.min_cost_flow(src, sink);
    debug_assert_eq!(flow, total_units);
    Ok(cost / lcm as f64)
}

fn gcd(mut a: i64, mut b: i64) -> i64 {
    while b != 0 {
        (a, b) = (b, a % b);
    }
    a.abs()
}

struct Edge {
    to: usize,
    cap: i64,
    cost: f64,
}

struct FlowGraph {
    edges: Vec<Edge>,
    adj: Vec<Vec<usize>>,
}

impl FlowGraph {
    fn new(n: usize) -> Self {
        FlowGraph {
            edges: Vec::new(),
            adj: vec![Vec::new(); n],
        }
    }

    fn add_edge(&mut self, from: usize, to: usize, cap: i64, cost: f64) {
        self.adj[from].push(self.edges.len());
        self.edges.push(Edge { to, cap, cost });
        self.adj[to].push(self.edges.len());
        self.edges.push(Edge {
            to: from,
            cap: 0,
            cost: -cost,
        });
    }

    /// Successive shortest paths with Bellman-Ford.
    fn min_cost_flow(&mut self, src: usize, sink: usize) -> (i64, f64) {
        let n = self.adj.len();
        let (mut flow, mut cost) = (0i64, 0.0);
        loop {
            let mut dist = vec![f64::INFINITY; n];
            let mut prev_edge: Vec<Option<usize>> = vec![None; n];
            dist[src] = 0.0;
            for _ in 0..n {
                let mut changed = false;
                for u in 0..n {
                    if dist[u].is_infinite() {
                        continue;
                    }
                    for &e in &self.adj[u] {
                        let edge = &self.edges[e];
                        if edge.cap > 0 && dist[u] + edge.cost < dist[edge.to] - 1e-15 {
                            dist[edge.to] = dist[u] + edge.cost;
                            prev_edge[edge.to] = Some(e);
                            changed = true;
                        }
                    }
                }
                if !changed {
                    break;
                }
            }
            if dist[sink].is_infinite() {
                return (flow, cost);
            }
            let mut push = i64::MAX;
            let mut v = sink;
            while let Some(e) = prev_edge[v] {
                push = push.min(self.edges[e].cap);
                v = self.edges[e ^ 1].to;
            }
            let mut v = sink;
            while let Some(e) = prev_edge[v] {
                self.edges[e].cap -= push;
                self.edges[e ^ 1].cap += push;
                cost += push as f64 * self.edges[e].cost;
                v = self.edges[e ^ 1].to;
            }
            flow += push;
        }
    }
}

/// `W₁` between two distributions under the ground distance `d_Z`.
pub fn w1_discrete(p: &DiscreteDistribution, q: &DiscreteDistribution) -> Result<f64> {
    w1_weighted(&weighted_points(p), &weighted_points(q))
}

/// `W₁` between lists of `(x, y, mass)`; masses must each sum to 1.
pub fn w1_weighted(p: &[(Vec<f64>, f64, Rational64)], q: &[(Vec<f64>, f64, Rational64)]) -> Result<f64> {
    if p.len() > TRANSPORT_ATOMS || q.len() > TRANSPORT_ATOMS {
        return Err(Error::Budget(format!("transport limited to {TRANSPORT_ATOMS} atoms per side")));
    }
    let one = Rational64::from_integer(1);
    let sum = |v: &[(Vec<f64>, f64, Rational64)]| v.iter().fold(Rational64::zero(), |acc, a| acc + a.2);
    if sum(p) != one || sum(q) != one {
        return Err(Error::InvalidArgument("transport marginals must each sum to 1".into()));
    }
    let cost: Vec<Vec<f64>> = p
        .iter()
        .map(|(x, y, _)| q.iter().map(|(x2, y2, _)| ground_distance(x, *y, x2, *y2)).collect())
        .collect();
    let a: Vec<Rational64> = p.iter().map(|t| t.2).collect();
    let b: Vec<Rational64> = q.iter().map(|t| t.2).collect();
    min_cost_transport(&a, &b, &cost)
}

/// Random instance: 1 to 5 atoms on the 1/50 grid in one dimension, labels ±1, integer
/// weights, ε a multiple of the pitch up to 5 steps, and a width-3 network.
pub fn random_instance(seed: u64) -> Result<(GammaInstance, NetworkParams)> {
    let mut rng = derived_rng(seed, 0);
    let den = 50i64;
    let atoms_n = rng.gen_range(1..=5usize);
    let mut points: Vec<(Vec<i64>, f64)> = Vec::new();
    while points.len() < atoms_n {
        let p = (vec![rng.gen_range(0..=den)], if rng.gen::<bool>() { 1.0 } else { -1.0 });
        if !points.contains(&p) {
            points.push(p);
        }
    }
    let weights: Vec<i64> = (0..atoms_n).map(|_| rng.gen_range(1..=5)).collect();
    let total: i64 = weights.iter().sum();
    let atoms = points
        .into_iter()
        .zip(&weights)
        .map(|((x, y), &w)| Atom {
            x,
            y,
            mass: Rational64::new(w, total),
        })
        .collect();
    let base = DiscreteDistribution::new(1, den, atoms)?;
    let eps = rng.gen_range(0..=5) as f64 / den as f64;
    let arch = Architecture::new(1, vec![3])?;
    let mut net = NetworkParams::init_uniform(&arch, &mut rng);
    // spread the outputs so the hinge is not flat
    let scale = rng.gen_range(1.0..8.0);
    net.scale_output(scale);
    Ok((GammaInstance::new(base, eps)?, net))
}

/// Random two-atom instance for the splitting check.
pub fn random_two_atom_instance(seed: u64) -> Result<(GammaInstance, NetworkParams)> {
    let mut rng = derived_rng(seed, 1);
    loop {
        let (inst, net) = random_instance(rng.gen())?;
        if inst.base.atoms.len() == 2 && inst.radius > 0 {
            return Ok((inst, net));
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EquivalenceRecord {
    pub seed: u64,
    pub atoms: usize,
    pub eps: f64,
    pub pointwise: f64,
    pub distributional: f64,
    pub equal: bool,
}

/// Run `count` random instances with the hinge loss, in parallel.
pub fn equivalence_suite(count: usize, seed: u64) -> Result<Vec<EquivalenceRecord>> {
    let loss = LossSpec::hinge();
    (0..count as u64)
        .into_par_iter()
        .map(|i| {
            let s = crate::util::mix_seed(seed, i);
            let (inst, net) = random_instance(s)?;
            let eq = verify_equivalence(&inst, &net, &loss)?;
            Ok(EquivalenceRecord {
                seed: s,
                atoms: inst.base.atoms.len(),
                eps: inst.eps,
                pointwise: eq.pointwise,
                distributional: eq.distributional,
                equal: eq.equal,
            })
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SplitRecord {
    pub seed: u64,
    pub split: f64,
    pub pointwise: f64,
    /// Splitting never beat pointwise relocation.
    pub holds: bool,
}

pub fn split_suite(count: usize, seed: u64) -> Result<Vec<SplitRecord>> {
    let loss = LossSpec::hinge();
    (0..count as u64)
        .into_par_iter()
        .map(|i| {
            let s = crate::util::mix_seed(seed ^ 0x5b1f, i);
            let (inst, net) = random_two_atom_instance(s)?;
            let split = split_sup_risk(&net, &loss, &inst)?;
            let pointwise = adversarial_risk_discrete(&net, &loss, &inst.base, inst.eps)?;
            Ok(SplitRecord {
                seed: s,
                split,
                pointwise,
                holds: split <= pointwise + 1e-12,
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::attacks::attack_brute;

    struct Linear(f64, f64);

    impl Predictor for Linear {
        fn input_dim(&self) -> usize {
            1
        }
        fn value(&self, x: &[f64]) -> f64 {
            self.0 * x[0] + self.1
        }
        fn input_gradient(&self, _: &[f64]) -> Vec<f64> {
            vec![self.0]
        }
        fn lipschitz_bound(&self) -> f64 {
            self.0.abs()
        }
    }

    struct Step;

    impl Predictor for Step {
        fn input_dim(&self) -> usize {
            1
        }
        fn value(&self, x: &[f64]) -> f64 {
            if x[0] < 0.37 {
                -1.0
            } else {
                1.0
            }
        }
        fn input_gradient(&self, _: &[f64]) -> Vec<f64> {
            vec![0.0]
        }
        fn lipschitz_bound(&self) -> f64 {
            f64::INFINITY
        }
    }

    fn atom(x: i64, y: f64, num: i64, den: i64) -> Atom {
        Atom {
            x: vec![x],
            y,
            mass: Rational64::new(num, den),
        }
    }

    fn one_d(atoms: Vec<Atom>) -> DiscreteDistribution {
        DiscreteDistribution::new(1, 50, atoms).unwrap()
    }

    #[test]
    fn validation() {
        assert!(DiscreteDistribution::new(1, 50, vec![atom(3, 1.0, 1, 2)]).is_err());
        assert!(DiscreteDistribution::new(1, 50, vec![atom(3, 1.0, 1, 2), atom(3, 1.0, 1, 2)]).is_err());
        assert!(DiscreteDistribution::new(1, 50, vec![atom(51, 1.0, 1, 1)]).is_err());
        assert!(DiscreteDistribution::new(1, 50, vec![atom(3, 1.0, 1, 2), atom(3, -1.0, 1, 2)]).is_ok());
    }

    #[test]
    fn single_atom_zero_eps_is_clean_loss() {
        let d = one_d(vec![atom(25, 1.0, 1, 1)]);
        let f = Linear(0.7, -0.1);
        let loss = LossSpec::hinge();
        let clean = loss.eval(f.value(&[0.5]), 1.0);
        assert_eq!(adversarial_risk_discrete(&f, &loss, &d, 0.0).unwrap(), clean);
        let inst = GammaInstance::new(d, 0.0).unwrap();
        assert_eq!(dp_sup_risk(&f, &loss, &inst).unwrap().value, clean);
    }

    #[test]
    fn increasing_linear_moves_atoms_left() {
        let d = one_d(vec![atom(10, 1.0, 1, 2), atom(30, 1.0, 1, 2)]);
        let f = Linear(1.0, 0.0);
        let loss = LossSpec::hinge();
        let eps = 0.1;
        let expected = 0.5 * loss.eval(0.2 - eps, 1.0) + 0.5 * loss.eval(0.6 - eps, 1.0);
        assert!((adversarial_risk_discrete(&f, &loss, &d, eps).unwrap() - expected).abs() < 1e-15);
        let sup = dp_sup_risk(&f, &loss, &GammaInstance::new(d, eps).unwrap()).unwrap();
        assert_eq!(sup.witness, vec![vec![5], vec![25]]);
    }

    #[test]
    fn large_eps_gives_global_grid_max() {
        let f = Linear(-2.0, 0.5);
        let loss = LossSpec::hinge();
        let global = (0..=50)
            .map(|k| loss.eval(f.value(&[k as f64 / 50.0]), 1.0))
            .fold(f64::NEG_INFINITY, f64::max);
        for x in [0, 17, 50] {
            let d = one_d(vec![atom(x, 1.0, 1, 1)]);
            assert_eq!(adversarial_risk_discrete(&f, &loss, &d, 1.0).unwrap(), global);
        }
    }

    #[test]
    fn random_suite_is_equal() {
        let recs = equivalence_suite(100, 11).unwrap();
        assert!(recs.iter().all(|r| r.equal), "{:?}", recs.iter().find(|r| !r.equal));
    }

    #[test]
    fn zero_eps_both_sides_are_natural_risk() {
        let loss = LossSpec::hinge();
        for s in 0..20 {
            let (inst, net) = random_instance(s).unwrap();
            let inst = GammaInstance::new(inst.base, 0.0).unwrap();
            let natural: f64 = inst
                .base
                .atoms
                .iter()
                .map(|a| mass_f64(a.mass) * loss.eval(net.value(&inst.base.coords(&a.x)), a.y))
                .sum();
            let eq = verify_equivalence(&inst, &net, &loss).unwrap();
            assert!(eq.equal);
            assert!((eq.pointwise - natural).abs() < 1e-12);
        }
    }

    #[test]
    fn splitting_never_beats_relocation() {
        assert!(split_suite(20, 5).unwrap().iter().all(|r| r.holds));
    }

    #[test]
    fn discontinuous_predictor_still_equal_on_grid() {
        let d = one_d(vec![atom(15, 1.0, 1, 3), atom(20, -1.0, 2, 3)]);
        let inst = GammaInstance::new(d, 0.06).unwrap();
        assert!(verify_equivalence(&inst, &Step, &LossSpec::hinge()).unwrap().equal);
    }

    #[test]
    fn sup_risk_nondecreasing_in_eps() {
        let loss = LossSpec::hinge();
        for s in 0..10 {
            let (inst, net) = random_instance(s).unwrap();
            let mut prev = f64::NEG_INFINITY;
            for k in 0..=5 {
                let i = GammaInstance::new(inst.base.clone(), k as f64 / 50.0).unwrap();
                let v = dp_sup_risk(&net, &loss, &i).unwrap().value;
                assert!(v >= prev - 1e-15);
                prev = v;
            }
        }
    }

    #[test]
    fn w_inf_examples() {
        let p = vec![(vec![0.2], 1.0)];
        let q = vec![(vec![0.5], 1.0)];
        assert!((w_inf_points(&p, &q).unwrap() - 0.3).abs() < 1e-15);
        assert_eq!(w_inf_points(&p, &p).unwrap(), 0.0);
        let p = vec![(vec![0.4], 0.0), (vec![0.6], 0.0)];
        let q = vec![(vec![0.5], 0.0), (vec![0.0], 0.0)];
        // the two matchings by hand
        let straight = (0.1f64).max(0.6);
        let crossed = (0.4f64).max(0.1);
        let greedy = straight;
        let v = w_inf_points(&p, &q).unwrap();
        assert!((v - straight.min(crossed)).abs() < 1e-15);
        assert!(v < greedy);
        assert!(w_inf_points(&p, &q[..1]).is_err());
    }

    #[test]
    fn w_inf_discrete_rejects_unequal_masses() {
        let p = one_d(vec![atom(1, 0.0, 1, 3), atom(2, 0.0, 2, 3)]);
        let q = one_d(vec![atom(1, 0.0, 1, 2), atom(2, 0.0, 1, 2)]);
        assert!(matches!(w_inf_discrete(&p, &q), Err(Error::Unsupported(_))));
        assert_eq!(w_inf_discrete(&q, &q).unwrap(), 0.0);
    }

    #[test]
    fn w1_examples() {
        let p = DiscreteDistribution::new(1, 2, vec![atom(0, 0.0, 1, 2), atom(2, 0.0, 1, 2)]).unwrap();
        let q = DiscreteDistribution::new(1, 2, vec![atom(1, 0.0, 1, 1)]).unwrap();
        assert!((w1_discrete(&p, &q).unwrap() - 0.5).abs() < 1e-15);
        assert_eq!(w1_discrete(&p, &p).unwrap(), 0.0);
        let a = DiscreteDistribution::new(1, 1, vec![atom(0, 0.0, 1, 1)]).unwrap();
        let b = DiscreteDistribution::new(1, 1, vec![atom(1, 0.0, 1, 1)]).unwrap();
        assert!((w1_discrete(&a, &b).unwrap() - 1.0).abs() < 1e-15);
    }

    /// Brute force over all permutations for equal-mass lists.
    fn w1_by_permutations(p: &[LabelledPoint], q: &[LabelledPoint]) -> f64 {
        fn rec(i: usize, used: &mut Vec<bool>, p: &[LabelledPoint], q: &[LabelledPoint], acc: f64, best: &mut f64) {
            if i == p.len() {
                *best = best.min(acc);
                return;
            }
            for j in 0..q.len() {
                if !used[j] {
                    used[j] = true;
                    let c = ground_distance(&p[i].0, p[i].1, &q[j].0, q[j].1);
                    rec(i + 1, used, p, q, acc + c, best);
                    used[j] = false;
                }
            }
        }
        let mut best = f64::INFINITY;
        rec(0, &mut vec![false; q.len()], p, q, 0.0, &mut best);
        best / p.len() as f64
    }

    #[test]
    fn w1_matches_assignment_oracle_and_w_inf_dominates() {
        let mut rng = derived_rng(8, 8);
        for _ in 0..60 {
            let m = rng.gen_range(1..=5usize);
            let gen = |rng: &mut rand_chacha::ChaCha8Rng| -> Vec<LabelledPoint> {
                (0..m)
                    .map(|_| (vec![rng.gen_range(0..=20) as f64 / 20.0, rng.gen_range(0..=20) as f64 / 20.0], rng.gen_range(0..2) as f64))
                    .collect()
            };
            let p = gen(&mut rng);
            let q = gen(&mut rng);
            let mass = Rational64::new(1, m as i64);
            let weigh = |v: &[LabelledPoint]| v.iter().map(|(x, y)| (x.clone(), *y, mass)).collect::<Vec<_>>();
            let w1 = w1_weighted(&weigh(&p), &weigh(&q)).unwrap();
            assert!((w1 - w1_by_permutations(&p, &q)).abs() < 1e-12);
            assert!(w_inf_points(&p, &q).unwrap() >= w1 - 1e-12);
        }
    }

    #[test]
    fn attacked_empirical_measure_is_within_eps() {
        let f = Linear(-1.3, 0.4);
        let loss = LossSpec::hinge();
        let den = 40;
        let eps = 0.1;
        let mut rng = derived_rng(4, 4);
        let data: Vec<LabelledPoint> = (0..12)
            .map(|_| (vec![rng.gen_range(4..=36) as f64 / den as f64], if rng.gen::<bool>() { 1.0 } else { -1.0 }))
            .collect();
        let shifted: Vec<LabelledPoint> = data
            .iter()
            .map(|(x, y)| {
                let r = attack_brute(&f, &loss, x, *y, eps, 1.0 / den as f64).unwrap();
                (r.x_adv, *y)
            })
            .collect();
        assert!(w_inf_points(&shifted, &data).unwrap() <= eps + 1e-12);
    }
}
