//! Rate tables and the distribution-shift equivalence report.

use std::fmt::Write as _;

use num_rational::Rational64;
use serde::Serialize;

use crate::bounds::{network_shape, rate_exponents, schedule, Task};
use crate::dist::{equivalence_suite, split_suite, EquivalenceRecord, SplitRecord};
use crate::error::Result;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RateRow {
    pub d: u32,
    pub alpha: String,
    pub task: String,
    pub n: u64,
    pub r1: String,
    pub r2: String,
    pub r3: String,
    pub r4: String,
    pub r5: String,
    pub gamma: u32,
    pub k_exponent: String,
    pub wl_exponent: String,
    pub k: f64,
    pub wl: f64,
    pub k_exact: String,
    pub wl_exact: String,
    pub width: usize,
    pub depth: usize,
}

const RATE_HEADER: [&str; 18] = [
    "d", "alpha", "task", "n", "r1", "r2", "r3", "r4", "r5", "gamma", "k_exponent", "wl_exponent", "k", "wl",
    "k_exact", "wl_exact", "width", "depth",
];

fn q(r: Rational64) -> String {
    if *r.denom() == 1 {
        r.numer().to_string()
    } else {
        format!("{}/{}", r.numer(), r.denom())
    }
}

/// One row per `(d, α, task, n)`.
pub fn rates_table(ds: &[u32], alphas: &[Rational64], ns: &[u64], width_const: f64) -> Result<Vec<RateRow>> {
    let mut rows = Vec::new();
    for &d in ds {
        for &alpha in alphas {
            let e = rate_exponents(d, alpha)?;
            for task in [Task::Lipschitz, Task::Quadratic] {
                for &n in ns {
                    let s = schedule(n, d, alpha, task)?;
                    let shape = network_shape(&s, d, alpha, width_const)?;
                    rows.push(RateRow {
                        d,
                        alpha: q(alpha),
                        task: task.name().into(),
                        n,
                        r1: q(e.r1),
                        r2: q(e.r2),
                        r3: q(e.r3),
                        r4: q(e.r4),
                        r5: q(e.r5),
                        gamma: e.gamma,
                        k_exponent: q(s.k_exponent),
                        wl_exponent: q(s.wl_exponent),
                        k: s.k,
                        wl: s.wl,
                        k_exact: s.k_exact.map(q).unwrap_or_default(),
                        wl_exact: s.wl_exact.map(q).unwrap_or_default(),
                        width: shape.width,
                        depth: shape.depth,
                    });
                }
            }
        }
    }
    Ok(rows)
}

fn rate_fields(r: &RateRow) -> Vec<String> {
    vec![
        r.d.to_string(),
        r.alpha.clone(),
        r.task.clone(),
        r.n.to_string(),
        r.r1.clone(),
        r.r2.clone(),
        r.r3.clone(),
        r.r4.clone(),
        r.r5.clone(),
        r.gamma.to_string(),
        r.k_exponent.clone(),
        r.wl_exponent.clone(),
        format!("{:.6}", r.k),
        format!("{:.6}", r.wl),
        r.k_exact.clone(),
        r.wl_exact.clone(),
        r.width.to_string(),
        r.depth.to_string(),
    ]
}

pub fn rates_csv(rows: &[RateRow]) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(RATE_HEADER)?;
    for r in rows {
        w.write_record(rate_fields(r))?;
    }
    let bytes = w.into_inner().map_err(|e| crate::Error::Io(e.into_error()))?;
    Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
}

/// Fixed-width text table.
pub fn rates_text(rows: &[RateRow]) -> String {
    let cells: Vec<Vec<String>> = std::iter::once(RATE_HEADER.iter().map(|s| s.to_string()).collect())
        .chain(rows.iter().map(rate_fields))
        .collect();
    let widths: Vec<usize> = (0..RATE_HEADER.len())
        .map(|c| cells.iter().map(|r| r[c].len()).max().unwrap_or(0))
        .collect();
    let mut s = String::new();
    for row in &cells {
        let line: Vec<String> = row.iter().zip(&widths).map(|(v, w)| format!("{v:>w$}")).collect();
        writeln!(s, "{}", line.join("  ").trim_end()).unwrap();
    }
    s
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EquivReport {
    pub passed: bool,
    pub instances: Vec<EquivalenceRecord>,
    pub splits: Vec<SplitRecord>,
}

pub fn equiv_report(instances: usize, splits: usize, seed: u64) -> Result<EquivReport> {
    let instances = equivalence_suite(instances, seed)?;
    let splits = split_suite(splits, seed)?;
    let passed = instances.iter().all(|r| r.equal) && splits.iter().all(|r| r.holds);
    Ok(EquivReport {
        passed,
        instances,
        splits,
    })
}

impl EquivReport {
    pub fn text(&self) -> String {
        let mut s = String::new();
        writeln!(s, "{:>20}  {:>5}  {:>8}  {:>14}  {:>14}  result", "seed", "atoms", "eps", "pointwise", "shifted").unwrap();
        for r in &self.instances {
            writeln!(
                s,
                "{:>20}  {:>5}  {:>8.4}  {:>14.10}  {:>14.10}  {}",
                r.seed,
                r.atoms,
                r.eps,
                r.pointwise,
                r.distributional,
                if r.equal { "PASS" } else { "FAIL" }
            )
            .unwrap();
        }
        writeln!(s, "\n{:>20}  {:>14}  {:>14}  result", "seed", "split", "pointwise").unwrap();
        for r in &self.splits {
            writeln!(
                s,
                "{:>20}  {:>14.10}  {:>14.10}  {}",
                r.seed,
                r.split,
                r.pointwise,
                if r.holds { "PASS" } else { "FAIL" }
            )
            .unwrap();
        }
        let failed = self.instances.iter().filter(|r| !r.equal).count() + self.splits.iter().filter(|r| !r.holds).count();
        writeln!(
            s,
            "\n{} instances, {} split checks, {failed} failures",
            self.instances.len(),
            self.splits.len()
        )
        .unwrap();
        s
    }
}
