//! Log-log least-squares slopes over seed-averaged results.

use std::collections::BTreeMap;
use std::path::Path;

use serde::Serialize;

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SlopeFit {
    /// Values of the grouping columns joined with `/`; empty without grouping.
    pub group: String,
    pub slope: f64,
    pub intercept: f64,
    pub stderr: f64,
    /// Distinct x values used.
    pub points: usize,
}

/// Ordinary least squares of `ln y` on `ln x`: `(slope, intercept, slope stderr)`.
pub fn fit_log_log(points: &[(f64, f64)]) -> Result<(f64, f64, f64)> {
    if points.len() < 3 {
        return Err(Error::InvalidArgument(format!("need >= 3 points, got {}", points.len())));
    }
    if points.iter().any(|&(x, y)| !(x > 0.0 && y > 0.0)) {
        return Err(Error::InvalidArgument("log-log fit needs positive coordinates".into()));
    }
    let lx: Vec<f64> = points.iter().map(|p| p.0.ln()).collect();
    let ly: Vec<f64> = points.iter().map(|p| p.1.ln()).collect();
    let k = points.len() as f64;
    let mx = lx.iter().sum::<f64>() / k;
    let my = ly.iter().sum::<f64>() / k;
    let sxx: f64 = lx.iter().map(|x| (x - mx).powi(2)).sum();
    if sxx == 0.0 {
        return Err(Error::InvalidArgument("x values are all equal".into()));
    }
    let sxy: f64 = lx.iter().zip(&ly).map(|(x, y)| (x - mx) * (y - my)).sum();
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let ssr: f64 = lx.iter().zip(&ly).map(|(x, y)| (y - intercept - slope * x).powi(2)).sum();
    let stderr = (ssr / (k - 2.0) / sxx).sqrt();
    Ok((slope, intercept, stderr))
}

/// Rows `(group, x, y)`: average `y` over rows sharing `(group, x)`, then fit each group.
///
/// Rows with nonpositive or non-finite `y` are dropped with a warning.
pub fn fit_groups(rows: &[(String, f64, f64)]) -> Result<Vec<SlopeFit>> {
    let mut groups: BTreeMap<&str, BTreeMap<u64, (f64, f64, usize)>> = BTreeMap::new();
    for (g, x, y) in rows {
        if !(*y > 0.0) || !y.is_finite() {
            log::warn!("dropping row with y = {y} in group {g:?}");
            continue;
        }
        let slot = groups.entry(g).or_default().entry(x.to_bits()).or_insert((*x, 0.0, 0));
        slot.1 += y;
        slot.2 += 1;
    }
    let mut fits = Vec::new();
    for (g, by_x) in groups {
        let mut pts: Vec<(f64, f64)> = by_x.values().map(|&(x, s, c)| (x, s / c as f64)).collect();
        pts.sort_by(|a, b| a.0.total_cmp(&b.0));
        let (slope, intercept, stderr) =
            fit_log_log(&pts).map_err(|e| Error::InvalidArgument(format!("group {g:?}: {e}")))?;
        fits.push(SlopeFit {
            group: g.to_string(),
            slope,
            intercept,
            stderr,
            points: pts.len(),
        });
    }
    if fits.is_empty() {
        return Err(Error::InvalidArgument("no usable rows".into()));
    }
    Ok(fits)
}

/// Fit `ln mean(y_col)` against `ln x_col` from a results CSV, one fit per distinct
/// value of the `group` columns. Rows with a nonempty `error` column are skipped.
pub fn fit_slope(csv_path: &Path, x_col: &str, y_col: &str, group: &[&str]) -> Result<Vec<SlopeFit>> {
    let mut reader = csv::Reader::from_path(csv_path)?;
    let headers = reader.headers()?.clone();
    let col = |name: &str| {
        headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| Error::InvalidArgument(format!("column {name:?} not in CSV")))
    };
    let xi = col(x_col)?;
    let yi = col(y_col)?;
    let gi: Vec<usize> = group.iter().map(|g| col(g)).collect::<Result<_>>()?;
    let err_col = headers.iter().position(|h| h == "error");
    let mut rows = Vec::new();
    for rec in reader.records() {
        let rec = rec?;
        if err_col.is_some_and(|i| !rec[i].is_empty()) {
            continue;
        }
        let x: f64 = rec[xi]
            .parse()
            .map_err(|_| Error::InvalidArgument(format!("bad {x_col} value {:?}", &rec[xi])))?;
        let y: f64 = rec[yi].parse().unwrap_or(f64::NAN);
        let g = gi.iter().map(|&i| &rec[i]).collect::<Vec<_>>().join("/");
        rows.push((g, x, y));
    }
    fit_groups(&rows)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::util::derived_rng;
    use rand::Rng;

    #[test]
    fn exact_power_law() {
        let pts: Vec<(f64, f64)> = (0..6).map(|i| {
            let x = 128.0 * 2f64.powi(i);
            (x, x.powf(-0.5))
        }).collect();
        let (s, _, se) = fit_log_log(&pts).unwrap();
        assert!((s + 0.5).abs() < 1e-12);
        assert!(se < 1e-12);
    }

    #[test]
    fn noisy_power_law() {
        let mut rng = derived_rng(5, 5);
        let pts: Vec<(f64, f64)> = (0..6)
            .map(|i| {
                let x = 128.0 * 2f64.powi(i);
                (x, 3.0 * x.powf(-2.0 / 7.0) * (1.0 + rng.gen_range(-0.01..0.01)))
            })
            .collect();
        let (s, _, _) = fit_log_log(&pts).unwrap();
        assert!((s + 2.0 / 7.0).abs() < 0.05);
    }

    #[test]
    fn constant_and_guards() {
        let pts = [(1.0, 2.0), (2.0, 2.0), (4.0, 2.0)];
        assert!(fit_log_log(&pts).unwrap().0.abs() < 1e-12);
        assert!(fit_log_log(&pts[..2]).is_err());
        assert!(fit_log_log(&[(1.0, 1.0), (2.0, 0.0), (3.0, 1.0)]).is_err());
    }

    #[test]
    fn groups_average_seeds_and_drop_nonpositive() {
        let mut rows = Vec::new();
        for x in [10.0, 100.0, 1000.0] {
            // seed means equal x^{-1}
            rows.push(("a".to_string(), x, 0.5 / x));
            rows.push(("a".to_string(), x, 1.5 / x));
            rows.push(("a".to_string(), x, -1.0));
            rows.push(("b".to_string(), x, 2.0));
        }
        let fits = fit_groups(&rows).unwrap();
        assert_eq!(fits.len(), 2);
        assert!((fits[0].slope + 1.0).abs() < 1e-12);
        assert!(fits[1].slope.abs() < 1e-12);
    }

    #[test]
    fn from_csv() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("r.csv");
        let mut text = String::from("n,l2_sq,task,error\n");
        for n in [128, 256, 512, 1024] {
            text += &format!("{n},{:?},t,\n", (n as f64).powf(-0.25));
        }
        text += "2048,5.0,t,diverged\n";
        std::fs::write(&p, text).unwrap();
        let fits = fit_slope(&p, "n", "l2_sq", &["task"]).unwrap();
        assert_eq!(fits[0].group, "t");
        assert_eq!(fits[0].points, 4);
        assert!((fits[0].slope + 0.25).abs() < 1e-12);
        assert!(fit_slope(&p, "n", "nope", &[]).is_err());
    }
}
