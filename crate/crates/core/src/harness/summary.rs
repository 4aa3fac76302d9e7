use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::ResultRow;
use crate::error::{Error, Result};
use crate::twostage::Method;

const COLUMNS: [&str; 12] = [
    "model",
    "d",
    "n",
    "method",
    "replicate",
    "seed",
    "train_error",
    "test_error",
    "zero_baseline",
    "optimization_gap_proxy",
    "wall_time_seconds",
    "error",
];

/// Five-number summary plus the test error of the replicate with the lowest
/// training error.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryEntry {
    pub q0: f64,
    pub q1: f64,
    pub q2: f64,
    pub q3: f64,
    pub q4: f64,
    pub min_train_test_error: Option<f64>,
    pub zero_baseline: f64,
}

/// `model → d → n → method → entry`.
pub type Summary =
    BTreeMap<String, BTreeMap<usize, BTreeMap<usize, BTreeMap<Method, SummaryEntry>>>>;

/// Nearest-rank quantiles at 0, 1/4, 1/2, 3/4 and 1: the `⌈p n⌉`-th
/// smallest value, and the minimum for `p = 0`.
pub fn nearest_rank_quantiles(values: &[f64]) -> Option<[f64; 5]> {
    if values.is_empty() {
        return None;
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    let at = |num: usize| {
        let rank = (num * n).div_ceil(4).max(1);
        v[rank - 1]
    };
    Some([v[0], at(1), at(2), at(3), v[n - 1]])
}

/// Ordinary least-squares `(slope, intercept)`; NaN when fewer than two
/// points or no spread in `x`.
pub fn least_squares(points: &[(f64, f64)]) -> (f64, f64) {
    let n = points.len() as f64;
    if points.len() < 2 {
        return (f64::NAN, f64::NAN);
    }
    let mx = points.iter().map(|p| p.0).sum::<f64>() / n;
    let my = points.iter().map(|p| p.1).sum::<f64>() / n;
    let sxx: f64 = points.iter().map(|p| (p.0 - mx).powi(2)).sum();
    let sxy: f64 = points.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    if sxx == 0.0 {
        return (f64::NAN, f64::NAN);
    }
    let slope = sxy / sxx;
    (slope, my - slope * mx)
}

fn min_train_test_error(rows: &[&ResultRow]) -> Option<f64> {
    rows.iter()
        .filter(|r| r.train_error.is_finite())
        .min_by(|a, b| {
            a.train_error
                .total_cmp(&b.train_error)
                .then(a.replicate.cmp(&b.replicate))
        })
        .map(|r| r.test_error)
}

type GroupKey = (String, usize, usize, Method);

fn groups(rows: &[ResultRow]) -> BTreeMap<GroupKey, Vec<&ResultRow>> {
    let mut out: BTreeMap<GroupKey, Vec<&ResultRow>> = BTreeMap::new();
    for r in rows.iter().filter(|r| r.error.is_none()) {
        out.entry((r.model.clone(), r.d, r.n, r.method))
            .or_default()
            .push(r);
    }
    out
}

/// Boxplot statistics of the successful rows.
pub fn summarize(rows: &[ResultRow]) -> Summary {
    let mut out = Summary::new();
    for ((model, d, n, method), members) in groups(rows) {
        let tests: Vec<f64> = members.iter().map(|r| r.test_error).collect();
        let Some(q) = nearest_rank_quantiles(&tests) else {
            continue;
        };
        let entry = SummaryEntry {
            q0: q[0],
            q1: q[1],
            q2: q[2],
            q3: q[3],
            q4: q[4],
            min_train_test_error: min_train_test_error(&members),
            zero_baseline: members[0].zero_baseline,
        };
        out.entry(model)
            .or_default()
            .entry(d)
            .or_default()
            .entry(n)
            .or_default()
            .insert(method, entry);
    }
    out
}

pub fn read_results(path: &Path) -> Result<Vec<ResultRow>> {
    let mut rdr = csv::Reader::from_path(path)?;
    let headers = rdr.headers()?.clone();
    if let Some(missing) = COLUMNS.iter().find(|c| !headers.iter().any(|h| h == **c)) {
        return Err(Error::Config(format!(
            "{}: missing column '{missing}'",
            path.display()
        )));
    }
    rdr.deserialize().map(|r| r.map_err(Error::from)).collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PlotKind {
    Boxplot,
    Scatter,
}

impl std::str::FromStr for PlotKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "boxplot" => Ok(PlotKind::Boxplot),
            "scatter" => Ok(PlotKind::Scatter),
            other => Err(Error::Config(format!("unknown plot kind '{other}'"))),
        }
    }
}

#[derive(Serialize)]
struct BoxplotRow<'a> {
    model: &'a str,
    d: usize,
    n: usize,
    method: Method,
    q0: f64,
    q1: f64,
    q2: f64,
    q3: f64,
    q4: f64,
    min_train_test_error: Option<f64>,
    zero_baseline: f64,
}

#[derive(Serialize)]
struct ScatterPoint<'a> {
    model: &'a str,
    d: usize,
    n: usize,
    method: Method,
    replicate: usize,
    train_error: f64,
    test_error: f64,
}

#[derive(Serialize)]
struct ScatterFit<'a> {
    model: &'a str,
    d: usize,
    n: usize,
    method: Method,
    points: usize,
    slope: f64,
    intercept: f64,
}

/// Writes plot data for `results_path` into `out_dir` and returns the files
/// written: `boxplot.csv`, or `scatter_points.csv` and `scatter_fit.csv`.
/// Scatter data covers only rows with a finite training error.
pub fn emit_plot_data(results_path: &Path, kind: PlotKind, out_dir: &Path) -> Result<Vec<PathBuf>> {
    let rows = read_results(results_path)?;
    std::fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let grouped = groups(&rows);
    match kind {
        PlotKind::Boxplot => {
            let path = out_dir.join("boxplot.csv");
            let mut w = csv::Writer::from_path(&path)?;
            for ((model, d, n, method), members) in &grouped {
                let tests: Vec<f64> = members.iter().map(|r| r.test_error).collect();
                let Some(q) = nearest_rank_quantiles(&tests) else {
                    continue;
                };
                w.serialize(BoxplotRow {
                    model,
                    d: *d,
                    n: *n,
                    method: *method,
                    q0: q[0],
                    q1: q[1],
                    q2: q[2],
                    q3: q[3],
                    q4: q[4],
                    min_train_test_error: min_train_test_error(members),
                    zero_baseline: members[0].zero_baseline,
                })?;
            }
            w.flush().map_err(|e| Error::io(&path, e))?;
            Ok(vec![path])
        }
        PlotKind::Scatter => {
            let points_path = out_dir.join("scatter_points.csv");
            let fit_path = out_dir.join("scatter_fit.csv");
            let mut wp = csv::Writer::from_path(&points_path)?;
            let mut wf = csv::Writer::from_path(&fit_path)?;
            for ((model, d, n, method), members) in &grouped {
                let pts: Vec<(f64, f64)> = members
                    .iter()
                    .filter(|r| r.train_error.is_finite())
                    .map(|r| {
                        wp.serialize(ScatterPoint {
                            model,
                            d: *d,
                            n: *n,
                            method: *method,
                            replicate: r.replicate,
                            train_error: r.train_error,
                            test_error: r.test_error,
                        })
                        .map(|_| (r.train_error, r.test_error))
                    })
                    .collect::<std::result::Result<_, _>>()?;
                if pts.is_empty() {
                    continue;
                }
                let (slope, intercept) = least_squares(&pts);
                wf.serialize(ScatterFit {
                    model,
                    d: *d,
                    n: *n,
                    method: *method,
                    points: pts.len(),
                    slope,
                    intercept,
                })?;
            }
            wp.flush().map_err(|e| Error::io(&points_path, e))?;
            wf.flush().map_err(|e| Error::io(&fit_path, e))?;
            Ok(vec![points_path, fit_path])
        }
    }
}
