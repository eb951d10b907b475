//! Correlation analysis: Spearman collinearity screening, Pearson
//! significance tables and feature agglomeration.

mod cluster;
mod special;

pub use cluster::{
    agglomerate, feature_agglomeration, spearman_distances, Dendrogram, Linkage, Merge, TreeNode,
};
pub use special::{incomplete_beta, ln_gamma, student_t_two_tailed};

use std::collections::HashSet;
use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Named value columns, one value per stimulus.
pub type Columns = [(String, Vec<f64>)];

pub const SIGNIFICANT: f64 = 0.05;
pub const HIGHLY_SIGNIFICANT: f64 = 0.01;
pub const COLLINEARITY_THRESHOLD: f64 = 0.8;

/// Sample Pearson correlation, `None` when either input has zero variance
/// or the lengths differ.
pub fn pearson(x: &[f64], y: &[f64]) -> Option<f64> {
    if x.len() != y.len() || x.len() < 2 {
        return None;
    }
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        let (da, db) = (a - mx, b - my);
        sxy += da * db;
        sxx += da * da;
        syy += db * db;
    }
    if sxx == 0.0 || syy == 0.0 {
        return None;
    }
    Some((sxy / (sxx * syy).sqrt()).clamp(-1.0, 1.0))
}

/// Average ranks (1-based); tied values share the mean of their ranks.
pub fn average_ranks(values: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
    let mut ranks = vec![0.0; values.len()];
    let mut start = 0;
    while start < order.len() {
        let mut end = start + 1;
        while end < order.len() && values[order[end]] == values[order[start]] {
            end += 1;
        }
        let rank = (start + end + 1) as f64 / 2.0;
        for &i in &order[start..end] {
            ranks[i] = rank;
        }
        start = end;
    }
    ranks
}

fn check_pair(x: &[f64], y: &[f64]) -> Result<()> {
    if x.len() != y.len() {
        return Err(Error::domain(format!(
            "correlation inputs differ in length ({} vs {})",
            x.len(),
            y.len()
        )));
    }
    if x.len() < 3 {
        return Err(Error::domain(format!(
            "correlation needs at least 3 observations, got {}",
            x.len()
        )));
    }
    if x.iter().chain(y).any(|v| !v.is_finite()) {
        return Err(Error::domain("correlation input contains a non-finite value"));
    }
    Ok(())
}

fn constant_error() -> Error {
    Error::domain("correlation undefined for a constant input")
}

/// Spearman rank correlation.
pub fn spearman(x: &[f64], y: &[f64]) -> Result<f64> {
    check_pair(x, y)?;
    pearson(&average_ranks(x), &average_ranks(y)).ok_or_else(constant_error)
}

/// Pearson r with its two-tailed t-test p-value (`df = n − 2`).
pub fn pearson_test(x: &[f64], y: &[f64]) -> Result<(f64, f64)> {
    check_pair(x, y)?;
    let r = pearson(x, y).ok_or_else(constant_error)?;
    Ok((r, correlation_p_value(r, x.len())?))
}

/// Two-tailed p-value of a sample correlation `r` over `n` observations.
pub fn correlation_p_value(r: f64, n: usize) -> Result<f64> {
    if n < 3 {
        return Err(Error::domain(format!("p-value needs n >= 3, got {n}")));
    }
    if !(-1.0..=1.0).contains(&r) {
        return Err(Error::domain(format!("correlation {r} outside [-1, 1]")));
    }
    if r.abs() == 1.0 {
        return Ok(0.0);
    }
    let df = (n - 2) as f64;
    let t = r * (df / (1.0 - r * r)).sqrt();
    student_t_two_tailed(t, df)
}

/// `**` below 0.01, `*` below 0.05, empty otherwise.
pub fn stars(p: f64) -> &'static str {
    if p < HIGHLY_SIGNIFICANT {
        "**"
    } else if p < SIGNIFICANT {
        "*"
    } else {
        ""
    }
}

pub(crate) fn check_columns(features: &Columns) -> Result<()> {
    if features.len() < 2 {
        return Err(Error::domain(format!(
            "need at least two feature columns, got {}",
            features.len()
        )));
    }
    let len = features[0].1.len();
    if let Some((name, col)) = features.iter().find(|(_, c)| c.len() != len) {
        return Err(Error::domain(format!(
            "feature {name} has {} values, expected {len}",
            col.len()
        )));
    }
    Ok(())
}

/// Greedy collinearity screen: walk `priority`, keeping a feature iff its
/// absolute Spearman correlation with every feature kept so far is at most
/// `threshold`. Names in `priority` without a column are skipped.
pub fn collinearity_filter(
    features: &Columns,
    threshold: f64,
    priority: &[String],
) -> Result<Vec<String>> {
    check_columns(features)?;
    let listed: HashSet<&str> = priority.iter().map(String::as_str).collect();
    if let Some((name, _)) = features.iter().find(|(n, _)| !listed.contains(n.as_str())) {
        return Err(Error::config(format!(
            "feature {name} is missing from the collinearity priority list"
        )));
    }
    let mut kept: Vec<&(String, Vec<f64>)> = Vec::new();
    let mut seen = HashSet::new();
    for name in priority {
        if !seen.insert(name.as_str()) {
            continue;
        }
        let Some(column) = features.iter().find(|(n, _)| n == name) else {
            continue;
        };
        let mut keep = true;
        for other in &kept {
            if spearman(&column.1, &other.1)?.abs() > threshold {
                keep = false;
                break;
            }
        }
        if keep {
            kept.push(column);
        }
    }
    Ok(kept.iter().map(|(n, _)| n.clone()).collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorrelationCell {
    pub r: f64,
    pub p: f64,
    pub stars: String,
}

/// Descriptor × dimension Pearson correlations.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorrelationReport {
    pub rows: Vec<String>,
    /// 1-based dimension indices.
    pub cols: Vec<usize>,
    pub n: usize,
    pub cells: Vec<Vec<CorrelationCell>>,
}

impl CorrelationReport {
    pub fn cell(&self, row: &str, dim: usize) -> Option<&CorrelationCell> {
        let i = self.rows.iter().position(|r| r == row)?;
        let j = self.cols.iter().position(|&c| c == dim)?;
        Some(&self.cells[i][j])
    }

    /// One row per descriptor: `descriptor, dim1_r, dim1_p, dim1_sig, ...`.
    pub fn write_csv<W: Write>(&self, mut out: W, preamble: &[String]) -> Result<()> {
        for line in preamble {
            writeln!(out, "# {line}").map_err(|e| Error::io("<table>", e))?;
        }
        let mut w = csv::Writer::from_writer(out);
        let mut header = vec!["descriptor".to_string()];
        for c in &self.cols {
            header.extend([format!("dim{c}_r"), format!("dim{c}_p"), format!("dim{c}_sig")]);
        }
        w.write_record(&header)?;
        for (name, row) in self.rows.iter().zip(&self.cells) {
            let mut record = vec![name.clone()];
            for cell in row {
                record.extend([
                    crate::descriptors::format_float(cell.r),
                    crate::descriptors::format_float(cell.p),
                    cell.stars.clone(),
                ]);
            }
            w.write_record(&record)?;
        }
        w.flush().map_err(|e| Error::io("<table>", e))?;
        Ok(())
    }

    /// Plain-text rendering with two-decimal r values and star marks.
    pub fn render(&self) -> String {
        let width = self.rows.iter().map(String::len).max().unwrap_or(0).max(10);
        let mut s = format!("{:width$}", "descriptor");
        for c in &self.cols {
            s.push_str(&format!("  {:>8}", format!("dim {c}")));
        }
        s.push('\n');
        for (name, row) in self.rows.iter().zip(&self.cells) {
            s.push_str(&format!("{name:width$}"));
            for cell in row {
                s.push_str(&format!("  {:>8}", format!("{:.2}{}", cell.r, cell.stars)));
            }
            s.push('\n');
        }
        s
    }
}

/// Pearson test of every descriptor against every dimension. `coords` has
/// one row per stimulus; rows keep the order of `descriptors`.
pub fn correlation_table(coords: &[Vec<f64>], descriptors: &Columns) -> Result<CorrelationReport> {
    let n = coords.len();
    let dims = coords.first().map_or(0, Vec::len);
    if dims == 0 || coords.iter().any(|row| row.len() != dims) {
        return Err(Error::domain("coordinates must be a non-empty rectangular matrix"));
    }
    if let Some((name, col)) = descriptors.iter().find(|(_, c)| c.len() != n) {
        return Err(Error::domain(format!(
            "descriptor {name} has {} values but there are {n} stimuli",
            col.len()
        )));
    }
    let dim_columns: Vec<Vec<f64>> = (0..dims)
        .map(|k| coords.iter().map(|row| row[k]).collect())
        .collect();
    let mut cells = Vec::with_capacity(descriptors.len());
    for (name, values) in descriptors {
        let mut row = Vec::with_capacity(dims);
        for dim in &dim_columns {
            let (r, p) = pearson_test(values, dim)
                .map_err(|e| Error::domain(format!("descriptor {name}: {e}")))?;
            row.push(CorrelationCell {
                r,
                p,
                stars: stars(p).to_string(),
            });
        }
        cells.push(row);
    }
    Ok(CorrelationReport {
        rows: descriptors.iter().map(|(n, _)| n.clone()).collect(),
        cols: (1..=dims).collect(),
        n,
        cells,
    })
}
