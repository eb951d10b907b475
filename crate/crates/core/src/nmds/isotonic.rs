use crate::error::{Error, Result};

/// Least-squares non-decreasing fit of `values`, in the given order, by
/// pool-adjacent-violators.
pub fn pav(values: &[f64]) -> Vec<f64> {
    // (sum, count) per pooled block
    let mut blocks: Vec<(f64, usize)> = Vec::with_capacity(values.len());
    for &v in values {
        blocks.push((v, 1));
        while blocks.len() > 1 {
            let (s1, c1) = blocks[blocks.len() - 1];
            let (s0, c0) = blocks[blocks.len() - 2];
            if s0 / c0 as f64 > s1 / c1 as f64 {
                blocks.pop();
                let last = blocks.len() - 1;
                blocks[last] = (s0 + s1, c0 + c1);
            } else {
                break;
            }
        }
    }
    let mut out = Vec::with_capacity(values.len());
    for (sum, count) in blocks {
        let mean = sum / count as f64;
        out.extend(std::iter::repeat_n(mean, count));
    }
    out
}

/// Order in which pairs enter the monotone regression: dissimilarity
/// ascending, ties broken by current distance ascending (primary approach),
/// then by index for full determinism.
pub fn regression_order(dissims: &[f64], distances: &[f64]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..dissims.len()).collect();
    order.sort_by(|&i, &j| {
        dissims[i]
            .total_cmp(&dissims[j])
            .then(distances[i].total_cmp(&distances[j]))
            .then(i.cmp(&j))
    });
    order
}

/// Disparities for Kruskal's monotone regression step, returned in the
/// original pair order.
pub fn isotonic_fit(dissims: &[f64], distances: &[f64]) -> Result<Vec<f64>> {
    if dissims.is_empty() {
        return Err(Error::domain("isotonic fit of an empty pair list"));
    }
    if dissims.len() != distances.len() {
        return Err(Error::domain(format!(
            "isotonic fit: {} dissimilarities but {} distances",
            dissims.len(),
            distances.len()
        )));
    }
    if dissims.iter().chain(distances).any(|v| !v.is_finite()) {
        return Err(Error::domain("isotonic fit: non-finite input"));
    }
    let order = regression_order(dissims, distances);
    let sorted: Vec<f64> = order.iter().map(|&i| distances[i]).collect();
    let fitted = pav(&sorted);
    let mut out = vec![0.0; dissims.len()];
    for (&i, v) in order.iter().zip(fitted) {
        out[i] = v;
    }
    Ok(out)
}

/// Kruskal's stress-1: `sqrt(Σ(d − d̂)² / Σd²)`.
pub fn stress1(distances: &[f64], disparities: &[f64]) -> Result<f64> {
    if distances.len() != disparities.len() {
        return Err(Error::domain(format!(
            "stress: {} distances but {} disparities",
            distances.len(),
            disparities.len()
        )));
    }
    let denom: f64 = distances.iter().map(|d| d * d).sum();
    if denom <= 0.0 || !denom.is_finite() {
        return Err(Error::domain("stress undefined for all-zero distances"));
    }
    let num: f64 = distances
        .iter()
        .zip(disparities)
        .map(|(d, h)| (d - h).powi(2))
        .sum();
    Ok((num / denom).sqrt())
}
