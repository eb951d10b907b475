//! Reference implementations written for clarity, not speed. Each one
//! avoids the algorithm it is used to check.

/// Least-squares non-decreasing fit by exhaustive search over every
/// partition into contiguous blocks (`2^(n-1)` candidates).
pub fn brute_isotonic(values: &[f64]) -> Vec<f64> {
    let n = values.len();
    assert!(n > 0 && n <= 20, "exhaustive search is for small inputs");
    let mut best: Option<(f64, Vec<f64>)> = None;
    for mask in 0u32..(1 << (n - 1)) {
        // bit i set: a block boundary after position i
        let mut fit = Vec::with_capacity(n);
        let mut start = 0;
        let mut feasible = true;
        let mut last_mean = f64::NEG_INFINITY;
        for i in 0..n {
            if i == n - 1 || mask & (1 << i) != 0 {
                let block = &values[start..=i];
                let mean = block.iter().sum::<f64>() / block.len() as f64;
                if mean < last_mean {
                    feasible = false;
                    break;
                }
                last_mean = mean;
                fit.extend(std::iter::repeat_n(mean, block.len()));
                start = i + 1;
            }
        }
        if !feasible {
            continue;
        }
        let sse: f64 = fit.iter().zip(values).map(|(a, b)| (a - b) * (a - b)).sum();
        if best.as_ref().is_none_or(|(b, _)| sse < *b) {
            best = Some((sse, fit));
        }
    }
    best.expect("the single-block partition is always feasible").1
}

/// Disparities for pairs with the primary tie approach: order by
/// dissimilarity then distance, fit exhaustively, restore pair order.
pub fn brute_disparities(dissims: &[f64], distances: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..dissims.len()).collect();
    idx.sort_by(|&a, &b| {
        dissims[a]
            .partial_cmp(&dissims[b])
            .unwrap()
            .then(distances[a].partial_cmp(&distances[b]).unwrap())
    });
    let ordered: Vec<f64> = idx.iter().map(|&i| distances[i]).collect();
    let fit = brute_isotonic(&ordered);
    let mut out = vec![0.0; dissims.len()];
    for (k, &i) in idx.iter().enumerate() {
        out[i] = fit[k];
    }
    out
}

fn adaptive_simpson(f: &dyn Fn(f64) -> f64, a: f64, b: f64, tol: f64, depth: u32) -> f64 {
    fn simpson(f: &dyn Fn(f64) -> f64, a: f64, b: f64) -> f64 {
        (b - a) / 6.0 * (f(a) + 4.0 * f((a + b) / 2.0) + f(b))
    }
    fn recurse(f: &dyn Fn(f64) -> f64, a: f64, b: f64, whole: f64, tol: f64, depth: u32) -> f64 {
        let m = (a + b) / 2.0;
        let left = simpson(f, a, m);
        let right = simpson(f, m, b);
        if depth == 0 || (left + right - whole).abs() <= 15.0 * tol {
            return left + right + (left + right - whole) / 15.0;
        }
        recurse(f, a, m, left, tol / 2.0, depth - 1) + recurse(f, m, b, right, tol / 2.0, depth - 1)
    }
    recurse(f, a, b, simpson(f, a, b), tol, depth)
}

/// Two-tailed Student-t tail `P(|T| ≥ |t|)` by quadrature. With
/// `T = √df·tan θ` the density becomes proportional to `cos^(df−1) θ`, so
/// the tail is a ratio of two integrals over `θ` and needs no gamma
/// function.
pub fn t_tail_quadrature(t: f64, df: f64) -> f64 {
    let theta0 = (t.abs() / df.sqrt()).atan();
    let half_pi = std::f64::consts::FRAC_PI_2;
    let density = |theta: f64| theta.cos().powf(df - 1.0);
    let tail = adaptive_simpson(&density, theta0, half_pi, 1e-14, 50);
    let total = adaptive_simpson(&density, 0.0, half_pi, 1e-14, 50);
    tail / total
}

/// Sample Pearson correlation from the textbook formula.
pub fn pearson(x: &[f64], y: &[f64]) -> f64 {
    let n = x.len() as f64;
    let sx: f64 = x.iter().sum();
    let sy: f64 = y.iter().sum();
    let mx = sx / n;
    let my = sy / n;
    let cov: f64 = (0..x.len()).map(|i| (x[i] - mx) * (y[i] - my)).sum();
    let vx: f64 = x.iter().map(|v| (v - mx).powi(2)).sum();
    let vy: f64 = y.iter().map(|v| (v - my).powi(2)).sum();
    cov / (vx * vy).sqrt()
}

/// Ranks by counting: rank = 1 + #smaller + (#equal − 1)/2.
pub fn ranks(x: &[f64]) -> Vec<f64> {
    x.iter()
        .map(|&v| {
            let smaller = x.iter().filter(|&&w| w < v).count() as f64;
            let equal = x.iter().filter(|&&w| w == v).count() as f64;
            1.0 + smaller + (equal - 1.0) / 2.0
        })
        .collect()
}

pub fn spearman(x: &[f64], y: &[f64]) -> f64 {
    pearson(&ranks(x), &ranks(y))
}

/// Average-linkage merge sequence as `(height, members)` per step, by
/// exhaustively scoring every pair of current clusters. Clusters are
/// compared by their smallest leaf name on ties.
pub fn brute_average_linkage(names: &[String], dist: &[Vec<f64>]) -> Vec<(f64, Vec<String>)> {
    let mut clusters: Vec<Vec<usize>> = (0..names.len()).map(|i| vec![i]).collect();
    let label = |c: &Vec<usize>| c.iter().map(|&i| names[i].clone()).min().unwrap();
    let mut steps = Vec::new();
    while clusters.len() > 1 {
        let mut candidates = Vec::new();
        for a in 0..clusters.len() {
            for b in 0..clusters.len() {
                if a == b {
                    continue;
                }
                let mut total = 0.0;
                for &i in &clusters[a] {
                    for &j in &clusters[b] {
                        total += dist[i][j];
                    }
                }
                let avg = total / (clusters[a].len() * clusters[b].len()) as f64;
                let (la, lb) = (label(&clusters[a]), label(&clusters[b]));
                if la < lb {
                    candidates.push((avg, la, lb, a, b));
                }
            }
        }
        candidates.sort_by(|x, y| {
            x.0.partial_cmp(&y.0)
                .unwrap()
                .then_with(|| x.1.cmp(&y.1))
                .then_with(|| x.2.cmp(&y.2))
        });
        let (height, _, _, a, b) = candidates.swap_remove(0);
        let mut merged = clusters[a].clone();
        merged.extend(clusters[b].iter().copied());
        let mut members: Vec<String> = merged.iter().map(|&i| names[i].clone()).collect();
        members.sort();
        steps.push((height, members));
        clusters = clusters
            .into_iter()
            .enumerate()
            .filter(|(i, _)| *i != a && *i != b)
            .map(|(_, c)| c)
            .collect();
        clusters.push(merged);
    }
    steps
}

/// Direct-summation spectral descriptors over one magnitude frame.
pub mod spectral {
    pub fn centroid(m: &[f64], f: &[f64]) -> f64 {
        let mut num = 0.0;
        let mut den = 0.0;
        for k in 0..m.len() {
            num += f[k] * m[k];
            den += m[k];
        }
        if den == 0.0 {
            0.0
        } else {
            num / den
        }
    }

    fn moment(m: &[f64], f: &[f64], order: i32) -> f64 {
        let mu = centroid(m, f);
        let den: f64 = m.iter().sum();
        (0..m.len()).map(|k| m[k] * (f[k] - mu).powi(order)).sum::<f64>() / den
    }

    pub fn spread(m: &[f64], f: &[f64]) -> f64 {
        moment(m, f, 2).sqrt()
    }

    pub fn skewness(m: &[f64], f: &[f64]) -> f64 {
        moment(m, f, 3) / moment(m, f, 2).powf(1.5)
    }

    pub fn kurtosis(m: &[f64], f: &[f64]) -> f64 {
        moment(m, f, 4) / moment(m, f, 2).powi(2)
    }

    /// Smallest bin whose cumulative energy reaches `fraction` of the total.
    pub fn rolloff(m: &[f64], f: &[f64], fraction: f64) -> f64 {
        let total: f64 = m.iter().map(|v| v * v).sum();
        for k in 0..m.len() {
            let below: f64 = m[..=k].iter().map(|v| v * v).sum();
            if below >= fraction * total {
                return f[k];
            }
        }
        f[m.len() - 1]
    }

    /// Decrease relative to the first non-DC bin.
    pub fn decrease(m: &[f64]) -> f64 {
        let body = &m[1..];
        let num: f64 = (1..body.len()).map(|k| (body[k] - body[0]) / k as f64).sum();
        let den: f64 = body[1..].iter().sum();
        num / den
    }

    /// Peaks strictly above the left neighbour and not below the right one,
    /// at least `threshold` times the frame maximum.
    pub fn complexity(m: &[f64], threshold: f64) -> usize {
        let max = m.iter().cloned().fold(f64::MIN, f64::max);
        let mut count = 0;
        for k in 1..m.len() - 1 {
            if m[k] > m[k - 1] && m[k] >= m[k + 1] && m[k] >= threshold * max {
                count += 1;
            }
        }
        count
    }

    /// Euclidean distance between L2-normalized frames.
    pub fn flux(prev: &[f64], next: &[f64]) -> f64 {
        let np = prev.iter().map(|v| v * v).sum::<f64>().sqrt();
        let nn = next.iter().map(|v| v * v).sum::<f64>().sqrt();
        (0..prev.len())
            .map(|k| (next[k] / nn - prev[k] / np).powi(2))
            .sum::<f64>()
            .sqrt()
    }

    pub fn tristimulus(a: &[f64]) -> (f64, f64, f64) {
        let total: f64 = a.iter().sum();
        let t2: f64 = a.iter().enumerate().filter(|(i, _)| (1..=3).contains(i)).map(|(_, v)| v).sum();
        let t3: f64 = a.iter().enumerate().filter(|(i, _)| *i >= 4).map(|(_, v)| v).sum();
        (a[0] / total, t2 / total, t3 / total)
    }

    /// Odd over even harmonic energy; harmonic `h` is `a[h − 1]`.
    pub fn odd_even(a: &[f64]) -> f64 {
        let odd: f64 = (1..=a.len()).filter(|h| h % 2 == 1).map(|h| a[h - 1].powi(2)).sum();
        let even: f64 = (1..=a.len()).filter(|h| h % 2 == 0).map(|h| a[h - 1].powi(2)).sum();
        odd / even
    }
}
