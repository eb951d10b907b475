//! Per-frame spectral shape descriptors over a magnitude frame and its bin
//! frequencies.

/// Amplitude-weighted mean frequency; 0 for an all-zero frame.
pub fn spectral_centroid(frame: &[f64], freqs: &[f64]) -> f64 {
    let total: f64 = frame.iter().sum();
    if total == 0.0 {
        return 0.0;
    }
    frame.iter().zip(freqs).map(|(m, f)| m * f).sum::<f64>() / total
}

/// Central moments of the frame viewed as a probability mass over bin
/// frequencies: `(centroid, variance, third, fourth)`.
fn central_moments(frame: &[f64], freqs: &[f64]) -> Option<(f64, f64, f64, f64)> {
    let total: f64 = frame.iter().sum();
    if total == 0.0 {
        return None;
    }
    let mean = spectral_centroid(frame, freqs);
    let (mut m2, mut m3, mut m4) = (0.0, 0.0, 0.0);
    for (m, f) in frame.iter().zip(freqs) {
        let p = m / total;
        let d = f - mean;
        let d2 = d * d;
        m2 += p * d2;
        m3 += p * d2 * d;
        m4 += p * d2 * d2;
    }
    Some((mean, m2, m3, m4))
}

fn nonzero_bins(frame: &[f64]) -> usize {
    frame.iter().filter(|&&m| m > 0.0).count()
}

/// Standard deviation of frequency around the centroid.
pub fn spectral_spread(frame: &[f64], freqs: &[f64]) -> f64 {
    central_moments(frame, freqs).map_or(0.0, |(_, var, _, _)| var.sqrt())
}

/// Fourth standardized moment of the spectral distribution.
///
/// `None` flags a degenerate frame (silent, or a single non-zero bin) whose
/// spread is zero; callers treat it as 0 and leave it out of averages.
pub fn spectral_kurtosis(frame: &[f64], freqs: &[f64]) -> Option<f64> {
    if nonzero_bins(frame) < 2 {
        return None;
    }
    let (_, var, _, m4) = central_moments(frame, freqs)?;
    (var > 0.0).then(|| m4 / (var * var))
}

/// Third standardized moment; degenerate frames as for kurtosis.
pub fn spectral_skewness(frame: &[f64], freqs: &[f64]) -> Option<f64> {
    if nonzero_bins(frame) < 2 {
        return None;
    }
    let (_, var, m3, _) = central_moments(frame, freqs)?;
    (var > 0.0).then(|| m3 / var.powf(1.5))
}

/// Lowest bin frequency at which the cumulative energy reaches `fraction` of
/// the total; 0 for an all-zero frame.
pub fn spectral_rolloff(frame: &[f64], freqs: &[f64], fraction: f64) -> f64 {
    let total: f64 = frame.iter().map(|m| m * m).sum();
    if total == 0.0 {
        return 0.0;
    }
    let threshold = fraction * total;
    let mut cumulative = 0.0;
    for (m, f) in frame.iter().zip(freqs) {
        cumulative += m * m;
        if cumulative >= threshold {
            return *f;
        }
    }
    *freqs.last().unwrap_or(&0.0)
}

/// Spectral slope statistic weighting the drop from the first bin above DC.
///
/// `frame[0]` is the DC bin and is ignored; `frame[1]` is the reference bin
/// and `frame[k]`, `k >= 2`, contributes `(m_k - m_1) / (k - 1)`. Returns 0
/// when no energy lies above the reference bin.
pub fn spectral_decrease(frame: &[f64]) -> f64 {
    if frame.len() < 3 {
        return 0.0;
    }
    let reference = frame[1];
    let mut num = 0.0;
    let mut den = 0.0;
    for (k, &m) in frame.iter().enumerate().skip(2) {
        num += (m - reference) / (k - 1) as f64;
        den += m;
    }
    if den == 0.0 {
        0.0
    } else {
        num / den
    }
}

/// Indices of interior local maxima: strictly above the left neighbour and
/// not below the right one, so a flat-topped peak counts once.
pub fn local_maxima(frame: &[f64]) -> impl Iterator<Item = usize> + '_ {
    (1..frame.len().saturating_sub(1))
        .filter(move |&k| frame[k] > frame[k - 1] && frame[k] >= frame[k + 1])
}

/// Number of local maxima at or above `threshold` times the frame maximum.
pub fn spectral_complexity(frame: &[f64], threshold: f64) -> usize {
    let max = frame.iter().copied().fold(0.0, f64::max);
    if max == 0.0 {
        return 0;
    }
    let floor = threshold * max;
    local_maxima(frame).filter(|&k| frame[k] >= floor).count()
}

fn l2_normalized(frame: &[f64]) -> Vec<f64> {
    let norm = frame.iter().map(|m| m * m).sum::<f64>().sqrt();
    if norm == 0.0 {
        vec![0.0; frame.len()]
    } else {
        frame.iter().map(|m| m / norm).collect()
    }
}

/// Frame-to-frame spectral change: Euclidean distance between consecutive
/// frames, L2-normalized first when `normalize` is set. Frame 0 is 0.
pub fn spectral_flux(frames: &[Vec<f64>], normalize: bool) -> Vec<f64> {
    let prepared: Vec<Vec<f64>> = if normalize {
        frames.iter().map(|f| l2_normalized(f)).collect()
    } else {
        frames.to_vec()
    };
    let mut flux = Vec::with_capacity(frames.len());
    if !prepared.is_empty() {
        flux.push(0.0);
    }
    flux.extend(prepared.windows(2).map(|w| {
        w[0].iter()
            .zip(&w[1])
            .map(|(a, b)| (b - a) * (b - a))
            .sum::<f64>()
            .sqrt()
    }));
    flux
}
