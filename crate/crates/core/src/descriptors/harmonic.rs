//! Harmonic amplitude picking and the harmonic descriptors built on it.

use super::spectral::local_maxima;

/// Largest value returned by [`odd_even_ratio`] when the even harmonics are
/// silent.
pub const ODD_EVEN_CAP: f64 = 1e10;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HarmonicSearch {
    pub f0: f64,
    /// Half-width of each search band as a fraction of the harmonic
    /// frequency, capped at half the fundamental.
    pub tolerance: f64,
    /// Refine each picked peak with a parabola through the log magnitudes of
    /// the peak bin and its neighbours.
    pub interpolate: bool,
}

impl HarmonicSearch {
    pub fn new(f0: f64) -> Self {
        Self {
            f0,
            tolerance: 0.2,
            interpolate: true,
        }
    }

    pub fn half_band(&self, h: usize) -> f64 {
        (self.tolerance * h as f64 * self.f0).min(self.f0 / 2.0)
    }
}

/// Peak amplitude refined by quadratic interpolation of the dB magnitudes.
fn interpolated_peak(frame: &[f64], k: usize) -> f64 {
    let (a, b, c) = (frame[k - 1], frame[k], frame[k + 1]);
    if a <= 0.0 || c <= 0.0 {
        return b;
    }
    let (a, b, c) = (a.ln(), b.ln(), c.ln());
    let curvature = a - 2.0 * b + c;
    if curvature >= 0.0 {
        return frame[k];
    }
    let offset = 0.5 * (a - c) / curvature;
    (b - 0.25 * (a - c) * offset).exp()
}

/// Amplitude at each harmonic `h = 1..=H` of `search.f0` below Nyquist: the
/// largest local maximum within the harmonic's search band, or 0 if the band
/// holds none.
pub fn harmonic_amplitudes(frame: &[f64], freqs: &[f64], search: &HarmonicSearch) -> Vec<f64> {
    let nyquist = *freqs.last().unwrap_or(&0.0);
    let harmonics = if search.f0 > 0.0 {
        (nyquist / search.f0).floor() as usize
    } else {
        0
    };
    let mut amps = vec![0.0; harmonics];
    let mut best: Vec<Option<usize>> = vec![None; harmonics];
    for k in local_maxima(frame) {
        let f = freqs[k];
        let h = (f / search.f0).round() as usize;
        if h == 0 || h > harmonics {
            continue;
        }
        if (f - h as f64 * search.f0).abs() > search.half_band(h) {
            continue;
        }
        let slot = &mut best[h - 1];
        if slot.is_none_or(|j| frame[k] > frame[j]) {
            *slot = Some(k);
        }
    }
    for (amp, peak) in amps.iter_mut().zip(best) {
        if let Some(k) = peak {
            *amp = if search.interpolate {
                interpolated_peak(frame, k)
            } else {
                frame[k]
            };
        }
    }
    amps
}

/// Tristimulus `(T1, T2, T3)`: shares of the fundamental, harmonics 2-4 and
/// harmonics 5 and up in the summed harmonic amplitude. `None` when every
/// amplitude is zero.
pub fn tristimulus(amps: &[f64]) -> Option<(f64, f64, f64)> {
    let total: f64 = amps.iter().sum();
    if total == 0.0 {
        return None;
    }
    let t1 = amps.first().copied().unwrap_or(0.0) / total;
    let t2 = amps.iter().skip(1).take(3).sum::<f64>() / total;
    let t3 = amps.iter().skip(4).sum::<f64>() / total;
    Some((t1, t2, t3))
}

/// Odd over even harmonic content, the fundamental counting as odd. Uses
/// energies (squared amplitudes) when `energy` is set.
pub fn odd_even_ratio(amps: &[f64], energy: bool) -> f64 {
    let weight = |a: f64| if energy { a * a } else { a };
    let (mut odd, mut even) = (0.0, 0.0);
    for (i, &a) in amps.iter().enumerate() {
        if i % 2 == 0 {
            odd += weight(a);
        } else {
            even += weight(a);
        }
    }
    match (odd == 0.0, even == 0.0) {
        (true, true) => 1.0,
        (_, true) => ODD_EVEN_CAP,
        _ => (odd / even).min(ODD_EVEN_CAP),
    }
}
