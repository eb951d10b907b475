//! Synthesizer renders checked through independent spectral measurements,
//! and descriptors checked on rendered stimuli.

use std::f64::consts::PI;

use rustfft::{num_complex::Complex, FftPlanner};
use timbre_core::bank::StimulusBank;
use timbre_core::descriptors::{
    extract, harmonic_amplitudes, spectral_centroid, spectral_flux, spectral_rolloff, stft,
    tristimulus, DescriptorConfig, HarmonicSearch,
};
use timbre_core::synth::{
    a_weighted_rms, amplitude_to_db, render_patch, render_source, svf_lowpass, AdsrEnvelope, AudioBuffer,
    FilterSettings, FmSettings, Oscillator, Patch,
};

fn patch(osc: Oscillator, fm: Option<FmSettings>, filter: FilterSettings, gain_env: AdsrEnvelope) -> Patch {
    Patch {
        id: "p".into(),
        oscillator: osc,
        f0: 440.0,
        fm,
        filter,
        gain_env,
        duration_ms: 1_000,
    }
}

fn static_filter(cutoff: f64) -> FilterSettings {
    FilterSettings {
        cutoff_floor: cutoff,
        cutoff_peak: cutoff,
        resonance_q: 0.707,
        cutoff_env: AdsrEnvelope::constant(),
    }
}

fn source(osc: Oscillator, fm: Option<FmSettings>) -> AudioBuffer {
    render_source(&patch(osc, fm, static_filter(5_000.0), AdsrEnvelope::constant()), 44_100).unwrap()
}

/// Magnitude spectrum of the whole buffer (1 Hz bins for one second).
fn magnitudes(x: &[f64]) -> Vec<f64> {
    let mut s: Vec<Complex<f64>> = x.iter().map(|&v| Complex::new(v, 0.0)).collect();
    FftPlanner::new().plan_fft_forward(s.len()).process(&mut s);
    s[..x.len() / 2 + 1].iter().map(|c| c.norm()).collect()
}

#[test]
fn square_wave_has_no_even_harmonics() {
    let spec = magnitudes(&source(Oscillator::Pulse { duty: 0.5 }, None).samples);
    for h in (2..50).step_by(2) {
        let even = spec[h * 440];
        let neighbour = spec[(h - 1) * 440].min(spec[(h + 1) * 440]);
        assert!(
            amplitude_to_db(neighbour / even.max(1e-300)) >= 40.0,
            "harmonic {h}: {even} vs {neighbour}"
        );
    }
}

fn local_peaks(spec: &[f64], rel_floor: f64) -> Vec<usize> {
    let max = spec.iter().copied().fold(0.0, f64::max);
    (1..spec.len() - 1)
        .filter(|&k| spec[k] > spec[k - 1] && spec[k] >= spec[k + 1] && spec[k] >= rel_floor * max)
        .collect()
}

#[test]
fn phase_modulated_saw_stays_harmonic() {
    let x = source(Oscillator::Sawtooth, Some(FmSettings { ratio: 2, index: 1.0 }));
    let spec = magnitudes(&x.samples);
    let peaks = local_peaks(&spec, 1e-6);
    assert!(peaks.len() > 10);
    for k in peaks {
        let nearest = (k as f64 / 440.0).round() * 440.0;
        assert!((k as f64 - nearest).abs() <= 1.0, "peak at {k} Hz");
    }
}

#[test]
fn zero_index_matches_unmodulated_saw_bit_for_bit() {
    let plain = source(Oscillator::Sawtooth, None);
    let zero = source(Oscillator::Sawtooth, Some(FmSettings { ratio: 3, index: 0.0 }));
    assert_eq!(plain, zero);
}

#[test]
fn no_aliasing_against_oversampled_render() {
    let bank = StimulusBank::study_default();
    for p in &bank.patches {
        let base = render_source(p, 44_100).unwrap();
        let over = render_source(p, 4 * 44_100).unwrap();
        let base_spec = magnitudes(&base.samples);
        let over_spec = magnitudes(&over.samples);
        // normalize by length so bin magnitudes are amplitudes
        let base_amp = |k: usize| base_spec[k] * 2.0 / base.len() as f64;
        let over_amp = |k: usize| over_spec[k] * 2.0 / over.len() as f64;
        let fundamental = base_amp(440);
        let mut worst_alias = 0.0f64;
        for k in 1..22_050 {
            if k % 440 == 0 {
                assert!((base_amp(k) - over_amp(k)).abs() < 1e-9 * fundamental.max(1.0), "{} bin {k}", p.id);
            } else {
                worst_alias = worst_alias.max(base_amp(k));
            }
        }
        assert!(
            amplitude_to_db(fundamental / worst_alias.max(1e-300)) >= 60.0,
            "{}: alias at {} dB",
            p.id,
            amplitude_to_db(worst_alias / fundamental)
        );
    }
}

#[test]
fn bank_renders_are_equal_loudness_and_full_length() {
    let bank = StimulusBank::study_default();
    let rendered = bank.render_all().unwrap();
    let levels: Vec<f64> = rendered.iter().map(|r| amplitude_to_db(r.a_weighted_rms)).collect();
    let (lo, hi) = levels
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &l| (lo.min(l), hi.max(l)));
    assert!(hi - lo <= 0.1, "levels span {lo}..{hi}");
    for (r, p) in rendered.iter().zip(&bank.patches) {
        assert_eq!(r.buffer.len(), 44_100, "{}", p.id);
        assert!(r.buffer.peak() <= 1.0, "{}", p.id);
        assert_eq!(r.clip_deviation_db, 0.0, "{} had to back off", p.id);
        assert!(r.buffer.samples.last().unwrap().abs() < 1e-3, "{}", p.id);
        // independent recomputation of the level
        assert!((a_weighted_rms(&r.buffer).unwrap() - r.a_weighted_rms).abs() < 1e-12);
    }
}

/// Analysis-frame peaks: bins that dominate their +-3-bin neighbourhood (the
/// Hann main lobe plus one sidelobe) and lie within 50 dB of the frame peak.
fn dominant_peaks(frame: &[f64]) -> Vec<usize> {
    let max = frame.iter().copied().fold(0.0, f64::max);
    (3..frame.len() - 3)
        .filter(|&k| {
            frame[k] >= max * 10f64.powf(-50.0 / 20.0)
                && (k - 3..=k + 3).all(|j| j == k || frame[k] > frame[j])
        })
        .collect()
}

#[test]
fn bank_renders_are_harmonic() {
    let bin_hz = 44_100.0 / 2048.0;
    let bank = StimulusBank::study_default();
    for (p, r) in bank.patches.iter().zip(bank.render_all().unwrap()) {
        // onset and release transients are broadband; check frames whose
        // window lies inside the held part of the gain envelope
        let first = (p.gain_env.attack_s * 44_100.0).ceil() as usize;
        let last = ((1.0 - p.gain_env.release_s) * 44_100.0) as usize;
        let spec = stft(&r.buffer).unwrap();
        let held = (0..spec.frames.len()).filter(|f| f * 512 >= first && f * 512 + 2048 <= last);
        for f in held {
            for k in dominant_peaks(&spec.frames[f]) {
                let freq = k as f64 * bin_hz;
                let nearest = (freq / 440.0).round() * 440.0;
                assert!((freq - nearest).abs() <= bin_hz, "{}: frame {f} peak at {freq} Hz", p.id);
            }
        }
    }
}

#[test]
fn renders_are_deterministic() {
    let bank = StimulusBank::study_default();
    let a = bank.render_all().unwrap();
    let b = bank.render_all().unwrap();
    for (x, y) in a.iter().zip(&b) {
        assert_eq!(x.buffer, y.buffer);
    }
}

fn sine(freq: f64) -> AudioBuffer {
    AudioBuffer::new(
        44_100,
        (0..44_100)
            .map(|i| (2.0 * PI * freq * i as f64 / 44_100.0).sin())
            .collect(),
    )
}

fn mean_harmonics(buffer: &AudioBuffer) -> Vec<f64> {
    let spec = stft(buffer).unwrap();
    let search = HarmonicSearch::new(440.0);
    let mut acc = vec![0.0; 50];
    for frame in &spec.frames {
        for (a, x) in acc.iter_mut().zip(harmonic_amplitudes(frame, &spec.bin_freqs, &search)) {
            *a += x / spec.frames.len() as f64;
        }
    }
    acc
}

#[test]
fn sine_has_only_a_fundamental() {
    let a = mean_harmonics(&sine(440.0));
    assert!(a[0] > 0.0);
    for (h, &x) in a.iter().enumerate().skip(1) {
        assert!(x == 0.0 || amplitude_to_db(a[0] / x) >= 50.0, "harmonic {}", h + 1);
    }
}

#[test]
fn sine_centroid_is_within_a_bin() {
    let v = extract(&sine(440.0), &DescriptorConfig::default()).unwrap();
    assert!((v.spectral_centroid - 440.0).abs() <= 44_100.0 / 2048.0, "{}", v.spectral_centroid);
}

#[test]
fn saw_harmonics_follow_inverse_law() {
    let a = mean_harmonics(&source(Oscillator::Sawtooth, None));
    for h in 1..=10 {
        let expected = a[0] / h as f64;
        let err = amplitude_to_db(a[h - 1] / expected).abs();
        assert!(err <= 1.0, "harmonic {h} off by {err} dB");
    }
}

#[test]
fn square_harmonics() {
    let x = source(Oscillator::Pulse { duty: 0.5 }, None);
    let a = mean_harmonics(&x);
    assert!((a[1] / a[0]).powi(2) <= 1e-4);
    let v = extract(&x, &DescriptorConfig::default()).unwrap();
    assert!(v.odd_even_ratio >= 1e3, "{}", v.odd_even_ratio);
}

#[test]
fn lowpass_lowers_centroid() {
    let saw = source(Oscillator::Sawtooth, None);
    let filtered = svf_lowpass(&saw, &vec![500.0; saw.len()], 0.707).unwrap();
    let cfg = DescriptorConfig::default();
    let bright = extract(&saw, &cfg).unwrap().spectral_centroid;
    let dark = extract(&filtered, &cfg).unwrap().spectral_centroid;
    assert!(bright > dark, "{bright} <= {dark}");
}

#[test]
fn cutoff_sweep_raises_flux() {
    let cfg = DescriptorConfig::default();
    let steady = patch(Oscillator::Sawtooth, None, static_filter(3_000.0), AdsrEnvelope::constant());
    let sweep = FilterSettings {
        cutoff_floor: 0.0,
        cutoff_peak: 6_000.0,
        resonance_q: 0.707,
        cutoff_env: AdsrEnvelope::new(0.5, 0.0, 1.0, 0.0),
    };
    let swept = patch(Oscillator::Sawtooth, None, sweep, AdsrEnvelope::constant());
    let steady = extract(&render_patch(&steady).unwrap().buffer, &cfg).unwrap().spectral_flux;
    let swept = extract(&render_patch(&swept).unwrap().buffer, &cfg).unwrap().spectral_flux;
    assert!(steady < 0.05, "{steady}");
    assert!(swept > steady, "{swept} <= {steady}");
}

#[test]
fn slow_filter_attack_lengthens_attack_time() {
    let bank = StimulusBank::study_default();
    let cfg = DescriptorConfig::default();
    let lat = |id: &str| {
        let r = render_patch(bank.patch(id).unwrap()).unwrap();
        extract(&r.buffer, &cfg).unwrap().log_attack_time
    };
    assert!(bank.patch("saw_slow").unwrap().filter.cutoff_env.attack_s == 0.4);
    assert!(bank.patch("saw_fast").unwrap().filter.cutoff_env.attack_s == 0.01);
    let (slow, fast) = (lat("saw_slow"), lat("saw_fast"));
    assert!(slow > fast, "{slow} <= {fast}");
}

#[test]
fn bank_descriptors_are_finite_and_deterministic() {
    let bank = StimulusBank::study_default();
    let cfg = DescriptorConfig::default();
    for r in bank.render_all().unwrap() {
        let v = extract(&r.buffer, &cfg).unwrap();
        assert!(v.values().iter().all(|x| x.is_finite()));
        assert!((0.0..=1.0).contains(&v.tristimulus_2));
        assert!((0.0..=1.0).contains(&v.tristimulus_3));
        assert!(v.tristimulus_2 + v.tristimulus_3 <= 1.0 + 1e-12);
        assert!(v.spectral_centroid >= 0.0 && v.spectral_centroid <= 22_050.0);
        assert!(v.spectral_rolloff >= 0.0 && v.spectral_rolloff <= 22_050.0);
        assert_eq!(v, extract(&r.buffer, &cfg).unwrap());
    }
}

#[test]
fn tristimulus_partition_on_rendered_frames() {
    for r in StimulusBank::study_default().render_all().unwrap() {
        let spec = stft(&r.buffer).unwrap();
        for frame in &spec.frames {
            let amps = harmonic_amplitudes(frame, &spec.bin_freqs, &HarmonicSearch::new(440.0));
            if let Some((t1, t2, t3)) = tristimulus(&amps) {
                assert!((t1 + t2 + t3 - 1.0).abs() < 1e-9);
            }
        }
    }
}

#[test]
fn descriptors_are_scale_invariant() {
    let cfg = DescriptorConfig::default();
    let bank = StimulusBank::study_default();
    for r in bank.render_all().unwrap().iter().step_by(3) {
        let full = extract(&r.buffer, &cfg).unwrap();
        for c in [0.5, 0.013] {
            let scaled = extract(&r.buffer.scaled(c), &cfg).unwrap();
            for (name, (a, b)) in timbre_core::descriptors::DESCRIPTOR_NAMES
                .iter()
                .zip(full.values().iter().zip(scaled.values()))
            {
                let tol = 1e-6 * a.abs().max(1e-9);
                assert!((a - b).abs() <= tol, "{name}: {a} vs {b} at scale {c}");
            }
        }
    }
}

#[test]
fn centroid_never_exceeds_full_rolloff() {
    for r in StimulusBank::study_default().render_all().unwrap() {
        let spec = stft(&r.buffer).unwrap();
        for frame in &spec.frames {
            let c = spectral_centroid(frame, &spec.bin_freqs);
            let top = spectral_rolloff(frame, &spec.bin_freqs, 1.0);
            assert!(0.0 <= c && c <= top && top <= 22_050.0, "{c} {top}");
        }
    }
}

#[test]
fn lowering_static_cutoff_never_brightens() {
    let cfg = DescriptorConfig::default();
    let bank = StimulusBank::study_default();
    let static_patches: Vec<_> = bank
        .patches
        .iter()
        .filter(|p| p.filter.cutoff_floor == p.filter.cutoff_peak)
        .collect();
    // the cutoffs the bank itself uses, highest first
    let mut cutoffs: Vec<f64> = static_patches.iter().map(|p| p.filter.cutoff_peak).collect();
    cutoffs.sort_by(|a, b| b.total_cmp(a));
    cutoffs.dedup();
    for p in static_patches {
        let mut previous = f64::INFINITY;
        for &cutoff in &cutoffs {
            let mut q = p.clone();
            q.filter.cutoff_floor = cutoff;
            q.filter.cutoff_peak = cutoff;
            let c = extract(&render_patch(&q).unwrap().buffer, &cfg).unwrap().spectral_centroid;
            assert!(c <= previous, "{} at {cutoff} Hz: {c} > {previous}", p.id);
            previous = c;
        }
    }
}

#[test]
fn flux_of_static_frames_is_zero() {
    let frames = vec![vec![1.0, 2.0, 3.0]; 4];
    assert!(spectral_flux(&frames, true).iter().all(|&x| x == 0.0));
}
