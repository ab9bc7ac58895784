//! Frame synchronization and carrier recovery around the equalizer: a
//! 4th-power spectral frequency estimator and Viterbi-Viterbi phase
//! estimation.

use std::f64::consts::{FRAC_PI_2, PI};

use num_complex::Complex64;

use crate::channel::apply_frequency_offset;
use crate::error::{Error, Result};
use crate::fft::{bin_frequency, FftPair};
use crate::signal::TributarySet;

type C = Complex64;

/// Minimum record length for the spectral frequency estimator.
pub const MIN_CFE_LEN: usize = 1 << 12;
/// Median length applied to guided per-block frequency traces.
pub const TRACE_MEDIAN: usize = 5;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SyncResult {
    /// Sample index at which the training starts.
    pub lag: usize,
    /// Normalized correlation magnitude in `[0, 1]`.
    pub peak_metric: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FrequencyEstimate {
    pub offset_hz: f64,
    pub block_index: usize,
    /// Spectral peak below three times the median bin power.
    pub low_confidence: bool,
}

impl FrequencyEstimate {
    pub fn new(offset_hz: f64) -> Self {
        Self {
            offset_hz,
            block_index: 0,
            low_confidence: false,
        }
    }
}

/// `out[lag] = sum_n a[(lag + n) mod L] * conj(b[n])`, `L = a.len()`.
fn circular_xcorr(a: &[C], b: &[C]) -> Vec<C> {
    let len = a.len();
    let fft = FftPair::new(len);
    let mut fa = a.to_vec();
    let mut fb = vec![C::default(); len];
    fb[..b.len().min(len)].copy_from_slice(&b[..b.len().min(len)]);
    fft.forward(&mut fa);
    fft.forward(&mut fb);
    for (x, y) in fa.iter_mut().zip(&fb) {
        *x *= y.conj();
    }
    fft.inverse(&mut fa);
    fa
}

/// Training symbols placed every `sps` samples, zeros in between.
fn stuffed(training: &[C], sps: usize) -> Vec<C> {
    let mut t = vec![C::default(); (training.len() - 1) * sps + 1];
    for (n, &s) in training.iter().enumerate() {
        t[n * sps] = s;
    }
    t
}

/// Finds where `training` (one value per symbol, sampled every `sps`
/// samples) starts in `received` by maximizing the normalized correlation
/// magnitude. Ties go to the smallest lag.
pub fn frame_synchronize(received: &[C], training: &[C], sps: usize) -> Result<SyncResult> {
    if training.is_empty() || sps == 0 {
        return Err(Error::InvalidParameter("empty training or zero sps".into()));
    }
    let span = (training.len() - 1) * sps + 1;
    if received.len() <= span {
        return Err(Error::TooShort { needed: span + 1, actual: received.len() });
    }
    if received.iter().all(|v| v.norm_sqr() == 0.0) {
        return Err(Error::ZeroInput);
    }
    let template = stuffed(training, sps);
    let padded_len = (received.len() + span).next_power_of_two();
    let mut padded = received.to_vec();
    padded.resize(padded_len, C::default());
    let num = circular_xcorr(&padded, &template);
    let power: Vec<C> = padded.iter().map(|v| C::new(v.norm_sqr(), 0.0)).collect();
    let mask: Vec<C> = template
        .iter()
        .map(|v| C::new(if v.norm_sqr() > 0.0 { 1.0 } else { 0.0 }, 0.0))
        .collect();
    let energy = circular_xcorr(&power, &mask);
    let t_energy: f64 = training.iter().map(|v| v.norm_sqr()).sum();
    let mut best = SyncResult { lag: 0, peak_metric: -1.0 };
    for lag in 0..=(received.len() - span) {
        let e = energy[lag].re.max(0.0);
        let metric = if e > 0.0 { num[lag].norm() / (e * t_energy).sqrt() } else { 0.0 };
        if metric > best.peak_metric + 1e-12 {
            best = SyncResult { lag, peak_metric: metric.min(1.0) };
        }
    }
    Ok(best)
}

/// Circular delay profile of `training` across several received streams:
/// for each lag, the sum over streams of the squared normalized correlation.
///
/// With `differential` set, both sides are replaced by `s(n) conj(s(n-1))`
/// at symbol spacing, which removes any carrier frequency offset.
pub fn delay_profile(streams: &[&[C]], training: &[C], sps: usize, differential: bool) -> Result<Vec<f64>> {
    let len = streams.first().map_or(0, |s| s.len());
    let span = (training.len().saturating_sub(1)) * sps + 1;
    if training.len() < 2 || len <= span {
        return Err(Error::TooShort { needed: span + 1, actual: len });
    }
    let (template, prepared): (Vec<C>, Vec<Vec<C>>) = if differential {
        let d: Vec<C> = training.windows(2).map(|w| w[1] * w[0].conj()).collect();
        let prepared = streams
            .iter()
            .map(|s| (0..len).map(|n| s[(n + sps) % len] * s[n].conj()).collect())
            .collect();
        (stuffed(&d, sps), prepared)
    } else {
        (stuffed(training, sps), streams.iter().map(|s| s.to_vec()).collect())
    };
    let t_energy: f64 = template.iter().map(|v| v.norm_sqr()).sum();
    let mut profile = vec![0.0; len];
    for s in &prepared {
        let s_power = s.iter().map(|v| v.norm_sqr()).sum::<f64>() / len as f64;
        if s_power == 0.0 {
            continue;
        }
        let count = training.len() as f64;
        let corr = circular_xcorr(s, &template);
        for (p, c) in profile.iter_mut().zip(&corr) {
            *p += c.norm_sqr() / (t_energy * s_power * count);
        }
    }
    Ok(profile)
}

/// 4th-power spectral estimate over the joint spectrum of several streams.
pub fn pre_cfe_estimate_multi(streams: &[&[C]], sample_rate: f64) -> Result<FrequencyEstimate> {
    estimate_in_range(streams, sample_rate, None)
}

/// As [`pre_cfe_estimate_multi`], with the peak search restricted to offsets
/// within `half_span_hz` of `center_hz`.
pub fn pre_cfe_estimate_near(
    streams: &[&[C]],
    sample_rate: f64,
    center_hz: f64,
    half_span_hz: f64,
) -> Result<FrequencyEstimate> {
    estimate_in_range(streams, sample_rate, Some((center_hz, half_span_hz)))
}

fn estimate_in_range(streams: &[&[C]], sample_rate: f64, range: Option<(f64, f64)>) -> Result<FrequencyEstimate> {
    let power = fourth_power_spectrum(streams)?;
    peak_estimate(&power, sample_rate, range)
}

/// Joint power spectrum of the 4th powers of `streams`.
fn fourth_power_spectrum(streams: &[&[C]]) -> Result<Vec<f64>> {
    let len = streams.first().map_or(0, |s| s.len());
    if len < MIN_CFE_LEN {
        return Err(Error::TooShort { needed: MIN_CFE_LEN, actual: len });
    }
    let fft = FftPair::new(len);
    let mut power = vec![0.0; len];
    for s in streams {
        let mut buf: Vec<C> = s.iter().map(|v| v.powi(4)).collect();
        fft.forward(&mut buf);
        for (p, v) in power.iter_mut().zip(&buf) {
            *p += v.norm_sqr();
        }
    }
    Ok(power)
}

fn peak_estimate(power: &[f64], sample_rate: f64, range: Option<(f64, f64)>) -> Result<FrequencyEstimate> {
    let len = power.len();
    let offset_of = |k: usize| bin_frequency(k, len) * sample_rate / 4.0;
    let (peak, &peak_power) = power
        .iter()
        .enumerate()
        .filter(|(k, _)| range.is_none_or(|(c, h)| (offset_of(*k) - c).abs() <= h))
        .max_by(|a, b| a.1.total_cmp(b.1))
        .ok_or_else(|| Error::InvalidParameter("empty frequency search range".into()))?;
    // Gaussian (log-parabolic) interpolation between neighbouring bins.
    let at = |k: isize| power[k.rem_euclid(len as isize) as usize].max(1e-300).ln();
    let (l, c, r) = (at(peak as isize - 1), at(peak as isize), at(peak as isize + 1));
    let denom = l - 2.0 * c + r;
    let delta = if denom.abs() > 1e-300 { (0.5 * (l - r) / denom).clamp(-0.5, 0.5) } else { 0.0 };
    let freq = (bin_frequency(peak, len) + delta / len as f64) * sample_rate / 4.0;
    let mut sorted = power.to_vec();
    sorted.sort_by(f64::total_cmp);
    let median = sorted[len / 2];
    if !freq.is_finite() {
        return Ok(FrequencyEstimate {
            offset_hz: 0.0,
            block_index: 0,
            low_confidence: true,
        });
    }
    Ok(FrequencyEstimate {
        offset_hz: freq,
        block_index: 0,
        low_confidence: peak_power < 3.0 * median,
    })
}

/// 4th-power spectral frequency estimate of a QPSK stream, unambiguous for
/// `|offset| <= sample_rate / 8`.
pub fn pre_cfe_estimate(received: &[C], sample_rate: f64) -> Result<FrequencyEstimate> {
    pre_cfe_estimate_multi(&[received], sample_rate)
}

/// Per-block estimates over consecutive `block_len`-sample blocks.
pub fn frequency_trace(streams: &[&[C]], sample_rate: f64, block_len: usize) -> Result<Vec<FrequencyEstimate>> {
    trace_with(streams, block_len, |parts| pre_cfe_estimate_multi(parts, sample_rate))
}

/// Per-block estimates searched within `half_span_hz` of a coarse estimate
/// taken from the block-averaged spectrum, then median-filtered over
/// `TRACE_MEDIAN` neighbouring blocks. Both steps keep weak blocks from
/// locking onto noise peaks.
pub fn guided_frequency_trace(
    streams: &[&[C]],
    sample_rate: f64,
    block_len: usize,
    half_span_hz: f64,
) -> Result<Vec<FrequencyEstimate>> {
    let len = streams.first().map_or(0, |s| s.len());
    let blocks = len / block_len.max(1);
    if blocks == 0 {
        return Err(Error::TooShort { needed: block_len, actual: len });
    }
    let spectra: Vec<Vec<f64>> = (0..blocks)
        .map(|b| {
            let parts: Vec<&[C]> = streams.iter().map(|s| &s[b * block_len..(b + 1) * block_len]).collect();
            fourth_power_spectrum(&parts)
        })
        .collect::<Result<_>>()?;
    let mut average = vec![0.0; block_len];
    for sp in &spectra {
        average.iter_mut().zip(sp).for_each(|(a, v)| *a += v);
    }
    let coarse = peak_estimate(&average, sample_rate, None)?.offset_hz;
    let raw: Vec<FrequencyEstimate> = spectra
        .iter()
        .map(|sp| peak_estimate(sp, sample_rate, Some((coarse, half_span_hz))))
        .collect::<Result<_>>()?;
    let half = TRACE_MEDIAN / 2;
    Ok((0..blocks)
        .map(|b| {
            let mut window: Vec<f64> = raw[b.saturating_sub(half)..(b + half + 1).min(blocks)]
                .iter()
                .map(|e| e.offset_hz)
                .collect();
            window.sort_by(f64::total_cmp);
            FrequencyEstimate {
                offset_hz: window[window.len() / 2],
                block_index: b,
                low_confidence: raw[b].low_confidence,
            }
        })
        .collect())
}

fn trace_with(
    streams: &[&[C]],
    block_len: usize,
    estimate: impl Fn(&[&[C]]) -> Result<FrequencyEstimate>,
) -> Result<Vec<FrequencyEstimate>> {
    let len = streams.first().map_or(0, |s| s.len());
    (0..len / block_len.max(1))
        .map(|b| {
            let parts: Vec<&[C]> = streams.iter().map(|s| &s[b * block_len..(b + 1) * block_len]).collect();
            let mut est = estimate(&parts)?;
            est.block_index = b;
            Ok(est)
        })
        .collect()
}

pub fn compensate_frequency(signal: &TributarySet, estimate: &FrequencyEstimate) -> TributarySet {
    apply_frequency_offset(signal, -estimate.offset_hz)
}

/// Removes a per-block offset: block `b` of `block_len` samples is
/// derotated at `estimates[b]`, with the phase kept continuous across block
/// edges. Samples past the last full block use the last estimate.
pub fn compensate_blockwise(signal: &TributarySet, estimates: &[FrequencyEstimate], block_len: usize) -> TributarySet {
    if estimates.is_empty() || block_len == 0 {
        return signal.clone();
    }
    let fs = signal.sample_rate;
    let mut phase = 0.0;
    let rot: Vec<C> = (0..signal.len())
        .map(|n| {
            let f = estimates[(n / block_len).min(estimates.len() - 1)].offset_hz;
            let r = C::from_polar(1.0, -phase);
            phase = (phase + 2.0 * PI * f / fs) % (2.0 * PI);
            r
        })
        .collect();
    signal.clone().map_streams(|s| s.iter_mut().zip(&rot).for_each(|(v, r)| *v *= r))
}

/// Viterbi-Viterbi phase per symbol: `arg(-sum s^4) / 4` over a centered
/// window (truncated at the edges), unwrapped by continuity across the
/// `pi/2` ambiguity.
pub fn viterbi_viterbi_cpe(symbols: &[C], window: usize) -> Result<Vec<f64>> {
    if window == 0 || window.is_multiple_of(2) {
        return Err(Error::InvalidParameter(format!("window {window} must be odd")));
    }
    if window > symbols.len() {
        return Err(Error::TooShort { needed: window, actual: symbols.len() });
    }
    let fourth: Vec<C> = symbols.iter().map(|s| s.powi(4)).collect();
    let mut prefix = Vec::with_capacity(fourth.len() + 1);
    prefix.push(C::default());
    for v in &fourth {
        let last = *prefix.last().unwrap();
        prefix.push(last + v);
    }
    let half = window / 2;
    let mut phases = Vec::with_capacity(symbols.len());
    let mut prev = 0.0;
    for n in 0..symbols.len() {
        let lo = n.saturating_sub(half);
        let hi = (n + half + 1).min(symbols.len());
        let raw = (-(prefix[hi] - prefix[lo])).arg() / 4.0;
        let p = if n == 0 {
            raw
        } else {
            raw + ((prev - raw) / FRAC_PI_2).round() * FRAC_PI_2
        };
        phases.push(p);
        prev = p;
    }
    Ok(phases)
}

/// Shifts `phases` by the multiple of `pi/2` that best aligns the corrected
/// symbols in `range` with the known `reference` there.
pub fn anchor_phases(symbols: &[C], phases: &mut [f64], reference: &[C], range: std::ops::Range<usize>) {
    let corr: C = range
        .filter(|&n| n < symbols.len() && n < reference.len())
        .map(|n| symbols[n] * C::from_polar(1.0, -phases[n]) * reference[n].conj())
        .sum();
    let q = (corr.arg() / FRAC_PI_2).round();
    if q != 0.0 {
        phases.iter_mut().for_each(|p| *p += q * FRAC_PI_2);
    }
}

/// Rotates each symbol by `-phase`.
pub fn derotate(symbols: &[C], phases: &[f64]) -> Vec<C> {
    symbols
        .iter()
        .zip(phases)
        .map(|(s, &p)| s * C::from_polar(1.0, -p))
        .collect()
}

/// Wraps into `(-pi, pi]`.
pub fn wrap_phase(p: f64) -> f64 {
    let w = (p + PI).rem_euclid(2.0 * PI) - PI;
    if w <= -PI {
        PI
    } else {
        w
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::channel::{apply_phase_noise, load_awgn_at_osnr, stream_rng};
    use crate::signal::SymbolFrame;

    fn qpsk(len: usize, seed: u64) -> Vec<C> {
        SymbolFrame::random(len, &mut stream_rng(seed, 0)).symbols
    }

    fn brute_force_lag(received: &[C], training: &[C], sps: usize) -> usize {
        let span = (training.len() - 1) * sps + 1;
        let t_e: f64 = training.iter().map(|v| v.norm_sqr()).sum();
        let metric = |lag: usize| {
            let num: C = (0..training.len()).map(|n| received[lag + n * sps] * training[n].conj()).sum();
            let e: f64 = (0..training.len()).map(|n| received[lag + n * sps].norm_sqr()).sum();
            num.norm() / (e * t_e).sqrt()
        };
        (0..=received.len() - span)
            .max_by(|&a, &b| metric(a).partial_cmp(&metric(b)).unwrap().then(b.cmp(&a)))
            .unwrap()
    }

    #[test]
    fn sync_finds_embedded_training() {
        let data = qpsk(3000, 1);
        let training = data[100..356].to_vec();
        // Two samples per symbol, with a carrier phase.
        let rot = C::from_polar(1.0, 1.1);
        let rx: Vec<C> = data.iter().flat_map(|&s| [s * rot, s * rot]).collect();
        let res = frame_synchronize(&rx, &training, 2).unwrap();
        assert_eq!(res.lag, brute_force_lag(&rx, &training, 2));
        assert_eq!(res.lag, 200);
        assert!(res.peak_metric > 0.99);
    }

    #[test]
    fn sync_lag_zero_and_zero_input() {
        let data = qpsk(1000, 2);
        let res = frame_synchronize(&data, &data[..128], 1).unwrap();
        assert_eq!(res.lag, 0);
        assert!(matches!(
            frame_synchronize(&vec![C::default(); 1000], &data[..128], 1),
            Err(Error::ZeroInput)
        ));
    }

    #[test]
    fn sync_metric_invariant_to_global_phase() {
        let data = qpsk(2000, 3);
        let training = data[500..1000].to_vec();
        let a = frame_synchronize(&data, &training, 1).unwrap();
        let rot: Vec<C> = data.iter().map(|v| v * C::from_polar(1.0, -2.3)).collect();
        let b = frame_synchronize(&rot, &training, 1).unwrap();
        assert_eq!(a.lag, b.lag);
        assert!((a.peak_metric - b.peak_metric).abs() < 1e-9);
    }

    #[test]
    fn random_alignment_metric_is_small() {
        let data = qpsk(4096, 4);
        let other = qpsk(1024, 5);
        let res = frame_synchronize(&data, &other, 1).unwrap();
        // Max over ~3000 lags of |N(0, 1/L)|: well under 5/sqrt(L).
        assert!(res.peak_metric < 5.0 / 32.0, "{}", res.peak_metric);
    }

    #[test]
    fn decorrelated_tributaries_sync_to_their_own_delay() {
        let base = SymbolFrame::random(8192, &mut stream_rng(6, 0));
        let training = &base.symbols[..1024];
        for d in [870, 1700] {
            let delayed = base.delayed(d);
            let res = frame_synchronize(&delayed.symbols, training, 1).unwrap();
            assert_eq!(res.lag, d);
        }
    }

    #[test]
    fn differential_profile_survives_large_offset() {
        let base = qpsk(8192, 7);
        let set = TributarySet::new(vec![base.clone(), base.clone()], 34e9, 1)
            .unwrap()
            .nrz_upsample(2)
            .rotate_left(16384 - 40);
        let set = apply_frequency_offset(&set, -330e6);
        let streams: Vec<&[C]> = set.streams().iter().map(|s| s.as_slice()).collect();
        let profile = delay_profile(&streams, &base[..1024], 2, true).unwrap();
        let best = (0..profile.len()).max_by(|&a, &b| profile[a].partial_cmp(&profile[b]).unwrap()).unwrap();
        assert!(best == 40 || best == 41, "{best}");
    }

    #[test]
    fn cfe_zero_offset() {
        let sym = qpsk(1 << 14, 8);
        let est = pre_cfe_estimate(&sym, 68e9).unwrap();
        assert!(est.offset_hz.abs() < 68e9 / (1 << 14) as f64, "{}", est.offset_hz);
        assert!(!est.low_confidence);
    }

    #[test]
    fn cfe_short_record_rejected() {
        assert!(pre_cfe_estimate(&qpsk(100, 9), 1.0).is_err());
    }

    #[test]
    fn cfe_resolution_scales_with_length() {
        let fs = 68e9;
        for (i, log_len) in [12u32, 13, 14].into_iter().enumerate() {
            let len = 1usize << log_len;
            let bound = fs / (4.0 * len as f64);
            for (j, offset) in [-1.234e9, 0.417e9, 2.9e9].into_iter().enumerate() {
                let set = TributarySet::new(vec![qpsk(len, 10 + j as u64), qpsk(len, 20 + i as u64)], fs, 1).unwrap();
                let set = apply_frequency_offset(&set, offset);
                let mut rng = stream_rng(30 + i as u64, 3);
                let set = load_awgn_at_osnr(&set, 25.0, &mut rng).unwrap();
                let est = pre_cfe_estimate(set.stream(0), fs).unwrap();
                assert!((est.offset_hz - offset).abs() < bound, "len {len}: {} vs {offset}", est.offset_hz);
            }
        }
    }

    #[test]
    fn compensate_is_exact_inverse() {
        let set = TributarySet::new(vec![qpsk(512, 11), qpsk(512, 12)], 68e9, 2).unwrap();
        let shifted = apply_frequency_offset(&set, 123e6);
        let back = compensate_frequency(&shifted, &FrequencyEstimate::new(123e6));
        for (a, b) in back.stream(0).iter().zip(set.stream(0)) {
            assert!((a - b).norm() < 1e-12);
        }
        assert_eq!(compensate_frequency(&set, &FrequencyEstimate::new(0.0)), set);
        // Off by delta leaves a rotator at exactly delta.
        let partial = compensate_frequency(&shifted, &FrequencyEstimate::new(100e6));
        let direct = apply_frequency_offset(&set, 23e6);
        for (a, b) in partial.stream(1).iter().zip(direct.stream(1)) {
            assert!((a - b).norm() < 1e-9);
        }
    }

    #[test]
    fn vv_constant_and_zero_phase() {
        let sym = qpsk(200, 13);
        let rot: Vec<C> = sym.iter().map(|v| v * C::from_polar(1.0, 0.3)).collect();
        let p = viterbi_viterbi_cpe(&rot, 11).unwrap();
        assert!(p.iter().all(|v| (v - 0.3).abs() < 1e-10));
        let p = viterbi_viterbi_cpe(&sym, 11).unwrap();
        assert!(p.iter().all(|v| v.abs() < 1e-10));
        assert!(viterbi_viterbi_cpe(&sym, 12).is_err());
        assert!(viterbi_viterbi_cpe(&sym[..5], 7).is_err());
    }

    #[test]
    fn vv_blind_to_modulation() {
        let a = qpsk(300, 14);
        let b = qpsk(300, 15);
        let phase: Vec<f64> = (0..300).map(|n| 0.2 * (n as f64 / 40.0).sin()).collect();
        let ra = derotate(&a, &phase.iter().map(|p| -p).collect::<Vec<_>>());
        let rb = derotate(&b, &phase.iter().map(|p| -p).collect::<Vec<_>>());
        let pa = viterbi_viterbi_cpe(&ra, 9).unwrap();
        let pb = viterbi_viterbi_cpe(&rb, 9).unwrap();
        for (x, y) in pa.iter().zip(&pb) {
            assert!((x - y).abs() < 1e-12);
        }
    }

    #[test]
    fn vv_unwraps_and_anchors_large_drift() {
        let sym = qpsk(4000, 16);
        let truth: Vec<f64> = (0..4000).map(|n| 0.002 * n as f64 + 2.0).collect();
        let rx: Vec<C> = sym.iter().zip(&truth).map(|(s, p)| s * C::from_polar(1.0, *p)).collect();
        let mut est = viterbi_viterbi_cpe(&rx, 21).unwrap();
        anchor_phases(&rx, &mut est, &sym, 0..64);
        // Truncated edge windows are biased by the drift; centered ones are exact.
        for (e, t) in est.iter().zip(&truth).skip(10).take(4000 - 20) {
            assert!((e - t).abs() < 1e-6, "{e} vs {t}");
        }
        assert_eq!(derotate(&rx, &est).iter().map(|v| crate::signal::qpsk_slice(*v)).collect::<Vec<_>>(),
            sym.iter().map(|v| crate::signal::qpsk_slice(*v)).collect::<Vec<_>>());
    }

    #[test]
    fn vv_window_sweep_on_wiener_phase() {
        // 200 kHz combined linewidth at 34 GBaud, 14 dB SNR per symbol.
        let len = 40_000;
        let sym = qpsk(len, 17);
        let set = TributarySet::new(vec![sym.clone(), sym.clone()], 34e9, 1).unwrap();
        let mut pn = stream_rng(18, 2);
        let noisy_phase = apply_phase_noise(&set, 200e3, &mut pn).unwrap();
        let truth: Vec<f64> = noisy_phase.stream(0).iter().zip(&sym).map(|(r, s)| (r * s.conj()).arg()).collect();
        let mut rng = stream_rng(19, 3);
        let rx = load_awgn_at_osnr(&noisy_phase, 14.0 + 10.0 * (34e9f64 / 12.5e9).log10(), &mut rng).unwrap();
        let mse = |w: usize| {
            let mut p = viterbi_viterbi_cpe(rx.stream(0), w).unwrap();
            anchor_phases(rx.stream(0), &mut p, &sym, 0..256);
            p.iter().zip(&truth).map(|(a, b)| wrap_phase(a - b).powi(2)).sum::<f64>() / len as f64
        };
        let errs: Vec<f64> = [1usize, 5, 21, 61].iter().map(|&w| mse(w)).collect();
        assert!(errs.windows(2).all(|w| w[1] < w[0]), "{errs:?}");
        // Long windows end up linewidth-limited.
        assert!(mse(2001) > errs[3], "{errs:?}");
    }

    #[test]
    fn wrap_phase_range() {
        assert_eq!(wrap_phase(PI), PI);
        assert_eq!(wrap_phase(-PI), PI);
        assert!((wrap_phase(3.0 * PI + 0.1) - (-PI + 0.1)).abs() < 1e-12);
    }
}
