//! Space-division-multiplexed channel: mode mixing with differential mode
//! delay, chromatic dispersion, carrier frequency offset, laser phase noise
//! and OSNR-calibrated white noise.

use std::f64::consts::PI;

use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal};

use crate::error::{Error, Result};
use crate::fft::{bin_frequency, FftPair};
use crate::linalg::{random_unitary, CMatrix};
use crate::signal::TributarySet;

/// Speed of light in vacuum, m/s.
pub const SPEED_OF_LIGHT: f64 = 299_792_458.0;
/// Carrier wavelength used for dispersion, m.
pub const REFERENCE_WAVELENGTH: f64 = 1550e-9;
/// OSNR noise reference bandwidth (0.1 nm at 1550 nm), Hz.
pub const OSNR_REFERENCE_BANDWIDTH: f64 = 12.5e9;

/// RNG stream ids under a channel seed.
const STREAM_MIXING: u64 = 1;
const STREAM_PHASE_NOISE: u64 = 2;
const STREAM_AWGN: u64 = 3;

/// Per-mode delay followed by a `2M x 2M` unitary coupling.
#[derive(Debug, Clone, PartialEq)]
pub struct MixingSection {
    pub unitary: CMatrix,
    /// Delay of each mode (both polarizations), in samples.
    pub mode_delays: Vec<f64>,
}

/// How the fiber mixes modes along its length.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MixingProfile {
    /// Full coupling at the multiplexer and demultiplexer only, with the
    /// whole DMD accumulated in between.
    Lantern,
    /// `K` sections each carrying `1/K` of the DMD followed by full coupling.
    Distributed(usize),
}

/// Complete channel description.
#[derive(Debug, Clone, PartialEq)]
pub struct ChannelModel {
    pub mode_count: usize,
    pub sections: Vec<MixingSection>,
    /// ps/nm/km.
    pub cd_coefficient: f64,
    /// km.
    pub fiber_length: f64,
    /// Baud.
    pub symbol_rate: f64,
    /// Static carrier offset, Hz.
    pub frequency_offset: f64,
    /// Piecewise-linear `(time s, offset Hz)` profile; overrides the static
    /// offset when non-empty.
    pub offset_profile: Vec<(f64, f64)>,
    pub tx_linewidth: f64,
    pub lo_linewidth: f64,
    /// dB in 12.5 GHz; `f64::INFINITY` disables noise loading.
    pub osnr_db: f64,
    pub rng_seed: u64,
}

impl ChannelModel {
    /// Noiseless pass-through channel.
    pub fn identity(mode_count: usize, symbol_rate: f64) -> Self {
        Self {
            mode_count,
            sections: Vec::new(),
            cd_coefficient: 0.0,
            fiber_length: 0.0,
            symbol_rate,
            frequency_offset: 0.0,
            offset_profile: Vec::new(),
            tx_linewidth: 0.0,
            lo_linewidth: 0.0,
            osnr_db: f64::INFINITY,
            rng_seed: 0,
        }
    }

    /// Builds the mixing sections of a fiber with `dmd_ps_per_m` of
    /// differential delay between LP01 (mode 0) and the LP11 group (modes
    /// `1..M`).
    pub fn build_sections(
        mode_count: usize,
        fiber_length_km: f64,
        dmd_ps_per_m: f64,
        sample_rate: f64,
        profile: MixingProfile,
        seed: u64,
    ) -> Result<Vec<MixingSection>> {
        let dim = 2 * mode_count;
        let mut rng = stream_rng(seed, STREAM_MIXING);
        let total = dmd_ps_per_m * 1e-12 * fiber_length_km * 1e3 * sample_rate;
        let group = |share: f64| -> Vec<f64> {
            (0..mode_count)
                .map(|v| if v == 0 { 0.0 } else { total * share })
                .collect()
        };
        match profile {
            MixingProfile::Lantern => Ok(vec![
                MixingSection {
                    unitary: random_unitary(dim, &mut rng)?,
                    mode_delays: vec![0.0; mode_count],
                },
                MixingSection {
                    unitary: random_unitary(dim, &mut rng)?,
                    mode_delays: group(1.0),
                },
            ]),
            MixingProfile::Distributed(k) => {
                if k == 0 {
                    return Err(Error::InvalidParameter("section count must be >= 1".into()));
                }
                (0..k)
                    .map(|_| {
                        Ok(MixingSection {
                            unitary: random_unitary(dim, &mut rng)?,
                            mode_delays: group(1.0 / k as f64),
                        })
                    })
                    .collect()
            }
        }
    }

    pub fn combined_linewidth(&self) -> f64 {
        self.tx_linewidth + self.lo_linewidth
    }

    fn validate(&self) -> Result<()> {
        if self.mode_count == 0 {
            return Err(Error::InvalidParameter("mode count must be >= 1".into()));
        }
        if self.fiber_length < 0.0 {
            return Err(Error::InvalidParameter("fiber length must be >= 0".into()));
        }
        if self.tx_linewidth < 0.0 || self.lo_linewidth < 0.0 {
            return Err(Error::InvalidParameter("linewidths must be >= 0".into()));
        }
        if self.fiber_length > 0.0 && self.sections.is_empty() {
            return Err(Error::InvalidParameter(
                "a fiber of nonzero length needs mixing sections".into(),
            ));
        }
        Ok(())
    }
}

/// Independent generator for one purpose under a seed.
pub fn stream_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Multiplies every stream's spectrum by `response(f_hz)`.
fn filter_streams(
    signal: &mut TributarySet,
    mut response: impl FnMut(usize, f64) -> Complex64,
    per_stream: bool,
) {
    let len = signal.len();
    if len == 0 {
        return;
    }
    let fs = signal.sample_rate;
    let fft = FftPair::new(len);
    let shared: Vec<Complex64> = if per_stream {
        Vec::new()
    } else {
        (0..len).map(|k| response(0, bin_frequency(k, len) * fs)).collect()
    };
    for (t, s) in signal.streams_mut().iter_mut().enumerate() {
        fft.forward(s);
        for (k, v) in s.iter_mut().enumerate() {
            *v *= if per_stream {
                response(t, bin_frequency(k, len) * fs)
            } else {
                shared[k]
            };
        }
        fft.inverse(s);
    }
}

/// Applies per-mode (fractional) delays, then the section's unitary to each
/// time sample's `2M` vector.
pub fn apply_mixing_section(signal: &TributarySet, section: &MixingSection) -> Result<TributarySet> {
    let dim = signal.tributary_count();
    if section.unitary.dim() != dim {
        return Err(Error::DimensionMismatch {
            expected: section.unitary.dim(),
            actual: dim,
        });
    }
    if section.mode_delays.len() != signal.mode_count() {
        return Err(Error::DimensionMismatch {
            expected: section.mode_delays.len(),
            actual: signal.mode_count(),
        });
    }
    let mut out = signal.clone();
    if section.mode_delays.iter().any(|&d| d != 0.0) {
        let fs = signal.sample_rate;
        let delays = section.mode_delays.clone();
        filter_streams(
            &mut out,
            |t, f_hz| {
                let tau = delays[t / 2];
                Complex64::from_polar(1.0, -2.0 * PI * (f_hz / fs) * tau)
            },
            true,
        );
    }
    let len = out.len();
    let mut col = vec![Complex64::default(); dim];
    let mut mixed = vec![Complex64::default(); dim];
    let streams = out.streams_mut();
    for n in 0..len {
        for t in 0..dim {
            col[t] = streams[t][n];
        }
        section.unitary.apply(&col, &mut mixed);
        for t in 0..dim {
            streams[t][n] = mixed[t];
        }
    }
    Ok(out)
}

/// Quadratic-phase all-pass at 1550 nm.
pub fn apply_cd(signal: &TributarySet, cd_ps_nm_km: f64, length_km: f64) -> TributarySet {
    let mut out = signal.clone();
    if cd_ps_nm_km == 0.0 || length_km == 0.0 {
        return out;
    }
    // ps/(nm km) -> s/m^2, km -> m.
    let d = cd_ps_nm_km * 1e-6;
    let l = length_km * 1e3;
    let k = PI * d * l * REFERENCE_WAVELENGTH * REFERENCE_WAVELENGTH / SPEED_OF_LIGHT;
    filter_streams(&mut out, |_, f| Complex64::from_polar(1.0, -k * f * f), false);
    out
}

/// Multiplies sample `n` by `exp(j 2 pi offset n / fs)`.
pub fn apply_frequency_offset(signal: &TributarySet, offset_hz: f64) -> TributarySet {
    if offset_hz == 0.0 {
        return signal.clone();
    }
    let step = 2.0 * PI * offset_hz / signal.sample_rate;
    signal.clone().map_streams(|s| {
        for (n, v) in s.iter_mut().enumerate() {
            *v *= Complex64::from_polar(1.0, step * n as f64);
        }
    })
}

/// Integrates a piecewise-linear offset profile (held constant outside the
/// given points) into a rotator.
pub fn apply_offset_profile(signal: &TributarySet, profile: &[(f64, f64)]) -> TributarySet {
    if profile.is_empty() {
        return signal.clone();
    }
    let fs = signal.sample_rate;
    let offset_at = |t: f64| -> f64 {
        if t <= profile[0].0 {
            return profile[0].1;
        }
        for w in profile.windows(2) {
            let ((t0, f0), (t1, f1)) = (w[0], w[1]);
            if t <= t1 {
                return if t1 > t0 { f0 + (f1 - f0) * (t - t0) / (t1 - t0) } else { f1 };
            }
        }
        profile[profile.len() - 1].1
    };
    let phase: Vec<f64> = (0..signal.len())
        .scan(0.0, |acc, n| {
            let p = *acc;
            *acc += 2.0 * PI * offset_at(n as f64 / fs) / fs;
            Some(p)
        })
        .collect();
    signal.clone().map_streams(|s| {
        for (v, &p) in s.iter_mut().zip(&phase) {
            *v *= Complex64::from_polar(1.0, p);
        }
    })
}

/// Wiener phase trajectory with increment variance `2 pi linewidth / fs`.
pub fn wiener_phase<R: Rng + ?Sized>(
    len: usize,
    combined_linewidth_hz: f64,
    sample_rate: f64,
    rng: &mut R,
) -> Result<Vec<f64>> {
    if combined_linewidth_hz < 0.0 {
        return Err(Error::InvalidParameter("linewidth must be >= 0".into()));
    }
    if combined_linewidth_hz == 0.0 {
        return Ok(vec![0.0; len]);
    }
    let sigma = (2.0 * PI * combined_linewidth_hz / sample_rate).sqrt();
    let normal = Normal::new(0.0, sigma).map_err(|e| Error::InvalidParameter(e.to_string()))?;
    let mut phi = 0.0;
    Ok((0..len)
        .map(|_| {
            let p = phi;
            phi += normal.sample(rng);
            p
        })
        .collect())
}

/// One phase trajectory shared by every stream.
pub fn apply_phase_noise<R: Rng + ?Sized>(
    signal: &TributarySet,
    combined_linewidth_hz: f64,
    rng: &mut R,
) -> Result<TributarySet> {
    let phase = wiener_phase(signal.len(), combined_linewidth_hz, signal.sample_rate, rng)?;
    if combined_linewidth_hz == 0.0 {
        return Ok(signal.clone());
    }
    Ok(signal.clone().map_streams(|s| {
        for (v, &p) in s.iter_mut().zip(&phase) {
            *v *= Complex64::from_polar(1.0, p);
        }
    }))
}

/// SNR per sample (mode power over both-polarization noise power in the
/// full sampled band) for a given OSNR: `OSNR * 12.5 GHz / fs`.
pub fn osnr_to_snr_per_sample(osnr_db: f64, sample_rate: f64) -> f64 {
    10f64.powf(osnr_db / 10.0) * OSNR_REFERENCE_BANDWIDTH / sample_rate
}

/// Adds circular Gaussian noise so that mean per-mode signal power over the
/// noise power of both polarizations in 12.5 GHz equals the OSNR.
pub fn load_awgn_at_osnr<R: Rng + ?Sized>(
    signal: &TributarySet,
    osnr_db: f64,
    rng: &mut R,
) -> Result<TributarySet> {
    if signal.is_empty() {
        return Err(Error::TooShort { needed: 1, actual: 0 });
    }
    if osnr_db == f64::INFINITY {
        return Ok(signal.clone());
    }
    let mode_power = signal.energy() / (signal.len() * signal.mode_count()) as f64;
    let snr = osnr_to_snr_per_sample(osnr_db, signal.sample_rate);
    // Per-stream complex variance; two polarizations share the mode's noise.
    let variance = mode_power / (2.0 * snr);
    let sigma = (variance / 2.0).sqrt();
    Ok(signal.clone().map_streams(|s| {
        for v in s.iter_mut() {
            let re: f64 = StandardNormal.sample(rng);
            let im: f64 = StandardNormal.sample(rng);
            *v += Complex64::new(re, im) * sigma;
        }
    }))
}

/// Sections, then CD, frequency offset, phase noise and noise loading.
pub fn apply_channel(signal: &TributarySet, model: &ChannelModel) -> Result<TributarySet> {
    model.validate()?;
    if signal.mode_count() != model.mode_count {
        return Err(Error::DimensionMismatch {
            expected: model.mode_count,
            actual: signal.mode_count(),
        });
    }
    let mut out = signal.clone();
    for section in &model.sections {
        out = apply_mixing_section(&out, section)?;
    }
    out = apply_cd(&out, model.cd_coefficient, model.fiber_length);
    out = if model.offset_profile.is_empty() {
        apply_frequency_offset(&out, model.frequency_offset)
    } else {
        apply_offset_profile(&out, &model.offset_profile)
    };
    let mut pn_rng = stream_rng(model.rng_seed, STREAM_PHASE_NOISE);
    out = apply_phase_noise(&out, model.combined_linewidth(), &mut pn_rng)?;
    let mut noise_rng = stream_rng(model.rng_seed, STREAM_AWGN);
    load_awgn_at_osnr(&out, model.osnr_db, &mut noise_rng)
}

/// Noiseless transfer matrix of the mixing and dispersion stages at
/// normalized frequency `f` (cycles/sample).
pub fn transfer_matrix(model: &ChannelModel, f: f64, sample_rate: f64) -> CMatrix {
    let dim = 2 * model.mode_count;
    let mut total = CMatrix::identity(dim);
    for section in &model.sections {
        let mut delay = CMatrix::zeros(dim);
        for t in 0..dim {
            delay[(t, t)] = Complex64::from_polar(1.0, -2.0 * PI * f * section.mode_delays[t / 2]);
        }
        total = section.unitary.matmul(&delay).matmul(&total);
    }
    let d = model.cd_coefficient * 1e-6;
    let l = model.fiber_length * 1e3;
    let k = PI * d * l * REFERENCE_WAVELENGTH * REFERENCE_WAVELENGTH / SPEED_OF_LIGHT;
    let f_hz = f * sample_rate;
    let cd = Complex64::from_polar(1.0, -k * f_hz * f_hz);
    let mut scaled = CMatrix::zeros(dim);
    for r in 0..dim {
        for c in 0..dim {
            scaled[(r, c)] = total[(r, c)] * cd;
        }
    }
    scaled
}

#[cfg(test)]
mod tests {
    use super::*;

    fn random_set(modes: usize, len: usize, seed: u64) -> TributarySet {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let streams = (0..2 * modes)
            .map(|_| {
                (0..len)
                    .map(|_| {
                        let re: f64 = StandardNormal.sample(&mut rng);
                        let im: f64 = StandardNormal.sample(&mut rng);
                        Complex64::new(re, im)
                    })
                    .collect()
            })
            .collect();
        TributarySet::new(streams, 68e9, 2).unwrap()
    }

    fn max_diff(a: &TributarySet, b: &TributarySet) -> f64 {
        a.streams()
            .iter()
            .zip(b.streams())
            .flat_map(|(x, y)| x.iter().zip(y).map(|(p, q)| (p - q).norm()))
            .fold(0.0, f64::max)
    }

    #[test]
    fn identity_section_is_identity() {
        let s = random_set(3, 256, 1);
        let section = MixingSection {
            unitary: CMatrix::identity(6),
            mode_delays: vec![0.0; 3],
        };
        assert!(max_diff(&apply_mixing_section(&s, &section).unwrap(), &s) < 1e-12);
    }

    #[test]
    fn integer_delay_moves_impulse() {
        let mut s = TributarySet::zeros(3, 1024, 68e9, 2);
        for t in 0..6 {
            s.streams_mut()[t][10] = Complex64::new(1.0, 0.0);
        }
        let section = MixingSection {
            unitary: CMatrix::identity(6),
            mode_delays: vec![0.0, 300.0, 300.0],
        };
        let out = apply_mixing_section(&s, &section).unwrap();
        for t in 0..6 {
            let peak = out.stream(t)
                .iter()
                .enumerate()
                .max_by(|a, b| a.1.norm().partial_cmp(&b.1.norm()).unwrap())
                .unwrap()
                .0;
            assert_eq!(peak, if t < 2 { 10 } else { 310 });
            assert!((out.stream(t)[peak].norm() - 1.0).abs() < 1e-9);
        }
    }

    #[test]
    fn section_energy_preserved() {
        let s = random_set(3, 1000, 2);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let section = MixingSection {
            unitary: random_unitary(6, &mut rng).unwrap(),
            mode_delays: vec![0.0, 12.37, 40.5],
        };
        let out = apply_mixing_section(&s, &section).unwrap();
        assert!((out.energy() / s.energy() - 1.0).abs() < 1e-9);
    }

    #[test]
    fn section_dimension_mismatch() {
        let s = random_set(1, 16, 4);
        let section = MixingSection {
            unitary: CMatrix::identity(6),
            mode_delays: vec![0.0; 3],
        };
        assert!(matches!(
            apply_mixing_section(&s, &section),
            Err(Error::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn cd_identity_energy_and_inverse() {
        let s = random_set(1, 4096, 5);
        assert!(max_diff(&apply_cd(&s, 0.0, 2.1), &s) < 1e-15);
        let fwd = apply_cd(&s, 21.0, 2.1);
        assert!((fwd.energy() / s.energy() - 1.0).abs() < 1e-9);
        assert!(max_diff(&fwd, &s) > 1e-6);
        let back = apply_cd(&fwd, -21.0, 2.1);
        assert!(max_diff(&back, &s) < 1e-9);
    }

    #[test]
    fn frequency_offset_rotator() {
        let s = TributarySet::new(vec![vec![Complex64::new(1.0, 0.0); 8]; 2], 4.0, 1).unwrap();
        assert_eq!(apply_frequency_offset(&s, 0.0), s);
        let out = apply_frequency_offset(&s, 1.0);
        let expect = [
            Complex64::new(1.0, 0.0),
            Complex64::new(0.0, 1.0),
            Complex64::new(-1.0, 0.0),
            Complex64::new(0.0, -1.0),
        ];
        for (n, v) in out.stream(0).iter().enumerate() {
            assert!((v - expect[n % 4]).norm() < 1e-12);
            assert!((v.norm() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn offset_profile_static_matches_rotator() {
        let s = random_set(1, 512, 6);
        let a = apply_offset_profile(&s, &[(0.0, 1e9)]);
        let b = apply_frequency_offset(&s, 1e9);
        assert!(max_diff(&a, &b) < 1e-9);
    }

    #[test]
    fn phase_noise_properties() {
        let s = random_set(1, 1000, 7);
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        assert_eq!(apply_phase_noise(&s, 0.0, &mut rng).unwrap(), s);
        let out = apply_phase_noise(&s, 1e6, &mut rng).unwrap();
        for (a, b) in out.stream(0).iter().zip(s.stream(0)) {
            assert!((a.norm() - b.norm()).abs() < 1e-12);
        }
        assert!(apply_phase_noise(&s, -1.0, &mut rng).is_err());
    }

    #[test]
    fn wiener_increment_variance() {
        let fs = 68e9;
        let lw = 200e3;
        let n = 1_000_000;
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let phi = wiener_phase(n + 1, lw, fs, &mut rng).unwrap();
        let var = phi.windows(2).map(|w| (w[1] - w[0]).powi(2)).sum::<f64>() / n as f64;
        let expect = 2.0 * PI * lw / fs;
        assert!((var / expect - 1.0).abs() < 0.05, "{var} vs {expect}");
    }

    #[test]
    fn awgn_snr_matches_osnr_formula() {
        let len = 500_000;
        let s = random_set(1, len, 10);
        let osnr_db = 15.0;
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let noisy = load_awgn_at_osnr(&s, osnr_db, &mut rng).unwrap();
        let signal_power = s.energy() / len as f64;
        let noise_power = noisy
            .streams()
            .iter()
            .zip(s.streams())
            .flat_map(|(a, b)| a.iter().zip(b).map(|(p, q)| (p - q).norm_sqr()))
            .sum::<f64>()
            / len as f64;
        let measured = 10.0 * (signal_power / noise_power).log10();
        let target = 10.0 * osnr_to_snr_per_sample(osnr_db, 68e9).log10();
        assert!((measured - target).abs() < 0.1, "{measured} vs {target}");
    }

    #[test]
    fn awgn_infinite_osnr_is_identity() {
        let s = random_set(1, 64, 12);
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        assert_eq!(load_awgn_at_osnr(&s, f64::INFINITY, &mut rng).unwrap(), s);
    }

    #[test]
    fn awgn_uncorrelated_between_tributaries() {
        let len = 200_000;
        let s = TributarySet::zeros(2, len, 68e9, 2);
        let s = s.map_streams(|v| v.iter_mut().for_each(|x| *x = Complex64::new(1.0, 0.0)));
        let mut rng = ChaCha8Rng::seed_from_u64(14);
        let noisy = load_awgn_at_osnr(&s, 10.0, &mut rng).unwrap();
        let noise: Vec<Vec<Complex64>> = noisy
            .streams()
            .iter()
            .map(|v| v.iter().map(|x| x - Complex64::new(1.0, 0.0)).collect())
            .collect();
        let var = noise[0].iter().map(|v| v.norm_sqr()).sum::<f64>() / len as f64;
        for a in 0..4 {
            for b in (a + 1)..4 {
                let cov: Complex64 = noise[a].iter().zip(&noise[b]).map(|(p, q)| p * q.conj()).sum::<Complex64>()
                    / len as f64;
                // Standard error of the sample cross-covariance is var / sqrt(len).
                assert!(cov.norm() < 3.0 * var / (len as f64).sqrt(), "{a},{b}: {cov}");
            }
        }
    }

    #[test]
    fn identity_model_passes_through() {
        let s = random_set(2, 128, 15);
        let out = apply_channel(&s, &ChannelModel::identity(2, 34e9)).unwrap();
        assert!(max_diff(&out, &s) < 1e-15);
    }

    #[test]
    fn b2b_applies_only_rotations_and_noise() {
        let s = random_set(1, 256, 16);
        let mut model = ChannelModel::identity(1, 34e9);
        model.frequency_offset = 1e8;
        model.tx_linewidth = 100e3;
        model.lo_linewidth = 100e3;
        let out = apply_channel(&s, &model).unwrap();
        // Pure phase processes: magnitudes kept, Stokes vectors kept.
        for n in 0..256 {
            let a = crate::signal::stokes_transform(s.x(0)[n], s.y(0)[n]);
            let b = crate::signal::stokes_transform(out.x(0)[n], out.y(0)[n]);
            assert!((a - b).norm_sqr().sqrt() < 1e-9);
        }
    }

    #[test]
    fn fmf_preset_delay_spread_is_300_samples() {
        // 2.1 ps/m * 2100 m = 4.41 ns; at 68 GSa/s that is ~300 samples.
        let sections =
            ChannelModel::build_sections(3, 2.1, 2.1, 68e9, MixingProfile::Lantern, 1).unwrap();
        let spread: f64 = sections
            .iter()
            .map(|s| s.mode_delays.iter().cloned().fold(f64::MIN, f64::max))
            .sum();
        assert!((spread - 299.88).abs() < 0.01, "{spread}");
        let k8 = ChannelModel::build_sections(3, 2.1, 2.1, 68e9, MixingProfile::Distributed(8), 1)
            .unwrap();
        assert_eq!(k8.len(), 8);
        let spread8: f64 = k8.iter().map(|s| s.mode_delays[1]).sum();
        assert!((spread8 - spread).abs() < 1e-9);
    }

    #[test]
    fn noiseless_transfer_is_unitary_and_reproducible() {
        let sections =
            ChannelModel::build_sections(3, 2.1, 2.1, 68e9, MixingProfile::Distributed(8), 5).unwrap();
        let mut model = ChannelModel::identity(3, 34e9);
        model.sections = sections;
        model.fiber_length = 2.1;
        model.cd_coefficient = 21.0;
        for f in [-0.5, -0.13, 0.0, 0.21, 0.4] {
            assert!(transfer_matrix(&model, f, 68e9).unitarity_error() < 1e-9);
        }
        let s = random_set(3, 512, 17);
        let a = apply_channel(&s, &model).unwrap();
        let b = apply_channel(&s, &model).unwrap();
        assert_eq!(a, b);
        assert!((a.energy() / s.energy() - 1.0).abs() < 1e-9);
    }

    #[test]
    fn nonzero_length_without_sections_rejected() {
        let s = random_set(1, 16, 18);
        let mut model = ChannelModel::identity(1, 34e9);
        model.fiber_length = 1.0;
        assert!(apply_channel(&s, &model).is_err());
    }
}
