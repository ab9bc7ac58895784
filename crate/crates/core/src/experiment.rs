//! End-to-end trials: transmitter, channel and receiver DSP chain, required
//! OSNR search, grid sweeps and CSV artifacts.

use std::io::Write;
use std::path::Path;

use num_complex::Complex64;
use rand::RngCore;
use rayon::prelude::*;

use crate::carrier::{
    anchor_phases, compensate_blockwise, compensate_frequency, delay_profile, derotate, guided_frequency_trace,
    pre_cfe_estimate_multi, viterbi_viterbi_cpe, FrequencyEstimate,
};
use crate::channel::{apply_channel, stream_rng};
use crate::config::{ExperimentConfig, TrialPoint};
use crate::equalizer::{run_equalizer, ErrorFunction, FilterBank};
use crate::error::{Error, Result};
use crate::fft::FftPair;
use crate::report::{fmt_e, CsvWriter};
use crate::signal::{generate_decorrelated_tributaries, qpsk_demodulate, SymbolFrame, TributarySet};

type C = Complex64;

const STREAM_BITS: u64 = 0;
/// Points kept in the per-trial error-trace summary.
const TRACE_POINTS: usize = 32;
/// Normalized steady-state cost below which a run counts as converged.
const CONVERGED_COST: f64 = 0.5;

/// Header of the sweep CSV.
pub const SWEEP_HEADER: &str =
    "equalizer,taps,frequency_offset_hz,normalized_offset,osnr_db,ber,error_count,counted_bits,converged,seed";

/// Per-trial generator seed derived from the master seed and trial index.
pub fn trial_seed(master_seed: u64, trial_index: u64) -> u64 {
    stream_rng(master_seed, trial_index.wrapping_add(1 << 32)).next_u64()
}

/// Outcome of one simulated transmission.
#[derive(Debug, Clone, PartialEq)]
pub struct TrialResult {
    pub ber: f64,
    pub error_count: u64,
    pub counted_bits: u64,
    pub converged: bool,
    /// Offset left at the equalizer output (post-equalizer CFE estimate).
    pub residual_offset_hz: f64,
    /// Pre-equalizer CFE estimate, when it ran.
    pub pre_cfe_hz: Option<f64>,
    pub final_taps: FilterBank,
    /// Block-averaged normalized cost, `TRACE_POINTS` values.
    pub error_trace: Vec<f64>,
    pub seed: u64,
}

/// Transmitted reference for one trial.
#[derive(Debug, Clone)]
pub struct Transmission {
    pub frames: Vec<SymbolFrame>,
    /// Symbol-rate tributaries.
    pub symbols: TributarySet,
    /// Pulse-shaped waveform at the configured samples per symbol.
    pub waveform: TributarySet,
}

pub fn transmit(config: &ExperimentConfig, seed: u64) -> Result<Transmission> {
    let t = &config.transmitter;
    let mut rng = stream_rng(seed, STREAM_BITS);
    let base = SymbolFrame::random(t.symbol_count, &mut rng);
    let (symbols, frames) =
        generate_decorrelated_tributaries(&base, &config.delays(), t.modes, t.symbol_rate)?;
    let waveform = symbols.nrz_upsample(t.samples_per_symbol);
    Ok(Transmission {
        frames,
        symbols,
        waveform,
    })
}

/// Runs the full chain for `point` under the trial's seed.
pub fn run_trial_at(config: &ExperimentConfig, point: &TrialPoint, trial_index: u64) -> Result<TrialResult> {
    let seed = trial_seed(config.seed, trial_index);
    let tx = transmit(config, seed)?;
    let model = config.channel_model(point, seed)?;
    let received = apply_channel(&tx.waveform, &model)?;
    receive(config, point, &tx, received, seed)
}

/// Runs the configured operating point.
pub fn run_trial(config: &ExperimentConfig, trial_index: u64) -> Result<TrialResult> {
    run_trial_at(config, &config.base_point(), trial_index)
}

/// Receiver on an externally produced waveform, with the reference
/// regenerated from the config's transmitter and seed.
pub fn run_trial_on_capture(
    config: &ExperimentConfig,
    capture: TributarySet,
    trial_index: u64,
) -> Result<TrialResult> {
    let seed = trial_seed(config.seed, trial_index);
    let tx = transmit(config, seed)?;
    if capture.tributary_count() != tx.waveform.tributary_count() {
        return Err(Error::DimensionMismatch {
            expected: tx.waveform.tributary_count(),
            actual: capture.tributary_count(),
        });
    }
    receive(config, &config.base_point(), &tx, capture, seed)
}

/// Circular lag (samples) to advance the received streams by so that the
/// middle of the channel's delay spread lines up with the reference.
///
/// Each (training, stream) pair contributes the magnitude of its
/// differential correlation, which scales with the channel power at that
/// lag; the sum over all pairs is the power delay profile of the whole
/// MIMO channel. Lags whose excess over the median floor reaches a quarter
/// of the peak excess count as significant.
pub fn alignment_lag(received: &TributarySet, trainings: &[&[C]], window: usize) -> Result<usize> {
    let len = received.len();
    let mut profile = vec![0.0; len];
    for training in trainings {
        for stream in received.streams() {
            let p = delay_profile(&[stream.as_slice()], training, received.samples_per_symbol, true)?;
            profile.iter_mut().zip(p).for_each(|(a, b)| *a += b.sqrt());
        }
    }
    let len = len as isize;
    let w = window as isize;
    let mut local: Vec<(isize, f64)> = (-w..=w).map(|l| (l, profile[l.rem_euclid(len) as usize])).collect();
    let peak = local.iter().map(|e| e.1).fold(0.0, f64::max);
    let mut sorted: Vec<f64> = local.iter().map(|e| e.1).collect();
    sorted.sort_by(f64::total_cmp);
    let floor = sorted[sorted.len() / 2];
    local.retain(|&(_, p)| p - floor >= 0.25 * (peak - floor));
    let (lo, hi) = (local[0].0, local[local.len() - 1].0);
    Ok(((lo + hi).div_euclid(2)).rem_euclid(len) as usize)
}

fn receive(
    config: &ExperimentConfig,
    point: &TrialPoint,
    tx: &Transmission,
    mut received: TributarySet,
    seed: u64,
) -> Result<TrialResult> {
    let t = &config.transmitter;
    let r = &config.receiver;
    let eq_config = config.equalizer_config(point.variant);

    let mut pre_cfe_hz = None;
    if r.pre_cfe && point.variant.error_function() == ErrorFunction::Lms {
        let streams: Vec<&[C]> = received.streams().iter().map(|s| s.as_slice()).collect();
        match r.pre_cfe_block {
            Some(block) if block < received.len() => {
                let trace = guided_frequency_trace(&streams, received.sample_rate, block, r.pre_cfe_span_hz)?;
                pre_cfe_hz = Some(trace.iter().map(|e| e.offset_hz).sum::<f64>() / trace.len() as f64);
                received = compensate_blockwise(&received, &trace, block);
            }
            _ => {
                let est = pre_cfe_estimate_multi(&streams, received.sample_rate)?;
                pre_cfe_hz = Some(est.offset_hz);
                received = compensate_frequency(&received, &est);
            }
        }
    }

    let trainings: Vec<&[C]> = tx.frames.iter().map(|f| &f.symbols[..t.training_length]).collect();
    let window = r.sync_window.unwrap_or(r.fft_size.min(1024));
    let lag = alignment_lag(&received, &trainings, window)?;
    let aligned = received.rotate_left(lag).extend_cyclic(r.fft_size / 2);

    let run = run_equalizer(&aligned, &tx.symbols, &eq_config)?;
    let len = t.symbol_count;
    let mut out: Vec<Vec<C>> = run.output.streams().iter().map(|s| s[..len].to_vec()).collect();

    // The last symbols see the seam where the cyclically extended input
    // wraps around; they are left out of estimation and counting.
    let guard = (window + r.fft_size).div_ceil(t.samples_per_symbol);
    let skip = r.ber_skip_symbols;
    let end = len.saturating_sub(guard);
    if end <= skip {
        return Err(Error::TooShort { needed: skip + guard + 1, actual: len });
    }

    // Post-equalizer CFE over the settled part, then CPE per tributary.
    let settled = (skip / 2).min(end.saturating_sub(crate::carrier::MIN_CFE_LEN));
    let parts: Vec<&[C]> = out.iter().map(|s| &s[settled..end]).collect();
    let post = pre_cfe_estimate_multi(&parts, t.symbol_rate)?;
    let eq_out = TributarySet::new(out, t.symbol_rate, 1)?;
    out = compensate_frequency(&eq_out, &FrequencyEstimate::new(post.offset_hz)).into_streams();

    let anchor = if skip >= 64 { skip.saturating_sub(1024)..skip } else { 0..t.training_length.min(1024) };
    let mut errors = 0u64;
    let mut counted = 0u64;
    for (k, stream) in out.iter().enumerate() {
        let reference = &tx.frames[k].symbols;
        let mut phases = viterbi_viterbi_cpe(stream, r.cpe_window)?;
        anchor_phases(stream, &mut phases, reference, anchor.clone());
        let bits = qpsk_demodulate(&derotate(stream, &phases));
        let c = crate::signal::ber_count(&tx.frames[k].bits[..2 * end], &bits[..2 * end], 2 * skip)?;
        errors += c.errors;
        counted += c.counted;
    }

    // Normalize by the reference's mean cost scale (|x|^2+|y|^2 = 2, |S|^2 = 4).
    let scale = match eq_config.error_function {
        ErrorFunction::Lms => 2.0,
        ErrorFunction::Ssa => 4.0,
    };
    let trace: Vec<f64> = run.error_trace.iter().map(|v| v / scale).collect();
    let tail = &trace[trace.len() - (trace.len() / 4).max(1)..];
    let steady = tail.iter().sum::<f64>() / tail.len() as f64;

    Ok(TrialResult {
        ber: errors as f64 / counted as f64,
        error_count: errors,
        counted_bits: counted,
        converged: steady < CONVERGED_COST,
        residual_offset_hz: post.offset_hz,
        pre_cfe_hz,
        final_taps: run.final_bank,
        error_trace: summarize(&trace, TRACE_POINTS),
        seed,
    })
}

fn summarize(trace: &[f64], points: usize) -> Vec<f64> {
    if trace.is_empty() {
        return Vec::new();
    }
    let chunk = trace.len().div_ceil(points);
    trace
        .chunks(chunk)
        .map(|c| c.iter().sum::<f64>() / c.len() as f64)
        .collect()
}

/// Pooled BER over the configured repetitions.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PooledBer {
    pub ber: f64,
    pub errors: u64,
    pub counted: u64,
}

pub fn measure_ber(config: &ExperimentConfig, point: &TrialPoint) -> Result<PooledBer> {
    let results: Vec<TrialResult> = (0..config.repetitions as u64)
        .into_par_iter()
        .map(|rep| run_trial_at(config, point, rep))
        .collect::<Result<_>>()?;
    let errors = results.iter().map(|r| r.error_count).sum();
    let counted = results.iter().map(|r| r.counted_bits).sum();
    Ok(PooledBer {
        ber: errors as f64 / counted as f64,
        errors,
        counted,
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum RosnrOutcome {
    /// The measured BER crosses the target inside `[low_db, high_db]`:
    /// above the target at `low_db`, at or below it at `high_db`.
    Reached {
        rosnr_db: f64,
        low_db: f64,
        high_db: f64,
        ber_low: f64,
        ber_high: f64,
    },
    /// Target missed even at the top of the bracket.
    Unreachable { osnr_db: f64, ber: f64 },
    /// Target met already at the bottom of the bracket.
    BelowRange { osnr_db: f64, ber: f64 },
}

impl RosnrOutcome {
    pub fn rosnr_db(&self) -> Option<f64> {
        match self {
            RosnrOutcome::Reached { rosnr_db, .. } => Some(*rosnr_db),
            _ => None,
        }
    }
}

/// Bisection on OSNR for the BER target, down to the configured bracket
/// width. All OSNR points share the trials' noise realizations.
pub fn rosnr_search(
    config: &ExperimentConfig,
    variant: crate::config::Variant,
    frequency_offset_hz: f64,
    ber_target: f64,
) -> Result<RosnrOutcome> {
    let rc = &config.rosnr;
    let ber_at = |osnr_db: f64| -> Result<f64> {
        let point = TrialPoint {
            variant,
            frequency_offset_hz,
            osnr_db,
        };
        Ok(measure_ber(config, &point)?.ber)
    };
    let (mut lo, mut hi) = (rc.osnr_low_db, rc.osnr_high_db);
    let mut ber_hi = ber_at(hi)?;
    if ber_hi > ber_target {
        return Ok(RosnrOutcome::Unreachable { osnr_db: hi, ber: ber_hi });
    }
    let mut ber_lo = ber_at(lo)?;
    if ber_lo <= ber_target {
        return Ok(RosnrOutcome::BelowRange { osnr_db: lo, ber: ber_lo });
    }
    while hi - lo > rc.resolution_db {
        let mid = 0.5 * (lo + hi);
        let b = ber_at(mid)?;
        if b > ber_target {
            lo = mid;
            ber_lo = b;
        } else {
            hi = mid;
            ber_hi = b;
        }
    }
    Ok(RosnrOutcome::Reached {
        rosnr_db: 0.5 * (lo + hi),
        low_db: lo,
        high_db: hi,
        ber_low: ber_lo,
        ber_high: ber_hi,
    })
}

/// One row of the sweep CSV.
#[derive(Debug, Clone, PartialEq)]
pub struct SweepRow {
    pub point: TrialPoint,
    pub taps: usize,
    pub normalized_offset: f64,
    pub result: TrialResult,
}

impl SweepRow {
    pub fn to_csv(&self) -> String {
        format!(
            "{},{},{},{},{},{},{},{},{},{}",
            self.point.variant,
            self.taps,
            fmt_e(self.point.frequency_offset_hz),
            fmt_e(self.normalized_offset),
            fmt_e(self.point.osnr_db),
            fmt_e(self.result.ber),
            self.result.error_count,
            self.result.counted_bits,
            self.result.converged,
            self.result.seed,
        )
    }
}

/// Every grid point times every repetition, in grid order.
pub fn sweep_rows(config: &ExperimentConfig) -> Result<Vec<SweepRow>> {
    let jobs: Vec<(TrialPoint, u64)> = config
        .grid()
        .into_iter()
        .flat_map(|p| (0..config.repetitions as u64).map(move |rep| (p, rep)))
        .collect();
    jobs.into_par_iter()
        .map(|(point, rep)| {
            let result = run_trial_at(config, &point, rep)?;
            Ok(SweepRow {
                point,
                taps: config.receiver.fft_size,
                normalized_offset: point.frequency_offset_hz / config.transmitter.symbol_rate,
                result,
            })
        })
        .collect()
}

/// Runs the sweep and writes the CSV. The output path is checked for
/// writability before any trial runs.
pub fn sweep(config: &ExperimentConfig, out: &Path) -> Result<Vec<SweepRow>> {
    let mut writer = CsvWriter::create(out, SWEEP_HEADER)?;
    let rows = sweep_rows(config)?;
    for row in &rows {
        writer.row(&row.to_csv())?;
    }
    writer.finish()?;
    write_metadata(config, out)?;
    Ok(rows)
}

/// Conventions sidecar next to a CSV artifact.
pub fn write_metadata(config: &ExperimentConfig, csv_path: &Path) -> Result<()> {
    let mut path = csv_path.as_os_str().to_owned();
    path.push(".meta");
    let mut f = std::fs::File::create(path)?;
    writeln!(f, "osnr_reference_bandwidth_hz = {}", crate::channel::OSNR_REFERENCE_BANDWIDTH)?;
    writeln!(f, "osnr_convention = \"mode power (both polarizations) / noise power of both polarizations in reference bandwidth\"")?;
    writeln!(f, "normalized_offset = \"frequency_offset_hz / symbol_rate\"")?;
    writeln!(f, "symbol_rate = {}", config.transmitter.symbol_rate)?;
    writeln!(f, "samples_per_symbol = {}", config.transmitter.samples_per_symbol)?;
    writeln!(f, "symbol_count = {}", config.transmitter.symbol_count)?;
    writeln!(f, "ber_skip_symbols = {}", config.receiver.ber_skip_symbols)?;
    writeln!(f, "master_seed = {}", config.seed)?;
    Ok(())
}

/// `log10 |h|` floor for taps that are exactly zero.
const LOG_FLOOR: f64 = -16.0;

/// Time-domain taps of every filter as `log10 |h|`: one row per tap over the
/// constrained `N/2` taps, one column per filter `h_t_q` (output `t`, input
/// `q`, 1-based).
pub fn impulse_response_csv(bank: &FilterBank) -> String {
    let dim = bank.tributaries();
    let half = bank.fft_size() / 2;
    let fft = FftPair::new(bank.fft_size());
    let taps: Vec<Vec<C>> = (0..dim)
        .flat_map(|o| (0..dim).map(move |i| (o, i)))
        .map(|(o, i)| bank.time_domain(&fft, o, i))
        .collect();
    let mut s = String::from("tap");
    for o in 0..dim {
        for i in 0..dim {
            s.push_str(&format!(",h_{}_{}", o + 1, i + 1));
        }
    }
    s.push('\n');
    for k in 0..half {
        s.push_str(&k.to_string());
        for h in &taps {
            let m = h[k].norm();
            let v = if m > 0.0 { m.log10().max(LOG_FLOOR) } else { LOG_FLOOR };
            s.push(',');
            s.push_str(&fmt_e(v));
        }
        s.push('\n');
    }
    s
}

pub fn export_impulse_response(bank: &FilterBank, out: &Path) -> Result<()> {
    std::fs::write(out, impulse_response_csv(bank))?;
    Ok(())
}

/// Aggregate tap power `sum_filters |h[k]|^2` from an impulse-response CSV.
pub fn tap_power_from_csv(csv: &str) -> Result<Vec<f64>> {
    let mut power = Vec::new();
    for line in csv.lines().skip(1) {
        let mut fields = line.split(',');
        fields.next();
        let mut p = 0.0;
        for f in fields {
            let v: f64 = f
                .parse()
                .map_err(|_| Error::Config(format!("bad CSV value {f:?}")))?;
            p += 10f64.powf(2.0 * v);
        }
        power.push(p);
    }
    Ok(power)
}

/// Positions of the two strongest local maxima at least `min_distance`
/// apart, in ascending order.
pub fn two_strongest_peaks(power: &[f64], min_distance: usize) -> Option<(usize, usize)> {
    let first = (0..power.len()).max_by(|&a, &b| power[a].total_cmp(&power[b]))?;
    let second = (0..power.len())
        .filter(|&k| k.abs_diff(first) >= min_distance)
        .filter(|&k| {
            let l = if k > 0 { power[k - 1] } else { f64::MIN };
            let r = power.get(k + 1).copied().unwrap_or(f64::MIN);
            power[k] >= l && power[k] >= r
        })
        .max_by(|&a, &b| power[a].total_cmp(&power[b]))?;
    Some((first.min(second), first.max(second)))
}

/// Per-block pre-equalizer CFE trace of the configured channel as CSV
/// `block_index,offset_hz`.
pub fn cfe_trace_csv(config: &ExperimentConfig, block_len: usize, trial_index: u64) -> Result<String> {
    let seed = trial_seed(config.seed, trial_index);
    let tx = transmit(config, seed)?;
    let model = config.channel_model(&config.base_point(), seed)?;
    let received = apply_channel(&tx.waveform, &model)?;
    let streams: Vec<&[C]> = received.streams().iter().map(|s| s.as_slice()).collect();
    let trace = guided_frequency_trace(&streams, received.sample_rate, block_len, config.receiver.pre_cfe_span_hz)?;
    let mut s = String::from("block_index,offset_hz\n");
    for e in trace {
        s.push_str(&format!("{},{}\n", e.block_index, fmt_e(e.offset_hz)));
    }
    Ok(s)
}
