//! Block frequency-domain overlap-save MIMO equalizer with LMS and
//! Stokes-space (SSA) error functions and optional in-loop carrier phase
//! estimation (L-CPE).
//!
//! Every filter has `N` frequency-domain coefficients whose time-domain
//! counterpart is confined to the first `N/2` taps. A block of `N/2` new
//! samples per tributary is concatenated with the previous block,
//! transformed, multiplied through the `2M x 2M` filter bank, and the last
//! `N/2` samples of the inverse transform are kept. Filters are adapted once
//! per block with the gradient constrained back onto `N/2` taps, which makes
//! the update identical to time-domain block gradient descent.
//!
//! Tributary `2v` is the x polarization of mode `v`, `2v + 1` its y
//! polarization; filter `(out, in)` maps input tributary `in` onto output
//! tributary `out`.

use std::f64::consts::PI;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fft::FftPair;
use crate::signal::{qpsk_decide, stokes_transform, TributarySet};

type C = Complex64;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ErrorFunction {
    Lms,
    Ssa,
}

impl std::fmt::Display for ErrorFunction {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            ErrorFunction::Lms => "lms",
            ErrorFunction::Ssa => "ssa",
        })
    }
}

/// What drives adaptation once the training symbols run out.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum AfterTraining {
    Freeze,
    DecisionDirected,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EqualizerConfig {
    pub mode_count: usize,
    /// FFT length `N`; filters span `N/2` time-domain taps.
    pub fft_size: usize,
    pub step_size: f64,
    pub error_function: ErrorFunction,
    pub l_cpe_enabled: bool,
    /// Reference-aided symbols; `None` trains over the whole input.
    pub training_length: Option<usize>,
    pub operation_after_training: AfterTraining,
    /// Keep a copy of the bank every this many blocks (0 disables).
    pub snapshot_every: usize,
}

impl EqualizerConfig {
    pub fn new(mode_count: usize, fft_size: usize, error_function: ErrorFunction) -> Self {
        Self {
            mode_count,
            fft_size,
            step_size: default_step_size(error_function, fft_size),
            error_function,
            l_cpe_enabled: false,
            training_length: None,
            operation_after_training: AfterTraining::Freeze,
            snapshot_every: 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.mode_count == 0 {
            return Err(Error::InvalidParameter("mode count must be >= 1".into()));
        }
        if self.fft_size < 4 || !self.fft_size.is_power_of_two() {
            return Err(Error::InvalidParameter(format!(
                "fft size {} must be a power of two >= 4",
                self.fft_size
            )));
        }
        if !(self.step_size > 0.0) || !self.step_size.is_finite() {
            return Err(Error::InvalidParameter("step size must be positive".into()));
        }
        Ok(())
    }

    pub fn tributaries(&self) -> usize {
        2 * self.mode_count
    }

    /// Output delay of a freshly initialized bank, in samples.
    pub fn initial_delay(&self) -> usize {
        self.fft_size / 4
    }
}

/// Tuned default step sizes (unit-power inputs, 2 samples/symbol).
pub fn default_step_size(error_function: ErrorFunction, fft_size: usize) -> f64 {
    let base = match error_function {
        ErrorFunction::Lms => 2e-3,
        ErrorFunction::Ssa => 2.5e-4,
    };
    // Block updates sum N/4 symbol errors.
    base * 64.0 / fft_size as f64
}

/// `2M x 2M` frequency-domain filters, each of length `N`.
#[derive(Debug, Clone, PartialEq)]
pub struct FilterBank {
    tributaries: usize,
    fft_size: usize,
    coefficients: Vec<Vec<C>>,
}

impl FilterBank {
    pub fn zeros(mode_count: usize, fft_size: usize) -> Self {
        let tributaries = 2 * mode_count;
        Self {
            tributaries,
            fft_size,
            coefficients: vec![vec![C::default(); fft_size]; tributaries * tributaries],
        }
    }

    /// Diagonal unit impulses at tap `N/4`, cross filters zero.
    pub fn init(config: &EqualizerConfig) -> Self {
        let n = config.fft_size;
        let mut bank = Self::zeros(config.mode_count, n);
        let spike: Vec<C> = (0..n)
            .map(|k| C::from_polar(1.0, -2.0 * PI * (k * (n / 4)) as f64 / n as f64))
            .collect();
        for t in 0..bank.tributaries {
            bank.coefficients[t * bank.tributaries + t] = spike.clone();
        }
        bank
    }

    /// Builds a bank from time-domain taps, `taps[out][in]` of length at most
    /// `N/2`.
    pub fn from_time_domain(fft: &FftPair, taps: &[Vec<Vec<C>>]) -> Result<Self> {
        let n = fft.len();
        let dim = taps.len();
        let mut coefficients = Vec::with_capacity(dim * dim);
        for row in taps {
            if row.len() != dim {
                return Err(Error::DimensionMismatch { expected: dim, actual: row.len() });
            }
            for h in row {
                if h.len() > n / 2 {
                    return Err(Error::LengthMismatch { expected: n / 2, actual: h.len() });
                }
                let mut buf = vec![C::default(); n];
                buf[..h.len()].copy_from_slice(h);
                fft.forward(&mut buf);
                coefficients.push(buf);
            }
        }
        Ok(Self {
            tributaries: dim,
            fft_size: n,
            coefficients,
        })
    }

    pub fn tributaries(&self) -> usize {
        self.tributaries
    }

    pub fn mode_count(&self) -> usize {
        self.tributaries / 2
    }

    pub fn fft_size(&self) -> usize {
        self.fft_size
    }

    pub fn filter(&self, out: usize, input: usize) -> &[C] {
        &self.coefficients[out * self.tributaries + input]
    }

    pub fn filter_mut(&mut self, out: usize, input: usize) -> &mut [C] {
        &mut self.coefficients[out * self.tributaries + input]
    }

    /// Inverse transform of filter `(out, in)`, all `N` taps.
    pub fn time_domain(&self, fft: &FftPair, out: usize, input: usize) -> Vec<C> {
        let mut buf = self.filter(out, input).to_vec();
        fft.inverse(&mut buf);
        buf
    }

    /// Largest magnitude found in the last `N/2` time-domain taps.
    pub fn constraint_error(&self, fft: &FftPair) -> f64 {
        let half = self.fft_size / 2;
        (0..self.tributaries)
            .flat_map(|o| (0..self.tributaries).map(move |i| (o, i)))
            .map(|(o, i)| {
                self.time_domain(fft, o, i)[half..]
                    .iter()
                    .map(|v| v.norm())
                    .fold(0.0, f64::max)
            })
            .fold(0.0, f64::max)
    }
}

/// Previous input block and the cached spectra of the latest window.
#[derive(Debug, Clone, PartialEq)]
pub struct BlockState {
    pub previous_input_block: Vec<Vec<C>>,
    pub block_index: usize,
    pub input_spectra: Vec<Vec<C>>,
}

impl BlockState {
    pub fn new(tributaries: usize, fft_size: usize) -> Self {
        Self {
            previous_input_block: vec![vec![C::default(); fft_size / 2]; tributaries],
            block_index: 0,
            input_spectra: vec![vec![C::default(); fft_size]; tributaries],
        }
    }
}

/// Overlap-save filtering of one block of `N/2` new samples per tributary.
/// Returns the `N/2` output samples per tributary and advances `state`.
pub fn equalize_block(
    fft: &FftPair,
    state: &mut BlockState,
    bank: &FilterBank,
    new_block: &[Vec<C>],
) -> Result<Vec<Vec<C>>> {
    let n = bank.fft_size;
    let half = n / 2;
    let dim = bank.tributaries;
    if fft.len() != n {
        return Err(Error::LengthMismatch { expected: n, actual: fft.len() });
    }
    if new_block.len() != dim || state.previous_input_block.len() != dim {
        return Err(Error::DimensionMismatch { expected: dim, actual: new_block.len() });
    }
    if let Some(b) = new_block.iter().find(|b| b.len() != half) {
        return Err(Error::LengthMismatch { expected: half, actual: b.len() });
    }
    for t in 0..dim {
        let spec = &mut state.input_spectra[t];
        spec[..half].copy_from_slice(&state.previous_input_block[t]);
        spec[half..].copy_from_slice(&new_block[t]);
        fft.forward(spec);
        state.previous_input_block[t].copy_from_slice(&new_block[t]);
    }
    state.block_index += 1;
    let mut outputs = Vec::with_capacity(dim);
    let mut acc = vec![C::default(); n];
    for out in 0..dim {
        acc.iter_mut().for_each(|v| *v = C::default());
        for input in 0..dim {
            let h = bank.filter(out, input);
            for ((a, x), h) in acc.iter_mut().zip(&state.input_spectra[input]).zip(h) {
                *a += x * h;
            }
        }
        fft.inverse(&mut acc);
        outputs.push(acc[half..].to_vec());
    }
    Ok(outputs)
}

/// Per-tributary error coefficients: `c1` of mode `v` at tributary `2v`,
/// `c2` at `2v + 1`.
#[derive(Debug, Clone, PartialEq)]
pub struct ErrorCoefficients {
    pub coefficients: Vec<Vec<C>>,
}

impl ErrorCoefficients {
    pub fn c1(&self, mode: usize) -> &[C] {
        &self.coefficients[2 * mode]
    }

    pub fn c2(&self, mode: usize) -> &[C] {
        &self.coefficients[2 * mode + 1]
    }
}

fn check_pairs(received: &[Vec<C>], expected: &[Vec<C>]) -> Result<()> {
    if received.len() != expected.len() || !received.len().is_multiple_of(2) {
        return Err(Error::DimensionMismatch {
            expected: expected.len(),
            actual: received.len(),
        });
    }
    for (r, e) in received.iter().zip(expected) {
        if r.len() != e.len() {
            return Err(Error::LengthMismatch { expected: e.len(), actual: r.len() });
        }
    }
    Ok(())
}

/// `C1 = 2 (x_rx - x_exp)`, `C2 = 2 (y_rx - y_exp)`: the gradient of the
/// squared Euclidean error with respect to the real and imaginary parts of
/// the taps is `C * conj(input)`.
pub fn lms_error_coefficients(received: &[Vec<C>], expected: &[Vec<C>]) -> Result<ErrorCoefficients> {
    check_pairs(received, expected)?;
    let coefficients = received
        .iter()
        .zip(expected)
        .map(|(r, e)| r.iter().zip(e).map(|(a, b)| 2.0 * (a - b)).collect())
        .collect();
    Ok(ErrorCoefficients { coefficients })
}

/// Stokes-space error coefficients for `sum_k (S_rx,k - S_exp,k)^2`.
pub fn ssa_error_coefficients(received: &[Vec<C>], expected: &[Vec<C>]) -> Result<ErrorCoefficients> {
    check_pairs(received, expected)?;
    let mut coefficients = Vec::with_capacity(received.len());
    for v in 0..received.len() / 2 {
        let (xr, yr) = (&received[2 * v], &received[2 * v + 1]);
        let (xe, ye) = (&expected[2 * v], &expected[2 * v + 1]);
        let mut c1 = Vec::with_capacity(xr.len());
        let mut c2 = Vec::with_capacity(xr.len());
        for n in 0..xr.len() {
            let d = stokes_transform(xr[n], yr[n]) - stokes_transform(xe[n], ye[n]);
            let d23 = C::new(d.s2, d.s3);
            c1.push(4.0 * (d.s1 * xr[n] + d23 * yr[n]));
            c2.push(4.0 * (d23.conj() * xr[n] - d.s1 * yr[n]));
        }
        coefficients.push(c1);
        coefficients.push(c2);
    }
    Ok(ErrorCoefficients { coefficients })
}

/// In-loop phase estimate: one phase per tributary per block.
#[derive(Debug, Clone, PartialEq)]
pub struct PhaseEstimate {
    pub phases: Vec<f64>,
    /// Set where the correlation sum vanished and the phase defaulted to 0.
    pub degenerate: Vec<bool>,
}

impl PhaseEstimate {
    pub fn phi1(&self, mode: usize) -> f64 {
        self.phases[2 * mode]
    }

    pub fn phi2(&self, mode: usize) -> f64 {
        self.phases[2 * mode + 1]
    }

    pub fn rotators(&self) -> Vec<C> {
        self.phases.iter().map(|&p| C::from_polar(1.0, -p)).collect()
    }
}

/// `phi = arg(sum_n rx(n) conj(exp(n)))` per tributary.
pub fn l_cpe_phase(received: &[Vec<C>], expected: &[Vec<C>]) -> Result<PhaseEstimate> {
    check_pairs(received, expected)?;
    if received.iter().any(|r| r.is_empty()) {
        return Err(Error::TooShort { needed: 1, actual: 0 });
    }
    let mut phases = Vec::with_capacity(received.len());
    let mut degenerate = Vec::with_capacity(received.len());
    for (r, e) in received.iter().zip(expected) {
        let corr: C = r.iter().zip(e).map(|(a, b)| a * b.conj()).sum();
        if corr.norm() == 0.0 {
            phases.push(0.0);
            degenerate.push(true);
        } else {
            // atan2 lands in [-pi, pi]; fold -pi onto pi.
            let p = corr.arg();
            phases.push(if p <= -PI { PI } else { p });
            degenerate.push(false);
        }
    }
    Ok(PhaseEstimate { phases, degenerate })
}

/// One constrained gradient step: for each filter, the gradient spectrum is
/// the transformed `[0; N/2] ++ C_out` times the conjugate input spectrum,
/// projected back onto the first `N/2` taps.
pub fn update_filters(
    fft: &FftPair,
    bank: &mut FilterBank,
    state: &BlockState,
    errors: &ErrorCoefficients,
    step_size: f64,
) -> Result<()> {
    let n = bank.fft_size;
    let half = n / 2;
    let dim = bank.tributaries;
    if errors.coefficients.len() != dim {
        return Err(Error::DimensionMismatch {
            expected: dim,
            actual: errors.coefficients.len(),
        });
    }
    if let Some(e) = errors.coefficients.iter().find(|e| e.len() != half) {
        return Err(Error::LengthMismatch { expected: half, actual: e.len() });
    }
    if step_size == 0.0 {
        return Ok(());
    }
    let mut err_spec = vec![C::default(); n];
    let mut grad = vec![C::default(); n];
    for out in 0..dim {
        let e = &errors.coefficients[out];
        if e.iter().all(|v| *v == C::default()) {
            continue;
        }
        err_spec[..half].iter_mut().for_each(|v| *v = C::default());
        err_spec[half..].copy_from_slice(e);
        fft.forward(&mut err_spec);
        for input in 0..dim {
            for ((g, e), x) in grad.iter_mut().zip(&err_spec).zip(&state.input_spectra[input]) {
                *g = e * x.conj();
            }
            fft.inverse(&mut grad);
            grad[half..].iter_mut().for_each(|v| *v = C::default());
            fft.forward(&mut grad);
            for (h, g) in bank.filter_mut(out, input).iter_mut().zip(&grad) {
                *h -= step_size * g;
            }
        }
    }
    Ok(())
}

/// Result of a full equalizer pass.
#[derive(Debug, Clone)]
pub struct EqualizerRun {
    /// Symbol-spaced output aligned with the reference index.
    pub output: TributarySet,
    pub final_bank: FilterBank,
    pub tap_history: Vec<FilterBank>,
    /// Per-block mean cost over the symbols that drove the update
    /// (Euclidean for LMS, Stokes for SSA).
    pub error_trace: Vec<f64>,
}

/// Common-phase estimate of a mode from the 4th power of both tributaries.
fn blind_pair_phase(x: &[C], y: &[C]) -> f64 {
    let s: C = x.iter().chain(y).map(|v| v.powi(4)).sum();
    // QPSK^4 = -1, so the modulation-free phase sits at arg(-s)/4.
    (-s).arg() / 4.0
}

/// Runs the block loop over `input` (at `samples_per_symbol`) against
/// `reference` (one sample per symbol). Output symbol `j` is taken at input
/// sample `N/4 + j * sps`, the position a fresh bank maps symbol `j` to.
pub fn run_equalizer(
    input: &TributarySet,
    reference: &TributarySet,
    config: &EqualizerConfig,
) -> Result<EqualizerRun> {
    config.validate()?;
    let dim = config.tributaries();
    if input.tributary_count() != dim || reference.tributary_count() != dim {
        return Err(Error::DimensionMismatch {
            expected: dim,
            actual: input.tributary_count(),
        });
    }
    let n = config.fft_size;
    let half = n / 2;
    if input.len() < half {
        return Err(Error::TooShort { needed: half, actual: input.len() });
    }
    let sps = input.samples_per_symbol;
    let delay = config.initial_delay();
    let symbol_count = if input.len() > delay { (input.len() - 1 - delay) / sps + 1 } else { 0 };
    let training = config.training_length.unwrap_or(usize::MAX);

    let fft = FftPair::new(n);
    let mut bank = FilterBank::init(config);
    let mut state = BlockState::new(dim, n);
    let mut output = vec![vec![C::default(); symbol_count]; dim];
    let mut tap_history = Vec::new();
    let mut error_trace = Vec::new();
    let block_count = input.len().div_ceil(half);
    let mut block = vec![vec![C::default(); half]; dim];

    for b in 0..block_count {
        let start = b * half;
        for t in 0..dim {
            let src = input.stream(t);
            for i in 0..half {
                block[t][i] = src.get(start + i).copied().unwrap_or_default();
            }
        }
        let mut out = equalize_block(&fft, &mut state, &bank, &block)?;

        // Symbol positions inside this block: (offset in block, symbol index).
        let positions: Vec<(usize, usize)> = (0..half)
            .filter_map(|i| {
                let k = start + i;
                (k >= delay && (k - delay).is_multiple_of(sps) && k < input.len())
                    .then(|| (i, (k - delay) / sps))
            })
            .collect();
        if positions.is_empty() {
            continue;
        }
        let received: Vec<Vec<C>> = out
            .iter()
            .map(|o| positions.iter().map(|&(i, _)| o[i]).collect())
            .collect();

        // Expected symbols, or None where nothing drives adaptation.
        let in_training = |j: usize| j < training && j < reference.len();
        let trained: Vec<bool> = positions.iter().map(|&(_, j)| in_training(j)).collect();
        let dd = config.operation_after_training == AfterTraining::DecisionDirected;
        let active: Vec<bool> = trained.iter().map(|&t| t || dd).collect();

        let mut expected: Vec<Vec<C>> = (0..dim)
            .map(|t| {
                positions
                    .iter()
                    .map(|&(_, j)| reference.stream(t).get(j).copied().unwrap_or_default())
                    .collect()
            })
            .collect();
        if dd && trained.iter().any(|t| !t) {
            let decisions = decide_block(&received, config);
            for t in 0..dim {
                for (p, tr) in trained.iter().enumerate() {
                    if !tr {
                        expected[t][p] = decisions[t][p];
                    }
                }
            }
        }

        // L-CPE rotates the block before the error is formed.
        let mut rotated = received.clone();
        let mut back_rotation = vec![C::new(1.0, 0.0); dim];
        if config.l_cpe_enabled {
            let pick = |v: &Vec<C>| -> Vec<C> {
                v.iter().zip(&active).filter(|(_, a)| **a).map(|(s, _)| *s).collect()
            };
            let rx: Vec<Vec<C>> = received.iter().map(pick).collect();
            let ex: Vec<Vec<C>> = expected.iter().map(pick).collect();
            if rx[0].is_empty() {
                // Frozen: keep the decision-free output unrotated.
            } else {
                let est = l_cpe_phase(&rx, &ex)?;
                for (t, rot) in est.rotators().into_iter().enumerate() {
                    rotated[t].iter_mut().for_each(|v| *v *= rot);
                    out[t].iter_mut().for_each(|v| *v *= rot);
                    back_rotation[t] = rot.conj();
                }
            }
        }
        for (t, o) in output.iter_mut().enumerate() {
            for (p, &(_, j)) in positions.iter().enumerate() {
                o[j] = rotated[t][p];
            }
        }

        if !active.iter().any(|&a| a) {
            continue;
        }
        // Inactive positions contribute nothing.
        let mut exp_active = expected.clone();
        for t in 0..dim {
            for (p, &a) in active.iter().enumerate() {
                if !a {
                    exp_active[t][p] = rotated[t][p];
                }
            }
        }
        let coeffs = match config.error_function {
            ErrorFunction::Lms => lms_error_coefficients(&rotated, &exp_active)?,
            ErrorFunction::Ssa => ssa_error_coefficients(&rotated, &exp_active)?,
        };
        error_trace.push(block_cost(config.error_function, &rotated, &exp_active, &active));

        let mut full = vec![vec![C::default(); half]; dim];
        for t in 0..dim {
            for (p, &(i, _)) in positions.iter().enumerate() {
                full[t][i] = coeffs.coefficients[t][p] * back_rotation[t];
            }
        }
        update_filters(
            &fft,
            &mut bank,
            &state,
            &ErrorCoefficients { coefficients: full },
            config.step_size,
        )?;
        if config.snapshot_every > 0 && (b + 1) % config.snapshot_every == 0 {
            tap_history.push(bank.clone());
        }
    }

    Ok(EqualizerRun {
        output: TributarySet::new(output, input.sample_rate / sps as f64, 1)?,
        final_bank: bank,
        tap_history,
        error_trace,
    })
}

fn decide_block(received: &[Vec<C>], config: &EqualizerConfig) -> Vec<Vec<C>> {
    let dim = received.len();
    let derotate = config.error_function == ErrorFunction::Ssa || config.l_cpe_enabled;
    let mut decisions = Vec::with_capacity(dim);
    for v in 0..dim / 2 {
        let (x, y) = (&received[2 * v], &received[2 * v + 1]);
        let rot = if derotate {
            C::from_polar(1.0, -blind_pair_phase(x, y))
        } else {
            C::new(1.0, 0.0)
        };
        // Stokes and the L-CPE phase are blind to a common rotation, so the
        // decisions stay in the derotated frame only for SSA.
        let back = if config.error_function == ErrorFunction::Ssa { C::new(1.0, 0.0) } else { rot.conj() };
        decisions.push(x.iter().map(|&s| qpsk_decide(s * rot) * back).collect());
        decisions.push(y.iter().map(|&s| qpsk_decide(s * rot) * back).collect());
    }
    decisions
}

fn block_cost(function: ErrorFunction, rx: &[Vec<C>], ex: &[Vec<C>], active: &[bool]) -> f64 {
    let count = active.iter().filter(|&&a| a).count().max(1) as f64;
    let mut total = 0.0;
    for v in 0..rx.len() / 2 {
        for (p, &a) in active.iter().enumerate() {
            if !a {
                continue;
            }
            total += match function {
                ErrorFunction::Lms => {
                    (rx[2 * v][p] - ex[2 * v][p]).norm_sqr()
                        + (rx[2 * v + 1][p] - ex[2 * v + 1][p]).norm_sqr()
                }
                ErrorFunction::Ssa => (stokes_transform(rx[2 * v][p], rx[2 * v + 1][p])
                    - stokes_transform(ex[2 * v][p], ex[2 * v + 1][p]))
                .norm_sqr(),
            };
        }
    }
    total / (count * (rx.len() / 2) as f64)
}
