//! Baseband signal types, Gray-coded QPSK, the Stokes transform and
//! bit-error counting.
//!
//! Tributaries are stored flat: tributary `2 * v` is the x polarization of
//! mode `v` and tributary `2 * v + 1` its y polarization.

use num_complex::Complex64;
use rand::Rng;

use crate::error::{Error, Result};

/// One complex baseband sample.
pub type ComplexSample = Complex64;

const FRAC_1_SQRT_2: f64 = std::f64::consts::FRAC_1_SQRT_2;

/// Per-mode pairs of complex sample streams sharing one sample clock.
#[derive(Debug, Clone, PartialEq)]
pub struct TributarySet {
    streams: Vec<Vec<ComplexSample>>,
    /// Samples per second.
    pub sample_rate: f64,
    pub samples_per_symbol: usize,
}

impl TributarySet {
    /// Builds a set from `2 * M` equal-length streams ordered
    /// `[x_0, y_0, x_1, y_1, ...]`.
    pub fn new(
        streams: Vec<Vec<ComplexSample>>,
        sample_rate: f64,
        samples_per_symbol: usize,
    ) -> Result<Self> {
        if streams.is_empty() || !streams.len().is_multiple_of(2) {
            return Err(Error::InvalidParameter(format!(
                "need an even, nonzero number of streams, got {}",
                streams.len()
            )));
        }
        let len = streams[0].len();
        if let Some(bad) = streams.iter().find(|s| s.len() != len) {
            return Err(Error::LengthMismatch {
                expected: len,
                actual: bad.len(),
            });
        }
        if samples_per_symbol == 0 {
            return Err(Error::InvalidParameter(
                "samples_per_symbol must be positive".into(),
            ));
        }
        Ok(Self {
            streams,
            sample_rate,
            samples_per_symbol,
        })
    }

    /// All-zero set with `modes` modes of `len` samples each.
    pub fn zeros(modes: usize, len: usize, sample_rate: f64, samples_per_symbol: usize) -> Self {
        Self {
            streams: vec![vec![ComplexSample::default(); len]; 2 * modes],
            sample_rate,
            samples_per_symbol,
        }
    }

    pub fn mode_count(&self) -> usize {
        self.streams.len() / 2
    }

    pub fn tributary_count(&self) -> usize {
        self.streams.len()
    }

    /// Samples per stream.
    pub fn len(&self) -> usize {
        self.streams[0].len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn x(&self, mode: usize) -> &[ComplexSample] {
        &self.streams[2 * mode]
    }

    pub fn y(&self, mode: usize) -> &[ComplexSample] {
        &self.streams[2 * mode + 1]
    }

    pub fn stream(&self, tributary: usize) -> &[ComplexSample] {
        &self.streams[tributary]
    }

    pub fn streams(&self) -> &[Vec<ComplexSample>] {
        &self.streams
    }

    pub fn streams_mut(&mut self) -> &mut [Vec<ComplexSample>] {
        &mut self.streams
    }

    pub fn into_streams(self) -> Vec<Vec<ComplexSample>> {
        self.streams
    }

    /// Sum of `|s|^2` over every sample of every stream.
    pub fn energy(&self) -> f64 {
        self.streams
            .iter()
            .flat_map(|s| s.iter())
            .map(|v| v.norm_sqr())
            .sum()
    }

    /// Applies `f` to every stream.
    pub fn map_streams(mut self, mut f: impl FnMut(&mut Vec<ComplexSample>)) -> Self {
        for s in &mut self.streams {
            f(s);
        }
        self
    }

    /// Rectangular (NRZ) pulse shaping: each sample repeated `factor` times.
    pub fn nrz_upsample(&self, factor: usize) -> Self {
        let streams = self
            .streams
            .iter()
            .map(|s| {
                s.iter()
                    .flat_map(|&v| std::iter::repeat_n(v, factor))
                    .collect()
            })
            .collect();
        Self {
            streams,
            sample_rate: self.sample_rate * factor as f64,
            samples_per_symbol: self.samples_per_symbol * factor,
        }
    }

    /// Circularly advances every stream by `shift` samples (negative delays).
    pub fn rotate_left(&self, shift: usize) -> Self {
        let streams = self
            .streams
            .iter()
            .map(|s| {
                let mut s = s.clone();
                if !s.is_empty() {
                    let k = shift % s.len();
                    s.rotate_left(k);
                }
                s
            })
            .collect();
        Self {
            streams,
            sample_rate: self.sample_rate,
            samples_per_symbol: self.samples_per_symbol,
        }
    }

    /// Appends the first `extra` samples of each stream at its end.
    pub fn extend_cyclic(&self, extra: usize) -> Self {
        let streams = self
            .streams
            .iter()
            .map(|s| {
                let mut out = s.clone();
                out.extend((0..extra).map(|i| s[i % s.len()]));
                out
            })
            .collect();
        Self {
            streams,
            sample_rate: self.sample_rate,
            samples_per_symbol: self.samples_per_symbol,
        }
    }
}

/// Real Stokes vector of a dual-polarization sample.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct StokesVector {
    pub s1: f64,
    pub s2: f64,
    pub s3: f64,
}

impl StokesVector {
    pub fn norm_sqr(&self) -> f64 {
        self.s1 * self.s1 + self.s2 * self.s2 + self.s3 * self.s3
    }
}

impl std::ops::Sub for StokesVector {
    type Output = StokesVector;

    fn sub(self, rhs: Self) -> Self {
        StokesVector {
            s1: self.s1 - rhs.s1,
            s2: self.s2 - rhs.s2,
            s3: self.s3 - rhs.s3,
        }
    }
}

/// Maps a Jones pair onto Stokes space. Common phase on `x` and `y` cancels.
pub fn stokes_transform(x: ComplexSample, y: ComplexSample) -> StokesVector {
    let cross = x * y.conj();
    StokesVector {
        s1: x.norm_sqr() - y.norm_sqr(),
        s2: 2.0 * cross.re,
        s3: 2.0 * cross.im,
    }
}

/// Gray-coded QPSK: first bit selects the sign of I, second the sign of Q,
/// `0` meaning positive. Anchor `[0, 0] -> (1 + j)/sqrt(2)`.
pub fn qpsk_map(b0: u8, b1: u8) -> ComplexSample {
    let re = if b0 == 0 { FRAC_1_SQRT_2 } else { -FRAC_1_SQRT_2 };
    let im = if b1 == 0 { FRAC_1_SQRT_2 } else { -FRAC_1_SQRT_2 };
    ComplexSample::new(re, im)
}

pub fn qpsk_modulate(bits: &[u8]) -> Result<Vec<ComplexSample>> {
    if !bits.len().is_multiple_of(2) {
        return Err(Error::OddBitCount(bits.len()));
    }
    Ok(bits.chunks_exact(2).map(|p| qpsk_map(p[0], p[1])).collect())
}

/// Hard decision. Points on a decision boundary go to the positive side.
pub fn qpsk_slice(symbol: ComplexSample) -> [u8; 2] {
    [u8::from(symbol.re < 0.0), u8::from(symbol.im < 0.0)]
}

/// Nearest constellation point.
pub fn qpsk_decide(symbol: ComplexSample) -> ComplexSample {
    let [b0, b1] = qpsk_slice(symbol);
    qpsk_map(b0, b1)
}

pub fn qpsk_demodulate(symbols: &[ComplexSample]) -> Vec<u8> {
    symbols.iter().flat_map(|&s| qpsk_slice(s)).collect()
}

/// A block of payload bits with their QPSK symbols.
#[derive(Debug, Clone, PartialEq)]
pub struct SymbolFrame {
    pub bits: Vec<u8>,
    pub symbols: Vec<ComplexSample>,
}

impl SymbolFrame {
    pub fn from_bits(bits: Vec<u8>) -> Result<Self> {
        let symbols = qpsk_modulate(&bits)?;
        Ok(Self { bits, symbols })
    }

    /// Pseudo-random frame of `symbol_count` symbols.
    pub fn random<R: Rng + ?Sized>(symbol_count: usize, rng: &mut R) -> Self {
        let bits: Vec<u8> = (0..2 * symbol_count)
            .map(|_| u8::from(rng.random::<bool>()))
            .collect();
        let symbols = qpsk_modulate(&bits).expect("even bit count");
        Self { bits, symbols }
    }

    pub fn len(&self) -> usize {
        self.symbols.len()
    }

    pub fn is_empty(&self) -> bool {
        self.symbols.is_empty()
    }

    /// The frame cyclically delayed by `delay` symbols.
    pub fn delayed(&self, delay: usize) -> SymbolFrame {
        let n = self.symbols.len();
        let mut symbols = self.symbols.clone();
        let mut bits = self.bits.clone();
        if n > 0 {
            symbols.rotate_right(delay % n);
            bits.rotate_right(2 * (delay % n));
        }
        SymbolFrame { bits, symbols }
    }
}

/// Builds `2M` tributaries from one frame: tributary 0 is `base`, tributary
/// `k >= 1` is `base` cyclically delayed by `delays[k - 1]` symbols.
///
/// Returns the symbol-rate set and the per-tributary frames (bits included).
pub fn generate_decorrelated_tributaries(
    base: &SymbolFrame,
    delays: &[usize],
    modes: usize,
    symbol_rate: f64,
) -> Result<(TributarySet, Vec<SymbolFrame>)> {
    if modes == 0 {
        return Err(Error::InvalidParameter("mode count must be >= 1".into()));
    }
    if delays.len() != 2 * modes - 1 {
        return Err(Error::LengthMismatch {
            expected: 2 * modes - 1,
            actual: delays.len(),
        });
    }
    let len = base.len();
    if let Some(&d) = delays.iter().find(|&&d| d >= len) {
        return Err(Error::DelayTooLong { delay: d, len });
    }
    let frames: Vec<SymbolFrame> = std::iter::once(base.clone())
        .chain(delays.iter().map(|&d| base.delayed(d)))
        .collect();
    let streams = frames.iter().map(|f| f.symbols.clone()).collect();
    Ok((TributarySet::new(streams, symbol_rate, 1)?, frames))
}

/// Default decorrelation delays: modes offset by 870 and 1700 symbols (then
/// further multiples of 850), y polarizations a further half frame.
pub fn default_delays(modes: usize, frame_len: usize) -> Vec<usize> {
    let mode_delay = |v: usize| match v {
        0 => 0,
        1 => 870,
        2 => 1700,
        _ => 850 * v,
    };
    let half = frame_len / 2;
    (0..2 * modes)
        .skip(1)
        .map(|t| {
            let d = mode_delay(t / 2) + if t % 2 == 1 { half } else { 0 };
            d % frame_len.max(1)
        })
        .collect()
}

/// Bit error statistics over the counted region.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BerCount {
    pub ber: f64,
    pub errors: u64,
    pub counted: u64,
}

pub fn ber_count(tx_bits: &[u8], rx_bits: &[u8], skip: usize) -> Result<BerCount> {
    if tx_bits.len() != rx_bits.len() {
        return Err(Error::LengthMismatch {
            expected: tx_bits.len(),
            actual: rx_bits.len(),
        });
    }
    if skip >= tx_bits.len() {
        return Err(Error::InvalidParameter(format!(
            "skip {skip} leaves nothing of {} bits",
            tx_bits.len()
        )));
    }
    let errors = tx_bits[skip..]
        .iter()
        .zip(&rx_bits[skip..])
        .filter(|(a, b)| a != b)
        .count() as u64;
    let counted = (tx_bits.len() - skip) as u64;
    Ok(BerCount {
        ber: errors as f64 / counted as f64,
        errors,
        counted,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn c(re: f64, im: f64) -> ComplexSample {
        ComplexSample::new(re, im)
    }

    #[test]
    fn gray_anchor_points() {
        let s = qpsk_modulate(&[0, 0, 1, 1]).unwrap();
        assert!((s[0] - c(FRAC_1_SQRT_2, FRAC_1_SQRT_2)).norm() < 1e-15);
        assert!((s[1] - c(-FRAC_1_SQRT_2, -FRAC_1_SQRT_2)).norm() < 1e-15);
    }

    #[test]
    fn odd_bits_rejected() {
        assert!(matches!(qpsk_modulate(&[0, 1, 1]), Err(Error::OddBitCount(3))));
    }

    #[test]
    fn slicing() {
        assert_eq!(qpsk_slice(c(0.9, 0.8)), [0, 0]);
        assert_eq!(qpsk_slice(c(0.0, 0.0)), [0, 0]);
        assert_eq!(qpsk_slice(c(-0.1, 0.0)), [1, 0]);
        for pattern in [[0u8, 0], [0, 1], [1, 0], [1, 1]] {
            let s = qpsk_modulate(&pattern).unwrap();
            assert_eq!(qpsk_slice(s[0]), pattern);
            assert!((s[0].norm() - 1.0).abs() < 1e-15);
        }
    }

    #[test]
    fn mean_symbol_energy_is_one() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let frame = SymbolFrame::random(1000, &mut rng);
        let e: f64 = frame.symbols.iter().map(|s| s.norm_sqr()).sum::<f64>() / 1000.0;
        assert!((e - 1.0).abs() < 1e-12);
        assert_eq!(frame.bits.len(), 2 * frame.symbols.len());
    }

    #[test]
    fn stokes_examples() {
        let s = stokes_transform(c(1.0, 0.0), c(0.0, 0.0));
        assert_eq!(s, StokesVector { s1: 1.0, s2: 0.0, s3: 0.0 });
        // x y* = j
        let s = stokes_transform(c(FRAC_1_SQRT_2, FRAC_1_SQRT_2), c(FRAC_1_SQRT_2, -FRAC_1_SQRT_2));
        assert!(s.s1.abs() < 1e-15 && s.s2.abs() < 1e-15 && (s.s3 - 2.0).abs() < 1e-15);
    }

    proptest! {
        #[test]
        fn stokes_common_phase_invariance(
            theta in -10.0f64..10.0,
            a in -2.0f64..2.0, b in -2.0f64..2.0, cc in -2.0f64..2.0, d in -2.0f64..2.0,
        ) {
            let (x, y) = (c(a, b), c(cc, d));
            let r = ComplexSample::from_polar(1.0, theta);
            let s0 = stokes_transform(x, y);
            let s1 = stokes_transform(r * x, r * y);
            prop_assert!((s0 - s1).norm_sqr().sqrt() < 1e-12);
            let p = x.norm_sqr() + y.norm_sqr();
            prop_assert!((s0.norm_sqr() - p * p).abs() <= 1e-12 * (p * p).max(1e-300));
        }

        #[test]
        fn qpsk_round_trip(bits in proptest::collection::vec(0u8..2, 0..64usize)) {
            let bits = if bits.len() % 2 == 1 { bits[..bits.len() - 1].to_vec() } else { bits };
            let syms = qpsk_modulate(&bits).unwrap();
            prop_assert_eq!(qpsk_demodulate(&syms), bits);
        }
    }

    #[test]
    fn identity_decorrelation() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let base = SymbolFrame::random(64, &mut rng);
        let (set, _) = generate_decorrelated_tributaries(&base, &[0], 1, 1.0).unwrap();
        assert_eq!(set.x(0), &base.symbols[..]);
        assert_eq!(set.y(0), &base.symbols[..]);
    }

    #[test]
    fn decorrelation_delays_and_correlation_peak() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let len = 4096;
        let base = SymbolFrame::random(len, &mut rng);
        let delays = [870, 1700, 2000, 2500, 3100];
        let (set, frames) = generate_decorrelated_tributaries(&base, &delays, 3, 34e9).unwrap();
        for (k, &d) in delays.iter().enumerate() {
            let t = set.stream(k + 1);
            for n in 0..len {
                assert_eq!(t[n], base.symbols[(n + len - d) % len]);
            }
            assert_eq!(frames[k + 1].symbols, t);
        }
        // Brute-force circular correlation of tributaries 0 and 1 over all lags.
        let (a, b) = (set.stream(0), set.stream(1));
        let corr = |lag: usize| -> f64 {
            (0..len)
                .map(|n| b[(n + lag) % len] * a[n].conj())
                .sum::<ComplexSample>()
                .norm()
                / len as f64
        };
        let best = (0..len)
            .max_by(|&i, &j| corr(i).partial_cmp(&corr(j)).unwrap())
            .unwrap();
        assert_eq!(best, delays[0]);
        assert!(corr(0) < 3.0 / (len as f64).sqrt());
    }

    #[test]
    fn decorrelation_rejects_long_delay() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let base = SymbolFrame::random(16, &mut rng);
        assert!(matches!(
            generate_decorrelated_tributaries(&base, &[16], 1, 1.0),
            Err(Error::DelayTooLong { .. })
        ));
    }

    #[test]
    fn ber_examples() {
        let a = [0u8, 1, 1, 0, 0, 1, 0, 1];
        assert_eq!(ber_count(&a, &a, 0).unwrap().ber, 0.0);
        let inv: Vec<u8> = a.iter().map(|b| 1 - b).collect();
        assert_eq!(ber_count(&a, &inv, 0).unwrap().ber, 1.0);
        let mut one = a;
        one[3] ^= 1;
        let r = ber_count(&a, &one, 0).unwrap();
        assert_eq!(r.ber, 0.125);
        assert_eq!(r.errors, 1);
        assert!(matches!(ber_count(&a, &a[..7], 0), Err(Error::LengthMismatch { .. })));
    }

    #[test]
    fn default_delays_shape() {
        let d = default_delays(3, 1 << 17);
        assert_eq!(d.len(), 5);
        assert_eq!(d[1], 870);
        assert_eq!(d[3], 1700);
        assert_eq!(default_delays(1, 100), vec![50]);
    }
}
