//! Raw waveform capture files.
//!
//! Layout: 16-byte header (`SDMQ`, version u32, channel count u32, sample
//! rate in MSa/s as f32), then little-endian f32 I/Q pairs with channels
//! interleaved per sample frame. All header integers are little-endian.

use std::io::{Read, Write};

use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::signal::TributarySet;

pub const MAGIC: &[u8; 4] = b"SDMQ";
pub const VERSION: u32 = 1;
const HEADER_LEN: usize = 16;

pub fn write_capture<W: Write>(out: &mut W, signal: &TributarySet) -> Result<()> {
    let channels = signal.tributary_count();
    let mut buf = Vec::with_capacity(HEADER_LEN + channels * signal.len() * 8);
    buf.extend_from_slice(MAGIC);
    buf.extend_from_slice(&VERSION.to_le_bytes());
    buf.extend_from_slice(&(channels as u32).to_le_bytes());
    buf.extend_from_slice(&((signal.sample_rate / 1e6) as f32).to_le_bytes());
    for n in 0..signal.len() {
        for s in signal.streams() {
            buf.extend_from_slice(&(s[n].re as f32).to_le_bytes());
            buf.extend_from_slice(&(s[n].im as f32).to_le_bytes());
        }
    }
    out.write_all(&buf)?;
    Ok(())
}

/// Reads a capture. The file carries no oversampling factor, so the caller
/// supplies it.
pub fn read_capture<R: Read>(input: &mut R, samples_per_symbol: usize) -> Result<TributarySet> {
    let mut bytes = Vec::new();
    input.read_to_end(&mut bytes)?;
    if bytes.len() < HEADER_LEN {
        return Err(Error::Capture("truncated header".into()));
    }
    if &bytes[..4] != MAGIC {
        return Err(Error::Capture("bad magic".into()));
    }
    let word = |i: usize| u32::from_le_bytes(bytes[i..i + 4].try_into().unwrap());
    let version = word(4);
    if version != VERSION {
        return Err(Error::Capture(format!("unsupported version {version}")));
    }
    let channels = word(8) as usize;
    if channels == 0 || !channels.is_multiple_of(2) {
        return Err(Error::Capture(format!("channel count {channels} is not a positive even number")));
    }
    let rate = f32::from_le_bytes(bytes[12..16].try_into().unwrap()) as f64 * 1e6;
    let body = &bytes[HEADER_LEN..];
    let frame = channels * 8;
    if body.len() % frame != 0 {
        return Err(Error::Capture(format!(
            "payload of {} bytes is not a whole number of {channels}-channel frames",
            body.len()
        )));
    }
    let len = body.len() / frame;
    let mut streams = vec![Vec::with_capacity(len); channels];
    let float = |i: usize| f32::from_le_bytes(body[i..i + 4].try_into().unwrap()) as f64;
    for n in 0..len {
        for (c, s) in streams.iter_mut().enumerate() {
            let at = n * frame + c * 8;
            s.push(Complex64::new(float(at), float(at + 4)));
        }
    }
    TributarySet::new(streams, rate, samples_per_symbol)
}
