//! 16-bit PCM RIFF/WAVE encoding and decoding.

use std::path::Path;

use crate::error::{Error, Result};
use crate::synth::AudioBuffer;

const FULL_SCALE: f64 = 32_767.0;
const PCM_FORMAT: u16 = 1;
const BITS_PER_SAMPLE: u16 = 16;

/// Decoded PCM data, one vector per channel.
#[derive(Debug, Clone, PartialEq)]
pub struct WavData {
    pub sample_rate: u32,
    pub channels: Vec<Vec<f64>>,
}

fn quantize(x: f64) -> i16 {
    (x.clamp(-1.0, 1.0) * FULL_SCALE).round() as i16
}

fn dequantize(q: i16) -> f64 {
    (f64::from(q) / FULL_SCALE).max(-1.0)
}

/// Interleaves and encodes channels of equal length.
pub fn encode_wav(channels: &[&[f64]], sample_rate: u32) -> Result<Vec<u8>> {
    let n_channels = channels.len();
    if n_channels == 0 || n_channels > u16::MAX as usize {
        return Err(Error::config(format!("unsupported channel count {n_channels}")));
    }
    let frames = channels[0].len();
    if channels.iter().any(|c| c.len() != frames) {
        return Err(Error::config("channels differ in length"));
    }
    let block_align = n_channels as u16 * BITS_PER_SAMPLE / 8;
    let data_len = u32::try_from(frames * block_align as usize)
        .map_err(|_| Error::config("audio too long for a RIFF file"))?;

    let mut out = Vec::with_capacity(44 + data_len as usize);
    out.extend_from_slice(b"RIFF");
    out.extend_from_slice(&(36 + data_len).to_le_bytes());
    out.extend_from_slice(b"WAVE");
    out.extend_from_slice(b"fmt ");
    out.extend_from_slice(&16u32.to_le_bytes());
    out.extend_from_slice(&PCM_FORMAT.to_le_bytes());
    out.extend_from_slice(&(n_channels as u16).to_le_bytes());
    out.extend_from_slice(&sample_rate.to_le_bytes());
    out.extend_from_slice(&(sample_rate * u32::from(block_align)).to_le_bytes());
    out.extend_from_slice(&block_align.to_le_bytes());
    out.extend_from_slice(&BITS_PER_SAMPLE.to_le_bytes());
    out.extend_from_slice(b"data");
    out.extend_from_slice(&data_len.to_le_bytes());
    for i in 0..frames {
        for ch in channels {
            out.extend_from_slice(&quantize(ch[i]).to_le_bytes());
        }
    }
    Ok(out)
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn err(&self, message: impl Into<String>) -> Error {
        Error::WavParse {
            offset: self.pos as u64,
            message: message.into(),
        }
    }

    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        if self.bytes.len() - self.pos < n {
            return Err(self.err(format!(
                "truncated {what}: need {n} bytes, {} remain",
                self.bytes.len() - self.pos
            )));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u16(&mut self, what: &str) -> Result<u16> {
        let b = self.take(2, what)?;
        Ok(u16::from_le_bytes([b[0], b[1]]))
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        let b = self.take(4, what)?;
        Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]))
    }

    fn tag(&mut self, expected: &[u8; 4]) -> Result<()> {
        let start = self.pos;
        let got = self.take(4, "chunk tag")?;
        if got != expected {
            self.pos = start;
            return Err(self.err(format!(
                "expected {:?}, found {:?}",
                String::from_utf8_lossy(expected),
                String::from_utf8_lossy(got)
            )));
        }
        Ok(())
    }
}

pub fn decode_wav(bytes: &[u8]) -> Result<WavData> {
    let mut r = Reader { bytes, pos: 0 };
    r.tag(b"RIFF")?;
    r.u32("riff size")?;
    r.tag(b"WAVE")?;

    let mut format: Option<(u16, u32)> = None;
    loop {
        let chunk_start = r.pos;
        let id = r.take(4, "chunk tag")?;
        let size = r.u32("chunk size")? as usize;
        match id {
            b"fmt " => {
                let body_start = r.pos;
                if size < 16 {
                    r.pos = chunk_start;
                    return Err(r.err(format!("fmt chunk too small ({size} bytes)")));
                }
                let tag = r.u16("format tag")?;
                let channels = r.u16("channel count")?;
                let rate = r.u32("sample rate")?;
                r.u32("byte rate")?;
                r.u16("block align")?;
                let bits = r.u16("bits per sample")?;
                if tag != PCM_FORMAT || bits != BITS_PER_SAMPLE {
                    r.pos = body_start;
                    return Err(r.err(format!(
                        "only 16-bit integer PCM is supported (format {tag}, {bits} bits)"
                    )));
                }
                if channels == 0 {
                    r.pos = body_start;
                    return Err(r.err("zero channels"));
                }
                r.take(size - 16, "fmt extension")?;
                format = Some((channels, rate));
            }
            b"data" => {
                let (channels, sample_rate) = match format {
                    Some(f) => f,
                    None => {
                        r.pos = chunk_start;
                        return Err(r.err("data chunk before fmt chunk"));
                    }
                };
                let data = r.take(size, "data chunk")?;
                let block = channels as usize * 2;
                if data.len() % block != 0 {
                    return Err(Error::WavParse {
                        offset: (chunk_start + 8 + data.len() - data.len() % block) as u64,
                        message: "data length is not a whole number of frames".into(),
                    });
                }
                let mut out = vec![Vec::with_capacity(data.len() / block); channels as usize];
                for frame in data.chunks_exact(block) {
                    for (ch, s) in out.iter_mut().zip(frame.chunks_exact(2)) {
                        ch.push(dequantize(i16::from_le_bytes([s[0], s[1]])));
                    }
                }
                return Ok(WavData {
                    sample_rate,
                    channels: out,
                });
            }
            _ => {
                r.take(size + size % 2, "chunk body")?;
            }
        }
    }
}

pub fn write_wav(buffer: &AudioBuffer, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let bytes = encode_wav(&[&buffer.samples], buffer.sample_rate)?;
    std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

/// Reads a mono file.
pub fn read_wav(path: impl AsRef<Path>) -> Result<AudioBuffer> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    let mut wav = decode_wav(&bytes)?;
    if wav.channels.len() != 1 {
        return Err(Error::data(format!(
            "{} has {} channels, expected mono",
            path.display(),
            wav.channels.len()
        )));
    }
    Ok(AudioBuffer::new(wav.sample_rate, wav.channels.remove(0)))
}
