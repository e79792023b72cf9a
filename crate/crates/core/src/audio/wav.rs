//! RIFF/WAVE reading and writing for 16-bit PCM and 32-bit IEEE float.

use std::fs;
use std::path::Path;

use super::Waveform;
use crate::error::{Error, Result};
use crate::scalar::Scalar;

const FORMAT_PCM: u16 = 1;
const FORMAT_FLOAT: u16 = 3;
const FORMAT_EXTENSIBLE: u16 = 0xFFFE;

/// On-disk sample encoding.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SampleFormat {
    Pcm16,
    Float32,
}

impl SampleFormat {
    fn bits(self) -> u16 {
        match self {
            SampleFormat::Pcm16 => 16,
            SampleFormat::Float32 => 32,
        }
    }

    fn tag(self) -> u16 {
        match self {
            SampleFormat::Pcm16 => FORMAT_PCM,
            SampleFormat::Float32 => FORMAT_FLOAT,
        }
    }
}

fn le_u16(b: &[u8], at: usize) -> u16 {
    u16::from_le_bytes([b[at], b[at + 1]])
}

fn le_u32(b: &[u8], at: usize) -> u32 {
    u32::from_le_bytes([b[at], b[at + 1], b[at + 2], b[at + 3]])
}

struct FmtChunk {
    format: SampleFormat,
    channels: u16,
    sample_rate: u32,
}

fn parse_fmt(body: &[u8]) -> Result<FmtChunk> {
    if body.len() < 16 {
        return Err(Error::CorruptHeader(format!("fmt chunk of {} bytes", body.len())));
    }
    let mut tag = le_u16(body, 0);
    let channels = le_u16(body, 2);
    let sample_rate = le_u32(body, 4);
    let block_align = le_u16(body, 12);
    let bits = le_u16(body, 14);
    if tag == FORMAT_EXTENSIBLE {
        if body.len() < 40 {
            return Err(Error::CorruptHeader("truncated WAVE_FORMAT_EXTENSIBLE".into()));
        }
        // first two bytes of the sub-format GUID carry the format tag
        tag = le_u16(body, 24);
    }
    let format = match (tag, bits) {
        (FORMAT_PCM, 16) => SampleFormat::Pcm16,
        (FORMAT_FLOAT, 32) => SampleFormat::Float32,
        (FORMAT_PCM, b) => return Err(Error::UnsupportedFormat(format!("{b}-bit PCM"))),
        (FORMAT_FLOAT, b) => return Err(Error::UnsupportedFormat(format!("{b}-bit float"))),
        (t, _) => return Err(Error::UnsupportedFormat(format!("format tag {t:#06x}"))),
    };
    if !(1..=2).contains(&channels) {
        return Err(Error::UnsupportedFormat(format!("{channels} channels")));
    }
    if sample_rate == 0 {
        return Err(Error::CorruptHeader("zero sample rate".into()));
    }
    if block_align != channels * bits / 8 {
        return Err(Error::CorruptHeader(format!("block align {block_align}")));
    }
    Ok(FmtChunk { format, channels, sample_rate })
}

/// Decodes an in-memory WAV file.
pub fn read_wav<T: Scalar>(bytes: &[u8]) -> Result<Waveform<T>> {
    if bytes.len() < 12 || &bytes[0..4] != b"RIFF" || &bytes[8..12] != b"WAVE" {
        return Err(Error::UnsupportedFormat("not a RIFF/WAVE file".into()));
    }
    let riff_len = le_u32(bytes, 4) as usize;
    if riff_len + 8 > bytes.len() || riff_len < 4 {
        return Err(Error::CorruptHeader(format!(
            "RIFF size {riff_len} exceeds file size {}",
            bytes.len()
        )));
    }
    let end = riff_len + 8;
    let mut fmt = None;
    let mut data: Option<&[u8]> = None;
    let mut pos = 12;
    while pos + 8 <= end {
        let id = &bytes[pos..pos + 4];
        let size = le_u32(bytes, pos + 4) as usize;
        let body_start = pos + 8;
        let body_end = body_start
            .checked_add(size)
            .filter(|&e| e <= end)
            .ok_or_else(|| Error::CorruptHeader(format!("chunk size {size} overruns file")))?;
        match id {
            b"fmt " => fmt = Some(parse_fmt(&bytes[body_start..body_end])?),
            b"data" => data = Some(&bytes[body_start..body_end]),
            _ => {}
        }
        // chunks are word aligned
        pos = body_end + (size & 1);
    }
    let fmt = fmt.ok_or_else(|| Error::CorruptHeader("missing fmt chunk".into()))?;
    let data = data.ok_or_else(|| Error::CorruptHeader("missing data chunk".into()))?;
    let frame_bytes = fmt.channels as usize * fmt.format.bits() as usize / 8;
    if data.len() % frame_bytes != 0 {
        return Err(Error::CorruptHeader(format!(
            "data length {} not a multiple of frame size {frame_bytes}",
            data.len()
        )));
    }
    let frames = data.len() / frame_bytes;
    if frames == 0 {
        return Err(Error::EmptyAudio);
    }
    let nch = fmt.channels as usize;
    let mut channels = vec![Vec::with_capacity(frames); nch];
    match fmt.format {
        SampleFormat::Pcm16 => {
            let scale = T::lit(1.0 / 32768.0);
            for (i, chunk) in data.chunks_exact(2).enumerate() {
                let v = i16::from_le_bytes([chunk[0], chunk[1]]);
                channels[i % nch].push(T::lit(v as f64) * scale);
            }
        }
        SampleFormat::Float32 => {
            for (i, chunk) in data.chunks_exact(4).enumerate() {
                let v = f32::from_le_bytes([chunk[0], chunk[1], chunk[2], chunk[3]]);
                if !v.is_finite() {
                    return Err(Error::InvalidWaveform(format!("non-finite sample at {i}")));
                }
                channels[i % nch].push(T::lit(v.clamp(-1.0, 1.0) as f64));
            }
        }
    }
    Waveform::new(channels, fmt.sample_rate)
}

/// Reads a WAV file from disk.
pub fn load_wav<T: Scalar>(path: impl AsRef<Path>) -> Result<Waveform<T>> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    read_wav(&bytes)
}

fn quantize_pcm16<T: Scalar>(v: T) -> i16 {
    let scaled = (v.to_f64_lossy() * 32768.0).round();
    scaled.clamp(-32768.0, 32767.0) as i16
}

/// Encodes a waveform as a canonical 44-byte-header WAV file.
pub fn write_wav<T: Scalar>(wave: &Waveform<T>, format: SampleFormat) -> Vec<u8> {
    let nch = wave.num_channels() as u16;
    let bits = format.bits();
    let block_align = nch * bits / 8;
    let data_len = wave.len() * block_align as usize;
    let mut out = Vec::with_capacity(44 + data_len);
    out.extend_from_slice(b"RIFF");
    out.extend_from_slice(&((36 + data_len) as u32).to_le_bytes());
    out.extend_from_slice(b"WAVE");
    out.extend_from_slice(b"fmt ");
    out.extend_from_slice(&16u32.to_le_bytes());
    out.extend_from_slice(&format.tag().to_le_bytes());
    out.extend_from_slice(&nch.to_le_bytes());
    out.extend_from_slice(&wave.sample_rate().to_le_bytes());
    out.extend_from_slice(&(wave.sample_rate() * block_align as u32).to_le_bytes());
    out.extend_from_slice(&block_align.to_le_bytes());
    out.extend_from_slice(&bits.to_le_bytes());
    out.extend_from_slice(b"data");
    out.extend_from_slice(&(data_len as u32).to_le_bytes());
    for i in 0..wave.len() {
        for ch in wave.channels() {
            match format {
                SampleFormat::Pcm16 => out.extend_from_slice(&quantize_pcm16(ch[i]).to_le_bytes()),
                SampleFormat::Float32 => {
                    out.extend_from_slice(&(ch[i].to_f64_lossy() as f32).to_le_bytes())
                }
            }
        }
    }
    out
}

/// Writes a waveform to disk.
pub fn save_wav<T: Scalar>(path: impl AsRef<Path>, wave: &Waveform<T>, format: SampleFormat) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, write_wav(wave, format)).map_err(|e| Error::io(path, e))
}
