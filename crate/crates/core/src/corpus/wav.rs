use std::path::Path;

use crate::error::{Error, Result};

pub const TARGET_SAMPLE_RATE: u32 = 16_000;

const KAISER_BETA: f64 = 8.6;
const TAPS: usize = 64;
const ROLLOFF: f64 = 0.95;

#[derive(Debug, Clone, PartialEq)]
pub struct AudioBuffer {
    pub samples: Vec<f64>,
    pub sample_rate_hz: u32,
}

impl AudioBuffer {
    pub fn duration_s(&self) -> f64 {
        self.samples.len() as f64 / f64::from(self.sample_rate_hz)
    }
}

fn map_hound(e: hound::Error) -> Error {
    match e {
        hound::Error::Unsupported => {
            Error::UnsupportedFormat("codec is not PCM or IEEE float".into())
        }
        hound::Error::FormatError(m) => Error::AudioParse(m.to_string()),
        hound::Error::IoError(io) => Error::AudioParse(io.to_string()),
        other => Error::AudioParse(other.to_string()),
    }
}

/// Read a PCM16 or float32 WAV file, average channels and resample to 16 kHz.
pub fn read_wav(path: impl AsRef<Path>) -> Result<AudioBuffer> {
    let path = path.as_ref();
    let mut reader = hound::WavReader::open(path).map_err(|e| match e {
        hound::Error::IoError(io) if io.kind() == std::io::ErrorKind::NotFound => {
            Error::io(path, io)
        }
        other => map_hound(other),
    })?;
    let spec = reader.spec();
    let channels = usize::from(spec.channels.max(1));
    let interleaved: Vec<f64> = match (spec.sample_format, spec.bits_per_sample) {
        (hound::SampleFormat::Int, 16) => reader
            .samples::<i16>()
            .map(|s| s.map(|v| f64::from(v) / 32768.0))
            .collect::<std::result::Result<_, _>>()
            .map_err(map_hound)?,
        (hound::SampleFormat::Float, 32) => reader
            .samples::<f32>()
            .map(|s| s.map(f64::from))
            .collect::<std::result::Result<_, _>>()
            .map_err(map_hound)?,
        (fmt, bits) => {
            return Err(Error::UnsupportedFormat(format!(
                "{fmt:?} with {bits} bits per sample"
            )));
        }
    };
    if !interleaved.len().is_multiple_of(channels) {
        return Err(Error::AudioParse(
            "sample count is not a multiple of channel count".into(),
        ));
    }
    let mono: Vec<f64> = interleaved
        .chunks_exact(channels)
        .map(|frame| frame.iter().sum::<f64>() / channels as f64)
        .collect();
    Ok(AudioBuffer {
        samples: resample(&mono, spec.sample_rate, TARGET_SAMPLE_RATE),
        sample_rate_hz: TARGET_SAMPLE_RATE,
    })
}

pub fn write_wav_pcm16(path: impl AsRef<Path>, samples: &[f64], sample_rate_hz: u32) -> Result<()> {
    let path = path.as_ref();
    let spec = hound::WavSpec {
        channels: 1,
        sample_rate: sample_rate_hz,
        bits_per_sample: 16,
        sample_format: hound::SampleFormat::Int,
    };
    let mut w = hound::WavWriter::create(path, spec).map_err(map_hound)?;
    for &s in samples {
        let v = (s.clamp(-1.0, 1.0) * 32767.0).round() as i16;
        w.write_sample(v).map_err(map_hound)?;
    }
    w.finalize().map_err(map_hound)
}

fn bessel_i0(x: f64) -> f64 {
    let half = x / 2.0;
    let mut term = 1.0;
    let mut sum = 1.0;
    let mut k = 1.0;
    while term > 1e-17 * sum {
        term *= (half / k) * (half / k);
        sum += term;
        k += 1.0;
    }
    sum
}

fn sinc(x: f64) -> f64 {
    if x == 0.0 {
        1.0
    } else {
        let px = std::f64::consts::PI * x;
        px.sin() / px
    }
}

/// Windowed-sinc rate conversion with a 64-tap Kaiser (beta 8.6) kernel.
/// Output length is `round(len * to / from)`.
pub fn resample(samples: &[f64], from: u32, to: u32) -> Vec<f64> {
    if from == to || samples.is_empty() {
        return samples.to_vec();
    }
    let out_len = ((samples.len() as u128 * u128::from(to) + u128::from(from) / 2)
        / u128::from(from)) as usize;
    let cutoff = ROLLOFF * (f64::from(to) / f64::from(from)).min(1.0);
    let half = (TAPS / 2) as f64;
    let i0_beta = bessel_i0(KAISER_BETA);
    let step = f64::from(from) / f64::from(to);
    let mut out = Vec::with_capacity(out_len);
    let mut taps = [0.0f64; TAPS];
    for n in 0..out_len {
        let t = n as f64 * step;
        let base = t.floor() as isize - (TAPS as isize / 2 - 1);
        let mut wsum = 0.0;
        for (j, tap) in taps.iter_mut().enumerate() {
            let d = t - (base + j as isize) as f64;
            let r = d / half;
            let w = if r.abs() >= 1.0 {
                0.0
            } else {
                bessel_i0(KAISER_BETA * (1.0 - r * r).sqrt()) / i0_beta
            };
            *tap = cutoff * sinc(cutoff * d) * w;
            wsum += *tap;
        }
        let mut acc = 0.0;
        for (j, tap) in taps.iter().enumerate() {
            let k = base + j as isize;
            if k >= 0 && (k as usize) < samples.len() {
                acc += samples[k as usize] * tap;
            }
        }
        out.push(if wsum != 0.0 { acc / wsum } else { acc });
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn write_raw(path: &Path, rate: u32, channels: u16, data: &[i16]) {
        let spec = hound::WavSpec {
            channels,
            sample_rate: rate,
            bits_per_sample: 16,
            sample_format: hound::SampleFormat::Int,
        };
        let mut w = hound::WavWriter::create(path, spec).unwrap();
        for &s in data {
            w.write_sample(s).unwrap();
        }
        w.finalize().unwrap();
    }

    fn zero_crossings(x: &[f64]) -> usize {
        x.windows(2)
            .filter(|w| (w[0] < 0.0) != (w[1] < 0.0))
            .count()
    }

    #[test]
    fn silence_at_16k() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("s.wav");
        write_raw(&p, 16_000, 1, &vec![0; 16_000]);
        let a = read_wav(&p).unwrap();
        assert_eq!(a.samples.len(), 16_000);
        assert!(a.samples.iter().all(|&s| s == 0.0));
    }

    #[test]
    fn full_scale_pcm16() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("fs.wav");
        write_raw(&p, 16_000, 1, &[32767, -32768]);
        let a = read_wav(&p).unwrap();
        assert_eq!(a.samples[0], 32767.0 / 32768.0);
        assert_eq!(a.samples[1], -1.0);
    }

    #[test]
    fn stereo_is_averaged() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("st.wav");
        write_raw(&p, 16_000, 2, &[16384, 0, -16384, -16384]);
        let a = read_wav(&p).unwrap();
        assert_eq!(a.samples, vec![0.25, -0.5]);
    }

    #[test]
    fn float32_is_read() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("f.wav");
        let spec = hound::WavSpec {
            channels: 1,
            sample_rate: 16_000,
            bits_per_sample: 32,
            sample_format: hound::SampleFormat::Float,
        };
        let mut w = hound::WavWriter::create(&p, spec).unwrap();
        w.write_sample(0.5f32).unwrap();
        w.write_sample(-0.25f32).unwrap();
        w.finalize().unwrap();
        assert_eq!(read_wav(&p).unwrap().samples, vec![0.5, -0.25]);
    }

    #[test]
    fn resampled_lengths() {
        let dir = tempfile::tempdir().unwrap();
        for rate in [44_100u32, 48_000] {
            let p = dir.path().join(format!("r{rate}.wav"));
            write_raw(&p, rate, 1, &vec![0; rate as usize]);
            let a = read_wav(&p).unwrap();
            assert!(
                (a.samples.len() as i64 - 16_000).abs() <= 1,
                "{}",
                a.samples.len()
            );
            assert_eq!(a.sample_rate_hz, 16_000);
        }
    }

    #[test]
    fn resampling_preserves_sine_frequency() {
        for (rate, freq) in [(44_100u32, 440.0f64), (48_000, 150.0), (44_100, 1234.0)] {
            let x: Vec<f64> = (0..rate)
                .map(|n| {
                    0.5 * (2.0 * std::f64::consts::PI * freq * n as f64 / f64::from(rate)).sin()
                })
                .collect();
            let y = resample(&x, rate, 16_000);
            let est = zero_crossings(&y) as f64 / 2.0 / (y.len() as f64 / 16_000.0);
            assert!(
                (est - freq).abs() <= 1.0,
                "rate {rate} freq {freq} est {est}"
            );
        }
    }

    #[test]
    fn non_pcm_codec_is_unsupported() {
        // 8-bit mu-law header (format tag 7).
        let mut bytes = Vec::new();
        bytes.extend_from_slice(b"RIFF");
        bytes.extend_from_slice(&(36u32 + 4).to_le_bytes());
        bytes.extend_from_slice(b"WAVEfmt ");
        bytes.extend_from_slice(&16u32.to_le_bytes());
        bytes.extend_from_slice(&7u16.to_le_bytes());
        bytes.extend_from_slice(&1u16.to_le_bytes());
        bytes.extend_from_slice(&8000u32.to_le_bytes());
        bytes.extend_from_slice(&8000u32.to_le_bytes());
        bytes.extend_from_slice(&1u16.to_le_bytes());
        bytes.extend_from_slice(&8u16.to_le_bytes());
        bytes.extend_from_slice(b"data");
        bytes.extend_from_slice(&4u32.to_le_bytes());
        bytes.extend_from_slice(&[0, 0, 0, 0]);
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("mulaw.wav");
        std::fs::write(&p, bytes).unwrap();
        assert!(matches!(read_wav(&p), Err(Error::UnsupportedFormat(_))));
    }

    #[test]
    fn truncated_file_is_parse_error() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("t.wav");
        write_raw(&p, 16_000, 1, &vec![100; 1000]);
        let bytes = std::fs::read(&p).unwrap();
        std::fs::write(&p, &bytes[..30]).unwrap();
        assert!(matches!(read_wav(&p), Err(Error::AudioParse(_))));
        std::fs::write(&p, &bytes[..bytes.len() - 501]).unwrap();
        assert!(matches!(read_wav(&p), Err(Error::AudioParse(_))));
    }
}
