//! Frame-level F0 and energy contours (total, below 1 kHz, at or above 1 kHz).

use std::path::Path;
use std::sync::Arc;

use rustfft::num_complex::Complex;
use rustfft::{Fft, FftPlanner};
use serde::{Deserialize, Serialize};

use crate::corpus::AudioBuffer;
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ProsodyConfig {
    pub frame_len_s: f64,
    pub hop_s: f64,
    pub fft_size: usize,
    pub f0_min_hz: f64,
    pub f0_max_hz: f64,
    pub voicing_threshold: f64,
    pub band_split_hz: f64,
}

impl Default for ProsodyConfig {
    fn default() -> Self {
        ProsodyConfig {
            frame_len_s: 0.025,
            hop_s: 0.010,
            fft_size: 512,
            f0_min_hz: 50.0,
            f0_max_hz: 400.0,
            voicing_threshold: 0.45,
            band_split_hz: 1000.0,
        }
    }
}

impl ProsodyConfig {
    fn frame_len(&self, rate: u32) -> usize {
        (self.frame_len_s * f64::from(rate)).round() as usize
    }

    fn hop(&self, rate: u32) -> usize {
        ((self.hop_s * f64::from(rate)).round() as usize).max(1)
    }

    /// Number of frames for a signal of `n_samples`.
    pub fn n_frames(&self, n_samples: usize, rate: u32) -> usize {
        let fl = self.frame_len(rate);
        if fl == 0 || n_samples < fl {
            0
        } else {
            1 + (n_samples - fl) / self.hop(rate)
        }
    }
}

/// The four prosodic tracks of one utterance, all of length `n_frames`.
#[derive(Debug, Clone, PartialEq)]
pub struct ContourSet {
    pub f0_hz: Vec<f64>,
    pub energy_total: Vec<f64>,
    pub energy_low: Vec<f64>,
    pub energy_high: Vec<f64>,
    pub frame_len_s: f64,
    pub hop_s: f64,
}

impl ContourSet {
    pub fn n_frames(&self) -> usize {
        self.f0_hz.len()
    }

    pub fn channels(&self) -> [&[f64]; 4] {
        [
            &self.f0_hz,
            &self.energy_total,
            &self.energy_low,
            &self.energy_high,
        ]
    }

    /// Channel-major `4 x n_frames` layout used by the CNN projector.
    pub fn to_channel_major(&self) -> Vec<f64> {
        self.channels()
            .iter()
            .flat_map(|c| c.iter().copied())
            .collect()
    }

    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let mut out = String::from("frame_index,f0,e_total,e_low,e_high\n");
        for i in 0..self.n_frames() {
            out.push_str(&format!(
                "{i},{},{},{},{}\n",
                self.f0_hz[i], self.energy_total[i], self.energy_low[i], self.energy_high[i]
            ));
        }
        std::fs::write(path, out).map_err(|e| Error::io(path, e))
    }
}

fn hann(n: usize) -> Vec<f64> {
    if n == 1 {
        return vec![1.0];
    }
    (0..n)
        .map(|i| 0.5 - 0.5 * (2.0 * std::f64::consts::PI * i as f64 / (n - 1) as f64).cos())
        .collect()
}

struct Autocorrelator {
    fft: Arc<dyn Fft<f64>>,
    ifft: Arc<dyn Fft<f64>>,
    size: usize,
}

impl Autocorrelator {
    fn new(max_len: usize) -> Self {
        let size = (2 * max_len).next_power_of_two();
        let mut planner = FftPlanner::new();
        Autocorrelator {
            fft: planner.plan_fft_forward(size),
            ifft: planner.plan_fft_inverse(size),
            size,
        }
    }

    /// Raw lag products `sum_n x[n] x[n+lag]` for `lag < x.len()`.
    fn lag_products(&self, x: &[f64]) -> Vec<f64> {
        let mut buf: Vec<Complex<f64>> = x.iter().map(|&v| Complex::new(v, 0.0)).collect();
        buf.resize(self.size, Complex::new(0.0, 0.0));
        self.fft.process(&mut buf);
        for c in &mut buf {
            *c = Complex::new(c.norm_sqr(), 0.0);
        }
        self.ifft.process(&mut buf);
        let scale = 1.0 / self.size as f64;
        buf[..x.len()].iter().map(|c| c.re * scale).collect()
    }
}

/// Per-frame F0 by normalized autocorrelation over a window of two longest
/// periods centred on each frame. Unvoiced frames are 0.
pub fn f0_contour(audio: &AudioBuffer, cfg: &ProsodyConfig) -> Vec<f64> {
    let rate = audio.sample_rate_hz;
    let fs = f64::from(rate);
    let x = &audio.samples;
    let n_frames = cfg.n_frames(x.len(), rate);
    if n_frames == 0 {
        return Vec::new();
    }
    let fl = cfg.frame_len(rate);
    let hop = cfg.hop(rate);
    let min_lag = ((fs / cfg.f0_max_hz).floor() as usize).max(2);
    let max_lag = (fs / cfg.f0_min_hz).ceil() as usize;
    let window = 2 * max_lag;
    let ac = Autocorrelator::new(window);
    let mut out = Vec::with_capacity(n_frames);
    for i in 0..n_frames {
        let center = i * hop + fl / 2;
        let start = center.saturating_sub(window / 2);
        let end = (center + window / 2).min(x.len());
        let mut seg: Vec<f64> = x[start..end].to_vec();
        let mean = seg.iter().sum::<f64>() / seg.len() as f64;
        seg.iter_mut().for_each(|v| *v -= mean);
        out.push(frame_f0(&seg, &ac, min_lag, max_lag, fs, cfg));
    }
    out
}

fn frame_f0(
    seg: &[f64],
    ac: &Autocorrelator,
    min_lag: usize,
    max_lag: usize,
    fs: f64,
    cfg: &ProsodyConfig,
) -> f64 {
    let len = seg.len();
    let hi = max_lag.min(len.saturating_sub(len / 4)).saturating_add(1);
    if hi <= min_lag + 1 {
        return 0.0;
    }
    let energy: f64 = seg.iter().map(|v| v * v).sum();
    if energy.is_nan() || energy <= 1e-20 {
        return 0.0;
    }
    let products = ac.lag_products(seg);
    let mut prefix = vec![0.0; len + 1];
    for (i, v) in seg.iter().enumerate() {
        prefix[i + 1] = prefix[i] + v * v;
    }
    let r = |lag: usize| {
        let head = prefix[len - lag];
        let tail = prefix[len] - prefix[lag];
        let denom = (head * tail).sqrt();
        if denom > 0.0 {
            products[lag] / denom
        } else {
            0.0
        }
    };
    let corr: Vec<f64> = (min_lag - 1..=hi).map(r).collect();
    let at = |lag: usize| corr[lag + 1 - min_lag];
    let peaks: Vec<usize> = (min_lag..hi)
        .filter(|&l| at(l) >= at(l - 1) && at(l) > at(l + 1))
        .collect();
    let Some(best) = peaks
        .iter()
        .map(|&l| at(l))
        .fold(None, |m: Option<f64>, v| Some(m.map_or(v, |m| m.max(v))))
    else {
        return 0.0;
    };
    if best < cfg.voicing_threshold {
        return 0.0;
    }
    let lag = peaks
        .into_iter()
        .find(|&l| at(l) >= 0.9 * best)
        .expect("best peak exists");
    let (a, b, c) = (at(lag - 1), at(lag), at(lag + 1));
    let denom = a - 2.0 * b + c;
    let shift = if denom.abs() > 1e-15 {
        0.5 * (a - c) / denom
    } else {
        0.0
    };
    let f0 = fs / (lag as f64 + shift.clamp(-0.5, 0.5));
    if (cfg.f0_min_hz..=cfg.f0_max_hz).contains(&f0) {
        f0
    } else {
        0.0
    }
}

/// Per-frame Hann-windowed energy and its split into bins below / at-or-above
/// the band boundary (two-sided spectrum, so the split is exact by Parseval).
pub fn energy_contours(
    audio: &AudioBuffer,
    cfg: &ProsodyConfig,
) -> Result<(Vec<f64>, Vec<f64>, Vec<f64>)> {
    let rate = audio.sample_rate_hz;
    let fl = cfg.frame_len(rate);
    if fl > cfg.fft_size {
        return Err(Error::InvalidArgument(format!(
            "frame of {fl} samples exceeds FFT size {}",
            cfg.fft_size
        )));
    }
    let hop = cfg.hop(rate);
    let n_frames = cfg.n_frames(audio.samples.len(), rate);
    let window = hann(fl);
    let n = cfg.fft_size;
    let fft = FftPlanner::new().plan_fft_forward(n);
    let low_bin =
        |k: usize| (k.min(n - k) as f64) * f64::from(rate) / (n as f64) < cfg.band_split_hz;
    let (mut total, mut low, mut high) = (Vec::new(), Vec::new(), Vec::new());
    let mut buf = vec![Complex::new(0.0, 0.0); n];
    for i in 0..n_frames {
        let frame = &audio.samples[i * hop..i * hop + fl];
        buf.iter_mut().for_each(|c| *c = Complex::new(0.0, 0.0));
        let mut t = 0.0;
        for (j, (&s, &w)) in frame.iter().zip(&window).enumerate() {
            let v = s * w;
            t += v * v;
            buf[j] = Complex::new(v, 0.0);
        }
        fft.process(&mut buf);
        let (mut lo, mut hi) = (0.0, 0.0);
        for (k, c) in buf.iter().enumerate() {
            let p = c.norm_sqr() / n as f64;
            if low_bin(k) {
                lo += p;
            } else {
                hi += p;
            }
        }
        total.push(t);
        low.push(lo);
        high.push(hi);
    }
    Ok((total, low, high))
}

pub fn extract_contours(audio: &AudioBuffer, cfg: &ProsodyConfig) -> Result<ContourSet> {
    let f0_hz = f0_contour(audio, cfg);
    let (energy_total, energy_low, energy_high) = energy_contours(audio, cfg)?;
    Ok(ContourSet {
        f0_hz,
        energy_total,
        energy_low,
        energy_high,
        frame_len_s: cfg.frame_len_s,
        hop_s: cfg.hop_s,
    })
}

fn znorm(channel: &[f64]) -> Vec<f64> {
    let included: Vec<f64> = channel.iter().copied().filter(|&v| v != 0.0).collect();
    if included.is_empty() {
        return vec![0.0; channel.len()];
    }
    let n = included.len() as f64;
    let mean = included.iter().sum::<f64>() / n;
    let var = included
        .iter()
        .map(|v| (v - mean) * (v - mean))
        .sum::<f64>()
        / n;
    let std = var.sqrt();
    if std <= 1e-9 * mean.abs().max(f64::MIN_POSITIVE) {
        return vec![0.0; channel.len()];
    }
    channel
        .iter()
        .map(|&v| if v == 0.0 { 0.0 } else { (v - mean) / std })
        .collect()
}

/// Per-utterance z-normalization of each channel over its nonzero (voiced)
/// frames; excluded frames and zero-variance channels become 0.
pub fn normalize_contours(c: &ContourSet) -> ContourSet {
    ContourSet {
        f0_hz: znorm(&c.f0_hz),
        energy_total: znorm(&c.energy_total),
        energy_low: znorm(&c.energy_low),
        energy_high: znorm(&c.energy_high),
        frame_len_s: c.frame_len_s,
        hop_s: c.hop_s,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn tone(freq: f64, secs: f64, amp: f64) -> AudioBuffer {
        let n = (16_000.0 * secs) as usize;
        AudioBuffer {
            samples: (0..n)
                .map(|i| amp * (2.0 * std::f64::consts::PI * freq * i as f64 / 16_000.0).sin())
                .collect(),
            sample_rate_hz: 16_000,
        }
    }

    fn median_voiced(f0: &[f64]) -> f64 {
        let mut v: Vec<f64> = f0.iter().copied().filter(|&x| x > 0.0).collect();
        v.sort_by(f64::total_cmp);
        v[v.len() / 2]
    }

    #[test]
    fn frame_count() {
        let cfg = ProsodyConfig::default();
        assert_eq!(cfg.n_frames(399, 16_000), 0);
        assert_eq!(cfg.n_frames(400, 16_000), 1);
        assert_eq!(cfg.n_frames(16_000, 16_000), 98);
    }

    #[test]
    fn silence_is_unvoiced() {
        let cfg = ProsodyConfig::default();
        let a = AudioBuffer {
            samples: vec![0.0; 16_000],
            sample_rate_hz: 16_000,
        };
        let f0 = f0_contour(&a, &cfg);
        assert_eq!(f0.len(), 98);
        assert!(f0.iter().all(|&v| v == 0.0));
        let short = AudioBuffer {
            samples: vec![0.1; 100],
            sample_rate_hz: 16_000,
        };
        assert!(f0_contour(&short, &cfg).is_empty());
    }

    #[test]
    fn harmonic_voice_tracks_fundamental() {
        let cfg = ProsodyConfig::default();
        let samples = (0..16_000)
            .map(|i| {
                let t = i as f64 / 16_000.0;
                (1..=5)
                    .map(|h| (2.0 * std::f64::consts::PI * 130.0 * h as f64 * t).sin() / h as f64)
                    .sum::<f64>()
                    * 0.2
            })
            .collect();
        let a = AudioBuffer {
            samples,
            sample_rate_hz: 16_000,
        };
        let m = median_voiced(&f0_contour(&a, &cfg));
        assert!((m - 130.0).abs() <= 2.0, "{m}");
    }

    #[test]
    fn contour_lengths_agree() {
        let c = extract_contours(&tone(150.0, 0.73, 0.3), &ProsodyConfig::default()).unwrap();
        let n = c.n_frames();
        assert!(c.channels().iter().all(|ch| ch.len() == n));
        assert_eq!(n, ProsodyConfig::default().n_frames(11_680, 16_000));
    }

    #[test]
    fn normalization_rules() {
        let c = ContourSet {
            f0_hz: vec![0.0, 0.0, 0.0],
            energy_total: vec![2.0, 2.0, 2.0],
            energy_low: vec![1.0, 2.0, 3.0],
            energy_high: vec![0.0, 4.0, 8.0],
            frame_len_s: 0.025,
            hop_s: 0.01,
        };
        let n = normalize_contours(&c);
        assert_eq!(n.f0_hz, vec![0.0; 3]);
        assert_eq!(n.energy_total, vec![0.0; 3]);
        let m: f64 = n.energy_low.iter().sum::<f64>() / 3.0;
        let s = (n.energy_low.iter().map(|v| (v - m).powi(2)).sum::<f64>() / 3.0).sqrt();
        assert!(m.abs() < 1e-12 && (s - 1.0).abs() < 1e-12);
        assert_eq!(n.energy_high[0], 0.0);
        assert_eq!(n.energy_high[1], -1.0);
        assert_eq!(n.energy_high[2], 1.0);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]

        #[test]
        fn amplitude_scaling(freq in 80.0f64..350.0, alpha in 0.05f64..4.0) {
            let cfg = ProsodyConfig::default();
            let a = tone(freq, 0.3, 0.2);
            let b = AudioBuffer {
                samples: a.samples.iter().map(|s| s * alpha).collect(),
                sample_rate_hz: 16_000,
            };
            let (fa, fb) = (f0_contour(&a, &cfg), f0_contour(&b, &cfg));
            for (x, y) in fa.iter().zip(&fb) {
                prop_assert!((x - y).abs() <= 1e-6 * x.max(1.0));
            }
            let ea = energy_contours(&a, &cfg).unwrap();
            let eb = energy_contours(&b, &cfg).unwrap();
            for (ca, cb) in [(&ea.0, &eb.0), (&ea.1, &eb.1), (&ea.2, &eb.2)] {
                for (x, y) in ca.iter().zip(cb.iter()) {
                    prop_assert!((x * alpha * alpha - y).abs() <= 1e-9 * y.abs().max(1e-12));
                }
            }
        }

        #[test]
        fn normalization_is_idempotent(vals in proptest::collection::vec(prop_oneof![Just(0.0), 0.01f64..100.0], 1..60)) {
            let c = ContourSet {
                f0_hz: vals.clone(),
                energy_total: vals.iter().map(|v| v * 3.0).collect(),
                energy_low: vals.iter().rev().copied().collect(),
                energy_high: vals.iter().map(|v| v.sqrt()).collect(),
                frame_len_s: 0.025,
                hop_s: 0.01,
            };
            let once = normalize_contours(&c);
            let twice = normalize_contours(&once);
            for (a, b) in once.channels().iter().zip(twice.channels().iter()) {
                for (x, y) in a.iter().zip(b.iter()) {
                    prop_assert!((x - y).abs() <= 1e-6);
                }
            }
        }
    }
}
