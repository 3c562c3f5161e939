//! Prosodic contours of a synthetic gliding vowel.

use ddm::corpus::AudioBuffer;
use ddm::prosody::{extract_contours, normalize_contours, ProsodyConfig};

fn main() -> anyhow::Result<()> {
    let rate = 16_000u32;
    // 0.6 s glide from 120 Hz to 180 Hz with a 2.5 kHz overtone.
    let n = (0.6 * f64::from(rate)) as usize;
    let mut phase = 0.0f64;
    let samples: Vec<f64> = (0..n)
        .map(|i| {
            let f = 120.0 + 60.0 * i as f64 / n as f64;
            phase += std::f64::consts::TAU * f / f64::from(rate);
            0.4 * phase.sin() + 0.05 * (phase * 2500.0 / f).sin()
        })
        .collect();
    let audio = AudioBuffer {
        samples,
        sample_rate_hz: rate,
    };
    let cfg = ProsodyConfig::default();
    let c = extract_contours(&audio, &cfg)?;
    println!("{} frames at {} s hop", c.n_frames(), c.hop_s);
    for t in (0..c.n_frames()).step_by(10) {
        println!(
            "t={:.2}s f0={:6.1} Hz  energy={:.3} low={:.3} high={:.4}",
            t as f64 * c.hop_s,
            c.f0_hz[t],
            c.energy_total[t],
            c.energy_low[t],
            c.energy_high[t]
        );
    }
    let z = normalize_contours(&c);
    let voiced: Vec<f64> = z.f0_hz.iter().copied().filter(|v| *v != 0.0).collect();
    println!(
        "normalized voiced F0 mean {:.2e}",
        voiced.iter().sum::<f64>() / voiced.len() as f64
    );
    Ok(())
}
