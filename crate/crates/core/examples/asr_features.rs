//! Character-bigram and duration features from a toy CTC posterior matrix.

use ddm::asr_features::{
    bigram_feature_names, bigram_frequencies, char_durations, decode_greedy, Alphabet,
    PosteriorMatrix,
};

fn main() -> anyhow::Result<()> {
    let alphabet = Alphabet::default();
    let v = bigram_frequencies("DAT DA CAT", &alphabet);
    let names = bigram_feature_names(&alphabet);
    let normalized = v.normalized();
    let mut top: Vec<(usize, f64)> = normalized
        .iter()
        .copied()
        .enumerate()
        .filter(|p| p.1 > 0.0)
        .collect();
    top.sort_by(|a, b| b.1.total_cmp(&a.1));
    println!("{} bigram features; most frequent:", names.len());
    for (i, f) in top.iter().take(4) {
        println!("  {} {f:.3}", names[*i]);
    }

    // Frames spelling "DA" with a long A, blanks in between.
    let frames = ["sil", "D", "D", "sil", "A", "A", "A", "A", "sil"];
    let mut values = vec![0.01f32; frames.len() * alphabet.len()];
    for (t, s) in frames.iter().enumerate() {
        let k = alphabet.index_of(s).expect("symbol in alphabet");
        values[t * alphabet.len() + k] = 0.9;
    }
    let p = PosteriorMatrix::new(frames.len(), alphabet.len(), values, 0.02)?;
    println!("greedy decode: {:?}", decode_greedy(&p, &alphabet));
    let d = char_durations(&p, &alphabet)?;
    for s in ["D", "A", "sil"] {
        println!(
            "mean {s} duration: {:.3} s",
            d[alphabet.index_of(s).unwrap()]
        );
    }
    Ok(())
}
