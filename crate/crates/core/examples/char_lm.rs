//! Train a character 6-gram model on a small corpus and score two utterances.

use ddm::asr_features::Alphabet;
use ddm::char_lm::{
    lm_features, tag_verbs, train_char_lm, train_vocab, utterance_char_ppl, LM_FEATURE_NAMES,
};

fn main() -> anyhow::Result<()> {
    let corpus: Vec<String> = [
        "THE KIDS WALKED TO THE STORE",
        "SHE WAS GOING TO THE STORE LATER",
        "HE SAID NOTHING TO THE KIDS",
        "THEY WERE WALKING HOME",
        "THE STORE WAS CLOSED",
    ]
    .iter()
    .cycle()
    .take(50)
    .map(|s| s.to_string())
    .collect();
    let alphabet = Alphabet::default();
    let lm = train_char_lm(&corpus, 6, 0.01, &alphabet)?;
    let vocab = train_vocab(&corpus, 2)?;

    for text in [
        "THE KIDS WALKED TO THE STORE",
        "DEM KIDS BE WALKIN' TO DA STO'",
    ] {
        let verbs = tag_verbs(text, None)?;
        let f = lm_features(&lm, &vocab, text, &verbs)?;
        println!("{text:?}: char ppl {:.2}", utterance_char_ppl(&lm, text)?);
        for (name, v) in LM_FEATURE_NAMES.iter().zip(f.to_vec()) {
            println!("  {name} = {v:.3}");
        }
    }
    Ok(())
}
