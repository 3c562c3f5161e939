//! Dialect density of a few hand-annotated utterances, per-city means and a
//! speaker-independent split.

use ddm::corpus::{compute_ddm, make_speaker_split, City, DdmAnnotation, UtteranceRecord};
use ddm::eval::city_means;

fn record(
    id: &str,
    speaker: &str,
    city: City,
    n_ph: u32,
    n_ms: u32,
    n_words: u32,
) -> anyhow::Result<UtteranceRecord> {
    Ok(UtteranceRecord {
        id: id.into(),
        speaker: speaker.into(),
        city,
        audio: format!("{id}.wav").into(),
        transcript: String::new(),
        posteriors: None,
        xvector_id: None,
        compare_id: None,
        pos_tags: None,
        annotation: Some(DdmAnnotation::new(n_ph, n_ms, n_words)?),
        interrupted: false,
        word_count: n_words as usize,
        xvector: None,
        compare: None,
    })
}

fn main() -> anyhow::Result<()> {
    let s = compute_ddm(&DdmAnnotation::new(3, 1, 20)?)?;
    println!("3 phonological + 1 morphosyntactic tokens in 20 words: {s:?}");
    assert!(DdmAnnotation::new(5, 0, 4).is_err());

    let records = vec![
        record("a1", "dcb1", City::DCB, 2, 0, 25)?,
        record("a2", "dcb1", City::DCB, 1, 1, 10)?,
        record("b1", "prv1", City::PRV, 4, 1, 18)?,
        record("c1", "roc1", City::ROC, 0, 0, 12)?,
        record("d1", "les1", City::LES, 1, 0, 30)?,
    ];
    for (city, m) in city_means(&records) {
        println!(
            "{city}: phon {:.3} gram {:.3} ddm {:.3} over {} utterances",
            m.score.ddm_phon, m.score.ddm_gram, m.score.ddm, m.n_utterances
        );
    }

    let split = make_speaker_split(&records, (0.6, 0.2, 0.2), 7)?;
    println!(
        "train {:?} valid {:?} test {:?}",
        split.train, split.valid, split.test
    );
    Ok(())
}
