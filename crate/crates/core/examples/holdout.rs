//! Repeated speaker-independent hold-out on LM features, averaged over
//! iterations, for all three density targets.

use ddm::asr_features::Alphabet;
use ddm::char_lm::{train_char_lm, train_vocab};
use ddm::corpus::load_manifest;
use ddm::eval::{random_holdout_eval, scored};
use ddm::gbt::GbtParams;
use ddm::pipeline::{
    build_features, FeatureBank, FeatureContext, FeatureSetId, PipelineParams, TargetKind,
};
use ddm::synth::{generate_fixture, SynthConfig};
use std::collections::BTreeMap;

fn main() -> anyhow::Result<()> {
    let dir = tempfile::tempdir()?;
    let cfg = SynthConfig {
        speakers_per_city: 3,
        ..SynthConfig::small(4)
    };
    let summary = generate_fixture(dir.path(), &cfg)?;
    let records = scored(&load_manifest(&summary.manifest)?);

    let alphabet = Alphabet::default();
    let text = std::fs::read_to_string(dir.path().join("gae_corpus.txt"))?;
    let corpus: Vec<String> = text.lines().map(str::to_uppercase).collect();
    let mut ctx = FeatureContext::new(alphabet.clone());
    ctx.char_lm = Some(train_char_lm(&corpus, 6, 0.01, &alphabet)?);
    ctx.vocab = Some(train_vocab(&corpus, 2)?);
    let lm = build_features(&records, FeatureSetId::Lm, &ctx)?;
    let bank = FeatureBank {
        ids: lm.ids.clone(),
        sets: BTreeMap::from([(FeatureSetId::Lm, lm)]),
    };

    let params = PipelineParams {
        gbt: GbtParams {
            n_rounds: 50,
            ..Default::default()
        },
        ..Default::default()
    };
    let report = random_holdout_eval(
        &records,
        &bank,
        &[FeatureSetId::Lm],
        &TargetKind::EVERY,
        50,
        0.2,
        9,
        &params,
    )?;
    for s in &report.summary {
        println!(
            "{} {}: mean r {:+.3} over {} splits ({} undefined)",
            s.set.as_str(),
            s.target.as_str(),
            s.mean_r.unwrap_or(f64::NAN),
            s.n_defined,
            s.n_excluded
        );
    }
    Ok(())
}
