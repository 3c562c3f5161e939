//! Library-level run of the whole pipeline on a small generated corpus:
//! features for all seven sets, per-set models and test correlations.

use ddm::asr_features::Alphabet;
use ddm::char_lm::{train_char_lm, train_vocab};
use ddm::corpus::{
    attach_features, filter_weak_label_pool, ingest_feature_table, load_manifest,
    make_speaker_split,
};
use ddm::eval::{evaluate_split, scored};
use ddm::pipeline::{train_from_bank, FeatureBank, FeatureContext, PipelineParams, TargetKind};
use ddm::projector::{
    build_cnn, build_fc, train_projector, CnnSpec, FcSpec, InitSpec, Sample, Tensor, TrainConfig,
};
use ddm::synth::{generate_fixture, SynthConfig};

fn main() -> anyhow::Result<()> {
    let dir = tempfile::tempdir()?;
    let cfg = SynthConfig {
        speakers_per_city: 2,
        compare_dim: 200,
        ..SynthConfig::small(11)
    };
    let summary = generate_fixture(dir.path(), &cfg)?;
    let mut records = load_manifest(&summary.manifest)?;
    let xv = ingest_feature_table(dir.path().join("xvectors.csv"), Some(512))?;
    let cmp = ingest_feature_table(dir.path().join("compare.csv"), None)?;
    attach_features(&mut records, Some(&xv), Some(&cmp));

    let alphabet = Alphabet::default();
    let text = std::fs::read_to_string(dir.path().join("gae_corpus.txt"))?;
    let corpus: Vec<String> = text.lines().map(str::to_uppercase).collect();
    let mut ctx = FeatureContext::new(alphabet.clone());
    ctx.char_lm = Some(train_char_lm(&corpus, 6, 0.01, &alphabet)?);
    ctx.vocab = Some(train_vocab(&corpus, 2)?);
    ctx.compare_names = Some(cmp.names.clone());

    // City projector on the unscored pool.
    let pool: Vec<Sample> = filter_weak_label_pool(&records)
        .iter()
        .filter_map(|r| {
            Some(Sample {
                input: Tensor::new(1, 512, r.xvector.clone()?),
                label: r.city.index(),
            })
        })
        .collect();
    let fc = build_fc(
        &FcSpec::default(),
        InitSpec {
            seed: 1,
            scale: 1.0,
        },
    );
    let tc = TrainConfig {
        epochs: 10,
        ..Default::default()
    };
    ctx.fc = Some(train_projector(&fc, &pool, &tc)?.0);
    ctx.cnn = Some(build_cnn(
        &CnnSpec::default(),
        InitSpec {
            seed: 1,
            scale: 1.0,
        },
    ));

    let records = scored(&records);
    let bank = FeatureBank::build(&records, &ctx)?;
    for (set, m) in &bank.sets {
        println!("{set}: {} x {}", m.n_rows(), m.n_cols());
    }
    let split = make_speaker_split(&records, (0.6, 0.2, 0.2), 0)?;
    let models = train_from_bank(
        &bank,
        &records,
        &split,
        TargetKind::Ddm,
        &PipelineParams::default(),
    )?;
    println!("top ComParE columns: {:?}", models.compare_top);
    for c in evaluate_split(&models, &bank, &records, &split)? {
        match c.r {
            Some(r) => println!(
                "{:13} {}  r = {r:+.3} (n = {})",
                c.set.as_str(),
                c.target.as_str(),
                c.n_test
            ),
            None => println!(
                "{:13} {}  undefined: {}",
                c.set.as_str(),
                c.target.as_str(),
                c.note.unwrap_or_default()
            ),
        }
    }
    Ok(())
}
