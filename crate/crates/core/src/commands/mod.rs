//! Subcommands behind the `ddm` binary. Every command reads one TOML
//! [`RunConfig`]; `--seed` and `--out` override the file.
//!
//! Exit codes: 0 success, 2 missing or invalid input, 3 partial per-row failure.

mod config;

use std::ffi::OsString;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};

use crate::asr_features::normalize_transcript;
use crate::char_lm::{train_char_lm, train_vocab, utterance_char_ppl, CharLm, WordVocab};
use crate::corpus::{
    attach_features, filter_weak_label_pool, ingest_feature_table, load_manifest_with,
    make_speaker_split, read_wav, SplitSpec, UtteranceRecord, XVECTOR_DIM,
};
use crate::error::{Error, Result};
use crate::eval::{
    city_means, evaluate_split, random_holdout_eval, scored, shap_summary, write_city_means_csv,
    write_grid_csv, write_holdout_log_csv, write_holdout_summary_csv, write_ranking_csv,
    write_shap_plot_csv,
};
use crate::gbt::write_attributions_csv;
use crate::pipeline::{
    build_features_partial, train_from_bank, FeatureBank, FeatureContext, FeatureSetId, TargetKind,
    TrainedModels,
};
use crate::projector::{
    build_cnn, build_fc, train_projector, InitSpec, ProjectorModel, Sample, Tensor,
};
use crate::prosody::{extract_contours, normalize_contours};
use crate::seed;
use crate::synth::{generate_fixture, SynthConfig};

pub use config::{
    CnnSection, EvalConfig, FcSection, FeaturesConfig, LmConfig, PathsConfig, RunConfig,
};

pub const EXIT_OK: i32 = 0;
pub const EXIT_INPUT: i32 = 2;
pub const EXIT_PARTIAL: i32 = 3;

#[derive(Debug, Parser)]
#[command(name = "ddm", version, about = "Dialect density estimation pipeline")]
pub struct Cli {
    /// Cap on worker threads.
    #[arg(long, global = true)]
    pub jobs: Option<usize>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Args)]
pub struct Common {
    #[arg(long)]
    pub config: PathBuf,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

fn parse_set(s: &str) -> std::result::Result<FeatureSetId, String> {
    s.parse().map_err(|e: Error| e.to_string())
}

fn parse_target(s: &str) -> std::result::Result<TargetKind, String> {
    s.parse().map_err(|e: Error| e.to_string())
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Train the character LM and word vocabulary on the reference corpus.
    TrainLm(Common),
    /// Write one feature matrix (CSV plus provenance sidecar).
    Extract {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_parser = parse_set)]
        set: FeatureSetId,
    },
    /// Train the x-vector and prosody city projectors on the weak-label pool.
    TrainProjectors(Common),
    /// Split speakers and train the seven models for every configured target.
    TrainModel(Common),
    /// Test-partition correlations and city means.
    Evaluate(Common),
    /// Repeated random speaker-independent hold-out.
    Holdout {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        n_iter: Option<usize>,
    },
    /// SHAP ranking and plot data for one model.
    Explain {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_parser = parse_set, default_value = "ALL")]
        set: FeatureSetId,
        #[arg(long, value_parser = parse_target, default_value = "DDM")]
        target: TargetKind,
        #[arg(long)]
        top_n: Option<usize>,
    },
    /// Generate the synthetic corpus and its config.
    SynthFixture {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        speakers_per_city: Option<usize>,
        #[arg(long)]
        utterances_per_speaker: Option<usize>,
        #[arg(long)]
        compare_dim: Option<usize>,
    },
}

/// Parse arguments and run; returns the process exit code.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_INPUT } else { EXIT_OK };
        }
    };
    if let Some(n) = cli.jobs {
        // Fails only if a pool already exists, which is fine to ignore.
        let _ = rayon::ThreadPoolBuilder::new()
            .num_threads(n.max(1))
            .build_global();
    }
    match run(cli.command) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}

pub fn exit_code(e: &Error) -> i32 {
    match e {
        Error::MissingSideData { .. } => EXIT_PARTIAL,
        _ => EXIT_INPUT,
    }
}

pub fn run(cmd: Command) -> Result<i32> {
    match cmd {
        Command::TrainLm(c) => cmd_train_lm(&Session::open(&c)?),
        Command::Extract { common, set } => cmd_extract(&Session::open(&common)?, set),
        Command::TrainProjectors(c) => cmd_train_projectors(&Session::open(&c)?),
        Command::TrainModel(c) => cmd_train_model(&Session::open(&c)?),
        Command::Evaluate(c) => cmd_evaluate(&Session::open(&c)?),
        Command::Holdout { common, n_iter } => cmd_holdout(&Session::open(&common)?, n_iter),
        Command::Explain {
            common,
            set,
            target,
            top_n,
        } => {
            let s = Session::open(&common)?;
            let n = top_n.unwrap_or(s.cfg.eval.top_n);
            cmd_explain(&s, set, target, n)
        }
        Command::SynthFixture {
            out,
            seed,
            speakers_per_city,
            utterances_per_speaker,
            compare_dim,
        } => {
            let mut cfg = SynthConfig {
                seed,
                ..Default::default()
            };
            if let Some(v) = speakers_per_city {
                cfg.speakers_per_city = v;
            }
            if let Some(v) = utterances_per_speaker {
                cfg.scored_per_speaker = v;
            }
            if let Some(v) = compare_dim {
                cfg.compare_dim = v;
            }
            let summary = generate_fixture(&out, &cfg)?;
            println!(
                "wrote {} utterances ({} scored) for {} speakers to {}",
                summary.n_utterances,
                summary.n_scored,
                summary.n_speakers,
                out.display()
            );
            Ok(EXIT_OK)
        }
    }
}

/// Resolved config plus the artifact layout under `out_dir`.
pub struct Session {
    pub cfg: RunConfig,
}

impl Session {
    pub fn open(c: &Common) -> Result<Self> {
        let mut cfg = RunConfig::load(&c.config)?;
        if let Some(s) = c.seed {
            cfg.seed = s;
        }
        if let Some(o) = &c.out {
            cfg.paths.out_dir = o.clone();
        }
        std::fs::create_dir_all(&cfg.paths.out_dir)
            .map_err(|e| Error::io(&cfg.paths.out_dir, e))?;
        Ok(Session { cfg })
    }

    pub fn out(&self, rel: &str) -> PathBuf {
        self.cfg.paths.out_dir.join(rel)
    }

    fn dir(&self, rel: &str) -> Result<PathBuf> {
        let d = self.out(rel);
        std::fs::create_dir_all(&d).map_err(|e| Error::io(&d, e))?;
        Ok(d)
    }

    pub fn lm_path(&self) -> PathBuf {
        self.out("char_lm.json")
    }
    pub fn vocab_path(&self) -> PathBuf {
        self.out("vocab.json")
    }
    pub fn fc_path(&self) -> PathBuf {
        self.out("fc_projector.json")
    }
    pub fn cnn_path(&self) -> PathBuf {
        self.out("cnn_projector.json")
    }
    pub fn split_path(&self) -> PathBuf {
        self.out("split.json")
    }
    pub fn models_dir(&self, t: TargetKind) -> PathBuf {
        self.out(&format!("models/{t}"))
    }

    /// Manifest with ingested x-vector and ComParE rows attached.
    pub fn records(&self) -> Result<Vec<UtteranceRecord>> {
        let mut records = load_manifest_with(&self.cfg.paths.manifest, &self.cfg.alphabet()?)?;
        let xv = self
            .cfg
            .paths
            .xvectors
            .as_ref()
            .map(|p| ingest_feature_table(p, Some(XVECTOR_DIM)))
            .transpose()?;
        let cmp = self
            .cfg
            .paths
            .compare
            .as_ref()
            .map(|p| ingest_feature_table(p, None))
            .transpose()?;
        attach_features(&mut records, xv.as_ref(), cmp.as_ref());
        Ok(records)
    }

    fn compare_names(&self) -> Result<Option<Vec<String>>> {
        let Some(p) = &self.cfg.paths.compare else {
            return Ok(None);
        };
        // Header only.
        let mut r = csv::Reader::from_path(p).map_err(|e| Error::FeatureTable {
            path: p.clone(),
            message: e.to_string(),
        })?;
        let h = r.headers().map_err(|e| Error::FeatureTable {
            path: p.clone(),
            message: e.to_string(),
        })?;
        Ok(Some(h.iter().skip(1).map(str::to_string).collect()))
    }

    /// Fail with exit 2 naming the first missing upstream artifact for `set`.
    pub fn require(&self, set: FeatureSetId) -> Result<()> {
        let need: Vec<PathBuf> = match set {
            FeatureSetId::CharComb | FeatureSetId::CharDur => vec![],
            FeatureSetId::Lm => vec![self.lm_path(), self.vocab_path()],
            FeatureSetId::XvectorProj => vec![self.fc_path()],
            FeatureSetId::ProsodyProj => vec![self.cnn_path()],
            FeatureSetId::Compare => vec![],
            FeatureSetId::All => vec![
                self.lm_path(),
                self.vocab_path(),
                self.fc_path(),
                self.cnn_path(),
            ],
        };
        if let Some(p) = need.into_iter().find(|p| !p.exists()) {
            return Err(Error::io(p, std::io::ErrorKind::NotFound.into()));
        }
        if matches!(set, FeatureSetId::XvectorProj | FeatureSetId::All)
            && self.cfg.paths.xvectors.is_none()
        {
            return Err(Error::InvalidArgument(
                "config has no paths.xvectors".into(),
            ));
        }
        if matches!(set, FeatureSetId::Compare | FeatureSetId::All)
            && self.cfg.paths.compare.is_none()
        {
            return Err(Error::InvalidArgument("config has no paths.compare".into()));
        }
        Ok(())
    }

    /// Context with every artifact that exists on disk.
    pub fn context(&self) -> Result<FeatureContext> {
        let mut ctx = FeatureContext::new(self.cfg.alphabet()?);
        ctx.prosody = self.cfg.prosody.clone();
        ctx.char_comb_normalized = self.cfg.features.char_comb_normalized;
        if self.lm_path().exists() {
            ctx.char_lm = Some(CharLm::load(self.lm_path())?);
        }
        if self.vocab_path().exists() {
            ctx.vocab = Some(WordVocab::load(self.vocab_path())?);
        }
        if self.fc_path().exists() {
            ctx.fc = Some(ProjectorModel::load(self.fc_path())?);
        }
        if self.cnn_path().exists() {
            ctx.cnn = Some(ProjectorModel::load(self.cnn_path())?);
        }
        ctx.compare_names = self.compare_names()?;
        Ok(ctx)
    }

    fn load_split(&self) -> Result<SplitSpec> {
        let p = self.split_path();
        let text = std::fs::read_to_string(&p).map_err(|e| Error::io(&p, e))?;
        Ok(serde_json::from_str(&text)?)
    }
}

fn write_json<T: serde::Serialize>(path: &Path, v: &T) -> Result<()> {
    std::fs::write(path, serde_json::to_string_pretty(v)?).map_err(|e| Error::io(path, e))
}

pub fn cmd_train_lm(s: &Session) -> Result<i32> {
    let corpus_path = s
        .cfg
        .paths
        .lm_corpus
        .as_ref()
        .ok_or_else(|| Error::InvalidArgument("config has no paths.lm_corpus".into()))?;
    let text = std::fs::read_to_string(corpus_path).map_err(|e| Error::io(corpus_path, e))?;
    let alphabet = s.cfg.alphabet()?;
    let sentences: Vec<String> = text
        .lines()
        .map(|l| normalize_transcript(l, &alphabet))
        .filter(|l| !l.is_empty())
        .collect();
    if sentences.is_empty() {
        return Err(Error::InvalidArgument(format!(
            "LM corpus {} is empty",
            corpus_path.display()
        )));
    }
    let lm_cfg = &s.cfg.lm;
    let lm = train_char_lm(&sentences, lm_cfg.order, lm_cfg.k, &alphabet)?;
    let vocab = train_vocab(&sentences, lm_cfg.min_count)?;
    lm.save(s.lm_path())?;
    vocab.save(s.vocab_path())?;

    // Every tenth sentence held out from a second model, for reporting only.
    let (held, kept): (Vec<_>, Vec<_>) =
        sentences.iter().enumerate().partition(|(i, _)| i % 10 == 9);
    let mut msg = format!("vocab size {}, {} sentences", vocab.len(), sentences.len());
    if !held.is_empty() && !kept.is_empty() {
        let kept: Vec<&String> = kept.into_iter().map(|(_, t)| t).collect();
        let probe = train_char_lm(&kept, lm_cfg.order, lm_cfg.k, &alphabet)?;
        let ppl: Vec<f64> = held
            .iter()
            .map(|(_, t)| utterance_char_ppl(&probe, t))
            .collect::<Result<_>>()?;
        msg.push_str(&format!(
            ", held-out char ppl {:.4}",
            ppl.iter().sum::<f64>() / ppl.len() as f64
        ));
    }
    println!("{msg}");
    Ok(EXIT_OK)
}

/// Top ComParE list for ALL: saved with the DDM models when present,
/// otherwise selected from a COMPARE model fitted on the training split.
fn compare_top_for_extract(
    s: &Session,
    records: &[UtteranceRecord],
    ctx: &FeatureContext,
) -> Result<Vec<String>> {
    let saved = s.models_dir(TargetKind::Ddm).join("compare_top.json");
    if saved.exists() {
        let text = std::fs::read_to_string(&saved).map_err(|e| Error::io(&saved, e))?;
        return Ok(serde_json::from_str(&text)?);
    }
    let annotated = scored(records);
    let split = make_speaker_split(&annotated, split_fractions(&s.cfg.eval), s.cfg.seed)?;
    let train: Vec<UtteranceRecord> = split
        .select(&split.train, &annotated)
        .into_iter()
        .cloned()
        .collect();
    let m = crate::pipeline::build_features(&train, FeatureSetId::Compare, ctx)?;
    let y = crate::pipeline::targets(&train.iter().collect::<Vec<_>>(), TargetKind::Ddm)?;
    let model = crate::gbt::fit(&m.rows, &y, &s.cfg.model.gbt, m.names.clone())?;
    crate::pipeline::select_compare_top(&model, &m.rows, &s.cfg.model)
}

fn split_fractions(e: &EvalConfig) -> (f64, f64, f64) {
    (e.split[0], e.split[1], e.split[2])
}

pub fn cmd_extract(s: &Session, set: FeatureSetId) -> Result<i32> {
    s.require(set)?;
    let all = s.records()?;
    // Scored utterances when there are any; the weak pool has no ComParE rows.
    let annotated = scored(&all);
    let records = if annotated.is_empty() { all } else { annotated };
    let mut ctx = s.context()?;
    if set == FeatureSetId::All {
        ctx.compare_top = Some(compare_top_for_extract(s, &records, &ctx)?);
    }
    let (m, failures) = build_features_partial(&records, set, &ctx)?;
    let path = s.dir("features")?.join(format!("{set}.csv"));
    m.write(&path)?;
    println!(
        "{set}: {} rows x {} columns -> {}",
        m.n_rows(),
        m.n_cols(),
        path.display()
    );
    if failures.is_empty() {
        return Ok(EXIT_OK);
    }
    for f in &failures {
        match &f.error {
            Error::MissingSideData { set, .. } => eprintln!("{}: missing {set} side data", f.id),
            e => eprintln!("{}: {e}", f.id),
        }
    }
    eprintln!("{} of {} utterances failed", failures.len(), records.len());
    Ok(EXIT_PARTIAL)
}

fn city_label(r: &UtteranceRecord) -> usize {
    r.city.index()
}

pub fn cmd_train_projectors(s: &Session) -> Result<i32> {
    let records = s.records()?;
    let pool = filter_weak_label_pool(&records);
    let global = s.cfg.seed;

    let fc_samples: Vec<Sample> = pool
        .iter()
        .filter_map(|r| {
            r.xvector.as_ref().map(|x| Sample {
                input: Tensor::vector(x.clone()),
                label: city_label(r),
            })
        })
        .collect();
    let mut fc_cfg = s.cfg.fc.train.clone();
    fc_cfg.seed = seed::substream(global, "projector/fc");
    let fc0 = build_fc(
        &s.cfg.fc.spec,
        InitSpec {
            seed: global,
            scale: fc_cfg.weight_init_scale,
        },
    );
    let (fc, fc_hist) = train_projector(&fc0, &fc_samples, &fc_cfg)?;
    fc.save(s.fc_path())?;
    write_json(&s.out("fc_history.json"), &fc_hist)?;

    let cnn0 = build_cnn(
        &s.cfg.cnn.spec,
        InitSpec {
            seed: global,
            scale: s.cfg.cnn.train.weight_init_scale,
        },
    );
    let mut cnn_samples = Vec::new();
    let mut skipped = 0usize;
    for r in &pool {
        let c = read_wav(&r.audio).and_then(|a| extract_contours(&a, &s.cfg.prosody));
        match c {
            Ok(c) if c.n_frames() >= cnn0.min_input_len() => {
                let c = normalize_contours(&c);
                cnn_samples.push(Sample {
                    input: Tensor::new(4, c.n_frames(), c.to_channel_major()),
                    label: city_label(r),
                });
            }
            _ => skipped += 1,
        }
    }
    let mut cnn_cfg = s.cfg.cnn.train.clone();
    cnn_cfg.seed = seed::substream(global, "projector/cnn");
    let (cnn, cnn_hist) = train_projector(&cnn0, &cnn_samples, &cnn_cfg)?;
    cnn.save(s.cnn_path())?;
    write_json(&s.out("cnn_history.json"), &cnn_hist)?;

    let last =
        |h: &crate::projector::TrainHistory| h.epochs.last().map_or(0.0, |e| e.train_accuracy);
    println!(
        "weak pool {} utterances; FC on {} (train acc {:.3}); CNN on {} (train acc {:.3}, {} skipped)",
        pool.len(),
        fc_samples.len(),
        last(&fc_hist),
        cnn_samples.len(),
        last(&cnn_hist),
        skipped
    );
    Ok(EXIT_OK)
}

pub fn cmd_train_model(s: &Session) -> Result<i32> {
    s.require(FeatureSetId::All)?;
    let records = scored(&s.records()?);
    let split = make_speaker_split(&records, split_fractions(&s.cfg.eval), s.cfg.seed)?;
    write_json(&s.split_path(), &split)?;
    let ctx = s.context()?;
    let used: Vec<UtteranceRecord> = records
        .iter()
        .filter(|r| split.train.contains(&r.speaker) || split.valid.contains(&r.speaker))
        .cloned()
        .collect();
    let bank = FeatureBank::build(&used, &ctx)?;
    for &t in &s.cfg.eval.targets {
        let models = train_from_bank(&bank, &used, &split, t, &s.cfg.model)?;
        models.save(&s.models_dir(t))?;
        let rounds: Vec<String> = models
            .models
            .iter()
            .map(|(k, m)| format!("{k}={}", m.trees.len()))
            .collect();
        println!("{t}: trees {}", rounds.join(" "));
    }
    println!(
        "speakers train/valid/test = {}/{}/{}",
        split.train.len(),
        split.valid.len(),
        split.test.len()
    );
    Ok(EXIT_OK)
}

fn load_models(s: &Session, t: TargetKind) -> Result<TrainedModels> {
    let dir = s.models_dir(t);
    let all = dir.join("ALL.json");
    if !all.exists() {
        return Err(Error::io(all, std::io::ErrorKind::NotFound.into()));
    }
    TrainedModels::load(&dir, t)
}

pub fn cmd_evaluate(s: &Session) -> Result<i32> {
    let models: Vec<TrainedModels> = s
        .cfg
        .eval
        .targets
        .iter()
        .map(|&t| load_models(s, t))
        .collect::<Result<_>>()?;
    let split = s.load_split()?;
    let records = scored(&s.records()?);
    let test: Vec<UtteranceRecord> = split
        .select(&split.test, &records)
        .into_iter()
        .cloned()
        .collect();
    let bank = FeatureBank::build(&test, &s.context()?)?;
    let mut cells = Vec::new();
    for m in &models {
        cells.extend(evaluate_split(m, &bank, &test, &split)?);
    }
    let reports = s.dir("reports")?;
    write_grid_csv(&reports.join("table2_correlations.csv"), &cells)?;
    write_json(&reports.join("table2_correlations.json"), &cells)?;
    let means = city_means(&records);
    write_city_means_csv(&reports.join("table1_city_means.csv"), &means)?;
    for c in &cells {
        println!(
            "{:<13} {:<9} r = {}",
            c.set,
            c.target,
            c.r.map_or("undefined".to_string(), |r| format!("{r:.4}"))
        );
    }
    Ok(EXIT_OK)
}

pub fn cmd_holdout(s: &Session, n_iter: Option<usize>) -> Result<i32> {
    let sets = &s.cfg.eval.holdout_sets;
    for &set in sets {
        s.require(set)?;
    }
    let records = scored(&s.records()?);
    let bank = FeatureBank::build(&records, &s.context()?)?;
    let n = n_iter.unwrap_or(s.cfg.eval.holdout_iterations);
    let report = random_holdout_eval(
        &records,
        &bank,
        sets,
        &s.cfg.eval.targets,
        n,
        s.cfg.eval.holdout_test_fraction,
        s.cfg.seed,
        &s.cfg.model,
    )?;
    let reports = s.dir("reports")?;
    write_holdout_summary_csv(&reports.join("table3_holdout.csv"), &report.summary)?;
    write_holdout_log_csv(&reports.join("holdout_log.csv"), &report.iterations)?;
    for h in &report.summary {
        println!(
            "{:<13} {:<9} mean r = {} ({} excluded)",
            h.set,
            h.target,
            h.mean_r
                .map_or("undefined".to_string(), |r| format!("{r:.4}")),
            h.n_excluded
        );
    }
    Ok(EXIT_OK)
}

pub fn cmd_explain(
    s: &Session,
    set: FeatureSetId,
    target: TargetKind,
    top_n: usize,
) -> Result<i32> {
    let models = load_models(s, target)?;
    let model = models.models.get(&set).ok_or_else(|| {
        Error::io(
            s.models_dir(target).join(format!("{set}.json")),
            std::io::ErrorKind::NotFound.into(),
        )
    })?;
    let split = s.load_split()?;
    let records = scored(&s.records()?);
    let test: Vec<UtteranceRecord> = split
        .select(&split.test, &records)
        .into_iter()
        .cloned()
        .collect();
    let mut ctx = s.context()?;
    ctx.compare_top = Some(models.compare_top.clone());
    let x = crate::pipeline::build_features(&test, set, &ctx)?;
    let summary = shap_summary(model, &x, top_n)?;
    let reports = s.dir("reports")?;
    let stem = format!("shap_{target}_{set}");
    write_ranking_csv(&reports.join(format!("{stem}_ranking.csv")), &summary.rows)?;
    write_shap_plot_csv(&reports.join(format!("{stem}_plot.csv")), &x, &summary)?;
    write_attributions_csv(
        &reports.join(format!("{stem}_attributions.csv")),
        &x.ids,
        &x.names,
        &summary.attributions,
    )?;
    let worst = summary
        .attributions
        .iter()
        .zip(&x.rows)
        .map(|(a, r)| (a.output() - model.predict(r).unwrap_or(f64::NAN)).abs())
        .fold(0.0, f64::max);
    for (i, r) in summary.rows.iter().enumerate() {
        println!("{:>3} {:<24} {:.6}", i + 1, r.feature, r.mean_abs_phi);
    }
    println!("max local accuracy error {worst:.3e}");
    Ok(EXIT_OK)
}
