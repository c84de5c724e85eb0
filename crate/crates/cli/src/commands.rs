use std::collections::{BTreeMap, HashMap};
use std::path::PathBuf;

use anyhow::{bail, Context};
use finsts_annotate::ServerConfig;
use finsts_core::annotate::{AgreementMode, AnnotationStore};
use finsts_core::augment::{
    assess_dataset, build_dataset, Anchor, BuildOptions, CategoryPolicy, ChatClient, ShiftCategory, TripletDataset,
};
use finsts_core::corpus::{load_manifest, read_sentences, segment_with, Document, Sentence};
use finsts_core::evaluate::{
    ablation_rows, compare_models, eval_annotated, eval_augmented, read_labeled_pairs, Comparison, EvalReport,
};
use finsts_core::jsonl;
use finsts_core::linalg::Matrix;
use finsts_core::matching::{build_pairs, hungarian_assign, similarity_matrix, PairRecord};
use finsts_core::provider::EmbeddingProvider;
use finsts_core::trainer::{split_dataset, train, Checkpoint, TrainOptions};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::config::{load_config, stage_seed, PipelineConfig};
use crate::run::Run;
use crate::{Cli, Command};

pub fn name(cmd: &Command) -> &'static str {
    match cmd {
        Command::Ingest(_) => "ingest",
        Command::Match(_) => "match",
        Command::Augment(_) => "augment",
        Command::Assess(_) => "assess",
        Command::Train(_) => "train",
        Command::Eval(_) => "eval",
        Command::Ablate(_) => "ablate",
        Command::Kappa(_) => "kappa",
        Command::ServeAnnotate(_) => "serve-annotate",
        Command::Export(_) => "export",
    }
}

pub const DOCUMENTS: &str = "documents.jsonl";
pub const SENTENCES: &str = "sentences.jsonl";
pub const PAIRS: &str = "pairs.jsonl";
pub const TRIPLETS: &str = "triplets.jsonl";
pub const TRAIN_SPLIT: &str = "split/train.jsonl";
pub const TEST_SPLIT: &str = "split/test.jsonl";
pub const HEAD: &str = "head.json";
pub const EVENT_LOG: &str = "annotation-events.jsonl";
pub const ANNOTATED: &str = "annotated.jsonl";

pub fn dispatch(cli: Cli) -> anyhow::Result<()> {
    let mut cfg = match &cli.config {
        Some(p) => load_config(p)?,
        None => PipelineConfig::default(),
    };
    if let Some(s) = cli.seed {
        cfg.seed = s;
    }
    if cli.offline {
        cfg.set_offline();
    }
    if let Some(o) = &cli.out {
        cfg.out_dir = o.clone();
    }
    let name = name(&cli.command);
    let mut run = Run::new(name, &cfg.out_dir, cfg.seed)?;
    if let Some(p) = &cli.config {
        run.input(p)?;
    }
    match cli.command {
        Command::Ingest(a) => ingest(&mut run, &cfg, a.manifest),
        Command::Match(a) => match_pairs(&mut run, &cfg, a.min_similarity),
        Command::Augment(a) => augment(&mut run, &cfg, &a.policy, a.limit),
        Command::Assess(a) => assess(&mut run, &cfg, a.triplets),
        Command::Train(a) => train_head(&mut run, &mut cfg, a.triplets, a.train_fraction),
        Command::Eval(a) => evaluate(&mut run, &cfg, a.head, a.test, a.annotated),
        Command::Ablate(a) => ablate(&mut run, &mut cfg, a.triplets, a.annotated, a.exclude_category),
        Command::Kappa(a) => kappa(&mut run, a.event_log, a.joint),
        Command::ServeAnnotate(a) => {
            let server = ServerConfig {
                listen: Some(a.listen),
                corpus: Some(a.pairs.unwrap_or_else(|| run.path(PAIRS))),
                event_log: Some(a.event_log.unwrap_or_else(|| run.path(EVENT_LOG))),
                static_dir: a.static_dir,
                annotators: a.annotators,
                agreement_mode: if a.joint { AgreementMode::Joint } else { AgreementMode::Score },
            };
            if let Some(p) = &server.corpus {
                run.input(p)?;
            }
            // The manifest is written before serving, since serving runs until interrupted.
            run.finish(&cfg)?;
            let rt = tokio::runtime::Runtime::new()?;
            return rt.block_on(finsts_annotate::serve(server)).map_err(Into::into);
        }
        Command::Export(a) => export(&mut run, a.event_log),
    }
    .with_context(|| format!("{name} failed"))?;
    run.finish(&cfg)
}

fn or_default(run: &Run, given: Option<PathBuf>, name: &str) -> PathBuf {
    given.unwrap_or_else(|| run.path(name))
}

fn write_jsonl<T: Serialize>(run: &mut Run, name: &str, items: &[T]) -> anyhow::Result<PathBuf> {
    let path = run.path(name);
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir)?;
    }
    jsonl::write(&path, items)?;
    run.output(&path)?;
    Ok(path)
}

fn ingest(run: &mut Run, cfg: &PipelineConfig, manifest: Option<PathBuf>) -> anyhow::Result<()> {
    let manifest = match manifest {
        Some(m) => m,
        None => cfg.corpus()?.to_path_buf(),
    };
    run.input(&manifest)?;
    let docs = load_manifest(&manifest)?;
    let sentences: Vec<Sentence> = docs.iter().flat_map(|d| segment_with(d, &cfg.segmenter)).collect();
    log::info!("{} documents, {} sentences", docs.len(), sentences.len());
    write_jsonl(run, DOCUMENTS, &docs)?;
    write_jsonl(run, SENTENCES, &sentences)?;
    Ok(())
}

fn read_documents(run: &mut Run) -> anyhow::Result<Vec<Document>> {
    let path = run.input(&run.path(DOCUMENTS)).context("run `ingest` first")?;
    Ok(jsonl::read(&path)?)
}

fn embed_matrix(provider: &dyn EmbeddingProvider, sents: &[Sentence]) -> anyhow::Result<Matrix<f64>> {
    let texts: Vec<&str> = sents.iter().map(|s| s.text.as_str()).collect();
    let rows: Vec<Vec<f64>> = provider.embed(&texts)?.into_iter().map(|v| v.into_vec()).collect();
    Matrix::from_rows(&rows).context("embeddings have inconsistent dimensions")
}

fn match_pairs(run: &mut Run, cfg: &PipelineConfig, min_similarity: Option<f64>) -> anyhow::Result<()> {
    let min_similarity = min_similarity.unwrap_or(cfg.matching.min_similarity);
    let docs = read_documents(run)?;
    let provider = cfg.open_provider()?;
    let mut by_company: BTreeMap<&str, Vec<&Document>> = BTreeMap::new();
    for d in &docs {
        by_company.entry(d.company.as_str()).or_default().push(d);
    }
    let mut records: Vec<PairRecord> = Vec::new();
    for (company, mut periods) in by_company {
        periods.sort_by(|a, b| a.period.cmp(&b.period).then_with(|| a.id.cmp(&b.id)));
        for w in periods.windows(2) {
            let (sa, sb) = (segment_with(w[0], &cfg.segmenter), segment_with(w[1], &cfg.segmenter));
            if sa.is_empty() || sb.is_empty() {
                continue;
            }
            let sim = similarity_matrix(&embed_matrix(provider.as_ref(), &sa)?, &embed_matrix(provider.as_ref(), &sb)?)?;
            let assignment = hungarian_assign(&sim)?;
            let pairs = build_pairs(&assignment, &sa, &sb, company, min_similarity)?;
            log::info!("{company} {} -> {}: {} pairs", w[0].period, w[1].period, pairs.len());
            records.extend(pairs.iter().map(|p| p.to_record()));
        }
    }
    write_jsonl(run, PAIRS, &records)?;
    Ok(())
}

fn augment(run: &mut Run, cfg: &PipelineConfig, policy: &str, limit: Option<usize>) -> anyhow::Result<()> {
    let seed = stage_seed(cfg.seed, "augment");
    run.stage_seed = Some(seed);
    let docs: HashMap<String, Document> = read_documents(run)?.into_iter().map(|d| (d.id.clone(), d)).collect();
    let sent_path = run.input(&run.path(SENTENCES)).context("run `ingest` first")?;
    let sentences = read_sentences(&sent_path)?;
    let mut anchors: Vec<Anchor> = sentences
        .iter()
        .map(|s| {
            let doc = docs.get(&s.doc_id).with_context(|| format!("sentence {} has no document", s.id))?;
            Ok(Anchor::new(s, doc))
        })
        .collect::<anyhow::Result<_>>()?;
    if let Some(n) = limit {
        let mut idx: Vec<usize> = (0..anchors.len()).collect();
        idx.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
        idx.truncate(n);
        idx.sort_unstable();
        anchors = idx.into_iter().map(|i| anchors[i].clone()).collect();
    }
    let policy = match policy {
        "random" => CategoryPolicy::Random(seed),
        other => other.parse::<CategoryPolicy>()?,
    };
    let client = ChatClient::from_config(cfg.llm.clone())?;
    let checkpoint = run.path("triplets.partial.jsonl");
    let outcome = build_dataset(&anchors, &policy, &client, &BuildOptions { checkpoint: Some(checkpoint) })?;
    if !outcome.skipped.is_empty() {
        log::warn!("{} anchors skipped", outcome.skipped.len());
        write_jsonl(run, "triplets.skipped.jsonl", &outcome.skipped)?;
    }
    if outcome.dataset.is_empty() {
        bail!("no triplets were generated");
    }
    let path = run.path(TRIPLETS);
    outcome.dataset.write(&path)?;
    run.output(&path)?;
    Ok(())
}

fn read_triplets(run: &mut Run, given: Option<PathBuf>, default: &str) -> anyhow::Result<TripletDataset> {
    let path = run.input(&or_default(run, given, default))?;
    Ok(TripletDataset::read(&path)?)
}

fn assess(run: &mut Run, cfg: &PipelineConfig, triplets: Option<PathBuf>) -> anyhow::Result<()> {
    let ds = read_triplets(run, triplets, TRIPLETS)?;
    let provider = cfg.open_provider()?;
    let report = assess_dataset(&ds, provider.as_ref(), &cfg.assess)?;
    println!("{}", serde_json::to_string_pretty(&report)?);
    run.write_json("assessment.json", &report)?;
    Ok(())
}

fn train_head(
    run: &mut Run,
    cfg: &mut PipelineConfig,
    triplets: Option<PathBuf>,
    fraction: Option<f64>,
) -> anyhow::Result<()> {
    let ds = read_triplets(run, triplets, TRIPLETS)?;
    let fraction = fraction.unwrap_or(cfg.train_fraction);
    let (tr, te) = split_dataset(&ds, fraction, stage_seed(cfg.seed, "split"))?;
    for (name, part) in [(TRAIN_SPLIT, &tr), (TEST_SPLIT, &te)] {
        write_jsonl(run, name, part.records())?;
    }
    cfg.training.seed = stage_seed(cfg.seed, "train");
    run.stage_seed = Some(cfg.training.seed);
    let provider = cfg.open_provider()?;
    let ck_dir = run.path("checkpoints");
    std::fs::create_dir_all(&ck_dir)?;
    let opts = TrainOptions { checkpoint_dir: Some(ck_dir) };
    let (head, mut report) = train::<f64>(&tr, provider.as_ref(), &cfg.training, &opts)?;
    report.test_size = te.len();
    if let Some(p) = &report.checkpoint {
        run.output(p)?;
        report.checkpoint = Some(p.strip_prefix(&run.out).unwrap_or(p).to_path_buf());
    }
    run.write_json(HEAD, &Checkpoint::from_head(&head, &cfg.training, cfg.training.epochs))?;
    run.write_json("train_report.json", &report)?;
    println!("{}", serde_json::to_string_pretty(&report)?);
    Ok(())
}

#[derive(Serialize)]
struct EvalSection {
    baseline: EvalReport,
    head: EvalReport,
    comparison: Comparison,
}

#[derive(Serialize)]
struct EvalOutput {
    augmented: EvalSection,
    #[serde(skip_serializing_if = "Option::is_none")]
    annotated: Option<EvalSection>,
}

fn section(baseline: EvalReport, head: EvalReport) -> anyhow::Result<EvalSection> {
    let comparison = compare_models(&[baseline.clone(), head.clone()], 0)?;
    Ok(EvalSection { baseline, head, comparison })
}

fn evaluate(
    run: &mut Run,
    cfg: &PipelineConfig,
    head: Option<PathBuf>,
    test: Option<PathBuf>,
    annotated: Option<PathBuf>,
) -> anyhow::Result<()> {
    let head_path = run.input(&or_default(run, head, HEAD))?;
    let head = Checkpoint::read(&head_path)?.to_head::<f64>()?;
    let te = read_triplets(run, test, TEST_SPLIT)?;
    let provider = cfg.open_provider()?;
    let p = provider.as_ref();
    let augmented = section(eval_augmented::<f64>("baseline", &te, None, p)?, eval_augmented("head", &te, Some(&head), p)?)?;
    println!("augmented test set\n{}", augmented.comparison.to_table());
    let annotated = match annotated {
        Some(path) => {
            let pairs = read_labeled_pairs(&run.input(&path)?)?;
            let s = section(
                eval_annotated::<f64>("baseline", &pairs, None, p)?,
                eval_annotated("head", &pairs, Some(&head), p)?,
            )?;
            println!("annotated set\n{}", s.comparison.to_table());
            Some(s)
        }
        None => None,
    };
    run.write_json("eval_report.json", &EvalOutput { augmented, annotated })?;
    Ok(())
}

fn ablate(
    run: &mut Run,
    cfg: &mut PipelineConfig,
    triplets: Option<PathBuf>,
    annotated: Option<PathBuf>,
    rows: Vec<ShiftCategory>,
) -> anyhow::Result<()> {
    let ds = read_triplets(run, triplets, TRAIN_SPLIT)?;
    let pairs = read_labeled_pairs(&run.input(&or_default(run, annotated, ANNOTATED))?)?;
    if let Some(c) = rows.iter().find(|c| !c.is_shift()) {
        bail!("--exclude-category must be one of C1..C4, got {c}");
    }
    let rows = if rows.is_empty() { ShiftCategory::ALL.to_vec() } else { rows };
    cfg.training.seed = stage_seed(cfg.seed, "ablate");
    run.stage_seed = Some(cfg.training.seed);
    let provider = cfg.open_provider()?;
    let matrix = ablation_rows(&ds, &pairs, provider.as_ref(), &cfg.training, &rows)?;
    let table = matrix.to_table();
    print!("{table}");
    run.write_json("ablation.json", &matrix)?;
    let txt = run.path("ablation.txt");
    std::fs::write(&txt, table)?;
    run.output(&txt)?;
    Ok(())
}

fn open_log(run: &mut Run, given: Option<PathBuf>) -> anyhow::Result<AnnotationStore> {
    let path = run.input(&or_default(run, given, EVENT_LOG))?;
    Ok(AnnotationStore::open(&path)?)
}

fn kappa(run: &mut Run, log: Option<PathBuf>, joint: bool) -> anyhow::Result<()> {
    let store = open_log(run, log)?;
    let mode = if joint { AgreementMode::Joint } else { AgreementMode::Score };
    let agreement = store.compute_agreement(mode)?;
    println!("{}", serde_json::to_string(&agreement)?);
    run.write_json("kappa.json", &agreement)?;
    Ok(())
}

fn export(run: &mut Run, log: Option<PathBuf>) -> anyhow::Result<()> {
    let store = open_log(run, log)?;
    let labels = store.export_labels();
    log::info!("{} labeled pairs", labels.len());
    write_jsonl(run, ANNOTATED, &labels)?;
    Ok(())
}
