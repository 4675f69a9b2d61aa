use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Duration;

use cog_core::contrastive::{check_fixture, BatchFixture};
use cog_core::corpus::{
    load_corpus, pairs_from_linking, read_jsonl, select_common, select_long_tailed, LinkingRecord, NameMatch,
    COMMON_VIEWTIMES, LONG_TAIL_VIEWTIMES,
};
use cog_core::eval::{classification_metrics, classify_pairs, run_experiment, EvalReport};
use cog_core::fusion::rank_candidates;
use cog_core::scorer::{make_synthetic_scorer, CachedScorer, RemoteScorer, RemoteScorerConfig};
use cog_core::world::generate_world;
use cog_core::{Corpus, ExperimentConfig, GroundingConfig, ImageRef, PairRecord, Scorer, SyntheticWorldConfig};
use cog_service::{serve_on, AppState, VerificationQueue};
use serde::Serialize;

use crate::error::CliError;
use crate::{
    ClassifyArgs, CorpusArgs, ExperimentArgs, GenerateArgs, GroundingArgs, IngestArgs, LossCheckArgs, RankArgs,
    ScorerArgs, ScorerMode, SelectArgs, ServeArgs, WorldArgs,
};

const ENTITIES_FILE: &str = "entities.jsonl";
const IMAGES_FILE: &str = "images.jsonl";
const PAIRS_FILE: &str = "pairs.jsonl";
const WORLD_FILE: &str = "world.json";

fn write_jsonl<T: Serialize>(path: &Path, rows: impl IntoIterator<Item = T>) -> Result<(), CliError> {
    let mut w = BufWriter::new(File::create(path).map_err(|e| CliError::runtime(format!("{}: {e}", path.display())))?);
    for row in rows {
        serde_json::to_writer(&mut w, &row).map_err(CliError::runtime)?;
        w.write_all(b"\n")?;
    }
    w.flush()?;
    Ok(())
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), CliError> {
    let mut text = serde_json::to_string_pretty(value).map_err(CliError::runtime)?;
    text.push('\n');
    std::fs::write(path, text).map_err(|e| CliError::runtime(format!("{}: {e}", path.display())))
}

fn create_dir(dir: &Path) -> Result<(), CliError> {
    std::fs::create_dir_all(dir).map_err(|e| CliError::runtime(format!("{}: {e}", dir.display())))
}

fn write_bundle(dir: &Path, corpus: &Corpus) -> Result<(), CliError> {
    create_dir(dir)?;
    write_jsonl(&dir.join(ENTITIES_FILE), corpus.entities())?;
    write_jsonl(&dir.join(IMAGES_FILE), corpus.images())?;
    write_jsonl(&dir.join(PAIRS_FILE), corpus.pairs())?;
    write_json(&dir.join("summary.json"), &corpus.summary())
}

fn load_bundle(args: &CorpusArgs) -> Result<Corpus, CliError> {
    let dir = &args.corpus;
    if !dir.is_dir() {
        return Err(CliError::runtime(format!("{}: corpus directory not found", dir.display())));
    }
    let pairs = dir.join(PAIRS_FILE);
    let pairs = pairs.exists().then_some(pairs);
    Ok(load_corpus(&dir.join(ENTITIES_FILE), &dir.join(IMAGES_FILE), pairs.as_deref())?)
}

fn world_config(base: Option<&Path>, overrides: &WorldArgs) -> Result<SyntheticWorldConfig, CliError> {
    let mut config = match base.map(|dir| dir.join(WORLD_FILE)).filter(|p| p.exists()) {
        Some(path) => {
            let text = std::fs::read_to_string(&path)?;
            serde_json::from_str(&text).map_err(|e| CliError::validation(format!("{}: {e}", path.display())))?
        }
        None => SyntheticWorldConfig::default(),
    };
    let WorldArgs {
        world_seed,
        noise_sigma,
        name_weight,
        concept_weight,
        bias,
        distractor_overlap,
    } = overrides.clone();
    config.seed = world_seed.unwrap_or(config.seed);
    config.noise_sigma = noise_sigma.unwrap_or(config.noise_sigma);
    config.name_weight = name_weight.unwrap_or(config.name_weight);
    config.concept_weight = concept_weight.unwrap_or(config.concept_weight);
    config.bias = bias.unwrap_or(config.bias);
    config.distractor_overlap = distractor_overlap.unwrap_or(config.distractor_overlap);
    config.validate()?;
    Ok(config)
}

fn build_scorer(args: &ScorerArgs, corpus: &Corpus, corpus_dir: &Path) -> Result<Arc<dyn Scorer>, CliError> {
    match args.scorer {
        ScorerMode::Synthetic => {
            let config = world_config(Some(corpus_dir), &args.world)?;
            Ok(Arc::new(CachedScorer::new(make_synthetic_scorer(corpus, config)?)))
        }
        ScorerMode::Remote => {
            let url = args
                .scorer_url
                .clone()
                .ok_or_else(|| CliError::validation("--scorer remote needs --scorer-url or COG_SCORER_URL"))?;
            Ok(Arc::new(CachedScorer::new(RemoteScorer::new(RemoteScorerConfig {
                base_url: url,
                timeout: Duration::from_millis(args.scorer_timeout_ms),
                retries: args.scorer_retries,
            }))))
        }
    }
}

fn grounding_config(args: &GroundingArgs) -> Result<GroundingConfig, CliError> {
    let config = GroundingConfig {
        strategy: args.strategy,
        stages: args.stages,
        stage1_threshold: args.threshold,
        stage2_threshold: args.stage2_threshold.unwrap_or(args.threshold),
        log_base: args.log_base,
    };
    config.validate()?;
    Ok(config)
}

pub fn ingest(args: IngestArgs) -> Result<(), CliError> {
    let mut corpus = load_corpus(&args.entities, &args.images, args.pairs.as_deref())?;
    if let Some(path) = &args.linking {
        let links: Vec<LinkingRecord> = read_jsonl(path)?.into_iter().map(|(_, r)| r).collect();
        let mode = if args.case_insensitive {
            NameMatch::CaseInsensitive
        } else {
            NameMatch::Exact
        };
        let mut pairs = corpus.pairs().to_vec();
        pairs.extend(pairs_from_linking(&corpus, &links, mode)?);
        corpus = Corpus::from_parts(corpus.entities().to_vec(), corpus.images().to_vec(), pairs)?;
    }
    write_bundle(&args.out, &corpus)?;
    println!("{}", serde_json::to_string_pretty(&corpus.summary()).map_err(CliError::runtime)?);
    Ok(())
}

pub fn generate(args: GenerateArgs) -> Result<(), CliError> {
    let config = world_config(None, &args.world)?;
    let corpus = generate_world(args.entity_count, &config)?;
    write_bundle(&args.out, &corpus)?;
    write_json(&args.out.join(WORLD_FILE), &config)?;
    println!("{}", serde_json::to_string_pretty(&corpus.summary()).map_err(CliError::runtime)?);
    Ok(())
}

pub fn select_longtail(args: SelectArgs) -> Result<(), CliError> {
    let corpus = load_bundle(&args.corpus)?;
    let selected = if args.common {
        select_common(&corpus, args.threshold.unwrap_or(COMMON_VIEWTIMES))
    } else {
        select_long_tailed(&corpus, args.threshold.unwrap_or(LONG_TAIL_VIEWTIMES))
    };
    eprintln!("selected {} of {} entities", selected.len(), corpus.entities().len());
    match &args.out {
        Some(path) => write_jsonl(path, &selected),
        None => {
            let mut out = std::io::stdout().lock();
            for e in &selected {
                writeln!(out, "{}", serde_json::to_string(e).map_err(CliError::runtime)?)?;
            }
            Ok(())
        }
    }
}

pub fn experiment(args: ExperimentArgs) -> Result<(), CliError> {
    let corpus = load_bundle(&args.corpus)?;
    let config = ExperimentConfig {
        grounding: grounding_config(&args.grounding)?,
        seed: args.seed,
        split: args.split,
        ranking: !args.no_ranking,
    };
    let scorer = build_scorer(&args.scorer, &corpus, &args.corpus.corpus)?;
    let experiment = run_experiment(&corpus, scorer.as_ref(), &config)?;

    create_dir(&args.out)?;
    write_json(&args.out.join("report.json"), &experiment.report)?;
    write_jsonl(&args.out.join("verdicts.jsonl"), &experiment.verdicts)?;
    let label = format!("{}/{}", config.grounding.strategy, config.grounding.stages);
    let csv = format!("{}\n{}\n", EvalReport::csv_header(), experiment.report.csv_row(&label));
    if let Some(path) = &args.csv {
        std::fs::write(path, &csv).map_err(|e| CliError::runtime(format!("{}: {e}", path.display())))?;
    }
    print!("{csv}");
    Ok(())
}

#[derive(Serialize)]
struct RankedLine<'a> {
    id: &'a str,
    prediction: f64,
}

pub fn rank(args: RankArgs) -> Result<(), CliError> {
    let corpus = load_bundle(&args.corpus)?;
    let entity = corpus
        .entity(&args.entity)
        .ok_or_else(|| CliError::validation(format!("unknown entity {:?}", args.entity)))?;
    let candidates: Vec<ImageRef> = if args.candidates.is_empty() {
        corpus.images().to_vec()
    } else {
        args.candidates
            .iter()
            .map(|id| {
                corpus
                    .image(id)
                    .cloned()
                    .ok_or_else(|| CliError::validation(format!("unknown image {id:?}")))
            })
            .collect::<Result<_, _>>()?
    };
    let scorer = build_scorer(&args.scorer, &corpus, &args.corpus.corpus)?;
    let ranked = rank_candidates(entity, &candidates, scorer.as_ref(), args.strategy)?;
    let mut out = std::io::stdout().lock();
    for r in ranked.iter().take(args.top.unwrap_or(usize::MAX)) {
        let line = RankedLine {
            id: &r.image.id,
            prediction: r.prediction,
        };
        writeln!(out, "{}", serde_json::to_string(&line).map_err(CliError::runtime)?)?;
    }
    Ok(())
}

pub fn classify(args: ClassifyArgs) -> Result<(), CliError> {
    let corpus = load_bundle(&args.corpus)?;
    let config = grounding_config(&args.grounding)?;
    let pairs: Vec<PairRecord> = match &args.pairs {
        Some(path) => read_jsonl(path)?.into_iter().map(|(_, p)| p).collect(),
        None => corpus.pairs().to_vec(),
    };
    if pairs.is_empty() {
        return Err(CliError::validation("no pairs to classify"));
    }
    let scorer = build_scorer(&args.scorer, &corpus, &args.corpus.corpus)?;
    let verdicts = classify_pairs(&corpus, &pairs, scorer.as_ref(), &config)?;
    let outcomes: Vec<(bool, bool)> = verdicts.iter().map(|v| (v.verdict.final_label, v.actual)).collect();
    let metrics = classification_metrics(&outcomes)?;
    match &args.out {
        Some(path) => {
            write_jsonl(path, &verdicts)?;
            println!("{}", serde_json::to_string_pretty(&metrics).map_err(CliError::runtime)?);
        }
        None => {
            write_jsonl(Path::new("/dev/stdout"), &verdicts)?;
            eprintln!("{}", serde_json::to_string(&metrics).map_err(CliError::runtime)?);
        }
    }
    Ok(())
}

pub fn loss_check(args: LossCheckArgs) -> Result<(), CliError> {
    let text = std::fs::read_to_string(&args.fixture)
        .map_err(|e| CliError::runtime(format!("{}: {e}", args.fixture.display())))?;
    let fixture: BatchFixture = serde_json::from_str(&text)
        .map_err(|e| CliError::validation(format!("{}: {e}", args.fixture.display())))?;
    let result = check_fixture(fixture, args.tolerance)?;
    println!("{}", serde_json::to_string_pretty(&result).map_err(CliError::runtime)?);
    println!("max_abs_deviation {:e}", result.max_abs_deviation);
    if result.passed {
        Ok(())
    } else {
        Err(CliError::validation(format!(
            "loss check failed: deviation {:e} exceeds tolerance {:e}",
            result.max_abs_deviation, args.tolerance
        )))
    }
}

async fn shutdown_signal() {
    let ctrl_c = async {
        let _ = tokio::signal::ctrl_c().await;
    };
    #[cfg(unix)]
    let term = async {
        match tokio::signal::unix::signal(tokio::signal::unix::SignalKind::terminate()) {
            Ok(mut s) => {
                s.recv().await;
            }
            Err(_) => std::future::pending().await,
        }
    };
    #[cfg(not(unix))]
    let term = std::future::pending::<()>();
    tokio::select! {
        _ = ctrl_c => {},
        _ = term => {},
    }
}

pub fn serve(args: ServeArgs) -> Result<(), CliError> {
    let _ = tracing_subscriber::fmt()
        .with_env_filter(tracing_subscriber::EnvFilter::try_from_default_env().unwrap_or_else(|_| "info".into()))
        .with_writer(std::io::stderr)
        .try_init();
    let corpus = Arc::new(load_bundle(&args.corpus)?);
    let grounding = grounding_config(&args.grounding)?;
    let scorer = build_scorer(&args.scorer, &corpus, &args.corpus.corpus)?;
    if let Some(parent) = args.log.parent().filter(|p| !p.as_os_str().is_empty()) {
        create_dir(parent)?;
    }
    let queue = VerificationQueue::open(&args.log)?;
    let state = Arc::new(AppState::new(corpus, scorer, grounding, queue, args.token.clone())?);
    let ui_dir: Option<PathBuf> = args.ui_dir.clone();

    let runtime = tokio::runtime::Builder::new_multi_thread()
        .enable_all()
        .build()
        .map_err(CliError::runtime)?;
    runtime.block_on(async move {
        let listener = tokio::net::TcpListener::bind(args.bind)
            .await
            .map_err(|e| CliError::runtime(format!("cannot bind {}: {e}", args.bind)))?;
        let addr = listener.local_addr()?;
        println!("listening on http://{addr}");
        std::io::stdout().flush()?;
        serve_on(listener, state, ui_dir, shutdown_signal()).await?;
        Ok(())
    })
}
