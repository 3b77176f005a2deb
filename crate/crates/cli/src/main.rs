use std::collections::BTreeSet;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{error::ErrorKind, Args, Parser, Subcommand};
use rankiq::data::{
    build_synthetic_dataset, load_dataset, load_features, load_id_scores, load_scores_only, save_features,
    save_scores, write_id_scores, Dataset,
};
use rankiq::evalsuite::{evaluate, SessionConfig};
use rankiq::experiment::{run_demo, write_demo, DemoConfig};
use rankiq::froracles::{calibrate, level_anchors, score_images, Oracle};
use rankiq::gmad::{gmad_pairs, DEFAULT_BAND_EPS, DEFAULT_LEVELS};
use rankiq::pairgen::{
    chain_dils, generate_dips, load_dils, load_dips, save_dils, save_dips, DilConfig, DipConfig,
    DEFAULT_BUCKET_WIDTH, DEFAULT_TC,
};
use rankiq::pairrank::{train, TrainConfig};
use rankiq::qnet::{load_model, predict, save_model, ModelMeta, QNetModel, QualityModel, DEFAULT_HIDDEN};
use rankiq::FeatureMatrix;

#[derive(Parser)]
#[command(name = "rankiq", version, about = "Learning-to-rank blind image quality assessment")]
struct Cli {
    /// Worker threads; results are identical for any value
    #[arg(long, global = true, default_value_t = 1)]
    threads: usize,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Render synthetic sources and their distorted versions
    Synth(SynthArgs),
    /// Score images against their pristine sources with FR oracles
    Score(ScoreArgs),
    /// Generate quality-discriminable pairs, and optionally lists
    GenPairs(GenPairsArgs),
    /// Train a scoring network on pairs or lists
    Train(TrainArgs),
    /// Score every row of a features file
    Predict(PredictArgs),
    /// Evaluate model scores with the correlation and consistency criteria
    Eval(EvalArgs),
    /// Select maximum-differentiation pairs between two models
    Gmad(GmadArgs),
    /// Run the synthetic end-to-end experiment
    Demo(DemoArgs),
}

#[derive(Args)]
struct SynthArgs {
    #[arg(long, default_value_t = 200)]
    sources: usize,
    #[arg(long, default_value_t = 64)]
    side: u32,
    #[arg(long)]
    seed: u64,
    /// Output directory; receives images/, features.csv and scores.csv
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct ScoreArgs {
    /// Directory of <id>.png images
    #[arg(long)]
    images: PathBuf,
    /// Manifest: id,source_id,distortion,level[,oracles...]
    #[arg(long)]
    manifest: PathBuf,
    /// Comma-separated oracle names
    #[arg(long, default_value = "psnr,ssim")]
    oracles: String,
    /// Map each oracle to [0, 100] using the distortion levels as anchors
    #[arg(long)]
    calibrate: bool,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct GenPairsArgs {
    #[arg(long)]
    scores: PathBuf,
    #[arg(long, default_value_t = DEFAULT_TC)]
    tc: f64,
    #[arg(long, default_value_t = 0.0)]
    t_min: f64,
    /// Candidate pairs to examine; all pairs when omitted
    #[arg(long)]
    budget: Option<usize>,
    #[arg(long)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
    /// Also chain the pairs into three-element lists written here
    #[arg(long)]
    lists: Option<PathBuf>,
    #[arg(long, default_value_t = DEFAULT_BUCKET_WIDTH)]
    bucket: f64,
    #[arg(long)]
    list_budget: Option<usize>,
}

#[derive(Args)]
struct TrainArgs {
    #[arg(long, conflicts_with = "lists", required_unless_present = "lists")]
    pairs: Option<PathBuf>,
    #[arg(long)]
    lists: Option<PathBuf>,
    #[arg(long)]
    features: PathBuf,
    /// Source ids for the validation split; each image is its own source when omitted
    #[arg(long)]
    scores: Option<PathBuf>,
    /// "linear", "deep", or comma-separated hidden widths
    #[arg(long, default_value = "deep")]
    arch: String,
    #[arg(long, default_value_t = 512)]
    batch: usize,
    #[arg(long, default_value_t = 1e-4)]
    lr: f64,
    #[arg(long, default_value_t = 0.9)]
    momentum: f64,
    #[arg(long, default_value_t = 5e-4)]
    wd: f64,
    #[arg(long, default_value_t = 1)]
    epochs: usize,
    #[arg(long)]
    seed: u64,
    #[arg(long, default_value_t = 0.1)]
    val_frac: f64,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    log: Option<PathBuf>,
}

#[derive(Args)]
struct PredictArgs {
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    features: PathBuf,
    /// Output id,score CSV; stdout when omitted
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    features: PathBuf,
    #[arg(long)]
    scores: PathBuf,
    #[arg(long)]
    mos: Option<PathBuf>,
    /// Use this oracle column as the correlation target when no MOS is given
    #[arg(long, conflicts_with = "mos")]
    mos_oracle: Option<String>,
    /// Evaluation pairs for the P-test
    #[arg(long)]
    pairs: Option<PathBuf>,
    #[arg(long, default_value_t = 1000)]
    sessions: usize,
    #[arg(long, default_value_t = 0.8)]
    split: f64,
    #[arg(long)]
    seed: u64,
    /// Report PLCC without the logistic remap
    #[arg(long)]
    no_remap: bool,
    #[arg(long)]
    report: Option<PathBuf>,
}

#[derive(Args)]
struct GmadArgs {
    #[arg(long)]
    attacker: PathBuf,
    #[arg(long)]
    defender: PathBuf,
    #[arg(long, default_value_t = DEFAULT_LEVELS)]
    levels: usize,
    #[arg(long, default_value_t = DEFAULT_BAND_EPS)]
    eps: f64,
    /// Output CSV; stdout when omitted
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct DemoArgs {
    #[arg(long)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 200)]
    sources: usize,
    #[arg(long, default_value_t = 64)]
    side: u32,
    #[arg(long, default_value_t = 200_000)]
    pair_budget: usize,
    /// Lists for the listwise model; 0 skips it
    #[arg(long, default_value_t = 50_000)]
    list_budget: usize,
    #[arg(long, default_value_t = 100)]
    sessions: usize,
}

enum Failure {
    Usage(String),
    Data(rankiq::Error),
}

impl From<rankiq::Error> for Failure {
    fn from(e: rankiq::Error) -> Self {
        Failure::Data(e)
    }
}

type Outcome = std::result::Result<(), Failure>;

fn create_dir(dir: &Path) -> rankiq::Result<()> {
    fs::create_dir_all(dir).map_err(|e| rankiq::Error::Io { path: dir.to_path_buf(), source: e })
}

fn write_text(path: &Path, text: &str) -> rankiq::Result<()> {
    fs::write(path, text).map_err(|e| rankiq::Error::Io { path: path.to_path_buf(), source: e })
}

fn synth(a: SynthArgs) -> Outcome {
    let set = build_synthetic_dataset(a.sources, a.side, a.seed)?;
    let images = a.out.join("images");
    create_dir(&images)?;
    for (id, img) in set.images.iter().enumerate() {
        img.save(images.join(format!("{id}.png"))).map_err(rankiq::Error::from)?;
    }
    let ds = Dataset::new(set.records, Vec::new())?;
    save_features(&ds, &a.out.join("features.csv"))?;
    save_scores(&ds, &a.out.join("scores.csv"))?;
    Ok(())
}

fn score(a: ScoreArgs) -> Outcome {
    let oracles = a.oracles.split(',').map(|s| Oracle::parse(s.trim())).collect::<rankiq::Result<Vec<_>>>()?;
    let manifest = load_scores_only(&a.manifest)?;
    let images = manifest
        .records()
        .iter()
        .map(|r| {
            let path = a.images.join(format!("{}.png", r.id));
            Ok(image::open(&path).map_err(rankiq::Error::from)?.to_luma8())
        })
        .collect::<rankiq::Result<Vec<_>>>()?;
    let records = manifest.records().to_vec();
    let raw = score_images(&images, records, &oracles)?;
    let mut ds = raw.clone();
    if a.calibrate {
        for o in &oracles {
            ds = calibrate(&ds, o.name(), &level_anchors(&raw, o.name())?)?;
        }
    }
    save_scores(&ds, &a.out)?;
    Ok(())
}

fn gen_pairs(a: GenPairsArgs) -> Outcome {
    let ds = load_scores_only(&a.scores)?;
    let cfg = DipConfig { tc: a.tc, t_min: a.t_min, budget: a.budget.unwrap_or(usize::MAX), seed: a.seed };
    let dips = generate_dips(&ds, &cfg)?;
    save_dips(&a.out, &dips)?;
    if let Some(path) = a.lists {
        let cfg = DilConfig { bucket_width: a.bucket, budget: a.list_budget.unwrap_or(usize::MAX), seed: a.seed };
        save_dils(&path, &chain_dils(&dips, &cfg)?)?;
    }
    Ok(())
}

fn architecture(arch: &str, dim: usize) -> std::result::Result<Vec<usize>, Failure> {
    let hidden: Vec<usize> = match arch {
        "linear" => Vec::new(),
        "deep" => DEFAULT_HIDDEN.to_vec(),
        widths => widths
            .split(',')
            .map(|w| w.trim().parse().map_err(|_| Failure::Usage(format!("invalid --arch {arch:?}"))))
            .collect::<std::result::Result<_, _>>()?,
    };
    let mut dims = vec![dim];
    dims.extend(hidden);
    dims.push(1);
    Ok(dims)
}

fn train_cmd(a: TrainArgs) -> Outcome {
    let features: FeatureMatrix<f64> = load_features(&a.features)?;
    let source_of = match &a.scores {
        Some(path) => {
            let ds = load_scores_only(path)?;
            rankiq::error::check_dim(features.rows(), ds.len())?;
            ds.source_of()
        }
        None => (0..features.rows()).collect(),
    };
    let cfg = TrainConfig {
        batch_size: a.batch,
        momentum: a.momentum,
        weight_decay: a.wd,
        learning_rate: a.lr,
        epochs: a.epochs,
        seed: a.seed,
        validation_fraction: a.val_frac,
        ..TrainConfig::default()
    };
    let init = QNetModel::<f64>::init(&architecture(&a.arch, features.dim())?, a.seed)?;
    let (model, log, objective) = match (&a.pairs, &a.lists) {
        (Some(p), _) => {
            let (m, l) = train(init, &features, &source_of, &load_dips(p)?, &cfg)?;
            (m, l, "pairwise")
        }
        (None, Some(p)) => {
            let (m, l) = train(init, &features, &source_of, &load_dils(p)?, &cfg)?;
            (m, l, "listwise")
        }
        (None, None) => return Err(Failure::Usage("one of --pairs or --lists is required".into())),
    };
    let meta = ModelMeta { seed: Some(a.seed), config_digest: Some(cfg.digest()), objective: Some(objective.into()) };
    save_model(&model, &meta, &a.out)?;
    if let Some(path) = a.log {
        log.save_csv(&path)?;
    }
    Ok(())
}

fn model_scores(model: &Path, features: &Path) -> rankiq::Result<Vec<f64>> {
    let model = load_model::<f64>(model)?;
    let features = load_features(features)?;
    rankiq::error::check_dim(model.input_dim(), features.dim())?;
    predict(&model, &features)
}

fn emit_csv(out: Option<&Path>, write: impl FnOnce(&mut dyn Write) -> rankiq::Result<()>) -> rankiq::Result<()> {
    match out {
        Some(path) => {
            let mut file =
                fs::File::create(path).map_err(|e| rankiq::Error::Io { path: path.to_path_buf(), source: e })?;
            write(&mut file)
        }
        None => write(&mut std::io::stdout().lock()),
    }
}

fn predict_cmd(a: PredictArgs) -> Outcome {
    let scores = model_scores(&a.model, &a.features)?;
    emit_csv(a.out.as_deref(), |w| write_id_scores(w, &scores))?;
    Ok(())
}

fn eval_cmd(a: EvalArgs) -> Outcome {
    let ds = load_dataset(&a.features, &a.scores, a.mos.as_deref())?;
    let scores = model_scores(&a.model, &a.features)?;
    let targets: Option<Vec<Option<f64>>> = if a.mos.is_some() {
        Some(ds.records().iter().map(|r| r.mos).collect())
    } else if let Some(name) = &a.mos_oracle {
        Some(ds.oracle_column(name)?.into_iter().map(Some).collect())
    } else {
        None
    };
    let dips = a.pairs.as_deref().map(load_dips).transpose()?;
    let cfg = SessionConfig { sessions: a.sessions, split: a.split, seed: a.seed, remap: !a.no_remap };
    let report = evaluate(&ds, &scores, targets.as_deref(), dips.as_deref(), &cfg)?;
    let json = report.to_json()?;
    match a.report {
        Some(path) => write_text(&path, &json)?,
        None => print!("{json}"),
    }
    Ok(())
}

fn gmad_cmd(a: GmadArgs) -> Outcome {
    let attacker = load_id_scores(&a.attacker)?;
    let defender = load_id_scores(&a.defender)?;
    let pairs = gmad_pairs(&attacker, &defender, a.levels, a.eps)?;
    emit_csv(a.out.as_deref(), |w| {
        let mut w = csv_writer(w);
        w.write_record(["best", "worst", "level", "center"])?;
        for p in &pairs {
            w.write_record([p.best.to_string(), p.worst.to_string(), p.level.to_string(), p.center.to_string()])?;
        }
        w.flush().map_err(|e| rankiq::Error::Io { path: PathBuf::from("<output>"), source: e })
    })?;
    Ok(())
}

fn csv_writer(w: &mut dyn Write) -> csv::Writer<&mut dyn Write> {
    csv::Writer::from_writer(w)
}

fn demo(a: DemoArgs) -> Outcome {
    let cfg = DemoConfig {
        seed: a.seed,
        sources: a.sources,
        side: a.side,
        pair_budget: a.pair_budget,
        list_budget: a.list_budget,
        sessions: a.sessions,
        ..DemoConfig::default()
    };
    let output = run_demo(&cfg)?;
    create_dir(&a.out)?;
    write_demo(&output, &a.out)?;
    let sources: BTreeSet<_> = output.dataset.source_ids().into_iter().collect();
    eprintln!("demo: {} images from {} sources, {} pairs", output.dataset.len(), sources.len(), output.dips.len());
    for m in &output.report.models {
        let p = m.eval.p_test.map(|p| p.p).unwrap_or(f64::NAN);
        let l = m.eval.l_test.unwrap_or(f64::NAN);
        eprintln!("{:>10}: P {p:.4}  L {l:.4}  SRCC(PSNR) {:.4}", m.name, m.srcc_vs_psnr);
    }
    Ok(())
}

fn run(cli: Cli) -> Outcome {
    match cli.command {
        Command::Synth(a) => synth(a),
        Command::Score(a) => score(a),
        Command::GenPairs(a) => gen_pairs(a),
        Command::Train(a) => train_cmd(a),
        Command::Predict(a) => predict_cmd(a),
        Command::Eval(a) => eval_cmd(a),
        Command::Gmad(a) => gmad_cmd(a),
        Command::Demo(a) => demo(a),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => ExitCode::SUCCESS,
                _ => ExitCode::from(1),
            };
        }
    };
    if cli.threads == 0 {
        eprintln!("error: --threads must be at least 1");
        return ExitCode::from(1);
    }
    let pool = match rayon::ThreadPoolBuilder::new().num_threads(cli.threads).build() {
        Ok(pool) => pool,
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::from(2);
        }
    };
    match pool.install(|| run(cli)) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Usage(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(1)
        }
        Err(Failure::Data(e)) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}
