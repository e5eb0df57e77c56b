//! `sloma` — command-line front end for the toolkit.
//!
//! Exit codes: 0 success, 1 usage error, 2 data error, 3 training
//! divergence. Every run echoes its resolved configuration to stderr;
//! stdout carries only TSV payloads.

use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use sloma_core::{
    build_social_submatrices, compare, coverage, run_experiment,
    save_coverage, save_ground_truth, save_model, split, train_model, training_rmse,
    write_comparison_tsv, write_experiment_tsv, CombineRule, ConnectorStrategy, Construction,
    DataError, EnsembleModel, EvalError, GraphError, LlormaConfig, ModelSpec, Origin, RatingMatrix,
    SlomaConfig, SocialGraph, SplitSpec, SyntheticSpec, TrainConfig, TrainError, TrainedModel,
};

#[derive(Parser)]
#[command(name = "sloma", version, about = "Social local low-rank rating prediction toolkit")]
struct Cli {
    /// Worker threads (default: SLOMA_THREADS env var, else all cores).
    /// Never changes numeric output.
    #[arg(long, global = true)]
    threads: Option<usize>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic planted-group benchmark.
    Generate(GenerateArgs),
    /// Split a rating file into train/test parts.
    Split(SplitArgs),
    /// Train one model on a full data set and optionally save it.
    Train(TrainArgs),
    /// Train and score one model over repeated seeded splits.
    Evaluate(EvaluateArgs),
    /// Run several models over the same splits and tabulate them.
    Compare(CompareArgs),
    /// Report user/rating coverage of the social submatrices.
    Coverage(CoverageArgs),
}

#[derive(Args)]
struct GenerateArgs {
    /// TOML file holding the generator parameters.
    #[arg(long)]
    spec: PathBuf,
    /// Output rating TSV.
    #[arg(long)]
    out_ratings: PathBuf,
    /// Output edge TSV.
    #[arg(long)]
    out_edges: PathBuf,
    /// Optional output of the planted user groups.
    #[arg(long)]
    out_groups: Option<PathBuf>,
}

#[derive(Args)]
struct SplitArgs {
    /// Rating TSV (or synthetic .toml spec).
    #[arg(long)]
    data: PathBuf,
    #[arg(long, default_value_t = 0.8)]
    train_fraction: f64,
    #[arg(long, default_value_t = 42)]
    seed: u64,
    #[arg(long)]
    out_train: PathBuf,
    #[arg(long)]
    out_test: PathBuf,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum ModelName {
    Regsvd,
    Socreg,
    Llorma,
    Sloma,
    #[value(name = "sloma++")]
    SlomaPlusPlus,
}

#[derive(Clone, Copy, ValueEnum)]
enum ConnectorName {
    Hub,
    Random,
    RandomHub,
    Greedy,
}

/// Flags shared by train/evaluate/compare.
#[derive(Args, Clone)]
struct ModelFlags {
    /// Factor rank K.
    #[arg(long, default_value_t = 10)]
    k: usize,
    #[arg(long, default_value_t = 0.05)]
    lambda: f64,
    /// SGD learning rate.
    #[arg(long, default_value_t = 0.05)]
    lr: f64,
    #[arg(long, default_value_t = 200)]
    epochs: usize,
    /// Social regularization weight (socreg, sloma++).
    #[arg(long, default_value_t = 0.1)]
    beta: f64,
    #[arg(long, default_value_t = 42)]
    seed: u64,
    /// Number of local models (llorma, sloma).
    #[arg(long, default_value_t = 50)]
    q: usize,
    /// Hop threshold for sloma submatrix construction, in [1,6].
    #[arg(long, default_value_t = 3)]
    hops: usize,
    /// Lift the [1,6] hop bound (experimentation only).
    #[arg(long, default_value_t = false)]
    unsafe_hops: bool,
    #[arg(long, value_enum, default_value_t = ConnectorName::Hub)]
    connector: ConnectorName,
    /// Candidate pool size for random-hub connectors.
    #[arg(long)]
    pool_size: Option<usize>,
    /// heuristic | community | community-file=PATH
    #[arg(long, default_value = "heuristic")]
    construction: String,
    /// Per-submatrix social regularization (turns sloma into sloma++).
    #[arg(long, default_value_t = false)]
    social_reg: bool,
    /// llorma anchor user distance threshold (radians).
    #[arg(long, default_value_t = std::f64::consts::FRAC_PI_2)]
    d1: f64,
    /// llorma anchor item distance threshold (radians).
    #[arg(long, default_value_t = std::f64::consts::FRAC_PI_2)]
    d2: f64,
    /// llorma kernel bandwidth (radians).
    #[arg(long, default_value_t = 0.8)]
    bandwidth: f64,
    /// Clamp predictions into [1,5] before scoring.
    #[arg(long, default_value_t = false)]
    clamp: bool,
}

#[derive(Args)]
struct TrainArgs {
    #[arg(long, value_enum)]
    model: ModelName,
    /// Rating TSV, or a synthetic-spec .toml to generate in memory.
    #[arg(long)]
    data: PathBuf,
    /// Edge TSV (required for socreg/sloma unless --data is synthetic).
    #[arg(long)]
    edges: Option<PathBuf>,
    /// Model dump: a file for global models, a directory for ensembles.
    #[arg(long)]
    out: Option<PathBuf>,
    #[command(flatten)]
    flags: ModelFlags,
}

#[derive(Args)]
struct EvaluateArgs {
    #[arg(long, value_enum)]
    model: ModelName,
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    edges: Option<PathBuf>,
    #[arg(long, default_value_t = 0.8)]
    train_fraction: f64,
    #[arg(long, default_value_t = 5)]
    repeats: usize,
    /// Also write the TSV (and a .config.toml sidecar) here.
    #[arg(long)]
    out: Option<PathBuf>,
    #[command(flatten)]
    flags: ModelFlags,
}

#[derive(Args)]
struct CompareArgs {
    /// Comma-separated list, e.g. regsvd,llorma,sloma,sloma++.
    #[arg(long)]
    models: String,
    /// Model whose RMSE reduction is reported (default: last listed).
    #[arg(long)]
    candidate: Option<String>,
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    edges: Option<PathBuf>,
    #[arg(long, default_value_t = 0.8)]
    train_fraction: f64,
    #[arg(long, default_value_t = 5)]
    repeats: usize,
    /// Also write the TSV (and a .config.toml sidecar) here.
    #[arg(long)]
    out: Option<PathBuf>,
    #[command(flatten)]
    flags: ModelFlags,
}

#[derive(Args)]
struct CoverageArgs {
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    edges: Option<PathBuf>,
    /// Also write the TSV here.
    #[arg(long)]
    out: Option<PathBuf>,
    #[command(flatten)]
    flags: ModelFlags,
}

/// Anything that maps to a nonzero exit code.
enum CliError {
    Usage(String),
    Data(String),
    Diverged(String),
}

impl CliError {
    fn code(&self) -> u8 {
        match self {
            CliError::Usage(_) => 1,
            CliError::Data(_) => 2,
            CliError::Diverged(_) => 3,
        }
    }
    fn message(&self) -> &str {
        match self {
            CliError::Usage(m) | CliError::Data(m) | CliError::Diverged(m) => m,
        }
    }
}

impl From<DataError> for CliError {
    fn from(e: DataError) -> Self {
        CliError::Data(e.to_string())
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Data(e.to_string())
    }
}

impl From<GraphError> for CliError {
    fn from(e: GraphError) -> Self {
        CliError::Usage(e.to_string())
    }
}

impl From<TrainError> for CliError {
    fn from(e: TrainError) -> Self {
        fn diverged(e: &TrainError) -> bool {
            match e {
                TrainError::Diverged { .. } => true,
                TrainError::Local { source, .. } => diverged(source),
                _ => false,
            }
        }
        let msg = e.to_string();
        if diverged(&e) {
            CliError::Diverged(msg)
        } else {
            match e {
                TrainError::InvalidConfig(_) | TrainError::Graph(_) => CliError::Usage(msg),
                _ => CliError::Data(msg),
            }
        }
    }
}

impl From<EvalError> for CliError {
    fn from(e: EvalError) -> Self {
        let msg = e.to_string();
        match e {
            EvalError::Repeat { source, .. } => {
                let inner: CliError = source.into();
                match inner {
                    CliError::Diverged(_) => CliError::Diverged(msg),
                    CliError::Usage(_) => CliError::Usage(msg),
                    CliError::Data(_) => CliError::Data(msg),
                }
            }
            EvalError::TooFewModels(_) | EvalError::UnknownReference(_) => CliError::Usage(msg),
            EvalError::Data(_) | EvalError::Empty => CliError::Data(msg),
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            // help/version are successes; everything else is usage error 1
            use clap::error::ErrorKind;
            let code = match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => 0,
                _ => 1,
            };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };

    if let Err(e) = init_threads(cli.threads) {
        eprintln!("error: {}", e.message());
        return ExitCode::from(e.code());
    }

    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {}", e.message());
            ExitCode::from(e.code())
        }
    }
}

fn init_threads(flag: Option<usize>) -> Result<(), CliError> {
    let n = match flag {
        Some(n) => Some(n),
        None => match std::env::var("SLOMA_THREADS") {
            Ok(v) => Some(
                v.parse::<usize>()
                    .map_err(|_| CliError::Usage(format!("SLOMA_THREADS not a number: {v}")))?,
            ),
            Err(_) => None,
        },
    };
    if let Some(n) = n {
        if n == 0 {
            return Err(CliError::Usage("--threads must be >= 1".into()));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| CliError::Usage(e.to_string()))?;
    }
    Ok(())
}

fn run(command: Command) -> Result<(), CliError> {
    match command {
        Command::Generate(a) => cmd_generate(a),
        Command::Split(a) => cmd_split(a),
        Command::Train(a) => cmd_train(a),
        Command::Evaluate(a) => cmd_evaluate(a),
        Command::Compare(a) => cmd_compare(a),
        Command::Coverage(a) => cmd_coverage(a),
    }
}

/// Loads a dataset: a `.toml` path is a synthetic spec generated in
/// memory (graph included); anything else is a rating TSV plus an
/// optional edge TSV.
fn load_dataset(
    data: &Path,
    edges: Option<&Path>,
) -> Result<(RatingMatrix, Option<SocialGraph>), CliError> {
    if data.extension().is_some_and(|e| e == "toml") {
        let spec = read_synthetic_spec(data)?;
        let (ratings, graph, _) = sloma_core::generate_synthetic(&spec)?;
        Ok((ratings, Some(graph)))
    } else {
        let ratings = sloma_core::load_ratings(data)?;
        let graph = match edges {
            Some(p) => Some(sloma_core::load_edges(p, &ratings)?),
            None => None,
        };
        Ok((ratings, graph))
    }
}

fn read_synthetic_spec(path: &Path) -> Result<SyntheticSpec, CliError> {
    let text = std::fs::read_to_string(path)?;
    toml::from_str(&text).map_err(|e| CliError::Data(format!("{}: {e}", path.display())))
}

fn parse_construction(s: &str) -> Result<Construction, CliError> {
    match s {
        "heuristic" => Ok(Construction::Heuristic),
        "community" => Ok(Construction::CommunityDetected),
        _ => match s.strip_prefix("community-file=") {
            Some(p) if !p.is_empty() => Ok(Construction::CommunityFile(PathBuf::from(p))),
            _ => Err(CliError::Usage(format!(
                "--construction must be heuristic, community, or community-file=PATH (got '{s}')"
            ))),
        },
    }
}

fn check_hops(flags: &ModelFlags) -> Result<(), CliError> {
    if !flags.unsafe_hops && !(1..=6).contains(&flags.hops) {
        return Err(CliError::Usage(format!(
            "--hops must be in [1,6] (got {}); pass --unsafe-hops to override",
            flags.hops
        )));
    }
    if flags.hops == 0 {
        return Err(CliError::Usage("--hops must be >= 1".into()));
    }
    Ok(())
}

fn base_train_config(flags: &ModelFlags) -> TrainConfig {
    TrainConfig {
        lambda: flags.lambda,
        learning_rate: flags.lr,
        max_epochs: flags.epochs,
        seed: flags.seed,
        ..TrainConfig::new(flags.k)
    }
}

fn build_model_spec(name: ModelName, flags: &ModelFlags) -> Result<ModelSpec, CliError> {
    let local = base_train_config(flags);
    Ok(match name {
        ModelName::Regsvd => ModelSpec::RegSvd(local),
        ModelName::Socreg => ModelSpec::SocReg(TrainConfig { beta: flags.beta, ..local }),
        ModelName::Llorma => ModelSpec::Llorma(LlormaConfig {
            q: flags.q,
            d1: flags.d1,
            d2: flags.d2,
            bandwidth: flags.bandwidth,
            local: local.clone(),
            seed: flags.seed,
            ..LlormaConfig::new(flags.k)
        }),
        ModelName::Sloma | ModelName::SlomaPlusPlus => {
            check_hops(flags)?;
            let social = flags.social_reg || name == ModelName::SlomaPlusPlus;
            ModelSpec::Sloma(SlomaConfig {
                q: flags.q,
                d: flags.hops,
                connector: connector_strategy(flags),
                construction: parse_construction(&flags.construction)?,
                social_reg: social,
                local: TrainConfig {
                    beta: if social { flags.beta } else { 0.0 },
                    ..local
                },
                seed: flags.seed,
            })
        }
    })
}

fn connector_strategy(flags: &ModelFlags) -> ConnectorStrategy {
    match flags.connector {
        ConnectorName::Hub => ConnectorStrategy::Hub,
        ConnectorName::Random => ConnectorStrategy::Random { seed: flags.seed },
        ConnectorName::RandomHub => ConnectorStrategy::RandomHub {
            pool_size: flags.pool_size.unwrap_or(flags.q.saturating_mul(3).max(1)),
            seed: flags.seed,
        },
        ConnectorName::Greedy => ConnectorStrategy::Greedy,
    }
}

/// Echoes the resolved configuration to stderr (and optionally a
/// sidecar file) as TOML, keeping stdout pure TSV.
fn echo_config<T: serde::Serialize>(label: &str, config: &T, sidecar: Option<&Path>) -> Result<(), CliError> {
    let text = toml::to_string_pretty(config)
        .map_err(|e| CliError::Data(format!("config serialization: {e}")))?;
    eprintln!("# resolved {label} configuration");
    for line in text.lines() {
        eprintln!("# {line}");
    }
    if let Some(p) = sidecar {
        std::fs::write(p, &text)?;
    }
    Ok(())
}

fn sidecar_path(out: Option<&Path>) -> Option<PathBuf> {
    out.map(|p| {
        let mut s = p.as_os_str().to_owned();
        s.push(".config.toml");
        PathBuf::from(s)
    })
}

fn cmd_generate(a: GenerateArgs) -> Result<(), CliError> {
    let spec = read_synthetic_spec(&a.spec)?;
    echo_config("generate", &spec, None)?;
    let (ratings, graph, truth) = sloma_core::generate_synthetic(&spec)?;
    write_ratings_tsv(&a.out_ratings, &ratings)?;
    write_edges_tsv(&a.out_edges, &ratings, &graph)?;
    if let Some(p) = &a.out_groups {
        save_ground_truth(p, &truth, &ratings)?;
    }
    eprintln!(
        "# wrote {} ratings ({} users x {} items), {} edges, clipped fraction {:.4}",
        ratings.num_ratings(),
        ratings.num_users(),
        ratings.num_items(),
        graph.num_edges(),
        truth.clipped_fraction
    );
    Ok(())
}

fn write_ratings_tsv(path: &Path, ratings: &RatingMatrix) -> Result<(), CliError> {
    let mut w = std::io::BufWriter::new(std::fs::File::create(path)?);
    for e in ratings.entries() {
        writeln!(
            w,
            "{}\t{}\t{}",
            ratings.user_ids()[e.user],
            ratings.item_ids()[e.item],
            e.rating
        )?;
    }
    Ok(())
}

fn write_edges_tsv(path: &Path, ratings: &RatingMatrix, graph: &SocialGraph) -> Result<(), CliError> {
    let mut w = std::io::BufWriter::new(std::fs::File::create(path)?);
    for (u, v) in graph.edges() {
        writeln!(w, "{}\t{}", ratings.user_ids()[u], ratings.user_ids()[v])?;
    }
    Ok(())
}

fn cmd_split(a: SplitArgs) -> Result<(), CliError> {
    let (ratings, _) = load_dataset(&a.data, None)?;
    let spec = SplitSpec {
        train_fraction: a.train_fraction,
        seed: a.seed,
        repeats: 1,
    };
    echo_config("split", &spec, None)?;
    let (train_side, test_side) = split(&ratings, &spec)?;
    write_ratings_tsv(&a.out_train, &train_side)?;
    let mut w = std::io::BufWriter::new(std::fs::File::create(&a.out_test)?);
    for e in &test_side {
        writeln!(
            w,
            "{}\t{}\t{}",
            ratings.user_ids()[e.user],
            ratings.item_ids()[e.item],
            e.rating
        )?;
    }
    eprintln!("# {} train / {} test", train_side.num_ratings(), test_side.len());
    Ok(())
}

fn require_graph(graph: Option<SocialGraph>, model: &ModelSpec) -> Result<Option<SocialGraph>, CliError> {
    match model {
        ModelSpec::SocReg(_) | ModelSpec::Sloma(_) if graph.is_none() => Err(CliError::Data(
            format!("model '{}' needs --edges (or synthetic data)", model.name()),
        )),
        _ => Ok(graph),
    }
}

fn cmd_train(a: TrainArgs) -> Result<(), CliError> {
    let spec = build_model_spec(a.model, &a.flags)?;
    echo_config("train", &spec, sidecar_path(a.out.as_deref()).as_deref())?;
    let (ratings, graph) = load_dataset(&a.data, a.edges.as_deref())?;
    let graph = require_graph(graph, &spec)?;
    let trained = train_model(&ratings, graph.as_ref(), &spec)?;
    match &trained {
        TrainedModel::Global(m) => {
            eprintln!("# training RMSE {:.6}", training_rmse(&ratings, m));
            if let Some(out) = &a.out {
                save_model(out, m)?;
            }
        }
        TrainedModel::SlomaEnsemble(e) | TrainedModel::LlormaEnsemble(e) => {
            eprintln!("# {} local models, global mean {:.6}", e.locals.len(), e.global_mean);
            if let Some(out) = &a.out {
                save_ensemble(out, e)?;
            }
        }
    }
    Ok(())
}

/// Dumps an ensemble as a directory: one factor dump per local model
/// plus a manifest carrying the combine rule, global mean, and each
/// model's user/item sets.
fn save_ensemble(dir: &Path, ensemble: &EnsembleModel) -> Result<(), CliError> {
    std::fs::create_dir_all(dir)?;
    let mut manifest = std::io::BufWriter::new(std::fs::File::create(dir.join("manifest.tsv"))?);
    match ensemble.combine {
        CombineRule::UniformAverage => writeln!(manifest, "combine\tuniform")?,
        CombineRule::KernelWeighted { bandwidth } => {
            writeln!(manifest, "combine\tkernel\t{bandwidth:.16e}")?
        }
    }
    writeln!(manifest, "global_mean\t{:.16e}", ensemble.global_mean)?;
    if let Some(g) = &ensemble.anchor_factors {
        save_model(dir.join("global.model"), g)?;
        writeln!(manifest, "global_factors\tglobal.model")?;
    }
    for (i, local) in ensemble.locals.iter().enumerate() {
        let file = format!("local_{i}.model");
        save_model(dir.join(&file), &local.factors)?;
        let origin = match local.submatrix.origin {
            Origin::Anchor { user, item } => format!("anchor:{user},{item}"),
            Origin::Connector { user } => format!("connector:{user}"),
            Origin::Community { id } => format!("community:{id}"),
        };
        writeln!(
            manifest,
            "local\t{file}\t{origin}\t{}\t{}",
            join_indexes(&local.submatrix.users),
            join_indexes(&local.submatrix.items),
        )?;
    }
    Ok(())
}

fn join_indexes(xs: &[usize]) -> String {
    xs.iter()
        .map(|x| x.to_string())
        .collect::<Vec<_>>()
        .join(",")
}

fn cmd_evaluate(a: EvaluateArgs) -> Result<(), CliError> {
    let spec = build_model_spec(a.model, &a.flags)?;
    let split_spec = SplitSpec {
        train_fraction: a.train_fraction,
        seed: a.flags.seed,
        repeats: a.repeats,
    };
    let echo = ExperimentConfig {
        split: &split_spec,
        models: std::slice::from_ref(&spec),
        clamp: a.flags.clamp,
    };
    echo_config("evaluate", &echo, sidecar_path(a.out.as_deref()).as_deref())?;
    let (ratings, graph) = load_dataset(&a.data, a.edges.as_deref())?;
    let graph = require_graph(graph, &spec)?;
    let rows = run_experiment(&ratings, graph.as_ref(), &spec, &split_spec, a.flags.clamp)?;
    let mut buf = Vec::new();
    write_experiment_tsv(&rows, &mut buf)?;
    emit(&buf, a.out.as_deref())
}

fn cmd_compare(a: CompareArgs) -> Result<(), CliError> {
    let mut specs = Vec::new();
    for name in a.models.split(',') {
        let parsed = ModelName::from_str(name.trim(), true)
            .map_err(|_| CliError::Usage(format!("unknown model '{name}'")))?;
        specs.push(build_model_spec(parsed, &a.flags)?);
    }
    let split_spec = SplitSpec {
        train_fraction: a.train_fraction,
        seed: a.flags.seed,
        repeats: a.repeats,
    };
    let echo = ExperimentConfig {
        split: &split_spec,
        models: &specs,
        clamp: a.flags.clamp,
    };
    echo_config("compare", &echo, sidecar_path(a.out.as_deref()).as_deref())?;
    let (ratings, graph) = load_dataset(&a.data, a.edges.as_deref())?;
    for spec in &specs {
        if graph.is_none() {
            require_graph(None, spec)?;
        }
    }
    let rows = compare(
        &specs,
        &ratings,
        graph.as_ref(),
        &split_spec,
        a.flags.clamp,
        a.candidate.as_deref(),
    )?;
    let mut buf = Vec::new();
    write_comparison_tsv(&rows, &mut buf)?;
    emit(&buf, a.out.as_deref())
}

fn cmd_coverage(a: CoverageArgs) -> Result<(), CliError> {
    check_hops(&a.flags)?;
    let config = SlomaConfig {
        q: a.flags.q,
        d: a.flags.hops,
        connector: connector_strategy(&a.flags),
        construction: parse_construction(&a.flags.construction)?,
        social_reg: a.flags.social_reg,
        local: base_train_config(&a.flags),
        seed: a.flags.seed,
    };
    echo_config("coverage", &config, None)?;
    let (ratings, graph) = load_dataset(&a.data, a.edges.as_deref())?;
    let graph = graph.ok_or_else(|| CliError::Data("coverage needs --edges (or synthetic data)".into()))?;
    let skeletons = build_social_submatrices(&ratings, &graph, &config)?;
    let report = coverage(&skeletons, &ratings, ratings.num_users());
    if let Some(out) = &a.out {
        save_coverage(out, &report)?;
    }
    let mut buf = Vec::new();
    report.write_tsv(&mut buf)?;
    std::io::stdout().write_all(&buf)?;
    Ok(())
}

#[derive(serde::Serialize)]
struct ExperimentConfig<'a> {
    split: &'a SplitSpec,
    models: &'a [ModelSpec],
    clamp: bool,
}

/// Writes a TSV payload to stdout and, if given, to a file as well.
fn emit(buf: &[u8], out: Option<&Path>) -> Result<(), CliError> {
    std::io::stdout().write_all(buf)?;
    if let Some(p) = out {
        std::fs::write(p, buf)?;
    }
    Ok(())
}
