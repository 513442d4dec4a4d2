//! Command-line front end: every pipeline stage (data generation,
//! training, attribution, trigger construction, poisoning, evaluation,
//! defense filtering) is independently invocable, plus the full
//! multi-seed experiment sweep driven by a JSON config.
//!
//! Exit codes: 0 success, 1 configuration error, 2 experiment finished
//! with failed cells (partial results still written).

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{anyhow, Context, Result};
use clap::{Args, Parser, Subcommand};

use shapmark_core::attack::{
    build_poison_set, build_trigger_combined, build_trigger_independent, ConstraintProfile,
    FeatureSelector, SelectorConfig, Strategy, Trigger, ValueSelector,
};
use shapmark_core::dataset::{generate_synthetic, load_csv, save_csv, Dataset, SynthConfig};
use shapmark_core::defend::{
    density_cluster_filter, isolation_forest_filter, reduce_space, retrain_after_filter,
    spectral_filter, DefenseKind, FilterReport,
};
use shapmark_core::experiment::{
    emit_mitigation_csv, emit_report, load_report, run_experiment, ExperimentConfig, ReportFormat,
    ScenarioTag,
};
use shapmark_core::explain::{
    explain_dataset, load_shap_csv, save_shap_csv, Background, ExplainMethod, ExplainerConfig,
};
use shapmark_core::models::{evaluate, train, ModelKind, TrainConfig, TrainedModel};

#[derive(Parser)]
#[command(
    name = "shapmark",
    version,
    about = "Clean-label backdoor poisoning attacks and defenses for tabular binary classifiers"
)]
struct Cli {
    /// Worker threads for parallel sections (default: all cores).
    #[arg(long, global = true)]
    jobs: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic two-class dataset (CSV + spec sidecar).
    GenData(GenDataArgs),
    /// Train a classifier on a CSV dataset.
    Train(TrainArgs),
    /// Compute per-sample attributions for a trained model.
    Explain(ExplainArgs),
    /// Build a watermark trigger from attributions.
    Attack(AttackArgs),
    /// Watermark a fraction of benign training rows (clean-label).
    Poison(PoisonArgs),
    /// Evaluate a model on a dataset.
    Evaluate(EvaluateArgs),
    /// Apply a poison filter to a training set and report removals.
    Defend(DefendArgs),
    /// Run a full multi-seed attack (and optional defense) sweep.
    Experiment(ExperimentArgs),
    /// Convert a JSON report to CSV.
    Report(ReportArgs),
}

#[derive(Args)]
struct GenDataArgs {
    /// SynthConfig JSON; flags below override nothing when given.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Use the standard desk-scale corpus (10k rows, 30 integer features).
    #[arg(long, conflicts_with = "config")]
    desk: bool,
    #[arg(long, default_value_t = 2000)]
    samples: usize,
    #[arg(long, default_value_t = 12)]
    features: usize,
    #[arg(long, default_value_t = 12)]
    informative: usize,
    #[arg(long, default_value_t = 4)]
    subpopulations: usize,
    #[arg(long, default_value_t = 8.0)]
    separation: f64,
    #[arg(long, default_value_t = 0.7)]
    int_fraction: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Output CSV path; the spec sidecar lands next to it.
    #[arg(long)]
    out: PathBuf,
    /// Spec sidecar path (default: <out>.spec.json).
    #[arg(long)]
    spec: Option<PathBuf>,
}

#[derive(Args)]
struct TrainArgs {
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    spec: PathBuf,
    /// TrainConfig JSON; or use --kind for defaults.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    kind: Option<ModelKind>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct ExplainArgs {
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    spec: PathBuf,
    #[arg(long)]
    model: PathBuf,
    #[arg(long, default_value = "kernel")]
    method: ExplainMethod,
    #[arg(long, default_value_t = 2048)]
    samples: usize,
    #[arg(long, default_value_t = 100)]
    background: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct AttackArgs {
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    spec: PathBuf,
    #[arg(long)]
    shap: PathBuf,
    #[arg(long, default_value = "independent")]
    strategy: Strategy,
    #[arg(long, default_value = "large_abs_shap")]
    feature_selector: String,
    #[arg(long, default_value = "count_abs_shap")]
    value_selector: String,
    #[arg(long, default_value_t = 1.0)]
    alpha: f64,
    #[arg(long, default_value_t = 1.0)]
    beta: f64,
    #[arg(long, default_value_t = 8)]
    size: usize,
    /// Constraint profile JSON (default: the dataset's own specs).
    #[arg(long)]
    profile: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct PoisonArgs {
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    spec: PathBuf,
    #[arg(long)]
    trigger: PathBuf,
    #[arg(long)]
    fraction: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    profile: Option<PathBuf>,
    /// Output CSV; sidecar spec lands at <out>.spec.json.
    #[arg(long)]
    out: PathBuf,
    /// Poison plan JSON (ground-truth ids for defense scoring).
    #[arg(long)]
    plan: Option<PathBuf>,
}

#[derive(Args)]
struct EvaluateArgs {
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    spec: PathBuf,
    #[arg(long)]
    model: PathBuf,
    #[arg(long, default_value_t = 0.5)]
    threshold: f64,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct DefendArgs {
    /// The (possibly poisoned) training CSV to filter.
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    spec: PathBuf,
    /// Trusted clean CSV used to train the defender's model.
    #[arg(long)]
    trusted: PathBuf,
    #[arg(long)]
    trusted_spec: PathBuf,
    /// Defender/victim TrainConfig JSON; or --kind for defaults.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    kind: Option<ModelKind>,
    #[arg(long, default_value = "isolation_forest")]
    defense: DefenseKind,
    /// Reduced-space width (clamped to the feature count).
    #[arg(long, default_value_t = 32)]
    k: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Poison plan JSON for ground-truth removal scoring.
    #[arg(long)]
    plan: Option<PathBuf>,
    /// Watermarked malware CSV; when given, retrains after filtering and
    /// reports the post-defense accuracy.
    #[arg(long)]
    xb: Option<PathBuf>,
    #[arg(long)]
    xb_spec: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct ExperimentArgs {
    #[arg(long)]
    config: PathBuf,
    /// Output directory for report.json / report.csv / mitigation.csv.
    #[arg(long)]
    out: PathBuf,
    /// Override the config's base seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Override scenario tags (comma-separated: unrestricted,
    /// data_limited, transfer, black_box, constrained).
    #[arg(long)]
    scenario: Option<String>,
    /// Override the attack strategy.
    #[arg(long)]
    strategy: Option<Strategy>,
    /// Add defenses (comma-separated: spectral, hdbscan,
    /// isolation_forest).
    #[arg(long)]
    defense: Option<String>,
}

#[derive(Args)]
struct ReportArgs {
    #[arg(long)]
    input: PathBuf,
    #[arg(long, default_value = "csv")]
    format: String,
    #[arg(long)]
    out: PathBuf,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Some(jobs) = cli.jobs {
        if let Err(e) = rayon::ThreadPoolBuilder::new()
            .num_threads(jobs)
            .build_global()
        {
            eprintln!("error: failed to size worker pool: {e}");
            return ExitCode::from(1);
        }
    }
    match run(cli.command) {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}

fn run(command: Command) -> Result<u8> {
    match command {
        Command::GenData(args) => gen_data(args),
        Command::Train(args) => cmd_train(args),
        Command::Explain(args) => cmd_explain(args),
        Command::Attack(args) => cmd_attack(args),
        Command::Poison(args) => cmd_poison(args),
        Command::Evaluate(args) => cmd_evaluate(args),
        Command::Defend(args) => cmd_defend(args),
        Command::Experiment(args) => cmd_experiment(args),
        Command::Report(args) => cmd_report(args),
    }
}

fn spec_sidecar(out: &Path, explicit: Option<&PathBuf>) -> PathBuf {
    explicit.cloned().unwrap_or_else(|| {
        let mut p = out.as_os_str().to_owned();
        p.push(".spec.json");
        PathBuf::from(p)
    })
}

fn load_dataset(data: &Path, spec: &Path) -> Result<Dataset> {
    load_csv(data, spec).with_context(|| format!("loading {}", data.display()))
}

fn load_train_config(
    config: Option<&PathBuf>,
    kind: Option<ModelKind>,
    seed: Option<u64>,
) -> Result<TrainConfig> {
    let mut cfg = match config {
        Some(path) => {
            let file = std::fs::File::open(path)
                .with_context(|| format!("opening {}", path.display()))?;
            serde_json::from_reader(std::io::BufReader::new(file))
                .with_context(|| format!("parsing {}", path.display()))?
        }
        None => {
            let kind = kind.ok_or_else(|| anyhow!("pass --config or --kind"))?;
            TrainConfig::new(kind, 0)
        }
    };
    if let Some(kind) = kind {
        cfg.kind = kind;
    }
    if let Some(seed) = seed {
        cfg.seed = seed;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn gen_data(args: GenDataArgs) -> Result<u8> {
    let cfg = if let Some(path) = &args.config {
        let file = std::fs::File::open(path).with_context(|| format!("opening {}", path.display()))?;
        serde_json::from_reader(std::io::BufReader::new(file))
            .with_context(|| format!("parsing {}", path.display()))?
    } else if args.desk {
        SynthConfig::desk_scale(args.seed)
    } else {
        SynthConfig {
            n_samples: args.samples,
            n_features: args.features,
            n_informative: args.informative,
            benign_subpopulations: args.subpopulations,
            class_separation: args.separation,
            integer_feature_fraction: args.int_fraction,
            seed: args.seed,
        }
    };
    let ds = generate_synthetic(&cfg)?;
    if let Some(parent) = args.out.parent() {
        if !parent.as_os_str().is_empty() {
            std::fs::create_dir_all(parent)?;
        }
    }
    let spec_path = spec_sidecar(&args.out, args.spec.as_ref());
    save_csv(&ds, &args.out, &spec_path)?;
    eprintln!(
        "wrote {} rows x {} features to {} (specs: {})",
        ds.n_rows(),
        ds.n_features(),
        args.out.display(),
        spec_path.display()
    );
    Ok(0)
}

fn cmd_train(args: TrainArgs) -> Result<u8> {
    let ds = load_dataset(&args.data, &args.spec)?;
    let cfg = load_train_config(args.config.as_ref(), args.kind, args.seed)?;
    let model = train(&ds, &cfg)?;
    model.save(&args.out)?;
    let metrics = evaluate(&model, &ds, 0.5)?;
    eprintln!(
        "trained {} on {} rows; training accuracy {:.4}, f1 {:.4} -> {}",
        cfg.kind.as_str(),
        ds.n_rows(),
        metrics.accuracy,
        metrics.f1,
        args.out.display()
    );
    Ok(0)
}

fn cmd_explain(args: ExplainArgs) -> Result<u8> {
    let ds = load_dataset(&args.data, &args.spec)?;
    let model = TrainedModel::load(&args.model)?;
    let cfg = ExplainerConfig {
        method: args.method,
        n_coalition_samples: args.samples,
        seed: args.seed,
        background_size: args.background,
    };
    let bg = Background::benign_sample(&ds, cfg.background_size, args.seed)?;
    let shap = explain_dataset(&model, &ds, &bg, &cfg)?;
    let names: Vec<String> = ds.specs().iter().map(|s| s.name.clone()).collect();
    save_shap_csv(&shap, &names, &args.out)?;
    eprintln!(
        "explained {} rows (base value {:.6}) -> {}",
        shap.n_samples(),
        shap.base_value,
        args.out.display()
    );
    Ok(0)
}

fn parse_selectors(feature: &str, value: &str) -> Result<(FeatureSelector, ValueSelector)> {
    let f = match feature {
        "large_shap_goodware" => FeatureSelector::LargeShapGoodware,
        "large_abs_shap" => FeatureSelector::LargeAbsShap,
        other => return Err(anyhow!("unknown feature selector '{other}'")),
    };
    let v = match value {
        "min_population" => ValueSelector::MinPopulation,
        "count_shap" => ValueSelector::CountShap,
        "count_abs_shap" => ValueSelector::CountAbsShap,
        other => return Err(anyhow!("unknown value selector '{other}'")),
    };
    Ok((f, v))
}

fn load_profile(path: Option<&PathBuf>) -> Result<ConstraintProfile> {
    Ok(match path {
        Some(p) => ConstraintProfile::load(p)?,
        None => ConstraintProfile::DatasetDefaults,
    })
}

fn cmd_attack(args: AttackArgs) -> Result<u8> {
    let ds = load_dataset(&args.data, &args.spec)?;
    let shap = load_shap_csv(&args.shap)?;
    if shap.sample_ids != ds.ids() {
        return Err(anyhow!(
            "attribution rows do not line up with the dataset (ids differ)"
        ));
    }
    let profile = load_profile(args.profile.as_ref())?;
    let trigger = match args.strategy {
        Strategy::Independent => {
            let (feature_selector, value_selector) =
                parse_selectors(&args.feature_selector, &args.value_selector)?;
            let cfg = SelectorConfig {
                feature_selector,
                value_selector,
                alpha: args.alpha,
                beta: args.beta,
                trigger_size: args.size,
            };
            build_trigger_independent(&shap, &ds, &cfg, &profile)?
        }
        Strategy::Combined => build_trigger_combined(&shap, &ds, args.size, &profile, None)?,
    };
    trigger.save(&args.out)?;
    eprintln!(
        "built {:?} trigger with {} entries{} -> {}",
        trigger.strategy,
        trigger.size(),
        if trigger.early_stop { " (early stop)" } else { "" },
        args.out.display()
    );
    Ok(0)
}

fn cmd_poison(args: PoisonArgs) -> Result<u8> {
    let ds = load_dataset(&args.data, &args.spec)?;
    let trigger = Trigger::load(&args.trigger)?;
    let profile = load_profile(args.profile.as_ref())?;
    let specs = profile.effective_specs(ds.specs())?;
    let (poisoned, plan) = build_poison_set(&ds, &trigger, &specs, args.fraction, args.seed)?;
    let spec_path = spec_sidecar(&args.out, None);
    save_csv(&poisoned, &args.out, &spec_path)?;
    if let Some(plan_path) = &args.plan {
        let file = std::fs::File::create(plan_path)?;
        serde_json::to_writer_pretty(std::io::BufWriter::new(file), &plan)?;
    }
    eprintln!(
        "watermarked {} benign rows (fraction {}) -> {}",
        plan.selected_benign_ids.len(),
        args.fraction,
        args.out.display()
    );
    Ok(0)
}

fn cmd_evaluate(args: EvaluateArgs) -> Result<u8> {
    let ds = load_dataset(&args.data, &args.spec)?;
    let model = TrainedModel::load(&args.model)?;
    let metrics = evaluate(&model, &ds, args.threshold)?;
    let json = serde_json::to_string_pretty(&metrics)?;
    println!("{json}");
    if let Some(out) = &args.out {
        std::fs::write(out, format!("{json}\n"))?;
    }
    Ok(0)
}

fn cmd_defend(args: DefendArgs) -> Result<u8> {
    let poisoned = load_dataset(&args.data, &args.spec)?;
    let trusted = load_dataset(&args.trusted, &args.trusted_spec)?;
    let cfg = load_train_config(args.config.as_ref(), args.kind, None)?;

    let defender = train(&trusted, &cfg)?;
    let explainer = ExplainerConfig {
        method: ExplainMethod::Kernel,
        n_coalition_samples: (2 * trusted.n_features()).max(64),
        seed: args.seed,
        background_size: 16,
    };
    let bg = Background::benign_sample(&trusted, explainer.background_size, args.seed)?;
    let clean_shap = explain_dataset(&defender, &trusted, &bg, &explainer)?;

    let benign = poisoned.select_rows(&poisoned.benign_indices());
    let k = args.k.min(poisoned.n_features());
    let rs = reduce_space(&benign, &clean_shap, k)?;
    let mut report: FilterReport = match args.defense {
        DefenseKind::SpectralSignature => spectral_filter(&rs, 0.15)?,
        DefenseKind::DensityClustering => density_cluster_filter(&rs, 0.01, 0.005, args.seed)?,
        DefenseKind::IsolationForest => isolation_forest_filter(&rs, 100, 256, args.seed)?,
    };
    if let Some(plan_path) = &args.plan {
        let file = std::fs::File::open(plan_path)?;
        let plan: shapmark_core::attack::PoisonPlan =
            serde_json::from_reader(std::io::BufReader::new(file))?;
        report.score_against(&plan.selected_benign_ids);
    }
    if let (Some(xb), Some(xb_spec)) = (&args.xb, &args.xb_spec) {
        let xb = load_dataset(xb, xb_spec)?;
        let (_, acc) = retrain_after_filter(&poisoned, &report, &cfg, &xb)?;
        report.post_defense_acc_fb_xb = Some(acc);
    }
    let file = std::fs::File::create(&args.out)?;
    serde_json::to_writer_pretty(std::io::BufWriter::new(file), &report)?;
    eprintln!(
        "{} removed {} rows ({} poisons, {} goodware) -> {}",
        report.defense.as_str(),
        report.removed_ids.len(),
        report.poisons_removed,
        report.goodware_removed,
        args.out.display()
    );
    Ok(0)
}

fn parse_scenario_tags(s: &str) -> Result<Vec<ScenarioTag>> {
    s.split(',')
        .map(|t| match t.trim() {
            "unrestricted" => Ok(ScenarioTag::Unrestricted),
            "data_limited" => Ok(ScenarioTag::DataLimited),
            "transfer" => Ok(ScenarioTag::Transfer),
            "black_box" => Ok(ScenarioTag::BlackBox),
            "constrained" => Ok(ScenarioTag::Constrained),
            other => Err(anyhow!("unknown scenario tag '{other}'")),
        })
        .collect()
}

fn cmd_experiment(args: ExperimentArgs) -> Result<u8> {
    let mut cfg = ExperimentConfig::load(&args.config)?;
    if let Some(seed) = args.seed {
        cfg.base_seed = seed;
    }
    if let Some(tags) = &args.scenario {
        cfg.scenario.tags = parse_scenario_tags(tags)?;
    }
    if let Some(strategy) = args.strategy {
        cfg.strategy = strategy;
    }
    if let Some(defenses) = &args.defense {
        cfg.defenses = defenses
            .split(',')
            .map(|d| d.trim().parse::<DefenseKind>().map_err(|e| anyhow!(e)))
            .collect::<Result<Vec<_>>>()?;
    }
    cfg.validate()?;

    std::fs::create_dir_all(&args.out)?;
    let output = run_experiment(&cfg)?;
    let json_path = args.out.join("report.json");
    let csv_path = args.out.join("report.csv");
    emit_report(
        &output.reports,
        output.mitigation.as_ref(),
        ReportFormat::Json,
        &json_path,
    )?;
    emit_report(&output.reports, None, ReportFormat::Csv, &csv_path)?;
    if let Some(matrix) = &output.mitigation {
        emit_mitigation_csv(matrix, &args.out.join("mitigation.csv"))?;
    }
    cfg.save(&args.out.join("config_echo.json"))?;

    for report in &output.reports {
        let status = report
            .error
            .as_deref()
            .map(|e| format!("FAILED: {e}"))
            .unwrap_or_else(|| {
                format!(
                    "acc_f_x {:.4} acc_fb_xb {:.4} acc_fb_x {:.4} fp_b {:.4}",
                    report.mean("acc_f_x"),
                    report.mean("acc_fb_xb"),
                    report.mean("acc_fb_x"),
                    report.mean("fp_b"),
                )
            });
        eprintln!(
            "cell fraction={} size={}: {status}",
            report.cell.poison_fraction, report.cell.trigger_size
        );
    }
    eprintln!("reports written to {}", args.out.display());
    Ok(if output.had_failures { 2 } else { 0 })
}

fn cmd_report(args: ReportArgs) -> Result<u8> {
    let (reports, mitigation) = load_report(&args.input)?;
    let format: ReportFormat = args
        .format
        .parse()
        .map_err(|e: String| anyhow!(e))?;
    emit_report(&reports, mitigation.as_ref(), format, &args.out)?;
    if let Some(matrix) = &mitigation {
        if format == ReportFormat::Csv {
            let mut mit_path = args.out.as_os_str().to_owned();
            mit_path.push(".mitigation.csv");
            emit_mitigation_csv(matrix, Path::new(&mit_path))?;
        }
    }
    eprintln!("converted {} -> {}", args.input.display(), args.out.display());
    Ok(0)
}
