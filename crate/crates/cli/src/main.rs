use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use spanel::panel::load_metadata;
use spanel::pipeline::{parse_stages, Inputs};
use spanel::regression::{fixed_effects, ols, system_gmm, GmmSpec};
use spanel::simulate::{gen_panel_dgp, gen_study_panel, monte_carlo, ParamEstimate, StudyPanelSpec};
use spanel::slm::slm_fit;
use spanel::{DgpSpec, ModelSpec, PipelineConfig, Stage, WeightKind};

#[derive(Parser)]
#[command(name = "spanel", version, about = "Provincial panel pipeline: indices, TFP, regressions, mediation and spatial models")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Check a pipeline config and its inputs without running anything.
    Validate(PipelineArgs),
    /// Run the configured stages.
    Run(PipelineArgs),
    /// Descriptive statistics only.
    Stats(PipelineArgs),
    /// Composite indices and entropy weights.
    Indices(PipelineArgs),
    /// Malmquist productivity index.
    Tfp(PipelineArgs),
    /// Baseline, robustness and heterogeneity regressions.
    Regress(PipelineArgs),
    /// Mediation tests.
    Mediate(PipelineArgs),
    /// Moran statistics and spatial lag models.
    Spatial(PipelineArgs),
    /// Generate a synthetic panel.
    Simulate(SimulateArgs),
    /// Monte Carlo study of an estimator on a DGP.
    Montecarlo(MonteCarloArgs),
}

#[derive(Args)]
struct PipelineArgs {
    #[arg(long)]
    config: PathBuf,
    /// Overrides the output directory.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    /// Comma-separated stage list (run only).
    #[arg(long)]
    stages: Option<String>,
    #[arg(long, value_enum)]
    weights: Option<WeightsArg>,
}

#[derive(Clone, Copy, ValueEnum)]
enum WeightsArg {
    Contiguity,
    Distance,
    Economic,
    All,
}

impl WeightsArg {
    fn kinds(self) -> Vec<WeightKind> {
        match self {
            WeightsArg::Contiguity => vec![WeightKind::Contiguity],
            WeightsArg::Distance => vec![WeightKind::InverseDistance],
            WeightsArg::Economic => vec![WeightKind::Economic],
            WeightsArg::All => WeightKind::BUILTIN.to_vec(),
        }
    }
}

#[derive(Args)]
struct SimulateArgs {
    /// DGP spec JSON. Ignored with --study.
    #[arg(long, required_unless_present = "study")]
    config: Option<PathBuf>,
    /// Generate the full set of raw study series for the units in --meta.
    #[arg(long, requires = "meta")]
    study: bool,
    #[arg(long)]
    meta: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    seed: Option<u64>,
    /// Number of years (study panel only).
    #[arg(long, default_value_t = 12)]
    years: usize,
}

#[derive(Clone, Copy, ValueEnum)]
enum McEstimator {
    Ols,
    Fe,
    Gmm,
    Slm,
}

#[derive(Args)]
struct MonteCarloArgs {
    /// DGP spec JSON.
    #[arg(long)]
    config: PathBuf,
    #[arg(long, value_enum, default_value = "fe")]
    estimator: McEstimator,
    #[arg(long, default_value_t = 200)]
    reps: usize,
    #[arg(long)]
    seed: Option<u64>,
    /// Report path; printed to stdout when absent.
    #[arg(long)]
    out: Option<PathBuf>,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match dispatch(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}

fn dispatch(cmd: Command) -> Result<()> {
    match cmd {
        Command::Validate(a) => validate(&a),
        Command::Run(a) => run(&a, None),
        Command::Stats(a) => run(&a, Some(&[Stage::Stats])),
        Command::Indices(a) => run(&a, Some(&[Stage::Indices])),
        Command::Tfp(a) => run(&a, Some(&[Stage::Tfp])),
        Command::Regress(a) => run(&a, Some(&[Stage::Baseline, Stage::Robustness, Stage::Heterogeneity])),
        Command::Mediate(a) => run(&a, Some(&[Stage::Mediation])),
        Command::Spatial(a) => run(&a, Some(&[Stage::Spatial])),
        Command::Simulate(a) => simulate(&a),
        Command::Montecarlo(a) => montecarlo(&a),
    }
}

fn load_config(a: &PipelineArgs) -> Result<PipelineConfig> {
    let mut cfg = PipelineConfig::load(&a.config).with_context(|| format!("reading {}", a.config.display()))?;
    if let Some(out) = &a.out {
        cfg.output_dir = out.clone();
    }
    if let Some(seed) = a.seed {
        cfg.seed = seed;
    }
    if let Some(list) = &a.stages {
        cfg.stages = parse_stages(list)?;
    }
    if let Some(w) = a.weights {
        cfg.model.weights = w.kinds();
    }
    Ok(cfg)
}

fn validate(a: &PipelineArgs) -> Result<()> {
    let mut cfg = load_config(a)?;
    let inputs = cfg.check()?;
    let stages: Vec<&str> = cfg.stages.iter().map(|s| s.name()).collect();
    println!(
        "config ok: {} units, {} years, {} variables; stages {}",
        inputs.panel.units().len(),
        inputs.panel.years().len(),
        inputs.panel.variables().count(),
        stages.join(",")
    );
    Ok(())
}

fn run(a: &PipelineArgs, only: Option<&[Stage]>) -> Result<()> {
    let mut cfg = load_config(a)?;
    if let Some(stages) = only {
        if a.stages.is_some() {
            bail!("--stages only applies to `run`");
        }
        cfg.stages = stages.to_vec();
        cfg.validate()?;
        let inputs = Inputs::load(&cfg)?;
        cfg.with_prerequisites(&inputs.panel);
    }
    let outcome = spanel::run_pipeline(&cfg)?;
    for w in &outcome.manifest.warnings {
        log::warn!("{w}");
    }
    println!(
        "wrote {} files; manifest {}",
        outcome.manifest.outputs.len(),
        outcome.manifest_path.display()
    );
    Ok(())
}

fn simulate(a: &SimulateArgs) -> Result<()> {
    fs::create_dir_all(&a.out).with_context(|| format!("creating {}", a.out.display()))?;
    if a.study {
        let meta_path = a.meta.as_ref().expect("clap enforces --meta");
        let meta = load_metadata(meta_path)?;
        let mut spec = StudyPanelSpec {
            n_years: a.years,
            ..StudyPanelSpec::default()
        };
        if let Some(s) = a.seed {
            spec.seed = s;
        }
        let panel = gen_study_panel(&meta, &spec)?;
        let path = a.out.join("panel.csv");
        panel.save_csv(&path)?;
        println!("wrote {}", path.display());
        return Ok(());
    }
    let mut spec = read_dgp(a.config.as_deref().expect("clap enforces --config"))?;
    if let Some(s) = a.seed {
        spec.seed = s;
    }
    let (panel, truth) = gen_panel_dgp(&spec)?;
    panel.save_csv(a.out.join("panel.csv"))?;
    fs::write(a.out.join("truth.json"), serde_json::to_string_pretty(&truth)? + "\n")?;
    println!("wrote panel.csv and truth.json to {}", a.out.display());
    Ok(())
}

fn read_dgp(path: &Path) -> Result<DgpSpec> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    Ok(DgpSpec::from_json_str(&text)?)
}

fn montecarlo(a: &MonteCarloArgs) -> Result<()> {
    let spec = read_dgp(&a.config)?;
    let seed = a.seed.unwrap_or(spec.seed);
    let regs = if spec.b != 0.0 { vec!["x", "m"] } else { vec!["x"] };
    let report = match a.estimator {
        McEstimator::Ols | McEstimator::Fe => {
            let fe = matches!(a.estimator, McEstimator::Fe);
            monte_carlo(&spec, a.reps, seed, |panel, truth| {
                let ms = ModelSpec::new("y", &regs);
                let r = if fe { fixed_effects(panel, &ms.two_way())? } else { ols(panel, &ms)? };
                let c = r.coef("x").expect("x is a regressor");
                Ok(vec![ParamEstimate::new("beta", truth.beta, c.estimate, c.std_error)])
            })?
        }
        McEstimator::Gmm => monte_carlo(&spec, a.reps, seed, |panel, truth| {
            let r = system_gmm(panel, &ModelSpec::new("y", &regs), &GmmSpec::default())?;
            let g = r.coef("L.y").expect("lag is added");
            let b = r.coef("x").expect("x is a regressor");
            Ok(vec![
                ParamEstimate::new("gamma", truth.gamma, g.estimate, g.std_error),
                ParamEstimate::new("beta", truth.beta, b.estimate, b.std_error),
            ])
        })?,
        McEstimator::Slm => {
            let w = spec.weights.clone().context("the slm estimator needs `weights` in the DGP spec")?;
            monte_carlo(&spec, a.reps, seed, |panel, truth| {
                let fit = slm_fit(panel, &ModelSpec::new("y", &regs), &w)?;
                let b = fit.estimate("x").expect("x is a regressor");
                let bse = fit.coefficients.iter().find(|c| c.name == "x").map_or(f64::NAN, |c| c.std_error);
                Ok(vec![
                    ParamEstimate::new("rho", truth.rho, fit.rho.estimate, fit.rho.std_error),
                    ParamEstimate::new("beta", truth.beta, b, bse),
                ])
            })?
        }
    };
    let body = serde_json::to_string_pretty(&report)? + "\n";
    match &a.out {
        Some(p) => {
            fs::write(p, body).with_context(|| format!("writing {}", p.display()))?;
            println!("wrote {}", p.display());
        }
        None => print!("{body}"),
    }
    Ok(())
}
