use std::path::PathBuf;

use anyhow::{Context, Result};
use aops_core::simenv::{make_synthetic_task, SyntheticTaskConfig};
use aops_harness::config::ExperimentConfig;
use aops_harness::experiment::{self, default_workers};
use aops_harness::method::Method;
use aops_harness::report;
use clap::{Args, Parser, Subcommand};

#[derive(Parser)]
#[command(
    name = "aops",
    version,
    about = "Policy selection experiments with OPE scores and an episode budget"
)]
struct Cli {
    /// Parallel repetitions; defaults to the available cores.
    #[arg(long, global = true, env = "AOPS_WORKERS")]
    workers: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic task and write its fingerprint and value files.
    GenerateTask {
        /// TOML file with synthetic task settings.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        num_policies: Option<usize>,
        #[arg(long)]
        fingerprints: PathBuf,
        #[arg(long)]
        values: PathBuf,
    },
    /// Run an experiment from a TOML config or a previous manifest.json.
    Run(RunArgs),
    /// Run the experiment for several candidate-set sizes.
    VaryK {
        #[command(flatten)]
        run: RunArgs,
        #[arg(long, value_delimiter = ',', required = true)]
        k: Vec<usize>,
    },
    /// Run the experiment with OPE estimates for only some policies.
    VaryOpe {
        #[command(flatten)]
        run: RunArgs,
        #[arg(long, value_delimiter = ',', required = true)]
        n_ope: Vec<usize>,
    },
    /// Collate curve files under result directories into one CSV table.
    Report {
        #[arg(required = true)]
        dirs: Vec<PathBuf>,
        /// Output file; stdout when absent.
        #[arg(long)]
        output: Option<PathBuf>,
    },
}

#[derive(Args)]
struct RunArgs {
    #[arg(long)]
    config: PathBuf,
    #[arg(long)]
    output: Option<PathBuf>,
    #[arg(long)]
    repetitions: Option<usize>,
    #[arg(long)]
    budget: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    /// Comma-separated method names, e.g. GP+UCB+OPE,Ind+Uniform,OPE.
    #[arg(long, value_delimiter = ',')]
    methods: Option<Vec<Method>>,
    #[arg(long)]
    refit_every: Option<usize>,
    #[arg(long)]
    no_traces: bool,
}

impl RunArgs {
    fn load(&self) -> Result<(ExperimentConfig, PathBuf)> {
        let mut cfg = ExperimentConfig::load(&self.config)?;
        if let Some(v) = self.repetitions {
            cfg.repetitions = v;
        }
        if let Some(v) = self.budget {
            cfg.budget = v;
        }
        if let Some(v) = self.seed {
            cfg.base_seed = v;
        }
        if let Some(v) = &self.methods {
            cfg.methods = v.clone();
        }
        if let Some(v) = self.refit_every {
            cfg.refit_every = v;
        }
        if self.no_traces {
            cfg.write_traces = false;
        }
        let out = experiment::output_dir(&cfg, self.output.clone());
        cfg.output_dir = Some(out.clone());
        cfg.validate()?;
        Ok((cfg, out))
    }
}

fn print_summary(label: &str, r: &experiment::ExperimentResult) {
    for m in &r.methods {
        if let Some((mean, sd)) = m.curve.last() {
            println!("{label}{:<22} regret {mean:.4} ± {sd:.4}", m.method.to_string());
        }
    }
}

fn main() -> Result<()> {
    let cli = Cli::parse();
    let workers = cli.workers.unwrap_or_else(default_workers);
    match cli.command {
        Command::GenerateTask {
            config,
            seed,
            num_policies,
            fingerprints,
            values,
        } => {
            let mut cfg: SyntheticTaskConfig = match config {
                Some(p) => {
                    let text = std::fs::read_to_string(&p).with_context(|| format!("reading {}", p.display()))?;
                    toml::from_str(&text).with_context(|| format!("parsing {}", p.display()))?
                }
                None => SyntheticTaskConfig::default(),
            };
            if let Some(s) = seed {
                cfg.seed = s;
            }
            if let Some(k) = num_policies {
                cfg.num_policies = k;
            }
            let task = make_synthetic_task(&cfg)?;
            task.save(&fingerprints, &values)?;
            println!(
                "wrote {} policies to {} and {}",
                task.len(),
                fingerprints.display(),
                values.display()
            );
        }
        Command::Run(args) => {
            let (cfg, out) = args.load()?;
            let r = experiment::run_experiment(&cfg, workers)?;
            r.write(&out)?;
            print_summary("", &r);
            println!("results in {}", out.display());
        }
        Command::VaryK { run, k } => {
            let (cfg, out) = run.load()?;
            for (k, r) in experiment::vary_k_experiment(&cfg, &k, workers, Some(&out))? {
                print_summary(&format!("K={k:<4} "), &r);
            }
            println!("results in {}", out.display());
        }
        Command::VaryOpe { run, n_ope } => {
            let (cfg, out) = run.load()?;
            for (n, r) in experiment::vary_ope_experiment(&cfg, &n_ope, workers, Some(&out))? {
                print_summary(&format!("n_ope={n:<4} "), &r);
            }
            println!("results in {}", out.display());
        }
        Command::Report { dirs, output } => {
            let rows = match output {
                Some(p) => {
                    let f = std::fs::File::create(&p).with_context(|| format!("creating {}", p.display()))?;
                    let n = report::collate(&dirs, std::io::BufWriter::new(f))?;
                    eprintln!("wrote {n} rows to {}", p.display());
                    n
                }
                None => report::collate(&dirs, std::io::stdout().lock())?,
            };
            if rows == 0 {
                eprintln!("no curve rows found");
            }
        }
    }
    Ok(())
}
