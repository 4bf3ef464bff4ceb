use std::fs::File;
use std::io::BufWriter;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use mixtraffic::harness::{self, output, HarnessError, OfframpMode, Scenario};

#[derive(Parser)]
#[command(
    name = "mixtraffic",
    version,
    about = "Mixed connected/conventional highway traffic estimation"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the ground-truth simulator only and write truth.csv.
    Simulate(Common),
    /// Run simulator, estimator and metrics; write trajectory.csv and metrics.csv.
    Estimate(Common),
    /// Rerun the filter with Q = sigma * I for each sigma; write sweep.csv.
    Sweep {
        #[command(flatten)]
        common: Common,
        /// Comma-separated list of sigma values.
        #[arg(long, value_delimiter = ',', default_value = "0.01,0.1,1,10,100")]
        sigmas: Vec<f64>,
    },
    /// Report observability-matrix anti-diagonals along a run; write observability.csv.
    Observability(Common),
    /// Print the built-in default scenario as TOML.
    DefaultScenario,
}

#[derive(Args)]
struct Common {
    /// Scenario file (TOML). The built-in default is used when omitted.
    #[arg(long, short)]
    scenario: Option<PathBuf>,
    /// Override the scenario seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long, short, default_value = "out")]
    out: PathBuf,
    /// Override the off-ramp mode (measured|unmeasured).
    #[arg(long)]
    offramp_mode: Option<OfframpMode>,
}

impl Common {
    fn scenario(&self) -> Result<Scenario, HarnessError> {
        let mut sc = match &self.scenario {
            Some(path) => Scenario::load(path)?,
            None => Scenario::default(),
        };
        if let Some(seed) = self.seed {
            sc.seed = seed;
        }
        if let Some(mode) = self.offramp_mode {
            sc.offramp_mode = mode;
        }
        sc.validate()?;
        Ok(sc)
    }

    fn create(&self, name: &str) -> Result<BufWriter<File>, HarnessError> {
        std::fs::create_dir_all(&self.out)?;
        Ok(BufWriter::new(File::create(self.out.join(name))?))
    }
}

fn run(cli: Cli) -> Result<(), HarnessError> {
    match cli.command {
        Command::Simulate(c) => {
            let sc = c.scenario()?;
            let truth = harness::generate_truth(&sc)?;
            output::write_rows(c.create("truth.csv")?, &output::truth_rows(&truth))?;
            report(&c.out, "truth.csv");
            println!(
                "steps={} segments={} sim_clamps={}",
                truth.n_steps(),
                truth.geom.n_segments,
                truth.sim_clamps
            );
        }
        Command::Estimate(c) => {
            let sc = c.scenario()?;
            let result = harness::run_experiment(&sc)?;
            output::write_rows(
                c.create("trajectory.csv")?,
                &output::trajectory_rows(&result),
            )?;
            output::write_metrics(c.create("metrics.csv")?, &result.metrics)?;
            report(&c.out, "trajectory.csv");
            report(&c.out, "metrics.csv");
            let m = &result.metrics;
            println!(
                "P_R={:.4}% g_clamps={} output_holds={} sim_clamps={} runtime_s={:.3}",
                100.0 * m.p_r,
                m.g_clamps,
                m.output_holds,
                m.sim_clamps,
                m.runtime_s
            );
        }
        Command::Sweep { common: c, sigmas } => {
            let sc = c.scenario()?;
            let points = harness::q_sweep(&sc, &sigmas)?;
            output::write_sweep(c.create("sweep.csv")?, &points)?;
            report(&c.out, "sweep.csv");
            for p in &points {
                println!("sigma={} P_R={:.4}%", p.sigma, 100.0 * p.p_r);
            }
        }
        Command::Observability(c) => {
            let sc = c.scenario()?;
            let truth = harness::generate_truth(&sc)?;
            let rows = harness::observability_over_run(&sc, &truth)?;
            output::write_observability(c.create("observability.csv")?, &rows)?;
            report(&c.out, "observability.csv");
            let observable = rows.iter().filter(|r| r.observable).count();
            let weakest = rows
                .iter()
                .map(|r| r.min_abs_anti_diagonal)
                .fold(f64::INFINITY, f64::min);
            println!(
                "windows={} observable={} min_anti_diagonal={:e}",
                rows.len(),
                observable,
                weakest
            );
        }
        Command::DefaultScenario => print!("{}", Scenario::default().to_toml_string()),
    }
    Ok(())
}

fn report(dir: &Path, name: &str) {
    log::info!("wrote {}", dir.join(name).display());
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("{}", e.to_json());
            ExitCode::from(2)
        }
    }
}
