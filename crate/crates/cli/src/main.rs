use std::net::TcpListener;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

use cppvcg::consensus::IterationRecord;
use cppvcg::dynamic::CommitmentMode;
use cppvcg::instances::{random_bilateral, random_inventory_model};
use cppvcg::mechanism::FeePolicy;
use cppvcg::protocol::{AgentService, LISTEN_ENV};
use cppvcg::run::{render_text, run, status_quo_for, Analysis};
use cppvcg::scenario::{load_scenario, DynamicConfig, RunMode, Scenario};
use cppvcg::{supplier_utility, Error};

#[derive(Parser)]
#[command(name = "cppvcg", version, about = "Coordinated supply planning with VCG settlement")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum Mode {
    Centralized,
    Cpp,
    Protocol,
}

impl From<Mode> for RunMode {
    fn from(m: Mode) -> Self {
        match m {
            Mode::Centralized => RunMode::Centralized,
            Mode::Cpp => RunMode::Cpp,
            Mode::Protocol => RunMode::Protocol,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum Role {
    Retailer,
    Supplier,
}

#[derive(Subcommand)]
enum Command {
    /// Run analyses on a scenario and print the report.
    Run {
        /// Scenario file (TOML).
        #[arg(long, required_unless_present = "seed", conflicts_with = "seed")]
        scenario: Option<PathBuf>,
        /// Comma-separated subset of jit,firstbest,vcg,menu,dynamic.
        #[arg(long, value_delimiter = ',', default_value = "jit,firstbest,vcg,menu,dynamic")]
        analyses: Vec<String>,
        #[arg(long, value_enum)]
        mode: Option<Mode>,
        /// Additive activity fee; replaces the scenario's fee policy.
        #[arg(long)]
        alpha: Option<f64>,
        /// Print consensus residuals per iteration on stderr.
        #[arg(long)]
        trace: bool,
        /// Use a random instance generated from this seed instead of a file.
        #[arg(long)]
        seed: Option<u64>,
        /// Write the machine-readable report here ("-" for stdout, replacing the table).
        #[arg(long)]
        json: Option<PathBuf>,
    },
    /// Serve one agent of a scenario over the line protocol until the coordinator says bye.
    Serve {
        #[arg(long)]
        scenario: PathBuf,
        #[arg(long, value_enum)]
        role: Role,
        #[arg(long, env = LISTEN_ENV, default_value = cppvcg::protocol::DEFAULT_LISTEN)]
        listen: String,
    },
    /// Write a random scenario.
    Generate {
        #[arg(long)]
        seed: u64,
        /// Output path; stdout when absent.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn random_scenario(seed: u64) -> Scenario {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (retailer, supplier) = random_bilateral(&mut rng, 5);
    let model = random_inventory_model(&mut rng, 6, 6);
    Scenario {
        mode: RunMode::default(),
        retailer,
        supplier,
        fee: FeePolicy::None,
        status_quo: Default::default(),
        menu: Default::default(),
        consensus: Default::default(),
        dynamic: Some(DynamicConfig {
            model,
            commitment: CommitmentMode::None,
            realized: None,
        }),
    }
}

fn parse_analyses(list: &[String]) -> Result<Vec<Analysis>, Error> {
    list.iter().filter(|s| !s.trim().is_empty()).map(|s| s.parse()).collect()
}

fn run_command(
    scenario: Option<PathBuf>,
    analyses: &[String],
    mode: Option<Mode>,
    alpha: Option<f64>,
    trace: bool,
    seed: Option<u64>,
    json: Option<PathBuf>,
) -> Result<(), Error> {
    let mut scenario = match (scenario, seed) {
        (Some(path), _) => load_scenario(&path)?,
        (None, Some(seed)) => random_scenario(seed),
        (None, None) => return Err(Error::Parameter("either --scenario or --seed is required".into())),
    };
    if let Some(m) = mode {
        scenario.mode = m.into();
    }
    if let Some(alpha) = alpha {
        scenario.fee = FeePolicy::Additive { alpha };
        scenario.menu.alpha = Some(alpha);
    }
    let analyses = parse_analyses(analyses)?;
    let mut print = |r: &IterationRecord| {
        eprintln!(
            "iter {:>5}  r_p {:.3e}  r_d {:.3e}  rho {}  z {:?}",
            r.iteration, r.primal_residual, r.dual_residual, r.rho, r.z
        );
    };
    let report = run(&scenario, &analyses, if trace { Some(&mut print) } else { None })?;
    match json.as_deref() {
        Some(p) if p.as_os_str() == "-" => println!("{}", report.to_json()),
        Some(p) => {
            std::fs::write(p, report.to_json() + "\n")?;
            print!("{}", render_text(&report));
        }
        None => print!("{}", render_text(&report)),
    }
    Ok(())
}

fn serve_command(path: PathBuf, role: Role, listen: &str) -> Result<(), Error> {
    let scenario = load_scenario(&path)?;
    let listener = TcpListener::bind(listen)?;
    eprintln!("listening on {}", listener.local_addr()?);
    let best_response = scenario.consensus.best_response;
    match role {
        Role::Retailer => {
            let mut service = AgentService::new(&scenario.retailer);
            service.best_response = best_response;
            service.serve(&listener)
        }
        Role::Supplier => {
            let status_quo = status_quo_for(&scenario)?;
            let reservation = supplier_utility(&scenario.supplier, &status_quo.supplier_plan)?.utility;
            let mut service = AgentService::new(&scenario.supplier).with_reservation(reservation);
            service.best_response = best_response;
            service.serve(&listener)
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let outcome = match cli.command {
        Command::Run {
            scenario,
            analyses,
            mode,
            alpha,
            trace,
            seed,
            json,
        } => run_command(scenario, &analyses, mode, alpha, trace, seed, json),
        Command::Serve { scenario, role, listen } => serve_command(scenario, role, &listen),
        Command::Generate { seed, out } => random_scenario(seed).to_toml().and_then(|text| match out {
            Some(p) => std::fs::write(p, text).map_err(Error::from),
            None => {
                print!("{text}");
                Ok(())
            }
        }),
    };
    match outcome {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
