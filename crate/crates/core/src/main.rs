use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;

use clap::{Parser, Subcommand, ValueEnum};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use ecodrive::energy::{fit_energy_model, read_samples_csv, simulate_samples, EnergyModel};
use ecodrive::harness::{
    audit_log, compare_controllers, initial_model, instance_for, model_from_dataset, read_log_csv, run_episode,
    run_learning, write_csv, write_json, Driver, EpisodeReport, HarnessError, LearnOptions, Manifest, Scenario,
};
use ecodrive::learning::{Dataset, NoiseDiscretization};

#[derive(Parser)]
#[command(name = "ecodrive", version, about = "Learned MPC eco-driving through signalized roads")]
struct Cli {
    /// Scenario file (TOML) or the name of a shipped preset.
    #[arg(long, global = true)]
    config: Option<String>,
    /// Overrides the scenario seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long, global = true, default_value = "out")]
    out: PathBuf,
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Clone, Copy, ValueEnum)]
enum ControllerArg {
    Proposed,
    Cruise,
    Hierarchical,
}

#[derive(Subcommand)]
enum Cmd {
    /// Fit the quadratic energy model to (v, u, dE) samples.
    FitEnergy {
        /// CSV with columns v,u,dE; synthetic samples from the scenario model when absent.
        #[arg(long)]
        samples: Option<PathBuf>,
        #[arg(long, default_value_t = 2000)]
        count: usize,
        /// Relative noise of synthetic samples.
        #[arg(long, default_value_t = 0.03)]
        noise: f64,
    },
    /// Build the initialization dataset and terminal-noise discretization.
    InitDataset,
    /// Run the learning loop and write the learning curve.
    Learn {
        /// Fixed number of iterations after the initial one; disables early stopping.
        #[arg(long)]
        iters: Option<usize>,
        /// Episodes per iteration.
        #[arg(long)]
        episodes: Option<usize>,
    },
    /// Run one closed-loop episode and write its log and report.
    Episode {
        #[arg(long, value_enum)]
        controller: Option<ControllerArg>,
        #[arg(long, default_value_t = 0)]
        stream: u64,
        /// Directory holding dataset.csv and noise.json; the initialization model when absent.
        #[arg(long)]
        model: Option<PathBuf>,
        /// Cruise reference speed.
        #[arg(long)]
        v_ref: Option<f64>,
    },
    /// Compare the proposed controller with the cruise and hierarchical baselines.
    Compare {
        /// Scenarios to compare; defaults to the four lead-speed presets.
        #[arg(long, num_args = 1..)]
        scenarios: Vec<String>,
        #[arg(long, default_value_t = 10)]
        episodes: usize,
    },
    /// Re-check a stored episode (scenario.toml, report.json, log.csv).
    Audit {
        dir: PathBuf,
    },
}

enum Failure {
    Audit(String),
    Other(String),
}

impl<E: Into<HarnessError>> From<E> for Failure {
    fn from(e: E) -> Self {
        Failure::Other(e.into().to_string())
    }
}

fn other(msg: impl Into<String>) -> Failure {
    Failure::Other(msg.into())
}

/// Loads `--config` as a file, falling back to a preset name.
fn load_scenario(arg: Option<&str>) -> Result<(Scenario, String), Failure> {
    let arg = arg.ok_or_else(|| other("--config is required"))?;
    if Path::new(arg).is_file() {
        let text = fs::read_to_string(arg).map_err(|e| other(format!("{arg}: {e}")))?;
        let s = Scenario::from_toml_str(&text).map_err(|e| other(format!("{arg}: {e}")))?;
        return Ok((s, text));
    }
    match (Scenario::preset(arg), Scenario::preset_text(arg)) {
        (Some(s), Some(t)) => Ok((s, t.to_string())),
        _ => {
            let names: Vec<&str> = Scenario::preset_names().collect();
            Err(other(format!("{arg}: no such file or preset (presets: {})", names.join(", "))))
        }
    }
}

struct Out {
    dir: PathBuf,
    manifest: Manifest,
}

impl Out {
    fn new(dir: &Path, manifest: Manifest) -> Result<Self, Failure> {
        fs::create_dir_all(dir).map_err(|e| other(format!("{}: {e}", dir.display())))?;
        Ok(Self {
            dir: dir.to_path_buf(),
            manifest,
        })
    }

    fn path(&mut self, name: &str) -> PathBuf {
        self.manifest.files.push(name.into());
        self.dir.join(name)
    }

    fn csv<T: Serialize>(&mut self, name: &str, rows: &[T]) -> Result<(), Failure> {
        let p = self.path(name);
        write_csv(&p, rows)?;
        Ok(())
    }

    fn json<T: Serialize>(&mut self, name: &str, v: &T) -> Result<(), Failure> {
        let p = self.path(name);
        write_json(&p, v)?;
        Ok(())
    }

    fn text(&mut self, name: &str, text: &str) -> Result<(), Failure> {
        let p = self.path(name);
        fs::write(&p, text).map_err(|e| other(format!("{}: {e}", p.display())))
    }

    fn dataset(&mut self, data: &Dataset, nd: &NoiseDiscretization) -> Result<(), Failure> {
        let p = self.path("dataset.csv");
        let f = fs::File::create(&p).map_err(|e| other(format!("{}: {e}", p.display())))?;
        data.write_csv(f).map_err(HarnessError::from)?;
        self.json("noise.json", nd)
    }

    fn finish(mut self) -> Result<(), Failure> {
        let p = self.dir.join("manifest.json");
        self.manifest.files.sort();
        write_json(&p, &self.manifest)?;
        Ok(())
    }
}

#[derive(Serialize)]
struct FitOutput {
    p: EnergyModel,
    residual: f64,
    degenerate: bool,
    iterations: usize,
    samples: usize,
}

fn fit_energy(cli: &Cli, samples: Option<&Path>, count: usize, noise: f64) -> Result<(), Failure> {
    let (scenario, text) = match cli.config.as_deref() {
        Some(c) => load_scenario(Some(c))?,
        None => (Scenario::preset("table2_single_light").expect("preset"), String::new()),
    };
    let seed = cli.seed.unwrap_or(scenario.seed);
    let data = match samples {
        Some(p) => {
            let f = fs::File::open(p).map_err(|e| other(format!("{}: {e}", p.display())))?;
            read_samples_csv(f).map_err(|e| other(format!("{}: {e}", p.display())))?
        }
        None => {
            let env = &scenario.mpc.env;
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            simulate_samples(&scenario.energy, (0.0, env.v_max), (env.a_min, env.a_max), count, noise, &mut rng)
        }
    };
    let fit = fit_energy_model(&data).map_err(|e| other(e.to_string()))?;
    let mut out = Out::new(&cli.out, Manifest::new("fit-energy", &scenario.name, &text, seed))?;
    out.json(
        "energy_fit.json",
        &FitOutput {
            p: fit.model,
            residual: fit.residual,
            degenerate: fit.degenerate,
            iterations: fit.iterations,
            samples: data.len(),
        },
    )?;
    if samples.is_none() {
        out.csv("energy_samples.csv", &data)?;
    }
    out.finish()
}

fn init_dataset(cli: &Cli) -> Result<(), Failure> {
    let (s, text) = load_scenario(cli.config.as_deref())?;
    let seed = cli.seed.unwrap_or(s.seed);
    let (data, nd) = initial_model(&s, seed)?;
    let mut out = Out::new(&cli.out, Manifest::new("init-dataset", &s.name, &text, seed))?;
    out.dataset(&data, &nd)?;
    out.finish()
}

fn learn(cli: &Cli, iters: Option<usize>, episodes: Option<usize>) -> Result<(), Failure> {
    let (s, text) = load_scenario(cli.config.as_deref())?;
    let mut opts = LearnOptions::from_scenario(&s);
    if let Some(seed) = cli.seed {
        opts.seed = seed;
    }
    if let Some(n) = iters {
        opts.j_max = n;
        opts.early_stop = false;
    }
    if let Some(n) = episodes {
        opts.mc_per_iter = n;
    }
    let run = run_learning(&s, &opts)?;
    let mut out = Out::new(&cli.out, Manifest::new("learn", &s.name, &text, opts.seed))?;
    out.csv("curve.csv", &run.curve)?;
    out.dataset(&run.dataset, &run.model.nd)?;
    out.finish()
}

fn load_model(s: &Scenario, dir: &Path) -> Result<Arc<ecodrive::controller::TerminalModel>, Failure> {
    let dp = dir.join("dataset.csv");
    let f = fs::File::open(&dp).map_err(|e| other(format!("{}: {e}", dp.display())))?;
    let data = Dataset::read_csv(f).map_err(|e| other(format!("{}: {e}", dp.display())))?;
    let np = dir.join("noise.json");
    let nt = fs::read_to_string(&np).map_err(|e| other(format!("{}: {e}", np.display())))?;
    let nd: NoiseDiscretization = serde_json::from_str(&nt).map_err(|e| other(format!("{}: {e}", np.display())))?;
    Ok(Arc::new(model_from_dataset(s, &data, nd)))
}

fn episode(
    cli: &Cli,
    controller: Option<ControllerArg>,
    stream: u64,
    model: Option<&Path>,
    v_ref: Option<f64>,
) -> Result<(), Failure> {
    let (mut s, text) = load_scenario(cli.config.as_deref())?;
    let seed = cli.seed.unwrap_or(s.seed);
    let driver = match controller {
        Some(ControllerArg::Cruise) => Driver::Cruise {
            v_ref: v_ref.unwrap_or(instance_for(&s, seed, stream)?.flow_speed),
        },
        Some(ControllerArg::Hierarchical) => Driver::Hierarchical { deadlines: None },
        Some(ControllerArg::Proposed) | None => {
            let m = match model {
                Some(dir) => load_model(&s, dir)?,
                None => {
                    let (data, nd) = initial_model(&s, seed)?;
                    Arc::new(model_from_dataset(&s, &data, nd))
                }
            };
            Driver::Proposed(m)
        }
    };
    s.controller = driver.id();
    s.seed = seed;
    let ep = run_episode(&s, &driver, seed, stream)?;
    let mut out = Out::new(&cli.out, Manifest::new("episode", &s.name, &text, seed))?;
    out.csv("log.csv", &ep.log)?;
    out.json("report.json", &ep.report)?;
    let stored = toml::to_string(&s).map_err(|e| other(format!("scenario.toml: {e}")))?;
    out.text("scenario.toml", &stored)?;
    out.finish()?;
    let v = ep.report.violations;
    if v.safety_total() > 0 || (v.deadline > 0 && !ep.report.had_soft_event()) {
        return Err(Failure::Audit(format!("constraint violations: {v:?}")));
    }
    match &ep.report.failure {
        Some(f) => Err(other(format!("episode failed: {f}"))),
        None => Ok(()),
    }
}

fn compare(cli: &Cli, names: &[String], episodes: usize) -> Result<(), Failure> {
    let mut list: Vec<String> = names.to_vec();
    if list.is_empty() {
        match cli.config.as_deref() {
            Some(c) => list.push(c.to_string()),
            None => list.extend(["sim_pv_2.5", "sim_pv_5", "sim_pv_7.5", "sim_pv_10"].map(String::from)),
        }
    }
    let mut scenarios = Vec::new();
    let mut texts = String::new();
    for n in &list {
        let (s, t) = load_scenario(Some(n))?;
        scenarios.push(s);
        texts.push_str(&t);
    }
    let seed = cli.seed.unwrap_or(scenarios[0].seed);
    let rows = compare_controllers(&scenarios, seed, episodes)?;
    let mut out = Out::new(&cli.out, Manifest::new("compare", &list.join(","), &texts, seed))?;
    out.csv("compare.csv", &rows)?;
    out.finish()
}

fn audit(dir: &Path) -> Result<(), Failure> {
    let read = |name: &str| {
        let p = dir.join(name);
        fs::read_to_string(&p).map_err(|e| other(format!("{}: {e}", p.display())))
    };
    let s = Scenario::from_toml_str(&read("scenario.toml")?).map_err(|e| other(format!("scenario.toml: {e}")))?;
    let report: EpisodeReport =
        serde_json::from_str(&read("report.json")?).map_err(|e| other(format!("report.json: {e}")))?;
    let log = read_log_csv(&dir.join("log.csv")).map_err(|e| other(format!("log.csv: {e}")))?;
    let inst = instance_for(&s, report.seed, report.stream)?;
    let v = audit_log(&log, &inst.route, &s.mpc.env, &report.deadlines);
    println!("red {} ttc {} speed {} input {} deadline {}", v.red, v.ttc, v.speed, v.input, v.deadline);
    if v.safety_total() > 0 {
        return Err(Failure::Audit(format!("safety violations: {v:?}")));
    }
    if v.deadline > 0 && !report.had_soft_event() {
        return Err(Failure::Audit("deadline missed without slack or relaxation".into()));
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let res = match &cli.cmd {
        Cmd::FitEnergy { samples, count, noise } => fit_energy(&cli, samples.as_deref(), *count, *noise),
        Cmd::InitDataset => init_dataset(&cli),
        Cmd::Learn { iters, episodes } => learn(&cli, *iters, *episodes),
        Cmd::Episode {
            controller,
            stream,
            model,
            v_ref,
        } => episode(&cli, *controller, *stream, model.as_deref(), *v_ref),
        Cmd::Compare { scenarios, episodes } => compare(&cli, scenarios, *episodes),
        Cmd::Audit { dir } => audit(dir),
    };
    match res {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Audit(m)) => {
            eprintln!("audit failed: {m}");
            ExitCode::from(2)
        }
        Err(Failure::Other(m)) => {
            eprintln!("error: {m}");
            ExitCode::from(1)
        }
    }
}
