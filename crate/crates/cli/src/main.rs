use std::fs;
use std::io::{self, BufRead, BufReader};
use std::net::TcpListener;
use std::path::{Path, PathBuf};
use std::time::Instant;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use serde::Deserialize;

use nudge_core::domain::{default_course, CoursePlan};
use nudge_core::simulator::{generate_cohort, report, simulate, AgentProfile, CohortConfig, SimulationConfig};
use nudge_core::store::{api, read_jsonl, write_jsonl, Ack, Divergence, Store, StoreConfig, StoreError, STORE_DIR_ENV};
use nudge_core::working_time::WorkEvent;
use nudge_core::StudentId;

const COHORT_FILE: &str = "cohort.jsonl";

#[derive(Parser)]
#[command(name = "nudge", version, about = "Struggle detection, interventions and bonus-exercise recommendations")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Append events (JSON lines) to a store, creating it if needed.
    Ingest {
        #[command(flatten)]
        store: StoreArgs,
        #[command(flatten)]
        setup: SetupArgs,
        /// Event file, `-` for standard input.
        #[arg(default_value = "-")]
        input: PathBuf,
    },
    /// Run a synthetic cohort through a fresh store.
    Simulate {
        #[arg(long, default_value_t = 1000)]
        students: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Output directory; becomes a store.
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        setup: SetupArgs,
    },
    /// Recommend a bonus exercise.
    Recommend {
        #[command(flatten)]
        store: StoreArgs,
        #[arg(long)]
        student: String,
        #[arg(long)]
        week: u32,
    },
    /// Recompute the experiment report of a simulated store.
    Report {
        #[command(flatten)]
        store: StoreArgs,
        /// Print JSON instead of tables.
        #[arg(long)]
        json: bool,
    },
    /// Replay the log and compare it with the stored snapshot.
    Verify {
        #[command(flatten)]
        store: StoreArgs,
    },
    /// Answer length-prefixed JSON requests on stdin/stdout or a TCP socket.
    Serve {
        #[command(flatten)]
        store: StoreArgs,
        #[command(flatten)]
        setup: SetupArgs,
        /// Listen on this address instead of standard input.
        #[arg(long)]
        listen: Option<String>,
    },
}

#[derive(Args)]
struct StoreArgs {
    /// Store directory.
    #[arg(long = "store", env = STORE_DIR_ENV)]
    dir: PathBuf,
}

#[derive(Args, Default)]
struct SetupArgs {
    /// TOML file with `[store]`, `[cohort]` and `[simulation]` tables.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Course description; the built-in course is used otherwise.
    #[arg(long)]
    course: Option<PathBuf>,
    #[arg(long)]
    trigger_percentile: Option<f64>,
    #[arg(long)]
    min_active_seconds: Option<u64>,
    #[arg(long)]
    daily_cap: Option<u32>,
    #[arg(long)]
    per_exercise_cap: Option<u32>,
    #[arg(long)]
    attribution_window: Option<u64>,
    #[arg(long)]
    salt: Option<String>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
struct ConfigFile {
    store: StoreConfig,
    cohort: CohortConfig,
    simulation: SimulationConfig,
}

impl SetupArgs {
    fn load(&self) -> Result<(CoursePlan, ConfigFile)> {
        let plan = match &self.course {
            Some(path) => CoursePlan::from_toml(&read(path)?).with_context(|| format!("course {}", path.display()))?,
            None => default_course(),
        };
        let mut config: ConfigFile = match &self.config {
            Some(path) => toml::from_str(&read(path)?).with_context(|| format!("config {}", path.display()))?,
            None => ConfigFile::default(),
        };
        let policy = &mut config.store.policy;
        if let Some(v) = self.trigger_percentile {
            policy.trigger_percentile = v;
        }
        if let Some(v) = self.min_active_seconds {
            policy.min_active_seconds = v;
        }
        if let Some(v) = self.daily_cap {
            policy.daily_cap = v;
        }
        if let Some(v) = self.per_exercise_cap {
            policy.per_exercise_cap = v;
        }
        if let Some(v) = self.attribution_window {
            policy.attribution_window_seconds = v;
        }
        if let Some(salt) = &self.salt {
            config.store.salt = salt.clone();
        }
        Ok((plan, config))
    }

    fn open_or_create(&self, dir: &Path) -> Result<Store> {
        if dir.join(nudge_core::store::LOG_FILE).exists() {
            return Ok(Store::open(dir)?);
        }
        let (plan, config) = self.load()?;
        Ok(Store::create(dir, plan, config.store)?)
    }
}

fn read(path: &Path) -> Result<String> {
    fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))
}

fn open(dir: &Path) -> Result<Store> {
    Store::open(dir).with_context(|| format!("opening store {}", dir.display()))
}

fn ingest(store: &mut Store, input: &Path) -> Result<()> {
    let reader: Box<dyn BufRead> = if input == Path::new("-") {
        Box::new(BufReader::new(io::stdin()))
    } else {
        Box::new(BufReader::new(fs::File::open(input).with_context(|| input.display().to_string())?))
    };
    let (mut stored, mut duplicates) = (0, 0);
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let event: WorkEvent = serde_json::from_str(&line).with_context(|| format!("line {}", i + 1))?;
        match store.ingest_event(event).with_context(|| format!("line {}", i + 1))? {
            Ack::Stored => stored += 1,
            Ack::Duplicate => duplicates += 1,
        }
    }
    store.checkpoint()?;
    println!("stored {stored} events, {duplicates} duplicates");
    Ok(())
}

fn run_simulation(students: usize, seed: u64, out: &Path, setup: &SetupArgs) -> Result<()> {
    let (plan, config) = setup.load()?;
    let cohort = generate_cohort(students, &config.cohort, seed)?;
    let mut store = Store::create(out, plan, config.store)?;
    let started = Instant::now();
    simulate(&mut store, &cohort, &config.simulation)?;
    log::info!("simulated {students} agents in {:.2?}", started.elapsed());
    store.checkpoint()?;

    write_jsonl(&out.join(COHORT_FILE), &cohort)?;
    write_jsonl(&out.join("events.jsonl"), store.events())?;
    write_jsonl(&out.join("decisions.jsonl"), store.decisions())?;
    let knowledge: Vec<_> = store
        .engine()
        .students()
        .values()
        .flat_map(|r| r.knowledge.vector().records())
        .collect();
    write_jsonl(&out.join("knowledge.jsonl"), &knowledge)?;

    let report = report(store.log(), &cohort, store.plan(), store.config())?;
    fs::write(out.join("report.txt"), report.to_string())?;
    fs::write(out.join("report.json"), serde_json::to_string_pretty(&report)?)?;
    print!("{report}");
    Ok(())
}

/// Shows both records around their first differing byte.
fn describe_divergence(d: &Divergence) -> String {
    let (stored, replayed) = (d.stored.as_deref().unwrap_or(""), d.replayed.as_deref().unwrap_or(""));
    let at = stored
        .bytes()
        .zip(replayed.bytes())
        .position(|(a, b)| a != b)
        .unwrap_or(stored.len().min(replayed.len()));
    let excerpt = |s: &str| {
        let from = s.floor_char_boundary(at.saturating_sub(80));
        let to = s.ceil_char_boundary((at + 80).min(s.len()));
        s[from..to].to_owned()
    };
    format!(
        "first difference at byte {at}\n  stored:   ...{}...\n  replayed: ...{}...",
        excerpt(stored),
        excerpt(replayed)
    )
}

fn serve(store: &mut Store, listen: Option<&str>) -> Result<()> {
    match listen {
        None => {
            api::serve(store, io::stdin().lock(), io::stdout().lock())?;
        }
        Some(addr) => {
            let listener = TcpListener::bind(addr).with_context(|| format!("binding {addr}"))?;
            log::info!("listening on {}", listener.local_addr()?);
            // One connection at a time keeps a single writer.
            for stream in listener.incoming() {
                let stream = stream?;
                let handled = api::serve(store, stream.try_clone()?, stream)?;
                store.checkpoint()?;
                log::info!("connection closed after {handled} requests");
            }
        }
    }
    store.checkpoint()?;
    Ok(())
}

fn main() -> Result<()> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match Cli::parse().command {
        Command::Ingest { store, setup, input } => {
            let mut s = setup.open_or_create(&store.dir)?;
            ingest(&mut s, &input)
        }
        Command::Simulate {
            students,
            seed,
            out,
            setup,
        } => run_simulation(students, seed, &out, &setup),
        Command::Recommend { store, student, week } => {
            let s = open(&store.dir)?;
            let rec = s.recommend(&StudentId::new(student), week)?;
            println!("{}", serde_json::to_string_pretty(&rec)?);
            Ok(())
        }
        Command::Report { store, json } => {
            let s = open(&store.dir)?;
            let cohort_path = store.dir.join(COHORT_FILE);
            if !cohort_path.exists() {
                bail!("{} has no {COHORT_FILE}; reports need a simulated store", store.dir.display());
            }
            let cohort: Vec<AgentProfile> = read_jsonl(&cohort_path)?;
            let report = report(s.log(), &cohort, s.plan(), s.config())?;
            if json {
                println!("{}", serde_json::to_string_pretty(&report)?);
            } else {
                print!("{report}");
            }
            Ok(())
        }
        Command::Verify { store } => {
            let s = open(&store.dir)?;
            let r = match s.verify() {
                Err(StoreError::Divergence(d)) => {
                    eprintln!("{}", describe_divergence(&d));
                    bail!("replay diverges at snapshot line {}: {}", d.line, d.label);
                }
                other => other?,
            };
            println!(
                "ok: {} log entries replayed, {} snapshot records match",
                r.log_entries, r.snapshot_lines
            );
            Ok(())
        }
        Command::Serve { store, setup, listen } => {
            let mut s = setup.open_or_create(&store.dir)?;
            serve(&mut s, listen.as_deref())
        }
    }
}
