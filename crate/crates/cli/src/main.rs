use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Parser, Subcommand};
use xmlstore::store::{Store, StoreConfig, StoreError};
use xmlstore::ResourceId;

/// XML resource store with a centralized and a simulated peer-to-peer backend.
#[derive(Parser)]
#[command(name = "store", version)]
struct Cli {
    /// Store state file, rewritten by every mutating command.
    #[arg(long, global = true, env = "STORE_STATE", default_value = ".store-state")]
    state: PathBuf,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Create an empty store from a key=value config file.
    Init {
        #[arg(long)]
        config: PathBuf,
        /// Replace an existing store.
        #[arg(long)]
        force: bool,
    },
    /// Store XML documents and print their resource ids.
    Ingest {
        #[arg(required = true)]
        files: Vec<PathBuf>,
    },
    /// Print one resource.
    Get { id: String },
    /// Evaluate a tree pattern, e.g. `//sec[/title="dht"]!`.
    Query {
        pattern: String,
        /// Print the resources wrapped in one `<results>` document, ready to ingest.
        #[arg(long)]
        xml: bool,
    },
    /// Load tab-separated triples.
    RdfLoad { file: PathBuf },
    /// Run a conjunctive query file (`SELECT ?x ...` then one pattern per line).
    RdfQuery { file: PathBuf },
    /// Print store and traffic counters.
    Stats,
    /// Write a snapshot (defaults to the configured snapshot_path).
    Snapshot { path: Option<PathBuf> },
    /// Replace the store with the contents of a snapshot.
    Restore { path: Option<PathBuf> },
}

/// Something wrong with what the user asked for, as opposed to a failure
/// inside the store.
#[derive(Debug)]
struct UserError(String);

impl fmt::Display for UserError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UserError {}

fn user(msg: impl Into<String>) -> anyhow::Error {
    UserError(msg.into()).into()
}

fn read_input(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| user(format!("{}: {e}", path.display())))
}

fn load(state: &Path) -> Result<Store> {
    if !state.exists() {
        return Err(user(format!(
            "no store at {}; run `store init --config <file>` first",
            state.display()
        )));
    }
    Ok(Store::restore(state)?)
}

fn save(store: &Store, state: &Path) -> Result<()> {
    store
        .snapshot(state)
        .with_context(|| format!("writing {}", state.display()))
}

fn snapshot_path(store: &Store, path: Option<PathBuf>) -> Result<PathBuf> {
    path.or_else(|| store.config().snapshot_path.clone())
        .ok_or_else(|| user("no path given and no snapshot_path configured"))
}

fn run(cli: Cli) -> Result<()> {
    let state = cli.state.as_path();
    match cli.command {
        Command::Init { config, force } => {
            if state.exists() && !force {
                return Err(user(format!("{} already exists; pass --force to replace it", state.display())));
            }
            let config = StoreConfig::parse(&read_input(&config)?)?;
            let store = Store::new(config)?;
            save(&store, state)?;
            println!("initialized {} store at {}", store.config().backend, state.display());
        }
        Command::Ingest { files } => {
            let mut store = load(state)?;
            let texts = files
                .iter()
                .map(|f| read_input(f).map(|t| (f, t)))
                .collect::<Result<Vec<_>>>()?;
            for (file, text) in texts {
                let ids = store
                    .ingest(&text)
                    .with_context(|| format!("{}", file.display()))?;
                let ids: Vec<&str> = ids.iter().map(ResourceId::as_str).collect();
                println!("{}: {}", file.display(), ids.join(" "));
            }
            save(&store, state)?;
        }
        Command::Get { id } => {
            let mut store = load(state)?;
            let id = ResourceId::new(id.clone()).ok_or_else(|| user(format!("{id:?} is not a resource id")))?;
            println!("{}", store.get_resource(&id)?.payload);
        }
        Command::Query { pattern, xml } => {
            let mut store = load(state)?;
            let result = store.query(&pattern)?;
            if xml {
                let body: String = result.resources.iter().map(|r| r.payload.as_str()).collect();
                println!("<results>{body}</results>");
            } else {
                for r in &result.resources {
                    println!("{}\t{}", r.id.as_str(), r.payload);
                }
            }
            eprintln!(
                "{} resources, {} messages, {} bytes",
                result.resources.len(),
                result.stats.messages_sent,
                result.stats.bytes_sent
            );
        }
        Command::RdfLoad { file } => {
            let mut store = load(state)?;
            let n = store.rdf_load(&read_input(&file)?)?;
            save(&store, state)?;
            println!("loaded {n} triples");
        }
        Command::RdfQuery { file } => {
            let mut store = load(state)?;
            let (q, rows) = store.rdf_query(&read_input(&file)?)?;
            let header: Vec<String> = q.projection.iter().map(|v| format!("?{v}")).collect();
            println!("{}", header.join("\t"));
            for row in rows {
                println!("{}", row.join("\t"));
            }
        }
        Command::Stats => println!("{}", load(state)?.stats()),
        Command::Snapshot { path } => {
            let store = load(state)?;
            let path = snapshot_path(&store, path)?;
            store.snapshot(&path)?;
            println!("wrote {}", path.display());
        }
        Command::Restore { path } => {
            let path = match path {
                Some(p) => p,
                None => snapshot_path(&load(state)?, None)?,
            };
            let store = Store::restore(&path)?;
            save(&store, state)?;
            println!("restored {} documents from {}", store.stats().documents, path.display());
        }
    }
    Ok(())
}

fn exit_code(err: &anyhow::Error) -> u8 {
    if err.downcast_ref::<UserError>().is_some() {
        return 1;
    }
    match err.downcast_ref::<StoreError>() {
        Some(e) if e.is_user_error() => 1,
        _ => 2,
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 1 } else { 0 });
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}
