//! `skycat` command-line driver.
//!
//! Every verb loads the store from `--store`, runs one operation, prints a
//! JSON result on stdout and saves the store back if anything changed.
//! Failures print `{"error":{"code":..,"message":..}}` on stderr and exit
//! with 1 (usage), 2 (data) or 3 (unavailable).

use std::fs::{self, File};
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::error::ErrorKind;
use clap::{Args, Parser, Subcommand};
use serde_json::{json, Value};

use skycat::archive::{Archive, ArchiveConfig};
use skycat::balancer::{NodeDescriptor, Tier};
use skycat::catalog::PartitionKey;
use skycat::config::Settings;
use skycat::harness::{simulate_night, MetricsSink};
use skycat::index::{ConeQuery, EpochRange};
use skycat::ingest::parse_batch_ndjson;
use skycat::router::{Pool, Query};
use skycat::{Error, Result};

#[derive(Debug, Parser)]
#[command(name = "skycat", version, about = "Desk-scale survey catalog archive")]
struct Cli {
    /// Store directory.
    #[arg(long, global = true, env = "SKYCAT_STORE", default_value = "skycat-store")]
    store: PathBuf,
    /// Advance the simulated clock to this time (seconds) before running.
    #[arg(long, global = true)]
    time: Option<f64>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Create an empty store.
    Init {
        /// Flat key = value settings file.
        #[arg(long)]
        config: Option<PathBuf>,
        /// Replace an existing store.
        #[arg(long)]
        force: bool,
    },
    /// Validate and stage one ND-JSON detection batch.
    Ingest {
        #[arg(long)]
        batch: PathBuf,
        /// Arrival time; defaults to the store clock.
        #[arg(long)]
        received_at: Option<f64>,
        /// Associate the batch's visit right after staging.
        #[arg(long)]
        associate: bool,
    },
    /// Close the night, merge staged rows into the catalog and truncate.
    Merge {
        /// Leave the ingest tables in place after merging.
        #[arg(long)]
        keep_staged: bool,
    },
    /// Freeze partitions into a new release.
    Release {
        /// Partitions to release; all when omitted.
        #[arg(long = "partition")]
        partitions: Vec<PartitionKey>,
    },
    /// Run a query; rows stream as ND-JSON.
    Query(QueryArgs),
    /// Detect hot spots and move replicas off overloaded nodes.
    Rebalance {
        #[arg(long)]
        factor: Option<f64>,
        /// Print the plan without applying it.
        #[arg(long)]
        dry_run: bool,
    },
    /// Register a catalog node.
    AddNode {
        id: String,
        #[arg(long)]
        tier: Tier,
        #[arg(long, default_value = "farm-0")]
        farm: String,
        #[arg(long, default_value_t = 1000)]
        capacity: usize,
    },
    FailNode {
        id: String,
    },
    RecoverNode {
        id: String,
    },
    /// Place replicas of catalog partitions on nodes of one tier.
    Distribute {
        #[arg(long)]
        tier: Tier,
        #[arg(long, default_value_t = 2)]
        copies: usize,
        #[arg(long = "partition")]
        partitions: Vec<PartitionKey>,
    },
    /// Copy partitions from one tier to another.
    Replicate {
        #[arg(long)]
        from: Tier,
        #[arg(long)]
        to: Tier,
        #[arg(long = "partition")]
        partitions: Vec<PartitionKey>,
    },
    Status,
    /// Print one catalog partition as ND-JSON.
    Export {
        #[arg(long)]
        partition: PartitionKey,
    },
    /// Simulate one observing night against the store.
    Simulate {
        #[arg(long)]
        config: Option<PathBuf>,
        /// ND-JSON metrics destination; `-` for stdout.
        #[arg(long)]
        metrics: Option<PathBuf>,
    },
}

#[derive(Debug, Args)]
struct QueryArgs {
    /// JSON query file; other query flags are ignored when given.
    #[arg(long)]
    file: Option<PathBuf>,
    /// `ra,dec,radius` in degrees.
    #[arg(long)]
    cone: Option<String>,
    /// `start,end` in seconds.
    #[arg(long)]
    epoch: Option<String>,
    #[arg(long)]
    object: Option<u64>,
    /// `latest` or `released:<id>`.
    #[arg(long, default_value = "latest")]
    pool: Pool,
    #[arg(long)]
    farm: Option<String>,
    /// Print the plan instead of running the query.
    #[arg(long)]
    explain: bool,
}

fn floats<const N: usize>(what: &str, s: &str) -> Result<[f64; N]> {
    let parts: Vec<f64> = s
        .split(',')
        .map(|p| p.trim().parse::<f64>())
        .collect::<std::result::Result<_, _>>()
        .map_err(|_| Error::InvalidQuery(format!("{what}: expected {N} numbers, got {s:?}")))?;
    parts
        .try_into()
        .map_err(|_| Error::InvalidQuery(format!("{what}: expected {N} numbers, got {s:?}")))
}

impl QueryArgs {
    fn build(&self) -> Result<Query> {
        if let Some(path) = &self.file {
            let text = fs::read_to_string(path)?;
            return serde_json::from_str(&text)
                .map_err(|e| Error::InvalidQuery(format!("{}: {e}", path.display())));
        }
        let cone = match &self.cone {
            Some(s) => {
                let [ra, dec, r] = floats("cone", s)?;
                Some(ConeQuery::new(ra, dec, r).map_err(|e| Error::InvalidQuery(e.to_string()))?)
            }
            None => None,
        };
        let epoch_range = match &self.epoch {
            Some(s) => {
                let [a, b] = floats("epoch", s)?;
                Some(EpochRange::new(a, b).map_err(|e| Error::InvalidQuery(e.to_string()))?)
            }
            None => None,
        };
        Ok(Query {
            cone,
            epoch_range,
            object_id: self.object,
            pool: self.pool,
            farm_hint: self.farm.clone(),
        })
    }
}

fn print_json(out: &mut impl Write, v: &impl serde::Serialize) -> Result<()> {
    serde_json::to_writer(&mut *out, v)?;
    writeln!(out)?;
    Ok(())
}

fn open_store(dir: &Path) -> Result<Archive> {
    Archive::load(dir)
}

fn store_exists(dir: &Path) -> bool {
    Archive::state_path(dir).exists()
}

fn run(cli: Cli) -> Result<()> {
    let stdout = io::stdout();
    let mut out = BufWriter::new(stdout.lock());
    let dir = cli.store.as_path();

    if let Command::Init { config, force } = &cli.command {
        if store_exists(dir) && !force {
            return Err(Error::Config(format!(
                "store {} already exists; pass --force to replace it",
                dir.display()
            )));
        }
        let cfg = match config {
            Some(p) => Settings::load(p)?.archive,
            None => ArchiveConfig::default(),
        };
        let archive = Archive::new(cfg)?;
        archive.save(dir)?;
        print_json(&mut out, &archive.status())?;
        out.flush()?;
        return Ok(());
    }

    let archive = match &cli.command {
        // A simulation may bring its own store configuration.
        Command::Simulate {
            config: Some(p), ..
        } if !store_exists(dir) => Archive::new(Settings::load(p)?.archive)?,
        _ => open_store(dir)?,
    };
    if let Some(t) = cli.time {
        archive.set_clock(t);
    }

    let mut dirty = true;
    match cli.command {
        Command::Init { .. } => unreachable!("handled above"),
        Command::Ingest {
            batch,
            received_at,
            associate,
        } => {
            let text = fs::read_to_string(&batch)?;
            let at = received_at.unwrap_or_else(|| archive.clock());
            let b = parse_batch_ndjson(&text, at)?;
            archive.set_clock(at);
            let outcome = archive.ingest_batch(&b)?;
            let association =
                associate.then(|| archive.associate_visit(b.visit_id, archive.clock()));
            print_json(
                &mut out,
                &json!({"validation": outcome.validation, "staged": outcome.staged, "association": association}),
            )?;
        }
        Command::Merge { keep_staged } => {
            let r = archive.merge_night(!keep_staged)?;
            print_json(&mut out, &r)?;
        }
        Command::Release { partitions } => {
            let keys = (!partitions.is_empty()).then_some(partitions.as_slice());
            let r = archive.create_release(keys)?;
            print_json(&mut out, &r)?;
        }
        Command::Query(args) => {
            let q = args.build()?;
            if args.explain {
                dirty = false;
                print_json(&mut out, &archive.plan_query(&q)?)?;
            } else {
                let r = archive.query(&q)?;
                for row in &r.rows {
                    print_json(&mut out, row)?;
                }
                for obj in &r.objects {
                    print_json(&mut out, &json!({ "object": obj }))?;
                }
            }
        }
        Command::Rebalance { factor, dry_run } => {
            let factor = factor.unwrap_or(archive.config().balancer.threshold_factor);
            let hotspots = archive.balancer.detect_hotspots(factor)?;
            let plan = archive.balancer.plan_rebalance(&hotspots);
            let applied = if dry_run {
                dirty = false;
                None
            } else {
                Some(archive.balancer.apply_rebalance(&archive.catalog, &plan)?)
            };
            print_json(&mut out, &json!({"plan": plan, "applied": applied}))?;
        }
        Command::AddNode {
            id,
            tier,
            farm,
            capacity,
        } => {
            archive
                .balancer
                .add_node(NodeDescriptor::new(&id, tier, &farm, capacity))?;
            print_json(&mut out, archive.balancer.topology().node(&id)?)?;
        }
        Command::FailNode { id } => {
            archive.balancer.fail_node(&id)?;
            print_json(&mut out, archive.balancer.topology().node(&id)?)?;
        }
        Command::RecoverNode { id } => {
            archive.balancer.recover_node(&id)?;
            print_json(&mut out, archive.balancer.topology().node(&id)?)?;
        }
        Command::Distribute {
            tier,
            copies,
            partitions,
        } => {
            let keys = if partitions.is_empty() {
                archive.catalog.keys()
            } else {
                partitions
            };
            archive
                .balancer
                .distribute(&archive.catalog, &keys, tier, copies)?;
            let topo = archive.balancer.topology();
            print_json(
                &mut out,
                &json!({"partitions": keys.len(), "topology_version": topo.version}),
            )?;
        }
        Command::Replicate {
            from,
            to,
            partitions,
        } => {
            let keys = if partitions.is_empty() {
                archive.catalog.keys()
            } else {
                partitions
            };
            let placed = archive
                .balancer
                .replicate_to_tier(&archive.catalog, &keys, from, to)?;
            let placed: Vec<Value> = placed
                .into_iter()
                .map(|(k, n)| json!({"partition": k, "node": n}))
                .collect();
            print_json(&mut out, &json!({ "placed": placed }))?;
        }
        Command::Status => {
            dirty = false;
            print_json(&mut out, &archive.status())?;
        }
        Command::Export { partition } => {
            dirty = false;
            out.write_all(archive.catalog.export_ndjson(&partition)?.as_bytes())?;
        }
        Command::Simulate { config, metrics } => {
            let sim = match &config {
                Some(p) => Settings::load(p)?.sim,
                None => Default::default(),
            };
            let mut sink = match metrics.as_deref() {
                None => MetricsSink::null(),
                Some(p) if p == Path::new("-") => MetricsSink::writer(io::stdout()),
                Some(p) => MetricsSink::writer(BufWriter::new(File::create(p)?)),
            };
            let report = simulate_night(&archive, &sim, &mut sink)?;
            print_json(&mut out, &report)?;
        }
    }
    out.flush()?;
    if dirty {
        archive.save(dir)?;
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => ExitCode::SUCCESS,
                _ => ExitCode::from(1),
            };
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let body = json!({"error": {"code": e.code(), "message": e.to_string()}});
            eprintln!("{body}");
            ExitCode::from(e.exit_class() as u8)
        }
    }
}
