//! `pirsi`: generate databases, run servers, fetch, audit and print bounds.
//!
//! Every command prints `key=value` lines first, then a blank line and a
//! table for humans. Failures print one `error: ...` line and exit 1.

use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use pirsi::audit::{audit_statistical_w, audit_w, audit_ws, AuditReport, Prior, StatisticalReport};
use pirsi::bounds;
use pirsi::mds::MdsScheme;
use pirsi::multi_server::MultiServerScheme;
use pirsi::net::{self, fetch, SchemeId, Server, SessionConfig, Transcript};
use pirsi::partition::PartitionScheme;
use pirsi::{Database, DemandSpec, ProblemParams};

#[derive(Parser)]
#[command(
    name = "pirsi",
    version,
    about = "Private information retrieval with side information"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write a random database file.
    GenDb {
        #[arg(long)]
        k: usize,
        #[arg(long)]
        t: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Output path.
        #[arg(long)]
        out: PathBuf,
    },
    /// Serve a database over TCP until killed.
    Serve {
        #[arg(long)]
        db: PathBuf,
        #[arg(long, env = net::LISTEN_ENV, default_value = net::DEFAULT_LISTEN)]
        addr: String,
    },
    /// Retrieve one message.
    Fetch(FetchArgs),
    /// Exact or sampled privacy audit.
    Audit(AuditArgs),
    /// Capacity formulas and converse bounds.
    Bounds {
        #[arg(long)]
        k: usize,
        #[arg(long)]
        m: usize,
        #[arg(long)]
        n: Option<usize>,
    },
    /// Recompute the download rate from a saved transcript.
    RateReport { transcript: PathBuf },
}

#[derive(Args)]
struct FetchArgs {
    /// key=value session file; flags below override it.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    scheme: Option<SchemeId>,
    #[arg(long)]
    n: Option<usize>,
    #[arg(long)]
    k: Option<usize>,
    #[arg(long)]
    m: Option<usize>,
    #[arg(long)]
    t: Option<usize>,
    /// Comma-separated server addresses; in-process servers when absent.
    #[arg(long, value_delimiter = ',')]
    servers: Vec<String>,
    #[arg(long)]
    seed: Option<u64>,
    /// Database file the user's side information is read from.
    #[arg(long)]
    db: PathBuf,
    #[arg(long, conflicts_with = "sample")]
    w: Option<usize>,
    /// Side-information indices, comma-separated.
    #[arg(long, value_delimiter = ',', conflicts_with = "sample")]
    s: Vec<usize>,
    /// Draw (W, S) uniformly using the seed.
    #[arg(long)]
    sample: bool,
    /// Where to write the JSON transcript.
    #[arg(long)]
    transcript: Option<PathBuf>,
}

#[derive(Args)]
struct AuditArgs {
    #[arg(long)]
    scheme: SchemeId,
    #[arg(long)]
    k: usize,
    #[arg(long)]
    m: usize,
    #[arg(long, default_value_t = 2)]
    n: usize,
    /// Audit (W, S) jointly instead of W alone.
    #[arg(long)]
    joint: bool,
    /// Sample queries instead of enumerating them.
    #[arg(long)]
    statistical: bool,
    #[arg(long, default_value_t = 10_000)]
    samples: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Print the full posterior table.
    #[arg(long)]
    table: bool,
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {}", format!("{e:#}").replace('\n', " "));
            ExitCode::FAILURE
        }
    }
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::GenDb { k, t, seed, out } => {
            let db = Database::random(k, t, &mut ChaCha8Rng::seed_from_u64(seed))?;
            db.save(&out)
                .with_context(|| format!("writing {}", out.display()))?;
            println!("k={k}\nt={t}\nseed={seed}\npath={}", out.display());
        }
        Command::Serve { db, addr } => {
            let server = Server::load(&db).with_context(|| format!("loading {}", db.display()))?;
            let listener =
                std::net::TcpListener::bind(&addr).with_context(|| format!("binding {addr}"))?;
            let d = server.database();
            println!(
                "listening={}\nk={}\nt={}",
                listener.local_addr()?,
                d.len(),
                d.message_bits()
            );
            server.serve_tcp(listener)?;
        }
        Command::Fetch(args) => run_fetch(args)?,
        Command::Audit(args) => run_audit(args)?,
        Command::Bounds { k, m, n } => run_bounds(k, m, n)?,
        Command::RateReport { transcript } => {
            let text = std::fs::read_to_string(&transcript)
                .with_context(|| format!("reading {}", transcript.display()))?;
            let tr = Transcript::from_json(&text)?;
            let r = tr.replay_rate()?;
            println!(
                "scheme={}\nmessage_bits={}\ndownloaded_bits={}\nrate={}",
                tr.scheme,
                r.message_bits,
                r.total_answer_bits,
                r.rate()
            );
            println!("upload_bytes={}\n", tr.upload_bytes);
            println!("server\tanswer_bits");
            for (i, b) in tr.downloaded_bits.iter().enumerate() {
                println!("{}\t{b}", i + 1);
            }
        }
    }
    Ok(())
}

fn session(args: &FetchArgs, db: &Database) -> Result<SessionConfig> {
    let mut cfg = match &args.config {
        Some(p) => SessionConfig::load(p).with_context(|| format!("loading {}", p.display()))?,
        None => SessionConfig::new(
            args.scheme.context("--scheme or --config is required")?,
            ProblemParams {
                servers: 1,
                messages: db.len(),
                side: 0,
                bits: db.message_bits(),
            },
            0,
        ),
    };
    if let Some(s) = args.scheme {
        cfg.scheme = s;
    }
    let p = &mut cfg.params;
    p.servers = args.n.unwrap_or(p.servers);
    p.messages = args.k.unwrap_or(p.messages);
    p.side = args
        .m
        .or(if args.s.is_empty() {
            None
        } else {
            Some(args.s.len())
        })
        .unwrap_or(p.side);
    p.bits = args.t.unwrap_or(p.bits);
    cfg.seed = args.seed.unwrap_or(cfg.seed);
    if !args.servers.is_empty() {
        cfg.addresses = args.servers.clone();
    }
    if cfg.scheme == SchemeId::Multiserver && cfg.params.servers == 1 {
        bail!("the multiserver scheme needs --n >= 2; use --scheme partition for one server");
    }
    cfg.validate()?;
    Ok(cfg)
}

fn run_fetch(args: FetchArgs) -> Result<()> {
    let db = Database::load(&args.db).with_context(|| format!("loading {}", args.db.display()))?;
    let cfg = session(&args, &db)?;
    let p = cfg.params;
    let spec = if args.sample {
        pirsi::model::sample_demand(
            p.messages,
            p.side,
            &mut ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x5eed),
        )?
    } else {
        let w = args.w.context("give --w (and --s) or --sample")?;
        DemandSpec::new(p.messages, w, args.s.iter().copied())?
    };
    let side = db.side_info(&spec.side)?;
    let mut transports = if cfg.addresses.is_empty() {
        net::in_process(&db, p.servers)
    } else {
        net::tcp(&cfg.addresses)?
    };
    let out = fetch(&cfg, &mut transports, &spec, &side)?;
    if let Some(path) = &args.transcript {
        std::fs::write(path, out.transcript.to_json())
            .with_context(|| format!("writing {}", path.display()))?;
    }
    let side_list: Vec<String> = spec.side.iter().map(ToString::to_string).collect();
    println!(
        "scheme={}\nn={}\nk={}\nm={}\nt={}",
        cfg.scheme, p.servers, p.messages, p.side, p.bits
    );
    println!("w={}\ns={}", spec.demand, side_list.join(","));
    println!(
        "downloaded_bits={}\nrate={}",
        out.report.total_answer_bits,
        out.report.rate()
    );
    println!(
        "upload_bytes={}\nmessage={}",
        out.transcript.upload_bytes,
        hex(out.message.as_bytes())
    );
    println!("verified={}\n", db.message(spec.demand)? == &out.message);
    println!("server\tanswer_bits");
    for (i, b) in out.transcript.downloaded_bits.iter().enumerate() {
        println!("{}\t{b}", i + 1);
    }
    Ok(())
}

fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

fn run_audit(a: AuditArgs) -> Result<()> {
    if a.statistical {
        let mut rng = ChaCha8Rng::seed_from_u64(a.seed);
        let r = match a.scheme {
            SchemeId::Partition => audit_statistical_w(
                &PartitionScheme::new(a.k, a.m)?,
                a.k,
                a.m,
                a.samples,
                &mut rng,
            )?,
            SchemeId::Mds => {
                audit_statistical_w(&MdsScheme::new(a.k, a.m)?, a.k, a.m, a.samples, &mut rng)?
            }
            SchemeId::Multiserver => audit_statistical_w(
                &MultiServerScheme::new(a.n, a.k, a.m)?,
                a.k,
                a.m,
                a.samples,
                &mut rng,
            )?,
        };
        print_statistical(&a, &r);
        return Ok(());
    }
    let prior = Prior::uniform(a.k, a.m)?;
    let audit = |s: &dyn pirsi::audit::EnumerableScheme| -> Result<AuditReport> {
        Ok(if a.joint {
            audit_ws(s, &prior)?
        } else {
            audit_w(s, &prior)?
        })
    };
    let r = match a.scheme {
        SchemeId::Partition => audit(&PartitionScheme::new(a.k, a.m)?)?,
        SchemeId::Mds => audit(&MdsScheme::new(a.k, a.m)?)?,
        SchemeId::Multiserver => audit(&MultiServerScheme::new(a.n, a.k, a.m)?)?,
    };
    println!("scheme={}\nk={}\nm={}", a.scheme, a.k, a.m);
    println!("audit={}", if a.joint { "ws" } else { "w" });
    println!(
        "max_deviation={}\nprivate={}",
        r.max_posterior_deviation,
        r.is_private()
    );
    println!("queries={}\nhypotheses={}\n", r.queries, r.hypotheses);
    println!("{}", r.summary());
    if a.table {
        print!("{}", r.table());
    }
    Ok(())
}

fn print_statistical(a: &AuditArgs, r: &StatisticalReport) {
    println!(
        "scheme={}\nk={}\nm={}\nsamples={}",
        a.scheme, a.k, a.m, r.samples_per_hypothesis
    );
    println!(
        "distinct_queries={}\nmin_p_value={:.6}\nmax_tv={:.6}",
        r.distinct_queries,
        r.min_p_value(),
        r.max_total_variation()
    );
    if let Some(w) = &r.warning {
        println!("warning={w}");
    }
    println!("\na\tb\ttv\tchi2\tdof\tp");
    for p in &r.pairs {
        println!(
            "{}\t{}\t{:.4}\t{:.3}\t{}\t{:.4}",
            p.a, p.b, p.total_variation, p.chi_square, p.dof, p.p_value
        );
    }
}

fn run_bounds(k: usize, m: usize, n: Option<usize>) -> Result<()> {
    let cw = bounds::capacity_w(k, m)?;
    let cws = bounds::capacity_ws(k, m)?;
    println!("k={k}\nm={m}\ncapacity_w={cw}\ncapacity_ws={cws}");
    println!(
        "mais_lower_bound={}\nlinear_code_lower_bound={}",
        k.div_ceil(m + 1),
        bounds::linear_code_lower_bound(k, m)
    );
    let multi = match n {
        Some(n) => {
            let r = bounds::multiserver_rate_lb(n, k, m)?;
            println!("n={n}\nmultiserver_rate_lb={r}");
            Some((n, r))
        }
        None => None,
    };
    println!("\nquantity\texact\tdecimal");
    let row = |name: &str, exact: String, value: f64| println!("{name}\t{exact}\t{value:.4}");
    row(
        "W-privacy capacity",
        cw.to_string(),
        *cw.numer() as f64 / *cw.denom() as f64,
    );
    row(
        "(W,S)-privacy capacity",
        cws.to_string(),
        *cws.numer() as f64 / *cws.denom() as f64,
    );
    if let Some((n, r)) = multi {
        row(
            &format!("multiserver rate (N={n})"),
            r.to_string(),
            *r.numer() as f64 / *r.denom() as f64,
        );
    }
    Ok(())
}
