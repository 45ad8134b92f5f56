use std::net::TcpListener;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use anyhow::{bail, Context};
use clap::{Parser, Subcommand};
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use sknn_core::numerics::{parse_vec, DEFAULT_DATA_SCALE};
use sknn_core::paillier::DEFAULT_KEY_BITS;
use sknn_core::zhu::SchemeDims;
use sknn_runtime::attack_harness::{self, AttackConfig};
use sknn_runtime::bench::{self, BenchParams};
use sknn_runtime::config::{resolve, FileConfig};
use sknn_runtime::keystore::{self, KeyBundle, Role};
use sknn_runtime::roles::{serve, CloudServer, DataOwner, EncryptedDb, OwnerKeys, QueryClient, TcpTransport, Transport};
use sknn_runtime::{Dataset, Scheme};

#[derive(Parser)]
#[command(name = "sknn", version, about = "Secure kNN: key generation, outsourcing, querying, attack and benchmarks")]
struct Cli {
    /// TOML file with default settings
    #[arg(long, global = true, env = "SKNN_CONFIG")]
    config: Option<PathBuf>,
    #[command(subcommand)]
    cmd: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate owner keys and the per-role key files
    Keygen {
        #[arg(long)]
        scheme: Scheme,
        #[arg(long)]
        d: usize,
        #[arg(long, default_value_t = 2)]
        c: usize,
        #[arg(long, default_value_t = 2)]
        eps: usize,
        #[arg(long, default_value_t = 2)]
        l: usize,
        /// Output directory for owner.key, cloud.key (and query.key under aspe)
        #[arg(long)]
        out: PathBuf,
        #[arg(long, env = "SKNN_PASSPHRASE")]
        passphrase: Option<String>,
        #[arg(long, env = "SKNN_SEED")]
        seed: Option<u64>,
    },
    /// Encrypt a CSV table (`id,x1..xd`) for the cloud server
    EncryptDb {
        #[arg(long)]
        scheme: Scheme,
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        key: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, env = "SKNN_PASSPHRASE")]
        passphrase: Option<String>,
        #[arg(long, env = "SKNN_SEED")]
        seed: Option<u64>,
    },
    /// Run the data owner or the cloud server
    Serve {
        #[arg(long, value_parser = ["do", "cs"])]
        role: String,
        #[arg(long)]
        port: u16,
        #[arg(long)]
        key: PathBuf,
        /// Encrypted table (cloud server only)
        #[arg(long)]
        db: Option<PathBuf>,
        #[arg(long, env = "SKNN_PASSPHRASE")]
        passphrase: Option<String>,
        #[arg(long, env = "SKNN_SEED")]
        seed: Option<u64>,
    },
    /// Encrypt a query and ask the cloud server for its k nearest records
    Query {
        #[arg(long)]
        scheme: Scheme,
        /// Comma-separated coordinates, e.g. "13,97"
        #[arg(long, allow_hyphen_values = true)]
        q: String,
        #[arg(long, default_value_t = 5)]
        k: usize,
        #[arg(long, env = "SKNN_DO_ADDR")]
        do_addr: Option<String>,
        #[arg(long, env = "SKNN_CS_ADDR")]
        cs_addr: Option<String>,
        /// Shared key file (aspe only)
        #[arg(long)]
        key: Option<PathBuf>,
        #[arg(long, env = "SKNN_PASSPHRASE")]
        passphrase: Option<String>,
        #[arg(long, env = "SKNN_KEY_BITS")]
        key_bits: Option<u64>,
        #[arg(long, env = "SKNN_COORD_SCALE")]
        coord_scale: Option<u32>,
        #[arg(long, env = "SKNN_SEED")]
        seed: Option<u64>,
    },
    /// Forge queries from basis tokens and report how many succeed
    Attack {
        #[arg(long)]
        scheme: Scheme,
        #[arg(long)]
        dim: usize,
        #[arg(long, default_value_t = 100)]
        trials: usize,
        #[arg(long, default_value_t = 1000)]
        m: usize,
        #[arg(long, default_value_t = 5)]
        k: usize,
        #[arg(long, env = "SKNN_KEY_BITS")]
        key_bits: Option<u64>,
        #[arg(long, env = "SKNN_SEED")]
        seed: Option<u64>,
    },
    /// Timing experiment for one figure (2-7); writes JSON and CSV
    Bench {
        #[arg(long)]
        figure: u8,
        #[arg(long, value_delimiter = ',')]
        dims: Option<Vec<usize>>,
        #[arg(long, value_delimiter = ',')]
        sizes: Option<Vec<usize>>,
        #[arg(long)]
        reps: Option<usize>,
        #[arg(long, env = "SKNN_KEY_BITS")]
        key_bits: Option<u64>,
        #[arg(long, env = "SKNN_OUT_DIR")]
        out_dir: Option<PathBuf>,
        #[arg(long, env = "SKNN_SEED")]
        seed: Option<u64>,
    },
}

fn passphrase(flag: Option<String>, file: &FileConfig) -> anyhow::Result<String> {
    flag.or_else(|| file.passphrase.clone())
        .context("a passphrase is required (--passphrase, SKNN_PASSPHRASE or the config file)")
}

fn owner_keys(path: &Path, pass: &str) -> anyhow::Result<OwnerKeys> {
    match keystore::load(path, pass)? {
        KeyBundle::Owner { keys } | KeyBundle::Query { keys } => Ok(keys),
        KeyBundle::Cloud { .. } => bail!("{} holds cloud keys, not owner keys", path.display()),
    }
}

fn main() -> anyhow::Result<()> {
    let cli = Cli::parse();
    let file = FileConfig::load(cli.config.as_deref())?;
    let seed = |flag: Option<u64>| resolve(flag, file.seed, 0);

    match cli.cmd {
        Command::Keygen { scheme, d, c, eps, l, out, passphrase: p, seed: s } => {
            let pass = passphrase(p, &file)?;
            let mut rng = ChaCha20Rng::seed_from_u64(seed(s));
            let keys = OwnerKeys::generate(scheme, SchemeDims::new(d, c, eps)?, l, &mut rng)?;
            std::fs::create_dir_all(&out)?;
            for (role, name) in [(Role::Owner, "owner.key"), (Role::Cloud, "cloud.key"), (Role::Query, "query.key")] {
                if let Ok(bundle) = KeyBundle::export_for(&keys, role) {
                    keystore::save(&bundle, out.join(name), &pass, &mut rng)?;
                    println!("wrote {}", out.join(name).display());
                }
            }
        }
        Command::EncryptDb { scheme, input, key, out, passphrase: p, seed: s } => {
            let keys = owner_keys(&key, &passphrase(p, &file)?)?;
            if keys.scheme() != scheme {
                bail!("key file is for {}, not {scheme}", keys.scheme());
            }
            let ds = Dataset::ingest_csv(&input)?;
            let db = DataOwner::new(keys, seed(s)).encrypt_dataset(&ds, seed(s))?;
            std::fs::write(&out, serde_json::to_vec(&db)?)?;
            println!("encrypted {} records to {}", db.len(), out.display());
        }
        Command::Serve { role, port, key, db, passphrase: p, seed: s } => {
            let pass = passphrase(p, &file)?;
            let listener = TcpListener::bind(("0.0.0.0", port))?;
            eprintln!("{role} listening on {}", listener.local_addr()?);
            if role == "do" {
                serve(listener, Arc::new(DataOwner::new(owner_keys(&key, &pass)?, seed(s))))?;
            } else {
                let verify = match keystore::load(&key, &pass)? {
                    KeyBundle::Cloud { verify, .. } => verify,
                    KeyBundle::Owner { keys } => keys.verify_key().cloned(),
                    KeyBundle::Query { .. } => None,
                };
                let db_path = db.context("--db is required for the cloud server")?;
                let db: EncryptedDb = serde_json::from_slice(&std::fs::read(db_path)?)?;
                serve(listener, Arc::new(CloudServer::new(db, verify)?))?;
            }
        }
        Command::Query { scheme, q, k, do_addr, cs_addr, key, passphrase: p, key_bits, coord_scale, seed: s } => {
            let q = parse_vec(&q.split(',').map(str::trim).collect::<Vec<_>>())?;
            let mut client = QueryClient::new(scheme, seed(s))
                .with_key_bits(resolve(key_bits, file.key_bits, DEFAULT_KEY_BITS))
                .with_coord_scale(resolve(coord_scale, file.coord_scale, DEFAULT_DATA_SCALE));
            if let Some(key) = key {
                match owner_keys(&key, &passphrase(p, &file)?)? {
                    OwnerKeys::Aspe { key } => client = client.with_aspe_key(key),
                    _ => bail!("only ASPE query users hold a key file"),
                }
            }
            let cs = resolve(cs_addr, file.cs_addr.clone(), "127.0.0.1:7001".into());
            let mut cloud = TcpTransport::connect(&cs).with_context(|| format!("connecting to {cs}"))?;
            let mut owner = match scheme {
                Scheme::Aspe => None,
                _ => {
                    let addr = resolve(do_addr, file.do_addr.clone(), "127.0.0.1:7000".into());
                    Some(TcpTransport::connect(&addr).with_context(|| format!("connecting to {addr}"))?)
                }
            };
            let ids = client.query(&q, k, owner.as_mut().map(|t| t as &mut dyn Transport), &mut cloud)?;
            println!("{}", serde_json::to_string(&ids)?);
        }
        Command::Attack { scheme, dim, trials, m, k, key_bits, seed: s } => {
            let cfg = AttackConfig {
                scheme,
                dims: vec![dim],
                trials,
                m,
                k,
                key_bits: resolve(key_bits, file.key_bits, 512),
                seed: seed(s),
            };
            let report = attack_harness::run(&cfg)?;
            println!("{}", serde_json::to_string_pretty(&report)?);
        }
        Command::Bench { figure, dims, sizes, reps, key_bits, out_dir, seed: s } => {
            let d = BenchParams::default();
            let params = BenchParams {
                dims: dims.unwrap_or(d.dims),
                sizes: sizes.unwrap_or(d.sizes),
                reps: reps.unwrap_or(d.reps),
                key_bits: resolve(key_bits, file.key_bits, d.key_bits),
                seed: seed(s),
                ..d
            };
            let report = bench::run(figure, &params)?;
            let dir = resolve(out_dir, file.out_dir.clone().map(PathBuf::from), PathBuf::from("bench_out"));
            std::fs::create_dir_all(&dir)?;
            report.write_json(dir.join(format!("figure{figure}.json")))?;
            report.write_csv(dir.join(format!("figure{figure}.csv")))?;
            report.print_summary(&mut std::io::stdout())?;
        }
    }
    Ok(())
}
