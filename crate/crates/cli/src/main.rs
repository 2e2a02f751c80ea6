//! `privfed`: every role of a federated study run as its own process.

use std::fs;
use std::net::TcpListener;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Duration;

use anyhow::{anyhow, bail, Context};
use clap::{Args, Parser, Subcommand, ValueEnum};

use privfed::harness::bench::{bench, render_bench, BenchParams};
use privfed::harness::generate::{generate_synthetic, write_sites, GenParams};
use privfed::harness::oracle::{load_site, oracle_files};
use privfed::harness::rng_from;
use privfed::net::analyst::{run_analyst, send_output};
use privfed::net::compute::{run_partner, ComputeNode};
use privfed::net::dealer::serve_dealer;
use privfed::net::session::dial;
use privfed::net::Conn;
use privfed::oblivious::PartyIndex;
use privfed::sharing::ShareFile;
use privfed::study::{open_at_analyst, prepare_upload, Mode, OutputShare, PartnerUpload, StudyConfig};

#[derive(Parser, Debug)]
#[command(version, about = "Privacy-preserving federated study over two compute parties")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Write synthetic site CSVs.
    Gen(GenArgs),
    /// Encode one site CSV and split it into two share files.
    Share {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        config: PathBuf,
        /// Writes PREFIX.1.share and PREFIX.2.share.
        #[arg(long)]
        out_prefix: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Serve AND triples to both compute parties for one session.
    Dealer {
        #[arg(long)]
        listen: String,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Run one compute party.
    Compute {
        #[arg(long, value_enum)]
        role: ComputeRole,
        #[arg(long)]
        config: PathBuf,
        /// Defaults to this role's endpoint in the config.
        #[arg(long)]
        listen: Option<String>,
        /// The second party's address (alice only); defaults to `bob` in the config.
        #[arg(long)]
        peer: Option<String>,
        #[arg(long)]
        dealer: Option<String>,
        /// Send the output share here; defaults to `analyst` in the config.
        #[arg(long)]
        analyst: Option<String>,
        /// Also write the output share to this file.
        #[arg(long)]
        output: Option<PathBuf>,
        /// Seconds to wait for uploads, the peer and the dealer.
        #[arg(long, default_value_t = 300)]
        timeout: u64,
    },
    /// Upload a site's share files to both compute parties.
    Partner {
        /// Prefix given to `share`; reads PREFIX.1.share and PREFIX.2.share.
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        id: u32,
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        alice: Option<String>,
        #[arg(long)]
        bob: Option<String>,
        #[arg(long, default_value_t = 300)]
        timeout: u64,
    },
    /// Receive both output shares and write the results CSV.
    Analyst {
        #[arg(long)]
        listen: String,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Combine two output share files into the results CSV.
    Open {
        #[arg(long)]
        share_a: PathBuf,
        #[arg(long)]
        share_b: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Evaluate the study in the clear over every CSV in a directory.
    Oracle {
        #[arg(long)]
        inputs: PathBuf,
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Per-step costs of local runs, as CSV.
    Bench(BenchArgs),
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum ComputeRole {
    Alice,
    Bob,
}

#[derive(Args, Debug)]
struct GenArgs {
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 3)]
    sites: usize,
    #[arg(long, default_value_t = 1000)]
    patients: usize,
    #[arg(long, default_value_t = 0.072)]
    overlap: f64,
    #[arg(long, value_delimiter = ',', default_value = "2018,2019,2020")]
    years: Vec<u16>,
    #[arg(long, default_value_t = 0.35)]
    htn_prevalence: f64,
    #[arg(long, default_value_t = 0.4)]
    uncontrolled: f64,
    #[arg(long, default_value_t = 0.05)]
    exclusion_rate: f64,
    #[arg(long, default_value_t = 1)]
    seed: u64,
}

#[derive(Args, Debug)]
struct BenchArgs {
    #[arg(long, value_delimiter = ',', default_value = "full,multisite,aggregate_only")]
    modes: Vec<String>,
    #[arg(long, value_delimiter = ',', default_value = "1,2,3")]
    years: Vec<usize>,
    #[arg(long, value_delimiter = ',', default_value = "200,1000")]
    sizes: Vec<usize>,
    #[arg(long, default_value_t = 3)]
    sites: usize,
    #[arg(long, default_value_t = 0.072)]
    overlap: f64,
    #[arg(long, default_value_t = 5)]
    batch_count: u32,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    #[arg(long)]
    out: Option<PathBuf>,
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            let protocol = e.chain().any(|c| c.downcast_ref::<privfed::Error>().is_some_and(|pe| pe.is_protocol()));
            ExitCode::from(if protocol { 2 } else { 1 })
        }
    }
}

fn emit(text: &str, out: Option<&Path>) -> anyhow::Result<()> {
    match out {
        Some(p) => fs::write(p, text).with_context(|| format!("writing {}", p.display())),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

fn endpoint(flag: Option<String>, config: &StudyConfig, role: &str) -> anyhow::Result<String> {
    flag.or_else(|| config.endpoint(role).map(str::to_string))
        .ok_or_else(|| anyhow!("no address for {role}: pass a flag or set `{role}` in the config"))
}

fn share_path(prefix: &Path, index: u8) -> PathBuf {
    let mut s = prefix.as_os_str().to_owned();
    s.push(format!(".{index}.share"));
    PathBuf::from(s)
}

fn read_shares(path: &Path) -> anyhow::Result<Vec<ShareFile>> {
    let bytes = fs::read(path).with_context(|| format!("reading {}", path.display()))?;
    Ok(ShareFile::decode_all(&bytes).with_context(|| format!("decoding {}", path.display()))?)
}

fn accept_on(listener: &TcpListener) -> impl FnMut() -> privfed::Result<Conn> + '_ {
    move || Conn::tcp(listener.accept()?.0)
}

fn run(command: Command) -> anyhow::Result<()> {
    match command {
        Command::Gen(a) => {
            let params = GenParams {
                sites: a.sites,
                patients_per_site: a.patients,
                overlap_fraction: a.overlap,
                years: a.years,
                htn_prevalence: a.htn_prevalence,
                uncontrolled_fraction: a.uncontrolled,
                exclusion_rate: a.exclusion_rate,
                seed: a.seed,
            };
            for p in write_sites(&a.out, &generate_synthetic(&params)?)? {
                eprintln!("wrote {}", p.display());
            }
        }
        Command::Share { input, config, out_prefix, seed } => {
            let config = StudyConfig::load(&config)?;
            let records = load_site(&input, &config.years).with_context(|| format!("reading {}", input.display()))?;
            let upload = prepare_upload(&config, &records, &mut rng_from(seed))?;
            for (i, files) in [(1, &upload.first), (2, &upload.second)] {
                let bytes: Vec<u8> = files.iter().flat_map(|f| f.encode()).collect();
                let path = share_path(&out_prefix, i);
                fs::write(&path, bytes).with_context(|| format!("writing {}", path.display()))?;
                eprintln!("wrote {} ({} tables)", path.display(), files.len());
            }
        }
        Command::Dealer { listen, seed } => {
            let listener = TcpListener::bind(&listen).with_context(|| format!("binding {listen}"))?;
            eprintln!("dealer: listening on {}", listener.local_addr()?);
            serve_dealer(accept_on(&listener), rng_from(seed))?;
            eprintln!("dealer: session complete");
        }
        Command::Compute { role, config, listen, peer, dealer, analyst, output, timeout } => {
            let config = StudyConfig::load(&config)?;
            let (index, name) = match role {
                ComputeRole::Alice => (PartyIndex::First, "alice"),
                ComputeRole::Bob => (PartyIndex::Second, "bob"),
            };
            let listen = endpoint(listen, &config, name)?;
            let peer = match index {
                PartyIndex::First => Some(endpoint(peer, &config, "bob")?),
                PartyIndex::Second => None,
            };
            let dealer = endpoint(dealer, &config, "dealer")?;
            let analyst = analyst.or_else(|| config.endpoint("analyst").map(str::to_string));
            if analyst.is_none() && output.is_none() {
                bail!("nowhere to release the output: pass --analyst or --output");
            }
            let listener = TcpListener::bind(&listen).with_context(|| format!("binding {listen}"))?;
            eprintln!("{name}: listening on {}", listener.local_addr()?);
            let node = ComputeNode {
                index,
                config: config.clone(),
                peer,
                dealer,
                timeout: Duration::from_secs(timeout),
                transcript: None,
            };
            let result = node.run(listener)?;
            eprintln!(
                "{name}: study complete, {} AND gates, {} rounds, {} bytes sent to the peer",
                result.tape.and_gates, result.tape.rounds, result.tape.bytes_sent
            );
            if let Some(path) = output {
                fs::write(&path, result.share.encode()).with_context(|| format!("writing {}", path.display()))?;
            }
            if let Some(addr) = analyst {
                let mut conn = dial(&addr, Duration::from_secs(timeout))?;
                send_output(&mut conn, config.config_hash(), &result.share)?;
            }
        }
        Command::Partner { input, id, config, alice, bob, timeout } => {
            let config = StudyConfig::load(&config)?;
            let upload =
                PartnerUpload { first: read_shares(&share_path(&input, 1))?, second: read_shares(&share_path(&input, 2))? };
            let alice = endpoint(alice, &config, "alice")?;
            let bob = endpoint(bob, &config, "bob")?;
            run_partner(&config, id, &upload, &alice, &bob, Duration::from_secs(timeout))?;
            eprintln!("partner {id}: uploads acknowledged");
        }
        Command::Analyst { listen, out } => {
            let listener = TcpListener::bind(&listen).with_context(|| format!("binding {listen}"))?;
            eprintln!("analyst: listening on {}", listener.local_addr()?);
            let output = run_analyst(accept_on(&listener))?;
            emit(&output.render_csv(), out.as_deref())?;
        }
        Command::Open { share_a, share_b, out } => {
            let Some(share_b) = share_b else {
                bail!("cannot reconstruct from one share: pass both --share-a and --share-b");
            };
            let read = |p: &Path| -> anyhow::Result<OutputShare> {
                let bytes = fs::read(p).with_context(|| format!("reading {}", p.display()))?;
                Ok(OutputShare::decode(&bytes).with_context(|| format!("decoding {}", p.display()))?)
            };
            let output = open_at_analyst(&read(&share_a)?, &read(&share_b)?)?;
            emit(&output.render_csv(), out.as_deref())?;
        }
        Command::Oracle { inputs, config, out } => {
            let config = StudyConfig::load(&config)?;
            let mut paths: Vec<PathBuf> = fs::read_dir(&inputs)
                .with_context(|| format!("reading {}", inputs.display()))?
                .map(|e| e.map(|e| e.path()))
                .collect::<Result<_, _>>()?;
            paths.retain(|p| p.extension().is_some_and(|x| x == "csv"));
            paths.sort();
            emit(&oracle_files(&paths, &config)?.render_csv(), out.as_deref())?;
        }
        Command::Bench(a) => {
            let modes = a.modes.iter().map(|m| m.parse::<Mode>()).collect::<Result<Vec<_>, _>>()?;
            let rows = bench(&BenchParams {
                modes,
                years: a.years,
                sizes: a.sizes,
                sites: a.sites,
                overlap_fraction: a.overlap,
                batch_count: a.batch_count,
                seed: a.seed,
            })?;
            emit(&render_bench(&rows), a.out.as_deref())?;
        }
    }
    Ok(())
}
