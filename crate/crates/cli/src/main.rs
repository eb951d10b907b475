use std::fs::{self, File};
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use timbre_core::bank::StimulusBank;
use timbre_core::descriptors::{extract_all, DescriptorConfig, FeatureTable, DESCRIPTOR_NAMES};
use timbre_core::nmds::{nmds_fit, scree_solutions, MdsConfig, MdsSolution};
use timbre_core::pipeline::{run_full, write_scree_csv, PipelineConfig};
use timbre_core::ratings::{aggregate, read_jsonl, write_jsonl, DissimilarityMatrix, ExclusionPolicy};
use timbre_core::simulate::{latent_distances, simulate_ratings, LatentSource, SimulatedRaterSpec};
use timbre_core::stats::{
    collinearity_filter, correlation_table, feature_agglomeration, Linkage, COLLINEARITY_THRESHOLD,
};
use timbre_core::wav::{read_wav, write_wav};
use timbre_service::screening::ScreeningConfig;
use timbre_service::{AppState, ServiceConfig, ADMIN_TOKEN_ENV};

const EXIT_CONFIG: u8 = 2;

macro_rules! say {
    (no_newline $e:expr) => {
        write!(std::io::stdout(), "{}", $e)?
    };
    ($($t:tt)*) => {
        writeln!(std::io::stdout(), $($t)*)?
    };
}

const EXIT_STAGE: u8 = 3;

/// Invalid invocation or configuration; exits with status 2.
#[derive(Debug)]
struct ConfigError(String);

impl std::fmt::Display for ConfigError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for ConfigError {}

fn config_error(msg: impl Into<String>) -> anyhow::Error {
    ConfigError(msg.into()).into()
}

#[derive(Parser)]
#[command(name = "timbre", version, about = "Timbre-space laboratory: synthesis, descriptors, ratings, MDS and correlation analysis")]
struct Cli {
    /// Seed for every random choice; required wherever randomness is used.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Configuration file (pipeline TOML for `run`, bank JSON elsewhere).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output file or directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Log more detail to stderr (repeat for more).
    #[arg(short, long, action = clap::ArgAction::Count, global = true)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Stimulus synthesis.
    #[command(subcommand)]
    Synth(SynthCmd),
    /// Descriptor extraction.
    #[command(subcommand)]
    Features(FeaturesCmd),
    /// Rating aggregation.
    #[command(subcommand)]
    Ratings(RatingsCmd),
    /// Non-metric multidimensional scaling.
    #[command(subcommand)]
    Mds(MdsCmd),
    /// Correlation analysis.
    #[command(subcommand)]
    Analyze(AnalyzeCmd),
    /// Simulated raters.
    #[command(subcommand)]
    Simulate(SimulateCmd),
    /// Run the full pipeline from a TOML config.
    Run,
    /// Host the listening experiment over HTTP.
    Serve(ServeArgs),
}

#[derive(Args)]
struct BankArg {
    /// Stimulus bank JSON; the built-in study bank when omitted.
    #[arg(long)]
    bank: Option<PathBuf>,
}

#[derive(Subcommand)]
enum SynthCmd {
    /// Render every patch of the bank to WAV files in `--out`.
    Render(BankArg),
    /// Write the built-in study bank as JSON to `--out`.
    DefaultBank,
}

#[derive(Subcommand)]
enum FeaturesCmd {
    /// Extract descriptors to CSV, from the bank or from WAV files.
    Extract {
        #[command(flatten)]
        bank: BankArg,
        /// Mono WAV files; ids are the file stems.
        #[arg(long, num_args = 1.., conflicts_with = "bank")]
        wav: Vec<PathBuf>,
    },
}

#[derive(Subcommand)]
enum RatingsCmd {
    /// Mean dissimilarity matrix over included participants.
    Aggregate {
        #[arg(long)]
        ratings: PathBuf,
        #[command(flatten)]
        bank: BankArg,
        #[arg(long, default_value_t = ExclusionPolicy::default().max_control_violations)]
        max_control_violations: usize,
    },
}

#[derive(Args)]
struct MdsArgs {
    #[arg(long)]
    matrix: PathBuf,
    #[arg(long, default_value_t = 20)]
    restarts: usize,
    #[arg(long, default_value_t = 500)]
    max_iters: usize,
}

#[derive(Subcommand)]
enum MdsCmd {
    /// Fit one dimensionality and write the solution JSON.
    Fit {
        #[command(flatten)]
        args: MdsArgs,
        #[arg(long, default_value_t = 4)]
        dims: usize,
    },
    /// Stress-1 and R² for dimensionalities 1..=max-dims, as CSV.
    Scree {
        #[command(flatten)]
        args: MdsArgs,
        #[arg(long, default_value_t = 6)]
        max_dims: usize,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum LinkageArg {
    Average,
    Single,
    Complete,
}

impl From<LinkageArg> for Linkage {
    fn from(l: LinkageArg) -> Self {
        match l {
            LinkageArg::Average => Linkage::Average,
            LinkageArg::Single => Linkage::Single,
            LinkageArg::Complete => Linkage::Complete,
        }
    }
}

#[derive(Subcommand)]
enum AnalyzeCmd {
    /// Pearson table of retained descriptors against MDS dimensions.
    Correlate {
        #[arg(long)]
        coords: PathBuf,
        #[arg(long)]
        features: PathBuf,
        #[arg(long, default_value_t = COLLINEARITY_THRESHOLD)]
        threshold: f64,
        /// Comma-separated retention priority; defaults to the canonical order.
        #[arg(long, value_delimiter = ',')]
        priority: Vec<String>,
    },
    /// Feature-agglomeration tree as JSON.
    Dendrogram {
        #[arg(long)]
        features: PathBuf,
        #[arg(long, value_enum, default_value_t = LinkageArg::Average)]
        linkage: LinkageArg,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum LatentArg {
    Planted,
    Descriptors,
}

#[derive(Subcommand)]
enum SimulateCmd {
    /// Write a JSONL ratings export produced by simulated raters.
    Ratings {
        #[command(flatten)]
        bank: BankArg,
        #[arg(long, default_value_t = 35)]
        participants: usize,
        #[arg(long, default_value_t = 1.0)]
        sigma: f64,
        #[arg(long, value_enum, default_value_t = LatentArg::Planted)]
        latent: LatentArg,
        /// Dimensionality of the planted latent space.
        #[arg(long, default_value_t = 4)]
        dims: usize,
    },
}

#[derive(Args)]
struct ServeArgs {
    #[command(flatten)]
    bank: BankArg,
    /// Append-only event log.
    #[arg(long, default_value = "events.jsonl")]
    log: PathBuf,
    #[arg(long, default_value = "127.0.0.1:8080")]
    addr: String,
}

struct Globals {
    seed: Option<u64>,
    config: Option<PathBuf>,
    out: Option<PathBuf>,
}

impl Globals {
    fn seed(&self) -> Result<u64> {
        self.seed
            .ok_or_else(|| config_error("--seed is required for this command"))
    }

    fn out(&self) -> Result<&Path> {
        self.out
            .as_deref()
            .ok_or_else(|| config_error("--out is required for this command"))
    }

    fn bank(&self, arg: &BankArg) -> Result<StimulusBank> {
        let path = arg.bank.as_ref().or(self.config.as_ref());
        let bank = match path {
            Some(p) => StimulusBank::load(p)?,
            None => StimulusBank::study_default(),
        };
        bank.validate()?;
        Ok(bank)
    }
}

fn create_writer(path: &Path) -> Result<BufWriter<File>> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).with_context(|| format!("creating {}", parent.display()))?;
    }
    let file = File::create(path).with_context(|| format!("creating {}", path.display()))?;
    Ok(BufWriter::new(file))
}

fn write_json<T: serde::Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut w = create_writer(path)?;
    serde_json::to_writer_pretty(&mut w, value)?;
    writeln!(w)?;
    w.flush()?;
    Ok(())
}

fn read_matrix(path: &Path) -> Result<DissimilarityMatrix> {
    let file = File::open(path).with_context(|| format!("opening {}", path.display()))?;
    Ok(DissimilarityMatrix::read_csv(file)?)
}

fn read_features(path: &Path) -> Result<FeatureTable> {
    let file = File::open(path).with_context(|| format!("opening {}", path.display()))?;
    Ok(FeatureTable::read_csv(file)?)
}

fn columns(table: &FeatureTable) -> Vec<(String, Vec<f64>)> {
    table
        .names
        .iter()
        .map(|n| (n.clone(), table.column(n).expect("own column")))
        .collect()
}

fn mds_config(g: &Globals, args: &MdsArgs, dims: usize) -> Result<MdsConfig> {
    Ok(MdsConfig {
        dims,
        restarts: args.restarts,
        max_iters: args.max_iters,
        ..MdsConfig::with_dims(dims, g.seed()?)
    })
}

fn run(cli: Cli) -> Result<()> {
    let g = Globals {
        seed: cli.seed,
        config: cli.config,
        out: cli.out,
    };
    match cli.command {
        Command::Synth(SynthCmd::DefaultBank) => {
            let out = g.out()?;
            StimulusBank::study_default().save(out)?;
            say!("wrote {}", out.display());
        }
        Command::Synth(SynthCmd::Render(arg)) => {
            let bank = g.bank(&arg)?;
            let out = g.out()?;
            fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
            for (patch, r) in bank.patches.iter().zip(bank.render_all()?) {
                let path = out.join(format!("{}.wav", patch.id));
                write_wav(&r.buffer, &path)?;
                say!(
                    "{}\tA-weighted RMS {:.2} dBFS\tclip backoff {:.2} dB",
                    patch.id,
                    timbre_core::synth::amplitude_to_db(r.a_weighted_rms),
                    r.clip_deviation_db
                );
            }
        }
        Command::Features(FeaturesCmd::Extract { bank, wav }) => {
            let (ids, buffers) = if wav.is_empty() {
                let bank = g.bank(&bank)?;
                let rendered = bank.render_all()?;
                (bank.ids(), rendered.into_iter().map(|r| r.buffer).collect::<Vec<_>>())
            } else {
                let mut ids = Vec::new();
                let mut buffers = Vec::new();
                for path in &wav {
                    let stem = path
                        .file_stem()
                        .and_then(|s| s.to_str())
                        .ok_or_else(|| config_error(format!("bad file name {}", path.display())))?;
                    ids.push(stem.to_string());
                    buffers.push(read_wav(path)?);
                }
                (ids, buffers)
            };
            let vectors = extract_all(&buffers, &DescriptorConfig::default())?;
            let table = FeatureTable::from_vectors(ids, &vectors);
            let mut w = create_writer(g.out()?)?;
            table.write_csv(&mut w, &[])?;
            w.flush()?;
        }
        Command::Ratings(RatingsCmd::Aggregate {
            ratings,
            bank,
            max_control_violations,
        }) => {
            let bank = g.bank(&bank)?;
            let file = File::open(&ratings).with_context(|| format!("opening {}", ratings.display()))?;
            let records = read_jsonl(BufReader::new(file))?;
            let policy = ExclusionPolicy {
                max_control_violations,
                ..ExclusionPolicy::default()
            };
            let agg = aggregate(&records, &bank.ids(), &policy)?;
            let mut w = create_writer(g.out()?)?;
            agg.matrix.write_csv(&mut w, &[])?;
            w.flush()?;
            say!(
                "{} of {} participants included",
                agg.included(),
                agg.participants.len()
            );
        }
        Command::Mds(MdsCmd::Fit { args, dims }) => {
            let matrix = read_matrix(&args.matrix)?;
            let cfg = mds_config(&g, &args, dims)?;
            let sol = nmds_fit(&matrix, &cfg)?;
            write_json(g.out()?, &sol)?;
            say!(
                "dims {}\tstress-1 {:.4}\tR² {:.4}\trestart {}",
                sol.dims, sol.stress1, sol.r_squared, sol.restart_index
            );
        }
        Command::Mds(MdsCmd::Scree { args, max_dims }) => {
            let matrix = read_matrix(&args.matrix)?;
            let cfg = mds_config(&g, &args, 1)?;
            let rows = scree_solutions(&matrix, max_dims, &cfg)?;
            let mut w = create_writer(g.out()?)?;
            write_scree_csv(&mut w, &rows, &[])?;
            w.flush()?;
            for s in &rows {
                say!("dims {}\tstress-1 {:.4}\tR² {:.4}", s.dims, s.stress1, s.r_squared);
            }
        }
        Command::Analyze(AnalyzeCmd::Correlate {
            coords,
            features,
            threshold,
            priority,
        }) => {
            let text = fs::read_to_string(&coords).with_context(|| format!("reading {}", coords.display()))?;
            let solution: MdsSolution = serde_json::from_str(&text)
                .with_context(|| format!("parsing {}", coords.display()))?;
            let table = read_features(&features)?;
            if table.ids != solution.ids {
                return Err(config_error("feature ids do not match the solution's stimulus ids"));
            }
            let priority = if priority.is_empty() {
                DESCRIPTOR_NAMES.iter().map(|s| s.to_string()).collect()
            } else {
                priority
            };
            let cols = columns(&table);
            let kept = collinearity_filter(&cols, threshold, &priority)?;
            let kept_cols: Vec<_> = cols.into_iter().filter(|(n, _)| kept.contains(n)).collect();
            let ordered: Vec<_> = kept
                .iter()
                .map(|n| kept_cols.iter().find(|(m, _)| m == n).expect("kept").clone())
                .collect();
            let report = correlation_table(&solution.coords, &ordered)?;
            let mut w = create_writer(g.out()?)?;
            report.write_csv(&mut w, &[])?;
            w.flush()?;
            say!(no_newline report.render());
        }
        Command::Analyze(AnalyzeCmd::Dendrogram { features, linkage }) => {
            let table = read_features(&features)?;
            let tree = feature_agglomeration(&columns(&table), linkage.into())?;
            write_json(g.out()?, &tree)?;
            for m in &tree.merges {
                say!("{} + {}\t{:.4}", m.left, m.right, m.height);
            }
        }
        Command::Simulate(SimulateCmd::Ratings {
            bank,
            participants,
            sigma,
            latent,
            dims,
        }) => {
            let seed = g.seed()?;
            let bank = g.bank(&bank)?;
            let ids = bank.ids();
            let (latent, features) = match latent {
                LatentArg::Planted => (LatentSource::Planted { dims }, None),
                LatentArg::Descriptors => {
                    let rendered = bank.render_all()?;
                    let buffers: Vec<_> = rendered.into_iter().map(|r| r.buffer).collect();
                    let vectors = extract_all(&buffers, &DescriptorConfig::default())?;
                    let table = FeatureTable::from_vectors(ids.clone(), &vectors);
                    let names = DESCRIPTOR_NAMES[..9].iter().map(|s| s.to_string()).collect();
                    (LatentSource::Descriptors { names }, Some(table))
                }
            };
            let spec = SimulatedRaterSpec {
                participants,
                noise_sigma: sigma,
                scale_max: timbre_core::ratings::MAX_RATING,
                latent,
            };
            spec.validate()?;
            let distances = latent_distances(&spec, &ids, features.as_ref(), seed)?;
            let records = simulate_ratings(&spec, &distances, seed)?;
            let mut w = create_writer(g.out()?)?;
            write_jsonl(&mut w, &records)?;
            w.flush()?;
            say!("{} records from {participants} simulated participants", records.len());
        }
        Command::Run => {
            let path = g
                .config
                .as_ref()
                .ok_or_else(|| config_error("run needs --config <pipeline.toml>"))?;
            let mut cfg = PipelineConfig::load(path)?;
            if let Some(seed) = g.seed {
                cfg.seed = seed;
            }
            if let Some(out) = &g.out {
                cfg.out = out.clone();
            }
            let report = run_full(&cfg)?;
            let s = &report.manifest.summary;
            say!(
                "{} stimuli, {}/{} participants included; dims {} stress-1 {:.4} R² {:.4}",
                s.stimuli, s.included_participants, s.participants, s.dims, s.stress1, s.r_squared
            );
            say!(no_newline report.table.render());
            say!("artifacts in {}", report.out_dir.display());
        }
        Command::Serve(args) => {
            let bank = g.bank(&args.bank)?;
            let admin_token = std::env::var(ADMIN_TOKEN_ENV).ok().filter(|t| !t.is_empty());
            if admin_token.is_none() {
                tracing::warn!("{ADMIN_TOKEN_ENV} is not set; export is disabled");
            }
            let state = AppState::open(
                Some(&bank),
                ServiceConfig {
                    log_path: args.log.clone(),
                    admin_token,
                    screening: ScreeningConfig::default(),
                },
            )?;
            let runtime = tokio::runtime::Runtime::new()?;
            runtime.block_on(async move {
                let listener = tokio::net::TcpListener::bind(&args.addr)
                    .await
                    .with_context(|| format!("binding {}", args.addr))?;
                let addr = listener.local_addr()?;
                say!("listening on http://{addr}");
                std::io::stdout().flush()?;
                timbre_service::serve(listener, state).await?;
                Ok::<_, anyhow::Error>(())
            })?;
        }
    }
    Ok(())
}

fn exit_code(err: &anyhow::Error) -> u8 {
    if err.downcast_ref::<ConfigError>().is_some() {
        return EXIT_CONFIG;
    }
    match err.downcast_ref::<timbre_core::Error>() {
        Some(e) if e.is_config() => EXIT_CONFIG,
        _ => EXIT_STAGE,
    }
}

fn is_broken_pipe(err: &anyhow::Error) -> bool {
    err.downcast_ref::<std::io::Error>()
        .is_some_and(|e| e.kind() == std::io::ErrorKind::BrokenPipe)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => tracing::Level::WARN,
        1 => tracing::Level::INFO,
        _ => tracing::Level::DEBUG,
    };
    tracing_subscriber::fmt()
        .with_max_level(level)
        .with_writer(std::io::stderr)
        .init();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) if is_broken_pipe(&err) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err:#}");
            ExitCode::from(exit_code(&err))
        }
    }
}

