use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use d2fel::harness::ablate::run_ablation_with;
use d2fel::harness::{
    checkpoint, extract, load_dataset, restore, save_dataset, train_with, AblationConfig, AblationKind, NamedEval,
    Reducer, RunCache, RunReport, TrainConfig,
};
use d2fel::io::{load_bank, load_container, save_bank, save_container};
use d2fel::reduce::{fit_autoencoder, fit_pca, fit_random_projector, AutoEncoderConfig, ReconstructionLoss, Split};
use d2fel::retrieval::{evaluate, DistanceKind, EvalProtocol, PlotData};
use d2fel::synth::{generate_dataset, make_protocol, ProtocolMode, SynthConfig};
use d2fel::{Error, Result};

#[derive(Parser)]
#[command(name = "d2fel", version, about = "Self-ensemble feature learning pipeline")]
struct Cli {
    #[command(flatten)]
    global: Global,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Global {
    /// Overrides the seed in the config.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// TOML config for the subcommand.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[arg(long, global = true, default_value = "out")]
    out_dir: PathBuf,
    /// Worker threads for distance computation.
    #[arg(long, global = true, default_value_t = 1)]
    threads: usize,
    #[arg(long, global = true, value_enum, default_value_t = Distance::Euclidean)]
    distance: Distance,
    /// L2-normalize each head's segment before ranking.
    #[arg(long, global = true)]
    normalize_heads: bool,
}

#[derive(Clone, Copy, ValueEnum)]
enum Distance {
    Euclidean,
    Cosine,
}

#[derive(Clone, Copy, ValueEnum)]
enum Method {
    Pca,
    Rp,
    Ae,
}

#[derive(Clone, Copy, ValueEnum)]
enum SplitArg {
    Train,
    Query,
    Gallery,
}

#[derive(Subcommand)]
enum Command {
    /// Render the synthetic dataset into `<out-dir>`.
    GenData,
    /// Train on a dataset; writes `checkpoint.d2ck` and `report.json`.
    Train {
        #[arg(long)]
        data: PathBuf,
    },
    /// Extract a feature bank for one split of a protocol.
    Extract {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long, value_enum)]
        split: SplitArg,
        /// `loo:D` or `single:D`; defaults to the checkpoint's protocol.
        #[arg(long)]
        protocol: Option<String>,
        /// Output file name inside `<out-dir>`.
        #[arg(long)]
        name: Option<String>,
    },
    /// Fit a reducer on a bank.
    ReduceFit {
        #[arg(long)]
        bank: PathBuf,
        #[arg(long, value_enum)]
        method: Method,
        #[arg(long)]
        dim: usize,
        #[arg(long, default_value = "l2")]
        ae_loss: String,
        #[arg(long, default_value = "reducer.d2ck")]
        name: String,
    },
    /// Apply a fitted reducer to a bank.
    ReduceApply {
        #[arg(long)]
        reducer: PathBuf,
        #[arg(long)]
        bank: PathBuf,
        #[arg(long)]
        name: String,
    },
    /// Rank a gallery bank against a query bank; writes `eval.json` and `cmc.tsv`.
    Eval {
        #[arg(long)]
        query: PathBuf,
        #[arg(long)]
        gallery: PathBuf,
    },
    /// Run an ablation; writes `<kind>.txt`, `<kind>.json` and `<kind>.tsv`.
    Ablate {
        #[arg(long)]
        kind: AblationKind,
    },
}

fn read_config(path: &Option<PathBuf>) -> Result<Option<String>> {
    path.as_ref()
        .map(|p| fs::read_to_string(p).map_err(|e| Error::Config(format!("{}: {e}", p.display()))))
        .transpose()
}

fn write(path: &Path, text: &str) -> Result<()> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir)?;
    }
    Ok(fs::write(path, text)?)
}

fn protocol(g: &Global) -> EvalProtocol {
    EvalProtocol {
        distance: match g.distance {
            Distance::Euclidean => DistanceKind::Euclidean,
            Distance::Cosine => DistanceKind::Cosine,
        },
        normalize_heads: g.normalize_heads,
    }
}

fn train_config(g: &Global) -> Result<TrainConfig> {
    let mut cfg = match read_config(&g.config)? {
        Some(text) => TrainConfig::from_toml(&text)?,
        None => TrainConfig::default(),
    };
    if let Some(s) = g.seed {
        cfg.seed = s;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn run(cli: Cli) -> Result<()> {
    let g = &cli.global;
    rayon::ThreadPoolBuilder::new()
        .num_threads(g.threads.max(1))
        .build_global()
        .map_err(|e| Error::Config(e.to_string()))?;
    match &cli.command {
        Command::GenData => {
            let mut cfg: SynthConfig = match read_config(&g.config)? {
                Some(text) => toml::from_str(&text)?,
                None => SynthConfig::default(),
            };
            if let Some(s) = g.seed {
                cfg.seed = s;
            }
            let ds = generate_dataset(&cfg)?;
            save_dataset(&g.out_dir, &ds)?;
            eprintln!("wrote {} images to {}", ds.manifest.records.len(), g.out_dir.display());
        }
        Command::Train { data } => {
            let cfg = train_config(g)?;
            let ds = load_dataset(data)?;
            let outcome = train_with(&ds, &cfg, |l| {
                eprintln!(
                    "epoch {:>3} lr {:.3e} total {:.4} ce {:.4} triplet {:.4} center {:.4}",
                    l.epoch, l.lr, l.total, l.ce, l.triplet, l.center
                )
            })?;
            let mut model = outcome.model;
            let p = make_protocol(&ds.manifest, cfg.protocol)?;
            let q = extract(&mut model, &ds, &p.query)?;
            let gal = extract(&mut model, &ds, &p.gallery)?;
            let mut report = RunReport::new(&cfg, Some(ds.manifest.config.clone()), outcome.epochs);
            report.evals.push(NamedEval {
                protocol: cfg.protocol.to_string(),
                features: "concat".into(),
                report: evaluate(&q, &gal, &protocol(g))?,
            });
            save_container(&g.out_dir.join("checkpoint.d2ck"), &checkpoint(&mut model, &cfg, cfg.epochs))?;
            write(&g.out_dir.join("report.json"), &report.to_json())?;
            eprintln!("mAP {:.4} on {}", report.evals[0].report.map, cfg.protocol);
        }
        Command::Extract {
            checkpoint,
            data,
            split,
            protocol: proto,
            name,
        } => {
            let (mut model, cfg) = restore(&load_container(checkpoint)?)?;
            let ds = load_dataset(data)?;
            let mode: ProtocolMode = match proto {
                Some(s) => s.parse()?,
                None => cfg.protocol,
            };
            let p = make_protocol(&ds.manifest, mode)?;
            let (rows, split) = match split {
                SplitArg::Train => (&p.train, Split::Train),
                SplitArg::Query => (&p.query, Split::Query),
                SplitArg::Gallery => (&p.gallery, Split::Gallery),
            };
            let bank = extract(&mut model, &ds, rows)?;
            let file = name.clone().unwrap_or_else(|| format!("{}.d2fb", split.name()));
            save_bank(&g.out_dir.join(file), &bank)?;
            eprintln!("{} rows x {} dims", bank.len(), bank.dim());
        }
        Command::ReduceFit {
            bank,
            method,
            dim,
            ae_loss,
            name,
        } => {
            let b = load_bank(bank)?;
            let seed = g.seed.unwrap_or(0);
            let reducer = match method {
                Method::Pca => Reducer::Pca(fit_pca(&b, *dim)?),
                Method::Rp => Reducer::Projection(fit_random_projector(b.dim(), *dim, seed)?),
                Method::Ae => {
                    let mut cfg: AutoEncoderConfig = match read_config(&g.config)? {
                        Some(text) => toml::from_str(&text)?,
                        None => AutoEncoderConfig::default(),
                    };
                    cfg.loss = ae_loss.parse::<ReconstructionLoss>()?;
                    cfg.seed = seed;
                    Reducer::AutoEncoder(fit_autoencoder(&b, *dim, &cfg)?)
                }
            };
            fs::create_dir_all(&g.out_dir)?;
            reducer.save(&g.out_dir.join(name))?;
        }
        Command::ReduceApply { reducer, bank, name } => {
            let r = Reducer::load(reducer)?;
            let out = r.apply(&load_bank(bank)?)?;
            save_bank(&g.out_dir.join(name), &out)?;
        }
        Command::Eval { query, gallery } => {
            let report = evaluate(&load_bank(query)?, &load_bank(gallery)?, &protocol(g))?;
            let json = serde_json::to_string_pretty(&report)?;
            write(&g.out_dir.join("eval.json"), &json)?;
            write(&g.out_dir.join("cmc.tsv"), &PlotData::from_cmc("cmc", &report).to_tsv())?;
            println!("mAP {:.4} rank1 {:.4} rank5 {:.4}", report.map, report.rank1, report.rank(5));
        }
        Command::Ablate { kind } => {
            let mut cfg = match read_config(&g.config)? {
                Some(text) => AblationConfig::from_toml(&text)?,
                None => AblationConfig::default(),
            };
            if let Some(s) = g.seed {
                cfg.seeds = vec![s];
            }
            cfg.eval = protocol(g);
            let mut cache = RunCache::new();
            let table = run_ablation_with(*kind, &cfg, &mut cache, |m| eprintln!("{m}"))?;
            let stem = kind.name();
            write(&g.out_dir.join(format!("{stem}.txt")), &table.to_text())?;
            write(&g.out_dir.join(format!("{stem}.json")), &serde_json::to_string_pretty(&table)?)?;
            write(&g.out_dir.join(format!("{stem}.tsv")), &table.plot_data().to_tsv())?;
            print!("{}", table.to_text());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
