use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use ss_mamba::ablation::run_ablation;
use ss_mamba::bench::{bench_scan, BenchSettings, DEFAULT_LENGTHS};
use ss_mamba::checkpoint::Checkpoint;
use ss_mamba::data::{load_hsic, make_synthetic, render_map, save_hsic, HsiCube, Metrics};
use ss_mamba::features::dump_trace;
use ss_mamba::model::{argmax, Enhancement, ForwardOptions, Model};
use ss_mamba::selfcheck;
use ss_mamba::tensor::Graph;
use ss_mamba::train::{ExperimentSpec, RunConfig, Trainer};
use ss_mamba::Error;

/// Published parameter count of the reference model, for comparison only.
const REFERENCE_PARAMS: usize = 470_000;

#[derive(Parser)]
#[command(
    name = "ss-mamba",
    version,
    about = "Spectral-spatial state-space classifier for hyperspectral scenes"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct ConfigArgs {
    /// Run configuration (TOML). A file with a `[run]` table is accepted too.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Override a config key, e.g. `--set epochs=10`. Repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
}

#[derive(Subcommand)]
enum Command {
    /// Train on an HSIC scene and write config, checkpoint, history and metrics.
    Train {
        #[arg(long)]
        data: PathBuf,
        #[command(flatten)]
        cfg: ConfigArgs,
        #[arg(long)]
        out: PathBuf,
        /// Continue from a checkpoint written by an earlier run with the same config.
        #[arg(long)]
        resume: Option<PathBuf>,
    },
    /// Recompute held-out metrics for a trained checkpoint.
    Eval {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        checkpoint: PathBuf,
        #[command(flatten)]
        cfg: ConfigArgs,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Train every branch mode with and without enhancement and tabulate OA/AA/K.
    Ablate {
        #[arg(long)]
        data: PathBuf,
        #[command(flatten)]
        cfg: ConfigArgs,
        #[arg(long)]
        out: PathBuf,
        /// Only the enhanced variants (the branch table without the w/o column).
        #[arg(long)]
        enhanced_only: bool,
    },
    /// Render a classification map (or the ground truth) as a binary PPM.
    Map {
        #[arg(long)]
        data: PathBuf,
        /// Trained checkpoint; omit to render the ground truth.
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        #[command(flatten)]
        cfg: ConfigArgs,
        /// Black out unlabelled pixels.
        #[arg(long)]
        mask: bool,
        #[arg(long)]
        out: PathBuf,
    },
    /// Dump per-block token snapshots for one pixel.
    Features {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        checkpoint: PathBuf,
        #[command(flatten)]
        cfg: ConfigArgs,
        #[arg(long)]
        row: usize,
        #[arg(long)]
        col: usize,
        #[arg(long)]
        out: PathBuf,
    },
    /// Time the forward scan and a naive attention kernel over sequence lengths.
    BenchScan {
        #[arg(long, default_value_t = 64)]
        channels: usize,
        #[arg(long, default_value_t = 16)]
        n_state: usize,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Count trainable parameters per module.
    Params {
        #[command(flatten)]
        cfg: ConfigArgs,
        /// Take bands and classes from a scene instead of the flags.
        #[arg(long)]
        data: Option<PathBuf>,
        #[arg(long, default_value_t = 200)]
        bands: usize,
        #[arg(long, default_value_t = 16)]
        classes: usize,
    },
    /// Run gradient checks, scan/convolution duality and metric oracles.
    Selfcheck,
    /// Generate a synthetic scene from an experiment file.
    Synth {
        #[arg(long)]
        spec: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli.command) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            match e {
                Error::Io(_) | Error::Config(_) | Error::Format(_) => ExitCode::from(2),
                _ => ExitCode::FAILURE,
            }
        }
    }
}

fn resolve(args: &ConfigArgs, fallback: Option<&Path>) -> ss_mamba::Result<RunConfig> {
    let path = args.config.as_deref().or(fallback.filter(|p| p.exists()));
    let base = match path {
        Some(p) => {
            let text = fs::read_to_string(p)?;
            // a bare run table, or an experiment file whose `[run]` table is used
            RunConfig::from_toml(&text).or_else(|e| {
                ExperimentSpec::from_toml(&text)
                    .map(|s| s.run)
                    .map_err(|_| e)
            })?
        }
        None => RunConfig::default(),
    };
    let cfg = base.with_overrides(&args.overrides)?;
    cfg.validate()?;
    Ok(cfg)
}

fn load_data(path: &Path) -> ss_mamba::Result<HsiCube> {
    if !path.exists() {
        return Err(Error::Io(std::io::Error::new(
            std::io::ErrorKind::NotFound,
            format!("dataset {} not found", path.display()),
        )));
    }
    load_hsic(path)
}

fn config_next_to(checkpoint: &Path) -> PathBuf {
    checkpoint.with_file_name("config.toml")
}

fn metrics_csv(m: &Metrics) -> String {
    let mut out = format!(
        "metric,value\noa,{}\naa,{}\nkappa,{}\n",
        m.oa, m.aa, m.kappa
    );
    for (c, acc) in m.per_class.iter().enumerate() {
        out.push_str(&format!("class_{},{acc}\n", c + 1));
    }
    out
}

fn print_metrics(m: &Metrics) {
    println!(
        "OA {:.2}%  AA {:.2}%  K {:.4}",
        m.oa * 100.0,
        m.aa * 100.0,
        m.kappa
    );
}

/// Rebuilds the trainer for `cfg` and loads the checkpoint's state into it.
fn restore(cube: &HsiCube, cfg: RunConfig, checkpoint: &Path) -> ss_mamba::Result<Trainer> {
    Trainer::resume(cube, cfg, &Checkpoint::load(checkpoint)?)
}

fn run(cmd: Command) -> ss_mamba::Result<ExitCode> {
    match cmd {
        Command::Train {
            data,
            cfg,
            out,
            resume,
        } => {
            let cube = load_data(&data)?;
            let cfg = resolve(&cfg, None)?;
            fs::create_dir_all(&out)?;
            fs::write(out.join("config.toml"), cfg.to_toml())?;
            let mut t = match resume {
                Some(ck) => restore(&cube, cfg, &ck)?,
                None => Trainer::new(&cube, cfg)?,
            };
            while t.epoch() < t.config().epochs {
                let rec = t.train_epoch()?;
                eprintln!(
                    "epoch {:>4}  lr {:.3e}  loss {:.5}",
                    rec.epoch, rec.lr, rec.loss
                );
            }
            t.to_checkpoint().save(out.join("checkpoint.ssmc"))?;
            fs::write(out.join("history.csv"), t.history_csv())?;
            if t.split().test.is_empty() {
                eprintln!("no held-out pixels; metrics.csv not written");
                return Ok(ExitCode::SUCCESS);
            }
            let m = t.evaluate(&t.split().test)?.metrics()?;
            fs::write(out.join("metrics.csv"), metrics_csv(&m))?;
            print_metrics(&m);
        }
        Command::Eval {
            data,
            checkpoint,
            cfg,
            out,
        } => {
            let cube = load_data(&data)?;
            let cfg = resolve(&cfg, Some(&config_next_to(&checkpoint)))?;
            let t = restore(&cube, cfg.clone(), &checkpoint)?;
            let m = t.evaluate(&t.split().test)?.metrics()?;
            print_metrics(&m);
            if let Some(out) = out {
                fs::create_dir_all(&out)?;
                fs::write(out.join("config.toml"), cfg.to_toml())?;
                fs::write(out.join("metrics.csv"), metrics_csv(&m))?;
            }
        }
        Command::Ablate {
            data,
            cfg,
            out,
            enhanced_only,
        } => {
            let cube = load_data(&data)?;
            let cfg = resolve(&cfg, None)?;
            fs::create_dir_all(&out)?;
            fs::write(out.join("config.toml"), cfg.to_toml())?;
            let variants: &[Enhancement] = if enhanced_only {
                &[Enhancement::On]
            } else {
                &[Enhancement::On, Enhancement::Off]
            };
            let table = run_ablation(&cube, &cfg, variants)?;
            fs::write(out.join("ablation.csv"), table.to_csv())?;
            print!("{}", table.to_text());
        }
        Command::Map {
            data,
            checkpoint,
            cfg,
            mask,
            out,
        } => {
            let cube = load_data(&data)?;
            let classes: Vec<u32> = match checkpoint {
                None => cube.labels().to_vec(),
                Some(ck) => {
                    let cfg = resolve(&cfg, Some(&config_next_to(&ck)))?;
                    let t = restore(&cube, cfg, &ck)?;
                    let all: Vec<usize> = (0..cube.labels().len()).collect();
                    t.predict(&all)?.into_iter().map(|c| c as u32 + 1).collect()
                }
            };
            let classes: Vec<u32> = if mask {
                classes
                    .iter()
                    .zip(cube.labels())
                    .map(|(&c, &l)| if l == 0 { 0 } else { c })
                    .collect()
            } else {
                classes
            };
            fs::write(&out, render_map(&classes, cube.height(), cube.width()))?;
        }
        Command::Features {
            data,
            checkpoint,
            cfg,
            row,
            col,
            out,
        } => {
            let cube = load_data(&data)?;
            if row >= cube.height() || col >= cube.width() {
                return Err(Error::Config(format!(
                    "pixel ({row}, {col}) is outside the scene"
                )));
            }
            let cfg = resolve(&cfg, Some(&config_next_to(&checkpoint)))?;
            let t = restore(&cube, cfg.clone(), &checkpoint)?;
            let sample = t.cube().extract_window(row, col, cfg.window);
            let mut g = Graph::new();
            let model: &Model = t.model();
            let vars = model.params().bind(&mut g);
            let fwd = model.forward(
                &mut g,
                &vars,
                &sample,
                ForwardOptions {
                    trace: true,
                    unit_gate: false,
                },
            )?;
            let trace = fwd.trace.expect("trace requested");
            let manifest = dump_trace(&trace, &out)?;
            print!("{manifest}");
            println!("predicted class {}", argmax(g.value(fwd.logits).data()) + 1);
        }
        Command::BenchScan {
            channels,
            n_state,
            out,
        } => {
            let settings = BenchSettings {
                channels,
                n_state,
                ..BenchSettings::default()
            };
            let report = bench_scan(&DEFAULT_LENGTHS, &settings);
            let csv = report.to_csv();
            match out {
                Some(p) => fs::write(p, &csv)?,
                None => print!("{csv}"),
            }
            eprintln!(
                "scan exponent {:.3} (max doubling ratio {:.2}), attention exponent {:.3}",
                report.scan_exponent,
                report.max_scan_step_ratio(),
                report.attn_exponent
            );
        }
        Command::Params {
            cfg,
            data,
            bands,
            classes,
        } => {
            let cfg = resolve(&cfg, None)?;
            let (bands, classes) = match data {
                Some(p) => {
                    let cube = load_data(&p)?;
                    (cube.bands(), cube.classes())
                }
                None => (bands, classes),
            };
            let mut rng = ChaCha8Rng::seed_from_u64(0);
            let model = Model::init(cfg.model_config(bands, classes), &mut rng)?;
            for (group, n) in model.param_groups() {
                println!("{group:<12} {n:>10}");
            }
            let total = model.params().scalar_count();
            println!("{:<12} {total:>10}", "total");
            println!(
                "reference    {REFERENCE_PARAMS:>10}  (informational; ratio {:.2})",
                total as f64 / REFERENCE_PARAMS as f64
            );
        }
        Command::Selfcheck => {
            let results = selfcheck::run_all()?;
            let mut ok = true;
            for r in &results {
                println!(
                    "[{}] {}: {}",
                    if r.passed { "pass" } else { "FAIL" },
                    r.name,
                    r.detail
                );
                ok &= r.passed;
            }
            if !ok {
                return Ok(ExitCode::FAILURE);
            }
        }
        Command::Synth { spec, out } => {
            let spec = ExperimentSpec::load(&spec)?;
            let cube = make_synthetic(&spec.scene)?;
            save_hsic(&cube, &out)?;
            println!(
                "{}×{}×{} scene, {} classes, labelled per class {:?}",
                cube.height(),
                cube.width(),
                cube.bands(),
                cube.classes(),
                cube.class_counts()
            );
        }
    }
    Ok(ExitCode::SUCCESS)
}
