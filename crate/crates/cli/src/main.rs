use std::collections::HashMap;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde_json::{json, Value};

use bevmotion::config::Config;
use bevmotion::geom::Vec2;
use bevmotion::loss::MixtureOutput;
use bevmotion::metrics::{evaluate, read_predictions, write_predictions, PredictionRecord};
use bevmotion::model::checkpoint::{Checkpoint, CheckpointHeader};
use bevmotion::model::train::write_log_csv;
use bevmotion::model::{predict_scenes, train_cache_dir};
use bevmotion::raster::{rasterize, rasterize_dataset, read_cache_expecting, render_png_annotated, Raster};
use bevmotion::scene::{load_scene, load_scene_dir, save_scene};
use bevmotion::synth::{generate, ScenarioKind};
use bevmotion::Error;

#[derive(Parser)]
#[command(name = "bevmotion", version, about = "Agent-centric BEV motion prediction pipeline")]
struct Cli {
    #[command(flatten)]
    global: GlobalArgs,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct GlobalArgs {
    /// JSON config file; its values override the defaults, flags override both.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Seed for scene generation and training.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Raster resolution in meters per pixel.
    #[arg(long, global = true)]
    scale: Option<f64>,
    /// Number of predicted hypotheses.
    #[arg(long, global = true)]
    k: Option<usize>,
    /// Final-displacement threshold for a miss, meters.
    #[arg(long, global = true)]
    miss_threshold: Option<f64>,
}

#[derive(Subcommand)]
enum Command {
    /// Write synthetic scenes as JSON files.
    Generate {
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        count: Option<usize>,
        #[arg(long, value_enum)]
        kind: Option<Kind>,
        /// Probability that a junction future turns.
        #[arg(long)]
        branch_probability: Option<f64>,
        #[arg(long)]
        noise_sigma: Option<f64>,
    },
    /// Rasterize every prediction target into an NPZ cache.
    Rasterize {
        #[arg(long)]
        scenes: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 4)]
        jobs: usize,
    },
    /// Train on a cache directory; writes a checkpoint and `<out>.log.csv`.
    Train {
        #[arg(long)]
        cache: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        iterations: Option<usize>,
    },
    /// Predict world-frame trajectories for every target in a scene directory.
    Predict {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        scenes: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Score predictions; writes `<out>.json` and `<out>.csv`.
    Evaluate {
        #[arg(long)]
        predictions: PathBuf,
        #[arg(long)]
        scenes: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Render a raster (from a cache file, or a scene and target) as PNG.
    Render {
        #[arg(long, conflicts_with_all = ["scene", "target"], required_unless_present = "scene")]
        cache: Option<PathBuf>,
        #[arg(long, requires = "target")]
        scene: Option<PathBuf>,
        #[arg(long)]
        target: Option<String>,
        /// Predictions file whose hypotheses for this target are drawn on top.
        #[arg(long)]
        overlay: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum Kind {
    Straight,
    Junction,
}

fn resolve_config(g: &GlobalArgs) -> Result<Config, Error> {
    let mut config = match &g.config {
        Some(path) => Config::load(path)?,
        None => Config::default(),
    };
    if let Some(seed) = g.seed {
        config.set_seed(seed);
    }
    if let Some(scale) = g.scale {
        config.raster.scale = scale;
    }
    if let Some(k) = g.k {
        config.model.k = k;
    }
    if let Some(t) = g.miss_threshold {
        config.metrics.miss_threshold = t;
    }
    Ok(config)
}

fn write_json(path: &Path, value: &Value) -> Result<(), Error> {
    let text = serde_json::to_string_pretty(value).expect("json") + "\n";
    std::fs::write(path, text).map_err(|e| Error::Io {
        path: path.into(),
        source: e,
    })
}

fn create_dir(path: &Path) -> Result<(), Error> {
    std::fs::create_dir_all(path).map_err(|e| Error::Io {
        path: path.into(),
        source: e,
    })
}

fn with_suffix(path: &Path, suffix: &str) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(suffix);
    PathBuf::from(s)
}

fn run(command: Command, mut config: Config) -> Result<(), Error> {
    match command {
        Command::Generate {
            out,
            count,
            kind,
            branch_probability,
            noise_sigma,
        } => {
            let spec = &mut config.synth;
            if let Some(n) = count {
                spec.count = n;
            }
            if let Some(kind) = kind {
                spec.kind = match kind {
                    Kind::Straight => ScenarioKind::StraightRoad,
                    Kind::Junction => ScenarioKind::TIntersection,
                };
            }
            if let Some(p) = branch_probability {
                spec.branch_probability = p;
            }
            if let Some(s) = noise_sigma {
                spec.noise_sigma = s;
            }
            config.validate()?;
            eprintln!("config: {}", config.to_value());
            let scenes = generate(&config.synth)?;
            create_dir(&out)?;
            for s in &scenes {
                save_scene(s, out.join(format!("{}.json", s.scene_id)))?;
            }
            write_json(
                &out.join("_manifest.json"),
                &json!({ "config": config.to_value(), "scenes": scenes.len() }),
            )?;
            println!("{}", json!({ "scenes": scenes.len(), "out": out }));
        }
        Command::Rasterize { scenes, out, jobs } => {
            config.validate()?;
            eprintln!("config: {}", config.to_value());
            let loaded = load_scene_dir(&scenes)?;
            let summary = rasterize_dataset(&loaded, &out, &config.raster, jobs, Some(&config.to_value()))?;
            let report = json!({
                "count": summary.count,
                "failures": summary.failures,
                "seconds": summary.seconds,
                "rasters_per_sec": summary.rasters_per_sec,
                "jobs": jobs,
            });
            println!("{report}");
            if !summary.failures.is_empty() {
                return Err(Error::InvalidConfig(format!(
                    "{} targets failed to rasterize",
                    summary.failures.len()
                )));
            }
        }
        Command::Train { cache, out, iterations } => {
            if let Some(n) = iterations {
                config.training.iterations = n;
            }
            config.validate()?;
            eprintln!("config: {}", config.to_value());
            let outcome = train_cache_dir(&cache, &config.raster, &config.model, &config.training)?;
            let header = CheckpointHeader {
                feature_dim: outcome.params.feature_dim,
                hidden: outcome.params.hidden,
                k: outcome.params.k,
                horizon: outcome.params.horizon,
                pool: outcome.params.pool,
                training: config.training.clone(),
                iteration: outcome.best_iter,
                best_val_loss: outcome.best_val_loss,
                extra: Some(config.to_value()),
            };
            Checkpoint {
                header,
                params: outcome.params,
            }
            .save(&out)?;
            write_log_csv(&outcome.log, with_suffix(&out, ".log.csv"))?;
            let last = outcome.log.last().map(|r| r.train_loss);
            println!(
                "{}",
                json!({ "checkpoint": out, "best_iter": outcome.best_iter, "best_val_loss": outcome.best_val_loss, "final_train_loss": last })
            );
        }
        Command::Predict {
            checkpoint,
            scenes,
            out,
        } => {
            config.validate()?;
            eprintln!("config: {}", config.to_value());
            let ckpt = Checkpoint::load(&checkpoint)?;
            let loaded = load_scene_dir(&scenes)?;
            let records = predict_scenes(&ckpt.params, &loaded, &config.raster)?;
            let header = json!({ "config": config.to_value(), "checkpoint": ckpt.header });
            write_predictions(&out, Some(&header), &records)?;
            println!("{}", json!({ "predictions": records.len(), "out": out }));
        }
        Command::Evaluate {
            predictions,
            scenes,
            out,
        } => {
            config.validate()?;
            eprintln!("config: {}", config.to_value());
            let (header, records) = read_predictions(&predictions)?;
            let loaded = load_scene_dir(&scenes)?;
            let mut report = evaluate(&records, &loaded, &config.metrics)?;
            report.config = Some(json!({ "resolved": config.to_value(), "predictions": header }));
            report.write(&out)?;
            print!("{}", report.to_csv());
        }
        Command::Render {
            cache,
            scene,
            target,
            overlay,
            out,
        } => {
            config.validate()?;
            eprintln!("config: {}", config.to_value());
            let raster = match (cache, scene, target) {
                (Some(path), _, _) => read_cache_expecting(&path, &config.raster)?.raster,
                (None, Some(scene), Some(target)) => rasterize(&load_scene(&scene)?, &target, &config.raster)?,
                _ => {
                    return Err(Error::InvalidConfig(
                        "render needs --cache or --scene with --target".into(),
                    ))
                }
            };
            let mixture = match overlay {
                Some(path) => Some(overlay_for(&raster, &path)?),
                None => None,
            };
            let text = config.to_value().to_string();
            render_png_annotated(&raster, mixture.as_ref(), &[("bevmotion-config", &text)], &out)?;
            println!("{}", json!({ "png": out }));
        }
    }
    Ok(())
}

/// The raster target's predictions, mapped back into its local frame.
fn overlay_for(raster: &Raster, path: &Path) -> Result<MixtureOutput, Error> {
    let (_, records) = read_predictions(path)?;
    let by_key: HashMap<(&str, &str), &PredictionRecord> = records
        .iter()
        .map(|r| ((r.scene_id.as_str(), r.agent_id.as_str()), r))
        .collect();
    let (scene_id, agent_id) = (raster.meta.scene_id.as_str(), raster.meta.agent_id.as_str());
    let record = by_key
        .get(&(scene_id, agent_id))
        .ok_or_else(|| Error::MissingPrediction {
            scene_id: scene_id.into(),
            agent_id: agent_id.into(),
        })?;
    let k = record.trajectories.len();
    let horizon = record.trajectories.first().map_or(0, |t| t.len());
    let mut means = Vec::with_capacity(k * horizon * 2);
    for traj in &record.trajectories {
        if traj.len() != horizon {
            return Err(Error::ShapeMismatch("hypotheses of different lengths".into()));
        }
        for &p in traj {
            let q = raster.frame.world_to_local(Vec2::from(p));
            means.extend([q.x, q.y]);
        }
    }
    let logits = record.confidences.iter().map(|c| c.ln()).collect();
    MixtureOutput::new(means, logits, k, horizon)
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Io { .. } | Error::Format(_) | Error::Corruption(_) => 2,
        Error::NonFiniteGradient { .. } | Error::NonFiniteLoss { .. } => 4,
        _ => 3,
    }
}

fn fail(kind: &str, message: &str, code: u8) -> ExitCode {
    eprintln!("{}", json!({ "error": kind, "message": message, "exit_code": code }));
    ExitCode::from(code)
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) if !e.use_stderr() => {
            // --help / --version
            let _ = e.print();
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            let _ = e.print();
            return fail("usage", &e.kind().to_string(), 1);
        }
    };
    let result = resolve_config(&cli.global).and_then(|config| run(cli.command, config));
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => fail(e.kind(), &e.to_string(), exit_code(&e)),
    }
}
