use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{anyhow, Context};
use rand::seq::index::sample;
use rand::SeedableRng;
use rand_xoshiro::Xoshiro256PlusPlus;
use serde_json::json;
use tae_core::checkpoint;
use tae_core::diagnostics::{scatter_export, LatentReport};
use tae_core::mnist::{split_paths, IdxDataset, Split};
use tae_core::model::{TaeConfig, TaeModel};
use tae_core::morphing::{latents_csv, path_set, render_grid, ImageFormat, MorphPath, PathMode, PolarPoint};
use tae_core::train::{evaluate, train, TrainingLog};
use tae_core::Error;

use crate::{Command, Common, EvalArgs, MorphArgs, Overrides, ScatterArgs, TrainArgs};

/// Bad input: missing files, invalid config, out-of-range indices.
const USAGE: u8 = 2;
/// Anything that goes wrong once the inputs were accepted.
const RUNTIME: u8 = 1;

#[derive(Debug)]
pub struct Failure {
    pub code: u8,
    pub error: anyhow::Error,
}

fn usage(error: anyhow::Error) -> Failure {
    Failure { code: USAGE, error }
}

fn runtime(error: anyhow::Error) -> Failure {
    Failure { code: RUNTIME, error }
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let code = match e {
            Error::Config(_)
            | Error::UnknownMode(_)
            | Error::Checkpoint(_)
            | Error::Idx(_)
            | Error::LabelOutOfRange { .. } => USAGE,
            _ => RUNTIME,
        };
        Failure { code, error: e.into() }
    }
}

type Outcome<T = ()> = Result<T, Failure>;

pub fn run(command: Command) -> Outcome {
    match command {
        Command::Train(a) => cmd_train(a),
        Command::Morph(a) => cmd_morph(a),
        Command::Scatter(a) => cmd_scatter(a),
        Command::Eval(a) => cmd_eval(a),
    }
}

/// Config file (or defaults) with flag overrides applied, validated.
pub fn resolve_config(file: Option<&Path>, o: &Overrides) -> Outcome<TaeConfig> {
    let mut c = match file {
        Some(path) => {
            let text = fs::read_to_string(path)
                .with_context(|| format!("cannot read config {}", path.display()))
                .map_err(usage)?;
            serde_json::from_str(&text)
                .with_context(|| format!("invalid config {}", path.display()))
                .map_err(usage)?
        }
        None => TaeConfig::default(),
    };
    if let Some(v) = o.arch {
        c.arch = v.into();
    }
    macro_rules! apply {
        ($($field:ident),*) => { $(if let Some(v) = o.$field { c.$field = v; })* };
    }
    apply!(d, batch_size, epochs, seed, learning_rate, lambda_rec, lambda_spring, lambda_quant, lambda_cls);
    c.validate()?;
    Ok(c)
}

fn require_split(dir: &Path, split: Split) -> Outcome<(PathBuf, PathBuf)> {
    let (images, labels) = split_paths(dir, split);
    for p in [&images, &labels] {
        if !p.is_file() {
            return Err(usage(anyhow!("missing MNIST file {} (or .gz)", p.display())));
        }
    }
    Ok((images, labels))
}

fn require_file(path: &Path, what: &str) -> Outcome {
    if path.is_file() {
        Ok(())
    } else {
        Err(usage(anyhow!("{what} {} not found", path.display())))
    }
}

fn prepare_out(common: &Common) -> Outcome<PathBuf> {
    fs::create_dir_all(&common.out)
        .with_context(|| format!("cannot create output directory {}", common.out.display()))
        .map_err(usage)?;
    Ok(common.out.clone())
}

fn write(path: &Path, contents: impl AsRef<[u8]>) -> Outcome {
    fs::write(path, contents)
        .with_context(|| format!("cannot write {}", path.display()))
        .map_err(runtime)
}

fn load_validation(common: &Common, n: Option<usize>) -> Outcome<IdxDataset> {
    let (images, labels) = require_split(&common.data_dir, Split::Test)?;
    let data = IdxDataset::load(&images, &labels).map_err(Error::from)?;
    Ok(match n {
        Some(n) if n > data.len() => {
            log::warn!("requested {n} samples but the validation set has {}; using all", data.len());
            data
        }
        Some(n) => data.head(n),
        None => data,
    })
}

fn load_model(path: &Path) -> Outcome<TaeModel> {
    require_file(path, "checkpoint")?;
    Ok(checkpoint::load(path)?)
}

fn cmd_train(args: TrainArgs) -> Outcome {
    let config = resolve_config(args.config.as_deref(), &args.overrides)?;
    let (images, labels) = require_split(&args.common.data_dir, Split::Train)?;
    let out = prepare_out(&args.common)?;

    let mut data = IdxDataset::load(&images, &labels).map_err(Error::from)?;
    if let Some(n) = args.subset {
        if n < data.len() {
            data = data.head(n);
        }
    }
    write(&out.join("config.json"), serde_json::to_string_pretty(&config).expect("config serialises") + "\n")?;
    log::info!(
        "training {:?} model, d = {}, on {} images for {} epochs",
        config.arch,
        config.d,
        data.len(),
        config.epochs
    );

    let mut model = TaeModel::new(config)?;
    let log_path = out.join("training_log.csv");
    let mut partial = TrainingLog::default();
    let result = train(&mut model, &data, |record| {
        partial.records.push(*record);
        // Rewritten each epoch so an aborted run still leaves its history.
        if let Err(e) = fs::write(&log_path, partial.to_csv()) {
            log::warn!("cannot update {}: {e}", log_path.display());
        }
    });
    let log = result?;
    write(&log_path, log.to_csv())?;
    let ckpt = out.join("checkpoint.tae");
    checkpoint::save(&model, &ckpt).map_err(|e| runtime(e.into()))?;
    println!("wrote {} and {}", ckpt.display(), log_path.display());
    Ok(())
}

fn cmd_morph(args: MorphArgs) -> Outcome {
    let model = load_model(&args.checkpoint)?;
    let data = load_validation(&args.common, None)?;
    let out = prepare_out(&args.common)?;
    if args.frames < 2 {
        return Err(usage(anyhow!("--frames must be at least 2")));
    }
    let (from, to) = if args.random {
        let mut rng = Xoshiro256PlusPlus::seed_from_u64(args.seed);
        let pick = sample(&mut rng, data.len(), 2);
        (pick.index(0), pick.index(1))
    } else {
        let idx = args.indices.as_deref().unwrap_or_default();
        (idx[0], idx[1])
    };
    for i in [from, to] {
        if i >= data.len() {
            return Err(usage(anyhow!("index {i} is out of range for {} validation images", data.len())));
        }
    }
    let endpoints = model.encode(&data.select(&[from, to]).images)?;
    let a = PolarPoint::from_batch(&endpoints, 0)?;
    let b = PolarPoint::from_batch(&endpoints, 1)?;
    let mode: PathMode = args.mode.into();
    let mut paths = Vec::new();
    let mut rows = Vec::new();
    for k in path_set(&a.phi, &b.phi, mode) {
        let path = MorphPath::new(&a, &b, &k, args.frames)?;
        rows.push(path.decode(&model)?);
        paths.push(path);
    }
    let grid = render_grid(&rows)?;
    let format: ImageFormat = args.format.into();
    let image_path = out.join(format!("morph.{}", format.extension()));
    grid.write(&image_path, format).map_err(|e| runtime(e.into()))?;
    write(&out.join("morph_latents.csv"), latents_csv(&paths))?;
    let ks: Vec<String> = paths.iter().map(|p| format!("{:?}", p.k)).collect();
    println!(
        "morph {from} -> {to}: {} paths x {} frames written to {}\noffsets: {}",
        rows.len(),
        args.frames,
        image_path.display(),
        ks.join(" ")
    );
    Ok(())
}

fn cmd_scatter(args: ScatterArgs) -> Outcome {
    let model = load_model(&args.checkpoint)?;
    let data = load_validation(&args.common, Some(args.n))?;
    let out = prepare_out(&args.common)?;
    let eval = evaluate(&model, &data, model.config().batch_size)?;
    scatter_export(&eval.latents, &eval.labels, &out.join("scatter.csv")).map_err(|e| runtime(e.into()))?;
    let report = LatentReport::new(&eval.latents)?;
    let json = serde_json::to_string_pretty(&report).expect("report serialises");
    write(&out.join("report.json"), &json)?;
    write(&out.join("report.txt"), report.to_text())?;
    if args.json {
        println!("{json}");
    } else {
        print!("{}", report.to_text());
    }
    Ok(())
}

fn cmd_eval(args: EvalArgs) -> Outcome {
    let model = load_model(&args.checkpoint)?;
    let data = load_validation(&args.common, Some(args.n))?;
    let out = prepare_out(&args.common)?;
    let eval = evaluate(&model, &data, model.config().batch_size)?;
    let metrics = json!({
        "samples": eval.labels.len(),
        "mse": eval.mse,
        "accuracy": eval.accuracy,
        "ks": eval.ks(),
        "rho_mean": eval.rho_mean(),
    });
    let text = serde_json::to_string_pretty(&metrics).expect("metrics serialise");
    write(&out.join("eval.json"), &text)?;
    if args.json {
        println!("{text}");
    } else {
        println!("samples   {}", eval.labels.len());
        println!("mse       {:.6}", eval.mse);
        println!("accuracy  {:.4}", eval.accuracy);
        let ks: Vec<String> = eval.ks().iter().map(|k| format!("{k:.4}")).collect();
        println!("ks        {}", ks.join(" "));
        println!("rho mean  {:.4}", eval.rho_mean());
    }
    Ok(())
}
