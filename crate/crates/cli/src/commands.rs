//! Implementation of every subcommand.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;
use std::time::Instant;

use anyhow::{bail, Context, Result};
use log::{info, warn};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use undesir_core::gradcheck::{self, CheckRow};
use undesir_core::metrics::{self, ImageRow, MetricReport};
use undesir_core::models::dataset::{self, clean_training_pairs};
use undesir_core::models::{train_reference, Model, TrainConfig};
use undesir_core::{explain, ClassifierSpec, ExplainConfig, TargetClass, Tensor};

use crate::cli::{
    Cli, Command, ConsistencyArgs, DatasetArgs, EvalArgs, ExplainArgs, GradcheckArgs, TrainArgs,
};
use crate::formats::{self, decode_image, encode_heatmap, encode_mask, encode_ppm};
use crate::output::{OutDir, RunManifest, SCHEMA};
use crate::parallel::{map_ordered, thread_count};
use crate::report::{
    ConfigEcho, ConsistencyReport, DatasetIndex, EvalFailure, EvalReport, EvalRow, ExplainReport,
    IndexEntry, TrainSummary,
};

/// Largest relative gradient error `gradcheck` accepts.
pub const GRADCHECK_TOLERANCE: f64 = 1e-5;

/// Runs a parsed command line. `args` is the raw argument vector after the
/// program name, recorded in manifests. Returns the process exit code.
pub fn run(cli: &Cli, args: &[String]) -> Result<i32> {
    match &cli.command {
        Command::Train(a) => train(a, args),
        Command::Dataset(a) => export_dataset(a, args),
        Command::Explain(a) => explain_image(a, args),
        Command::Eval(a) => eval(a, args),
        Command::Gradcheck(a) => gradcheck_cmd(a),
        Command::Consistency(a) => consistency(a, args),
    }
}

struct Run<'a> {
    command: &'static str,
    args: &'a [String],
    start: Instant,
    inputs: BTreeMap<String, String>,
}

impl<'a> Run<'a> {
    fn new(command: &'static str, args: &'a [String]) -> Self {
        Self {
            command,
            args,
            start: Instant::now(),
            inputs: BTreeMap::new(),
        }
    }

    fn input(mut self, name: &str, path: &Path) -> Self {
        self.inputs
            .insert(name.to_string(), path.display().to_string());
        self
    }

    fn finish(
        self,
        out: &mut OutDir,
        root: &Path,
        config: impl Serialize,
        seeds: Vec<u64>,
    ) -> Result<()> {
        RunManifest {
            schema: SCHEMA,
            command: self.command.to_string(),
            args: self.args.to_vec(),
            config: serde_json::to_value(config)?,
            seeds,
            inputs: self.inputs,
            output_dir: root.display().to_string(),
            outputs: Vec::new(),
            version: env!("CARGO_PKG_VERSION").to_string(),
            duration_secs: self.start.elapsed().as_secs_f64(),
        }
        .write(out)
    }
}

/// Reads a PPM or PGM image.
pub fn read_image(path: &Path) -> Result<Tensor> {
    let bytes = fs::read(path).with_context(|| format!("reading {}", path.display()))?;
    decode_image(&bytes).with_context(|| format!("decoding {}", path.display()))
}

/// Reads a weight file of either architecture.
pub fn read_model(path: &Path) -> Result<Model> {
    let bytes = fs::read(path).with_context(|| format!("reading {}", path.display()))?;
    Model::load(&bytes).with_context(|| format!("decoding {}", path.display()))
}

/// Reads `index.json` of an exported dataset.
pub fn read_index(dir: &Path) -> Result<DatasetIndex> {
    let p = dir.join("index.json");
    let bytes = fs::read(&p).with_context(|| format!("reading {}", p.display()))?;
    let index: DatasetIndex =
        serde_json::from_slice(&bytes).with_context(|| format!("parsing {}", p.display()))?;
    if index.schema != SCHEMA {
        bail!("unsupported dataset schema {}", index.schema);
    }
    Ok(index)
}

fn dims(image: &Tensor) -> (usize, usize) {
    (image.shape()[0], image.shape()[1])
}

fn train(a: &TrainArgs, args: &[String]) -> Result<i32> {
    let run = Run::new("train", args);
    if a.n == 0 {
        bail!("--n must be at least 1");
    }
    let mut out = OutDir::create(&a.out_dir)?;
    let data = dataset::generate_synthetic_dataset(a.n, a.data_seed);
    let (images, labels) = clean_training_pairs(&data);
    let cfg = TrainConfig {
        epochs: a.epochs,
        lr: a.lr,
        batch_size: a.batch_size,
        seed: a.seed,
        label_smoothing: a.label_smoothing,
    };
    if a.epochs == 0 {
        warn!("untrained model: --epochs 0 returns the initial weights");
    }
    let (model, report) = train_reference(&images, &labels, dataset::NUM_CLASSES, &cfg)?;
    out.write("weights.undw", &model.save_weights())?;
    let summary = TrainSummary {
        schema: SCHEMA,
        n: a.n,
        data_seed: a.data_seed,
        seed: a.seed,
        epochs: a.epochs,
        lr: a.lr,
        batch_size: a.batch_size,
        label_smoothing: a.label_smoothing,
        parameters: model.param_count(),
        epoch_loss: report.epoch_loss,
        train_accuracy: report.train_accuracy,
    };
    out.write_json("train.json", &summary)?;
    println!("train accuracy {:.4}", summary.train_accuracy);
    run.finish(&mut out, &a.out_dir, &summary, vec![a.data_seed, a.seed])?;
    Ok(0)
}

fn export_dataset(a: &DatasetArgs, args: &[String]) -> Result<i32> {
    let run = Run::new("dataset", args);
    if a.n == 0 {
        bail!("--n must be at least 1");
    }
    let mut out = OutDir::create(&a.out_dir)?;
    let mut samples = Vec::with_capacity(a.n);
    for (i, s) in dataset::generate_synthetic_dataset(a.n, a.seed)
        .into_iter()
        .enumerate()
    {
        let file = format!("images/{i:05}.ppm");
        out.write(&file, &encode_ppm(&s.image)?)?;
        samples.push(IndexEntry {
            file,
            label: s.label,
            confuser_class: s.confuser_class,
            confuser: s.confuser.into(),
        });
    }
    let d = dataset::demo_sample();
    out.write("demo.ppm", &encode_ppm(&d.image)?)?;
    let demo = IndexEntry {
        file: "demo.ppm".to_string(),
        label: d.label,
        confuser_class: d.confuser_class,
        confuser: d.confuser.into(),
    };
    let index = DatasetIndex {
        schema: SCHEMA,
        seed: a.seed,
        image_size: dataset::IMAGE_SIZE,
        num_classes: dataset::NUM_CLASSES,
        samples,
        demo,
    };
    out.write_json("index.json", &index)?;
    println!("wrote {} images and demo.ppm", a.n);
    let config = serde_json::json!({ "n": a.n, "seed": a.seed });
    run.finish(&mut out, &a.out_dir, config, vec![a.seed])?;
    Ok(0)
}

fn explain_image(a: &ExplainArgs, args: &[String]) -> Result<i32> {
    let run = Run::new("explain", args)
        .input("image", &a.image)
        .input("weights", &a.weights);
    let image = read_image(&a.image)?;
    let model = read_model(&a.weights)?;
    let cfg = a.hyper.to_config(dims(&image))?;
    let r = explain(&model, &image, &cfg)?;
    let before = r.eval_before.probs[r.target];
    let after = r.eval_after.probs[r.target];
    let report = ExplainReport {
        schema: SCHEMA,
        target: r.target,
        before,
        after,
        phi: metrics::phi(before, after).ok(),
        pixel_ratio: metrics::pixel_ratio(&r.upsampled, a.hyper.threshold),
        probs_before: r.eval_before.probs.clone(),
        probs_after: r.eval_after.probs.clone(),
        logits_before: r.eval_before.logits.clone(),
        logits_after: r.eval_after.logits.clone(),
        trace: r.trace.clone(),
        config: ConfigEcho::new(&cfg, a.hyper.threshold),
    };
    let mut out = OutDir::create(&a.out_dir)?;
    out.write("mask.pgm", &encode_heatmap(&r.upsampled)?)?;
    out.write("mask.f64", &encode_mask(r.mask.grid())?)?;
    out.write("perturbed.ppm", &encode_ppm(&r.perturbed)?)?;
    out.write_json("result.json", &report)?;
    println!(
        "class {} before {:.4} after {:.4} phi {} pixel_ratio {:.4}",
        report.target,
        before,
        after,
        report.phi.map_or("n/a".to_string(), |p| format!("{p:.3}")),
        report.pixel_ratio
    );
    run.finish(&mut out, &a.out_dir, &report.config, vec![cfg.seed])?;
    Ok(0)
}

fn eval(a: &EvalArgs, args: &[String]) -> Result<i32> {
    let run = Run::new("eval", args)
        .input("dataset", &a.dataset)
        .input("weights", &a.weights);
    if !matches!(
        crate::cli::parse_target(&a.hyper.target)?,
        TargetClass::Top1
    ) {
        bail!("eval always explains the top-1 class; drop --target");
    }
    let index = read_index(&a.dataset)?;
    let entries = &index.samples[..a.n.unwrap_or(index.samples.len()).min(index.samples.len())];
    if entries.is_empty() {
        bail!("no images to evaluate");
    }
    let model = read_model(&a.weights)?;
    let size = index.image_size;
    let cfg = a.hyper.to_config((size, size))?;
    let threshold = a.hyper.threshold;
    let threads = thread_count();
    info!("explaining {} images on {threads} threads", entries.len());

    let outcomes = map_ordered(entries, threads, |i, e| {
        read_image(&a.dataset.join(&e.file))
            .and_then(|img| Ok(explain(&model, &img, &cfg)?))
            .and_then(|r| Ok(ImageRow::from_result(i, &r, threshold)?))
            .map_err(|err| format!("{err:#}"))
    });
    let mut rows = Vec::new();
    let mut failures = Vec::new();
    for (i, o) in outcomes.into_iter().enumerate() {
        match o {
            Ok(row) => rows.push(row),
            Err(error) => {
                warn!("image {i} ({}) failed: {error}", entries[i].file);
                failures.push(EvalFailure {
                    index: i,
                    file: entries[i].file.clone(),
                    error,
                });
            }
        }
    }
    let agg = MetricReport::aggregate(cfg.mode, threshold, rows, Vec::new());
    let report = EvalReport {
        schema: SCHEMA,
        mode: cfg.mode.name().to_string(),
        attempted: entries.len(),
        succeeded: agg.rows.len(),
        failed: failures.len(),
        phi_mean: agg.phi_mean,
        pixel_ratio_mean: agg.pixel_ratio_mean,
        improved_fraction: agg.improved_fraction,
        rows: agg
            .rows
            .iter()
            .map(|r| EvalRow {
                index: r.index,
                file: entries[r.index].file.clone(),
                label: entries[r.index].label,
                target: r.target,
                before: r.before,
                after: r.after,
                phi: r.phi,
                pixel_ratio: r.pixel_ratio,
            })
            .collect(),
        failures,
        config: ConfigEcho::new(&cfg, threshold),
    };
    let mut out = OutDir::create(&a.out_dir)?;
    out.write_json("report.json", &report)?;
    println!(
        "{} images ({} failed): phi_mean {:.3} pixel_ratio_mean {:.4} improved {:.2}",
        report.attempted,
        report.failed,
        report.phi_mean,
        report.pixel_ratio_mean,
        report.improved_fraction
    );
    run.finish(&mut out, &a.out_dir, &report.config, vec![cfg.seed])?;
    Ok(if report.succeeded == 0 { 1 } else { 0 })
}

/// Every gradient-check row: primitives, the three losses and the CNN input
/// gradient. `corrupt` names a primitive whose analytic side is perturbed.
pub fn gradcheck_rows(seed: u64, trials: usize, corrupt: Option<&str>) -> Result<Vec<CheckRow>> {
    let prims = gradcheck::all_primitives();
    if let Some(name) = corrupt {
        if !prims.iter().any(|p| p.name() == name) {
            bail!("unknown primitive {name:?}");
        }
    }
    let mut rows = Vec::new();
    for (i, p) in prims.iter().enumerate() {
        let bad = corrupt == Some(p.name());
        rows.push(gradcheck::check_primitive(
            p,
            trials,
            seed.wrapping_add(i as u64),
            bad,
        )?);
    }
    rows.extend(gradcheck::check_losses(trials, seed)?);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst: f64 = 0.0;
    for _ in 0..trials {
        let model = ClassifierSpec::init_reference([16, 16, 3], 4, rng.gen())?;
        let image = Tensor::from_fn(&[16, 16, 3], |_| rng.gen_range(0.0..1.0));
        let cot: Vec<f64> = (0..4).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let candidates: Vec<usize> = (0..24).map(|_| rng.gen_range(0..image.len())).collect();
        let pixels = gradcheck::smooth_pixels(&model, &image, &cot, &candidates)?;
        worst = worst.max(gradcheck::check_input_gradient(
            &model,
            &image,
            &cot,
            &pixels[..pixels.len().min(20)],
        )?);
    }
    rows.push(CheckRow {
        name: "cnn-input-gradient",
        trials,
        max_rel_err: worst,
    });
    Ok(rows)
}

fn gradcheck_cmd(a: &GradcheckArgs) -> Result<i32> {
    if a.trials == 0 {
        bail!("--trials must be at least 1");
    }
    let rows = gradcheck_rows(a.seed, a.trials, a.corrupt.as_deref())?;
    println!(
        "{:<20} {:>6} {:>12}  status",
        "check", "trials", "max_rel_err"
    );
    let mut failed = 0;
    for r in &rows {
        let ok = r.max_rel_err <= GRADCHECK_TOLERANCE;
        failed += usize::from(!ok);
        println!(
            "{:<20} {:>6} {:>12.3e}  {}",
            r.name,
            r.trials,
            r.max_rel_err,
            if ok { "PASS" } else { "FAIL" }
        );
    }
    println!(
        "{} of {} checks within {GRADCHECK_TOLERANCE:e}",
        rows.len() - failed,
        rows.len()
    );
    Ok(if failed == 0 { 0 } else { 1 })
}

fn consistency(a: &ConsistencyArgs, args: &[String]) -> Result<i32> {
    let run = Run::new("consistency", args)
        .input("image", &a.image)
        .input("weights", &a.weights);
    if a.trials < 2 {
        bail!("--trials must be at least 2");
    }
    let image = read_image(&a.image)?;
    let model = read_model(&a.weights)?;
    let base = a.hyper.to_config(dims(&image))?;
    let seeds: Vec<u64> = (0..a.trials as u64)
        .map(|i| base.seed.wrapping_add(i.wrapping_mul(a.seed_stride)))
        .collect();
    let mut out = OutDir::create(&a.out_dir)?;
    let mut grids = Vec::with_capacity(a.trials);
    let mut files = Vec::with_capacity(a.trials);
    for (i, &seed) in seeds.iter().enumerate() {
        let r = explain(&model, &image, &ExplainConfig { seed, ..base })?;
        let file = format!("trial_{i:02}.f64");
        out.write(&file, &encode_mask(r.mask.grid())?)?;
        files.push(file);
        grids.push(r.mask.into_grid());
    }
    let (score, note) = match metrics::consistency_score(&grids) {
        Ok(s) => (Some(s), None),
        Err(e) => (None, Some(e.to_string())),
    };
    let report = ConsistencyReport {
        schema: SCHEMA,
        mode: base.mode.name().to_string(),
        seeds: seeds.clone(),
        masks: files,
        score,
        note,
        config: ConfigEcho::new(&base, a.hyper.threshold),
    };
    out.write_json("consistency.json", &report)?;
    match score {
        Some(s) => println!("consistency {s:.6} over {} trials", a.trials),
        None => println!(
            "consistency undefined: {}",
            report.note.as_deref().unwrap_or("")
        ),
    }
    run.finish(&mut out, &a.out_dir, &report.config, seeds)?;
    Ok(0)
}

/// Reads a raw mask file.
pub fn read_mask(path: &Path) -> Result<Tensor> {
    let bytes = fs::read(path).with_context(|| format!("reading {}", path.display()))?;
    Ok(formats::decode_mask(&bytes)?)
}
