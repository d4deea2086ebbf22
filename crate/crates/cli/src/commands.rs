use std::path::Path;

use pointprompt::config::RunConfig;
use pointprompt::data::{gen_phantoms, load_dataset, read_pgm, write_pgm_mask, Split};
use pointprompt::geometry::{Image2D, Mask2D, PointPrompt};
use pointprompt::metrics::{dice, emit_overlay, evaluate, EvalSample};
use pointprompt::pipeline::{infer_iterative, point_from_mask, run_training, training_samples, Selector, TrainingOptions};
use pointprompt::refiner::{checkpoint, Trainer};
use pointprompt::{Error, Result};

fn write_file(path: &Path, bytes: impl AsRef<[u8]>) -> Result<()> {
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir)?;
    }
    std::fs::write(path, bytes)?;
    Ok(())
}

fn read_file(path: &Path) -> Result<Vec<u8>> {
    std::fs::read(path).map_err(|e| match e.kind() {
        std::io::ErrorKind::NotFound => Error::MissingFile(path.into()),
        _ => e.into(),
    })
}

fn fresh_trainer(cfg: &RunConfig) -> Result<Trainer> {
    Trainer::new(
        cfg.model.dims(),
        cfg.model.classes,
        cfg.train.clone(),
        cfg.proposals.clone(),
        cfg.rng_seed,
    )
}

/// The trained model; the ideal selector never looks at it, so it may run
/// without a checkpoint.
fn model_for_inference(cfg: &RunConfig) -> Result<Trainer> {
    let path = &cfg.paths.checkpoint;
    if cfg.inference.selector == Selector::Ideal && !path.exists() {
        return fresh_trainer(cfg);
    }
    checkpoint::load(path, cfg.train.clone(), cfg.proposals.clone())
}

pub fn synth(cfg: &RunConfig) -> Result<()> {
    let manifest = gen_phantoms(&cfg.phantom_spec(), &cfg.paths.data_dir)?;
    let train = manifest.samples.iter().filter(|s| s.split == Split::Train).count();
    println!(
        "wrote {} phantoms ({} train, {} test) to {}",
        manifest.samples.len(),
        train,
        manifest.samples.len() - train,
        cfg.paths.data_dir.display()
    );
    Ok(())
}

pub fn train(cfg: &RunConfig) -> Result<()> {
    let ds = load_dataset(&cfg.paths.manifest())?;
    let samples = training_samples(ds.split(Split::Train).map(|s| (&s.image, &s.mask, s.class_id)))?;
    if samples.is_empty() {
        return Err(Error::format(
            pointprompt::error::FormatKind::Manifest,
            "training split is empty",
        ));
    }
    let mut trainer = fresh_trainer(cfg)?;
    let opts = TrainingOptions {
        epochs: cfg.schedule.epochs,
        checkpoint: Some(cfg.paths.checkpoint.clone()),
        checkpoint_every: cfg.schedule.checkpoint_every,
    };
    if let Some(dir) = cfg.paths.checkpoint.parent() {
        std::fs::create_dir_all(dir)?;
    }
    let curve = run_training(&mut trainer, &samples, &opts, |epoch, loss| {
        println!("epoch {epoch:>4}  loss {loss:.6}");
    })?;
    let curve_path = cfg.paths.checkpoint.with_extension("loss.json");
    let mut body = serde_json::to_string_pretty(&serde_json::json!({ "epoch_loss": curve })).expect("json");
    body.push('\n');
    write_file(&curve_path, body)?;
    println!("checkpoint {}", cfg.paths.checkpoint.display());
    Ok(())
}

struct InferInput {
    id: String,
    image: Image2D,
    gt: Option<Mask2D>,
    point: PointPrompt,
}

fn infer_input(cfg: &RunConfig, args: &crate::cli::InferArgs) -> Result<InferInput> {
    let class_id = args.class.unwrap_or(cfg.phantom.class_id);
    if let Some(id) = &args.id {
        let ds = load_dataset(&cfg.paths.manifest())?;
        let s = ds
            .samples
            .into_iter()
            .find(|s| &s.id == id)
            .ok_or_else(|| Error::invalid(format!("no sample {id:?} in {}", cfg.paths.manifest().display())))?;
        let point = point_from_mask(&s.mask, args.class.unwrap_or(s.class_id))?;
        return Ok(InferInput {
            id: s.id,
            image: s.image,
            gt: Some(s.mask),
            point,
        });
    }
    let (Some(image_path), Some(p)) = (&args.image, args.point) else {
        return Err(Error::invalid("infer needs either --id or --image with --point"));
    };
    let image = read_pgm(&read_file(image_path)?)?.to_image(1.0)?;
    let gt = match &args.mask {
        Some(m) => Some(read_pgm(&read_file(m)?)?.to_mask()?),
        None => None,
    };
    let id = image_path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    Ok(InferInput {
        id,
        image,
        gt,
        point: PointPrompt {
            x: p.0,
            y: p.1,
            class_id,
        },
    })
}

pub fn infer(cfg: &RunConfig, args: &crate::cli::InferArgs) -> Result<()> {
    let input = infer_input(cfg, args)?;
    if let Some(gt) = &input.gt {
        if gt.dims() != input.image.dims() {
            return Err(Error::DimensionMismatch {
                expected: input.image.dims(),
                actual: gt.dims(),
            });
        }
    }
    let choice = cfg.backend_choice();
    let oracle_gt;
    let backend = match (&choice, &input.gt) {
        (pointprompt::segmenter::BackendChoice::Oracle(_), None) => {
            return Err(Error::invalid("the oracle backend needs a ground-truth --mask"));
        }
        (_, Some(gt)) => {
            oracle_gt = gt.clone();
            choice.for_sample(&oracle_gt)
        }
        (_, None) => {
            oracle_gt = Mask2D::empty(input.image.width(), input.image.height())?;
            choice.for_sample(&oracle_gt)
        }
    };
    let trainer = model_for_inference(cfg)?;
    let rounds = args.rounds.unwrap_or(cfg.inference.rounds);
    let iter_cfg = cfg.iteration_config(rounds);
    let (mask, trace) = infer_iterative(
        &trainer.params,
        &trainer.buffer,
        backend.as_ref(),
        &input.image,
        &input.point,
        &iter_cfg,
        input.gt.as_ref(),
    )?;

    write_file(&args.out.join("mask.pgm"), write_pgm_mask(&mask))?;
    let final_dice = input.gt.as_ref().map(|g| dice(&mask, g)).transpose()?;
    let trace_json = serde_json::json!({
        "id": input.id,
        "point": [input.point.x, input.point.y],
        "class_id": input.point.class_id,
        "T": rounds,
        "selector": iter_cfg.selector,
        "final_box": trace.final_box(),
        "dice": final_dice,
        "rounds": trace.rounds,
    });
    let mut body = serde_json::to_string_pretty(&trace_json).expect("json");
    body.push('\n');
    write_file(&args.out.join("trace.json"), body)?;
    if args.overlay {
        let gt = input
            .gt
            .clone()
            .map_or_else(|| Mask2D::empty(input.image.width(), input.image.height()), Ok)?;
        write_file(&args.out.join("overlay.ppm"), emit_overlay(&input.image, &gt, &mask)?)?;
    }
    match final_dice {
        Some(d) => println!("{}: {} rounds, dice {d:.4}, outputs in {}", input.id, trace.rounds.len(), args.out.display()),
        None => println!("{}: {} rounds, outputs in {}", input.id, trace.rounds.len(), args.out.display()),
    }
    Ok(())
}

pub fn eval(cfg: &RunConfig, args: &crate::cli::EvalArgs) -> Result<()> {
    let ds = load_dataset(&cfg.paths.manifest())?;
    let samples: Vec<EvalSample> = ds
        .split(Split::Test)
        .map(|s| EvalSample {
            id: s.id.clone(),
            image: s.image.clone(),
            mask: s.mask.clone(),
            class_id: s.class_id,
        })
        .collect();
    let trainer = model_for_inference(cfg)?;
    let rounds = args.rounds.clone().unwrap_or_else(|| cfg.inference.eval_rounds.clone());
    if rounds.is_empty() || rounds.contains(&0) {
        return Err(Error::invalid("--T needs positive round counts"));
    }
    let report = evaluate(
        &samples,
        &trainer.params,
        &trainer.buffer,
        &cfg.backend_choice(),
        &cfg.iteration_config(cfg.inference.rounds),
        &rounds,
        cfg.inference.hausdorff,
        args.jobs.unwrap_or(cfg.inference.jobs).max(1),
    )?;
    report.write(&cfg.paths.report_dir)?;
    println!("{:>4}  {:>8}  {:>15}  {:>15}  {:>15}", "T", "samples", "dice", "hausdorff_mm", "box_iou_final");
    for a in &report.aggregates {
        println!(
            "{:>4}  {:>8}  {:>7.4} ± {:<5.4}  {:>7.3} ± {:<5.3}  {:>7.4} ± {:<5.4}",
            a.rounds,
            a.samples,
            a.dice.mean,
            a.dice.std,
            a.hausdorff_mm.mean,
            a.hausdorff_mm.std,
            a.box_iou_final.mean,
            a.box_iou_final.std
        );
    }
    println!("report in {}", cfg.paths.report_dir.display());
    Ok(())
}
