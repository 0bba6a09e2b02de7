use std::fmt::Write as _;
use std::fs;
use std::path::Path;
use std::process::ExitCode;

use cdfuse_core::data::{generate_synthetic, mask_image, read_image, write_dataset, write_image, SynthConfig};
use cdfuse_core::gradsuite::{parse_groups, run_grad_suite};
use cdfuse_core::metrics::Metrics;
use cdfuse_core::runner::{
    ablation_csv, evaluate, predict_masks, run_ablation, Checkpoint, ConfigMap, DataSplit, TrainConfig, TrainReport,
    Trainer,
};
use cdfuse_core::{Error, Module, Result, Tensor};

use crate::{AblateArgs, DataSource, EvalArgs, GradcheckArgs, InferArgs, Overrides, SynthArgs, TrainArgs};

/// Defaults, then the config file, then flags.
fn resolve_config(o: &Overrides) -> Result<TrainConfig> {
    let file = match &o.config {
        Some(p) => ConfigMap::load(p)?,
        None => ConfigMap::new(),
    };
    let mut cli = ConfigMap::new();
    let mut put = |k: &str, v: Option<String>| {
        if let Some(v) = v {
            cli.set(k, v);
        }
    };
    put("preset", o.preset.clone());
    put("lr", o.lr.map(|v| v.to_string()));
    put("weight_decay", o.wd.map(|v| v.to_string()));
    put("batch_size", o.batch.map(|v| v.to_string()));
    put("iterations", o.iters.map(|v| v.to_string()));
    put("seed", o.seed.map(|v| v.to_string()));
    put("eval_every", o.eval_every.map(|v| v.to_string()));
    put("crop", o.crop.map(|v| v.to_string()));
    put("loss_weights", o.loss_weights.clone());
    for (flag, key) in [
        (o.no_diff, "no_diff"),
        (o.no_chn, "no_chn"),
        (o.no_dice, "no_dice"),
        (o.no_ecr, "no_ecr"),
        (o.augment, "augment"),
    ] {
        if flag {
            cli.set(key, "true");
        }
    }
    TrainConfig::from_map(&file.merged(&cli))
}

fn load_data(source: &DataSource, cfg: &TrainConfig, synth_size: usize) -> Result<DataSplit> {
    match (&source.data, source.synth) {
        (Some(dir), _) => DataSplit::load(dir),
        (None, Some(n)) => {
            let synth = SynthConfig {
                size: synth_size,
                seed: cfg.seed,
                ..Default::default()
            };
            DataSplit::synthetic(&synth, n, (n / 8).max(1))
        }
        (None, None) => Err(Error::Config("one of --data or --synth is required".into())),
    }
}

fn write_file(path: &Path, text: &str) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn write_history(out: &Path, report: &TrainReport) -> Result<()> {
    let mut loss = String::from("iteration,loss,ce,lovasz,dice\n");
    for s in &report.steps {
        let _ = writeln!(loss, "{},{},{},{},{}", s.iteration, s.loss, s.ce, s.lovasz, s.dice);
    }
    write_file(&out.join("loss.csv"), &loss)?;
    let mut evals = String::from("iteration,pre,rec,f1,iou,oa,kc\n");
    for e in &report.evals {
        let _ = writeln!(evals, "{},{}", e.iteration, e.metrics.csv_row());
    }
    write_file(&out.join("eval.csv"), &evals)
}

pub fn train(a: TrainArgs) -> Result<ExitCode> {
    let mut trainer = match &a.resume {
        Some(path) => {
            let mut t = Trainer::from_checkpoint(&Checkpoint::load(path)?)?;
            if let Some(iters) = a.overrides.iters {
                t.config.iterations = iters;
            }
            log::info!("resuming from {} at iteration {}", path.display(), t.iteration);
            t
        }
        None => Trainer::new(resolve_config(&a.overrides)?)?,
    };
    let data = load_data(&a.source, &trainer.config, a.overrides.synth_size)?;
    log::info!(
        "{} training / {} held-out samples, preset {}, {} parameters",
        data.train.len(),
        data.val.len(),
        trainer.config.preset,
        trainer.model.param_count()
    );
    fs::create_dir_all(&a.out).map_err(|e| Error::io(&a.out, e))?;
    write_file(&a.out.join("config.txt"), &trainer.config.to_text())?;
    let report = trainer.run(&data.train, &data.val, Some(&a.out))?;
    write_history(&a.out, &report)?;
    if let Some(last) = report.evals.last() {
        println!("final held-out metrics (%): {}", Metrics::CSV_HEADER);
        println!("                            {}", last.metrics.csv_row());
    }
    if let (Some(f1), Some(it)) = (report.best_f1, report.best_iteration) {
        println!("best held-out F1 {:.4} at iteration {it}", f1);
    }
    Ok(ExitCode::SUCCESS)
}

pub fn eval(a: EvalArgs) -> Result<ExitCode> {
    let ck = Checkpoint::load(&a.ckpt)?;
    let model = ck.model()?;
    let samples = cdfuse_core::data::load_dataset(&a.data)?.samples;
    let report = evaluate(&model, &samples, a.batch, a.render.as_deref())?;
    println!("{}", report.metrics);
    println!("{}", Metrics::CSV_HEADER);
    println!("{}", report.metrics.csv_row());
    Ok(ExitCode::SUCCESS)
}

pub fn infer(a: InferArgs) -> Result<ExitCode> {
    let model = Checkpoint::load(&a.ckpt)?.model()?;
    let (pre, post) = (read_image(&a.pre)?, read_image(&a.post)?);
    if (pre.width, pre.height) != (post.width, post.height) {
        return Err(Error::Data(format!(
            "pre is {}x{} but post is {}x{}",
            pre.width, pre.height, post.width, post.height
        )));
    }
    let batch = |t: Tensor| t.reshape([1, 3, pre.height, pre.width]);
    let masks = predict_masks(&model, &batch(pre.to_tensor())?, &batch(post.to_tensor())?)?;
    write_image(&a.out, &mask_image(&masks[0]))?;
    println!("{} changed pixels of {}", masks[0].count_ones(), masks[0].len());
    Ok(ExitCode::SUCCESS)
}

pub fn gradcheck(a: GradcheckArgs) -> Result<ExitCode> {
    let groups = parse_groups(&a.module)?;
    let outcomes = run_grad_suite(&groups, a.seed, |o| {
        println!("{:<7} {:<18} {}", o.group, o.name, o.report)
    })?;
    let failed = outcomes.iter().filter(|o| !o.report.passed()).count();
    println!("{} checks, {failed} failed", outcomes.len());
    if failed > 0 {
        return Err(Error::Numeric(format!("{failed} gradient checks failed")));
    }
    Ok(ExitCode::SUCCESS)
}

pub fn synth(a: SynthArgs) -> Result<ExitCode> {
    let cfg = SynthConfig {
        size: a.size,
        seed: a.seed,
        ..Default::default()
    };
    let samples = generate_synthetic(&cfg, a.n)?;
    write_dataset(&a.out, &samples)?;
    let changed: usize = samples.iter().map(|s| s.label.count_ones()).sum();
    let total: usize = samples.iter().map(|s| s.label.len()).sum();
    println!(
        "wrote {} pairs to {} ({:.1}% changed pixels)",
        samples.len(),
        a.out.display(),
        100.0 * changed as f64 / total.max(1) as f64
    );
    Ok(ExitCode::SUCCESS)
}

pub fn ablate(a: AblateArgs) -> Result<ExitCode> {
    let base = resolve_config(&a.overrides)?;
    let data = load_data(&a.source, &base, a.overrides.synth_size)?;
    let rows = run_ablation(&base, &data.train, &data.val, |r| {
        println!(
            "{:<8} concat {:>4}  params {:>8}  {}",
            r.variant.label,
            r.concat_width,
            r.params,
            r.metrics.csv_row()
        )
    })?;
    write_file(&a.out, &ablation_csv(&rows))?;
    println!("wrote {}", a.out.display());
    Ok(ExitCode::SUCCESS)
}
