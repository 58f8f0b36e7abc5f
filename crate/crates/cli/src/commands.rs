use std::path::Path;
use std::time::{Duration, Instant};

use focus_core::aggregator::normal_init;
use focus_core::config::apply_overrides;
use focus_core::dataio::convert::convert_directory;
use focus_core::dataio::{generate_synthetic, load_dataset, read_bag, read_prompts};
use focus_core::metrics::argmax;
use focus_core::numerics::{grad_check_with, GradCheckOptions};
use focus_core::pipeline::{compress_bag, stage1};
use focus_core::prioritize::prioritize;
use focus_core::redundancy::{redundancy_keep, redundancy_keep_par};
use focus_core::rng::rng_from_seed;
use focus_core::seqcompress::{compress_sequential, StageSchedule};
use focus_core::trainer::{predict, prepare_stage1, METRIC_NAMES};
use focus_core::{
    run_ablation, run_experiment_with_model, Checkpoint, Dataset, EvalBatch, FeatureBag, FocusModel, Metrics,
    PromptSet, RunConfig, ScoreProjection, Split, SynthSpec, Tensor2,
};

use crate::error::{require_path, CliError, CliResult};
use crate::output::{write_file, RunDir};
use crate::plot::{grouped_bars, png_bytes};
use crate::ConfigArgs;

fn read_text(path: &Path, what: &str) -> CliResult<String> {
    require_path(path, what)?;
    std::fs::read_to_string(path).map_err(|e| CliError::runtime(format!("cannot read {}: {e}", path.display())))
}

/// Resolves `--config` and `--set` into a validated configuration.
pub fn load_config(args: &ConfigArgs) -> CliResult<RunConfig> {
    let base = match &args.config {
        Some(p) => RunConfig::from_json(&read_text(p, "config")?)
            .map_err(|e| CliError::config(format!("{}: {e}", p.display())))?,
        None => RunConfig::default(),
    };
    let cfg = base.with_overrides(&args.overrides)?;
    cfg.validate()?;
    Ok(cfg)
}

fn load(manifest: &Path) -> CliResult<Dataset> {
    require_path(manifest, "manifest")?;
    Ok(load_dataset(manifest)?)
}

fn config_json(cfg: &RunConfig) -> String {
    cfg.to_json_pretty() + "\n"
}

fn class_names(n: usize) -> Vec<String> {
    (0..n).map(|c| format!("class{c}")).collect()
}

pub fn synth(out: &Path, spec_path: Option<&Path>, overrides: &[String]) -> CliResult<()> {
    let base: SynthSpec = match spec_path {
        Some(p) => serde_json::from_str(&read_text(p, "spec")?)
            .map_err(|e| CliError::config(format!("{}: {e}", p.display())))?,
        None => SynthSpec::default(),
    };
    let spec = apply_overrides(&base, overrides)?;
    spec.validate()?;
    let data = generate_synthetic(&spec)?;
    let manifest = data.write(out)?;
    let spec_json = serde_json::to_string_pretty(&spec).expect("spec serializes") + "\n";
    RunDir::create(out)?.write("synth.json", spec_json)?;
    println!("{}", manifest.display());
    Ok(())
}

fn print_summary(summary: &std::collections::BTreeMap<String, focus_core::MeanStd>) {
    for m in METRIC_NAMES {
        println!("{m:<13} {}", summary[m]);
    }
}

pub fn train(manifest: &Path, out: &Path, args: &ConfigArgs) -> CliResult<()> {
    let cfg = load_config(args)?;
    let dataset = load(manifest)?;
    let (report, model) = run_experiment_with_model(&dataset, &cfg)?;
    let t1 = dataset.prompts.as_ref().map_or(0, |p| p.knowledge.rows());

    let dir = RunDir::create(out)?;
    dir.write("config.json", config_json(&cfg))?;
    dir.write("report.json", report.to_json())?;
    dir.write("report.csv", report.to_csv())?;
    let groups: Vec<Vec<f64>> = report
        .folds
        .iter()
        .map(|f| vec![f.metrics.balanced_acc, f.metrics.auc, f.metrics.f1])
        .collect();
    dir.write("folds.png", png_bytes(&grouped_bars(&groups)))?;
    dir.write("checkpoint.focp", Checkpoint::from_model(&model, t1).encode())?;
    print_summary(&report.summary);
    Ok(())
}

pub fn eval(manifest: &Path, checkpoint: &Path, out: &Path, args: &ConfigArgs) -> CliResult<()> {
    let cfg = load_config(args)?;
    let dataset = load(manifest)?;
    require_path(checkpoint, "checkpoint")?;
    let ck = Checkpoint::load(checkpoint)?;
    let (d, s) = (dataset.manifest.d, dataset.num_classes());
    if ck.header.d as usize != d || ck.header.classes as usize != s {
        return Err(CliError::config(format!(
            "checkpoint is for d = {}, {} classes; manifest has d = {d}, {s} classes",
            ck.header.d, ck.header.classes
        )));
    }
    let mut model = FocusModel::new(&cfg, d, s, cfg.seed)?;
    ck.apply(&mut model)?;

    let test = dataset.manifest.indices_in(Split::Test);
    if test.is_empty() {
        return Err(CliError::config("the manifest has no test entries"));
    }
    let plans = prepare_stage1(&dataset, &cfg)?;
    let out_rows = predict(&model, &dataset, &plans, &test)?;
    let probs: Vec<Vec<f64>> = out_rows.into_iter().map(|(p, _)| p).collect();
    let labels: Vec<usize> = test.iter().map(|&i| dataset.manifest.bags[i].label).collect();
    let predictions: Vec<serde_json::Value> = test
        .iter()
        .zip(&probs)
        .map(|(&i, p)| {
            serde_json::json!({
                "id": dataset.bags[i].id,
                "label": dataset.manifest.bags[i].label,
                "predicted": argmax(p),
                "probs": p,
            })
        })
        .collect();
    let metrics = Metrics::compute(&EvalBatch::new(probs, labels, s)?)?;

    let dir = RunDir::create(out)?;
    dir.write("config.json", config_json(&cfg))?;
    let doc = serde_json::json!({ "metrics": metrics, "predictions": predictions });
    dir.write("eval.json", serde_json::to_string_pretty(&doc).expect("serializes") + "\n")?;
    dir.write(
        "eval.png",
        png_bytes(&grouped_bars(&[vec![metrics.balanced_acc, metrics.auc, metrics.f1]])),
    )?;
    println!(
        "balanced_acc {:.3}  auc {:.3}  f1 {:.3}",
        metrics.balanced_acc, metrics.auc, metrics.f1
    );
    Ok(())
}

/// Without a checkpoint, prioritization scores against the knowledge prompts
/// alone with identity projections.
pub fn compress(
    bag_path: &Path,
    prompts: Option<&Path>,
    checkpoint: Option<&Path>,
    out: &Path,
    args: &ConfigArgs,
) -> CliResult<()> {
    let cfg = load_config(args)?;
    require_path(bag_path, "bag")?;
    let bag = read_bag(bag_path)?;
    let trace = if !cfg.ablation.kavtc {
        compress_bag(&bag, None, &cfg)?.1
    } else {
        let p = prompts.ok_or_else(|| CliError::usage("prioritization is enabled; pass --prompts"))?;
        require_path(p, "prompts")?;
        match checkpoint {
            Some(c) => {
                require_path(c, "checkpoint")?;
                let ck = Checkpoint::load(c)?;
                let s = ck.header.classes as usize;
                let ps = read_prompts(p, class_names(s))?;
                let mut model = FocusModel::new(&cfg, bag.dim(), s, cfg.seed)?;
                ck.apply(&mut model)?;
                model.compress(&stage1(&bag, &cfg)?, Some(&ps))?.1
            }
            None => {
                if cfg.score_projection == ScoreProjection::SharedHead {
                    return Err(CliError::usage("score_projection = shared_head needs --checkpoint"));
                }
                let knowledge = read_prompts(p, Vec::new())?.knowledge;
                let eye = Tensor2::identity(bag.dim());
                compress_bag(&bag, Some((&knowledge, &eye, &eye)), &cfg)?.1
            }
        }
    };
    trace.validate()?;
    let json = serde_json::to_string_pretty(&trace).expect("trace serializes") + "\n";
    write_file(out, json)?;
    for r in &trace.stage_records {
        println!("{:<24} {:>7} -> {:>7}  ratio {:.3}", r.stage_name, r.input_len, r.retained_len, r.ratio);
    }
    Ok(())
}

pub fn ablate(manifest: &Path, out: &Path, args: &ConfigArgs) -> CliResult<()> {
    let cfg = load_config(args)?;
    let dataset = load(manifest)?;
    let table = run_ablation(&dataset, &cfg)?;

    let dir = RunDir::create(out)?;
    dir.write("config.json", config_json(&cfg))?;
    dir.write("ablation.json", table.to_json())?;
    dir.write("ablation.csv", table.to_csv())?;
    // One group per fold, one bar per variant.
    let per_variant: Vec<Vec<f64>> = table.rows.iter().map(|r| r.report.per_fold("balanced_acc")).collect();
    let groups: Vec<Vec<f64>> = (0..cfg.n_folds)
        .map(|f| per_variant.iter().map(|v| v[f]).collect())
        .collect();
    dir.write("ablation.png", png_bytes(&grouped_bars(&groups)))?;
    print!("{}", table.to_csv());
    Ok(())
}

fn best_of<T>(repeats: usize, mut f: impl FnMut() -> CliResult<T>) -> CliResult<(Duration, T)> {
    let mut best = Duration::MAX;
    let mut last = None;
    for _ in 0..repeats.max(1) {
        let t = Instant::now();
        let v = f()?;
        best = best.min(t.elapsed());
        last = Some(v);
    }
    Ok((best, last.expect("at least one repeat")))
}

pub fn bench(sizes: &[usize], dim: usize, repeats: usize, out: Option<&Path>, args: &ConfigArgs) -> CliResult<()> {
    let cfg = load_config(args)?;
    let schedule = StageSchedule::new(cfg.theta_base, cfg.delta_theta, cfg.n_stages)?;
    let single = rayon::ThreadPoolBuilder::new()
        .num_threads(1)
        .build()
        .map_err(|e| CliError::runtime(format!("thread pool: {e}")))?;
    let threads = rayon::current_num_threads();
    let mut csv = String::from("n,d,stage,mode,threads,seconds\n");
    let mut row = |n: usize, stage: &str, mode: &str, t: usize, secs: Duration| {
        let line = format!("{n},{dim},{stage},{mode},{t},{:.6}\n", secs.as_secs_f64());
        print!("{line}");
        csv += &line;
    };
    for &n in sizes {
        let mut rng = rng_from_seed(cfg.seed);
        let bag = FeatureBag::from_features("bench", normal_init(n, dim, 1.0, &mut rng).frozen(), None)?;
        let prompts = normal_init(5, dim, 1.0, &mut rng).frozen();
        let eye = Tensor2::identity(dim);

        let (t, _) = best_of(repeats, || single.install(|| Ok(redundancy_keep(bag.features(), cfg.w)?)))?;
        row(n, "global_redundancy", "single", 1, t);
        let (t, _) = best_of(repeats, || Ok(redundancy_keep_par(bag.features(), cfg.w)?))?;
        row(n, "global_redundancy", "parallel", threads, t);
        let (t, (kept, _)) = best_of(repeats, || Ok(prioritize(&bag, &prompts, &eye, &eye, cfg.gamma, cfg.m_max)?))?;
        row(n, "language_prioritization", "single", 1, t);
        let (t, _) = best_of(repeats, || Ok(compress_sequential(&kept, &schedule)?))?;
        row(n, "sequential", "single", 1, t);
    }
    if let Some(path) = out {
        write_file(path, csv)?;
    }
    Ok(())
}

pub fn gradcheck(
    tokens: usize,
    dim: usize,
    classes: usize,
    tolerance: f64,
    seed: u64,
    out: Option<&Path>,
    args: &ConfigArgs,
) -> CliResult<()> {
    let cfg = load_config(args)?;
    if tokens == 0 || dim == 0 || classes < 2 {
        return Err(CliError::usage("need tokens ≥ 1, dim ≥ 1 and classes ≥ 2"));
    }
    let mut rng = rng_from_seed(seed);
    let knowledge = normal_init(classes, dim, 1.0, &mut rng).frozen();
    let prompts = PromptSet::knowledge_only(knowledge, class_names(classes))?;
    let bag = FeatureBag::from_features("gradcheck", normal_init(tokens, dim, 1.0, &mut rng).frozen(), None)?;
    let mut model = FocusModel::new(&cfg, dim, classes, seed)?;
    let p = cfg.ablation.prompt.then_some(&prompts);
    let s1 = stage1(&bag, &cfg)?;
    let label = (seed % classes as u64) as usize;
    let mut params = model.params.clone();
    let opts = GradCheckOptions {
        tolerance,
        ..Default::default()
    };
    let report = grad_check_with(&mut params, opts, |ps| {
        std::mem::swap(&mut model.params, ps);
        let loss = model
            .compress(&s1, p)
            .and_then(|(c, _)| model.loss_and_backward(c.features(), p, label))
            .map(|r| r.0);
        std::mem::swap(&mut model.params, ps);
        loss
    })?;
    let json = serde_json::to_string_pretty(&report).expect("report serializes") + "\n";
    print!("{json}");
    if let Some(path) = out {
        write_file(path, &json)?;
    }
    if report.passed {
        Ok(())
    } else {
        let names: Vec<&str> = report.failures().map(|t| t.name.as_str()).collect();
        Err(CliError::runtime(format!("gradient check failed for {names:?}")))
    }
}

pub fn convert(input: &Path, out: &Path, split: &[f64], seed: u64) -> CliResult<()> {
    require_path(input, "input directory")?;
    let split: [f64; 3] = split
        .try_into()
        .map_err(|_| CliError::usage(format!("--split needs three proportions, got {split:?}")))?;
    let manifest = convert_directory(input, out, split, seed)?;
    println!("{}", manifest.display());
    Ok(())
}
