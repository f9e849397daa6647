use std::fs;
use std::path::{Path, PathBuf};

use meirl_core::baselines::{
    bc_train, checkpoint_method, ekf_forecast, evaluate_ekf, load_predictor, BcModel,
};
use meirl_core::mdp::{compute_svf, export, sample_trajectory, Policy};
use meirl_core::metrics::{
    cell_points, evaluate, hausdorff, nll, terminal_entropy, EvalConfig, EvalResult, MethodEval,
};
use meirl_core::model::{IrlModel, Method, Predictor, UniformPredictor};
use meirl_core::par::Exec;
use meirl_core::seed;
use meirl_core::synth::{
    generate_dataset, read_dataset, read_manifest, read_record, write_dataset, Demonstration,
    TagFractions,
};
use meirl_core::tensor::checkpoint::Checkpoint;
use meirl_core::trainer::{prepare_examples, train_examples, TrainReport};

use crate::config::{
    self, required, EvalRun, GenerateRun, MethodName, PredictRun, Split, TrainRun,
};
use crate::error::{config, CliError, CliResult};
use crate::{EvalArgs, GenerateArgs, PredictArgs, TrainArgs};

const STREAM_PREDICT_SAMPLES: u64 = 41;

fn write(path: &Path, bytes: impl AsRef<[u8]>) -> CliResult<()> {
    fs::write(path, bytes)
        .map_err(|e| CliError::Runtime(format!("cannot write {}: {e}", path.display())))
}

fn existing_dir(p: &Path, what: &str) -> CliResult<()> {
    if p.is_dir() {
        Ok(())
    } else {
        Err(config(format!("{what} {} does not exist", p.display())))
    }
}

fn existing_file(p: &Path, what: &str) -> CliResult<()> {
    if p.is_file() {
        Ok(())
    } else {
        Err(config(format!("{what} {} does not exist", p.display())))
    }
}

fn load_checkpoint(p: &Path) -> CliResult<Checkpoint> {
    existing_file(p, "checkpoint")?;
    Ok(Checkpoint::load(p)?)
}

pub fn generate(a: GenerateArgs) -> CliResult<()> {
    let mut run: GenerateRun = config::load(a.config.as_deref())?;
    let d = &mut run.dataset;
    if a.out.is_some() {
        run.out = a.out;
    }
    if let Some(v) = a.seed {
        d.seed = v;
    }
    if let Some(v) = a.demos {
        d.demos = v;
    }
    if let Some(v) = a.split {
        d.split = v;
    }
    if let Some(v) = a.rows {
        d.world.rows = v;
    }
    if let Some(v) = a.cols {
        d.world.cols = v;
    }
    if let Some(v) = a.resolution {
        d.world.resolution = v;
    }
    if let Some(v) = a.intersections {
        d.world.intersections = v;
    }
    if let Some(v) = a.trails {
        d.world.trail_count = v;
    }
    if let Some(v) = a.horizon_min {
        d.horizon_min = v;
    }
    if let Some(v) = a.horizon_max {
        d.horizon_max = v;
    }
    match a.balance.as_deref() {
        None => {}
        Some("equal") => d.balance = Some(TagFractions::equal()),
        Some("none") => d.balance = None,
        Some(other) => {
            return Err(config(format!(
                "--balance takes 'equal' or 'none', got '{other}'"
            )))
        }
    }
    let out = required(&run.out, "output directory (--out)")?.to_path_buf();
    run.dataset.validate()?;
    config::output_dir(&out)?;

    let data = generate_dataset(&run.dataset, Exec::Parallel)?;
    let manifest = write_dataset(&out, &data, Some(&run.dataset))?;
    config::save(&run, &out)?;
    println!(
        "wrote {} train / {} test records to {}",
        data.train.len(),
        data.test.len(),
        out.display()
    );
    for (split, tags) in &manifest.tags {
        let parts: Vec<String> = tags.iter().map(|(t, n)| format!("{t} {n}")).collect();
        println!("  {split}: {}", parts.join(", "));
    }
    Ok(())
}

fn save_checkpoint(ck: &Checkpoint, path: &Path) -> meirl_core::Result<()> {
    ck.save(path)
}

pub fn train(a: TrainArgs) -> CliResult<()> {
    let mut run: TrainRun = config::load(a.config.as_deref())?;
    if a.data.is_some() {
        run.data = a.data;
    }
    if a.out.is_some() {
        run.out = a.out;
    }
    if let Some(m) = a.method {
        run.method = m;
    }
    if a.resume.is_some() {
        run.resume = a.resume;
    }
    let (t, b) = (&mut run.train, &mut run.bc);
    if let Some(v) = a.iterations {
        t.iterations = v;
        b.iterations = v;
    }
    if let Some(v) = a.batch_size {
        t.batch_size = v;
        b.batch_size = v;
    }
    if let Some(v) = a.learning_rate {
        t.learning_rate = v;
        b.learning_rate = v;
    }
    if let Some(v) = a.seed {
        t.seed = v;
        b.seed = v;
    }
    if let Some(v) = a.checkpoint_every {
        t.checkpoint_every = v;
    }
    if a.no_augment {
        t.augment_rotations = false;
        b.augment_rotations = false;
    }
    match run.method {
        MethodName::Ours => run.train.use_kinematics = true,
        MethodName::IrlNokin => run.train.use_kinematics = false,
        MethodName::Bc => {}
        m => {
            return Err(config(format!(
                "{} has nothing to train; use ours, irl_nokin or bc",
                m.as_str()
            )))
        }
    }
    let data = required(&run.data, "dataset directory (--data)")?.to_path_buf();
    let out = required(&run.out, "output directory (--out)")?.to_path_buf();
    existing_dir(&data, "dataset directory")?;
    if let Some(r) = &run.resume {
        existing_file(r, "checkpoint")?;
        if run.method == MethodName::Bc {
            return Err(config("resuming is supported for the IRL methods only"));
        }
    }
    match run.method {
        MethodName::Bc => run.bc.validate()?,
        _ => run.train.validate()?,
    }
    read_manifest(&data).map_err(|e| config(format!("unusable dataset: {e}")))?;
    config::output_dir(&out)?;

    let (_, dataset) = read_dataset(&data)?;
    if dataset.train.is_empty() {
        return Err(config("dataset has an empty train split"));
    }
    config::save(&run, &out)?;
    if run.method == MethodName::Bc {
        let (model, report) = bc_train(&dataset.train, &run.bc)?;
        save_checkpoint(
            &model.to_checkpoint(report.best_iteration),
            &out.join("model.ckpt"),
        )?;
        let mut csv = String::from("iteration,train_loss,val_nll\n");
        for r in &report.rows {
            let val = r.val_nll.map_or(String::new(), |v| v.to_string());
            csv.push_str(&format!("{},{},{}\n", r.iteration, r.train_loss, val));
        }
        write(&out.join("bc_report.csv"), csv)?;
        println!(
            "bc: {} iterations, kept iteration {}",
            report.rows.len(),
            report.best_iteration
        );
        return Ok(());
    }

    let cfg = &run.train;
    let (mut net, start) = match &run.resume {
        Some(p) => {
            let ck = load_checkpoint(p)?;
            let model = IrlModel::from_checkpoint(&ck)?;
            let expected = cfg.method();
            if model.meta.method != expected {
                return Err(config(format!(
                    "checkpoint holds a {} model, not {}",
                    model.meta.method.as_str(),
                    expected.as_str()
                )));
            }
            (model.net, ck.iteration)
        }
        None => (cfg.init_network()?, 0),
    };
    let examples = prepare_examples(&dataset.train, cfg)?;
    let ck_dir = out.join("checkpoints");
    config::output_dir(&ck_dir)?;
    let report: TrainReport = train_examples(&mut net, &examples, cfg, start, |i, net| {
        let model = IrlModel::new(net.clone(), cfg.meta(i))?;
        save_checkpoint(
            &model.to_checkpoint(i),
            &ck_dir.join(format!("iter_{i:06}.ckpt")),
        )
    })?;
    let last = start + cfg.iterations as u64;
    let model = IrlModel::new(net, cfg.meta(last))?;
    save_checkpoint(&model.to_checkpoint(last), &out.join("model.ckpt"))?;
    write(&out.join("train_report.csv"), report.to_csv())?;
    write(&out.join("timings.json"), report.timings_json() + "\n")?;
    if let (Some(first), Some(end)) = (report.rows.first(), report.rows.last()) {
        println!(
            "{}: iterations {}..={}, nll {:.4} -> {:.4}, svf gap {:.3} -> {:.3}",
            run.method.as_str(),
            first.iteration,
            end.iteration,
            first.nll,
            end.nll,
            first.svf_gap,
            end.svf_gap
        );
    } else {
        println!(
            "{}: no iterations run, saved the initial model",
            run.method.as_str()
        );
    }
    Ok(())
}

fn method_of_checkpoint(ck: &Checkpoint) -> CliResult<MethodName> {
    Ok(match checkpoint_method(ck)? {
        Method::Ours => MethodName::Ours,
        Method::IrlNokin => MethodName::IrlNokin,
        Method::Bc => MethodName::Bc,
    })
}

fn pick_record(data: &Path, split: Split, index: usize) -> CliResult<(PathBuf, Demonstration)> {
    let m = read_manifest(data).map_err(|e| config(format!("unusable dataset: {e}")))?;
    let list = match split {
        Split::Train => &m.train,
        Split::Test => &m.test,
    };
    let entry = list.get(index).ok_or_else(|| {
        config(format!(
            "record index {index} out of range; the split has {} records",
            list.len()
        ))
    })?;
    let p = data.join(&entry.file);
    let d = read_record(&p)?;
    Ok((p, d))
}

fn policy_outputs(
    out: &Path,
    policy: &Policy,
    demo: &Demonstration,
    run: &PredictRun,
) -> CliResult<serde_json::Value> {
    let h = demo.horizon();
    let svf = compute_svf(policy, demo.start(), h)?;
    export::write_csv(&svf.counts, &out.join("svf.csv"))?;
    export::write_pgm(&svf.counts, &out.join("svf.pgm"))?;
    let mut csv = String::from("sample,step,row,col\n");
    for k in 0..run.samples {
        let s = seed::derive(run.seed, STREAM_PREDICT_SAMPLES, k as u64);
        for (t, c) in sample_trajectory(policy, demo.start(), h, s)?
            .iter()
            .enumerate()
        {
            csv.push_str(&format!("{k},{t},{},{}\n", c.row, c.col));
        }
    }
    write(&out.join("samples.csv"), csv)?;
    let entropy = terminal_entropy(policy, demo.start(), h - 1)?;
    let demo_nll = nll(policy, demo)?;
    Ok(serde_json::json!({
        "horizon": h,
        "svf_mass": svf.mass(),
        "terminal_entropy": entropy,
        "nll": if demo_nll.is_finite() { serde_json::json!(demo_nll) } else { serde_json::json!("inf") },
        "samples": run.samples,
    }))
}

pub fn predict(a: PredictArgs) -> CliResult<()> {
    let mut run: PredictRun = config::load(a.config.as_deref())?;
    if a.data.is_some() {
        run.data = a.data;
    }
    if a.out.is_some() {
        run.out = a.out;
    }
    if a.checkpoint.is_some() {
        run.checkpoint = a.checkpoint;
    }
    if a.method.is_some() {
        run.method = a.method;
    }
    if let Some(v) = a.split {
        run.split = v;
    }
    if let Some(v) = a.index {
        run.index = v;
    }
    if let Some(v) = a.samples {
        run.samples = v;
    }
    if let Some(v) = a.seed {
        run.seed = v;
    }
    run.zero_lidar |= a.zero_lidar;

    let data = required(&run.data, "dataset directory (--data)")?.to_path_buf();
    let out = required(&run.out, "output directory (--out)")?.to_path_buf();
    existing_dir(&data, "dataset directory")?;
    let ck = match &run.checkpoint {
        Some(p) => Some(load_checkpoint(p)?),
        None => None,
    };
    let method = match (&ck, run.method) {
        (Some(ck), m) => {
            let found = method_of_checkpoint(ck)?;
            if let Some(m) = m.filter(|&m| m != found) {
                return Err(config(format!(
                    "--method {} does not match the checkpoint's {}",
                    m.as_str(),
                    found.as_str()
                )));
            }
            found
        }
        (None, Some(m)) if !m.learned() => m,
        (None, Some(m)) => {
            return Err(config(format!("{} needs --checkpoint", m.as_str())));
        }
        (None, None) => return Err(config("give --checkpoint or --method ekf|random")),
    };
    run.method = Some(method);
    let (record, mut demo) = pick_record(&data, run.split, run.index)?;
    if run.zero_lidar {
        demo.world = demo.world.with_constant_channels();
    }
    config::output_dir(&out)?;
    config::save(&run, &out)?;

    let mut summary = serde_json::json!({
        "method": method.as_str(),
        "record": record.display().to_string(),
        "start": [demo.start().row, demo.start().col],
        "zero_lidar": run.zero_lidar,
    });
    let extra = match method {
        MethodName::Ekf => {
            let path = ekf_forecast(&demo, &run.ekf)?;
            let mut csv = String::from("step,row,col\n");
            for (t, c) in path.iter().enumerate() {
                csv.push_str(&format!("{t},{},{}\n", c.row, c.col));
            }
            write(&out.join("ekf_path.csv"), csv)?;
            let hd = hausdorff(
                &cell_points(&demo.world, &demo.future),
                &cell_points(&demo.world, &path),
            )?;
            serde_json::json!({"horizon": demo.horizon(), "hd": hd})
        }
        MethodName::Random => policy_outputs(&out, &UniformPredictor.policy(&demo)?, &demo, &run)?,
        MethodName::Bc => {
            let model = BcModel::from_checkpoint(ck.as_ref().expect("checked above"))?;
            policy_outputs(&out, &model.policy(&demo)?, &demo, &run)?
        }
        MethodName::Ours | MethodName::IrlNokin => {
            let model = IrlModel::from_checkpoint(ck.as_ref().expect("checked above"))?;
            let reward = model.reward(&demo)?;
            export::write_csv(&reward, &out.join("reward.csv"))?;
            export::write_pgm(&reward, &out.join("reward.pgm"))?;
            policy_outputs(&out, &model.policy(&demo)?, &demo, &run)?
        }
    };
    if let (Some(s), Some(e)) = (summary.as_object_mut(), extra.as_object()) {
        s.extend(e.clone());
    }
    let text = serde_json::to_string_pretty(&summary).expect("summary serializes");
    println!("{text}");
    write(&out.join("summary.json"), text + "\n")
}

pub fn eval(a: EvalArgs) -> CliResult<()> {
    let mut run: EvalRun = config::load(a.config.as_deref())?;
    if a.data.is_some() {
        run.data = a.data;
    }
    if a.out.is_some() {
        run.out = a.out;
    }
    if let Some(m) = a.methods {
        run.methods = m;
    }
    for spec in &a.checkpoints {
        let (m, p) = spec
            .split_once('=')
            .ok_or_else(|| config(format!("--checkpoint expects METHOD=PATH, got '{spec}'")))?;
        run.checkpoints
            .insert(MethodName::parse(m)?, PathBuf::from(p));
    }
    if let Some(v) = a.samples {
        run.samples = v;
    }
    if let Some(v) = a.seed {
        run.seed = v;
    }
    run.zero_lidar |= a.zero_lidar;
    run.methods.sort();
    run.methods.dedup();
    if run.methods.is_empty() {
        return Err(config("no methods to evaluate"));
    }
    if run.samples == 0 {
        return Err(config("--samples must be at least 1"));
    }

    let data = required(&run.data, "dataset directory (--data)")?.to_path_buf();
    let out = required(&run.out, "output directory (--out)")?.to_path_buf();
    existing_dir(&data, "dataset directory")?;
    read_manifest(&data).map_err(|e| config(format!("unusable dataset: {e}")))?;
    // every missing artifact is reported at once
    let missing: Vec<String> = run
        .methods
        .iter()
        .filter(|m| m.learned())
        .filter_map(|m| match run.checkpoints.get(m) {
            None => Some(format!("{}: no checkpoint given", m.as_str())),
            Some(p) if !p.is_file() => Some(format!("{}: {} not found", m.as_str(), p.display())),
            Some(_) => None,
        })
        .collect();
    if !missing.is_empty() {
        return Err(config(format!(
            "missing method artifacts:\n  {}",
            missing.join("\n  ")
        )));
    }
    let mut predictors: Vec<(MethodName, Box<dyn Predictor>)> = Vec::new();
    for &m in run.methods.iter().filter(|m| m.learned()) {
        let ck = load_checkpoint(&run.checkpoints[&m])?;
        let found = method_of_checkpoint(&ck)?;
        if found != m {
            return Err(config(format!(
                "checkpoint for {} holds a {} model",
                m.as_str(),
                found.as_str()
            )));
        }
        predictors.push((m, load_predictor(&ck)?));
    }
    config::output_dir(&out)?;
    config::save(&run, &out)?;

    let (_, dataset) = read_dataset(&data)?;
    let mut test = dataset.test;
    if test.is_empty() {
        return Err(config("dataset has an empty test split"));
    }
    if run.zero_lidar {
        for d in &mut test {
            d.world = d.world.with_constant_channels();
        }
    }
    let cfg = EvalConfig {
        samples: run.samples,
        seed: run.seed,
        exec: Exec::Parallel,
    };
    let mut result = EvalResult::default();
    for &m in &run.methods {
        let me: MethodEval = match m {
            MethodName::Ekf => evaluate_ekf(&test, &run.ekf, Exec::Parallel)?,
            MethodName::Random => evaluate(m.as_str(), &UniformPredictor, &test, &cfg)?,
            _ => {
                let p = &predictors.iter().find(|(n, _)| *n == m).expect("loaded").1;
                evaluate(m.as_str(), p.as_ref(), &test, &cfg)?
            }
        };
        result.methods.push(me);
    }
    write(&out.join("summary.csv"), result.summary_csv())?;
    write(&out.join("per_demo.csv"), result.per_demo_csv())?;
    write(&out.join("summary.json"), result.summary_json() + "\n")?;
    println!(
        "{:<10} {:>10} {:>10} {:>10}",
        "method", "nll", "hd", "entropy"
    );
    for r in result.summaries() {
        let f = |v: Option<f64>| v.map_or("N.A.".to_string(), |x| format!("{x:.4}"));
        println!(
            "{:<10} {:>10} {:>10.4} {:>10}",
            r.method,
            f(r.nll.map(|s| s.mean)),
            r.hd.mean,
            f(r.entropy.map(|s| s.mean))
        );
    }
    Ok(())
}
