use std::io::Write;
use std::net::SocketAddr;
use std::path::{Path, PathBuf};

use anyhow::Context;
use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use serde_json::json;
use surrogate_core::data::{self, batch_sequences, build_pairs, random_experiment, ExperimentRecord, CELLS};
use surrogate_core::eval::{eval_windows, evaluate_rollouts, phase_window_errors, shuffle_motors};
use surrogate_core::ga::{run_ga_with, save_ga_outputs};
use surrogate_core::model::{Checkpoint, ModelConfig, Transformer};
use surrogate_core::rl::{save_rl_history, train_controller, ControlState, Controller};
use surrogate_core::train::{save_history, CyclicTrainer};
use surrogate_core::upscale::{save_field, upscale_rollout_with, write_heatmap_png, Field, FieldState};
use surrogate_core::{Error, Mat};
use surrogate_service::{AppState, ServiceConfig};

use crate::config::{MotorPattern, RunConfig};
use crate::{Cli, Command, Failure};

pub fn run(cli: Cli, mut cfg: RunConfig) -> Result<(), Failure> {
    let seed = cli.seed.unwrap_or(0);
    cfg.set_seed(seed);
    match cli.command {
        Command::GenData(a) => gen_data(a, cfg, seed),
        Command::Train(a) => train(a, cfg, seed),
        Command::Eval(a) => eval(a, cfg, seed),
        Command::RunGa(a) => run_ga(a, cfg),
        Command::RunRl(a) => run_rl(a, cfg),
        Command::Upscale(a) => upscale(a, cfg, seed),
        Command::Serve(a) => serve(a, cfg),
    }
}

/// Files written under `--out`, recorded in `manifest.json` with the resolved config.
struct Outputs {
    dir: PathBuf,
    files: Vec<String>,
}

impl Outputs {
    fn new(dir: &Path) -> anyhow::Result<Self> {
        std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
        Ok(Self { dir: dir.to_path_buf(), files: Vec::new() })
    }

    fn path(&mut self, name: &str) -> PathBuf {
        self.files.push(name.to_string());
        self.dir.join(name)
    }

    fn finish(mut self, command: &str, seed: u64, cfg: &impl Serialize) -> anyhow::Result<()> {
        self.files.sort();
        let manifest = json!({
            "command": command,
            "version": env!("CARGO_PKG_VERSION"),
            "seed": seed,
            "config": cfg,
            "files": self.files,
        });
        std::fs::write(self.dir.join("manifest.json"), serde_json::to_vec_pretty(&manifest)?)?;
        Ok(())
    }
}

fn usage(e: Error) -> Failure {
    match e {
        Error::InvalidArgument(m) | Error::OutOfRange(m) => Failure::Usage(m),
        other => Failure::Runtime(other.into()),
    }
}

fn gen_data(a: crate::GenData, mut cfg: RunConfig, seed: u64) -> Result<(), Failure> {
    if let Some(c) = a.count {
        cfg.data.count = c;
    }
    if let Some(s) = a.steps {
        cfg.data.steps = s;
    }
    cfg.data.synth(1).validate().map_err(usage)?;
    let mut out = Outputs::new(&a.out)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for i in 0..cfg.data.count {
        let s = rng.next_u64().max(1);
        let record = random_experiment(&cfg.data.synth(s), &cfg.data.program()).map_err(usage)?;
        data::jsonl::save(&record, out.path(&format!("experiment_{i:03}.jsonl")))?;
    }
    log::info!("wrote {} experiments of {} frames to {}", cfg.data.count, cfg.data.steps, a.out.display());
    out.finish("gen-data", seed, &cfg)?;
    Ok(())
}

/// Every `*.jsonl` file of a directory, in name order.
fn load_dir(dir: &Path) -> anyhow::Result<Vec<(String, ExperimentRecord)>> {
    let mut names: Vec<PathBuf> = std::fs::read_dir(dir)
        .with_context(|| format!("reading {}", dir.display()))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "jsonl"))
        .collect();
    names.sort();
    if names.is_empty() {
        anyhow::bail!("no .jsonl experiments in {}", dir.display());
    }
    names
        .into_iter()
        .map(|p| {
            let name = p.file_name().unwrap_or_default().to_string_lossy().into_owned();
            let rec = data::jsonl::load(&p).with_context(|| format!("loading {}", p.display()))?;
            Ok((name, rec))
        })
        .collect()
}

fn train(a: crate::Train, mut cfg: RunConfig, seed: u64) -> Result<(), Failure> {
    if a.desk {
        cfg.model = ModelConfig::desk();
    }
    let base = match &a.resume {
        Some(p) => {
            let ck = Checkpoint::load(p).with_context(|| format!("loading {}", p.display()))?;
            let keep = ck.config.clone();
            // Architecture comes from the checkpoint; the schedule from config and flags.
            cfg.model = ModelConfig {
                encoder_epochs_per_cycle: cfg.model.encoder_epochs_per_cycle,
                full_epochs_per_cycle: cfg.model.full_epochs_per_cycle,
                n_cycles: cfg.model.n_cycles,
                recon_weight: cfg.model.recon_weight,
                ..keep
            };
            Some(ck)
        }
        None => None,
    };
    let m = &mut cfg.model;
    if let Some(v) = a.d_model {
        m.d_model = v;
    }
    if let Some(v) = a.layers {
        m.n_layers = v;
    }
    if let Some(v) = a.seq_len {
        m.seq_len = v;
    }
    if let Some(v) = a.encoder_epochs {
        m.encoder_epochs_per_cycle = v;
    }
    if let Some(v) = a.full_epochs {
        m.full_epochs_per_cycle = v;
    }
    if let Some(v) = a.cycles {
        m.n_cycles = v;
    }
    if let Some(v) = a.warmup {
        m.warmup_steps = v;
    }
    if let Some(v) = a.batch_size {
        cfg.train.batch_size = v;
    }
    if let Some(v) = a.stride {
        cfg.train.stride = v;
    }
    cfg.model.validate().map_err(usage)?;
    let (model, opt) = match base {
        Some(mut ck) => {
            if (ck.config.d_model, ck.config.n_layers, ck.config.seq_len) != (cfg.model.d_model, cfg.model.n_layers, cfg.model.seq_len) {
                return Err(Failure::Usage("architecture flags cannot change a resumed checkpoint".into()));
            }
            ck.config = cfg.model.clone();
            ck.into_model()?
        }
        None => (Transformer::new(cfg.model.clone(), seed)?, None),
    };
    let records = load_dir(&a.data)?;
    let mut pairs = Vec::new();
    for (_, r) in &records {
        pairs.extend(build_pairs(r, cfg.train.every, cfg.model.seq_len, cfg.train.stride)?);
    }
    let batches = batch_sequences(&pairs, cfg.train.batch_size)?;
    log::info!("{} windows in {} batches from {} experiments", pairs.len(), batches.len(), records.len());
    let mut out = Outputs::new(&a.out)?;
    let mut trainer = CyclicTrainer::new(model, opt, seed);
    let result = trainer.run(&batches, |r| {
        match r.loss_pred {
            Some(p) => log::info!("cycle {} {} epoch {}: pred {p:.5} recon {:.5}", r.cycle, r.phase, r.epoch, r.loss_recon),
            None => log::info!("cycle {} {} epoch {}: recon {:.5}", r.cycle, r.phase, r.epoch, r.loss_recon),
        }
    });
    match result {
        Ok(history) => {
            save_history(out.path("history.csv"), &history)?;
            let (model, opt) = trainer.finish();
            Checkpoint::of(&model, Some(&opt)).save(out.path("model.bin"))?;
            log::info!("trained to step {}", model.train_step());
        }
        Err(Error::TrainingDiverged { step, last_good }) => {
            if let Some(ck) = last_good {
                ck.save(out.path("last_good.bin"))?;
            }
            out.finish("train", seed, &cfg)?;
            return Err(Failure::Runtime(anyhow::anyhow!("training diverged at step {step}")));
        }
        Err(e) => return Err(e.into()),
    }
    out.finish("train", seed, &cfg)?;
    Ok(())
}

#[derive(Serialize)]
struct PredReport {
    phase_window: usize,
    experiments: usize,
    /// Mean over experiments of the phase-window error per cell.
    error: f64,
    per_cell: Vec<f64>,
}

fn eval(a: crate::Eval, cfg: RunConfig, seed: u64) -> Result<(), Failure> {
    let truth = load_dir(&a.data)?;
    let report = match (&a.model, &a.pred) {
        (Some(path), _) => {
            let model = Transformer::load(path).with_context(|| format!("loading {}", path.display()))?;
            let mut windows = Vec::new();
            for (_, r) in &truth {
                windows.extend(eval_windows(r, model.config().seq_len, a.horizon, a.windows)?);
            }
            let rep = evaluate_rollouts(&model, &windows, a.phase_window)?;
            let shuffled = if windows.len() >= 2 {
                let s = evaluate_rollouts(&model, &shuffle_motors(&windows, seed)?, a.phase_window)?;
                Some(s.model_error)
            } else {
                None
            };
            json!({
                "rollouts": rep,
                "ratio_to_zero": rep.ratio_to_zero(),
                "shuffled_motor_error": shuffled,
            })
        }
        (None, Some(dir)) => {
            let preds = load_dir(dir)?;
            let mut per_cell = vec![0.0; CELLS];
            let mut error = 0.0;
            for (name, t) in &truth {
                let (_, p) = preds
                    .iter()
                    .find(|(n, _)| n == name)
                    .ok_or_else(|| anyhow::anyhow!("no prediction for {name} in {}", dir.display()))?;
                let (pm, tm) = (p.chem_matrix(), t.chem_matrix());
                let errs = phase_window_errors(&pm, &tm, a.phase_window)?;
                error += errs.iter().sum::<f64>() / errs.len() as f64;
                for (c, acc) in per_cell.iter_mut().enumerate() {
                    let col = |m: &Mat| Mat::from_fn(m.rows(), 1, |r, _| m.get(r, c));
                    let e = phase_window_errors(&col(&pm), &col(&tm), a.phase_window)?;
                    *acc += e.iter().sum::<f64>() / e.len() as f64;
                }
            }
            let n = truth.len() as f64;
            per_cell.iter_mut().for_each(|v| *v /= n);
            serde_json::to_value(PredReport { phase_window: a.phase_window, experiments: truth.len(), error: error / n, per_cell })?
        }
        (None, None) => return Err(Failure::Usage("eval needs --model or --pred".into())),
    };
    // A closed pipe on stdout is not a failure of the evaluation.
    let _ = writeln!(std::io::stdout().lock(), "{}", serde_json::to_string_pretty(&report)?);
    if let Some(dir) = &a.out {
        let mut out = Outputs::new(dir)?;
        std::fs::write(out.path("eval.json"), serde_json::to_vec_pretty(&report)?)?;
        out.finish("eval", seed, &cfg)?;
    }
    Ok(())
}

fn load_model(path: &Path) -> anyhow::Result<Transformer> {
    let m = Transformer::load(path).with_context(|| format!("loading {}", path.display()))?;
    if !m.is_ready() {
        anyhow::bail!("{} has not finished training", path.display());
    }
    Ok(m)
}

fn run_ga(a: crate::RunGa, mut cfg: RunConfig) -> Result<(), Failure> {
    let g = &mut cfg.ga;
    if let Some(v) = a.pop_size {
        g.pop_size = v;
    }
    if let Some(v) = a.elite {
        g.n_elite = v;
    }
    if let Some(v) = a.generations {
        g.n_generations = v;
    }
    if let Some(v) = a.horizon {
        g.rollout_horizon = v;
    }
    if let Some(v) = a.mutation_rate {
        g.mutation_rate = v;
    }
    cfg.ga.validate().map_err(usage)?;
    let model = load_model(&a.model)?;
    let seed_chem = Mat::zeros(model.config().seq_len, CELLS);
    let result = run_ga_with(&model, &seed_chem, &cfg.ga, false, |s| {
        log::info!("generation {}: best {:.4} mean {:.4} std {:.4}", s.generation, s.best, s.mean, s.std)
    })?;
    let mut out = Outputs::new(&a.out)?;
    out.files.extend(["ga_history.csv".to_string(), "best_genome.json".to_string()]);
    save_ga_outputs(&a.out, &result)?;
    log::info!("best score {:.4}, bits {:?}", result.fitness.score, result.fitness.bits);
    out.finish("run-ga", cfg.ga.seed, &cfg)?;
    Ok(())
}

/// Initial states for controller training.
const RL_STARTS: u64 = 4;

fn run_rl(a: crate::RunRl, mut cfg: RunConfig) -> Result<(), Failure> {
    let r = &mut cfg.rl;
    if let Some(v) = a.objective {
        r.objective = v;
    }
    if let Some(v) = a.episodes {
        r.episodes = v;
    }
    if let Some(v) = a.episode_len {
        r.episode_len = v;
    }
    if let Some(v) = a.hidden {
        r.hidden = v;
    }
    if let Some(v) = a.lr {
        r.lr = v;
    }
    cfg.rl.validate().map_err(usage)?;
    let model = load_model(&a.model)?;
    let l = model.config().seq_len;
    let starts = (0..RL_STARTS)
        .map(|i| ControlState::synthetic(l, cfg.rl.seed.wrapping_add(i)))
        .collect::<surrogate_core::Result<Vec<_>>>()?;
    let (ctrl, history) = train_controller(&model, &cfg.rl, &starts, |ep, mean| log::info!("episode {ep}: mean reward {mean:.4}"))?;
    let mut out = Outputs::new(&a.out)?;
    ctrl.save(out.path("controller.bin"))?;
    save_rl_history(out.path("rl_history.csv"), &history)?;
    out.finish("run-rl", cfg.rl.seed, &cfg)?;
    Ok(())
}

fn upscale(a: crate::Upscale, mut cfg: RunConfig, seed: u64) -> Result<(), Failure> {
    let u = &mut cfg.upscale;
    if let Some(v) = a.n {
        u.n = v;
    }
    if let Some(v) = a.steps {
        u.steps = v;
    }
    if let Some(v) = a.motor_pattern {
        u.motor_pattern = v;
    }
    if let Some(v) = a.motor_speed {
        u.motor_speed = v;
    }
    u.png |= a.png;
    let u = cfg.upscale.clone();
    if !(u.motor_speed.abs() <= 1.0) {
        return Err(Failure::Usage("motor_speed must lie in [-1, 1]".into()));
    }
    let model = load_model(&a.model)?;
    let l = model.config().seq_len;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let speeds: Vec<f64> = match u.motor_pattern {
        MotorPattern::Uniform => vec![u.motor_speed; u.n * u.n],
        MotorPattern::Random => (0..u.n * u.n).map(|_| rng.random_range(-1.0..=1.0) * u.motor_speed).collect(),
    };
    let motors = |len| Field::from_fn(len, u.n, |_, r, c| speeds[r * u.n + c]);
    let state = FieldState::new(motors(l), Field::zeros(l, u.n)).map_err(usage)?;
    let mut out = Outputs::new(&a.out)?;
    let mut pngs = Vec::new();
    let field = upscale_rollout_with(&state, &motors(u.steps), u.steps, &model, |k, frame| {
        if u.png {
            pngs.push((k, frame.to_vec()));
        }
        if (k + 1) % 10 == 0 {
            log::info!("frame {}/{}", k + 1, u.steps);
        }
    })
    .map_err(usage)?;
    save_field(out.path("field.bin"), &field)?;
    for (k, frame) in pngs {
        write_heatmap_png(out.path(&format!("frame_{k:04}.png")), &frame, u.n, u.png_scale)?;
    }
    out.finish("upscale", seed, &cfg)?;
    Ok(())
}

/// `id=path`, or a bare path meaning `default=path`.
fn split_spec(spec: &str) -> (&str, &str) {
    match spec.split_once('=') {
        Some((id, path)) if !id.is_empty() => (id, path),
        _ => ("default", spec),
    }
}

fn serve(a: crate::Serve, mut cfg: RunConfig) -> Result<(), Failure> {
    if let Some(v) = a.host {
        cfg.serve.host = v;
    }
    if let Some(v) = a.port {
        cfg.serve.port = v;
    }
    if let Some(v) = a.workers {
        cfg.serve.workers = v;
    }
    let addr: SocketAddr = format!("{}:{}", cfg.serve.host, cfg.serve.port)
        .parse()
        .map_err(|e| Failure::Usage(format!("listen address: {e}")))?;
    let mut models = Vec::new();
    for spec in &a.models {
        let (id, path) = split_spec(spec);
        models.push((id.to_string(), load_model(Path::new(path))?));
    }
    let mut controllers = Vec::new();
    for spec in &a.controllers {
        let (id, path) = split_spec(spec);
        if !models.iter().any(|(m, _)| m == id) {
            return Err(Failure::Usage(format!("controller for unknown model {id}")));
        }
        let c = Controller::load(path).with_context(|| format!("loading {path}"))?;
        controllers.push((id.to_string(), c));
    }
    let out = Outputs::new(&a.out)?;
    out.finish("serve", 0, &cfg)?;
    let rt = tokio::runtime::Runtime::new()?;
    rt.block_on(async move {
        let state = AppState::new(ServiceConfig { out_dir: a.out.clone(), workers: cfg.serve.workers });
        for (id, m) in models {
            state.add_model(id, m);
        }
        for (id, c) in controllers {
            state.add_controller(id, c);
        }
        log::info!("serving {:?} on http://{addr}", state.model_ids());
        surrogate_service::serve(addr, state).await
    })?;
    Ok(())
}
