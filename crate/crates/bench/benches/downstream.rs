use criterion::{criterion_group, criterion_main, Criterion};
use surrogate_bench::desk_model;
use surrogate_core::data::CELLS;
use surrogate_core::ga::{run_ga, xor_fitness_batch, GAConfig, Genome, PlantedXor, GENES};
use surrogate_core::rl::{controller_features, controller_step_grad, ControlState, Controller, ControllerConfig, ControllerInput, Objective};
use surrogate_core::upscale::{upscale_step, Field, FieldState};
use surrogate_core::Mat;

fn ga(c: &mut Criterion) {
    let m = desk_model();
    let l = m.config().seq_len;
    let cfg = GAConfig { rollout_horizon: 5, ..GAConfig::default() };
    let genomes: Vec<Genome> = (0..4).map(|i| Genome::new(&[0.1 * i as f64; GENES]).unwrap()).collect();
    let seed = Mat::zeros(l, CELLS);
    let mut g = c.benchmark_group("ga");
    g.sample_size(10);
    g.bench_function("fitness/4genomes/h5", |bn| bn.iter(|| xor_fitness_batch(&genomes, &m, &seed, &cfg).unwrap()));
    let planted = PlantedXor { target: Genome::new(&[0.5; GENES]).unwrap(), sigma: 2.0, seq_len: 4 };
    let small = GAConfig { pop_size: 64, n_elite: 6, n_generations: 20, seed: 1, ..GAConfig::default() };
    g.bench_function("planted/pop64/gen20", |bn| bn.iter(|| run_ga(&planted, &Mat::zeros(planted.seq_len, CELLS), &small).unwrap()));
    g.finish();
}

fn rl(c: &mut Criterion) {
    let m = desk_model();
    let state = ControlState::synthetic(m.config().seq_len, 3).unwrap();
    let cfg = ControllerConfig { input: ControllerInput::DecoderHidden, objective: Objective::Maximize, ..ControllerConfig::default() };
    let feats = controller_features(&m, &state, cfg.input).unwrap();
    let ctrl = Controller::new(cfg, feats.len(), 1).unwrap();
    let mut g = c.benchmark_group("rl");
    g.sample_size(10);
    g.bench_function("step_grad/desk", |bn| bn.iter(|| controller_step_grad(&m, &ctrl, &state, &feats, Objective::Maximize).unwrap()));
    g.finish();
}

fn upscale(c: &mut Criterion) {
    let m = desk_model();
    let l = m.config().seq_len;
    let mut g = c.benchmark_group("upscale_step/desk");
    g.sample_size(10);
    for n in [7usize, 15] {
        let state = FieldState::new(Field::filled(l, n, 0.5), Field::zeros(l, n)).unwrap();
        g.bench_function(format!("n{n}"), |bn| bn.iter(|| upscale_step(&state, &m).unwrap()));
    }
    g.finish();
}

criterion_group!(benches, ga, rl, upscale);
criterion_main!(benches);
