//! Genetic search for motor layouts that make the surrogate behave like an
//! XOR gate: rows 1 and 5 carry the inputs, the centre cell is the output and
//! the 15 motors of rows 2-4 are the genome.

use std::io::Write;
use std::path::Path;

use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{MotorFrame, CELLS, CENTRE, GRID};
use crate::error::{Error, Result};
use crate::rollout::{hold_motors, rollout_batch, WorldModel};
use crate::tensor::Mat;

pub const GENES: usize = 15;

/// Motor speeds for rows 2-4, row-major.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f64>", into = "Vec<f64>")]
pub struct Genome([f64; GENES]);

impl Genome {
    pub fn new(genes: &[f64]) -> Result<Self> {
        if genes.len() != GENES {
            return Err(Error::InvalidData(format!("genome needs {GENES} genes, got {}", genes.len())));
        }
        if let Some((i, g)) = genes.iter().enumerate().find(|(_, g)| !(g.abs() <= 1.0)) {
            return Err(Error::OutOfRange(format!("gene {i} = {g} outside [-1, 1]")));
        }
        let mut a = [0.0; GENES];
        a.copy_from_slice(genes);
        Ok(Self(a))
    }

    pub fn random(rng: &mut impl Rng) -> Self {
        Self(std::array::from_fn(|_| rng.random_range(-1.0..=1.0)))
    }

    pub fn genes(&self) -> &[f64; GENES] {
        &self.0
    }
}

impl TryFrom<Vec<f64>> for Genome {
    type Error = Error;
    fn try_from(v: Vec<f64>) -> Result<Self> {
        Self::new(&v)
    }
}

impl From<Genome> for Vec<f64> {
    fn from(g: Genome) -> Self {
        g.0.to_vec()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GAConfig {
    pub pop_size: usize,
    pub n_elite: usize,
    pub n_generations: usize,
    pub mutation_rate: f64,
    pub rollout_horizon: usize,
    /// Speed given to all five motors of an input row whose bit is 1.
    pub input_speed: f64,
    pub seed: u64,
}

impl Default for GAConfig {
    fn default() -> Self {
        Self { pop_size: 512, n_elite: 50, n_generations: 100, mutation_rate: 0.05, rollout_horizon: 150, input_speed: 1.0, seed: 0 }
    }
}

impl GAConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidArgument(m.to_string()));
        if self.pop_size < 2 || self.n_elite >= self.pop_size {
            return bad("need at least two individuals and fewer elites than the population");
        }
        if self.n_generations < 1 || self.rollout_horizon < 1 {
            return bad("generations and rollout horizon must be at least 1");
        }
        if !(0.0..=1.0).contains(&self.mutation_rate) {
            return bad("mutation_rate must lie in [0, 1]");
        }
        if !(self.input_speed.abs() <= 1.0) {
            return bad("input_speed must lie in [-1, 1]");
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct XorCase {
    pub a: u8,
    pub b: u8,
}

impl XorCase {
    /// The truth table in the order (0,0), (0,1), (1,0), (1,1).
    pub const ALL: [XorCase; 4] = [XorCase { a: 0, b: 0 }, XorCase { a: 0, b: 1 }, XorCase { a: 1, b: 0 }, XorCase { a: 1, b: 1 }];

    pub fn target(&self) -> u8 {
        self.a ^ self.b
    }
}

pub fn encode_case_motors(genome: &Genome, case: XorCase) -> MotorFrame {
    encode_case_motors_at(genome, case, 1.0)
}

/// Row 1 = `a · speed`, rows 2-4 = genes, row 5 = `b · speed`.
pub fn encode_case_motors_at(genome: &Genome, case: XorCase, speed: f64) -> MotorFrame {
    let mut m = [0.0; CELLS];
    m[..GRID].fill(case.a as f64 * speed);
    m[GRID..GRID + GENES].copy_from_slice(genome.genes());
    m[GRID + GENES..].fill(case.b as f64 * speed);
    MotorFrame::clamped(&m).expect("25 finite speeds")
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Fitness {
    /// Sum over the four cases of the signed margin.
    pub score: f64,
    pub bits: [u8; 4],
    /// Centre mean minus the mean of the other 24 cells, per case.
    pub deltas: [f64; 4],
}

impl Fitness {
    fn from_deltas(deltas: [f64; 4]) -> Self {
        let mut score = 0.0;
        let mut bits = [0u8; 4];
        for (i, (&d, case)) in deltas.iter().zip(XorCase::ALL).enumerate() {
            bits[i] = u8::from(d > 0.0);
            score += if case.target() == 1 { d } else { -d };
        }
        Self { score, bits, deltas }
    }

    pub fn correct_bits(&self) -> usize {
        self.bits.iter().zip(XorCase::ALL).filter(|(b, c)| **b == c.target()).count()
    }
}

/// Centre-minus-rest over a rollout.
pub fn centre_delta(rollout: &Mat) -> f64 {
    let t = rollout.rows() as f64;
    let centre: f64 = (0..rollout.rows()).map(|r| rollout.get(r, CENTRE)).sum::<f64>() / t;
    let rest: f64 = rollout.sum() / t - centre;
    centre - rest / (CELLS - 1) as f64
}

/// Fitness of many genomes: four constant-motor rollouts each, batched.
pub fn xor_fitness_batch(genomes: &[Genome], model: &impl WorldModel, chem_seed: &Mat, cfg: &GAConfig) -> Result<Vec<Fitness>> {
    if genomes.is_empty() {
        return Ok(Vec::new());
    }
    let l = model.seq_len();
    let rows = l + cfg.rollout_horizon - 1;
    let mut motors = Vec::with_capacity(4 * genomes.len());
    for g in genomes {
        for case in XorCase::ALL {
            motors.push(hold_motors(encode_case_motors_at(g, case, cfg.input_speed).speeds(), rows));
        }
    }
    let seeds = vec![chem_seed.clone(); motors.len()];
    let outs = rollout_batch(model, &motors, &seeds, cfg.rollout_horizon)?;
    Ok(outs
        .chunks(4)
        .map(|c| Fitness::from_deltas([centre_delta(&c[0]), centre_delta(&c[1]), centre_delta(&c[2]), centre_delta(&c[3])]))
        .collect())
}

pub fn xor_fitness(genome: &Genome, model: &impl WorldModel, chem_seed: &Mat, cfg: &GAConfig) -> Result<Fitness> {
    Ok(xor_fitness_batch(std::slice::from_ref(genome), model, chem_seed, cfg)?[0])
}

/// Fitness-proportional selection on min-shifted fitness.
pub struct Roulette {
    dist: WeightedIndex<f64>,
}

impl Roulette {
    /// Weights `f_i − min(f) + δ` with `δ = 1e-6 · (max − min + 1)`.
    pub fn new(fitnesses: &[f64]) -> Result<Self> {
        let weights = roulette_weights(fitnesses)?;
        let dist = WeightedIndex::new(&weights).map_err(|e| Error::InvalidData(format!("roulette weights: {e}")))?;
        Ok(Self { dist })
    }

    pub fn sample(&self, rng: &mut impl Rng) -> usize {
        self.dist.sample(rng)
    }
}

pub fn roulette_weights(fitnesses: &[f64]) -> Result<Vec<f64>> {
    if fitnesses.is_empty() {
        return Err(Error::EmptyInput("roulette over an empty population".into()));
    }
    if fitnesses.iter().any(|f| !f.is_finite()) {
        return Err(Error::InvalidData("non-finite fitness".into()));
    }
    let min = fitnesses.iter().copied().fold(f64::INFINITY, f64::min);
    let max = fitnesses.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let delta = 1e-6 * (max - min + 1.0);
    Ok(fitnesses.iter().map(|f| f - min + delta).collect())
}

pub fn roulette_select(fitnesses: &[f64], rng: &mut impl Rng) -> Result<usize> {
    Ok(Roulette::new(fitnesses)?.sample(rng))
}

/// Children for cut points `0 ≤ p < q ≤ 15`: the middle segment is swapped.
pub fn crossover_at(g1: &Genome, g2: &Genome, p: usize, q: usize) -> (Genome, Genome) {
    assert!(p < q && q <= GENES, "cut points {p}, {q}");
    let (mut c1, mut c2) = (g1.0, g2.0);
    c1[p..q].copy_from_slice(&g2.0[p..q]);
    c2[p..q].copy_from_slice(&g1.0[p..q]);
    (Genome(c1), Genome(c2))
}

pub fn two_point_crossover(g1: &Genome, g2: &Genome, rng: &mut impl Rng) -> (Genome, Genome) {
    let p = rng.random_range(0..GENES);
    let q = rng.random_range(p + 1..=GENES);
    crossover_at(g1, g2, p, q)
}

/// Each gene is redrawn uniformly in `[-1, 1]` with probability `rate`.
pub fn mutate(g: &Genome, rate: f64, rng: &mut impl Rng) -> Genome {
    let mut out = g.0;
    for v in &mut out {
        if rng.random_bool(rate) {
            *v = rng.random_range(-1.0..=1.0);
        }
    }
    Genome(out)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GenerationStats {
    pub generation: usize,
    pub best: f64,
    pub mean: f64,
    pub std: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct GaResult {
    pub best: Genome,
    pub fitness: Fitness,
    pub history: Vec<GenerationStats>,
    /// Populations as evaluated, one per generation, in evaluation order.
    pub populations: Option<Vec<Vec<Genome>>>,
}

/// Genomes per parallel fitness task.
const EVAL_CHUNK: usize = 16;

fn evaluate(pop: &[Genome], model: &impl WorldModel, seed: &Mat, cfg: &GAConfig) -> Result<Vec<Fitness>> {
    let parts: Vec<Result<Vec<Fitness>>> =
        pop.par_chunks(EVAL_CHUNK).map(|chunk| xor_fitness_batch(chunk, model, seed, cfg)).collect();
    let mut out = Vec::with_capacity(pop.len());
    for p in parts {
        out.extend(p?);
    }
    Ok(out)
}

pub fn run_ga(model: &impl WorldModel, chem_seed: &Mat, cfg: &GAConfig) -> Result<GaResult> {
    run_ga_with(model, chem_seed, cfg, false, |_| {})
}

/// Generational loop with elitism. `keep_populations` records every evaluated
/// population; `on_generation` sees each generation's statistics.
pub fn run_ga_with(
    model: &impl WorldModel,
    chem_seed: &Mat,
    cfg: &GAConfig,
    keep_populations: bool,
    mut on_generation: impl FnMut(&GenerationStats),
) -> Result<GaResult> {
    cfg.validate()?;
    if !model.is_ready() {
        return Err(Error::ModelNotReady);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut pop: Vec<Genome> = (0..cfg.pop_size).map(|_| Genome::random(&mut rng)).collect();
    let mut best: Option<(Genome, Fitness)> = None;
    let mut history = Vec::with_capacity(cfg.n_generations);
    let mut populations = keep_populations.then(Vec::new);
    for generation in 0..cfg.n_generations {
        let fit = evaluate(&pop, model, chem_seed, cfg)?;
        let scores: Vec<f64> = fit.iter().map(|f| f.score).collect();
        let n = scores.len() as f64;
        let mean = scores.iter().sum::<f64>() / n;
        let std = (scores.iter().map(|s| (s - mean) * (s - mean)).sum::<f64>() / n).sqrt();
        let mut order: Vec<usize> = (0..pop.len()).collect();
        order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]).then(a.cmp(&b)));
        let top = order[0];
        if best.as_ref().is_none_or(|(_, f)| scores[top] > f.score) {
            best = Some((pop[top], fit[top]));
        }
        let stats = GenerationStats { generation, best: best.as_ref().expect("set above").1.score, mean, std };
        on_generation(&stats);
        history.push(stats);
        if let Some(p) = populations.as_mut() {
            p.push(pop.clone());
        }
        if generation + 1 == cfg.n_generations {
            break;
        }
        let wheel = Roulette::new(&scores)?;
        let mut next: Vec<Genome> = order[..cfg.n_elite].iter().map(|&i| pop[i]).collect();
        while next.len() < cfg.pop_size {
            let p1 = pop[wheel.sample(&mut rng)];
            let p2 = pop[wheel.sample(&mut rng)];
            let (c1, c2) = two_point_crossover(&p1, &p2, &mut rng);
            next.push(mutate(&c1, cfg.mutation_rate, &mut rng));
            if next.len() < cfg.pop_size {
                next.push(mutate(&c2, cfg.mutation_rate, &mut rng));
            }
        }
        pop = next;
    }
    let (best, fitness) = best.expect("at least one generation");
    Ok(GaResult { best, fitness, history, populations })
}

pub fn write_ga_history(mut out: impl Write, history: &[GenerationStats]) -> Result<()> {
    writeln!(out, "generation,best,mean,std")?;
    for s in history {
        writeln!(out, "{},{},{},{}", s.generation, s.best, s.mean, s.std)?;
    }
    Ok(())
}

#[derive(Serialize, Deserialize)]
struct BestGenomeFile {
    genes: Vec<f64>,
    score: f64,
    bits: [u8; 4],
}

pub fn save_ga_outputs(dir: impl AsRef<Path>, result: &GaResult) -> Result<()> {
    let dir = dir.as_ref();
    std::fs::create_dir_all(dir)?;
    let mut w = std::io::BufWriter::new(std::fs::File::create(dir.join("ga_history.csv"))?);
    write_ga_history(&mut w, &result.history)?;
    w.flush()?;
    let best = BestGenomeFile { genes: result.best.genes().to_vec(), score: result.fitness.score, bits: result.fitness.bits };
    std::fs::write(dir.join("best_genome.json"), serde_json::to_vec_pretty(&best)?)?;
    Ok(())
}

/// Analytic stand-in with a known optimum: the centre cell leans towards
/// `a XOR b` by an amount that peaks when the genome equals `target`.
///
/// With `q = exp(−‖g − target‖² / 2σ²)`, the prediction is `0.5` everywhere
/// except the centre, which is `0.5 + 0.5·q` when the inputs differ and
/// `0.5 − 0.5·q` when they agree. Each case's margin is `0.5·q`, so the score is `2q`.
#[derive(Clone, Debug)]
pub struct PlantedXor {
    pub target: Genome,
    pub sigma: f64,
    pub seq_len: usize,
}

impl PlantedXor {
    pub fn optimum_score(&self) -> f64 {
        2.0
    }
}

impl WorldModel for PlantedXor {
    fn seq_len(&self) -> usize {
        self.seq_len
    }

    fn predict_batch(&self, motors: &Mat, _chem: &Mat, batch: usize) -> Result<Mat> {
        let l = self.seq_len;
        let mut out = Mat::filled(batch, CELLS, 0.5);
        for b in 0..batch {
            let m = motors.row((b + 1) * l - 1);
            let a = u8::from(m[0] > 0.5);
            let bb = u8::from(m[CELLS - 1] > 0.5);
            let d2: f64 = m[GRID..GRID + GENES].iter().zip(self.target.genes()).map(|(x, t)| (x - t) * (x - t)).sum();
            let q = (-d2 / (2.0 * self.sigma * self.sigma)).exp();
            let sign = if a ^ bb == 1 { 1.0 } else { -1.0 };
            out.set(b, CENTRE, 0.5 + 0.5 * q * sign);
        }
        Ok(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    /// Fixed frame regardless of input.
    struct Constant(Mat);

    impl WorldModel for Constant {
        fn seq_len(&self) -> usize {
            2
        }
        fn predict_batch(&self, _m: &Mat, _c: &Mat, batch: usize) -> Result<Mat> {
            Ok(Mat::from_fn(batch, CELLS, |_, c| self.0.get(0, c)))
        }
    }

    /// Centre = a XOR b, every other cell = 0.5·(1 − a XOR b).
    struct XorTable;

    impl WorldModel for XorTable {
        fn seq_len(&self) -> usize {
            2
        }
        fn predict_batch(&self, m: &Mat, _c: &Mat, batch: usize) -> Result<Mat> {
            Ok(Mat::from_fn(batch, CELLS, |b, c| {
                let row = m.row(b * 2 + 1);
                let x = (row[0] > 0.5) ^ (row[24] > 0.5);
                let x = f64::from(u8::from(x));
                if c == CENTRE { x } else { 0.5 * (1.0 - x) }
            }))
        }
    }

    fn small_cfg() -> GAConfig {
        GAConfig { rollout_horizon: 5, ..GAConfig::default() }
    }

    #[test]
    fn case_layout() {
        let g = Genome::new(&(0..15).map(|i| i as f64 / 20.0).collect::<Vec<_>>()).unwrap();
        let f = encode_case_motors(&g, XorCase { a: 1, b: 0 });
        assert!(f.speeds()[..5].iter().all(|&v| v == 1.0));
        assert_eq!(&f.speeds()[5..20], g.genes());
        assert!(f.speeds()[20..].iter().all(|&v| v == 0.0));
        let z = encode_case_motors(&Genome::new(&[0.0; 15]).unwrap(), XorCase { a: 1, b: 1 });
        assert_eq!(z.speeds().iter().filter(|&&v| v == 1.0).count(), 10);
        let f = encode_case_motors(&g, XorCase { a: 0, b: 0 });
        assert!(f.speeds()[..5].iter().chain(&f.speeds()[20..]).all(|&v| v == 0.0));
    }

    #[test]
    fn uniform_predictions_tie_to_zero_bits() {
        let m = Constant(Mat::filled(1, CELLS, 0.3));
        let f = xor_fitness(&Genome::new(&[0.2; 15]).unwrap(), &m, &Mat::zeros(2, CELLS), &small_cfg()).unwrap();
        assert_eq!(f.score, 0.0);
        assert_eq!(f.bits, [0, 0, 0, 0]);
    }

    #[test]
    fn xor_table_scores_by_hand() {
        // differing inputs: Δ = 1 − 0 = 1; equal inputs: Δ = 0 − 0.5 = −0.5 (margin 0.5)
        let f = xor_fitness(&Genome::new(&[0.0; 15]).unwrap(), &XorTable, &Mat::zeros(2, CELLS), &small_cfg()).unwrap();
        assert_eq!(f.bits, [0, 1, 1, 0]);
        assert_eq!(f.deltas, [-0.5, 1.0, 1.0, -0.5]);
        assert_eq!(f.score, 3.0);
    }

    #[test]
    fn planted_optimum_scores_two() {
        let target = Genome::new(&[0.3; 15]).unwrap();
        let m = PlantedXor { target, sigma: 2.0, seq_len: 3 };
        let f = xor_fitness(&target, &m, &Mat::zeros(3, CELLS), &small_cfg()).unwrap();
        assert!((f.score - 2.0).abs() < 1e-12);
        assert_eq!(f.bits, [0, 1, 1, 0]);
        let off = xor_fitness(&Genome::new(&[-0.3; 15]).unwrap(), &m, &Mat::zeros(3, CELLS), &small_cfg()).unwrap();
        let q = (-(15.0 * 0.36) / 8.0f64).exp();
        assert!((off.score - 2.0 * q).abs() < 1e-12);
    }

    #[test]
    fn score_ignores_the_order_of_non_centre_cells() {
        let base = Mat::from_fn(1, CELLS, |_, c| (c as f64 * 0.37).sin().abs());
        let mut perm = base.clone();
        let others: Vec<usize> = (0..CELLS).filter(|&c| c != CENTRE).collect();
        for (i, &c) in others.iter().enumerate() {
            perm.set(0, c, base.get(0, others[others.len() - 1 - i]));
        }
        let g = Genome::new(&[0.1; 15]).unwrap();
        let a = xor_fitness(&g, &Constant(base), &Mat::zeros(2, CELLS), &small_cfg()).unwrap();
        let b = xor_fitness(&g, &Constant(perm), &Mat::zeros(2, CELLS), &small_cfg()).unwrap();
        assert!((a.score - b.score).abs() < 1e-12);
    }

    #[test]
    fn roulette_frequencies() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let n = 100_000;
        let freq = |f: &[f64], rng: &mut ChaCha8Rng| {
            let w = Roulette::new(f).unwrap();
            let mut c = vec![0usize; f.len()];
            for _ in 0..n {
                c[w.sample(rng)] += 1;
            }
            c.iter().map(|&k| k as f64 / n as f64).collect::<Vec<_>>()
        };
        let p = freq(&[1.0, 3.0], &mut rng);
        // weights (δ, 2 + δ) with δ = 3e-6
        let d = 3e-6;
        assert!((p[0] - d / (2.0 + 2.0 * d)).abs() < 0.01 && (p[1] - (2.0 + d) / (2.0 + 2.0 * d)).abs() < 0.01, "{p:?}");
        let p = freq(&[2.0, 2.0, 4.0], &mut rng);
        let d = 3e-6;
        let total = 2.0 + 3.0 * d;
        for (i, e) in [d / total, d / total, (2.0 + d) / total].iter().enumerate() {
            assert!((p[i] - e).abs() < 0.01, "{p:?}");
        }
        let p = freq(&[0.7; 4], &mut rng);
        assert!(p.iter().all(|v| (v - 0.25).abs() < 0.01), "{p:?}");
        assert!(matches!(roulette_select(&[], &mut rng), Err(Error::EmptyInput(_))));
    }

    #[test]
    fn crossover_cases() {
        let g1 = Genome::new(&[0.5; 15]).unwrap();
        let g2 = Genome::new(&[-0.5; 15]).unwrap();
        let (c1, c2) = crossover_at(&g1, &g2, 3, 7);
        for i in 0..15 {
            let mid = (3..7).contains(&i);
            assert_eq!(c1.genes()[i], if mid { -0.5 } else { 0.5 });
            assert_eq!(c2.genes()[i], if mid { 0.5 } else { -0.5 });
        }
        assert_eq!(crossover_at(&g1, &g2, 0, 15), (g2, g1));
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for _ in 0..50 {
            assert_eq!(two_point_crossover(&g1, &g1, &mut rng), (g1, g1));
        }
    }

    #[test]
    fn mutation_rates() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let g = Genome::new(&[2.0f64.powi(-7); 15]).unwrap();
        assert_eq!(mutate(&g, 0.0, &mut rng), g);
        // a redrawn gene equals the sentinel with probability zero
        let all = mutate(&g, 1.0, &mut rng);
        assert!(all.genes().iter().all(|&v| v != g.genes()[0]));
        let trials = 10_000;
        let changed: usize = (0..trials).map(|_| mutate(&g, 0.05, &mut rng).genes().iter().filter(|&&v| v != g.genes()[0]).count()).sum();
        assert!((changed as f64 / trials as f64 - 0.75).abs() < 0.05);
    }

    proptest! {
        #[test]
        fn operators_keep_genomes_in_range(seed in any::<u64>(), rate in 0.0f64..=1.0) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let mut a = Genome::random(&mut rng);
            let mut b = Genome::random(&mut rng);
            for _ in 0..20 {
                let (c, d) = two_point_crossover(&a, &b, &mut rng);
                a = mutate(&c, rate, &mut rng);
                b = mutate(&d, rate, &mut rng);
                prop_assert!(a.genes().iter().chain(b.genes()).all(|g| g.abs() <= 1.0));
            }
        }
    }

    #[test]
    fn elites_survive_and_best_never_drops() {
        let m = PlantedXor { target: Genome::new(&[0.4; 15]).unwrap(), sigma: 2.0, seq_len: 2 };
        let cfg = GAConfig { pop_size: 24, n_elite: 4, n_generations: 6, rollout_horizon: 2, seed: 9, ..GAConfig::default() };
        let r = run_ga_with(&m, &Mat::zeros(2, CELLS), &cfg, true, |_| {}).unwrap();
        let pops = r.populations.as_ref().unwrap();
        for w in pops.windows(2) {
            let fit = xor_fitness_batch(&w[0], &m, &Mat::zeros(2, CELLS), &cfg).unwrap();
            let mut order: Vec<usize> = (0..fit.len()).collect();
            order.sort_by(|&a, &b| fit[b].score.total_cmp(&fit[a].score).then(a.cmp(&b)));
            for &i in &order[..cfg.n_elite] {
                assert!(w[1].contains(&w[0][i]));
            }
        }
        assert!(r.history.windows(2).all(|h| h[1].best >= h[0].best));
        let again = run_ga(&m, &Mat::zeros(2, CELLS), &cfg).unwrap();
        assert_eq!(again.best, r.best);
        assert_eq!(again.history, r.history);
    }

    #[test]
    fn untrained_model_is_rejected() {
        let model = crate::model::Transformer::new(
            crate::model::ModelConfig { d_model: 8, n_layers: 1, n_heads: 2, d_ff: 8, d_ff_head: 8, seq_len: 3, ..Default::default() },
            1,
        )
        .unwrap();
        let cfg = GAConfig { pop_size: 4, n_elite: 1, n_generations: 1, rollout_horizon: 2, ..GAConfig::default() };
        assert!(matches!(run_ga(&model, &Mat::zeros(3, CELLS), &cfg), Err(Error::ModelNotReady)));
    }

    #[test]
    fn output_files() {
        let dir = tempfile::tempdir().unwrap();
        let m = PlantedXor { target: Genome::new(&[0.0; 15]).unwrap(), sigma: 2.0, seq_len: 2 };
        let cfg = GAConfig { pop_size: 8, n_elite: 2, n_generations: 3, rollout_horizon: 2, ..GAConfig::default() };
        let r = run_ga(&m, &Mat::zeros(2, CELLS), &cfg).unwrap();
        save_ga_outputs(dir.path(), &r).unwrap();
        let csv = std::fs::read_to_string(dir.path().join("ga_history.csv")).unwrap();
        assert_eq!(csv.lines().count(), 4);
        assert!(csv.starts_with("generation,best,mean,std\n"));
        let best: serde_json::Value = serde_json::from_slice(&std::fs::read(dir.path().join("best_genome.json")).unwrap()).unwrap();
        assert_eq!(best["genes"].as_array().unwrap().len(), 15);
        assert_eq!(best["bits"].as_array().unwrap().len(), 4);
    }
}
