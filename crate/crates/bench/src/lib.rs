//! Shared fixtures for the benchmarks.

use surrogate_core::data::{build_pairs, batch_sequences, random_experiment, Batch, ExperimentRecord, ProgramConfig, SynthConfig};
use surrogate_core::model::{ModelConfig, Transformer};

/// The desk architecture with untrained weights, marked ready so that
/// rollouts accept it.
pub fn desk_model() -> Transformer {
    let mut m = Transformer::new(ModelConfig::desk(), 1).expect("desk config is valid");
    m.set_ready(true);
    m
}

pub fn experiment(steps: usize, seed: u64) -> ExperimentRecord {
    random_experiment(&SynthConfig { steps, seed, ..SynthConfig::default() }, &ProgramConfig::default()).expect("valid synth config")
}

/// One batch of `size` windows for `model`.
pub fn batch(model: &Transformer, size: usize) -> Batch {
    let l = model.config().seq_len;
    let rec = experiment(l + size * 4 + 1, 3);
    let pairs = build_pairs(&rec, 1, l, 4).expect("record is long enough");
    batch_sequences(&pairs[..size], size).expect("non-empty").remove(0)
}
