//! Experiment recordings, their preprocessing, windowing and batching, and a
//! synthetic reference oscillator that stands in for lab recordings.

pub mod frames;
pub mod jsonl;
pub mod preprocess;
pub mod synth;
pub mod window;

pub use frames::{BinaryChemFrame, ChemFrame, ExperimentRecord, Frame, MotorFrame, CELLS, CENTRE, GRID};
pub use preprocess::{
    binarize_cells, blue_channel_signal, decimate_frames, normalize_motors, CellClassifier, ThresholdClassifier,
};
pub use synth::{random_experiment, random_motor_program, synth_experiment, ProgramConfig, SynthConfig};
pub use window::{batch_sequences, build_pairs, make_sequences, window_count, Batch, SequencePair};
