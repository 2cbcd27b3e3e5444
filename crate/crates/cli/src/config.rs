//! The TOML run configuration. Every section is optional and every key has a
//! default; unknown keys are rejected. Command-line flags override the file.

use std::path::Path;

use serde::{Deserialize, Serialize};
use surrogate_core::data::{ProgramConfig, SynthConfig};
use surrogate_core::ga::GAConfig;
use surrogate_core::model::ModelConfig;
use surrogate_core::rl::ControllerConfig;

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub data: DataConfig,
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub ga: GAConfig,
    pub rl: ControllerConfig,
    pub upscale: UpscaleConfig,
    pub serve: ServeConfig,
}

/// Synthetic experiment generation.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataConfig {
    pub count: usize,
    pub steps: usize,
    pub omega0: f64,
    pub kappa: f64,
    pub omega_b: f64,
    pub pulse_sharpness: u32,
    pub segment_min: usize,
    pub segment_max: usize,
    pub min_active: usize,
    pub min_speed: f64,
}

impl Default for DataConfig {
    fn default() -> Self {
        let s = SynthConfig::default();
        let p = ProgramConfig::default();
        Self {
            count: 40,
            steps: s.steps,
            omega0: s.omega0,
            kappa: s.kappa,
            omega_b: s.omega_b,
            pulse_sharpness: s.pulse_sharpness,
            segment_min: p.segment_min,
            segment_max: p.segment_max,
            min_active: p.min_active,
            min_speed: p.min_speed,
        }
    }
}

impl DataConfig {
    pub fn synth(&self, seed: u64) -> SynthConfig {
        SynthConfig {
            omega0: self.omega0,
            kappa: self.kappa,
            omega_b: self.omega_b,
            pulse_sharpness: self.pulse_sharpness,
            steps: self.steps,
            seed,
        }
    }

    pub fn program(&self) -> ProgramConfig {
        ProgramConfig {
            segment_min: self.segment_min,
            segment_max: self.segment_max,
            min_active: self.min_active,
            min_speed: self.min_speed,
        }
    }
}

/// Windowing of recordings into training batches.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub every: usize,
    pub stride: usize,
    pub batch_size: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self { every: 1, stride: 10, batch_size: 64 }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum MotorPattern {
    /// Every motor at `motor_speed`.
    Uniform,
    /// A fixed random speed per cell.
    Random,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct UpscaleConfig {
    pub n: usize,
    pub steps: usize,
    pub motor_pattern: MotorPattern,
    pub motor_speed: f64,
    pub png: bool,
    /// Pixels per cell in PNG frames.
    pub png_scale: u32,
}

impl Default for UpscaleConfig {
    fn default() -> Self {
        Self { n: 25, steps: 100, motor_pattern: MotorPattern::Random, motor_speed: 0.5, png: false, png_scale: 8 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ServeConfig {
    pub host: String,
    pub port: u16,
    pub workers: usize,
}

impl Default for ServeConfig {
    fn default() -> Self {
        Self { host: "127.0.0.1".into(), port: 8080, workers: 1 }
    }
}

impl RunConfig {
    pub fn parse(text: &str) -> Result<Self, String> {
        toml::from_str(text).map_err(|e| e.to_string())
    }

    pub fn load(path: &Path) -> Result<Self, String> {
        let text = std::fs::read_to_string(path).map_err(|e| format!("{}: {e}", path.display()))?;
        Self::parse(&text).map_err(|e| format!("{}: {e}", path.display()))
    }

    /// One seed for every stage.
    pub fn set_seed(&mut self, seed: u64) {
        self.ga.seed = seed;
        self.rl.seed = seed;
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_file_gives_defaults() {
        assert_eq!(RunConfig::parse("").unwrap(), RunConfig::default());
    }

    #[test]
    fn sections_override_fields() {
        let c = RunConfig::parse("[model]\nd_model = 32\n[ga]\npop_size = 64\n[rl]\nobjective = \"minimize\"\n").unwrap();
        assert_eq!(c.model.d_model, 32);
        assert_eq!(c.model.n_layers, ModelConfig::default().n_layers);
        assert_eq!(c.ga.pop_size, 64);
        assert_eq!(c.rl.objective, surrogate_core::rl::Objective::Minimize);
    }

    #[test]
    fn unknown_keys_are_named() {
        let e = RunConfig::parse("[model]\nd_modle = 32\n").unwrap_err();
        assert!(e.contains("d_modle"), "{e}");
        let e = RunConfig::parse("[extra]\nx = 1\n").unwrap_err();
        assert!(e.contains("extra"), "{e}");
    }
}
