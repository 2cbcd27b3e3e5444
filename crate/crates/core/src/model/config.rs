use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OutputActivation {
    /// Continuous blue-channel signal.
    Relu,
    /// Binarised dataset.
    Sigmoid,
}

/// Architecture and training-schedule hyperparameters.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub d_model: usize,
    pub n_layers: usize,
    pub n_heads: usize,
    /// Inner width of the feed-forward sublayer in each block.
    pub d_ff: usize,
    /// Width of the hidden dense layer in both output heads.
    pub d_ff_head: usize,
    pub seq_len: usize,
    pub feat_in: usize,
    pub feat_out: usize,
    pub dropout: f64,
    /// Standard deviation of Gaussian noise added to the chemistry input of
    /// full-model training batches (clamped back into `[0, 1]`). Zero disables it.
    pub chem_noise: f64,
    pub warmup_steps: u64,
    pub output_activation: OutputActivation,
    pub encoder_epochs_per_cycle: usize,
    pub full_epochs_per_cycle: usize,
    pub n_cycles: usize,
    /// Floor on the per-timestep denominator of the scaled MSE.
    pub eps_loss: f64,
    /// Weight of the encoder reconstruction loss during full-model epochs.
    pub recon_weight: f64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            d_model: 128,
            n_layers: 4,
            n_heads: 8,
            d_ff: 512,
            d_ff_head: 1024,
            seq_len: 150,
            feat_in: 25,
            feat_out: 25,
            dropout: 0.2,
            chem_noise: 0.0,
            warmup_steps: 5000,
            output_activation: OutputActivation::Relu,
            encoder_epochs_per_cycle: 30,
            full_epochs_per_cycle: 100,
            n_cycles: 10,
            eps_loss: 0.01,
            recon_weight: 1.0,
        }
    }
}

impl ModelConfig {
    /// Small configuration that trains in minutes on one CPU core.
    pub fn desk() -> Self {
        Self {
            d_model: 64,
            n_layers: 1,
            n_heads: 4,
            d_ff: 128,
            d_ff_head: 128,
            seq_len: 80,
            dropout: 0.0,
            warmup_steps: 300,
            encoder_epochs_per_cycle: 2,
            full_epochs_per_cycle: 20,
            n_cycles: 1,
            output_activation: OutputActivation::Sigmoid,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidArgument(m.to_string()));
        if self.d_model == 0 || self.n_heads == 0 || self.d_model % self.n_heads != 0 {
            return bad("d_model must be a positive multiple of n_heads");
        }
        if self.d_model % 2 != 0 {
            return bad("d_model must be even for the sinusoidal position code");
        }
        if self.n_layers == 0 || self.d_ff == 0 || self.d_ff_head == 0 {
            return bad("layer counts and widths must be positive");
        }
        if self.seq_len == 0 || self.feat_in == 0 || self.feat_out == 0 {
            return bad("sequence length and feature widths must be positive");
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return bad("dropout must lie in [0, 1)");
        }
        if !(self.chem_noise >= 0.0) {
            return bad("chem_noise must be non-negative");
        }
        if self.warmup_steps < 1 {
            return bad("warmup_steps must be at least 1");
        }
        if !(self.eps_loss > 0.0) {
            return bad("eps_loss must be positive");
        }
        if !(self.recon_weight >= 0.0) {
            return bad("recon_weight must be non-negative");
        }
        Ok(())
    }

    /// Epoch entries one full `cyclic_train` run records.
    pub fn total_epochs(&self) -> usize {
        self.n_cycles * (self.encoder_epochs_per_cycle + self.full_epochs_per_cycle)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_validate_and_count_epochs() {
        let cfg = ModelConfig::default();
        cfg.validate().unwrap();
        assert_eq!(cfg.total_epochs(), 1300);
        ModelConfig::desk().validate().unwrap();
    }

    #[test]
    fn invalid_configs() {
        let heads = ModelConfig { n_heads: 3, ..ModelConfig::default() };
        assert!(heads.validate().is_err());
        let drop = ModelConfig { dropout: 1.0, ..ModelConfig::default() };
        assert!(drop.validate().is_err());
        let warm = ModelConfig { warmup_steps: 0, ..ModelConfig::default() };
        assert!(warm.validate().is_err());
    }
}
