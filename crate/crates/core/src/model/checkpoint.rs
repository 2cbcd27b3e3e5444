use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::config::ModelConfig;
use crate::model::transformer::Transformer;
use crate::nn::{Adam, AdamConfig, ParamSet};
use crate::tensor::Mat;
use crate::tensorfile::{self, Tensor};

/// Serialized model: configuration, weights and optionally the optimiser state.
#[derive(Clone, Debug)]
pub struct Checkpoint {
    pub config: ModelConfig,
    pub params: ParamSet,
    pub train_step: u64,
    pub ready: bool,
    pub optimizer: Option<Adam>,
}

#[derive(Serialize, Deserialize)]
struct Meta {
    kind: String,
    config: ModelConfig,
    train_step: u64,
    ready: bool,
    adam: Option<AdamMeta>,
}

#[derive(Serialize, Deserialize)]
struct AdamMeta {
    config: AdamConfig,
    steps: Vec<u64>,
}

const KIND: &str = "transformer";

pub(crate) fn mat_tensor(name: &str, m: &Mat) -> Tensor {
    Tensor { name: name.to_string(), shape: vec![m.rows(), m.cols()], data: m.as_slice().to_vec() }
}

pub(crate) fn tensor_mat(t: Tensor) -> Result<Mat> {
    match t.shape.as_slice() {
        [r, c] => Mat::from_vec(*r, *c, t.data),
        _ => Err(Error::Format(format!("tensor {} is not 2-D", t.name))),
    }
}

impl Checkpoint {
    pub fn of(model: &Transformer, optimizer: Option<&Adam>) -> Self {
        Self {
            config: model.config().clone(),
            params: model.params().clone(),
            train_step: model.train_step(),
            ready: model.is_ready(),
            optimizer: optimizer.cloned(),
        }
    }

    pub fn into_model(self) -> Result<(Transformer, Option<Adam>)> {
        let model = Transformer::from_parts(self.config, self.params, self.ready, self.train_step)?;
        Ok((model, self.optimizer))
    }

    pub fn write(&self, out: impl Write) -> Result<()> {
        let mut tensors: Vec<Tensor> =
            self.params.names().iter().zip(self.params.values()).map(|(n, v)| mat_tensor(n, v)).collect();
        let adam = self.optimizer.as_ref().map(|opt| {
            for (i, name) in self.params.names().iter().enumerate() {
                tensors.push(mat_tensor(&format!("adam.m/{name}"), &opt.m[i]));
                tensors.push(mat_tensor(&format!("adam.v/{name}"), &opt.v[i]));
            }
            AdamMeta { config: opt.cfg, steps: opt.t.clone() }
        });
        let meta = Meta { kind: KIND.into(), config: self.config.clone(), train_step: self.train_step, ready: self.ready, adam };
        tensorfile::write(out, serde_json::to_value(meta)?, &tensors)
    }

    pub fn read(input: impl Read) -> Result<Self> {
        let (meta, tensors) = tensorfile::read(input)?;
        let meta: Meta = serde_json::from_value(meta).map_err(|e| Error::Format(format!("checkpoint header: {e}")))?;
        if meta.kind != KIND {
            return Err(Error::Format(format!("expected a {KIND} checkpoint, found {}", meta.kind)));
        }
        meta.config.validate()?;
        let mut params = ParamSet::default();
        let mut moments = Vec::new();
        for t in tensors {
            if t.name.starts_with("adam.") {
                moments.push(t);
            } else {
                let name = t.name.clone();
                params.push(name, tensor_mat(t)?);
            }
        }
        let optimizer = match meta.adam {
            None => None,
            Some(am) => {
                let mut m = Vec::with_capacity(params.len());
                let mut v = Vec::with_capacity(params.len());
                let mut by_name: std::collections::HashMap<String, Tensor> =
                    moments.into_iter().map(|t| (t.name.clone(), t)).collect();
                for name in params.names() {
                    let take = |by: &mut std::collections::HashMap<String, Tensor>, key: String| {
                        by.remove(&key).ok_or_else(|| Error::Format(format!("missing {key}"))).and_then(tensor_mat)
                    };
                    m.push(take(&mut by_name, format!("adam.m/{name}"))?);
                    v.push(take(&mut by_name, format!("adam.v/{name}"))?);
                }
                if am.steps.len() != params.len() {
                    return Err(Error::Format("optimizer step counts do not match tensors".into()));
                }
                Some(Adam { cfg: am.config, m, v, t: am.steps })
            }
        };
        let ck = Self { config: meta.config, params, train_step: meta.train_step, ready: meta.ready, optimizer };
        // validates names and shapes against the architecture
        Transformer::from_parts(ck.config.clone(), ck.params.clone(), ck.ready, ck.train_step)?;
        Ok(ck)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut w = std::io::BufWriter::new(std::fs::File::create(path)?);
        self.write(&mut w)?;
        w.flush()?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::read(std::fs::File::open(path)?)
    }
}

impl Transformer {
    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        Checkpoint::of(self, None).save(path)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Ok(Checkpoint::load(path)?.into_model()?.0)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::transformer::Mode;

    fn tiny() -> ModelConfig {
        ModelConfig { d_model: 8, n_layers: 2, n_heads: 2, d_ff: 12, d_ff_head: 10, seq_len: 5, ..ModelConfig::default() }
    }

    #[test]
    fn round_trip_is_bitwise() {
        let mut model = Transformer::new(tiny(), 11).unwrap();
        model.set_ready(true);
        let mut opt = Adam::new(model.params(), AdamConfig::default());
        opt.t[3] = 7;
        opt.m[3].as_mut_slice()[0] = 0.25;
        let mut buf = Vec::new();
        Checkpoint::of(&model, Some(&opt)).write(&mut buf).unwrap();
        let (back, back_opt) = Checkpoint::read(buf.as_slice()).unwrap().into_model().unwrap();
        assert_eq!(back.params().values(), model.params().values());
        assert!(back.is_ready());
        let back_opt = back_opt.unwrap();
        assert_eq!(back_opt.t[3], 7);
        assert_eq!(back_opt.m[3].as_slice()[0], 0.25);

        let m = Mat::from_fn(5, 25, |i, j| ((i + j) as f64 * 0.3).sin());
        let c = Mat::from_fn(5, 25, |i, j| ((i * j) as f64 * 0.1).cos().abs());
        let a = model.model_forward(&m, &c, Mode::Eval).unwrap();
        let b = back.model_forward(&m, &c, Mode::Eval).unwrap();
        assert_eq!(a.prediction, b.prediction);
    }

    #[test]
    fn missing_or_misshapen_tensors_are_rejected() {
        let model = Transformer::new(tiny(), 12).unwrap();
        let mut ck = Checkpoint::of(&model, None);
        let mut short = ParamSet::default();
        for (n, v) in ck.params.names().iter().zip(ck.params.values()).skip(1) {
            short.push(n.clone(), v.clone());
        }
        ck.params = short;
        let mut buf = Vec::new();
        ck.write(&mut buf).unwrap();
        assert!(matches!(Checkpoint::read(buf.as_slice()), Err(Error::Format(_))));

        let mut ck = Checkpoint::of(&model, None);
        *ck.params.value_mut(0) = Mat::zeros(1, 1);
        let mut buf = Vec::new();
        ck.write(&mut buf).unwrap();
        assert!(matches!(Checkpoint::read(buf.as_slice()), Err(Error::Format(_))));
    }
}
