//! Two-headed separation network: a stack of bidirectional LSTM layers over
//! the log-magnitude spectrogram, a deep clustering embedding head and a
//! mask head.
//!
//! Bin-level outputs are laid out `(batch, time, freq)` row-major, i.e. row
//! `(b * n_time + t) * n_freq + f` of the embedding and mask matrices. Within
//! one example this is the spectrogram's own time-major layout.

mod checkpoint;

use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::autodiff::{Graph, Real, Tensor, Var};
use crate::{Error, Result};

pub use checkpoint::CHECKPOINT_MAGIC;

/// Floor inside the log of the input features.
pub const LOG_FLOOR: f64 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ChimeraConfig {
    pub n_freq: usize,
    pub hidden_size: usize,
    pub n_layers: usize,
    pub embedding_dim: usize,
    pub n_sources: usize,
}

impl ChimeraConfig {
    /// 4 BLSTM layers of 500 units per direction, 20-dimensional embeddings,
    /// 257 frequency bins.
    pub fn reference(n_sources: usize) -> Self {
        Self {
            n_freq: 257,
            hidden_size: 500,
            n_layers: 4,
            embedding_dim: 20,
            n_sources,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let fields = [
            ("n_freq", self.n_freq),
            ("hidden_size", self.hidden_size),
            ("n_layers", self.n_layers),
            ("embedding_dim", self.embedding_dim),
            ("n_sources", self.n_sources),
        ];
        for (name, v) in fields {
            if v == 0 || v > i32::MAX as usize {
                return Err(Error::invalid(format!(
                    "{name} must be a positive 32-bit value, got {v}"
                )));
            }
        }
        Ok(())
    }

    /// Closed-form parameter count.
    pub fn parameter_count(&self) -> usize {
        let h = self.hidden_size;
        let backbone: usize = (0..self.n_layers)
            .map(|l| {
                let input = if l == 0 { self.n_freq } else { 2 * h };
                2 * (input * 4 * h + h * 4 * h + 4 * h)
            })
            .sum();
        let emb = 2 * h * self.n_freq * self.embedding_dim + self.n_freq * self.embedding_dim;
        let mask = 2 * h * self.n_freq * self.n_sources + self.n_freq * self.n_sources;
        backbone + emb + mask
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ParamGroup {
    Backbone,
    EmbeddingHead,
    MaskHead,
}

impl fmt::Display for ParamGroup {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ParamGroup::Backbone => "backbone",
            ParamGroup::EmbeddingHead => "embedding_head",
            ParamGroup::MaskHead => "mask_head",
        })
    }
}

/// Which parameters fine-tuning may change.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Regime {
    Whole,
    MaskOnly,
}

impl fmt::Display for Regime {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Regime::Whole => "whole",
            Regime::MaskOnly => "mask_only",
        })
    }
}

impl FromStr for Regime {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "whole" => Ok(Regime::Whole),
            "mask_only" => Ok(Regime::MaskOnly),
            other => Err(Error::invalid(format!(
                "unknown regime {other:?} (expected whole or mask_only)"
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Parameter<T> {
    pub name: String,
    pub group: ParamGroup,
    pub value: Tensor<T>,
    pub frozen: bool,
}

/// Log-magnitude features `[batch, n_time, n_freq]`.
#[derive(Debug, Clone, PartialEq)]
pub struct LogMagBatch<T> {
    data: Tensor<T>,
}

impl<T: Real> LogMagBatch<T> {
    /// Builds features from per-example time-major magnitude matrices.
    pub fn from_magnitudes<M: AsRef<[f64]>>(mags: &[M], n_time: usize, n_freq: usize) -> Result<Self> {
        let mut data = Vec::with_capacity(mags.len() * n_time * n_freq);
        for m in mags {
            let m = m.as_ref();
            if m.len() != n_time * n_freq {
                return Err(Error::invalid(format!(
                    "magnitude matrix has {} bins, expected {n_time}x{n_freq}",
                    m.len()
                )));
            }
            data.extend(m.iter().map(|&v| T::from_f64_lossy((v.max(0.0) + LOG_FLOOR).ln())));
        }
        Ok(Self {
            data: Tensor::new(vec![mags.len(), n_time, n_freq], data)?,
        })
    }

    pub fn from_tensor(data: Tensor<T>) -> Result<Self> {
        if data.rank() != 3 {
            return Err(Error::invalid(format!(
                "features must be [batch, time, freq], got {:?}",
                data.shape()
            )));
        }
        Ok(Self { data })
    }

    pub fn batch(&self) -> usize {
        self.data.shape()[0]
    }

    pub fn n_time(&self) -> usize {
        self.data.shape()[1]
    }

    pub fn n_freq(&self) -> usize {
        self.data.shape()[2]
    }

    pub fn tensor(&self) -> &Tensor<T> {
        &self.data
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Heads {
    pub embedding: bool,
    pub mask: bool,
}

impl Heads {
    pub const BOTH: Heads = Heads {
        embedding: true,
        mask: true,
    };
    pub const EMBEDDING: Heads = Heads {
        embedding: true,
        mask: false,
    };
    pub const MASK: Heads = Heads {
        embedding: false,
        mask: true,
    };
}

/// Graph handles produced by [`ChimeraModel::forward_graph`].
#[derive(Debug, Clone)]
pub struct ForwardVars {
    /// `[B*T*F, D]`, unit rows.
    pub embeddings: Option<Var>,
    /// `[B*T*F, N]`, rows on the simplex.
    pub masks: Option<Var>,
    /// Leaf handle per model parameter, `None` when the pass did not use it.
    pub params: Vec<Option<Var>>,
}

/// Detached network outputs.
#[derive(Debug, Clone, PartialEq)]
pub struct ForwardOutput<T> {
    pub embeddings: Tensor<T>,
    pub masks: Tensor<T>,
    pub batch: usize,
    pub n_time: usize,
    pub n_freq: usize,
}

impl<T: Real> ForwardOutput<T> {
    /// Time-major mask of `source` for example `b`.
    pub fn source_mask(&self, b: usize, source: usize) -> Vec<f64> {
        let n = self.masks.shape()[1];
        let bins = self.n_time * self.n_freq;
        let d = self.masks.data();
        (0..bins)
            .map(|i| d[(b * bins + i) * n + source].to_f64().unwrap_or(0.0).clamp(0.0, 1.0))
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ChimeraModel<T> {
    config: ChimeraConfig,
    params: Vec<Parameter<T>>,
}

fn uniform<T: Real>(rng: &mut ChaCha8Rng, shape: &[usize], bound: f64) -> Tensor<T> {
    let n: usize = shape.iter().product();
    let data = (0..n)
        .map(|_| T::from_f64_lossy(rng.gen_range(-bound..=bound)))
        .collect();
    Tensor::new(shape.to_vec(), data).expect("shape")
}

fn mask_head_params<T: Real>(config: &ChimeraConfig, rng: &mut ChaCha8Rng) -> [Parameter<T>; 2] {
    let h2 = 2 * config.hidden_size;
    let bound = 1.0 / (config.hidden_size as f64).sqrt();
    let out = config.n_freq * config.n_sources;
    [
        Parameter {
            name: "mask.weight".into(),
            group: ParamGroup::MaskHead,
            value: uniform(rng, &[h2, out], bound),
            frozen: false,
        },
        Parameter {
            name: "mask.bias".into(),
            group: ParamGroup::MaskHead,
            value: Tensor::zeros(&[out]),
            frozen: false,
        },
    ]
}

impl<T: Real> ChimeraModel<T> {
    /// Weights uniform in `±1/√hidden`, biases zero, deterministic in `seed`.
    pub fn init(config: ChimeraConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let h = config.hidden_size;
        let bound = 1.0 / (h as f64).sqrt();
        let mut params = Vec::new();
        for l in 0..config.n_layers {
            let input = if l == 0 { config.n_freq } else { 2 * h };
            for dir in ["fwd", "bwd"] {
                let prefix = format!("lstm.{l}.{dir}");
                params.push(Parameter {
                    name: format!("{prefix}.w_ih"),
                    group: ParamGroup::Backbone,
                    value: uniform(&mut rng, &[input, 4 * h], bound),
                    frozen: false,
                });
                params.push(Parameter {
                    name: format!("{prefix}.w_hh"),
                    group: ParamGroup::Backbone,
                    value: uniform(&mut rng, &[h, 4 * h], bound),
                    frozen: false,
                });
                params.push(Parameter {
                    name: format!("{prefix}.bias"),
                    group: ParamGroup::Backbone,
                    value: Tensor::zeros(&[4 * h]),
                    frozen: false,
                });
            }
        }
        let emb_out = config.n_freq * config.embedding_dim;
        params.push(Parameter {
            name: "embedding.weight".into(),
            group: ParamGroup::EmbeddingHead,
            value: uniform(&mut rng, &[2 * h, emb_out], bound),
            frozen: false,
        });
        params.push(Parameter {
            name: "embedding.bias".into(),
            group: ParamGroup::EmbeddingHead,
            value: Tensor::zeros(&[emb_out]),
            frozen: false,
        });
        params.extend(mask_head_params(&config, &mut rng));
        Ok(Self { config, params })
    }

    pub(crate) fn from_parts(config: ChimeraConfig, params: Vec<Parameter<T>>) -> Result<Self> {
        let template = Self::init(config, 0)?;
        if template.params.len() != params.len() {
            return Err(Error::Checkpoint(format!(
                "expected {} parameters, found {}",
                template.params.len(),
                params.len()
            )));
        }
        for (t, p) in template.params.iter().zip(&params) {
            if t.name != p.name || t.value.shape() != p.value.shape() {
                return Err(Error::Checkpoint(format!(
                    "parameter {} {:?} does not match expected {} {:?}",
                    p.name,
                    p.value.shape(),
                    t.name,
                    t.value.shape()
                )));
            }
        }
        Ok(Self { config, params })
    }

    pub fn config(&self) -> &ChimeraConfig {
        &self.config
    }

    pub fn params(&self) -> &[Parameter<T>] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [Parameter<T>] {
        &mut self.params
    }

    pub fn param(&self, name: &str) -> Option<&Parameter<T>> {
        self.params.iter().find(|p| p.name == name)
    }

    pub fn parameter_count(&self) -> usize {
        self.params.iter().map(|p| p.value.numel()).sum()
    }

    pub fn set_trainable(&mut self, regime: Regime) {
        for p in &mut self.params {
            p.frozen = match regime {
                Regime::Whole => false,
                Regime::MaskOnly => p.group != ParamGroup::MaskHead,
            };
        }
    }

    pub fn frozen_groups(&self) -> Vec<ParamGroup> {
        let mut groups: Vec<ParamGroup> = Vec::new();
        for p in &self.params {
            if p.frozen && !groups.contains(&p.group) {
                groups.push(p.group);
            }
        }
        groups
    }

    /// Replaces the mask head with a freshly initialised one for
    /// `n_sources` outputs; the rest of the network is kept.
    pub fn reset_mask_head(&mut self, n_sources: usize, seed: u64) -> Result<()> {
        let config = ChimeraConfig {
            n_sources,
            ..self.config
        };
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let fresh = mask_head_params::<T>(&config, &mut rng);
        self.params.retain(|p| p.group != ParamGroup::MaskHead);
        self.params.extend(fresh);
        self.config = config;
        Ok(())
    }

    pub fn cast<U: Real>(&self) -> ChimeraModel<U> {
        ChimeraModel {
            config: self.config,
            params: self
                .params
                .iter()
                .map(|p| Parameter {
                    name: p.name.clone(),
                    group: p.group,
                    value: p.value.cast(),
                    frozen: p.frozen,
                })
                .collect(),
        }
    }

    /// Builds the forward pass on `g`. Frozen parameters enter as constants.
    pub fn forward_graph(&self, g: &mut Graph<T>, input: &LogMagBatch<T>, heads: Heads) -> Result<ForwardVars> {
        self.forward_impl(g, input, heads, None)
    }

    /// As [`forward_graph`](Self::forward_graph) but reads parameter `i` from
    /// `vars[i]` instead of creating leaves, so callers can own the leaves.
    pub fn forward_graph_with(
        &self,
        g: &mut Graph<T>,
        input: &LogMagBatch<T>,
        heads: Heads,
        vars: &[Var],
    ) -> Result<ForwardVars> {
        if vars.len() != self.params.len() {
            return Err(Error::invalid(format!(
                "{} parameter vars for {} parameters",
                vars.len(),
                self.params.len()
            )));
        }
        for (v, p) in vars.iter().zip(&self.params) {
            if g.shape(*v) != p.value.shape() {
                return Err(Error::invalid(format!(
                    "var shape {:?} for parameter {}",
                    g.shape(*v),
                    p.name
                )));
            }
        }
        self.forward_impl(g, input, heads, Some(vars))
    }

    fn forward_impl(
        &self,
        g: &mut Graph<T>,
        input: &LogMagBatch<T>,
        heads: Heads,
        given: Option<&[Var]>,
    ) -> Result<ForwardVars> {
        let cfg = &self.config;
        if input.n_freq() != cfg.n_freq {
            return Err(Error::invalid(format!(
                "input has {} frequency bins, model expects {}",
                input.n_freq(),
                cfg.n_freq
            )));
        }
        let (b, t, f) = (input.batch(), input.n_time(), input.n_freq());
        if b == 0 || t == 0 {
            return Err(Error::invalid("empty input batch"));
        }
        let h = cfg.hidden_size;
        let mut vars: Vec<Option<Var>> = vec![None; self.params.len()];
        let mut pvar = |g: &mut Graph<T>, name: &str| -> Var {
            let i = self
                .params
                .iter()
                .position(|p| p.name == name)
                .expect("known parameter");
            *vars[i].get_or_insert_with(|| match given {
                Some(given) => given[i],
                None => {
                    let p = &self.params[i];
                    g.leaf(p.value.clone(), !p.frozen)
                }
            })
        };

        let mut x = g.constant(input.tensor().clone().reshaped(&[b * t, f])?);
        for l in 0..cfg.n_layers {
            let mut outs = Vec::with_capacity(2);
            for (dir, reverse) in [("fwd", false), ("bwd", true)] {
                let prefix = format!("lstm.{l}.{dir}");
                let w_ih = pvar(g, &format!("{prefix}.w_ih"));
                let w_hh = pvar(g, &format!("{prefix}.w_hh"));
                let bias = pvar(g, &format!("{prefix}.bias"));
                let proj = g.matmul(x, w_ih)?;
                let proj = g.add_row_bias(proj, bias)?;
                let gates = g.reshape(proj, &[b, t, 4 * h])?;
                outs.push(g.lstm_recurrence(gates, w_hh, reverse)?);
            }
            let cat = g.concat(&outs, 2)?;
            x = g.reshape(cat, &[b * t, 2 * h])?;
        }

        let embeddings = if heads.embedding {
            let w = pvar(g, "embedding.weight");
            let bias = pvar(g, "embedding.bias");
            let z = g.matmul(x, w)?;
            let z = g.add_row_bias(z, bias)?;
            let s = g.sigmoid(z);
            let rows = g.reshape(s, &[b * t * f, cfg.embedding_dim])?;
            Some(g.l2_normalize(rows, 1)?)
        } else {
            None
        };
        let masks = if heads.mask {
            let w = pvar(g, "mask.weight");
            let bias = pvar(g, "mask.bias");
            let z = g.matmul(x, w)?;
            let z = g.add_row_bias(z, bias)?;
            let rows = g.reshape(z, &[b * t * f, cfg.n_sources])?;
            Some(g.softmax(rows, 1)?)
        } else {
            None
        };
        Ok(ForwardVars {
            embeddings,
            masks,
            params: vars,
        })
    }

    /// Inference pass returning both heads.
    pub fn forward(&self, input: &LogMagBatch<T>) -> Result<ForwardOutput<T>> {
        let mut g = Graph::new();
        let out = self.forward_graph(&mut g, input, Heads::BOTH)?;
        Ok(ForwardOutput {
            embeddings: g.value(out.embeddings.expect("requested")).clone(),
            masks: g.value(out.masks.expect("requested")).clone(),
            batch: input.batch(),
            n_time: input.n_time(),
            n_freq: input.n_freq(),
        })
    }
}
