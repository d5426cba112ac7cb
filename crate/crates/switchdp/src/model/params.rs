use std::fmt;

use crate::error::{Error, Result};
use crate::model::SwitchConfig;
use crate::rng::RngState;
use crate::tensor::Tensor;

/// Identity of one parameter tensor (one clipping/noise group).
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum ParamId {
    Embedding,
    Gate(usize),
    ExpertW1(usize, usize),
    ExpertW2(usize, usize),
    Classifier,
}

impl ParamId {
    pub fn is_gate(&self) -> bool {
        matches!(self, ParamId::Gate(_))
    }

    /// Layer/expert owner for expert-sharded parameters.
    pub fn expert(&self) -> Option<(usize, usize)> {
        match *self {
            ParamId::ExpertW1(l, e) | ParamId::ExpertW2(l, e) => Some((l, e)),
            _ => None,
        }
    }
}

impl fmt::Display for ParamId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match *self {
            ParamId::Embedding => write!(f, "embedding"),
            ParamId::Gate(l) => write!(f, "layer{l}.gate"),
            ParamId::ExpertW1(l, e) => write!(f, "layer{l}.expert{e}.w1"),
            ParamId::ExpertW2(l, e) => write!(f, "layer{l}.expert{e}.w2"),
            ParamId::Classifier => write!(f, "classifier"),
        }
    }
}

/// Canonical ordering of parameter groups. Every iteration over parameters in
/// the crate (clipping, noise streams, optimizer, checkpoints, the parallel
/// simulator) follows this order so floating-point reductions agree bitwise.
pub fn param_order(cfg: &SwitchConfig) -> Vec<ParamId> {
    let mut ids = vec![ParamId::Embedding];
    for l in 0..cfg.num_layers {
        ids.push(ParamId::Gate(l));
        for e in 0..cfg.num_experts {
            ids.push(ParamId::ExpertW1(l, e));
            ids.push(ParamId::ExpertW2(l, e));
        }
    }
    ids.push(ParamId::Classifier);
    ids
}

/// One expert's feed-forward weights: out = w2 · relu(w1 · x).
#[derive(Debug, Clone, PartialEq)]
pub struct ExpertParams {
    /// `[F, H]`
    pub w1: Tensor,
    /// `[H, F]`
    pub w2: Tensor,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LayerParams {
    /// Gating weights `[N, H]`.
    pub gate: Tensor,
    pub experts: Vec<ExpertParams>,
}

/// All trainable tensors of the classifier.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    /// `[V, H]`
    pub embedding: Tensor,
    pub layers: Vec<LayerParams>,
    /// `[K, H]`
    pub classifier: Tensor,
}

impl ModelParams {
    /// Deterministic initialization; each parameter group draws from its own
    /// stream of the init seed, so layouts with the same shapes match.
    pub fn init(cfg: &SwitchConfig, seed: u64) -> Result<Self> {
        cfg.validate()?;
        let order = param_order(cfg);
        let draw = |id: &ParamId, stream: u64| -> Result<Tensor> {
            let mut rng = RngState::new(seed, stream);
            match *id {
                ParamId::Embedding => rng.gaussian(&[cfg.vocab, cfg.hidden], 0.1),
                ParamId::Gate(_) => {
                    rng.gaussian(&[cfg.num_experts, cfg.hidden], 1.0 / (cfg.hidden as f64).sqrt())
                }
                ParamId::ExpertW1(_, _) => {
                    rng.gaussian(&[cfg.ffn_dim, cfg.hidden], (2.0 / cfg.hidden as f64).sqrt())
                }
                ParamId::ExpertW2(_, _) => {
                    rng.gaussian(&[cfg.hidden, cfg.ffn_dim], (2.0 / cfg.ffn_dim as f64).sqrt())
                }
                ParamId::Classifier => {
                    rng.gaussian(&[cfg.classes, cfg.hidden], 1.0 / (cfg.hidden as f64).sqrt())
                }
            }
        };
        let mut tensors = Vec::with_capacity(order.len());
        for (i, id) in order.iter().enumerate() {
            tensors.push(draw(id, i as u64)?);
        }
        Self::from_ordered(cfg, tensors)
    }

    /// Zero tensors with the same shapes as `self` (gradient container).
    pub fn zeros_like(&self) -> Self {
        ModelParams {
            embedding: Tensor::zeros(self.embedding.shape()),
            layers: self
                .layers
                .iter()
                .map(|l| LayerParams {
                    gate: Tensor::zeros(l.gate.shape()),
                    experts: l
                        .experts
                        .iter()
                        .map(|e| ExpertParams {
                            w1: Tensor::zeros(e.w1.shape()),
                            w2: Tensor::zeros(e.w2.shape()),
                        })
                        .collect(),
                })
                .collect(),
            classifier: Tensor::zeros(self.classifier.shape()),
        }
    }

    fn from_ordered(cfg: &SwitchConfig, tensors: Vec<Tensor>) -> Result<Self> {
        let mut it = tensors.into_iter();
        let embedding = it.next().ok_or_else(|| Error::Checkpoint("missing embedding".into()))?;
        let mut layers = Vec::with_capacity(cfg.num_layers);
        for _ in 0..cfg.num_layers {
            let gate = it.next().ok_or_else(|| Error::Checkpoint("missing gate".into()))?;
            let mut experts = Vec::with_capacity(cfg.num_experts);
            for _ in 0..cfg.num_experts {
                let w1 = it.next().ok_or_else(|| Error::Checkpoint("missing w1".into()))?;
                let w2 = it.next().ok_or_else(|| Error::Checkpoint("missing w2".into()))?;
                experts.push(ExpertParams { w1, w2 });
            }
            layers.push(LayerParams { gate, experts });
        }
        let classifier = it.next().ok_or_else(|| Error::Checkpoint("missing classifier".into()))?;
        Ok(ModelParams {
            embedding,
            layers,
            classifier,
        })
    }

    pub fn get(&self, id: ParamId) -> &Tensor {
        match id {
            ParamId::Embedding => &self.embedding,
            ParamId::Gate(l) => &self.layers[l].gate,
            ParamId::ExpertW1(l, e) => &self.layers[l].experts[e].w1,
            ParamId::ExpertW2(l, e) => &self.layers[l].experts[e].w2,
            ParamId::Classifier => &self.classifier,
        }
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Tensor {
        match id {
            ParamId::Embedding => &mut self.embedding,
            ParamId::Gate(l) => &mut self.layers[l].gate,
            ParamId::ExpertW1(l, e) => &mut self.layers[l].experts[e].w1,
            ParamId::ExpertW2(l, e) => &mut self.layers[l].experts[e].w2,
            ParamId::Classifier => &mut self.classifier,
        }
    }

    /// Canonically ordered `(id, tensor)` view.
    pub fn named(&self, cfg: &SwitchConfig) -> Vec<(ParamId, &Tensor)> {
        param_order(cfg)
            .into_iter()
            .map(|id| (id, self.get(id)))
            .collect()
    }

    pub fn all_finite(&self) -> bool {
        self.embedding.all_finite()
            && self.classifier.all_finite()
            && self.layers.iter().all(|l| {
                l.gate.all_finite() && l.experts.iter().all(|e| e.w1.all_finite() && e.w2.all_finite())
            })
    }

    pub fn validate_shapes(&self, cfg: &SwitchConfig) -> Result<()> {
        let check = |t: &Tensor, shape: &[usize], what: &str| -> Result<()> {
            if t.shape() != shape {
                return Err(Error::shape(
                    "params",
                    format!("{what} {shape:?}"),
                    format!("{:?}", t.shape()),
                ));
            }
            Ok(())
        };
        check(&self.embedding, &[cfg.vocab, cfg.hidden], "embedding")?;
        if self.layers.len() != cfg.num_layers {
            return Err(Error::shape(
                "params",
                format!("{} layers", cfg.num_layers),
                format!("{}", self.layers.len()),
            ));
        }
        for l in &self.layers {
            check(&l.gate, &[cfg.num_experts, cfg.hidden], "gate")?;
            if l.experts.len() != cfg.num_experts {
                return Err(Error::shape(
                    "params",
                    format!("{} experts", cfg.num_experts),
                    format!("{}", l.experts.len()),
                ));
            }
            for e in &l.experts {
                check(&e.w1, &[cfg.ffn_dim, cfg.hidden], "w1")?;
                check(&e.w2, &[cfg.hidden, cfg.ffn_dim], "w2")?;
            }
        }
        check(&self.classifier, &[cfg.classes, cfg.hidden], "classifier")
    }

    pub fn max_abs_diff(&self, other: &Self, cfg: &SwitchConfig) -> f64 {
        self.named(cfg)
            .iter()
            .zip(other.named(cfg).iter())
            .map(|((_, a), (_, b))| a.max_abs_diff(b))
            .fold(0.0, f64::max)
    }
}
