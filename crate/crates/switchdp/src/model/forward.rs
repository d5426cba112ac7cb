use crate::error::{Error, Result};
use crate::model::{
    gate_forward, route, switch_forward_traced, ExpertSlotActs, GateOutput, ModelParams,
    RoutingTable, SwitchConfig, TokenBatch,
};
use crate::tensor::{matmul_nt, Tensor};

/// Everything the backward pass and the per-sample gradient rules need from
/// one switch block.
#[derive(Debug, Clone)]
pub struct LayerTrace {
    /// `[B, T, H]` input to the block (gate input and expert input).
    pub x_in: Tensor,
    pub gate: GateOutput,
    pub routing: RoutingTable,
    pub acts: ExpertSlotActs,
}

/// Activations recorded by [`model_forward`].
#[derive(Debug, Clone)]
pub struct ForwardTrace {
    pub tokens: TokenBatch,
    pub layers: Vec<LayerTrace>,
    /// `[B, T, H]` output of the last block (input to mean-pool).
    pub x_out: Tensor,
    /// `[B, H]` mean-pooled features.
    pub pooled: Tensor,
    /// `[B, K]` classifier output.
    pub class_logits: Tensor,
}

impl ForwardTrace {
    /// Sum of the per-layer balance losses (zero when lb_mode is off).
    pub fn balance_loss(&self, cfg: &SwitchConfig) -> Result<f64> {
        if cfg.lb_mode == crate::model::LbMode::Off {
            return Ok(0.0);
        }
        let t_total = self.tokens.batch() * self.tokens.tokens();
        let mut total = 0.0;
        for layer in &self.layers {
            total += crate::model::balance_loss(&layer.gate, cfg.alpha, t_total)?;
        }
        Ok(total)
    }
}

/// Embedding lookup → L switch blocks with residual → mean-pool → classifier.
pub fn model_forward(
    tokens: &TokenBatch,
    params: &ModelParams,
    cfg: &SwitchConfig,
) -> Result<(Tensor, ForwardTrace)> {
    let (b, t, h) = (tokens.batch(), tokens.tokens(), cfg.hidden);
    if t != cfg.max_tokens {
        return Err(Error::shape(
            "model_forward",
            format!("{} tokens", cfg.max_tokens),
            format!("{t}"),
        ));
    }
    if let Some(&bad) = tokens.ids().iter().find(|&&id| id >= cfg.vocab) {
        return Err(Error::InvalidParameter(format!(
            "token id {bad} out of vocabulary ({})",
            cfg.vocab
        )));
    }

    let mut x = Tensor::zeros(&[b, t, h]);
    for bi in 0..b {
        for ti in 0..t {
            x.slice3_mut(bi, ti)
                .copy_from_slice(params.embedding.row(tokens.id(bi, ti)));
        }
    }

    let capacity = cfg.capacity(b);
    let mut layers = Vec::with_capacity(cfg.num_layers);
    for layer in &params.layers {
        let gate = gate_forward(&x, &layer.gate)?;
        let routing = route(&gate, capacity)?;
        let (out, acts) = switch_forward_traced(&x, layer, &routing, &gate)?;
        let x_in = x.clone();
        x.add_assign(&out); // residual
        layers.push(LayerTrace {
            x_in,
            gate,
            routing,
            acts,
        });
    }

    let mut pooled = Tensor::zeros(&[b, h]);
    let inv_t = 1.0 / t as f64;
    for bi in 0..b {
        let row = pooled.row_mut(bi);
        for ti in 0..t {
            for (o, &v) in row.iter_mut().zip(x.slice3(bi, ti).iter()) {
                *o += v * inv_t;
            }
        }
    }

    let class_logits = matmul_nt(&pooled, &params.classifier)?;
    if !class_logits.all_finite() {
        return Err(Error::Diverged("non-finite class logits".into()));
    }
    let trace = ForwardTrace {
        tokens: tokens.clone(),
        layers,
        x_out: x,
        pooled,
        class_logits: class_logits.clone(),
    };
    Ok((class_logits, trace))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::LbMode;
    use crate::rng::RngState;

    fn cfg(l: usize) -> SwitchConfig {
        SwitchConfig {
            num_experts: 3,
            capacity_factor: 3.0, // = N, ample
            alpha: 0.01,
            lb_mode: LbMode::Batch,
            freeze_gating: false,
            hidden: 6,
            ffn_dim: 5,
            num_layers: l,
            vocab: 11,
            classes: 4,
            max_tokens: 4,
        }
    }

    fn batch(seed: u64, b: usize, t: usize, v: usize) -> TokenBatch {
        let mut rng = RngState::new(seed, 0);
        let ids = (0..b * t).map(|_| rng.uniform_usize(v)).collect();
        TokenBatch::new(ids, b, t).unwrap()
    }

    #[test]
    fn zero_layer_model_is_pool_classifier() {
        let cfg = cfg(0);
        let params = ModelParams::init(&cfg, 1).unwrap();
        let tokens = batch(2, 3, 4, cfg.vocab);
        let (logits, trace) = model_forward(&tokens, &params, &cfg).unwrap();
        assert!(trace.layers.is_empty());
        for b in 0..3 {
            let mut pooled = vec![0.0; cfg.hidden];
            for t in 0..4 {
                for (h, p) in pooled.iter_mut().enumerate() {
                    *p += params.embedding.at2(tokens.id(b, t), h) / 4.0;
                }
            }
            for k in 0..cfg.classes {
                let want: f64 = pooled
                    .iter()
                    .zip(params.classifier.row(k).iter())
                    .map(|(a, w)| a * w)
                    .sum();
                assert!((logits.at2(b, k) - want).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn permuting_samples_permutes_rows() {
        let cfg = cfg(2);
        let params = ModelParams::init(&cfg, 3).unwrap();
        let tokens = batch(4, 4, 4, cfg.vocab);
        let (logits, _) = model_forward(&tokens, &params, &cfg).unwrap();
        let perm = [2usize, 0, 3, 1];
        let permuted = tokens.select(&perm);
        let (plogits, _) = model_forward(&permuted, &params, &cfg).unwrap();
        for (i, &b) in perm.iter().enumerate() {
            for k in 0..cfg.classes {
                assert!((plogits.at2(i, k) - logits.at2(b, k)).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn straight_line_reimplementation_oracle() {
        // Independent scalar-loop recomputation of the full forward pass.
        let cfg = cfg(2);
        let params = ModelParams::init(&cfg, 5).unwrap();
        let tokens = batch(6, 2, 4, cfg.vocab);
        let (logits, _) = model_forward(&tokens, &params, &cfg).unwrap();

        let (b, t, h, n, f) = (2, 4, cfg.hidden, cfg.num_experts, cfg.ffn_dim);
        let cap = cfg.capacity(b);
        let mut x = vec![vec![vec![0.0f64; h]; t]; b];
        for bi in 0..b {
            for ti in 0..t {
                for hi in 0..h {
                    x[bi][ti][hi] = params.embedding.at2(tokens.id(bi, ti), hi);
                }
            }
        }
        for layer in &params.layers {
            // gate
            let mut top = vec![vec![0usize; t]; b];
            let mut probs = vec![vec![vec![0.0f64; n]; t]; b];
            for bi in 0..b {
                for ti in 0..t {
                    let mut logit = vec![0.0f64; n];
                    for (ni, lv) in logit.iter_mut().enumerate() {
                        for hi in 0..h {
                            *lv += x[bi][ti][hi] * layer.gate.at2(ni, hi);
                        }
                    }
                    let mx = logit.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                    let exps: Vec<f64> = logit.iter().map(|v| (v - mx).exp()).collect();
                    let s: f64 = exps.iter().sum();
                    for ni in 0..n {
                        probs[bi][ti][ni] = exps[ni] / s;
                    }
                    let mut best = 0;
                    for ni in 1..n {
                        if logit[ni] > logit[best] {
                            best = ni;
                        }
                    }
                    top[bi][ti] = best;
                }
            }
            // route + expert + residual
            let mut used = vec![0usize; n];
            let mut next = vec![vec![vec![0.0f64; h]; t]; b];
            for bi in 0..b {
                for ti in 0..t {
                    let e = top[bi][ti];
                    let routed = used[e] < cap;
                    if routed {
                        used[e] += 1;
                    }
                    let mut out = vec![0.0f64; h];
                    if routed {
                        let mut z1 = vec![0.0f64; f];
                        for (fi, z) in z1.iter_mut().enumerate() {
                            for hi in 0..h {
                                *z += layer.experts[e].w1.at2(fi, hi) * x[bi][ti][hi];
                            }
                            if *z < 0.0 {
                                *z = 0.0;
                            }
                        }
                        for (hi, o) in out.iter_mut().enumerate() {
                            for fi in 0..f {
                                *o += layer.experts[e].w2.at2(hi, fi) * z1[fi];
                            }
                            *o *= probs[bi][ti][e];
                        }
                    }
                    for hi in 0..h {
                        next[bi][ti][hi] = x[bi][ti][hi] + out[hi];
                    }
                }
            }
            x = next;
        }
        for bi in 0..b {
            let mut pooled = vec![0.0f64; h];
            for ti in 0..t {
                for hi in 0..h {
                    pooled[hi] += x[bi][ti][hi] / t as f64;
                }
            }
            for k in 0..cfg.classes {
                let mut want = 0.0;
                for hi in 0..h {
                    want += pooled[hi] * params.classifier.at2(k, hi);
                }
                assert!(
                    (logits.at2(bi, k) - want).abs() < 1e-12,
                    "mismatch at ({bi},{k})"
                );
            }
        }
    }

    #[test]
    fn out_of_vocab_rejected() {
        let cfg = cfg(1);
        let params = ModelParams::init(&cfg, 1).unwrap();
        let tokens = TokenBatch::new(vec![0, 1, 2, 99], 1, 4).unwrap();
        assert!(model_forward(&tokens, &params, &cfg).is_err());
    }
}
