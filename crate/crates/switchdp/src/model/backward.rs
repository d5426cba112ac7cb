use crate::error::{Error, Result};
use crate::model::{ForwardTrace, LbMode, ModelParams, SwitchConfig};
use crate::tensor::{dot, matmul, matmul_tn, Tensor};

/// Per-token output gradients retained by [`model_backward`], keyed the same
/// way the forward trace is: gate gradients per `(b, t)`, expert gradients
/// per slot.
#[derive(Debug, Clone)]
pub struct BackwardTrace {
    /// `[B, K]` gradient at the classifier output, as passed in.
    pub d_class_logits: Tensor,
    /// Per layer `[B, T, N]` gradient at the gate logits.
    pub d_gate_logits: Vec<Tensor>,
    /// Per layer, per expert `[occ, F]` gradient at the first expert layer
    /// pre-activation.
    pub d_z1: Vec<Vec<Option<Tensor>>>,
    /// Per layer, per expert `[occ, H]` gradient at the expert output.
    pub d_z2: Vec<Vec<Option<Tensor>>>,
    /// `[B, T, H]` gradient at the embedding output.
    pub d_x0: Tensor,
}

/// Exact reverse-mode gradients of `scalar(d_logits) + balance_weight * lb`
/// where `scalar` is any loss whose gradient at the class logits is
/// `d_logits`, and `lb` is the batch balance loss (only when `lb_mode` is
/// `batch`). Gate gradients are zeroed after computation when
/// `freeze_gating` is set.
pub fn model_backward(
    trace: &ForwardTrace,
    d_logits: &Tensor,
    balance_weight: f64,
    params: &ModelParams,
    cfg: &SwitchConfig,
) -> Result<(ModelParams, BackwardTrace)> {
    let (b, t, h) = (
        trace.tokens.batch(),
        trace.tokens.tokens(),
        cfg.hidden,
    );
    if d_logits.shape() != trace.class_logits.shape() {
        return Err(Error::shape(
            "model_backward",
            format!("{:?}", trace.class_logits.shape()),
            format!("{:?}", d_logits.shape()),
        ));
    }
    if trace.layers.len() != params.layers.len() {
        return Err(Error::shape(
            "model_backward",
            format!("{} layers", params.layers.len()),
            format!("{}", trace.layers.len()),
        ));
    }

    let mut grads = params.zeros_like();

    // Classifier: logits = pooled · Wc^T.
    grads.classifier = matmul_tn(d_logits, &trace.pooled)?;
    let d_pooled = matmul(d_logits, &params.classifier)?; // [B, H]

    // Mean-pool: x_out receives d_pooled / T per position.
    let inv_t = 1.0 / t as f64;
    let mut dx = Tensor::zeros(&[b, t, h]);
    for bi in 0..b {
        for ti in 0..t {
            for (o, &v) in dx.slice3_mut(bi, ti).iter_mut().zip(d_pooled.row(bi).iter()) {
                *o = v * inv_t;
            }
        }
    }

    let n = cfg.num_experts;
    let include_balance =
        balance_weight != 0.0 && cfg.lb_mode == LbMode::Batch && cfg.alpha != 0.0;
    let mut d_gate_logits_rev: Vec<Tensor> = Vec::with_capacity(trace.layers.len());
    let mut d_z1_rev: Vec<Vec<Option<Tensor>>> = Vec::with_capacity(trace.layers.len());
    let mut d_z2_rev: Vec<Vec<Option<Tensor>>> = Vec::with_capacity(trace.layers.len());

    for (l, lt) in trace.layers.iter().enumerate().rev() {
        let layer = &params.layers[l];
        let dy = dx; // gradient at this block's output y = x + out
        let mut dxl = dy.clone(); // residual path

        // Probability-space gate gradient, accumulated per token and pushed
        // through the softmax Jacobian at the end.
        let mut d_prob = Tensor::zeros(&[b, t, n]);

        if include_balance {
            let t_total = (b * t) as f64;
            let mut f = vec![0.0f64; n];
            for &e in &lt.gate.top_expert {
                f[e] += 1.0;
            }
            // d lb / d p_i(x) = alpha * N * f_i / T^2 for every token.
            let scale = balance_weight * cfg.alpha * n as f64 / (t_total * t_total);
            for bi in 0..b {
                for ti in 0..t {
                    for (o, fi) in d_prob.slice3_mut(bi, ti).iter_mut().zip(f.iter()) {
                        *o += scale * fi;
                    }
                }
            }
        }

        let mut d_z1_l: Vec<Option<Tensor>> = vec![None; n];
        let mut d_z2_l: Vec<Option<Tensor>> = vec![None; n];
        for e in 0..n {
            let occ = lt.routing.occupancy(e);
            if occ == 0 {
                continue;
            }
            let z1 = lt.acts.z1[e].as_ref().expect("occupied expert has z1");
            let z2 = lt.acts.z2[e].as_ref().expect("occupied expert has z2");

            // dL/dz2 = p * dy at the slot's token; dL/dp_e += dy · z2.
            let mut dz2 = Tensor::zeros(&[occ, h]);
            let mut u = Tensor::zeros(&[occ, h]);
            for (c, &(ob, ot)) in lt.routing.slots(e).iter().enumerate() {
                let dyv = dy.slice3(ob, ot);
                let p = lt.gate.probs.at3(ob, ot, e);
                for (o, &v) in dz2.row_mut(c).iter_mut().zip(dyv.iter()) {
                    *o = p * v;
                }
                u.row_mut(c).copy_from_slice(lt.x_in.slice3(ob, ot));
                let dg = dot(dyv, z2.row(c));
                let k = (ob * t + ot) * n + e;
                d_prob.data_mut()[k] += dg;
            }

            let a = crate::tensor::relu(z1);
            let mut dz1 = matmul(&dz2, &layer.experts[e].w2)?; // [occ, F]
            for (dv, &zv) in dz1.data_mut().iter_mut().zip(z1.data().iter()) {
                if zv <= 0.0 {
                    *dv = 0.0;
                }
            }

            grads.layers[l].experts[e].w2.add_assign(&matmul_tn(&dz2, &a)?);
            grads.layers[l].experts[e].w1.add_assign(&matmul_tn(&dz1, &u)?);

            // Expert-input gradient back to the token.
            let du = matmul(&dz1, &layer.experts[e].w1)?; // [occ, H]
            for (c, &(ob, ot)) in lt.routing.slots(e).iter().enumerate() {
                for (o, &v) in dxl.slice3_mut(ob, ot).iter_mut().zip(du.row(c).iter()) {
                    *o += v;
                }
            }
            d_z1_l[e] = Some(dz1);
            d_z2_l[e] = Some(dz2);
        }

        // Softmax Jacobian: dlogit_j = p_j * (dprob_j - sum_i dprob_i p_i).
        let mut d_gate = Tensor::zeros(&[b, t, n]);
        for bi in 0..b {
            for ti in 0..t {
                let p = lt.gate.probs.slice3(bi, ti);
                let dp = d_prob.slice3(bi, ti);
                let inner = dot(dp, p);
                for (o, (pj, dpj)) in d_gate
                    .slice3_mut(bi, ti)
                    .iter_mut()
                    .zip(p.iter().zip(dp.iter()))
                {
                    *o = pj * (dpj - inner);
                }
            }
        }

        // Gate weights and gate-input gradient.
        grads.layers[l].gate.add_assign(&matmul_tn(&d_gate, &lt.x_in)?);
        let dx_gate = matmul(&d_gate, &layer.gate)?; // [B*T, H]
        for (o, &v) in dxl.data_mut().iter_mut().zip(dx_gate.data().iter()) {
            *o += v;
        }

        d_gate_logits_rev.push(d_gate);
        d_z1_rev.push(d_z1_l);
        d_z2_rev.push(d_z2_l);
        dx = dxl;
    }

    // Embedding scatter.
    for bi in 0..b {
        for ti in 0..t {
            let id = trace.tokens.id(bi, ti);
            for (o, &v) in grads
                .embedding
                .row_mut(id)
                .iter_mut()
                .zip(dx.slice3(bi, ti).iter())
            {
                *o += v;
            }
        }
    }

    if cfg.freeze_gating {
        for l in &mut grads.layers {
            l.gate = Tensor::zeros(l.gate.shape());
        }
    }

    d_gate_logits_rev.reverse();
    d_z1_rev.reverse();
    d_z2_rev.reverse();
    Ok((
        grads,
        BackwardTrace {
            d_class_logits: d_logits.clone(),
            d_gate_logits: d_gate_logits_rev,
            d_z1: d_z1_rev,
            d_z2: d_z2_rev,
            d_x0: dx,
        },
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{cross_entropy, model_forward, param_order, TokenBatch};
    use crate::rng::RngState;

    fn cfg() -> SwitchConfig {
        SwitchConfig {
            num_experts: 3,
            capacity_factor: 3.0,
            alpha: 0.01,
            lb_mode: LbMode::Batch,
            freeze_gating: false,
            hidden: 6,
            ffn_dim: 5,
            num_layers: 2,
            vocab: 9,
            classes: 3,
            max_tokens: 4,
        }
    }

    fn batch(seed: u64, b: usize, cfg: &SwitchConfig) -> (TokenBatch, Vec<usize>) {
        let mut rng = RngState::new(seed, 0);
        let ids = (0..b * cfg.max_tokens)
            .map(|_| rng.uniform_usize(cfg.vocab))
            .collect();
        let labels = (0..b).map(|_| rng.uniform_usize(cfg.classes)).collect();
        (TokenBatch::new(ids, b, cfg.max_tokens).unwrap(), labels)
    }

    /// Total loss (mean CE + balance) for finite differencing.
    fn total_loss(
        tokens: &TokenBatch,
        labels: &[usize],
        params: &ModelParams,
        cfg: &SwitchConfig,
    ) -> f64 {
        let (logits, trace) = model_forward(tokens, params, cfg).unwrap();
        let ce = cross_entropy(&logits, labels).unwrap();
        ce.mean + trace.balance_loss(cfg).unwrap()
    }

    fn analytic_grads(
        tokens: &TokenBatch,
        labels: &[usize],
        params: &ModelParams,
        cfg: &SwitchConfig,
    ) -> ModelParams {
        let (logits, trace) = model_forward(tokens, params, cfg).unwrap();
        let ce = cross_entropy(&logits, labels).unwrap();
        let mut d = ce.d_logits_per_sample.clone();
        d.scale(1.0 / tokens.batch() as f64);
        model_backward(&trace, &d, 1.0, params, cfg).unwrap().0
    }

    #[test]
    fn zero_dlogits_zero_grads() {
        let cfg = cfg();
        let params = ModelParams::init(&cfg, 1).unwrap();
        let (tokens, _) = batch(2, 2, &cfg);
        let (_, trace) = model_forward(&tokens, &params, &cfg).unwrap();
        let d = Tensor::zeros(&[2, cfg.classes]);
        let (grads, _) = model_backward(&trace, &d, 0.0, &params, &cfg).unwrap();
        for (_, g) in grads.named(&cfg) {
            assert!(g.data().iter().all(|&v| v == 0.0));
        }
    }

    #[test]
    fn finite_difference_gradcheck() {
        // Central differences (h = 1e-5) on the total loss; relative error
        // < 1e-5 per coordinate with a 1e-3 denominator floor.
        let cfg = cfg();
        let mut params = ModelParams::init(&cfg, 7).unwrap();
        let (tokens, labels) = batch(8, 2, &cfg);
        let grads = analytic_grads(&tokens, &labels, &params, &cfg);

        let h = 1e-5;
        let order = param_order(&cfg);
        for id in order {
            let len = params.get(id).len();
            for i in 0..len {
                let orig = params.get(id).data()[i];
                params.get_mut(id).data_mut()[i] = orig + h;
                let up = total_loss(&tokens, &labels, &params, &cfg);
                params.get_mut(id).data_mut()[i] = orig - h;
                let down = total_loss(&tokens, &labels, &params, &cfg);
                params.get_mut(id).data_mut()[i] = orig;
                let fd = (up - down) / (2.0 * h);
                let an = grads.get(id).data()[i];
                let denom = an.abs().max(fd.abs()).max(1e-3);
                assert!(
                    (an - fd).abs() / denom < 1e-5,
                    "{id}[{i}]: analytic {an} vs fd {fd}"
                );
            }
        }
    }

    #[test]
    fn freeze_gating_zeroes_only_gate() {
        let mut cfg = cfg();
        let params = ModelParams::init(&cfg, 9).unwrap();
        let (tokens, labels) = batch(10, 3, &cfg);

        cfg.freeze_gating = false;
        let open = analytic_grads(&tokens, &labels, &params, &cfg);
        cfg.freeze_gating = true;
        let frozen = analytic_grads(&tokens, &labels, &params, &cfg);

        for (id, g) in frozen.named(&cfg) {
            if id.is_gate() {
                assert!(g.data().iter().all(|&v| v == 0.0));
            } else {
                assert_eq!(g.data(), open.get(id).data(), "{id} changed by freeze");
            }
        }
        assert!(open
            .named(&cfg)
            .iter()
            .any(|(id, g)| id.is_gate() && g.data().iter().any(|&v| v != 0.0)));
    }

    #[test]
    fn dropped_tokens_contribute_no_expert_gradient() {
        let mut cfg = cfg();
        cfg.capacity_factor = 1.0;
        cfg.num_layers = 1;
        let params = ModelParams::init(&cfg, 11).unwrap();
        let (tokens, labels) = batch(12, 3, &cfg);
        let (logits, trace) = model_forward(&tokens, &params, &cfg).unwrap();
        assert!(trace.layers[0].routing.drop_count() > 0);
        let ce = cross_entropy(&logits, &labels).unwrap();
        let (_, bt) = model_backward(&trace, &ce.d_logits_per_sample, 0.0, &params, &cfg).unwrap();
        // Slot gradient arrays cover exactly the occupied slots.
        for e in 0..cfg.num_experts {
            let occ = trace.layers[0].routing.occupancy(e);
            match &bt.d_z2[0][e] {
                Some(t) => assert_eq!(t.shape()[0], occ),
                None => assert_eq!(occ, 0),
            }
        }
    }
}
