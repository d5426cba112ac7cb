//! Switch-MoE classifier: embedding → L switch blocks with residual →
//! mean-pool → linear classifier, with explicit forward and backward passes
//! that expose everything per-sample gradient computation needs.

mod backward;
mod checkpoint;
mod config;
mod forward;
mod layer;
mod loss;
mod params;

pub use backward::{model_backward, BackwardTrace};
pub use checkpoint::{load_checkpoint, save_checkpoint};
pub use config::{LbMode, SwitchConfig};
pub use forward::{model_forward, ForwardTrace, LayerTrace};
pub use layer::{
    balance_loss, expert_load, gate_forward, route, switch_forward, switch_forward_traced,
    ExpertSlotActs, GateOutput, RoutingTable,
};
pub use loss::{cross_entropy, CrossEntropy};
pub use params::{param_order, ExpertParams, LayerParams, ModelParams, ParamId};

/// A batch of token-id sequences, shape `[batch, tokens]` row-major.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TokenBatch {
    ids: Vec<usize>,
    batch: usize,
    tokens: usize,
}

impl TokenBatch {
    pub fn new(ids: Vec<usize>, batch: usize, tokens: usize) -> crate::Result<Self> {
        if ids.len() != batch * tokens {
            return Err(crate::Error::shape(
                "TokenBatch",
                format!("{} ids", batch * tokens),
                format!("{}", ids.len()),
            ));
        }
        Ok(TokenBatch { ids, batch, tokens })
    }

    pub fn batch(&self) -> usize {
        self.batch
    }

    pub fn tokens(&self) -> usize {
        self.tokens
    }

    #[inline]
    pub fn id(&self, b: usize, t: usize) -> usize {
        self.ids[b * self.tokens + t]
    }

    pub fn ids(&self) -> &[usize] {
        &self.ids
    }

    /// Rows `b` of this batch as a single-sample batch.
    pub fn sample(&self, b: usize) -> TokenBatch {
        let row = &self.ids[b * self.tokens..(b + 1) * self.tokens];
        TokenBatch {
            ids: row.to_vec(),
            batch: 1,
            tokens: self.tokens,
        }
    }

    /// Select a subset of rows, preserving order.
    pub fn select(&self, rows: &[usize]) -> TokenBatch {
        let mut ids = Vec::with_capacity(rows.len() * self.tokens);
        for &b in rows {
            ids.extend_from_slice(&self.ids[b * self.tokens..(b + 1) * self.tokens]);
        }
        TokenBatch {
            ids,
            batch: rows.len(),
            tokens: self.tokens,
        }
    }
}
