use crate::error::{Error, Result};
use crate::tensor::{softmax, Tensor};

/// Softmax cross-entropy over class logits.
#[derive(Debug, Clone)]
pub struct CrossEntropy {
    /// Per-sample losses `L_b = -log softmax(logits_b)[label_b]`.
    pub per_sample: Vec<f64>,
    /// Mean loss over the batch.
    pub mean: f64,
    /// `[B, K]` gradient of `L_b` w.r.t. `logits[b]` (row `b` only); divide by
    /// `B` for the gradient of the mean loss.
    pub d_logits_per_sample: Tensor,
}

pub fn cross_entropy(logits: &Tensor, labels: &[usize]) -> Result<CrossEntropy> {
    if logits.rank() != 2 {
        return Err(Error::shape("cross_entropy", "rank 2 [B,K]", format!("rank {}", logits.rank())));
    }
    let (b, k) = (logits.shape()[0], logits.shape()[1]);
    if labels.len() != b {
        return Err(Error::shape("cross_entropy", format!("{b} labels"), format!("{}", labels.len())));
    }
    if let Some(&bad) = labels.iter().find(|&&y| y >= k) {
        return Err(Error::InvalidParameter(format!("label {bad} out of range for {k} classes")));
    }
    let probs = softmax(logits);
    let mut per_sample = Vec::with_capacity(b);
    let mut d = probs.clone();
    for bi in 0..b {
        let p = probs.at2(bi, labels[bi]);
        per_sample.push(-p.max(1e-300).ln());
        let row = d.row_mut(bi);
        row[labels[bi]] -= 1.0;
    }
    let mean = per_sample.iter().sum::<f64>() / b as f64;
    Ok(CrossEntropy {
        per_sample,
        mean,
        d_logits_per_sample: d,
    })
}
