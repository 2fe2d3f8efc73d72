//! The two translation models and their shared training step.

pub mod g2t;
pub mod t2g;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{Adam, Grads, ParamSet, Tape, Var};

pub use g2t::{
    g2t_batch_loss, g2t_generate, g2t_loss, g2t_loss_and_grads, g2t_train_step, generate_ids,
    match_entity_spans, next_token_logits, DecodeConfig, G2TConfig, G2TExample, G2TModel,
};
pub use t2g::{
    classify_edges, edge_scores, encode_tokens, graph_from_scores, pool_entity, t2g_batch_loss,
    t2g_loss, t2g_loss_and_grads, t2g_predict, t2g_train_step, EdgeScores, T2GConfig, T2GExample,
    T2GModel,
};

/// Hyperparameters of both models.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub t2g: T2GConfig,
    pub g2t: G2TConfig,
}

impl ModelConfig {
    /// Small sizes that train on one CPU core in minutes.
    pub fn desk() -> Self {
        ModelConfig {
            t2g: T2GConfig::desk(),
            g2t: G2TConfig::desk(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.t2g.validate()?;
        self.g2t.validate()
    }
}

pub(crate) fn check_positive(field: &'static str, value: usize) -> Result<()> {
    if value == 0 {
        return Err(Error::InvalidConfig {
            field,
            reason: "must be positive".into(),
        });
    }
    Ok(())
}

/// One optimizer step on the mean loss of `batch`.
///
/// Per-example gradients are computed in parallel and summed in batch order,
/// so the result does not depend on the thread count. Returns the pre-update
/// mean loss; on a non-finite loss or gradient the parameters are left as is.
pub(crate) fn train_step<E, F>(
    params: &mut ParamSet,
    adam: &mut Adam,
    batch: &[E],
    loss_fn: F,
) -> Result<f64>
where
    E: Sync,
    F: Fn(&mut Tape, &E) -> Var + Sync,
{
    if batch.is_empty() {
        return Err(Error::EmptyBatch);
    }
    let frozen: &ParamSet = params;
    let parts: Vec<(f64, Grads)> = batch
        .par_iter()
        .map(|ex| {
            let mut tape = Tape::new(frozen);
            let loss = loss_fn(&mut tape, ex);
            let value = tape.value(loss).scalar_value();
            (value, tape.backward(loss))
        })
        .collect();
    let n = batch.len() as f64;
    let mut grads = frozen.zero_grads();
    let mut total = 0.0;
    for (loss, g) in &parts {
        total += loss;
        grads.add_assign(g);
    }
    let mean = total / n;
    if !mean.is_finite() {
        return Err(Error::NonFiniteLoss(mean));
    }
    grads.scale(1.0 / n);
    if !grads.is_finite() {
        return Err(Error::NonFiniteLoss(f64::NAN));
    }
    adam.update(params, &grads);
    Ok(mean)
}
