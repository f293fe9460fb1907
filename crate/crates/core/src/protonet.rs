//! Prototypes, the similarity score, and the training objective.
//!
//! The similarity between an encoded query and a label prototype is cosine
//! similarity mapped affinely onto `[0, 1]`:
//!
//! ```text
//! F(x, S_l) = (cos(E(x), proto_l) + 1) / 2
//! ```
//!
//! Three losses combine into the per-episode objective
//! `L = L_in + beta * L_ood + gamma * L_gt`:
//!
//! - `L_in`: softmax cross-entropy over alpha-scaled similarities against
//!   every support label, targeting the ground truth;
//! - `L_ood`: hinge pushing the OOD query's strongest similarity below the
//!   margin `m1`;
//! - `L_gt`: hinge pulling the ID query's ground-truth similarity above the
//!   margin `m2`.
//!
//! Zero-weighted branches are left out of the total structurally rather
//! than multiplied by zero, so `beta = gamma = 0` reproduces a plain
//! prototypical network exactly.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::diffmath::{DiffError, Graph, NodeId};
use crate::encoder::{encode, EncoderNodes};
use crate::episodic::Episode;

/// Loss hyperparameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LossConfig {
    /// Softmax re-scaling factor applied to similarities.
    pub alpha: f64,
    /// Weight of the OOD hinge loss.
    pub beta: f64,
    /// Weight of the ground-truth confidence hinge loss.
    pub gamma: f64,
    /// OOD similarity margin.
    pub m1: f64,
    /// Ground-truth similarity margin.
    pub m2: f64,
}

impl Default for LossConfig {
    fn default() -> Self {
        Self {
            alpha: 10.0,
            beta: 1.0,
            gamma: 1.0,
            m1: 0.4,
            m2: 0.8,
        }
    }
}

#[derive(Debug, Error)]
#[error("invalid loss config: {0}")]
pub struct LossConfigError(String);

impl LossConfig {
    pub fn validate(&self) -> Result<(), LossConfigError> {
        if self.alpha.is_nan() || self.alpha <= 0.0 {
            return Err(LossConfigError(format!("alpha must be > 0, got {}", self.alpha)));
        }
        if self.beta < 0.0 || self.gamma < 0.0 {
            return Err(LossConfigError(format!(
                "beta and gamma must be >= 0, got {} and {}",
                self.beta, self.gamma
            )));
        }
        if !(0.0 <= self.m1 && self.m1 <= self.m2 && self.m2 <= 1.0) {
            return Err(LossConfigError(format!(
                "margins must satisfy 0 <= m1 <= m2 <= 1, got m1={} m2={}",
                self.m1, self.m2
            )));
        }
        Ok(())
    }
}

/// Element-wise mean of same-dimension vector nodes, folded left to right
/// so the summation order is fixed.
pub fn prototype(g: &mut Graph, encodings: &[NodeId]) -> Result<NodeId, DiffError> {
    let Some((&first, rest)) = encodings.split_first() else {
        return Err(DiffError::EmptyInput { op: "prototype" });
    };
    let mut acc = first;
    for &e in rest {
        acc = g.add(acc, e)?;
    }
    Ok(g.scale(acc, 1.0 / encodings.len() as f64))
}

/// Similarity score `F = (cos + 1) / 2`, a scalar in `[0, 1]`.
///
/// A zero-norm operand surfaces as a domain error; it is never clamped.
pub fn similarity_f(g: &mut Graph, x_enc: NodeId, proto: NodeId) -> Result<NodeId, DiffError> {
    let cos = g.cosine(x_enc, proto)?;
    let halved = g.scale(cos, 0.5);
    let half = g.scalar(0.5);
    g.add(halved, half)
}

/// Softmax cross-entropy over alpha-scaled similarity scores:
/// `-log(exp(alpha F_gt) / sum_l exp(alpha F_l))`, stabilized by max
/// subtraction.
pub fn loss_in(
    g: &mut Graph,
    scores: &[NodeId],
    gt_index: usize,
    alpha: f64,
) -> Result<NodeId, DiffError> {
    if scores.is_empty() {
        return Err(DiffError::EmptyInput { op: "loss_in" });
    }
    let scaled: Vec<NodeId> = scores.iter().map(|&s| g.scale(s, alpha)).collect();
    g.neg_log_softmax_at(&scaled, gt_index)
}

/// OOD hinge `max(0, max_l F_l - m1)`.
pub fn loss_ood(g: &mut Graph, scores: &[NodeId], m1: f64) -> Result<NodeId, DiffError> {
    if scores.is_empty() {
        return Err(DiffError::EmptyInput { op: "loss_ood" });
    }
    let strongest = g.max_over(scores)?;
    let neg_margin = g.scalar(-m1);
    let shifted = g.add(strongest, neg_margin)?;
    Ok(g.hinge(shifted))
}

/// Ground-truth confidence hinge `max(0, m2 - F_gt)`.
pub fn loss_gt(g: &mut Graph, gt_score: NodeId, m2: f64) -> Result<NodeId, DiffError> {
    let negated = g.scale(gt_score, -1.0);
    let margin = g.scalar(m2);
    let shifted = g.add(negated, margin)?;
    Ok(g.hinge(shifted))
}

/// Node handles for one episode's loss terms.
///
/// `loss_ood` and `loss_gt` are always built so their values can be logged,
/// but they are wired into `total` only when their weight is nonzero; with
/// `beta = gamma = 0`, `total` is the `loss_in` node itself.
#[derive(Debug, Clone, Copy)]
pub struct EpisodeLoss {
    pub total: NodeId,
    pub loss_in: NodeId,
    pub loss_ood: NodeId,
    pub loss_gt: NodeId,
}

/// Builds the complete differentiable loss for one episode.
///
/// Construction order is fixed: the ID query is encoded first, then the OOD
/// query, then each support set in `episode.supports` order (examples in
/// order, prototype folded immediately), then the ID scores per support
/// label, `loss_in`, the OOD scores per label, `loss_ood`, `loss_gt`, and
/// finally the weighted total.
pub fn episode_loss(
    g: &mut Graph,
    nodes: &EncoderNodes,
    episode: &Episode,
    cfg: &LossConfig,
) -> Result<EpisodeLoss, DiffError> {
    let id_enc = encode(g, nodes, &episode.id_query.tokens)?;
    let ood_enc = encode(g, nodes, &episode.ood_query.tokens)?;

    let mut prototypes = Vec::with_capacity(episode.supports.len());
    for (_, support) in &episode.supports {
        let encodings = support
            .iter()
            .map(|ex| encode(g, nodes, &ex.tokens))
            .collect::<Result<Vec<_>, _>>()?;
        prototypes.push(prototype(g, &encodings)?);
    }

    let id_scores = prototypes
        .iter()
        .map(|&p| similarity_f(g, id_enc, p))
        .collect::<Result<Vec<_>, _>>()?;
    let l_in = loss_in(g, &id_scores, episode.gt_index, cfg.alpha)?;

    let ood_scores = prototypes
        .iter()
        .map(|&p| similarity_f(g, ood_enc, p))
        .collect::<Result<Vec<_>, _>>()?;
    let l_ood = loss_ood(g, &ood_scores, cfg.m1)?;
    let l_gt = loss_gt(g, id_scores[episode.gt_index], cfg.m2)?;

    let mut total = l_in;
    if cfg.beta != 0.0 {
        let weighted = g.scale(l_ood, cfg.beta);
        total = g.add(total, weighted)?;
    }
    if cfg.gamma != 0.0 {
        let weighted = g.scale(l_gt, cfg.gamma);
        total = g.add(total, weighted)?;
    }
    Ok(EpisodeLoss {
        total,
        loss_in: l_in,
        loss_ood: l_ood,
        loss_gt: l_gt,
    })
}
