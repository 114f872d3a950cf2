//! Pairwise training with per-epoch dev evaluation and best-epoch
//! selection.

use std::cmp::Ordering;

use rand::seq::SliceRandom;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::eval::ap_from_hits;
use super::pairs::generate_pairs;
use crate::error::{Error, Result};
use crate::model::{ModelKind, Ranker};
use crate::nn::{OptimizerConfig, OptimizerState, PairLossKind};

/// Candidates of one query with their relevance labels.
#[derive(Debug, Clone)]
pub struct LabeledPool<I> {
    pub query_id: String,
    pub inputs: Vec<I>,
    pub labels: Vec<bool>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub loss: PairLossKind,
    pub optimizer: OptimizerConfig,
    /// Stop as soon as dev MAP@10 reaches this value.
    pub target_dev_map: Option<f64>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig::for_model(ModelKind::Drmm)
    }
}

impl TrainConfig {
    pub fn for_model(kind: ModelKind) -> Self {
        let (batch_size, loss, optimizer) = match kind {
            ModelKind::Drmm | ModelKind::AbelDrmm | ModelKind::AbelDensity => (
                32,
                PairLossKind::Hinge { margin: 1.0 },
                OptimizerConfig::adam(0.01),
            ),
            ModelKind::TermPacrr | ModelKind::Pacrr => {
                (32, PairLossKind::BinaryLog, OptimizerConfig::adam(0.001))
            }
            ModelKind::Bcnn => (
                200,
                PairLossKind::BinaryLog,
                OptimizerConfig::adagrad(0.08, 0.0004),
            ),
        };
        TrainConfig {
            epochs: 30,
            batch_size,
            loss,
            optimizer,
            target_dev_map: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainOutcome {
    /// 1-based epoch whose parameters were kept.
    pub chosen_epoch: usize,
    pub best_dev_map: f64,
    /// Mean pair loss of each epoch.
    pub epoch_losses: Vec<f64>,
    pub dev_maps: Vec<f64>,
    pub skipped_pairs: usize,
}

/// Candidate indices sorted by descending score; ties keep pool order.
pub fn rank_pool<M>(model: &M, inputs: &[M::Input]) -> Result<Vec<(usize, f64)>>
where
    M: Ranker + Sync,
    M::Input: Sync,
{
    let scores = inputs
        .par_iter()
        .map(|i| model.score(i))
        .collect::<Result<Vec<f64>>>()?;
    let mut order: Vec<(usize, f64)> = scores.into_iter().enumerate().collect();
    order.sort_by(|a, b| {
        b.1.partial_cmp(&a.1)
            .unwrap_or(Ordering::Equal)
            .then(a.0.cmp(&b.0))
    });
    Ok(order)
}

/// Mean MAP@10 of the model's rankings over the pools.
pub fn pool_map10<M>(model: &M, pools: &[LabeledPool<M::Input>]) -> Result<f64>
where
    M: Ranker + Sync,
    M::Input: Sync,
{
    if pools.is_empty() {
        return Ok(0.0);
    }
    let mut total = 0.0;
    for pool in pools {
        let hits: Vec<bool> = rank_pool(model, &pool.inputs)?
            .into_iter()
            .map(|(i, _)| pool.labels[i])
            .collect();
        total += ap_from_hits(&hits);
    }
    Ok(total / pools.len() as f64)
}

/// Trains on freshly sampled pairs each epoch and keeps the parameters of
/// the epoch with the best dev MAP@10 (the earlier one on ties). Without
/// dev pools the last epoch is kept.
pub fn train<M, R>(
    model: &mut M,
    train: &[LabeledPool<M::Input>],
    dev: &[LabeledPool<M::Input>],
    cfg: &TrainConfig,
    rng: &mut R,
) -> Result<TrainOutcome>
where
    M: Ranker + Sync,
    M::Input: Sync,
    R: Rng,
{
    if cfg.batch_size == 0 || cfg.epochs == 0 {
        return Err(Error::Argument(
            "epochs and batch_size must be positive".into(),
        ));
    }
    let labels: Vec<Vec<bool>> = train.iter().map(|p| p.labels.clone()).collect();
    let mut opt = OptimizerState::new(cfg.optimizer, model.params());
    let mut best: Option<(f64, usize, Vec<crate::nn::Tensor>)> = None;
    let mut outcome = TrainOutcome {
        chosen_epoch: 0,
        best_dev_map: 0.0,
        epoch_losses: Vec::new(),
        dev_maps: Vec::new(),
        skipped_pairs: 0,
    };
    for epoch in 1..=cfg.epochs {
        let mut pairs = generate_pairs(&labels, rng).pairs;
        if pairs.is_empty() {
            return Err(Error::Argument("no training pairs could be formed".into()));
        }
        pairs.shuffle(rng);
        let mut loss_sum = 0.0;
        let mut counted = 0usize;
        for (b, batch) in pairs.chunks(cfg.batch_size).enumerate() {
            model.params_mut().zero_grad();
            let scale = 1.0 / batch.len() as f64;
            let mut batch_loss = 0.0;
            for pair in batch {
                let pool = &train[pair.query];
                let (pos, neg) = (&pool.inputs[pair.pos], &pool.inputs[pair.neg]);
                let (Ok((sp, cp)), Ok((sn, cn))) = (model.forward(pos), model.forward(neg)) else {
                    outcome.skipped_pairs += 1;
                    continue;
                };
                let l = cfg.loss.eval(sp, sn);
                batch_loss += l.loss;
                counted += 1;
                if l.d_pos != 0.0 {
                    model.backward(pos, &cp, l.d_pos * scale);
                }
                if l.d_neg != 0.0 {
                    model.backward(neg, &cn, l.d_neg * scale);
                }
            }
            if !batch_loss.is_finite() {
                return Err(Error::Diverged {
                    epoch,
                    batch: b,
                    loss: batch_loss,
                    norms: model.params().norm_summary(),
                });
            }
            loss_sum += batch_loss;
            opt.step(model.params_mut());
        }
        let epoch_loss = loss_sum / counted.max(1) as f64;
        outcome.epoch_losses.push(epoch_loss);
        let dev_map = if dev.is_empty() {
            0.0
        } else {
            pool_map10(model, dev)?
        };
        outcome.dev_maps.push(dev_map);
        log::info!("epoch {epoch}: loss {epoch_loss:.6}, dev MAP@10 {dev_map:.4}");
        if best
            .as_ref()
            .is_none_or(|(m, _, _)| dev_map > *m || dev.is_empty())
        {
            best = Some((dev_map, epoch, model.params().snapshot()));
        }
        if cfg
            .target_dev_map
            .is_some_and(|t| !dev.is_empty() && dev_map >= t)
        {
            break;
        }
    }
    let (map, epoch, snapshot) = best.expect("at least one epoch");
    model.params_mut().restore(&snapshot);
    outcome.chosen_epoch = epoch;
    outcome.best_dev_map = map;
    if outcome.skipped_pairs > 0 {
        log::warn!(
            "{} training pairs could not be scored and were skipped",
            outcome.skipped_pairs
        );
    }
    Ok(outcome)
}
