use serde::{Deserialize, Serialize};

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// A pairwise loss value and its derivatives w.r.t. both scores.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PairLoss {
    pub loss: f64,
    pub d_pos: f64,
    pub d_neg: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum PairLossKind {
    Hinge { margin: f64 },
    BinaryLog,
}

impl PairLossKind {
    pub fn eval(self, s_pos: f64, s_neg: f64) -> PairLoss {
        match self {
            PairLossKind::Hinge { margin } => hinge_pair_loss(s_pos, s_neg, margin),
            PairLossKind::BinaryLog => binary_log_pair_loss(s_pos, s_neg),
        }
    }
}

/// `max(0, margin - s_pos + s_neg)`.
pub fn hinge_pair_loss(s_pos: f64, s_neg: f64, margin: f64) -> PairLoss {
    let v = margin - s_pos + s_neg;
    if v > 0.0 {
        PairLoss {
            loss: v,
            d_pos: -1.0,
            d_neg: 1.0,
        }
    } else {
        PairLoss {
            loss: 0.0,
            d_pos: 0.0,
            d_neg: 0.0,
        }
    }
}

/// `-ln sigma(s_pos) - ln(1 - sigma(s_neg))` over logits.
pub fn binary_log_pair_loss(s_pos: f64, s_neg: f64) -> PairLoss {
    const CLAMP: f64 = 1e-12;
    let p = sigmoid(s_pos).clamp(CLAMP, 1.0 - CLAMP);
    let n = sigmoid(s_neg).clamp(CLAMP, 1.0 - CLAMP);
    PairLoss {
        loss: -p.ln() - (1.0 - n).ln(),
        d_pos: -(1.0 - sigmoid(s_pos)),
        d_neg: sigmoid(s_neg),
    }
}
