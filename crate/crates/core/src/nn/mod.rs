//! Dense tensors, parameters and the handful of differentiable layers the
//! rankers are built from. Every layer exposes an explicit forward pass
//! that returns a cache and a backward pass that consumes it.

mod activation;
mod conv;
mod dense;
mod gradcheck;
mod loss;
mod optim;
mod param;
mod pool;
mod softmax;
mod tensor;

pub use activation::Activation;
pub use conv::{
    conv1d_wide, conv1d_wide_backward, conv2d_valid, conv2d_valid_backward, Conv1dGrads,
};
pub use dense::{dense_forward, Dense, DenseCache, Mlp, MlpCache};
pub use gradcheck::{finite_diff_gradcheck, finite_diff_input_check, GradCheckReport};
pub use loss::{binary_log_pair_loss, hinge_pair_loss, sigmoid, PairLoss, PairLossKind};
pub use optim::{OptimizerConfig, OptimizerKind, OptimizerState};
pub use param::{xavier_uniform, NamedTensor, ParamId, ParamSet, Parameter};
pub use pool::{
    kmax_pool, kmax_pool_backward, masked_mean, masked_mean_backward, max_over_filters,
    max_over_filters_backward, windowed_avg_pool, windowed_avg_pool_backward, KmaxSlot,
};
pub use softmax::{masked_softmax, softmax_backward};
pub use tensor::Tensor;

/// Dot product of two equal-length slices.
pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Cosine similarity together with the pieces needed to differentiate it.
/// Vectors with norm below `1e-12` yield a similarity of 0 and no gradient.
#[derive(Debug, Clone)]
pub struct CosineCache {
    pub value: f64,
    norm_u: f64,
    norm_v: f64,
}

pub fn cosine_forward(u: &[f64], v: &[f64]) -> CosineCache {
    let norm_u = dot(u, u).sqrt();
    let norm_v = dot(v, v).sqrt();
    let value = if norm_u < 1e-12 || norm_v < 1e-12 {
        0.0
    } else {
        dot(u, v) / (norm_u * norm_v)
    };
    CosineCache {
        value,
        norm_u,
        norm_v,
    }
}

/// Accumulates `dout * d cos / du` into `du` and likewise for `dv`.
pub fn cosine_backward(
    u: &[f64],
    v: &[f64],
    cache: &CosineCache,
    dout: f64,
    du: &mut [f64],
    dv: &mut [f64],
) {
    if cache.norm_u < 1e-12 || cache.norm_v < 1e-12 {
        return;
    }
    let inv = 1.0 / (cache.norm_u * cache.norm_v);
    let cu = cache.value / (cache.norm_u * cache.norm_u);
    let cv = cache.value / (cache.norm_v * cache.norm_v);
    for i in 0..u.len() {
        du[i] += dout * (v[i] * inv - cu * u[i]);
        dv[i] += dout * (u[i] * inv - cv * v[i]);
    }
}
