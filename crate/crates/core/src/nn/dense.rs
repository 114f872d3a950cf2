use rand::Rng;

use super::{xavier_uniform, Activation, ParamId, ParamSet, Tensor};
use crate::error::{dim_err, Result};

/// `activation(W x + b)` with `W: [out, in]`, `b: [out]`, no caching.
pub fn dense_forward(
    x: &[f64],
    w: &Tensor,
    b: &Tensor,
    activation: Activation,
) -> Result<Vec<f64>> {
    let (rows, cols) = w.dims2()?;
    if cols != x.len() || b.len() != rows {
        return Err(dim_err(format!(
            "dense: W {:?}, b {:?}, x [{}]",
            w.shape(),
            b.shape(),
            x.len()
        )));
    }
    Ok((0..rows)
        .map(|r| {
            let pre = b.data()[r] + super::dot(w.row(r), x);
            activation.apply(pre)
        })
        .collect())
}

/// Fully connected layer whose weights live in a [`ParamSet`].
#[derive(Debug, Clone)]
pub struct Dense {
    pub weight: ParamId,
    pub bias: ParamId,
    pub activation: Activation,
    pub in_dim: usize,
    pub out_dim: usize,
}

#[derive(Debug, Clone)]
pub struct DenseCache {
    input: Vec<f64>,
    pre: Vec<f64>,
}

impl Dense {
    pub fn new<R: Rng>(
        params: &mut ParamSet,
        name: &str,
        in_dim: usize,
        out_dim: usize,
        activation: Activation,
        rng: &mut R,
    ) -> Self {
        let weight = params.insert(
            format!("{name}.weight"),
            xavier_uniform(&[out_dim, in_dim], in_dim, out_dim, rng),
        );
        let bias = params.insert(format!("{name}.bias"), Tensor::zeros(&[out_dim]));
        Dense {
            weight,
            bias,
            activation,
            in_dim,
            out_dim,
        }
    }

    pub fn forward(&self, params: &ParamSet, x: &[f64]) -> Result<(Vec<f64>, DenseCache)> {
        if x.len() != self.in_dim {
            return Err(dim_err(format!(
                "dense layer expects {} inputs, got {}",
                self.in_dim,
                x.len()
            )));
        }
        let w = params.value(self.weight);
        let b = params.value(self.bias).data();
        let pre: Vec<f64> = (0..self.out_dim)
            .map(|r| b[r] + super::dot(w.row(r), x))
            .collect();
        let out = pre.iter().map(|&p| self.activation.apply(p)).collect();
        Ok((
            out,
            DenseCache {
                input: x.to_vec(),
                pre,
            },
        ))
    }

    /// Accumulates weight/bias gradients and returns `dLoss/dx`.
    pub fn backward(&self, params: &mut ParamSet, cache: &DenseCache, dy: &[f64]) -> Vec<f64> {
        let dpre: Vec<f64> = dy
            .iter()
            .zip(&cache.pre)
            .map(|(d, &p)| d * self.activation.derivative(p))
            .collect();
        let mut dx = vec![0.0; self.in_dim];
        {
            let w = params.value(self.weight);
            for (r, &g) in dpre.iter().enumerate() {
                if g != 0.0 {
                    for (dxi, wi) in dx.iter_mut().zip(w.row(r)) {
                        *dxi += g * wi;
                    }
                }
            }
        }
        let gw = params.grad_mut(self.weight);
        for (r, &g) in dpre.iter().enumerate() {
            if g != 0.0 {
                let row = &mut gw[r * self.in_dim..(r + 1) * self.in_dim];
                for (gi, xi) in row.iter_mut().zip(&cache.input) {
                    *gi += g * xi;
                }
            }
        }
        for (gb, g) in params.grad_mut(self.bias).iter_mut().zip(&dpre) {
            *gb += g;
        }
        dx
    }
}

/// Stack of dense layers: hidden layers share one activation and the last
/// layer is linear.
#[derive(Debug, Clone)]
pub struct Mlp {
    pub layers: Vec<Dense>,
}

#[derive(Debug, Clone)]
pub struct MlpCache {
    layers: Vec<DenseCache>,
}

impl Mlp {
    /// `n_layers` dense layers: `in -> hidden -> ... -> hidden -> out`.
    #[allow(clippy::too_many_arguments)]
    pub fn new<R: Rng>(
        params: &mut ParamSet,
        name: &str,
        in_dim: usize,
        hidden: usize,
        out_dim: usize,
        n_layers: usize,
        activation: Activation,
        rng: &mut R,
    ) -> Self {
        assert!(n_layers >= 1, "an MLP needs at least one layer");
        let mut layers = Vec::with_capacity(n_layers);
        let mut width = in_dim;
        for i in 0..n_layers {
            let last = i + 1 == n_layers;
            let (out, act) = if last {
                (out_dim, Activation::Linear)
            } else {
                (hidden, activation)
            };
            layers.push(Dense::new(
                params,
                &format!("{name}.{i}"),
                width,
                out,
                act,
                rng,
            ));
            width = out;
        }
        Mlp { layers }
    }

    pub fn forward(&self, params: &ParamSet, x: &[f64]) -> Result<(Vec<f64>, MlpCache)> {
        let mut caches = Vec::with_capacity(self.layers.len());
        let mut h = x.to_vec();
        for layer in &self.layers {
            let (out, cache) = layer.forward(params, &h)?;
            caches.push(cache);
            h = out;
        }
        Ok((h, MlpCache { layers: caches }))
    }

    pub fn backward(&self, params: &mut ParamSet, cache: &MlpCache, dy: &[f64]) -> Vec<f64> {
        let mut d = dy.to_vec();
        for (layer, c) in self.layers.iter().zip(&cache.layers).rev() {
            d = layer.backward(params, c, &d);
        }
        d
    }

    pub fn in_dim(&self) -> usize {
        self.layers[0].in_dim
    }
}
