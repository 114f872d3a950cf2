use rand::Rng;
use serde::{Deserialize, Serialize};

use super::Tensor;
use crate::error::{dim_err, Error, Result};

/// A named trainable tensor with its gradient buffer.
#[derive(Debug, Clone)]
pub struct Parameter {
    pub name: String,
    pub value: Tensor,
    pub grad: Tensor,
    pub trainable: bool,
}

/// Handle into a [`ParamSet`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ParamId(usize);

/// Serialized form of one parameter: name, shape and row-major values.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct NamedTensor {
    pub name: String,
    pub shape: Vec<usize>,
    pub values: Vec<f64>,
}

/// Ordered collection of a model's parameters.
#[derive(Debug, Clone, Default)]
pub struct ParamSet {
    params: Vec<Parameter>,
}

impl ParamSet {
    pub fn new() -> Self {
        ParamSet::default()
    }

    pub fn insert(&mut self, name: impl Into<String>, value: Tensor) -> ParamId {
        let name = name.into();
        debug_assert!(self.id_of(&name).is_none(), "duplicate parameter {name}");
        let grad = Tensor::zeros(value.shape());
        self.params.push(Parameter {
            name,
            value,
            grad,
            trainable: true,
        });
        ParamId(self.params.len() - 1)
    }

    pub fn get(&self, id: ParamId) -> &Parameter {
        &self.params[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Parameter {
        &mut self.params[id.0]
    }

    pub fn value(&self, id: ParamId) -> &Tensor {
        &self.params[id.0].value
    }

    pub fn value_mut(&mut self, id: ParamId) -> &mut Tensor {
        &mut self.params[id.0].value
    }

    pub fn grad_mut(&mut self, id: ParamId) -> &mut [f64] {
        self.params[id.0].grad.data_mut()
    }

    pub fn id_of(&self, name: &str) -> Option<ParamId> {
        self.params.iter().position(|p| p.name == name).map(ParamId)
    }

    pub fn by_name(&self, name: &str) -> Option<&Parameter> {
        self.params.iter().find(|p| p.name == name)
    }

    pub fn iter(&self) -> impl Iterator<Item = &Parameter> {
        self.params.iter()
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = &mut Parameter> {
        self.params.iter_mut()
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn zero_grad(&mut self) {
        for p in &mut self.params {
            p.grad.fill(0.0);
        }
    }

    /// Number of trainable scalars.
    pub fn num_trainable(&self) -> usize {
        self.params
            .iter()
            .filter(|p| p.trainable)
            .map(|p| p.value.len())
            .sum()
    }

    pub fn snapshot(&self) -> Vec<Tensor> {
        self.params.iter().map(|p| p.value.clone()).collect()
    }

    pub fn restore(&mut self, snapshot: &[Tensor]) {
        for (p, v) in self.params.iter_mut().zip(snapshot) {
            p.value = v.clone();
        }
    }

    /// `name=norm` pairs, used in divergence diagnostics.
    pub fn norm_summary(&self) -> String {
        self.params
            .iter()
            .map(|p| format!("{}={:.4e}", p.name, p.value.norm()))
            .collect::<Vec<_>>()
            .join(", ")
    }

    pub fn to_named(&self) -> Vec<NamedTensor> {
        self.params
            .iter()
            .map(|p| NamedTensor {
                name: p.name.clone(),
                shape: p.value.shape().to_vec(),
                values: p.value.data().to_vec(),
            })
            .collect()
    }

    /// Overwrites every parameter from `named`, matching by name and shape.
    pub fn load_named(&mut self, named: &[NamedTensor]) -> Result<()> {
        if named.len() != self.params.len() {
            return Err(Error::Format(format!(
                "expected {} tensors, file has {}",
                self.params.len(),
                named.len()
            )));
        }
        for t in named {
            let id = self
                .id_of(&t.name)
                .ok_or_else(|| Error::Format(format!("unexpected tensor `{}`", t.name)))?;
            let p = &mut self.params[id.0];
            if p.value.shape() != t.shape.as_slice() {
                return Err(dim_err(format!(
                    "tensor `{}`: expected shape {:?}, file has {:?}",
                    t.name,
                    p.value.shape(),
                    t.shape
                )));
            }
            p.value = Tensor::new(t.shape.clone(), t.values.clone())?;
        }
        Ok(())
    }
}

/// Glorot-uniform initialisation in `[-sqrt(6/(fan_in+fan_out)), +sqrt(..)]`.
pub fn xavier_uniform<R: Rng>(
    shape: &[usize],
    fan_in: usize,
    fan_out: usize,
    rng: &mut R,
) -> Tensor {
    let limit = (6.0 / (fan_in + fan_out).max(1) as f64).sqrt();
    let n: usize = shape.iter().product();
    let data = (0..n).map(|_| rng.gen_range(-limit..=limit)).collect();
    Tensor::new(shape.to_vec(), data).expect("shape/product agree")
}
