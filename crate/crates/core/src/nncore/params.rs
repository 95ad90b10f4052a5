use crate::error::{Error, Result};
use crate::nncore::tensor::Tensor;

/// Handle to one parameter inside a [`ParamSet`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct ParamId(pub(crate) usize);

#[derive(Debug, Clone, PartialEq)]
pub struct Param {
    pub name: String,
    pub value: Tensor,
    pub grad: Tensor,
}

/// Named parameters in insertion order, each with a gradient accumulator.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ParamSet {
    params: Vec<Param>,
}

impl ParamSet {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, name: impl Into<String>, value: Tensor) -> Result<ParamId> {
        let name = name.into();
        if self.params.iter().any(|p| p.name == name) {
            return Err(Error::invalid(format!("duplicate parameter name {name:?}")));
        }
        let grad = Tensor::zeros(value.shape());
        self.params.push(Param { name, value, grad });
        Ok(ParamId(self.params.len() - 1))
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn id(&self, name: &str) -> Option<ParamId> {
        self.params.iter().position(|p| p.name == name).map(ParamId)
    }

    pub fn value(&self, id: ParamId) -> &Tensor {
        &self.params[id.0].value
    }

    pub fn value_mut(&mut self, id: ParamId) -> &mut Tensor {
        &mut self.params[id.0].value
    }

    pub fn grad(&self, id: ParamId) -> &Tensor {
        &self.params[id.0].grad
    }

    pub fn grad_mut(&mut self, id: ParamId) -> &mut Tensor {
        &mut self.params[id.0].grad
    }

    /// Value and gradient of one parameter, borrowed together.
    pub fn split_mut(&mut self, id: ParamId) -> (&Tensor, &mut Tensor) {
        let p = &mut self.params[id.0];
        (&p.value, &mut p.grad)
    }

    /// Disjoint mutable borrows of several parameters.
    pub fn many_mut<const N: usize>(&mut self, ids: [ParamId; N]) -> [&mut Param; N] {
        self.params
            .get_disjoint_mut(ids.map(|i| i.0))
            .expect("distinct, in-range parameter ids")
    }

    pub fn iter(&self) -> impl Iterator<Item = &Param> {
        self.params.iter()
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = &mut Param> {
        self.params.iter_mut()
    }

    pub fn zero_grad(&mut self) {
        for p in &mut self.params {
            p.grad.fill(0.0);
        }
    }

    pub fn num_scalars(&self) -> usize {
        self.params.iter().map(|p| p.value.len()).sum()
    }

    pub fn grad_norm(&self) -> f64 {
        self.params
            .iter()
            .flat_map(|p| p.grad.data())
            .map(|g| g * g)
            .sum::<f64>()
            .sqrt()
    }

    /// Rescale gradients so their global L2 norm is at most `max_norm`.
    pub fn clip_grad_norm(&mut self, max_norm: f64) {
        let norm = self.grad_norm();
        if norm > max_norm && norm > 0.0 {
            let s = max_norm / norm;
            for p in &mut self.params {
                p.grad.data_mut().iter_mut().for_each(|g| *g *= s);
            }
        }
    }

    /// Copy values from `other`, matching by name and shape.
    pub fn load_values(&mut self, other: &ParamSet) -> Result<()> {
        if other.len() != self.len() {
            return Err(Error::invalid(format!(
                "checkpoint has {} parameters, model expects {}",
                other.len(),
                self.len()
            )));
        }
        for p in &mut self.params {
            let src = other
                .id(&p.name)
                .map(|id| other.value(id))
                .ok_or_else(|| Error::invalid(format!("checkpoint lacks parameter {:?}", p.name)))?;
            if src.shape() != p.value.shape() {
                return Err(Error::shape("ParamSet::load_values", p.value.shape(), src.shape()));
            }
            p.value = src.clone();
        }
        Ok(())
    }

    /// Append all parameters of `other` under `prefix`, returning the index of the first.
    pub(crate) fn extend_prefixed(&mut self, prefix: &str, other: ParamSet) -> Result<usize> {
        let offset = self.params.len();
        for p in other.params {
            let id = self.add(format!("{prefix}{}", p.name), p.value)?;
            self.params[id.0].grad = p.grad;
        }
        Ok(offset)
    }

    /// Round every value through `f32`, matching what a checkpoint round trip yields.
    pub fn quantize_f32(&mut self) {
        for p in &mut self.params {
            p.value.data_mut().iter_mut().for_each(|v| *v = *v as f32 as f64);
        }
    }
}
