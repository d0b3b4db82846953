use std::collections::HashMap;

use crate::error::{HydraError, Result};
use crate::tensor::Tensor;

/// A named tensor with an accumulated gradient.
#[derive(Clone, Debug, PartialEq)]
pub struct Parameter {
    pub name: String,
    pub value: Tensor,
    pub grad: Tensor,
    pub trainable: bool,
}

impl Parameter {
    pub fn new(name: impl Into<String>, value: Tensor) -> Self {
        let grad = Tensor::zeros(value.shape());
        Parameter {
            name: name.into(),
            value,
            grad,
            trainable: true,
        }
    }

    pub fn zero_grad(&mut self) {
        self.grad.data_mut().fill(0.0);
    }

    pub fn accumulate_grad(&mut self, g: &Tensor) -> Result<()> {
        if g.shape() != self.value.shape() {
            return Err(HydraError::dim("accumulate_grad", self.value.shape(), g.shape()));
        }
        for (a, b) in self.grad.data_mut().iter_mut().zip(g.data()) {
            *a += b;
        }
        Ok(())
    }
}

/// Index of a parameter inside its [`ParamSet`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct ParamId(pub(crate) usize);

/// Insertion-ordered parameters with unique names.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParamSet {
    params: Vec<Parameter>,
    index: HashMap<String, usize>,
}

impl ParamSet {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, param: Parameter) -> Result<ParamId> {
        if self.index.contains_key(&param.name) {
            return Err(HydraError::Config(format!("duplicate parameter name {}", param.name)));
        }
        let id = self.params.len();
        self.index.insert(param.name.clone(), id);
        self.params.push(param);
        Ok(ParamId(id))
    }

    pub fn get(&self, id: ParamId) -> &Parameter {
        &self.params[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Parameter {
        &mut self.params[id.0]
    }

    pub fn id(&self, name: &str) -> Option<ParamId> {
        self.index.get(name).copied().map(ParamId)
    }

    pub fn by_name(&self, name: &str) -> Option<&Parameter> {
        self.id(name).map(|id| self.get(id))
    }

    pub fn by_name_mut(&mut self, name: &str) -> Option<&mut Parameter> {
        self.id(name).map(move |id| self.get_mut(id))
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
        self.params.iter_mut().for_each(Parameter::zero_grad);
    }

    pub fn set_trainable(&mut self, trainable: bool) {
        self.params.iter_mut().for_each(|p| p.trainable = trainable);
    }

    /// Total number of scalar values across all parameters.
    pub fn scalar_count(&self) -> usize {
        self.params.iter().map(|p| p.value.len()).sum()
    }

    /// Names of parameters whose values differ bitwise between the two sets.
    /// Parameters present in only one set are reported as well.
    pub fn differing_names(&self, other: &ParamSet) -> Vec<String> {
        let mut out: Vec<String> = self
            .params
            .iter()
            .filter(|p| match other.by_name(&p.name) {
                Some(q) => !bitwise_eq(&p.value, &q.value),
                None => true,
            })
            .map(|p| p.name.clone())
            .collect();
        out.extend(
            other
                .params
                .iter()
                .filter(|q| self.id(&q.name).is_none())
                .map(|q| q.name.clone()),
        );
        out
    }
}

pub fn bitwise_eq(a: &Tensor, b: &Tensor) -> bool {
    a.shape() == b.shape() && a.data().iter().zip(b.data()).all(|(x, y)| x.to_bits() == y.to_bits())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn duplicate_names_rejected() {
        let mut set = ParamSet::new();
        set.insert(Parameter::new("a", Tensor::zeros(&[2]))).unwrap();
        assert!(set.insert(Parameter::new("a", Tensor::zeros(&[3]))).is_err());
    }

    #[test]
    fn differing_names_reports_changes_and_missing() {
        let mut a = ParamSet::new();
        a.insert(Parameter::new("x", Tensor::zeros(&[2]))).unwrap();
        a.insert(Parameter::new("y", Tensor::zeros(&[2]))).unwrap();
        let mut b = a.clone();
        b.by_name_mut("y").unwrap().value.data_mut()[1] = -0.0;
        b.insert(Parameter::new("z", Tensor::zeros(&[1]))).unwrap();
        // -0.0 == 0.0 numerically but not bitwise
        assert_eq!(a.differing_names(&b), vec!["y".to_string(), "z".to_string()]);
    }
}
