use super::{Matrix, Tape};
use crate::error::{Error, Result};

/// Handle into a [`ParamSet`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct ParamId(pub(crate) usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Debug)]
pub struct Parameter {
    name: String,
    value: Matrix,
    grad: Matrix,
}

impl Parameter {
    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn value(&self) -> &Matrix {
        &self.value
    }

    pub fn grad(&self) -> &Matrix {
        &self.grad
    }
}

/// Registry of every trainable matrix of a model.
///
/// Each parameter is registered exactly once under a unique name. A forward
/// pass copies the values it touches onto a [`Tape`]; after `backward`,
/// [`ParamSet::accumulate_grads`] adds the tape's leaf gradients into the
/// registry, where the optimizer reads them.
#[derive(Clone, Debug, Default)]
pub struct ParamSet {
    params: Vec<Parameter>,
}

impl ParamSet {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, name: impl Into<String>, value: Matrix) -> Result<ParamId> {
        let name = name.into();
        if self.params.iter().any(|p| p.name == name) {
            return Err(Error::Contract(format!("parameter `{name}` registered twice")));
        }
        let grad = Matrix::zeros(value.rows(), value.cols());
        self.params.push(Parameter { name, value, grad });
        Ok(ParamId(self.params.len() - 1))
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    /// Total number of scalar weights.
    pub fn num_scalars(&self) -> usize {
        self.params.iter().map(|p| p.value.len()).sum()
    }

    pub fn get(&self, id: ParamId) -> &Parameter {
        &self.params[id.0]
    }

    pub fn value(&self, id: ParamId) -> &Matrix {
        &self.params[id.0].value
    }

    pub fn value_mut(&mut self, id: ParamId) -> &mut Matrix {
        &mut self.params[id.0].value
    }

    pub fn grad(&self, id: ParamId) -> &Matrix {
        &self.params[id.0].grad
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.params.len()).map(ParamId)
    }

    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &Parameter)> {
        self.params.iter().enumerate().map(|(i, p)| (ParamId(i), p))
    }

    pub fn find(&self, name: &str) -> Option<ParamId> {
        self.params.iter().position(|p| p.name == name).map(ParamId)
    }

    pub fn zero_grad(&mut self) {
        for p in &mut self.params {
            p.grad.as_mut_slice().fill(0.0);
        }
    }

    /// Adds the gradient of every parameter bound on `tape` into the registry.
    pub fn accumulate_grads(&mut self, tape: &Tape) {
        for (i, p) in self.params.iter_mut().enumerate() {
            if let Some(g) = tape.binding(ParamId(i)).and_then(|node| tape.grad(node)) {
                p.grad.add_assign(g);
            }
        }
    }

    /// Copies of all parameter values, in registration order.
    pub fn snapshot(&self) -> Vec<Matrix> {
        self.params.iter().map(|p| p.value.clone()).collect()
    }

    pub fn restore(&mut self, snapshot: &[Matrix]) -> Result<()> {
        if snapshot.len() != self.params.len() {
            return Err(Error::Contract(format!(
                "snapshot has {} parameters, registry has {}",
                snapshot.len(),
                self.params.len()
            )));
        }
        for (p, v) in self.params.iter_mut().zip(snapshot) {
            if p.value.shape() != v.shape() {
                return Err(Error::Dimension {
                    op: "restore",
                    lhs: p.value.shape(),
                    rhs: v.shape(),
                });
            }
            p.value = v.clone();
        }
        Ok(())
    }

    /// Applies `update(value, grad)` to each parameter in registration order.
    pub(crate) fn for_each_mut(&mut self, mut update: impl FnMut(usize, &str, &mut Matrix, &Matrix)) {
        for (i, p) in self.params.iter_mut().enumerate() {
            update(i, &p.name, &mut p.value, &p.grad);
        }
    }
}
