//! Reverse-mode automatic differentiation over a linear tape.
//!
//! Every forward operation appends a node holding its output value and, when
//! any input needs a gradient, a [`Backward`] rule. [`Tape::backward`] replays
//! the rules in reverse order and returns the gradients of all leaves.

use crate::error::{ensure, Error, Result};

use super::Real;
use super::Tensor;

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Values visible to a backward rule.
pub struct BackwardCtx<'a, T> {
    /// Gradient of the loss with respect to this node's output.
    pub grad: &'a [T],
    pub output: &'a Tensor<T>,
    pub inputs: Vec<&'a Tensor<T>>,
    /// Whether each input needs a gradient.
    pub needs: Vec<bool>,
}

/// Vector-Jacobian product of one recorded operation.
pub trait Backward<T: Real> {
    /// Returns one entry per input; `None` where `needs` is false.
    fn backward(&self, ctx: BackwardCtx<'_, T>) -> Result<Vec<Option<Vec<T>>>>;
}

struct Node<T: Real> {
    value: Tensor<T>,
    inputs: Vec<Var>,
    rule: Option<Box<dyn Backward<T>>>,
    needs_grad: bool,
}

pub struct Tape<T: Real> {
    nodes: Vec<Node<T>>,
}

impl<T: Real> Default for Tape<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Real> Tape<T> {
    pub fn new() -> Self {
        Self { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push_leaf(&mut self, mut value: Tensor<T>, needs_grad: bool) -> Result<Var> {
        ensure!(value.is_finite(), Contract, "non-finite leaf value");
        value.zero_grad();
        value.set_requires_grad(needs_grad);
        self.nodes.push(Node {
            value,
            inputs: Vec::new(),
            rule: None,
            needs_grad,
        });
        Ok(Var(self.nodes.len() - 1))
    }

    /// Constant input; never receives a gradient.
    pub fn input(&mut self, value: Tensor<T>) -> Result<Var> {
        self.push_leaf(value, false)
    }

    /// Copy of a tensor that takes part in differentiation iff it requires grad.
    pub fn param(&mut self, tensor: &Tensor<T>) -> Result<Var> {
        self.push_leaf(tensor.clone(), tensor.requires_grad())
    }

    /// Leaf whose gradient is tracked regardless of the tensor's flag.
    pub fn watch(&mut self, tensor: &Tensor<T>) -> Result<Var> {
        self.push_leaf(tensor.clone(), true)
    }

    /// Copy of a tensor treated as a constant (frozen parameters).
    pub fn constant(&mut self, tensor: &Tensor<T>) -> Result<Var> {
        self.push_leaf(tensor.clone(), false)
    }

    pub fn value(&self, var: Var) -> &Tensor<T> {
        &self.nodes[var.0].value
    }

    pub fn shape(&self, var: Var) -> &[usize] {
        self.nodes[var.0].value.shape()
    }

    pub fn needs_grad(&self, var: Var) -> bool {
        self.nodes[var.0].needs_grad
    }

    /// Records an operation result. The rule is kept only when some input
    /// needs a gradient.
    pub fn record(
        &mut self,
        value: Tensor<T>,
        inputs: &[Var],
        rule: Box<dyn Backward<T>>,
    ) -> Result<Var> {
        ensure!(value.is_finite(), Contract, "operation produced non-finite values");
        let needs_grad = inputs.iter().any(|v| self.nodes[v.0].needs_grad);
        self.nodes.push(Node {
            value,
            inputs: inputs.to_vec(),
            rule: needs_grad.then_some(rule),
            needs_grad,
        });
        Ok(Var(self.nodes.len() - 1))
    }

    /// Back-propagates from a scalar `loss`, returning gradients of every
    /// leaf that needs one.
    pub fn backward(&self, loss: Var) -> Result<Gradients<T>> {
        let out = &self.nodes[loss.0];
        ensure!(
            out.value.numel() == 1,
            Contract,
            "backward needs a scalar loss, got shape {:?}",
            out.value.shape()
        );
        let mut grads: Vec<Option<Vec<T>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(vec![T::one()]);
        for id in (0..=loss.0).rev() {
            let node = &self.nodes[id];
            let Some(rule) = &node.rule else { continue };
            let Some(grad) = grads[id].take() else { continue };
            let needs: Vec<bool> = node.inputs.iter().map(|v| self.nodes[v.0].needs_grad).collect();
            let ctx = BackwardCtx {
                grad: &grad,
                output: &node.value,
                inputs: node.inputs.iter().map(|v| &self.nodes[v.0].value).collect(),
                needs,
            };
            let input_grads = rule.backward(ctx)?;
            ensure!(
                input_grads.len() == node.inputs.len(),
                Contract,
                "backward rule returned {} gradients for {} inputs",
                input_grads.len(),
                node.inputs.len()
            );
            for (input, g) in node.inputs.iter().zip(input_grads) {
                let Some(g) = g else { continue };
                if !self.nodes[input.0].needs_grad {
                    continue;
                }
                ensure!(
                    g.len() == self.nodes[input.0].value.numel(),
                    Contract,
                    "gradient length {} for input of shape {:?}",
                    g.len(),
                    self.nodes[input.0].value.shape()
                );
                ensure!(g.iter().all(|v| v.is_finite()), Contract, "non-finite gradient");
                match &mut grads[input.0] {
                    Some(acc) => acc.iter_mut().zip(&g).for_each(|(a, &b)| *a += b),
                    slot @ None => *slot = Some(g),
                }
            }
        }
        // Only leaves keep their gradients.
        for (id, node) in self.nodes.iter().enumerate() {
            if !node.inputs.is_empty() || !node.needs_grad {
                grads[id] = None;
            }
        }
        Ok(Gradients { grads })
    }
}

/// Leaf gradients produced by [`Tape::backward`].
pub struct Gradients<T> {
    grads: Vec<Option<Vec<T>>>,
}

impl<T: Real> Gradients<T> {
    pub fn get(&self, var: Var) -> Option<&[T]> {
        self.grads.get(var.0).and_then(|g| g.as_deref())
    }

    /// Adds the gradient of `var` (if any) into `tensor`'s gradient buffer.
    pub fn accumulate_into(&self, var: Var, tensor: &mut Tensor<T>) -> Result<()> {
        match self.get(var) {
            Some(g) => tensor.accumulate_grad(g),
            None => Ok(()),
        }
    }
}

pub(crate) fn scalar_grad<T: Real>(ctx: &BackwardCtx<'_, T>) -> Result<T> {
    ctx.grad
        .first()
        .copied()
        .ok_or_else(|| Error::Contract("missing upstream gradient".into()))
}
