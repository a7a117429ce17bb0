//! Define-by-run reverse-mode differentiation.
//!
//! A [`Tape`] is built fresh for every forward pass. Each op appends one node
//! whose inputs are earlier nodes, so the node list is always topologically
//! ordered and backward is a single reverse sweep.

mod gradcheck;
mod ops;
mod params;

pub use gradcheck::{finite_diff_check, finite_diff_check_params, relative_error, GradCheckReport};
pub use params::{ParamId, Params};

use std::cell::{Cell, RefCell};

use crate::error::{MaestroError, Result};
use crate::tensor::Tensor;

pub(crate) use ops::Op;
pub(crate) use ops::log_sum_exp;

struct Node {
    shape: Vec<usize>,
    value: Vec<f64>,
    op: Op,
    needs_grad: bool,
}

/// Operation recorder for one forward/backward pass.
pub struct Tape {
    nodes: RefCell<Vec<Node>>,
    check_finite: bool,
    fault: RefCell<Option<MaestroError>>,
    train: Cell<bool>,
}

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy)]
pub struct Var<'t> {
    tape: &'t Tape,
    id: usize,
}

impl std::fmt::Debug for Var<'_> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "Var#{}{:?}", self.id, self.shape())
    }
}

impl Default for Tape {
    fn default() -> Self {
        Self::new()
    }
}

impl Tape {
    /// A tape that checks op outputs for NaN/Inf in debug builds.
    pub fn new() -> Self {
        Self {
            nodes: RefCell::new(Vec::with_capacity(256)),
            check_finite: cfg!(debug_assertions),
            fault: RefCell::new(None),
            train: Cell::new(false),
        }
    }

    pub fn with_finite_checks(mut self, on: bool) -> Self {
        self.check_finite = on;
        self
    }

    /// Training mode turns on stochastic layers (attention dropout).
    pub fn set_train(&self, on: bool) {
        self.train.set(on);
    }

    pub fn is_train(&self) -> bool {
        self.train.get()
    }

    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Records a constant or differentiable leaf.
    ///
    /// The leaf requires a gradient iff `t.requires_grad()`.
    pub fn leaf(&self, t: &Tensor) -> Var<'_> {
        self.push(
            t.shape().to_vec(),
            t.values().to_vec(),
            Op::Leaf { param: None },
            t.requires_grad(),
            "leaf",
        )
    }

    pub fn constant(&self, shape: &[usize], values: Vec<f64>) -> Var<'_> {
        assert_eq!(shape.iter().product::<usize>(), values.len());
        self.push(shape.to_vec(), values, Op::Leaf { param: None }, false, "constant")
    }

    /// Records a parameter leaf whose gradient is routed back into `params`.
    pub fn param(&self, params: &Params, id: ParamId) -> Var<'_> {
        let t = params.get(id);
        self.push(
            t.shape().to_vec(),
            t.values().to_vec(),
            Op::Leaf { param: Some(id) },
            true,
            "param",
        )
    }

    /// The first non-finite op output seen on this tape, if any.
    pub fn take_fault(&self) -> Option<MaestroError> {
        self.fault.borrow_mut().take()
    }

    pub fn value(&self, v: Var<'_>) -> Tensor {
        let nodes = self.nodes.borrow();
        let n = &nodes[v.id];
        Tensor::new(n.shape.clone(), n.value.clone()).unwrap_or_else(|_| {
            // non-finite values are reported through `take_fault`
            let mut t = Tensor::zeros(&n.shape);
            t.values_mut().copy_from_slice(&n.value);
            t
        })
    }

    pub(crate) fn push(
        &self,
        shape: Vec<usize>,
        value: Vec<f64>,
        op: Op,
        needs_grad: bool,
        name: &'static str,
    ) -> Var<'_> {
        debug_assert_eq!(shape.iter().product::<usize>(), value.len());
        if self.check_finite {
            if let Some(bad) = value.iter().find(|x| !x.is_finite()) {
                let mut fault = self.fault.borrow_mut();
                if fault.is_none() {
                    *fault = Some(MaestroError::numeric(
                        name,
                        format!("non-finite output {bad} (node {})", self.len()),
                    ));
                }
            }
        }
        let mut nodes = self.nodes.borrow_mut();
        let id = nodes.len();
        nodes.push(Node {
            shape,
            value,
            op,
            needs_grad,
        });
        Var { tape: self, id }
    }

    /// Runs the reverse sweep from a scalar `loss`.
    pub fn backward(&self, loss: Var<'_>) -> Result<Gradients> {
        let nodes = self.nodes.borrow();
        let root = &nodes[loss.id];
        if root.value.len() != 1 {
            return Err(MaestroError::contract(format!(
                "backward needs a scalar loss, got shape {:?}",
                root.shape
            )));
        }
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; loss.id + 1];
        grads[loss.id] = Some(vec![1.0]);
        for id in (0..=loss.id).rev() {
            let Some(g) = grads[id].take() else { continue };
            let node = &nodes[id];
            if !node.needs_grad {
                continue;
            }
            if let Op::Leaf { .. } = node.op {
                grads[id] = Some(g);
                continue;
            }
            ops::backward_node(&nodes, id, &g, &mut grads);
        }
        let mut leaves = Vec::new();
        for (id, g) in grads.into_iter().enumerate() {
            if let (Some(g), Op::Leaf { param }) = (g, &nodes[id].op) {
                if nodes[id].needs_grad {
                    leaves.push((id, *param, g));
                }
            }
        }
        Ok(Gradients { leaves })
    }

    /// Backward from `loss`, accumulating every parameter gradient into `params`.
    pub fn backward_into(&self, loss: Var<'_>, params: &mut Params) -> Result<()> {
        let grads = self.backward(loss)?;
        grads.accumulate_params(params);
        Ok(())
    }
}

/// Leaf gradients produced by [`Tape::backward`].
pub struct Gradients {
    leaves: Vec<(usize, Option<ParamId>, Vec<f64>)>,
}

impl Gradients {
    /// dLoss/dLeaf for a leaf var, or `None` when the loss does not depend on it.
    pub fn get(&self, v: Var<'_>) -> Option<&[f64]> {
        self.leaves
            .iter()
            .find(|(id, _, _)| *id == v.id)
            .map(|(_, _, g)| g.as_slice())
    }

    /// Adds the gradient of `v` into `t`'s grad buffer.
    pub fn accumulate(&self, v: Var<'_>, t: &mut Tensor) {
        if let Some(g) = self.get(v) {
            t.accumulate_grad(g);
        }
    }

    pub fn accumulate_params(&self, params: &mut Params) {
        for (_, pid, g) in &self.leaves {
            if let Some(pid) = pid {
                params.get_mut(*pid).accumulate_grad(g);
            }
        }
    }
}

impl<'t> Var<'t> {
    pub fn tape(&self) -> &'t Tape {
        self.tape
    }

    pub fn shape(&self) -> Vec<usize> {
        self.tape.nodes.borrow()[self.id].shape.clone()
    }

    pub fn numel(&self) -> usize {
        self.tape.nodes.borrow()[self.id].value.len()
    }

    pub fn values(&self) -> Vec<f64> {
        self.tape.nodes.borrow()[self.id].value.clone()
    }

    pub fn item(&self) -> f64 {
        let nodes = self.tape.nodes.borrow();
        let v = &nodes[self.id].value;
        assert_eq!(v.len(), 1, "item() on non-scalar");
        v[0]
    }

    pub fn to_tensor(&self) -> Tensor {
        self.tape.value(*self)
    }

    pub(crate) fn with_value<R>(&self, f: impl FnOnce(&[usize], &[f64]) -> R) -> R {
        let nodes = self.tape.nodes.borrow();
        let n = &nodes[self.id];
        f(&n.shape, &n.value)
    }

    pub(crate) fn needs_grad(&self) -> bool {
        self.tape.nodes.borrow()[self.id].needs_grad
    }
}
