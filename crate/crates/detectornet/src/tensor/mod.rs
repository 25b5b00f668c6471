//! Dense 64-bit tensors with reverse-mode automatic differentiation.
//!
//! Every operation that participates in training records a backward closure
//! on its output node. Calling [`Tensor::backward`] on a scalar loss walks the
//! recorded graph in reverse topological order and accumulates `d(loss)/d(x)`
//! into every tensor created with `requires_grad`. The graph is consumed by
//! the backward pass; a second call without a fresh forward pass is an error.

mod kernels;
mod ops;

use std::cell::RefCell;
use std::collections::HashSet;
use std::rc::Rc;

use crate::error::{Error, Result};

type BackwardFn = Box<dyn Fn(&[f64])>;

struct Inner {
    shape: Vec<usize>,
    data: Vec<f64>,
    requires_grad: bool,
    grad: Option<Vec<f64>>,
    parents: Vec<Tensor>,
    backward: Option<BackwardFn>,
}

/// A dense n-dimensional array of `f64` in row-major order.
///
/// Cloning a `Tensor` is cheap: clones share the same underlying node.
#[derive(Clone)]
pub struct Tensor {
    inner: Rc<RefCell<Inner>>,
}

impl std::fmt::Debug for Tensor {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let inner = self.inner.borrow();
        f.debug_struct("Tensor")
            .field("shape", &inner.shape)
            .field("requires_grad", &inner.requires_grad)
            .finish()
    }
}

pub(crate) fn check_shape(shape: &[usize], data_len: usize) -> Result<()> {
    let numel: usize = shape.iter().product();
    if shape.iter().any(|&d| d == 0) {
        return Err(Error::Dimension(format!(
            "zero-length axis in shape {:?}",
            shape
        )));
    }
    if numel != data_len {
        return Err(Error::Dimension(format!(
            "shape {:?} implies {} elements but data has {}",
            shape, numel, data_len
        )));
    }
    Ok(())
}

impl Tensor {
    /// Constant tensor (no gradient tracking).
    pub fn from_vec(shape: &[usize], data: Vec<f64>) -> Result<Tensor> {
        check_shape(shape, data.len())?;
        Ok(Tensor::raw(shape.to_vec(), data, false))
    }

    /// Trainable tensor (participates in backward passes).
    pub fn param(shape: &[usize], data: Vec<f64>) -> Result<Tensor> {
        check_shape(shape, data.len())?;
        Ok(Tensor::raw(shape.to_vec(), data, true))
    }

    pub fn zeros(shape: &[usize]) -> Tensor {
        let n: usize = shape.iter().product();
        Tensor::raw(shape.to_vec(), vec![0.0; n], false)
    }

    pub fn scalar(v: f64) -> Tensor {
        Tensor::raw(vec![1], vec![v], false)
    }

    fn raw(shape: Vec<usize>, data: Vec<f64>, requires_grad: bool) -> Tensor {
        Tensor {
            inner: Rc::new(RefCell::new(Inner {
                shape,
                data,
                requires_grad,
                grad: None,
                parents: Vec::new(),
                backward: None,
            })),
        }
    }

    /// Internal node constructor: output of an op. Gradient tracking is
    /// recorded only when at least one parent requires it.
    pub(crate) fn from_op(
        shape: Vec<usize>,
        data: Vec<f64>,
        parents: Vec<Tensor>,
        backward: BackwardFn,
    ) -> Tensor {
        debug_assert_eq!(shape.iter().product::<usize>(), data.len());
        let tracked = parents.iter().any(|p| p.requires_grad());
        if tracked {
            Tensor {
                inner: Rc::new(RefCell::new(Inner {
                    shape,
                    data,
                    requires_grad: true,
                    grad: None,
                    parents,
                    backward: Some(backward),
                })),
            }
        } else {
            Tensor::raw(shape, data, false)
        }
    }

    pub fn shape(&self) -> Vec<usize> {
        self.inner.borrow().shape.clone()
    }

    pub fn rank(&self) -> usize {
        self.inner.borrow().shape.len()
    }

    pub fn numel(&self) -> usize {
        self.inner.borrow().data.len()
    }

    pub fn requires_grad(&self) -> bool {
        self.inner.borrow().requires_grad
    }

    pub fn to_vec(&self) -> Vec<f64> {
        self.inner.borrow().data.clone()
    }

    /// Read the underlying buffer without copying.
    pub fn with_data<R>(&self, f: impl FnOnce(&[f64]) -> R) -> R {
        f(&self.inner.borrow().data)
    }

    pub fn grad_vec(&self) -> Option<Vec<f64>> {
        self.inner.borrow().grad.clone()
    }

    pub fn zero_grad(&self) {
        self.inner.borrow_mut().grad = None;
    }

    /// Overwrite the buffer in place (optimizer steps, checkpoint restore,
    /// finite-difference probes). Shape is fixed at construction.
    pub fn set_data(&self, data: &[f64]) -> Result<()> {
        let mut inner = self.inner.borrow_mut();
        if data.len() != inner.data.len() {
            return Err(Error::Dimension(format!(
                "set_data length {} does not match tensor of {} elements",
                data.len(),
                inner.data.len()
            )));
        }
        inner.data.copy_from_slice(data);
        Ok(())
    }

    /// Apply an in-place update to the buffer.
    pub fn update_data(&self, f: impl FnOnce(&mut [f64])) {
        f(&mut self.inner.borrow_mut().data);
    }

    pub(crate) fn accumulate_grad(&self, g: &[f64]) {
        let mut inner = self.inner.borrow_mut();
        if !inner.requires_grad {
            return;
        }
        match inner.grad.as_mut() {
            Some(buf) => {
                for (b, &gi) in buf.iter_mut().zip(g) {
                    *b += gi;
                }
            }
            None => inner.grad = Some(g.to_vec()),
        }
    }

    pub fn is_finite(&self) -> bool {
        self.inner.borrow().data.iter().all(|v| v.is_finite())
    }

    /// Reverse-mode pass from a scalar loss. Populates `grad` on every
    /// reachable tensor with `requires_grad`, consuming the recorded graph.
    pub fn backward(&self) -> Result<()> {
        if self.numel() != 1 {
            return Err(Error::Dimension(format!(
                "backward requires a scalar loss, got shape {:?}",
                self.shape()
            )));
        }
        {
            let inner = self.inner.borrow();
            if !inner.requires_grad {
                return Err(Error::State(
                    "loss does not depend on any trainable tensor".into(),
                ));
            }
            if inner.backward.is_none() && !inner.parents.is_empty() {
                return Err(Error::State(
                    "backward already called on this graph; run a new forward pass".into(),
                ));
            }
        }
        let order = topo_order(self);
        self.accumulate_grad(&[1.0]);
        for node in order.iter().rev() {
            let f = node.inner.borrow_mut().backward.take();
            if let Some(f) = f {
                let g = node.inner.borrow().grad.clone();
                if let Some(g) = g {
                    f(&g);
                }
            }
        }
        Ok(())
    }
}

/// Post-order over the recorded graph: parents before children.
fn topo_order(root: &Tensor) -> Vec<Tensor> {
    let mut order = Vec::new();
    let mut visited: HashSet<*const RefCell<Inner>> = HashSet::new();
    let mut stack: Vec<(Tensor, bool)> = vec![(root.clone(), false)];
    while let Some((t, expanded)) = stack.pop() {
        if expanded {
            order.push(t);
            continue;
        }
        let ptr = Rc::as_ptr(&t.inner);
        if !visited.insert(ptr) {
            continue;
        }
        stack.push((t.clone(), true));
        for p in t.inner.borrow().parents.iter() {
            if p.requires_grad() {
                stack.push((p.clone(), false));
            }
        }
    }
    order
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn shape_data_mismatch_rejected() {
        assert!(Tensor::from_vec(&[2, 3], vec![1.0; 5]).is_err());
        assert!(Tensor::from_vec(&[0], vec![]).is_err());
    }

    #[test]
    fn square_gradient() {
        let x = Tensor::param(&[1], vec![3.0]).unwrap();
        let y = x.mul(&x).unwrap();
        y.backward().unwrap();
        assert_eq!(x.grad_vec().unwrap(), vec![6.0]);
    }

    #[test]
    fn constant_function_has_zero_gradient() {
        let x = Tensor::param(&[1], vec![3.0]).unwrap();
        let c = Tensor::scalar(7.0);
        // y depends on x only through x*0
        let y = x.scale(0.0).unwrap().add(&c).unwrap();
        y.backward().unwrap();
        assert_eq!(x.grad_vec().unwrap(), vec![0.0]);
    }

    #[test]
    fn double_backward_is_a_state_error() {
        let x = Tensor::param(&[1], vec![2.0]).unwrap();
        let y = x.mul(&x).unwrap();
        y.backward().unwrap();
        let err = y.backward().unwrap_err();
        assert!(matches!(err, Error::State(_)), "got {err:?}");
    }

    #[test]
    fn grads_accumulate_across_shared_use() {
        // f = x*x + x  => df/dx = 2x + 1
        let x = Tensor::param(&[1], vec![4.0]).unwrap();
        let y = x.mul(&x).unwrap().add(&x).unwrap();
        y.backward().unwrap();
        assert_eq!(x.grad_vec().unwrap(), vec![9.0]);
    }
}
