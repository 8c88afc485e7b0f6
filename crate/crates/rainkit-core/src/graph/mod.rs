//! Reverse-mode autodiff over a linear tape.
//!
//! Ops append nodes holding their output value plus a backward closure that
//! scatters the incoming gradient to the node's parents. `backward` walks the
//! tape once in reverse execution order; gradient accumulation is additive, so
//! shared subexpressions and weight sharing fall out for free.
//!
//! A tape built with `grad_enabled = false` records values only (inference).

mod conv;
mod ops;

pub use conv::{conv_out_size, conv_transpose_out_size};

use crate::error::{Error, Result};
use crate::optim::{ParamId, ParamStore};
use crate::tensor::{Element, Shape, Tensor};

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy, PartialEq, Eq, Debug)]
pub struct Var(pub(crate) usize);

pub(crate) type BackFn<T> = Box<dyn Fn(&[T], &mut GradSink<'_, T>) + Send>;

struct Node<T: Element> {
    value: Tensor<T>,
    needs_grad: bool,
    param: Option<ParamId>,
    back: Option<BackFn<T>>,
}

/// Gradient buffers during a backward pass. Backward closures accumulate into
/// parents through [`GradSink::acc`]; writes to vars that do not require
/// gradients are skipped.
pub struct GradSink<'a, T: Element> {
    bufs: &'a mut [Option<Vec<T>>],
    needs: &'a [bool],
    lens: &'a [usize],
}

impl<T: Element> GradSink<'_, T> {
    /// Whether anything downstream wants this var's gradient. Use to skip
    /// expensive gradient kernels entirely.
    #[inline]
    pub fn wants(&self, v: Var) -> bool {
        self.needs[v.0]
    }

    /// Run `f` over the (zero-initialized) gradient buffer of `v`, accumulating.
    #[inline]
    pub fn acc(&mut self, v: Var, f: impl FnOnce(&mut [T])) {
        if !self.needs[v.0] {
            return;
        }
        let buf = self.bufs[v.0].get_or_insert_with(|| vec![T::zero(); self.lens[v.0]]);
        f(buf);
    }
}

/// Linear record of executed ops.
pub struct Tape<T: Element> {
    nodes: Vec<Node<T>>,
    grad_enabled: bool,
    last_grads: Vec<Option<Vec<T>>>,
}

impl<T: Element> Tape<T> {
    pub fn new(grad_enabled: bool) -> Self {
        Tape { nodes: Vec::new(), grad_enabled, last_grads: Vec::new() }
    }

    pub fn grad_enabled(&self) -> bool {
        self.grad_enabled
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Value of a var.
    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    /// Record a node. `back` is dropped when gradients are disabled or no
    /// parent requires them.
    pub(crate) fn push(
        &mut self,
        value: Tensor<T>,
        needs_grad: bool,
        back: Option<BackFn<T>>,
    ) -> Var {
        let ng = self.grad_enabled && needs_grad;
        self.nodes.push(Node {
            value,
            needs_grad: ng,
            param: None,
            back: if ng { back } else { None },
        });
        Var(self.nodes.len() - 1)
    }

    #[inline]
    pub(crate) fn needs(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    /// Constant input: no gradient flows into it.
    pub fn constant(&mut self, t: Tensor<T>) -> Var {
        self.push(t, false, None)
    }

    /// Leaf input that collects a gradient (for tests and gradient checks).
    pub fn leaf(&mut self, t: Tensor<T>) -> Var {
        self.push(t, true, None)
    }

    /// Lease a parameter onto the tape as a differentiable leaf.
    pub fn param(&mut self, store: &ParamStore<T>, id: ParamId) -> Var {
        let v = self.push(store.value(id).clone(), true, None);
        self.nodes[v.0].param = Some(id);
        v
    }

    /// Lease a parameter as a frozen constant (no gradient).
    pub fn param_frozen(&mut self, store: &ParamStore<T>, id: ParamId) -> Var {
        self.push(store.value(id).clone(), false, None)
    }

    /// Cut the graph: same value, no gradient path.
    pub fn detach(&mut self, v: Var) -> Var {
        let t = self.nodes[v.0].value.clone();
        self.constant(t)
    }

    /// Reverse pass from a scalar loss. Leaves gradients queryable via
    /// [`Tape::grad_of`]; parameter gradients are written to the store by
    /// [`Tape::harvest_into`]. May be called for several losses on one tape;
    /// each call computes an independent set of gradients.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        let shape = self.nodes[loss.0].value.shape();
        if !shape.is_scalar() {
            return Err(Error::NonScalarLoss(shape.to_string()));
        }
        let n = self.nodes.len();
        let needs: Vec<bool> = self.nodes.iter().map(|nd| nd.needs_grad).collect();
        let lens: Vec<usize> = self.nodes.iter().map(|nd| nd.value.shape().numel()).collect();
        let mut bufs: Vec<Option<Vec<T>>> = (0..n).map(|_| None).collect();
        bufs[loss.0] = Some(vec![T::one()]);

        for id in (0..=loss.0).rev() {
            if bufs[id].is_none() {
                continue;
            }
            let Some(back) = self.nodes[id].back.as_ref() else { continue };
            let g = bufs[id].take().expect("grad buffer present");
            {
                let mut sink = GradSink { bufs: &mut bufs, needs: &needs, lens: &lens };
                back(&g, &mut sink);
            }
            bufs[id] = Some(g);
        }
        self.last_grads = bufs;
        Ok(())
    }

    /// Gradient of `v` from the most recent [`Tape::backward`] call.
    pub fn grad_of(&self, v: Var) -> Option<Tensor<T>> {
        let g = self.last_grads.get(v.0)?.as_ref()?;
        Some(Tensor::from_vec(self.nodes[v.0].value.shape(), g.clone()).expect("grad shape"))
    }

    /// Accumulate the most recent gradients into every leased parameter.
    /// Calling backward+harvest twice without zeroing accumulates, by design.
    pub fn harvest_into(&self, store: &mut ParamStore<T>) {
        for (idx, node) in self.nodes.iter().enumerate() {
            if let (Some(pid), Some(Some(g))) = (node.param, self.last_grads.get(idx)) {
                store.add_grad(pid, g);
            }
        }
    }

    /// Shape helper used by ops.
    pub(crate) fn shape(&self, v: Var) -> Shape {
        self.nodes[v.0].value.shape()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Shape;

    #[test]
    fn backward_of_sum_is_ones() {
        let mut tape = Tape::<f32>::new(true);
        let x = tape.leaf(Tensor::from_vec(Shape::new(1, 1, 2, 2), vec![1., 2., 3., 4.]).unwrap());
        let s = tape.sum_all(x);
        tape.backward(s).unwrap();
        assert_eq!(tape.grad_of(x).unwrap().data(), &[1., 1., 1., 1.]);
    }

    #[test]
    fn non_scalar_loss_is_rejected() {
        let mut tape = Tape::<f32>::new(true);
        let x = tape.leaf(Tensor::ones(Shape::new(1, 1, 2, 2)));
        assert!(matches!(tape.backward(x), Err(Error::NonScalarLoss(_))));
    }

    #[test]
    fn unreachable_leaf_has_no_grad() {
        let mut tape = Tape::<f32>::new(true);
        let x = tape.leaf(Tensor::ones(Shape::new(1, 1, 1, 1)));
        let y = tape.leaf(Tensor::ones(Shape::new(1, 1, 1, 1)));
        let s = tape.sum_all(x);
        tape.backward(s).unwrap();
        assert!(tape.grad_of(y).is_none());
    }

    #[test]
    fn grad_accumulates_over_shared_use() {
        // z = x*x -> dz/dx = 2x via the two mul branches accumulating.
        let mut tape = Tape::<f32>::new(true);
        let x = tape.leaf(Tensor::from_vec(Shape::new(1, 1, 1, 1), vec![3.0]).unwrap());
        let z = tape.mul(x, x).unwrap();
        let s = tape.sum_all(z);
        tape.backward(s).unwrap();
        assert_eq!(tape.grad_of(x).unwrap().data(), &[6.0]);
    }

    #[test]
    fn eval_tape_records_no_backward() {
        let mut tape = Tape::<f32>::new(false);
        let x = tape.leaf(Tensor::ones(Shape::new(1, 1, 1, 1)));
        let s = tape.sum_all(x);
        assert!(tape.backward(s).is_ok());
        assert!(tape.grad_of(x).is_none());
    }
}
