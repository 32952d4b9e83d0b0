//! The tensor type and the reverse-mode tape.
//!
//! Tensors are reference-counted nodes. Leaves hold data (and optionally a
//! gradient buffer); op outputs additionally hold their parents and a
//! backward closure. The graph lives on one logical thread; evaluation-time
//! parallelism rebuilds models per worker instead of sharing nodes.

use std::cell::{Cell, RefCell};
use std::fmt::{Debug, Display};
use std::rc::Rc;
use std::sync::atomic::{AtomicU64, Ordering};

use num_traits::{Float, FromPrimitive, ToPrimitive};

use crate::error::{Error, Result};

/// Scalar element of a tensor. `f64` is verification mode (finite checks on
/// every op output), `f32` is training mode.
pub trait Element:
    Float + FromPrimitive + ToPrimitive + Debug + Display + Default + 'static
{
    const VERIFY_FINITE: bool;

    fn of(x: f64) -> Self {
        <Self as FromPrimitive>::from_f64(x).expect("representable literal")
    }

    fn to64(self) -> f64 {
        self.to_f64().expect("finite value")
    }
}

impl Element for f32 {
    const VERIFY_FINITE: bool = false;
}

impl Element for f64 {
    const VERIFY_FINITE: bool = true;
}

static NEXT_ID: AtomicU64 = AtomicU64::new(1);

thread_local! {
    static NO_GRAD: Cell<bool> = const { Cell::new(false) };
}

/// Runs `f` with graph construction disabled (forward values only).
pub fn no_grad<R>(f: impl FnOnce() -> R) -> R {
    let prev = NO_GRAD.with(|c| c.replace(true));
    let out = f();
    NO_GRAD.with(|c| c.set(prev));
    out
}

fn grad_enabled() -> bool {
    NO_GRAD.with(|c| !c.get())
}

/// Backward closure: (out_grad, out_data, parents).
pub(crate) type BackFn<T> = Box<dyn Fn(&[T], &[T], &[Tensor<T>])>;

pub(crate) struct Inner<T: Element> {
    id: u64,
    shape: Vec<usize>,
    data: RefCell<Vec<T>>,
    grad: RefCell<Option<Vec<T>>>,
    requires_grad: Cell<bool>,
    parents: Vec<Tensor<T>>,
    backward: Option<BackFn<T>>,
}

/// Dense row-major n-dimensional array with optional gradient tracking.
#[derive(Clone)]
pub struct Tensor<T: Element> {
    inner: Rc<Inner<T>>,
}

impl<T: Element> Debug for Tensor<T> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Tensor")
            .field("shape", &self.inner.shape)
            .field("requires_grad", &self.inner.requires_grad)
            .finish()
    }
}

fn check_finite<T: Element>(data: &[T]) -> Result<()> {
    if T::VERIFY_FINITE {
        for (i, v) in data.iter().enumerate() {
            if !v.is_finite() {
                return Err(Error::Numeric(format!(
                    "non-finite value {v} at flat index {i}"
                )));
            }
        }
    }
    Ok(())
}

impl<T: Element> Tensor<T> {
    fn build(
        shape: Vec<usize>,
        data: Vec<T>,
        requires_grad: bool,
        parents: Vec<Tensor<T>>,
        backward: Option<BackFn<T>>,
    ) -> Result<Self> {
        let numel: usize = shape.iter().product();
        if numel != data.len() {
            return Err(Error::Dimension(format!(
                "shape {:?} implies {} elements, got {}",
                shape,
                numel,
                data.len()
            )));
        }
        if shape.iter().any(|&d| d == 0) {
            return Err(Error::Dimension(format!("zero-sized dimension in {shape:?}")));
        }
        check_finite(&data)?;
        Ok(Tensor {
            inner: Rc::new(Inner {
                id: NEXT_ID.fetch_add(1, Ordering::Relaxed),
                shape,
                data: RefCell::new(data),
                grad: RefCell::new(None),
                requires_grad: Cell::new(requires_grad),
                parents,
                backward,
            }),
        })
    }

    /// Untracked leaf.
    pub fn from_vec(shape: &[usize], data: Vec<T>) -> Result<Self> {
        Self::build(shape.to_vec(), data, false, Vec::new(), None)
    }

    /// Leaf with an explicit `requires_grad` flag.
    pub fn leaf(shape: &[usize], data: Vec<T>, requires_grad: bool) -> Result<Self> {
        Self::build(shape.to_vec(), data, requires_grad, Vec::new(), None)
    }

    pub fn zeros(shape: &[usize]) -> Result<Self> {
        let n: usize = shape.iter().product();
        Self::from_vec(shape, vec![T::zero(); n])
    }

    pub fn full(shape: &[usize], value: T) -> Result<Self> {
        let n: usize = shape.iter().product();
        Self::from_vec(shape, vec![value; n])
    }

    pub fn scalar(value: T) -> Self {
        Self::from_vec(&[], vec![value]).expect("scalar build")
    }

    /// Op-output constructor. Drops the tape when no parent is tracked or a
    /// `no_grad` scope is active.
    pub(crate) fn from_op(
        shape: Vec<usize>,
        data: Vec<T>,
        parents: Vec<Tensor<T>>,
        backward: BackFn<T>,
    ) -> Result<Self> {
        if grad_enabled() && parents.iter().any(|p| p.tracked()) {
            Self::build(shape, data, false, parents, Some(backward))
        } else {
            Self::build(shape, data, false, Vec::new(), None)
        }
    }

    pub fn shape(&self) -> &[usize] {
        &self.inner.shape
    }

    pub fn numel(&self) -> usize {
        self.inner.shape.iter().product()
    }

    pub fn requires_grad(&self) -> bool {
        self.inner.requires_grad.get()
    }

    /// Flips gradient tracking on a leaf (used when freezing models).
    pub fn set_requires_grad(&self, value: bool) {
        self.inner.requires_grad.set(value);
    }

    /// True when this node participates in gradient computation.
    pub fn tracked(&self) -> bool {
        self.inner.requires_grad.get() || self.inner.backward.is_some()
    }

    pub fn data(&self) -> std::cell::Ref<'_, Vec<T>> {
        self.inner.data.borrow()
    }

    pub fn data_vec(&self) -> Vec<T> {
        self.inner.data.borrow().clone()
    }

    /// Overwrites the stored values (optimizer steps). Length must match.
    pub fn set_data(&self, values: &[T]) -> Result<()> {
        if values.len() != self.numel() {
            return Err(Error::Dimension(format!(
                "set_data: expected {} values, got {}",
                self.numel(),
                values.len()
            )));
        }
        check_finite(values)?;
        self.inner.data.borrow_mut().copy_from_slice(values);
        Ok(())
    }

    /// In-place update through a closure over the value buffer.
    pub fn update_data(&self, f: impl FnOnce(&mut [T])) {
        f(&mut self.inner.data.borrow_mut());
    }

    pub fn grad(&self) -> Option<Vec<T>> {
        self.inner.grad.borrow().clone()
    }

    pub fn zero_grad(&self) {
        *self.inner.grad.borrow_mut() = None;
    }

    /// Adds `delta` into the gradient buffer, allocating zeros on first use.
    pub(crate) fn accumulate_grad(&self, delta: &[T]) {
        let mut slot = self.inner.grad.borrow_mut();
        match slot.as_mut() {
            Some(buf) => {
                for (g, d) in buf.iter_mut().zip(delta) {
                    *g = *g + *d;
                }
            }
            None => *slot = Some(delta.to_vec()),
        }
    }

    pub(crate) fn accumulate_grad_with(&self, numel: usize, f: impl FnOnce(&mut [T])) {
        let mut slot = self.inner.grad.borrow_mut();
        if slot.is_none() {
            *slot = Some(vec![T::zero(); numel]);
        }
        f(slot.as_mut().expect("grad buffer"));
    }

    /// Value of a single-element tensor.
    pub fn item(&self) -> Result<T> {
        if self.numel() != 1 {
            return Err(Error::Contract(format!(
                "item() on tensor of shape {:?}",
                self.shape()
            )));
        }
        Ok(self.inner.data.borrow()[0])
    }

    /// Copy of the values as a fresh untracked leaf.
    pub fn detach(&self) -> Tensor<T> {
        Tensor::from_vec(&self.inner.shape, self.data_vec()).expect("detach")
    }

    fn id(&self) -> u64 {
        self.inner.id
    }
}

/// Reverse-mode sweep from a scalar loss. Gradients of leaves accumulate
/// across calls; intermediate gradients are reset at the start of each sweep.
pub fn backward<T: Element>(loss: &Tensor<T>) -> Result<()> {
    if loss.numel() != 1 {
        return Err(Error::Contract(format!(
            "backward requires a scalar, got shape {:?}",
            loss.shape()
        )));
    }
    if !loss.tracked() {
        return Err(Error::Contract(
            "backward on a loss with no tracked inputs".to_string(),
        ));
    }

    // Collect the reachable tracked subgraph.
    let mut nodes: Vec<Tensor<T>> = Vec::new();
    let mut seen = std::collections::HashSet::new();
    let mut stack = vec![loss.clone()];
    while let Some(t) = stack.pop() {
        if !seen.insert(t.id()) {
            continue;
        }
        for p in &t.inner.parents {
            if p.tracked() {
                stack.push(p.clone());
            }
        }
        nodes.push(t);
    }

    // Intermediates restart from zero every sweep.
    for n in &nodes {
        if n.inner.backward.is_some() {
            *n.inner.grad.borrow_mut() = None;
        }
    }
    loss.accumulate_grad(&[T::one()]);

    // Parents always precede children in id order, so descending ids give a
    // valid reverse topological order.
    nodes.sort_by(|a, b| b.id().cmp(&a.id()));
    for n in &nodes {
        if let Some(back) = &n.inner.backward {
            let grad = n.inner.grad.borrow().clone();
            if let Some(g) = grad {
                let data = n.inner.data.borrow();
                back(&g, &data, &n.inner.parents);
            }
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn build_rejects_shape_mismatch() {
        assert!(matches!(
            Tensor::<f64>::from_vec(&[2, 3], vec![0.0; 5]),
            Err(Error::Dimension(_))
        ));
    }

    #[test]
    fn verification_mode_rejects_nan() {
        assert!(matches!(
            Tensor::<f64>::from_vec(&[2], vec![1.0, f64::NAN]),
            Err(Error::Numeric(_))
        ));
        // Training mode does not scan.
        assert!(Tensor::<f32>::from_vec(&[2], vec![1.0, f32::NAN]).is_ok());
    }

    #[test]
    fn backward_requires_scalar() {
        let t = Tensor::<f64>::leaf(&[2], vec![1.0, 2.0], true).unwrap();
        assert!(matches!(backward(&t), Err(Error::Contract(_))));
    }

    #[test]
    fn grads_accumulate_until_zeroed() {
        let x = Tensor::<f64>::leaf(&[], vec![3.0], true).unwrap();
        backward(&x).unwrap();
        backward(&x).unwrap();
        assert_eq!(x.grad().unwrap(), vec![2.0]);
        x.zero_grad();
        assert!(x.grad().is_none());
    }
}
