//! The tensor type and the reverse-mode engine.
//!
//! A [`Tensor`] is an immutable, reference-counted buffer plus an optional
//! link to the operation that produced it. Operations executed while grad
//! mode is enabled and at least one input requires a gradient record a
//! vector-Jacobian product closure. [`grad`] walks the recorded graph in
//! reverse topological order. With `create_graph` set, the VJPs are
//! themselves recorded, which is what makes gradient penalties possible.

use std::cell::Cell;
use std::collections::{HashMap, HashSet};
use std::fmt;
use std::rc::Rc;
use std::sync::atomic::{AtomicUsize, Ordering};

use crate::error::{DiffError, Result};
use crate::real::Real;

static NEXT_ID: AtomicUsize = AtomicUsize::new(1);

thread_local! {
    static GRAD_ENABLED: Cell<bool> = const { Cell::new(true) };
}

pub fn is_grad_enabled() -> bool {
    GRAD_ENABLED.with(|g| g.get())
}

/// Restores the previous grad mode on drop.
pub struct GradModeGuard {
    prev: bool,
}

impl GradModeGuard {
    pub fn new(enabled: bool) -> Self {
        let prev = GRAD_ENABLED.with(|g| g.replace(enabled));
        GradModeGuard { prev }
    }
}

impl Drop for GradModeGuard {
    fn drop(&mut self) {
        GRAD_ENABLED.with(|g| g.set(self.prev));
    }
}

/// Runs `f` with graph recording disabled.
pub fn no_grad<R>(f: impl FnOnce() -> R) -> R {
    let _guard = GradModeGuard::new(false);
    f()
}

pub(crate) struct VjpCtx<'a, T: Real> {
    pub inputs: &'a [Tensor<T>],
    pub out: &'a Tensor<T>,
    pub grad: &'a Tensor<T>,
    pub needs: &'a [bool],
}

pub(crate) type VjpFn<T> = Box<dyn Fn(&VjpCtx<'_, T>) -> Result<Vec<Option<Tensor<T>>>>>;

pub(crate) struct GradFn<T: Real> {
    pub name: &'static str,
    pub inputs: Vec<Tensor<T>>,
    pub vjp: VjpFn<T>,
}

pub(crate) struct Node<T: Real> {
    id: usize,
    shape: Vec<usize>,
    data: Rc<Vec<T>>,
    requires_grad: bool,
    grad_fn: Option<GradFn<T>>,
}

#[derive(Clone)]
pub struct Tensor<T: Real>(Rc<Node<T>>);

impl<T: Real> fmt::Debug for Tensor<T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let head: Vec<T> = self.0.data.iter().take(8).copied().collect();
        f.debug_struct("Tensor")
            .field("shape", &self.0.shape)
            .field("dtype", &T::NAME)
            .field("requires_grad", &self.0.requires_grad)
            .field("op", &self.0.grad_fn.as_ref().map(|g| g.name))
            .field("head", &head)
            .finish()
    }
}

pub(crate) fn numel(shape: &[usize]) -> usize {
    shape.iter().product()
}

impl<T: Real> Tensor<T> {
    fn from_parts(data: Rc<Vec<T>>, shape: Vec<usize>, requires_grad: bool, grad_fn: Option<GradFn<T>>) -> Self {
        debug_assert_eq!(data.len(), numel(&shape), "data length vs shape {shape:?}");
        Tensor(Rc::new(Node { id: NEXT_ID.fetch_add(1, Ordering::Relaxed), shape, data, requires_grad, grad_fn }))
    }

    pub fn from_vec(data: Vec<T>, shape: &[usize]) -> Result<Self> {
        if data.len() != numel(shape) {
            return Err(DiffError::Shape {
                op: "from_vec",
                detail: format!("{} values cannot fill shape {:?}", data.len(), shape),
            });
        }
        Ok(Self::from_parts(Rc::new(data), shape.to_vec(), false, None))
    }

    pub fn from_f64(data: &[f64], shape: &[usize]) -> Result<Self> {
        Self::from_vec(data.iter().map(|&v| T::of(v)).collect(), shape)
    }

    pub fn scalar(v: T) -> Self {
        Self::from_parts(Rc::new(vec![v]), vec![], false, None)
    }

    pub fn full(shape: &[usize], v: T) -> Self {
        Self::from_parts(Rc::new(vec![v; numel(shape)]), shape.to_vec(), false, None)
    }

    pub fn zeros(shape: &[usize]) -> Self {
        Self::full(shape, T::zero())
    }

    pub fn ones(shape: &[usize]) -> Self {
        Self::full(shape, T::one())
    }

    /// A leaf that participates in gradient computation.
    pub fn param(data: Vec<T>, shape: &[usize]) -> Result<Self> {
        let t = Self::from_vec(data, shape)?;
        Ok(t.requires_grad_(true))
    }

    /// Same values, new leaf identity with the given gradient flag.
    pub fn requires_grad_(&self, flag: bool) -> Self {
        Self::from_parts(self.0.data.clone(), self.0.shape.clone(), flag, None)
    }

    /// Same values, cut from the graph.
    pub fn detach(&self) -> Self {
        Self::from_parts(self.0.data.clone(), self.0.shape.clone(), false, None)
    }

    pub(crate) fn new_result(data: Vec<T>, shape: Vec<usize>, name: &'static str, inputs: &[&Tensor<T>], vjp: VjpFn<T>) -> Self {
        Self::new_result_shared(Rc::new(data), shape, name, inputs, vjp)
    }

    pub(crate) fn new_result_shared(
        data: Rc<Vec<T>>,
        shape: Vec<usize>,
        name: &'static str,
        inputs: &[&Tensor<T>],
        vjp: VjpFn<T>,
    ) -> Self {
        let track = is_grad_enabled() && inputs.iter().any(|t| t.requires_grad());
        if track {
            let grad_fn = GradFn { name, inputs: inputs.iter().map(|t| (*t).clone()).collect(), vjp };
            Self::from_parts(data, shape, true, Some(grad_fn))
        } else {
            Self::from_parts(data, shape, false, None)
        }
    }

    pub(crate) fn constant(data: Vec<T>, shape: Vec<usize>) -> Self {
        Self::from_parts(Rc::new(data), shape, false, None)
    }

    pub(crate) fn data_rc(&self) -> &Rc<Vec<T>> {
        &self.0.data
    }

    pub fn id(&self) -> usize {
        self.0.id
    }

    pub fn shape(&self) -> &[usize] {
        &self.0.shape
    }

    pub fn dims(&self) -> usize {
        self.0.shape.len()
    }

    pub fn dim(&self, axis: usize) -> usize {
        self.0.shape[axis]
    }

    pub fn numel(&self) -> usize {
        self.0.data.len()
    }

    pub fn data(&self) -> &[T] {
        &self.0.data
    }

    pub fn to_vec(&self) -> Vec<T> {
        self.0.data.to_vec()
    }

    pub fn to_f64_vec(&self) -> Vec<f64> {
        self.0.data.iter().map(|v| v.f64()).collect()
    }

    pub fn requires_grad(&self) -> bool {
        self.0.requires_grad
    }

    pub fn is_leaf(&self) -> bool {
        self.0.grad_fn.is_none()
    }

    pub fn op_name(&self) -> Option<&'static str> {
        self.0.grad_fn.as_ref().map(|g| g.name)
    }

    /// Value of a one-element tensor.
    pub fn item(&self) -> T {
        assert_eq!(self.numel(), 1, "item() on tensor of shape {:?}", self.shape());
        self.0.data[0]
    }

    /// Converts precision; the result is a fresh leaf without gradient.
    pub fn cast<U: Real>(&self) -> Tensor<U> {
        Tensor::<U>::constant(self.0.data.iter().map(|v| U::of(v.f64())).collect(), self.0.shape.clone())
    }

    /// Gradients of this scalar w.r.t. every reachable leaf that requires one.
    pub fn backward(&self) -> Result<Grads<T>> {
        backward_all(self, false)
    }
}

/// Leaf gradients produced by a backward pass, keyed by tensor identity.
pub struct Grads<T: Real> {
    map: HashMap<usize, Tensor<T>>,
}

impl<T: Real> Grads<T> {
    pub fn get(&self, t: &Tensor<T>) -> Option<&Tensor<T>> {
        self.map.get(&t.id())
    }

    pub fn len(&self) -> usize {
        self.map.len()
    }

    pub fn is_empty(&self) -> bool {
        self.map.is_empty()
    }
}

fn topo_order<T: Real>(root: &Tensor<T>) -> Vec<Tensor<T>> {
    let mut order = Vec::new();
    let mut visited: HashSet<usize> = HashSet::new();
    // (node, children_pushed)
    let mut stack: Vec<(Tensor<T>, bool)> = vec![(root.clone(), false)];
    while let Some((t, expanded)) = stack.pop() {
        if expanded {
            order.push(t);
            continue;
        }
        if !visited.insert(t.id()) {
            continue;
        }
        stack.push((t.clone(), true));
        if let Some(gf) = &t.0.grad_fn {
            for inp in gf.inputs.iter().rev() {
                if inp.requires_grad() && !visited.contains(&inp.id()) {
                    stack.push((inp.clone(), false));
                }
            }
        }
    }
    order
}

fn run_backward<T: Real>(root: &Tensor<T>, create_graph: bool, keep: &HashSet<usize>) -> Result<HashMap<usize, Tensor<T>>> {
    if root.numel() != 1 {
        return Err(DiffError::NonScalar(root.shape().to_vec()));
    }
    let mut out = HashMap::new();
    if !root.requires_grad() {
        return Ok(out);
    }
    let _guard = GradModeGuard::new(create_graph);
    let order = topo_order(root);
    let mut grads: HashMap<usize, Tensor<T>> = HashMap::new();
    grads.insert(root.id(), Tensor::ones(root.shape()));

    for node in order.iter().rev() {
        let Some(g) = grads.remove(&node.id()) else {
            continue;
        };
        let Some(gf) = &node.0.grad_fn else {
            // Leaf.
            if keep.is_empty() || keep.contains(&node.id()) {
                out.insert(node.id(), g);
            }
            continue;
        };
        if keep.contains(&node.id()) {
            out.insert(node.id(), g.clone());
        }
        let needs: Vec<bool> = gf.inputs.iter().map(|t| t.requires_grad()).collect();
        let ctx = VjpCtx { inputs: &gf.inputs, out: node, grad: &g, needs: &needs };
        let input_grads = (gf.vjp)(&ctx)?;
        debug_assert_eq!(input_grads.len(), gf.inputs.len(), "vjp arity for {}", gf.name);
        for (inp, ig) in gf.inputs.iter().zip(input_grads) {
            let Some(ig) = ig else { continue };
            if !inp.requires_grad() {
                continue;
            }
            debug_assert_eq!(ig.shape(), inp.shape(), "grad shape from {}", gf.name);
            let merged = match grads.remove(&inp.id()) {
                Some(prev) => prev.add(&ig)?,
                None => ig,
            };
            grads.insert(inp.id(), merged);
        }
    }
    Ok(out)
}

fn backward_all<T: Real>(root: &Tensor<T>, create_graph: bool) -> Result<Grads<T>> {
    let map = run_backward(root, create_graph, &HashSet::new())?;
    Ok(Grads { map })
}

/// Gradients of scalar `root` w.r.t. each tensor in `wrt` (zeros where
/// unreachable). With `create_graph`, the returned gradients are themselves
/// differentiable.
pub fn grad<T: Real>(root: &Tensor<T>, wrt: &[&Tensor<T>], create_graph: bool) -> Result<Vec<Tensor<T>>> {
    let keep: HashSet<usize> = wrt.iter().map(|t| t.id()).collect();
    let mut map = run_backward(root, create_graph, &keep)?;
    Ok(wrt.iter().map(|t| map.remove(&t.id()).unwrap_or_else(|| Tensor::zeros(t.shape()))).collect())
}
