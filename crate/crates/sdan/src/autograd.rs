//! Reverse-mode differentiation over the tensor kernels.
//!
//! A [`Var`] wraps a value tensor plus the recording needed to back-propagate
//! a scalar loss. Graphs are built eagerly by the op functions below; when
//! recording is off (inside [`no_grad`], or when no input requires a
//! gradient) the same kernels run and no graph is kept, so detached values
//! are bit-identical to graph-mode values.

use std::cell::{Cell, Ref, RefCell};
use std::collections::HashSet;
use std::rc::Rc;
use std::sync::atomic::{AtomicU64, Ordering};

use crate::conv::{conv2d, conv2d_grad_bias, conv2d_grad_input, conv2d_grad_weight, ConvSpec};
use crate::error::{Error, Result};
use crate::tensor::{
    concat_channels, embed_channels, gelu, gelu_derivative, narrow_channels, pixel_norm,
    pixel_norm_backward, pixel_shuffle, pixel_unshuffle, split_channels, star_product, Elem,
    Shape, Tensor,
};

thread_local! {
    static GRAD_ENABLED: Cell<bool> = const { Cell::new(true) };
}

static NEXT_ID: AtomicU64 = AtomicU64::new(0);

/// Run `f` with gradient recording disabled on this thread.
pub fn no_grad<R>(f: impl FnOnce() -> R) -> R {
    let prev = GRAD_ENABLED.with(|g| g.replace(false));
    let _restore = RestoreGuard(prev);
    f()
}

struct RestoreGuard(bool);

impl Drop for RestoreGuard {
    fn drop(&mut self) {
        GRAD_ENABLED.with(|g| g.set(self.0));
    }
}

pub fn grad_enabled() -> bool {
    GRAD_ENABLED.with(|g| g.get())
}

type BackwardFn<T> = Box<dyn Fn(&Tensor<T>, &[Var<T>])>;

struct Node<T: Elem> {
    id: u64,
    value: RefCell<Tensor<T>>,
    grad: RefCell<Option<Tensor<T>>>,
    requires_grad: bool,
    parents: Vec<Var<T>>,
    backward: Option<BackwardFn<T>>,
}

/// Handle to a node of the computation graph. Cloning is cheap and shares
/// the underlying value and gradient accumulator.
pub struct Var<T: Elem> {
    node: Rc<Node<T>>,
}

impl<T: Elem> Clone for Var<T> {
    fn clone(&self) -> Self {
        Var { node: Rc::clone(&self.node) }
    }
}

impl<T: Elem> Var<T> {
    fn new_node(
        value: Tensor<T>,
        parents: Vec<Var<T>>,
        backward: Option<BackwardFn<T>>,
        requires_grad: bool,
    ) -> Var<T> {
        Var {
            node: Rc::new(Node {
                id: NEXT_ID.fetch_add(1, Ordering::Relaxed),
                value: RefCell::new(value),
                grad: RefCell::new(None),
                requires_grad,
                parents,
                backward,
            }),
        }
    }

    /// Trainable leaf: gradients accumulate here during [`backward`].
    pub fn param(value: Tensor<T>) -> Var<T> {
        Var::new_node(value, vec![], None, true)
    }

    /// Non-trainable leaf (inputs, targets).
    pub fn constant(value: Tensor<T>) -> Var<T> {
        Var::new_node(value, vec![], None, false)
    }

    /// Op output node; drops to a detached value when recording is off.
    pub(crate) fn apply(value: Tensor<T>, parents: Vec<Var<T>>, backward: BackwardFn<T>) -> Var<T> {
        let recording = grad_enabled() && parents.iter().any(|p| p.node.requires_grad);
        if recording {
            Var::new_node(value, parents, Some(backward), true)
        } else {
            Var::new_node(value, vec![], None, false)
        }
    }

    pub fn value(&self) -> Ref<'_, Tensor<T>> {
        self.node.value.borrow()
    }

    pub fn value_clone(&self) -> Tensor<T> {
        self.node.value.borrow().clone()
    }

    /// Replace the stored value in place. Used by the optimizer; the shape
    /// must not change.
    pub fn set_value(&self, value: Tensor<T>) -> Result<()> {
        if value.shape() != self.shape() {
            return Err(Error::config("set_value: shape change is not allowed"));
        }
        *self.node.value.borrow_mut() = value;
        Ok(())
    }

    pub fn shape(&self) -> Shape {
        self.node.value.borrow().shape()
    }

    pub fn requires_grad(&self) -> bool {
        self.node.requires_grad
    }

    pub fn grad(&self) -> Option<Tensor<T>> {
        self.node.grad.borrow().clone()
    }

    /// Take the accumulated gradient, leaving none.
    pub fn take_grad(&self) -> Option<Tensor<T>> {
        self.node.grad.borrow_mut().take()
    }

    pub fn zero_grad(&self) {
        *self.node.grad.borrow_mut() = None;
    }

    fn id(&self) -> u64 {
        self.node.id
    }

    /// Add into the gradient accumulator (no-op unless this node requires
    /// gradients). Backward functions and tests seed gradients through this.
    pub fn accumulate_grad(&self, delta: Tensor<T>) {
        if !self.node.requires_grad {
            return;
        }
        let mut slot = self.node.grad.borrow_mut();
        match slot.as_mut() {
            Some(acc) => acc.add_assign(&delta).expect("gradient shape agrees with value"),
            None => *slot = Some(delta),
        }
    }
}

/// Parents before children, ending at `root`; only the requires-grad
/// subgraph is visited. Iterative so deep graphs cannot overflow the stack.
fn topo_order<T: Elem>(root: &Var<T>) -> Vec<Var<T>> {
    let mut order = Vec::new();
    let mut visited = HashSet::new();
    visited.insert(root.id());
    let mut stack: Vec<(Var<T>, usize)> = vec![(root.clone(), 0)];
    while let Some((var, next_parent)) = stack.last_mut() {
        let parents = &var.node.parents;
        if *next_parent < parents.len() {
            let p = parents[*next_parent].clone();
            *next_parent += 1;
            if p.node.requires_grad && visited.insert(p.id()) {
                stack.push((p, 0));
            }
        } else {
            order.push(var.clone());
            stack.pop();
        }
    }
    order
}

/// Back-propagate from a scalar loss. Every reachable parameter leaf ends up
/// with d(loss)/d(param) added into its gradient accumulator; intermediate
/// gradients are freed as soon as they are consumed.
pub fn backward<T: Elem>(loss: &Var<T>) -> Result<()> {
    if !loss.shape().is_scalar() {
        return Err(Error::config(format!(
            "backward requires a scalar loss of shape (1, 1, 1, 1), got {}",
            loss.shape()
        )));
    }
    if !loss.node.requires_grad {
        return Err(Error::config("backward: loss does not depend on any trainable input"));
    }
    loss.accumulate_grad(Tensor::scalar(T::from_f64(1.0)));
    let order = topo_order(loss);
    for var in order.iter().rev() {
        let taken = var.node.grad.borrow_mut().take();
        let Some(g) = taken else { continue };
        match &var.node.backward {
            Some(f) => f(&g, &var.node.parents),
            None => *var.node.grad.borrow_mut() = Some(g),
        }
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// Differentiable ops
// ---------------------------------------------------------------------------

pub fn add<T: Elem>(a: &Var<T>, b: &Var<T>) -> Result<Var<T>> {
    let value = a.value().add(&b.value())?;
    Ok(Var::apply(
        value,
        vec![a.clone(), b.clone()],
        Box::new(|g, parents| {
            parents[0].accumulate_grad(g.clone());
            parents[1].accumulate_grad(g.clone());
        }),
    ))
}

/// Element-wise product (the star operation).
pub fn mul<T: Elem>(a: &Var<T>, b: &Var<T>) -> Result<Var<T>> {
    let value = star_product(&a.value(), &b.value())?;
    Ok(Var::apply(
        value,
        vec![a.clone(), b.clone()],
        Box::new(|g, parents| {
            if parents[0].requires_grad() {
                let gb = star_product(g, &parents[1].value()).expect("mul backward shape");
                parents[0].accumulate_grad(gb);
            }
            if parents[1].requires_grad() {
                let ga = star_product(g, &parents[0].value()).expect("mul backward shape");
                parents[1].accumulate_grad(ga);
            }
        }),
    ))
}

pub fn gelu_op<T: Elem>(x: &Var<T>) -> Var<T> {
    let value = gelu(&x.value());
    Var::apply(
        value,
        vec![x.clone()],
        Box::new(|g, parents| {
            let input = parents[0].value();
            let mut out = g.clone();
            for (gv, &xv) in out.data_mut().iter_mut().zip(input.data()) {
                *gv = T::from_f64(gv.to_f64() * gelu_derivative(xv.to_f64()));
            }
            drop(input);
            parents[0].accumulate_grad(out);
        }),
    )
}

pub fn conv2d_op<T: Elem>(
    input: &Var<T>,
    weight: &Var<T>,
    bias: Option<&Var<T>>,
    spec: ConvSpec,
) -> Result<Var<T>> {
    let value = conv2d(&input.value(), &weight.value(), bias.map(|b| b.node.value.borrow()).as_deref(), &spec)?;
    let mut parents = vec![input.clone(), weight.clone()];
    if let Some(b) = bias {
        parents.push(b.clone());
    }
    Ok(Var::apply(
        value,
        parents,
        Box::new(move |g, parents| {
            if parents[0].requires_grad() {
                let gi = conv2d_grad_input(g, &parents[1].value(), &spec)
                    .expect("conv backward input");
                parents[0].accumulate_grad(gi);
            }
            if parents[1].requires_grad() {
                let gw = conv2d_grad_weight(&parents[0].value(), g, &spec)
                    .expect("conv backward weight");
                parents[1].accumulate_grad(gw);
            }
            if let Some(b) = parents.get(2) {
                if b.requires_grad() {
                    b.accumulate_grad(conv2d_grad_bias(g));
                }
            }
        }),
    ))
}

pub fn pixel_shuffle_op<T: Elem>(x: &Var<T>, r: usize) -> Result<Var<T>> {
    let value = pixel_shuffle(&x.value(), r)?;
    Ok(Var::apply(
        value,
        vec![x.clone()],
        Box::new(move |g, parents| {
            let gi = pixel_unshuffle(g, r).expect("pixel_shuffle backward");
            parents[0].accumulate_grad(gi);
        }),
    ))
}

pub fn pixel_norm_op<T: Elem>(
    x: &Var<T>,
    gamma: &Var<T>,
    beta: &Var<T>,
    eps: f64,
) -> Result<Var<T>> {
    let value = pixel_norm(&x.value(), &gamma.value(), &beta.value(), eps)?;
    Ok(Var::apply(
        value,
        vec![x.clone(), gamma.clone(), beta.clone()],
        Box::new(move |g, parents| {
            let (gx, ggamma, gbeta) =
                pixel_norm_backward(&parents[0].value(), &parents[1].value(), eps, g)
                    .expect("pixel_norm backward");
            parents[0].accumulate_grad(gx);
            parents[1].accumulate_grad(ggamma);
            parents[2].accumulate_grad(gbeta);
        }),
    ))
}

pub fn concat_op<T: Elem>(parts: &[Var<T>]) -> Result<Var<T>> {
    let borrowed: Vec<_> = parts.iter().map(|p| p.value()).collect();
    let refs: Vec<&Tensor<T>> = borrowed.iter().map(|r| &**r).collect();
    let value = concat_channels(&refs)?;
    let sizes: Vec<usize> = refs.iter().map(|t| t.shape().c).collect();
    drop(borrowed);
    Ok(Var::apply(
        value,
        parts.to_vec(),
        Box::new(move |g, parents| {
            let slices = split_channels(g, &sizes).expect("concat backward split");
            for (parent, slice) in parents.iter().zip(slices) {
                parent.accumulate_grad(slice);
            }
        }),
    ))
}

/// Contiguous channel slice; the gradient embeds back at the same offset.
pub fn narrow_op<T: Elem>(x: &Var<T>, start: usize, len: usize) -> Result<Var<T>> {
    let total_c = x.shape().c;
    let value = narrow_channels(&x.value(), start, len)?;
    Ok(Var::apply(
        value,
        vec![x.clone()],
        Box::new(move |g, parents| {
            let gi = embed_channels(g, start, total_c).expect("narrow backward");
            parents[0].accumulate_grad(gi);
        }),
    ))
}

/// Sum of all elements, as a scalar node.
pub fn sum_all<T: Elem>(x: &Var<T>) -> Var<T> {
    let value = Tensor::scalar(T::from_f64(x.value().sum_f64()));
    let shape = x.shape();
    Var::apply(
        value,
        vec![x.clone()],
        Box::new(move |g, parents| {
            let gv = g.data()[0];
            parents[0].accumulate_grad(Tensor::full(shape, gv));
        }),
    )
}

// ---------------------------------------------------------------------------
// Gradient checking
// ---------------------------------------------------------------------------

/// Central-difference step used by [`grad_check`].
const FD_STEP: f64 = 1e-3;

#[derive(Clone, Debug)]
pub struct GradCheckReport {
    pub op_name: String,
    pub max_rel_err: f64,
    pub tolerance: f64,
    pub passed: bool,
}

impl std::fmt::Display for GradCheckReport {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(
            f,
            "{}: max_rel_err={:.3e} tolerance={:.1e} {}",
            self.op_name,
            self.max_rel_err,
            self.tolerance,
            if self.passed { "ok" } else { "FAILED" }
        )
    }
}

/// Compare analytic gradients against central finite differences for a set
/// of existing leaves. `eval` must rebuild the scalar loss from the leaves'
/// current values on every call; this lets whole blocks be checked through
/// their own parameter nodes.
///
/// The relative error denominator is max(|analytic|, |numeric|, 1e-8).
pub fn grad_check_vars<F>(
    op_name: &str,
    leaves: &[Var<f64>],
    eval: F,
    tolerance: f64,
) -> Result<GradCheckReport>
where
    F: Fn() -> Result<Var<f64>>,
{
    for leaf in leaves {
        leaf.zero_grad();
    }
    let loss = eval()?;
    if !loss.shape().is_scalar() {
        return Err(Error::config(format!(
            "grad_check {op_name}: closure must produce a scalar, got {}",
            loss.shape()
        )));
    }
    if !loss.value().data()[0].is_finite() {
        return Err(Error::numeric(format!("grad_check {op_name}: non-finite loss value")));
    }
    backward(&loss)?;
    drop(loss);
    let analytic: Vec<Tensor<f64>> =
        leaves.iter().map(|v| v.grad().unwrap_or_else(|| Tensor::zeros(v.shape()))).collect();

    let probe = || -> Result<f64> {
        let out = no_grad(&eval)?;
        let v = out.value().data()[0];
        if !v.is_finite() {
            return Err(Error::numeric(format!(
                "grad_check {op_name}: non-finite value during finite differences"
            )));
        }
        Ok(v)
    };

    let mut max_rel_err = 0.0f64;
    for (k, leaf) in leaves.iter().enumerate() {
        let base = leaf.value_clone();
        for e in 0..base.numel() {
            let orig = base.data()[e];
            let mut bumped = base.clone();
            bumped.data_mut()[e] = orig + FD_STEP;
            leaf.set_value(bumped)?;
            let up = probe()?;
            let mut dipped = base.clone();
            dipped.data_mut()[e] = orig - FD_STEP;
            leaf.set_value(dipped)?;
            let down = probe()?;
            leaf.set_value(base.clone())?;
            let numeric = (up - down) / (2.0 * FD_STEP);
            let a = analytic[k].data()[e];
            if !a.is_finite() || !numeric.is_finite() {
                return Err(Error::numeric(format!(
                    "grad_check {op_name}: non-finite gradient at input {k} element {e}"
                )));
            }
            let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(1e-8);
            if rel > max_rel_err {
                max_rel_err = rel;
            }
        }
    }
    Ok(GradCheckReport {
        op_name: op_name.to_string(),
        max_rel_err,
        tolerance,
        passed: max_rel_err <= tolerance,
    })
}

/// Gradient check of a scalar-valued closure over plain input tensors.
pub fn grad_check<F>(
    op_name: &str,
    op: F,
    inputs: &[Tensor<f64>],
    tolerance: f64,
) -> Result<GradCheckReport>
where
    F: Fn(&[Var<f64>]) -> Result<Var<f64>>,
{
    let vars: Vec<Var<f64>> = inputs.iter().map(|t| Var::param(t.clone())).collect();
    grad_check_vars(op_name, &vars, || op(&vars), tolerance)
}
