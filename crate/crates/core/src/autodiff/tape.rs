use std::cell::RefCell;
use std::ops::{Add, Div, Mul, Neg, Sub};
use std::rc::Rc;

use ndarray::{Axis, IxDyn, Zip};

use super::Array;
use crate::error::{Error, Result};

/// Gradients for each parent, in parent order. `mask[i]` says whether parent
/// `i` needs a gradient; entries for unmasked parents may be `None`.
type BackwardFn = Box<dyn Fn(&Array, &[bool]) -> Vec<Option<Array>>>;

struct Node {
    value: Rc<Array>,
    parents: Vec<usize>,
    backward: Option<BackwardFn>,
    requires_grad: bool,
}

/// Records operations over dense arrays for reverse-mode differentiation.
///
/// Nodes are appended in evaluation order, so the node list is already a
/// topological order. Leaf gradients accumulate across [`Tape::backward`]
/// calls until [`Tape::zero_grad`].
#[derive(Default)]
pub struct Tape {
    nodes: RefCell<Vec<Node>>,
    grads: RefCell<Vec<Option<Array>>>,
}

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy)]
pub struct Var<'t> {
    tape: &'t Tape,
    id: usize,
}

impl std::fmt::Debug for Var<'_> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Var").field("id", &self.id).field("shape", &self.shape()).finish()
    }
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn push_node(&self, value: Rc<Array>, parents: Vec<usize>, backward: Option<BackwardFn>, requires_grad: bool) -> Var<'_> {
        let mut nodes = self.nodes.borrow_mut();
        nodes.push(Node { value, parents, backward, requires_grad });
        Var { tape: self, id: nodes.len() - 1 }
    }

    /// A value that does not require gradients.
    pub fn constant(&self, value: Array) -> Var<'_> {
        self.push_node(Rc::new(value), vec![], None, false)
    }

    pub fn scalar(&self, x: f64) -> Var<'_> {
        self.constant(Array::from_elem(IxDyn(&[]), x))
    }

    /// A differentiable leaf (parameter or input under test).
    pub fn leaf(&self, value: Array) -> Var<'_> {
        self.push_node(Rc::new(value), vec![], None, true)
    }

    pub(crate) fn op<'t>(
        &'t self,
        value: Array,
        parents: &[Var<'t>],
        backward: impl Fn(&Array, &[bool]) -> Vec<Option<Array>> + 'static,
    ) -> Var<'t> {
        self.op_rc(Rc::new(value), parents, backward)
    }

    pub(crate) fn op_rc<'t>(
        &'t self,
        value: Rc<Array>,
        parents: &[Var<'t>],
        backward: impl Fn(&Array, &[bool]) -> Vec<Option<Array>> + 'static,
    ) -> Var<'t> {
        let rg = {
            let nodes = self.nodes.borrow();
            parents.iter().any(|p| nodes[p.id].requires_grad)
        };
        let ids = parents.iter().map(|p| p.id).collect();
        if rg {
            self.push_node(value, ids, Some(Box::new(backward)), true)
        } else {
            self.push_node(value, ids, None, false)
        }
    }

    /// Back-propagates from a scalar `loss`, adding into the leaf accumulators.
    pub fn backward(&self, loss: Var<'_>) -> Result<()> {
        let nodes = self.nodes.borrow();
        if nodes[loss.id].value.len() != 1 {
            return Err(Error::Validation(format!(
                "backward needs a scalar loss, got shape {:?}",
                nodes[loss.id].value.shape()
            )));
        }
        let mut grads: Vec<Option<Array>> = vec![None; loss.id + 1];
        grads[loss.id] = Some(Array::ones(nodes[loss.id].value.raw_dim()));
        let mut acc = self.grads.borrow_mut();
        if acc.len() < nodes.len() {
            acc.resize(nodes.len(), None);
        }
        for id in (0..=loss.id).rev() {
            let Some(g) = grads[id].take() else { continue };
            let node = &nodes[id];
            if !node.requires_grad {
                continue;
            }
            if node.parents.is_empty() {
                match &mut acc[id] {
                    Some(a) => *a += &g,
                    slot => *slot = Some(g),
                }
                continue;
            }
            let Some(bw) = &node.backward else { continue };
            let mask: Vec<bool> = node.parents.iter().map(|&p| nodes[p].requires_grad).collect();
            let pg = bw(&g, &mask);
            for ((&pid, pgi), m) in node.parents.iter().zip(pg).zip(&mask) {
                if !m {
                    continue;
                }
                if let Some(pgi) = pgi {
                    debug_assert_eq!(pgi.shape(), nodes[pid].value.shape(), "gradient shape mismatch");
                    match &mut grads[pid] {
                        Some(a) => *a += &pgi,
                        slot => *slot = Some(pgi),
                    }
                }
            }
        }
        Ok(())
    }

    /// Accumulated gradient of a leaf, if any reached it.
    pub fn grad(&self, v: Var<'_>) -> Option<Array> {
        self.grads.borrow().get(v.id).cloned().flatten()
    }

    pub fn zero_grad(&self) {
        self.grads.borrow_mut().iter_mut().for_each(|g| *g = None);
    }
}

/// Sums `g` down to `shape` (undoing broadcasting).
pub(crate) fn reduce_to(g: &Array, shape: &[usize]) -> Array {
    if g.shape() == shape {
        return g.clone();
    }
    let mut r = g.clone();
    while r.ndim() > shape.len() {
        r = r.sum_axis(Axis(0));
    }
    for (ax, &s) in shape.iter().enumerate() {
        if s == 1 && r.shape()[ax] != 1 {
            r = r.sum_axis(Axis(ax)).insert_axis(Axis(ax));
        }
    }
    r
}

fn broadcast_shape(a: &[usize], b: &[usize]) -> Vec<usize> {
    let n = a.len().max(b.len());
    (0..n)
        .map(|i| {
            let x = if i + a.len() >= n { a[i + a.len() - n] } else { 1 };
            let y = if i + b.len() >= n { b[i + b.len() - n] } else { 1 };
            if x == y || y == 1 {
                x
            } else if x == 1 {
                y
            } else {
                panic!("shapes {a:?} and {b:?} do not broadcast")
            }
        })
        .collect()
}

fn broadcast(a: &Array, shape: &[usize]) -> Array {
    a.broadcast(IxDyn(shape)).expect("broadcast").to_owned()
}

fn zip_map(a: &Array, b: &Array, f: impl Fn(f64, f64) -> f64) -> Array {
    let shape = broadcast_shape(a.shape(), b.shape());
    let av = a.broadcast(IxDyn(&shape)).unwrap();
    let bv = b.broadcast(IxDyn(&shape)).unwrap();
    Zip::from(&av).and(&bv).map_collect(|&x, &y| f(x, y))
}

impl<'t> Var<'t> {
    pub fn tape(&self) -> &'t Tape {
        self.tape
    }

    pub fn id(&self) -> usize {
        self.id
    }

    pub fn value(&self) -> Rc<Array> {
        self.tape.nodes.borrow()[self.id].value.clone()
    }

    pub fn shape(&self) -> Vec<usize> {
        self.tape.nodes.borrow()[self.id].value.shape().to_vec()
    }

    /// The single entry of a one-element value.
    pub fn item(&self) -> f64 {
        let v = self.value();
        assert_eq!(v.len(), 1, "item() on a value of shape {:?}", v.shape());
        *v.iter().next().unwrap()
    }

    pub fn requires_grad(&self) -> bool {
        self.tape.nodes.borrow()[self.id].requires_grad
    }

    /// Detaches the value from the graph.
    pub fn detach(self) -> Var<'t> {
        let v = self.value();
        self.tape.push_node(v, vec![], None, false)
    }

    /// Elementwise map with derivative `df(x, y)` where `y = f(x)`.
    pub(crate) fn unary(self, f: impl Fn(f64) -> f64, df: impl Fn(f64, f64) -> f64 + 'static) -> Var<'t> {
        let x = self.value();
        let y = Rc::new(x.mapv(&f));
        let yc = y.clone();
        self.tape.op_rc(y, &[self], move |g, _| {
            let mut out = g.clone();
            Zip::from(&mut out).and(&*x).and(&*yc).for_each(|o, &x, &y| *o *= df(x, y));
            vec![Some(out)]
        })
    }

    pub fn exp(self) -> Var<'t> {
        self.unary(f64::exp, |_, y| y)
    }

    pub fn ln(self) -> Var<'t> {
        self.unary(f64::ln, |x, _| 1.0 / x)
    }

    pub fn sqrt(self) -> Var<'t> {
        self.unary(f64::sqrt, |_, y| 0.5 / y)
    }

    pub fn square(self) -> Var<'t> {
        self.unary(|x| x * x, |x, _| 2.0 * x)
    }

    pub fn powf(self, p: f64) -> Var<'t> {
        self.unary(move |x| x.powf(p), move |x, _| p * x.powf(p - 1.0))
    }

    pub fn abs(self) -> Var<'t> {
        self.unary(f64::abs, |x, _| if x > 0.0 { 1.0 } else if x < 0.0 { -1.0 } else { 0.0 })
    }

    pub fn cosh(self) -> Var<'t> {
        self.unary(f64::cosh, |x, _| x.sinh())
    }

    pub fn sinh(self) -> Var<'t> {
        self.unary(f64::sinh, |x, _| x.cosh())
    }

    /// `acosh` clamped below at `1 + 1e-15`; zero subgradient beyond the clamp.
    pub fn acosh(self) -> Var<'t> {
        use crate::manifold::ACOSH_FLOOR;
        self.unary(
            |x| x.max(ACOSH_FLOOR).acosh(),
            |x, _| if x <= ACOSH_FLOOR { 0.0 } else { 1.0 / (x * x - 1.0).sqrt() },
        )
    }

    pub fn asinh(self) -> Var<'t> {
        self.unary(f64::asinh, |x, _| 1.0 / (x * x + 1.0).sqrt())
    }

    /// `sinh(x) / x`, smooth at zero.
    pub fn sinhc(self) -> Var<'t> {
        self.unary(crate::manifold::sinhc, |x, _| {
            if x.abs() < 1e-2 {
                let x2 = x * x;
                x / 3.0 + x * x2 / 30.0 + x * x2 * x2 / 840.0
            } else {
                (x * x.cosh() - x.sinh()) / (x * x)
            }
        })
    }

    /// `asinh(x) / x`, smooth at zero.
    pub fn asinhc(self) -> Var<'t> {
        self.unary(
            |x| {
                if x.abs() < 1e-2 {
                    let x2 = x * x;
                    1.0 - x2 / 6.0 + 3.0 * x2 * x2 / 40.0 - 5.0 * x2 * x2 * x2 / 112.0
                } else {
                    x.asinh() / x
                }
            },
            |x, _| {
                if x.abs() < 1e-2 {
                    let x2 = x * x;
                    -x / 3.0 + 3.0 * x * x2 / 10.0 - 15.0 * x * x2 * x2 / 56.0
                } else {
                    (x / (1.0 + x * x).sqrt() - x.asinh()) / (x * x)
                }
            },
        )
    }

    /// ELU with unit scale.
    pub fn elu(self) -> Var<'t> {
        self.unary(|x| if x > 0.0 { x } else { x.exp_m1() }, |x, y| if x > 0.0 { 1.0 } else { y + 1.0 })
    }

    pub fn sigmoid(self) -> Var<'t> {
        self.unary(
            |x| {
                if x >= 0.0 {
                    1.0 / (1.0 + (-x).exp())
                } else {
                    let e = x.exp();
                    e / (1.0 + e)
                }
            },
            |_, y| y * (1.0 - y),
        )
    }

    /// Clamps into `[lo, hi]`; gradient passes only inside the interval.
    pub fn clamp(self, lo: f64, hi: f64) -> Var<'t> {
        self.unary(move |x| x.clamp(lo, hi), move |x, _| if x >= lo && x <= hi { 1.0 } else { 0.0 })
    }

    pub fn scale(self, c: f64) -> Var<'t> {
        self.unary(move |x| c * x, move |_, _| c)
    }

    pub fn shift(self, c: f64) -> Var<'t> {
        self.unary(move |x| x + c, |_, _| 1.0)
    }

    fn add_var(self, other: Var<'t>) -> Var<'t> {
        let (a, b) = (self.value(), other.value());
        let (sa, sb) = (a.shape().to_vec(), b.shape().to_vec());
        let y = zip_map(&a, &b, |x, y| x + y);
        self.tape.op(y, &[self, other], move |g, m| {
            vec![m[0].then(|| reduce_to(g, &sa)), m[1].then(|| reduce_to(g, &sb))]
        })
    }

    fn sub_var(self, other: Var<'t>) -> Var<'t> {
        let (a, b) = (self.value(), other.value());
        let (sa, sb) = (a.shape().to_vec(), b.shape().to_vec());
        let y = zip_map(&a, &b, |x, y| x - y);
        self.tape.op(y, &[self, other], move |g, m| {
            vec![m[0].then(|| reduce_to(g, &sa)), m[1].then(|| reduce_to(&g.mapv(|x| -x), &sb))]
        })
    }

    fn mul_var(self, other: Var<'t>) -> Var<'t> {
        let (a, b) = (self.value(), other.value());
        let y = zip_map(&a, &b, |x, y| x * y);
        self.tape.op(y, &[self, other], move |g, m| {
            vec![
                m[0].then(|| reduce_to(&zip_map(g, &b, |g, b| g * b), a.shape())),
                m[1].then(|| reduce_to(&zip_map(g, &a, |g, a| g * a), b.shape())),
            ]
        })
    }

    fn div_var(self, other: Var<'t>) -> Var<'t> {
        let (a, b) = (self.value(), other.value());
        let y = Rc::new(zip_map(&a, &b, |x, y| x / y));
        let yc = y.clone();
        self.tape.op_rc(y, &[self, other], move |g, m| {
            vec![
                m[0].then(|| reduce_to(&zip_map(g, &b, |g, b| g / b), a.shape())),
                m[1].then(|| {
                    // d(a/b)/db = -y / b
                    let gy = zip_map(g, &yc, |g, y| -g * y);
                    reduce_to(&zip_map(&gy, &b, |x, b| x / b), b.shape())
                }),
            ]
        })
    }

    /// Sum over `axes`, optionally keeping them as size-1 dimensions.
    pub fn sum_axes(self, axes: &[usize], keepdim: bool) -> Var<'t> {
        let x = self.value();
        let in_shape = x.shape().to_vec();
        let mut sorted = axes.to_vec();
        sorted.sort_unstable();
        let mut y = (*x).clone();
        for &ax in sorted.iter().rev() {
            y = y.sum_axis(Axis(ax));
        }
        let mut kept = y.clone();
        for &ax in &sorted {
            kept = kept.insert_axis(Axis(ax));
        }
        let kept_shape = kept.shape().to_vec();
        let out = if keepdim { kept } else { y };
        self.tape.op(out, &[self], move |g, _| {
            let g = g.to_shape(IxDyn(&kept_shape)).unwrap().to_owned();
            vec![Some(broadcast(&g, &in_shape))]
        })
    }

    pub fn mean_axes(self, axes: &[usize], keepdim: bool) -> Var<'t> {
        let shape = self.shape();
        let count: usize = axes.iter().map(|&a| shape[a]).product();
        self.sum_axes(axes, keepdim).scale(1.0 / count as f64)
    }

    pub fn sum(self) -> Var<'t> {
        let nd = self.shape().len();
        let axes: Vec<usize> = (0..nd).collect();
        self.sum_axes(&axes, false)
    }

    pub fn mean(self) -> Var<'t> {
        let n = self.value().len();
        self.sum().scale(1.0 / n as f64)
    }

    /// Euclidean norm over the last axis, kept as a size-1 axis.
    /// The subgradient at zero is zero.
    pub fn norm_last(self) -> Var<'t> {
        let x = self.value();
        let ax = Axis(x.ndim() - 1);
        let y = Rc::new(x.map_axis(ax, |r| r.dot(&r).sqrt()).insert_axis(ax));
        let yc = y.clone();
        self.tape.op_rc(y, &[self], move |g, _| {
            let scale = zip_map(g, &yc, |g, n| if n > 0.0 { g / n } else { 0.0 });
            vec![Some(zip_map(&x, &scale, |x, s| x * s))]
        })
    }

    pub fn reshape(self, shape: &[usize]) -> Var<'t> {
        let x = self.value();
        let in_shape = x.shape().to_vec();
        let y = x.to_shape(IxDyn(shape)).expect("reshape: element count mismatch").to_owned();
        self.tape.op(y, &[self], move |g, _| vec![Some(g.to_shape(IxDyn(&in_shape)).unwrap().to_owned())])
    }

    pub fn permute(self, axes: &[usize]) -> Var<'t> {
        let x = self.value();
        let y = (*x).clone().permuted_axes(IxDyn(axes)).as_standard_layout().to_owned();
        let mut inv = vec![0; axes.len()];
        for (i, &a) in axes.iter().enumerate() {
            inv[a] = i;
        }
        self.tape.op(y, &[self], move |g, _| {
            vec![Some(g.clone().permuted_axes(IxDyn(&inv)).as_standard_layout().to_owned())]
        })
    }

    /// Transpose of a 2-D value.
    pub fn t(self) -> Var<'t> {
        self.permute(&[1, 0])
    }

    pub fn slice_axis(self, axis: usize, start: usize, end: usize) -> Var<'t> {
        let x = self.value();
        let in_shape = x.shape().to_vec();
        let y = x.slice_axis(Axis(axis), (start..end).into()).to_owned();
        self.tape.op(y, &[self], move |g, _| {
            let mut out = Array::zeros(IxDyn(&in_shape));
            out.slice_axis_mut(Axis(axis), (start..end).into()).assign(g);
            vec![Some(out)]
        })
    }

    /// Rows `idx` along axis 0 (repeats allowed).
    pub fn index_select(self, idx: &[usize]) -> Var<'t> {
        let x = self.value();
        let in_shape = x.shape().to_vec();
        let y = x.select(Axis(0), idx);
        let idx = idx.to_vec();
        self.tape.op(y, &[self], move |g, _| {
            let mut out = Array::zeros(IxDyn(&in_shape));
            for (k, &i) in idx.iter().enumerate() {
                let mut row = out.index_axis_mut(Axis(0), i);
                row += &g.index_axis(Axis(0), k);
            }
            vec![Some(out)]
        })
    }

    /// 2-D matrix product.
    pub fn matmul(self, other: Var<'t>) -> Var<'t> {
        let (a, b) = (self.value(), other.value());
        let a2 = a.view().into_dimensionality::<ndarray::Ix2>().expect("matmul: lhs must be 2-D");
        let b2 = b.view().into_dimensionality::<ndarray::Ix2>().expect("matmul: rhs must be 2-D");
        assert_eq!(a2.ncols(), b2.nrows(), "matmul: inner dimensions differ");
        let y = a2.dot(&b2).into_dyn();
        self.tape.op(y, &[self, other], move |g, m| {
            let g2 = g.view().into_dimensionality::<ndarray::Ix2>().unwrap();
            let a2 = a.view().into_dimensionality::<ndarray::Ix2>().unwrap();
            let b2 = b.view().into_dimensionality::<ndarray::Ix2>().unwrap();
            vec![
                m[0].then(|| g2.dot(&b2.t()).into_dyn()),
                m[1].then(|| a2.t().dot(&g2).into_dyn()),
            ]
        })
    }
}

/// Concatenates along `axis`.
pub fn concat<'t>(parts: &[Var<'t>], axis: usize) -> Var<'t> {
    assert!(!parts.is_empty(), "concat of nothing");
    let tape = parts[0].tape;
    let values: Vec<Rc<Array>> = parts.iter().map(|p| p.value()).collect();
    let views: Vec<_> = values.iter().map(|v| v.view()).collect();
    let y = ndarray::concatenate(Axis(axis), &views).expect("concat: incompatible shapes");
    let sizes: Vec<usize> = values.iter().map(|v| v.shape()[axis]).collect();
    tape.op(y, parts, move |g, m| {
        let mut start = 0;
        sizes
            .iter()
            .zip(m)
            .map(|(&s, &need)| {
                let r = need.then(|| g.slice_axis(Axis(axis), (start..start + s).into()).to_owned());
                start += s;
                r
            })
            .collect()
    })
}

macro_rules! binary_ops {
    ($tr:ident, $method:ident, $inner:ident) => {
        impl<'t> $tr<Var<'t>> for Var<'t> {
            type Output = Var<'t>;
            fn $method(self, rhs: Var<'t>) -> Var<'t> {
                self.$inner(rhs)
            }
        }
    };
}

binary_ops!(Add, add, add_var);
binary_ops!(Sub, sub, sub_var);
binary_ops!(Mul, mul, mul_var);
binary_ops!(Div, div, div_var);

impl<'t> Neg for Var<'t> {
    type Output = Var<'t>;
    fn neg(self) -> Var<'t> {
        self.scale(-1.0)
    }
}

impl<'t> Add<f64> for Var<'t> {
    type Output = Var<'t>;
    fn add(self, c: f64) -> Var<'t> {
        self.shift(c)
    }
}

impl<'t> Sub<f64> for Var<'t> {
    type Output = Var<'t>;
    fn sub(self, c: f64) -> Var<'t> {
        self.shift(-c)
    }
}

impl<'t> Mul<f64> for Var<'t> {
    type Output = Var<'t>;
    fn mul(self, c: f64) -> Var<'t> {
        self.scale(c)
    }
}

impl<'t> Div<f64> for Var<'t> {
    type Output = Var<'t>;
    fn div(self, c: f64) -> Var<'t> {
        self.scale(1.0 / c)
    }
}

impl<'t> Mul<Var<'t>> for f64 {
    type Output = Var<'t>;
    fn mul(self, v: Var<'t>) -> Var<'t> {
        v.scale(self)
    }
}

impl<'t> Sub<Var<'t>> for f64 {
    type Output = Var<'t>;
    fn sub(self, v: Var<'t>) -> Var<'t> {
        v.unary(move |x| self - x, |_, _| -1.0)
    }
}
