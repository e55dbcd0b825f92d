use super::{matmul_into, Tensor};
use crate::error::{dim_err, Error, Result};
use crate::scalar::Scalar;

/// Handle to a node on a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Softmax normalization direction for rank-2 inputs.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Axis {
    /// Normalize down each column (axis 0).
    Col,
    /// Normalize across each row (axis 1, the last axis).
    Row,
}

enum Op<T> {
    Leaf,
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    AddRowBias(Var, Var),
    Scale(Var, T),
    MatMul(Var, Var),
    Transpose(Var),
    Relu(Var),
    Sigmoid(Var),
    Softmax {
        x: Var,
        outer: usize,
        len: usize,
        inner: usize,
    },
    LayerNorm {
        x: Var,
        gain: Var,
        bias: Var,
        xhat: Vec<T>,
        inv_std: Vec<T>,
    },
    LnClamped(Var, T),
    Reshape(Var),
    ConcatData(Vec<Var>),
    ConcatCols(Vec<Var>),
    SliceCols(Var, usize),
    Sum(Var),
    Mean(Var),
}

impl<T> Op<T> {
    fn parents(&self) -> Vec<Var> {
        match self {
            Op::Leaf => vec![],
            Op::Add(a, b)
            | Op::Sub(a, b)
            | Op::Mul(a, b)
            | Op::AddRowBias(a, b)
            | Op::MatMul(a, b) => {
                vec![*a, *b]
            }
            Op::Scale(a, _)
            | Op::Transpose(a)
            | Op::Relu(a)
            | Op::Sigmoid(a)
            | Op::LnClamped(a, _)
            | Op::Reshape(a)
            | Op::SliceCols(a, _)
            | Op::Sum(a)
            | Op::Mean(a) => vec![*a],
            Op::Softmax { x, .. } => vec![*x],
            Op::LayerNorm { x, gain, bias, .. } => vec![*x, *gain, *bias],
            Op::ConcatData(v) | Op::ConcatCols(v) => v.clone(),
        }
    }
}

struct Node<T> {
    value: Tensor<T>,
    op: Op<T>,
    requires_grad: bool,
}

/// Define-by-run computation graph.
///
/// Nodes are appended in creation order, which is already a topological
/// order: every node's parents precede it. `backward` walks that order in
/// reverse and visits each node once.
pub struct Graph<T> {
    nodes: Vec<Node<T>>,
    grads: Vec<Option<Tensor<T>>>,
    backward_done: bool,
}

impl<T: Scalar> Default for Graph<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Scalar> Graph<T> {
    pub fn new() -> Self {
        Self {
            nodes: Vec::new(),
            grads: Vec::new(),
            backward_done: false,
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor<T>, op: Op<T>) -> Var {
        let requires_grad = op.parents().iter().any(|p| self.nodes[p.0].requires_grad);
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        self.grads.push(None);
        Var(self.nodes.len() - 1)
    }

    /// Differentiable leaf (a parameter or an input under test).
    pub fn param(&mut self, value: Tensor<T>) -> Var {
        self.leaf(value, true)
    }

    /// Non-differentiable leaf.
    pub fn constant(&mut self, value: Tensor<T>) -> Var {
        self.leaf(value, false)
    }

    pub fn leaf(&mut self, value: Tensor<T>, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op: Op::Leaf,
            requires_grad,
        });
        self.grads.push(None);
        Var(self.nodes.len() - 1)
    }

    /// Copies `x` into a fresh constant, cutting the gradient path.
    pub fn detach(&mut self, x: Var) -> Var {
        let v = self.nodes[x.0].value.clone();
        self.constant(v)
    }

    pub fn value(&self, x: Var) -> &Tensor<T> {
        &self.nodes[x.0].value
    }

    pub fn requires_grad(&self, x: Var) -> bool {
        self.nodes[x.0].requires_grad
    }

    /// Gradient of the last `backward` target wrt `x`, if `x` received one.
    pub fn grad(&self, x: Var) -> Option<&Tensor<T>> {
        self.grads[x.0].as_ref()
    }

    pub fn reset_grads(&mut self) {
        self.grads.iter_mut().for_each(|g| *g = None);
        self.backward_done = false;
    }

    fn same_shape(&self, a: Var, b: Var, what: &str) -> Result<()> {
        let (sa, sb) = (self.value(a).shape(), self.value(b).shape());
        if sa != sb {
            return dim_err(format!("{what}: shapes {sa:?} and {sb:?} differ"));
        }
        Ok(())
    }

    fn zip(&self, a: Var, b: Var, f: impl Fn(T, T) -> T) -> Tensor<T> {
        let (va, vb) = (self.value(a), self.value(b));
        let data = va
            .data()
            .iter()
            .zip(vb.data())
            .map(|(&x, &y)| f(x, y))
            .collect();
        Tensor::new(va.shape().to_vec(), data).expect("same shape")
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape(a, b, "add")?;
        let v = self.zip(a, b, |x, y| x + y);
        Ok(self.push(v, Op::Add(a, b)))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape(a, b, "sub")?;
        let v = self.zip(a, b, |x, y| x - y);
        Ok(self.push(v, Op::Sub(a, b)))
    }

    /// Elementwise product.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape(a, b, "mul")?;
        let v = self.zip(a, b, |x, y| x * y);
        Ok(self.push(v, Op::Mul(a, b)))
    }

    /// Adds a length-n bias vector to every row of an m×n matrix; the only
    /// broadcast the graph supports.
    pub fn add_bias(&mut self, a: Var, bias: Var) -> Result<Var> {
        let (m, n) = self.value(a).dims2()?;
        if self.value(bias).len() != n {
            return dim_err(format!(
                "bias {:?} does not fit rows of {:?}",
                self.value(bias).shape(),
                self.value(a).shape()
            ));
        }
        let b = self.value(bias).data();
        let mut out = self.value(a).data().to_vec();
        for r in 0..m {
            for (o, &bv) in out[r * n..(r + 1) * n].iter_mut().zip(b) {
                *o += bv;
            }
        }
        let v = Tensor::matrix(m, n, out)?;
        Ok(self.push(v, Op::AddRowBias(a, bias)))
    }

    pub fn scale(&mut self, a: Var, s: T) -> Var {
        let v = self.value(a).scaled(s);
        self.push(v, Op::Scale(a, s))
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let v = self.value(a).matmul(self.value(b))?;
        Ok(self.push(v, Op::MatMul(a, b)))
    }

    pub fn transpose(&mut self, a: Var) -> Result<Var> {
        let v = self.value(a).transpose()?;
        Ok(self.push(v, Op::Transpose(a)))
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let v = self.value(a).map(|x| x.max(T::zero()));
        self.push(v, Op::Relu(a))
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        let v = self.value(a).map(|x| T::one() / (T::one() + (-x).exp()));
        self.push(v, Op::Sigmoid(a))
    }

    /// Softmax along `axis` with max-subtraction. Rank-1 inputs are
    /// normalized as a whole regardless of `axis`.
    pub fn softmax(&mut self, x: Var, axis: Axis) -> Result<Var> {
        let t = self.value(x);
        if !t.is_finite() {
            return Err(Error::Numeric("softmax of non-finite input".into()));
        }
        let (outer, len, inner) = match (t.shape(), axis) {
            ([n], _) => (1, *n, 1),
            ([r, c], Axis::Row) => (*r, *c, 1),
            ([r, c], Axis::Col) => (1, *r, *c),
            (s, _) => return dim_err(format!("softmax on shape {s:?}")),
        };
        let mut out = t.data().to_vec();
        softmax_slices(&mut out, outer, len, inner);
        let v = Tensor::new(t.shape().to_vec(), out)?;
        Ok(self.push(
            v,
            Op::Softmax {
                x,
                outer,
                len,
                inner,
            },
        ))
    }

    /// Layer normalization over the last axis (epsilon 1e-5), followed by
    /// per-feature gain and bias.
    pub fn layer_norm(&mut self, x: Var, gain: Var, bias: Var) -> Result<Var> {
        let t = self.value(x);
        let n = *t.shape().last().unwrap_or(&1);
        if self.value(gain).len() != n || self.value(bias).len() != n {
            return dim_err(format!(
                "layer_norm gain {:?} / bias {:?} vs input {:?}",
                self.value(gain).shape(),
                self.value(bias).shape(),
                t.shape()
            ));
        }
        let eps = T::of(LAYER_NORM_EPS);
        let rows = t.len() / n;
        let (g, b) = (self.value(gain).data(), self.value(bias).data());
        let mut xhat = Vec::with_capacity(t.len());
        let mut inv_std = Vec::with_capacity(rows);
        let mut out = Vec::with_capacity(t.len());
        let nn = T::of_usize(n);
        for row in t.data().chunks(n) {
            let mean = row.iter().copied().sum::<T>() / nn;
            let var = row.iter().map(|&v| (v - mean) * (v - mean)).sum::<T>() / nn;
            let is = T::one() / (var + eps).sqrt();
            inv_std.push(is);
            for (j, &v) in row.iter().enumerate() {
                let h = (v - mean) * is;
                xhat.push(h);
                out.push(h * g[j] + b[j]);
            }
        }
        let v = Tensor::new(t.shape().to_vec(), out)?;
        Ok(self.push(
            v,
            Op::LayerNorm {
                x,
                gain,
                bias,
                xhat,
                inv_std,
            },
        ))
    }

    /// Natural log with the argument clamped from below at `floor`; the
    /// gradient is zero where the clamp is active.
    pub fn ln_clamped(&mut self, x: Var, floor: T) -> Var {
        let v = self.value(x).map(|a| a.max(floor).ln());
        self.push(v, Op::LnClamped(x, floor))
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        let v = self.value(x).reshaped(shape)?;
        Ok(self.push(v, Op::Reshape(x)))
    }

    /// Concatenates along the first axis. Scalars stack into a vector;
    /// matrices with equal column counts stack into a taller matrix.
    pub fn concat_rows(&mut self, parts: &[Var]) -> Result<Var> {
        let Some(&first) = parts.first() else {
            return dim_err("concat of zero tensors");
        };
        let head = self.value(first).shape().to_vec();
        let mut data = Vec::new();
        let shape = if head.len() <= 1 && parts.iter().all(|&p| self.value(p).len() == 1) {
            for &p in parts {
                data.push(self.value(p).data()[0]);
            }
            vec![parts.len()]
        } else {
            let tail = &head[1..];
            let mut rows = 0;
            for &p in parts {
                let s = self.value(p).shape();
                if s.len() != head.len() || &s[1..] != tail {
                    return dim_err(format!("concat_rows: {s:?} vs {head:?}"));
                }
                rows += s[0];
                data.extend_from_slice(self.value(p).data());
            }
            let mut s = vec![rows];
            s.extend_from_slice(tail);
            s
        };
        let v = Tensor::new(shape, data)?;
        Ok(self.push(v, Op::ConcatData(parts.to_vec())))
    }

    /// Concatenates matrices with equal row counts side by side.
    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        let Some(&first) = parts.first() else {
            return dim_err("concat of zero tensors");
        };
        let rows = self.value(first).dims2()?.0;
        let mut widths = Vec::with_capacity(parts.len());
        for &p in parts {
            let (r, c) = self.value(p).dims2()?;
            if r != rows {
                return dim_err(format!("concat_cols: {r} rows vs {rows}"));
            }
            widths.push(c);
        }
        let total: usize = widths.iter().sum();
        let mut out = Vec::with_capacity(rows * total);
        for r in 0..rows {
            for &p in parts {
                out.extend_from_slice(self.value(p).row(r));
            }
        }
        let v = Tensor::matrix(rows, total, out)?;
        Ok(self.push(v, Op::ConcatCols(parts.to_vec())))
    }

    /// Columns `start..end` of a matrix.
    pub fn slice_cols(&mut self, x: Var, start: usize, end: usize) -> Result<Var> {
        let (r, c) = self.value(x).dims2()?;
        if start >= end || end > c {
            return dim_err(format!("slice {start}..{end} of {c} columns"));
        }
        let t = self.value(x);
        let v = Tensor::from_fn(r, end - start, |i, j| t.at(i, start + j));
        Ok(self.push(v, Op::SliceCols(x, start)))
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let v = Tensor::scalar(self.value(x).sum());
        self.push(v, Op::Sum(x))
    }

    pub fn mean(&mut self, x: Var) -> Var {
        let t = self.value(x);
        let v = Tensor::scalar(t.sum() / T::of_usize(t.len()));
        self.push(v, Op::Mean(x))
    }

    /// Reverse pass from a scalar `loss`.
    ///
    /// Fills the gradient of every differentiable node that `loss` depends
    /// on. A second call without [`Graph::reset_grads`] is rejected.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        if self.backward_done {
            return Err(Error::Contract(
                "backward already ran on this graph; reset_grads first".into(),
            ));
        }
        if !self.value(loss).is_scalar() {
            return Err(Error::Contract(format!(
                "backward needs a scalar loss, got shape {:?}",
                self.value(loss).shape()
            )));
        }
        self.backward_done = true;
        let shape = self.value(loss).shape().to_vec();
        self.grads[loss.0] = Some(Tensor::full(&shape, T::one()));
        for i in (0..=loss.0).rev() {
            if !self.nodes[i].requires_grad {
                continue;
            }
            let Some(g) = self.grads[i].take() else {
                continue;
            };
            let contributions = self.local_grads(i, &g)?;
            self.grads[i] = Some(g);
            for (p, pg) in contributions {
                if !self.nodes[p.0].requires_grad {
                    continue;
                }
                match &mut self.grads[p.0] {
                    Some(acc) => acc
                        .data_mut()
                        .iter_mut()
                        .zip(pg.data())
                        .for_each(|(a, &b)| *a += b),
                    slot @ None => *slot = Some(pg),
                }
            }
        }
        Ok(())
    }

    fn local_grads(&self, i: usize, g: &Tensor<T>) -> Result<Vec<(Var, Tensor<T>)>> {
        let node = &self.nodes[i];
        let val = |v: Var| &self.nodes[v.0].value;
        let wants = |v: Var| self.nodes[v.0].requires_grad;
        let same = |src: &Tensor<T>, data: Vec<T>| Tensor::new(src.shape().to_vec(), data);
        let mut out = Vec::new();
        match &node.op {
            Op::Leaf => {}
            Op::Add(a, b) => {
                out.push((*a, g.clone()));
                out.push((*b, g.clone()));
            }
            Op::Sub(a, b) => {
                out.push((*a, g.clone()));
                out.push((*b, g.map(|x| -x)));
            }
            Op::Mul(a, b) => {
                let (va, vb) = (val(*a), val(*b));
                if wants(*a) {
                    let d = g
                        .data()
                        .iter()
                        .zip(vb.data())
                        .map(|(&x, &y)| x * y)
                        .collect();
                    out.push((*a, same(va, d)?));
                }
                if wants(*b) {
                    let d = g
                        .data()
                        .iter()
                        .zip(va.data())
                        .map(|(&x, &y)| x * y)
                        .collect();
                    out.push((*b, same(vb, d)?));
                }
            }
            Op::AddRowBias(a, bias) => {
                out.push((*a, g.clone()));
                if wants(*bias) {
                    let (m, n) = g.dims2()?;
                    let mut acc = vec![T::zero(); n];
                    for r in 0..m {
                        for (s, &x) in acc.iter_mut().zip(g.row(r)) {
                            *s += x;
                        }
                    }
                    out.push((*bias, same(val(*bias), acc)?));
                }
            }
            Op::Scale(a, s) => out.push((*a, g.scaled(*s))),
            Op::MatMul(a, b) => {
                let (va, vb) = (val(*a), val(*b));
                let (m, k) = va.dims2()?;
                let n = vb.cols();
                if wants(*a) {
                    let bt = vb.transpose()?;
                    let mut d = vec![T::zero(); m * k];
                    matmul_into(g.data(), bt.data(), &mut d, m, n, k);
                    out.push((*a, Tensor::matrix(m, k, d)?));
                }
                if wants(*b) {
                    let at = va.transpose()?;
                    let mut d = vec![T::zero(); k * n];
                    matmul_into(at.data(), g.data(), &mut d, k, m, n);
                    out.push((*b, Tensor::matrix(k, n, d)?));
                }
            }
            Op::Transpose(a) => out.push((*a, g.transpose()?)),
            Op::Relu(a) => {
                let va = val(*a);
                let d = g
                    .data()
                    .iter()
                    .zip(va.data())
                    .map(|(&gx, &x)| if x > T::zero() { gx } else { T::zero() })
                    .collect();
                out.push((*a, same(va, d)?));
            }
            Op::Sigmoid(a) => {
                let y = &node.value;
                let d = g
                    .data()
                    .iter()
                    .zip(y.data())
                    .map(|(&gx, &s)| gx * s * (T::one() - s))
                    .collect();
                out.push((*a, same(y, d)?));
            }
            Op::Softmax {
                x,
                outer,
                len,
                inner,
            } => {
                let y = node.value.data();
                let gd = g.data();
                let mut d = vec![T::zero(); y.len()];
                for o in 0..*outer {
                    for k in 0..*inner {
                        let idx = |j: usize| (o * len + j) * inner + k;
                        let dot: T = (0..*len).map(|j| gd[idx(j)] * y[idx(j)]).sum();
                        for j in 0..*len {
                            d[idx(j)] = y[idx(j)] * (gd[idx(j)] - dot);
                        }
                    }
                }
                out.push((*x, same(&node.value, d)?));
            }
            Op::LayerNorm {
                x,
                gain,
                bias,
                xhat,
                inv_std,
            } => {
                let gv = val(*gain).data();
                let n = gv.len();
                let nn = T::of_usize(n);
                let mut dx = Vec::with_capacity(xhat.len());
                let mut dgain = vec![T::zero(); n];
                let mut dbias = vec![T::zero(); n];
                for (r, (grow, hrow)) in g.data().chunks(n).zip(xhat.chunks(n)).enumerate() {
                    let mut mean_dh = T::zero();
                    let mut mean_dh_h = T::zero();
                    for j in 0..n {
                        let dh = grow[j] * gv[j];
                        mean_dh += dh;
                        mean_dh_h += dh * hrow[j];
                        dgain[j] += grow[j] * hrow[j];
                        dbias[j] += grow[j];
                    }
                    mean_dh /= nn;
                    mean_dh_h /= nn;
                    for j in 0..n {
                        let dh = grow[j] * gv[j];
                        dx.push(inv_std[r] * (dh - mean_dh - hrow[j] * mean_dh_h));
                    }
                }
                if wants(*x) {
                    out.push((*x, same(val(*x), dx)?));
                }
                if wants(*gain) {
                    out.push((*gain, same(val(*gain), dgain)?));
                }
                if wants(*bias) {
                    out.push((*bias, same(val(*bias), dbias)?));
                }
            }
            Op::LnClamped(a, floor) => {
                let va = val(*a);
                let d = g
                    .data()
                    .iter()
                    .zip(va.data())
                    .map(|(&gx, &x)| if x > *floor { gx / x } else { T::zero() })
                    .collect();
                out.push((*a, same(va, d)?));
            }
            Op::Reshape(a) => out.push((*a, g.reshaped(val(*a).shape())?)),
            Op::ConcatData(parts) => {
                let mut off = 0;
                for &p in parts {
                    let vp = val(p);
                    let n = vp.len();
                    if wants(p) {
                        out.push((p, same(vp, g.data()[off..off + n].to_vec())?));
                    }
                    off += n;
                }
            }
            Op::ConcatCols(parts) => {
                let mut off = 0;
                for &p in parts {
                    let (r, c) = val(p).dims2()?;
                    if wants(p) {
                        out.push((p, Tensor::from_fn(r, c, |i, j| g.at(i, off + j))));
                    }
                    off += c;
                }
            }
            Op::SliceCols(a, start) => {
                let (r, c) = val(*a).dims2()?;
                let w = g.cols();
                let mut d = vec![T::zero(); r * c];
                for i in 0..r {
                    d[i * c + start..i * c + start + w].copy_from_slice(g.row(i));
                }
                out.push((*a, Tensor::matrix(r, c, d)?));
            }
            Op::Sum(a) => {
                let va = val(*a);
                out.push((*a, Tensor::full(va.shape(), g.data()[0])));
            }
            Op::Mean(a) => {
                let va = val(*a);
                let s = g.data()[0] / T::of_usize(va.len());
                out.push((*a, Tensor::full(va.shape(), s)));
            }
        }
        Ok(out)
    }
}

pub(crate) const LAYER_NORM_EPS: f64 = 1e-5;

fn softmax_slices<T: Scalar>(data: &mut [T], outer: usize, len: usize, inner: usize) {
    for o in 0..outer {
        for k in 0..inner {
            let idx = |j: usize| (o * len + j) * inner + k;
            let max = (0..len)
                .map(|j| data[idx(j)])
                .fold(T::neg_infinity(), T::max);
            let mut total = T::zero();
            for j in 0..len {
                let e = (data[idx(j)] - max).exp();
                data[idx(j)] = e;
                total += e;
            }
            for j in 0..len {
                data[idx(j)] /= total;
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(rows: &[Vec<f64>]) -> Tensor<f64> {
        Tensor::from_rows(rows).unwrap()
    }

    #[test]
    fn softmax_uniform_and_stable() {
        let mut g = Graph::<f64>::new();
        let x = g.constant(Tensor::vector(vec![0.0, 0.0, 0.0]));
        let y = g.softmax(x, Axis::Row).unwrap();
        for &v in g.value(y).data() {
            assert!((v - 1.0 / 3.0).abs() < 1e-15);
        }
        let x = g.constant(Tensor::vector(vec![1000.0, 0.0]));
        let y = g.softmax(x, Axis::Row).unwrap();
        let d = g.value(y).data();
        assert_eq!(d[0], 1.0);
        assert!(d[1] >= 0.0 && d[1] < 1e-300);
    }

    #[test]
    fn softmax_rejects_non_finite() {
        let mut g = Graph::<f64>::new();
        let x = g.constant(Tensor::vector(vec![f64::NAN, 0.0]));
        assert!(matches!(g.softmax(x, Axis::Row), Err(Error::Numeric(_))));
    }

    #[test]
    fn softmax_columns() {
        let mut g = Graph::<f64>::new();
        let x = g.constant(t(&[vec![0.0, 5.0], vec![0.0, -5.0]]));
        let y = g.softmax(x, Axis::Col).unwrap();
        let v = g.value(y);
        assert!((v.at(0, 0) - 0.5).abs() < 1e-15);
        assert!((v.at(0, 1) + v.at(1, 1) - 1.0).abs() < 1e-15);
    }

    #[test]
    fn layer_norm_constant_row_is_zero() {
        let mut g = Graph::<f64>::new();
        let x = g.constant(t(&[vec![3.0; 4]]));
        let gain = g.constant(Tensor::full(&[4], 1.0));
        let bias = g.constant(Tensor::zeros(&[4]));
        let y = g.layer_norm(x, gain, bias).unwrap();
        assert!(g.value(y).data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn relu_values() {
        let mut g = Graph::<f64>::new();
        let x = g.constant(Tensor::vector(vec![-1.0, 2.0]));
        let y = g.relu(x);
        assert_eq!(g.value(y).data(), &[0.0, 2.0]);
    }

    #[test]
    fn diamond_accumulates_both_paths() {
        // f(x) = sum(x*x + 3x) ; df/dx = 2x + 3
        let mut g = Graph::<f64>::new();
        let x = g.param(Tensor::vector(vec![1.5, -2.0]));
        let sq = g.mul(x, x).unwrap();
        let lin = g.scale(x, 3.0);
        let s = g.add(sq, lin).unwrap();
        let loss = g.sum(s);
        g.backward(loss).unwrap();
        assert_eq!(g.grad(x).unwrap().data(), &[6.0, -1.0]);
    }

    #[test]
    fn backward_contract_errors() {
        let mut g = Graph::<f64>::new();
        let x = g.param(Tensor::vector(vec![1.0, 2.0]));
        assert!(matches!(g.backward(x), Err(Error::Contract(_))));
        let s = g.sum(x);
        g.backward(s).unwrap();
        assert!(matches!(g.backward(s), Err(Error::Contract(_))));
        g.reset_grads();
        g.backward(s).unwrap();
        assert_eq!(g.grad(x).unwrap().data(), &[1.0, 1.0]);
    }

    #[test]
    fn constants_receive_no_gradient() {
        let mut g = Graph::<f64>::new();
        let x = g.param(Tensor::vector(vec![1.0]));
        let c = g.constant(Tensor::vector(vec![4.0]));
        let y = g.mul(x, c).unwrap();
        let s = g.sum(y);
        g.backward(s).unwrap();
        assert!(g.grad(c).is_none());
        assert_eq!(g.grad(x).unwrap().data(), &[4.0]);
    }

    #[test]
    fn shape_mismatch_is_dimension_error() {
        let mut g = Graph::<f64>::new();
        let a = g.constant(Tensor::zeros(&[2, 2]));
        let b = g.constant(Tensor::zeros(&[2, 3]));
        assert!(matches!(g.add(a, b), Err(Error::Dimension(_))));
        let c = g.constant(Tensor::zeros(&[3, 2]));
        assert!(matches!(g.matmul(b, b), Err(Error::Dimension(_))));
        assert!(g.matmul(b, c).is_ok());
    }
}
