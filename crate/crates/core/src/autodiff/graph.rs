//! Tape of tensor operations with reverse-mode adjoints.
//!
//! Nodes are appended in evaluation order, so node ids form a topological
//! order and the backward pass is a single reverse sweep.

use num_complex::Complex;

use super::param::{ParamId, ParamStore};
use super::shape::{broadcast_map, broadcast_shape, numel, split_axis};
use crate::cmat::CMatrix;
use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Handle to a node of a [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn id(self) -> usize {
        self.0
    }
}

/// Forward behavior of the sign quantizer. The backward pass always uses
/// the `1 - tanh^2` surrogate.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub enum QuantizerMode {
    /// `sign(x)` with `sign(0) = +1`.
    Hard,
    /// `tanh(x)`; makes the forward consistent with the surrogate for gradient checks.
    Smooth,
}

/// Batch statistics of a training-mode batch-norm node.
#[derive(Debug, Clone)]
pub struct BatchStats<T> {
    pub mean: Vec<T>,
    /// Unbiased variance, for running averages.
    pub var: Vec<T>,
}

#[derive(Debug, Clone)]
enum Op<T> {
    Leaf,
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Neg(Var),
    Scale(Var, T),
    Powf(Var, T),
    MatMul(Var, Var),
    Transpose(Var),
    Reshape(Var),
    Concat(Vec<Var>, usize),
    Slice { src: Var, axis: usize, start: usize },
    Sum(Var),
    Mean(Var),
    SumAxes(Var),
    Relu(Var),
    Cos(Var),
    Sin(Var),
    Conv1d { x: Var, w: Var },
    BatchNorm { x: Var, gamma: Var, beta: Var, xhat: Vec<T>, inv_std: Vec<T>, train: bool },
    Quantize(Var),
    HermLogDet { re: Var, im: Var, inv: Vec<Complex<T>> },
}

#[derive(Debug, Clone)]
struct Node<T> {
    value: Vec<T>,
    shape: Vec<usize>,
    op: Op<T>,
    needs_grad: bool,
}

/// A computation graph confined to one thread; build, run [`Graph::backward`], discard.
#[derive(Debug, Clone, Default)]
pub struct Graph<T> {
    nodes: Vec<Node<T>>,
    bindings: Vec<(ParamId, Var)>,
}

/// Adjoints produced by [`Graph::backward`], indexed by node.
#[derive(Debug, Clone)]
pub struct Gradients<T> {
    grads: Vec<Option<Vec<T>>>,
    bindings: Vec<(ParamId, Var)>,
}

impl<T: Scalar> Gradients<T> {
    pub fn get(&self, v: Var) -> Option<&[T]> {
        self.grads.get(v.0).and_then(|g| g.as_deref())
    }

    /// Adjoint of each bound parameter, summed over repeated bindings.
    pub fn params(&self, store: &ParamStore<T>) -> Vec<(ParamId, Vec<T>)> {
        let mut out: Vec<(ParamId, Vec<T>)> = Vec::new();
        for &(pid, var) in &self.bindings {
            let Some(g) = self.get(var) else { continue };
            match out.iter_mut().find(|(p, _)| *p == pid) {
                Some((_, acc)) => acc.iter_mut().zip(g).for_each(|(a, &b)| *a += b),
                None => out.push((pid, g.to_vec())),
            }
        }
        out.retain(|(p, _)| store.get(*p).trainable);
        out
    }
}

fn check_same<T>(what: &str, a: &[T], b: &[T]) -> Result<()>
where
    T: PartialEq + std::fmt::Debug,
{
    if a != b {
        return Err(Error::dim(format!("{}: shape {:?} vs {:?}", what, a, b)));
    }
    Ok(())
}

impl<T: Scalar> Graph<T> {
    pub fn new() -> Self {
        Graph {
            nodes: Vec::new(),
            bindings: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Vec<T>, shape: Vec<usize>, op: Op<T>, needs_grad: bool) -> Var {
        debug_assert_eq!(value.len(), numel(&shape));
        self.nodes.push(Node {
            value,
            shape,
            op,
            needs_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn leaf(&mut self, shape: &[usize], data: Vec<T>, needs_grad: bool) -> Result<Var> {
        if data.len() != numel(shape) {
            return Err(Error::dim(format!(
                "shape {:?} needs {} values, got {}",
                shape,
                numel(shape),
                data.len()
            )));
        }
        Ok(self.push(data, shape.to_vec(), Op::Leaf, needs_grad))
    }

    /// Input that receives no adjoint.
    pub fn constant(&mut self, shape: &[usize], data: Vec<T>) -> Result<Var> {
        self.leaf(shape, data, false)
    }

    /// Input that receives an adjoint.
    pub fn variable(&mut self, shape: &[usize], data: Vec<T>) -> Result<Var> {
        self.leaf(shape, data, true)
    }

    pub fn scalar_constant(&mut self, x: T) -> Var {
        self.push(vec![x], vec![], Op::Leaf, false)
    }

    /// Binds a stored parameter as a leaf; adjoints are reported via [`Gradients::params`].
    pub fn param(&mut self, store: &ParamStore<T>, id: ParamId) -> Var {
        let p = store.get(id);
        let v = self.push(p.values.clone(), p.shape.clone(), Op::Leaf, p.trainable);
        self.bindings.push((id, v));
        v
    }

    pub fn value(&self, v: Var) -> &[T] {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        &self.nodes[v.0].shape
    }

    /// Value of a one-element tensor.
    pub fn scalar(&self, v: Var) -> Result<T> {
        let n = &self.nodes[v.0];
        if n.value.len() != 1 {
            return Err(Error::Usage(format!("tensor of shape {:?} is not a scalar", n.shape)));
        }
        Ok(n.value[0])
    }

    fn needs(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    fn binary(&mut self, a: Var, b: Var, op: fn(Var, Var) -> Op<T>, f: impl Fn(T, T) -> T) -> Result<Var> {
        let sa = self.shape(a).to_vec();
        let sb = self.shape(b).to_vec();
        let out_shape = broadcast_shape(&sa, &sb)?;
        let va = self.value(a);
        let vb = self.value(b);
        let value: Vec<T> = if sa == sb {
            va.iter().zip(vb).map(|(&x, &y)| f(x, y)).collect()
        } else {
            let ma = broadcast_map(&sa, &out_shape);
            let mb = broadcast_map(&sb, &out_shape);
            ma.iter().zip(&mb).map(|(&i, &j)| f(va[i], vb[j])).collect()
        };
        let ng = self.needs(a) || self.needs(b);
        Ok(self.push(value, out_shape, op(a, b), ng))
    }

    /// Elementwise sum with broadcasting.
    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, Op::Add, |x, y| x + y)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, Op::Sub, |x, y| x - y)
    }

    /// Elementwise (Hadamard) product with broadcasting.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, Op::Mul, |x, y| x * y)
    }

    fn unary(&mut self, x: Var, op: Op<T>, f: impl Fn(T) -> T) -> Var {
        let value = self.value(x).iter().map(|&v| f(v)).collect();
        let shape = self.shape(x).to_vec();
        let ng = self.needs(x);
        self.push(value, shape, op, ng)
    }

    pub fn neg(&mut self, x: Var) -> Var {
        self.unary(x, Op::Neg(x), |v| -v)
    }

    pub fn scale(&mut self, x: Var, c: T) -> Var {
        self.unary(x, Op::Scale(x, c), |v| v * c)
    }

    /// `x^p` elementwise.
    pub fn powf(&mut self, x: Var, p: T) -> Var {
        self.unary(x, Op::Powf(x, p), |v| v.powf(p))
    }

    pub fn relu(&mut self, x: Var) -> Var {
        self.unary(x, Op::Relu(x), |v| if v > T::zero() { v } else { T::zero() })
    }

    pub fn cos(&mut self, x: Var) -> Var {
        self.unary(x, Op::Cos(x), |v| v.cos())
    }

    pub fn sin(&mut self, x: Var) -> Var {
        self.unary(x, Op::Sin(x), |v| v.sin())
    }

    /// Straight-through sign quantizer; see [`QuantizerMode`].
    pub fn quantize(&mut self, x: Var, mode: QuantizerMode) -> Var {
        match mode {
            QuantizerMode::Hard => self.unary(x, Op::Quantize(x), |v| {
                if v >= T::zero() {
                    T::one()
                } else {
                    -T::one()
                }
            }),
            QuantizerMode::Smooth => self.unary(x, Op::Quantize(x), |v| v.tanh()),
        }
    }

    /// Matrix product over the last two axes, broadcasting leading batch axes.
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let sa = self.shape(a).to_vec();
        let sb = self.shape(b).to_vec();
        if sa.len() < 2 || sb.len() < 2 {
            return Err(Error::dim(format!("matmul needs rank >= 2, got {:?} and {:?}", sa, sb)));
        }
        let (m, k) = (sa[sa.len() - 2], sa[sa.len() - 1]);
        let (k2, n) = (sb[sb.len() - 2], sb[sb.len() - 1]);
        if k != k2 {
            return Err(Error::dim(format!("matmul inner dims differ: {:?} x {:?}", sa, sb)));
        }
        let ba = &sa[..sa.len() - 2];
        let bb = &sb[..sb.len() - 2];
        let batch = broadcast_shape(ba, bb)?;
        let map_a = broadcast_map(ba, &batch);
        let map_b = broadcast_map(bb, &batch);
        let va = self.value(a);
        let vb = self.value(b);
        let mut value = vec![T::zero(); map_a.len() * m * n];
        for (bi, (&ia, &ib)) in map_a.iter().zip(&map_b).enumerate() {
            T::gemm(
                m,
                k,
                n,
                T::one(),
                &va[ia * m * k..(ia + 1) * m * k],
                k as isize,
                1,
                &vb[ib * k * n..(ib + 1) * k * n],
                n as isize,
                1,
                T::zero(),
                &mut value[bi * m * n..(bi + 1) * m * n],
                n as isize,
                1,
            );
        }
        let mut shape = batch;
        shape.push(m);
        shape.push(n);
        let ng = self.needs(a) || self.needs(b);
        Ok(self.push(value, shape, Op::MatMul(a, b), ng))
    }

    /// Swaps the last two axes.
    pub fn transpose(&mut self, x: Var) -> Result<Var> {
        let s = self.shape(x).to_vec();
        if s.len() < 2 {
            return Err(Error::dim(format!("transpose needs rank >= 2, got {:?}", s)));
        }
        let (r, c) = (s[s.len() - 2], s[s.len() - 1]);
        let v = self.value(x);
        let mut value = vec![T::zero(); v.len()];
        for (src, dst) in v.chunks_exact(r * c).zip(value.chunks_exact_mut(r * c)) {
            for i in 0..r {
                for j in 0..c {
                    dst[j * r + i] = src[i * c + j];
                }
            }
        }
        let mut shape = s;
        let len = shape.len();
        shape.swap(len - 2, len - 1);
        let ng = self.needs(x);
        Ok(self.push(value, shape, Op::Transpose(x), ng))
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        if numel(shape) != self.value(x).len() {
            return Err(Error::dim(format!(
                "cannot reshape {:?} into {:?}",
                self.shape(x),
                shape
            )));
        }
        let value = self.value(x).to_vec();
        let ng = self.needs(x);
        Ok(self.push(value, shape.to_vec(), Op::Reshape(x), ng))
    }

    pub fn concat(&mut self, parts: &[Var], axis: usize) -> Result<Var> {
        let first = parts
            .first()
            .ok_or_else(|| Error::dim("concat of zero tensors"))?;
        let base = self.shape(*first).to_vec();
        if axis >= base.len() {
            return Err(Error::dim(format!("concat axis {} out of range for {:?}", axis, base)));
        }
        let mut total = 0;
        for &p in parts {
            let s = self.shape(p);
            if s.len() != base.len()
                || s.iter().zip(&base).enumerate().any(|(i, (a, b))| i != axis && a != b)
            {
                return Err(Error::dim(format!("concat shape mismatch {:?} vs {:?}", s, base)));
            }
            total += s[axis];
        }
        let (outer, _, inner) = split_axis(&base, axis);
        let mut value = Vec::with_capacity(outer * total * inner);
        for o in 0..outer {
            for &p in parts {
                let len = self.shape(p)[axis] * inner;
                value.extend_from_slice(&self.value(p)[o * len..(o + 1) * len]);
            }
        }
        let mut shape = base;
        shape[axis] = total;
        let ng = parts.iter().any(|&p| self.needs(p));
        Ok(self.push(value, shape, Op::Concat(parts.to_vec(), axis), ng))
    }

    /// `len` entries of `axis` starting at `start`.
    pub fn slice(&mut self, x: Var, axis: usize, start: usize, len: usize) -> Result<Var> {
        let s = self.shape(x).to_vec();
        if axis >= s.len() || start + len > s[axis] {
            return Err(Error::dim(format!(
                "slice {}..{} of axis {} out of range for {:?}",
                start,
                start + len,
                axis,
                s
            )));
        }
        let (outer, n_axis, inner) = split_axis(&s, axis);
        let v = self.value(x);
        let mut value = Vec::with_capacity(outer * len * inner);
        for o in 0..outer {
            let base = o * n_axis * inner + start * inner;
            value.extend_from_slice(&v[base..base + len * inner]);
        }
        let mut shape = s;
        shape[axis] = len;
        let ng = self.needs(x);
        Ok(self.push(value, shape, Op::Slice { src: x, axis, start }, ng))
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let s: T = self.value(x).iter().copied().sum();
        let ng = self.needs(x);
        self.push(vec![s], vec![], Op::Sum(x), ng)
    }

    pub fn mean(&mut self, x: Var) -> Var {
        let v = self.value(x);
        let s: T = v.iter().copied().sum::<T>() / T::lit(v.len() as f64);
        let ng = self.needs(x);
        self.push(vec![s], vec![], Op::Mean(x), ng)
    }

    /// Sums over `axes`, keeping them as size-1 dimensions.
    pub fn sum_axes(&mut self, x: Var, axes: &[usize]) -> Result<Var> {
        let s = self.shape(x).to_vec();
        if axes.iter().any(|&a| a >= s.len()) {
            return Err(Error::dim(format!("sum axes {:?} out of range for {:?}", axes, s)));
        }
        let mut out_shape = s.clone();
        for &a in axes {
            out_shape[a] = 1;
        }
        let map = broadcast_map(&out_shape, &s);
        let mut value = vec![T::zero(); numel(&out_shape)];
        for (&m, &v) in map.iter().zip(self.value(x)) {
            value[m] += v;
        }
        let ng = self.needs(x);
        Ok(self.push(value, out_shape, Op::SumAxes(x), ng))
    }

    /// Stride-1 "same"-padded cross-correlation: `x [b, c_in, len]`, `w [c_out, c_in, k]`.
    ///
    /// Left padding is `(k - 1) / 2`; kernels longer than the sequence are
    /// well-defined since out-of-range taps read zeros.
    pub fn conv1d(&mut self, x: Var, w: Var) -> Result<Var> {
        let sx = self.shape(x).to_vec();
        let sw = self.shape(w).to_vec();
        if sx.len() != 3 || sw.len() != 3 || sx[1] != sw[1] || sw[2] == 0 {
            return Err(Error::dim(format!("conv1d shapes x {:?}, w {:?}", sx, sw)));
        }
        let (b, cin, len) = (sx[0], sx[1], sx[2]);
        let (cout, k) = (sw[0], sw[2]);
        let xv = self.value(x);
        let wv = self.value(w);
        let mut value = vec![T::zero(); b * cout * len];
        let mut col = vec![T::zero(); cin * k * len];
        for bi in 0..b {
            im2col(&xv[bi * cin * len..(bi + 1) * cin * len], cin, len, k, &mut col);
            T::gemm(
                cout,
                cin * k,
                len,
                T::one(),
                wv,
                (cin * k) as isize,
                1,
                &col,
                len as isize,
                1,
                T::zero(),
                &mut value[bi * cout * len..(bi + 1) * cout * len],
                len as isize,
                1,
            );
        }
        let ng = self.needs(x) || self.needs(w);
        Ok(self.push(value, vec![b, cout, len], Op::Conv1d { x, w }, ng))
    }

    /// Batch normalization over every axis except axis 1 (channels).
    ///
    /// In training mode the batch statistics are used and returned; otherwise
    /// `running` (mean, variance) is applied.
    pub fn batch_norm(
        &mut self,
        x: Var,
        gamma: Var,
        beta: Var,
        running: Option<(&[T], &[T])>,
        eps: T,
    ) -> Result<(Var, Option<BatchStats<T>>)> {
        let s = self.shape(x).to_vec();
        if s.len() < 2 {
            return Err(Error::dim(format!("batch norm needs rank >= 2, got {:?}", s)));
        }
        let c = s[1];
        check_same("batch norm gamma", self.shape(gamma), &[c])?;
        check_same("batch norm beta", self.shape(beta), &[c])?;
        let (outer, _, inner) = split_axis(&s, 1);
        let count = outer * inner;
        let xv = self.value(x);
        let (mean, var_biased, stats) = match running {
            Some((rm, rv)) => {
                if rm.len() != c || rv.len() != c {
                    return Err(Error::dim("running statistics do not match channel count"));
                }
                (rm.to_vec(), rv.to_vec(), None)
            }
            None => {
                if count < 2 {
                    return Err(Error::Usage(
                        "training-mode batch norm needs at least two values per channel".into(),
                    ));
                }
                let mut mean = vec![T::zero(); c];
                let mut var = vec![T::zero(); c];
                for o in 0..outer {
                    for ch in 0..c {
                        let base = (o * c + ch) * inner;
                        for &v in &xv[base..base + inner] {
                            mean[ch] += v;
                        }
                    }
                }
                let nf = T::lit(count as f64);
                mean.iter_mut().for_each(|m| *m /= nf);
                for o in 0..outer {
                    for ch in 0..c {
                        let base = (o * c + ch) * inner;
                        for &v in &xv[base..base + inner] {
                            let d = v - mean[ch];
                            var[ch] += d * d;
                        }
                    }
                }
                var.iter_mut().for_each(|v| *v /= nf);
                let unbiased = var
                    .iter()
                    .map(|&v| v * nf / T::lit((count - 1) as f64))
                    .collect();
                let stats = BatchStats {
                    mean: mean.clone(),
                    var: unbiased,
                };
                (mean, var, Some(stats))
            }
        };
        let inv_std: Vec<T> = var_biased.iter().map(|&v| T::one() / (v + eps).sqrt()).collect();
        let gv = self.value(gamma);
        let bv = self.value(beta);
        let mut xhat = vec![T::zero(); xv.len()];
        let mut value = vec![T::zero(); xv.len()];
        for o in 0..outer {
            for ch in 0..c {
                let base = (o * c + ch) * inner;
                for i in base..base + inner {
                    let h = (xv[i] - mean[ch]) * inv_std[ch];
                    xhat[i] = h;
                    value[i] = gv[ch] * h + bv[ch];
                }
            }
        }
        let ng = self.needs(x) || self.needs(gamma) || self.needs(beta);
        let train = running.is_none();
        let v = self.push(
            value,
            s,
            Op::BatchNorm {
                x,
                gamma,
                beta,
                xhat,
                inv_std,
                train,
            },
            ng,
        );
        Ok((v, stats))
    }

    /// `ln det` of Hermitian positive-definite matrices given as `(re, im)` parts
    /// of shape `[..., n, n]`; output has the leading shape.
    ///
    /// The adjoint is that of `Re ln det(X)`, which is `(G^T re, -G^T im)` with `G = X^{-1}`.
    pub fn herm_log_det(&mut self, re: Var, im: Var) -> Result<Var> {
        let s = self.shape(re).to_vec();
        check_same("herm_log_det parts", &s, self.shape(im))?;
        if s.len() < 2 || s[s.len() - 1] != s[s.len() - 2] {
            return Err(Error::dim(format!("herm_log_det needs [..., n, n], got {:?}", s)));
        }
        let n = s[s.len() - 1];
        let lead = s[..s.len() - 2].to_vec();
        let count = numel(&lead);
        let rv = self.value(re);
        let iv = self.value(im);
        let mut value = Vec::with_capacity(count);
        let mut inv = Vec::with_capacity(count * n * n);
        for b in 0..count {
            let off = b * n * n;
            let m = CMatrix::from_fn(n, n, |i, j| {
                Complex::new(rv[off + i * n + j], iv[off + i * n + j])
            });
            let ch = m.cholesky()?;
            value.push(ch.ln_det());
            inv.extend_from_slice(ch.inverse().data());
        }
        let ng = self.needs(re) || self.needs(im);
        Ok(self.push(value, lead, Op::HermLogDet { re, im, inv }, ng))
    }

    /// Reverse sweep from a scalar root.
    pub fn backward(&self, root: Var) -> Result<Gradients<T>> {
        let rn = &self.nodes[root.0];
        if rn.value.len() != 1 {
            return Err(Error::Usage(format!(
                "backward needs a scalar root, got shape {:?}",
                rn.shape
            )));
        }
        let mut grads: Vec<Option<Vec<T>>> = vec![None; self.nodes.len()];
        grads[root.0] = Some(vec![T::one()]);
        for i in (0..=root.0).rev() {
            if !self.nodes[i].needs_grad {
                continue;
            }
            let Some(g) = grads[i].take() else { continue };
            self.propagate(i, &g, &mut grads);
            grads[i] = Some(g);
        }
        Ok(Gradients {
            grads,
            bindings: self.bindings.clone(),
        })
    }

    fn propagate(&self, i: usize, g: &[T], grads: &mut [Option<Vec<T>>]) {
        let node = &self.nodes[i];
        let out_shape = &node.shape;
        match &node.op {
            Op::Leaf => {}
            Op::Add(a, b) | Op::Sub(a, b) => {
                let sign = if matches!(node.op, Op::Sub(..)) { -T::one() } else { T::one() };
                if self.needs(*a) {
                    self.reduce_into(*a, out_shape, g, T::one(), grads);
                }
                if self.needs(*b) {
                    self.reduce_into(*b, out_shape, g, sign, grads);
                }
            }
            Op::Mul(a, b) => {
                let sa = self.shape(*a);
                let sb = self.shape(*b);
                let va = self.value(*a);
                let vb = self.value(*b);
                let same = sa == sb && sa == out_shape.as_slice();
                let (ma, mb) = if same {
                    (Vec::new(), Vec::new())
                } else {
                    (broadcast_map(sa, out_shape), broadcast_map(sb, out_shape))
                };
                let ia = |k: usize| if same { k } else { ma[k] };
                let ib = |k: usize| if same { k } else { mb[k] };
                if self.needs(*a) {
                    let buf = acc_buf(grads, *a, va.len());
                    for (k, &gk) in g.iter().enumerate() {
                        buf[ia(k)] += gk * vb[ib(k)];
                    }
                }
                if self.needs(*b) {
                    let buf = acc_buf(grads, *b, vb.len());
                    for (k, &gk) in g.iter().enumerate() {
                        buf[ib(k)] += gk * va[ia(k)];
                    }
                }
            }
            Op::Neg(x) => {
                let buf = acc_buf(grads, *x, g.len());
                buf.iter_mut().zip(g).for_each(|(d, &gk)| *d -= gk);
            }
            Op::Scale(x, c) => {
                let buf = acc_buf(grads, *x, g.len());
                buf.iter_mut().zip(g).for_each(|(d, &gk)| *d += gk * *c);
            }
            Op::Powf(x, p) => {
                let xv = self.value(*x);
                let p = *p;
                let buf = acc_buf(grads, *x, g.len());
                for ((d, &gk), &xk) in buf.iter_mut().zip(g).zip(xv) {
                    *d += gk * p * xk.powf(p - T::one());
                }
            }
            Op::Relu(x) => {
                let xv = self.value(*x);
                let buf = acc_buf(grads, *x, g.len());
                for ((d, &gk), &xk) in buf.iter_mut().zip(g).zip(xv) {
                    if xk > T::zero() {
                        *d += gk;
                    }
                }
            }
            Op::Cos(x) => {
                let xv = self.value(*x);
                let buf = acc_buf(grads, *x, g.len());
                for ((d, &gk), &xk) in buf.iter_mut().zip(g).zip(xv) {
                    *d -= gk * xk.sin();
                }
            }
            Op::Sin(x) => {
                let xv = self.value(*x);
                let buf = acc_buf(grads, *x, g.len());
                for ((d, &gk), &xk) in buf.iter_mut().zip(g).zip(xv) {
                    *d += gk * xk.cos();
                }
            }
            Op::Quantize(x) => {
                let xv = self.value(*x);
                let buf = acc_buf(grads, *x, g.len());
                for ((d, &gk), &xk) in buf.iter_mut().zip(g).zip(xv) {
                    let t = xk.tanh();
                    *d += gk * (T::one() - t * t);
                }
            }
            Op::MatMul(a, b) => self.matmul_backward(*a, *b, g, grads),
            Op::Transpose(x) => {
                let s = self.shape(*x);
                let (r, c) = (s[s.len() - 2], s[s.len() - 1]);
                let buf = acc_buf(grads, *x, g.len());
                for (dst, src) in buf.chunks_exact_mut(r * c).zip(g.chunks_exact(r * c)) {
                    for i in 0..r {
                        for j in 0..c {
                            dst[i * c + j] += src[j * r + i];
                        }
                    }
                }
            }
            Op::Reshape(x) => {
                let buf = acc_buf(grads, *x, g.len());
                buf.iter_mut().zip(g).for_each(|(d, &gk)| *d += gk);
            }
            Op::Concat(parts, axis) => {
                let (outer, _, inner) = split_axis(out_shape, *axis);
                let total = out_shape[*axis];
                let mut offset = 0;
                for &p in parts {
                    let len = self.shape(p)[*axis];
                    if self.needs(p) {
                        let n = self.value(p).len();
                        let buf = acc_buf(grads, p, n);
                        for o in 0..outer {
                            let src = &g[(o * total + offset) * inner..(o * total + offset + len) * inner];
                            let dst = &mut buf[o * len * inner..(o + 1) * len * inner];
                            dst.iter_mut().zip(src).for_each(|(d, &s)| *d += s);
                        }
                    }
                    offset += len;
                }
            }
            Op::Slice { src, axis, start } => {
                let s = self.shape(*src).to_vec();
                let (outer, n_axis, inner) = split_axis(&s, *axis);
                let len = out_shape[*axis];
                let buf = acc_buf(grads, *src, numel(&s));
                for o in 0..outer {
                    let base = o * n_axis * inner + start * inner;
                    let dst = &mut buf[base..base + len * inner];
                    let gs = &g[o * len * inner..(o + 1) * len * inner];
                    dst.iter_mut().zip(gs).for_each(|(d, &v)| *d += v);
                }
            }
            Op::Sum(x) => {
                let n = self.value(*x).len();
                let buf = acc_buf(grads, *x, n);
                buf.iter_mut().for_each(|d| *d += g[0]);
            }
            Op::Mean(x) => {
                let n = self.value(*x).len();
                let share = g[0] / T::lit(n as f64);
                let buf = acc_buf(grads, *x, n);
                buf.iter_mut().for_each(|d| *d += share);
            }
            Op::SumAxes(x) => {
                let s = self.shape(*x).to_vec();
                let map = broadcast_map(out_shape, &s);
                let buf = acc_buf(grads, *x, map.len());
                for (d, &m) in buf.iter_mut().zip(&map) {
                    *d += g[m];
                }
            }
            Op::Conv1d { x, w } => self.conv1d_backward(*x, *w, g, grads),
            Op::BatchNorm {
                x,
                gamma,
                beta,
                xhat,
                inv_std,
                train,
            } => {
                let (outer, c, inner) = split_axis(out_shape, 1);
                let count = T::lit((outer * inner) as f64);
                let mut sum_g = vec![T::zero(); c];
                let mut sum_gx = vec![T::zero(); c];
                for o in 0..outer {
                    for ch in 0..c {
                        let base = (o * c + ch) * inner;
                        for k in base..base + inner {
                            sum_g[ch] += g[k];
                            sum_gx[ch] += g[k] * xhat[k];
                        }
                    }
                }
                if self.needs(*gamma) {
                    let buf = acc_buf(grads, *gamma, c);
                    buf.iter_mut().zip(&sum_gx).for_each(|(d, &s)| *d += s);
                }
                if self.needs(*beta) {
                    let buf = acc_buf(grads, *beta, c);
                    buf.iter_mut().zip(&sum_g).for_each(|(d, &s)| *d += s);
                }
                if self.needs(*x) {
                    let gv = self.value(*gamma).to_vec();
                    let buf = acc_buf(grads, *x, g.len());
                    for o in 0..outer {
                        for ch in 0..c {
                            let base = (o * c + ch) * inner;
                            let scale = gv[ch] * inv_std[ch];
                            for k in base..base + inner {
                                buf[k] += if *train {
                                    scale * (g[k] - (sum_g[ch] + xhat[k] * sum_gx[ch]) / count)
                                } else {
                                    scale * g[k]
                                };
                            }
                        }
                    }
                }
            }
            Op::HermLogDet { re, im, inv } => {
                let s = self.shape(*re);
                let n = s[s.len() - 1];
                let total = self.value(*re).len();
                for (part, sign) in [(*re, T::one()), (*im, -T::one())] {
                    if !self.needs(part) {
                        continue;
                    }
                    let buf = acc_buf(grads, part, total);
                    for (b, &gb) in g.iter().enumerate() {
                        let off = b * n * n;
                        for r in 0..n {
                            for c in 0..n {
                                // d/dX_rc = G_cr
                                let gcr = inv[off + c * n + r];
                                let comp = if sign > T::zero() { gcr.re } else { -gcr.im };
                                buf[off + r * n + c] += gb * comp;
                            }
                        }
                    }
                }
            }
        }
    }

    /// Accumulates `scale * g` into `x`'s adjoint, summing broadcast axes.
    fn reduce_into(&self, x: Var, out_shape: &[usize], g: &[T], scale: T, grads: &mut [Option<Vec<T>>]) {
        let sx = self.shape(x);
        let n = self.value(x).len();
        if sx == out_shape {
            let buf = acc_buf(grads, x, n);
            buf.iter_mut().zip(g).for_each(|(d, &gk)| *d += scale * gk);
        } else {
            let map = broadcast_map(sx, out_shape);
            let buf = acc_buf(grads, x, n);
            for (&m, &gk) in map.iter().zip(g) {
                buf[m] += scale * gk;
            }
        }
    }

    fn matmul_backward(&self, a: Var, b: Var, g: &[T], grads: &mut [Option<Vec<T>>]) {
        let sa = self.shape(a);
        let sb = self.shape(b);
        let (m, k) = (sa[sa.len() - 2], sa[sa.len() - 1]);
        let n = sb[sb.len() - 1];
        let ba = &sa[..sa.len() - 2];
        let bb = &sb[..sb.len() - 2];
        let batch = broadcast_shape(ba, bb).expect("validated in forward");
        let map_a = broadcast_map(ba, &batch);
        let map_b = broadcast_map(bb, &batch);
        let va = self.value(a);
        let vb = self.value(b);
        if self.needs(a) {
            let buf = acc_buf(grads, a, va.len());
            for (bi, (&ia, &ib)) in map_a.iter().zip(&map_b).enumerate() {
                // dA = G B^T
                T::gemm(
                    m,
                    n,
                    k,
                    T::one(),
                    &g[bi * m * n..(bi + 1) * m * n],
                    n as isize,
                    1,
                    &vb[ib * k * n..(ib + 1) * k * n],
                    1,
                    n as isize,
                    T::one(),
                    &mut buf[ia * m * k..(ia + 1) * m * k],
                    k as isize,
                    1,
                );
            }
        }
        if self.needs(b) {
            let buf = acc_buf(grads, b, vb.len());
            for (bi, (&ia, &ib)) in map_a.iter().zip(&map_b).enumerate() {
                // dB = A^T G
                T::gemm(
                    k,
                    m,
                    n,
                    T::one(),
                    &va[ia * m * k..(ia + 1) * m * k],
                    1,
                    k as isize,
                    &g[bi * m * n..(bi + 1) * m * n],
                    n as isize,
                    1,
                    T::one(),
                    &mut buf[ib * k * n..(ib + 1) * k * n],
                    n as isize,
                    1,
                );
            }
        }
    }

    fn conv1d_backward(&self, x: Var, w: Var, g: &[T], grads: &mut [Option<Vec<T>>]) {
        let sx = self.shape(x);
        let sw = self.shape(w);
        let (b, cin, len) = (sx[0], sx[1], sx[2]);
        let (cout, k) = (sw[0], sw[2]);
        let xv = self.value(x);
        let wv = self.value(w);
        let mut col = vec![T::zero(); cin * k * len];
        if self.needs(w) {
            let buf = acc_buf(grads, w, wv.len());
            for bi in 0..b {
                im2col(&xv[bi * cin * len..(bi + 1) * cin * len], cin, len, k, &mut col);
                // dW += G_b col^T
                T::gemm(
                    cout,
                    len,
                    cin * k,
                    T::one(),
                    &g[bi * cout * len..(bi + 1) * cout * len],
                    len as isize,
                    1,
                    &col,
                    1,
                    len as isize,
                    T::one(),
                    buf,
                    (cin * k) as isize,
                    1,
                );
            }
        }
        if self.needs(x) {
            let buf = acc_buf(grads, x, xv.len());
            for bi in 0..b {
                // dcol = W^T G_b
                T::gemm(
                    cin * k,
                    cout,
                    len,
                    T::one(),
                    wv,
                    1,
                    (cin * k) as isize,
                    &g[bi * cout * len..(bi + 1) * cout * len],
                    len as isize,
                    1,
                    T::zero(),
                    &mut col,
                    len as isize,
                    1,
                );
                col2im_add(&col, cin, len, k, &mut buf[bi * cin * len..(bi + 1) * cin * len]);
            }
        }
    }
}

fn acc_buf<T: Scalar>(grads: &mut [Option<Vec<T>>], v: Var, n: usize) -> &mut Vec<T> {
    grads[v.0].get_or_insert_with(|| vec![T::zero(); n])
}

/// `col[(c * k + j) * len + t] = x[c, t + j - pad]`, zero outside.
fn im2col<T: Scalar>(x: &[T], cin: usize, len: usize, k: usize, col: &mut [T]) {
    let pad = (k - 1) / 2;
    for c in 0..cin {
        for j in 0..k {
            let row = &mut col[(c * k + j) * len..(c * k + j + 1) * len];
            for (t, r) in row.iter_mut().enumerate() {
                let src = t as isize + j as isize - pad as isize;
                *r = if src >= 0 && (src as usize) < len {
                    x[c * len + src as usize]
                } else {
                    T::zero()
                };
            }
        }
    }
}

fn col2im_add<T: Scalar>(col: &[T], cin: usize, len: usize, k: usize, x: &mut [T]) {
    let pad = (k - 1) / 2;
    for c in 0..cin {
        for j in 0..k {
            let row = &col[(c * k + j) * len..(c * k + j + 1) * len];
            for (t, &r) in row.iter().enumerate() {
                let src = t as isize + j as isize - pad as isize;
                if src >= 0 && (src as usize) < len {
                    x[c * len + src as usize] += r;
                }
            }
        }
    }
}
