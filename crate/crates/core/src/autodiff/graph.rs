//! Append-only differentiation tape.
//!
//! A [`Graph`] records every operation applied to its [`Var`] handles.
//! [`Graph::backward`] walks the record in strict reverse order once; a graph
//! is single-use, so each training step builds a fresh one.

use std::cell::{Ref, RefCell};
use std::sync::atomic::{AtomicUsize, Ordering};

use num_complex::Complex;

use super::fft::fft2_planes;
use super::kernels::{self, ConvGeom, LaplaceSaved};
use super::real::matmul_into;
use super::{Real, Tensor};
use crate::{Error, Result};

static NEXT_GRAPH_ID: AtomicUsize = AtomicUsize::new(0);

/// Handle to a node of one particular [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var {
    graph: usize,
    index: usize,
}

/// Complex field stored as two real nodes of identical shape.
#[derive(Clone, Copy, Debug)]
pub struct ComplexPair {
    pub re: Var,
    pub im: Var,
}

/// How the operands of a binary elementwise op line up.
///
/// Allowed: identical shapes; either side holding a single element; or
/// either side having a leading axis of length 1 with all remaining axes
/// equal to the other operand's (broadcast along the leading axis only).
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Bcast {
    Same,
    ScalarLhs,
    ScalarRhs,
    /// lhs has the leading 1-axis; value is the inner block length
    LeadLhs(usize),
    LeadRhs(usize),
}

impl Bcast {
    fn resolve(a: &[usize], b: &[usize]) -> Option<(Vec<usize>, Bcast)> {
        let na: usize = a.iter().product();
        let nb: usize = b.iter().product();
        if a == b {
            return Some((a.to_vec(), Bcast::Same));
        }
        if nb == 1 {
            return Some((a.to_vec(), Bcast::ScalarRhs));
        }
        if na == 1 {
            return Some((b.to_vec(), Bcast::ScalarLhs));
        }
        if a.len() == b.len() && a.len() > 1 && a[1..] == b[1..] {
            if b[0] == 1 {
                return Some((a.to_vec(), Bcast::LeadRhs(nb)));
            }
            if a[0] == 1 {
                return Some((b.to_vec(), Bcast::LeadLhs(na)));
            }
        }
        None
    }

    #[inline]
    fn lhs(self, i: usize) -> usize {
        match self {
            Bcast::ScalarLhs => 0,
            Bcast::LeadLhs(inner) => i % inner,
            _ => i,
        }
    }

    #[inline]
    fn rhs(self, i: usize) -> usize {
        match self {
            Bcast::ScalarRhs => 0,
            Bcast::LeadRhs(inner) => i % inner,
            _ => i,
        }
    }
}

#[derive(Clone, Copy, Debug)]
enum Binary {
    Add,
    Sub,
    Mul,
    Div,
}

#[derive(Clone, Copy, Debug)]
enum Unary {
    Gelu,
    Sigmoid,
    Relu,
    Exp,
    Softplus,
}

enum Op<T> {
    Leaf,
    Binary(Binary, Var, Var, Bcast),
    Unary(Unary, Var),
    Scale(Var, T),
    AddScalar(Var),
    Sum(Var),
    Mean(Var),
    MatMul {
        a: Var,
        b: Var,
        ta: bool,
        tb: bool,
        m: usize,
        k: usize,
        n: usize,
    },
    Reshape(Var),
    RowBias(Var, Var),
    RowScale(Var, Var),
    Concat(Vec<Var>),
    Narrow(Var, usize),
    Select(Var, usize),
    SwapLast(Var),
    SoftmaxRows(Var),
    LayerNorm {
        x: Var,
        gain: Var,
        bias: Var,
        xhat: Vec<T>,
        inv_std: Vec<T>,
    },
    Conv {
        x: Var,
        w: Var,
        bias: Option<Var>,
        geom: ConvGeom,
        cols: Vec<T>,
    },
    Upsample2(Var),
    Fft2 {
        re: Var,
        im: Var,
        inverse: bool,
    },
    SpectralMix {
        xr: Var,
        xi: Var,
        wr: Var,
        wi: Var,
        modes: usize,
    },
    Laplace {
        v: Var,
        beta: (Var, Var),
        mu: (Var, Var),
        saved: Box<LaplaceSaved<T>>,
    },
}

struct Node<T> {
    value: Tensor<T>,
    op: Op<T>,
    requires_grad: bool,
}

struct Inner<T> {
    nodes: Vec<Node<T>>,
    consumed: bool,
}

pub struct Graph<T: Real = f32> {
    id: usize,
    inner: RefCell<Inner<T>>,
}

/// Gradients of the loss with respect to every `requires_grad` leaf.
pub struct Gradients<T> {
    graph: usize,
    grads: Vec<Option<Tensor<T>>>,
}

impl<T: Real> Gradients<T> {
    /// Gradient of a leaf, `None` when the leaf does not require gradients.
    pub fn get(&self, v: Var) -> Option<&Tensor<T>> {
        assert_eq!(v.graph, self.graph, "variable from a different graph");
        self.grads.get(v.index).and_then(|g| g.as_ref())
    }
}

impl<T: Real> Default for Graph<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Real> Graph<T> {
    pub fn new() -> Self {
        Self {
            id: NEXT_GRAPH_ID.fetch_add(1, Ordering::Relaxed),
            inner: RefCell::new(Inner {
                nodes: Vec::new(),
                consumed: false,
            }),
        }
    }

    pub fn len(&self) -> usize {
        self.inner.borrow().nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn check(&self, v: Var) {
        assert_eq!(v.graph, self.id, "variable belongs to a different graph");
    }

    fn push(&self, value: Tensor<T>, op: Op<T>, requires_grad: bool) -> Var {
        let mut inner = self.inner.borrow_mut();
        inner.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var {
            graph: self.id,
            index: inner.nodes.len() - 1,
        }
    }

    fn node(&self, v: Var) -> Ref<'_, Node<T>> {
        self.check(v);
        Ref::map(self.inner.borrow(), |i| &i.nodes[v.index])
    }

    fn needs(&self, vars: &[Var]) -> bool {
        let inner = self.inner.borrow();
        vars.iter().any(|v| inner.nodes[v.index].requires_grad)
    }

    pub fn leaf(&self, value: Tensor<T>, requires_grad: bool) -> Var {
        self.push(value, Op::Leaf, requires_grad)
    }

    pub fn param(&self, value: Tensor<T>) -> Var {
        self.leaf(value, true)
    }

    pub fn constant(&self, value: Tensor<T>) -> Var {
        self.leaf(value, false)
    }

    pub fn value(&self, v: Var) -> Tensor<T> {
        self.node(v).value.clone()
    }

    pub fn shape(&self, v: Var) -> Vec<usize> {
        self.node(v).value.shape().to_vec()
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.node(v).requires_grad
    }

    // ---- elementwise ---------------------------------------------------

    fn binary(&self, kind: Binary, a: Var, b: Var) -> Result<Var> {
        let (va, vb) = (self.value(a), self.value(b));
        let (shape, bc) = Bcast::resolve(va.shape(), vb.shape()).ok_or_else(|| {
            Error::shape(
                "elementwise",
                format!("cannot broadcast {:?} with {:?}", va.shape(), vb.shape()),
            )
        })?;
        let n: usize = shape.iter().product();
        let (da, db) = (va.data(), vb.data());
        let out: Vec<T> = (0..n)
            .map(|i| {
                let (x, y) = (da[bc.lhs(i)], db[bc.rhs(i)]);
                match kind {
                    Binary::Add => x + y,
                    Binary::Sub => x - y,
                    Binary::Mul => x * y,
                    Binary::Div => x / y,
                }
            })
            .collect();
        let rg = self.needs(&[a, b]);
        Ok(self.push(
            Tensor::from_parts(shape, out),
            Op::Binary(kind, a, b, bc),
            rg,
        ))
    }

    pub fn add(&self, a: Var, b: Var) -> Result<Var> {
        self.binary(Binary::Add, a, b)
    }

    pub fn sub(&self, a: Var, b: Var) -> Result<Var> {
        self.binary(Binary::Sub, a, b)
    }

    pub fn mul(&self, a: Var, b: Var) -> Result<Var> {
        self.binary(Binary::Mul, a, b)
    }

    pub fn div(&self, a: Var, b: Var) -> Result<Var> {
        self.binary(Binary::Div, a, b)
    }

    fn unary(&self, kind: Unary, a: Var) -> Var {
        let va = self.value(a);
        let out = va.map(|x| match kind {
            Unary::Gelu => gelu(x),
            Unary::Sigmoid => sigmoid(x),
            Unary::Relu => x.max(T::zero()),
            Unary::Exp => x.exp(),
            Unary::Softplus => softplus(x),
        });
        let rg = self.needs(&[a]);
        self.push(out, Op::Unary(kind, a), rg)
    }

    /// Exact GELU, `x Φ(x)`.
    pub fn gelu(&self, a: Var) -> Var {
        self.unary(Unary::Gelu, a)
    }

    pub fn sigmoid(&self, a: Var) -> Var {
        self.unary(Unary::Sigmoid, a)
    }

    pub fn relu(&self, a: Var) -> Var {
        self.unary(Unary::Relu, a)
    }

    pub fn exp(&self, a: Var) -> Var {
        self.unary(Unary::Exp, a)
    }

    pub fn softplus(&self, a: Var) -> Var {
        self.unary(Unary::Softplus, a)
    }

    pub fn scale(&self, a: Var, c: T) -> Var {
        let out = self.value(a).map(|x| x * c);
        let rg = self.needs(&[a]);
        self.push(out, Op::Scale(a, c), rg)
    }

    pub fn add_scalar(&self, a: Var, c: T) -> Var {
        let out = self.value(a).map(|x| x + c);
        let rg = self.needs(&[a]);
        self.push(out, Op::AddScalar(a), rg)
    }

    pub fn sum(&self, a: Var) -> Var {
        let s = self.value(a).sum();
        let rg = self.needs(&[a]);
        self.push(Tensor::scalar(s), Op::Sum(a), rg)
    }

    pub fn mean(&self, a: Var) -> Var {
        let v = self.value(a);
        let s = v.sum() / T::from_usize(v.len()).unwrap();
        let rg = self.needs(&[a]);
        self.push(Tensor::scalar(s), Op::Mean(a), rg)
    }

    // ---- linear algebra ------------------------------------------------

    /// `op(a) · op(b)` for 2-D operands, where `op` optionally transposes.
    pub fn matmul_t(&self, a: Var, ta: bool, b: Var, tb: bool) -> Result<Var> {
        let (va, vb) = (self.value(a), self.value(b));
        let (sa, sb) = (va.shape(), vb.shape());
        if sa.len() != 2 || sb.len() != 2 {
            return Err(Error::shape(
                "matmul",
                format!("operands must be 2-D, got {sa:?} and {sb:?}"),
            ));
        }
        let (m, k) = if ta { (sa[1], sa[0]) } else { (sa[0], sa[1]) };
        let (k2, n) = if tb { (sb[1], sb[0]) } else { (sb[0], sb[1]) };
        if k != k2 {
            return Err(Error::shape(
                "matmul",
                format!("inner dimensions differ: {sa:?} (t={ta}) · {sb:?} (t={tb})"),
            ));
        }
        let mut out = vec![T::zero(); m * n];
        matmul_into(va.data(), ta, vb.data(), tb, m, k, n, &mut out, false);
        let rg = self.needs(&[a, b]);
        Ok(self.push(
            Tensor::from_parts(vec![m, n], out),
            Op::MatMul {
                a,
                b,
                ta,
                tb,
                m,
                k,
                n,
            },
            rg,
        ))
    }

    pub fn matmul(&self, a: Var, b: Var) -> Result<Var> {
        self.matmul_t(a, false, b, false)
    }

    pub fn reshape(&self, a: Var, shape: &[usize]) -> Result<Var> {
        let v = self.value(a).reshape(shape)?;
        let rg = self.needs(&[a]);
        Ok(self.push(v, Op::Reshape(a), rg))
    }

    /// Adds `bias[r]` to every element of row block `r` of `x` (leading axis).
    pub fn add_row_bias(&self, x: Var, bias: Var) -> Result<Var> {
        let (vx, vb) = (self.value(x), self.value(bias));
        let rows = vx.shape()[0];
        if vb.len() != rows {
            return Err(Error::shape(
                "add_row_bias",
                format!("bias of {} for {rows} rows", vb.len()),
            ));
        }
        let inner = vx.len() / rows;
        let mut out = vx.data().to_vec();
        for (chunk, &b) in out.chunks_mut(inner).zip(vb.data()) {
            chunk.iter_mut().for_each(|v| *v += b);
        }
        let rg = self.needs(&[x, bias]);
        Ok(self.push(
            Tensor::from_parts(vx.shape().to_vec(), out),
            Op::RowBias(x, bias),
            rg,
        ))
    }

    /// Multiplies row block `r` of `x` (leading axis) by `scale[r]`.
    pub fn scale_rows(&self, x: Var, scale: Var) -> Result<Var> {
        let (vx, vs) = (self.value(x), self.value(scale));
        let rows = vx.shape()[0];
        if vs.len() != rows {
            return Err(Error::shape(
                "scale_rows",
                format!("scale of {} for {rows} rows", vs.len()),
            ));
        }
        let inner = vx.len() / rows;
        let mut out = vx.data().to_vec();
        for (chunk, &s) in out.chunks_mut(inner).zip(vs.data()) {
            chunk.iter_mut().for_each(|v| *v *= s);
        }
        let rg = self.needs(&[x, scale]);
        Ok(self.push(
            Tensor::from_parts(vx.shape().to_vec(), out),
            Op::RowScale(x, scale),
            rg,
        ))
    }

    /// Concatenation along the leading axis.
    pub fn concat(&self, parts: &[Var]) -> Result<Var> {
        let first = parts
            .first()
            .ok_or_else(|| Error::shape("concat", "no operands"))?;
        let tail = self.shape(*first)[1..].to_vec();
        let mut lead = 0;
        let mut out = Vec::new();
        for &p in parts {
            let v = self.value(p);
            if v.shape()[1..] != tail[..] {
                return Err(Error::shape(
                    "concat",
                    format!("trailing shape {:?} vs {tail:?}", &v.shape()[1..]),
                ));
            }
            lead += v.shape()[0];
            out.extend_from_slice(v.data());
        }
        let mut shape = vec![lead];
        shape.extend_from_slice(&tail);
        let rg = self.needs(parts);
        Ok(self.push(
            Tensor::from_parts(shape, out),
            Op::Concat(parts.to_vec()),
            rg,
        ))
    }

    /// Rows `start..start+len` along the leading axis.
    pub fn narrow(&self, x: Var, start: usize, len: usize) -> Result<Var> {
        let v = self.value(x);
        let lead = v.shape()[0];
        if len == 0 || start + len > lead {
            return Err(Error::shape(
                "narrow",
                format!("{start}..{} out of {lead}", start + len),
            ));
        }
        let inner = v.len() / lead;
        let mut shape = v.shape().to_vec();
        shape[0] = len;
        let data = v.data()[start * inner..(start + len) * inner].to_vec();
        let rg = self.needs(&[x]);
        Ok(self.push(Tensor::from_parts(shape, data), Op::Narrow(x, start), rg))
    }

    /// Index `i` of the leading axis, dropping that axis.
    pub fn select(&self, x: Var, i: usize) -> Result<Var> {
        let v = self.value(x);
        if v.shape().len() < 2 || i >= v.shape()[0] {
            return Err(Error::shape(
                "select",
                format!("index {i} of {:?}", v.shape()),
            ));
        }
        let inner = v.len() / v.shape()[0];
        let data = v.data()[i * inner..(i + 1) * inner].to_vec();
        let rg = self.needs(&[x]);
        Ok(self.push(
            Tensor::from_parts(v.shape()[1..].to_vec(), data),
            Op::Select(x, i),
            rg,
        ))
    }

    /// Swaps the last two axes of a 3-D tensor.
    pub fn swap_last(&self, x: Var) -> Result<Var> {
        let v = self.value(x);
        let s = v.shape();
        if s.len() != 3 {
            return Err(Error::shape("swap_last", format!("need 3-D, got {s:?}")));
        }
        let out = swap_last_axes(v.data(), s[0], s[1], s[2]);
        let rg = self.needs(&[x]);
        Ok(self.push(
            Tensor::from_parts(vec![s[0], s[2], s[1]], out),
            Op::SwapLast(x),
            rg,
        ))
    }

    // ---- normalization -------------------------------------------------

    /// Softmax over the last axis of a 2-D tensor.
    pub fn softmax_rows(&self, x: Var) -> Result<Var> {
        let v = self.value(x);
        if v.shape().len() != 2 {
            return Err(Error::shape("softmax_rows", format!("{:?}", v.shape())));
        }
        let out = kernels::softmax_rows(v.data(), v.shape()[1]);
        let rg = self.needs(&[x]);
        Ok(self.push(
            Tensor::from_parts(v.shape().to_vec(), out),
            Op::SoftmaxRows(x),
            rg,
        ))
    }

    /// Layer normalization of each column of a `c×n` matrix (over the `c`
    /// channel entries), followed by a per-channel affine map.
    pub fn layer_norm_cols(&self, x: Var, gain: Var, bias: Var, eps: T) -> Result<Var> {
        let v = self.value(x);
        let s = v.shape();
        if s.len() != 2 {
            return Err(Error::shape("layer_norm", format!("{s:?}")));
        }
        let (c, n) = (s[0], s[1]);
        let (vg, vb) = (self.value(gain), self.value(bias));
        if vg.len() != c || vb.len() != c {
            return Err(Error::shape(
                "layer_norm",
                format!("affine of {}/{} for {c} channels", vg.len(), vb.len()),
            ));
        }
        let (xhat, inv_std) = kernels::layer_norm_cols(v.data(), c, n, eps);
        let mut out = vec![T::zero(); c * n];
        for ci in 0..c {
            let (gv, bv) = (vg.data()[ci], vb.data()[ci]);
            for j in 0..n {
                out[ci * n + j] = gv * xhat[ci * n + j] + bv;
            }
        }
        let rg = self.needs(&[x, gain, bias]);
        Ok(self.push(
            Tensor::from_parts(vec![c, n], out),
            Op::LayerNorm {
                x,
                gain,
                bias,
                xhat,
                inv_std,
            },
            rg,
        ))
    }

    // ---- convolution ---------------------------------------------------

    /// Zero-padded ("same" for stride 1) 2-D convolution of a `[c_in, h, w]`
    /// field with weights `[c_out, c_in, k, k]`, `k` odd.
    pub fn conv2d(&self, x: Var, w: Var, bias: Option<Var>, stride: usize) -> Result<Var> {
        let (vx, vw) = (self.value(x), self.value(w));
        let (sx, sw) = (vx.shape(), vw.shape());
        if sw.len() != 4 || sw[2] != sw[3] {
            return Err(Error::shape("conv2d", format!("weight shape {sw:?}")));
        }
        let k = sw[2];
        if k % 2 == 0 {
            return Err(Error::Config(format!("conv2d kernel size {k} must be odd")));
        }
        if stride == 0 {
            return Err(Error::Config("conv2d stride must be positive".into()));
        }
        if sx.len() != 3 || sx[0] != sw[1] {
            return Err(Error::shape(
                "conv2d",
                format!("input {sx:?} for weight {sw:?}"),
            ));
        }
        let c_out = sw[0];
        let geom = ConvGeom::new(sx[0], sx[1], sx[2], k, stride);
        let vb = match bias {
            Some(b) => {
                let vb = self.value(b);
                if vb.len() != c_out {
                    return Err(Error::shape(
                        "conv2d",
                        format!("bias of {} for {c_out} outputs", vb.len()),
                    ));
                }
                Some(vb)
            }
            None => None,
        };
        let (out, cols) =
            kernels::conv_forward(vx.data(), vw.data(), vb.as_ref().map(|b| b.data()), c_out, &geom);
        let mut inputs = vec![x, w];
        inputs.extend(bias);
        let rg = self.needs(&inputs);
        Ok(self.push(
            Tensor::from_parts(vec![c_out, geom.ho, geom.wo], out),
            Op::Conv {
                x,
                w,
                bias,
                geom,
                cols: if rg { cols } else { Vec::new() },
            },
            rg,
        ))
    }

    /// Nearest-neighbour 2× upsampling of a `[c, h, w]` field.
    pub fn upsample2(&self, x: Var) -> Result<Var> {
        let v = self.value(x);
        let s = v.shape();
        if s.len() != 3 {
            return Err(Error::shape("upsample2", format!("{s:?}")));
        }
        let (c, h, w) = (s[0], s[1], s[2]);
        let mut out = vec![T::zero(); c * 4 * h * w];
        for ci in 0..c {
            for y in 0..2 * h {
                for xx in 0..2 * w {
                    out[(ci * 2 * h + y) * 2 * w + xx] = v.data()[(ci * h + y / 2) * w + xx / 2];
                }
            }
        }
        let rg = self.needs(&[x]);
        Ok(self.push(
            Tensor::from_parts(vec![c, 2 * h, 2 * w], out),
            Op::Upsample2(x),
            rg,
        ))
    }

    // ---- spectral ------------------------------------------------------

    fn complex_parts(&self, packed: Var) -> Result<ComplexPair> {
        Ok(ComplexPair {
            re: self.select(packed, 0)?,
            im: self.select(packed, 1)?,
        })
    }

    fn fft2_impl(&self, x: ComplexPair, inverse: bool) -> Result<ComplexPair> {
        let (vr, vi) = (self.value(x.re), self.value(x.im));
        let s = vr.shape().to_vec();
        if s != vi.shape() || s.len() < 2 {
            return Err(Error::shape(
                "fft2",
                format!("re {:?} / im {:?}", s, vi.shape()),
            ));
        }
        let (rows, cols) = (s[s.len() - 2], s[s.len() - 1]);
        let mut re = vr.data().to_vec();
        let mut im = vi.data().to_vec();
        fft2_planes(&mut re, &mut im, rows, cols, inverse)?;
        if inverse {
            let scale = T::one() / T::from_usize(rows * cols).unwrap();
            re.iter_mut().for_each(|v| *v *= scale);
            im.iter_mut().for_each(|v| *v *= scale);
        }
        re.extend_from_slice(&im);
        let mut shape = vec![2];
        shape.extend_from_slice(&s);
        let rg = self.needs(&[x.re, x.im]);
        let packed = self.push(
            Tensor::from_parts(shape, re),
            Op::Fft2 {
                re: x.re,
                im: x.im,
                inverse,
            },
            rg,
        );
        self.complex_parts(packed)
    }

    /// Unnormalized 2-D DFT over the last two axes (both powers of two).
    pub fn fft2(&self, x: ComplexPair) -> Result<ComplexPair> {
        self.fft2_impl(x, false)
    }

    /// Inverse of [`Graph::fft2`], including the `1/(rows·cols)` factor.
    pub fn ifft2(&self, x: ComplexPair) -> Result<ComplexPair> {
        self.fft2_impl(x, true)
    }

    /// Complex channel mixing of the four `modes×modes` low-frequency corner
    /// blocks of a `[c_in, s, s]` spectrum; all other frequencies are zeroed.
    /// Weights are `[4, modes, modes, c_out, c_in]` (real and imaginary parts).
    pub fn spectral_mix(
        &self,
        x: ComplexPair,
        w_re: Var,
        w_im: Var,
        modes: usize,
    ) -> Result<ComplexPair> {
        let (xr, xi) = (self.value(x.re), self.value(x.im));
        let (wr, wi) = (self.value(w_re), self.value(w_im));
        let sx = xr.shape();
        if sx.len() != 3 || sx[1] != sx[2] || xi.shape() != sx {
            return Err(Error::shape("spectral_mix", format!("spectrum {sx:?}")));
        }
        let (c_in, s) = (sx[0], sx[1]);
        if modes == 0 || 2 * modes > s {
            return Err(Error::Config(format!(
                "spectral modes {modes} must be in 1..={}",
                s / 2
            )));
        }
        let sw = wr.shape();
        if sw.len() != 5
            || sw[0] != 4
            || sw[1] != modes
            || sw[2] != modes
            || sw[4] != c_in
            || wi.shape() != sw
        {
            return Err(Error::shape(
                "spectral_mix",
                format!("weights {sw:?} for {c_in} channels, {modes} modes"),
            ));
        }
        let c_out = sw[3];
        let (mut yr, yi) = kernels::spectral_mix_forward(
            xr.data(),
            xi.data(),
            wr.data(),
            wi.data(),
            c_in,
            c_out,
            s,
            modes,
        );
        yr.extend_from_slice(&yi);
        let rg = self.needs(&[x.re, x.im, w_re, w_im]);
        let packed = self.push(
            Tensor::from_parts(vec![2, c_out, s, s], yr),
            Op::SpectralMix {
                xr: x.re,
                xi: x.im,
                wr: w_re,
                wi: w_im,
                modes,
            },
            rg,
        );
        self.complex_parts(packed)
    }

    /// Pole-residue (Laplace) convolution along the last axis of a
    /// `[c_in, rows, len]` field, with residues `[n, c_out, c_in]` and poles
    /// `[n]` given as real/imaginary pairs. Frequencies `|f| < modes` are
    /// retained for both the steady and the transient response.
    pub fn laplace_axis(
        &self,
        v: Var,
        beta: (Var, Var),
        mu: (Var, Var),
        modes: usize,
    ) -> Result<Var> {
        let vv = self.value(v);
        let sv = vv.shape();
        if sv.len() != 3 {
            return Err(Error::shape("laplace_axis", format!("input {sv:?}")));
        }
        let (c_in, rows, len) = (sv[0], sv[1], sv[2]);
        let (br, bi) = (self.value(beta.0), self.value(beta.1));
        let (mr, mi) = (self.value(mu.0), self.value(mu.1));
        let sb = br.shape();
        if sb.len() != 3 || sb[2] != c_in || bi.shape() != sb {
            return Err(Error::shape(
                "laplace_axis",
                format!("residues {sb:?} for {c_in} channels"),
            ));
        }
        let (n_poles, c_out) = (sb[0], sb[1]);
        if mr.len() != n_poles || mi.len() != n_poles {
            return Err(Error::shape(
                "laplace_axis",
                format!("{} poles for {n_poles} residues", mr.len()),
            ));
        }
        if modes == 0 || 2 * modes > len {
            return Err(Error::Config(format!(
                "Laplace modes {modes} must be in 1..={}",
                len / 2
            )));
        }
        let beta_c: Vec<Complex<T>> = br
            .data()
            .iter()
            .zip(bi.data())
            .map(|(&r, &i)| Complex::new(r, i))
            .collect();
        let mu_c: Vec<Complex<T>> = mr
            .data()
            .iter()
            .zip(mi.data())
            .map(|(&r, &i)| Complex::new(r, i))
            .collect();
        let (out, saved) =
            kernels::laplace_forward(vv.data(), beta_c, mu_c, c_in, c_out, rows, len, modes);
        let rg = self.needs(&[v, beta.0, beta.1, mu.0, mu.1]);
        Ok(self.push(
            Tensor::from_parts(vec![c_out, rows, len], out),
            Op::Laplace {
                v,
                beta,
                mu,
                saved: Box::new(saved),
            },
            rg,
        ))
    }

    // ---- backward ------------------------------------------------------

    /// Reverse-mode sweep from a single-element `loss`. Consumes the graph:
    /// a second call returns [`Error::State`].
    pub fn backward(&self, loss: Var) -> Result<Gradients<T>> {
        self.check(loss);
        let mut inner = self.inner.borrow_mut();
        if inner.consumed {
            return Err(Error::State(
                "backward already ran on this graph; rebuild the forward pass".into(),
            ));
        }
        if inner.nodes[loss.index].value.len() != 1 {
            return Err(Error::Contract(format!(
                "loss must be a scalar, got shape {:?}",
                inner.nodes[loss.index].value.shape()
            )));
        }
        inner.consumed = true;
        let nodes = &inner.nodes;
        let mut grads: Vec<Option<Vec<T>>> = (0..nodes.len()).map(|_| None).collect();
        let mut leaf_grads: Vec<Option<Tensor<T>>> = (0..nodes.len()).map(|_| None).collect();
        if nodes[loss.index].requires_grad {
            grads[loss.index] = Some(vec![T::one()]);
        }
        for idx in (0..=loss.index).rev() {
            let node = &nodes[idx];
            if !node.requires_grad {
                continue;
            }
            let Some(g) = grads[idx].take() else {
                continue;
            };
            if let Op::Leaf = node.op {
                leaf_grads[idx] = Some(Tensor::from_parts(node.value.shape().to_vec(), g));
                continue;
            }
            backprop(nodes, node, &g, &mut grads);
        }
        for (idx, node) in nodes.iter().enumerate() {
            if matches!(node.op, Op::Leaf) && node.requires_grad && leaf_grads[idx].is_none() {
                leaf_grads[idx] = Some(Tensor::zeros(node.value.shape()));
            }
        }
        Ok(Gradients {
            graph: self.id,
            grads: leaf_grads,
        })
    }
}

fn swap_last_axes<T: Copy>(data: &[T], c: usize, h: usize, w: usize) -> Vec<T> {
    let mut out = Vec::with_capacity(data.len());
    for ci in 0..c {
        let plane = &data[ci * h * w..(ci + 1) * h * w];
        for x in 0..w {
            for y in 0..h {
                out.push(plane[y * w + x]);
            }
        }
    }
    out
}

pub(crate) fn gelu<T: Real>(x: T) -> T {
    let half = T::lit(0.5);
    half * x * (T::one() + (x * T::lit(std::f64::consts::FRAC_1_SQRT_2)).erf())
}

fn gelu_grad<T: Real>(x: T) -> T {
    let cdf = T::lit(0.5) * (T::one() + (x * T::lit(std::f64::consts::FRAC_1_SQRT_2)).erf());
    let pdf = (-(x * x) * T::lit(0.5)).exp() * T::lit(1.0 / (2.0 * std::f64::consts::PI).sqrt());
    cdf + x * pdf
}

pub(crate) fn sigmoid<T: Real>(x: T) -> T {
    if x >= T::zero() {
        T::one() / (T::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (T::one() + e)
    }
}

fn softplus<T: Real>(x: T) -> T {
    if x > T::lit(20.0) {
        x
    } else {
        x.exp().ln_1p()
    }
}

/// Accumulates into the gradient buffer of `v` if it requires gradients.
fn acc<T: Real, F: FnOnce(&mut [T])>(
    nodes: &[Node<T>],
    grads: &mut [Option<Vec<T>>],
    v: Var,
    f: F,
) {
    let node = &nodes[v.index];
    if !node.requires_grad {
        return;
    }
    let buf = grads[v.index].get_or_insert_with(|| vec![T::zero(); node.value.len()]);
    f(buf);
}

/// Like [`acc`] for a fully formed gradient, moved in when the slot is empty.
fn acc_owned<T: Real>(nodes: &[Node<T>], grads: &mut [Option<Vec<T>>], v: Var, d: Vec<T>) {
    if !nodes[v.index].requires_grad {
        return;
    }
    match &mut grads[v.index] {
        Some(buf) => buf.iter_mut().zip(&d).for_each(|(a, &b)| *a += b),
        slot => *slot = Some(d),
    }
}

fn backprop<T: Real>(nodes: &[Node<T>], node: &Node<T>, g: &[T], grads: &mut [Option<Vec<T>>]) {
    let val = |v: Var| nodes[v.index].value.data();
    match &node.op {
        Op::Leaf => {}
        Op::Binary(kind, a, b, bc) => {
            let (da, db) = (val(*a), val(*b));
            let kind = *kind;
            let bc = *bc;
            acc(nodes, grads, *a, |ga| {
                for (i, &gi) in g.iter().enumerate() {
                    let y = db[bc.rhs(i)];
                    ga[bc.lhs(i)] += match kind {
                        Binary::Add | Binary::Sub => gi,
                        Binary::Mul => gi * y,
                        Binary::Div => gi / y,
                    };
                }
            });
            acc(nodes, grads, *b, |gb| {
                for (i, &gi) in g.iter().enumerate() {
                    let x = da[bc.lhs(i)];
                    let y = db[bc.rhs(i)];
                    gb[bc.rhs(i)] += match kind {
                        Binary::Add => gi,
                        Binary::Sub => -gi,
                        Binary::Mul => gi * x,
                        Binary::Div => -gi * x / (y * y),
                    };
                }
            });
        }
        Op::Unary(kind, a) => {
            let (x, y) = (val(*a), node.value.data());
            let kind = *kind;
            acc(nodes, grads, *a, |ga| {
                for i in 0..g.len() {
                    ga[i] += g[i]
                        * match kind {
                            Unary::Gelu => gelu_grad(x[i]),
                            Unary::Sigmoid => y[i] * (T::one() - y[i]),
                            Unary::Relu => {
                                if x[i] > T::zero() {
                                    T::one()
                                } else {
                                    T::zero()
                                }
                            }
                            Unary::Exp => y[i],
                            Unary::Softplus => sigmoid(x[i]),
                        };
                }
            });
        }
        Op::Scale(a, c) => {
            let c = *c;
            acc(nodes, grads, *a, |ga| {
                ga.iter_mut().zip(g).for_each(|(d, &gi)| *d += gi * c)
            });
        }
        Op::AddScalar(a) | Op::Reshape(a) => {
            acc(nodes, grads, *a, |ga| {
                ga.iter_mut().zip(g).for_each(|(d, &gi)| *d += gi)
            });
        }
        Op::Sum(a) => {
            acc(nodes, grads, *a, |ga| ga.iter_mut().for_each(|d| *d += g[0]));
        }
        Op::Mean(a) => {
            let n = T::from_usize(nodes[a.index].value.len()).unwrap();
            acc(nodes, grads, *a, |ga| ga.iter_mut().for_each(|d| *d += g[0] / n));
        }
        Op::MatMul {
            a,
            b,
            ta,
            tb,
            m,
            k,
            n,
        } => {
            let (da, db) = (val(*a), val(*b));
            let (ta, tb, m, k, n) = (*ta, *tb, *m, *k, *n);
            acc(nodes, grads, *a, |ga| {
                if ta {
                    matmul_into(db, tb, g, true, k, n, m, ga, true);
                } else {
                    matmul_into(g, false, db, !tb, m, n, k, ga, true);
                }
            });
            acc(nodes, grads, *b, |gb| {
                if tb {
                    matmul_into(g, true, da, ta, n, m, k, gb, true);
                } else {
                    matmul_into(da, !ta, g, false, k, m, n, gb, true);
                }
            });
        }
        Op::RowBias(x, bias) => {
            let rows = nodes[bias.index].value.len();
            let inner = g.len() / rows;
            acc(nodes, grads, *x, |gx| {
                gx.iter_mut().zip(g).for_each(|(d, &gi)| *d += gi)
            });
            acc(nodes, grads, *bias, |gb| {
                for (r, chunk) in g.chunks(inner).enumerate() {
                    gb[r] += chunk.iter().copied().sum::<T>();
                }
            });
        }
        Op::RowScale(x, scale) => {
            let (dx, ds) = (val(*x), val(*scale));
            let inner = g.len() / ds.len();
            acc(nodes, grads, *x, |gx| {
                for (i, &gi) in g.iter().enumerate() {
                    gx[i] += gi * ds[i / inner];
                }
            });
            acc(nodes, grads, *scale, |gs| {
                for (i, &gi) in g.iter().enumerate() {
                    gs[i / inner] += gi * dx[i];
                }
            });
        }
        Op::Concat(parts) => {
            let mut offset = 0;
            for p in parts {
                let len = nodes[p.index].value.len();
                acc(nodes, grads, *p, |gp| {
                    gp.iter_mut()
                        .zip(&g[offset..offset + len])
                        .for_each(|(d, &gi)| *d += gi)
                });
                offset += len;
            }
        }
        Op::Narrow(x, start) => {
            let v = &nodes[x.index].value;
            let inner = v.len() / v.shape()[0];
            let off = start * inner;
            acc(nodes, grads, *x, |gx| {
                gx[off..off + g.len()]
                    .iter_mut()
                    .zip(g)
                    .for_each(|(d, &gi)| *d += gi)
            });
        }
        Op::Select(x, i) => {
            let off = i * g.len();
            acc(nodes, grads, *x, |gx| {
                gx[off..off + g.len()]
                    .iter_mut()
                    .zip(g)
                    .for_each(|(d, &gi)| *d += gi)
            });
        }
        Op::SwapLast(x) => {
            let s = node.value.shape();
            // output is [c, w, h]; swapping back restores [c, h, w]
            let back = swap_last_axes(g, s[0], s[1], s[2]);
            acc_owned(nodes, grads, *x, back);
        }
        Op::SoftmaxRows(x) => {
            let y = node.value.data();
            let c = node.value.shape()[1];
            acc(nodes, grads, *x, |gx| {
                for ((grow, yrow), gxrow) in g.chunks(c).zip(y.chunks(c)).zip(gx.chunks_mut(c)) {
                    let dot: T = grow.iter().zip(yrow).map(|(&a, &b)| a * b).sum();
                    for j in 0..c {
                        gxrow[j] += yrow[j] * (grow[j] - dot);
                    }
                }
            });
        }
        Op::LayerNorm {
            x,
            gain,
            bias,
            xhat,
            inv_std,
        } => {
            let s = node.value.shape();
            let (c, n) = (s[0], s[1]);
            let gv = val(*gain);
            acc(nodes, grads, *bias, |gb| {
                for (ci, row) in g.chunks(n).enumerate() {
                    gb[ci] += row.iter().copied().sum::<T>();
                }
            });
            acc(nodes, grads, *gain, |gg| {
                for ci in 0..c {
                    let mut s = T::zero();
                    for j in 0..n {
                        s += g[ci * n + j] * xhat[ci * n + j];
                    }
                    gg[ci] += s;
                }
            });
            acc(nodes, grads, *x, |gx| {
                let cf = T::from_usize(c).unwrap();
                let mut sum_d = vec![T::zero(); n];
                let mut sum_dx = vec![T::zero(); n];
                for ci in 0..c {
                    for j in 0..n {
                        let d = g[ci * n + j] * gv[ci];
                        sum_d[j] += d;
                        sum_dx[j] += d * xhat[ci * n + j];
                    }
                }
                for ci in 0..c {
                    for j in 0..n {
                        let d = g[ci * n + j] * gv[ci];
                        gx[ci * n + j] += inv_std[j] / cf
                            * (cf * d - sum_d[j] - xhat[ci * n + j] * sum_dx[j]);
                    }
                }
            });
        }
        Op::Conv {
            x,
            w,
            bias,
            geom,
            cols,
        } => {
            let c_out = node.value.shape()[0];
            let p = geom.positions();
            if let Some(b) = bias {
                acc(nodes, grads, *b, |gb| {
                    for (o, row) in g.chunks(p).enumerate() {
                        gb[o] += row.iter().copied().sum::<T>();
                    }
                });
            }
            acc(nodes, grads, *w, |gw| {
                matmul_into(g, false, cols, true, c_out, p, geom.patch(), gw, true);
            });
            let dw = val(*w);
            acc(nodes, grads, *x, |gx| {
                let mut gcols = vec![T::zero(); geom.patch() * p];
                matmul_into(dw, true, g, false, geom.patch(), c_out, p, &mut gcols, false);
                kernels::col2im_acc(&gcols, geom, gx);
            });
        }
        Op::Upsample2(x) => {
            let s = nodes[x.index].value.shape();
            let (c, h, w) = (s[0], s[1], s[2]);
            acc(nodes, grads, *x, |gx| {
                for ci in 0..c {
                    for y in 0..2 * h {
                        for xx in 0..2 * w {
                            gx[(ci * h + y / 2) * w + xx / 2] += g[(ci * 2 * h + y) * 2 * w + xx];
                        }
                    }
                }
            });
        }
        Op::Fft2 { re, im, inverse } => {
            let half = g.len() / 2;
            let s = nodes[re.index].value.shape();
            let (rows, cols) = (s[s.len() - 2], s[s.len() - 1]);
            let mut gr = g[..half].to_vec();
            let mut gi = g[half..].to_vec();
            // adjoint of the unnormalized DFT is the unnormalized inverse and vice versa
            fft2_planes(&mut gr, &mut gi, rows, cols, !inverse)
                .expect("extents validated in forward");
            if *inverse {
                let scale = T::one() / T::from_usize(rows * cols).unwrap();
                gr.iter_mut().for_each(|v| *v *= scale);
                gi.iter_mut().for_each(|v| *v *= scale);
            }
            acc_owned(nodes, grads, *re, gr);
            acc_owned(nodes, grads, *im, gi);
        }
        Op::SpectralMix {
            xr,
            xi,
            wr,
            wi,
            modes,
        } => {
            let half = g.len() / 2;
            let sx = nodes[xr.index].value.shape();
            let (c_in, s) = (sx[0], sx[1]);
            let c_out = node.value.shape()[1];
            let [dxr, dxi, dwr, dwi] = kernels::spectral_mix_backward(
                val(*xr),
                val(*xi),
                val(*wr),
                val(*wi),
                &g[..half],
                &g[half..],
                c_in,
                c_out,
                s,
                *modes,
            );
            for (v, d) in [(*xr, dxr), (*xi, dxi), (*wr, dwr), (*wi, dwi)] {
                acc_owned(nodes, grads, v, d);
            }
        }
        Op::Laplace { v, beta, mu, saved } => {
            let (dv, dbeta, dmu) = kernels::laplace_backward(saved, g);
            acc_owned(nodes, grads, *v, dv);
            acc(nodes, grads, beta.0, |buf| {
                buf.iter_mut().zip(&dbeta).for_each(|(a, b)| *a += b.re)
            });
            acc(nodes, grads, beta.1, |buf| {
                buf.iter_mut().zip(&dbeta).for_each(|(a, b)| *a += b.im)
            });
            acc(nodes, grads, mu.0, |buf| {
                buf.iter_mut().zip(&dmu).for_each(|(a, b)| *a += b.re)
            });
            acc(nodes, grads, mu.1, |buf| {
                buf.iter_mut().zip(&dmu).for_each(|(a, b)| *a += b.im)
            });
        }
    }
}
