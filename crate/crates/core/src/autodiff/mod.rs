//! Tape-based reverse-mode automatic differentiation over dense f64 tensors.
//!
//! A [`Graph`] records every operation as a node holding its forward value.
//! Nodes are appended after their parents, so the node index order is a
//! topological order and [`Graph::backward`] walks it once in reverse.
//!
//! Broadcasting is limited to scalar-tensor pairs in the binary ops; per-row
//! or per-column expansion is done with the explicit [`Graph::expand_channels`]
//! and [`Graph::expand_time`] ops.

mod gradcheck;
mod tensor;

pub use gradcheck::{check_battery, grad_check, op_battery, CheckFn, BATTERY_STEP};
pub use tensor::Tensor;

use rustfft::num_complex::Complex64;

use crate::dsp::{fft_in_place, ifft_in_place};
use crate::error::{bail, Result};

/// Floor applied to denominators and to log/sqrt inputs.
pub const EPS_FLOOR: f64 = 1e-12;

/// Handle to a node in a [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Div(Var, Var),
    Neg(Var),
    Scale(Var, f64),
    AddScalar(Var),
    Sum(Var),
    Mean(Var),
    Sqrt(Var),
    Log(Var),
    Exp(Var),
    Sigmoid(Var),
    Sin(Var),
    Cos(Var),
    Abs(Var),
    Square(Var),
    LeakyRelu(Var, f64),
    Affine { x: Var, w: Var, b: Option<Var> },
    CausalConv { x: Var, w: Var, b: Option<Var> },
    Upsample2(Var),
    Downsample2(Var),
    DftPower(Var),
    Reshape(Var),
    Concat(Vec<Var>),
    Slice(Var, usize),
    ExpandChannels(Var),
    ExpandTime(Var),
}

struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

/// Gradients produced by [`Graph::backward`], indexed by node.
pub struct Gradients {
    grads: Vec<Option<Vec<f64>>>,
}

impl Gradients {
    pub fn get(&self, v: Var) -> Option<&[f64]> {
        self.grads.get(v.0).and_then(|g| g.as_deref())
    }

    /// Gradient of `v`, or zeros of length `len` if no path reached it.
    pub fn get_or_zeros(&self, v: Var, len: usize) -> Vec<f64> {
        self.get(v).map(|g| g.to_vec()).unwrap_or_else(|| vec![0.0; len])
    }

    pub fn take(&mut self, v: Var) -> Option<Vec<f64>> {
        self.grads.get_mut(v.0).and_then(|g| g.take())
    }
}

#[derive(Default)]
pub struct Graph {
    nodes: Vec<Node>,
}

fn floored(d: f64) -> f64 {
    if d.abs() < EPS_FLOOR {
        if d < 0.0 {
            -EPS_FLOOR
        } else {
            EPS_FLOOR
        }
    } else {
        d
    }
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// C[m×n] = A[m×k]·B[k×n] + beta·C with explicit strides.
#[allow(clippy::too_many_arguments)]
fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f64],
    rsa: usize,
    csa: usize,
    b: &[f64],
    rsb: usize,
    csb: usize,
    beta: f64,
    c: &mut [f64],
    rsc: usize,
    csc: usize,
) {
    if m == 0 || n == 0 {
        return;
    }
    // SAFETY: the callers size every buffer to hold the full strided extent.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            rsa as isize,
            csa as isize,
            b.as_ptr(),
            rsb as isize,
            csb as isize,
            beta,
            c.as_mut_ptr(),
            rsc as isize,
            csc as isize,
        );
    }
}

/// Unfolds `x[ci, t]` into `col[ci*k + j, t] = x[ci, t - (k-1) + j]`.
fn im2col(x: &[f64], ci: usize, t: usize, k: usize) -> Vec<f64> {
    let mut col = vec![0.0; ci * k * t];
    for c in 0..ci {
        let row = &x[c * t..(c + 1) * t];
        for j in 0..k {
            let shift = k - 1 - j;
            let dst = &mut col[(c * k + j) * t..(c * k + j + 1) * t];
            if shift < t {
                dst[shift..].copy_from_slice(&row[..t - shift]);
            }
        }
    }
    col
}

fn col2im(col: &[f64], ci: usize, t: usize, k: usize, out: &mut [f64]) {
    for c in 0..ci {
        let row = &mut out[c * t..(c + 1) * t];
        for j in 0..k {
            let shift = k - 1 - j;
            let src = &col[(c * k + j) * t..(c * k + j + 1) * t];
            if shift < t {
                for (r, s) in row[..t - shift].iter_mut().zip(&src[shift..]) {
                    *r += s;
                }
            }
        }
    }
}

/// `A x`: DFT bins 0..=N/2 of a real vector.
pub(crate) fn one_sided_dft(x: &[f64]) -> Vec<Complex64> {
    let mut buf: Vec<Complex64> = x.iter().map(|&v| Complex64::new(v, 0.0)).collect();
    fft_in_place(&mut buf);
    buf.truncate(x.len() / 2 + 1);
    buf
}

/// `Aᵀ c` for the map above under the real inner product
/// `⟨u, v⟩ = Σ Re(u_k·conj(v_k))`: `(Aᵀc)[n] = Re Σ_k c_k e^{+2πikn/N}`.
pub(crate) fn one_sided_dft_adjoint(c: &[Complex64], n: usize) -> Vec<f64> {
    let mut buf = vec![Complex64::new(0.0, 0.0); n];
    buf[..c.len()].copy_from_slice(c);
    ifft_in_place(&mut buf);
    buf.iter().map(|v| v.re).collect()
}

fn accumulate(slot: &mut Option<Vec<f64>>, delta: &[f64]) {
    match slot {
        Some(g) => g.iter_mut().zip(delta).for_each(|(a, b)| *a += b),
        None => *slot = Some(delta.to_vec()),
    }
}

fn accumulate_owned(slot: &mut Option<Vec<f64>>, delta: Vec<f64>) {
    match slot {
        Some(g) => g.iter_mut().zip(&delta).for_each(|(a, b)| *a += b),
        None => *slot = Some(delta),
    }
}

fn matrix_dims(shape: &[usize], what: &str) -> Result<(usize, usize)> {
    match shape {
        [r, c] => Ok((*r, *c)),
        _ => bail!(Shape, "{what} must be 2-D, got {:?}", shape),
    }
}

impl Graph {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor, op: Op, requires_grad: bool) -> Result<Var> {
        if let Some(i) = value.data().iter().position(|v| !v.is_finite()) {
            bail!(NonFinite, "entry {i} of node {} ({:?}) is not finite", self.nodes.len(), op_name(&op));
        }
        self.nodes.push(Node { value, op, requires_grad });
        Ok(Var(self.nodes.len() - 1))
    }

    fn rg(&self, vars: &[Var]) -> bool {
        vars.iter().any(|v| self.nodes[v.0].requires_grad)
    }

    /// Leaf whose gradient is tracked.
    pub fn param(&mut self, t: Tensor) -> Result<Var> {
        self.push(t, Op::Leaf, true)
    }

    /// Leaf without gradient.
    pub fn constant(&mut self, t: Tensor) -> Result<Var> {
        self.push(t, Op::Leaf, false)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn data(&self, v: Var) -> &[f64] {
        self.nodes[v.0].value.data()
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    pub fn item(&self, v: Var) -> f64 {
        self.nodes[v.0].value.item()
    }

    fn binary(&mut self, a: Var, b: Var, what: &str, f: impl Fn(f64, f64) -> f64) -> Result<Tensor> {
        let (ta, tb) = (&self.nodes[a.0].value, &self.nodes[b.0].value);
        if ta.shape() == tb.shape() || (ta.len() == tb.len() && ta.len() == 1) {
            let data = ta.data().iter().zip(tb.data()).map(|(x, y)| f(*x, *y)).collect();
            return Tensor::new(ta.shape().to_vec(), data);
        }
        if tb.len() == 1 {
            let y = tb.item();
            let data = ta.data().iter().map(|x| f(*x, y)).collect();
            return Tensor::new(ta.shape().to_vec(), data);
        }
        if ta.len() == 1 {
            let x = ta.item();
            let data = tb.data().iter().map(|y| f(x, *y)).collect();
            return Tensor::new(tb.shape().to_vec(), data);
        }
        bail!(Shape, "{what}: incompatible shapes {:?} and {:?}", ta.shape(), tb.shape())
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let t = self.binary(a, b, "add", |x, y| x + y)?;
        let rg = self.rg(&[a, b]);
        self.push(t, Op::Add(a, b), rg)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let t = self.binary(a, b, "sub", |x, y| x - y)?;
        let rg = self.rg(&[a, b]);
        self.push(t, Op::Sub(a, b), rg)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let t = self.binary(a, b, "mul", |x, y| x * y)?;
        let rg = self.rg(&[a, b]);
        self.push(t, Op::Mul(a, b), rg)
    }

    /// Division with the denominator floored at ±1e-12.
    pub fn div(&mut self, a: Var, b: Var) -> Result<Var> {
        let t = self.binary(a, b, "div", |x, y| x / floored(y))?;
        let rg = self.rg(&[a, b]);
        self.push(t, Op::Div(a, b), rg)
    }

    fn unary(&mut self, a: Var, op: Op, f: impl Fn(f64) -> f64) -> Result<Var> {
        let src = &self.nodes[a.0].value;
        let t = Tensor::new(src.shape().to_vec(), src.data().iter().map(|x| f(*x)).collect())?;
        let rg = self.rg(&[a]);
        self.push(t, op, rg)
    }

    pub fn neg(&mut self, a: Var) -> Result<Var> {
        self.unary(a, Op::Neg(a), |x| -x)
    }

    /// Multiplication by a constant.
    pub fn scale(&mut self, a: Var, c: f64) -> Result<Var> {
        self.unary(a, Op::Scale(a, c), |x| c * x)
    }

    /// Addition of a constant.
    pub fn add_scalar(&mut self, a: Var, c: f64) -> Result<Var> {
        self.unary(a, Op::AddScalar(a), |x| x + c)
    }

    pub fn sum(&mut self, a: Var) -> Result<Var> {
        let s = self.data(a).iter().sum();
        let rg = self.rg(&[a]);
        self.push(Tensor::scalar(s), Op::Sum(a), rg)
    }

    pub fn mean(&mut self, a: Var) -> Result<Var> {
        let d = self.data(a);
        if d.is_empty() {
            bail!(Shape, "mean of an empty tensor");
        }
        let s = d.iter().sum::<f64>() / d.len() as f64;
        let rg = self.rg(&[a]);
        self.push(Tensor::scalar(s), Op::Mean(a), rg)
    }

    /// Square root with the input floored at 1e-12.
    pub fn sqrt(&mut self, a: Var) -> Result<Var> {
        self.unary(a, Op::Sqrt(a), |x| x.max(EPS_FLOOR).sqrt())
    }

    /// Natural log with the input floored at 1e-12.
    pub fn log(&mut self, a: Var) -> Result<Var> {
        self.unary(a, Op::Log(a), |x| x.max(EPS_FLOOR).ln())
    }

    pub fn exp(&mut self, a: Var) -> Result<Var> {
        self.unary(a, Op::Exp(a), f64::exp)
    }

    pub fn sigmoid(&mut self, a: Var) -> Result<Var> {
        self.unary(a, Op::Sigmoid(a), sigmoid)
    }

    pub fn sin(&mut self, a: Var) -> Result<Var> {
        self.unary(a, Op::Sin(a), f64::sin)
    }

    pub fn cos(&mut self, a: Var) -> Result<Var> {
        self.unary(a, Op::Cos(a), f64::cos)
    }

    pub fn abs(&mut self, a: Var) -> Result<Var> {
        self.unary(a, Op::Abs(a), f64::abs)
    }

    pub fn square(&mut self, a: Var) -> Result<Var> {
        self.unary(a, Op::Square(a), |x| x * x)
    }

    pub fn leaky_relu(&mut self, a: Var, slope: f64) -> Result<Var> {
        self.unary(a, Op::LeakyRelu(a, slope), move |x| if x >= 0.0 { x } else { slope * x })
    }

    /// `w·x + b` for a vector `x[in]`, `w[out, in]` and optional `b[out]`.
    pub fn affine(&mut self, x: Var, w: Var, b: Option<Var>) -> Result<Var> {
        let (out, inp) = matrix_dims(self.shape(w), "affine weight")?;
        let xd = self.data(x);
        if xd.len() != inp {
            bail!(Shape, "affine: input has {} values, weight expects {inp}", xd.len());
        }
        let wd = self.data(w);
        let mut y: Vec<f64> =
            (0..out).map(|o| wd[o * inp..(o + 1) * inp].iter().zip(xd).map(|(a, b)| a * b).sum()).collect();
        if let Some(b) = b {
            let bd = self.data(b);
            if bd.len() != out {
                bail!(Shape, "affine: bias has {} values, expected {out}", bd.len());
            }
            y.iter_mut().zip(bd).for_each(|(v, b)| *v += b);
        }
        let mut parents = vec![x, w];
        parents.extend(b);
        let rg = self.rg(&parents);
        self.push(Tensor::vector(y), Op::Affine { x, w, b }, rg)
    }

    /// Causal 1-D convolution: `y[o, t] = b[o] + Σ_{c,j} w[o, c, j]·x[c, t-(k-1)+j]`
    /// with zeros before the start. Output time `t` depends only on inputs `≤ t`.
    pub fn causal_conv1d(&mut self, x: Var, w: Var, b: Option<Var>) -> Result<Var> {
        let (ci, t) = matrix_dims(self.shape(x), "conv input")?;
        let (co, wci, k) = match self.shape(w) {
            [a, b, c] => (*a, *b, *c),
            s => bail!(Shape, "conv weight must be 3-D, got {:?}", s),
        };
        if wci != ci {
            bail!(Shape, "conv: input has {ci} channels, weight expects {wci}");
        }
        if k == 0 {
            bail!(Shape, "conv kernel length must be positive");
        }
        let mut y = vec![0.0; co * t];
        if let Some(b) = b {
            let bd = self.data(b);
            if bd.len() != co {
                bail!(Shape, "conv: bias has {} values, expected {co}", bd.len());
            }
            for (o, bv) in bd.iter().enumerate() {
                y[o * t..(o + 1) * t].iter_mut().for_each(|v| *v = *bv);
            }
        }
        let xd = self.data(x);
        let wd = self.data(w);
        let beta = if b.is_some() { 1.0 } else { 0.0 };
        if k == 1 {
            gemm(co, ci, t, wd, ci, 1, xd, t, 1, beta, &mut y, t, 1);
        } else {
            let col = im2col(xd, ci, t, k);
            gemm(co, ci * k, t, wd, ci * k, 1, &col, t, 1, beta, &mut y, t, 1);
        }
        let mut parents = vec![x, w];
        parents.extend(b);
        let rg = self.rg(&parents);
        self.push(Tensor::new(vec![co, t], y)?, Op::CausalConv { x, w, b }, rg)
    }

    /// Causal ×2 upsampling: sample repetition followed by a two-tap averaging
    /// filter, `y[2t] = (x[t] + x[t-1]) / 2`, `y[2t+1] = x[t]`, with `x[-1] = 0`.
    pub fn avg_upsample2x(&mut self, x: Var) -> Result<Var> {
        let (c, t) = matrix_dims(self.shape(x), "upsample input")?;
        let xd = self.data(x);
        let mut y = vec![0.0; c * 2 * t];
        for ch in 0..c {
            let src = &xd[ch * t..(ch + 1) * t];
            let dst = &mut y[ch * 2 * t..(ch + 1) * 2 * t];
            let mut prev = 0.0;
            for (i, &v) in src.iter().enumerate() {
                dst[2 * i] = 0.5 * (v + prev);
                dst[2 * i + 1] = v;
                prev = v;
            }
        }
        let rg = self.rg(&[x]);
        self.push(Tensor::new(vec![c, 2 * t], y)?, Op::Upsample2(x), rg)
    }

    /// ×2 average pooling along time; the length must be even.
    pub fn avg_downsample2x(&mut self, x: Var) -> Result<Var> {
        let (c, t) = matrix_dims(self.shape(x), "downsample input")?;
        if t % 2 != 0 {
            bail!(Shape, "downsample needs an even length, got {t}");
        }
        let xd = self.data(x);
        let h = t / 2;
        let mut y = vec![0.0; c * h];
        for ch in 0..c {
            for i in 0..h {
                y[ch * h + i] = 0.5 * (xd[ch * t + 2 * i] + xd[ch * t + 2 * i + 1]);
            }
        }
        let rg = self.rg(&[x]);
        self.push(Tensor::new(vec![c, h], y)?, Op::Downsample2(x), rg)
    }

    /// One-sided power spectrum `|X[k]|²`, k = 0..=N/2, of a real vector.
    pub fn real_dft_power(&mut self, x: Var) -> Result<Var> {
        let n = self.data(x).len();
        if n == 0 {
            bail!(Shape, "power spectrum of an empty signal");
        }
        let p: Vec<f64> = one_sided_dft(self.data(x)).iter().map(|c| c.norm_sqr()).collect();
        let rg = self.rg(&[x]);
        self.push(Tensor::vector(p), Op::DftPower(x), rg)
    }

    pub fn reshape(&mut self, x: Var, shape: Vec<usize>) -> Result<Var> {
        let t = self.value(x).clone().reshaped(shape)?;
        let rg = self.rg(&[x]);
        self.push(t, Op::Reshape(x), rg)
    }

    /// Concatenates the flattened values of `parts` into a vector.
    pub fn concat(&mut self, parts: &[Var]) -> Result<Var> {
        if parts.is_empty() {
            bail!(Shape, "concat of zero tensors");
        }
        let mut data = Vec::new();
        for p in parts {
            data.extend_from_slice(self.data(*p));
        }
        let rg = self.rg(parts);
        self.push(Tensor::vector(data), Op::Concat(parts.to_vec()), rg)
    }

    /// Flattened contiguous slice `[start, start + len)` as a vector.
    pub fn slice(&mut self, x: Var, start: usize, len: usize) -> Result<Var> {
        let d = self.data(x);
        if start + len > d.len() {
            bail!(Shape, "slice [{start}, {}) out of range for {} values", start + len, d.len());
        }
        let t = Tensor::vector(d[start..start + len].to_vec());
        let rg = self.rg(&[x]);
        self.push(t, Op::Slice(x, start), rg)
    }

    /// `v[C]` → `[C, T]` with each row constant.
    pub fn expand_channels(&mut self, v: Var, time: usize) -> Result<Var> {
        let d = self.data(v);
        let c = d.len();
        let mut y = Vec::with_capacity(c * time);
        for &val in d {
            y.extend(std::iter::repeat_n(val, time));
        }
        let rg = self.rg(&[v]);
        self.push(Tensor::new(vec![c, time], y)?, Op::ExpandChannels(v), rg)
    }

    /// `v[T]` → `[C, T]` with each row equal to `v`.
    pub fn expand_time(&mut self, v: Var, channels: usize) -> Result<Var> {
        let d = self.data(v);
        let t = d.len();
        let mut y = Vec::with_capacity(channels * t);
        for _ in 0..channels {
            y.extend_from_slice(d);
        }
        let rg = self.rg(&[v]);
        self.push(Tensor::new(vec![channels, t], y)?, Op::ExpandTime(v), rg)
    }

    /// Reverse pass from a scalar root with seed gradient 1.
    pub fn backward(&self, root: Var) -> Result<Gradients> {
        if self.nodes[root.0].value.len() != 1 {
            bail!(Shape, "backward root must be scalar, got shape {:?}", self.shape(root));
        }
        self.backward_seeded(root, vec![1.0])
    }

    /// Reverse pass from `root` seeded with an arbitrary cotangent.
    pub fn backward_seeded(&self, root: Var, seed: Vec<f64>) -> Result<Gradients> {
        if seed.len() != self.nodes[root.0].value.len() {
            bail!(Shape, "seed length {} does not match root", seed.len());
        }
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; root.0 + 1];
        grads[root.0] = Some(seed);
        for i in (0..=root.0).rev() {
            let node = &self.nodes[i];
            if !node.requires_grad {
                continue;
            }
            let g = match grads[i].take() {
                Some(g) => g,
                None => continue,
            };
            self.propagate(i, &g, &mut grads);
            if let Some(idx) = g.iter().position(|v| !v.is_finite()) {
                bail!(NonFinite, "gradient entry {idx} of node {i} is not finite");
            }
            if matches!(node.op, Op::Leaf) {
                grads[i] = Some(g);
            }
        }
        Ok(Gradients { grads })
    }

    fn wants(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// Gradient of a (possibly scalar-broadcast) binary operand.
    fn reduce_to(&self, v: Var, full: Vec<f64>) -> Vec<f64> {
        if self.nodes[v.0].value.len() == 1 && full.len() != 1 {
            vec![full.iter().sum()]
        } else {
            full
        }
    }

    fn operand(&self, v: Var, i: usize) -> f64 {
        let d = self.data(v);
        if d.len() == 1 {
            d[0]
        } else {
            d[i]
        }
    }

    fn propagate(&self, i: usize, g: &[f64], grads: &mut [Option<Vec<f64>>]) {
        let out = self.nodes[i].value.data();
        match &self.nodes[i].op {
            Op::Leaf => {}
            Op::Add(a, b) | Op::Sub(a, b) => {
                let sign = if matches!(self.nodes[i].op, Op::Sub(..)) { -1.0 } else { 1.0 };
                if self.wants(*a) {
                    let ga = self.reduce_to(*a, g.to_vec());
                    accumulate_owned(&mut grads[a.0], ga);
                }
                if self.wants(*b) {
                    let gb = self.reduce_to(*b, g.iter().map(|v| sign * v).collect());
                    accumulate_owned(&mut grads[b.0], gb);
                }
            }
            Op::Mul(a, b) => {
                if self.wants(*a) {
                    let ga = (0..g.len()).map(|k| g[k] * self.operand(*b, k)).collect();
                    let ga = self.reduce_to(*a, ga);
                    accumulate_owned(&mut grads[a.0], ga);
                }
                if self.wants(*b) {
                    let gb = (0..g.len()).map(|k| g[k] * self.operand(*a, k)).collect();
                    let gb = self.reduce_to(*b, gb);
                    accumulate_owned(&mut grads[b.0], gb);
                }
            }
            Op::Div(a, b) => {
                if self.wants(*a) {
                    let ga = (0..g.len()).map(|k| g[k] / floored(self.operand(*b, k))).collect();
                    let ga = self.reduce_to(*a, ga);
                    accumulate_owned(&mut grads[a.0], ga);
                }
                if self.wants(*b) {
                    let gb = (0..g.len())
                        .map(|k| {
                            let d = self.operand(*b, k);
                            if d.abs() < EPS_FLOOR {
                                0.0
                            } else {
                                -g[k] * self.operand(*a, k) / (d * d)
                            }
                        })
                        .collect();
                    let gb = self.reduce_to(*b, gb);
                    accumulate_owned(&mut grads[b.0], gb);
                }
            }
            Op::Neg(a) => {
                accumulate_owned(&mut grads[a.0], g.iter().map(|v| -v).collect());
            }
            Op::Scale(a, c) => {
                accumulate_owned(&mut grads[a.0], g.iter().map(|v| c * v).collect());
            }
            Op::AddScalar(a) | Op::Reshape(a) => accumulate(&mut grads[a.0], g),
            Op::Sum(a) => {
                let n = self.data(*a).len();
                accumulate_owned(&mut grads[a.0], vec![g[0]; n]);
            }
            Op::Mean(a) => {
                let n = self.data(*a).len();
                accumulate_owned(&mut grads[a.0], vec![g[0] / n as f64; n]);
            }
            Op::Sqrt(a) => {
                let x = self.data(*a);
                let d = (0..g.len()).map(|k| if x[k] < EPS_FLOOR { 0.0 } else { g[k] * 0.5 / out[k] }).collect();
                accumulate_owned(&mut grads[a.0], d);
            }
            Op::Log(a) => {
                let x = self.data(*a);
                let d = (0..g.len()).map(|k| if x[k] < EPS_FLOOR { 0.0 } else { g[k] / x[k] }).collect();
                accumulate_owned(&mut grads[a.0], d);
            }
            Op::Exp(a) => {
                accumulate_owned(&mut grads[a.0], g.iter().zip(out).map(|(g, y)| g * y).collect());
            }
            Op::Sigmoid(a) => {
                let d = g.iter().zip(out).map(|(g, y)| g * y * (1.0 - y)).collect();
                accumulate_owned(&mut grads[a.0], d);
            }
            Op::Sin(a) => {
                let x = self.data(*a);
                accumulate_owned(&mut grads[a.0], g.iter().zip(x).map(|(g, x)| g * x.cos()).collect());
            }
            Op::Cos(a) => {
                let x = self.data(*a);
                accumulate_owned(&mut grads[a.0], g.iter().zip(x).map(|(g, x)| -g * x.sin()).collect());
            }
            Op::Abs(a) => {
                let x = self.data(*a);
                let d = g
                    .iter()
                    .zip(x)
                    .map(|(g, x)| {
                        if *x > 0.0 {
                            *g
                        } else if *x < 0.0 {
                            -g
                        } else {
                            0.0
                        }
                    })
                    .collect();
                accumulate_owned(&mut grads[a.0], d);
            }
            Op::Square(a) => {
                let x = self.data(*a);
                accumulate_owned(&mut grads[a.0], g.iter().zip(x).map(|(g, x)| 2.0 * g * x).collect());
            }
            Op::LeakyRelu(a, slope) => {
                let x = self.data(*a);
                let d = g.iter().zip(x).map(|(g, x)| if *x >= 0.0 { *g } else { slope * g }).collect();
                accumulate_owned(&mut grads[a.0], d);
            }
            Op::Affine { x, w, b } => {
                let (o, n) = (self.shape(*w)[0], self.shape(*w)[1]);
                let (xd, wd) = (self.data(*x), self.data(*w));
                if self.wants(*x) {
                    let mut gx = vec![0.0; n];
                    for r in 0..o {
                        let row = &wd[r * n..(r + 1) * n];
                        gx.iter_mut().zip(row).for_each(|(a, w)| *a += g[r] * w);
                    }
                    accumulate_owned(&mut grads[x.0], gx);
                }
                if self.wants(*w) {
                    let mut gw = vec![0.0; o * n];
                    for r in 0..o {
                        gw[r * n..(r + 1) * n].iter_mut().zip(xd).for_each(|(a, x)| *a = g[r] * x);
                    }
                    accumulate_owned(&mut grads[w.0], gw);
                }
                if let Some(b) = b {
                    if self.wants(*b) {
                        accumulate(&mut grads[b.0], g);
                    }
                }
            }
            Op::CausalConv { x, w, b } => {
                let (ci, t) = (self.shape(*x)[0], self.shape(*x)[1]);
                let (co, k) = (self.shape(*w)[0], self.shape(*w)[2]);
                let (xd, wd) = (self.data(*x), self.data(*w));
                let col = if k == 1 { None } else { Some(im2col(xd, ci, t, k)) };
                if self.wants(*w) {
                    let colref: &[f64] = col.as_deref().unwrap_or(xd);
                    let mut gw = vec![0.0; co * ci * k];
                    // gW[co, ci*k] = g[co, t] · colᵀ[t, ci*k]
                    gemm(co, t, ci * k, g, t, 1, colref, 1, t, 0.0, &mut gw, ci * k, 1);
                    accumulate_owned(&mut grads[w.0], gw);
                }
                if self.wants(*x) {
                    // gcol[ci*k, t] = Wᵀ[ci*k, co] · g[co, t]
                    let mut gcol = vec![0.0; ci * k * t];
                    gemm(ci * k, co, t, wd, 1, ci * k, g, t, 1, 0.0, &mut gcol, t, 1);
                    if k == 1 {
                        accumulate_owned(&mut grads[x.0], gcol);
                    } else {
                        let mut gx = vec![0.0; ci * t];
                        col2im(&gcol, ci, t, k, &mut gx);
                        accumulate_owned(&mut grads[x.0], gx);
                    }
                }
                if let Some(b) = b {
                    if self.wants(*b) {
                        let gb = (0..co).map(|o| g[o * t..(o + 1) * t].iter().sum()).collect();
                        accumulate_owned(&mut grads[b.0], gb);
                    }
                }
            }
            Op::Upsample2(a) => {
                let (c, t) = (self.shape(*a)[0], self.shape(*a)[1]);
                let mut gx = vec![0.0; c * t];
                for ch in 0..c {
                    let gs = &g[ch * 2 * t..(ch + 1) * 2 * t];
                    let dst = &mut gx[ch * t..(ch + 1) * t];
                    for i in 0..t {
                        dst[i] += 0.5 * gs[2 * i] + gs[2 * i + 1];
                        if i + 1 < t {
                            dst[i] += 0.5 * gs[2 * i + 2];
                        }
                    }
                }
                accumulate_owned(&mut grads[a.0], gx);
            }
            Op::Downsample2(a) => {
                let (c, t) = (self.shape(*a)[0], self.shape(*a)[1]);
                let h = t / 2;
                let mut gx = vec![0.0; c * t];
                for ch in 0..c {
                    for i in 0..h {
                        let v = 0.5 * g[ch * h + i];
                        gx[ch * t + 2 * i] = v;
                        gx[ch * t + 2 * i + 1] = v;
                    }
                }
                accumulate_owned(&mut grads[a.0], gx);
            }
            Op::DftPower(a) => {
                // dP_k/dx = 2 Re(conj(X_k)·∂X_k/∂x), i.e. Aᵀ(2 g ⊙ X)
                let xd = self.data(*a);
                let mut spectrum = one_sided_dft(xd);
                spectrum.iter_mut().zip(g).for_each(|(c, gk)| *c *= 2.0 * gk);
                accumulate_owned(&mut grads[a.0], one_sided_dft_adjoint(&spectrum, xd.len()));
            }
            Op::Concat(parts) => {
                let mut off = 0;
                for p in parts {
                    let n = self.data(*p).len();
                    if self.wants(*p) {
                        accumulate(&mut grads[p.0], &g[off..off + n]);
                    }
                    off += n;
                }
            }
            Op::Slice(a, start) => {
                let mut gx = vec![0.0; self.data(*a).len()];
                gx[*start..*start + g.len()].copy_from_slice(g);
                accumulate_owned(&mut grads[a.0], gx);
            }
            Op::ExpandChannels(v) => {
                let c = self.data(*v).len();
                let t = g.len() / c.max(1);
                let gv = (0..c).map(|ch| g[ch * t..(ch + 1) * t].iter().sum()).collect();
                accumulate_owned(&mut grads[v.0], gv);
            }
            Op::ExpandTime(v) => {
                let t = self.data(*v).len();
                let mut gv = vec![0.0; t];
                for row in g.chunks(t) {
                    gv.iter_mut().zip(row).for_each(|(a, b)| *a += b);
                }
                accumulate_owned(&mut grads[v.0], gv);
            }
        }
    }
}

fn op_name(op: &Op) -> &'static str {
    match op {
        Op::Leaf => "leaf",
        Op::Add(..) => "add",
        Op::Sub(..) => "sub",
        Op::Mul(..) => "mul",
        Op::Div(..) => "div",
        Op::Neg(..) => "neg",
        Op::Scale(..) => "scale",
        Op::AddScalar(..) => "add_scalar",
        Op::Sum(..) => "sum",
        Op::Mean(..) => "mean",
        Op::Sqrt(..) => "sqrt",
        Op::Log(..) => "log",
        Op::Exp(..) => "exp",
        Op::Sigmoid(..) => "sigmoid",
        Op::Sin(..) => "sin",
        Op::Cos(..) => "cos",
        Op::Abs(..) => "abs",
        Op::Square(..) => "square",
        Op::LeakyRelu(..) => "leaky_relu",
        Op::Affine { .. } => "affine",
        Op::CausalConv { .. } => "causal_conv1d",
        Op::Upsample2(..) => "avg_upsample2x",
        Op::Downsample2(..) => "avg_downsample2x",
        Op::DftPower(..) => "real_dft_power",
        Op::Reshape(..) => "reshape",
        Op::Concat(..) => "concat",
        Op::Slice(..) => "slice",
        Op::ExpandChannels(..) => "expand_channels",
        Op::ExpandTime(..) => "expand_time",
    }
}
