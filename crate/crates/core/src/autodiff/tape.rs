//! Reverse-mode tape. Every value on the tape is a matrix; vectors are `1 × n`
//! rows and scalars are `1 × 1`.

use crate::geometry::{NnIndex, Vec3};

use super::{AutodiffError, ParamId, ParamStore, Tensor};

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

enum Op {
    Leaf,
    Param(ParamId),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    AddRowBias(Var, Var),
    MulRow(Var, Var),
    MatMul(Var, Var),
    ConcatCols(Vec<Var>),
    ConcatRows(Vec<Var>),
    SliceCols(Var, usize),
    SliceRows(Var, usize),
    Sum(Var),
    MeanRows(Var),
    MaxPoolRows(Var, Vec<usize>),
    RepeatRows(Var),
    /// elementwise map; stores the local derivative
    Pointwise(Var, Vec<f64>),
    Im2Col(Var),
    LayerNorm(Var, Vec<f64>),
    NormalizeRows(Var, Vec<f64>),
    QuatMul(Var, Var),
    QuatRotate(Var, Var),
    /// scalar output with precomputed gradients for each input
    ScalarFn(Vec<(Var, Vec<f64>)>),
}

struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

/// Records operations for one forward pass and replays them backwards.
pub struct Tape<'p> {
    store: Option<&'p ParamStore>,
    nodes: Vec<Node>,
    param_nodes: Vec<Option<Var>>,
}

/// Gradients of a scalar with respect to tape nodes and parameters.
pub struct Gradients {
    vars: Vec<Option<Vec<f64>>>,
    params: Vec<Option<Vec<f64>>>,
}

impl Gradients {
    pub fn wrt(&self, v: Var) -> Option<&[f64]> {
        self.vars.get(v.0).and_then(|g| g.as_deref())
    }

    pub fn param(&self, id: ParamId) -> Option<&[f64]> {
        self.params.get(id.index()).and_then(|g| g.as_deref())
    }

    /// Per-parameter gradients indexed like the store; `None` for parameters
    /// the loss does not touch.
    pub fn into_param_grads(self) -> Vec<Option<Vec<f64>>> {
        self.params
    }
}

fn shape_err(op: &'static str, shapes: &[&Tensor]) -> AutodiffError {
    AutodiffError::Shape { op, shapes: shapes.iter().map(|t| t.shape().to_vec()).collect() }
}

fn mat(rows: usize, cols: usize, data: Vec<f64>) -> Tensor {
    Tensor::new(vec![rows, cols], data).expect("op produced inconsistent shape")
}

/// `c (+)= a · b` for row-major operands with arbitrary strides.
#[allow(clippy::too_many_arguments)]
fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f64],
    (rsa, csa): (isize, isize),
    b: &[f64],
    (rsb, csb): (isize, isize),
    beta: f64,
    c: &mut [f64],
) {
    if m == 0 || n == 0 {
        return;
    }
    debug_assert!(c.len() >= m * n);
    // SAFETY: strides and extents describe regions inside `a`, `b` and `c`,
    // which the callers size as m×k, k×n and m×n.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            rsa,
            csa,
            b.as_ptr(),
            rsb,
            csb,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

/// Rotates `v` by `q` with the polynomial form valid for unit `q`.
pub(crate) fn rotate_raw(q: [f64; 4], v: [f64; 3]) -> [f64; 3] {
    let [w, x, y, z] = q;
    let u = Vec3::new(x, y, z);
    let v = Vec3::from_array(v);
    let uv = u.cross(v);
    (v + uv * (2.0 * w) + u.cross(uv) * 2.0).to_array()
}

/// Vector-Jacobian product of [`rotate_raw`].
pub(crate) fn rotate_vjp(q: [f64; 4], v: [f64; 3], g: [f64; 3]) -> ([f64; 4], [f64; 3]) {
    let w = q[0];
    let u = Vec3::new(q[1], q[2], q[3]);
    let v = Vec3::from_array(v);
    let g = Vec3::from_array(g);
    let ug = u.cross(g);
    let gv = g - ug * (2.0 * w) + u.cross(ug) * 2.0;
    let gw = 2.0 * u.cross(v).dot(g);
    let gu = v.cross(g) * (2.0 * w) + (g * u.dot(v) + v * u.dot(g) - u * (2.0 * v.dot(g))) * 2.0;
    ([gw, gu.x, gu.y, gu.z], gv.to_array())
}

fn hamilton(a: &[f64], b: &[f64]) -> [f64; 4] {
    [
        a[0] * b[0] - a[1] * b[1] - a[2] * b[2] - a[3] * b[3],
        a[0] * b[1] + a[1] * b[0] + a[2] * b[3] - a[3] * b[2],
        a[0] * b[2] - a[1] * b[3] + a[2] * b[0] + a[3] * b[1],
        a[0] * b[3] + a[1] * b[2] - a[2] * b[1] + a[3] * b[0],
    ]
}

fn conj(a: &[f64]) -> [f64; 4] {
    [a[0], -a[1], -a[2], -a[3]]
}

fn grad_slot<'g>(nodes: &[Node], grads: &'g mut [Option<Vec<f64>>], v: Var) -> Option<&'g mut Vec<f64>> {
    if !nodes[v.0].requires_grad {
        return None;
    }
    let len = nodes[v.0].value.len();
    Some(grads[v.0].get_or_insert_with(|| vec![0.0; len]))
}

impl Default for Tape<'_> {
    fn default() -> Self {
        Tape::new()
    }
}

impl<'p> Tape<'p> {
    /// A tape without parameters.
    pub fn new() -> Tape<'p> {
        Tape { store: None, nodes: Vec::new(), param_nodes: Vec::new() }
    }

    pub fn with_params(store: &'p ParamStore) -> Tape<'p> {
        Tape { store: Some(store), nodes: Vec::new(), param_nodes: vec![None; store.len()] }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    /// Value of a `1 × 1` node.
    pub fn scalar(&self, v: Var) -> f64 {
        self.value(v).item()
    }

    fn push(&mut self, value: Tensor, op: Op, requires_grad: bool) -> Var {
        self.nodes.push(Node { value, op, requires_grad });
        Var(self.nodes.len() - 1)
    }

    fn rg(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    fn check_matrix(&self, op: &'static str, t: Tensor) -> Result<Tensor, AutodiffError> {
        if t.is_matrix() {
            Ok(t)
        } else {
            Err(shape_err(op, &[&t]))
        }
    }

    /// An input that receives a gradient.
    pub fn leaf(&mut self, t: Tensor) -> Result<Var, AutodiffError> {
        let t = self.check_matrix("leaf", t)?;
        Ok(self.push(t, Op::Leaf, true))
    }

    /// An input that is treated as a constant.
    pub fn constant(&mut self, t: Tensor) -> Result<Var, AutodiffError> {
        let t = self.check_matrix("constant", t)?;
        Ok(self.push(t, Op::Leaf, false))
    }

    /// The store's tensor for `id`; repeated calls return the same node.
    pub fn param(&mut self, id: ParamId) -> Var {
        if let Some(v) = self.param_nodes[id.index()] {
            return v;
        }
        let store = self.store.expect("tape has no parameter store");
        let v = self.push(store.get(id).clone(), Op::Param(id), true);
        self.param_nodes[id.index()] = Some(v);
        v
    }

    fn same_shape(&self, op: &'static str, a: Var, b: Var) -> Result<(), AutodiffError> {
        let (ta, tb) = (self.value(a), self.value(b));
        if ta.shape() != tb.shape() {
            return Err(shape_err(op, &[ta, tb]));
        }
        Ok(())
    }

    fn zip(&mut self, op: &'static str, a: Var, b: Var, f: impl Fn(f64, f64) -> f64) -> Result<Tensor, AutodiffError> {
        self.same_shape(op, a, b)?;
        let (ta, tb) = (self.value(a), self.value(b));
        let data = ta.data().iter().zip(tb.data()).map(|(&x, &y)| f(x, y)).collect();
        Tensor::new(ta.shape().to_vec(), data)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var, AutodiffError> {
        let t = self.zip("add", a, b, |x, y| x + y)?;
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(t, Op::Add(a, b), rg))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var, AutodiffError> {
        let t = self.zip("sub", a, b, |x, y| x - y)?;
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(t, Op::Sub(a, b), rg))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var, AutodiffError> {
        let t = self.zip("mul", a, b, |x, y| x * y)?;
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(t, Op::Mul(a, b), rg))
    }

    pub fn scale(&mut self, a: Var, s: f64) -> Var {
        let ta = self.value(a);
        let t = mat(ta.rows(), ta.cols(), ta.data().iter().map(|x| x * s).collect());
        let rg = self.rg(a);
        self.push(t, Op::Scale(a, s), rg)
    }

    pub fn add_scalar(&mut self, a: Var, s: f64) -> Var {
        self.pointwise(a, |x| (x + s, 1.0))
    }

    /// `a [r, c] + b [1, c]` broadcast over rows.
    pub fn add_row_bias(&mut self, a: Var, b: Var) -> Result<Var, AutodiffError> {
        let (ta, tb) = (self.value(a), self.value(b));
        if tb.rows() != 1 || tb.cols() != ta.cols() {
            return Err(shape_err("add_row_bias", &[ta, tb]));
        }
        let c = ta.cols();
        let data = ta.data().iter().enumerate().map(|(i, x)| x + tb.data()[i % c]).collect();
        let t = mat(ta.rows(), c, data);
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(t, Op::AddRowBias(a, b), rg))
    }

    /// `a [r, c] * b [1, c]` broadcast over rows.
    pub fn mul_row(&mut self, a: Var, b: Var) -> Result<Var, AutodiffError> {
        let (ta, tb) = (self.value(a), self.value(b));
        if tb.rows() != 1 || tb.cols() != ta.cols() {
            return Err(shape_err("mul_row", &[ta, tb]));
        }
        let c = ta.cols();
        let data = ta.data().iter().enumerate().map(|(i, x)| x * tb.data()[i % c]).collect();
        let t = mat(ta.rows(), c, data);
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(t, Op::MulRow(a, b), rg))
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var, AutodiffError> {
        let (ta, tb) = (self.value(a), self.value(b));
        if ta.cols() != tb.rows() {
            return Err(shape_err("matmul", &[ta, tb]));
        }
        let (m, k, n) = (ta.rows(), ta.cols(), tb.cols());
        let mut out = vec![0.0; m * n];
        gemm(m, k, n, ta.data(), (k as isize, 1), tb.data(), (n as isize, 1), 0.0, &mut out);
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(mat(m, n, out), Op::MatMul(a, b), rg))
    }

    /// Side-by-side concatenation of matrices with equal row counts.
    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var, AutodiffError> {
        let rows = self.value(parts[0]).rows();
        if parts.iter().any(|&p| self.value(p).rows() != rows) {
            let shapes: Vec<&Tensor> = parts.iter().map(|&p| self.value(p)).collect();
            return Err(shape_err("concat_cols", &shapes));
        }
        let cols: usize = parts.iter().map(|&p| self.value(p).cols()).sum();
        let mut data = Vec::with_capacity(rows * cols);
        for r in 0..rows {
            for &p in parts {
                data.extend_from_slice(self.value(p).row_slice(r));
            }
        }
        let rg = parts.iter().any(|&p| self.rg(p));
        Ok(self.push(mat(rows, cols, data), Op::ConcatCols(parts.to_vec()), rg))
    }

    /// Stacks matrices with equal column counts.
    pub fn concat_rows(&mut self, parts: &[Var]) -> Result<Var, AutodiffError> {
        let cols = self.value(parts[0]).cols();
        if parts.iter().any(|&p| self.value(p).cols() != cols) {
            let shapes: Vec<&Tensor> = parts.iter().map(|&p| self.value(p)).collect();
            return Err(shape_err("concat_rows", &shapes));
        }
        let mut data = Vec::new();
        for &p in parts {
            data.extend_from_slice(self.value(p).data());
        }
        let rows = data.len() / cols.max(1);
        let rg = parts.iter().any(|&p| self.rg(p));
        Ok(self.push(mat(rows, cols, data), Op::ConcatRows(parts.to_vec()), rg))
    }

    /// Columns `start..start + len`.
    pub fn slice_cols(&mut self, a: Var, start: usize, len: usize) -> Result<Var, AutodiffError> {
        let ta = self.value(a);
        if start + len > ta.cols() {
            return Err(shape_err("slice_cols", &[ta]));
        }
        let data = (0..ta.rows()).flat_map(|r| ta.row_slice(r)[start..start + len].to_vec()).collect();
        let t = mat(ta.rows(), len, data);
        let rg = self.rg(a);
        Ok(self.push(t, Op::SliceCols(a, start), rg))
    }

    /// Rows `start..start + len`.
    pub fn slice_rows(&mut self, a: Var, start: usize, len: usize) -> Result<Var, AutodiffError> {
        let ta = self.value(a);
        if start + len > ta.rows() {
            return Err(shape_err("slice_rows", &[ta]));
        }
        let c = ta.cols();
        let t = mat(len, c, ta.data()[start * c..(start + len) * c].to_vec());
        let rg = self.rg(a);
        Ok(self.push(t, Op::SliceRows(a, start), rg))
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let s = self.value(a).data().iter().sum();
        let rg = self.rg(a);
        self.push(Tensor::scalar(s), Op::Sum(a), rg)
    }

    pub fn mean(&mut self, a: Var) -> Var {
        let n = self.value(a).len() as f64;
        let s = self.sum(a);
        self.scale(s, 1.0 / n)
    }

    /// Column means, `[r, c] -> [1, c]`.
    pub fn mean_rows(&mut self, a: Var) -> Var {
        let ta = self.value(a);
        let (r, c) = (ta.rows(), ta.cols());
        let mut out = vec![0.0; c];
        for i in 0..r {
            for (o, x) in out.iter_mut().zip(ta.row_slice(i)) {
                *o += x;
            }
        }
        out.iter_mut().for_each(|o| *o /= r as f64);
        let rg = self.rg(a);
        self.push(mat(1, c, out), Op::MeanRows(a), rg)
    }

    /// Column maxima, `[r, c] -> [1, c]`; the gradient goes to the first
    /// maximal row.
    pub fn max_pool_rows(&mut self, a: Var) -> Var {
        let ta = self.value(a);
        let (r, c) = (ta.rows(), ta.cols());
        let mut arg = vec![0usize; c];
        let mut out = ta.row_slice(0).to_vec();
        for i in 1..r {
            for (j, &x) in ta.row_slice(i).iter().enumerate() {
                if x > out[j] {
                    out[j] = x;
                    arg[j] = i;
                }
            }
        }
        let rg = self.rg(a);
        self.push(mat(1, c, out), Op::MaxPoolRows(a, arg), rg)
    }

    /// `[1, c] -> [n, c]`.
    pub fn repeat_rows(&mut self, a: Var, n: usize) -> Result<Var, AutodiffError> {
        let ta = self.value(a);
        if ta.rows() != 1 {
            return Err(shape_err("repeat_rows", &[ta]));
        }
        let t = mat(n, ta.cols(), ta.data().repeat(n));
        let rg = self.rg(a);
        Ok(self.push(t, Op::RepeatRows(a), rg))
    }

    /// Applies `f`, which returns the value and its derivative.
    fn pointwise(&mut self, a: Var, f: impl Fn(f64) -> (f64, f64)) -> Var {
        let ta = self.value(a);
        let (vals, ders): (Vec<f64>, Vec<f64>) = ta.data().iter().map(|&x| f(x)).unzip();
        let t = mat(ta.rows(), ta.cols(), vals);
        let rg = self.rg(a);
        self.push(t, Op::Pointwise(a, ders), rg)
    }

    pub fn relu(&mut self, a: Var) -> Var {
        self.pointwise(a, |x| if x > 0.0 { (x, 1.0) } else { (0.0, 0.0) })
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        self.pointwise(a, |x| {
            let y = x.tanh();
            (y, 1.0 - y * y)
        })
    }

    /// `ln(1 + e^x)`, evaluated without overflow.
    pub fn softplus(&mut self, a: Var) -> Var {
        self.pointwise(a, |x| {
            let y = x.max(0.0) + (-x.abs()).exp().ln_1p();
            let s = if x >= 0.0 { 1.0 / (1.0 + (-x).exp()) } else { x.exp() / (1.0 + x.exp()) };
            (y, s)
        })
    }

    pub fn exp(&mut self, a: Var) -> Var {
        self.pointwise(a, |x| {
            let y = x.exp();
            (y, y)
        })
    }

    pub fn log(&mut self, a: Var) -> Var {
        self.pointwise(a, |x| (x.ln(), 1.0 / x))
    }

    pub fn sin(&mut self, a: Var) -> Var {
        self.pointwise(a, |x| (x.sin(), x.cos()))
    }

    pub fn cos(&mut self, a: Var) -> Var {
        self.pointwise(a, |x| (x.cos(), -x.sin()))
    }

    pub fn abs(&mut self, a: Var) -> Var {
        self.pointwise(a, |x| (x.abs(), if x > 0.0 { 1.0 } else if x < 0.0 { -1.0 } else { 0.0 }))
    }

    pub fn square(&mut self, a: Var) -> Var {
        self.pointwise(a, |x| (x * x, 2.0 * x))
    }

    /// Clamps into `[lo, hi]`; the gradient is zero outside.
    pub fn clamp(&mut self, a: Var, lo: f64, hi: f64) -> Var {
        self.pointwise(a, |x| if x < lo { (lo, 0.0) } else if x > hi { (hi, 0.0) } else { (x, 1.0) })
    }

    /// Stacks the previous, current and next row of a `[T, c]` sequence into
    /// `[T, 3c]`, zero-padded at both ends. Kernel-3 convolution is this
    /// followed by a matmul.
    pub fn im2col3(&mut self, a: Var) -> Var {
        let ta = self.value(a);
        let (t, c) = (ta.rows(), ta.cols());
        let mut data = vec![0.0; t * 3 * c];
        for r in 0..t {
            for k in 0..3 {
                let src = r as isize + k as isize - 1;
                if src >= 0 && (src as usize) < t {
                    let dst = r * 3 * c + k * c;
                    data[dst..dst + c].copy_from_slice(ta.row_slice(src as usize));
                }
            }
        }
        let rg = self.rg(a);
        self.push(mat(t, 3 * c, data), Op::Im2Col(a), rg)
    }

    /// Per-row standardization to zero mean and unit variance (eps 1e-5).
    pub fn layer_norm(&mut self, a: Var) -> Var {
        let ta = self.value(a);
        let (r, c) = (ta.rows(), ta.cols());
        let mut out = Vec::with_capacity(r * c);
        let mut inv = Vec::with_capacity(r);
        for i in 0..r {
            let row = ta.row_slice(i);
            let mean = row.iter().sum::<f64>() / c as f64;
            let var = row.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / c as f64;
            let s = 1.0 / (var + 1e-5).sqrt();
            out.extend(row.iter().map(|x| (x - mean) * s));
            inv.push(s);
        }
        let rg = self.rg(a);
        self.push(mat(r, c, out), Op::LayerNorm(a, inv), rg)
    }

    /// Scales every row to unit Euclidean length.
    pub fn normalize_rows(&mut self, a: Var) -> Result<Var, AutodiffError> {
        let ta = self.value(a);
        let (r, c) = (ta.rows(), ta.cols());
        let mut out = Vec::with_capacity(r * c);
        let mut norms = Vec::with_capacity(r);
        for i in 0..r {
            let row = ta.row_slice(i);
            let n = row.iter().map(|x| x * x).sum::<f64>().sqrt();
            if !(n > 1e-12) {
                return Err(AutodiffError::Degenerate("normalize_rows: zero-length row"));
            }
            out.extend(row.iter().map(|x| x / n));
            norms.push(n);
        }
        let rg = self.rg(a);
        Ok(self.push(mat(r, c, out), Op::NormalizeRows(a, norms), rg))
    }

    /// Row-wise Hamilton product of `[r, 4]` quaternions (w first).
    pub fn quat_mul(&mut self, a: Var, b: Var) -> Result<Var, AutodiffError> {
        self.same_shape("quat_mul", a, b)?;
        let (ta, tb) = (self.value(a), self.value(b));
        if ta.cols() != 4 {
            return Err(shape_err("quat_mul", &[ta, tb]));
        }
        let data = (0..ta.rows()).flat_map(|i| hamilton(ta.row_slice(i), tb.row_slice(i))).collect();
        let t = mat(ta.rows(), 4, data);
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(t, Op::QuatMul(a, b), rg))
    }

    /// Rotates each row of `v [r, 3]` by the matching row of `q [r, 4]`.
    pub fn quat_rotate(&mut self, q: Var, v: Var) -> Result<Var, AutodiffError> {
        let (tq, tv) = (self.value(q), self.value(v));
        if tq.cols() != 4 || tv.cols() != 3 || tq.rows() != tv.rows() {
            return Err(shape_err("quat_rotate", &[tq, tv]));
        }
        let data = (0..tq.rows())
            .flat_map(|i| {
                let qi = tq.row_slice(i);
                let vi = tv.row_slice(i);
                rotate_raw([qi[0], qi[1], qi[2], qi[3]], [vi[0], vi[1], vi[2]])
            })
            .collect();
        let t = mat(tq.rows(), 3, data);
        let rg = self.rg(q) || self.rg(v);
        Ok(self.push(t, Op::QuatRotate(q, v), rg))
    }

    /// One-sided Chamfer distance from `q · points + t` to the indexed cloud.
    ///
    /// `q` is a `[1, 4]` rotation and `t` a `[1, 3]` translation. Nearest
    /// neighbours are searched unless `frozen` supplies them (as original
    /// indices into the indexed cloud). Returns the loss node and the
    /// assignments that were used.
    pub fn rigid_chamfer(
        &mut self,
        q: Var,
        t: Var,
        points: &[Vec3],
        index: &NnIndex,
        frozen: Option<&[usize]>,
    ) -> Result<(Var, Vec<usize>), AutodiffError> {
        let (tq, tt) = (self.value(q), self.value(t));
        if tq.shape() != [1, 4] || tt.shape() != [1, 3] {
            return Err(shape_err("rigid_chamfer", &[tq, tt]));
        }
        if points.is_empty() || frozen.is_some_and(|f| f.len() != points.len()) {
            return Err(AutodiffError::Degenerate("rigid_chamfer: point and assignment counts differ"));
        }
        let qa = [tq.data()[0], tq.data()[1], tq.data()[2], tq.data()[3]];
        let ta = Vec3::new(tt.data()[0], tt.data()[1], tt.data()[2]);
        let inv_n = 1.0 / points.len() as f64;
        let mut total = 0.0;
        let mut gq = [0.0; 4];
        let mut gt = Vec3::ZERO;
        let mut used = Vec::with_capacity(points.len());
        for (i, p) in points.iter().enumerate() {
            let x = Vec3::from_array(rotate_raw(qa, p.to_array())) + ta;
            let id = match frozen {
                Some(f) => f[i],
                None => index.nearest_index(x).0,
            };
            used.push(id);
            let diff = x - index.point(id);
            let d = diff.norm();
            total += d;
            if d > 0.0 {
                let gx = diff * (inv_n / d);
                gt += gx;
                let (dq, _) = rotate_vjp(qa, p.to_array(), gx.to_array());
                for k in 0..4 {
                    gq[k] += dq[k];
                }
            }
        }
        let rg = self.rg(q) || self.rg(t);
        let v = self.push(
            Tensor::scalar(total * inv_n),
            Op::ScalarFn(vec![(q, gq.to_vec()), (t, gt.to_array().to_vec())]),
            rg,
        );
        Ok((v, used))
    }

    /// Backpropagates from a scalar node.
    pub fn backward(&self, loss: Var) -> Result<Gradients, AutodiffError> {
        let lt = self.value(loss);
        if lt.len() != 1 {
            return Err(AutodiffError::NotScalar(lt.shape().to_vec()));
        }
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; self.nodes.len()];
        grads[loss.0] = Some(vec![1.0]);
        let mut params = vec![None; self.store.map_or(0, ParamStore::len)];
        for i in (0..=loss.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            let node = &self.nodes[i];
            if !node.requires_grad {
                continue;
            }
            self.backprop_node(node, &g, &mut grads);
            if let Op::Param(id) = node.op {
                params[id.index()] = Some(g.clone());
            }
            grads[i] = Some(g);
        }
        Ok(Gradients { vars: grads, params })
    }

    fn backprop_node(&self, node: &Node, g: &[f64], grads: &mut [Option<Vec<f64>>]) {
        macro_rules! acc {
            ($v:expr) => {
                grad_slot(&self.nodes, grads, $v)
            };
        }
        match &node.op {
            Op::Leaf | Op::Param(_) => {}
            Op::Add(a, b) => {
                for (v, s) in [(*a, 1.0), (*b, 1.0)] {
                    if let Some(ga) = acc!(v) {
                        ga.iter_mut().zip(g).for_each(|(x, y)| *x += s * y);
                    }
                }
            }
            Op::Sub(a, b) => {
                for (v, s) in [(*a, 1.0), (*b, -1.0)] {
                    if let Some(ga) = acc!(v) {
                        ga.iter_mut().zip(g).for_each(|(x, y)| *x += s * y);
                    }
                }
            }
            Op::Mul(a, b) => {
                let (va, vb) = (self.value(*a).data(), self.value(*b).data());
                if let Some(ga) = acc!(*a) {
                    for i in 0..g.len() {
                        ga[i] += g[i] * vb[i];
                    }
                }
                if let Some(gb) = acc!(*b) {
                    for i in 0..g.len() {
                        gb[i] += g[i] * va[i];
                    }
                }
            }
            Op::Scale(a, s) => {
                if let Some(ga) = acc!(*a) {
                    ga.iter_mut().zip(g).for_each(|(x, y)| *x += s * y);
                }
            }
            Op::AddRowBias(a, b) => {
                let c = self.value(*b).cols();
                if let Some(ga) = acc!(*a) {
                    ga.iter_mut().zip(g).for_each(|(x, y)| *x += y);
                }
                if let Some(gb) = acc!(*b) {
                    for (i, y) in g.iter().enumerate() {
                        gb[i % c] += y;
                    }
                }
            }
            Op::MulRow(a, b) => {
                let (va, vb) = (self.value(*a).data(), self.value(*b).data());
                let c = vb.len();
                if let Some(ga) = acc!(*a) {
                    for i in 0..g.len() {
                        ga[i] += g[i] * vb[i % c];
                    }
                }
                if let Some(gb) = acc!(*b) {
                    for i in 0..g.len() {
                        gb[i % c] += g[i] * va[i];
                    }
                }
            }
            Op::MatMul(a, b) => {
                let (ta, tb) = (self.value(*a), self.value(*b));
                let (m, k, n) = (ta.rows(), ta.cols(), tb.cols());
                if let Some(ga) = acc!(*a) {
                    // dA = dC · Bᵀ
                    gemm(m, n, k, g, (n as isize, 1), tb.data(), (1, n as isize), 1.0, ga);
                }
                if let Some(gb) = acc!(*b) {
                    // dB = Aᵀ · dC
                    gemm(k, m, n, ta.data(), (1, k as isize), g, (n as isize, 1), 1.0, gb);
                }
            }
            Op::ConcatCols(parts) => {
                let total = node.value.cols();
                let mut offset = 0;
                for &p in parts {
                    let c = self.value(p).cols();
                    if let Some(gp) = acc!(p) {
                        for r in 0..node.value.rows() {
                            let src = &g[r * total + offset..r * total + offset + c];
                            gp[r * c..(r + 1) * c].iter_mut().zip(src).for_each(|(x, y)| *x += y);
                        }
                    }
                    offset += c;
                }
            }
            Op::ConcatRows(parts) => {
                let mut offset = 0;
                for &p in parts {
                    let n = self.value(p).len();
                    if let Some(gp) = acc!(p) {
                        gp.iter_mut().zip(&g[offset..offset + n]).for_each(|(x, y)| *x += y);
                    }
                    offset += n;
                }
            }
            Op::SliceCols(a, start) => {
                let ca = self.value(*a).cols();
                let c = node.value.cols();
                if let Some(ga) = acc!(*a) {
                    for r in 0..node.value.rows() {
                        let dst = &mut ga[r * ca + start..r * ca + start + c];
                        dst.iter_mut().zip(&g[r * c..(r + 1) * c]).for_each(|(x, y)| *x += y);
                    }
                }
            }
            Op::SliceRows(a, start) => {
                let c = node.value.cols();
                if let Some(ga) = acc!(*a) {
                    ga[start * c..start * c + g.len()].iter_mut().zip(g).for_each(|(x, y)| *x += y);
                }
            }
            Op::Sum(a) => {
                if let Some(ga) = acc!(*a) {
                    ga.iter_mut().for_each(|x| *x += g[0]);
                }
            }
            Op::MeanRows(a) => {
                let r = self.value(*a).rows();
                let c = g.len();
                if let Some(ga) = acc!(*a) {
                    for (i, x) in ga.iter_mut().enumerate() {
                        *x += g[i % c] / r as f64;
                    }
                }
            }
            Op::MaxPoolRows(a, arg) => {
                let c = g.len();
                if let Some(ga) = acc!(*a) {
                    for (j, &r) in arg.iter().enumerate() {
                        ga[r * c + j] += g[j];
                    }
                }
            }
            Op::RepeatRows(a) => {
                if let Some(ga) = acc!(*a) {
                    let c = ga.len();
                    for (i, y) in g.iter().enumerate() {
                        ga[i % c] += y;
                    }
                }
            }
            Op::Pointwise(a, ders) => {
                if let Some(ga) = acc!(*a) {
                    for i in 0..g.len() {
                        ga[i] += g[i] * ders[i];
                    }
                }
            }
            Op::Im2Col(a) => {
                let (t, c) = (self.value(*a).rows(), self.value(*a).cols());
                if let Some(ga) = acc!(*a) {
                    for r in 0..t {
                        for k in 0..3 {
                            let src = r as isize + k as isize - 1;
                            if src >= 0 && (src as usize) < t {
                                let s = src as usize;
                                let off = r * 3 * c + k * c;
                                for j in 0..c {
                                    ga[s * c + j] += g[off + j];
                                }
                            }
                        }
                    }
                }
            }
            Op::LayerNorm(a, inv) => {
                let c = node.value.cols();
                let y = node.value.data();
                if let Some(ga) = acc!(*a) {
                    for (r, s) in inv.iter().enumerate() {
                        let gr = &g[r * c..(r + 1) * c];
                        let yr = &y[r * c..(r + 1) * c];
                        let mg = gr.iter().sum::<f64>() / c as f64;
                        let mgy = gr.iter().zip(yr).map(|(a, b)| a * b).sum::<f64>() / c as f64;
                        for j in 0..c {
                            ga[r * c + j] += s * (gr[j] - mg - yr[j] * mgy);
                        }
                    }
                }
            }
            Op::NormalizeRows(a, norms) => {
                let c = node.value.cols();
                let y = node.value.data();
                if let Some(ga) = acc!(*a) {
                    for (r, n) in norms.iter().enumerate() {
                        let gr = &g[r * c..(r + 1) * c];
                        let yr = &y[r * c..(r + 1) * c];
                        let dot: f64 = gr.iter().zip(yr).map(|(a, b)| a * b).sum();
                        for j in 0..c {
                            ga[r * c + j] += (gr[j] - yr[j] * dot) / n;
                        }
                    }
                }
            }
            Op::QuatMul(a, b) => {
                let (ta, tb) = (self.value(*a), self.value(*b));
                if let Some(ga) = acc!(*a) {
                    for r in 0..ta.rows() {
                        let d = hamilton(&g[r * 4..r * 4 + 4], &conj(tb.row_slice(r)));
                        ga[r * 4..r * 4 + 4].iter_mut().zip(d).for_each(|(x, y)| *x += y);
                    }
                }
                if let Some(gb) = acc!(*b) {
                    for r in 0..ta.rows() {
                        let d = hamilton(&conj(ta.row_slice(r)), &g[r * 4..r * 4 + 4]);
                        gb[r * 4..r * 4 + 4].iter_mut().zip(d).for_each(|(x, y)| *x += y);
                    }
                }
            }
            Op::QuatRotate(q, v) => {
                let (tq, tv) = (self.value(*q), self.value(*v));
                let mut dq = vec![0.0; tq.len()];
                let mut dv = vec![0.0; tv.len()];
                for r in 0..tq.rows() {
                    let qi = tq.row_slice(r);
                    let vi = tv.row_slice(r);
                    let (a, b) = rotate_vjp(
                        [qi[0], qi[1], qi[2], qi[3]],
                        [vi[0], vi[1], vi[2]],
                        [g[r * 3], g[r * 3 + 1], g[r * 3 + 2]],
                    );
                    dq[r * 4..r * 4 + 4].copy_from_slice(&a);
                    dv[r * 3..r * 3 + 3].copy_from_slice(&b);
                }
                if let Some(gq) = acc!(*q) {
                    gq.iter_mut().zip(&dq).for_each(|(x, y)| *x += y);
                }
                if let Some(gv) = acc!(*v) {
                    gv.iter_mut().zip(&dv).for_each(|(x, y)| *x += y);
                }
            }
            Op::ScalarFn(inputs) => {
                for (v, local) in inputs {
                    if let Some(gv) = acc!(*v) {
                        gv.iter_mut().zip(local).for_each(|(x, y)| *x += g[0] * y);
                    }
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::super::gradcheck::check_inputs;
    use super::*;
    use crate::geometry::{PointCloud, UnitQuat};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn rand_tensor(rng: &mut ChaCha8Rng, r: usize, c: usize) -> Tensor {
        Tensor::new(vec![r, c], (0..r * c).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap()
    }

    /// Random values kept away from zero so kinks are not straddled.
    fn rand_away_from_zero(rng: &mut ChaCha8Rng, r: usize, c: usize) -> Tensor {
        let data = (0..r * c)
            .map(|_| {
                let m = rng.random_range(0.05..1.0);
                if rng.random_bool(0.5) { m } else { -m }
            })
            .collect();
        Tensor::new(vec![r, c], data).unwrap()
    }

    fn weighted_sum(tape: &mut Tape, v: Var, seed: u64) -> Result<Var, AutodiffError> {
        // a fixed random projection makes every output element matter
        let t = tape.value(v).clone();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let w = rand_tensor(&mut rng, t.rows(), t.cols());
        let w = tape.constant(w)?;
        let p = tape.mul(v, w)?;
        Ok(tape.sum(p))
    }

    type OpFn = fn(&mut Tape, &[Var]) -> Result<Var, AutodiffError>;

    fn check_op(name: &str, shapes: &[(usize, usize)], away: bool, f: OpFn) {
        let mut rng = ChaCha8Rng::seed_from_u64(name.len() as u64 * 7919);
        for trial in 0..10 {
            let inputs: Vec<Tensor> = shapes
                .iter()
                .map(|&(r, c)| if away { rand_away_from_zero(&mut rng, r, c) } else { rand_tensor(&mut rng, r, c) })
                .collect();
            let err = check_inputs(&inputs, 1e-4, |tape, vars| {
                let out = f(tape, vars)?;
                weighted_sum(tape, out, trial)
            })
            .unwrap();
            assert!(err < 1e-3, "{name} trial {trial}: relative error {err}");
        }
    }

    #[test]
    fn gradients_of_binary_ops() {
        check_op("add", &[(3, 4), (3, 4)], false, |t, v| t.add(v[0], v[1]));
        check_op("sub", &[(3, 4), (3, 4)], false, |t, v| t.sub(v[0], v[1]));
        check_op("mul", &[(3, 4), (3, 4)], false, |t, v| t.mul(v[0], v[1]));
        check_op("add_row_bias", &[(5, 3), (1, 3)], false, |t, v| t.add_row_bias(v[0], v[1]));
        check_op("mul_row", &[(5, 3), (1, 3)], false, |t, v| t.mul_row(v[0], v[1]));
        check_op("matmul", &[(4, 6), (6, 3)], false, |t, v| t.matmul(v[0], v[1]));
        check_op("concat_cols", &[(3, 2), (3, 4)], false, |t, v| t.concat_cols(&[v[0], v[1], v[0]]));
        check_op("concat_rows", &[(2, 3), (4, 3)], false, |t, v| t.concat_rows(&[v[1], v[0]]));
        check_op("quat_mul", &[(3, 4), (3, 4)], false, |t, v| t.quat_mul(v[0], v[1]));
        check_op("quat_rotate", &[(3, 4), (3, 3)], false, |t, v| t.quat_rotate(v[0], v[1]));
    }

    #[test]
    fn gradients_of_unary_ops() {
        check_op("scale", &[(3, 4)], false, |t, v| Ok(t.scale(v[0], -2.5)));
        check_op("add_scalar", &[(3, 4)], false, |t, v| Ok(t.add_scalar(v[0], 0.7)));
        check_op("slice_cols", &[(3, 6)], false, |t, v| t.slice_cols(v[0], 2, 3));
        check_op("slice_rows", &[(5, 2)], false, |t, v| t.slice_rows(v[0], 1, 3));
        check_op("sum", &[(3, 4)], false, |t, v| Ok(t.sum(v[0])));
        check_op("mean", &[(3, 4)], false, |t, v| Ok(t.mean(v[0])));
        check_op("mean_rows", &[(5, 3)], false, |t, v| Ok(t.mean_rows(v[0])));
        check_op("max_pool_rows", &[(6, 4)], false, |t, v| Ok(t.max_pool_rows(v[0])));
        check_op("repeat_rows", &[(1, 4)], false, |t, v| t.repeat_rows(v[0], 3));
        check_op("relu", &[(4, 5)], true, |t, v| Ok(t.relu(v[0])));
        check_op("tanh", &[(4, 5)], false, |t, v| Ok(t.tanh(v[0])));
        check_op("softplus", &[(4, 5)], false, |t, v| Ok(t.softplus(v[0])));
        check_op("exp", &[(4, 5)], false, |t, v| Ok(t.exp(v[0])));
        check_op("log", &[(4, 5)], false, |t, v| {
            let e = t.exp(v[0]);
            Ok(t.log(e))
        });
        check_op("log_direct", &[(4, 5)], true, |t, v| {
            let a = t.abs(v[0]);
            Ok(t.log(a))
        });
        check_op("sin", &[(4, 5)], false, |t, v| Ok(t.sin(v[0])));
        check_op("cos", &[(4, 5)], false, |t, v| Ok(t.cos(v[0])));
        check_op("abs", &[(4, 5)], true, |t, v| Ok(t.abs(v[0])));
        check_op("square", &[(4, 5)], false, |t, v| Ok(t.square(v[0])));
        check_op("clamp", &[(4, 5)], false, |t, v| {
            let s = t.scale(v[0], 3.0);
            Ok(t.clamp(s, -0.5, 0.4))
        });
        check_op("im2col3", &[(5, 3)], false, |t, v| Ok(t.im2col3(v[0])));
        check_op("layer_norm", &[(4, 6)], false, |t, v| Ok(t.layer_norm(v[0])));
        check_op("normalize_rows", &[(3, 4)], true, |t, v| t.normalize_rows(v[0]));
    }

    #[test]
    fn conv1d_gradient() {
        check_op("conv1d", &[(7, 3), (9, 4), (1, 4)], false, |t, v| {
            let cols = t.im2col3(v[0]);
            let y = t.matmul(cols, v[1])?;
            t.add_row_bias(y, v[2])
        });
    }

    #[test]
    fn rigid_chamfer_gradient_with_frozen_assignment() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let bg: Vec<Vec3> = (0..200).map(|_| Vec3::new(rng.random(), rng.random(), rng.random())).collect();
        let index = NnIndex::build(&PointCloud::new(bg).unwrap());
        let pts: Vec<Vec3> = (0..30).map(|_| Vec3::new(rng.random(), rng.random(), rng.random()) * 0.3).collect();
        for _ in 0..10 {
            let q = UnitQuat::new(rng.random(), rng.random(), rng.random(), rng.random());
            let qt = Tensor::row(q.to_array().to_vec());
            let tt = rand_tensor(&mut rng, 1, 3);
            let frozen = {
                let mut tape = Tape::new();
                let (a, b) = (tape.constant(qt.clone()).unwrap(), tape.constant(tt.clone()).unwrap());
                tape.rigid_chamfer(a, b, &pts, &index, None).unwrap().1
            };
            let err = check_inputs(&[qt, tt], 1e-4, |tape, v| {
                Ok(tape.rigid_chamfer(v[0], v[1], &pts, &index, Some(&frozen))?.0)
            })
            .unwrap();
            assert!(err < 1e-3, "rigid_chamfer: {err}");
        }
    }

    #[test]
    fn rigid_chamfer_matches_geometry_kernel() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let bg: Vec<Vec3> = (0..100).map(|_| Vec3::new(rng.random(), rng.random(), rng.random())).collect();
        let index = NnIndex::build(&PointCloud::new(bg).unwrap());
        let pts: Vec<Vec3> = (0..20).map(|_| Vec3::new(rng.random(), rng.random(), rng.random())).collect();
        let g = crate::geometry::RigidTransform::new(UnitQuat::new(0.3, 0.1, -0.5, 0.2), Vec3::new(0.1, 0.2, 0.0));
        let mut tape = Tape::new();
        let q = tape.constant(Tensor::row(g.rotation.to_array().to_vec())).unwrap();
        let t = tape.constant(Tensor::row(g.translation.to_array().to_vec())).unwrap();
        let (c, _) = tape.rigid_chamfer(q, t, &pts, &index, None).unwrap();
        let expected = crate::geometry::chamfer_transformed(&g, &pts, &index);
        assert!((tape.scalar(c) - expected).abs() < 1e-12);
    }

    #[test]
    fn rotate_raw_matches_unit_quat() {
        let q = UnitQuat::new(0.2, -0.7, 0.4, 0.1);
        let v = Vec3::new(0.3, -1.2, 2.0);
        let r = Vec3::from_array(rotate_raw(q.to_array(), v.to_array()));
        assert!(r.distance(q.rotate(v)) < 1e-12);
    }

    #[test]
    fn mean_of_constant() {
        let mut tape = Tape::new();
        let x = tape.leaf(Tensor::filled(vec![2, 5], 3.5)).unwrap();
        let m = tape.mean(x);
        assert_eq!(tape.scalar(m), 3.5);
        let g = tape.backward(m).unwrap();
        assert!(g.wrt(x).unwrap().iter().all(|&d| (d - 0.1).abs() < 1e-15));
    }

    #[test]
    fn identity_matmul() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let x = rand_tensor(&mut rng, 3, 4);
        let mut eye = Tensor::zeros(vec![3, 3]);
        for i in 0..3 {
            eye.data_mut()[i * 4] = 1.0;
        }
        let mut tape = Tape::new();
        let (a, b) = (tape.constant(eye).unwrap(), tape.constant(x.clone()).unwrap());
        let y = tape.matmul(a, b).unwrap();
        assert_eq!(tape.value(y), &x);
    }

    #[test]
    fn shape_errors_name_the_shapes() {
        let mut tape = Tape::new();
        let a = tape.constant(Tensor::zeros(vec![2, 3])).unwrap();
        let b = tape.constant(Tensor::zeros(vec![2, 3])).unwrap();
        let err = tape.matmul(a, b).unwrap_err().to_string();
        assert!(err.contains("matmul") && err.contains("[2, 3]"), "{err}");
        assert!(tape.add(a, b).is_ok());
        let c = tape.constant(Tensor::zeros(vec![3, 2])).unwrap();
        assert!(matches!(tape.add(a, c), Err(AutodiffError::Shape { op: "add", .. })));
    }

    #[test]
    fn gradient_is_linear_in_the_loss() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let x = rand_tensor(&mut rng, 3, 3);
        let run = |which: u8| -> Vec<f64> {
            let mut tape = Tape::new();
            let v = tape.leaf(x.clone()).unwrap();
            let a = {
                let s = tape.tanh(v);
                tape.sum(s)
            };
            let b = {
                let s = tape.square(v);
                let m = tape.matmul(s, v).unwrap();
                tape.mean(m)
            };
            let loss = match which {
                0 => a,
                1 => b,
                _ => tape.add(a, b).unwrap(),
            };
            tape.backward(loss).unwrap().wrt(v).unwrap().to_vec()
        };
        let (ga, gb, gab) = (run(0), run(1), run(2));
        for i in 0..9 {
            assert!((ga[i] + gb[i] - gab[i]).abs() < 1e-9);
        }
    }

    #[test]
    fn constants_receive_no_gradient() {
        let mut tape = Tape::new();
        let c = tape.constant(Tensor::scalar(2.0)).unwrap();
        let x = tape.leaf(Tensor::scalar(3.0)).unwrap();
        let y = tape.mul(c, x).unwrap();
        let g = tape.backward(y).unwrap();
        assert!(g.wrt(c).is_none());
        assert_eq!(g.wrt(x).unwrap(), &[2.0]);
    }
}
