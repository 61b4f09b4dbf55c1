//! Eager forward evaluation with a recorded operation tape for
//! reverse-mode gradients.
//!
//! A [`Tape`] borrows a [`ParameterStore`] read-only; parameters enter the
//! computation as leaf nodes. Values are computed eagerly as operations are
//! pushed, and [`Tape::gradient`] replays the tape backward to produce a
//! gradient for every learnable array. Nodes only reference earlier nodes,
//! so the recorded graph is acyclic by construction.

use super::store::{GradMap, ParameterStore};
use super::tensor::Tensor;
use crate::error::{Error, Result};

/// Handle to a tape node.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(usize);

/// Elementwise activation kinds.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    Elu,
    Softplus,
    Identity,
    Logistic,
}

/// Whether normalisation uses batch statistics (train) or frozen running
/// statistics (inference).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NormMode {
    Train,
    Inference,
}

/// Batch statistics computed by a train-mode normalisation, for the caller
/// to fold into the running statistics.
#[derive(Debug, Clone)]
pub struct BatchStats {
    pub mean: Vec<f64>,
    pub var: Vec<f64>,
}

/// Variance floor guarding the normalisation denominator.
pub const NORM_EPS: f64 = 1e-5;

#[derive(Debug)]
enum Op {
    Const,
    Param { store_idx: usize },
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Div(Var, Var),
    Neg(Var),
    AddConst(Var),
    MulConst(Var, f64),
    AddScalarVar { t: Var, s: Var },
    MulScalarVar { t: Var, s: Var },
    Ln(Var),
    Exp(Var),
    Sqrt(Var),
    Square(Var),
    Softplus(Var),
    Elu(Var),
    Logistic(Var),
    Sum(Var),
    RowSums(Var),
    Elem { input: Var, idx: usize },
    Row { input: Var, r: usize },
    SliceRows { input: Var, from: usize },
    SliceCols { input: Var, from: usize },
    ConcatCols(Var, Var),
    PermuteCols { input: Var, perm: Vec<usize> },
    PermuteAx0 { input: Var, perm: Vec<usize> },
    BroadcastRow { input: Var },
    Dense { input: Var, w: Var, b: Option<Var> },
    MaskedDense { input: Var, w: Var, b: Var, mask: Tensor },
    Conv1dOffcentre { input: Var, kernel: Var },
    Normalize {
        input: Var,
        gamma: Var,
        beta: Var,
        mean: Vec<f64>,
        inv_std: Vec<f64>,
    },
}

struct Node {
    value: Tensor,
    op: Op,
}

/// Recorded computation over a read-only parameter store.
pub struct Tape<'s> {
    store: &'s ParameterStore,
    nodes: Vec<Node>,
}

fn softplus(x: f64) -> f64 {
    if x > 30.0 {
        x
    } else if x < -30.0 {
        x.exp()
    } else {
        x.exp().ln_1p()
    }
}

fn logistic(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

fn elu(x: f64) -> f64 {
    if x >= 0.0 {
        x
    } else {
        x.exp() - 1.0
    }
}

impl<'s> Tape<'s> {
    pub fn new(store: &'s ParameterStore) -> Self {
        Tape {
            store,
            nodes: Vec::with_capacity(256),
        }
    }

    pub fn store(&self) -> &'s ParameterStore {
        self.store
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor, op: Op) -> Var {
        self.nodes.push(Node { value, op });
        Var(self.nodes.len() - 1)
    }

    // ── Leaves ──────────────────────────────────────────────────────

    pub fn constant(&mut self, t: Tensor) -> Var {
        self.push(t, Op::Const)
    }

    pub fn constant_scalar(&mut self, v: f64) -> Var {
        self.constant(Tensor::scalar(v))
    }

    /// Bind a named store entry as a leaf. Gradients flow to it if it is
    /// learnable.
    pub fn param(&mut self, name: &str) -> Result<Var> {
        let idx = self
            .store
            .index_of(name)
            .ok_or_else(|| Error::Config(format!("unknown parameter '{name}'")))?;
        Ok(self.push(self.store.value_at(idx).clone(), Op::Param { store_idx: idx }))
    }

    // ── Elementwise arithmetic ──────────────────────────────────────

    fn binary_same_shape(&self, a: Var, b: Var, what: &str) -> Result<()> {
        if self.value(a).shape() != self.value(b).shape() {
            return Err(Error::Shape(format!(
                "{what}: {:?} vs {:?}",
                self.value(a).shape(),
                self.value(b).shape()
            )));
        }
        Ok(())
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary_same_shape(a, b, "add")?;
        let data = self
            .value(a)
            .data()
            .iter()
            .zip(self.value(b).data())
            .map(|(x, y)| x + y)
            .collect();
        let t = Tensor::new_unchecked(self.value(a).shape().to_vec(), data);
        Ok(self.push(t, Op::Add(a, b)))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary_same_shape(a, b, "sub")?;
        let data = self
            .value(a)
            .data()
            .iter()
            .zip(self.value(b).data())
            .map(|(x, y)| x - y)
            .collect();
        let t = Tensor::new_unchecked(self.value(a).shape().to_vec(), data);
        Ok(self.push(t, Op::Sub(a, b)))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary_same_shape(a, b, "mul")?;
        let data = self
            .value(a)
            .data()
            .iter()
            .zip(self.value(b).data())
            .map(|(x, y)| x * y)
            .collect();
        let t = Tensor::new_unchecked(self.value(a).shape().to_vec(), data);
        Ok(self.push(t, Op::Mul(a, b)))
    }

    pub fn div(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary_same_shape(a, b, "div")?;
        let data = self
            .value(a)
            .data()
            .iter()
            .zip(self.value(b).data())
            .map(|(x, y)| x / y)
            .collect();
        let t = Tensor::new_unchecked(self.value(a).shape().to_vec(), data);
        Ok(self.push(t, Op::Div(a, b)))
    }

    pub fn neg(&mut self, a: Var) -> Var {
        let data = self.value(a).data().iter().map(|x| -x).collect();
        let t = Tensor::new_unchecked(self.value(a).shape().to_vec(), data);
        self.push(t, Op::Neg(a))
    }

    pub fn add_const(&mut self, a: Var, c: f64) -> Var {
        let data = self.value(a).data().iter().map(|x| x + c).collect();
        let t = Tensor::new_unchecked(self.value(a).shape().to_vec(), data);
        self.push(t, Op::AddConst(a))
    }

    pub fn mul_const(&mut self, a: Var, c: f64) -> Var {
        let data = self.value(a).data().iter().map(|x| x * c).collect();
        let t = Tensor::new_unchecked(self.value(a).shape().to_vec(), data);
        self.push(t, Op::MulConst(a, c))
    }

    fn expect_scalar(&self, s: Var, what: &str) -> Result<()> {
        if self.value(s).len() != 1 {
            return Err(Error::Shape(format!(
                "{what}: expected scalar, got shape {:?}",
                self.value(s).shape()
            )));
        }
        Ok(())
    }

    /// Broadcast-add a scalar variable to every element of a tensor.
    pub fn add_scalar(&mut self, t: Var, s: Var) -> Result<Var> {
        self.expect_scalar(s, "add_scalar")?;
        let sv = self.value(s).item();
        let data = self.value(t).data().iter().map(|x| x + sv).collect();
        let out = Tensor::new_unchecked(self.value(t).shape().to_vec(), data);
        Ok(self.push(out, Op::AddScalarVar { t, s }))
    }

    /// Broadcast-multiply every element of a tensor by a scalar variable.
    pub fn mul_scalar(&mut self, t: Var, s: Var) -> Result<Var> {
        self.expect_scalar(s, "mul_scalar")?;
        let sv = self.value(s).item();
        let data = self.value(t).data().iter().map(|x| x * sv).collect();
        let out = Tensor::new_unchecked(self.value(t).shape().to_vec(), data);
        Ok(self.push(out, Op::MulScalarVar { t, s }))
    }

    fn unary(&mut self, a: Var, f: impl Fn(f64) -> f64, op: Op) -> Var {
        let data = self.value(a).data().iter().map(|&x| f(x)).collect();
        let t = Tensor::new_unchecked(self.value(a).shape().to_vec(), data);
        self.push(t, op)
    }

    pub fn ln(&mut self, a: Var) -> Var {
        self.unary(a, f64::ln, Op::Ln(a))
    }

    pub fn exp(&mut self, a: Var) -> Var {
        self.unary(a, f64::exp, Op::Exp(a))
    }

    pub fn sqrt(&mut self, a: Var) -> Var {
        self.unary(a, f64::sqrt, Op::Sqrt(a))
    }

    pub fn square(&mut self, a: Var) -> Var {
        self.unary(a, |x| x * x, Op::Square(a))
    }

    /// Elementwise activation.
    pub fn activation(&mut self, a: Var, kind: Activation) -> Var {
        match kind {
            Activation::Identity => a,
            Activation::Softplus => self.unary(a, softplus, Op::Softplus(a)),
            Activation::Elu => self.unary(a, elu, Op::Elu(a)),
            Activation::Logistic => self.unary(a, logistic, Op::Logistic(a)),
        }
    }

    // ── Reductions, indexing, reshaping ─────────────────────────────

    /// Sum of all elements, as a scalar.
    pub fn sum(&mut self, a: Var) -> Var {
        let s = self.value(a).data().iter().sum();
        self.push(Tensor::scalar(s), Op::Sum(a))
    }

    /// Per-row sums of a matrix, as a vector.
    pub fn row_sums(&mut self, a: Var) -> Result<Var> {
        let t = self.value(a);
        if t.shape().len() != 2 {
            return Err(Error::Shape(format!(
                "row_sums needs a matrix, got {:?}",
                t.shape()
            )));
        }
        let (rows, cols) = (t.shape()[0], t.shape()[1]);
        let mut out = vec![0.0; rows];
        for r in 0..rows {
            out[r] = t.row(r).iter().sum();
        }
        let _ = cols;
        Ok(self.push(Tensor::vector(out), Op::RowSums(a)))
    }

    /// Extract element `idx` of a vector as a scalar.
    pub fn elem(&mut self, input: Var, idx: usize) -> Result<Var> {
        let t = self.value(input);
        if t.shape().len() != 1 || idx >= t.len() {
            return Err(Error::Shape(format!(
                "elem {idx} of shape {:?}",
                t.shape()
            )));
        }
        let v = t.data()[idx];
        Ok(self.push(Tensor::scalar(v), Op::Elem { input, idx }))
    }

    /// Extract row `r` of a matrix as a vector.
    pub fn row(&mut self, input: Var, r: usize) -> Result<Var> {
        let t = self.value(input);
        if t.shape().len() != 2 || r >= t.shape()[0] {
            return Err(Error::Shape(format!("row {r} of shape {:?}", t.shape())));
        }
        let v = t.row(r).to_vec();
        Ok(self.push(Tensor::vector(v), Op::Row { input, r }))
    }

    /// Slice `[from, to)` along the leading axis.
    pub fn slice_rows(&mut self, input: Var, from: usize, to: usize) -> Result<Var> {
        let t = self.value(input);
        let rows = t.rows();
        if from > to || to > rows {
            return Err(Error::Shape(format!(
                "slice_rows {from}..{to} of {rows} rows"
            )));
        }
        let w = t.row_len();
        let data = t.data()[from * w..to * w].to_vec();
        let mut shape = t.shape().to_vec();
        shape[0] = to - from;
        let out = Tensor::new_unchecked(shape, data);
        Ok(self.push(out, Op::SliceRows { input, from }))
    }

    /// Slice columns `[from, to)` of a matrix.
    pub fn slice_cols(&mut self, input: Var, from: usize, to: usize) -> Result<Var> {
        let t = self.value(input);
        if t.shape().len() != 2 {
            return Err(Error::Shape(format!(
                "slice_cols needs a matrix, got {:?}",
                t.shape()
            )));
        }
        let (rows, cols) = (t.shape()[0], t.shape()[1]);
        if from > to || to > cols {
            return Err(Error::Shape(format!(
                "slice_cols {from}..{to} of {cols} cols"
            )));
        }
        let mut data = Vec::with_capacity(rows * (to - from));
        for r in 0..rows {
            data.extend_from_slice(&t.row(r)[from..to]);
        }
        let out = Tensor::new_unchecked(vec![rows, to - from], data);
        Ok(self.push(out, Op::SliceCols { input, from }))
    }

    /// Concatenate two matrices along the column axis.
    pub fn concat_cols(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(b));
        if ta.shape().len() != 2 || tb.shape().len() != 2 || ta.shape()[0] != tb.shape()[0] {
            return Err(Error::Shape(format!(
                "concat_cols: {:?} vs {:?}",
                ta.shape(),
                tb.shape()
            )));
        }
        let rows = ta.shape()[0];
        let (ca, cb) = (ta.shape()[1], tb.shape()[1]);
        let mut data = Vec::with_capacity(rows * (ca + cb));
        for r in 0..rows {
            data.extend_from_slice(ta.row(r));
            data.extend_from_slice(tb.row(r));
        }
        let out = Tensor::new_unchecked(vec![rows, ca + cb], data);
        Ok(self.push(out, Op::ConcatCols(a, b)))
    }

    /// Permute matrix columns: output column `k` is input column `perm[k]`.
    pub fn permute_cols(&mut self, input: Var, perm: &[usize]) -> Result<Var> {
        let t = self.value(input);
        if t.shape().len() != 2 || t.shape()[1] != perm.len() {
            return Err(Error::Shape(format!(
                "permute_cols: perm len {} on shape {:?}",
                perm.len(),
                t.shape()
            )));
        }
        let (rows, cols) = (t.shape()[0], t.shape()[1]);
        let mut data = Vec::with_capacity(rows * cols);
        for r in 0..rows {
            let row = t.row(r);
            data.extend(perm.iter().map(|&p| row[p]));
        }
        let out = Tensor::new_unchecked(vec![rows, cols], data);
        Ok(self.push(
            out,
            Op::PermuteCols {
                input,
                perm: perm.to_vec(),
            },
        ))
    }

    /// Permute vector entries: output entry `k` is input entry `perm[k]`.
    pub fn permute(&mut self, input: Var, perm: &[usize]) -> Result<Var> {
        let t = self.value(input);
        if t.shape().len() != 1 || t.len() != perm.len() {
            return Err(Error::Shape(format!(
                "permute: perm len {} on shape {:?}",
                perm.len(),
                t.shape()
            )));
        }
        let data = perm.iter().map(|&p| t.data()[p]).collect();
        let out = Tensor::vector(data);
        Ok(self.push(
            out,
            Op::PermuteAx0 {
                input,
                perm: perm.to_vec(),
            },
        ))
    }

    /// Tile a vector into a matrix with `rows` identical rows.
    pub fn broadcast_row(&mut self, input: Var, rows: usize) -> Result<Var> {
        let t = self.value(input);
        if t.shape().len() != 1 {
            return Err(Error::Shape(format!(
                "broadcast_row needs a vector, got {:?}",
                t.shape()
            )));
        }
        let cols = t.len();
        let mut data = Vec::with_capacity(rows * cols);
        for _ in 0..rows {
            data.extend_from_slice(t.data());
        }
        let out = Tensor::new_unchecked(vec![rows, cols], data);
        Ok(self.push(out, Op::BroadcastRow { input }))
    }

    // ── Network layers ──────────────────────────────────────────────

    /// Affine map on the last axis: `out = input · w (+ b)`.
    ///
    /// Applied independently per leading index, which realises a length-1
    /// convolution when the input is a sequence tensor.
    pub fn dense(&mut self, input: Var, w: Var, b: Option<Var>) -> Result<Var> {
        let (ti, tw) = (self.value(input), self.value(w));
        if tw.shape().len() != 2 {
            return Err(Error::Shape(format!(
                "dense weights must be a matrix, got {:?}",
                tw.shape()
            )));
        }
        let (c_in, c_out) = (tw.shape()[0], tw.shape()[1]);
        let last = ti.shape().last().copied().unwrap_or(0);
        if last != c_in {
            return Err(Error::Shape(format!(
                "dense: input last axis {last} vs weights rows {c_in}"
            )));
        }
        if let Some(bv) = b {
            let tb = self.value(bv);
            if tb.shape() != [c_out] {
                return Err(Error::Shape(format!(
                    "dense bias shape {:?}, expected [{c_out}]",
                    tb.shape()
                )));
            }
        }
        let rows = ti.len() / c_in;
        let mut data = vec![0.0; rows * c_out];
        {
            let xs = ti.data();
            let ws = tw.data();
            for r in 0..rows {
                let xr = &xs[r * c_in..(r + 1) * c_in];
                let or = &mut data[r * c_out..(r + 1) * c_out];
                if let Some(bv) = b {
                    or.copy_from_slice(self.nodes[bv.0].value.data());
                }
                for (c, &x) in xr.iter().enumerate() {
                    let wr = &ws[c * c_out..(c + 1) * c_out];
                    for (o, wv) in or.iter_mut().zip(wr) {
                        *o += x * wv;
                    }
                }
            }
        }
        let mut shape = ti.shape().to_vec();
        if shape.is_empty() {
            shape.push(c_out);
        } else {
            *shape.last_mut().unwrap() = c_out;
        }
        let out = Tensor::new_unchecked(shape, data);
        Ok(self.push(out, Op::Dense { input, w, b }))
    }

    /// Dense layer on a vector with a binary connectivity mask on the
    /// weights. The effective weight matrix is `w ⊙ mask`.
    pub fn masked_dense(&mut self, input: Var, w: Var, b: Var, mask: &Tensor) -> Result<Var> {
        let (ti, tw, tb) = (self.value(input), self.value(w), self.value(b));
        if ti.shape().len() != 1 || tw.shape().len() != 2 {
            return Err(Error::Shape(format!(
                "masked_dense: input {:?}, weights {:?}",
                ti.shape(),
                tw.shape()
            )));
        }
        let (p, q) = (tw.shape()[0], tw.shape()[1]);
        if ti.len() != p || tb.shape() != [q] || mask.shape() != [p, q] {
            return Err(Error::Shape(format!(
                "masked_dense: input {}, weights {:?}, bias {:?}, mask {:?}",
                ti.len(),
                tw.shape(),
                tb.shape(),
                mask.shape()
            )));
        }
        if mask.data().iter().any(|&m| m != 0.0 && m != 1.0) {
            return Err(Error::Shape(
                "masked_dense: mask entries must be 0 or 1".into(),
            ));
        }
        let mut out = tb.data().to_vec();
        for (c, &x) in ti.data().iter().enumerate() {
            let wr = &tw.data()[c * q..(c + 1) * q];
            let mr = &mask.data()[c * q..(c + 1) * q];
            for o in 0..q {
                out[o] += x * wr[o] * mr[o];
            }
        }
        let t = Tensor::vector(out);
        Ok(self.push(
            t,
            Op::MaskedDense {
                input,
                w,
                b,
                mask: mask.clone(),
            },
        ))
    }

    /// Off-centre 1-d convolution over a sequence tensor.
    ///
    /// Output row `i` depends on input rows `i-ℓ .. i-1` only; rows before
    /// the start of the sequence are treated as `pad_value`. Kernel shape is
    /// `(ℓ, c_in, c_out)` where kernel index `k` acts on input row `i-1-k`.
    pub fn conv1d_offcentre(&mut self, input: Var, kernel: Var, pad_value: f64) -> Result<Var> {
        let (ti, tk) = (self.value(input), self.value(kernel));
        if ti.shape().len() != 2 || tk.shape().len() != 3 {
            return Err(Error::Shape(format!(
                "conv1d_offcentre: input {:?}, kernel {:?}",
                ti.shape(),
                tk.shape()
            )));
        }
        let (len, c_in) = (ti.shape()[0], ti.shape()[1]);
        let (ell, kc_in, c_out) = (tk.shape()[0], tk.shape()[1], tk.shape()[2]);
        if kc_in != c_in {
            return Err(Error::Shape(format!(
                "conv1d_offcentre: input has {c_in} channels, kernel expects {kc_in}"
            )));
        }
        if ell == 0 || len == 0 {
            return Err(Error::Shape(
                "conv1d_offcentre: kernel length and input length must be >= 1".into(),
            ));
        }
        let mut data = vec![0.0; len * c_out];
        {
            let xs = ti.data();
            let ks = tk.data();
            for i in 0..len {
                let or = &mut data[i * c_out..(i + 1) * c_out];
                for k in 0..ell {
                    let kr = &ks[k * c_in * c_out..(k + 1) * c_in * c_out];
                    let src = i as isize - 1 - k as isize;
                    if src >= 0 {
                        let xr = &xs[src as usize * c_in..(src as usize + 1) * c_in];
                        for (c, &x) in xr.iter().enumerate() {
                            let krow = &kr[c * c_out..(c + 1) * c_out];
                            for (o, kv) in or.iter_mut().zip(krow) {
                                *o += x * kv;
                            }
                        }
                    } else if pad_value != 0.0 {
                        for c in 0..c_in {
                            let krow = &kr[c * c_out..(c + 1) * c_out];
                            for (o, kv) in or.iter_mut().zip(krow) {
                                *o += pad_value * kv;
                            }
                        }
                    }
                }
            }
        }
        let out = Tensor::new_unchecked(vec![len, c_out], data);
        Ok(self.push(
            out,
            Op::Conv1dOffcentre { input, kernel },
        ))
    }

    /// Channel normalisation of a sequence tensor with learnable scale and
    /// offset.
    ///
    /// Train mode computes statistics over the rows of this call's input and
    /// returns them for an EMA update of the running statistics; inference
    /// mode uses the frozen running statistics. Either way the statistics
    /// are constants under differentiation.
    pub fn normalize(
        &mut self,
        input: Var,
        gamma: Var,
        beta: Var,
        running_mean: &Tensor,
        running_var: &Tensor,
        mode: NormMode,
    ) -> Result<(Var, Option<BatchStats>)> {
        let ti = self.value(input);
        if ti.shape().len() != 2 {
            return Err(Error::Shape(format!(
                "normalize needs a sequence tensor, got {:?}",
                ti.shape()
            )));
        }
        let (rows, cols) = (ti.shape()[0], ti.shape()[1]);
        for (name, t) in [
            ("gamma", self.value(gamma)),
            ("beta", self.value(beta)),
            ("running_mean", running_mean),
            ("running_var", running_var),
        ] {
            if t.shape() != [cols] {
                return Err(Error::Shape(format!(
                    "normalize: {name} shape {:?}, expected [{cols}]",
                    t.shape()
                )));
            }
        }
        let (mean, var, stats) = match mode {
            NormMode::Train => {
                let mut mean = vec![0.0; cols];
                let mut var = vec![0.0; cols];
                for r in 0..rows {
                    for (c, &x) in ti.row(r).iter().enumerate() {
                        mean[c] += x;
                    }
                }
                mean.iter_mut().for_each(|m| *m /= rows as f64);
                for r in 0..rows {
                    for (c, &x) in ti.row(r).iter().enumerate() {
                        let d = x - mean[c];
                        var[c] += d * d;
                    }
                }
                var.iter_mut().for_each(|v| *v /= rows as f64);
                let stats = BatchStats {
                    mean: mean.clone(),
                    var: var.clone(),
                };
                (mean, var, Some(stats))
            }
            NormMode::Inference => (
                running_mean.data().to_vec(),
                running_var.data().to_vec(),
                None,
            ),
        };
        let inv_std: Vec<f64> = var.iter().map(|v| 1.0 / v.max(NORM_EPS).sqrt()).collect();
        let g = self.value(gamma).data().to_vec();
        let b = self.value(beta).data().to_vec();
        let ti = self.value(input);
        let mut data = vec![0.0; rows * cols];
        for r in 0..rows {
            let xr = ti.row(r);
            let or = &mut data[r * cols..(r + 1) * cols];
            for c in 0..cols {
                or[c] = (xr[c] - mean[c]) * inv_std[c] * g[c] + b[c];
            }
        }
        let out = Tensor::new_unchecked(vec![rows, cols], data);
        let v = self.push(
            out,
            Op::Normalize {
                input,
                gamma,
                beta,
                mean,
                inv_std,
            },
        );
        Ok((v, stats))
    }

    // ── Reverse pass ────────────────────────────────────────────────

    /// Reverse-mode gradient of a scalar output with respect to every
    /// learnable array in the store. Learnables that did not influence the
    /// output receive zero.
    pub fn gradient(&self, output: Var) -> Result<GradMap> {
        if self.value(output).len() != 1 {
            return Err(Error::Shape(format!(
                "gradient needs a scalar output, got shape {:?}",
                self.value(output).shape()
            )));
        }
        let mut grads: Vec<Option<Tensor>> = vec![None; self.nodes.len()];
        grads[output.0] = Some(Tensor::scalar(1.0));
        let mut out = GradMap::zeros_like(self.store);

        for i in (0..=output.0).rev() {
            let g = match grads[i].take() {
                Some(g) => g,
                None => continue,
            };
            match &self.nodes[i].op {
                Op::Const => {}
                Op::Param { store_idx } => {
                    if self.store.is_learnable_at(*store_idx) {
                        let slot = out.entry_mut(*store_idx);
                        for (s, gv) in slot.data_mut().iter_mut().zip(g.data()) {
                            *s += gv;
                        }
                    }
                }
                Op::Add(a, b) => {
                    self.accum(&mut grads, *a, g.data(), |gv, _| gv);
                    self.accum(&mut grads, *b, g.data(), |gv, _| gv);
                }
                Op::Sub(a, b) => {
                    self.accum(&mut grads, *a, g.data(), |gv, _| gv);
                    self.accum(&mut grads, *b, g.data(), |gv, _| -gv);
                }
                Op::Mul(a, b) => {
                    let (av, bv) = (self.value(*a), self.value(*b));
                    self.accum_with(&mut grads, *a, g.data(), bv.data(), |gv, o| gv * o);
                    self.accum_with(&mut grads, *b, g.data(), av.data(), |gv, o| gv * o);
                }
                Op::Div(a, b) => {
                    let (av, bv) = (self.value(*a), self.value(*b));
                    self.accum_with(&mut grads, *a, g.data(), bv.data(), |gv, y| gv / y);
                    let base = self.ensure(&mut grads, *b);
                    for (((gb, gv), x), y) in base
                        .data_mut()
                        .iter_mut()
                        .zip(g.data())
                        .zip(av.data())
                        .zip(bv.data())
                    {
                        *gb += -gv * x / (y * y);
                    }
                }
                Op::Neg(a) => self.accum(&mut grads, *a, g.data(), |gv, _| -gv),
                Op::AddConst(a) => self.accum(&mut grads, *a, g.data(), |gv, _| gv),
                Op::MulConst(a, c) => {
                    let c = *c;
                    self.accum(&mut grads, *a, g.data(), move |gv, _| gv * c)
                }
                Op::AddScalarVar { t, s } => {
                    self.accum(&mut grads, *t, g.data(), |gv, _| gv);
                    let total: f64 = g.data().iter().sum();
                    self.accum_scalar(&mut grads, *s, total);
                }
                Op::MulScalarVar { t, s } => {
                    let sv = self.value(*s).item();
                    self.accum(&mut grads, *t, g.data(), move |gv, _| gv * sv);
                    let tv = self.value(*t);
                    let total: f64 = g.data().iter().zip(tv.data()).map(|(gv, x)| gv * x).sum();
                    self.accum_scalar(&mut grads, *s, total);
                }
                Op::Ln(a) => {
                    let av = self.value(*a);
                    self.accum_with(&mut grads, *a, g.data(), av.data(), |gv, x| gv / x);
                }
                Op::Exp(a) => {
                    let ov = &self.nodes[i].value;
                    self.accum_with(&mut grads, *a, g.data(), ov.data(), |gv, y| gv * y);
                }
                Op::Sqrt(a) => {
                    let ov = &self.nodes[i].value;
                    self.accum_with(&mut grads, *a, g.data(), ov.data(), |gv, y| gv / (2.0 * y));
                }
                Op::Square(a) => {
                    let av = self.value(*a);
                    self.accum_with(&mut grads, *a, g.data(), av.data(), |gv, x| 2.0 * x * gv);
                }
                Op::Softplus(a) => {
                    let av = self.value(*a);
                    self.accum_with(&mut grads, *a, g.data(), av.data(), |gv, x| {
                        gv * logistic(x)
                    });
                }
                Op::Elu(a) => {
                    let av = self.value(*a);
                    self.accum_with(&mut grads, *a, g.data(), av.data(), |gv, x| {
                        if x >= 0.0 {
                            gv
                        } else {
                            gv * x.exp()
                        }
                    });
                }
                Op::Logistic(a) => {
                    let ov = &self.nodes[i].value;
                    self.accum_with(&mut grads, *a, g.data(), ov.data(), |gv, y| {
                        gv * y * (1.0 - y)
                    });
                }
                Op::Sum(a) => {
                    let gv = g.item();
                    self.accum(&mut grads, *a, &vec![gv; self.value(*a).len()], |x, _| x);
                }
                Op::RowSums(a) => {
                    let av = self.value(*a);
                    let cols = av.shape()[1];
                    let base = self.ensure(&mut grads, *a);
                    for (r, gv) in g.data().iter().enumerate() {
                        for slot in &mut base.data_mut()[r * cols..(r + 1) * cols] {
                            *slot += gv;
                        }
                    }
                }
                Op::Elem { input, idx } => {
                    let base = self.ensure(&mut grads, *input);
                    base.data_mut()[*idx] += g.item();
                }
                Op::Row { input, r } => {
                    let w = self.value(*input).row_len();
                    let base = self.ensure(&mut grads, *input);
                    for (slot, gv) in base.data_mut()[r * w..(r + 1) * w]
                        .iter_mut()
                        .zip(g.data())
                    {
                        *slot += gv;
                    }
                }
                Op::SliceRows { input, from } => {
                    let w = self.value(*input).row_len();
                    let base = self.ensure(&mut grads, *input);
                    let off = from * w;
                    for (slot, gv) in base.data_mut()[off..off + g.len()]
                        .iter_mut()
                        .zip(g.data())
                    {
                        *slot += gv;
                    }
                }
                Op::SliceCols { input, from } => {
                    let cols = self.value(*input).shape()[1];
                    let gcols = g.shape()[1];
                    let base = self.ensure(&mut grads, *input);
                    for r in 0..g.shape()[0] {
                        let dst = &mut base.data_mut()[r * cols + from..r * cols + from + gcols];
                        for (slot, gv) in dst.iter_mut().zip(g.row(r)) {
                            *slot += gv;
                        }
                    }
                }
                Op::ConcatCols(a, b) => {
                    let ca = self.value(*a).shape()[1];
                    let cb = self.value(*b).shape()[1];
                    let rows = g.shape()[0];
                    {
                        let base = self.ensure(&mut grads, *a);
                        for r in 0..rows {
                            for (slot, gv) in base.data_mut()[r * ca..(r + 1) * ca]
                                .iter_mut()
                                .zip(&g.row(r)[..ca])
                            {
                                *slot += gv;
                            }
                        }
                    }
                    let base = self.ensure(&mut grads, *b);
                    for r in 0..rows {
                        for (slot, gv) in base.data_mut()[r * cb..(r + 1) * cb]
                            .iter_mut()
                            .zip(&g.row(r)[ca..])
                        {
                            *slot += gv;
                        }
                    }
                }
                Op::PermuteCols { input, perm } => {
                    let cols = perm.len();
                    let base = self.ensure(&mut grads, *input);
                    for r in 0..g.shape()[0] {
                        let grow = g.row(r);
                        let brow = &mut base.data_mut()[r * cols..(r + 1) * cols];
                        for (k, &p) in perm.iter().enumerate() {
                            brow[p] += grow[k];
                        }
                    }
                }
                Op::PermuteAx0 { input, perm } => {
                    let base = self.ensure(&mut grads, *input);
                    for (k, &p) in perm.iter().enumerate() {
                        base.data_mut()[p] += g.data()[k];
                    }
                }
                Op::BroadcastRow { input } => {
                    let cols = self.value(*input).len();
                    let base = self.ensure(&mut grads, *input);
                    for r in 0..g.shape()[0] {
                        for (slot, gv) in base.data_mut().iter_mut().zip(g.row(r)) {
                            *slot += gv;
                        }
                    }
                    let _ = cols;
                }
                Op::Dense { input, w, b } => {
                    let ti = self.value(*input);
                    let tw = self.value(*w);
                    let (c_in, c_out) = (tw.shape()[0], tw.shape()[1]);
                    let rows = ti.len() / c_in;
                    {
                        let base = self.ensure(&mut grads, *input);
                        let din = base.data_mut();
                        for r in 0..rows {
                            let gr = &g.data()[r * c_out..(r + 1) * c_out];
                            let dr = &mut din[r * c_in..(r + 1) * c_in];
                            for c in 0..c_in {
                                let wr = &tw.data()[c * c_out..(c + 1) * c_out];
                                let mut acc = 0.0;
                                for (gv, wv) in gr.iter().zip(wr) {
                                    acc += gv * wv;
                                }
                                dr[c] += acc;
                            }
                        }
                    }
                    {
                        let base = self.ensure(&mut grads, *w);
                        let dw = base.data_mut();
                        for r in 0..rows {
                            let xr = &ti.data()[r * c_in..(r + 1) * c_in];
                            let gr = &g.data()[r * c_out..(r + 1) * c_out];
                            for (c, &x) in xr.iter().enumerate() {
                                let dwr = &mut dw[c * c_out..(c + 1) * c_out];
                                for (slot, gv) in dwr.iter_mut().zip(gr) {
                                    *slot += x * gv;
                                }
                            }
                        }
                    }
                    if let Some(bv) = b {
                        let base = self.ensure(&mut grads, *bv);
                        let db = base.data_mut();
                        for r in 0..rows {
                            for (slot, gv) in db
                                .iter_mut()
                                .zip(&g.data()[r * c_out..(r + 1) * c_out])
                            {
                                *slot += gv;
                            }
                        }
                    }
                }
                Op::MaskedDense { input, w, b, mask } => {
                    let ti = self.value(*input);
                    let tw = self.value(*w);
                    let q = tw.shape()[1];
                    {
                        let base = self.ensure(&mut grads, *input);
                        for (c, slot) in base.data_mut().iter_mut().enumerate() {
                            let wr = &tw.data()[c * q..(c + 1) * q];
                            let mr = &mask.data()[c * q..(c + 1) * q];
                            let mut acc = 0.0;
                            for o in 0..q {
                                acc += g.data()[o] * wr[o] * mr[o];
                            }
                            *slot += acc;
                        }
                    }
                    {
                        let base = self.ensure(&mut grads, *w);
                        let dw = base.data_mut();
                        for (c, &x) in ti.data().iter().enumerate() {
                            let mr = &mask.data()[c * q..(c + 1) * q];
                            let dwr = &mut dw[c * q..(c + 1) * q];
                            for o in 0..q {
                                dwr[o] += x * g.data()[o] * mr[o];
                            }
                        }
                    }
                    let base = self.ensure(&mut grads, *b);
                    for (slot, gv) in base.data_mut().iter_mut().zip(g.data()) {
                        *slot += gv;
                    }
                }
                Op::Conv1dOffcentre { input, kernel, .. } => {
                    let ti = self.value(*input);
                    let tk = self.value(*kernel);
                    let (len, c_in) = (ti.shape()[0], ti.shape()[1]);
                    let (ell, c_out) = (tk.shape()[0], tk.shape()[2]);
                    {
                        let base = self.ensure(&mut grads, *input);
                        let din = base.data_mut();
                        for i in 0..len {
                            let gr = &g.data()[i * c_out..(i + 1) * c_out];
                            for k in 0..ell {
                                let src = i as isize - 1 - k as isize;
                                if src < 0 {
                                    continue;
                                }
                                let kr = &tk.data()[k * c_in * c_out..(k + 1) * c_in * c_out];
                                let dr =
                                    &mut din[src as usize * c_in..(src as usize + 1) * c_in];
                                for c in 0..c_in {
                                    let krow = &kr[c * c_out..(c + 1) * c_out];
                                    let mut acc = 0.0;
                                    for (gv, kv) in gr.iter().zip(krow) {
                                        acc += gv * kv;
                                    }
                                    dr[c] += acc;
                                }
                            }
                        }
                    }
                    {
                        let base = self.ensure(&mut grads, *kernel);
                        let dk = base.data_mut();
                        for i in 0..len {
                            let gr = &g.data()[i * c_out..(i + 1) * c_out];
                            for k in 0..ell {
                                let src = i as isize - 1 - k as isize;
                                if src < 0 {
                                    continue;
                                }
                                let xr =
                                    &ti.data()[src as usize * c_in..(src as usize + 1) * c_in];
                                let dkr = &mut dk[k * c_in * c_out..(k + 1) * c_in * c_out];
                                for (c, &x) in xr.iter().enumerate() {
                                    let dkrow = &mut dkr[c * c_out..(c + 1) * c_out];
                                    for (slot, gv) in dkrow.iter_mut().zip(gr) {
                                        *slot += x * gv;
                                    }
                                }
                            }
                        }
                    }
                }
                Op::Normalize {
                    input,
                    gamma,
                    beta,
                    mean,
                    inv_std,
                } => {
                    let ti = self.value(*input);
                    let gv = self.value(*gamma).data().to_vec();
                    let (rows, cols) = (ti.shape()[0], ti.shape()[1]);
                    {
                        let base = self.ensure(&mut grads, *input);
                        let din = base.data_mut();
                        for r in 0..rows {
                            let gr = &g.data()[r * cols..(r + 1) * cols];
                            let dr = &mut din[r * cols..(r + 1) * cols];
                            for c in 0..cols {
                                dr[c] += gr[c] * inv_std[c] * gv[c];
                            }
                        }
                    }
                    {
                        let base = self.ensure(&mut grads, *gamma);
                        let dg = base.data_mut();
                        for r in 0..rows {
                            let xr = ti.row(r);
                            let gr = &g.data()[r * cols..(r + 1) * cols];
                            for c in 0..cols {
                                dg[c] += gr[c] * (xr[c] - mean[c]) * inv_std[c];
                            }
                        }
                    }
                    let base = self.ensure(&mut grads, *beta);
                    let db = base.data_mut();
                    for r in 0..rows {
                        for (slot, gvv) in db.iter_mut().zip(&g.data()[r * cols..(r + 1) * cols])
                        {
                            *slot += gvv;
                        }
                    }
                }
            }
        }
        Ok(out)
    }

    fn ensure<'g>(&self, grads: &'g mut [Option<Tensor>], v: Var) -> &'g mut Tensor {
        if grads[v.0].is_none() {
            grads[v.0] = Some(Tensor::zeros(self.value(v).shape()));
        }
        grads[v.0].as_mut().unwrap()
    }

    fn accum_scalar(&self, grads: &mut [Option<Tensor>], v: Var, g: f64) {
        let base = self.ensure(grads, v);
        base.data_mut()[0] += g;
    }

    /// Accumulate `f(gout, unused)` elementwise into the gradient of `v`.
    fn accum(&self, grads: &mut [Option<Tensor>], v: Var, gout: &[f64], f: impl Fn(f64, f64) -> f64) {
        let base = self.ensure(grads, v);
        for (slot, &gv) in base.data_mut().iter_mut().zip(gout) {
            *slot += f(gv, 0.0);
        }
    }

    /// Accumulate `f(gout, other)` elementwise into the gradient of `v`.
    fn accum_with(
        &self,
        grads: &mut [Option<Tensor>],
        v: Var,
        gout: &[f64],
        other: &[f64],
        f: impl Fn(f64, f64) -> f64,
    ) {
        let base = self.ensure(grads, v);
        for ((slot, &gv), &ov) in base.data_mut().iter_mut().zip(gout).zip(other) {
            *slot += f(gv, ov);
        }
    }
}
