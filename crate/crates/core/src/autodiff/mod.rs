//! Define-by-run reverse-mode differentiation over [`Tensor`]s.
//!
//! A [`Tape`] is built fresh for every forward pass. Each op appends one node
//! holding its output value, so node order is a topological order. Two
//! reverse sweeps are available:
//!
//! * [`Tape::backward`] computes numeric gradients of a scalar.
//! * [`Tape::grad_graph`] records the reverse sweep as new tape nodes, so the
//!   resulting gradients can themselves be differentiated. LeakyReLU masks
//!   and max-pool argmax indices are frozen constants in that recording.

mod backward;
mod graph;

use std::sync::Arc;

pub use backward::Gradients;

use crate::error::{Error, Result};
use crate::tensor::{gemm, gemm_view, Tensor};

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(pub(crate) usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Debug)]
pub(crate) enum Op {
    Leaf,
    /// `x W + b`, bias broadcast over rows.
    Affine {
        x: Var,
        w: Var,
        b: Var,
    },
    /// Row `r` computes `[x_r, codes_{r / group}] W + b` without materialising
    /// the concatenation.
    AffineCoded {
        x: Var,
        codes: Var,
        group: usize,
        w: Var,
        b: Var,
    },
    MatMul {
        a: Var,
        b: Var,
        ta: bool,
        tb: bool,
    },
    /// Elementwise product with a constant factor (LeakyReLU or its frozen mask).
    MulConst {
        x: Var,
        factor: Arc<[f64]>,
        relu: bool,
    },
    Concat {
        a: Var,
        b: Var,
    },
    ConcatRows {
        parts: Vec<Var>,
    },
    SliceCols {
        x: Var,
        start: usize,
    },
    PadCols {
        x: Var,
        start: usize,
    },
    /// Column-wise pick of row `argmax[j]`: max-pool forward.
    GatherArgmax {
        x: Var,
        argmax: Arc<[usize]>,
    },
    /// Adjoint of [`Op::GatherArgmax`].
    ScatterArgmax {
        x: Var,
        argmax: Arc<[usize]>,
    },
    GatherRows {
        x: Var,
        idx: Arc<[usize]>,
    },
    SumAll {
        x: Var,
    },
    Expand {
        x: Var,
    },
    SumRows {
        x: Var,
    },
    BroadcastRows {
        x: Var,
    },
    SumCols {
        x: Var,
    },
    BroadcastCols {
        x: Var,
    },
    Add {
        a: Var,
        b: Var,
    },
    Sub {
        a: Var,
        b: Var,
    },
    Mul {
        a: Var,
        b: Var,
    },
    Scale {
        x: Var,
        c: f64,
    },
    AddScalar {
        x: Var,
    },
    Sqrt {
        x: Var,
    },
    Reshape {
        x: Var,
    },
}

impl Op {
    pub(crate) fn name(&self) -> &'static str {
        match self {
            Op::Leaf => "leaf",
            Op::Affine { .. } => "affine",
            Op::AffineCoded { .. } => "affine_coded",
            Op::MatMul { .. } => "matmul",
            Op::MulConst { relu: true, .. } => "leaky_relu",
            Op::MulConst { .. } => "mul_const",
            Op::Concat { .. } => "concat",
            Op::ConcatRows { .. } => "concat_rows",
            Op::SliceCols { .. } => "slice_cols",
            Op::PadCols { .. } => "pad_cols",
            Op::GatherArgmax { .. } => "max_pool",
            Op::ScatterArgmax { .. } => "scatter_argmax",
            Op::GatherRows { .. } => "gather_rows",
            Op::SumAll { .. } => "sum",
            Op::Expand { .. } => "expand",
            Op::SumRows { .. } => "sum_rows",
            Op::BroadcastRows { .. } => "broadcast_rows",
            Op::SumCols { .. } => "sum_cols",
            Op::BroadcastCols { .. } => "broadcast_cols",
            Op::Add { .. } => "add",
            Op::Sub { .. } => "sub",
            Op::Mul { .. } => "mul",
            Op::Scale { .. } => "scale",
            Op::AddScalar { .. } => "add_scalar",
            Op::Sqrt { .. } => "sqrt",
            Op::Reshape { .. } => "reshape",
        }
    }

    pub(crate) fn inputs(&self) -> Vec<Var> {
        match self {
            Op::Leaf => vec![],
            Op::Affine { x, w, b } => vec![*x, *w, *b],
            Op::AffineCoded { x, codes, w, b, .. } => vec![*x, *codes, *w, *b],
            Op::MatMul { a, b, .. }
            | Op::Concat { a, b }
            | Op::Add { a, b }
            | Op::Sub { a, b }
            | Op::Mul { a, b } => vec![*a, *b],
            Op::ConcatRows { parts } => parts.clone(),
            Op::MulConst { x, .. }
            | Op::SliceCols { x, .. }
            | Op::PadCols { x, .. }
            | Op::GatherArgmax { x, .. }
            | Op::ScatterArgmax { x, .. }
            | Op::GatherRows { x, .. }
            | Op::SumAll { x }
            | Op::Expand { x, .. }
            | Op::SumRows { x }
            | Op::BroadcastRows { x, .. }
            | Op::SumCols { x }
            | Op::BroadcastCols { x, .. }
            | Op::Scale { x, .. }
            | Op::AddScalar { x, .. }
            | Op::Sqrt { x }
            | Op::Reshape { x } => vec![*x],
        }
    }
}

pub(crate) struct Node {
    pub value: Tensor,
    pub op: Op,
    pub requires_grad: bool,
}

/// Record of one forward computation.
#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
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

    pub fn shape(&self, v: Var) -> [usize; 2] {
        self.nodes[v.0].value.shape()
    }

    #[cfg(test)]
    pub(crate) fn node(&self, v: Var) -> &Node {
        &self.nodes[v.0]
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    fn push(&mut self, value: Tensor, op: Op) -> Var {
        let requires_grad = op.inputs().iter().any(|v| self.nodes[v.0].requires_grad);
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn leaf(&mut self, value: Tensor, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op: Op::Leaf,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    /// A trainable leaf.
    pub fn param(&mut self, value: Tensor) -> Var {
        self.leaf(value, true)
    }

    pub fn constant(&mut self, value: Tensor) -> Var {
        self.leaf(value, false)
    }

    fn dims(&self, v: Var) -> (usize, usize) {
        let t = &self.nodes[v.0].value;
        (t.rows(), t.cols())
    }

    fn same_shape(&self, op: &'static str, a: Var, b: Var) -> Result<()> {
        let (ra, ca) = self.dims(a);
        let (rb, cb) = self.dims(b);
        if (ra, ca) != (rb, cb) {
            return Err(Error::dim(
                op,
                format!("left is {ra}x{ca}, right is {rb}x{cb}"),
            ));
        }
        Ok(())
    }

    pub fn affine(&mut self, x: Var, w: Var, b: Var) -> Result<Var> {
        let (n, fin) = self.dims(x);
        let (wr, fout) = self.dims(w);
        let (br, bc) = self.dims(b);
        if fin != wr {
            return Err(Error::dim(
                "affine",
                format!("input features (axis 1) = {fin} but weight rows (axis 0) = {wr}"),
            ));
        }
        if br != 1 || bc != fout {
            return Err(Error::dim(
                "affine",
                format!("bias is {br}x{bc}, expected 1x{fout}"),
            ));
        }
        let mut out = Tensor::zeros(n, fout);
        let bias = self.value(b).data();
        for r in 0..n {
            out.row_mut(r).copy_from_slice(bias);
        }
        gemm(
            1.0,
            self.value(x),
            false,
            self.value(w),
            false,
            1.0,
            &mut out,
            false,
        );
        Ok(self.push(out, Op::Affine { x, w, b }))
    }

    /// Shared affine layer over `[x_r, codes_{r / group}]` rows.
    ///
    /// Equivalent to concatenating every row of `x` with the code of its group
    /// and applying [`Tape::affine`], but the code half of the product is
    /// computed once per group.
    pub fn affine_coded(
        &mut self,
        x: Var,
        codes: Var,
        group: usize,
        w: Var,
        b: Var,
    ) -> Result<Var> {
        let (n, a) = self.dims(x);
        let (g, c) = self.dims(codes);
        let (wr, fout) = self.dims(w);
        if group == 0 || n != g * group {
            return Err(Error::dim(
                "affine_coded",
                format!("{n} rows cannot be split into {g} groups of {group}"),
            ));
        }
        if wr != a + c {
            return Err(Error::dim(
                "affine_coded",
                format!("row width {a}+{c} but weight rows (axis 0) = {wr}"),
            ));
        }
        if self.shape(b) != [1, fout] {
            return Err(Error::dim("affine_coded", format!("bias must be 1x{fout}")));
        }
        let wt = self.value(w);
        let mut proj = Tensor::zeros(g, fout);
        for r in 0..g {
            proj.row_mut(r).copy_from_slice(self.value(b).data());
        }
        gemm_view(
            1.0,
            self.value(codes).view(),
            false,
            wt.view_rows(a, a + c),
            false,
            1.0,
            proj.data_mut(),
            fout,
            false,
        );
        let mut out = Tensor::zeros(n, fout);
        for r in 0..n {
            out.row_mut(r).copy_from_slice(proj.row(r / group));
        }
        gemm_view(
            1.0,
            self.value(x).view(),
            false,
            wt.view_rows(0, a),
            false,
            1.0,
            out.data_mut(),
            fout,
            false,
        );
        Ok(self.push(
            out,
            Op::AffineCoded {
                x,
                codes,
                group,
                w,
                b,
            },
        ))
    }

    /// `op(a) op(b)` where `op` transposes when the flag is set.
    pub fn matmul(&mut self, a: Var, b: Var, ta: bool, tb: bool) -> Result<Var> {
        let (ar, ac) = self.dims(a);
        let (br, bc) = self.dims(b);
        let (m, k) = if ta { (ac, ar) } else { (ar, ac) };
        let (k2, n) = if tb { (bc, br) } else { (br, bc) };
        if k != k2 {
            return Err(Error::dim(
                "matmul",
                format!("inner axes differ: {m}x{k} times {k2}x{n}"),
            ));
        }
        let mut out = Tensor::zeros(m, n);
        gemm(
            1.0,
            self.value(a),
            ta,
            self.value(b),
            tb,
            0.0,
            &mut out,
            false,
        );
        Ok(self.push(out, Op::MatMul { a, b, ta, tb }))
    }

    /// Elementwise `x` if `x >= 0`, else `slope * x`.
    pub fn leaky_relu(&mut self, x: Var, slope: f64) -> Var {
        assert!(
            slope > 0.0 && slope < 1.0,
            "leaky_relu slope must lie in (0, 1)"
        );
        let factor: Arc<[f64]> = self
            .value(x)
            .data()
            .iter()
            .map(|&v| if v >= 0.0 { 1.0 } else { slope })
            .collect();
        let out = self.value(x).zip_map_slice(&factor, |v, f| v * f);
        self.push(
            out,
            Op::MulConst {
                x,
                factor,
                relu: true,
            },
        )
    }

    pub(crate) fn mul_const(&mut self, x: Var, factor: Arc<[f64]>) -> Var {
        let out = self.value(x).zip_map_slice(&factor, |v, f| v * f);
        self.push(
            out,
            Op::MulConst {
                x,
                factor,
                relu: false,
            },
        )
    }

    /// Row-wise concatenation, `a`'s columns first.
    pub fn concat(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ra, ca) = self.dims(a);
        let (rb, cb) = self.dims(b);
        if ra != rb {
            return Err(Error::dim(
                "concat",
                format!("row counts (axis 0) differ: {ra} vs {rb}"),
            ));
        }
        let mut out = Tensor::zeros(ra, ca + cb);
        for r in 0..ra {
            let row = out.row_mut(r);
            row[..ca].copy_from_slice(self.nodes[a.0].value.row(r));
            row[ca..].copy_from_slice(self.nodes[b.0].value.row(r));
        }
        Ok(self.push(out, Op::Concat { a, b }))
    }

    /// Stacks parts vertically.
    pub fn concat_rows(&mut self, parts: &[Var]) -> Result<Var> {
        let Some(&first) = parts.first() else {
            return Err(Error::EmptyInput("concat_rows"));
        };
        let cols = self.dims(first).1;
        let mut data = Vec::new();
        let mut rows = 0;
        for &p in parts {
            let t = self.value(p);
            if t.cols() != cols {
                return Err(Error::dim(
                    "concat_rows",
                    format!("column counts (axis 1) differ: {cols} vs {}", t.cols()),
                ));
            }
            rows += t.rows();
            data.extend_from_slice(t.data());
        }
        let out = Tensor::from_vec(rows, cols, data)?;
        Ok(self.push(
            out,
            Op::ConcatRows {
                parts: parts.to_vec(),
            },
        ))
    }

    pub fn slice_cols(&mut self, x: Var, start: usize, end: usize) -> Result<Var> {
        let (rows, cols) = self.dims(x);
        if start > end || end > cols {
            return Err(Error::dim(
                "slice_cols",
                format!("range {start}..{end} outside {cols} columns"),
            ));
        }
        let mut out = Tensor::zeros(rows, end - start);
        for r in 0..rows {
            out.row_mut(r)
                .copy_from_slice(&self.value(x).row(r)[start..end]);
        }
        Ok(self.push(out, Op::SliceCols { x, start }))
    }

    pub(crate) fn pad_cols(&mut self, x: Var, start: usize, total: usize) -> Var {
        let (rows, cols) = self.dims(x);
        let mut out = Tensor::zeros(rows, total);
        for r in 0..rows {
            out.row_mut(r)[start..start + cols].copy_from_slice(self.value(x).row(r));
        }
        self.push(out, Op::PadCols { x, start })
    }

    /// Column-wise maximum over rows. Ties go to the smallest row index.
    pub fn max_pool(&mut self, x: Var) -> Result<(Var, Arc<[usize]>)> {
        let t = self.value(x);
        if t.rows() == 0 {
            return Err(Error::EmptyInput("max_pool"));
        }
        let cols = t.cols();
        let mut argmax = vec![0usize; cols];
        let mut best = t.row(0).to_vec();
        for r in 1..t.rows() {
            for (j, &v) in t.row(r).iter().enumerate() {
                if v > best[j] {
                    best[j] = v;
                    argmax[j] = r;
                }
            }
        }
        let argmax: Arc<[usize]> = argmax.into();
        let out = Tensor::from_vec(1, cols, best)?;
        let v = self.push(
            out,
            Op::GatherArgmax {
                x,
                argmax: argmax.clone(),
            },
        );
        Ok((v, argmax))
    }

    pub(crate) fn gather_argmax(&mut self, x: Var, argmax: Arc<[usize]>) -> Var {
        let t = self.value(x);
        let data = argmax
            .iter()
            .enumerate()
            .map(|(j, &r)| t.get(r, j))
            .collect();
        let out = Tensor::from_vec(1, argmax.len(), data).expect("argmax width");
        self.push(out, Op::GatherArgmax { x, argmax })
    }

    pub(crate) fn scatter_argmax(&mut self, x: Var, argmax: Arc<[usize]>, rows: usize) -> Var {
        let g = self.value(x);
        let mut out = Tensor::zeros(rows, argmax.len());
        for (j, &r) in argmax.iter().enumerate() {
            out.set(r, j, g.get(0, j));
        }
        self.push(out, Op::ScatterArgmax { x, argmax })
    }

    /// Selects rows by index; indices may repeat.
    pub fn gather_rows(&mut self, x: Var, idx: &[usize]) -> Result<Var> {
        let (rows, cols) = self.dims(x);
        if let Some(&bad) = idx.iter().find(|&&i| i >= rows) {
            return Err(Error::dim(
                "gather_rows",
                format!("row index {bad} out of range for {rows} rows"),
            ));
        }
        let mut out = Tensor::zeros(idx.len(), cols);
        for (k, &i) in idx.iter().enumerate() {
            out.row_mut(k).copy_from_slice(self.value(x).row(i));
        }
        Ok(self.push(out, Op::GatherRows { x, idx: idx.into() }))
    }

    /// Sum of all elements as a `1 x 1` tensor.
    pub fn sum(&mut self, x: Var) -> Var {
        let s: f64 = self.value(x).data().iter().sum();
        self.push(Tensor::scalar(s), Op::SumAll { x })
    }

    pub fn mean(&mut self, x: Var) -> Var {
        let n = self.value(x).len().max(1) as f64;
        let s = self.sum(x);
        self.scale(s, 1.0 / n)
    }

    pub(crate) fn expand(&mut self, x: Var, rows: usize, cols: usize) -> Var {
        let v = self.value(x).data()[0];
        self.push(Tensor::filled(rows, cols, v), Op::Expand { x })
    }

    /// Column sums, `N x F -> 1 x F`.
    pub fn sum_rows(&mut self, x: Var) -> Var {
        let t = self.value(x);
        let mut out = Tensor::zeros(1, t.cols());
        for r in 0..t.rows() {
            for (o, v) in out.data_mut().iter_mut().zip(t.row(r)) {
                *o += v;
            }
        }
        self.push(out, Op::SumRows { x })
    }

    pub fn broadcast_rows(&mut self, x: Var, rows: usize) -> Result<Var> {
        let t = self.value(x);
        if t.rows() != 1 {
            return Err(Error::dim("broadcast_rows", "input must be a single row"));
        }
        let mut out = Tensor::zeros(rows, t.cols());
        for r in 0..rows {
            out.row_mut(r).copy_from_slice(t.data());
        }
        Ok(self.push(out, Op::BroadcastRows { x }))
    }

    /// Row sums, `N x F -> N x 1`.
    pub fn sum_cols(&mut self, x: Var) -> Var {
        let t = self.value(x);
        let data = (0..t.rows()).map(|r| t.row(r).iter().sum()).collect();
        let out = Tensor::from_vec(t.rows(), 1, data).expect("row sums");
        self.push(out, Op::SumCols { x })
    }

    pub fn broadcast_cols(&mut self, x: Var, cols: usize) -> Result<Var> {
        let t = self.value(x);
        if t.cols() != 1 {
            return Err(Error::dim(
                "broadcast_cols",
                "input must be a single column",
            ));
        }
        let mut out = Tensor::zeros(t.rows(), cols);
        for r in 0..t.rows() {
            out.row_mut(r).fill(t.get(r, 0));
        }
        Ok(self.push(out, Op::BroadcastCols { x }))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("add", a, b)?;
        let out = self.value(a).zip_map(self.value(b), |x, y| x + y);
        Ok(self.push(out, Op::Add { a, b }))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("sub", a, b)?;
        let out = self.value(a).zip_map(self.value(b), |x, y| x - y);
        Ok(self.push(out, Op::Sub { a, b }))
    }

    /// Elementwise product.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("mul", a, b)?;
        let out = self.value(a).zip_map(self.value(b), |x, y| x * y);
        Ok(self.push(out, Op::Mul { a, b }))
    }

    pub fn square(&mut self, x: Var) -> Var {
        self.mul(x, x).expect("same shape")
    }

    pub fn scale(&mut self, x: Var, c: f64) -> Var {
        let out = self.value(x).map(|v| v * c);
        self.push(out, Op::Scale { x, c })
    }

    pub fn add_scalar(&mut self, x: Var, c: f64) -> Var {
        let out = self.value(x).map(|v| v + c);
        self.push(out, Op::AddScalar { x })
    }

    /// Elementwise square root. Its derivative at 0 is taken as 0.
    pub fn sqrt(&mut self, x: Var) -> Result<Var> {
        if let Some(&bad) = self.value(x).data().iter().find(|&&v| v < 0.0) {
            return Err(Error::Domain(format!("sqrt of negative value {bad}")));
        }
        let out = self.value(x).map(f64::sqrt);
        Ok(self.push(out, Op::Sqrt { x }))
    }

    pub fn reshape(&mut self, x: Var, rows: usize, cols: usize) -> Result<Var> {
        let t = self.value(x);
        if rows * cols != t.len() {
            return Err(Error::dim(
                "reshape",
                format!("{}x{} cannot become {rows}x{cols}", t.rows(), t.cols()),
            ));
        }
        let out = t.clone().reshaped(rows, cols);
        Ok(self.push(out, Op::Reshape { x }))
    }
}

impl Tensor {
    fn zip_map_slice(&self, other: &[f64], f: impl Fn(f64, f64) -> f64) -> Tensor {
        let data = self
            .data()
            .iter()
            .zip(other)
            .map(|(&a, &b)| f(a, b))
            .collect();
        Tensor::from_vec(self.rows(), self.cols(), data).expect("same length")
    }
}

/// Gradient of `‖∂output/∂input‖₂` with respect to every trainable leaf.
///
/// Returns the norm itself alongside the gradients.
pub fn grad_of_gradnorm(tape: &mut Tape, output: Var, input: Var) -> Result<(f64, Gradients)> {
    let g = tape.grad_graph(output, &[input])?[0];
    let sq = tape.square(g);
    let s = tape.sum(sq);
    let norm = tape.sqrt(s)?;
    let value = tape.value(norm).item()?;
    Ok((value, tape.backward(norm)?))
}
