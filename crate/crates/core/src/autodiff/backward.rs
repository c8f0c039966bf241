use super::{Op, Tape, Var};
use crate::error::{Error, Result};
use crate::tensor::{gemm_view, MatRef, Tensor};

/// Numeric gradients of a scalar with respect to tape nodes.
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
    shapes: Vec<[usize; 2]>,
}

impl Gradients {
    /// Gradient for `v`, or `None` when no gradient reached it.
    pub fn get(&self, v: Var) -> Option<&Tensor> {
        self.grads.get(v.0).and_then(Option::as_ref)
    }

    /// Gradient for `v`, zero-filled when nothing reached it.
    pub fn of(&self, v: Var) -> Tensor {
        match self.get(v) {
            Some(t) => t.clone(),
            None => {
                let [r, c] = self.shapes[v.0];
                Tensor::zeros(r, c)
            }
        }
    }

    pub fn take(&mut self, v: Var) -> Tensor {
        match self.grads.get_mut(v.0).and_then(Option::take) {
            Some(t) => t,
            None => {
                let [r, c] = self.shapes[v.0];
                Tensor::zeros(r, c)
            }
        }
    }
}

fn acc(grads: &mut [Option<Tensor>], v: Var, t: Tensor) {
    match &mut grads[v.0] {
        Some(e) => e.add_assign(&t),
        slot @ None => *slot = Some(t),
    }
}

/// Accumulates `op(A) op(B)` into the gradient slot of `v` (stored transposed
/// when `tc` is set).
#[allow(clippy::too_many_arguments)]
fn acc_gemm(
    grads: &mut [Option<Tensor>],
    v: Var,
    shape: [usize; 2],
    a: MatRef<'_>,
    ta: bool,
    b: MatRef<'_>,
    tb: bool,
    tc: bool,
) {
    let slot = &mut grads[v.0];
    let beta = if slot.is_some() { 1.0 } else { 0.0 };
    let t = slot.get_or_insert_with(|| Tensor::zeros(shape[0], shape[1]));
    let cols = t.cols();
    gemm_view(1.0, a, ta, b, tb, beta, t.data_mut(), cols, tc);
}

impl Tape {
    /// Reverse sweep from the scalar `output`.
    ///
    /// Only nodes that require gradients receive them; constants are skipped
    /// entirely, so frozen parameters cost nothing.
    pub fn backward(&self, output: Var) -> Result<Gradients> {
        if self.shape(output) != [1, 1] {
            let [r, c] = self.shape(output);
            return Err(Error::Contract(format!(
                "backward needs a scalar output, got {r}x{c}"
            )));
        }
        let n = output.0 + 1;
        let mut grads: Vec<Option<Tensor>> = vec![None; n];
        grads[output.0] = Some(Tensor::scalar(1.0));
        for i in (0..n).rev() {
            let node = &self.nodes[i];
            if !node.requires_grad || matches!(node.op, Op::Leaf) {
                continue;
            }
            let Some(g) = grads[i].take() else { continue };
            self.backprop_node(i, &g, &mut grads);
            grads[i] = Some(g);
        }
        let shapes = self.nodes[..n].iter().map(|nd| nd.value.shape()).collect();
        Ok(Gradients { grads, shapes })
    }

    fn backprop_node(&self, i: usize, g: &Tensor, grads: &mut [Option<Tensor>]) {
        let rg = |v: Var| self.nodes[v.0].requires_grad;
        let val = |v: Var| &self.nodes[v.0].value;
        match &self.nodes[i].op {
            Op::Leaf => {}
            Op::Affine { x, w, b } => {
                if rg(*x) {
                    acc_gemm(
                        grads,
                        *x,
                        val(*x).shape(),
                        g.view(),
                        false,
                        val(*w).view(),
                        true,
                        false,
                    );
                }
                if rg(*w) {
                    acc_gemm(
                        grads,
                        *w,
                        val(*w).shape(),
                        val(*x).view(),
                        true,
                        g.view(),
                        false,
                        false,
                    );
                }
                if rg(*b) {
                    acc(grads, *b, column_sums(g));
                }
            }
            Op::AffineCoded {
                x,
                codes,
                group,
                w,
                b,
            } => {
                let a = val(*x).cols();
                let c = val(*codes).cols();
                let wt = val(*w);
                let gsum = group_sums(g, *group);
                if rg(*x) {
                    acc_gemm(
                        grads,
                        *x,
                        val(*x).shape(),
                        g.view(),
                        false,
                        wt.view_rows(0, a),
                        true,
                        false,
                    );
                }
                if rg(*codes) {
                    acc_gemm(
                        grads,
                        *codes,
                        val(*codes).shape(),
                        gsum.view(),
                        false,
                        wt.view_rows(a, a + c),
                        true,
                        false,
                    );
                }
                if rg(*w) {
                    let mut dw = Tensor::zeros(a + c, wt.cols());
                    let fout = wt.cols();
                    let (top, bottom) = dw.data_mut().split_at_mut(a * fout);
                    gemm_view(
                        1.0,
                        val(*x).view(),
                        true,
                        g.view(),
                        false,
                        0.0,
                        top,
                        fout,
                        false,
                    );
                    gemm_view(
                        1.0,
                        val(*codes).view(),
                        true,
                        gsum.view(),
                        false,
                        0.0,
                        bottom,
                        fout,
                        false,
                    );
                    acc(grads, *w, dw);
                }
                if rg(*b) {
                    acc(grads, *b, column_sums(g));
                }
            }
            Op::MatMul { a, b, ta, tb } => {
                // C = op(A) op(B): d op(A) = G op(B)^T, d op(B) = op(A)^T G.
                if rg(*a) {
                    acc_gemm(
                        grads,
                        *a,
                        val(*a).shape(),
                        g.view(),
                        false,
                        val(*b).view(),
                        !tb,
                        *ta,
                    );
                }
                if rg(*b) {
                    acc_gemm(
                        grads,
                        *b,
                        val(*b).shape(),
                        val(*a).view(),
                        !ta,
                        g.view(),
                        false,
                        *tb,
                    );
                }
            }
            Op::MulConst { x, factor, .. } => {
                acc(grads, *x, g.zip_map_slice(factor, |a, f| a * f));
            }
            Op::Concat { a, b } => {
                let ca = val(*a).cols();
                if rg(*a) {
                    acc(grads, *a, cols_range(g, 0, ca));
                }
                if rg(*b) {
                    acc(grads, *b, cols_range(g, ca, g.cols()));
                }
            }
            Op::ConcatRows { parts } => {
                let mut start = 0;
                for p in parts {
                    let rows = val(*p).rows();
                    if rg(*p) {
                        let data = g.data()[start * g.cols()..(start + rows) * g.cols()].to_vec();
                        acc(
                            grads,
                            *p,
                            Tensor::from_vec(rows, g.cols(), data).expect("row block"),
                        );
                    }
                    start += rows;
                }
            }
            Op::SliceCols { x, start, .. } => {
                let t = val(*x);
                let mut d = Tensor::zeros(t.rows(), t.cols());
                for r in 0..t.rows() {
                    d.row_mut(r)[*start..*start + g.cols()].copy_from_slice(g.row(r));
                }
                acc(grads, *x, d);
            }
            Op::PadCols { x, start, .. } => {
                let cols = val(*x).cols();
                acc(grads, *x, cols_range(g, *start, start + cols));
            }
            Op::GatherArgmax { x, argmax } => {
                let slot = &mut grads[x.0];
                let t = slot.get_or_insert_with(|| {
                    let [r, c] = val(*x).shape();
                    Tensor::zeros(r, c)
                });
                for (j, &r) in argmax.iter().enumerate() {
                    let cur = t.get(r, j);
                    t.set(r, j, cur + g.get(0, j));
                }
            }
            Op::ScatterArgmax { x, argmax, .. } => {
                let data = argmax
                    .iter()
                    .enumerate()
                    .map(|(j, &r)| g.get(r, j))
                    .collect();
                acc(
                    grads,
                    *x,
                    Tensor::from_vec(1, argmax.len(), data).expect("argmax width"),
                );
            }
            Op::GatherRows { x, idx } => {
                let slot = &mut grads[x.0];
                let t = slot.get_or_insert_with(|| {
                    let [r, c] = val(*x).shape();
                    Tensor::zeros(r, c)
                });
                for (k, &r) in idx.iter().enumerate() {
                    for (d, s) in t.row_mut(r).iter_mut().zip(g.row(k)) {
                        *d += s;
                    }
                }
            }
            Op::SumAll { x } => {
                let [r, c] = val(*x).shape();
                acc(grads, *x, Tensor::filled(r, c, g.data()[0]));
            }
            Op::Expand { x, .. } => {
                acc(grads, *x, Tensor::scalar(g.data().iter().sum()));
            }
            Op::SumRows { x } => {
                let rows = val(*x).rows();
                let mut d = Tensor::zeros(rows, g.cols());
                for r in 0..rows {
                    d.row_mut(r).copy_from_slice(g.data());
                }
                acc(grads, *x, d);
            }
            Op::BroadcastRows { x, .. } => acc(grads, *x, column_sums(g)),
            Op::SumCols { x } => {
                let cols = val(*x).cols();
                let mut d = Tensor::zeros(g.rows(), cols);
                for r in 0..g.rows() {
                    d.row_mut(r).fill(g.get(r, 0));
                }
                acc(grads, *x, d);
            }
            Op::BroadcastCols { x, .. } => {
                let data = (0..g.rows()).map(|r| g.row(r).iter().sum()).collect();
                acc(
                    grads,
                    *x,
                    Tensor::from_vec(g.rows(), 1, data).expect("row sums"),
                );
            }
            Op::Add { a, b } => {
                if rg(*a) {
                    acc(grads, *a, g.clone());
                }
                if rg(*b) {
                    acc(grads, *b, g.clone());
                }
            }
            Op::Sub { a, b } => {
                if rg(*a) {
                    acc(grads, *a, g.clone());
                }
                if rg(*b) {
                    acc(grads, *b, g.map(|v| -v));
                }
            }
            Op::Mul { a, b } => {
                if rg(*a) {
                    acc(grads, *a, g.zip_map(val(*b), |x, y| x * y));
                }
                if rg(*b) {
                    acc(grads, *b, g.zip_map(val(*a), |x, y| x * y));
                }
            }
            Op::Scale { x, c } => acc(grads, *x, g.map(|v| v * c)),
            Op::AddScalar { x, .. } => acc(grads, *x, g.clone()),
            Op::Sqrt { x: xv } => {
                let y = &self.nodes[i].value;
                let d = g.zip_map(y, |gv, yv| if yv > 0.0 { gv * 0.5 / yv } else { 0.0 });
                acc(grads, *xv, d);
            }
            Op::Reshape { x } => {
                let [r, c] = val(*x).shape();
                acc(grads, *x, g.clone().reshaped(r, c));
            }
        }
    }
}

fn column_sums(g: &Tensor) -> Tensor {
    let mut out = Tensor::zeros(1, g.cols());
    for r in 0..g.rows() {
        for (o, v) in out.data_mut().iter_mut().zip(g.row(r)) {
            *o += v;
        }
    }
    out
}

/// Sums consecutive blocks of `group` rows.
fn group_sums(g: &Tensor, group: usize) -> Tensor {
    let groups = g.rows() / group;
    let mut out = Tensor::zeros(groups, g.cols());
    for r in 0..g.rows() {
        let dst = out.row_mut(r / group);
        for (o, v) in dst.iter_mut().zip(g.row(r)) {
            *o += v;
        }
    }
    out
}

fn cols_range(g: &Tensor, start: usize, end: usize) -> Tensor {
    let mut out = Tensor::zeros(g.rows(), end - start);
    for r in 0..g.rows() {
        out.row_mut(r).copy_from_slice(&g.row(r)[start..end]);
    }
    out
}
