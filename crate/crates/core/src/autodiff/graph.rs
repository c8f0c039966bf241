use super::{Op, Tape, Var};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

impl Tape {
    /// Records the reverse sweep of the scalar `output` onto the tape and
    /// returns one gradient node per entry of `wrt`.
    ///
    /// The returned nodes are ordinary tape nodes, so any function of them can
    /// be passed to [`Tape::backward`] for second-order gradients. Only the
    /// ops a PointNet-style critic needs are supported (affine, LeakyReLU,
    /// concatenation, max-pool and the reductions); anything else on the path
    /// from `wrt` to `output` is a capability error.
    pub fn grad_graph(&mut self, output: Var, wrt: &[Var]) -> Result<Vec<Var>> {
        if self.shape(output) != [1, 1] {
            let [r, c] = self.shape(output);
            return Err(Error::Contract(format!(
                "grad_graph needs a scalar output, got {r}x{c}"
            )));
        }
        let n = output.0 + 1;
        // Nodes downstream of any `wrt` entry; only these carry gradient back to it.
        let mut dep = vec![false; n];
        for w in wrt {
            if w.0 < n {
                dep[w.0] = true;
            }
        }
        for i in 0..n {
            if !dep[i] && self.nodes[i].op.inputs().iter().any(|v| dep[v.0]) {
                dep[i] = true;
            }
        }

        let mut grads: Vec<Option<Var>> = vec![None; n];
        if dep[output.0] {
            grads[output.0] = Some(self.constant(Tensor::scalar(1.0)));
        }
        for i in (0..n).rev() {
            if !dep[i] {
                continue;
            }
            let Some(g) = grads[i] else { continue };
            let op = self.nodes[i].op.clone();
            self.record_adjoint(&op, g, &dep, &mut grads)?;
        }

        Ok(wrt
            .iter()
            .map(|w| match grads.get(w.0).copied().flatten() {
                Some(g) => g,
                None => {
                    let [r, c] = self.shape(*w);
                    self.constant(Tensor::zeros(r, c))
                }
            })
            .collect())
    }

    fn accumulate(&mut self, grads: &mut [Option<Var>], v: Var, g: Var) -> Result<()> {
        grads[v.0] = Some(match grads[v.0] {
            Some(prev) => self.add(prev, g)?,
            None => g,
        });
        Ok(())
    }

    fn record_adjoint(
        &mut self,
        op: &Op,
        g: Var,
        dep: &[bool],
        grads: &mut [Option<Var>],
    ) -> Result<()> {
        let on = |v: &Var| dep[v.0];
        match op {
            Op::Leaf => {}
            Op::Affine { x, w, b } => {
                if on(x) {
                    let d = self.matmul(g, *w, false, true)?;
                    self.accumulate(grads, *x, d)?;
                }
                if on(w) {
                    let d = self.matmul(*x, g, true, false)?;
                    self.accumulate(grads, *w, d)?;
                }
                if on(b) {
                    let d = self.sum_rows(g);
                    self.accumulate(grads, *b, d)?;
                }
            }
            Op::MulConst { x, factor, .. } => {
                let d = self.mul_const(g, factor.clone());
                self.accumulate(grads, *x, d)?;
            }
            Op::Concat { a, b } => {
                let ca = self.shape(*a)[1];
                let total = self.shape(g)[1];
                if on(a) {
                    let d = self.slice_cols(g, 0, ca)?;
                    self.accumulate(grads, *a, d)?;
                }
                if on(b) {
                    let d = self.slice_cols(g, ca, total)?;
                    self.accumulate(grads, *b, d)?;
                }
            }
            Op::SliceCols { x, start, .. } => {
                let total = self.shape(*x)[1];
                let d = self.pad_cols(g, *start, total);
                self.accumulate(grads, *x, d)?;
            }
            Op::PadCols { x, start, .. } => {
                let cols = self.shape(*x)[1];
                let d = self.slice_cols(g, *start, start + cols)?;
                self.accumulate(grads, *x, d)?;
            }
            Op::GatherArgmax { x, argmax } => {
                let rows = self.shape(*x)[0];
                let d = self.scatter_argmax(g, argmax.clone(), rows);
                self.accumulate(grads, *x, d)?;
            }
            Op::ScatterArgmax { x, argmax, .. } => {
                let d = self.gather_argmax(g, argmax.clone());
                self.accumulate(grads, *x, d)?;
            }
            Op::SumAll { x } => {
                let [r, c] = self.shape(*x);
                let d = self.expand(g, r, c);
                self.accumulate(grads, *x, d)?;
            }
            Op::Expand { x, .. } => {
                let d = self.sum(g);
                self.accumulate(grads, *x, d)?;
            }
            Op::SumRows { x } => {
                let rows = self.shape(*x)[0];
                let d = self.broadcast_rows(g, rows)?;
                self.accumulate(grads, *x, d)?;
            }
            Op::BroadcastRows { x, .. } => {
                let d = self.sum_rows(g);
                self.accumulate(grads, *x, d)?;
            }
            Op::SumCols { x } => {
                let cols = self.shape(*x)[1];
                let d = self.broadcast_cols(g, cols)?;
                self.accumulate(grads, *x, d)?;
            }
            Op::BroadcastCols { x, .. } => {
                let d = self.sum_cols(g);
                self.accumulate(grads, *x, d)?;
            }
            Op::Add { a, b } => {
                if on(a) {
                    self.accumulate(grads, *a, g)?;
                }
                if on(b) {
                    self.accumulate(grads, *b, g)?;
                }
            }
            Op::Sub { a, b } => {
                if on(a) {
                    self.accumulate(grads, *a, g)?;
                }
                if on(b) {
                    let d = self.scale(g, -1.0);
                    self.accumulate(grads, *b, d)?;
                }
            }
            Op::Mul { a, b } => {
                if on(a) {
                    let d = self.mul(g, *b)?;
                    self.accumulate(grads, *a, d)?;
                }
                if on(b) {
                    let d = self.mul(g, *a)?;
                    self.accumulate(grads, *b, d)?;
                }
            }
            Op::Scale { x, c } => {
                let d = self.scale(g, *c);
                self.accumulate(grads, *x, d)?;
            }
            Op::AddScalar { x, .. } => self.accumulate(grads, *x, g)?,
            Op::Reshape { x } => {
                let [r, c] = self.shape(*x);
                let d = self.reshape(g, r, c)?;
                self.accumulate(grads, *x, d)?;
            }
            Op::AffineCoded { .. }
            | Op::MatMul { .. }
            | Op::ConcatRows { .. }
            | Op::GatherRows { .. }
            | Op::Sqrt { .. } => {
                return Err(Error::Capability {
                    op: op.name(),
                    mode: "second-order differentiation",
                })
            }
        }
        Ok(())
    }
}
