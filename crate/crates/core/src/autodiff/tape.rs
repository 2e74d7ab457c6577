//! Reverse-mode differentiation over tensor-valued nodes.
//!
//! Every operation appends a node whose inputs already exist, so node ids are
//! a topological order and `backward` is a single reverse sweep. A tape is
//! built fresh for each forward pass and may be rolled back with
//! [`Tape::truncate`] to reuse a shared prefix (e.g. one encoder pass feeding
//! many sampled decodes).

use super::tensor::{
    masked_softmax, matmul_into, matmul_t_into, shape_err, t_matmul_into, Tensor, TensorError,
};

/// Handle to a node on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn id(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    /// `a * b^T`
    MatMulT(Var, Var),
    Add(Var, Var),
    /// matrix plus a row vector broadcast over its rows
    AddRow(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    Tanh(Var),
    Relu(Var),
    Log(Var),
    Sum(Var),
    Mean(Var),
    MeanRows(Var),
    Row(Var, usize),
    Pick(Var, usize),
    Concat(Vec<Var>),
    SoftmaxRows(Var),
    MaskedSoftmax(Var),
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
    tracked: bool,
}

pub type Result<T> = std::result::Result<T, TensorError>;

#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

/// Gradients of a scalar loss with respect to every tracked node.
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
    shapes: Vec<Vec<usize>>,
}

impl Gradients {
    pub fn get(&self, v: Var) -> Option<&Tensor> {
        self.grads.get(v.0).and_then(Option::as_ref)
    }

    /// Gradient for `v`, zero-filled when the loss does not depend on it.
    pub fn wrt(&self, v: Var) -> Tensor {
        self.get(v)
            .cloned()
            .unwrap_or_else(|| Tensor::zeros(&self.shapes[v.0]))
    }
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

    /// Drops every node with id `>= len`. Handles to dropped nodes become invalid.
    pub fn truncate(&mut self, len: usize) {
        self.nodes.truncate(len);
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    /// A differentiable input (a parameter).
    pub fn leaf(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf, true)
    }

    /// A non-differentiable input.
    pub fn constant(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf, false)
    }

    fn push(&mut self, value: Tensor, op: Op, tracked: bool) -> Var {
        self.nodes.push(Node { value, op, tracked });
        Var(self.nodes.len() - 1)
    }

    fn tracked(&self, vars: &[Var]) -> bool {
        vars.iter().any(|v| self.nodes[v.0].tracked)
    }

    fn unary(&mut self, a: Var, op: Op, f: impl Fn(f64) -> f64) -> Var {
        let src = &self.nodes[a.0].value;
        let data = src.data().iter().map(|&x| f(x)).collect();
        let value = Tensor::new(src.shape().to_vec(), data).expect("same shape");
        let tracked = self.tracked(&[a]);
        self.push(value, op, tracked)
    }

    fn binary_same_shape(
        &mut self,
        op_name: &'static str,
        a: Var,
        b: Var,
        op: Op,
        f: impl Fn(f64, f64) -> f64,
    ) -> Result<Var> {
        let (x, y) = (&self.nodes[a.0].value, &self.nodes[b.0].value);
        if x.shape() != y.shape() {
            return Err(shape_err(
                op_name,
                format!("{:?} vs {:?}", x.shape(), y.shape()),
            ));
        }
        let data = x
            .data()
            .iter()
            .zip(y.data())
            .map(|(&p, &q)| f(p, q))
            .collect();
        let value = Tensor::new(x.shape().to_vec(), data)?;
        let tracked = self.tracked(&[a, b]);
        Ok(self.push(value, op, tracked))
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let value = self.nodes[a.0].value.matmul(&self.nodes[b.0].value)?;
        let tracked = self.tracked(&[a, b]);
        Ok(self.push(value, Op::MatMul(a, b), tracked))
    }

    /// `a * b^T` without materializing the transpose.
    pub fn matmul_t(&mut self, a: Var, b: Var) -> Result<Var> {
        let (r, k) = self.nodes[a.0].value.dims2()?;
        let (c, k2) = self.nodes[b.0].value.dims2()?;
        if k != k2 {
            return Err(shape_err("matmul_t", format!("[{r}, {k}] x [{c}, {k2}]^T")));
        }
        let mut out = vec![0.0; r * c];
        matmul_t_into(
            self.nodes[a.0].value.data(),
            self.nodes[b.0].value.data(),
            &mut out,
            r,
            k,
            c,
        );
        let tracked = self.tracked(&[a, b]);
        Ok(self.push(Tensor::new(vec![r, c], out)?, Op::MatMulT(a, b), tracked))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary_same_shape("add", a, b, Op::Add(a, b), |x, y| x + y)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary_same_shape("sub", a, b, Op::Sub(a, b), |x, y| x - y)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary_same_shape("mul", a, b, Op::Mul(a, b), |x, y| x * y)
    }

    /// Adds a `[1, c]` (or `[c]`) row to every row of an `[r, c]` matrix.
    pub fn add_row(&mut self, m: Var, row: Var) -> Result<Var> {
        let (r, c) = self.nodes[m.0].value.dims2()?;
        let rv = &self.nodes[row.0].value;
        let ok =
            matches!(rv.shape(), [1, cc] if *cc == c) || matches!(rv.shape(), [cc] if *cc == c);
        if !ok {
            return Err(shape_err(
                "add_row",
                format!("[{r}, {c}] + {:?}", rv.shape()),
            ));
        }
        let mut data = self.nodes[m.0].value.data().to_vec();
        for chunk in data.chunks_mut(c) {
            for (d, b) in chunk.iter_mut().zip(rv.data()) {
                *d += b;
            }
        }
        let tracked = self.tracked(&[m, row]);
        Ok(self.push(Tensor::new(vec![r, c], data)?, Op::AddRow(m, row), tracked))
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Var {
        self.unary(a, Op::Scale(a, c), |x| x * c)
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        self.unary(a, Op::Tanh(a), f64::tanh)
    }

    pub fn relu(&mut self, a: Var) -> Var {
        self.unary(a, Op::Relu(a), |x| x.max(0.0))
    }

    pub fn log(&mut self, a: Var) -> Var {
        self.unary(a, Op::Log(a), f64::ln)
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let s = self.nodes[a.0].value.data().iter().sum();
        let tracked = self.tracked(&[a]);
        self.push(Tensor::scalar(s), Op::Sum(a), tracked)
    }

    pub fn mean(&mut self, a: Var) -> Var {
        let x = &self.nodes[a.0].value;
        let s = x.data().iter().sum::<f64>() / x.len() as f64;
        let tracked = self.tracked(&[a]);
        self.push(Tensor::scalar(s), Op::Mean(a), tracked)
    }

    /// Column means of an `[r, c]` matrix as a `[1, c]` row.
    pub fn mean_rows(&mut self, a: Var) -> Result<Var> {
        let x = &self.nodes[a.0].value;
        let (r, c) = x.dims2()?;
        let mut out = vec![0.0; c];
        for i in 0..r {
            for (o, v) in out.iter_mut().zip(x.row(i)) {
                *o += v;
            }
        }
        for o in &mut out {
            *o /= r as f64;
        }
        let tracked = self.tracked(&[a]);
        Ok(self.push(Tensor::new(vec![1, c], out)?, Op::MeanRows(a), tracked))
    }

    /// Row `i` of a matrix as a `[1, c]` row.
    pub fn row(&mut self, a: Var, i: usize) -> Result<Var> {
        let x = &self.nodes[a.0].value;
        let (r, c) = x.dims2()?;
        if i >= r {
            return Err(shape_err("row", format!("row {i} of {r}")));
        }
        let value = Tensor::new(vec![1, c], x.row(i).to_vec())?;
        let tracked = self.tracked(&[a]);
        Ok(self.push(value, Op::Row(a, i), tracked))
    }

    /// Element at flat index `i` as a scalar.
    pub fn pick(&mut self, a: Var, i: usize) -> Result<Var> {
        let x = &self.nodes[a.0].value;
        let v = *x
            .data()
            .get(i)
            .ok_or_else(|| shape_err("pick", format!("index {i} of {}", x.len())))?;
        let tracked = self.tracked(&[a]);
        Ok(self.push(Tensor::scalar(v), Op::Pick(a, i), tracked))
    }

    /// Concatenates matrices with equal row counts along columns.
    pub fn concat(&mut self, parts: &[Var]) -> Result<Var> {
        let first = parts
            .first()
            .ok_or_else(|| shape_err("concat", "no inputs"))?;
        let (r, _) = self.nodes[first.0].value.dims2()?;
        let mut widths = Vec::with_capacity(parts.len());
        for p in parts {
            let (pr, pc) = self.nodes[p.0].value.dims2()?;
            if pr != r {
                return Err(shape_err("concat", format!("row counts {r} vs {pr}")));
            }
            widths.push(pc);
        }
        let total: usize = widths.iter().sum();
        let mut data = Vec::with_capacity(r * total);
        for i in 0..r {
            for p in parts {
                data.extend_from_slice(self.nodes[p.0].value.row(i));
            }
        }
        let tracked = self.tracked(parts);
        Ok(self.push(
            Tensor::new(vec![r, total], data)?,
            Op::Concat(parts.to_vec()),
            tracked,
        ))
    }

    /// Row-wise softmax of a matrix.
    pub fn softmax_rows(&mut self, a: Var) -> Result<Var> {
        let x = &self.nodes[a.0].value;
        let (r, c) = x.dims2()?;
        let mask = vec![true; c];
        let mut data = Vec::with_capacity(r * c);
        for i in 0..r {
            data.extend(masked_softmax(x.row(i), &mask)?);
        }
        let tracked = self.tracked(&[a]);
        Ok(self.push(Tensor::new(vec![r, c], data)?, Op::SoftmaxRows(a), tracked))
    }

    /// Softmax over the flattened tensor restricted to `mask`.
    pub fn masked_softmax(&mut self, a: Var, mask: &[bool]) -> Result<Var> {
        let x = &self.nodes[a.0].value;
        let data = masked_softmax(x.data(), mask)?;
        let value = Tensor::new(x.shape().to_vec(), data)?;
        let tracked = self.tracked(&[a]);
        Ok(self.push(value, Op::MaskedSoftmax(a), tracked))
    }

    /// Propagates d(loss)/d(node) for every tracked node, visiting ids in
    /// strictly decreasing order.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        if self.nodes[loss.0].value.len() != 1 {
            return Err(shape_err(
                "backward",
                format!(
                    "loss must be scalar, got {:?}",
                    self.nodes[loss.0].value.shape()
                ),
            ));
        }
        let mut grads: Vec<Option<Tensor>> = vec![None; self.nodes.len()];
        let loss_shape = self.nodes[loss.0].value.shape().to_vec();
        grads[loss.0] = Some(Tensor::new(loss_shape, vec![1.0]).expect("scalar"));

        for id in (0..=loss.0).rev() {
            let Some(g) = grads[id].take() else { continue };
            let node = &self.nodes[id];
            if !node.tracked {
                continue;
            }
            self.propagate(node, &g, &mut grads)?;
            grads[id] = Some(g);
        }
        let shapes = self
            .nodes
            .iter()
            .map(|n| n.value.shape().to_vec())
            .collect();
        for (g, node) in grads.iter_mut().zip(&self.nodes) {
            if !node.tracked {
                *g = None;
            }
        }
        Ok(Gradients { grads, shapes })
    }

    fn propagate(&self, node: &Node, g: &Tensor, grads: &mut [Option<Tensor>]) -> Result<()> {
        let gd = g.data();
        match &node.op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let (av, bv) = (self.value(*a), self.value(*b));
                let (r, k) = av.dims2()?;
                let (_, c) = bv.dims2()?;
                if self.nodes[a.0].tracked {
                    // dA = G * B^T
                    let ga = accumulate(grads, *a, av.shape());
                    matmul_t_into(gd, bv.data(), ga, r, c, k);
                }
                if self.nodes[b.0].tracked {
                    // dB = A^T * G
                    let gb = accumulate(grads, *b, bv.shape());
                    t_matmul_into(av.data(), gd, gb, r, k, c);
                }
            }
            Op::MatMulT(a, b) => {
                // C = A B^T with A [r,k], B [c,k]
                let (av, bv) = (self.value(*a), self.value(*b));
                let (r, k) = av.dims2()?;
                let (c, _) = bv.dims2()?;
                if self.nodes[a.0].tracked {
                    // dA = G * B
                    let ga = accumulate(grads, *a, av.shape());
                    matmul_into(gd, bv.data(), ga, r, c, k);
                }
                if self.nodes[b.0].tracked {
                    // dB = G^T * A
                    let gb = accumulate(grads, *b, bv.shape());
                    t_matmul_into(gd, av.data(), gb, r, c, k);
                }
            }
            Op::Add(a, b) => {
                self.add_scaled(grads, *a, gd, 1.0);
                self.add_scaled(grads, *b, gd, 1.0);
            }
            Op::Sub(a, b) => {
                self.add_scaled(grads, *a, gd, 1.0);
                self.add_scaled(grads, *b, gd, -1.0);
            }
            Op::Mul(a, b) => {
                let (av, bv) = (self.value(*a).data(), self.value(*b).data());
                if self.nodes[a.0].tracked {
                    let ga = accumulate(grads, *a, self.value(*a).shape());
                    for ((o, gv), y) in ga.iter_mut().zip(gd).zip(bv) {
                        *o += gv * y;
                    }
                }
                if self.nodes[b.0].tracked {
                    let gb = accumulate(grads, *b, self.value(*b).shape());
                    for ((o, gv), x) in gb.iter_mut().zip(gd).zip(av) {
                        *o += gv * x;
                    }
                }
            }
            Op::AddRow(m, row) => {
                self.add_scaled(grads, *m, gd, 1.0);
                if self.nodes[row.0].tracked {
                    let c = self.value(*row).len();
                    let gr = accumulate(grads, *row, self.value(*row).shape());
                    for chunk in gd.chunks(c) {
                        for (o, gv) in gr.iter_mut().zip(chunk) {
                            *o += gv;
                        }
                    }
                }
            }
            Op::Scale(a, c) => self.add_scaled(grads, *a, gd, *c),
            Op::Tanh(a) => {
                let y = node.value.data();
                self.add_map(grads, *a, |i| gd[i] * (1.0 - y[i] * y[i]));
            }
            Op::Relu(a) => {
                let x = self.value(*a).data();
                self.add_map(grads, *a, |i| if x[i] > 0.0 { gd[i] } else { 0.0 });
            }
            Op::Log(a) => {
                let x = self.value(*a).data();
                // zero upstream gradient contributes nothing, even where x == 0
                self.add_map(grads, *a, |i| if gd[i] == 0.0 { 0.0 } else { gd[i] / x[i] });
            }
            Op::Sum(a) => {
                let g0 = gd[0];
                self.add_map(grads, *a, |_| g0);
            }
            Op::Mean(a) => {
                let g0 = gd[0] / self.value(*a).len() as f64;
                self.add_map(grads, *a, |_| g0);
            }
            Op::MeanRows(a) => {
                let (r, c) = self.value(*a).dims2()?;
                let inv = 1.0 / r as f64;
                self.add_map(grads, *a, |i| gd[i % c] * inv);
            }
            Op::Row(a, i) => {
                if self.nodes[a.0].tracked {
                    let (_, c) = self.value(*a).dims2()?;
                    let ga = accumulate(grads, *a, self.value(*a).shape());
                    for (o, gv) in ga[i * c..(i + 1) * c].iter_mut().zip(gd) {
                        *o += gv;
                    }
                }
            }
            Op::Pick(a, i) => {
                if self.nodes[a.0].tracked {
                    let ga = accumulate(grads, *a, self.value(*a).shape());
                    ga[*i] += gd[0];
                }
            }
            Op::Concat(parts) => {
                let (r, total) = node.value.dims2()?;
                let mut offset = 0;
                for p in parts {
                    let pv = self.value(*p);
                    let (_, pc) = pv.dims2()?;
                    if self.nodes[p.0].tracked {
                        let gp = accumulate(grads, *p, pv.shape());
                        for i in 0..r {
                            let src = &gd[i * total + offset..i * total + offset + pc];
                            for (o, gv) in gp[i * pc..(i + 1) * pc].iter_mut().zip(src) {
                                *o += gv;
                            }
                        }
                    }
                    offset += pc;
                }
            }
            Op::SoftmaxRows(a) => {
                let (_, c) = node.value.dims2()?;
                let y = node.value.data();
                let dots: Vec<f64> = y
                    .chunks(c)
                    .zip(gd.chunks(c))
                    .map(|(yr, gr)| yr.iter().zip(gr).map(|(p, q)| p * q).sum())
                    .collect();
                self.add_map(grads, *a, |i| y[i] * (gd[i] - dots[i / c]));
            }
            Op::MaskedSoftmax(a) => {
                let y = node.value.data();
                let dot: f64 = y.iter().zip(gd).map(|(p, q)| p * q).sum();
                self.add_map(grads, *a, |i| y[i] * (gd[i] - dot));
            }
        }
        Ok(())
    }

    fn add_scaled(&self, grads: &mut [Option<Tensor>], v: Var, g: &[f64], c: f64) {
        if !self.nodes[v.0].tracked {
            return;
        }
        let dst = accumulate(grads, v, self.value(v).shape());
        for (o, gv) in dst.iter_mut().zip(g) {
            *o += c * gv;
        }
    }

    fn add_map(&self, grads: &mut [Option<Tensor>], v: Var, f: impl Fn(usize) -> f64) {
        if !self.nodes[v.0].tracked {
            return;
        }
        let dst = accumulate(grads, v, self.value(v).shape());
        for (i, o) in dst.iter_mut().enumerate() {
            *o += f(i);
        }
    }
}

fn accumulate<'g>(grads: &'g mut [Option<Tensor>], v: Var, shape: &[usize]) -> &'g mut [f64] {
    grads[v.0]
        .get_or_insert_with(|| Tensor::zeros(shape))
        .data_mut()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn vec_leaf(tape: &mut Tape, data: &[f64]) -> Var {
        tape.leaf(Tensor::vector(data.to_vec()))
    }

    #[test]
    fn grad_of_sum_is_ones() {
        let mut tape = Tape::new();
        let x = vec_leaf(&mut tape, &[0.5, -1.0, 3.0]);
        let s = tape.sum(x);
        let g = tape.backward(s).unwrap();
        assert_eq!(g.wrt(x).data(), &[1.0, 1.0, 1.0]);
    }

    #[test]
    fn grad_of_dot_self_is_twice_x() {
        let mut tape = Tape::new();
        let x = vec_leaf(&mut tape, &[0.5, -1.0, 3.0]);
        let sq = tape.mul(x, x).unwrap();
        let s = tape.sum(sq);
        let g = tape.backward(s).unwrap();
        assert_eq!(g.wrt(x).data(), &[1.0, -2.0, 6.0]);
    }

    #[test]
    fn untouched_leaf_gets_zero_gradient() {
        let mut tape = Tape::new();
        let x = vec_leaf(&mut tape, &[1.0, 2.0]);
        let unused = tape.leaf(Tensor::zeros(&[2, 2]));
        let s = tape.sum(x);
        let g = tape.backward(s).unwrap();
        assert!(g.get(unused).is_none());
        assert_eq!(g.wrt(unused), Tensor::zeros(&[2, 2]));
    }

    #[test]
    fn non_scalar_loss_is_rejected() {
        let mut tape = Tape::new();
        let x = vec_leaf(&mut tape, &[1.0, 2.0]);
        assert!(matches!(tape.backward(x), Err(TensorError::Shape { .. })));
    }

    #[test]
    fn constants_receive_no_gradient() {
        let mut tape = Tape::new();
        let c = tape.constant(Tensor::vector(vec![1.0, 2.0]));
        let x = vec_leaf(&mut tape, &[3.0, 4.0]);
        let p = tape.mul(c, x).unwrap();
        let s = tape.sum(p);
        let g = tape.backward(s).unwrap();
        assert!(g.get(c).is_none());
        assert_eq!(g.wrt(x).data(), &[1.0, 2.0]);
    }

    #[test]
    fn masked_softmax_on_tape_zeroes_masked_gradient() {
        let mut tape = Tape::new();
        let x = vec_leaf(&mut tape, &[0.1, 0.7, -0.3]);
        let p = tape.masked_softmax(x, &[true, false, true]).unwrap();
        let lp = tape.log(p);
        let pick = tape.pick(lp, 0).unwrap();
        let g = tape.backward(pick).unwrap();
        assert_eq!(g.wrt(x).data()[1], 0.0);
    }

    #[test]
    fn truncate_rolls_back() {
        let mut tape = Tape::new();
        let x = vec_leaf(&mut tape, &[1.0]);
        let mark = tape.len();
        let _ = tape.tanh(x);
        tape.truncate(mark);
        assert_eq!(tape.len(), 1);
    }

    #[test]
    fn add_row_shape_mismatch() {
        let mut tape = Tape::new();
        let m = tape.leaf(Tensor::zeros(&[2, 3]));
        let r = tape.leaf(Tensor::zeros(&[1, 2]));
        assert!(tape.add_row(m, r).is_err());
    }
}
