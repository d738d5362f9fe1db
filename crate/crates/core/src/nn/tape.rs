//! Reverse-mode differentiation over matrix-valued nodes.
//!
//! A [`Tape`] records every operation of a forward pass as a node holding
//! its value. [`Tape::backward`] walks the nodes in reverse and accumulates
//! exact gradients into a [`Gradients`] buffer for every parameter that was
//! read through [`Tape::param`]. Rows are independent samples throughout.

use std::collections::HashMap;

use super::store::{Gradients, ParamId, ParamStore};
use super::tensor::Tensor;
use crate::error::{Error, Result};

/// Handle to a node on a tape.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(usize);

#[derive(Debug)]
enum Op {
    Input,
    Param(ParamId),
    MatMul(Var, Var),
    AddRow(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Min(Var, Var),
    Sigmoid(Var),
    Tanh(Var),
    Exp(Var),
    Square(Var),
    Affine(Var, f64),
    MulConst(Var, Tensor),
    Clamp(Var, f64, f64),
    Sum(Var),
    SumCols(Var),
    BroadcastRows(Var),
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
}

pub struct Tape<'a> {
    store: &'a ParamStore,
    nodes: Vec<Node>,
    params: HashMap<ParamId, Var>,
}

impl<'a> Tape<'a> {
    pub fn new(store: &'a ParamStore) -> Self {
        Self { store, nodes: Vec::new(), params: HashMap::new() }
    }

    pub fn store(&self) -> &'a ParamStore {
        self.store
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

    fn push(&mut self, value: Tensor, op: Op) -> Var {
        self.nodes.push(Node { value, op });
        Var(self.nodes.len() - 1)
    }

    fn shape(&self, v: Var) -> (usize, usize) {
        self.nodes[v.0].value.shape()
    }

    fn same_shape(&self, a: Var, b: Var, what: &str) -> Result<()> {
        if self.shape(a) != self.shape(b) {
            return Err(Error::Shape(format!(
                "{what}: {:?} vs {:?}",
                self.shape(a),
                self.shape(b)
            )));
        }
        Ok(())
    }

    /// Constant input; receives no gradient.
    pub fn input(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Input)
    }

    /// Parameter leaf. Each parameter is copied onto the tape once.
    pub fn param(&mut self, id: ParamId) -> Var {
        if let Some(&v) = self.params.get(&id) {
            return v;
        }
        let v = self.push(self.store.get(id).clone(), Op::Param(id));
        self.params.insert(id, v);
        v
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let value = self.value(a).matmul(self.value(b))?;
        Ok(self.push(value, Op::MatMul(a, b)))
    }

    /// Adds a `1 x n` row to every row of `a`.
    pub fn add_row(&mut self, a: Var, row: Var) -> Result<Var> {
        let (_, n) = self.shape(a);
        if self.shape(row) != (1, n) {
            return Err(Error::Shape(format!(
                "add_row: {:?} plus {:?}",
                self.shape(a),
                self.shape(row)
            )));
        }
        let mut value = self.value(a).clone();
        let r = self.value(row).data().to_vec();
        for chunk in value.data_mut().chunks_mut(n.max(1)) {
            for (v, b) in chunk.iter_mut().zip(&r) {
                *v += b;
            }
        }
        Ok(self.push(value, Op::AddRow(a, row)))
    }

    fn zip_with(&mut self, a: Var, b: Var, f: impl Fn(f64, f64) -> f64, op: Op) -> Result<Var> {
        self.same_shape(a, b, "elementwise")?;
        let (r, c) = self.shape(a);
        let data = self
            .value(a)
            .data()
            .iter()
            .zip(self.value(b).data())
            .map(|(&x, &y)| f(x, y))
            .collect();
        Ok(self.push(Tensor::from_vec(r, c, data)?, op))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip_with(a, b, |x, y| x + y, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip_with(a, b, |x, y| x - y, Op::Sub(a, b))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip_with(a, b, |x, y| x * y, Op::Mul(a, b))
    }

    /// Elementwise minimum; ties send the gradient to `a`.
    pub fn min(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip_with(a, b, f64::min, Op::Min(a, b))
    }

    fn unary(&mut self, a: Var, f: impl Fn(f64) -> f64, op: Op) -> Var {
        let value = self.value(a).map(f);
        self.push(value, op)
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        self.unary(a, |x| 1.0 / (1.0 + (-x).exp()), Op::Sigmoid(a))
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        self.unary(a, f64::tanh, Op::Tanh(a))
    }

    pub fn exp(&mut self, a: Var) -> Var {
        self.unary(a, f64::exp, Op::Exp(a))
    }

    pub fn square(&mut self, a: Var) -> Var {
        self.unary(a, |x| x * x, Op::Square(a))
    }

    /// `scale * a + shift`.
    pub fn affine(&mut self, a: Var, scale: f64, shift: f64) -> Var {
        self.unary(a, |x| scale * x + shift, Op::Affine(a, scale))
    }

    pub fn scale(&mut self, a: Var, s: f64) -> Var {
        self.affine(a, s, 0.0)
    }

    /// Elementwise product with a constant of the same shape.
    pub fn mul_const(&mut self, a: Var, c: Tensor) -> Result<Var> {
        if self.shape(a) != c.shape() {
            return Err(Error::Shape(format!(
                "mul_const: {:?} vs {:?}",
                self.shape(a),
                c.shape()
            )));
        }
        let (r, cols) = c.shape();
        let data = self.value(a).data().iter().zip(c.data()).map(|(x, y)| x * y).collect();
        Ok(self.push(Tensor::from_vec(r, cols, data)?, Op::MulConst(a, c)))
    }

    /// `a - c` for a constant `c` of the same shape.
    pub fn sub_const(&mut self, a: Var, c: &Tensor) -> Result<Var> {
        let k = self.input(c.clone());
        self.sub(a, k)
    }

    pub fn clamp(&mut self, a: Var, lo: f64, hi: f64) -> Var {
        self.unary(a, |x| x.clamp(lo, hi), Op::Clamp(a, lo, hi))
    }

    /// Sum of all entries as a `1 x 1` node.
    pub fn sum(&mut self, a: Var) -> Var {
        let s = self.value(a).data().iter().sum();
        self.push(Tensor::filled(1, 1, s), Op::Sum(a))
    }

    pub fn mean(&mut self, a: Var) -> Var {
        let n = self.value(a).len().max(1) as f64;
        let s = self.sum(a);
        self.scale(s, 1.0 / n)
    }

    /// Row sums as an `m x 1` column.
    pub fn sum_cols(&mut self, a: Var) -> Var {
        let t = self.value(a);
        let data: Vec<f64> = (0..t.rows()).map(|r| t.row_slice(r).iter().sum()).collect();
        let m = data.len();
        self.push(Tensor::from_vec(m, 1, data).expect("row sums"), Op::SumCols(a))
    }

    /// Repeats a `1 x n` row `m` times.
    pub fn broadcast_rows(&mut self, a: Var, m: usize) -> Result<Var> {
        let (r, n) = self.shape(a);
        if r != 1 {
            return Err(Error::Shape(format!("broadcast_rows needs one row, got {r}")));
        }
        let row = self.value(a).data().to_vec();
        let data = (0..m).flat_map(|_| row.iter().copied()).collect();
        Ok(self.push(Tensor::from_vec(m, n, data)?, Op::BroadcastRows(a)))
    }

    /// Backpropagates a scalar loss and accumulates parameter gradients.
    pub fn backward(&self, loss: Var, grads: &mut Gradients) -> Result<()> {
        if loss.0 >= self.nodes.len() {
            return Err(Error::InvalidArgument("backward without a recorded forward pass".into()));
        }
        if self.shape(loss) != (1, 1) {
            return Err(Error::Shape(format!(
                "backward needs a scalar loss, got {:?}",
                self.shape(loss)
            )));
        }
        self.backward_from(loss, Tensor::filled(1, 1, 1.0), grads)
    }

    /// Backpropagates an upstream gradient `seed` for node `out`.
    pub fn backward_from(&self, out: Var, seed: Tensor, grads: &mut Gradients) -> Result<()> {
        if self.nodes.is_empty() || out.0 >= self.nodes.len() {
            return Err(Error::InvalidArgument("backward without a recorded forward pass".into()));
        }
        if seed.shape() != self.shape(out) {
            return Err(Error::Shape(format!(
                "seed {:?} for node {:?}",
                seed.shape(),
                self.shape(out)
            )));
        }
        if grads.len() != self.store.len() {
            return Err(Error::Shape("gradient buffer does not match the store".into()));
        }
        let mut adj: Vec<Option<Tensor>> = Vec::with_capacity(out.0 + 1);
        adj.resize_with(out.0 + 1, || None);
        adj[out.0] = Some(seed);

        fn acc(adj: &mut [Option<Tensor>], v: Var, g: Tensor) {
            match &mut adj[v.0] {
                Some(t) => t.add_assign(&g),
                slot => *slot = Some(g),
            }
        }

        for i in (0..=out.0).rev() {
            let Some(g) = adj[i].take() else { continue };
            let node = &self.nodes[i];
            match &node.op {
                Op::Input => {}
                Op::Param(id) => grads.get_mut(*id).add_assign(&g),
                Op::MatMul(a, b) => {
                    let da = g.matmul_bt(self.value(*b));
                    let db = self.value(*a).matmul_at(&g);
                    acc(&mut adj, *a, da);
                    acc(&mut adj, *b, db);
                }
                Op::AddRow(a, r) => {
                    let n = g.cols();
                    let mut dr = vec![0.0; n];
                    for chunk in g.data().chunks(n.max(1)) {
                        for (d, v) in dr.iter_mut().zip(chunk) {
                            *d += v;
                        }
                    }
                    acc(&mut adj, *r, Tensor::row(dr));
                    acc(&mut adj, *a, g);
                }
                Op::Add(a, b) => {
                    acc(&mut adj, *b, g.clone());
                    acc(&mut adj, *a, g);
                }
                Op::Sub(a, b) => {
                    acc(&mut adj, *b, g.map(|v| -v));
                    acc(&mut adj, *a, g);
                }
                Op::Mul(a, b) => {
                    let da = zip(&g, self.value(*b), |g, y| g * y);
                    let db = zip(&g, self.value(*a), |g, x| g * x);
                    acc(&mut adj, *a, da);
                    acc(&mut adj, *b, db);
                }
                Op::Min(a, b) => {
                    let (x, y) = (self.value(*a), self.value(*b));
                    let pick_a: Vec<bool> =
                        x.data().iter().zip(y.data()).map(|(x, y)| x <= y).collect();
                    let da = mask(&g, &pick_a, true);
                    let db = mask(&g, &pick_a, false);
                    acc(&mut adj, *a, da);
                    acc(&mut adj, *b, db);
                }
                Op::Sigmoid(a) => acc(&mut adj, *a, zip(&g, &node.value, |g, s| g * s * (1.0 - s))),
                Op::Tanh(a) => acc(&mut adj, *a, zip(&g, &node.value, |g, t| g * (1.0 - t * t))),
                Op::Exp(a) => acc(&mut adj, *a, zip(&g, &node.value, |g, e| g * e)),
                Op::Square(a) => acc(&mut adj, *a, zip(&g, self.value(*a), |g, x| 2.0 * g * x)),
                Op::Affine(a, s) => acc(&mut adj, *a, g.map(|v| v * s)),
                Op::MulConst(a, c) => acc(&mut adj, *a, zip(&g, c, |g, c| g * c)),
                Op::Clamp(a, lo, hi) => {
                    let d = zip(&g, self.value(*a), |g, x| if x >= *lo && x <= *hi { g } else { 0.0 });
                    acc(&mut adj, *a, d);
                }
                Op::Sum(a) => {
                    let (r, c) = self.shape(*a);
                    acc(&mut adj, *a, Tensor::filled(r, c, g.data()[0]));
                }
                Op::SumCols(a) => {
                    let (r, c) = self.shape(*a);
                    let data = (0..r).flat_map(|i| std::iter::repeat_n(g.data()[i], c)).collect();
                    acc(&mut adj, *a, Tensor::from_vec(r, c, data)?);
                }
                Op::BroadcastRows(a) => {
                    let n = g.cols();
                    let mut d = vec![0.0; n];
                    for chunk in g.data().chunks(n.max(1)) {
                        for (x, v) in d.iter_mut().zip(chunk) {
                            *x += v;
                        }
                    }
                    acc(&mut adj, *a, Tensor::row(d));
                }
            }
        }
        Ok(())
    }
}

fn zip(a: &Tensor, b: &Tensor, f: impl Fn(f64, f64) -> f64) -> Tensor {
    let data = a.data().iter().zip(b.data()).map(|(&x, &y)| f(x, y)).collect();
    Tensor::from_vec(a.rows(), a.cols(), data).expect("same shape")
}

fn mask(g: &Tensor, pick: &[bool], keep: bool) -> Tensor {
    let data = g
        .data()
        .iter()
        .zip(pick)
        .map(|(&v, &p)| if p == keep { v } else { 0.0 })
        .collect();
    Tensor::from_vec(g.rows(), g.cols(), data).expect("same shape")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sum_of_squares_gradient_is_twice_param() {
        let mut store = ParamStore::new();
        let p = store.add("p", Tensor::row(vec![1.0, -2.0, 0.5])).unwrap();
        let q = store.add("q", Tensor::row(vec![3.0])).unwrap();
        let mut tape = Tape::new(&store);
        let x = tape.param(p);
        let sq = tape.square(x);
        let loss = tape.sum(sq);
        let mut grads = store.zero_grads();
        tape.backward(loss, &mut grads).unwrap();
        assert_eq!(grads.get(p).data(), &[2.0, -4.0, 1.0]);
        assert_eq!(grads.get(q).data(), &[0.0]);
    }

    #[test]
    fn backward_without_forward_rejected() {
        let mut store = ParamStore::new();
        store.add("p", Tensor::row(vec![1.0])).unwrap();
        let tape = Tape::new(&store);
        let mut grads = store.zero_grads();
        assert!(tape.backward(Var(0), &mut grads).is_err());
    }

    #[test]
    fn non_scalar_loss_rejected() {
        let mut store = ParamStore::new();
        let p = store.add("p", Tensor::row(vec![1.0, 2.0])).unwrap();
        let mut tape = Tape::new(&store);
        let x = tape.param(p);
        let mut grads = store.zero_grads();
        assert!(tape.backward(x, &mut grads).is_err());
    }

    #[test]
    fn min_and_clamp_route_gradients() {
        let mut store = ParamStore::new();
        let a = store.add("a", Tensor::row(vec![1.0, 5.0, 0.5])).unwrap();
        let b = store.add("b", Tensor::row(vec![2.0, 3.0, 0.5])).unwrap();
        let mut tape = Tape::new(&store);
        let (va, vb) = (tape.param(a), tape.param(b));
        let m = tape.min(va, vb).unwrap();
        let c = tape.clamp(va, 0.8, 1.2);
        let s = tape.add(m, c).unwrap();
        let loss = tape.sum(s);
        let mut grads = store.zero_grads();
        tape.backward(loss, &mut grads).unwrap();
        assert_eq!(grads.get(a).data(), &[2.0, 0.0, 1.0]);
        assert_eq!(grads.get(b).data(), &[0.0, 1.0, 0.0]);
    }
}
