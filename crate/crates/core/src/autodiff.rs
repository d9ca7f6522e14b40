//! Reverse-mode differentiation over dense `f64` matrices.
//!
//! A [`Tape`] records every operation eagerly as it is called. Nodes are
//! appended in creation order, which is already a topological order, so
//! [`Tape::backward`] simply walks the node list in reverse and applies each
//! node's local chain rule. Gradients accumulate with `+=`, so a value used
//! in several places (the attention mask is broadcast over every row)
//! receives the sum of all its contributions.
//!
//! Tapes are cheap to build and are meant to be thrown away after each
//! optimizer step; trainable state lives in [`Parameter`]s outside the tape.

use ndarray::linalg::general_mat_mul;
use ndarray::{Array2, Axis, Zip};

use crate::error::{Error, Result};

pub type Matrix = Array2<f64>;

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// A named trainable matrix.
#[derive(Clone, Debug, PartialEq)]
pub struct Parameter {
    pub name: String,
    pub value: Matrix,
}

impl Parameter {
    pub fn new(name: impl Into<String>, value: Matrix) -> Self {
        Self {
            name: name.into(),
            value,
        }
    }
}

#[derive(Clone, Debug)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Neg(Var),
    Scale(Var, f64),
    Sigmoid(Var),
    Relu(Var),
    Log(Var),
    LogEps(Var, f64),
    Exp(Var),
    Softplus(Var),
    Sqrt(Var),
    Powf(Var, f64),
    Transpose(Var),
    Broadcast(Var),
    Sum(Var),
    Mean(Var),
    RowSum(Var),
    PairwiseSqDist(Var),
    LogSoftmax(Var),
    Gather(Var, Vec<(usize, usize)>),
}

#[derive(Clone, Debug)]
struct Node {
    data: Matrix,
    grad: Matrix,
    op: Op,
    trainable: bool,
    name: Option<String>,
}

/// Eagerly-recorded computation graph.
#[derive(Clone, Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

fn shape(m: &Matrix) -> (usize, usize) {
    m.dim()
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

pub fn softplus(x: f64) -> f64 {
    if x > 30.0 {
        x + (-x).exp()
    } else {
        x.exp().ln_1p()
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

    fn push(&mut self, data: Matrix, op: Op) -> Var {
        let grad = Matrix::zeros(data.raw_dim());
        self.nodes.push(Node {
            data,
            grad,
            op,
            trainable: false,
            name: None,
        });
        Var(self.nodes.len() - 1)
    }

    /// Non-trainable input.
    pub fn constant(&mut self, data: Matrix) -> Var {
        self.push(data, Op::Leaf)
    }

    /// Trainable leaf holding a copy of the parameter's current value.
    pub fn param(&mut self, p: &Parameter) -> Var {
        let v = self.push(p.value.clone(), Op::Leaf);
        let node = &mut self.nodes[v.0];
        node.trainable = true;
        node.name = Some(p.name.clone());
        v
    }

    pub fn data(&self, v: Var) -> &Matrix {
        &self.nodes[v.0].data
    }

    pub fn grad(&self, v: Var) -> &Matrix {
        &self.nodes[v.0].grad
    }

    pub fn shape(&self, v: Var) -> (usize, usize) {
        shape(&self.nodes[v.0].data)
    }

    pub fn is_trainable(&self, v: Var) -> bool {
        self.nodes[v.0].trainable
    }

    pub fn name(&self, v: Var) -> Option<&str> {
        self.nodes[v.0].name.as_deref()
    }

    /// The single entry of a 1×1 value.
    pub fn scalar(&self, v: Var) -> f64 {
        let d = &self.nodes[v.0].data;
        debug_assert_eq!(d.dim(), (1, 1));
        d[[0, 0]]
    }

    pub fn zero_grad(&mut self) {
        for n in &mut self.nodes {
            n.grad.fill(0.0);
        }
    }

    fn same_shape(&self, op: &'static str, a: Var, b: Var) -> Result<()> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa != sb {
            return Err(Error::Dimension {
                op,
                left: sa,
                right: sb,
            });
        }
        Ok(())
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa.1 != sb.0 {
            return Err(Error::Dimension {
                op: "matmul",
                left: sa,
                right: sb,
            });
        }
        let out = self.data(a).dot(self.data(b));
        Ok(self.push(out, Op::MatMul(a, b)))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("add", a, b)?;
        let out = self.data(a) + self.data(b);
        Ok(self.push(out, Op::Add(a, b)))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("sub", a, b)?;
        let out = self.data(a) - self.data(b);
        Ok(self.push(out, Op::Sub(a, b)))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("mul", a, b)?;
        let out = self.data(a) * self.data(b);
        Ok(self.push(out, Op::Mul(a, b)))
    }

    pub fn neg(&mut self, a: Var) -> Var {
        let out = self.data(a).mapv(|x| -x);
        self.push(out, Op::Neg(a))
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Var {
        let out = self.data(a).mapv(|x| c * x);
        self.push(out, Op::Scale(a, c))
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        let out = self.data(a).mapv(sigmoid);
        self.push(out, Op::Sigmoid(a))
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let out = self.data(a).mapv(|x| x.max(0.0));
        self.push(out, Op::Relu(a))
    }

    /// Natural log; every input entry must be strictly positive.
    pub fn log(&mut self, a: Var) -> Result<Var> {
        if let Some(bad) = self.data(a).iter().find(|&&x| !(x > 0.0)) {
            return Err(Error::Domain {
                op: "log",
                msg: format!("non-positive input {bad}"),
            });
        }
        let out = self.data(a).mapv(f64::ln);
        Ok(self.push(out, Op::Log(a)))
    }

    /// `ln(x + eps)`, for inputs that may touch zero.
    pub fn log_eps(&mut self, a: Var, eps: f64) -> Result<Var> {
        if let Some(bad) = self.data(a).iter().find(|&&x| !(x + eps > 0.0)) {
            return Err(Error::Domain {
                op: "log_eps",
                msg: format!("input {bad} + {eps} is not positive"),
            });
        }
        let out = self.data(a).mapv(|x| (x + eps).ln());
        Ok(self.push(out, Op::LogEps(a, eps)))
    }

    pub fn exp(&mut self, a: Var) -> Var {
        let out = self.data(a).mapv(f64::exp);
        self.push(out, Op::Exp(a))
    }

    pub fn softplus(&mut self, a: Var) -> Var {
        let out = self.data(a).mapv(softplus);
        self.push(out, Op::Softplus(a))
    }

    /// Square root with a zero subgradient at exactly zero.
    ///
    /// Every input that reaches zero in this crate is a squared distance
    /// whose own derivative vanishes there, so the product is zero either way.
    pub fn sqrt(&mut self, a: Var) -> Result<Var> {
        if let Some(bad) = self.data(a).iter().find(|&&x| !(x >= 0.0)) {
            return Err(Error::Domain {
                op: "sqrt",
                msg: format!("negative input {bad}"),
            });
        }
        let out = self.data(a).mapv(f64::sqrt);
        Ok(self.push(out, Op::Sqrt(a)))
    }

    /// `x^p`. Non-integer or negative exponents require positive inputs.
    pub fn powf(&mut self, a: Var, p: f64) -> Result<Var> {
        if p < 0.0 || p.fract() != 0.0 {
            if let Some(bad) = self.data(a).iter().find(|&&x| !(x > 0.0)) {
                return Err(Error::Domain {
                    op: "powf",
                    msg: format!("input {bad} with exponent {p}"),
                });
            }
        }
        let out = self.data(a).mapv(|x| x.powf(p));
        Ok(self.push(out, Op::Powf(a, p)))
    }

    pub fn transpose(&mut self, a: Var) -> Var {
        let out = self.data(a).t().to_owned();
        self.push(out, Op::Transpose(a))
    }

    /// Expands a 1×1, 1×c or r×1 value to `rows × cols`.
    pub fn broadcast(&mut self, a: Var, rows: usize, cols: usize) -> Result<Var> {
        let (r, c) = self.shape(a);
        if !((r == 1 || r == rows) && (c == 1 || c == cols)) {
            return Err(Error::Dimension {
                op: "broadcast",
                left: (r, c),
                right: (rows, cols),
            });
        }
        let out = self
            .data(a)
            .broadcast((rows, cols))
            .expect("checked broadcast shape")
            .to_owned();
        Ok(self.push(out, Op::Broadcast(a)))
    }

    /// Multiplies every entry of `a` by the 1×1 value `s`.
    pub fn mul_scalar(&mut self, a: Var, s: Var) -> Result<Var> {
        let (r, c) = self.shape(a);
        if self.shape(s) != (1, 1) {
            return Err(Error::Dimension {
                op: "mul_scalar",
                left: (r, c),
                right: self.shape(s),
            });
        }
        let b = self.broadcast(s, r, c)?;
        self.mul(a, b)
    }

    /// Adds the 1×1 value `s` to every entry of `a`.
    pub fn add_scalar(&mut self, a: Var, s: Var) -> Result<Var> {
        let (r, c) = self.shape(a);
        if self.shape(s) != (1, 1) {
            return Err(Error::Dimension {
                op: "add_scalar",
                left: (r, c),
                right: self.shape(s),
            });
        }
        let b = self.broadcast(s, r, c)?;
        self.add(a, b)
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let s = self.data(a).sum();
        self.push(Matrix::from_elem((1, 1), s), Op::Sum(a))
    }

    pub fn mean(&mut self, a: Var) -> Var {
        let d = self.data(a);
        let s = d.sum() / d.len() as f64;
        self.push(Matrix::from_elem((1, 1), s), Op::Mean(a))
    }

    /// Sums each row into an r×1 column.
    pub fn row_sum(&mut self, a: Var) -> Var {
        let out = self.data(a).sum_axis(Axis(1)).insert_axis(Axis(1));
        self.push(out, Op::RowSum(a))
    }

    /// Squared Euclidean distances between the rows of `a`.
    ///
    /// The result is exactly symmetric with an exactly zero diagonal.
    pub fn pairwise_sq_dist(&mut self, a: Var) -> Var {
        let x = self.data(a);
        let n = x.nrows();
        let mut out = Matrix::zeros((n, n));
        for i in 0..n {
            let xi = x.row(i);
            for j in (i + 1)..n {
                let d: f64 = xi
                    .iter()
                    .zip(x.row(j).iter())
                    .map(|(p, q)| (p - q) * (p - q))
                    .sum();
                out[[i, j]] = d;
                out[[j, i]] = d;
            }
        }
        self.push(out, Op::PairwiseSqDist(a))
    }

    /// Row-wise numerically stable log-softmax.
    pub fn log_softmax(&mut self, a: Var) -> Var {
        let mut out = self.data(a).clone();
        for mut row in out.rows_mut() {
            let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let lse = max + row.iter().map(|x| (x - max).exp()).sum::<f64>().ln();
            row.mapv_inplace(|x| x - lse);
        }
        self.push(out, Op::LogSoftmax(a))
    }

    /// Picks `(row, col)` entries into a k×1 column.
    pub fn gather(&mut self, a: Var, index: Vec<(usize, usize)>) -> Result<Var> {
        let (r, c) = self.shape(a);
        if let Some(&(i, j)) = index.iter().find(|&&(i, j)| i >= r || j >= c) {
            return Err(Error::Dimension {
                op: "gather",
                left: (r, c),
                right: (i, j),
            });
        }
        let d = self.data(a);
        let out = Matrix::from_shape_fn((index.len(), 1), |(k, _)| {
            let (i, j) = index[k];
            d[[i, j]]
        });
        Ok(self.push(out, Op::Gather(a, index)))
    }

    /// Accumulates `∂root/∂v` into every node reachable from `root`.
    ///
    /// Callers zero gradients between independent passes.
    pub fn backward(&mut self, root: Var) -> Result<()> {
        if self.shape(root) != (1, 1) {
            return Err(Error::Contract(format!(
                "backward requires a 1x1 root, got {:?}",
                self.shape(root)
            )));
        }
        self.nodes[root.0].grad[[0, 0]] += 1.0;
        for i in (0..=root.0).rev() {
            let (before, rest) = self.nodes.split_at_mut(i);
            let node = &rest[0];
            let g = &node.grad;
            match &node.op {
                Op::Leaf => {}
                Op::MatMul(a, b) => {
                    let (a, b) = (a.0, b.0);
                    let bd = before[b].data.clone();
                    general_mat_mul(1.0, g, &bd.t(), 1.0, &mut before[a].grad);
                    let ad = before[a].data.clone();
                    general_mat_mul(1.0, &ad.t(), g, 1.0, &mut before[b].grad);
                }
                Op::Add(a, b) => {
                    before[a.0].grad += g;
                    before[b.0].grad += g;
                }
                Op::Sub(a, b) => {
                    before[a.0].grad += g;
                    before[b.0].grad -= g;
                }
                Op::Mul(a, b) => {
                    let (a, b) = (a.0, b.0);
                    if a == b {
                        let x = before[a].data.clone();
                        Zip::from(&mut before[a].grad)
                            .and(g)
                            .and(&x)
                            .for_each(|ga, &g, &x| *ga += 2.0 * g * x);
                    } else {
                        let bd = before[b].data.clone();
                        Zip::from(&mut before[a].grad)
                            .and(g)
                            .and(&bd)
                            .for_each(|ga, &g, &y| *ga += g * y);
                        let ad = before[a].data.clone();
                        Zip::from(&mut before[b].grad)
                            .and(g)
                            .and(&ad)
                            .for_each(|gb, &g, &x| *gb += g * x);
                    }
                }
                Op::Neg(a) => before[a.0].grad -= g,
                Op::Scale(a, c) => before[a.0].grad.scaled_add(*c, g),
                Op::Sigmoid(a) => {
                    Zip::from(&mut before[a.0].grad)
                        .and(g)
                        .and(&node.data)
                        .for_each(|ga, &g, &s| *ga += g * s * (1.0 - s));
                }
                Op::Relu(a) => {
                    let src = &mut before[a.0];
                    Zip::from(&mut src.grad)
                        .and(g)
                        .and(&src.data)
                        .for_each(|ga, &g, &x| {
                            if x > 0.0 {
                                *ga += g
                            }
                        });
                }
                Op::Log(a) => {
                    let src = &mut before[a.0];
                    Zip::from(&mut src.grad)
                        .and(g)
                        .and(&src.data)
                        .for_each(|ga, &g, &x| *ga += g / x);
                }
                Op::LogEps(a, eps) => {
                    let src = &mut before[a.0];
                    Zip::from(&mut src.grad)
                        .and(g)
                        .and(&src.data)
                        .for_each(|ga, &g, &x| *ga += g / (x + eps));
                }
                Op::Exp(a) => {
                    Zip::from(&mut before[a.0].grad)
                        .and(g)
                        .and(&node.data)
                        .for_each(|ga, &g, &e| *ga += g * e);
                }
                Op::Softplus(a) => {
                    let src = &mut before[a.0];
                    Zip::from(&mut src.grad)
                        .and(g)
                        .and(&src.data)
                        .for_each(|ga, &g, &x| *ga += g * sigmoid(x));
                }
                Op::Sqrt(a) => {
                    Zip::from(&mut before[a.0].grad)
                        .and(g)
                        .and(&node.data)
                        .for_each(|ga, &g, &r| {
                            if r > 0.0 {
                                *ga += g * 0.5 / r
                            }
                        });
                }
                Op::Powf(a, p) => {
                    let src = &mut before[a.0];
                    Zip::from(&mut src.grad)
                        .and(g)
                        .and(&src.data)
                        .for_each(|ga, &g, &x| *ga += g * p * x.powf(p - 1.0));
                }
                Op::Transpose(a) => before[a.0].grad += &g.t(),
                Op::Broadcast(a) => {
                    let src = &mut before[a.0];
                    let (r, c) = src.grad.dim();
                    let (gr, gc) = g.dim();
                    let mut red = g.to_owned();
                    if r == 1 && gr != 1 {
                        red = red.sum_axis(Axis(0)).insert_axis(Axis(0));
                    }
                    if c == 1 && gc != 1 {
                        red = red.sum_axis(Axis(1)).insert_axis(Axis(1));
                    }
                    src.grad += &red;
                }
                Op::Sum(a) => {
                    let up = g[[0, 0]];
                    before[a.0].grad.mapv_inplace(|x| x + up);
                }
                Op::Mean(a) => {
                    let src = &mut before[a.0];
                    let up = g[[0, 0]] / src.grad.len() as f64;
                    src.grad.mapv_inplace(|x| x + up);
                }
                Op::RowSum(a) => {
                    let src = &mut before[a.0];
                    src.grad += &g.broadcast(src.grad.raw_dim()).expect("r x 1 column");
                }
                Op::PairwiseSqDist(a) => {
                    // d/dx_i = 2 * sum_j (G_ij + G_ji)(x_i - x_j)
                    let src = &mut before[a.0];
                    let sym = g + &g.t();
                    let deg = sym.sum_axis(Axis(1));
                    let mut upd = &src.data * &deg.insert_axis(Axis(1));
                    general_mat_mul(-1.0, &sym, &src.data, 1.0, &mut upd);
                    src.grad.scaled_add(2.0, &upd);
                }
                Op::LogSoftmax(a) => {
                    let src = &mut before[a.0];
                    for ((mut ga, gr), out) in src
                        .grad
                        .rows_mut()
                        .into_iter()
                        .zip(g.rows())
                        .zip(node.data.rows())
                    {
                        let total: f64 = gr.sum();
                        for ((x, &gi), &o) in ga.iter_mut().zip(gr.iter()).zip(out.iter()) {
                            *x += gi - o.exp() * total;
                        }
                    }
                }
                Op::Gather(a, index) => {
                    let src = &mut before[a.0];
                    for (k, &(i, j)) in index.iter().enumerate() {
                        src.grad[[i, j]] += g[[k, 0]];
                    }
                }
            }
        }
        Ok(())
    }
}
