//! Dense graph-convolutional node classifier over the learned graph.

use rand::Rng;

use crate::autodiff::{Matrix, Parameter, Tape, Var};
use crate::error::{Error, Result};
use crate::glm::{glorot, LatentGraph};

#[derive(Clone, Debug, PartialEq)]
pub struct ClassifierParams {
    pub conv1: Parameter,
    pub conv2: Parameter,
    pub fc_w: Parameter,
    pub fc_b: Parameter,
}

#[derive(Clone, Copy, Debug)]
pub struct ClassifierVars {
    pub conv1: Var,
    pub conv2: Var,
    pub fc_w: Var,
    pub fc_b: Var,
}

impl ClassifierVars {
    pub fn all(&self) -> [Var; 4] {
        [self.conv1, self.conv2, self.fc_w, self.fc_b]
    }
}

impl ClassifierParams {
    /// Each layer draws from its own generator so widths can change independently.
    pub fn init<R: Rng + ?Sized>(
        input: usize,
        hidden1: usize,
        hidden2: usize,
        classes: usize,
        rngs: [&mut R; 3],
    ) -> Self {
        let [r1, r2, r3] = rngs;
        Self {
            conv1: Parameter::new("cls.conv1", glorot(input, hidden1, r1)),
            conv2: Parameter::new("cls.conv2", glorot(hidden1, hidden2, r2)),
            fc_w: Parameter::new("cls.fc_w", glorot(hidden2, classes, r3)),
            fc_b: Parameter::new("cls.fc_b", Matrix::zeros((1, classes))),
        }
    }

    pub fn register(&self, tape: &mut Tape) -> ClassifierVars {
        ClassifierVars {
            conv1: tape.param(&self.conv1),
            conv2: tape.param(&self.conv2),
            fc_w: tape.param(&self.fc_w),
            fc_b: tape.param(&self.fc_b),
        }
    }

    pub fn params(&self) -> [&Parameter; 4] {
        [&self.conv1, &self.conv2, &self.fc_w, &self.fc_b]
    }

    pub fn params_mut(&mut self) -> [&mut Parameter; 4] {
        [&mut self.conv1, &mut self.conv2, &mut self.fc_w, &mut self.fc_b]
    }
}

/// `D̂^{-1/2} (G' + I) D̂^{-1/2}` with `D̂` the row sums of `G' + I`.
pub fn normalize_graph(tape: &mut Tape, g: &LatentGraph) -> Result<Var> {
    let (n, _) = tape.shape(g.weights);
    let eye = tape.constant(Matrix::eye(n));
    let a_hat = tape.add(g.weights, eye)?;
    normalize_adjacency(tape, a_hat)
}

/// Symmetric normalization of an adjacency that already carries self-loops.
pub fn normalize_adjacency(tape: &mut Tape, a_hat: Var) -> Result<Var> {
    let (n, m) = tape.shape(a_hat);
    if n != m {
        return Err(Error::Dimension {
            op: "normalize_adjacency",
            left: (n, m),
            right: (m, n),
        });
    }
    let deg = tape.row_sum(a_hat);
    let inv_sqrt = tape.powf(deg, -0.5)?;
    let inv_sqrt_t = tape.transpose(inv_sqrt);
    let outer = tape.matmul(inv_sqrt, inv_sqrt_t)?;
    tape.mul(a_hat, outer)
}

/// Inverted dropout mask applied as a constant multiplier.
pub struct Dropout<'a, R: Rng + ?Sized> {
    pub rate: f64,
    pub rng: &'a mut R,
}

fn dropout<R: Rng + ?Sized>(tape: &mut Tape, x: Var, drop: &mut Option<Dropout<'_, R>>) -> Result<Var> {
    match drop {
        Some(d) if d.rate > 0.0 => {
            let keep = 1.0 - d.rate;
            let shape = tape.shape(x);
            let mask = Matrix::from_shape_simple_fn(shape, || {
                if d.rng.random::<f64>() < keep {
                    1.0 / keep
                } else {
                    0.0
                }
            });
            let m = tape.constant(mask);
            tape.mul(x, m)
        }
        _ => Ok(x),
    }
}

fn check_shapes(tape: &Tape, x: Var, ghat: Var, p: &ClassifierVars) -> Result<()> {
    let (n, d) = tape.shape(x);
    let (gr, gc) = tape.shape(ghat);
    if gr != n || gc != n {
        return Err(Error::Config(format!(
            "graph is {gr}x{gc} but features have {n} rows"
        )));
    }
    let (w_in, h1) = tape.shape(p.conv1);
    if w_in != d {
        return Err(Error::Config(format!(
            "classifier expects {w_in} input columns, got {d}"
        )));
    }
    let (h1b, h2) = tape.shape(p.conv2);
    let (h2b, c) = tape.shape(p.fc_w);
    if h1b != h1 || h2b != h2 || tape.shape(p.fc_b) != (1, c) {
        return Err(Error::Config("classifier layer widths are inconsistent".into()));
    }
    Ok(())
}

/// Logits from a pre-normalized graph: two ReLU graph convolutions and a per-node linear head.
pub fn forward_normalized<R: Rng + ?Sized>(
    tape: &mut Tape,
    x: Var,
    ghat: Var,
    p: &ClassifierVars,
    mut drop: Option<Dropout<'_, R>>,
) -> Result<Var> {
    check_shapes(tape, x, ghat, p)?;
    let x = dropout(tape, x, &mut drop)?;
    let xw = tape.matmul(x, p.conv1)?;
    let h1 = tape.matmul(ghat, xw)?;
    let h1 = tape.relu(h1);
    let h1 = dropout(tape, h1, &mut drop)?;
    let hw = tape.matmul(h1, p.conv2)?;
    let h2 = tape.matmul(ghat, hw)?;
    let h2 = tape.relu(h2);
    let out = tape.matmul(h2, p.fc_w)?;
    let (n, c) = tape.shape(out);
    let bias = tape.broadcast(p.fc_b, n, c)?;
    tape.add(out, bias)
}

/// Normalizes `g` and runs the classifier without dropout.
pub fn forward(tape: &mut Tape, x: Var, g: &LatentGraph, p: &ClassifierVars) -> Result<Var> {
    let ghat = normalize_graph(tape, g)?;
    forward_normalized::<rand_chacha::ChaCha8Rng>(tape, x, ghat, p, None)
}

/// Row-wise softmax of plain logits.
pub fn softmax_rows(logits: &Matrix) -> Matrix {
    let mut out = logits.clone();
    for mut row in out.rows_mut() {
        let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        row.mapv_inplace(|v| (v - max).exp());
        let s = row.sum();
        row.mapv_inplace(|v| v / s);
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn params(d: usize, c: usize, seed: u64) -> ClassifierParams {
        let mut a = ChaCha8Rng::seed_from_u64(seed);
        let mut b = ChaCha8Rng::seed_from_u64(seed + 1);
        let mut e = ChaCha8Rng::seed_from_u64(seed + 2);
        ClassifierParams::init(d, 32, 16, c, [&mut a, &mut b, &mut e])
    }

    #[test]
    fn two_node_hand_normalization() {
        let mut t = Tape::new();
        let w = t.constant(array![[1.0, 1.0], [1.0, 1.0]]);
        let g = normalize_graph(&mut t, &LatentGraph { weights: w }).unwrap();
        let expect = array![[2.0 / 3.0, 1.0 / 3.0], [1.0 / 3.0, 2.0 / 3.0]];
        for (a, b) in t.data(g).iter().zip(expect.iter()) {
            assert!((a - b).abs() < 1e-15);
        }
    }

    #[test]
    fn empty_graph_normalizes_to_identity() {
        let mut t = Tape::new();
        let w = t.constant(Matrix::from_elem((4, 4), 1e-300));
        let g = normalize_graph(&mut t, &LatentGraph { weights: w }).unwrap();
        for ((i, j), &v) in t.data(g).indexed_iter() {
            let e = if i == j { 1.0 } else { 0.0 };
            assert!((v - e).abs() < 1e-15);
        }
    }

    #[test]
    fn zero_weights_give_uniform_softmax() {
        let mut p = params(5, 3, 0);
        for q in p.params_mut() {
            q.value.fill(0.0);
        }
        let mut t = Tape::new();
        let x = t.constant(Matrix::from_elem((4, 5), 0.9));
        let w = t.constant(Matrix::from_elem((4, 4), 0.5));
        let v = p.register(&mut t);
        let logits = forward(&mut t, x, &LatentGraph { weights: w }, &v).unwrap();
        assert!(t.data(logits).iter().all(|&z| z == 0.0));
        let sm = softmax_rows(t.data(logits));
        assert!(sm.iter().all(|&s| (s - 1.0 / 3.0).abs() < 1e-15));
    }

    #[test]
    fn identity_graph_is_local() {
        let p = params(5, 3, 9);
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let x0 = glorot(6, 5, &mut rng);
        let run = |x: &Matrix| {
            let mut t = Tape::new();
            let xv = t.constant(x.clone());
            let g = t.constant(Matrix::eye(6));
            let v = p.register(&mut t);
            let out = forward_normalized::<ChaCha8Rng>(&mut t, xv, g, &v, None).unwrap();
            t.data(out).clone()
        };
        let base = run(&x0);
        let mut x1 = x0.clone();
        x1.row_mut(3).fill(17.0);
        let moved = run(&x1);
        for i in 0..6 {
            if i != 3 {
                assert_eq!(base.row(i), moved.row(i));
            }
        }
        assert_ne!(base.row(3), moved.row(3));
    }

    #[test]
    fn shape_mismatch_is_config_error() {
        let p = params(5, 3, 1);
        let mut t = Tape::new();
        let x = t.constant(Matrix::zeros((4, 6)));
        let g = t.constant(Matrix::eye(4));
        let v = p.register(&mut t);
        assert!(matches!(
            forward_normalized::<ChaCha8Rng>(&mut t, x, g, &v, None),
            Err(Error::Config(_))
        ));
    }
}
