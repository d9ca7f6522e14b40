//! Latent graph learning: an embedding MLP followed by a sigmoid soft
//! threshold on pairwise embedding distances.

use rand::Rng;

use crate::autodiff::{softplus, Matrix, Parameter, Tape, Var};
use crate::error::{Error, Result};

/// `softplus⁻¹(2.0)`, so the initial temperature is 2.
pub const T_RAW_INIT: f64 = 1.854_586_542_131_141_3;

pub(crate) fn glorot<R: Rng + ?Sized>(rows: usize, cols: usize, rng: &mut R) -> Matrix {
    let limit = (6.0 / (rows + cols) as f64).sqrt();
    Matrix::from_shape_simple_fn((rows, cols), || rng.random_range(-limit..=limit))
}

#[derive(Clone, Debug, PartialEq)]
pub struct GlmParams {
    pub w1: Parameter,
    pub b1: Parameter,
    pub w2: Parameter,
    pub b2: Parameter,
    /// Temperature before softplus.
    pub t_raw: Parameter,
    pub theta: Parameter,
}

/// Tape handles for [`GlmParams`].
#[derive(Clone, Copy, Debug)]
pub struct GlmVars {
    pub w1: Var,
    pub b1: Var,
    pub w2: Var,
    pub b2: Var,
    pub t_raw: Var,
    pub theta: Var,
}

impl GlmParams {
    pub fn init<R: Rng + ?Sized>(input: usize, hidden: usize, out: usize, rng: &mut R) -> Self {
        Self {
            w1: Parameter::new("glm.w1", glorot(input, hidden, rng)),
            b1: Parameter::new("glm.b1", Matrix::zeros((1, hidden))),
            w2: Parameter::new("glm.w2", glorot(hidden, out, rng)),
            b2: Parameter::new("glm.b2", Matrix::zeros((1, out))),
            t_raw: Parameter::new("glm.t_raw", Matrix::from_elem((1, 1), T_RAW_INIT)),
            theta: Parameter::new("glm.theta", Matrix::zeros((1, 1))),
        }
    }

    pub fn temperature(&self) -> f64 {
        softplus(self.t_raw.value[[0, 0]])
    }

    pub fn threshold(&self) -> f64 {
        self.theta.value[[0, 0]]
    }

    pub fn register(&self, tape: &mut Tape) -> GlmVars {
        GlmVars {
            w1: tape.param(&self.w1),
            b1: tape.param(&self.b1),
            w2: tape.param(&self.w2),
            b2: tape.param(&self.b2),
            t_raw: tape.param(&self.t_raw),
            theta: tape.param(&self.theta),
        }
    }

    pub fn params(&self) -> [&Parameter; 6] {
        [&self.w1, &self.b1, &self.w2, &self.b2, &self.t_raw, &self.theta]
    }

    pub fn params_mut(&mut self) -> [&mut Parameter; 6] {
        [
            &mut self.w1,
            &mut self.b1,
            &mut self.w2,
            &mut self.b2,
            &mut self.t_raw,
            &mut self.theta,
        ]
    }
}

impl GlmVars {
    pub fn all(&self) -> [Var; 6] {
        [self.w1, self.b1, self.w2, self.b2, self.t_raw, self.theta]
    }
}

fn affine(tape: &mut Tape, x: Var, w: Var, b: Var) -> Result<Var> {
    let xw = tape.matmul(x, w)?;
    let (n, h) = tape.shape(xw);
    let bias = tape.broadcast(b, n, h)?;
    tape.add(xw, bias)
}

/// Two affine layers, ReLU on the hidden layer, linear output.
pub fn embed(tape: &mut Tape, x: Var, p: &GlmVars) -> Result<Var> {
    let (_, d) = tape.shape(x);
    let (w_in, _) = tape.shape(p.w1);
    if d != w_in {
        return Err(Error::Config(format!(
            "graph embedding expects {w_in} input columns, got {d}"
        )));
    }
    let h = affine(tape, x, p.w1, p.b1)?;
    let h = tape.relu(h);
    affine(tape, h, p.w2, p.b2)
}

/// Soft adjacency; entries in (0, 1), symmetric, diagonal `σ(−θ)`.
#[derive(Clone, Copy, Debug)]
pub struct LatentGraph {
    pub weights: Var,
}

/// `g_ij = 1 / (1 + exp(t·‖x̂_i − x̂_j‖ + θ))` with `t` already positive.
pub fn soft_adjacency(tape: &mut Tape, xhat: Var, t: Var, theta: Var) -> Result<LatentGraph> {
    let sq = tape.pairwise_sq_dist(xhat);
    let dist = tape.sqrt(sq)?;
    let scaled = tape.mul_scalar(dist, t)?;
    let z = tape.add_scalar(scaled, theta)?;
    let nz = tape.neg(z);
    Ok(LatentGraph {
        weights: tape.sigmoid(nz),
    })
}

/// Embeds, applies the softplus temperature and builds the graph.
pub fn build_graph(tape: &mut Tape, x: Var, p: &GlmVars) -> Result<LatentGraph> {
    let xhat = embed(tape, x, p)?;
    let t = tape.softplus(p.t_raw);
    soft_adjacency(tape, xhat, t, p.theta)
}

/// Detached copy of the edge weights.
pub fn snapshot_graph(tape: &Tape, g: &LatentGraph) -> Matrix {
    tape.data(g.weights).clone()
}
