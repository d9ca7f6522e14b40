//! Shared helpers for the integration suites: a central finite-difference
//! gradient oracle and small generators.
#![allow(dead_code)]

use attngcn::autodiff::{Matrix, Parameter, Tape, Var};
use attngcn::Result;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const FD_STEP: f64 = 1e-5;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn uniform(rows: usize, cols: usize, lo: f64, hi: f64, rng: &mut ChaCha8Rng) -> Matrix {
    Matrix::from_shape_simple_fn((rows, cols), || rng.random_range(lo..hi))
}

/// `|a − b| / max(|a|, |b|, floor)`.
pub fn rel_err(a: f64, b: f64, floor: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(floor)
}

/// Weighted sum reducing any output to a scalar, so every entry matters.
fn reduce(tape: &mut Tape, out: Var, weights: &Matrix) -> Result<Var> {
    let w = tape.constant(weights.clone());
    let p = tape.mul(out, w)?;
    Ok(tape.sum(p))
}

fn weights_for(shape: (usize, usize)) -> Matrix {
    let mut r = rng(0x5eed ^ (shape.0 as u64 * 131 + shape.1 as u64));
    uniform(shape.0, shape.1, 0.5, 1.5, &mut r)
}

fn evaluate<F>(inputs: &[Matrix], f: &F, weights: &mut Option<Matrix>) -> Result<f64>
where
    F: Fn(&mut Tape, &[Var]) -> Result<Var>,
{
    let mut tape = Tape::new();
    let vars: Vec<Var> = inputs
        .iter()
        .enumerate()
        .map(|(i, m)| tape.param(&Parameter::new(format!("in{i}"), m.clone())))
        .collect();
    let out = f(&mut tape, &vars)?;
    let w = weights.get_or_insert_with(|| weights_for(tape.shape(out)));
    let root = reduce(&mut tape, out, w)?;
    Ok(tape.scalar(root))
}

/// Analytic gradients of `sum(w ⊙ f(inputs))` for each input.
pub fn analytic<F>(inputs: &[Matrix], f: &F) -> Result<Vec<Matrix>>
where
    F: Fn(&mut Tape, &[Var]) -> Result<Var>,
{
    let mut tape = Tape::new();
    let vars: Vec<Var> = inputs
        .iter()
        .enumerate()
        .map(|(i, m)| tape.param(&Parameter::new(format!("in{i}"), m.clone())))
        .collect();
    let out = f(&mut tape, &vars)?;
    let w = weights_for(tape.shape(out));
    let root = reduce(&mut tape, out, &w)?;
    tape.backward(root)?;
    Ok(vars.iter().map(|&v| tape.grad(v).clone()).collect())
}

/// Central differences of the same reduced objective.
pub fn numeric<F>(inputs: &[Matrix], f: &F) -> Result<Vec<Matrix>>
where
    F: Fn(&mut Tape, &[Var]) -> Result<Var>,
{
    let mut weights = None;
    evaluate(inputs, f, &mut weights)?;
    let mut grads = Vec::with_capacity(inputs.len());
    for k in 0..inputs.len() {
        let mut g = Matrix::zeros(inputs[k].dim());
        for idx in ndarray::indices(inputs[k].dim()) {
            let mut plus = inputs.to_vec();
            plus[k][idx] += FD_STEP;
            let mut minus = inputs.to_vec();
            minus[k][idx] -= FD_STEP;
            let fp = evaluate(&plus, f, &mut weights)?;
            let fm = evaluate(&minus, f, &mut weights)?;
            g[idx] = (fp - fm) / (2.0 * FD_STEP);
        }
        grads.push(g);
    }
    Ok(grads)
}

/// Largest relative error between analytic and numeric gradients.
pub fn max_grad_error<F>(inputs: &[Matrix], f: F) -> f64
where
    F: Fn(&mut Tape, &[Var]) -> Result<Var>,
{
    let a = analytic(inputs, &f).expect("analytic gradient");
    let n = numeric(inputs, &f).expect("numeric gradient");
    let mut worst = 0.0f64;
    for (ga, gn) in a.iter().zip(&n) {
        for (x, y) in ga.iter().zip(gn) {
            worst = worst.max(rel_err(*x, *y, 1e-3));
        }
    }
    worst
}

/// Moves entries within `gap` of `kink` off it, keeping the sign of the offset.
pub fn avoid_kink(m: &mut Matrix, kink: f64, gap: f64) {
    m.mapv_inplace(|x| {
        if (x - kink).abs() < gap {
            kink + if x >= kink { 0.5 } else { -0.5 }
        } else {
            x
        }
    });
}

pub mod pipeline {
    use super::*;
    use attngcn::iam::MaskInit;
    use attngcn::losses::{LossConvention, LossWeights};
    use attngcn::model::{Architecture, Model};

    pub const LABELS: [usize; 6] = [0, 1, 2, 0, 1, 2];
    pub const TRAIN: [usize; 4] = [0, 1, 2, 4];

    pub fn instance(seed: u64) -> (Model, Matrix) {
        let arch = Architecture {
            mask_init: MaskInit::Gaussian { mean: 0.0, std: 1.0 },
            ..Architecture::default()
        };
        let model = Model::init(5, 3, &arch, seed).unwrap();
        let x = uniform(6, 5, -1.0, 1.0, &mut rng(seed.wrapping_add(100)));
        (model, x)
    }

    fn loss(model: &Model, x: &Matrix, w: &LossWeights) -> Result<(Tape, attngcn::model::ForwardPass, Var)> {
        let mut tape = Tape::new();
        let pass = model.forward(&mut tape, x, None)?;
        let terms = Model::objective(&mut tape, &pass, &LABELS, &TRAIN, w, LossConvention::Prose)?;
        Ok((tape, pass, terms.total))
    }

    /// Max relative error over every parameter entry of the full objective.
    pub fn grad_error(seed: u64) -> f64 {
        let (model, x) = instance(seed);
        let w = LossWeights::default();
        let (mut tape, pass, total) = loss(&model, &x, &w).unwrap();
        tape.backward(total).unwrap();
        let analytic: Vec<Matrix> = pass.vars.all().iter().map(|&v| tape.grad(v).clone()).collect();

        let eval = |m: &Model| {
            let (t, _, total) = loss(m, &x, &w).unwrap();
            t.scalar(total)
        };
        let mut worst = 0.0f64;
        for (k, ga) in analytic.iter().enumerate() {
            for idx in ndarray::indices(ga.dim()) {
                let mut plus = model.clone();
                plus.params_mut()[k].value[idx] += FD_STEP;
                let mut minus = model.clone();
                minus.params_mut()[k].value[idx] -= FD_STEP;
                let num = (eval(&plus) - eval(&minus)) / (2.0 * FD_STEP);
                worst = worst.max(rel_err(ga[idx], num, 1e-3));
            }
        }
        worst
    }
}
