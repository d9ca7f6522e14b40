//! Feature attention: one global sigmoid mask over the input columns.

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::autodiff::{sigmoid, Matrix, Parameter, Tape, Var};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case", deny_unknown_fields)]
pub enum MaskInit {
    Gaussian { mean: f64, std: f64 },
    Constant { value: f64 },
}

impl Default for MaskInit {
    fn default() -> Self {
        MaskInit::Constant { value: 0.0 }
    }
}

/// Raw 1×D mask parameters; the attention is their sigmoid.
#[derive(Clone, Debug, PartialEq)]
pub struct AttentionMask {
    pub raw: Parameter,
}

pub fn init_mask<R: Rng + ?Sized>(d: usize, mode: MaskInit, rng: &mut R) -> Result<AttentionMask> {
    if d == 0 {
        return Err(Error::Config("mask width must be at least 1".into()));
    }
    let raw = match mode {
        MaskInit::Constant { value } => Matrix::from_elem((1, d), value),
        MaskInit::Gaussian { mean, std } => {
            let normal = Normal::new(mean, std)
                .map_err(|e| Error::Config(format!("mask_init gaussian: {e}")))?;
            Matrix::from_shape_simple_fn((1, d), || normal.sample(rng))
        }
    };
    Ok(AttentionMask {
        raw: Parameter::new("mask", raw),
    })
}

impl AttentionMask {
    pub fn width(&self) -> usize {
        self.raw.value.ncols()
    }

    pub fn attention(&self) -> Vec<f64> {
        self.raw.value.iter().map(|&x| sigmoid(x)).collect()
    }
}

/// `X'[i][j] = σ(M)[j] · X[i][j]`. Returns `(attention, masked)`.
pub fn apply_mask(tape: &mut Tape, x: Var, raw: Var) -> Result<(Var, Var)> {
    let (n, d) = tape.shape(x);
    let (r, c) = tape.shape(raw);
    if r != 1 || c != d {
        return Err(Error::Dimension {
            op: "apply_mask",
            left: (n, d),
            right: (r, c),
        });
    }
    let att = tape.sigmoid(raw);
    let rows = tape.broadcast(att, n, d)?;
    let masked = tape.mul(x, rows)?;
    Ok((att, masked))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AttentionStats {
    pub avg_top_k: f64,
    pub avg_others: f64,
    pub top_k_indices: Vec<usize>,
}

/// Mean attention of the `k` largest entries vs. the rest. Ties rank the
/// lower feature index first. `avg_others` is 0 when `k == D`.
pub fn attention_stats(attention: &[f64], k: usize) -> Result<AttentionStats> {
    let d = attention.len();
    if k == 0 || k > d {
        return Err(Error::Argument(format!("top-k {k} outside 1..={d}")));
    }
    let order = rank_descending(attention);
    let top: Vec<usize> = order[..k].to_vec();
    let avg_top_k = top.iter().map(|&i| attention[i]).sum::<f64>() / k as f64;
    let rest = &order[k..];
    let avg_others = if rest.is_empty() {
        0.0
    } else {
        rest.iter().map(|&i| attention[i]).sum::<f64>() / rest.len() as f64
    };
    Ok(AttentionStats {
        avg_top_k,
        avg_others,
        top_k_indices: top,
    })
}

pub(crate) fn rank_descending(values: &[f64]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| values[b].total_cmp(&values[a]).then(a.cmp(&b)));
    order
}
