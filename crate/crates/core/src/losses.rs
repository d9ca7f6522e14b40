//! Classification loss, the two mask regularizers and their weighted sum.

use serde::{Deserialize, Serialize};

use crate::autodiff::{Tape, Var};
use crate::error::{Error, Result};

/// Guard inside the entropy term's logarithm.
pub const ENTROPY_EPS: f64 = 1e-12;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LossWeights {
    /// Balance between classification and the interpretability terms.
    pub alpha: f64,
    /// Entropy regularizer weight.
    pub alpha1: f64,
    /// Mask size regularizer weight.
    pub alpha2: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            alpha: 0.6,
            alpha1: 0.006,
            alpha2: 0.02,
        }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.alpha) {
            return Err(Error::Config(format!("alpha {} outside [0, 1]", self.alpha)));
        }
        if !(self.alpha1 >= 0.0 && self.alpha1.is_finite()) {
            return Err(Error::Config(format!("alpha1 {} must be >= 0", self.alpha1)));
        }
        if !(self.alpha2 >= 0.0 && self.alpha2.is_finite()) {
            return Err(Error::Config(format!("alpha2 {} must be >= 0", self.alpha2)));
        }
        Ok(())
    }
}

/// Which side of the mix `alpha` multiplies.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossConvention {
    /// `α·L_c + (1−α)·L_IA`
    #[default]
    Prose,
    /// `(1−α)·L_c + α·L_IA`
    Eq1,
}

impl std::str::FromStr for LossConvention {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "prose" => Ok(Self::Prose),
            "eq1" => Ok(Self::Eq1),
            other => Err(Error::Config(format!(
                "loss_convention must be `eq1` or `prose`, got `{other}`"
            ))),
        }
    }
}

/// Mean over `subset` of `−log softmax(logits)[i][labels[i]]`.
pub fn cross_entropy(tape: &mut Tape, logits: Var, labels: &[usize], subset: &[usize]) -> Result<Var> {
    if subset.is_empty() {
        return Err(Error::Argument("cross-entropy over an empty node subset".into()));
    }
    let (n, c) = tape.shape(logits);
    if labels.len() != n {
        return Err(Error::Argument(format!("{} labels for {n} rows", labels.len())));
    }
    let mut index = Vec::with_capacity(subset.len());
    for &i in subset {
        if i >= n {
            return Err(Error::Argument(format!("node {i} out of range")));
        }
        if labels[i] >= c {
            return Err(Error::Argument(format!("label {} out of range", labels[i])));
        }
        index.push((i, labels[i]));
    }
    let logp = tape.log_softmax(logits);
    let picked = tape.gather(logp, index)?;
    let mean = tape.mean(picked);
    Ok(tape.neg(mean))
}

/// `Σ m'_i`.
pub fn mask_size_loss(tape: &mut Tape, attention: Var) -> Var {
    tape.sum(attention)
}

/// `Σ −m'_i · ln(m'_i + ε)`.
pub fn mask_entropy_loss(tape: &mut Tape, attention: Var) -> Result<Var> {
    let log = tape.log_eps(attention, ENTROPY_EPS)?;
    let prod = tape.mul(attention, log)?;
    let s = tape.sum(prod);
    Ok(tape.neg(s))
}

pub fn total_loss(
    tape: &mut Tape,
    lc: Var,
    mel: Var,
    msl: Var,
    w: &LossWeights,
    convention: LossConvention,
) -> Result<Var> {
    for v in [lc, mel, msl] {
        if tape.shape(v) != (1, 1) {
            return Err(Error::Contract("loss terms must be scalars".into()));
        }
    }
    let (wc, wia) = match convention {
        LossConvention::Prose => (w.alpha, 1.0 - w.alpha),
        LossConvention::Eq1 => (1.0 - w.alpha, w.alpha),
    };
    let mel = tape.scale(mel, w.alpha1);
    let msl = tape.scale(msl, w.alpha2);
    let ia = tape.add(mel, msl)?;
    let ia = tape.scale(ia, wia);
    let c = tape.scale(lc, wc);
    tape.add(c, ia)
}
