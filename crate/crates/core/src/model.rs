//! The assembled model: mask → graph learner → classifier.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Matrix, Parameter, Tape, Var};
use crate::classifier::{self, ClassifierParams, ClassifierVars, Dropout};
use crate::error::{Error, Result};
use crate::glm::{self, GlmParams, GlmVars, LatentGraph};
use crate::iam::{self, AttentionMask, MaskInit};
use crate::losses::{self, LossConvention, LossWeights};

/// Whether the graph learner sees masked or raw features.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GlmInput {
    #[default]
    Masked,
    Raw,
}

impl std::str::FromStr for GlmInput {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "masked" => Ok(Self::Masked),
            "raw" => Ok(Self::Raw),
            other => Err(Error::Config(format!(
                "glm_input must be `masked` or `raw`, got `{other}`"
            ))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Architecture {
    pub glm_hidden: usize,
    pub glm_out: usize,
    pub conv1: usize,
    pub conv2: usize,
    pub glm_input: GlmInput,
    pub mask_init: MaskInit,
}

impl Default for Architecture {
    fn default() -> Self {
        Self {
            glm_hidden: 16,
            glm_out: 8,
            conv1: 32,
            conv2: 16,
            glm_input: GlmInput::Masked,
            mask_init: MaskInit::default(),
        }
    }
}

impl Architecture {
    pub fn validate(&self) -> Result<()> {
        for (name, w) in [
            ("glm_hidden", self.glm_hidden),
            ("glm_out", self.glm_out),
            ("conv1", self.conv1),
            ("conv2", self.conv2),
        ] {
            if w == 0 {
                return Err(Error::Config(format!("{name} must be at least 1")));
            }
        }
        if let MaskInit::Gaussian { std, .. } = self.mask_init {
            if !(std >= 0.0) {
                return Err(Error::Config("mask_init.std must be >= 0".into()));
            }
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Model {
    pub glm: GlmParams,
    pub mask: AttentionMask,
    pub classifier: ClassifierParams,
    pub glm_input: GlmInput,
}

#[derive(Clone, Copy, Debug)]
pub struct ModelVars {
    pub glm: GlmVars,
    pub mask: Var,
    pub classifier: ClassifierVars,
}

impl ModelVars {
    /// Same order as [`Model::params`].
    pub fn all(&self) -> Vec<Var> {
        let mut v = self.glm.all().to_vec();
        v.push(self.mask);
        v.extend(self.classifier.all());
        v
    }
}

/// Handles into one forward pass.
#[derive(Clone, Copy, Debug)]
pub struct ForwardPass {
    pub vars: ModelVars,
    pub attention: Var,
    pub masked: Var,
    pub graph: LatentGraph,
    pub logits: Var,
}

#[derive(Clone, Copy, Debug)]
pub struct LossTerms {
    pub total: Var,
    pub classification: Var,
    pub entropy: Var,
    pub size: Var,
}

fn stream(seed: u64, id: u64) -> ChaCha8Rng {
    let mut r = ChaCha8Rng::seed_from_u64(seed);
    r.set_stream(id);
    r
}

impl Model {
    pub fn init(features: usize, classes: usize, arch: &Architecture, seed: u64) -> Result<Self> {
        arch.validate()?;
        if classes < 2 {
            return Err(Error::Config(format!("need at least 2 classes, got {classes}")));
        }
        let glm = GlmParams::init(features, arch.glm_hidden, arch.glm_out, &mut stream(seed, 1));
        let mask = iam::init_mask(features, arch.mask_init, &mut stream(seed, 2))?;
        let classifier = ClassifierParams::init(
            features,
            arch.conv1,
            arch.conv2,
            classes,
            [&mut stream(seed, 3), &mut stream(seed, 4), &mut stream(seed, 5)],
        );
        Ok(Self {
            glm,
            mask,
            classifier,
            glm_input: arch.glm_input,
        })
    }

    pub fn params(&self) -> Vec<&Parameter> {
        let mut v: Vec<&Parameter> = self.glm.params().to_vec();
        v.push(&self.mask.raw);
        v.extend(self.classifier.params());
        v
    }

    pub fn params_mut(&mut self) -> Vec<&mut Parameter> {
        let mut v: Vec<&mut Parameter> = self.glm.params_mut().into_iter().collect();
        v.push(&mut self.mask.raw);
        v.extend(self.classifier.params_mut());
        v
    }

    pub fn register(&self, tape: &mut Tape) -> ModelVars {
        ModelVars {
            glm: self.glm.register(tape),
            mask: tape.param(&self.mask.raw),
            classifier: self.classifier.register(tape),
        }
    }

    pub fn attention(&self) -> Vec<f64> {
        self.mask.attention()
    }

    /// Full forward over all nodes. Dropout is applied only when given.
    pub fn forward(
        &self,
        tape: &mut Tape,
        x: &Matrix,
        dropout: Option<Dropout<'_, ChaCha8Rng>>,
    ) -> Result<ForwardPass> {
        let vars = self.register(tape);
        let xv = tape.constant(x.clone());
        let (attention, masked) = iam::apply_mask(tape, xv, vars.mask)?;
        let glm_in = match self.glm_input {
            GlmInput::Masked => masked,
            GlmInput::Raw => xv,
        };
        let graph = glm::build_graph(tape, glm_in, &vars.glm)?;
        let ghat = classifier::normalize_graph(tape, &graph)?;
        let logits = classifier::forward_normalized(tape, masked, ghat, &vars.classifier, dropout)?;
        Ok(ForwardPass {
            vars,
            attention,
            masked,
            graph,
            logits,
        })
    }

    /// Classification loss on `train` plus the mask regularizers.
    pub fn objective(
        tape: &mut Tape,
        pass: &ForwardPass,
        labels: &[usize],
        train: &[usize],
        weights: &LossWeights,
        convention: LossConvention,
    ) -> Result<LossTerms> {
        let classification = losses::cross_entropy(tape, pass.logits, labels, train)?;
        let entropy = losses::mask_entropy_loss(tape, pass.attention)?;
        let size = losses::mask_size_loss(tape, pass.attention);
        let total = losses::total_loss(tape, classification, entropy, size, weights, convention)?;
        Ok(LossTerms {
            total,
            classification,
            entropy,
            size,
        })
    }

    /// Edge weights and logits of a dropout-free forward pass.
    pub fn evaluate(&self, x: &Matrix) -> Result<(Matrix, Matrix)> {
        let mut tape = Tape::new();
        let pass = self.forward(&mut tape, x, None)?;
        Ok((
            glm::snapshot_graph(&tape, &pass.graph),
            tape.data(pass.logits).clone(),
        ))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parameter_names_unique_and_ordered() {
        let m = Model::init(5, 3, &Architecture::default(), 1).unwrap();
        let names: Vec<&str> = m.params().iter().map(|p| p.name.as_str()).collect();
        let mut dedup = names.clone();
        dedup.sort();
        dedup.dedup();
        assert_eq!(dedup.len(), names.len());
        let mut tape = Tape::new();
        let vars = m.register(&mut tape);
        for (v, p) in vars.all().iter().zip(m.params()) {
            assert_eq!(tape.name(*v), Some(p.name.as_str()));
        }
    }

    #[test]
    fn init_is_seeded() {
        let a = Model::init(7, 2, &Architecture::default(), 42).unwrap();
        let b = Model::init(7, 2, &Architecture::default(), 42).unwrap();
        let c = Model::init(7, 2, &Architecture::default(), 43).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, c);
    }

    #[test]
    fn default_widths() {
        let m = Model::init(50, 3, &Architecture::default(), 0).unwrap();
        assert_eq!(m.glm.w1.value.dim(), (50, 16));
        assert_eq!(m.glm.w2.value.dim(), (16, 8));
        assert_eq!(m.classifier.conv1.value.dim(), (50, 32));
        assert_eq!(m.classifier.conv2.value.dim(), (32, 16));
        assert_eq!(m.classifier.fc_w.value.dim(), (16, 3));
        assert!((m.glm.temperature() - 2.0).abs() < 1e-12);
        assert_eq!(m.glm.threshold(), 0.0);
        assert_eq!(m.attention(), vec![0.5; 50]);
    }
}
