//! Full model: encoder parameters plus class embeddings, and the per-bag
//! forward/backward that ties encoder, aggregation and ranking loss together.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::aggregate::{att, ave, BagRepresentation};
use crate::corpus::MentionBag;
use crate::encoder::{encode, EncoderConfig, EncoderGrads, EncoderParams};
use crate::error::{Error, Result};
use crate::numkit::{DenseMatrix, Rng};
use crate::ranking::{
    loss_backward, loss_variant1, loss_variant2, loss_variant3, BagForward, LossReport,
    RankingConfig, Variant,
};

/// Everything needed to run the model forward on a bag.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub encoder: EncoderConfig,
    pub ranking: RankingConfig,
    /// Dropout keep probability `p`.
    pub keep_prob: f64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            encoder: EncoderConfig::default(),
            ranking: RankingConfig::default(),
            keep_prob: 0.5,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        self.encoder.validate()?;
        self.ranking.validate()?;
        if !(self.keep_prob > 0.0 && self.keep_prob <= 1.0) {
            return Err(Error::usage("dropout keep probability must be in (0, 1]"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelParams {
    pub encoder: EncoderParams,
    /// Class embeddings `W`, `|L| x d^f`.
    pub classes: DenseMatrix,
}

impl ModelParams {
    /// Seeded initialization. Class embeddings are Glorot-uniform with
    /// `fan_in = d^f`, `fan_out = |L|`.
    pub fn init(vocab_len: usize, num_classes: usize, cfg: &EncoderConfig, rng: &mut Rng) -> Result<Self> {
        if num_classes < 2 {
            return Err(Error::usage("need at least two relation classes"));
        }
        let encoder = EncoderParams::init(vocab_len, cfg, rng)?;
        let df = cfg.sentence_dim();
        let bound = (6.0 / (df + num_classes) as f64).sqrt();
        let classes = DenseMatrix::uniform(num_classes, df, bound, rng);
        Ok(ModelParams { encoder, classes })
    }

    pub fn sentence_dim(&self) -> usize {
        self.encoder.sentence_dim()
    }

    pub fn num_classes(&self) -> usize {
        self.classes.rows()
    }

    pub fn check_shapes(&self) -> Result<()> {
        self.encoder.check_shapes()?;
        if self.classes.cols() != self.sentence_dim() {
            return Err(Error::format(format!(
                "class embeddings are {} wide, sentence embeddings {}",
                self.classes.cols(),
                self.sentence_dim()
            )));
        }
        Ok(())
    }

    pub fn all_finite(&self) -> bool {
        self.encoder.all_finite() && self.classes.all_finite()
    }

    pub fn group(&self, group: ParamGroup) -> &[f64] {
        match group {
            ParamGroup::Word => self.encoder.word.as_slice(),
            ParamGroup::Position => self.encoder.position.as_slice(),
            ParamGroup::Position2 => self
                .encoder
                .position2
                .as_ref()
                .map_or(&[], DenseMatrix::as_slice),
            ParamGroup::Kernels => self.encoder.kernels.as_slice(),
            ParamGroup::Bias => &self.encoder.bias,
            ParamGroup::Classes => self.classes.as_slice(),
        }
    }

    pub fn group_mut(&mut self, group: ParamGroup) -> &mut [f64] {
        match group {
            ParamGroup::Word => self.encoder.word.as_mut_slice(),
            ParamGroup::Position => self.encoder.position.as_mut_slice(),
            ParamGroup::Position2 => self
                .encoder
                .position2
                .as_mut()
                .map_or(&mut [], DenseMatrix::as_mut_slice),
            ParamGroup::Kernels => self.encoder.kernels.as_mut_slice(),
            ParamGroup::Bias => &mut self.encoder.bias,
            ParamGroup::Classes => self.classes.as_mut_slice(),
        }
    }

    /// Groups present in this parameter set.
    pub fn groups(&self) -> Vec<ParamGroup> {
        ParamGroup::ALL
            .into_iter()
            .filter(|g| *g != ParamGroup::Position2 || self.encoder.position2.is_some())
            .collect()
    }

    /// Plain SGD step `theta <- theta - lr * grad`. Only word rows present in
    /// the sparse gradient are touched.
    pub fn sgd_step(&mut self, grads: &Gradients, lr: f64) {
        for (row, g) in &grads.encoder.word {
            crate::numkit::axpy(self.encoder.word.row_mut(*row), -lr, g);
        }
        self.encoder.position.add_scaled(&grads.encoder.position, -lr);
        if let (Some(p), Some(g)) = (self.encoder.position2.as_mut(), grads.encoder.position2.as_ref()) {
            p.add_scaled(g, -lr);
        }
        self.encoder.kernels.add_scaled(&grads.encoder.kernels, -lr);
        crate::numkit::axpy(&mut self.encoder.bias, -lr, &grads.encoder.bias);
        self.classes.add_scaled(&grads.classes, -lr);
    }
}

/// Named parameter arrays, used for gradient checks and checkpoints.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ParamGroup {
    Word,
    Position,
    Position2,
    Kernels,
    Bias,
    Classes,
}

impl ParamGroup {
    pub const ALL: [ParamGroup; 6] = [
        ParamGroup::Word,
        ParamGroup::Position,
        ParamGroup::Position2,
        ParamGroup::Kernels,
        ParamGroup::Bias,
        ParamGroup::Classes,
    ];

    pub fn name(self) -> &'static str {
        match self {
            ParamGroup::Word => "word",
            ParamGroup::Position => "position",
            ParamGroup::Position2 => "position2",
            ParamGroup::Kernels => "kernels",
            ParamGroup::Bias => "bias",
            ParamGroup::Classes => "classes",
        }
    }
}

impl fmt::Display for ParamGroup {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Gradient of a loss wrt every model parameter.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub encoder: EncoderGrads,
    pub classes: DenseMatrix,
}

impl Gradients {
    pub fn zeros_like(params: &ModelParams) -> Self {
        Gradients {
            encoder: EncoderGrads::zeros_like(&params.encoder),
            classes: DenseMatrix::zeros(params.classes.rows(), params.classes.cols()),
        }
    }

    pub fn add_scaled(&mut self, other: &Gradients, scale: f64) {
        self.encoder.add_scaled(&other.encoder, scale);
        self.classes.add_scaled(&other.classes, scale);
    }

    /// Dense copy of one group, same layout as [`ModelParams::group`].
    pub fn group_dense(&self, group: ParamGroup, params: &ModelParams) -> Vec<f64> {
        match group {
            ParamGroup::Word => self
                .encoder
                .word_dense(params.encoder.word.rows(), params.encoder.word.cols())
                .into_vec(),
            ParamGroup::Position => self.encoder.position.as_slice().to_vec(),
            ParamGroup::Position2 => self
                .encoder
                .position2
                .as_ref()
                .map_or_else(Vec::new, |m| m.as_slice().to_vec()),
            ParamGroup::Kernels => self.encoder.kernels.as_slice().to_vec(),
            ParamGroup::Bias => self.encoder.bias.clone(),
            ParamGroup::Classes => self.classes.as_slice().to_vec(),
        }
    }

    pub fn all_finite(&self) -> bool {
        self.encoder.word.values().flatten().all(|v| v.is_finite())
            && self.encoder.position.all_finite()
            && self.encoder.kernels.all_finite()
            && self.encoder.bias.iter().all(|v| v.is_finite())
            && self.classes.all_finite()
    }
}

/// Runs the encoder and the variant's aggregation on a bag. `rng` enables
/// dropout; pass `None` for deterministic inference.
pub fn forward_bag(
    params: &ModelParams,
    bag: &MentionBag,
    variant: Variant,
    cfg: &ModelConfig,
    mut rng: Option<&mut Rng>,
) -> Result<BagForward> {
    let sentences = bag
        .mentions
        .iter()
        .map(|m| encode(m, &params.encoder, cfg.encoder.clip, cfg.keep_prob, rng.as_deref_mut()))
        .collect::<Result<Vec<_>>>()?;
    let reps: Vec<BagRepresentation> = match variant {
        Variant::Ave => vec![ave(&sentences)?],
        Variant::Att | Variant::ExAtt => bag
            .labels()
            .iter()
            .map(|&c| att(&sentences, c, &params.classes, cfg.ranking.attention_bias))
            .collect::<Result<_>>()?,
    };
    Ok(BagForward { sentences, reps })
}

/// Evaluates the variant's loss on an already computed forward state.
pub fn bag_loss(
    params: &ModelParams,
    bag: &MentionBag,
    forward: &BagForward,
    variant: Variant,
    nr_class: usize,
    cfg: &ModelConfig,
) -> Result<LossReport> {
    let labels = bag.labels();
    let w = &params.classes;
    let r = &cfg.ranking;
    match variant {
        Variant::Ave => loss_variant1(labels, &forward.reps[0].s, w, nr_class, r),
        Variant::Att => loss_variant2(labels, &forward.reps, w, nr_class, r),
        Variant::ExAtt => loss_variant3(labels, &forward.reps, w, nr_class, r),
    }
}

/// Loss and full-model gradient for one bag.
pub fn bag_gradient(
    params: &ModelParams,
    bag: &MentionBag,
    variant: Variant,
    nr_class: usize,
    cfg: &ModelConfig,
    rng: Option<&mut Rng>,
) -> Result<(LossReport, Gradients)> {
    let forward = forward_bag(params, bag, variant, cfg, rng)?;
    let report = bag_loss(params, bag, &forward, variant, nr_class, cfg)?;
    let grads = loss_backward(
        &report,
        &forward,
        &bag.mentions,
        params,
        cfg.encoder.clip,
        cfg.ranking.attention_bias,
    )?;
    Ok((report, grads))
}

/// Loss value only, with a fresh forward pass.
pub fn bag_loss_value(
    params: &ModelParams,
    bag: &MentionBag,
    variant: Variant,
    nr_class: usize,
    cfg: &ModelConfig,
    rng: Option<&mut Rng>,
) -> Result<f64> {
    let forward = forward_bag(params, bag, variant, cfg, rng)?;
    Ok(bag_loss(params, bag, &forward, variant, nr_class, cfg)?.value)
}
