//! Finite-difference verification of the full-model bag gradient.
//!
//! Instances are sampled at reduced dimensions and rejected when they sit
//! near a non-differentiable point: a hinge at its corner, a tie between the
//! top two negatives, or a near-tie inside a pooling segment.

use serde::Serialize;

use crate::corpus::{Mention, MentionBag, RelationSchema};
use crate::encoder::{convolve, embed_tokens, segments, EncoderConfig};
use crate::error::{Error, Result};
use crate::model::{bag_gradient, bag_loss_value, forward_bag, bag_loss, ModelConfig, ModelParams, ParamGroup};
use crate::numkit::{grad_check, Rng, GRAD_CHECK_EPS};
use crate::ranking::{HingeKind, RankingConfig, Variant};

/// Dimensions and sampling knobs for gradient-check instances.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GradCheckSetup {
    pub encoder: EncoderConfig,
    pub vocab_len: usize,
    /// Non-NR relation classes; NR is added on top.
    pub relations: usize,
    pub sentences: usize,
    pub positives: usize,
    pub relieve_nr: bool,
    /// Minimum distance from any kink or tie.
    pub clearance: f64,
}

impl Default for GradCheckSetup {
    fn default() -> Self {
        GradCheckSetup {
            encoder: EncoderConfig {
                word_dim: 6,
                position_dim: 2,
                kernels: 8,
                window: 3,
                clip: 5,
                shared_position: true,
            },
            vocab_len: 12,
            relations: 4,
            sentences: 2,
            positives: 2,
            relieve_nr: true,
            clearance: 1e-3,
        }
    }
}

/// A sampled model and bag.
#[derive(Debug, Clone)]
pub struct GradCheckInstance {
    pub params: ModelParams,
    pub bag: MentionBag,
    pub schema: RelationSchema,
    pub cfg: ModelConfig,
    /// Seed of the fixed dropout mask stream.
    pub mask_seed: u64,
}

#[derive(Debug, Clone, Serialize)]
pub struct GroupError {
    pub group: ParamGroup,
    pub max_rel_error: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct GradCheckReport {
    pub variant: Variant,
    pub loss: f64,
    pub groups: Vec<GroupError>,
}

impl GradCheckReport {
    pub fn max_error(&self) -> f64 {
        self.groups.iter().map(|g| g.max_rel_error).fold(0.0, f64::max)
    }
}

fn sample(setup: &GradCheckSetup, rng: &mut Rng) -> Result<GradCheckInstance> {
    let relations: Vec<String> = (0..setup.relations).map(|i| format!("/r{i}")).collect();
    let schema = RelationSchema::from_relations(relations)?;
    let cfg = ModelConfig {
        encoder: setup.encoder,
        ranking: RankingConfig {
            relieve_nr: setup.relieve_nr,
            ..RankingConfig::default()
        },
        keep_prob: 0.5,
    };
    let mut params = ModelParams::init(setup.vocab_len, schema.num_classes(), &setup.encoder, rng)?;
    for b in &mut params.encoder.bias {
        *b = rng.uniform_in(-0.1, 0.1);
    }
    let mentions = (0..setup.sentences)
        .map(|_| {
            let n = rng.range_inclusive(4, 7);
            let tokens = (0..n).map(|_| rng.below(setup.vocab_len)).collect();
            let e1 = rng.below(n);
            let mut e2 = rng.below(n - 1);
            if e2 >= e1 {
                e2 += 1;
            }
            Mention::new(tokens, e1, e2)
        })
        .collect::<Result<Vec<_>>>()?;
    let mut candidates: Vec<usize> = (0..schema.num_classes()).filter(|&c| !schema.is_nr(c)).collect();
    rng.shuffle(&mut candidates);
    let labels = candidates[..setup.positives.min(candidates.len())].to_vec();
    let bag = MentionBag::new("gradcheck", labels, mentions, &schema)?;
    Ok(GradCheckInstance {
        params,
        bag,
        schema,
        cfg,
        mask_seed: rng.next_u64(),
    })
}

/// Distance from the nearest kink or tie, for rejection sampling.
fn clearance(inst: &GradCheckInstance, variant: Variant) -> Result<f64> {
    let p = &inst.params;
    let mut gap = f64::INFINITY;
    for m in &inst.bag.mentions {
        let q = embed_tokens(m, &p.encoder, inst.cfg.encoder.clip)?;
        let conv = convolve(&q, &p.encoder);
        for k in 0..conv.rows() {
            let row = conv.row(k);
            for (s, e) in segments(m.len(), m.e1, m.e2) {
                let mut vals: Vec<f64> = row[s..e].to_vec();
                vals.sort_by(|a, b| b.total_cmp(a));
                if vals.len() >= 2 {
                    gap = gap.min(vals[0] - vals[1]);
                }
            }
        }
    }
    let mut rng = Rng::new(inst.mask_seed);
    let fwd = forward_bag(p, &inst.bag, variant, &inst.cfg, Some(&mut rng))?;
    let report = bag_loss(p, &inst.bag, &fwd, variant, inst.schema.nr_index(), &inst.cfg)?;
    let r = &inst.cfg.ranking;
    for t in &report.terms {
        let f = report.scores[t.rep][t.class];
        let corner = match t.kind {
            HingeKind::Positive => r.sigma_plus - f,
            HingeKind::Negative => r.sigma_minus + f,
        };
        gap = gap.min(corner.abs());
    }
    for (scores, &neg) in report.scores.iter().zip(&report.negatives) {
        for (c, &v) in scores.iter().enumerate() {
            if c != neg && !inst.bag.has_label(c) {
                gap = gap.min(scores[neg] - v);
            }
        }
    }
    Ok(gap)
}

/// Samples an instance (with rejection) for `variant`.
pub fn sample_instance(setup: &GradCheckSetup, variant: Variant, seed: u64) -> Result<GradCheckInstance> {
    let mut rng = Rng::new(seed);
    for _ in 0..1000 {
        let inst = sample(setup, &mut rng)?;
        if clearance(&inst, variant)? > setup.clearance {
            return Ok(inst);
        }
    }
    Err(Error::Numeric(
        "could not sample an instance away from kinks".into(),
    ))
}

/// Compares the analytic bag gradient with central differences for every
/// parameter group.
pub fn check_instance(inst: &GradCheckInstance, variant: Variant) -> Result<GradCheckReport> {
    let nr = inst.schema.nr_index();
    let (report, grads) = bag_gradient(
        &inst.params,
        &inst.bag,
        variant,
        nr,
        &inst.cfg,
        Some(&mut Rng::new(inst.mask_seed)),
    )?;
    let mut groups = Vec::new();
    for group in inst.params.groups() {
        let analytic = grads.group_dense(group, &inst.params);
        let mut probe = inst.params.clone();
        let x = inst.params.group(group).to_vec();
        let err = grad_check(
            |values| {
                probe.group_mut(group).copy_from_slice(values);
                bag_loss_value(
                    &probe,
                    &inst.bag,
                    variant,
                    nr,
                    &inst.cfg,
                    Some(&mut Rng::new(inst.mask_seed)),
                )
                .unwrap_or(f64::NAN)
            },
            &x,
            &analytic,
            GRAD_CHECK_EPS,
        )?;
        groups.push(GroupError {
            group,
            max_rel_error: err,
        });
    }
    Ok(GradCheckReport {
        variant,
        loss: report.value,
        groups,
    })
}

/// Runs `instances` seeded checks for `variant` and returns per-group worst
/// errors across them.
pub fn run(setup: &GradCheckSetup, variant: Variant, instances: usize, seed: u64) -> Result<GradCheckReport> {
    let mut worst: Vec<GroupError> = Vec::new();
    let mut loss = 0.0;
    for i in 0..instances {
        let inst = sample_instance(setup, variant, seed.wrapping_add(i as u64))?;
        let r = check_instance(&inst, variant)?;
        loss += r.loss;
        for g in r.groups {
            match worst.iter_mut().find(|w| w.group == g.group) {
                Some(w) => w.max_rel_error = w.max_rel_error.max(g.max_rel_error),
                None => worst.push(g),
            }
        }
    }
    Ok(GradCheckReport {
        variant,
        loss: loss / instances.max(1) as f64,
        groups: worst,
    })
}
