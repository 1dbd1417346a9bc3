//! Held-out evaluation: every (bag, non-NR class) pair is a candidate fact,
//! ranked by model score and checked against the bag's labels.

use std::fmt;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::aggregate::{att, ave};
use crate::corpus::{MentionBag, RelationSchema};
use crate::encoder::encode;
use crate::error::{Error, Result};
use crate::model::{ModelConfig, ModelParams};
use crate::ranking::{score, score_all, Variant};

/// P@N cut-offs reported by default.
pub const DEFAULT_P_AT_N: [usize; 5] = [100, 200, 300, 400, 500];
/// Default number of ranked predictions written to the P/R CSV.
pub const DEFAULT_CURVE_LIMIT: usize = 2000;
/// Shift applied by [`inspect`] when rescaling.
pub const INSPECT_SHIFT: f64 = 10.0;

/// How a bag is turned into per-class scores at test time.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum EvalMode {
    /// One averaged representation scores every class.
    Ave,
    /// Class `c` is scored on the representation attention-queried by `c`.
    Att,
}

impl EvalMode {
    pub fn for_variant(variant: Variant) -> Self {
        if variant.uses_attention() {
            EvalMode::Att
        } else {
            EvalMode::Ave
        }
    }
}

impl fmt::Display for EvalMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            EvalMode::Ave => "ave",
            EvalMode::Att => "att",
        })
    }
}

impl FromStr for EvalMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "ave" => Ok(EvalMode::Ave),
            "att" => Ok(EvalMode::Att),
            other => Err(Error::usage(format!("unknown mode {other:?}, expected ave or att"))),
        }
    }
}

/// Scores every class for one bag, dropout off.
pub fn predict_bag(bag: &MentionBag, params: &ModelParams, cfg: &ModelConfig, mode: EvalMode) -> Result<Vec<f64>> {
    if bag.mentions.is_empty() {
        return Err(Error::usage("cannot score an empty bag"));
    }
    let sentences = bag
        .mentions
        .iter()
        .map(|m| encode(m, &params.encoder, cfg.encoder.clip, cfg.keep_prob, None))
        .collect::<Result<Vec<_>>>()?;
    match mode {
        EvalMode::Ave => score_all(&ave(&sentences)?.s, &params.classes),
        EvalMode::Att => (0..params.num_classes())
            .map(|c| {
                let rep = att(&sentences, c, &params.classes, cfg.ranking.attention_bias)?;
                score(&rep.s, c, &params.classes)
            })
            .collect(),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Prediction {
    pub tuple_id: String,
    pub class: usize,
    pub score: f64,
    pub correct: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct PrPoint {
    pub precision: f64,
    pub recall: f64,
}

/// Ranked predictions with the precision/recall point of every prefix.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PrCurve {
    pub predictions: Vec<Prediction>,
    pub points: Vec<PrPoint>,
    pub total_gold: usize,
}

impl PrCurve {
    /// Sorts by descending score (ties by tuple id, then class) and computes
    /// the prefix points.
    pub fn from_predictions(mut predictions: Vec<Prediction>, total_gold: usize) -> Result<Self> {
        if total_gold == 0 {
            return Err(Error::usage("test set has no gold facts"));
        }
        if predictions.iter().any(|p| !p.score.is_finite()) {
            return Err(Error::Numeric("non-finite prediction score".into()));
        }
        predictions.sort_by(|a, b| {
            b.score
                .total_cmp(&a.score)
                .then_with(|| a.tuple_id.cmp(&b.tuple_id))
                .then_with(|| a.class.cmp(&b.class))
        });
        let mut correct = 0usize;
        let points = predictions
            .iter()
            .enumerate()
            .map(|(i, p)| {
                correct += usize::from(p.correct);
                PrPoint {
                    precision: correct as f64 / (i + 1) as f64,
                    recall: correct as f64 / total_gold as f64,
                }
            })
            .collect();
        Ok(PrCurve {
            predictions,
            points,
            total_gold,
        })
    }

    pub fn len(&self) -> usize {
        self.predictions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.predictions.is_empty()
    }

    /// Fraction correct among the top `n` (or all, if fewer exist).
    pub fn precision_at(&self, n: usize) -> f64 {
        let n = n.min(self.len());
        if n == 0 {
            return 0.0;
        }
        self.predictions[..n].iter().filter(|p| p.correct).count() as f64 / n as f64
    }

    pub fn p_at_n(&self, ns: &[usize]) -> PAtN {
        let values: Vec<(usize, f64)> = ns.iter().map(|&n| (n, self.precision_at(n))).collect();
        let mean = if values.is_empty() {
            0.0
        } else {
            values.iter().map(|(_, p)| p).sum::<f64>() / values.len() as f64
        };
        PAtN { values, mean }
    }
}

/// Precision at several cut-offs plus their mean.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PAtN {
    pub values: Vec<(usize, f64)>,
    pub mean: f64,
}

/// Harmonic mean of precision and recall, zero when both are zero.
pub fn f_measure(p: &PrPoint) -> f64 {
    if p.precision + p.recall == 0.0 {
        0.0
    } else {
        2.0 * p.precision * p.recall / (p.precision + p.recall)
    }
}

/// Best F over all ranking prefixes.
pub fn max_f(curve: &PrCurve) -> f64 {
    curve.points.iter().map(f_measure).fold(0.0, f64::max)
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct EvalOptions {
    /// Only bags with more than one mention enter the candidate pool.
    pub multi_sentence_only: bool,
}

/// Scores all bags in parallel (order-preserving) and builds the curve.
pub fn pr_curve(
    bags: &[MentionBag],
    params: &ModelParams,
    cfg: &ModelConfig,
    schema: &RelationSchema,
    mode: EvalMode,
    opts: EvalOptions,
) -> Result<PrCurve> {
    let pool: Vec<&MentionBag> = bags
        .iter()
        .filter(|b| !opts.multi_sentence_only || b.mentions.len() > 1)
        .collect();
    let scored: Vec<Vec<f64>> = pool
        .par_iter()
        .map(|b| predict_bag(b, params, cfg, mode))
        .collect::<Result<_>>()?;
    let nr = schema.nr_index();
    let total_gold = pool
        .iter()
        .map(|b| b.labels().iter().filter(|&&c| c != nr).count())
        .sum();
    let mut predictions = Vec::with_capacity(pool.len() * schema.num_classes());
    for (bag, scores) in pool.iter().zip(scored) {
        for (class, s) in scores.into_iter().enumerate() {
            if class == nr {
                continue;
            }
            predictions.push(Prediction {
                tuple_id: bag.tuple_id.clone(),
                class,
                score: s,
                correct: bag.has_label(class),
            });
        }
    }
    PrCurve::from_predictions(predictions, total_gold)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct InspectRow {
    pub relation: String,
    pub score: f64,
    pub is_gold: bool,
}

/// Per-class score table for one entity tuple, optionally shifted by +10.
pub fn inspect(
    tuple_id: &str,
    bags: &[MentionBag],
    params: &ModelParams,
    cfg: &ModelConfig,
    schema: &RelationSchema,
    mode: EvalMode,
    rescale: bool,
) -> Result<Vec<InspectRow>> {
    let bag = bags
        .iter()
        .find(|b| b.tuple_id == tuple_id)
        .ok_or_else(|| Error::usage(format!("tuple {tuple_id:?} not in the test set")))?;
    let shift = if rescale { INSPECT_SHIFT } else { 0.0 };
    Ok(predict_bag(bag, params, cfg, mode)?
        .into_iter()
        .enumerate()
        .map(|(c, s)| InspectRow {
            relation: schema.name(c).to_string(),
            score: s + shift,
            is_gold: bag.has_label(c),
        })
        .collect())
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    File::create(path)
        .map(BufWriter::new)
        .map_err(|e| Error::io(path, e))
}

/// `rank,score,tuple_id,relation,correct,precision,recall`, at most `limit`
/// rows.
pub fn write_pr_csv(path: &Path, curve: &PrCurve, schema: &RelationSchema, limit: usize) -> Result<usize> {
    let mut w = create(path)?;
    let io = |e| Error::io(path, e);
    writeln!(w, "rank,score,tuple_id,relation,correct,precision,recall").map_err(io)?;
    let rows = curve.len().min(limit);
    for (i, (p, pt)) in curve.predictions.iter().zip(&curve.points).take(rows).enumerate() {
        writeln!(
            w,
            "{},{},{},{},{},{},{}",
            i + 1,
            p.score,
            csv_field(&p.tuple_id),
            csv_field(schema.name(p.class)),
            u8::from(p.correct),
            pt.precision,
            pt.recall
        )
        .map_err(io)?;
    }
    w.flush().map_err(io)?;
    Ok(rows)
}

/// `n,precision` rows followed by a `mean` row.
pub fn write_patn_csv(path: &Path, patn: &PAtN) -> Result<()> {
    let mut w = create(path)?;
    let io = |e| Error::io(path, e);
    writeln!(w, "n,precision").map_err(io)?;
    for (n, p) in &patn.values {
        writeln!(w, "{n},{p}").map_err(io)?;
    }
    writeln!(w, "mean,{}", patn.mean).map_err(io)?;
    w.flush().map_err(io)
}

/// `relation,score,is_gold`.
pub fn write_inspect_csv(out: &mut impl Write, rows: &[InspectRow]) -> std::io::Result<()> {
    writeln!(out, "relation,score,is_gold")?;
    for r in rows {
        writeln!(out, "{},{},{}", csv_field(&r.relation), r.score, u8::from(r.is_gold))?;
    }
    Ok(())
}

fn csv_field(s: &str) -> String {
    if s.contains([',', '"', '\n']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}
