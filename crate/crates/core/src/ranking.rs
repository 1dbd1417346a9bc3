//! Pairwise ranking losses over class embeddings.
//!
//! The score of representation `s` for class `c` is `F(s, c) = W[c] . s`.
//! Every loss is built from two hinges,
//!
//! ```text
//! positive:  rho * max(0, sigma_plus  - F(s, c+))
//! negative:  rho * max(0, sigma_minus + F(s, c-))
//! ```
//!
//! where `c-` is the highest-scoring class outside the bag's labels. The
//! three variants differ in which representation each hinge reads:
//!
//! * [`Variant::Ave`]: one averaged representation, one negative hinge
//!   scaled by the number of positives.
//! * [`Variant::Att`]: one attention representation per positive `c+`
//!   (queried by `c+`), holding the `c+` hinge and its own negative.
//! * [`Variant::ExAtt`]: one attention representation per label `c*`,
//!   shared by the hinges of *all* positives, plus its own negative.
//!
//! With NR relief on, positive hinges for the NR class are skipped; NR stays
//! eligible as a negative and still queries attention.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::aggregate::{aggregate_backward, BagRepresentation, DEFAULT_ATTENTION_BIAS};
use crate::corpus::Mention;
use crate::encoder::{encoder_backward, EncodedSentence};
use crate::error::{Error, Result};
use crate::model::{Gradients, ModelParams};
use crate::numkit::{axpy, dot, DenseMatrix};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RankingConfig {
    /// Rescale factor `rho`.
    pub rho: f64,
    /// Positive margin `sigma+`.
    pub sigma_plus: f64,
    /// Negative margin `sigma-`.
    pub sigma_minus: f64,
    /// Skip positive hinges on the NR class.
    pub relieve_nr: bool,
    /// Attention bias factor `a`.
    pub attention_bias: f64,
}

impl Default for RankingConfig {
    fn default() -> Self {
        RankingConfig {
            rho: 2.0,
            sigma_plus: 2.5,
            sigma_minus: 0.5,
            relieve_nr: true,
            attention_bias: DEFAULT_ATTENTION_BIAS,
        }
    }
}

impl RankingConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.rho > 0.0) {
            return Err(Error::usage("rho must be positive"));
        }
        if !(self.sigma_plus > -self.sigma_minus) {
            return Err(Error::usage(
                "margins must satisfy sigma_plus > -sigma_minus",
            ));
        }
        if !self.attention_bias.is_finite() {
            return Err(Error::usage("attention bias must be finite"));
        }
        Ok(())
    }
}

/// Which loss (and bag aggregation) to train with.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Variant {
    /// Variant 1, averaged bag representation.
    Ave,
    /// Variant 2, attention queried per positive.
    Att,
    /// Variant 3, attention per label shared across all positives.
    ExAtt,
}

impl Variant {
    pub const ALL: [Variant; 3] = [Variant::Ave, Variant::Att, Variant::ExAtt];

    pub fn number(self) -> u8 {
        match self {
            Variant::Ave => 1,
            Variant::Att => 2,
            Variant::ExAtt => 3,
        }
    }

    pub fn from_number(n: u8) -> Result<Self> {
        match n {
            1 => Ok(Variant::Ave),
            2 => Ok(Variant::Att),
            3 => Ok(Variant::ExAtt),
            _ => Err(Error::usage(format!("variant must be 1, 2 or 3, got {n}"))),
        }
    }

    pub fn uses_attention(self) -> bool {
        !matches!(self, Variant::Ave)
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let name = match self {
            Variant::Ave => "Rank+AVE",
            Variant::Att => "Rank+ATT",
            Variant::ExAtt => "Rank+ExATT",
        };
        f.write_str(name)
    }
}

impl FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "1" | "ave" => Ok(Variant::Ave),
            "2" | "att" => Ok(Variant::Att),
            "3" | "exatt" => Ok(Variant::ExAtt),
            other => Err(Error::usage(format!("unknown variant {other:?}"))),
        }
    }
}

/// `F(s, c) = W[c] . s`.
pub fn score(s: &[f64], class: usize, classes: &DenseMatrix) -> Result<f64> {
    if class >= classes.rows() {
        return Err(Error::usage(format!("class {class} out of range")));
    }
    if s.len() != classes.cols() {
        return Err(Error::usage(format!(
            "representation width {} differs from class embedding width {}",
            s.len(),
            classes.cols()
        )));
    }
    Ok(dot(classes.row(class), s))
}

/// Scores of `s` against every class.
pub fn score_all(s: &[f64], classes: &DenseMatrix) -> Result<Vec<f64>> {
    (0..classes.rows()).map(|c| score(s, c, classes)).collect()
}

/// Highest-scoring class outside `positives`; ties go to the lowest index.
pub fn select_negative(scores: &[f64], positives: &[usize]) -> Result<usize> {
    let mut best: Option<usize> = None;
    for (c, &v) in scores.iter().enumerate() {
        if positives.contains(&c) {
            continue;
        }
        if best.is_none_or(|b| v > scores[b]) {
            best = Some(c);
        }
    }
    best.ok_or_else(|| Error::usage("every class is positive, no negative to select"))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum HingeKind {
    Positive,
    Negative,
}

/// One hinge of a loss, active or not.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HingeTerm {
    /// Index of the representation the hinge reads.
    pub rep: usize,
    pub class: usize,
    pub kind: HingeKind,
    /// Contribution to the loss value.
    pub value: f64,
    /// `dG / dF(s, class)`; zero when the hinge is inactive.
    pub slope: f64,
}

/// Result of evaluating a ranking loss on one bag.
#[derive(Debug, Clone, PartialEq)]
pub struct LossReport {
    pub variant: Variant,
    pub value: f64,
    /// Query class of each representation (`None` for AVE).
    pub queries: Vec<Option<usize>>,
    /// `F(s_r, c)` for every representation `r` and class `c`.
    pub scores: Vec<Vec<f64>>,
    /// Selected negative class per representation.
    pub negatives: Vec<usize>,
    pub terms: Vec<HingeTerm>,
    /// `dG / ds_r` per representation.
    pub rep_grads: Vec<Vec<f64>>,
    /// `dG / dW[c]` through the score function, keyed by class.
    pub class_grads: BTreeMap<usize, Vec<f64>>,
}

impl LossReport {
    pub fn is_zero(&self) -> bool {
        self.terms.iter().all(|t| t.slope == 0.0)
    }
}

fn hinge(x: f64) -> f64 {
    x.max(0.0)
}

fn check_labels(labels: &[usize], classes: &DenseMatrix) -> Result<()> {
    if labels.is_empty() {
        return Err(Error::usage("bag has no positive labels"));
    }
    if labels.iter().any(|&c| c >= classes.rows()) {
        return Err(Error::usage("label outside the class range"));
    }
    if labels.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::usage("labels must be sorted and distinct"));
    }
    Ok(())
}

struct Builder<'a> {
    cfg: &'a RankingConfig,
    classes: &'a DenseMatrix,
    report: LossReport,
}

impl<'a> Builder<'a> {
    fn new(variant: Variant, cfg: &'a RankingConfig, classes: &'a DenseMatrix) -> Self {
        Builder {
            cfg,
            classes,
            report: LossReport {
                variant,
                value: 0.0,
                queries: Vec::new(),
                scores: Vec::new(),
                negatives: Vec::new(),
                terms: Vec::new(),
                rep_grads: Vec::new(),
                class_grads: BTreeMap::new(),
            },
        }
    }

    fn add_rep(&mut self, query: Option<usize>, s: &[f64]) -> Result<usize> {
        let scores = score_all(s, self.classes)?;
        self.report.queries.push(query);
        self.report.scores.push(scores);
        self.report.rep_grads.push(vec![0.0; s.len()]);
        Ok(self.report.scores.len() - 1)
    }

    fn term(&mut self, rep: usize, s: &[f64], class: usize, kind: HingeKind, scale: f64) {
        let f = self.report.scores[rep][class];
        let rho = self.cfg.rho;
        let (value, slope) = match kind {
            HingeKind::Positive => {
                let h = hinge(self.cfg.sigma_plus - f);
                (rho * h, if h > 0.0 { -rho } else { 0.0 })
            }
            HingeKind::Negative => {
                let h = hinge(self.cfg.sigma_minus + f);
                (rho * scale * h, if h > 0.0 { rho * scale } else { 0.0 })
            }
        };
        self.report.value += value;
        if slope != 0.0 {
            axpy(&mut self.report.rep_grads[rep], slope, self.classes.row(class));
            let g = self
                .report
                .class_grads
                .entry(class)
                .or_insert_with(|| vec![0.0; s.len()]);
            axpy(g, slope, s);
        }
        self.report.terms.push(HingeTerm {
            rep,
            class,
            kind,
            value,
            slope,
        });
    }

    fn negative(&mut self, rep: usize, labels: &[usize]) -> Result<usize> {
        let c = select_negative(&self.report.scores[rep], labels)?;
        self.report.negatives.push(c);
        Ok(c)
    }
}

fn counts_as_positive(class: usize, nr_class: usize, cfg: &RankingConfig) -> bool {
    !(cfg.relieve_nr && class == nr_class)
}

/// Variant 1: averaged representation `s`,
/// `sum_{c+} rho[sigma+ - F(s,c+)]_+ + rho |L| [sigma- + F(s,c-)]_+`.
///
/// Under NR relief the multiplier counts only the positives that keep their
/// hinge, with a floor of one so an NR-only bag still trains its negative.
pub fn loss_variant1(
    labels: &[usize],
    rep: &[f64],
    classes: &DenseMatrix,
    nr_class: usize,
    cfg: &RankingConfig,
) -> Result<LossReport> {
    check_labels(labels, classes)?;
    let mut b = Builder::new(Variant::Ave, cfg, classes);
    let r = b.add_rep(None, rep)?;
    let mut active_positives = 0usize;
    for &c in labels {
        if counts_as_positive(c, nr_class, cfg) {
            b.term(r, rep, c, HingeKind::Positive, 1.0);
            active_positives += 1;
        }
    }
    let multiplier = if cfg.relieve_nr {
        active_positives.max(1)
    } else {
        labels.len()
    };
    let neg = b.negative(r, labels)?;
    b.term(r, rep, neg, HingeKind::Negative, multiplier as f64);
    Ok(b.report)
}

fn attention_loss<S: AsRef<[f64]>>(
    variant: Variant,
    labels: &[usize],
    reps: &[S],
    classes: &DenseMatrix,
    nr_class: usize,
    cfg: &RankingConfig,
) -> Result<LossReport> {
    check_labels(labels, classes)?;
    if reps.len() != labels.len() {
        return Err(Error::usage(format!(
            "{} labels but {} query representations",
            labels.len(),
            reps.len()
        )));
    }
    let mut b = Builder::new(variant, cfg, classes);
    for (&query, s) in labels.iter().zip(reps) {
        let s = s.as_ref();
        let r = b.add_rep(Some(query), s)?;
        let positives: &[usize] = match variant {
            Variant::Att => std::slice::from_ref(&query),
            _ => labels,
        };
        for &c in positives {
            if counts_as_positive(c, nr_class, cfg) {
                b.term(r, s, c, HingeKind::Positive, 1.0);
            }
        }
        let neg = b.negative(r, labels)?;
        b.term(r, s, neg, HingeKind::Negative, 1.0);
    }
    Ok(b.report)
}

/// Variant 2: `reps[i]` is the attention representation queried by
/// `labels[i]`. Each contributes its own positive hinge and one negative.
pub fn loss_variant2<S: AsRef<[f64]>>(
    labels: &[usize],
    reps: &[S],
    classes: &DenseMatrix,
    nr_class: usize,
    cfg: &RankingConfig,
) -> Result<LossReport> {
    attention_loss(Variant::Att, labels, reps, classes, nr_class, cfg)
}

/// Variant 3: `reps[i]` is queried by `labels[i]` and scored against every
/// positive, plus one negative per representation.
pub fn loss_variant3<S: AsRef<[f64]>>(
    labels: &[usize],
    reps: &[S],
    classes: &DenseMatrix,
    nr_class: usize,
    cfg: &RankingConfig,
) -> Result<LossReport> {
    attention_loss(Variant::ExAtt, labels, reps, classes, nr_class, cfg)
}

/// Forward state of one bag, kept for [`loss_backward`].
#[derive(Debug, Clone)]
pub struct BagForward {
    pub sentences: Vec<EncodedSentence>,
    pub reps: Vec<BagRepresentation>,
}

/// Chains the loss subgradient through aggregation and the encoder.
///
/// The selected negatives are treated as constants.
pub fn loss_backward(
    report: &LossReport,
    forward: &BagForward,
    mentions: &[Mention],
    params: &ModelParams,
    clip: usize,
    attention_bias: f64,
) -> Result<Gradients> {
    if report.rep_grads.len() != forward.reps.len()
        || forward.sentences.len() != mentions.len()
    {
        return Err(Error::usage("loss report does not match the bag forward state"));
    }
    let mut grads = Gradients::zeros_like(params);
    if report.is_zero() {
        return Ok(grads);
    }
    for (c, g) in &report.class_grads {
        axpy(grads.classes.row_mut(*c), 1.0, g);
    }
    let dim = params.sentence_dim();
    let mut sentence_grads = vec![vec![0.0; dim]; mentions.len()];
    for (rep, grad) in forward.reps.iter().zip(&report.rep_grads) {
        if grad.iter().all(|v| *v == 0.0) {
            continue;
        }
        let agg = aggregate_backward(grad, rep, &forward.sentences, &params.classes, attention_bias)?;
        for (acc, g) in sentence_grads.iter_mut().zip(&agg.sentences) {
            axpy(acc, 1.0, g);
        }
        if let Some((c, g)) = agg.query {
            axpy(grads.classes.row_mut(c), 1.0, &g);
        }
    }
    for ((g, cache), m) in sentence_grads.iter().zip(&forward.sentences).zip(mentions) {
        encoder_backward(g, cache, m, &params.encoder, clip, &mut grads.encoder)?;
    }
    Ok(grads)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    /// Width-1 setup: with `s = [1]`, `F(s, c)` is just `W[c]`.
    fn scores_as_classes(scores: &[f64]) -> DenseMatrix {
        DenseMatrix::from_vec(scores.len(), 1, scores.to_vec()).unwrap()
    }

    const NR: usize = 0;

    #[test]
    fn score_examples() {
        let w = DenseMatrix::from_rows(&[vec![1.0, 2.0], vec![-0.5, 4.0]]).unwrap();
        assert_eq!(score(&[0.0, 0.0], 0, &w).unwrap(), 0.0);
        assert_eq!(score(&[0.0, 0.0], 1, &w).unwrap(), 0.0);
        assert_eq!(score(&[3.0, -1.0], 0, &w).unwrap(), 1.0);
        let s = [0.3, -1.7];
        let s2 = [0.6, -3.4];
        assert_eq!(score(&s2, 1, &w).unwrap(), 2.0 * score(&s, 1, &w).unwrap());
        assert!(score(&[1.0], 0, &w).is_err());
        assert!(score(&[1.0, 1.0], 2, &w).is_err());
    }

    #[test]
    fn negative_selection_examples() {
        assert_eq!(select_negative(&[0.3, 0.9, 0.1], &[0]).unwrap(), 1);
        assert_eq!(select_negative(&[5.0, 0.2, 0.2, 0.2], &[0]).unwrap(), 1);
        assert!(select_negative(&[1.0, 2.0], &[0, 1]).is_err());
        // NR (index 0 here) is an eligible negative
        assert_eq!(select_negative(&[0.8, 0.1, 0.3], &[2]).unwrap(), 0);
    }

    #[test]
    fn variant1_inactive_hinges() {
        let cfg = RankingConfig::default();
        let w = scores_as_classes(&[-5.0, 3.0, -1.0]);
        let r = loss_variant1(&[1], &[1.0], &w, NR, &cfg).unwrap();
        assert_eq!(r.value, 0.0);
        assert!(r.is_zero());
    }

    #[test]
    fn variant1_hand_values() {
        let cfg = RankingConfig::default();
        let w = scores_as_classes(&[-5.0, 1.5, 1.0]);
        let r = loss_variant1(&[1], &[1.0], &w, NR, &cfg).unwrap();
        assert_eq!(r.value, 5.0);
        assert_eq!(r.negatives, vec![2]);

        let w = scores_as_classes(&[-5.0, 1.5, 1.5, 1.0]);
        let r = loss_variant1(&[1, 2], &[1.0], &w, NR, &cfg).unwrap();
        assert_eq!(r.value, 10.0);
    }

    #[test]
    fn variant2_hand_values() {
        let cfg = RankingConfig::default();
        let w = scores_as_classes(&[-5.0, 2.5, -0.5]);
        assert_eq!(loss_variant2(&[1], &[[1.0]], &w, NR, &cfg).unwrap().value, 0.0);
        let w = scores_as_classes(&[-5.0, 0.0, 0.0]);
        assert_eq!(loss_variant2(&[1], &[[1.0]], &w, NR, &cfg).unwrap().value, 6.0);
        assert!(loss_variant2::<[f64; 1]>(&[1], &[], &w, NR, &cfg).is_err());
    }

    #[test]
    fn variant2_negatives_are_chosen_per_positive() {
        // 4 classes (0 = NR), positives {1, 2}, width 2 so the two query
        // representations can rank the negatives differently.
        let cfg = RankingConfig::default();
        let w = DenseMatrix::from_rows(&[
            vec![0.0, 0.0],
            vec![1.0, 0.0],
            vec![0.0, 1.0],
            vec![0.4, -0.6],
        ])
        .unwrap();
        let reps = [vec![1.0, 0.2], vec![-1.0, 0.5]];
        let r = loss_variant2(&[1, 2], &reps, &w, NR, &cfg).unwrap();
        for (rep, s) in reps.iter().enumerate() {
            // brute force over {0, 3}
            let scores: Vec<f64> = (0..4).map(|c| dot(w.row(c), s)).collect();
            let oracle = [0usize, 3]
                .into_iter()
                .fold(None::<usize>, |b, c| match b {
                    Some(b) if scores[b] >= scores[c] => Some(b),
                    _ => Some(c),
                })
                .unwrap();
            assert_eq!(r.negatives[rep], oracle);
        }
        assert_eq!(r.negatives, vec![3, 0]);
    }

    #[test]
    fn variant3_collapses_and_walkthrough() {
        let cfg = RankingConfig::default();
        let w = scores_as_classes(&[0.2, 1.0, -0.3]);
        let v2 = loss_variant2(&[1], &[[1.0]], &w, NR, &cfg).unwrap();
        let v3 = loss_variant3(&[1], &[[1.0]], &w, NR, &cfg).unwrap();
        assert_eq!(v2.value.to_bits(), v3.value.to_bits());

        let w = scores_as_classes(&[-1.0, 3.0, 4.0, -2.0]);
        let r = loss_variant3(&[1, 2], &[[1.0], [1.0]], &w, NR, &cfg).unwrap();
        assert_eq!(r.value, 0.0);

        // Algorithm walkthrough by hand. Width 2, classes 0 = NR, 1, 2, 3.
        // W: NR=[0,0], c1=[1,0], c2=[0,1], c3=[1,1]
        // s^{c1} = [2, 0.5]: F = [0, 2, 0.5, 2.5]
        //   c+ = 1: 2*(2.5-2) = 1.0; c+ = 2: 2*(2.5-0.5) = 4.0
        //   c- = argmax over {0, 3} = 3: 2*(0.5+2.5) = 6.0
        // s^{c2} = [0, 3]: F = [0, 0, 3, 3]
        //   c+ = 1: 2*2.5 = 5.0; c+ = 2: 0
        //   c- = 3: 2*(0.5+3) = 7.0
        // G = 1 + 4 + 6 + 5 + 0 + 7 = 23
        let w = DenseMatrix::from_rows(&[
            vec![0.0, 0.0],
            vec![1.0, 0.0],
            vec![0.0, 1.0],
            vec![1.0, 1.0],
        ])
        .unwrap();
        let reps = [vec![2.0, 0.5], vec![0.0, 3.0]];
        let r = loss_variant3(&[1, 2], &reps, &w, NR, &cfg).unwrap();
        assert_eq!(r.value, 23.0);
        assert_eq!(r.negatives, vec![3, 3]);
    }

    #[test]
    fn nr_relief() {
        let w = scores_as_classes(&[0.0, 0.7, -0.2]);
        let relieved = RankingConfig::default();
        let plain = RankingConfig {
            relieve_nr: false,
            ..relieved
        };
        // NR-only bag under attention variants: only the negative hinge
        // on the best non-NR class (class 1, score 0.7) remains.
        for v in [loss_variant2, loss_variant3] {
            let r = v(&[NR], &[[1.0]], &w, NR, &relieved).unwrap();
            assert_eq!(r.negatives, vec![1]);
            assert!((r.value - 2.0 * (0.5 + 0.7)).abs() < 1e-12);
            assert!(r.terms.iter().all(|t| t.kind == HingeKind::Negative));
            let r = v(&[NR], &[[1.0]], &w, NR, &plain).unwrap();
            assert!((r.value - (2.0 * 2.5 + 2.0 * 1.2)).abs() < 1e-12);
        }
        // Variant 1 keeps a unit multiplier on NR-only bags
        let r = loss_variant1(&[NR], &[1.0], &w, NR, &relieved).unwrap();
        assert!((r.value - 2.4).abs() < 1e-12);
    }

    #[test]
    fn backward_zero_when_inactive() {
        let cfg = RankingConfig::default();
        let w = scores_as_classes(&[-5.0, 3.0, -1.0]);
        let r = loss_variant1(&[1], &[1.0], &w, NR, &cfg).unwrap();
        assert!(r.class_grads.is_empty());
        assert_eq!(r.rep_grads, vec![vec![0.0]]);
    }

    fn random_case(seed: u64, n_classes: usize, dim: usize) -> (DenseMatrix, Vec<Vec<f64>>) {
        let mut rng = crate::numkit::Rng::new(seed);
        let w = DenseMatrix::uniform(n_classes, dim, 2.0, &mut rng);
        let reps = (0..n_classes)
            .map(|_| (0..dim).map(|_| rng.uniform_in(-2.0, 2.0)).collect())
            .collect();
        (w, reps)
    }

    proptest! {
        #[test]
        fn select_negative_matches_filter_then_max(scores in prop::collection::vec(prop::sample::select(vec![-1.0f64, 0.0, 0.5, 1.0]), 2..12), mask in any::<u64>()) {
            let positives: Vec<usize> = (0..scores.len()).filter(|i| mask >> i & 1 == 1).collect();
            prop_assume!(positives.len() < scores.len());
            let negatives: Vec<usize> = (0..scores.len()).filter(|i| !positives.contains(i)).collect();
            let best = negatives.iter().map(|&c| scores[c]).fold(f64::NEG_INFINITY, f64::max);
            let oracle = *negatives.iter().find(|&&c| scores[c] == best).unwrap();
            prop_assert_eq!(select_negative(&scores, &positives).unwrap(), oracle);
        }

        #[test]
        fn losses_are_non_negative_and_zero_iff_margins_hold(seed in any::<u64>(), variant in 0usize..3, relieve in any::<bool>()) {
            let cfg = RankingConfig { relieve_nr: relieve, ..RankingConfig::default() };
            let (w, reps) = random_case(seed, 5, 3);
            let labels = [1usize, 3];
            let r = match variant {
                0 => loss_variant1(&labels, &reps[0], &w, NR, &cfg).unwrap(),
                1 => loss_variant2(&labels, &reps[..2], &w, NR, &cfg).unwrap(),
                _ => loss_variant3(&labels, &reps[..2], &w, NR, &cfg).unwrap(),
            };
            prop_assert!(r.value >= 0.0);
            let margins_hold = r.terms.iter().all(|t| {
                let f = r.scores[t.rep][t.class];
                match t.kind {
                    HingeKind::Positive => f >= cfg.sigma_plus,
                    HingeKind::Negative => f <= -cfg.sigma_minus,
                }
            });
            prop_assert_eq!(r.value == 0.0, margins_hold);
            for &n in &r.negatives {
                prop_assert!(!labels.contains(&n));
            }
        }

        #[test]
        fn variant3_equals_variant2_for_single_label(seed in any::<u64>(), label in 0usize..5, relieve in any::<bool>()) {
            let cfg = RankingConfig { relieve_nr: relieve, ..RankingConfig::default() };
            let (w, reps) = random_case(seed, 5, 4);
            let a = loss_variant2(&[label], &reps[..1], &w, NR, &cfg).unwrap();
            let b = loss_variant3(&[label], &reps[..1], &w, NR, &cfg).unwrap();
            prop_assert_eq!(a.value.to_bits(), b.value.to_bits());
            prop_assert_eq!(a.rep_grads, b.rep_grads);
            prop_assert_eq!(a.class_grads, b.class_grads);
        }

        #[test]
        fn raising_a_positive_score_never_raises_the_loss(seed in any::<u64>(), bump in 0.0f64..3.0) {
            let cfg = RankingConfig::default();
            let (mut w, reps) = random_case(seed, 4, 1);
            let s = [1.0];
            let _ = reps;
            let before = loss_variant1(&[2], &s, &w, NR, &cfg).unwrap().value;
            let v = w.get(2, 0);
            w.set(2, 0, v + bump);
            let after = loss_variant1(&[2], &s, &w, NR, &cfg).unwrap().value;
            prop_assert!(after <= before + 1e-12);
        }

        #[test]
        fn raising_the_selected_negative_never_lowers_the_loss(seed in any::<u64>(), bump in 0.0f64..3.0) {
            let cfg = RankingConfig::default();
            let (mut w, _) = random_case(seed, 4, 1);
            let s = [1.0];
            let r = loss_variant1(&[2], &s, &w, NR, &cfg).unwrap();
            let neg = r.negatives[0];
            let v = w.get(neg, 0);
            w.set(neg, 0, v + bump);
            let after = loss_variant1(&[2], &s, &w, NR, &cfg).unwrap().value;
            prop_assert!(after >= r.value - 1e-12);
        }
    }
}
