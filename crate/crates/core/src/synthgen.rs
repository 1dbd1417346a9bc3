//! Seeded synthetic distant-supervision corpora.
//!
//! Every relation owns a few trigger words. A non-NR bag draws a primary
//! relation, adds tied partners with their configured probability, and plants
//! one trigger per label into a random mention at a non-entity position. With
//! probability `noise_rate` a label's trigger is dropped, so the label stays
//! on the bag without textual evidence. NR bags contain only filler words.
//!
//! Noise draws come from their own RNG stream. For a fixed seed, raising
//! `noise_rate` therefore drops a superset of triggers and leaves everything
//! else unchanged.

use std::collections::BTreeSet;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::corpus::{read_json, write_json, write_records, BagRecord, MentionRecord, RelationSchema};
use crate::error::{Error, Result};
use crate::eval::{max_f, PrCurve, Prediction};
use crate::numkit::Rng;

pub const TRAIN_FILE: &str = "train.jsonl";
pub const TEST_FILE: &str = "test.jsonl";
pub const TRUTH_FILE: &str = "truth.json";

const MAIN_STREAM: u64 = 0;
const NOISE_STREAM: u64 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TieKind {
    /// Either side pulls in the other.
    Cooccur,
    /// Only `a` pulls in `b`.
    Entail,
}

/// A dependency between two relations, given as 0-based indices into
/// [`SynthConfig::relation_names`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TiePair {
    pub a: usize,
    pub b: usize,
    pub prob: f64,
    pub kind: TieKind,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthConfig {
    /// Relation classes including NR.
    pub num_classes: usize,
    pub tie_pairs: Vec<TiePair>,
    pub triggers_per_class: usize,
    /// Trigger words plus filler words.
    pub vocab_size: usize,
    pub bag_size: (usize, usize),
    pub sentence_len: (usize, usize),
    pub num_train: usize,
    pub num_test: usize,
    pub nr_fraction: f64,
    /// NR fraction of the test split; defaults to `nr_fraction`.
    #[serde(default)]
    pub test_nr_fraction: Option<f64>,
    pub noise_rate: f64,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            num_classes: 7,
            tie_pairs: vec![
                TiePair { a: 0, b: 1, prob: 0.8, kind: TieKind::Cooccur },
                TiePair { a: 2, b: 3, prob: 0.8, kind: TieKind::Cooccur },
            ],
            triggers_per_class: 3,
            vocab_size: 200,
            bag_size: (1, 4),
            sentence_len: (8, 20),
            num_train: 2000,
            num_test: 500,
            nr_fraction: 0.7,
            test_nr_fraction: None,
            noise_rate: 0.2,
            seed: 1,
        }
    }
}

impl SynthConfig {
    pub fn num_relations(&self) -> usize {
        self.num_classes.saturating_sub(1)
    }

    /// Non-NR relation names, `/rel/00`, `/rel/01`, ...
    pub fn relation_names(&self) -> Vec<String> {
        (0..self.num_relations()).map(|i| format!("/rel/{i:02}")).collect()
    }

    pub fn schema(&self) -> Result<RelationSchema> {
        RelationSchema::from_relations(self.relation_names())
    }

    pub fn validate(&self) -> Result<()> {
        let r = self.num_relations();
        if r == 0 {
            return Err(Error::usage("need at least one non-NR relation"));
        }
        if self.triggers_per_class == 0 {
            return Err(Error::usage("triggers_per_class must be positive"));
        }
        if self.vocab_size <= r * self.triggers_per_class {
            return Err(Error::usage(format!(
                "vocab_size {} leaves no filler words after {} triggers",
                self.vocab_size,
                r * self.triggers_per_class
            )));
        }
        let (b0, b1) = self.bag_size;
        if b0 == 0 || b0 > b1 {
            return Err(Error::usage("bag_size must be a non-empty range starting at 1 or more"));
        }
        let (l0, l1) = self.sentence_len;
        if l0 < 3 || l0 > l1 {
            return Err(Error::usage("sentence_len must be a range with minimum 3"));
        }
        let unit = |p: f64| (0.0..=1.0).contains(&p);
        if !unit(self.nr_fraction) || !unit(self.noise_rate) || !self.test_nr_fraction.map_or(true, unit) {
            return Err(Error::usage("fractions and rates must lie in [0, 1]"));
        }
        for t in &self.tie_pairs {
            if t.a >= r || t.b >= r || t.a == t.b {
                return Err(Error::usage(format!("tie pair ({}, {}) is invalid for {r} relations", t.a, t.b)));
            }
            if !unit(t.prob) {
                return Err(Error::usage("tie probabilities must lie in [0, 1]"));
            }
        }
        Ok(())
    }

    fn trigger_word(c: usize, k: usize) -> String {
        format!("trg{c}_{k}")
    }

    fn filler_count(&self) -> usize {
        self.vocab_size - self.num_relations() * self.triggers_per_class
    }
}

/// Where one label's trigger went.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Planted {
    pub relation: String,
    pub mention: usize,
    pub position: usize,
    pub token: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BagTruth {
    pub tuple_id: String,
    pub primary: Option<String>,
    pub labels: Vec<String>,
    pub planted: Vec<Planted>,
    /// Labels whose trigger was dropped.
    pub dropped: Vec<String>,
}

/// Config echo plus per-bag planted evidence.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Truth {
    pub config: SynthConfig,
    pub relations: Vec<String>,
    pub train: Vec<BagTruth>,
    pub test: Vec<BagTruth>,
}

impl Truth {
    pub fn load(path: &Path) -> Result<Self> {
        read_json(path)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GeneratedCorpus {
    pub train: Vec<BagRecord>,
    pub test: Vec<BagRecord>,
    pub truth: Truth,
}

impl GeneratedCorpus {
    /// Writes `train.jsonl`, `test.jsonl` and `truth.json` into `dir`.
    pub fn write(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        write_records(&dir.join(TRAIN_FILE), &self.train)?;
        write_records(&dir.join(TEST_FILE), &self.test)?;
        write_json(&dir.join(TRUTH_FILE), &self.truth)
    }
}

struct Split<'a> {
    prefix: &'a str,
    count: usize,
    nr_fraction: f64,
}

/// Generates both splits. Deterministic in `cfg`.
pub fn generate(cfg: &SynthConfig) -> Result<GeneratedCorpus> {
    cfg.validate()?;
    let names = cfg.relation_names();
    let mut rng = Rng::for_stream(cfg.seed, MAIN_STREAM);
    let mut noise = Rng::for_stream(cfg.seed, NOISE_STREAM);
    let mut out = Vec::new();
    for split in [
        Split { prefix: "train", count: cfg.num_train, nr_fraction: cfg.nr_fraction },
        Split { prefix: "test", count: cfg.num_test, nr_fraction: cfg.test_nr_fraction.unwrap_or(cfg.nr_fraction) },
    ] {
        let nr_count = (split.nr_fraction * split.count as f64).round() as usize;
        let mut is_nr: Vec<bool> = (0..split.count).map(|i| i < nr_count).collect();
        rng.shuffle(&mut is_nr);
        let mut records = Vec::with_capacity(split.count);
        let mut truths = Vec::with_capacity(split.count);
        for (i, nr) in is_nr.into_iter().enumerate() {
            let id = format!("{}-{i:06}", split.prefix);
            let (rec, truth) = generate_bag(cfg, &names, id, nr, &mut rng, &mut noise);
            records.push(rec);
            truths.push(truth);
        }
        out.push((records, truths));
    }
    let (test, test_truth) = out.pop().unwrap();
    let (train, train_truth) = out.pop().unwrap();
    Ok(GeneratedCorpus {
        train,
        test,
        truth: Truth {
            config: cfg.clone(),
            relations: names,
            train: train_truth,
            test: test_truth,
        },
    })
}

fn sample_labels(cfg: &SynthConfig, rng: &mut Rng) -> (usize, BTreeSet<usize>) {
    let primary = rng.below(cfg.num_relations());
    let mut labels = BTreeSet::from([primary]);
    for t in &cfg.tie_pairs {
        let draw = rng.uniform();
        let partner = match t.kind {
            _ if primary == t.a => Some(t.b),
            TieKind::Cooccur if primary == t.b => Some(t.a),
            _ => None,
        };
        if let Some(p) = partner.filter(|_| draw < t.prob) {
            labels.insert(p);
        }
    }
    (primary, labels)
}

fn generate_bag(
    cfg: &SynthConfig,
    names: &[String],
    tuple_id: String,
    nr: bool,
    rng: &mut Rng,
    noise: &mut Rng,
) -> (BagRecord, BagTruth) {
    let filler = cfg.filler_count();
    let k = rng.range_inclusive(cfg.bag_size.0, cfg.bag_size.1);
    let mut mentions: Vec<MentionRecord> = (0..k)
        .map(|_| {
            let n = rng.range_inclusive(cfg.sentence_len.0, cfg.sentence_len.1);
            let tokens = (0..n).map(|_| format!("w{}", rng.below(filler))).collect();
            let e1 = rng.below(n);
            let mut e2 = rng.below(n - 1);
            if e2 >= e1 {
                e2 += 1;
            }
            MentionRecord {
                tokens,
                e1: Some(e1),
                e2: Some(e2),
                label_provenance: Some(Vec::new()),
            }
        })
        .collect();
    let mut truth = BagTruth {
        tuple_id: tuple_id.clone(),
        primary: None,
        labels: Vec::new(),
        planted: Vec::new(),
        dropped: Vec::new(),
    };
    if nr {
        truth.labels.push(crate::corpus::NR_NAME.to_string());
        let rec = BagRecord {
            tuple_id,
            labels: truth.labels.clone(),
            mentions,
        };
        return (rec, truth);
    }
    let (primary, labels) = sample_labels(cfg, rng);
    truth.primary = Some(names[primary].clone());
    let mut used: Vec<BTreeSet<usize>> = vec![BTreeSet::new(); k];
    for &c in &labels {
        let name = names[c].clone();
        truth.labels.push(name.clone());
        let j = rng.below(k);
        let m = &mut mentions[j];
        let (e1, e2) = (m.e1.unwrap(), m.e2.unwrap());
        let free: Vec<usize> = (0..m.tokens.len())
            .filter(|&p| p != e1 && p != e2 && !used[j].contains(&p))
            .collect();
        let slot = rng.below(free.len().max(1));
        let token = SynthConfig::trigger_word(c, rng.below(cfg.triggers_per_class));
        if noise.uniform() < cfg.noise_rate || free.is_empty() {
            truth.dropped.push(name);
            continue;
        }
        let position = free[slot];
        used[j].insert(position);
        m.tokens[position] = token.clone();
        m.label_provenance.get_or_insert_with(Vec::new).push(name.clone());
        truth.planted.push(Planted {
            relation: name,
            mention: j,
            position,
            token,
        });
    }
    let rec = BagRecord {
        tuple_id,
        labels: truth.labels.clone(),
        mentions,
    };
    (rec, truth)
}

/// Observed vs configured tie rates.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TieStat {
    pub pair: TiePair,
    /// Bags whose primary relation can pull in the partner.
    pub support: usize,
    /// Fraction of those bags that carry the partner.
    pub observed: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CorpusStats {
    pub train_nr_ratio: f64,
    pub test_nr_ratio: f64,
    pub ties: Vec<TieStat>,
}

fn nr_ratio(bags: &[BagTruth]) -> f64 {
    if bags.is_empty() {
        return 0.0;
    }
    bags.iter().filter(|b| b.primary.is_none()).count() as f64 / bags.len() as f64
}

/// NR ratios of both splits and tie rates measured on the training split.
pub fn corpus_stats(truth: &Truth) -> CorpusStats {
    let names = &truth.relations;
    let ties = truth
        .config
        .tie_pairs
        .iter()
        .map(|t| {
            let (mut support, mut hit) = (0usize, 0usize);
            for b in &truth.train {
                let Some(p) = &b.primary else { continue };
                let partner = if *p == names[t.a] {
                    Some(&names[t.b])
                } else if t.kind == TieKind::Cooccur && *p == names[t.b] {
                    Some(&names[t.a])
                } else {
                    None
                };
                if let Some(q) = partner {
                    support += 1;
                    hit += usize::from(b.labels.contains(q));
                }
            }
            TieStat {
                pair: *t,
                support,
                observed: if support == 0 { 0.0 } else { hit as f64 / support as f64 },
            }
        })
        .collect();
    CorpusStats {
        train_nr_ratio: nr_ratio(&truth.train),
        test_nr_ratio: nr_ratio(&truth.test),
        ties,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Ceiling {
    pub max_f: f64,
    /// Recall of the facts that kept their trigger.
    pub evidence_recall: f64,
}

/// Max-F of an oracle on the test split that scores a relation 1 when its
/// trigger was planted, the tie probability when only a tied partner's
/// trigger was planted, and 0 otherwise.
pub fn bayes_ceiling(truth: &Truth) -> Result<Ceiling> {
    let names = &truth.relations;
    let ties = &truth.config.tie_pairs;
    let mut predictions = Vec::new();
    let mut gold = 0usize;
    let mut evidenced = 0usize;
    for b in &truth.test {
        let planted: BTreeSet<usize> = b
            .planted
            .iter()
            .filter_map(|p| names.iter().position(|n| *n == p.relation))
            .collect();
        for (c, name) in names.iter().enumerate() {
            let is_gold = b.labels.contains(name);
            gold += usize::from(is_gold);
            let score = if planted.contains(&c) {
                evidenced += 1;
                1.0
            } else {
                ties.iter()
                    .filter_map(|t| {
                        let from = if t.b == c {
                            Some(t.a)
                        } else if t.a == c && t.kind == TieKind::Cooccur {
                            Some(t.b)
                        } else {
                            None
                        };
                        from.filter(|f| planted.contains(f)).map(|_| t.prob)
                    })
                    .fold(0.0, f64::max)
            };
            predictions.push(Prediction {
                tuple_id: b.tuple_id.clone(),
                class: c,
                score,
                correct: is_gold,
            });
        }
    }
    let curve = PrCurve::from_predictions(predictions, gold)?;
    Ok(Ceiling {
        max_f: ceiling_max_f(&curve),
        evidence_recall: evidenced as f64 / gold as f64,
    })
}

/// Max-F over score thresholds: the oracle cannot order facts that share a
/// score, so only prefixes ending at a score change count.
fn ceiling_max_f(curve: &PrCurve) -> f64 {
    let cut: Vec<usize> = (0..curve.len())
        .filter(|&i| i + 1 == curve.len() || curve.predictions[i + 1].score != curve.predictions[i].score)
        .collect();
    let trimmed = PrCurve {
        predictions: cut.iter().map(|&i| curve.predictions[i].clone()).collect(),
        points: cut.iter().map(|&i| curve.points[i]).collect(),
        total_gold: curve.total_gold,
    };
    max_f(&trimmed)
}
