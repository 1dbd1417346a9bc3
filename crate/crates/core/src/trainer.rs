//! Mini-batch SGD over bags.
//!
//! Each epoch shuffles the training bags with a dedicated RNG stream, splits
//! them into batches and applies `theta <- theta - lr * mean_grad`. Per-bag
//! gradients are computed in parallel and summed in fixed chunks of
//! [`REDUCE_CHUNK`] bags, in bag order, so results do not depend on the
//! number of worker threads.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::corpus::{MentionBag, RelationSchema};
use crate::encoder::EncoderConfig;
use crate::error::{Error, Result};
use crate::eval::{max_f, pr_curve, EvalMode, EvalOptions};
use crate::model::{bag_gradient, Gradients, ModelConfig, ModelParams};
use crate::numkit::Rng;
use crate::ranking::{RankingConfig, Variant};

/// Bags summed sequentially before partial sums are combined.
pub const REDUCE_CHUNK: usize = 8;

const INIT_STREAM: u64 = 0;
const SHUFFLE_STREAM: u64 = 1;
const DROPOUT_KEY: u64 = 0xD50F_A11C_E5EE_D000;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub variant: Variant,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub epochs: usize,
    pub seed: u64,
    pub model: ModelConfig,
    /// Worker threads for per-bag gradients and dev scoring; 0 uses all cores.
    #[serde(default)]
    pub threads: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            variant: Variant::ExAtt,
            batch_size: 160,
            learning_rate: 0.03,
            epochs: 15,
            seed: 1,
            model: ModelConfig::default(),
            threads: 0,
        }
    }
}

impl TrainConfig {
    pub fn encoder(&self) -> &EncoderConfig {
        &self.model.encoder
    }

    pub fn ranking(&self) -> &RankingConfig {
        &self.model.ranking
    }

    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        if self.batch_size == 0 {
            return Err(Error::usage("batch size must be positive"));
        }
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::usage("learning rate must be finite and non-negative"));
        }
        Ok(())
    }

    fn pool(&self) -> Result<rayon::ThreadPool> {
        worker_pool(self.threads)
    }
}

fn worker_pool(threads: usize) -> Result<rayon::ThreadPool> {
    rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .map_err(|e| Error::usage(format!("cannot start worker threads: {e}")))
}

/// Runs `f` on a dedicated pool of `threads` workers (0 = all cores).
pub fn with_threads<R: Send>(threads: usize, f: impl FnOnce() -> R + Send) -> Result<R> {
    Ok(worker_pool(threads)?.install(f))
}

/// One row of the metrics log.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct EpochMetrics {
    pub epoch: usize,
    pub mean_loss: f64,
    pub dev_max_f: Option<f64>,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    /// Parameters after the last epoch.
    pub params: ModelParams,
    /// Epoch (1-based) and parameters with the best dev max-F, earliest on
    /// ties. `None` without a dev set or when no epoch ran.
    pub best: Option<(usize, ModelParams)>,
    pub log: Vec<EpochMetrics>,
}

impl TrainOutcome {
    /// Best-epoch parameters when available, otherwise the final ones.
    pub fn selected(&self) -> &ModelParams {
        self.best.as_ref().map_or(&self.params, |(_, p)| p)
    }
}

/// Seeded initialization for `cfg`.
pub fn init_params(vocab_len: usize, schema: &RelationSchema, cfg: &TrainConfig) -> Result<ModelParams> {
    cfg.validate()?;
    let mut rng = Rng::for_stream(cfg.seed, INIT_STREAM);
    ModelParams::init(vocab_len, schema.num_classes(), cfg.encoder(), &mut rng)
}

/// Trains from a fresh seeded initialization.
pub fn train(
    bags: &[MentionBag],
    schema: &RelationSchema,
    vocab_len: usize,
    cfg: &TrainConfig,
    dev: Option<&[MentionBag]>,
) -> Result<TrainOutcome> {
    let params = init_params(vocab_len, schema, cfg)?;
    train_from(params, bags, schema, cfg, dev)
}

/// Trains starting from `params`.
pub fn train_from(
    mut params: ModelParams,
    bags: &[MentionBag],
    schema: &RelationSchema,
    cfg: &TrainConfig,
    dev: Option<&[MentionBag]>,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    params.check_shapes()?;
    if bags.is_empty() {
        return Err(Error::usage("training set is empty"));
    }
    if params.num_classes() != schema.num_classes() {
        return Err(Error::usage("parameters and schema disagree on the number of classes"));
    }
    let pool = cfg.pool()?;
    let mode = EvalMode::for_variant(cfg.variant);
    let mut order: Vec<usize> = (0..bags.len()).collect();
    let mut shuffle_rng = Rng::for_stream(cfg.seed, SHUFFLE_STREAM);
    let mut log = Vec::with_capacity(cfg.epochs);
    let mut best: Option<(usize, f64, ModelParams)> = None;

    for epoch in 1..=cfg.epochs {
        shuffle_rng.shuffle(&mut order);
        let mut loss_sum = 0.0;
        for (b, batch) in order.chunks(cfg.batch_size).enumerate() {
            let first = (b * cfg.batch_size) as u64;
            let (loss, grads) = pool.install(|| {
                batch_gradient(&params, bags, batch, schema, cfg, |i| dropout_rng(cfg.seed, epoch, first + i as u64))
            })?;
            loss_sum += loss * batch.len() as f64;
            params.sgd_step(&grads, cfg.learning_rate);
        }
        if !params.all_finite() {
            return Err(Error::Numeric(format!("parameters became non-finite in epoch {epoch}")));
        }
        let dev_max_f = match dev {
            Some(d) => {
                let curve = pool.install(|| pr_curve(d, &params, &cfg.model, schema, mode, EvalOptions::default()))?;
                Some(max_f(&curve))
            }
            None => None,
        };
        if let Some(f) = dev_max_f {
            if best.as_ref().map_or(true, |(_, bf, _)| f > *bf) {
                best = Some((epoch, f, params.clone()));
            }
        }
        log.push(EpochMetrics {
            epoch,
            mean_loss: loss_sum / bags.len() as f64,
            dev_max_f,
        });
    }
    Ok(TrainOutcome {
        params,
        best: best.map(|(e, _, p)| (e, p)),
        log,
    })
}

fn dropout_rng(seed: u64, epoch: usize, position: u64) -> Rng {
    Rng::for_stream(seed ^ DROPOUT_KEY, ((epoch as u64) << 40) | position)
}

/// Mean loss and mean gradient over the bags `batch` (indices into `bags`).
/// `rng_for(i)` supplies the dropout stream for the `i`-th bag of the batch.
pub fn batch_gradient<F>(
    params: &ModelParams,
    bags: &[MentionBag],
    batch: &[usize],
    schema: &RelationSchema,
    cfg: &TrainConfig,
    rng_for: F,
) -> Result<(f64, Gradients)>
where
    F: Fn(usize) -> Rng + Sync,
{
    if batch.is_empty() {
        return Err(Error::usage("empty batch"));
    }
    let nr = schema.nr_index();
    let partials: Vec<(f64, Gradients)> = batch
        .par_chunks(REDUCE_CHUNK)
        .enumerate()
        .map(|(c, chunk)| {
            let mut sum = Gradients::zeros_like(params);
            let mut loss = 0.0;
            for (j, &bi) in chunk.iter().enumerate() {
                let bag = &bags[bi];
                let mut rng = rng_for(c * REDUCE_CHUNK + j);
                let (report, g) = bag_gradient(params, bag, cfg.variant, nr, &cfg.model, Some(&mut rng))
                    .map_err(|e| match e {
                        Error::Numeric(m) => Error::Numeric(format!("bag {:?}: {m}", bag.tuple_id)),
                        e => e,
                    })?;
                if !report.value.is_finite() || !g.all_finite() {
                    return Err(Error::Numeric(format!(
                        "non-finite loss or gradient on bag {:?}",
                        bag.tuple_id
                    )));
                }
                loss += report.value;
                sum.add_scaled(&g, 1.0);
            }
            Ok((loss, sum))
        })
        .collect::<Result<_>>()?;
    let scale = 1.0 / batch.len() as f64;
    let mut total = Gradients::zeros_like(params);
    let mut loss = 0.0;
    for (l, g) in &partials {
        loss += l;
        total.add_scaled(g, scale);
    }
    Ok((loss * scale, total))
}

/// Writes `epoch,mean_loss,dev_max_f`; the last column is empty without a
/// dev set.
pub fn write_metrics_csv(path: &Path, log: &[EpochMetrics]) -> Result<()> {
    let io = |e| Error::io(path, e);
    let mut w = BufWriter::new(File::create(path).map_err(io)?);
    writeln!(w, "epoch,mean_loss,dev_max_f").map_err(io)?;
    for m in log {
        match m.dev_max_f {
            Some(f) => writeln!(w, "{},{},{}", m.epoch, m.mean_loss, f),
            None => writeln!(w, "{},{},", m.epoch, m.mean_loss),
        }
        .map_err(io)?;
    }
    w.flush().map_err(io)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::Mention;

    fn small_cfg() -> TrainConfig {
        TrainConfig {
            batch_size: 2,
            learning_rate: 0.05,
            epochs: 3,
            seed: 11,
            model: ModelConfig {
                encoder: EncoderConfig {
                    word_dim: 5,
                    position_dim: 2,
                    kernels: 4,
                    window: 3,
                    clip: 6,
                    shared_position: true,
                },
                ..ModelConfig::default()
            },
            threads: 2,
            ..TrainConfig::default()
        }
    }

    fn toy() -> (RelationSchema, Vec<MentionBag>) {
        let schema = RelationSchema::from_relations(["/a", "/b", "/c"]).unwrap();
        let a = schema.index_of("/a").unwrap();
        let b = schema.index_of("/b").unwrap();
        let nr = schema.nr_index();
        let m = |t: Vec<usize>, e1, e2| Mention::new(t, e1, e2).unwrap();
        let bags = vec![
            MentionBag::new("t0", [a], vec![m(vec![1, 2, 3, 4], 0, 3)], &schema).unwrap(),
            MentionBag::new("t1", [a, b], vec![m(vec![5, 2, 6], 0, 2), m(vec![7, 8, 9, 1], 1, 3)], &schema).unwrap(),
            MentionBag::new("t2", [nr], vec![m(vec![3, 3, 4], 2, 0)], &schema).unwrap(),
            MentionBag::new("t3", [b], vec![m(vec![6, 9, 2, 2, 1], 4, 1)], &schema).unwrap(),
            MentionBag::new("t4", [nr], vec![m(vec![4, 8, 7], 0, 1)], &schema).unwrap(),
        ];
        (schema, bags)
    }

    #[test]
    fn zero_learning_rate_keeps_parameters() {
        let (schema, bags) = toy();
        let cfg = TrainConfig {
            learning_rate: 0.0,
            ..small_cfg()
        };
        let init = init_params(10, &schema, &cfg).unwrap();
        let out = train(&bags, &schema, 10, &cfg, None).unwrap();
        assert_eq!(out.params, init);
        assert_eq!(out.log.len(), 3);
    }

    #[test]
    fn same_seed_same_trajectory_any_thread_count() {
        let (schema, bags) = toy();
        let a = train(&bags, &schema, 10, &small_cfg(), Some(&bags)).unwrap();
        let b = train(&bags, &schema, 10, &TrainConfig { threads: 1, ..small_cfg() }, Some(&bags)).unwrap();
        assert_eq!(a.params, b.params);
        assert_eq!(a.log, b.log);
        assert!(a.best.is_some());
    }

    #[test]
    fn singleton_bag_reaches_zero_loss() {
        let schema = RelationSchema::from_relations(["/a", "/b"]).unwrap();
        let a = schema.index_of("/a").unwrap();
        let bag = MentionBag::new("s", [a], vec![Mention::new(vec![1, 2, 3, 4, 5], 1, 3).unwrap()], &schema).unwrap();
        let cfg = TrainConfig {
            epochs: 200,
            batch_size: 1,
            learning_rate: 0.1,
            model: ModelConfig {
                keep_prob: 1.0,
                ..small_cfg().model
            },
            ..small_cfg()
        };
        let out = train(std::slice::from_ref(&bag), &schema, 6, &cfg, None).unwrap();
        assert_eq!(out.log.last().unwrap().mean_loss, 0.0);
    }

    #[test]
    fn batch_gradient_is_mean_of_bag_gradients() {
        let (schema, bags) = toy();
        let cfg = small_cfg();
        let params = init_params(10, &schema, &cfg).unwrap();
        let rng = |i: usize| Rng::new(100 + i as u64);
        let (loss, g) = batch_gradient(&params, &bags, &[1, 3], &schema, &cfg, rng).unwrap();
        let nr = schema.nr_index();
        let (r1, g1) = bag_gradient(&params, &bags[1], cfg.variant, nr, &cfg.model, Some(&mut rng(0))).unwrap();
        let (r3, g3) = bag_gradient(&params, &bags[3], cfg.variant, nr, &cfg.model, Some(&mut rng(1))).unwrap();
        assert!((loss - (r1.value + r3.value) / 2.0).abs() < 1e-12);
        let mut expect = Gradients::zeros_like(&params);
        expect.add_scaled(&g1, 0.5);
        expect.add_scaled(&g3, 0.5);
        for group in params.groups() {
            let x = g.group_dense(group, &params);
            let y = expect.group_dense(group, &params);
            for (p, q) in x.iter().zip(&y) {
                assert!((p - q).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn untouched_word_rows_do_not_move() {
        let (schema, bags) = toy();
        let cfg = TrainConfig {
            epochs: 1,
            ..small_cfg()
        };
        let init = init_params(12, &schema, &cfg).unwrap();
        let out = train_from(init.clone(), &bags, &schema, &cfg, None).unwrap();
        // ids 10 and 11 never occur in the toy corpus
        for row in [10, 11] {
            assert_eq!(out.params.encoder.word.row(row), init.encoder.word.row(row));
        }
        assert_ne!(out.params.encoder.word.row(1), init.encoder.word.row(1));
    }

    #[test]
    fn metrics_csv_layout() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.csv");
        let log = [
            EpochMetrics { epoch: 1, mean_loss: 2.5, dev_max_f: Some(0.5) },
            EpochMetrics { epoch: 2, mean_loss: 1.0, dev_max_f: None },
        ];
        write_metrics_csv(&path, &log).unwrap();
        assert_eq!(std::fs::read_to_string(path).unwrap(), "epoch,mean_loss,dev_max_f\n1,2.5,0.5\n2,1,\n");
    }

    #[test]
    fn rejects_bad_inputs() {
        let (schema, _) = toy();
        assert!(train(&[], &schema, 10, &small_cfg(), None).is_err());
        let cfg = TrainConfig { batch_size: 0, ..small_cfg() };
        assert!(cfg.validate().is_err());
    }
}
