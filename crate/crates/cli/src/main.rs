//! `classtie`: generate synthetic corpora, train, evaluate, inspect and
//! gradient-check the joint ranking model.

mod config;

use std::collections::BTreeSet;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};

use classtie_core::checkpoint::{load_checkpoint, save_checkpoint};
use classtie_core::corpus::{build_vocab, load_bags, read_records, split_to_separated, NR_NAME};
use classtie_core::encoder::load_pretrained_words;
use classtie_core::eval::{
    inspect, max_f, pr_curve, write_inspect_csv, write_patn_csv, write_pr_csv, EvalOptions, DEFAULT_P_AT_N,
};
use classtie_core::gradcheck::{self, GradCheckSetup};
use classtie_core::synthgen::{corpus_stats, generate, TEST_FILE, TRAIN_FILE, TRUTH_FILE};
use classtie_core::trainer::{init_params, train_from, with_threads, write_metrics_csv};
use classtie_core::{RelationSchema, Variant};

use config::RunConfig;

#[derive(Parser)]
#[command(name = "classtie", version, about = "Joint relation extraction with class-tie ranking losses")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write a seeded synthetic corpus (train.jsonl, test.jsonl, truth.json).
    Gen(GenArgs),
    /// Train a model and write a checkpoint plus metrics.csv.
    Train(TrainArgs),
    /// Score a test corpus: P/R curve CSV, P@N CSV and max-F.
    Eval(EvalArgs),
    /// Per-relation scores for one entity tuple.
    Inspect(InspectArgs),
    /// Finite-difference check of the bag-loss gradients.
    Gradcheck(GradcheckArgs),
}

/// Flags shared by every command. Anything set here overrides `--config`.
#[derive(Args, Default)]
struct Common {
    /// Flat `key = value` config file.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// RNG seed [default: 1].
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads, 0 = all cores [default: 0].
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Loss variant: 1 (AVE), 2 (ATT), 3 (ExATT) [default: 3].
    #[arg(long, global = true)]
    variant: Option<String>,
    /// Test-time aggregation, ave or att [default: att for variants 2 and 3, ave for 1].
    #[arg(long, global = true)]
    mode: Option<String>,
    /// Skip positive hinges on NR (default).
    #[arg(long, global = true, overrides_with = "no_relieve_nr")]
    relieve_nr: bool,
    /// Keep positive hinges on NR.
    #[arg(long, global = true)]
    no_relieve_nr: bool,
    /// Split multi-label bags into single-label bags before training.
    #[arg(long, global = true)]
    separated: bool,
    /// Any config key, e.g. `--set kernels=64`. Repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE", global = true)]
    sets: Vec<String>,
}

impl Common {
    fn resolve(&self, extra: &[(&str, Option<String>)]) -> Result<RunConfig> {
        let mut cfg = match &self.config {
            Some(path) => RunConfig::from_file(path)?,
            None => RunConfig::default(),
        };
        for kv in &self.sets {
            let (k, v) = kv
                .split_once('=')
                .with_context(|| format!("--set expects KEY=VALUE, got {kv:?}"))?;
            cfg.set(k.trim(), v.trim())?;
        }
        let mut pairs: Vec<(&str, Option<String>)> = vec![
            ("seed", self.seed.map(|v| v.to_string())),
            ("threads", self.threads.map(|v| v.to_string())),
            ("variant", self.variant.clone()),
            ("mode", self.mode.clone()),
        ];
        if self.relieve_nr {
            pairs.push(("relieve_nr", Some("true".into())));
        }
        if self.no_relieve_nr {
            pairs.push(("relieve_nr", Some("false".into())));
        }
        if self.separated {
            pairs.push(("separated", Some("true".into())));
        }
        pairs.extend(extra.iter().cloned());
        for (k, v) in pairs {
            if let Some(v) = v {
                cfg.set(k, &v)?;
            }
        }
        Ok(cfg)
    }
}

fn s<T: ToString>(v: Option<T>) -> Option<String> {
    v.map(|x| x.to_string())
}

#[derive(Args)]
struct GenArgs {
    #[command(flatten)]
    common: Common,
    /// Output directory.
    #[arg(long, default_value = "corpus")]
    out: PathBuf,
    /// Fraction of NR bags in both splits [default: 0.7].
    #[arg(long)]
    nr_fraction: Option<f64>,
    /// Fraction of NR bags in the test split [default: same as --nr-fraction].
    #[arg(long)]
    test_nr_fraction: Option<f64>,
    /// Probability that a label's trigger is dropped [default: 0.2].
    #[arg(long)]
    noise_rate: Option<f64>,
    /// Training bags [default: 2000].
    #[arg(long)]
    num_train: Option<usize>,
    /// Test bags [default: 500].
    #[arg(long)]
    num_test: Option<usize>,
}

#[derive(Args)]
struct TrainArgs {
    #[command(flatten)]
    common: Common,
    /// Training corpus (JSON lines).
    #[arg(long)]
    train: PathBuf,
    /// Held-out corpus scored after every epoch; enables best-epoch retention.
    #[arg(long)]
    dev: Option<PathBuf>,
    /// Checkpoint directory.
    #[arg(long, default_value = "run")]
    out: PathBuf,
    /// Epochs [default: 15].
    #[arg(long)]
    epochs: Option<usize>,
    /// Bags per SGD step [default: 160].
    #[arg(long)]
    batch_size: Option<usize>,
    /// SGD learning rate [default: 0.03].
    #[arg(long)]
    learning_rate: Option<f64>,
    /// Dropout keep probability [default: 0.5].
    #[arg(long)]
    keep_prob: Option<f64>,
    /// Word embedding width [default: 50].
    #[arg(long)]
    word_dim: Option<usize>,
    /// Position embedding width [default: 5].
    #[arg(long)]
    position_dim: Option<usize>,
    /// Convolution kernels [default: 230].
    #[arg(long)]
    kernels: Option<usize>,
    /// Convolution window [default: 3].
    #[arg(long)]
    window: Option<usize>,
    /// Keep words seen more than this many times [default: 100].
    #[arg(long)]
    min_count: Option<usize>,
    /// Pre-trained word vectors (text: word followed by floats).
    #[arg(long)]
    pretrained: Option<PathBuf>,
}

#[derive(Args)]
struct EvalArgs {
    #[command(flatten)]
    common: Common,
    /// Checkpoint directory written by `train`.
    #[arg(long)]
    checkpoint: PathBuf,
    /// Test corpus (JSON lines).
    #[arg(long)]
    test: PathBuf,
    /// Output directory for pr_curve.csv and p_at_n.csv [default: <checkpoint>/eval].
    #[arg(long)]
    out: Option<PathBuf>,
    /// Rows written to pr_curve.csv [default: 2000].
    #[arg(long)]
    limit: Option<usize>,
    /// Only score bags with more than one mention.
    #[arg(long)]
    multi_sentence_only: bool,
}

#[derive(Args)]
struct InspectArgs {
    #[command(flatten)]
    common: Common,
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    test: PathBuf,
    /// Entity tuple id.
    #[arg(long)]
    tuple: String,
    /// Add 10 to every score.
    #[arg(long)]
    rescale: bool,
}

#[derive(Args)]
struct GradcheckArgs {
    #[command(flatten)]
    common: Common,
    /// Random instances per variant [default: 20].
    #[arg(long)]
    instances: Option<usize>,
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::FAILURE,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}

fn run(cli: Cli) -> Result<bool> {
    match cli.command {
        Command::Gen(a) => cmd_gen(a).map(|_| true),
        Command::Train(a) => cmd_train(a).map(|_| true),
        Command::Eval(a) => cmd_eval(a).map(|_| true),
        Command::Inspect(a) => cmd_inspect(a).map(|_| true),
        Command::Gradcheck(a) => cmd_gradcheck(a),
    }
}

fn cmd_gen(a: GenArgs) -> Result<()> {
    let cfg = a.common.resolve(&[
        ("nr_fraction", s(a.nr_fraction)),
        ("test_nr_fraction", s(a.test_nr_fraction)),
        ("noise_rate", s(a.noise_rate)),
        ("num_train", s(a.num_train)),
        ("num_test", s(a.num_test)),
    ])?;
    let corpus = generate(&cfg.synth)?;
    corpus.write(&a.out)?;
    let stats = corpus_stats(&corpus.truth);
    println!("wrote {}, {} and {} to {}", TRAIN_FILE, TEST_FILE, TRUTH_FILE, a.out.display());
    println!("train_nr_ratio={:.4} ({:.2}%)", stats.train_nr_ratio, 100.0 * stats.train_nr_ratio);
    println!("test_nr_ratio={:.4} ({:.2}%)", stats.test_nr_ratio, 100.0 * stats.test_nr_ratio);
    for t in &stats.ties {
        println!(
            "tie {}->{} {:?} configured={} observed={:.4} support={}",
            t.pair.a, t.pair.b, t.pair.kind, t.pair.prob, t.observed, t.support
        );
    }
    Ok(())
}

/// Schema over every label in `paths`, plus NR.
fn schema_from(paths: &[&Path]) -> Result<RelationSchema> {
    let mut labels = BTreeSet::new();
    for p in paths {
        for (_, r) in read_records(p)? {
            labels.extend(r.labels.into_iter().filter(|l| l != NR_NAME));
        }
    }
    Ok(RelationSchema::from_relations(labels)?)
}

fn cmd_train(a: TrainArgs) -> Result<()> {
    let cfg = a.common.resolve(&[
        ("epochs", s(a.epochs)),
        ("batch_size", s(a.batch_size)),
        ("learning_rate", s(a.learning_rate)),
        ("keep_prob", s(a.keep_prob)),
        ("word_dim", s(a.word_dim)),
        ("position_dim", s(a.position_dim)),
        ("kernels", s(a.kernels)),
        ("window", s(a.window)),
        ("min_count", s(a.min_count)),
        ("pretrained", a.pretrained.as_ref().map(|p| p.display().to_string())),
    ])?;
    let mut sources = vec![a.train.as_path()];
    sources.extend(a.dev.as_deref());
    let schema = schema_from(&sources)?;
    let records = read_records(&a.train)?;
    let vocab = build_vocab(
        records.iter().flat_map(|(_, r)| r.mentions.iter().flat_map(|m| m.tokens.iter())),
        cfg.min_count,
    )?;
    let mut bags = load_bags(&a.train, &schema, &vocab)?;
    if cfg.separated {
        bags = split_to_separated(&bags);
    }
    let dev = a.dev.as_deref().map(|p| load_bags(p, &schema, &vocab)).transpose()?;
    let tc = cfg.train;
    let mut params = init_params(vocab.len(), &schema, &tc)?;
    if let Some(p) = &cfg.pretrained {
        let n = load_pretrained_words(p, &vocab, &mut params.encoder.word)?;
        println!("loaded {n} pre-trained word vectors");
    }
    println!(
        "training {} on {} bags ({} classes, vocabulary {}), relieve_nr={}, separated={}",
        tc.variant,
        bags.len(),
        schema.num_classes(),
        vocab.len(),
        tc.model.ranking.relieve_nr,
        cfg.separated
    );
    let outcome = train_from(params, &bags, &schema, &tc, dev.as_deref())?;
    for m in &outcome.log {
        match m.dev_max_f {
            Some(f) => println!("epoch {} mean_loss={:.6} dev_max_f={:.4}", m.epoch, m.mean_loss, f),
            None => println!("epoch {} mean_loss={:.6}", m.epoch, m.mean_loss),
        }
    }
    let epoch = match &outcome.best {
        Some((e, _)) => Some(*e),
        None => Some(outcome.log.len()),
    };
    save_checkpoint(&a.out, outcome.selected(), &vocab, &schema, &tc, epoch)?;
    write_metrics_csv(&a.out.join("metrics.csv"), &outcome.log)?;
    std::fs::write(a.out.join("run.conf"), cfg.to_text()).with_context(|| format!("writing {}", a.out.display()))?;
    println!("checkpoint (epoch {}) written to {}", epoch.unwrap_or(0), a.out.display());
    Ok(())
}

fn cmd_eval(a: EvalArgs) -> Result<()> {
    let cfg = a.common.resolve(&[
        ("curve_limit", s(a.limit)),
        ("multi_sentence_only", a.multi_sentence_only.then(|| "true".to_string())),
    ])?;
    let ck = load_checkpoint(&a.checkpoint)?;
    let bags = load_bags(&a.test, &ck.schema, &ck.vocab)?;
    let mode = cfg.mode.unwrap_or_else(|| classtie_core::EvalMode::for_variant(ck.manifest.config.variant));
    let opts = EvalOptions {
        multi_sentence_only: cfg.multi_sentence_only,
    };
    let curve = with_threads(cfg.train.threads, || {
        pr_curve(&bags, &ck.params, &ck.manifest.config.model, &ck.schema, mode, opts)
    })??;
    let out = a.out.unwrap_or_else(|| a.checkpoint.join("eval"));
    std::fs::create_dir_all(&out).with_context(|| format!("creating {}", out.display()))?;
    let rows = write_pr_csv(&out.join("pr_curve.csv"), &curve, &ck.schema, cfg.curve_limit)?;
    let patn = curve.p_at_n(&DEFAULT_P_AT_N);
    write_patn_csv(&out.join("p_at_n.csv"), &patn)?;
    println!("mode={mode} candidates={} gold={} rows={rows}", curve.len(), curve.total_gold);
    for (n, p) in &patn.values {
        println!("p@{n}={p:.4}");
    }
    println!("p@mean={:.4}", patn.mean);
    println!("max_f={}", max_f(&curve));
    Ok(())
}

fn cmd_inspect(a: InspectArgs) -> Result<()> {
    let cfg = a.common.resolve(&[])?;
    let ck = load_checkpoint(&a.checkpoint)?;
    let bags = load_bags(&a.test, &ck.schema, &ck.vocab)?;
    let mode = cfg.mode.unwrap_or_else(|| classtie_core::EvalMode::for_variant(ck.manifest.config.variant));
    let rows = inspect(&a.tuple, &bags, &ck.params, &ck.manifest.config.model, &ck.schema, mode, a.rescale)?;
    let stdout = std::io::stdout();
    let mut lock = stdout.lock();
    write_inspect_csv(&mut lock, &rows)?;
    lock.flush()?;
    Ok(())
}

fn cmd_gradcheck(a: GradcheckArgs) -> Result<bool> {
    let cfg = a.common.resolve(&[("gradcheck_instances", s(a.instances))])?;
    if cfg.gradcheck_instances == 0 {
        bail!("need at least one instance");
    }
    let variants = match &a.common.variant {
        Some(_) => vec![cfg.train.variant],
        None => Variant::ALL.to_vec(),
    };
    let setup = GradCheckSetup {
        relieve_nr: cfg.train.model.ranking.relieve_nr,
        ..GradCheckSetup::default()
    };
    let mut ok = true;
    for v in variants {
        let report = gradcheck::run(&setup, v, cfg.gradcheck_instances, cfg.train.seed)?;
        let pass = report.max_error() < 1e-4;
        ok &= pass;
        println!("{v} instances={} {}", cfg.gradcheck_instances, if pass { "PASS" } else { "FAIL" });
        for g in &report.groups {
            println!("  {:<10} max_rel_error={:.3e}", g.group.name(), g.max_rel_error);
        }
    }
    Ok(ok)
}
