//! Piecewise convolutional sentence encoder.
//!
//! A mention goes through four stages:
//!
//! 1. [`embed_tokens`]: each token becomes `[word ; pos(e1) ; pos(e2)]`.
//! 2. [`convolve`]: `d^s` kernels of `window` rows slide over the token
//!    matrix. Output position `i` reads tokens `i..i+window`, with zero rows
//!    past the end, so every token index has an output.
//! 3. [`piecewise_pool`]: each kernel's output row is max-pooled over the
//!    three segments cut by the entity positions.
//! 4. [`finish`]: `tanh`, then inverted dropout while training.
//!
//! [`encode`] chains the stages and keeps what [`encoder_backward`] needs.

use std::collections::BTreeMap;
use std::io::{BufRead, BufReader};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::corpus::{position_features, position_table_len, Mention, Vocabulary};
use crate::error::{Error, Result};
use crate::numkit::{axpy, dot, DenseMatrix, Rng};

/// Encoder shape hyperparameters.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct EncoderConfig {
    /// Word embedding width `d^1`.
    pub word_dim: usize,
    /// Position embedding width `d^2`.
    pub position_dim: usize,
    /// Number of convolution kernels `d^s`.
    pub kernels: usize,
    /// Convolution window `d^win`.
    pub window: usize,
    /// Relative distances are clamped to `[-clip, clip]`.
    pub clip: usize,
    /// Use one position table for both entity channels.
    pub shared_position: bool,
}

impl Default for EncoderConfig {
    fn default() -> Self {
        EncoderConfig {
            word_dim: 50,
            position_dim: 5,
            kernels: 230,
            window: 3,
            clip: 30,
            shared_position: true,
        }
    }
}

impl EncoderConfig {
    /// Token row width `d^w = d^1 + 2 d^2`.
    pub fn token_dim(&self) -> usize {
        self.word_dim + 2 * self.position_dim
    }

    /// Sentence embedding width `d^f = 3 d^s`.
    pub fn sentence_dim(&self) -> usize {
        3 * self.kernels
    }

    pub fn validate(&self) -> Result<()> {
        if self.word_dim == 0 || self.kernels == 0 || self.window == 0 || self.clip == 0 {
            return Err(Error::usage(
                "word_dim, kernels, window and clip must all be positive",
            ));
        }
        Ok(())
    }
}

/// Learnable encoder arrays.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EncoderParams {
    /// `l^w x d^1`
    pub word: DenseMatrix,
    /// `l^p x d^2`, used for the first (or both) distance channels.
    pub position: DenseMatrix,
    /// Separate table for the second channel when not shared.
    pub position2: Option<DenseMatrix>,
    /// One row per kernel: the `window x d^w` kernel flattened row-major.
    pub kernels: DenseMatrix,
    pub bias: Vec<f64>,
    pub window: usize,
}

impl EncoderParams {
    /// Seeded initialization.
    ///
    /// Word and position tables are uniform in `[-0.25, 0.25]`. Kernels use
    /// Glorot-uniform bounds with `fan_in = window * d^w` and
    /// `fan_out = d^s`. Bias starts at zero.
    pub fn init(vocab_len: usize, cfg: &EncoderConfig, rng: &mut Rng) -> Result<Self> {
        cfg.validate()?;
        if vocab_len == 0 {
            return Err(Error::usage("vocabulary is empty"));
        }
        let lp = position_table_len(cfg.clip);
        let word = DenseMatrix::uniform(vocab_len, cfg.word_dim, 0.25, rng);
        let position = DenseMatrix::uniform(lp, cfg.position_dim, 0.25, rng);
        let position2 = if cfg.shared_position {
            None
        } else {
            Some(DenseMatrix::uniform(lp, cfg.position_dim, 0.25, rng))
        };
        let fan_in = cfg.window * cfg.token_dim();
        let bound = (6.0 / (fan_in + cfg.kernels) as f64).sqrt();
        let kernels = DenseMatrix::uniform(cfg.kernels, fan_in, bound, rng);
        Ok(EncoderParams {
            word,
            position,
            position2,
            kernels,
            bias: vec![0.0; cfg.kernels],
            window: cfg.window,
        })
    }

    pub fn token_dim(&self) -> usize {
        self.word.cols() + 2 * self.position.cols()
    }

    pub fn num_kernels(&self) -> usize {
        self.kernels.rows()
    }

    pub fn sentence_dim(&self) -> usize {
        3 * self.num_kernels()
    }

    fn second_table(&self) -> &DenseMatrix {
        self.position2.as_ref().unwrap_or(&self.position)
    }

    /// Checks the shape relations between the arrays.
    pub fn check_shapes(&self) -> Result<()> {
        let dw = self.token_dim();
        if self.window == 0 || self.kernels.cols() != self.window * dw {
            return Err(Error::format(format!(
                "kernel width {} does not match window {} x token width {dw}",
                self.kernels.cols(),
                self.window
            )));
        }
        if self.bias.len() != self.num_kernels() {
            return Err(Error::format("bias length differs from kernel count"));
        }
        if let Some(p2) = &self.position2 {
            if p2.shape() != self.position.shape() {
                return Err(Error::format("position tables differ in shape"));
            }
        }
        if self.position.rows() % 2 == 0 {
            return Err(Error::format("position table must have 2*clip+1 rows"));
        }
        Ok(())
    }

    pub fn all_finite(&self) -> bool {
        self.word.all_finite()
            && self.position.all_finite()
            && self.position2.as_ref().is_none_or(DenseMatrix::all_finite)
            && self.kernels.all_finite()
            && self.bias.iter().all(|v| v.is_finite())
    }
}

/// Looks up the token matrix `q` (`n x d^w`) of a mention.
pub fn embed_tokens(mention: &Mention, params: &EncoderParams, clip: usize) -> Result<DenseMatrix> {
    let d1 = params.word.cols();
    let d2 = params.position.cols();
    let dw = params.token_dim();
    let lp = params.position.rows();
    let second = params.second_table();
    let mut q = DenseMatrix::zeros(mention.len(), dw);
    for (i, (&tok, (p1, p2))) in mention
        .tokens
        .iter()
        .zip(position_features(mention, clip))
        .enumerate()
    {
        if tok >= params.word.rows() {
            return Err(Error::usage(format!(
                "token id {tok} outside a {}-word vocabulary",
                params.word.rows()
            )));
        }
        if p1 >= lp || p2 >= lp {
            return Err(Error::usage(format!(
                "position index {} outside a {lp}-row position table",
                p1.max(p2)
            )));
        }
        let row = q.row_mut(i);
        row[..d1].copy_from_slice(params.word.row(tok));
        row[d1..d1 + d2].copy_from_slice(params.position.row(p1));
        row[d1 + d2..].copy_from_slice(second.row(p2));
    }
    Ok(q)
}

/// Convolution output, `d^s x n`. Windows that run past the last token see
/// zero rows.
pub fn convolve(q: &DenseMatrix, params: &EncoderParams) -> DenseMatrix {
    let n = q.rows();
    let dw = q.cols();
    let win = params.window;
    let flat = q.as_slice();
    let mut out = DenseMatrix::zeros(params.num_kernels(), n);
    for k in 0..params.num_kernels() {
        let kernel = params.kernels.row(k);
        let b = params.bias[k];
        let row = out.row_mut(k);
        for (i, slot) in row.iter_mut().enumerate() {
            let len = win.min(n - i) * dw;
            *slot = dot(&kernel[..len], &flat[i * dw..i * dw + len]) + b;
        }
    }
    out
}

/// Segment bounds `[start, end)` for token count `n` and entity heads.
///
/// Segments are `[0, lo]`, `[lo+1, hi]` and `[hi+1, n-1]` (inclusive), with
/// `lo = min(e1, e2)` and `hi = max(e1, e2)`. The last may be empty.
pub fn segments(n: usize, e1: usize, e2: usize) -> [(usize, usize); 3] {
    let lo = e1.min(e2);
    let hi = e1.max(e2);
    [(0, lo + 1), (lo + 1, hi + 1), (hi + 1, n)]
}

/// Piecewise max-pooled features.
#[derive(Debug, Clone, PartialEq)]
pub struct Pooled {
    /// `3 d^s` values, laid out as `o[3k + j]` for kernel `k`, segment `j`.
    pub o: Vec<f64>,
    /// Position of each max, `None` for an empty segment.
    pub argmax: Vec<Option<usize>>,
}

/// Max-pools each convolution row over the three entity-delimited segments.
/// Empty segments pool to zero; ties resolve to the earliest position.
pub fn piecewise_pool(m: &DenseMatrix, e1: usize, e2: usize) -> Pooled {
    let n = m.cols();
    let segs = segments(n, e1, e2);
    let mut o = Vec::with_capacity(3 * m.rows());
    let mut argmax = Vec::with_capacity(3 * m.rows());
    for k in 0..m.rows() {
        let row = m.row(k);
        for &(start, end) in &segs {
            if start >= end {
                o.push(0.0);
                argmax.push(None);
                continue;
            }
            let mut best = start;
            for i in start + 1..end {
                if row[i] > row[best] {
                    best = i;
                }
            }
            o.push(row[best]);
            argmax.push(Some(best));
        }
    }
    Pooled { o, argmax }
}

/// `tanh` followed by inverted dropout.
///
/// With `rng = Some(..)` (training) each unit is kept with probability
/// `keep_prob` and kept units are scaled by `1 / keep_prob`. With `None`
/// (inference) the mask is all ones. Returns `(s, mask)`.
pub fn finish(o: &[f64], rng: Option<&mut Rng>, keep_prob: f64) -> Result<(Vec<f64>, Vec<f64>)> {
    if !(keep_prob > 0.0 && keep_prob <= 1.0) {
        return Err(Error::usage(format!(
            "dropout keep probability {keep_prob} not in (0, 1]"
        )));
    }
    let mask: Vec<f64> = match rng {
        Some(rng) => (0..o.len())
            .map(|_| if rng.bernoulli(keep_prob) { 1.0 / keep_prob } else { 0.0 })
            .collect(),
        None => vec![1.0; o.len()],
    };
    let s = o.iter().zip(&mask).map(|(v, h)| v.tanh() * h).collect();
    Ok((s, mask))
}

/// Sentence embedding together with its forward-pass cache.
#[derive(Debug, Clone, PartialEq)]
pub struct EncodedSentence {
    pub s: Vec<f64>,
    /// Pre-activation pooled features.
    pub o: Vec<f64>,
    pub mask: Vec<f64>,
    pub pool_argmax: Vec<Option<usize>>,
    /// Token matrix from [`embed_tokens`].
    pub q: DenseMatrix,
}

impl AsRef<[f64]> for EncodedSentence {
    fn as_ref(&self) -> &[f64] {
        &self.s
    }
}

/// Full forward pass for one mention. Pass an `rng` to apply dropout.
pub fn encode(
    mention: &Mention,
    params: &EncoderParams,
    clip: usize,
    keep_prob: f64,
    rng: Option<&mut Rng>,
) -> Result<EncodedSentence> {
    let q = embed_tokens(mention, params, clip)?;
    let m = convolve(&q, params);
    let Pooled { o, argmax } = piecewise_pool(&m, mention.e1, mention.e2);
    let (s, mask) = finish(&o, rng, keep_prob)?;
    Ok(EncodedSentence {
        s,
        o,
        mask,
        pool_argmax: argmax,
        q,
    })
}

/// Gradient buffers for the encoder. Word rows are stored sparsely.
#[derive(Debug, Clone, PartialEq)]
pub struct EncoderGrads {
    pub word: BTreeMap<usize, Vec<f64>>,
    pub position: DenseMatrix,
    pub position2: Option<DenseMatrix>,
    pub kernels: DenseMatrix,
    pub bias: Vec<f64>,
}

impl EncoderGrads {
    pub fn zeros_like(params: &EncoderParams) -> Self {
        EncoderGrads {
            word: BTreeMap::new(),
            position: DenseMatrix::zeros(params.position.rows(), params.position.cols()),
            position2: params
                .position2
                .as_ref()
                .map(|p| DenseMatrix::zeros(p.rows(), p.cols())),
            kernels: DenseMatrix::zeros(params.kernels.rows(), params.kernels.cols()),
            bias: vec![0.0; params.bias.len()],
        }
    }

    /// `self += scale * other`.
    pub fn add_scaled(&mut self, other: &EncoderGrads, scale: f64) {
        for (row, g) in &other.word {
            let dst = self
                .word
                .entry(*row)
                .or_insert_with(|| vec![0.0; g.len()]);
            axpy(dst, scale, g);
        }
        self.position.add_scaled(&other.position, scale);
        if let (Some(a), Some(b)) = (self.position2.as_mut(), other.position2.as_ref()) {
            a.add_scaled(b, scale);
        }
        self.kernels.add_scaled(&other.kernels, scale);
        axpy(&mut self.bias, scale, &other.bias);
    }

    /// Dense copy of the word-table gradient.
    pub fn word_dense(&self, rows: usize, cols: usize) -> DenseMatrix {
        let mut out = DenseMatrix::zeros(rows, cols);
        for (r, g) in &self.word {
            out.row_mut(*r).copy_from_slice(g);
        }
        out
    }
}

/// Back-propagates `grad_s` (gradient of the loss wrt `s`) through the
/// encoder and accumulates into `grads`.
pub fn encoder_backward(
    grad_s: &[f64],
    cache: &EncodedSentence,
    mention: &Mention,
    params: &EncoderParams,
    clip: usize,
    grads: &mut EncoderGrads,
) -> Result<()> {
    let n = mention.len();
    let dw = params.token_dim();
    let ds = params.num_kernels();
    if cache.q.rows() != n
        || cache.q.cols() != dw
        || cache.s.len() != 3 * ds
        || grad_s.len() != 3 * ds
        || cache.pool_argmax.len() != 3 * ds
    {
        return Err(Error::usage(
            "encoder cache does not match this mention and parameter set",
        ));
    }
    let win = params.window;
    let q = cache.q.as_slice();
    let mut grad_q = vec![0.0; n * dw];
    let mut touched = false;
    for k in 0..ds {
        let kernel = params.kernels.row(k);
        for j in 0..3 {
            let idx = 3 * k + j;
            let Some(pos) = cache.pool_argmax[idx] else {
                continue;
            };
            if grad_s[idx] == 0.0 || cache.mask[idx] == 0.0 {
                continue;
            }
            let t = cache.o[idx].tanh();
            let g = grad_s[idx] * cache.mask[idx] * (1.0 - t * t);
            let len = win.min(n - pos) * dw;
            grads.bias[k] += g;
            axpy(&mut grads.kernels.row_mut(k)[..len], g, &q[pos * dw..pos * dw + len]);
            axpy(&mut grad_q[pos * dw..pos * dw + len], g, &kernel[..len]);
            touched = true;
        }
    }
    if !touched {
        return Ok(());
    }
    let d1 = params.word.cols();
    let d2 = params.position.cols();
    for (i, (p1, p2)) in position_features(mention, clip).into_iter().enumerate() {
        let row = &grad_q[i * dw..(i + 1) * dw];
        if row.iter().all(|v| *v == 0.0) {
            continue;
        }
        let w = grads
            .word
            .entry(mention.tokens[i])
            .or_insert_with(|| vec![0.0; d1]);
        axpy(w, 1.0, &row[..d1]);
        axpy(grads.position.row_mut(p1), 1.0, &row[d1..d1 + d2]);
        let second = grads.position2.as_mut().unwrap_or(&mut grads.position);
        axpy(second.row_mut(p2), 1.0, &row[d1 + d2..]);
    }
    Ok(())
}

/// Copies vectors from a whitespace-separated text embedding file (word
/// followed by `d^1` floats per line) into the matching vocabulary rows.
/// Returns how many vocabulary words were filled.
pub fn load_pretrained_words(
    path: &Path,
    vocab: &Vocabulary,
    word: &mut DenseMatrix,
) -> Result<usize> {
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let dim = word.cols();
    let mut filled = 0;
    for (lineno, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        let mut parts = line.split_whitespace();
        let Some(w) = parts.next() else { continue };
        let values: Vec<f64> = parts
            .map(str::parse::<f64>)
            .collect::<std::result::Result<_, _>>()
            .map_err(|e| Error::Parse {
                path: path.display().to_string(),
                line: lineno + 1,
                message: e.to_string(),
            })?;
        if values.len() != dim {
            // word2vec text files open with a "<count> <dim>" header line
            if lineno == 0 && values.len() == 1 && dim != 1 {
                continue;
            }
            return Err(Error::Parse {
                path: path.display().to_string(),
                line: lineno + 1,
                message: format!("expected {dim} values, found {}", values.len()),
            });
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::Numeric(format!(
                "{}:{}: non-finite embedding value",
                path.display(),
                lineno + 1
            )));
        }
        let id = vocab.id(w);
        if id != vocab.unk_id() || w == crate::corpus::UNK_TOKEN {
            word.row_mut(id).copy_from_slice(&values);
            filled += 1;
        }
    }
    Ok(filled)
}
