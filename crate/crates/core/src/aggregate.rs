//! Bag aggregation: uniform averaging (AVE) and class-queried selective
//! attention (ATT), with backward passes.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numkit::{axpy, dot, softmax, DenseMatrix};

/// Default attention bias factor `a`.
pub const DEFAULT_ATTENTION_BIAS: f64 = 0.5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Aggregation {
    Ave,
    /// Attention queried by this class embedding.
    Att { query: usize },
}

/// A bag's combined sentence representation.
#[derive(Debug, Clone, PartialEq)]
pub struct BagRepresentation {
    pub s: Vec<f64>,
    pub mode: Aggregation,
    /// Per-sentence weights (uniform `1/n` for AVE).
    pub weights: Vec<f64>,
}

impl AsRef<[f64]> for BagRepresentation {
    fn as_ref(&self) -> &[f64] {
        &self.s
    }
}

fn check_inputs<S: AsRef<[f64]>>(sentences: &[S]) -> Result<usize> {
    let first = sentences
        .first()
        .ok_or_else(|| Error::usage("cannot aggregate an empty bag"))?;
    let dim = first.as_ref().len();
    if sentences.iter().any(|s| s.as_ref().len() != dim) {
        return Err(Error::usage("sentence embeddings differ in width"));
    }
    Ok(dim)
}

fn weighted_sum<S: AsRef<[f64]>>(sentences: &[S], weights: &[f64], dim: usize) -> Vec<f64> {
    let mut s = vec![0.0; dim];
    for (sent, &w) in sentences.iter().zip(weights) {
        axpy(&mut s, w, sent.as_ref());
    }
    s
}

/// Element-wise mean of the sentence embeddings.
pub fn ave<S: AsRef<[f64]>>(sentences: &[S]) -> Result<BagRepresentation> {
    let dim = check_inputs(sentences)?;
    let n = sentences.len() as f64;
    let mut s = vec![0.0; dim];
    for sent in sentences {
        axpy(&mut s, 1.0, sent.as_ref());
    }
    for v in &mut s {
        *v /= n;
    }
    Ok(BagRepresentation {
        s,
        mode: Aggregation::Ave,
        weights: vec![1.0 / n; sentences.len()],
    })
}

/// Attention logits `e_j = a * W[c] . s_j`.
pub fn attention_logits<S: AsRef<[f64]>>(
    sentences: &[S],
    class: usize,
    classes: &DenseMatrix,
    a: f64,
) -> Result<Vec<f64>> {
    let dim = check_inputs(sentences)?;
    if class >= classes.rows() {
        return Err(Error::usage(format!("class {class} out of range")));
    }
    if classes.cols() != dim {
        return Err(Error::usage(format!(
            "class embeddings are {} wide but sentences are {dim}",
            classes.cols()
        )));
    }
    let w = classes.row(class);
    Ok(sentences.iter().map(|s| a * dot(w, s.as_ref())).collect())
}

/// Selective attention queried by `class`: `alpha = softmax(e)`,
/// `s = sum_j alpha_j s_j`.
pub fn att<S: AsRef<[f64]>>(
    sentences: &[S],
    class: usize,
    classes: &DenseMatrix,
    a: f64,
) -> Result<BagRepresentation> {
    let e = attention_logits(sentences, class, classes, a)?;
    let weights = softmax(&e)?;
    let s = weighted_sum(sentences, &weights, classes.cols());
    Ok(BagRepresentation {
        s,
        mode: Aggregation::Att { query: class },
        weights,
    })
}

/// Gradients produced by [`aggregate_backward`].
#[derive(Debug, Clone, PartialEq)]
pub struct AggregateGrads {
    /// Gradient wrt each input sentence embedding.
    pub sentences: Vec<Vec<f64>>,
    /// Gradient wrt the query class embedding (ATT only).
    pub query: Option<(usize, Vec<f64>)>,
}

/// Reverses [`ave`] or [`att`]. For ATT the gradient flows through the
/// weighted sum, the softmax Jacobian and the logits into both the sentences
/// and the query class embedding.
pub fn aggregate_backward<S: AsRef<[f64]>>(
    grad_bag: &[f64],
    rep: &BagRepresentation,
    sentences: &[S],
    classes: &DenseMatrix,
    a: f64,
) -> Result<AggregateGrads> {
    let dim = check_inputs(sentences)?;
    if rep.weights.len() != sentences.len() || rep.s.len() != dim || grad_bag.len() != dim {
        return Err(Error::usage(
            "bag representation does not match these sentences",
        ));
    }
    match rep.mode {
        Aggregation::Ave => {
            let n = sentences.len() as f64;
            let g: Vec<f64> = grad_bag.iter().map(|v| v / n).collect();
            Ok(AggregateGrads {
                sentences: vec![g; sentences.len()],
                query: None,
            })
        }
        Aggregation::Att { query } => {
            if query >= classes.rows() || classes.cols() != dim {
                return Err(Error::usage("query class does not fit the class embeddings"));
            }
            let alpha = &rep.weights;
            // dL/dalpha_j = g . s_j
            let u: Vec<f64> = sentences.iter().map(|s| dot(grad_bag, s.as_ref())).collect();
            let mean_u: f64 = alpha.iter().zip(&u).map(|(a, u)| a * u).sum();
            let w = classes.row(query);
            let mut grad_w = vec![0.0; dim];
            let mut out = Vec::with_capacity(sentences.len());
            for (j, s) in sentences.iter().enumerate() {
                // dL/de_j through the softmax
                let delta = alpha[j] * (u[j] - mean_u);
                let mut g: Vec<f64> = grad_bag.iter().map(|v| alpha[j] * v).collect();
                axpy(&mut g, a * delta, w);
                axpy(&mut grad_w, a * delta, s.as_ref());
                out.push(g);
            }
            Ok(AggregateGrads {
                sentences: out,
                query: Some((query, grad_w)),
            })
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numkit::{grad_check, Rng, GRAD_CHECK_EPS};
    use proptest::prelude::*;

    #[test]
    fn ave_examples() {
        let r = ave(&[vec![2.0, 4.0], vec![0.0, 2.0]]).unwrap();
        assert_eq!(r.s, vec![1.0, 3.0]);
        assert_eq!(r.weights, vec![0.5, 0.5]);
        assert_eq!(ave(&[vec![0.3, -0.7]]).unwrap().s, vec![0.3, -0.7]);
        assert!(ave::<Vec<f64>>(&[]).is_err());

        let mut rng = Rng::new(3);
        let sents: Vec<Vec<f64>> = (0..5)
            .map(|_| (0..7).map(|_| rng.uniform_in(-1.0, 1.0)).collect())
            .collect();
        let r = ave(&sents).unwrap();
        for d in 0..7 {
            let oracle = sents.iter().map(|s| s[d]).sum::<f64>() / 5.0;
            assert!((r.s[d] - oracle).abs() <= 1e-12);
        }
    }

    #[test]
    fn att_identical_sentences() {
        let w = DenseMatrix::from_rows(&[vec![1.0, -2.0], vec![0.5, 0.5]]).unwrap();
        let s = vec![vec![0.4, 0.1]; 3];
        for c in 0..2 {
            let r = att(&s, c, &w, 0.5).unwrap();
            for (a, b) in r.s.iter().zip(&s[0]) {
                assert!((a - b).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn att_orthogonal_query_is_uniform() {
        let w = DenseMatrix::from_rows(&[vec![1.0, 0.0]]).unwrap();
        let r = att(&[vec![0.0, 1.0], vec![0.0, -3.0]], 0, &w, 0.5).unwrap();
        assert_eq!(r.weights, vec![0.5, 0.5]);
        assert!(att::<Vec<f64>>(&[], 0, &w, 0.5).is_err());
    }

    #[test]
    fn att_hand_evaluation() {
        // W[c] = [1, 2], a = 0.5
        // s1 = [1, 0] -> e = 0.5; s2 = [0, 1] -> e = 1.0; s3 = [1, 1] -> e = 1.5
        // alpha = softmax([0.5, 1.0, 1.5]) evaluated independently:
        //   exp(-1) / (exp(-1) + exp(-0.5) + 1) = 0.18632372322...
        let w = DenseMatrix::from_rows(&[vec![0.0, 0.0], vec![1.0, 2.0]]).unwrap();
        let s = [vec![1.0, 0.0], vec![0.0, 1.0], vec![1.0, 1.0]];
        let r = att(&s, 1, &w, 0.5).unwrap();
        let expected = [0.186_323_723_225_847_6, 0.307_195_885_718_498_4, 0.506_480_391_055_654_0];
        for (a, b) in r.weights.iter().zip(expected) {
            assert!((a - b).abs() < 1e-12, "{a} vs {b}");
        }
        assert!((r.s[0] - (expected[0] + expected[2])).abs() < 1e-12);
        assert!((r.s[1] - (expected[1] + expected[2])).abs() < 1e-12);
    }

    #[test]
    fn ave_backward_distributes_evenly() {
        let s = [vec![1.0, 2.0], vec![3.0, 4.0]];
        let r = ave(&s).unwrap();
        let w = DenseMatrix::zeros(1, 2);
        let g = aggregate_backward(&[2.0, 2.0], &r, &s, &w, 0.5).unwrap();
        assert_eq!(g.sentences, vec![vec![1.0, 1.0], vec![1.0, 1.0]]);
        assert!(g.query.is_none());
    }

    #[test]
    fn att_singleton_passes_gradient_through() {
        let w = DenseMatrix::from_rows(&[vec![0.3, -0.2, 0.9]]).unwrap();
        let s = [vec![0.1, 0.5, -0.4]];
        let r = att(&s, 0, &w, 0.5).unwrap();
        let grad = [0.7, -1.1, 0.25];
        let g = aggregate_backward(&grad, &r, &s, &w, 0.5).unwrap();
        assert_eq!(g.sentences[0], grad.to_vec());
        assert_eq!(g.query.unwrap().1, vec![0.0; 3]);
    }

    #[test]
    fn att_backward_matches_finite_differences() {
        let mut rng = Rng::new(21);
        let dim = 6;
        let w = DenseMatrix::uniform(3, dim, 1.0, &mut rng);
        let s: Vec<Vec<f64>> = (0..2)
            .map(|_| (0..dim).map(|_| rng.uniform_in(-1.0, 1.0)).collect())
            .collect();
        let upstream: Vec<f64> = (0..dim).map(|_| rng.uniform_in(-1.0, 1.0)).collect();
        let f = |s: &[Vec<f64>], w: &DenseMatrix| dot(&att(s, 2, w, 0.5).unwrap().s, &upstream);

        let r = att(&s, 2, &w, 0.5).unwrap();
        let g = aggregate_backward(&upstream, &r, &s, &w, 0.5).unwrap();
        for j in 0..2 {
            let err = grad_check(
                |x| {
                    let mut t = s.clone();
                    t[j] = x.to_vec();
                    f(&t, &w)
                },
                &s[j],
                &g.sentences[j],
                GRAD_CHECK_EPS,
            )
            .unwrap();
            assert!(err < 1e-4, "sentence {j}: {err}");
        }
        let (q, gw) = g.query.unwrap();
        assert_eq!(q, 2);
        let mut full = vec![0.0; 3 * dim];
        full[2 * dim..].copy_from_slice(&gw);
        let err = grad_check(
            |x| f(&s, &DenseMatrix::from_vec(3, dim, x.to_vec()).unwrap()),
            w.as_slice(),
            &full,
            GRAD_CHECK_EPS,
        )
        .unwrap();
        assert!(err < 1e-4, "class embeddings: {err}");
    }

    #[test]
    fn logit_shift_leaves_attention_unchanged() {
        // every sentence has the same component along u = [1, 1, 0]/..., so
        // moving W[c] along u shifts all logits by the same amount
        let s = [vec![1.0, 0.0, 0.2], vec![0.0, 1.0, -0.5], vec![0.5, 0.5, 0.9]];
        let w = DenseMatrix::from_rows(&[vec![0.3, -0.1, 0.8]]).unwrap();
        let shifted = DenseMatrix::from_rows(&[vec![0.3 + 2.0, -0.1 + 2.0, 0.8]]).unwrap();
        let a = att(&s, 0, &w, 0.5).unwrap();
        let b = att(&s, 0, &shifted, 0.5).unwrap();
        for (x, y) in a.weights.iter().zip(&b.weights) {
            assert!((x - y).abs() < 1e-12);
        }
    }

    proptest! {
        #[test]
        fn att_weights_form_a_distribution(n in 1usize..8, seed in any::<u64>()) {
            let mut rng = Rng::new(seed);
            let w = DenseMatrix::uniform(2, 5, 2.0, &mut rng);
            let s: Vec<Vec<f64>> = (0..n).map(|_| (0..5).map(|_| rng.uniform_in(-1.0, 1.0)).collect()).collect();
            let r = att(&s, 1, &w, 0.5).unwrap();
            prop_assert!((r.weights.iter().sum::<f64>() - 1.0).abs() < 1e-9);
            prop_assert!(r.weights.iter().all(|a| *a > 0.0 && *a <= 1.0));
            prop_assert_eq!(r.s.len(), 5);
        }

        #[test]
        fn att_equals_ave_when_logits_tie(n in 1usize..6, seed in any::<u64>()) {
            // W[c] orthogonal to every sentence
            let mut rng = Rng::new(seed);
            let s: Vec<Vec<f64>> = (0..n).map(|_| vec![rng.uniform_in(-1.0, 1.0), rng.uniform_in(-1.0, 1.0), 0.0]).collect();
            let w = DenseMatrix::from_rows(&[vec![0.0, 0.0, 1.7]]).unwrap();
            let a = att(&s, 0, &w, 0.5).unwrap();
            let b = ave(&s).unwrap();
            for (x, y) in a.s.iter().zip(&b.s) {
                prop_assert!((x - y).abs() < 1e-12);
            }
        }
    }
}
