//! Benchmark fixtures.

use classtie_core::{Mention, MentionBag, ModelConfig, ModelParams, RelationSchema, Rng};

pub const VOCAB: usize = 2000;

/// Reference-sized model with a random initialization.
pub fn model(seed: u64) -> (ModelParams, ModelConfig, RelationSchema) {
    let cfg = ModelConfig::default();
    let schema = RelationSchema::from_relations(["/a", "/b", "/c", "/d", "NR"]).unwrap();
    let params = ModelParams::init(VOCAB, schema.num_classes(), &cfg.encoder, &mut Rng::new(seed)).unwrap();
    (params, cfg, schema)
}

pub fn mention(len: usize, rng: &mut Rng) -> Mention {
    let tokens = (0..len).map(|_| rng.below(VOCAB)).collect();
    let e1 = rng.below(len / 2);
    let e2 = len / 2 + rng.below(len - len / 2);
    Mention::new(tokens, e1, e2).unwrap()
}

/// A bag of `sentences` mentions of length `len` labelled with `labels`.
pub fn bag(sentences: usize, len: usize, labels: &[usize], schema: &RelationSchema, seed: u64) -> MentionBag {
    let mut rng = Rng::new(seed);
    let mentions = (0..sentences).map(|_| mention(len, &mut rng)).collect();
    MentionBag::new("bench", labels.iter().copied(), mentions, schema).unwrap()
}
