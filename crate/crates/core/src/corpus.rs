//! Distant-supervision corpus model: relation schema, mentions, multi-label
//! bags, vocabulary and position features, plus the JSON-lines reader and
//! writer.
//!
//! One corpus line holds one bag:
//!
//! ```text
//! {"tuple_id": "t1", "labels": ["/a"], "mentions": [{"tokens": ["x", "y"], "e1": 0, "e2": 1}]}
//! ```
//!
//! Mentions may carry `label_provenance`, the subset of the bag's labels that
//! the mention is known to express. Only [`split_to_separated`] reads it.

use std::collections::{BTreeSet, HashMap};
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Name conventionally used for the "not relation" class.
pub const NR_NAME: &str = "NR";
/// Surface form of the shared unknown-word entry.
pub const UNK_TOKEN: &str = "UNK";

/// Ordered relation classes with a designated NR class.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RelationSchema {
    names: Vec<String>,
    nr_index: usize,
}

impl RelationSchema {
    pub fn new(names: Vec<String>, nr_index: usize) -> Result<Self> {
        if nr_index >= names.len() {
            return Err(Error::usage(format!(
                "NR index {nr_index} out of range for {} classes",
                names.len()
            )));
        }
        let unique: BTreeSet<&String> = names.iter().collect();
        if unique.len() != names.len() {
            return Err(Error::usage("relation names must be unique"));
        }
        Ok(RelationSchema { names, nr_index })
    }

    /// Schema over `relations` plus [`NR_NAME`], sorted lexicographically.
    pub fn from_relations<I, S>(relations: I) -> Result<Self>
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        let mut set: BTreeSet<String> = relations.into_iter().map(Into::into).collect();
        set.insert(NR_NAME.to_string());
        let names: Vec<String> = set.into_iter().collect();
        let nr_index = names.iter().position(|n| n == NR_NAME).unwrap();
        Self::new(names, nr_index)
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn nr_index(&self) -> usize {
        self.nr_index
    }

    pub fn num_classes(&self) -> usize {
        self.names.len()
    }

    pub fn name(&self, class: usize) -> &str {
        &self.names[class]
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.names.iter().position(|n| n == name)
    }

    pub fn is_nr(&self, class: usize) -> bool {
        class == self.nr_index
    }
}

/// One sentence of a bag, as word ids plus the two entity head positions.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Mention {
    pub tokens: Vec<usize>,
    pub e1: usize,
    pub e2: usize,
}

impl Mention {
    pub fn new(tokens: Vec<usize>, e1: usize, e2: usize) -> Result<Self> {
        let n = tokens.len();
        if n == 0 {
            return Err(Error::usage("mention has no tokens"));
        }
        if e1 >= n || e2 >= n {
            return Err(Error::usage(format!(
                "entity position ({e1}, {e2}) outside a {n}-token mention"
            )));
        }
        if e1 == e2 {
            return Err(Error::usage("entity positions must differ"));
        }
        Ok(Mention { tokens, e1, e2 })
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }
}

/// All mentions of one entity tuple with its label set.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MentionBag {
    pub tuple_id: String,
    /// Sorted, duplicate-free class indices.
    labels: Vec<usize>,
    pub mentions: Vec<Mention>,
    /// Per-mention label provenance, present when the source record had any.
    pub provenance: Option<Vec<Vec<usize>>>,
}

impl MentionBag {
    pub fn new(
        tuple_id: impl Into<String>,
        labels: impl IntoIterator<Item = usize>,
        mentions: Vec<Mention>,
        schema: &RelationSchema,
    ) -> Result<Self> {
        let labels: Vec<usize> = labels.into_iter().collect::<BTreeSet<_>>().into_iter().collect();
        if labels.is_empty() {
            return Err(Error::usage("bag has no labels"));
        }
        if let Some(&bad) = labels.iter().find(|&&c| c >= schema.num_classes()) {
            return Err(Error::usage(format!("class index {bad} out of range")));
        }
        if labels.contains(&schema.nr_index()) && labels.len() > 1 {
            return Err(Error::usage(
                "NR cannot be combined with other relations in one bag",
            ));
        }
        if mentions.is_empty() {
            return Err(Error::usage("bag has no mentions"));
        }
        Ok(MentionBag {
            tuple_id: tuple_id.into(),
            labels,
            mentions,
            provenance: None,
        })
    }

    pub fn with_provenance(mut self, provenance: Vec<Vec<usize>>) -> Result<Self> {
        if provenance.len() != self.mentions.len() {
            return Err(Error::usage("provenance must list one entry per mention"));
        }
        for p in &provenance {
            if let Some(c) = p.iter().find(|c| !self.labels.contains(c)) {
                return Err(Error::usage(format!(
                    "provenance names class {c}, which is not a bag label"
                )));
            }
        }
        self.provenance = Some(provenance);
        Ok(self)
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn has_label(&self, class: usize) -> bool {
        self.labels.binary_search(&class).is_ok()
    }

    pub fn is_nr(&self, schema: &RelationSchema) -> bool {
        self.labels == [schema.nr_index()]
    }
}

/// Word-to-id map with a shared unknown-word id.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Vocabulary {
    min_count: usize,
    words: Vec<String>,
    index: HashMap<String, usize>,
}

#[derive(Serialize, Deserialize)]
struct VocabularyFile {
    min_count: usize,
    words: Vec<String>,
    unk: String,
}

impl Vocabulary {
    /// The unknown-word entry always sits at id 0.
    pub const UNK_ID: usize = 0;

    fn from_words(min_count: usize, words: Vec<String>) -> Result<Self> {
        if words.first().map(String::as_str) != Some(UNK_TOKEN) {
            return Err(Error::format("vocabulary must start with the UNK entry"));
        }
        let mut index = HashMap::with_capacity(words.len());
        for (i, w) in words.iter().enumerate() {
            if index.insert(w.clone(), i).is_some() {
                return Err(Error::format(format!("duplicate vocabulary word {w:?}")));
            }
        }
        Ok(Vocabulary {
            min_count,
            words,
            index,
        })
    }

    pub fn unk_id(&self) -> usize {
        Self::UNK_ID
    }

    pub fn min_count(&self) -> usize {
        self.min_count
    }

    pub fn len(&self) -> usize {
        self.words.len()
    }

    pub fn is_empty(&self) -> bool {
        self.words.is_empty()
    }

    pub fn id(&self, word: &str) -> usize {
        self.index.get(word).copied().unwrap_or(Self::UNK_ID)
    }

    pub fn word(&self, id: usize) -> Option<&str> {
        self.words.get(id).map(String::as_str)
    }

    pub fn words(&self) -> &[String] {
        &self.words
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let file = VocabularyFile {
            min_count: self.min_count,
            words: self.words.clone(),
            unk: UNK_TOKEN.to_string(),
        };
        write_json(path, &file)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let file: VocabularyFile = read_json(path)?;
        if file.unk != UNK_TOKEN {
            return Err(Error::format(format!(
                "{}: unknown-word entry must be {UNK_TOKEN:?}",
                path.display()
            )));
        }
        Self::from_words(file.min_count, file.words)
    }
}

/// Builds a vocabulary keeping words seen strictly more than `min_count`
/// times. Kept words are ordered by descending frequency, then
/// lexicographically; everything else maps to the unknown id.
pub fn build_vocab<I, S>(tokens: I, min_count: usize) -> Result<Vocabulary>
where
    I: IntoIterator<Item = S>,
    S: AsRef<str>,
{
    if min_count < 1 {
        return Err(Error::usage("min_count must be at least 1"));
    }
    let mut counts: HashMap<String, usize> = HashMap::new();
    let mut total = 0usize;
    for t in tokens {
        *counts.entry(t.as_ref().to_string()).or_default() += 1;
        total += 1;
    }
    if total == 0 {
        return Err(Error::usage("cannot build a vocabulary from an empty corpus"));
    }
    let mut kept: Vec<(String, usize)> = counts
        .into_iter()
        .filter(|(w, c)| *c > min_count && w != UNK_TOKEN)
        .collect();
    kept.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
    let mut words = Vec::with_capacity(kept.len() + 1);
    words.push(UNK_TOKEN.to_string());
    words.extend(kept.into_iter().map(|(w, _)| w));
    Vocabulary::from_words(min_count, words)
}

/// Clipped relative-position indices for every token of a mention.
///
/// For token `i`, the distances `i - e1` and `i - e2` are clamped to
/// `[-clip, clip]` and shifted by `clip`, giving indices in `0..=2*clip`.
pub fn position_features(mention: &Mention, clip: usize) -> Vec<(usize, usize)> {
    assert!(clip >= 1, "position clip must be at least 1");
    let clip_i = clip as i64;
    let index = |i: usize, e: usize| -> usize {
        let raw = i as i64 - e as i64;
        (raw.clamp(-clip_i, clip_i) + clip_i) as usize
    };
    (0..mention.len())
        .map(|i| (index(i, mention.e1), index(i, mention.e2)))
        .collect()
}

/// Number of distinct position indices for a clip value.
pub fn position_table_len(clip: usize) -> usize {
    2 * clip + 1
}

/// One corpus line as stored on disk.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BagRecord {
    pub tuple_id: String,
    pub labels: Vec<String>,
    pub mentions: Vec<MentionRecord>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MentionRecord {
    pub tokens: Vec<String>,
    pub e1: Option<usize>,
    pub e2: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub label_provenance: Option<Vec<String>>,
}

/// Reads every record of a JSON-lines corpus, skipping blank lines.
/// Returns `(line_number, record)` pairs with 1-based line numbers.
pub fn read_records(path: &Path) -> Result<Vec<(usize, BagRecord)>> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let record: BagRecord = serde_json::from_str(&line).map_err(|e| Error::Parse {
            path: path.display().to_string(),
            line: i + 1,
            message: e.to_string(),
        })?;
        out.push((i + 1, record));
    }
    Ok(out)
}

/// Converts one record into a bag, mapping tokens through `vocab`.
pub fn record_to_bag(
    record: &BagRecord,
    schema: &RelationSchema,
    vocab: &Vocabulary,
) -> std::result::Result<MentionBag, String> {
    let class = |name: &str| {
        schema
            .index_of(name)
            .ok_or_else(|| format!("unknown relation {name:?}"))
    };
    let labels = record
        .labels
        .iter()
        .map(|l| class(l))
        .collect::<std::result::Result<Vec<_>, _>>()?;
    let mut mentions = Vec::with_capacity(record.mentions.len());
    let mut provenance = Vec::with_capacity(record.mentions.len());
    let mut any_provenance = false;
    for (j, m) in record.mentions.iter().enumerate() {
        let (e1, e2) = match (m.e1, m.e2) {
            (Some(a), Some(b)) => (a, b),
            _ => return Err(format!("mention {j} is missing an entity position")),
        };
        let tokens = m.tokens.iter().map(|t| vocab.id(t)).collect();
        mentions.push(Mention::new(tokens, e1, e2).map_err(|e| format!("mention {j}: {e}"))?);
        let prov = match &m.label_provenance {
            Some(names) => {
                any_provenance = true;
                names
                    .iter()
                    .map(|n| class(n))
                    .collect::<std::result::Result<Vec<_>, _>>()?
            }
            None => Vec::new(),
        };
        provenance.push(prov);
    }
    let bag = MentionBag::new(record.tuple_id.clone(), labels, mentions, schema)
        .map_err(|e| e.to_string())?;
    if any_provenance {
        bag.with_provenance(provenance).map_err(|e| e.to_string())
    } else {
        Ok(bag)
    }
}

/// Loads a JSON-lines corpus. Malformed records are reported with their line.
pub fn load_bags(
    path: &Path,
    schema: &RelationSchema,
    vocab: &Vocabulary,
) -> Result<Vec<MentionBag>> {
    read_records(path)?
        .into_iter()
        .map(|(line, record)| {
            record_to_bag(&record, schema, vocab).map_err(|message| Error::Parse {
                path: path.display().to_string(),
                line,
                message,
            })
        })
        .collect()
}

/// Inverse of [`record_to_bag`]; token ids are written as vocabulary words.
pub fn bag_to_record(
    bag: &MentionBag,
    schema: &RelationSchema,
    vocab: &Vocabulary,
) -> BagRecord {
    let mentions = bag
        .mentions
        .iter()
        .enumerate()
        .map(|(j, m)| MentionRecord {
            tokens: m
                .tokens
                .iter()
                .map(|&t| vocab.word(t).unwrap_or(UNK_TOKEN).to_string())
                .collect(),
            e1: Some(m.e1),
            e2: Some(m.e2),
            label_provenance: bag.provenance.as_ref().map(|p| {
                p[j].iter().map(|&c| schema.name(c).to_string()).collect()
            }),
        })
        .collect();
    BagRecord {
        tuple_id: bag.tuple_id.clone(),
        labels: bag.labels.iter().map(|&c| schema.name(c).to_string()).collect(),
        mentions,
    }
}

pub fn write_records<'a, I>(path: &Path, records: I) -> Result<()>
where
    I: IntoIterator<Item = &'a BagRecord>,
{
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    for r in records {
        let line = serde_json::to_string(r).map_err(|source| Error::Json {
            path: path.display().to_string(),
            source,
        })?;
        writeln!(w, "{line}").map_err(|e| Error::io(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn write_bags(
    path: &Path,
    bags: &[MentionBag],
    schema: &RelationSchema,
    vocab: &Vocabulary,
) -> Result<()> {
    let records: Vec<BagRecord> = bags.iter().map(|b| bag_to_record(b, schema, vocab)).collect();
    write_records(path, &records)
}

/// Splits every multi-label bag into single-label bags.
///
/// When a bag carries provenance, the bag for relation `r` keeps only the
/// mentions annotated with `r`. If no mention is annotated with `r` (its
/// evidence was never observed), or the bag has no provenance at all, the
/// new bag keeps every mention.
pub fn split_to_separated(bags: &[MentionBag]) -> Vec<MentionBag> {
    let mut out = Vec::new();
    for bag in bags {
        if bag.labels.len() == 1 {
            out.push(bag.clone());
            continue;
        }
        for &label in &bag.labels {
            let selected: Vec<usize> = match &bag.provenance {
                Some(prov) => prov
                    .iter()
                    .enumerate()
                    .filter(|(_, p)| p.contains(&label))
                    .map(|(j, _)| j)
                    .collect(),
                None => Vec::new(),
            };
            let (mentions, provenance) = if selected.is_empty() {
                (
                    bag.mentions.clone(),
                    bag.provenance.as_ref().map(|p| {
                        p.iter()
                            .map(|cs| cs.iter().copied().filter(|&c| c == label).collect())
                            .collect()
                    }),
                )
            } else {
                (
                    selected.iter().map(|&j| bag.mentions[j].clone()).collect(),
                    Some(selected.iter().map(|_| vec![label]).collect()),
                )
            };
            out.push(MentionBag {
                tuple_id: bag.tuple_id.clone(),
                labels: vec![label],
                mentions,
                provenance,
            });
        }
    }
    out
}

pub(crate) fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(value).map_err(|source| Error::Json {
        path: path.display().to_string(),
        source,
    })?;
    std::fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
}

pub(crate) fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|source| Error::Json {
        path: path.display().to_string(),
        source,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn schema() -> RelationSchema {
        RelationSchema::from_relations(["/location/contains", "/people/born_in", "/a"]).unwrap()
    }

    fn record(labels: &[&str], mentions: Vec<MentionRecord>) -> BagRecord {
        BagRecord {
            tuple_id: "t".into(),
            labels: labels.iter().map(|s| s.to_string()).collect(),
            mentions,
        }
    }

    fn mention(tokens: &[&str], e1: Option<usize>, e2: Option<usize>) -> MentionRecord {
        MentionRecord {
            tokens: tokens.iter().map(|s| s.to_string()).collect(),
            e1,
            e2,
            label_provenance: None,
        }
    }

    #[test]
    fn vocab_threshold_is_strict() {
        let mut tokens = vec!["often"; 101];
        tokens.extend(vec!["edge"; 100]);
        let v = build_vocab(tokens, 100).unwrap();
        assert_ne!(v.id("often"), v.unk_id());
        assert_eq!(v.id("edge"), v.unk_id());
        assert_eq!(v.id("never-seen"), v.unk_id());
        assert_eq!(v.len(), 2);
    }

    #[test]
    fn vocab_order_is_frequency_then_lexicographic() {
        let v = build_vocab(["b", "b", "a", "a", "c", "c", "c"], 1).unwrap();
        assert_eq!(v.words(), &["UNK", "c", "a", "b"]);
        assert!(build_vocab(Vec::<&str>::new(), 1).is_err());
        assert!(build_vocab(["a"], 0).is_err());
    }

    #[test]
    fn vocab_file_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let v = build_vocab(["x", "x", "y", "y", "y"], 1).unwrap();
        let p = dir.path().join("vocab.json");
        v.save(&p).unwrap();
        assert_eq!(Vocabulary::load(&p).unwrap(), v);
    }

    #[test]
    fn position_feature_examples() {
        let m = Mention::new(vec![0; 5], 1, 3).unwrap();
        let f = position_features(&m, 30);
        let raw: Vec<i64> = f.iter().map(|(d1, _)| *d1 as i64 - 30).collect();
        assert_eq!(raw, vec![-1, 0, 1, 2, 3]);
        assert_eq!(f[1].0, 30);
        assert_eq!(f[3].1, 30);

        // raw distance -clip-7 clamps to index 0
        let long = Mention::new(vec![0; 20], 19, 0).unwrap();
        let f = position_features(&long, 5);
        assert_eq!(f[7].0, 0); // 7 - 19 = -12 = -5 - 7
        assert_eq!(f[19].1, 10);
    }

    #[test]
    fn mention_invariants() {
        assert!(Mention::new(vec![], 0, 0).is_err());
        assert!(Mention::new(vec![1, 2], 0, 0).is_err());
        assert!(Mention::new(vec![1, 2], 0, 2).is_err());
    }

    #[test]
    fn nr_exclusivity_is_a_parse_error() {
        let s = schema();
        let v = build_vocab(["a", "a"], 1).unwrap();
        let r = record(&["NR", "/location/contains"], vec![mention(&["a", "b"], Some(0), Some(1))]);
        assert!(record_to_bag(&r, &s, &v).unwrap_err().contains("NR"));
    }

    #[test]
    fn record_errors_name_the_problem() {
        let s = schema();
        let v = build_vocab(["a", "a"], 1).unwrap();
        let r = record(&["/nope"], vec![mention(&["a", "b"], Some(0), Some(1))]);
        assert!(record_to_bag(&r, &s, &v).unwrap_err().contains("unknown relation"));
        let r = record(&["/a"], vec![mention(&["a", "b"], None, Some(1))]);
        assert!(record_to_bag(&r, &s, &v).unwrap_err().contains("missing"));
        let r = record(&["/a"], vec![]);
        assert!(record_to_bag(&r, &s, &v).unwrap_err().contains("no mentions"));
    }

    #[test]
    fn load_reports_line_numbers() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("c.jsonl");
        let good = serde_json::to_string(&record(
            &["/a"],
            vec![
                mention(&["a", "b"], Some(0), Some(1)),
                mention(&["b", "a", "c"], Some(2), Some(0)),
            ],
        ))
        .unwrap();
        let bad = serde_json::to_string(&record(&["/a"], vec![mention(&["a"], Some(0), Some(3))]))
            .unwrap();
        std::fs::write(&p, format!("{good}\n\n{bad}\n")).unwrap();
        let v = build_vocab(["a", "a"], 1).unwrap();
        match load_bags(&p, &schema(), &v) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 3),
            other => panic!("expected parse error, got {other:?}"),
        }
        std::fs::write(&p, format!("{good}\n")).unwrap();
        let bags = load_bags(&p, &schema(), &v).unwrap();
        assert_eq!(bags.len(), 1);
        assert_eq!(bags[0].mentions.len(), 2);
        assert_eq!(bags[0].mentions[1].tokens, vec![0, 1, 0]);
    }

    #[test]
    fn separated_split_examples() {
        let s = schema();
        let a = s.index_of("/a").unwrap();
        let b = s.index_of("/people/born_in").unwrap();
        let m = |t| Mention::new(vec![t, 0, 0], 1, 2).unwrap();
        let bag = MentionBag::new("t", [a, b], vec![m(1), m(2), m(3)], &s).unwrap();
        let out = split_to_separated(std::slice::from_ref(&bag));
        assert_eq!(out.len(), 2);
        assert!(out.iter().all(|o| o.mentions.len() == 3 && o.labels().len() == 1));

        let single = MentionBag::new("u", [a], vec![m(1)], &s).unwrap();
        assert_eq!(split_to_separated(std::slice::from_ref(&single)), vec![single]);

        let prov = bag.clone().with_provenance(vec![vec![a], vec![b], vec![b]]).unwrap();
        let out = split_to_separated(&[prov]);
        assert_eq!(out[0].labels(), &[a]);
        assert_eq!(out[0].mentions, vec![m(1)]);
        assert_eq!(out[1].labels(), &[b]);
        assert_eq!(out[1].mentions, vec![m(2), m(3)]);

        // a label with provenance elsewhere in the bag but no own mention
        let prov = bag.with_provenance(vec![vec![a], vec![], vec![]]).unwrap();
        let out = split_to_separated(&[prov]);
        assert_eq!(out[1].labels(), &[b]);
        assert_eq!(out[1].mentions.len(), 3);
    }

    proptest! {
        #[test]
        fn positions_stay_in_range(n in 2usize..40, e1 in 0usize..40, e2 in 0usize..40, clip in 1usize..12) {
            prop_assume!(e1 < n && e2 < n && e1 != e2);
            let m = Mention::new(vec![0; n], e1, e2).unwrap();
            for (a, b) in position_features(&m, clip) {
                prop_assert!(a <= 2 * clip && b <= 2 * clip);
            }
        }

        #[test]
        fn vocab_is_order_independent(words in prop::collection::vec("[a-e]{1,2}", 1..200), seed in any::<u64>()) {
            let v1 = build_vocab(&words, 1).unwrap();
            let mut shuffled = words.clone();
            crate::numkit::Rng::new(seed).shuffle(&mut shuffled);
            let v2 = build_vocab(&shuffled, 1).unwrap();
            prop_assert_eq!(v1, v2);
        }

        #[test]
        fn split_preserves_label_mass(label_sets in prop::collection::vec(prop::collection::btree_set(1usize..5, 1..4), 1..20)) {
            let s = RelationSchema::from_relations(["a", "b", "c", "d"]).unwrap();
            // "NR" sorts first, so generated labels 1..5 never include it
            let bags: Vec<MentionBag> = label_sets.iter().enumerate().map(|(i, ls)| {
                MentionBag::new(format!("t{i}"), ls.iter().copied(), vec![Mention::new(vec![0, 0], 0, 1).unwrap()], &s).unwrap()
            }).collect();
            let before: usize = bags.iter().map(|b| b.labels().len()).sum();
            let after: usize = split_to_separated(&bags).iter().map(|b| b.labels().len()).sum();
            prop_assert_eq!(before, after);
        }
    }
}
