//! Checkpoint directories.
//!
//! ```text
//! ckpt/
//!   manifest.json     shapes, training config, seed, schema
//!   vocab.json
//!   word.f32 position.f32 [position2.f32] kernels.f32 bias.f32 classes.f32
//! ```
//!
//! Blobs are raw little-endian `f32`, row-major. Loading checks every blob
//! against the manifest and the manifest against the hyperparameters.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::corpus::{position_table_len, read_json, write_json, RelationSchema, Vocabulary};
use crate::encoder::EncoderParams;
use crate::error::{Error, Result};
use crate::model::{ModelParams, ParamGroup};
use crate::numkit::DenseMatrix;
use crate::trainer::TrainConfig;

pub const MANIFEST_FILE: &str = "manifest.json";
pub const VOCAB_FILE: &str = "vocab.json";
const FORMAT: &str = "classtie-checkpoint";
const VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArrayEntry {
    pub name: String,
    pub rows: usize,
    pub cols: usize,
    pub file: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub format: String,
    pub version: u32,
    pub config: TrainConfig,
    pub schema: RelationSchema,
    pub vocabulary: String,
    pub vocab_len: usize,
    /// Epoch the stored parameters come from, if known.
    pub epoch: Option<usize>,
    pub arrays: Vec<ArrayEntry>,
}

#[derive(Debug, Clone)]
pub struct Checkpoint {
    pub params: ModelParams,
    pub vocab: Vocabulary,
    pub schema: RelationSchema,
    pub manifest: Manifest,
}

fn matrix_of(params: &ModelParams, group: ParamGroup) -> (usize, usize) {
    match group {
        ParamGroup::Word => params.encoder.word.shape(),
        ParamGroup::Position => params.encoder.position.shape(),
        ParamGroup::Position2 => params.encoder.position2.as_ref().map_or((0, 0), DenseMatrix::shape),
        ParamGroup::Kernels => params.encoder.kernels.shape(),
        ParamGroup::Bias => (1, params.encoder.bias.len()),
        ParamGroup::Classes => params.classes.shape(),
    }
}

/// Writes `params` and metadata into `dir`, creating it if needed.
pub fn save_checkpoint(
    dir: &Path,
    params: &ModelParams,
    vocab: &Vocabulary,
    schema: &RelationSchema,
    cfg: &TrainConfig,
    epoch: Option<usize>,
) -> Result<()> {
    params.check_shapes()?;
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut arrays = Vec::new();
    for group in params.groups() {
        let (rows, cols) = matrix_of(params, group);
        let file = format!("{}.f32", group.name());
        let bytes: Vec<u8> = params
            .group(group)
            .iter()
            .flat_map(|&v| (v as f32).to_le_bytes())
            .collect();
        let path = dir.join(&file);
        std::fs::write(&path, bytes).map_err(|e| Error::io(&path, e))?;
        arrays.push(ArrayEntry {
            name: group.name().to_string(),
            rows,
            cols,
            file,
        });
    }
    vocab.save(&dir.join(VOCAB_FILE))?;
    let manifest = Manifest {
        format: FORMAT.to_string(),
        version: VERSION,
        config: *cfg,
        schema: schema.clone(),
        vocabulary: VOCAB_FILE.to_string(),
        vocab_len: vocab.len(),
        epoch,
        arrays,
    };
    write_json(&dir.join(MANIFEST_FILE), &manifest)
}

fn expected_shape(group: ParamGroup, m: &Manifest) -> (usize, usize) {
    let e = &m.config.model.encoder;
    let lp = position_table_len(e.clip);
    match group {
        ParamGroup::Word => (m.vocab_len, e.word_dim),
        ParamGroup::Position | ParamGroup::Position2 => (lp, e.position_dim),
        ParamGroup::Kernels => (e.kernels, e.window * e.token_dim()),
        ParamGroup::Bias => (1, e.kernels),
        ParamGroup::Classes => (m.schema.num_classes(), e.sentence_dim()),
    }
}

fn read_blob(dir: &Path, entry: &ArrayEntry) -> Result<DenseMatrix> {
    let path = dir.join(&entry.file);
    let bytes = std::fs::read(&path).map_err(|e| Error::io(&path, e))?;
    let want = entry.rows * entry.cols * 4;
    if bytes.len() != want {
        return Err(Error::format(format!(
            "{}: expected {want} bytes for a {}x{} array, found {}",
            path.display(),
            entry.rows,
            entry.cols,
            bytes.len()
        )));
    }
    let data = bytes
        .chunks_exact(4)
        .map(|c| f64::from(f32::from_le_bytes([c[0], c[1], c[2], c[3]])))
        .collect();
    DenseMatrix::from_vec(entry.rows, entry.cols, data)
        .map_err(|e| Error::format(format!("{}: {e}", path.display())))
}

/// Reads a checkpoint written by [`save_checkpoint`].
pub fn load_checkpoint(dir: &Path) -> Result<Checkpoint> {
    let manifest: Manifest = read_json(&dir.join(MANIFEST_FILE))?;
    if manifest.format != FORMAT || manifest.version != VERSION {
        return Err(Error::format(format!(
            "unsupported checkpoint {} v{}",
            manifest.format, manifest.version
        )));
    }
    manifest.config.validate().map_err(|e| Error::format(e.to_string()))?;
    let vocab = Vocabulary::load(&dir.join(&manifest.vocabulary))?;
    if vocab.len() != manifest.vocab_len {
        return Err(Error::format("vocabulary size disagrees with the manifest"));
    }
    let mut found: Vec<(ParamGroup, DenseMatrix)> = Vec::new();
    for entry in &manifest.arrays {
        let group = ParamGroup::ALL
            .into_iter()
            .find(|g| g.name() == entry.name)
            .ok_or_else(|| Error::format(format!("unknown array {:?}", entry.name)))?;
        if found.iter().any(|(g, _)| *g == group) {
            return Err(Error::format(format!("array {:?} listed twice", entry.name)));
        }
        let want = expected_shape(group, &manifest);
        if (entry.rows, entry.cols) != want {
            return Err(Error::format(format!(
                "array {} is {}x{} but the hyperparameters imply {}x{}",
                entry.name, entry.rows, entry.cols, want.0, want.1
            )));
        }
        found.push((group, read_blob(dir, entry)?));
    }
    let mut take = |g: ParamGroup| found.iter().position(|(x, _)| *x == g).map(|i| found.swap_remove(i).1);
    let missing = |g: ParamGroup| Error::format(format!("checkpoint has no {} array", g.name()));
    let word = take(ParamGroup::Word).ok_or_else(|| missing(ParamGroup::Word))?;
    let position = take(ParamGroup::Position).ok_or_else(|| missing(ParamGroup::Position))?;
    let position2 = take(ParamGroup::Position2);
    if position2.is_some() == manifest.config.model.encoder.shared_position {
        return Err(Error::format("second position table disagrees with shared_position"));
    }
    let kernels = take(ParamGroup::Kernels).ok_or_else(|| missing(ParamGroup::Kernels))?;
    let bias = take(ParamGroup::Bias).ok_or_else(|| missing(ParamGroup::Bias))?.into_vec();
    let classes = take(ParamGroup::Classes).ok_or_else(|| missing(ParamGroup::Classes))?;
    let params = ModelParams {
        encoder: EncoderParams {
            word,
            position,
            position2,
            kernels,
            bias,
            window: manifest.config.model.encoder.window,
        },
        classes,
    };
    params.check_shapes().map_err(|e| Error::format(e.to_string()))?;
    Ok(Checkpoint {
        params,
        vocab,
        schema: manifest.schema.clone(),
        manifest,
    })
}
