//! Sequences of per-layer discriminator statistics.
//!
//! For every document the captured layer vectors (embedding layer excluded,
//! softmax last) are right-padded with zeros to a common width and masked, so
//! the autoencoder can consume them one layer per timestep.

use std::path::Path;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::artifact;
use crate::corpus::Document;
use crate::error::{Error, Result};
use crate::gan::{GanModel, LayerSpec};
use crate::nn::Tensor;

const STATS_FORMAT: &str = "deepstat-stats";
const STATS_VERSION: u32 = 1;
const SCALER_FORMAT: &str = "deepstat-scaler";
const MAGIC: &[u8; 8] = b"DSTATS01";
pub const DEFAULT_EPSILON: f64 = 1e-6;

/// Where a document came from. Only evaluation code sets `Novel`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Origin {
    Baseline,
    Novel,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LayerStatSequence {
    pub sample_id: u64,
    pub origin: Option<Origin>,
    /// `layers × d_stat`, zero where `mask` is false.
    pub padded: Array2<f64>,
    pub mask: Array2<bool>,
    pub scaled: bool,
}

impl LayerStatSequence {
    pub fn from_layers(sample_id: u64, origin: Option<Origin>, layers: &[Vec<f64>], d_stat: usize) -> Result<Self> {
        let (padded, mask) = pad_to(layers, d_stat)?;
        Ok(LayerStatSequence { sample_id, origin, padded, mask, scaled: false })
    }

    pub fn num_layers(&self) -> usize {
        self.padded.nrows()
    }

    pub fn d_stat(&self) -> usize {
        self.padded.ncols()
    }

    /// The original ragged layer vectors.
    pub fn layers(&self) -> Vec<Vec<f64>> {
        unpad(&self.padded, &self.mask)
    }

    /// The final layer (softmax output), unpadded.
    pub fn last_layer(&self) -> Vec<f64> {
        self.layers().pop().unwrap_or_default()
    }

    pub fn is_novel(&self) -> bool {
        self.origin == Some(Origin::Novel)
    }
}

fn pad_to(layers: &[Vec<f64>], d_stat: usize) -> Result<(Array2<f64>, Array2<bool>)> {
    if layers.is_empty() {
        return Err(Error::InvalidInput("at least one layer is required".into()));
    }
    if let Some(l) = layers.iter().find(|l| l.len() > d_stat) {
        return Err(Error::Shape(format!("layer of width {} exceeds d_stat {d_stat}", l.len())));
    }
    let mut padded = Array2::zeros((layers.len(), d_stat));
    let mut mask = Array2::from_elem((layers.len(), d_stat), false);
    for (r, layer) in layers.iter().enumerate() {
        for (c, &v) in layer.iter().enumerate() {
            padded[[r, c]] = v;
            mask[[r, c]] = true;
        }
    }
    Ok((padded, mask))
}

/// Zero-pads every layer to the widest one and marks real entries.
pub fn pad_and_mask(layers: &[Vec<f64>]) -> Result<(Array2<f64>, Array2<bool>)> {
    let width = layers.iter().map(Vec::len).max().unwrap_or(0);
    pad_to(layers, width)
}

pub fn unpad(padded: &Array2<f64>, mask: &Array2<bool>) -> Vec<Vec<f64>> {
    padded
        .rows()
        .into_iter()
        .zip(mask.rows())
        .map(|(row, m)| row.iter().zip(m.iter()).filter(|(_, &keep)| keep).map(|(v, _)| *v).collect())
        .collect()
}

/// Common padded width for an architecture.
pub fn stat_width(layers: &[LayerSpec]) -> usize {
    layers.iter().map(|l| l.width).max().unwrap_or(0)
}

/// One statistics sequence per document, in document order; sample ids start at `first_id`.
pub fn extract_stats(
    model: &GanModel,
    docs: &[Document],
    origin: Option<Origin>,
    first_id: u64,
) -> Result<Vec<LayerStatSequence>> {
    let specs = model.discriminator.layer_specs();
    let d_stat = stat_width(&specs);
    let outputs = model.discriminate_documents(docs, true)?;
    outputs
        .iter()
        .enumerate()
        .map(|(i, out)| {
            if out.layer_record.len() != specs.len() {
                return Err(Error::Shape(format!(
                    "captured {} layers, architecture declares {}",
                    out.layer_record.len(),
                    specs.len()
                )));
            }
            LayerStatSequence::from_layers(first_id + i as u64, origin, &out.layer_record, d_stat)
        })
        .collect()
}

/// Per-position standardization fitted on baseline statistics.
#[derive(Debug, Clone, PartialEq)]
pub struct StatsScaler {
    pub mean: Array2<f64>,
    pub std: Array2<f64>,
    pub fit_count: usize,
    pub epsilon: f64,
}

#[derive(Serialize, Deserialize)]
struct ScalerFile {
    format: String,
    version: u32,
    fit_count: usize,
    epsilon: f64,
    mean: Tensor,
    std: Tensor,
}

pub fn fit_scaler(baseline: &[LayerStatSequence], epsilon: f64) -> Result<StatsScaler> {
    let first = baseline.first().ok_or_else(|| Error::InvalidInput("cannot fit a scaler on no data".into()))?;
    if let Some(s) = baseline.iter().find(|s| s.is_novel()) {
        return Err(Error::BaselineContract(format!("sample {} is tagged novel; scaler fit is baseline-only", s.sample_id)));
    }
    let dim = first.padded.dim();
    let mut sum = Array2::<f64>::zeros(dim);
    let mut count = Array2::<f64>::zeros(dim);
    for s in baseline {
        if s.padded.dim() != dim {
            return Err(Error::Shape(format!("sequence {} has shape {:?}, expected {dim:?}", s.sample_id, s.padded.dim())));
        }
        ndarray::Zip::from(&mut sum).and(&mut count).and(&s.padded).and(&s.mask).for_each(|sm, c, &v, &m| {
            if m {
                *sm += v;
                *c += 1.0;
            }
        });
    }
    let mean = ndarray::Zip::from(&sum).and(&count).map_collect(|&s, &c| if c > 0.0 { s / c } else { 0.0 });
    let mut sq = Array2::<f64>::zeros(dim);
    for s in baseline {
        ndarray::Zip::from(&mut sq).and(&s.padded).and(&s.mask).and(&mean).for_each(|q, &v, &m, &mu| {
            if m {
                *q += (v - mu) * (v - mu);
            }
        });
    }
    let std = ndarray::Zip::from(&sq)
        .and(&count)
        .map_collect(|&q, &c| if c > 0.0 { (q / c).sqrt().max(epsilon) } else { 1.0 });
    Ok(StatsScaler { mean, std, fit_count: baseline.len(), epsilon })
}

/// `(x − mean)/std` on unmasked entries. Not idempotent.
pub fn apply_scaler(scaler: &StatsScaler, seq: &LayerStatSequence) -> Result<LayerStatSequence> {
    scaler.check_shape(seq)?;
    let mut out = seq.clone();
    ndarray::Zip::from(&mut out.padded).and(&seq.mask).and(&scaler.mean).and(&scaler.std).for_each(
        |v, &m, &mu, &sd| {
            *v = if m { (*v - mu) / sd } else { 0.0 };
        },
    );
    out.scaled = true;
    Ok(out)
}

pub fn inverse_scaler(scaler: &StatsScaler, seq: &LayerStatSequence) -> Result<LayerStatSequence> {
    scaler.check_shape(seq)?;
    let mut out = seq.clone();
    ndarray::Zip::from(&mut out.padded).and(&seq.mask).and(&scaler.mean).and(&scaler.std).for_each(
        |v, &m, &mu, &sd| {
            *v = if m { *v * sd + mu } else { 0.0 };
        },
    );
    out.scaled = false;
    Ok(out)
}

impl StatsScaler {
    fn check_shape(&self, seq: &LayerStatSequence) -> Result<()> {
        if seq.padded.dim() != self.mean.dim() {
            return Err(Error::Shape(format!(
                "sequence shape {:?} does not match scaler {:?}",
                seq.padded.dim(),
                self.mean.dim()
            )));
        }
        Ok(())
    }

    /// Writes the scaler and returns its content id.
    pub fn save(&self, path: &Path) -> Result<String> {
        let file = ScalerFile {
            format: SCALER_FORMAT.into(),
            version: STATS_VERSION,
            fit_count: self.fit_count,
            epsilon: self.epsilon,
            mean: Tensor::from_array("mean", &self.mean),
            std: Tensor::from_array("std", &self.std),
        };
        artifact::write_json(path, &file)
    }

    pub fn load(path: &Path) -> Result<(Self, String)> {
        let (file, id): (ScalerFile, String) = artifact::read_json(path, "scaler")?;
        if file.format != SCALER_FORMAT || file.version != STATS_VERSION {
            return Err(Error::Version(format!("scaler {} v{}", file.format, file.version)));
        }
        let scaler = StatsScaler {
            mean: file.mean.to_array()?,
            std: file.std.to_array()?,
            fit_count: file.fit_count,
            epsilon: file.epsilon,
        };
        Ok((scaler, id))
    }
}

/// Provenance of a statistics dataset.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StatsManifest {
    pub format: String,
    pub version: u32,
    pub source_checkpoint_id: String,
    pub layers: Vec<LayerSpec>,
    pub d_stat: usize,
    /// Set once the sequences have been standardized.
    pub scaler_id: Option<String>,
    /// Partition name, e.g. `train`, `validation`, `test`, `novel`.
    pub split: String,
    pub creation_seed: u64,
    pub count: usize,
    /// Content id of the binary block.
    pub data_id: String,
}

impl StatsManifest {
    pub fn new(source_checkpoint_id: &str, layers: Vec<LayerSpec>, split: &str, creation_seed: u64) -> Self {
        StatsManifest {
            format: STATS_FORMAT.into(),
            version: STATS_VERSION,
            source_checkpoint_id: source_checkpoint_id.into(),
            d_stat: stat_width(&layers),
            layers,
            scaler_id: None,
            split: split.into(),
            creation_seed,
            count: 0,
            data_id: String::new(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct StatsDataset {
    pub sequences: Vec<LayerStatSequence>,
    pub manifest: StatsManifest,
}

impl StatsDataset {
    pub fn new(sequences: Vec<LayerStatSequence>, mut manifest: StatsManifest) -> Result<Self> {
        manifest.count = sequences.len();
        let ds = StatsDataset { sequences, manifest };
        ds.check_shapes()?;
        Ok(ds)
    }

    fn check_shapes(&self) -> Result<()> {
        let expected = (self.manifest.layers.len(), self.manifest.d_stat);
        for s in &self.sequences {
            if s.padded.dim() != expected || s.mask.dim() != expected {
                return Err(Error::Shape(format!(
                    "sequence {} has shape {:?}, manifest declares {expected:?}",
                    s.sample_id,
                    s.padded.dim()
                )));
            }
        }
        Ok(())
    }

    /// Standardizes every sequence once; a dataset that is already scaled is rejected.
    pub fn scaled(&self, scaler: &StatsScaler, scaler_id: &str) -> Result<Self> {
        if let Some(existing) = &self.manifest.scaler_id {
            return Err(Error::InvalidInput(format!("dataset already scaled with scaler {existing}")));
        }
        let sequences = self.sequences.iter().map(|s| apply_scaler(scaler, s)).collect::<Result<Vec<_>>>()?;
        let mut manifest = self.manifest.clone();
        manifest.scaler_id = Some(scaler_id.to_string());
        Ok(StatsDataset { sequences, manifest })
    }

    /// Errors unless the dataset came from `checkpoint_id` (and `scaler_id`, when given).
    pub fn check_provenance(&self, checkpoint_id: &str, scaler_id: Option<&str>) -> Result<()> {
        if self.manifest.source_checkpoint_id != checkpoint_id {
            return Err(Error::ArtifactMismatch(format!(
                "statistics `{}` come from checkpoint {}, expected {checkpoint_id}",
                self.manifest.split, self.manifest.source_checkpoint_id
            )));
        }
        if let Some(expected) = scaler_id {
            if self.manifest.scaler_id.as_deref() != Some(expected) {
                return Err(Error::ArtifactMismatch(format!(
                    "statistics `{}` scaled with {:?}, expected {expected}",
                    self.manifest.split, self.manifest.scaler_id
                )));
            }
        }
        Ok(())
    }

    pub fn contains_novel(&self) -> bool {
        self.sequences.iter().any(LayerStatSequence::is_novel)
    }
}

fn encode_sequences(sequences: &[LayerStatSequence], rows: usize, cols: usize) -> Vec<u8> {
    let mut buf = Vec::with_capacity(24 + sequences.len() * (10 + rows * cols * 9));
    buf.extend_from_slice(MAGIC);
    buf.extend_from_slice(&(sequences.len() as u64).to_le_bytes());
    buf.extend_from_slice(&(rows as u32).to_le_bytes());
    buf.extend_from_slice(&(cols as u32).to_le_bytes());
    for s in sequences {
        buf.extend_from_slice(&s.sample_id.to_le_bytes());
        buf.push(match s.origin {
            None => 0,
            Some(Origin::Baseline) => 1,
            Some(Origin::Novel) => 2,
        });
        buf.push(s.scaled as u8);
        for v in s.padded.iter() {
            buf.extend_from_slice(&v.to_le_bytes());
        }
        buf.extend(s.mask.iter().map(|&m| m as u8));
    }
    buf
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos + n;
        if end > self.buf.len() {
            return Err(Error::Version("statistics block is truncated".into()));
        }
        let out = &self.buf[self.pos..end];
        self.pos = end;
        Ok(out)
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }
}

fn decode_sequences(buf: &[u8]) -> Result<(Vec<LayerStatSequence>, usize, usize)> {
    let mut r = Reader { buf, pos: 0 };
    if r.take(8)? != MAGIC {
        return Err(Error::Version("statistics block has an unknown header".into()));
    }
    let n = r.u64()? as usize;
    let rows = r.u32()? as usize;
    let cols = r.u32()? as usize;
    let mut out = Vec::with_capacity(n);
    for _ in 0..n {
        let sample_id = r.u64()?;
        let origin = match r.take(1)?[0] {
            0 => None,
            1 => Some(Origin::Baseline),
            2 => Some(Origin::Novel),
            o => return Err(Error::Version(format!("unknown origin tag {o}"))),
        };
        let scaled = r.take(1)?[0] != 0;
        let values: Vec<f64> = r
            .take(rows * cols * 8)?
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
            .collect();
        let mask: Vec<bool> = r.take(rows * cols)?.iter().map(|&b| b != 0).collect();
        out.push(LayerStatSequence {
            sample_id,
            origin,
            padded: Array2::from_shape_vec((rows, cols), values).expect("sized"),
            mask: Array2::from_shape_vec((rows, cols), mask).expect("sized"),
            scaled,
        });
    }
    if r.pos != buf.len() {
        return Err(Error::Version("trailing bytes in statistics block".into()));
    }
    Ok((out, rows, cols))
}

/// Writes `manifest.json` and `data.bin` under `dir`.
pub fn persist_stats(dataset: &StatsDataset, dir: &Path) -> Result<()> {
    let m = &dataset.manifest;
    let data = encode_sequences(&dataset.sequences, m.layers.len(), m.d_stat);
    let mut manifest = m.clone();
    manifest.count = dataset.sequences.len();
    manifest.data_id = artifact::content_id(&data);
    artifact::write_bytes(&dir.join("data.bin"), &data)?;
    artifact::write_json(&dir.join("manifest.json"), &manifest)?;
    Ok(())
}

pub fn load_stats(dir: &Path) -> Result<StatsDataset> {
    let (manifest, _): (StatsManifest, _) = artifact::read_json(&dir.join("manifest.json"), "statistics manifest")?;
    if manifest.format != STATS_FORMAT || manifest.version != STATS_VERSION {
        return Err(Error::Version(format!("statistics {} v{}", manifest.format, manifest.version)));
    }
    let data_path = dir.join("data.bin");
    let data = std::fs::read(&data_path).map_err(|e| match e.kind() {
        std::io::ErrorKind::NotFound => Error::MissingArtifact { name: "statistics data", path: data_path.clone() },
        _ => Error::io(&data_path, e),
    })?;
    if artifact::content_id(&data) != manifest.data_id {
        return Err(Error::Version(format!("statistics block {} is corrupt (checksum mismatch)", data_path.display())));
    }
    let (sequences, rows, cols) = decode_sequences(&data)?;
    if rows != manifest.layers.len() || cols != manifest.d_stat || manifest.d_stat != stat_width(&manifest.layers) {
        return Err(Error::Version(format!(
            "statistics block is {rows}×{cols} but manifest declares {} layers of width {}",
            manifest.layers.len(),
            manifest.d_stat
        )));
    }
    if sequences.len() != manifest.count {
        return Err(Error::Version(format!("manifest counts {} sequences, block has {}", manifest.count, sequences.len())));
    }
    Ok(StatsDataset { sequences, manifest })
}
