//! Binary tensor files, checkpoint directories, and dataset persistence.
//!
//! TensorFile layout (all little-endian):
//!
//! ```text
//! magic "TNSR" | version 0x01 | dtype (0x00 f32, 0x01 i32) | rank u8
//! rank x u32 dims | payload, row-major, 4 bytes per element
//! ```

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::datagen::{Dataset, DatasetItem, DomainConfig, SplitTag};
use crate::error::{Error, Result};
use crate::maps::LabelMap;
use crate::optim::ParameterSet;
use crate::tensor::Tensor;

pub const TENSOR_MAGIC: [u8; 4] = *b"TNSR";
pub const TENSOR_VERSION: u8 = 0x01;
pub const DTYPE_F32: u8 = 0x00;
pub const DTYPE_I32: u8 = 0x01;

/// Contents of a tensor file: float data or integer (label) data.
#[derive(Debug, Clone, PartialEq)]
pub enum TensorPayload {
    F32(Tensor),
    I32 { shape: Vec<usize>, data: Vec<i32> },
}

fn encode(dtype: u8, shape: &[usize], payload_le: impl Iterator<Item = [u8; 4]>) -> Result<Vec<u8>> {
    if shape.len() > u8::MAX as usize {
        return Err(Error::Dimension(format!("rank {} exceeds 255", shape.len())));
    }
    let mut bytes = Vec::with_capacity(7 + 4 * shape.len());
    bytes.extend_from_slice(&TENSOR_MAGIC);
    bytes.push(TENSOR_VERSION);
    bytes.push(dtype);
    bytes.push(shape.len() as u8);
    for &d in shape {
        let d = u32::try_from(d)
            .map_err(|_| Error::Dimension(format!("dimension {d} exceeds u32")))?;
        bytes.extend_from_slice(&d.to_le_bytes());
    }
    for b in payload_le {
        bytes.extend_from_slice(&b);
    }
    Ok(bytes)
}

pub fn write_tensor(path: &Path, t: &Tensor) -> Result<()> {
    let bytes = encode(DTYPE_F32, t.shape(), t.data().iter().map(|v| v.to_le_bytes()))?;
    fs::write(path, bytes)?;
    Ok(())
}

pub fn write_int_tensor(path: &Path, shape: &[usize], data: &[i32]) -> Result<()> {
    let numel: usize = shape.iter().product();
    if numel != data.len() {
        return Err(Error::Dimension(format!(
            "shape {shape:?} expects {numel} values, got {}",
            data.len()
        )));
    }
    let bytes = encode(DTYPE_I32, shape, data.iter().map(|v| v.to_le_bytes()))?;
    fs::write(path, bytes)?;
    Ok(())
}

/// Integer H x W map for labels and pseudo labels.
pub fn write_label_map(path: &Path, map: &LabelMap) -> Result<()> {
    let data: Vec<i32> = map.classes().iter().map(|&c| c as i32).collect();
    write_int_tensor(path, &[map.height(), map.width()], &data)
}

pub fn read_tensor_file(path: &Path) -> Result<TensorPayload> {
    let bytes = fs::read(path)?;
    let fail = |offset: usize, reason: String| Error::Format {
        path: path.to_path_buf(),
        offset: offset as u64,
        reason,
    };
    let take = |offset: usize, n: usize| -> Result<&[u8]> {
        bytes
            .get(offset..offset + n)
            .ok_or_else(|| fail(bytes.len(), format!("truncated: wanted {n} bytes at {offset}")))
    };

    let magic = take(0, 4)?;
    if magic != TENSOR_MAGIC {
        return Err(fail(0, format!("bad magic {magic:02x?}")));
    }
    let version = take(4, 1)?[0];
    if version != TENSOR_VERSION {
        return Err(fail(4, format!("unsupported version {version:#04x}")));
    }
    let dtype = take(5, 1)?[0];
    if dtype != DTYPE_F32 && dtype != DTYPE_I32 {
        return Err(fail(5, format!("unknown dtype {dtype:#04x}")));
    }
    let rank = take(6, 1)?[0] as usize;
    let mut shape = Vec::with_capacity(rank);
    for i in 0..rank {
        let off = 7 + 4 * i;
        let d = u32::from_le_bytes(take(off, 4)?.try_into().expect("slice of 4"));
        if d == 0 {
            return Err(fail(off, "zero-sized dimension".into()));
        }
        shape.push(d as usize);
    }
    let payload_off = 7 + 4 * rank;
    let numel: usize = shape.iter().product();
    let payload = take(payload_off, numel * 4)?;
    if bytes.len() != payload_off + numel * 4 {
        return Err(fail(
            payload_off + numel * 4,
            format!("{} trailing bytes", bytes.len() - payload_off - numel * 4),
        ));
    }
    match dtype {
        DTYPE_F32 => {
            let data: Vec<f32> = payload
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes(c.try_into().expect("chunk of 4")))
                .collect();
            let t = Tensor::new(shape, data).map_err(|e| fail(payload_off, e.to_string()))?;
            Ok(TensorPayload::F32(t))
        }
        _ => {
            let data: Vec<i32> = payload
                .chunks_exact(4)
                .map(|c| i32::from_le_bytes(c.try_into().expect("chunk of 4")))
                .collect();
            Ok(TensorPayload::I32 { shape, data })
        }
    }
}

pub fn read_f32_tensor(path: &Path) -> Result<Tensor> {
    match read_tensor_file(path)? {
        TensorPayload::F32(t) => Ok(t),
        TensorPayload::I32 { .. } => Err(Error::Format {
            path: path.to_path_buf(),
            offset: 5,
            reason: "expected f32 dtype, found i32".into(),
        }),
    }
}

pub fn read_label_map(path: &Path, class_count: usize) -> Result<LabelMap> {
    match read_tensor_file(path)? {
        TensorPayload::I32 { shape, data } => {
            let [h, w] = shape[..] else {
                return Err(Error::Format {
                    path: path.to_path_buf(),
                    offset: 6,
                    reason: format!("label map expects rank 2, got {shape:?}"),
                });
            };
            let mut classes = Vec::with_capacity(data.len());
            for v in data {
                if v < 0 {
                    return Err(Error::Input(format!("negative label {v} in {path:?}")));
                }
                classes.push(v as u32);
            }
            LabelMap::new(class_count, h, w, classes)
        }
        TensorPayload::F32(_) => Err(Error::Format {
            path: path.to_path_buf(),
            offset: 5,
            reason: "expected i32 dtype, found f32".into(),
        }),
    }
}

// --- checkpoints ---

#[derive(Debug, Serialize, Deserialize)]
struct CheckpointManifest {
    seed: u64,
    config: serde_json::Value,
    params: Vec<ParamFileRef>,
}

#[derive(Debug, Serialize, Deserialize)]
struct ParamFileRef {
    name: String,
    file: String,
}

/// Writes one tensor file per parameter plus `manifest.json` recording the
/// parameter order, the config, and the seed.
pub fn save_checkpoint(
    dir: &Path,
    params: &ParameterSet,
    config: &serde_json::Value,
    seed: u64,
) -> Result<()> {
    fs::create_dir_all(dir)?;
    let mut refs = Vec::new();
    for name in params.names() {
        let file = format!("{name}.tnsr");
        write_tensor(&dir.join(&file), params.value(name)?)?;
        refs.push(ParamFileRef {
            name: name.to_string(),
            file,
        });
    }
    let manifest = CheckpointManifest {
        seed,
        config: config.clone(),
        params: refs,
    };
    fs::write(
        dir.join("manifest.json"),
        serde_json::to_string_pretty(&manifest)? + "\n",
    )?;
    Ok(())
}

pub struct Checkpoint {
    pub params: ParameterSet,
    pub config: serde_json::Value,
    pub seed: u64,
}

pub fn load_checkpoint(dir: &Path) -> Result<Checkpoint> {
    let manifest: CheckpointManifest =
        serde_json::from_str(&fs::read_to_string(dir.join("manifest.json"))?)?;
    let mut params = ParameterSet::new();
    for r in &manifest.params {
        params.insert(&r.name, read_f32_tensor(&dir.join(&r.file))?)?;
    }
    Ok(Checkpoint {
        params,
        config: manifest.config,
        seed: manifest.seed,
    })
}

// --- datasets ---

#[derive(Debug, Serialize, Deserialize)]
struct DatasetManifest {
    split: SplitTag,
    seed: u64,
    config: DomainConfig,
    items: Vec<ItemMeta>,
}

#[derive(Debug, Serialize, Deserialize)]
struct ItemMeta {
    id: String,
    has_label: bool,
    #[serde(skip_serializing_if = "Option::is_none")]
    difficulty: Option<f64>,
}

/// Persists a dataset as `images/<id>.tnsr`, `labels/<id>.tnsr` (labeled
/// items only) and `manifest.json`.
pub fn write_dataset(dir: &Path, dataset: &Dataset, config: &DomainConfig) -> Result<()> {
    fs::create_dir_all(dir.join("images"))?;
    let any_label = dataset.items().iter().any(|it| it.label().is_some());
    if any_label {
        fs::create_dir_all(dir.join("labels"))?;
    }
    let mut items = Vec::with_capacity(dataset.len());
    for it in dataset.items() {
        write_tensor(&dir.join("images").join(format!("{}.tnsr", it.id)), &it.image)?;
        if let Some(label) = it.label() {
            write_label_map(&dir.join("labels").join(format!("{}.tnsr", it.id)), label)?;
        }
        items.push(ItemMeta {
            id: it.id.clone(),
            has_label: it.label().is_some(),
            difficulty: it.difficulty(),
        });
    }
    let manifest = DatasetManifest {
        split: dataset.split,
        seed: config.seed,
        config: config.clone(),
        items,
    };
    fs::write(
        dir.join("manifest.json"),
        serde_json::to_string_pretty(&manifest)? + "\n",
    )?;
    Ok(())
}

pub fn read_dataset(dir: &Path) -> Result<(Dataset, DomainConfig)> {
    let manifest: DatasetManifest =
        serde_json::from_str(&fs::read_to_string(dir.join("manifest.json"))?)?;
    let mut items = Vec::with_capacity(manifest.items.len());
    for meta in &manifest.items {
        let image = read_f32_tensor(&dir.join("images").join(format!("{}.tnsr", meta.id)))?;
        let label = if meta.has_label {
            Some(read_label_map(
                &dir.join("labels").join(format!("{}.tnsr", meta.id)),
                manifest.config.class_count,
            )?)
        } else {
            None
        };
        items.push(DatasetItem::new(
            meta.id.clone(),
            image,
            label,
            meta.difficulty,
        ));
    }
    Ok((Dataset::new(manifest.split, items)?, manifest.config))
}

/// Reads every `<id>.tnsr` f32 tensor in a directory, sorted by id.
pub fn read_tensor_dir(dir: &Path) -> Result<Vec<(String, Tensor)>> {
    let mut out = Vec::new();
    for entry in fs::read_dir(dir)? {
        let path: PathBuf = entry?.path();
        if path.extension().and_then(|e| e.to_str()) == Some("tnsr") {
            let id = path
                .file_stem()
                .and_then(|s| s.to_str())
                .ok_or_else(|| Error::Input(format!("unreadable file name {path:?}")))?
                .to_string();
            out.push((id, read_f32_tensor(&path)?));
        }
    }
    if out.is_empty() {
        return Err(Error::Input(format!("no .tnsr files in {dir:?}")));
    }
    out.sort_by(|a, b| a.0.cmp(&b.0));
    Ok(out)
}
