//! Dataset acquisition and batching: checksum-verified downloads into a
//! local cache, archive parsing into fixed 28×28 image splits, and seeded
//! epoch shuffling.

use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use qvt_core::rng::Pcg32;

use crate::error::{ModelError, Result};
use crate::npz::read_npz;

pub const IMAGE_SIDE: usize = 28;

/// Environment variable overriding the download cache directory.
pub const DATA_DIR_ENV: &str = "QVT_DATA_DIR";
/// Environment variable rewriting the canonical download host, for
/// mirror-only networks. Replaces the `https://huggingface.co` prefix.
pub const MIRROR_ENV: &str = "QVT_MIRROR_BASE";

const FETCH_ATTEMPTS: u32 = 3;
const SHUFFLE_STREAM_BASE: u64 = 1_000;

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub id: String,
    pub url: String,
    pub sha256: String,
    pub num_classes: usize,
    pub channels: usize,
}

/// Manifests shipped with the build.
pub fn builtin_manifests() -> Vec<DatasetManifest> {
    serde_json::from_str(include_str!("../datasets.json")).expect("bundled manifest parses")
}

pub fn manifest_for(id: &str) -> Result<DatasetManifest> {
    builtin_manifests()
        .into_iter()
        .find(|m| m.id == id)
        .ok_or_else(|| ModelError::Config(format!("unknown dataset {id:?}")))
}

/// Cache directory: $QVT_DATA_DIR, falling back to ~/.cache/qvt-data.
pub fn cache_dir() -> PathBuf {
    if let Ok(dir) = std::env::var(DATA_DIR_ENV) {
        return PathBuf::from(dir);
    }
    let home = std::env::var("HOME").unwrap_or_else(|_| ".".into());
    Path::new(&home).join(".cache").join("qvt-data")
}

fn sha256_hex(path: &Path) -> Result<String> {
    let bytes = std::fs::read(path)?;
    let mut hasher = Sha256::new();
    hasher.update(&bytes);
    Ok(format!("{:x}", hasher.finalize()))
}

fn effective_url(url: &str) -> String {
    const CANONICAL: &str = "https://huggingface.co";
    match std::env::var(MIRROR_ENV) {
        Ok(base) if url.starts_with(CANONICAL) => {
            format!("{}{}", base.trim_end_matches('/'), &url[CANONICAL.len()..])
        }
        _ => url.to_string(),
    }
}

/// Ensure the dataset archive is present and intact in `dir`; returns its
/// path. A cached file with the right checksum short-circuits the network
/// entirely; a cached file with the wrong checksum is an error (never
/// silently re-downloaded). Downloads go to a temporary file and are
/// renamed into place only after the checksum verifies.
pub fn fetch(manifest: &DatasetManifest, dir: &Path) -> Result<PathBuf> {
    std::fs::create_dir_all(dir)?;
    let path = dir.join(format!("{}.npz", manifest.id));
    if path.exists() {
        let actual = sha256_hex(&path)?;
        if actual == manifest.sha256 {
            return Ok(path);
        }
        return Err(ModelError::Integrity {
            path: path.display().to_string(),
            expected: manifest.sha256.clone(),
            actual,
        });
    }
    let url = effective_url(&manifest.url);
    let mut last_error = String::new();
    for _ in 0..FETCH_ATTEMPTS {
        match try_download(&url, dir, &path, &manifest.sha256) {
            Ok(()) => return Ok(path),
            Err(ModelError::Integrity { .. }) => {
                return Err(ModelError::Fetch {
                    url,
                    attempts: 1,
                    message: "downloaded file failed checksum verification".into(),
                })
            }
            Err(e) => last_error = e.to_string(),
        }
    }
    Err(ModelError::Fetch { url, attempts: FETCH_ATTEMPTS, message: last_error })
}

fn try_download(url: &str, dir: &Path, path: &Path, sha256: &str) -> Result<()> {
    let client = reqwest::blocking::Client::builder()
        .connect_timeout(std::time::Duration::from_secs(10))
        .timeout(std::time::Duration::from_secs(300))
        .build()
        .map_err(|e| ModelError::Fetch { url: url.into(), attempts: 1, message: e.to_string() })?;
    let response = client
        .get(url)
        .send()
        .and_then(|r| r.error_for_status())
        .map_err(|e| ModelError::Fetch { url: url.into(), attempts: 1, message: e.to_string() })?;
    let bytes = response
        .bytes()
        .map_err(|e| ModelError::Fetch { url: url.into(), attempts: 1, message: e.to_string() })?;
    let mut tmp = tempfile::NamedTempFile::new_in(dir)?;
    tmp.write_all(&bytes)?;
    tmp.flush()?;
    let actual = sha256_hex(tmp.path())?;
    if actual != sha256 {
        return Err(ModelError::Integrity {
            path: tmp.path().display().to_string(),
            expected: sha256.into(),
            actual,
        });
    }
    tmp.persist(path).map_err(|e| ModelError::Io(e.error))?;
    Ok(())
}

/// One split: images as flat u8 pixels (per image: row-major height × width
/// × channels) plus integer labels.
#[derive(Clone, Debug)]
pub struct Split {
    pub n: usize,
    pub pixels_per_image: usize,
    pub images: Vec<u8>,
    pub labels: Vec<usize>,
}

impl Split {
    /// Image `idx` scaled to [0, 1].
    pub fn image_f64(&self, idx: usize) -> Vec<f64> {
        let start = idx * self.pixels_per_image;
        self.images[start..start + self.pixels_per_image]
            .iter()
            .map(|&p| p as f64 / 255.0)
            .collect()
    }
}

#[derive(Clone, Debug)]
pub struct Dataset {
    pub id: String,
    pub num_classes: usize,
    pub channels: usize,
    pub train: Split,
    pub val: Split,
    pub test: Split,
}

fn build_split(
    arrays: &std::collections::BTreeMap<String, crate::npz::NpyArray>,
    prefix: &str,
    channels: usize,
    num_classes: usize,
) -> Result<Split> {
    let images = arrays
        .get(&format!("{prefix}_images"))
        .ok_or_else(|| ModelError::Schema(format!("missing member {prefix}_images")))?;
    let labels = arrays
        .get(&format!("{prefix}_labels"))
        .ok_or_else(|| ModelError::Schema(format!("missing member {prefix}_labels")))?;
    let shape = &images.shape;
    let ok_shape = match (shape.len(), channels) {
        (3, 1) => shape[1] == IMAGE_SIDE && shape[2] == IMAGE_SIDE,
        (4, c) => shape[1] == IMAGE_SIDE && shape[2] == IMAGE_SIDE && shape[3] == c,
        _ => false,
    };
    if !ok_shape {
        return Err(ModelError::Schema(format!(
            "{prefix}_images has shape {shape:?}, expected (n, {IMAGE_SIDE}, {IMAGE_SIDE}[, {channels}])"
        )));
    }
    let n = shape[0];
    let label_values = labels.as_i64()?;
    let squeezed_ok = labels.shape == vec![n] || labels.shape == vec![n, 1];
    if !squeezed_ok {
        return Err(ModelError::Schema(format!(
            "{prefix}_labels has shape {:?}, expected ({n},) or ({n}, 1)",
            labels.shape
        )));
    }
    let mut out_labels = Vec::with_capacity(n);
    for &v in &label_values {
        if v < 0 || v as usize >= num_classes {
            return Err(ModelError::Schema(format!(
                "label {v} outside the {num_classes}-class range"
            )));
        }
        out_labels.push(v as usize);
    }
    Ok(Split {
        n,
        pixels_per_image: IMAGE_SIDE * IMAGE_SIDE * channels,
        images: images.as_u8()?.to_vec(),
        labels: out_labels,
    })
}

/// Fetch (if needed) and parse a dataset into its three splits.
pub fn load_dataset(manifest: &DatasetManifest, dir: &Path) -> Result<Dataset> {
    let path = fetch(manifest, dir)?;
    let arrays = read_npz(&path)?;
    Ok(Dataset {
        id: manifest.id.clone(),
        num_classes: manifest.num_classes,
        channels: manifest.channels,
        train: build_split(&arrays, "train", manifest.channels, manifest.num_classes)?,
        val: build_split(&arrays, "val", manifest.channels, manifest.num_classes)?,
        test: build_split(&arrays, "test", manifest.channels, manifest.num_classes)?,
    })
}

/// Index batches for one epoch: a seeded permutation of 0..n chopped into
/// `batch_size` chunks, short final chunk included. The permutation is keyed
/// by (seed, epoch) alone, so any epoch can be replayed independently.
pub fn minibatches(n: usize, batch_size: usize, seed: u64, epoch: usize) -> Vec<Vec<usize>> {
    let mut order: Vec<usize> = (0..n).collect();
    let mut rng = Pcg32::new(seed, SHUFFLE_STREAM_BASE + epoch as u64);
    rng.shuffle(&mut order);
    order.chunks(batch_size.max(1)).map(|c| c.to_vec()).collect()
}
