//! Dataset downloads with checksum pinning.
//!
//! Each dataset directory carries a `manifest.json` recording the sha256 of
//! every fetched file. The first fetch records the digest (trust on first
//! use); later fetches — and pre-existing files — must match it, so a
//! changed upstream file or a corrupted download is a hard error instead of
//! a silent accuracy shift. Downloads land in a `.part` file that is only
//! renamed into place after the digest checks out.

use std::collections::BTreeMap;
use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};
use std::time::Duration;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::datasets::DatasetName;

use super::{io_error, HarnessError};

/// One file a dataset needs.
#[derive(Debug, Clone)]
pub struct FetchItem {
    pub url: String,
    pub filename: String,
}

/// Everything to download for one dataset.
#[derive(Debug, Clone)]
pub struct FetchPlan {
    pub dataset: DatasetName,
    pub items: Vec<FetchItem>,
}

impl FetchPlan {
    /// The published locations of each dataset's files.
    pub fn published(dataset: DatasetName) -> FetchPlan {
        let item = |url: &str, filename: &str| FetchItem {
            url: url.to_string(),
            filename: filename.to_string(),
        };
        let items = match dataset {
            DatasetName::Scienceqa => vec![item(
                "https://raw.githubusercontent.com/lupantech/ScienceQA/main/data/scienceqa/problems.json",
                "problems.json",
            )],
            DatasetName::Com2sense => vec![item(
                "https://raw.githubusercontent.com/PlusLabNLP/Com2Sense/main/data/dev.json",
                "dev.json",
            )],
            DatasetName::Boolq => {
                vec![item("https://storage.googleapis.com/boolq/dev.jsonl", "dev.jsonl")]
            }
        };
        FetchPlan { dataset, items }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
struct ManifestEntry {
    url: String,
    sha256: String,
    bytes: u64,
}

/// `manifest.json`: filename → pinned digest.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
struct Manifest {
    files: BTreeMap<String, ManifestEntry>,
}

impl Manifest {
    fn load(path: &Path) -> Result<Manifest, HarnessError> {
        match fs::read_to_string(path) {
            Ok(raw) => serde_json::from_str(&raw).map_err(|e| HarnessError::Config(format!(
                "corrupt manifest {}: {e}",
                path.display()
            ))),
            Err(e) if e.kind() == io::ErrorKind::NotFound => Ok(Manifest::default()),
            Err(e) => Err(io_error(path)(e)),
        }
    }

    fn save(&self, path: &Path) -> Result<(), HarnessError> {
        let tmp = path.with_extension("json.tmp");
        let mut raw = serde_json::to_string_pretty(self).expect("manifest serializes");
        raw.push('\n');
        fs::write(&tmp, raw).map_err(io_error(&tmp))?;
        fs::rename(&tmp, path).map_err(io_error(path))?;
        Ok(())
    }
}

fn sha256_file(path: &Path) -> Result<(String, u64), HarnessError> {
    let mut file = fs::File::open(path).map_err(io_error(path))?;
    let mut hasher = Sha256::new();
    let bytes = io::copy(&mut file, &mut hasher).map_err(io_error(path))?;
    Ok((hex::encode(hasher.finalize()), bytes))
}

fn download(client: &reqwest::blocking::Client, url: &str, dest: &Path) -> Result<(), HarnessError> {
    let fetch_error =
        |reason: String| HarnessError::Fetch { url: url.to_string(), reason };
    let mut response = client.get(url).send().map_err(|e| fetch_error(e.to_string()))?;
    if !response.status().is_success() {
        return Err(fetch_error(format!("HTTP {}", response.status())));
    }
    let mut file = fs::File::create(dest).map_err(io_error(dest))?;
    io::copy(&mut response, &mut file).map_err(io_error(dest))?;
    file.flush().map_err(io_error(dest))?;
    Ok(())
}

/// Fetch every file in `plan` into `<data_dir>/<dataset>/`, verifying and
/// updating the manifest. Files already present and matching their pin are
/// left untouched without touching the network. Returns the file paths in
/// plan order.
pub fn fetch(plan: &FetchPlan, data_dir: &Path) -> Result<Vec<PathBuf>, HarnessError> {
    let dir = data_dir.join(plan.dataset.to_string());
    fs::create_dir_all(&dir).map_err(io_error(&dir))?;
    let manifest_path = dir.join("manifest.json");
    let mut manifest = Manifest::load(&manifest_path)?;
    let client = reqwest::blocking::Client::builder()
        .timeout(Duration::from_secs(600))
        .build()
        .map_err(|e| HarnessError::Config(format!("cannot build HTTP client: {e}")))?;

    let mut paths = Vec::with_capacity(plan.items.len());
    for item in &plan.items {
        let path = dir.join(&item.filename);
        let pinned = manifest.files.get(&item.filename).map(|e| e.sha256.clone());

        if path.exists() {
            let (sha256, bytes) = sha256_file(&path)?;
            match &pinned {
                Some(pin) if *pin != sha256 => {
                    return Err(HarnessError::Checksum {
                        path,
                        expected: pin.clone(),
                        actual: sha256,
                    });
                }
                Some(_) => log::info!("{} present, checksum ok", path.display()),
                None => {
                    log::info!("{} present, pinning sha256 {sha256}", path.display());
                    manifest.files.insert(
                        item.filename.clone(),
                        ManifestEntry { url: item.url.clone(), sha256, bytes },
                    );
                }
            }
            paths.push(path);
            continue;
        }

        log::info!("fetching {} -> {}", item.url, path.display());
        let partial = dir.join(format!("{}.part", item.filename));
        if let Err(e) = download(&client, &item.url, &partial) {
            let _ = fs::remove_file(&partial);
            return Err(e);
        }
        let (sha256, bytes) = sha256_file(&partial)?;
        if let Some(pin) = &pinned {
            if *pin != sha256 {
                let _ = fs::remove_file(&partial);
                return Err(HarnessError::Checksum {
                    path,
                    expected: pin.clone(),
                    actual: sha256,
                });
            }
        }
        fs::rename(&partial, &path).map_err(io_error(&path))?;
        manifest
            .files
            .insert(item.filename.clone(), ManifestEntry { url: item.url.clone(), sha256, bytes });
        paths.push(path);
    }
    manifest.save(&manifest_path)?;
    Ok(paths)
}

/// [`fetch`] with the published locations.
pub fn fetch_published(dataset: DatasetName, data_dir: &Path) -> Result<Vec<PathBuf>, HarnessError> {
    fetch(&FetchPlan::published(dataset), data_dir)
}
