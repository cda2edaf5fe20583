//! Dataset download with checksum verification.
//!
//! Nothing is hardcoded: the caller names a base URL and a manifest of
//! `<sha256> <relative path>` lines (the format `sha256sum` prints). Each file
//! is fetched from `<base>/<relative path>`, verified, then moved into place.
//! Files already present with a matching digest are left alone. `file://`
//! base URLs are read straight from disk.

use std::io::Read;
use std::path::{Component, Path, PathBuf};

use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

pub const CACHE_ENV: &str = "TRD_CACHE_DIR";

/// `$TRD_CACHE_DIR`, else `$HOME/.cache/trd`, else `./.trd-cache`.
pub fn cache_dir() -> PathBuf {
    if let Some(dir) = std::env::var_os(CACHE_ENV) {
        return PathBuf::from(dir);
    }
    match std::env::var_os("HOME") {
        Some(home) => PathBuf::from(home).join(".cache").join("trd"),
        None => PathBuf::from(".trd-cache"),
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ManifestEntry {
    pub sha256: String,
    pub path: String,
}

pub fn parse_manifest(text: &str) -> Result<Vec<ManifestEntry>> {
    let mut entries = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let bad = |msg: &str| Error::invalid(format!("manifest line {}: {msg}", lineno + 1));
        let (digest, path) = line.split_once(char::is_whitespace).ok_or_else(|| bad("expected `<sha256> <path>`"))?;
        let path = path.trim().trim_start_matches('*');
        if digest.len() != 64 || !digest.bytes().all(|b| b.is_ascii_hexdigit()) {
            return Err(bad("digest must be 64 hex characters"));
        }
        let rel = Path::new(path);
        if path.is_empty() || !rel.components().all(|c| matches!(c, Component::Normal(_))) {
            return Err(bad("path must be relative without `..`"));
        }
        entries.push(ManifestEntry {
            sha256: digest.to_ascii_lowercase(),
            path: path.to_string(),
        });
    }
    Ok(entries)
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// Fetch raw bytes from an `http(s)://` or `file://` URL, or a plain path.
pub fn download(url: &str) -> Result<Vec<u8>> {
    let fail = |message: String| Error::Download {
        url: url.to_string(),
        message,
    };
    if let Some(path) = url.strip_prefix("file://") {
        return std::fs::read(path).map_err(|e| fail(e.to_string()));
    }
    if !(url.starts_with("http://") || url.starts_with("https://")) {
        return std::fs::read(url).map_err(|e| fail(e.to_string()));
    }
    let response = ureq::get(url).call().map_err(|e| fail(e.to_string()))?;
    let mut bytes = Vec::new();
    response
        .into_body()
        .into_reader()
        .read_to_end(&mut bytes)
        .map_err(|e| fail(e.to_string()))?;
    Ok(bytes)
}

#[derive(Debug, Default, PartialEq, Eq)]
pub struct FetchReport {
    pub downloaded: Vec<String>,
    pub already_present: Vec<String>,
}

pub fn fetch(base_url: &str, entries: &[ManifestEntry], dest: &Path) -> Result<FetchReport> {
    std::fs::create_dir_all(dest)?;
    let base = base_url.trim_end_matches('/');
    let mut report = FetchReport::default();
    for entry in entries {
        let target = dest.join(&entry.path);
        if let Ok(existing) = std::fs::read(&target) {
            if sha256_hex(&existing) == entry.sha256 {
                report.already_present.push(entry.path.clone());
                continue;
            }
        }
        let bytes = download(&format!("{base}/{}", entry.path))?;
        let actual = sha256_hex(&bytes);
        if actual != entry.sha256 {
            return Err(Error::Checksum {
                path: entry.path.clone(),
                expected: entry.sha256.clone(),
                actual,
            });
        }
        if let Some(parent) = target.parent() {
            std::fs::create_dir_all(parent)?;
        }
        let partial = target.with_extension("partial");
        std::fs::write(&partial, &bytes)?;
        std::fs::rename(&partial, &target)?;
        report.downloaded.push(entry.path.clone());
    }
    Ok(report)
}
