use crate::crypto;
use crate::ids::AppId;
use crate::manifest::{Manifest, ManifestParseError};
use crate::runtime::{Flow, FlowError};
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::path::Path;

/// Key of the SDK build stamp. Marks a package as built by the SDK toolchain; not a
/// publisher signature.
const SDK_STAMP_KEY: &[u8] = b"databox-sdk/1";

/// A flow document, its manifest and static assets, addressed by content hash.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Package {
    pub flow: Flow,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub manifest: Option<Manifest>,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub assets: BTreeMap<String, String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sdk_stamp: Option<String>,
}

#[derive(Debug, thiserror::Error)]
pub enum PackageError {
    #[error("{path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error(transparent)]
    Flow(#[from] FlowError),
    #[error(transparent)]
    Manifest(#[from] ManifestParseError),
}

#[derive(Serialize)]
struct Content<'a> {
    flow: &'a Flow,
    manifest: &'a Option<Manifest>,
    assets: &'a BTreeMap<String, String>,
}

impl Package {
    pub fn new(flow: Flow, manifest: Option<Manifest>) -> Self {
        Self {
            flow,
            manifest,
            assets: BTreeMap::new(),
            sdk_stamp: None,
        }
    }

    pub fn app_id(&self) -> &AppId {
        &self.flow.app_id
    }

    fn content_bytes(&self) -> Vec<u8> {
        serde_json::to_vec(&Content {
            flow: &self.flow,
            manifest: &self.manifest,
            assets: &self.assets,
        })
        .expect("package serializes")
    }

    /// Content hash over flow, manifest and assets; the stamp is excluded.
    pub fn hash(&self) -> String {
        crypto::sha256_hex(&self.content_bytes())
    }

    fn expected_stamp(&self) -> String {
        hex::encode(crypto::hmac(SDK_STAMP_KEY, &self.content_bytes()))
    }

    /// Stamps the package as SDK-built.
    pub fn stamped(mut self) -> Self {
        self.sdk_stamp = Some(self.expected_stamp());
        self
    }

    pub fn is_verified(&self) -> bool {
        self.sdk_stamp
            .as_deref()
            .is_some_and(|s| s == self.expected_stamp())
    }

    /// Reads `flow.toml`, optional `manifest.toml`, optional `sdk-stamp`, and text files under `assets/`.
    pub fn load_dir(dir: &Path) -> Result<Self, PackageError> {
        let read = |name: &str| {
            let p = dir.join(name);
            std::fs::read_to_string(&p).map_err(|source| PackageError::Io {
                path: p.display().to_string(),
                source,
            })
        };
        let flow = Flow::parse(&read("flow.toml")?)?;
        let manifest = if dir.join("manifest.toml").exists() {
            Some(Manifest::parse(&read("manifest.toml")?)?)
        } else {
            None
        };
        let sdk_stamp = if dir.join("sdk-stamp").exists() {
            Some(read("sdk-stamp")?.trim().to_string())
        } else {
            None
        };
        let mut assets = BTreeMap::new();
        let assets_dir = dir.join("assets");
        if assets_dir.is_dir() {
            let io = |source| PackageError::Io {
                path: assets_dir.display().to_string(),
                source,
            };
            for entry in std::fs::read_dir(&assets_dir).map_err(io)? {
                let entry = entry.map_err(io)?;
                if entry.path().is_file() {
                    let name = entry.file_name().to_string_lossy().into_owned();
                    assets.insert(name.clone(), read(&format!("assets/{name}"))?);
                }
            }
        }
        Ok(Self {
            flow,
            manifest,
            assets,
            sdk_stamp,
        })
    }

    pub fn write_dir(&self, dir: &Path) -> std::io::Result<()> {
        std::fs::create_dir_all(dir)?;
        std::fs::write(dir.join("flow.toml"), self.flow.to_toml())?;
        if let Some(m) = &self.manifest {
            std::fs::write(dir.join("manifest.toml"), m.to_toml())?;
        }
        if let Some(s) = &self.sdk_stamp {
            std::fs::write(dir.join("sdk-stamp"), format!("{s}\n"))?;
        }
        if !self.assets.is_empty() {
            std::fs::create_dir_all(dir.join("assets"))?;
            for (name, text) in &self.assets {
                std::fs::write(dir.join("assets").join(name), text)?;
            }
        }
        Ok(())
    }
}
