use crate::crypto::KEY_LEN;
use crate::ids::StoreId;
use std::collections::BTreeMap;
use std::io;
use std::path::PathBuf;

/// Per-store encryption keys, optionally persisted as a JSON map of hex keys.
#[derive(Debug, Default)]
pub struct Keyring {
    keys: BTreeMap<StoreId, [u8; KEY_LEN]>,
    path: Option<PathBuf>,
}

impl Keyring {
    pub fn new(path: Option<PathBuf>) -> Self {
        Self {
            keys: BTreeMap::new(),
            path,
        }
    }

    pub fn insert(&mut self, store: StoreId, key: [u8; KEY_LEN]) -> io::Result<()> {
        self.keys.insert(store, key);
        self.persist()
    }

    pub fn get(&self, store: &StoreId) -> Option<&[u8; KEY_LEN]> {
        self.keys.get(store)
    }

    pub fn len(&self) -> usize {
        self.keys.len()
    }

    pub fn is_empty(&self) -> bool {
        self.keys.is_empty()
    }

    pub fn distinct_keys(&self) -> usize {
        let mut v: Vec<_> = self.keys.values().collect();
        v.sort();
        v.dedup();
        v.len()
    }

    fn persist(&self) -> io::Result<()> {
        let Some(path) = &self.path else {
            return Ok(());
        };
        let doc: BTreeMap<&str, String> = self
            .keys
            .iter()
            .map(|(k, v)| (k.as_str(), hex::encode(v)))
            .collect();
        let json = serde_json::to_vec_pretty(&doc).map_err(io::Error::other)?;
        let tmp = path.with_extension("tmp");
        std::fs::write(&tmp, json)?;
        #[cfg(unix)]
        {
            use std::os::unix::fs::PermissionsExt;
            std::fs::set_permissions(&tmp, std::fs::Permissions::from_mode(0o600))?;
        }
        std::fs::rename(tmp, path)
    }
}
