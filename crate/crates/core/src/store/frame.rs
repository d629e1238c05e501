//! On-disk layout of store and audit logs.
//!
//! ```text
//! file      := header frame*
//! header    := magic "DBX1" | kind u8 (0x01 data, 0x02 audit) | id_len u16 BE | store_id
//! frame     := len u32 BE | nonce [12] | ciphertext [len - 12]
//! ciphertext = ChaCha20-Poly1305(store key, nonce, aad = store_id | kind, plaintext)
//! plaintext  = compact JSON of one DataRecord or AuditRecord
//! ```
//!
//! Each store has its own key, so a frame sealed for one store never opens
//! under another store's key.

use crate::crypto::{self, DecryptError, KEY_LEN, NONCE_LEN};
use std::fs::{self, File, OpenOptions};
use std::io::{self, Write};
use std::path::{Path, PathBuf};

pub const MAGIC: &[u8; 4] = b"DBX1";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u8)]
pub enum LogKind {
    Data = 0x01,
    Audit = 0x02,
}

#[derive(Debug, thiserror::Error)]
pub enum FrameError {
    #[error("bad magic")]
    Magic,
    #[error("truncated log")]
    Truncated,
    #[error("unknown log kind {0:#x}")]
    Kind(u8),
    #[error(transparent)]
    Decrypt(#[from] DecryptError),
}

pub fn header(kind: LogKind, store_id: &str) -> Vec<u8> {
    let mut out = Vec::with_capacity(7 + store_id.len());
    out.extend_from_slice(MAGIC);
    out.push(kind as u8);
    out.extend_from_slice(&(store_id.len() as u16).to_be_bytes());
    out.extend_from_slice(store_id.as_bytes());
    out
}

fn aad(kind: LogKind, store_id: &str) -> Vec<u8> {
    let mut a = store_id.as_bytes().to_vec();
    a.push(kind as u8);
    a
}

pub fn seal_frame(
    key: &[u8; KEY_LEN],
    nonce: &[u8; NONCE_LEN],
    kind: LogKind,
    store_id: &str,
    plaintext: &[u8],
) -> Vec<u8> {
    let ct = crypto::seal(key, nonce, &aad(kind, store_id), plaintext);
    let mut out = Vec::with_capacity(4 + NONCE_LEN + ct.len());
    out.extend_from_slice(&((NONCE_LEN + ct.len()) as u32).to_be_bytes());
    out.extend_from_slice(nonce);
    out.extend_from_slice(&ct);
    out
}

/// Parses a log file and decrypts every frame with `key`.
pub fn open_log(bytes: &[u8], key: &[u8; KEY_LEN]) -> Result<Vec<Vec<u8>>, FrameError> {
    if bytes.len() < 7 || &bytes[..4] != MAGIC {
        return Err(FrameError::Magic);
    }
    let kind = match bytes[4] {
        0x01 => LogKind::Data,
        0x02 => LogKind::Audit,
        k => return Err(FrameError::Kind(k)),
    };
    let id_len = u16::from_be_bytes([bytes[5], bytes[6]]) as usize;
    let id_end = 7 + id_len;
    let store_id = bytes.get(7..id_end).ok_or(FrameError::Truncated)?;
    let store_id = std::str::from_utf8(store_id).map_err(|_| FrameError::Truncated)?;
    let aad = aad(kind, store_id);
    let mut pos = id_end;
    let mut out = Vec::new();
    while pos < bytes.len() {
        let len_bytes = bytes.get(pos..pos + 4).ok_or(FrameError::Truncated)?;
        let len = u32::from_be_bytes(len_bytes.try_into().expect("4 bytes")) as usize;
        let body = bytes.get(pos + 4..pos + 4 + len).ok_or(FrameError::Truncated)?;
        if len < NONCE_LEN {
            return Err(FrameError::Truncated);
        }
        let nonce: [u8; NONCE_LEN] = body[..NONCE_LEN].try_into().expect("nonce length");
        out.push(crypto::open(key, &nonce, &aad, &body[NONCE_LEN..])?);
        pos += 4 + len;
    }
    Ok(out)
}

/// In-memory byte image of a log, mirrored to a file when the store is persistent.
#[derive(Debug)]
pub(crate) struct FrameLog {
    kind: LogKind,
    store_id: String,
    bytes: Vec<u8>,
    file: Option<(PathBuf, File)>,
}

impl FrameLog {
    pub(crate) fn create(kind: LogKind, store_id: &str, path: Option<PathBuf>) -> io::Result<Self> {
        let bytes = header(kind, store_id);
        let file = match path {
            Some(p) => {
                let mut f = OpenOptions::new()
                    .create(true)
                    .truncate(true)
                    .write(true)
                    .open(&p)?;
                f.write_all(&bytes)?;
                f.sync_data()?;
                Some((p, f))
            }
            None => None,
        };
        Ok(Self {
            kind,
            store_id: store_id.to_string(),
            bytes,
            file,
        })
    }

    pub(crate) fn append(
        &mut self,
        key: &[u8; KEY_LEN],
        nonce: &[u8; NONCE_LEN],
        plaintext: &[u8],
    ) -> io::Result<()> {
        let frame = seal_frame(key, nonce, self.kind, &self.store_id, plaintext);
        if let Some((_, f)) = &mut self.file {
            f.write_all(&frame)?;
            f.sync_data()?;
        }
        self.bytes.extend_from_slice(&frame);
        Ok(())
    }

    /// Replaces the whole log (redaction and clearing). Written to a temp file then renamed.
    pub(crate) fn rewrite(
        &mut self,
        key: &[u8; KEY_LEN],
        frames: impl Iterator<Item = ([u8; NONCE_LEN], Vec<u8>)>,
    ) -> io::Result<()> {
        let mut bytes = header(self.kind, &self.store_id);
        for (nonce, pt) in frames {
            bytes.extend(seal_frame(key, &nonce, self.kind, &self.store_id, &pt));
        }
        if let Some((path, _)) = &self.file {
            let tmp = path.with_extension("tmp");
            fs::write(&tmp, &bytes)?;
            fs::rename(&tmp, path)?;
            let f = OpenOptions::new().append(true).open(path)?;
            self.file = Some((path.clone(), f));
        }
        self.bytes = bytes;
        Ok(())
    }

    pub(crate) fn remove_file(&mut self) -> io::Result<()> {
        if let Some((path, _)) = self.file.take() {
            fs::remove_file(path)?;
        }
        Ok(())
    }

    pub(crate) fn bytes(&self) -> &[u8] {
        &self.bytes
    }

    pub(crate) fn path(&self) -> Option<&Path> {
        self.file.as_ref().map(|(p, _)| p.as_path())
    }
}
