//! Caveat-chained bearer tokens.
//!
//! The MAC is a chain: `sig0 = HMAC(root, token_id)`, then
//! `sig_i = HMAC(sig_{i-1}, encode(caveat_i))`. A holder can append caveats
//! (attenuate) without the root secret, but cannot remove or edit them.
//!
//! Wire form, before base64url (no padding):
//!
//! ```text
//! version   u8       = 0x01
//! id_len    u16 BE
//! token_id  id_len bytes (UTF-8)
//! count     u16 BE   number of caveats
//! caveat*   key_len u16 BE | key | value_len u16 BE | value
//! mac       32 bytes
//! ```

use crate::crypto::{self, MAC_LEN};
use crate::ids::TokenId;
use base64::engine::general_purpose::URL_SAFE_NO_PAD;
use base64::Engine;
use serde::{Deserialize, Serialize};

pub const WIRE_VERSION: u8 = 0x01;

pub const CAVEAT_APP: &str = "app";
pub const CAVEAT_STORE: &str = "store";
pub const CAVEAT_POLICY: &str = "policy";
pub const CAVEAT_ACTIONS: &str = "actions";
pub const CAVEAT_SAMPLE_PERIOD: &str = "sample_period_ms";
pub const CAVEAT_REPORT_PERIOD: &str = "report_period_ms";
pub const CAVEAT_EXPIRES: &str = "expires";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Caveat {
    pub key: String,
    pub value: String,
}

impl Caveat {
    pub fn new(key: impl Into<String>, value: impl ToString) -> Self {
        Self {
            key: key.into(),
            value: value.to_string(),
        }
    }

    fn encode_into(&self, out: &mut Vec<u8>) {
        put_str(out, &self.key);
        put_str(out, &self.value);
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AccessToken {
    pub token_id: TokenId,
    pub caveats: Vec<Caveat>,
    pub mac: [u8; MAC_LEN],
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum TokenDecodeError {
    #[error("invalid base64")]
    Base64,
    #[error("unsupported token version {0}")]
    Version(u8),
    #[error("truncated token")]
    Truncated,
    #[error("trailing bytes after mac")]
    Trailing,
    #[error("non-UTF-8 field")]
    Utf8,
}

impl AccessToken {
    /// Builds a token whose MAC chain starts from `root`.
    pub fn mint(root: &[u8], token_id: TokenId, caveats: Vec<Caveat>) -> Self {
        let mac = chain(root, &token_id, &caveats);
        Self {
            token_id,
            caveats,
            mac,
        }
    }

    /// Adds a restricting caveat, extending the MAC chain from the current tag.
    pub fn attenuate(&self, caveat: Caveat) -> Self {
        let mut buf = Vec::new();
        caveat.encode_into(&mut buf);
        let mac = crypto::hmac(&self.mac, &buf);
        let mut caveats = self.caveats.clone();
        caveats.push(caveat);
        Self {
            token_id: self.token_id.clone(),
            caveats,
            mac,
        }
    }

    pub fn verify_mac(&self, root: &[u8]) -> bool {
        let Some((last, prefix)) = self.caveats.split_last() else {
            return crypto::hmac_verify(root, self.token_id.as_str().as_bytes(), &self.mac);
        };
        let sig = chain(root, &self.token_id, prefix);
        let mut buf = Vec::new();
        last.encode_into(&mut buf);
        crypto::hmac_verify(&sig, &buf, &self.mac)
    }

    pub fn caveat_values<'a>(&'a self, key: &'a str) -> impl Iterator<Item = &'a str> + 'a {
        self.caveats
            .iter()
            .filter(move |c| c.key == key)
            .map(|c| c.value.as_str())
    }

    pub fn first_caveat(&self, key: &str) -> Option<&str> {
        self.caveats.iter().find(|c| c.key == key).map(|c| c.value.as_str())
    }

    /// Short stable identifier for audit records; never reveals the MAC itself.
    pub fn fingerprint(&self) -> String {
        crypto::fingerprint(&self.to_bytes())
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = vec![WIRE_VERSION];
        put_str(&mut out, self.token_id.as_str());
        out.extend_from_slice(&(self.caveats.len() as u16).to_be_bytes());
        for c in &self.caveats {
            c.encode_into(&mut out);
        }
        out.extend_from_slice(&self.mac);
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, TokenDecodeError> {
        let mut r = Reader { buf: bytes, pos: 0 };
        let version = r.u8()?;
        if version != WIRE_VERSION {
            return Err(TokenDecodeError::Version(version));
        }
        let token_id = TokenId::new(r.string()?);
        let count = r.u16()?;
        let mut caveats = Vec::with_capacity(count as usize);
        for _ in 0..count {
            let key = r.string()?;
            let value = r.string()?;
            caveats.push(Caveat { key, value });
        }
        let mac: [u8; MAC_LEN] = r.take(MAC_LEN)?.try_into().expect("length checked");
        if r.pos != bytes.len() {
            return Err(TokenDecodeError::Trailing);
        }
        Ok(Self {
            token_id,
            caveats,
            mac,
        })
    }

    pub fn to_wire(&self) -> String {
        URL_SAFE_NO_PAD.encode(self.to_bytes())
    }

    pub fn from_wire(s: &str) -> Result<Self, TokenDecodeError> {
        let bytes = URL_SAFE_NO_PAD
            .decode(s.trim())
            .map_err(|_| TokenDecodeError::Base64)?;
        Self::from_bytes(&bytes)
    }
}

impl Serialize for AccessToken {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&self.to_wire())
    }
}

impl<'de> Deserialize<'de> for AccessToken {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        AccessToken::from_wire(&s).map_err(serde::de::Error::custom)
    }
}

fn chain(root: &[u8], token_id: &TokenId, caveats: &[Caveat]) -> [u8; MAC_LEN] {
    let mut sig = crypto::hmac(root, token_id.as_str().as_bytes());
    let mut buf = Vec::new();
    for c in caveats {
        buf.clear();
        c.encode_into(&mut buf);
        sig = crypto::hmac(&sig, &buf);
    }
    sig
}

fn put_str(out: &mut Vec<u8>, s: &str) {
    let len = u16::try_from(s.len()).expect("token fields are limited to 64 KiB");
    out.extend_from_slice(&len.to_be_bytes());
    out.extend_from_slice(s.as_bytes());
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], TokenDecodeError> {
        let end = self.pos.checked_add(n).ok_or(TokenDecodeError::Truncated)?;
        let slice = self.buf.get(self.pos..end).ok_or(TokenDecodeError::Truncated)?;
        self.pos = end;
        Ok(slice)
    }

    fn u8(&mut self) -> Result<u8, TokenDecodeError> {
        Ok(self.take(1)?[0])
    }

    fn u16(&mut self) -> Result<u16, TokenDecodeError> {
        let b = self.take(2)?;
        Ok(u16::from_be_bytes([b[0], b[1]]))
    }

    fn string(&mut self) -> Result<String, TokenDecodeError> {
        let len = self.u16()? as usize;
        let b = self.take(len)?;
        String::from_utf8(b.to_vec()).map_err(|_| TokenDecodeError::Utf8)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> AccessToken {
        AccessToken::mint(
            b"root",
            TokenId::new("tok-1"),
            vec![
                Caveat::new(CAVEAT_APP, "app"),
                Caveat::new(CAVEAT_SAMPLE_PERIOD, 60_000),
            ],
        )
    }

    #[test]
    fn wire_round_trip() {
        let t = sample();
        let back = AccessToken::from_wire(&t.to_wire()).unwrap();
        assert_eq!(back, t);
        assert!(back.verify_mac(b"root"));
    }

    #[test]
    fn lowered_period_breaks_mac() {
        let mut t = sample();
        t.caveats[1].value = "1".into();
        assert!(!t.verify_mac(b"root"));
    }

    #[test]
    fn attenuation_keeps_mac_valid_but_removal_does_not() {
        let t = sample().attenuate(Caveat::new(CAVEAT_SAMPLE_PERIOD, 120_000));
        assert!(t.verify_mac(b"root"));
        let mut stripped = t.clone();
        stripped.caveats.pop();
        assert!(!stripped.verify_mac(b"root"));
    }

    #[test]
    fn wrong_root_fails() {
        assert!(!sample().verify_mac(b"not-root"));
    }

    #[test]
    fn decode_rejects_garbage() {
        assert_eq!(AccessToken::from_bytes(&[]), Err(TokenDecodeError::Truncated));
        assert_eq!(AccessToken::from_bytes(&[9]), Err(TokenDecodeError::Version(9)));
        let mut b = sample().to_bytes();
        b.push(0);
        assert_eq!(AccessToken::from_bytes(&b), Err(TokenDecodeError::Trailing));
    }
}
