//! User accounts, login keys and sessions.

use crate::crypto;
use crate::ids::UserId;
use parking_lot::{Mutex, RwLock};
use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha20Rng;
use serde::{Deserialize, Serialize};
use std::collections::{BTreeMap, HashMap};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Role {
    Owner,
    Member,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SharingPrefs {
    /// Whether other users may propose sharing a source with this user.
    pub accept_sharing_requests: bool,
}

impl Default for SharingPrefs {
    fn default() -> Self {
        Self {
            accept_sharing_requests: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct UserAccount {
    pub user_id: UserId,
    pub display_name: String,
    pub role: Role,
    #[serde(default)]
    pub sharing: SharingPrefs,
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum AccountError {
    #[error("only an owner can create accounts")]
    NotOwner,
    #[error("the first account must be an owner")]
    FirstMustBeOwner,
    #[error("account {0} already exists")]
    Duplicate(UserId),
    #[error("account name must contain a letter or digit")]
    BadName,
    #[error("unknown account {0}")]
    Unknown(UserId),
    #[error("login key does not match")]
    BadKey,
}

struct Entry {
    account: UserAccount,
    key_hash: [u8; 32],
}

/// Newly created account with its login key; the key is not stored in clear.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct NewAccount {
    pub account: UserAccount,
    pub key: String,
}

pub struct Accounts {
    accounts: RwLock<BTreeMap<UserId, Entry>>,
    sessions: RwLock<HashMap<String, UserId>>,
    rng: Mutex<ChaCha20Rng>,
}

fn slug(name: &str) -> String {
    let mut out = String::new();
    for c in name.trim().chars() {
        if c.is_ascii_alphanumeric() {
            out.push(c.to_ascii_lowercase());
        } else if !out.is_empty() && !out.ends_with('-') {
            out.push('-');
        }
    }
    out.trim_end_matches('-').to_string()
}

impl Accounts {
    pub fn new(seed: [u8; 32]) -> Self {
        Self {
            accounts: RwLock::new(BTreeMap::new()),
            sessions: RwLock::new(HashMap::new()),
            rng: Mutex::new(ChaCha20Rng::from_seed(seed)),
        }
    }

    fn secret(&self) -> String {
        let mut b = [0u8; 16];
        self.rng.lock().fill_bytes(&mut b);
        hex::encode(b)
    }

    /// The first account bootstraps the box and must be an owner; later ones need an owner.
    pub fn create(&self, by: Option<&UserId>, name: &str, role: Role) -> Result<NewAccount, AccountError> {
        let id = slug(name);
        if id.is_empty() {
            return Err(AccountError::BadName);
        }
        let user_id = UserId::new(id);
        let mut accounts = self.accounts.write();
        if accounts.is_empty() {
            if role != Role::Owner {
                return Err(AccountError::FirstMustBeOwner);
            }
        } else if !by
            .and_then(|b| accounts.get(b))
            .is_some_and(|e| e.account.role == Role::Owner)
        {
            return Err(AccountError::NotOwner);
        }
        if accounts.contains_key(&user_id) {
            return Err(AccountError::Duplicate(user_id));
        }
        let key = self.secret();
        let account = UserAccount {
            user_id: user_id.clone(),
            display_name: name.trim().to_string(),
            role,
            sharing: SharingPrefs::default(),
        };
        accounts.insert(
            user_id,
            Entry {
                account: account.clone(),
                key_hash: crypto::sha256(key.as_bytes()),
            },
        );
        Ok(NewAccount { account, key })
    }

    pub fn login(&self, user: &UserId, key: &str) -> Result<String, AccountError> {
        let accounts = self.accounts.read();
        let e = accounts
            .get(user)
            .ok_or_else(|| AccountError::Unknown(user.clone()))?;
        if crypto::sha256(key.as_bytes()) != e.key_hash {
            return Err(AccountError::BadKey);
        }
        let session = self.secret();
        self.sessions.write().insert(session.clone(), user.clone());
        Ok(session)
    }

    pub fn logout(&self, session: &str) -> bool {
        self.sessions.write().remove(session).is_some()
    }

    pub fn session_user(&self, session: &str) -> Option<UserId> {
        self.sessions.read().get(session).cloned()
    }

    pub fn get(&self, user: &UserId) -> Option<UserAccount> {
        self.accounts.read().get(user).map(|e| e.account.clone())
    }

    pub fn exists(&self, user: &UserId) -> bool {
        self.accounts.read().contains_key(user)
    }

    pub fn is_owner(&self, user: &UserId) -> bool {
        self.get(user).is_some_and(|a| a.role == Role::Owner)
    }

    pub fn list(&self) -> Vec<UserAccount> {
        self.accounts.read().values().map(|e| e.account.clone()).collect()
    }

    pub fn set_sharing(&self, user: &UserId, prefs: SharingPrefs) -> Result<(), AccountError> {
        let mut accounts = self.accounts.write();
        let e = accounts
            .get_mut(user)
            .ok_or_else(|| AccountError::Unknown(user.clone()))?;
        e.account.sharing = prefs;
        Ok(())
    }
}
