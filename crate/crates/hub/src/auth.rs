//! Bearer-token verification.
//!
//! The hub never mints identities itself. A [`TokenVerifier`] turns a token
//! into a user id; the service then looks the user up in the access-control
//! state. [`MockIdp`] is the in-repo identity provider, [`HttpVerifier`]
//! asks one over HTTP, and [`CachingVerifier`] remembers answers for a
//! bounded time.

use std::collections::HashMap;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum AuthError {
    #[error("INVALID_TOKEN")]
    InvalidToken,
    #[error("IDP_UNAVAILABLE: {0}")]
    Unavailable(String),
}

impl AuthError {
    pub fn code(&self) -> &'static str {
        match self {
            AuthError::InvalidToken => "INVALID_TOKEN",
            AuthError::Unavailable(_) => "IDP_UNAVAILABLE",
        }
    }
}

pub trait TokenVerifier: Send + Sync {
    /// The user id the token was issued to.
    fn verify(&self, token: &str) -> Result<String, AuthError>;
}

/// Issues `user.<hex sha256(secret || user)>` tokens.
#[derive(Clone)]
pub struct MockIdp {
    secret: Vec<u8>,
}

impl MockIdp {
    pub fn new(secret: impl AsRef<[u8]>) -> Self {
        MockIdp {
            secret: secret.as_ref().to_vec(),
        }
    }

    fn mac(&self, user: &str) -> String {
        let mut h = Sha256::new();
        h.update(&self.secret);
        h.update(user.as_bytes());
        hex::encode(h.finalize())
    }

    pub fn issue(&self, user: &str) -> String {
        format!("{user}.{}", self.mac(user))
    }
}

impl TokenVerifier for MockIdp {
    fn verify(&self, token: &str) -> Result<String, AuthError> {
        let (user, mac) = token.rsplit_once('.').ok_or(AuthError::InvalidToken)?;
        if user.is_empty() {
            return Err(AuthError::InvalidToken);
        }
        let want = self.mac(user);
        let same = want.len() == mac.len() && want.bytes().zip(mac.bytes()).fold(0u8, |acc, (a, b)| acc | (a ^ b)) == 0;
        if same {
            Ok(user.to_string())
        } else {
            Err(AuthError::InvalidToken)
        }
    }
}

#[derive(Debug, Serialize, Deserialize)]
pub struct IssueRequest {
    pub user_id: String,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct TokenBody {
    pub token: String,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct VerifiedBody {
    pub user_id: String,
}

/// Verifies by POSTing the token to `<base>/mock-idp/verify`.
///
/// Uses the blocking client; call it off the async executor.
pub struct HttpVerifier {
    url: String,
    client: reqwest::blocking::Client,
}

impl HttpVerifier {
    pub fn new(base_url: &str) -> Self {
        HttpVerifier {
            url: format!("{}/mock-idp/verify", base_url.trim_end_matches('/')),
            client: reqwest::blocking::Client::builder()
                .timeout(Duration::from_secs(10))
                .build()
                .expect("http client"),
        }
    }
}

impl TokenVerifier for HttpVerifier {
    fn verify(&self, token: &str) -> Result<String, AuthError> {
        let resp = self
            .client
            .post(&self.url)
            .json(&TokenBody { token: token.to_string() })
            .send()
            .map_err(|e| AuthError::Unavailable(e.to_string()))?;
        match resp.status().as_u16() {
            200 => resp
                .json::<VerifiedBody>()
                .map(|b| b.user_id)
                .map_err(|e| AuthError::Unavailable(e.to_string())),
            401 | 403 => Err(AuthError::InvalidToken),
            s => Err(AuthError::Unavailable(format!("identity provider answered {s}"))),
        }
    }
}

/// Remembers successful verifications for `ttl`. A zero TTL disables the
/// cache, so every request reaches the provider.
pub struct CachingVerifier<V> {
    inner: V,
    ttl: Duration,
    cache: Mutex<HashMap<String, (String, Instant)>>,
    upstream_calls: AtomicUsize,
}

impl<V: TokenVerifier> CachingVerifier<V> {
    pub fn new(inner: V, ttl: Duration) -> Self {
        CachingVerifier {
            inner,
            ttl,
            cache: Mutex::new(HashMap::new()),
            upstream_calls: AtomicUsize::new(0),
        }
    }

    pub fn upstream_calls(&self) -> usize {
        self.upstream_calls.load(Ordering::Relaxed)
    }
}

impl<V: TokenVerifier> TokenVerifier for CachingVerifier<V> {
    fn verify(&self, token: &str) -> Result<String, AuthError> {
        if !self.ttl.is_zero() {
            let cache = self.cache.lock().expect("token cache");
            if let Some((user, at)) = cache.get(token) {
                if at.elapsed() < self.ttl {
                    return Ok(user.clone());
                }
            }
        }
        self.upstream_calls.fetch_add(1, Ordering::Relaxed);
        let user = self.inner.verify(token)?;
        if !self.ttl.is_zero() {
            let mut cache = self.cache.lock().expect("token cache");
            cache.retain(|_, (_, at)| at.elapsed() < self.ttl);
            cache.insert(token.to_string(), (user.clone(), Instant::now()));
        }
        Ok(user)
    }
}

impl<V: TokenVerifier + ?Sized> TokenVerifier for std::sync::Arc<V> {
    fn verify(&self, token: &str) -> Result<String, AuthError> {
        (**self).verify(token)
    }
}

impl<V: TokenVerifier + ?Sized> TokenVerifier for Box<V> {
    fn verify(&self, token: &str) -> Result<String, AuthError> {
        (**self).verify(token)
    }
}
