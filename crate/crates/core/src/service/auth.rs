use super::config::{Role, TokenEntry};
use super::store::ReadingStore;
use axum::extract::{Request, State};
use axum::http::header::AUTHORIZATION;
use axum::middleware::Next;
use axum::response::Response;
use sha2::{Digest, Sha256};
use std::collections::HashMap;

use super::api::{ApiError, AppState};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Principal {
    pub role: Role,
    pub customer_id: Option<String>,
}

impl Principal {
    pub fn is_admin(&self) -> bool {
        self.role == Role::Admin
    }

    /// Customer principals may only touch their own objects.
    pub fn owns(&self, customer_id: &str) -> bool {
        self.customer_id.as_deref() == Some(customer_id)
    }
}

pub fn token_hash(token: &str) -> String {
    hex::encode(Sha256::digest(token.as_bytes()))
}

/// Static bearer tokens from config, keyed by hash so plaintext is not retained.
#[derive(Debug, Default)]
pub struct TokenTable {
    by_hash: HashMap<String, Principal>,
}

impl TokenTable {
    pub fn new(entries: &[TokenEntry]) -> Self {
        let by_hash = entries
            .iter()
            .map(|e| (token_hash(&e.token), Principal { role: e.role, customer_id: e.customer_id.clone() }))
            .collect();
        Self { by_hash }
    }

    /// Config tokens first, then tokens set on customer accounts.
    pub fn resolve(&self, token: &str, store: &dyn ReadingStore) -> Option<Principal> {
        let hash = token_hash(token);
        if let Some(p) = self.by_hash.get(&hash) {
            return Some(p.clone());
        }
        store
            .customers()
            .into_iter()
            .find(|c| c.auth_token_hash.as_deref() == Some(hash.as_str()))
            .map(|c| Principal { role: Role::Customer, customer_id: Some(c.customer_id) })
    }
}

fn bearer(req: &Request) -> Option<&str> {
    let value = req.headers().get(AUTHORIZATION)?.to_str().ok()?;
    let (scheme, token) = value.split_once(' ')?;
    scheme.eq_ignore_ascii_case("bearer").then_some(token.trim()).filter(|t| !t.is_empty())
}

/// Resolves the bearer token into a [`Principal`] request extension, or answers 401.
pub async fn authenticate(State(state): State<AppState>, mut req: Request, next: Next) -> Result<Response, ApiError> {
    let principal = bearer(&req)
        .and_then(|t| state.tokens.resolve(t, state.store.as_ref()))
        .ok_or_else(|| ApiError::unauthorized())?;
    req.extensions_mut().insert(principal);
    Ok(next.run(req).await)
}

pub async fn require_admin(req: Request, next: Next) -> Result<Response, ApiError> {
    require(Role::Admin, req, next).await
}

pub async fn require_customer(req: Request, next: Next) -> Result<Response, ApiError> {
    require(Role::Customer, req, next).await
}

async fn require(role: Role, req: Request, next: Next) -> Result<Response, ApiError> {
    match req.extensions().get::<Principal>() {
        Some(p) if p.role == role => Ok(next.run(req).await),
        Some(_) => Err(ApiError::forbidden()),
        None => Err(ApiError::unauthorized()),
    }
}
