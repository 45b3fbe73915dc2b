use super::NodeId;
use hmac::{Hmac, Mac};
use sha2::{Digest, Sha256};
use std::collections::BTreeMap;
use std::fmt;

/// Message authentication for node signatures. The keyed-MAC implementation is
/// enough for a single trust domain; an asymmetric scheme can implement the same
/// trait.
pub trait Authenticator: Send + Sync + fmt::Debug {
    fn sign(&self, signer: NodeId, msg: &[u8]) -> Vec<u8>;
    fn verify(&self, signer: NodeId, msg: &[u8], sig: &[u8]) -> bool;
}

type HmacSha256 = Hmac<Sha256>;

/// HMAC-SHA256 with one secret per node.
#[derive(Clone)]
pub struct HmacKeyring {
    keys: BTreeMap<NodeId, Vec<u8>>,
}

impl HmacKeyring {
    pub fn new(keys: BTreeMap<NodeId, Vec<u8>>) -> Self {
        Self { keys }
    }

    /// Derives all node keys from one seed; used by demos and tests.
    pub fn from_seed(seed: u64) -> Self {
        let keys = NodeId::ALL
            .iter()
            .map(|&id| {
                let key = Sha256::new()
                    .chain_update(b"meterpipe-node-key")
                    .chain_update(seed.to_be_bytes())
                    .chain_update(id.as_str().as_bytes())
                    .finalize()
                    .to_vec();
                (id, key)
            })
            .collect();
        Self { keys }
    }

    /// Derives node keys from an operator-supplied secret string.
    pub fn from_secret(secret: &str) -> Self {
        let keys = NodeId::ALL
            .iter()
            .map(|&id| {
                let key = Sha256::new()
                    .chain_update(b"meterpipe-node-secret")
                    .chain_update(secret.as_bytes())
                    .chain_update(id.as_str().as_bytes())
                    .finalize()
                    .to_vec();
                (id, key)
            })
            .collect();
        Self { keys }
    }

    fn mac(&self, signer: NodeId) -> HmacSha256 {
        let key = self.keys.get(&signer).map(Vec::as_slice).unwrap_or_default();
        HmacSha256::new_from_slice(key).expect("hmac accepts any key length")
    }
}

impl fmt::Debug for HmacKeyring {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("HmacKeyring").field("nodes", &self.keys.keys().collect::<Vec<_>>()).finish()
    }
}

impl Authenticator for HmacKeyring {
    fn sign(&self, signer: NodeId, msg: &[u8]) -> Vec<u8> {
        let mut mac = self.mac(signer);
        mac.update(msg);
        mac.finalize().into_bytes().to_vec()
    }

    fn verify(&self, signer: NodeId, msg: &[u8], sig: &[u8]) -> bool {
        if !self.keys.contains_key(&signer) {
            return false;
        }
        let mut mac = self.mac(signer);
        mac.update(msg);
        mac.verify_slice(sig).is_ok()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn signatures_bind_signer_and_message() {
        let ring = HmacKeyring::from_seed(1);
        let sig = ring.sign(NodeId::Customer, b"reading");
        assert!(ring.verify(NodeId::Customer, b"reading", &sig));
        assert!(!ring.verify(NodeId::Endorser, b"reading", &sig));
        assert!(!ring.verify(NodeId::Customer, b"readinh", &sig));
        assert!(!ring.verify(NodeId::Customer, b"reading", &sig[..31]));
        assert!(!HmacKeyring::from_seed(2).verify(NodeId::Customer, b"reading", &sig));
        assert_ne!(HmacKeyring::from_secret("a").sign(NodeId::Orderer, b"x"), HmacKeyring::from_secret("b").sign(NodeId::Orderer, b"x"));
    }
}
