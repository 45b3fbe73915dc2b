use super::codec::{DecodeError, Decoder, Encoder};
use super::{Authenticator, NodeId};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

pub const GENESIS_PREV: [u8; 32] = [0; 32];

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Geo {
    pub lat: f64,
    pub lon: f64,
}

impl Geo {
    pub fn new(lat: f64, lon: f64) -> Self {
        Self { lat, lon }
    }
}

/// A customer's meter reading update.
#[derive(Debug, Clone, PartialEq)]
pub struct ReadingTx {
    pub tx_id: String,
    pub meter_id: String,
    pub reading: String,
    pub timestamp_ms: u64,
    pub image_digest: String,
    pub geo: Geo,
    pub submitter_sig: Vec<u8>,
}

impl ReadingTx {
    /// Bytes covered by the submitter signature.
    pub fn payload_bytes(&self) -> Vec<u8> {
        let mut e = Encoder::new();
        e.raw(b"RTX1")
            .str(&self.tx_id)
            .str(&self.meter_id)
            .str(&self.reading)
            .u64(self.timestamp_ms)
            .str(&self.image_digest)
            .f64(self.geo.lat)
            .f64(self.geo.lon);
        e.finish()
    }

    /// Full canonical form, payload followed by the signature.
    pub fn canonical_bytes(&self) -> Vec<u8> {
        let mut e = Encoder::new();
        e.raw(&self.payload_bytes()).bytes(&self.submitter_sig);
        e.finish()
    }

    pub fn decode(d: &mut Decoder<'_>) -> Result<Self, DecodeError> {
        d.tag(b"RTX1")?;
        Ok(Self {
            tx_id: d.str()?,
            meter_id: d.str()?,
            reading: d.str()?,
            timestamp_ms: d.u64()?,
            image_digest: d.str()?,
            geo: Geo { lat: d.f64()?, lon: d.f64()? },
            submitter_sig: d.bytes()?.to_vec(),
        })
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, DecodeError> {
        let mut d = Decoder::new(bytes);
        let tx = Self::decode(&mut d)?;
        d.finish()?;
        Ok(tx)
    }

    pub fn sign(&mut self, auth: &dyn Authenticator) {
        self.submitter_sig = auth.sign(NodeId::Customer, &self.payload_bytes());
    }

    pub fn verify(&self, auth: &dyn Authenticator) -> bool {
        auth.verify(NodeId::Customer, &self.payload_bytes(), &self.submitter_sig)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Endorsement {
    pub tx_id: String,
    pub endorser_id: String,
    pub endorser_sig: Vec<u8>,
}

impl Endorsement {
    pub fn issue(tx: &ReadingTx, auth: &dyn Authenticator) -> Self {
        Self {
            tx_id: tx.tx_id.clone(),
            endorser_id: NodeId::Endorser.as_str().to_string(),
            endorser_sig: auth.sign(NodeId::Endorser, &tx.canonical_bytes()),
        }
    }

    /// Signature check against the configured endorser for this exact transaction.
    pub fn verify(&self, tx: &ReadingTx, auth: &dyn Authenticator) -> bool {
        let Ok(endorser) = self.endorser_id.parse::<NodeId>() else {
            return false;
        };
        endorser == NodeId::Endorser
            && self.tx_id == tx.tx_id
            && auth.verify(endorser, &tx.canonical_bytes(), &self.endorser_sig)
    }

    pub fn canonical_bytes(&self) -> Vec<u8> {
        let mut e = Encoder::new();
        e.raw(b"END1").str(&self.tx_id).str(&self.endorser_id).bytes(&self.endorser_sig);
        e.finish()
    }

    pub fn decode(d: &mut Decoder<'_>) -> Result<Self, DecodeError> {
        d.tag(b"END1")?;
        Ok(Self { tx_id: d.str()?, endorser_id: d.str()?, endorser_sig: d.bytes()?.to_vec() })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Block {
    pub height: u64,
    pub prev_digest: [u8; 32],
    pub txs: Vec<(ReadingTx, Endorsement)>,
    pub orderer_sig: Vec<u8>,
    pub digest: [u8; 32],
}

impl Block {
    /// Signed by the orderer and sealed with its digest.
    pub fn seal(height: u64, prev_digest: [u8; 32], txs: Vec<(ReadingTx, Endorsement)>, auth: &dyn Authenticator) -> Self {
        let mut block = Self { height, prev_digest, txs, orderer_sig: Vec::new(), digest: [0; 32] };
        block.orderer_sig = auth.sign(NodeId::Orderer, &block.body_bytes());
        block.digest = block.compute_digest();
        block
    }

    pub fn genesis(auth: &dyn Authenticator) -> Self {
        Self::seal(0, GENESIS_PREV, Vec::new(), auth)
    }

    /// Height, link and transactions: the region the orderer signs.
    pub fn body_bytes(&self) -> Vec<u8> {
        let mut e = Encoder::new();
        e.raw(b"BLK1").u64(self.height).raw(&self.prev_digest).u32(self.txs.len() as u32);
        for (tx, en) in &self.txs {
            e.bytes(&tx.canonical_bytes()).bytes(&en.canonical_bytes());
        }
        e.finish()
    }

    pub fn compute_digest(&self) -> [u8; 32] {
        let mut e = Encoder::new();
        e.raw(&self.body_bytes()).bytes(&self.orderer_sig);
        Sha256::digest(e.finish()).into()
    }

    pub fn canonical_bytes(&self) -> Vec<u8> {
        let mut e = Encoder::new();
        e.raw(&self.body_bytes()).bytes(&self.orderer_sig).raw(&self.digest);
        e.finish()
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, DecodeError> {
        let mut d = Decoder::new(bytes);
        d.tag(b"BLK1")?;
        let height = d.u64()?;
        let prev_digest = d.array()?;
        let count = d.u32()?;
        let mut txs = Vec::new();
        for _ in 0..count {
            let tx = ReadingTx::from_bytes(d.bytes()?)?;
            let mut ed = Decoder::new(d.bytes()?);
            let en = Endorsement::decode(&mut ed)?;
            ed.finish()?;
            txs.push((tx, en));
        }
        let orderer_sig = d.bytes()?.to_vec();
        let digest = d.array()?;
        d.finish()?;
        Ok(Self { height, prev_digest, txs, orderer_sig, digest })
    }

    pub fn digest_hex(&self) -> String {
        hex::encode(self.digest)
    }

    pub fn prev_digest_hex(&self) -> String {
        hex::encode(self.prev_digest)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ledger::HmacKeyring;

    pub(crate) fn sample_tx(auth: &dyn Authenticator) -> ReadingTx {
        let mut tx = ReadingTx {
            tx_id: "t1".into(),
            meter_id: "m1".into(),
            reading: "01234".into(),
            timestamp_ms: 1_550_000_000_000,
            image_digest: "ab".repeat(32),
            geo: Geo::new(-37.8083, 144.9631),
            submitter_sig: Vec::new(),
        };
        tx.sign(auth);
        tx
    }

    #[test]
    fn tx_round_trip_and_signature() {
        let auth = HmacKeyring::from_seed(3);
        let tx = sample_tx(&auth);
        assert!(tx.verify(&auth));
        assert_eq!(ReadingTx::from_bytes(&tx.canonical_bytes()).unwrap(), tx);
        let mut forged = tx.clone();
        forged.reading = "09999".into();
        assert!(!forged.verify(&auth));
    }

    #[test]
    fn endorsement_binds_tx() {
        let auth = HmacKeyring::from_seed(3);
        let tx = sample_tx(&auth);
        let en = Endorsement::issue(&tx, &auth);
        assert!(en.verify(&tx, &auth));
        let mut other = tx.clone();
        other.timestamp_ms += 1;
        assert!(!en.verify(&other, &auth));
        let mut wrong_node = en.clone();
        wrong_node.endorser_id = "customer".into();
        assert!(!wrong_node.verify(&tx, &auth));
    }

    #[test]
    fn block_round_trip() {
        let auth = HmacKeyring::from_seed(3);
        let genesis = Block::genesis(&auth);
        assert_eq!(genesis.prev_digest_hex(), "0".repeat(64));
        let tx = sample_tx(&auth);
        let en = Endorsement::issue(&tx, &auth);
        let block = Block::seal(1, genesis.digest, vec![(tx, en)], &auth);
        let bytes = block.canonical_bytes();
        assert_eq!(Block::from_bytes(&bytes).unwrap(), block);
        assert_eq!(block.compute_digest(), block.digest);
        assert!(Block::from_bytes(&bytes[..bytes.len() - 1]).is_err());
    }
}
