//! Permissioned reading ledger: a customer node proposes signed readings, an
//! endorser checks them against its own chain copy, and an orderer batches endorsed
//! transactions into hash-linked blocks that every node appends.

mod auth;
pub mod bus;
pub mod codec;
pub mod file;
pub mod network;
pub mod node;
mod state;
mod types;

pub use auth::{Authenticator, HmacKeyring};
pub use bus::{BusConfig, SimBus};
pub use network::{LedgerConfig, Network};
pub use node::{OrderError, ProposeError, RejectReason, Rejection, TxStatus};
pub use state::{verify_chain, AppendError, ChainFault, LedgerState};
pub use types::{Block, Endorsement, Geo, ReadingTx, GENESIS_PREV};

use std::fmt;
use std::str::FromStr;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum NodeId {
    Customer,
    Endorser,
    Orderer,
}

impl NodeId {
    pub const ALL: [NodeId; 3] = [NodeId::Customer, NodeId::Endorser, NodeId::Orderer];

    pub fn as_str(self) -> &'static str {
        match self {
            NodeId::Customer => "customer",
            NodeId::Endorser => "ea",
            NodeId::Orderer => "orderer",
        }
    }
}

impl fmt::Display for NodeId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for NodeId {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        NodeId::ALL.into_iter().find(|id| id.as_str() == s).ok_or_else(|| format!("unknown node `{s}`"))
    }
}
