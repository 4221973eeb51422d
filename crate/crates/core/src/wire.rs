//! Wire messages and their CBOR encoding.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dataplane::DataAnnouncement;
use crate::membership::{MemberState, SwarmId, SwarmView};
use crate::model::{DataSourceId, TaskId, TaskSpec};
use crate::registry::{RegistryDigest, RegistryEntry};
use crate::scheduler::RejectReason;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Envelope {
    pub swarm: SwarmId,
    /// Piggybacked membership deltas.
    pub deltas: Vec<MemberState>,
    pub body: Message,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FailCause {
    Leaving,
    DataUnavailable,
    Expired,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Message {
    Hello,
    HelloAck {
        view: SwarmView,
    },
    Ping {
        seq: u64,
    },
    Ack {
        seq: u64,
    },
    Digest {
        registry: RegistryDigest,
        sources: BTreeSet<DataSourceId>,
    },
    Delta {
        entries: Vec<RegistryEntry>,
        sources: Vec<DataAnnouncement>,
        /// Present on the reply to a DIGEST so the initiator can send back
        /// what the peer lacks.
        digest: Option<(RegistryDigest, BTreeSet<DataSourceId>)>,
    },
    Offer {
        task: TaskSpec,
        attempt: u32,
        deadline_at: f64,
    },
    Accept {
        task: TaskId,
        attempt: u32,
    },
    Reject {
        task: TaskId,
        attempt: u32,
        reason: RejectReason,
    },
    Claim {
        task: TaskId,
        attempt: u32,
    },
    Cancel {
        task: TaskId,
        attempt: u32,
    },
    Nack {
        task: TaskId,
        attempt: u32,
    },
    Done {
        task: TaskId,
        attempt: u32,
        transfer_time: f64,
    },
    Failed {
        task: TaskId,
        attempt: u32,
        cause: FailCause,
    },
    QosWarn {
        task: TaskId,
        attempt: u32,
        projected_finish: f64,
    },
    Fetch {
        source: DataSourceId,
        /// Receiver's link bandwidth, MiB/s.
        bandwidth: f64,
    },
    Data {
        source: DataSourceId,
    },
}

impl Message {
    pub fn label(&self) -> &'static str {
        match self {
            Message::Hello => "HELLO",
            Message::HelloAck { .. } => "HELLO-ACK",
            Message::Ping { .. } => "PING",
            Message::Ack { .. } => "ACK",
            Message::Digest { .. } => "DIGEST",
            Message::Delta { .. } => "DELTA",
            Message::Offer { .. } => "OFFER",
            Message::Accept { .. } => "ACCEPT",
            Message::Reject { .. } => "REJECT",
            Message::Claim { .. } => "CLAIM",
            Message::Cancel { .. } => "CANCEL",
            Message::Nack { .. } => "NACK",
            Message::Done { .. } => "DONE",
            Message::Failed { .. } => "FAILED",
            Message::QosWarn { .. } => "QOS-WARN",
            Message::Fetch { .. } => "FETCH",
            Message::Data { .. } => "DATA",
        }
    }
}

pub const LABELS: [&str; 17] = [
    "HELLO",
    "HELLO-ACK",
    "PING",
    "ACK",
    "DIGEST",
    "DELTA",
    "OFFER",
    "ACCEPT",
    "REJECT",
    "CLAIM",
    "CANCEL",
    "NACK",
    "DONE",
    "FAILED",
    "QOS-WARN",
    "FETCH",
    "DATA",
];

#[derive(Debug, Error)]
pub enum WireError {
    #[error("decode: {0}")]
    Decode(String),
}

pub fn encode(env: &Envelope) -> Vec<u8> {
    let mut buf = Vec::with_capacity(64);
    ciborium::into_writer(env, &mut buf).expect("in-memory CBOR encoding cannot fail");
    buf
}

pub fn decode(bytes: &[u8]) -> Result<Envelope, WireError> {
    ciborium::from_reader(bytes).map_err(|e| WireError::Decode(e.to_string()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::membership::MemberStatus;
    use crate::model::{fixtures, NodeId};

    fn env(body: Message) -> Envelope {
        Envelope {
            swarm: SwarmId(NodeId(3)),
            deltas: vec![MemberState {
                node: NodeId(4),
                status: MemberStatus::Suspect,
                incarnation: 2,
                last_update_time: 1.5,
            }],
            body,
        }
    }

    #[test]
    fn round_trips() {
        let bodies = vec![
            Message::Hello,
            Message::HelloAck {
                view: SwarmView::singleton(NodeId(1), 0, 0.0),
            },
            Message::Ping { seq: 7 },
            Message::Offer {
                task: fixtures::task(1, "infer", 16),
                attempt: 2,
                deadline_at: 30.0,
            },
            Message::Reject {
                task: TaskId(1),
                attempt: 1,
                reason: RejectReason::Memory,
            },
            Message::Failed {
                task: TaskId(1),
                attempt: 1,
                cause: FailCause::Leaving,
            },
            Message::Fetch {
                source: DataSourceId(2),
                bandwidth: 5.0,
            },
        ];
        for b in bodies {
            let e = env(b);
            assert_eq!(decode(&encode(&e)).unwrap(), e);
            assert!(LABELS.contains(&e.body.label()));
        }
    }

    #[test]
    fn garbage_is_an_error() {
        assert!(decode(&[0xff, 0x00, 0x13]).is_err());
    }
}
