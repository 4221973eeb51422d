//! Eventually consistent registry of node profiles.
//!
//! Each node owns its own entry and is the only one allowed to change it;
//! everyone else installs entries through gossip with last-writer-wins by
//! version.

use std::cmp::Ordering;
use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::membership::{MemberStatus, SwarmView};
use crate::model::{NodeId, NodeProfile};
use crate::sim::rng::fnv1a64;

/// Ordered lexicographically: a rejoin with a higher incarnation beats any
/// status update of the previous life.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize, Default)]
pub struct Version {
    pub incarnation: u64,
    pub status_version: u64,
}

impl Version {
    pub fn new(incarnation: u64, status_version: u64) -> Self {
        Self {
            incarnation,
            status_version,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegistryEntry {
    pub node: NodeId,
    pub profile: NodeProfile,
    pub version: Version,
    pub stamped_time: f64,
}

impl RegistryEntry {
    fn content_digest(&self) -> u64 {
        let bytes = serde_json::to_vec(&self.profile).expect("profiles serialize");
        fnv1a64(&bytes)
    }
}

/// Total order used by last-writer-wins.
fn lww_cmp(a: &RegistryEntry, b: &RegistryEntry) -> Ordering {
    a.version
        .cmp(&b.version)
        .then_with(|| a.stamped_time.total_cmp(&b.stamped_time))
        .then_with(|| {
            if a.profile == b.profile {
                Ordering::Equal
            } else {
                a.content_digest().cmp(&b.content_digest())
            }
        })
}

/// Join of two entries for the same node.
pub fn merge_entry(a: &RegistryEntry, b: &RegistryEntry) -> RegistryEntry {
    if lww_cmp(b, a) == Ordering::Greater {
        b.clone()
    } else {
        a.clone()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct RegistryDigest(pub BTreeMap<NodeId, Version>);

#[derive(Debug, Clone, PartialEq, Error)]
pub enum RegistryError {
    #[error("node {owner} may not write the entry of node {node}")]
    ForeignUpdate { owner: NodeId, node: NodeId },
}

/// A query result; `stale` marks entries of Suspect members.
#[derive(Debug, Clone, PartialEq)]
pub struct QueryHit<'a> {
    pub entry: &'a RegistryEntry,
    pub stale: bool,
}

#[derive(Debug, Clone)]
pub struct Registry {
    me: NodeId,
    entries: BTreeMap<NodeId, RegistryEntry>,
    // evicted nodes and the version they had
    tombstones: BTreeMap<NodeId, Version>,
}

impl Registry {
    pub fn new(me: NodeId) -> Self {
        Self {
            me,
            entries: BTreeMap::new(),
            tombstones: BTreeMap::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn get(&self, node: NodeId) -> Option<&RegistryEntry> {
        self.entries.get(&node)
    }

    pub fn entries(&self) -> impl Iterator<Item = &RegistryEntry> {
        self.entries.values()
    }

    /// Publishes a change of this node's own profile.
    pub fn local_update(
        &mut self,
        mut profile: NodeProfile,
        incarnation: u64,
        now: f64,
    ) -> Result<&RegistryEntry, RegistryError> {
        if profile.node != self.me {
            return Err(RegistryError::ForeignUpdate {
                owner: self.me,
                node: profile.node,
            });
        }
        let prev = self
            .entries
            .get(&self.me)
            .map(|e| e.version.status_version)
            .unwrap_or(profile.status.status_version);
        let status_version = prev + 1;
        profile.status.status_version = status_version;
        let entry = RegistryEntry {
            node: self.me,
            profile,
            version: Version::new(incarnation, status_version),
            stamped_time: now,
        };
        self.entries.insert(self.me, entry);
        Ok(&self.entries[&self.me])
    }

    /// Installs a gossiped entry if it is newer. Returns true on change.
    pub fn merge(&mut self, entry: RegistryEntry) -> bool {
        if entry.node == self.me && self.entries.contains_key(&self.me) {
            // our own entry is authoritative; a newer copy can only come
            // from a previous life and is overwritten at the next update
            return false;
        }
        if self.tombstones.get(&entry.node).is_some_and(|v| entry.version <= *v) {
            return false;
        }
        match self.entries.get(&entry.node) {
            Some(cur) if lww_cmp(&entry, cur) != Ordering::Greater => false,
            _ => {
                self.tombstones.remove(&entry.node);
                self.entries.insert(entry.node, entry);
                true
            }
        }
    }

    pub fn digest(&self) -> RegistryDigest {
        RegistryDigest(self.entries.iter().map(|(n, e)| (*n, e.version)).collect())
    }

    /// Entries the holder of `digest` is missing or has older versions of.
    pub fn newer_than(&self, digest: &RegistryDigest) -> Vec<RegistryEntry> {
        self.entries
            .values()
            .filter(|e| digest.0.get(&e.node).is_none_or(|v| e.version > *v))
            .cloned()
            .collect()
    }

    /// Entries of members that are not Dead or Left and satisfy the
    /// predicate, ordered by node id.
    pub fn query<F>(&self, view: &SwarmView, pred: F) -> Vec<QueryHit<'_>>
    where
        F: Fn(&RegistryEntry) -> bool,
    {
        self.entries
            .values()
            .filter_map(|e| {
                let status = view.status(e.node)?;
                if !status.is_live() || !pred(e) {
                    return None;
                }
                Some(QueryHit {
                    entry: e,
                    stale: status == MemberStatus::Suspect,
                })
            })
            .collect()
    }

    pub fn evict(&mut self, node: NodeId) -> Option<RegistryEntry> {
        let e = self.entries.remove(&node)?;
        let v = self.tombstones.entry(node).or_default();
        *v = (*v).max(e.version);
        Some(e)
    }

    /// Order-independent fingerprint of the installed versions.
    pub fn content_hash(&self) -> u64 {
        let mut bytes = Vec::with_capacity(self.entries.len() * 24);
        for (n, e) in &self.entries {
            bytes.extend_from_slice(&n.0.to_le_bytes());
            bytes.extend_from_slice(&e.version.incarnation.to_le_bytes());
            bytes.extend_from_slice(&e.version.status_version.to_le_bytes());
        }
        fnv1a64(&bytes)
    }

    /// TOML snapshot for inspection and test assertions.
    pub fn snapshot(&self) -> String {
        #[derive(Serialize)]
        struct Snap<'a> {
            entries: Vec<&'a RegistryEntry>,
        }
        toml::to_string(&Snap {
            entries: self.entries.values().collect(),
        })
        .expect("registry snapshot serializes")
    }

    pub fn known_nodes(&self) -> BTreeSet<NodeId> {
        self.entries.keys().copied().collect()
    }
}
