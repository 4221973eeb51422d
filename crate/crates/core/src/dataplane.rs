//! Data-source catalog and replica resolution.
//!
//! Descriptors travel with registry deltas. Replica sets are not gossiped
//! separately: a node holds a replica iff its own advertisement lists the
//! source, so replicas follow registry convergence and membership.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::cognition::DataLocation;
use crate::membership::SwarmView;
use crate::model::{distance, DataSourceId, NodeId, NodeProfile, Position, TaskSpec};
use crate::registry::Registry;

/// What an owner announces about a source.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DataAnnouncement {
    pub id: DataSourceId,
    pub owner: NodeId,
    /// MiB.
    pub size: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DataSourceDescriptor {
    pub id: DataSourceId,
    pub owner: NodeId,
    pub size: f64,
    pub replicas: BTreeSet<NodeId>,
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum DataError {
    #[error("node {by} cannot announce source {id}, owned by {owner}")]
    NotOwner {
        id: DataSourceId,
        owner: NodeId,
        by: NodeId,
    },
    #[error("source {0} has a non-positive size")]
    BadSize(DataSourceId),
    #[error("source {0} is not in the catalog")]
    Unknown(DataSourceId),
    #[error("no live replica of source {0}")]
    Unavailable(DataSourceId),
}

/// Nearest replica to `reader`, ties to the lowest node id.
pub fn nearest(replicas: &[(NodeId, Position)], reader: Position) -> Option<NodeId> {
    replicas
        .iter()
        .min_by(|a, b| {
            distance(reader, a.1)
                .total_cmp(&distance(reader, b.1))
                .then(a.0.cmp(&b.0))
        })
        .map(|(n, _)| *n)
}

#[derive(Debug, Clone)]
pub struct Catalog {
    me: NodeId,
    known: BTreeMap<DataSourceId, DataAnnouncement>,
}

impl Catalog {
    pub fn new(me: NodeId) -> Self {
        Self {
            me,
            known: BTreeMap::new(),
        }
    }

    /// Local announcement; only the owner may announce.
    pub fn announce(&mut self, ann: DataAnnouncement) -> Result<(), DataError> {
        if ann.owner != self.me {
            return Err(DataError::NotOwner {
                id: ann.id,
                owner: ann.owner,
                by: self.me,
            });
        }
        if ann.size.is_nan() || ann.size <= 0.0 {
            return Err(DataError::BadSize(ann.id));
        }
        self.merge(ann);
        Ok(())
    }

    /// Installs a gossiped announcement. A conflicting claim of ownership
    /// is settled in favour of the lower owner id.
    pub fn merge(&mut self, ann: DataAnnouncement) -> bool {
        match self.known.get(&ann.id) {
            Some(cur) if cur.owner <= ann.owner => false,
            _ => {
                self.known.insert(ann.id, ann);
                true
            }
        }
    }

    pub fn get(&self, id: DataSourceId) -> Option<&DataAnnouncement> {
        self.known.get(&id)
    }

    pub fn ids(&self) -> BTreeSet<DataSourceId> {
        self.known.keys().copied().collect()
    }

    pub fn announcements(&self) -> impl Iterator<Item = &DataAnnouncement> {
        self.known.values()
    }

    pub fn missing_from(&self, have: &BTreeSet<DataSourceId>) -> Vec<DataAnnouncement> {
        self.known.values().filter(|a| !have.contains(&a.id)).copied().collect()
    }

    fn live_replicas(&self, id: DataSourceId, registry: &Registry, view: &SwarmView) -> Vec<(NodeId, Position)> {
        registry
            .entries()
            .filter(|e| view.is_alive(e.node) && e.profile.holds(id))
            .map(|e| (e.node, e.profile.position()))
            .collect()
    }

    pub fn descriptor(
        &self,
        id: DataSourceId,
        registry: &Registry,
        view: &SwarmView,
    ) -> Result<DataSourceDescriptor, DataError> {
        let ann = self.known.get(&id).ok_or(DataError::Unknown(id))?;
        Ok(DataSourceDescriptor {
            id,
            owner: ann.owner,
            size: ann.size,
            replicas: self
                .live_replicas(id, registry, view)
                .into_iter()
                .map(|(n, _)| n)
                .collect(),
        })
    }

    /// The replica `reader` should read from.
    pub fn resolve(
        &self,
        id: DataSourceId,
        reader: Position,
        registry: &Registry,
        view: &SwarmView,
    ) -> Result<NodeId, DataError> {
        self.resolve_excluding(id, reader, registry, view, &BTreeSet::new())
    }

    pub fn resolve_excluding(
        &self,
        id: DataSourceId,
        reader: Position,
        registry: &Registry,
        view: &SwarmView,
        exclude: &BTreeSet<NodeId>,
    ) -> Result<NodeId, DataError> {
        if !self.known.contains_key(&id) {
            return Err(DataError::Unknown(id));
        }
        let mut replicas = self.live_replicas(id, registry, view);
        replicas.retain(|(n, _)| !exclude.contains(n));
        nearest(&replicas, reader).ok_or(DataError::Unavailable(id))
    }

    /// Input locations as seen from `candidate`, for completion prediction.
    /// Inputs without a live replica are left out.
    pub fn locations_for(
        &self,
        task: &TaskSpec,
        candidate: &NodeProfile,
        registry: &Registry,
        view: &SwarmView,
    ) -> BTreeMap<DataSourceId, DataLocation> {
        let mut out = BTreeMap::new();
        for input in &task.input_data {
            if candidate.holds(input.source) {
                out.insert(input.source, DataLocation::Local);
                continue;
            }
            let replicas = self.live_replicas(input.source, registry, view);
            if let Some(n) = nearest(&replicas, candidate.position()) {
                let at = replicas.iter().find(|(m, _)| *m == n).expect("chosen from list").1;
                out.insert(input.source, DataLocation::Remote(at));
            }
        }
        out
    }

    /// Centroid of the replicas nearest to `origin` for each input, or the
    /// origin itself when the task reads nothing (or nothing is reachable).
    pub fn data_centroid(&self, task: &TaskSpec, origin: Position, registry: &Registry, view: &SwarmView) -> Position {
        let points: Vec<Position> = task
            .input_data
            .iter()
            .filter_map(|input| {
                let replicas = self.live_replicas(input.source, registry, view);
                let n = nearest(&replicas, origin)?;
                replicas.iter().find(|(m, _)| *m == n).map(|r| r.1)
            })
            .collect();
        crate::model::centroid(points).unwrap_or(origin)
    }

    pub fn snapshot(&self) -> String {
        #[derive(Serialize)]
        struct Snap<'a> {
            sources: Vec<&'a DataAnnouncement>,
        }
        toml::to_string(&Snap {
            sources: self.known.values().collect(),
        })
        .expect("catalog snapshot serializes")
    }
}

/// An in-progress replication at the receiving node.
#[derive(Debug, Clone, PartialEq)]
pub struct Replication {
    pub id: DataSourceId,
    pub source: NodeId,
    pub started_at: f64,
    pub tried: BTreeSet<NodeId>,
    pub epoch: u64,
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::membership::{MemberState, MemberStatus, SwarmId};
    use crate::model::{fixtures, DataInput};

    fn setup(holders: &[(u64, f64, MemberStatus)], me: u64) -> (Registry, SwarmView) {
        let mut reg = Registry::new(NodeId(me));
        let mut members = BTreeMap::new();
        for (n, x, status) in holders {
            let mut p = fixtures::profile(*n, &["infer"], 1024);
            p.status.position = Position::new(*x, 0.0);
            p.adv.data_sources.insert(DataSourceId(1));
            reg.merge(crate::registry::RegistryEntry {
                node: NodeId(*n),
                profile: p,
                version: crate::registry::Version::new(0, 1),
                stamped_time: 0.0,
            });
            members.insert(
                NodeId(*n),
                MemberState {
                    node: NodeId(*n),
                    status: *status,
                    incarnation: 0,
                    last_update_time: 0.0,
                },
            );
        }
        members.insert(NodeId(me), MemberState::alive(NodeId(me), 0, 0.0));
        (
            reg,
            SwarmView {
                swarm_id: SwarmId(NodeId(0)),
                members,
                view_version: 0,
            },
        )
    }

    fn catalog(me: u64, owner: u64) -> Catalog {
        let mut c = Catalog::new(NodeId(me));
        c.merge(DataAnnouncement {
            id: DataSourceId(1),
            owner: NodeId(owner),
            size: 10.0,
        });
        c
    }

    #[test]
    fn only_owner_announces() {
        let mut c = Catalog::new(NodeId(1));
        let ann = DataAnnouncement {
            id: DataSourceId(5),
            owner: NodeId(2),
            size: 1.0,
        };
        assert!(matches!(c.announce(ann), Err(DataError::NotOwner { .. })));
        assert!(c
            .announce(DataAnnouncement {
                owner: NodeId(1),
                ..ann
            })
            .is_ok());
        assert!(matches!(
            c.announce(DataAnnouncement {
                owner: NodeId(1),
                size: 0.0,
                id: DataSourceId(6)
            }),
            Err(DataError::BadSize(_))
        ));
    }

    #[test]
    fn nearest_replica_wins() {
        let (reg, view) = setup(&[(2, 50.0, MemberStatus::Alive), (3, 500.0, MemberStatus::Alive)], 9);
        let c = catalog(9, 3);
        assert_eq!(
            c.resolve(DataSourceId(1), Position::new(0.0, 0.0), &reg, &view),
            Ok(NodeId(2))
        );
    }

    #[test]
    fn equidistant_replicas_tie_to_lower_id() {
        let (reg, view) = setup(&[(4, 100.0, MemberStatus::Alive), (3, -100.0, MemberStatus::Alive)], 9);
        let c = catalog(9, 3);
        assert_eq!(
            c.resolve(DataSourceId(1), Position::new(0.0, 0.0), &reg, &view),
            Ok(NodeId(3))
        );
    }

    #[test]
    fn reader_holding_the_data_reads_locally() {
        let (reg, view) = setup(&[(2, 0.0, MemberStatus::Alive), (3, 10.0, MemberStatus::Alive)], 2);
        let c = catalog(2, 2);
        assert_eq!(
            c.resolve(DataSourceId(1), Position::new(0.0, 0.0), &reg, &view),
            Ok(NodeId(2))
        );
    }

    #[test]
    fn dead_replicas_are_unavailable() {
        let (reg, view) = setup(&[(2, 0.0, MemberStatus::Dead), (3, 10.0, MemberStatus::Left)], 9);
        let c = catalog(9, 2);
        assert_eq!(
            c.resolve(DataSourceId(1), Position::new(0.0, 0.0), &reg, &view),
            Err(DataError::Unavailable(DataSourceId(1)))
        );
        assert_eq!(
            c.resolve(DataSourceId(7), Position::new(0.0, 0.0), &reg, &view),
            Err(DataError::Unknown(DataSourceId(7)))
        );
    }

    #[test]
    fn descriptor_survives_owner_death() {
        let (reg, view) = setup(&[(2, 0.0, MemberStatus::Dead), (3, 10.0, MemberStatus::Alive)], 9);
        let d = catalog(9, 2).descriptor(DataSourceId(1), &reg, &view).unwrap();
        assert_eq!(d.owner, NodeId(2));
        assert_eq!(d.replicas, BTreeSet::from([NodeId(3)]));
    }

    #[test]
    fn locations_and_centroid() {
        let (reg, view) = setup(&[(2, 100.0, MemberStatus::Alive), (3, 300.0, MemberStatus::Alive)], 9);
        let c = catalog(9, 2);
        let mut t = fixtures::task(1, "infer", 16);
        t.input_data = vec![DataInput {
            source: DataSourceId(1),
            size: 10.0,
        }];
        let mut cand = fixtures::profile(5, &["infer"], 1024);
        cand.status.position = Position::new(250.0, 0.0);
        let locs = c.locations_for(&t, &cand, &reg, &view);
        assert_eq!(locs[&DataSourceId(1)], DataLocation::Remote(Position::new(300.0, 0.0)));
        cand.adv.data_sources.insert(DataSourceId(1));
        assert_eq!(
            c.locations_for(&t, &cand, &reg, &view)[&DataSourceId(1)],
            DataLocation::Local
        );
        assert_eq!(
            c.data_centroid(&t, Position::new(0.0, 0.0), &reg, &view),
            Position::new(100.0, 0.0)
        );
        t.input_data.clear();
        assert_eq!(
            c.data_centroid(&t, Position::new(7.0, 1.0), &reg, &view),
            Position::new(7.0, 1.0)
        );
    }

    #[test]
    fn ownership_conflict_settles_on_lower_id() {
        let mut c = catalog(9, 4);
        assert!(c.merge(DataAnnouncement {
            id: DataSourceId(1),
            owner: NodeId(2),
            size: 3.0
        }));
        assert!(!c.merge(DataAnnouncement {
            id: DataSourceId(1),
            owner: NodeId(6),
            size: 3.0
        }));
        assert_eq!(c.get(DataSourceId(1)).unwrap().owner, NodeId(2));
        assert!(c.snapshot().contains("sources"));
    }
}
