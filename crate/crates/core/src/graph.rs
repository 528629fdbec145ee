//! Finite directed state graph over road links.
//!
//! States are road links; an edge `x -> x'` means a vehicle occupying link
//! `x` can move onto link `x'` next. Successor lists are the canonical
//! alignment for every probability vector in this crate: the i-th entry of a
//! row conditioned on `x` is the probability of moving to `successors(x)[i]`.

use std::collections::{BTreeMap, BTreeSet, VecDeque};

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Index of a state in its [`LinkGraph`].
#[derive(
    Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize,
)]
pub struct StateId(pub usize);

impl StateId {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Ordered set of states, used for safe sets and reachability closures.
pub type StateSet = BTreeSet<StateId>;

#[derive(Debug, Error)]
pub enum GraphError {
    #[error("duplicate state id `{0}`")]
    DuplicateState(String),
    #[error("state `{state}` lists unknown successor `{successor}`")]
    UnknownSuccessor { state: String, successor: String },
    #[error("state `{0}` has no successors; every state needs at least one outgoing transition")]
    NoSuccessors(String),
    #[error("unknown state `{0}`")]
    UnknownState(String),
}

/// Finite directed graph of states with nonempty, ordered successor lists.
///
/// Immutable after construction.
#[derive(Debug, Clone, PartialEq)]
pub struct LinkGraph {
    ids: Vec<String>,
    index: BTreeMap<String, StateId>,
    successors: Vec<Vec<StateId>>,
}

impl LinkGraph {
    /// Builds a graph from `(state, successor names)` pairs.
    ///
    /// The pair order fixes the state order, and each successor list order is
    /// preserved verbatim; both orders are load-bearing for row alignment.
    pub fn new(entries: Vec<(String, Vec<String>)>) -> Result<Self, GraphError> {
        let mut ids = Vec::with_capacity(entries.len());
        let mut index = BTreeMap::new();
        for (i, (id, _)) in entries.iter().enumerate() {
            if index.insert(id.clone(), StateId(i)).is_some() {
                return Err(GraphError::DuplicateState(id.clone()));
            }
            ids.push(id.clone());
        }
        let mut successors = Vec::with_capacity(entries.len());
        for (id, succ_names) in &entries {
            if succ_names.is_empty() {
                return Err(GraphError::NoSuccessors(id.clone()));
            }
            let mut succs = Vec::with_capacity(succ_names.len());
            for name in succ_names {
                let sid = index
                    .get(name)
                    .copied()
                    .ok_or_else(|| GraphError::UnknownSuccessor {
                        state: id.clone(),
                        successor: name.clone(),
                    })?;
                succs.push(sid);
            }
            successors.push(succs);
        }
        Ok(Self {
            ids,
            index,
            successors,
        })
    }

    pub fn state_count(&self) -> usize {
        self.ids.len()
    }

    pub fn states(&self) -> impl Iterator<Item = StateId> + '_ {
        (0..self.ids.len()).map(StateId)
    }

    /// Human-readable identifier of a state.
    pub fn id(&self, state: StateId) -> &str {
        &self.ids[state.0]
    }

    pub fn lookup(&self, id: &str) -> Option<StateId> {
        self.index.get(id).copied()
    }

    pub fn require(&self, id: &str) -> Result<StateId, GraphError> {
        self.lookup(id)
            .ok_or_else(|| GraphError::UnknownState(id.to_string()))
    }

    pub fn successors(&self, state: StateId) -> &[StateId] {
        &self.successors[state.0]
    }

    pub fn out_degree(&self, state: StateId) -> usize {
        self.successors[state.0].len()
    }

    pub fn max_out_degree(&self) -> usize {
        self.successors.iter().map(Vec::len).max().unwrap_or(0)
    }

    /// Forward closure: every state reachable from `start` in at most
    /// `depth` hops, `start` included.
    pub fn reachable_within(&self, start: StateId, depth: usize) -> StateSet {
        let mut seen: StateSet = StateSet::new();
        seen.insert(start);
        let mut frontier = VecDeque::from([start]);
        for _ in 0..depth {
            let mut next = VecDeque::new();
            while let Some(x) = frontier.pop_front() {
                for &s in self.successors(x) {
                    if seen.insert(s) {
                        next.push_back(s);
                    }
                }
            }
            if next.is_empty() {
                break;
            }
            frontier = next;
        }
        seen
    }
}
