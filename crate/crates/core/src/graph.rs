//! Undirected interaction graph between vehicles.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use crate::dynamics::Trajectory;
use crate::error::ModelError;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct InteractionGraph {
    n: usize,
    edges: BTreeSet<(usize, usize)>,
    neighbors: Vec<Vec<usize>>,
}

impl InteractionGraph {
    /// Graph on `n` vertices; each edge is stored once as `(min, max)`.
    pub fn new(n: usize, edges: impl IntoIterator<Item = (usize, usize)>) -> Result<Self, ModelError> {
        let mut set = BTreeSet::new();
        for (i, j) in edges {
            if i == j {
                return Err(ModelError::InvalidInput(format!("self-loop on vehicle {i}")));
            }
            if i >= n || j >= n {
                return Err(ModelError::InvalidInput(format!("edge ({i}, {j}) outside {n} vehicles")));
            }
            set.insert((i.min(j), i.max(j)));
        }
        let mut neighbors = vec![Vec::new(); n];
        for &(i, j) in &set {
            neighbors[i].push(j);
            neighbors[j].push(i);
        }
        for list in &mut neighbors {
            list.sort_unstable();
        }
        Ok(Self { n, edges: set, neighbors })
    }

    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    /// Sorted neighbor ids of `i`.
    pub fn neighbors(&self, i: usize) -> &[usize] {
        &self.neighbors[i]
    }

    pub fn edges(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        self.edges.iter().copied()
    }

    pub fn num_edges(&self) -> usize {
        self.edges.len()
    }

    pub fn contains(&self, i: usize, j: usize) -> bool {
        self.edges.contains(&(i.min(j), i.max(j)))
    }
}

/// Edge `(i, j)` iff the nominal centers come within `radius` at some common step.
pub fn determine_interaction(profile: &[Trajectory], radius: f64) -> Result<InteractionGraph, ModelError> {
    if !(radius > 0.0) {
        return Err(ModelError::InvalidInput("interaction radius must be positive".into()));
    }
    let mut edges = Vec::new();
    for i in 0..profile.len() {
        for j in i + 1..profile.len() {
            let t = profile[i].horizon().min(profile[j].horizon());
            let close = (1..=t).any(|k| {
                let (a, b) = (profile[i].state(k), profile[j].state(k));
                (a.px - b.px).hypot(a.py - b.py) <= radius
            });
            if close {
                edges.push((i, j));
            }
        }
    }
    InteractionGraph::new(profile.len(), edges)
}
