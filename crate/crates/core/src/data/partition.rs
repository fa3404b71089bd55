use std::collections::BTreeMap;

use super::{DataError, Dataset};
use crate::numerics::{Rng, Seed};

/// Disjoint per-client index lists.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Partition {
    pub assignments: BTreeMap<u32, Vec<usize>>,
}

impl Partition {
    pub fn indices(&self, client_id: u32) -> &[usize] {
        self.assignments.get(&client_id).map_or(&[], Vec::as_slice)
    }

    pub fn is_disjoint(&self) -> bool {
        let mut seen = std::collections::HashSet::new();
        self.assignments.values().flatten().all(|i| seen.insert(*i))
    }
}

/// Gives each of `clients` clients `per_client` distinct random samples.
pub fn partition_random(ds: &Dataset, clients: usize, per_client: usize, seed: &Seed) -> Result<Partition, DataError> {
    let needed = clients * per_client;
    if needed > ds.len() {
        return Err(DataError::Insufficient { needed, available: ds.len() });
    }
    let mut rng = Rng::stream(seed, "data/partition");
    let mut order: Vec<usize> = (0..ds.len()).collect();
    for i in (1..order.len()).rev() {
        let j = rng.below(i + 1);
        order.swap(i, j);
    }
    let assignments = order
        .chunks(per_client.max(1))
        .take(clients)
        .enumerate()
        .map(|(c, idx)| (c as u32, if per_client == 0 { Vec::new() } else { idx.to_vec() }))
        .collect();
    Ok(Partition { assignments })
}
