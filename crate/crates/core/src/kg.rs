//! Server-side knowledge graph: triple storage, fixed-size neighbor sampling
//! and receptive-field extraction around requested items.

use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::{EntityId, Error, RelationId, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Triple {
    pub head: EntityId,
    pub relation: RelationId,
    pub tail: EntityId,
}

impl Triple {
    pub fn new(head: EntityId, relation: RelationId, tail: EntityId) -> Self {
        Self { head, relation, tail }
    }
}

/// One sampled edge as seen from its center entity.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Neighbor {
    pub relation: RelationId,
    pub entity: EntityId,
}

/// Immutable triple store, indexed as an undirected multigraph.
#[derive(Debug, Clone)]
pub struct KnowledgeGraph {
    num_entities: usize,
    num_relations: usize,
    num_triples: usize,
    adjacency: Vec<Vec<Neighbor>>,
}

impl KnowledgeGraph {
    /// Builds the adjacency. Every triple `(h, r, t)` is reachable from both
    /// ends; exact duplicate triples are dropped.
    pub fn build(triples: &[Triple], num_entities: usize, num_relations: usize) -> Result<Self> {
        let mut adjacency = vec![Vec::new(); num_entities];
        let mut seen = HashSet::with_capacity(triples.len());
        for &t in triples {
            if t.head as usize >= num_entities
                || t.tail as usize >= num_entities
                || t.relation as usize >= num_relations
            {
                return Err(Error::TripleOutOfRange {
                    head: t.head,
                    relation: t.relation,
                    tail: t.tail,
                    num_entities,
                    num_relations,
                });
            }
            if !seen.insert(t) {
                continue;
            }
            adjacency[t.head as usize].push(Neighbor { relation: t.relation, entity: t.tail });
            adjacency[t.tail as usize].push(Neighbor { relation: t.relation, entity: t.head });
        }
        Ok(Self { num_entities, num_relations, num_triples: seen.len(), adjacency })
    }

    pub fn num_entities(&self) -> usize {
        self.num_entities
    }

    pub fn num_relations(&self) -> usize {
        self.num_relations
    }

    /// Number of distinct triples stored.
    pub fn num_triples(&self) -> usize {
        self.num_triples
    }

    pub fn neighbors(&self, entity: EntityId) -> &[Neighbor] {
        &self.adjacency[entity as usize]
    }

    pub fn degree(&self, entity: EntityId) -> usize {
        self.adjacency[entity as usize].len()
    }

    pub fn contains_edge(&self, center: EntityId, n: Neighbor) -> bool {
        (center as usize) < self.num_entities && self.adjacency[center as usize].contains(&n)
    }

    /// Draws `k` neighbors uniformly with replacement. Isolated entities get
    /// an empty list.
    pub fn sample_neighbors<R: Rng + ?Sized>(&self, entity: EntityId, k: usize, rng: &mut R) -> Vec<Neighbor> {
        let adj = &self.adjacency[entity as usize];
        if adj.is_empty() {
            return Vec::new();
        }
        (0..k).map(|_| adj[rng.gen_range(0..adj.len())]).collect()
    }

    /// Samples an `depth`-hop receptive field around `anchors`.
    ///
    /// Layer 0 is centered on the anchors; layer `l` is centered on every
    /// distinct entity sampled in layer `l - 1`. Centers are visited in id
    /// order so the result only depends on the generator state.
    pub fn sample_subgraph<R: Rng + ?Sized>(
        &self,
        anchors: &[EntityId],
        k: usize,
        depth: usize,
        rng: &mut R,
    ) -> Result<Subgraph> {
        for &a in anchors {
            if a as usize >= self.num_entities {
                return Err(Error::UnknownEntity(a));
            }
        }
        let mut entities: BTreeSet<EntityId> = anchors.iter().copied().collect();
        let mut relations = BTreeSet::new();
        let mut layers = Vec::with_capacity(depth);
        let mut centers: BTreeSet<EntityId> = entities.clone();
        for _ in 0..depth {
            let mut layer = BTreeMap::new();
            let mut next = BTreeSet::new();
            for &c in &centers {
                let sampled = self.sample_neighbors(c, k, rng);
                for n in &sampled {
                    next.insert(n.entity);
                    entities.insert(n.entity);
                    relations.insert(n.relation);
                }
                layer.insert(c, sampled);
            }
            layers.push(layer);
            centers = next;
        }
        Ok(Subgraph { anchors: anchors.to_vec(), layers, entities, relations })
    }
}

/// A sampled receptive field: `layers[l]` maps each center at hop distance
/// `l` to its `K` sampled neighbors (empty for isolated centers).
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Subgraph {
    pub anchors: Vec<EntityId>,
    pub layers: Vec<BTreeMap<EntityId, Vec<Neighbor>>>,
    pub entities: BTreeSet<EntityId>,
    pub relations: BTreeSet<RelationId>,
}

impl Subgraph {
    pub fn depth(&self) -> usize {
        self.layers.len()
    }

    /// Entities whose vectors are needed at hop distance `l` (anchors at 0,
    /// sampled tails of layer `l - 1` otherwise).
    pub fn entities_at(&self, l: usize) -> Vec<EntityId> {
        if l == 0 {
            let set: BTreeSet<_> = self.anchors.iter().copied().collect();
            return set.into_iter().collect();
        }
        let set: BTreeSet<EntityId> = self.layers[l - 1]
            .values()
            .flat_map(|ns| ns.iter().map(|n| n.entity))
            .collect();
        set.into_iter().collect()
    }

    /// Restricts the receptive field to fewer hops.
    pub fn truncated(&self, depth: usize) -> Subgraph {
        let layers: Vec<_> = self.layers.iter().take(depth).cloned().collect();
        let mut entities: BTreeSet<EntityId> = self.anchors.iter().copied().collect();
        let mut relations = BTreeSet::new();
        for layer in &layers {
            for n in layer.values().flatten() {
                entities.insert(n.entity);
                relations.insert(n.relation);
            }
        }
        Subgraph { anchors: self.anchors.clone(), layers, entities, relations }
    }
}

/// Reads `head relation tail` lines. Blank lines and `#` comments are skipped.
pub fn read_triples(path: &Path) -> Result<Vec<Triple>> {
    let file = std::fs::File::open(path).map_err(|e| Error::Dataset(format!("{}: {e}", path.display())))?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line?;
        let body = line.split('#').next().unwrap_or("").trim();
        if body.is_empty() {
            continue;
        }
        let parse_err = |msg: &str| Error::Parse { path: path.to_path_buf(), line: i + 1, msg: msg.to_string() };
        let fields: Vec<&str> = body.split_whitespace().collect();
        if fields.len() != 3 {
            return Err(parse_err("expected `head relation tail`"));
        }
        let mut ids = [0u32; 3];
        for (slot, f) in ids.iter_mut().zip(&fields) {
            *slot = f.parse().map_err(|_| parse_err(&format!("not a non-negative integer: {f:?}")))?;
        }
        out.push(Triple::new(ids[0], ids[1], ids[2]));
    }
    Ok(out)
}

pub fn write_triples(path: &Path, triples: &[Triple]) -> Result<()> {
    let mut w = std::io::BufWriter::new(std::fs::File::create(path)?);
    for t in triples {
        writeln!(w, "{}\t{}\t{}", t.head, t.relation, t.tail)?;
    }
    w.flush()?;
    Ok(())
}
