//! Global trainable state: entity and relation embedding tables plus the GNN
//! layer weights, the sparse gradient container, and checkpoint files.

use std::collections::{BTreeMap, BTreeSet};
use std::io::{Read, Write};
use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::model::{ModelParams, PropagationMode};
use crate::server::AggregatedGradient;
use crate::{EntityId, Error, RelationId, Result};

/// Dense row-major table of `rows × dim` reals.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Embeddings {
    dim: usize,
    data: Vec<f64>,
}

impl Embeddings {
    pub fn zeros(rows: usize, dim: usize) -> Self {
        Self { dim, data: vec![0.0; rows * dim] }
    }

    /// I.i.d. uniform entries on `[-1/sqrt(dim), 1/sqrt(dim)]`.
    pub fn uniform<R: Rng + ?Sized>(rows: usize, dim: usize, rng: &mut R) -> Self {
        let bound = 1.0 / (dim as f64).sqrt();
        let data = (0..rows * dim).map(|_| rng.gen_range(-bound..=bound)).collect();
        Self { dim, data }
    }

    pub fn from_rows(dim: usize, data: Vec<f64>) -> Self {
        assert!(dim > 0 && data.len() % dim == 0, "data length must be a multiple of dim");
        Self { dim, data }
    }

    pub fn rows(&self) -> usize {
        self.data.len() / self.dim
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.dim..(i + 1) * self.dim]
    }

    pub fn row_mut(&mut self, i: usize) -> &mut [f64] {
        &mut self.data[i * self.dim..(i + 1) * self.dim]
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SparseEntry {
    pub grad: Vec<f64>,
    /// How many contributions were summed into `grad`.
    pub count: u32,
}

/// Gradient rows keyed by entity or relation id.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct SparseGrad {
    dim: usize,
    entries: BTreeMap<u32, SparseEntry>,
}

impl SparseGrad {
    pub fn new(dim: usize) -> Self {
        Self { dim, entries: BTreeMap::new() }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Adds `grad` into row `id`, creating it if needed.
    pub fn accumulate(&mut self, id: u32, grad: &[f64]) {
        assert_eq!(grad.len(), self.dim, "gradient row has wrong dimension");
        let e = self
            .entries
            .entry(id)
            .or_insert_with(|| SparseEntry { grad: vec![0.0; grad.len()], count: 0 });
        for (a, g) in e.grad.iter_mut().zip(grad) {
            *a += g;
        }
        e.count += 1;
    }

    /// Replaces row `id` outright.
    pub fn insert(&mut self, id: u32, entry: SparseEntry) {
        assert_eq!(entry.grad.len(), self.dim, "gradient row has wrong dimension");
        self.entries.insert(id, entry);
    }

    pub fn get(&self, id: u32) -> Option<&[f64]> {
        self.entries.get(&id).map(|e| e.grad.as_slice())
    }

    pub fn entry(&self, id: u32) -> Option<&SparseEntry> {
        self.entries.get(&id)
    }

    pub fn iter(&self) -> impl Iterator<Item = (u32, &SparseEntry)> {
        self.entries.iter().map(|(k, v)| (*k, v))
    }

    pub fn values_mut(&mut self) -> impl Iterator<Item = &mut [f64]> {
        self.entries.values_mut().map(|e| e.grad.as_mut_slice())
    }

    pub fn keys(&self) -> impl Iterator<Item = u32> + '_ {
        self.entries.keys().copied()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

/// The server's copy of every shared parameter.
#[derive(Debug, Clone, PartialEq)]
pub struct ParameterState {
    pub entity_emb: Embeddings,
    pub relation_emb: Embeddings,
    pub model: ModelParams,
}

impl ParameterState {
    pub fn init<R: Rng + ?Sized>(
        num_entities: usize,
        num_relations: usize,
        dim: usize,
        layers: usize,
        mode: PropagationMode,
        rng: &mut R,
    ) -> Self {
        assert!(num_entities >= 1 && num_relations >= 1 && dim >= 1);
        let entity_emb = Embeddings::uniform(num_entities, dim, rng);
        let relation_emb = Embeddings::uniform(num_relations, dim, rng);
        let model = ModelParams::init(dim, layers, mode, rng);
        Self { entity_emb, relation_emb, model }
    }

    pub fn dim(&self) -> usize {
        self.entity_emb.dim()
    }

    pub fn num_entities(&self) -> usize {
        self.entity_emb.rows()
    }

    pub fn num_relations(&self) -> usize {
        self.relation_emb.rows()
    }

    /// Copies the requested rows out of the tables.
    #[allow(clippy::type_complexity)]
    pub fn gather(
        &self,
        entities: &BTreeSet<EntityId>,
        relations: &BTreeSet<RelationId>,
    ) -> Result<(BTreeMap<EntityId, Vec<f64>>, BTreeMap<RelationId, Vec<f64>>)> {
        let mut ents = BTreeMap::new();
        for &e in entities {
            if e as usize >= self.num_entities() {
                return Err(Error::UnknownEntity(e));
            }
            ents.insert(e, self.entity_emb.row(e as usize).to_vec());
        }
        let mut rels = BTreeMap::new();
        for &r in relations {
            if r as usize >= self.num_relations() {
                return Err(Error::UnknownRelation(r));
            }
            rels.insert(r, self.relation_emb.row(r as usize).to_vec());
        }
        Ok((ents, rels))
    }

    /// Plain gradient descent `p <- p - eta * g` on every parameter the
    /// aggregate touches. The aggregate is validated before anything is
    /// written, so a rejected update leaves the state untouched.
    pub fn apply_global_update(&mut self, avg: &AggregatedGradient, eta: f64) -> Result<()> {
        let d = self.dim();
        for (id, e) in avg.entity_grads.iter() {
            if id as usize >= self.num_entities() {
                return Err(Error::UnknownEntity(id));
            }
            if e.grad.len() != d {
                return Err(Error::Protocol(format!("entity gradient {id} has dimension {}", e.grad.len())));
            }
        }
        for (id, e) in avg.relation_grads.iter() {
            if id as usize >= self.num_relations() {
                return Err(Error::UnknownRelation(id));
            }
            if e.grad.len() != d {
                return Err(Error::Protocol(format!("relation gradient {id} has dimension {}", e.grad.len())));
            }
        }
        if let Some(m) = &avg.model_grads {
            if !self.model.same_shape(m) {
                return Err(Error::Protocol("model gradient shape mismatch".into()));
            }
        }
        if !avg.is_finite() {
            return Err(Error::NonFiniteGradient);
        }

        for (id, e) in avg.entity_grads.iter() {
            step(self.entity_emb.row_mut(id as usize), &e.grad, eta);
        }
        for (id, e) in avg.relation_grads.iter() {
            step(self.relation_emb.row_mut(id as usize), &e.grad, eta);
        }
        if let Some(m) = &avg.model_grads {
            for (layer, g) in self.model.layers.iter_mut().zip(&m.layers) {
                step(&mut layer.weight, &g.weight, eta);
                step(&mut layer.bias, &g.bias, eta);
            }
        }
        Ok(())
    }

    pub fn is_finite(&self) -> bool {
        self.entity_emb.as_slice().iter().all(|v| v.is_finite())
            && self.relation_emb.as_slice().iter().all(|v| v.is_finite())
            && self.model.is_finite()
    }
}

fn step(param: &mut [f64], grad: &[f64], eta: f64) {
    for (p, g) in param.iter_mut().zip(grad) {
        *p -= eta * g;
    }
}

const MAGIC: &[u8; 8] = b"FRKGCKPT";
const VERSION: u32 = 1;

/// On-disk training state: the global parameters and, optionally, the
/// fleet's client-resident user embeddings.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub params: ParameterState,
    pub user_emb: Option<Embeddings>,
}

impl Checkpoint {
    /// Little-endian layout: magic, version, mode byte, `d`, entity rows,
    /// relation rows, layer count, user rows (0 = absent), then the entity
    /// table, relation table, each layer's weight and bias, and user table.
    pub fn encode(&self) -> Vec<u8> {
        let p = &self.params;
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.push(p.model.mode as u8);
        for n in [
            p.dim(),
            p.num_entities(),
            p.num_relations(),
            p.model.layers.len(),
            self.user_emb.as_ref().map_or(0, |u| u.rows()),
        ] {
            out.extend_from_slice(&(n as u64).to_le_bytes());
        }
        let mut put = |xs: &[f64]| xs.iter().for_each(|x| out.extend_from_slice(&x.to_le_bytes()));
        put(p.entity_emb.as_slice());
        put(p.relation_emb.as_slice());
        for l in &p.model.layers {
            put(&l.weight);
            put(&l.bias);
        }
        if let Some(u) = &self.user_emb {
            put(u.as_slice());
        }
        out
    }

    pub fn decode(bytes: &[u8]) -> Result<Self> {
        let mut r = bytes;
        let mut magic = [0u8; 8];
        r.read_exact(&mut magic).map_err(|_| Error::Checkpoint("truncated header".into()))?;
        if &magic != MAGIC {
            return Err(Error::Checkpoint("bad magic".into()));
        }
        let version = read_u32(&mut r)?;
        if version != VERSION {
            return Err(Error::Checkpoint(format!("unsupported version {version}")));
        }
        let mut mode = [0u8; 1];
        r.read_exact(&mut mode).map_err(|_| Error::Checkpoint("truncated header".into()))?;
        let mode = PropagationMode::from_byte(mode[0]).ok_or_else(|| Error::Checkpoint("bad mode".into()))?;
        let d = read_u64(&mut r)? as usize;
        let ne = read_u64(&mut r)? as usize;
        let nr = read_u64(&mut r)? as usize;
        let nl = read_u64(&mut r)? as usize;
        let nu = read_u64(&mut r)? as usize;
        if d == 0 {
            return Err(Error::Checkpoint("zero dimension".into()));
        }
        let expected = (ne * d + nr * d + nl * (d * d + d) + nu * d) * 8;
        if r.len() != expected {
            return Err(Error::Checkpoint(format!("payload is {} bytes, expected {expected}", r.len())));
        }
        let mut take = |n: usize| -> Vec<f64> {
            let (head, tail) = r.split_at(n * 8);
            r = tail;
            head.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect()
        };
        let entity_emb = Embeddings::from_rows(d, take(ne * d));
        let relation_emb = Embeddings::from_rows(d, take(nr * d));
        let layers = (0..nl)
            .map(|_| crate::model::LayerParams { weight: take(d * d), bias: take(d) })
            .collect();
        let user_emb = (nu > 0).then(|| Embeddings::from_rows(d, take(nu * d)));
        Ok(Self {
            params: ParameterState { entity_emb, relation_emb, model: ModelParams { dim: d, mode, layers } },
            user_emb,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut f = std::fs::File::create(path)?;
        f.write_all(&self.encode())?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::Checkpoint(format!("{}: {e}", path.display())))?;
        Self::decode(&bytes)
    }
}

fn read_u32(r: &mut &[u8]) -> Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b).map_err(|_| Error::Checkpoint("truncated header".into()))?;
    Ok(u32::from_le_bytes(b))
}

fn read_u64(r: &mut &[u8]) -> Result<u64> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b).map_err(|_| Error::Checkpoint("truncated header".into()))?;
    Ok(u64::from_le_bytes(b))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::SimRng;
    use rand::SeedableRng;

    fn state(seed: u64) -> ParameterState {
        ParameterState::init(6, 2, 2, 1, PropagationMode::Transform, &mut SimRng::seed_from_u64(seed))
    }

    fn entity_update(id: EntityId, g: Vec<f64>) -> AggregatedGradient {
        let mut a = AggregatedGradient::empty(g.len());
        a.entity_grads.insert(id, SparseEntry { grad: g, count: 1 });
        a
    }

    #[test]
    fn init_respects_bound_and_shape() {
        let s = ParameterState::init(9366, 60, 16, 1, PropagationMode::Transform, &mut SimRng::seed_from_u64(0));
        assert_eq!((s.entity_emb.rows(), s.entity_emb.dim()), (9366, 16));
        assert_eq!((s.relation_emb.rows(), s.relation_emb.dim()), (60, 16));
        let within = |v: &f64| v.abs() <= 0.25;
        assert!(s.entity_emb.as_slice().iter().all(within));
        assert!(s.relation_emb.as_slice().iter().all(within));
    }

    #[test]
    fn init_unit_dims() {
        let s = ParameterState::init(1, 1, 1, 0, PropagationMode::Replace, &mut SimRng::seed_from_u64(4));
        assert_eq!(s.entity_emb.as_slice().len(), 1);
        assert!(s.entity_emb.row(0)[0].abs() <= 1.0);
        assert!(s.relation_emb.row(0)[0].abs() <= 1.0);
    }

    #[test]
    fn init_is_deterministic() {
        assert_eq!(state(3), state(3));
        assert_ne!(state(3), state(4));
    }

    #[test]
    fn gather_copies_rows() {
        let mut s = state(1);
        s.entity_emb.row_mut(3).fill(1.0);
        let (e, r) = s.gather(&BTreeSet::new(), &BTreeSet::new()).unwrap();
        assert!(e.is_empty() && r.is_empty());
        let (mut e, _) = s.gather(&[3].into(), &BTreeSet::new()).unwrap();
        assert_eq!(e[&3], vec![1.0, 1.0]);
        e.get_mut(&3).unwrap()[0] = 5.0;
        assert_eq!(s.entity_emb.row(3), &[1.0, 1.0]);
        assert!(matches!(s.gather(&[6].into(), &BTreeSet::new()), Err(Error::UnknownEntity(6))));
        assert!(matches!(s.gather(&BTreeSet::new(), &[2].into()), Err(Error::UnknownRelation(2))));
    }

    #[test]
    fn gather_sees_updates() {
        let mut s = state(1);
        let before = s.gather(&[2, 4].into(), &BTreeSet::new()).unwrap().0;
        s.apply_global_update(&entity_update(2, vec![1.0, -1.0]), 0.5).unwrap();
        let after = s.gather(&[2, 4].into(), &BTreeSet::new()).unwrap().0;
        assert_eq!(after[&2], vec![before[&2][0] - 0.5, before[&2][1] + 0.5]);
        assert_eq!(after[&4], before[&4]);
    }

    #[test]
    fn update_arithmetic() {
        let mut s = state(0);
        s.entity_emb.row_mut(0).copy_from_slice(&[1.0, 1.0]);
        s.apply_global_update(&entity_update(0, vec![0.5, 0.5]), 0.02).unwrap();
        assert_eq!(s.entity_emb.row(0), &[0.99, 0.99]);

        s.entity_emb.row_mut(1).copy_from_slice(&[1.0, 1.0]);
        s.apply_global_update(&entity_update(1, vec![1.0, 1.0]), 5e-4).unwrap();
        assert_eq!(s.entity_emb.row(1), &[0.9995, 0.9995]);
    }

    #[test]
    fn empty_update_is_identity() {
        let mut s = state(2);
        let before = s.clone();
        s.apply_global_update(&AggregatedGradient::empty(2), 0.1).unwrap();
        assert_eq!(s, before);
    }

    #[test]
    fn nan_update_is_rejected_without_side_effects() {
        let mut s = state(2);
        let before = s.clone();
        let mut a = entity_update(0, vec![1.0, 1.0]);
        a.entity_grads.insert(5, SparseEntry { grad: vec![f64::NAN, 0.0], count: 1 });
        assert!(matches!(s.apply_global_update(&a, 0.1), Err(Error::NonFiniteGradient)));
        assert_eq!(s, before);
        assert!(s.apply_global_update(&entity_update(9, vec![0.0, 0.0]), 0.1).is_err());
        assert_eq!(s, before);
    }

    #[test]
    fn checkpoint_round_trips_bitwise() {
        let s = state(9);
        let ck = Checkpoint { params: s.clone(), user_emb: Some(Embeddings::uniform(3, 2, &mut SimRng::seed_from_u64(1))) };
        let back = Checkpoint::decode(&ck.encode()).unwrap();
        assert_eq!(back, ck);
        let bare = Checkpoint { params: s, user_emb: None };
        assert_eq!(Checkpoint::decode(&bare.encode()).unwrap(), bare);
        let mut bytes = bare.encode();
        bytes.pop();
        assert!(Checkpoint::decode(&bytes).is_err());
    }

    #[test]
    fn sparse_grad_counts_contributions() {
        let mut g = SparseGrad::new(2);
        g.accumulate(4, &[1.0, 2.0]);
        g.accumulate(4, &[0.5, 0.5]);
        assert_eq!(g.get(4), Some(&[1.5, 2.5][..]));
        assert_eq!(g.entry(4).unwrap().count, 2);
        assert!(g.get(1).is_none());
    }
}
