//! Server-bound messages and their byte encoding.
//!
//! Both messages are little-endian with a 4-byte tag and a `u16` version:
//!
//! ```text
//! RequestMessage  "FRQ1" version:u16 client:u32 n:u32 item:u32 * n
//! GradientUpload  "FRU1" version:u16 client:u32 weight:u32 dim:u32
//!                 n_ent:u32 (id:u32 f64*dim) * n_ent
//!                 n_rel:u32 (id:u32 f64*dim) * n_rel
//!                 mode:u8 n_layers:u32 (f64*dim*dim f64*dim) * n_layers
//! ```
//!
//! Neither message has room for labels, losses or user embeddings.

use serde::{Deserialize, Serialize};

use crate::model::{GradientPacket, LayerParams, ModelParams, PropagationMode};
use crate::params::{SparseEntry, SparseGrad};
use crate::{EntityId, Error, Result};

pub const WIRE_VERSION: u16 = 1;
const REQUEST_TAG: &[u8; 4] = b"FRQ1";
const UPLOAD_TAG: &[u8; 4] = b"FRU1";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RequestMessage {
    pub version: u16,
    pub client: u32,
    pub items: Vec<EntityId>,
}

impl RequestMessage {
    pub fn new(client: u32, items: Vec<EntityId>) -> Self {
        Self { version: WIRE_VERSION, client, items }
    }

    pub fn encode(&self) -> Vec<u8> {
        let mut w = Writer::with_header(REQUEST_TAG, self.version);
        w.u32(self.client);
        w.u32(self.items.len() as u32);
        self.items.iter().for_each(|&i| w.u32(i));
        w.0
    }

    pub fn decode(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader::with_header(bytes, REQUEST_TAG)?;
        let version = r.version;
        let client = r.u32()?;
        let n = r.u32()? as usize;
        let items = (0..n).map(|_| r.u32()).collect::<Result<_>>()?;
        r.finish()?;
        Ok(Self { version, client, items })
    }
}

/// The server-visible part of a [`GradientPacket`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GradientUpload {
    pub version: u16,
    pub client: u32,
    pub weight: u32,
    pub entity_grads: SparseGrad,
    pub relation_grads: SparseGrad,
    pub model_grads: ModelParams,
}

impl GradientUpload {
    /// Drops everything that must stay on the client.
    pub fn from_packet(client: u32, packet: GradientPacket) -> Self {
        Self {
            version: WIRE_VERSION,
            client,
            weight: packet.weight,
            entity_grads: packet.entity_grads,
            relation_grads: packet.relation_grads,
            model_grads: packet.model_grads,
        }
    }

    pub fn encode(&self) -> Vec<u8> {
        let d = self.model_grads.dim;
        let mut w = Writer::with_header(UPLOAD_TAG, self.version);
        w.u32(self.client);
        w.u32(self.weight);
        w.u32(d as u32);
        for g in [&self.entity_grads, &self.relation_grads] {
            w.u32(g.len() as u32);
            for (id, e) in g.iter() {
                w.u32(id);
                e.grad.iter().for_each(|&x| w.f64(x));
            }
        }
        w.0.push(self.model_grads.mode as u8);
        w.u32(self.model_grads.layers.len() as u32);
        for l in &self.model_grads.layers {
            l.weight.iter().chain(&l.bias).for_each(|&x| w.f64(x));
        }
        w.0
    }

    pub fn decode(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader::with_header(bytes, UPLOAD_TAG)?;
        let version = r.version;
        let client = r.u32()?;
        let weight = r.u32()?;
        let d = r.u32()? as usize;
        if d == 0 {
            return Err(Error::Decode("zero dimension".into()));
        }
        let mut sparse = || -> Result<SparseGrad> {
            let mut g = SparseGrad::new(d);
            let n = r.u32()?;
            for _ in 0..n {
                let id = r.u32()?;
                let grad = r.f64s(d)?;
                g.insert(id, SparseEntry { grad, count: 1 });
            }
            Ok(g)
        };
        let entity_grads = sparse()?;
        let relation_grads = sparse()?;
        let mode = PropagationMode::from_byte(r.u8()?).ok_or_else(|| Error::Decode("bad mode".into()))?;
        let nl = r.u32()? as usize;
        let mut layers = Vec::with_capacity(nl.min(64));
        for _ in 0..nl {
            layers.push(LayerParams { weight: r.f64s(d * d)?, bias: r.f64s(d)? });
        }
        r.finish()?;
        Ok(Self {
            version,
            client,
            weight,
            entity_grads,
            relation_grads,
            model_grads: ModelParams { dim: d, mode, layers },
        })
    }
}

struct Writer(Vec<u8>);

impl Writer {
    fn with_header(tag: &[u8; 4], version: u16) -> Self {
        let mut v = tag.to_vec();
        v.extend_from_slice(&version.to_le_bytes());
        Self(v)
    }
    fn u32(&mut self, x: u32) {
        self.0.extend_from_slice(&x.to_le_bytes());
    }
    fn f64(&mut self, x: f64) {
        self.0.extend_from_slice(&x.to_le_bytes());
    }
}

struct Reader<'a> {
    buf: &'a [u8],
    version: u16,
}

impl<'a> Reader<'a> {
    fn with_header(buf: &'a [u8], tag: &[u8; 4]) -> Result<Self> {
        if buf.len() < 6 || &buf[..4] != tag {
            return Err(Error::Decode("bad message tag".into()));
        }
        let version = u16::from_le_bytes([buf[4], buf[5]]);
        if version != WIRE_VERSION {
            return Err(Error::Decode(format!("unsupported version {version}")));
        }
        Ok(Self { buf: &buf[6..], version })
    }
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.buf.len() < n {
            return Err(Error::Decode("truncated message".into()));
        }
        let (head, tail) = self.buf.split_at(n);
        self.buf = tail;
        Ok(head)
    }
    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }
    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }
    fn f64s(&mut self, n: usize) -> Result<Vec<f64>> {
        let bytes = self.take(n.checked_mul(8).ok_or_else(|| Error::Decode("length overflow".into()))?)?;
        Ok(bytes.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect())
    }
    fn finish(self) -> Result<()> {
        if self.buf.is_empty() {
            Ok(())
        } else {
            Err(Error::Decode(format!("{} trailing bytes", self.buf.len())))
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn upload(dim: usize, ents: Vec<(u32, Vec<f64>)>, layers: usize, fill: f64) -> GradientUpload {
        let mut entity_grads = SparseGrad::new(dim);
        for (id, g) in ents {
            entity_grads.insert(id, SparseEntry { grad: g, count: 1 });
        }
        let mut model_grads = ModelParams {
            dim,
            mode: PropagationMode::Transform,
            layers: (0..layers).map(|_| LayerParams { weight: vec![0.0; dim * dim], bias: vec![0.0; dim] }).collect(),
        };
        model_grads.values_mut().for_each(|v| *v = fill);
        GradientUpload { version: WIRE_VERSION, client: 3, weight: 5, entity_grads, relation_grads: SparseGrad::new(dim), model_grads }
    }

    proptest! {
        #[test]
        fn request_round_trip(client in any::<u32>(), items in proptest::collection::vec(any::<u32>(), 0..50)) {
            let m = RequestMessage::new(client, items);
            prop_assert_eq!(RequestMessage::decode(&m.encode()).unwrap(), m);
        }

        #[test]
        fn upload_round_trip(
            dim in 1usize..4,
            rows in proptest::collection::btree_map(any::<u32>(), -1e3f64..1e3, 0..6),
            layers in 0usize..3,
            fill in -1.0f64..1.0,
        ) {
            let ents = rows.into_iter().map(|(id, v)| (id, vec![v; dim])).collect();
            let u = upload(dim, ents, layers, fill);
            prop_assert_eq!(GradientUpload::decode(&u.encode()).unwrap(), u);
        }
    }

    #[test]
    fn decode_rejects_garbage() {
        assert!(RequestMessage::decode(b"nope").is_err());
        let mut bytes = RequestMessage::new(1, vec![1, 2]).encode();
        bytes.push(0);
        assert!(RequestMessage::decode(&bytes).is_err());
        let bytes = upload(2, vec![(1, vec![0.0, 1.0])], 1, 0.0).encode();
        assert!(GradientUpload::decode(&bytes[..bytes.len() - 1]).is_err());
        assert!(GradientUpload::decode(&RequestMessage::new(1, vec![]).encode()).is_err());
    }
}
