use std::path::PathBuf;

use crate::{EntityId, RelationId};

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("triple ({head}, {relation}, {tail}) out of range for {num_entities} entities / {num_relations} relations")]
    TripleOutOfRange {
        head: EntityId,
        relation: RelationId,
        tail: EntityId,
        num_entities: usize,
        num_relations: usize,
    },

    #[error("unknown entity id {0}")]
    UnknownEntity(EntityId),

    #[error("unknown relation id {0}")]
    UnknownRelation(RelationId),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("protocol error: {0}")]
    Protocol(String),

    #[error("non-finite value in aggregated gradient")]
    NonFiniteGradient,

    #[error("{path}:{line}: {msg}")]
    Parse {
        path: PathBuf,
        line: usize,
        msg: String,
    },

    #[error("dataset error: {0}")]
    Dataset(String),

    #[error("malformed message: {0}")]
    Decode(String),

    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    #[error("client {client} failed: {source}")]
    Client {
        client: u32,
        #[source]
        source: Box<Error>,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}
