//! Error types for the wire protocol and the coordinator/worker runtime.

pub type Result<T> = std::result::Result<T, ClusterError>;

#[derive(Debug, thiserror::Error)]
pub enum ProtocolError {
    #[error("frame of {len} bytes exceeds the {max} byte limit")]
    FrameTooLarge { len: usize, max: usize },

    #[error("malformed message: {0}")]
    Malformed(String),

    #[error("connection closed mid-frame")]
    Truncated,

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

#[derive(Debug, thiserror::Error)]
pub enum ClusterError {
    #[error("protocol error: {0}")]
    Protocol(#[from] ProtocolError),

    #[error("invalid endpoint '{0}'")]
    InvalidEndpoint(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("worker {worker_id} at {addr}: {detail}")]
    WorkerUnreachable {
        worker_id: usize,
        addr: String,
        detail: String,
    },

    #[error("worker protocol violation: {0}")]
    StateMachine(String),

    #[error(transparent)]
    Core(#[from] trafficgp_core::Error),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}
