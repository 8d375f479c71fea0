//! Coordinator/worker runtime for distributed consensus-ADMM GP training.
//!
//! The coordinator owns one TCP connection per worker and drives the same
//! consensus loop as the in-process executor; both satisfy identical
//! request/response semantics, so on one machine a loopback cluster run
//! reproduces the in-process residual history exactly (aggregation order is
//! fixed and the wire encoding round-trips every f64 bit-exactly).

pub mod coordinator;
pub mod error;
pub mod protocol;
pub mod worker;

pub use coordinator::{coordinator_run, coordinator_run_with, RemoteCluster, Timeouts};
pub use error::{ClusterError, ProtocolError};
pub use protocol::{decode, encode, Endpoint, FramedStream, Message, WireShard};
pub use worker::{worker_serve, worker_serve_listener};
