//! Wire protocol: length-prefixed JSON frames.
//!
//! Framing: a 4-byte big-endian unsigned length prefix followed by a UTF-8
//! JSON body whose top-level object carries a `"type"` field. Frames above
//! 64 MiB are rejected on both sides. Real vectors travel as decimal strings
//! with 17 significant digits, which round-trips every finite f64 exactly.

use std::io::{Read, Write};
use std::net::TcpStream;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use trafficgp_core::admm::{AdmmConfig, Shard};
use trafficgp_core::gp::Dataset;
use trafficgp_core::kernel::KernelSpec;

use crate::error::ProtocolError;

pub const MAX_FRAME_BYTES: usize = 64 * 1024 * 1024;

/// Serialize one f64 with 17 significant digits.
pub(crate) fn f64_to_wire(v: f64) -> String {
    format!("{v:.16e}")
}

fn f64_from_wire(s: &str) -> Result<f64, String> {
    s.parse::<f64>()
        .ok()
        .filter(|v| v.is_finite())
        .ok_or_else(|| format!("invalid float '{s}'"))
}

/// Vec<f64> as a JSON array of 17-significant-digit decimal strings.
mod float_vec {
    use serde::de::Error as DeError;
    use serde::ser::{Error as SerError, SerializeSeq};
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(v: &[f64], s: S) -> Result<S::Ok, S::Error> {
        let mut seq = s.serialize_seq(Some(v.len()))?;
        for x in v {
            if !x.is_finite() {
                return Err(S::Error::custom("non-finite float in payload"));
            }
            seq.serialize_element(&super::f64_to_wire(*x))?;
        }
        seq.end()
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Vec<f64>, D::Error> {
        let raw = Vec::<String>::deserialize(d)?;
        raw.iter()
            .map(|s| super::f64_from_wire(s).map_err(D::Error::custom))
            .collect()
    }
}

/// A single f64 as a 17-significant-digit decimal string.
mod float_scalar {
    use serde::de::Error as DeError;
    use serde::ser::Error as SerError;
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(v: &f64, s: S) -> Result<S::Ok, S::Error> {
        if !v.is_finite() {
            return Err(S::Error::custom("non-finite float in payload"));
        }
        s.serialize_str(&super::f64_to_wire(*v))
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<f64, D::Error> {
        let raw = String::deserialize(d)?;
        super::f64_from_wire(&raw).map_err(D::Error::custom)
    }
}

/// A worker's shard as it travels in `Init`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WireShard {
    pub worker_id: usize,
    pub indices: Vec<usize>,
    #[serde(with = "float_vec")]
    pub times: Vec<f64>,
    #[serde(with = "float_vec")]
    pub values: Vec<f64>,
}

impl From<&Shard> for WireShard {
    fn from(shard: &Shard) -> Self {
        Self {
            worker_id: shard.worker_id,
            indices: shard.indices.clone(),
            times: shard.data.times().to_vec(),
            values: shard.data.values().to_vec(),
        }
    }
}

impl TryFrom<WireShard> for Shard {
    type Error = trafficgp_core::Error;

    fn try_from(wire: WireShard) -> Result<Self, Self::Error> {
        Ok(Shard {
            worker_id: wire.worker_id,
            indices: wire.indices,
            data: Dataset::new(wire.times, wire.values)?,
        })
    }
}

/// Coordinator/worker message envelope.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type")]
pub enum Message {
    Init {
        spec: KernelSpec,
        shard: WireShard,
        cfg: AdmmConfig,
    },
    LocalUpdateRequest {
        #[serde(with = "float_vec")]
        z: Vec<f64>,
        #[serde(with = "float_vec")]
        u_k: Vec<f64>,
        iteration: u64,
    },
    LocalUpdateResponse {
        #[serde(with = "float_vec")]
        theta_k: Vec<f64>,
        #[serde(with = "float_scalar")]
        local_objective: f64,
        wall_ms: f64,
    },
    PredictRequest {
        #[serde(with = "float_vec")]
        z: Vec<f64>,
        #[serde(with = "float_vec")]
        query_times: Vec<f64>,
    },
    PredictResponse {
        #[serde(with = "float_vec")]
        mean: Vec<f64>,
        #[serde(with = "float_vec")]
        variance: Vec<f64>,
    },
    Error {
        code: String,
        detail: String,
    },
    Shutdown,
}

/// Serialize `msg` into one frame: 4-byte big-endian length + JSON body.
pub fn encode(msg: &Message) -> Result<Vec<u8>, ProtocolError> {
    let body = serde_json::to_vec(msg).map_err(|e| ProtocolError::Malformed(e.to_string()))?;
    if body.len() > MAX_FRAME_BYTES {
        return Err(ProtocolError::FrameTooLarge {
            len: body.len(),
            max: MAX_FRAME_BYTES,
        });
    }
    let mut out = Vec::with_capacity(4 + body.len());
    out.extend_from_slice(&(body.len() as u32).to_be_bytes());
    out.extend_from_slice(&body);
    Ok(out)
}

/// Parse one complete frame produced by [`encode`].
pub fn decode(frame: &[u8]) -> Result<Message, ProtocolError> {
    if frame.len() < 4 {
        return Err(ProtocolError::Truncated);
    }
    let len = u32::from_be_bytes([frame[0], frame[1], frame[2], frame[3]]) as usize;
    if len > MAX_FRAME_BYTES {
        return Err(ProtocolError::FrameTooLarge {
            len,
            max: MAX_FRAME_BYTES,
        });
    }
    let body = &frame[4..];
    if body.len() < len {
        return Err(ProtocolError::Truncated);
    }
    if body.len() > len {
        return Err(ProtocolError::Malformed(format!(
            "frame carries {} trailing bytes",
            body.len() - len
        )));
    }
    serde_json::from_slice(&body[..len]).map_err(|e| ProtocolError::Malformed(e.to_string()))
}

/// Blocking framed message stream over TCP.
pub struct FramedStream {
    stream: TcpStream,
}

impl FramedStream {
    pub fn new(stream: TcpStream) -> Self {
        Self { stream }
    }

    pub fn stream(&self) -> &TcpStream {
        &self.stream
    }

    pub fn send(&mut self, msg: &Message) -> Result<(), ProtocolError> {
        let frame = encode(msg)?;
        self.stream.write_all(&frame)?;
        self.stream.flush()?;
        Ok(())
    }

    pub fn recv(&mut self) -> Result<Message, ProtocolError> {
        let mut header = [0u8; 4];
        read_exact_or_truncated(&mut self.stream, &mut header)?;
        let len = u32::from_be_bytes(header) as usize;
        if len > MAX_FRAME_BYTES {
            return Err(ProtocolError::FrameTooLarge {
                len,
                max: MAX_FRAME_BYTES,
            });
        }
        let mut body = vec![0u8; len];
        read_exact_or_truncated(&mut self.stream, &mut body)?;
        serde_json::from_slice(&body).map_err(|e| ProtocolError::Malformed(e.to_string()))
    }
}

fn read_exact_or_truncated(stream: &mut TcpStream, buf: &mut [u8]) -> Result<(), ProtocolError> {
    stream.read_exact(buf).map_err(|e| {
        if e.kind() == std::io::ErrorKind::UnexpectedEof {
            ProtocolError::Truncated
        } else {
            ProtocolError::Io(e)
        }
    })
}

/// A worker's listen address.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Endpoint {
    pub host: String,
    pub port: u16,
}

impl Endpoint {
    pub fn addr(&self) -> String {
        format!("{}:{}", self.host, self.port)
    }
}

impl FromStr for Endpoint {
    type Err = crate::error::ClusterError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let (host, port) = s
            .rsplit_once(':')
            .ok_or_else(|| crate::error::ClusterError::InvalidEndpoint(s.to_string()))?;
        let port = port
            .parse::<u16>()
            .map_err(|_| crate::error::ClusterError::InvalidEndpoint(s.to_string()))?;
        if host.is_empty() {
            return Err(crate::error::ClusterError::InvalidEndpoint(s.to_string()));
        }
        Ok(Self {
            host: host.to_string(),
            port,
        })
    }
}

impl std::fmt::Display for Endpoint {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}:{}", self.host, self.port)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn shutdown_frame_is_19_body_bytes() {
        let frame = encode(&Message::Shutdown).unwrap();
        assert_eq!(&frame[..4], &[0x00, 0x00, 0x00, 0x13]);
        assert_eq!(frame.len(), 4 + 19);
        assert_eq!(&frame[4..], br#"{"type":"Shutdown"}"#);
    }

    #[test]
    fn tenth_round_trips_bit_exactly() {
        let msg = Message::LocalUpdateRequest {
            z: vec![0.1],
            u_k: vec![-0.1],
            iteration: 3,
        };
        let back = decode(&encode(&msg).unwrap()).unwrap();
        match back {
            Message::LocalUpdateRequest { z, u_k, .. } => {
                assert_eq!(z[0].to_bits(), 0.1f64.to_bits());
                assert_eq!(u_k[0].to_bits(), (-0.1f64).to_bits());
            }
            other => panic!("wrong variant: {other:?}"),
        }
    }

    #[test]
    fn truncated_frame_is_rejected() {
        let frame = encode(&Message::Shutdown).unwrap();
        assert!(matches!(
            decode(&frame[..frame.len() - 5]),
            Err(ProtocolError::Truncated)
        ));
        assert!(matches!(decode(&frame[..2]), Err(ProtocolError::Truncated)));
    }

    #[test]
    fn unknown_type_is_a_protocol_error() {
        let body = br#"{"type":"Bogus"}"#;
        let mut frame = (body.len() as u32).to_be_bytes().to_vec();
        frame.extend_from_slice(body);
        assert!(matches!(decode(&frame), Err(ProtocolError::Malformed(_))));
    }

    #[test]
    fn malformed_json_is_a_protocol_error() {
        let body = br#"{"type": nope"#;
        let mut frame = (body.len() as u32).to_be_bytes().to_vec();
        frame.extend_from_slice(body);
        assert!(matches!(decode(&frame), Err(ProtocolError::Malformed(_))));
    }

    #[test]
    fn oversized_header_is_rejected() {
        let mut frame = ((MAX_FRAME_BYTES + 1) as u32).to_be_bytes().to_vec();
        frame.extend_from_slice(b"xx");
        assert!(matches!(
            decode(&frame),
            Err(ProtocolError::FrameTooLarge { .. })
        ));
    }

    #[test]
    fn non_finite_payload_is_rejected_at_encode() {
        let msg = Message::PredictResponse {
            mean: vec![f64::NAN],
            variance: vec![1.0],
        };
        assert!(matches!(encode(&msg), Err(ProtocolError::Malformed(_))));
    }

    #[test]
    fn endpoint_parsing() {
        let e: Endpoint = "127.0.0.1:7001".parse().unwrap();
        assert_eq!(e.host, "127.0.0.1");
        assert_eq!(e.port, 7001);
        assert!("nohost".parse::<Endpoint>().is_err());
        assert!(":99".parse::<Endpoint>().is_err());
        assert!("host:notaport".parse::<Endpoint>().is_err());
    }
}
