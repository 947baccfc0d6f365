// Licensed under the Apache License, Version 2.0 (the "License"); you may
// not use this file except in compliance with the License. You may obtain
// a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS, WITHOUT
// WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied. See the
// License for the specific language governing permissions and limitations
// under the License.

//! Master/worker wire format.
//!
//! Every frame is `u32` little-endian payload length, one type byte, then the
//! payload. All integers and reals are little-endian.
//!
//! | type | name     | payload |
//! |------|----------|---------|
//! | 1    | HELLO    | `u8` version, then optionally the graph and params |
//! | 2    | EVAL     | `u64` job id, genotype |
//! | 3    | RESULT   | `u64` job id, `f64` fitness |
//! | 4    | SHUTDOWN | empty |
//! | 5    | ERROR    | `u64` job id, UTF-8 message |
//!
//! The graph block is `u32` node count, `u32` arc count, then `u32` pairs;
//! params are `f64` steepness and `u32` busywork. A genotype is `u32` node
//! count, `u32` slot count, then row-major `f64` weights. The master opens
//! with a full HELLO; the worker answers with a bare HELLO carrying its own
//! version.

use std::io::{self, Read, Write};

use crate::belonging::LogisticParams;
use crate::ga::Genotype;
use crate::graph::DirectedGraph;

use super::EvalContext;

pub const PROTOCOL_VERSION: u8 = 1;
/// Frames larger than this are rejected before allocation.
pub const MAX_FRAME_LEN: u32 = 1 << 30;

const HELLO: u8 = 1;
const EVAL: u8 = 2;
const RESULT: u8 = 3;
const SHUTDOWN: u8 = 4;
const ERROR: u8 = 5;

#[derive(Debug, Clone, PartialEq)]
pub enum Message {
    Hello {
        version: u8,
        context: Option<EvalContext>,
    },
    Eval {
        job_id: u64,
        genotype: Genotype,
    },
    Result {
        job_id: u64,
        fitness: f64,
    },
    Error {
        job_id: u64,
        message: String,
    },
    Shutdown,
}

fn invalid(msg: impl Into<String>) -> io::Error {
    io::Error::new(io::ErrorKind::InvalidData, msg.into())
}

struct Cursor<'a> {
    buf: &'a [u8],
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> io::Result<&'a [u8]> {
        if self.buf.len() < n {
            return Err(invalid("truncated payload"));
        }
        let (head, tail) = self.buf.split_at(n);
        self.buf = tail;
        Ok(head)
    }

    fn u8(&mut self) -> io::Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn u32(&mut self) -> io::Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> io::Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn f64(&mut self) -> io::Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn finish(&self) -> io::Result<()> {
        if self.buf.is_empty() {
            Ok(())
        } else {
            Err(invalid(format!("{} trailing bytes", self.buf.len())))
        }
    }
}

fn put_u32(out: &mut Vec<u8>, v: usize) -> io::Result<()> {
    let v = u32::try_from(v).map_err(|_| invalid("count exceeds u32"))?;
    out.extend_from_slice(&v.to_le_bytes());
    Ok(())
}

fn put_genotype(out: &mut Vec<u8>, g: &Genotype) -> io::Result<()> {
    put_u32(out, g.node_count())?;
    put_u32(out, g.slots())?;
    for v in g.raw() {
        out.extend_from_slice(&v.to_le_bytes());
    }
    Ok(())
}

fn get_genotype(cur: &mut Cursor<'_>) -> io::Result<Genotype> {
    let n = cur.u32()? as usize;
    let slots = cur.u32()? as usize;
    let len = n
        .checked_mul(slots)
        .filter(|&len| len.saturating_mul(8) <= cur.buf.len())
        .ok_or_else(|| invalid("genotype dimensions exceed payload"))?;
    let raw = (0..len).map(|_| cur.f64()).collect::<io::Result<Vec<_>>>()?;
    Genotype::try_new(n, slots, raw).map_err(invalid)
}

fn put_context(out: &mut Vec<u8>, ctx: &EvalContext) -> io::Result<()> {
    put_u32(out, ctx.graph.node_count())?;
    put_u32(out, ctx.graph.link_count())?;
    for &(i, j) in ctx.graph.links() {
        put_u32(out, i)?;
        put_u32(out, j)?;
    }
    out.extend_from_slice(&ctx.params.steepness().to_le_bytes());
    out.extend_from_slice(&ctx.busywork.to_le_bytes());
    Ok(())
}

fn get_context(cur: &mut Cursor<'_>) -> io::Result<EvalContext> {
    let n = cur.u32()? as usize;
    let m = cur.u32()? as usize;
    if m.saturating_mul(8) > cur.buf.len() {
        return Err(invalid("arc count exceeds payload"));
    }
    let arcs = (0..m)
        .map(|_| Ok((cur.u32()? as usize, cur.u32()? as usize)))
        .collect::<io::Result<Vec<_>>>()?;
    let graph = DirectedGraph::from_arcs(n, &arcs).map_err(|e| invalid(e.to_string()))?;
    let params = LogisticParams::new(cur.f64()?).map_err(|e| invalid(e.to_string()))?;
    let busywork = cur.u32()?;
    Ok(EvalContext::new(graph, params).with_busywork(busywork))
}

/// Serializes `msg` as one frame.
pub fn encode(msg: &Message) -> io::Result<Vec<u8>> {
    let mut payload = Vec::new();
    let kind = match msg {
        Message::Hello { version, context } => {
            payload.push(*version);
            if let Some(ctx) = context {
                put_context(&mut payload, ctx)?;
            }
            HELLO
        }
        Message::Eval { job_id, genotype } => {
            payload.extend_from_slice(&job_id.to_le_bytes());
            put_genotype(&mut payload, genotype)?;
            EVAL
        }
        Message::Result { job_id, fitness } => {
            payload.extend_from_slice(&job_id.to_le_bytes());
            payload.extend_from_slice(&fitness.to_le_bytes());
            RESULT
        }
        Message::Error { job_id, message } => {
            payload.extend_from_slice(&job_id.to_le_bytes());
            payload.extend_from_slice(message.as_bytes());
            ERROR
        }
        Message::Shutdown => SHUTDOWN,
    };
    let len = u32::try_from(payload.len())
        .ok()
        .filter(|&l| l <= MAX_FRAME_LEN)
        .ok_or_else(|| invalid("frame too large"))?;
    let mut frame = Vec::with_capacity(payload.len() + 5);
    frame.extend_from_slice(&len.to_le_bytes());
    frame.push(kind);
    frame.extend_from_slice(&payload);
    Ok(frame)
}

/// Parses a frame body given its type byte.
pub fn decode(kind: u8, payload: &[u8]) -> io::Result<Message> {
    let mut cur = Cursor { buf: payload };
    let msg = match kind {
        HELLO => {
            let version = cur.u8()?;
            // a peer speaking another version may use another layout
            if version != PROTOCOL_VERSION || cur.buf.is_empty() {
                return Ok(Message::Hello {
                    version,
                    context: None,
                });
            }
            Message::Hello {
                version,
                context: Some(get_context(&mut cur)?),
            }
        }
        EVAL => Message::Eval {
            job_id: cur.u64()?,
            genotype: get_genotype(&mut cur)?,
        },
        RESULT => Message::Result {
            job_id: cur.u64()?,
            fitness: cur.f64()?,
        },
        ERROR => {
            let job_id = cur.u64()?;
            let message = String::from_utf8_lossy(cur.take(cur.buf.len())?).into_owned();
            Message::Error { job_id, message }
        }
        SHUTDOWN => Message::Shutdown,
        other => return Err(invalid(format!("unknown message type {other}"))),
    };
    cur.finish()?;
    Ok(msg)
}

pub fn write_message<W: Write + ?Sized>(w: &mut W, msg: &Message) -> io::Result<()> {
    w.write_all(&encode(msg)?)?;
    w.flush()
}

/// Reads one frame. A clean end of stream before the first header byte
/// yields `Ok(None)`.
pub fn read_message<R: Read + ?Sized>(r: &mut R) -> io::Result<Option<Message>> {
    let mut header = [0u8; 5];
    let mut filled = 0;
    while filled < header.len() {
        match r.read(&mut header[filled..]) {
            Ok(0) if filled == 0 => return Ok(None),
            Ok(0) => return Err(io::ErrorKind::UnexpectedEof.into()),
            Ok(k) => filled += k,
            Err(e) if e.kind() == io::ErrorKind::Interrupted => {}
            Err(e) => return Err(e),
        }
    }
    let len = u32::from_le_bytes(header[..4].try_into().unwrap());
    if len > MAX_FRAME_LEN {
        return Err(invalid(format!("frame of {len} bytes exceeds limit")));
    }
    let mut payload = vec![0u8; len as usize];
    r.read_exact(&mut payload)?;
    decode(header[4], &payload).map(Some)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn roundtrip(msg: Message) {
        let frame = encode(&msg).unwrap();
        let back = read_message(&mut frame.as_slice()).unwrap().unwrap();
        assert_eq!(back, msg);
    }

    #[test]
    fn messages_roundtrip() {
        let g = DirectedGraph::from_edge_list_str("0 1\n1 2\n2 0\n").unwrap();
        let ctx = EvalContext::new(g, LogisticParams::new(12.5).unwrap()).with_busywork(7);
        roundtrip(Message::Hello {
            version: PROTOCOL_VERSION,
            context: Some(ctx),
        });
        roundtrip(Message::Hello {
            version: PROTOCOL_VERSION,
            context: None,
        });
        roundtrip(Message::Eval {
            job_id: u64::MAX,
            genotype: Genotype::new(2, 3, vec![0.1, 0.2, 1.0, 1e-300, 0.0, 0.5]),
        });
        roundtrip(Message::Result {
            job_id: 9,
            fitness: -0.123456789,
        });
        roundtrip(Message::Error {
            job_id: 3,
            message: "boom".into(),
        });
        roundtrip(Message::Shutdown);
    }

    #[test]
    fn frame_layout() {
        let frame = encode(&Message::Result {
            job_id: 1,
            fitness: 0.5,
        })
        .unwrap();
        assert_eq!(&frame[..4], &16u32.to_le_bytes());
        assert_eq!(frame[4], RESULT);
        assert_eq!(frame.len(), 21);
        assert_eq!(encode(&Message::Shutdown).unwrap(), vec![0, 0, 0, 0, SHUTDOWN]);
    }

    #[test]
    fn reals_are_bit_exact() {
        let tricky = [f64::MIN_POSITIVE, 1.0 - f64::EPSILON, 0.1 + 0.2, 5e-324];
        let g = Genotype::new(1, 4, tricky.to_vec());
        let frame = encode(&Message::Eval {
            job_id: 0,
            genotype: g.clone(),
        })
        .unwrap();
        match read_message(&mut frame.as_slice()).unwrap().unwrap() {
            Message::Eval { genotype, .. } => {
                for (a, b) in genotype.raw().iter().zip(g.raw()) {
                    assert_eq!(a.to_bits(), b.to_bits());
                }
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn rejects_garbage() {
        assert!(decode(42, &[]).is_err());
        assert!(decode(RESULT, &[0; 15]).is_err());
        assert!(decode(RESULT, &[0; 17]).is_err());
        // genotype claims more weights than the payload holds
        let mut p = 0u64.to_le_bytes().to_vec();
        p.extend_from_slice(&1000u32.to_le_bytes());
        p.extend_from_slice(&1000u32.to_le_bytes());
        assert!(decode(EVAL, &p).is_err());
        let mut big = u32::MAX.to_le_bytes().to_vec();
        big.push(EVAL);
        assert!(read_message(&mut big.as_slice()).is_err());
    }

    #[test]
    fn eof_handling() {
        assert!(read_message(&mut [].as_slice()).unwrap().is_none());
        assert!(read_message(&mut [1u8, 0].as_slice()).is_err());
    }

    #[test]
    fn foreign_hello_keeps_version_only() {
        let msg = decode(HELLO, &[9, 1, 2, 3]).unwrap();
        assert_eq!(
            msg,
            Message::Hello {
                version: 9,
                context: None
            }
        );
    }
}
