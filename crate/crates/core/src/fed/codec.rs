//! Binary wire format.
//!
//! Frame: `"FVW1" | version u8 | msg_type u8 | payload_len u64 | payload`.
//!
//! Weights payload: `"FVWT" | version u8 | dtype u8 | tensor_count u32`
//! followed per tensor by `name_len u16 | name (UTF-8) | rank u8 |
//! dims (u64 each) | values`, where values are `f32` for model weights and
//! `f64` for deltas. Every integer and float is little-endian.

use std::io::Read;

use super::weights::{ModelWeights, WeightDelta};
use crate::nn::{ParamSet, Scalar, Tensor};

pub const FRAME_MAGIC: &[u8; 4] = b"FVW1";
pub const WEIGHTS_MAGIC: &[u8; 4] = b"FVWT";
pub const WIRE_VERSION: u8 = 1;
pub const FRAME_HEADER_LEN: usize = 4 + 1 + 1 + 8;
const WEIGHTS_HEADER_LEN: usize = 4 + 1 + 1 + 4;
const MAX_RANK: usize = 8;
/// Refuse frames above 4 GiB rather than allocating for a corrupt length.
const MAX_FRAME_PAYLOAD: u64 = 1 << 32;

const DTYPE_F32: u8 = 1;
const DTYPE_F64: u8 = 2;

const MSG_REGISTER: u8 = 1;
const MSG_GLOBAL_MODEL: u8 = 2;
const MSG_DELTA: u8 = 3;
const MSG_ACK: u8 = 4;
const MSG_ERROR: u8 = 5;

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("malformed payload at byte {offset}: {message}")]
pub struct CodecError {
    pub offset: usize,
    pub message: String,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum ErrorCode {
    DuplicateClient,
    RoundAborted,
    LayoutMismatch,
    UnexpectedMessage,
    Other(u16),
}

impl ErrorCode {
    fn to_u16(self) -> u16 {
        match self {
            ErrorCode::DuplicateClient => 1,
            ErrorCode::RoundAborted => 2,
            ErrorCode::LayoutMismatch => 3,
            ErrorCode::UnexpectedMessage => 4,
            ErrorCode::Other(c) => c,
        }
    }

    fn from_u16(c: u16) -> Self {
        match c {
            1 => ErrorCode::DuplicateClient,
            2 => ErrorCode::RoundAborted,
            3 => ErrorCode::LayoutMismatch,
            4 => ErrorCode::UnexpectedMessage,
            c => ErrorCode::Other(c),
        }
    }
}

/// Protocol messages. None of them carries measurement samples: the only
/// numeric arrays are model weights and weight deltas.
#[derive(Clone, Debug, PartialEq)]
pub enum Message {
    Register {
        client_id: String,
    },
    GlobalModel {
        round: u64,
        weights: ModelWeights,
    },
    DeltaSubmission {
        client_id: String,
        round: u64,
        delta: WeightDelta,
        windows_trained: u64,
    },
    Ack,
    Error {
        code: ErrorCode,
        text: String,
    },
}

/// Wire schema as `(msg_type, name, [(field, wire type)])`.
pub fn message_kind_names() -> &'static [(u8, &'static str, &'static [(&'static str, &'static str)])] {
    &[
        (MSG_REGISTER, "Register", &[("client_id", "str16")]),
        (MSG_GLOBAL_MODEL, "GlobalModel", &[("round", "u64"), ("weights", "weights_f32")]),
        (
            MSG_DELTA,
            "DeltaSubmission",
            &[
                ("client_id", "str16"),
                ("round", "u64"),
                ("base_round", "u64"),
                ("windows_trained", "u64"),
                ("delta", "weights_f64"),
            ],
        ),
        (MSG_ACK, "Ack", &[]),
        (MSG_ERROR, "Error", &[("code", "u16"), ("text", "str32")]),
    ]
}

fn put_str16(out: &mut Vec<u8>, s: &str) {
    let len = u16::try_from(s.len()).expect("string longer than 65535 bytes");
    out.extend_from_slice(&len.to_le_bytes());
    out.extend_from_slice(s.as_bytes());
}

trait WireFloat: Scalar {
    const DTYPE: u8;
    const WIDTH: usize;
    fn put(self, out: &mut Vec<u8>);
    fn get(bytes: &[u8]) -> Self;
}

impl WireFloat for f32 {
    const DTYPE: u8 = DTYPE_F32;
    const WIDTH: usize = 4;
    fn put(self, out: &mut Vec<u8>) {
        out.extend_from_slice(&self.to_le_bytes());
    }
    fn get(bytes: &[u8]) -> Self {
        f32::from_le_bytes(bytes.try_into().expect("4 bytes"))
    }
}

impl WireFloat for f64 {
    const DTYPE: u8 = DTYPE_F64;
    const WIDTH: usize = 8;
    fn put(self, out: &mut Vec<u8>) {
        out.extend_from_slice(&self.to_le_bytes());
    }
    fn get(bytes: &[u8]) -> Self {
        f64::from_le_bytes(bytes.try_into().expect("8 bytes"))
    }
}

fn put_params<F: WireFloat>(out: &mut Vec<u8>, params: &ParamSet<F>) {
    out.extend_from_slice(WEIGHTS_MAGIC);
    out.push(WIRE_VERSION);
    out.push(F::DTYPE);
    out.extend_from_slice(&(params.len() as u32).to_le_bytes());
    for (name, t) in params.iter() {
        put_str16(out, name);
        out.push(t.rank() as u8);
        for &d in t.shape() {
            out.extend_from_slice(&(d as u64).to_le_bytes());
        }
        for &v in t.data() {
            v.put(out);
        }
    }
}

fn params_len<F: Scalar>(params: &ParamSet<F>, width: usize) -> usize {
    WEIGHTS_HEADER_LEN
        + params
            .iter()
            .map(|(n, t)| 2 + n.len() + 1 + 8 * t.rank() + width * t.len())
            .sum::<usize>()
}

/// Exact size of `serialize_weights(w)`.
pub fn weights_payload_len(w: &ModelWeights) -> usize {
    params_len(w.params(), 4)
}

/// Exact size of `serialize_delta(d)`.
pub fn delta_payload_len(d: &WeightDelta) -> usize {
    params_len(&d.params, 8)
}

pub fn serialize_weights(w: &ModelWeights) -> Vec<u8> {
    let mut out = Vec::with_capacity(weights_payload_len(w));
    put_params(&mut out, w.params());
    out
}

pub fn serialize_delta(d: &WeightDelta) -> Vec<u8> {
    let mut out = Vec::with_capacity(delta_payload_len(d));
    put_params(&mut out, &d.params);
    out
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
    base: usize,
}

impl<'a> Reader<'a> {
    fn new(buf: &'a [u8], base: usize) -> Self {
        Self { buf, pos: 0, base }
    }

    fn err<T>(&self, message: impl Into<String>) -> Result<T, CodecError> {
        Err(CodecError {
            offset: self.base + self.pos,
            message: message.into(),
        })
    }

    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8], CodecError> {
        if self.buf.len() - self.pos < n {
            return self.err(format!(
                "truncated {what}: need {n} bytes, {} left",
                self.buf.len() - self.pos
            ));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u8(&mut self, what: &str) -> Result<u8, CodecError> {
        Ok(self.take(1, what)?[0])
    }

    fn u16(&mut self, what: &str) -> Result<u16, CodecError> {
        Ok(u16::from_le_bytes(self.take(2, what)?.try_into().expect("2")))
    }

    fn u32(&mut self, what: &str) -> Result<u32, CodecError> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().expect("4")))
    }

    fn u64(&mut self, what: &str) -> Result<u64, CodecError> {
        Ok(u64::from_le_bytes(self.take(8, what)?.try_into().expect("8")))
    }

    fn string(&mut self, len: usize, what: &str) -> Result<String, CodecError> {
        let start = self.pos;
        let bytes = self.take(len, what)?;
        String::from_utf8(bytes.to_vec()).map_err(|_| CodecError {
            offset: self.base + start,
            message: format!("{what} is not valid UTF-8"),
        })
    }

    fn remaining(&self) -> usize {
        self.buf.len() - self.pos
    }

    fn finish(&self) -> Result<(), CodecError> {
        if self.remaining() != 0 {
            return self.err(format!("{} trailing bytes", self.remaining()));
        }
        Ok(())
    }

    fn params<F: WireFloat>(&mut self) -> Result<ParamSet<F>, CodecError> {
        if self.take(4, "weights magic")? != WEIGHTS_MAGIC {
            self.pos -= 4;
            return self.err("bad weights magic");
        }
        let version = self.u8("weights version")?;
        if version != WIRE_VERSION {
            self.pos -= 1;
            return self.err(format!("unsupported weights version {version}"));
        }
        let dtype = self.u8("dtype")?;
        if dtype != F::DTYPE {
            self.pos -= 1;
            return self.err(format!("dtype {dtype}, expected {}", F::DTYPE));
        }
        let count = self.u32("tensor count")? as usize;
        let mut params = ParamSet::new();
        let mut names = std::collections::HashSet::new();
        for _ in 0..count {
            let name_len = self.u16("name length")? as usize;
            let name = self.string(name_len, "tensor name")?;
            if !names.insert(name.clone()) {
                return self.err(format!("duplicate tensor {name:?}"));
            }
            let rank = self.u8("rank")? as usize;
            if rank > MAX_RANK {
                self.pos -= 1;
                return self.err(format!("rank {rank} exceeds {MAX_RANK}"));
            }
            let mut shape = Vec::with_capacity(rank);
            let mut numel: u64 = 1;
            for _ in 0..rank {
                let d = self.u64("dimension")?;
                numel = numel.checked_mul(d).unwrap_or(u64::MAX);
                shape.push(d as usize);
            }
            let need = numel.saturating_mul(F::WIDTH as u64);
            if need > self.remaining() as u64 {
                return self.err(format!("tensor {name:?} needs {need} value bytes, {} left", self.remaining()));
            }
            let raw = self.take(need as usize, "values")?;
            let data: Vec<F> = raw.chunks_exact(F::WIDTH).map(F::get).collect();
            params.push(name, Tensor::new(shape, data).expect("length checked"));
        }
        Ok(params)
    }
}

pub fn deserialize_weights(bytes: &[u8]) -> Result<ModelWeights, CodecError> {
    let mut r = Reader::new(bytes, 0);
    let params = r.params::<f32>()?;
    r.finish()?;
    Ok(ModelWeights::new(params).expect("names checked unique"))
}

pub fn deserialize_delta(bytes: &[u8], base_round: u64) -> Result<WeightDelta, CodecError> {
    let mut r = Reader::new(bytes, 0);
    let params = r.params::<f64>()?;
    r.finish()?;
    Ok(WeightDelta { params, base_round })
}

/// Complete frame for `msg`.
pub fn encode_message(msg: &Message) -> Vec<u8> {
    let mut payload = Vec::new();
    let kind = match msg {
        Message::Register { client_id } => {
            put_str16(&mut payload, client_id);
            MSG_REGISTER
        }
        Message::GlobalModel { round, weights } => {
            payload.extend_from_slice(&round.to_le_bytes());
            put_params(&mut payload, weights.params());
            MSG_GLOBAL_MODEL
        }
        Message::DeltaSubmission {
            client_id,
            round,
            delta,
            windows_trained,
        } => {
            put_str16(&mut payload, client_id);
            payload.extend_from_slice(&round.to_le_bytes());
            payload.extend_from_slice(&delta.base_round.to_le_bytes());
            payload.extend_from_slice(&windows_trained.to_le_bytes());
            put_params(&mut payload, &delta.params);
            MSG_DELTA
        }
        Message::Ack => MSG_ACK,
        Message::Error { code, text } => {
            payload.extend_from_slice(&code.to_u16().to_le_bytes());
            payload.extend_from_slice(&(text.len() as u32).to_le_bytes());
            payload.extend_from_slice(text.as_bytes());
            MSG_ERROR
        }
    };
    let mut out = Vec::with_capacity(FRAME_HEADER_LEN + payload.len());
    out.extend_from_slice(FRAME_MAGIC);
    out.push(WIRE_VERSION);
    out.push(kind);
    out.extend_from_slice(&(payload.len() as u64).to_le_bytes());
    out.extend_from_slice(&payload);
    out
}

/// Checks a frame header and returns `(msg_type, payload_len)`.
fn parse_header(header: &[u8]) -> Result<(u8, u64), CodecError> {
    let mut r = Reader::new(header, 0);
    if r.take(4, "frame magic")? != FRAME_MAGIC {
        return Err(CodecError {
            offset: 0,
            message: "bad frame magic".into(),
        });
    }
    let version = r.u8("frame version")?;
    if version != WIRE_VERSION {
        return Err(CodecError {
            offset: 4,
            message: format!("unsupported frame version {version}"),
        });
    }
    let kind = r.u8("message type")?;
    let len = r.u64("payload length")?;
    if len > MAX_FRAME_PAYLOAD {
        return Err(CodecError {
            offset: 6,
            message: format!("payload length {len} exceeds limit"),
        });
    }
    Ok((kind, len))
}

/// Decodes exactly one frame occupying all of `frame`.
pub fn decode_message(frame: &[u8]) -> Result<Message, CodecError> {
    if frame.len() < FRAME_HEADER_LEN {
        return Err(CodecError {
            offset: frame.len(),
            message: format!("truncated frame header: {} of {FRAME_HEADER_LEN} bytes", frame.len()),
        });
    }
    let (kind, len) = parse_header(&frame[..FRAME_HEADER_LEN])?;
    let body = &frame[FRAME_HEADER_LEN..];
    if body.len() as u64 != len {
        return Err(CodecError {
            offset: frame.len(),
            message: format!("payload length {} but header says {len}", body.len()),
        });
    }
    let mut r = Reader::new(body, FRAME_HEADER_LEN);
    let msg = match kind {
        MSG_REGISTER => {
            let n = r.u16("client id length")? as usize;
            Message::Register {
                client_id: r.string(n, "client id")?,
            }
        }
        MSG_GLOBAL_MODEL => {
            let round = r.u64("round")?;
            let params = r.params::<f32>()?;
            Message::GlobalModel {
                round,
                weights: ModelWeights::new(params).expect("names checked unique"),
            }
        }
        MSG_DELTA => {
            let n = r.u16("client id length")? as usize;
            let client_id = r.string(n, "client id")?;
            let round = r.u64("round")?;
            let base_round = r.u64("base round")?;
            let windows_trained = r.u64("windows trained")?;
            let params = r.params::<f64>()?;
            Message::DeltaSubmission {
                client_id,
                round,
                delta: WeightDelta { params, base_round },
                windows_trained,
            }
        }
        MSG_ACK => Message::Ack,
        MSG_ERROR => {
            let code = ErrorCode::from_u16(r.u16("error code")?);
            let n = r.u32("error text length")? as usize;
            Message::Error {
                code,
                text: r.string(n, "error text")?,
            }
        }
        other => {
            return Err(CodecError {
                offset: 5,
                message: format!("unknown message type {other}"),
            })
        }
    };
    r.finish()?;
    Ok(msg)
}

/// Reads one complete frame from a byte stream. `Ok(None)` on a clean EOF
/// before the first header byte.
pub fn read_frame(stream: &mut impl Read) -> std::io::Result<Option<Vec<u8>>> {
    let mut header = [0u8; FRAME_HEADER_LEN];
    let mut filled = 0;
    while filled < FRAME_HEADER_LEN {
        match stream.read(&mut header[filled..]) {
            Ok(0) if filled == 0 => return Ok(None),
            Ok(0) => return Err(std::io::ErrorKind::UnexpectedEof.into()),
            Ok(n) => filled += n,
            Err(e) if e.kind() == std::io::ErrorKind::Interrupted => {}
            Err(e) => return Err(e),
        }
    }
    let (_, len) = parse_header(&header).map_err(|e| std::io::Error::new(std::io::ErrorKind::InvalidData, e))?;
    let mut frame = header.to_vec();
    frame.resize(FRAME_HEADER_LEN + len as usize, 0);
    stream.read_exact(&mut frame[FRAME_HEADER_LEN..])?;
    Ok(Some(frame))
}
