//! Wire format for messages between the requester and workers.
//!
//! ```text
//! magic "PCNF"      4 bytes
//! version           1 byte  (= 1)
//! message type      1 byte
//! image id          4 bytes LE
//! dim count         1 byte
//! dims              4 bytes LE each
//! payload length    4 bytes LE, in bytes
//! payload
//! ```
//!
//! TENSOR and RESULT payloads are the activations as little-endian f32 and
//! must hold exactly `product(dims)` values. ERROR carries UTF-8 text. A
//! DONE sent along the pipeline is header only; the copy a worker returns
//! to the requester may carry a 32-byte [`WorkerReport`].

use std::io::{self, Read, Write};

use crate::cnn::{Tensor, TensorShape};

pub const FRAME_MAGIC: &[u8; 4] = b"PCNF";
pub const FRAME_VERSION: u8 = 1;
const MAX_PAYLOAD: u32 = 1 << 30;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
#[repr(u8)]
pub enum MessageType {
    Hello = 1,
    Assign = 2,
    Tensor = 3,
    Result = 4,
    Done = 5,
    Error = 6,
}

impl MessageType {
    pub const ALL: [MessageType; 6] = [
        MessageType::Hello,
        MessageType::Assign,
        MessageType::Tensor,
        MessageType::Result,
        MessageType::Done,
        MessageType::Error,
    ];

    fn from_byte(b: u8) -> Option<Self> {
        Self::ALL.into_iter().find(|t| *t as u8 == b)
    }
}

/// Role announced in a HELLO frame's image id field.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u32)]
pub enum LinkRole {
    /// Requester opening the control link to a worker.
    Control = 0,
    /// Upstream worker opening the data link to its successor.
    Data = 1,
    /// Worker acknowledging its assignment.
    Ready = 2,
}

impl LinkRole {
    pub fn from_id(id: u32) -> Option<Self> {
        match id {
            0 => Some(Self::Control),
            1 => Some(Self::Data),
            2 => Some(Self::Ready),
            _ => None,
        }
    }
}

#[derive(Debug, thiserror::Error)]
pub enum FrameError {
    #[error("bad magic {0:?}")]
    BadMagic([u8; 4]),
    #[error("unsupported frame version {0}")]
    UnsupportedVersion(u8),
    #[error("unknown message type {0}")]
    UnknownType(u8),
    #[error("truncated frame: needed {needed} bytes, had {available}")]
    Truncated { needed: usize, available: usize },
    #[error("{kind:?} payload is {actual} bytes, expected {expected}")]
    PayloadMismatch {
        kind: MessageType,
        expected: String,
        actual: usize,
    },
    #[error("payload of {0} bytes exceeds the frame limit")]
    PayloadTooLarge(u64),
    #[error("frame has {0} dims, at most 255 allowed")]
    TooManyDims(usize),
    #[error("error text is not UTF-8")]
    InvalidText,
    #[error("{0} trailing bytes after frame")]
    TrailingBytes(usize),
    #[error(transparent)]
    Io(#[from] io::Error),
}

/// Counters a worker reports when it finishes.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct WorkerReport {
    pub images: u64,
    pub tensor_bytes_in: u64,
    pub tensor_bytes_out: u64,
    pub busy_ns: u64,
}

impl WorkerReport {
    const LEN: usize = 32;

    fn to_bytes(self) -> Vec<u8> {
        [
            self.images,
            self.tensor_bytes_in,
            self.tensor_bytes_out,
            self.busy_ns,
        ]
        .iter()
        .flat_map(|v| v.to_le_bytes())
        .collect()
    }

    fn from_bytes(b: &[u8]) -> Self {
        let word = |i: usize| u64::from_le_bytes(b[i * 8..i * 8 + 8].try_into().expect("8 bytes"));
        Self {
            images: word(0),
            tensor_bytes_in: word(1),
            tensor_bytes_out: word(2),
            busy_ns: word(3),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Frame {
    pub kind: MessageType,
    pub image_id: u32,
    pub dims: Vec<u32>,
    pub payload: Vec<u8>,
}

impl Frame {
    pub fn hello(role: LinkRole) -> Self {
        Self::header_only(MessageType::Hello, role as u32)
    }

    pub fn done() -> Self {
        Self::header_only(MessageType::Done, 0)
    }

    pub fn done_with_report(report: WorkerReport) -> Self {
        Self {
            payload: report.to_bytes(),
            ..Self::done()
        }
    }

    pub fn error(image_id: u32, message: &str) -> Self {
        Self {
            kind: MessageType::Error,
            image_id,
            dims: Vec::new(),
            payload: message.as_bytes().to_vec(),
        }
    }

    pub fn tensor(image_id: u32, tensor: &Tensor) -> Self {
        Self::activations(MessageType::Tensor, image_id, tensor)
    }

    pub fn result(image_id: u32, tensor: &Tensor) -> Self {
        Self::activations(MessageType::Result, image_id, tensor)
    }

    pub fn assign(stage_index: u32, input_dims: Vec<u32>, body: Vec<u8>) -> Self {
        Self {
            kind: MessageType::Assign,
            image_id: stage_index,
            dims: input_dims,
            payload: body,
        }
    }

    fn header_only(kind: MessageType, image_id: u32) -> Self {
        Self {
            kind,
            image_id,
            dims: Vec::new(),
            payload: Vec::new(),
        }
    }

    fn activations(kind: MessageType, image_id: u32, tensor: &Tensor) -> Self {
        Self {
            kind,
            image_id,
            dims: tensor.shape().dims().iter().map(|&d| d as u32).collect(),
            payload: tensor.to_le_bytes(),
        }
    }

    pub fn header_len(&self) -> usize {
        header_len(self.dims.len())
    }

    pub fn encoded_len(&self) -> usize {
        self.header_len() + self.payload.len()
    }

    /// Decodes a TENSOR or RESULT payload.
    pub fn to_tensor(&self) -> Result<Tensor, FrameError> {
        self.check()?;
        let dims: Vec<usize> = self.dims.iter().map(|&d| d as usize).collect();
        let shape = TensorShape::new(dims).map_err(|e| FrameError::PayloadMismatch {
            kind: self.kind,
            expected: e.to_string(),
            actual: self.payload.len(),
        })?;
        let values = self
            .payload
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
            .collect();
        Tensor::new(shape, values).map_err(|e| FrameError::PayloadMismatch {
            kind: self.kind,
            expected: e.to_string(),
            actual: self.payload.len(),
        })
    }

    pub fn error_text(&self) -> Option<&str> {
        match self.kind {
            MessageType::Error => std::str::from_utf8(&self.payload).ok(),
            _ => None,
        }
    }

    pub fn report(&self) -> Option<WorkerReport> {
        (self.kind == MessageType::Done && self.payload.len() == WorkerReport::LEN)
            .then(|| WorkerReport::from_bytes(&self.payload))
    }

    /// Per-type payload rules shared by encoding and decoding.
    pub fn check(&self) -> Result<(), FrameError> {
        if self.dims.len() > u8::MAX as usize {
            return Err(FrameError::TooManyDims(self.dims.len()));
        }
        if self.payload.len() as u64 > MAX_PAYLOAD as u64 {
            return Err(FrameError::PayloadTooLarge(self.payload.len() as u64));
        }
        let mismatch = |expected: String| FrameError::PayloadMismatch {
            kind: self.kind,
            expected,
            actual: self.payload.len(),
        };
        match self.kind {
            MessageType::Tensor | MessageType::Result => {
                let elements: u64 = self.dims.iter().map(|&d| d as u64).product();
                if self.dims.is_empty() || elements * 4 != self.payload.len() as u64 {
                    return Err(mismatch(format!(
                        "{} (4 x product of dims {:?})",
                        elements * 4,
                        self.dims
                    )));
                }
            }
            MessageType::Hello => {
                if !self.payload.is_empty() {
                    return Err(mismatch("0".into()));
                }
            }
            MessageType::Done => {
                if !self.payload.is_empty() && self.payload.len() != WorkerReport::LEN {
                    return Err(mismatch(format!("0 or {}", WorkerReport::LEN)));
                }
            }
            MessageType::Error => {
                if std::str::from_utf8(&self.payload).is_err() {
                    return Err(FrameError::InvalidText);
                }
            }
            MessageType::Assign => {}
        }
        Ok(())
    }
}

fn header_len(dims: usize) -> usize {
    4 + 1 + 1 + 4 + 1 + 4 * dims + 4
}

pub fn encode_frame(frame: &Frame) -> Result<Vec<u8>, FrameError> {
    frame.check()?;
    let mut out = Vec::with_capacity(frame.encoded_len());
    out.extend_from_slice(FRAME_MAGIC);
    out.push(FRAME_VERSION);
    out.push(frame.kind as u8);
    out.extend_from_slice(&frame.image_id.to_le_bytes());
    out.push(frame.dims.len() as u8);
    for d in &frame.dims {
        out.extend_from_slice(&d.to_le_bytes());
    }
    out.extend_from_slice(&(frame.payload.len() as u32).to_le_bytes());
    out.extend_from_slice(&frame.payload);
    Ok(out)
}

/// Decodes exactly one frame occupying all of `bytes`.
pub fn decode_frame(bytes: &[u8]) -> Result<Frame, FrameError> {
    let (frame, used) = decode_prefix(bytes)?;
    if used != bytes.len() {
        return Err(FrameError::TrailingBytes(bytes.len() - used));
    }
    Ok(frame)
}

/// Decodes the frame at the start of `bytes`, returning it with the number
/// of bytes it occupied.
pub fn decode_prefix(bytes: &[u8]) -> Result<(Frame, usize), FrameError> {
    let need = |n: usize| {
        if bytes.len() < n {
            Err(FrameError::Truncated {
                needed: n,
                available: bytes.len(),
            })
        } else {
            Ok(())
        }
    };
    need(4)?;
    let magic: [u8; 4] = bytes[..4].try_into().expect("4 bytes");
    if &magic != FRAME_MAGIC {
        return Err(FrameError::BadMagic(magic));
    }
    need(11)?;
    if bytes[4] != FRAME_VERSION {
        return Err(FrameError::UnsupportedVersion(bytes[4]));
    }
    let kind = MessageType::from_byte(bytes[5]).ok_or(FrameError::UnknownType(bytes[5]))?;
    let image_id = u32::from_le_bytes(bytes[6..10].try_into().expect("4 bytes"));
    let ndims = bytes[10] as usize;
    let hlen = header_len(ndims);
    need(hlen)?;
    let dims = bytes[11..11 + 4 * ndims]
        .chunks_exact(4)
        .map(|c| u32::from_le_bytes([c[0], c[1], c[2], c[3]]))
        .collect();
    let plen = u32::from_le_bytes(bytes[hlen - 4..hlen].try_into().expect("4 bytes"));
    if plen > MAX_PAYLOAD {
        return Err(FrameError::PayloadTooLarge(plen as u64));
    }
    need(hlen + plen as usize)?;
    let frame = Frame {
        kind,
        image_id,
        dims,
        payload: bytes[hlen..hlen + plen as usize].to_vec(),
    };
    frame.check()?;
    Ok((frame, hlen + plen as usize))
}

/// Reads the next frame; `Ok(None)` on a clean end of stream between frames.
pub fn read_frame(r: &mut impl Read) -> Result<Option<Frame>, FrameError> {
    let mut head = vec![0u8; 11];
    let got = read_full(r, &mut head)?;
    if got == 0 {
        return Ok(None);
    }
    if got >= 4 && &head[..4] != FRAME_MAGIC {
        return Err(FrameError::BadMagic(head[..4].try_into().expect("4 bytes")));
    }
    if got < head.len() {
        return Err(FrameError::Truncated {
            needed: head.len(),
            available: got,
        });
    }
    let ndims = head[10] as usize;
    let mut rest = vec![0u8; 4 * ndims + 4];
    fill(r, &mut rest, head.len())?;
    head.extend_from_slice(&rest);
    let hlen = head.len();
    let plen = u32::from_le_bytes(head[hlen - 4..].try_into().expect("4 bytes"));
    if plen > MAX_PAYLOAD {
        return Err(FrameError::PayloadTooLarge(plen as u64));
    }
    let mut buf = head;
    buf.resize(hlen + plen as usize, 0);
    fill(r, &mut buf[hlen..], hlen)?;
    decode_frame(&buf).map(Some)
}

fn fill(r: &mut impl Read, buf: &mut [u8], already: usize) -> Result<(), FrameError> {
    let got = read_full(r, buf)?;
    if got < buf.len() {
        return Err(FrameError::Truncated {
            needed: already + buf.len(),
            available: already + got,
        });
    }
    Ok(())
}

fn read_full(r: &mut impl Read, buf: &mut [u8]) -> io::Result<usize> {
    let mut done = 0;
    while done < buf.len() {
        match r.read(&mut buf[done..]) {
            Ok(0) => break,
            Ok(n) => done += n,
            Err(e) if e.kind() == io::ErrorKind::Interrupted => {}
            Err(e) => return Err(e),
        }
    }
    Ok(done)
}

pub fn write_frame(w: &mut impl Write, frame: &Frame) -> Result<usize, FrameError> {
    let bytes = encode_frame(frame)?;
    w.write_all(&bytes)?;
    w.flush()?;
    Ok(bytes.len())
}
