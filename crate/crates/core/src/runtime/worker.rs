use std::io::Write as _;
use std::net::{SocketAddr, TcpListener, TcpStream, ToSocketAddrs};
use std::time::Instant;

use serde::{Deserialize, Serialize};

use super::frame::{Frame, FrameError, LinkRole, MessageType, WorkerReport};
use super::transport::{Endpoint, FrameReader, FrameWriter};
use super::RuntimeError;
use crate::cnn::{
    read_blocks, run_layers, write_blocks, CnnError, LayerSpec, LayerWeights, TensorShape,
};

/// Everything a worker needs to run its slice of the model.
#[derive(Debug, Clone, PartialEq)]
pub struct StageAssignment {
    pub stage_index: usize,
    pub layer_start: usize,
    pub layer_end: usize,
    pub input_shape: TensorShape,
    pub layers: Vec<LayerSpec>,
    pub weights: Vec<LayerWeights>,
    /// Where to send outputs; `None` sends RESULT frames back to the
    /// requester over the control link.
    pub downstream: Option<String>,
}

#[derive(Serialize, Deserialize)]
struct AssignHeader {
    stage_index: usize,
    layer_start: usize,
    layer_end: usize,
    input_shape: TensorShape,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    downstream: Option<String>,
    layers: Vec<LayerSpec>,
}

impl StageAssignment {
    pub fn is_last(&self) -> bool {
        self.downstream.is_none()
    }

    /// ASSIGN payload: u32 LE length of a TOML header, the header, then a
    /// u32 LE block count and the weight blocks in `PCNW` block layout.
    pub fn to_frame(&self) -> Frame {
        let header = AssignHeader {
            stage_index: self.stage_index,
            layer_start: self.layer_start,
            layer_end: self.layer_end,
            input_shape: self.input_shape.clone(),
            downstream: self.downstream.clone(),
            layers: self.layers.clone(),
        };
        let text = toml::to_string(&header).expect("assignment header serializes");
        let mut body = Vec::new();
        body.extend_from_slice(&(text.len() as u32).to_le_bytes());
        body.extend_from_slice(text.as_bytes());
        body.extend_from_slice(&(self.weights.len() as u32).to_le_bytes());
        for block in &self.weights {
            write_blocks(&mut body, block).expect("writing to a Vec cannot fail");
        }
        let dims = self.input_shape.dims().iter().map(|&d| d as u32).collect();
        Frame::assign(self.stage_index as u32, dims, body)
    }

    pub fn from_frame(frame: &Frame) -> Result<Self, RuntimeError> {
        if frame.kind != MessageType::Assign {
            return Err(RuntimeError::Protocol(format!(
                "expected ASSIGN, got {:?}",
                frame.kind
            )));
        }
        let bad = |m: &str| RuntimeError::Protocol(format!("malformed ASSIGN: {m}"));
        let body = &frame.payload;
        if body.len() < 4 {
            return Err(bad("missing header length"));
        }
        let hlen = u32::from_le_bytes(body[..4].try_into().expect("4 bytes")) as usize;
        let text = body
            .get(4..4 + hlen)
            .and_then(|b| std::str::from_utf8(b).ok())
            .ok_or_else(|| bad("header"))?;
        let header: AssignHeader = toml::from_str(text).map_err(|e| bad(&e.to_string()))?;
        let mut rest = &body[4 + hlen..];
        let mut count = [0u8; 4];
        std::io::Read::read_exact(&mut rest, &mut count).map_err(|_| bad("block count"))?;
        let weights = (0..u32::from_le_bytes(count))
            .map(|_| read_blocks(&mut rest))
            .collect::<Result<Vec<_>, CnnError>>()?;
        if !rest.is_empty() {
            return Err(bad("trailing bytes"));
        }
        if weights.len() != header.layers.len()
            || header.layer_end.checked_sub(header.layer_start) != Some(header.layers.len())
        {
            return Err(bad("layer range, layers and weight blocks disagree"));
        }
        Ok(Self {
            stage_index: header.stage_index,
            layer_start: header.layer_start,
            layer_end: header.layer_end,
            input_shape: header.input_shape,
            layers: header.layers,
            weights,
            downstream: header.downstream,
        })
    }
}

#[derive(Debug, thiserror::Error)]
pub enum StageError {
    #[error("image {image_id}: expected {expected_count} elements {expected_shape}, received {received_count} elements {received_shape:?}")]
    ShapeMismatch {
        image_id: u32,
        expected_shape: TensorShape,
        expected_count: u64,
        received_count: u64,
        received_shape: Vec<u32>,
    },
    #[error("protocol violation: {0}")]
    Protocol(String),
    #[error("upstream closed before DONE")]
    UpstreamClosed,
    #[error(transparent)]
    Frame(#[from] FrameError),
    #[error(transparent)]
    Cnn(#[from] CnnError),
}

/// Receive, compute, forward until DONE arrives; DONE is passed downstream.
pub fn run_stage(
    assignment: &StageAssignment,
    upstream: &mut FrameReader,
    downstream: &mut FrameWriter,
) -> Result<WorkerReport, StageError> {
    let mut report = WorkerReport::default();
    let mut last_id: Option<u32> = None;
    let expected_count = assignment.input_shape.element_count();
    loop {
        let frame = upstream.recv()?.ok_or(StageError::UpstreamClosed)?;
        match frame.kind {
            MessageType::Tensor => {
                if last_id.is_some_and(|prev| frame.image_id <= prev) {
                    return Err(StageError::Protocol(format!(
                        "image id {} after {}",
                        frame.image_id,
                        last_id.unwrap_or_default()
                    )));
                }
                last_id = Some(frame.image_id);
                let received_count: u64 = frame.dims.iter().map(|&d| d as u64).product();
                let dims_match = frame.dims.iter().map(|&d| d as usize).eq(assignment
                    .input_shape
                    .dims()
                    .iter()
                    .copied());
                if !dims_match {
                    return Err(StageError::ShapeMismatch {
                        image_id: frame.image_id,
                        expected_shape: assignment.input_shape.clone(),
                        expected_count,
                        received_count,
                        received_shape: frame.dims.clone(),
                    });
                }
                let input = frame.to_tensor()?;
                let started = Instant::now();
                let output = run_layers(&assignment.layers, &assignment.weights, &input)?;
                report.busy_ns += started.elapsed().as_nanos() as u64;
                let out = if assignment.is_last() {
                    Frame::result(frame.image_id, &output)
                } else {
                    Frame::tensor(frame.image_id, &output)
                };
                downstream.send(&out)?;
                report.images += 1;
            }
            MessageType::Done => {
                downstream.send(&Frame::done())?;
                report.tensor_bytes_in = upstream.tensor_bytes;
                report.tensor_bytes_out = downstream.tensor_bytes;
                return Ok(report);
            }
            other => {
                return Err(StageError::Protocol(format!("unexpected {other:?} frame")));
            }
        }
    }
}

fn expect_hello(reader: &mut FrameReader, role: LinkRole) -> Result<(), RuntimeError> {
    match reader.recv()? {
        Some(f) if f.kind == MessageType::Hello && LinkRole::from_id(f.image_id) == Some(role) => {
            Ok(())
        }
        Some(f) => Err(RuntimeError::Protocol(format!(
            "expected HELLO {role:?}, got {:?} {}",
            f.kind, f.image_id
        ))),
        None => Err(RuntimeError::Protocol(
            "link closed during handshake".into(),
        )),
    }
}

/// One worker lifetime on an already-accepted control link.
///
/// Handshakes with the requester, takes its assignment, connects to the
/// downstream stage (through `connect`) and, unless it is the first stage,
/// takes its upstream link from `accept_upstream`. Failures are reported to
/// the requester as an ERROR frame before returning.
pub fn worker_session<E: Endpoint>(
    control: E,
    accept_upstream: impl FnOnce() -> std::io::Result<E>,
    connect: impl FnOnce(&str) -> std::io::Result<E>,
) -> Result<WorkerReport, RuntimeError> {
    let control = control.split()?;
    let mut ctrl_r = FrameReader::new(control.reader);
    let mut ctrl_w = FrameWriter::new(control.writer);

    expect_hello(&mut ctrl_r, LinkRole::Control)?;
    ctrl_w.send(&Frame::hello(LinkRole::Control))?;
    let assign = ctrl_r
        .recv()?
        .ok_or_else(|| RuntimeError::Protocol("control link closed before ASSIGN".into()))?;
    let assignment = match StageAssignment::from_frame(&assign) {
        Ok(a) => a,
        Err(e) => {
            let _ = ctrl_w.send(&Frame::error(0, &e.to_string()));
            return Err(e);
        }
    };
    log::info!(
        "stage {} assigned layers {}..{}",
        assignment.stage_index,
        assignment.layer_start,
        assignment.layer_end
    );

    // connect downstream before waiting on upstream so a chain of workers
    // never waits on itself
    let mut data_w = match &assignment.downstream {
        Some(addr) => {
            let link = connect(addr)?.split()?;
            let mut w = FrameWriter::new(link.writer);
            w.send(&Frame::hello(LinkRole::Data))?;
            Some(w)
        }
        None => None,
    };
    let mut data_r = if assignment.stage_index > 0 {
        let link = accept_upstream()?.split()?;
        let mut r = FrameReader::new(link.reader);
        expect_hello(&mut r, LinkRole::Data)?;
        Some(r)
    } else {
        None
    };
    ctrl_w.send(&Frame::hello(LinkRole::Ready))?;

    let outcome = {
        let (upstream, downstream) = match (&mut data_r, &mut data_w) {
            (Some(r), Some(w)) => (r, w),
            (Some(r), None) => (r, &mut ctrl_w),
            (None, Some(w)) => (&mut ctrl_r, w),
            (None, None) => (&mut ctrl_r, &mut ctrl_w),
        };
        run_stage(&assignment, upstream, downstream)
    };
    match outcome {
        Ok(report) => {
            ctrl_w.send(&Frame::done_with_report(report))?;
            Ok(report)
        }
        Err(e) => {
            let id = match &e {
                StageError::ShapeMismatch { image_id, .. } => *image_id,
                _ => 0,
            };
            let message = e.to_string();
            let _ = ctrl_w.send(&Frame::error(id, &message));
            Err(RuntimeError::Stage {
                stage: assignment.stage_index,
                message,
            })
        }
    }
}

/// Binds `listen`, reports the bound address through `on_bound`, then
/// serves one requester session over TCP.
pub fn serve_worker(
    listen: impl ToSocketAddrs,
    on_bound: impl FnOnce(SocketAddr),
) -> Result<WorkerReport, RuntimeError> {
    let listener = TcpListener::bind(listen)?;
    on_bound(listener.local_addr()?);
    let (control, peer) = listener.accept()?;
    log::debug!("control link from {peer}");
    worker_session(
        control,
        || listener.accept().map(|(s, _)| s),
        |addr: &str| TcpStream::connect(addr),
    )
}

/// `serve_worker` printing `listening on <addr>` to stdout once bound.
pub fn serve_worker_stdout(listen: impl ToSocketAddrs) -> Result<WorkerReport, RuntimeError> {
    serve_worker(listen, |addr| {
        let mut out = std::io::stdout();
        let _ = writeln!(out, "listening on {addr}");
        let _ = out.flush();
    })
}
