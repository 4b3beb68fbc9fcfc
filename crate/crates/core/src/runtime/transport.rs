//! Ordered, reliable byte streams between pipeline participants.

use std::io::{self, Read, Write};
use std::net::{Shutdown, TcpStream};
use std::sync::mpsc::{channel, Receiver, Sender};
use std::time::{Duration, Instant};

use super::frame::{read_frame, write_frame, Frame, FrameError, MessageType};

/// Read and write halves of a bidirectional stream plus a hook that tears
/// the stream down so blocked readers return.
pub struct Split {
    pub reader: Box<dyn Read + Send>,
    pub writer: Box<dyn Write + Send>,
    pub closer: Box<dyn Fn() + Send + Sync>,
}

pub trait Endpoint: Send + 'static {
    fn split(self) -> io::Result<Split>;
}

impl Endpoint for TcpStream {
    fn split(self) -> io::Result<Split> {
        self.set_nodelay(true)?;
        let reader = self.try_clone()?;
        let closer = self.try_clone()?;
        Ok(Split {
            reader: Box::new(reader),
            writer: Box::new(self),
            closer: Box::new(move || {
                let _ = closer.shutdown(Shutdown::Both);
            }),
        })
    }
}

/// Reads whole frames and counts the bytes of TENSOR/RESULT frames.
pub struct FrameReader {
    inner: Box<dyn Read + Send>,
    pub tensor_bytes: u64,
}

impl FrameReader {
    pub fn new(inner: Box<dyn Read + Send>) -> Self {
        Self {
            inner,
            tensor_bytes: 0,
        }
    }

    pub fn recv(&mut self) -> Result<Option<Frame>, FrameError> {
        let frame = read_frame(&mut self.inner)?;
        if let Some(f) = &frame {
            if matches!(f.kind, MessageType::Tensor | MessageType::Result) {
                self.tensor_bytes += f.encoded_len() as u64;
            }
        }
        Ok(frame)
    }
}

/// Writes whole frames and counts the bytes of TENSOR/RESULT frames.
pub struct FrameWriter {
    inner: Box<dyn Write + Send>,
    pub tensor_bytes: u64,
}

impl FrameWriter {
    pub fn new(inner: Box<dyn Write + Send>) -> Self {
        Self {
            inner,
            tensor_bytes: 0,
        }
    }

    pub fn send(&mut self, frame: &Frame) -> Result<(), FrameError> {
        let n = write_frame(&mut self.inner, frame)?;
        if matches!(frame.kind, MessageType::Tensor | MessageType::Result) {
            self.tensor_bytes += n as u64;
        }
        Ok(())
    }
}

/// Timing of a simulated link: each write occupies the link for
/// `per_element` times its length in 4-byte elements, then arrives
/// `latency` later. Writes are serialized on the link.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct LinkDelay {
    pub latency: Duration,
    pub per_element: Duration,
}

struct Chunk {
    data: Vec<u8>,
    deliver_at: Instant,
}

pub struct MemWriter {
    tx: Sender<Chunk>,
    delay: LinkDelay,
    link_free: Instant,
}

impl Write for MemWriter {
    fn write(&mut self, buf: &[u8]) -> io::Result<usize> {
        if buf.is_empty() {
            return Ok(0);
        }
        let elements = (buf.len() / 4) as u32;
        let start = self.link_free.max(Instant::now());
        self.link_free = start + self.delay.per_element * elements;
        let chunk = Chunk {
            data: buf.to_vec(),
            deliver_at: self.link_free + self.delay.latency,
        };
        self.tx
            .send(chunk)
            .map_err(|_| io::Error::new(io::ErrorKind::BrokenPipe, "in-process link closed"))?;
        Ok(buf.len())
    }

    fn flush(&mut self) -> io::Result<()> {
        Ok(())
    }
}

pub struct MemReader {
    rx: Receiver<Chunk>,
    buf: Vec<u8>,
    pos: usize,
}

impl Read for MemReader {
    fn read(&mut self, out: &mut [u8]) -> io::Result<usize> {
        if self.pos == self.buf.len() {
            let Ok(chunk) = self.rx.recv() else {
                return Ok(0);
            };
            let now = Instant::now();
            if chunk.deliver_at > now {
                std::thread::sleep(chunk.deliver_at - now);
            }
            self.buf = chunk.data;
            self.pos = 0;
        }
        let n = out.len().min(self.buf.len() - self.pos);
        out[..n].copy_from_slice(&self.buf[self.pos..self.pos + n]);
        self.pos += n;
        Ok(n)
    }
}

/// One direction of an in-process link.
pub fn mem_pipe(delay: LinkDelay) -> (MemWriter, MemReader) {
    let (tx, rx) = channel();
    (
        MemWriter {
            tx,
            delay,
            link_free: Instant::now(),
        },
        MemReader {
            rx,
            buf: Vec::new(),
            pos: 0,
        },
    )
}

/// One end of an in-process bidirectional link.
pub struct MemEndpoint {
    reader: MemReader,
    writer: MemWriter,
}

impl Endpoint for MemEndpoint {
    fn split(self) -> io::Result<Split> {
        Ok(Split {
            reader: Box::new(self.reader),
            writer: Box::new(self.writer),
            // dropping the halves is what ends the peer's reads
            closer: Box::new(|| {}),
        })
    }
}

pub fn mem_duplex(delay: LinkDelay) -> (MemEndpoint, MemEndpoint) {
    let (a_tx, a_rx) = mem_pipe(delay);
    let (b_tx, b_rx) = mem_pipe(delay);
    (
        MemEndpoint {
            reader: b_rx,
            writer: a_tx,
        },
        MemEndpoint {
            reader: a_rx,
            writer: b_tx,
        },
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cnn::{Tensor, TensorShape};

    #[test]
    fn duplex_carries_frames_both_ways() {
        let (a, b) = mem_duplex(LinkDelay::default());
        let a = a.split().unwrap();
        let b = b.split().unwrap();
        let (mut ar, mut aw) = (FrameReader::new(a.reader), FrameWriter::new(a.writer));
        let (mut br, mut bw) = (FrameReader::new(b.reader), FrameWriter::new(b.writer));

        let t = Tensor::filled(TensorShape::flat(4).unwrap(), 1.0);
        aw.send(&Frame::tensor(0, &t)).unwrap();
        aw.send(&Frame::done()).unwrap();
        assert_eq!(br.recv().unwrap().unwrap().to_tensor().unwrap(), t);
        assert_eq!(br.recv().unwrap().unwrap().kind, MessageType::Done);
        assert_eq!(aw.tensor_bytes, 15 + 4 + 16);
        assert_eq!(br.tensor_bytes, aw.tensor_bytes);

        bw.send(&Frame::error(0, "x")).unwrap();
        assert_eq!(ar.recv().unwrap().unwrap().error_text(), Some("x"));
        drop(bw);
        drop(b.closer);
        assert!(ar.recv().unwrap().is_none());
    }

    #[test]
    fn delay_is_applied() {
        let delay = LinkDelay {
            latency: Duration::from_millis(20),
            per_element: Duration::ZERO,
        };
        let (mut w, r) = mem_pipe(delay);
        let mut r = FrameReader::new(Box::new(r));
        let start = Instant::now();
        write_frame(&mut w, &Frame::done()).unwrap();
        r.recv().unwrap().unwrap();
        assert!(start.elapsed() >= Duration::from_millis(20));
    }

    #[test]
    fn closed_peer_breaks_writes() {
        let (mut w, r) = mem_pipe(LinkDelay::default());
        drop(r);
        assert!(write_frame(&mut w, &Frame::done()).is_err());
    }
}
