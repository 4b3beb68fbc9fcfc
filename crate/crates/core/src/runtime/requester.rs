use std::net::TcpStream;
use std::sync::mpsc::{self, RecvTimeoutError};
use std::sync::Arc;
use std::thread;
use std::time::{Duration, Instant};

use super::frame::{Frame, LinkRole, MessageType, WorkerReport};
use super::stats::PipelineStats;
use super::transport::{Endpoint, FrameReader, FrameWriter};
use super::worker::StageAssignment;
use super::RuntimeError;
use crate::cnn::{ModelGraph, Tensor, Weights};
use crate::partition::{Feasibility, PartitionPlan};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RequesterConfig {
    /// Max images in flight; `None` means twice the stage count.
    pub window: Option<usize>,
    /// Longest wait for any single frame before aborting.
    pub frame_timeout: Duration,
}

impl Default for RequesterConfig {
    fn default() -> Self {
        Self {
            window: None,
            frame_timeout: Duration::from_secs(30),
        }
    }
}

impl RequesterConfig {
    pub fn window_for(&self, stages: usize) -> usize {
        self.window.unwrap_or(2 * stages).max(1)
    }
}

#[derive(Debug)]
pub struct PipelineRun {
    pub outputs: Vec<Tensor>,
    pub stats: PipelineStats,
    pub reports: Vec<WorkerReport>,
}

/// One assignment per plan stage. `downstream[i]` is where stage `i` sends
/// its output (`None` for the requester) and must be `None` only last.
pub fn build_assignments(
    model: &ModelGraph,
    weights: &Weights,
    plan: &PartitionPlan,
    downstream: &[Option<String>],
) -> Result<Vec<StageAssignment>, RuntimeError> {
    if plan.num_layers != model.len() {
        return Err(RuntimeError::Config(format!(
            "plan covers {} layers, model has {}",
            plan.num_layers,
            model.len()
        )));
    }
    if plan.feasibility == Feasibility::Infeasible {
        return Err(RuntimeError::Config("plan is marked infeasible".into()));
    }
    let ranges = plan.stage_ranges();
    if downstream.len() != ranges.len() {
        return Err(RuntimeError::Config(format!(
            "{} stages but {} downstream addresses",
            ranges.len(),
            downstream.len()
        )));
    }
    Ok(ranges
        .iter()
        .zip(downstream)
        .enumerate()
        .map(|(i, (&(start, end), next))| StageAssignment {
            stage_index: i,
            layer_start: start,
            layer_end: end,
            input_shape: model.shape_before(start).clone(),
            layers: model.layers()[start..end].to_vec(),
            weights: weights.slice(start, end).to_vec(),
            downstream: next.clone(),
        })
        .collect())
}

enum Event {
    Frame(usize, Frame),
    Closed(usize),
    Failed(usize, String),
}

/// Drives a pipeline whose workers are reachable over `controls`, one
/// control link per stage in stage order.
///
/// Sends each worker its assignment, streams `images` into stage 0 with at
/// most `window` in flight, and collects results in image order.
pub fn run_pipeline<E: Endpoint>(
    controls: Vec<E>,
    assignments: Vec<StageAssignment>,
    images: &[Tensor],
    config: &RequesterConfig,
) -> Result<PipelineRun, RuntimeError> {
    let stages = assignments.len();
    if stages == 0 || controls.len() != stages {
        return Err(RuntimeError::Config(format!(
            "{} control links for {stages} stages",
            controls.len()
        )));
    }
    let timeout = config.frame_timeout;

    let mut readers = Vec::with_capacity(stages);
    let mut writers = Vec::with_capacity(stages);
    let mut closers = Vec::with_capacity(stages);
    for c in controls {
        let s = c.split()?;
        readers.push(FrameReader::new(s.reader));
        writers.push(FrameWriter::new(s.writer));
        closers.push(s.closer);
    }
    let close_all = || closers.iter().for_each(|c| c());

    // Readers run on their own threads so every wait below can time out.
    let (events_tx, events) = mpsc::channel();
    for (stage, mut reader) in readers.into_iter().enumerate() {
        let tx = events_tx.clone();
        thread::spawn(move || loop {
            let event = match reader.recv() {
                Ok(Some(f)) => Event::Frame(stage, f),
                Ok(None) => Event::Closed(stage),
                Err(e) => Event::Failed(stage, e.to_string()),
            };
            let stop = !matches!(event, Event::Frame(..));
            if tx.send(event).is_err() || stop {
                break;
            }
        });
    }
    drop(events_tx);

    let next_event = |what: &str| -> Result<Event, RuntimeError> {
        events.recv_timeout(timeout).map_err(|e| match e {
            RecvTimeoutError::Timeout => RuntimeError::Timeout {
                waiting_for: what.to_string(),
                after: timeout,
            },
            RecvTimeoutError::Disconnected => RuntimeError::Protocol("all links closed".into()),
        })
    };

    let setup = (|| {
        for w in writers.iter_mut() {
            w.send(&Frame::hello(LinkRole::Control))?;
        }
        let mut pending = vec![2u8; stages];
        for (w, a) in writers.iter_mut().zip(&assignments) {
            w.send(&a.to_frame())?;
        }
        // each worker answers HELLO(Control) then, once its data links are
        // up, HELLO(Ready)
        while pending.iter().any(|&p| p > 0) {
            match next_event("worker handshake")? {
                Event::Frame(s, f) if f.kind == MessageType::Hello && pending[s] > 0 => {
                    let want = if pending[s] == 2 {
                        LinkRole::Control
                    } else {
                        LinkRole::Ready
                    };
                    if LinkRole::from_id(f.image_id) != Some(want) {
                        return Err(RuntimeError::Protocol(format!(
                            "stage {s}: unexpected HELLO"
                        )));
                    }
                    pending[s] -= 1;
                }
                other => return Err(stage_failure(other, "during setup")),
            }
        }
        Ok(())
    })();
    if let Err(e) = setup {
        close_all();
        return Err(e);
    }

    let n = images.len();
    let window = config.window_for(stages);
    let (token_tx, token_rx) = mpsc::sync_channel::<()>(window);
    let start = Instant::now();
    let mut first = writers.swap_remove(0);
    let input: Arc<Vec<Tensor>> = Arc::new(images.to_vec());
    let sender = {
        let input = Arc::clone(&input);
        thread::spawn(move || -> Result<(Vec<f64>, FrameWriter), String> {
            let mut injected = Vec::with_capacity(input.len());
            for (id, image) in input.iter().enumerate() {
                if token_tx.send(()).is_err() {
                    return Err("collector stopped".into());
                }
                injected.push(start.elapsed().as_secs_f64());
                first
                    .send(&Frame::tensor(id as u32, image))
                    .map_err(|e| format!("sending image {id}: {e}"))?;
            }
            first.send(&Frame::done()).map_err(|e| e.to_string())?;
            Ok((injected, first))
        })
    };

    let collected = (|| {
        let mut outputs = Vec::with_capacity(n);
        let mut completions = Vec::with_capacity(n);
        let mut reports: Vec<Option<WorkerReport>> = vec![None; stages];
        let mut done_seen = false;
        while !(done_seen && reports.iter().all(Option::is_some)) {
            let what = if outputs.len() < n {
                "a result"
            } else {
                "worker reports"
            };
            match next_event(what)? {
                Event::Frame(s, f) if s == stages - 1 && f.kind == MessageType::Result => {
                    let expected = outputs.len() as u32;
                    if f.image_id != expected || outputs.len() >= n {
                        return Err(RuntimeError::OutOfOrder {
                            expected,
                            got: f.image_id,
                        });
                    }
                    completions.push(start.elapsed().as_secs_f64());
                    outputs.push(f.to_tensor()?);
                    let _ = token_rx.try_recv();
                }
                Event::Frame(s, f) if f.kind == MessageType::Done => match f.report() {
                    Some(r) => reports[s] = Some(r),
                    None if s == stages - 1 && outputs.len() == n => done_seen = true,
                    None => {
                        return Err(RuntimeError::Protocol(format!(
                            "stage {s}: DONE after {} of {n} results",
                            outputs.len()
                        )))
                    }
                },
                // a worker hangs up once it has reported
                Event::Closed(s) | Event::Failed(s, _) if reports[s].is_some() => {}
                other => return Err(stage_failure(other, "while streaming")),
            }
        }
        Ok((outputs, completions, reports))
    })();

    // results are in; close links so reader threads and the workers finish
    let (outputs, completions, reports) = match collected {
        Ok(c) => c,
        Err(e) => {
            drop(token_rx);
            close_all();
            return Err(e);
        }
    };
    let (injected, first) = sender
        .join()
        .map_err(|_| RuntimeError::Protocol("sender thread panicked".into()))?
        .map_err(RuntimeError::Protocol)?;
    close_all();

    let reports: Vec<WorkerReport> = reports.into_iter().map(Option::unwrap_or_default).collect();
    let mut link_bytes = vec![first.tensor_bytes];
    link_bytes.extend(reports.iter().map(|r| r.tensor_bytes_out));
    let busy = reports.iter().map(|r| r.busy_ns as f64 * 1e-9).collect();
    Ok(PipelineRun {
        outputs,
        stats: PipelineStats::from_times(injected, completions, busy, link_bytes),
        reports,
    })
}

fn stage_failure(event: Event, when: &str) -> RuntimeError {
    match event {
        Event::Frame(stage, f) if f.kind == MessageType::Error => RuntimeError::Stage {
            stage,
            message: f.error_text().unwrap_or("<non-UTF-8 error>").to_string(),
        },
        Event::Frame(stage, f) => RuntimeError::Protocol(format!(
            "stage {stage}: unexpected {:?} frame {when}",
            f.kind
        )),
        Event::Closed(stage) => RuntimeError::Stage {
            stage,
            message: format!("worker disconnected {when}"),
        },
        Event::Failed(stage, e) => RuntimeError::Stage {
            stage,
            message: format!("control link failed {when}: {e}"),
        },
    }
}

/// Runs a plan on workers already listening at `workers`, one address per
/// stage in stage order.
pub fn run_requester(
    model: &ModelGraph,
    weights: &Weights,
    plan: &PartitionPlan,
    images: &[Tensor],
    workers: &[String],
    config: &RequesterConfig,
) -> Result<PipelineRun, RuntimeError> {
    if workers.len() != plan.num_stages() {
        return Err(RuntimeError::Config(format!(
            "plan has {} stages but {} worker addresses were given",
            plan.num_stages(),
            workers.len()
        )));
    }
    let downstream: Vec<Option<String>> = (0..workers.len())
        .map(|i| workers.get(i + 1).cloned())
        .collect();
    let assignments = build_assignments(model, weights, plan, &downstream)?;
    let controls = workers
        .iter()
        .map(|a| {
            TcpStream::connect(a)
                .map_err(|e| RuntimeError::Config(format!("connecting to {a}: {e}")))
        })
        .collect::<Result<Vec<_>, _>>()?;
    run_pipeline(controls, assignments, images, config)
}
