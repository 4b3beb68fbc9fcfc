//! Helpers that stand up a whole pipeline on one machine.

use std::io::{BufRead, BufReader};
use std::path::Path;
use std::process::{Child, Command, Stdio};
use std::thread;

use super::requester::{
    build_assignments, run_pipeline, run_requester, PipelineRun, RequesterConfig,
};
use super::transport::{mem_duplex, LinkDelay, MemEndpoint};
use super::worker::worker_session;
use super::RuntimeError;
use crate::cnn::{ModelGraph, Tensor, Weights};
use crate::partition::PartitionPlan;

/// A `pipecnn worker` child process, killed when dropped.
pub struct WorkerProcess {
    child: Child,
    addr: String,
}

impl WorkerProcess {
    /// Starts `exe worker --listen 127.0.0.1:0` and waits for the address it
    /// prints.
    pub fn spawn(exe: &Path) -> Result<Self, RuntimeError> {
        let mut child = Command::new(exe)
            .args(["worker", "--listen", "127.0.0.1:0"])
            .stdin(Stdio::null())
            .stdout(Stdio::piped())
            .spawn()?;
        let stdout = child.stdout.take().expect("stdout is piped");
        let mut line = String::new();
        BufReader::new(stdout).read_line(&mut line)?;
        let addr = line
            .trim()
            .strip_prefix("listening on ")
            .map(str::to_string);
        match addr {
            Some(addr) => Ok(Self { child, addr }),
            None => {
                let _ = child.kill();
                let _ = child.wait();
                Err(RuntimeError::WorkerExited(format!(
                    "worker printed {:?} instead of its address",
                    line.trim()
                )))
            }
        }
    }

    pub fn addr(&self) -> &str {
        &self.addr
    }

    /// Waits for a clean exit.
    pub fn wait(mut self) -> Result<(), RuntimeError> {
        let status = self.child.wait()?;
        if status.success() {
            Ok(())
        } else {
            Err(RuntimeError::WorkerExited(format!(
                "worker {} exited with {status}",
                self.addr
            )))
        }
    }
}

impl Drop for WorkerProcess {
    fn drop(&mut self) {
        if let Ok(None) = self.child.try_wait() {
            let _ = self.child.kill();
            let _ = self.child.wait();
        }
    }
}

/// Spawns one worker process per stage and runs the plan across them.
pub fn run_local_processes(
    exe: &Path,
    model: &ModelGraph,
    weights: &Weights,
    plan: &PartitionPlan,
    images: &[Tensor],
    config: &RequesterConfig,
) -> Result<PipelineRun, RuntimeError> {
    let workers = (0..plan.num_stages())
        .map(|_| WorkerProcess::spawn(exe))
        .collect::<Result<Vec<_>, _>>()?;
    let addrs: Vec<String> = workers.iter().map(|w| w.addr().to_string()).collect();
    let run = run_requester(model, weights, plan, images, &addrs, config)?;
    for w in workers {
        w.wait()?;
    }
    Ok(run)
}

/// Runs the plan with every stage on a thread of this process, linked by
/// in-process transports with the given delay.
pub fn run_in_process(
    model: &ModelGraph,
    weights: &Weights,
    plan: &PartitionPlan,
    images: &[Tensor],
    config: &RequesterConfig,
    delay: LinkDelay,
) -> Result<PipelineRun, RuntimeError> {
    let stages = plan.num_stages();
    // data link i joins stage i to stage i + 1; addresses are just indices
    let downstream: Vec<Option<String>> = (0..stages)
        .map(|i| (i + 1 < stages).then(|| i.to_string()))
        .collect();
    let assignments = build_assignments(model, weights, plan, &downstream)?;

    let mut senders = Vec::new();
    let mut receivers = vec![None];
    for _ in 1..stages {
        let (a, b) = mem_duplex(delay);
        senders.push(Some(a));
        receivers.push(Some(b));
    }
    senders.push(None);

    let mut controls = Vec::with_capacity(stages);
    let mut handles = Vec::with_capacity(stages);
    for (out_link, in_link) in senders.into_iter().zip(receivers) {
        let (ours, theirs) = mem_duplex(delay);
        controls.push(ours);
        handles.push(thread::spawn(move || {
            worker_session::<MemEndpoint>(
                theirs,
                || in_link.ok_or_else(|| std::io::Error::other("no upstream link")),
                |_| out_link.ok_or_else(|| std::io::Error::other("no downstream link")),
            )
        }));
    }
    let run = run_pipeline(controls, assignments, images, config);
    let joined: Vec<_> = handles.into_iter().map(|h| h.join()).collect();
    let run = run?;
    for joined in joined {
        joined.map_err(|_| RuntimeError::Protocol("worker thread panicked".into()))??;
    }
    Ok(run)
}
