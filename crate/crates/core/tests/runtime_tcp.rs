//! The pipeline over real `pipecnn worker` processes and TCP.

use std::io::Read;
use std::net::TcpStream;
use std::path::Path;
use std::process::{Command, Stdio};
use std::time::Duration;

use pipecnn::bench::scenario_catalog;
use pipecnn::cnn::{
    build_lenet, forward_model, synthetic_images, ModelGraph, Tensor, TensorShape, Weights,
};
use pipecnn::partition::{LayerProfile, PartitionPlan};
use pipecnn::runtime::frame::{read_frame, write_frame};
use pipecnn::runtime::{
    build_assignments, run_local_processes, run_pipeline, Frame, LinkRole, MessageType,
    RequesterConfig, RuntimeError, WorkerProcess,
};

fn exe() -> &'static Path {
    Path::new(env!("CARGO_BIN_EXE_pipecnn"))
}

fn setup() -> (ModelGraph, Weights, LayerProfile) {
    let (model, _) = build_lenet();
    let weights = Weights::seeded(&model, 11);
    let profile = LayerProfile::from_model(&model);
    (model, weights, profile)
}

fn header_len(shape: &TensorShape) -> u64 {
    15 + 4 * shape.rank() as u64
}

#[test]
fn every_catalog_case_matches_monolithic() {
    let (model, weights, profile) = setup();
    let images = synthetic_images(model.input_shape(), 8, 21);
    let expected: Vec<Tensor> = images
        .iter()
        .map(|i| forward_model(&model, &weights, i, 0..7).unwrap())
        .collect();
    for s in scenario_catalog() {
        let plan = s.plan(&profile).unwrap();
        let run = run_local_processes(
            exe(),
            &model,
            &weights,
            &plan,
            &images,
            &RequesterConfig::default(),
        )
        .unwrap_or_else(|e| panic!("{}: {e}", s.id));
        assert_eq!(run.outputs, expected, "{}", s.id);
    }
}

#[test]
fn link_bytes_are_conserved() {
    let (model, weights, profile) = setup();
    let n = 13u64;
    let images = synthetic_images(model.input_shape(), n as usize, 3);
    let plan = PartitionPlan::from_cuts(&profile, vec![2, 4]).unwrap();
    let run = run_local_processes(
        exe(),
        &model,
        &weights,
        &plan,
        &images,
        &RequesterConfig::default(),
    )
    .unwrap();

    // boundaries: input, after layer 2, after layer 4, output
    let shapes = [
        model.input_shape().clone(),
        model.shape_after(1).clone(),
        model.shape_after(3).clone(),
        model.output_shape().clone(),
    ];
    let expected: Vec<u64> = shapes
        .iter()
        .map(|s| n * (header_len(s) + 4 * s.element_count()))
        .collect();
    assert_eq!(run.stats.link_bytes, expected);
    assert_eq!(run.stats.link_bytes[1], n * (15 + 12 + 4 * 864));
    for (r, &b) in run.reports.iter().zip(&expected) {
        assert_eq!(r.tensor_bytes_in, b);
        assert_eq!(r.images, n);
    }
}

#[test]
fn stats_are_consistent() {
    let (model, weights, profile) = setup();
    let images = synthetic_images(model.input_shape(), 30, 5);
    let plan = PartitionPlan::from_cuts(&profile, vec![2]).unwrap();
    let run = run_local_processes(
        exe(),
        &model,
        &weights,
        &plan,
        &images,
        &RequesterConfig::default(),
    )
    .unwrap();
    let s = &run.stats;
    assert_eq!(s.n_images, 30);
    assert!(s.makespan >= s.max_latency());
    assert!((s.throughput() - 30.0 / s.makespan).abs() < 1e-9);
    assert!(s.completions.windows(2).all(|w| w[0] <= w[1]));
    assert!(s.stage_busy.iter().all(|&b| b > 0.0));
}

#[test]
fn zero_images_and_window_of_one() {
    let (model, weights, profile) = setup();
    let plan = PartitionPlan::from_cuts(&profile, vec![4]).unwrap();
    let run = run_local_processes(
        exe(),
        &model,
        &weights,
        &plan,
        &[],
        &RequesterConfig::default(),
    )
    .unwrap();
    assert!(run.outputs.is_empty());
    assert_eq!(run.stats.makespan, 0.0);

    let images = synthetic_images(model.input_shape(), 5, 8);
    let config = RequesterConfig {
        window: Some(1),
        ..RequesterConfig::default()
    };
    let run = run_local_processes(exe(), &model, &weights, &plan, &images, &config).unwrap();
    assert_eq!(run.outputs.len(), 5);
}

#[test]
fn wrong_shape_aborts_with_stage() {
    let (model, weights, profile) = setup();
    // the requester never sends a malformed tensor, so talk to the worker
    // directly
    let worker = WorkerProcess::spawn(exe()).unwrap();
    let mut link = TcpStream::connect(worker.addr()).unwrap();
    link.set_read_timeout(Some(Duration::from_secs(10)))
        .unwrap();
    let plan = PartitionPlan::from_cuts(&profile, vec![]).unwrap();
    let assignment = build_assignments(&model, &weights, &plan, &[None])
        .unwrap()
        .remove(0);

    write_frame(&mut link, &Frame::hello(LinkRole::Control)).unwrap();
    assert_eq!(
        read_frame(&mut link).unwrap().unwrap().kind,
        MessageType::Hello
    );
    write_frame(&mut link, &assignment.to_frame()).unwrap();
    assert_eq!(
        read_frame(&mut link).unwrap().unwrap(),
        Frame::hello(LinkRole::Ready)
    );
    let bad = Tensor::filled(TensorShape::flat(100).unwrap(), 1.0);
    write_frame(&mut link, &Frame::tensor(0, &bad)).unwrap();
    let reply = read_frame(&mut link).unwrap().unwrap();
    assert_eq!(reply.kind, MessageType::Error);
    let text = reply.error_text().unwrap();
    assert!(text.contains("784") && text.contains("100"), "{text}");
    assert!(worker.wait().is_err(), "worker should exit nonzero");
}

#[test]
fn requester_reports_failing_stage() {
    let (model, weights, profile) = setup();
    let workers: Vec<WorkerProcess> = (0..2)
        .map(|_| WorkerProcess::spawn(exe()).unwrap())
        .collect();
    let plan = PartitionPlan::from_cuts(&profile, vec![2]).unwrap();
    let addrs: Vec<String> = workers.iter().map(|w| w.addr().to_string()).collect();
    let mut assignments =
        build_assignments(&model, &weights, &plan, &[Some(addrs[1].clone()), None]).unwrap();
    // stage 1 now expects a shape stage 0 never produces
    assignments[1].input_shape = TensorShape::chw(6, 11, 11).unwrap();
    let controls = addrs
        .iter()
        .map(|a| TcpStream::connect(a).unwrap())
        .collect();
    let images = synthetic_images(model.input_shape(), 4, 1);
    let err =
        run_pipeline(controls, assignments, &images, &RequesterConfig::default()).unwrap_err();
    match err {
        RuntimeError::Stage { stage, message } => {
            assert_eq!(stage, 1, "{message}");
            assert!(
                message.contains("726") && message.contains("864"),
                "{message}"
            );
        }
        other => panic!("unexpected {other}"),
    }
}

#[test]
fn silent_worker_times_out() {
    let (model, weights, profile) = setup();
    // something that accepts the connection and never answers
    let listener = std::net::TcpListener::bind("127.0.0.1:0").unwrap();
    let addr = listener.local_addr().unwrap();
    let plan = PartitionPlan::from_cuts(&profile, vec![]).unwrap();
    let assignments = build_assignments(&model, &weights, &plan, &[None]).unwrap();
    let config = RequesterConfig {
        window: None,
        frame_timeout: Duration::from_millis(300),
    };
    let err = run_pipeline(
        vec![TcpStream::connect(addr).unwrap()],
        assignments,
        &[],
        &config,
    )
    .unwrap_err();
    assert!(matches!(err, RuntimeError::Timeout { .. }), "{err}");
    drop(listener);
}

#[test]
fn worker_exits_nonzero_on_broken_control_link() {
    let mut child = Command::new(exe())
        .args(["worker", "--listen", "127.0.0.1:0"])
        .stdout(Stdio::piped())
        .stderr(Stdio::piped())
        .spawn()
        .unwrap();
    let mut line = [0u8; 64];
    let n = child.stdout.as_mut().unwrap().read(&mut line).unwrap();
    let text = String::from_utf8_lossy(&line[..n]).to_string();
    let addr = text
        .trim()
        .strip_prefix("listening on ")
        .unwrap()
        .to_string();
    drop(TcpStream::connect(addr).unwrap());
    let status = child.wait().unwrap();
    assert!(!status.success());
}
