use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Duration;

use clap::{Parser, Subcommand};

use pipecnn::bench::{
    bench, calibrate_reference, image_sweep, read_rows_file, select_scenarios, write_report,
    write_rows, BenchConfig, BenchMode, CostModelSet,
};
use pipecnn::cnn::{build_lenet, forward_model, synthetic_images, ModelGraph, Tensor, Weights};
use pipecnn::partition::{
    dpm_trace, predict, LayerProfile, PartitionPlan, PartitionRequest, PlanFile,
};
use pipecnn::runtime::{run_requester, serve_worker_stdout, RequesterConfig};
use pipecnn::sim::{simulate, Overlap};

type AnyError = Box<dyn std::error::Error>;

#[derive(Parser)]
#[command(
    name = "pipecnn",
    version,
    about = "Pipelined CNN inference across worker processes"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Serve one pipeline stage; prints `listening on <addr>` once bound.
    Worker {
        #[arg(long, default_value = "127.0.0.1:0")]
        listen: String,
    },
    /// Stream images through workers that are already listening.
    Run {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        weights: PathBuf,
        #[arg(long)]
        plan: PathBuf,
        /// An image count (seeded synthetic inputs) or a directory of raw
        /// little-endian f32 files.
        #[arg(long)]
        images: String,
        /// Worker addresses in stage order, comma separated.
        #[arg(long, value_delimiter = ',', required = true)]
        workers: Vec<String>,
        #[arg(long)]
        stats_out: Option<PathBuf>,
        /// Max images in flight (default: twice the stage count).
        #[arg(long)]
        window: Option<usize>,
        #[arg(long, default_value_t = 30.0)]
        timeout_secs: f64,
        #[arg(long, default_value_t = 2)]
        seed: u64,
        /// Compare every result with local inference over the whole model.
        #[arg(long)]
        verify: bool,
    },
    /// Simulate a plan under a cost model.
    Simulate {
        #[arg(long)]
        plan: PathBuf,
        #[arg(long)]
        cost_model: PathBuf,
        #[arg(long)]
        images: usize,
        /// send-overlaps-compute or send-blocks-compute; defaults to the
        /// cost model file's setting, then send-overlaps-compute.
        #[arg(long)]
        overlap: Option<Overlap>,
        /// Model file the plan refers to (default: built-in LeNet).
        #[arg(long)]
        model: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run catalog scenarios and write a CSV of timings.
    Bench {
        /// `all` or comma-separated case ids such as II.2,III.1
        #[arg(long, default_value = "all")]
        scenario: String,
        /// Comma-separated image counts, or `sweep`.
        #[arg(long, default_value = "100")]
        images: String,
        #[arg(long, default_value = "simulate")]
        mode: BenchMode,
        /// Cost models for simulate mode (default: fitted to the published
        /// LeNet timings, as `calibrate` writes them)
        #[arg(long)]
        cost_model: Option<PathBuf>,
        #[arg(long)]
        overlap: Option<Overlap>,
        #[arg(long, default_value_t = 1)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Summarize benchmark CSVs into summary.md and per-mode series files.
    Report {
        inputs: Vec<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Partition a model across workers.
    Partition {
        #[arg(long)]
        workers: usize,
        /// Largest tensor, in elements, a link may carry.
        #[arg(long, default_value_t = u64::MAX)]
        capacity: u64,
        #[arg(long)]
        cost_model: PathBuf,
        /// Default: built-in LeNet.
        #[arg(long)]
        model: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
        /// Print the plan after each partitioning step.
        #[arg(long)]
        trace: bool,
    },
    /// Write the LeNet model, seeded weights and one plan per catalog case.
    Lenet {
        #[arg(long)]
        out_dir: PathBuf,
        #[arg(long, default_value_t = 1)]
        seed: u64,
    },
    /// Write cost models fitted to the published single-image timings.
    Calibrate {
        #[arg(long)]
        out: PathBuf,
    },
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("PIPECNN_LOG", "warn")).init();
    match dispatch(Cli::parse().command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}

fn dispatch(command: Command) -> Result<(), AnyError> {
    match command {
        Command::Worker { listen } => {
            let report = serve_worker_stdout(listen.as_str())?;
            log::info!("worker done after {} images", report.images);
            Ok(())
        }
        Command::Run {
            model,
            weights,
            plan,
            images,
            workers,
            stats_out,
            window,
            timeout_secs,
            seed,
            verify,
        } => {
            let model = ModelGraph::load(&model)?;
            let weights = Weights::read_from(&model, fs::File::open(&weights)?)?;
            let plan = PlanFile::load(&plan)?.to_plan(&LayerProfile::from_model(&model))?;
            let images = load_images(&model, &images, seed)?;
            let config = RequesterConfig {
                window,
                frame_timeout: Duration::from_secs_f64(timeout_secs),
            };
            let run = run_requester(&model, &weights, &plan, &images, &workers, &config)?;
            if verify {
                for (id, (image, out)) in images.iter().zip(&run.outputs).enumerate() {
                    if *out != forward_model(&model, &weights, image, 0..model.len())? {
                        return Err(format!("image {id} differs from local inference").into());
                    }
                }
                println!("all {} results match local inference", images.len());
            }
            let s = &run.stats;
            println!(
                "{} images, makespan {:.3} ms, {:.1} images/s",
                s.n_images,
                s.makespan * 1e3,
                s.throughput()
            );
            if let Some(path) = stats_out {
                s.write_csv(fs::File::create(&path)?)?;
                let mut summary = String::new();
                for (k, v) in s.summary_lines() {
                    summary.push_str(&format!("{k} = {v}\n"));
                }
                fs::write(path.with_extension("summary.txt"), summary)?;
            }
            Ok(())
        }
        Command::Simulate {
            plan,
            cost_model,
            images,
            overlap,
            model,
            out,
        } => {
            let profile = profile_for(model.as_deref())?;
            let plan = PlanFile::load(&plan)?.to_plan(&profile)?;
            let set = CostModelSet::load(&cost_model)?;
            let overlap = overlap.or(set.overlap).unwrap_or_default();
            let stats = simulate(&plan, set.for_workers(plan.num_stages()), images, overlap);
            println!(
                "{images} images ({overlap}): makespan {:.6} ms, {:.3} images/s",
                stats.makespan * 1e3,
                stats.throughput()
            );
            match out {
                Some(path) => stats.write_csv(fs::File::create(path)?)?,
                None => stats.write_csv(std::io::stdout())?,
            }
            Ok(())
        }
        Command::Bench {
            scenario,
            images,
            mode,
            cost_model,
            overlap,
            seed,
            out,
        } => {
            let scenarios = select_scenarios(&scenario)?;
            let counts = if images == "sweep" {
                image_sweep()
            } else {
                images
                    .split(',')
                    .map(|n| {
                        n.trim()
                            .parse::<usize>()
                            .map_err(|e| format!("image count {n:?}: {e}"))
                    })
                    .collect::<Result<Vec<_>, _>>()?
            };
            let mut config = match mode {
                BenchMode::Simulate => {
                    let set = match cost_model {
                        Some(path) => CostModelSet::load(path)?,
                        None => calibrate_reference(&LayerProfile::from_model(&build_lenet().0))?,
                    };
                    BenchConfig::simulate(set)
                }
                BenchMode::LocalProcesses => BenchConfig::local_processes(std::env::current_exe()?),
            };
            config.overlap = overlap;
            config.seed = seed;
            let rows = bench(&scenarios, &counts, &config)?;
            fs::create_dir_all(&out)?;
            let path = out.join(format!("bench_{}.csv", mode.name()));
            write_rows(&rows, fs::File::create(&path)?)?;
            println!("{} rows -> {}", rows.len(), path.display());
            Ok(())
        }
        Command::Report { inputs, out } => {
            let mut rows = Vec::new();
            for path in &inputs {
                rows.extend(read_rows_file(path)?);
            }
            for path in write_report(&rows, &out)? {
                println!("{}", path.display());
            }
            Ok(())
        }
        Command::Partition {
            workers,
            capacity,
            cost_model,
            model,
            out,
            trace,
        } => {
            let profile = profile_for(model.as_deref())?;
            let set = CostModelSet::load(&cost_model)?;
            let request = PartitionRequest {
                profile: profile.clone(),
                num_workers: workers,
                channel_capacity: capacity,
                cost_model: *set.for_workers(workers),
            };
            let steps = dpm_trace(&request)?;
            if trace {
                for (name, p) in [
                    ("balanced", &steps.balanced),
                    ("bandwidth", &steps.bandwidth_enforced),
                    ("refined", &steps.locally_refined),
                ] {
                    println!("{name:>9}: cuts {:?} sizes {:?}", p.cuts, p.cut_sizes);
                }
            }
            let plan = steps.result;
            println!(
                "cuts {:?}, stage MACs {:?}, cut sizes {:?}, {:?}",
                plan.cuts, plan.stage_macs, plan.cut_sizes, plan.feasibility
            );
            if plan.is_feasible() {
                let p = predict(&plan, &profile, &request.cost_model, 100)?;
                // against one worker under that worker count's own cost model
                let single = set.for_workers(1).compute_time(profile.total_macs());
                println!(
                    "period {:.3} ms, {:.1}% of one-worker throughput, 100 images {:.3} ms",
                    p.period * 1e3,
                    single / p.period * 100.0,
                    p.makespan * 1e3
                );
            }
            let capacity = (capacity != u64::MAX).then_some(capacity);
            let file = PlanFile::new(&plan, &profile, capacity, Some(request.cost_model));
            match out {
                Some(path) => fs::write(path, file.to_toml())?,
                None => print!("{}", file.to_toml()),
            }
            if plan.is_feasible() {
                Ok(())
            } else {
                Err("no plan satisfies the channel capacity".into())
            }
        }
        Command::Lenet { out_dir, seed } => {
            let (model, _) = build_lenet();
            let profile = LayerProfile::from_model(&model);
            fs::create_dir_all(&out_dir)?;
            fs::write(out_dir.join("lenet.toml"), model.to_toml())?;
            fs::write(
                out_dir.join("lenet.pcnw"),
                Weights::seeded(&model, seed).to_bytes(),
            )?;
            for s in select_scenarios("all")? {
                let plan: PartitionPlan = s.plan(&profile)?;
                let file = PlanFile::new(&plan.with_capacity(u64::MAX), &profile, None, None);
                fs::write(out_dir.join(format!("plan_{}.toml", s.id)), file.to_toml())?;
            }
            println!(
                "wrote lenet.toml, lenet.pcnw and 9 plans to {}",
                out_dir.display()
            );
            Ok(())
        }
        Command::Calibrate { out } => {
            let (model, _) = build_lenet();
            let set = calibrate_reference(&LayerProfile::from_model(&model))?;
            fs::write(&out, set.to_toml())?;
            println!("{}", out.display());
            Ok(())
        }
    }
}

fn profile_for(model: Option<&Path>) -> Result<LayerProfile, AnyError> {
    let model = match model {
        Some(path) => ModelGraph::load(path)?,
        None => build_lenet().0,
    };
    Ok(LayerProfile::from_model(&model))
}

fn load_images(model: &ModelGraph, spec: &str, seed: u64) -> Result<Vec<Tensor>, AnyError> {
    if let Ok(n) = spec.parse::<usize>() {
        return Ok(synthetic_images(model.input_shape(), n, seed));
    }
    let mut paths: Vec<PathBuf> = fs::read_dir(spec)?
        .map(|e| e.map(|e| e.path()))
        .collect::<Result<_, _>>()?;
    paths.retain(|p| p.is_file());
    paths.sort();
    paths
        .iter()
        .map(|p| {
            let bytes = fs::read(p)?;
            if bytes.len() % 4 != 0 {
                return Err(format!("{}: length is not a multiple of 4", p.display()).into());
            }
            let values = bytes
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")))
                .collect();
            Tensor::new(model.input_shape().clone(), values)
                .map_err(|e| format!("{}: {e}", p.display()).into())
        })
        .collect()
}
