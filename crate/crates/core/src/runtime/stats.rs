use std::io::Write;

use serde::Serialize;

/// Timing of one batch through a pipeline, measured or simulated.
///
/// Times are seconds from the first injection. `completions` and
/// `latencies` are indexed by image id.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct PipelineStats {
    pub n_images: usize,
    pub injections: Vec<f64>,
    pub completions: Vec<f64>,
    pub latencies: Vec<f64>,
    pub makespan: f64,
    pub stage_busy: Vec<f64>,
    /// TENSOR/RESULT bytes per link; entry 0 is requester to stage 0, the
    /// last entry is the result link back to the requester.
    pub link_bytes: Vec<u64>,
}

#[derive(Serialize)]
struct ImageRow {
    image_id: usize,
    injected_s: f64,
    completed_s: f64,
    latency_s: f64,
}

impl PipelineStats {
    pub fn empty(stages: usize) -> Self {
        Self {
            stage_busy: vec![0.0; stages],
            link_bytes: vec![0; stages + 1],
            ..Self::default()
        }
    }

    /// Fills derived fields from injection and completion times.
    pub fn from_times(
        injections: Vec<f64>,
        completions: Vec<f64>,
        stage_busy: Vec<f64>,
        link_bytes: Vec<u64>,
    ) -> Self {
        assert_eq!(injections.len(), completions.len());
        let latencies = injections
            .iter()
            .zip(&completions)
            .map(|(i, c)| c - i)
            .collect();
        let makespan = completions.iter().copied().fold(0.0, f64::max);
        Self {
            n_images: completions.len(),
            injections,
            completions,
            latencies,
            makespan,
            stage_busy,
            link_bytes,
        }
    }

    /// Images per second; zero for an empty batch.
    pub fn throughput(&self) -> f64 {
        if self.n_images == 0 || self.makespan <= 0.0 {
            0.0
        } else {
            self.n_images as f64 / self.makespan
        }
    }

    pub fn max_latency(&self) -> f64 {
        self.latencies.iter().copied().fold(0.0, f64::max)
    }

    pub fn mean_latency(&self) -> f64 {
        if self.latencies.is_empty() {
            return 0.0;
        }
        self.latencies.iter().sum::<f64>() / self.latencies.len() as f64
    }

    /// Mean spacing between consecutive completions, i.e. the pipeline's
    /// period once filled. `None` below two images.
    pub fn steady_period(&self) -> Option<f64> {
        let (first, last) = (self.completions.first()?, self.completions.last()?);
        (self.n_images >= 2).then(|| (last - first) / (self.n_images - 1) as f64)
    }

    /// Per-image CSV: `image_id,injected_s,completed_s,latency_s`.
    pub fn write_csv(&self, w: impl Write) -> csv::Result<()> {
        let mut out = csv::Writer::from_writer(w);
        if self.n_images == 0 {
            out.write_record(["image_id", "injected_s", "completed_s", "latency_s"])?;
        }
        for i in 0..self.n_images {
            out.serialize(ImageRow {
                image_id: i,
                injected_s: self.injections[i],
                completed_s: self.completions[i],
                latency_s: self.latencies[i],
            })?;
        }
        out.flush()?;
        Ok(())
    }

    /// `key`/`value` pairs the CLI writes next to the per-image CSV.
    pub fn summary_lines(&self) -> Vec<(String, String)> {
        let mut lines = vec![
            ("n_images".into(), self.n_images.to_string()),
            ("makespan_s".into(), format!("{:.9}", self.makespan)),
            (
                "throughput_per_s".into(),
                format!("{:.6}", self.throughput()),
            ),
        ];
        for (i, b) in self.stage_busy.iter().enumerate() {
            lines.push((format!("stage{i}_busy_s"), format!("{b:.9}")));
        }
        for (i, b) in self.link_bytes.iter().enumerate() {
            lines.push((format!("link{i}_bytes"), b.to_string()));
        }
        lines
    }
}
