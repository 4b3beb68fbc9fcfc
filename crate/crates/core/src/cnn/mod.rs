//! Sequential CNNs: shapes, layers, exact forward passes and MAC accounting.

mod layer;
pub mod lenet;
mod model;
mod tensor;
mod weights;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub use layer::{forward, mac_count, output_shape, Activation, LayerKind, LayerSpec};
pub use lenet::build_lenet;
pub use model::{forward_model, run_layers, total_macs, ModelFile, ModelGraph};
pub use tensor::{Tensor, TensorShape};
pub(crate) use weights::{read_blocks, write_blocks};
pub use weights::{LayerWeights, Weights, WEIGHTS_MAGIC, WEIGHTS_VERSION};

#[derive(Debug, thiserror::Error)]
pub enum CnnError {
    #[error("invalid shape: {0}")]
    InvalidShape(String),
    #[error("expected {expected} elements, got {actual}")]
    ElementCount { expected: u64, actual: u64 },
    #[error("shape mismatch at {layer}: expected {expected}, got {actual}")]
    ShapeMismatch {
        layer: String,
        expected: String,
        actual: TensorShape,
    },
    #[error("invalid layer {0}")]
    InvalidLayer(String),
    #[error("weights for {layer}: expected {expected:?} (kernel, bias) values, got {actual:?}")]
    WeightShape {
        layer: String,
        expected: (usize, usize),
        actual: (usize, usize),
    },
    #[error("non-finite weight in {layer}")]
    NonFiniteWeight { layer: String },
    #[error("model has no layers")]
    EmptyModel,
    #[error("layer range {start}..{end} outside a {layers}-layer model")]
    RangeOutOfBounds {
        start: usize,
        end: usize,
        layers: usize,
    },
    #[error("model file: {0}")]
    ModelFile(String),
    #[error("weights file: {0}")]
    WeightsFormat(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// `count` inputs of `shape` with values uniform in `[0, 1)`.
pub fn synthetic_images(shape: &TensorShape, count: usize, seed: u64) -> Vec<Tensor> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = shape.element_count() as usize;
    (0..count)
        .map(|_| {
            let values = (0..n).map(|_| rng.gen::<f32>()).collect();
            Tensor::new(shape.clone(), values).expect("length matches shape")
        })
        .collect()
}
