use std::ops::Range;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::layer::{forward, mac_count, output_shape};
use super::{CnnError, LayerSpec, LayerWeights, Tensor, TensorShape, Weights};

/// A sequential CNN whose layer shapes have been checked end to end.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelGraph {
    name: String,
    layers: Vec<LayerSpec>,
    /// `shapes[i]` enters layer `i`; `shapes[len]` is the model output.
    shapes: Vec<TensorShape>,
}

/// On-disk description of a model (TOML).
///
/// ```toml
/// name = "lenet"
/// input_shape = [1, 28, 28]
///
/// [[layers]]
/// kind = "convolution"   # or "max_pool", "fully_connected"
/// kernel_size = 5
/// in_channels = 1
/// out_channels = 6
/// stride = 1             # optional, default 1
/// padding = 0            # optional, default 0
/// activation = "relu"    # optional, "none" by default
/// label = "conv1"        # optional
/// ```
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelFile {
    pub name: String,
    pub input_shape: TensorShape,
    pub layers: Vec<LayerSpec>,
}

impl ModelGraph {
    pub fn new(
        name: impl Into<String>,
        input_shape: TensorShape,
        layers: Vec<LayerSpec>,
    ) -> Result<Self, CnnError> {
        if layers.is_empty() {
            return Err(CnnError::EmptyModel);
        }
        let mut shapes = Vec::with_capacity(layers.len() + 1);
        shapes.push(input_shape);
        for layer in &layers {
            let next = output_shape(layer, shapes.last().expect("non-empty"))?;
            shapes.push(next);
        }
        Ok(Self {
            name: name.into(),
            layers,
            shapes,
        })
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn layers(&self) -> &[LayerSpec] {
        &self.layers
    }

    pub fn len(&self) -> usize {
        self.layers.len()
    }

    pub fn is_empty(&self) -> bool {
        self.layers.is_empty()
    }

    pub fn input_shape(&self) -> &TensorShape {
        &self.shapes[0]
    }

    pub fn output_shape(&self) -> &TensorShape {
        self.shapes.last().expect("non-empty")
    }

    /// Shape entering layer `index` (`index == len` gives the model output).
    pub fn shape_before(&self, index: usize) -> &TensorShape {
        &self.shapes[index]
    }

    /// Output shape of layer `index`.
    pub fn shape_after(&self, index: usize) -> &TensorShape {
        &self.shapes[index + 1]
    }

    pub fn layer_macs(&self) -> Vec<u64> {
        self.layers
            .iter()
            .zip(&self.shapes)
            .map(|(l, s)| mac_count(l, s).expect("shape chain validated at construction"))
            .collect()
    }

    pub fn output_sizes(&self) -> Vec<u64> {
        self.shapes[1..]
            .iter()
            .map(TensorShape::element_count)
            .collect()
    }

    pub fn to_file(&self) -> ModelFile {
        ModelFile {
            name: self.name.clone(),
            input_shape: self.input_shape().clone(),
            layers: self.layers.clone(),
        }
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(&self.to_file()).expect("model file serializes")
    }

    pub fn from_toml(text: &str) -> Result<Self, CnnError> {
        let file: ModelFile =
            toml::from_str(text).map_err(|e| CnnError::ModelFile(e.to_string()))?;
        Self::new(file.name, file.input_shape, file.layers)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, CnnError> {
        Self::from_toml(&std::fs::read_to_string(path)?)
    }
}

/// Sum of per-layer MAC counts.
pub fn total_macs(model: &ModelGraph) -> u64 {
    model.layer_macs().iter().sum()
}

/// Runs `layers` in order on `input`, pairing each with its block.
pub fn run_layers(
    layers: &[LayerSpec],
    blocks: &[LayerWeights],
    input: &Tensor,
) -> Result<Tensor, CnnError> {
    if layers.len() != blocks.len() {
        return Err(CnnError::WeightsFormat(format!(
            "{} blocks for {} layers",
            blocks.len(),
            layers.len()
        )));
    }
    let mut x = input.clone();
    for (layer, block) in layers.iter().zip(blocks) {
        x = forward(layer, block, &x)?;
    }
    Ok(x)
}

/// Applies layers `range` of `model` to `input`.
pub fn forward_model(
    model: &ModelGraph,
    weights: &Weights,
    input: &Tensor,
    range: Range<usize>,
) -> Result<Tensor, CnnError> {
    if range.start > range.end || range.end > model.len() {
        return Err(CnnError::RangeOutOfBounds {
            start: range.start,
            end: range.end,
            layers: model.len(),
        });
    }
    let expected = model.shape_before(range.start);
    if input.shape() != expected {
        return Err(CnnError::ShapeMismatch {
            layer: format!("input to layer {}", range.start),
            expected: expected.to_string(),
            actual: input.shape().clone(),
        });
    }
    run_layers(
        &model.layers()[range.clone()],
        weights.slice(range.start, range.end),
        input,
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cnn::lenet::build_lenet;

    #[test]
    fn rejects_empty_and_broken_chains() {
        let input = TensorShape::chw(1, 8, 8).unwrap();
        assert!(matches!(
            ModelGraph::new("x", input.clone(), vec![]),
            Err(CnnError::EmptyModel)
        ));
        let broken = vec![LayerSpec::conv(3, 1, 4), LayerSpec::conv(3, 3, 4)];
        assert!(ModelGraph::new("x", input, broken).is_err());
    }

    #[test]
    fn single_layer_total() {
        let m = ModelGraph::new(
            "one",
            TensorShape::chw(1, 28, 28).unwrap(),
            vec![LayerSpec::conv(5, 1, 6)],
        )
        .unwrap();
        assert_eq!(total_macs(&m), 86400);
    }

    #[test]
    fn toml_round_trip() {
        let (model, _) = build_lenet();
        let text = model.to_toml();
        assert_eq!(ModelGraph::from_toml(&text).unwrap(), model);
    }

    #[test]
    fn range_checks() {
        let (model, _) = build_lenet();
        let w = Weights::seeded(&model, 1);
        let x = Tensor::filled(model.input_shape().clone(), 0.5);
        assert!(matches!(
            forward_model(&model, &w, &x, 0..8),
            Err(CnnError::RangeOutOfBounds { .. })
        ));
        assert!(matches!(
            forward_model(&model, &w, &x, 2..7),
            Err(CnnError::ShapeMismatch { .. })
        ));
        // empty range is the identity
        assert_eq!(forward_model(&model, &w, &x, 0..0).unwrap(), x);
    }

    #[test]
    fn full_lenet_gives_ten_logits() {
        let (model, _) = build_lenet();
        let w = Weights::seeded(&model, 11);
        let x = Tensor::filled(model.input_shape().clone(), 0.25);
        let y = forward_model(&model, &w, &x, 0..7).unwrap();
        assert_eq!(y.shape().dims(), &[10]);
        assert!(y.is_finite());
    }
}
