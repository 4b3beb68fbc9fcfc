//! The seven-layer LeNet used throughout the benchmarks, together with the
//! published per-layer MAC and output-size table it is checked against.

use super::{Activation, LayerSpec, ModelGraph, TensorShape};

/// One row of the published LeNet table.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ReferenceRow {
    /// Roman numeral used by the table (`"I"` .. `"VII"`).
    pub numeral: &'static str,
    /// Layer type exactly as printed.
    pub layer_type: &'static str,
    /// Short name used by the scenario table (`conv1`, `pool1`, ...).
    pub label: &'static str,
    pub macs: u64,
    pub output_size: u64,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ReferenceTable {
    pub rows: Vec<ReferenceRow>,
}

impl ReferenceTable {
    pub fn macs(&self) -> Vec<u64> {
        self.rows.iter().map(|r| r.macs).collect()
    }

    pub fn output_sizes(&self) -> Vec<u64> {
        self.rows.iter().map(|r| r.output_size).collect()
    }

    pub fn total_macs(&self) -> u64 {
        self.rows.iter().map(|r| r.macs).sum()
    }
}

const ROWS: [(&str, &str, &str, u64, u64); 7] = [
    ("I", "Convolution", "conv1", 86400, 3456),
    ("II", "Max Pooling", "pool1", 3460, 864),
    ("III", "Convolution", "conv2", 153600, 1024),
    ("IV", "Max Pooling", "pool2", 1020, 256),
    ("V", "Convolution", "conv3", 30720, 120),
    ("VI", "Fully Connected", "ip1", 10080, 84),
    ("VII", "Fully Connected", "ip2", 840, 10),
];

pub fn reference_table() -> ReferenceTable {
    ReferenceTable {
        rows: ROWS
            .iter()
            .map(
                |&(numeral, layer_type, label, macs, output_size)| ReferenceRow {
                    numeral,
                    layer_type,
                    label,
                    macs,
                    output_size,
                },
            )
            .collect(),
    }
}

/// LeNet on a 1x28x28 input.
///
/// `conv3` maps the 16x4x4 map to 120 features; it is built as a fully
/// connected 256->120 layer, which has the same MAC and output counts as a
/// 4x4 convolution over that map. ReLU follows every convolution and fully
/// connected layer except the final logits.
pub fn build_lenet() -> (ModelGraph, ReferenceTable) {
    let relu = Activation::Relu;
    let layers = vec![
        LayerSpec::conv(5, 1, 6)
            .with_activation(relu)
            .with_label("conv1"),
        LayerSpec::max_pool(2, 2).with_label("pool1"),
        LayerSpec::conv(5, 6, 16)
            .with_activation(relu)
            .with_label("conv2"),
        LayerSpec::max_pool(2, 2).with_label("pool2"),
        LayerSpec::fully_connected(256, 120)
            .with_activation(relu)
            .with_label("conv3"),
        LayerSpec::fully_connected(120, 84)
            .with_activation(relu)
            .with_label("ip1"),
        LayerSpec::fully_connected(84, 10).with_label("ip2"),
    ];
    let input = TensorShape::chw(1, 28, 28).expect("static shape");
    let model = ModelGraph::new("lenet", input, layers).expect("lenet shape chain is valid");
    (model, reference_table())
}
