use std::io::{Read, Write};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{CnnError, ModelGraph};

pub const WEIGHTS_MAGIC: &[u8; 4] = b"PCNW";
pub const WEIGHTS_VERSION: u32 = 1;

/// Parameters of one layer. Empty for pooling layers.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct LayerWeights {
    pub kernel: Vec<f32>,
    pub bias: Vec<f32>,
}

impl LayerWeights {
    pub fn new(kernel: Vec<f32>, bias: Vec<f32>) -> Self {
        Self { kernel, bias }
    }

    pub fn empty() -> Self {
        Self::default()
    }

    pub fn is_finite(&self) -> bool {
        self.kernel.iter().chain(&self.bias).all(|v| v.is_finite())
    }

    pub fn len(&self) -> usize {
        self.kernel.len() + self.bias.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// One parameter block per model layer, in layer order.
#[derive(Debug, Clone, PartialEq)]
pub struct Weights {
    blocks: Vec<LayerWeights>,
}

impl Weights {
    /// Checks every block against the layer that owns it.
    pub fn new(model: &ModelGraph, blocks: Vec<LayerWeights>) -> Result<Self, CnnError> {
        if blocks.len() != model.layers().len() {
            return Err(CnnError::WeightsFormat(format!(
                "{} weight blocks for {} layers",
                blocks.len(),
                model.layers().len()
            )));
        }
        for (layer, block) in model.layers().iter().zip(&blocks) {
            let (k, b) = layer.parameter_counts();
            if (block.kernel.len(), block.bias.len()) != (k, b) {
                return Err(CnnError::WeightShape {
                    layer: layer.name(),
                    expected: (k, b),
                    actual: (block.kernel.len(), block.bias.len()),
                });
            }
            if !block.is_finite() {
                return Err(CnnError::NonFiniteWeight {
                    layer: layer.name(),
                });
            }
        }
        Ok(Self { blocks })
    }

    /// Uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)) kernels and small biases
    /// from a ChaCha8 stream seeded with `seed`.
    pub fn seeded(model: &ModelGraph, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let blocks = model
            .layers()
            .iter()
            .map(|layer| {
                let (k, b) = layer.parameter_counts();
                if k == 0 {
                    return LayerWeights::empty();
                }
                let bound = 1.0 / (layer.fan_in() as f32).sqrt();
                let kernel = (0..k).map(|_| rng.gen_range(-bound..bound)).collect();
                let bias = (0..b).map(|_| rng.gen_range(-0.1f32..0.1)).collect();
                LayerWeights::new(kernel, bias)
            })
            .collect();
        Self { blocks }
    }

    pub fn blocks(&self) -> &[LayerWeights] {
        &self.blocks
    }

    pub fn block(&self, layer: usize) -> &LayerWeights {
        &self.blocks[layer]
    }

    /// Blocks for layers `start..end`.
    pub fn slice(&self, start: usize, end: usize) -> &[LayerWeights] {
        &self.blocks[start..end]
    }

    /// Writes the `PCNW` binary form: magic, version, layer count, then for
    /// each layer its kernel and bias counts followed by the kernel and bias
    /// values. All integers are u32 and all values f32, little-endian.
    pub fn write_to(&self, mut w: impl Write) -> Result<(), CnnError> {
        w.write_all(WEIGHTS_MAGIC)?;
        w.write_all(&WEIGHTS_VERSION.to_le_bytes())?;
        w.write_all(&(self.blocks.len() as u32).to_le_bytes())?;
        for block in &self.blocks {
            write_blocks(&mut w, block)?;
        }
        Ok(())
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        self.write_to(&mut out)
            .expect("writing to a Vec cannot fail");
        out
    }

    pub fn read_from(model: &ModelGraph, mut r: impl Read) -> Result<Self, CnnError> {
        let mut magic = [0u8; 4];
        r.read_exact(&mut magic)?;
        if &magic != WEIGHTS_MAGIC {
            return Err(CnnError::WeightsFormat(format!("bad magic {magic:?}")));
        }
        let version = read_u32(&mut r)?;
        if version != WEIGHTS_VERSION {
            return Err(CnnError::WeightsFormat(format!(
                "unsupported version {version}"
            )));
        }
        let count = read_u32(&mut r)? as usize;
        let mut blocks = Vec::with_capacity(count.min(1024));
        for _ in 0..count {
            blocks.push(read_blocks(&mut r)?);
        }
        Self::new(model, blocks)
    }
}

/// Encodes one layer block as `kernel_len, bias_len, kernel.., bias..`.
pub(crate) fn write_blocks(w: &mut impl Write, block: &LayerWeights) -> std::io::Result<()> {
    w.write_all(&(block.kernel.len() as u32).to_le_bytes())?;
    w.write_all(&(block.bias.len() as u32).to_le_bytes())?;
    for v in block.kernel.iter().chain(&block.bias) {
        w.write_all(&v.to_le_bytes())?;
    }
    Ok(())
}

pub(crate) fn read_blocks(r: &mut impl Read) -> Result<LayerWeights, CnnError> {
    let k = read_u32(r)? as usize;
    let b = read_u32(r)? as usize;
    Ok(LayerWeights::new(read_f32s(r, k)?, read_f32s(r, b)?))
}

fn read_u32(r: &mut impl Read) -> Result<u32, CnnError> {
    let mut buf = [0u8; 4];
    r.read_exact(&mut buf)?;
    Ok(u32::from_le_bytes(buf))
}

fn read_f32s(r: &mut impl Read, n: usize) -> Result<Vec<f32>, CnnError> {
    // read in bounded chunks so a corrupt count cannot force a huge allocation
    let mut out = Vec::new();
    let mut buf = [0u8; 4096];
    let mut remaining = n * 4;
    while remaining > 0 {
        let take = remaining.min(buf.len());
        r.read_exact(&mut buf[..take])?;
        out.extend(
            buf[..take]
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]])),
        );
        remaining -= take;
    }
    Ok(out)
}
