use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use super::{ModelConfig, ModelError};
use crate::numerics::Scalar;

const WEIGHTS_MAGIC: &[u8; 8] = b"CHSWGT01";

#[derive(Debug, Clone, PartialEq)]
pub struct LayerWeights<S> {
    pub attn_norm: Vec<S>,
    /// `d_model × d_model`, row-major, output rows.
    pub wq: Vec<S>,
    pub wk: Vec<S>,
    pub wv: Vec<S>,
    pub wo: Vec<S>,
    pub ffn_norm: Vec<S>,
    /// `d_ff × d_model`
    pub w_up: Vec<S>,
    pub b_up: Vec<S>,
    /// `d_model × d_ff`
    pub w_down: Vec<S>,
    pub b_down: Vec<S>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Weights<S> {
    pub layers: Vec<LayerWeights<S>>,
    pub final_norm: Vec<S>,
    /// `vocab_size × d_model`
    pub unembed: Vec<S>,
}

impl Weights<f64> {
    /// Draws every weight from a ChaCha8 stream seeded with `config.seed`.
    ///
    /// Matrices and biases are standard normal scaled by `1/sqrt(d_model)`;
    /// normalization gains start at one. The draw order is fixed, so the
    /// result is a pure function of the seed and the shape.
    pub fn generate(config: &ModelConfig) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let scale = 1.0 / (config.d_model as f64).sqrt();
        let mut draw = |n: usize| -> Vec<f64> {
            (0..n)
                .map(|_| {
                    let z: f64 = StandardNormal.sample(&mut rng);
                    z * scale
                })
                .collect()
        };
        let (d, ff) = (config.d_model, config.d_ff);
        let layers = (0..config.n_layers)
            .map(|_| LayerWeights {
                attn_norm: vec![1.0; d],
                wq: draw(d * d),
                wk: draw(d * d),
                wv: draw(d * d),
                wo: draw(d * d),
                ffn_norm: vec![1.0; d],
                w_up: draw(ff * d),
                b_up: draw(ff),
                w_down: draw(d * ff),
                b_down: draw(d),
            })
            .collect();
        let unembed = draw(config.vocab_size * d);
        Weights {
            layers,
            final_norm: vec![1.0; d],
            unembed,
        }
    }

    /// Rounds every weight into `S`.
    pub fn cast<S: Scalar>(&self) -> Weights<S> {
        let c = |v: &Vec<f64>| v.iter().map(|&x| S::round_from(x)).collect::<Vec<S>>();
        Weights {
            layers: self
                .layers
                .iter()
                .map(|l| LayerWeights {
                    attn_norm: c(&l.attn_norm),
                    wq: c(&l.wq),
                    wk: c(&l.wk),
                    wv: c(&l.wv),
                    wo: c(&l.wo),
                    ffn_norm: c(&l.ffn_norm),
                    w_up: c(&l.w_up),
                    b_up: c(&l.b_up),
                    w_down: c(&l.w_down),
                    b_down: c(&l.b_down),
                })
                .collect(),
            final_norm: c(&self.final_norm),
            unembed: c(&self.unembed),
        }
    }

    /// All weights in canonical order: per layer, then final norm, then unembedding.
    pub fn flatten(&self) -> Vec<f64> {
        let mut out = Vec::new();
        for l in &self.layers {
            for part in [
                &l.attn_norm,
                &l.wq,
                &l.wk,
                &l.wv,
                &l.wo,
                &l.ffn_norm,
                &l.w_up,
                &l.b_up,
                &l.w_down,
                &l.b_down,
            ] {
                out.extend_from_slice(part);
            }
        }
        out.extend_from_slice(&self.final_norm);
        out.extend_from_slice(&self.unembed);
        out
    }
}

/// Shape header of an exported weight file.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct WeightsHeader {
    pub d_model: u32,
    pub n_layers: u32,
    pub n_heads: u32,
    pub d_ff: u32,
    pub vocab_size: u32,
    pub seq_len: u32,
    pub seed: u64,
    pub count: u64,
}

impl WeightsHeader {
    pub fn for_config(config: &ModelConfig, count: usize) -> Self {
        Self {
            d_model: config.d_model as u32,
            n_layers: config.n_layers as u32,
            n_heads: config.n_heads as u32,
            d_ff: config.d_ff as u32,
            vocab_size: config.vocab_size as u32,
            seq_len: config.seq_len as u32,
            seed: config.seed,
            count: count as u64,
        }
    }
}

/// Writes the master (`f64`) weights as a little-endian array behind a shape header.
pub fn write_weights(
    path: &Path,
    config: &ModelConfig,
    weights: &Weights<f64>,
) -> Result<(), ModelError> {
    let flat = weights.flatten();
    let header = WeightsHeader::for_config(config, flat.len());
    let mut w = BufWriter::new(File::create(path)?);
    w.write_all(WEIGHTS_MAGIC)?;
    for v in [
        header.d_model,
        header.n_layers,
        header.n_heads,
        header.d_ff,
        header.vocab_size,
        header.seq_len,
    ] {
        w.write_all(&v.to_le_bytes())?;
    }
    w.write_all(&header.seed.to_le_bytes())?;
    w.write_all(&header.count.to_le_bytes())?;
    for v in flat {
        w.write_all(&v.to_le_bytes())?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_weights(path: &Path) -> Result<(WeightsHeader, Vec<f64>), ModelError> {
    let mut r = BufReader::new(File::open(path)?);
    let mut magic = [0u8; 8];
    r.read_exact(&mut magic)?;
    if &magic != WEIGHTS_MAGIC {
        return Err(ModelError::InvalidConfig(format!(
            "{} is not a weights file",
            path.display()
        )));
    }
    let mut u32s = [0u32; 6];
    for v in &mut u32s {
        let mut b = [0u8; 4];
        r.read_exact(&mut b)?;
        *v = u32::from_le_bytes(b);
    }
    let mut b8 = [0u8; 8];
    r.read_exact(&mut b8)?;
    let seed = u64::from_le_bytes(b8);
    r.read_exact(&mut b8)?;
    let count = u64::from_le_bytes(b8);
    let mut values = Vec::with_capacity(count as usize);
    for _ in 0..count {
        r.read_exact(&mut b8)?;
        values.push(f64::from_le_bytes(b8));
    }
    let header = WeightsHeader {
        d_model: u32s[0],
        n_layers: u32s[1],
        n_heads: u32s[2],
        d_ff: u32s[3],
        vocab_size: u32s[4],
        seq_len: u32s[5],
        seed,
        count,
    };
    Ok((header, values))
}
