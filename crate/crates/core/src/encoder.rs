//! Pseudo-Siamese encoders: two MLPs of identical shape with separately
//! seeded, separately stored parameters.

use std::fs;
use std::io::{Read, Write};
use std::path::Path;

use ndarray::{concatenate, Array1, Array2, ArrayView2, Axis};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Value added to the first component of an all-zero embedding row so that
/// cosine similarity stays defined.
pub const ZERO_ROW_EPS: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Preprocessing {
    #[default]
    None,
    /// Scale every row to unit L2 norm (zero rows stay zero).
    RowL2,
    /// Zero-mean, unit-variance columns (constant columns become zero).
    Standardize,
}

impl std::str::FromStr for Preprocessing {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "none" => Ok(Self::None),
            "row-l2" => Ok(Self::RowL2),
            "standardize" => Ok(Self::Standardize),
            other => Err(Error::Parameter(format!("unknown preprocessing {other:?}"))),
        }
    }
}

pub fn preprocess(x: &Array2<f64>, mode: Preprocessing) -> Array2<f64> {
    let mut out = x.clone();
    match mode {
        Preprocessing::None => {}
        Preprocessing::RowL2 => {
            for mut row in out.rows_mut() {
                let norm = row.dot(&row).sqrt();
                if norm > 0.0 {
                    row /= norm;
                }
            }
        }
        Preprocessing::Standardize => {
            let n = out.nrows() as f64;
            for mut col in out.columns_mut() {
                let mean = col.sum() / n;
                let var = col.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
                let std = var.sqrt();
                col.mapv_inplace(|v| if std > 0.0 { (v - mean) / std } else { 0.0 });
            }
        }
    }
    out
}

/// Architecture shared by both views.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EncoderConfig {
    pub latent_dim: usize,
    /// Number of affine layers. Hidden layers are `latent_dim` wide.
    pub depth: usize,
    /// Apply tanh after the last layer too.
    pub output_activation: bool,
}

impl Default for EncoderConfig {
    fn default() -> Self {
        Self {
            latent_dim: 1000,
            depth: 1,
            output_activation: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Layer {
    /// `in × out`
    pub weight: Array2<f64>,
    pub bias: Array1<f64>,
}

impl Layer {
    fn init(fan_in: usize, fan_out: usize, rng: &mut ChaCha8Rng) -> Self {
        let bound = 1.0 / (fan_in as f64).sqrt();
        let weight =
            Array2::from_shape_simple_fn((fan_in, fan_out), || rng.gen_range(-bound..bound));
        let bias = Array1::from_shape_simple_fn(fan_out, || rng.gen_range(-bound..bound));
        Self { weight, bias }
    }
}

/// A stack of affine layers with tanh between them.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Mlp {
    pub layers: Vec<Layer>,
    pub output_activation: bool,
}

/// Activations kept for the backward pass: the input to each layer, plus the
/// final output.
#[derive(Debug, Clone)]
pub struct MlpCache {
    inputs: Vec<Array2<f64>>,
    output: Array2<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LayerGrad {
    pub weight: Array2<f64>,
    pub bias: Array1<f64>,
}

impl Mlp {
    fn activated(&self, layer: usize) -> bool {
        layer + 1 < self.layers.len() || self.output_activation
    }

    pub fn forward(&self, x: ArrayView2<f64>) -> Array2<f64> {
        let mut h = x.to_owned();
        for (l, layer) in self.layers.iter().enumerate() {
            h = h.dot(&layer.weight) + &layer.bias;
            if self.activated(l) {
                h.mapv_inplace(f64::tanh);
            }
        }
        h
    }

    fn forward_cached(&self, x: ArrayView2<f64>) -> MlpCache {
        let mut inputs = Vec::with_capacity(self.layers.len());
        let mut h = x.to_owned();
        for (l, layer) in self.layers.iter().enumerate() {
            let mut next = h.dot(&layer.weight) + &layer.bias;
            if self.activated(l) {
                next.mapv_inplace(f64::tanh);
            }
            inputs.push(h);
            h = next;
        }
        MlpCache { inputs, output: h }
    }

    fn backward(&self, cache: &MlpCache, grad_out: &Array2<f64>) -> Vec<LayerGrad> {
        let mut grads = Vec::with_capacity(self.layers.len());
        let mut g = grad_out.clone();
        for l in (0..self.layers.len()).rev() {
            if self.activated(l) {
                // tanh' = 1 - tanh², and the layer's tanh output is the next input
                let out = if l + 1 < self.layers.len() {
                    &cache.inputs[l + 1]
                } else {
                    &cache.output
                };
                g.zip_mut_with(out, |gi, &y| *gi *= 1.0 - y * y);
            }
            let input = &cache.inputs[l];
            grads.push(LayerGrad {
                weight: input.t().dot(&g),
                bias: g.sum_axis(Axis(0)),
            });
            if l > 0 {
                g = g.dot(&self.layers[l].weight.t());
            }
        }
        grads.reverse();
        grads
    }
}

/// Two encoders with disjoint parameter storage.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EncoderPair {
    pub view1: Mlp,
    pub view2: Mlp,
    pub input_dim: usize,
    pub latent_dim: usize,
    pub seed: u64,
}

/// The two view embeddings and their column-wise concatenation.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingPair {
    pub z1: Array2<f64>,
    pub z2: Array2<f64>,
    pub fused: Array2<f64>,
}

/// Forward state needed by [`EncoderPair::backward`].
#[derive(Debug, Clone)]
pub struct ForwardCache {
    view1: MlpCache,
    view2: MlpCache,
}

/// Gradients for both views, laid out like the parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct EncoderGrads {
    pub view1: Vec<LayerGrad>,
    pub view2: Vec<LayerGrad>,
}

impl EncoderGrads {
    /// Flat views in the same order as [`EncoderPair::param_slices_mut`].
    pub fn slices(&self) -> Vec<&[f64]> {
        self.view1
            .iter()
            .chain(&self.view2)
            .flat_map(|g| {
                [
                    g.weight.as_slice().expect("standard layout"),
                    g.bias.as_slice().expect("standard layout"),
                ]
            })
            .collect()
    }
}

/// Creates both encoders. View `l` draws from the ChaCha stream `l` of
/// `seed`, so the two parameter sets are independent and reproducible.
pub fn init_encoders(input_dim: usize, cfg: &EncoderConfig, seed: u64) -> Result<EncoderPair> {
    if input_dim == 0 || cfg.latent_dim == 0 {
        return Err(Error::Parameter(
            "encoder dimensions must be positive".into(),
        ));
    }
    if cfg.depth == 0 {
        return Err(Error::Parameter("encoder depth must be at least 1".into()));
    }
    let build = |stream: u64| {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(stream);
        let mut layers = Vec::with_capacity(cfg.depth);
        let mut fan_in = input_dim;
        for _ in 0..cfg.depth {
            layers.push(Layer::init(fan_in, cfg.latent_dim, &mut rng));
            fan_in = cfg.latent_dim;
        }
        Mlp {
            layers,
            output_activation: cfg.output_activation,
        }
    };
    Ok(EncoderPair {
        view1: build(1),
        view2: build(2),
        input_dim,
        latent_dim: cfg.latent_dim,
        seed,
    })
}

/// Column-wise concatenation `[z1, z2]`.
pub fn fuse(z1: &Array2<f64>, z2: &Array2<f64>) -> Result<Array2<f64>> {
    if z1.nrows() != z2.nrows() {
        return Err(Error::Shape(format!(
            "cannot fuse {} rows with {} rows",
            z1.nrows(),
            z2.nrows()
        )));
    }
    Ok(concatenate(Axis(1), &[z1.view(), z2.view()]).expect("row counts checked"))
}

fn guard_zero_rows(z: &mut Array2<f64>) {
    for mut row in z.rows_mut() {
        if row.iter().all(|&v| v == 0.0) {
            row[0] += ZERO_ROW_EPS;
        }
    }
}

impl EncoderPair {
    fn check_input(&self, x: &Array2<f64>) -> Result<()> {
        if x.ncols() != self.input_dim {
            return Err(Error::Shape(format!(
                "encoder expects {} input columns, got {}",
                self.input_dim,
                x.ncols()
            )));
        }
        Ok(())
    }

    /// Runs both views and keeps what the backward pass needs.
    pub fn forward(&self, x: &Array2<f64>) -> Result<(EmbeddingPair, ForwardCache)> {
        self.check_input(x)?;
        let view1 = self.view1.forward_cached(x.view());
        let view2 = self.view2.forward_cached(x.view());
        let mut z1 = view1.output.clone();
        let mut z2 = view2.output.clone();
        guard_zero_rows(&mut z1);
        guard_zero_rows(&mut z2);
        let fused = fuse(&z1, &z2)?;
        Ok((
            EmbeddingPair { z1, z2, fused },
            ForwardCache { view1, view2 },
        ))
    }

    /// Back-propagates gradients with respect to `z1` and `z2`.
    pub fn backward(
        &self,
        cache: &ForwardCache,
        grad_z1: &Array2<f64>,
        grad_z2: &Array2<f64>,
    ) -> EncoderGrads {
        EncoderGrads {
            view1: self.view1.backward(&cache.view1, grad_z1),
            view2: self.view2.backward(&cache.view2, grad_z2),
        }
    }

    pub fn n_params(&self) -> usize {
        self.view1
            .layers
            .iter()
            .chain(&self.view2.layers)
            .map(|l| l.weight.len() + l.bias.len())
            .sum()
    }

    /// Mutable flat views of every parameter tensor: view 1 layers, then
    /// view 2 layers, weight before bias.
    pub fn param_slices_mut(&mut self) -> Vec<&mut [f64]> {
        self.view1
            .layers
            .iter_mut()
            .chain(self.view2.layers.iter_mut())
            .flat_map(|l| {
                [
                    l.weight.as_slice_mut().expect("standard layout"),
                    l.bias.as_slice_mut().expect("standard layout"),
                ]
            })
            .collect()
    }

    pub fn to_flat(&self) -> Vec<f64> {
        let mut copy = self.clone();
        copy.param_slices_mut()
            .into_iter()
            .flat_map(|s| s.to_vec())
            .collect()
    }

    pub fn set_flat(&mut self, values: &[f64]) -> Result<()> {
        if values.len() != self.n_params() {
            return Err(Error::Shape(format!(
                "{} values for {} parameters",
                values.len(),
                self.n_params()
            )));
        }
        let mut offset = 0;
        for slice in self.param_slices_mut() {
            slice.copy_from_slice(&values[offset..offset + slice.len()]);
            offset += slice.len();
        }
        Ok(())
    }
}

/// Encodes `x` with both views. See [`EncoderPair::forward`] for the variant
/// that keeps gradient state.
pub fn encode(enc: &EncoderPair, x: &Array2<f64>) -> Result<EmbeddingPair> {
    enc.forward(x).map(|(z, _)| z)
}

const CHECKPOINT_MAGIC: &[u8; 8] = b"NCGCENC\0";
const CHECKPOINT_VERSION: u32 = 1;

/// Binary checkpoint, little-endian:
///
/// ```text
/// magic "NCGCENC\0" | version u32 | input_dim u64 | latent_dim u64 | seed u64
/// | output_activation u8 | depth u64
/// | for view in [1, 2], for layer: rows u64 | cols u64 | weights f64[rows*cols] | bias f64[cols]
/// ```
pub fn save_checkpoint(enc: &EncoderPair, path: impl AsRef<Path>) -> Result<()> {
    let mut buf = Vec::with_capacity(64 + 8 * enc.n_params());
    buf.extend_from_slice(CHECKPOINT_MAGIC);
    buf.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
    for v in [enc.input_dim as u64, enc.latent_dim as u64, enc.seed] {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    buf.push(u8::from(enc.view1.output_activation));
    buf.extend_from_slice(&(enc.view1.layers.len() as u64).to_le_bytes());
    for mlp in [&enc.view1, &enc.view2] {
        for layer in &mlp.layers {
            let (r, c) = layer.weight.dim();
            buf.extend_from_slice(&(r as u64).to_le_bytes());
            buf.extend_from_slice(&(c as u64).to_le_bytes());
            for v in layer.weight.iter().chain(layer.bias.iter()) {
                buf.extend_from_slice(&v.to_le_bytes());
            }
        }
    }
    fs::File::create(path)?.write_all(&buf)?;
    Ok(())
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<EncoderPair> {
    let mut bytes = Vec::new();
    fs::File::open(path)?.read_to_end(&mut bytes)?;
    let mut cur = Cursor {
        bytes: &bytes,
        pos: 0,
    };

    if cur.take(8)? != CHECKPOINT_MAGIC {
        return Err(Error::Checkpoint("not an encoder checkpoint".into()));
    }
    let version = u32::from_le_bytes(cur.take(4)?.try_into().unwrap());
    if version != CHECKPOINT_VERSION {
        return Err(Error::Checkpoint(format!("unsupported version {version}")));
    }
    let input_dim = cur.u64()? as usize;
    let latent_dim = cur.u64()? as usize;
    let seed = cur.u64()?;
    let output_activation = cur.take(1)?[0] != 0;
    let depth = cur.u64()? as usize;

    let mut read_mlp = || -> Result<Mlp> {
        let mut layers = Vec::with_capacity(depth);
        for _ in 0..depth {
            let r = cur.u64()? as usize;
            let c = cur.u64()? as usize;
            let weight = Array2::from_shape_vec((r, c), cur.f64s(r * c)?)
                .map_err(|e| Error::Checkpoint(e.to_string()))?;
            let bias = Array1::from(cur.f64s(c)?);
            layers.push(Layer { weight, bias });
        }
        Ok(Mlp {
            layers,
            output_activation,
        })
    };
    let view1 = read_mlp()?;
    let view2 = read_mlp()?;
    if cur.pos != bytes.len() {
        return Err(Error::Checkpoint("trailing bytes".into()));
    }
    Ok(EncoderPair {
        view1,
        view2,
        input_dim,
        latent_dim,
        seed,
    })
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos + n;
        if end > self.bytes.len() {
            return Err(Error::Checkpoint("truncated file".into()));
        }
        let out = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(out)
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn f64s(&mut self, n: usize) -> Result<Vec<f64>> {
        let raw = self.take(8 * n)?;
        Ok(raw
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect())
    }
}
