//! Hybrid fields: factored volume → Fourier encoding → MLP decoder.

use std::f64::consts::PI;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grids::{contract, DecompositionSpec, FactoredVolume, QueryWorkspace, TransformSet, VolumeGrads};

/// Sinusoidal encoding applied independently to every latent channel.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct FourierEncoding {
    pub levels: usize,
    pub include_identity: bool,
}

impl FourierEncoding {
    pub fn new(levels: usize, include_identity: bool) -> Self {
        Self { levels, include_identity }
    }

    pub fn per_channel(&self) -> usize {
        2 * self.levels + usize::from(self.include_identity)
    }

    pub fn output_dim(&self, input_dim: usize) -> usize {
        input_dim * self.per_channel()
    }

    /// Per channel `[z, w₀ sin(πz), w₀ cos(πz), w₁ sin(2πz), …]`.
    pub fn encode_into(&self, z: &[f64], weights: &[f64], out: &mut [f64]) {
        let stride = self.per_channel();
        let id = usize::from(self.include_identity);
        for (c, &zc) in z.iter().enumerate() {
            let o = &mut out[c * stride..(c + 1) * stride];
            if self.include_identity {
                o[0] = zc;
            }
            for (j, &w) in weights.iter().enumerate().take(self.levels) {
                if w == 0.0 {
                    o[id + 2 * j] = 0.0;
                    o[id + 2 * j + 1] = 0.0;
                } else {
                    let (s, co) = (f64::from(1u32 << j) * PI * zc).sin_cos();
                    o[id + 2 * j] = w * s;
                    o[id + 2 * j + 1] = w * co;
                }
            }
        }
    }

    pub fn encode(&self, z: &[f64], weights: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.output_dim(z.len())];
        self.encode_into(z, weights, &mut out);
        out
    }

    /// Writes `∂L/∂z` given `∂L/∂encoded`. Bands with zero weight are skipped.
    pub fn backward(&self, z: &[f64], weights: &[f64], d_out: &[f64], d_z: &mut [f64]) {
        let stride = self.per_channel();
        let id = usize::from(self.include_identity);
        for (c, &zc) in z.iter().enumerate() {
            let g = &d_out[c * stride..(c + 1) * stride];
            let mut acc = if self.include_identity { g[0] } else { 0.0 };
            for (j, &w) in weights.iter().enumerate().take(self.levels) {
                if w == 0.0 {
                    continue;
                }
                let f = f64::from(1u32 << j) * PI;
                let (s, co) = (f * zc).sin_cos();
                acc += w * f * (co * g[id + 2 * j] - s * g[id + 2 * j + 1]);
            }
            d_z[c] = acc;
        }
    }
}

/// `w_j(η) = (1 − cos(π·clamp(η − j, 0, 1)))/2` for `j < levels`.
pub fn lowpass_weights(eta: f64, levels: usize) -> Vec<f64> {
    (0..levels)
        .map(|j| (1.0 - (PI * (eta - j as f64).clamp(0.0, 1.0)).cos()) * 0.5)
        .collect()
}

/// Linear ramp of `η` from `start` to `levels` over `total_steps` steps.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LowPassSchedule {
    pub total_steps: usize,
    pub start: f64,
    pub levels: usize,
}

impl LowPassSchedule {
    /// A schedule that is fully open from the first step.
    pub fn open(levels: usize) -> Self {
        Self { total_steps: 0, start: levels as f64, levels }
    }

    pub fn eta(&self, step: usize) -> f64 {
        let end = self.levels as f64;
        if self.total_steps == 0 || step >= self.total_steps {
            return end.max(self.start);
        }
        self.start + (end - self.start) * step as f64 / self.total_steps as f64
    }

    pub fn weights(&self, step: usize) -> Vec<f64> {
        lowpass_weights(self.eta(step), self.levels)
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OutputActivation {
    #[default]
    Identity,
    Sigmoid,
}

/// Fully connected network with ReLU hidden layers. Parameters are one flat
/// vector, per layer `W` (`out × in`, row-major) followed by `b`.
#[derive(Clone, Debug, PartialEq)]
pub struct Mlp {
    pub sizes: Vec<usize>,
    pub params: Vec<f64>,
    pub output: OutputActivation,
}

/// Activations of the last forward pass, one buffer per layer boundary.
#[derive(Clone, Debug, Default)]
pub struct MlpCache {
    acts: Vec<Vec<f64>>,
    delta: Vec<f64>,
    delta_prev: Vec<f64>,
}

/// Row-major activations of a batch, one buffer per layer boundary.
#[derive(Clone, Debug, Default)]
pub struct MlpBatchCache {
    rows: usize,
    acts: Vec<Vec<f64>>,
    delta: Vec<f64>,
    delta_prev: Vec<f64>,
}

impl MlpBatchCache {
    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn input_mut(&mut self) -> &mut [f64] {
        &mut self.acts[0]
    }
}

/// `C ← A·B + β·C` with `A` (`m × k`) and `B` (`k × n`) given by row and
/// column strides and `C` row-major with row stride `rsc`.
#[allow(clippy::too_many_arguments)]
fn gemm(m: usize, k: usize, n: usize, a: &[f64], sa: (usize, usize), b: &[f64], sb: (usize, usize), beta: f64, c: &mut [f64], rsc: usize) {
    if m == 0 || n == 0 {
        return;
    }
    let last = |rs: usize, cs: usize, r: usize, cc: usize| (r - 1) * rs + (cc - 1) * cs;
    assert!(k == 0 || (last(sa.0, sa.1, m, k) < a.len() && last(sb.0, sb.1, k, n) < b.len()), "gemm operand out of bounds");
    assert!(last(rsc, 1, m, n) < c.len(), "gemm output out of bounds");
    // SAFETY: the assertions bound every element the kernel reads or writes.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            sa.0 as isize,
            sa.1 as isize,
            b.as_ptr(),
            sb.0 as isize,
            sb.1 as isize,
            beta,
            c.as_mut_ptr(),
            rsc as isize,
            1,
        );
    }
}

/// Dot product with four independent partial sums.
fn dot(a: &[f64], b: &[f64]) -> f64 {
    let mut acc = [0.0; 4];
    let (ca, cb) = (a.chunks_exact(4), b.chunks_exact(4));
    let tail: f64 = ca.remainder().iter().zip(cb.remainder()).map(|(x, y)| x * y).sum();
    for (x, y) in ca.zip(cb) {
        for k in 0..4 {
            acc[k] += x[k] * y[k];
        }
    }
    (acc[0] + acc[1]) + (acc[2] + acc[3]) + tail
}

impl Mlp {
    pub fn param_count(sizes: &[usize]) -> usize {
        sizes.windows(2).map(|w| w[0] * w[1] + w[1]).sum()
    }

    /// Uniform `±√(6/fan_in)` weights on ReLU layers, `±√(1/fan_in)` on the
    /// output layer, zero biases.
    pub fn new<R: Rng>(sizes: Vec<usize>, output: OutputActivation, rng: &mut R) -> Result<Self> {
        if sizes.len() < 2 || sizes.contains(&0) {
            return Err(Error::InvalidArgument(format!("bad layer sizes {sizes:?}")));
        }
        let layers = sizes.len() - 1;
        let mut params = Vec::with_capacity(Self::param_count(&sizes));
        for (l, w) in sizes.windows(2).enumerate() {
            let gain = if l + 1 == layers { 1.0 } else { 6.0 };
            let bound = (gain / w[0] as f64).sqrt();
            params.extend((0..w[0] * w[1]).map(|_| rng.gen_range(-bound..bound)));
            params.extend(std::iter::repeat(0.0).take(w[1]));
        }
        Ok(Self { sizes, params, output })
    }

    pub fn from_parts(sizes: Vec<usize>, params: Vec<f64>, output: OutputActivation) -> Result<Self> {
        if sizes.len() < 2 || params.len() != Self::param_count(&sizes) {
            return Err(Error::Shape(format!(
                "decoder sizes {sizes:?} need {} parameters, got {}",
                Self::param_count(&sizes),
                params.len()
            )));
        }
        Ok(Self { sizes, params, output })
    }

    pub fn input_dim(&self) -> usize {
        self.sizes[0]
    }

    pub fn output_dim(&self) -> usize {
        *self.sizes.last().unwrap()
    }

    pub fn cache(&self) -> MlpCache {
        let widest = *self.sizes.iter().max().unwrap();
        MlpCache {
            acts: self.sizes.iter().map(|&s| vec![0.0; s]).collect(),
            delta: vec![0.0; widest],
            delta_prev: vec![0.0; widest],
        }
    }

    pub fn batch_cache(&self, rows: usize) -> MlpBatchCache {
        let widest = *self.sizes.iter().max().unwrap();
        MlpBatchCache {
            rows,
            acts: self.sizes.iter().map(|&s| vec![0.0; rows * s]).collect(),
            delta: vec![0.0; rows * widest],
            delta_prev: vec![0.0; rows * widest],
        }
    }

    fn activate(&self, s: f64, hidden: bool) -> f64 {
        if hidden {
            s.max(0.0)
        } else {
            match self.output {
                OutputActivation::Identity => s,
                OutputActivation::Sigmoid => 1.0 / (1.0 + (-s).exp()),
            }
        }
    }

    /// Forward pass of the row-major inputs written to [`MlpBatchCache::input_mut`].
    pub fn forward_batch<'a>(&self, cache: &'a mut MlpBatchCache) -> &'a [f64] {
        let rows = cache.rows;
        let layers = self.sizes.len() - 1;
        let mut offset = 0;
        for l in 0..layers {
            let (nin, nout) = (self.sizes[l], self.sizes[l + 1]);
            let w = &self.params[offset..offset + nin * nout];
            let b = &self.params[offset + nin * nout..offset + nin * nout + nout];
            offset += nin * nout + nout;
            let (head, tail) = cache.acts.split_at_mut(l + 1);
            let out = &mut tail[0];
            gemm(rows, nin, nout, &head[l], (nin, 1), w, (1, nin), 0.0, out, nout);
            let hidden = l + 1 < layers;
            for row in out.chunks_exact_mut(nout) {
                for (v, bo) in row.iter_mut().zip(b) {
                    *v = self.activate(*v + bo, hidden);
                }
            }
        }
        &cache.acts[layers]
    }

    /// Accumulates parameter gradients for the last
    /// [`Mlp::forward_batch`] given row-major `∂L/∂y`, and writes the
    /// row-major `∂L/∂x` to `d_in`.
    pub fn backward_batch(&self, cache: &mut MlpBatchCache, d_out: &[f64], grad: &mut [f64], d_in: &mut [f64]) {
        let rows = cache.rows;
        let layers = self.sizes.len() - 1;
        let nlast = self.output_dim();
        for (k, (&g, &y)) in d_out.iter().zip(&cache.acts[layers]).enumerate().take(rows * nlast) {
            cache.delta[k] = match self.output {
                OutputActivation::Identity => g,
                OutputActivation::Sigmoid => g * y * (1.0 - y),
            };
        }
        let mut offset = self.params.len();
        for l in (0..layers).rev() {
            let (nin, nout) = (self.sizes[l], self.sizes[l + 1]);
            offset -= nin * nout + nout;
            let w = &self.params[offset..offset + nin * nout];
            let (gw, gb) = grad[offset..offset + nin * nout + nout].split_at_mut(nin * nout);
            let input = &cache.acts[l];
            let delta = &cache.delta[..rows * nout];
            gemm(nout, rows, nin, delta, (1, nout), input, (nin, 1), 1.0, gw, nin);
            for row in delta.chunks_exact(nout) {
                for (g, d) in gb.iter_mut().zip(row) {
                    *g += d;
                }
            }
            let prev = &mut cache.delta_prev[..rows * nin];
            gemm(rows, nout, nin, delta, (nout, 1), w, (nin, 1), 0.0, prev, nin);
            if l > 0 {
                for ((d, &p), &x) in cache.delta.iter_mut().zip(prev.iter()).zip(input) {
                    *d = if x > 0.0 { p } else { 0.0 };
                }
            } else {
                d_in[..rows * nin].copy_from_slice(prev);
            }
        }
    }

    pub fn forward(&self, x: &[f64]) -> Vec<f64> {
        let mut cache = self.cache();
        self.forward_cached(x, &mut cache).to_vec()
    }

    pub fn forward_cached<'a>(&self, x: &[f64], cache: &'a mut MlpCache) -> &'a [f64] {
        cache.acts[0].copy_from_slice(x);
        let layers = self.sizes.len() - 1;
        let mut offset = 0;
        for l in 0..layers {
            let (nin, nout) = (self.sizes[l], self.sizes[l + 1]);
            let w = &self.params[offset..offset + nin * nout];
            let b = &self.params[offset + nin * nout..offset + nin * nout + nout];
            offset += nin * nout + nout;
            let (head, tail) = cache.acts.split_at_mut(l + 1);
            let input = &head[l];
            let out = &mut tail[0];
            for o in 0..nout {
                let s = b[o] + dot(&w[o * nin..(o + 1) * nin], input);
                out[o] = if l + 1 < layers {
                    s.max(0.0)
                } else {
                    match self.output {
                        OutputActivation::Identity => s,
                        OutputActivation::Sigmoid => 1.0 / (1.0 + (-s).exp()),
                    }
                };
            }
        }
        &cache.acts[layers]
    }

    /// Accumulates parameter gradients and writes `∂L/∂x` for the last
    /// [`Mlp::forward_cached`] call.
    pub fn backward(&self, cache: &mut MlpCache, d_out: &[f64], grad: &mut [f64], d_in: &mut [f64]) {
        let layers = self.sizes.len() - 1;
        let nlast = self.output_dim();
        for (k, &g) in d_out.iter().enumerate().take(nlast) {
            let y = cache.acts[layers][k];
            cache.delta[k] = match self.output {
                OutputActivation::Identity => g,
                OutputActivation::Sigmoid => g * y * (1.0 - y),
            };
        }
        let mut offset = self.params.len();
        for l in (0..layers).rev() {
            let (nin, nout) = (self.sizes[l], self.sizes[l + 1]);
            offset -= nin * nout + nout;
            let w = &self.params[offset..offset + nin * nout];
            let (gw, gb) = grad[offset..offset + nin * nout + nout].split_at_mut(nin * nout);
            let input = &cache.acts[l];
            for i in 0..nin {
                cache.delta_prev[i] = 0.0;
            }
            for o in 0..nout {
                let d = cache.delta[o];
                if d == 0.0 {
                    continue;
                }
                gb[o] += d;
                let row = &w[o * nin..(o + 1) * nin];
                let grow = &mut gw[o * nin..(o + 1) * nin];
                for i in 0..nin {
                    grow[i] += d * input[i];
                    cache.delta_prev[i] += d * row[i];
                }
            }
            if l > 0 {
                for i in 0..nin {
                    cache.delta[i] = if input[i] > 0.0 { cache.delta_prev[i] } else { 0.0 };
                }
            } else {
                d_in[..nin].copy_from_slice(&cache.delta_prev[..nin]);
            }
        }
    }
}

/// Architecture of a hybrid field.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FieldConfig {
    pub decomposition: DecompositionSpec,
    #[serde(default = "default_fourier_levels")]
    pub fourier_levels: usize,
    #[serde(default = "default_true")]
    pub include_identity: bool,
    /// Hidden layer widths; the decoder has `hidden.len() + 1` linear layers.
    pub hidden: Vec<usize>,
    pub output_dim: usize,
    #[serde(default)]
    pub activation: OutputActivation,
    #[serde(default)]
    pub contract: bool,
}

fn default_fourier_levels() -> usize {
    6
}

fn default_true() -> bool {
    true
}

impl FieldConfig {
    pub fn new(decomposition: DecompositionSpec, hidden: Vec<usize>, output_dim: usize, activation: OutputActivation) -> Self {
        Self {
            decomposition,
            fourier_levels: default_fourier_levels(),
            include_identity: true,
            hidden,
            output_dim,
            activation,
            contract: false,
        }
    }

    pub fn with_fourier_levels(mut self, levels: usize) -> Self {
        self.fourier_levels = levels;
        self
    }

    pub fn encoding(&self) -> FourierEncoding {
        FourierEncoding::new(self.fourier_levels, self.include_identity)
    }

    pub fn decoder_sizes(&self) -> Vec<usize> {
        let mut sizes = vec![self.encoding().output_dim(self.decomposition.output_dim())];
        sizes.extend(&self.hidden);
        sizes.push(self.output_dim);
        sizes
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct HybridField {
    pub volume: FactoredVolume,
    pub encoding: FourierEncoding,
    pub decoder: Mlp,
    pub contract: bool,
}

#[derive(Clone, Debug, PartialEq)]
pub struct FieldGrads {
    pub volume: VolumeGrads,
    pub decoder: Vec<f64>,
}

impl FieldGrads {
    pub fn zeros_like(field: &HybridField) -> Self {
        Self {
            volume: VolumeGrads::zeros_like(&field.volume),
            decoder: vec![0.0; field.decoder.params.len()],
        }
    }

    pub fn clear(&mut self) {
        self.volume.clear();
        self.decoder.iter_mut().for_each(|v| *v = 0.0);
    }
}

/// Scratch buffers for one sample's forward and backward pass.
#[derive(Clone, Debug)]
pub struct FieldWorkspace {
    volume: QueryWorkspace,
    point: Vec<f64>,
    latent: Vec<f64>,
    encoded: Vec<f64>,
    d_encoded: Vec<f64>,
    d_latent: Vec<f64>,
    mlp: MlpCache,
    batch: MlpBatchCache,
    row_volumes: Vec<QueryWorkspace>,
    row_latents: Vec<f64>,
    d_rows: Vec<f64>,
    d_encoded_rows: Vec<f64>,
}

impl HybridField {
    pub fn new<R: Rng>(config: &FieldConfig, transforms: TransformSet, rng: &mut R) -> Result<Self> {
        let volume = FactoredVolume::new(config.decomposition.clone(), transforms, rng)?;
        let decoder = Mlp::new(config.decoder_sizes(), config.activation, rng)?;
        Self::from_parts(volume, config.encoding(), decoder, config.contract)
    }

    pub fn from_parts(volume: FactoredVolume, encoding: FourierEncoding, decoder: Mlp, contract: bool) -> Result<Self> {
        if encoding.output_dim(volume.output_dim()) != decoder.input_dim() {
            return Err(Error::Shape(format!(
                "decoder input {} does not match encoded latent {}",
                decoder.input_dim(),
                encoding.output_dim(volume.output_dim())
            )));
        }
        Ok(Self { volume, encoding, decoder, contract })
    }

    pub fn point_dim(&self) -> usize {
        self.volume.spec.point_dim()
    }

    pub fn output_dim(&self) -> usize {
        self.decoder.output_dim()
    }

    pub fn check_finite(&self) -> Result<()> {
        self.volume.check_finite()?;
        if self.decoder.params.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFiniteParameter("decoder".into()));
        }
        Ok(())
    }

    pub fn workspace(&self) -> FieldWorkspace {
        let d = self.volume.output_dim();
        let e = self.encoding.output_dim(d);
        FieldWorkspace {
            volume: self.volume.workspace(),
            point: vec![0.0; self.point_dim()],
            latent: vec![0.0; d],
            encoded: vec![0.0; e],
            d_encoded: vec![0.0; e],
            d_latent: vec![0.0; d],
            mlp: self.decoder.cache(),
            batch: MlpBatchCache::default(),
            row_volumes: Vec::new(),
            row_latents: Vec::new(),
            d_rows: Vec::new(),
            d_encoded_rows: Vec::new(),
        }
    }

    fn set_point(&self, p: &[f64], out: &mut [f64]) {
        if self.contract && p.len() == 3 {
            out.copy_from_slice(&contract([p[0], p[1], p[2]]));
        } else {
            out.copy_from_slice(p);
        }
    }

    /// Output at `p` with the given low-pass band weights.
    pub fn forward_ws<'a>(&self, p: &[f64], weights: &[f64], ws: &'a mut FieldWorkspace) -> &'a [f64] {
        self.set_point(p, &mut ws.point);
        self.volume.query_into(&ws.point, &mut ws.volume, &mut ws.latent);
        self.encoding.encode_into(&ws.latent, weights, &mut ws.encoded);
        self.decoder.forward_cached(&ws.encoded, &mut ws.mlp)
    }

    pub fn forward(&self, p: &[f64], weights: &[f64]) -> Result<Vec<f64>> {
        self.check_finite()?;
        let mut ws = self.workspace();
        Ok(self.forward_ws(p, weights, &mut ws).to_vec())
    }

    /// Backward pass of the last [`HybridField::forward_ws`] call.
    pub fn backward_ws(&self, weights: &[f64], d_out: &[f64], ws: &mut FieldWorkspace, grads: &mut FieldGrads) {
        self.decoder.backward(&mut ws.mlp, d_out, &mut grads.decoder, &mut ws.d_encoded);
        self.encoding.backward(&ws.latent, weights, &ws.d_encoded, &mut ws.d_latent);
        self.volume.backward(&ws.point, &mut ws.volume, &ws.d_latent, &mut grads.volume, None);
    }

    fn encode_batch(&self, points: &[Vec<f64>], weights: &[f64], ws: &mut FieldWorkspace) {
        let (m, rows) = (self.output_dim(), points.len());
        let (d, e) = (self.volume.output_dim(), self.decoder.input_dim());
        if ws.batch.rows() != rows || ws.batch.acts.len() != self.decoder.sizes.len() {
            ws.batch = self.decoder.batch_cache(rows);
            ws.row_volumes = vec![self.volume.workspace(); rows];
            ws.row_latents = vec![0.0; rows * d];
            ws.d_rows = vec![0.0; rows * m];
            ws.d_encoded_rows = vec![0.0; rows * e];
        }
        let matrices = self.volume.transforms.matrices();
        ws.volume.sync_transforms(&matrices);
        for (r, p) in points.iter().enumerate() {
            let vol_ws = &mut ws.row_volumes[r];
            vol_ws.sync_transforms(&matrices);
            self.set_point(p, &mut ws.point);
            let z = &mut ws.row_latents[r * d..(r + 1) * d];
            self.volume.query_into(&ws.point, vol_ws, z);
            self.encoding.encode_into(z, weights, &mut ws.batch.input_mut()[r * e..(r + 1) * e]);
        }
    }

    /// Outputs for a batch of points, `rows × output_dim` row-major. Agrees
    /// bitwise with the forward pass inside [`HybridField::loss_and_grad`].
    pub fn forward_batch(&self, points: &[Vec<f64>], weights: &[f64]) -> Result<Vec<f64>> {
        self.check_finite()?;
        if points.is_empty() {
            return Ok(Vec::new());
        }
        let mut ws = self.workspace();
        self.encode_batch(points, weights, &mut ws);
        Ok(self.decoder.forward_batch(&mut ws.batch).to_vec())
    }

    /// Squared-error loss `mean over samples and outputs of (f(p) − t)²`,
    /// accumulating its gradient into `grads` (not cleared here).
    pub fn loss_and_grad(
        &self,
        points: &[Vec<f64>],
        targets: &[Vec<f64>],
        weights: &[f64],
        ws: &mut FieldWorkspace,
        grads: &mut FieldGrads,
    ) -> Result<f64> {
        if points.is_empty() || points.len() != targets.len() {
            return Err(Error::Shape(format!(
                "batch needs equal non-zero point/target counts, got {} and {}",
                points.len(),
                targets.len()
            )));
        }
        let m = self.output_dim();
        let rows = points.len();
        let scale = 1.0 / (rows * m) as f64;
        self.encode_batch(points, weights, ws);
        let (d, e) = (self.volume.output_dim(), self.decoder.input_dim());
        let y = self.decoder.forward_batch(&mut ws.batch);
        let mut loss = 0.0;
        for ((yr, t), d) in y.chunks_exact(m).zip(targets).zip(ws.d_rows.chunks_exact_mut(m)) {
            for k in 0..m {
                let r = yr[k] - t[k];
                loss += r * r;
                d[k] = 2.0 * r * scale;
            }
        }
        self.decoder.backward_batch(&mut ws.batch, &ws.d_rows, &mut grads.decoder, &mut ws.d_encoded_rows);
        for (r, p) in points.iter().enumerate() {
            self.set_point(p, &mut ws.point);
            let z = &ws.row_latents[r * d..(r + 1) * d];
            self.encoding.backward(z, weights, &ws.d_encoded_rows[r * e..(r + 1) * e], &mut ws.d_latent);
            self.volume.backward(&ws.point, &mut ws.row_volumes[r], &ws.d_latent, &mut grads.volume, None);
        }
        Ok(loss * scale)
    }

    /// Loss only, for the same batch layout as [`HybridField::loss_and_grad`].
    pub fn loss(&self, points: &[Vec<f64>], targets: &[Vec<f64>], weights: &[f64]) -> f64 {
        let mut ws = self.workspace();
        let m = self.output_dim();
        let mut loss = 0.0;
        for (p, t) in points.iter().zip(targets) {
            let y = self.forward_ws(p, weights, &mut ws);
            loss += y.iter().zip(t).map(|(a, b)| (a - b) * (a - b)).sum::<f64>();
        }
        loss / (points.len() * m) as f64
    }
}
