//! A small convolutional binary classifier.
//!
//! Each stage is a valid-padding convolution followed by ReLU and an optional
//! 2x2 max-pool. The flattened output feeds a ReLU hidden layer and a single
//! logit; the sigmoid of the logit is the tile probability. Everything runs in
//! `f64`.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::dataset::{Label, TileDataset};
use crate::exec::Executor;
use crate::{Error, Result};

/// Current model file format version.
pub const FORMAT_VERSION: u32 = 1;

/// Examples folded together before the fixed-order batch reduction.
const GRAD_CHUNK: usize = 4;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Pool {
    None,
    Max2,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct ConvStage {
    pub filters: usize,
    pub kernel: usize,
    pub pool: Pool,
}

impl ConvStage {
    pub const fn new(filters: usize, kernel: usize, pool: Pool) -> Self {
        Self {
            filters,
            kernel,
            pool,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CnnConfig {
    pub input_size: usize,
    pub input_channels: usize,
    pub conv_layers: Vec<ConvStage>,
    pub dense_units: usize,
    pub seed: u64,
    pub learning_rate: f64,
    pub momentum: f64,
    pub epochs: usize,
    pub batch_size: usize,
}

impl Default for CnnConfig {
    /// Two 3x3 stages of 8 and 16 filters with max-pooling, 32 hidden units.
    fn default() -> Self {
        Self {
            input_size: 100,
            input_channels: 3,
            conv_layers: vec![
                ConvStage::new(8, 3, Pool::Max2),
                ConvStage::new(16, 3, Pool::Max2),
            ],
            dense_units: 32,
            seed: 42,
            learning_rate: 0.01,
            momentum: 0.9,
            epochs: 5,
            batch_size: 16,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct StageShape {
    pub in_channels: usize,
    pub in_size: usize,
    pub filters: usize,
    pub kernel: usize,
    pub pool: Pool,
    /// Side of the convolution output.
    pub conv_size: usize,
    /// Side after pooling.
    pub out_size: usize,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Layout {
    pub stages: Vec<StageShape>,
    pub flat: usize,
    pub dense_units: usize,
}

impl Layout {
    /// Lengths of every parameter tensor in declaration order: per stage the
    /// conv weights `[filters][in_channels][k][k]` and biases, then the hidden
    /// weights `[units][flat]` and biases, then the output weights and bias.
    pub fn tensor_lengths(&self) -> Vec<usize> {
        let mut lens = Vec::with_capacity(2 * self.stages.len() + 4);
        for s in &self.stages {
            lens.push(s.filters * s.in_channels * s.kernel * s.kernel);
            lens.push(s.filters);
        }
        lens.push(self.dense_units * self.flat);
        lens.push(self.dense_units);
        lens.push(self.dense_units);
        lens.push(1);
        lens
    }

    fn input_len(&self) -> usize {
        let s = &self.stages[0];
        s.in_channels * s.in_size * s.in_size
    }
}

impl CnnConfig {
    /// Validates counts and propagates spatial sizes through every stage.
    pub fn layout(&self) -> Result<Layout> {
        let bad = |m: alloc::string::String| Err(Error::InvalidConfig(m));
        if self.input_size == 0 || self.input_channels == 0 {
            return bad(format!(
                "input {}x{}x{} must be non-empty",
                self.input_channels, self.input_size, self.input_size
            ));
        }
        if self.conv_layers.is_empty() {
            return bad("at least one convolution stage is required".into());
        }
        if self.dense_units == 0 || self.batch_size == 0 {
            return bad("dense_units and batch_size must be at least 1".into());
        }
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return bad(format!("learning rate {} must be finite and >= 0", self.learning_rate));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return bad(format!("momentum {} must be in [0, 1)", self.momentum));
        }
        let mut stages = Vec::with_capacity(self.conv_layers.len());
        let (mut channels, mut size) = (self.input_channels, self.input_size);
        for (i, st) in self.conv_layers.iter().enumerate() {
            if st.filters == 0 || st.kernel == 0 {
                return bad(format!("stage {i}: filters and kernel must be at least 1"));
            }
            if st.kernel > size {
                return bad(format!(
                    "stage {i}: kernel {} does not fit a {size}x{size} input",
                    st.kernel
                ));
            }
            let conv_size = size - st.kernel + 1;
            let out_size = match st.pool {
                Pool::None => conv_size,
                Pool::Max2 => conv_size / 2,
            };
            if out_size == 0 {
                return bad(format!("stage {i}: pooling collapses {conv_size}x{conv_size} to nothing"));
            }
            stages.push(StageShape {
                in_channels: channels,
                in_size: size,
                filters: st.filters,
                kernel: st.kernel,
                pool: st.pool,
                conv_size,
                out_size,
            });
            channels = st.filters;
            size = out_size;
        }
        Ok(Layout {
            stages,
            flat: channels * size * size,
            dense_units: self.dense_units,
        })
    }
}

/// Parameter (or gradient) tensors in declaration order.
#[derive(Debug, Clone, PartialEq)]
pub struct Params(Vec<Vec<f64>>);

impl Params {
    pub fn zeros(lengths: &[usize]) -> Self {
        Params(lengths.iter().map(|&n| vec![0.0; n]).collect())
    }

    pub fn tensors(&self) -> &[Vec<f64>] {
        &self.0
    }

    pub fn tensors_mut(&mut self) -> &mut [Vec<f64>] {
        &mut self.0
    }

    pub fn into_tensors(self) -> Vec<Vec<f64>> {
        self.0
    }

    pub fn len(&self) -> usize {
        self.0.iter().map(Vec::len).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn add_assign(&mut self, other: &Params) {
        for (a, b) in self.0.iter_mut().zip(&other.0) {
            for (x, y) in a.iter_mut().zip(b) {
                *x += y;
            }
        }
    }

    fn scale(&mut self, k: f64) {
        for v in self.0.iter_mut().flatten() {
            *v *= k;
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CnnModel {
    config: CnnConfig,
    layout: Layout,
    params: Params,
    version: u32,
    trained_epochs: usize,
}

struct StageCache {
    /// Post-ReLU convolution output.
    act: Vec<f64>,
    /// Pooled output and, per pooled cell, the index of its maximum in `act`.
    pooled: Option<(Vec<f64>, Vec<usize>)>,
}

impl StageCache {
    fn output(&self) -> &[f64] {
        match &self.pooled {
            Some((p, _)) => p,
            None => &self.act,
        }
    }
}

struct Cache {
    stages: Vec<StageCache>,
    hidden: Vec<f64>,
    logit: f64,
}

fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + libm::exp(-z))
    } else {
        let e = libm::exp(z);
        e / (1.0 + e)
    }
}

/// Binary cross-entropy of `sigmoid(z)` against `y`, computed from the logit.
fn bce_from_logit(z: f64, y: f64) -> f64 {
    // softplus(z) - y z
    let softplus = if z > 0.0 {
        z + libm::log1p(libm::exp(-z))
    } else {
        libm::log1p(libm::exp(z))
    };
    softplus - y * z
}

fn conv_forward(input: &[f64], s: &StageShape, w: &[f64], b: &[f64]) -> Vec<f64> {
    let (n, k, o) = (s.in_size, s.kernel, s.conv_size);
    let mut out = vec![0.0; s.filters * o * o];
    for f in 0..s.filters {
        let out_f = &mut out[f * o * o..(f + 1) * o * o];
        out_f.fill(b[f]);
        for c in 0..s.in_channels {
            let in_c = &input[c * n * n..(c + 1) * n * n];
            for ky in 0..k {
                for kx in 0..k {
                    let wv = w[((f * s.in_channels + c) * k + ky) * k + kx];
                    for oy in 0..o {
                        let start = (oy + ky) * n + kx;
                        let src = &in_c[start..start + o];
                        let dst = &mut out_f[oy * o..(oy + 1) * o];
                        for (d, x) in dst.iter_mut().zip(src) {
                            *d += wv * x;
                        }
                    }
                }
            }
        }
    }
    out
}

/// Accumulates weight and bias gradients of one stage and, when `din` is
/// given, the gradient with respect to the stage input.
fn conv_backward(
    input: &[f64],
    dout: &[f64],
    s: &StageShape,
    w: &[f64],
    dw: &mut [f64],
    db: &mut [f64],
    mut din: Option<&mut [f64]>,
) {
    let (n, k, o) = (s.in_size, s.kernel, s.conv_size);
    for f in 0..s.filters {
        let g_f = &dout[f * o * o..(f + 1) * o * o];
        db[f] += g_f.iter().sum::<f64>();
        for c in 0..s.in_channels {
            let in_c = &input[c * n * n..(c + 1) * n * n];
            for ky in 0..k {
                for kx in 0..k {
                    let idx = ((f * s.in_channels + c) * k + ky) * k + kx;
                    let mut acc = 0.0;
                    for oy in 0..o {
                        let start = (oy + ky) * n + kx;
                        let src = &in_c[start..start + o];
                        let g = &g_f[oy * o..(oy + 1) * o];
                        for (x, gv) in src.iter().zip(g) {
                            acc += x * gv;
                        }
                    }
                    dw[idx] += acc;
                    if let Some(din) = din.as_deref_mut() {
                        let wv = w[idx];
                        let din_c = &mut din[c * n * n..(c + 1) * n * n];
                        for oy in 0..o {
                            let start = (oy + ky) * n + kx;
                            let dst = &mut din_c[start..start + o];
                            let g = &g_f[oy * o..(oy + 1) * o];
                            for (d, gv) in dst.iter_mut().zip(g) {
                                *d += wv * gv;
                            }
                        }
                    }
                }
            }
        }
    }
}

fn max_pool(act: &[f64], channels: usize, size: usize, out: usize) -> (Vec<f64>, Vec<usize>) {
    let mut pooled = Vec::with_capacity(channels * out * out);
    let mut argmax = Vec::with_capacity(channels * out * out);
    for c in 0..channels {
        let base = c * size * size;
        for py in 0..out {
            for px in 0..out {
                let mut best = base + 2 * py * size + 2 * px;
                for (dy, dx) in [(0, 1), (1, 0), (1, 1)] {
                    let i = base + (2 * py + dy) * size + 2 * px + dx;
                    if act[i] > act[best] {
                        best = i;
                    }
                }
                pooled.push(act[best]);
                argmax.push(best);
            }
        }
    }
    (pooled, argmax)
}

/// Bilinear resize of a square map with half-pixel centers, edges clamped.
fn bilinear_upsample(src: &[f64], from: usize, to: usize) -> Vec<f64> {
    let scale = from as f64 / to as f64;
    let coord = |d: usize| -> (usize, usize, f64) {
        let s = ((d as f64 + 0.5) * scale - 0.5).clamp(0.0, (from - 1) as f64);
        let i0 = libm::floor(s) as usize;
        let i1 = (i0 + 1).min(from - 1);
        (i0, i1, s - i0 as f64)
    };
    let mut out = Vec::with_capacity(to * to);
    for dy in 0..to {
        let (y0, y1, fy) = coord(dy);
        for dx in 0..to {
            let (x0, x1, fx) = coord(dx);
            let top = src[y0 * from + x0] * (1.0 - fx) + src[y0 * from + x1] * fx;
            let bottom = src[y1 * from + x0] * (1.0 - fx) + src[y1 * from + x1] * fx;
            out.push(top * (1.0 - fy) + bottom * fy);
        }
    }
    out
}

/// Fresh He-scaled weights and zero biases drawn from `cfg.seed`.
pub fn init_model(cfg: &CnnConfig) -> Result<CnnModel> {
    let layout = cfg.layout()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut params = Params::zeros(&layout.tensor_lengths());
    let mut fan_ins: Vec<usize> = layout
        .stages
        .iter()
        .map(|s| s.in_channels * s.kernel * s.kernel)
        .collect();
    fan_ins.push(layout.flat);
    fan_ins.push(layout.dense_units);
    for (i, fan_in) in fan_ins.into_iter().enumerate() {
        let std = libm::sqrt(2.0 / fan_in as f64);
        for w in params.0[2 * i].iter_mut() {
            let z: f64 = rng.sample(StandardNormal);
            *w = z * std;
        }
    }
    Ok(CnnModel {
        config: cfg.clone(),
        layout,
        params,
        version: FORMAT_VERSION,
        trained_epochs: 0,
    })
}

impl CnnModel {
    /// Reassembles a model from stored tensors, checking every shape.
    pub fn from_parts(config: CnnConfig, tensors: Vec<Vec<f64>>, trained_epochs: usize) -> Result<Self> {
        let layout = config.layout()?;
        let lengths = layout.tensor_lengths();
        if tensors.len() != lengths.len() {
            return Err(Error::InvalidConfig(format!(
                "expected {} tensors, found {}",
                lengths.len(),
                tensors.len()
            )));
        }
        for (t, &n) in tensors.iter().zip(&lengths) {
            if t.len() != n {
                return Err(Error::ShapeMismatch {
                    expected: n,
                    actual: t.len(),
                });
            }
        }
        Ok(Self {
            config,
            layout,
            params: Params(tensors),
            version: FORMAT_VERSION,
            trained_epochs,
        })
    }

    pub fn config(&self) -> &CnnConfig {
        &self.config
    }

    pub fn layout(&self) -> &Layout {
        &self.layout
    }

    pub fn params(&self) -> &Params {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut Params {
        &mut self.params
    }

    pub fn version(&self) -> u32 {
        self.version
    }

    pub fn trained_epochs(&self) -> usize {
        self.trained_epochs
    }

    pub fn input_len(&self) -> usize {
        self.layout.input_len()
    }

    fn check_input(&self, tile: &[f64]) -> Result<()> {
        let expected = self.input_len();
        if tile.len() != expected {
            return Err(Error::ShapeMismatch {
                expected,
                actual: tile.len(),
            });
        }
        Ok(())
    }

    fn hidden_index(&self) -> usize {
        2 * self.layout.stages.len()
    }

    fn run(&self, tile: &[f64]) -> Cache {
        let mut stages: Vec<StageCache> = Vec::with_capacity(self.layout.stages.len());
        for (i, s) in self.layout.stages.iter().enumerate() {
            let input = stages.last().map_or(tile, StageCache::output);
            let mut act = conv_forward(input, s, &self.params.0[2 * i], &self.params.0[2 * i + 1]);
            for v in act.iter_mut() {
                if *v < 0.0 {
                    *v = 0.0;
                }
            }
            let pooled = match s.pool {
                Pool::None => None,
                Pool::Max2 => Some(max_pool(&act, s.filters, s.conv_size, s.out_size)),
            };
            stages.push(StageCache { act, pooled });
        }
        let flat = stages.last().map_or(tile, StageCache::output);
        let h = self.hidden_index();
        let (hw, hb, ow, ob) = (
            &self.params.0[h],
            &self.params.0[h + 1],
            &self.params.0[h + 2],
            self.params.0[h + 3][0],
        );
        let hidden: Vec<f64> = (0..self.layout.dense_units)
            .map(|u| {
                let row = &hw[u * self.layout.flat..(u + 1) * self.layout.flat];
                let z = hb[u] + row.iter().zip(flat).map(|(a, b)| a * b).sum::<f64>();
                z.max(0.0)
            })
            .collect();
        let logit = ob + ow.iter().zip(&hidden).map(|(a, b)| a * b).sum::<f64>();
        Cache {
            stages,
            hidden,
            logit,
        }
    }

    /// Pre-sigmoid score of one tile.
    pub fn logit(&self, tile: &[f64]) -> Result<f64> {
        self.check_input(tile)?;
        Ok(self.run(tile).logit)
    }

    /// Probability that the tile belongs to the positive class.
    pub fn forward(&self, tile: &[f64]) -> Result<f64> {
        Ok(sigmoid(self.logit(tile)?))
    }

    /// Gradient of the score with respect to the flattened conv output.
    fn backward_dense(&self, cache: &Cache, dlogit: f64, grads: Option<&mut Params>) -> Vec<f64> {
        let h = self.hidden_index();
        let flat_len = self.layout.flat;
        let ow = &self.params.0[h + 2];
        let hw = &self.params.0[h];
        let dh: Vec<f64> = cache
            .hidden
            .iter()
            .zip(ow)
            .map(|(&a, &w)| if a > 0.0 { dlogit * w } else { 0.0 })
            .collect();
        if let Some(g) = grads {
            let flat = cache.stages.last().map(StageCache::output).unwrap_or(&[]);
            for (gw, a) in g.0[h + 2].iter_mut().zip(&cache.hidden) {
                *gw += dlogit * a;
            }
            g.0[h + 3][0] += dlogit;
            for (u, &d) in dh.iter().enumerate() {
                g.0[h + 1][u] += d;
                if d != 0.0 {
                    let row = &mut g.0[h][u * flat_len..(u + 1) * flat_len];
                    for (gw, x) in row.iter_mut().zip(flat) {
                        *gw += d * x;
                    }
                }
            }
        }
        let mut dflat = vec![0.0; flat_len];
        for (u, &d) in dh.iter().enumerate() {
            if d != 0.0 {
                let row = &hw[u * flat_len..(u + 1) * flat_len];
                for (df, w) in dflat.iter_mut().zip(row) {
                    *df += d * w;
                }
            }
        }
        dflat
    }

    /// Routes a stage-output gradient back through pooling onto `act`.
    fn unpool(s: &StageShape, cache: &StageCache, dout: &[f64]) -> Vec<f64> {
        match &cache.pooled {
            None => dout.to_vec(),
            Some((_, argmax)) => {
                let mut dact = vec![0.0; s.filters * s.conv_size * s.conv_size];
                for (&i, &g) in argmax.iter().zip(dout) {
                    dact[i] += g;
                }
                dact
            }
        }
    }

    /// Adds this example's loss gradients to `grads` and returns its loss.
    fn accumulate(&self, tile: &[f64], target: f64, grads: &mut Params) -> f64 {
        let cache = self.run(tile);
        let loss = bce_from_logit(cache.logit, target);
        let dlogit = sigmoid(cache.logit) - target;
        let mut dout = self.backward_dense(&cache, dlogit, Some(grads));
        for (i, s) in self.layout.stages.iter().enumerate().rev() {
            let mut dact = Self::unpool(s, &cache.stages[i], &dout);
            for (d, &a) in dact.iter_mut().zip(&cache.stages[i].act) {
                if a <= 0.0 {
                    *d = 0.0;
                }
            }
            let input = if i == 0 { tile } else { cache.stages[i - 1].output() };
            let mut din = (i > 0).then(|| vec![0.0; s.in_channels * s.in_size * s.in_size]);
            let (head, tail) = grads.0.split_at_mut(2 * i + 1);
            conv_backward(
                input,
                &dact,
                s,
                &self.params.0[2 * i],
                &mut head[2 * i],
                &mut tail[0],
                din.as_deref_mut(),
            );
            if let Some(d) = din {
                dout = d;
            }
        }
        loss
    }

    /// Summed loss and gradients over `items`, folded in order.
    fn chunk_gradients<'a, I>(&self, items: I) -> (f64, Params)
    where
        I: IntoIterator<Item = (&'a [f64], f64)>,
    {
        let mut grads = Params::zeros(&self.layout.tensor_lengths());
        let mut loss = 0.0;
        for (tile, target) in items {
            loss += self.accumulate(tile, target, &mut grads);
        }
        (loss, grads)
    }

    /// Mean binary cross-entropy over the batch and its exact gradients.
    pub fn loss_and_gradients(&self, batch: &[(&[f64], f64)]) -> Result<(f64, Params)> {
        if batch.is_empty() {
            return Err(Error::Empty("batch"));
        }
        for &(tile, y) in batch {
            self.check_input(tile)?;
            if y != 0.0 && y != 1.0 {
                return Err(Error::InvalidLabel(y));
            }
        }
        let (loss, mut grads) = self.chunk_gradients(batch.iter().copied());
        let n = batch.len() as f64;
        grads.scale(1.0 / n);
        Ok((loss / n, grads))
    }

    /// Grad-CAM heat map over the tile, `input_size`² values in `[0, 1]`.
    ///
    /// Channel weights are the spatial means of the score gradient at the
    /// last convolution's ReLU output; the weighted sum is rectified,
    /// upsampled bilinearly and divided by its maximum.
    pub fn gradcam(&self, tile: &[f64]) -> Result<Vec<f64>> {
        if self.layout.stages.is_empty() {
            return Err(Error::NoConvLayer);
        }
        self.check_input(tile)?;
        let cache = self.run(tile);
        let dout = self.backward_dense(&cache, 1.0, None);
        let last = self.layout.stages.len() - 1;
        let s = &self.layout.stages[last];
        let dact = Self::unpool(s, &cache.stages[last], &dout);
        let area = s.conv_size * s.conv_size;
        let act = &cache.stages[last].act;
        let mut cam = vec![0.0; area];
        for f in 0..s.filters {
            let weight = dact[f * area..(f + 1) * area].iter().sum::<f64>() / area as f64;
            if weight == 0.0 {
                continue;
            }
            for (c, a) in cam.iter_mut().zip(&act[f * area..(f + 1) * area]) {
                *c += weight * a;
            }
        }
        for c in cam.iter_mut() {
            if *c < 0.0 {
                *c = 0.0;
            }
        }
        let mut map = bilinear_upsample(&cam, s.conv_size, self.config.input_size);
        let max = map.iter().copied().fold(0.0, f64::max);
        if max > 0.0 {
            for v in map.iter_mut() {
                *v /= max;
            }
        } else {
            map.fill(0.0);
        }
        Ok(map)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochMetrics {
    /// 1-based.
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: f64,
    pub val_accuracy: f64,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    /// Weights from the epoch with the best validation accuracy.
    pub model: CnnModel,
    pub best_epoch: usize,
    pub metrics: Vec<EpochMetrics>,
}

fn check_dataset(model: &CnnModel, ds: &TileDataset, what: &'static str) -> Result<()> {
    if ds.is_empty() {
        return Err(Error::Empty(what));
    }
    let cfg = model.config();
    if ds.tile_size() != cfg.input_size || ds.channels() != Some(cfg.input_channels) {
        return Err(Error::Dataset(format!(
            "{what} holds {}x{} tiles with {:?} channels, model expects {}x{} with {}",
            ds.tile_size(),
            ds.tile_size(),
            ds.channels(),
            cfg.input_size,
            cfg.input_size,
            cfg.input_channels
        )));
    }
    Ok(())
}

/// Mean loss and tile accuracy of `model` on `ds`.
pub fn evaluate<E: Executor>(model: &CnnModel, ds: &TileDataset, exec: &E) -> Result<(f64, f64)> {
    if ds.is_empty() {
        return Err(Error::Empty("evaluation dataset"));
    }
    let logits = exec.map(ds.samples(), |s| model.logit(&s.pixels));
    let mut loss = 0.0;
    let mut correct = 0usize;
    for (z, s) in logits.into_iter().zip(ds.samples()) {
        let z = z?;
        loss += bce_from_logit(z, s.label.as_target());
        if Label::from_probability(sigmoid(z)) == s.label {
            correct += 1;
        }
    }
    let n = ds.len() as f64;
    Ok((loss / n, correct as f64 / n))
}

/// Mini-batch SGD with momentum on a seeded shuffle.
///
/// Per-example gradients are computed in fixed chunks through `exec` and
/// reduced in chunk order, so results do not depend on the executor.
pub fn train<E: Executor>(
    model: &CnnModel,
    train_set: &TileDataset,
    val_set: &TileDataset,
    exec: &E,
) -> Result<TrainOutcome> {
    check_dataset(model, train_set, "training set")?;
    check_dataset(model, val_set, "validation set")?;
    let cfg = model.config().clone();
    let mut current = model.clone();
    let mut velocity = Params::zeros(&current.layout.tensor_lengths());
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    rng.set_stream(1);
    let mut order: Vec<usize> = (0..train_set.len()).collect();
    let mut best: Option<(f64, usize, Params)> = None;
    let mut metrics = Vec::with_capacity(cfg.epochs);

    for epoch in 1..=cfg.epochs {
        order.shuffle(&mut rng);
        let mut epoch_loss = 0.0;
        for (b, batch) in order.chunks(cfg.batch_size).enumerate() {
            let chunks: Vec<&[usize]> = batch.chunks(GRAD_CHUNK).collect();
            let snapshot = &current;
            let parts = exec.map(&chunks, |idx| {
                snapshot.chunk_gradients(idx.iter().map(|&i| {
                    let s = &train_set.samples()[i];
                    (s.pixels.as_slice(), s.label.as_target())
                }))
            });
            let mut parts = parts.into_iter();
            let (mut loss, mut grads) = parts.next().expect("batch is never empty");
            for (l, g) in parts {
                loss += l;
                grads.add_assign(&g);
            }
            if !loss.is_finite() {
                return Err(Error::NonFiniteLoss { epoch, batch: b });
            }
            epoch_loss += loss;
            grads.scale(1.0 / batch.len() as f64);
            for ((w, v), g) in current
                .params
                .0
                .iter_mut()
                .flatten()
                .zip(velocity.0.iter_mut().flatten())
                .zip(grads.0.iter().flatten())
            {
                *v = cfg.momentum * *v - cfg.learning_rate * g;
                *w += *v;
            }
        }
        let (val_loss, val_accuracy) = evaluate(&current, val_set, exec)?;
        metrics.push(EpochMetrics {
            epoch,
            train_loss: epoch_loss / train_set.len() as f64,
            val_loss,
            val_accuracy,
        });
        if best.as_ref().is_none_or(|(acc, _, _)| val_accuracy > *acc) {
            best = Some((val_accuracy, epoch, current.params.clone()));
        }
    }

    let mut out = model.clone();
    let best_epoch = match best {
        Some((_, epoch, params)) => {
            out.params = params;
            epoch
        }
        None => 0,
    };
    out.trained_epochs = model.trained_epochs + best_epoch;
    Ok(TrainOutcome {
        model: out,
        best_epoch,
        metrics,
    })
}
