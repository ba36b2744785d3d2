//! Convolutional surrogate for the detectability oracle.
//!
//! A small VGG-style stack (3x3 convolutions, ReLU, optional batch norm, 2x2
//! average pooling, dense head) maps one standardised projection to the
//! eleven candidate scores used by the planner. Everything is plain `f64`
//! loops; training is sequential so fixed seeds give identical loss curves.

use nalgebra::{DMatrix, DMatrixView, DMatrixViewMut};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::detectability::{detectability_map_on, DetectabilityConfig, DetectabilityMap, RoiPlacement};
use crate::error::{Error, Result};
use crate::geometry::{DetectorGeometry, PoseGrid, ViewAngles};
use crate::phantom::{build_phantom, PhantomParams};
use crate::planner::{PlannerConfig, Predictor, CANDIDATES, DEFAULT_OFFSETS};
use crate::projector::{simulate_projection, AttenuationTable, ProjectionImage, Spectrum};

pub const OUTPUTS: usize = CANDIDATES;

const BN_EPS: f64 = 1e-5;
const BN_MOMENTUM: f64 = 0.1;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LayerSpec {
    /// 3x3 convolution, zero padding 1.
    Conv { channels: usize, stride: usize },
    Relu,
    BatchNorm,
    /// 2x2 average pooling (odd trailing rows/columns dropped).
    Pool,
    Dense { outputs: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Shape {
    pub c: usize,
    pub h: usize,
    pub w: usize,
}

impl Shape {
    pub fn len(&self) -> usize {
        self.c * self.h * self.w
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RegressorModel {
    input_dims: (usize, usize),
    specs: Vec<LayerSpec>,
    /// `shapes[l]` is the input of layer `l`; the last entry is the output.
    shapes: Vec<Shape>,
    /// Per layer: weights then biases (conv, dense) or gamma then beta (batch norm).
    params: Vec<Vec<f64>>,
    /// Batch norm running mean then running variance; empty for other layers.
    running: Vec<Vec<f64>>,
}

fn param_count(spec: &LayerSpec, input: Shape) -> usize {
    match *spec {
        LayerSpec::Conv { channels, .. } => channels * input.c * 9 + channels,
        LayerSpec::BatchNorm => 2 * input.c,
        LayerSpec::Dense { outputs } => outputs * input.len() + outputs,
        LayerSpec::Relu | LayerSpec::Pool => 0,
    }
}

fn output_shape(spec: &LayerSpec, s: Shape) -> Result<Shape> {
    Ok(match *spec {
        LayerSpec::Conv { channels, stride } => {
            if channels == 0 || stride == 0 {
                return Err(Error::Config("convolution needs channels and stride >= 1".into()));
            }
            Shape { c: channels, h: (s.h - 1) / stride + 1, w: (s.w - 1) / stride + 1 }
        }
        LayerSpec::Pool => {
            if s.h < 2 || s.w < 2 {
                return Err(Error::Dimension(format!("cannot pool a {}x{} map", s.h, s.w)));
            }
            Shape { c: s.c, h: s.h / 2, w: s.w / 2 }
        }
        LayerSpec::Dense { outputs } => {
            if outputs == 0 {
                return Err(Error::Config("dense layer needs outputs >= 1".into()));
            }
            Shape { c: outputs, h: 1, w: 1 }
        }
        LayerSpec::Relu | LayerSpec::BatchNorm => s,
    })
}

impl RegressorModel {
    /// Model with zero parameters and unit running variances.
    pub fn zeros(input_dims: (usize, usize), specs: &[LayerSpec]) -> Result<Self> {
        if input_dims.0 == 0 || input_dims.1 == 0 {
            return Err(Error::Dimension("input must be non-empty".into()));
        }
        let mut shapes = vec![Shape { c: 1, h: input_dims.0, w: input_dims.1 }];
        for spec in specs {
            let next = output_shape(spec, *shapes.last().unwrap())?;
            shapes.push(next);
        }
        if shapes.last().unwrap().len() != OUTPUTS {
            return Err(Error::Config(format!("model must end in {OUTPUTS} outputs")));
        }
        let params = specs.iter().zip(&shapes).map(|(s, i)| vec![0.0; param_count(s, *i)]).collect();
        let running = specs
            .iter()
            .zip(&shapes)
            .map(|(s, i)| match s {
                LayerSpec::BatchNorm => [vec![0.0; i.c], vec![1.0; i.c]].concat(),
                _ => vec![],
            })
            .collect();
        let mut model = Self { input_dims, specs: specs.to_vec(), shapes, params, running };
        for (l, spec) in specs.iter().enumerate() {
            if *spec == LayerSpec::BatchNorm {
                let c = model.shapes[l].c;
                model.params[l][..c].fill(1.0);
            }
        }
        Ok(model)
    }

    /// He-initialised weights, zero biases.
    pub fn new(input_dims: (usize, usize), specs: &[LayerSpec], seed: u64) -> Result<Self> {
        let mut model = Self::zeros(input_dims, specs)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for l in 0..specs.len() {
            let (fan_in, weights) = match specs[l] {
                LayerSpec::Conv { channels, .. } => (model.shapes[l].c * 9, channels * model.shapes[l].c * 9),
                LayerSpec::Dense { outputs } => (model.shapes[l].len(), outputs * model.shapes[l].len()),
                _ => continue,
            };
            let normal = Normal::new(0.0, (2.0 / fan_in as f64).sqrt()).expect("positive std");
            for w in &mut model.params[l][..weights] {
                *w = normal.sample(&mut rng);
            }
        }
        Ok(model)
    }

    /// Four conv blocks (8, 16, 32, 32 channels), then two dense layers.
    pub fn desk(input_dims: (usize, usize), batch_norm: bool, hidden: usize, seed: u64) -> Result<Self> {
        let mut specs = vec![];
        for channels in [8, 16, 32, 32] {
            specs.push(LayerSpec::Conv { channels, stride: 1 });
            if batch_norm {
                specs.push(LayerSpec::BatchNorm);
            }
            specs.push(LayerSpec::Relu);
            specs.push(LayerSpec::Pool);
        }
        specs.extend([LayerSpec::Dense { outputs: hidden }, LayerSpec::Relu, LayerSpec::Dense { outputs: OUTPUTS }]);
        Self::new(input_dims, &specs, seed)
    }

    pub fn input_dims(&self) -> (usize, usize) {
        self.input_dims
    }

    pub fn specs(&self) -> &[LayerSpec] {
        &self.specs
    }

    pub fn shapes(&self) -> &[Shape] {
        &self.shapes
    }

    pub fn params(&self) -> &[Vec<f64>] {
        &self.params
    }

    pub fn running(&self) -> &[Vec<f64>] {
        &self.running
    }

    pub fn parameter_count(&self) -> usize {
        self.params.iter().map(Vec::len).sum()
    }

    /// Replace all tensors (as read back from a model file).
    pub fn set_tensors(&mut self, params: Vec<Vec<f64>>, running: Vec<Vec<f64>>) -> Result<()> {
        let same = |a: &[Vec<f64>], b: &[Vec<f64>]| a.len() == b.len() && a.iter().zip(b).all(|(x, y)| x.len() == y.len());
        if !same(&params, &self.params) || !same(&running, &self.running) {
            return Err(Error::Dimension("tensor sizes do not match the architecture".into()));
        }
        if params.iter().chain(&running).flatten().any(|v| !v.is_finite()) {
            return Err(Error::Numerical("non-finite weight".into()));
        }
        self.params = params;
        self.running = running;
        Ok(())
    }

    /// Inference on one standardised image (`rows * cols`, row-major).
    pub fn forward(&self, input: &[f64]) -> Result<[f64; OUTPUTS]> {
        let trace = self.forward_batch(&[input.to_vec()], Mode::Infer)?;
        let out = &trace.acts.last().unwrap()[0];
        Ok(std::array::from_fn(|i| out[i]))
    }

    fn forward_batch(&self, inputs: &[Vec<f64>], mode: Mode) -> Result<Trace> {
        let n_in = self.shapes[0].len();
        if let Some(bad) = inputs.iter().find(|x| x.len() != n_in) {
            return Err(Error::Dimension(format!("input has {} values, model expects {n_in}", bad.len())));
        }
        let mut acts = vec![inputs.to_vec()];
        let mut bn = vec![];
        for (l, spec) in self.specs.iter().enumerate() {
            let (s_in, s_out) = (self.shapes[l], self.shapes[l + 1]);
            let p = &self.params[l];
            let x = acts.last().unwrap();
            let mut cache = None;
            let y: Vec<Vec<f64>> = match *spec {
                LayerSpec::Conv { stride, .. } => x.iter().map(|v| conv_forward(v, p, s_in, s_out, stride)).collect(),
                LayerSpec::Relu => x.iter().map(|v| v.iter().map(|a| a.max(0.0)).collect()).collect(),
                LayerSpec::Pool => x.iter().map(|v| pool_forward(v, s_in, s_out)).collect(),
                LayerSpec::Dense { .. } => x.iter().map(|v| dense_forward(v, p, s_out.c)).collect(),
                LayerSpec::BatchNorm => {
                    let (mean, var) = match mode {
                        Mode::Train => batch_stats(x, s_in),
                        Mode::Infer => {
                            let r = &self.running[l];
                            (r[..s_in.c].to_vec(), r[s_in.c..].to_vec())
                        }
                    };
                    let inv: Vec<f64> = var.iter().map(|v| 1.0 / (v + BN_EPS).sqrt()).collect();
                    let hw = s_in.h * s_in.w;
                    let y = x
                        .iter()
                        .map(|v| {
                            v.iter()
                                .enumerate()
                                .map(|(i, a)| {
                                    let c = i / hw;
                                    p[c] * (a - mean[c]) * inv[c] + p[s_in.c + c]
                                })
                                .collect()
                        })
                        .collect();
                    cache = Some(BnCache { mean, var, inv });
                    y
                }
            };
            bn.push(cache);
            acts.push(y);
        }
        if acts.last().unwrap().iter().flatten().any(|v| !v.is_finite()) {
            return Err(Error::Numerical("non-finite network output".into()));
        }
        Ok(Trace { acts, bn, train: mode == Mode::Train })
    }

    /// Parameter gradients for output gradients `dout` (one per sample).
    fn backward(&self, trace: &Trace, mut grad: Vec<Vec<f64>>) -> Vec<Vec<f64>> {
        let mut grads: Vec<Vec<f64>> = self.params.iter().map(|p| vec![0.0; p.len()]).collect();
        for l in (0..self.specs.len()).rev() {
            let (s_in, s_out) = (self.shapes[l], self.shapes[l + 1]);
            let x = &trace.acts[l];
            let p = &self.params[l];
            let g = &mut grads[l];
            grad = match self.specs[l] {
                LayerSpec::Conv { stride, .. } => {
                    x.iter().zip(&grad).map(|(xi, gi)| conv_backward(xi, gi, p, g, s_in, s_out, stride)).collect()
                }
                LayerSpec::Relu => x
                    .iter()
                    .zip(&grad)
                    .map(|(xi, gi)| xi.iter().zip(gi).map(|(a, d)| if *a > 0.0 { *d } else { 0.0 }).collect())
                    .collect(),
                LayerSpec::Pool => grad.iter().map(|gi| pool_backward(gi, s_in, s_out)).collect(),
                LayerSpec::Dense { .. } => {
                    x.iter().zip(&grad).map(|(xi, gi)| dense_backward(xi, gi, p, g)).collect()
                }
                LayerSpec::BatchNorm => {
                    let cache = trace.bn[l].as_ref().expect("batch norm cache");
                    bn_backward(x, &grad, p, g, cache, s_in, trace.train)
                }
            };
        }
        grads
    }

    fn loss_and_grads(&self, samples: &[&Sample], mode: Mode) -> Result<(f64, Vec<Vec<f64>>, Trace)> {
        let inputs: Vec<Vec<f64>> = samples.iter().map(|s| s.input.clone()).collect();
        let trace = self.forward_batch(&inputs, mode)?;
        let (loss, dout) = masked_mse(trace.acts.last().unwrap(), samples);
        let grads = self.backward(&trace, dout);
        Ok((loss, grads, trace))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Mode {
    Train,
    Infer,
}

struct BnCache {
    mean: Vec<f64>,
    var: Vec<f64>,
    inv: Vec<f64>,
}

struct Trace {
    acts: Vec<Vec<Vec<f64>>>,
    bn: Vec<Option<BnCache>>,
    train: bool,
}

/// Patch matrix of a 3x3 / pad-1 convolution: one row per output position,
/// column `i * 9 + ky * 3 + kx` (the weight layout), column-major.
fn im2col(x: &[f64], si: Shape, so: Shape, stride: usize) -> DMatrix<f64> {
    let positions = so.h * so.w;
    let mut cols = DMatrix::zeros(positions, si.c * 9);
    for i in 0..si.c {
        let plane = &x[i * si.h * si.w..(i + 1) * si.h * si.w];
        for k in 0..9 {
            let (ky, kx) = (k / 3, k % 3);
            let col = cols.column_mut(i * 9 + k);
            let col = col.data.into_slice_mut();
            for oy in 0..so.h {
                let iy = (oy * stride + ky) as isize - 1;
                if iy < 0 || iy >= si.h as isize {
                    continue;
                }
                let row = &plane[iy as usize * si.w..(iy as usize + 1) * si.w];
                for ox in 0..so.w {
                    let ix = (ox * stride + kx) as isize - 1;
                    if ix >= 0 && ix < si.w as isize {
                        col[oy * so.w + ox] = row[ix as usize];
                    }
                }
            }
        }
    }
    cols
}

fn conv_forward(x: &[f64], p: &[f64], si: Shape, so: Shape, stride: usize) -> Vec<f64> {
    let k = si.c * 9;
    let cols = im2col(x, si, so, stride);
    // Row-major (out, k) weights read as a column-major (k, out) matrix.
    let wt = DMatrixView::from_slice(&p[..k * so.c], k, so.c);
    let mut y = cols * wt;
    for (o, b) in p[k * so.c..].iter().enumerate() {
        y.column_mut(o).add_scalar_mut(*b);
    }
    // Column-major (positions, out) is exactly the CHW layout.
    y.data.into()
}

fn conv_backward(x: &[f64], dy: &[f64], p: &[f64], g: &mut [f64], si: Shape, so: Shape, stride: usize) -> Vec<f64> {
    let k = si.c * 9;
    let positions = so.h * so.w;
    let cols = im2col(x, si, so, stride);
    let dyv = DMatrixView::from_slice(dy, positions, so.c);
    {
        let mut gw = DMatrixViewMut::from_slice(&mut g[..k * so.c], k, so.c);
        gw.gemm_tr(1.0, &cols, &dyv, 1.0);
    }
    for o in 0..so.c {
        g[k * so.c + o] += dyv.column(o).sum();
    }
    let wt = DMatrixView::from_slice(&p[..k * so.c], k, so.c);
    let dcols = dyv * wt.transpose();
    let mut dx = vec![0.0; si.len()];
    for i in 0..si.c {
        let plane = &mut dx[i * si.h * si.w..(i + 1) * si.h * si.w];
        for kk in 0..9 {
            let (ky, kx) = (kk / 3, kk % 3);
            let col = dcols.column(i * 9 + kk);
            for oy in 0..so.h {
                let iy = (oy * stride + ky) as isize - 1;
                if iy < 0 || iy >= si.h as isize {
                    continue;
                }
                let r = iy as usize * si.w;
                for ox in 0..so.w {
                    let ix = (ox * stride + kx) as isize - 1;
                    if ix >= 0 && ix < si.w as isize {
                        plane[r + ix as usize] += col[oy * so.w + ox];
                    }
                }
            }
        }
    }
    dx
}

fn pool_forward(x: &[f64], si: Shape, so: Shape) -> Vec<f64> {
    let mut y = vec![0.0; so.len()];
    for c in 0..so.c {
        for oy in 0..so.h {
            for ox in 0..so.w {
                let at = |dy: usize, dx: usize| x[(c * si.h + 2 * oy + dy) * si.w + 2 * ox + dx];
                y[(c * so.h + oy) * so.w + ox] = 0.25 * (at(0, 0) + at(0, 1) + at(1, 0) + at(1, 1));
            }
        }
    }
    y
}

fn pool_backward(dy: &[f64], si: Shape, so: Shape) -> Vec<f64> {
    let mut dx = vec![0.0; si.len()];
    for c in 0..so.c {
        for oy in 0..so.h {
            for ox in 0..so.w {
                let d = 0.25 * dy[(c * so.h + oy) * so.w + ox];
                for (ry, rx) in [(0, 0), (0, 1), (1, 0), (1, 1)] {
                    dx[(c * si.h + 2 * oy + ry) * si.w + 2 * ox + rx] = d;
                }
            }
        }
    }
    dx
}

fn dense_forward(x: &[f64], p: &[f64], outputs: usize) -> Vec<f64> {
    let n = x.len();
    (0..outputs)
        .map(|o| p[outputs * n + o] + p[o * n..(o + 1) * n].iter().zip(x).map(|(w, v)| w * v).sum::<f64>())
        .collect()
}

fn dense_backward(x: &[f64], dy: &[f64], p: &[f64], g: &mut [f64]) -> Vec<f64> {
    let (n, outputs) = (x.len(), dy.len());
    let mut dx = vec![0.0; n];
    for o in 0..outputs {
        let d = dy[o];
        g[outputs * n + o] += d;
        if d == 0.0 {
            continue;
        }
        let (w, gw) = (&p[o * n..(o + 1) * n], &mut g[o * n..(o + 1) * n]);
        for k in 0..n {
            gw[k] += d * x[k];
            dx[k] += d * w[k];
        }
    }
    dx
}

/// Per-channel mean and (biased) variance over batch and space.
fn batch_stats(x: &[Vec<f64>], s: Shape) -> (Vec<f64>, Vec<f64>) {
    let hw = s.h * s.w;
    let m = (x.len() * hw) as f64;
    let mut mean = vec![0.0; s.c];
    let mut var = vec![0.0; s.c];
    for c in 0..s.c {
        mean[c] = x.iter().map(|v| v[c * hw..(c + 1) * hw].iter().sum::<f64>()).sum::<f64>() / m;
        var[c] = x.iter().map(|v| v[c * hw..(c + 1) * hw].iter().map(|a| (a - mean[c]).powi(2)).sum::<f64>()).sum::<f64>() / m;
    }
    (mean, var)
}

fn bn_backward(x: &[Vec<f64>], dy: &[Vec<f64>], p: &[f64], g: &mut [f64], cache: &BnCache, s: Shape, train: bool) -> Vec<Vec<f64>> {
    let hw = s.h * s.w;
    let m = (x.len() * hw) as f64;
    let mut dx: Vec<Vec<f64>> = x.iter().map(|v| vec![0.0; v.len()]).collect();
    for c in 0..s.c {
        let (mu, inv, gamma) = (cache.mean[c], cache.inv[c], p[c]);
        let (mut sum_dy, mut sum_dy_xhat) = (0.0, 0.0);
        for (xv, dv) in x.iter().zip(dy) {
            for k in c * hw..(c + 1) * hw {
                sum_dy += dv[k];
                sum_dy_xhat += dv[k] * (xv[k] - mu) * inv;
            }
        }
        g[c] += sum_dy_xhat;
        g[s.c + c] += sum_dy;
        for ((xv, dv), out) in x.iter().zip(dy).zip(dx.iter_mut()) {
            for k in c * hw..(c + 1) * hw {
                out[k] = if train {
                    let xhat = (xv[k] - mu) * inv;
                    gamma * inv / m * (m * dv[k] - sum_dy - xhat * sum_dy_xhat)
                } else {
                    gamma * inv * dv[k]
                };
            }
        }
    }
    dx
}

/// Minimal view of a training example used by the loss.
struct Sample {
    input: Vec<f64>,
    target: [f64; OUTPUTS],
    mask: [bool; OUTPUTS],
}

/// Mean squared error over unmasked targets, with its output gradient.
fn masked_mse(outputs: &[Vec<f64>], samples: &[&Sample]) -> (f64, Vec<Vec<f64>>) {
    let count = samples.iter().map(|s| s.mask.iter().filter(|m| **m).count()).sum::<usize>();
    let mut loss = 0.0;
    let mut dout = vec![vec![0.0; OUTPUTS]; samples.len()];
    if count == 0 {
        return (0.0, dout);
    }
    let n = count as f64;
    for ((y, s), d) in outputs.iter().zip(samples).zip(dout.iter_mut()) {
        for i in 0..OUTPUTS {
            if s.mask[i] {
                let e = y[i] - s.target[i];
                loss += e * e / n;
                d[i] = 2.0 * e / n;
            }
        }
    }
    (loss, dout)
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainingSample {
    /// Standardised noisy projection, `input_dims` row-major.
    pub input: Vec<f32>,
    /// Normalised detectability of the eleven candidates.
    pub target: [f64; OUTPUTS],
    /// `false` where the candidate leaves the pose grid.
    pub mask: [bool; OUTPUTS],
    pub pose: ViewAngles,
    pub sim_id: usize,
}

impl TrainingSample {
    fn as_sample(&self, input: Vec<f64>) -> Sample {
        Sample { input, target: self.target, mask: self.mask }
    }

    fn input_f64(&self) -> Vec<f64> {
        self.input.iter().map(|&v| v as f64).collect()
    }
}

/// Masked mean squared error of the model over `samples` (inference mode).
pub fn evaluate(model: &RegressorModel, samples: &[TrainingSample]) -> Result<f64> {
    let owned: Vec<Sample> = samples.iter().map(|s| s.as_sample(s.input_f64())).collect();
    let refs: Vec<&Sample> = owned.iter().collect();
    let outputs = owned.iter().map(|s| model.forward(&s.input).map(|o| o.to_vec())).collect::<Result<Vec<_>>>()?;
    Ok(masked_mse(&outputs, &refs).0)
}

/// Maximum relative error between analytic and central-difference gradients
/// of the masked MSE, over `checks` randomly chosen parameters (all of them
/// if the model is smaller). Relative errors use `max(|a|, |n|, 1e-8)` as
/// denominator so that exactly-zero gradients compare absolutely.
pub fn gradient_check(model: &RegressorModel, samples: &[TrainingSample], checks: usize, seed: u64) -> Result<f64> {
    const H: f64 = 1e-4;
    let owned: Vec<Sample> = samples.iter().map(|s| s.as_sample(s.input_f64())).collect();
    let refs: Vec<&Sample> = owned.iter().collect();
    let (_, grads, _) = model.loss_and_grads(&refs, Mode::Train)?;
    let mut index: Vec<(usize, usize)> =
        model.params.iter().enumerate().flat_map(|(l, p)| (0..p.len()).map(move |k| (l, k))).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    index.shuffle(&mut rng);
    index.truncate(checks.max(1));
    let mut probe = model.clone();
    let mut worst: f64 = 0.0;
    for (l, k) in index {
        let w = model.params[l][k];
        probe.params[l][k] = w + H;
        let plus = probe.loss_and_grads(&refs, Mode::Train)?.0;
        probe.params[l][k] = w - H;
        let minus = probe.loss_and_grads(&refs, Mode::Train)?.0;
        probe.params[l][k] = w;
        let numeric = (plus - minus) / (2.0 * H);
        let analytic = grads[l][k];
        let err = (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-8);
        worst = worst.max(err);
    }
    Ok(worst)
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub momentum: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub seed: u64,
    /// Random in-plane rotations of the inputs within +-10 degrees.
    pub augment: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self { learning_rate: 1e-3, momentum: 0.9, batch_size: 16, epochs: 20, seed: 0, augment: true }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate >= 0.0) || !self.learning_rate.is_finite() {
            return Err(Error::Config("learning rate must be >= 0".into()));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::Config("momentum must lie in [0, 1)".into()));
        }
        if self.batch_size == 0 || self.epochs == 0 {
            return Err(Error::Config("batch size and epochs must be >= 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainOutcome {
    pub model: RegressorModel,
    /// Mean training loss of each epoch, measured on the fly.
    pub losses: Vec<f64>,
}

/// Minibatch SGD with momentum on the masked MSE.
pub fn train(model: &RegressorModel, samples: &[TrainingSample], cfg: &TrainConfig) -> Result<TrainOutcome> {
    cfg.validate()?;
    if samples.is_empty() {
        return Err(Error::Config("no training samples".into()));
    }
    let (rows, cols) = model.input_dims;
    let mut model = model.clone();
    let mut velocity: Vec<Vec<f64>> = model.params.iter().map(|p| vec![0.0; p.len()]).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut order: Vec<usize> = (0..samples.len()).collect();
    let mut losses = Vec::with_capacity(cfg.epochs);
    for epoch in 0..cfg.epochs {
        order.shuffle(&mut rng);
        let (mut total, mut weight) = (0.0, 0.0);
        for batch in order.chunks(cfg.batch_size) {
            let owned: Vec<Sample> = batch
                .iter()
                .map(|&i| {
                    let s = &samples[i];
                    let mut input = s.input_f64();
                    if cfg.augment {
                        let angle = rng.random_range(-10.0..=10.0f64);
                        input = rotate(&input, rows, cols, angle);
                    }
                    s.as_sample(input)
                })
                .collect();
            let refs: Vec<&Sample> = owned.iter().collect();
            let (loss, grads, trace) = model.loss_and_grads(&refs, Mode::Train)?;
            if !loss.is_finite() || grads.iter().flatten().any(|g| !g.is_finite()) {
                return Err(Error::Numerical(format!("training diverged in epoch {}", epoch + 1)));
            }
            let n = refs.iter().map(|s| s.mask.iter().filter(|m| **m).count()).sum::<usize>() as f64;
            total += loss * n;
            weight += n;
            for ((p, v), g) in model.params.iter_mut().zip(&mut velocity).zip(&grads) {
                for k in 0..p.len() {
                    v[k] = cfg.momentum * v[k] - cfg.learning_rate * g[k];
                    p[k] += v[k];
                }
            }
            for (l, cache) in trace.bn.iter().enumerate() {
                if let Some(c) = cache {
                    let ch = c.mean.len();
                    let r = &mut model.running[l];
                    for k in 0..ch {
                        r[k] = (1.0 - BN_MOMENTUM) * r[k] + BN_MOMENTUM * c.mean[k];
                        r[ch + k] = (1.0 - BN_MOMENTUM) * r[ch + k] + BN_MOMENTUM * c.var[k];
                    }
                }
            }
        }
        let epoch_loss = if weight > 0.0 { total / weight } else { 0.0 };
        if !epoch_loss.is_finite() {
            return Err(Error::Numerical(format!("training diverged in epoch {}", epoch + 1)));
        }
        losses.push(epoch_loss);
    }
    Ok(TrainOutcome { model, losses })
}

/// Bilinear rotation about the image centre, zero outside.
pub fn rotate(img: &[f64], rows: usize, cols: usize, degrees: f64) -> Vec<f64> {
    let (s, c) = degrees.to_radians().sin_cos();
    let (cy, cx) = ((rows as f64 - 1.0) / 2.0, (cols as f64 - 1.0) / 2.0);
    let at = |y: isize, x: isize| {
        if y < 0 || x < 0 || y >= rows as isize || x >= cols as isize {
            0.0
        } else {
            img[y as usize * cols + x as usize]
        }
    };
    let mut out = vec![0.0; rows * cols];
    for y in 0..rows {
        for x in 0..cols {
            let (dy, dx) = (y as f64 - cy, x as f64 - cx);
            // Inverse mapping: sample the source at the rotated-back position.
            let sy = cy + c * dy - s * dx;
            let sx = cx + s * dy + c * dx;
            let (y0, x0) = (sy.floor(), sx.floor());
            let (fy, fx) = (sy - y0, sx - x0);
            let (y0, x0) = (y0 as isize, x0 as isize);
            out[y * cols + x] = (1.0 - fy) * ((1.0 - fx) * at(y0, x0) + fx * at(y0, x0 + 1))
                + fy * ((1.0 - fx) * at(y0 + 1, x0) + fx * at(y0 + 1, x0 + 1));
        }
    }
    out
}

/// Area-average resample to `out` dims followed by per-image standardisation
/// (zero mean, unit variance; a flat image becomes all zeros).
pub fn prepare_input(pixels: &[f64], rows: usize, cols: usize, out: (usize, usize)) -> Result<Vec<f64>> {
    if pixels.len() != rows * cols || rows == 0 || cols == 0 {
        return Err(Error::Dimension(format!("{} pixels for a {rows}x{cols} image", pixels.len())));
    }
    let (orows, ocols) = out;
    if orows == 0 || ocols == 0 || orows > rows || ocols > cols {
        return Err(Error::Dimension(format!("cannot resample {rows}x{cols} to {orows}x{ocols}")));
    }
    let mut v = vec![0.0; orows * ocols];
    for oy in 0..orows {
        let (y0, y1) = (oy * rows / orows, ((oy + 1) * rows / orows).max(oy * rows / orows + 1));
        for ox in 0..ocols {
            let (x0, x1) = (ox * cols / ocols, ((ox + 1) * cols / ocols).max(ox * cols / ocols + 1));
            let mut acc = 0.0;
            for y in y0..y1 {
                acc += pixels[y * cols + x0..y * cols + x1].iter().sum::<f64>();
            }
            v[oy * ocols + ox] = acc / ((y1 - y0) * (x1 - x0)) as f64;
        }
    }
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    let sd = (v.iter().map(|a| (a - mean).powi(2)).sum::<f64>() / n).sqrt();
    for a in &mut v {
        *a = if sd > 0.0 { (*a - mean) / sd } else { 0.0 };
    }
    Ok(v)
}

/// Planner predictor backed by a trained model.
pub struct LearnedRegressor<'a> {
    pub model: &'a RegressorModel,
}

impl Predictor for LearnedRegressor<'_> {
    fn needs_image(&self) -> bool {
        true
    }

    fn predict(&self, image: Option<&ProjectionImage>, _pose: &ViewAngles, _cfg: &PlannerConfig) -> Result<[f64; CANDIDATES]> {
        let image = image.ok_or_else(|| Error::Config("learned predictor needs the projection".into()))?;
        let input = prepare_input(&image.pixels, image.rows, image.cols, self.model.input_dims)?;
        self.model.forward(&input)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DatasetConfig {
    pub grid: PoseGrid,
    pub phantom: PhantomParams,
    pub placement: RoiPlacement,
    pub detector: DetectorGeometry,
    pub spectrum: Spectrum,
    pub table: AttenuationTable,
    /// Photons per pixel of the network inputs; node `k` of a simulation
    /// uses `fluences[k % len]`.
    pub fluences: Vec<f64>,
    pub input_dims: (usize, usize),
    pub delta_phi: f64,
    /// Number of simulations (the last ones) held out for testing.
    pub test_sims: usize,
    pub jobs: usize,
}

impl Default for DatasetConfig {
    fn default() -> Self {
        Self {
            grid: PoseGrid::default(),
            phantom: PhantomParams::default(),
            placement: RoiPlacement::ScrewCenters,
            detector: DetectorGeometry::desk(),
            spectrum: Spectrum::builtin(1e5).expect("builtin spectrum"),
            table: AttenuationTable::builtin(),
            fluences: vec![1e5],
            input_dims: (72, 96),
            delta_phi: 5.0,
            test_sims: 0,
            jobs: 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimulationRecord {
    pub sim_id: usize,
    pub phantom_seed: u64,
    pub noise_seed: u64,
    pub test: bool,
    /// Range of the detectability map used to normalise the targets.
    pub d2_min: f64,
    pub d2_max: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DatasetManifest {
    pub seed: u64,
    pub grid: PoseGrid,
    pub fluences: Vec<f64>,
    pub input_dims: (usize, usize),
    pub simulations: Vec<SimulationRecord>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub manifest: DatasetManifest,
    pub samples: Vec<TrainingSample>,
}

impl Dataset {
    fn split(&self, test: bool) -> Vec<TrainingSample> {
        let ids: Vec<usize> = self.manifest.simulations.iter().filter(|s| s.test == test).map(|s| s.sim_id).collect();
        self.samples.iter().filter(|s| ids.contains(&s.sim_id)).cloned().collect()
    }

    pub fn train_samples(&self) -> Vec<TrainingSample> {
        self.split(false)
    }

    pub fn test_samples(&self) -> Vec<TrainingSample> {
        self.split(true)
    }
}

/// SplitMix64 step, used to derive independent per-simulation seeds.
pub fn derive_seed(seed: u64, stream: u64) -> u64 {
    let mut z = seed.wrapping_add(stream.wrapping_add(1).wrapping_mul(0x9E37_79B9_7F4A_7C15));
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Normalised targets and mask of the node at (`phi`, `theta`).
pub fn node_targets(map: &DetectabilityMap, phi: f64, theta: f64, delta_phi: f64, lo: f64, hi: f64) -> ([f64; OUTPUTS], [bool; OUTPUTS]) {
    let (tmin, tmax) = (map.thetas()[0], *map.thetas().last().unwrap());
    let mut target = [0.0; OUTPUTS];
    let mut mask = [false; OUTPUTS];
    let span = hi - lo;
    for (i, off) in DEFAULT_OFFSETS.iter().enumerate() {
        let t = theta + off;
        if t < tmin - 1e-9 || t > tmax + 1e-9 {
            continue;
        }
        let d = map.interpolate(phi + delta_phi, t);
        target[i] = if span > 0.0 { (d - lo) / span } else { 0.0 };
        mask[i] = true;
    }
    (target, mask)
}

/// Simulate `n_sims` jittered phantoms: detectability labels on the pose grid
/// and one noisy input image per node.
pub fn generate_dataset(n_sims: usize, seed: u64, cfg: &DatasetConfig) -> Result<Dataset> {
    if n_sims < 1 {
        return Err(Error::Config("a dataset needs at least one simulation".into()));
    }
    if cfg.test_sims >= n_sims && n_sims > 1 {
        return Err(Error::Config("test simulations must leave some for training".into()));
    }
    if cfg.fluences.is_empty() {
        return Err(Error::Config("no fluence levels".into()));
    }
    cfg.grid.validate()?;
    let poses = cfg.grid.poses()?;
    let mut simulations = vec![];
    let mut samples = vec![];
    for sim_id in 0..n_sims {
        let phantom_seed = derive_seed(seed, 2 * sim_id as u64);
        let noise_seed = derive_seed(seed, 2 * sim_id as u64 + 1);
        let vol = build_phantom(&cfg.phantom, phantom_seed)?;
        let screws = cfg.phantom.jittered_screws(phantom_seed);
        let dcfg = DetectabilityConfig {
            detector: cfg.detector,
            ..DetectabilityConfig::for_screws(&vol, &screws, cfg.placement)?
        };
        let map = detectability_map_on(&vol, &cfg.grid, &dcfg, cfg.jobs)?;
        let lo = map.values().iter().cloned().fold(f64::INFINITY, f64::min);
        let hi = map.values().iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        for (k, pose) in poses.iter().enumerate() {
            let fluence = cfg.fluences[k % cfg.fluences.len()];
            let img = simulate_projection(&vol, *pose, &cfg.detector, &cfg.spectrum, &cfg.table, Some(fluence), noise_seed)?;
            let input = prepare_input(&img.pixels, img.rows, img.cols, cfg.input_dims)?;
            let (target, mask) = node_targets(&map, pose.phi(), pose.theta(), cfg.delta_phi, lo, hi);
            samples.push(TrainingSample { input: input.iter().map(|&v| v as f32).collect(), target, mask, pose: *pose, sim_id });
        }
        let test = n_sims > 1 && sim_id >= n_sims - cfg.test_sims;
        simulations.push(SimulationRecord { sim_id, phantom_seed, noise_seed, test, d2_min: lo, d2_max: hi });
    }
    let manifest = DatasetManifest { seed, grid: cfg.grid, fluences: cfg.fluences.clone(), input_dims: cfg.input_dims, simulations };
    Ok(Dataset { manifest, samples })
}
