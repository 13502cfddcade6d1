//! Stage II: conditional flow matching on core vectors.
//!
//! A velocity MLP `v(x, t)` is trained to regress `z - s` at the straight-line
//! interpolant `x_t = (1 - t) s + t z` between a (standardized) core `s` and
//! Gaussian noise `z`. New cores are drawn by integrating `dx/dt = v(x, t)`
//! backward from `t = 1` to `t = 0` with classic RK4.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::batch::MatrixBatch;
use crate::error::{shape_err, Error, Result};
use crate::linalg::Mat;
use crate::rng::{rng_stream, stream_id, tag, EpochSampler};
use crate::stage1::LossRecord;
use crate::stiefel::StiefelPair;

const STD_FLOOR: f64 = 1e-8;

/// Core vectors `s_i = vec(U^T M_i V)`, one per row, with column-stacked `vec`.
#[derive(Clone, Debug, PartialEq)]
pub struct CoreBatch {
    rank: usize,
    vectors: Mat,
}

impl CoreBatch {
    pub fn new(rank: usize, vectors: Mat) -> Result<Self> {
        if vectors.cols() != rank * rank {
            return Err(shape_err(format!(
                "core vectors have {} columns, rank {rank} needs {}",
                vectors.cols(),
                rank * rank
            )));
        }
        Ok(CoreBatch { rank, vectors })
    }

    pub fn rank(&self) -> usize {
        self.rank
    }

    pub fn dim(&self) -> usize {
        self.rank * self.rank
    }

    pub fn len(&self) -> usize {
        self.vectors.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.vectors.rows() == 0
    }

    pub fn vectors(&self) -> &Mat {
        &self.vectors
    }

    pub fn into_vectors(self) -> Mat {
        self.vectors
    }

    /// Core `i` as an `R x R` matrix.
    pub fn core(&self, i: usize) -> Mat {
        unvec(self.vectors.row(i), self.rank)
    }
}

/// Column-stacking `vec` of a square matrix.
pub fn vec(s: &Mat) -> Vec<f64> {
    let (r, c) = s.shape();
    let mut out = Vec::with_capacity(r * c);
    for j in 0..c {
        out.extend((0..r).map(|i| s[(i, j)]));
    }
    out
}

/// Inverse of [`vec`] for an `R x R` matrix.
pub fn unvec(v: &[f64], rank: usize) -> Mat {
    assert_eq!(v.len(), rank * rank, "vector length must be rank^2");
    Mat::from_fn(rank, rank, |i, j| v[j * rank + i])
}

pub fn extract_cores(batch: &MatrixBatch, pair: &StiefelPair) -> Result<CoreBatch> {
    extract_cores_from(batch.matrices(), pair)
}

pub fn extract_cores_from(matrices: &[Mat], pair: &StiefelPair) -> Result<CoreBatch> {
    let shape = pair.matrix_shape();
    if let Some(i) = matrices.iter().position(|m| m.shape() != shape) {
        return Err(shape_err(format!(
            "matrix {i} has shape {:?}, subspaces fit {:?}",
            matrices[i].shape(),
            shape
        )));
    }
    let r = pair.rank();
    let rows: Vec<Vec<f64>> = matrices
        .par_iter()
        .map(|m| vec(&pair.u.mat().t_matmul(&m.matmul(pair.v.mat()))))
        .collect();
    let data = rows.into_iter().flatten().collect();
    CoreBatch::new(r, Mat::from_vec(matrices.len(), r * r, data)?)
}

/// `M_i = U mat(s_i) V^T`.
pub fn decode(cores: &CoreBatch, pair: &StiefelPair) -> Result<MatrixBatch> {
    if cores.rank() != pair.rank() {
        return Err(shape_err(format!(
            "cores have rank {}, subspaces rank {}",
            cores.rank(),
            pair.rank()
        )));
    }
    let (m1, m2) = pair.matrix_shape();
    let mats: Vec<Mat> = (0..cores.len())
        .into_par_iter()
        .map(|i| pair.u.mat().matmul(&cores.core(i)).matmul_t(pair.v.mat()))
        .collect();
    MatrixBatch::new(m1, m2, mats)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FlowConfig {
    pub steps: usize,
    pub lr: f64,
    pub batch_size: usize,
    pub hidden: Vec<usize>,
    pub embed_width: usize,
    pub seed: u64,
    pub ode_steps: usize,
    pub log_stride: usize,
}

impl Default for FlowConfig {
    fn default() -> Self {
        FlowConfig {
            steps: 5000,
            lr: 3e-4,
            batch_size: 128,
            hidden: vec![128, 128],
            embed_width: 32,
            seed: 0,
            ode_steps: 101,
            log_stride: 1,
        }
    }
}

impl FlowConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(Error::InvalidConfig(
                "flow learning rate must be positive".into(),
            ));
        }
        if self.batch_size == 0 || self.log_stride == 0 {
            return Err(Error::InvalidConfig(
                "flow batch size and log stride must be >= 1".into(),
            ));
        }
        if self.hidden.contains(&0) {
            return Err(Error::InvalidConfig(
                "hidden layer sizes must be >= 1".into(),
            ));
        }
        if self.embed_width % 2 != 0 {
            return Err(Error::InvalidConfig(
                "time-embedding width must be even".into(),
            ));
        }
        if self.ode_steps < 2 {
            return Err(Error::InvalidConfig(
                "ODE grid needs at least 2 points".into(),
            ));
        }
        Ok(())
    }
}

/// Fully connected layer computing `x W + b` with `W` stored `in x out`.
#[derive(Clone, Debug, PartialEq)]
pub struct Dense {
    pub weight: Mat,
    pub bias: Vec<f64>,
}

impl Dense {
    fn apply(&self, x: &Mat) -> Mat {
        let mut y = x.matmul(&self.weight);
        for i in 0..y.rows() {
            for (v, b) in y.row_mut(i).iter_mut().zip(&self.bias) {
                *v += b;
            }
        }
        y
    }
}

fn sigmoid(z: f64) -> f64 {
    1.0 / (1.0 + (-z).exp())
}

fn silu(z: f64) -> f64 {
    z * sigmoid(z)
}

fn silu_prime(z: f64) -> f64 {
    let s = sigmoid(z);
    s * (1.0 + z * (1.0 - s))
}

/// Sinusoidal features `[sin(2 pi 2^k t), cos(2 pi 2^k t)]` for `k < width / 2`.
pub fn time_embedding(t: f64, width: usize) -> Vec<f64> {
    let mut out = Vec::with_capacity(width);
    for k in 0..width / 2 {
        let phase = 2.0 * std::f64::consts::PI * (1u64 << k) as f64 * t;
        out.push(phase.sin());
        out.push(phase.cos());
    }
    out
}

/// Velocity MLP with SiLU hidden activations, plus the per-coordinate
/// standardization of the data it was trained on.
///
/// A coordinate with `std == 0` is frozen: it was constant in the training
/// data, the MLP does not see it, its velocity is zero and it decodes to its
/// mean. The MLP input is `active + embed_width` wide and its output `active`.
#[derive(Clone, Debug, PartialEq)]
pub struct VelocityNet {
    dim: usize,
    active: Vec<usize>,
    embed_width: usize,
    layers: Vec<Dense>,
    mean: Vec<f64>,
    std: Vec<f64>,
}

/// Per-layer pre-activations and the layer inputs, kept for backprop.
struct Trace {
    inputs: Vec<Mat>,
    pre: Vec<Mat>,
}

impl VelocityNet {
    /// Glorot-uniform hidden layers, zero final layer, identity standardization.
    pub fn init(dim: usize, hidden: &[usize], embed_width: usize, seed: u64) -> Self {
        Self::init_standardized(vec![0.0; dim], vec![1.0; dim], hidden, embed_width, seed)
            .expect("identity standardization is valid")
    }

    /// Like [`VelocityNet::init`], sized for the non-frozen coordinates of `std`.
    pub fn init_standardized(
        mean: Vec<f64>,
        std: Vec<f64>,
        hidden: &[usize],
        embed_width: usize,
        seed: u64,
    ) -> Result<Self> {
        let dim = mean.len();
        let n_active = std.iter().filter(|&&s| s != 0.0).count();
        let mut rng = rng_stream(seed, stream_id(tag::FLOW_INIT, 0));
        let mut sizes = vec![n_active + embed_width];
        sizes.extend_from_slice(hidden);
        sizes.push(n_active);
        let n_layers = sizes.len() - 1;
        let layers = (0..n_layers)
            .map(|l| {
                let (fan_in, fan_out) = (sizes[l], sizes[l + 1]);
                let weight = if l + 1 == n_layers {
                    Mat::zeros(fan_in, fan_out)
                } else {
                    let a = (6.0 / (fan_in + fan_out) as f64).sqrt();
                    Mat::from_fn(fan_in, fan_out, |_, _| a * (2.0 * rng.uniform() - 1.0))
                };
                Dense {
                    weight,
                    bias: vec![0.0; fan_out],
                }
            })
            .collect();
        VelocityNet::from_layers(dim, embed_width, layers, mean, std)
    }

    /// Assembles a net from explicit layers, checking that sizes chain.
    pub fn from_layers(
        dim: usize,
        embed_width: usize,
        layers: Vec<Dense>,
        mean: Vec<f64>,
        std: Vec<f64>,
    ) -> Result<Self> {
        if layers.is_empty() {
            return Err(shape_err("velocity net needs at least one layer"));
        }
        if mean.len() != dim || std.len() != dim {
            return Err(shape_err("standardization vectors must have length dim"));
        }
        if std.iter().any(|&s| !(s >= 0.0 && s.is_finite())) || mean.iter().any(|m| !m.is_finite())
        {
            return Err(Error::InvalidData(
                "standardization must be finite with non-negative std".into(),
            ));
        }
        let active: Vec<usize> = (0..dim).filter(|&j| std[j] != 0.0).collect();
        let mut width = active.len() + embed_width;
        for (l, layer) in layers.iter().enumerate() {
            if layer.weight.rows() != width || layer.bias.len() != layer.weight.cols() {
                return Err(shape_err(format!(
                    "layer {l} does not chain (input width {width})"
                )));
            }
            if !layer.weight.is_finite() || layer.bias.iter().any(|b| !b.is_finite()) {
                return Err(Error::NonFinite(format!("layer {l} parameters")));
            }
            width = layer.weight.cols();
        }
        if width != active.len() {
            return Err(shape_err(format!(
                "output width {width} differs from {} active coordinates",
                active.len()
            )));
        }
        Ok(VelocityNet {
            dim,
            active,
            embed_width,
            layers,
            mean,
            std,
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn embed_width(&self) -> usize {
        self.embed_width
    }

    /// Indices of the coordinates the MLP models.
    pub fn active(&self) -> &[usize] {
        &self.active
    }

    pub fn layers(&self) -> &[Dense] {
        &self.layers
    }

    pub fn mean(&self) -> &[f64] {
        &self.mean
    }

    pub fn std(&self) -> &[f64] {
        &self.std
    }

    /// `[input, hidden..., output]` widths.
    pub fn layer_sizes(&self) -> Vec<usize> {
        let mut sizes = vec![self.active.len() + self.embed_width];
        sizes.extend(self.layers.iter().map(|l| l.weight.cols()));
        sizes
    }

    pub fn param_count(&self) -> usize {
        self.layers
            .iter()
            .map(|l| l.weight.rows() * l.weight.cols() + l.bias.len())
            .sum()
    }

    /// Flat parameters: per layer, `W` row-major then `b`.
    pub fn params(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.param_count());
        for l in &self.layers {
            out.extend_from_slice(l.weight.as_slice());
            out.extend_from_slice(&l.bias);
        }
        out
    }

    pub fn set_params(&mut self, params: &[f64]) -> Result<()> {
        if params.len() != self.param_count() {
            return Err(shape_err(format!(
                "{} parameters for an architecture with {}",
                params.len(),
                self.param_count()
            )));
        }
        let mut pos = 0;
        for l in &mut self.layers {
            let nw = l.weight.rows() * l.weight.cols();
            l.weight
                .as_mut_slice()
                .copy_from_slice(&params[pos..pos + nw]);
            pos += nw;
            let nb = l.bias.len();
            l.bias.copy_from_slice(&params[pos..pos + nb]);
            pos += nb;
        }
        Ok(())
    }

    pub fn set_standardization(&mut self, mean: Vec<f64>, std: Vec<f64>) -> Result<()> {
        let layers = std::mem::take(&mut self.layers);
        *self = VelocityNet::from_layers(self.dim, self.embed_width, layers, mean, std)?;
        Ok(())
    }

    /// Frozen coordinates map to 0.
    pub fn standardize(&self, x: &Mat) -> Mat {
        Mat::from_fn(x.rows(), x.cols(), |i, j| {
            if self.std[j] == 0.0 {
                0.0
            } else {
                (x[(i, j)] - self.mean[j]) / self.std[j]
            }
        })
    }

    pub fn destandardize(&self, x: &Mat) -> Mat {
        Mat::from_fn(x.rows(), x.cols(), |i, j| {
            x[(i, j)] * self.std[j] + self.mean[j]
        })
    }

    /// MLP input: the active columns of `x` followed by the time embedding.
    fn input(&self, x: &Mat, t: &[f64]) -> Mat {
        let w = self.active.len() + self.embed_width;
        let mut data = Vec::with_capacity(x.rows() * w);
        for (i, &ti) in t.iter().enumerate() {
            let row = x.row(i);
            data.extend(self.active.iter().map(|&j| row[j]));
            data.extend(time_embedding(ti, self.embed_width));
        }
        Mat::from_vec(x.rows(), w, data).expect("input width")
    }

    fn active_columns(&self, x: &Mat) -> Mat {
        Mat::from_fn(x.rows(), self.active.len(), |i, k| x[(i, self.active[k])])
    }

    fn scatter(&self, v: Mat) -> Mat {
        if self.active.len() == self.dim {
            return v;
        }
        let mut out = Mat::zeros(v.rows(), self.dim);
        for i in 0..v.rows() {
            for (k, &j) in self.active.iter().enumerate() {
                out[(i, j)] = v[(i, k)];
            }
        }
        out
    }

    fn run(&self, input: Mat, keep: bool) -> (Mat, Option<Trace>) {
        let mut trace = keep.then(|| Trace {
            inputs: Vec::new(),
            pre: Vec::new(),
        });
        let mut a = input;
        let last = self.layers.len() - 1;
        for (l, layer) in self.layers.iter().enumerate() {
            let z = layer.apply(&a);
            let next = if l == last {
                z.clone()
            } else {
                Mat::from_vec(
                    z.rows(),
                    z.cols(),
                    z.as_slice().iter().map(|&v| silu(v)).collect(),
                )
                .expect("same shape")
            };
            if let Some(tr) = trace.as_mut() {
                tr.inputs.push(a);
                tr.pre.push(z);
            }
            a = next;
        }
        (a, trace)
    }

    /// Velocity for a batch of states (rows of `x`) at per-row times `t`.
    pub fn forward_batch(&self, x: &Mat, t: &[f64]) -> Mat {
        assert_eq!(x.cols(), self.dim);
        assert_eq!(x.rows(), t.len());
        self.scatter(self.run(self.input(x, t), false).0)
    }

    pub fn forward(&self, x: &[f64], t: f64) -> Vec<f64> {
        let xm = Mat::from_vec(1, self.dim, x.to_vec()).expect("dim");
        self.forward_batch(&xm, &[t]).into_vec()
    }

    /// Parameter gradient given `dL/d(output)` for the traced batch.
    fn backward(&self, trace: &Trace, d_out: Mat) -> Vec<f64> {
        let mut grads: Vec<(Mat, Vec<f64>)> = Vec::with_capacity(self.layers.len());
        let mut dz = d_out;
        for l in (0..self.layers.len()).rev() {
            let gw = trace.inputs[l].t_matmul(&dz);
            let mut gb = vec![0.0; dz.cols()];
            for i in 0..dz.rows() {
                for (g, v) in gb.iter_mut().zip(dz.row(i)) {
                    *g += v;
                }
            }
            grads.push((gw, gb));
            if l > 0 {
                let da = dz.matmul_t(&self.layers[l].weight);
                let pre = &trace.pre[l - 1];
                dz = Mat::from_fn(da.rows(), da.cols(), |i, j| {
                    da[(i, j)] * silu_prime(pre[(i, j)])
                });
            }
        }
        let mut flat = Vec::with_capacity(self.param_count());
        for (gw, gb) in grads.into_iter().rev() {
            flat.extend_from_slice(gw.as_slice());
            flat.extend_from_slice(&gb);
        }
        flat
    }
}

/// A time-dependent vector field evaluated on a batch of states sharing one time.
pub trait VelocityField: Sync {
    fn dim(&self) -> usize;
    fn velocity(&self, x: &Mat, t: f64) -> Mat;
}

impl VelocityField for VelocityNet {
    fn dim(&self) -> usize {
        self.dim
    }

    fn velocity(&self, x: &Mat, t: f64) -> Mat {
        self.forward_batch(x, &vec![t; x.rows()])
    }
}

impl<F: Fn(&Mat, f64) -> Mat + Sync> VelocityField for (usize, F) {
    fn dim(&self) -> usize {
        self.0
    }

    fn velocity(&self, x: &Mat, t: f64) -> Mat {
        (self.1)(x, t)
    }
}

/// CFM loss `(1/B) sum ||v(x_t, t) - (z - s)||^2` over the active
/// coordinates, and its parameter gradient.
///
/// `s` must already be in the net's standardized coordinates.
pub fn cfm_loss_and_grad(
    net: &VelocityNet,
    s: &Mat,
    z: &Mat,
    t: &[f64],
) -> Result<(f64, Vec<f64>)> {
    if s.shape() != z.shape() || s.cols() != net.dim() || t.len() != s.rows() {
        return Err(shape_err(
            "cfm inputs must share batch size and net dimension",
        ));
    }
    let b = s.rows();
    let xt = Mat::from_fn(b, s.cols(), |i, j| {
        (1.0 - t[i]) * s[(i, j)] + t[i] * z[(i, j)]
    });
    let target = net.active_columns(&z.sub(s));
    let (out, trace) = net.run(net.input(&xt, t), true);
    let resid = out.sub(&target);
    let loss = resid.frob_norm_sq() / b as f64;
    if !loss.is_finite() {
        return Err(Error::NonFiniteLoss { step: 0 });
    }
    let grad = net.backward(&trace.expect("traced"), resid.scale(2.0 / b as f64));
    Ok((loss, grad))
}

/// Adam with bias correction.
#[derive(Clone, Debug)]
pub struct Adam {
    lr: f64,
    beta1: f64,
    beta2: f64,
    eps: f64,
    m: Vec<f64>,
    v: Vec<f64>,
    t: i32,
}

impl Adam {
    pub fn new(n: usize, lr: f64) -> Self {
        Adam {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            m: vec![0.0; n],
            v: vec![0.0; n],
            t: 0,
        }
    }

    pub fn step(&mut self, params: &mut [f64], grad: &[f64]) {
        self.t += 1;
        let c1 = 1.0 - self.beta1.powi(self.t);
        let c2 = 1.0 - self.beta2.powi(self.t);
        for (((p, g), m), v) in params
            .iter_mut()
            .zip(grad)
            .zip(&mut self.m)
            .zip(&mut self.v)
        {
            *m = self.beta1 * *m + (1.0 - self.beta1) * g;
            *v = self.beta2 * *v + (1.0 - self.beta2) * g * g;
            *p -= self.lr * (*m / c1) / ((*v / c2).sqrt() + self.eps);
        }
    }
}

/// Per-coordinate mean and population std (floored) of the rows of `x`.
pub fn column_standardization(x: &Mat) -> (Vec<f64>, Vec<f64>) {
    let n = x.rows().max(1) as f64;
    let mut mean = vec![0.0; x.cols()];
    for i in 0..x.rows() {
        for (m, v) in mean.iter_mut().zip(x.row(i)) {
            *m += v;
        }
    }
    mean.iter_mut().for_each(|m| *m /= n);
    let mut var = vec![0.0; x.cols()];
    for i in 0..x.rows() {
        for ((s, v), m) in var.iter_mut().zip(x.row(i)).zip(&mean) {
            *s += (v - m) * (v - m);
        }
    }
    let std = var.iter().map(|s| (s / n).sqrt().max(STD_FLOOR)).collect();
    (mean, std)
}

/// Relative spread below which a training coordinate counts as constant.
pub const CONSTANT_REL_TOL: f64 = 1e-8;

/// [`column_standardization`], with `std = 0` marking coordinates whose
/// spread is at most `CONSTANT_REL_TOL` times the largest one.
pub fn flow_standardization(x: &Mat) -> (Vec<f64>, Vec<f64>) {
    let (mean, floored) = column_standardization(x);
    let n = x.rows().max(1) as f64;
    let raw: Vec<f64> = (0..x.cols())
        .map(|j| {
            ((0..x.rows())
                .map(|i| (x[(i, j)] - mean[j]).powi(2))
                .sum::<f64>()
                / n)
                .sqrt()
        })
        .collect();
    let cut = CONSTANT_REL_TOL * raw.iter().cloned().fold(0.0, f64::max);
    let std = raw
        .iter()
        .zip(floored)
        .map(|(&r, f)| if r <= cut { 0.0 } else { f })
        .collect();
    (mean, std)
}

#[derive(Clone, Debug)]
pub struct FlowOutput {
    pub net: VelocityNet,
    pub trace: Vec<LossRecord>,
}

/// Trains a velocity net on the rows of `data` (any dimension).
pub fn train_flow_on(data: &Mat, cfg: &FlowConfig) -> Result<FlowOutput> {
    cfg.validate()?;
    if data.rows() < cfg.batch_size {
        return Err(Error::BatchTooSmall {
            needed: cfg.batch_size,
            got: data.rows(),
        });
    }
    if !data.is_finite() {
        return Err(Error::NonFinite("training data".into()));
    }
    let d = data.cols();
    let (mean, std) = flow_standardization(data);
    let mut net =
        VelocityNet::init_standardized(mean, std, &cfg.hidden, cfg.embed_width, cfg.seed)?;
    let x = net.standardize(data);
    let mut sampler = EpochSampler::new(
        x.rows(),
        cfg.batch_size,
        rng_stream(cfg.seed, stream_id(tag::FLOW_TRAIN, 0)),
    );
    let mut rng = rng_stream(cfg.seed, stream_id(tag::FLOW_TRAIN, 1));
    let mut params = net.params();
    let mut adam = Adam::new(params.len(), cfg.lr);
    let mut trace = Vec::new();
    for step in 0..cfg.steps {
        let idx = sampler.next_batch();
        let b = idx.len();
        let s = Mat::from_fn(b, d, |i, j| x[(idx[i], j)]);
        let mut zdata = vec![0.0; b * d];
        rng.fill_normal(&mut zdata);
        let z = Mat::from_vec(b, d, zdata)?;
        let t: Vec<f64> = (0..b).map(|_| rng.uniform()).collect();
        let (loss, grad) = cfm_loss_and_grad(&net, &s, &z, &t).map_err(|e| match e {
            Error::NonFiniteLoss { .. } => Error::NonFiniteLoss { step },
            other => other,
        })?;
        if step % cfg.log_stride == 0 {
            trace.push(LossRecord { step, loss });
        }
        adam.step(&mut params, &grad);
        net.set_params(&params)?;
    }
    if !params.iter().all(|p| p.is_finite()) {
        return Err(Error::NonFiniteLoss { step: cfg.steps });
    }
    Ok(FlowOutput { net, trace })
}

pub fn train_flow(cores: &CoreBatch, cfg: &FlowConfig) -> Result<FlowOutput> {
    train_flow_on(cores.vectors(), cfg)
}

/// Integrates `dx/dt = v(x, t)` from `t = 1` to `t = 0` with RK4 on a uniform
/// grid of `grid_points` times including both endpoints.
pub fn integrate_backward<F: VelocityField + ?Sized>(
    field: &F,
    x1: Mat,
    grid_points: usize,
) -> Result<Mat> {
    assert!(grid_points >= 2);
    let n_int = grid_points - 1;
    let h = -1.0 / n_int as f64;
    let mut x = x1;
    for k in 0..n_int {
        let t = 1.0 - k as f64 / n_int as f64;
        let k1 = field.velocity(&x, t);
        let mut probe = x.clone();
        probe.axpy(0.5 * h, &k1);
        let k2 = field.velocity(&probe, t + 0.5 * h);
        let mut probe = x.clone();
        probe.axpy(0.5 * h, &k2);
        let k3 = field.velocity(&probe, t + 0.5 * h);
        let mut probe = x.clone();
        probe.axpy(h, &k3);
        let k4 = field.velocity(&probe, t + h);
        let mut incr = k1;
        incr.axpy(2.0, &k2);
        incr.axpy(2.0, &k3);
        incr.axpy(1.0, &k4);
        x.axpy(h / 6.0, &incr);
        if !x.is_finite() {
            return Err(Error::NonFiniteState { step: k + 1 });
        }
    }
    Ok(x)
}

const SAMPLE_CHUNK: usize = 64;

/// Draws `n` samples in data coordinates. Trajectory `i` uses its own noise
/// stream, so results do not depend on `n` or on threading.
pub fn sample_flow(net: &VelocityNet, n: usize, grid_points: usize, seed: u64) -> Result<Mat> {
    if grid_points < 2 {
        return Err(Error::InvalidConfig(
            "ODE grid needs at least 2 points".into(),
        ));
    }
    let d = net.dim();
    let chunks: Vec<(usize, usize)> = (0..n)
        .step_by(SAMPLE_CHUNK)
        .map(|s| (s, (s + SAMPLE_CHUNK).min(n)))
        .collect();
    let parts: Vec<Result<Mat>> = chunks
        .par_iter()
        .map(|&(lo, hi)| {
            let mut data = vec![0.0; (hi - lo) * d];
            for (i, row) in data.chunks_mut(d.max(1)).enumerate() {
                rng_stream(seed, stream_id(tag::FLOW_SAMPLE, (lo + i) as u64)).fill_normal(row);
            }
            let z = Mat::from_vec(hi - lo, d, data)?;
            integrate_backward(net, z, grid_points)
        })
        .collect();
    let mut data = Vec::with_capacity(n * d);
    for p in parts {
        data.extend(p?.into_vec());
    }
    Ok(net.destandardize(&Mat::from_vec(n, d, data)?))
}

pub fn sample_cores(net: &VelocityNet, n: usize, cfg: &FlowConfig, seed: u64) -> Result<CoreBatch> {
    let rank = (net.dim() as f64).sqrt().round() as usize;
    if rank * rank != net.dim() {
        return Err(shape_err(format!(
            "net dimension {} is not a perfect square",
            net.dim()
        )));
    }
    CoreBatch::new(rank, sample_flow(net, n, cfg.ode_steps, seed)?)
}
