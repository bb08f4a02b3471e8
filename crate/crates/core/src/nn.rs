//! Small differentiable building blocks: dense networks with analytic
//! backward passes, the logistic ("Gumbel-sigmoid") relaxation of Bernoulli
//! sampling, an Adam optimizer and a central finite-difference checker.

use std::fs;
use std::io::Write;
use std::path::Path;

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::data::sigmoid;
use crate::error::{shape, Error, Result};
use crate::rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Identity,
    Sigmoid,
    Tanh,
    Relu,
}

impl Activation {
    #[inline]
    fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Identity => x,
            Activation::Sigmoid => sigmoid(x),
            Activation::Tanh => x.tanh(),
            Activation::Relu => x.max(0.0),
        }
    }

    /// Derivative from the pre-activation `x` and output `y`.
    #[inline]
    fn derivative(self, x: f64, y: f64) -> f64 {
        match self {
            Activation::Identity => 1.0,
            Activation::Sigmoid => y * (1.0 - y),
            Activation::Tanh => 1.0 - y * y,
            Activation::Relu => {
                if x > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
        }
    }

    fn code(self) -> u8 {
        match self {
            Activation::Identity => 0,
            Activation::Sigmoid => 1,
            Activation::Tanh => 2,
            Activation::Relu => 3,
        }
    }

    fn from_code(c: u8) -> Result<Self> {
        Ok(match c {
            0 => Activation::Identity,
            1 => Activation::Sigmoid,
            2 => Activation::Tanh,
            3 => Activation::Relu,
            _ => return Err(Error::Format(format!("unknown activation code {c}"))),
        })
    }
}

/// Stack of affine layers with elementwise activations. All parameters live
/// in one flat vector: per layer, a row-major `out x in` weight block
/// followed by the `out` biases.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseNet {
    dims: Vec<usize>,
    acts: Vec<Activation>,
    offsets: Vec<usize>,
    pub params: Vec<f64>,
}

/// Intermediate values of one forward pass.
#[derive(Debug, Clone)]
pub struct Trace {
    /// `values[0]` is the input, `values[l + 1]` the output of layer `l`.
    pub values: Vec<Vec<f64>>,
    pre: Vec<Vec<f64>>,
}

impl Trace {
    pub fn output(&self) -> &[f64] {
        self.values.last().unwrap()
    }
}

impl DenseNet {
    /// Zero-initialized network with layer widths `dims` and one activation
    /// per layer.
    pub fn new(dims: &[usize], acts: &[Activation]) -> Result<Self> {
        if dims.len() < 2 || acts.len() != dims.len() - 1 {
            return Err(Error::Config(format!(
                "network needs n+1 widths for n activations, got {} and {}",
                dims.len(),
                acts.len()
            )));
        }
        if dims.iter().any(|&d| d == 0) {
            return Err(Error::Config("network widths must be >= 1".into()));
        }
        let mut offsets = vec![0];
        for w in dims.windows(2) {
            offsets.push(offsets.last().unwrap() + w[0] * w[1] + w[1]);
        }
        let total = *offsets.last().unwrap();
        Ok(Self {
            dims: dims.to_vec(),
            acts: acts.to_vec(),
            offsets,
            params: vec![0.0; total],
        })
    }

    /// Hidden layers with `hidden` activation and an identity output layer,
    /// weights drawn with variance `gain / fan_in`.
    pub fn mlp<R: Rng + ?Sized>(
        input: usize,
        hidden: &[usize],
        output: usize,
        act: Activation,
        rng: &mut R,
    ) -> Result<Self> {
        let mut dims = vec![input];
        dims.extend_from_slice(hidden);
        dims.push(output);
        let mut acts = vec![act; hidden.len()];
        acts.push(Activation::Identity);
        let mut net = Self::new(&dims, &acts)?;
        net.init(rng);
        Ok(net)
    }

    pub fn init<R: Rng + ?Sized>(&mut self, rng: &mut R) {
        for l in 0..self.acts.len() {
            let (fan_in, fan_out) = (self.dims[l], self.dims[l + 1]);
            let gain = if self.acts[l] == Activation::Relu { 2.0 } else { 1.0 };
            let normal = Normal::new(0.0, (gain / fan_in as f64).sqrt()).unwrap();
            let off = self.offsets[l];
            for w in &mut self.params[off..off + fan_in * fan_out] {
                *w = normal.sample(rng);
            }
            for b in &mut self.params[off + fan_in * fan_out..self.offsets[l + 1]] {
                *b = 0.0;
            }
        }
    }

    pub fn input_width(&self) -> usize {
        self.dims[0]
    }

    pub fn output_width(&self) -> usize {
        *self.dims.last().unwrap()
    }

    pub fn n_params(&self) -> usize {
        self.params.len()
    }

    pub fn dims(&self) -> &[usize] {
        &self.dims
    }

    pub fn activations(&self) -> &[Activation] {
        &self.acts
    }

    pub fn forward(&self, x: &[f64]) -> Result<Vec<f64>> {
        Ok(self.forward_trace(x)?.values.pop().unwrap())
    }

    pub fn forward_trace(&self, x: &[f64]) -> Result<Trace> {
        if x.len() != self.dims[0] {
            return Err(shape("network input", self.dims[0], x.len()));
        }
        let mut values = Vec::with_capacity(self.dims.len());
        let mut pre = Vec::with_capacity(self.acts.len());
        values.push(x.to_vec());
        for l in 0..self.acts.len() {
            let (n_in, n_out) = (self.dims[l], self.dims[l + 1]);
            let off = self.offsets[l];
            let w = &self.params[off..off + n_in * n_out];
            let b = &self.params[off + n_in * n_out..self.offsets[l + 1]];
            let input = values.last().unwrap();
            let z: Vec<f64> = (0..n_out)
                .map(|o| {
                    let row = &w[o * n_in..(o + 1) * n_in];
                    b[o] + row.iter().zip(input).map(|(a, x)| a * x).sum::<f64>()
                })
                .collect();
            let act = self.acts[l];
            values.push(z.iter().map(|&v| act.apply(v)).collect());
            pre.push(z);
        }
        Ok(Trace { values, pre })
    }

    /// Accumulates parameter gradients into `grads` and returns the gradient
    /// with respect to the input.
    pub fn backward_into(&self, trace: &Trace, upstream: &[f64], grads: &mut [f64]) -> Result<Vec<f64>> {
        if upstream.len() != self.output_width() {
            return Err(shape("upstream gradient", self.output_width(), upstream.len()));
        }
        if grads.len() != self.params.len() {
            return Err(shape("gradient buffer", self.params.len(), grads.len()));
        }
        let mut delta: Vec<f64> = upstream.to_vec();
        for l in (0..self.acts.len()).rev() {
            let (n_in, n_out) = (self.dims[l], self.dims[l + 1]);
            let act = self.acts[l];
            for (d, (x, y)) in delta.iter_mut().zip(trace.pre[l].iter().zip(&trace.values[l + 1])) {
                *d *= act.derivative(*x, *y);
            }
            let off = self.offsets[l];
            let input = &trace.values[l];
            let (gw, gb) = grads[off..self.offsets[l + 1]].split_at_mut(n_in * n_out);
            for o in 0..n_out {
                let d = delta[o];
                if d == 0.0 {
                    continue;
                }
                gb[o] += d;
                for (g, x) in gw[o * n_in..(o + 1) * n_in].iter_mut().zip(input) {
                    *g += d * x;
                }
            }
            let w = &self.params[off..off + n_in * n_out];
            let mut next = vec![0.0; n_in];
            for o in 0..n_out {
                let d = delta[o];
                if d == 0.0 {
                    continue;
                }
                for (n, a) in next.iter_mut().zip(&w[o * n_in..(o + 1) * n_in]) {
                    *n += d * a;
                }
            }
            delta = next;
        }
        Ok(delta)
    }

    /// `(parameter gradients, input gradient)` for one example.
    pub fn backward(&self, trace: &Trace, upstream: &[f64]) -> Result<(Vec<f64>, Vec<f64>)> {
        let mut grads = vec![0.0; self.params.len()];
        let input = self.backward_into(trace, upstream, &mut grads)?;
        Ok((grads, input))
    }
}

const NET_MAGIC: &[u8; 8] = b"CALONET\0";
const NET_VERSION: u32 = 1;

/// Writes a list of networks: magic, version, network count, then per
/// network its layer count, widths, activation codes and little-endian f64
/// parameters.
pub fn write_networks(nets: &[&DenseNet], path: impl AsRef<Path>) -> Result<()> {
    let mut buf = Vec::new();
    buf.extend_from_slice(NET_MAGIC);
    buf.extend_from_slice(&NET_VERSION.to_le_bytes());
    buf.extend_from_slice(&(nets.len() as u32).to_le_bytes());
    for net in nets {
        buf.extend_from_slice(&(net.acts.len() as u32).to_le_bytes());
        for &d in &net.dims {
            buf.extend_from_slice(&(d as u32).to_le_bytes());
        }
        buf.extend(net.acts.iter().map(|a| a.code()));
        for p in &net.params {
            buf.extend_from_slice(&p.to_le_bytes());
        }
    }
    fs::File::create(path)?.write_all(&buf)?;
    Ok(())
}

pub fn read_networks(path: impl AsRef<Path>) -> Result<Vec<DenseNet>> {
    let bytes = fs::read(path)?;
    let mut cur = Cursor { bytes: &bytes, pos: 0 };
    if cur.take(8)? != NET_MAGIC {
        return Err(Error::Format("network checkpoint: missing magic".into()));
    }
    let version = cur.u32()?;
    if version != NET_VERSION {
        return Err(Error::Format(format!("network checkpoint: unsupported version {version}")));
    }
    let count = cur.u32()? as usize;
    let mut nets = Vec::with_capacity(count.min(1024));
    for _ in 0..count {
        let layers = cur.u32()? as usize;
        let dims = (0..=layers).map(|_| cur.u32().map(|d| d as usize)).collect::<Result<Vec<_>>>()?;
        let acts = cur
            .take(layers)?
            .iter()
            .map(|&c| Activation::from_code(c))
            .collect::<Result<Vec<_>>>()?;
        let mut net = DenseNet::new(&dims, &acts).map_err(|e| Error::Format(e.to_string()))?;
        let raw = cur.take(8 * net.params.len())?;
        for (p, c) in net.params.iter_mut().zip(raw.chunks_exact(8)) {
            *p = f64::from_le_bytes(c.try_into().unwrap());
        }
        nets.push(net);
    }
    if cur.pos != bytes.len() {
        return Err(Error::Format("network checkpoint: trailing bytes".into()));
    }
    Ok(nets)
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.bytes.len() - self.pos < n {
            return Err(Error::Format("network checkpoint: truncated".into()));
        }
        let out = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(out)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }
}

/// Relaxation settings. `slope` multiplies the noisy logit before the
/// sigmoid; large slopes approach hard Bernoulli samples.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GumbelConfig {
    pub slope: f64,
    /// Emit `1[z > 0.5]` as the forward value (straight-through).
    pub hard: bool,
}

const Z_MIN: f64 = 1e-16;
const Z_MAX: f64 = 1.0 - f64::EPSILON / 2.0;

/// Logistic noise `ln u - ln(1 - u)`.
#[inline]
pub fn logistic_noise(u: f64) -> f64 {
    u.ln() - (-u).ln_1p()
}

/// `sigmoid(slope * (logit + noise))`, kept inside the open unit interval.
#[inline]
pub fn relax(logit: f64, noise: f64, slope: f64) -> f64 {
    sigmoid(slope * (logit + noise)).clamp(Z_MIN, Z_MAX)
}

/// `d relax / d logit` in terms of the relaxed value.
#[inline]
pub fn relax_grad(z: f64, slope: f64) -> f64 {
    slope * z * (1.0 - z)
}

#[derive(Debug, Clone, PartialEq)]
pub struct GumbelSample {
    pub noise: Vec<f64>,
    pub relaxed: Vec<f64>,
    /// Forward value: `relaxed`, or its thresholded copy in hard mode.
    pub value: Vec<f64>,
}

/// Relaxed Bernoulli samples for `logits` with explicit noise.
pub fn gumbel_with_noise(logits: &[f64], noise: &[f64], cfg: &GumbelConfig) -> GumbelSample {
    let relaxed: Vec<f64> = logits
        .iter()
        .zip(noise)
        .map(|(l, g)| relax(*l, *g, cfg.slope))
        .collect();
    let value = if cfg.hard {
        relaxed.iter().map(|&z| if z > 0.5 { 1.0 } else { 0.0 }).collect()
    } else {
        relaxed.clone()
    };
    GumbelSample {
        noise: noise.to_vec(),
        relaxed,
        value,
    }
}

pub fn draw_noise<R: Rng + ?Sized>(n: usize, rng: &mut R) -> Vec<f64> {
    (0..n).map(|_| logistic_noise(rng::open01(rng))).collect()
}

pub fn gumbel_bernoulli<R: Rng + ?Sized>(logits: &[f64], cfg: &GumbelConfig, rng: &mut R) -> GumbelSample {
    let noise = draw_noise(logits.len(), rng);
    gumbel_with_noise(logits, &noise, cfg)
}

/// Adam with bias correction.
#[derive(Debug, Clone)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    m: Vec<f64>,
    v: Vec<f64>,
    t: u64,
}

impl Adam {
    pub fn new(n_params: usize, lr: f64) -> Self {
        Self {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            m: vec![0.0; n_params],
            v: vec![0.0; n_params],
            t: 0,
        }
    }

    pub fn step(&mut self, params: &mut [f64], grads: &[f64]) {
        self.t += 1;
        let c1 = 1.0 - self.beta1.powi(self.t as i32);
        let c2 = 1.0 - self.beta2.powi(self.t as i32);
        for (((p, g), m), v) in params.iter_mut().zip(grads).zip(&mut self.m).zip(&mut self.v) {
            *m = self.beta1 * *m + (1.0 - self.beta1) * g;
            *v = self.beta2 * *v + (1.0 - self.beta2) * g * g;
            *p -= self.lr * (*m / c1) / ((*v / c2).sqrt() + self.eps);
        }
    }
}

/// Floor of the relative-error denominator in [`finite_diff_check`], as a
/// fraction of the largest analytic component (at least 1).
pub const FD_ABS_FLOOR: f64 = 1e-6;

/// Largest relative difference between `analytic` and central differences
/// of `f` at `params`. The denominator is
/// `max(|analytic|, |numeric|, FD_ABS_FLOOR * max(1, max_j |analytic_j|))`,
/// so components far below the gradient's scale are compared in absolute
/// terms instead of against round-off.
pub fn finite_diff_check<F>(mut f: F, analytic: &[f64], params: &[f64], eps: f64) -> Result<f64>
where
    F: FnMut(&[f64]) -> f64,
{
    if !(eps > 0.0) {
        return Err(Error::Config(format!("finite-difference step must be > 0, got {eps}")));
    }
    if analytic.len() != params.len() {
        return Err(shape("analytic gradient", params.len(), analytic.len()));
    }
    let scale = analytic.iter().fold(1.0f64, |m, a| m.max(a.abs()));
    let floor = FD_ABS_FLOOR * scale;
    let mut theta = params.to_vec();
    let mut worst = 0.0f64;
    for i in 0..theta.len() {
        let orig = theta[i];
        theta[i] = orig + eps;
        let up = f(&theta);
        theta[i] = orig - eps;
        let down = f(&theta);
        theta[i] = orig;
        let numeric = (up - down) / (2.0 * eps);
        let a = analytic[i];
        let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(floor);
        worst = worst.max(rel);
    }
    Ok(worst)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identity_net() {
        let mut net = DenseNet::new(&[3, 3], &[Activation::Identity]).unwrap();
        for i in 0..3 {
            net.params[i * 3 + i] = 1.0;
        }
        assert_eq!(net.forward(&[1.0, -2.0, 0.5]).unwrap(), vec![1.0, -2.0, 0.5]);
        assert!(matches!(net.forward(&[1.0]), Err(Error::Shape { .. })));
    }

    #[test]
    fn sigmoid_unit() {
        let net = DenseNet::new(&[1, 1], &[Activation::Sigmoid]).unwrap();
        let t = net.forward_trace(&[2.0]).unwrap();
        assert_eq!(t.output(), &[0.5]);
        let (g, _) = net.backward(&t, &[1.0]).unwrap();
        assert_eq!(g[1], 0.25);
    }

    #[test]
    fn three_layer_gradients() {
        let mut rng = rng::seeded(4);
        for act in [Activation::Tanh, Activation::Sigmoid, Activation::Relu] {
            let mut net = DenseNet::new(&[5, 7, 6, 3], &[act, act, Activation::Sigmoid]).unwrap();
            net.init(&mut rng);
            for b in net.params.iter_mut() {
                *b += 0.05;
            }
            let x: Vec<f64> = (0..5).map(|i| 0.3 * i as f64 - 0.6).collect();
            let up = [0.7, -1.1, 0.4];
            let t = net.forward_trace(&x).unwrap();
            let (g, gx) = net.backward(&t, &up).unwrap();
            let loss = |p: &[f64]| {
                let mut n = net.clone();
                n.params.copy_from_slice(p);
                n.forward(&x).unwrap().iter().zip(&up).map(|(y, u)| y * u).sum::<f64>()
            };
            assert!(finite_diff_check(loss, &g, &net.params, 1e-5).unwrap() < 1e-4);
            let loss_x = |xi: &[f64]| net.forward(xi).unwrap().iter().zip(&up).map(|(y, u)| y * u).sum::<f64>();
            assert!(finite_diff_check(loss_x, &gx, &x, 1e-5).unwrap() < 1e-4);
        }
    }

    #[test]
    fn finite_diff_closed_forms() {
        let err = finite_diff_check(|p| 3.0 * p[0] - 2.0 * p[1] + 1.0, &[3.0, -2.0], &[0.4, 1.3], 1e-3).unwrap();
        assert!(err < 1e-10);
        let d = ((3.001f64).powi(2) - (2.999f64).powi(2)) / 2e-3;
        assert!((d - 6.0).abs() < 1e-6);
        assert!(finite_diff_check(|p| p[0] * p[0], &[6.0], &[3.0], 1e-3).unwrap() < 1e-9);
        assert!(finite_diff_check(|p| p[0], &[1.0], &[0.0], 0.0).is_err());
    }

    #[test]
    fn median_noise_gives_plain_sigmoid() {
        assert_eq!(logistic_noise(0.5), 0.0);
        for s in [1.0, 5.0, 500.0] {
            let z = gumbel_with_noise(&[0.0], &[0.0], &GumbelConfig { slope: s, hard: false });
            assert_eq!(z.value, vec![0.5]);
        }
        let z = gumbel_with_noise(&[0.3], &[0.0], &GumbelConfig { slope: 5.0, hard: false });
        assert!((z.value[0] - sigmoid(1.5)).abs() < 1e-15);
    }

    #[test]
    fn hard_samples_follow_logistic_cdf() {
        let mut rng = rng::seeded(10);
        for l in [-1.5, 0.0, 0.8] {
            for s in [1.0, 50.0] {
                let cfg = GumbelConfig { slope: s, hard: true };
                let logits = vec![l; 100_000];
                let z = gumbel_bernoulli(&logits, &cfg, &mut rng);
                assert!(z.value.iter().all(|v| *v == 0.0 || *v == 1.0));
                let mean = z.value.iter().sum::<f64>() / 1e5;
                assert!((mean - sigmoid(l)).abs() < 0.01, "l={l} s={s} mean={mean}");
            }
        }
    }

    #[test]
    fn high_slope_saturates() {
        let mut rng = rng::seeded(11);
        let cfg = GumbelConfig { slope: 500.0, hard: false };
        let z = gumbel_bernoulli(&vec![1.0; 100_000], &cfg, &mut rng);
        let near = z.relaxed.iter().filter(|&&v| v < 1e-3 || v > 1.0 - 1e-3).count();
        assert!(near as f64 >= 0.99 * 1e5);
    }

    #[test]
    fn relaxed_values_stay_open() {
        for &l in &[-50.0, -1.0, 0.0, 1.0, 50.0] {
            for &s in &[1e-3, 1.0, 1000.0] {
                for &g in &[-40.0, 0.0, 40.0] {
                    let z = relax(l, g, s);
                    assert!(z > 0.0 && z < 1.0 && z.is_finite());
                    assert!(relax_grad(z, s).is_finite());
                }
            }
        }
    }

    #[test]
    fn adam_minimizes_quadratic() {
        let mut p = vec![3.0, -2.0];
        let mut opt = Adam::new(2, 0.05);
        for _ in 0..2000 {
            let g = vec![2.0 * p[0], 2.0 * p[1]];
            opt.step(&mut p, &g);
        }
        assert!(p[0].abs() < 1e-3 && p[1].abs() < 1e-3);
    }

    #[test]
    fn checkpoint_round_trip() {
        let mut rng = rng::seeded(1);
        let a = DenseNet::mlp(4, &[6], 2, Activation::Relu, &mut rng).unwrap();
        let b = DenseNet::mlp(3, &[5, 5], 1, Activation::Tanh, &mut rng).unwrap();
        let dir = std::env::temp_dir().join(format!("calovae-nn-{}", std::process::id()));
        fs::create_dir_all(&dir).unwrap();
        let path = dir.join("nets.bin");
        write_networks(&[&a, &b], &path).unwrap();
        assert_eq!(read_networks(&path).unwrap(), vec![a, b]);
        let bytes = fs::read(&path).unwrap();
        fs::write(&path, &bytes[..bytes.len() - 3]).unwrap();
        assert!(matches!(read_networks(&path), Err(Error::Format(_))));
    }
}
