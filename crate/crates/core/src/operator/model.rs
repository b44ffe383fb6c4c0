use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{retained_modes, Layout, OperatorConfig};
use crate::ecf::ConservationMask;
use crate::error::{EcfError, Result};
use crate::grid::{GridField, GridSpec};
use crate::spectral::{plan_for, FftPlan};

const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2 / pi)
const GELU_A: f64 = 0.044_715;

/// `0.5 x (1 + tanh(sqrt(2/pi) (x + 0.044715 x^3)))`
pub fn gelu(x: f64) -> f64 {
    0.5 * x * (1.0 + gelu_tanh(x))
}

pub fn gelu_prime(x: f64) -> f64 {
    gelu_prime_from(x, gelu_tanh(x))
}

fn gelu_tanh(x: f64) -> f64 {
    // tanh(u) = 1 - 2 / (exp(2u) + 1); cheaper than libm tanh and exact at +-inf.
    let e = (2.0 * GELU_C * (x + GELU_A * x * x * x)).exp();
    1.0 - 2.0 / (e + 1.0)
}

/// Derivative given the cached `tanh` term.
fn gelu_prime_from(x: f64, t: f64) -> f64 {
    0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * GELU_C * (1.0 + 3.0 * GELU_A * x * x)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossKind {
    #[default]
    Mae,
    Mse,
}

impl LossKind {
    /// Loss of one entry and its derivative with respect to the prediction.
    /// The MAE subgradient at zero is 0.
    fn eval(self, diff: f64) -> (f64, f64) {
        match self {
            LossKind::Mae => {
                let g = if diff > 0.0 {
                    1.0
                } else if diff < 0.0 {
                    -1.0
                } else {
                    0.0
                };
                (diff.abs(), g)
            }
            LossKind::Mse => (diff * diff, 2.0 * diff),
        }
    }
}

/// One-step predictor `u^t -> u^{t+1}`.
pub trait Surrogate: Sync {
    fn predict(&self, state: &GridField) -> Result<GridField>;
}

#[derive(Debug, Clone, PartialEq)]
pub struct OperatorModel {
    config: OperatorConfig,
    dims: usize,
    layout: Layout,
    params: Vec<f64>,
}

/// Mode bookkeeping for one grid: flat bins of the retained half-set and of
/// their negatives.
struct ModePlan {
    pos: Vec<usize>,
    neg: Vec<usize>,
    /// Last-axis bins touched by the retained modes.
    cols: Vec<usize>,
    fft: std::sync::Arc<FftPlan>,
    n: usize,
}

impl ModePlan {
    fn new(grid: &GridSpec, modes: usize) -> Result<Self> {
        let half = retained_modes(grid.dims(), modes);
        let pos = half.iter().map(|m| m.flat(grid)).collect::<Result<Vec<_>>>()?;
        let neg = half
            .iter()
            .map(|m| {
                let c: Vec<i64> = m.components().iter().map(|x| -x).collect();
                crate::spectral::ModeIndex::new(&c).flat(grid)
            })
            .collect::<Result<Vec<_>>>()?;
        let inner = grid.inner();
        let mut cols: Vec<usize> = pos.iter().chain(&neg).map(|f| f % inner).collect();
        cols.sort_unstable();
        cols.dedup();
        Ok(ModePlan {
            pos,
            neg,
            cols,
            fft: plan_for(grid),
            n: grid.len(),
        })
    }

    /// Unnormalized transform of `x`, sampled on the retained half-set.
    fn analyse(&self, x: &[f64], buf: &mut [Complex64]) -> Vec<Complex64> {
        for (b, &v) in buf.iter_mut().zip(x) {
            *b = Complex64::new(v, 0.0);
        }
        self.fft.forward_cols(buf, &self.cols);
        self.pos.iter().map(|&p| buf[p]).collect()
    }

    /// Half-set spectra of `channels` stacked fields, laid out `[k][channel]`.
    fn analyse_channels(&self, x: &[f64], channels: usize, buf: &mut [Complex64]) -> Vec<Complex64> {
        let nk = self.pos.len();
        let mut out = vec![Complex64::new(0.0, 0.0); nk * channels];
        for ch in 0..channels {
            for (k, v) in self.analyse(&x[ch * self.n..(ch + 1) * self.n], buf).into_iter().enumerate() {
                out[k * channels + ch] = v;
            }
        }
        out
    }

    /// `(1/N) Re sum_n e^{i n x} s(n)` with `s(-n) = conj(s(n))`.
    fn synthesise(&self, s: &[Complex64], buf: &mut [Complex64], out: &mut [f64]) {
        buf.iter_mut().for_each(|b| *b = Complex64::new(0.0, 0.0));
        buf[self.pos[0]] = Complex64::new(s[0].re, 0.0);
        for k in 1..s.len() {
            buf[self.pos[k]] = s[k];
            buf[self.neg[k]] = s[k].conj();
        }
        self.fft.inverse_cols(buf, &self.cols);
        let inv = 1.0 / self.n as f64;
        for (o, b) in out.iter_mut().zip(buf.iter()) {
            *o += b.re * inv;
        }
    }
}

/// Activations kept for the backward pass.
struct Tape {
    input: Vec<f64>,
    /// `h_0 .. h_L`, each `width * N`.
    hidden: Vec<Vec<f64>>,
    /// Pre-activations `z_1 .. z_L`.
    pre: Vec<Vec<f64>>,
    /// `tanh` terms of the activations at `z_1 .. z_L`.
    tanh: Vec<Vec<f64>>,
    /// Half-set spectra of `h_0 .. h_{L-1}`, `[k][channel]`.
    spectra: Vec<Vec<Complex64>>,
}

/// `out[o] += sum_i w[o][i] x[i]` over channel-major fields.
fn mix(w: &[f64], x: &[f64], out: &mut [f64], n_out: usize, n_in: usize, n: usize) {
    for o in 0..n_out {
        let dst = &mut out[o * n..(o + 1) * n];
        for i in 0..n_in {
            let a = w[o * n_in + i];
            if a == 0.0 {
                continue;
            }
            for (d, s) in dst.iter_mut().zip(&x[i * n..(i + 1) * n]) {
                *d += a * s;
            }
        }
    }
}

/// `out[i] += sum_o w[o][i] g[o]`.
fn mix_transposed(w: &[f64], g: &[f64], out: &mut [f64], n_out: usize, n_in: usize, n: usize) {
    for o in 0..n_out {
        let src = &g[o * n..(o + 1) * n];
        for i in 0..n_in {
            let a = w[o * n_in + i];
            if a == 0.0 {
                continue;
            }
            for (d, s) in out[i * n..(i + 1) * n].iter_mut().zip(src) {
                *d += a * s;
            }
        }
    }
}

/// `gw[o][i] += <g[o], x[i]>`, `gb[o] += sum g[o]`.
fn accumulate_pointwise(g: &[f64], x: &[f64], gw: &mut [f64], gb: &mut [f64], n_out: usize, n_in: usize, n: usize) {
    for o in 0..n_out {
        let go = &g[o * n..(o + 1) * n];
        gb[o] += go.iter().sum::<f64>();
        for i in 0..n_in {
            gw[o * n_in + i] += go.iter().zip(&x[i * n..(i + 1) * n]).map(|(a, b)| a * b).sum::<f64>();
        }
    }
}

impl OperatorModel {
    /// Random initialization, deterministic per `config.seed`.
    ///
    /// Pointwise weights and biases are `U(-1/sqrt(fan_in), 1/sqrt(fan_in))`;
    /// spectral weights have real and imaginary parts `U[0, 1) / width^2`.
    pub fn init(config: OperatorConfig, dims: usize) -> Result<Self> {
        let mut model = OperatorModel::zeros(config, dims)?;
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let (c, w) = (config.channels, config.width);
        let l = model.layout.clone();
        let p = &mut model.params;
        fn uniform(rng: &mut ChaCha8Rng, slice: &mut [f64], bound: f64) {
            slice.iter_mut().for_each(|v| *v = rng.random_range(-bound..bound));
        }
        let lift_bound = 1.0 / (c as f64).sqrt();
        uniform(&mut rng, &mut p[l.lift_weight..l.lift_weight + w * c], lift_bound);
        uniform(&mut rng, &mut p[l.lift_bias..l.lift_bias + w], lift_bound);
        let hidden_bound = 1.0 / (w as f64).sqrt();
        let spectral_scale = 1.0 / (w * w) as f64;
        for b in &l.blocks {
            for v in &mut p[b.spectral..b.spectral + w * w * l.spectral_reals] {
                *v = spectral_scale * rng.random::<f64>();
            }
            uniform(&mut rng, &mut p[b.weight..b.weight + w * w], hidden_bound);
            uniform(&mut rng, &mut p[b.bias..b.bias + w], hidden_bound);
        }
        uniform(&mut rng, &mut p[l.proj_weight..l.proj_weight + c * w], hidden_bound);
        uniform(&mut rng, &mut p[l.proj_bias..l.proj_bias + c], hidden_bound);
        Ok(model)
    }

    /// All parameters zero; the network then maps every input to zero.
    pub fn zeros(config: OperatorConfig, dims: usize) -> Result<Self> {
        config.validate()?;
        if !(1..=2).contains(&dims) {
            return Err(EcfError::Config(format!("operator supports 1-D and 2-D grids, got {dims}-D")));
        }
        let layout = Layout::new(&config, dims);
        let params = vec![0.0; layout.len];
        Ok(OperatorModel {
            config,
            dims,
            layout,
            params,
        })
    }

    pub fn from_params(config: OperatorConfig, dims: usize, params: Vec<f64>) -> Result<Self> {
        let mut model = OperatorModel::zeros(config, dims)?;
        if params.len() != model.layout.len {
            return Err(EcfError::ShapeMismatch(format!(
                "{} parameters for a layout of {}",
                params.len(),
                model.layout.len
            )));
        }
        crate::grid::check_finite(&params, "parameters")?;
        model.params = params;
        Ok(model)
    }

    pub fn config(&self) -> &OperatorConfig {
        &self.config
    }

    pub fn dims(&self) -> usize {
        self.dims
    }

    pub fn layout(&self) -> &Layout {
        &self.layout
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    fn check_input(&self, field: &GridField) -> Result<()> {
        if field.channels() != self.config.channels {
            return Err(EcfError::ShapeMismatch(format!(
                "model expects {} channel(s), field has {}",
                self.config.channels,
                field.channels()
            )));
        }
        if field.grid().dims() != self.dims {
            return Err(EcfError::ShapeMismatch(format!(
                "model built for {}-D grids, field is {}-D",
                self.dims,
                field.grid().dims()
            )));
        }
        self.config.check_grid(field.grid())
    }

    /// Spectral weights of every block as complex numbers, `[k][o][i]`.
    fn complex_weights(&self) -> Vec<Vec<Complex64>> {
        let w = self.config.width;
        let sr = self.layout.spectral_reals;
        let nk = sr.div_ceil(2);
        self.layout
            .blocks
            .iter()
            .map(|b| {
                let mut out = vec![Complex64::new(0.0, 0.0); nk * w * w];
                for o in 0..w {
                    for i in 0..w {
                        let at = b.spectral + (o * w + i) * sr;
                        out[o * w + i] = Complex64::new(self.params[at], 0.0);
                        for k in 1..nk {
                            out[(k * w + o) * w + i] = Complex64::new(self.params[at + 2 * k - 1], self.params[at + 2 * k]);
                        }
                    }
                }
                out
            })
            .collect()
    }

    fn run(&self, field: &GridField, modes: &ModePlan, weights: &[Vec<Complex64>]) -> Tape {
        let (c, w, n) = (self.config.channels, self.config.width, field.grid().len());
        let l = &self.layout;
        let p = &self.params;
        let mut buf = vec![Complex64::new(0.0, 0.0); n];
        let mut h0 = vec![0.0; w * n];
        for (o, chunk) in h0.chunks_mut(n).enumerate() {
            chunk.iter_mut().for_each(|v| *v = p[l.lift_bias + o]);
        }
        mix(&p[l.lift_weight..], field.values(), &mut h0, w, c, n);
        let mut tape = Tape {
            input: field.values().to_vec(),
            hidden: vec![h0],
            pre: Vec::new(),
            tanh: Vec::new(),
            spectra: Vec::new(),
        };
        let nk = modes.pos.len();
        for (b, wk) in l.blocks.iter().zip(weights) {
            let h = tape.hidden.last().unwrap();
            let spec = modes.analyse_channels(h, w, &mut buf);
            let mut s = vec![Complex64::new(0.0, 0.0); w * nk];
            for k in 0..nk {
                let xk = &spec[k * w..(k + 1) * w];
                for o in 0..w {
                    let row = &wk[(k * w + o) * w..(k * w + o + 1) * w];
                    s[o * nk + k] = row.iter().zip(xk).map(|(a, x)| a * x).sum();
                }
            }
            let mut z = vec![0.0; w * n];
            for o in 0..w {
                let zo = &mut z[o * n..(o + 1) * n];
                zo.iter_mut().for_each(|v| *v = p[b.bias + o]);
                modes.synthesise(&s[o * nk..(o + 1) * nk], &mut buf, zo);
            }
            mix(&p[b.weight..], h, &mut z, w, w, n);
            let t: Vec<f64> = z.iter().map(|&v| gelu_tanh(v)).collect();
            let next: Vec<f64> = z.iter().zip(&t).map(|(&v, &t)| 0.5 * v * (1.0 + t)).collect();
            tape.tanh.push(t);
            tape.spectra.push(spec);
            tape.pre.push(z);
            tape.hidden.push(next);
        }
        tape
    }

    fn project(&self, h: &[f64], n: usize) -> Vec<f64> {
        let (c, w) = (self.config.channels, self.config.width);
        let l = &self.layout;
        let mut out = vec![0.0; c * n];
        for (o, chunk) in out.chunks_mut(n).enumerate() {
            chunk.iter_mut().for_each(|v| *v = self.params[l.proj_bias + o]);
        }
        mix(&self.params[l.proj_weight..], h, &mut out, c, w, n);
        out
    }

    pub fn forward(&self, field: &GridField) -> Result<GridField> {
        self.check_input(field)?;
        field.ensure_finite()?;
        let modes = ModePlan::new(field.grid(), self.config.modes)?;
        let tape = self.run(field, &modes, &self.complex_weights());
        let out = self.project(tape.hidden.last().unwrap(), field.grid().len());
        GridField::new(*field.grid(), self.config.channels, out)
    }

    /// Pulls `g_out = dL/d(output)` back to the parameters (accumulated into `grad`).
    fn backward(&self, tape: &Tape, g_out: &[f64], modes: &ModePlan, weights: &[Vec<Complex64>], grad: &mut [f64]) {
        let (c, w, n) = (self.config.channels, self.config.width, modes.n);
        let l = &self.layout;
        let p = &self.params;
        let nk = modes.pos.len();
        let sr = l.spectral_reals;
        let mut buf = vec![Complex64::new(0.0, 0.0); n];

        let (gw, gb) = grad.split_at_mut(l.proj_bias);
        accumulate_pointwise(
            g_out,
            tape.hidden.last().unwrap(),
            &mut gw[l.proj_weight..],
            &mut gb[..c],
            c,
            w,
            n,
        );
        let mut gh = vec![0.0; w * n];
        mix_transposed(&p[l.proj_weight..], g_out, &mut gh, c, w, n);

        for (layer, b) in l.blocks.iter().enumerate().rev() {
            let z = &tape.pre[layer];
            let h_prev = &tape.hidden[layer];
            let gz: Vec<f64> = gh
                .iter()
                .zip(z)
                .zip(&tape.tanh[layer])
                .map(|((g, &v), &t)| g * gelu_prime_from(v, t))
                .collect();
            {
                let (gw, gb) = grad.split_at_mut(b.bias);
                accumulate_pointwise(&gz, h_prev, &mut gw[b.weight..], &mut gb[..w], w, w, n);
            }
            let mut gprev = vec![0.0; w * n];
            mix_transposed(&p[b.weight..], &gz, &mut gprev, w, w, n);

            // dL/dR(k) = G(k) conj(X(k)) / N on the zero mode, twice that on
            // the half-set (each weight also acts on -k through conjugation).
            let gspec = modes.analyse_channels(&gz, w, &mut buf);
            let xspec = &tape.spectra[layer];
            let wk = &weights[layer];
            let inv_n = 1.0 / n as f64;
            let mut s = vec![Complex64::new(0.0, 0.0); w * nk];
            for k in 0..nk {
                let scale = if k == 0 { inv_n } else { 2.0 * inv_n };
                let (gk, xk) = (&gspec[k * w..(k + 1) * w], &xspec[k * w..(k + 1) * w]);
                for o in 0..w {
                    let go = gk[o];
                    let row = &wk[(k * w + o) * w..(k * w + o + 1) * w];
                    for i in 0..w {
                        let q = go * xk[i].conj() * scale;
                        let at = b.spectral + (o * w + i) * sr;
                        if k == 0 {
                            grad[at] += q.re;
                        } else {
                            grad[at + 2 * k - 1] += q.re;
                            grad[at + 2 * k] += q.im;
                        }
                        s[i * nk + k] += row[i].conj() * go;
                    }
                }
            }
            for i in 0..w {
                modes.synthesise(&s[i * nk..(i + 1) * nk], &mut buf, &mut gprev[i * n..(i + 1) * n]);
            }
            gh = gprev;
        }

        let (gw, gb) = grad.split_at_mut(l.lift_bias);
        accumulate_pointwise(&gh, &tape.input, &mut gw[l.lift_weight..], &mut gb[..w], w, c, n);
    }

    /// Mean loss over a batch and its exact gradient.
    ///
    /// With `ecf` set, each prediction is corrected to the zero mode of its
    /// input before the loss, and the gradient flows through the correction
    /// (which removes the channel mean of the incoming gradient).
    pub fn loss_and_grad(
        &self,
        inputs: &[GridField],
        targets: &[GridField],
        loss: LossKind,
        ecf: Option<&ConservationMask>,
    ) -> Result<(f64, Vec<f64>)> {
        if inputs.len() != targets.len() || inputs.is_empty() {
            return Err(EcfError::ShapeMismatch(format!(
                "{} inputs vs {} targets",
                inputs.len(),
                targets.len()
            )));
        }
        if let Some(mask) = ecf {
            if mask.len() != self.config.channels {
                return Err(EcfError::ShapeMismatch(format!(
                    "mask has {} flags for {} channels",
                    mask.len(),
                    self.config.channels
                )));
            }
        }
        for (x, y) in inputs.iter().zip(targets) {
            self.check_input(x)?;
            x.same_shape(y)?;
        }
        // Samples are accumulated in order so the batch gradient is bit-reproducible.
        let weights = self.complex_weights();
        let scale = 1.0 / inputs.len() as f64;
        let mut total = 0.0;
        let mut grad = vec![0.0; self.params.len()];
        for (idx, (x, y)) in inputs.iter().zip(targets).enumerate() {
            let l = self
                .sample_loss_and_grad(x, y, loss, ecf, &weights, scale, &mut grad)
                .map_err(|e| e.in_sample(idx))?;
            total += l * scale;
        }
        Ok((total, grad))
    }

    fn sample_loss_and_grad(
        &self,
        x: &GridField,
        y: &GridField,
        loss: LossKind,
        ecf: Option<&ConservationMask>,
        weights: &[Vec<Complex64>],
        scale: f64,
        grad: &mut [f64],
    ) -> Result<f64> {
        x.ensure_finite()?;
        let n = x.grid().len();
        let modes = ModePlan::new(x.grid(), self.config.modes)?;
        let tape = self.run(x, &modes, weights);
        let mut pred = self.project(tape.hidden.last().unwrap(), n);
        if let Some(mask) = ecf {
            for c in mask.masked() {
                let ch = &mut pred[c * n..(c + 1) * n];
                let shift = x.mean(c) - ch.iter().sum::<f64>() / n as f64;
                ch.iter_mut().for_each(|v| *v += shift);
            }
        }
        let count = pred.len() as f64;
        let mut value = 0.0;
        let mut g_out = vec![0.0; pred.len()];
        for ((g, p), t) in g_out.iter_mut().zip(&pred).zip(y.values()) {
            let (l, d) = loss.eval(p - t);
            value += l / count;
            *g = scale * d / count;
        }
        if !value.is_finite() {
            return Err(EcfError::NonFinite {
                context: "loss".into(),
                index: 0,
            });
        }
        if let Some(mask) = ecf {
            for c in mask.masked() {
                let ch = &mut g_out[c * n..(c + 1) * n];
                let mean = ch.iter().sum::<f64>() / n as f64;
                ch.iter_mut().for_each(|v| *v -= mean);
            }
        }
        self.backward(&tape, &g_out, &modes, weights, grad);
        Ok(value)
    }

    /// Loss of a batch without gradients.
    pub fn loss(
        &self,
        inputs: &[GridField],
        targets: &[GridField],
        loss: LossKind,
        ecf: Option<&ConservationMask>,
    ) -> Result<f64> {
        let mut total = 0.0;
        for (x, y) in inputs.iter().zip(targets) {
            let mut pred = self.forward(x)?;
            if let Some(mask) = ecf {
                let target = crate::ecf::encode_conserved(x, mask)?;
                pred = crate::ecf::shift_to_target(&pred, &target, mask)?;
            }
            let count = pred.values().len() as f64;
            total += pred
                .values()
                .iter()
                .zip(y.values())
                .map(|(p, t)| loss.eval(p - t).0 / count)
                .sum::<f64>();
        }
        Ok(total / inputs.len() as f64)
    }

    /// Hand-set weights realizing the identity map, using
    /// `gelu(x) - gelu(-x) = x`. Needs `width = 2 * channels`.
    pub fn identity(config: OperatorConfig, dims: usize) -> Result<Self> {
        let c = config.channels;
        if config.width != 2 * c || config.layers == 0 {
            return Err(EcfError::Config(format!(
                "identity weights need width = 2 * channels and at least one layer (width {}, channels {c})",
                config.width
            )));
        }
        let mut model = OperatorModel::zeros(config, dims)?;
        let w = config.width;
        let l = model.layout.clone();
        let p = &mut model.params;
        for ch in 0..c {
            // lift to (x, -x)
            p[l.lift_weight + ch * c + ch] = 1.0;
            p[l.lift_weight + (c + ch) * c + ch] = -1.0;
            p[l.proj_weight + ch * w + ch] = 1.0;
            p[l.proj_weight + ch * w + c + ch] = -1.0;
        }
        for (layer, b) in l.blocks.iter().enumerate() {
            for ch in 0..c {
                let (a, m) = (ch, c + ch);
                if layer == 0 {
                    p[b.weight + a * w + a] = 1.0;
                    p[b.weight + m * w + m] = 1.0;
                } else {
                    // (gelu(x), gelu(-x)) -> (x, -x)
                    p[b.weight + a * w + a] = 1.0;
                    p[b.weight + a * w + m] = -1.0;
                    p[b.weight + m * w + a] = -1.0;
                    p[b.weight + m * w + m] = 1.0;
                }
            }
        }
        Ok(model)
    }

    /// Sets the projection bias of channel `c`, shifting every prediction uniformly.
    pub fn set_output_bias(&mut self, c: usize, value: f64) {
        let at = self.layout.proj_bias + c;
        self.params[at] = value;
    }
}

impl Surrogate for OperatorModel {
    fn predict(&self, state: &GridField) -> Result<GridField> {
        self.forward(state)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::Boundary;

    fn grid(n: usize) -> GridSpec {
        GridSpec::unit_square(n, Boundary::Periodic).unwrap()
    }

    fn small_config(channels: usize) -> OperatorConfig {
        OperatorConfig {
            channels,
            layers: 2,
            width: 3,
            modes: 2,
            seed: 5,
        }
    }

    #[test]
    fn zero_model_outputs_zero() {
        let m = OperatorModel::zeros(OperatorConfig::new(1), 2).unwrap();
        let x = crate::solvers::grf_ic(1, 5.0, 2.0, &grid(16)).unwrap();
        assert!(m.forward(&x).unwrap().values().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn identity_fixture_reproduces_input() {
        let cfg = OperatorConfig {
            channels: 2,
            layers: 2,
            width: 4,
            modes: 4,
            seed: 0,
        };
        let m = OperatorModel::identity(cfg, 2).unwrap();
        let a = crate::solvers::grf_ic(1, 5.0, 2.0, &grid(8)).unwrap();
        let b = GridField::constant(grid(8), 1, 0.7);
        let x = GridField::stack(&[a, b]).unwrap();
        let y = m.forward(&x).unwrap();
        for (p, q) in y.values().iter().zip(x.values()) {
            assert!((p - q).abs() < 1e-14, "{p} vs {q}");
        }
    }

    #[test]
    fn init_is_deterministic() {
        let a = OperatorModel::init(OperatorConfig::new(1), 2).unwrap();
        let b = OperatorModel::init(OperatorConfig::new(1), 2).unwrap();
        assert_eq!(a.params(), b.params());
        let mut cfg = OperatorConfig::new(1);
        cfg.seed = 1;
        assert_ne!(a.params(), OperatorModel::init(cfg, 2).unwrap().params());
    }

    #[test]
    fn output_is_real_valued_and_finite() {
        let m = OperatorModel::init(small_config(1), 2).unwrap();
        let x = crate::solvers::grf_ic(3, 5.0, 2.0, &grid(8)).unwrap();
        assert!(m.forward(&x).unwrap().values().iter().all(|v| v.is_finite()));
    }

    #[test]
    fn mae_subgradient_at_zero_is_zero() {
        assert_eq!(LossKind::Mae.eval(0.0), (0.0, 0.0));
        assert_eq!(LossKind::Mae.eval(-2.0), (2.0, -1.0));
    }

    #[test]
    fn loss_matches_gradient_free_path() {
        let m = OperatorModel::init(small_config(1), 2).unwrap();
        let g = grid(8);
        let x = vec![crate::solvers::grf_ic(1, 5.0, 2.0, &g).unwrap()];
        let y = vec![crate::solvers::grf_ic(2, 5.0, 2.0, &g).unwrap()];
        let mask = ConservationMask::all(1);
        for ecf in [None, Some(&mask)] {
            let (l, _) = m.loss_and_grad(&x, &y, LossKind::Mse, ecf).unwrap();
            assert!((l - m.loss(&x, &y, LossKind::Mse, ecf).unwrap()).abs() < 1e-14);
        }
    }

    #[test]
    fn gelu_derivative_matches_difference() {
        for &x in &[-3.0, -0.7, 0.0, 0.4, 2.5] {
            let h = 1e-6;
            let fd = (gelu(x + h) - gelu(x - h)) / (2.0 * h);
            assert!((fd - gelu_prime(x)).abs() < 1e-9);
        }
    }
}
