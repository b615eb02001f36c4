//! Desk-scale stand-ins for an operational forecaster and its data.
//!
//! [`ToyForecaster`] is a fixed, randomly initialised conv + attention network
//! mapping an `H x W x C` state to the next state. [`synth_sequence`] produces
//! advected Gaussian blobs whose third channel depends nonlinearly on the
//! first two. [`LinearForecaster`] is a pointwise linear model whose
//! gradients are known in closed form, used as an oracle.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use rand::Rng;

use crate::autodiff::{AttentionWeights, ConvKernel, Mat, Shape, Tape, Var};
use crate::fields::{GridSpec, RoiBox, StateTensor};
use crate::math;
use crate::rng::{self, Stream};
use crate::{Error, Result};

/// Scalar attribution target: mean of output channel `c_out` over `roi`
/// after `steps` autoregressive applications, differentiated with respect to
/// input channel `c_in`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Target {
    pub c_in: usize,
    pub c_out: usize,
    pub roi: RoiBox,
    pub steps: usize,
}

impl Target {
    pub fn check(&self, spec: GridSpec, channels: usize) -> Result<()> {
        for channel in [self.c_in, self.c_out] {
            if channel >= channels {
                return Err(Error::Channel { channel, channels });
            }
        }
        if self.steps == 0 {
            return Err(Error::Domain("rollout needs at least one step".into()));
        }
        self.roi.check(spec)
    }
}

/// A differentiable one-step forecaster `f: R^{HxWxC} -> R^{HxWxC}`.
pub trait Forecaster: Sync {
    fn channels(&self) -> usize;

    /// `f` applied `steps` times.
    fn rollout(&self, x: &StateTensor, steps: usize) -> Result<StateTensor>;

    /// Target value and its gradient with respect to channel `c_in` of `x`
    /// (row-major, one entry per cell).
    fn target_gradient(&self, x: &StateTensor, target: &Target) -> Result<(f64, Vec<f64>)>;

    /// Target value without the backward pass.
    fn target_value(&self, x: &StateTensor, target: &Target) -> Result<f64> {
        target.check(x.spec(), self.channels())?;
        let y = self.rollout(x, target.steps)?;
        let spec = y.spec();
        let out = y.channel_slice(target.c_out)?;
        let total: f64 = target.roi.indices(spec).map(|k| out[k] as f64).sum();
        Ok(total / target.roi.len() as f64)
    }
}

/// Hidden width of the toy network.
pub const HIDDEN: usize = 8;

/// conv3x3(C->8) -> ReLU -> maxpool2 -> token projection -> attention (+residual)
/// -> nearest 2x upsample -> conv3x3(8->C).
#[derive(Debug, Clone, PartialEq)]
pub struct ToyForecaster {
    channels: usize,
    seed: u64,
    conv_in: ConvKernel,
    proj_w: Mat,
    proj_b: Mat,
    attention: AttentionWeights,
    conv_out: ConvKernel,
}

fn uniform_vec(rng: &mut rng::StreamRng, len: usize, fan_in: usize) -> Vec<f64> {
    let a = 1.0 / math::sqrt(fan_in as f64);
    (0..len).map(|_| rng.random_range(-a..a)).collect()
}

impl ToyForecaster {
    /// Weights drawn uniform in `±1/sqrt(fan_in)` from the seeded stream.
    pub fn new(channels: usize, seed: u64) -> Result<Self> {
        if channels == 0 {
            return Err(Error::Shape("forecaster needs at least one channel".into()));
        }
        let mut rng = rng::stream(seed, Stream::Weights, 0);
        let c = channels;
        let conv_in_fan = c * 9;
        let conv_in = ConvKernel::new(
            HIDDEN,
            c,
            3,
            3,
            uniform_vec(&mut rng, HIDDEN * c * 9, conv_in_fan),
            uniform_vec(&mut rng, HIDDEN, conv_in_fan),
        )?;
        let proj_w = Mat::new(HIDDEN, HIDDEN, uniform_vec(&mut rng, HIDDEN * HIDDEN, HIDDEN))?;
        let proj_b = Mat::new(1, HIDDEN, uniform_vec(&mut rng, HIDDEN, HIDDEN))?;
        let mut square = || Mat::new(HIDDEN, HIDDEN, uniform_vec(&mut rng, HIDDEN * HIDDEN, HIDDEN));
        let attention = AttentionWeights::new(square()?, square()?, square()?)?;
        let conv_out_fan = HIDDEN * 9;
        let conv_out = ConvKernel::new(
            c,
            HIDDEN,
            3,
            3,
            uniform_vec(&mut rng, c * HIDDEN * 9, conv_out_fan),
            uniform_vec(&mut rng, c, conv_out_fan),
        )?;
        Ok(Self {
            channels,
            seed,
            conv_in,
            proj_w,
            proj_b,
            attention,
            conv_out,
        })
    }

    pub fn with_zero_biases(mut self) -> Self {
        self.conv_in.bias.iter_mut().for_each(|b| *b = 0.0);
        self.proj_b.data.iter_mut().for_each(|b| *b = 0.0);
        self.conv_out.bias.iter_mut().for_each(|b| *b = 0.0);
        self
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn parameter_count(&self) -> usize {
        self.conv_in.weights.len()
            + self.conv_in.bias.len()
            + self.proj_w.data.len()
            + self.proj_b.data.len()
            + 3 * HIDDEN * HIDDEN
            + self.conv_out.weights.len()
            + self.conv_out.bias.len()
    }

    fn check_shape(&self, shape: Shape) -> Result<()> {
        if shape.channels != self.channels {
            return Err(Error::Shape(format!(
                "model expects {} channels, got {}",
                self.channels, shape.channels
            )));
        }
        if shape.rows % 2 != 0 || shape.cols % 2 != 0 {
            return Err(Error::Shape(format!(
                "model needs even grid extents, got {}x{}",
                shape.rows, shape.cols
            )));
        }
        Ok(())
    }

    /// Records one forward step on `tape`.
    pub fn step_on_tape(&self, tape: &mut Tape, x: Var) -> Result<Var> {
        let s = tape.shape(x);
        self.check_shape(s)?;
        let h = tape.conv2d(x, &self.conv_in)?;
        let h = tape.relu(h);
        let h = tape.maxpool2(h)?;
        let tokens = tape.to_tokens(h);
        let wp = tape.matrix_leaf(&self.proj_w);
        let bp = tape.matrix_leaf(&self.proj_b);
        let p = tape.matmul(tokens, wp)?;
        let p = tape.add_row_bias(p, bp)?;
        let a = tape.attention(p, &self.attention)?;
        let r = tape.add(p, a)?;
        let img = tape.to_image(r, s.rows / 2, s.cols / 2)?;
        let up = tape.upsample2(img);
        tape.conv2d(up, &self.conv_out)
    }

    pub fn rollout_on_tape(&self, tape: &mut Tape, x: Var, steps: usize) -> Result<Var> {
        let mut cur = x;
        for _ in 0..steps {
            cur = self.step_on_tape(tape, cur)?;
        }
        Ok(cur)
    }

    /// Builds the full target graph from raw 64-bit input values
    /// (channel-major). Returns the tape, the input leaf and the scalar target.
    pub fn target_on_tape(
        &self,
        spec: GridSpec,
        values: &[f64],
        target: &Target,
    ) -> Result<(Tape, Var, Var)> {
        target.check(spec, self.channels)?;
        let mut tape = Tape::new();
        let x = tape.leaf(
            Shape::image(self.channels, spec.height(), spec.width()),
            values.to_vec(),
        )?;
        let y = self.rollout_on_tape(&mut tape, x, target.steps)?;
        let t = tape.roi_mean(y, target.c_out, &target.roi)?;
        Ok((tape, x, t))
    }

    pub fn forward_step(&self, x: &StateTensor) -> Result<StateTensor> {
        self.rollout(x, 1)
    }

    /// `f^T(x)` together with the tape spanning all `steps` compositions.
    pub fn rollout_with_tape(&self, x: &StateTensor, steps: usize) -> Result<(StateTensor, Tape)> {
        let spec = x.spec();
        let mut tape = Tape::new();
        let xv = tape.leaf(
            Shape::image(x.channels(), spec.height(), spec.width()),
            x.to_f64(),
        )?;
        let y = self.rollout_on_tape(&mut tape, xv, steps)?;
        let out = StateTensor::from_f64(spec, self.channels, tape.value(y))?;
        Ok((out, tape))
    }
}

impl Forecaster for ToyForecaster {
    fn channels(&self) -> usize {
        self.channels
    }

    fn rollout(&self, x: &StateTensor, steps: usize) -> Result<StateTensor> {
        Ok(self.rollout_with_tape(x, steps)?.0)
    }

    fn target_gradient(&self, x: &StateTensor, target: &Target) -> Result<(f64, Vec<f64>)> {
        let spec = x.spec();
        let (tape, xv, t) = self.target_on_tape(spec, &x.to_f64(), target)?;
        let grads = tape.backward(t)?;
        let full = grads.wrt(&tape, xv);
        let n = spec.cells();
        Ok((
            tape.value(t)[0],
            full[target.c_in * n..(target.c_in + 1) * n].to_vec(),
        ))
    }
}

/// Pointwise linear model `f(x)[o](u) = sum_i W[o][i](u) x[i](u)`.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearForecaster {
    spec: GridSpec,
    channels: usize,
    /// `[out][in][cell]`
    weights: Vec<f64>,
}

impl LinearForecaster {
    pub fn new(spec: GridSpec, channels: usize, weights: Vec<f64>) -> Result<Self> {
        if weights.len() != channels * channels * spec.cells() {
            return Err(Error::Shape("linear weights must be C x C x cells".into()));
        }
        Ok(Self {
            spec,
            channels,
            weights,
        })
    }

    pub fn identity(spec: GridSpec, channels: usize) -> Self {
        let n = spec.cells();
        let mut weights = vec![0.0; channels * channels * n];
        for c in 0..channels {
            weights[(c * channels + c) * n..(c * channels + c + 1) * n].fill(1.0);
        }
        Self {
            spec,
            channels,
            weights,
        }
    }

    #[inline]
    fn w(&self, o: usize, i: usize, cell: usize) -> f64 {
        self.weights[(o * self.channels + i) * self.spec.cells() + cell]
    }

    fn check(&self, x: &StateTensor) -> Result<()> {
        if x.spec() != self.spec || x.channels() != self.channels {
            return Err(Error::Shape("state does not match linear model".into()));
        }
        Ok(())
    }
}

impl Forecaster for LinearForecaster {
    fn channels(&self) -> usize {
        self.channels
    }

    fn rollout(&self, x: &StateTensor, steps: usize) -> Result<StateTensor> {
        self.check(x)?;
        let n = self.spec.cells();
        let mut cur = x.to_f64();
        for _ in 0..steps {
            let mut next = vec![0.0; cur.len()];
            for o in 0..self.channels {
                for i in 0..self.channels {
                    for u in 0..n {
                        next[o * n + u] += self.w(o, i, u) * cur[i * n + u];
                    }
                }
            }
            cur = next;
        }
        StateTensor::from_f64(self.spec, self.channels, &cur)
    }

    fn target_gradient(&self, x: &StateTensor, target: &Target) -> Result<(f64, Vec<f64>)> {
        self.check(x)?;
        target.check(self.spec, self.channels)?;
        let n = self.spec.cells();
        // Pull the ROI indicator back through `steps` transposed applications.
        let mut g = vec![0.0; self.channels * n];
        let share = 1.0 / target.roi.len() as f64;
        for k in target.roi.indices(self.spec) {
            g[target.c_out * n + k] = share;
        }
        for _ in 0..target.steps {
            let mut prev = vec![0.0; g.len()];
            for o in 0..self.channels {
                for i in 0..self.channels {
                    for u in 0..n {
                        prev[i * n + u] += self.w(o, i, u) * g[o * n + u];
                    }
                }
            }
            g = prev;
        }
        // Linear in x, so the value is exactly <g, x>.
        let value = g.iter().zip(x.values()).map(|(a, &b)| a * b as f64).sum();
        Ok((value, g[target.c_in * n..(target.c_in + 1) * n].to_vec()))
    }
}

/// Synthetic advected-blob generator configuration.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SynthConfig {
    pub height: usize,
    pub width: usize,
    pub blobs: usize,
    pub amplitude: f64,
    /// Gaussian standard deviation in cells.
    pub blob_width: f64,
    /// Advection in cells per step, `(rows, cols)`.
    pub velocity: (f64, f64),
    pub seed: u64,
}

/// Channel count of synthetic states: wind, moisture, precipitation analogues.
pub const SYNTH_CHANNELS: usize = 3;

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            height: 32,
            width: 32,
            blobs: 3,
            amplitude: 1.0,
            blob_width: 2.5,
            velocity: (0.0, 1.0),
            seed: 42,
        }
    }
}

impl SynthConfig {
    pub fn check(&self) -> Result<GridSpec> {
        if !(self.blob_width > 0.0) || !self.amplitude.is_finite() {
            return Err(Error::Domain("blob width must be > 0 and amplitude finite".into()));
        }
        if !self.velocity.0.is_finite() || !self.velocity.1.is_finite() {
            return Err(Error::Domain("velocity must be finite".into()));
        }
        if self.blobs == 0 {
            return Err(Error::Domain("need at least one blob".into()));
        }
        GridSpec::new(self.height, self.width)
    }

    /// Initial blob centres (row, col) and per-blob moisture amplitude.
    fn blob_params(&self) -> Vec<(f64, f64, f64)> {
        let mut rng = rng::stream(self.seed, Stream::Synth, 0);
        (0..self.blobs)
            .map(|_| {
                let r = rng.random_range(0.0..self.height as f64);
                let c = rng.random_range(0.0..self.width as f64);
                let moist = rng.random_range(0.5..1.5);
                (r, c, moist)
            })
            .collect()
    }
}

/// Periodic Gaussian bump: sum over the nearest toroidal images.
fn periodic_gauss(d: f64, period: f64, width: f64) -> f64 {
    let mut total = 0.0;
    for k in -2..=2 {
        let e = d + k as f64 * period;
        total += math::exp(-0.5 * e * e / (width * width));
    }
    total
}

fn wrap(p: f64, period: f64) -> f64 {
    let r = p - period * math::floor(p / period);
    if r >= period {
        0.0
    } else {
        r
    }
}

/// State at integer time `t`: blobs at `p0 + t * velocity` on the torus.
/// Channel 0 ("wind") and channel 1 ("moisture") are sums of blobs;
/// channel 2 ("precip") is `wind * moisture / amplitude`.
pub fn synth_sequence(cfg: &SynthConfig, t: u64) -> Result<StateTensor> {
    let spec = cfg.check()?;
    let (h, w) = (cfg.height as f64, cfg.width as f64);
    let n = spec.cells();
    let mut values = vec![0.0f64; SYNTH_CHANNELS * n];
    for (r0, c0, moist) in cfg.blob_params() {
        let rc = wrap(r0 + t as f64 * cfg.velocity.0, h);
        let cc = wrap(c0 + t as f64 * cfg.velocity.1, w);
        for r in 0..cfg.height {
            let gr = periodic_gauss(r as f64 - rc, h, cfg.blob_width);
            for c in 0..cfg.width {
                let g = gr * periodic_gauss(c as f64 - cc, w, cfg.blob_width);
                let k = spec.index(r, c);
                values[k] += cfg.amplitude * g;
                values[n + k] += cfg.amplitude * moist * g;
            }
        }
    }
    for k in 0..n {
        values[2 * n + k] = values[k] * values[n + k] / cfg.amplitude.abs().max(f64::MIN_POSITIVE);
    }
    StateTensor::from_f64(spec, SYNTH_CHANNELS, &values)
}

/// Blob centres at time `t` (for tests and diagnostics).
pub fn synth_centres(cfg: &SynthConfig, t: u64) -> Vec<(f64, f64)> {
    cfg.blob_params()
        .into_iter()
        .map(|(r0, c0, _)| {
            (
                wrap(r0 + t as f64 * cfg.velocity.0, cfg.height as f64),
                wrap(c0 + t as f64 * cfg.velocity.1, cfg.width as f64),
            )
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small_state(seed: u64) -> StateTensor {
        let cfg = SynthConfig {
            height: 8,
            width: 8,
            blobs: 2,
            blob_width: 1.5,
            seed,
            ..SynthConfig::default()
        };
        synth_sequence(&cfg, 0).unwrap()
    }

    #[test]
    fn forward_is_deterministic_and_shape_preserving() {
        let m = ToyForecaster::new(3, 5).unwrap();
        let x = small_state(1);
        let a = m.forward_step(&x).unwrap();
        let b = ToyForecaster::new(3, 5).unwrap().forward_step(&x).unwrap();
        assert_eq!(a.values(), b.values());
        assert_eq!(a.spec(), x.spec());
        assert_eq!(a.channels(), 3);
    }

    #[test]
    fn zero_input_zero_bias_gives_zero() {
        let m = ToyForecaster::new(3, 9).unwrap().with_zero_biases();
        let x = StateTensor::zeros(GridSpec::new(8, 8).unwrap(), 3).unwrap();
        assert!(m.forward_step(&x).unwrap().values().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn odd_grid_is_a_shape_error() {
        let m = ToyForecaster::new(3, 9).unwrap();
        let x = StateTensor::zeros(GridSpec::new(7, 8).unwrap(), 3).unwrap();
        assert!(matches!(m.forward_step(&x), Err(Error::Shape(_))));
        let x = StateTensor::zeros(GridSpec::new(8, 8).unwrap(), 2).unwrap();
        assert!(matches!(m.forward_step(&x), Err(Error::Shape(_))));
    }

    #[test]
    fn rollout_composes() {
        let m = ToyForecaster::new(3, 2).unwrap();
        let x = small_state(3);
        assert_eq!(m.rollout(&x, 1).unwrap(), m.forward_step(&x).unwrap());
        let twice = m.forward_step(&m.forward_step(&x).unwrap()).unwrap();
        let r2 = m.rollout(&x, 2).unwrap();
        // The rollout keeps f64 between steps; composing public calls rounds
        // to f32 storage in between.
        for (a, b) in r2.values().iter().zip(twice.values()) {
            assert!((a - b).abs() < 1e-5, "{a} vs {b}");
        }
    }

    #[test]
    fn linear_identity_gradient_is_roi_indicator() {
        let spec = GridSpec::new(4, 4).unwrap();
        let m = LinearForecaster::identity(spec, 2);
        let x = StateTensor::from_f64(spec, 2, &(0..32).map(|v| v as f64).collect::<Vec<_>>())
            .unwrap();
        let roi = RoiBox::new(1, 2, 1, 1).unwrap();
        let target = Target {
            c_in: 1,
            c_out: 1,
            roi,
            steps: 3,
        };
        let (v, g) = m.target_gradient(&x, &target).unwrap();
        assert_eq!(v, m.target_value(&x, &target).unwrap());
        for (k, gk) in g.iter().enumerate() {
            let (r, c) = spec.row_col(k);
            let expect = if roi.contains(r, c) { 0.5 } else { 0.0 };
            assert_eq!(*gk, expect);
        }
    }

    #[test]
    fn synth_static_without_velocity() {
        let cfg = SynthConfig {
            velocity: (0.0, 0.0),
            ..SynthConfig::default()
        };
        let a = synth_sequence(&cfg, 0).unwrap();
        assert_eq!(a, synth_sequence(&cfg, 7).unwrap());
    }

    #[test]
    fn synth_advects_by_whole_cells_and_conserves_mass() {
        let cfg = SynthConfig {
            velocity: (0.0, 1.0),
            ..SynthConfig::default()
        };
        let c0 = synth_centres(&cfg, 0);
        let c5 = synth_centres(&cfg, 5);
        for ((r0, col0), (r5, col5)) in c0.iter().zip(&c5) {
            assert_eq!(r0, r5);
            let shift = wrap(col5 - col0, cfg.width as f64);
            assert!((shift - 5.0).abs() < 1e-9);
        }
        let s0 = synth_sequence(&cfg, 0).unwrap();
        for t in [1u64, 5, 40] {
            let st = synth_sequence(&cfg, t).unwrap();
            for ch in 0..3 {
                let m0: f64 = s0.channel_slice(ch).unwrap().iter().map(|&v| v as f64).sum();
                let mt: f64 = st.channel_slice(ch).unwrap().iter().map(|&v| v as f64).sum();
                assert!((m0 - mt).abs() < 1e-6 * m0.max(1.0), "channel {ch} t {t}");
            }
        }
    }
}
