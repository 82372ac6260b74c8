//! A small fully connected noise predictor with hand-written backprop.
//!
//! The network maps `[x, emb(t/T)]` through two smooth hidden layers to an
//! output the size of `x`, and is trained on the shaped-noise objective
//! `E‖ε - ε_θ(x_t, t)‖²` with `ε ~ N(0, Σ_w)`.

use std::fmt;
use std::str::FromStr;

use ndarray::{Array1, Array2, Axis};
use rand::seq::index::sample as sample_indices;
use rand::Rng;

use crate::diffusion::{noise_like, DiffusionSchedule, EpsPredictor};
use crate::error::{invalid, Result, SagdError};
use crate::rng::{self, derive_seed};
use crate::scalar::Real;
use crate::spectral::AnisotropicCovariance;
use crate::tensor::TensorField;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum Activation {
    /// `x·sigmoid(x)`.
    #[default]
    Silu,
    Identity,
}

impl Activation {
    fn apply<R: Real>(self, x: R) -> R {
        match self {
            Self::Silu => x / (R::one() + (-x).exp()),
            Self::Identity => x,
        }
    }

    fn derivative<R: Real>(self, x: R) -> R {
        match self {
            Self::Silu => {
                let s = R::one() / (R::one() + (-x).exp());
                s * (R::one() + x * (R::one() - s))
            }
            Self::Identity => R::one(),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
struct Layer<R> {
    w: Array2<R>,
    b: Array1<R>,
}

/// `(d + E) → H → H → d` perceptron conditioned on a sinusoidal time code.
///
/// With `skip` set the output is `σ_t·x_t + f_θ(x_t, t)`, which hands the
/// network the high-noise answer for free.
#[derive(Clone, Debug, PartialEq)]
pub struct DenseNet<R> {
    dim: usize,
    embed: usize,
    hidden: usize,
    activation: Activation,
    skip: bool,
    sigmas: Vec<R>,
    layers: Vec<Layer<R>>,
}

struct Tape<R> {
    inputs: Vec<Array2<R>>,
    pre: Vec<Array2<R>>,
}

/// Shape of a network, enough to rebuild it from its parameter tensors.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct NetSpec {
    pub dim: usize,
    pub embed: usize,
    pub hidden: usize,
    pub activation: Activation,
    pub skip: bool,
}

impl<R: Real> DenseNet<R> {
    /// He-initialized hidden layers and a zero output layer, for steps
    /// `1..=T` of `sched`.
    pub fn new(spec: NetSpec, sched: &DiffusionSchedule<R>, seed: u64) -> Result<Self> {
        let NetSpec { dim, embed, hidden, .. } = spec;
        if dim == 0 || hidden == 0 {
            return invalid("network dim and hidden width must be positive");
        }
        if !embed.is_multiple_of(2) {
            return invalid(format!("time embedding width must be even, got {embed}"));
        }
        let widths = [dim + embed, hidden, hidden, dim];
        let mut g = rng::seeded(seed);
        let layers = widths
            .windows(2)
            .enumerate()
            .map(|(l, io)| {
                let (fan_in, fan_out) = (io[0], io[1]);
                let scale = if l == 2 { 0.0 } else { (2.0 / fan_in as f64).sqrt() };
                let w =
                    Array2::from_shape_fn((fan_in, fan_out), |_| R::of(scale * rng::standard_normal::<f64, _>(&mut g)));
                Layer { w, b: Array1::zeros(fan_out) }
            })
            .collect();
        let sigmas = (0..=sched.steps()).map(|t| sched.sigma(t)).collect();
        Ok(Self { dim, embed, hidden, activation: spec.activation, skip: spec.skip, sigmas, layers })
    }

    pub fn spec(&self) -> NetSpec {
        NetSpec { dim: self.dim, embed: self.embed, hidden: self.hidden, activation: self.activation, skip: self.skip }
    }

    pub fn steps(&self) -> usize {
        self.sigmas.len() - 1
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn num_params(&self) -> usize {
        self.layers.iter().map(|l| l.w.len() + l.b.len()).sum()
    }

    /// `(rows, cols)` of each weight matrix; biases have `cols` entries.
    pub fn layer_shapes(&self) -> Vec<(usize, usize)> {
        self.layers.iter().map(|l| l.w.dim()).collect()
    }

    fn slices(&self) -> impl Iterator<Item = &[R]> {
        self.layers
            .iter()
            .flat_map(|l| [l.w.as_slice().expect("standard layout"), l.b.as_slice().expect("standard layout")])
    }

    fn slices_mut(&mut self) -> impl Iterator<Item = &mut [R]> {
        self.layers
            .iter_mut()
            .flat_map(|l| [l.w.as_slice_mut().expect("standard layout"), l.b.as_slice_mut().expect("standard layout")])
    }

    /// All parameters, layer by layer (weights row-major, then biases).
    pub fn params(&self) -> Vec<R> {
        self.slices().flat_map(|s| s.iter().copied()).collect()
    }

    pub fn set_params(&mut self, values: &[R]) -> Result<()> {
        if values.len() != self.num_params() {
            return Err(SagdError::ShapeMismatch(format!(
                "{} values for {} parameters",
                values.len(),
                self.num_params()
            )));
        }
        let mut rest = values;
        for s in self.slices_mut() {
            let (head, tail) = rest.split_at(s.len());
            s.copy_from_slice(head);
            rest = tail;
        }
        Ok(())
    }

    fn add_scaled(&mut self, delta: &[R], scale: R) {
        let mut rest = delta;
        for s in self.slices_mut() {
            let (head, tail) = rest.split_at(s.len());
            s.iter_mut().zip(head).for_each(|(p, &d)| *p = *p + scale * d);
            rest = tail;
        }
    }

    /// Weight and bias tensors in parameter order.
    pub fn tensors(&self) -> Vec<TensorField<R>> {
        self.layers
            .iter()
            .flat_map(|l| {
                let (r, c) = l.w.dim();
                [
                    TensorField::new(vec![r, c], l.w.iter().copied().collect()).expect("finite weights"),
                    TensorField::new(vec![c], l.b.to_vec()).expect("finite biases"),
                ]
            })
            .collect()
    }

    pub fn from_tensors(spec: NetSpec, sched: &DiffusionSchedule<R>, tensors: &[TensorField<R>]) -> Result<Self> {
        let mut net = Self::new(spec, sched, 0)?;
        let expected: Vec<Vec<usize>> = net.layer_shapes().iter().flat_map(|&(r, c)| [vec![r, c], vec![c]]).collect();
        let got: Vec<Vec<usize>> = tensors.iter().map(|t| t.shape().to_vec()).collect();
        if got != expected {
            return Err(SagdError::ShapeMismatch(format!("checkpoint tensors {got:?}, expected {expected:?}")));
        }
        let flat: Vec<R> = tensors.iter().flat_map(|t| t.data().iter().copied()).collect();
        net.set_params(&flat)?;
        Ok(net)
    }

    /// `[sin(τω_k), cos(τω_k)]` with `τ = t/T` and `ω_k` spaced
    /// geometrically from 1 to 1000.
    pub fn time_embedding(&self, t: usize) -> Vec<R> {
        let half = self.embed / 2;
        let tau = t as f64 / self.steps() as f64;
        let mut out = Vec::with_capacity(self.embed);
        for k in 0..half {
            let omega = if half > 1 { 1000f64.powf(k as f64 / (half - 1) as f64) } else { 1.0 };
            out.push(R::of((tau * omega).sin()));
        }
        for k in 0..half {
            let omega = if half > 1 { 1000f64.powf(k as f64 / (half - 1) as f64) } else { 1.0 };
            out.push(R::of((tau * omega).cos()));
        }
        out
    }

    fn input(&self, x: &TensorField<R>, ts: &[usize]) -> Result<Array2<R>> {
        if x.sample_len() != self.dim {
            return Err(SagdError::ShapeMismatch(format!(
                "network dim {} vs sample length {}",
                self.dim,
                x.sample_len()
            )));
        }
        if ts.len() != x.batch() {
            return Err(SagdError::ShapeMismatch(format!("{} timesteps for a batch of {}", ts.len(), x.batch())));
        }
        if let Some(&t) = ts.iter().find(|&&t| t > self.steps()) {
            return invalid(format!("step {t} outside 0..={}", self.steps()));
        }
        let width = self.dim + self.embed;
        let mut z = Array2::zeros((x.batch(), width));
        for (i, (row, &t)) in z.outer_iter_mut().zip(ts).enumerate() {
            let row = row.into_slice().expect("contiguous row");
            row[..self.dim].copy_from_slice(x.sample(i));
            row[self.dim..].copy_from_slice(&self.time_embedding(t));
        }
        Ok(z)
    }

    fn forward(&self, z0: Array2<R>) -> (Array2<R>, Tape<R>) {
        let last = self.layers.len() - 1;
        let mut tape = Tape { inputs: Vec::with_capacity(3), pre: Vec::with_capacity(2) };
        let mut h = z0;
        for (l, layer) in self.layers.iter().enumerate() {
            let a = h.dot(&layer.w) + &layer.b;
            tape.inputs.push(h);
            if l < last {
                h = a.mapv(|v| self.activation.apply(v));
                tape.pre.push(a);
            } else {
                h = a;
            }
        }
        (h, tape)
    }

    /// Network output including the skip path.
    fn output(&self, x: &TensorField<R>, ts: &[usize]) -> Result<(Array2<R>, Tape<R>)> {
        let (mut out, tape) = self.forward(self.input(x, ts)?);
        if self.skip {
            for (i, (mut row, &t)) in out.outer_iter_mut().zip(ts).enumerate() {
                let s = self.sigmas[t];
                row.iter_mut().zip(x.sample(i)).for_each(|(o, &v)| *o = *o + s * v);
            }
        }
        Ok((out, tape))
    }

    /// Flat parameter gradient given `∂L/∂output`.
    fn backward(&self, tape: &Tape<R>, g_out: Array2<R>) -> Vec<R> {
        let mut per_layer = Vec::with_capacity(self.layers.len());
        let mut g = g_out;
        for l in (0..self.layers.len()).rev() {
            let gw = tape.inputs[l].t().dot(&g);
            let gb = g.sum_axis(Axis(0));
            if l > 0 {
                let gh = g.dot(&self.layers[l].w.t());
                g = gh * &tape.pre[l - 1].mapv(|v| self.activation.derivative(v));
            }
            per_layer.push((gw, gb));
        }
        per_layer.reverse();
        let mut flat = Vec::with_capacity(self.num_params());
        for (gw, gb) in per_layer {
            flat.extend(gw.iter().copied());
            flat.extend(gb.iter().copied());
        }
        flat
    }

    /// Predictions for a batch where sample `i` sits at step `ts[i]`.
    pub fn predict(&self, x: &TensorField<R>, ts: &[usize]) -> Result<TensorField<R>> {
        let (out, _) = self.output(x, ts)?;
        TensorField::new(x.shape().to_vec(), out.iter().copied().collect())
            .map_err(|_| SagdError::NonFinite { step: ts.first().copied().unwrap_or(0), what: "network output".into() })
    }

    /// Batch mean of `‖target - ε_θ‖²`.
    pub fn loss(&self, x: &TensorField<R>, ts: &[usize], target: &TensorField<R>) -> Result<R> {
        x.check_same_shape(target)?;
        let (out, _) = self.output(x, ts)?;
        let sq: R = out.iter().zip(target.data()).map(|(&o, &e)| (o - e) * (o - e)).sum();
        Ok(sq / R::of_usize(x.batch().max(1)))
    }

    /// Loss and its flat parameter gradient.
    pub fn loss_and_grad(&self, x: &TensorField<R>, ts: &[usize], target: &TensorField<R>) -> Result<(R, Vec<R>)> {
        x.check_same_shape(target)?;
        if x.batch() == 0 {
            return invalid("empty batch");
        }
        let (out, tape) = self.output(x, ts)?;
        let n = R::of_usize(x.batch());
        let two = R::of(2.0);
        let mut g = out.clone();
        let mut sq = R::zero();
        for (gi, &e) in g.iter_mut().zip(target.data()) {
            let r = *gi - e;
            sq = sq + r * r;
            *gi = two * r / n;
        }
        Ok((sq / n, self.backward(&tape, g)))
    }
}

impl<R: Real> EpsPredictor<R> for DenseNet<R> {
    fn predict_eps(&self, xt: &TensorField<R>, t: usize) -> Result<TensorField<R>> {
        self.predict(xt, &vec![t; xt.batch()])
    }
}

/// Largest `|g_fd - g| / max(|g_fd|, |g|, 1e-6)` over up to `max_params`
/// randomly chosen parameters, with central differences of step `h`.
pub fn gradient_check<R: Real>(
    net: &DenseNet<R>,
    x: &TensorField<R>,
    ts: &[usize],
    target: &TensorField<R>,
    h: f64,
    max_params: usize,
    seed: u64,
) -> Result<f64> {
    let (_, grad) = net.loss_and_grad(x, ts, target)?;
    let base = net.params();
    let n = base.len();
    let picks = sample_indices(&mut rng::seeded(seed), n, max_params.min(n));
    let mut probe = net.clone();
    let mut worst: f64 = 0.0;
    for i in picks {
        let mut p = base.clone();
        p[i] = base[i] + R::of(h);
        probe.set_params(&p)?;
        let up = probe.loss(x, ts, target)?.as_f64();
        p[i] = base[i] - R::of(h);
        probe.set_params(&p)?;
        let down = probe.loss(x, ts, target)?.as_f64();
        let fd = (up - down) / (2.0 * h);
        let g = grad[i].as_f64();
        let err = (fd - g).abs() / fd.abs().max(g.abs()).max(1e-6);
        if !err.is_finite() {
            return Err(SagdError::NonFinite { step: i, what: "finite-difference gradient".into() });
        }
        worst = worst.max(err);
    }
    Ok(worst)
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum Optimizer {
    Sgd,
    #[default]
    Momentum,
    Adam,
}

impl fmt::Display for Optimizer {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Sgd => "sgd",
            Self::Momentum => "momentum",
            Self::Adam => "adam",
        })
    }
}

impl FromStr for Optimizer {
    type Err = SagdError;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "sgd" => Ok(Self::Sgd),
            "momentum" => Ok(Self::Momentum),
            "adam" => Ok(Self::Adam),
            _ => invalid(format!("unknown optimizer {s:?} (expected sgd, momentum or adam)")),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TrainConfig {
    pub steps: usize,
    pub batch: usize,
    pub lr: f64,
    /// Learning rate at the last step as a fraction of `lr`; the rate
    /// follows a cosine from `lr` down to `lr·final_lr_fraction`.
    pub final_lr_fraction: f64,
    pub optimizer: Optimizer,
    pub momentum: f64,
    pub embed: usize,
    pub hidden: usize,
    /// Adds the `σ_t·x_t` skip path to the network.
    pub skip: bool,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            steps: 20_000,
            batch: 128,
            lr: 1e-3,
            final_lr_fraction: 1.0,
            optimizer: Optimizer::Momentum,
            momentum: 0.9,
            embed: 16,
            hidden: 64,
            skip: false,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch == 0 {
            return invalid("batch size must be positive");
        }
        if self.steps == 0 || self.hidden == 0 {
            return invalid("steps and hidden width must be positive");
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return invalid(format!("learning rate must be positive, got {}", self.lr));
        }
        if !(0.0..=1.0).contains(&self.final_lr_fraction) || !(0.0..1.0).contains(&self.momentum) {
            return invalid("final_lr_fraction must lie in [0, 1] and momentum in [0, 1)");
        }
        if !self.embed.is_multiple_of(2) {
            return invalid("time embedding width must be even");
        }
        Ok(())
    }

    fn lr_at(&self, step: usize) -> f64 {
        let progress = step as f64 / (self.steps.max(2) - 1) as f64;
        let floor = self.lr * self.final_lr_fraction;
        floor + 0.5 * (self.lr - floor) * (1.0 + (std::f64::consts::PI * progress).cos())
    }
}

/// Source of i.i.d. clean samples.
pub trait DataSource<R: Real> {
    fn draw(&self, n: usize, seed: u64) -> Result<TensorField<R>>;
}

impl<R: Real, F> DataSource<R> for F
where
    F: Fn(usize, u64) -> Result<TensorField<R>>,
{
    fn draw(&self, n: usize, seed: u64) -> Result<TensorField<R>> {
        self(n, seed)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainReport {
    /// Minibatch loss at every step.
    pub loss: Vec<f64>,
}

/// Uniform `t ∈ {1, …, T}` per sample, and the matching `x_t` and `ε`.
pub fn noised_batch<R: Real>(
    x0: &TensorField<R>,
    sched: &DiffusionSchedule<R>,
    cov: &AnisotropicCovariance<R>,
    seed: u64,
) -> Result<(TensorField<R>, Vec<usize>, TensorField<R>)> {
    let mut g = rng::seeded(derive_seed(seed, &[0]));
    let ts: Vec<usize> = (0..x0.batch()).map(|_| g.gen_range(1..=sched.steps())).collect();
    let eps = noise_like(x0, cov, derive_seed(seed, &[1]))?;
    let mut xt = x0.clone();
    for (i, &t) in ts.iter().enumerate() {
        let (a, s) = (sched.alpha_bar(t).sqrt(), sched.sigma(t));
        for (v, &e) in xt.sample_mut(i).iter_mut().zip(eps.sample(i)) {
            *v = a * *v + s * e;
        }
    }
    Ok((xt, ts, eps))
}

/// Trains a fresh network on the shaped-noise objective.
pub fn train_eps_predictor<R: Real, D: DataSource<R> + ?Sized>(
    data: &D,
    sched: &DiffusionSchedule<R>,
    cov: &AnisotropicCovariance<R>,
    config: &TrainConfig,
) -> Result<(DenseNet<R>, TrainReport)> {
    config.validate()?;
    let probe = data.draw(1, derive_seed(config.seed, &[9]))?;
    let spec = NetSpec {
        dim: probe.sample_len(),
        embed: config.embed,
        hidden: config.hidden,
        activation: Activation::Silu,
        skip: config.skip,
    };
    let mut net = DenseNet::new(spec, sched, derive_seed(config.seed, &[0]))?;
    let n = net.num_params();
    let mut m = vec![R::zero(); n];
    let mut v = vec![R::zero(); n];
    let mut loss = Vec::with_capacity(config.steps);
    let (b1, b2, adam_eps) = (0.9f64, 0.999f64, 1e-8f64);
    for step in 0..config.steps {
        let x0 = data.draw(config.batch, derive_seed(config.seed, &[1, step as u64]))?;
        if x0.batch() != config.batch {
            return invalid(format!("data source returned {} samples, wanted {}", x0.batch(), config.batch));
        }
        let (xt, ts, eps) = noised_batch(&x0, sched, cov, derive_seed(config.seed, &[2, step as u64]))?;
        let (l, g) = net.loss_and_grad(&xt, &ts, &eps)?;
        let l = l.as_f64();
        if !l.is_finite() || g.iter().any(|x| !x.is_finite()) {
            return Err(SagdError::NonFinite { step, what: "training loss".into() });
        }
        loss.push(l);
        let lr = config.lr_at(step);
        match config.optimizer {
            Optimizer::Sgd => net.add_scaled(&g, R::of(-lr)),
            Optimizer::Momentum => {
                let mu = R::of(config.momentum);
                m.iter_mut().zip(&g).for_each(|(mi, &gi)| *mi = mu * *mi + gi);
                net.add_scaled(&m, R::of(-lr));
            }
            Optimizer::Adam => {
                let k = (step + 1) as i32;
                let (c1, c2) = (1.0 - b1.powi(k), 1.0 - b2.powi(k));
                let step_dir: Vec<R> = m
                    .iter_mut()
                    .zip(v.iter_mut())
                    .zip(&g)
                    .map(|((mi, vi), &gi)| {
                        *mi = R::of(b1) * *mi + R::of(1.0 - b1) * gi;
                        *vi = R::of(b2) * *vi + R::of(1.0 - b2) * gi * gi;
                        let mhat = mi.as_f64() / c1;
                        let vhat = vi.as_f64() / c2;
                        R::of(mhat / (vhat.sqrt() + adam_eps))
                    })
                    .collect();
                net.add_scaled(&step_dir, R::of(-lr));
            }
        }
    }
    Ok((net, TrainReport { loss }))
}

/// `sqrt(Σ‖a - b‖² / Σ‖b‖²)`.
pub fn relative_error<R: Real>(a: &TensorField<R>, reference: &TensorField<R>) -> Result<f64> {
    a.check_same_shape(reference)?;
    let num: f64 = a.data().iter().zip(reference.data()).map(|(x, y)| (x.as_f64() - y.as_f64()).powi(2)).sum();
    let den: f64 = reference.data().iter().map(|y| y.as_f64().powi(2)).sum();
    if den <= 0.0 {
        return invalid("reference is identically zero");
    }
    Ok((num / den).sqrt())
}
