use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use super::config::{Objective, StiefelGradient, TrainConfig, VProjection};
use crate::autodiff::{Tape, Var};
use crate::data::{self, MixtureSpec, NoisePrior};
use crate::error::{Error, Result};
use crate::features::{one_hot, FeatureMap, Generator, MlpFeatureMap};
use crate::norm::Norm;
use crate::objectives::graph;
use crate::optim::{self, rmsprop_step, Direction, RmsPropState};
use crate::params::ParamStore;
use crate::rng::{stream, StreamId};
use crate::tensor::Tensor;

/// Header of the trace CSV.
pub const TRACE_HEADER: &str = "iter,loss,wall_ms,grad_norm,param_norm";

/// One logged generator update.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TrainRecord {
    /// 1-based generator update index.
    pub iter: u64,
    /// Critic IPM estimate at the last critic iteration before this update.
    pub loss: f64,
    /// Milliseconds since the run started (excluded from determinism checks).
    pub wall_ms: f64,
    /// `‖∇_θ‖₂` of the generator step.
    pub grad_norm: f64,
    /// `‖θ‖₂` after the generator step.
    pub param_norm: f64,
    /// Largest `max|UᵀU − I|` (over U and V) seen since the previous record.
    pub stiefel_dev: f64,
    /// Largest `max|ω|` after clipping since the previous record.
    pub omega_max: f64,
}

impl TrainRecord {
    /// Equality on every field except `wall_ms`, bit for bit.
    pub fn same_run(&self, other: &Self) -> bool {
        self.iter == other.iter
            && self.loss.to_bits() == other.loss.to_bits()
            && self.grad_norm.to_bits() == other.grad_norm.to_bits()
            && self.param_norm.to_bits() == other.param_norm.to_bits()
            && self.stiefel_dev.to_bits() == other.stiefel_dev.to_bits()
            && self.omega_max.to_bits() == other.omega_max.to_bits()
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct TrainTrace {
    records: Vec<TrainRecord>,
}

impl TrainTrace {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, r: TrainRecord) -> Result<()> {
        if let Some(last) = self.records.last() {
            if r.iter <= last.iter {
                return Err(Error::contract(format!("trace iterations must increase: {} after {}", r.iter, last.iter)));
            }
        }
        self.records.push(r);
        Ok(())
    }

    pub fn records(&self) -> &[TrainRecord] {
        &self.records
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn losses(&self) -> Vec<f64> {
        self.records.iter().map(|r| r.loss).collect()
    }

    /// Bitwise comparison ignoring wall time.
    pub fn same_run(&self, other: &Self) -> bool {
        self.records.len() == other.records.len() && self.records.iter().zip(&other.records).all(|(a, b)| a.same_run(b))
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from(TRACE_HEADER);
        s.push('\n');
        for r in &self.records {
            s.push_str(&format!("{},{},{},{},{}\n", r.iter, r.loss, r.wall_ms, r.grad_norm, r.param_norm));
        }
        s
    }

    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let mut f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        f.write_all(self.to_csv().as_bytes()).map_err(|e| Error::io(path, e))
    }
}

/// Trailing moving average: entry `t` averages `x[t+1-w ..= t]`, or the
/// available prefix when `t < w - 1`.
pub fn smooth(x: &[f64], window: usize) -> Vec<f64> {
    let w = window.max(1);
    let mut out = Vec::with_capacity(x.len());
    let mut acc = 0.0;
    for i in 0..x.len() {
        acc += x[i];
        if i >= w {
            acc -= x[i - w];
        }
        out.push(acc / (i + 1).min(w) as f64);
    }
    out
}

/// Real-data draws, split by the phase that consumed them.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct SampleCounters {
    pub critic_real: u64,
    pub critic_labeled: u64,
    pub generator_real: u64,
}

/// Names of the critic head parameters.
pub const HEAD_V: &str = "v";
pub const HEAD_U: &str = "U";
pub const HEAD_V_COV: &str = "V";
pub const HEAD_S: &str = "S";

/// Keeps critic heads feasible after an ascent step: `v` is projected (ball
/// or clip), `U` and `V` are QR-retracted. Returns the worst Stiefel
/// deviation afterwards (0 when there are no covariance heads).
pub fn project_heads(heads: &mut ParamStore, p: Norm, projection: VProjection) -> Result<f64> {
    let mut dev = 0.0f64;
    for i in 0..heads.len() {
        let name = heads.names()[i].clone();
        let t = heads.tensor(i);
        let projected = match name.as_str() {
            HEAD_V => match projection {
                VProjection::Ball => optim::project_lp_ball(t, p)?,
                VProjection::Clip => optim::clip_tensor(t, 1.0)?,
            },
            HEAD_U | HEAD_V_COV => {
                let q = optim::qr_retraction(t)?;
                dev = dev.max(optim::stiefel_deviation(&q)?);
                q
            }
            _ => continue,
        };
        heads.set(i, projected)?;
    }
    Ok(dev)
}

/// One ascent step on the critic heads followed by [`project_heads`]: the
/// head half of a critic iteration.
pub fn critic_head_update(
    heads: &mut ParamStore,
    state: &mut RmsPropState,
    grads: &[Tensor],
    lr: f64,
    p: Norm,
    projection: VProjection,
    stiefel: StiefelGradient,
) -> Result<f64> {
    let mut grads = grads.to_vec();
    if stiefel == StiefelGradient::Tangent {
        for (i, g) in grads.iter_mut().enumerate() {
            if matches!(heads.names()[i].as_str(), HEAD_U | HEAD_V_COV) {
                *g = optim::tangent_projection(heads.tensor(i), g)?;
            }
        }
    }
    rmsprop_step(state, heads, &grads, lr, Direction::Ascent)?;
    project_heads(heads, p, projection)
}

/// Covariance critic ascent on `(U, V)` for fixed feature batches, using
/// the same update as the training loop (frozen `ω`, frozen data).
#[derive(Clone, Debug)]
pub struct StiefelAscent {
    pub heads: ParamStore,
    pub state: RmsPropState,
    pub lr: f64,
    pub gradient: StiefelGradient,
}

impl StiefelAscent {
    pub fn new(u: Tensor, v: Tensor, lr: f64) -> Result<Self> {
        let mut heads = ParamStore::new();
        heads.insert(HEAD_U, optim::qr_retraction(&u)?)?;
        heads.insert(HEAD_V_COV, optim::qr_retraction(&v)?)?;
        let state = RmsPropState::with_defaults(&heads)?;
        Ok(Self { heads, state, lr, gradient: StiefelGradient::default() })
    }

    pub fn with_gradient(mut self, gradient: StiefelGradient) -> Self {
        self.gradient = gradient;
        self
    }

    pub fn u(&self) -> &Tensor {
        self.heads.tensor(0)
    }

    pub fn v(&self) -> &Tensor {
        self.heads.tensor(1)
    }

    /// Takes one step; returns the loss before the step.
    pub fn step(&mut self, phi_real: &Tensor, phi_fake: &Tensor) -> Result<f64> {
        let mut tape = Tape::new();
        let h = self.heads.bind(&mut tape);
        let fr = tape.constant(phi_real.clone());
        let ff = tape.constant(phi_fake.clone());
        let loss = graph::cov_primal(&mut tape, h[0], h[1], fr, ff)?;
        let value = tape.value(loss).item()?;
        let grads = tape.backward(loss)?.collect(&h)?;
        critic_head_update(
            &mut self.heads,
            &mut self.state,
            &grads,
            self.lr,
            Norm::L2,
            VProjection::Ball,
            self.gradient,
        )?;
        Ok(value)
    }

    /// Current `Tr(Uᵀ(Σ̂_r − Σ̂_f)V)` without stepping.
    pub fn value(&self, phi_real: &Tensor, phi_fake: &Tensor) -> Result<f64> {
        let mut tape = Tape::new();
        let h = self.heads.bind_constant(&mut tape);
        let fr = tape.constant(phi_real.clone());
        let ff = tape.constant(phi_fake.clone());
        let loss = graph::cov_primal(&mut tape, h[0], h[1], fr, ff)?;
        tape.value(loss).item()
    }
}

/// Per-consumer random streams of a run.
#[derive(Clone, Debug)]
pub(crate) struct Streams {
    pub real: ChaCha8Rng,
    pub noise: ChaCha8Rng,
    pub gen_labels: ChaCha8Rng,
    pub labeled: ChaCha8Rng,
    pub gen_real: ChaCha8Rng,
}

impl Streams {
    fn new(seed: u64) -> Self {
        Self {
            real: stream(seed, StreamId::Real),
            noise: stream(seed, StreamId::Noise),
            gen_labels: stream(seed, StreamId::GenLabels),
            labeled: stream(seed, StreamId::Labeled),
            gen_real: stream(seed, StreamId::GeneratorReal),
        }
    }

    pub fn all(&self) -> [&ChaCha8Rng; 5] {
        [&self.real, &self.noise, &self.gen_labels, &self.labeled, &self.gen_real]
    }

    pub fn all_mut(&mut self) -> [&mut ChaCha8Rng; 5] {
        [&mut self.real, &mut self.noise, &mut self.gen_labels, &mut self.labeled, &mut self.gen_real]
    }
}

/// Running maxima between two logged records.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub(crate) struct Window {
    pub stiefel_dev: f64,
    pub omega_max: f64,
}

/// The trainable models of a run.
#[derive(Clone, Debug, PartialEq)]
pub struct Models {
    pub phi: MlpFeatureMap,
    pub generator: Generator,
    /// Critic heads: `v` (mean), `U`, `V` (covariance), `S` (label head).
    pub heads: ParamStore,
}

impl Models {
    /// Fresh models for `config`, each parameter group from its own stream.
    pub fn init(config: &TrainConfig, spec: &MixtureSpec) -> Result<Self> {
        let d = spec.dim();
        let m = config.feature_dim;
        let seed = config.seed;
        let phi = MlpFeatureMap::new(d, &config.hidden, m, config.init_scale, &mut stream(seed, StreamId::InitPhi))?;
        let classes = config.uses_conditional_generator().then(|| spec.classes()).flatten();
        if config.uses_conditional_generator() && classes.is_none() {
            return Err(Error::Config("conditional generator needs a labeled dataset".into()));
        }
        let generator = Generator::new(
            config.noise_dim,
            classes,
            &config.hidden,
            d,
            config.init_scale,
            &mut stream(seed, StreamId::InitGenerator),
        )?;
        let mut heads = ParamStore::new();
        if config.objective.has_mean_direction() {
            let mut rng = stream(seed, StreamId::InitMean);
            let v: Vec<f64> = (0..m).map(|_| rng.random_range(-1.0..=1.0)).collect();
            let v = Tensor::vector(v)?;
            let v = match config.v_projection {
                VProjection::Ball => optim::project_lp_ball(&v, config.p)?,
                VProjection::Clip => v,
            };
            heads.insert(HEAD_V, v)?;
        }
        if config.objective.has_cov_directions() {
            let mut rng = stream(seed, StreamId::InitCov);
            for name in [HEAD_U, HEAD_V_COV] {
                let g: Vec<f64> = (0..m * config.k).map(|_| rng.sample(StandardNormal)).collect();
                heads.insert(name, optim::qr_retraction(&Tensor::matrix(m, config.k, g)?)?)?;
            }
        }
        if config.objective == Objective::Conditional {
            let classes =
                spec.classes().ok_or_else(|| Error::Config("conditional objective needs a labeled dataset".into()))?;
            let mut rng = stream(seed, StreamId::InitHead);
            let s = config.init_scale;
            let vals: Vec<f64> =
                (0..classes * m).map(|_| if s > 0.0 { rng.random_range(-s..=s) } else { 0.0 }).collect();
            heads.insert(HEAD_S, Tensor::matrix(classes, m, vals)?)?;
        }
        Ok(Self { phi, generator, heads })
    }

    pub fn head(&self, name: &str) -> Option<&Tensor> {
        self.heads.get(name)
    }
}

/// State of a run: models, optimizer caches, random streams and the trace.
#[derive(Clone, Debug)]
pub struct Trainer {
    pub(crate) config: TrainConfig,
    pub(crate) spec: MixtureSpec,
    pub(crate) models: Models,
    pub(crate) opt_phi: RmsPropState,
    pub(crate) opt_gen: RmsPropState,
    pub(crate) opt_heads: RmsPropState,
    pub(crate) streams: Streams,
    pub(crate) step: u64,
    pub(crate) elapsed_ms: f64,
    pub(crate) last_loss: f64,
    pub(crate) window: Window,
    pub(crate) counters: SampleCounters,
    pub(crate) trace: TrainTrace,
}

impl Trainer {
    pub fn new(config: TrainConfig) -> Result<Self> {
        config.validate()?;
        let spec = config.mixture_spec()?;
        let models = Models::init(&config, &spec)?;
        Self::with_models(config, models)
    }

    /// Starts a run from given models (shapes must match `config`).
    pub fn with_models(config: TrainConfig, models: Models) -> Result<Self> {
        config.validate()?;
        let spec = config.mixture_spec()?;
        let expected = Models::init(&config, &spec)?;
        check_layout("phi", &expected.phi.params, &models.phi.params)?;
        check_layout("generator", &expected.generator.params, &models.generator.params)?;
        check_layout("heads", &expected.heads, &models.heads)?;
        let (a, e) = (config.rms_alpha, config.rms_eps);
        Ok(Self {
            opt_phi: RmsPropState::new(&models.phi.params, a, e)?,
            opt_gen: RmsPropState::new(&models.generator.params, a, e)?,
            opt_heads: RmsPropState::new(&models.heads, a, e)?,
            streams: Streams::new(config.seed),
            spec,
            models,
            config,
            step: 0,
            elapsed_ms: 0.0,
            last_loss: 0.0,
            window: Window::default(),
            counters: SampleCounters::default(),
            trace: TrainTrace::new(),
        })
    }

    pub fn config(&self) -> &TrainConfig {
        &self.config
    }

    pub fn spec(&self) -> &MixtureSpec {
        &self.spec
    }

    pub fn models(&self) -> &Models {
        &self.models
    }

    pub fn trace(&self) -> &TrainTrace {
        &self.trace
    }

    pub fn into_parts(self) -> (TrainTrace, Models) {
        (self.trace, self.models)
    }

    /// Completed generator updates.
    pub fn step(&self) -> u64 {
        self.step
    }

    pub fn counters(&self) -> SampleCounters {
        self.counters
    }

    pub fn is_done(&self) -> bool {
        self.step >= self.config.generator_updates as u64
    }

    /// Runs up to `config.generator_updates`.
    pub fn run(&mut self) -> Result<()> {
        let remaining = (self.config.generator_updates as u64).saturating_sub(self.step);
        self.run_for(remaining)
    }

    /// Runs `updates` more outer steps (`n_c` critic iterations plus one
    /// generator update each). A non-finite loss aborts the run; when a
    /// checkpoint path is configured the state at the failure is saved next
    /// to it with a `.diverged` suffix.
    pub fn run_for(&mut self, updates: u64) -> Result<()> {
        for _ in 0..updates {
            let t0 = Instant::now();
            if let Err(e) = self.outer_step() {
                return Err(match e {
                    Error::Numeric(msg) => {
                        let saved = match self.diagnostic_path() {
                            Some(p) => match self.save_checkpoint(&p) {
                                Ok(()) => format!("; state saved to {}", p.display()),
                                Err(e) => format!("; diagnostic checkpoint failed: {e}"),
                            },
                            None => String::new(),
                        };
                        Error::Numeric(format!("generator update {}: {msg}{saved}", self.step + 1))
                    }
                    other => other,
                });
            }
            self.elapsed_ms += t0.elapsed().as_secs_f64() * 1e3;
            let every = self.config.checkpoint_every as u64;
            if every > 0 && self.step.is_multiple_of(every) {
                if let Some(p) = &self.config.checkpoint_path {
                    self.save_checkpoint(p)?;
                }
            }
        }
        Ok(())
    }

    /// Critic iterations only, with the generator frozen. Fake batches come
    /// from the generator, or from `fake` when given (drawn on the noise
    /// stream). Returns the critic loss of every iteration. Does not touch
    /// the step count or the trace.
    pub fn critic_steps(&mut self, iterations: usize, fake: Option<&MixtureSpec>) -> Result<Vec<f64>> {
        (0..iterations).map(|_| self.critic_iteration(fake)).collect()
    }

    fn diagnostic_path(&self) -> Option<PathBuf> {
        self.config.checkpoint_path.as_ref().map(|p| {
            let mut s = p.clone().into_os_string();
            s.push(".diverged");
            PathBuf::from(s)
        })
    }

    fn outer_step(&mut self) -> Result<()> {
        for _ in 0..self.config.critic_iters {
            self.last_loss = self.critic_iteration(None)?;
        }
        let (grad_norm, param_norm) = self.generator_update()?;
        self.step += 1;
        if self.step.is_multiple_of(self.config.log_every as u64) {
            self.trace.push(TrainRecord {
                iter: self.step,
                loss: self.last_loss,
                wall_ms: self.elapsed_ms,
                grad_norm,
                param_norm,
                stiefel_dev: self.window.stiefel_dev,
                omega_max: self.window.omega_max,
            })?;
            self.window = Window::default();
        }
        Ok(())
    }

    /// Noise and (for a conditional generator) one-hot labels.
    fn generator_input(&mut self, n: usize) -> Result<(Tensor, Option<Vec<usize>>, Option<Tensor>)> {
        let prior = NoisePrior::new(self.config.noise_dim)?;
        let z = data::sample_noise(&prior, n, &mut self.streams.noise)?;
        match self.models.generator.classes {
            Some(k) => {
                let labels = data::sample_labels(k, n, &mut self.streams.gen_labels);
                let y = one_hot(&labels, k)?;
                Ok((z, Some(labels), Some(y)))
            }
            None => Ok((z, None, None)),
        }
    }

    fn weights(&self) -> (f64, f64) {
        match self.config.objective {
            Objective::MeanPrimal => (1.0, 0.0),
            Objective::Cov | Objective::Conditional => (0.0, 1.0),
            Objective::Combined => (self.config.mean_weight, self.config.cov_weight),
            Objective::MeanDual => (0.0, 0.0),
        }
    }

    fn critic_iteration(&mut self, fake_spec: Option<&MixtureSpec>) -> Result<f64> {
        let n = self.config.batch;
        let real = data::sample_real(&self.spec, n, &mut self.streams.real)?.points;
        self.counters.critic_real += n as u64;
        let fake = match fake_spec {
            Some(spec) => data::sample_real(spec, n, &mut self.streams.noise)?.points,
            None => {
                let (z, _, y) = self.generator_input(n)?;
                self.models.generator.generate(&z, y.as_ref())?
            }
        };

        let mut tape = Tape::new();
        let w = self.models.phi.params.bind(&mut tape);
        let h = self.models.heads.bind(&mut tape);
        let xr = tape.constant(real);
        let xf = tape.constant(fake);
        let fr = self.models.phi.record(&mut tape, &w, xr)?;
        let ff = self.models.phi.record(&mut tape, &w, xf)?;
        let loss = match self.config.objective {
            Objective::MeanDual => graph::mean_dual(&mut tape, self.config.q, fr, ff, self.config.squared_dual)?,
            _ => {
                let ipm = self.ipm_terms(&mut tape, &h, fr, ff)?;
                self.subtract_label_term(&mut tape, &w, &h, ipm)?
            }
        };
        let value = tape.value(loss).item()?;
        if !value.is_finite() {
            return Err(Error::numeric(format!("non-finite critic loss {value}")));
        }
        let grads = tape.backward(loss)?;
        let mut gw = grads.collect(&w)?;
        let wd = self.config.weight_decay;
        if wd > 0.0 {
            for (g, p) in gw.iter_mut().zip(self.models.phi.params.tensors()) {
                *g = g.sub(&p.scale(wd)?)?;
            }
        }
        let gh = grads.collect(&h)?;
        let lr = self.config.lr;
        rmsprop_step(&mut self.opt_phi, &mut self.models.phi.params, &gw, lr, Direction::Ascent)?;
        if !self.models.heads.is_empty() {
            let dev = critic_head_update(
                &mut self.models.heads,
                &mut self.opt_heads,
                &gh,
                lr,
                self.config.p,
                self.config.v_projection,
                self.config.stiefel_gradient,
            )?;
            self.window.stiefel_dev = self.window.stiefel_dev.max(dev);
        }
        optim::clip_in_place(&mut self.models.phi.params, self.config.clip)?;
        self.window.omega_max = self.window.omega_max.max(self.models.phi.params.max_abs());
        Ok(value)
    }

    /// `w_μ·⟨v, Δμ̂⟩ + w_Σ·Tr(Uᵀ Δ̂ V)`, skipping zero-weight terms.
    fn ipm_terms(&self, tape: &mut Tape, h: &[Var], fr: Var, ff: Var) -> Result<Var> {
        let (wm, wc) = self.weights();
        let heads = &self.models.heads;
        let idx = |name: &str| heads.index_of(name).map(|i| h[i]);
        let zero = tape.constant(Tensor::scalar(0.0)?);
        let (v, u, vv) = (idx(HEAD_V).unwrap_or(zero), idx(HEAD_U).unwrap_or(zero), idx(HEAD_V_COV).unwrap_or(zero));
        graph::combined(tape, v, u, vv, fr, ff, crate::objectives::LossWeights { mean: wm, cov: wc })
    }

    fn subtract_label_term(&mut self, tape: &mut Tape, w: &[Var], h: &[Var], ipm: Var) -> Result<Var> {
        let lambda = self.config.lambda_d;
        if self.config.objective != Objective::Conditional || lambda == 0.0 {
            return Ok(ipm);
        }
        let n = self.config.batch;
        let labeled = data::sample_real(&self.spec, n, &mut self.streams.labeled)?;
        self.counters.critic_labeled += n as u64;
        let labels = labeled.labels.expect("labeled dataset checked at init");
        let xl = tape.constant(labeled.points);
        let fl = self.models.phi.record(tape, w, xl)?;
        let s = h[self.models.heads.index_of(HEAD_S).expect("label head")];
        let ce = graph::cross_entropy(tape, s, fl, &labels)?;
        let ce = tape.scale(ce, lambda)?;
        tape.sub(ipm, ce)
    }

    fn generator_update(&mut self) -> Result<(f64, f64)> {
        let n = self.config.batch;
        let (z, labels, y) = self.generator_input(n)?;
        let mut tape = Tape::new();
        let th = self.models.generator.params.bind(&mut tape);
        let x = self.models.generator.record(&mut tape, &th, &z, y.as_ref())?;
        let w = self.models.phi.params.bind_constant(&mut tape);
        let ff = self.models.phi.record(&mut tape, &w, x)?;
        let loss = match self.config.objective {
            Objective::MeanDual => {
                let m = self.config.real_multiplier * n;
                let real = data::sample_real(&self.spec, m, &mut self.streams.gen_real)?.points;
                self.counters.generator_real += m as u64;
                let fr = tape.constant(self.models.phi.features(&real)?);
                graph::mean_dual(&mut tape, self.config.q, fr, ff, self.config.squared_dual)?
            }
            _ => {
                let h = self.models.heads.bind_constant(&mut tape);
                let fake = self.fake_terms(&mut tape, &h, ff)?;
                let loss = tape.neg(fake)?;
                let lambda = self.config.lambda_g;
                if self.config.objective == Objective::Conditional && lambda != 0.0 {
                    let labels = labels.expect("conditional objective uses a conditional generator");
                    let s = h[self.models.heads.index_of(HEAD_S).expect("label head")];
                    let ce = graph::cross_entropy(&mut tape, s, ff, &labels)?;
                    let ce = tape.scale(ce, lambda)?;
                    tape.add(loss, ce)?
                } else {
                    loss
                }
            }
        };
        let value = tape.value(loss).item()?;
        if !value.is_finite() {
            return Err(Error::numeric(format!("non-finite generator loss {value}")));
        }
        let grads = tape.backward(loss)?.collect(&th)?;
        let grad_norm = grads.iter().map(|g| g.dot(g).unwrap_or(0.0)).sum::<f64>().sqrt();
        rmsprop_step(&mut self.opt_gen, &mut self.models.generator.params, &grads, self.config.lr, Direction::Descent)?;
        Ok((grad_norm, self.models.generator.params.norm2()))
    }

    /// Fake-side terms `w_μ·⟨v, mean Φ(g)⟩ + w_Σ·(1/N)Σ⟨UᵀΦ(g), VᵀΦ(g)⟩`.
    fn fake_terms(&self, tape: &mut Tape, h: &[Var], ff: Var) -> Result<Var> {
        let (wm, wc) = self.weights();
        let heads = &self.models.heads;
        let mut total: Option<Var> = None;
        if wm != 0.0 {
            let v = h[heads.index_of(HEAD_V).expect("mean head")];
            let mf = tape.mean_rows(ff)?;
            let t = tape.dot(v, mf)?;
            total = Some(if wm == 1.0 { t } else { tape.scale(t, wm)? });
        }
        if wc != 0.0 {
            let u = h[heads.index_of(HEAD_U).expect("cov head")];
            let v = h[heads.index_of(HEAD_V_COV).expect("cov head")];
            let t = graph::bilinear_mean(tape, ff, u, v)?;
            let t = if wc == 1.0 { t } else { tape.scale(t, wc)? };
            total = Some(match total {
                Some(a) => tape.add(a, t)?,
                None => t,
            });
        }
        total.ok_or_else(|| Error::contract("no generator loss term has nonzero weight"))
    }

    /// Generator samples from a dedicated evaluation stream.
    pub fn sample_generator(&self, n: usize, seed: u64) -> Result<Tensor> {
        let mut rng = stream(seed, StreamId::Eval);
        let prior = NoisePrior::new(self.config.noise_dim)?;
        let z = data::sample_noise(&prior, n, &mut rng)?;
        let y = match self.models.generator.classes {
            Some(k) => Some(one_hot(&data::sample_labels(k, n, &mut rng), k)?),
            None => None,
        };
        self.models.generator.generate(&z, y.as_ref())
    }
}

fn check_layout(what: &str, expected: &ParamStore, got: &ParamStore) -> Result<()> {
    let same = expected.names() == got.names()
        && expected.tensors().iter().zip(got.tensors()).all(|(a, b)| a.shape() == b.shape());
    if same {
        Ok(())
    } else {
        Err(Error::Config(format!(
            "{what} parameters {:?} do not match the configured layout {:?}",
            got.names(),
            expected.names()
        )))
    }
}

fn run_checked(config: &TrainConfig, allowed: &[Objective]) -> Result<Trainer> {
    if !allowed.contains(&config.objective) {
        return Err(Error::Config(format!(
            "objective `{}` does not match this training loop",
            config.objective.name()
        )));
    }
    let mut t = Trainer::new(config.clone())?;
    t.run()?;
    Ok(t)
}

/// Mean matching, primal form: critic ascends `(v, ω)`, `v` stays in the
/// unit `ℓ_p` ball; the generator never sees real data.
pub fn train_mean_primal(config: &TrainConfig) -> Result<Trainer> {
    run_checked(config, &[Objective::MeanPrimal])
}

/// Mean matching, dual form: the critic ascends `ω` on `‖Δμ̂‖_q`; the
/// generator step draws `real_multiplier · N` real samples.
pub fn train_mean_dual(config: &TrainConfig) -> Result<Trainer> {
    run_checked(config, &[Objective::MeanDual])
}

/// Covariance matching, primal form with QR-retracted `(U, V)`.
pub fn train_cov_primal(config: &TrainConfig) -> Result<Trainer> {
    run_checked(config, &[Objective::Cov])
}

/// Weighted mean plus covariance matching.
pub fn train_combined(config: &TrainConfig) -> Result<Trainer> {
    run_checked(config, &[Objective::Combined])
}

/// Covariance matching with a softmax label head on labeled data.
pub fn train_conditional(config: &TrainConfig) -> Result<Trainer> {
    run_checked(config, &[Objective::Conditional])
}

/// Dispatches on `config.objective`.
pub fn train(config: &TrainConfig) -> Result<Trainer> {
    let mut t = Trainer::new(config.clone())?;
    t.run()?;
    Ok(t)
}
