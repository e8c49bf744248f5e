//! Feature maps `Φ_ω : R^d → R^m` and the generator `g_θ`.

use rand::Rng;
use rand_distr::{Distribution, StandardNormal, Uniform};

use crate::autodiff::{Tape, Var};
use crate::error::{Error, Result};
use crate::params::ParamStore;
use crate::tensor::Tensor;

/// Anything that embeds a `batch × d` sample matrix into `batch × m` features.
pub trait FeatureMap {
    fn input_dim(&self) -> usize;
    fn output_dim(&self) -> usize;

    /// Trainable parameters, if any. Their order defines the `params` slice
    /// expected by [`FeatureMap::record`].
    fn params(&self) -> Option<&ParamStore>;

    /// Evaluates the map without recording anything.
    fn features(&self, x: &Tensor) -> Result<Tensor>;

    /// Records the map on `tape`. `params` are the tape variables bound to
    /// [`FeatureMap::params`] (empty for parameter-free maps).
    fn record(&self, tape: &mut Tape, params: &[Var], x: Var) -> Result<Var>;
}

fn check_width(x: &Tensor, d: usize, op: &'static str) -> Result<()> {
    let (_, c) = x.require_matrix(op)?;
    if c != d {
        return Err(Error::dim(op, x.shape(), &[x.rows(), d]));
    }
    Ok(())
}

/// Fully connected ReLU network layout. Parameters are named `w{i}` (`in ×
/// out`, applied as `x·W`) and `b{i}`.
#[derive(Clone, Debug, PartialEq)]
pub struct Mlp {
    pub sizes: Vec<usize>,
    /// Apply ReLU after the last layer too.
    pub output_relu: bool,
}

impl Mlp {
    pub fn new(sizes: Vec<usize>, output_relu: bool) -> Result<Self> {
        if sizes.len() < 2 || sizes.contains(&0) {
            return Err(Error::contract(format!("invalid MLP layout {sizes:?}")));
        }
        Ok(Self { sizes, output_relu })
    }

    pub fn num_layers(&self) -> usize {
        self.sizes.len() - 1
    }

    /// Draws every weight and bias uniformly from `[-scale, scale]`.
    pub fn init<R: Rng>(&self, rng: &mut R, scale: f64) -> Result<ParamStore> {
        let mut store = ParamStore::new();
        let dist = Uniform::new_inclusive(-scale, scale)
            .map_err(|e| Error::contract(format!("bad init scale {scale}: {e}")))?;
        for l in 0..self.num_layers() {
            let (i, o) = (self.sizes[l], self.sizes[l + 1]);
            let w = (0..i * o).map(|_| dist.sample(rng)).collect();
            store.insert(format!("w{l}"), Tensor::matrix(i, o, w)?)?;
            let b = (0..o).map(|_| dist.sample(rng)).collect();
            store.insert(format!("b{l}"), Tensor::vector(b)?)?;
        }
        Ok(store)
    }

    pub fn zeros(&self) -> Result<ParamStore> {
        let mut store = ParamStore::new();
        for l in 0..self.num_layers() {
            let (i, o) = (self.sizes[l], self.sizes[l + 1]);
            store.insert(format!("w{l}"), Tensor::zeros(vec![i, o]))?;
            store.insert(format!("b{l}"), Tensor::zeros(vec![o]))?;
        }
        Ok(store)
    }

    fn relu_after(&self, l: usize) -> bool {
        l + 1 < self.num_layers() || self.output_relu
    }

    pub fn forward(&self, params: &ParamStore, x: &Tensor) -> Result<Tensor> {
        check_width(x, self.sizes[0], "mlp forward")?;
        let mut h = x.clone();
        for l in 0..self.num_layers() {
            let w = params.tensor(2 * l);
            let b = params.tensor(2 * l + 1);
            h = h.matmul(w)?.add_row(b)?;
            if self.relu_after(l) {
                h = h.map(|v| if v > 0.0 { v } else { 0.0 })?;
            }
        }
        Ok(h)
    }

    pub fn record(&self, tape: &mut Tape, params: &[Var], x: Var) -> Result<Var> {
        check_width(tape.value(x), self.sizes[0], "mlp forward")?;
        if params.len() != 2 * self.num_layers() {
            return Err(Error::contract(format!(
                "MLP with {} layers got {} parameter variables",
                self.num_layers(),
                params.len()
            )));
        }
        let mut h = x;
        for l in 0..self.num_layers() {
            h = tape.matmul(h, params[2 * l])?;
            h = tape.add_row(h, params[2 * l + 1])?;
            if self.relu_after(l) {
                h = tape.relu(h)?;
            }
        }
        Ok(h)
    }
}

/// Learned critic feature map `Φ_ω`: `d → hidden… → m`, ReLU on every layer.
#[derive(Clone, Debug, PartialEq)]
pub struct MlpFeatureMap {
    pub mlp: Mlp,
    pub params: ParamStore,
}

impl MlpFeatureMap {
    pub fn new<R: Rng>(
        input_dim: usize,
        hidden: &[usize],
        output_dim: usize,
        init_scale: f64,
        rng: &mut R,
    ) -> Result<Self> {
        let mlp = Self::layout(input_dim, hidden, output_dim)?;
        let params = mlp.init(rng, init_scale)?;
        Ok(Self { mlp, params })
    }

    pub fn layout(input_dim: usize, hidden: &[usize], output_dim: usize) -> Result<Mlp> {
        let mut sizes = vec![input_dim];
        sizes.extend_from_slice(hidden);
        sizes.push(output_dim);
        Mlp::new(sizes, true)
    }
}

impl FeatureMap for MlpFeatureMap {
    fn input_dim(&self) -> usize {
        self.mlp.sizes[0]
    }

    fn output_dim(&self) -> usize {
        *self.mlp.sizes.last().unwrap()
    }

    fn params(&self) -> Option<&ParamStore> {
        Some(&self.params)
    }

    fn features(&self, x: &Tensor) -> Result<Tensor> {
        self.mlp.forward(&self.params, x)
    }

    fn record(&self, tape: &mut Tape, params: &[Var], x: Var) -> Result<Var> {
        self.mlp.record(tape, params, x)
    }
}

/// Frozen random Fourier features of a Gaussian kernel with bandwidth `σ`:
/// `φ(x) = √(2/m) · cos(W x + b)`, `W_ij ~ N(0, 1/σ²)`, `b_i ~ U[0, 2π)`.
#[derive(Clone, Debug, PartialEq)]
pub struct RandomFourierMap {
    /// `m × d` frequencies.
    pub frequencies: Tensor,
    /// Length-`m` phases.
    pub phases: Tensor,
    pub bandwidth: f64,
}

impl RandomFourierMap {
    pub fn new<R: Rng>(input_dim: usize, output_dim: usize, bandwidth: f64, rng: &mut R) -> Result<Self> {
        if !(bandwidth > 0.0 && bandwidth.is_finite()) {
            return Err(Error::contract(format!("bandwidth must be positive, got {bandwidth}")));
        }
        if input_dim == 0 || output_dim == 0 {
            return Err(Error::contract("random Fourier map needs positive dimensions"));
        }
        let w = (0..output_dim * input_dim)
            .map(|_| {
                let z: f64 = StandardNormal.sample(rng);
                z / bandwidth
            })
            .collect();
        let phase = Uniform::new(0.0, 2.0 * std::f64::consts::PI).unwrap();
        let b = (0..output_dim).map(|_| phase.sample(rng)).collect();
        Ok(Self { frequencies: Tensor::matrix(output_dim, input_dim, w)?, phases: Tensor::vector(b)?, bandwidth })
    }

    /// Builds the map from a seed alone, so `(seed, m, σ, d)` fully
    /// determines it.
    pub fn from_seed(input_dim: usize, output_dim: usize, bandwidth: f64, seed: u64) -> Result<Self> {
        use rand::SeedableRng;
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        Self::new(input_dim, output_dim, bandwidth, &mut rng)
    }

    fn amplitude(&self) -> f64 {
        (2.0 / self.output_dim() as f64).sqrt()
    }
}

impl FeatureMap for RandomFourierMap {
    fn input_dim(&self) -> usize {
        self.frequencies.shape()[1]
    }

    fn output_dim(&self) -> usize {
        self.frequencies.shape()[0]
    }

    fn params(&self) -> Option<&ParamStore> {
        None
    }

    fn features(&self, x: &Tensor) -> Result<Tensor> {
        check_width(x, self.input_dim(), "fourier features")?;
        let a = self.amplitude();
        Tensor::matmul_t(x, false, &self.frequencies, true)?.add_row(&self.phases)?.map(|v| a * v.cos())
    }

    fn record(&self, tape: &mut Tape, _params: &[Var], x: Var) -> Result<Var> {
        check_width(tape.value(x), self.input_dim(), "fourier features")?;
        let wt = tape.constant(self.frequencies.transpose()?);
        let b = tape.constant(self.phases.clone());
        let h = tape.matmul(x, wt)?;
        let h = tape.add_row(h, b)?;
        let h = tape.cos(h)?;
        tape.scale(h, self.amplitude())
    }
}

/// `Φ(x) = x`; handy when features are supplied directly.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct IdentityMap {
    pub dim: usize,
}

impl FeatureMap for IdentityMap {
    fn input_dim(&self) -> usize {
        self.dim
    }

    fn output_dim(&self) -> usize {
        self.dim
    }

    fn params(&self) -> Option<&ParamStore> {
        None
    }

    fn features(&self, x: &Tensor) -> Result<Tensor> {
        check_width(x, self.dim, "identity features")?;
        Ok(x.clone())
    }

    fn record(&self, tape: &mut Tape, _params: &[Var], x: Var) -> Result<Var> {
        check_width(tape.value(x), self.dim, "identity features")?;
        Ok(x)
    }
}

/// Median of pairwise Euclidean distances between rows, the usual bandwidth
/// heuristic for Gaussian kernels.
pub fn median_heuristic(samples: &Tensor) -> Result<f64> {
    let (n, _) = samples.require_matrix("median_heuristic")?;
    if n < 2 {
        return Err(Error::contract("median heuristic needs at least two samples"));
    }
    let mut d = Vec::with_capacity(n * (n - 1) / 2);
    for i in 0..n {
        for j in i + 1..n {
            let s: f64 = samples.row(i).iter().zip(samples.row(j)).map(|(a, b)| (a - b) * (a - b)).sum();
            d.push(s.sqrt());
        }
    }
    d.sort_by(f64::total_cmp);
    let mid = d.len() / 2;
    let med = if d.len() % 2 == 0 { 0.5 * (d[mid - 1] + d[mid]) } else { d[mid] };
    if med <= 0.0 {
        return Err(Error::numeric("median pairwise distance is zero"));
    }
    Ok(med)
}

/// One-hot encoding of `labels` into a `batch × classes` matrix.
pub fn one_hot(labels: &[usize], classes: usize) -> Result<Tensor> {
    if labels.is_empty() {
        return Err(Error::contract("one_hot of an empty label batch"));
    }
    let mut data = vec![0.0; labels.len() * classes];
    for (i, &y) in labels.iter().enumerate() {
        if y >= classes {
            return Err(Error::contract(format!("label {y} out of range for {classes} classes")));
        }
        data[i * classes + y] = 1.0;
    }
    Tensor::matrix(labels.len(), classes, data)
}

/// Generator `g_θ : R^{n_z} (⊕ one-hot label) → R^d`, ReLU hidden layers and
/// a linear output.
#[derive(Clone, Debug, PartialEq)]
pub struct Generator {
    pub mlp: Mlp,
    pub params: ParamStore,
    pub noise_dim: usize,
    /// Number of classes for the conditional variant.
    pub classes: Option<usize>,
}

impl Generator {
    pub fn layout(noise_dim: usize, classes: Option<usize>, hidden: &[usize], output_dim: usize) -> Result<Mlp> {
        let mut sizes = vec![noise_dim + classes.unwrap_or(0)];
        sizes.extend_from_slice(hidden);
        sizes.push(output_dim);
        Mlp::new(sizes, false)
    }

    pub fn new<R: Rng>(
        noise_dim: usize,
        classes: Option<usize>,
        hidden: &[usize],
        output_dim: usize,
        init_scale: f64,
        rng: &mut R,
    ) -> Result<Self> {
        let mlp = Self::layout(noise_dim, classes, hidden, output_dim)?;
        let params = mlp.init(rng, init_scale)?;
        Ok(Self { mlp, params, noise_dim, classes })
    }

    pub fn output_dim(&self) -> usize {
        *self.mlp.sizes.last().unwrap()
    }

    /// Network input for noise `z` and optional one-hot labels `y`.
    pub fn input(&self, z: &Tensor, y: Option<&Tensor>) -> Result<Tensor> {
        let (_, c) = z.require_matrix("generate")?;
        if c != self.noise_dim {
            return Err(Error::dim("generate", z.shape(), &[z.rows(), self.noise_dim]));
        }
        match (self.classes, y) {
            (None, None) => Ok(z.clone()),
            (Some(k), Some(y)) => {
                let (r, yc) = y.require_matrix("generate")?;
                if yc != k || r != z.rows() {
                    return Err(Error::dim("generate", y.shape(), &[z.rows(), k]));
                }
                Tensor::hstack(z, y)
            }
            (None, Some(_)) => Err(Error::contract("labels supplied to an unconditional generator")),
            (Some(_), None) => Err(Error::contract("conditional generator called without labels")),
        }
    }

    pub fn generate(&self, z: &Tensor, y: Option<&Tensor>) -> Result<Tensor> {
        let input = self.input(z, y)?;
        self.mlp.forward(&self.params, &input)
    }

    /// Records `g_θ` on the tape; `params` are bound to [`Generator::params`].
    pub fn record(&self, tape: &mut Tape, params: &[Var], z: &Tensor, y: Option<&Tensor>) -> Result<Var> {
        let input = self.input(z, y)?;
        let x = tape.constant(input);
        self.mlp.record(tape, params, x)
    }
}
