//! Synthetic real distributions (isotropic Gaussian mixtures) and the noise
//! prior.

use rand::distr::weighted::WeightedIndex;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Isotropic Gaussian mixture with a shared standard deviation.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MixtureSpec {
    pub centers: Vec<Vec<f64>>,
    pub stddev: f64,
    /// Mixing weights; uniform when omitted.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub weights: Option<Vec<f64>>,
    /// Class label per component, for conditional training.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub labels: Option<Vec<usize>>,
}

impl MixtureSpec {
    pub fn new(centers: Vec<Vec<f64>>, stddev: f64) -> Result<Self> {
        let spec = Self { centers, stddev, weights: None, labels: None };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        let Some(first) = self.centers.first() else {
            return Err(Error::Config("mixture needs at least one center".into()));
        };
        let d = first.len();
        if d == 0 || self.centers.iter().any(|c| c.len() != d) {
            return Err(Error::Config("mixture centers must share a positive dimension".into()));
        }
        if self.centers.iter().flatten().any(|x| !x.is_finite()) {
            return Err(Error::Config("mixture centers must be finite".into()));
        }
        if !(self.stddev > 0.0 && self.stddev.is_finite()) {
            return Err(Error::Config(format!("stddev must be positive, got {}", self.stddev)));
        }
        if let Some(w) = &self.weights {
            if w.len() != self.centers.len() {
                return Err(Error::Config("one weight per center required".into()));
            }
            if w.iter().any(|&x| !(x >= 0.0)) {
                return Err(Error::Config("mixture weights must be nonnegative".into()));
            }
            let s: f64 = w.iter().sum();
            if (s - 1.0).abs() > 1e-12 {
                return Err(Error::Config(format!("mixture weights sum to {s}, not 1")));
            }
        }
        if let Some(l) = &self.labels {
            if l.len() != self.centers.len() {
                return Err(Error::Config("one label per center required".into()));
            }
        }
        Ok(())
    }

    pub fn dim(&self) -> usize {
        self.centers[0].len()
    }

    pub fn components(&self) -> usize {
        self.centers.len()
    }

    pub fn weights(&self) -> Vec<f64> {
        self.weights.clone().unwrap_or_else(|| vec![1.0 / self.components() as f64; self.components()])
    }

    /// Number of classes (`max label + 1`) when labeled.
    pub fn classes(&self) -> Option<usize> {
        self.labels.as_ref().map(|l| l.iter().copied().max().map_or(0, |m| m + 1))
    }

    /// Component indices carrying `label`.
    pub fn components_with_label(&self, label: usize) -> Vec<usize> {
        match &self.labels {
            Some(l) => (0..l.len()).filter(|&i| l[i] == label).collect(),
            None => Vec::new(),
        }
    }

    pub fn mean(&self) -> Vec<f64> {
        let w = self.weights();
        let mut m = vec![0.0; self.dim()];
        for (c, wi) in self.centers.iter().zip(&w) {
            for (mj, cj) in m.iter_mut().zip(c) {
                *mj += wi * cj;
            }
        }
        m
    }
}

/// Draws from a [`MixtureSpec`].
#[derive(Clone, Debug, PartialEq)]
pub struct MixtureSample {
    /// `N × d` points.
    pub points: Tensor,
    /// Component index of each point.
    pub components: Vec<usize>,
    /// Class label of each point, when the mixture is labeled.
    pub labels: Option<Vec<usize>>,
}

/// `N` i.i.d. mixture draws.
pub fn sample_real<R: Rng>(spec: &MixtureSpec, n: usize, rng: &mut R) -> Result<MixtureSample> {
    spec.validate()?;
    if n == 0 {
        return Err(Error::contract("sample_real needs N ≥ 1"));
    }
    let d = spec.dim();
    let pick = WeightedIndex::new(spec.weights()).map_err(|e| Error::Config(format!("bad mixture weights: {e}")))?;
    let mut points = Vec::with_capacity(n * d);
    let mut components = Vec::with_capacity(n);
    for _ in 0..n {
        let c = pick.sample(rng);
        components.push(c);
        for &mu in &spec.centers[c] {
            let z: f64 = StandardNormal.sample(rng);
            points.push(mu + spec.stddev * z);
        }
    }
    let labels = spec.labels.as_ref().map(|l| components.iter().map(|&c| l[c]).collect());
    Ok(MixtureSample { points: Tensor::matrix(n, d, points)?, components, labels })
}

/// Draws points from components carrying a given label, uniformly across
/// those components.
pub fn sample_label<R: Rng>(spec: &MixtureSpec, label: usize, n: usize, rng: &mut R) -> Result<Tensor> {
    let comps = spec.components_with_label(label);
    if comps.is_empty() {
        return Err(Error::contract(format!("no component carries label {label}")));
    }
    let d = spec.dim();
    let mut points = Vec::with_capacity(n * d);
    for _ in 0..n {
        let c = comps[rng.random_range(0..comps.len())];
        for &mu in &spec.centers[c] {
            let z: f64 = StandardNormal.sample(rng);
            points.push(mu + spec.stddev * z);
        }
    }
    Tensor::matrix(n, d, points)
}

/// Standard normal prior on `R^{n_z}`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct NoisePrior {
    pub dim: usize,
}

impl NoisePrior {
    pub fn new(dim: usize) -> Result<Self> {
        if dim == 0 {
            return Err(Error::Config("noise dimension must be ≥ 1".into()));
        }
        Ok(Self { dim })
    }
}

pub fn sample_noise<R: Rng>(prior: &NoisePrior, n: usize, rng: &mut R) -> Result<Tensor> {
    if n == 0 || prior.dim == 0 {
        return Err(Error::contract("sample_noise needs N ≥ 1 and n_z ≥ 1"));
    }
    let data = (0..n * prior.dim).map(|_| StandardNormal.sample(rng)).collect();
    Tensor::matrix(n, prior.dim, data)
}

/// Uniform labels in `0..classes`.
pub fn sample_labels<R: Rng>(classes: usize, n: usize, rng: &mut R) -> Vec<usize> {
    (0..n).map(|_| rng.random_range(0..classes)).collect()
}

/// Names accepted by [`builtin`].
pub const BUILTIN_NAMES: [&str; 4] = ["bimodal2d", "ring8", "labeled3", "unimodal2d"];

fn circle(count: usize, radius: f64, phase: f64) -> Vec<Vec<f64>> {
    (0..count)
        .map(|i| {
            let a = phase + 2.0 * std::f64::consts::PI * i as f64 / count as f64;
            vec![radius * a.cos(), radius * a.sin()]
        })
        .collect()
}

/// Built-in 2D datasets:
///
/// * `bimodal2d`: centers `(±2, 0)`, stddev 0.5
/// * `ring8`: 8 centers on the radius-2 circle, stddev 0.1
/// * `labeled3`: 3 labeled centers on the radius-2 circle, stddev 0.2
/// * `unimodal2d`: a single blob at the origin, stddev 0.5
pub fn builtin(name: &str) -> Result<MixtureSpec> {
    let spec = match name {
        "bimodal2d" => MixtureSpec::new(vec![vec![-2.0, 0.0], vec![2.0, 0.0]], 0.5)?,
        "ring8" => MixtureSpec::new(circle(8, 2.0, 0.0), 0.1)?,
        "labeled3" => {
            let mut s = MixtureSpec::new(circle(3, 2.0, std::f64::consts::FRAC_PI_2), 0.2)?;
            s.labels = Some(vec![0, 1, 2]);
            s
        }
        "unimodal2d" => MixtureSpec::new(vec![vec![0.0, 0.0]], 0.5)?,
        other => return Err(Error::Config(format!("unknown dataset `{other}` (known: {})", BUILTIN_NAMES.join(", ")))),
    };
    Ok(spec)
}

pub fn builtin_datasets() -> Vec<(&'static str, MixtureSpec)> {
    BUILTIN_NAMES.iter().map(|&n| (n, builtin(n).expect("builtin datasets are valid"))).collect()
}
