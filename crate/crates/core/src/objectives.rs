//! Mean and covariance feature matching objectives.
//!
//! Every loss exists twice: as a graph builder in [`graph`] that records the
//! computation on a [`Tape`] (used by training and gradient checks), and as a
//! value-level function that takes a feature map and two sample batches.
//! The value-level functions evaluate the graph builders on constants, so the
//! two never drift apart.

use crate::autodiff::{Tape, Var};
use crate::error::{Error, Result};
use crate::features::{FeatureMap, Generator};
use crate::linalg::symmetric_eigen;
use crate::norm::{argmax_abs, sign0, Norm};
use crate::optim::stiefel_deviation;
use crate::tensor::Tensor;

/// Slack allowed on `‖v‖_p ≤ 1` before a loss refuses the critic.
pub const BALL_TOLERANCE: f64 = 1e-9;
/// Slack allowed on `UᵀU = I` before a loss refuses the critic.
pub const STIEFEL_TOLERANCE: f64 = 1e-6;

/// Linear critic `f(x) = ⟨v, Φ(x)⟩` with `‖v‖_p ≤ 1`.
#[derive(Clone, Debug, PartialEq)]
pub struct MeanCritic {
    pub v: Tensor,
    pub p: Norm,
}

impl MeanCritic {
    pub fn new(v: Tensor, p: Norm) -> Self {
        Self { v, p }
    }

    /// The dual index `q` with `1/p + 1/q = 1`.
    pub fn q(&self) -> Norm {
        self.p.conjugate()
    }

    pub fn check_feasible(&self) -> Result<()> {
        let n = self.v.norm(self.p);
        if n > 1.0 + BALL_TOLERANCE {
            return Err(Error::contract(format!("critic direction has ℓ{} norm {n} > 1; project it first", self.p)));
        }
        Ok(())
    }
}

/// Bilinear critic `f(x) = ⟨UᵀΦ(x), VᵀΦ(x)⟩` with `U, V` on the Stiefel
/// manifold.
#[derive(Clone, Debug, PartialEq)]
pub struct CovCritic {
    pub u: Tensor,
    pub v: Tensor,
}

impl CovCritic {
    pub fn new(u: Tensor, v: Tensor) -> Result<Self> {
        if u.shape() != v.shape() || u.ndim() != 2 {
            return Err(Error::dim("CovCritic", u.shape(), v.shape()));
        }
        Ok(Self { u, v })
    }

    pub fn k(&self) -> usize {
        self.u.shape()[1]
    }

    pub fn check_feasible(&self) -> Result<()> {
        for (name, m) in [("U", &self.u), ("V", &self.v)] {
            let dev = stiefel_deviation(m)?;
            if dev > STIEFEL_TOLERANCE {
                return Err(Error::contract(format!("{name} is not orthonormal (max |{name}ᵀ{name} − I| = {dev:e})")));
            }
        }
        Ok(())
    }
}

/// Batch mean of the features.
#[derive(Clone, Debug, PartialEq)]
pub struct MeanEmbedding(pub Tensor);

/// Uncentered batch second moment `(1/N) Σ φ_i φ_iᵀ`.
#[derive(Clone, Debug, PartialEq)]
pub struct CovEmbedding(pub Tensor);

/// Label head `S ∈ R^{K×m}` producing logits `S Φ(x)` plus the
/// cross-entropy weights of the critic and generator losses.
#[derive(Clone, Debug, PartialEq)]
pub struct LabelHead {
    pub s: Tensor,
    pub lambda_d: f64,
    pub lambda_g: f64,
}

impl LabelHead {
    pub fn classes(&self) -> usize {
        self.s.shape()[0]
    }

    fn check(&self) -> Result<()> {
        if !(self.lambda_d >= 0.0 && self.lambda_g >= 0.0) {
            return Err(Error::contract(format!(
                "cross-entropy weights must be nonnegative (λ_D={}, λ_G={})",
                self.lambda_d, self.lambda_g
            )));
        }
        Ok(())
    }
}

/// Relative weights of the mean and covariance terms in the combined loss.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LossWeights {
    pub mean: f64,
    pub cov: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self { mean: 1.0, cov: 1.0 }
    }
}

/// Tape builders for every loss. Feature inputs are `batch × m` variables.
pub mod graph {
    use super::*;

    /// `⟨v, mean(Φ_real) − mean(Φ_fake)⟩`.
    pub fn mean_primal(tape: &mut Tape, v: Var, phi_real: Var, phi_fake: Var) -> Result<Var> {
        let delta = mean_delta(tape, phi_real, phi_fake)?;
        tape.dot(v, delta)
    }

    pub fn mean_delta(tape: &mut Tape, phi_real: Var, phi_fake: Var) -> Result<Var> {
        let mr = tape.mean_rows(phi_real)?;
        let mf = tape.mean_rows(phi_fake)?;
        tape.sub(mr, mf)
    }

    /// `‖mean(Φ_real) − mean(Φ_fake)‖_q`, or its square when `squared` (only
    /// meaningful for `q = 2`).
    pub fn mean_dual(tape: &mut Tape, q: Norm, phi_real: Var, phi_fake: Var, squared: bool) -> Result<Var> {
        let delta = mean_delta(tape, phi_real, phi_fake)?;
        if squared {
            if q != Norm::L2 {
                return Err(Error::contract("squared dual objective requires q = 2"));
            }
            tape.sq_norm(delta)
        } else {
            tape.norm(delta, q)
        }
    }

    /// `(1/N) Σ_i ⟨Uᵀφ_i, Vᵀφ_i⟩ = Tr(Uᵀ Σ̂ V)`.
    pub fn bilinear_mean(tape: &mut Tape, phi: Var, u: Var, v: Var) -> Result<Var> {
        let n = tape.value(phi).rows() as f64;
        let pu = tape.matmul(phi, u)?;
        let pv = tape.matmul(phi, v)?;
        let prod = tape.mul(pu, pv)?;
        let s = tape.sum(prod)?;
        tape.scale(s, 1.0 / n)
    }

    /// `Tr(Uᵀ(Σ̂_real − Σ̂_fake)V)`.
    pub fn cov_primal(tape: &mut Tape, u: Var, v: Var, phi_real: Var, phi_fake: Var) -> Result<Var> {
        let r = bilinear_mean(tape, phi_real, u, v)?;
        let f = bilinear_mean(tape, phi_fake, u, v)?;
        tape.sub(r, f)
    }

    /// Mean softmax cross-entropy of logits `Φ Sᵀ` at `labels`.
    pub fn cross_entropy(tape: &mut Tape, s: Var, phi: Var, labels: &[usize]) -> Result<Var> {
        let st = tape.transpose(s)?;
        let logits = tape.matmul(phi, st)?;
        tape.softmax_cross_entropy(logits, labels)
    }

    /// `w_mean·L_μ + w_cov·L_σ`; a term with zero weight is not recorded.
    #[allow(clippy::too_many_arguments)]
    pub fn combined(
        tape: &mut Tape,
        mean_v: Var,
        u: Var,
        v: Var,
        phi_real: Var,
        phi_fake: Var,
        weights: LossWeights,
    ) -> Result<Var> {
        let mut total: Option<Var> = None;
        if weights.mean != 0.0 {
            let l = mean_primal(tape, mean_v, phi_real, phi_fake)?;
            total = Some(if weights.mean == 1.0 { l } else { tape.scale(l, weights.mean)? });
        }
        if weights.cov != 0.0 {
            let l = cov_primal(tape, u, v, phi_real, phi_fake)?;
            let l = if weights.cov == 1.0 { l } else { tape.scale(l, weights.cov)? };
            total = Some(match total {
                Some(t) => tape.add(t, l)?,
                None => l,
            });
        }
        total.ok_or_else(|| Error::contract("combined loss with both weights zero"))
    }

    /// `L_D = L̂_σ − λ_D · CE(labeled)`.
    #[allow(clippy::too_many_arguments)]
    pub fn conditional_critic(
        tape: &mut Tape,
        u: Var,
        v: Var,
        s: Var,
        phi_real: Var,
        phi_fake: Var,
        phi_labeled: Var,
        labels: &[usize],
        lambda_d: f64,
    ) -> Result<Var> {
        let ipm = cov_primal(tape, u, v, phi_real, phi_fake)?;
        if lambda_d == 0.0 {
            return Ok(ipm);
        }
        let ce = cross_entropy(tape, s, phi_labeled, labels)?;
        let ce = tape.scale(ce, lambda_d)?;
        tape.sub(ipm, ce)
    }

    /// Fake-side part of `L_G = L̂_σ + λ_G · CE(g(z, y), y)`: the real-data
    /// term of `L̂_σ` is constant in `θ` and omitted.
    #[allow(clippy::too_many_arguments)]
    pub fn conditional_generator(
        tape: &mut Tape,
        u: Var,
        v: Var,
        s: Var,
        phi_fake: Var,
        labels: &[usize],
        lambda_g: f64,
    ) -> Result<Var> {
        let fake = bilinear_mean(tape, phi_fake, u, v)?;
        let ipm = tape.neg(fake)?;
        if lambda_g == 0.0 {
            return Ok(ipm);
        }
        let ce = cross_entropy(tape, s, phi_fake, labels)?;
        let ce = tape.scale(ce, lambda_g)?;
        tape.add(ipm, ce)
    }
}

fn nonempty(x: &Tensor, what: &str) -> Result<()> {
    if x.ndim() != 2 || x.rows() == 0 {
        return Err(Error::contract(format!("{what} batch must be a nonempty matrix")));
    }
    Ok(())
}

/// Features of both batches as tape constants.
fn feature_pair(tape: &mut Tape, phi: &dyn FeatureMap, real: &Tensor, fake: &Tensor) -> Result<(Var, Var)> {
    nonempty(real, "real")?;
    nonempty(fake, "fake")?;
    let fr = tape.constant(phi.features(real)?);
    let ff = tape.constant(phi.features(fake)?);
    Ok((fr, ff))
}

pub fn mean_embed(phi: &dyn FeatureMap, samples: &Tensor) -> Result<MeanEmbedding> {
    nonempty(samples, "sample")?;
    Ok(MeanEmbedding(phi.features(samples)?.mean_rows()?))
}

/// `(1/N) Σ φ_i φ_iᵀ` of a `N × m` feature matrix.
pub fn second_moment(features: &Tensor) -> Result<Tensor> {
    let n = features.rows() as f64;
    let s = Tensor::matmul_t(features, true, features, false)?.scale(1.0 / n)?;
    // exact symmetry
    let t = s.transpose()?;
    s.add(&t)?.scale(0.5)
}

pub fn cov_embed(phi: &dyn FeatureMap, samples: &Tensor) -> Result<CovEmbedding> {
    nonempty(samples, "sample")?;
    Ok(CovEmbedding(second_moment(&phi.features(samples)?)?))
}

/// `Δ̂ = Σ̂_real − Σ̂_fake`.
pub fn cov_delta(phi: &dyn FeatureMap, real: &Tensor, fake: &Tensor) -> Result<Tensor> {
    let r = cov_embed(phi, real)?;
    let f = cov_embed(phi, fake)?;
    r.0.sub(&f.0)
}

pub fn mean_primal_loss(critic: &MeanCritic, phi: &dyn FeatureMap, real: &Tensor, fake: &Tensor) -> Result<f64> {
    critic.check_feasible()?;
    let mut tape = Tape::new();
    let (fr, ff) = feature_pair(&mut tape, phi, real, fake)?;
    let v = tape.constant(critic.v.clone());
    let out = graph::mean_primal(&mut tape, v, fr, ff)?;
    tape.value(out).item()
}

pub fn mean_dual_loss(q: Norm, phi: &dyn FeatureMap, real: &Tensor, fake: &Tensor) -> Result<f64> {
    let mut tape = Tape::new();
    let (fr, ff) = feature_pair(&mut tape, phi, real, fake)?;
    let out = graph::mean_dual(&mut tape, q, fr, ff, false)?;
    tape.value(out).item()
}

/// Maximizer of `⟨v, Δμ⟩` over the unit `ℓ_p` ball.
///
/// `p = 2` gives `Δμ/‖Δμ‖₂`, `p = ∞` gives `sign(Δμ)` and `p = 1` puts a
/// signed unit mass on the lowest-index coordinate of maximal magnitude.
/// Returns zeros when `Δμ = 0`.
pub fn optimal_mean_direction(delta: &Tensor, p: Norm) -> Result<Tensor> {
    let d = delta.data();
    if d.iter().all(|&x| x == 0.0) {
        return Ok(Tensor::zeros(delta.shape().to_vec()));
    }
    match p {
        Norm::L2 => {
            let n = delta.norm2();
            delta.map(|x| x / n)
        }
        Norm::Inf => delta.map(sign0),
        Norm::L1 => {
            let i = argmax_abs(d).expect("nonempty");
            let mut out = vec![0.0; d.len()];
            out[i] = sign0(d[i]);
            Tensor::new(delta.shape().to_vec(), out)
        }
    }
}

pub fn cov_primal_loss(critic: &CovCritic, phi: &dyn FeatureMap, real: &Tensor, fake: &Tensor) -> Result<f64> {
    critic.check_feasible()?;
    let mut tape = Tape::new();
    let (fr, ff) = feature_pair(&mut tape, phi, real, fake)?;
    let u = tape.constant(critic.u.clone());
    let v = tape.constant(critic.v.clone());
    let out = graph::cov_primal(&mut tape, u, v, fr, ff)?;
    tape.value(out).item()
}

/// Sum of the `k` largest singular values of a symmetric matrix, obtained
/// from its eigenvalues as `σ_j = |λ_j|`.
pub fn ky_fan_norm(delta: &Tensor, k: usize) -> Result<f64> {
    let (m, _) = delta.require_matrix("ky_fan_norm")?;
    if k == 0 || k > m {
        return Err(Error::contract(format!("need 1 ≤ k ≤ {m}, got k = {k}")));
    }
    let eig = symmetric_eigen(delta)?;
    Ok(eig.values.iter().take(k).map(|l| l.abs()).sum())
}

/// Ky Fan `k`-norm of `Σ̂_real − Σ̂_fake`.
pub fn cov_dual_value(phi: &dyn FeatureMap, real: &Tensor, fake: &Tensor, k: usize) -> Result<f64> {
    ky_fan_norm(&cov_delta(phi, real, fake)?, k)
}

pub fn combined_loss(
    mean: &MeanCritic,
    cov: &CovCritic,
    phi: &dyn FeatureMap,
    real: &Tensor,
    fake: &Tensor,
    weights: LossWeights,
) -> Result<f64> {
    if weights.mean != 0.0 {
        mean.check_feasible()?;
    }
    if weights.cov != 0.0 {
        cov.check_feasible()?;
    }
    let mut tape = Tape::new();
    let (fr, ff) = feature_pair(&mut tape, phi, real, fake)?;
    let mv = tape.constant(mean.v.clone());
    let u = tape.constant(cov.u.clone());
    let v = tape.constant(cov.v.clone());
    let out = graph::combined(&mut tape, mv, u, v, fr, ff, weights)?;
    tape.value(out).item()
}

/// `δE(U) = E‖UᵀΦ(x)‖² − E‖UᵀΦ(g(z))‖² = Tr(Uᵀ Δ̂ U)`; may be negative.
pub fn subspace_energy(u: &Tensor, phi: &dyn FeatureMap, real: &Tensor, fake: &Tensor) -> Result<f64> {
    let dev = stiefel_deviation(u)?;
    if dev > STIEFEL_TOLERANCE {
        return Err(Error::contract(format!("U is not orthonormal (deviation {dev:e})")));
    }
    let mut tape = Tape::new();
    let (fr, ff) = feature_pair(&mut tape, phi, real, fake)?;
    let uv = tape.constant(u.clone());
    let out = graph::cov_primal(&mut tape, uv, uv, fr, ff)?;
    tape.value(out).item()
}

/// Critic loss of the conditional model: `L̂_σ − λ_D · mean CE` on a labeled
/// real batch.
#[allow(clippy::too_many_arguments)]
pub fn conditional_critic_loss(
    cov: &CovCritic,
    head: &LabelHead,
    phi: &dyn FeatureMap,
    real: &Tensor,
    fake: &Tensor,
    labeled: &Tensor,
    labels: &[usize],
) -> Result<f64> {
    cov.check_feasible()?;
    head.check()?;
    nonempty(labeled, "labeled")?;
    let mut tape = Tape::new();
    let (fr, ff) = feature_pair(&mut tape, phi, real, fake)?;
    let fl = tape.constant(phi.features(labeled)?);
    let u = tape.constant(cov.u.clone());
    let v = tape.constant(cov.v.clone());
    let s = tape.constant(head.s.clone());
    let out = graph::conditional_critic(&mut tape, u, v, s, fr, ff, fl, labels, head.lambda_d)?;
    tape.value(out).item()
}

/// Generator loss of the conditional model on noise `z` and labels `y`:
/// the fake-side IPM term plus `λ_G` times the cross-entropy of the
/// generated samples at their conditioning labels.
pub fn conditional_generator_loss(
    cov: &CovCritic,
    head: &LabelHead,
    phi: &dyn FeatureMap,
    gen: &Generator,
    z: &Tensor,
    labels: &[usize],
) -> Result<f64> {
    cov.check_feasible()?;
    head.check()?;
    let k = gen.classes.ok_or_else(|| Error::contract("conditional loss needs a conditional generator"))?;
    let y = crate::features::one_hot(labels, k)?;
    let fake = gen.generate(z, Some(&y))?;
    let mut tape = Tape::new();
    let ff = tape.constant(phi.features(&fake)?);
    let u = tape.constant(cov.u.clone());
    let v = tape.constant(cov.v.clone());
    let s = tape.constant(head.s.clone());
    let out = graph::conditional_generator(&mut tape, u, v, s, ff, labels, head.lambda_g)?;
    tape.value(out).item()
}
