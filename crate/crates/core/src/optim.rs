//! RMSProp and the feasibility operators applied after every critic step:
//! `ℓ_p`-ball projection, pointwise clipping and QR retraction onto the
//! Stiefel manifold.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::householder_qr;
use crate::norm::{sign0, Norm};
use crate::params::ParamStore;
use crate::tensor::Tensor;

pub const DEFAULT_RMS_ALPHA: f64 = 0.9;
pub const DEFAULT_RMS_EPS: f64 = 1e-8;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Direction {
    Ascent,
    Descent,
}

/// Per-coordinate running mean of squared gradients.
#[derive(Clone, Debug, PartialEq)]
pub struct RmsPropState {
    pub alpha: f64,
    pub eps: f64,
    pub cache: Vec<Tensor>,
}

impl RmsPropState {
    /// Zero cache shaped like `params`.
    pub fn new(params: &ParamStore, alpha: f64, eps: f64) -> Result<Self> {
        if !(0.0..1.0).contains(&alpha) || eps <= 0.0 {
            return Err(Error::Config(format!("invalid RMSProp constants alpha={alpha} eps={eps}")));
        }
        Ok(Self { alpha, eps, cache: params.tensors().iter().map(|t| Tensor::zeros(t.shape().to_vec())).collect() })
    }

    pub fn with_defaults(params: &ParamStore) -> Result<Self> {
        Self::new(params, DEFAULT_RMS_ALPHA, DEFAULT_RMS_EPS)
    }

    /// Rebuilds a state from a stored cache.
    pub fn from_cache(params: &ParamStore, cache: Vec<Tensor>, alpha: f64, eps: f64) -> Result<Self> {
        let mut s = Self::new(params, alpha, eps)?;
        if cache.len() != s.cache.len() {
            return Err(Error::Format(format!(
                "optimizer cache has {} tensors, parameters have {}",
                cache.len(),
                s.cache.len()
            )));
        }
        for (slot, c) in s.cache.iter_mut().zip(cache) {
            if slot.shape() != c.shape() {
                return Err(Error::dim("RmsPropState::from_cache", slot.shape(), c.shape()));
            }
            if c.data().iter().any(|&x| x < 0.0) {
                return Err(Error::Format("negative RMSProp cache entry".into()));
            }
            *slot = c;
        }
        Ok(s)
    }
}

/// One RMSProp update:
/// `cache ← α·cache + (1−α)·g²`, `params ← params ± η·g / (√cache + ε)`.
///
/// Nothing is modified when any gradient entry is non-finite or a shape
/// disagrees.
pub fn rmsprop_step(
    state: &mut RmsPropState,
    params: &mut ParamStore,
    grads: &[Tensor],
    lr: f64,
    direction: Direction,
) -> Result<()> {
    if !(lr > 0.0 && lr.is_finite()) {
        return Err(Error::contract(format!("learning rate must be positive, got {lr}")));
    }
    if grads.len() != params.len() || state.cache.len() != params.len() {
        return Err(Error::contract(format!(
            "rmsprop: {} params, {} grads, {} cache tensors",
            params.len(),
            grads.len(),
            state.cache.len()
        )));
    }
    for (i, g) in grads.iter().enumerate() {
        if g.shape() != params.tensor(i).shape() {
            return Err(Error::dim("rmsprop_step", params.tensor(i).shape(), g.shape()));
        }
        if g.data().iter().any(|x| !x.is_finite()) {
            return Err(Error::numeric(format!("non-finite gradient for parameter `{}`", params.names()[i])));
        }
    }
    let sign = match direction {
        Direction::Ascent => 1.0,
        Direction::Descent => -1.0,
    };
    let (alpha, eps) = (state.alpha, state.eps);
    for (i, g) in grads.iter().enumerate() {
        let cache = state.cache[i].data_mut();
        let p = params.tensor_mut(i).data_mut();
        for ((c, pj), &gj) in cache.iter_mut().zip(p.iter_mut()).zip(g.data()) {
            *c = alpha * *c + (1.0 - alpha) * gj * gj;
            *pj += sign * lr * gj / (c.sqrt() + eps);
        }
    }
    Ok(())
}

/// Euclidean projection onto the unit `ℓ_p` ball.
///
/// `p = 2` rescales radially, `p = ∞` clips each coordinate to `[-1, 1]`
/// and `p = 1` uses the sort-and-threshold simplex projection.
pub fn project_lp_ball(v: &Tensor, p: Norm) -> Result<Tensor> {
    match p {
        Norm::L2 => {
            let n = v.norm2();
            if n <= 1.0 {
                Ok(v.clone())
            } else {
                v.map(|x| x / n)
            }
        }
        Norm::Inf => clip_tensor(v, 1.0),
        Norm::L1 => {
            let x = v.data();
            if Norm::L1.of(x) <= 1.0 {
                return Ok(v.clone());
            }
            let mut mags: Vec<f64> = x.iter().map(|a| a.abs()).collect();
            mags.sort_by(|a, b| b.total_cmp(a));
            let mut cum = 0.0;
            let mut theta = 0.0;
            for (j, &u) in mags.iter().enumerate() {
                cum += u;
                let t = (cum - 1.0) / (j + 1) as f64;
                if u - t > 0.0 {
                    theta = t;
                } else {
                    break;
                }
            }
            v.map(|a| sign0(a) * (a.abs() - theta).max(0.0))
        }
    }
}

/// Clamps every entry of `t` to `[-c, c]`.
pub fn clip_tensor(t: &Tensor, c: f64) -> Result<Tensor> {
    t.map(|x| x.clamp(-c, c))
}

/// Clamps every parameter to `[-c, c]`.
pub fn clip_params(params: &ParamStore, c: f64) -> Result<ParamStore> {
    let mut out = params.clone();
    clip_in_place(&mut out, c)?;
    Ok(out)
}

pub(crate) fn clip_in_place(params: &mut ParamStore, c: f64) -> Result<()> {
    if !(c > 0.0) {
        return Err(Error::contract(format!("clip bound must be positive, got {c}")));
    }
    for i in 0..params.len() {
        for x in params.tensor_mut(i).data_mut() {
            *x = x.clamp(-c, c);
        }
    }
    Ok(())
}

/// Maps a full-column-rank `m × k` matrix onto the Stiefel manifold:
/// `Q · Diag(sign(diag R))` for `M = QR`, with `sign(0) = +1`.
///
/// The sign correction makes the implied triangular factor have a
/// nonnegative diagonal, which pins down a unique result.
pub fn qr_retraction(m: &Tensor) -> Result<Tensor> {
    let qr = householder_qr(m)?;
    let k = qr.r.shape()[0];
    let signs: Vec<f64> = (0..k).map(|j| if qr.r.get2(j, j) < 0.0 { -1.0 } else { 1.0 }).collect();
    let rows = qr.q.shape()[0];
    let mut out = qr.q.into_data();
    for i in 0..rows {
        for (j, s) in signs.iter().enumerate() {
            out[i * k + j] *= s;
        }
    }
    Tensor::from_op(vec![rows, k], out)
}

/// `max |UᵀU − I|`.
pub fn stiefel_deviation(u: &Tensor) -> Result<f64> {
    let (_, k) = u.require_matrix("stiefel_deviation")?;
    let g = Tensor::matmul_t(u, true, u, false)?;
    let mut worst = 0.0f64;
    for i in 0..k {
        for j in 0..k {
            let target = if i == j { 1.0 } else { 0.0 };
            worst = worst.max((g.get2(i, j) - target).abs());
        }
    }
    Ok(worst)
}

/// Tangent-space component of `g` at a point `x` of the Stiefel manifold:
/// `g − x·sym(xᵀg)`.
pub fn tangent_projection(x: &Tensor, g: &Tensor) -> Result<Tensor> {
    x.require_matrix("tangent_projection")?;
    let xtg = Tensor::matmul_t(x, true, g, false)?;
    let sym = xtg.add(&xtg.transpose()?)?.scale(0.5)?;
    g.sub(&x.matmul(&sym)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn v(x: &[f64]) -> Tensor {
        Tensor::vector(x.to_vec()).unwrap()
    }

    fn store(x: &[f64]) -> ParamStore {
        let mut s = ParamStore::new();
        s.insert("p", v(x)).unwrap();
        s
    }

    #[test]
    fn zero_gradient_leaves_params_and_decays_cache() {
        let mut p = store(&[0.5, -1.0]);
        let mut st = RmsPropState::with_defaults(&p).unwrap();
        st.cache[0] = v(&[1.0, 2.0]);
        rmsprop_step(&mut st, &mut p, &[v(&[0.0, 0.0])], 1e-3, Direction::Ascent).unwrap();
        assert_eq!(p.tensor(0).data(), &[0.5, -1.0]);
        assert_eq!(st.cache[0].data(), &[0.9, 1.8]);
    }

    #[test]
    fn first_step_from_zero_cache() {
        let mut p = store(&[0.0]);
        let mut st = RmsPropState::with_defaults(&p).unwrap();
        rmsprop_step(&mut st, &mut p, &[v(&[1.0])], 5e-5, Direction::Ascent).unwrap();
        let expected = 5e-5 * 1.0 / (0.1f64.sqrt() + 1e-8);
        assert!((p.tensor(0).data()[0] - expected).abs() < 1e-15 * expected);
    }

    #[test]
    fn constant_gradient_update_tends_to_lr_times_sign() {
        let mut p = store(&[0.0, 0.0]);
        let mut st = RmsPropState::with_defaults(&p).unwrap();
        let g = v(&[3.0, -0.2]);
        let mut prev = p.tensor(0).clone();
        let mut last = Vec::new();
        for _ in 0..400 {
            rmsprop_step(&mut st, &mut p, std::slice::from_ref(&g), 1e-3, Direction::Descent).unwrap();
            last = p.tensor(0).sub(&prev).unwrap().into_data();
            prev = p.tensor(0).clone();
        }
        // fixed point: cache → g², step → η·g/(|g|+ε)
        assert!((last[0] + 1e-3 * 3.0 / (3.0 + 1e-8)).abs() < 1e-12);
        assert!((last[1] - 1e-3 * 0.2 / (0.2 + 1e-8)).abs() < 1e-12);
    }

    #[test]
    fn non_finite_gradient_aborts_without_changes() {
        let mut p = store(&[1.0]);
        let mut st = RmsPropState::with_defaults(&p).unwrap();
        let mut g = v(&[1.0]);
        g.data_mut()[0] = f64::NAN;
        let err = rmsprop_step(&mut st, &mut p, &[g], 1e-3, Direction::Ascent);
        assert!(matches!(err, Err(Error::Numeric(_))));
        assert_eq!(p.tensor(0).data(), &[1.0]);
        assert_eq!(st.cache[0].data(), &[0.0]);
    }

    #[test]
    fn projections() {
        assert_eq!(project_lp_ball(&v(&[3.0, 4.0]), Norm::L2).unwrap().data(), &[0.6, 0.8]);
        assert_eq!(project_lp_ball(&v(&[2.0, 0.0]), Norm::L1).unwrap().data(), &[1.0, 0.0]);
        assert_eq!(project_lp_ball(&v(&[1.0, 1.0]), Norm::L1).unwrap().data(), &[0.5, 0.5]);
        assert_eq!(project_lp_ball(&v(&[-3.0, 0.5]), Norm::Inf).unwrap().data(), &[-1.0, 0.5]);
        let inside = v(&[0.2, -0.3]);
        for p in Norm::ALL {
            assert_eq!(project_lp_ball(&inside, p).unwrap(), inside);
        }
    }

    #[test]
    fn clipping() {
        let s = store(&[0.2, -0.3]);
        assert_eq!(clip_params(&s, 0.01).unwrap().tensor(0).data(), &[0.01, -0.01]);
        assert_eq!(clip_params(&s, 1.0).unwrap(), s);
        assert!(clip_params(&s, 0.0).is_err());
    }

    #[test]
    fn retraction_removes_scaling() {
        let m = Tensor::eye(3).scale(2.0).unwrap();
        assert_eq!(qr_retraction(&m).unwrap(), Tensor::eye(3));
    }

    #[test]
    fn retraction_keeps_orthonormal_input() {
        let (c, s) = (0.6, 0.8);
        // columns orthonormal, R diagonal positive
        let m = Tensor::matrix(3, 2, vec![c, -s, s, c, 0.0, 0.0]).unwrap();
        let o = qr_retraction(&m).unwrap();
        for (a, b) in o.data().iter().zip(m.data()) {
            assert!((a - b).abs() < 1e-15);
        }
    }

    #[test]
    fn retraction_reports_rank_deficiency() {
        let m = Tensor::matrix(3, 2, vec![1., 2., 1., 2., 1., 2.]).unwrap();
        let err = qr_retraction(&m).unwrap_err();
        assert!(matches!(err, Error::Numeric(_)));
        assert!(err.to_string().contains("column 1"));
    }
}
