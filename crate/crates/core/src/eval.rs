//! Sample-quality metrics, critic level sets on a 2D grid and the
//! primal/dual oracle report.

use std::fmt;

use crate::data::MixtureSpec;
use crate::error::{Error, Result};
use crate::features::FeatureMap;
use crate::linalg::symmetric_eigen;
use crate::norm::{sign0, Norm};
use crate::objectives::{
    cov_delta, cov_primal_loss, ky_fan_norm, mean_dual_loss, mean_embed, mean_primal_loss, optimal_mean_direction,
    subspace_energy, CovCritic, MeanCritic,
};
use crate::tensor::Tensor;

pub const DEFAULT_RADIUS_MULT: f64 = 3.0;
pub const DEFAULT_MIN_FRACTION: f64 = 0.02;

#[derive(Clone, Debug, PartialEq)]
pub struct ModeReport {
    /// Fraction of samples assigned to each mode.
    pub fractions: Vec<f64>,
    /// Modes whose fraction reaches the threshold.
    pub covered: usize,
    /// Fraction of samples assigned to any mode.
    pub high_quality: f64,
}

impl ModeReport {
    pub fn modes(&self) -> usize {
        self.fractions.len()
    }
}

impl fmt::Display for ModeReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "modes covered: {}/{}", self.covered, self.modes())?;
        writeln!(f, "high-quality fraction: {:.4}", self.high_quality)?;
        for (i, x) in self.fractions.iter().enumerate() {
            writeln!(f, "  mode {i}: {x:.4}")?;
        }
        Ok(())
    }
}

/// Assigns each sample to its nearest center (lowest index on ties) when
/// within `radius_mult · stddev`; a mode counts as covered when its share
/// of all samples is at least `min_fraction`.
pub fn mode_coverage(samples: &Tensor, spec: &MixtureSpec, radius_mult: f64, min_fraction: f64) -> Result<ModeReport> {
    spec.validate()?;
    if spec.components() < 2 {
        return Err(Error::contract("mode coverage needs at least two centers"));
    }
    let (n, d) = samples.require_matrix("mode_coverage")?;
    if n == 0 {
        return Err(Error::contract("mode coverage of an empty sample"));
    }
    if d != spec.dim() {
        return Err(Error::dim("mode_coverage", samples.shape(), &[n, spec.dim()]));
    }
    let r2 = (radius_mult * spec.stddev).powi(2);
    let mut counts = vec![0usize; spec.components()];
    for row in samples.data().chunks_exact(d) {
        let mut best = (f64::INFINITY, 0);
        for (j, c) in spec.centers.iter().enumerate() {
            let dist: f64 = row.iter().zip(c).map(|(a, b)| (a - b) * (a - b)).sum();
            if dist < best.0 {
                best = (dist, j);
            }
        }
        if best.0 <= r2 {
            counts[best.1] += 1;
        }
    }
    let fractions: Vec<f64> = counts.iter().map(|&c| c as f64 / n as f64).collect();
    Ok(ModeReport {
        covered: fractions.iter().filter(|&&x| x >= min_fraction).count(),
        high_quality: counts.iter().sum::<usize>() as f64 / n as f64,
        fractions,
    })
}

/// Axis-aligned grid of cell centers.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GridSpec {
    pub x_min: f64,
    pub x_max: f64,
    pub y_min: f64,
    pub y_max: f64,
    pub nx: usize,
    pub ny: usize,
}

impl Default for GridSpec {
    fn default() -> Self {
        Self { x_min: -4.0, x_max: 4.0, y_min: -4.0, y_max: 4.0, nx: 200, ny: 200 }
    }
}

impl GridSpec {
    pub fn validate(&self) -> Result<()> {
        if self.nx == 0 || self.ny == 0 || !(self.x_max > self.x_min) || !(self.y_max > self.y_min) {
            return Err(Error::contract("grid needs positive resolution and extent"));
        }
        Ok(())
    }

    pub fn x(&self, i: usize) -> f64 {
        self.x_min + (i as f64 + 0.5) * (self.x_max - self.x_min) / self.nx as f64
    }

    pub fn y(&self, j: usize) -> f64 {
        self.y_min + (j as f64 + 0.5) * (self.y_max - self.y_min) / self.ny as f64
    }

    /// All cell centers, `y` outer and `x` inner, as an `(nx·ny) × 2` matrix.
    pub fn points(&self) -> Result<Tensor> {
        let mut data = Vec::with_capacity(self.nx * self.ny * 2);
        for j in 0..self.ny {
            for i in 0..self.nx {
                data.push(self.x(i));
                data.push(self.y(j));
            }
        }
        Tensor::matrix(self.nx * self.ny, 2, data)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum LevelSetMode {
    /// `f(x) = ⟨v*, Φ(x)⟩` with `v*` the optimal `ℓ_p` direction.
    Mean(Norm),
    /// Top-`k` covariance directions plus their sum.
    Cov(usize),
}

/// Critic values on a grid, one channel per direction (plus `sum` for the
/// covariance mode). Values are stored `y` outer, `x` inner.
#[derive(Clone, Debug, PartialEq)]
pub struct LevelSetGrid {
    pub grid: GridSpec,
    pub names: Vec<String>,
    pub channels: Vec<Vec<f64>>,
    /// `σ_j = |λ_j|` per covariance channel, descending; empty in mean mode.
    pub sigmas: Vec<f64>,
}

impl LevelSetGrid {
    pub fn channel(&self, name: &str) -> Option<&[f64]> {
        self.names.iter().position(|n| n == name).map(|i| self.channels[i].as_slice())
    }

    /// Mean of a channel over cells whose centers lie within `radius` of `c`.
    pub fn disk_mean(&self, channel: usize, c: [f64; 2], radius: f64) -> Option<f64> {
        let (mut acc, mut n) = (0.0, 0usize);
        for j in 0..self.grid.ny {
            for i in 0..self.grid.nx {
                let (dx, dy) = (self.grid.x(i) - c[0], self.grid.y(j) - c[1]);
                if dx * dx + dy * dy <= radius * radius {
                    acc += self.channels[channel][j * self.grid.nx + i];
                    n += 1;
                }
            }
        }
        (n > 0).then(|| acc / n as f64)
    }

    /// CSV with header `x,y,<channels>`.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("x,y");
        for n in &self.names {
            s.push(',');
            s.push_str(n);
        }
        s.push('\n');
        for j in 0..self.grid.ny {
            for i in 0..self.grid.nx {
                s.push_str(&format!("{},{}", self.grid.x(i), self.grid.y(j)));
                for c in &self.channels {
                    s.push_str(&format!(",{}", c[j * self.grid.nx + i]));
                }
                s.push('\n');
            }
        }
        s
    }
}

/// Critic directions estimated from `real` and `fake`, evaluated on `grid`.
///
/// In covariance mode the directions come from the eigendecomposition of
/// `Δ̂ = Σ̂_real − Σ̂_fake`: `f_j(x) = ⟨u_j, Φ(x)⟩⟨v_j, Φ(x)⟩` with
/// `u_j = sign(λ_j) v_j` (zero when `λ_j = 0`), ordered by `σ_j = |λ_j|`.
pub fn levelset(
    real: &Tensor,
    fake: &Tensor,
    phi: &dyn FeatureMap,
    mode: LevelSetMode,
    grid: &GridSpec,
) -> Result<LevelSetGrid> {
    grid.validate()?;
    for (what, x) in [("real", real), ("fake", fake)] {
        let (_, d) = x.require_matrix("levelset")?;
        if d != 2 || phi.input_dim() != 2 {
            return Err(Error::contract(format!("levelset needs 2D data, {what} has dimension {d}")));
        }
    }
    let feats = phi.features(&grid.points()?)?;
    let m = phi.output_dim();
    let cells = grid.nx * grid.ny;
    match mode {
        LevelSetMode::Mean(p) => {
            let mr = mean_embed(phi, real)?.0;
            let mf = mean_embed(phi, fake)?.0;
            let v = optimal_mean_direction(&mr.sub(&mf)?, p)?;
            let f = feats.matmul(&v.reshape(vec![m, 1])?)?.into_data();
            Ok(LevelSetGrid { grid: *grid, names: vec!["f".into()], channels: vec![f], sigmas: Vec::new() })
        }
        LevelSetMode::Cov(k) => {
            if k == 0 || k > m {
                return Err(Error::contract(format!("need 1 ≤ k ≤ {m}, got {k}")));
            }
            let eig = symmetric_eigen(&cov_delta(phi, real, fake)?)?;
            let mut channels = Vec::with_capacity(k + 1);
            let mut names = Vec::with_capacity(k + 1);
            let mut sigmas = Vec::with_capacity(k);
            for j in 0..k {
                let lam = eig.values[j];
                let s = sign0(lam);
                let vj = Tensor::matrix(m, 1, eig.vector(j))?;
                let proj = feats.matmul(&vj)?;
                channels.push(proj.data().iter().map(|p| s * p * p).collect::<Vec<f64>>());
                names.push(format!("f{}", j + 1));
                sigmas.push(lam.abs());
            }
            let sum: Vec<f64> = (0..cells).map(|c| channels.iter().map(|ch| ch[c]).sum()).collect();
            channels.push(sum);
            names.push("sum".into());
            Ok(LevelSetGrid { grid: *grid, names, channels, sigmas })
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct OracleRow {
    pub name: &'static str,
    pub lhs: f64,
    pub rhs: f64,
    /// `lhs − rhs`.
    pub gap: f64,
    pub tolerance: f64,
    pub ok: bool,
}

#[derive(Clone, Debug, PartialEq)]
pub struct OracleReport {
    pub rows: Vec<OracleRow>,
}

impl OracleReport {
    pub fn all_ok(&self) -> bool {
        self.rows.iter().all(|r| r.ok)
    }
}

impl fmt::Display for OracleReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "{:<28} {:>16} {:>16} {:>12} {:>10}  status", "identity", "lhs", "rhs", "gap", "tol")?;
        for r in &self.rows {
            writeln!(
                f,
                "{:<28} {:>16.10e} {:>16.10e} {:>12.3e} {:>10.1e}  {}",
                r.name,
                r.lhs,
                r.rhs,
                r.gap,
                r.tolerance,
                if r.ok { "ok" } else { "FLAGGED" }
            )?;
        }
        Ok(())
    }
}

/// Tolerance of the equality rows, relative to `max(1, |rhs|)`.
pub const ORACLE_TOLERANCE: f64 = 1e-10;

/// Checks three identities on one instance:
///
/// * mean primal at `v*` equals `‖Δμ̂‖_q`
/// * covariance primal at the top-`k` eigenvectors equals the Ky Fan `k`-norm
/// * `δE(U) ≤ ` Ky Fan `k`-norm at the same `U`
pub fn oracle_report(phi: &dyn FeatureMap, real: &Tensor, fake: &Tensor, k: usize, p: Norm) -> Result<OracleReport> {
    let mut rows = Vec::new();
    let scaled = |x: f64| ORACLE_TOLERANCE * x.abs().max(1.0);

    let delta = mean_embed(phi, real)?.0.sub(&mean_embed(phi, fake)?.0)?;
    let v = optimal_mean_direction(&delta, p)?;
    let primal = mean_primal_loss(&MeanCritic::new(v, p), phi, real, fake)?;
    let dual = mean_dual_loss(p.conjugate(), phi, real, fake)?;
    rows.push(OracleRow {
        name: "mean primal = dual",
        lhs: primal,
        rhs: dual,
        gap: primal - dual,
        tolerance: scaled(dual),
        ok: (primal - dual).abs() <= scaled(dual),
    });

    let d = cov_delta(phi, real, fake)?;
    let m = d.rows();
    if k == 0 || k > m {
        return Err(Error::contract(format!("need 1 ≤ k ≤ {m}, got {k}")));
    }
    let eig = symmetric_eigen(&d)?;
    let mut u = vec![0.0; m * k];
    let mut vv = vec![0.0; m * k];
    for j in 0..k {
        let s = if eig.values[j] < 0.0 { -1.0 } else { 1.0 };
        for (i, x) in eig.vector(j).into_iter().enumerate() {
            u[i * k + j] = s * x;
            vv[i * k + j] = x;
        }
    }
    let (u, vv) = (Tensor::matrix(m, k, u)?, Tensor::matrix(m, k, vv)?);
    let ky = ky_fan_norm(&d, k)?;
    let cov = cov_primal_loss(&CovCritic::new(u.clone(), vv.clone())?, phi, real, fake)?;
    rows.push(OracleRow {
        name: "cov primal = Ky Fan",
        lhs: cov,
        rhs: ky,
        gap: cov - ky,
        tolerance: scaled(ky),
        ok: (cov - ky).abs() <= scaled(ky),
    });

    let energy = subspace_energy(&vv, phi, real, fake)?;
    rows.push(OracleRow {
        name: "subspace energy <= Ky Fan",
        lhs: energy,
        rhs: ky,
        gap: energy - ky,
        tolerance: 1e-12,
        ok: energy <= ky + 1e-12,
    });
    Ok(OracleReport { rows })
}
