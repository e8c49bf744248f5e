use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::Error;

/// An `ℓ_p` norm index restricted to the three cases the objectives support.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Norm {
    L1,
    L2,
    Inf,
}

impl Norm {
    pub const ALL: [Norm; 3] = [Norm::L1, Norm::L2, Norm::Inf];

    /// The Hölder conjugate `q` with `1/p + 1/q = 1`.
    pub fn conjugate(self) -> Norm {
        match self {
            Norm::L1 => Norm::Inf,
            Norm::L2 => Norm::L2,
            Norm::Inf => Norm::L1,
        }
    }

    pub fn of(self, x: &[f64]) -> f64 {
        match self {
            Norm::L1 => x.iter().map(|v| v.abs()).sum(),
            Norm::L2 => x.iter().map(|v| v * v).sum::<f64>().sqrt(),
            Norm::Inf => x.iter().fold(0.0, |m, v| m.max(v.abs())),
        }
    }

    /// Subgradient of `‖x‖` at `x`, written into `out`.
    ///
    /// Conventions at non-differentiable points: `ℓ1` uses `sign(0) = 0`,
    /// `ℓ∞` picks the lowest index among maximal `|x_i|`, and every norm has
    /// a zero subgradient at `x = 0`.
    pub fn subgradient(self, x: &[f64], out: &mut [f64]) {
        out.iter_mut().for_each(|o| *o = 0.0);
        match self {
            Norm::L1 => {
                for (o, &v) in out.iter_mut().zip(x) {
                    *o = sign0(v);
                }
            }
            Norm::L2 => {
                let n = Norm::L2.of(x);
                if n > 0.0 {
                    for (o, &v) in out.iter_mut().zip(x) {
                        *o = v / n;
                    }
                }
            }
            Norm::Inf => {
                if let Some(i) = argmax_abs(x) {
                    out[i] = sign0(x[i]);
                }
            }
        }
    }
}

/// Sign with `sign(0) = 0`.
pub(crate) fn sign0(x: f64) -> f64 {
    if x > 0.0 {
        1.0
    } else if x < 0.0 {
        -1.0
    } else {
        0.0
    }
}

/// Lowest index attaining the maximal absolute value.
pub(crate) fn argmax_abs(x: &[f64]) -> Option<usize> {
    let mut best: Option<(usize, f64)> = None;
    for (i, v) in x.iter().enumerate() {
        let a = v.abs();
        match best {
            Some((_, b)) if a <= b => {}
            _ => best = Some((i, a)),
        }
    }
    best.map(|(i, _)| i)
}

impl fmt::Display for Norm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Norm::L1 => "1",
            Norm::L2 => "2",
            Norm::Inf => "inf",
        })
    }
}

impl FromStr for Norm {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "1" | "l1" => Ok(Norm::L1),
            "2" | "l2" => Ok(Norm::L2),
            "inf" | "linf" | "infinity" => Ok(Norm::Inf),
            other => Err(Error::Config(format!("unsupported norm `{other}`, expected 1, 2 or inf"))),
        }
    }
}

impl Serialize for Norm {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        match self {
            Norm::L1 => s.serialize_i64(1),
            Norm::L2 => s.serialize_i64(2),
            Norm::Inf => s.serialize_str("inf"),
        }
    }
}

impl<'de> Deserialize<'de> for Norm {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Raw {
            Int(i64),
            Float(f64),
            Str(String),
        }
        let s = match Raw::deserialize(d)? {
            Raw::Int(i) => i.to_string(),
            Raw::Float(f) if f == f64::INFINITY => "inf".to_string(),
            Raw::Float(f) if f.fract() == 0.0 && f.abs() < 1e9 => (f as i64).to_string(),
            Raw::Float(f) => f.to_string(),
            Raw::Str(s) => s,
        };
        s.parse().map_err(serde::de::Error::custom)
    }
}
