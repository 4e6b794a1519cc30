//! Builtin initial data.

use std::f64::consts::PI;
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::field::{AnalyticField, Domain, FieldRef};
use crate::grid::{GridField, InterpOrder};

fn default_width() -> f64 {
    1.0
}

fn default_modes() -> usize {
    4
}

fn default_constant() -> f64 {
    7.0
}

/// A named datum with its parameters.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "name", rename_all = "kebab-case")]
pub enum DataSpec {
    /// `x₁` on all of `R^d`.
    LinearX1,
    /// `exp(-|x - c|² / w²)`, centered at the origin unless given.
    Gaussian {
        #[serde(default)]
        center: Option<Vec<f64>>,
        #[serde(default = "default_width")]
        width: f64,
    },
    /// `sin(π x₂ / 4)` on the period-8 torus.
    PlaneWaveX2,
    /// Sum of `modes` random Fourier modes with integer wavenumbers in `[-3, 3]^d` on the period-8 torus.
    RandomTrig {
        #[serde(default)]
        seed: u64,
        #[serde(default = "default_modes")]
        modes: usize,
    },
    Constant {
        #[serde(default = "default_constant")]
        value: f64,
    },
    /// A sampled file in the binary grid format, interpolated with cubic Lagrange weights.
    Grid { path: String },
}

impl DataSpec {
    pub fn gaussian_at(center: Vec<f64>, width: f64) -> Self {
        DataSpec::Gaussian {
            center: Some(center),
            width,
        }
    }

    pub fn label(&self) -> String {
        match self {
            DataSpec::LinearX1 => "linear-x1".into(),
            DataSpec::Gaussian { center, width } => match center {
                Some(c) => format!("gaussian(center={c:?}, width={width})"),
                None => format!("gaussian(width={width})"),
            },
            DataSpec::PlaneWaveX2 => "plane-wave-x2".into(),
            DataSpec::RandomTrig { seed, modes } => format!("random-trig(seed={seed}, modes={modes})"),
            DataSpec::Constant { value } => format!("constant({value})"),
            DataSpec::Grid { path } => format!("grid({path})"),
        }
    }

    pub fn build(&self, d: usize) -> Result<FieldRef> {
        if d < 2 {
            return Err(Error::InvalidArgument(format!("dimension {d} < 2")));
        }
        let label = self.label();
        Ok(match self.clone() {
            DataSpec::LinearX1 => Arc::new(AnalyticField::new(label, Domain::Whole(d), |x| x[0], move |_| unit(d, 0))),
            DataSpec::Gaussian { center, width } => {
                let c = center.unwrap_or_else(|| vec![0.0; d]);
                if c.len() != d || !(width > 0.0) {
                    return Err(Error::InvalidArgument(format!("gaussian center {c:?} / width {width} invalid for d = {d}")));
                }
                let w2 = width * width;
                let c2 = c.clone();
                Arc::new(AnalyticField::new(
                    label,
                    Domain::Whole(d),
                    move |x| (-dist_sq(x, &c) / w2).exp(),
                    move |x| {
                        let e = (-dist_sq(x, &c2) / w2).exp();
                        x.iter().zip(&c2).map(|(a, b)| -2.0 * (a - b) / w2 * e).collect()
                    },
                ))
            }
            DataSpec::PlaneWaveX2 => Arc::new(AnalyticField::new(
                label,
                Domain::torus(d),
                |x| (PI * x[1] / 4.0).sin(),
                move |x| {
                    let mut g = vec![0.0; d];
                    g[1] = PI / 4.0 * (PI * x[1] / 4.0).cos();
                    g
                },
            )),
            DataSpec::RandomTrig { seed, modes } => {
                if modes == 0 {
                    return Err(Error::InvalidArgument("random-trig needs at least one mode".into()));
                }
                let terms = Arc::new(random_modes(seed, modes, d));
                let t2 = terms.clone();
                Arc::new(AnalyticField::new(
                    label,
                    Domain::torus(d),
                    move |x| terms.iter().map(|m| m.value(x)).sum(),
                    move |x| {
                        let mut g = vec![0.0; x.len()];
                        for m in t2.iter() {
                            m.add_gradient(x, &mut g);
                        }
                        g
                    },
                ))
            }
            DataSpec::Constant { value } => Arc::new(AnalyticField::new(label, Domain::Whole(d), move |_| value, move |_| vec![0.0; d])),
            DataSpec::Grid { path } => {
                let file = std::fs::File::open(&path)?;
                let g = GridField::read_from(std::io::BufReader::new(file))?.with_order(InterpOrder::Cubic);
                if g.cube().dim() != d {
                    return Err(Error::InvalidArgument(format!("grid {path} has dimension {}, expected {d}", g.cube().dim())));
                }
                Arc::new(g)
            }
        })
    }
}

fn unit(d: usize, k: usize) -> Vec<f64> {
    let mut e = vec![0.0; d];
    e[k] = 1.0;
    e
}

fn dist_sq(x: &[f64], c: &[f64]) -> f64 {
    x.iter().zip(c).map(|(a, b)| (a - b) * (a - b)).sum()
}

/// `a cos(2π k·x / 8) + b sin(2π k·x / 8)`.
#[derive(Clone, Debug)]
struct Mode {
    k: Vec<f64>,
    a: f64,
    b: f64,
}

impl Mode {
    fn phase(&self, x: &[f64]) -> f64 {
        PI / 4.0 * self.k.iter().zip(x).map(|(k, x)| k * x).sum::<f64>()
    }

    fn value(&self, x: &[f64]) -> f64 {
        let p = self.phase(x);
        self.a * p.cos() + self.b * p.sin()
    }

    fn add_gradient(&self, x: &[f64], g: &mut [f64]) {
        let p = self.phase(x);
        let s = PI / 4.0 * (-self.a * p.sin() + self.b * p.cos());
        for (gi, ki) in g.iter_mut().zip(&self.k) {
            *gi += s * ki;
        }
    }
}

fn random_modes(seed: u64, modes: usize, d: usize) -> Vec<Mode> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::with_capacity(modes);
    while out.len() < modes {
        let k: Vec<f64> = (0..d).map(|_| rng.random_range(-3i32..=3) as f64).collect();
        if k.iter().all(|&v| v == 0.0) {
            continue;
        }
        out.push(Mode {
            k,
            a: rng.random_range(-1.0..1.0),
            b: rng.random_range(-1.0..1.0),
        });
    }
    out
}
