//! Standard constitutive-relation elements.
//!
//! Every element is separable: a block of dimension `n` applies the same
//! scalar relation to each coordinate. Each element is described three ways:
//! a smooth-or-piecewise parametric form `(f, g, Q)`, a reduced form
//! `(Q̂, 𝒜)`, and the closed-form wave map `c = m(d)` under the standard
//! transform `c = (a - b)/√2`, `d = (a + b)/√2`.
//!
//! Parametric forms used for the set-valued elements:
//!
//! | element        | f(y)                 | g(y)                 | Q(y)      |
//! |----------------|----------------------|----------------------|-----------|
//! | box [lo, hi]   | clamp(y, lo, hi)     | y − clamp(y, lo, hi) | 0         |
//! | λ·\|a\|        | y − clamp(y, −λ, λ)  | clamp(y, −λ, λ)      | λ·\|f(y)\| |
//! | constant e     | e                    | y                    | 0         |
//! | zero           | 0                    | y                    | 0         |
//!
//! For all of these `a + b = y`, so the parameter is recovered as `y = √2·d`.

use std::f64::consts::SQRT_2;

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum CatalogCr {
    /// `Q̂(a) = q a²/2 + linear·a`.
    Quadratic { q: f64, linear: f64 },
    /// `Q̂(a) = slope·a`.
    Linear { slope: f64 },
    /// `a = value`, `b` free.
    Constant { value: f64 },
    /// `Q̂(a) = weight·|a|`.
    AbsoluteValue { weight: f64 },
    /// `a ≥ 0`, `b ≤ 0`, `ab = 0`.
    NonNegative,
    /// `lo ≤ a ≤ hi`; either bound may be infinite.
    Box { lo: f64, hi: f64 },
    /// `a = 0`.
    Zero,
}

/// Closed-form class of a catalog map, recorded alongside the battery-based
/// classifier.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum CatalogClass {
    Neutral,
    Passive,
    Dissipative { margin: f64 },
    Source,
    Expansive,
}

impl CatalogCr {
    pub fn name(&self) -> &'static str {
        match self {
            CatalogCr::Quadratic { .. } => "quadratic",
            CatalogCr::Linear { .. } => "linear",
            CatalogCr::Constant { .. } => "constant",
            CatalogCr::AbsoluteValue { .. } => "absolute-value",
            CatalogCr::NonNegative => "nonnegative",
            CatalogCr::Box { .. } => "box",
            CatalogCr::Zero => "zero",
        }
    }

    /// Checks parameters. With `require_passive`, elements whose map would
    /// not be passive are rejected.
    pub fn validate(&self, require_passive: bool) -> Result<()> {
        let finite = |name: &str, v: f64| {
            if v.is_finite() {
                Ok(())
            } else {
                Err(Error::BadParams(format!("{}: {name} must be finite", self.name())))
            }
        };
        match *self {
            CatalogCr::Quadratic { q, linear } => {
                finite("q", q)?;
                finite("linear", linear)?;
                if q <= -1.0 {
                    return Err(Error::BadParams(format!(
                        "quadratic: q = {q} makes the parametrization non-invertible"
                    )));
                }
                if require_passive && q < 0.0 {
                    return Err(Error::BadParams(format!(
                        "quadratic: q = {q} < 0 is not passive"
                    )));
                }
            }
            CatalogCr::Linear { slope } => finite("slope", slope)?,
            CatalogCr::Constant { value } => finite("value", value)?,
            CatalogCr::AbsoluteValue { weight } => {
                finite("weight", weight)?;
                if weight < 0.0 {
                    return Err(Error::BadParams(format!(
                        "absolute-value: weight = {weight} must be nonnegative"
                    )));
                }
            }
            CatalogCr::Box { lo, hi } => {
                if lo.is_nan() || hi.is_nan() || lo == f64::INFINITY || hi == f64::NEG_INFINITY {
                    return Err(Error::BadParams("box: invalid bounds".into()));
                }
                if lo >= hi {
                    return Err(Error::BadParams(format!(
                        "box: need lo < hi, got [{lo}, {hi}]; use a constant element to pin a value"
                    )));
                }
            }
            CatalogCr::NonNegative | CatalogCr::Zero => {}
        }
        Ok(())
    }

    fn as_box(&self) -> Option<(f64, f64)> {
        match *self {
            CatalogCr::Box { lo, hi } => Some((lo, hi)),
            CatalogCr::NonNegative => Some((0.0, f64::INFINITY)),
            _ => None,
        }
    }

    pub fn f(&self, y: f64) -> f64 {
        match *self {
            CatalogCr::Quadratic { .. } | CatalogCr::Linear { .. } => y,
            CatalogCr::Constant { value } => value,
            CatalogCr::Zero => 0.0,
            CatalogCr::AbsoluteValue { weight } => y - y.clamp(-weight, weight),
            CatalogCr::Box { .. } | CatalogCr::NonNegative => {
                let (lo, hi) = self.as_box().unwrap();
                y.clamp(lo, hi)
            }
        }
    }

    pub fn g(&self, y: f64) -> f64 {
        match *self {
            CatalogCr::Quadratic { q, linear } => q * y + linear,
            CatalogCr::Linear { slope } => slope,
            CatalogCr::Constant { .. } | CatalogCr::Zero => y,
            CatalogCr::AbsoluteValue { weight } => y.clamp(-weight, weight),
            CatalogCr::Box { .. } | CatalogCr::NonNegative => {
                let (lo, hi) = self.as_box().unwrap();
                y - y.clamp(lo, hi)
            }
        }
    }

    pub fn cost(&self, y: f64) -> f64 {
        match *self {
            CatalogCr::Quadratic { q, linear } => 0.5 * q * y * y + linear * y,
            CatalogCr::Linear { slope } => slope * y,
            CatalogCr::AbsoluteValue { weight } => weight * self.f(y).abs(),
            _ => 0.0,
        }
    }

    /// Derivative of `f`; one-sided (right) at knees.
    pub fn f_prime(&self, y: f64) -> f64 {
        match *self {
            CatalogCr::Quadratic { .. } | CatalogCr::Linear { .. } => 1.0,
            CatalogCr::Constant { .. } | CatalogCr::Zero => 0.0,
            CatalogCr::AbsoluteValue { weight } => {
                if y.abs() > weight {
                    1.0
                } else {
                    0.0
                }
            }
            CatalogCr::Box { .. } | CatalogCr::NonNegative => {
                let (lo, hi) = self.as_box().unwrap();
                if y >= lo && y < hi {
                    1.0
                } else {
                    0.0
                }
            }
        }
    }

    /// Reduced primal cost; `+∞` outside the feasible set.
    pub fn reduced_cost(&self, a: f64) -> f64 {
        match *self {
            CatalogCr::Quadratic { q, linear } => 0.5 * q * a * a + linear * a,
            CatalogCr::Linear { slope } => slope * a,
            CatalogCr::AbsoluteValue { weight } => weight * a.abs(),
            CatalogCr::Constant { value } => {
                if a == value {
                    0.0
                } else {
                    f64::INFINITY
                }
            }
            CatalogCr::Zero => {
                if a == 0.0 {
                    0.0
                } else {
                    f64::INFINITY
                }
            }
            CatalogCr::Box { .. } | CatalogCr::NonNegative => {
                let (lo, hi) = self.as_box().unwrap();
                if (lo..=hi).contains(&a) {
                    0.0
                } else {
                    f64::INFINITY
                }
            }
        }
    }

    /// Closed-form wave map under the standard transform.
    pub fn wave_map(&self, d: f64) -> f64 {
        match *self {
            CatalogCr::Quadratic { q, linear } => {
                ((1.0 - q) * d - SQRT_2 * linear) / (1.0 + q)
            }
            CatalogCr::Linear { slope } => d - SQRT_2 * slope,
            CatalogCr::Constant { value } => SQRT_2 * value - d,
            CatalogCr::Zero => -d,
            CatalogCr::AbsoluteValue { weight } => {
                let knee = weight / SQRT_2;
                if d >= knee {
                    d - SQRT_2 * weight
                } else if d <= -knee {
                    d + SQRT_2 * weight
                } else {
                    -d
                }
            }
            CatalogCr::Box { .. } | CatalogCr::NonNegative => {
                let (lo, hi) = self.as_box().unwrap();
                // d plus a reflecting nonnegativity element at each finite wall
                let mut c = d;
                if lo.is_finite() {
                    let wall = lo / SQRT_2;
                    c += wall - d + nonnegative_map(d - wall);
                }
                if hi.is_finite() {
                    let wall = hi / SQRT_2;
                    c += wall - d - nonnegative_map(d - wall);
                }
                c
            }
        }
    }

    /// Internal parameter `y` that maps to the incident wave `d`.
    pub fn parameter(&self, d: f64) -> f64 {
        match *self {
            CatalogCr::Quadratic { q, linear } => (SQRT_2 * d - linear) / (1.0 + q),
            CatalogCr::Linear { slope } => SQRT_2 * d - slope,
            CatalogCr::Constant { value } => SQRT_2 * d - value,
            _ => SQRT_2 * d,
        }
    }

    /// Incident-wave values where the map changes branch.
    pub fn knees(&self) -> Vec<f64> {
        match *self {
            CatalogCr::AbsoluteValue { weight } => vec![-weight / SQRT_2, weight / SQRT_2],
            CatalogCr::Box { .. } | CatalogCr::NonNegative => {
                let (lo, hi) = self.as_box().unwrap();
                [lo, hi]
                    .into_iter()
                    .filter(|v| v.is_finite())
                    .map(|v| v / SQRT_2)
                    .collect()
            }
            _ => Vec::new(),
        }
    }

    /// `(s, e)` with `m(d) = s·d + e` for elements wired as sources.
    pub fn source_params(&self) -> Option<(f64, f64)> {
        match *self {
            CatalogCr::Linear { slope } => Some((1.0, -SQRT_2 * slope)),
            CatalogCr::Constant { value } => Some((-1.0, SQRT_2 * value)),
            CatalogCr::Zero => Some((-1.0, 0.0)),
            _ => None,
        }
    }

    pub fn class(&self) -> CatalogClass {
        match *self {
            CatalogCr::Quadratic { q, linear } => {
                let r = ((1.0 - q) / (1.0 + q)).abs();
                if r < 1.0 {
                    CatalogClass::Dissipative { margin: 1.0 - r }
                } else if r > 1.0 {
                    CatalogClass::Expansive
                } else if linear == 0.0 {
                    CatalogClass::Neutral
                } else {
                    CatalogClass::Passive
                }
            }
            CatalogCr::Linear { .. } | CatalogCr::Constant { .. } => CatalogClass::Source,
            CatalogCr::Zero | CatalogCr::NonNegative => CatalogClass::Neutral,
            CatalogCr::AbsoluteValue { weight } => {
                if weight == 0.0 {
                    CatalogClass::Neutral
                } else {
                    CatalogClass::Passive
                }
            }
            CatalogCr::Box { lo, hi } => {
                if (lo == 0.0 || lo == f64::NEG_INFINITY) && hi == f64::INFINITY {
                    CatalogClass::Neutral
                } else {
                    CatalogClass::Passive
                }
            }
        }
    }

    /// Reduced dual cost `R̂(b)`; `+∞` outside `ℬ`.
    pub fn reduced_dual_cost(&self, b: f64) -> f64 {
        match *self {
            CatalogCr::Quadratic { q, linear } if q > 0.0 => (b - linear).powi(2) / (2.0 * q),
            CatalogCr::Quadratic { linear, .. } | CatalogCr::Linear { slope: linear } => {
                if b == linear {
                    0.0
                } else {
                    f64::INFINITY
                }
            }
            CatalogCr::Constant { value } => value * b,
            CatalogCr::Zero => 0.0,
            CatalogCr::AbsoluteValue { weight } => {
                if b.abs() <= weight {
                    0.0
                } else {
                    f64::INFINITY
                }
            }
            CatalogCr::Box { .. } | CatalogCr::NonNegative => {
                let (lo, hi) = self.as_box().unwrap();
                // support function of [lo, hi]
                if b > 0.0 {
                    if hi.is_finite() {
                        hi * b
                    } else {
                        f64::INFINITY
                    }
                } else if b < 0.0 {
                    if lo.is_finite() {
                        lo * b
                    } else {
                        f64::INFINITY
                    }
                } else {
                    0.0
                }
            }
        }
    }
}

/// The verified nonnegativity element `m(d) = |d|`.
pub fn nonnegative_map(d: f64) -> f64 {
    d.abs()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sweep() -> impl Iterator<Item = f64> {
        (0..=1000).map(|j| -10.0 + 20.0 * j as f64 / 1000.0)
    }

    fn all() -> Vec<CatalogCr> {
        vec![
            CatalogCr::Quadratic { q: 0.0, linear: 0.0 },
            CatalogCr::Quadratic { q: 1.0, linear: -2.0 },
            CatalogCr::Quadratic { q: 3.5, linear: 0.7 },
            CatalogCr::Linear { slope: -1.5 },
            CatalogCr::Constant { value: 2.0 },
            CatalogCr::AbsoluteValue { weight: 1.0 },
            CatalogCr::NonNegative,
            CatalogCr::Box { lo: -1.0, hi: 2.0 },
            CatalogCr::Box { lo: f64::NEG_INFINITY, hi: 0.5 },
            CatalogCr::Zero,
        ]
    }

    #[test]
    fn parametric_sweep_lies_on_wave_map() {
        for el in all() {
            for y in sweep() {
                let (a, b) = (el.f(y), el.g(y));
                let c = (a - b) / SQRT_2;
                let d = (a + b) / SQRT_2;
                assert!((el.wave_map(d) - c).abs() < 1e-12, "{el:?} at y={y}");
                assert!((el.parameter(d) - y).abs() < 1e-12, "{el:?} at y={y}");
            }
        }
    }

    #[test]
    fn gradient_coupling_holds_away_from_knees() {
        for el in all() {
            for y in sweep() {
                if el.knees().iter().any(|k| (y - k * SQRT_2).abs() < 1e-3) {
                    continue;
                }
                let h = 1e-6;
                let fd = (el.cost(y + h) - el.cost(y - h)) / (2.0 * h);
                assert!((fd - el.f_prime(y) * el.g(y)).abs() < 1e-5, "{el:?} at y={y}");
            }
        }
    }

    #[test]
    fn reduced_forms_match_sweep() {
        for el in all() {
            for y in sweep() {
                assert!((el.reduced_cost(el.f(y)) - el.cost(y)).abs() < 1e-12);
                let dual = el.f(y) * el.g(y) - el.cost(y);
                let rd = el.reduced_dual_cost(el.g(y));
                assert!((rd - dual).abs() < 1e-9, "{el:?} at y={y}: {rd} vs {dual}");
            }
        }
    }

    #[test]
    fn abs_map_is_continuous_at_knees() {
        let el = CatalogCr::AbsoluteValue { weight: 0.8 };
        for k in el.knees() {
            let left = el.wave_map(k - 1e-12);
            let right = el.wave_map(k + 1e-12);
            assert!((left - right).abs() < 1e-11);
        }
    }

    #[test]
    fn param_validation() {
        assert!(CatalogCr::Quadratic { q: -0.5, linear: 0.0 }.validate(true).is_err());
        assert!(CatalogCr::Quadratic { q: -0.5, linear: 0.0 }.validate(false).is_ok());
        assert!(CatalogCr::Quadratic { q: -1.0, linear: 0.0 }.validate(false).is_err());
        assert!(CatalogCr::AbsoluteValue { weight: -1.0 }.validate(true).is_err());
        assert!(CatalogCr::Box { lo: 1.0, hi: 1.0 }.validate(true).is_err());
        assert!(CatalogCr::Box { lo: 0.0, hi: f64::INFINITY }.validate(true).is_ok());
    }

    #[test]
    fn box_from_zero_is_nonnegativity() {
        let b = CatalogCr::Box { lo: 0.0, hi: f64::INFINITY };
        for d in [-3.0, -0.1, 0.0, 0.2, 5.0] {
            assert_eq!(b.wave_map(d), CatalogCr::NonNegative.wave_map(d));
            assert_eq!(b.wave_map(d), d.abs());
        }
    }
}
