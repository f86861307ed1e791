//! Within-host viral load / antibody dynamics.
//!
//! Infected individuals move in the `(z, y)` plane (viral load, antibody
//! level) along the linear flow
//!
//! ```text
//! dz/dτ = a1 z - a2 y
//! dy/dτ = a4 z - a3 y
//! ```
//!
//! entering at `(z0, y')` with `y' < y0 = z0 a1 / a2` and leaving once the
//! viral load returns to `z0` with `y > y0`. Under the oscillation condition
//! `4 a2 a4 > (a1 + a3)^2` the flow has the closed form used throughout this
//! module.

use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::numerics::{find_root, NumericsError, RootBracket};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum WithinHostError {
    #[error("parameter {name} must be strictly positive, got {value}")]
    NonPositive { name: &'static str, value: f64 },
    #[error("non-oscillatory parameters: 4 a2 a4 - (a1 + a3)^2 = {discriminant} <= 0")]
    NonOscillatory { discriminant: f64 },
    #[error("entry antibody level {y_entry} outside [0, {y0})")]
    EntryOutOfRange { y_entry: f64, y0: f64 },
    #[error("exit antibody level {y_plus} below threshold {y0}")]
    BelowThreshold { y_plus: f64, y0: f64 },
    #[error("no return to z0 within (0, {horizon}]")]
    RootNotFound { horizon: f64 },
    #[error("random search exhausted after {draws} draws ({accepted} accepted)")]
    ExhaustedBudget { draws: u64, accepted: usize },
    #[error(transparent)]
    Numerics(#[from] NumericsError),
}

/// Entry antibody level, as a fraction of `y0`, used when a single scalar
/// summary (`τ1`, `y+`, `τ2`) is needed.
pub const DEFAULT_ENTRY_FRACTION: f64 = 0.5;

/// Budget of raw draws for [`sample_admissible`].
pub const SAMPLE_DRAW_BUDGET: u64 = 1_000_000;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WithinHostParams {
    /// Virus growth rate.
    pub a1: f64,
    /// Viral clearance per unit antibody.
    pub a2: f64,
    /// Antibody decay while infected.
    pub a3: f64,
    /// Antibody production per unit viral load.
    pub a4: f64,
    /// Antibody decay while recovered.
    pub a5: f64,
    /// Minimum detectable viral load.
    pub z0: f64,
}

impl Default for WithinHostParams {
    fn default() -> Self {
        Self::reference()
    }
}

impl WithinHostParams {
    /// Baseline rates `(1, 0.44, 0.72, 1.93)`, `a5 = 0.01`, `z0 = 1`.
    pub fn reference() -> Self {
        Self {
            a1: 1.0,
            a2: 0.44,
            a3: 0.72,
            a4: 1.93,
            a5: 0.01,
            z0: 1.0,
        }
    }

    pub fn with_rates(mut self, a1: f64, a2: f64, a3: f64, a4: f64) -> Self {
        self.a1 = a1;
        self.a2 = a2;
        self.a3 = a3;
        self.a4 = a4;
        self
    }

    /// `4 a2 a4 - (a1 + a3)^2`.
    pub fn discriminant(&self) -> f64 {
        4.0 * self.a2 * self.a4 - (self.a1 + self.a3).powi(2)
    }

    pub fn validate(&self) -> Result<(), WithinHostError> {
        for (name, value) in [
            ("a1", self.a1),
            ("a2", self.a2),
            ("a3", self.a3),
            ("a4", self.a4),
            ("a5", self.a5),
            ("z0", self.z0),
        ] {
            if !(value > 0.0) || !value.is_finite() {
                return Err(WithinHostError::NonPositive { name, value });
            }
        }
        let discriminant = self.discriminant();
        if discriminant > 0.0 {
            Ok(())
        } else {
            Err(WithinHostError::NonOscillatory { discriminant })
        }
    }

    /// `y0 = z0 a1 / a2`, where the viral-load velocity on `z = z0` changes sign.
    pub fn antibody_threshold(&self) -> f64 {
        self.z0 * self.a1 / self.a2
    }

    /// Imaginary part `β` of the flow eigenvalues.
    pub fn oscillation_frequency(&self) -> Result<f64, WithinHostError> {
        self.validate()?;
        Ok(0.5 * self.discriminant().sqrt())
    }

    /// Real part of the flow eigenvalues, `(a1 - a3) / 2`.
    pub fn growth_rate(&self) -> f64 {
        0.5 * (self.a1 - self.a3)
    }

    pub fn velocity(&self, z: f64, y: f64) -> (f64, f64) {
        (self.a1 * z - self.a2 * y, self.a4 * z - self.a3 * y)
    }

    /// Inflow speed `a1 z0 - a2 y` across the boundary `z = z0`.
    pub fn boundary_speed(&self, y: f64) -> f64 {
        self.a1 * self.z0 - self.a2 * y
    }

    fn check_entry(&self, y_entry: f64) -> Result<f64, WithinHostError> {
        let y0 = self.antibody_threshold();
        if !(y_entry >= 0.0 && y_entry < y0) {
            return Err(WithinHostError::EntryOutOfRange { y_entry, y0 });
        }
        Ok(y0)
    }
}

/// A point on a characteristic, `tau` days after entry.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CharPoint {
    pub z: f64,
    pub y: f64,
    pub tau: f64,
}

/// Per-entry summary of an infection: how long the host stays infected and
/// how long immunity lasts afterwards.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct InfectionWindow {
    pub y_entry: f64,
    pub tau1: f64,
    pub y_plus: f64,
    pub tau2: f64,
}

/// Closed-form flow map over time `tau` starting from an arbitrary point.
///
/// `beta` must be the oscillation frequency of `params`.
pub fn flow(params: &WithinHostParams, beta: f64, z: f64, y: f64, tau: f64) -> (f64, f64) {
    let half_trace = 0.5 * (params.a1 + params.a3);
    let growth = (params.growth_rate() * tau).exp();
    let (s, c) = (beta * tau).sin_cos();
    let zt = growth * (z * c + (half_trace * z - params.a2 * y) / beta * s);
    let yt = growth * (y * c + (params.a4 * z - half_trace * y) / beta * s);
    (zt, yt)
}

pub fn characteristic_at(
    params: &WithinHostParams,
    y_entry: f64,
    tau: f64,
) -> Result<CharPoint, WithinHostError> {
    let beta = params.oscillation_frequency()?;
    params.check_entry(y_entry)?;
    let (z, y) = flow(params, beta, params.z0, y_entry, tau);
    Ok(CharPoint { z, y, tau })
}

/// Factor `e^{(a3 - a1) τ}` by which the infected density changes along a
/// characteristic.
pub fn reconstruct_density(
    params: &WithinHostParams,
    y_entry: f64,
    tau: f64,
) -> Result<f64, WithinHostError> {
    params.oscillation_frequency()?;
    params.check_entry(y_entry)?;
    Ok(((params.a3 - params.a1) * tau).exp())
}

/// `(1/a5) ln(y+ / y0)`.
pub fn recovery_period(params: &WithinHostParams, y_plus: f64) -> Result<f64, WithinHostError> {
    let y0 = params.antibody_threshold();
    if !(y_plus >= y0) {
        return Err(WithinHostError::BelowThreshold { y_plus, y0 });
    }
    if !(params.a5 > 0.0) {
        return Err(WithinHostError::NonPositive {
            name: "a5",
            value: params.a5,
        });
    }
    Ok((y_plus / y0).ln() / params.a5)
}

/// Return-to-`z0` function divided by `τ`, with its limit at `τ = 0`.
///
/// Zeros for `τ > 0` are exactly the times at which the characteristic from
/// `(z0, α y0)` sits on `z = z0`; dividing by `τ` removes the trivial zero at
/// entry.
fn scaled_return(params: &WithinHostParams, beta: f64, alpha: f64, tau: f64) -> f64 {
    if tau == 0.0 {
        return params.a1 * (1.0 - alpha);
    }
    let coef = (params.a1 + params.a3 - 2.0 * alpha * params.a1) / (2.0 * beta);
    let (s, c) = (beta * tau).sin_cos();
    let ratio = (params.growth_rate() * tau).exp() * (c + coef * s);
    (ratio - 1.0) / tau
}

/// First return time `τ1` and exit level `y+` for entry level `y_entry`.
pub fn permanence(
    params: &WithinHostParams,
    y_entry: f64,
) -> Result<InfectionWindow, WithinHostError> {
    let beta = params.oscillation_frequency()?;
    let y0 = params.check_entry(y_entry)?;
    let alpha = y_entry / y0;

    let step = PI / (20.0 * beta);
    let horizon = 2.0 * PI / beta;
    let g = |tau: f64| scaled_return(params, beta, alpha, tau);

    let mut lo = 0.0;
    let mut g_lo = g(lo);
    let mut k = 1usize;
    let (lo, hi) = loop {
        let hi = (k as f64 * step).min(horizon);
        let g_hi = g(hi);
        if g_hi <= 0.0 && g_lo > 0.0 {
            break (lo, hi);
        }
        if hi >= horizon {
            return Err(WithinHostError::RootNotFound { horizon });
        }
        lo = hi;
        g_lo = g_hi;
        k += 1;
    };

    let bracket = RootBracket::new(lo, hi).with_tol(1e-13);
    let tau1 = find_root(g, &bracket)?;
    let (_, y_plus) = flow(params, beta, params.z0, y_entry, tau1);
    let tau2 = recovery_period(params, y_plus)?;
    Ok(InfectionWindow {
        y_entry,
        tau1,
        y_plus,
        tau2,
    })
}

/// [`permanence`] at `y' = alpha * y0`.
pub fn permanence_at_fraction(
    params: &WithinHostParams,
    alpha: f64,
) -> Result<InfectionWindow, WithinHostError> {
    permanence(params, alpha * params.antibody_threshold())
}

/// Random search over `(0, 10)^4` for rate tuples `(a1, a2, a3, a4)` that
/// oscillate and whose permanence time at entry fraction `alpha` falls in
/// the open interval `tau1_range`. `a5` and `z0` are copied from `template`.
pub fn sample_admissible(
    template: &WithinHostParams,
    n: usize,
    seed: u64,
    tau1_range: (f64, f64),
    alpha: f64,
) -> Result<Vec<(WithinHostParams, InfectionWindow)>, WithinHostError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::with_capacity(n);
    let mut draws = 0u64;
    while out.len() < n {
        if draws >= SAMPLE_DRAW_BUDGET {
            return Err(WithinHostError::ExhaustedBudget {
                draws,
                accepted: out.len(),
            });
        }
        draws += 1;
        let mut a = [0.0; 4];
        for v in &mut a {
            // (0, 10): reject the zero endpoint.
            loop {
                let u: f64 = rng.gen();
                if u > 0.0 {
                    *v = 10.0 * u;
                    break;
                }
            }
        }
        let p = template.with_rates(a[0], a[1], a[2], a[3]);
        if p.validate().is_err() {
            continue;
        }
        let w = match permanence_at_fraction(&p, alpha) {
            Ok(w) => w,
            // Tangential returns at tiny scales: no usable exit level.
            Err(WithinHostError::BelowThreshold { .. } | WithinHostError::RootNotFound { .. }) => {
                continue
            }
            Err(e) => return Err(e),
        };
        if w.tau1 > tau1_range.0 && w.tau1 < tau1_range.1 {
            out.push((p, w));
        }
    }
    Ok(out)
}
