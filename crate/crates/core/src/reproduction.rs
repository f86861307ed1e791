//! Reproduction numbers, endemic equilibria and disease-free stability
//! diagnostics for the uniform-host-response (UHR) and the structured model.

use num_complex::Complex64;
use statrs::distribution::{Continuous, ContinuousCDF, Normal};
use thiserror::Error;

use crate::numerics::{find_root, quadrature_nodes, NumericsError, QuadratureSpec, RootBracket};
use crate::within_host::{flow, permanence, WithinHostError, WithinHostParams};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ReproductionError {
    #[error("this quantity needs a constant host-to-vector probability")]
    NonConstantBetaHv,
    #[error("invalid epidemiological parameter {name} = {value}")]
    InvalidParameter { name: &'static str, value: f64 },
    #[error("invalid entry distribution: {0}")]
    InvalidDistribution(String),
    #[error(transparent)]
    WithinHost(#[from] WithinHostError),
    #[error(transparent)]
    Numerics(#[from] NumericsError),
}

/// Host-to-vector transmission probability as a function of viral load.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum BetaHv {
    Constant(f64),
    /// `max / (1 + exp(-slope (z - z_half)))`.
    Logistic {
        max: f64,
        z_half: f64,
        slope: f64,
    },
}

impl BetaHv {
    pub fn eval(&self, z: f64) -> f64 {
        match *self {
            BetaHv::Constant(c) => c,
            BetaHv::Logistic { max, z_half, slope } => max / (1.0 + (-slope * (z - z_half)).exp()),
        }
    }

    pub fn as_constant(&self) -> Option<f64> {
        match *self {
            BetaHv::Constant(c) => Some(c),
            BetaHv::Logistic { .. } => None,
        }
    }

    pub fn scaled(&self, k: f64) -> Self {
        match *self {
            BetaHv::Constant(c) => BetaHv::Constant(k * c),
            BetaHv::Logistic { max, z_half, slope } => BetaHv::Logistic {
                max: k * max,
                z_half,
                slope,
            },
        }
    }
}

/// Population-level rates. Times in days, proportions dimensionless.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpiParams {
    /// Biting rate.
    pub b: f64,
    pub beta_vh: f64,
    pub beta_hv: BetaHv,
    /// Vector-to-host ratio.
    pub m: f64,
    pub mu_v: f64,
    /// Intrinsic incubation period.
    pub tau_h: f64,
    /// Extrinsic incubation period.
    pub tau_v: f64,
}

impl Default for EpiParams {
    fn default() -> Self {
        Self::baseline()
    }
}

impl EpiParams {
    /// Baseline dengue values: `b = 1/3`, `β_vh = 0.25`, `β_hv = 0.2`,
    /// `m = 6`, `μ_v = 0.05`, `τ_h = 7`, `τ_v = 10`.
    pub fn baseline() -> Self {
        Self {
            b: 1.0 / 3.0,
            beta_vh: 0.25,
            beta_hv: BetaHv::Constant(0.2),
            m: 6.0,
            mu_v: 0.05,
            tau_h: 7.0,
            tau_v: 10.0,
        }
    }

    pub fn validate(&self) -> Result<(), ReproductionError> {
        let positive = [
            ("b", self.b),
            ("mu_v", self.mu_v),
            ("tau_h", self.tau_h),
            ("tau_v", self.tau_v),
        ];
        for (name, value) in positive {
            if !(value > 0.0) || !value.is_finite() {
                return Err(ReproductionError::InvalidParameter { name, value });
            }
        }
        if !(self.m >= 0.0) || !self.m.is_finite() {
            return Err(ReproductionError::InvalidParameter {
                name: "m",
                value: self.m,
            });
        }
        if !(0.0..=1.0).contains(&self.beta_vh) {
            return Err(ReproductionError::InvalidParameter {
                name: "beta_vh",
                value: self.beta_vh,
            });
        }
        let beta_max = match self.beta_hv {
            BetaHv::Constant(c) => c,
            BetaHv::Logistic { max, .. } => max,
        };
        if !(0.0..=1.0).contains(&beta_max) {
            return Err(ReproductionError::InvalidParameter {
                name: "beta_hv",
                value: beta_max,
            });
        }
        Ok(())
    }

    /// `μ_v (1 + τ_v μ_v)`: vector survival through the extrinsic incubation.
    fn vector_factor(&self) -> f64 {
        self.mu_v * (1.0 + self.tau_v * self.mu_v)
    }

    /// `b² β_vh β_hv m / (μ_v (1 + τ_v μ_v))`, the UHR reproduction number
    /// per day of infectious period.
    pub fn r0_per_infectious_day(&self) -> Result<f64, ReproductionError> {
        let beta_hv = self
            .beta_hv
            .as_constant()
            .ok_or(ReproductionError::NonConstantBetaHv)?;
        Ok(self.b * self.b * self.beta_vh * beta_hv * self.m / self.vector_factor())
    }

    /// Copy with `m` chosen so the UHR reproduction number equals `r0`.
    pub fn with_r0(&self, r0: f64, tau1: f64) -> Result<Self, ReproductionError> {
        let per_unit_m = Self { m: 1.0, ..*self }.r0_per_infectious_day()? * tau1;
        Ok(Self {
            m: r0 / per_unit_m,
            ..*self
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum EntryKind {
    Dirac {
        y_star: f64,
    },
    /// Normal density truncated to `[0, y0]` and renormalised.
    Gaussian {
        center: f64,
        variance: f64,
    },
    Uniform,
    /// Piecewise-linear density through `(y, value)` nodes, renormalised.
    Tabulated {
        nodes: Vec<(f64, f64)>,
    },
}

/// Distribution of the antibody level of newly infected hosts on `[0, y0)`.
#[derive(Debug, Clone, PartialEq)]
pub struct EntryDistribution {
    kind: EntryKind,
    y0: f64,
    norm: f64,
}

impl EntryDistribution {
    pub fn dirac(y_star: f64, y0: f64) -> Result<Self, ReproductionError> {
        if !(y_star > 0.0 && y_star < y0) {
            return Err(ReproductionError::InvalidDistribution(format!(
                "dirac location {y_star} outside (0, {y0})"
            )));
        }
        Ok(Self {
            kind: EntryKind::Dirac { y_star },
            y0,
            norm: 1.0,
        })
    }

    pub fn gaussian(center: f64, variance: f64, y0: f64) -> Result<Self, ReproductionError> {
        if !(variance > 0.0) || !center.is_finite() || !(y0 > 0.0) {
            return Err(ReproductionError::InvalidDistribution(format!(
                "gaussian center {center}, variance {variance} on [0, {y0}]"
            )));
        }
        let normal = Normal::new(center, variance.sqrt())
            .map_err(|e| ReproductionError::InvalidDistribution(e.to_string()))?;
        let norm = normal.cdf(y0) - normal.cdf(0.0);
        if !(norm > 1e-300) {
            return Err(ReproductionError::InvalidDistribution(
                "gaussian has no mass on [0, y0]".into(),
            ));
        }
        Ok(Self {
            kind: EntryKind::Gaussian { center, variance },
            y0,
            norm,
        })
    }

    pub fn uniform(y0: f64) -> Result<Self, ReproductionError> {
        if !(y0 > 0.0) {
            return Err(ReproductionError::InvalidDistribution(format!("y0 = {y0}")));
        }
        Ok(Self {
            kind: EntryKind::Uniform,
            y0,
            norm: y0,
        })
    }

    pub fn tabulated(mut nodes: Vec<(f64, f64)>, y0: f64) -> Result<Self, ReproductionError> {
        nodes.sort_by(|a, b| a.0.total_cmp(&b.0));
        if nodes.len() < 2 || nodes.iter().any(|&(y, v)| !(v >= 0.0) || !y.is_finite()) {
            return Err(ReproductionError::InvalidDistribution(
                "tabulated density needs >= 2 nodes with non-negative values".into(),
            ));
        }
        let mut dist = Self {
            kind: EntryKind::Tabulated { nodes },
            y0,
            norm: 1.0,
        };
        let mass = dist.raw_mass(0.0, y0);
        if !(mass > 0.0) {
            return Err(ReproductionError::InvalidDistribution(
                "tabulated density has no mass on [0, y0]".into(),
            ));
        }
        dist.norm = mass;
        Ok(dist)
    }

    pub fn kind(&self) -> &EntryKind {
        &self.kind
    }

    pub fn y0(&self) -> f64 {
        self.y0
    }

    pub fn point_mass(&self) -> Option<f64> {
        match self.kind {
            EntryKind::Dirac { y_star } => Some(y_star),
            _ => None,
        }
    }

    /// Normalised density; zero outside `[0, y0]`. Not defined for a point mass.
    pub fn density(&self, y: f64) -> f64 {
        if !(0.0..=self.y0).contains(&y) {
            return 0.0;
        }
        match &self.kind {
            EntryKind::Dirac { .. } => 0.0,
            EntryKind::Gaussian { center, variance } => {
                let sd = variance.sqrt();
                let u = (y - center) / sd;
                (-0.5 * u * u).exp() / (sd * (2.0 * std::f64::consts::PI).sqrt()) / self.norm
            }
            EntryKind::Uniform => 1.0 / self.norm,
            EntryKind::Tabulated { nodes } => interp(nodes, y) / self.norm,
        }
    }

    /// Unnormalised mass on `[lo, hi]`.
    fn raw_mass(&self, lo: f64, hi: f64) -> f64 {
        let lo = lo.max(0.0);
        let hi = hi.min(self.y0);
        if !(hi > lo) {
            return 0.0;
        }
        match &self.kind {
            EntryKind::Dirac { y_star } => {
                if (lo..hi).contains(y_star) {
                    1.0
                } else {
                    0.0
                }
            }
            EntryKind::Gaussian { center, variance } => {
                // Built in the constructor, cannot fail here.
                let normal = Normal::new(*center, variance.sqrt()).expect("valid normal");
                normal.cdf(hi) - normal.cdf(lo)
            }
            EntryKind::Uniform => hi - lo,
            EntryKind::Tabulated { nodes } => {
                // Exact for the piecewise-linear interpolant.
                let mut breaks = vec![lo, hi];
                breaks.extend(nodes.iter().map(|n| n.0).filter(|&y| y > lo && y < hi));
                breaks.sort_by(f64::total_cmp);
                breaks
                    .windows(2)
                    .map(|w| 0.5 * (w[1] - w[0]) * (interp(nodes, w[0]) + interp(nodes, w[1])))
                    .sum()
            }
        }
    }

    /// Probability of entering with antibody level in `[lo, hi)`.
    pub fn mass(&self, lo: f64, hi: f64) -> f64 {
        match self.kind {
            EntryKind::Dirac { .. } => self.raw_mass(lo, hi),
            _ => self.raw_mass(lo, hi) / self.norm,
        }
    }

    /// Mean entry antibody level `y★`.
    pub fn mean(&self) -> f64 {
        match &self.kind {
            EntryKind::Dirac { y_star } => *y_star,
            EntryKind::Gaussian { center, variance } => {
                let sd = variance.sqrt();
                let std_normal = Normal::new(0.0, 1.0).expect("standard normal");
                let a = (0.0 - center) / sd;
                let b = (self.y0 - center) / sd;
                center + sd * (std_normal.pdf(a) - std_normal.pdf(b)) / self.norm
            }
            EntryKind::Uniform => 0.5 * self.y0,
            EntryKind::Tabulated { nodes } => {
                let mut breaks = vec![0.0, self.y0];
                breaks.extend(
                    nodes
                        .iter()
                        .map(|n| n.0)
                        .filter(|&y| y > 0.0 && y < self.y0),
                );
                breaks.sort_by(f64::total_cmp);
                // Simpson is exact for y times a linear density.
                let first_moment: f64 = breaks
                    .windows(2)
                    .map(|w| {
                        let mid = 0.5 * (w[0] + w[1]);
                        (w[1] - w[0]) / 6.0
                            * (w[0] * interp(nodes, w[0])
                                + 4.0 * mid * interp(nodes, mid)
                                + w[1] * interp(nodes, w[1]))
                    })
                    .sum();
                first_moment / self.norm
            }
        }
    }
}

fn interp(nodes: &[(f64, f64)], y: f64) -> f64 {
    let first = nodes[0];
    let last = nodes[nodes.len() - 1];
    if y <= first.0 {
        return first.1;
    }
    if y >= last.0 {
        return last.1;
    }
    let i = nodes.partition_point(|n| n.0 <= y);
    let (y0, v0) = nodes[i - 1];
    let (y1, v1) = nodes[i];
    v0 + (v1 - v0) * (y - y0) / (y1 - y0)
}

/// Inflow-weighted averages over the entry distribution.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MeanTimes {
    /// Mean infective permanence time.
    pub t1: f64,
    /// Mean recovery time.
    pub t2: f64,
    /// Mean of `∫ β_hv(z(τ)) dτ` over the infectious period.
    pub t1_beta: f64,
}

/// Endemic state. `i_total` and `r_total` are the infected and recovered
/// host proportions at equilibrium.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EndemicState {
    pub e: f64,
    pub ev: f64,
    pub iv: f64,
    pub i_total: f64,
    pub r_total: f64,
}

impl EndemicState {
    pub fn susceptible(&self) -> f64 {
        1.0 - self.e - self.i_total - self.r_total
    }
}

/// UHR reproduction number for infectious period `tau1`.
pub fn r0_uhr(epi: &EpiParams, tau1: f64) -> Result<f64, ReproductionError> {
    Ok(epi.r0_per_infectious_day()? * tau1)
}

/// Shared closed form for both models: `s_total` is the mean time spent
/// exposed, infected and recovered, `infectivity` the per-entrant mean of
/// `∫ β_hv dτ`.
fn endemic_closed_form(
    epi: &EpiParams,
    r0: f64,
    t1: f64,
    t2: f64,
    infectivity: f64,
) -> Option<EndemicState> {
    if !(r0 > 1.0) {
        return None;
    }
    let s_total = t1 + t2 + epi.tau_h;
    let e = epi.mu_v * epi.tau_h * (r0 - 1.0) / (epi.mu_v * r0 * s_total + epi.b * infectivity);
    let denom = r0 * (1.0 + epi.mu_v * epi.tau_v) + epi.b * epi.beta_vh * epi.m * s_total;
    let iv = (r0 - 1.0) / denom;
    let ev = epi.mu_v * epi.tau_v * iv;
    Some(EndemicState {
        e,
        ev,
        iv,
        i_total: e * t1 / epi.tau_h,
        r_total: e * t2 / epi.tau_h,
    })
}

/// Endemic equilibrium of the UHR system; `None` when `R0 <= 1`.
pub fn endemic_uhr(
    epi: &EpiParams,
    tau1: f64,
    tau2: f64,
) -> Result<Option<EndemicState>, ReproductionError> {
    let r0 = r0_uhr(epi, tau1)?;
    let beta_hv = epi
        .beta_hv
        .as_constant()
        .ok_or(ReproductionError::NonConstantBetaHv)?;
    Ok(endemic_closed_form(epi, r0, tau1, tau2, beta_hv * tau1))
}

/// Right-hand sides of the stationary UHR system evaluated at constant
/// history `e`, i.e. with the window integrals replaced by `e (τ1+τ2)/τ_h`
/// and `e τ1/τ_h`. Returns `(dE, dEv, dIv)`.
pub fn uhr_stationary_residual(
    epi: &EpiParams,
    tau1: f64,
    tau2: f64,
    e: f64,
    ev: f64,
    iv: f64,
) -> Result<(f64, f64, f64), ReproductionError> {
    let beta_hv = epi
        .beta_hv
        .as_constant()
        .ok_or(ReproductionError::NonConstantBetaHv)?;
    let s = 1.0 - e - e * (tau1 + tau2) / epi.tau_h;
    let de = epi.b * epi.beta_vh * epi.m * iv * s - e / epi.tau_h;
    let dev = epi.b * beta_hv * e * tau1 / epi.tau_h * (1.0 - ev - iv)
        - (1.0 / epi.tau_v + epi.mu_v) * ev;
    let div = ev / epi.tau_v - epi.mu_v * iv;
    Ok((de, dev, div))
}

/// `∫_0^{τ1} β_hv(z(τ)) dτ` along the characteristic from `(z0, y_entry)`.
fn path_infectivity(
    whp: &WithinHostParams,
    beta: f64,
    beta_hv: &BetaHv,
    y_entry: f64,
    tau1: f64,
    n_panels: usize,
) -> f64 {
    if let Some(c) = beta_hv.as_constant() {
        return c * tau1;
    }
    let n = n_panels.max(1);
    let h = tau1 / n as f64;
    let mut sum = 0.0;
    for k in 0..=n {
        let tau = if k == n { tau1 } else { k as f64 * h };
        let (z, _) = flow(whp, beta, whp.z0, y_entry, tau);
        let w = if k == 0 || k == n { 0.5 } else { 1.0 };
        sum += w * beta_hv.eval(z);
    }
    sum * h
}

/// `𝒯1`, `𝒯2`, `𝒯1[β_hv]` as inflow-speed weighted averages over `g`.
pub fn mean_times(
    whp: &WithinHostParams,
    g: &EntryDistribution,
    epi: &EpiParams,
    quad: &QuadratureSpec,
) -> Result<MeanTimes, ReproductionError> {
    let beta = whp.oscillation_frequency()?;
    let y0 = whp.antibody_threshold();
    if let Some(y_star) = g.point_mass() {
        let w = permanence(whp, y_star)?;
        return Ok(MeanTimes {
            t1: w.tau1,
            t2: w.tau2,
            t1_beta: path_infectivity(whp, beta, &epi.beta_hv, y_star, w.tau1, quad.n_panels),
        });
    }

    let (mut den, mut n1, mut n2, mut nb) = (0.0, 0.0, 0.0, 0.0);
    for (y, qw) in quadrature_nodes(0.0, y0, quad)? {
        if y >= y0 {
            // Zero inflow speed on the threshold itself.
            continue;
        }
        let weight = qw * g.density(y) * whp.boundary_speed(y);
        if weight == 0.0 {
            continue;
        }
        let w = permanence(whp, y)?;
        den += weight;
        n1 += weight * w.tau1;
        n2 += weight * w.tau2;
        nb += weight * path_infectivity(whp, beta, &epi.beta_hv, y, w.tau1, quad.n_panels);
    }
    if !(den > 0.0) {
        return Err(ReproductionError::InvalidDistribution(
            "entry distribution has no inflow weight".into(),
        ));
    }
    Ok(MeanTimes {
        t1: n1 / den,
        t2: n2 / den,
        t1_beta: nb / den,
    })
}

/// Reproduction number of the structured model.
pub fn r0_full_from_times(epi: &EpiParams, times: &MeanTimes) -> f64 {
    epi.b * epi.b * epi.beta_vh * epi.m * times.t1_beta / epi.vector_factor()
}

pub fn r0_full(
    whp: &WithinHostParams,
    g: &EntryDistribution,
    epi: &EpiParams,
    quad: &QuadratureSpec,
) -> Result<f64, ReproductionError> {
    Ok(r0_full_from_times(epi, &mean_times(whp, g, epi, quad)?))
}

/// Scalar part of the structured-model endemic equilibrium; `None` when
/// `R0 <= 1`. Densities on a grid come from [`crate::pde::endemic_fields`].
pub fn endemic_full_from_times(epi: &EpiParams, times: &MeanTimes) -> Option<EndemicState> {
    let r0 = r0_full_from_times(epi, times);
    endemic_closed_form(epi, r0, times.t1, times.t2, times.t1_beta)
}

pub fn endemic_full(
    whp: &WithinHostParams,
    g: &EntryDistribution,
    epi: &EpiParams,
    quad: &QuadratureSpec,
) -> Result<Option<EndemicState>, ReproductionError> {
    Ok(endemic_full_from_times(
        epi,
        &mean_times(whp, g, epi, quad)?,
    ))
}

/// Characteristic function of the UHR system linearised at the
/// disease-free equilibrium.
pub fn dfe_char_residual(epi: &EpiParams, tau1: f64, lambda: Complex64) -> Complex64 {
    let (th, tv, mu) = (epi.tau_h, epi.tau_v, epi.mu_v);
    let c3 = th * tv;
    let c2 = 2.0 * th * tv * mu + th + tv;
    let c1 = th * tv * mu * mu + th * mu + 2.0 * tv * mu + 1.0;
    let c0 = tv * mu * mu + mu;
    let gain = epi.b * epi.b * epi.beta_vh * epi.beta_hv.eval(0.0) * epi.m;
    let x = lambda * tau1;
    let delay = if x.norm() < 1e-6 {
        -tau1 * (1.0 - x / 2.0 + x * x / 6.0)
    } else {
        ((-x).exp() - 1.0) / lambda
    };
    ((c3 * lambda + c2) * lambda + c1) * lambda + c0 + gain * delay
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum DfeRealRoots {
    StableByRealRoots,
    PositiveRealRoot(f64),
}

/// Number of scan points for [`dfe_real_root_test`].
pub const REAL_ROOT_SCAN_POINTS: usize = 10_000;

/// Looks for a positive real root of [`dfe_char_residual`] on
/// `(0, 50/τ1]`; beyond that the cubic part dominates.
pub fn dfe_real_root_test(epi: &EpiParams, tau1: f64) -> Result<DfeRealRoots, ReproductionError> {
    epi.beta_hv
        .as_constant()
        .ok_or(ReproductionError::NonConstantBetaHv)?;
    if !(tau1 > 0.0) {
        return Err(ReproductionError::InvalidParameter {
            name: "tau1",
            value: tau1,
        });
    }
    let real = |l: f64| dfe_char_residual(epi, tau1, Complex64::new(l, 0.0)).re;
    let lambda_max = 50.0 / tau1;
    let h = lambda_max / REAL_ROOT_SCAN_POINTS as f64;
    let mut lo = 0.0;
    let mut r_lo = real(0.0);
    for k in 1..=REAL_ROOT_SCAN_POINTS {
        let hi = k as f64 * h;
        let r_hi = real(hi);
        if r_lo < 0.0 && r_hi > 0.0 || r_lo > 0.0 && r_hi < 0.0 {
            let root = find_root(real, &RootBracket::new(lo, hi).with_tol(1e-15))?;
            return Ok(DfeRealRoots::PositiveRealRoot(root));
        }
        if r_hi == 0.0 {
            return Ok(DfeRealRoots::PositiveRealRoot(hi));
        }
        lo = hi;
        r_lo = r_hi;
    }
    Ok(DfeRealRoots::StableByRealRoots)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::within_host::permanence_at_fraction;

    fn whp() -> WithinHostParams {
        WithinHostParams::reference()
    }

    #[test]
    fn r0_uhr_examples() {
        let epi = EpiParams::baseline();
        let r0 = r0_uhr(&epi, 6.4).unwrap();
        // (1/9 * 0.25 * 0.2 * 6) / (0.05 * 1.5) = 4/9 per day
        assert!((r0 - 6.4 * 4.0 / 9.0).abs() < 1e-12);
        assert!((r0 - 2.84).abs() < 0.01);
        assert_eq!(r0_uhr(&epi, 0.0).unwrap(), 0.0);
        let doubled = EpiParams { m: 12.0, ..epi };
        assert!((r0_uhr(&doubled, 6.4).unwrap() - 2.0 * r0).abs() < 1e-12);
        let logistic = EpiParams {
            beta_hv: BetaHv::Logistic {
                max: 0.3,
                z_half: 2.0,
                slope: 1.0,
            },
            ..epi
        };
        assert_eq!(
            r0_uhr(&logistic, 6.4),
            Err(ReproductionError::NonConstantBetaHv)
        );
    }

    #[test]
    fn endemic_uhr_at_threshold_is_none() {
        let epi = EpiParams::baseline().with_r0(1.0, 6.4).unwrap();
        assert!((r0_uhr(&epi, 6.4).unwrap() - 1.0).abs() < 1e-12);
        // exact R0 = 1 may round either way; push it to exactly one.
        let r0 = 1.0;
        assert!(endemic_closed_form(&epi, r0, 6.4, 70.0, 0.2 * 6.4).is_none());
        let below = EpiParams::baseline().with_r0(0.99, 6.4).unwrap();
        assert!(endemic_uhr(&below, 6.4, 70.0).unwrap().is_none());
    }

    #[test]
    fn endemic_uhr_is_stationary() {
        let epi = EpiParams::baseline();
        let eq = endemic_uhr(&epi, 6.4, 70.0).unwrap().unwrap();
        let (a, b, c) = uhr_stationary_residual(&epi, 6.4, 70.0, eq.e, eq.ev, eq.iv).unwrap();
        assert!(
            a.abs() < 1e-12 && b.abs() < 1e-12 && c.abs() < 1e-12,
            "{a} {b} {c}"
        );
        for v in [eq.e, eq.ev, eq.iv, eq.susceptible()] {
            assert!(v > 0.0 && v < 1.0);
        }
    }

    #[test]
    fn entry_distributions_normalise() {
        let y0 = whp().antibody_threshold();
        let gs = [
            EntryDistribution::gaussian(y0 / 2.0, 0.2, y0).unwrap(),
            EntryDistribution::gaussian(0.1, 0.5, y0).unwrap(),
            EntryDistribution::uniform(y0).unwrap(),
            EntryDistribution::tabulated(vec![(0.0, 1.0), (1.0, 3.0), (y0, 0.0)], y0).unwrap(),
        ];
        let quad = QuadratureSpec::gauss_legendre(400);
        for g in &gs {
            let total = crate::numerics::integrate(|y| g.density(y), 0.0, y0, &quad).unwrap();
            assert!((total - 1.0).abs() < 1e-8, "{g:?}: {total}");
            assert!((g.mass(0.0, y0) - 1.0).abs() < 1e-12);
            let mean = crate::numerics::integrate(|y| y * g.density(y), 0.0, y0, &quad).unwrap();
            assert!((mean - g.mean()).abs() < 1e-8, "{g:?}");
            assert!(g.mean() > 0.0 && g.mean() < y0);
        }
        let d = EntryDistribution::dirac(1.0, y0).unwrap();
        assert_eq!(d.mean(), 1.0);
        assert_eq!(d.mass(0.5, 1.5), 1.0);
        assert!(EntryDistribution::dirac(y0, y0).is_err());
    }

    #[test]
    fn uniform_mean_times_match_monte_carlo() {
        use rand::{Rng, SeedableRng};
        let p = whp();
        let y0 = p.antibody_threshold();
        let g = EntryDistribution::uniform(y0).unwrap();
        let mt = mean_times(&p, &g, &EpiParams::baseline(), &QuadratureSpec::default()).unwrap();
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(11);
        let (mut den, mut n1, mut n2) = (0.0, 0.0, 0.0);
        for _ in 0..100_000 {
            let y: f64 = rng.gen_range(0.0..y0);
            let w = p.boundary_speed(y);
            let win = permanence(&p, y).unwrap();
            den += w;
            n1 += w * win.tau1;
            n2 += w * win.tau2;
        }
        assert!(
            (mt.t1 - n1 / den).abs() < 0.005 * mt.t1,
            "{} vs {}",
            mt.t1,
            n1 / den
        );
        assert!(
            (mt.t2 - n2 / den).abs() < 0.005 * mt.t2,
            "{} vs {}",
            mt.t2,
            n2 / den
        );
    }

    #[test]
    fn constant_beta_scales_t1() {
        let p = whp();
        let g =
            EntryDistribution::gaussian(p.antibody_threshold() / 2.0, 0.2, p.antibody_threshold())
                .unwrap();
        let mt = mean_times(&p, &g, &EpiParams::baseline(), &QuadratureSpec::default()).unwrap();
        assert!((mt.t1_beta - 0.2 * mt.t1).abs() < 1e-12 * mt.t1);
    }

    #[test]
    fn logistic_profile_trapezoid_matches_gauss() {
        let p = whp();
        let epi = EpiParams {
            beta_hv: BetaHv::Logistic {
                max: 0.4,
                z_half: 2.0,
                slope: 2.0,
            },
            ..EpiParams::baseline()
        };
        let y0 = p.antibody_threshold();
        let g = EntryDistribution::dirac(0.5 * y0, y0).unwrap();
        let coarse = mean_times(&p, &g, &epi, &QuadratureSpec::trapezoid(200)).unwrap();
        let fine = mean_times(&p, &g, &epi, &QuadratureSpec::trapezoid(4000)).unwrap();
        assert!((coarse.t1_beta - fine.t1_beta).abs() < 1e-4);
        assert!(fine.t1_beta > 0.0 && fine.t1_beta < 0.4 * fine.t1);
    }

    #[test]
    fn dirac_full_matches_uhr() {
        let p = whp();
        let epi = EpiParams::baseline();
        let y0 = p.antibody_threshold();
        let g = EntryDistribution::dirac(0.3 * y0, y0).unwrap();
        let w = permanence_at_fraction(&p, 0.3).unwrap();
        let quad = QuadratureSpec::default();
        let full = r0_full(&p, &g, &epi, &quad).unwrap();
        assert!((full - r0_uhr(&epi, w.tau1).unwrap()).abs() < 1e-12);
        let a = endemic_full(&p, &g, &epi, &quad).unwrap().unwrap();
        let b = endemic_uhr(&epi, w.tau1, w.tau2).unwrap().unwrap();
        assert!((a.e - b.e).abs() < 1e-14 && (a.iv - b.iv).abs() < 1e-14);
    }

    #[test]
    fn r0_full_linear_in_m_and_beta() {
        let p = whp();
        let y0 = p.antibody_threshold();
        let g = EntryDistribution::uniform(y0).unwrap();
        let quad = QuadratureSpec::trapezoid(200);
        let epi = EpiParams::baseline();
        let base = r0_full(&p, &g, &epi, &quad).unwrap();
        let zero_m = EpiParams { m: 0.0, ..epi };
        assert_eq!(r0_full(&p, &g, &zero_m, &quad).unwrap(), 0.0);
        let scaled = EpiParams {
            beta_hv: epi.beta_hv.scaled(1.7),
            ..epi
        };
        assert!((r0_full(&p, &g, &scaled, &quad).unwrap() - 1.7 * base).abs() < 1e-12);
    }

    #[test]
    fn char_residual_at_zero() {
        let epi = EpiParams::baseline();
        let tau1 = 6.4;
        let r0 = r0_uhr(&epi, tau1).unwrap();
        let at0 = dfe_char_residual(&epi, tau1, Complex64::new(0.0, 0.0));
        let expected = epi.mu_v * (1.0 + epi.tau_v * epi.mu_v) * (1.0 - r0);
        assert!((at0.re - expected).abs() < 1e-15 && at0.im == 0.0);
        // series branch against expm1 just below the switch
        let l = 0.9e-6 / tau1;
        let series = dfe_char_residual(&epi, tau1, Complex64::new(l, 0.0)).re;
        let gain = epi.b * epi.b * epi.beta_vh * 0.2 * epi.m;
        let cubic =
            (epi.tau_h * l + 1.0) * (epi.tau_v * l + 1.0 + epi.tau_v * epi.mu_v) * (l + epi.mu_v);
        let direct = cubic + gain * (-l * tau1).exp_m1() / l;
        assert!((series - direct).abs() < 1e-13, "{series} {direct}");
        let at_r0_one = epi.with_r0(1.0, tau1).unwrap();
        assert!(dfe_char_residual(&at_r0_one, tau1, Complex64::new(0.0, 0.0)).norm() < 1e-15);
    }

    #[test]
    fn real_root_test_examples() {
        let tau1 = 6.4;
        let low = EpiParams::baseline().with_r0(0.5, tau1).unwrap();
        assert_eq!(
            dfe_real_root_test(&low, tau1).unwrap(),
            DfeRealRoots::StableByRealRoots
        );
        let high = EpiParams::baseline().with_r0(2.0, tau1).unwrap();
        match dfe_real_root_test(&high, tau1).unwrap() {
            DfeRealRoots::PositiveRealRoot(l) => {
                assert!(l > 0.0 && l <= 10.0);
                assert!(dfe_char_residual(&high, tau1, Complex64::new(l, 0.0)).norm() < 1e-8);
            }
            other => panic!("{other:?}"),
        }
    }
}
