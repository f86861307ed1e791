//! Uniform-host-response model: a distributed-delay system in `E`, `Ev`,
//! `Iv`, integrated with explicit Euler on a grid-aligned history buffer.

use std::collections::VecDeque;
use std::io::{self, Write};

use rayon::prelude::*;
use thiserror::Error;

use crate::reproduction::{r0_uhr, EpiParams, ReproductionError};
use crate::within_host::{
    permanence_at_fraction, InfectionWindow, WithinHostError, WithinHostParams,
};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum UhrError {
    #[error("state {name} = {value:e} at t = {t} (reduce dt)")]
    NegativeState {
        name: &'static str,
        value: f64,
        t: f64,
    },
    #[error("time step {dt} cannot resolve the infectious window tau1 = {tau1}")]
    BufferMisaligned { dt: f64, tau1: f64 },
    #[error("invalid scenario: {0}")]
    InvalidScenario(String),
    #[error(transparent)]
    Reproduction(#[from] ReproductionError),
    #[error(transparent)]
    WithinHost(#[from] WithinHostError),
}

/// Tolerance below zero before a state counts as negative.
pub const NEGATIVE_TOL: f64 = 1e-9;

/// Running window sums are recomputed from scratch this often.
const RESYNC_EVERY: usize = 1024;

/// Seed value of `E` on the whole history window for threshold scans.
pub const THRESHOLD_SEED_E: f64 = 1e-4;

/// `E` on the history window `[-τ1-τ2, 0]`.
#[derive(Debug, Clone, PartialEq)]
pub enum HistorySpec {
    Constant(f64),
    /// `recent` on `[-τ1, 0]`, `older` on `[-τ1-τ2, -τ1)`.
    Piecewise {
        recent: f64,
        older: f64,
    },
    /// Piecewise constant history whose window integrals give the initial
    /// infected and recovered proportions.
    Totals {
        i_total: f64,
        r_total: f64,
    },
    /// Linear interpolation through `(s, E)` nodes, `s <= 0`.
    Tabulated(Vec<(f64, f64)>),
}

impl HistorySpec {
    fn sampler(&self, tau1: f64, tau2: f64, tau_h: f64) -> impl Fn(f64) -> f64 + '_ {
        let (recent, older) = match *self {
            HistorySpec::Constant(c) => (c, c),
            HistorySpec::Piecewise { recent, older } => (recent, older),
            HistorySpec::Totals { i_total, r_total } => {
                (i_total * tau_h / tau1, r_total * tau_h / tau2)
            }
            HistorySpec::Tabulated(_) => (0.0, 0.0),
        };
        move |s: f64| match self {
            HistorySpec::Tabulated(nodes) => interp(nodes, s),
            _ => {
                if s >= -tau1 {
                    recent
                } else {
                    older
                }
            }
        }
    }
}

fn interp(nodes: &[(f64, f64)], s: f64) -> f64 {
    if nodes.is_empty() {
        return 0.0;
    }
    let i = nodes.partition_point(|n| n.0 <= s);
    if i == 0 {
        return nodes[0].1;
    }
    if i == nodes.len() {
        return nodes[nodes.len() - 1].1;
    }
    let (s0, v0) = nodes[i - 1];
    let (s1, v1) = nodes[i];
    v0 + (v1 - v0) * (s - s0) / (s1 - s0)
}

#[derive(Debug, Clone, PartialEq)]
pub struct UhrScenario {
    pub epi: EpiParams,
    pub tau1: f64,
    pub tau2: f64,
    pub history: HistorySpec,
    pub ev0: f64,
    pub iv0: f64,
    pub t_end: f64,
    pub dt: f64,
}

impl UhrScenario {
    /// Baseline epidemiology, `τ1 = 6.4`, `τ2 = 70`, `E ≡ 1e-4` history,
    /// 5000 days at `dt = 0.01`.
    pub fn reference() -> Self {
        Self {
            epi: EpiParams::baseline(),
            tau1: 6.4,
            tau2: 70.0,
            history: HistorySpec::Constant(THRESHOLD_SEED_E),
            ev0: 0.0,
            iv0: 0.0,
            t_end: 5000.0,
            dt: 0.01,
        }
    }

    fn validate(&self) -> Result<(), UhrError> {
        self.epi.validate()?;
        let bad = |msg: String| Err(UhrError::InvalidScenario(msg));
        if self.epi.beta_hv.as_constant().is_none() {
            return Err(ReproductionError::NonConstantBetaHv.into());
        }
        if !(self.tau1 > 0.0 && self.tau1.is_finite())
            || !(self.tau2 >= 0.0 && self.tau2.is_finite())
        {
            return bad(format!("tau1 = {}, tau2 = {}", self.tau1, self.tau2));
        }
        if !(self.dt > 0.0) || !(self.t_end >= 0.0 && self.t_end.is_finite()) {
            return bad(format!("dt = {}, t_end = {}", self.dt, self.t_end));
        }
        if !(self.ev0 >= 0.0 && self.iv0 >= 0.0 && self.ev0 + self.iv0 <= 1.0) {
            return bad(format!("Ev0 = {}, Iv0 = {}", self.ev0, self.iv0));
        }
        Ok(())
    }
}

/// Step layout of the two delay windows on the time grid.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepGrid {
    pub dt: f64,
    /// Steps spanning `τ1`.
    pub n1: usize,
    /// Whole steps spanning `τ2`.
    pub n2: usize,
    /// Fractional step left over from `τ2`, in `[0, 1)`.
    pub frac: f64,
}

impl StepGrid {
    /// Snaps `dt` so that it divides `τ1` exactly; whatever remains of `τ2`
    /// is covered by a fractional step with linear interpolation.
    pub fn new(dt: f64, tau1: f64, tau2: f64) -> Result<Self, UhrError> {
        let n1 = (tau1 / dt).round();
        if n1 < 1.0 {
            return Err(UhrError::BufferMisaligned { dt, tau1 });
        }
        let dt = tau1 / n1;
        let ratio = tau2 / dt;
        let mut n2 = ratio.round();
        let mut frac = 0.0;
        if (ratio - n2).abs() > 1e-9 * ratio.max(1.0) {
            n2 = ratio.floor();
            frac = ratio - n2;
        }
        Ok(Self {
            dt,
            n1: n1 as usize,
            n2: n2 as usize,
            frac,
        })
    }

    /// Samples held: times `t - k dt` for `k = 0 .. len`.
    pub fn buffer_len(&self) -> usize {
        self.n1 + self.n2 + if self.frac > 0.0 { 2 } else { 1 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct UhrRecord {
    pub t: f64,
    pub e: f64,
    pub ev: f64,
    pub iv: f64,
    pub s: f64,
    pub i_total: f64,
    pub r_total: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct UhrSeries {
    pub grid: StepGrid,
    pub records: Vec<UhrRecord>,
}

impl UhrSeries {
    pub fn last(&self) -> &UhrRecord {
        self.records
            .last()
            .expect("series always holds the initial record")
    }

    pub fn write_csv<W: Write>(&self, mut w: W) -> io::Result<()> {
        writeln!(w, "t,E,Ev,Iv,S,I_total,R_total")?;
        for r in &self.records {
            writeln!(
                w,
                "{:.16e},{:.16e},{:.16e},{:.16e},{:.16e},{:.16e},{:.16e}",
                r.t, r.e, r.ev, r.iv, r.s, r.i_total, r.r_total
            )?;
        }
        Ok(())
    }
}

/// Record stride `max(1, round(0.1/dt))`.
pub fn record_stride(dt: f64) -> usize {
    ((0.1 / dt).round() as usize).max(1)
}

/// History buffer with running sums over both windows. Index 0 is the
/// newest sample.
struct History {
    buf: VecDeque<f64>,
    grid: StepGrid,
    sum_recent: f64,
    sum_all: f64,
    pushes: usize,
}

impl History {
    fn new(values: VecDeque<f64>, grid: StepGrid) -> Self {
        let mut h = Self {
            buf: values,
            grid,
            sum_recent: 0.0,
            sum_all: 0.0,
            pushes: 0,
        };
        h.resync();
        h
    }

    fn resync(&mut self) {
        let n1 = self.grid.n1;
        let n12 = self.grid.n1 + self.grid.n2;
        self.sum_recent = self.buf.iter().take(n1 + 1).sum();
        self.sum_all = self.buf.iter().take(n12 + 1).sum();
    }

    /// `∫_{t-τ1}^{t} E ds` by the trapezoid rule.
    fn recent_integral(&self) -> f64 {
        let n1 = self.grid.n1;
        self.grid.dt * (self.sum_recent - 0.5 * (self.buf[0] + self.buf[n1]))
    }

    /// `∫_{t-τ1-τ2}^{t} E ds`, trapezoid plus an interpolated fractional tail.
    fn full_integral(&self) -> f64 {
        let n12 = self.grid.n1 + self.grid.n2;
        let dt = self.grid.dt;
        let mut total = dt * (self.sum_all - 0.5 * (self.buf[0] + self.buf[n12]));
        let r = self.grid.frac;
        if r > 0.0 {
            let a = self.buf[n12];
            let end = (1.0 - r) * a + r * self.buf[n12 + 1];
            total += 0.5 * r * dt * (a + end);
        }
        total
    }

    fn push(&mut self, e: f64) {
        let n1 = self.grid.n1;
        let n12 = self.grid.n1 + self.grid.n2;
        self.sum_recent += e - self.buf[n1];
        self.sum_all += e - self.buf[n12];
        self.buf.pop_back();
        self.buf.push_front(e);
        self.pushes += 1;
        if self.pushes % RESYNC_EVERY == 0 {
            self.resync();
        }
    }
}

fn check_nonneg(name: &'static str, value: f64, t: f64) -> Result<(), UhrError> {
    if value < -NEGATIVE_TOL || !value.is_finite() {
        return Err(UhrError::NegativeState { name, value, t });
    }
    Ok(())
}

pub fn simulate(scenario: &UhrScenario) -> Result<UhrSeries, UhrError> {
    scenario.validate()?;
    let epi = &scenario.epi;
    let beta_hv = epi
        .beta_hv
        .as_constant()
        .ok_or(ReproductionError::NonConstantBetaHv)?;
    let grid = StepGrid::new(scenario.dt, scenario.tau1, scenario.tau2)?;
    let dt = grid.dt;

    let sample = scenario
        .history
        .sampler(scenario.tau1, scenario.tau2, epi.tau_h);
    let mut values = VecDeque::with_capacity(grid.buffer_len());
    for k in 0..grid.buffer_len() {
        let v = sample(-(k as f64) * dt);
        if !(v >= 0.0) || !v.is_finite() {
            return Err(UhrError::InvalidScenario(format!(
                "history value {v} at s = {}",
                -(k as f64) * dt
            )));
        }
        values.push_back(v);
    }
    let mut hist = History::new(values, grid);
    let initial_mass = hist.full_integral() / epi.tau_h;
    if initial_mass > 1.0 {
        return Err(UhrError::InvalidScenario(format!(
            "history holds {initial_mass} hosts, more than 1"
        )));
    }

    let (ev_rate, iv_rate) = (1.0 / epi.tau_v + epi.mu_v, epi.mu_v);
    let force_h = epi.b * epi.beta_vh * epi.m;
    let force_v = epi.b * beta_hv / epi.tau_h;
    let n_steps = (scenario.t_end / dt).round() as usize;
    let stride = record_stride(dt);
    let mut records = Vec::with_capacity(n_steps / stride + 2);
    let (mut ev, mut iv) = (scenario.ev0, scenario.iv0);

    for n in 0..=n_steps {
        let t = n as f64 * dt;
        let e = hist.buf[0];
        let recent = hist.recent_integral();
        let all = hist.full_integral();
        let i_total = recent / epi.tau_h;
        let r_total = (all - recent) / epi.tau_h;
        let s = 1.0 - e - all / epi.tau_h;
        if n == 0 && s < -NEGATIVE_TOL {
            return Err(UhrError::InvalidScenario(format!(
                "initial susceptibles {s} < 0"
            )));
        }
        if n % stride == 0 || n == n_steps {
            records.push(UhrRecord {
                t,
                e,
                ev,
                iv,
                s,
                i_total,
                r_total,
            });
        }
        if n == n_steps {
            break;
        }
        let e_next = e + dt * (force_h * iv * s - e / epi.tau_h);
        let ev_next = ev + dt * (force_v * recent * (1.0 - ev - iv) - ev_rate * ev);
        let iv_next = iv + dt * (ev / epi.tau_v - iv_rate * iv);
        let t_next = t + dt;
        check_nonneg("E", e_next, t_next)?;
        check_nonneg("Ev", ev_next, t_next)?;
        check_nonneg("Iv", iv_next, t_next)?;
        if ev_next + iv_next > 1.0 + NEGATIVE_TOL {
            return Err(UhrError::NegativeState {
                name: "Sv",
                value: 1.0 - ev_next - iv_next,
                t: t_next,
            });
        }
        hist.push(e_next);
        ev = ev_next;
        iv = iv_next;
    }
    Ok(UhrSeries { grid, records })
}

/// Run settings shared by every point of a sweep.
#[derive(Debug, Clone, PartialEq)]
pub struct RunSettings {
    pub history: HistorySpec,
    pub ev0: f64,
    pub iv0: f64,
    pub t_end: f64,
    pub dt: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct YstarRecord {
    pub alpha: f64,
    pub window: InfectionWindow,
    pub r0: f64,
    pub series: UhrSeries,
}

/// One UHR run per entry fraction `α`, with `τ1`, `τ2` from the
/// within-host model at `y★ = α y0`.
pub fn sweep_ystar(
    whp: &WithinHostParams,
    epi: &EpiParams,
    alphas: &[f64],
    run: &RunSettings,
) -> Result<Vec<YstarRecord>, UhrError> {
    if alphas.is_empty() {
        return Err(UhrError::InvalidScenario(
            "empty entry-fraction list".into(),
        ));
    }
    alphas
        .par_iter()
        .map(|&alpha| {
            if !(alpha > 0.0 && alpha < 1.0) {
                return Err(UhrError::InvalidScenario(format!(
                    "entry fraction {alpha} outside (0, 1)"
                )));
            }
            let window = permanence_at_fraction(whp, alpha)?;
            let r0 = r0_uhr(epi, window.tau1)?;
            let scenario = UhrScenario {
                epi: *epi,
                tau1: window.tau1,
                tau2: window.tau2,
                history: run.history.clone(),
                ev0: run.ev0,
                iv0: run.iv0,
                t_end: run.t_end,
                dt: run.dt,
            };
            let series = simulate(&scenario)?;
            Ok(YstarRecord {
                alpha,
                window,
                r0,
                series,
            })
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ThresholdRecord {
    pub r0: f64,
    pub m: f64,
    pub i_final: f64,
}

/// `n` runs with `R0` spaced uniformly over `r0_range` by varying `m`,
/// each seeded with `E ≡ 1e-4` and no infected vectors.
pub fn threshold_scan(
    template: &UhrScenario,
    n: usize,
    r0_range: (f64, f64),
) -> Result<Vec<ThresholdRecord>, UhrError> {
    let (lo, hi) = r0_range;
    if n < 2 || !(lo >= 0.0 && hi > lo) {
        return Err(UhrError::InvalidScenario(format!(
            "threshold scan needs n >= 2 and 0 <= lo < hi, got n = {n}, range = ({lo}, {hi})"
        )));
    }
    (0..n)
        .into_par_iter()
        .map(|k| {
            let r0 = lo + (hi - lo) * k as f64 / (n - 1) as f64;
            let epi = template.epi.with_r0(r0, template.tau1)?;
            let scenario = UhrScenario {
                epi,
                history: HistorySpec::Constant(THRESHOLD_SEED_E),
                ev0: 0.0,
                iv0: 0.0,
                ..template.clone()
            };
            let series = simulate(&scenario)?;
            Ok(ThresholdRecord {
                r0,
                m: epi.m,
                i_final: series.last().i_total,
            })
        })
        .collect()
}

pub fn write_threshold_csv<W: Write>(records: &[ThresholdRecord], mut w: W) -> io::Result<()> {
    writeln!(w, "R0,I_final")?;
    for r in records {
        writeln!(w, "{:.16e},{:.16e}", r.r0, r.i_final)?;
    }
    Ok(())
}
