//! Structured model on a `(z, y)` grid: donor-cell upwind transport of the
//! infected density `I`, 1D transport of the recovered density `R`, and the
//! scalar `E`, `Ev`, `Iv` equations coupled through grid integrals.

use std::f64::consts::PI;
use std::io::{self, Write};

use thiserror::Error;

use crate::numerics::{find_root, quadrature_nodes, NumericsError, QuadratureSpec, RootBracket};
use crate::reproduction::{
    endemic_full, EndemicState, EntryDistribution, EpiParams, ReproductionError,
};
use crate::within_host::{flow, permanence, WithinHostError, WithinHostParams};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PdeError {
    #[error("invalid grid: {0}")]
    InvalidGrid(String),
    #[error("time step {dt} exceeds the stability limit {limit}")]
    CflViolation { dt: f64, limit: f64 },
    #[error("non-finite field value at t = {t}")]
    NonFiniteField { t: f64 },
    #[error("invalid initial state: {0}")]
    InvalidInit(String),
    #[error(transparent)]
    WithinHost(#[from] WithinHostError),
    #[error(transparent)]
    Reproduction(#[from] ReproductionError),
    #[error(transparent)]
    Numerics(#[from] NumericsError),
}

pub const DEFAULT_NZ: usize = 200;
pub const DEFAULT_NY: usize = 340;
pub const DEFAULT_MARGIN: f64 = 0.75;
pub const DEFAULT_CFL: f64 = 0.9;
/// Cell values of `I` below this are set to zero, keeping the tails of
/// the smeared front out of subnormal arithmetic.
pub const FLUSH_BELOW: f64 = 1e-200;
/// Constant exposed level on the history window of the reference run,
/// see [`history_state`].
pub const DEFAULT_HISTORY_E: f64 = 1e-3;

/// Uniform cell grid on `[z0, z_max] × [0, y_max]`. The antibody threshold
/// `y0` lies on the cell face with index `j0`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Grid2D {
    pub z_min: f64,
    pub z_max: f64,
    pub y_max: f64,
    pub nz: usize,
    pub ny: usize,
    pub dz: f64,
    pub dy: f64,
    pub j0: usize,
}

impl Grid2D {
    pub fn z_face(&self, i: usize) -> f64 {
        self.z_min + i as f64 * self.dz
    }

    pub fn z_center(&self, i: usize) -> f64 {
        self.z_min + (i as f64 + 0.5) * self.dz
    }

    pub fn y_face(&self, j: usize) -> f64 {
        j as f64 * self.dy
    }

    pub fn y_center(&self, j: usize) -> f64 {
        (j as f64 + 0.5) * self.dy
    }

    pub fn y0(&self) -> f64 {
        self.y_face(self.j0)
    }

    pub fn cell_area(&self) -> f64 {
        self.dz * self.dy
    }

    pub fn n_cells(&self) -> usize {
        self.nz * self.ny
    }

    /// Cells of the recovered grid, co-located with `y` cells `j0..ny`.
    pub fn n_r(&self) -> usize {
        self.ny - self.j0
    }

    pub fn index(&self, i: usize, j: usize) -> usize {
        i * self.ny + j
    }
}

/// Largest `z` and `y` reached by the characteristic from `(z0, 0)` before
/// it returns to `z = z0`.
pub fn bounding_extent(whp: &WithinHostParams) -> Result<(f64, f64), PdeError> {
    let beta = whp.oscillation_frequency()?;
    let tau1 = permanence(whp, 0.0)?.tau1;
    let at = |tau: f64| flow(whp, beta, whp.z0, 0.0, tau);
    let speed = |tau: f64| {
        let (z, y) = at(tau);
        whp.velocity(z, y)
    };
    let mut z_max = whp.z0.max(at(tau1).0);
    let mut y_max = at(tau1).1.max(0.0);
    let n = 400;
    let h = tau1 / n as f64;
    for comp in 0..2 {
        let v = |tau: f64| {
            if comp == 0 {
                speed(tau).0
            } else {
                speed(tau).1
            }
        };
        let mut lo = 0.0;
        let mut v_lo = v(lo);
        for k in 1..=n {
            let hi = if k == n { tau1 } else { k as f64 * h };
            let v_hi = v(hi);
            if v_lo > 0.0 && v_hi <= 0.0 {
                let tau = find_root(v, &RootBracket::new(lo, hi).with_tol(1e-14))?;
                let (z, y) = at(tau);
                if comp == 0 {
                    z_max = z_max.max(z);
                } else {
                    y_max = y_max.max(y);
                }
            }
            lo = hi;
            v_lo = v_hi;
        }
    }
    Ok((z_max, y_max))
}

/// Grid circumscribing the bounding characteristic, with both extents
/// scaled by `1 + margin`. `dy` is snapped so `y0` falls on a cell face.
pub fn build_grid(
    whp: &WithinHostParams,
    margin: f64,
    nz: usize,
    ny: usize,
) -> Result<Grid2D, PdeError> {
    whp.validate()?;
    if nz < 8 || ny < 8 {
        return Err(PdeError::InvalidGrid(format!(
            "need at least 8 x 8 cells, got {nz} x {ny}"
        )));
    }
    if !(margin >= 0.0 && margin.is_finite()) {
        return Err(PdeError::InvalidGrid(format!("margin {margin}")));
    }
    let (zc, yc) = bounding_extent(whp)?;
    let z_max = zc * (1.0 + margin);
    let y_raw = yc * (1.0 + margin);
    let y0 = whp.antibody_threshold();
    let j0 = ((ny as f64 * y0 / y_raw).floor() as usize).max(1);
    if j0 >= ny {
        return Err(PdeError::InvalidGrid(
            "threshold y0 above the domain".into(),
        ));
    }
    let dy = y0 / j0 as f64;
    Ok(Grid2D {
        z_min: whp.z0,
        z_max,
        y_max: ny as f64 * dy,
        nz,
        ny,
        dz: (z_max - whp.z0) / nz as f64,
        dy,
        j0,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct PdeState {
    pub t: f64,
    /// Cell averages of `I`, index `i * ny + j`.
    pub i: Vec<f64>,
    /// Cell averages of `R` on `y` cells `j0..ny`.
    pub r: Vec<f64>,
    pub e: f64,
    pub ev: f64,
    pub iv: f64,
    /// Susceptibles advanced by their own balance (infection out, recovery
    /// in); used only for the conservation ledger.
    pub s_tracked: f64,
}

impl PdeState {
    /// Empty fields with scalar seeds.
    pub fn seeded(grid: &Grid2D, e: f64, ev: f64, iv: f64) -> Self {
        Self {
            t: 0.0,
            i: vec![0.0; grid.n_cells()],
            r: vec![0.0; grid.n_r()],
            e,
            ev,
            iv,
            s_tracked: 1.0 - e,
        }
    }

    /// Resets `s_tracked` to `1 - E - ∬I - ∫R`.
    pub fn close_susceptibles(&mut self, grid: &Grid2D) {
        let (i_mass, r_mass) = (i_mass(&self.i, grid), r_mass(&self.r, grid));
        self.s_tracked = 1.0 - self.e - i_mass - r_mass;
    }
}

pub fn i_mass(i: &[f64], grid: &Grid2D) -> f64 {
    i.iter().sum::<f64>() * grid.cell_area()
}

pub fn r_mass(r: &[f64], grid: &Grid2D) -> f64 {
    r.iter().sum::<f64>() * grid.dy
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MassRecord {
    pub t: f64,
    pub s_derived: f64,
    pub e: f64,
    pub i_mass: f64,
    pub r_mass: f64,
    pub total: f64,
    pub drift: f64,
}

/// Midpoint-rule masses; `total` uses the tracked susceptibles so that
/// boundary leakage shows up as `drift = total - initial_total`.
pub fn mass_report(state: &PdeState, grid: &Grid2D, initial_total: f64) -> MassRecord {
    let im = i_mass(&state.i, grid);
    let rm = r_mass(&state.r, grid);
    let total = state.s_tracked + state.e + im + rm;
    MassRecord {
        t: state.t,
        s_derived: 1.0 - state.e - im - rm,
        e: state.e,
        i_mass: im,
        r_mass: rm,
        total,
        drift: total - initial_total,
    }
}

/// Boundary masses moved during one step.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct StepFluxes {
    /// Through the inflow part of `z = z0`.
    pub inflow: f64,
    /// Out of `I` through the outflow part of `z = z0`.
    pub z0_outflow: f64,
    /// Out of `I` through `z = z_max` and `y = y_max`.
    pub outer_outflow: f64,
    /// Added to `R` from the `z0` outflow.
    pub r_source: f64,
    /// Out of `R` through `y = y0`, back to the susceptibles.
    pub recovery_outflow: f64,
    /// `∬I` before and after the step.
    pub i_mass_before: f64,
    pub i_mass_after: f64,
}

impl StepFluxes {
    /// `Δ∬I - (inflow - z0 outflow - outer outflow)`.
    pub fn balance_residual(&self) -> f64 {
        (self.i_mass_after - self.i_mass_before)
            - (self.inflow - self.z0_outflow - self.outer_outflow)
    }
}

/// `max(v, 0)`.
#[inline(always)]
fn pos(v: f64) -> f64 {
    if v > 0.0 {
        v
    } else {
        0.0
    }
}

/// Sum with four interleaved accumulators, in a fixed order.
fn lane_sum(x: &[f64]) -> f64 {
    let mut acc = [0.0; 4];
    let chunks = x.chunks_exact(4);
    let tail: f64 = chunks.remainder().iter().sum();
    for c in chunks {
        for k in 0..4 {
            acc[k] += c[k];
        }
    }
    (acc[0] + acc[1]) + (acc[2] + acc[3]) + tail
}

/// Stepper for one parameter set on one grid.
#[derive(Debug, Clone)]
pub struct PdeSolver {
    grid: Grid2D,
    whp: WithinHostParams,
    epi: EpiParams,
    /// `V_z g_j / (V★ τ_h)` on the inflow faces `j < j0`.
    inflow_profile: Vec<f64>,
    /// `β_hv` at cell-centre `z`.
    beta_hv: Vec<f64>,
    y_centers: Vec<f64>,
    y_faces: Vec<f64>,
    dt_limit: f64,
    dt: f64,
    /// z-face fluxes of the face below and above the current row.
    flux_lo: Vec<f64>,
    flux_hi: Vec<f64>,
    /// Fluxes through the `z = z0` faces, kept for the `R` source.
    flux_z0: Vec<f64>,
    /// y-face fluxes of the current row.
    flux_y: Vec<f64>,
    scratch: Vec<f64>,
    scratch_r: Vec<f64>,
}

impl PdeSolver {
    /// Solver with `dt = cfl × stability limit`.
    pub fn new(
        whp: &WithinHostParams,
        epi: &EpiParams,
        g: &EntryDistribution,
        grid: Grid2D,
        cfl: f64,
    ) -> Result<Self, PdeError> {
        if !(cfl > 0.0 && cfl <= 1.0) {
            return Err(PdeError::InvalidGrid(format!("cfl {cfl} outside (0, 1]")));
        }
        let mut s = Self::build(whp, epi, g, grid)?;
        s.dt = cfl * s.dt_limit;
        Ok(s)
    }

    pub fn with_dt(
        whp: &WithinHostParams,
        epi: &EpiParams,
        g: &EntryDistribution,
        grid: Grid2D,
        dt: f64,
    ) -> Result<Self, PdeError> {
        let mut s = Self::build(whp, epi, g, grid)?;
        if !(dt > 0.0 && dt <= s.dt_limit) {
            return Err(PdeError::CflViolation {
                dt,
                limit: s.dt_limit,
            });
        }
        s.dt = dt;
        Ok(s)
    }

    fn build(
        whp: &WithinHostParams,
        epi: &EpiParams,
        g: &EntryDistribution,
        grid: Grid2D,
    ) -> Result<Self, PdeError> {
        whp.validate()?;
        epi.validate()?;
        if (grid.z_min - whp.z0).abs() > 1e-12 * whp.z0 {
            return Err(PdeError::InvalidGrid(format!(
                "grid starts at z = {}, not z0",
                grid.z_min
            )));
        }
        if (grid.y0() - whp.antibody_threshold()).abs() > 1e-9 * grid.y0() {
            return Err(PdeError::InvalidGrid("y0 is not on a cell face".into()));
        }
        let j0 = grid.j0;
        let mut gj: Vec<f64> = (0..j0)
            .map(|j| g.mass(grid.y_face(j), grid.y_face(j + 1)) / grid.dy)
            .collect();
        let total: f64 = gj.iter().sum::<f64>() * grid.dy;
        if !(total > 0.0) {
            return Err(PdeError::InvalidInit(
                "entry distribution has no mass on the grid".into(),
            ));
        }
        gj.iter_mut().for_each(|v| *v /= total);
        let y_star: f64 = gj
            .iter()
            .enumerate()
            .map(|(j, v)| grid.y_center(j) * v)
            .sum::<f64>()
            * grid.dy;
        let v_star = whp.boundary_speed(y_star);
        let inflow_profile = gj
            .iter()
            .enumerate()
            .map(|(j, v)| whp.boundary_speed(grid.y_center(j)) * v / (v_star * epi.tau_h))
            .collect();
        let beta_hv = (0..grid.nz)
            .map(|i| epi.beta_hv.eval(grid.z_center(i)))
            .collect();

        let mut max_rate: f64 = 0.0;
        for i in 0..grid.nz {
            let (zl, zr, zc) = (grid.z_face(i), grid.z_face(i + 1), grid.z_center(i));
            for j in 0..grid.ny {
                let yc = grid.y_center(j);
                let out_z =
                    (whp.a1 * zr - whp.a2 * yc).max(0.0) + (whp.a2 * yc - whp.a1 * zl).max(0.0);
                let out_y = (whp.a4 * zc - whp.a3 * grid.y_face(j + 1)).max(0.0)
                    + (whp.a3 * grid.y_face(j) - whp.a4 * zc).max(0.0);
                max_rate = max_rate.max(out_z / grid.dz + out_y / grid.dy);
            }
        }
        for k in 0..grid.n_r() {
            max_rate = max_rate.max(whp.a5 * grid.y_face(grid.j0 + k) / grid.dy);
        }
        let dt_limit = 1.0 / max_rate;
        let ny = grid.ny;
        Ok(Self {
            grid,
            whp: *whp,
            epi: *epi,
            inflow_profile,
            beta_hv,
            y_centers: (0..ny).map(|j| grid.y_center(j)).collect(),
            y_faces: (0..=ny).map(|j| grid.y_face(j)).collect(),
            dt_limit,
            dt: dt_limit,
            flux_lo: vec![0.0; ny],
            flux_hi: vec![0.0; ny],
            flux_z0: vec![0.0; ny],
            flux_y: vec![0.0; ny + 1],
            scratch: vec![0.0; grid.n_cells()],
            scratch_r: vec![0.0; grid.n_r()],
        })
    }

    pub fn grid(&self) -> &Grid2D {
        &self.grid
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    pub fn dt_limit(&self) -> f64 {
        self.dt_limit
    }

    /// `Σ_j V_z g_j Δy / V★ τ_h`, which is `1/τ_h` on an exact grid.
    pub fn inflow_rate(&self) -> f64 {
        self.inflow_profile.iter().sum::<f64>() * self.grid.dy
    }

    /// `(∬I, ∬β_hv I, ∫R)` by the midpoint rule.
    pub fn integrals(&self, state: &PdeState) -> (f64, f64, f64) {
        let ny = self.grid.ny;
        let mut im = 0.0;
        let mut ib = 0.0;
        for (row, &b) in state.i.chunks_exact(ny).zip(&self.beta_hv) {
            let s: f64 = row.iter().sum();
            im += s;
            ib += b * s;
        }
        let area = self.grid.cell_area();
        (im * area, ib * area, r_mass(&state.r, &self.grid))
    }

    /// Advances `I` and `R` by `h` with inflow level `e_inflow`; scalars are
    /// untouched.
    pub fn transport(&mut self, state: &mut PdeState, e_inflow: f64, h: f64) -> StepFluxes {
        let g = self.grid;
        let p = self.whp;
        let (nz, ny, j0) = (g.nz, g.ny, g.j0);
        let (cz, cy) = (h / g.dz, h / g.dy);
        let old = &state.i;

        // Donor-cell fluxes, positive towards increasing z or y. One sweep
        // over rows; each face flux is evaluated once.
        let (yc, yf) = (&self.y_centers, &self.y_faces);
        let mut f_lo = std::mem::take(&mut self.flux_lo);
        let mut f_hi = std::mem::take(&mut self.flux_hi);
        let z_lo = g.z_face(0);
        for j in 0..ny {
            f_lo[j] = if j < j0 {
                self.inflow_profile[j] * e_inflow
            } else {
                (p.a1 * z_lo - p.a2 * yc[j]).min(0.0) * old[j]
            };
        }
        self.flux_z0.copy_from_slice(&f_lo);
        let inflow: f64 = f_lo[..j0].iter().sum();
        let z0_out: f64 = -f_lo[j0..].iter().sum::<f64>();

        let new = &mut self.scratch;
        let mut outer_z = 0.0;
        let mut outer_y = 0.0;
        for i in 0..nz {
            let row = &old[i * ny..(i + 1) * ny];
            let zf = g.z_face(i + 1);
            if i + 1 < nz {
                let next = &old[(i + 1) * ny..(i + 2) * ny];
                for (((f, &y), &a), &b) in f_hi.iter_mut().zip(yc).zip(row).zip(next) {
                    let v = p.a1 * zf - p.a2 * y;
                    let vp = pos(v);
                    *f = vp * a + (v - vp) * b;
                }
            } else {
                for ((f, &y), &a) in f_hi.iter_mut().zip(yc).zip(row) {
                    *f = pos(p.a1 * zf - p.a2 * y) * a;
                }
                outer_z = f_hi.iter().sum();
            }
            let zc = g.z_center(i);
            let fy = &mut self.flux_y;
            fy[0] = 0.0;
            for (((f, &y), &a), &b) in fy[1..ny].iter_mut().zip(&yf[1..ny]).zip(row).zip(&row[1..])
            {
                let v = p.a4 * zc - p.a3 * y;
                let vp = pos(v);
                *f = vp * a + (v - vp) * b;
            }
            fy[ny] = pos(p.a4 * zc - p.a3 * yf[ny]) * row[ny - 1];
            let out = &mut new[i * ny..(i + 1) * ny];
            for (((((o, &c), &a), &b), &fl), &fh) in out
                .iter_mut()
                .zip(row)
                .zip(f_lo.iter())
                .zip(f_hi.iter())
                .zip(&fy[..ny])
                .zip(&fy[1..])
            {
                let u = c + cz * (a - b) + cy * (fl - fh);
                *o = if u.abs() < FLUSH_BELOW { 0.0 } else { u };
            }
            let fy_lo = fy[ny];
            outer_y += fy_lo;
            std::mem::swap(&mut f_lo, &mut f_hi);
        }
        self.flux_lo = f_lo;
        self.flux_hi = f_hi;
        let mass_before = lane_sum(old);
        let mass_after = lane_sum(new);
        let outer = outer_z * g.dy + outer_y * g.dz;
        std::mem::swap(&mut state.i, &mut self.scratch);

        // R: velocity -a5 y, outflow at y0, nothing enters at y_max.
        let nr = g.n_r();
        let r_old = &state.r;
        let r_new = &mut self.scratch_r;
        let mut r_source = 0.0;
        for k in 0..nr {
            let j = j0 + k;
            let lower = p.a5 * g.y_face(j);
            let upper = p.a5 * g.y_face(j + 1);
            let from_above = if k + 1 < nr {
                upper * r_old[k + 1]
            } else {
                0.0
            };
            let src = -self.flux_z0[j];
            r_source += src;
            r_new[k] = r_old[k] + cy * (from_above - lower * r_old[k]) + h * src;
        }
        let recovery = if nr > 0 {
            h * p.a5 * g.y0() * r_old[0]
        } else {
            0.0
        };
        std::mem::swap(&mut state.r, &mut self.scratch_r);

        let area = g.cell_area();
        StepFluxes {
            inflow: h * inflow * g.dy,
            z0_outflow: h * z0_out * g.dy,
            outer_outflow: h * outer,
            r_source: h * r_source * g.dy,
            recovery_outflow: recovery,
            i_mass_before: mass_before * area,
            i_mass_after: mass_after * area,
        }
    }

    /// One explicit step of the coupled system with the solver's `dt`.
    pub fn step(&mut self, state: &mut PdeState) -> Result<StepFluxes, PdeError> {
        let h = self.dt;
        self.step_by(state, h)
    }

    /// One step of length `h <= dt`.
    pub fn step_by(&mut self, state: &mut PdeState, h: f64) -> Result<StepFluxes, PdeError> {
        if !(h > 0.0 && h <= self.dt_limit) {
            return Err(PdeError::CflViolation {
                dt: h,
                limit: self.dt_limit,
            });
        }
        let epi = self.epi;
        let (im, ib, rm) = self.integrals(state);
        let s = 1.0 - state.e - im - rm;
        let infection = epi.b * epi.beta_vh * epi.m * state.iv * s;
        let (e, ev, iv) = (state.e, state.ev, state.iv);
        let fluxes = self.transport(state, e, h);
        state.e = e + h * (infection - e / epi.tau_h);
        state.ev = ev + h * (epi.b * ib * (1.0 - ev - iv) - (1.0 / epi.tau_v + epi.mu_v) * ev);
        state.iv = iv + h * (ev / epi.tau_v - epi.mu_v * iv);
        state.s_tracked += -h * infection + fluxes.recovery_outflow;
        state.t += h;
        if !(state.e.is_finite()
            && state.ev.is_finite()
            && state.iv.is_finite()
            && fluxes.i_mass_after.is_finite())
        {
            return Err(PdeError::NonFiniteField { t: state.t });
        }
        Ok(fluxes)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FullRecord {
    pub t: f64,
    pub e: f64,
    pub ev: f64,
    pub iv: f64,
    pub i_mass: f64,
    pub r_mass: f64,
    pub s_derived: f64,
    pub total: f64,
    pub drift: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FieldSnapshot {
    pub t: f64,
    pub grid: Grid2D,
    pub i: Vec<f64>,
    pub r: Vec<f64>,
}

impl FieldSnapshot {
    /// `I` as an `nz × ny` matrix after a 4-line header.
    pub fn write_i<W: Write>(&self, mut w: W) -> io::Result<()> {
        let g = &self.grid;
        writeln!(w, "# t {:.16e}", self.t)?;
        writeln!(w, "# nz {} ny {}", g.nz, g.ny)?;
        writeln!(w, "# z {:.16e} {:.16e}", g.z_min, g.z_max)?;
        writeln!(w, "# y {:.16e} {:.16e}", 0.0, g.y_max)?;
        for row in self.i.chunks_exact(g.ny) {
            write_row(&mut w, row)?;
        }
        Ok(())
    }

    /// `R` as a single row over `y` cells `j0..ny`, same header layout.
    pub fn write_r<W: Write>(&self, mut w: W) -> io::Result<()> {
        let g = &self.grid;
        writeln!(w, "# t {:.16e}", self.t)?;
        writeln!(w, "# nz 1 ny {}", g.n_r())?;
        writeln!(w, "# z {:.16e} {:.16e}", g.z_min, g.z_min)?;
        writeln!(w, "# y {:.16e} {:.16e}", g.y0(), g.y_max)?;
        write_row(&mut w, &self.r)
    }
}

fn write_row<W: Write>(w: &mut W, row: &[f64]) -> io::Result<()> {
    let mut first = true;
    for v in row {
        if !first {
            w.write_all(b" ")?;
        }
        write!(w, "{v:.16e}")?;
        first = false;
    }
    w.write_all(b"\n")
}

#[derive(Debug, Clone, PartialEq)]
pub struct FullRun {
    pub dt: f64,
    pub steps: usize,
    pub records: Vec<FullRecord>,
    pub snapshots: Vec<FieldSnapshot>,
    pub final_state: PdeState,
    /// Largest per-step `|Δ∬I - boundary fluxes|`.
    pub max_balance_residual: f64,
    /// Largest per-step `|R source - z0 outflow|`.
    pub max_coupling_residual: f64,
    /// Smallest cell value of `I` or `R` seen after any step.
    pub min_field_value: f64,
}

impl FullRun {
    pub fn write_csv<W: Write>(&self, mut w: W) -> io::Result<()> {
        writeln!(w, "t,E,Ev,Iv,I_mass,R_mass,S_derived,total,drift")?;
        for r in &self.records {
            writeln!(
                w,
                "{:.16e},{:.16e},{:.16e},{:.16e},{:.16e},{:.16e},{:.16e},{:.16e},{:.16e}",
                r.t, r.e, r.ev, r.iv, r.i_mass, r.r_mass, r.s_derived, r.total, r.drift
            )?;
        }
        Ok(())
    }
}

/// Output cadence for [`simulate_full`].
#[derive(Debug, Clone, PartialEq)]
pub struct RunOutput {
    /// Days between series records.
    pub record_every: f64,
    /// Times at which fields are captured (first step at or after each).
    pub snapshot_times: Vec<f64>,
}

impl Default for RunOutput {
    fn default() -> Self {
        Self {
            record_every: 1.0,
            snapshot_times: Vec::new(),
        }
    }
}

pub fn simulate_full(
    solver: &mut PdeSolver,
    init: PdeState,
    t_end: f64,
    output: &RunOutput,
) -> Result<FullRun, PdeError> {
    let grid = *solver.grid();
    if init.i.len() != grid.n_cells() || init.r.len() != grid.n_r() {
        return Err(PdeError::InvalidInit(
            "field sizes do not match the grid".into(),
        ));
    }
    let start = mass_report(&init, &grid, 0.0);
    if start.s_derived < -1e-12 || init.i.iter().chain(&init.r).any(|&v| !(v >= 0.0)) {
        return Err(PdeError::InvalidInit(format!(
            "initial hosts exceed 1 or fields negative (S = {})",
            start.s_derived
        )));
    }
    if !(init.ev >= 0.0 && init.iv >= 0.0 && init.ev + init.iv <= 1.0 && init.e >= 0.0) {
        return Err(PdeError::InvalidInit("scalar state out of range".into()));
    }
    let initial_total = start.total;
    let dt = solver.dt();
    let record_stride = ((output.record_every / dt).round() as usize).max(1);
    let mut snapshots_due: Vec<f64> = output.snapshot_times.clone();
    snapshots_due.sort_by(f64::total_cmp);
    let mut snap_idx = 0;

    let mut state = init;
    let mut records = vec![to_record(
        &mass_report(&state, &grid, initial_total),
        &state,
    )];
    let mut snapshots = Vec::new();
    let take_snaps =
        |state: &PdeState, snap_idx: &mut usize, snapshots: &mut Vec<FieldSnapshot>| {
            while *snap_idx < snapshots_due.len() && state.t >= snapshots_due[*snap_idx] - 1e-12 {
                snapshots.push(FieldSnapshot {
                    t: state.t,
                    grid,
                    i: state.i.clone(),
                    r: state.r.clone(),
                });
                *snap_idx += 1;
            }
        };
    take_snaps(&state, &mut snap_idx, &mut snapshots);

    let mut steps = 0usize;
    let mut max_balance: f64 = 0.0;
    let mut max_coupling: f64 = 0.0;
    let mut min_value = f64::INFINITY;
    while state.t < t_end - 1e-12 * t_end.max(1.0) {
        let h = dt.min(t_end - state.t);
        let f = solver.step_by(&mut state, h)?;
        steps += 1;
        max_balance = max_balance.max(f.balance_residual().abs());
        max_coupling = max_coupling.max((f.r_source - f.z0_outflow).abs());
        let last = state.t >= t_end - 1e-12 * t_end.max(1.0);
        if steps % record_stride == 0 || last {
            min_value = min_value.min(field_min(&state));
            records.push(to_record(
                &mass_report(&state, &grid, initial_total),
                &state,
            ));
        }
        take_snaps(&state, &mut snap_idx, &mut snapshots);
    }
    min_value = min_value.min(field_min(&state));
    Ok(FullRun {
        dt,
        steps,
        records,
        snapshots,
        final_state: state,
        max_balance_residual: max_balance,
        max_coupling_residual: max_coupling,
        min_field_value: min_value,
    })
}

fn field_min(state: &PdeState) -> f64 {
    state
        .i
        .iter()
        .chain(&state.r)
        .cloned()
        .fold(f64::INFINITY, f64::min)
}

fn to_record(m: &MassRecord, state: &PdeState) -> FullRecord {
    FullRecord {
        t: m.t,
        e: state.e,
        ev: state.ev,
        iv: state.iv,
        i_mass: m.i_mass,
        r_mass: m.r_mass,
        s_derived: m.s_derived,
        total: m.total,
        drift: m.drift,
    }
}

/// Endemic equilibrium of the structured model sampled on a grid.
#[derive(Debug, Clone, PartialEq)]
pub struct EndemicFields {
    pub scalars: EndemicState,
    /// `I*` at cell centres.
    pub i: Vec<f64>,
    /// `R*` at the recovered-grid cell centres.
    pub r: Vec<f64>,
}

impl EndemicFields {
    /// Initial state for [`simulate_full`].
    pub fn to_state(&self, grid: &Grid2D) -> PdeState {
        let mut s = PdeState {
            t: 0.0,
            i: self.i.clone(),
            r: self.r.clone(),
            e: self.scalars.e,
            ev: self.scalars.ev,
            iv: self.scalars.iv,
            s_tracked: 0.0,
        };
        s.close_susceptibles(grid);
        s
    }
}

/// Entry level and age of the characteristic through `(z, y)`, or `None`
/// outside the infected region.
pub fn trace_back(
    whp: &WithinHostParams,
    beta: f64,
    z: f64,
    y: f64,
) -> Result<Option<(f64, f64)>, PdeError> {
    if !(z > whp.z0) {
        return Ok(None);
    }
    let back = |s: f64| flow(whp, beta, z, y, -s).0 - whp.z0;
    let step = PI / (20.0 * beta);
    let horizon = 2.0 * PI / beta;
    let mut lo = 0.0;
    let mut v_lo = back(0.0);
    loop {
        let hi = (lo + step).min(horizon);
        let v_hi = back(hi);
        if v_lo > 0.0 && v_hi <= 0.0 {
            let s = find_root(back, &RootBracket::new(lo, hi).with_tol(1e-13))?;
            let y_entry = flow(whp, beta, z, y, -s).1;
            let y0 = whp.antibody_threshold();
            return Ok(if (0.0..y0).contains(&y_entry) {
                Some((y_entry, s))
            } else {
                None
            });
        }
        if hi >= horizon {
            return Ok(None);
        }
        lo = hi;
        v_lo = v_hi;
    }
}

/// Endemic densities: `I*` by tracing each cell centre back to its entry
/// point, `R*` from the recovery flux through each level. `None` when
/// `R0 <= 1`.
pub fn endemic_fields(
    whp: &WithinHostParams,
    epi: &EpiParams,
    g: &EntryDistribution,
    grid: &Grid2D,
    quad: &QuadratureSpec,
) -> Result<Option<EndemicFields>, PdeError> {
    if g.point_mass().is_some() {
        return Err(PdeError::InvalidInit(
            "endemic densities need a continuous entry distribution".into(),
        ));
    }
    let Some(scalars) = endemic_full(whp, g, epi, quad)? else {
        return Ok(None);
    };
    let (i, r) = stationary_fields(whp, epi, g, grid, quad, scalars.e)?;
    Ok(Some(EndemicFields { scalars, i, r }))
}

/// Cell averages of `I` and `R` after `E` has been held at `e_level` for
/// longer than any infection plus immunity period.
pub fn stationary_fields(
    whp: &WithinHostParams,
    epi: &EpiParams,
    g: &EntryDistribution,
    grid: &Grid2D,
    quad: &QuadratureSpec,
    e_level: f64,
) -> Result<(Vec<f64>, Vec<f64>), PdeError> {
    if g.point_mass().is_some() {
        return Err(PdeError::InvalidInit(
            "stationary densities need a continuous entry distribution".into(),
        ));
    }
    let beta = whp.oscillation_frequency()?;
    let v_star = whp.boundary_speed(g.mean());
    let scale = e_level / (epi.tau_h * v_star);
    let mut i = vec![0.0; grid.n_cells()];
    for ii in 0..grid.nz {
        for j in 0..grid.ny {
            if let Some((y_entry, age)) =
                trace_back(whp, beta, grid.z_center(ii), grid.y_center(j))?
            {
                i[grid.index(ii, j)] = scale * g.density(y_entry) * ((whp.a3 - whp.a1) * age).exp();
            }
        }
    }

    let y0 = whp.antibody_threshold();
    let mut exits = Vec::new();
    for (y, w) in quadrature_nodes(0.0, y0, quad)? {
        if y >= y0 {
            continue;
        }
        let weight = w * g.density(y) * whp.boundary_speed(y);
        if weight > 0.0 {
            exits.push((permanence(whp, y)?.y_plus, weight));
        }
    }
    let r = (0..grid.n_r())
        .map(|k| {
            let y = grid.y_center(grid.j0 + k);
            let flux: f64 = exits.iter().filter(|e| e.0 > y).map(|e| e.1).sum();
            scale * flux / (whp.a5 * y)
        })
        .collect();
    Ok((i, r))
}

/// Initial state matching a constant exposed history `e_hist`: `E = e_hist`,
/// `I`, `R` from [`stationary_fields`], no infected vectors.
pub fn history_state(
    whp: &WithinHostParams,
    epi: &EpiParams,
    g: &EntryDistribution,
    grid: &Grid2D,
    quad: &QuadratureSpec,
    e_hist: f64,
) -> Result<PdeState, PdeError> {
    let (i, r) = stationary_fields(whp, epi, g, grid, quad, e_hist)?;
    let mut s = PdeState {
        t: 0.0,
        i,
        r,
        e: e_hist,
        ev: 0.0,
        iv: 0.0,
        s_tracked: 0.0,
    };
    s.close_susceptibles(grid);
    Ok(s)
}
