//! Scalar root finding, composite quadrature and fixed-step RK4.
//!
//! Everything here is a pure function of its arguments; the model modules
//! build on these primitives.

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum NumericsError {
    #[error("no sign change on [{lo}, {hi}]: f(lo) = {f_lo}, f(hi) = {f_hi}")]
    NoSignChange {
        lo: f64,
        hi: f64,
        f_lo: f64,
        f_hi: f64,
    },
    #[error("root finder did not reach tolerance in {0} iterations")]
    MaxIterExceeded(usize),
    #[error("invalid interval [{0}, {1}]")]
    InvalidInterval(f64, f64),
    #[error("invalid bracket: {0}")]
    InvalidBracket(&'static str),
    #[error("state became non-finite at t = {0}")]
    NonFiniteState(f64),
    #[error("invalid step size {0}")]
    InvalidStep(f64),
}

/// Absolute root tolerance used throughout the crate.
pub const DEFAULT_ROOT_TOL: f64 = 1e-10;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RootBracket {
    pub lo: f64,
    pub hi: f64,
    pub tol_abs: f64,
    pub max_iter: usize,
}

impl RootBracket {
    pub fn new(lo: f64, hi: f64) -> Self {
        Self {
            lo,
            hi,
            tol_abs: DEFAULT_ROOT_TOL,
            max_iter: 200,
        }
    }

    pub fn with_tol(mut self, tol_abs: f64) -> Self {
        self.tol_abs = tol_abs;
        self
    }
}

/// Brent's method: inverse quadratic interpolation and secant steps with a
/// bisection fallback. The returned point lies within `tol_abs` of a sign
/// change of `f` inside the bracket.
pub fn find_root<F>(mut f: F, bracket: &RootBracket) -> Result<f64, NumericsError>
where
    F: FnMut(f64) -> f64,
{
    if !(bracket.lo < bracket.hi) {
        return Err(NumericsError::InvalidBracket("lo must be < hi"));
    }
    if !(bracket.tol_abs > 0.0) || bracket.max_iter == 0 {
        return Err(NumericsError::InvalidBracket(
            "tol_abs must be > 0 and max_iter >= 1",
        ));
    }

    let (mut a, mut b) = (bracket.lo, bracket.hi);
    let (mut fa, mut fb) = (f(a), f(b));
    if fa == 0.0 {
        return Ok(a);
    }
    if fb == 0.0 {
        return Ok(b);
    }
    if fa.signum() == fb.signum() {
        return Err(NumericsError::NoSignChange {
            lo: a,
            hi: b,
            f_lo: fa,
            f_hi: fb,
        });
    }

    let mut c = a;
    let mut fc = fa;
    let mut d = b - a;
    let mut e = d;

    for _ in 0..bracket.max_iter {
        if fb.signum() == fc.signum() {
            c = a;
            fc = fa;
            d = b - a;
            e = d;
        }
        if fc.abs() < fb.abs() {
            a = b;
            b = c;
            c = a;
            fa = fb;
            fb = fc;
            fc = fa;
        }

        let tol1 = 2.0 * f64::EPSILON * b.abs() + 0.5 * bracket.tol_abs;
        let xm = 0.5 * (c - b);
        if xm.abs() <= tol1 || fb == 0.0 {
            return Ok(b);
        }

        if e.abs() >= tol1 && fa.abs() > fb.abs() {
            let s = fb / fa;
            let (mut p, mut q);
            if a == c {
                p = 2.0 * xm * s;
                q = 1.0 - s;
            } else {
                let qq = fa / fc;
                let r = fb / fc;
                p = s * (2.0 * xm * qq * (qq - r) - (b - a) * (r - 1.0));
                q = (qq - 1.0) * (r - 1.0) * (s - 1.0);
            }
            if p > 0.0 {
                q = -q;
            }
            p = p.abs();
            let min1 = 3.0 * xm * q - (tol1 * q).abs();
            let min2 = (e * q).abs();
            if 2.0 * p < min1.min(min2) {
                e = d;
                d = p / q;
            } else {
                d = xm;
                e = d;
            }
        } else {
            d = xm;
            e = d;
        }

        a = b;
        fa = fb;
        b += if d.abs() > tol1 { d } else { tol1.copysign(xm) };
        fb = f(b);
    }
    Err(NumericsError::MaxIterExceeded(bracket.max_iter))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum QuadratureRule {
    Trapezoid,
    /// Five-point Gauss-Legendre on every panel.
    GaussLegendre,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct QuadratureSpec {
    pub n_panels: usize,
    pub rule: QuadratureRule,
}

impl QuadratureSpec {
    pub fn trapezoid(n_panels: usize) -> Self {
        Self {
            n_panels,
            rule: QuadratureRule::Trapezoid,
        }
    }

    pub fn gauss_legendre(n_panels: usize) -> Self {
        Self {
            n_panels,
            rule: QuadratureRule::GaussLegendre,
        }
    }
}

impl Default for QuadratureSpec {
    fn default() -> Self {
        Self::trapezoid(2000)
    }
}

const GL5_NODES: [f64; 5] = [
    -0.906_179_845_938_664,
    -0.538_469_310_105_683,
    0.0,
    0.538_469_310_105_683,
    0.906_179_845_938_664,
];
const GL5_WEIGHTS: [f64; 5] = [
    0.236_926_885_056_189,
    0.478_628_670_499_366,
    0.568_888_888_888_889,
    0.478_628_670_499_366,
    0.236_926_885_056_189,
];

/// Nodes and weights of the composite rule on `[a, b]`.
pub fn quadrature_nodes(
    a: f64,
    b: f64,
    spec: &QuadratureSpec,
) -> Result<Vec<(f64, f64)>, NumericsError> {
    if a > b || !a.is_finite() || !b.is_finite() {
        return Err(NumericsError::InvalidInterval(a, b));
    }
    if a == b {
        return Ok(Vec::new());
    }
    let n = spec.n_panels.max(1);
    let h = (b - a) / n as f64;
    let nodes = match spec.rule {
        QuadratureRule::Trapezoid => (0..=n)
            .map(|i| {
                let x = if i == n { b } else { a + i as f64 * h };
                let w = if i == 0 || i == n { 0.5 * h } else { h };
                (x, w)
            })
            .collect(),
        QuadratureRule::GaussLegendre => (0..n)
            .flat_map(|i| {
                let mid = a + (i as f64 + 0.5) * h;
                GL5_NODES
                    .iter()
                    .zip(GL5_WEIGHTS.iter())
                    .map(move |(x, w)| (mid + 0.5 * h * x, 0.5 * h * w))
            })
            .collect(),
    };
    Ok(nodes)
}

/// Composite quadrature of `f` over `[a, b]`.
pub fn integrate<F>(mut f: F, a: f64, b: f64, spec: &QuadratureSpec) -> Result<f64, NumericsError>
where
    F: FnMut(f64) -> f64,
{
    Ok(quadrature_nodes(a, b, spec)?
        .into_iter()
        .map(|(x, w)| w * f(x))
        .sum())
}

/// Time-stamped states produced by [`rk4_integrate`].
#[derive(Debug, Clone, Default)]
pub struct Trajectory {
    pub times: Vec<f64>,
    pub states: Vec<Vec<f64>>,
}

impl Trajectory {
    pub fn last(&self) -> Option<(f64, &[f64])> {
        Some((*self.times.last()?, self.states.last()?.as_slice()))
    }
}

/// One classical RK4 step of length `h` from `(t, x)`.
pub fn rk4_step<F>(rhs: &mut F, t: f64, x: &[f64], h: f64) -> Vec<f64>
where
    F: FnMut(f64, &[f64]) -> Vec<f64>,
{
    let k1 = rhs(t, x);
    let tmp: Vec<f64> = x.iter().zip(&k1).map(|(xi, k)| xi + 0.5 * h * k).collect();
    let k2 = rhs(t + 0.5 * h, &tmp);
    let tmp: Vec<f64> = x.iter().zip(&k2).map(|(xi, k)| xi + 0.5 * h * k).collect();
    let k3 = rhs(t + 0.5 * h, &tmp);
    let tmp: Vec<f64> = x.iter().zip(&k3).map(|(xi, k)| xi + h * k).collect();
    let k4 = rhs(t + h, &tmp);
    x.iter()
        .enumerate()
        .map(|(i, xi)| xi + h / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]))
        .collect()
}

/// Fixed-step RK4 from `t0` to `t1`; the last step is shortened to land on `t1`.
pub fn rk4_integrate<F>(
    mut rhs: F,
    state0: &[f64],
    t0: f64,
    t1: f64,
    dt: f64,
) -> Result<Trajectory, NumericsError>
where
    F: FnMut(f64, &[f64]) -> Vec<f64>,
{
    if !(dt > 0.0) || !dt.is_finite() {
        return Err(NumericsError::InvalidStep(dt));
    }
    if !(t1 > t0) {
        return Err(NumericsError::InvalidInterval(t0, t1));
    }
    let n_full = ((t1 - t0) / dt).floor() as usize;
    let mut traj = Trajectory {
        times: Vec::with_capacity(n_full + 2),
        states: Vec::with_capacity(n_full + 2),
    };
    traj.times.push(t0);
    traj.states.push(state0.to_vec());

    let mut x = state0.to_vec();
    let mut k = 0usize;
    loop {
        let t = t0 + k as f64 * dt;
        let remaining = t1 - t;
        // Treat a sliver below 1e-12 * dt as already on t1.
        if remaining <= dt * 1e-12 {
            break;
        }
        let h = remaining.min(dt);
        x = rk4_step(&mut rhs, t, &x, h);
        let t_next = if h < dt { t1 } else { t0 + (k + 1) as f64 * dt };
        if x.iter().any(|v| !v.is_finite()) {
            return Err(NumericsError::NonFiniteState(t_next));
        }
        traj.times.push(t_next);
        traj.states.push(x.clone());
        if h < dt {
            break;
        }
        k += 1;
    }
    if let Some(last) = traj.times.last_mut() {
        *last = t1;
    }
    Ok(traj)
}
