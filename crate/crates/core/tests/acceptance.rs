//! Acceptance suite. Runs every numbered criterion at its stated tolerance
//! and prints one PASS/FAIL line per criterion.

use std::process::ExitCode;
use std::time::Instant;

use immunovec::numerics::{rk4_step, QuadratureSpec};
use immunovec::pde::{
    build_grid, history_state, simulate_full, FullRun, PdeSolver, RunOutput, DEFAULT_CFL,
    DEFAULT_HISTORY_E, DEFAULT_MARGIN, DEFAULT_NY, DEFAULT_NZ,
};
use immunovec::reproduction::{
    dfe_real_root_test, endemic_full, endemic_uhr, mean_times, r0_full, r0_uhr,
    uhr_stationary_residual, DfeRealRoots, EntryDistribution, EpiParams,
};
use immunovec::uhr::{simulate, threshold_scan, HistorySpec, UhrScenario, UhrSeries};
use immunovec::within_host::{
    permanence, permanence_at_fraction, sample_admissible, WithinHostParams, DEFAULT_ENTRY_FRACTION,
};

type Check = fn() -> Result<String, String>;

fn ensure(cond: bool, msg: impl Into<String>) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg.into())
    }
}

/// First return to `z = z0` by RK4 on the linear system, refined by
/// bisection on the length of the last step.
fn rk4_first_return(p: &WithinHostParams, y_entry: f64) -> f64 {
    let mut rhs = |_t: f64, x: &[f64]| {
        let (vz, vy) = p.velocity(x[0], x[1]);
        vec![vz, vy]
    };
    let h = 1e-3;
    let mut t = 0.0;
    let mut x = vec![p.z0, y_entry];
    loop {
        let next = rk4_step(&mut rhs, t, &x, h);
        if t > 0.0 && next[0] < p.z0 && x[0] >= p.z0 {
            let (mut lo, mut hi) = (0.0, h);
            for _ in 0..60 {
                let mid = 0.5 * (lo + hi);
                if rk4_step(&mut rhs, t, &x, mid)[0] >= p.z0 {
                    lo = mid;
                } else {
                    hi = mid;
                }
            }
            return t + 0.5 * (lo + hi);
        }
        x = next;
        t += h;
        assert!(t < 1e3, "no return");
    }
}

fn reference_window() -> (f64, f64) {
    let w = permanence_at_fraction(&WithinHostParams::reference(), DEFAULT_ENTRY_FRACTION).unwrap();
    (w.tau1, w.tau2)
}

fn c1_permanence() -> Result<String, String> {
    let p = WithinHostParams::reference();
    let (tau1, _) = reference_window();
    ensure(
        (tau1 - 6.4).abs() <= 0.1,
        format!("reference tau1 = {tau1}"),
    )?;
    let samples = sample_admissible(&p, 50, 2024, (5.0, 9.0), DEFAULT_ENTRY_FRACTION)
        .map_err(|e| e.to_string())?;
    let mut worst: f64 = 0.0;
    for (q, w) in &samples {
        let oracle = rk4_first_return(q, w.y_entry);
        worst = worst.max((w.tau1 - oracle).abs() / oracle);
    }
    ensure(
        samples.len() == 50 && worst < 1e-6,
        format!("worst relative gap {worst:e}"),
    )?;
    Ok(format!(
        "tau1 = {tau1:.5} at y' = y0/2; 50 RK4 checks, worst rel gap {worst:.2e}"
    ))
}

fn c2_invariance() -> Result<String, String> {
    let base = WithinHostParams::reference();
    let mut worst: f64 = 0.0;
    for alpha in [0.0, 0.25, 0.5, 0.75] {
        let taus: Vec<f64> = [0.5, 1.0, 2.0, 5.0]
            .iter()
            .map(|&z0| {
                permanence_at_fraction(&WithinHostParams { z0, ..base }, alpha)
                    .unwrap()
                    .tau1
            })
            .collect();
        worst = worst.max(spread(&taus));
        let taus: Vec<f64> = [1.0, 0.5, 2.0, 4.0]
            .iter()
            .map(|&k| {
                let q = base.with_rates(base.a1, k * base.a2, base.a3, base.a4 / k);
                permanence_at_fraction(&q, alpha).unwrap().tau1
            })
            .collect();
        worst = worst.max(spread(&taus));
    }
    ensure(worst < 1e-8, format!("relative spread {worst:e}"))?;
    Ok(format!("max relative spread {worst:.2e}"))
}

fn spread(v: &[f64]) -> f64 {
    let max = v.iter().cloned().fold(f64::MIN, f64::max);
    let min = v.iter().cloned().fold(f64::MAX, f64::min);
    (max - min) / min
}

fn c3_r0() -> Result<String, String> {
    let (tau1, _) = reference_window();
    let epi = EpiParams::baseline();
    let r0 = r0_uhr(&epi, tau1).map_err(|e| e.to_string())?;
    ensure((r0 - 2.86).abs() <= 0.06, format!("R0 = {r0}"))?;
    Ok(format!("R0 = {r0:.4} (coefficient {:.5})", r0 / tau1))
}

fn c4_endemic_uhr() -> Result<String, String> {
    let epi = EpiParams::baseline();
    let s = UhrScenario::reference();
    let eq = endemic_uhr(&epi, s.tau1, s.tau2)
        .unwrap()
        .ok_or("no endemic state")?;
    let (a, b, c) = uhr_stationary_residual(&epi, s.tau1, s.tau2, eq.e, eq.ev, eq.iv).unwrap();
    let residual = a.abs().max(b.abs()).max(c.abs());
    ensure(
        residual < 1e-12,
        format!("stationary residual {residual:e}"),
    )?;
    let series = simulate(&s).map_err(|e| e.to_string())?;
    conservation(&series)?;
    let last = series.last();
    let gaps = [
        (last.e - eq.e).abs() / eq.e,
        (last.ev - eq.ev).abs() / eq.ev,
        (last.iv - eq.iv).abs() / eq.iv,
    ];
    let worst = gaps.iter().cloned().fold(0.0, f64::max);
    ensure(worst < 0.01, format!("t = {} gaps {gaps:?}", last.t))?;
    Ok(format!(
        "residual {residual:.1e}; worst relative gap at t = 5000: {worst:.2e}"
    ))
}

fn conservation(series: &UhrSeries) -> Result<f64, String> {
    let worst = series
        .records
        .iter()
        .map(|r| (r.s + r.e + r.i_total + r.r_total - 1.0).abs())
        .fold(0.0, f64::max);
    ensure(worst < 1e-9, format!("conservation error {worst:e}"))?;
    Ok(worst)
}

fn c5_conservation() -> Result<String, String> {
    let (tau1, tau2) = reference_window();
    let base = UhrScenario::reference();
    let scenarios = [
        UhrScenario {
            t_end: 2000.0,
            ..base.clone()
        },
        UhrScenario {
            history: HistorySpec::Totals {
                i_total: 0.05,
                r_total: 0.3,
            },
            ev0: 0.02,
            iv0: 0.05,
            t_end: 2000.0,
            ..base.clone()
        },
        UhrScenario {
            tau1,
            tau2,
            history: HistorySpec::Piecewise {
                recent: 0.01,
                older: 0.0,
            },
            t_end: 2000.0,
            ..base.clone()
        },
        UhrScenario {
            epi: base.epi.with_r0(0.5, base.tau1).unwrap(),
            t_end: 2000.0,
            ..base.clone()
        },
        UhrScenario {
            history: HistorySpec::Tabulated(vec![(-76.4, 0.0), (-10.0, 0.004), (0.0, 0.001)]),
            dt: 0.005,
            t_end: 500.0,
            ..base.clone()
        },
    ];
    let mut worst: f64 = 0.0;
    for s in &scenarios {
        let series = simulate(s).map_err(|e| e.to_string())?;
        worst = worst.max(conservation(&series)?);
    }
    Ok(format!(
        "{} scenarios, max |S+E+I+R-1| = {worst:.1e}",
        scenarios.len()
    ))
}

fn c6_threshold() -> Result<String, String> {
    let template = UhrScenario {
        t_end: 1e4,
        ..UhrScenario::reference()
    };
    let recs = threshold_scan(&template, 100, (0.3, 3.0)).map_err(|e| e.to_string())?;
    let below = recs
        .iter()
        .filter(|r| r.r0 <= 0.95)
        .map(|r| r.i_final)
        .fold(0.0, f64::max);
    let above = recs
        .iter()
        .filter(|r| r.r0 >= 1.1)
        .map(|r| r.i_final)
        .fold(f64::MAX, f64::min);
    ensure(
        below < 1e-10 && above > 1e-4,
        format!("max below {below:e}, min above {above:e}"),
    )?;
    Ok(format!(
        "max I_final (R0 <= 0.95) {below:.1e}; min I_final (R0 >= 1.1) {above:.2e}"
    ))
}

fn c7_dirac() -> Result<String, String> {
    let p = WithinHostParams::reference();
    let epi = EpiParams::baseline();
    let y0 = p.antibody_threshold();
    let quad = QuadratureSpec::gauss_legendre(400);
    let mut worst: f64 = 0.0;
    for alpha in [0.25, 0.5, 0.75] {
        let y_star = alpha * y0;
        let g = EntryDistribution::gaussian(y_star, (y0 / 100.0).powi(2), y0)
            .map_err(|e| e.to_string())?;
        let w = permanence(&p, y_star).map_err(|e| e.to_string())?;
        let mt = mean_times(&p, &g, &epi, &quad).map_err(|e| e.to_string())?;
        let full = r0_full(&p, &g, &epi, &quad).map_err(|e| e.to_string())?;
        let uhr = r0_uhr(&epi, w.tau1).unwrap();
        let gaps = [
            (mt.t1 - w.tau1).abs() / w.tau1,
            (mt.t2 - w.tau2).abs() / w.tau2,
            (full - uhr).abs() / uhr,
        ];
        let g_worst = gaps.iter().cloned().fold(0.0, f64::max);
        ensure(g_worst < 0.01, format!("alpha {alpha}: gaps {gaps:?}"))?;
        worst = worst.max(g_worst);
    }
    Ok(format!("worst relative gap {worst:.2e}"))
}

fn c8_real_root() -> Result<String, String> {
    let (tau1, _) = reference_window();
    let base = EpiParams::baseline();
    let mut agree = 0;
    for k in 0..20 {
        let r0 = 0.2 + 2.8 * k as f64 / 19.0;
        let epi = base.with_r0(r0, tau1).unwrap();
        let verdict = dfe_real_root_test(&epi, tau1).map_err(|e| e.to_string())?;
        let positive = matches!(verdict, DfeRealRoots::PositiveRealRoot(_));
        ensure(positive == (r0 > 1.0), format!("R0 = {r0}: {verdict:?}"))?;
        agree += 1;
    }
    Ok(format!("{agree}/20 scenarios agree with sign(R0 - 1)"))
}

struct PdeOutcome {
    run: FullRun,
    secs: f64,
}

fn reference_pde_run(nz: usize, ny: usize) -> Result<PdeOutcome, String> {
    let p = WithinHostParams::reference();
    let y0 = p.antibody_threshold();
    let g = EntryDistribution::gaussian(0.5 * y0, 0.2, y0).map_err(|e| e.to_string())?;
    let grid = build_grid(&p, DEFAULT_MARGIN, nz, ny).map_err(|e| e.to_string())?;
    let epi = EpiParams::baseline();
    let mut solver = PdeSolver::new(&p, &epi, &g, grid, DEFAULT_CFL).map_err(|e| e.to_string())?;
    let quad = QuadratureSpec::gauss_legendre(400);
    let init =
        history_state(&p, &epi, &g, &grid, &quad, DEFAULT_HISTORY_E).map_err(|e| e.to_string())?;
    let start = Instant::now();
    let run = simulate_full(&mut solver, init, 400.0, &RunOutput::default())
        .map_err(|e| e.to_string())?;
    Ok(PdeOutcome {
        run,
        secs: start.elapsed().as_secs_f64(),
    })
}

fn c9_full_pde() -> Result<String, String> {
    let p = WithinHostParams::reference();
    let y0 = p.antibody_threshold();
    let g = EntryDistribution::gaussian(0.5 * y0, 0.2, y0).map_err(|e| e.to_string())?;
    let epi = EpiParams::baseline();
    let quad = QuadratureSpec::gauss_legendre(400);
    let times = mean_times(&p, &g, &epi, &quad).map_err(|e| e.to_string())?;
    let eq = endemic_full(&p, &g, &epi, &quad)
        .map_err(|e| e.to_string())?
        .ok_or("no endemic state")?;

    let coarse = reference_pde_run(DEFAULT_NZ, DEFAULT_NY)?;
    let run = &coarse.run;
    ensure(
        coarse.secs <= 600.0,
        format!("200x340 run took {:.0}s", coarse.secs),
    )?;
    ensure(
        run.max_balance_residual < 1e-12 && run.max_coupling_residual < 1e-12,
        format!(
            "flux residuals {:e} / {:e}",
            run.max_balance_residual, run.max_coupling_residual
        ),
    )?;
    ensure(
        run.min_field_value >= -1e-12,
        format!("negative field value {:e}", run.min_field_value),
    )?;
    let last = run.records.last().unwrap();
    let drift = last.drift.abs() / run.records[0].total;
    ensure(drift <= 0.05, format!("drift {drift:e}"))?;
    let rel = |a: f64, b: f64| (a - b).abs() / b;
    let scalar_gaps = [rel(last.e, eq.e), rel(last.ev, eq.ev), rel(last.iv, eq.iv)];
    let mass_gaps = [rel(last.i_mass, eq.i_total), rel(last.r_mass, eq.r_total)];
    ensure(
        scalar_gaps.iter().all(|&g| g < 0.10) && mass_gaps.iter().all(|&g| g < 0.15),
        format!("equilibrium gaps E/Ev/Iv {scalar_gaps:?}, I/R {mass_gaps:?}"),
    )?;

    let fine = reference_pde_run(2 * DEFAULT_NZ, 2 * DEFAULT_NY)?;
    let fine_drift = fine.run.records.last().unwrap().drift.abs() / fine.run.records[0].total;
    ensure(
        fine_drift < drift,
        format!("drift {drift:e} -> {fine_drift:e} under refinement"),
    )?;
    Ok(format!(
        "200x340 in {:.0}s (T1 {:.3}, T2 {:.2}); flux residual {:.1e}; drift {:.2e} -> {:.2e} (400x680, {:.0}s); \
         gaps E/Ev/Iv {:.3}/{:.3}/{:.3}, I/R {:.3}/{:.3}",
        coarse.secs,
        times.t1,
        times.t2,
        run.max_balance_residual,
        drift,
        fine_drift,
        fine.secs,
        scalar_gaps[0],
        scalar_gaps[1],
        scalar_gaps[2],
        mass_gaps[0],
        mass_gaps[1]
    ))
}

fn c10_monotone() -> Result<String, String> {
    let p = WithinHostParams::reference();
    let epi = EpiParams::baseline();
    let r0s: Vec<f64> = (1..=19)
        .map(|k| {
            let w = permanence_at_fraction(&p, 0.05 * k as f64).unwrap();
            r0_uhr(&epi, w.tau1).unwrap()
        })
        .collect();
    ensure(r0s.windows(2).all(|w| w[1] < w[0]), format!("{r0s:?}"))?;
    Ok(format!(
        "R0 from {:.3} (0.05) down to {:.3} (0.95)",
        r0s[0], r0s[18]
    ))
}

fn main() -> ExitCode {
    let checks: [(u32, &str, Check); 10] = [
        (1, "permanence time", c1_permanence),
        (2, "invariance suite", c2_invariance),
        (3, "R0 reproduction", c3_r0),
        (4, "UHR endemic equilibrium", c4_endemic_uhr),
        (5, "UHR host conservation", c5_conservation),
        (6, "threshold property", c6_threshold),
        (7, "Dirac limit", c7_dirac),
        (8, "DFE real-root criterion", c8_real_root),
        (9, "full PDE run", c9_full_pde),
        (10, "R0 monotone in entry level", c10_monotone),
    ];
    let filter: Vec<u32> = std::env::args()
        .skip(1)
        .filter_map(|a| a.parse().ok())
        .collect();
    let mut failed = 0;
    for (id, name, check) in checks {
        if !filter.is_empty() && !filter.contains(&id) {
            continue;
        }
        let start = Instant::now();
        let outcome = check();
        let secs = start.elapsed().as_secs_f64();
        match outcome {
            Ok(detail) => println!("criterion {id:>2} PASS  {name}: {detail} [{secs:.1}s]"),
            Err(detail) => {
                failed += 1;
                println!("criterion {id:>2} FAIL  {name}: {detail} [{secs:.1}s]");
            }
        }
    }
    if failed > 0 {
        ExitCode::FAILURE
    } else {
        ExitCode::SUCCESS
    }
}
