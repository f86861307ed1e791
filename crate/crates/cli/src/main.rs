mod config;
mod output;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use rayon::prelude::*;
use serde_json::json;

use immunovec::numerics::QuadratureSpec;
use immunovec::pde::{build_grid, history_state, simulate_full, PdeSolver, RunOutput};
use immunovec::reproduction::{
    endemic_full_from_times, endemic_uhr, mean_times, r0_full_from_times, r0_uhr, EndemicState,
};
use immunovec::uhr::{
    simulate, sweep_ystar, threshold_scan, write_threshold_csv, HistorySpec, RunSettings,
    UhrScenario,
};
use immunovec::within_host::{
    flow, permanence, permanence_at_fraction, sample_admissible, WithinHostParams,
};

use config::{ConfigError, RawConfig, Scenario, UhrHistory};
use output::Outputs;

#[derive(Debug, Parser)]
#[command(
    name = "immunovec",
    version,
    about = "Vector-borne epidemics with within-host immune dynamics"
)]
struct Cli {
    /// Scenario file; built-in reference values are used when omitted.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output directory.
    #[arg(long, global = true, default_value = "out")]
    out: PathBuf,
    /// Seed for randomized commands.
    #[arg(long, global = true, default_value_t = 2024)]
    seed: u64,
    /// Worker threads for sweeps (defaults to all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// UHR and full-model reference runs with equilibria and R0.
    Reference,
    /// Permanence time and R0 over a grid of (a1, a3).
    SweepA13,
    /// Permanence time and R0 over a grid of (a2, a4).
    SweepA24,
    /// UHR runs across entry fractions of the antibody threshold.
    SweepYstar,
    /// Final infected proportion across R0, varied through vector density.
    Threshold,
    /// Characteristic curves and nullclines of the within-host flow.
    Characteristics,
    /// Random search for admissible within-host rates.
    SampleParams {
        /// Number of rows; overrides `sweep.sample_n`.
        #[arg(long)]
        n: Option<usize>,
    },
    /// UHR time series only.
    SimulateUhr,
    /// Structured-model time series and field snapshots.
    SimulateFull,
}

impl Command {
    fn name(&self) -> &'static str {
        match self {
            Command::Reference => "reference",
            Command::SweepA13 => "sweep-a13",
            Command::SweepA24 => "sweep-a24",
            Command::SweepYstar => "sweep-ystar",
            Command::Threshold => "threshold",
            Command::Characteristics => "characteristics",
            Command::SampleParams { .. } => "sample-params",
            Command::SimulateUhr => "simulate-uhr",
            Command::SimulateFull => "simulate-full",
        }
    }
}

#[derive(Debug, thiserror::Error)]
enum CliError {
    #[error("configuration error: {0}")]
    Config(#[from] ConfigError),
    #[error("numerical failure: {0}")]
    Numerical(String),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

impl CliError {
    fn exit_code(&self) -> u8 {
        match self {
            CliError::Config(_) => 2,
            CliError::Numerical(_) => 3,
            CliError::Io(_) => 1,
        }
    }
}

fn num<E: std::fmt::Display>(e: E) -> CliError {
    CliError::Numerical(e.to_string())
}

fn invalid(msg: impl Into<String>) -> CliError {
    CliError::Config(ConfigError::Invalid(msg.into()))
}

type Summary = serde_json::Map<String, serde_json::Value>;

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(dir) => {
            eprintln!("{}: wrote {}", cli.command.name(), dir.display());
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}

fn run(cli: &Cli) -> Result<PathBuf, CliError> {
    let raw = match &cli.config {
        Some(path) => RawConfig::load(path)?,
        None => RawConfig::default(),
    };
    let sc = Scenario::resolve(&raw)?;
    if let Some(n) = cli.threads {
        if n == 0 {
            return Err(invalid("--threads must be positive"));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(num)?;
    }
    let out_dir = sc
        .out_dir
        .as_ref()
        .filter(|_| cli.out == PathBuf::from("out"))
        .map(PathBuf::from);
    let out_dir = out_dir.unwrap_or_else(|| cli.out.clone());
    let mut out = Outputs::stage(&out_dir)?;
    let result = dispatch(cli, &sc, &mut out);
    match result {
        Ok(summary) => {
            let manifest = json!({
                "command": cli.command.name(),
                "argv": std::env::args().collect::<Vec<_>>(),
                "seed": cli.seed,
                "config": cli.config.as_ref().map(|p| p.display().to_string()),
                "parameters": sc.to_json(),
                "results": summary,
                "outputs": out.hashes(),
            });
            out.commit(&manifest)?;
            Ok(out_dir)
        }
        Err(e) => {
            out.discard();
            Err(e)
        }
    }
}

fn dispatch(cli: &Cli, sc: &Scenario, out: &mut Outputs) -> Result<Summary, CliError> {
    match &cli.command {
        Command::Reference => cmd_reference(sc, out),
        Command::SweepA13 => cmd_sweep(sc, out, Pair::A13),
        Command::SweepA24 => cmd_sweep(sc, out, Pair::A24),
        Command::SweepYstar => cmd_sweep_ystar(sc, out),
        Command::Threshold => cmd_threshold(sc, out),
        Command::Characteristics => cmd_characteristics(sc, out),
        Command::SampleParams { n } => {
            cmd_sample_params(sc, out, n.unwrap_or(sc.sample_n), cli.seed)
        }
        Command::SimulateUhr => cmd_simulate_uhr(sc, out),
        Command::SimulateFull => cmd_simulate_full(sc, out),
    }
}

fn history(sc: &Scenario) -> HistorySpec {
    match sc.history {
        UhrHistory::Constant(c) => HistorySpec::Constant(c),
        UhrHistory::Totals { i_total, r_total } => HistorySpec::Totals { i_total, r_total },
    }
}

/// `(τ1, τ2)` for the UHR model: explicit overrides, else the within-host
/// window at the configured entry fraction.
fn uhr_windows(sc: &Scenario) -> Result<(f64, f64), CliError> {
    let window = permanence_at_fraction(&sc.whp, sc.alpha).map_err(num)?;
    Ok((
        sc.uhr_tau1.unwrap_or(window.tau1),
        sc.uhr_tau2.unwrap_or(window.tau2),
    ))
}

fn uhr_scenario(sc: &Scenario, tau1: f64, tau2: f64, t_end: f64) -> UhrScenario {
    UhrScenario {
        epi: sc.epi,
        tau1,
        tau2,
        history: history(sc),
        ev0: sc.ev0,
        iv0: sc.iv0,
        t_end,
        dt: sc.uhr_dt,
    }
}

fn endemic_json(eq: &Option<EndemicState>) -> serde_json::Value {
    match eq {
        Some(s) => json!({
            "E": s.e, "Ev": s.ev, "Iv": s.iv, "I_total": s.i_total, "R_total": s.r_total, "S": s.susceptible(),
        }),
        None => serde_json::Value::Null,
    }
}

fn write_equilibria(
    out: &mut Outputs,
    rows: &[(&str, f64, f64, f64, &Option<EndemicState>)],
) -> Result<(), CliError> {
    Ok(out.write("equilibria.csv", |w| {
        use std::io::Write;
        writeln!(w, "model,R0,tau1,tau2,E,Ev,Iv,I_total,R_total")?;
        for (model, r0, t1, t2, eq) in rows {
            let vals = match eq {
                Some(s) => [s.e, s.ev, s.iv, s.i_total, s.r_total]
                    .map(|v| format!("{v:.16e}"))
                    .join(","),
                None => ",,,,".to_string(),
            };
            writeln!(w, "{model},{r0:.16e},{t1:.16e},{t2:.16e},{vals}")?;
        }
        Ok(())
    })?)
}

fn cmd_reference(sc: &Scenario, out: &mut Outputs) -> Result<Summary, CliError> {
    let (tau1, tau2) = uhr_windows(sc)?;
    let r0 = r0_uhr(&sc.epi, tau1).map_err(num)?;
    let eq_uhr = endemic_uhr(&sc.epi, tau1, tau2).map_err(num)?;
    let series = simulate(&uhr_scenario(sc, tau1, tau2, sc.uhr_t_end)).map_err(num)?;
    out.write("uhr_series.csv", |w| series.write_csv(w))?;

    let g = sc.entry().map_err(invalid)?;
    let times =
        mean_times(&sc.whp, &g, &sc.epi, &QuadratureSpec::gauss_legendre(400)).map_err(num)?;
    let r0_full = r0_full_from_times(&sc.epi, &times);
    let eq_full = endemic_full_from_times(&sc.epi, &times);
    let run = full_run(sc, &g, &[])?;
    out.write("full_series.csv", |w| run.write_csv(w))?;
    write_equilibria(
        out,
        &[
            ("uhr", r0, tau1, tau2, &eq_uhr),
            ("full", r0_full, times.t1, times.t2, &eq_full),
        ],
    )?;
    let last = run.records.last().expect("records start with t = 0");
    let mut s = Summary::new();
    s.insert(
        "uhr".into(),
        json!({ "R0": r0, "tau1": tau1, "tau2": tau2, "equilibrium": endemic_json(&eq_uhr) }),
    );
    s.insert(
        "full".into(),
        json!({
            "R0": r0_full, "T1": times.t1, "T2": times.t2, "equilibrium": endemic_json(&eq_full),
            "dt": run.dt, "steps": run.steps, "final_drift": last.drift,
        }),
    );
    Ok(s)
}

#[derive(Clone, Copy)]
enum Pair {
    A13,
    A24,
}

fn cmd_sweep(sc: &Scenario, out: &mut Outputs, pair: Pair) -> Result<Summary, CliError> {
    let axis = |base: f64| -> Vec<f64> {
        (0..sc.points)
            .map(|k| {
                base * (sc.scale_min
                    + (sc.scale_max - sc.scale_min) * k as f64 / (sc.points - 1) as f64)
            })
            .collect()
    };
    let p = sc.whp;
    let (xs, ys) = match pair {
        Pair::A13 => (axis(p.a1), axis(p.a3)),
        Pair::A24 => (axis(p.a2), axis(p.a4)),
    };
    let grid: Vec<(f64, f64)> = xs
        .iter()
        .flat_map(|&x| ys.iter().map(move |&y| (x, y)))
        .collect();
    let rows: Vec<Option<(f64, f64)>> = grid
        .par_iter()
        .map(|&(x, y)| {
            let q = match pair {
                Pair::A13 => p.with_rates(x, p.a2, y, p.a4),
                Pair::A24 => p.with_rates(p.a1, x, p.a3, y),
            };
            if q.validate().is_err() {
                return Ok(None);
            }
            let tau1 = permanence_at_fraction(&q, sc.alpha).map_err(num)?.tau1;
            let r0 = r0_uhr(&sc.epi, tau1).map_err(num)?;
            Ok(Some((tau1, r0)))
        })
        .collect::<Result<_, CliError>>()?;
    let (ni, nj) = match pair {
        Pair::A13 => ("a1", "a3"),
        Pair::A24 => ("a2", "a4"),
    };
    let name = match pair {
        Pair::A13 => "sweep_a13.csv",
        Pair::A24 => "sweep_a24.csv",
    };
    out.write(name, |w| {
        use std::io::Write;
        writeln!(w, "a_i,a_j,valid,tau1,R0")?;
        for ((x, y), row) in grid.iter().zip(&rows) {
            match row {
                Some((t, r)) => writeln!(w, "{x:.16e},{y:.16e},true,{t:.16e},{r:.16e}")?,
                None => writeln!(w, "{x:.16e},{y:.16e},false,,")?,
            }
        }
        Ok(())
    })?;
    let valid = rows.iter().filter(|r| r.is_some()).count();
    let mut s = Summary::new();
    s.insert("axes".into(), json!([ni, nj]));
    s.insert("points".into(), json!(grid.len()));
    s.insert("valid".into(), json!(valid));
    Ok(s)
}

fn cmd_sweep_ystar(sc: &Scenario, out: &mut Outputs) -> Result<Summary, CliError> {
    if sc.alphas.is_empty() {
        return Err(ConfigError::Invalid("sweep.alphas is empty".into()).into());
    }
    if let Some(a) = sc.alphas.iter().find(|a| !(**a > 0.0 && **a < 1.0)) {
        return Err(invalid(format!("sweep.alphas entry {a} outside (0, 1)")));
    }
    let run = RunSettings {
        history: history(sc),
        ev0: sc.ev0,
        iv0: sc.iv0,
        t_end: sc.uhr_t_end,
        dt: sc.uhr_dt,
    };
    let records = sweep_ystar(&sc.whp, &sc.epi, &sc.alphas, &run).map_err(num)?;
    for r in &records {
        out.write(&format!("ystar_alpha_{:.4}.csv", r.alpha), |w| {
            r.series.write_csv(w)
        })?;
    }
    out.write("ystar_summary.csv", |w| {
        use std::io::Write;
        writeln!(w, "alpha,tau1,tau2,R0,E_inf,Ev_inf,Iv_inf")?;
        for r in &records {
            let last = r.series.last();
            writeln!(
                w,
                "{:.16e},{:.16e},{:.16e},{:.16e},{:.16e},{:.16e},{:.16e}",
                r.alpha, r.window.tau1, r.window.tau2, r.r0, last.e, last.ev, last.iv
            )?;
        }
        Ok(())
    })?;
    let mut s = Summary::new();
    s.insert("runs".into(), json!(records.len()));
    Ok(s)
}

fn cmd_threshold(sc: &Scenario, out: &mut Outputs) -> Result<Summary, CliError> {
    let (tau1, tau2) = uhr_windows(sc)?;
    let template = uhr_scenario(sc, tau1, tau2, sc.threshold_t_end);
    let records =
        threshold_scan(&template, sc.threshold_n, (sc.r0_min, sc.r0_max)).map_err(|e| match e {
            immunovec::uhr::UhrError::InvalidScenario(m) => invalid(m),
            other => num(other),
        })?;
    out.write("threshold.csv", |w| write_threshold_csv(&records, w))?;
    let mut s = Summary::new();
    s.insert("tau1".into(), json!(tau1));
    s.insert("tau2".into(), json!(tau2));
    s.insert("runs".into(), json!(records.len()));
    Ok(s)
}

const CURVE_POINTS: usize = 500;

fn write_curve(
    out: &mut Outputs,
    name: &str,
    header: &str,
    rows: &[[f64; 3]],
) -> Result<(), CliError> {
    Ok(out.write(name, |w| {
        use std::io::Write;
        writeln!(w, "{header}")?;
        for [a, b, c] in rows {
            writeln!(w, "{a:.16e},{b:.16e},{c:.16e}")?;
        }
        Ok(())
    })?)
}

fn cmd_characteristics(sc: &Scenario, out: &mut Outputs) -> Result<Summary, CliError> {
    let p: WithinHostParams = sc.whp;
    if let Some(a) = sc
        .entry_fractions
        .iter()
        .find(|a| !(**a >= 0.0 && **a < 1.0))
    {
        return Err(invalid(format!(
            "sweep.entry_fractions entry {a} outside [0, 1)"
        )));
    }
    let beta = p.oscillation_frequency().map_err(num)?;
    let y0 = p.antibody_threshold();
    let mut y_top: f64 = y0;
    let mut curves = Vec::new();
    for &alpha in &sc.entry_fractions {
        let window = permanence(&p, alpha * y0).map_err(num)?;
        let rows: Vec<[f64; 3]> = (0..CURVE_POINTS)
            .map(|k| {
                let tau = window.tau1 * k as f64 / (CURVE_POINTS - 1) as f64;
                let (z, y) = if k == 0 {
                    (p.z0, alpha * y0)
                } else {
                    flow(&p, beta, p.z0, alpha * y0, tau)
                };
                [tau, z, y]
            })
            .collect();
        y_top = rows.iter().fold(y_top, |m, r| m.max(r[2]));
        write_curve(
            out,
            &format!("characteristic_alpha_{alpha:.4}.csv"),
            "tau,z,y",
            &rows,
        )?;
        curves.push(json!({ "alpha": alpha, "tau1": window.tau1, "y_plus": window.y_plus }));
    }
    let ys: Vec<f64> = (0..CURVE_POINTS)
        .map(|k| y_top * k as f64 / (CURVE_POINTS - 1) as f64)
        .collect();
    let z_null: Vec<[f64; 3]> = ys.iter().map(|&y| [0.0, p.a2 / p.a1 * y, y]).collect();
    let z_top = ys.last().copied().unwrap_or(0.0) * p.a3 / p.a4;
    let y_null: Vec<[f64; 3]> = (0..CURVE_POINTS)
        .map(|k| {
            let z = z_top * k as f64 / (CURVE_POINTS - 1) as f64;
            [0.0, z, p.a4 / p.a3 * z]
        })
        .collect();
    write_curve(out, "nullcline_z.csv", "tau,z,y", &z_null)?;
    write_curve(out, "nullcline_y.csv", "tau,z,y", &y_null)?;
    let mut s = Summary::new();
    s.insert("curves".into(), json!(curves));
    Ok(s)
}

fn cmd_sample_params(
    sc: &Scenario,
    out: &mut Outputs,
    n: usize,
    seed: u64,
) -> Result<Summary, CliError> {
    let range = (sc.tau1_min, sc.tau1_max);
    if !(range.0 < range.1) {
        return Err(invalid("sweep.tau1_min must be below sweep.tau1_max"));
    }
    let rows = sample_admissible(&sc.whp, n, seed, range, sc.alpha).map_err(num)?;
    out.write("sample_params.csv", |w| {
        use std::io::Write;
        writeln!(w, "a1,a2,a3,a4,tau1")?;
        for (q, win) in &rows {
            writeln!(
                w,
                "{:.16e},{:.16e},{:.16e},{:.16e},{:.16e}",
                q.a1, q.a2, q.a3, q.a4, win.tau1
            )?;
        }
        Ok(())
    })?;
    let mut s = Summary::new();
    s.insert("rows".into(), json!(rows.len()));
    Ok(s)
}

fn cmd_simulate_uhr(sc: &Scenario, out: &mut Outputs) -> Result<Summary, CliError> {
    let (tau1, tau2) = uhr_windows(sc)?;
    let series = simulate(&uhr_scenario(sc, tau1, tau2, sc.uhr_t_end)).map_err(num)?;
    out.write("uhr_series.csv", |w| series.write_csv(w))?;
    let last = series.last();
    let mut s = Summary::new();
    s.insert("tau1".into(), json!(tau1));
    s.insert("tau2".into(), json!(tau2));
    s.insert(
        "final".into(),
        json!({ "E": last.e, "Ev": last.ev, "Iv": last.iv, "I_total": last.i_total }),
    );
    Ok(s)
}

fn full_run(
    sc: &Scenario,
    g: &immunovec::reproduction::EntryDistribution,
    snapshots: &[f64],
) -> Result<immunovec::pde::FullRun, CliError> {
    let grid = build_grid(&sc.whp, sc.margin, sc.nz, sc.ny).map_err(num)?;
    let mut solver = PdeSolver::new(&sc.whp, &sc.epi, g, grid, sc.cfl).map_err(num)?;
    let mut init = history_state(
        &sc.whp,
        &sc.epi,
        g,
        &grid,
        &QuadratureSpec::gauss_legendre(400),
        sc.e0,
    )
    .map_err(num)?;
    init.ev = sc.ev0;
    init.iv = sc.iv0;
    let output = RunOutput {
        record_every: sc.record_every,
        snapshot_times: snapshots.to_vec(),
    };
    simulate_full(&mut solver, init, sc.full_t_end, &output).map_err(num)
}

fn cmd_simulate_full(sc: &Scenario, out: &mut Outputs) -> Result<Summary, CliError> {
    let g = sc.entry().map_err(invalid)?;
    let run = full_run(sc, &g, &sc.snapshots)?;
    out.write("full_series.csv", |w| run.write_csv(w))?;
    for snap in &run.snapshots {
        out.write(&format!("field_I_t{:.3}.csv", snap.t), |w| snap.write_i(w))?;
        out.write(&format!("field_R_t{:.3}.csv", snap.t), |w| snap.write_r(w))?;
    }
    let last = run.records.last().expect("records start with t = 0");
    let mut s = Summary::new();
    s.insert("dt".into(), json!(run.dt));
    s.insert("steps".into(), json!(run.steps));
    s.insert(
        "max_balance_residual".into(),
        json!(run.max_balance_residual),
    );
    s.insert("final_drift".into(), json!(last.drift));
    Ok(s)
}
