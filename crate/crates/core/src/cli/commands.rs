use std::fs;
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use serde_json::{json, Value};

use super::artifacts::{fmt_float, law_to_json, pretty_json, read_law, sha256_hex, Csv, RunDir, LAW_FILE};
use super::{Command, EXIT_INVALID, EXIT_OK};
use crate::analysis::{convergence_study, fit_log_log, gap_study, ConvergenceTable, GapStudy};
use crate::cc_solver::{solve_cc, CcDiagnostics};
use crate::convexity::{assess_with, default_delta_g, default_delta_q, ConvexityVerdict};
use crate::error::{Error, Result, StageExt};
use crate::linalg_ode::Trajectory;
use crate::model::{parse_config, parse_matrix, Coef, ModelParams, DEMO_CONFIG};
use crate::riccati::{FeedbackLaw, MeanFields};
use crate::simulator::{simulate_decentralized, NoiseBank, SimOptions, SimResult, STORAGE_LIMIT};

pub const REPRO_SEED: u64 = 1;
/// Populations of the convergence study in `repro-sec7`.
const REPRO_POPULATIONS: [usize; 5] = [50, 100, 200, 400, 800];
const REPRO_TRAJECTORY_N: usize = 1000;
/// Accepted range for the fitted log-log slope of the convergence study.
const SLOPE_RANGE: (f64, f64) = (-1.25, -0.75);
/// Standard errors of slack in the gap verdicts.
const GAP_SLACK_SE: f64 = 2.0;
/// Individual agent costs kept in `costs.csv`.
const COST_COLUMNS: usize = 10;
/// Largest number of state scalars written to `trajectories.csv`.
const TRAJECTORY_CSV_LIMIT: usize = 1 << 22;

pub fn run(command: Command) -> Result<i32> {
    match command {
        Command::Validate { config } => validate(&config),
        Command::Convexity { config, dq, dg } => convexity(&config, dq.as_deref(), dg.as_deref()),
        Command::Solve { config, out } => solve(&config, &out),
        Command::Simulate {
            config,
            law,
            population,
            paths,
            seed,
            out,
            thin,
        } => simulate(&config, &law, population, paths, seed, &out, thin),
        Command::Converge {
            config,
            law,
            populations,
            reps,
            seed,
            out,
        } => converge(&config, &law, &populations, reps, seed, &out),
        Command::Gap {
            config,
            populations,
            paths,
            seed,
            out,
        } => gap(&config, &populations, paths, seed, &out),
        Command::ReproSec7 { out, seed, reps } => repro(&out, seed, reps),
    }
}

struct Loaded {
    params: ModelParams,
    bytes: Vec<u8>,
}

/// Parses, symmetrizes `Q`, `R`, `G` (warning on stderr) and validates.
fn load_bytes(bytes: Vec<u8>) -> Result<Loaded> {
    let text = std::str::from_utf8(&bytes).map_err(|e| Error::Parse(e.to_string()).at("config"))?;
    let mut params = parse_config(text).stage("config")?;
    for warning in params.repair_symmetry() {
        eprintln!("warning: {warning}");
    }
    params.ensure_valid().stage("validate")?;
    Ok(Loaded { params, bytes })
}

fn load(path: &Path) -> Result<Loaded> {
    load_bytes(fs::read(path).stage("config")?)
}

fn validate(path: &Path) -> Result<i32> {
    let text = fs::read_to_string(path).stage("config")?;
    let params = parse_config(&text).stage("config")?;
    let report = params.validate();
    if report.is_ok() {
        println!("ok");
        Ok(EXIT_OK)
    } else {
        for issue in &report.issues {
            println!("{issue}");
        }
        eprintln!("error: validate: {} issue(s)", report.issues.len());
        Ok(EXIT_INVALID)
    }
}

fn read_matrix_file(path: &Path, key: &str) -> Result<DMatrix<f64>> {
    let text = fs::read_to_string(path).stage("convexity")?;
    let value: Value = serde_json::from_str(&text)
        .map_err(|e| Error::Parse(format!("{key}: line {}, column {}: {e}", e.line(), e.column())).at("convexity"))?;
    parse_matrix(&value, key).stage("convexity")
}

fn verdict_json(v: &ConvexityVerdict) -> Value {
    json!({
        "criterion": v.criterion.as_str(),
        "status": v.status.as_str(),
        "witness": v.witness,
        "failure": v.failure,
    })
}

fn convexity(path: &Path, dq: Option<&Path>, dg: Option<&Path>) -> Result<i32> {
    let Loaded { params, .. } = load(path)?;
    let delta_q = match dq {
        Some(file) => Coef::Constant(read_matrix_file(file, "dq")?),
        None => default_delta_q(&params),
    };
    let delta_g = match dg {
        Some(file) => read_matrix_file(file, "dg")?,
        None => default_delta_g(&params),
    };
    let n = params.state_dim;
    if delta_g.shape() != (n, n) {
        return Err(Error::Dimension(format!("dG must be {n}x{n}")).at("convexity"));
    }
    let verdicts = assess_with(&params, &delta_q, &delta_g).stage("convexity")?;
    let best = verdicts.iter().map(|v| v.status).max().expect("at least one criterion");
    let report = json!({
        "verdicts": verdicts.iter().map(verdict_json).collect::<Vec<_>>(),
        "status": best.as_str(),
    });
    print!("{}", pretty_json(&report));
    Ok(EXIT_OK)
}

fn indexed(prefix: &str, n: usize) -> impl Iterator<Item = String> + '_ {
    (1..=n).map(move |i| format!("{prefix}_{i}"))
}

fn mean_fields_csv(params: &ModelParams, fields: &MeanFields, law: &FeedbackLaw) -> Csv {
    let (n, m) = (params.state_dim, params.control_dim);
    let mut header = vec!["t".to_string()];
    header.extend(indexed("xhat", n));
    header.extend(indexed("yhat1", n));
    header.extend(indexed("yhat2", n));
    header.extend(indexed("betahat1", n));
    header.extend(indexed("phi", n));
    // Column-major, matching vec(Θ₁).
    for c in 1..=n {
        for r in 1..=m {
            header.push(format!("theta1_{r}_{c}"));
        }
    }
    header.extend(indexed("theta2", m));
    let mut csv = Csv::new(&header);
    for k in 0..params.grid.len() {
        let values = std::iter::once(params.grid.node(k))
            .chain(fields.state.at(k).iter().copied())
            .chain(fields.adjoint.at(k).iter().copied())
            .chain(fields.mean_adjoint.at(k).iter().copied())
            .chain(fields.adjoint_diffusion.at(k).iter().copied())
            .chain(law.phi.at(k).iter().copied())
            .chain(law.theta1.at(k).iter().copied())
            .chain(law.theta2.at(k).iter().copied());
        csv.numeric_row(&[], values);
    }
    csv
}

fn diagnostics_json(d: &CcDiagnostics) -> Value {
    json!({
        "regularity_margin": d.regularity_margin,
        "riccati_residual": d.riccati_residual,
        "k_residual": d.k_residual,
        "condition_determinant": d.condition_37.determinant,
        "condition_holds": d.condition_37.holds,
        "fluctuation_mean": d.fluctuation_mean,
        "phi_gap": d.phi_gap,
        "terminal_gap": d.terminal_gap,
        "warnings": d.warnings,
    })
}

struct Solved {
    law: FeedbackLaw,
    mean_state: Trajectory<DVector<f64>>,
}

/// Solves and writes `law.json`, `mean_fields.csv` and `diagnostics.json`.
fn solve_into(run: &mut RunDir, params: &ModelParams) -> Result<Solved> {
    let (solution, law) = solve_cc(params)?;
    for warning in &solution.diagnostics.warnings {
        eprintln!("warning: {warning}");
    }
    let fields = solution.fields();
    let law_bytes = pretty_json(&law_to_json(&law, &fields.state)).into_bytes();
    let law_hash = sha256_hex(&law_bytes);
    run.write(LAW_FILE, &law_bytes)?;
    run.write_csv("mean_fields.csv", mean_fields_csv(params, fields, &law))?;
    run.write_json("diagnostics.json", &diagnostics_json(&solution.diagnostics))?;
    run.set("law_hash", json!(law_hash));
    run.set("regularity_margin", json!(solution.diagnostics.regularity_margin));
    Ok(Solved {
        law,
        mean_state: fields.state.clone(),
    })
}

fn solve(path: &Path, out: &Path) -> Result<i32> {
    let Loaded { params, bytes } = load(path)?;
    let mut run = RunDir::create(out, "solve").stage("output")?;
    run.store_config(&bytes).stage("output")?;
    run.set_grid(&params.grid);
    solve_into(&mut run, &params)?;
    run.finish().stage("output")?;
    Ok(EXIT_OK)
}

/// Loads a stored law and checks it was solved on the configuration's grid.
fn load_law(dir: &Path, params: &ModelParams) -> Result<super::artifacts::StoredLaw> {
    let stored = read_law(dir).stage("law")?;
    stored.law.theta1.ensure_grid(&params.grid).stage("law")?;
    if stored.law.theta1.at(0).shape() != (params.control_dim, params.state_dim) {
        return Err(Error::Dimension("law does not match the configuration's dimensions".into()).at("law"));
    }
    Ok(stored)
}

fn trajectories_csv(result: &SimResult, thin: usize) -> Csv {
    let mut header = vec!["path".to_string(), "t".to_string(), "agent".to_string()];
    header.extend(indexed("x", result.state_dim));
    let mut csv = Csv::new(&header);
    for path in 0..result.num_paths() {
        for k in (0..result.grid.len()).step_by(thin) {
            let t = fmt_float(result.grid.node(k));
            for agent in 0..result.population {
                let x = result.state(path, k, agent).expect("states stored");
                csv.numeric_row(&[path.to_string(), t.clone(), agent.to_string()], x.iter().copied());
            }
        }
    }
    csv
}

fn average_csv(result: &SimResult) -> Csv {
    let mut header = vec!["path".to_string(), "t".to_string()];
    header.extend(indexed("xavg", result.state_dim));
    let mut csv = Csv::new(&header);
    for path in 0..result.num_paths() {
        for k in 0..result.grid.len() {
            csv.numeric_row(&[path.to_string(), fmt_float(result.grid.node(k))], result.average_at(path, k).iter().copied());
        }
    }
    csv
}

fn costs_csv(result: &SimResult) -> Csv {
    let kept = result.population.min(COST_COLUMNS);
    let mut header = vec!["path".to_string(), "J_soc".to_string()];
    header.extend((1..=kept).map(|i| format!("J_{i}")));
    let mut csv = Csv::new(&header);
    for (path, record) in result.paths.iter().enumerate() {
        let social: f64 = record.agent_costs.iter().sum();
        csv.numeric_row(&[path.to_string()], std::iter::once(social).chain(record.agent_costs[..kept].iter().copied()));
    }
    csv
}

fn simulate(config: &Path, law_dir: &Path, population: usize, paths: usize, seed: u64, out: &Path, thin: usize) -> Result<i32> {
    if thin == 0 {
        return Err(Error::Invalid("--thin must be positive".into()).at("simulate"));
    }
    if population == 0 {
        return Err(Error::InvalidN(0).at("simulate"));
    }
    let Loaded { params, bytes } = load(config)?;
    let stored = load_law(law_dir, &params)?;
    let nodes = params.grid.len();
    let stored_scalars = population.saturating_mul(paths).saturating_mul(nodes).saturating_mul(params.state_dim);
    let written = population
        .saturating_mul(paths)
        .saturating_mul(nodes.div_ceil(thin))
        .saturating_mul(params.state_dim);
    let keep = stored_scalars <= STORAGE_LIMIT && written <= TRAJECTORY_CSV_LIMIT;

    let mut run = RunDir::create(out, "simulate").stage("output")?;
    run.store_config(&bytes).stage("output")?;
    let options = SimOptions {
        store: keep,
        skip_costs: false,
    };
    let result =
        simulate_decentralized(&params, &stored.law, population, NoiseBank::new(seed), paths, options).stage("simulate")?;
    if keep {
        run.write_csv("trajectories.csv", trajectories_csv(&result, thin)).stage("output")?;
    } else {
        eprintln!("warning: {written} trajectory values exceed the output limit; trajectories.csv not written");
    }
    run.write_csv("average.csv", average_csv(&result)).stage("output")?;
    run.write_csv("costs.csv", costs_csv(&result)).stage("output")?;
    let summary = result.cost_summary();
    run.set("law_hash", json!(stored.hash));
    run.set("seed", json!(seed));
    run.set("N", json!(population));
    run.set("paths", json!(paths));
    run.set("dt", json!(params.grid.dt()));
    run.set("thin", json!(thin));
    run.set("trajectories_written", json!(keep));
    run.set("social_cost", json!({ "mean": summary.social, "std_error": summary.social_se }));
    run.finish().stage("output")?;
    Ok(EXIT_OK)
}

fn convergence_csv(table: &ConvergenceTable) -> Csv {
    let mut csv = Csv::new(&["N", "reps", "estimate", "std_error", "agent_estimate", "agent_std_error"]);
    for r in &table.rows {
        csv.numeric_row(
            &[r.population.to_string(), r.replications.to_string()],
            [r.estimate, r.std_error, r.agent_estimate, r.agent_std_error],
        );
    }
    csv
}

fn convergence_summary(table: &ConvergenceTable) -> Value {
    let within = table.slope.is_some_and(|s| (SLOPE_RANGE.0..=SLOPE_RANGE.1).contains(&s));
    json!({
        "slope": table.slope,
        "intercept": table.intercept,
        "verdicts": {
            "slope_in_range": within,
            "slope_range": [SLOPE_RANGE.0, SLOPE_RANGE.1],
        },
    })
}

fn check_populations(populations: &[usize]) -> Result<()> {
    match populations.iter().find(|&&n| n == 0) {
        Some(_) => Err(Error::InvalidN(0).at("arguments")),
        None => Ok(()),
    }
}

fn converge(config: &Path, law_dir: &Path, populations: &[usize], reps: usize, seed: u64, out: &Path) -> Result<i32> {
    check_populations(populations)?;
    let Loaded { params, bytes } = load(config)?;
    let stored = load_law(law_dir, &params)?;
    let mut run = RunDir::create(out, "converge").stage("output")?;
    run.store_config(&bytes).stage("output")?;
    let table =
        convergence_study(&params, &stored.law, &stored.mean_state, populations, reps, seed).stage("convergence study")?;
    run.write_csv("convergence.csv", convergence_csv(&table)).stage("output")?;
    run.write_json("summary.json", &convergence_summary(&table)).stage("output")?;
    run.set("law_hash", json!(stored.hash));
    run.set("seed", json!(seed));
    run.set("reps", json!(reps));
    run.set("N_list", json!(populations));
    run.set("dt", json!(params.grid.dt()));
    run.finish().stage("output")?;
    Ok(EXIT_OK)
}

fn gap_csv(study: &GapStudy) -> Csv {
    let mut csv = Csv::new(&[
        "N",
        "paths",
        "decentralized",
        "centralized",
        "gap",
        "std_error",
        "exact_decentralized",
        "exact_centralized",
    ]);
    for r in &study.rows {
        csv.numeric_row(
            &[r.population.to_string(), r.paths.to_string()],
            [r.decentralized, r.centralized, r.gap, r.std_error, r.exact_decentralized, r.exact_centralized],
        );
    }
    csv
}

fn gap(config: &Path, populations: &[usize], paths: usize, seed: u64, out: &Path) -> Result<i32> {
    check_populations(populations)?;
    let Loaded { params, bytes } = load(config)?;
    let mut run = RunDir::create(out, "gap").stage("output")?;
    run.store_config(&bytes).stage("output")?;
    let study = gap_study(&params, populations, paths, seed).stage("gap study")?;
    for warning in &study.warnings {
        eprintln!("warning: {warning}");
    }
    let xs: Vec<f64> = study.rows.iter().map(|r| r.population as f64).collect();
    let ys: Vec<f64> = study.rows.iter().map(|r| r.gap).collect();
    let fit = fit_log_log(&xs, &ys);
    let summary = json!({
        "slope": fit.map(|f| f.0),
        "intercept": fit.map(|f| f.1),
        "verdicts": {
            "oracle_dominates": study.oracle_dominates(GAP_SLACK_SE),
            "non_increasing": study.non_increasing(GAP_SLACK_SE),
            "slack_se": GAP_SLACK_SE,
        },
        "warnings": study.warnings,
    });
    run.write_csv("gap.csv", gap_csv(&study)).stage("output")?;
    run.write_json("summary.json", &summary).stage("output")?;
    run.set("seed", json!(seed));
    run.set("paths", json!(paths));
    run.set("N_list", json!(populations));
    run.set("dt", json!(params.grid.dt()));
    run.finish().stage("output")?;
    Ok(EXIT_OK)
}

fn repro(out: &Path, seed: u64, reps: usize) -> Result<i32> {
    let Loaded { params, bytes } = load_bytes(DEMO_CONFIG.as_bytes().to_vec())?;
    let mut run = RunDir::create(out, "repro-sec7").stage("output")?;
    run.store_config(&bytes).stage("output")?;
    run.set_grid(&params.grid);
    let Solved { law, mean_state } = solve_into(&mut run, &params)?;

    let options = SimOptions {
        store: false,
        skip_costs: true,
    };
    let single = simulate_decentralized(&params, &law, REPRO_TRAJECTORY_N, NoiseBank::new(seed), 1, options)
        .stage("simulate")?;
    let mut csv = Csv::new(&["t", "xhat_1", "xhat_2", "xavg_1", "xavg_2"]);
    let mut sup_distance = 0.0_f64;
    for k in 0..params.grid.len() {
        let xhat = mean_state.at(k);
        let xavg = single.average_at(0, k);
        let distance = xhat.iter().zip(xavg).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
        sup_distance = sup_distance.max(distance);
        csv.numeric_row(&[], std::iter::once(params.grid.node(k)).chain(xhat.iter().copied()).chain(xavg.iter().copied()));
    }
    run.write_csv("trajectories.csv", csv).stage("output")?;

    let table = convergence_study(&params, &law, &mean_state, &REPRO_POPULATIONS, reps, seed).stage("convergence study")?;
    run.write_csv("convergence.csv", convergence_csv(&table)).stage("output")?;
    let mut summary = convergence_summary(&table);
    summary["sup_distance"] = json!(sup_distance);
    summary["trajectory_N"] = json!(REPRO_TRAJECTORY_N);
    run.write_json("summary.json", &summary).stage("output")?;
    run.set("seed", json!(seed));
    run.set("reps", json!(reps));
    run.set("N_list", json!(REPRO_POPULATIONS));
    run.finish().stage("output")?;
    Ok(EXIT_OK)
}
