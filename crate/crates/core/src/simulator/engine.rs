//! Euler–Maruyama for the population, per agent or on the stacked state.

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;

use super::noise::{AgentStream, NoiseBank};
use crate::error::{Error, Result};
use crate::linalg_ode::{TimeGrid, Trajectory, BLOW_UP};
use crate::model::{AugmentedModel, Coefficients, ModelParams};
use crate::riccati::{FeedbackLaw, LinearLaw, OracleLaw};

/// Largest number of stored state scalars (`N · paths · nodes · n`).
pub const STORAGE_LIMIT: usize = 1 << 28;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct SimOptions {
    /// Keep every agent's state and control at every node.
    pub store: bool,
    /// Skip cost accumulation; `agent_costs` is then empty.
    pub skip_costs: bool,
}

/// Everything recorded along one path.
#[derive(Debug, Clone, PartialEq)]
pub struct PathRecord {
    /// State average, `[node][coord]`.
    pub average: Vec<f64>,
    /// State of agent 0, `[node][coord]`.
    pub first_agent: Vec<f64>,
    /// `J_i` for each agent.
    pub agent_costs: Vec<f64>,
    /// `[node][agent][coord]`, present when storage was requested.
    pub states: Option<Vec<f64>>,
    /// `[node][agent][control]`, present when storage was requested.
    pub controls: Option<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimResult {
    pub grid: TimeGrid,
    pub population: usize,
    pub state_dim: usize,
    pub control_dim: usize,
    pub seed: u64,
    pub paths: Vec<PathRecord>,
}

/// Monte Carlo estimate of the social cost and of each agent's cost.
#[derive(Debug, Clone, PartialEq)]
pub struct CostSummary {
    pub social: f64,
    pub social_se: f64,
    pub per_agent: Vec<f64>,
    pub per_agent_se: Vec<f64>,
}

/// Sample mean and standard error of the mean, summed in index order.
pub fn mean_and_se(values: &[f64]) -> (f64, f64) {
    let count = values.len() as f64;
    if values.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let mean = values.iter().sum::<f64>() / count;
    if values.len() < 2 {
        return (mean, f64::NAN);
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (count - 1.0);
    (mean, (var / count).sqrt())
}

impl SimResult {
    pub fn num_paths(&self) -> usize {
        self.paths.len()
    }

    pub fn average_at(&self, path: usize, node: usize) -> &[f64] {
        let n = self.state_dim;
        &self.paths[path].average[node * n..(node + 1) * n]
    }

    pub fn first_agent_at(&self, path: usize, node: usize) -> &[f64] {
        let n = self.state_dim;
        &self.paths[path].first_agent[node * n..(node + 1) * n]
    }

    pub fn average(&self, path: usize) -> Trajectory<DVector<f64>> {
        Trajectory::from_fn(self.grid, |k| DVector::from_column_slice(self.average_at(path, k)))
    }

    pub fn has_trajectories(&self) -> bool {
        self.paths.iter().all(|p| p.states.is_some() && p.controls.is_some())
    }

    pub fn state(&self, path: usize, node: usize, agent: usize) -> Option<&[f64]> {
        let n = self.state_dim;
        let at = (node * self.population + agent) * n;
        self.paths[path].states.as_ref().map(|s| &s[at..at + n])
    }

    pub fn control(&self, path: usize, node: usize, agent: usize) -> Option<&[f64]> {
        let m = self.control_dim;
        let at = (node * self.population + agent) * m;
        self.paths[path].controls.as_ref().map(|s| &s[at..at + m])
    }

    pub fn social_costs(&self) -> Vec<f64> {
        self.paths.iter().map(|p| p.agent_costs.iter().sum()).collect()
    }

    /// Cost estimates from the costs accumulated during simulation.
    pub fn cost_summary(&self) -> CostSummary {
        let (social, social_se) = mean_and_se(&self.social_costs());
        let (per_agent, per_agent_se) = (0..self.population)
            .map(|i| mean_and_se(&self.paths.iter().map(|p| p.agent_costs[i]).collect::<Vec<_>>()))
            .unzip();
        CostSummary {
            social,
            social_se,
            per_agent,
            per_agent_se,
        }
    }
}

/// Coefficients per node, or a single entry when time-invariant.
struct CoefficientTable(Vec<Coefficients>);

impl CoefficientTable {
    fn new(params: &ModelParams) -> Self {
        if params.is_time_invariant() {
            Self(vec![params.coefficients_at_node(0)])
        } else {
            Self((0..params.grid.len()).map(|k| params.coefficients_at_node(k)).collect())
        }
    }

    fn at(&self, k: usize) -> &Coefficients {
        if self.0.len() == 1 {
            &self.0[0]
        } else {
            &self.0[k]
        }
    }
}

/// `out += scale · m · x` for a column-major `m`.
fn mat_vec_acc(out: &mut [f64], m: &DMatrix<f64>, x: &[f64], scale: f64) {
    let rows = m.nrows();
    for (c, xc) in x.iter().enumerate() {
        let col = &m.as_slice()[c * rows..(c + 1) * rows];
        let f = scale * xc;
        for (o, v) in out.iter_mut().zip(col) {
            *o += v * f;
        }
    }
}

/// Scratch space for cost integrands.
struct CostScratch {
    error: Vec<f64>,
    product: Vec<f64>,
}

impl CostScratch {
    fn new(dim: usize) -> Self {
        Self {
            error: vec![0.0; dim],
            product: vec![0.0; dim],
        }
    }

    fn quadratic_form(&mut self, m: &DMatrix<f64>, x: &[f64]) -> f64 {
        let out = &mut self.product[..m.nrows()];
        out.fill(0.0);
        mat_vec_acc(out, m, x, 1.0);
        out.iter().zip(x).map(|(a, b)| a * b).sum()
    }

    /// `‖x − Γx̄ − η‖²_Q + ‖u‖²_R`
    fn running(&mut self, co: &Coefficients, x: &[f64], xbar: &[f64], u: &[f64]) -> f64 {
        let mut e = std::mem::take(&mut self.error);
        e.clear();
        e.extend(x.iter().zip(co.tracking_offset.iter()).map(|(a, b)| a - b));
        mat_vec_acc(&mut e, &co.tracking_gain, xbar, -1.0);
        let value = self.quadratic_form(&co.state_weight, &e) + self.quadratic_form(&co.control_weight, u);
        self.error = e;
        value
    }

    /// `‖x − Γ̄x̄ − η̄‖²_G`
    fn terminal(&mut self, params: &ModelParams, x: &[f64], xbar: &[f64]) -> f64 {
        let mut e = std::mem::take(&mut self.error);
        e.clear();
        e.extend(x.iter().zip(params.terminal_offset.iter()).map(|(a, b)| a - b));
        mat_vec_acc(&mut e, &params.terminal_tracking_gain, xbar, -1.0);
        let value = self.quadratic_form(&params.terminal_weight, &e);
        self.error = e;
        value
    }
}

fn trapezoid_weight(grid: &TimeGrid, k: usize) -> f64 {
    if k == 0 || k == grid.steps() {
        0.5 * grid.dt()
    } else {
        grid.dt()
    }
}

/// Per-agent costs of one path from states `[node][agent][coord]`, controls
/// `[node][agent][control]` and averages `[node][coord]`.
fn accumulate_costs(
    params: &ModelParams,
    table: &CoefficientTable,
    population: usize,
    states: &[f64],
    controls: &[f64],
    average: &[f64],
) -> Vec<f64> {
    let n = params.state_dim;
    let m = params.control_dim;
    let grid = params.grid;
    let mut scratch = CostScratch::new(n.max(m));
    let mut costs = vec![0.0; population];
    for k in 0..grid.len() {
        let x = &states[k * population * n..(k + 1) * population * n];
        let u = &controls[k * population * m..(k + 1) * population * m];
        let xbar = &average[k * n..(k + 1) * n];
        let w = trapezoid_weight(&grid, k);
        let co = table.at(k);
        for (i, cost) in costs.iter_mut().enumerate() {
            *cost += w * scratch.running(co, &x[i * n..(i + 1) * n], xbar, &u[i * m..(i + 1) * m]);
        }
        if k == grid.steps() {
            for (i, cost) in costs.iter_mut().enumerate() {
                *cost += scratch.terminal(params, &x[i * n..(i + 1) * n], xbar);
            }
        }
    }
    costs.iter().map(|c| 0.5 * c).collect()
}

/// Arithmetic mean over agents, summed in agent order.
fn population_mean(x: &[f64], population: usize, n: usize) -> Vec<f64> {
    let mut mean = vec![0.0; n];
    for i in 0..population {
        for (c, v) in mean.iter_mut().enumerate() {
            *v += x[i * n + c];
        }
    }
    let scale = population as f64;
    mean.iter_mut().for_each(|v| *v /= scale);
    mean
}

fn population_average(states: &[f64], population: usize, n: usize, nodes: usize) -> Vec<f64> {
    (0..nodes)
        .flat_map(|k| population_mean(&states[k * population * n..(k + 1) * population * n], population, n))
        .collect()
}

fn check_storage(options: SimOptions, population: usize, paths: usize, grid: &TimeGrid, n: usize) -> Result<()> {
    if options.store {
        let scalars = population
            .saturating_mul(paths)
            .saturating_mul(grid.len())
            .saturating_mul(n);
        if scalars > STORAGE_LIMIT {
            return Err(Error::StorageLimit(scalars));
        }
    }
    Ok(())
}

fn check_state(x: &[f64], node: usize, grid: &TimeGrid) -> Result<()> {
    if x.iter().all(|v| v.is_finite() && v.abs() <= BLOW_UP) {
        Ok(())
    } else {
        Err(Error::NonFinite {
            node,
            time: grid.node(node),
        })
    }
}

/// State and control history of one path, `[node][agent][·]`.
struct PathHistory {
    states: Vec<f64>,
    controls: Vec<f64>,
    average: Vec<f64>,
}

/// Runs `paths` independent paths in parallel and assembles them in path
/// order.
fn run_paths(
    params: &ModelParams,
    population: usize,
    noise: NoiseBank,
    paths: usize,
    options: SimOptions,
    step_path: impl Fn(u64, &CoefficientTable) -> Result<PathHistory> + Sync,
) -> Result<SimResult> {
    if population == 0 {
        return Err(Error::InvalidN(population));
    }
    let grid = params.grid;
    check_storage(options, population, paths, &grid, params.state_dim)?;
    let table = CoefficientTable::new(params);
    let n = params.state_dim;
    let m = params.control_dim;
    let records = (0..paths)
        .into_par_iter()
        .map(|path| {
            let history = step_path(path as u64, &table)?;
            let agent_costs = if options.skip_costs {
                Vec::new()
            } else {
                accumulate_costs(params, &table, population, &history.states, &history.controls, &history.average)
            };
            let block = population * n;
            let first_agent = (0..grid.len())
                .flat_map(|k| history.states[k * block..k * block + n].iter().copied())
                .collect();
            Ok(PathRecord {
                average: history.average,
                first_agent,
                agent_costs,
                states: options.store.then_some(history.states),
                controls: options.store.then_some(history.controls),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(SimResult {
        grid,
        population,
        state_dim: n,
        control_dim: m,
        seed: noise.seed(),
        paths: records,
    })
}

/// Decentralized closed loop `u_i = Θ₁x_i + Θ₂`, each agent evolved by
/// ```text
/// x_i ← x_i + (Ax_i + Bu_i + Fx̄)Δt + (Cx_i + Du_i + F~x̄)ΔW_i
/// ```
/// with `x̄` the same-step population average.
pub fn simulate_decentralized(
    params: &ModelParams,
    law: &FeedbackLaw,
    population: usize,
    noise: NoiseBank,
    paths: usize,
    options: SimOptions,
) -> Result<SimResult> {
    law.theta1.ensure_grid(&params.grid)?;
    law.theta2.ensure_grid(&params.grid)?;
    run_paths(params, population, noise, paths, options, |path, table| {
        let controls_at = |k: usize, x: &[f64], out: &mut [f64]| {
            let theta2 = law.theta2.at(k);
            out.copy_from_slice(theta2.as_slice());
            mat_vec_acc(out, law.theta1.at(k), x, 1.0);
        };
        step_per_agent(params, table, population, noise, path, controls_at)
    })
}

fn step_per_agent(
    params: &ModelParams,
    table: &CoefficientTable,
    population: usize,
    noise: NoiseBank,
    path: u64,
    control_law: impl Fn(usize, &[f64], &mut [f64]),
) -> Result<PathHistory> {
    let grid = params.grid;
    let n = params.state_dim;
    let m = params.control_dim;
    let nodes = grid.len();
    let sqrt_dt = grid.dt().sqrt();
    let dt = grid.dt();
    let mut streams: Vec<AgentStream> = (0..population).map(|i| noise.agent_stream(path, i as u64, 0)).collect();

    let mut states = vec![0.0; nodes * population * n];
    let mut controls = vec![0.0; nodes * population * m];
    let mut average = vec![0.0; nodes * n];
    for i in 0..population {
        states[i * n..(i + 1) * n].copy_from_slice(params.initial_state.as_slice());
    }

    let mut mean_drift = vec![0.0; n];
    let mut mean_noise = vec![0.0; n];
    let mut drift = vec![0.0; n];
    let mut diffusion = vec![0.0; n];
    for k in 0..nodes {
        let block = population * n;
        let (done, rest) = states.split_at_mut((k + 1) * block);
        let x = &done[k * block..];
        let xbar = population_mean(x, population, n);
        average[k * n..(k + 1) * n].copy_from_slice(&xbar);
        let u_all = &mut controls[k * population * m..(k + 1) * population * m];
        for i in 0..population {
            control_law(k, &x[i * n..(i + 1) * n], &mut u_all[i * m..(i + 1) * m]);
        }
        if k == grid.steps() {
            break;
        }
        let co = table.at(k);
        mean_drift.fill(0.0);
        mat_vec_acc(&mut mean_drift, &co.mean_drift, &xbar, 1.0);
        mean_noise.fill(0.0);
        mat_vec_acc(&mut mean_noise, &co.mean_diffusion, &xbar, 1.0);
        let next = &mut rest[..block];
        for i in 0..population {
            let xi = &x[i * n..(i + 1) * n];
            let ui = &u_all[i * m..(i + 1) * m];
            drift.copy_from_slice(&mean_drift);
            mat_vec_acc(&mut drift, &co.state_drift, xi, 1.0);
            mat_vec_acc(&mut drift, &co.control_drift, ui, 1.0);
            diffusion.copy_from_slice(&mean_noise);
            mat_vec_acc(&mut diffusion, &co.state_diffusion, xi, 1.0);
            mat_vec_acc(&mut diffusion, &co.control_diffusion, ui, 1.0);
            let dw = sqrt_dt * streams[i].next_normal();
            for c in 0..n {
                next[i * n + c] = xi[c] + drift[c] * dt + diffusion[c] * dw;
            }
        }
        check_state(next, k + 1, &grid)?;
    }
    Ok(PathHistory {
        states,
        controls,
        average,
    })
}

/// Euler–Maruyama of the stacked system under `u = gain·x + offset`:
/// ```text
/// x ← x + (𝐀x + 𝐁u)Δt + Σ_i (𝐂_i x + 𝐃_i u)ΔW_i
/// ```
/// Agent `i` draws the same increments as in [`simulate_decentralized`].
pub fn simulate_stacked(
    model: &AugmentedModel,
    law: &LinearLaw,
    noise: NoiseBank,
    paths: usize,
    options: SimOptions,
) -> Result<SimResult> {
    let params = model.params();
    law.gain.ensure_grid(&params.grid)?;
    law.offset.ensure_grid(&params.grid)?;
    let population = model.population();
    run_paths(params, population, noise, paths, options, |path, _| {
        step_stacked(model, law, noise, path)
    })
}

pub fn simulate_centralized(
    model: &AugmentedModel,
    oracle: &OracleLaw,
    noise: NoiseBank,
    paths: usize,
    options: SimOptions,
) -> Result<SimResult> {
    if oracle.population != model.population() {
        return Err(Error::Dimension(format!(
            "oracle solved for N = {} but model has N = {}",
            oracle.population,
            model.population()
        )));
    }
    simulate_stacked(model, &oracle.law, noise, paths, options)
}

fn step_stacked(model: &AugmentedModel, law: &LinearLaw, noise: NoiseBank, path: u64) -> Result<PathHistory> {
    let params = model.params();
    let grid = params.grid;
    let population = model.population();
    let n = params.state_dim;
    let m = params.control_dim;
    let nodes = grid.len();
    let dt = grid.dt();
    let sqrt_dt = dt.sqrt();
    let mut streams: Vec<AgentStream> = (0..population).map(|i| noise.agent_stream(path, i as u64, 0)).collect();

    let mut states = Vec::with_capacity(nodes * population * n);
    let mut controls = Vec::with_capacity(nodes * population * m);
    let mut average = Vec::with_capacity(nodes * n);
    let mut x = model.at_node(0).initial_state.clone();
    for k in 0..nodes {
        let u = law.gain.at(k) * &x + law.offset.at(k);
        states.extend_from_slice(x.as_slice());
        controls.extend_from_slice(u.as_slice());
        average.extend(population_mean(x.as_slice(), population, n));
        if k == grid.steps() {
            break;
        }
        let sys = model.at_node(k);
        let mut next = &x + (&sys.drift * &x + &sys.control * &u) * dt;
        for i in 0..population {
            let (row, len) = sys.noise_rows(i);
            let loading = sys.state_noise[i].rows(row, len) * &x + sys.control_noise[i].rows(row, len) * &u;
            let dw = sqrt_dt * streams[i].next_normal();
            let mut target = next.rows_mut(row, len);
            target += loading * dw;
        }
        check_state(next.as_slice(), k + 1, &grid)?;
        x = next;
    }
    Ok(PathHistory {
        states,
        controls,
        average,
    })
}

/// Recomputes per-agent and social costs from stored trajectories by
/// trapezoid quadrature.
pub fn social_cost(result: &SimResult, params: &ModelParams) -> Result<CostSummary> {
    if !result.has_trajectories() {
        return Err(Error::MissingTrajectories);
    }
    result.grid.eq(&params.grid).then_some(()).ok_or(Error::GridMismatch)?;
    let table = CoefficientTable::new(params);
    let population = result.population;
    let n = result.state_dim;
    let per_path: Vec<Vec<f64>> = result
        .paths
        .iter()
        .map(|p| {
            let states = p.states.as_ref().expect("checked above");
            let controls = p.controls.as_ref().expect("checked above");
            let average = population_average(states, population, n, result.grid.len());
            accumulate_costs(params, &table, population, states, controls, &average)
        })
        .collect();
    let socials: Vec<f64> = per_path.iter().map(|c| c.iter().sum()).collect();
    let (social, social_se) = mean_and_se(&socials);
    let (per_agent, per_agent_se) = (0..population)
        .map(|i| mean_and_se(&per_path.iter().map(|c| c[i]).collect::<Vec<_>>()))
        .unzip();
    Ok(CostSummary {
        social,
        social_se,
        per_agent,
        per_agent_se,
    })
}
