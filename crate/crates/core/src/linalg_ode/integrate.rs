//! Fixed-step classical Runge–Kutta integration on a [`TimeGrid`].

use nalgebra::{DMatrix, DVector};

use super::grid::TimeGrid;
use crate::error::{Error, Result};

/// Magnitude beyond which a state is treated as diverged.
pub const BLOW_UP: f64 = 1e12;

/// A value that can be carried through an ODE step.
pub trait OdeState: Clone {
    /// `a * self + b * other`.
    fn lin_comb(&self, a: f64, other: &Self, b: f64) -> Self;

    /// Largest absolute entry; `+inf` if any entry is non-finite.
    fn max_abs(&self) -> f64;
}

impl OdeState for f64 {
    fn lin_comb(&self, a: f64, other: &Self, b: f64) -> Self {
        a * self + b * other
    }

    fn max_abs(&self) -> f64 {
        if self.is_finite() {
            self.abs()
        } else {
            f64::INFINITY
        }
    }
}

impl OdeState for DMatrix<f64> {
    fn lin_comb(&self, a: f64, other: &Self, b: f64) -> Self {
        let mut out = self.clone();
        combine_into(out.as_mut_slice(), a, other.as_slice(), b);
        out
    }

    fn max_abs(&self) -> f64 {
        max_abs_slice(self.as_slice())
    }
}

impl OdeState for DVector<f64> {
    fn lin_comb(&self, a: f64, other: &Self, b: f64) -> Self {
        let mut out = self.clone();
        combine_into(out.as_mut_slice(), a, other.as_slice(), b);
        out
    }

    fn max_abs(&self) -> f64 {
        max_abs_slice(self.as_slice())
    }
}

impl<S: OdeState, U: OdeState> OdeState for (S, U) {
    fn lin_comb(&self, a: f64, other: &Self, b: f64) -> Self {
        (self.0.lin_comb(a, &other.0, b), self.1.lin_comb(a, &other.1, b))
    }

    fn max_abs(&self) -> f64 {
        self.0.max_abs().max(self.1.max_abs())
    }
}

fn combine_into(out: &mut [f64], a: f64, other: &[f64], b: f64) {
    assert_eq!(out.len(), other.len(), "shape mismatch in linear combination");
    for (x, y) in out.iter_mut().zip(other) {
        *x = a * *x + b * y;
    }
}

fn max_abs_slice(values: &[f64]) -> f64 {
    let mut worst = 0.0_f64;
    for v in values {
        if !v.is_finite() {
            return f64::INFINITY;
        }
        worst = worst.max(v.abs());
    }
    worst
}

/// Values sampled at every node of a grid.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory<S> {
    grid: TimeGrid,
    values: Vec<S>,
}

impl<S> Trajectory<S> {
    pub fn new(grid: TimeGrid, values: Vec<S>) -> Result<Self> {
        if values.len() != grid.len() {
            return Err(Error::Dimension(format!(
                "trajectory holds {} values for a grid of {} nodes",
                values.len(),
                grid.len()
            )));
        }
        Ok(Self { grid, values })
    }

    /// Builds a trajectory by evaluating `f` at each node index.
    pub fn from_fn(grid: TimeGrid, f: impl FnMut(usize) -> S) -> Self {
        Self {
            grid,
            values: (0..grid.len()).map(f).collect(),
        }
    }

    pub fn try_from_fn(grid: TimeGrid, mut f: impl FnMut(usize) -> Result<S>) -> Result<Self> {
        let mut values = Vec::with_capacity(grid.len());
        for k in 0..grid.len() {
            values.push(f(k)?);
        }
        Ok(Self { grid, values })
    }

    pub fn grid(&self) -> &TimeGrid {
        &self.grid
    }

    pub fn values(&self) -> &[S] {
        &self.values
    }

    pub fn at(&self, k: usize) -> &S {
        &self.values[k]
    }

    pub fn first(&self) -> &S {
        &self.values[0]
    }

    pub fn last(&self) -> &S {
        &self.values[self.values.len() - 1]
    }

    pub fn into_values(self) -> Vec<S> {
        self.values
    }

    pub fn map<U>(&self, f: impl FnMut(&S) -> U) -> Trajectory<U> {
        Trajectory {
            grid: self.grid,
            values: self.values.iter().map(f).collect(),
        }
    }

    pub fn same_grid<U>(&self, other: &Trajectory<U>) -> bool {
        self.grid == other.grid
    }

    pub fn ensure_grid(&self, grid: &TimeGrid) -> Result<()> {
        if &self.grid == grid {
            Ok(())
        } else {
            Err(Error::GridMismatch)
        }
    }
}

impl<S: OdeState> Trajectory<S> {
    /// Cubic Lagrange interpolation through the four nearest nodes.
    ///
    /// Exact at nodes; fourth-order accurate between them, which keeps RK4
    /// stage evaluations of one trajectory inside another's right-hand side
    /// at full order.
    pub fn interpolate(&self, t: f64) -> S {
        let m = self.grid.steps();
        let (k, s) = self.grid.locate(t);
        if s == 0.0 {
            return self.values[k].clone();
        }
        if s == 1.0 {
            return self.values[k + 1].clone();
        }
        if m < 3 {
            return self.values[k].lin_comb(1.0 - s, &self.values[k + 1], s);
        }
        let start = k.saturating_sub(1).min(m - 3);
        let x = (k - start) as f64 + s;
        let mut weights = [1.0_f64; 4];
        for (i, w) in weights.iter_mut().enumerate() {
            for j in 0..4 {
                if i != j {
                    *w *= (x - j as f64) / (i as f64 - j as f64);
                }
            }
        }
        let mut acc = self.values[start].lin_comb(weights[0], &self.values[start + 1], weights[1]);
        acc = acc.lin_comb(1.0, &self.values[start + 2], weights[2]);
        acc.lin_comb(1.0, &self.values[start + 3], weights[3])
    }

    /// Largest absolute entry over all nodes.
    pub fn sup_norm(&self) -> f64 {
        self.values.iter().map(OdeState::max_abs).fold(0.0, f64::max)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Direction {
    /// Boundary value at `t_0`, integrate toward `T`.
    Forward,
    /// Boundary value at `T`, integrate toward `t_0`.
    Backward,
}

/// Classical RK4 over `grid` starting from `boundary` at the anchor node.
pub fn integrate_ode<S, F>(rhs: F, boundary: S, grid: &TimeGrid, direction: Direction) -> Result<Trajectory<S>>
where
    S: OdeState,
    F: FnMut(f64, &S) -> Result<S>,
{
    integrate_ode_projected(rhs, boundary, grid, direction, |_| {})
}

/// As [`integrate_ode`], applying `project` to the state after every step
/// (used to re-symmetrize Riccati iterates).
pub fn integrate_ode_projected<S, F, P>(
    mut rhs: F,
    boundary: S,
    grid: &TimeGrid,
    direction: Direction,
    mut project: P,
) -> Result<Trajectory<S>>
where
    S: OdeState,
    F: FnMut(f64, &S) -> Result<S>,
    P: FnMut(&mut S),
{
    let m = grid.steps();
    let anchor = match direction {
        Direction::Forward => 0,
        Direction::Backward => m,
    };
    check_finite(&boundary, anchor, grid)?;

    let mut values: Vec<Option<S>> = vec![None; m + 1];
    let mut state = boundary.clone();
    values[anchor] = Some(boundary);

    for step in 0..m {
        let (from, to) = match direction {
            Direction::Forward => (step, step + 1),
            Direction::Backward => (m - step, m - step - 1),
        };
        let t0 = grid.node(from);
        let t1 = grid.node(to);
        let h = t1 - t0;
        let half = t0 + 0.5 * h;

        let k1 = rhs(t0, &state)?;
        let k2 = rhs(half, &state.lin_comb(1.0, &k1, 0.5 * h))?;
        let k3 = rhs(half, &state.lin_comb(1.0, &k2, 0.5 * h))?;
        let k4 = rhs(t1, &state.lin_comb(1.0, &k3, h))?;

        let slope = k1.lin_comb(1.0, &k2, 2.0).lin_comb(1.0, &k3, 2.0).lin_comb(1.0, &k4, 1.0);
        state = state.lin_comb(1.0, &slope, h / 6.0);
        project(&mut state);
        check_finite(&state, to, grid)?;
        values[to] = Some(state.clone());
    }

    let values = values.into_iter().map(|v| v.expect("every node visited")).collect();
    Ok(Trajectory { grid: *grid, values })
}

fn check_finite<S: OdeState>(state: &S, node: usize, grid: &TimeGrid) -> Result<()> {
    if state.max_abs() > BLOW_UP {
        Err(Error::NonFinite {
            node,
            time: grid.node(node),
        })
    } else {
        Ok(())
    }
}

/// Composite trapezoid rule for samples spaced `dt` apart.
pub fn trapezoid(values: &[f64], dt: f64) -> f64 {
    match values.len() {
        0 | 1 => 0.0,
        len => {
            let interior: f64 = values[1..len - 1].iter().sum();
            dt * (0.5 * (values[0] + values[len - 1]) + interior)
        }
    }
}

/// Composite trapezoid rule over a scalar trajectory.
pub fn quadrature(values: &Trajectory<f64>) -> Result<f64> {
    if let Some(k) = values.values().iter().position(|v| !v.is_finite()) {
        return Err(Error::NonFinite {
            node: k,
            time: values.grid().node(k),
        });
    }
    Ok(trapezoid(values.values(), values.grid().dt()))
}
