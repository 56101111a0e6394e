//! Forward strike-maturity system and its linearization.
//!
//! In `y = ln(K/S*)`, `tau = T - t*`, the observed column of generalized
//! call prices solves the column-vector system `w_tau = L_A w` with
//!
//! ```text
//! L_A w = A(y) w_yy - (A(y) + R - Q) w_y + (B - Q) w ,
//! ```
//!
//! from the payoff `max(1 - e^y, 0) e_{j*}`. Differentiating twice in `y`
//! yields an auxiliary density `v = w_yy - w_y` that solves a conservative
//! companion equation from a point mass at the origin, and a diffusion
//! perturbation `G = A_1 - A_2` drives the difference of two solutions
//! through the linearized system `(d/dtau - L_{A_1}) w = G v`.

use alloc::vec;
use alloc::vec::Vec;

use crate::grid::{SolutionField, SpaceGrid, TimeGrid};
use crate::inverse::Perturbation;
use crate::model::{ObservationSpec, RegimeModel};
use crate::stepper::{march, OperatorCoeffs, StepperParams};
use crate::{Error, Result};

/// Forward problem bundle: model, observation and grids.
pub struct ForwardProblem<'a> {
    pub model: &'a RegimeModel,
    pub obs: ObservationSpec,
    pub space: &'a SpaceGrid,
    pub time: &'a TimeGrid,
}

pub(crate) fn dupire_operator(model: &RegimeModel, grid: &SpaceGrid) -> OperatorCoeffs {
    let n = model.n();
    let m = grid.m();
    let mut op = OperatorCoeffs::zeros(n, m);
    let dy = grid.dy();
    let dy2 = dy * dy;
    for i in 0..n {
        let rq = model.rate(i) - model.dividend(i);
        for k in 0..m {
            let a = model.diffusion_coefficient(i, grid.node(k));
            let c = a + rq; // advection enters as -(a + r - q) w_y
            op.sub[i * m + k] = a / dy2 + c / (2.0 * dy);
            op.diag[i * m + k] = -2.0 * a / dy2;
            op.sup[i * m + k] = a / dy2 - c / (2.0 * dy);
        }
    }
    let b = model.generator();
    for i in 0..n {
        for j in 0..n {
            op.coupling[i * n + j] = b.entry(i, j);
        }
        op.coupling[i * n + i] -= model.dividend(i);
    }
    op
}

/// Conservative-form operator for the auxiliary density: the second and
/// first differences act on the product `A v`, which preserves discrete
/// mass when rates, dividends and coupling vanish.
fn aux_operator(model: &RegimeModel, grid: &SpaceGrid) -> OperatorCoeffs {
    let n = model.n();
    let m = grid.m();
    let mut op = OperatorCoeffs::zeros(n, m);
    let dy = grid.dy();
    let dy2 = dy * dy;
    for i in 0..n {
        let rq = model.rate(i) - model.dividend(i);
        for k in 0..m {
            let a_prev = model.diffusion_coefficient(i, grid.node(k.saturating_sub(1)));
            let a_here = model.diffusion_coefficient(i, grid.node(k));
            let a_next =
                model.diffusion_coefficient(i, grid.node((k + 1).min(m - 1)));
            op.sub[i * m + k] = a_prev * (1.0 / dy2 + 1.0 / (2.0 * dy)) + rq / (2.0 * dy);
            op.diag[i * m + k] = -2.0 * a_here / dy2;
            op.sup[i * m + k] = a_next * (1.0 / dy2 - 1.0 / (2.0 * dy)) - rq / (2.0 * dy);
        }
    }
    let b = model.generator();
    for i in 0..n {
        for j in 0..n {
            op.coupling[i * n + j] = b.entry(i, j);
        }
        op.coupling[i * n + i] -= model.dividend(i);
    }
    op
}

/// Solve the forward system; `field.at(i, k, l)` is the generalized call
/// price `C(e^{y_k}, epsilon_i)` observed in regime `obs.j_star` at
/// `tau = l * dtau`.
pub fn solve_dupire(p: &ForwardProblem) -> Result<SolutionField> {
    let n = p.model.n();
    if p.obs.j_star >= n {
        return Err(Error::InvalidParameter("observed regime out of range"));
    }
    let m = p.space.m();
    let mut init = vec![0.0; n * m];
    for k in 0..m {
        let y = p.space.node(k);
        init[p.obs.j_star * m + k] = (1.0 - libm::exp(y)).max(0.0);
    }
    let op = dupire_operator(p.model, p.space);
    march(&init, &op, p.time, &StepperParams::default(), None)
}

/// Solve the auxiliary density equation from a discrete point mass
/// (`1/dy` at the origin node, component `obs.j_star`).
pub fn solve_aux_density(
    model: &RegimeModel,
    obs: &ObservationSpec,
    grid: &SpaceGrid,
    tg: &TimeGrid,
) -> Result<SolutionField> {
    let n = model.n();
    if obs.j_star >= n {
        return Err(Error::InvalidParameter("observed regime out of range"));
    }
    let m = grid.m();
    let mut init = vec![0.0; n * m];
    init[obs.j_star * m + grid.zero_index()] = 1.0 / grid.dy();
    let op = aux_operator(model, grid);
    march(&init, &op, tg, &StepperParams::default(), None)
}

/// Solve the linearized system `(d/dtau - L_{A_1}) w = G v`, `w(., 0) = 0`.
///
/// `v` must come from the base model on the same grids.
pub fn solve_linearized(
    a1_model: &RegimeModel,
    g: &Perturbation,
    v: &SolutionField,
    grid: &SpaceGrid,
    tg: &TimeGrid,
) -> Result<SolutionField> {
    let n = a1_model.n();
    let m = grid.m();
    if g.components() != n || g.nodes() != m {
        return Err(Error::ShapeMismatch);
    }
    if v.components() != n || v.nodes() != m || v.steps() != tg.steps() {
        return Err(Error::ShapeMismatch);
    }
    let mut source = SolutionField::zeros(n, m, tg.steps());
    for l in 0..=tg.steps() {
        for i in 0..n {
            for k in 0..m {
                let s = g.value(i, k) * v.at(i, k, l);
                if s != 0.0 {
                    source.set(i, k, l, s);
                }
            }
        }
    }
    let init = vec![0.0; n * m];
    let op = dupire_operator(a1_model, grid);
    march(&init, &op, tg, &StepperParams::default(), Some(&source))
}

/// Discrete `w_yy - w_y` of one time slice, all components.
pub fn curvature_minus_slope(
    field: &SolutionField,
    grid: &SpaceGrid,
    step: usize,
) -> Vec<Vec<f64>> {
    let dy = grid.dy();
    (0..field.components())
        .map(|i| {
            let u = field.comp_slice(i, step);
            let d2 = crate::grid::second_difference(u, dy);
            let d1 = crate::grid::first_difference(u, dy);
            d2.iter().zip(&d1).map(|(a, b)| a - b).collect()
        })
        .collect()
}
