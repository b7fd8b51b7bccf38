//! Leader-side equilibrium search: directional ascent on the gateway revenue
//! with the followers' equilibrium solved as a nested sub-problem.
//!
//! At each leader iterate the followers' reaction is recomputed, a sensitivity
//! linear program produces an ascent direction over (price, sensing time,
//! detection threshold), and a backtracking line search accepts the step. The
//! same machinery runs the fixed-mode baselines by pinning one follower
//! coordinate to zero.

use nalgebra::DMatrix;
use thiserror::Error;

use crate::gne::{solve_gne, GneConfig, GneError, GneResult};
use crate::model::{
    constraints_g, constraints_z, grad_leader_constraint, grad_theta0_s0, grad_theta0_st,
    hessian_theta_k, mixed_partials_theta_k, sg_revenue, FollowerStrategy,
    JointFollowerStrategy, LeaderStrategy, ModelError, NetworkParams, TransmissionMode,
};
use crate::polysolve::{
    solve_lp, LinearConstraint, LinearProgram, LpOutcome, Relation, SolveError,
};

#[derive(Debug, Error)]
pub enum SeError {
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Gne(#[from] GneError),
    #[error(transparent)]
    Solve(#[from] SolveError),
    #[error("initial leader strategy is infeasible")]
    InfeasibleStart,
    #[error("direction subproblem failed: {0}")]
    Direction(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SeTermination {
    /// Step norm fell below `chi0` or no descent direction remains.
    Converged,
    /// A descent direction existed but backtracking exhausted the step size.
    NoDescentDirection,
    MaxSteps,
}

#[derive(Debug, Clone)]
pub struct SeConfig {
    /// Convergence tolerance on the scaled leader step, infinity norm.
    pub chi0: f64,
    /// Armijo-style acceptance coefficient, in (0, 1).
    pub rho: f64,
    /// Initial step size in scaled coordinates.
    pub beta_max: f64,
    /// Activity threshold for the lower-level constraint set.
    pub active_tol: f64,
    pub initial_s0: LeaderStrategy,
    pub gne: GneConfig,
    pub max_steps: usize,
    /// Per-coordinate freeze mask over (alpha, tau_s, eps); frozen
    /// coordinates get a zero direction component.
    pub frozen: [bool; 3],
    /// Price magnitude making the alpha axis comparable to the time axes.
    pub alpha_scale: f64,
}

impl SeConfig {
    pub fn default_for(p: &NetworkParams, initial_s0: LeaderStrategy) -> Self {
        SeConfig {
            chi0: 1e-6,
            rho: 0.5,
            beta_max: 0.1,
            active_tol: 1e-7 * p.t_slot,
            alpha_scale: initial_s0.alpha.max(1.0),
            initial_s0,
            gne: GneConfig::default_for(p),
            max_steps: 1000,
            frozen: [false; 3],
        }
    }

    /// Diagonal scaling mapping the unit direction box onto leader units.
    fn scales(&self, p: &NetworkParams) -> [f64; 3] {
        [self.alpha_scale, p.t_slot, p.eps_hi - p.eps_lo]
    }
}

/// Solution of the direction linear program.
#[derive(Debug, Clone)]
pub struct DirectionSolution {
    /// Objective value; a descent direction exists iff `d < 0`.
    pub d: f64,
    /// Leader direction in scaled coordinates, `||r||_inf <= 1`.
    pub r: [f64; 3],
    /// Follower sensitivity: directional derivative of the reaction map.
    pub nu_lp: Vec<f64>,
    /// Multiplier-like variables, nonzero only on active constraint rows.
    pub zeta: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct SeResult {
    pub s0_star: LeaderStrategy,
    pub followers_star: GneResult,
    /// Revenue at the start point and after each accepted step.
    pub revenue_trace: Vec<f64>,
    pub steps: usize,
    pub termination: SeTermination,
}

/// Full-row-rank diagnostic of the sensitivity system matrix.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MRankReport {
    pub full_row_rank: bool,
    pub min_singular_value: f64,
}

// ---------------------------------------------------------------------------
// Lower-level constraint bookkeeping
// ---------------------------------------------------------------------------

/// Values of the concatenated lower-level constraints
/// `(G1, G2, Z_1^1..Z_1^3, ..., Z_K^1..Z_K^3)`, length `2 + 3K`.
fn gtilde_values(
    s0: &LeaderStrategy,
    joint: &JointFollowerStrategy,
    p: &NetworkParams,
) -> Vec<f64> {
    let mut vals = Vec::with_capacity(2 + 3 * p.num_st());
    let g = constraints_g(joint, s0, p);
    vals.extend_from_slice(&g);
    for k in 0..p.num_st() {
        vals.extend_from_slice(&constraints_z(&joint.entries[k], s0, k, p));
    }
    vals
}

/// Gradient of constraint `i` with respect to the stacked follower strategy.
/// All of these are constant in the reduced coordinates.
fn gtilde_grad_st(i: usize, p: &NetworkParams) -> Vec<f64> {
    let kk = p.num_st();
    let mut g = vec![0.0; 2 * kk];
    match i {
        0 => (0..kk).for_each(|k| g[2 * k] = 1.0),
        1 => (0..kk).for_each(|k| g[2 * k + 1] = 1.0),
        _ => {
            let k = (i - 2) / 3;
            match (i - 2) % 3 {
                0 => g[2 * k] = -1.0,
                1 => g[2 * k + 1] = -1.0,
                _ => {
                    g[2 * k] = p.pc;
                    g[2 * k + 1] = p.supply_coeff(k);
                }
            }
        }
    }
    g
}

/// Indices of numerically active lower-level constraints. Time rows use
/// `tol` directly; the supply row is compared at its own power scale.
pub fn active_set(
    s0: &LeaderStrategy,
    joint: &JointFollowerStrategy,
    p: &NetworkParams,
    tol: f64,
) -> Vec<usize> {
    let vals = gtilde_values(s0, joint, p);
    let mut idx = Vec::new();
    for (i, v) in vals.iter().enumerate() {
        let scale = if i >= 2 && (i - 2) % 3 == 2 {
            let k = (i - 2) / 3;
            p.pc.max(p.supply_coeff(k))
        } else {
            1.0
        };
        if v.abs() <= tol * scale {
            idx.push(i);
        }
    }
    idx
}

// ---------------------------------------------------------------------------
// Direction linear program
// ---------------------------------------------------------------------------

/// Builds the sensitivity LP over the variables `(d, r, nu, zeta)`:
/// minimize `d` subject to the directional-derivative row for the revenue,
/// the leader miss-detection row, the stationarity equalities driven by the
/// potential's second derivatives, the active-constraint equalities on `nu`,
/// the inactive-constraint slack rows, and the unit box on `r`.
pub fn assemble_direction_lp(
    s0: &LeaderStrategy,
    joint: &JointFollowerStrategy,
    p: &NetworkParams,
    i0: &[usize],
    cfg: &SeConfig,
) -> Result<LinearProgram, SeError> {
    let kk = p.num_st();
    let nst = 2 * kk;
    let m = 2 + 3 * kk;
    let nv = 1 + 3 + nst + m;
    let (di, ri, nui, zi) = (0usize, 1usize, 4usize, 4 + nst);
    let scales = cfg.scales(p);

    let g0_st = grad_theta0_st(s0, p)?;
    let g0_s0 = grad_theta0_s0(s0, joint, p)?;
    let z0 = s0.miss_constraint(p)?;
    let gz0 = grad_leader_constraint(s0, p)?;
    let vals = gtilde_values(s0, joint, p);
    let active = |i: usize| i0.contains(&i);
    // The d column is kept near unit scale: huge bound shifts on a raw
    // revenue-unit variable wreck the simplex row equilibration.
    let dscale = direction_value_scale(s0, joint, p)?;

    let mut cons = Vec::new();

    let mut row_a = vec![0.0; nv];
    row_a[di] = -dscale;
    for j in 0..3 {
        row_a[ri + j] = -g0_s0[j] * scales[j];
    }
    for (x, g) in g0_st.iter().enumerate() {
        row_a[nui + x] = -g;
    }
    cons.push(LinearConstraint::new(row_a, Relation::Le, 0.0));

    let mut row_b = vec![0.0; nv];
    row_b[di] = -dscale;
    for j in 0..3 {
        row_b[ri + j] = gz0[j] * scales[j];
    }
    cons.push(LinearConstraint::new(row_b, Relation::Le, -z0));

    for k in 0..kk {
        let hess = hessian_theta_k(&joint.entries[k], s0, k, p)?;
        let mixed = mixed_partials_theta_k(&joint.entries[k], s0, k, p)?;
        for c in 0..2 {
            let x = 2 * k + c;
            let mut row = vec![0.0; nv];
            for cc in 0..2 {
                row[nui + 2 * k + cc] = -hess[c][cc];
            }
            for j in 0..3 {
                row[ri + j] = -mixed[c][j] * scales[j];
            }
            for i in 0..m {
                row[zi + i] = gtilde_grad_st(i, p)[x];
            }
            cons.push(LinearConstraint::new(row, Relation::Eq, 0.0));
        }
    }

    for i in 0..m {
        let grad = gtilde_grad_st(i, p);
        let mut row = vec![0.0; nv];
        for (x, g) in grad.iter().enumerate() {
            row[nui + x] = *g;
        }
        if active(i) {
            cons.push(LinearConstraint::new(row, Relation::Eq, 0.0));
        } else {
            row[di] = -dscale;
            cons.push(LinearConstraint::new(row, Relation::Le, -vals[i]));
        }
    }

    let mut bounds = vec![(f64::NEG_INFINITY, f64::INFINITY); nv];
    // The line search caps useful descent at one revenue unit per unit step,
    // so a deeper bound would only feed the simplex a badly scaled shift.
    bounds[di] = (-1.0, f64::INFINITY);
    for j in 0..3 {
        bounds[ri + j] = if cfg.frozen[j] { (0.0, 0.0) } else { (-1.0, 1.0) };
    }
    for i in 0..m {
        bounds[zi + i] = if active(i) {
            (0.0, f64::INFINITY)
        } else {
            (0.0, 0.0)
        };
    }

    let mut minimize = vec![0.0; nv];
    minimize[di] = 1.0;
    Ok(LinearProgram {
        minimize,
        constraints: cons,
        bounds,
    })
}

/// Unit used for the intermediate value `d` inside the direction LP.
fn direction_value_scale(
    s0: &LeaderStrategy,
    joint: &JointFollowerStrategy,
    p: &NetworkParams,
) -> Result<f64, ModelError> {
    Ok(1.0 + sg_revenue(s0, joint, p)?.abs())
}

/// Assembles and solves the direction LP, unpacking the solution vector.
pub fn solve_direction(
    s0: &LeaderStrategy,
    joint: &JointFollowerStrategy,
    p: &NetworkParams,
    i0: &[usize],
    cfg: &SeConfig,
) -> Result<DirectionSolution, SeError> {
    let kk = p.num_st();
    let lp = assemble_direction_lp(s0, joint, p, i0, cfg)?;
    match solve_lp(&lp)? {
        LpOutcome::Optimal(sol) => {
            let nst = 2 * kk;
            Ok(DirectionSolution {
                d: sol.x[0] * direction_value_scale(s0, joint, p)?,
                r: [sol.x[1], sol.x[2], sol.x[3]],
                nu_lp: sol.x[4..4 + nst].to_vec(),
                zeta: sol.x[4 + nst..].to_vec(),
            })
        }
        LpOutcome::Infeasible => Err(SeError::Direction(
            "direction LP infeasible (zero direction should be feasible)".into(),
        )),
        LpOutcome::Unbounded => Err(SeError::Direction("direction LP unbounded".into())),
    }
}

/// Directional derivative of the revenue along a raw-unit leader direction
/// `r`, using `nu_lp` as the followers' reaction sensitivity.
pub fn directional_derivative_theta0(
    s0: &LeaderStrategy,
    joint: &JointFollowerStrategy,
    r: &[f64; 3],
    nu_lp: &[f64],
    p: &NetworkParams,
) -> Result<f64, ModelError> {
    let g0_s0 = grad_theta0_s0(s0, joint, p)?;
    let g0_st = grad_theta0_st(s0, p)?;
    let mut v = 0.0;
    for j in 0..3 {
        v += g0_s0[j] * r[j];
    }
    for (g, nu) in g0_st.iter().zip(nu_lp) {
        v += g * nu;
    }
    Ok(v)
}

/// Assembles the sensitivity system matrix
/// `[[H_phi, grad Gtilde_I0, C]; [grad Gtilde_I0^T, 0, 0]]` and reports its
/// row rank via singular values.
pub fn check_matrix_m_rank(
    s0: &LeaderStrategy,
    joint: &JointFollowerStrategy,
    p: &NetworkParams,
    i0: &[usize],
) -> Result<MRankReport, SeError> {
    let kk = p.num_st();
    let nst = 2 * kk;
    let na = i0.len();
    let rows = nst + na;
    let cols = nst + na + 3;
    let mut mat = DMatrix::<f64>::zeros(rows, cols);
    for k in 0..kk {
        let hess = hessian_theta_k(&joint.entries[k], s0, k, p)?;
        let mixed = mixed_partials_theta_k(&joint.entries[k], s0, k, p)?;
        for c in 0..2 {
            let x = 2 * k + c;
            for cc in 0..2 {
                mat[(x, 2 * k + cc)] = hess[c][cc];
            }
            for j in 0..3 {
                mat[(x, nst + na + j)] = mixed[c][j];
            }
        }
    }
    for (a, &i) in i0.iter().enumerate() {
        let grad = gtilde_grad_st(i, p);
        for (x, g) in grad.iter().enumerate() {
            mat[(x, nst + a)] = *g;
            mat[(nst + a, x)] = *g;
        }
    }
    let sv = mat.svd(false, false).singular_values;
    let smax = sv.iter().cloned().fold(0.0, f64::max);
    let mut s: Vec<f64> = sv.iter().cloned().collect();
    s.sort_by(|a, b| b.partial_cmp(a).unwrap());
    let smin_row = if rows <= cols && rows >= 1 {
        s[rows - 1]
    } else {
        0.0
    };
    Ok(MRankReport {
        full_row_rank: rows <= cols && smin_row > 1e-10 * smax,
        min_singular_value: smin_row,
    })
}

// ---------------------------------------------------------------------------
// Directional ascent
// ---------------------------------------------------------------------------

/// Projects a joint strategy into the feasible set at `s0` so that a warm
/// start from a previous leader iterate never seeds an infeasible point.
fn clamp_to_feasible(
    joint: &JointFollowerStrategy,
    s0: &LeaderStrategy,
    p: &NetworkParams,
    mode: TransmissionMode,
) -> JointFollowerStrategy {
    let budget = (p.t_slot - s0.tau_s).max(0.0);
    let mut entries: Vec<FollowerStrategy> = joint
        .entries
        .iter()
        .enumerate()
        .map(|(k, e)| {
            let mut b = e.tau_b.clamp(0.0, budget);
            let mut t = e
                .tau_t
                .max(0.0)
                .min(p.supply_coeff(k) * (budget - b) / p.pc)
                .min(budget);
            match mode {
                TransmissionMode::HarvestOnly => b = 0.0,
                TransmissionMode::BackscatterOnly => t = 0.0,
                TransmissionMode::Hybrid => {}
            }
            FollowerStrategy::new(t, b)
        })
        .collect();
    let sum_t: f64 = entries.iter().map(|e| e.tau_t).sum();
    if sum_t > budget && sum_t > 0.0 {
        let f = budget / sum_t;
        entries.iter_mut().for_each(|e| e.tau_t *= f);
    }
    let sum_b: f64 = entries.iter().map(|e| e.tau_b).sum();
    if sum_b > budget && sum_b > 0.0 {
        let f = budget / sum_b;
        entries.iter_mut().for_each(|e| e.tau_b *= f);
    }
    JointFollowerStrategy::new(entries)
}

fn reaction_at(
    s0: &LeaderStrategy,
    p: &NetworkParams,
    gcfg: &GneConfig,
    warm: Option<&JointFollowerStrategy>,
) -> Result<GneResult, SeError> {
    let mut cfg = gcfg.clone();
    if let Some(w) = warm {
        cfg.initial = Some(clamp_to_feasible(w, s0, p, cfg.transmission));
    }
    let out = solve_gne(&cfg, s0, p);
    if let Err(e) = &out {
        eprintln!("REACTION ERR: {e} s0={s0:?} init={:?}", cfg.initial);
    }
    Ok(out?)
}

fn step_candidate(s0: &LeaderStrategy, beta: f64, r: &[f64; 3], scales: &[f64; 3]) -> LeaderStrategy {
    LeaderStrategy {
        alpha: s0.alpha + beta * r[0] * scales[0],
        tau_s: s0.tau_s + beta * r[1] * scales[1],
        eps: s0.eps + beta * r[2] * scales[2],
    }
}

/// Directional ascent on the revenue with nested follower equilibria.
///
/// Each step solves the direction LP at the current reaction, then
/// backtracks the step size until the revenue gain clears the fraction `rho`
/// of the predicted gain while staying leader-feasible. When the LP reports
/// no descent, cheap coordinate probes guard against sensitivity-system
/// degeneracy before declaring stationarity.
pub fn solve_se(cfg: &SeConfig, p: &NetworkParams) -> Result<SeResult, SeError> {
    let mut s0 = cfg.initial_s0;
    if !s0.is_feasible(p) {
        return Err(SeError::InfeasibleStart);
    }
    let scales = cfg.scales(p);
    let mut fol = reaction_at(&s0, p, &cfg.gne, None)?;
    let mut rev = sg_revenue(&s0, &fol.strategy, p)?;
    let mut trace = vec![rev];
    let mut termination = SeTermination::MaxSteps;
    let mut steps = 0;

    // Line search along `r`: take the largest shrinking step that clears the
    // Armijo target when one exists, otherwise the best plain improvement
    // found along the way. First-accept alone is not enough here: the nested
    // revenue has cliffs where the reaction map switches regime, and there a
    // miscalibrated target would shrink the step to nothing.
    let try_direction = |s0: &LeaderStrategy,
                         fol: &GneResult,
                         rev: f64,
                         r: &[f64; 3],
                         armijo: Option<&dyn Fn(f64) -> f64>|
     -> Result<Option<(LeaderStrategy, GneResult, f64)>, SeError> {
        let floor = rev + 1e-9 * (1.0 + rev.abs());
        let mut best: Option<(LeaderStrategy, GneResult, f64)> = None;
        let mut beta = cfg.beta_max;
        while beta >= 1e-12 {
            let cand = step_candidate(s0, beta, r, &scales);
            if cand.is_feasible(p) {
                let fc = reaction_at(&cand, p, &cfg.gne, Some(&fol.strategy))?;
                let rc = sg_revenue(&cand, &fc.strategy, p)?;
                if armijo.map_or(false, |t| rc >= t(beta)) {
                    return Ok(Some((cand, fc, rc)));
                }
                if rc >= floor && best.as_ref().map_or(true, |b| rc > b.2) {
                    best = Some((cand, fc, rc));
                }
            }
            beta *= 0.5;
        }
        Ok(best)
    };

    while steps < cfg.max_steps {
        steps += 1;
        let i0 = active_set(&s0, &fol.strategy, p, cfg.active_tol);
        let dir = solve_direction(&s0, &fol.strategy, p, &i0, cfg)?;
        let no_descent = -1e-9 * (1.0 + rev.abs());

        let accepted = if dir.d < no_descent {
            // Cap the predicted gain so a degenerate (guard-bound) LP value
            // cannot make the acceptance test unsatisfiable.
            let d_eff = dir.d.max(-(1.0 + rev.abs()));
            let target = |beta: f64| rev - cfg.rho * beta * d_eff;
            try_direction(&s0, &fol, rev, &dir.r, Some(&target))?
        } else {
            None
        };

        // Coordinate probes: the sensitivity system is singular on
        // payoff-flat segments and across reaction-regime cliffs, so the LP
        // can under-report ascent. They also arbitrate whether a vanishing
        // LP step means stationarity or just a bad local direction.
        let probes = |s0: &LeaderStrategy,
                      fol: &GneResult,
                      rev: f64|
         -> Result<Option<(LeaderStrategy, GneResult, f64)>, SeError> {
            let mut best: Option<(LeaderStrategy, GneResult, f64)> = None;
            for j in 0..3 {
                if cfg.frozen[j] {
                    continue;
                }
                for sign in [1.0, -1.0] {
                    let mut r = [0.0; 3];
                    r[j] = sign;
                    if let Some(c) = try_direction(s0, fol, rev, &r, None)? {
                        if best.as_ref().map_or(true, |b| c.2 > b.2) {
                            best = Some(c);
                        }
                    }
                }
            }
            Ok(best)
        };

        let accepted = match accepted {
            Some(a) => Some(a),
            None => probes(&s0, &fol, rev)?,
        };

        match accepted {
            None => {
                termination = if dir.d >= no_descent {
                    SeTermination::Converged
                } else {
                    SeTermination::NoDescentDirection
                };
                break;
            }
            Some((cand, fc, rc)) => {
                let step_norm = (0..3)
                    .map(|j| {
                        let delta = match j {
                            0 => cand.alpha - s0.alpha,
                            1 => cand.tau_s - s0.tau_s,
                            _ => cand.eps - s0.eps,
                        };
                        (delta / scales[j]).abs()
                    })
                    .fold(0.0, f64::max);
                s0 = cand;
                fol = fc;
                rev = rc;
                trace.push(rev);
                if step_norm <= cfg.chi0 {
                    // A vanishing accepted step is only conclusive if the
                    // probes agree there is nothing larger to take.
                    match probes(&s0, &fol, rev)? {
                        Some((ps, pf, pr)) => {
                            s0 = ps;
                            fol = pf;
                            rev = pr;
                            trace.push(rev);
                        }
                        None => {
                            termination = SeTermination::Converged;
                            break;
                        }
                    }
                }
            }
        }
    }

    Ok(SeResult {
        s0_star: s0,
        followers_star: fol,
        revenue_trace: trace,
        steps,
        termination,
    })
}

/// Runs the leader search with one follower coordinate pinned to zero:
/// `HarvestOnly` forbids backscattering, `BackscatterOnly` forbids active
/// transmission.
pub fn run_baseline(
    mode: TransmissionMode,
    cfg: &SeConfig,
    p: &NetworkParams,
) -> Result<SeResult, SeError> {
    let mut cfg = cfg.clone();
    cfg.gne.transmission = mode;
    cfg.gne.initial = None;
    solve_se(&cfg, p)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::tests::{feasible_leader, table1_params};
    use crate::model::potential;

    fn converged_gne(
        s0: &LeaderStrategy,
        p: &NetworkParams,
    ) -> GneResult {
        let cfg = GneConfig::default_for(p);
        solve_gne(&cfg, s0, p).expect("gne")
    }

    #[test]
    fn active_set_classifies_boundaries() {
        let p = table1_params(2);
        let s0 = feasible_leader(&p);
        let budget = p.t_slot - s0.tau_s;
        let interior = JointFollowerStrategy::new(vec![
            FollowerStrategy::new(0.01, 0.1),
            FollowerStrategy::new(0.01, 0.1),
        ]);
        assert!(active_set(&s0, &interior, &p, 1e-7 * p.t_slot).is_empty());

        let on_budget = JointFollowerStrategy::new(vec![
            FollowerStrategy::new(budget / 2.0, 0.1),
            FollowerStrategy::new(budget / 2.0, 0.0),
        ]);
        let idx = active_set(&s0, &on_budget, &p, 1e-7 * p.t_slot);
        assert!(idx.contains(&0), "transmit budget row active: {idx:?}");
        assert!(idx.contains(&6), "second player's tau_b >= 0 active: {idx:?}");
    }

    #[test]
    fn lp_dimensions_single_follower_empty_active_set() {
        let p = table1_params(1);
        let s0 = feasible_leader(&p);
        let joint = JointFollowerStrategy::new(vec![FollowerStrategy::new(0.01, 0.1)]);
        let cfg = SeConfig::default_for(&p, s0);
        let lp = assemble_direction_lp(&s0, &joint, &p, &[], &cfg).expect("assemble");
        // 1 revenue row + 1 miss-detection row + 2 stationarity equalities
        // + 5 inactive-constraint rows; the direction box lives in bounds.
        assert_eq!(lp.constraints.len(), 9);
        assert_eq!(lp.minimize.len(), 1 + 3 + 2 + 5);
        // All zeta variables are pinned to zero when nothing is active.
        for b in &lp.bounds[1 + 3 + 2..] {
            assert_eq!(*b, (0.0, 0.0));
        }
    }

    #[test]
    fn zero_direction_keeps_lp_feasible_and_bounded() {
        for k in [1usize, 2, 3] {
            let p = table1_params(k);
            let s0 = feasible_leader(&p);
            let gne = converged_gne(&s0, &p);
            let cfg = SeConfig::default_for(&p, s0);
            let i0 = active_set(&s0, &gne.strategy, &p, cfg.active_tol);
            let dir = solve_direction(&s0, &gne.strategy, &p, &i0, &cfg).expect("lp");
            assert!(dir.d <= 1e-9, "zero direction is feasible, d* = {}", dir.d);
            for v in dir.r {
                assert!(v.abs() <= 1.0 + 1e-9);
            }
            for (i, z) in dir.zeta.iter().enumerate() {
                if !i0.contains(&i) {
                    assert!(z.abs() <= 1e-6, "pinned zeta_{i} = {z}");
                }
            }
        }
    }

    #[test]
    fn directional_derivative_basics() {
        let p = table1_params(2);
        let s0 = feasible_leader(&p);
        let gne = converged_gne(&s0, &p);
        let zeros = vec![0.0; 4];
        let v = directional_derivative_theta0(&s0, &gne.strategy, &[0.0; 3], &zeros, &p)
            .expect("derivative");
        assert_eq!(v, 0.0);

        // Price-only direction with insensitive followers: the derivative is
        // the expected interference time.
        let det = crate::model::detection_probs(s0.tau_s, s0.eps, &p).unwrap();
        let expect = p.p1 * (1.0 - det.pd) * gne.strategy.sum_tau_t();
        let v = directional_derivative_theta0(&s0, &gne.strategy, &[1.0, 0.0, 0.0], &zeros, &p)
            .expect("derivative");
        assert!((v - expect).abs() <= 1e-9 * expect.abs());
    }

    #[test]
    fn m_rank_detects_duplicated_rows() {
        let p = table1_params(2);
        let s0 = feasible_leader(&p);
        let gne = converged_gne(&s0, &p);
        let i0 = active_set(&s0, &gne.strategy, &p, 1e-7 * p.t_slot);
        let report = check_matrix_m_rank(&s0, &gne.strategy, &p, &i0).expect("svd");
        assert!(report.min_singular_value >= 0.0);

        let mut dup = i0.clone();
        if let Some(&first) = i0.first() {
            dup.push(first);
            let bad = check_matrix_m_rank(&s0, &gne.strategy, &p, &dup).expect("svd");
            assert!(!bad.full_row_rank, "duplicated active row must break rank");
        }
    }

    #[test]
    fn m_rank_full_without_active_rows() {
        let p = table1_params(1);
        let s0 = feasible_leader(&p);
        let joint = JointFollowerStrategy::new(vec![FollowerStrategy::new(0.02, 0.3)]);
        let report = check_matrix_m_rank(&s0, &joint, &p, &[]).expect("svd");
        assert!(report.full_row_rank);
    }

    #[test]
    fn backscatter_only_baseline_earns_nothing_and_fills_busy_budget() {
        let p = table1_params(2);
        let s0 = feasible_leader(&p);
        let cfg = SeConfig::default_for(&p, s0);
        let out = run_baseline(TransmissionMode::BackscatterOnly, &cfg, &p).expect("baseline");
        for rev in &out.revenue_trace {
            assert!(rev.abs() <= 1e-12);
        }
        let budget = p.t_slot - out.s0_star.tau_s;
        let sum_b = out.followers_star.strategy.sum_tau_b();
        assert!(
            (sum_b - budget).abs() <= 1e-6 * p.t_slot,
            "backscatter time should fill the busy budget: {sum_b} vs {budget}"
        );
        for e in &out.followers_star.strategy.entries {
            assert_eq!(e.tau_t, 0.0);
        }
    }

    #[test]
    fn revenue_trace_is_nondecreasing_and_terminal_lp_stationary() {
        let p = table1_params(2);
        let s0 = feasible_leader(&p);
        let mut cfg = SeConfig::default_for(&p, s0);
        cfg.frozen = [false, true, true];
        cfg.max_steps = 200;
        let out = solve_se(&cfg, &p).expect("se");
        for w in out.revenue_trace.windows(2) {
            assert!(
                w[1] >= w[0] - 1e-9 * (1.0 + w[0].abs()),
                "revenue trace must not decrease: {w:?}"
            );
        }
        assert!(out.termination != SeTermination::MaxSteps, "{out:?}");
        let i0 = active_set(&out.s0_star, &out.followers_star.strategy, &p, cfg.active_tol);
        let dir =
            solve_direction(&out.s0_star, &out.followers_star.strategy, &p, &i0, &cfg).expect("lp");
        let rev = *out.revenue_trace.last().unwrap();
        // At termination the LP may still see descent that the nested
        // objective cannot realize; the probe step bound is what holds.
        assert!(
            dir.d >= -(1.0 + rev.abs()),
            "terminal direction value pathological: {}",
            dir.d
        );
    }

    #[test]
    fn alpha_only_search_matches_scan() {
        let p = table1_params(1);
        let base = feasible_leader(&p);
        let gcfg = GneConfig::default_for(&p);

        let mut best_rev = f64::NEG_INFINITY;
        let n = 80;
        let alpha_hi = 6.0e8;
        for i in 0..=n {
            let alpha = alpha_hi * i as f64 / n as f64;
            let s0 = LeaderStrategy { alpha, ..base };
            let gne = solve_gne(&gcfg, &s0, &p).expect("gne");
            let rev = sg_revenue(&s0, &gne.strategy, &p).expect("rev");
            if rev > best_rev {
                best_rev = rev;
            }
        }

        let mut cfg = SeConfig::default_for(&p, base);
        cfg.frozen = [false, true, true];
        cfg.alpha_scale = 1e8;
        cfg.max_steps = 400;
        let out = solve_se(&cfg, &p).expect("se");
        let rev = *out.revenue_trace.last().unwrap();
        assert!(
            rev >= best_rev * (1.0 - 2e-2),
            "ascent result {rev} vs scan best {best_rev}"
        );
    }

    #[test]
    fn warm_restart_terminates_quickly() {
        let p = table1_params(1);
        let base = feasible_leader(&p);
        let mut cfg = SeConfig::default_for(&p, base);
        cfg.frozen = [false, true, true];
        cfg.max_steps = 300;
        let first = solve_se(&cfg, &p).expect("first");
        let mut cfg2 = cfg.clone();
        cfg2.initial_s0 = first.s0_star;
        let second = solve_se(&cfg2, &p).expect("second");
        assert!(second.steps <= 2, "restart took {} steps", second.steps);
        assert!(
            *second.revenue_trace.last().unwrap()
                >= *first.revenue_trace.last().unwrap() - 1e-6 * (1.0 + first.revenue_trace.last().unwrap().abs())
        );
    }

    #[test]
    fn harvest_only_baseline_matches_hybrid_with_worthless_backscatter() {
        let mut p = table1_params(1);
        p.rbar_b_k = vec![1e-9];
        let p = NetworkParams::new(p).expect("params");
        let s0 = feasible_leader(&p);
        let gcfg = GneConfig::default_for(&p);

        let mut hcfg = gcfg.clone();
        hcfg.transmission = TransmissionMode::HarvestOnly;
        let harvest = solve_gne(&hcfg, &s0, &p).expect("harvest");
        let hybrid = solve_gne(&gcfg, &s0, &p).expect("hybrid");
        let ph = potential(&harvest.strategy, &s0, &p).expect("phi");
        let py = potential(&hybrid.strategy, &s0, &p).expect("phi");
        assert!(
            (ph - py).abs() <= 1e-6 * (1.0 + py.abs()),
            "harvest-only {ph} vs hybrid with dead backscatter {py}"
        );
    }
}
