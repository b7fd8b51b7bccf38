//! Small dense optimization kernels: a two-phase simplex method for linear
//! programs and an exact maximizer for strongly concave functions of two
//! variables over convex polygons.
//!
//! Both problems stay tiny here (tens of variables), so the implementations
//! favour robustness and determinism over sparsity tricks: Bland's rule
//! guards the simplex against cycling and the 2-D maximizer uses nested
//! derivative bisections, which cannot diverge.

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SolveError {
    #[error("malformed problem: {0}")]
    BadInput(String),
    #[error("the polygon has an empty interior")]
    EmptyPolygon,
    #[error("objective evaluation failed inside the feasible set")]
    ObjectiveFailure,
}

// ---------------------------------------------------------------------------
// Linear programming
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Relation {
    Le,
    Eq,
    Ge,
}

#[derive(Debug, Clone)]
pub struct LinearConstraint {
    pub coeffs: Vec<f64>,
    pub rel: Relation,
    pub rhs: f64,
}

impl LinearConstraint {
    pub fn new(coeffs: Vec<f64>, rel: Relation, rhs: f64) -> Self {
        Self { coeffs, rel, rhs }
    }
}

/// `min c^T x` subject to the listed constraints and per-variable bounds
/// (use infinities for absent bounds).
#[derive(Debug, Clone)]
pub struct LinearProgram {
    pub minimize: Vec<f64>,
    pub constraints: Vec<LinearConstraint>,
    pub bounds: Vec<(f64, f64)>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LpSolution {
    pub x: Vec<f64>,
    pub objective: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub enum LpOutcome {
    Optimal(LpSolution),
    Infeasible,
    Unbounded,
}

const PIVOT_TOL: f64 = 1e-11;
const COST_TOL: f64 = 1e-9;

/// One Bland-rule simplex pass over a tableau already in canonical form with
/// respect to `basis`. The reduced-cost row and the objective value are
/// recomputed from `cost0` and the tableau at every iteration instead of
/// being updated incrementally: ill-conditioned pivot sequences can take the
/// intermediate objective through magnitudes that wipe out an incremental
/// running value, while the direct formula is only as wrong as the tableau
/// itself. Returns the objective at the final basis, or `None` when the
/// problem is unbounded below.
fn bland_iterate(
    rows: &mut [Vec<f64>],
    rhs: &mut [f64],
    cost0: &[f64],
    const0: f64,
    basis: &mut [usize],
) -> Option<f64> {
    let m = rows.len();
    let n = cost0.len();
    let mut unusable = vec![false; n];
    let mut cost = vec![0.0; n];
    loop {
        // Canonical reduced costs: cost_j = cost0_j - sum_i cost0[basis_i] * tab[i][j].
        let mut value = const0;
        cost.copy_from_slice(cost0);
        for i in 0..m {
            let f = cost0[basis[i]];
            if f != 0.0 {
                value += f * rhs[i];
                for (cj, rj) in cost.iter_mut().zip(&rows[i]) {
                    *cj -= f * rj;
                }
            }
        }
        for &bi in basis.iter() {
            cost[bi] = 0.0;
        }

        // Entering variable: smallest index with a negative reduced cost.
        let Some(enter) = (0..n).find(|&j| !unusable[j] && cost[j] < -COST_TOL) else {
            return Some(value);
        };
        // Leaving row: minimum ratio, ties broken by smallest basis index.
        let mut leave: Option<usize> = None;
        let mut best_ratio = f64::INFINITY;
        let mut col_max = f64::NEG_INFINITY;
        for i in 0..m {
            col_max = col_max.max(rows[i][enter]);
            if rows[i][enter] > PIVOT_TOL {
                let ratio = rhs[i] / rows[i][enter];
                let better = ratio < best_ratio - 1e-15
                    || (ratio <= best_ratio + 1e-15
                        && leave.map(|l| basis[i] < basis[l]).unwrap_or(true));
                if better {
                    best_ratio = ratio;
                    leave = Some(i);
                }
            }
        }
        match leave {
            Some(r) => pivot(rows, rhs, basis, r, enter),
            // No pivot row: either a genuine unbounded ray, or roundoff
            // debris (a near-zero column paired with a reduced cost barely
            // past the tolerance). Retire the column in the debris case so
            // iteration can continue instead of stopping on a false ray.
            None if col_max > 0.0 || cost[enter] > -1e-7 => unusable[enter] = true,
            None => return None,
        }
    }
}

fn pivot(rows: &mut [Vec<f64>], rhs: &mut [f64], basis: &mut [usize], r: usize, c: usize) {
    let p = rows[r][c];
    for v in rows[r].iter_mut() {
        *v /= p;
    }
    rhs[r] /= p;
    for i in 0..rows.len() {
        if i != r {
            let f = rows[i][c];
            if f != 0.0 {
                for j in 0..rows[i].len() {
                    rows[i][j] -= f * rows[r][j];
                }
                rows[i][c] = 0.0;
                rhs[i] -= f * rhs[r];
            }
        }
    }
    basis[r] = c;
}

/// Solves the linear program with a dense two-phase simplex method.
pub fn solve_lp(lp: &LinearProgram) -> Result<LpOutcome, SolveError> {
    // Column equilibration: variables whose coefficients live on very
    // different scales (e.g. second derivatives next to unit constraint
    // gradients) are rescaled to bring every column's largest entry near one.
    // Powers of two keep the back-substitution exact.
    let n = lp.minimize.len();
    let mut cscale = vec![1.0f64; n];
    for j in 0..n {
        // Scaling a box-bounded variable would blow its bounds (and the
        // bound shifts in the tableau) up by the same factor, trading one
        // conditioning problem for a worse one; only free columns move.
        let free = lp
            .bounds
            .get(j)
            .map(|b| b.0.is_infinite() && b.1.is_infinite())
            .unwrap_or(false);
        if !free {
            continue;
        }
        let mut m = 0.0f64;
        for c in &lp.constraints {
            if let Some(&a) = c.coeffs.get(j) {
                m = m.max(a.abs());
            }
        }
        if m.is_finite() && m > 0.0 {
            cscale[j] = libm::exp2(libm::log2(m).round());
        }
    }
    if cscale.iter().all(|&s| s == 1.0) {
        return solve_lp_unscaled(lp);
    }
    let mut scaled = lp.clone();
    for c in &mut scaled.constraints {
        for (j, a) in c.coeffs.iter_mut().enumerate() {
            *a /= cscale[j];
        }
    }
    for (j, b) in scaled.bounds.iter_mut().enumerate() {
        b.0 *= cscale[j];
        b.1 *= cscale[j];
    }
    for (j, c) in scaled.minimize.iter_mut().enumerate() {
        *c /= cscale[j];
    }
    match solve_lp_unscaled(&scaled)? {
        LpOutcome::Optimal(mut sol) => {
            for (j, x) in sol.x.iter_mut().enumerate() {
                *x /= cscale[j];
            }
            Ok(LpOutcome::Optimal(sol))
        }
        other => Ok(other),
    }
}

fn solve_lp_unscaled(lp: &LinearProgram) -> Result<LpOutcome, SolveError> {
    let n = lp.minimize.len();
    if lp.bounds.len() != n {
        return Err(SolveError::BadInput(format!(
            "{} bounds for {n} variables",
            lp.bounds.len()
        )));
    }
    for (i, c) in lp.constraints.iter().enumerate() {
        if c.coeffs.len() != n {
            return Err(SolveError::BadInput(format!(
                "constraint {i} has {} coefficients, expected {n}",
                c.coeffs.len()
            )));
        }
        if !c.rhs.is_finite() || c.coeffs.iter().any(|v| !v.is_finite()) {
            return Err(SolveError::BadInput(format!(
                "constraint {i} has non-finite entries"
            )));
        }
    }

    // Variable transformation to y >= 0. Each original variable maps to
    // (positive column, optional negated column, shift) so that
    // x_j = shift + y_pos - y_neg.
    struct VarMap {
        pos: Option<usize>,
        neg: Option<usize>,
        shift: f64,
    }
    let mut maps = Vec::with_capacity(n);
    let mut ncols = 0usize;
    let mut extra_upper: Vec<(usize, f64)> = Vec::new(); // y_col <= cap
    for (j, &(lo, hi)) in lp.bounds.iter().enumerate() {
        if lo > hi {
            return Ok(LpOutcome::Infeasible);
        }
        if lo.is_finite() {
            let col = ncols;
            ncols += 1;
            if hi.is_finite() {
                extra_upper.push((col, hi - lo));
            }
            maps.push(VarMap {
                pos: Some(col),
                neg: None,
                shift: lo,
            });
        } else if hi.is_finite() {
            let col = ncols;
            ncols += 1;
            maps.push(VarMap {
                pos: None,
                neg: Some(col),
                shift: hi,
            });
        } else {
            let (cp, cn) = (ncols, ncols + 1);
            ncols += 2;
            maps.push(VarMap {
                pos: Some(cp),
                neg: Some(cn),
                shift: 0.0,
            });
        }
        let _ = j;
    }

    // Assemble rows in terms of y, with row equilibration for conditioning.
    let mut rows: Vec<Vec<f64>> = Vec::new();
    let mut rhs: Vec<f64> = Vec::new();
    let mut rels: Vec<Relation> = Vec::new();
    let mut push_row = |coeffs: &[f64], rel: Relation, b: f64| {
        let mut row = vec![0.0; ncols];
        let mut b_adj = b;
        for (j, &a) in coeffs.iter().enumerate() {
            if a == 0.0 {
                continue;
            }
            let m = &maps[j];
            b_adj -= a * m.shift;
            if let Some(c) = m.pos {
                row[c] += a;
            }
            if let Some(c) = m.neg {
                row[c] -= a;
            }
        }
        let scale = row.iter().fold(0.0f64, |s, v| s.max(v.abs()));
        if scale > 0.0 {
            for v in row.iter_mut() {
                *v /= scale;
            }
            b_adj /= scale;
        }
        rows.push(row);
        rhs.push(b_adj);
        rels.push(rel);
    };
    for c in &lp.constraints {
        push_row(&c.coeffs, c.rel, c.rhs);
    }
    for &(col, cap) in &extra_upper {
        let mut row = vec![0.0; ncols];
        row[col] = 1.0;
        rows.push(row);
        rhs.push(cap);
        rels.push(Relation::Le);
    }

    // Standard form: flip rows for b >= 0, then add slacks and artificials.
    let m = rows.len();
    for i in 0..m {
        if rhs[i] < 0.0 {
            rhs[i] = -rhs[i];
            for v in rows[i].iter_mut() {
                *v = -*v;
            }
            rels[i] = match rels[i] {
                Relation::Le => Relation::Ge,
                Relation::Ge => Relation::Le,
                Relation::Eq => Relation::Eq,
            };
        }
    }
    let mut total = ncols;
    let mut slack_col = vec![None; m];
    for i in 0..m {
        match rels[i] {
            Relation::Le | Relation::Ge => {
                slack_col[i] = Some(total);
                total += 1;
            }
            Relation::Eq => {}
        }
    }
    let art_start = total;
    let mut art_col = vec![None; m];
    for i in 0..m {
        // Le rows have a +1 slack usable as an initial basis column.
        if rels[i] != Relation::Le {
            art_col[i] = Some(total);
            total += 1;
        }
    }
    let mut tab: Vec<Vec<f64>> = rows
        .into_iter()
        .map(|mut r| {
            r.resize(total, 0.0);
            r
        })
        .collect();
    let mut basis = vec![0usize; m];
    for i in 0..m {
        if let Some(c) = slack_col[i] {
            tab[i][c] = if rels[i] == Relation::Le { 1.0 } else { -1.0 };
        }
        if let Some(c) = art_col[i] {
            tab[i][c] = 1.0;
            basis[i] = c;
        } else {
            basis[i] = slack_col[i].expect("Le row has a slack");
        }
    }

    // Phase 1: minimize the sum of artificials.
    if art_start < total {
        let mut cost0 = vec![0.0; total];
        for c in art_start..total {
            cost0[c] = 1.0;
        }
        let rhs_scale = rhs.iter().fold(1.0f64, |a, v| a.max(v.abs()));
        // The phase-1 objective is bounded below by zero, so an "unbounded"
        // report can only be roundoff in the reduced costs; the value test
        // below still decides feasibility correctly in that case.
        let value = bland_iterate(&mut tab, &mut rhs, &cost0, 0.0, &mut basis)
            .unwrap_or_else(|| {
                (0..m)
                    .filter(|&i| basis[i] >= art_start)
                    .map(|i| rhs[i])
                    .sum()
            });
        if value > 1e-7 * rhs_scale {
            return Ok(LpOutcome::Infeasible);
        }
        // Drive leftover artificials out of the basis.
        for i in 0..m {
            if basis[i] >= art_start {
                if let Some(c) = (0..art_start).find(|&j| tab[i][j].abs() > PIVOT_TOL) {
                    pivot(&mut tab, &mut rhs, &mut basis, i, c);
                } else {
                    // Redundant row; zero it so it never pivots again.
                    for v in tab[i].iter_mut() {
                        *v = 0.0;
                    }
                    rhs[i] = 0.0;
                    tab[i][basis[i]] = 1.0;
                }
            }
        }
    }

    // Phase 2: original objective, artificial columns barred by erasure.
    for row in tab.iter_mut() {
        for c in art_start..total {
            row[c] = 0.0;
        }
    }
    let mut cost0 = vec![0.0; total];
    let mut const0 = 0.0;
    for (j, &cj) in lp.minimize.iter().enumerate() {
        if cj == 0.0 {
            continue;
        }
        let mp = &maps[j];
        const0 += cj * mp.shift;
        if let Some(c) = mp.pos {
            cost0[c] += cj;
        }
        if let Some(c) = mp.neg {
            cost0[c] -= cj;
        }
    }
    let Some(obj_value) = bland_iterate(&mut tab, &mut rhs, &cost0, const0, &mut basis) else {
        return Ok(LpOutcome::Unbounded);
    };

    // Recover x.
    let mut y = vec![0.0; total];
    for i in 0..m {
        y[basis[i]] = rhs[i];
    }
    let x: Vec<f64> = maps
        .iter()
        .map(|mp| {
            mp.shift + mp.pos.map(|c| y[c]).unwrap_or(0.0) - mp.neg.map(|c| y[c]).unwrap_or(0.0)
        })
        .collect();
    let objective: f64 = lp
        .minimize
        .iter()
        .zip(&x)
        .map(|(c, v)| c * v)
        .sum();
    debug_assert!(
        (objective - obj_value).abs() <= 1e-6 * (1.0 + objective.abs()),
        "tableau objective drifted: {obj_value} vs {objective}"
    );
    Ok(LpOutcome::Optimal(LpSolution { x, objective }))
}

// ---------------------------------------------------------------------------
// Convex polygons in the plane
// ---------------------------------------------------------------------------

/// Intersection of half-planes `a . x <= b`.
#[derive(Debug, Clone)]
pub struct Polygon2D {
    pub halfplanes: Vec<([f64; 2], f64)>,
}

const GEOM_TOL: f64 = 1e-9;

impl Polygon2D {
    pub fn new(halfplanes: Vec<([f64; 2], f64)>) -> Self {
        Self { halfplanes }
    }

    pub fn contains(&self, x: [f64; 2], tol: f64) -> bool {
        self.halfplanes
            .iter()
            .all(|(a, b)| a[0] * x[0] + a[1] * x[1] <= b + tol)
    }

    /// All vertices, from pairwise half-plane intersections filtered by
    /// feasibility. Duplicates within `GEOM_TOL` are merged.
    pub fn vertices(&self) -> Vec<[f64; 2]> {
        let hp = &self.halfplanes;
        let mut verts: Vec<[f64; 2]> = Vec::new();
        for i in 0..hp.len() {
            for j in (i + 1)..hp.len() {
                let (a1, b1) = hp[i];
                let (a2, b2) = hp[j];
                let det = a1[0] * a2[1] - a1[1] * a2[0];
                let scale = (a1[0].abs() + a1[1].abs()) * (a2[0].abs() + a2[1].abs());
                if det.abs() <= 1e-13 * scale.max(1e-300) {
                    continue;
                }
                let x = [(b1 * a2[1] - b2 * a1[1]) / det, (a1[0] * b2 - a2[0] * b1) / det];
                if !x[0].is_finite() || !x[1].is_finite() {
                    continue;
                }
                let tol = GEOM_TOL * (1.0 + x[0].abs() + x[1].abs());
                if self.contains(x, tol)
                    && !verts
                        .iter()
                        .any(|v| (v[0] - x[0]).abs() + (v[1] - x[1]).abs() < GEOM_TOL)
                {
                    verts.push(x);
                }
            }
        }
        verts
    }

    /// The feasible interval of the second coordinate at a fixed first
    /// coordinate, together with the slopes `d bound / d t` of the active
    /// half-planes (needed for envelope derivatives along the boundary).
    fn slice(&self, t: f64) -> Option<Slice> {
        let mut lo = f64::NEG_INFINITY;
        let mut hi = f64::INFINITY;
        let mut slope_lo = 0.0;
        let mut slope_hi = 0.0;
        for (a, b) in &self.halfplanes {
            if a[1].abs() <= 1e-300 {
                if a[0] * t > b + GEOM_TOL * (1.0 + b.abs()) {
                    return None;
                }
                continue;
            }
            let bound = (b - a[0] * t) / a[1];
            let slope = -a[0] / a[1];
            if a[1] > 0.0 {
                if bound < hi {
                    hi = bound;
                    slope_hi = slope;
                }
            } else if bound > lo {
                lo = bound;
                slope_lo = slope;
            }
        }
        if lo > hi {
            if lo - hi <= GEOM_TOL * (1.0 + lo.abs()) {
                let mid = 0.5 * (lo + hi);
                return Some(Slice {
                    lo: mid,
                    hi: mid,
                    slope_lo,
                    slope_hi,
                });
            }
            return None;
        }
        Some(Slice {
            lo,
            hi,
            slope_lo,
            slope_hi,
        })
    }
}

struct Slice {
    lo: f64,
    hi: f64,
    slope_lo: f64,
    slope_hi: f64,
}

// ---------------------------------------------------------------------------
// Strongly concave maximization over a polygon
// ---------------------------------------------------------------------------

const BISECT_ITERS: usize = 60;

/// Maximizes a strongly concave, continuously differentiable function over
/// the polygon. `grad` must return the exact gradient; `value` the function
/// value. Gradients may be infinite on the boundary (one-sided blow-ups are
/// treated by their sign).
///
/// The routine runs a derivative bisection in the first coordinate on the
/// partially maximized function (itself strongly concave), with an inner
/// derivative bisection per slice. Both searches are monotone, so the method
/// converges unconditionally to the unique maximizer.
pub fn maximize_concave_2d(
    poly: &Polygon2D,
    grad: &dyn Fn([f64; 2]) -> [f64; 2],
    value: &dyn Fn([f64; 2]) -> f64,
) -> Result<([f64; 2], f64), SolveError> {
    let verts = poly.vertices();
    if verts.is_empty() {
        return Err(SolveError::EmptyPolygon);
    }
    let t_min = verts.iter().map(|v| v[0]).fold(f64::INFINITY, f64::min);
    let t_max = verts.iter().map(|v| v[0]).fold(f64::NEG_INFINITY, f64::max);

    // Inner problem: maximize over the slice at t; returns the maximizer and
    // the envelope derivative of the partially maximized function.
    let solve_slice = |t: f64| -> Option<(f64, f64)> {
        let s = poly.slice(t)?;
        let (lo, hi) = (s.lo, s.hi);
        if hi - lo <= 0.0 {
            // Pinched slice (polygon corner). Only the sign of the envelope
            // derivative is usable here: it is positive or negative only if
            // both one-sided values agree.
            let g = grad([t, lo]);
            let d_lo = g[0] + g[1] * s.slope_lo;
            let d_hi = g[0] + g[1] * s.slope_hi;
            let d = if d_lo > 0.0 && d_hi > 0.0 {
                d_lo.min(d_hi)
            } else if d_lo < 0.0 && d_hi < 0.0 {
                d_lo.max(d_hi)
            } else {
                0.0
            };
            return Some((lo, d));
        }
        let g_hi = grad([t, hi]);
        if g_hi[1] >= 0.0 {
            return Some((hi, g_hi[0] + g_hi[1] * s.slope_hi));
        }
        let g_lo = grad([t, lo]);
        if g_lo[1] <= 0.0 {
            return Some((lo, g_lo[0] + g_lo[1] * s.slope_lo));
        }
        let (mut a, mut b) = (lo, hi);
        let mut g_mid = g_lo;
        for _ in 0..BISECT_ITERS {
            let mid = 0.5 * (a + b);
            g_mid = grad([t, mid]);
            if g_mid[1] > 0.0 {
                a = mid;
            } else {
                b = mid;
            }
        }
        let bstar = 0.5 * (a + b);
        Some((bstar, g_mid[0]))
    };

    let envelope = |t: f64| solve_slice(t).map(|(_, d)| d);

    // Bisection on the envelope derivative; converges to an endpoint when
    // the maximum sits there, so no endpoint special-casing is needed.
    let t_star = if t_max - t_min <= 0.0 {
        t_min
    } else {
        let (mut a, mut b) = (t_min, t_max);
        for _ in 0..BISECT_ITERS {
            let mid = 0.5 * (a + b);
            match envelope(mid) {
                Some(d) if d > 0.0 => a = mid,
                _ => b = mid,
            }
        }
        0.5 * (a + b)
    };

    let (b_star, _) = solve_slice(t_star).ok_or(SolveError::EmptyPolygon)?;
    let mut best = [t_star, b_star];
    let mut best_val = value(best);
    // Vertex sweep as a safety net against degenerate slices.
    for v in &verts {
        let fv = value(*v);
        if fv > best_val {
            best_val = fv;
            best = *v;
        }
    }
    if !best_val.is_finite() {
        return Err(SolveError::ObjectiveFailure);
    }
    Ok((best, best_val))
}
