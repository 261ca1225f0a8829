//! Dense two-phase primal simplex with Bland fallback.
//!
//! Variables are rewritten to nonnegative standard form (shifts, mirrors,
//! free-variable splits), rows are scaled by their largest magnitude, and
//! the tableau keeps one slack/surplus column per inequality plus phase-1
//! artificials. Duals are read off the identity columns of the final basis.

use super::{LpError, LpInstance, LpOutcome, Optimal, Relation};

const TOL_PIVOT: f64 = 1e-9;
const TOL_RC: f64 = 1e-9;

#[derive(Debug, Clone, Copy)]
enum VarMap {
    /// x = lo + xhat
    Shift { col: usize, lo: f64 },
    /// x = hi - xhat
    Mirror { col: usize, hi: f64 },
    /// x = xhat_pos - xhat_neg
    Split { pos: usize, neg: usize },
}

struct Tableau {
    /// m x (ncols + 1); last column is the rhs.
    t: Vec<f64>,
    m: usize,
    width: usize,
    ncols: usize,
    obj_row: Vec<f64>,
    obj_val: f64,
    costs: Vec<f64>,
    basis: Vec<usize>,
    /// Original row index per tableau row (usize::MAX for bound rows).
    row_ids: Vec<usize>,
    /// sign / scale applied to each tableau row, for dual recovery.
    row_sign: Vec<f64>,
    row_scale: Vec<f64>,
    /// Identity column carrying each row's dual (slack or artificial).
    dual_col: Vec<usize>,
    n_struct: usize,
    art_start: usize,
    pivot_buf: Vec<f64>,
}

impl Tableau {
    #[inline]
    fn at(&self, r: usize, c: usize) -> f64 {
        self.t[r * self.width + c]
    }

    fn rhs(&self, r: usize) -> f64 {
        self.at(r, self.ncols)
    }

    fn pivot(&mut self, row: usize, col: usize) {
        let w = self.width;
        let p = self.t[row * w + col];
        let inv = 1.0 / p;
        for c in 0..w {
            self.t[row * w + c] *= inv;
        }
        self.t[row * w + col] = 1.0;
        self.pivot_buf.clear();
        self.pivot_buf.extend_from_slice(&self.t[row * w..row * w + w]);
        for r in 0..self.m {
            if r == row {
                continue;
            }
            let f = self.t[r * w + col];
            if f == 0.0 {
                continue;
            }
            let dst = &mut self.t[r * w..r * w + w];
            for (d, s) in dst.iter_mut().zip(self.pivot_buf.iter()) {
                *d -= f * s;
            }
            self.t[r * w + col] = 0.0;
        }
        let f = self.obj_row[col];
        if f != 0.0 {
            for c in 0..self.ncols {
                self.obj_row[c] -= f * self.pivot_buf[c];
            }
            self.obj_val += f * self.pivot_buf[self.ncols];
            self.obj_row[col] = 0.0;
        }
        self.basis[row] = col;
    }

    /// Runs the simplex loop on the current objective row. `ban_from` bars
    /// columns (artificials) from entering. Returns the entering column on
    /// unboundedness.
    fn optimize(&mut self, ban_from: usize, iter_budget: usize) -> Result<Option<usize>, LpError> {
        let mut iters = 0usize;
        let mut bland = false;
        let mut stall = 0usize;
        let stall_limit = 2 * (self.m + self.ncols) + 200;
        loop {
            let mut enter = None;
            if bland {
                for c in 0..ban_from {
                    if self.obj_row[c] < -TOL_RC {
                        enter = Some(c);
                        break;
                    }
                }
            } else {
                let mut best = -TOL_RC;
                for c in 0..ban_from {
                    if self.obj_row[c] < best {
                        best = self.obj_row[c];
                        enter = Some(c);
                    }
                }
            }
            let Some(e) = enter else {
                return Ok(None);
            };
            let mut leave: Option<(usize, f64)> = None;
            for r in 0..self.m {
                let a = self.at(r, e);
                if a > TOL_PIVOT {
                    let ratio = self.rhs(r) / a;
                    match leave {
                        None => leave = Some((r, ratio)),
                        Some((lr, lratio)) => {
                            if ratio < lratio - 1e-12
                                || (ratio < lratio + 1e-12 && self.basis[r] < self.basis[lr])
                            {
                                leave = Some((r, ratio));
                            }
                        }
                    }
                }
            }
            let Some((r, _)) = leave else {
                // The incremental objective row drifts; recompute this
                // column's reduced cost before concluding unboundedness.
                let mut rc = self.costs[e];
                for i in 0..self.m {
                    let cb = self.costs[self.basis[i]];
                    if cb != 0.0 {
                        rc -= cb * self.at(i, e);
                    }
                }
                if rc >= -TOL_RC {
                    self.obj_row[e] = rc.max(0.0);
                    continue;
                }
                return Ok(Some(e));
            };
            let before = self.obj_val;
            self.pivot(r, e);
            if (before - self.obj_val).abs() <= 1e-12 * (1.0 + before.abs()) {
                stall += 1;
                if stall > stall_limit {
                    bland = true;
                }
            } else {
                stall = 0;
            }
            iters += 1;
            if iters > iter_budget {
                return Err(LpError::IterationLimit(iters));
            }
        }
    }

    fn set_objective(&mut self, costs: &[f64]) {
        debug_assert_eq!(costs.len(), self.ncols);
        let mut obj_row = costs.to_vec();
        let mut obj_val = 0.0;
        for r in 0..self.m {
            let cb = costs[self.basis[r]];
            if cb == 0.0 {
                continue;
            }
            for c in 0..self.ncols {
                obj_row[c] -= cb * self.at(r, c);
            }
            obj_val += cb * self.rhs(r);
        }
        self.obj_row = obj_row;
        self.obj_val = obj_val;
        self.costs = costs.to_vec();
    }
}

pub(super) fn solve(instance: &LpInstance, tol: f64) -> Result<LpOutcome, LpError> {
    let n = instance.num_vars;

    // Rewrite variables to nonnegative standard form.
    let mut var_map = Vec::with_capacity(n);
    let mut n_struct = 0usize;
    let mut extra_rows: Vec<(usize, f64)> = Vec::new(); // (std col, upper) for two-sided bounds
    for (_, &(lo, hi)) in instance.bounds.iter().enumerate() {
        if lo.is_finite() {
            let col = n_struct;
            n_struct += 1;
            var_map.push(VarMap::Shift { col, lo });
            if hi.is_finite() {
                extra_rows.push((col, hi - lo));
            }
        } else if hi.is_finite() {
            let col = n_struct;
            n_struct += 1;
            var_map.push(VarMap::Mirror { col, hi });
        } else {
            let pos = n_struct;
            let neg = n_struct + 1;
            n_struct += 2;
            var_map.push(VarMap::Split { pos, neg });
        }
    }

    // Structural costs and objective constant.
    let mut costs_struct = vec![0.0; n_struct];
    let mut obj_const = 0.0;
    for (j, &c) in instance.objective.iter().enumerate() {
        match var_map[j] {
            VarMap::Shift { col, lo } => {
                costs_struct[col] += c;
                obj_const += c * lo;
            }
            VarMap::Mirror { col, hi } => {
                costs_struct[col] -= c;
                obj_const += c * hi;
            }
            VarMap::Split { pos, neg } => {
                costs_struct[pos] += c;
                costs_struct[neg] -= c;
            }
        }
    }

    struct BuildRow {
        dense: Vec<f64>,
        rel: Relation,
        rhs: f64,
        id: usize,
    }
    let mut rows = Vec::with_capacity(instance.rows.len() + extra_rows.len());
    for (r, row) in instance.rows.iter().enumerate() {
        let mut dense = vec![0.0; n_struct];
        let mut rhs = row.rhs;
        for &(j, c) in &row.coeffs {
            match var_map[j] {
                VarMap::Shift { col, lo } => {
                    dense[col] += c;
                    rhs -= c * lo;
                }
                VarMap::Mirror { col, hi } => {
                    dense[col] -= c;
                    rhs -= c * hi;
                }
                VarMap::Split { pos, neg } => {
                    dense[pos] += c;
                    dense[neg] -= c;
                }
            }
        }
        rows.push(BuildRow {
            dense,
            rel: row.rel,
            rhs,
            id: r,
        });
    }
    for &(col, ub) in &extra_rows {
        let mut dense = vec![0.0; n_struct];
        dense[col] = 1.0;
        rows.push(BuildRow {
            dense,
            rel: Relation::Le,
            rhs: ub,
            id: usize::MAX,
        });
    }

    // Scale rows, then orient them so every rhs is nonnegative.
    let m = rows.len();
    let mut row_sign = vec![1.0; m];
    let mut row_scale = vec![1.0; m];
    for (r, row) in rows.iter_mut().enumerate() {
        let mut mag = row.rhs.abs();
        for &v in &row.dense {
            mag = mag.max(v.abs());
        }
        if mag > 0.0 {
            row_scale[r] = mag;
            let inv = 1.0 / mag;
            for v in &mut row.dense {
                *v *= inv;
            }
            row.rhs *= inv;
        }
        if row.rhs < 0.0 {
            row_sign[r] = -1.0;
            for v in &mut row.dense {
                *v = -*v;
            }
            row.rhs = -row.rhs;
            row.rel = match row.rel {
                Relation::Le => Relation::Ge,
                Relation::Ge => Relation::Le,
                Relation::Eq => Relation::Eq,
            };
        }
    }

    // Column layout: structural, slack/surplus, artificials.
    let n_slack = rows
        .iter()
        .filter(|r| matches!(r.rel, Relation::Le | Relation::Ge))
        .count();
    let n_art = rows
        .iter()
        .filter(|r| matches!(r.rel, Relation::Ge | Relation::Eq))
        .count();
    let art_start = n_struct + n_slack;
    let ncols = art_start + n_art;
    let width = ncols + 1;

    let mut t = vec![0.0; m * width];
    let mut basis = vec![0usize; m];
    let mut dual_col = vec![0usize; m];
    let mut slack_cursor = n_struct;
    let mut art_cursor = art_start;
    for (r, row) in rows.iter().enumerate() {
        for (c, &v) in row.dense.iter().enumerate() {
            t[r * width + c] = v;
        }
        t[r * width + ncols] = row.rhs;
        match row.rel {
            Relation::Le => {
                t[r * width + slack_cursor] = 1.0;
                basis[r] = slack_cursor;
                dual_col[r] = slack_cursor;
                slack_cursor += 1;
            }
            Relation::Ge => {
                t[r * width + slack_cursor] = -1.0;
                slack_cursor += 1;
                t[r * width + art_cursor] = 1.0;
                basis[r] = art_cursor;
                dual_col[r] = art_cursor;
                art_cursor += 1;
            }
            Relation::Eq => {
                t[r * width + art_cursor] = 1.0;
                basis[r] = art_cursor;
                dual_col[r] = art_cursor;
                art_cursor += 1;
            }
        }
    }

    let mut tab = Tableau {
        t,
        m,
        width,
        ncols,
        obj_row: Vec::new(),
        obj_val: 0.0,
        costs: Vec::new(),
        basis,
        row_ids: rows.iter().map(|r| r.id).collect(),
        row_sign,
        row_scale,
        dual_col,
        n_struct,
        art_start,
        pivot_buf: Vec::new(),
    };

    let iter_budget = 200 * (m + ncols) + 20_000;

    // Phase 1: minimize the artificial sum.
    if n_art > 0 {
        let mut phase1 = vec![0.0; ncols];
        for c in art_start..ncols {
            phase1[c] = 1.0;
        }
        tab.set_objective(&phase1);
        let unbounded = tab.optimize(ncols, iter_budget)?;
        if unbounded.is_some() {
            return Err(LpError::NumericalFailure(
                "phase 1 reported unbounded".into(),
            ));
        }
        let feas_threshold = tol.max(1e-10) * 100.0;
        if tab.obj_val > feas_threshold {
            return Ok(LpOutcome::Infeasible);
        }
        drive_out_artificials(&mut tab);
    }

    // Phase 2 on the real costs.
    let mut phase2 = vec![0.0; tab.ncols];
    phase2[..n_struct].copy_from_slice(&costs_struct);
    tab.set_objective(&phase2);
    if let Some(enter) = tab.optimize(tab.art_start, iter_budget)? {
        // Unbounded: assemble the recession direction in structural space.
        let mut d_struct = vec![0.0; tab.n_struct];
        if enter < tab.n_struct {
            d_struct[enter] = 1.0;
        }
        for r in 0..tab.m {
            let b = tab.basis[r];
            if b < tab.n_struct {
                d_struct[b] = -tab.at(r, enter);
            }
        }
        let mut ray = vec![0.0; n];
        for (j, vm) in var_map.iter().enumerate() {
            ray[j] = match *vm {
                VarMap::Shift { col, .. } => d_struct[col],
                VarMap::Mirror { col, .. } => -d_struct[col],
                VarMap::Split { pos, neg } => d_struct[pos] - d_struct[neg],
            };
        }
        return Ok(LpOutcome::Unbounded { ray });
    }

    // Optimal: recover the primal point and the row duals.
    let mut x_struct = vec![0.0; tab.n_struct];
    for r in 0..tab.m {
        let b = tab.basis[r];
        if b < tab.n_struct {
            x_struct[b] = tab.rhs(r);
        }
    }
    let mut primal = vec![0.0; n];
    for (j, vm) in var_map.iter().enumerate() {
        primal[j] = match *vm {
            VarMap::Shift { col, lo } => lo + x_struct[col],
            VarMap::Mirror { col, hi } => hi - x_struct[col],
            VarMap::Split { pos, neg } => x_struct[pos] - x_struct[neg],
        };
    }
    let mut dual = vec![0.0; instance.rows.len()];
    for r in 0..tab.m {
        let id = tab.row_ids[r];
        if id == usize::MAX {
            continue;
        }
        let y_tab = -tab.obj_row[tab.dual_col[r]];
        dual[id] = y_tab * tab.row_sign[r] / tab.row_scale[r];
    }
    let objective = tab.obj_val + obj_const;
    Ok(LpOutcome::Optimal(Optimal {
        primal,
        dual,
        objective,
    }))
}

/// After phase 1, pivot every artificial out of the basis; rows that admit no
/// structural pivot are redundant and get removed.
fn drive_out_artificials(tab: &mut Tableau) {
    let mut r = 0;
    while r < tab.m {
        if tab.basis[r] >= tab.art_start {
            let mut pivot_col = None;
            for c in 0..tab.art_start {
                if tab.at(r, c).abs() > 1e-7 {
                    pivot_col = Some(c);
                    break;
                }
            }
            match pivot_col {
                Some(c) => {
                    tab.pivot(r, c);
                    r += 1;
                }
                None => {
                    // Redundant row: remove it by swapping in the last row.
                    let last = tab.m - 1;
                    if r != last {
                        for c in 0..tab.width {
                            tab.t[r * tab.width + c] = tab.t[last * tab.width + c];
                        }
                        tab.basis[r] = tab.basis[last];
                        tab.row_ids[r] = tab.row_ids[last];
                        tab.row_sign[r] = tab.row_sign[last];
                        tab.row_scale[r] = tab.row_scale[last];
                        tab.dual_col[r] = tab.dual_col[last];
                    }
                    tab.m -= 1;
                    tab.t.truncate(tab.m * tab.width);
                    tab.basis.truncate(tab.m);
                    tab.row_ids.truncate(tab.m);
                    tab.row_sign.truncate(tab.m);
                    tab.row_scale.truncate(tab.m);
                    tab.dual_col.truncate(tab.m);
                }
            }
        } else {
            r += 1;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::super::{Backend, LpInstance, LpOutcome, Relation};

    fn solve(lp: &LpInstance) -> LpOutcome {
        super::super::solve_with(lp, 1e-9, Backend::DenseSimplex).unwrap()
    }

    #[test]
    fn degenerate_equalities() {
        // x + y = 1 stated twice; min x.
        let mut lp = LpInstance::new(2);
        lp.objective = vec![1.0, 0.0];
        lp.add_row(vec![(0, 1.0), (1, 1.0)], Relation::Eq, 1.0);
        lp.add_row(vec![(0, 1.0), (1, 1.0)], Relation::Eq, 1.0);
        let out = solve(&lp);
        let opt = out.expect_optimal();
        assert!(opt.objective.abs() < 1e-9);
        assert!((opt.primal[1] - 1.0).abs() < 1e-9);
    }

    #[test]
    fn dual_signs_by_relation() {
        // Binding >= row gives nonnegative dual, <= row nonpositive.
        let mut lp = LpInstance::new(2);
        lp.objective = vec![1.0, -1.0];
        lp.add_row(vec![(0, 1.0)], Relation::Ge, 2.0);
        lp.add_row(vec![(1, 1.0)], Relation::Le, 3.0);
        let out = solve(&lp);
        let opt = out.expect_optimal();
        assert!((opt.objective + 1.0).abs() < 1e-9);
        assert!(opt.dual[0] >= -1e-12);
        assert!(opt.dual[1] <= 1e-12);
        assert!((opt.dual[0] - 1.0).abs() < 1e-9);
        assert!((opt.dual[1] + 1.0).abs() < 1e-9);
    }

    #[test]
    fn mixed_scales_pivot_safely(){
        let mut lp = LpInstance::new(2);
        lp.objective = vec![1.0, 1e6];
        lp.add_row(vec![(0, 1e6), (1, 1.0)], Relation::Ge, 2e6);
        lp.add_row(vec![(0, 1.0), (1, -1e-6)], Relation::Le, 1.0);
        let out = solve(&lp);
        let opt = out.expect_optimal();
        assert!(lp.infeasibility(&opt.primal) < 1e-8);
    }

    #[test]
    fn redundant_rows_are_dropped() {
        // Third equality is the sum of the first two.
        let mut lp = LpInstance::new(3);
        lp.objective = vec![1.0, 1.0, 1.0];
        lp.add_row(vec![(0, 1.0), (1, 1.0)], Relation::Eq, 1.0);
        lp.add_row(vec![(1, 1.0), (2, 1.0)], Relation::Eq, 1.0);
        lp.add_row(vec![(0, 1.0), (1, 2.0), (2, 1.0)], Relation::Eq, 2.0);
        let out = solve(&lp);
        let opt = out.expect_optimal();
        assert!(lp.infeasibility(&opt.primal) < 1e-9);
        // x = 1 - y, z = 1 - y, so the objective 2 - y is minimized at y = 1.
        assert!((opt.objective - 1.0).abs() < 1e-9);
    }
}
