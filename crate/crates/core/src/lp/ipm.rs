//! Interior-point backend (Clarabel) for instances too large for the dense
//! tableau. Handles sparse assembly, dual sign mapping, and certificate
//! extraction for infeasible/unbounded statuses.

use clarabel::algebra::CscMatrix;
use clarabel::solver::{
    DefaultSettingsBuilder, DefaultSolver, IPSolver, SolverStatus,
    SupportedConeT::{NonnegativeConeT, ZeroConeT},
};

use super::{LpError, LpInstance, LpOutcome, Optimal, Relation};

fn csc_from_triplets(m: usize, n: usize, mut trips: Vec<(usize, usize, f64)>) -> CscMatrix {
    trips.sort_unstable_by(|a, b| (a.1, a.0).cmp(&(b.1, b.0)));
    let mut colptr = Vec::with_capacity(n + 1);
    let mut rowval = Vec::with_capacity(trips.len());
    let mut nzval = Vec::with_capacity(trips.len());
    colptr.push(0);
    let mut col = 0usize;
    for (r, c, v) in trips {
        while col < c {
            colptr.push(rowval.len());
            col += 1;
        }
        rowval.push(r);
        nzval.push(v);
    }
    while col < n {
        colptr.push(rowval.len());
        col += 1;
    }
    CscMatrix::new(m, n, colptr, rowval, nzval)
}

pub(super) fn solve(instance: &LpInstance, tol: f64) -> Result<LpOutcome, LpError> {
    let n = instance.num_vars;

    // Cone order: equalities first (zero cone), then every inequality in
    // `a.x <= b` orientation, then the finite variable bounds.
    let mut trips: Vec<(usize, usize, f64)> = Vec::new();
    let mut b = Vec::new();
    let mut eq_rows = Vec::new();
    let mut ineq_rows = Vec::new();
    for (r, row) in instance.rows.iter().enumerate() {
        if row.rel == Relation::Eq {
            eq_rows.push(r);
        } else {
            ineq_rows.push(r);
        }
    }
    let mut cone_row = 0usize;
    // row index in the cone stack per original row, with orientation sign
    let mut placement = vec![(0usize, 1.0f64); instance.rows.len()];
    for &r in &eq_rows {
        let row = &instance.rows[r];
        for &(v, c) in &row.coeffs {
            trips.push((cone_row, v, c));
        }
        b.push(row.rhs);
        placement[r] = (cone_row, 1.0);
        cone_row += 1;
    }
    let n_eq = cone_row;
    for &r in &ineq_rows {
        let row = &instance.rows[r];
        let sign = if row.rel == Relation::Ge { -1.0 } else { 1.0 };
        for &(v, c) in &row.coeffs {
            trips.push((cone_row, v, sign * c));
        }
        b.push(sign * row.rhs);
        placement[r] = (cone_row, sign);
        cone_row += 1;
    }
    for (v, &(lo, hi)) in instance.bounds.iter().enumerate() {
        if lo.is_finite() {
            trips.push((cone_row, v, -1.0));
            b.push(-lo);
            cone_row += 1;
        }
        if hi.is_finite() {
            trips.push((cone_row, v, 1.0));
            b.push(hi);
            cone_row += 1;
        }
    }
    let n_ineq = cone_row - n_eq;

    let a = csc_from_triplets(cone_row, n, trips);
    let p = CscMatrix::zeros((n, n));
    let mut cones = Vec::new();
    if n_eq > 0 {
        cones.push(ZeroConeT(n_eq));
    }
    if n_ineq > 0 {
        cones.push(NonnegativeConeT(n_ineq));
    }

    let settings = DefaultSettingsBuilder::default()
        .verbose(false)
        .max_iter(200)
        .tol_feas(tol.min(1e-9))
        .tol_gap_abs(1e-10)
        .tol_gap_rel(1e-10)
        .build()
        .map_err(|e| LpError::NumericalFailure(format!("settings: {e}")))?;
    let mut solver = DefaultSolver::new(&p, &instance.objective, &a, &b, &cones, settings)
        .map_err(|e| LpError::NumericalFailure(format!("setup: {e:?}")))?;
    solver.solve();
    let sol = &solver.solution;
    match sol.status {
        SolverStatus::Solved | SolverStatus::AlmostSolved => {
            let primal = sol.x.clone();
            let mut dual = vec![0.0; instance.rows.len()];
            for (r, &(cr, sign)) in placement.iter().enumerate() {
                // KKT: q + A' z = 0 under `A x <= b`; translate to the
                // reporting convention (>= rows carry nonnegative duals).
                let z = sol.z[cr];
                dual[r] = match instance.rows[r].rel {
                    Relation::Ge => z * (-sign),
                    Relation::Le | Relation::Eq => -z,
                };
            }
            let objective = instance.objective_value(&primal);
            Ok(LpOutcome::Optimal(Optimal {
                primal,
                dual,
                objective,
            }))
        }
        SolverStatus::PrimalInfeasible | SolverStatus::AlmostPrimalInfeasible => {
            Ok(LpOutcome::Infeasible)
        }
        SolverStatus::DualInfeasible | SolverStatus::AlmostDualInfeasible => {
            Ok(LpOutcome::Unbounded { ray: sol.x.clone() })
        }
        other => Err(LpError::NumericalFailure(format!("{other:?}"))),
    }
}

#[cfg(test)]
mod tests {
    use super::super::{solve_with, Backend, LpInstance, Relation};

    #[test]
    fn equality_dual_sign() {
        // min x s.t. x = 1 has dual 1 under the reporting convention.
        let mut lp = LpInstance::new(1);
        lp.objective = vec![1.0];
        lp.add_row(vec![(0, 1.0)], Relation::Eq, 1.0);
        let out = solve_with(&lp, 1e-9, Backend::InteriorPoint).unwrap();
        let opt = out.expect_optimal();
        assert!((opt.dual[0] - 1.0).abs() < 1e-6, "dual {:?}", opt.dual);
    }

    #[test]
    fn csc_assembly_handles_empty_columns() {
        // Variable 1 appears in no row; it sits at its bound.
        let mut lp = LpInstance::new(3);
        lp.objective = vec![1.0, 1.0, 1.0];
        lp.add_row(vec![(0, 1.0), (2, 1.0)], Relation::Ge, 2.0);
        let out = solve_with(&lp, 1e-9, Backend::InteriorPoint).unwrap();
        let opt = out.expect_optimal();
        assert!(opt.primal[1].abs() < 1e-7);
        assert!((opt.objective - 2.0).abs() < 1e-6);
    }
}
