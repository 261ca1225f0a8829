//! Decomposition solver for the assembled multi-user problem.
//!
//! The master program optimizes the shared column variables `y` and one cost
//! guess `w_m` per user, subject to an accumulating cut set. Each user's
//! block is validated through its dual subproblem: a bounded dual whose value
//! beats `w_m` yields an optimality cut, an unbounded dual yields a
//! feasibility cut from its extreme ray. Iteration stops when the gap between
//! the running master lower bound and the best feasible combined objective
//! falls under the convergence margin.

use rayon::prelude::*;
use thiserror::Error;

use crate::formulation::{ClrProblem, ClrSolution, UserBlock};
use crate::lp::{self, LpInstance, LpOutcome, Relation};

#[derive(Debug, Error)]
pub enum BendersError {
    #[error("master program infeasible at iteration {iteration}: the cut set is contradictory or the assembled problem itself is infeasible")]
    MasterInfeasible { iteration: usize },
    #[error("master program unbounded at iteration {iteration}")]
    MasterUnbounded { iteration: usize },
    #[error("subproblem {user} has an infeasible dual; aborting")]
    DualInfeasible { user: usize },
    #[error("no feasible incumbent after {0} iterations")]
    NoIncumbent(usize),
    #[error(transparent)]
    Lp(#[from] lp::LpError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CutKind {
    Feasibility,
    Optimality,
}

/// A master-program cut contributed by one user's subproblem.
///
/// Feasibility: `sum_k coeff_k y_k >= rhs`. Optimality: `w_user +
/// sum_k coeff_k y_k >= rhs`.
#[derive(Debug, Clone)]
pub struct Cut {
    pub kind: CutKind,
    pub user: usize,
    pub y_coeffs: Vec<(usize, f64)>,
    pub rhs: f64,
}

/// Relative tolerance for emitting an optimality cut; guards against cut
/// cycling from solver noise.
pub const CUT_TOL: f64 = 1e-7;

/// Default gap at which the iteration stops, in km of expected cost.
pub const DEFAULT_MARGIN_KM: f64 = 0.01;

#[derive(Debug, Clone, Copy)]
pub struct BendersOptions {
    pub convergence_margin_km: f64,
    pub max_iters: usize,
    pub w_floor: f64,
    pub lp_tol: f64,
}

impl Default for BendersOptions {
    fn default() -> Self {
        BendersOptions {
            convergence_margin_km: DEFAULT_MARGIN_KM,
            max_iters: 400,
            w_floor: 0.0,
            lp_tol: 1e-9,
        }
    }
}

#[derive(Debug, Clone)]
pub struct BendersState {
    pub iterations: usize,
    pub cuts: Vec<Cut>,
    pub incumbent_y: Vec<f64>,
    pub incumbent_w: Vec<f64>,
    pub best_upper_km: f64,
    pub best_lower_km: f64,
    /// (lower bound, best upper bound) after each iteration.
    pub trace: Vec<(f64, f64)>,
    pub converged: bool,
}

impl BendersState {
    pub fn gap_km(&self) -> f64 {
        self.best_upper_km - self.best_lower_km
    }

    /// Convergence trace as CSV rows `iter,lower_km,upper_km`.
    pub fn write_trace_csv<W: std::io::Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "iter,lower_km,upper_km")?;
        for (i, (lo, hi)) in self.trace.iter().enumerate() {
            writeln!(w, "{},{:.9},{:.9}", i, lo, hi)?;
        }
        Ok(())
    }
}

/// Solves the master program over `(y, w)` for the current cut set, plus any
/// pure-`y` rows promoted out of the blocks.
pub fn master_solve(
    alpha: &[f64],
    num_users: usize,
    static_rows: &[(usize, Vec<(usize, f64)>, f64)],
    cuts: &[Cut],
    options: &BendersOptions,
    iteration: usize,
) -> Result<(Vec<f64>, Vec<f64>, f64), BendersError> {
    let k = alpha.len();
    let mut lp = LpInstance::new(k + num_users);
    lp.objective[..k].copy_from_slice(alpha);
    for m in 0..num_users {
        lp.objective[k + m] = 1.0;
        lp.bounds[k + m] = (options.w_floor, f64::INFINITY);
    }
    for (_user, coeffs, rhs) in static_rows {
        lp.add_row(coeffs.clone(), Relation::Ge, *rhs);
    }
    for cut in cuts {
        let mut coeffs = cut.y_coeffs.clone();
        if cut.kind == CutKind::Optimality {
            coeffs.push((k + cut.user, 1.0));
        }
        lp.add_row(coeffs, Relation::Ge, cut.rhs);
    }
    match lp::solve(&lp, options.lp_tol)? {
        LpOutcome::Optimal(opt) => {
            let y = opt.primal[..k].to_vec();
            let w = opt.primal[k..].to_vec();
            Ok((y, w, opt.objective))
        }
        LpOutcome::Infeasible => Err(BendersError::MasterInfeasible { iteration }),
        LpOutcome::Unbounded { .. } => Err(BendersError::MasterUnbounded { iteration }),
    }
}

#[derive(Debug, Clone)]
pub enum SubOutcome {
    /// Bounded dual: its value is the block's optimal cost at `y_bar`; the
    /// primal free-variable values come along for extraction.
    Optimal {
        dual_u: Vec<f64>,
        z_free: Vec<f64>,
        value: f64,
    },
    /// Unbounded dual: the block is infeasible at `y_bar`; the extreme ray
    /// drives a feasibility cut.
    DualUnbounded { ray: Vec<f64> },
    /// Dual infeasible: the block cost is unbounded below. Aborts the run.
    DualInfeasible,
}

/// Right-hand side of a block at a fixed `y`: `b - G y` per row.
fn block_rhs(block: &UserBlock, y: &[f64]) -> Vec<f64> {
    block
        .b
        .iter()
        .zip(block.g_rows.iter())
        .map(|(&b, g)| b - g.iter().map(|&(k, v)| v * y[k]).sum::<f64>())
        .collect()
}

/// Solves one user's dual subproblem
/// `max (b - G y)' u  s.t.  A' u <= c', u >= 0`.
pub fn subproblem_solve(
    block: &UserBlock,
    y_bar: &[f64],
    lp_tol: f64,
) -> Result<SubOutcome, BendersError> {
    let n_rows = block.b.len();
    let n_free = block.free_vars.len();
    let rhs = block_rhs(block, y_bar);
    if n_rows == 0 {
        return Ok(SubOutcome::Optimal {
            dual_u: Vec::new(),
            z_free: Vec::new(),
            value: 0.0,
        });
    }
    // Transpose the block: one <= row per free variable.
    let mut cols: Vec<Vec<(usize, f64)>> = vec![Vec::new(); n_free];
    for (r, row) in block.a_rows.iter().enumerate() {
        for &(fv, coeff) in row {
            cols[fv].push((r, coeff));
        }
    }
    let mut lp = LpInstance::new(n_rows);
    for (r, &v) in rhs.iter().enumerate() {
        lp.objective[r] = -v;
    }
    for (fv, col) in cols.into_iter().enumerate() {
        lp.add_row(col, Relation::Le, block.free_costs[fv]);
    }
    match lp::solve(&lp, lp_tol)? {
        LpOutcome::Optimal(opt) => {
            let value = -opt.objective;
            let z_free = opt.dual.iter().map(|&d| (-d).max(0.0)).collect();
            Ok(SubOutcome::Optimal {
                dual_u: opt.primal,
                z_free,
                value,
            })
        }
        LpOutcome::Unbounded { ray } => Ok(SubOutcome::DualUnbounded { ray }),
        LpOutcome::Infeasible => Ok(SubOutcome::DualInfeasible),
    }
}

/// Accumulates `G' u` over the shared columns.
fn y_coeffs_from_multipliers(block: &UserBlock, u: &[f64]) -> Vec<(usize, f64)> {
    let mut acc = vec![0.0; block.k_total];
    for (r, g) in block.g_rows.iter().enumerate() {
        let ur = u[r];
        if ur == 0.0 {
            continue;
        }
        for &(k, v) in g {
            acc[k] += ur * v;
        }
    }
    acc.into_iter()
        .enumerate()
        .filter(|&(_, v)| v.abs() > 1e-14)
        .collect()
}

fn b_dot(block: &UserBlock, u: &[f64]) -> f64 {
    block.b.iter().zip(u.iter()).map(|(&b, &ur)| b * ur).sum()
}

/// Turns a subproblem outcome into a cut, if one is warranted: an unbounded
/// dual always cuts; a bounded dual cuts only when its value exceeds the
/// master's guess `w_bar` beyond tolerance. A dual-infeasible outcome yields
/// no cut here; the caller aborts.
pub fn make_cut(
    outcome: &SubOutcome,
    block: &UserBlock,
    user: usize,
    w_bar: f64,
) -> Option<Cut> {
    match outcome {
        SubOutcome::DualUnbounded { ray } => {
            let mut coeffs = y_coeffs_from_multipliers(block, ray);
            let mut rhs = b_dot(block, ray);
            // Normalize for numerical stability; scaling keeps the cut valid.
            let scale = coeffs
                .iter()
                .map(|&(_, v)| v.abs())
                .fold(rhs.abs(), f64::max);
            if scale > 0.0 {
                for (_, v) in coeffs.iter_mut() {
                    *v /= scale;
                }
                rhs /= scale;
            }
            Some(Cut {
                kind: CutKind::Feasibility,
                user,
                y_coeffs: coeffs,
                rhs,
            })
        }
        SubOutcome::Optimal { dual_u, value, .. } => {
            if w_bar < value - CUT_TOL * (1.0 + value.abs()) {
                Some(Cut {
                    kind: CutKind::Optimality,
                    user,
                    y_coeffs: y_coeffs_from_multipliers(block, dual_u),
                    rhs: b_dot(block, dual_u),
                })
            } else {
                None
            }
        }
        SubOutcome::DualInfeasible => None,
    }
}

/// Runs the decomposition to the given margin. Returns the best incumbent
/// solution (the smallest feasible combined objective seen) and the full
/// iteration state.
pub fn run(
    problem: &ClrProblem,
    options: &BendersOptions,
) -> Result<(ClrSolution, BendersState), BendersError> {
    let k = problem.k_total;
    let num_users = problem.users.len();
    let static_rows: Vec<(usize, Vec<(usize, f64)>, f64)> = problem
        .users
        .iter()
        .enumerate()
        .flat_map(|(u, block)| {
            block
                .master_rows
                .iter()
                .map(move |(coeffs, rhs)| (u, coeffs.clone(), *rhs))
        })
        .collect();

    let mut cuts: Vec<Cut> = Vec::new();
    let mut trace = Vec::new();
    let mut best_upper = f64::INFINITY;
    let mut best_lower = f64::NEG_INFINITY;
    let mut incumbent: Option<(Vec<f64>, Vec<f64>, Vec<Vec<f64>>)> = None;
    let mut converged = false;
    let mut iterations = 0;

    while iterations < options.max_iters {
        iterations += 1;
        let (y_bar, w_bar, master_obj) =
            master_solve(&problem.alpha, num_users, &static_rows, &cuts, options, iterations)?;
        // Cuts only accumulate, so the master objective cannot decrease.
        best_lower = best_lower.max(master_obj);

        let outcomes: Vec<SubOutcome> = problem
            .users
            .par_iter()
            .map(|block| subproblem_solve(block, &y_bar, options.lp_tol))
            .collect::<Result<_, _>>()?;

        if let Some(user) = outcomes
            .iter()
            .position(|o| matches!(o, SubOutcome::DualInfeasible))
        {
            return Err(BendersError::DualInfeasible { user });
        }

        let alpha_part: f64 = problem
            .alpha
            .iter()
            .zip(y_bar.iter())
            .map(|(a, y)| a * y)
            .sum();
        if outcomes
            .iter()
            .all(|o| matches!(o, SubOutcome::Optimal { .. }))
        {
            let total: f64 = alpha_part
                + outcomes
                    .iter()
                    .map(|o| match o {
                        SubOutcome::Optimal { value, .. } => *value,
                        _ => unreachable!(),
                    })
                    .sum::<f64>();
            if total < best_upper {
                best_upper = total;
                let z_frees = outcomes
                    .iter()
                    .map(|o| match o {
                        SubOutcome::Optimal { z_free, .. } => z_free.clone(),
                        _ => unreachable!(),
                    })
                    .collect();
                incumbent = Some((y_bar.clone(), w_bar.clone(), z_frees));
            }
        }

        trace.push((best_lower, best_upper));
        if best_upper - best_lower <= options.convergence_margin_km {
            converged = true;
            break;
        }

        let new_cuts: Vec<Cut> = outcomes
            .iter()
            .enumerate()
            .filter_map(|(u, o)| make_cut(o, &problem.users[u], u, w_bar[u]))
            .collect();
        if new_cuts.is_empty() {
            // No subproblem disagrees with the master, so the bounds have met
            // as closely as the tolerances allow.
            converged = best_upper - best_lower <= options.convergence_margin_km;
            break;
        }
        cuts.extend(new_cuts);
    }

    let (incumbent_y, incumbent_w, z_frees) =
        incumbent.ok_or(BendersError::NoIncumbent(iterations))?;
    let solution = ClrSolution {
        y: incumbent_y.clone(),
        z_free: z_frees,
        objective: best_upper,
    };
    let state = BendersState {
        iterations,
        cuts,
        incumbent_y,
        incumbent_w,
        best_upper_km: best_upper,
        best_lower_km: best_lower,
        trace,
        converged,
    };
    Ok((solution, state))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::formulation::{
        assemble_clr, build_indicator, solve_clr_direct, ClrConfig, TailRule, UserLpData,
    };
    use crate::geo::{build_geoind_graph, lr_set, obf_range, GridSpec, LocationModel};

    fn default_opts() -> BendersOptions {
        BendersOptions::default()
    }

    #[test]
    fn master_with_no_cuts_sits_at_floor() {
        let alpha = vec![1.0, 2.0];
        let opts = default_opts();
        let (y, w, obj) = master_solve(&alpha, 2, &[], &[], &opts, 0).unwrap();
        assert!(y.iter().all(|&v| v.abs() < 1e-9));
        assert!(w.iter().all(|&v| v.abs() < 1e-9));
        assert!(obj.abs() < 1e-9);
    }

    #[test]
    fn master_trades_w_against_y() {
        // One optimality cut w_0 + y_0 >= 3 with alpha_0 = 1: any point on
        // the cut's facet costs 3.
        let alpha = vec![1.0];
        let cut = Cut {
            kind: CutKind::Optimality,
            user: 0,
            y_coeffs: vec![(0, 1.0)],
            rhs: 3.0,
        };
        let opts = default_opts();
        let (y, w, obj) = master_solve(&alpha, 1, &[], &[cut], &opts, 0).unwrap();
        assert!((obj - 3.0).abs() < 1e-9);
        assert!((y[0] + w[0] - 3.0).abs() < 1e-9);
    }

    #[test]
    fn feasibility_cut_excludes_previous_point() {
        // Static row y_0 >= 0 only; pretend a ray demanded y_0 >= 1.
        let alpha = vec![1.0];
        let cut = Cut {
            kind: CutKind::Feasibility,
            user: 0,
            y_coeffs: vec![(0, 1.0)],
            rhs: 1.0,
        };
        let opts = default_opts();
        let (y0, _, _) = master_solve(&alpha, 1, &[], &[], &opts, 0).unwrap();
        let (y1, _, _) = master_solve(&alpha, 1, &[], &[cut.clone()], &opts, 0).unwrap();
        let violated = cut
            .y_coeffs
            .iter()
            .map(|&(k, v)| v * y0[k])
            .sum::<f64>()
            < cut.rhs - 1e-9;
        assert!(violated, "old point should violate the new cut");
        assert!(y1[0] >= 1.0 - 1e-9);
    }

    // Exponential decay must outpace the grid spacing for fully tied rows to
    // admit nonnegative y; epsilon * cell = 5 here.
    fn tiny_problem(
        r_exp: f64,
        users: &[usize],
    ) -> (crate::formulation::ClrProblem, Vec<crate::geo::LrSet>) {
        let m = LocationModel::from_grid(&GridSpec::planar(3, 3, 0.5)).unwrap();
        let g = build_geoind_graph(&m, 0.75).unwrap();
        let config = ClrConfig {
            epsilon_per_km: 10.0,
            gamma_km: 0.75,
            tail_rule: TailRule::DistanceCapped,
        };
        let k = m.len();
        let cost: Vec<Vec<f64>> = (0..k)
            .map(|i| {
                (0..k)
                    .map(|j| m.distance_unchecked(i, j) / k as f64)
                    .collect()
            })
            .collect();
        let mut datas = Vec::new();
        let mut lrs = Vec::new();
        for &center in users {
            let lr = lr_set(&g, center, 1.2).unwrap();
            let obf = obf_range(&m, center, 1.0).unwrap();
            let ind = build_indicator(&lr, &m, r_exp, 1.0).unwrap();
            let full: Vec<Vec<f64>> = lr.members.iter().map(|&i| cost[i].clone()).collect();
            datas.push(UserLpData::build(&m, &lr, &obf, &ind, &full, &config).unwrap());
            lrs.push(lr);
        }
        (assemble_clr(&datas, &config).unwrap(), lrs)
    }

    #[test]
    fn empty_block_subproblem_is_trivially_optimal() {
        let (problem, _) = tiny_problem(0.0, &[4]);
        let block = &problem.users[0];
        assert!(block.b.is_empty());
        let y = vec![0.5; 9];
        match subproblem_solve(block, &y, 1e-9).unwrap() {
            SubOutcome::Optimal { value, .. } => assert_eq!(value, 0.0),
            other => panic!("expected optimal, got {other:?}"),
        }
    }

    #[test]
    fn subproblem_strong_duality_against_primal() {
        let (problem, _) = tiny_problem(0.5, &[4]);
        let block = &problem.users[0];
        // A feasible y: solve the whole thing directly and reuse its y.
        let direct = solve_clr_direct(&problem, 1e-9).unwrap();
        let outcome = subproblem_solve(block, &direct.y, 1e-9).unwrap();
        let SubOutcome::Optimal { value, z_free, .. } = outcome else {
            panic!("expected optimal subproblem");
        };
        // Primal restatement: minimize c'z s.t. A z >= b - G y.
        let rhs = super::block_rhs(block, &direct.y);
        let mut lp = LpInstance::new(block.free_vars.len());
        lp.objective = block.free_costs.clone();
        for (r, row) in block.a_rows.iter().enumerate() {
            lp.add_row(row.clone(), Relation::Ge, rhs[r]);
        }
        let primal = crate::lp::solve(&lp, 1e-9).unwrap();
        let popt = primal.expect_optimal();
        assert!(
            (popt.objective - value).abs() <= 1e-6 * (1.0 + value.abs()),
            "dual {value} vs primal {}",
            popt.objective
        );
        // The z' recovered from the dual solve is primal-feasible with the
        // same cost.
        let zcost: f64 = block
            .free_costs
            .iter()
            .zip(z_free.iter())
            .map(|(c, z)| c * z)
            .sum();
        assert!((zcost - value).abs() <= 1e-6 * (1.0 + value.abs()));
        for (r, row) in block.a_rows.iter().enumerate() {
            let lhs: f64 = row.iter().map(|&(fv, c)| c * z_free[fv]).sum();
            assert!(lhs >= rhs[r] - 1e-7, "row {r}: {lhs} < {}", rhs[r]);
        }
    }

    #[test]
    fn unit_row_without_mass_forces_feasibility_cut() {
        let (problem, _) = tiny_problem(0.5, &[4]);
        let block = &problem.users[0];
        // y = 0 starves every tied entry; rows with few free columns cannot
        // reach probability one... unless free variables can cover. Find out.
        let y0 = vec![0.0; 9];
        match subproblem_solve(block, &y0, 1e-9).unwrap() {
            SubOutcome::Optimal { .. } => {
                // Rows with free variables can sum to 1 on their own here.
            }
            SubOutcome::DualUnbounded { ray } => {
                let cut = make_cut(
                    &SubOutcome::DualUnbounded { ray },
                    block,
                    0,
                    0.0,
                )
                .expect("ray must produce a cut");
                // The cut must exclude y = 0.
                let lhs: f64 = cut.y_coeffs.iter().map(|&(k, v)| v * y0[k]).sum();
                assert!(lhs < cut.rhs - 1e-12);
            }
            SubOutcome::DualInfeasible => panic!("costs are nonnegative"),
        }
    }

    #[test]
    fn optimality_cut_tolerance() {
        let (problem, _) = tiny_problem(0.5, &[4]);
        let direct = solve_clr_direct(&problem, 1e-9).unwrap();
        let block = &problem.users[0];
        let outcome = subproblem_solve(block, &direct.y, 1e-9).unwrap();
        let SubOutcome::Optimal { value, .. } = &outcome else {
            panic!()
        };
        // Guess below the value: cut. Guess at the value: no cut.
        assert!(make_cut(&outcome, block, 0, value - 1.0).is_some());
        assert!(make_cut(&outcome, block, 0, *value).is_none());
        assert!(make_cut(&outcome, block, 0, value + 0.5).is_none());
    }

    #[test]
    fn single_user_all_exponential_converges_immediately() {
        let (problem, _) = tiny_problem(0.0, &[4]);
        let (solution, state) = run(&problem, &default_opts()).unwrap();
        assert!(state.converged);
        assert!(state.iterations <= 2, "took {} iterations", state.iterations);
        let direct = solve_clr_direct(&problem, 1e-9).unwrap();
        assert!((solution.objective - direct.objective).abs() <= DEFAULT_MARGIN_KM);
    }

    #[test]
    fn two_user_run_matches_direct_solve() {
        let (problem, _) = tiny_problem(0.5, &[3, 5]);
        let opts = BendersOptions {
            convergence_margin_km: 1e-4,
            ..default_opts()
        };
        let (solution, state) = run(&problem, &opts).unwrap();
        assert!(state.converged, "gap {}", state.gap_km());
        let direct = solve_clr_direct(&problem, 1e-9).unwrap();
        assert!(
            (solution.objective - direct.objective).abs() <= 1e-4 + 1e-6,
            "benders {} direct {}",
            solution.objective,
            direct.objective
        );
        // Bound bookkeeping.
        let mut prev_lower = f64::NEG_INFINITY;
        for &(lo, hi) in &state.trace {
            assert!(lo >= prev_lower - 1e-9);
            assert!(lo <= hi + 1e-6);
            prev_lower = lo;
        }
        assert!(direct.objective >= state.best_lower_km - 1e-6);
        assert!(direct.objective <= state.best_upper_km + 1e-6);
    }

    #[test]
    fn cuts_never_exclude_the_direct_optimum() {
        let (problem, _) = tiny_problem(0.5, &[3, 5]);
        let opts = BendersOptions {
            convergence_margin_km: 1e-4,
            ..default_opts()
        };
        let (_, state) = run(&problem, &opts).unwrap();
        let direct = solve_clr_direct(&problem, 1e-9).unwrap();
        for cut in &state.cuts {
            let y_part: f64 = cut.y_coeffs.iter().map(|&(k, v)| v * direct.y[k]).sum();
            match cut.kind {
                CutKind::Feasibility => {
                    assert!(
                        y_part >= cut.rhs - 1e-6,
                        "feasibility cut excludes the optimum"
                    );
                }
                CutKind::Optimality => {
                    let w_m: f64 = problem.users[cut.user]
                        .free_costs
                        .iter()
                        .zip(direct.z_free[cut.user].iter())
                        .map(|(c, z)| c * z)
                        .sum();
                    assert!(
                        w_m + y_part >= cut.rhs - 1e-6,
                        "optimality cut excludes the optimum"
                    );
                }
            }
        }
    }

    #[test]
    fn subproblem_outcomes_are_order_insensitive() {
        let (problem, _) = tiny_problem(0.5, &[3, 4, 5]);
        let direct = solve_clr_direct(&problem, 1e-9).unwrap();
        let y = direct.y;
        let seq: Vec<(f64, Vec<f64>)> = problem
            .users
            .iter()
            .map(|b| match subproblem_solve(b, &y, 1e-9).unwrap() {
                SubOutcome::Optimal { value, z_free, .. } => (value, z_free),
                other => panic!("expected optimal at a feasible y, got {other:?}"),
            })
            .collect();
        for _ in 0..3 {
            let par: Vec<(f64, Vec<f64>)> = problem
                .users
                .par_iter()
                .map(|b| match subproblem_solve(b, &y, 1e-9).unwrap() {
                    SubOutcome::Optimal { value, z_free, .. } => (value, z_free),
                    other => panic!("expected optimal at a feasible y, got {other:?}"),
                })
                .collect();
            assert_eq!(seq, par);
        }
    }

    #[test]
    fn trace_csv_shape() {
        let (problem, _) = tiny_problem(0.5, &[4]);
        let (_, state) = run(&problem, &default_opts()).unwrap();
        let mut buf = Vec::new();
        state.write_trace_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let mut lines = text.lines();
        assert_eq!(lines.next(), Some("iter,lower_km,upper_km"));
        assert_eq!(text.lines().count(), state.trace.len() + 1);
    }
}
