//! Assembly of the obfuscation linear programs: the full-matrix program over
//! all K^2 probabilities, and the per-user reduced program whose
//! exponential-mechanism entries are tied to shared column variables `y`,
//! giving the block-ladder structure the decomposition solver relies on.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geo::{GeoIndGraph, LocationModel, LrSet, ObfRange};
use crate::lp::{self, LpInstance, Relation};

#[derive(Debug, Error)]
pub enum FormulationError {
    #[error("cost matrix is {rows}x{cols}, expected {want_rows}x{want_cols}")]
    CostShape {
        rows: usize,
        cols: usize,
        want_rows: usize,
        want_cols: usize,
    },
    #[error("threshold ordering violated: r_exp {r_exp_km} > r_obf {r_obf_km}")]
    ThresholdOrder { r_exp_km: f64, r_obf_km: f64 },
    #[error("negative threshold {0}")]
    NegativeThreshold(f64),
    #[error("epsilon must be positive, got {0}")]
    BadEpsilon(f64),
    #[error("no users supplied")]
    NoUsers,
    #[error("user {user} has K = {got}, expected {expected}")]
    InconsistentModels {
        user: usize,
        got: usize,
        expected: usize,
    },
    #[error("LR location set is empty")]
    EmptyLrSet,
    #[error("exponential tie coefficient overflows for epsilon*distance = {0}")]
    CoefficientOverflow(f64),
    #[error(transparent)]
    Geo(#[from] crate::geo::GeoError),
    #[error("lp solve failed: {0}")]
    Lp(#[from] lp::LpError),
    #[error("direct solve returned {0}")]
    DirectSolveNotOptimal(String),
}

/// How the exponential tie treats a row/column pair beyond the obfuscation
/// radius.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
pub enum TailRule {
    /// Exponent `min(d, r_obf)` per (row, column) pair. Cross-user
    /// indistinguishability of tied entries holds unconditionally.
    #[default]
    DistanceCapped,
    /// Exponent `d` inside the obfuscation range and the constant `r_obf`
    /// outside it, mirroring the reduced-program statement verbatim.
    ObfRadiusConstant,
}

/// Shared scalar knobs every per-user block is assembled under.
#[derive(Debug, Clone, Copy)]
pub struct ClrConfig {
    pub epsilon_per_km: f64,
    pub gamma_km: f64,
    pub tail_rule: TailRule,
}

impl ClrConfig {
    fn validate(&self) -> Result<(), FormulationError> {
        if !(self.epsilon_per_km > 0.0) {
            return Err(FormulationError::BadEpsilon(self.epsilon_per_km));
        }
        Ok(())
    }
}

/// Which obfuscation probabilities must follow the exponential distribution:
/// flag on means tied. Inside the obfuscation range the flag is set when the
/// pair distance exceeds `r_exp_km`; every column outside the range is tied.
#[derive(Debug, Clone)]
pub struct IndicatorMatrix {
    pub r_exp_km: f64,
    pub r_obf_km: f64,
    /// q_flags[row][col] over LR-member rows and obfuscation-range columns.
    pub q_flags: Vec<Vec<bool>>,
}

pub fn build_indicator(
    lr: &LrSet,
    model: &LocationModel,
    r_exp_km: f64,
    r_obf_km: f64,
) -> Result<IndicatorMatrix, FormulationError> {
    if r_exp_km < 0.0 {
        return Err(FormulationError::NegativeThreshold(r_exp_km));
    }
    if r_exp_km > r_obf_km {
        return Err(FormulationError::ThresholdOrder {
            r_exp_km,
            r_obf_km,
        });
    }
    let obf = crate::geo::obf_range(model, lr.center, r_obf_km)?;
    // A zero threshold means the mechanism is fully exponential, including
    // the zero-distance diagonal pairs.
    let q_flags = lr
        .members
        .iter()
        .map(|&i| {
            obf.members
                .iter()
                .map(|&k| r_exp_km == 0.0 || model.distance_unchecked(i, k) > r_exp_km)
                .collect()
        })
        .collect();
    Ok(IndicatorMatrix {
        r_exp_km,
        r_obf_km,
        q_flags,
    })
}

/// Everything the server needs from one user to assemble that user's block:
/// relative distances, estimated costs, tie metadata. Rows are local indices
/// `0..|N_m|-1`; only obfuscation-range columns carry global ids.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct UserLpData {
    pub k_total: usize,
    /// Pairwise distances over LR rows (local indices).
    pub d_nn: Vec<Vec<f64>>,
    /// Distances from each LR row to each obfuscation-range column.
    pub d_no: Vec<Vec<f64>>,
    /// Global location ids of the obfuscation-range columns, ascending.
    pub obf_cols: Vec<usize>,
    /// Estimated (upper) cost per (row, obfuscation column).
    pub c_upper: Vec<Vec<f64>>,
    /// Tie indicator per (row, obfuscation column).
    pub q_flags: Vec<Vec<bool>>,
    /// Aggregated objective coefficient per out-of-range column k:
    /// `sum_rows c_upper(i,k) * tie_coeff(i,k)`.
    pub alpha_tail: Vec<(usize, f64)>,
    /// Out-of-range (row, global column) pairs closer than `r_obf`, with
    /// their distances; only populated under `TailRule::DistanceCapped`.
    pub tail_overrides: Vec<(usize, usize, f64)>,
    pub r_obf_km: f64,
    pub r_exp_km: f64,
}

fn tie_exponent_km(d_km: f64, r_obf_km: f64, rule: TailRule, in_range: bool) -> f64 {
    match rule {
        TailRule::DistanceCapped => d_km.min(r_obf_km),
        TailRule::ObfRadiusConstant => {
            if in_range {
                d_km
            } else {
                r_obf_km
            }
        }
    }
}

impl UserLpData {
    /// Builds the upload payload from client-side knowledge. `c_upper_full`
    /// holds estimated upper costs for every column of the model (|N_m| x K).
    pub fn build(
        model: &LocationModel,
        lr: &LrSet,
        obf: &ObfRange,
        indicator: &IndicatorMatrix,
        c_upper_full: &[Vec<f64>],
        config: &ClrConfig,
    ) -> Result<UserLpData, FormulationError> {
        config.validate()?;
        let k_total = model.len();
        let n = lr.members.len();
        if n == 0 {
            return Err(FormulationError::EmptyLrSet);
        }
        if c_upper_full.len() != n || c_upper_full.iter().any(|r| r.len() != k_total) {
            return Err(FormulationError::CostShape {
                rows: c_upper_full.len(),
                cols: c_upper_full.first().map_or(0, |r| r.len()),
                want_rows: n,
                want_cols: k_total,
            });
        }
        let eps = config.epsilon_per_km;
        let d_nn: Vec<Vec<f64>> = lr
            .members
            .iter()
            .map(|&i| {
                lr.members
                    .iter()
                    .map(|&j| model.distance_unchecked(i, j))
                    .collect()
            })
            .collect();
        let d_no: Vec<Vec<f64>> = lr
            .members
            .iter()
            .map(|&i| {
                obf.members
                    .iter()
                    .map(|&k| model.distance_unchecked(i, k))
                    .collect()
            })
            .collect();
        let in_obf = {
            let mut mask = vec![false; k_total];
            for &k in &obf.members {
                mask[k] = true;
            }
            mask
        };
        let mut alpha_tail = vec![0.0; k_total];
        let mut tail_overrides = Vec::new();
        for (r, &i) in lr.members.iter().enumerate() {
            for k in 0..k_total {
                if in_obf[k] {
                    continue;
                }
                let d = model.distance_unchecked(i, k);
                let exp_km = tie_exponent_km(d, indicator.r_obf_km, config.tail_rule, false);
                alpha_tail[k] += c_upper_full[r][k] * (-eps * exp_km / 2.0).exp();
                if config.tail_rule == TailRule::DistanceCapped && d < indicator.r_obf_km {
                    tail_overrides.push((r, k, d));
                }
            }
        }
        let c_upper = lr
            .members
            .iter()
            .enumerate()
            .map(|(r, _)| obf.members.iter().map(|&k| c_upper_full[r][k]).collect())
            .collect();
        Ok(UserLpData {
            k_total,
            d_nn,
            d_no,
            obf_cols: obf.members.clone(),
            c_upper,
            q_flags: indicator.q_flags.clone(),
            alpha_tail: alpha_tail
                .into_iter()
                .enumerate()
                .filter(|&(k, _)| !in_obf[k])
                .collect(),
            tail_overrides,
            r_obf_km: indicator.r_obf_km,
            r_exp_km: indicator.r_exp_km,
        })
    }

    pub fn lr_len(&self) -> usize {
        self.d_nn.len()
    }
}

/// One user's constraint block over its free variables and the shared `y`:
/// `A z' + G y >= b`. Rows without any free variable are promoted to
/// `master_rows` (they constrain `y` alone).
#[derive(Debug, Clone)]
pub struct UserBlock {
    pub n_rows: usize,
    pub k_total: usize,
    pub obf_cols: Vec<usize>,
    /// (local row, obf column index) per free variable.
    pub free_vars: Vec<(usize, usize)>,
    pub free_costs: Vec<f64>,
    pub a_rows: Vec<Vec<(usize, f64)>>,
    pub g_rows: Vec<Vec<(usize, f64)>>,
    pub b: Vec<f64>,
    pub master_rows: Vec<(Vec<(usize, f64)>, f64)>,
    /// Tie coefficient e^{-eps * eta(i,k) / 2} per (local row, global column).
    pub tie_coeff: Vec<Vec<f64>>,
    /// Free-variable index per (local row, obf column index).
    pub free_index: Vec<Vec<Option<usize>>>,
    /// Unordered LR pairs within the neighbor threshold.
    pub geoind_pair_count: usize,
}

impl UserBlock {
    /// Row count of the full per-user constraint system as stated (every
    /// neighbor pair, both orders, every column of the model).
    pub fn conceptual_geoind_rows(&self) -> usize {
        2 * self.geoind_pair_count * self.k_total
    }

    pub fn conceptual_unit_rows(&self) -> usize {
        self.n_rows
    }

    /// Materialized inequality rows (block plus promoted master rows).
    pub fn materialized_rows(&self) -> usize {
        self.b.len() + self.master_rows.len()
    }
}

/// The assembled multi-user problem: minimize
/// `alpha . y + sum_m c'_m . z'_m` subject to each user's block.
#[derive(Debug, Clone)]
pub struct ClrProblem {
    pub epsilon_per_km: f64,
    pub gamma_km: f64,
    pub tail_rule: TailRule,
    pub k_total: usize,
    pub alpha: Vec<f64>,
    pub users: Vec<UserBlock>,
}

fn exp_coeff(eps: f64, d_km: f64) -> Result<f64, FormulationError> {
    let v = (eps * d_km).exp();
    if !v.is_finite() {
        return Err(FormulationError::CoefficientOverflow(eps * d_km));
    }
    Ok(v)
}

pub fn assemble_clr(
    users: &[UserLpData],
    config: &ClrConfig,
) -> Result<ClrProblem, FormulationError> {
    config.validate()?;
    if users.is_empty() {
        return Err(FormulationError::NoUsers);
    }
    let k_total = users[0].k_total;
    let eps = config.epsilon_per_km;
    let mut alpha = vec![0.0; k_total];
    let mut blocks = Vec::with_capacity(users.len());

    for (u, data) in users.iter().enumerate() {
        if data.k_total != k_total {
            return Err(FormulationError::InconsistentModels {
                user: u,
                got: data.k_total,
                expected: k_total,
            });
        }
        let n = data.lr_len();
        if n == 0 {
            return Err(FormulationError::EmptyLrSet);
        }
        let o = data.obf_cols.len();

        // Tie coefficients over all K columns. Out-of-range columns default
        // to the r_obf exponent, with client-supplied overrides.
        let mut tie_coeff = vec![vec![0.0f64; k_total]; n];
        let tail_default = (-eps * data.r_obf_km / 2.0).exp();
        for row in tie_coeff.iter_mut() {
            for v in row.iter_mut() {
                *v = tail_default;
            }
        }
        for &(r, k, d) in &data.tail_overrides {
            let exp_km = tie_exponent_km(d, data.r_obf_km, config.tail_rule, false);
            tie_coeff[r][k] = (-eps * exp_km / 2.0).exp();
        }
        for (r, row) in data.d_no.iter().enumerate() {
            for (c, &d) in row.iter().enumerate() {
                let exp_km = tie_exponent_km(d, data.r_obf_km, config.tail_rule, true);
                tie_coeff[r][data.obf_cols[c]] = (-eps * exp_km / 2.0).exp();
            }
        }

        // Free variables: untied in-range pairs.
        let mut free_vars = Vec::new();
        let mut free_costs = Vec::new();
        let mut free_index = vec![vec![None; o]; n];
        for r in 0..n {
            for c in 0..o {
                if !data.q_flags[r][c] {
                    free_index[r][c] = Some(free_vars.len());
                    free_vars.push((r, c));
                    free_costs.push(data.c_upper[r][c]);
                }
            }
        }

        // Objective contributions of the tied entries.
        for r in 0..n {
            for c in 0..o {
                if data.q_flags[r][c] {
                    alpha[data.obf_cols[c]] += data.c_upper[r][c] * tie_coeff[r][data.obf_cols[c]];
                }
            }
        }
        for &(k, v) in &data.alpha_tail {
            alpha[k] += v;
        }

        let mut a_rows = Vec::new();
        let mut g_rows = Vec::new();
        let mut b = Vec::new();
        let mut master_rows = Vec::new();

        // Unit-measure rows: sum of the row's entries equals one, split into
        // >= and <= halves.
        let in_obf_pos: Vec<Option<usize>> = {
            let mut v = vec![None; k_total];
            for (c, &k) in data.obf_cols.iter().enumerate() {
                v[k] = Some(c);
            }
            v
        };
        for r in 0..n {
            let mut a: Vec<(usize, f64)> = Vec::new();
            let mut g: Vec<(usize, f64)> = Vec::new();
            for k in 0..k_total {
                match in_obf_pos[k].and_then(|c| free_index[r][c]) {
                    Some(fv) => a.push((fv, 1.0)),
                    None => g.push((k, tie_coeff[r][k])),
                }
            }
            if a.is_empty() {
                master_rows.push((g.clone(), 1.0));
                master_rows.push((g.iter().map(|&(k, v)| (k, -v)).collect(), -1.0));
            } else {
                a_rows.push(a.clone());
                g_rows.push(g.clone());
                b.push(1.0);
                a_rows.push(a.iter().map(|&(j, v)| (j, -v)).collect());
                g_rows.push(g.iter().map(|&(k, v)| (k, -v)).collect());
                b.push(-1.0);
            }
        }

        // Pairwise indistinguishability rows for neighbor pairs, emitted for
        // both orders, on every column where at least one side is free.
        // Tied-tied pairs satisfy the constraint identically and are skipped.
        let mut pair_count = 0usize;
        for i in 0..n {
            for j in 0..n {
                if i == j {
                    continue;
                }
                let d_ij = data.d_nn[i][j];
                if d_ij > config.gamma_km {
                    continue;
                }
                if i < j {
                    pair_count += 1;
                }
                let bound = exp_coeff(eps, d_ij)?;
                for c in 0..o {
                    let fi = free_index[i][c];
                    let fj = free_index[j][c];
                    if fi.is_none() && fj.is_none() {
                        continue;
                    }
                    // bound * z[j,k] - z[i,k] >= 0
                    let mut a: Vec<(usize, f64)> = Vec::new();
                    let mut g: Vec<(usize, f64)> = Vec::new();
                    let k = data.obf_cols[c];
                    match fj {
                        Some(fv) => a.push((fv, bound)),
                        None => g.push((k, bound * tie_coeff[j][k])),
                    }
                    match fi {
                        Some(fv) => a.push((fv, -1.0)),
                        None => g.push((k, -tie_coeff[i][k])),
                    }
                    a_rows.push(a);
                    g_rows.push(g);
                    b.push(0.0);
                }
            }
        }

        blocks.push(UserBlock {
            n_rows: n,
            k_total,
            obf_cols: data.obf_cols.clone(),
            free_vars,
            free_costs,
            a_rows,
            g_rows,
            b,
            master_rows,
            tie_coeff,
            free_index,
            geoind_pair_count: pair_count,
        });
    }

    Ok(ClrProblem {
        epsilon_per_km: config.epsilon_per_km,
        gamma_km: config.gamma_km,
        tail_rule: config.tail_rule,
        k_total,
        alpha,
        users: blocks,
    })
}

/// Variable layout of the single-shot LP form: `y` first, then each user's
/// free variables.
#[derive(Debug, Clone)]
pub struct ClrLayout {
    pub k_total: usize,
    pub free_offsets: Vec<usize>,
    pub num_vars: usize,
}

pub fn clr_to_lp(problem: &ClrProblem) -> (LpInstance, ClrLayout) {
    let k = problem.k_total;
    let mut free_offsets = Vec::with_capacity(problem.users.len());
    let mut cursor = k;
    for user in &problem.users {
        free_offsets.push(cursor);
        cursor += user.free_vars.len();
    }
    let mut lp = LpInstance::new(cursor);
    lp.objective[..k].copy_from_slice(&problem.alpha);
    for (user, &off) in problem.users.iter().zip(free_offsets.iter()) {
        for (j, &c) in user.free_costs.iter().enumerate() {
            lp.objective[off + j] = c;
        }
        for (g, rhs) in &user.master_rows {
            lp.add_row(g.clone(), Relation::Ge, *rhs);
        }
        for ((a, g), &rhs) in user.a_rows.iter().zip(user.g_rows.iter()).zip(user.b.iter()) {
            let mut coeffs: Vec<(usize, f64)> =
                a.iter().map(|&(j, v)| (off + j, v)).collect();
            coeffs.extend(g.iter().copied());
            lp.add_row(coeffs, Relation::Ge, rhs);
        }
    }
    let layout = ClrLayout {
        k_total: k,
        free_offsets,
        num_vars: cursor,
    };
    (lp, layout)
}

/// A solution of the assembled problem: shared `y` plus each user's free
/// variable values.
#[derive(Debug, Clone)]
pub struct ClrSolution {
    pub y: Vec<f64>,
    pub z_free: Vec<Vec<f64>>,
    pub objective: f64,
}

pub fn split_solution(layout: &ClrLayout, problem: &ClrProblem, primal: &[f64], objective: f64) -> ClrSolution {
    let y = primal[..layout.k_total].to_vec();
    let z_free = problem
        .users
        .iter()
        .zip(layout.free_offsets.iter())
        .map(|(user, &off)| primal[off..off + user.free_vars.len()].to_vec())
        .collect();
    ClrSolution {
        y,
        z_free,
        objective,
    }
}

/// Solves the assembled problem in one shot. The decomposition solver is the
/// production path; this is its oracle.
pub fn solve_clr_direct(problem: &ClrProblem, tol: f64) -> Result<ClrSolution, FormulationError> {
    let (lp, layout) = clr_to_lp(problem);
    match lp::solve(&lp, tol)? {
        lp::LpOutcome::Optimal(opt) => {
            Ok(split_solution(&layout, problem, &opt.primal, opt.objective))
        }
        other => Err(FormulationError::DirectSolveNotOptimal(format!("{other:?}"))),
    }
}

/// Row-stochastic obfuscation probabilities for one user, rows keyed by
/// global location id.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ObfuscationMatrix {
    pub owner: usize,
    pub row_ids: Vec<usize>,
    /// rows[r][k]: probability of reporting location k from row_ids[r].
    pub rows: Vec<Vec<f64>>,
    /// Rows whose sums drifted beyond tolerance and were rescaled.
    pub renormalized: Vec<usize>,
}

impl ObfuscationMatrix {
    pub fn row(&self, global_id: usize) -> Option<&[f64]> {
        self.row_ids
            .iter()
            .position(|&id| id == global_id)
            .map(|r| self.rows[r].as_slice())
    }

    pub fn max_row_sum_error(&self) -> f64 {
        self.rows
            .iter()
            .map(|row| (row.iter().sum::<f64>() - 1.0).abs())
            .fold(0.0, f64::max)
    }
}

const ROW_SUM_TOL: f64 = 1e-6;

/// Reconstructs one user's full probability rows from a solution: free
/// entries from `z'`, tied and out-of-range entries from `y` through the tie
/// coefficients. Rows are rescaled only if their sum drifts beyond 1e-6.
pub fn extract_matrix(
    problem: &ClrProblem,
    solution: &ClrSolution,
    user: usize,
    row_ids: &[usize],
) -> ObfuscationMatrix {
    let block = &problem.users[user];
    assert_eq!(row_ids.len(), block.n_rows, "row id map must cover the block");
    let mut rows = Vec::with_capacity(block.n_rows);
    let mut renormalized = Vec::new();
    let in_obf_pos: Vec<Option<usize>> = {
        let mut v = vec![None; block.k_total];
        for (c, &k) in block.obf_cols.iter().enumerate() {
            v[k] = Some(c);
        }
        v
    };
    for r in 0..block.n_rows {
        let mut row = vec![0.0; block.k_total];
        for k in 0..block.k_total {
            row[k] = match in_obf_pos[k].and_then(|c| block.free_index[r][c]) {
                Some(fv) => solution.z_free[user][fv],
                None => solution.y[k] * block.tie_coeff[r][k],
            };
        }
        let sum: f64 = row.iter().sum();
        if (sum - 1.0).abs() > ROW_SUM_TOL && sum > 0.0 {
            for v in row.iter_mut() {
                *v /= sum;
            }
            renormalized.push(row_ids[r]);
        }
        rows.push(row);
    }
    ObfuscationMatrix {
        owner: user,
        row_ids: row_ids.to_vec(),
        rows,
        renormalized,
    }
}

/// The full K^2-variable program: pairwise rows for every neighbor-graph
/// edge and column, plus one unit-measure row per location.
pub fn assemble_omg(
    model: &LocationModel,
    graph: &GeoIndGraph,
    cost: &[Vec<f64>],
    epsilon_per_km: f64,
) -> Result<LpInstance, FormulationError> {
    if !(epsilon_per_km > 0.0) {
        return Err(FormulationError::BadEpsilon(epsilon_per_km));
    }
    let k = model.len();
    if cost.len() != k || cost.iter().any(|r| r.len() != k) {
        return Err(FormulationError::CostShape {
            rows: cost.len(),
            cols: cost.first().map_or(0, |r| r.len()),
            want_rows: k,
            want_cols: k,
        });
    }
    let var = |i: usize, kk: usize| i * k + kk;
    let mut lp = LpInstance::new(k * k);
    for i in 0..k {
        for kk in 0..k {
            lp.objective[var(i, kk)] = cost[i][kk];
        }
    }
    for &(i, j, d) in graph.edges() {
        let bound = exp_coeff(epsilon_per_km, d)?;
        for kk in 0..k {
            lp.add_row(
                vec![(var(i, kk), 1.0), (var(j, kk), -bound)],
                Relation::Le,
                0.0,
            );
            lp.add_row(
                vec![(var(j, kk), 1.0), (var(i, kk), -bound)],
                Relation::Le,
                0.0,
            );
        }
    }
    for i in 0..k {
        let coeffs = (0..k).map(|kk| (var(i, kk), 1.0)).collect();
        lp.add_row(coeffs, Relation::Eq, 1.0);
    }
    Ok(lp)
}

/// Reshapes a K^2 primal vector into the row-stochastic matrix.
pub fn omg_matrix_from(primal: &[f64], k: usize) -> Vec<Vec<f64>> {
    (0..k)
        .map(|i| primal[i * k..(i + 1) * k].to_vec())
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geo::{build_geoind_graph, lr_set, obf_range, GridSpec};
    use crate::lp::{solve, LpOutcome};

    fn grid(rows: usize, cols: usize, cell: f64) -> LocationModel {
        LocationModel::from_grid(&GridSpec::planar(rows, cols, cell)).unwrap()
    }

    #[test]
    fn omg_row_and_variable_counts() {
        let m = grid(1, 2, 1.0);
        let g = build_geoind_graph(&m, 1.5).unwrap();
        assert_eq!(g.edges().len(), 1);
        let cost = vec![vec![0.0, 1.0], vec![1.0, 0.0]];
        let lp = assemble_omg(&m, &g, &cost, 1.0).unwrap();
        assert_eq!(lp.num_vars, 4);
        // Two pairwise rows per (edge, column) plus two unit rows.
        assert_eq!(lp.rows.len(), 2 * 1 * 2 + 2);
    }

    #[test]
    fn omg_decouples_without_edges() {
        let m = grid(1, 2, 1.0);
        let g = build_geoind_graph(&m, 0.5).unwrap();
        assert!(g.edges().is_empty());
        let cost = vec![vec![0.0, 1.0], vec![1.0, 0.0]];
        let lp = assemble_omg(&m, &g, &cost, 1.0).unwrap();
        let out = solve(&lp, 1e-9).unwrap();
        let opt = out.expect_optimal();
        let z = omg_matrix_from(&opt.primal, 2);
        assert!((z[0][0] - 1.0).abs() < 1e-9);
        assert!((z[1][1] - 1.0).abs() < 1e-9);
        assert!(opt.objective.abs() < 1e-9);
    }

    #[test]
    fn omg_large_epsilon_reaches_row_minima() {
        let m = grid(1, 3, 0.1);
        let g = build_geoind_graph(&m, 0.25).unwrap();
        let cost = vec![
            vec![0.0, 0.4, 0.9],
            vec![0.4, 0.0, 0.5],
            vec![0.9, 0.5, 0.0],
        ];
        // Large epsilon makes every pairwise bound vacuous.
        let lp = assemble_omg(&m, &g, &cost, 300.0).unwrap();
        let out = solve(&lp, 1e-9).unwrap();
        let opt = out.expect_optimal();
        let want: f64 = (0..3).map(|i| cost[i].iter().cloned().fold(f64::MAX, f64::min)).sum();
        assert!((opt.objective - want).abs() < 1e-7);
    }

    #[test]
    fn omg_overflow_is_an_error() {
        let m = grid(1, 2, 100.0);
        let g = build_geoind_graph(&m, 150.0).unwrap();
        let cost = vec![vec![0.0, 1.0], vec![1.0, 0.0]];
        assert!(matches!(
            assemble_omg(&m, &g, &cost, 100.0),
            Err(FormulationError::CoefficientOverflow(_))
        ));
    }

    #[test]
    fn indicator_boundaries() {
        let m = grid(3, 3, 0.1);
        let g = build_geoind_graph(&m, 0.15).unwrap();
        let lr = lr_set(&g, 4, 1.0).unwrap();
        // r_exp = 0: everything tied.
        let ind = build_indicator(&lr, &m, 0.0, 0.2).unwrap();
        assert!(ind.q_flags.iter().flatten().all(|&q| q));
        // r_exp = r_obf: a pair is tied exactly when its own distance
        // exceeds the radius (far LR rows can still be tied).
        let ind = build_indicator(&lr, &m, 0.2, 0.2).unwrap();
        let obf = obf_range(&m, 4, 0.2).unwrap();
        for (r, &i) in lr.members.iter().enumerate() {
            for (c, &k) in obf.members.iter().enumerate() {
                assert_eq!(ind.q_flags[r][c], m.distance_unchecked(i, k) > 0.2);
            }
        }
        assert!(build_indicator(&lr, &m, 0.3, 0.2).is_err());
        assert!(build_indicator(&lr, &m, -0.1, 0.2).is_err());
    }

    #[test]
    fn indicator_center_free_cells() {
        let m = grid(3, 3, 0.1);
        let g = build_geoind_graph(&m, 0.15).unwrap();
        let lr = lr_set(&g, 4, 1.0).unwrap();
        let ind = build_indicator(&lr, &m, 0.1, 0.2).unwrap();
        let obf = obf_range(&m, 4, 0.2).unwrap();
        // The center row is free exactly on the 5 cells within 0.1 km.
        let center_row = lr.members.iter().position(|&i| i == 4).unwrap();
        let free_cols: Vec<usize> = obf
            .members
            .iter()
            .enumerate()
            .filter(|&(c, _)| !ind.q_flags[center_row][c])
            .map(|(_, &k)| k)
            .collect();
        assert_eq!(free_cols, vec![1, 3, 4, 5, 7]);
    }

    fn toy_user_data(
        model: &LocationModel,
        graph: &crate::geo::GeoIndGraph,
        center: usize,
        gamma_lr: f64,
        r_exp: f64,
        r_obf: f64,
        cost: &[Vec<f64>],
        config: &ClrConfig,
    ) -> (UserLpData, LrSet) {
        let lr = lr_set(graph, center, gamma_lr).unwrap();
        let obf = obf_range(model, center, r_obf).unwrap();
        let ind = build_indicator(&lr, model, r_exp, r_obf).unwrap();
        let full: Vec<Vec<f64>> = lr.members.iter().map(|&i| cost[i].clone()).collect();
        let data = UserLpData::build(model, &lr, &obf, &ind, &full, config).unwrap();
        (data, lr)
    }

    fn uniform_cost(k: usize, model: &LocationModel) -> Vec<Vec<f64>> {
        (0..k)
            .map(|i| {
                (0..k)
                    .map(|j| model.distance_unchecked(i, j) / k as f64)
                    .collect()
            })
            .collect()
    }

    #[test]
    fn constraint_count_law() {
        let m = grid(3, 3, 0.1);
        let g = build_geoind_graph(&m, 0.15).unwrap();
        let config = ClrConfig {
            epsilon_per_km: 10.0,
            gamma_km: 0.15,
            tail_rule: TailRule::DistanceCapped,
        };
        let cost = uniform_cost(9, &m);
        let (data, lr) = toy_user_data(&m, &g, 4, 0.2, 0.1, 0.2, &cost, &config);
        let users = [data];
        let problem = assemble_clr(&users, &config).unwrap();
        let block = &problem.users[0];
        // Count neighbor pairs inside the LR set directly.
        let mut pairs = 0;
        for (a, &i) in lr.members.iter().enumerate() {
            for &j in lr.members.iter().skip(a + 1) {
                if m.distance_unchecked(i, j) <= 0.15 {
                    pairs += 1;
                }
            }
        }
        assert_eq!(block.geoind_pair_count, pairs);
        assert_eq!(block.conceptual_geoind_rows(), 2 * pairs * 9);
        assert_eq!(block.conceptual_unit_rows(), lr.members.len());
        // Materialized pairwise rows exist exactly where a side is free.
        let mut expected = 0;
        for i in 0..block.n_rows {
            for j in 0..block.n_rows {
                if i == j || users[0].d_nn[i][j] > 0.15 {
                    continue;
                }
                for c in 0..block.obf_cols.len() {
                    if block.free_index[i][c].is_some() || block.free_index[j][c].is_some() {
                        expected += 1;
                    }
                }
            }
        }
        // Block rows are the unit pairs for rows with free variables plus
        // the materialized pairwise rows.
        let rows_with_free = (0..block.n_rows)
            .filter(|&r| block.free_index[r].iter().any(Option::is_some))
            .count();
        assert_eq!(block.b.len(), 2 * rows_with_free + expected);
    }

    #[test]
    fn single_user_r_exp_zero_has_no_free_variables() {
        let m = grid(3, 3, 0.1);
        let g = build_geoind_graph(&m, 0.15).unwrap();
        let config = ClrConfig {
            epsilon_per_km: 10.0,
            gamma_km: 0.15,
            tail_rule: TailRule::DistanceCapped,
        };
        let cost = uniform_cost(9, &m);
        let (data, lr) = toy_user_data(&m, &g, 4, 0.5, 0.0, 0.2, &cost, &config);
        let problem = assemble_clr(&[data], &config).unwrap();
        let block = &problem.users[0];
        assert!(block.free_vars.is_empty());
        // Every unit row was promoted to the master.
        assert_eq!(block.master_rows.len(), 2 * lr.members.len());
        assert!(block.b.is_empty());
    }

    #[test]
    fn saturated_thresholds_reduce_to_independent_lp() {
        // r_exp = r_obf >= diameter: no ties anywhere, y is unused.
        let m = grid(2, 2, 0.1);
        let g = build_geoind_graph(&m, 0.15).unwrap();
        let config = ClrConfig {
            epsilon_per_km: 10.0,
            gamma_km: 0.15,
            tail_rule: TailRule::DistanceCapped,
        };
        let cost = uniform_cost(4, &m);
        let (data, _) = toy_user_data(&m, &g, 0, 1.0, 0.5, 0.5, &cost, &config);
        let problem = assemble_clr(&[data.clone()], &config).unwrap();
        assert!(problem.alpha.iter().all(|&a| a == 0.0));
        assert_eq!(problem.users[0].free_vars.len(), 4 * 4);

        // Against the plain per-user program over the same rows and columns.
        let sol = solve_clr_direct(&problem, 1e-9).unwrap();
        let lp = assemble_omg(&m, &g, &cost, 10.0).unwrap();
        let direct = solve(&lp, 1e-9).unwrap();
        assert!((sol.objective - direct.expect_optimal().objective).abs() < 1e-7);
    }

    #[test]
    fn two_disjoint_users_share_only_y() {
        let m = grid(1, 8, 0.1);
        let g = build_geoind_graph(&m, 0.12).unwrap();
        let config = ClrConfig {
            epsilon_per_km: 10.0,
            gamma_km: 0.12,
            tail_rule: TailRule::DistanceCapped,
        };
        let cost = uniform_cost(8, &m);
        let (d0, lr0) = toy_user_data(&m, &g, 0, 0.15, 0.1, 0.2, &cost, &config);
        let (d1, lr1) = toy_user_data(&m, &g, 6, 0.15, 0.1, 0.2, &cost, &config);
        assert!(lr0.members.iter().all(|i| !lr1.members.contains(i)));
        let problem = assemble_clr(&[d0, d1], &config).unwrap();
        let (lp, layout) = clr_to_lp(&problem);
        // No LP row mixes free variables of different users.
        for row in &lp.rows {
            let mut users_touched = std::collections::BTreeSet::new();
            for &(v, _) in &row.coeffs {
                if v >= layout.k_total {
                    let u = layout
                        .free_offsets
                        .iter()
                        .rposition(|&off| v >= off)
                        .unwrap();
                    users_touched.insert(u);
                }
            }
            assert!(users_touched.len() <= 1, "row couples two blocks");
        }
    }

    #[test]
    fn exponential_tie_satisfies_pairwise_bound() {
        // For any y >= 0 and tied pair, z[i,k] <= e^{eps d(i,j)} z[j,k].
        let m = grid(4, 4, 0.5);
        let g = build_geoind_graph(&m, 0.6).unwrap();
        let config = ClrConfig {
            epsilon_per_km: 3.0,
            gamma_km: 0.6,
            tail_rule: TailRule::DistanceCapped,
        };
        let cost = uniform_cost(16, &m);
        let (data, lr) = toy_user_data(&m, &g, 5, 1.2, 0.0, 1.0, &cost, &config);
        let problem = assemble_clr(&[data], &config).unwrap();
        let block = &problem.users[0];
        for (a, &i) in lr.members.iter().enumerate() {
            for (bb, &j) in lr.members.iter().enumerate() {
                if a == bb {
                    continue;
                }
                let d = m.distance_unchecked(i, j);
                let bound = (config.epsilon_per_km * d).exp();
                for k in 0..16 {
                    let lhs = block.tie_coeff[a][k];
                    let rhs = bound * block.tie_coeff[bb][k];
                    assert!(
                        lhs <= rhs + 1e-12,
                        "tie violates bound at rows {i},{j}, col {k}"
                    );
                }
            }
        }
    }

    #[test]
    fn objective_scaling_in_costs() {
        let m = grid(2, 3, 0.1);
        let g = build_geoind_graph(&m, 0.12).unwrap();
        let config = ClrConfig {
            epsilon_per_km: 10.0,
            gamma_km: 0.12,
            tail_rule: TailRule::DistanceCapped,
        };
        let cost = uniform_cost(6, &m);
        let (d1, _) = toy_user_data(&m, &g, 1, 0.3, 0.1, 0.2, &cost, &config);
        let scaled: Vec<Vec<f64>> = cost.iter().map(|r| r.iter().map(|v| v * 2.0).collect()).collect();
        let g2 = build_geoind_graph(&m, 0.12).unwrap();
        let (d2, _) = toy_user_data(&m, &g2, 1, 0.3, 0.1, 0.2, &scaled, &config);
        let p1 = assemble_clr(&[d1], &config).unwrap();
        let p2 = assemble_clr(&[d2], &config).unwrap();
        let s1 = solve_clr_direct(&p1, 1e-9).unwrap();
        let s2 = solve_clr_direct(&p2, 1e-9).unwrap();
        assert!((2.0 * s1.objective - s2.objective).abs() < 1e-7);
        // Same argmin: the extracted matrices agree entrywise.
        let ids: Vec<usize> = (0..p1.users[0].n_rows).collect();
        let m1 = extract_matrix(&p1, &s1, 0, &ids);
        let m2 = extract_matrix(&p2, &s2, 0, &ids);
        for (r1, r2) in m1.rows.iter().zip(m2.rows.iter()) {
            for (a, b) in r1.iter().zip(r2.iter()) {
                assert!((a - b).abs() < 1e-6);
            }
        }
    }

    #[test]
    fn extraction_rows_are_stochastic_and_faithful() {
        let m = grid(3, 3, 0.1);
        let g = build_geoind_graph(&m, 0.15).unwrap();
        let config = ClrConfig {
            epsilon_per_km: 10.0,
            gamma_km: 0.15,
            tail_rule: TailRule::DistanceCapped,
        };
        let cost = uniform_cost(9, &m);
        let (data, lr) = toy_user_data(&m, &g, 4, 0.2, 0.1, 0.2, &cost, &config);
        let problem = assemble_clr(&[data], &config).unwrap();
        let sol = solve_clr_direct(&problem, 1e-9).unwrap();
        let mat = extract_matrix(&problem, &sol, 0, &lr.members);
        assert!(mat.max_row_sum_error() < 1e-6);
        assert!(mat.renormalized.is_empty());
        assert!(mat
            .rows
            .iter()
            .flatten()
            .all(|&p| (-1e-9..=1.0 + 1e-9).contains(&p)));
        // Free entries round-trip exactly from the solution vector.
        let block = &problem.users[0];
        for (fv, &(r, c)) in block.free_vars.iter().enumerate() {
            let k = block.obf_cols[c];
            assert_eq!(mat.rows[r][k], sol.z_free[0][fv]);
        }
        // Tied entries follow y through the tie coefficients.
        for r in 0..block.n_rows {
            for k in 0..9 {
                let c = block.obf_cols.iter().position(|&kk| kk == k);
                let is_free = c.and_then(|c| block.free_index[r][c]).is_some();
                if !is_free {
                    assert_eq!(mat.rows[r][k], sol.y[k] * block.tie_coeff[r][k]);
                }
            }
        }
    }

    #[test]
    fn lp_text_export_roundtrip_on_clr() {
        let m = grid(2, 2, 0.1);
        let g = build_geoind_graph(&m, 0.15).unwrap();
        let config = ClrConfig {
            epsilon_per_km: 10.0,
            gamma_km: 0.15,
            tail_rule: TailRule::DistanceCapped,
        };
        let cost = uniform_cost(4, &m);
        let (data, _) = toy_user_data(&m, &g, 0, 0.3, 0.1, 0.15, &cost, &config);
        let problem = assemble_clr(&[data], &config).unwrap();
        let (lp, _) = clr_to_lp(&problem);
        let text = crate::lp::to_lp_text(&lp);
        let back = crate::lp::parse_lp_text(&text).unwrap();
        let a = solve(&lp, 1e-9).unwrap();
        let b = solve(&back, 1e-9).unwrap();
        match (a, b) {
            (LpOutcome::Optimal(a), LpOutcome::Optimal(b)) => {
                assert!((a.objective - b.objective).abs() < 1e-9);
            }
            other => panic!("expected both optimal, got {other:?}"),
        }
    }
}
