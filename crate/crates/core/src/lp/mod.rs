//! Linear-program solve contract shared by every module that needs one.
//!
//! Two interchangeable backends sit behind [`solve`]: a dense two-phase
//! simplex (exact vertex solutions, used whenever the tableau fits
//! comfortably in memory) and an interior-point backend for the large sparse
//! instances produced by full-matrix baselines. Optimal outcomes always carry
//! row duals; unbounded outcomes always carry an improving recession ray.

mod ipm;
mod simplex;
mod text;

pub use text::{parse_lp_text, to_lp_text};

use thiserror::Error;

#[derive(Debug, Error)]
pub enum LpError {
    #[error("objective length {got} does not match variable count {expected}")]
    ObjectiveLength { got: usize, expected: usize },
    #[error("row {row} references variable {var} outside 0..{num_vars}")]
    BadVariable {
        row: usize,
        var: usize,
        num_vars: usize,
    },
    #[error("non-finite coefficient in {0}")]
    NonFinite(String),
    #[error("bounds length {got} does not match variable count {expected}")]
    BoundsLength { got: usize, expected: usize },
    #[error("variable {var} has empty bound interval [{lo}, {hi}]")]
    EmptyBounds { var: usize, lo: f64, hi: f64 },
    #[error("simplex iteration limit reached ({0} pivots)")]
    IterationLimit(usize),
    #[error("interior-point solver failed with status {0}")]
    NumericalFailure(String),
    #[error("text format: {0}")]
    TextFormat(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Relation {
    Le,
    Eq,
    Ge,
}

impl Relation {
    pub fn symbol(self) -> &'static str {
        match self {
            Relation::Le => "<=",
            Relation::Eq => "=",
            Relation::Ge => ">=",
        }
    }
}

/// One constraint row with sparse coefficients.
#[derive(Debug, Clone)]
pub struct LpRow {
    pub coeffs: Vec<(usize, f64)>,
    pub rel: Relation,
    pub rhs: f64,
}

/// A minimization LP. Variable bounds default to `[0, +inf)`.
#[derive(Debug, Clone)]
pub struct LpInstance {
    pub num_vars: usize,
    pub objective: Vec<f64>,
    pub rows: Vec<LpRow>,
    pub bounds: Vec<(f64, f64)>,
}

impl LpInstance {
    pub fn new(num_vars: usize) -> Self {
        LpInstance {
            num_vars,
            objective: vec![0.0; num_vars],
            rows: Vec::new(),
            bounds: vec![(0.0, f64::INFINITY); num_vars],
        }
    }

    pub fn add_row(&mut self, coeffs: Vec<(usize, f64)>, rel: Relation, rhs: f64) {
        self.rows.push(LpRow { coeffs, rel, rhs });
    }

    pub fn validate(&self) -> Result<(), LpError> {
        if self.objective.len() != self.num_vars {
            return Err(LpError::ObjectiveLength {
                got: self.objective.len(),
                expected: self.num_vars,
            });
        }
        if self.bounds.len() != self.num_vars {
            return Err(LpError::BoundsLength {
                got: self.bounds.len(),
                expected: self.num_vars,
            });
        }
        if self.objective.iter().any(|c| !c.is_finite()) {
            return Err(LpError::NonFinite("objective".into()));
        }
        for (r, row) in self.rows.iter().enumerate() {
            if !row.rhs.is_finite() {
                return Err(LpError::NonFinite(format!("rhs of row {r}")));
            }
            for &(v, c) in &row.coeffs {
                if v >= self.num_vars {
                    return Err(LpError::BadVariable {
                        row: r,
                        var: v,
                        num_vars: self.num_vars,
                    });
                }
                if !c.is_finite() {
                    return Err(LpError::NonFinite(format!("row {r}, variable {v}")));
                }
            }
        }
        for (v, &(lo, hi)) in self.bounds.iter().enumerate() {
            if lo.is_nan() || hi.is_nan() || lo > hi {
                return Err(LpError::EmptyBounds { var: v, lo, hi });
            }
        }
        Ok(())
    }

    /// Value of `row . x`.
    pub fn row_value(&self, row: &LpRow, x: &[f64]) -> f64 {
        row.coeffs.iter().map(|&(v, c)| c * x[v]).sum()
    }

    pub fn objective_value(&self, x: &[f64]) -> f64 {
        self.objective
            .iter()
            .zip(x.iter())
            .map(|(c, v)| c * v)
            .sum()
    }

    /// Largest constraint or bound violation of `x`.
    pub fn infeasibility(&self, x: &[f64]) -> f64 {
        let mut worst = 0.0f64;
        for row in &self.rows {
            let val = self.row_value(row, x);
            let viol = match row.rel {
                Relation::Le => val - row.rhs,
                Relation::Ge => row.rhs - val,
                Relation::Eq => (val - row.rhs).abs(),
            };
            worst = worst.max(viol);
        }
        for (j, &(lo, hi)) in self.bounds.iter().enumerate() {
            worst = worst.max(lo - x[j]).max(x[j] - hi);
        }
        worst
    }

    /// Dual objective of row multipliers `y` under the reporting convention
    /// (`y >= 0` on `>=` rows, `y <= 0` on `<=` rows, free on `=` rows).
    /// Reduced costs that require a missing finite bound make the multipliers
    /// dual-infeasible, reported as `None`.
    pub fn dual_objective(&self, y: &[f64], tol: f64) -> Option<f64> {
        let mut rc = self.objective.clone();
        for (row, &yr) in self.rows.iter().zip(y.iter()) {
            for &(v, c) in &row.coeffs {
                rc[v] -= c * yr;
            }
        }
        let mut total: f64 = self
            .rows
            .iter()
            .zip(y.iter())
            .map(|(row, &yr)| row.rhs * yr)
            .sum();
        for (j, &(lo, hi)) in self.bounds.iter().enumerate() {
            if rc[j] > tol {
                if !lo.is_finite() {
                    return None;
                }
                total += lo * rc[j];
            } else if rc[j] < -tol {
                if !hi.is_finite() {
                    return None;
                }
                total += hi * rc[j];
            }
        }
        Some(total)
    }

    /// True when `ray` is an improving recession direction: it satisfies the
    /// homogeneous constraints and strictly decreases the objective.
    pub fn is_improving_ray(&self, ray: &[f64], tol: f64) -> bool {
        if ray.len() != self.num_vars || ray.iter().any(|v| !v.is_finite()) {
            return false;
        }
        let scale = ray.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        if scale <= tol {
            return false;
        }
        for row in &self.rows {
            let val = self.row_value(row, ray);
            let ok = match row.rel {
                Relation::Le => val <= tol * scale,
                Relation::Ge => val >= -tol * scale,
                Relation::Eq => val.abs() <= tol * scale,
            };
            if !ok {
                return false;
            }
        }
        for (j, &(lo, hi)) in self.bounds.iter().enumerate() {
            if lo.is_finite() && ray[j] < -tol * scale {
                return false;
            }
            if hi.is_finite() && ray[j] > tol * scale {
                return false;
            }
        }
        self.objective_value(ray) < -tol * scale
    }
}

#[derive(Debug, Clone)]
pub struct Optimal {
    pub primal: Vec<f64>,
    pub dual: Vec<f64>,
    pub objective: f64,
}

#[derive(Debug, Clone)]
pub enum LpOutcome {
    Optimal(Optimal),
    Infeasible,
    Unbounded { ray: Vec<f64> },
}

impl LpOutcome {
    pub fn optimal(&self) -> Option<&Optimal> {
        match self {
            LpOutcome::Optimal(o) => Some(o),
            _ => None,
        }
    }

    pub fn expect_optimal(&self) -> &Optimal {
        self.optimal().expect("LP outcome is not optimal")
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Backend {
    Auto,
    DenseSimplex,
    InteriorPoint,
}

/// Dense-tableau cell budget before switching to the interior-point backend
/// (about 128 MB of f64 cells).
const DENSE_CELL_LIMIT: usize = 16_000_000;

fn estimated_tableau_cells(instance: &LpInstance) -> usize {
    let m = instance.rows.len() + 4;
    let n = instance.num_vars + 2 * instance.rows.len() + 4;
    m.saturating_mul(n)
}

pub fn solve(instance: &LpInstance, tol: f64) -> Result<LpOutcome, LpError> {
    solve_with(instance, tol, Backend::Auto)
}

pub fn solve_with(instance: &LpInstance, tol: f64, backend: Backend) -> Result<LpOutcome, LpError> {
    instance.validate()?;
    let outcome = match backend {
        Backend::DenseSimplex => simplex::solve(instance, tol)?,
        Backend::InteriorPoint => ipm::solve(instance, tol)?,
        Backend::Auto => {
            if estimated_tableau_cells(instance) <= DENSE_CELL_LIMIT {
                simplex::solve(instance, tol)?
            } else {
                ipm::solve(instance, tol)?
            }
        }
    };
    if let LpOutcome::Unbounded { ray } = &outcome {
        if !instance.is_improving_ray(ray, tol.max(1e-9)) {
            let ray = synthesize_ray(instance, tol)?;
            return Ok(LpOutcome::Unbounded { ray });
        }
    }
    Ok(outcome)
}

/// Recovers an improving recession ray by solving the homogenized LP
/// `min c.d` over the recession cone with the normalization `c.d >= -1`.
pub fn synthesize_ray(instance: &LpInstance, tol: f64) -> Result<Vec<f64>, LpError> {
    let n = instance.num_vars;
    let mut aux = LpInstance::new(n);
    aux.objective = instance.objective.clone();
    for row in &instance.rows {
        aux.add_row(row.coeffs.clone(), row.rel, 0.0);
    }
    let norm_row: Vec<(usize, f64)> = instance
        .objective
        .iter()
        .enumerate()
        .filter(|(_, c)| **c != 0.0)
        .map(|(j, &c)| (j, c))
        .collect();
    aux.add_row(norm_row, Relation::Ge, -1.0);
    for (j, &(lo, hi)) in instance.bounds.iter().enumerate() {
        aux.bounds[j] = (
            if lo.is_finite() { 0.0 } else { f64::NEG_INFINITY },
            if hi.is_finite() { 0.0 } else { f64::INFINITY },
        );
    }
    match simplex::solve(&aux, tol)? {
        LpOutcome::Optimal(opt) if opt.objective < -0.5 => Ok(opt.primal),
        other => Err(LpError::NumericalFailure(format!(
            "ray synthesis produced {other:?} instead of a descent direction"
        ))),
    }
}
