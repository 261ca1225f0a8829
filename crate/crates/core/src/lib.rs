//! Locally relevant geo-obfuscation.
//!
//! The pipeline: build a location model and its geo-indistinguishability
//! neighbor graph, pick each user's locally relevant location set and
//! obfuscation range, estimate LP cost coefficients from a server-published
//! cost reference table, assemble the per-user obfuscation LPs with
//! exponential-mechanism ties to shared variables, solve them with Benders
//! decomposition, and audit the resulting matrices for privacy and cost.

pub mod benders;
pub mod crt;
pub mod formulation;
pub mod geo;
pub mod lp;

pub use benders::{BendersError, BendersOptions, BendersState, Cut, CutKind};
pub use crt::{
    build_crt, estimate_costs, exact_cost, request_range, CostMatrixEstimate, CostOracle,
    CostReferenceTable, CrtError, PriorDistributions, TravelCostGraph,
};
pub use formulation::{
    assemble_clr, assemble_omg, build_indicator, extract_matrix, solve_clr_direct, ClrConfig,
    ClrProblem, ClrSolution, FormulationError, IndicatorMatrix, ObfuscationMatrix, TailRule,
    UserLpData,
};
pub use geo::{
    build_geoind_graph, lr_set, obf_range, shortest_path_tree, Coord, GeoError, GeoIndGraph,
    GridSpec, LocationId, LocationModel, LrSet, Metric, ObfRange,
};
