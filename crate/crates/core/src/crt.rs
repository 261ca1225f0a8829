//! Server-side travel-cost model and cost reference table, client-side cost
//! estimators, the exact-cost oracle used by evaluation, and the request-range
//! computation that keeps the client's locality hidden.

use std::collections::BTreeMap;

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geo::{dijkstra, Coord, GeoError, GridSpec, LocationId, LocationModel, LrSet, ObfRange};

#[derive(Debug, Error)]
pub enum CrtError {
    #[error(transparent)]
    Geo(#[from] GeoError),
    #[error("prior vector of length {len} sums to {sum}, expected 1 within 1e-9")]
    UnnormalizedPrior { len: usize, sum: f64 },
    #[error("prior entry {index} is negative ({value})")]
    NegativePrior { index: usize, value: f64 },
    #[error("prior length {got} does not match location count {expected}")]
    PriorLengthMismatch { got: usize, expected: usize },
    #[error("travel graph has {got} nodes but the fine model has {expected}")]
    TravelGraphSizeMismatch { got: usize, expected: usize },
    #[error("travel graph is disconnected: node {from} cannot reach target {target}")]
    DisconnectedTravelGraph { from: usize, target: usize },
    #[error("location {coarse} snaps {snap_km} km away, beyond the table bound {delta_max_km} km")]
    CoverageExceeded {
        coarse: usize,
        snap_km: f64,
        delta_max_km: f64,
    },
    #[error("LR location set is empty")]
    EmptyLrSet,
    #[error("cost reference table persistence requires a grid fine model")]
    NonGridFineModel,
    #[error("malformed table file: {0}")]
    MalformedTable(String),
}

/// Directed graph of travel costs between fine locations. The travel cost
/// between two nodes is the shortest-path cost over this graph.
#[derive(Debug, Clone)]
pub struct TravelCostGraph {
    num_nodes: usize,
    adj: Vec<Vec<(usize, f64)>>,
    radj: Vec<Vec<(usize, f64)>>,
}

impl TravelCostGraph {
    pub fn new(num_nodes: usize) -> Self {
        TravelCostGraph {
            num_nodes,
            adj: vec![Vec::new(); num_nodes],
            radj: vec![Vec::new(); num_nodes],
        }
    }

    pub fn num_nodes(&self) -> usize {
        self.num_nodes
    }

    pub fn add_edge(&mut self, src: usize, dst: usize, cost_km: f64) {
        self.adj[src].push((dst, cost_km));
        self.radj[dst].push((src, cost_km));
    }

    pub fn from_edge_list(num_nodes: usize, edges: &[(usize, usize, f64)]) -> Self {
        let mut g = TravelCostGraph::new(num_nodes);
        for &(s, d, c) in edges {
            g.add_edge(s, d, c);
        }
        g
    }

    /// Default desk travel model: bidirectional edges between orthogonally
    /// adjacent grid cells, cost equal to the center-to-center distance.
    pub fn grid_orthogonal(model: &LocationModel) -> Result<Self, CrtError> {
        let meta = model.grid().ok_or(CrtError::NonGridFineModel)?;
        let mut g = TravelCostGraph::new(model.len());
        let id = |r: usize, c: usize| r * meta.cols + c;
        for r in 0..meta.rows {
            for c in 0..meta.cols {
                if c + 1 < meta.cols {
                    let w = model.distance_unchecked(id(r, c), id(r, c + 1));
                    g.add_edge(id(r, c), id(r, c + 1), w);
                    g.add_edge(id(r, c + 1), id(r, c), w);
                }
                if r + 1 < meta.rows {
                    let w = model.distance_unchecked(id(r, c), id(r + 1, c));
                    g.add_edge(id(r, c), id(r + 1, c), w);
                    g.add_edge(id(r + 1, c), id(r, c), w);
                }
            }
        }
        Ok(g)
    }

    /// Parses an edge-list CSV with header `src,dst,cost_km`.
    pub fn from_csv(num_nodes: usize, text: &str) -> Result<Self, CrtError> {
        let mut rdr = csv::ReaderBuilder::new()
            .has_headers(true)
            .from_reader(text.as_bytes());
        let mut g = TravelCostGraph::new(num_nodes);
        for rec in rdr.records() {
            let rec = rec.map_err(|e| CrtError::MalformedTable(e.to_string()))?;
            let parse = |idx: usize| -> Result<f64, CrtError> {
                rec[idx]
                    .trim()
                    .parse()
                    .map_err(|e| CrtError::MalformedTable(format!("{e}")))
            };
            let s = parse(0)? as usize;
            let d = parse(1)? as usize;
            let c = parse(2)?;
            if s >= num_nodes || d >= num_nodes {
                return Err(CrtError::MalformedTable(format!(
                    "edge ({s},{d}) out of range for {num_nodes} nodes"
                )));
            }
            g.add_edge(s, d, c);
        }
        Ok(g)
    }

    /// Shortest-path costs from every node to `target` (reverse Dijkstra).
    pub fn costs_to_target(&self, target: usize) -> Vec<f64> {
        dijkstra(self.num_nodes, target, |u| self.radj[u].iter().copied())
    }

    pub fn costs_from(&self, src: usize) -> Vec<f64> {
        dijkstra(self.num_nodes, src, |u| self.adj[u].iter().copied())
    }

    pub fn edges(&self) -> impl Iterator<Item = (usize, usize, f64)> + '_ {
        self.adj
            .iter()
            .enumerate()
            .flat_map(|(s, out)| out.iter().map(move |&(d, c)| (s, d, c)))
    }
}

/// Prior distributions: `p` over real locations, `q` over target locations.
#[derive(Debug, Clone)]
pub struct PriorDistributions {
    pub p: Vec<f64>,
    pub q: Vec<f64>,
}

fn check_prior(v: &[f64]) -> Result<(), CrtError> {
    for (i, &x) in v.iter().enumerate() {
        if x < 0.0 {
            return Err(CrtError::NegativePrior { index: i, value: x });
        }
    }
    let sum: f64 = v.iter().sum();
    if (sum - 1.0).abs() > 1e-9 {
        return Err(CrtError::UnnormalizedPrior { len: v.len(), sum });
    }
    Ok(())
}

impl PriorDistributions {
    pub fn new(p: Vec<f64>, q: Vec<f64>) -> Result<Self, CrtError> {
        check_prior(&p)?;
        check_prior(&q)?;
        Ok(PriorDistributions { p, q })
    }

    pub fn uniform(k: usize, targets: usize) -> Self {
        PriorDistributions {
            p: vec![1.0 / k as f64; k],
            q: vec![1.0 / targets as f64; targets],
        }
    }
}

/// Precomputed travel costs over the fine location set, shared by the table
/// builder and the exact-cost oracle.
pub struct CostOracle {
    fine_model: LocationModel,
    /// dist[i * n + j] = travel cost from fine node i to fine node j.
    dist: Vec<f64>,
}

impl CostOracle {
    pub fn new(fine_model: LocationModel, travel: &TravelCostGraph) -> Result<Self, CrtError> {
        let n = fine_model.len();
        if travel.num_nodes() != n {
            return Err(CrtError::TravelGraphSizeMismatch {
                got: travel.num_nodes(),
                expected: n,
            });
        }
        let columns: Vec<Vec<f64>> = (0..n)
            .into_par_iter()
            .map(|j| travel.costs_to_target(j))
            .collect();
        let mut dist = vec![0.0; n * n];
        for (j, col) in columns.iter().enumerate() {
            for (i, &d) in col.iter().enumerate() {
                if d.is_infinite() {
                    return Err(CrtError::DisconnectedTravelGraph { from: i, target: j });
                }
                dist[i * n + j] = d;
            }
        }
        Ok(CostOracle { fine_model, dist })
    }

    pub fn fine_model(&self) -> &LocationModel {
        &self.fine_model
    }

    pub fn fine_len(&self) -> usize {
        self.fine_model.len()
    }

    /// Network travel cost between fine nodes.
    pub fn tc_fine(&self, i: usize, j: usize) -> f64 {
        self.dist[i * self.fine_model.len() + j]
    }

    /// Nearest fine node to a coarse location and its snap distance.
    pub fn snap(&self, model: &LocationModel, id: LocationId) -> Result<(usize, f64), CrtError> {
        let c = model.coord(id)?;
        Ok(nearest_in(&self.fine_model, c))
    }

    /// Travel cost from coarse location `x` to fine target `j`: the snap leg
    /// to the nearest network node plus the network path.
    pub fn tc(&self, model: &LocationModel, x: LocationId, j: usize) -> Result<f64, CrtError> {
        let (fx, sx) = self.snap(model, x)?;
        Ok(sx + self.tc_fine(fx, j))
    }

    /// Ground-truth cost coefficient; used by evaluation only.
    pub fn exact_cost(
        &self,
        model: &LocationModel,
        priors: &PriorDistributions,
        i: LocationId,
        k: LocationId,
    ) -> Result<f64, CrtError> {
        check_prior(&priors.p)?;
        check_prior(&priors.q)?;
        if priors.p.len() != model.len() {
            return Err(CrtError::PriorLengthMismatch {
                got: priors.p.len(),
                expected: model.len(),
            });
        }
        if priors.q.len() != self.fine_len() {
            return Err(CrtError::PriorLengthMismatch {
                got: priors.q.len(),
                expected: self.fine_len(),
            });
        }
        let (fi, si) = self.snap(model, i)?;
        let (fk, sk) = self.snap(model, k)?;
        let mut acc = 0.0;
        for (j, &qj) in priors.q.iter().enumerate() {
            if qj == 0.0 {
                continue;
            }
            let ti = si + self.tc_fine(fi, j);
            let tk = sk + self.tc_fine(fk, j);
            acc += qj * (ti - tk).abs();
        }
        Ok(priors.p[i] * acc)
    }

    /// Full K x K exact cost matrix.
    pub fn exact_cost_matrix(
        &self,
        model: &LocationModel,
        priors: &PriorDistributions,
    ) -> Result<Vec<Vec<f64>>, CrtError> {
        let k = model.len();
        let snaps: Vec<(usize, f64)> = (0..k)
            .map(|i| self.snap(model, i))
            .collect::<Result<_, _>>()?;
        check_prior(&priors.p)?;
        check_prior(&priors.q)?;
        if priors.p.len() != k {
            return Err(CrtError::PriorLengthMismatch {
                got: priors.p.len(),
                expected: k,
            });
        }
        if priors.q.len() != self.fine_len() {
            return Err(CrtError::PriorLengthMismatch {
                got: priors.q.len(),
                expected: self.fine_len(),
            });
        }
        let rows: Vec<Vec<f64>> = (0..k)
            .into_par_iter()
            .map(|i| {
                let (fi, si) = snaps[i];
                (0..k)
                    .map(|kk| {
                        let (fk, sk) = snaps[kk];
                        let mut acc = 0.0;
                        for (j, &qj) in priors.q.iter().enumerate() {
                            if qj == 0.0 {
                                continue;
                            }
                            let ti = si + self.tc_fine(fi, j);
                            let tk = sk + self.tc_fine(fk, j);
                            acc += qj * (ti - tk).abs();
                        }
                        priors.p[i] * acc
                    })
                    .collect()
            })
            .collect();
        Ok(rows)
    }
}

/// Nearest node of `model` to coordinate `c`, ties to the smaller id. Grid
/// models use index arithmetic instead of a linear scan.
fn nearest_in(model: &LocationModel, c: Coord) -> (usize, f64) {
    if let (Some(meta), Coord::Planar { x_km, y_km }) = (model.grid(), c) {
        let s = meta.cell_size_km;
        let clamp = |v: f64, hi: usize| -> usize {
            let cell = (v / s - 0.5).floor();
            (cell.max(0.0) as usize).min(hi - 1)
        };
        let c0 = clamp(x_km, meta.cols);
        let r0 = clamp(y_km, meta.rows);
        let mut best = (usize::MAX, f64::INFINITY);
        for r in r0..=(r0 + 1).min(meta.rows - 1) {
            for cc in c0..=(c0 + 1).min(meta.cols - 1) {
                let id = r * meta.cols + cc;
                let d = model.distance_to_coord(id, c).expect("grid id in range");
                if d < best.1 || (d == best.1 && id < best.0) {
                    best = (id, d);
                }
            }
        }
        return (best.0, best.1);
    }
    model.nearest(c)
}

/// The published cost reference table: expected cost-estimation discrepancy
/// `beta` for every ordered pair of fine locations, plus the snap-distance
/// bound `delta_max_km` for locations inside the covered region.
pub struct CostReferenceTable {
    fine_model: LocationModel,
    beta: Vec<f64>,
    pub delta_max_km: f64,
    grid_spec: Option<GridSpec>,
}

impl CostReferenceTable {
    pub fn fine_model(&self) -> &LocationModel {
        &self.fine_model
    }

    pub fn fine_len(&self) -> usize {
        self.fine_model.len()
    }

    pub fn beta(&self, i: usize, k: usize) -> f64 {
        self.beta[i * self.fine_model.len() + k]
    }

    pub fn betas(&self) -> &[f64] {
        &self.beta
    }

    pub fn snap(&self, model: &LocationModel, id: LocationId) -> Result<(usize, f64), CrtError> {
        let c = model.coord(id)?;
        Ok(nearest_in(&self.fine_model, c))
    }

    /// Serializes as CSV rows `fine_i,fine_k,beta_km` (9 decimal places).
    pub fn write_csv<W: std::io::Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "fine_i,fine_k,beta_km")?;
        let n = self.fine_model.len();
        for i in 0..n {
            for k in 0..n {
                writeln!(w, "{},{},{:.9}", i, k, self.beta(i, k))?;
            }
        }
        Ok(())
    }

    /// Header JSON describing the fine grid and the snap bound.
    pub fn header_json(&self) -> Result<String, CrtError> {
        let spec = self.grid_spec.ok_or(CrtError::NonGridFineModel)?;
        let header = CrtHeader {
            fine_grid: spec,
            delta_max_km: self.delta_max_km,
        };
        serde_json::to_string_pretty(&header).map_err(|e| CrtError::MalformedTable(e.to_string()))
    }

    pub fn from_parts(header_json: &str, csv_text: &str) -> Result<Self, CrtError> {
        let header: CrtHeader = serde_json::from_str(header_json)
            .map_err(|e| CrtError::MalformedTable(e.to_string()))?;
        let fine_model = LocationModel::from_grid(&header.fine_grid)?;
        let n = fine_model.len();
        let mut beta = vec![f64::NAN; n * n];
        let mut rdr = csv::ReaderBuilder::new()
            .has_headers(true)
            .from_reader(csv_text.as_bytes());
        for rec in rdr.records() {
            let rec = rec.map_err(|e| CrtError::MalformedTable(e.to_string()))?;
            let i: usize = rec[0]
                .parse()
                .map_err(|e| CrtError::MalformedTable(format!("{e}")))?;
            let k: usize = rec[1]
                .parse()
                .map_err(|e| CrtError::MalformedTable(format!("{e}")))?;
            let b: f64 = rec[2]
                .parse()
                .map_err(|e| CrtError::MalformedTable(format!("{e}")))?;
            if i >= n || k >= n {
                return Err(CrtError::MalformedTable(format!("pair ({i},{k}) out of range")));
            }
            beta[i * n + k] = b;
        }
        if beta.iter().any(|b| b.is_nan()) {
            return Err(CrtError::MalformedTable("missing beta entries".into()));
        }
        Ok(CostReferenceTable {
            fine_model,
            beta,
            delta_max_km: header.delta_max_km,
            grid_spec: Some(header.fine_grid),
        })
    }
}

#[derive(Serialize, Deserialize)]
struct CrtHeader {
    fine_grid: GridSpec,
    delta_max_km: f64,
}

/// Builds the table: `beta[i][k] = sum_j q_j * |tc(i,j) - tc(k,j)|` over fine
/// pairs. O(n^3) in the fine set size; rows are computed in parallel.
pub fn build_crt(
    fine_model: &LocationModel,
    travel: &TravelCostGraph,
    q: &[f64],
) -> Result<CostReferenceTable, CrtError> {
    let oracle = CostOracle::new(fine_model.clone(), travel)?;
    build_crt_from_oracle(&oracle, q)
}

pub fn build_crt_from_oracle(
    oracle: &CostOracle,
    q: &[f64],
) -> Result<CostReferenceTable, CrtError> {
    check_prior(q)?;
    let n = oracle.fine_len();
    if q.len() != n {
        return Err(CrtError::PriorLengthMismatch {
            got: q.len(),
            expected: n,
        });
    }
    let beta: Vec<f64> = (0..n)
        .into_par_iter()
        .flat_map_iter(|i| {
            let oracle = &*oracle;
            (0..n).map(move |k| {
                let mut acc = 0.0;
                for (j, &qj) in q.iter().enumerate() {
                    if qj == 0.0 {
                        continue;
                    }
                    acc += qj * (oracle.tc_fine(i, j) - oracle.tc_fine(k, j)).abs();
                }
                acc
            })
        })
        .collect();
    let fine_model = oracle.fine_model().clone();
    let grid_spec = fine_model.grid().map(|meta| GridSpec {
        rows: meta.rows,
        cols: meta.cols,
        cell_size_km: meta.cell_size_km,
        metric: fine_model.metric(),
        origin: None,
    });
    let delta_max_km = match fine_model.grid() {
        // Any point of the covered rectangle is within half a cell diagonal
        // of some center.
        Some(meta) => meta.cell_size_km * std::f64::consts::SQRT_2 / 2.0,
        // Without a grid there is no geometric coverage bound; fall back to
        // the covering radius implied by an even layout.
        None => {
            let mut worst = 0.0f64;
            for i in 0..n {
                let mut nearest = f64::INFINITY;
                for j in 0..n {
                    if i != j {
                        nearest = nearest.min(fine_model.distance_unchecked(i, j));
                    }
                }
                if nearest.is_finite() {
                    worst = worst.max(nearest);
                }
            }
            worst / 2.0
        }
    };
    Ok(CostReferenceTable {
        fine_model,
        beta,
        delta_max_km,
        grid_spec,
    })
}

/// Client-side cost estimates over `N_m x O_m`: entrywise upper and lower
/// bounds on the exact coefficients, plus the snap choices behind them.
#[derive(Debug, Clone)]
pub struct CostMatrixEstimate {
    /// upper[r][c] for row member r of the LR set, column c of the range.
    pub upper: Vec<Vec<f64>>,
    pub lower: Vec<Vec<f64>>,
    /// coarse location id -> (fine id, snap distance km)
    pub snap: BTreeMap<LocationId, (usize, f64)>,
}

fn checked_snap(
    crt: &CostReferenceTable,
    model: &LocationModel,
    id: LocationId,
) -> Result<(usize, f64), CrtError> {
    let (fid, d) = crt.snap(model, id)?;
    if d > crt.delta_max_km + 1e-12 {
        return Err(CrtError::CoverageExceeded {
            coarse: id,
            snap_km: d,
            delta_max_km: crt.delta_max_km,
        });
    }
    Ok((fid, d))
}

/// Upper/lower cost estimates for a single pair, without the `p_i` factor.
/// The lower estimate is clamped at zero since cost coefficients are
/// non-negative.
pub fn estimate_unit(
    crt: &CostReferenceTable,
    model: &LocationModel,
    i: LocationId,
    k: LocationId,
) -> Result<(f64, f64), CrtError> {
    let (fi, si) = checked_snap(crt, model, i)?;
    let (fk, sk) = checked_snap(crt, model, k)?;
    let b = crt.beta(fi, fk);
    Ok((b + si + sk, (b - si - sk).max(0.0)))
}

pub fn estimate_costs(
    crt: &CostReferenceTable,
    lr: &LrSet,
    obf: &ObfRange,
    model: &LocationModel,
    p: &[f64],
) -> Result<CostMatrixEstimate, CrtError> {
    if p.len() != model.len() {
        return Err(CrtError::PriorLengthMismatch {
            got: p.len(),
            expected: model.len(),
        });
    }
    let mut snap = BTreeMap::new();
    for &id in lr.members.iter().chain(obf.members.iter()) {
        if !snap.contains_key(&id) {
            snap.insert(id, checked_snap(crt, model, id)?);
        }
    }
    let mut upper = Vec::with_capacity(lr.members.len());
    let mut lower = Vec::with_capacity(lr.members.len());
    for &i in &lr.members {
        let (fi, si) = snap[&i];
        let pi = p[i];
        let mut urow = Vec::with_capacity(obf.members.len());
        let mut lrow = Vec::with_capacity(obf.members.len());
        for &k in &obf.members {
            let (fk, sk) = snap[&k];
            let b = crt.beta(fi, fk);
            urow.push(pi * (b + si + sk));
            lrow.push((pi * (b - si - sk)).max(0.0));
        }
        upper.push(urow);
        lower.push(lrow);
    }
    Ok(CostMatrixEstimate { upper, lower, snap })
}

/// Ground-truth cost coefficient computed straight from the travel graph;
/// convenience wrapper over [`CostOracle`].
pub fn exact_cost(
    model: &LocationModel,
    fine_model: &LocationModel,
    travel: &TravelCostGraph,
    priors: &PriorDistributions,
    i: LocationId,
    k: LocationId,
) -> Result<f64, CrtError> {
    let oracle = CostOracle::new(fine_model.clone(), travel)?;
    oracle.exact_cost(model, priors, i, k)
}

/// Picks a table-request circle: a uniformly chosen anchor from the LR set
/// and radius `max(2 * Gamma, Gamma + r_obf)`, which covers both the LR set
/// and the obfuscation range while only revealing that the real location is
/// within `Gamma` of the anchor.
pub fn request_range<R: Rng>(
    lr: &LrSet,
    r_obf_km: f64,
    rng: &mut R,
) -> Result<(LocationId, f64), CrtError> {
    if lr.members.is_empty() {
        return Err(CrtError::EmptyLrSet);
    }
    let anchor = lr.members[rng.gen_range(0..lr.members.len())];
    let gamma_lr = lr.gamma_lr_km;
    let radius = (2.0 * gamma_lr).max(gamma_lr + r_obf_km);
    Ok((anchor, radius))
}
