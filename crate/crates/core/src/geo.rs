//! Location models, distance metrics, the geo-indistinguishability neighbor
//! graph, shortest-path trees, locally-relevant location sets, and
//! obfuscation ranges.

use std::cmp::Ordering;
use std::collections::BinaryHeap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Mean Earth radius in kilometers, used by the haversine metric.
pub const EARTH_RADIUS_KM: f64 = 6371.0;

/// Kilometers per degree of latitude on the reference sphere.
pub const KM_PER_DEG_LAT: f64 = EARTH_RADIUS_KM * std::f64::consts::PI / 180.0;

pub type LocationId = usize;

#[derive(Debug, Error)]
pub enum GeoError {
    #[error("location set is empty")]
    EmptyModel,
    #[error("non-finite coordinate at location {0}")]
    NonFiniteCoordinate(usize),
    #[error("mixed coordinate kinds: location 0 is {first}, location {index} is {other}")]
    MixedCoordinateKinds {
        first: &'static str,
        index: usize,
        other: &'static str,
    },
    #[error("metric {metric:?} cannot measure {coord} coordinates")]
    MetricMismatch { metric: Metric, coord: &'static str },
    #[error("grid spec invalid: rows={rows}, cols={cols}, cell_size_km={cell_size_km}")]
    BadGridSpec {
        rows: usize,
        cols: usize,
        cell_size_km: f64,
    },
    #[error("location id {id} out of range (K = {len})")]
    IdOutOfRange { id: usize, len: usize },
    #[error("threshold must be positive, got {0}")]
    NonPositiveThreshold(f64),
    #[error("negative threshold {0}")]
    NegativeThreshold(f64),
}

/// A coordinate, either planar kilometers or geodetic degrees.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum Coord {
    Planar { x_km: f64, y_km: f64 },
    Geodetic { lat_deg: f64, lon_deg: f64 },
}

impl Coord {
    fn kind(&self) -> &'static str {
        match self {
            Coord::Planar { .. } => "planar",
            Coord::Geodetic { .. } => "geodetic",
        }
    }

    fn is_finite(&self) -> bool {
        match *self {
            Coord::Planar { x_km, y_km } => x_km.is_finite() && y_km.is_finite(),
            Coord::Geodetic { lat_deg, lon_deg } => lat_deg.is_finite() && lon_deg.is_finite(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Metric {
    PlanarEuclidean,
    Haversine,
}

/// Great-circle distance in km between two geodetic points.
pub fn haversine_km(lat1_deg: f64, lon1_deg: f64, lat2_deg: f64, lon2_deg: f64) -> f64 {
    let lat1 = lat1_deg.to_radians();
    let lat2 = lat2_deg.to_radians();
    let dlat = (lat2_deg - lat1_deg).to_radians();
    let dlon = (lon2_deg - lon1_deg).to_radians();
    let a = (dlat / 2.0).sin().powi(2) + lat1.cos() * lat2.cos() * (dlon / 2.0).sin().powi(2);
    2.0 * EARTH_RADIUS_KM * a.sqrt().min(1.0).asin()
}

/// Grid discretization of a rectangular region; cells are laid out row-major
/// and represented by their centers.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    pub rows: usize,
    pub cols: usize,
    pub cell_size_km: f64,
    pub metric: Metric,
    /// South-west corner (lat, lon) for geodetic grids; ignored for planar.
    pub origin: Option<(f64, f64)>,
}

impl GridSpec {
    pub fn planar(rows: usize, cols: usize, cell_size_km: f64) -> Self {
        GridSpec {
            rows,
            cols,
            cell_size_km,
            metric: Metric::PlanarEuclidean,
            origin: None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GridMeta {
    pub rows: usize,
    pub cols: usize,
    pub cell_size_km: f64,
}

/// A discrete location set with dense ids `0..K-1`, one shared coordinate
/// kind, and a distance metric.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LocationModel {
    coords: Vec<Coord>,
    metric: Metric,
    grid: Option<GridMeta>,
}

impl LocationModel {
    /// Builds a grid model with cell centers at `((c + 0.5)s, (r + 0.5)s)`,
    /// row-major, so `id = r * cols + c`.
    pub fn from_grid(spec: &GridSpec) -> Result<Self, GeoError> {
        if spec.rows == 0 || spec.cols == 0 || !(spec.cell_size_km > 0.0) {
            return Err(GeoError::BadGridSpec {
                rows: spec.rows,
                cols: spec.cols,
                cell_size_km: spec.cell_size_km,
            });
        }
        let s = spec.cell_size_km;
        let mut coords = Vec::with_capacity(spec.rows * spec.cols);
        match spec.metric {
            Metric::PlanarEuclidean => {
                for r in 0..spec.rows {
                    for c in 0..spec.cols {
                        coords.push(Coord::Planar {
                            x_km: (c as f64 + 0.5) * s,
                            y_km: (r as f64 + 0.5) * s,
                        });
                    }
                }
            }
            Metric::Haversine => {
                let (lat0, lon0) = spec.origin.unwrap_or((0.0, 0.0));
                for r in 0..spec.rows {
                    for c in 0..spec.cols {
                        let lat = lat0 + (r as f64 + 0.5) * s / KM_PER_DEG_LAT;
                        let km_per_deg_lon = KM_PER_DEG_LAT * lat.to_radians().cos();
                        let lon = lon0 + (c as f64 + 0.5) * s / km_per_deg_lon;
                        coords.push(Coord::Geodetic {
                            lat_deg: lat,
                            lon_deg: lon,
                        });
                    }
                }
            }
        }
        Ok(LocationModel {
            coords,
            metric: spec.metric,
            grid: Some(GridMeta {
                rows: spec.rows,
                cols: spec.cols,
                cell_size_km: s,
            }),
        })
    }

    pub fn from_coords(coords: Vec<Coord>, metric: Metric) -> Result<Self, GeoError> {
        if coords.is_empty() {
            return Err(GeoError::EmptyModel);
        }
        let first = coords[0].kind();
        for (i, c) in coords.iter().enumerate() {
            if !c.is_finite() {
                return Err(GeoError::NonFiniteCoordinate(i));
            }
            if c.kind() != first {
                return Err(GeoError::MixedCoordinateKinds {
                    first,
                    index: i,
                    other: c.kind(),
                });
            }
        }
        let coord_kind = coords[0].kind();
        let ok = matches!(
            (metric, coord_kind),
            (Metric::PlanarEuclidean, "planar") | (Metric::Haversine, "geodetic")
        );
        if !ok {
            return Err(GeoError::MetricMismatch {
                metric,
                coord: coord_kind,
            });
        }
        Ok(LocationModel {
            coords,
            metric,
            grid: None,
        })
    }

    pub fn len(&self) -> usize {
        self.coords.len()
    }

    pub fn is_empty(&self) -> bool {
        self.coords.is_empty()
    }

    pub fn metric(&self) -> Metric {
        self.metric
    }

    pub fn grid(&self) -> Option<GridMeta> {
        self.grid
    }

    pub fn coord(&self, id: LocationId) -> Result<Coord, GeoError> {
        self.coords.get(id).copied().ok_or(GeoError::IdOutOfRange {
            id,
            len: self.coords.len(),
        })
    }

    pub fn coords(&self) -> &[Coord] {
        &self.coords
    }

    fn check_id(&self, id: LocationId) -> Result<(), GeoError> {
        if id >= self.coords.len() {
            return Err(GeoError::IdOutOfRange {
                id,
                len: self.coords.len(),
            });
        }
        Ok(())
    }

    /// Direct (straight-line) distance in km between two locations.
    pub fn direct_distance(&self, i: LocationId, j: LocationId) -> Result<f64, GeoError> {
        self.check_id(i)?;
        self.check_id(j)?;
        Ok(self.distance_unchecked(i, j))
    }

    pub fn distance_unchecked(&self, i: LocationId, j: LocationId) -> f64 {
        if i == j {
            return 0.0;
        }
        // Planar grids use integer cell deltas so that neighbor spacing is an
        // exact multiple of the cell size.
        if let (Some(meta), Metric::PlanarEuclidean) = (self.grid, self.metric) {
            let (ri, ci) = (i / meta.cols, i % meta.cols);
            let (rj, cj) = (j / meta.cols, j % meta.cols);
            let dr = ri.abs_diff(rj) as f64;
            let dc = ci.abs_diff(cj) as f64;
            return meta.cell_size_km * (dr * dr + dc * dc).sqrt();
        }
        coord_distance(self.metric, self.coords[i], self.coords[j])
    }

    /// Distance from an arbitrary coordinate to a location in the model.
    pub fn distance_to_coord(&self, id: LocationId, c: Coord) -> Result<f64, GeoError> {
        self.check_id(id)?;
        Ok(coord_distance(self.metric, self.coords[id], c))
    }

    /// Nearest location to `c`, ties broken by smaller id.
    pub fn nearest(&self, c: Coord) -> (LocationId, f64) {
        let mut best = (0usize, f64::INFINITY);
        for (id, &p) in self.coords.iter().enumerate() {
            let d = coord_distance(self.metric, p, c);
            if d < best.1 {
                best = (id, d);
            }
        }
        best
    }

    /// Maximum pairwise direct distance. O(K^2).
    pub fn diameter_km(&self) -> f64 {
        let k = self.coords.len();
        let mut best = 0.0f64;
        for i in 0..k {
            for j in (i + 1)..k {
                best = best.max(self.distance_unchecked(i, j));
            }
        }
        best
    }
}

fn coord_distance(metric: Metric, a: Coord, b: Coord) -> f64 {
    match (metric, a, b) {
        (Metric::PlanarEuclidean, Coord::Planar { x_km: x1, y_km: y1 }, Coord::Planar { x_km: x2, y_km: y2 }) => {
            ((x1 - x2).powi(2) + (y1 - y2).powi(2)).sqrt()
        }
        (
            Metric::Haversine,
            Coord::Geodetic {
                lat_deg: la1,
                lon_deg: lo1,
            },
            Coord::Geodetic {
                lat_deg: la2,
                lon_deg: lo2,
            },
        ) => haversine_km(la1, lo1, la2, lo2),
        _ => panic!("metric/coordinate kind mismatch in validated model"),
    }
}

/// Parses a coordinate list CSV with header `id,lat,lon` or `id,x_km,y_km`.
/// Rows must appear in id order 0..K-1.
pub fn parse_coordinate_csv(text: &str) -> Result<LocationModel, String> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .from_reader(text.as_bytes());
    let headers = rdr.headers().map_err(|e| e.to_string())?.clone();
    let cols: Vec<&str> = headers.iter().map(str::trim).collect();
    let geodetic = match cols.as_slice() {
        ["id", "lat", "lon"] => true,
        ["id", "x_km", "y_km"] => false,
        other => return Err(format!("unrecognized coordinate header {other:?}")),
    };
    let mut coords = Vec::new();
    for (n, rec) in rdr.records().enumerate() {
        let rec = rec.map_err(|e| e.to_string())?;
        let id: usize = rec[0].trim().parse().map_err(|e| format!("row {n}: {e}"))?;
        if id != n {
            return Err(format!("ids must be dense 0..K-1 in order; row {n} has id {id}"));
        }
        let a: f64 = rec[1].trim().parse().map_err(|e| format!("row {n}: {e}"))?;
        let b: f64 = rec[2].trim().parse().map_err(|e| format!("row {n}: {e}"))?;
        coords.push(if geodetic {
            Coord::Geodetic {
                lat_deg: a,
                lon_deg: b,
            }
        } else {
            Coord::Planar { x_km: a, y_km: b }
        });
    }
    let metric = if geodetic {
        Metric::Haversine
    } else {
        Metric::PlanarEuclidean
    };
    LocationModel::from_coords(coords, metric).map_err(|e| e.to_string())
}

/// Undirected graph connecting location pairs within direct distance
/// `gamma_km`; edge weights are those distances.
#[derive(Debug, Clone)]
pub struct GeoIndGraph {
    pub gamma_km: f64,
    num_nodes: usize,
    edges: Vec<(LocationId, LocationId, f64)>,
    adj: Vec<Vec<(LocationId, f64)>>,
}

impl GeoIndGraph {
    pub fn num_nodes(&self) -> usize {
        self.num_nodes
    }

    /// Edges as (i, j, weight_km) with i < j.
    pub fn edges(&self) -> &[(LocationId, LocationId, f64)] {
        &self.edges
    }

    pub fn neighbors(&self, id: LocationId) -> &[(LocationId, f64)] {
        &self.adj[id]
    }

    pub fn degree(&self, id: LocationId) -> usize {
        self.adj[id].len()
    }
}

/// Connects every pair with direct distance <= `gamma_km`. O(K^2) comparisons.
pub fn build_geoind_graph(model: &LocationModel, gamma_km: f64) -> Result<GeoIndGraph, GeoError> {
    if !(gamma_km > 0.0) {
        return Err(GeoError::NonPositiveThreshold(gamma_km));
    }
    let k = model.len();
    let mut edges = Vec::new();
    let mut adj = vec![Vec::new(); k];
    for i in 0..k {
        for j in (i + 1)..k {
            let d = model.distance_unchecked(i, j);
            if d <= gamma_km {
                edges.push((i, j, d));
                adj[i].push((j, d));
                adj[j].push((i, d));
            }
        }
    }
    Ok(GeoIndGraph {
        gamma_km,
        num_nodes: k,
        edges,
        adj,
    })
}

#[derive(Copy, Clone, PartialEq)]
struct HeapEntry {
    dist: f64,
    node: usize,
}

impl Eq for HeapEntry {}

impl Ord for HeapEntry {
    fn cmp(&self, other: &Self) -> Ordering {
        // Reversed so BinaryHeap pops the smallest distance; ties go to the
        // smaller node id.
        other
            .dist
            .total_cmp(&self.dist)
            .then_with(|| other.node.cmp(&self.node))
    }
}

impl PartialOrd for HeapEntry {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

/// Dijkstra from `root`; unreachable nodes map to `f64::INFINITY`.
pub fn shortest_path_tree(graph: &GeoIndGraph, root: LocationId) -> Result<Vec<f64>, GeoError> {
    if root >= graph.num_nodes {
        return Err(GeoError::IdOutOfRange {
            id: root,
            len: graph.num_nodes,
        });
    }
    Ok(dijkstra(graph.num_nodes, root, |u| {
        graph.adj[u].iter().copied()
    }))
}

/// Generic Dijkstra over a neighbor function; shared with the travel-cost graph.
pub(crate) fn dijkstra<F, I>(n: usize, root: usize, neighbors: F) -> Vec<f64>
where
    F: Fn(usize) -> I,
    I: Iterator<Item = (usize, f64)>,
{
    let mut dist = vec![f64::INFINITY; n];
    let mut done = vec![false; n];
    let mut heap = BinaryHeap::new();
    dist[root] = 0.0;
    heap.push(HeapEntry {
        dist: 0.0,
        node: root,
    });
    while let Some(HeapEntry { dist: d, node: u }) = heap.pop() {
        if done[u] {
            continue;
        }
        done[u] = true;
        for (v, w) in neighbors(u) {
            let nd = d + w;
            if nd < dist[v] {
                dist[v] = nd;
                heap.push(HeapEntry { dist: nd, node: v });
            }
        }
    }
    dist
}

/// The locations whose graph path distance from `center` is at most
/// `gamma_lr_km`, together with those distances.
#[derive(Debug, Clone)]
pub struct LrSet {
    pub center: LocationId,
    pub gamma_lr_km: f64,
    /// Sorted ascending by location id; always contains `center`.
    pub members: Vec<LocationId>,
    /// Path distance per member, parallel to `members`.
    pub path_dist: Vec<f64>,
}

impl LrSet {
    pub fn len(&self) -> usize {
        self.members.len()
    }

    pub fn is_empty(&self) -> bool {
        self.members.is_empty()
    }

    pub fn contains(&self, id: LocationId) -> bool {
        self.members.binary_search(&id).is_ok()
    }

    pub fn path_dist_of(&self, id: LocationId) -> Option<f64> {
        self.members
            .binary_search(&id)
            .ok()
            .map(|idx| self.path_dist[idx])
    }
}

pub fn lr_set(
    graph: &GeoIndGraph,
    center: LocationId,
    gamma_lr_km: f64,
) -> Result<LrSet, GeoError> {
    if gamma_lr_km < 0.0 {
        return Err(GeoError::NegativeThreshold(gamma_lr_km));
    }
    let dist = shortest_path_tree(graph, center)?;
    let mut members = Vec::new();
    let mut path_dist = Vec::new();
    for (id, &d) in dist.iter().enumerate() {
        if d <= gamma_lr_km {
            members.push(id);
            path_dist.push(d);
        }
    }
    Ok(LrSet {
        center,
        gamma_lr_km,
        members,
        path_dist,
    })
}

/// Candidate obfuscated locations: everything within direct distance
/// `radius_km` of `center`.
#[derive(Debug, Clone)]
pub struct ObfRange {
    pub center: LocationId,
    pub radius_km: f64,
    /// Sorted ascending by location id.
    pub members: Vec<LocationId>,
}

impl ObfRange {
    pub fn len(&self) -> usize {
        self.members.len()
    }

    pub fn is_empty(&self) -> bool {
        self.members.is_empty()
    }

    pub fn contains(&self, id: LocationId) -> bool {
        self.members.binary_search(&id).is_ok()
    }
}

pub fn obf_range(
    model: &LocationModel,
    center: LocationId,
    r_obf_km: f64,
) -> Result<ObfRange, GeoError> {
    if !(r_obf_km > 0.0) {
        return Err(GeoError::NonPositiveThreshold(r_obf_km));
    }
    model.check_id(center)?;
    let members = (0..model.len())
        .filter(|&k| model.distance_unchecked(center, k) <= r_obf_km)
        .collect();
    Ok(ObfRange {
        center,
        radius_km: r_obf_km,
        members,
    })
}
