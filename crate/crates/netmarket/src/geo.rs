//! Ingestion of geographic line features into a [`Graph`], plus snapping of
//! agent coordinates onto network nodes.
//!
//! Two input formats are supported: GeoJSON FeatureCollections (only
//! LineString / MultiLineString geometries are consumed) and a flat
//! `csv-edges` table that bypasses geometry entirely.

use std::collections::BTreeMap;
use std::io::Read;

use thiserror::Error;

use crate::graph::{make_bidirectional, Arc, Graph, Node, NodeId, Tags};

/// Mean Earth radius in kilometers.
pub const EARTH_RADIUS_KM: f64 = 6371.0088;

const KM_PER_DEG_LAT: f64 = EARTH_RADIUS_KM * std::f64::consts::PI / 180.0;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GeoPoint {
    pub lon: f64,
    pub lat: f64,
}

impl GeoPoint {
    pub fn new(lon: f64, lat: f64) -> Self {
        GeoPoint { lon, lat }
    }

    fn valid(&self) -> bool {
        self.lon.is_finite()
            && self.lat.is_finite()
            && (-180.0..=180.0).contains(&self.lon)
            && (-90.0..=90.0).contains(&self.lat)
    }
}

/// An ordered line feature; consecutive points become graph arcs.
///
/// `cost` is set only by the csv-edges format, where the caller supplies the
/// arc cost directly; otherwise costs come from haversine length.
#[derive(Debug, Clone, PartialEq)]
pub struct Polyline {
    pub points: Vec<GeoPoint>,
    pub tags: Tags,
    pub cost: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LineFormat {
    GeoJson,
    CsvEdges,
}

#[derive(Debug, Error)]
pub enum GeoError {
    #[error("parse error at {location}: {reason}")]
    Parse { location: String, reason: String },
    #[error("graph has no nodes to snap onto")]
    EmptyGraph,
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

fn parse_err(location: impl Into<String>, reason: impl Into<String>) -> GeoError {
    GeoError::Parse {
        location: location.into(),
        reason: reason.into(),
    }
}

/// Output of [`parse_lines`]: the polylines plus the number of non-line
/// features that were skipped.
#[derive(Debug, Default)]
pub struct ParsedLines {
    pub lines: Vec<Polyline>,
    pub skipped: usize,
}

/// Great-circle distance in kilometers (haversine on a spherical Earth).
pub fn haversine_km(a: GeoPoint, b: GeoPoint) -> f64 {
    let phi1 = a.lat.to_radians();
    let phi2 = b.lat.to_radians();
    let dphi = (b.lat - a.lat).to_radians();
    let dlambda = (b.lon - a.lon).to_radians();
    let s = (dphi / 2.0).sin().powi(2) + phi1.cos() * phi2.cos() * (dlambda / 2.0).sin().powi(2);
    2.0 * EARTH_RADIUS_KM * s.sqrt().asin()
}

/// Parses line features from `input` in the declared format.
///
/// Non-line GeoJSON geometries are counted in `skipped` rather than failing:
/// real geodata is mixed.
pub fn parse_lines<R: Read>(mut input: R, format: LineFormat) -> Result<ParsedLines, GeoError> {
    match format {
        LineFormat::GeoJson => {
            let mut text = String::new();
            input.read_to_string(&mut text)?;
            parse_geojson(&text)
        }
        LineFormat::CsvEdges => parse_csv_edges(input),
    }
}

fn json_tags(props: Option<&serde_json::Value>) -> Tags {
    let mut tags = Tags::new();
    if let Some(serde_json::Value::Object(map)) = props {
        for (k, v) in map {
            let s = match v {
                serde_json::Value::String(s) => s.clone(),
                serde_json::Value::Null => continue,
                other => other.to_string(),
            };
            tags.insert(k.clone(), s);
        }
    }
    tags
}

fn coords_to_points(coords: &serde_json::Value, at: &str) -> Result<Vec<GeoPoint>, GeoError> {
    let arr = coords
        .as_array()
        .ok_or_else(|| parse_err(at, "coordinates must be an array"))?;
    let mut points = Vec::with_capacity(arr.len());
    for pos in arr {
        let pair = pos
            .as_array()
            .ok_or_else(|| parse_err(at, "position must be an array"))?;
        if pair.len() < 2 {
            return Err(parse_err(at, "position needs lon and lat"));
        }
        let lon = pair[0].as_f64().ok_or_else(|| parse_err(at, "lon not a number"))?;
        let lat = pair[1].as_f64().ok_or_else(|| parse_err(at, "lat not a number"))?;
        let p = GeoPoint::new(lon, lat);
        if !p.valid() {
            return Err(parse_err(at, format!("coordinate out of range: {lon},{lat}")));
        }
        // consecutive duplicate points are collapsed
        if points.last() != Some(&p) {
            points.push(p);
        }
    }
    Ok(points)
}

fn parse_geojson(text: &str) -> Result<ParsedLines, GeoError> {
    let value: serde_json::Value = serde_json::from_str(text).map_err(|e| {
        parse_err(format!("line {} col {}", e.line(), e.column()), e.to_string())
    })?;
    let kind = value["type"].as_str().unwrap_or_default();
    if kind != "FeatureCollection" {
        return Err(parse_err("$", format!("expected FeatureCollection, got '{kind}'")));
    }
    let features = value["features"]
        .as_array()
        .ok_or_else(|| parse_err("$.features", "missing features array"))?;
    let mut out = ParsedLines::default();
    for (i, feature) in features.iter().enumerate() {
        let at = format!("$.features[{i}]");
        let geom = &feature["geometry"];
        if geom.is_null() {
            out.skipped += 1;
            continue;
        }
        let tags = json_tags(feature.get("properties"));
        match geom["type"].as_str().unwrap_or_default() {
            "LineString" => {
                let points = coords_to_points(&geom["coordinates"], &at)?;
                if points.len() >= 2 {
                    out.lines.push(Polyline { points, tags, cost: None });
                }
            }
            "MultiLineString" => {
                let parts = geom["coordinates"]
                    .as_array()
                    .ok_or_else(|| parse_err(&at, "coordinates must be an array"))?;
                for part in parts {
                    let points = coords_to_points(part, &at)?;
                    if points.len() >= 2 {
                        out.lines.push(Polyline {
                            points,
                            tags: tags.clone(),
                            cost: None,
                        });
                    }
                }
            }
            _ => out.skipped += 1,
        }
    }
    Ok(out)
}

fn parse_csv_edges<R: Read>(input: R) -> Result<ParsedLines, GeoError> {
    let mut reader = csv::ReaderBuilder::new().has_headers(true).from_reader(input);
    let headers = reader
        .headers()
        .map_err(|e| parse_err("header", e.to_string()))?
        .clone();
    let fixed = ["tail_lon", "tail_lat", "head_lon", "head_lat", "cost"];
    for (i, want) in fixed.iter().enumerate() {
        if headers.get(i) != Some(*want) {
            return Err(parse_err(
                "header",
                format!("expected column {} to be '{}'", i + 1, want),
            ));
        }
    }
    let tag_keys: Vec<String> = headers.iter().skip(fixed.len()).map(String::from).collect();
    let mut out = ParsedLines::default();
    for (idx, record) in reader.records().enumerate() {
        let line_no = idx + 2; // header is line 1
        let at = format!("line {line_no}");
        let record = record.map_err(|e| parse_err(&at, e.to_string()))?;
        let num = |i: usize| -> Result<f64, GeoError> {
            record
                .get(i)
                .ok_or_else(|| parse_err(&at, "missing column"))?
                .trim()
                .parse::<f64>()
                .map_err(|e| parse_err(&at, format!("bad number: {e}")))
        };
        let tail = GeoPoint::new(num(0)?, num(1)?);
        let head = GeoPoint::new(num(2)?, num(3)?);
        if !tail.valid() || !head.valid() {
            return Err(parse_err(&at, "coordinate out of range"));
        }
        let cost = num(4)?;
        if !(cost >= 0.0) {
            return Err(parse_err(&at, "cost must be nonnegative"));
        }
        let mut tags = Tags::new();
        for (k, v) in tag_keys.iter().zip(record.iter().skip(fixed.len())) {
            if !v.is_empty() {
                tags.insert(k.clone(), v.to_string());
            }
        }
        out.lines.push(Polyline {
            points: vec![tail, head],
            tags,
            cost: Some(cost),
        });
    }
    Ok(out)
}

struct UnionFind {
    parent: Vec<u32>,
}

impl UnionFind {
    fn new(n: usize) -> Self {
        UnionFind {
            parent: (0..n as u32).collect(),
        }
    }

    fn find(&mut self, x: u32) -> u32 {
        let mut root = x;
        while self.parent[root as usize] != root {
            root = self.parent[root as usize];
        }
        let mut cur = x;
        while self.parent[cur as usize] != root {
            let next = self.parent[cur as usize];
            self.parent[cur as usize] = root;
            cur = next;
        }
        root
    }

    fn union(&mut self, a: u32, b: u32) {
        let (ra, rb) = (self.find(a), self.find(b));
        if ra != rb {
            // smaller root wins, so representatives are first-seen points
            let (lo, hi) = if ra < rb { (ra, rb) } else { (rb, ra) };
            self.parent[hi as usize] = lo;
        }
    }
}

/// Builds a road graph from polylines.
///
/// Endpoints within `snap_tol_m` meters of each other are merged into one
/// node (union-find over spatial cells, so merging is transitive). Each
/// consecutive point pair becomes an arc costing haversine length times
/// `per_km_cost`, unless the polyline carries an explicit cost. The result
/// is symmetrized with [`make_bidirectional`].
pub fn lines_to_graph(lines: &[Polyline], snap_tol_m: f64, per_km_cost: f64) -> Graph {
    assert!(snap_tol_m >= 0.0, "snap tolerance must be nonnegative");
    assert!(per_km_cost > 0.0, "per-km cost must be positive");

    let mut points: Vec<GeoPoint> = Vec::new();
    for line in lines {
        points.extend(line.points.iter().copied());
    }
    if points.is_empty() {
        return Graph::default();
    }

    // Cluster points within tolerance. Cell size slightly above the
    // tolerance in degrees, so any pair within tolerance shares a 3x3
    // neighborhood.
    let tol_km = snap_tol_m / 1000.0;
    let cell_deg = (tol_km / KM_PER_DEG_LAT).max(1e-9) * 1.001;
    let mut uf = UnionFind::new(points.len());
    let mut cells: BTreeMap<(i64, i64), Vec<u32>> = BTreeMap::new();
    for (i, p) in points.iter().enumerate() {
        let cx = (p.lon / cell_deg).floor() as i64;
        let cy = (p.lat / cell_deg).floor() as i64;
        for dx in -1..=1 {
            for dy in -1..=1 {
                if let Some(others) = cells.get(&(cx + dx, cy + dy)) {
                    for &j in others {
                        let q = points[j as usize];
                        let within = if snap_tol_m == 0.0 {
                            q == *p
                        } else {
                            haversine_km(*p, q) * 1000.0 <= snap_tol_m
                        };
                        if within {
                            uf.union(i as u32, j as u32);
                        }
                    }
                }
            }
        }
        cells.entry((cx, cy)).or_default().push(i as u32);
    }

    // Representative point of each class is the first-seen one.
    let mut node_of_root: BTreeMap<u32, NodeId> = BTreeMap::new();
    let mut nodes: Vec<Node> = Vec::new();
    let mut node_of_point: Vec<NodeId> = Vec::with_capacity(points.len());
    for i in 0..points.len() as u32 {
        let root = uf.find(i);
        let id = *node_of_root.entry(root).or_insert_with(|| {
            let id = NodeId(nodes.len() as u32);
            let p = points[root as usize];
            nodes.push(Node::new(id.0, p.lon, p.lat));
            id
        });
        node_of_point.push(id);
    }

    let mut arcs: Vec<Arc> = Vec::new();
    let mut cursor = 0usize;
    for line in lines {
        for w in line.points.windows(2) {
            let tail = node_of_point[cursor];
            let head = node_of_point[cursor + 1];
            cursor += 1;
            let cost = match line.cost {
                Some(c) => c,
                None => haversine_km(w[0], w[1]) * per_km_cost,
            };
            arcs.push(Arc {
                tail,
                head,
                cost,
                tags: line.tags.clone(),
            });
        }
        cursor += 1; // skip to the next polyline's first point
    }

    let g = Graph::build(nodes, arcs).expect("snapped road graph is valid");
    make_bidirectional(&g)
}

/// Uniform spatial-cell index over graph nodes answering exact
/// nearest-node queries under great-circle distance.
///
/// Longitude is treated as linear: datasets spanning the antimeridian are
/// not supported (same territory as reprojection, which is out of scope).
#[derive(Debug)]
pub struct SnapIndex {
    cell_deg: f64,
    cells: BTreeMap<(i64, i64), Vec<u32>>,
    positions: Vec<GeoPoint>,
    cell_bounds: (i64, i64, i64, i64),
    lat_abs_max: f64,
}

impl SnapIndex {
    /// Indexes all nodes of `g`. Cell size is derived from the bounding box
    /// so cells hold a handful of nodes each.
    pub fn build(g: &Graph) -> Result<SnapIndex, GeoError> {
        if g.node_count() == 0 {
            return Err(GeoError::EmptyGraph);
        }
        let positions: Vec<GeoPoint> = g
            .nodes()
            .iter()
            .map(|n| GeoPoint::new(n.lon, n.lat))
            .collect();
        let (mut lon_min, mut lon_max) = (f64::INFINITY, f64::NEG_INFINITY);
        let (mut lat_min, mut lat_max) = (f64::INFINITY, f64::NEG_INFINITY);
        let mut lat_abs_max: f64 = 0.0;
        for p in &positions {
            lon_min = lon_min.min(p.lon);
            lon_max = lon_max.max(p.lon);
            lat_min = lat_min.min(p.lat);
            lat_max = lat_max.max(p.lat);
            lat_abs_max = lat_abs_max.max(p.lat.abs());
        }
        let span = (lon_max - lon_min).max(lat_max - lat_min).max(1e-6);
        let cell_deg = span / (positions.len() as f64).sqrt().ceil().max(1.0);
        let mut cells: BTreeMap<(i64, i64), Vec<u32>> = BTreeMap::new();
        let mut cell_bounds = (i64::MAX, i64::MAX, i64::MIN, i64::MIN);
        for (i, p) in positions.iter().enumerate() {
            let key = Self::cell_of(p, cell_deg);
            cell_bounds.0 = cell_bounds.0.min(key.0);
            cell_bounds.1 = cell_bounds.1.min(key.1);
            cell_bounds.2 = cell_bounds.2.max(key.0);
            cell_bounds.3 = cell_bounds.3.max(key.1);
            cells.entry(key).or_default().push(i as u32);
        }
        Ok(SnapIndex {
            cell_deg,
            cells,
            positions,
            cell_bounds,
            lat_abs_max,
        })
    }

    fn cell_of(p: &GeoPoint, cell_deg: f64) -> (i64, i64) {
        ((p.lon / cell_deg).floor() as i64, (p.lat / cell_deg).floor() as i64)
    }

    /// Nearest node to `p` by great-circle distance, ties to the smaller
    /// `NodeId`. Returns the node and the distance in meters.
    pub fn nearest(&self, p: GeoPoint) -> (NodeId, f64) {
        let (cx, cy) = Self::cell_of(&p, self.cell_deg);
        // A point whose cell is r rings away differs by >= (r-1) cells in lon
        // or lat. One lat degree is KM_PER_DEG_LAT; for lon degrees the
        // haversine identity gives theta >= (2/pi) cos(lat_max) dlambda, so
        // the factor below lower-bounds both axes.
        let worst_lat = self.lat_abs_max.max(p.lat.abs()).to_radians();
        let km_per_deg = KM_PER_DEG_LAT * worst_lat.cos() * std::f64::consts::FRAC_2_PI;
        let mut best: Option<(f64, u32)> = None;
        let mut ring: i64 = 0;
        loop {
            for (dx, dy) in ring_cells(ring) {
                if let Some(ids) = self.cells.get(&(cx + dx, cy + dy)) {
                    for &i in ids {
                        let d = haversine_km(p, self.positions[i as usize]);
                        let better = match best {
                            None => true,
                            Some((bd, bi)) => d < bd || (d == bd && i < bi),
                        };
                        if better {
                            best = Some((d, i));
                        }
                    }
                }
            }
            let exhausted = cx - ring <= self.cell_bounds.0
                && cy - ring <= self.cell_bounds.1
                && cx + ring >= self.cell_bounds.2
                && cy + ring >= self.cell_bounds.3;
            if let Some((bd, _)) = best {
                let next_ring_min_km = ring as f64 * self.cell_deg * km_per_deg;
                if exhausted || next_ring_min_km > bd {
                    break;
                }
            } else if exhausted {
                unreachable!("index holds at least one node");
            }
            ring += 1;
        }
        let (d, i) = best.expect("index is non-empty");
        (NodeId(i), d * 1000.0)
    }
}

fn ring_cells(ring: i64) -> Vec<(i64, i64)> {
    if ring == 0 {
        return vec![(0, 0)];
    }
    let mut cells = Vec::with_capacity((8 * ring) as usize);
    for d in -ring..=ring {
        cells.push((d, -ring));
        cells.push((d, ring));
    }
    for d in (-ring + 1)..ring {
        cells.push((-ring, d));
        cells.push((ring, d));
    }
    cells
}

/// Snaps each point to its nearest network node.
pub fn snap_agents(index: &SnapIndex, points: &[GeoPoint]) -> Vec<(NodeId, f64)> {
    points.iter().map(|&p| index.nearest(p)).collect()
}

/// One row of an agents CSV (`lon,lat,mass[,reservation_utility][,region]`).
#[derive(Debug, Clone, PartialEq)]
pub struct AgentRow {
    pub lon: f64,
    pub lat: f64,
    pub mass: f64,
    pub reservation_utility: Option<f64>,
    pub region: Option<String>,
}

/// Parses the agents CSV schema. `mass` must be positive;
/// `reservation_utility`, when present and non-empty, must be nonnegative.
pub fn parse_agents<R: Read>(input: R) -> Result<Vec<AgentRow>, GeoError> {
    let mut reader = csv::ReaderBuilder::new().has_headers(true).from_reader(input);
    let headers = reader
        .headers()
        .map_err(|e| parse_err("header", e.to_string()))?
        .clone();
    let col = |name: &str| headers.iter().position(|h| h == name);
    let (lon_i, lat_i, mass_i) = match (col("lon"), col("lat"), col("mass")) {
        (Some(a), Some(b), Some(c)) => (a, b, c),
        _ => return Err(parse_err("header", "need columns lon,lat,mass")),
    };
    let res_i = col("reservation_utility");
    let region_i = col("region");
    let mut rows = Vec::new();
    for (idx, record) in reader.records().enumerate() {
        let line_no = idx + 2;
        let at = format!("line {line_no}");
        let record = record.map_err(|e| parse_err(&at, e.to_string()))?;
        let num = |i: usize| -> Result<f64, GeoError> {
            record
                .get(i)
                .ok_or_else(|| parse_err(&at, "missing column"))?
                .trim()
                .parse::<f64>()
                .map_err(|e| parse_err(&at, format!("bad number: {e}")))
        };
        let lon = num(lon_i)?;
        let lat = num(lat_i)?;
        if !GeoPoint::new(lon, lat).valid() {
            return Err(parse_err(&at, "coordinate out of range"));
        }
        let mass = num(mass_i)?;
        if !(mass > 0.0) {
            return Err(parse_err(&at, "mass must be positive"));
        }
        let reservation_utility = match res_i {
            Some(i) if !record.get(i).unwrap_or("").trim().is_empty() => {
                let u = num(i)?;
                if !(u >= 0.0) {
                    return Err(parse_err(&at, "reservation_utility must be nonnegative"));
                }
                Some(u)
            }
            _ => None,
        };
        let region = region_i
            .and_then(|i| record.get(i))
            .map(str::trim)
            .filter(|s| !s.is_empty())
            .map(String::from);
        rows.push(AgentRow {
            lon,
            lat,
            mass,
            reservation_utility,
            region,
        });
    }
    Ok(rows)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn haversine_matches_law_of_cosines() {
        // independent spherical law-of-cosines evaluation
        let a = GeoPoint::new(2.3522, 48.8566);
        let b = GeoPoint::new(4.8357, 45.7640);
        let (p1, p2) = (a.lat.to_radians(), b.lat.to_radians());
        let dl = (b.lon - a.lon).to_radians();
        let expected =
            EARTH_RADIUS_KM * (p1.sin() * p2.sin() + p1.cos() * p2.cos() * dl.cos()).acos();
        assert_relative_eq!(haversine_km(a, b), expected, max_relative = 1e-9);
    }

    #[test]
    fn haversine_pure_latitude_offset() {
        // a 1 km meridian step: central angle 1/R
        let dlat_deg = (1.0 / EARTH_RADIUS_KM).to_degrees();
        let d = haversine_km(GeoPoint::new(0.0, 0.0), GeoPoint::new(0.0, dlat_deg));
        assert_relative_eq!(d, 1.0, max_relative = 1e-12);
    }

    #[test]
    fn geojson_single_linestring() {
        let text = r#"{"type":"FeatureCollection","features":[
          {"type":"Feature","properties":{"road":"D1"},
           "geometry":{"type":"LineString","coordinates":[[0,0],[0.1,0],[0.2,0.1]]}}]}"#;
        let parsed = parse_lines(text.as_bytes(), LineFormat::GeoJson).unwrap();
        assert_eq!(parsed.lines.len(), 1);
        assert_eq!(parsed.lines[0].points.len(), 3);
        assert_eq!(parsed.lines[0].tags["road"], "D1");
        assert_eq!(parsed.skipped, 0);
    }

    #[test]
    fn geojson_empty_collection() {
        let parsed = parse_lines(
            br#"{"type":"FeatureCollection","features":[]}"#.as_slice(),
            LineFormat::GeoJson,
        )
        .unwrap();
        assert!(parsed.lines.is_empty());
        assert_eq!(parsed.skipped, 0);
    }

    #[test]
    fn geojson_mixed_geometries_skips_points() {
        let text = r#"{"type":"FeatureCollection","features":[
          {"type":"Feature","properties":{},"geometry":{"type":"LineString","coordinates":[[0,0],[1,0]]}},
          {"type":"Feature","properties":{},"geometry":{"type":"Point","coordinates":[5,5]}},
          {"type":"Feature","properties":{},"geometry":{"type":"LineString","coordinates":[[1,0],[1,1]]}}]}"#;
        let parsed = parse_lines(text.as_bytes(), LineFormat::GeoJson).unwrap();
        assert_eq!(parsed.lines.len(), 2);
        assert_eq!(parsed.skipped, 1);
    }

    #[test]
    fn geojson_multilinestring_splits() {
        let text = r#"{"type":"FeatureCollection","features":[
          {"type":"Feature","properties":{"n":"x"},
           "geometry":{"type":"MultiLineString","coordinates":[[[0,0],[1,0]],[[2,0],[3,0]]]}}]}"#;
        let parsed = parse_lines(text.as_bytes(), LineFormat::GeoJson).unwrap();
        assert_eq!(parsed.lines.len(), 2);
        assert_eq!(parsed.lines[1].tags["n"], "x");
    }

    #[test]
    fn geojson_bad_json_reports_location() {
        let err = parse_lines(b"{\"type\": ".as_slice(), LineFormat::GeoJson).unwrap_err();
        match err {
            GeoError::Parse { location, .. } => assert!(location.contains("line")),
            other => panic!("unexpected error {other:?}"),
        }
    }

    #[test]
    fn csv_edges_roundtrip() {
        let text = "tail_lon,tail_lat,head_lon,head_lat,cost,road\n0,0,1,0,2.5,D1\n1,0,1,1,0.5,\n";
        let parsed = parse_lines(text.as_bytes(), LineFormat::CsvEdges).unwrap();
        assert_eq!(parsed.lines.len(), 2);
        assert_eq!(parsed.lines[0].cost, Some(2.5));
        assert_eq!(parsed.lines[0].tags["road"], "D1");
        assert!(parsed.lines[1].tags.is_empty());
    }

    #[test]
    fn csv_edges_bad_row_reports_line() {
        let text = "tail_lon,tail_lat,head_lon,head_lat,cost\n0,0,1,0,oops\n";
        let err = parse_lines(text.as_bytes(), LineFormat::CsvEdges).unwrap_err();
        match err {
            GeoError::Parse { location, .. } => assert_eq!(location, "line 2"),
            other => panic!("unexpected error {other:?}"),
        }
    }

    #[test]
    fn lines_to_graph_shared_endpoint() {
        let lines = vec![
            Polyline {
                points: vec![GeoPoint::new(0.0, 0.0), GeoPoint::new(0.01, 0.0)],
                tags: Tags::new(),
                cost: None,
            },
            Polyline {
                points: vec![GeoPoint::new(0.01, 0.0), GeoPoint::new(0.02, 0.0)],
                tags: Tags::new(),
                cost: None,
            },
        ];
        let g = lines_to_graph(&lines, 1.0, 1.0);
        assert_eq!(g.node_count(), 3);
        assert_eq!(g.arc_count(), 4); // two segments, both directions
    }

    #[test]
    fn lines_to_graph_merges_within_tolerance() {
        // ~0.5 m apart: within a 1 m tolerance
        let eps = 0.5e-3 / KM_PER_DEG_LAT;
        let lines = vec![
            Polyline {
                points: vec![GeoPoint::new(0.0, 0.0), GeoPoint::new(0.01, 0.0)],
                tags: Tags::new(),
                cost: None,
            },
            Polyline {
                points: vec![GeoPoint::new(0.01, eps), GeoPoint::new(0.02, 0.0)],
                tags: Tags::new(),
                cost: None,
            },
        ];
        let g = lines_to_graph(&lines, 1.0, 1.0);
        assert_eq!(g.node_count(), 3);
    }

    #[test]
    fn lines_to_graph_merge_is_transitive() {
        // a~b and b~c within tolerance, a-c slightly beyond: one node anyway
        let step = 0.9e-3 / KM_PER_DEG_LAT;
        let mk = |lat: f64| Polyline {
            points: vec![GeoPoint::new(0.0, lat), GeoPoint::new(0.05, 0.0)],
            tags: Tags::new(),
            cost: None,
        };
        let lines = vec![mk(0.0), mk(step), mk(2.0 * step)];
        let g = lines_to_graph(&lines, 1.0, 1.0);
        // 3 starts merged into 1, plus the shared far endpoint
        assert_eq!(g.node_count(), 2);
    }

    #[test]
    fn lines_to_graph_cost_is_length_times_rate() {
        let dlat_deg = (1.0 / EARTH_RADIUS_KM).to_degrees(); // 1 km
        let lines = vec![Polyline {
            points: vec![GeoPoint::new(0.0, 0.0), GeoPoint::new(0.0, dlat_deg)],
            tags: Tags::new(),
            cost: None,
        }];
        let g = lines_to_graph(&lines, 1.0, 0.2);
        assert_relative_eq!(g.arc(0).cost, 0.2, max_relative = 1e-9);
    }

    #[test]
    fn snap_exact_hit() {
        let lines = vec![Polyline {
            points: vec![GeoPoint::new(0.0, 0.0), GeoPoint::new(1.0, 1.0)],
            tags: Tags::new(),
            cost: None,
        }];
        let g = lines_to_graph(&lines, 1.0, 1.0);
        let index = SnapIndex::build(&g).unwrap();
        let hits = snap_agents(&index, &[GeoPoint::new(1.0, 1.0)]);
        assert_eq!(hits[0].0, NodeId(1));
        assert_eq!(hits[0].1, 0.0);
    }

    #[test]
    fn snap_tie_prefers_smaller_id() {
        let lines = vec![Polyline {
            points: vec![GeoPoint::new(-1.0, 0.0), GeoPoint::new(1.0, 0.0)],
            tags: Tags::new(),
            cost: None,
        }];
        let g = lines_to_graph(&lines, 1.0, 1.0);
        let index = SnapIndex::build(&g).unwrap();
        let (id, _) = index.nearest(GeoPoint::new(0.0, 0.0));
        assert_eq!(id, NodeId(0));
    }

    #[test]
    fn snap_empty_graph_is_error() {
        assert!(matches!(
            SnapIndex::build(&Graph::default()),
            Err(GeoError::EmptyGraph)
        ));
    }

    #[test]
    fn agents_csv_full_schema() {
        let text = "lon,lat,mass,reservation_utility,region\n1.5,2.5,3,4.5,west\n0,0,1,,\n";
        let rows = parse_agents(text.as_bytes()).unwrap();
        assert_eq!(rows.len(), 2);
        assert_eq!(rows[0].reservation_utility, Some(4.5));
        assert_eq!(rows[0].region.as_deref(), Some("west"));
        assert_eq!(rows[1].reservation_utility, None);
        assert_eq!(rows[1].region, None);
    }

    #[test]
    fn agents_csv_rejects_nonpositive_mass() {
        let err = parse_agents("lon,lat,mass\n0,0,0\n".as_bytes()).unwrap_err();
        match err {
            GeoError::Parse { location, .. } => assert_eq!(location, "line 2"),
            other => panic!("unexpected error {other:?}"),
        }
    }
}
