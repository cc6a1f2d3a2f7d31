//! File formats: the graph artifact (`nodes.csv` + `arcs.csv`), agent
//! tables, and the fixed-significant-digit float formatting that keeps
//! outputs byte-identical across runs.

use std::collections::BTreeSet;
use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use netmarket::geo::GeoError;
use netmarket::graph::{Arc, Graph, Node, NodeId, Tags};

/// Exit-code taxonomy: 1 usage, 2 parse/io, 3 empty result, 4 imbalance,
/// 5 disconnected.
#[derive(Debug)]
pub enum CliError {
    Usage(String),
    Parse(String),
    Empty(String),
    Unbalanced(String),
    Disconnected(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => 1,
            CliError::Parse(_) => 2,
            CliError::Empty(_) => 3,
            CliError::Unbalanced(_) => 4,
            CliError::Disconnected(_) => 5,
        }
    }

    pub fn message(&self) -> &str {
        match self {
            CliError::Usage(m)
            | CliError::Parse(m)
            | CliError::Empty(m)
            | CliError::Unbalanced(m)
            | CliError::Disconnected(m) => m,
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Parse(format!("io error: {e}"))
    }
}

impl From<GeoError> for CliError {
    fn from(e: GeoError) -> Self {
        CliError::Parse(e.to_string())
    }
}

impl From<csv::Error> for CliError {
    fn from(e: csv::Error) -> Self {
        CliError::Parse(e.to_string())
    }
}

/// Formats with 12 significant digits; parseable and stable under
/// re-reading and re-emitting.
pub fn fmt_sig(x: f64) -> String {
    if x == 0.0 {
        return "0".to_string();
    }
    if x.is_nan() {
        return "nan".to_string();
    }
    if x.is_infinite() {
        return if x > 0.0 { "inf" } else { "-inf" }.to_string();
    }
    let sci = format!("{x:e}");
    let exp: i32 = sci[sci.find('e').unwrap() + 1..].parse().unwrap();
    if (-4..=11).contains(&exp) {
        format!("{:.*}", (11 - exp) as usize, x)
    } else {
        format!("{x:.11e}")
    }
}

pub fn open(path: &Path) -> Result<BufReader<File>, CliError> {
    File::open(path)
        .map(BufReader::new)
        .map_err(|e| CliError::Parse(format!("{}: {e}", path.display())))
}

fn tag_columns<'a, I: Iterator<Item = &'a Tags>>(tag_sets: I) -> Vec<String> {
    let keys: BTreeSet<&str> = tag_sets
        .flat_map(|t| t.keys().map(String::as_str))
        .collect();
    keys.into_iter().map(String::from).collect()
}

/// Writes the graph artifact: `nodes.csv` (`id,lon,lat,tags...`) and
/// `arcs.csv` (`tail,head,cost,tags...`), tags flattened into one column
/// per key (union of keys, sorted).
pub fn write_graph(dir: &Path, g: &Graph) -> Result<(), CliError> {
    std::fs::create_dir_all(dir)?;
    let node_tags = tag_columns(g.nodes().iter().map(|n| &n.tags));
    let mut w = csv::Writer::from_writer(BufWriter::new(File::create(dir.join("nodes.csv"))?));
    let mut header = vec!["id".to_string(), "lon".to_string(), "lat".to_string()];
    header.extend(node_tags.iter().cloned());
    w.write_record(&header)?;
    for n in g.nodes() {
        let mut rec = vec![n.id.0.to_string(), fmt_sig(n.lon), fmt_sig(n.lat)];
        for key in &node_tags {
            rec.push(n.tags.get(key).cloned().unwrap_or_default());
        }
        w.write_record(&rec)?;
    }
    w.flush()?;

    let arc_tags = tag_columns(g.arcs().iter().map(|a| &a.tags));
    let mut w = csv::Writer::from_writer(BufWriter::new(File::create(dir.join("arcs.csv"))?));
    let mut header = vec!["tail".to_string(), "head".to_string(), "cost".to_string()];
    header.extend(arc_tags.iter().cloned());
    w.write_record(&header)?;
    for a in g.arcs() {
        let mut rec = vec![a.tail.0.to_string(), a.head.0.to_string(), fmt_sig(a.cost)];
        for key in &arc_tags {
            rec.push(a.tags.get(key).cloned().unwrap_or_default());
        }
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}

/// Reads a graph artifact written by [`write_graph`].
pub fn read_graph(dir: &Path) -> Result<Graph, CliError> {
    let parse_f64 = |s: &str, what: &str, line: usize| -> Result<f64, CliError> {
        s.trim()
            .parse::<f64>()
            .map_err(|e| CliError::Parse(format!("{what} line {line}: {e}")))
    };

    let mut nodes = Vec::new();
    let mut reader = csv::Reader::from_reader(open(&dir.join("nodes.csv"))?);
    let headers = reader.headers()?.clone();
    for (i, record) in reader.records().enumerate() {
        let line = i + 2;
        let r = record?;
        let id: u32 = r
            .get(0)
            .unwrap_or("")
            .parse()
            .map_err(|e| CliError::Parse(format!("nodes.csv line {line}: {e}")))?;
        let mut node = Node::new(
            id,
            parse_f64(r.get(1).unwrap_or(""), "nodes.csv", line)?,
            parse_f64(r.get(2).unwrap_or(""), "nodes.csv", line)?,
        );
        for (k, v) in headers.iter().skip(3).zip(r.iter().skip(3)) {
            if !v.is_empty() {
                node.tags.insert(k.to_string(), v.to_string());
            }
        }
        nodes.push(node);
    }

    let mut arcs = Vec::new();
    let mut reader = csv::Reader::from_reader(open(&dir.join("arcs.csv"))?);
    let headers = reader.headers()?.clone();
    for (i, record) in reader.records().enumerate() {
        let line = i + 2;
        let r = record?;
        let pid = |s: Option<&str>| -> Result<u32, CliError> {
            s.unwrap_or("")
                .parse()
                .map_err(|e| CliError::Parse(format!("arcs.csv line {line}: {e}")))
        };
        let mut arc = Arc::new(
            pid(r.get(0))?,
            pid(r.get(1))?,
            parse_f64(r.get(2).unwrap_or(""), "arcs.csv", line)?,
        );
        for (k, v) in headers.iter().skip(3).zip(r.iter().skip(3)) {
            if !v.is_empty() {
                arc.tags.insert(k.to_string(), v.to_string());
            }
        }
        arcs.push(arc);
    }

    Graph::build(nodes, arcs).map_err(|e| CliError::Parse(format!("graph artifact: {e}")))
}

/// A seller row from the sellers CSV
/// (`label,lon,lat,price|supply[,region]`).
#[derive(Debug, Clone)]
pub struct SellerRow {
    pub label: String,
    pub lon: f64,
    pub lat: f64,
    pub value: f64,
    pub region: Option<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SellerValue {
    Price,
    Supply,
}

pub fn read_sellers<R: Read>(input: R, value: SellerValue) -> Result<Vec<SellerRow>, CliError> {
    let mut reader = csv::Reader::from_reader(input);
    let headers = reader.headers()?.clone();
    let col = |name: &str| headers.iter().position(|h| h == name);
    let value_name = match value {
        SellerValue::Price => "price",
        SellerValue::Supply => "supply",
    };
    let (label_i, lon_i, lat_i, value_i) =
        match (col("label"), col("lon"), col("lat"), col(value_name)) {
            (Some(a), Some(b), Some(c), Some(d)) => (a, b, c, d),
            _ => {
                return Err(CliError::Parse(format!(
                    "sellers csv needs columns label,lon,lat,{value_name}"
                )))
            }
        };
    let region_i = col("region");
    let mut rows = Vec::new();
    for (i, record) in reader.records().enumerate() {
        let line = i + 2;
        let r = record?;
        let num = |idx: usize, what: &str| -> Result<f64, CliError> {
            r.get(idx)
                .unwrap_or("")
                .trim()
                .parse()
                .map_err(|e| CliError::Parse(format!("sellers csv line {line}, {what}: {e}")))
        };
        let v = num(value_i, value_name)?;
        if value == SellerValue::Supply && v < 0.0 {
            return Err(CliError::Parse(format!(
                "sellers csv line {line}: supply must be nonnegative"
            )));
        }
        rows.push(SellerRow {
            label: r.get(label_i).unwrap_or("").to_string(),
            lon: num(lon_i, "lon")?,
            lat: num(lat_i, "lat")?,
            value: v,
            region: region_i
                .and_then(|idx| r.get(idx))
                .map(str::trim)
                .filter(|s| !s.is_empty())
                .map(String::from),
        });
    }
    Ok(rows)
}

/// Snaps agent coordinates to graph nodes; returns one `NodeId` per input
/// point.
pub fn snap_points(
    g: &Graph,
    points: &[(f64, f64)],
) -> Result<Vec<NodeId>, CliError> {
    let index = netmarket::geo::SnapIndex::build(g)
        .map_err(|_| CliError::Empty("graph has no nodes".to_string()))?;
    Ok(points
        .iter()
        .map(|&(lon, lat)| index.nearest(netmarket::geo::GeoPoint::new(lon, lat)).0)
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fmt_sig_is_stable_under_reparse() {
        for &x in &[
            0.0,
            1.0,
            -17.25,
            0.01,
            123456789.0,
            1.0 / 3.0,
            6371.0088,
            1e-7,
            3.5e17,
        ] {
            let s1 = fmt_sig(x);
            let y: f64 = s1.parse().unwrap();
            let s2 = fmt_sig(y);
            assert_eq!(s1, s2, "unstable formatting for {x}");
        }
    }

    #[test]
    fn fmt_sig_examples() {
        assert_eq!(fmt_sig(0.0), "0");
        assert_eq!(fmt_sig(1.0), "1.00000000000");
        assert_eq!(fmt_sig(0.01), "0.0100000000000");
        assert_eq!(fmt_sig(f64::INFINITY), "inf");
    }

    #[test]
    fn graph_artifact_roundtrip() {
        let mut n0 = Node::new(0, 1.5, 2.5);
        n0.tags.insert("kind".into(), "junction".into());
        let n1 = Node::new(1, -3.0, 0.25);
        let mut a = Arc::new(0, 1, 42.5);
        a.tags.insert("road".into(), "d1".into());
        let g = Graph::build(vec![n0, n1], vec![a]).unwrap();
        let dir = std::env::temp_dir().join(format!("netmarket-io-{}", std::process::id()));
        write_graph(&dir, &g).unwrap();
        let g2 = read_graph(&dir).unwrap();
        assert_eq!(g2.node_count(), 2);
        assert_eq!(g2.arc_count(), 1);
        assert_eq!(g2.node(NodeId(0)).tags["kind"], "junction");
        assert_eq!(g2.arc(0).cost, 42.5);
        assert_eq!(g2.arc(0).tags["road"], "d1");
        std::fs::remove_dir_all(&dir).ok();
    }
}
