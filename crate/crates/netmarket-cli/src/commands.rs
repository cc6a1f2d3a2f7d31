//! Subcommand implementations.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use rand::prelude::*;
use rand_chacha::ChaCha8Rng;

use netmarket::apps::{aggregate_demand, balance_regions, rank_quality, Choice};
use netmarket::equilibrium::{
    build_market, inverse_prices, Buyer, EquilibriumError, MarketMode, Seller,
};
use netmarket::geo::{haversine_km, parse_agents, parse_lines, GeoPoint, LineFormat};
use netmarket::graph::{largest_component, simplify_chains, Arc, Graph, Node, NodeId};
use netmarket::mcf::{verify_slackness, FlowProblem, McfError};
use netmarket::transport::{
    build_transport, degeneracy_probe, extract_power_diagram, solve_transport, TransportError,
};

use crate::io::{
    fmt_sig, open, read_graph, read_sellers, snap_points, write_graph, CliError, SellerRow,
    SellerValue,
};

fn flow_error(e: McfError) -> CliError {
    match e {
        McfError::Unbalanced(s) => CliError::Unbalanced(format!("excess sums to {s}")),
        McfError::Disconnected(v) => {
            CliError::Disconnected(format!("node {v} cannot reach any remaining demand"))
        }
        other => CliError::Usage(other.to_string()),
    }
}

fn equilibrium_error(e: EquilibriumError) -> CliError {
    match e {
        EquilibriumError::Flow(f) => flow_error(f),
        other => CliError::Usage(other.to_string()),
    }
}

pub struct BuildGraphCmd {
    pub input: PathBuf,
    pub format: LineFormat,
    pub out_dir: PathBuf,
    pub per_km_cost: f64,
    pub snap_tol: f64,
    pub keep_largest: bool,
    pub simplify: bool,
}

pub fn cmd_build_graph(cmd: &BuildGraphCmd) -> Result<(), CliError> {
    if cmd.per_km_cost <= 0.0 {
        return Err(CliError::Usage("--per-km-cost must be positive".into()));
    }
    if cmd.snap_tol < 0.0 {
        return Err(CliError::Usage("--snap-tol must be nonnegative".into()));
    }
    let parsed = parse_lines(open(&cmd.input)?, cmd.format)?;
    if parsed.skipped > 0 {
        eprintln!("skipped {} non-line features", parsed.skipped);
    }
    let mut graph = netmarket::geo::lines_to_graph(&parsed.lines, cmd.snap_tol, cmd.per_km_cost);
    if cmd.keep_largest {
        graph = largest_component(&graph).graph;
    }
    if cmd.simplify {
        graph = simplify_chains(&graph, &[]).graph;
    }
    if graph.node_count() == 0 {
        return Err(CliError::Empty("input produced an empty graph".into()));
    }
    write_graph(&cmd.out_dir, &graph)?;
    let (_, components) = graph.weak_components();
    println!(
        "nodes={} arcs={} components={} skipped={}",
        graph.node_count(),
        graph.arc_count(),
        components,
        parsed.skipped
    );
    Ok(())
}

pub struct SolveCmd {
    pub graph_dir: PathBuf,
    pub mode: MarketMode,
    pub buyers: PathBuf,
    pub sellers: PathBuf,
    pub out: PathBuf,
    pub flows_out: Option<PathBuf>,
    pub tol: f64,
}

fn load_buyers(path: &Path, g: &Graph) -> Result<Vec<Buyer>, CliError> {
    let rows = parse_agents(open(path)?)?;
    if rows.is_empty() {
        return Err(CliError::Empty(format!("{}: no buyers", path.display())));
    }
    let points: Vec<(f64, f64)> = rows.iter().map(|r| (r.lon, r.lat)).collect();
    let nodes = snap_points(g, &points)?;
    Ok(rows
        .into_iter()
        .zip(nodes)
        .map(|(r, node)| Buyer {
            node,
            mass: r.mass,
            reservation_utility: r.reservation_utility.unwrap_or(f64::INFINITY),
            region: r.region,
        })
        .collect())
}

fn load_sellers(
    path: &Path,
    g: &Graph,
    value: SellerValue,
) -> Result<(Vec<Seller>, Vec<SellerRow>), CliError> {
    let rows = read_sellers(open(path)?, value)?;
    if rows.is_empty() {
        return Err(CliError::Empty(format!("{}: no sellers", path.display())));
    }
    let points: Vec<(f64, f64)> = rows.iter().map(|r| (r.lon, r.lat)).collect();
    let nodes = snap_points(g, &points)?;
    let sellers = rows
        .iter()
        .zip(&nodes)
        .map(|(r, &node)| match value {
            SellerValue::Price => Seller::priced(node, r.value, r.label.clone()),
            SellerValue::Supply => Seller::observed(node, r.value, r.label.clone()),
        })
        .collect();
    Ok((sellers, rows))
}

pub fn cmd_solve(cmd: &SolveCmd) -> Result<(), CliError> {
    let graph = read_graph(&cmd.graph_dir)?;
    match cmd.mode {
        MarketMode::Forward => solve_forward(cmd, &graph),
        MarketMode::Inverse => solve_inverse(cmd, &graph),
    }
}

fn solve_forward(cmd: &SolveCmd, graph: &Graph) -> Result<(), CliError> {
    let buyers = load_buyers(&cmd.buyers, graph)?;
    let (sellers, _) = load_sellers(&cmd.sellers, graph, SellerValue::Price)?;
    let market =
        build_market(graph, buyers, sellers, MarketMode::Forward).map_err(equilibrium_error)?;
    let report = aggregate_demand(&market).map_err(|e| CliError::Usage(e.to_string()))?;

    let mut w = csv::Writer::from_writer(BufWriter::new(File::create(&cmd.out)?));
    w.write_record(["buyer", "node", "seller", "delivered_price"])?;
    for choice in &report.choices {
        let seller = match choice.choice {
            Choice::Seller(si) => market.sellers[si].label.clone(),
            Choice::Outside => "outside".to_string(),
        };
        w.write_record([
            choice.buyer.to_string(),
            market.buyers[choice.buyer].node.0.to_string(),
            seller,
            fmt_sig(choice.delivered_price),
        ])?;
    }
    w.flush()?;

    let total: f64 = report.seller_demand.iter().sum::<f64>() + report.outside_mass;
    println!(
        "solved mode=forward buyers={} sellers={} served_mass={} outside_mass={}",
        market.buyers.len(),
        market.sellers.len(),
        fmt_sig(total - report.outside_mass),
        fmt_sig(report.outside_mass)
    );
    Ok(())
}

fn solve_inverse(cmd: &SolveCmd, graph: &Graph) -> Result<(), CliError> {
    let buyers = load_buyers(&cmd.buyers, graph)?;
    let (sellers, _) = load_sellers(&cmd.sellers, graph, SellerValue::Supply)?;
    let total_mass: f64 = buyers.iter().map(|b| b.mass).sum();
    let total_supply: f64 = sellers.iter().filter_map(|s| s.observed_supply).sum();
    if total_supply > total_mass * (1.0 + 1e-12) {
        return Err(CliError::Unbalanced(format!(
            "observed supply {total_supply} exceeds buyer mass {total_mass}"
        )));
    }
    let market =
        build_market(graph, buyers, sellers, MarketMode::Inverse).map_err(equilibrium_error)?;
    let (prices, solution) = inverse_prices(&market).map_err(equilibrium_error)?;

    let mut w = csv::Writer::from_writer(BufWriter::new(File::create(&cmd.out)?));
    w.write_record(["seller", "label", "node", "price", "quality"])?;
    for (i, s) in market.sellers.iter().enumerate() {
        w.write_record([
            i.to_string(),
            s.label.clone(),
            s.node.0.to_string(),
            fmt_sig(prices.per_seller[i]),
            fmt_sig(-prices.per_seller[i]),
        ])?;
    }
    w.flush()?;

    let flows_path = cmd
        .flows_out
        .clone()
        .unwrap_or_else(|| default_flows_path(&cmd.out));
    let mut w = csv::Writer::from_writer(BufWriter::new(File::create(&flows_path)?));
    w.write_record(["arc", "tail", "head", "cost", "flow"])?;
    for (i, arc) in market.graph.arcs().iter().enumerate() {
        if solution.flow[i] > 0.0 {
            w.write_record([
                i.to_string(),
                arc.tail.0.to_string(),
                arc.head.0.to_string(),
                fmt_sig(arc.cost),
                fmt_sig(solution.flow[i]),
            ])?;
        }
    }
    w.flush()?;

    let problem =
        FlowProblem::new(&market.graph, market.excess_vector()).map_err(flow_error)?;
    let slack = verify_slackness(&problem, &solution, cmd.tol).map_err(flow_error)?;
    println!(
        "solved mode=inverse cost={} dual_violation={} support_gap={} conservation={} optimal={}",
        fmt_sig(solution.total_cost),
        fmt_sig(slack.max_dual_violation.max(0.0)),
        fmt_sig(slack.max_support_gap),
        fmt_sig(slack.max_conservation_residual),
        slack.optimal
    );
    Ok(())
}

fn default_flows_path(out: &Path) -> PathBuf {
    let stem = out.file_stem().and_then(|s| s.to_str()).unwrap_or("out");
    out.with_file_name(format!("{stem}_flows.csv"))
}

pub struct AlphaMatchCmd {
    pub graph_dir: PathBuf,
    pub buyers: PathBuf,
    pub sellers: PathBuf,
    pub alpha: f64,
    pub tie_tol: f64,
    pub out: PathBuf,
}

fn transport_error(e: TransportError) -> CliError {
    match e {
        TransportError::Unbalanced { supply, demand } => CliError::Unbalanced(format!(
            "supply {supply} does not match demand {demand}"
        )),
        TransportError::Infeasible => {
            CliError::Disconnected("demand unreachable at finite cost".into())
        }
        TransportError::Flow(f) => flow_error(f),
        other => CliError::Usage(other.to_string()),
    }
}

pub fn cmd_alpha_match(cmd: &AlphaMatchCmd) -> Result<(), CliError> {
    if cmd.alpha < 1.0 {
        return Err(CliError::Usage(format!(
            "--alpha must be at least 1, got {}",
            cmd.alpha
        )));
    }
    let graph = read_graph(&cmd.graph_dir)?;
    let buyers = load_buyers(&cmd.buyers, &graph)?;
    let (sellers, _) = load_sellers(&cmd.sellers, &graph, SellerValue::Supply)?;
    let tp = build_transport(&graph, &buyers, &sellers, cmd.alpha).map_err(transport_error)?;
    let plan = solve_transport(&tp).map_err(transport_error)?;
    let diagram = extract_power_diagram(&plan, &tp.demand, cmd.tie_tol);
    let probe = degeneracy_probe(&tp).map_err(transport_error)?;

    let mut w = csv::Writer::from_writer(BufWriter::new(File::create(&cmd.out)?));
    w.write_record(["buyer", "seller", "weight"])?;
    for &(i, j, weight) in &plan.entries {
        w.write_record([
            i.to_string(),
            sellers[j as usize].label.clone(),
            fmt_sig(weight),
        ])?;
    }
    w.flush()?;

    println!(
        "alpha={} total_cost={} split_count={} degenerate={}",
        fmt_sig(cmd.alpha),
        fmt_sig(plan.total_cost),
        diagram.split_count,
        if probe.degenerate { "yes" } else { "no" }
    );
    Ok(())
}

pub struct RankCmd {
    pub graph_dir: PathBuf,
    pub buyers: PathBuf,
    pub sellers: PathBuf,
    pub out: PathBuf,
    pub balance: bool,
}

pub fn cmd_rank(cmd: &RankCmd) -> Result<(), CliError> {
    let graph = read_graph(&cmd.graph_dir)?;
    let buyers = load_buyers(&cmd.buyers, &graph)?;
    if buyers.iter().any(|b| b.region.is_none()) {
        return Err(CliError::Parse(
            "buyers csv needs a region column with a value in every row".into(),
        ));
    }
    let (sellers, rows) = load_sellers(&cmd.sellers, &graph, SellerValue::Supply)?;
    let seller_regions: Vec<String> = rows
        .iter()
        .map(|r| {
            r.region
                .clone()
                .ok_or_else(|| CliError::Parse("sellers csv needs a region column".into()))
        })
        .collect::<Result<_, _>>()?;

    let buyers = if cmd.balance {
        let (balanced, report) = balance_regions(&buyers, &sellers, &seller_regions)
            .map_err(|e| CliError::Unbalanced(e.to_string()))?;
        for s in &report.scales {
            println!("region {} scale {}", s.region, fmt_sig(s.scale));
        }
        balanced
    } else {
        buyers
    };

    let market =
        build_market(&graph, buyers, sellers, MarketMode::Inverse).map_err(equilibrium_error)?;
    let ranking = rank_quality(&market, &seller_regions).map_err(|e| match e {
        netmarket::apps::AppError::Unbalanced(r) => CliError::Unbalanced(format!(
            "region {r} is not balanced; pass --balance to scale buyer masses"
        )),
        netmarket::apps::AppError::Equilibrium(eq) => equilibrium_error(eq),
        other => CliError::Usage(other.to_string()),
    })?;

    let mut w = csv::Writer::from_writer(BufWriter::new(File::create(&cmd.out)?));
    w.write_record(["label", "region", "quality", "rank"])?;
    for e in &ranking.entries {
        w.write_record([
            e.label.clone(),
            e.region.clone(),
            fmt_sig(e.quality),
            e.rank.to_string(),
        ])?;
    }
    w.flush()?;
    println!("ranked sellers={}", ranking.entries.len());
    Ok(())
}

pub struct SynthCmd {
    pub out_dir: PathBuf,
    pub width: u32,
    pub height: u32,
    pub sellers: u32,
    pub buyers: u32,
    pub demand: u64,
    pub spacing_deg: f64,
    pub cost_jitter: f64,
    pub seed: u64,
}

/// Generates a random grid road network plus balanced buyer and seller
/// tables, all driven by one seeded RNG for reproducibility.
pub fn cmd_synth(cmd: &SynthCmd) -> Result<(), CliError> {
    let n = cmd
        .width
        .checked_mul(cmd.height)
        .ok_or_else(|| CliError::Usage("grid too large".into()))? as usize;
    if n == 0 {
        return Err(CliError::Usage("grid must have at least one node".into()));
    }
    if cmd.sellers as usize > n || cmd.buyers as usize > n {
        return Err(CliError::Usage("more agents than grid nodes".into()));
    }
    if cmd.sellers == 0 || cmd.buyers == 0 {
        return Err(CliError::Usage("need at least one seller and one buyer".into()));
    }
    if !(0.0..=1.0).contains(&cmd.cost_jitter) {
        return Err(CliError::Usage("--cost-jitter must be in [0, 1]".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cmd.seed);

    let position = |x: u32, y: u32| -> (f64, f64) {
        (x as f64 * cmd.spacing_deg, y as f64 * cmd.spacing_deg)
    };
    let mut nodes = Vec::with_capacity(n);
    for y in 0..cmd.height {
        for x in 0..cmd.width {
            let (lon, lat) = position(x, y);
            nodes.push(Node::new(y * cmd.width + x, lon, lat));
        }
    }
    let mut arcs = Vec::new();
    let mut link = |a: u32, b: u32, rng: &mut ChaCha8Rng| {
        let (na, nb) = (&nodes[a as usize], &nodes[b as usize]);
        let km = haversine_km(
            GeoPoint::new(na.lon, na.lat),
            GeoPoint::new(nb.lon, nb.lat),
        );
        let cost = km * (1.0 + rng.gen_range(0.0..=cmd.cost_jitter));
        arcs.push(Arc::new(a, b, cost));
        arcs.push(Arc::new(b, a, cost));
    };
    for y in 0..cmd.height {
        for x in 0..cmd.width {
            let id = y * cmd.width + x;
            if x + 1 < cmd.width {
                link(id, id + 1, &mut rng);
            }
            if y + 1 < cmd.height {
                link(id, id + cmd.width, &mut rng);
            }
        }
    }
    let graph = Graph::build(nodes, arcs).expect("grid graph is valid");
    write_graph(&cmd.out_dir, &graph)?;

    // integral masses summing exactly to the requested demand
    let share = |total: u64, parts: u32, i: u32| -> u64 {
        total / parts as u64 + u64::from(i < (total % parts as u64) as u32)
    };
    let mut seller_ids = rand::seq::index::sample(&mut rng, n, cmd.sellers as usize).into_vec();
    seller_ids.sort_unstable();
    let mut w = csv::Writer::from_writer(BufWriter::new(File::create(
        cmd.out_dir.join("sellers.csv"),
    )?));
    w.write_record(["label", "lon", "lat", "supply", "region"])?;
    for (i, &id) in seller_ids.iter().enumerate() {
        let node = graph.node(NodeId(id as u32));
        w.write_record([
            format!("s{i:05}"),
            fmt_sig(node.lon),
            fmt_sig(node.lat),
            share(cmd.demand, cmd.sellers, i as u32).to_string(),
            "all".to_string(),
        ])?;
    }
    w.flush()?;

    let mut buyer_ids = rand::seq::index::sample(&mut rng, n, cmd.buyers as usize).into_vec();
    buyer_ids.sort_unstable();
    let mut w = csv::Writer::from_writer(BufWriter::new(File::create(
        cmd.out_dir.join("buyers.csv"),
    )?));
    w.write_record(["lon", "lat", "mass", "reservation_utility", "region"])?;
    for (i, &id) in buyer_ids.iter().enumerate() {
        let node = graph.node(NodeId(id as u32));
        w.write_record([
            fmt_sig(node.lon),
            fmt_sig(node.lat),
            share(cmd.demand, cmd.buyers, i as u32).to_string(),
            String::new(),
            "all".to_string(),
        ])?;
    }
    w.flush()?;

    println!(
        "synth nodes={} arcs={} sellers={} buyers={} demand={} seed={}",
        graph.node_count(),
        graph.arc_count(),
        cmd.sellers,
        cmd.buyers,
        cmd.demand,
        cmd.seed
    );
    Ok(())
}
