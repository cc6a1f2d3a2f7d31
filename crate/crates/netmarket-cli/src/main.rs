//! `netmarket`: build road-network graphs, solve spatial market equilibria
//! and rank sellers from the command line.
//!
//! Exit codes: 1 usage, 2 parse error, 3 empty result, 4 imbalance,
//! 5 disconnected network.

mod commands;
mod io;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use netmarket::equilibrium::MarketMode;
use netmarket::geo::LineFormat;

#[derive(Parser)]
#[command(name = "netmarket", version, about = "Spatial market equilibria on road networks")]
struct Cli {
    /// Worker threads for geodesic matrix rows (0 = all cores). Results do
    /// not depend on this.
    #[arg(long, global = true, default_value_t = 0)]
    threads: usize,
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum FormatArg {
    Geojson,
    CsvEdges,
}

#[derive(Clone, Copy, ValueEnum)]
enum ModeArg {
    Forward,
    Inverse,
}

#[derive(Subcommand)]
enum Command {
    /// Parse line features into a graph artifact (nodes.csv + arcs.csv).
    BuildGraph(BuildGraphArgs),
    /// Compute delivered prices (forward) or dual prices (inverse).
    Solve(SolveArgs),
    /// Match buyers to sellers under alpha-powered geodesic costs.
    AlphaMatch(AlphaMatchArgs),
    /// Rank sellers by quality per region from observed demand.
    Rank(RankArgs),
    /// Generate a seeded random grid network with agent tables.
    Synth(SynthArgs),
}

#[derive(Args)]
struct BuildGraphArgs {
    /// Input file (GeoJSON FeatureCollection or csv-edges table).
    #[arg(long)]
    input: PathBuf,
    #[arg(long, value_enum)]
    format: FormatArg,
    /// Directory for nodes.csv and arcs.csv.
    #[arg(long)]
    out_dir: PathBuf,
    /// Cost per kilometer applied to haversine arc lengths.
    #[arg(long, default_value_t = 1.0)]
    per_km_cost: f64,
    /// Endpoint merge tolerance in meters.
    #[arg(long, default_value_t = 1.0)]
    snap_tol: f64,
    /// Keep only the largest weakly connected component.
    #[arg(long)]
    largest_component: bool,
    /// Contract pass-through chain nodes (costs are preserved).
    #[arg(long)]
    simplify: bool,
}

#[derive(Args)]
struct SolveArgs {
    /// Directory holding nodes.csv and arcs.csv.
    #[arg(long)]
    graph_dir: PathBuf,
    #[arg(long, value_enum)]
    mode: ModeArg,
    /// Buyers CSV: lon,lat,mass[,reservation_utility][,region].
    #[arg(long)]
    buyers: PathBuf,
    /// Sellers CSV: label,lon,lat,price (forward) or supply (inverse).
    #[arg(long)]
    sellers: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// Arc-flow output for inverse mode (default: <out>_flows.csv).
    #[arg(long)]
    flows_out: Option<PathBuf>,
    /// Complementary-slackness verification tolerance.
    #[arg(long, default_value_t = 1e-9)]
    tol: f64,
}

#[derive(Args)]
struct AlphaMatchArgs {
    #[arg(long)]
    graph_dir: PathBuf,
    #[arg(long)]
    buyers: PathBuf,
    /// Sellers CSV: label,lon,lat,supply[,region].
    #[arg(long)]
    sellers: PathBuf,
    /// Exponent applied to whole-trip geodesic costs (>= 1).
    #[arg(long)]
    alpha: f64,
    /// Share of a buyer's demand below which a seller is ignored when
    /// labeling the power diagram.
    #[arg(long, default_value_t = 1e-6)]
    tie_tol: f64,
    /// Plan output: buyer,seller,weight.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct RankArgs {
    #[arg(long)]
    graph_dir: PathBuf,
    /// Buyers CSV; the region column is required.
    #[arg(long)]
    buyers: PathBuf,
    /// Sellers CSV: label,lon,lat,supply,region.
    #[arg(long)]
    sellers: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// Scale buyer masses so each region's demand matches its supply.
    #[arg(long)]
    balance: bool,
}

#[derive(Args)]
struct SynthArgs {
    #[arg(long)]
    out_dir: PathBuf,
    #[arg(long, default_value_t = 432)]
    width: u32,
    #[arg(long, default_value_t = 432)]
    height: u32,
    #[arg(long, default_value_t = 1000)]
    sellers: u32,
    #[arg(long, default_value_t = 5000)]
    buyers: u32,
    /// Total demand mass, split integrally across buyers and sellers.
    #[arg(long, default_value_t = 100_000)]
    demand: u64,
    #[arg(long, default_value_t = 0.005)]
    spacing_deg: f64,
    /// Arc costs are haversine length times 1 + U[0, jitter].
    #[arg(long, default_value_t = 0.25)]
    cost_jitter: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            use clap::error::ErrorKind;
            let code = match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => 0,
                _ => 1,
            };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    if cli.threads > 0 {
        rayon::ThreadPoolBuilder::new()
            .num_threads(cli.threads)
            .build_global()
            .ok();
    }

    let result = match &cli.command {
        Command::BuildGraph(a) => commands::cmd_build_graph(&commands::BuildGraphCmd {
            input: a.input.clone(),
            format: match a.format {
                FormatArg::Geojson => LineFormat::GeoJson,
                FormatArg::CsvEdges => LineFormat::CsvEdges,
            },
            out_dir: a.out_dir.clone(),
            per_km_cost: a.per_km_cost,
            snap_tol: a.snap_tol,
            keep_largest: a.largest_component,
            simplify: a.simplify,
        }),
        Command::Solve(a) => commands::cmd_solve(&commands::SolveCmd {
            graph_dir: a.graph_dir.clone(),
            mode: match a.mode {
                ModeArg::Forward => MarketMode::Forward,
                ModeArg::Inverse => MarketMode::Inverse,
            },
            buyers: a.buyers.clone(),
            sellers: a.sellers.clone(),
            out: a.out.clone(),
            flows_out: a.flows_out.clone(),
            tol: a.tol,
        }),
        Command::AlphaMatch(a) => commands::cmd_alpha_match(&commands::AlphaMatchCmd {
            graph_dir: a.graph_dir.clone(),
            buyers: a.buyers.clone(),
            sellers: a.sellers.clone(),
            alpha: a.alpha,
            tie_tol: a.tie_tol,
            out: a.out.clone(),
        }),
        Command::Rank(a) => commands::cmd_rank(&commands::RankCmd {
            graph_dir: a.graph_dir.clone(),
            buyers: a.buyers.clone(),
            sellers: a.sellers.clone(),
            out: a.out.clone(),
            balance: a.balance,
        }),
        Command::Synth(a) => commands::cmd_synth(&commands::SynthCmd {
            out_dir: a.out_dir.clone(),
            width: a.width,
            height: a.height,
            sellers: a.sellers,
            buyers: a.buyers,
            demand: a.demand,
            spacing_deg: a.spacing_deg,
            cost_jitter: a.cost_jitter,
            seed: a.seed,
        }),
    };

    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("netmarket: {}", e.message());
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
