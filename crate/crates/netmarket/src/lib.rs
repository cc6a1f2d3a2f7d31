//! Spatial market equilibria on large road networks.
//!
//! A geographic market is a directed graph whose arcs carry travel costs.
//! Buyers purchase from the seller minimizing price plus travel, with an
//! outside option modeled as a fictitious zero-price supplier. The
//! equilibrium conditions are the complementary-slackness conditions of an
//! uncapacitated min-cost flow, which yields two workflows:
//!
//! * forward: seller prices in, per-seller demand out ([`apps::aggregate_demand`]);
//! * inverse: observed per-seller demand in, dual prices / quality indices
//!   out ([`equilibrium::inverse_prices`], [`apps::rank_quality`]).
//!
//! Degenerate ties between sellers can be resolved by matching under
//! alpha-powered geodesic costs ([`transport`]), and multiplicative iceberg
//! losses reduce to the additive model through a log transform
//! ([`equilibrium::iceberg_costs`]).

pub mod apps;
pub mod equilibrium;
pub mod fixtures;
pub mod geo;
pub mod graph;
pub mod mcf;
pub mod paths;
pub mod transport;
