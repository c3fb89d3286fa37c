//! Solves a feeder and prints the nodes most sensitive to reactive power at a
//! chosen node.
//!
//! cargo run --example sensitivities -- crates/core/feeders/four_bus.json b4.a

use unbalsens::netmodel::{Network, NodeId};
use unbalsens::powerflow::{solve_power_flow, SolverConfig};
use unbalsens::sensitivity::solve_all;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let mut args = std::env::args().skip(1);
    let path = args
        .next()
        .ok_or("usage: sensitivities <feeder.json> <bus.phase>")?;
    let node: NodeId = args.next().ok_or("missing node")?.parse()?;

    let net = Network::from_file(&path)?;
    let op = solve_power_flow(
        &net,
        &net.model.initial_taps(),
        &SolverConfig::default(),
        None,
    )?;
    let sens = solve_all(&net, &op)?;
    let k = net.index.require(&node)?;

    let mut rows: Vec<(usize, f64)> = (0..net.node_count())
        .map(|i| (i, sens.de_dq[(i, k)]))
        .collect();
    rows.sort_by(|a, b| b.1.abs().total_cmp(&a.1.abs()));
    println!("dE/dQ for reactive injection at {node} (p.u./p.u.):");
    for (i, v) in rows.iter().take(5) {
        println!("  {:<8} {v:+.6e}", net.index.node(*i).to_string());
    }
    Ok(())
}
