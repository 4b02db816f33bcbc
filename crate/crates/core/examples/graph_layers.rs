//! Runs the three bottleneck graph layers on a 4×4 grid graph.

use std::sync::Arc;

use gacunet::graph::{
    build_grid_graph, center_of_mass, ChebParams, Connectivity, GatParams, NormalizedLaplacian,
};
use gacunet::{Tape, Tensor};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn main() -> gacunet::Result<()> {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let graph = build_grid_graph(4, 4, Connectivity::Eight)?;
    println!(
        "grid: {} nodes, {} edges",
        graph.node_count(),
        graph.edge_count()
    );
    let nbr = Arc::new(graph.neighborhoods());
    let lap = NormalizedLaplacian::new(&graph).scaled_operator::<f64>();

    let mut tape = Tape::<f64>::new();
    let x = tape.constant(Tensor::uniform(vec![16, 5], -1.0, 1.0, &mut rng));
    let gat = GatParams::random(5, 6, &mut rng).apply(&mut tape, x, &nbr)?;
    let node0: f64 = gat.attention[..nbr.of(0).len()].iter().sum();
    println!(
        "gat output {:?}, node 0 attention sums to {node0:.12}",
        tape.shape(gat.output)
    );

    let cheb = ChebParams::random(2, 6, 4, &mut rng).apply(&mut tape, gat.output, &lap)?;
    println!("cheb output {:?}", tape.shape(cheb));

    let t = tape.transpose(cheb)?;
    let maps = tape.reshape(t, &[4, 4, 4])?;
    let com = center_of_mass(&mut tape, maps)?;
    println!(
        "centroids (row, col) per channel: {:?}",
        tape.value(com.centroids).data()
    );
    println!("augmented maps {:?}", tape.shape(com.augmented));
    Ok(())
}
