//! Generate a perfect maze, print it, solve it, check the solution through
//! the verifier and the answer-tag extractor, and export a small dataset.
//!
//!     cargo run --release --example maze_dataset

use verk::maze::{
    export_dataset, generate_maze, parse_answer_tags, render_ascii, verify_moves, MazeSpec,
};
use verk::rollout::derive_rng;

fn main() {
    let spec = MazeSpec { cells_n: 4, seed: 19 };
    let mut rng = derive_rng(6, &[0]);
    let maze = generate_maze(&spec, &mut rng).unwrap();
    println!("{}", render_ascii(&maze));
    let solution = maze.bfs_solution();
    println!("solution: {solution}");
    assert!(verify_moves(&maze, &solution));

    let reply = format!("thinking... <answer>LLRR</answer> wait, <answer>{solution}</answer>");
    let extracted = parse_answer_tags(&reply).unwrap();
    println!(
        "extracted final answer {:?} -> verified: {}",
        extracted,
        verify_moves(&maze, &extracted)
    );

    let dir = std::env::temp_dir().join("verk_mazes");
    export_dataset(5, 20, 5, 7, &dir).unwrap();
    println!("dataset written to {}", dir.display());
}
