//! Planted synthetic benchmarks: a complete b-ary tree and feature vectors
//! that follow the hierarchy (each node's feature is its parent's direction
//! plus Gaussian noise, normalized), so parent recovery has a known,
//! learnable signal.

use std::collections::BTreeMap;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::Result;
use crate::taxonomy::Taxonomy;

/// Edges of a complete tree with the given branching factor and depth
/// (depth 0 is just the root). Ids are `n0` (root), `n1`, ... in breadth-
/// first order, so branching 4 at depth 3 yields 1+4+16+64 = 85 nodes.
pub fn planted_tree(branching: usize, depth: usize) -> Vec<(String, String)> {
    let mut edges = Vec::new();
    let mut level = vec![0usize];
    let mut next_id = 1usize;
    for _ in 0..depth {
        let mut next_level = Vec::new();
        for &parent in &level {
            for _ in 0..branching {
                edges.push((format!("n{next_id}"), format!("n{parent}")));
                next_level.push(next_id);
                next_id += 1;
            }
        }
        level = next_level;
    }
    edges
}

/// Unit feature vectors that inherit direction down the tree: the root gets
/// a random unit direction, and every other node draws
/// `normalize(dir(parent) + sigma * gaussian)`. Nodes are processed in
/// breadth-first order from the roots so parents are always assigned first.
pub fn planted_features(
    t: &Taxonomy,
    d_plm: usize,
    sigma: f64,
    seed: u64,
) -> Result<BTreeMap<String, Vec<f64>>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let gauss = |rng: &mut ChaCha8Rng| -> Vec<f64> {
        (0..d_plm).map(|_| StandardNormal.sample(rng)).collect()
    };
    let normalize = |v: Vec<f64>| -> Vec<f64> {
        let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        v.into_iter().map(|x| x / n).collect()
    };
    let mut dirs: Vec<Option<Vec<f64>>> = vec![None; t.len()];
    // Breadth-first from the roots; in the (DAG) multi-parent case the
    // lowest-index parent provides the direction.
    let mut queue: std::collections::VecDeque<usize> = t.roots().iter().copied().collect();
    for &r in t.roots() {
        dirs[r] = Some(normalize(gauss(&mut rng)));
    }
    while let Some(u) = queue.pop_front() {
        for &c in t.children_of(u) {
            if dirs[c].is_none() {
                let parent_dir = dirs[u].as_ref().expect("parent assigned").clone();
                let noise = gauss(&mut rng);
                let v: Vec<f64> = parent_dir
                    .iter()
                    .zip(&noise)
                    .map(|(p, n)| p + sigma * n)
                    .collect();
                dirs[c] = Some(normalize(v));
                queue.push_back(c);
            }
        }
    }
    Ok(t.ids()
        .iter()
        .enumerate()
        .map(|(i, id)| (id.clone(), dirs[i].clone().expect("all reachable")))
        .collect())
}
