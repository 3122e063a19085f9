use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use super::tree::{Tree, TreeParams};

/// Seed of tree `t`, derived from the forest seed so that trees can be grown
/// in any order.
fn tree_seed(seed: u64, t: usize) -> u64 {
    let mut z = seed ^ (t as u64).wrapping_add(1).wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

pub(super) fn grow_forest(
    x: &[Vec<f64>],
    y: &[Vec<f64>],
    n_trees: usize,
    bootstrap: bool,
    params: &TreeParams,
    seed: u64,
) -> Vec<Tree> {
    let n = x.len();
    (0..n_trees)
        .into_par_iter()
        .map(|t| {
            let mut rng = ChaCha8Rng::seed_from_u64(tree_seed(seed, t));
            let idx: Vec<usize> = if bootstrap {
                (0..n).map(|_| rng.gen_range(0..n)).collect()
            } else {
                (0..n).collect()
            };
            Tree::grow(x, y, &idx, params, Some(&mut rng))
        })
        .collect()
}
