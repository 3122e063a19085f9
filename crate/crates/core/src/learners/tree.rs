//! CART regression trees with multi-output leaves.
//!
//! Splits minimize the summed squared error over all output columns. Candidate
//! thresholds are midpoints between consecutive distinct feature values;
//! features are scanned in ascending index order and thresholds in ascending
//! order, and only a strictly better split replaces the incumbent.

use rand::seq::index::sample;
use rand_chacha::ChaCha8Rng;

#[derive(Debug, Clone, PartialEq)]
pub struct TreeParams {
    pub max_depth: usize,
    pub min_samples_leaf: usize,
    /// Fraction of features drawn (without replacement) at every split.
    pub feature_fraction: f64,
}

#[derive(Debug, Clone, PartialEq)]
enum Node {
    Leaf(Vec<f64>),
    Split {
        feature: usize,
        threshold: f64,
        left: usize,
        right: usize,
    },
}

#[derive(Debug, Clone, PartialEq)]
pub struct Tree {
    nodes: Vec<Node>,
}

struct Split {
    feature: usize,
    threshold: f64,
    score: f64,
}

fn leaf_mean(y: &[Vec<f64>], idx: &[usize]) -> Vec<f64> {
    let mut m = vec![0.0; y[idx[0]].len()];
    for &i in idx {
        for (a, v) in m.iter_mut().zip(&y[i]) {
            *a += v;
        }
    }
    m.iter_mut().for_each(|a| *a /= idx.len() as f64);
    m
}

fn best_split(
    x: &[Vec<f64>],
    y: &[Vec<f64>],
    idx: &[usize],
    features: &[usize],
    min_leaf: usize,
) -> Option<Split> {
    let n = idx.len();
    if n < 2 * min_leaf {
        return None;
    }
    let o = y[idx[0]].len();
    let mut total = vec![0.0; o];
    for &i in idx {
        for (t, v) in total.iter_mut().zip(&y[i]) {
            *t += v;
        }
    }
    let parent = total.iter().map(|t| t * t).sum::<f64>() / n as f64;
    let scale: f64 = idx.iter().map(|&i| y[i].iter().map(|v| v * v).sum::<f64>()).sum();
    let min_gain = 1e-12 * scale.max(f64::MIN_POSITIVE);

    let mut best: Option<Split> = None;
    let mut order = idx.to_vec();
    let mut left = vec![0.0; o];
    for &f in features {
        order.sort_by(|&a, &b| x[a][f].total_cmp(&x[b][f]).then(a.cmp(&b)));
        left.iter_mut().for_each(|v| *v = 0.0);
        for pos in 1..n {
            for (l, v) in left.iter_mut().zip(&y[order[pos - 1]]) {
                *l += v;
            }
            let (lo, hi) = (x[order[pos - 1]][f], x[order[pos]][f]);
            if pos < min_leaf || n - pos < min_leaf || !(lo < hi) {
                continue;
            }
            let (nl, nr) = (pos as f64, (n - pos) as f64);
            let mut score = 0.0;
            for (l, t) in left.iter().zip(&total) {
                let r = t - l;
                score += l * l / nl + r * r / nr;
            }
            if score - parent > min_gain && best.as_ref().map_or(true, |b| score > b.score) {
                best = Some(Split {
                    feature: f,
                    threshold: 0.5 * (lo + hi),
                    score,
                });
            }
        }
    }
    best
}

impl Tree {
    /// Grows a tree on the rows `idx` (repeats allowed, as in bootstrap
    /// samples). With `rng` present and a fraction below one, each split
    /// considers a random feature subset.
    pub fn grow(
        x: &[Vec<f64>],
        y: &[Vec<f64>],
        idx: &[usize],
        params: &TreeParams,
        mut rng: Option<&mut ChaCha8Rng>,
    ) -> Tree {
        let p = x.first().map_or(0, Vec::len);
        let k = ((params.feature_fraction * p as f64).ceil() as usize).clamp(1, p.max(1));
        let mut nodes = Vec::new();
        // (node slot, rows, depth)
        let mut stack = vec![(0usize, idx.to_vec(), 0usize)];
        nodes.push(Node::Leaf(Vec::new()));
        while let Some((slot, rows, depth)) = stack.pop() {
            let features: Vec<usize> = match rng.as_deref_mut() {
                Some(r) if k < p => {
                    let mut f = sample(r, p, k).into_vec();
                    f.sort_unstable();
                    f
                }
                _ => (0..p).collect(),
            };
            let split = if depth < params.max_depth {
                best_split(x, y, &rows, &features, params.min_samples_leaf)
            } else {
                None
            };
            match split {
                None => nodes[slot] = Node::Leaf(leaf_mean(y, &rows)),
                Some(s) => {
                    let (l, r): (Vec<usize>, Vec<usize>) = rows.iter().partition(|&&i| x[i][s.feature] <= s.threshold);
                    let (li, ri) = (nodes.len(), nodes.len() + 1);
                    nodes.push(Node::Leaf(Vec::new()));
                    nodes.push(Node::Leaf(Vec::new()));
                    nodes[slot] = Node::Split {
                        feature: s.feature,
                        threshold: s.threshold,
                        left: li,
                        right: ri,
                    };
                    // right first so the left subtree is expanded (and draws
                    // features) before the right one
                    stack.push((ri, r, depth + 1));
                    stack.push((li, l, depth + 1));
                }
            }
        }
        Tree { nodes }
    }

    pub fn predict(&self, row: &[f64]) -> &[f64] {
        let mut at = 0;
        loop {
            match &self.nodes[at] {
                Node::Leaf(v) => return v,
                Node::Split {
                    feature,
                    threshold,
                    left,
                    right,
                } => at = if row[*feature] <= *threshold { *left } else { *right },
            }
        }
    }
}
