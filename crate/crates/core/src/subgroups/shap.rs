//! Path-dependent TreeSHAP for trees with vector-valued leaves.
//!
//! Feature absence is modelled by following both children of a split in
//! proportion to their training cover, which is exactly the conditional
//! expectation used by [`conditional_expectation`].

use serde::{Deserialize, Serialize};

use super::forest::{ForestModel, Node, Tree};
use crate::error::{Error, Result};

/// Attributions for one instance: `values[feature][class]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ShapAttribution {
    pub base_value: Vec<f64>,
    pub values: Vec<Vec<f64>>,
}

impl ShapAttribution {
    /// `φ0 + Σ φ_i` for one class; equals the model output by local accuracy.
    pub fn total(&self, class: usize) -> f64 {
        self.base_value[class] + self.values.iter().map(|v| v[class]).sum::<f64>()
    }
}

#[derive(Debug, Clone, Copy)]
struct PathElement {
    feature: Option<usize>,
    zero_fraction: f64,
    one_fraction: f64,
    pweight: f64,
}

fn extend(path: &mut Vec<PathElement>, zero_fraction: f64, one_fraction: f64, feature: Option<usize>) {
    let depth = path.len();
    path.push(PathElement {
        feature,
        zero_fraction,
        one_fraction,
        pweight: if depth == 0 { 1.0 } else { 0.0 },
    });
    let denom = (depth + 1) as f64;
    for i in (0..depth).rev() {
        path[i + 1].pweight += one_fraction * path[i].pweight * (i + 1) as f64 / denom;
        path[i].pweight = zero_fraction * path[i].pweight * (depth - i) as f64 / denom;
    }
}

fn unwind(path: &mut Vec<PathElement>, index: usize) {
    let depth = path.len() - 1;
    let one = path[index].one_fraction;
    let zero = path[index].zero_fraction;
    let denom = (depth + 1) as f64;
    let mut next_one = path[depth].pweight;
    for i in (0..depth).rev() {
        if one != 0.0 {
            let tmp = path[i].pweight;
            path[i].pweight = next_one * denom / ((i + 1) as f64 * one);
            next_one = tmp - path[i].pweight * zero * (depth - i) as f64 / denom;
        } else {
            path[i].pweight = path[i].pweight * denom / (zero * (depth - i) as f64);
        }
    }
    for i in index..depth {
        path[i].feature = path[i + 1].feature;
        path[i].zero_fraction = path[i + 1].zero_fraction;
        path[i].one_fraction = path[i + 1].one_fraction;
    }
    path.pop();
}

fn unwound_sum(path: &[PathElement], index: usize) -> f64 {
    let depth = path.len() - 1;
    let one = path[index].one_fraction;
    let zero = path[index].zero_fraction;
    let denom = (depth + 1) as f64;
    let mut next_one = path[depth].pweight;
    let mut total = 0.0;
    for i in (0..depth).rev() {
        if one != 0.0 {
            let tmp = next_one * denom / ((i + 1) as f64 * one);
            total += tmp;
            next_one = path[i].pweight - tmp * zero * (depth - i) as f64 / denom;
        } else if zero != 0.0 {
            total += path[i].pweight / zero / ((depth - i) as f64 / denom);
        }
    }
    total
}

#[allow(clippy::too_many_arguments)]
fn recurse(
    tree: &Tree,
    x: &[f64],
    node: usize,
    mut path: Vec<PathElement>,
    zero_fraction: f64,
    one_fraction: f64,
    feature: Option<usize>,
    phi: &mut [Vec<f64>],
) {
    extend(&mut path, zero_fraction, one_fraction, feature);
    match &tree.nodes[node] {
        Node::Leaf { value, .. } => {
            for i in 1..path.len() {
                let w = unwound_sum(&path, i);
                let el = path[i];
                let scale = w * (el.one_fraction - el.zero_fraction);
                let f = el.feature.expect("only the root element has no feature");
                for (p, v) in phi[f].iter_mut().zip(value) {
                    *p += scale * v;
                }
            }
        }
        Node::Split {
            feature: split,
            threshold,
            left,
            right,
            cover,
        } => {
            let (hot, cold) = if x[*split] <= *threshold {
                (*left, *right)
            } else {
                (*right, *left)
            };
            let hot_zero = tree.nodes[hot].cover() / cover;
            let cold_zero = tree.nodes[cold].cover() / cover;
            let mut incoming_zero = 1.0;
            let mut incoming_one = 1.0;
            if let Some(k) = path.iter().position(|e| e.feature == Some(*split)) {
                incoming_zero = path[k].zero_fraction;
                incoming_one = path[k].one_fraction;
                unwind(&mut path, k);
            }
            recurse(tree, x, hot, path.clone(), hot_zero * incoming_zero, incoming_one, Some(*split), phi);
            recurse(tree, x, cold, path, cold_zero * incoming_zero, 0.0, Some(*split), phi);
        }
    }
}

/// SHAP values of a single tree.
pub fn tree_shap_single(tree: &Tree, x: &[f64], n_features: usize) -> ShapAttribution {
    let base = tree.expected_value();
    let mut phi = vec![vec![0.0; base.len()]; n_features];
    recurse(tree, x, 0, Vec::new(), 1.0, 1.0, None, &mut phi);
    ShapAttribution {
        base_value: base,
        values: phi,
    }
}

/// Forest SHAP values: the mean over trees, matching prediction averaging.
pub fn tree_shap(forest: &ForestModel, x: &[f64]) -> Result<ShapAttribution> {
    if x.len() != forest.n_features {
        return Err(Error::DimensionMismatch {
            expected: forest.n_features,
            actual: x.len(),
        });
    }
    let c = forest.n_classes;
    let mut base = vec![0.0; c];
    let mut phi = vec![vec![0.0; c]; forest.n_features];
    for tree in &forest.trees {
        let a = tree_shap_single(tree, x, forest.n_features);
        for (b, v) in base.iter_mut().zip(&a.base_value) {
            *b += v;
        }
        for (row, arow) in phi.iter_mut().zip(&a.values) {
            for (p, v) in row.iter_mut().zip(arow) {
                *p += v;
            }
        }
    }
    let n = forest.trees.len() as f64;
    base.iter_mut().for_each(|v| *v /= n);
    phi.iter_mut().flatten().for_each(|v| *v /= n);
    Ok(ShapAttribution {
        base_value: base,
        values: phi,
    })
}

/// Tree output when only the features in `known` are observed; unknown
/// splits average their children by cover.
pub fn conditional_expectation(tree: &Tree, x: &[f64], known: &dyn Fn(usize) -> bool) -> Vec<f64> {
    fn go(tree: &Tree, x: &[f64], known: &dyn Fn(usize) -> bool, i: usize) -> Vec<f64> {
        match &tree.nodes[i] {
            Node::Leaf { value, .. } => value.clone(),
            Node::Split {
                feature,
                threshold,
                left,
                right,
                cover,
            } => {
                if known(*feature) {
                    let next = if x[*feature] <= *threshold { *left } else { *right };
                    go(tree, x, known, next)
                } else {
                    let l = go(tree, x, known, *left);
                    let r = go(tree, x, known, *right);
                    let wl = tree.nodes[*left].cover() / cover;
                    let wr = tree.nodes[*right].cover() / cover;
                    l.iter().zip(&r).map(|(a, b)| wl * a + wr * b).collect()
                }
            }
        }
    }
    go(tree, x, known, 0)
}
