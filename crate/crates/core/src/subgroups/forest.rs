use rand::seq::SliceRandom;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ForestConfig {
    pub n_trees: usize,
    pub max_depth: usize,
    pub min_leaf: usize,
    /// Features examined per node; `None` means ⌈√d⌉.
    pub feature_subsample: Option<usize>,
    pub bootstrap: bool,
    pub seed: u64,
}

impl Default for ForestConfig {
    fn default() -> Self {
        Self {
            n_trees: 200,
            max_depth: 12,
            min_leaf: 2,
            feature_subsample: None,
            bootstrap: true,
            seed: 17,
        }
    }
}

impl ForestConfig {
    /// A single unbagged tree that looks at every feature.
    pub fn single_tree(max_depth: usize, min_leaf: usize, seed: u64) -> Self {
        Self {
            n_trees: 1,
            max_depth,
            min_leaf,
            feature_subsample: Some(usize::MAX),
            bootstrap: false,
            seed,
        }
    }

    pub fn validate(&self) -> Result<(), String> {
        if self.n_trees == 0 {
            return Err("forest.n_trees must be positive".into());
        }
        if self.min_leaf == 0 {
            return Err("forest.min_leaf must be positive".into());
        }
        if self.feature_subsample == Some(0) {
            return Err("forest.feature_subsample must be positive".into());
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Node {
    /// `x[feature] <= threshold` goes left.
    Split {
        feature: usize,
        threshold: f64,
        left: usize,
        right: usize,
        cover: f64,
    },
    Leaf { value: Vec<f64>, cover: f64 },
}

impl Node {
    pub fn cover(&self) -> f64 {
        match self {
            Node::Split { cover, .. } | Node::Leaf { cover, .. } => *cover,
        }
    }
}

/// Binary tree stored as a node arena; node 0 is the root.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tree {
    pub nodes: Vec<Node>,
}

impl Tree {
    pub fn leaf_for(&self, x: &[f64]) -> &[f64] {
        let mut i = 0;
        loop {
            match &self.nodes[i] {
                Node::Leaf { value, .. } => return value,
                Node::Split {
                    feature,
                    threshold,
                    left,
                    right,
                    ..
                } => i = if x[*feature] <= *threshold { *left } else { *right },
            }
        }
    }

    pub fn depth(&self) -> usize {
        fn go(t: &Tree, i: usize) -> usize {
            match &t.nodes[i] {
                Node::Leaf { .. } => 0,
                Node::Split { left, right, .. } => 1 + go(t, *left).max(go(t, *right)),
            }
        }
        go(self, 0)
    }

    /// Cover-weighted mean leaf value: the prediction when no feature is known.
    pub fn expected_value(&self) -> Vec<f64> {
        let root = self.nodes[0].cover();
        let mut out = Vec::new();
        for node in &self.nodes {
            if let Node::Leaf { value, cover } = node {
                if out.is_empty() {
                    out = vec![0.0; value.len()];
                }
                for (o, v) in out.iter_mut().zip(value) {
                    *o += v * cover / root;
                }
            }
        }
        out
    }

    pub fn uses_feature(&self, f: usize) -> bool {
        self.nodes
            .iter()
            .any(|n| matches!(n, Node::Split { feature, .. } if *feature == f))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ForestModel {
    pub n_features: usize,
    pub n_classes: usize,
    pub trees: Vec<Tree>,
    pub seed: u64,
    /// Out-of-bag accuracy over samples left out by at least one tree.
    pub oob_accuracy: Option<f64>,
}

impl ForestModel {
    pub fn predict_proba(&self, x: &[f64]) -> Result<Vec<f64>> {
        if x.len() != self.n_features {
            return Err(Error::DimensionMismatch {
                expected: self.n_features,
                actual: x.len(),
            });
        }
        let mut p = vec![0.0; self.n_classes];
        for t in &self.trees {
            for (a, b) in p.iter_mut().zip(t.leaf_for(x)) {
                *a += b;
            }
        }
        let n = self.trees.len() as f64;
        p.iter_mut().for_each(|v| *v /= n);
        Ok(p)
    }

    pub fn predict(&self, x: &[f64]) -> Result<usize> {
        Ok(argmax(&self.predict_proba(x)?))
    }
}

/// Index of the largest value; ties go to the lowest index.
pub fn argmax(v: &[f64]) -> usize {
    v.iter()
        .enumerate()
        .fold((0, f64::NEG_INFINITY), |best, (i, &x)| if x > best.1 { (i, x) } else { best })
        .0
}

fn gini(counts: &[f64], total: f64) -> f64 {
    if total <= 0.0 {
        return 0.0;
    }
    1.0 - counts.iter().map(|c| (c / total).powi(2)).sum::<f64>()
}

struct Builder<'a> {
    x: &'a [Vec<f64>],
    y: &'a [usize],
    n_classes: usize,
    mtry: usize,
    config: &'a ForestConfig,
    nodes: Vec<Node>,
}

impl Builder<'_> {
    fn leaf(&mut self, idx: &[usize]) -> usize {
        let mut value = vec![0.0; self.n_classes];
        for &i in idx {
            value[self.y[i]] += 1.0;
        }
        let n = idx.len() as f64;
        value.iter_mut().for_each(|v| *v /= n);
        self.nodes.push(Node::Leaf {
            value,
            cover: n,
        });
        self.nodes.len() - 1
    }

    /// Best (gain, threshold) for one feature, honouring `min_leaf`.
    fn best_threshold(&self, idx: &mut [usize], feature: usize, parent: f64) -> Option<(f64, f64)> {
        idx.sort_by(|&a, &b| self.x[a][feature].total_cmp(&self.x[b][feature]));
        let n = idx.len();
        let total = n as f64;
        let mut left = vec![0.0; self.n_classes];
        let mut right = vec![0.0; self.n_classes];
        for &i in idx.iter() {
            right[self.y[i]] += 1.0;
        }
        let mut best: Option<(f64, f64)> = None;
        for pos in 0..n - 1 {
            let c = self.y[idx[pos]];
            left[c] += 1.0;
            right[c] -= 1.0;
            let (a, b) = (self.x[idx[pos]][feature], self.x[idx[pos + 1]][feature]);
            if a == b {
                continue;
            }
            let nl = (pos + 1) as f64;
            let nr = total - nl;
            if pos + 1 < self.config.min_leaf || n - pos - 1 < self.config.min_leaf {
                continue;
            }
            let child = (nl * gini(&left, nl) + nr * gini(&right, nr)) / total;
            let gain = parent - child;
            if best.is_none_or(|(g, _)| gain > g) {
                best = Some((gain, a + (b - a) / 2.0));
            }
        }
        best
    }

    fn grow<R: Rng + ?Sized>(&mut self, idx: &mut [usize], depth: usize, rng: &mut R) -> usize {
        let n = idx.len();
        let mut counts = vec![0.0; self.n_classes];
        for &i in idx.iter() {
            counts[self.y[i]] += 1.0;
        }
        let parent = gini(&counts, n as f64);
        if depth >= self.config.max_depth || n < 2 * self.config.min_leaf || parent == 0.0 {
            return self.leaf(idx);
        }
        let d = self.x[0].len();
        let mut features: Vec<usize> = (0..d).collect();
        features.shuffle(rng);
        // Keep drawing features past mtry until some valid split turns up.
        let mut best: Option<(f64, usize, f64)> = None;
        for (seen, &f) in features.iter().enumerate() {
            if seen >= self.mtry && best.is_some() {
                break;
            }
            if let Some((gain, thr)) = self.best_threshold(idx, f, parent) {
                if best.is_none_or(|(g, _, _)| gain > g) {
                    best = Some((gain, f, thr));
                }
            }
        }
        let Some((_, feature, threshold)) = best else {
            return self.leaf(idx);
        };
        let node = self.nodes.len();
        self.nodes.push(Node::Leaf {
            value: Vec::new(),
            cover: 0.0,
        });
        idx.sort_by(|&a, &b| self.x[a][feature].total_cmp(&self.x[b][feature]).then(a.cmp(&b)));
        let split = idx.partition_point(|&i| self.x[i][feature] <= threshold);
        let (l, r) = idx.split_at_mut(split);
        let left = self.grow(l, depth + 1, rng);
        let right = self.grow(r, depth + 1, rng);
        self.nodes[node] = Node::Split {
            feature,
            threshold,
            left,
            right,
            cover: n as f64,
        };
        node
    }
}

fn build_tree<R: Rng + ?Sized>(
    x: &[Vec<f64>],
    y: &[usize],
    n_classes: usize,
    sample: &mut [usize],
    config: &ForestConfig,
    rng: &mut R,
) -> Tree {
    let d = x[0].len();
    let mtry = config
        .feature_subsample
        .unwrap_or_else(|| (d as f64).sqrt().ceil() as usize)
        .clamp(1, d.max(1));
    let mut b = Builder {
        x,
        y,
        n_classes,
        mtry,
        config,
        nodes: Vec::new(),
    };
    b.grow(sample, 0, rng);
    Tree { nodes: b.nodes }
}

/// Bagged Gini trees. Tree `t` draws from stream `t` of the master seed,
/// so the result does not depend on thread scheduling.
pub fn train_forest(x: &[Vec<f64>], y: &[usize], config: &ForestConfig) -> Result<ForestModel> {
    config.validate().map_err(Error::InvalidInput)?;
    if x.is_empty() || x.len() != y.len() {
        return Err(Error::InvalidInput(format!(
            "forest needs matching non-empty inputs ({} rows, {} labels)",
            x.len(),
            y.len()
        )));
    }
    let d = x[0].len();
    if let Some(bad) = x.iter().find(|r| r.len() != d) {
        return Err(Error::DimensionMismatch {
            expected: d,
            actual: bad.len(),
        });
    }
    let n = x.len();
    let n_classes = y.iter().max().map_or(1, |m| m + 1);
    let grown: Vec<(Tree, Vec<bool>)> = (0..config.n_trees)
        .into_par_iter()
        .map(|t| {
            let mut rng = rng::derived(config.seed, t as u64);
            let mut in_bag = vec![false; n];
            let mut sample: Vec<usize> = if config.bootstrap {
                (0..n).map(|_| rng.random_range(0..n)).collect()
            } else {
                (0..n).collect()
            };
            for &i in &sample {
                in_bag[i] = true;
            }
            let tree = build_tree(x, y, n_classes, &mut sample, config, &mut rng);
            (tree, in_bag)
        })
        .collect();

    let mut oob_votes = vec![vec![0.0; n_classes]; n];
    let mut oob_seen = vec![false; n];
    for (tree, in_bag) in &grown {
        for i in (0..n).filter(|&i| !in_bag[i]) {
            oob_seen[i] = true;
            for (a, b) in oob_votes[i].iter_mut().zip(tree.leaf_for(&x[i])) {
                *a += b;
            }
        }
    }
    let scored: Vec<usize> = (0..n).filter(|&i| oob_seen[i]).collect();
    let oob_accuracy = (!scored.is_empty()).then(|| {
        scored.iter().filter(|&&i| argmax(&oob_votes[i]) == y[i]).count() as f64 / scored.len() as f64
    });

    Ok(ForestModel {
        n_features: d,
        n_classes,
        trees: grown.into_iter().map(|(t, _)| t).collect(),
        seed: config.seed,
        oob_accuracy,
    })
}
