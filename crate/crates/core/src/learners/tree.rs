//! Histogram-based gradient boosting on regression trees.

use ndarray::{ArrayView2, Axis};

const MAX_BINS: usize = 255;
const L2: f64 = 1.0;
const MIN_HESS: f64 = 1e-3;
/// Rows whose content hash is 0 modulo this form the early-stopping fold.
const VALIDATION_FOLDS: u64 = 5;
/// Early stopping needs at least this many rows.
const MIN_ROWS_FOR_VALIDATION: usize = 200;
/// Rounds without a held-out improvement before boosting stops.
const PATIENCE: usize = 20;

/// Per-feature cut points; a value `v` lands in bin `#{c : c < v}`.
struct Binned {
    cuts: Vec<Vec<f64>>,
    /// column-major bin codes, `bins[j * n + i]`
    bins: Vec<u8>,
    n: usize,
}

impl Binned {
    fn new(x: ArrayView2<'_, f64>) -> Self {
        let (n, p) = x.dim();
        let mut cuts = Vec::with_capacity(p);
        let mut bins = vec![0u8; n * p];
        for j in 0..p {
            let mut vals: Vec<f64> = x.column(j).to_vec();
            vals.sort_by(f64::total_cmp);
            vals.dedup();
            let c: Vec<f64> = if vals.len() <= MAX_BINS + 1 {
                vals.windows(2).map(|w| 0.5 * (w[0] + w[1])).collect()
            } else {
                let m = vals.len();
                let mut c: Vec<f64> = (1..=MAX_BINS)
                    .map(|k| {
                        let i = k * m / (MAX_BINS + 1);
                        0.5 * (vals[i - 1] + vals[i])
                    })
                    .collect();
                c.dedup();
                c
            };
            for (i, v) in x.column(j).iter().enumerate() {
                bins[j * n + i] = c.partition_point(|cut| cut < v) as u8;
            }
            cuts.push(c);
        }
        Self { cuts, bins, n }
    }

    fn bin(&self, feature: usize, row: u32) -> u8 {
        self.bins[feature * self.n + row as usize]
    }
}

#[derive(Debug, Clone, PartialEq)]
enum Node {
    /// rows with `x[feature] <= threshold` go left
    Split {
        feature: usize,
        threshold: f64,
        left: usize,
        right: usize,
    },
    Leaf(f64),
}

#[derive(Debug, Clone, PartialEq)]
pub(crate) struct Tree {
    nodes: Vec<Node>,
}

impl Tree {
    fn predict(&self, x: &[f64]) -> f64 {
        let mut i = 0;
        loop {
            match self.nodes[i] {
                Node::Split {
                    feature,
                    threshold,
                    left,
                    right,
                } => i = if x[feature] <= threshold { left } else { right },
                Node::Leaf(v) => return v,
            }
        }
    }

    /// Adds this tree's contribution to `diff`, a difference array over the
    /// sorted `grid` of values for feature `prefix.len()`; all other
    /// features are fixed to `prefix`.
    fn accumulate_over_last(&self, prefix: &[f64], grid: &[f64], diff: &mut [f64]) {
        let last = prefix.len();
        let mut stack = vec![(0usize, 0usize, grid.len())];
        while let Some((node, lo, hi)) = stack.pop() {
            if lo >= hi {
                continue;
            }
            match self.nodes[node] {
                Node::Leaf(v) => {
                    diff[lo] += v;
                    diff[hi] -= v;
                }
                Node::Split {
                    feature,
                    threshold,
                    left,
                    right,
                } if feature == last => {
                    let k = lo + grid[lo..hi].partition_point(|g| *g <= threshold);
                    stack.push((left, lo, k));
                    stack.push((right, k, hi));
                }
                Node::Split {
                    feature,
                    threshold,
                    left,
                    right,
                } => {
                    let next = if prefix[feature] <= threshold { left } else { right };
                    stack.push((next, lo, hi));
                }
            }
        }
    }
}

struct Grower<'a> {
    binned: &'a Binned,
    grad: &'a [f64],
    hess: &'a [f64],
    max_depth: usize,
    min_leaf: usize,
    nodes: Vec<Node>,
    /// rows reaching each leaf, keyed by node index
    leaves: Vec<(usize, Vec<u32>)>,
}

impl Grower<'_> {
    fn grow(&mut self, rows: Vec<u32>, depth: usize) -> usize {
        let id = self.nodes.len();
        self.nodes.push(Node::Leaf(0.0));
        let split = if depth < self.max_depth && rows.len() >= 2 * self.min_leaf {
            self.best_split(&rows)
        } else {
            None
        };
        match split {
            None => self.leaves.push((id, rows)),
            Some((feature, bin)) => {
                let (l, r): (Vec<u32>, Vec<u32>) = rows
                    .into_iter()
                    .partition(|&i| usize::from(self.binned.bin(feature, i)) <= bin);
                let left = self.grow(l, depth + 1);
                let right = self.grow(r, depth + 1);
                self.nodes[id] = Node::Split {
                    feature,
                    threshold: self.binned.cuts[feature][bin],
                    left,
                    right,
                };
            }
        }
        id
    }

    fn best_split(&self, rows: &[u32]) -> Option<(usize, usize)> {
        let (g_tot, h_tot) = rows.iter().fold((0.0, 0.0), |(g, h), &i| {
            (g + self.grad[i as usize], h + self.hess[i as usize])
        });
        let parent = g_tot * g_tot / (h_tot + L2);
        let mut best: Option<(f64, usize, usize)> = None;
        let mut hist = vec![(0.0f64, 0.0f64, 0usize); MAX_BINS + 1];
        for (feature, cuts) in self.binned.cuts.iter().enumerate() {
            if cuts.is_empty() {
                continue;
            }
            let nb = cuts.len() + 1;
            hist[..nb].fill((0.0, 0.0, 0));
            for &i in rows {
                let b = &mut hist[usize::from(self.binned.bin(feature, i))];
                b.0 += self.grad[i as usize];
                b.1 += self.hess[i as usize];
                b.2 += 1;
            }
            let (mut gl, mut hl, mut cl) = (0.0, 0.0, 0usize);
            for (bin, &(g, h, c)) in hist[..nb - 1].iter().enumerate() {
                gl += g;
                hl += h;
                cl += c;
                let (gr, hr, cr) = (g_tot - gl, h_tot - hl, rows.len() - cl);
                if cl < self.min_leaf || cr < self.min_leaf || hl < MIN_HESS || hr < MIN_HESS {
                    continue;
                }
                let gain = gl * gl / (hl + L2) + gr * gr / (hr + L2) - parent;
                if gain > 1e-12 && best.map_or(true, |b| gain > b.0) {
                    best = Some((gain, feature, bin));
                }
            }
        }
        best.map(|(_, f, b)| (f, b))
    }
}

/// How a leaf value is computed from the rows reaching it.
pub(crate) enum LeafRule<'a> {
    /// Newton step `-G / (H + l2)`.
    Newton,
    /// `q`-quantile of the residuals `target - current` of the leaf's rows.
    ResidualQuantile {
        q: f64,
        target: &'a [f64],
        current: &'a [f64],
    },
}

#[derive(Debug, Clone, PartialEq)]
pub(crate) struct Ensemble {
    base: f64,
    trees: Vec<Tree>,
}

/// The loss being boosted; gradients are taken with respect to the raw score.
#[derive(Debug, Clone, Copy)]
pub(crate) enum Loss {
    Logistic,
    Squared,
    Pinball(f64),
}

pub(crate) struct BoostParams {
    pub iterations: usize,
    pub learning_rate: f64,
    pub max_depth: usize,
    pub min_leaf: usize,
    pub early_stopping: bool,
}

impl Loss {
    fn base(self, target: &[f64]) -> f64 {
        match self {
            Loss::Logistic => {
                let p = (target.iter().sum::<f64>() / target.len() as f64).clamp(1e-6, 1.0 - 1e-6);
                (p / (1.0 - p)).ln()
            }
            Loss::Squared => target.iter().sum::<f64>() / target.len() as f64,
            Loss::Pinball(q) => {
                let mut s = target.to_vec();
                s.sort_by(f64::total_cmp);
                crate::stats::sorted_quantile(&s, q)
            }
        }
    }

    fn grad_hess(self, target: f64, score: f64) -> (f64, f64) {
        match self {
            Loss::Logistic => {
                let p = crate::stats::sigmoid(score);
                (p - target, (p * (1.0 - p)).max(1e-12))
            }
            Loss::Squared => (score - target, 1.0),
            Loss::Pinball(q) => (if target < score { 1.0 - q } else { -q }, 1.0),
        }
    }

    fn value(self, target: f64, score: f64) -> f64 {
        match self {
            // log(1 + e^s) - t s, computed stably
            Loss::Logistic => score.max(0.0) + (-score.abs()).exp().ln_1p() - target * score,
            Loss::Squared => 0.5 * (score - target) * (score - target),
            Loss::Pinball(q) => {
                let r = target - score;
                if r >= 0.0 {
                    q * r
                } else {
                    (q - 1.0) * r
                }
            }
        }
    }
}

/// Content hash of a training row, so fold membership does not depend on
/// row order.
fn row_hash(row: ndarray::ArrayView1<'_, f64>, target: f64) -> u64 {
    row.iter()
        .chain(std::iter::once(&target))
        .fold(0x5eed, |h, v| crate::rng::derive_seed(h, v.to_bits()))
}

impl Ensemble {
    /// Boosts up to `params.iterations` trees. With early stopping, a
    /// hash-selected fold of about a fifth of the rows picks the number of
    /// trees, and the ensemble is then refitted on all rows.
    pub(crate) fn fit(x: ArrayView2<'_, f64>, target: &[f64], loss: Loss, params: &BoostParams) -> Self {
        let n = x.nrows();
        if params.early_stopping && n >= MIN_ROWS_FOR_VALIDATION {
            let (mut tr, mut va) = (Vec::new(), Vec::new());
            for i in 0..n {
                if row_hash(x.row(i), target[i]) % VALIDATION_FOLDS == 0 {
                    va.push(i);
                } else {
                    tr.push(i);
                }
            }
            if !va.is_empty() && tr.len() >= MIN_ROWS_FOR_VALIDATION / 2 {
                let pick = |idx: &[usize]| idx.iter().map(|&i| target[i]).collect::<Vec<f64>>();
                let x_va = x.select(Axis(0), &va);
                let (_, best) = Self::boost(
                    x.select(Axis(0), &tr).view(),
                    &pick(&tr),
                    loss,
                    params,
                    params.iterations,
                    Some((x_va.view(), &pick(&va))),
                );
                return Self::boost(x, target, loss, params, best, None).0;
            }
        }
        Self::boost(x, target, loss, params, params.iterations, None).0
    }

    /// Returns the ensemble and, when `validation` is given, the tree count
    /// with the lowest held-out loss.
    fn boost(
        x: ArrayView2<'_, f64>,
        target: &[f64],
        loss: Loss,
        params: &BoostParams,
        iterations: usize,
        validation: Option<(ArrayView2<'_, f64>, &[f64])>,
    ) -> (Self, usize) {
        let n = x.nrows();
        let binned = Binned::new(x);
        let base = loss.base(target);
        let mut current = vec![base; n];
        let mut grad = vec![0.0; n];
        let mut hess = vec![1.0; n];
        let mut trees = Vec::with_capacity(iterations);
        let mut val_scores = validation.map(|(xv, _)| vec![base; xv.nrows()]);
        let val_loss = |scores: &[f64], t: &[f64]| -> f64 {
            scores.iter().zip(t).map(|(s, t)| loss.value(*t, *s)).sum::<f64>()
        };
        let mut best = (validation.map_or(0.0, |(_, t)| val_loss(val_scores.as_deref().unwrap_or(&[]), t)), 0);
        for _ in 0..iterations {
            for i in 0..n {
                (grad[i], hess[i]) = loss.grad_hess(target[i], current[i]);
            }
            let rule = match loss {
                Loss::Pinball(q) => LeafRule::ResidualQuantile {
                    q,
                    target,
                    current: &current,
                },
                _ => LeafRule::Newton,
            };
            let Some((tree, assignments)) =
                fit_tree(&binned, &grad, &hess, params, &rule)
            else {
                break;
            };
            // an unsplit root leaves every later iteration identical
            if tree.nodes.len() == 1 {
                break;
            }
            for (value, rows) in assignments {
                for r in rows {
                    current[r as usize] += value;
                }
            }
            if let (Some((xv, tv)), Some(vs)) = (validation, val_scores.as_mut()) {
                for (s, row) in vs.iter_mut().zip(xv.rows()) {
                    *s += tree.predict(row.as_slice().expect("standard layout"));
                }
                trees.push(tree);
                let l = val_loss(vs, tv);
                if l < best.0 {
                    best = (l, trees.len());
                } else if trees.len() - best.1 >= PATIENCE {
                    break;
                }
            } else {
                trees.push(tree);
            }
        }
        let count = if validation.is_some() { best.1 } else { trees.len() };
        (Self { base, trees }, count)
    }

    pub(crate) fn predict(&self, x: &[f64]) -> f64 {
        self.base + self.trees.iter().map(|t| t.predict(x)).sum::<f64>()
    }

    /// Raw scores at `prefix ++ [g]` for every `g` in the ascending `grid`.
    pub(crate) fn predict_over_last(&self, prefix: &[f64], grid: &[f64]) -> Vec<f64> {
        let mut diff = vec![0.0; grid.len() + 1];
        for t in &self.trees {
            t.accumulate_over_last(prefix, grid, &mut diff);
        }
        let mut acc = self.base;
        diff[..grid.len()]
            .iter()
            .map(|d| {
                acc += d;
                acc
            })
            .collect()
    }

    #[cfg(test)]
    pub(crate) fn n_trees(&self) -> usize {
        self.trees.len()
    }
}

type Assignments = Vec<(f64, Vec<u32>)>;

/// Grows one tree and returns it together with `(leaf value, rows)` pairs.
/// Returns `None` when the gradients are identically zero, since no further
/// tree can change the fit.
fn fit_tree(
    binned: &Binned,
    grad: &[f64],
    hess: &[f64],
    params: &BoostParams,
    rule: &LeafRule<'_>,
) -> Option<(Tree, Assignments)> {
    if grad.iter().all(|g| *g == 0.0) {
        return None;
    }
    let mut grower = Grower {
        binned,
        grad,
        hess,
        max_depth: params.max_depth,
        min_leaf: params.min_leaf.max(1),
        nodes: Vec::new(),
        leaves: Vec::new(),
    };
    grower.grow((0..binned.n as u32).collect(), 0);
    let mut nodes = grower.nodes;
    let mut assignments = Vec::with_capacity(grower.leaves.len());
    for (id, rows) in grower.leaves {
        let raw = match rule {
            LeafRule::Newton => {
                let (g, h) = rows
                    .iter()
                    .fold((0.0, 0.0), |(g, h), &i| (g + grad[i as usize], h + hess[i as usize]));
                -g / (h + L2)
            }
            LeafRule::ResidualQuantile { q, target, current } => {
                let mut r: Vec<f64> = rows
                    .iter()
                    .map(|&i| target[i as usize] - current[i as usize])
                    .collect();
                r.sort_by(f64::total_cmp);
                crate::stats::sorted_quantile(&r, *q)
            }
        };
        let value = params.learning_rate * raw;
        nodes[id] = Node::Leaf(value);
        assignments.push((value, rows));
    }
    Some((Tree { nodes }, assignments))
}
