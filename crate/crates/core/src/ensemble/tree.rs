use rand::Rng;
use serde::{Deserialize, Serialize};

/// A decision tree node. Serialized as nested arrays: a leaf is its value,
/// a split is `[feature, threshold, gain, left, right]`. Rows with
/// `x[feature] <= threshold` go left. `gain` is the weighted Gini decrease
/// the split achieved in training.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum TreeNode {
    Leaf(f64),
    Split(usize, f64, f64, Box<TreeNode>, Box<TreeNode>),
}

impl TreeNode {
    pub fn predict(&self, x: &[f64]) -> f64 {
        let mut node = self;
        loop {
            match node {
                TreeNode::Leaf(v) => return *v,
                TreeNode::Split(f, t, _, l, r) => node = if x[*f] <= *t { l } else { r },
            }
        }
    }

    pub fn depth(&self) -> usize {
        match self {
            TreeNode::Leaf(_) => 0,
            TreeNode::Split(_, _, _, l, r) => 1 + l.depth().max(r.depth()),
        }
    }

    /// Leaves count one parameter, splits two (feature and threshold).
    pub fn n_params(&self) -> usize {
        match self {
            TreeNode::Leaf(_) => 1,
            TreeNode::Split(_, _, _, l, r) => 2 + l.n_params() + r.n_params(),
        }
    }

    /// Call `f(feature, gain)` for every split.
    pub fn visit_splits(&self, f: &mut impl FnMut(usize, f64)) {
        if let TreeNode::Split(feat, _, gain, l, r) = self {
            f(*feat, *gain);
            l.visit_splits(f);
            r.visit_splits(f);
        }
    }

    pub(crate) fn check(&self, n_features: usize) -> Result<(), String> {
        match self {
            TreeNode::Leaf(v) if (0.0..=1.0).contains(v) => Ok(()),
            TreeNode::Leaf(v) => Err(format!("leaf value {v} outside [0, 1]")),
            TreeNode::Split(f, t, g, l, r) => {
                if *f >= n_features {
                    return Err(format!("feature index {f} out of range"));
                }
                if !t.is_finite() || !g.is_finite() {
                    return Err("non-finite split".into());
                }
                l.check(n_features)?;
                r.check(n_features)
            }
        }
    }
}

/// Training view of one head: column-major features, labels and weights of
/// the positive-weight examples, plus every column's row order by value.
pub(crate) struct Columns {
    pub cols: Vec<Vec<f64>>,
    pub y: Vec<bool>,
    pub w: Vec<f64>,
    pub sorted: Vec<Vec<u32>>,
}

impl Columns {
    pub fn new(cols: Vec<Vec<f64>>, y: Vec<bool>, w: Vec<f64>) -> Self {
        let sorted = cols
            .iter()
            .map(|c| {
                let mut idx: Vec<u32> = (0..c.len() as u32).collect();
                idx.sort_by(|&a, &b| c[a as usize].total_cmp(&c[b as usize]).then(a.cmp(&b)));
                idx
            })
            .collect();
        Columns { cols, y, w, sorted }
    }

    pub fn n_rows(&self) -> usize {
        self.y.len()
    }
}

pub(crate) struct TreeParams {
    pub max_depth: usize,
    pub min_samples_leaf: u32,
    pub features_per_split: usize,
}

/// Weighted Gini impurity times node weight: `W * 2p(1-p)`.
fn impurity(w: f64, w_pos: f64) -> f64 {
    if w <= 0.0 {
        0.0
    } else {
        2.0 * w_pos * (w - w_pos) / w
    }
}

struct Builder<'a, R> {
    data: &'a Columns,
    params: &'a TreeParams,
    rng: R,
    /// Bootstrap multiplicity per row.
    count: Vec<u32>,
    /// Per feature, the sampled rows in value order; a node owns the same
    /// index range in every feature's array.
    order: Vec<Vec<u32>>,
    left: Vec<bool>,
    scratch: Vec<u32>,
}

struct Best {
    feature: usize,
    threshold: f64,
    gain: f64,
    n_left: usize,
}

/// Grow one tree on a uniform bootstrap of `data`'s rows.
pub(crate) fn grow<R: Rng>(data: &Columns, params: &TreeParams, mut rng: R) -> TreeNode {
    let n = data.n_rows();
    let mut count = vec![0u32; n];
    for _ in 0..n {
        count[rng.random_range(0..n)] += 1;
    }
    let order: Vec<Vec<u32>> = data
        .sorted
        .iter()
        .map(|s| s.iter().copied().filter(|&r| count[r as usize] > 0).collect())
        .collect();
    let rows = order.first().map_or(0, |o| o.len());
    let mut b = Builder {
        data,
        params,
        rng,
        count,
        order,
        left: vec![false; n],
        scratch: Vec::with_capacity(rows),
    };
    b.node(0, rows, 0)
}

impl<R: Rng> Builder<'_, R> {
    fn node(&mut self, lo: usize, hi: usize, depth: usize) -> TreeNode {
        let (mut w, mut w_pos, mut cnt) = (0.0, 0.0, 0u32);
        for &r in &self.order[0][lo..hi] {
            let r = r as usize;
            let rw = self.data.w[r] * self.count[r] as f64;
            w += rw;
            if self.data.y[r] {
                w_pos += rw;
            }
            cnt += self.count[r];
        }
        let value = if w > 0.0 { (w_pos / w).clamp(0.0, 1.0) } else { 0.0 };
        if depth >= self.params.max_depth
            || cnt < 2 * self.params.min_samples_leaf
            || w_pos <= 0.0
            || w_pos >= w
        {
            return TreeNode::Leaf(value);
        }

        let d = self.data.cols.len();
        let k = self.params.features_per_split.clamp(1, d);
        // Scan a sorted batch of k random features; if none of them admits
        // a split, keep drawing single features until one does.
        let perm = rand::seq::index::sample(&mut self.rng, d, d).into_vec();
        let mut batch = perm[..k].to_vec();
        batch.sort_unstable();

        let parent = impurity(w, w_pos);
        let mut best: Option<Best> = None;
        for f in batch {
            self.scan(f, lo, hi, w, w_pos, parent, &mut best);
        }
        for &f in &perm[k..] {
            if best.is_some() {
                break;
            }
            self.scan(f, lo, hi, w, w_pos, parent, &mut best);
        }
        let best = match best {
            Some(b) if b.gain > 1e-12 * w => b,
            _ => return TreeNode::Leaf(value),
        };

        let mid = lo + best.n_left;
        for &r in &self.order[best.feature][lo..hi] {
            self.left[r as usize] = false;
        }
        for &r in &self.order[best.feature][lo..mid] {
            self.left[r as usize] = true;
        }
        for f in 0..d {
            if f == best.feature {
                continue;
            }
            self.scratch.clear();
            let slice = &mut self.order[f][lo..hi];
            let mut write = 0;
            for i in 0..slice.len() {
                let r = slice[i];
                if self.left[r as usize] {
                    slice[write] = r;
                    write += 1;
                } else {
                    self.scratch.push(r);
                }
            }
            slice[write..].copy_from_slice(&self.scratch);
        }

        let l = self.node(lo, mid, depth + 1);
        let r = self.node(mid, hi, depth + 1);
        TreeNode::Split(best.feature, best.threshold, best.gain, Box::new(l), Box::new(r))
    }

    /// Scan feature `f`'s thresholds in ascending order; a candidate only
    /// replaces `best` on a strictly larger gain, so ties keep the lower
    /// feature index and then the lower threshold.
    #[allow(clippy::too_many_arguments)]
    fn scan(&self, f: usize, lo: usize, hi: usize, w: f64, w_pos: f64, parent: f64, best: &mut Option<Best>) {
        let col = &self.data.cols[f];
        let rows = &self.order[f][lo..hi];
        let min_leaf = self.params.min_samples_leaf;
        let total_cnt: u32 = rows.iter().map(|&r| self.count[r as usize]).sum();
        let (mut wl, mut wl_pos, mut cl) = (0.0, 0.0, 0u32);
        for i in 0..rows.len() - 1 {
            let r = rows[i] as usize;
            let rw = self.data.w[r] * self.count[r] as f64;
            wl += rw;
            if self.data.y[r] {
                wl_pos += rw;
            }
            cl += self.count[r];
            let (a, b) = (col[r], col[rows[i + 1] as usize]);
            if a >= b || cl < min_leaf || total_cnt - cl < min_leaf {
                continue;
            }
            let gain = parent - impurity(wl, wl_pos) - impurity(w - wl, w_pos - wl_pos);
            if best.as_ref().is_none_or(|bst| gain > bst.gain) {
                let mut threshold = a + (b - a) / 2.0;
                if threshold >= b {
                    threshold = a;
                }
                *best = Some(Best {
                    feature: f,
                    threshold,
                    gain,
                    n_left: i + 1,
                });
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng;

    /// Brute-force weighted Gini decrease of splitting at `t` on column `f`.
    fn brute_gain(data: &Columns, f: usize, t: f64) -> f64 {
        let mut s = [[0.0; 2]; 3];
        for r in 0..data.n_rows() {
            let side = if data.cols[f][r] <= t { 1 } else { 2 };
            for slot in [0, side] {
                s[slot][0] += data.w[r];
                if data.y[r] {
                    s[slot][1] += data.w[r];
                }
            }
        }
        let g = |w: f64, p: f64| if w > 0.0 { w * 2.0 * (p / w) * (1.0 - p / w) } else { 0.0 };
        g(s[0][0], s[0][1]) - g(s[1][0], s[1][1]) - g(s[2][0], s[2][1])
    }

    fn params(depth: usize) -> TreeParams {
        TreeParams {
            max_depth: depth,
            min_samples_leaf: 1,
            features_per_split: 2,
        }
    }

    #[test]
    fn root_split_is_the_brute_force_optimum() {
        let n = 200;
        let mut r = rng::stream(1, &["tree-test"], 0);
        let a: Vec<f64> = (0..n).map(|_| (r.random::<f64>() * 50.0).round() / 50.0).collect();
        let b: Vec<f64> = (0..n).map(|_| r.random::<f64>()).collect();
        let y: Vec<bool> = a.iter().zip(&b).map(|(x, z)| x + 0.3 * z > 0.6).collect();
        let w: Vec<f64> = (0..n).map(|i| 0.5 + (i % 3) as f64).collect();
        let data = Columns::new(vec![a, b], y, w);

        // With every row sampled once the bootstrap is the identity, so feed
        // a builder directly.
        let mut bld = Builder {
            data: &data,
            params: &params(1),
            rng: rng::stream(0, &[], 0),
            count: vec![1; n],
            order: data.sorted.clone(),
            left: vec![false; n],
            scratch: Vec::new(),
        };
        let tree = bld.node(0, n, 0);
        let TreeNode::Split(f, t, g, _, _) = tree else {
            panic!("expected a split")
        };
        assert!((brute_gain(&data, f, t) - g).abs() < 1e-9);
        for f2 in 0..2 {
            let mut vals = data.cols[f2].clone();
            vals.sort_by(f64::total_cmp);
            vals.dedup();
            for pair in vals.windows(2) {
                let cand = brute_gain(&data, f2, (pair[0] + pair[1]) / 2.0);
                assert!(cand <= g + 1e-9, "feature {f2} beats chosen split");
            }
        }
        assert!(g >= 0.0);
    }

    #[test]
    fn nested_array_serialization() {
        let t = TreeNode::Split(
            1,
            0.5,
            2.0,
            Box::new(TreeNode::Leaf(0.0)),
            Box::new(TreeNode::Leaf(1.0)),
        );
        let json = serde_json::to_string(&t).unwrap();
        assert_eq!(json, "[1,0.5,2.0,0.0,1.0]");
        let back: TreeNode = serde_json::from_str(&json).unwrap();
        assert_eq!(back, t);
        assert_eq!(t.predict(&[0.0, 0.5]), 0.0);
        assert_eq!(t.predict(&[0.0, 0.6]), 1.0);
        assert_eq!(t.n_params(), 4);
        assert!(t.check(1).is_err());
        assert!(t.check(2).is_ok());
    }

    #[test]
    fn depth_is_bounded() {
        let n = 300;
        let x: Vec<f64> = (0..n).map(|i| i as f64 / n as f64).collect();
        let y: Vec<bool> = (0..n).map(|i| (i / 7) % 2 == 0).collect();
        let data = Columns::new(vec![x.clone(), x], y, vec![1.0; n]);
        for depth in 1..6 {
            let tree = grow(&data, &params(depth), rng::stream(4, &["d"], depth as u64));
            assert!(tree.depth() <= depth);
        }
    }
}
