//! Greedy CART growth on variance reduction.
//!
//! Samples are addressed by *slot*; slot `s` refers to training row
//! `rows[s]`, so bootstrap resamples with repeated rows need no copying of
//! `X`. Every feature keeps its slots sorted by `(value, slot)` and each
//! split stably partitions those orders, so a node never re-sorts.

use ndarray::ArrayView2;
use serde::{Deserialize, Serialize};

use super::TreeConfig;
use crate::rng::Stream;
use crate::scalar::Scalar;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Scalar")]
pub enum Node<T> {
    Leaf { value: T, samples: usize },
    Split { feature: usize, threshold: T, left: usize, right: usize },
}

/// A fitted regression tree; node 0 is the root.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Scalar")]
pub struct Tree<T> {
    pub nodes: Vec<Node<T>>,
}

impl<T: Scalar> Tree<T> {
    /// Prediction for one row (`x <= threshold` goes left).
    pub fn predict_row(&self, row: impl Fn(usize) -> T) -> T {
        let mut at = 0;
        loop {
            match &self.nodes[at] {
                Node::Leaf { value, .. } => return *value,
                Node::Split { feature, threshold, left, right } => {
                    at = if row(*feature) <= *threshold { *left } else { *right };
                }
            }
        }
    }

    pub fn depth(&self) -> usize {
        fn walk<T>(nodes: &[Node<T>], at: usize) -> usize {
            match &nodes[at] {
                Node::Leaf { .. } => 0,
                Node::Split { left, right, .. } => 1 + walk(nodes, *left).max(walk(nodes, *right)),
            }
        }
        walk(&self.nodes, 0)
    }

    pub fn leaves(&self) -> impl Iterator<Item = (T, usize)> + '_ {
        self.nodes.iter().filter_map(|n| match n {
            Node::Leaf { value, samples } => Some((*value, *samples)),
            Node::Split { .. } => None,
        })
    }

    /// Nested JSON rendering for debugging.
    pub fn to_nested_json(&self) -> serde_json::Value {
        fn walk<T: Scalar>(nodes: &[Node<T>], at: usize) -> serde_json::Value {
            match &nodes[at] {
                Node::Leaf { value, samples } => serde_json::json!({
                    "leaf_mean": value.as_f64(),
                    "samples": samples,
                }),
                Node::Split { feature, threshold, left, right } => serde_json::json!({
                    "feature": feature,
                    "threshold": threshold.as_f64(),
                    "children": [walk(nodes, *left), walk(nodes, *right)],
                }),
            }
        }
        walk(&self.nodes, 0)
    }
}

/// Per-feature slot orders sorted by `(x[rows[slot], f], slot)`.
#[derive(Debug, Clone)]
pub(crate) struct SortedSlots {
    orders: Vec<Vec<u32>>,
}

impl SortedSlots {
    pub(crate) fn new<T: Scalar>(x: ArrayView2<'_, T>, rows: &[usize]) -> Self {
        let orders = (0..x.ncols())
            .map(|f| {
                let mut slots: Vec<u32> = (0..rows.len() as u32).collect();
                slots.sort_unstable_by(|&a, &b| {
                    let va = x[[rows[a as usize], f]];
                    let vb = x[[rows[b as usize], f]];
                    va.partial_cmp(&vb).expect("finite features").then(a.cmp(&b))
                });
                slots
            })
            .collect();
        SortedSlots { orders }
    }
}

/// Random feature subsampling at each split.
pub(crate) struct FeatureSampler<'s> {
    pub stream: &'s mut Stream,
    pub mtry: usize,
}

pub(crate) struct Grower<'a, T> {
    x: ArrayView2<'a, T>,
    rows: &'a [usize],
    targets: &'a [T],
    config: &'a TreeConfig,
    sampler: Option<FeatureSampler<'a>>,
    orders: Vec<Vec<u32>>,
    scratch: Vec<u32>,
    goes_left: Vec<bool>,
    nodes: Vec<Node<T>>,
}

struct BestSplit<T> {
    feature: usize,
    threshold: T,
    gain: T,
    left_count: usize,
}

impl<'a, T: Scalar> Grower<'a, T> {
    /// `targets[slot]` is the response for slot `slot`.
    pub(crate) fn new(
        x: ArrayView2<'a, T>,
        rows: &'a [usize],
        targets: &'a [T],
        config: &'a TreeConfig,
        sorted: SortedSlots,
        sampler: Option<FeatureSampler<'a>>,
    ) -> Self {
        let n = rows.len();
        Grower {
            x,
            rows,
            targets,
            config,
            sampler,
            orders: sorted.orders,
            scratch: vec![0; n],
            goes_left: vec![false; n],
            nodes: Vec::new(),
        }
    }

    pub(crate) fn grow(mut self) -> Tree<T> {
        let n = self.rows.len();
        self.build(0, n, 0);
        Tree { nodes: self.nodes }
    }

    fn value(&self, slot: u32, feature: usize) -> T {
        self.x[[self.rows[slot as usize], feature]]
    }

    /// Slots of the current node, in the order of feature 0 (or in slot
    /// order when there are no features).
    fn node_targets(&self, start: usize, end: usize) -> impl Iterator<Item = T> + use<'_, 'a, T> {
        let len = end - start;
        let via_order = !self.orders.is_empty();
        (0..len).map(move |i| {
            let slot = if via_order { self.orders[0][start + i] as usize } else { start + i };
            self.targets[slot]
        })
    }

    fn build(&mut self, start: usize, end: usize, depth: usize) -> usize {
        let n = end - start;
        let n_t = T::from_usize_lossy(n);
        let (lo, hi) = self
            .node_targets(start, end)
            .fold((T::infinity(), T::neg_infinity()), |(lo, hi), v| (lo.min(v), hi.max(v)));
        // Clamped so rounding never pushes a leaf outside its targets' range.
        let mean = (self.node_targets(start, end).sum::<T>() / n_t).max(lo).min(hi);

        let at = self.nodes.len();
        self.nodes.push(Node::Leaf { value: mean, samples: n });

        let depth_ok = self.config.max_depth.is_none_or(|d| depth < d);
        if !depth_ok
            || n < self.config.min_samples_split
            || n < 2 * self.config.min_samples_leaf
            || lo == hi
            || self.orders.is_empty()
        {
            return at;
        }

        let best = match self.find_split(start, end, mean) {
            Some(b) => b,
            None => return at,
        };

        self.partition(start, end, &best);
        let mid = start + best.left_count;
        let left = self.build(start, mid, depth + 1);
        let right = self.build(mid, end, depth + 1);
        self.nodes[at] = Node::Split { feature: best.feature, threshold: best.threshold, left, right };
        at
    }

    fn candidate_features(&mut self) -> Vec<usize> {
        let p = self.orders.len();
        match &mut self.sampler {
            Some(s) if s.mtry < p => {
                let mut f = s.stream.sample_without_replacement(p, s.mtry);
                f.sort_unstable();
                f
            }
            _ => (0..p).collect(),
        }
    }

    fn find_split(&mut self, start: usize, end: usize, mean: T) -> Option<BestSplit<T>> {
        let n = end - start;
        let min_leaf = self.config.min_samples_leaf;
        let total: T = self.node_targets(start, end).map(|v| v - mean).sum();
        let sse: T = self.node_targets(start, end).map(|v| (v - mean) * (v - mean)).sum();
        let n_t = T::from_usize_lossy(n);
        let parent = total * total / n_t;
        let min_gain = sse * T::epsilon() * T::lit(16.0);

        let mut best: Option<BestSplit<T>> = None;
        for feature in self.candidate_features() {
            let order = &self.orders[feature];
            let mut left_sum = T::zero();
            for i in 0..(n - 1) {
                let slot = order[start + i];
                left_sum += self.targets[slot as usize] - mean;
                let left_n = i + 1;
                let right_n = n - left_n;
                if left_n < min_leaf {
                    continue;
                }
                if right_n < min_leaf {
                    break;
                }
                let a = self.value(slot, feature);
                let b = self.value(order[start + i + 1], feature);
                if !(a < b) {
                    continue;
                }
                let right_sum = total - left_sum;
                let gain = left_sum * left_sum / T::from_usize_lossy(left_n)
                    + right_sum * right_sum / T::from_usize_lossy(right_n)
                    - parent;
                let better = match &best {
                    None => gain > min_gain,
                    Some(cur) => gain > cur.gain,
                };
                if better {
                    let mut threshold = (a + b) * T::lit(0.5);
                    if !(threshold < b) {
                        threshold = a;
                    }
                    best = Some(BestSplit { feature, threshold, gain, left_count: left_n });
                }
            }
        }
        best
    }

    fn partition(&mut self, start: usize, end: usize, split: &BestSplit<T>) {
        let Grower { x, rows, orders, scratch, goes_left, .. } = self;
        for &slot in &orders[split.feature][start..end] {
            goes_left[slot as usize] = x[[rows[slot as usize], split.feature]] <= split.threshold;
        }
        for order in orders.iter_mut() {
            let seg = &mut order[start..end];
            let mut l = 0;
            let mut r = 0;
            let right_buf = &mut scratch[..seg.len()];
            for i in 0..seg.len() {
                let slot = seg[i];
                if goes_left[slot as usize] {
                    seg[l] = slot;
                    l += 1;
                } else {
                    right_buf[r] = slot;
                    r += 1;
                }
            }
            seg[l..].copy_from_slice(&right_buf[..r]);
            debug_assert_eq!(l, split.left_count);
        }
    }
}
