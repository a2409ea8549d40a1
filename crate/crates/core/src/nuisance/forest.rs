//! Random forests whose splits route missing values explicitly (MIA).
//!
//! Every split on feature `j` at threshold `t` is one of
//! 1. `{x ≤ t or missing}` left, `{x > t}` right;
//! 2. `{x ≤ t}` left, `{x > t or missing}` right;
//! 3. `{missing}` left, `{observed}` right.
//!
//! Trees grow on subsamples drawn without replacement with presorted
//! per-feature index lists that are partitioned stably at each split.

use rand::seq::index::sample as sample_indices;
use serde::{Deserialize, Serialize};

use crate::data::MaskedMatrix;
use crate::error::{Error, Result};
use crate::par;
use crate::rng::{derive, stream};

pub const PROBABILITY_CLIP: f64 = 0.01;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ForestTask {
    Regression,
    Probability,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ForestParams {
    pub num_trees: usize,
    pub min_leaf: usize,
    /// Features tried per node; `None` means `⌈√p⌉`.
    pub mtry: Option<usize>,
    /// Fraction of rows drawn without replacement for each tree.
    pub subsample: f64,
}

impl Default for ForestParams {
    fn default() -> Self {
        Self {
            num_trees: 500,
            min_leaf: 5,
            mtry: None,
            subsample: 0.5,
        }
    }
}

impl ForestParams {
    pub fn resolved_mtry(&self, p: usize) -> usize {
        self.mtry
            .unwrap_or_else(|| (p as f64).sqrt().ceil() as usize)
            .clamp(1, p.max(1))
    }

    pub fn validate(&self) -> Result<()> {
        if self.num_trees == 0 || self.min_leaf == 0 {
            return Err(Error::Config("forests need at least one tree and min_leaf ≥ 1".into()));
        }
        if !(self.subsample > 0.0 && self.subsample <= 1.0) {
            return Err(Error::Config(format!(
                "subsample fraction {} is outside (0, 1]",
                self.subsample
            )));
        }
        if self.mtry == Some(0) {
            return Err(Error::Config("mtry must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum SplitType {
    MissingWithLow = 1,
    MissingWithHigh = 2,
    MissingAlone = 3,
}

impl SplitType {
    pub fn index(self) -> u8 {
        self as u8
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct MiaSplit {
    pub split_type: SplitType,
    /// `None` for [`SplitType::MissingAlone`].
    pub threshold: Option<f64>,
    /// Decrease in the sum of squared deviations; never negative.
    pub gain: f64,
}

/// Routes one value through a split; `true` means left.
#[inline]
pub fn goes_left(split_type: SplitType, threshold: f64, value: Option<f64>) -> bool {
    match (split_type, value) {
        (SplitType::MissingAlone, v) => v.is_none(),
        (SplitType::MissingWithLow, None) => true,
        (SplitType::MissingWithHigh, None) => false,
        (_, Some(v)) => v <= threshold,
    }
}

#[inline]
fn split_score(n_l: f64, s_l: f64, n_r: f64, s_r: f64) -> f64 {
    s_l * s_l / n_l + s_r * s_r / n_r
}

/// Midpoint strictly below `b` for `a < b`.
#[inline]
fn midpoint(a: f64, b: f64) -> f64 {
    let m = a + (b - a) / 2.0;
    if m < b {
        m
    } else {
        a
    }
}

/// Tolerance for replacing the incumbent split.
#[inline]
fn tie_tolerance(parent_sse: f64) -> f64 {
    1e-12 * (1.0 + parent_sse.abs())
}

#[derive(Debug, Clone, Copy)]
struct Candidate {
    feature: usize,
    split: MiaSplit,
}

/// Scans one feature at one node. `obs` are `(x, y)` sorted by `x`.
#[allow(clippy::too_many_arguments)]
fn scan_feature(
    feature: usize,
    obs: impl Iterator<Item = (f64, f64)> + Clone,
    n_obs: usize,
    n_miss: usize,
    sum_miss: f64,
    total_sum: f64,
    parent_sse: f64,
    min_leaf: usize,
    best: &mut Option<Candidate>,
) {
    let n = (n_obs + n_miss) as f64;
    let base = total_sum * total_sum / n;
    let tol = tie_tolerance(parent_sse);
    let mut consider = |split_type: SplitType, threshold: Option<f64>, score: f64| {
        let gain = (score - base).max(0.0);
        let better = match best {
            None => true,
            Some(b) => gain > b.split.gain + tol,
        };
        if better {
            *best = Some(Candidate {
                feature,
                split: MiaSplit {
                    split_type,
                    threshold,
                    gain,
                },
            });
        }
    };
    let sum_obs = total_sum - sum_miss;
    for (split_type, miss_left) in [(SplitType::MissingWithLow, true), (SplitType::MissingWithHigh, false)] {
        let mut it = obs.clone().peekable();
        let (mut k, mut s) = (0usize, 0.0);
        while let Some((x, y)) = it.next() {
            k += 1;
            s += y;
            let Some(&(x_next, _)) = it.peek() else { break };
            if x_next <= x {
                continue;
            }
            let (n_l, s_l) = if miss_left { (k + n_miss, s + sum_miss) } else { (k, s) };
            let n_r = n_obs + n_miss - n_l;
            if n_l < min_leaf || n_r < min_leaf {
                continue;
            }
            let score = split_score(n_l as f64, s_l, n_r as f64, total_sum - s_l);
            consider(split_type, Some(midpoint(x, x_next)), score);
        }
    }
    if n_miss >= min_leaf && n_obs >= min_leaf {
        let score = split_score(n_miss as f64, sum_miss, n_obs as f64, sum_obs);
        consider(SplitType::MissingAlone, None, score);
    }
}

/// Best MIA split of a single column, or `None` when no split leaves at
/// least `min_leaf` samples on both sides.
///
/// Ties go to the lowest split type, then the lowest threshold.
pub fn best_mia_split(xs: &[Option<f64>], ys: &[f64], min_leaf: usize) -> Option<MiaSplit> {
    assert_eq!(xs.len(), ys.len(), "one response per value");
    let min_leaf = min_leaf.max(1);
    let mut obs: Vec<(f64, f64)> = xs.iter().zip(ys).filter_map(|(x, &y)| x.map(|v| (v, y))).collect();
    obs.sort_by(|a, b| a.0.total_cmp(&b.0));
    let sum_miss: f64 = xs.iter().zip(ys).filter(|(x, _)| x.is_none()).map(|(_, y)| y).sum();
    let n_miss = xs.len() - obs.len();
    let total: f64 = ys.iter().sum();
    let n = ys.len() as f64;
    if ys.is_empty() {
        return None;
    }
    let parent_sse = ys.iter().map(|y| y * y).sum::<f64>() - total * total / n;
    let mut best = None;
    scan_feature(
        0,
        obs.iter().copied(),
        obs.len(),
        n_miss,
        sum_miss,
        total,
        parent_sse,
        min_leaf,
        &mut best,
    );
    best.map(|c| c.split)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
enum Node {
    Leaf(f64),
    Split {
        feature: usize,
        split_type: SplitType,
        threshold: f64,
        left: u32,
        right: u32,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MiaTree {
    nodes: Vec<Node>,
}

impl MiaTree {
    pub fn predict(&self, row: &[f64], mask: &[bool]) -> f64 {
        let mut at = 0usize;
        loop {
            match &self.nodes[at] {
                Node::Leaf(v) => return *v,
                Node::Split {
                    feature,
                    split_type,
                    threshold,
                    left,
                    right,
                } => {
                    let value = if mask[*feature] { Some(row[*feature]) } else { None };
                    at = if goes_left(*split_type, *threshold, value) {
                        *left as usize
                    } else {
                        *right as usize
                    };
                }
            }
        }
    }

    pub fn split_types(&self) -> impl Iterator<Item = SplitType> + '_ {
        self.nodes.iter().filter_map(|n| match n {
            Node::Split { split_type, .. } => Some(*split_type),
            Node::Leaf(_) => None,
        })
    }

    pub fn leaf_values(&self) -> impl Iterator<Item = f64> + '_ {
        self.nodes.iter().filter_map(|n| match n {
            Node::Leaf(v) => Some(*v),
            Node::Split { .. } => None,
        })
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct MiaForest {
    pub trees: Vec<MiaTree>,
    pub params: ForestParams,
    pub task: ForestTask,
    pub dim: usize,
}

impl MiaForest {
    fn finish(&self, raw: f64) -> f64 {
        match self.task {
            ForestTask::Regression => raw,
            ForestTask::Probability => raw.clamp(PROBABILITY_CLIP, 1.0 - PROBABILITY_CLIP),
        }
    }

    pub fn predict_rows(&self, x: &MaskedMatrix) -> Vec<f64> {
        par::map_indexed(x.nrows(), |i| forest_predict(self, x.row_raw(i), x.row_mask(i)))
    }
}

/// Mean of per-tree leaf means, clipped for probability forests.
pub fn forest_predict(f: &MiaForest, row: &[f64], mask: &[bool]) -> f64 {
    let s: f64 = f.trees.iter().map(|t| t.predict(row, mask)).sum();
    f.finish(s / f.trees.len() as f64)
}

/// Node bookkeeping: ranges into the per-feature observed and missing lists.
#[derive(Clone)]
struct NodeRanges {
    obs: Vec<(usize, usize)>,
    miss: Vec<(usize, usize)>,
    slot: usize,
}

struct TreeBuilder<'a> {
    p: usize,
    ns: usize,
    /// Column-major local copy: `xval[j * ns + id]`.
    xval: Vec<f64>,
    ys: Vec<f64>,
    obs: Vec<Vec<u32>>,
    miss: Vec<Vec<u32>>,
    params: &'a ForestParams,
    mtry: usize,
}

impl<'a> TreeBuilder<'a> {
    fn new(x: &MaskedMatrix, y: &[f64], rows: &[usize], params: &'a ForestParams) -> Self {
        let p = x.ncols();
        let ns = rows.len();
        let mut xval = vec![0.0; p * ns];
        let mut obs = vec![Vec::with_capacity(ns); p];
        let mut miss = vec![Vec::new(); p];
        for (id, &r) in rows.iter().enumerate() {
            let raw = x.row_raw(r);
            let mask = x.row_mask(r);
            for j in 0..p {
                if mask[j] {
                    xval[j * ns + id] = raw[j];
                    obs[j].push(id as u32);
                } else {
                    miss[j].push(id as u32);
                }
            }
        }
        for j in 0..p {
            let col = &xval[j * ns..(j + 1) * ns];
            obs[j].sort_by(|&a, &b| col[a as usize].total_cmp(&col[b as usize]).then(a.cmp(&b)));
        }
        let ys = rows.iter().map(|&r| y[r]).collect();
        Self {
            p,
            ns,
            xval,
            ys,
            obs,
            miss,
            params,
            mtry: params.resolved_mtry(p),
        }
    }

    fn node_members(&self, r: &NodeRanges) -> impl Iterator<Item = u32> + '_ {
        let (a, b) = r.obs[0];
        let (c, d) = r.miss[0];
        self.obs[0][a..b].iter().chain(self.miss[0][c..d].iter()).copied()
    }

    fn build(mut self, rng: &mut crate::rng::StreamRng) -> MiaTree {
        let root = NodeRanges {
            obs: self.obs.iter().map(|v| (0, v.len())).collect(),
            miss: self.miss.iter().map(|v| (0, v.len())).collect(),
            slot: 0,
        };
        let mut nodes = vec![Node::Leaf(0.0)];
        let mut stack = vec![root];
        let mut go_left = vec![false; self.ns];
        let mut scratch: Vec<u32> = Vec::with_capacity(self.ns);
        while let Some(node) = stack.pop() {
            let (mut n, mut sum, mut sumsq) = (0usize, 0.0, 0.0);
            for id in self.node_members(&node) {
                let y = self.ys[id as usize];
                n += 1;
                sum += y;
                sumsq += y * y;
            }
            let mean = sum / n as f64;
            let parent_sse = (sumsq - sum * sum / n as f64).max(0.0);
            nodes[node.slot] = Node::Leaf(mean);
            let min_leaf = self.params.min_leaf;
            if n < 2 * min_leaf || parent_sse <= tie_tolerance(sumsq) {
                continue;
            }
            let mut features: Vec<usize> = sample_indices(rng, self.p, self.mtry).into_vec();
            features.sort_unstable();
            let mut best: Option<Candidate> = None;
            for &j in &features {
                let (a, b) = node.obs[j];
                let (c, d) = node.miss[j];
                let col = &self.xval[j * self.ns..(j + 1) * self.ns];
                let ys = &self.ys;
                let sum_miss: f64 = self.miss[j][c..d].iter().map(|&id| ys[id as usize]).sum();
                let obs_iter = self.obs[j][a..b].iter().map(|&id| (col[id as usize], ys[id as usize]));
                scan_feature(
                    j,
                    obs_iter,
                    b - a,
                    d - c,
                    sum_miss,
                    sum,
                    parent_sse,
                    min_leaf,
                    &mut best,
                );
            }
            let Some(cand) = best else { continue };
            if cand.split.gain <= tie_tolerance(parent_sse) {
                continue;
            }
            let j = cand.feature;
            let threshold = cand.split.threshold.unwrap_or(f64::NAN);
            {
                let col = &self.xval[j * self.ns..(j + 1) * self.ns];
                let (a, b) = node.obs[j];
                for &id in &self.obs[j][a..b] {
                    go_left[id as usize] = goes_left(cand.split.split_type, threshold, Some(col[id as usize]));
                }
                let (c, d) = node.miss[j];
                for &id in &self.miss[j][c..d] {
                    go_left[id as usize] = goes_left(cand.split.split_type, threshold, None);
                }
            }
            let mut left = NodeRanges {
                obs: Vec::with_capacity(self.p),
                miss: Vec::with_capacity(self.p),
                slot: nodes.len(),
            };
            let mut right = NodeRanges {
                obs: Vec::with_capacity(self.p),
                miss: Vec::with_capacity(self.p),
                slot: nodes.len() + 1,
            };
            for f in 0..self.p {
                let (a, b) = node.obs[f];
                let k = stable_partition(&mut self.obs[f][a..b], &go_left, &mut scratch);
                left.obs.push((a, a + k));
                right.obs.push((a + k, b));
                let (c, d) = node.miss[f];
                let k = stable_partition(&mut self.miss[f][c..d], &go_left, &mut scratch);
                left.miss.push((c, c + k));
                right.miss.push((c + k, d));
            }
            nodes[node.slot] = Node::Split {
                feature: j,
                split_type: cand.split.split_type,
                threshold,
                left: left.slot as u32,
                right: right.slot as u32,
            };
            nodes.push(Node::Leaf(0.0));
            nodes.push(Node::Leaf(0.0));
            stack.push(right);
            stack.push(left);
        }
        MiaTree { nodes }
    }
}

/// Moves `go_left` ids to the front preserving order; returns their count.
fn stable_partition(ids: &mut [u32], go_left: &[bool], scratch: &mut Vec<u32>) -> usize {
    scratch.clear();
    let mut k = 0;
    for i in 0..ids.len() {
        let id = ids[i];
        if go_left[id as usize] {
            ids[k] = id;
            k += 1;
        } else {
            scratch.push(id);
        }
    }
    ids[k..].copy_from_slice(scratch);
    k
}

fn validate_inputs(x: &MaskedMatrix, y: &[f64], params: &ForestParams, task: ForestTask) -> Result<()> {
    params.validate()?;
    if y.len() != x.nrows() {
        return Err(Error::Contract("one response per covariate row is required".into()));
    }
    if x.nrows() < 2 * params.min_leaf {
        return Err(Error::DegenerateSample(format!(
            "{} rows cannot fill two leaves of size {}",
            x.nrows(),
            params.min_leaf
        )));
    }
    if y.iter().any(|v| !v.is_finite()) {
        return Err(Error::Contract("forest responses must be finite".into()));
    }
    if task == ForestTask::Probability && y.iter().any(|&v| !(0.0..=1.0).contains(&v)) {
        return Err(Error::Contract("probability forests need responses in [0, 1]".into()));
    }
    Ok(())
}

fn grow(x: &MaskedMatrix, y: &[f64], params: &ForestParams, seed: u64) -> Vec<(MiaTree, Vec<usize>)> {
    let n = x.nrows();
    let size = ((params.subsample * n as f64).ceil() as usize).clamp(1, n);
    par::map_indexed(params.num_trees, |t| {
        let mut rng = stream(derive(seed, t as u64));
        let mut rows = sample_indices(&mut rng, n, size).into_vec();
        rows.sort_unstable();
        let tree = TreeBuilder::new(x, y, &rows, params).build(&mut rng);
        (tree, rows)
    })
}

pub fn fit_mia_forest(
    x: &MaskedMatrix,
    y: &[f64],
    params: &ForestParams,
    task: ForestTask,
    seed: u64,
) -> Result<MiaForest> {
    validate_inputs(x, y, params, task)?;
    let trees = grow(x, y, params, seed).into_iter().map(|(t, _)| t).collect();
    Ok(MiaForest {
        trees,
        params: params.clone(),
        task,
        dim: x.ncols(),
    })
}

/// Fits a forest and returns out-of-bag predictions for its training rows.
///
/// A row that is in bag for every tree falls back to the full-forest prediction.
pub fn fit_mia_forest_oob(
    x: &MaskedMatrix,
    y: &[f64],
    params: &ForestParams,
    task: ForestTask,
    seed: u64,
) -> Result<(MiaForest, Vec<f64>)> {
    validate_inputs(x, y, params, task)?;
    let grown = grow(x, y, params, seed);
    let n = x.nrows();
    let mut in_bag = vec![false; n * grown.len()];
    for (t, (_, rows)) in grown.iter().enumerate() {
        for &r in rows {
            in_bag[t * n + r] = true;
        }
    }
    let forest = MiaForest {
        trees: grown.into_iter().map(|(t, _)| t).collect(),
        params: params.clone(),
        task,
        dim: x.ncols(),
    };
    let oob = par::map_indexed(n, |i| {
        let (row, mask) = (x.row_raw(i), x.row_mask(i));
        let (mut s, mut k) = (0.0, 0usize);
        for (t, tree) in forest.trees.iter().enumerate() {
            if !in_bag[t * n + i] {
                s += tree.predict(row, mask);
                k += 1;
            }
        }
        if k == 0 {
            forest_predict(&forest, row, mask)
        } else {
            forest.finish(s / k as f64)
        }
    });
    Ok((forest, oob))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    #[test]
    fn missing_block_is_separated_by_type_three() {
        let xs = [Some(1.0), Some(2.0), None, None];
        let ys = [0.0, 0.0, 10.0, 10.0];
        let s = best_mia_split(&xs, &ys, 1).unwrap();
        assert_eq!(s.split_type, SplitType::MissingAlone);
        assert_eq!(s.threshold, None);
        assert!((s.gain - 100.0).abs() < 1e-12);
    }

    #[test]
    fn complete_column_reduces_to_cart() {
        let xs: Vec<Option<f64>> = [3.0, 1.0, 4.0, 1.5, 9.0, 2.6].iter().map(|&v| Some(v)).collect();
        let ys = [1.0, 0.0, 1.0, 0.0, 1.0, 0.0];
        let s = best_mia_split(&xs, &ys, 1).unwrap();
        assert_eq!(s.split_type, SplitType::MissingWithLow);
        assert!((s.threshold.unwrap() - 2.8).abs() < 1e-12);
        assert!((s.gain - 1.5).abs() < 1e-12);
    }

    #[test]
    fn all_missing_column_has_no_split() {
        let xs = [None; 6];
        let ys = [1.0, 2.0, 3.0, 4.0, 5.0, 6.0];
        assert!(best_mia_split(&xs, &ys, 1).is_none());
    }

    #[test]
    fn constant_response_gives_constant_forest() {
        let n = 60;
        let mut rng = stream(1);
        let v: Vec<f64> = (0..2 * n).map(|_| rng.random()).collect();
        let mask: Vec<bool> = (0..2 * n).map(|_| rng.random::<f64>() > 0.2).collect();
        let x = MaskedMatrix::new(n, 2, v, mask, MaskedMatrix::default_names(2)).unwrap();
        let y = vec![4.25; n];
        let params = ForestParams {
            num_trees: 20,
            ..Default::default()
        };
        let f = fit_mia_forest(&x, &y, &params, ForestTask::Regression, 2).unwrap();
        for p in f.predict_rows(&x) {
            assert_eq!(p, 4.25);
        }
    }

    #[test]
    fn stable_partition_keeps_order() {
        let mut ids = vec![5, 1, 4, 2, 0, 3];
        let flags = [true, false, true, false, true, false];
        let mut scratch = Vec::new();
        let k = stable_partition(&mut ids, &flags, &mut scratch);
        assert_eq!(k, 3);
        assert_eq!(ids, vec![4, 2, 0, 5, 1, 3]);
    }
}
