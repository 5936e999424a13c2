//! Poisson regression trees with offsets.
//!
//! Every working point carries a volume `d` (expected deaths under some
//! initial model) and an observed count `D`. A tree partitions the feature
//! space by standardized binary splits (one feature, one threshold or
//! category subset) and estimates a multiplicative factor
//! `mu = sum D / sum d` on every leaf. Splits are chosen greedily to maximize
//! the drop in Poisson deviance and kept only when the drop is at least
//! `cp` times the root deviance.
//!
//! Points whose response is missing take no part in fitting but are routed
//! like any other point at prediction time.

use std::cmp::Ordering;
use std::fmt::{self, Write as _};
use std::str::FromStr;

use rayon::prelude::*;

use crate::domain::Gender;
use crate::error::{Error, Result};

/// Tree features, declared in tie-break order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum FeatureId {
    Gender,
    Age,
    Year,
    Cohort,
    Cause,
}

impl FeatureId {
    pub fn is_categorical(self) -> bool {
        matches!(self, FeatureId::Gender | FeatureId::Cause)
    }

    pub fn name(self) -> &'static str {
        match self {
            FeatureId::Gender => "gender",
            FeatureId::Age => "age",
            FeatureId::Year => "year",
            FeatureId::Cohort => "cohort",
            FeatureId::Cause => "cause",
        }
    }
}

impl fmt::Display for FeatureId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for FeatureId {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Ok(match s {
            "gender" => FeatureId::Gender,
            "age" => FeatureId::Age,
            "year" => FeatureId::Year,
            "cohort" => FeatureId::Cohort,
            "cause" => FeatureId::Cause,
            other => return Err(Error::data(format!("unknown tree feature {other:?}"))),
        })
    }
}

/// One observation of the working data `(D, x, d)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WorkingPoint {
    pub gender: Gender,
    /// Age in years, or the one-based age bucket on a condensed grid.
    pub age: u32,
    pub year: i32,
    /// Zero-based cause index for cause-of-death data.
    pub cause: Option<u16>,
    /// Offset `d > 0`.
    pub volume: f64,
    /// Observed count, `None` when missing.
    pub response: Option<u64>,
}

impl WorkingPoint {
    pub fn cohort(&self) -> i32 {
        self.year - self.age as i32
    }

    fn ordered_value(&self, feature: FeatureId) -> f64 {
        match feature {
            FeatureId::Age => self.age as f64,
            FeatureId::Year => self.year as f64,
            FeatureId::Cohort => self.cohort() as f64,
            FeatureId::Gender | FeatureId::Cause => unreachable!("categorical feature"),
        }
    }

    fn level(&self, feature: FeatureId) -> u16 {
        match feature {
            FeatureId::Gender => self.gender.code(),
            FeatureId::Cause => self.cause.expect("cause checked before growing"),
            _ => unreachable!("ordered feature"),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum SplitKind {
    /// Values `<= threshold` go left.
    Threshold(f64),
    /// Levels in `left` go left, levels in `right` go right; any other level
    /// was not seen in training.
    Subset { left: Vec<u16>, right: Vec<u16> },
}

#[derive(Debug, Clone, PartialEq)]
pub struct SplitRule {
    pub feature: FeatureId,
    pub kind: SplitKind,
}

impl SplitRule {
    /// `Some(true)` for left, `Some(false)` for right, `None` for a category
    /// level the split never saw.
    pub fn goes_left(&self, p: &WorkingPoint) -> Option<bool> {
        match &self.kind {
            SplitKind::Threshold(th) => Some(p.ordered_value(self.feature) <= *th),
            SplitKind::Subset { left, right } => {
                let level = match (self.feature, p.cause) {
                    (FeatureId::Cause, None) => return None,
                    _ => p.level(self.feature),
                };
                if left.contains(&level) {
                    Some(true)
                } else if right.contains(&level) {
                    Some(false)
                } else {
                    None
                }
            }
        }
    }

    fn describe(&self, left_side: bool) -> String {
        match &self.kind {
            SplitKind::Threshold(th) => {
                format!("{}{}{}", self.feature, if left_side { "<=" } else { ">" }, th)
            }
            SplitKind::Subset { left, right } => {
                let set = if left_side { left } else { right };
                let levels: Vec<String> = set.iter().map(|l| l.to_string()).collect();
                format!("{}={{{}}}", self.feature, levels.join(","))
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TreeConfig {
    /// Minimum deviance reduction, as a fraction of the root deviance, for a
    /// split to be kept.
    pub cp: f64,
    /// Minimum number of (non-missing) points per leaf.
    pub min_bucket: usize,
    /// Maximum node depth; the root has depth 0.
    pub max_depth: usize,
}

impl Default for TreeConfig {
    fn default() -> Self {
        TreeConfig {
            cp: 2e-3,
            min_bucket: 10,
            max_depth: 30,
        }
    }
}

impl TreeConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.cp >= 0.0) || !self.cp.is_finite() {
            return Err(Error::config(format!("cp must be a nonnegative number, got {}", self.cp)));
        }
        if self.min_bucket < 1 {
            return Err(Error::config("min_bucket must be at least 1"));
        }
        if self.max_depth < 1 {
            return Err(Error::config("max_depth must be at least 1"));
        }
        Ok(())
    }
}

/// The features searched when back-testing a rate surface.
pub const MORTALITY_FEATURES: [FeatureId; 4] =
    [FeatureId::Gender, FeatureId::Age, FeatureId::Year, FeatureId::Cohort];

/// The features searched for cause-of-death probabilities (no cohort).
pub const CAUSE_FEATURES: [FeatureId; 4] =
    [FeatureId::Gender, FeatureId::Age, FeatureId::Year, FeatureId::Cause];

#[derive(Debug, Clone, PartialEq)]
pub struct Split {
    pub rule: SplitRule,
    pub gain: f64,
    pub left: usize,
    pub right: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Node {
    pub depth: usize,
    /// Number of training points (missing responses excluded).
    pub n: usize,
    pub sum_response: u64,
    pub sum_volume: f64,
    /// `sum_response / sum_volume`.
    pub mu: f64,
    /// Poisson deviance of the node's points at `mu`.
    pub deviance: f64,
    pub split: Option<Split>,
}

impl Node {
    pub fn is_leaf(&self) -> bool {
        self.split.is_none()
    }
}

/// A grown tree. Nodes are stored in pre-order with the root at index 0.
#[derive(Debug, Clone, PartialEq)]
pub struct PoissonTree {
    features: Vec<FeatureId>,
    nodes: Vec<Node>,
}

/// `2 * sum [D log(D / (mu d)) - (D - mu d)]` over points with a response.
/// A positive count at `mu = 0` gives `f64::INFINITY`.
pub fn poisson_deviance(points: &[WorkingPoint], mu: f64) -> f64 {
    2.0 * points
        .iter()
        .filter_map(|p| p.response.map(|d| (d as f64, mu * p.volume)))
        .map(|(d, m)| {
            if d > 0.0 {
                if m > 0.0 {
                    d * (d / m).ln() - (d - m)
                } else {
                    f64::INFINITY
                }
            } else {
                m
            }
        })
        .sum::<f64>()
}

/// Deviance changes smaller than this are treated as zero / as ties.
fn gain_tolerance(sum_response: u64) -> f64 {
    1e-12 * (1.0 + sum_response as f64)
}

/// `D log(D / d)` for aggregated sums; the Poisson deviance of a node at its
/// own estimate is `2 (sum_i D_i log(D_i/d_i) - this)`.
fn xlogx(sum_response: f64, sum_volume: f64) -> f64 {
    if sum_response > 0.0 {
        sum_response * (sum_response / sum_volume).ln()
    } else {
        0.0
    }
}

#[derive(Debug, Clone, Copy, Default)]
struct Sums {
    n: usize,
    response: u64,
    volume: f64,
}

impl Sums {
    fn add(&mut self, p: &WorkingPoint) {
        self.n += 1;
        self.response += p.response.unwrap_or(0);
        self.volume += p.volume;
    }

    fn minus(&self, other: &Sums) -> Sums {
        Sums {
            n: self.n - other.n,
            response: self.response - other.response,
            volume: self.volume - other.volume,
        }
    }

    fn xlogx(&self) -> f64 {
        xlogx(self.response as f64, self.volume)
    }
}

#[derive(Debug, Clone)]
struct Candidate {
    rule: SplitRule,
    gain: f64,
}

/// Compares two candidates of the same node; `Less` means `a` is preferred.
/// Gains within `tol` tie and fall back to feature order, then to the
/// smaller threshold or lexicographically smaller left set.
fn prefer(a: &Candidate, b: &Candidate, tol: f64) -> Ordering {
    if a.gain > b.gain + tol {
        return Ordering::Less;
    }
    if b.gain > a.gain + tol {
        return Ordering::Greater;
    }
    a.rule.feature.cmp(&b.rule.feature).then_with(|| match (&a.rule.kind, &b.rule.kind) {
        (SplitKind::Threshold(x), SplitKind::Threshold(y)) => x.total_cmp(y),
        (SplitKind::Subset { left: x, .. }, SplitKind::Subset { left: y, .. }) => x.cmp(y),
        _ => Ordering::Equal,
    })
}

fn keep_better(best: &mut Option<Candidate>, c: Candidate, tol: f64) {
    match best {
        Some(b) if prefer(&c, b, tol) != Ordering::Less => {}
        _ => *best = Some(c),
    }
}

/// Best split of `points` on one feature, or `None` when no split leaves at
/// least `min_bucket` points with a response on each side. Points with a
/// missing response are ignored.
pub fn best_split(
    points: &[WorkingPoint],
    feature: FeatureId,
    min_bucket: usize,
) -> Option<(SplitRule, f64)> {
    let idx: Vec<usize> = (0..points.len())
        .filter(|&i| points[i].response.is_some())
        .collect();
    if feature == FeatureId::Cause && idx.iter().any(|&i| points[i].cause.is_none()) {
        return None;
    }
    best_split_indexed(points, &idx, feature, min_bucket.max(1)).map(|c| (c.rule, c.gain))
}

fn best_split_indexed(
    points: &[WorkingPoint],
    idx: &[usize],
    feature: FeatureId,
    min_bucket: usize,
) -> Option<Candidate> {
    if idx.len() < 2 * min_bucket {
        return None;
    }
    let mut total = Sums::default();
    for &i in idx {
        total.add(&points[i]);
    }
    let tol = gain_tolerance(total.response);
    let parent = total.xlogx();
    let gain_of = |left: &Sums| {
        let right = total.minus(left);
        2.0 * (left.xlogx() + right.xlogx() - parent)
    };

    let mut best: Option<Candidate> = None;
    if feature.is_categorical() {
        let mut levels: Vec<(u16, Sums)> = Vec::new();
        for &i in idx {
            let level = points[i].level(feature);
            match levels.iter_mut().find(|(l, _)| *l == level) {
                Some((_, s)) => s.add(&points[i]),
                None => {
                    let mut s = Sums::default();
                    s.add(&points[i]);
                    levels.push((level, s));
                }
            }
        }
        if levels.len() < 2 {
            return None;
        }
        // Ordering the levels by their empirical rate makes the optimal
        // binary partition a prefix of this ordering.
        levels.sort_by(|(la, a), (lb, b)| {
            let ra = a.response as f64 / a.volume;
            let rb = b.response as f64 / b.volume;
            ra.total_cmp(&rb).then(la.cmp(lb))
        });
        let mut left = Sums::default();
        for k in 0..levels.len() - 1 {
            let s = levels[k].1;
            left.n += s.n;
            left.response += s.response;
            left.volume += s.volume;
            if left.n < min_bucket || total.n - left.n < min_bucket {
                continue;
            }
            let mut a: Vec<u16> = levels[..=k].iter().map(|l| l.0).collect();
            let mut b: Vec<u16> = levels[k + 1..].iter().map(|l| l.0).collect();
            a.sort_unstable();
            b.sort_unstable();
            // canonical orientation: the left set holds the smallest level
            let (left_set, right_set) = if a[0] < b[0] { (a, b) } else { (b, a) };
            let candidate = Candidate {
                rule: SplitRule {
                    feature,
                    kind: SplitKind::Subset {
                        left: left_set,
                        right: right_set,
                    },
                },
                gain: gain_of(&left),
            };
            keep_better(&mut best, candidate, tol);
        }
    } else {
        let mut order: Vec<(f64, usize)> = idx
            .iter()
            .map(|&i| (points[i].ordered_value(feature), i))
            .collect();
        order.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
        let mut left = Sums::default();
        for w in 0..order.len() - 1 {
            left.add(&points[order[w].1]);
            let (v, next) = (order[w].0, order[w + 1].0);
            if v == next || left.n < min_bucket || total.n - left.n < min_bucket {
                continue;
            }
            let candidate = Candidate {
                rule: SplitRule {
                    feature,
                    kind: SplitKind::Threshold(0.5 * (v + next)),
                },
                gain: gain_of(&left),
            };
            keep_better(&mut best, candidate, tol);
        }
    }
    best
}

/// Points per node above which the per-feature split search runs in parallel.
const PARALLEL_THRESHOLD: usize = 4096;

struct Grower<'a> {
    points: &'a [WorkingPoint],
    features: Vec<FeatureId>,
    cfg: TreeConfig,
    root_deviance: f64,
    nodes: Vec<Node>,
}

impl Grower<'_> {
    fn node_stats(&self, idx: &[usize], depth: usize) -> Node {
        let mut s = Sums::default();
        for &i in idx {
            s.add(&self.points[i]);
        }
        let mu = s.response as f64 / s.volume;
        let members: Vec<WorkingPoint> = idx.iter().map(|&i| self.points[i]).collect();
        Node {
            depth,
            n: s.n,
            sum_response: s.response,
            sum_volume: s.volume,
            mu,
            deviance: poisson_deviance(&members, mu),
            split: None,
        }
    }

    fn search(&self, idx: &[usize]) -> Option<Candidate> {
        let min_bucket = self.cfg.min_bucket;
        let candidates: Vec<Option<Candidate>> = if idx.len() >= PARALLEL_THRESHOLD {
            self.features
                .par_iter()
                .map(|&f| best_split_indexed(self.points, idx, f, min_bucket))
                .collect()
        } else {
            self.features
                .iter()
                .map(|&f| best_split_indexed(self.points, idx, f, min_bucket))
                .collect()
        };
        let total: u64 = idx.iter().map(|&i| self.points[i].response.unwrap_or(0)).sum();
        let tol = gain_tolerance(total);
        let mut best = None;
        for c in candidates.into_iter().flatten() {
            keep_better(&mut best, c, tol);
        }
        best
    }

    fn grow(&mut self, idx: Vec<usize>, depth: usize) -> usize {
        let id = self.nodes.len();
        let node = self.node_stats(&idx, depth);
        let sum_response = node.sum_response;
        self.nodes.push(node);
        if depth >= self.cfg.max_depth {
            return id;
        }
        let Some(best) = self.search(&idx) else {
            return id;
        };
        if !(best.gain >= self.cfg.cp * self.root_deviance) || best.gain <= gain_tolerance(sum_response) {
            return id;
        }
        let (left_idx, right_idx): (Vec<usize>, Vec<usize>) = idx
            .iter()
            .partition(|&&i| best.rule.goes_left(&self.points[i]) == Some(true));
        let left = self.grow(left_idx, depth + 1);
        let right = self.grow(right_idx, depth + 1);
        self.nodes[id].split = Some(Split {
            rule: best.rule,
            gain: best.gain,
            left,
            right,
        });
        id
    }
}

fn validate_points(points: &[WorkingPoint], features: &[FeatureId]) -> Result<()> {
    for (i, p) in points.iter().enumerate() {
        if !(p.volume > 0.0) || !p.volume.is_finite() {
            return Err(Error::data(format!(
                "working point {i} has volume {}; volumes must be positive",
                p.volume
            )));
        }
        if features.contains(&FeatureId::Cause) && p.cause.is_none() {
            return Err(Error::data(format!("working point {i} has no cause")));
        }
    }
    Ok(())
}

/// Grows a tree on `points` searching the given `features`.
pub fn grow_tree(
    points: &[WorkingPoint],
    features: &[FeatureId],
    cfg: &TreeConfig,
) -> Result<PoissonTree> {
    cfg.validate()?;
    let mut features = features.to_vec();
    features.sort();
    features.dedup();
    if features.is_empty() {
        return Err(Error::config("tree needs at least one feature"));
    }
    validate_points(points, &features)?;
    let idx: Vec<usize> = (0..points.len())
        .filter(|&i| points[i].response.is_some())
        .collect();
    if idx.is_empty() {
        return Err(Error::data("no working points with an observed response"));
    }
    let mut grower = Grower {
        points,
        features: features.clone(),
        cfg: *cfg,
        root_deviance: 0.0,
        nodes: Vec::new(),
    };
    let root = grower.node_stats(&idx, 0);
    grower.root_deviance = root.deviance;
    grower.grow(idx, 0);
    Ok(PoissonTree {
        features,
        nodes: grower.nodes,
    })
}

impl PoissonTree {
    pub fn features(&self) -> &[FeatureId] {
        &self.features
    }

    pub fn nodes(&self) -> &[Node] {
        &self.nodes
    }

    pub fn root(&self) -> &Node {
        &self.nodes[0]
    }

    pub fn leaves(&self) -> impl Iterator<Item = &Node> {
        self.nodes.iter().filter(|n| n.is_leaf())
    }

    pub fn n_leaves(&self) -> usize {
        self.leaves().count()
    }

    pub fn n_splits(&self) -> usize {
        self.nodes.len() - self.n_leaves()
    }

    pub fn total_leaf_deviance(&self) -> f64 {
        self.leaves().map(|n| n.deviance).sum()
    }

    /// Accepted deviance reductions, largest first.
    pub fn split_gains_sorted(&self) -> Vec<(f64, &SplitRule)> {
        let mut gains: Vec<(f64, &SplitRule)> = self
            .nodes
            .iter()
            .filter_map(|n| n.split.as_ref().map(|s| (s.gain, &s.rule)))
            .collect();
        gains.sort_by(|a, b| b.0.total_cmp(&a.0));
        gains
    }

    /// Index of the leaf `p` falls into, and whether an unseen category level
    /// forced a majority-volume routing decision on the way.
    pub fn route(&self, p: &WorkingPoint) -> (usize, bool) {
        let mut id = 0;
        let mut unseen = false;
        while let Some(split) = &self.nodes[id].split {
            let left = match split.rule.goes_left(p) {
                Some(l) => l,
                None => {
                    unseen = true;
                    self.nodes[split.left].sum_volume >= self.nodes[split.right].sum_volume
                }
            };
            id = if left { split.left } else { split.right };
        }
        (id, unseen)
    }

    /// Leaf estimate `mu` for a point.
    pub fn predict_mu(&self, p: &WorkingPoint) -> f64 {
        self.nodes[self.route(p).0].mu
    }

    /// Human-readable pre-order dump, one node per line.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        let names: Vec<&str> = self.features.iter().map(|f| f.name()).collect();
        let _ = writeln!(out, "# features: {}", names.join(","));
        let _ = writeln!(out, "# depth\trule\tn\tdeaths\tvolume\tmu\tdeviance\tgain");
        self.write_node(0, "root".to_string(), &mut out);
        out
    }

    fn write_node(&self, id: usize, rule: String, out: &mut String) {
        let n = &self.nodes[id];
        let gain = match &n.split {
            Some(s) => s.gain.to_string(),
            None => "-".to_string(),
        };
        let _ = writeln!(
            out,
            "{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}",
            n.depth, rule, n.n, n.sum_response, n.sum_volume, n.mu, n.deviance, gain
        );
        if let Some(s) = &n.split {
            self.write_node(s.left, s.rule.describe(true), out);
            self.write_node(s.right, s.rule.describe(false), out);
        }
    }

    /// Parses the output of [`PoissonTree::to_text`].
    pub fn from_text(text: &str) -> Result<Self> {
        let mut features = Vec::new();
        let mut rows: Vec<(usize, usize, String, Node, Option<f64>)> = Vec::new();
        for (i, line) in text.lines().enumerate() {
            let line_no = i + 1;
            if let Some(list) = line.strip_prefix("# features:") {
                features = list
                    .split(',')
                    .map(|s| s.trim())
                    .filter(|s| !s.is_empty())
                    .map(FeatureId::from_str)
                    .collect::<Result<Vec<_>>>()
                    .map_err(|e| Error::parse(line_no, e))?;
                continue;
            }
            if line.starts_with('#') || line.trim().is_empty() {
                continue;
            }
            let cols: Vec<&str> = line.split('\t').collect();
            if cols.len() != 8 {
                return Err(Error::parse(line_no, format!("expected 8 columns, found {}", cols.len())));
            }
            let num = |s: &str| -> Result<f64> {
                s.parse().map_err(|_| Error::parse(line_no, format!("bad number {s:?}")))
            };
            let int = |s: &str| -> Result<u64> {
                s.parse().map_err(|_| Error::parse(line_no, format!("bad integer {s:?}")))
            };
            let node = Node {
                depth: int(cols[0])? as usize,
                n: int(cols[2])? as usize,
                sum_response: int(cols[3])?,
                sum_volume: num(cols[4])?,
                mu: num(cols[5])?,
                deviance: num(cols[6])?,
                split: None,
            };
            let gain = if cols[7] == "-" { None } else { Some(num(cols[7])?) };
            rows.push((line_no, node.depth, cols[1].to_string(), node, gain));
        }
        if rows.is_empty() {
            return Err(Error::parse(1, "tree text has no nodes"));
        }
        let mut nodes = Vec::with_capacity(rows.len());
        let mut pos = 0;
        build_from_rows(&rows, &mut pos, 0, &mut nodes)?;
        if pos != rows.len() {
            return Err(Error::parse(rows[pos].0, "node outside the tree"));
        }
        Ok(PoissonTree { features, nodes })
    }
}

type Row = (usize, usize, String, Node, Option<f64>);

fn build_from_rows(rows: &[Row], pos: &mut usize, depth: usize, nodes: &mut Vec<Node>) -> Result<usize> {
    let (line, d, _, node, gain) = rows
        .get(*pos)
        .ok_or_else(|| Error::parse(rows.last().map_or(1, |r| r.0), "truncated tree"))?;
    if *d != depth {
        return Err(Error::parse(*line, format!("expected depth {depth}, found {d}")));
    }
    let id = nodes.len();
    nodes.push(node.clone());
    *pos += 1;
    let Some(gain) = gain else {
        return Ok(id);
    };
    let left_rule = rows.get(*pos).map(|r| (r.0, r.2.clone()));
    let left = build_from_rows(rows, pos, depth + 1, nodes)?;
    let right_rule = rows.get(*pos).map(|r| (r.0, r.2.clone()));
    let right = build_from_rows(rows, pos, depth + 1, nodes)?;
    let (line, l) = left_rule.expect("left child parsed");
    let (_, r) = right_rule.expect("right child parsed");
    let rule = parse_rule(&l, &r).map_err(|e| Error::parse(line, e))?;
    nodes[id].split = Some(Split {
        rule,
        gain: *gain,
        left,
        right,
    });
    Ok(id)
}

fn parse_rule(left: &str, right: &str) -> Result<SplitRule> {
    if let Some((f, th)) = left.split_once("<=") {
        let feature: FeatureId = f.parse()?;
        let th: f64 = th
            .parse()
            .map_err(|_| Error::data(format!("bad threshold in {left:?}")))?;
        if right != format!("{f}>{th}") {
            return Err(Error::data(format!("rules {left:?} / {right:?} do not match")));
        }
        return Ok(SplitRule {
            feature,
            kind: SplitKind::Threshold(th),
        });
    }
    let parse_set = |s: &str| -> Result<(FeatureId, Vec<u16>)> {
        let (f, set) = s
            .split_once('=')
            .ok_or_else(|| Error::data(format!("bad rule {s:?}")))?;
        let inner = set
            .strip_prefix('{')
            .and_then(|x| x.strip_suffix('}'))
            .ok_or_else(|| Error::data(format!("bad level set in {s:?}")))?;
        let levels = inner
            .split(',')
            .map(|l| l.parse::<u16>().map_err(|_| Error::data(format!("bad level in {s:?}"))))
            .collect::<Result<Vec<_>>>()?;
        Ok((f.parse()?, levels))
    };
    let (f1, l) = parse_set(left)?;
    let (f2, r) = parse_set(right)?;
    if f1 != f2 {
        return Err(Error::data(format!("rules {left:?} / {right:?} use different features")));
    }
    Ok(SplitRule {
        feature: f1,
        kind: SplitKind::Subset { left: l, right: r },
    })
}
