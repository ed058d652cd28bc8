//! Camera covisibility graph and modularity-driven agglomerative clustering.
//!
//! Modularity is evaluated over the stored (undirected, each-once) edge list:
//! `Q = 1/(2s) * sum_{(i,j) in E} [c_i == c_j] (w_ij - k_i k_j / (2s))`.
//! Clusters are grown bottom-up from singletons. The greedy variant always
//! takes the best merge; the stochastic variant samples merges from a softmax
//! over modularity gains. Both only merge adjacent clusters with a positive
//! gain and never exceed the size cap.

use std::cmp::Reverse;
use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt;
use std::str::FromStr;

use rand::Rng;

use crate::problem::BundleProblem;
use crate::Real;

/// Maximum cluster size. `UNBOUNDED` lifts the cap.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct ClusterCap(usize);

impl ClusterCap {
    pub const UNBOUNDED: Self = Self(usize::MAX);

    /// `None` for a zero cap.
    pub fn new(max_size: usize) -> Option<Self> {
        (max_size >= 1).then_some(Self(max_size))
    }

    pub fn get(self) -> usize {
        self.0
    }

    pub fn is_unbounded(self) -> bool {
        self.0 == usize::MAX
    }

    pub fn admits(self, size: usize) -> bool {
        size <= self.0
    }
}

impl Default for ClusterCap {
    fn default() -> Self {
        Self(100)
    }
}

impl fmt::Display for ClusterCap {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.is_unbounded() {
            f.write_str("inf")
        } else {
            write!(f, "{}", self.0)
        }
    }
}

impl FromStr for ClusterCap {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "inf" | "infinity" | "unbounded" => Ok(Self::UNBOUNDED),
            other => {
                let v: usize = other.parse().map_err(|_| format!("invalid cluster size {s:?}"))?;
                Self::new(v).ok_or_else(|| "cluster size must be at least 1".to_string())
            }
        }
    }
}

/// Weighted undirected camera graph; `w_ij` counts points seen by both cameras.
#[derive(Debug, Clone, PartialEq)]
pub struct CameraGraph {
    num_nodes: usize,
    /// `(i, j, w)` with `i < j`, sorted.
    edges: Vec<(usize, usize, u64)>,
    adjacency: Vec<Vec<(usize, u64)>>,
    degree: Vec<u64>,
    total_weight: u64,
}

impl CameraGraph {
    /// Builds a graph from `(i, j, w)` triples. Self-loops and zero weights are
    /// ignored; repeated pairs are summed.
    pub fn from_edges(num_nodes: usize, edges: impl IntoIterator<Item = (usize, usize, u64)>) -> Self {
        let mut acc: BTreeMap<(usize, usize), u64> = BTreeMap::new();
        for (i, j, w) in edges {
            assert!(i < num_nodes && j < num_nodes, "edge ({i}, {j}) out of range");
            if i == j || w == 0 {
                continue;
            }
            *acc.entry((i.min(j), i.max(j))).or_insert(0) += w;
        }
        let edges: Vec<_> = acc.into_iter().map(|((i, j), w)| (i, j, w)).collect();
        let mut adjacency = vec![Vec::new(); num_nodes];
        let mut degree = vec![0u64; num_nodes];
        let mut total_weight = 0;
        for &(i, j, w) in &edges {
            adjacency[i].push((j, w));
            adjacency[j].push((i, w));
            degree[i] += w;
            degree[j] += w;
            total_weight += w;
        }
        for a in &mut adjacency {
            a.sort_unstable();
        }
        Self {
            num_nodes,
            edges,
            adjacency,
            degree,
            total_weight,
        }
    }

    pub fn num_nodes(&self) -> usize {
        self.num_nodes
    }

    pub fn edges(&self) -> &[(usize, usize, u64)] {
        &self.edges
    }

    pub fn neighbors(&self, i: usize) -> &[(usize, u64)] {
        &self.adjacency[i]
    }

    /// Weighted degree `k_i`.
    pub fn degree(&self, i: usize) -> u64 {
        self.degree[i]
    }

    /// Total edge weight `s`.
    pub fn total_weight(&self) -> u64 {
        self.total_weight
    }

    pub fn weight(&self, i: usize, j: usize) -> u64 {
        let (a, b) = (i.min(j), i.max(j));
        self.adjacency[a]
            .binary_search_by_key(&b, |e| e.0)
            .map_or(0, |k| self.adjacency[a][k].1)
    }
}

/// Covisibility graph of a problem's cameras.
pub fn build_camera_graph<T: Real>(problem: &BundleProblem<T>) -> CameraGraph {
    let mut counts: HashMap<(usize, usize), u64> = HashMap::new();
    let obs = problem.observations();
    for j in 0..problem.num_points() {
        let range = problem.point_observations(j);
        for a in range.clone() {
            for b in a + 1..range.end {
                // observations of a point are sorted by camera
                *counts.entry((obs[a].camera, obs[b].camera)).or_insert(0) += 1;
            }
        }
    }
    CameraGraph::from_edges(problem.num_cameras(), counts.into_iter().map(|((i, j), w)| (i, j, w)))
}

/// Partition of cameras into clusters with dense ids `0..l`.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct ClusterAssignment {
    cluster_of: Vec<usize>,
    members: Vec<Vec<usize>>,
}

impl ClusterAssignment {
    /// Relabels arbitrary labels densely, numbering clusters by their smallest
    /// member.
    pub fn from_labels(labels: &[usize]) -> Self {
        let mut remap: HashMap<usize, usize> = HashMap::new();
        let mut members: Vec<Vec<usize>> = Vec::new();
        let mut cluster_of = Vec::with_capacity(labels.len());
        for (i, &l) in labels.iter().enumerate() {
            let id = *remap.entry(l).or_insert_with(|| {
                members.push(Vec::new());
                members.len() - 1
            });
            members[id].push(i);
            cluster_of.push(id);
        }
        Self { cluster_of, members }
    }

    pub fn singletons(num_cameras: usize) -> Self {
        Self::from_labels(&(0..num_cameras).collect::<Vec<_>>())
    }

    pub fn single_cluster(num_cameras: usize) -> Self {
        Self::from_labels(&vec![0; num_cameras])
    }

    pub fn cluster_of(&self, camera: usize) -> usize {
        self.cluster_of[camera]
    }

    pub fn labels(&self) -> &[usize] {
        &self.cluster_of
    }

    pub fn num_clusters(&self) -> usize {
        self.members.len()
    }

    pub fn num_cameras(&self) -> usize {
        self.cluster_of.len()
    }

    /// Cameras of cluster `c`, ascending.
    pub fn members(&self, c: usize) -> &[usize] {
        &self.members[c]
    }

    pub fn sizes(&self) -> Vec<usize> {
        self.members.iter().map(Vec::len).collect()
    }

    pub fn max_size(&self) -> usize {
        self.members.iter().map(Vec::len).max().unwrap_or(0)
    }

    /// `camera_index,cluster_id` lines with a header.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("camera_index,cluster_id\n");
        for (i, c) in self.cluster_of.iter().enumerate() {
            out.push_str(&format!("{i},{c}\n"));
        }
        out
    }
}

/// Modularity of `assignment` over the graph's edge list.
pub fn modularity(graph: &CameraGraph, assignment: &ClusterAssignment) -> f64 {
    let s2 = 2.0 * graph.total_weight() as f64;
    if s2 == 0.0 {
        return 0.0;
    }
    let mut q = 0.0;
    for &(i, j, w) in graph.edges() {
        if assignment.cluster_of(i) == assignment.cluster_of(j) {
            q += w as f64 - (graph.degree(i) as f64) * (graph.degree(j) as f64) / s2;
        }
    }
    q / s2
}

/// Gain of merging clusters `x` and `y`, from the edges running between them.
pub fn delta_modularity(graph: &CameraGraph, assignment: &ClusterAssignment, x: usize, y: usize) -> f64 {
    assert_ne!(x, y, "cannot merge a cluster with itself");
    let mut cross = CrossWeight::default();
    for &(i, j, w) in graph.edges() {
        let (ci, cj) = (assignment.cluster_of(i), assignment.cluster_of(j));
        if (ci == x && cj == y) || (ci == y && cj == x) {
            cross.add_edge(graph, i, j, w);
        }
    }
    cross.gain(graph.total_weight())
}

/// Sums over the edges between two clusters: `sum w_ij` and `sum k_i k_j`.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
struct CrossWeight {
    weight: f64,
    degree_product: f64,
}

impl CrossWeight {
    fn add_edge(&mut self, graph: &CameraGraph, i: usize, j: usize, w: u64) {
        self.weight += w as f64;
        self.degree_product += graph.degree(i) as f64 * graph.degree(j) as f64;
    }

    fn merged(self, other: Self) -> Self {
        Self {
            weight: self.weight + other.weight,
            degree_product: self.degree_product + other.degree_product,
        }
    }

    fn gain(self, total_weight: u64) -> f64 {
        let s2 = 2.0 * total_weight as f64;
        (self.weight - self.degree_product / s2) / s2
    }
}

/// Draws one candidate with probability `exp(beta dq) / sum exp(beta dq')`.
/// Returns the chosen `(x, y)` pair.
pub fn sample_merge<R: Rng + ?Sized>(candidates: &[(usize, usize, f64)], beta: f64, rng: &mut R) -> (usize, usize) {
    assert!(!candidates.is_empty(), "no merge candidates");
    assert!(beta > 0.0, "beta must be positive");
    let idx = sample_index(candidates.iter().map(|c| c.2), beta, rng);
    (candidates[idx].0, candidates[idx].1)
}

fn sample_index<R: Rng + ?Sized>(gains: impl Iterator<Item = f64> + Clone, beta: f64, rng: &mut R) -> usize {
    let max = gains.clone().fold(f64::NEG_INFINITY, f64::max);
    let weights: Vec<f64> = gains.map(|g| (beta * (g - max)).exp()).collect();
    let total: f64 = weights.iter().sum();
    let mut u = rng.random::<f64>() * total;
    for (i, w) in weights.iter().enumerate() {
        if u < *w {
            return i;
        }
        u -= w;
    }
    // rounding left `u` past the end; fall back to the last positive weight
    weights.iter().rposition(|w| *w > 0.0).unwrap_or(weights.len() - 1)
}

/// One merge performed during clustering, for diagnostics.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MergeEvent {
    pub x: usize,
    pub y: usize,
    pub gain: f64,
}

/// Binary sum tree over slot weights; parents are recomputed from their
/// children on every update so sums never drift.
struct SumTree {
    leaves: usize,
    nodes: Vec<f64>,
}

impl SumTree {
    fn new(slots: usize) -> Self {
        let leaves = slots.max(1).next_power_of_two();
        Self {
            leaves,
            nodes: vec![0.0; 2 * leaves],
        }
    }

    fn set(&mut self, slot: usize, w: f64) {
        let mut i = slot + self.leaves;
        self.nodes[i] = w;
        while i > 1 {
            i /= 2;
            self.nodes[i] = self.nodes[2 * i] + self.nodes[2 * i + 1];
        }
    }

    fn total(&self) -> f64 {
        self.nodes[1]
    }

    /// Slot whose cumulative weight interval contains `u` in `[0, total)`.
    fn find(&self, mut u: f64) -> usize {
        let mut i = 1;
        while i < self.leaves {
            let (l, r) = (self.nodes[2 * i], self.nodes[2 * i + 1]);
            i = if (u < l && l > 0.0) || r <= 0.0 {
                2 * i
            } else {
                u -= l;
                2 * i + 1
            };
        }
        i - self.leaves
    }
}

#[derive(Debug, Clone, Copy)]
struct Gain(f64);

impl PartialEq for Gain {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other).is_eq()
    }
}

impl Eq for Gain {}

impl PartialOrd for Gain {
    fn partial_cmp(&self, other: &Self) -> Option<std::cmp::Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Gain {
    fn cmp(&self, other: &Self) -> std::cmp::Ordering {
        self.0.total_cmp(&other.0)
    }
}

/// Selection structure over the positive-gain candidates.
enum MergeIndex<'a, R: Rng + ?Sized> {
    /// Ordered by descending gain, then ascending `(x, y)`.
    Greedy(BTreeSet<(Reverse<Gain>, usize, usize)>),
    /// Slot weights `exp(beta (gain - reference))`.
    Softmax {
        beta: f64,
        reference: f64,
        tree: SumTree,
        rng: &'a mut R,
    },
}

/// Largest exponent allowed before the softmax weights are rebased.
const MAX_EXPONENT: f64 = 600.0;

struct Agglomeration<'g> {
    graph: &'g CameraGraph,
    cap: ClusterCap,
    label: Vec<usize>,
    size: Vec<usize>,
    members: Vec<Vec<usize>>,
    /// Cross weights to adjacent clusters, keyed by the other cluster id.
    links: Vec<BTreeMap<usize, CrossWeight>>,
    /// Admissible adjacent pairs `(x, y)`, `x < y`, and their slots.
    slot_of: HashMap<(usize, usize), usize>,
    slots: Vec<Option<(usize, usize, f64)>>,
    free: Vec<usize>,
    positive: usize,
}

impl<'g> Agglomeration<'g> {
    fn new(graph: &'g CameraGraph, cap: ClusterCap) -> Self {
        let m = graph.num_nodes();
        let mut links: Vec<BTreeMap<usize, CrossWeight>> = vec![BTreeMap::new(); m];
        for &(i, j, w) in graph.edges() {
            let mut cw = CrossWeight::default();
            cw.add_edge(graph, i, j, w);
            links[i].insert(j, cw);
            links[j].insert(i, cw);
        }
        Self {
            graph,
            cap,
            label: (0..m).collect(),
            size: vec![1; m],
            members: (0..m).map(|i| vec![i]).collect(),
            links,
            slot_of: HashMap::new(),
            slots: Vec::new(),
            free: Vec::new(),
            positive: 0,
        }
    }

    fn candidates(&self) -> impl Iterator<Item = (usize, usize, f64)> + '_ {
        self.slots.iter().flatten().copied()
    }

    fn remove<R: Rng + ?Sized>(&mut self, key: (usize, usize), index: &mut MergeIndex<'_, R>) {
        let Some(slot) = self.slot_of.remove(&key) else {
            return;
        };
        let (x, y, g) = self.slots[slot].take().expect("occupied slot");
        self.free.push(slot);
        if g > 0.0 {
            self.positive -= 1;
            match index {
                MergeIndex::Greedy(set) => {
                    set.remove(&(Reverse(Gain(g)), x, y));
                }
                MergeIndex::Softmax { tree, .. } => tree.set(slot, 0.0),
            }
        }
    }

    fn insert<R: Rng + ?Sized>(&mut self, key: (usize, usize), g: f64, index: &mut MergeIndex<'_, R>) {
        let slot = self.free.pop().unwrap_or_else(|| {
            self.slots.push(None);
            self.slots.len() - 1
        });
        self.slots[slot] = Some((key.0, key.1, g));
        self.slot_of.insert(key, slot);
        if g <= 0.0 {
            return;
        }
        self.positive += 1;
        let rebase = match index {
            MergeIndex::Greedy(set) => {
                set.insert((Reverse(Gain(g)), key.0, key.1));
                false
            }
            MergeIndex::Softmax {
                beta, reference, tree, ..
            } => {
                let exponent = *beta * (g - *reference);
                if slot >= tree.leaves || exponent > MAX_EXPONENT {
                    true
                } else {
                    tree.set(slot, exponent.exp());
                    false
                }
            }
        };
        if rebase {
            self.rebuild(index);
        }
    }

    /// Recomputes all softmax weights relative to the current best gain.
    fn rebuild<R: Rng + ?Sized>(&self, index: &mut MergeIndex<'_, R>) {
        if let MergeIndex::Softmax {
            beta, reference, tree, ..
        } = index
        {
            *reference = self.candidates().map(|c| c.2).fold(f64::NEG_INFINITY, f64::max);
            *tree = SumTree::new(self.slots.len());
            for (slot, c) in self.slots.iter().enumerate() {
                if let Some((_, _, g)) = c {
                    if *g > 0.0 {
                        tree.set(slot, (*beta * (g - *reference)).exp());
                    }
                }
            }
        }
    }

    fn refresh_candidates<R: Rng + ?Sized>(&mut self, x: usize, index: &mut MergeIndex<'_, R>) {
        let total = self.graph.total_weight();
        let neighbors: Vec<(usize, CrossWeight)> = self.links[x].iter().map(|(&y, &cw)| (y, cw)).collect();
        for (y, cw) in neighbors {
            let key = (x.min(y), x.max(y));
            self.remove(key, index);
            if self.cap.admits(self.size[x] + self.size[y]) {
                self.insert(key, cw.gain(total), index);
            }
        }
    }

    /// Merges `y` into `x` (`x < y`).
    fn merge<R: Rng + ?Sized>(&mut self, x: usize, y: usize, index: &mut MergeIndex<'_, R>) {
        let y_links = std::mem::take(&mut self.links[y]);
        let x_neighbors: Vec<usize> = self.links[x].keys().copied().collect();
        for u in x_neighbors {
            self.remove((x.min(u), x.max(u)), index);
        }
        for &u in y_links.keys() {
            self.remove((y.min(u), y.max(u)), index);
        }
        for (u, cw) in y_links {
            if u == x {
                continue;
            }
            self.links[u].remove(&y);
            let merged = self.links[x].get(&u).copied().unwrap_or_default().merged(cw);
            self.links[x].insert(u, merged);
            self.links[u].insert(x, merged);
        }
        self.links[x].remove(&y);
        self.size[x] += self.size[y];
        self.size[y] = 0;
        let moved = std::mem::take(&mut self.members[y]);
        for &c in &moved {
            self.label[c] = x;
        }
        self.members[x].extend(moved);
        self.refresh_candidates(x, index);
    }

    fn next<R: Rng + ?Sized>(&self, index: &mut MergeIndex<'_, R>) -> Option<(usize, usize, f64)> {
        if self.positive == 0 {
            return None;
        }
        let stale = matches!(index, MergeIndex::Softmax { tree, .. } if !(tree.total() > 0.0 && tree.total().is_finite()));
        if stale {
            self.rebuild(index);
        }
        match index {
            MergeIndex::Greedy(set) => set.first().map(|&(Reverse(Gain(g)), x, y)| (x, y, g)),
            MergeIndex::Softmax { tree, rng, .. } => {
                let u = rng.random::<f64>() * tree.total();
                self.slots[tree.find(u)]
            }
        }
    }

    fn run<R: Rng + ?Sized>(&mut self, mut index: MergeIndex<'_, R>, mut log: Option<&mut Vec<MergeEvent>>) {
        for x in 0..self.graph.num_nodes() {
            let neighbors: Vec<usize> = self.links[x].keys().copied().filter(|&y| y > x).collect();
            for y in neighbors {
                if self.cap.admits(self.size[x] + self.size[y]) {
                    let g = self.links[x][&y].gain(self.graph.total_weight());
                    self.insert((x, y), g, &mut index);
                }
            }
        }
        self.rebuild(&mut index);
        while let Some((x, y, gain)) = self.next(&mut index) {
            if let Some(log) = log.as_deref_mut() {
                log.push(MergeEvent { x, y, gain });
            }
            self.merge(x, y, &mut index);
        }
    }

    fn assignment(&self) -> ClusterAssignment {
        ClusterAssignment::from_labels(&self.label)
    }
}

/// Randomized agglomeration: merges are drawn from the softmax over
/// positive modularity gains until none remain or the cap blocks them.
pub fn cluster_stochastic<R: Rng + ?Sized>(graph: &CameraGraph, cap: ClusterCap, beta: f64, rng: &mut R) -> ClusterAssignment {
    cluster_stochastic_logged(graph, cap, beta, rng, None)
}

pub fn cluster_stochastic_logged<R: Rng + ?Sized>(
    graph: &CameraGraph,
    cap: ClusterCap,
    beta: f64,
    rng: &mut R,
    log: Option<&mut Vec<MergeEvent>>,
) -> ClusterAssignment {
    assert!(beta > 0.0 && beta.is_finite(), "beta must be positive and finite");
    let mut a = Agglomeration::new(graph, cap);
    a.run(
        MergeIndex::Softmax {
            beta,
            reference: 0.0,
            tree: SumTree::new(1),
            rng,
        },
        log,
    );
    a.assignment()
}

/// Greedy agglomeration (always the best merge; ties go to the smallest
/// `(x, y)` pair of cluster ids).
pub fn cluster_deterministic(graph: &CameraGraph, cap: ClusterCap) -> ClusterAssignment {
    cluster_deterministic_logged(graph, cap, None)
}

pub fn cluster_deterministic_logged(
    graph: &CameraGraph,
    cap: ClusterCap,
    log: Option<&mut Vec<MergeEvent>>,
) -> ClusterAssignment {
    let mut a = Agglomeration::new(graph, cap);
    a.run::<rand::rngs::ThreadRng>(MergeIndex::Greedy(BTreeSet::new()), log);
    a.assignment()
}
