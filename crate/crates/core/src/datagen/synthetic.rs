use std::collections::{BTreeSet, VecDeque};

use rand::seq::index;
use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::{Dataset, Graph, Task};
use crate::rng::{self, Rng};

/// Infection labels are distances `0..=5`; this class collects distance >= 6 and unreachable nodes.
pub const INFECTION_FAR_CLASS: usize = 6;
const INFECTION_HEALTHY: u32 = 0;
const INFECTION_INFECTED: u32 = 1;

const RED: u32 = 0;
const BLUE: u32 = 1;
const WHITE: u32 = 2;
pub const NEGATIVE_MORE_RED: usize = 0;
pub const NEGATIVE_MORE_BLUE: usize = 1;

const BASE_CLASS: usize = 0;
const MOTIF_CLASS: usize = 1;
pub const BA_SHAPES_TOP: usize = 1;
pub const BA_SHAPES_MIDDLE: usize = 2;
pub const BA_SHAPES_BOTTOM: usize = 3;

fn positive(name: &str, value: usize) -> Result<()> {
    if value == 0 {
        return Err(Error::Config(format!("{name} must be positive")));
    }
    Ok(())
}

fn probability(name: &str, p: f64) -> Result<()> {
    if !(0.0..=1.0).contains(&p) {
        return Err(Error::Config(format!("{name} = {p} is not a probability")));
    }
    Ok(())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct InfectionParams {
    pub seed: u64,
    pub nodes: usize,
    /// Probability of each ordered pair `(u, v)`, `u != v`, being an edge.
    pub edge_probability: f64,
    pub infected: usize,
}

impl Default for InfectionParams {
    fn default() -> Self {
        InfectionParams {
            seed: 0,
            nodes: 1000,
            // 3973 expected edges over 1000 * 999 ordered pairs
            edge_probability: 3973.0 / 999_000.0,
            infected: 50,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct NegativeEvidenceParams {
    pub seed: u64,
    pub red: usize,
    pub blue: usize,
    pub white: usize,
    pub white_edge_probability: f64,
    /// Each white node links to `r` red and `b` blue nodes, `r != b`, both at most this.
    pub max_colored_neighbors: usize,
}

impl Default for NegativeEvidenceParams {
    fn default() -> Self {
        NegativeEvidenceParams {
            seed: 0,
            red: 10,
            blue: 10,
            white: 1980,
            // ~45250 white-white edges plus ~5940 colored edges = ~51200 undirected edges
            white_edge_probability: 0.0231,
            max_colored_neighbors: 3,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BaShapesParams {
    pub seed: u64,
    pub base_nodes: usize,
    pub attachment: usize,
    pub motifs: usize,
}

impl Default for BaShapesParams {
    fn default() -> Self {
        BaShapesParams {
            seed: 0,
            base_nodes: 300,
            attachment: 5,
            motifs: 80,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TreeCyclesParams {
    pub seed: u64,
    /// Height of the balanced binary base tree (`2^(h+1) - 1` nodes).
    pub tree_height: u32,
    pub motifs: usize,
    pub cycle_length: usize,
}

impl Default for TreeCyclesParams {
    fn default() -> Self {
        // 511 tree nodes + 60 * 6 cycle nodes = 871
        TreeCyclesParams {
            seed: 0,
            tree_height: 8,
            motifs: 60,
            cycle_length: 6,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TreeGridParams {
    pub seed: u64,
    pub tree_height: u32,
    pub motifs: usize,
    pub grid_side: usize,
}

impl Default for TreeGridParams {
    fn default() -> Self {
        // 511 tree nodes + 80 * 9 grid nodes = 1231
        TreeGridParams {
            seed: 0,
            tree_height: 8,
            motifs: 80,
            grid_side: 3,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Ba2MotifsParams {
    pub seed: u64,
    pub graphs: usize,
    pub base_nodes: usize,
    pub attachment: usize,
}

impl Default for Ba2MotifsParams {
    fn default() -> Self {
        Ba2MotifsParams {
            seed: 0,
            graphs: 1000,
            base_nodes: 20,
            attachment: 1,
        }
    }
}

/// Shortest directed distances from the nearest source, following edges `(u, v)` from `u` to `v`.
pub fn bfs_distances(graph: &Graph, sources: &[usize]) -> Vec<Option<usize>> {
    let n = graph.node_count();
    let mut out: Vec<Vec<usize>> = vec![Vec::new(); n];
    for &(u, v) in graph.edges() {
        out[u].push(v);
        if !graph.is_directed() {
            out[v].push(u);
        }
    }
    let mut dist = vec![None; n];
    let mut queue = VecDeque::new();
    for &s in sources {
        if dist[s].is_none() {
            dist[s] = Some(0);
            queue.push_back(s);
        }
    }
    while let Some(u) = queue.pop_front() {
        let d = dist[u].unwrap();
        for &v in &out[u] {
            if dist[v].is_none() {
                dist[v] = Some(d + 1);
                queue.push_back(v);
            }
        }
    }
    dist
}

pub fn generate_infection(p: &InfectionParams) -> Result<Dataset> {
    positive("nodes", p.nodes)?;
    probability("edge_probability", p.edge_probability)?;
    if p.infected == 0 || p.infected > p.nodes {
        return Err(Error::Config(format!(
            "infected = {} must be in 1..={}",
            p.infected, p.nodes
        )));
    }
    let mut rng = rng::substream(p.seed, "datagen/infection", 0);
    let n = p.nodes;
    let mut edges = Vec::new();
    for u in 0..n {
        for v in 0..n {
            if u != v && rng.random_bool(p.edge_probability) {
                edges.push((u, v));
            }
        }
    }
    let mut infected: Vec<usize> = index::sample(&mut rng, n, p.infected).into_vec();
    infected.sort_unstable();

    let mut features = vec![vec![INFECTION_HEALTHY]; n];
    for &v in &infected {
        features[v] = vec![INFECTION_INFECTED];
    }
    let graph = Graph::new(n, edges, true)?.with_features(features)?;
    let labels = bfs_distances(&graph, &infected)
        .into_iter()
        .map(|d| Some(d.map_or(INFECTION_FAR_CLASS, |d| d.min(INFECTION_FAR_CLASS))))
        .collect();
    let graph = graph.with_node_labels(labels)?;
    Dataset::new("infection", Task::NodeClassification, INFECTION_FAR_CLASS + 1, 2, vec![graph])
}

pub fn generate_negative_evidence(p: &NegativeEvidenceParams) -> Result<Dataset> {
    positive("red", p.red)?;
    positive("blue", p.blue)?;
    positive("white", p.white)?;
    positive("max_colored_neighbors", p.max_colored_neighbors)?;
    probability("white_edge_probability", p.white_edge_probability)?;
    if p.max_colored_neighbors > p.red.min(p.blue) {
        return Err(Error::Config(
            "max_colored_neighbors exceeds the number of red or blue nodes".into(),
        ));
    }
    let mut rng = rng::substream(p.seed, "datagen/negative-evidence", 0);
    let n = p.red + p.blue + p.white;
    let reds: Vec<usize> = (0..p.red).collect();
    let blues: Vec<usize> = (p.red..p.red + p.blue).collect();
    let whites: Vec<usize> = (p.red + p.blue..n).collect();

    let mut features = vec![vec![WHITE]; n];
    for &r in &reds {
        features[r] = vec![RED];
    }
    for &b in &blues {
        features[b] = vec![BLUE];
    }

    let mut edges = Vec::new();
    let mut labels = vec![None; n];
    for &w in &whites {
        let (r, b) = loop {
            let r = rng.random_range(0..=p.max_colored_neighbors);
            let b = rng.random_range(0..=p.max_colored_neighbors);
            if r != b {
                break (r, b);
            }
        };
        for i in index::sample(&mut rng, reds.len(), r).into_vec() {
            edges.push((reds[i], w));
        }
        for i in index::sample(&mut rng, blues.len(), b).into_vec() {
            edges.push((blues[i], w));
        }
        labels[w] = Some(if r > b { NEGATIVE_MORE_RED } else { NEGATIVE_MORE_BLUE });
    }
    for (i, &u) in whites.iter().enumerate() {
        for &v in &whites[i + 1..] {
            if rng.random_bool(p.white_edge_probability) {
                edges.push((u, v));
            }
        }
    }
    let graph = Graph::new(n, edges, false)?
        .with_features(features)?
        .with_node_labels(labels)?;
    Dataset::new("negative-evidence", Task::NodeClassification, 2, 3, vec![graph])
}

/// Preferential attachment: a star on `m + 1` nodes, then every new node links to `m`
/// distinct existing nodes drawn proportionally to degree. Produces `(n - m) * m` edges.
pub fn barabasi_albert(n: usize, m: usize, rng: &mut Rng) -> Result<Vec<(usize, usize)>> {
    if m == 0 || m >= n {
        return Err(Error::Config(format!("attachment {m} must be in 1..{n}")));
    }
    let mut edges: Vec<(usize, usize)> = (1..=m).map(|i| (0, i)).collect();
    let mut repeated: Vec<usize> = std::iter::repeat_n(0, m).chain(1..=m).collect();
    for source in m + 1..n {
        let mut targets = BTreeSet::new();
        while targets.len() < m {
            targets.insert(repeated[rng.random_range(0..repeated.len())]);
        }
        for &t in &targets {
            edges.push((t, source));
            repeated.push(t);
        }
        repeated.extend(std::iter::repeat_n(source, m));
    }
    Ok(edges)
}

/// Balanced binary tree of height `h`: node `i` has children `2i + 1` and `2i + 2`.
pub fn balanced_binary_tree(height: u32) -> (usize, Vec<(usize, usize)>) {
    let n = (1usize << (height + 1)) - 1;
    let edges = (1..n).map(|c| ((c - 1) / 2, c)).collect();
    (n, edges)
}

/// Square with a roof. Returns local edges and per-node classes; node 0 is a bottom corner.
fn house() -> (Vec<(usize, usize)>, [usize; 5]) {
    (
        vec![(0, 1), (1, 2), (2, 3), (3, 0), (2, 4), (3, 4)],
        [
            BA_SHAPES_BOTTOM,
            BA_SHAPES_BOTTOM,
            BA_SHAPES_MIDDLE,
            BA_SHAPES_MIDDLE,
            BA_SHAPES_TOP,
        ],
    )
}

fn cycle(len: usize) -> Vec<(usize, usize)> {
    (0..len).map(|i| (i, (i + 1) % len)).collect()
}

fn grid(side: usize) -> Vec<(usize, usize)> {
    let mut edges = Vec::new();
    for r in 0..side {
        for c in 0..side {
            let v = r * side + c;
            if c + 1 < side {
                edges.push((v, v + 1));
            }
            if r + 1 < side {
                edges.push((v, v + side));
            }
        }
    }
    edges
}

/// Appends `motifs` copies of a motif, each joined to a uniformly random base node by
/// one edge from motif node 0.
fn attach_motifs(
    base_nodes: usize,
    edges: &mut Vec<(usize, usize)>,
    motif_edges: &[(usize, usize)],
    motif_size: usize,
    motifs: usize,
    rng: &mut Rng,
) -> usize {
    let mut n = base_nodes;
    for _ in 0..motifs {
        let anchor = rng.random_range(0..base_nodes);
        edges.extend(motif_edges.iter().map(|&(a, b)| (n + a, n + b)));
        edges.push((anchor, n));
        n += motif_size;
    }
    n
}

fn unattributed(n: usize) -> Vec<Vec<u32>> {
    vec![Vec::new(); n]
}

pub fn generate_ba_shapes(p: &BaShapesParams) -> Result<Dataset> {
    positive("motifs", p.motifs)?;
    let mut rng = rng::substream(p.seed, "datagen/ba-shapes", 0);
    let mut edges = barabasi_albert(p.base_nodes, p.attachment, &mut rng)?;
    let (house_edges, roles) = house();
    let n = attach_motifs(p.base_nodes, &mut edges, &house_edges, 5, p.motifs, &mut rng);
    let mut labels = vec![Some(BASE_CLASS); p.base_nodes];
    for _ in 0..p.motifs {
        labels.extend(roles.iter().map(|&r| Some(r)));
    }
    let graph = Graph::new(n, edges, false)?
        .with_features(unattributed(n))?
        .with_node_labels(labels)?;
    Dataset::new("ba-shapes", Task::NodeClassification, 4, 0, vec![graph])
}

fn tree_with_motifs(
    name: &str,
    seed: u64,
    height: u32,
    motif_edges: &[(usize, usize)],
    motif_size: usize,
    motifs: usize,
) -> Result<Dataset> {
    positive("motifs", motifs)?;
    let mut rng = rng::substream(seed, &format!("datagen/{name}"), 0);
    let (base, mut edges) = balanced_binary_tree(height);
    let n = attach_motifs(base, &mut edges, motif_edges, motif_size, motifs, &mut rng);
    let labels = (0..n)
        .map(|v| Some(if v < base { BASE_CLASS } else { MOTIF_CLASS }))
        .collect();
    let graph = Graph::new(n, edges, false)?
        .with_features(unattributed(n))?
        .with_node_labels(labels)?;
    Dataset::new(name, Task::NodeClassification, 2, 0, vec![graph])
}

pub fn generate_tree_cycles(p: &TreeCyclesParams) -> Result<Dataset> {
    if p.cycle_length < 3 {
        return Err(Error::Config("cycle_length must be at least 3".into()));
    }
    tree_with_motifs(
        "tree-cycles",
        p.seed,
        p.tree_height,
        &cycle(p.cycle_length),
        p.cycle_length,
        p.motifs,
    )
}

pub fn generate_tree_grid(p: &TreeGridParams) -> Result<Dataset> {
    if p.grid_side < 2 {
        return Err(Error::Config("grid_side must be at least 2".into()));
    }
    tree_with_motifs(
        "tree-grid",
        p.seed,
        p.tree_height,
        &grid(p.grid_side),
        p.grid_side * p.grid_side,
        p.motifs,
    )
}

/// Class 0: a house is attached; class 1: a five-node cycle. The first half of the
/// graphs are houses.
pub fn generate_ba_2motifs(p: &Ba2MotifsParams) -> Result<Dataset> {
    positive("graphs", p.graphs)?;
    let mut rng = rng::substream(p.seed, "datagen/ba-2motifs", 0);
    let (house_edges, _) = house();
    let cycle_edges = cycle(5);
    let graphs = (0..p.graphs)
        .map(|i| {
            let class = usize::from(i >= p.graphs / 2);
            let motif = if class == 0 { &house_edges } else { &cycle_edges };
            let mut edges = barabasi_albert(p.base_nodes, p.attachment, &mut rng)?;
            let n = attach_motifs(p.base_nodes, &mut edges, motif, 5, 1, &mut rng);
            Ok(Graph::new(n, edges, false)?
                .with_features(unattributed(n))?
                .with_graph_label(class))
        })
        .collect::<Result<Vec<_>>>()?;
    Dataset::new("ba-2motifs", Task::GraphClassification, 2, 0, graphs)
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Distances by repeated edge relaxation, independent of the queue-based search.
    fn relaxation_distances(graph: &Graph, sources: &[usize]) -> Vec<Option<usize>> {
        let mut dist: Vec<Option<usize>> = vec![None; graph.node_count()];
        for &s in sources {
            dist[s] = Some(0);
        }
        loop {
            let mut changed = false;
            for &(u, v) in graph.edges() {
                if let Some(du) = dist[u] {
                    if dist[v].is_none_or(|dv| du + 1 < dv) {
                        dist[v] = Some(du + 1);
                        changed = true;
                    }
                }
            }
            if !changed {
                return dist;
            }
        }
    }

    fn within_ten_percent(actual: usize, expected: f64) -> bool {
        (actual as f64 - expected).abs() <= 0.1 * expected
    }

    #[test]
    fn infection_statistics_and_labels() {
        let ds = generate_infection(&InfectionParams::default()).unwrap();
        assert_eq!(ds.graphs.len(), 1);
        assert_eq!(ds.class_count, 7);
        assert_eq!(ds.feature_count, 2);
        let g = &ds.graphs[0];
        assert_eq!(g.node_count(), 1000);
        assert!(g.is_directed());
        assert!(within_ten_percent(ds.tabulated_edges(), 3973.0));
        let avg_degree = g.edges().len() as f64 / 1000.0;
        assert!((avg_degree - 3.973).abs() < 0.4, "average degree {avg_degree}");

        let infected: Vec<usize> = (0..1000)
            .filter(|&v| g.node_features()[v] == [INFECTION_INFECTED])
            .collect();
        let oracle = relaxation_distances(g, &infected);
        let labels = g.node_labels().unwrap();
        for v in 0..1000 {
            let expected = oracle[v].map_or(INFECTION_FAR_CLASS, |d| d.min(INFECTION_FAR_CLASS));
            assert_eq!(labels[v], Some(expected), "node {v}");
        }
        for &v in &infected {
            assert_eq!(labels[v], Some(0));
        }
    }

    #[test]
    fn negative_evidence_statistics_and_labels() {
        let ds = generate_negative_evidence(&NegativeEvidenceParams::default()).unwrap();
        let g = &ds.graphs[0];
        assert_eq!(g.node_count(), 2000);
        assert_eq!(ds.feature_count, 3);
        assert_eq!(ds.class_count, 2);
        assert!(within_ten_percent(ds.tabulated_edges(), 102_394.0), "{}", ds.tabulated_edges());
        let labels = g.node_labels().unwrap();
        for v in 0..2000 {
            let (mut red, mut blue) = (0, 0);
            for &(a, b) in g.edges() {
                let other = if a == v { b } else if b == v { a } else { continue };
                match g.node_features()[other][0] {
                    RED => red += 1,
                    BLUE => blue += 1,
                    _ => {}
                }
            }
            if g.node_features()[v][0] == WHITE {
                let expected = if red > blue { NEGATIVE_MORE_RED } else { NEGATIVE_MORE_BLUE };
                assert_ne!(red, blue);
                assert_eq!(labels[v], Some(expected));
            } else {
                assert_eq!(labels[v], None);
            }
        }
    }

    #[test]
    fn motif_datasets_match_published_shapes() {
        let shapes = generate_ba_shapes(&BaShapesParams::default()).unwrap();
        assert_eq!((shapes.total_nodes(), shapes.class_count, shapes.feature_count), (700, 4, 0));
        assert!(within_ten_percent(shapes.tabulated_edges(), 4110.0));

        let cycles = generate_tree_cycles(&TreeCyclesParams::default()).unwrap();
        assert_eq!((cycles.total_nodes(), cycles.class_count), (871, 2));
        assert!(within_ten_percent(cycles.tabulated_edges(), 1942.0));

        let grids = generate_tree_grid(&TreeGridParams::default()).unwrap();
        assert_eq!((grids.total_nodes(), grids.class_count), (1231, 2));
        assert!(within_ten_percent(grids.tabulated_edges(), 3130.0));

        let motifs = generate_ba_2motifs(&Ba2MotifsParams::default()).unwrap();
        assert_eq!(motifs.graphs.len(), 1000);
        assert_eq!((motifs.class_count, motifs.feature_count), (2, 0));
        assert!(motifs.graphs.iter().all(|g| g.node_count() == 25));
        let avg = motifs.tabulated_edges() as f64 / 1000.0;
        assert!((avg - 50.96).abs() <= 5.096, "{avg}");
    }

    #[test]
    fn tree_cycle_sizes() {
        let (n, edges) = balanced_binary_tree(8);
        assert_eq!(n, 511);
        assert_eq!(edges.len(), 510);
        // 511 + 6k = 871 -> k = 60
        assert_eq!((871 - 511) % 6, 0);
        assert_eq!(TreeCyclesParams::default().motifs, (871 - 511) / 6);
        assert_eq!(TreeGridParams::default().motifs, (1231 - 511) / 9);
    }

    #[test]
    fn motif_membership_labels() {
        let ds = generate_tree_cycles(&TreeCyclesParams::default()).unwrap();
        let g = &ds.graphs[0];
        let labels = g.node_labels().unwrap();
        // every cycle node sits on a cycle of length 6 made only of motif nodes
        for v in 511..871 {
            assert_eq!(labels[v], Some(MOTIF_CLASS));
            let motif_neighbors = g.senders(v).iter().filter(|&&u| u >= 511).count();
            assert_eq!(motif_neighbors, 2);
        }
        assert!(labels[..511].iter().all(|&l| l == Some(BASE_CLASS)));

        let shapes = generate_ba_shapes(&BaShapesParams::default()).unwrap();
        let g = &shapes.graphs[0];
        let labels = g.node_labels().unwrap();
        for house in 0..80 {
            let first = 300 + 5 * house;
            let roles: Vec<usize> = (first..first + 5).map(|v| labels[v].unwrap()).collect();
            assert_eq!(roles, [3, 3, 2, 2, 1]);
            // the top has degree 2 and both neighbors are middles
            for &u in g.senders(first + 4) {
                assert_eq!(labels[u], Some(BA_SHAPES_MIDDLE));
            }
        }
    }

    #[test]
    fn barabasi_albert_edge_count() {
        let mut rng = rng::substream(1, "t", 0);
        assert_eq!(barabasi_albert(300, 5, &mut rng).unwrap().len(), 1475);
        assert_eq!(barabasi_albert(20, 1, &mut rng).unwrap().len(), 19);
        assert!(barabasi_albert(3, 3, &mut rng).is_err());
    }

    #[test]
    fn generators_are_deterministic() {
        for seed in [0, 9] {
            assert_eq!(
                generate_ba_2motifs(&Ba2MotifsParams { seed, graphs: 30, ..Default::default() }).unwrap(),
                generate_ba_2motifs(&Ba2MotifsParams { seed, graphs: 30, ..Default::default() }).unwrap()
            );
        }
        let a = generate_infection(&InfectionParams { seed: 1, nodes: 200, ..Default::default() });
        let b = generate_infection(&InfectionParams { seed: 2, nodes: 200, ..Default::default() });
        assert_ne!(a.unwrap(), b.unwrap());
    }

    #[test]
    fn invalid_configs_are_rejected() {
        assert!(generate_infection(&InfectionParams { infected: 0, ..Default::default() }).is_err());
        assert!(generate_ba_shapes(&BaShapesParams { motifs: 0, ..Default::default() }).is_err());
        assert!(generate_negative_evidence(&NegativeEvidenceParams {
            white_edge_probability: 1.5,
            ..Default::default()
        })
        .is_err());
    }
}
