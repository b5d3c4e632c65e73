//! Interaction graphs: vertices, edges, interaction supports and the
//! entangled-pair placement, plus the combinatorics built on top of them
//! (graph distance, connected edge-set enumeration, disjoint grouping).

use std::collections::{BTreeSet, HashSet, VecDeque};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// What a vertex stands for physically.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum VertexRole {
    System,
    Ancilla,
    /// A virtual bond vertex of a PEPS node.
    Virtual,
}

/// Plain serialized form of a [`Lattice`]. Distances are recomputed on load.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LatticeData {
    pub local_dim: usize,
    pub n_vertices: usize,
    pub edges: Vec<[usize; 2]>,
    pub supports: Vec<Vec<usize>>,
    pub pairs: Vec<[usize; 2]>,
    #[serde(default)]
    pub roles: Option<Vec<VertexRole>>,
    /// Optional declared interaction length; supports are checked against it.
    #[serde(default)]
    pub interaction_length: Option<usize>,
}

/// A finite interaction graph with its supports `Λ` and pairs `Υ`.
///
/// Supports and pairs are stored with sorted vertex lists. Every vertex
/// belongs to exactly one pair, so the pair product state is defined on the
/// whole vertex set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "LatticeData", into = "LatticeData")]
pub struct Lattice {
    local_dim: usize,
    roles: Vec<VertexRole>,
    edges: Vec<(usize, usize)>,
    supports: Vec<Vec<usize>>,
    pairs: Vec<(usize, usize)>,
    interaction_length: usize,
    dist: Vec<Vec<Option<usize>>>,
    pair_of: Vec<usize>,
}

impl Lattice {
    pub fn new(data: LatticeData) -> Result<Self> {
        let LatticeData {
            local_dim,
            n_vertices,
            edges,
            supports,
            pairs,
            roles,
            interaction_length,
        } = data;
        if local_dim < 2 {
            return Err(Error::InvalidLattice(format!("local_dim {local_dim} < 2")));
        }
        if n_vertices == 0 {
            return Err(Error::InvalidLattice("no vertices".into()));
        }
        let roles = roles.unwrap_or_else(|| vec![VertexRole::Virtual; n_vertices]);
        if roles.len() != n_vertices {
            return Err(Error::InvalidLattice(format!(
                "{} roles for {n_vertices} vertices",
                roles.len()
            )));
        }

        let check_vertex = |v: usize| {
            if v >= n_vertices {
                Err(Error::InvalidLattice(format!("vertex {v} out of range")))
            } else {
                Ok(())
            }
        };

        let mut edge_list = Vec::with_capacity(edges.len());
        for [a, b] in edges {
            check_vertex(a)?;
            check_vertex(b)?;
            if a == b {
                return Err(Error::InvalidLattice(format!("self loop at vertex {a}")));
            }
            edge_list.push((a.min(b), a.max(b)));
        }
        edge_list.sort_unstable();
        edge_list.dedup();

        let dist = all_pairs_bfs(n_vertices, &edge_list);

        let mut support_list = Vec::with_capacity(supports.len());
        for s in supports {
            if s.is_empty() {
                return Err(Error::InvalidLattice("empty support".into()));
            }
            let mut s = s;
            for &v in &s {
                check_vertex(v)?;
            }
            s.sort_unstable();
            let before = s.len();
            s.dedup();
            if s.len() != before {
                return Err(Error::InvalidLattice(format!("repeated vertex in support {s:?}")));
            }
            support_list.push(s);
        }

        let mut pair_of = vec![usize::MAX; n_vertices];
        let mut pair_list = Vec::with_capacity(pairs.len());
        for (k, [a, b]) in pairs.into_iter().enumerate() {
            check_vertex(a)?;
            check_vertex(b)?;
            if a == b {
                return Err(Error::InvalidLattice(format!("degenerate pair at vertex {a}")));
            }
            if dist[a][b] != Some(1) {
                return Err(Error::InvalidLattice(format!(
                    "pair ({a}, {b}) is not a pair of neighbouring vertices"
                )));
            }
            for v in [a, b] {
                if pair_of[v] != usize::MAX {
                    return Err(Error::InvalidLattice(format!(
                        "vertex {v} belongs to more than one pair"
                    )));
                }
                pair_of[v] = k;
            }
            pair_list.push((a.min(b), a.max(b)));
        }
        if let Some(v) = pair_of.iter().position(|&p| p == usize::MAX) {
            return Err(Error::InvalidLattice(format!("vertex {v} is not covered by any pair")));
        }

        let mut r = 0usize;
        for s in &support_list {
            for (i, &a) in s.iter().enumerate() {
                for &b in &s[i + 1..] {
                    match dist[a][b] {
                        Some(d) => r = r.max(d),
                        None => {
                            return Err(Error::InvalidLattice(format!(
                                "support {s:?} spans disconnected vertices"
                            )))
                        }
                    }
                }
            }
        }
        if let Some(declared) = interaction_length {
            if r > declared {
                return Err(Error::InvalidLattice(format!(
                    "support diameter {r} exceeds interaction length {declared}"
                )));
            }
            r = declared;
        }

        Ok(Self {
            local_dim,
            roles,
            edges: edge_list,
            supports: support_list,
            pairs: pair_list,
            interaction_length: r,
            dist,
            pair_of,
        })
    }

    pub fn local_dim(&self) -> usize {
        self.local_dim
    }

    pub fn n_vertices(&self) -> usize {
        self.roles.len()
    }

    pub fn vertices(&self) -> std::ops::Range<usize> {
        0..self.n_vertices()
    }

    pub fn roles(&self) -> &[VertexRole] {
        &self.roles
    }

    pub fn edges(&self) -> &[(usize, usize)] {
        &self.edges
    }

    pub fn supports(&self) -> &[Vec<usize>] {
        &self.supports
    }

    pub fn pairs(&self) -> &[(usize, usize)] {
        &self.pairs
    }

    pub fn interaction_length(&self) -> usize {
        self.interaction_length
    }

    /// Dimension `d^|V|` of the full tensor-product space, or `None` on overflow.
    pub fn hilbert_dim(&self) -> Option<usize> {
        checked_pow(self.local_dim, self.n_vertices())
    }

    /// The pair containing vertex `v`.
    pub fn pair_of(&self, v: usize) -> usize {
        self.pair_of[v]
    }

    pub fn system_vertices(&self) -> Vec<usize> {
        self.vertices().filter(|&v| self.roles[v] == VertexRole::System).collect()
    }

    pub fn ancilla_vertices(&self) -> Vec<usize> {
        self.vertices().filter(|&v| self.roles[v] == VertexRole::Ancilla).collect()
    }

    pub fn has_ancillas(&self) -> bool {
        self.roles.contains(&VertexRole::Ancilla)
    }

    /// Shortest-path length; `None` when the vertices are disconnected.
    pub fn graph_distance(&self, a: usize, b: usize) -> Result<Option<usize>> {
        if a >= self.n_vertices() || b >= self.n_vertices() {
            return Err(Error::InvalidArgument(format!("vertex out of range: {a}, {b}")));
        }
        Ok(self.dist[a][b])
    }

    /// Distance between two vertex sets, the minimum over member pairs.
    pub fn set_distance(&self, a: &[usize], b: &[usize]) -> Option<usize> {
        a.iter()
            .flat_map(|&u| b.iter().map(move |&v| (u, v)))
            .filter_map(|(u, v)| self.dist[u][v])
            .min()
    }

    /// Largest finite distance; `None` if the graph is disconnected.
    pub fn diameter(&self) -> Option<usize> {
        let mut best = 0;
        for row in &self.dist {
            for d in row {
                best = best.max((*d)?);
            }
        }
        Some(best)
    }

    pub fn pair_vertices(&self, pair: usize) -> [usize; 2] {
        let (a, b) = self.pairs[pair];
        [a, b]
    }

    /// `Λ_μ`: indices of the supports that intersect pair `μ`.
    pub fn supports_touching(&self, pair: usize) -> Vec<usize> {
        let [a, b] = self.pair_vertices(pair);
        (0..self.supports.len())
            .filter(|&k| self.supports[k].contains(&a) || self.supports[k].contains(&b))
            .collect()
    }

    /// Pairs `Υ_N` that share a vertex with at least one support.
    pub fn pairs_touching_supports(&self) -> Vec<usize> {
        let covered: BTreeSet<usize> = self.supports.iter().flatten().copied().collect();
        (0..self.pairs.len())
            .filter(|&p| {
                let [a, b] = self.pair_vertices(p);
                covered.contains(&a) || covered.contains(&b)
            })
            .collect()
    }

    /// Returns a copy with additional supports appended after the existing ones.
    pub fn with_extra_supports(&self, extra: &[Vec<usize>]) -> Result<Self> {
        let mut data = self.to_data();
        data.supports.extend(extra.iter().cloned());
        data.interaction_length = None;
        Self::new(data)
    }

    /// Adds one single-vertex support per system vertex (or per vertex when
    /// no system vertices are marked).
    pub fn with_onsite_supports(&self) -> Result<Self> {
        let targets = if self.system_vertices().is_empty() {
            self.vertices().collect::<Vec<_>>()
        } else {
            self.system_vertices()
        };
        let extra: Vec<Vec<usize>> = targets.into_iter().map(|v| vec![v]).collect();
        self.with_extra_supports(&extra)
    }

    pub fn to_data(&self) -> LatticeData {
        LatticeData {
            local_dim: self.local_dim,
            n_vertices: self.n_vertices(),
            edges: self.edges.iter().map(|&(a, b)| [a, b]).collect(),
            supports: self.supports.clone(),
            pairs: self.pairs.iter().map(|&(a, b)| [a, b]).collect(),
            roles: Some(self.roles.clone()),
            interaction_length: Some(self.interaction_length),
        }
    }
}

impl TryFrom<LatticeData> for Lattice {
    type Error = Error;

    fn try_from(data: LatticeData) -> Result<Self> {
        Lattice::new(data)
    }
}

impl From<Lattice> for LatticeData {
    fn from(lat: Lattice) -> Self {
        lat.to_data()
    }
}

fn checked_pow(base: usize, exp: usize) -> Option<usize> {
    let mut acc = 1usize;
    for _ in 0..exp {
        acc = acc.checked_mul(base)?;
    }
    Some(acc)
}

fn all_pairs_bfs(n: usize, edges: &[(usize, usize)]) -> Vec<Vec<Option<usize>>> {
    let mut adj = vec![Vec::new(); n];
    for &(a, b) in edges {
        adj[a].push(b);
        adj[b].push(a);
    }
    (0..n)
        .map(|src| {
            let mut d = vec![None; n];
            d[src] = Some(0);
            let mut queue = VecDeque::from([src]);
            while let Some(u) = queue.pop_front() {
                let du = d[u].unwrap_or(0);
                for &w in &adj[u] {
                    if d[w].is_none() {
                        d[w] = Some(du + 1);
                        queue.push_back(w);
                    }
                }
            }
            d
        })
        .collect()
}

/// Chain geometries.
///
/// With `thermal = true` every site carries a system vertex `2i` and an
/// ancilla vertex `2i + 1`; the pairs are the system–ancilla pairs and the
/// supports are the nearest-neighbour system edges. Otherwise a PEPS-style
/// layout is built: node `i` owns a left and a right virtual vertex (the end
/// nodes only one), pairs are the inter-node bonds, supports are the nodes.
pub fn build_chain(n_sites: usize, local_dim: usize, thermal: bool) -> Result<Lattice> {
    if n_sites == 0 {
        return Err(Error::InvalidLattice("a chain needs at least one site".into()));
    }
    if thermal {
        let sys = |i: usize| 2 * i;
        let anc = |i: usize| 2 * i + 1;
        let mut edges = Vec::new();
        let mut roles = Vec::new();
        for i in 0..n_sites {
            roles.push(VertexRole::System);
            roles.push(VertexRole::Ancilla);
            edges.push([sys(i), anc(i)]);
            if i + 1 < n_sites {
                edges.push([sys(i), sys(i + 1)]);
            }
        }
        Lattice::new(LatticeData {
            local_dim,
            n_vertices: 2 * n_sites,
            pairs: (0..n_sites).map(|i| [sys(i), anc(i)]).collect(),
            supports: (0..n_sites.saturating_sub(1)).map(|i| vec![sys(i), sys(i + 1)]).collect(),
            edges,
            roles: Some(roles),
            interaction_length: None,
        })
    } else if n_sites == 1 {
        // A lone node holding both ends of one bond.
        Lattice::new(LatticeData {
            local_dim,
            n_vertices: 2,
            edges: vec![[0, 1]],
            supports: vec![vec![0, 1]],
            pairs: vec![[0, 1]],
            roles: None,
            interaction_length: None,
        })
    } else {
        let mut nodes: Vec<Vec<usize>> = Vec::with_capacity(n_sites);
        let mut next = 0;
        for i in 0..n_sites {
            let legs = if i == 0 || i + 1 == n_sites { 1 } else { 2 };
            nodes.push((next..next + legs).collect());
            next += legs;
        }
        let mut edges = Vec::new();
        let mut pairs = Vec::new();
        for (i, node) in nodes.iter().enumerate() {
            if node.len() == 2 {
                edges.push([node[0], node[1]]);
            }
            if i + 1 < n_sites {
                let right = *node.last().unwrap_or(&0);
                let left = nodes[i + 1][0];
                edges.push([right, left]);
                pairs.push([right, left]);
            }
        }
        Lattice::new(LatticeData {
            local_dim,
            n_vertices: next,
            edges,
            supports: nodes,
            pairs,
            roles: None,
            interaction_length: None,
        })
    }
}

/// Open-boundary `rows x cols` grid; same two layouts as [`build_chain`].
/// PEPS nodes carry one virtual vertex per neighbouring node.
pub fn build_grid(rows: usize, cols: usize, local_dim: usize, thermal: bool) -> Result<Lattice> {
    if rows == 0 || cols == 0 {
        return Err(Error::InvalidLattice("grid needs positive extent".into()));
    }
    let site = |r: usize, c: usize| r * cols + c;
    let mut neighbours = Vec::new();
    for r in 0..rows {
        for c in 0..cols {
            if c + 1 < cols {
                neighbours.push((site(r, c), site(r, c + 1)));
            }
            if r + 1 < rows {
                neighbours.push((site(r, c), site(r + 1, c)));
            }
        }
    }
    let n = rows * cols;
    if thermal {
        let mut edges: Vec<[usize; 2]> = (0..n).map(|i| [2 * i, 2 * i + 1]).collect();
        edges.extend(neighbours.iter().map(|&(a, b)| [2 * a, 2 * b]));
        let roles = (0..n).flat_map(|_| [VertexRole::System, VertexRole::Ancilla]).collect();
        return Lattice::new(LatticeData {
            local_dim,
            n_vertices: 2 * n,
            edges,
            supports: neighbours.iter().map(|&(a, b)| vec![2 * a, 2 * b]).collect(),
            pairs: (0..n).map(|i| [2 * i, 2 * i + 1]).collect(),
            roles: Some(roles),
            interaction_length: None,
        });
    }
    if neighbours.is_empty() {
        return build_chain(1, local_dim, false);
    }
    // One virtual vertex per (node, bond) incidence.
    let mut nodes: Vec<Vec<usize>> = vec![Vec::new(); n];
    let mut pairs = Vec::new();
    let mut next = 0;
    for &(a, b) in &neighbours {
        nodes[a].push(next);
        nodes[b].push(next + 1);
        pairs.push([next, next + 1]);
        next += 2;
    }
    let mut edges: Vec<[usize; 2]> = pairs.clone();
    for node in &nodes {
        for (i, &u) in node.iter().enumerate() {
            for &v in &node[i + 1..] {
                edges.push([u, v]);
            }
        }
    }
    Lattice::new(LatticeData {
        local_dim,
        n_vertices: next,
        edges,
        supports: nodes.into_iter().filter(|n| !n.is_empty()).collect(),
        pairs,
        roles: None,
        interaction_length: None,
    })
}

/// A set of support indices (a polymer `Ω ⊆ Λ`).
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct EdgeSet {
    pub members: Vec<usize>,
    /// Whether `Ω ∪ {μ}` is connected for the anchor the set was built against.
    pub connected: bool,
}

impl EdgeSet {
    pub fn new(lat: &Lattice, members: Vec<usize>, anchor: usize) -> Self {
        let mut members = members;
        members.sort_unstable();
        members.dedup();
        let connected = is_connected_anchored(lat, &members, anchor);
        Self { members, connected }
    }

    pub fn len(&self) -> usize {
        self.members.len()
    }

    pub fn is_empty(&self) -> bool {
        self.members.is_empty()
    }

    /// Union of the member supports' vertices, sorted.
    pub fn vertices(&self, lat: &Lattice) -> Vec<usize> {
        let set: BTreeSet<usize> =
            self.members.iter().flat_map(|&k| lat.supports()[k].iter().copied()).collect();
        set.into_iter().collect()
    }
}

fn overlaps(a: &[usize], b: &[usize]) -> bool {
    a.iter().any(|v| b.contains(v))
}

/// Breadth-first check that the hypergraph `Ω ∪ {μ}` is connected, with two
/// members adjacent when they share a vertex. The empty set counts as
/// connected (it is just the anchor).
pub fn is_connected_anchored(lat: &Lattice, members: &[usize], anchor: usize) -> bool {
    let [a, b] = lat.pair_vertices(anchor);
    let mut nodes: Vec<&[usize]> = vec![];
    let anchor_set = [a, b];
    nodes.push(&anchor_set);
    for &k in members {
        nodes.push(&lat.supports()[k]);
    }
    bfs_connected(&nodes)
}

/// Connectivity of the member supports alone.
pub fn is_connected(lat: &Lattice, members: &[usize]) -> bool {
    let nodes: Vec<&[usize]> = members.iter().map(|&k| lat.supports()[k].as_slice()).collect();
    nodes.is_empty() || bfs_connected(&nodes)
}

fn bfs_connected(nodes: &[&[usize]]) -> bool {
    let mut seen = vec![false; nodes.len()];
    seen[0] = true;
    let mut queue = VecDeque::from([0usize]);
    while let Some(i) = queue.pop_front() {
        for j in 0..nodes.len() {
            if !seen[j] && overlaps(nodes[i], nodes[j]) {
                seen[j] = true;
                queue.push_back(j);
            }
        }
    }
    seen.into_iter().all(|s| s)
}

/// All `Ω ⊆ Λ` with `1 ≤ |Ω| ≤ max_size` such that `Ω ∪ {μ}` is connected,
/// ordered by size and then lexicographically. The empty set is prepended
/// only when `include_empty` is set.
pub fn connected_edge_sets(
    lat: &Lattice,
    anchor: usize,
    max_size: usize,
    include_empty: bool,
) -> Result<Vec<EdgeSet>> {
    if anchor >= lat.pairs().len() {
        return Err(Error::InvalidArgument(format!("pair {anchor} out of range")));
    }
    let mut out = Vec::new();
    if include_empty {
        out.push(EdgeSet { members: vec![], connected: true });
    }
    let [a, b] = lat.pair_vertices(anchor);
    let mut level: Vec<Vec<usize>> = (0..lat.supports().len())
        .filter(|&k| overlaps(&lat.supports()[k], &[a, b]))
        .map(|k| vec![k])
        .collect();
    let mut size = 1;
    while size <= max_size && !level.is_empty() {
        level.sort();
        out.extend(level.iter().map(|m| EdgeSet { members: m.clone(), connected: true }));
        if size == max_size {
            break;
        }
        let mut next: HashSet<Vec<usize>> = HashSet::new();
        for set in &level {
            let mut reach: Vec<usize> = set.iter().flat_map(|&k| lat.supports()[k].clone()).collect();
            reach.extend([a, b]);
            for k in 0..lat.supports().len() {
                if set.binary_search(&k).is_err() && overlaps(&lat.supports()[k], &reach) {
                    let mut grown = set.clone();
                    grown.push(k);
                    grown.sort_unstable();
                    next.insert(grown);
                }
            }
        }
        level = next.into_iter().collect();
        size += 1;
    }
    Ok(out)
}

/// Greedy left-to-right split into consecutive runs of pairwise disjoint
/// supports. Returns index groups; concatenated they reproduce `0..n`.
pub fn disjoint_grouping(supports: &[Vec<usize>]) -> Vec<Vec<usize>> {
    let mut groups: Vec<Vec<usize>> = Vec::new();
    let mut current: Vec<usize> = Vec::new();
    for (i, s) in supports.iter().enumerate() {
        if current.iter().any(|&j| overlaps(&supports[j], s)) {
            groups.push(std::mem::take(&mut current));
        }
        current.push(i);
    }
    if !current.is_empty() {
        groups.push(current);
    }
    groups
}

#[cfg(test)]
mod tests {
    use super::*;

    fn brute_force_sets(lat: &Lattice, anchor: usize, max_size: usize) -> Vec<Vec<usize>> {
        let n = lat.supports().len();
        let mut out: Vec<Vec<usize>> = (1u32..(1 << n))
            .map(|mask| (0..n).filter(|k| mask & (1 << k) != 0).collect::<Vec<_>>())
            .filter(|m| m.len() <= max_size && is_connected_anchored(lat, m, anchor))
            .collect();
        out.sort_by(|x, y| x.len().cmp(&y.len()).then(x.cmp(y)));
        out
    }

    #[test]
    fn smallest_thermal_chain() {
        let lat = build_chain(2, 2, true).unwrap();
        assert_eq!(lat.n_vertices(), 4);
        assert_eq!(lat.pairs().len(), 2);
        assert_eq!(lat.supports(), &[vec![0, 2]]);
    }

    #[test]
    fn single_site_thermal_chain() {
        let lat = build_chain(1, 3, true).unwrap();
        assert_eq!(lat.n_vertices(), 2);
        assert_eq!(lat.pairs(), &[(0, 1)]);
        assert!(lat.supports().is_empty());
        assert_eq!(lat.hilbert_dim(), Some(9));
        let with_field = lat.with_onsite_supports().unwrap();
        assert_eq!(with_field.supports(), &[vec![0]]);
    }

    #[test]
    fn three_site_thermal_chain_invariants() {
        let lat = build_chain(3, 2, true).unwrap();
        assert_eq!(lat.supports(), &[vec![0, 2], vec![2, 4]]);
        assert_eq!(lat.interaction_length(), 1);
        // every support vertex sits in exactly one pair
        for s in lat.supports() {
            for &v in s {
                let hits = lat.pairs().iter().filter(|&&(a, b)| a == v || b == v).count();
                assert_eq!(hits, 1);
            }
        }
        assert_eq!(lat.system_vertices(), vec![0, 2, 4]);
        assert_eq!(lat.ancilla_vertices(), vec![1, 3, 5]);
    }

    #[test]
    fn rejects_empty_chain() {
        assert!(build_chain(0, 2, true).is_err());
        assert!(build_chain(0, 2, false).is_err());
    }

    #[test]
    fn peps_chain_layout() {
        let lat = build_chain(4, 2, false).unwrap();
        assert_eq!(lat.n_vertices(), 6);
        assert_eq!(lat.supports(), &[vec![0], vec![1, 2], vec![3, 4], vec![5]]);
        assert_eq!(lat.pairs(), &[(0, 1), (2, 3), (4, 5)]);
        assert_eq!(lat.supports_touching(1), vec![1, 2]);
        let single = build_chain(1, 2, false).unwrap();
        assert_eq!(single.pairs(), &[(0, 1)]);
    }

    #[test]
    fn grid_layouts_validate() {
        let thermal = build_grid(2, 2, 2, true).unwrap();
        assert_eq!(thermal.n_vertices(), 8);
        assert_eq!(thermal.supports().len(), 4);
        let peps = build_grid(2, 2, 2, false).unwrap();
        assert_eq!(peps.pairs().len(), 4);
        assert_eq!(peps.supports().len(), 4);
        assert!(peps.supports().iter().all(|s| s.len() == 2));
    }

    #[test]
    fn distances_on_a_path() {
        let lat = build_chain(3, 2, false).unwrap();
        // vertices 0 - 1 - 2 - 3
        assert_eq!(lat.graph_distance(0, 3).unwrap(), Some(3));
        assert_eq!(lat.graph_distance(2, 2).unwrap(), Some(0));
        assert!(lat.graph_distance(0, 9).is_err());
        let thermal = build_chain(3, 2, true).unwrap();
        assert_eq!(thermal.graph_distance(0, 4).unwrap(), Some(2));
    }

    #[test]
    fn disconnected_vertices_have_infinite_distance() {
        let lat = Lattice::new(LatticeData {
            local_dim: 2,
            n_vertices: 4,
            edges: vec![[0, 1], [2, 3]],
            supports: vec![vec![0], vec![2]],
            pairs: vec![[0, 1], [2, 3]],
            roles: None,
            interaction_length: None,
        })
        .unwrap();
        assert_eq!(lat.graph_distance(0, 3).unwrap(), None);
        assert_eq!(lat.diameter(), None);
    }

    #[test]
    fn floyd_warshall_agrees_with_bfs() {
        let lat = build_grid(4, 1, 2, true).unwrap();
        let n = lat.n_vertices();
        let inf = usize::MAX / 4;
        let mut fw = vec![vec![inf; n]; n];
        for (i, row) in fw.iter_mut().enumerate() {
            row[i] = 0;
        }
        for &(a, b) in lat.edges() {
            fw[a][b] = 1;
            fw[b][a] = 1;
        }
        for k in 0..n {
            for i in 0..n {
                for j in 0..n {
                    if fw[i][k] + fw[k][j] < fw[i][j] {
                        fw[i][j] = fw[i][k] + fw[k][j];
                    }
                }
            }
        }
        for i in 0..n {
            for j in 0..n {
                assert_eq!(lat.graph_distance(i, j).unwrap(), Some(fw[i][j]));
                for k in 0..n {
                    let (ij, ik, kj) = (fw[i][j], fw[i][k], fw[k][j]);
                    assert!(ij <= ik + kj);
                }
            }
        }
    }

    #[test]
    fn rejects_overlapping_pairs_and_uncovered_vertices() {
        let overlapping = LatticeData {
            local_dim: 2,
            n_vertices: 3,
            edges: vec![[0, 1], [1, 2]],
            supports: vec![],
            pairs: vec![[0, 1], [1, 2]],
            roles: None,
            interaction_length: None,
        };
        assert!(Lattice::new(overlapping).is_err());
        let uncovered = LatticeData {
            local_dim: 2,
            n_vertices: 3,
            edges: vec![[0, 1], [1, 2]],
            supports: vec![vec![2]],
            pairs: vec![[0, 1]],
            roles: None,
            interaction_length: None,
        };
        assert!(Lattice::new(uncovered).is_err());
        let too_long = LatticeData {
            local_dim: 2,
            n_vertices: 4,
            edges: vec![[0, 1], [1, 2], [2, 3]],
            supports: vec![vec![0, 3]],
            pairs: vec![[0, 1], [2, 3]],
            roles: None,
            interaction_length: Some(1),
        };
        assert!(Lattice::new(too_long).is_err());
    }

    #[test]
    fn connected_sets_middle_anchor_size_one() {
        let lat = build_chain(3, 2, true).unwrap();
        let sets = connected_edge_sets(&lat, 1, 1, false).unwrap();
        let got: Vec<Vec<usize>> = sets.into_iter().map(|s| s.members).collect();
        assert_eq!(got, vec![vec![0], vec![1]]);
        assert_eq!(got, brute_force_sets(&lat, 1, 1));
    }

    #[test]
    fn connected_sets_empty_convention() {
        let lat = build_chain(3, 2, true).unwrap();
        assert!(connected_edge_sets(&lat, 0, 0, false).unwrap().is_empty());
        let with_empty = connected_edge_sets(&lat, 0, 0, true).unwrap();
        assert_eq!(with_empty.len(), 1);
        assert!(with_empty[0].is_empty());
    }

    #[test]
    fn connected_sets_two_site_chain() {
        let lat = build_chain(2, 2, true).unwrap();
        let sets = connected_edge_sets(&lat, 0, 3, true).unwrap();
        let got: Vec<Vec<usize>> = sets.into_iter().map(|s| s.members).collect();
        assert_eq!(got, vec![vec![], vec![0]]);
    }

    #[test]
    fn connected_sets_match_brute_force() {
        for lat in [
            build_chain(5, 2, true).unwrap(),
            build_grid(2, 3, 2, true).unwrap(),
            build_grid(3, 3, 2, true).unwrap(),
            build_chain(6, 2, false).unwrap(),
        ] {
            assert!(lat.supports().len() <= 12);
            for anchor in 0..lat.pairs().len() {
                for max_size in 0..=lat.supports().len() {
                    let got: Vec<Vec<usize>> = connected_edge_sets(&lat, anchor, max_size, false)
                        .unwrap()
                        .into_iter()
                        .map(|s| s.members)
                        .collect();
                    assert_eq!(got, brute_force_sets(&lat, anchor, max_size));
                }
            }
        }
    }

    #[test]
    fn edge_set_connectivity_flag() {
        let lat = build_chain(5, 2, true).unwrap();
        // supports {0,2},{2,4},{4,6},{6,8}; anchor pair 0 = (0,1)
        assert!(EdgeSet::new(&lat, vec![0, 1], 0).connected);
        assert!(!EdgeSet::new(&lat, vec![0, 2], 0).connected);
        assert!(!EdgeSet::new(&lat, vec![2], 0).connected);
        assert!(is_connected(&lat, &[2, 3]));
        assert!(!is_connected(&lat, &[0, 3]));
    }

    #[test]
    fn grouping_examples() {
        let disjoint = vec![vec![0, 1], vec![2, 3], vec![4, 5]];
        assert_eq!(disjoint_grouping(&disjoint), vec![vec![0, 1, 2]]);
        let same = vec![vec![0, 1]; 3];
        assert_eq!(disjoint_grouping(&same), vec![vec![0], vec![1], vec![2]]);
        let interleaved = vec![vec![0, 1], vec![2, 3], vec![1, 2]];
        let groups = disjoint_grouping(&interleaved);
        assert_eq!(groups, vec![vec![0, 1], vec![2]]);
    }

    #[test]
    fn lattice_serde_round_trip() {
        let lat = build_chain(3, 2, true).unwrap();
        let json = serde_json::to_string(&lat).unwrap();
        let back: Lattice = serde_json::from_str(&json).unwrap();
        assert_eq!(back, lat);
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn grouping_partitions_in_order(raw in proptest::collection::vec(
                proptest::collection::btree_set(0usize..8, 1..4), 1..10)) {
                let supports: Vec<Vec<usize>> = raw.into_iter().map(|s| s.into_iter().collect()).collect();
                let groups = disjoint_grouping(&supports);
                let flat: Vec<usize> = groups.iter().flatten().copied().collect();
                prop_assert_eq!(flat, (0..supports.len()).collect::<Vec<_>>());
                for g in &groups {
                    for (i, &a) in g.iter().enumerate() {
                        for &b in &g[i + 1..] {
                            prop_assert!(!overlaps(&supports[a], &supports[b]));
                        }
                    }
                }
            }
        }
    }
}
