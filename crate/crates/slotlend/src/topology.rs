//! Static network topology: random geometric graphs on a square deployment
//! area, exact hop-distance queries, and the 1/2/3-hop neighbor sets every
//! node is assumed to know.
//!
//! Nodes never move after placement; everything here is immutable once built.

use std::collections::VecDeque;
use std::fmt::Write as _;
use std::path::Path;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

/// Index of a node in the deployment, dense in `0..n`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct NodeId(pub u32);

impl NodeId {
    pub fn idx(self) -> usize {
        self.0 as usize
    }
}

impl std::fmt::Display for NodeId {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}", self.0)
    }
}

#[derive(Debug, Error)]
pub enum TopologyError {
    #[error("topology file truncated: expected {expected}, got {got}")]
    Truncated { expected: &'static str, got: String },
    #[error("malformed line {line}: {reason}")]
    Malformed { line: usize, reason: String },
    #[error("edge ({0}, {1}) references a node outside 0..{2}")]
    EdgeOutOfRange(u32, u32, usize),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Immutable unit-disk communication graph over a square area.
///
/// `nbrs[k][v]` holds the nodes at hop distance exactly `k + 1` from `v`,
/// sorted ascending. These are the neighbor tables a deployed node would
/// learn during setup; the simulator grants every node read access to its
/// own rows only.
#[derive(Debug, Clone)]
pub struct Topology {
    positions: Vec<(f64, f64)>,
    radius: f64,
    area_side: f64,
    seed: u64,
    adjacency: Vec<Vec<NodeId>>,
    nbrs: [Vec<Vec<NodeId>>; 3],
    max_degree: usize,
}

impl Topology {
    /// Places `n` nodes uniformly at random on `[0, area_side]^2` and links
    /// every pair at Euclidean distance `<= radius`. Deterministic in `seed`:
    /// positions are drawn in node-id order, x before y.
    pub fn generate_geometric(n: usize, area_side: f64, radius: f64, seed: u64) -> Topology {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let positions: Vec<(f64, f64)> = (0..n)
            .map(|_| {
                let x: f64 = rng.gen::<f64>() * area_side;
                let y: f64 = rng.gen::<f64>() * area_side;
                (x, y)
            })
            .collect();
        Self::from_positions(positions, radius, area_side, seed)
    }

    /// Builds the graph from explicit positions (tests, file loads).
    pub fn from_positions(
        positions: Vec<(f64, f64)>,
        radius: f64,
        area_side: f64,
        seed: u64,
    ) -> Topology {
        let n = positions.len();
        let mut adjacency = vec![Vec::new(); n];
        for u in 0..n {
            for v in (u + 1)..n {
                let dx = positions[u].0 - positions[v].0;
                let dy = positions[u].1 - positions[v].1;
                if (dx * dx + dy * dy).sqrt() <= radius {
                    adjacency[u].push(NodeId(v as u32));
                    adjacency[v].push(NodeId(u as u32));
                }
            }
        }
        for row in &mut adjacency {
            row.sort_unstable();
        }
        let max_degree = adjacency.iter().map(Vec::len).max().unwrap_or(0);
        let nbrs = Self::neighbor_tables(&adjacency);
        Topology {
            positions,
            radius,
            area_side,
            seed,
            adjacency,
            nbrs,
            max_degree,
        }
    }

    /// BFS from every node, truncated at depth 3; one pass fills all tables.
    fn neighbor_tables(adjacency: &[Vec<NodeId>]) -> [Vec<Vec<NodeId>>; 3] {
        let n = adjacency.len();
        let mut tables = [vec![Vec::new(); n], vec![Vec::new(); n], vec![Vec::new(); n]];
        let mut dist = vec![u32::MAX; n];
        for src in 0..n {
            dist.iter_mut().for_each(|d| *d = u32::MAX);
            dist[src] = 0;
            let mut queue = VecDeque::from([NodeId(src as u32)]);
            while let Some(u) = queue.pop_front() {
                let du = dist[u.idx()];
                if du >= 3 {
                    continue;
                }
                for &v in &adjacency[u.idx()] {
                    if dist[v.idx()] == u32::MAX {
                        dist[v.idx()] = du + 1;
                        tables[du as usize][src].push(v);
                        queue.push_back(v);
                    }
                }
            }
            for table in tables.iter_mut() {
                table[src].sort_unstable();
            }
        }
        tables
    }

    pub fn len(&self) -> usize {
        self.positions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.positions.is_empty()
    }

    pub fn radius(&self) -> f64 {
        self.radius
    }

    pub fn area_side(&self) -> f64 {
        self.area_side
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn position(&self, v: NodeId) -> (f64, f64) {
        self.positions[v.idx()]
    }

    /// 1-hop neighbors (the broadcast domain of `v`), sorted ascending.
    pub fn adjacent(&self, v: NodeId) -> &[NodeId] {
        &self.adjacency[v.idx()]
    }

    pub fn degree(&self, v: NodeId) -> usize {
        self.adjacency[v.idx()].len()
    }

    /// Network-wide maximum degree (the Δ in lease-duration formulas).
    pub fn max_degree(&self) -> usize {
        self.max_degree
    }

    pub fn node_ids(&self) -> impl Iterator<Item = NodeId> + '_ {
        (0..self.len() as u32).map(NodeId)
    }

    /// Nodes at hop distance exactly `hops` from `v`, for `hops` in `1..=3`.
    /// The three sets are pairwise disjoint and exclude `v` itself.
    ///
    /// # Panics
    /// If `hops` is outside `1..=3`; deployed nodes only ever know that far.
    pub fn neighbors_exact(&self, v: NodeId, hops: u32) -> &[NodeId] {
        assert!((1..=3).contains(&hops), "neighbor tables cover hops 1..=3, got {hops}");
        &self.nbrs[(hops - 1) as usize][v.idx()]
    }

    /// Exact hop distance between `u` and `v` via BFS, unbounded depth.
    /// `None` means unreachable (distinct connected components).
    pub fn hop_distance(&self, u: NodeId, v: NodeId) -> Option<u32> {
        if u == v {
            return Some(0);
        }
        let mut dist = vec![u32::MAX; self.len()];
        dist[u.idx()] = 0;
        let mut queue = VecDeque::from([u]);
        while let Some(w) = queue.pop_front() {
            for &x in &self.adjacency[w.idx()] {
                if dist[x.idx()] == u32::MAX {
                    dist[x.idx()] = dist[w.idx()] + 1;
                    if x == v {
                        return Some(dist[x.idx()]);
                    }
                    queue.push_back(x);
                }
            }
        }
        None
    }

    /// True iff `hop_distance(u, v) <= 2`; the interference predicate used
    /// all over the protocol. Cheap: consults the precomputed tables.
    pub fn within_two_hops(&self, u: NodeId, v: NodeId) -> bool {
        u == v
            || self.nbrs[0][u.idx()].binary_search(&v).is_ok()
            || self.nbrs[1][u.idx()].binary_search(&v).is_ok()
    }

    /// Connected components as sorted lists of nodes, largest first (ties:
    /// smallest member id first).
    pub fn components(&self) -> Vec<Vec<NodeId>> {
        let mut seen = vec![false; self.len()];
        let mut comps = Vec::new();
        for s in 0..self.len() {
            if seen[s] {
                continue;
            }
            seen[s] = true;
            let mut comp = vec![NodeId(s as u32)];
            let mut queue = VecDeque::from([NodeId(s as u32)]);
            while let Some(u) = queue.pop_front() {
                for &v in &self.adjacency[u.idx()] {
                    if !seen[v.idx()] {
                        seen[v.idx()] = true;
                        comp.push(v);
                        queue.push_back(v);
                    }
                }
            }
            comp.sort_unstable();
            comps.push(comp);
        }
        comps.sort_by(|a, b| b.len().cmp(&a.len()).then(a[0].cmp(&b[0])));
        comps
    }

    /// Serializes to the exchange format:
    ///
    /// ```text
    /// n radius area_side seed
    /// id x y          (n lines)
    /// u v             (one line per edge, u < v, sorted)
    /// ```
    ///
    /// Floats use shortest round-trip formatting, so `save` -> `load` is
    /// byte-exact in both directions.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        writeln!(out, "{} {} {} {}", self.len(), self.radius, self.area_side, self.seed).unwrap();
        for (i, (x, y)) in self.positions.iter().enumerate() {
            writeln!(out, "{i} {x} {y}").unwrap();
        }
        for u in 0..self.len() {
            for &v in &self.adjacency[u] {
                if v.idx() > u {
                    writeln!(out, "{u} {v}").unwrap();
                }
            }
        }
        out
    }

    pub fn from_text(text: &str) -> Result<Topology, TopologyError> {
        let mut lines = text.lines().enumerate();
        let (_, header) = lines.next().ok_or(TopologyError::Truncated {
            expected: "header line",
            got: "empty input".into(),
        })?;
        let fields: Vec<&str> = header.split_whitespace().collect();
        if fields.len() != 4 {
            return Err(TopologyError::Malformed {
                line: 1,
                reason: format!("header needs `n radius area_side seed`, got {} fields", fields.len()),
            });
        }
        let parse_err = |line: usize, what: &str| TopologyError::Malformed {
            line,
            reason: format!("cannot parse {what}"),
        };
        let n: usize = fields[0].parse().map_err(|_| parse_err(1, "n"))?;
        let radius: f64 = fields[1].parse().map_err(|_| parse_err(1, "radius"))?;
        let area_side: f64 = fields[2].parse().map_err(|_| parse_err(1, "area_side"))?;
        let seed: u64 = fields[3].parse().map_err(|_| parse_err(1, "seed"))?;

        let mut positions = vec![(f64::NAN, f64::NAN); n];
        for _ in 0..n {
            let (lineno, line) = lines.next().ok_or(TopologyError::Truncated {
                expected: "node line",
                got: "end of input".into(),
            })?;
            let f: Vec<&str> = line.split_whitespace().collect();
            if f.len() != 3 {
                return Err(TopologyError::Malformed {
                    line: lineno + 1,
                    reason: format!("node line needs `id x y`, got {} fields", f.len()),
                });
            }
            let id: usize = f[0].parse().map_err(|_| parse_err(lineno + 1, "node id"))?;
            if id >= n {
                return Err(TopologyError::Malformed {
                    line: lineno + 1,
                    reason: format!("node id {id} out of range 0..{n}"),
                });
            }
            let x: f64 = f[1].parse().map_err(|_| parse_err(lineno + 1, "x"))?;
            let y: f64 = f[2].parse().map_err(|_| parse_err(lineno + 1, "y"))?;
            positions[id] = (x, y);
        }

        // Edges in the file are authoritative; rebuild adjacency from them
        // rather than re-deriving from distances, then cross-check nothing
        // structural is missing (node count, ranges).
        let mut adjacency = vec![Vec::new(); n];
        for (lineno, line) in lines {
            if line.trim().is_empty() {
                continue;
            }
            let f: Vec<&str> = line.split_whitespace().collect();
            if f.len() != 2 {
                return Err(TopologyError::Malformed {
                    line: lineno + 1,
                    reason: format!("edge line needs `u v`, got {} fields", f.len()),
                });
            }
            let u: u32 = f[0].parse().map_err(|_| parse_err(lineno + 1, "u"))?;
            let v: u32 = f[1].parse().map_err(|_| parse_err(lineno + 1, "v"))?;
            if u as usize >= n || v as usize >= n {
                return Err(TopologyError::EdgeOutOfRange(u, v, n));
            }
            adjacency[u as usize].push(NodeId(v));
            adjacency[v as usize].push(NodeId(u));
        }
        for row in &mut adjacency {
            row.sort_unstable();
            row.dedup();
        }
        let max_degree = adjacency.iter().map(Vec::len).max().unwrap_or(0);
        let nbrs = Self::neighbor_tables(&adjacency);
        Ok(Topology {
            positions,
            radius,
            area_side,
            seed,
            adjacency,
            nbrs,
            max_degree,
        })
    }

    pub fn save(&self, path: &Path) -> Result<(), TopologyError> {
        std::fs::write(path, self.to_text())?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Topology, TopologyError> {
        Self::from_text(&std::fs::read_to_string(path)?)
    }
}

/// Builds a topology from an explicit edge list; positions are synthetic
/// (nodes don't move and distances are never re-derived from them). Intended
/// for tests and small fixtures where the graph shape is what matters.
pub fn from_edges(n: usize, edges: &[(u32, u32)]) -> Topology {
    let positions = (0..n).map(|i| (i as f64, 0.0)).collect();
    let mut t = Topology::from_positions(positions, -1.0, n as f64, 0);
    let mut adjacency = vec![Vec::new(); n];
    for &(u, v) in edges {
        assert!((u as usize) < n && (v as usize) < n && u != v, "bad edge ({u}, {v})");
        adjacency[u as usize].push(NodeId(v));
        adjacency[v as usize].push(NodeId(u));
    }
    for row in &mut adjacency {
        row.sort_unstable();
        row.dedup();
    }
    t.max_degree = adjacency.iter().map(Vec::len).max().unwrap_or(0);
    t.nbrs = Topology::neighbor_tables(&adjacency);
    t.adjacency = adjacency;
    t
}
