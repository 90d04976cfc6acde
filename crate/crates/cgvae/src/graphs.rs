//! Graph construction and distance featurization.
//!
//! Fine-grained structure graphs are radius graphs under a distance
//! cutoff; the coarse graph is induced by the mapping (beads are
//! connected when any of their atoms are); chemical bond graphs come
//! from a covalent-radius rule. Edge distances are expanded in a sine
//! radial basis `sin(nπd/d_cut)/d` under a smooth cosine cutoff.

use crate::autodiff::Tensor;
use crate::error::{Error, Result};
use crate::geometry::{CgMapping, Conformation};

/// Scaling factor applied to the sum of covalent radii when deducing bonds.
pub const BOND_SCALE: f64 = 1.3;

/// Geometric graph stored as symmetric directed arcs with per-arc distances.
#[derive(Clone, Debug)]
pub struct Graph {
    pub num_nodes: usize,
    arcs: Vec<(usize, usize)>,
    dists: Vec<f64>,
}

impl Graph {
    /// Build from undirected edges; arc distances are recomputed from
    /// `coords`. Arcs are stored in both directions, sorted by (src, dst).
    pub fn from_edges(
        num_nodes: usize,
        edges: &[(usize, usize)],
        coords: &[[f64; 3]],
    ) -> Result<Self> {
        let mut arcs = Vec::with_capacity(edges.len() * 2);
        for &(a, b) in edges {
            if a == b {
                return Err(Error::Shape(format!("self-loop on node {}", a)));
            }
            if a >= num_nodes || b >= num_nodes {
                return Err(Error::Index(format!(
                    "edge ({},{}) out of range 0..{}",
                    a, b, num_nodes
                )));
            }
            arcs.push((a, b));
            arcs.push((b, a));
        }
        arcs.sort_unstable();
        arcs.dedup();
        let dists = arcs
            .iter()
            .map(|&(a, b)| dist(&coords[a], &coords[b]))
            .collect();
        Ok(Graph {
            num_nodes,
            arcs,
            dists,
        })
    }

    /// Directed arcs (both orientations of every edge), sorted.
    pub fn arcs(&self) -> &[(usize, usize)] {
        &self.arcs
    }

    /// Distance per arc, aligned with [`Graph::arcs`].
    pub fn dists(&self) -> &[f64] {
        &self.dists
    }

    pub fn num_arcs(&self) -> usize {
        self.arcs.len()
    }

    /// Undirected edge set as sorted `(lo, hi)` pairs.
    pub fn edges(&self) -> Vec<(usize, usize)> {
        self.arcs.iter().filter(|&&(a, b)| a < b).copied().collect()
    }

    pub fn num_edges(&self) -> usize {
        self.arcs.len() / 2
    }

    /// Arc source indices (for gathers) and destination indices (for
    /// segment sums), as parallel slices into [`Graph::arcs`].
    pub fn sources(&self) -> Vec<usize> {
        self.arcs.iter().map(|&(a, _)| a).collect()
    }

    pub fn targets(&self) -> Vec<usize> {
        self.arcs.iter().map(|&(_, b)| b).collect()
    }
}

fn dist(a: &[f64; 3], b: &[f64; 3]) -> f64 {
    ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2) + (a[2] - b[2]).powi(2)).sqrt()
}

/// Radius graph: edge (i,j) iff `0 < ‖x_i − x_j‖ < cutoff`.
/// Coincident points (distance below 1e-8) are rejected.
pub fn radius_graph(coords: &[[f64; 3]], cutoff: f64) -> Result<Graph> {
    if cutoff <= 0.0 {
        return Err(Error::Config(format!("cutoff must be positive, got {}", cutoff)));
    }
    let n = coords.len();
    let mut edges = Vec::new();
    for i in 0..n {
        for j in (i + 1)..n {
            let d = dist(&coords[i], &coords[j]);
            if d < 1e-8 {
                return Err(Error::DegenerateGeometry(format!(
                    "atoms {} and {} are coincident (d={:e})",
                    i, j, d
                )));
            }
            if d < cutoff {
                edges.push((i, j));
            }
        }
    }
    Graph::from_edges(n, &edges, coords)
}

/// Coarse graph induced by the mapping: beads `I ≠ J` are connected iff
/// some fine-grained edge crosses `C_I × C_J`. Distances come from the
/// bead coordinates; coincident connected beads are rejected.
pub fn induced_cg_graph(
    fg: &Graph,
    map: &CgMapping,
    cg_coords: &[[f64; 3]],
) -> Result<Graph> {
    if fg.num_nodes != map.num_atoms() {
        return Err(Error::Shape(format!(
            "FG graph has {} nodes but mapping expects {}",
            fg.num_nodes,
            map.num_atoms()
        )));
    }
    if cg_coords.len() != map.num_beads() {
        return Err(Error::Shape(format!(
            "{} bead coordinates for {} beads",
            cg_coords.len(),
            map.num_beads()
        )));
    }
    let mut edges = Vec::new();
    for &(i, j) in fg.arcs() {
        let (bi, bj) = (map.bead_of(i), map.bead_of(j));
        if bi < bj {
            edges.push((bi, bj));
        }
    }
    edges.sort_unstable();
    edges.dedup();
    let g = Graph::from_edges(map.num_beads(), &edges, cg_coords)?;
    if let Some(pos) = g.dists().iter().position(|&d| d < 1e-8) {
        let (a, b) = g.arcs()[pos];
        return Err(Error::DegenerateGeometry(format!(
            "connected beads {} and {} are coincident",
            a, b
        )));
    }
    Ok(g)
}

/// Chemical bond graph: atoms bond when their distance is below
/// `1.3 · (r_cov(i) + r_cov(j))`.
pub fn deduce_bond_graph(conf: &Conformation) -> Result<Graph> {
    let n = conf.len();
    let mut edges = Vec::new();
    for i in 0..n {
        for j in (i + 1)..n {
            let threshold = BOND_SCALE
                * (conf.elements[i].covalent_radius() + conf.elements[j].covalent_radius());
            if dist(&conf.coords[i], &conf.coords[j]) < threshold {
                edges.push((i, j));
            }
        }
    }
    Graph::from_edges(n, &edges, &conf.coords)
}

/// All node pairs within `hops` bonds of each other (shortest-path
/// distance in the bond graph), as sorted undirected pairs.
pub fn expand_multihop(bond_graph: &Graph, hops: usize) -> Result<Vec<(usize, usize)>> {
    if hops == 0 {
        return Err(Error::Config("hop count must be at least 1".to_string()));
    }
    let n = bond_graph.num_nodes;
    let mut adj = vec![Vec::new(); n];
    for &(a, b) in bond_graph.arcs() {
        adj[a].push(b);
    }
    let mut pairs = Vec::new();
    let mut depth = vec![usize::MAX; n];
    for start in 0..n {
        // bounded BFS
        depth.iter_mut().for_each(|d| *d = usize::MAX);
        depth[start] = 0;
        let mut frontier = vec![start];
        for level in 1..=hops {
            let mut next = Vec::new();
            for &u in &frontier {
                for &v in &adj[u] {
                    if depth[v] == usize::MAX {
                        depth[v] = level;
                        next.push(v);
                        if start < v {
                            pairs.push((start, v));
                        }
                    }
                }
            }
            frontier = next;
        }
    }
    pairs.sort_unstable();
    Ok(pairs)
}

/// Radial-basis expansion parameters: basis count `K` and cutoff in Å.
#[derive(Clone, Copy, Debug)]
pub struct RbfConfig {
    pub k: usize,
    pub cutoff: f64,
}

impl RbfConfig {
    pub fn new(k: usize, cutoff: f64) -> Result<Self> {
        if k == 0 {
            return Err(Error::Config("RBF basis count must be at least 1".to_string()));
        }
        if cutoff <= 0.0 {
            return Err(Error::Config(format!(
                "RBF cutoff must be positive, got {}",
                cutoff
            )));
        }
        Ok(RbfConfig { k, cutoff })
    }
}

/// Smooth cosine cutoff: `½(cos(πd/d_cut)+1)` below the cutoff, 0 beyond.
pub fn cutoff_filter(d: f64, d_cut: f64) -> f64 {
    if d < d_cut {
        0.5 * ((std::f64::consts::PI * d / d_cut).cos() + 1.0)
    } else {
        0.0
    }
}

/// Expand distances into `E×K` sine radial-basis features
/// `sin(nπd/d_cut)/d · f_cut(d)`, `n = 1..K`. The `d → 0` limit
/// (single-atom beads) is taken by series expansion; negative distances
/// are rejected.
pub fn rbf_features(dists: &[f64], cfg: &RbfConfig) -> Result<Tensor> {
    let mut data = Vec::with_capacity(dists.len() * cfg.k);
    for &d in dists {
        if d < 0.0 {
            return Err(Error::Domain(format!("negative distance {}", d)));
        }
        let f = cutoff_filter(d, cfg.cutoff);
        for n in 1..=cfg.k {
            let a = n as f64 * std::f64::consts::PI / cfg.cutoff;
            let sinc = if d < 1e-6 {
                // sin(ad)/d = a·(1 − (ad)²/6 + …)
                a * (1.0 - (a * d) * (a * d) / 6.0)
            } else {
                (a * d).sin() / d
            };
            data.push(sinc * f);
        }
    }
    Tensor::new(data, &[dists.len(), cfg.k])
}

/// The `n` pooling arcs `i → m(i)` with distances `d_iI = ‖x_i − X_I‖`.
pub fn fg_to_cg_arcs(
    map: &CgMapping,
    fg_coords: &[[f64; 3]],
    cg_coords: &[[f64; 3]],
) -> Result<(Vec<(usize, usize)>, Vec<f64>)> {
    if fg_coords.len() != map.num_atoms() || cg_coords.len() != map.num_beads() {
        return Err(Error::Shape(format!(
            "coordinate counts ({} FG, {} CG) do not match mapping ({} atoms, {} beads)",
            fg_coords.len(),
            cg_coords.len(),
            map.num_atoms(),
            map.num_beads()
        )));
    }
    let mut arcs = Vec::with_capacity(map.num_atoms());
    let mut dists = Vec::with_capacity(map.num_atoms());
    for (i, &b) in map.assign().iter().enumerate() {
        arcs.push((i, b));
        dists.push(dist(&fg_coords[i], &cg_coords[b]));
    }
    Ok((arcs, dists))
}
