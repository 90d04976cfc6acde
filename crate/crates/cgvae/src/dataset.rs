//! Synthetic conformer generator: desk-scale stand-in for MD datasets.
//!
//! Molecules are heavy-atom chains (optionally hydrogen-completed to
//! standard valence) sampled by single-atom Metropolis moves from a
//! classical energy: harmonic bonds at `r₀ = 1.1·(r_cov_i + r_cov_j)`
//! with `k = 300`, harmonic angles at `θ₀ = 109.5°`, and a soft 3-fold
//! torsion potential that gives the chains distinct rotamer states. The
//! generating bond topology is recorded as the ground-truth graph.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::evaluation::dihedral;
use crate::geometry::{Conformation, Element};

pub const BOND_K: f64 = 300.0;
pub const ANGLE_K: f64 = 60.0;
pub const TORSION_K: f64 = 0.25;
const THETA0: f64 = 109.5 * std::f64::consts::PI / 180.0;

/// A molecule's element labels and generating bond graph.
#[derive(Clone, Debug)]
pub struct Topology {
    pub elements: Vec<Element>,
    pub bonds: Vec<(usize, usize)>,
}

/// Frames sharing one topology.
#[derive(Clone, Debug)]
pub struct Trajectory {
    pub elements: Vec<Element>,
    pub bonds: Vec<(usize, usize)>,
    pub frames: Vec<Conformation>,
}

impl Trajectory {
    pub fn new(topology: Topology, frames: Vec<Conformation>) -> Result<Self> {
        for f in &frames {
            if f.elements != topology.elements {
                return Err(Error::Shape(
                    "frames do not share the topology's element order".to_string(),
                ));
            }
        }
        Ok(Trajectory {
            elements: topology.elements,
            bonds: topology.bonds,
            frames,
        })
    }

    /// Wrap frames read from a file; bonds deduced from the first frame.
    pub fn from_frames(frames: Vec<Conformation>) -> Result<Self> {
        let first = frames
            .first()
            .ok_or_else(|| Error::Config("trajectory has no frames".to_string()))?;
        let graph = crate::graphs::deduce_bond_graph(first)?;
        let topology = Topology {
            elements: first.elements.clone(),
            bonds: graph.edges(),
        };
        Trajectory::new(topology, frames)
    }

    pub fn num_atoms(&self) -> usize {
        self.elements.len()
    }
}

/// Generator parameters.
#[derive(Clone, Debug)]
pub struct ToySpec {
    /// Heavy-atom chain as element symbols, e.g. "CCCС" — at least 4.
    pub pattern: Vec<Element>,
    pub hydrogens: bool,
    pub frames: usize,
    /// Temperature-like noise scale; 0 freezes the minimum-energy chain.
    pub noise: f64,
    pub seed: u64,
    /// Sweeps between recorded frames.
    pub decorrelation: usize,
}

impl ToySpec {
    pub fn parse_pattern(pattern: &str) -> Result<Vec<Element>> {
        pattern
            .chars()
            .map(|c| Element::from_symbol(&c.to_string()))
            .collect()
    }

    pub fn chain(pattern: &str, hydrogens: bool, frames: usize, noise: f64, seed: u64) -> Result<Self> {
        let pattern = Self::parse_pattern(pattern)?;
        if pattern.len() < 4 {
            return Err(Error::Config(format!(
                "chain needs at least 4 heavy atoms, got {}",
                pattern.len()
            )));
        }
        if pattern.iter().any(|e| *e == Element::H) {
            return Err(Error::Config("chain pattern must be heavy atoms".to_string()));
        }
        Ok(ToySpec {
            pattern,
            hydrogens,
            frames,
            noise,
            seed,
            decorrelation: 10,
        })
    }
}

fn valence(e: Element) -> usize {
    match e {
        Element::H => 1,
        Element::C => 4,
        Element::N => 3,
        Element::O => 2,
        Element::S => 2,
    }
}

fn bond_r0(a: Element, b: Element) -> f64 {
    1.1 * (a.covalent_radius() + b.covalent_radius())
}

fn normalize(v: [f64; 3]) -> [f64; 3] {
    let n = (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt();
    [v[0] / n, v[1] / n, v[2] / n]
}

fn cross(a: [f64; 3], b: [f64; 3]) -> [f64; 3] {
    [
        a[1] * b[2] - a[2] * b[1],
        a[2] * b[0] - a[0] * b[2],
        a[0] * b[1] - a[1] * b[0],
    ]
}

/// Ideal all-trans zigzag chain with hydrogen completion: the
/// minimum-energy structure of the generator's potential.
pub fn build_chain(pattern: &[Element], hydrogens: bool) -> (Topology, Vec<[f64; 3]>) {
    let h = pattern.len();
    let mut elements: Vec<Element> = pattern.to_vec();
    let mut coords: Vec<[f64; 3]> = Vec::with_capacity(h);
    let mut bonds: Vec<(usize, usize)> = Vec::new();

    // zigzag in the xy-plane with exact θ₀ angles
    let half = (std::f64::consts::PI - THETA0) / 2.0;
    let mut pos = [0.0, 0.0, 0.0];
    coords.push(pos);
    for i in 1..h {
        let r0 = bond_r0(pattern[i - 1], pattern[i]);
        let dir = if i % 2 == 1 {
            [half.cos(), half.sin(), 0.0]
        } else {
            [half.cos(), -half.sin(), 0.0]
        };
        pos = [pos[0] + r0 * dir[0], pos[1] + r0 * dir[1], pos[2] + r0 * dir[2]];
        coords.push(pos);
        bonds.push((i - 1, i));
    }

    if hydrogens {
        let tet = THETA0; // H-X-neighbor angle
        for i in 0..h {
            let free = valence(pattern[i]).saturating_sub(
                bonds.iter().filter(|&&(a, b)| a == i || b == i).count(),
            );
            if free == 0 {
                continue;
            }
            let neighbors: Vec<[f64; 3]> = bonds
                .iter()
                .filter_map(|&(a, b)| {
                    if a == i {
                        Some(normalize([
                            coords[b][0] - coords[i][0],
                            coords[b][1] - coords[i][1],
                            coords[b][2] - coords[i][2],
                        ]))
                    } else if b == i {
                        Some(normalize([
                            coords[a][0] - coords[i][0],
                            coords[a][1] - coords[i][1],
                            coords[a][2] - coords[i][2],
                        ]))
                    } else {
                        None
                    }
                })
                .collect();
            let r0h = bond_r0(pattern[i], Element::H);
            let dirs: Vec<[f64; 3]> = match neighbors.len() {
                1 => {
                    // terminal group: `free` directions on the tetrahedral
                    // cone around the single neighbor
                    let u = neighbors[0];
                    let mut p1 = cross(u, [0.0, 0.0, 1.0]);
                    if (p1[0] * p1[0] + p1[1] * p1[1] + p1[2] * p1[2]) < 1e-6 {
                        p1 = cross(u, [0.0, 1.0, 0.0]);
                    }
                    let p1 = normalize(p1);
                    let p2 = cross(u, p1);
                    (0..free)
                        .map(|k| {
                            let phi = 2.0 * std::f64::consts::PI * k as f64 / free.max(1) as f64;
                            normalize([
                                tet.cos() * u[0] + tet.sin() * (phi.cos() * p1[0] + phi.sin() * p2[0]),
                                tet.cos() * u[1] + tet.sin() * (phi.cos() * p1[1] + phi.sin() * p2[1]),
                                tet.cos() * u[2] + tet.sin() * (phi.cos() * p1[2] + phi.sin() * p2[2]),
                            ])
                        })
                        .collect()
                }
                2 => {
                    // in-chain group: directions symmetric about the
                    // neighbor plane
                    let (u1, u2) = (neighbors[0], neighbors[1]);
                    let bisector = normalize([-(u1[0] + u2[0]), -(u1[1] + u2[1]), -(u1[2] + u2[2])]);
                    let perp = normalize(cross(u1, u2));
                    let alpha = THETA0 / 2.0;
                    match free {
                        1 => vec![bisector],
                        _ => vec![
                            normalize([
                                alpha.cos() * bisector[0] + alpha.sin() * perp[0],
                                alpha.cos() * bisector[1] + alpha.sin() * perp[1],
                                alpha.cos() * bisector[2] + alpha.sin() * perp[2],
                            ]),
                            normalize([
                                alpha.cos() * bisector[0] - alpha.sin() * perp[0],
                                alpha.cos() * bisector[1] - alpha.sin() * perp[1],
                                alpha.cos() * bisector[2] - alpha.sin() * perp[2],
                            ]),
                        ],
                    }
                }
                _ => vec![],
            };
            for d in dirs.into_iter().take(free) {
                let idx = elements.len();
                elements.push(Element::H);
                coords.push([
                    coords[i][0] + r0h * d[0],
                    coords[i][1] + r0h * d[1],
                    coords[i][2] + r0h * d[2],
                ]);
                bonds.push((i, idx));
            }
        }
    }

    // canonical sorted (lo,hi) form, matching Graph::edges()
    for b in bonds.iter_mut() {
        *b = (b.0.min(b.1), b.0.max(b.1));
    }
    bonds.sort_unstable();

    (Topology { elements, bonds }, coords)
}

struct ForceField {
    bonds: Vec<(usize, usize, f64)>,
    angles: Vec<(usize, usize, usize)>,
    torsions: Vec<(usize, usize, usize, usize)>,
    atom_bonds: Vec<Vec<usize>>,
    atom_angles: Vec<Vec<usize>>,
    atom_torsions: Vec<Vec<usize>>,
}

impl ForceField {
    fn build(topo: &Topology) -> Self {
        let n = topo.elements.len();
        let mut adj = vec![Vec::new(); n];
        for &(a, b) in &topo.bonds {
            adj[a].push(b);
            adj[b].push(a);
        }
        let bonds: Vec<(usize, usize, f64)> = topo
            .bonds
            .iter()
            .map(|&(a, b)| (a, b, bond_r0(topo.elements[a], topo.elements[b])))
            .collect();
        let mut angles = Vec::new();
        for (center, nbrs) in adj.iter().enumerate() {
            for x in 0..nbrs.len() {
                for y in (x + 1)..nbrs.len() {
                    angles.push((nbrs[x], center, nbrs[y]));
                }
            }
        }
        let mut torsions = Vec::new();
        for &(b, c) in &topo.bonds {
            for &a in &adj[b] {
                if a == c {
                    continue;
                }
                for &d in &adj[c] {
                    if d == b || d == a {
                        continue;
                    }
                    torsions.push((a, b, c, d));
                }
            }
        }
        let mut atom_bonds = vec![Vec::new(); n];
        for (k, &(a, b, _)) in bonds.iter().enumerate() {
            atom_bonds[a].push(k);
            atom_bonds[b].push(k);
        }
        let mut atom_angles = vec![Vec::new(); n];
        for (k, &(a, b, c)) in angles.iter().enumerate() {
            for i in [a, b, c] {
                atom_angles[i].push(k);
            }
        }
        let mut atom_torsions = vec![Vec::new(); n];
        for (k, &(a, b, c, d)) in torsions.iter().enumerate() {
            for i in [a, b, c, d] {
                atom_torsions[i].push(k);
            }
        }
        ForceField {
            bonds,
            angles,
            torsions,
            atom_bonds,
            atom_angles,
            atom_torsions,
        }
    }

    fn bond_energy(&self, coords: &[[f64; 3]], k: usize) -> f64 {
        let (a, b, r0) = self.bonds[k];
        let d: f64 = (0..3)
            .map(|i| (coords[a][i] - coords[b][i]).powi(2))
            .sum::<f64>()
            .sqrt();
        0.5 * BOND_K * (d - r0).powi(2)
    }

    fn angle_energy(&self, coords: &[[f64; 3]], k: usize) -> f64 {
        let (a, b, c) = self.angles[k];
        let u = [
            coords[a][0] - coords[b][0],
            coords[a][1] - coords[b][1],
            coords[a][2] - coords[b][2],
        ];
        let v = [
            coords[c][0] - coords[b][0],
            coords[c][1] - coords[b][1],
            coords[c][2] - coords[b][2],
        ];
        let nu = (u[0] * u[0] + u[1] * u[1] + u[2] * u[2]).sqrt();
        let nv = (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt();
        if nu < 1e-10 || nv < 1e-10 {
            return 0.0;
        }
        let cos = ((u[0] * v[0] + u[1] * v[1] + u[2] * v[2]) / (nu * nv)).clamp(-1.0, 1.0);
        0.5 * ANGLE_K * (cos.acos() - THETA0).powi(2)
    }

    fn torsion_energy(&self, coords: &[[f64; 3]], k: usize) -> f64 {
        let (a, b, c, d) = self.torsions[k];
        match dihedral(&coords[a], &coords[b], &coords[c], &coords[d]) {
            Ok(phi) => TORSION_K * (1.0 + (3.0 * phi).cos()),
            Err(_) => 0.0,
        }
    }

    /// Energy of all terms touching one atom.
    fn local_energy(&self, coords: &[[f64; 3]], atom: usize) -> f64 {
        let mut e = 0.0;
        for &k in &self.atom_bonds[atom] {
            e += self.bond_energy(coords, k);
        }
        for &k in &self.atom_angles[atom] {
            e += self.angle_energy(coords, k);
        }
        for &k in &self.atom_torsions[atom] {
            e += self.torsion_energy(coords, k);
        }
        e
    }
}

/// Sample a trajectory by Metropolis Monte Carlo from the chain potential.
pub fn gen_toy_trajectory(spec: &ToySpec) -> Result<Trajectory> {
    if spec.pattern.len() < 4 {
        return Err(Error::Config("chain needs at least 4 heavy atoms".to_string()));
    }
    if spec.noise < 0.0 {
        return Err(Error::Config("noise scale must be non-negative".to_string()));
    }
    let (topo, ideal) = build_chain(&spec.pattern, spec.hydrogens);
    let n = topo.elements.len();

    if spec.noise == 0.0 {
        let frame = Conformation::new(topo.elements.clone(), ideal)?;
        return Trajectory::new(topo, vec![frame; spec.frames]);
    }

    let ff = ForceField::build(&topo);
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut coords = ideal;
    let step = (spec.noise / BOND_K).sqrt();
    let mut accepted = 0u64;
    let mut proposed = 0u64;

    let mut sweep = |coords: &mut Vec<[f64; 3]>, rng: &mut ChaCha8Rng, accepted: &mut u64, proposed: &mut u64| {
        for atom in 0..n {
            let before = ff.local_energy(coords, atom);
            let old = coords[atom];
            for k in 0..3 {
                coords[atom][k] += step * rng.sample::<f64, _>(StandardNormal);
            }
            let delta = ff.local_energy(coords, atom) - before;
            *proposed += 1;
            if delta <= 0.0 || rng.gen_range(0.0..1.0) < (-delta / spec.noise).exp() {
                *accepted += 1;
            } else {
                coords[atom] = old;
            }
        }
    };

    for _ in 0..100 {
        sweep(&mut coords, &mut rng, &mut accepted, &mut proposed);
    }
    let mut frames = Vec::with_capacity(spec.frames);
    for k in 0..spec.frames {
        for _ in 0..spec.decorrelation.max(1) {
            sweep(&mut coords, &mut rng, &mut accepted, &mut proposed);
        }
        // record in a random lab orientation: tumbling decorrelates the
        // global frame the way long MD trajectories do
        let q = crate::geometry::random_rotation(&mut rng);
        let g = [
            rng.gen_range(-3.0..3.0),
            rng.gen_range(-3.0..3.0),
            rng.gen_range(-3.0..3.0),
        ];
        let recorded = crate::geometry::apply_isometry(&coords, &q, &g)?;
        frames.push(Conformation::new(topo.elements.clone(), recorded)?);
        if k == 0 && (accepted as f64) < 0.01 * proposed as f64 {
            return Err(Error::Generator(format!(
                "acceptance rate {:.4} below 1%",
                accepted as f64 / proposed as f64
            )));
        }
    }
    if (accepted as f64) < 0.01 * proposed as f64 {
        return Err(Error::Generator(format!(
            "acceptance rate {:.4} below 1%",
            accepted as f64 / proposed as f64
        )));
    }
    Trajectory::new(topo, frames)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graphs::deduce_bond_graph;

    #[test]
    fn zero_noise_freezes_the_minimum() {
        let spec = ToySpec::chain("CCCC", true, 5, 0.0, 1).unwrap();
        let traj = gen_toy_trajectory(&spec).unwrap();
        assert_eq!(traj.frames.len(), 5);
        for f in &traj.frames[1..] {
            assert_eq!(f.coords, traj.frames[0].coords);
        }
        // butane-like: 4 carbons + 10 hydrogens
        assert_eq!(traj.num_atoms(), 14);
    }

    #[test]
    fn generated_bonds_match_topology() {
        let spec = ToySpec::chain("CCCCCCCCCC", true, 60, 0.25, 3).unwrap();
        let traj = gen_toy_trajectory(&spec).unwrap();
        assert_eq!(traj.num_atoms(), 32); // 10 C + 22 H
        let mut matching = 0;
        for f in &traj.frames {
            let g = deduce_bond_graph(f).unwrap();
            if g.edges() == traj.bonds {
                matching += 1;
            }
        }
        assert!(
            matching as f64 >= 0.99 * traj.frames.len() as f64,
            "only {}/{} frames reproduce the generating topology",
            matching,
            traj.frames.len()
        );
    }

    #[test]
    fn bond_lengths_concentrate_near_r0() {
        let spec = ToySpec::chain("CCCCC", false, 150, 0.25, 7).unwrap();
        let traj = gen_toy_trajectory(&spec).unwrap();
        let r0 = bond_r0(Element::C, Element::C);
        let mut sum = 0.0;
        let mut count = 0;
        for f in &traj.frames {
            for &(a, b) in &traj.bonds {
                let d: f64 = (0..3)
                    .map(|k| (f.coords[a][k] - f.coords[b][k]).powi(2))
                    .sum::<f64>()
                    .sqrt();
                sum += d;
                count += 1;
            }
        }
        let mean = sum / count as f64;
        assert!(
            (mean - r0).abs() / r0 < 0.02,
            "mean bond length {} vs r0 {}",
            mean,
            r0
        );
    }

    #[test]
    fn frames_are_conformationally_diverse() {
        let spec = ToySpec::chain("CCCCCC", false, 120, 0.25, 11).unwrap();
        let traj = gen_toy_trajectory(&spec).unwrap();
        // central torsion angle should spread over the rotamer wells
        let mut angles = Vec::new();
        for f in &traj.frames {
            if let Ok(a) = dihedral(&f.coords[1], &f.coords[2], &f.coords[3], &f.coords[4]) {
                angles.push(a);
            }
        }
        let spread = angles.iter().cloned().fold(f64::NEG_INFINITY, f64::max)
            - angles.iter().cloned().fold(f64::INFINITY, f64::min);
        assert!(spread > 0.5, "torsions barely move (spread {})", spread);
    }

    #[test]
    fn pattern_validation() {
        assert!(ToySpec::chain("CC", true, 5, 0.1, 1).is_err()); // too short
        assert!(ToySpec::chain("CCHC", true, 5, 0.1, 1).is_err()); // H in pattern
        assert!(ToySpec::chain("CCXC", true, 5, 0.1, 1).is_err()); // unknown element
        assert!(ToySpec::chain("CCOC", true, 5, 0.1, 1).is_ok());
    }

    #[test]
    fn valence_completion_counts() {
        let (topo, _) = build_chain(&ToySpec::parse_pattern("COC C".trim().replace(' ', "").as_str()).unwrap(), true);
        // C-O-C-C: terminal C gets 3 H, O gets 0 (2 heavy bonds), inner C 2 H, terminal C 3 H
        let h_count = topo.elements.iter().filter(|&&e| e == Element::H).count();
        assert_eq!(h_count, 3 + 0 + 2 + 3);
    }

    #[test]
    fn trajectory_checks_element_order() {
        let (topo, coords) = build_chain(&ToySpec::parse_pattern("CCCC").unwrap(), false);
        let good = Conformation::new(topo.elements.clone(), coords.clone()).unwrap();
        let bad = Conformation::new(vec![Element::O; 4], coords).unwrap();
        assert!(Trajectory::new(topo.clone(), vec![good]).is_ok());
        assert!(Trajectory::new(topo, vec![bad]).is_err());
    }
}
