//! Coarse-graining algebra: assignment maps, the projection operator `M`,
//! the lift operator `M⁺`, and rigid-motion helpers.
//!
//! A mapping assigns each of `n` atoms to exactly one of `N` beads and
//! carries a non-negative projection weight per atom. The projection
//! operator has entries `M[I,i] = w_i / Σ_{j∈C_I} w_j` for atoms of bead
//! `I` and zero elsewhere, so bead coordinates are weighted averages and
//! the rows of `M` sum to one. The lift operator copies each bead
//! position back to its member atoms; `M·M⁺ = I_N` for positive weights.

use std::fmt;
use std::path::Path;

use rand::Rng;

use crate::autodiff::{Tape, Tensor};
use crate::error::{Error, Result};

/// The five-element vocabulary used throughout the crate.
#[derive(Clone, Copy, PartialEq, Eq, Hash, Debug)]
pub enum Element {
    H,
    C,
    N,
    O,
    S,
}

impl Element {
    pub const ALL: [Element; 5] = [Element::H, Element::C, Element::N, Element::O, Element::S];

    /// Covalent radius in Ångström (Cordero-style table).
    pub fn covalent_radius(self) -> f64 {
        match self {
            Element::H => 0.31,
            Element::C => 0.76,
            Element::N => 0.71,
            Element::O => 0.66,
            Element::S => 1.05,
        }
    }

    /// Standard atomic mass.
    pub fn mass(self) -> f64 {
        match self {
            Element::H => 1.008,
            Element::C => 12.011,
            Element::N => 14.007,
            Element::O => 15.999,
            Element::S => 32.06,
        }
    }

    pub fn symbol(self) -> &'static str {
        match self {
            Element::H => "H",
            Element::C => "C",
            Element::N => "N",
            Element::O => "O",
            Element::S => "S",
        }
    }

    /// Index into the one-hot atom-type vocabulary.
    pub fn type_index(self) -> usize {
        match self {
            Element::H => 0,
            Element::C => 1,
            Element::N => 2,
            Element::O => 3,
            Element::S => 4,
        }
    }

    pub fn from_symbol(s: &str) -> Result<Element> {
        match s {
            "H" => Ok(Element::H),
            "C" => Ok(Element::C),
            "N" => Ok(Element::N),
            "O" => Ok(Element::O),
            "S" => Ok(Element::S),
            other => Err(Error::UnknownElement(other.to_string())),
        }
    }
}

impl fmt::Display for Element {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.symbol())
    }
}

/// One fine-grained frame: element labels plus 3-D coordinates in Å.
#[derive(Clone, Debug)]
pub struct Conformation {
    pub elements: Vec<Element>,
    pub coords: Vec<[f64; 3]>,
}

impl Conformation {
    pub fn new(elements: Vec<Element>, coords: Vec<[f64; 3]>) -> Result<Self> {
        if elements.is_empty() || elements.len() != coords.len() {
            return Err(Error::Shape(format!(
                "conformation needs matching non-empty element/coordinate lists ({} vs {})",
                elements.len(),
                coords.len()
            )));
        }
        if coords.iter().flatten().any(|v| !v.is_finite()) {
            return Err(Error::Domain("non-finite coordinate".to_string()));
        }
        Ok(Conformation { elements, coords })
    }

    pub fn len(&self) -> usize {
        self.elements.len()
    }

    pub fn is_empty(&self) -> bool {
        self.elements.is_empty()
    }

    /// Unweighted geometric center.
    pub fn centroid(&self) -> [f64; 3] {
        centroid(&self.coords)
    }
}

/// One coarse-grained frame: bead coordinates in Å.
#[derive(Clone, Debug)]
pub struct CgConformation {
    pub coords: Vec<[f64; 3]>,
}

impl CgConformation {
    pub fn len(&self) -> usize {
        self.coords.len()
    }

    pub fn is_empty(&self) -> bool {
        self.coords.is_empty()
    }
}

/// Which per-atom projection weights to use when building a mapping.
#[derive(Clone, Copy, PartialEq, Eq, Debug)]
pub enum WeightMode {
    /// `w_i = 1`: beads sit at centers of geometry.
    Uniform,
    /// `w_i = m_i`: beads sit at centers of mass.
    Mass,
}

impl WeightMode {
    pub fn parse(s: &str) -> Result<WeightMode> {
        match s {
            "uniform" => Ok(WeightMode::Uniform),
            "mass" => Ok(WeightMode::Mass),
            other => Err(Error::Config(format!(
                "unknown weight mode '{}', expected 'uniform' or 'mass'",
                other
            ))),
        }
    }
}

/// Surjective atom→bead assignment with per-atom projection weights.
#[derive(Clone, Debug, PartialEq)]
pub struct CgMapping {
    assign: Vec<usize>,
    weights: Vec<f64>,
    num_beads: usize,
}

impl CgMapping {
    pub fn new(assign: Vec<usize>, weights: Vec<f64>, num_beads: usize) -> Result<Self> {
        if assign.is_empty() || assign.len() != weights.len() {
            return Err(Error::InvalidMapping(format!(
                "assignment/weight lengths differ ({} vs {})",
                assign.len(),
                weights.len()
            )));
        }
        if num_beads == 0 {
            return Err(Error::InvalidMapping("no beads".to_string()));
        }
        if let Some(&bad) = assign.iter().find(|&&b| b >= num_beads) {
            return Err(Error::InvalidMapping(format!(
                "bead index {} out of range 0..{}",
                bad, num_beads
            )));
        }
        if weights.iter().any(|w| !w.is_finite() || *w < 0.0) {
            return Err(Error::InvalidMapping(
                "weights must be finite and non-negative".to_string(),
            ));
        }
        let mut totals = vec![0.0; num_beads];
        let mut counts = vec![0usize; num_beads];
        for (&b, &w) in assign.iter().zip(weights.iter()) {
            totals[b] += w;
            counts[b] += 1;
        }
        if let Some(empty) = counts.iter().position(|&c| c == 0) {
            return Err(Error::InvalidMapping(format!("bead {} has no atoms", empty)));
        }
        if let Some(zero) = totals.iter().position(|&t| t <= 0.0) {
            return Err(Error::InvalidMapping(format!(
                "bead {} has zero total weight",
                zero
            )));
        }
        Ok(CgMapping {
            assign,
            weights,
            num_beads,
        })
    }

    /// Uniform weights (`w_i = 1` everywhere).
    pub fn uniform(assign: Vec<usize>, num_beads: usize) -> Result<Self> {
        let n = assign.len();
        Self::new(assign, vec![1.0; n], num_beads)
    }

    /// Weights taken from `mode` applied to the element labels.
    pub fn with_mode(
        assign: Vec<usize>,
        num_beads: usize,
        elements: &[Element],
        mode: WeightMode,
    ) -> Result<Self> {
        if elements.len() != assign.len() {
            return Err(Error::InvalidMapping(
                "element list does not match assignment length".to_string(),
            ));
        }
        let weights = match mode {
            WeightMode::Uniform => vec![1.0; assign.len()],
            WeightMode::Mass => elements.iter().map(|e| e.mass()).collect(),
        };
        Self::new(assign, weights, num_beads)
    }

    /// Contiguous blocks of near-equal size, atoms in index order.
    pub fn contiguous(n: usize, num_beads: usize) -> Result<Self> {
        if num_beads == 0 || num_beads > n {
            return Err(Error::InvalidMapping(format!(
                "cannot split {} atoms into {} beads",
                n, num_beads
            )));
        }
        let assign = (0..n).map(|i| i * num_beads / n).collect();
        Self::uniform(assign, num_beads)
    }

    pub fn num_atoms(&self) -> usize {
        self.assign.len()
    }

    pub fn num_beads(&self) -> usize {
        self.num_beads
    }

    pub fn assign(&self) -> &[usize] {
        &self.assign
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn bead_of(&self, atom: usize) -> usize {
        self.assign[atom]
    }

    /// Member atoms of each bead, in ascending atom order (the ordered
    /// sets `C_I` used for channel selection).
    pub fn beads(&self) -> Vec<Vec<usize>> {
        let mut beads = vec![Vec::new(); self.num_beads];
        for (i, &b) in self.assign.iter().enumerate() {
            beads[b].push(i);
        }
        beads
    }

    /// Position of each atom inside its ordered bead set `C_I`.
    pub fn channel_index(&self) -> Vec<usize> {
        let mut next = vec![0usize; self.num_beads];
        let mut idx = Vec::with_capacity(self.assign.len());
        for &b in &self.assign {
            idx.push(next[b]);
            next[b] += 1;
        }
        idx
    }

    /// Largest bead size (how many vector channels the decoder must select from).
    pub fn max_bead_size(&self) -> usize {
        let mut counts = vec![0usize; self.num_beads];
        for &b in &self.assign {
            counts[b] += 1;
        }
        counts.into_iter().max().unwrap_or(0)
    }

    /// `w_i / Σ_{j ∈ C_{m(i)}} w_j` for each atom — the nonzero entries of `M`.
    pub fn normalized_weights(&self) -> Vec<f64> {
        let mut totals = vec![0.0; self.num_beads];
        for (&b, &w) in self.assign.iter().zip(self.weights.iter()) {
            totals[b] += w;
        }
        self.assign
            .iter()
            .zip(self.weights.iter())
            .map(|(&b, &w)| w / totals[b])
            .collect()
    }
}

/// Dense `N×n` projection operator `M`.
pub fn projection_matrix(map: &CgMapping) -> Tensor {
    let (n, nb) = (map.num_atoms(), map.num_beads());
    let wn = map.normalized_weights();
    let mut data = vec![0.0; nb * n];
    for (i, &b) in map.assign().iter().enumerate() {
        data[b * n + i] = wn[i];
    }
    Tensor::new(data, &[nb, n]).expect("projection matrix shape")
}

/// Dense `n×N` lift operator `M⁺` (one 1 per row, built from the
/// assignment alone).
pub fn lift_matrix(map: &CgMapping) -> Tensor {
    let (n, nb) = (map.num_atoms(), map.num_beads());
    let mut data = vec![0.0; n * nb];
    for (i, &b) in map.assign().iter().enumerate() {
        data[i * nb + b] = 1.0;
    }
    Tensor::new(data, &[n, nb]).expect("lift matrix shape")
}

/// `X = M·x`: weighted averages per bead, accumulated in ascending atom
/// order.
pub fn project(x: &Conformation, map: &CgMapping) -> Result<CgConformation> {
    if x.len() != map.num_atoms() {
        return Err(Error::Shape(format!(
            "conformation has {} atoms but mapping expects {}",
            x.len(),
            map.num_atoms()
        )));
    }
    Ok(CgConformation {
        coords: project_coords(&x.coords, map),
    })
}

/// Projection on raw coordinates (same weighted-average arithmetic).
pub fn project_coords(coords: &[[f64; 3]], map: &CgMapping) -> Vec<[f64; 3]> {
    let wn = map.normalized_weights();
    let mut out = vec![[0.0; 3]; map.num_beads()];
    for (i, &b) in map.assign().iter().enumerate() {
        for k in 0..3 {
            out[b][k] += wn[i] * coords[i][k];
        }
    }
    out
}

/// `M⁺·X`: copy each bead position to its member atoms.
pub fn lift(x_cg: &CgConformation, map: &CgMapping) -> Result<Vec<[f64; 3]>> {
    if x_cg.len() != map.num_beads() {
        return Err(Error::Shape(format!(
            "CG conformation has {} beads but mapping expects {}",
            x_cg.len(),
            map.num_beads()
        )));
    }
    Ok(map.assign().iter().map(|&b| x_cg.coords[b]).collect())
}

/// Remove the component of a displacement field visible to the beads:
/// returns `dx − M⁺M·dx`, whose projection through `M` is zero.
pub fn recenter_residual(dx: &[[f64; 3]], map: &CgMapping) -> Result<Vec<[f64; 3]>> {
    if dx.len() != map.num_atoms() {
        return Err(Error::Shape(format!(
            "displacement field has {} rows but mapping expects {}",
            dx.len(),
            map.num_atoms()
        )));
    }
    let projected = project_coords(dx, map);
    Ok(dx
        .iter()
        .zip(map.assign().iter())
        .map(|(row, &b)| {
            [
                row[0] - projected[b][0],
                row[1] - projected[b][1],
                row[2] - projected[b][2],
            ]
        })
        .collect())
}

/// Differentiable projection `M·x` in segment-sum form, for hot paths
/// where gradients must flow through the averaging.
pub fn project_tensor(tape: &Tape, x: &Tensor, map: &CgMapping) -> Result<Tensor> {
    let wn = Tensor::new(map.normalized_weights(), &[map.num_atoms()])?;
    let weighted = tape.scale(x, &wn)?;
    tape.segment_sum(&weighted, map.assign(), map.num_beads())
}

/// Differentiable lift `M⁺·X` as a row gather.
pub fn lift_tensor(tape: &Tape, x_cg: &Tensor, map: &CgMapping) -> Result<Tensor> {
    tape.gather_rows(x_cg, map.assign())
}

/// Apply `x ↦ Q·x + g` row-wise. `Q` must be orthogonal to 1e-10.
pub fn apply_isometry(coords: &[[f64; 3]], q: &[[f64; 3]; 3], g: &[f64; 3]) -> Result<Vec<[f64; 3]>> {
    for r in 0..3 {
        for c in 0..3 {
            let dot: f64 = (0..3).map(|k| q[k][r] * q[k][c]).sum();
            let want = if r == c { 1.0 } else { 0.0 };
            if (dot - want).abs() > 1e-10 {
                return Err(Error::InvalidTransform(format!(
                    "QᵀQ deviates from identity at ({},{}) by {:e}",
                    r,
                    c,
                    (dot - want).abs()
                )));
            }
        }
    }
    Ok(coords
        .iter()
        .map(|p| {
            let mut out = *g;
            for (r, o) in out.iter_mut().enumerate() {
                *o += q[r][0] * p[0] + q[r][1] * p[1] + q[r][2] * p[2];
            }
            out
        })
        .collect())
}

pub fn centroid(coords: &[[f64; 3]]) -> [f64; 3] {
    let mut c = [0.0; 3];
    for p in coords {
        for k in 0..3 {
            c[k] += p[k];
        }
    }
    let n = coords.len().max(1) as f64;
    [c[0] / n, c[1] / n, c[2] / n]
}

/// Random rotation (det +1) from the QR factorization of a Gaussian matrix.
pub fn random_rotation<R: Rng>(rng: &mut R) -> [[f64; 3]; 3] {
    let mut q = random_orthogonal(rng);
    if det3(&q) < 0.0 {
        for row in q.iter_mut() {
            row[0] = -row[0];
        }
    }
    q
}

/// Random orthogonal matrix; det is ±1 with equal probability.
pub fn random_orthogonal<R: Rng>(rng: &mut R) -> [[f64; 3]; 3] {
    use rand_distr::StandardNormal;
    // Gram-Schmidt on three Gaussian columns.
    let mut cols = [[0.0f64; 3]; 3];
    loop {
        for col in cols.iter_mut() {
            for v in col.iter_mut() {
                *v = rng.sample(StandardNormal);
            }
        }
        let mut ok = true;
        for c in 0..3 {
            for p in 0..c {
                let d: f64 = (0..3).map(|k| cols[c][k] * cols[p][k]).sum();
                for k in 0..3 {
                    cols[c][k] -= d * cols[p][k];
                }
            }
            let norm: f64 = cols[c].iter().map(|v| v * v).sum::<f64>().sqrt();
            if norm < 1e-6 {
                ok = false;
                break;
            }
            for v in cols[c].iter_mut() {
                *v /= norm;
            }
        }
        if ok {
            break;
        }
    }
    let mut q = [[0.0; 3]; 3];
    for (r, row) in q.iter_mut().enumerate() {
        for (c, v) in row.iter_mut().enumerate() {
            *v = cols[c][r];
        }
    }
    q
}

/// Random orthogonal matrix with det −1.
pub fn random_reflection<R: Rng>(rng: &mut R) -> [[f64; 3]; 3] {
    let mut q = random_rotation(rng);
    for row in q.iter_mut() {
        row[0] = -row[0];
    }
    q
}

pub fn det3(q: &[[f64; 3]; 3]) -> f64 {
    q[0][0] * (q[1][1] * q[2][2] - q[1][2] * q[2][1])
        - q[0][1] * (q[1][0] * q[2][2] - q[1][2] * q[2][0])
        + q[0][2] * (q[1][0] * q[2][1] - q[1][1] * q[2][0])
}

/// Read a mapping file: one `atom_index bead_index weight` triple per
/// line, `#` comments, 0-based indices. Atom indices must cover
/// `0..n` exactly once; the bead count is the largest index plus one.
pub fn read_mapping(path: &Path) -> Result<CgMapping> {
    let text = std::fs::read_to_string(path)?;
    parse_mapping(&text)
}

pub fn parse_mapping(text: &str) -> Result<CgMapping> {
    let mut entries: Vec<(usize, usize, f64)> = Vec::new();
    for (lineno, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split_whitespace().collect();
        if fields.len() != 3 {
            return Err(Error::Parse {
                line: lineno + 1,
                msg: format!("expected 'atom bead weight', got '{}'", line),
            });
        }
        let atom: usize = fields[0].parse().map_err(|_| Error::Parse {
            line: lineno + 1,
            msg: format!("bad atom index '{}'", fields[0]),
        })?;
        let bead: usize = fields[1].parse().map_err(|_| Error::Parse {
            line: lineno + 1,
            msg: format!("bad bead index '{}'", fields[1]),
        })?;
        let weight: f64 = fields[2].parse().map_err(|_| Error::Parse {
            line: lineno + 1,
            msg: format!("bad weight '{}'", fields[2]),
        })?;
        entries.push((atom, bead, weight));
    }
    if entries.is_empty() {
        return Err(Error::InvalidMapping("mapping file has no entries".to_string()));
    }
    let n = entries.len();
    let mut assign = vec![usize::MAX; n];
    let mut weights = vec![0.0; n];
    let mut num_beads = 0;
    for (atom, bead, weight) in entries {
        if atom >= n {
            return Err(Error::InvalidMapping(format!(
                "atom index {} out of range for {} entries",
                atom, n
            )));
        }
        if assign[atom] != usize::MAX {
            return Err(Error::InvalidMapping(format!("atom {} listed twice", atom)));
        }
        assign[atom] = bead;
        weights[atom] = weight;
        num_beads = num_beads.max(bead + 1);
    }
    CgMapping::new(assign, weights, num_beads)
}

pub fn write_mapping(map: &CgMapping, path: &Path) -> Result<()> {
    std::fs::write(path, format_mapping(map))?;
    Ok(())
}

pub fn format_mapping(map: &CgMapping) -> String {
    let mut out = String::from("# atom_index bead_index weight\n");
    for (i, (&b, &w)) in map.assign().iter().zip(map.weights().iter()).enumerate() {
        out.push_str(&format!("{} {} {}\n", i, b, w));
    }
    out
}
