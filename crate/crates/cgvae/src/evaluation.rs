//! The metric suite: reconstruction RMSD, normalized graph-edit distance
//! λ, generative diversity RMSD, valid-graph ratio, and dihedral angles.
//!
//! No rotational alignment is performed anywhere: decoded structures
//! share the reference frame through the reprojection constraint, and the
//! baselines are evaluated in their recentered convention.

use rand_chacha::ChaCha8Rng;
use rand::SeedableRng;

use crate::checkpoint::TrainedModel;
use crate::dataset::Trajectory;
use crate::error::{Error, Result};
use crate::geometry::{CgMapping, Conformation, Element};
use crate::graphs::{deduce_bond_graph, Graph};
use crate::model::encoder::standard_noise;
use crate::model::FrameFeatures;
use crate::training;

/// Root mean squared distance between same-order point sets, in Å.
pub fn rmsd(a: &[[f64; 3]], b: &[[f64; 3]]) -> Result<f64> {
    if a.len() != b.len() || a.is_empty() {
        return Err(Error::Shape(format!(
            "rmsd over mismatched point sets ({} vs {})",
            a.len(),
            b.len()
        )));
    }
    let sum: f64 = a
        .iter()
        .zip(b.iter())
        .map(|(p, q)| (0..3).map(|k| (p[k] - q[k]).powi(2)).sum::<f64>())
        .sum();
    Ok((sum / a.len() as f64).sqrt())
}

/// Normalized graph edit distance `λ = |E_gen Δ E_ref| / |E_ref|` under
/// the fixed node correspondence.
pub fn graph_edit_ratio(generated: &Graph, reference: &Graph) -> Result<f64> {
    if generated.num_nodes != reference.num_nodes {
        return Err(Error::Shape(format!(
            "graphs have different node counts ({} vs {})",
            generated.num_nodes, reference.num_nodes
        )));
    }
    let ge = generated.edges();
    let re = reference.edges();
    if re.is_empty() {
        return Err(Error::Config(
            "reference graph has no edges to normalize by".to_string(),
        ));
    }
    // both edge lists are sorted unique pairs
    let mut i = 0;
    let mut j = 0;
    let mut sym_diff = 0usize;
    while i < ge.len() && j < re.len() {
        match ge[i].cmp(&re[j]) {
            std::cmp::Ordering::Equal => {
                i += 1;
                j += 1;
            }
            std::cmp::Ordering::Less => {
                sym_diff += 1;
                i += 1;
            }
            std::cmp::Ordering::Greater => {
                sym_diff += 1;
                j += 1;
            }
        }
    }
    sym_diff += (ge.len() - i) + (re.len() - j);
    Ok(sym_diff as f64 / re.len() as f64)
}

/// Diversity RMSD: root mean (over valid samples and atoms) squared
/// deviation from the reference frame.
pub fn rmsd_gen(valid_samples: &[Vec<[f64; 3]>], reference: &[[f64; 3]]) -> Result<f64> {
    if valid_samples.is_empty() {
        return Err(Error::NoValidSamples(
            "no chemically valid samples to evaluate".to_string(),
        ));
    }
    let mut sum = 0.0;
    let mut count = 0usize;
    for s in valid_samples {
        if s.len() != reference.len() {
            return Err(Error::Shape("sample size differs from reference".to_string()));
        }
        for (p, q) in s.iter().zip(reference.iter()) {
            sum += (0..3).map(|k| (p[k] - q[k]).powi(2)).sum::<f64>();
            count += 1;
        }
    }
    Ok((sum / count as f64).sqrt())
}

/// Signed torsion angle of the four points, in `(−π, π]`.
pub fn dihedral(p1: &[f64; 3], p2: &[f64; 3], p3: &[f64; 3], p4: &[f64; 3]) -> Result<f64> {
    let sub = |a: &[f64; 3], b: &[f64; 3]| [a[0] - b[0], a[1] - b[1], a[2] - b[2]];
    let cross = |a: &[f64; 3], b: &[f64; 3]| {
        [
            a[1] * b[2] - a[2] * b[1],
            a[2] * b[0] - a[0] * b[2],
            a[0] * b[1] - a[1] * b[0],
        ]
    };
    let dot = |a: &[f64; 3], b: &[f64; 3]| a[0] * b[0] + a[1] * b[1] + a[2] * b[2];
    let b1 = sub(p2, p1);
    let b2 = sub(p3, p2);
    let b3 = sub(p4, p3);
    let n1 = cross(&b1, &b2);
    let n2 = cross(&b2, &b3);
    let b2n = dot(&b2, &b2).sqrt();
    if dot(&n1, &n1).sqrt() < 1e-10 || dot(&n2, &n2).sqrt() < 1e-10 || b2n < 1e-10 {
        return Err(Error::DegenerateGeometry(
            "three consecutive torsion points are collinear".to_string(),
        ));
    }
    let x = dot(&n1, &n2);
    let y = dot(&cross(&n1, &n2), &b2) / b2n;
    let mut angle = y.atan2(x);
    if angle <= -std::f64::consts::PI {
        angle = std::f64::consts::PI;
    }
    Ok(angle)
}

/// All backbone torsions (consecutive heavy-atom quadruples) of a frame.
/// Heavy atoms are taken in their stored order.
pub fn backbone_dihedrals(conf: &Conformation) -> Vec<f64> {
    let heavy: Vec<usize> = (0..conf.len())
        .filter(|&i| conf.elements[i] != Element::H)
        .collect();
    let mut out = Vec::new();
    for w in heavy.windows(4) {
        if let Ok(a) = dihedral(
            &conf.coords[w[0]],
            &conf.coords[w[1]],
            &conf.coords[w[2]],
            &conf.coords[w[3]],
        ) {
            out.push(a);
        }
    }
    out
}

#[derive(Clone, Copy, Debug, Default)]
pub struct MetricValue {
    pub mean: f64,
    pub stderr: f64,
}

impl MetricValue {
    fn over_folds(values: &[f64]) -> MetricValue {
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        if values.len() < 2 {
            return MetricValue { mean, stderr: 0.0 };
        }
        let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
        MetricValue {
            mean,
            stderr: (var / n).sqrt(),
        }
    }
}

#[derive(Clone, Copy, Debug, Default)]
pub struct MetricSet {
    pub rmsd_recon: MetricValue,
    pub lambda: MetricValue,
    pub rmsd_gen: MetricValue,
    pub valid_ratio: MetricValue,
}

/// Per-run metric report: all-atom and heavy-atom variants with
/// mean/stderr over frame folds.
#[derive(Clone, Copy, Debug, Default)]
pub struct MetricReport {
    pub all_atom: MetricSet,
    pub heavy_atom: MetricSet,
    pub folds: usize,
    pub samples_per_frame: usize,
}

impl MetricReport {
    /// Key / mean / stderr lines, tab-separated (also the tabular format
    /// the plot command consumes).
    pub fn format_text(&self) -> String {
        let mut out = String::new();
        out.push_str(&format!("folds\t{}\t0\n", self.folds));
        out.push_str(&format!("samples_per_frame\t{}\t0\n", self.samples_per_frame));
        for (prefix, set) in [("all_atom", &self.all_atom), ("heavy_atom", &self.heavy_atom)] {
            for (name, v) in [
                ("rmsd_recon", set.rmsd_recon),
                ("lambda", set.lambda),
                ("rmsd_gen", set.rmsd_gen),
                ("valid_ratio", set.valid_ratio),
            ] {
                out.push_str(&format!("{}.{}\t{}\t{}\n", prefix, name, v.mean, v.stderr));
            }
        }
        out
    }

    pub fn parse_text(text: &str) -> Result<Vec<(String, f64, f64)>> {
        let mut rows = Vec::new();
        for (lineno, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let fields: Vec<&str> = line.split('\t').collect();
            if fields.len() != 3 {
                return Err(Error::Parse {
                    line: lineno + 1,
                    msg: "expected 'key<TAB>mean<TAB>stderr'".to_string(),
                });
            }
            let mean: f64 = fields[1].parse().map_err(|_| Error::Parse {
                line: lineno + 1,
                msg: format!("bad mean '{}'", fields[1]),
            })?;
            let stderr: f64 = fields[2].parse().map_err(|_| Error::Parse {
                line: lineno + 1,
                msg: format!("bad stderr '{}'", fields[2]),
            })?;
            rows.push((fields[0].to_string(), mean, stderr));
        }
        Ok(rows)
    }
}

#[derive(Clone, Copy, Debug)]
pub struct EvalOptions {
    pub samples: usize,
    pub seed: u64,
    pub folds: usize,
    pub threads: usize,
}

impl Default for EvalOptions {
    fn default() -> Self {
        EvalOptions {
            samples: 32,
            seed: 0,
            folds: 5,
            threads: 1,
        }
    }
}

/// Strip hydrogens from a structure; returns kept-index list.
fn heavy_subset(elements: &[Element]) -> Vec<usize> {
    (0..elements.len())
        .filter(|&i| elements[i] != Element::H)
        .collect()
}

fn take_rows(coords: &[[f64; 3]], idx: &[usize]) -> Vec<[f64; 3]> {
    idx.iter().map(|&i| coords[i]).collect()
}

struct FrameStats {
    recon_sq: f64,
    lambda_sum: f64,
    valid: usize,
    samples: usize,
    gen_sq: f64,
    gen_points: usize,
}

fn reconstruct_coords(
    model: &TrainedModel,
    conf: &Conformation,
    map: &CgMapping,
) -> Result<Vec<[f64; 3]>> {
    match model {
        TrainedModel::Cgvae(m) => {
            let feats = FrameFeatures::build(conf, map, &m.dims)?;
            m.reconstruct(&feats)?.rows3()
        }
        TrainedModel::Linear(m) => m.backmap(conf, map),
        TrainedModel::Mlp(m) => m.backmap(conf, map),
    }
}

fn sample_coords(
    model: &TrainedModel,
    conf: &Conformation,
    map: &CgMapping,
    count: usize,
    seed: u64,
) -> Result<Vec<Vec<[f64; 3]>>> {
    match model {
        TrainedModel::Cgvae(m) => {
            let feats = FrameFeatures::build(conf, map, &m.dims)?;
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let mut out = Vec::with_capacity(count);
            for _ in 0..count {
                let noise = standard_noise(&[feats.num_beads, m.dims.feature_dim], &mut rng);
                out.push(m.sample_with_noise(&feats, &noise)?.rows3()?);
            }
            Ok(out)
        }
        // deterministic models emit one structure, repeated
        _ => {
            let once = reconstruct_coords(model, conf, map)?;
            Ok(vec![once; count])
        }
    }
}

struct VariantContext {
    /// Kept atom indices (all atoms, or heavy only).
    idx: Vec<usize>,
    elements: Vec<Element>,
    reference_graph: Graph,
}

fn eval_frame(
    model: &TrainedModel,
    conf: &Conformation,
    map: &CgMapping,
    ctx: &VariantContext,
    samples: usize,
    seed: u64,
) -> Result<FrameStats> {
    let recon = reconstruct_coords(model, conf, map)?;
    let ref_coords = take_rows(&conf.coords, &ctx.idx);
    let recon_sub = take_rows(&recon, &ctx.idx);
    let recon_sq: f64 = recon_sub
        .iter()
        .zip(ref_coords.iter())
        .map(|(p, q)| (0..3).map(|k| (p[k] - q[k]).powi(2)).sum::<f64>())
        .sum();

    let draws = sample_coords(model, conf, map, samples, seed)?;
    let mut lambda_sum = 0.0;
    let mut valid = 0usize;
    let mut gen_sq = 0.0;
    let mut gen_points = 0usize;
    for s in &draws {
        let sub = take_rows(s, &ctx.idx);
        let sconf = Conformation::new(ctx.elements.clone(), sub.clone())?;
        let graph = deduce_bond_graph(&sconf)?;
        let lambda = graph_edit_ratio(&graph, &ctx.reference_graph)?;
        lambda_sum += lambda;
        if lambda == 0.0 {
            valid += 1;
            for (p, q) in sub.iter().zip(ref_coords.iter()) {
                gen_sq += (0..3).map(|k| (p[k] - q[k]).powi(2)).sum::<f64>();
                gen_points += 1;
            }
        }
    }
    Ok(FrameStats {
        recon_sq,
        lambda_sum,
        valid,
        samples,
        gen_sq,
        gen_points,
    })
}

fn aggregate_fold(stats: &[&FrameStats], atoms: usize, deterministic: bool) -> MetricSet {
    let frames = stats.len() as f64;
    let recon_sq: f64 = stats.iter().map(|s| s.recon_sq).sum();
    let total_samples: usize = stats.iter().map(|s| s.samples).sum();
    let lambda: f64 = stats.iter().map(|s| s.lambda_sum).sum::<f64>() / total_samples as f64;
    let valid: usize = stats.iter().map(|s| s.valid).sum();
    let gen_sq: f64 = stats.iter().map(|s| s.gen_sq).sum();
    let gen_points: usize = stats.iter().map(|s| s.gen_points).sum();
    MetricSet {
        rmsd_recon: MetricValue {
            mean: (recon_sq / (frames * atoms as f64)).sqrt(),
            stderr: 0.0,
        },
        lambda: MetricValue { mean: lambda, stderr: 0.0 },
        rmsd_gen: MetricValue {
            mean: if deterministic || gen_points == 0 {
                0.0
            } else {
                (gen_sq / gen_points as f64).sqrt()
            },
            stderr: 0.0,
        },
        valid_ratio: MetricValue {
            mean: valid as f64 / total_samples as f64,
            stderr: 0.0,
        },
    }
}

/// Evaluate a trained model on test frames: all four metrics for the
/// all-atom and heavy-atom structures, with stderr over frame folds.
pub fn evaluate_run(
    model: &TrainedModel,
    traj: &Trajectory,
    map: &CgMapping,
    opts: &EvalOptions,
) -> Result<MetricReport> {
    if traj.frames.is_empty() {
        return Err(Error::Config("no test frames".to_string()));
    }
    let n = traj.elements.len();
    let all_idx: Vec<usize> = (0..n).collect();
    let heavy_idx = heavy_subset(&traj.elements);
    if heavy_idx.is_empty() {
        return Err(Error::Config("structure has no heavy atoms".to_string()));
    }
    let first = &traj.frames[0];
    let all_ctx = VariantContext {
        elements: traj.elements.clone(),
        reference_graph: Graph::from_edges(n, &traj.bonds, &first.coords)?,
        idx: all_idx,
    };
    let heavy_bonds: Vec<(usize, usize)> = {
        let pos: Vec<Option<usize>> = {
            let mut pos = vec![None; n];
            for (new_i, &old) in heavy_idx.iter().enumerate() {
                pos[old] = Some(new_i);
            }
            pos
        };
        traj.bonds
            .iter()
            .filter_map(|&(a, b)| match (pos[a], pos[b]) {
                (Some(x), Some(y)) => Some((x.min(y), x.max(y))),
                _ => None,
            })
            .collect()
    };
    let heavy_ctx = VariantContext {
        elements: take_elements(&traj.elements, &heavy_idx),
        reference_graph: Graph::from_edges(
            heavy_idx.len(),
            &heavy_bonds,
            &take_rows(&first.coords, &heavy_idx),
        )?,
        idx: heavy_idx,
    };

    let eval_one = |fi: usize| -> Result<(FrameStats, FrameStats)> {
        let conf = &traj.frames[fi];
        let seed = opts.seed.wrapping_add(fi as u64);
        let all = eval_frame(model, conf, map, &all_ctx, opts.samples, seed)?;
        let heavy = eval_frame(model, conf, map, &heavy_ctx, opts.samples, seed)?;
        Ok((all, heavy))
    };

    let per_frame: Vec<(FrameStats, FrameStats)> = if opts.threads > 1 {
        use rayon::prelude::*;
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(opts.threads)
            .build()
            .map_err(|e| Error::Config(format!("thread pool: {}", e)))?;
        pool.install(|| {
            (0..traj.frames.len())
                .into_par_iter()
                .map(eval_one)
                .collect::<Result<Vec<_>>>()
        })?
    } else {
        (0..traj.frames.len())
            .map(eval_one)
            .collect::<Result<Vec<_>>>()?
    };

    let folds = opts.folds.clamp(1, traj.frames.len());
    let det = model.deterministic();
    let mut sets = (Vec::new(), Vec::new());
    for f in 0..folds {
        let all_stats: Vec<&FrameStats> = per_frame
            .iter()
            .enumerate()
            .filter(|(i, _)| i % folds == f)
            .map(|(_, s)| &s.0)
            .collect();
        let heavy_stats: Vec<&FrameStats> = per_frame
            .iter()
            .enumerate()
            .filter(|(i, _)| i % folds == f)
            .map(|(_, s)| &s.1)
            .collect();
        sets.0.push(aggregate_fold(&all_stats, n, det));
        sets.1
            .push(aggregate_fold(&heavy_stats, heavy_ctx_len(&traj.elements), det));
    }
    Ok(MetricReport {
        all_atom: fold_summary(&sets.0),
        heavy_atom: fold_summary(&sets.1),
        folds,
        samples_per_frame: opts.samples,
    })
}

fn heavy_ctx_len(elements: &[Element]) -> usize {
    elements.iter().filter(|&&e| e != Element::H).count()
}

fn take_elements(elements: &[Element], idx: &[usize]) -> Vec<Element> {
    idx.iter().map(|&i| elements[i]).collect()
}

fn fold_summary(folds: &[MetricSet]) -> MetricSet {
    let collect = |f: &dyn Fn(&MetricSet) -> f64| -> Vec<f64> { folds.iter().map(f).collect() };
    MetricSet {
        rmsd_recon: MetricValue::over_folds(&collect(&|s| s.rmsd_recon.mean)),
        lambda: MetricValue::over_folds(&collect(&|s| s.lambda.mean)),
        rmsd_gen: MetricValue::over_folds(&collect(&|s| s.rmsd_gen.mean)),
        valid_ratio: MetricValue::over_folds(&collect(&|s| s.valid_ratio.mean)),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{apply_isometry, random_reflection, random_rotation};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn rmsd_examples() {
        let a = vec![[0.0; 3], [1.0, 0.0, 0.0]];
        assert_eq!(rmsd(&a, &a).unwrap(), 0.0);
        // uniform translation by (3,4,0) gives exactly 5
        let b: Vec<[f64; 3]> = a.iter().map(|p| [p[0] + 3.0, p[1] + 4.0, p[2]]).collect();
        assert!((rmsd(&a, &b).unwrap() - 5.0).abs() < 1e-14);
    }

    #[test]
    fn rmsd_triangle_inequality_spot_check() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..50 {
            let rand_set = |rng: &mut ChaCha8Rng| -> Vec<[f64; 3]> {
                (0..5)
                    .map(|_| {
                        [
                            rng.gen_range(-3.0..3.0),
                            rng.gen_range(-3.0..3.0),
                            rng.gen_range(-3.0..3.0),
                        ]
                    })
                    .collect()
            };
            let (a, b, c) = (rand_set(&mut rng), rand_set(&mut rng), rand_set(&mut rng));
            let (ab, bc, ac) = (
                rmsd(&a, &b).unwrap(),
                rmsd(&b, &c).unwrap(),
                rmsd(&a, &c).unwrap(),
            );
            assert!(ac <= ab + bc + 1e-12);
        }
    }

    #[test]
    fn lambda_examples() {
        let coords = vec![[0.0; 3], [1.0, 0.0, 0.0], [2.0, 0.0, 0.0]];
        let g1 = Graph::from_edges(3, &[(0, 1), (1, 2)], &coords).unwrap();
        assert_eq!(graph_edit_ratio(&g1, &g1).unwrap(), 0.0);
        let g2 = Graph::from_edges(3, &[(0, 1), (1, 2), (0, 2)], &coords).unwrap();
        assert!((graph_edit_ratio(&g2, &g1).unwrap() - 0.5).abs() < 1e-15);
        // one missing + one spurious over a 2-edge reference: λ = 1
        let g3 = Graph::from_edges(3, &[(0, 1), (0, 2)], &coords).unwrap();
        assert!((graph_edit_ratio(&g3, &g1).unwrap() - 1.0).abs() < 1e-15);
        // symmetric in direction of the edit
        assert_eq!(
            graph_edit_ratio(&g3, &g1).unwrap() * g1.num_edges() as f64,
            graph_edit_ratio(&g1, &g3).unwrap() * g3.num_edges() as f64
        );
    }

    #[test]
    fn lambda_matches_brute_force_on_random_pairs() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let coords: Vec<[f64; 3]> = (0..8).map(|i| [i as f64, 0.0, 0.0]).collect();
        for _ in 0..200 {
            let rand_graph = |rng: &mut ChaCha8Rng| -> Graph {
                let mut edges = Vec::new();
                for i in 0..8 {
                    for j in (i + 1)..8 {
                        if rng.gen_bool(0.3) {
                            edges.push((i, j));
                        }
                    }
                }
                if edges.is_empty() {
                    edges.push((0, 1));
                }
                Graph::from_edges(8, &edges, &coords).unwrap()
            };
            let (a, b) = (rand_graph(&mut rng), rand_graph(&mut rng));
            let got = graph_edit_ratio(&a, &b).unwrap();
            // brute force over all candidate pairs
            let mut diff = 0;
            for i in 0..8 {
                for j in (i + 1)..8 {
                    let ina = a.edges().contains(&(i, j));
                    let inb = b.edges().contains(&(i, j));
                    if ina != inb {
                        diff += 1;
                    }
                }
            }
            let want = diff as f64 / b.num_edges() as f64;
            assert!((got - want).abs() < 1e-15);
        }
    }

    #[test]
    fn rmsd_gen_examples() {
        let reference = vec![[0.0; 3], [1.0, 0.0, 0.0]];
        // all samples identical to the reference: zero
        let same = vec![reference.clone(), reference.clone()];
        assert_eq!(rmsd_gen(&same, &reference).unwrap(), 0.0);
        // two samples displaced by ±δ on every atom: rmsd_gen = |δ|
        let delta = 0.37;
        let plus: Vec<[f64; 3]> = reference.iter().map(|p| [p[0] + delta, p[1], p[2]]).collect();
        let minus: Vec<[f64; 3]> = reference.iter().map(|p| [p[0] - delta, p[1], p[2]]).collect();
        let got = rmsd_gen(&[plus, minus], &reference).unwrap();
        assert!((got - delta).abs() < 1e-14);
        assert!(matches!(
            rmsd_gen(&[], &reference),
            Err(Error::NoValidSamples(_))
        ));
    }

    #[test]
    fn dihedral_examples() {
        // planar cis: 0
        let cis = dihedral(
            &[1.0, 1.0, 0.0],
            &[1.0, 0.0, 0.0],
            &[2.0, 0.0, 0.0],
            &[2.0, 1.0, 0.0],
        )
        .unwrap();
        assert!(cis.abs() < 1e-12);
        // planar trans: π
        let trans = dihedral(
            &[1.0, 1.0, 0.0],
            &[1.0, 0.0, 0.0],
            &[2.0, 0.0, 0.0],
            &[2.0, -1.0, 0.0],
        )
        .unwrap();
        assert!((trans.abs() - std::f64::consts::PI).abs() < 1e-12);
        // collinear: degenerate
        assert!(dihedral(&[0.0; 3], &[1.0, 0.0, 0.0], &[2.0, 0.0, 0.0], &[3.0, 0.0, 0.0]).is_err());
    }

    #[test]
    fn dihedral_transforms_correctly() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let pts = [
            [0.3, 1.1, -0.2],
            [1.0, 0.1, 0.4],
            [2.2, 0.3, -0.1],
            [3.0, 1.2, 0.8],
        ];
        let base = dihedral(&pts[0], &pts[1], &pts[2], &pts[3]).unwrap();
        for _ in 0..20 {
            let q = random_rotation(&mut rng);
            let moved = apply_isometry(&pts, &q, &[1.0, -2.0, 0.3]).unwrap();
            let rot = dihedral(&moved[0], &moved[1], &moved[2], &moved[3]).unwrap();
            assert!((rot - base).abs() < 1e-12);

            let p = random_reflection(&mut rng);
            let refl = apply_isometry(&pts, &p, &[0.0; 3]).unwrap();
            let neg = dihedral(&refl[0], &refl[1], &refl[2], &refl[3]).unwrap();
            assert!((neg + base).abs() < 1e-12, "reflection must negate the angle");
        }
    }

    #[test]
    fn report_text_round_trip() {
        let report = MetricReport {
            all_atom: MetricSet {
                rmsd_recon: MetricValue { mean: 0.25, stderr: 0.01 },
                lambda: MetricValue { mean: 0.0, stderr: 0.0 },
                rmsd_gen: MetricValue { mean: 0.4, stderr: 0.02 },
                valid_ratio: MetricValue { mean: 1.0, stderr: 0.0 },
            },
            heavy_atom: MetricSet::default(),
            folds: 5,
            samples_per_frame: 32,
        };
        let text = report.format_text();
        let rows = MetricReport::parse_text(&text).unwrap();
        assert!(rows.iter().any(|(k, m, s)| k == "all_atom.rmsd_recon" && *m == 0.25 && *s == 0.01));
        assert!(rows.iter().any(|(k, m, _)| k == "all_atom.valid_ratio" && *m == 1.0));
    }
}
