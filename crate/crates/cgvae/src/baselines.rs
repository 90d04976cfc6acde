//! The two deterministic baselines: a learnable linear backmap matrix
//! and a flat MLP over flattened coordinates.
//!
//! Both are trained on recentered frames (each frame shifted to its
//! geometric center, the bead coordinates projected from the centered
//! frame), which fixes the translational freedom neither architecture
//! handles on its own. The linear map commutes with rotations by
//! construction; the MLP does not.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::autodiff::{Tape, Tensor};
use crate::error::{Error, Result};
use crate::geometry::{centroid, lift_matrix, project_coords, CgMapping, Conformation};
use crate::nn::{join, Linear, Params};
use crate::training::{loss_graph, loss_msd, offset_edges, Adam};

/// `x̃_{i,m} = Σ_I D_{i,I}·X_{I,m}` with learnable `D`.
#[derive(Clone, Debug)]
pub struct LinearBackmap {
    pub d: Tensor,
}

impl LinearBackmap {
    pub fn zeros(num_atoms: usize, num_beads: usize) -> Self {
        LinearBackmap {
            d: Tensor::zeros(&[num_atoms, num_beads]),
        }
    }

    /// Start from the lift operator, which already satisfies `M·M⁺ = I`.
    pub fn from_lift(map: &CgMapping) -> Self {
        LinearBackmap {
            d: lift_matrix(map),
        }
    }

    /// Apply to centered bead coordinates `[N,3]`.
    pub fn apply(&self, tape: &Tape, x_cg: &Tensor) -> Result<Tensor> {
        tape.matmul(&self.d, x_cg)
    }

    /// Backmap one frame in its original (uncentered) coordinates.
    pub fn backmap(&self, conf: &Conformation, map: &CgMapping) -> Result<Vec<[f64; 3]>> {
        let (centered, center) = recenter(&conf.coords);
        let x_cg = project_coords(&centered, map);
        let tape = Tape::new();
        let out = self.apply(&tape, &Tensor::from_rows3(&x_cg))?;
        Ok(out
            .rows3()?
            .into_iter()
            .map(|r| [r[0] + center[0], r[1] + center[1], r[2] + center[2]])
            .collect())
    }
}

impl Params for LinearBackmap {
    fn for_each(&self, prefix: &str, f: &mut dyn FnMut(&str, &Tensor)) {
        f(&join(prefix, "d"), &self.d);
    }

    fn for_each_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Tensor)) {
        f(&join(prefix, "d"), &mut self.d);
    }
}

/// Two-hidden-layer ReLU perceptron from flattened `3N` bead coordinates
/// to flattened `3n` atom coordinates, hidden width `3n`.
#[derive(Clone, Debug)]
pub struct MlpBackmap {
    pub l1: Linear,
    pub l2: Linear,
    pub l3: Linear,
}

impl MlpBackmap {
    pub fn init<R: Rng>(rng: &mut R, num_atoms: usize, num_beads: usize) -> Self {
        let (n_in, width) = (3 * num_beads, 3 * num_atoms);
        MlpBackmap {
            l1: Linear::init(rng, n_in, width),
            l2: Linear::init(rng, width, width),
            l3: Linear::init(rng, width, width),
        }
    }

    pub fn num_atoms(&self) -> usize {
        self.l3.fan_out() / 3
    }

    /// Apply to a batch of flattened centered bead coordinates `[B,3N]`.
    pub fn apply(&self, tape: &Tape, flat: &Tensor) -> Result<Tensor> {
        let h1 = tape.relu(&self.l1.apply(tape, flat)?)?;
        let h2 = tape.relu(&self.l2.apply(tape, &h1)?)?;
        self.l3.apply(tape, &h2)
    }

    pub fn backmap(&self, conf: &Conformation, map: &CgMapping) -> Result<Vec<[f64; 3]>> {
        let (centered, center) = recenter(&conf.coords);
        let x_cg = project_coords(&centered, map);
        let flat: Vec<f64> = x_cg.iter().flatten().copied().collect();
        let tape = Tape::new();
        let input = Tensor::new(flat, &[1, 3 * map.num_beads()])?;
        let out = self.apply(&tape, &input)?;
        let coords = tape.reshape(&out, &[map.num_atoms(), 3])?;
        Ok(coords
            .rows3()?
            .into_iter()
            .map(|r| [r[0] + center[0], r[1] + center[1], r[2] + center[2]])
            .collect())
    }
}

impl Params for MlpBackmap {
    fn for_each(&self, prefix: &str, f: &mut dyn FnMut(&str, &Tensor)) {
        self.l1.for_each(&join(prefix, "l1"), f);
        self.l2.for_each(&join(prefix, "l2"), f);
        self.l3.for_each(&join(prefix, "l3"), f);
    }

    fn for_each_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Tensor)) {
        self.l1.for_each_mut(&join(prefix, "l1"), f);
        self.l2.for_each_mut(&join(prefix, "l2"), f);
        self.l3.for_each_mut(&join(prefix, "l3"), f);
    }
}

/// Shift coordinates to their geometric center; returns the shift.
pub fn recenter(coords: &[[f64; 3]]) -> (Vec<[f64; 3]>, [f64; 3]) {
    let c = centroid(coords);
    (
        coords
            .iter()
            .map(|p| [p[0] - c[0], p[1] - c[1], p[2] - c[2]])
            .collect(),
        c,
    )
}

#[derive(Clone, Debug)]
pub struct BaselineTrainOptions {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    /// Graph-loss weight for the baselines.
    pub gamma: f64,
    pub seed: u64,
}

impl Default for BaselineTrainOptions {
    fn default() -> Self {
        BaselineTrainOptions {
            epochs: 300,
            batch_size: 32,
            learning_rate: 1e-3,
            gamma: 5.0,
            seed: 0,
        }
    }
}

struct PreparedFrames {
    /// Centered atom coordinates per frame, `[n,3]`.
    x: Vec<Tensor>,
    /// Centered bead coordinates per frame, `[N,3]`.
    x_cg: Vec<Tensor>,
    /// Flattened bead coordinates per frame, `[1,3N]`.
    x_cg_flat: Vec<Tensor>,
    num_atoms: usize,
}

fn prepare(frames: &[Conformation], map: &CgMapping) -> Result<PreparedFrames> {
    let mut x = Vec::with_capacity(frames.len());
    let mut x_cg = Vec::with_capacity(frames.len());
    let mut x_cg_flat = Vec::with_capacity(frames.len());
    for f in frames {
        if f.len() != map.num_atoms() {
            return Err(Error::Shape(format!(
                "frame has {} atoms, mapping expects {}",
                f.len(),
                map.num_atoms()
            )));
        }
        let (centered, _) = recenter(&f.coords);
        let cg = project_coords(&centered, map);
        x.push(Tensor::from_rows3(&centered));
        x_cg.push(Tensor::from_rows3(&cg));
        let flat: Vec<f64> = cg.iter().flatten().copied().collect();
        x_cg_flat.push(Tensor::new(flat, &[1, 3 * map.num_beads()])?);
    }
    Ok(PreparedFrames {
        x,
        x_cg,
        x_cg_flat,
        num_atoms: map.num_atoms(),
    })
}

fn train_loop<P: Params>(
    model: &mut P,
    prepared: &PreparedFrames,
    edges: &[(usize, usize)],
    opts: &BaselineTrainOptions,
    predict: impl Fn(&Tape, &P, &[usize]) -> Result<Tensor>,
) -> Result<Vec<(f64, f64)>> {
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let mut order: Vec<usize> = (0..prepared.x.len()).collect();
    let mut adam = Adam::new(opts.learning_rate);
    let mut log = Vec::with_capacity(opts.epochs);
    for _ in 0..opts.epochs {
        order.shuffle(&mut rng);
        let mut sums = (0.0, 0.0);
        let mut steps = 0;
        for chunk in order.chunks(opts.batch_size.max(1)) {
            let tape = Tape::new();
            let bound = model.watched(&tape);
            let pred = predict(&tape, &bound, chunk)?;
            let targets: Vec<&Tensor> = chunk.iter().map(|&i| &prepared.x[i]).collect();
            let target = tape.concat_rows(&targets)?;
            let batch_edges = offset_edges(edges, prepared.num_atoms, chunk.len());
            let msd = loss_msd(&tape, &pred, &target)?;
            let graph = loss_graph(&tape, &pred, &target, &batch_edges)?;
            let total = tape.add(&msd, &tape.mul_scalar(&graph, opts.gamma)?)?;
            if !total.item()?.is_finite() {
                return Err(Error::TrainingDiverged("baseline loss non-finite".to_string()));
            }
            let grads = tape.backward(&total)?;
            adam.update(model, &bound, &grads);
            sums.0 += msd.item()?;
            sums.1 += graph.item()?;
            steps += 1;
        }
        log.push((sums.0 / steps as f64, sums.1 / steps as f64));
    }
    Ok(log)
}

/// Fit the linear backmap with `L_MSD + γ·L_graph` on recentered frames.
pub fn train_linear(
    model: &mut LinearBackmap,
    frames: &[Conformation],
    map: &CgMapping,
    edges: &[(usize, usize)],
    opts: &BaselineTrainOptions,
) -> Result<Vec<(f64, f64)>> {
    let prepared = prepare(frames, map)?;
    train_loop(model, &prepared, edges, opts, |tape, m, chunk| {
        let outs: Vec<Tensor> = chunk
            .iter()
            .map(|&i| m.apply(tape, &prepared.x_cg[i]))
            .collect::<Result<_>>()?;
        let refs: Vec<&Tensor> = outs.iter().collect();
        tape.concat_rows(&refs)
    })
}

/// Fit the MLP backmap the same way.
pub fn train_mlp(
    model: &mut MlpBackmap,
    frames: &[Conformation],
    map: &CgMapping,
    edges: &[(usize, usize)],
    opts: &BaselineTrainOptions,
) -> Result<Vec<(f64, f64)>> {
    let prepared = prepare(frames, map)?;
    let n = map.num_atoms();
    train_loop(model, &prepared, edges, opts, |tape, m, chunk| {
        let flats: Vec<&Tensor> = chunk.iter().map(|&i| &prepared.x_cg_flat[i]).collect();
        let input = tape.concat_rows(&flats)?;
        let out = m.apply(tape, &input)?;
        tape.reshape(&out, &[chunk.len() * n, 3])
    })
}
