//! Differentiable coarse-grain mapping learner.
//!
//! A soft assignment matrix is parameterized through a Gumbel-Softmax
//! relaxation with temperature `τ` annealed towards hard one-hot rows.
//! The objective combines the linear-decode reconstruction error with a
//! locality penalty `L_geo = (1/n)·Σ‖CᵀMx − x‖²` that punishes grouping
//! distant atoms into one bead. The final mapping is the per-atom argmax
//! of the learned logits, with empty beads repaired by moving the
//! farthest atom of the largest bead.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::autodiff::{Tape, Tensor};
use crate::error::{Error, Result};
use crate::geometry::{lift_matrix, CgMapping, Conformation};
use crate::nn::{join, Params};
use crate::training::Adam;

#[derive(Clone, Debug)]
pub struct AutoGrainConfig {
    pub num_beads: usize,
    pub epochs: usize,
    pub learning_rate: f64,
    pub tau_start: f64,
    /// Subtracted from τ once per epoch.
    pub tau_step: f64,
    pub tau_min: f64,
    /// Weight `a` of the locality penalty.
    pub geo_weight: f64,
    pub seed: u64,
}

impl AutoGrainConfig {
    pub fn new(num_beads: usize) -> Self {
        AutoGrainConfig {
            num_beads,
            epochs: 1500,
            learning_rate: 0.01,
            tau_start: 1.0,
            tau_step: 0.001,
            tau_min: 0.025,
            geo_weight: 0.25,
            seed: 0,
        }
    }
}

#[derive(Clone)]
struct AutoGrainParams {
    /// Per-atom assignment logits, `[n,N]`.
    logits: Tensor,
    /// Linear decode matrix, `[n,N]`.
    decode: Tensor,
}

impl Params for AutoGrainParams {
    fn for_each(&self, prefix: &str, f: &mut dyn FnMut(&str, &Tensor)) {
        f(&join(prefix, "logits"), &self.logits);
        f(&join(prefix, "decode"), &self.decode);
    }

    fn for_each_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Tensor)) {
        f(&join(prefix, "logits"), &mut self.logits);
        f(&join(prefix, "decode"), &mut self.decode);
    }
}

pub struct AutoGrainResult {
    pub mapping: CgMapping,
    /// Final noise-free soft assignment rows (`[n,N]`, rows sum to 1).
    pub soft: Tensor,
    /// Per-epoch total loss.
    pub loss_history: Vec<f64>,
}

/// Row-wise softmax of `(logits + gumbel)/τ`. The row-max shift is a
/// constant offset, so gradients are exact.
pub fn soft_assignment(
    tape: &Tape,
    logits: &Tensor,
    gumbel: Option<&Tensor>,
    tau: f64,
) -> Result<Tensor> {
    if tau <= 0.0 {
        return Err(Error::Config(format!("temperature must be positive, got {}", tau)));
    }
    let shape = logits.shape();
    if shape.len() != 2 {
        return Err(Error::Shape(format!("logits must be [n,N], got {:?}", shape)));
    }
    let (n, nb) = (shape[0], shape[1]);
    let scores = match gumbel {
        Some(g) => tape.add(logits, g)?,
        None => logits.clone(),
    };
    let scaled = tape.mul_scalar(&scores, 1.0 / tau)?;
    // subtract the per-row max as a constant for numerical stability
    let mut shifts = vec![0.0; n * nb];
    for r in 0..n {
        let row = &scaled.data()[r * nb..(r + 1) * nb];
        let m = row.iter().fold(f64::NEG_INFINITY, |a, &b| a.max(b));
        for c in 0..nb {
            shifts[r * nb + c] = m;
        }
    }
    let shifted = tape.sub(&scaled, &Tensor::new(shifts, shape)?)?;
    let e = tape.exp(&shifted)?;
    let sums = tape.reshape(&tape.matmul(&e, &Tensor::full(&[nb, 1], 1.0))?, &[n])?;
    let recip = tape.div(&Tensor::full(&[n], 1.0), &sums)?;
    tape.scale(&e, &recip)
}

fn gumbel_noise<R: Rng>(rng: &mut R, n: usize, nb: usize) -> Tensor {
    let data: Vec<f64> = (0..n * nb)
        .map(|_| {
            let u: f64 = rng.gen_range(1e-12..1.0);
            -(-u.ln()).ln()
        })
        .collect();
    Tensor::new(data, &[n, nb]).expect("gumbel shape")
}

fn hard_assignment(logits: &Tensor) -> Vec<usize> {
    let nb = logits.shape()[1];
    logits
        .data()
        .chunks_exact(nb)
        .map(|row| {
            row.iter()
                .enumerate()
                .max_by(|a, b| a.1.partial_cmp(b.1).unwrap())
                .map(|(i, _)| i)
                .unwrap_or(0)
        })
        .collect()
}

/// Reassign the farthest atom of the largest bead to each empty bead
/// until every bead is populated. Distances are measured on the mean
/// recentered structure.
fn repair_empty_beads(assign: &mut [usize], num_beads: usize, mean_coords: &[[f64; 3]]) {
    loop {
        let mut counts = vec![0usize; num_beads];
        for &b in assign.iter() {
            counts[b] += 1;
        }
        let Some(empty) = counts.iter().position(|&c| c == 0) else {
            return;
        };
        let largest = counts
            .iter()
            .enumerate()
            .max_by_key(|(_, &c)| c)
            .map(|(i, _)| i)
            .expect("at least one bead");
        // center of the largest bead
        let mut center = [0.0; 3];
        let mut cnt = 0.0;
        for (i, &b) in assign.iter().enumerate() {
            if b == largest {
                for k in 0..3 {
                    center[k] += mean_coords[i][k];
                }
                cnt += 1.0;
            }
        }
        for v in center.iter_mut() {
            *v /= cnt;
        }
        let farthest = assign
            .iter()
            .enumerate()
            .filter(|(_, &b)| b == largest)
            .max_by(|(i, _), (j, _)| {
                let di: f64 = (0..3).map(|k| (mean_coords[*i][k] - center[k]).powi(2)).sum();
                let dj: f64 = (0..3).map(|k| (mean_coords[*j][k] - center[k]).powi(2)).sum();
                di.partial_cmp(&dj).unwrap()
            })
            .map(|(i, _)| i)
            .expect("largest bead non-empty");
        assign[farthest] = empty;
    }
}

/// Learn a mapping from conformer frames.
pub fn autograin_fit(frames: &[Conformation], cfg: &AutoGrainConfig) -> Result<AutoGrainResult> {
    if frames.len() < 100 {
        return Err(Error::Config(format!(
            "mapping learning needs at least 100 frames, got {}",
            frames.len()
        )));
    }
    let n = frames[0].len();
    if cfg.num_beads >= n {
        return Err(Error::Config(format!(
            "bead count {} must be smaller than atom count {}",
            cfg.num_beads, n
        )));
    }
    let nb = cfg.num_beads;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);

    // recentered frames stacked column-wise: [n, 3B]
    let b = frames.len();
    let mut stacked = vec![0.0; n * 3 * b];
    let mut mean_coords = vec![[0.0; 3]; n];
    for (fi, f) in frames.iter().enumerate() {
        if f.len() != n {
            return Err(Error::Shape("frames differ in atom count".to_string()));
        }
        let (centered, _) = crate::baselines::recenter(&f.coords);
        for (i, p) in centered.iter().enumerate() {
            for k in 0..3 {
                stacked[i * 3 * b + fi * 3 + k] = p[k];
                mean_coords[i][k] += p[k] / b as f64;
            }
        }
    }
    let x_all = Tensor::new(stacked, &[n, 3 * b])?;

    let logits: Vec<f64> = (0..n * nb).map(|_| rng.gen_range(-0.1..0.1)).collect();
    let mut params = AutoGrainParams {
        logits: Tensor::new(logits, &[n, nb])?,
        decode: Tensor::zeros(&[n, nb]),
    };
    // initialize the decode matrix as the lift of the current argmax
    {
        let mut assign = hard_assignment(&params.logits);
        repair_empty_beads(&mut assign, nb, &mean_coords);
        params.decode = lift_matrix(&CgMapping::uniform(assign, nb)?);
    }

    let mut adam = Adam::new(cfg.learning_rate);
    let mut history = Vec::with_capacity(cfg.epochs);
    let scale = 1.0 / (n * b) as f64;
    for epoch in 0..cfg.epochs {
        let tau = (cfg.tau_start - cfg.tau_step * epoch as f64).max(cfg.tau_min);
        let tape = Tape::new();
        let bound = params.watched(&tape);
        let g = gumbel_noise(&mut rng, n, nb);
        let y = soft_assignment(&tape, &bound.logits, Some(&g), tau)?;
        // M = row-normalized Cᵀ, with C = yᵀ
        let ct = tape.transpose2(&y)?;
        let bead_sums = tape.reshape(&tape.matmul(&ct, &Tensor::full(&[n, 1], 1.0))?, &[nb])?;
        let m = tape.scale(&ct, &tape.div(&Tensor::full(&[nb], 1.0), &bead_sums)?)?;
        let x_cg = tape.matmul(&m, &x_all)?;

        let decoded = tape.matmul(&bound.decode, &x_cg)?;
        let resid = tape.sub(&decoded, &x_all)?;
        let msd = tape.mul_scalar(&tape.sum_all(&tape.mul(&resid, &resid)?)?, scale)?;

        let lifted = tape.matmul(&y, &x_cg)?;
        let gap = tape.sub(&lifted, &x_all)?;
        let geo = tape.mul_scalar(&tape.sum_all(&tape.mul(&gap, &gap)?)?, scale)?;

        let total = tape.add(&msd, &tape.mul_scalar(&geo, cfg.geo_weight)?)?;
        let val = total.item()?;
        if !val.is_finite() {
            return Err(Error::TrainingDiverged(format!(
                "mapping loss became {} at epoch {}",
                val, epoch
            )));
        }
        history.push(val);
        let grads = tape.backward(&total)?;
        adam.update(&mut params, &bound, &grads);
    }

    let mut assign = hard_assignment(&params.logits);
    repair_empty_beads(&mut assign, nb, &mean_coords);
    let mapping = CgMapping::uniform(assign, nb)?;

    let tau_final = (cfg.tau_start - cfg.tau_step * cfg.epochs as f64).max(cfg.tau_min);
    let tape = Tape::new();
    let soft = soft_assignment(&tape, &params.logits, None, tau_final)?;
    Ok(AutoGrainResult {
        mapping,
        soft: soft.detach(),
        loss_history: history,
    })
}
