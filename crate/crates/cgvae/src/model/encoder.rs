//! Invariant encoder `q_φ(z|x,X)` and prior `p_ψ(z|X)`.
//!
//! Each encoder round runs three message-passing stages: fine-grained
//! graph convolution, pooling from atoms to their beads, and
//! coarse-grained graph convolution. Every input is a distance or an
//! atom type, so the per-bead Gaussian parameters are invariant under
//! rigid motions (including reflections) of the frame.

use rand::Rng;
use rand_distr::StandardNormal;

use super::{FrameFeatures, ModelDims};
use crate::autodiff::{Tape, Tensor};
use crate::error::Result;
use crate::nn::{join, Mlp, Params};

/// Floor added to every σ head output to keep scales strictly positive.
pub const SIGMA_FLOOR: f64 = 1e-6;

/// One message network: `filter(RBF(d)) ∘ gate(node features)`.
#[derive(Clone, Debug)]
pub struct MsgBlock {
    pub filter: Mlp,
    pub gate: Mlp,
}

impl MsgBlock {
    fn init<R: Rng>(rng: &mut R, k: usize, f: usize) -> Self {
        MsgBlock {
            filter: Mlp::init(rng, k, f, f),
            gate: Mlp::init(rng, f, f, f),
        }
    }

    fn message(&self, tape: &Tape, rbf: &Tensor, node_input: &Tensor) -> Result<Tensor> {
        let w = self.filter.apply(tape, rbf)?;
        let g = self.gate.apply(tape, node_input)?;
        tape.mul(&w, &g)
    }
}

impl Params for MsgBlock {
    fn for_each(&self, prefix: &str, f: &mut dyn FnMut(&str, &Tensor)) {
        self.filter.for_each(&join(prefix, "filter"), f);
        self.gate.for_each(&join(prefix, "gate"), f);
    }

    fn for_each_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Tensor)) {
        self.filter.for_each_mut(&join(prefix, "filter"), f);
        self.gate.for_each_mut(&join(prefix, "gate"), f);
    }
}

/// Per-bead diagonal Gaussian parameters.
#[derive(Clone, Debug)]
pub struct GaussianField {
    /// `[N,F]`
    pub mu: Tensor,
    /// `[N,F]`, strictly positive.
    pub sigma: Tensor,
}

impl GaussianField {
    /// Standard-normal noise shaped like this field, from `rng`.
    pub fn noise_like<R: Rng>(&self, rng: &mut R) -> Tensor {
        standard_noise(self.mu.shape(), rng)
    }
}

pub fn standard_noise<R: Rng>(shape: &[usize], rng: &mut R) -> Tensor {
    let n: usize = shape.iter().product();
    let data: Vec<f64> = (0..n).map(|_| rng.sample(StandardNormal)).collect();
    Tensor::new(data, shape).expect("noise shape")
}

#[derive(Clone, Debug)]
pub struct EncoderParams {
    /// Atom-type embedding, `[5,F]`.
    pub embed: Tensor,
    pub fg: Vec<MsgBlock>,
    pub pool: Vec<MsgBlock>,
    pub cg: Vec<MsgBlock>,
    pub mu_head: Mlp,
    pub sigma_head: Mlp,
}

impl EncoderParams {
    pub fn init<R: Rng>(rng: &mut R, dims: &ModelDims) -> Self {
        let (f, k) = (dims.feature_dim, dims.rbf_dim);
        let embed: Vec<f64> = (0..5 * f).map(|_| rng.sample::<f64, _>(StandardNormal) * 0.5).collect();
        EncoderParams {
            embed: Tensor::new(embed, &[5, f]).expect("embedding shape"),
            fg: (0..dims.t_enc).map(|_| MsgBlock::init(rng, k, f)).collect(),
            pool: (0..dims.t_enc).map(|_| MsgBlock::init(rng, k, f)).collect(),
            cg: (0..dims.t_enc).map(|_| MsgBlock::init(rng, k, f)).collect(),
            mu_head: Mlp::init(rng, f, f, f),
            sigma_head: Mlp::init(rng, f, f, f),
        }
    }
}

impl Params for EncoderParams {
    fn for_each(&self, prefix: &str, f: &mut dyn FnMut(&str, &Tensor)) {
        f(&join(prefix, "embed"), &self.embed);
        for (i, b) in self.fg.iter().enumerate() {
            b.for_each(&join(prefix, &format!("fg.{}", i)), f);
        }
        for (i, b) in self.pool.iter().enumerate() {
            b.for_each(&join(prefix, &format!("pool.{}", i)), f);
        }
        for (i, b) in self.cg.iter().enumerate() {
            b.for_each(&join(prefix, &format!("cg.{}", i)), f);
        }
        self.mu_head.for_each(&join(prefix, "mu"), f);
        self.sigma_head.for_each(&join(prefix, "sigma"), f);
    }

    fn for_each_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Tensor)) {
        f(&join(prefix, "embed"), &mut self.embed);
        for (i, b) in self.fg.iter_mut().enumerate() {
            b.for_each_mut(&join(prefix, &format!("fg.{}", i)), f);
        }
        for (i, b) in self.pool.iter_mut().enumerate() {
            b.for_each_mut(&join(prefix, &format!("pool.{}", i)), f);
        }
        for (i, b) in self.cg.iter_mut().enumerate() {
            b.for_each_mut(&join(prefix, &format!("cg.{}", i)), f);
        }
        self.mu_head.for_each_mut(&join(prefix, "mu"), f);
        self.sigma_head.for_each_mut(&join(prefix, "sigma"), f);
    }
}

fn gaussian_heads(
    tape: &Tape,
    h: &Tensor,
    mu_head: &Mlp,
    sigma_head: &Mlp,
) -> Result<GaussianField> {
    let mu = mu_head.apply(tape, h)?;
    let raw = sigma_head.apply(tape, h)?;
    let sigma = tape.add_scalar(&tape.softplus(&raw)?, SIGMA_FLOOR)?;
    Ok(GaussianField { mu, sigma })
}

/// Posterior `q_φ(z|x,X)`: message rounds over fine graph → pooling →
/// coarse graph, then Gaussian heads.
pub fn encode(tape: &Tape, feats: &FrameFeatures, params: &EncoderParams) -> Result<GaussianField> {
    let mut h = tape.gather_rows(&params.embed, &feats.atom_types)?;
    let f = params.embed.shape()[1];
    let mut big_h = Tensor::zeros(&[feats.num_beads, f]);
    for round in 0..params.fg.len() {
        // fine-grained message passing
        let hi = tape.gather_rows(&h, &feats.fg_recv)?;
        let hj = tape.gather_rows(&h, &feats.fg_send)?;
        let msg = params.fg[round].message(tape, &feats.fg_rbf, &tape.mul(&hi, &hj)?)?;
        h = tape.add(&h, &tape.segment_sum(&msg, &feats.fg_recv, feats.num_atoms)?)?;

        // pool atoms onto their beads
        let pmsg = params.pool[round].message(tape, &feats.pool_rbf, &h)?;
        let h_tilde = tape.add(
            &big_h,
            &tape.segment_sum(&pmsg, &feats.assign, feats.num_beads)?,
        )?;

        // coarse-grained message passing (residual on the pre-pool state)
        let ti = tape.gather_rows(&h_tilde, &feats.cg_recv)?;
        let tj = tape.gather_rows(&h_tilde, &feats.cg_send)?;
        let cmsg = params.cg[round].message(tape, &feats.cg_rbf, &tape.mul(&ti, &tj)?)?;
        big_h = tape.add(
            &big_h,
            &tape.segment_sum(&cmsg, &feats.cg_recv, feats.num_beads)?,
        )?;
    }
    gaussian_heads(tape, &big_h, &params.mu_head, &params.sigma_head)
}

#[derive(Clone, Debug)]
pub struct PriorParams {
    /// Composition embedding applied to summed one-hot fingerprints, `[5,F]`.
    pub embed: Tensor,
    pub cg: Vec<MsgBlock>,
    pub mu_head: Mlp,
    pub sigma_head: Mlp,
}

impl PriorParams {
    pub fn init<R: Rng>(rng: &mut R, dims: &ModelDims) -> Self {
        let (f, k) = (dims.feature_dim, dims.rbf_dim);
        let embed: Vec<f64> = (0..5 * f).map(|_| rng.sample::<f64, _>(StandardNormal) * 0.5).collect();
        PriorParams {
            embed: Tensor::new(embed, &[5, f]).expect("embedding shape"),
            cg: (0..dims.t_prior).map(|_| MsgBlock::init(rng, k, f)).collect(),
            mu_head: Mlp::init(rng, f, f, f),
            sigma_head: Mlp::init(rng, f, f, f),
        }
    }
}

impl Params for PriorParams {
    fn for_each(&self, prefix: &str, f: &mut dyn FnMut(&str, &Tensor)) {
        f(&join(prefix, "embed"), &self.embed);
        for (i, b) in self.cg.iter().enumerate() {
            b.for_each(&join(prefix, &format!("cg.{}", i)), f);
        }
        self.mu_head.for_each(&join(prefix, "mu"), f);
        self.sigma_head.for_each(&join(prefix, "sigma"), f);
    }

    fn for_each_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Tensor)) {
        f(&join(prefix, "embed"), &mut self.embed);
        for (i, b) in self.cg.iter_mut().enumerate() {
            b.for_each_mut(&join(prefix, &format!("cg.{}", i)), f);
        }
        self.mu_head.for_each_mut(&join(prefix, "mu"), f);
        self.sigma_head.for_each_mut(&join(prefix, "sigma"), f);
    }
}

/// Prior `p_ψ(z|X)`: bead features start as summed one-hot fingerprints
/// of their atoms, then coarse message rounds and Gaussian heads.
pub fn prior(tape: &Tape, feats: &FrameFeatures, params: &PriorParams) -> Result<GaussianField> {
    let mut h = tape.matmul(&feats.onehot_sum, &params.embed)?;
    for block in &params.cg {
        let hi = tape.gather_rows(&h, &feats.cg_recv)?;
        let hj = tape.gather_rows(&h, &feats.cg_send)?;
        let msg = block.message(tape, &feats.cg_rbf, &tape.mul(&hi, &hj)?)?;
        h = tape.add(&h, &tape.segment_sum(&msg, &feats.cg_recv, feats.num_beads)?)?;
    }
    gaussian_heads(tape, &h, &params.mu_head, &params.sigma_head)
}

/// `z = μ + σ ∘ ε` — gradients flow to both Gaussian heads.
pub fn reparameterize(tape: &Tape, g: &GaussianField, noise: &Tensor) -> Result<Tensor> {
    tape.add(&g.mu, &tape.mul(&g.sigma, noise)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{
        apply_isometry, random_orthogonal, CgMapping, Conformation, Element,
    };
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn test_dims() -> ModelDims {
        ModelDims {
            feature_dim: 8,
            rbf_dim: 4,
            t_enc: 2,
            t_prior: 2,
            t_dec: 2,
            fg_cutoff: 3.0,
            cg_cutoff: 8.0,
            pseudo_init: false,
        }
    }

    fn chain_frame(rng: &mut ChaCha8Rng, n: usize) -> Conformation {
        let coords: Vec<[f64; 3]> = (0..n)
            .map(|i| {
                [
                    1.5 * i as f64 + rng.gen_range(-0.2..0.2),
                    rng.gen_range(-0.5..0.5),
                    rng.gen_range(-0.5..0.5),
                ]
            })
            .collect();
        Conformation::new(vec![Element::C; n], coords).unwrap()
    }

    #[test]
    fn encoder_output_shapes() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let dims = test_dims();
        let conf = chain_frame(&mut rng, 6);
        let map = CgMapping::contiguous(6, 2).unwrap();
        let feats = FrameFeatures::build(&conf, &map, &dims).unwrap();
        let params = EncoderParams::init(&mut rng, &dims);
        let tape = Tape::new();
        let q = encode(&tape, &feats, &params).unwrap();
        assert_eq!(q.mu.shape(), &[2, 8]);
        assert_eq!(q.sigma.shape(), &[2, 8]);
        assert!(q.sigma.data().iter().all(|&s| s > 0.0));
    }

    #[test]
    fn encoder_and_prior_are_invariant() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let dims = test_dims();
        let conf = chain_frame(&mut rng, 8);
        let map = CgMapping::contiguous(8, 3).unwrap();
        let enc = EncoderParams::init(&mut rng, &dims);
        let pri = PriorParams::init(&mut rng, &dims);

        let feats = FrameFeatures::build(&conf, &map, &dims).unwrap();
        let tape = Tape::new();
        let q0 = encode(&tape, &feats, &enc).unwrap();
        let p0 = prior(&tape, &feats, &pri).unwrap();

        for trial in 0..50 {
            let q = random_orthogonal(&mut rng);
            let g = [
                rng.gen_range(-3.0..3.0),
                rng.gen_range(-3.0..3.0),
                rng.gen_range(-3.0..3.0),
            ];
            let moved = Conformation::new(
                conf.elements.clone(),
                apply_isometry(&conf.coords, &q, &g).unwrap(),
            )
            .unwrap();
            let mfeats = FrameFeatures::build(&moved, &map, &dims).unwrap();
            let tape = Tape::new();
            let q1 = encode(&tape, &mfeats, &enc).unwrap();
            let p1 = prior(&tape, &mfeats, &pri).unwrap();
            let scale = q0
                .mu
                .data()
                .iter()
                .fold(0.0f64, |m, v| m.max(v.abs()))
                .max(1.0);
            for (a, b) in q0.mu.data().iter().zip(q1.mu.data()) {
                assert!((a - b).abs() / scale < 1e-10, "trial {}: {} vs {}", trial, a, b);
            }
            for (a, b) in q0.sigma.data().iter().zip(q1.sigma.data()) {
                assert!((a - b).abs() < 1e-10);
            }
            for (a, b) in p0.mu.data().iter().zip(p1.mu.data()) {
                assert!((a - b).abs() < 1e-10);
            }
        }
    }

    #[test]
    fn prior_symmetric_dimer_rows_match() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let dims = test_dims();
        // two identical CC beads, mirror-symmetric about the origin
        let conf = Conformation::new(
            vec![Element::C, Element::C, Element::C, Element::C],
            vec![
                [-2.2, 0.0, 0.0],
                [-0.8, 0.0, 0.0],
                [0.8, 0.0, 0.0],
                [2.2, 0.0, 0.0],
            ],
        )
        .unwrap();
        let map = CgMapping::contiguous(4, 2).unwrap();
        let feats = FrameFeatures::build(&conf, &map, &dims).unwrap();
        let params = PriorParams::init(&mut rng, &dims);
        let tape = Tape::new();
        let p = prior(&tape, &feats, &params).unwrap();
        let f = dims.feature_dim;
        for c in 0..f {
            assert!((p.mu.data()[c] - p.mu.data()[f + c]).abs() < 1e-12);
            assert!((p.sigma.data()[c] - p.sigma.data()[f + c]).abs() < 1e-12);
        }
    }

    #[test]
    fn permuting_atoms_within_a_bead_changes_nothing() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let dims = test_dims();
        let conf = chain_frame(&mut rng, 6);
        let map = CgMapping::contiguous(6, 2).unwrap();
        let enc = EncoderParams::init(&mut rng, &dims);

        let feats = FrameFeatures::build(&conf, &map, &dims).unwrap();
        let tape = Tape::new();
        let q0 = encode(&tape, &feats, &enc).unwrap();

        // swap atoms 0 and 2 (both in bead 0)
        let perm = [2usize, 1, 0, 3, 4, 5];
        let coords: Vec<[f64; 3]> = perm.iter().map(|&i| conf.coords[i]).collect();
        let elements: Vec<Element> = perm.iter().map(|&i| conf.elements[i]).collect();
        let swapped = Conformation::new(elements, coords).unwrap();
        let sfeats = FrameFeatures::build(&swapped, &map, &dims).unwrap();
        let tape = Tape::new();
        let q1 = encode(&tape, &sfeats, &enc).unwrap();
        for (a, b) in q0.mu.data().iter().zip(q1.mu.data()) {
            assert!((a - b).abs() < 1e-11);
        }
    }

    #[test]
    fn zero_depth_encoder_gives_composition_constant() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut dims = test_dims();
        dims.t_enc = 0;
        let conf = chain_frame(&mut rng, 6);
        let map = CgMapping::contiguous(6, 3).unwrap();
        let feats = FrameFeatures::build(&conf, &map, &dims).unwrap();
        let params = EncoderParams::init(&mut rng, &dims);
        let tape = Tape::new();
        let q = encode(&tape, &feats, &params).unwrap();
        // with no message rounds the heads see zeros: all beads identical
        let f = dims.feature_dim;
        for bead in 1..3 {
            for c in 0..f {
                assert_eq!(q.mu.data()[c], q.mu.data()[bead * f + c]);
            }
        }
    }

    #[test]
    fn reparameterize_zero_noise_returns_mu() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let dims = test_dims();
        let conf = chain_frame(&mut rng, 6);
        let map = CgMapping::contiguous(6, 2).unwrap();
        let feats = FrameFeatures::build(&conf, &map, &dims).unwrap();
        let params = EncoderParams::init(&mut rng, &dims);
        let tape = Tape::new();
        let q = encode(&tape, &feats, &params).unwrap();
        let z = reparameterize(&tape, &q, &Tensor::zeros(q.mu.shape())).unwrap();
        assert_eq!(z.data(), q.mu.data());
    }

    #[test]
    fn reparameterize_sample_mean_matches_mu() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let tape = Tape::new();
        let g = GaussianField {
            mu: Tensor::new(vec![0.7, -1.3], &[1, 2]).unwrap(),
            sigma: Tensor::new(vec![0.5, 2.0], &[1, 2]).unwrap(),
        };
        let draws = 100_000;
        let mut sums = [0.0; 2];
        for _ in 0..draws {
            let z = reparameterize(&tape, &g, &g.noise_like(&mut rng)).unwrap();
            sums[0] += z.data()[0];
            sums[1] += z.data()[1];
        }
        for (k, (&mu, &sigma)) in g.mu.data().iter().zip(g.sigma.data()).enumerate() {
            let mean = sums[k] / draws as f64;
            let bound = 4.0 * sigma / (draws as f64).sqrt();
            assert!(
                (mean - mu).abs() < bound,
                "sample mean {} vs mu {} (bound {})",
                mean,
                mu,
                bound
            );
        }
    }
}
