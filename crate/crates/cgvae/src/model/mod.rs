//! The generative model: invariant encoder/prior and equivariant decoder.
//!
//! Everything the networks consume is precomputed per frame into
//! [`FrameFeatures`]: graph index arrays, radial-basis edge features, and
//! the unit-vector basis on coarse arcs. Those are constants of the frame
//! geometry, so batching frames is plain concatenation with index offsets
//! and the training step only runs network forward/backward passes.

pub mod decoder;
pub mod encoder;

use rand::Rng;

use crate::autodiff::{Tape, Tensor};
use crate::error::{Error, Result};
use crate::geometry::{project, CgMapping, Conformation};
use crate::graphs::{fg_to_cg_arcs, induced_cg_graph, radius_graph, rbf_features, RbfConfig};
use crate::nn::{join, Params};

pub use decoder::{DecoderParams, DecoderState};
pub use encoder::{EncoderParams, GaussianField, PriorParams};

/// Architecture dimensions shared by encoder, prior, and decoder.
#[derive(Clone, Copy, Debug, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelDims {
    /// Node feature width `F` (also the number of decoder vector channels).
    pub feature_dim: usize,
    /// Radial-basis width `K`.
    pub rbf_dim: usize,
    pub t_enc: usize,
    pub t_prior: usize,
    pub t_dec: usize,
    /// Fine-grained radius-graph cutoff `d_cut` (Å).
    pub fg_cutoff: f64,
    /// Coarse-grained feature cutoff `D_cut` (Å).
    pub cg_cutoff: f64,
    /// Initialize pseudoscalars to one instead of zero, breaking
    /// reflection symmetry (needed for planar, e.g. 3-bead, CG geometries).
    pub pseudo_init: bool,
}

impl Default for ModelDims {
    fn default() -> Self {
        ModelDims {
            feature_dim: 32,
            rbf_dim: 8,
            t_enc: 2,
            t_prior: 2,
            t_dec: 3,
            fg_cutoff: 3.0,
            cg_cutoff: 9.5,
            pseudo_init: false,
        }
    }
}

/// Per-frame constants consumed by the networks.
#[derive(Clone, Debug)]
pub struct FrameFeatures {
    pub num_atoms: usize,
    pub num_beads: usize,
    pub atom_types: Vec<usize>,
    /// Atom → bead assignment.
    pub assign: Vec<usize>,
    /// Position of each atom inside its ordered bead set.
    pub channel_idx: Vec<usize>,
    /// Normalized projection weights (the nonzero entries of `M`).
    pub wnorm: Vec<f64>,
    /// Fine coordinates, `[n,3]`.
    pub x: Tensor,
    /// Bead coordinates, `[N,3]`.
    pub x_cg: Tensor,
    /// Fine radius-graph arcs: receiver/sender index pairs.
    pub fg_recv: Vec<usize>,
    pub fg_send: Vec<usize>,
    pub fg_rbf: Tensor,
    /// Pooling features for the `n` arcs atom → its bead.
    pub pool_rbf: Tensor,
    /// Coarse graph arcs.
    pub cg_recv: Vec<usize>,
    pub cg_send: Vec<usize>,
    pub cg_rbf: Tensor,
    /// Unit vectors `(X_send − X_recv)/d` per coarse arc, `[E,3]`.
    pub e_hat: Tensor,
    /// Summed one-hot atom types per bead, `[N,5]` (prior initialization).
    pub onehot_sum: Tensor,
}

impl FrameFeatures {
    /// Featurize one frame against a mapping.
    pub fn build(conf: &Conformation, map: &CgMapping, dims: &ModelDims) -> Result<Self> {
        if conf.len() != map.num_atoms() {
            return Err(Error::Shape(format!(
                "frame has {} atoms, mapping expects {}",
                conf.len(),
                map.num_atoms()
            )));
        }
        let x_cg = project(conf, map)?;
        let fg_graph = radius_graph(&conf.coords, dims.fg_cutoff)?;
        let cg_graph = induced_cg_graph(&fg_graph, map, &x_cg.coords)?;
        let fg_cfg = RbfConfig::new(dims.rbf_dim, dims.fg_cutoff)?;
        let cg_cfg = RbfConfig::new(dims.rbf_dim, dims.cg_cutoff)?;

        let (_, pool_d) = fg_to_cg_arcs(map, &conf.coords, &x_cg.coords)?;

        let mut e_hat = Vec::with_capacity(cg_graph.num_arcs());
        for (&(recv, send), &d) in cg_graph.arcs().iter().zip(cg_graph.dists()) {
            let (a, b) = (x_cg.coords[recv], x_cg.coords[send]);
            e_hat.push([(b[0] - a[0]) / d, (b[1] - a[1]) / d, (b[2] - a[2]) / d]);
        }

        let mut onehot = vec![0.0; map.num_beads() * 5];
        for (i, e) in conf.elements.iter().enumerate() {
            onehot[map.bead_of(i) * 5 + e.type_index()] += 1.0;
        }

        Ok(FrameFeatures {
            num_atoms: conf.len(),
            num_beads: map.num_beads(),
            atom_types: conf.elements.iter().map(|e| e.type_index()).collect(),
            assign: map.assign().to_vec(),
            channel_idx: map.channel_index(),
            wnorm: map.normalized_weights(),
            x: Tensor::from_rows3(&conf.coords),
            x_cg: Tensor::from_rows3(&x_cg.coords),
            fg_recv: fg_graph.sources(),
            fg_send: fg_graph.targets(),
            fg_rbf: rbf_features(fg_graph.dists(), &fg_cfg)?,
            pool_rbf: rbf_features(&pool_d, &fg_cfg)?,
            cg_recv: cg_graph.sources(),
            cg_send: cg_graph.targets(),
            cg_rbf: rbf_features(cg_graph.dists(), &cg_cfg)?,
            e_hat: Tensor::from_rows3(&e_hat),
            onehot_sum: Tensor::new(onehot, &[map.num_beads(), 5])?,
        })
    }

    /// Concatenate frames into one block-diagonal batch.
    pub fn batch(frames: &[&FrameFeatures]) -> Result<FrameFeatures> {
        let first = frames.first().ok_or_else(|| {
            Error::Config("cannot batch zero frames".to_string())
        })?;
        let k = first.fg_rbf.shape()[1];
        let mut out = FrameFeatures {
            num_atoms: 0,
            num_beads: 0,
            atom_types: Vec::new(),
            assign: Vec::new(),
            channel_idx: Vec::new(),
            wnorm: Vec::new(),
            x: Tensor::zeros(&[0, 3]),
            x_cg: Tensor::zeros(&[0, 3]),
            fg_recv: Vec::new(),
            fg_send: Vec::new(),
            fg_rbf: Tensor::zeros(&[0, k]),
            pool_rbf: Tensor::zeros(&[0, k]),
            cg_recv: Vec::new(),
            cg_send: Vec::new(),
            cg_rbf: Tensor::zeros(&[0, k]),
            e_hat: Tensor::zeros(&[0, 3]),
            onehot_sum: Tensor::zeros(&[0, 5]),
        };
        let mut x = Vec::new();
        let mut x_cg = Vec::new();
        let mut fg_rbf = Vec::new();
        let mut pool_rbf = Vec::new();
        let mut cg_rbf = Vec::new();
        let mut e_hat = Vec::new();
        let mut onehot = Vec::new();
        for f in frames {
            let (na, nb) = (out.num_atoms, out.num_beads);
            out.atom_types.extend_from_slice(&f.atom_types);
            out.assign.extend(f.assign.iter().map(|&b| b + nb));
            out.channel_idx.extend_from_slice(&f.channel_idx);
            out.wnorm.extend_from_slice(&f.wnorm);
            out.fg_recv.extend(f.fg_recv.iter().map(|&i| i + na));
            out.fg_send.extend(f.fg_send.iter().map(|&i| i + na));
            out.cg_recv.extend(f.cg_recv.iter().map(|&i| i + nb));
            out.cg_send.extend(f.cg_send.iter().map(|&i| i + nb));
            x.extend_from_slice(f.x.data());
            x_cg.extend_from_slice(f.x_cg.data());
            fg_rbf.extend_from_slice(f.fg_rbf.data());
            pool_rbf.extend_from_slice(f.pool_rbf.data());
            cg_rbf.extend_from_slice(f.cg_rbf.data());
            e_hat.extend_from_slice(f.e_hat.data());
            onehot.extend_from_slice(f.onehot_sum.data());
            out.num_atoms += f.num_atoms;
            out.num_beads += f.num_beads;
        }
        out.x = Tensor::new(x, &[out.num_atoms, 3])?;
        out.x_cg = Tensor::new(x_cg, &[out.num_beads, 3])?;
        out.fg_rbf = Tensor::new(fg_rbf, &[out.fg_recv.len(), k])?;
        out.pool_rbf = Tensor::new(pool_rbf, &[out.num_atoms, k])?;
        out.cg_rbf = Tensor::new(cg_rbf, &[out.cg_recv.len(), k])?;
        out.e_hat = Tensor::new(e_hat, &[out.cg_recv.len(), 3])?;
        out.onehot_sum = Tensor::new(onehot, &[out.num_beads, 5])?;
        Ok(out)
    }
}

/// All learnable pieces of the CGVAE.
#[derive(Clone, Debug)]
pub struct CgvaeModel {
    pub dims: ModelDims,
    pub enc: EncoderParams,
    pub prior: PriorParams,
    pub dec: DecoderParams,
}

impl CgvaeModel {
    pub fn init<R: Rng>(dims: ModelDims, rng: &mut R) -> Self {
        CgvaeModel {
            dims,
            enc: EncoderParams::init(rng, &dims),
            prior: PriorParams::init(rng, &dims),
            dec: DecoderParams::init(rng, &dims),
        }
    }

    /// Deterministic reconstruction path: `z = μ_φ`, then decode.
    pub fn reconstruct(&self, feats: &FrameFeatures) -> Result<Tensor> {
        let tape = Tape::new();
        let q = encoder::encode(&tape, feats, &self.enc)?;
        decoder::decode(&tape, feats, &q.mu, &self.dec, self.dims.pseudo_init)
    }

    /// Draw `z ~ p_ψ(z|X)` with the supplied standard-normal noise and decode.
    pub fn sample_with_noise(&self, feats: &FrameFeatures, noise: &Tensor) -> Result<Tensor> {
        let tape = Tape::new();
        let p = encoder::prior(&tape, feats, &self.prior)?;
        let z = encoder::reparameterize(&tape, &p, noise)?;
        decoder::decode(&tape, feats, &z, &self.dec, self.dims.pseudo_init)
    }
}

impl Params for CgvaeModel {
    fn for_each(&self, prefix: &str, f: &mut dyn FnMut(&str, &Tensor)) {
        self.enc.for_each(&join(prefix, "enc"), f);
        self.prior.for_each(&join(prefix, "prior"), f);
        self.dec.for_each(&join(prefix, "dec"), f);
    }

    fn for_each_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Tensor)) {
        self.enc.for_each_mut(&join(prefix, "enc"), f);
        self.prior.for_each_mut(&join(prefix, "prior"), f);
        self.dec.for_each_mut(&join(prefix, "dec"), f);
    }
}
