//! Equivariant decoder `p_θ(x|X,z)`.
//!
//! Node state carries four channel types — scalars `H`, pseudoscalars
//! `H̄`, vectors `V`, pseudovectors `V̄` — updated by convolutions whose
//! terms are built strictly from type-respecting products (element-wise,
//! dot, cross) plus the unit-vector edge basis `Ê`. Scalars and vectors
//! then pass through a gated update block; pseudo channels take plain
//! residuals so they keep their sign flip under reflection.
//!
//! The final vector channels are read out one per atom (channel
//! selection) and compiled into coordinates as
//! `x̃ = M⁺X + Δx̃ − M⁺M·Δx̃`, which reprojects onto `X` exactly by
//! construction, for any parameter values.

use rand::Rng;

use super::{FrameFeatures, ModelDims};
use crate::autodiff::{Tape, Tensor};
use crate::error::{Error, Result};
use crate::nn::{init_mix, join, Mlp, Params};

/// Four-channel node state on the coarse graph.
#[derive(Clone, Debug)]
pub struct DecoderState {
    /// Scalars `[N,F]`.
    pub h: Tensor,
    /// Pseudoscalars `[N,F]`.
    pub h_bar: Tensor,
    /// Vectors `[N,F,3]`.
    pub v: Tensor,
    /// Pseudovectors `[N,F,3]`.
    pub v_bar: Tensor,
}

impl DecoderState {
    /// Initial state: `H⁰ = z`, everything else zero, except `H̄⁰ = 1_F`
    /// when the symmetry-breaking pseudoscalar initialization is on.
    pub fn initial(z: &Tensor, pseudo_init: bool) -> Result<Self> {
        let shape = z.shape();
        if shape.len() != 2 {
            return Err(Error::Shape(format!(
                "latent must be [N,F], got {:?}",
                shape
            )));
        }
        let (n, f) = (shape[0], shape[1]);
        Ok(DecoderState {
            h: z.clone(),
            h_bar: if pseudo_init {
                Tensor::full(&[n, f], 1.0)
            } else {
                Tensor::zeros(&[n, f])
            },
            v: Tensor::zeros(&[n, f, 3]),
            v_bar: Tensor::zeros(&[n, f, 3]),
        })
    }
}

/// Invariant edge-wise filter `W = L₁(RBF(d_IJ)) ∘ L₂(H_J)`.
#[derive(Clone, Debug)]
pub struct EdgeFilter {
    pub on_rbf: Mlp,
    pub on_h: Mlp,
}

impl EdgeFilter {
    fn init<R: Rng>(rng: &mut R, k: usize, f: usize) -> Self {
        // Output gain keeps fresh filters strong enough that the
        // pseudoscalar initialization visibly breaks reflection symmetry
        // before any training.
        EdgeFilter {
            on_rbf: Mlp::init_gain(rng, k, f, f, 2.0),
            on_h: Mlp::init_gain(rng, f, f, f, 2.0),
        }
    }

    fn value(&self, tape: &Tape, rbf: &Tensor, h_send: &Tensor) -> Result<Tensor> {
        tape.mul(&self.on_rbf.apply(tape, rbf)?, &self.on_h.apply(tape, h_send)?)
    }
}

impl Params for EdgeFilter {
    fn for_each(&self, prefix: &str, f: &mut dyn FnMut(&str, &Tensor)) {
        self.on_rbf.for_each(&join(prefix, "rbf"), f);
        self.on_h.for_each(&join(prefix, "h"), f);
    }

    fn for_each_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Tensor)) {
        self.on_rbf.for_each_mut(&join(prefix, "rbf"), f);
        self.on_h.for_each_mut(&join(prefix, "h"), f);
    }
}

/// Gated scalar/vector update with channel mixing.
#[derive(Clone, Debug)]
pub struct UpdateBlock {
    pub w_alpha: Tensor,
    pub w_beta: Tensor,
    pub scalar_shift: Mlp,
    pub scalar_gate: Mlp,
    pub vector_gate: Mlp,
}

impl UpdateBlock {
    fn init<R: Rng>(rng: &mut R, f: usize) -> Self {
        UpdateBlock {
            w_alpha: init_mix(rng, f),
            w_beta: init_mix(rng, f),
            scalar_shift: Mlp::init(rng, 2 * f, f, f),
            scalar_gate: Mlp::init(rng, 2 * f, f, f),
            vector_gate: Mlp::init(rng, 2 * f, f, f),
        }
    }
}

impl Params for UpdateBlock {
    fn for_each(&self, prefix: &str, f: &mut dyn FnMut(&str, &Tensor)) {
        f(&join(prefix, "w_alpha"), &self.w_alpha);
        f(&join(prefix, "w_beta"), &self.w_beta);
        self.scalar_shift.for_each(&join(prefix, "shift"), f);
        self.scalar_gate.for_each(&join(prefix, "gate"), f);
        self.vector_gate.for_each(&join(prefix, "vgate"), f);
    }

    fn for_each_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Tensor)) {
        f(&join(prefix, "w_alpha"), &mut self.w_alpha);
        f(&join(prefix, "w_beta"), &mut self.w_beta);
        self.scalar_shift.for_each_mut(&join(prefix, "shift"), f);
        self.scalar_gate.for_each_mut(&join(prefix, "gate"), f);
        self.vector_gate.for_each_mut(&join(prefix, "vgate"), f);
    }
}

/// One decoder round: nine edge filters plus the update block.
#[derive(Clone, Debug)]
pub struct DecoderRound {
    /// `filters[k]` is `W_{k+1}` of the convolution.
    pub filters: Vec<EdgeFilter>,
    pub update: UpdateBlock,
}

impl DecoderRound {
    fn init<R: Rng>(rng: &mut R, k: usize, f: usize) -> Self {
        DecoderRound {
            filters: (0..9).map(|_| EdgeFilter::init(rng, k, f)).collect(),
            update: UpdateBlock::init(rng, f),
        }
    }
}

impl Params for DecoderRound {
    fn for_each(&self, prefix: &str, f: &mut dyn FnMut(&str, &Tensor)) {
        for (i, filt) in self.filters.iter().enumerate() {
            filt.for_each(&join(prefix, &format!("w{}", i + 1)), f);
        }
        self.update.for_each(&join(prefix, "update"), f);
    }

    fn for_each_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Tensor)) {
        for (i, filt) in self.filters.iter_mut().enumerate() {
            filt.for_each_mut(&join(prefix, &format!("w{}", i + 1)), f);
        }
        self.update.for_each_mut(&join(prefix, "update"), f);
    }
}

#[derive(Clone, Debug)]
pub struct DecoderParams {
    pub rounds: Vec<DecoderRound>,
}

impl DecoderParams {
    pub fn init<R: Rng>(rng: &mut R, dims: &ModelDims) -> Self {
        DecoderParams {
            rounds: (0..dims.t_dec)
                .map(|_| DecoderRound::init(rng, dims.rbf_dim, dims.feature_dim))
                .collect(),
        }
    }

    /// Copy with the cross-product filters `W₂, W₆, W₇` forced to zero
    /// (used by the planarity probe).
    pub fn without_cross_filters(&self) -> Self {
        let mut c = self.clone();
        for round in &mut c.rounds {
            for idx in [1, 5, 6] {
                round.filters[idx].on_rbf.zero_output();
            }
        }
        c
    }

    /// Copy with `W₄` made constant one on every edge (geometric-basis probe).
    pub fn with_unit_basis_filter(&self) -> Self {
        let mut c = self.clone();
        for round in &mut c.rounds {
            let f4 = &mut round.filters[3];
            f4.on_rbf.zero_output();
            f4.on_rbf.out.b = Tensor::full(f4.on_rbf.out.b.shape(), 1.0);
            f4.on_h.zero_output();
            f4.on_h.out.b = Tensor::full(f4.on_h.out.b.shape(), 1.0);
        }
        c
    }
}

impl Params for DecoderParams {
    fn for_each(&self, prefix: &str, f: &mut dyn FnMut(&str, &Tensor)) {
        for (i, r) in self.rounds.iter().enumerate() {
            r.for_each(&join(prefix, &format!("round.{}", i)), f);
        }
    }

    fn for_each_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Tensor)) {
        for (i, r) in self.rounds.iter_mut().enumerate() {
            r.for_each_mut(&join(prefix, &format!("round.{}", i)), f);
        }
    }
}

/// One four-channel convolution plus update. `ΔH`, `ΔH̄`, `ΔV`, `ΔV̄`
/// follow the type algebra exactly; see the module docs.
pub fn conv_step(
    tape: &Tape,
    state: &DecoderState,
    feats: &FrameFeatures,
    round: &DecoderRound,
) -> Result<DecoderState> {
    let n = feats.num_beads;
    let recv = &feats.cg_recv;
    let send = &feats.cg_send;

    let hj = tape.gather_rows(&state.h, send)?;
    let hbar_i = tape.gather_rows(&state.h_bar, recv)?;
    let vi = tape.gather_rows(&state.v, recv)?;
    let vj = tape.gather_rows(&state.v, send)?;
    let vbar_i = tape.gather_rows(&state.v_bar, recv)?;
    let vbar_j = tape.gather_rows(&state.v_bar, send)?;

    let w: Vec<Tensor> = round
        .filters
        .iter()
        .map(|filt| filt.value(tape, &feats.cg_rbf, &hj))
        .collect::<Result<_>>()?;

    // ΔH = Σ W₁ ∘ H_J
    let dh = tape.segment_sum(&tape.mul(&w[0], &hj)?, recv, n)?;

    // ΔH̄ = Σ V_I · V̄_J
    let dhbar = tape.segment_sum(&tape.dot3(&vi, &vbar_j)?, recv, n)?;

    // ΔV = Σ W₂∘(V_I×V̄_J) + W₃∘H̄_I∘V̄_J + W₄·Ê + W₅∘V_J
    let tv = {
        let t1 = tape.scale(&tape.cross(&vi, &vbar_j)?, &w[1])?;
        let t2 = tape.scale(&vbar_j, &tape.mul(&w[2], &hbar_i)?)?;
        let t3 = tape.outer3(&w[3], &feats.e_hat)?;
        let t4 = tape.scale(&vj, &w[4])?;
        tape.add(&tape.add(&t1, &t2)?, &tape.add(&t3, &t4)?)?
    };
    let dv = tape.segment_sum(&tv, recv, n)?;

    // ΔV̄ = Σ W₆∘(V_I×V_J) + W₇∘(V̄_I×V̄_J) + W₈∘V̄_J + W₉∘H̄_I∘V_J
    let tvb = {
        let t1 = tape.scale(&tape.cross(&vi, &vj)?, &w[5])?;
        let t2 = tape.scale(&tape.cross(&vbar_i, &vbar_j)?, &w[6])?;
        let t3 = tape.scale(&vbar_j, &w[7])?;
        let t4 = tape.scale(&vj, &tape.mul(&w[8], &hbar_i)?)?;
        tape.add(&tape.add(&t1, &t2)?, &tape.add(&t3, &t4)?)?
    };
    let dvbar = tape.segment_sum(&tvb, recv, n)?;

    // gated update for (H, V); plain residual for (H̄, V̄)
    let h1 = tape.add(&state.h, &dh)?;
    let v1 = tape.add(&state.v, &dv)?;
    let wbv = tape.channel_mix(&round.update.w_beta, &v1)?;
    let wav = tape.channel_mix(&round.update.w_alpha, &v1)?;
    let cat = tape.concat_cols(&h1, &tape.norm3(&wbv)?)?;
    let shift = round.update.scalar_shift.apply(tape, &cat)?;
    let gate = round.update.scalar_gate.apply(tape, &cat)?;
    let gated = tape.mul(&gate, &tape.dot3(&wav, &wbv)?)?;
    let h_next = tape.add(&tape.add(&h1, &shift)?, &gated)?;
    let vgate = round.update.vector_gate.apply(tape, &cat)?;
    let v_next = tape.add(&v1, &tape.scale(&v1, &vgate)?)?;

    Ok(DecoderState {
        h: h_next,
        h_bar: tape.add(&state.h_bar, &dhbar)?,
        v: v_next,
        v_bar: tape.add(&state.v_bar, &dvbar)?,
    })
}

/// Read atom `i`'s displacement from vector channel `Index(i, C_I)` of
/// its bead: `Δx̃_i = Vθ[m(i), Index(i, C_{m(i)})]`.
pub fn channel_select(
    tape: &Tape,
    v_theta: &Tensor,
    assign: &[usize],
    channel_idx: &[usize],
) -> Result<Tensor> {
    let shape = v_theta.shape();
    if shape.len() != 3 || shape[2] != 3 {
        return Err(Error::Shape(format!(
            "channel_select expects [N,F,3], got {:?}",
            shape
        )));
    }
    let f = shape[1];
    if let Some((atom, &c)) = channel_idx.iter().enumerate().find(|(_, &c)| c >= f) {
        return Err(Error::Capacity(format!(
            "atom {} needs vector channel {} but only {} channels exist \
             (a bead holds more atoms than feature_dim)",
            atom, c, f
        )));
    }
    let flat = tape.reshape(v_theta, &[shape[0] * f, 3])?;
    let rows: Vec<usize> = assign
        .iter()
        .zip(channel_idx.iter())
        .map(|(&b, &c)| b * f + c)
        .collect();
    tape.gather_rows(&flat, &rows)
}

/// Full decode: run the convolution rounds, select channels, and compile
/// `x̃ = M⁺X + Δx̃ − M⁺M·Δx̃`.
pub fn decode(
    tape: &Tape,
    feats: &FrameFeatures,
    z: &Tensor,
    params: &DecoderParams,
    pseudo_init: bool,
) -> Result<Tensor> {
    let mut state = DecoderState::initial(z, pseudo_init)?;
    for round in &params.rounds {
        state = conv_step(tape, &state, feats, round)?;
    }
    let dx = channel_select(tape, &state.v, &feats.assign, &feats.channel_idx)?;

    let lifted = tape.gather_rows(&feats.x_cg, &feats.assign)?;
    let wnorm = Tensor::new(feats.wnorm.clone(), &[feats.num_atoms])?;
    let m_dx = tape.segment_sum(&tape.scale(&dx, &wnorm)?, &feats.assign, feats.num_beads)?;
    let recentered = tape.sub(&dx, &tape.gather_rows(&m_dx, &feats.assign)?)?;
    tape.add(&lifted, &recentered)
}

/// Largest distance of any decoded atom from the plane spanned by three
/// beads. `None` when the probe does not apply (bead count differs from
/// three, or the beads are collinear).
pub fn planarity_extent(cg_coords: &[[f64; 3]], samples: &[Vec<[f64; 3]>]) -> Option<f64> {
    if cg_coords.len() != 3 {
        return None;
    }
    let (a, b, c) = (cg_coords[0], cg_coords[1], cg_coords[2]);
    let u = [b[0] - a[0], b[1] - a[1], b[2] - a[2]];
    let v = [c[0] - a[0], c[1] - a[1], c[2] - a[2]];
    let mut normal = [
        u[1] * v[2] - u[2] * v[1],
        u[2] * v[0] - u[0] * v[2],
        u[0] * v[1] - u[1] * v[0],
    ];
    let norm = (normal[0] * normal[0] + normal[1] * normal[1] + normal[2] * normal[2]).sqrt();
    if norm < 1e-10 {
        return None;
    }
    for x in normal.iter_mut() {
        *x /= norm;
    }
    let mut extent = 0.0f64;
    for sample in samples {
        for p in sample {
            let d = (p[0] - a[0]) * normal[0] + (p[1] - a[1]) * normal[1]
                + (p[2] - a[2]) * normal[2];
            extent = extent.max(d.abs());
        }
    }
    Some(extent)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{
        apply_isometry, project_coords, random_reflection, random_rotation, CgMapping,
        Conformation, Element,
    };
    use crate::model::encoder::standard_noise;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn test_dims() -> ModelDims {
        ModelDims {
            feature_dim: 8,
            rbf_dim: 4,
            t_enc: 2,
            t_prior: 2,
            t_dec: 3,
            fg_cutoff: 3.0,
            cg_cutoff: 8.0,
            pseudo_init: false,
        }
    }

    fn frame(rng: &mut ChaCha8Rng, n: usize) -> Conformation {
        let coords: Vec<[f64; 3]> = (0..n)
            .map(|i| {
                [
                    1.5 * i as f64 + rng.gen_range(-0.3..0.3),
                    rng.gen_range(-0.8..0.8),
                    rng.gen_range(-0.8..0.8),
                ]
            })
            .collect();
        Conformation::new(vec![Element::C; n], coords).unwrap()
    }

    fn random_state(rng: &mut ChaCha8Rng, n: usize, f: usize) -> DecoderState {
        let rand = |rng: &mut ChaCha8Rng, len: usize| -> Vec<f64> {
            (0..len).map(|_| rng.gen_range(-1.0..1.0)).collect()
        };
        DecoderState {
            h: Tensor::new(rand(rng, n * f), &[n, f]).unwrap(),
            h_bar: Tensor::new(rand(rng, n * f), &[n, f]).unwrap(),
            v: Tensor::new(rand(rng, n * f * 3), &[n, f, 3]).unwrap(),
            v_bar: Tensor::new(rand(rng, n * f * 3), &[n, f, 3]).unwrap(),
        }
    }

    /// Transform a state by orthogonal `q` according to channel types:
    /// H fixed, H̄ scaled by det, V rotated, V̄ rotated and scaled by det.
    fn transform_state(state: &DecoderState, q: &[[f64; 3]; 3]) -> DecoderState {
        let det = crate::geometry::det3(q);
        let rot = |t: &Tensor, flip: bool| -> Tensor {
            let rows = t.rows3().unwrap();
            let moved = apply_isometry(&rows, q, &[0.0; 3]).unwrap();
            let mut data: Vec<f64> = moved.into_iter().flatten().collect();
            if flip && det < 0.0 {
                for v in data.iter_mut() {
                    *v = -*v;
                }
            }
            Tensor::new(data, t.shape()).unwrap()
        };
        let flip_scalar = |t: &Tensor| -> Tensor {
            let data: Vec<f64> = t.data().iter().map(|&x| x * det).collect();
            Tensor::new(data, t.shape()).unwrap()
        };
        DecoderState {
            h: state.h.clone(),
            h_bar: flip_scalar(&state.h_bar),
            v: rot(&state.v, false),
            v_bar: rot(&state.v_bar, true),
        }
    }

    fn build_feats(
        conf: &Conformation,
        map: &CgMapping,
        dims: &ModelDims,
    ) -> FrameFeatures {
        FrameFeatures::build(conf, map, dims).unwrap()
    }

    #[test]
    fn zero_state_unit_basis_gives_edge_vector_sums() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut dims = test_dims();
        dims.t_dec = 1;
        let conf = frame(&mut rng, 6);
        let map = CgMapping::contiguous(6, 3).unwrap();
        let feats = build_feats(&conf, &map, &dims);
        let params = DecoderParams::init(&mut rng, &dims).with_unit_basis_filter();

        let tape = Tape::new();
        let state = DecoderState::initial(&Tensor::zeros(&[3, dims.feature_dim]), false).unwrap();
        let next = conv_step(&tape, &state, &feats, &params.rounds[0]).unwrap();

        // at zero state every term but W₄·Ê vanishes, and the vector gate
        // contributes (1+g)·ΔV per channel; compare channel 0 against the
        // raw edge-vector sum direction by normalizing both
        let mut sums = vec![[0.0f64; 3]; 3];
        for (arc, &r) in feats.cg_recv.iter().enumerate() {
            for k in 0..3 {
                sums[r][k] += feats.e_hat.data()[arc * 3 + k];
            }
        }
        let v = next.v.rows3().unwrap();
        for bead in 0..3 {
            let raw = sums[bead];
            let got = v[bead * dims.feature_dim]; // channel 0
            let nr = (raw[0] * raw[0] + raw[1] * raw[1] + raw[2] * raw[2]).sqrt();
            let ng = (got[0] * got[0] + got[1] * got[1] + got[2] * got[2]).sqrt();
            if nr < 1e-12 {
                assert!(ng < 1e-12);
                continue;
            }
            for k in 0..3 {
                assert!(
                    (got[k] / ng - raw[k] / nr).abs() < 1e-10,
                    "bead {} direction mismatch",
                    bead
                );
            }
        }
        // pseudo channels stay exactly zero from a zero state
        assert!(next.h_bar.data().iter().all(|&x| x == 0.0));
        assert!(next.v_bar.data().iter().all(|&x| x == 0.0));
    }

    #[test]
    fn conv_step_channel_types_under_reflection() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let dims = test_dims();
        let conf = frame(&mut rng, 8);
        let map = CgMapping::contiguous(8, 4).unwrap();
        let params = DecoderParams::init(&mut rng, &dims);

        for _ in 0..10 {
            let p = random_reflection(&mut rng);
            let state = random_state(&mut rng, 4, dims.feature_dim);

            let feats = build_feats(&conf, &map, &dims);
            let tape = Tape::new();
            let out = conv_step(&tape, &state, &feats, &params.rounds[0]).unwrap();

            let moved = Conformation::new(
                conf.elements.clone(),
                apply_isometry(&conf.coords, &p, &[0.0; 3]).unwrap(),
            )
            .unwrap();
            let mfeats = build_feats(&moved, &map, &dims);
            let tape = Tape::new();
            let out_p =
                conv_step(&tape, &transform_state(&state, &p), &mfeats, &params.rounds[0])
                    .unwrap();

            let expect = transform_state(&out, &p);
            for (name, a, b) in [
                ("H", &expect.h, &out_p.h),
                ("H̄", &expect.h_bar, &out_p.h_bar),
                ("V", &expect.v, &out_p.v),
                ("V̄", &expect.v_bar, &out_p.v_bar),
            ] {
                for (x, y) in a.data().iter().zip(b.data()) {
                    assert!(
                        (x - y).abs() < 1e-10,
                        "{} channel transforms wrongly: {} vs {}",
                        name,
                        x,
                        y
                    );
                }
            }
        }
    }

    #[test]
    fn decode_satisfies_r1() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let dims = test_dims();
        for _ in 0..10 {
            let n = rng.gen_range(6..12);
            let nb = rng.gen_range(2..4);
            let conf = frame(&mut rng, n);
            let map = CgMapping::contiguous(n, nb).unwrap();
            let feats = build_feats(&conf, &map, &dims);
            let params = DecoderParams::init(&mut rng, &dims);
            let z = standard_noise(&[nb, dims.feature_dim], &mut rng);
            let tape = Tape::new();
            let xt = decode(&tape, &feats, &z, &params, false).unwrap();
            let reproj = project_coords(&xt.rows3().unwrap(), &map);
            for (got, want) in reproj.iter().zip(feats.x_cg.rows3().unwrap()) {
                for k in 0..3 {
                    assert!((got[k] - want[k]).abs() < 1e-10, "R1 violated");
                }
            }
        }
    }

    #[test]
    fn decode_equivariant_under_rotation_and_translation() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let dims = test_dims();
        let conf = frame(&mut rng, 8);
        let map = CgMapping::contiguous(8, 4).unwrap();
        let params = DecoderParams::init(&mut rng, &dims);
        let z = standard_noise(&[4, dims.feature_dim], &mut rng);

        let feats = build_feats(&conf, &map, &dims);
        let tape = Tape::new();
        let xt = decode(&tape, &feats, &z, &params, false).unwrap();

        for _ in 0..10 {
            let q = random_rotation(&mut rng);
            let g = [
                rng.gen_range(-2.0..2.0),
                rng.gen_range(-2.0..2.0),
                rng.gen_range(-2.0..2.0),
            ];
            let moved = Conformation::new(
                conf.elements.clone(),
                apply_isometry(&conf.coords, &q, &g).unwrap(),
            )
            .unwrap();
            let mfeats = build_feats(&moved, &map, &dims);
            let tape = Tape::new();
            let xt_m = decode(&tape, &mfeats, &z, &params, false).unwrap();
            let expect = apply_isometry(&xt.rows3().unwrap(), &q, &g).unwrap();
            for (a, b) in xt_m.rows3().unwrap().iter().zip(expect.iter()) {
                for k in 0..3 {
                    assert!((a[k] - b[k]).abs() < 1e-9);
                }
            }
        }
    }

    #[test]
    fn reflection_equivariance_holds_iff_pseudo_init_off() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let dims = test_dims();
        let conf = frame(&mut rng, 8);
        let map = CgMapping::contiguous(8, 4).unwrap();
        let params = DecoderParams::init(&mut rng, &dims);
        let z = standard_noise(&[4, dims.feature_dim], &mut rng);
        let feats = build_feats(&conf, &map, &dims);

        for pseudo in [false, true] {
            let tape = Tape::new();
            let xt = decode(&tape, &feats, &z, &params, pseudo).unwrap();
            let mut worst = 0.0f64;
            for _ in 0..10 {
                let p = random_reflection(&mut rng);
                let moved = Conformation::new(
                    conf.elements.clone(),
                    apply_isometry(&conf.coords, &p, &[0.0; 3]).unwrap(),
                )
                .unwrap();
                let mfeats = build_feats(&moved, &map, &dims);
                let tape = Tape::new();
                let xt_m = decode(&tape, &mfeats, &z, &params, pseudo).unwrap();
                let expect = apply_isometry(&xt.rows3().unwrap(), &p, &[0.0; 3]).unwrap();
                for (a, b) in xt_m.rows3().unwrap().iter().zip(expect.iter()) {
                    for k in 0..3 {
                        worst = worst.max((a[k] - b[k]).abs());
                    }
                }
            }
            if pseudo {
                assert!(worst > 1e-3, "pseudo init should break reflections, worst {}", worst);
            } else {
                assert!(worst < 1e-9, "reflection equivariance violated by {}", worst);
            }
        }
    }

    #[test]
    fn channel_select_indexing() {
        // Index(1,(1,2,4)) = 0 and Index(4,(1,2,4)) = 2
        let map = CgMapping::uniform(vec![1, 0, 0, 1, 0], 2).unwrap();
        // C_0 = (1,2,4), C_1 = (0,3)
        let idx = map.channel_index();
        assert_eq!(idx[1], 0);
        assert_eq!(idx[4], 2);

        let f = 3;
        let tape = Tape::new();
        let data: Vec<f64> = (0..2 * f * 3).map(|i| i as f64).collect();
        let v_theta = Tensor::new(data, &[2, f, 3]).unwrap();
        let dx = channel_select(&tape, &v_theta, map.assign(), &idx).unwrap();
        let rows = dx.rows3().unwrap();
        let vt = v_theta.rows3().unwrap(); // rows are (bead*f + channel)
        assert_eq!(rows[1], vt[0]); // atom 1 → bead 0 channel 0
        assert_eq!(rows[4], vt[2]); // atom 4 → bead 0 channel 2
        assert_eq!(rows[0], vt[f]); // atom 0 → bead 1 channel 0
        assert_eq!(rows[3], vt[f + 1]); // atom 3 → bead 1 channel 1

        // channels at index ≥ |C_I| are never read: perturbing them is invisible
        let mut data2: Vec<f64> = v_theta.data().to_vec();
        for k in 0..3 {
            data2[(f - 1) * 3 + k] += 100.0; // bead 0, channel 2 is read (|C_0|=3) — leave it
            data2[(f + 2) * 3 + k] += 100.0; // bead 1, channel 2 unused (|C_1|=2)
        }
        let mut data3 = data2.clone();
        for k in 0..3 {
            data3[(f - 1) * 3 + k] = v_theta.data()[(f - 1) * 3 + k]; // restore read channel
        }
        let v2 = Tensor::new(data3, &[2, f, 3]).unwrap();
        let dx2 = channel_select(&tape, &v2, map.assign(), &idx).unwrap();
        assert_eq!(dx2.data(), dx.data());
    }

    #[test]
    fn capacity_error_when_bead_exceeds_channels() {
        let map = CgMapping::uniform(vec![0, 0, 0], 1).unwrap();
        let tape = Tape::new();
        let v_theta = Tensor::zeros(&[1, 2, 3]); // only 2 channels for 3 atoms
        let err = channel_select(&tape, &v_theta, map.assign(), &map.channel_index());
        assert!(matches!(err, Err(Error::Capacity(_))));
    }

    #[test]
    fn translation_shifts_output_exactly() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let dims = test_dims();
        let conf = frame(&mut rng, 6);
        let map = CgMapping::contiguous(6, 2).unwrap();
        let params = DecoderParams::init(&mut rng, &dims);
        let z = standard_noise(&[2, dims.feature_dim], &mut rng);

        let feats = build_feats(&conf, &map, &dims);
        let tape = Tape::new();
        let xt = decode(&tape, &feats, &z, &params, false).unwrap();

        let g = [3.0, -1.5, 0.25];
        let eye = [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]];
        let moved = Conformation::new(
            conf.elements.clone(),
            apply_isometry(&conf.coords, &eye, &g).unwrap(),
        )
        .unwrap();
        let mfeats = build_feats(&moved, &map, &dims);
        let tape = Tape::new();
        let xt_m = decode(&tape, &mfeats, &z, &params, false).unwrap();
        for (a, b) in xt_m.rows3().unwrap().iter().zip(xt.rows3().unwrap()) {
            for k in 0..3 {
                assert!((a[k] - (b[k] + g[k])).abs() < 1e-10);
            }
        }
    }


    #[test]
    fn planarity_extent_sentinel_and_plane() {
        // 4 beads: not applicable
        assert!(planarity_extent(&[[0.0; 3]; 4], &[]).is_none());
        // collinear beads: not applicable
        assert!(planarity_extent(
            &[[0.0; 3], [1.0, 0.0, 0.0], [2.0, 0.0, 0.0]],
            &[]
        )
        .is_none());
        let cg = [[0.0, 0.0, 0.0], [1.0, 0.0, 0.0], [0.0, 1.0, 0.0]];
        let samples = vec![vec![[0.3, 0.3, 0.0], [0.5, 0.2, -0.7]]];
        let e = planarity_extent(&cg, &samples).unwrap();
        assert!((e - 0.7).abs() < 1e-12);
    }
}
