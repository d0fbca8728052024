//! Shared fixtures for gradient checks.
#![allow(dead_code)]

pub mod oracles;

use std::collections::HashSet;
use std::sync::Arc;

use spacetime::compnet::{CompNet, CompNetConfig, CondTokens, CompressionPlan};
use spacetime::generative::*;
use spacetime::numerics::*;
use spacetime::rng::SeedRng;
use spacetime::sst::{build_sparse, SparseSpacetimeTensor, VoxelCoord4D};
use spacetime::temporal::*;

pub fn randn(rng: &mut SeedRng, shape: &[usize]) -> DenseTensor<f32> {
    let n = shape.iter().product();
    DenseTensor::new(shape.to_vec(), rng.normal_vec(n)).unwrap()
}

macro_rules! probe {
    ($name:ident, |$tape:ident, $x:ident| $body:expr) => {
        pub struct $name;
        impl Probe for $name {
            fn eval<T: Real>(&self, $tape: &mut Tape<T>, $x: Var) -> spacetime::Result<Var> {
                $body
            }
        }
    };
}

pub fn fixed<T: Real>(tape: &mut Tape<T>, seed: u64, shape: &[usize]) -> Var {
    let mut rng = SeedRng::new(seed);
    tape.constant(randn(&mut rng, shape).cast())
}

probe!(Identity, |_t, x| Ok(x));
probe!(MatmulRight, |t, x| {
    let w = fixed(t, 1, &[4, 3]);
    t.matmul(x, w)
});
probe!(MatmulLeft, |t, x| {
    let a = fixed(t, 2, &[2, 3]);
    t.matmul(a, x)
});
probe!(MatmulNtBoth, |t, x| {
    let a = fixed(t, 3, &[5, 4]);
    let y = t.matmul_nt(x, a)?;
    let z = t.matmul_nt(a, x)?;
    let zt = t.matmul_nt(x, x)?;
    let s1 = t.sum(y)?;
    let s2 = t.sum(z)?;
    let s3 = t.sum(zt)?;
    let c = t.concat_rows(&[s1, s2])?;
    let c = t.reshape(c, vec![1, 2])?;
    let s3 = t.reshape(s3, vec![1, 1])?;
    t.concat_cols(&[c, s3])
});
probe!(Elementwise, |t, x| {
    let a = fixed(t, 4, &[3, 4]);
    let s = t.add(x, a)?;
    let d = t.sub(s, x)?;
    let d = t.sub(d, x)?;
    let m = t.mul(d, x)?;
    let m = t.mul(m, x)?;
    let k = t.scale(m, 0.7)?;
    t.add_scalar(k, 1.5)
});
probe!(RowOps, |t, x| {
    let r = fixed(t, 5, &[4]);
    let a = t.add_row(x, r)?;
    let b = t.mul_row(a, r)?;
    let row = t.slice_rows(x, 1, 1)?;
    let row = t.reshape(row, vec![4])?;
    let c = t.mul_row(b, row)?;
    t.add_row(c, row)
});
probe!(Normalize, |t, x| {
    let n = t.normalize_rows(x, 1e-5)?;
    let w = fixed(t, 6, &[3, 4]);
    t.mul(n, w)
});
probe!(Activations, |t, x| {
    let a = t.gelu(x)?;
    let b = t.silu(x)?;
    let c = t.sigmoid(x)?;
    let d = t.exp(x)?;
    let e = t.tanh(x)?;
    let f = t.clamp(x, -10.0, 10.0)?;
    t.concat_cols(&[a, b, c, d, e, f])
});
probe!(Softmax, |t, x| t.softmax_rows(x));
probe!(Reductions, |t, x| {
    let s = t.sum(x)?;
    let m = t.mean(x)?;
    let a = fixed(t, 7, &[3, 4]);
    let e = t.mse(x, a)?;
    t.concat_rows(&[s, m, e])
});
probe!(SliceConcat, |t, x| {
    let a = t.slice_cols(x, 1, 2)?;
    let b = t.slice_cols(x, 0, 3)?;
    let c = t.concat_cols(&[a, b, a])?;
    let r = t.slice_rows(c, 1, 2)?;
    let q = t.mul(r, r)?;
    t.concat_rows(&[c, q])
});
probe!(Gathers, |t, x| {
    let idx: Arc<[Option<u32>]> = vec![Some(2), None, Some(0), Some(2)].into();
    let g = t.gather_rows(x, idx)?;
    let flat: Arc<[u32]> = vec![11, 0, 5, 5, 7, 3].into();
    let f = t.gather_flat(x, flat, vec![2, 3])?;
    let f = t.mul(f, f)?;
    let r = t.reshape(f, vec![3, 2])?;
    let g = t.mul(g, g)?;
    let gs = t.sum(g)?;
    let rs = t.sum(r)?;
    t.concat_rows(&[gs, rs])
});
probe!(Rope, |t, x| {
    let y = t.rope(x, &[0.0, 1.0, 5.0], 2, 10000.0)?;
    t.mul(y, y)
});
probe!(Attention, |t, x| {
    let wq = fixed(t, 8, &[4, 4]);
    let wk = fixed(t, 9, &[4, 4]);
    let wv = fixed(t, 10, &[4, 4]);
    let q = t.matmul(x, wq)?;
    let k = t.matmul(x, wk)?;
    let v = t.matmul(x, wv)?;
    let groups: Arc<[AttnGroup]> = vec![AttnGroup { q: 0..2, kv: 0..3 }, AttnGroup::square(2..3)].into();
    t.attention(q, k, v, groups, 2)
});
probe!(Mlp, |t, x| {
    let w1 = fixed(t, 11, &[4, 8]);
    let b1 = fixed(t, 12, &[8]);
    let w2 = fixed(t, 13, &[8, 2]);
    let h = t.linear(x, w1, Some(b1))?;
    let h = t.gelu(h)?;
    let y = t.linear(h, w2, None)?;
    let target = fixed(t, 14, &[3, 2]);
    t.mse(y, target)
});

/// Max relative error of every primitive probe against central differences.
pub fn primitive_checks() -> Vec<(&'static str, f64)> {
    let mut rng = SeedRng::new(42);
    let x34 = randn(&mut rng, &[3, 4]);
    vec![
        ("identity", grad_check(&Identity, &x34, 1e-3).unwrap()),
        ("matmul_right", grad_check(&MatmulRight, &x34, 1e-3).unwrap()),
        ("matmul_left", grad_check(&MatmulLeft, &randn(&mut rng, &[3, 5]), 1e-3).unwrap()),
        ("matmul_nt", grad_check(&MatmulNtBoth, &x34, 1e-3).unwrap()),
        ("elementwise", grad_check(&Elementwise, &x34, 1e-3).unwrap()),
        ("row_ops", grad_check(&RowOps, &x34, 1e-3).unwrap()),
        ("normalize_rows", grad_check(&Normalize, &x34, 1e-3).unwrap()),
        ("activations", grad_check(&Activations, &x34, 1e-3).unwrap()),
        ("softmax", grad_check(&Softmax, &x34, 1e-3).unwrap()),
        ("reductions", grad_check(&Reductions, &x34, 1e-3).unwrap()),
        ("slice_concat", grad_check(&SliceConcat, &x34, 1e-3).unwrap()),
        ("gathers", grad_check(&Gathers, &x34, 1e-3).unwrap()),
        ("rope", grad_check(&Rope, &x34, 1e-3).unwrap()),
        ("attention", grad_check(&Attention, &x34, 1e-3).unwrap()),
        ("mlp", grad_check(&Mlp, &x34, 1e-3).unwrap()),
    ]
}

pub fn store_with<R>(seed: u64, f: impl FnOnce(&mut ParamBuilder<'_>) -> R) -> (ParamStore<f32>, R) {
    let mut store = ParamStore::new();
    let r = f(&mut ParamBuilder::new(&mut store, seed));
    (store, r)
}

pub fn randomize(store: &mut ParamStore<f32>, seed: u64, scale: f32) {
    let mut rng = SeedRng::new(seed);
    for id in store.ids().collect::<Vec<_>>() {
        for v in store.get_mut(id).data_mut() {
            *v += scale * rng.normal() as f32;
        }
    }
}

/// Up to `max` distinct random voxels with `c` normal features each.
pub fn random_sparse(rng: &mut SeedRng, n: u32, t: u32, max: usize, c: usize) -> SparseSpacetimeTensor {
    let count = rng.below(max + 1);
    let mut seen = HashSet::new();
    let mut entries = Vec::new();
    for _ in 0..count {
        let v = VoxelCoord4D::new(rng.below(t as usize) as u16, rng.below(n as usize) as u16, rng.below(n as usize) as u16, rng.below(n as usize) as u16);
        if seen.insert(v) {
            entries.push((v, rng.normal_vec(c)));
        }
    }
    build_sparse(entries, n, t, c).unwrap()
}

fn at_least(rng: &mut SeedRng, n: u32, t: u32, max: usize, c: usize, min: usize) -> SparseSpacetimeTensor {
    loop {
        let x = random_sparse(rng, n, t, max, c);
        if x.len() >= min {
            return x;
        }
    }
}

pub fn cond_tokens(frames: usize, per_frame: usize, dim: usize, rng: &mut SeedRng) -> CondTokens {
    CondTokens::new(DenseTensor::new(vec![frames * per_frame, dim], rng.normal_vec(frames * per_frame * dim)).unwrap(), per_frame).unwrap()
}

struct LayerProbe<'a> {
    layer: &'a TemporalLayerParams,
    input: ParamId,
    layout: TokenLayout,
}

impl ParamProbe for LayerProbe<'_> {
    fn eval<T: Real>(&self, g: &mut Graph<'_, T>) -> spacetime::Result<Var> {
        let x = g.param(self.input);
        self.layer.forward(g, x, &self.layout)
    }
}

struct NetProbe<'a> {
    net: &'a CompNet,
    plan: CompressionPlan,
    input: ParamId,
    cond: CondTokens,
}

impl ParamProbe for NetProbe<'_> {
    fn eval<T: Real>(&self, g: &mut Graph<'_, T>) -> spacetime::Result<Var> {
        let x = g.param(self.input);
        self.net.forward(g, x, &self.plan, 0.4, Some(&self.cond))
    }
}

struct VaeProbe<'a> {
    vae: &'a VaeModel,
    plan: VaePlan,
    input: DenseTensor<f32>,
    target: DenseTensor<f32>,
    noise: DenseTensor<f32>,
}

impl ParamProbe for VaeProbe<'_> {
    fn eval<T: Real>(&self, g: &mut Graph<'_, T>) -> spacetime::Result<Var> {
        Ok(self.vae.loss(g, &self.input, &self.target, &self.plan, Some(&self.noise))?.total)
    }
}

struct CfmProbe<'a, M: FlowNet> {
    model: &'a M,
    x1: DenseTensor<f32>,
    cond: &'a M::Cond,
    draw: CfmDraw,
}

impl<M: FlowNet> ParamProbe for CfmProbe<'_, M> {
    fn eval<T: Real>(&self, g: &mut Graph<'_, T>) -> spacetime::Result<Var> {
        cfm_loss_graph(g, self.model, &self.x1, self.cond, &self.draw)
    }
}

/// Max relative error of sampled parameter gradients of every layer
/// composite: temporal layer (both shifts), compression network, VAE loss
/// and both flow-matching losses.
pub fn composite_checks() -> Vec<(&'static str, f64)> {
    let mut out = Vec::new();
    for (name, seed, cfg) in [
        ("temporal_layer_unshifted", 23, TemporalWindowConfig::unshifted(2).unwrap()),
        ("temporal_layer_shifted", 24, TemporalWindowConfig::shifted(2).unwrap()),
    ] {
        let (mut store, layer) = store_with(seed, |pb| TemporalLayerParams::new(pb, "temporal", 8, 2, cfg).unwrap());
        randomize(&mut store, seed + 1, 0.3);
        let mut rng = SeedRng::new(seed + 100);
        let lengths = [2usize, 3, 1];
        let frames: Vec<u32> = lengths.iter().enumerate().flat_map(|(t, &n)| std::iter::repeat_n(t as u32, n)).collect();
        let n = frames.len();
        let coords = (0..n).map(|i| [i as u16, 1, 2]).collect();
        let b = TokenBatch::new(frames, coords, DenseTensor::new(vec![n, 8], rng.normal_vec(n * 8)).unwrap(), 3).unwrap();
        let input = store.add("input", b.features.clone()).unwrap();
        let probe = LayerProbe { layer: &layer, input, layout: b.layout().unwrap() };
        out.push((name, grad_check_params(&probe, &store, 1e-3, 24, seed).unwrap().max_rel_err));
    }

    let cfg = CompNetConfig {
        width: 12,
        heads: 2,
        depth: 2,
        mlp_hidden: 16,
        window: Some(2),
        cond_dim: Some(6),
        spatial_stages: 1,
        temporal_stages: 1,
        freq_dim: 8,
    };
    let (mut store, net) = store_with(18, |pb| CompNet::new(pb, "net", cfg).unwrap());
    randomize(&mut store, 19, 0.2);
    let mut rng = SeedRng::new(20);
    let x = at_least(&mut rng, 8, 4, 20, 12, 10);
    let input = store.add("input", DenseTensor::new(vec![x.len(), 12], x.features().to_vec()).unwrap()).unwrap();
    let probe = NetProbe { plan: net.plan(x.structure()).unwrap(), net: &net, input, cond: cond_tokens(4, 3, 6, &mut rng) };
    out.push(("compnet", grad_check_params(&probe, &store, 1e-3, 6, 21).unwrap().max_rel_err));

    let vae_cfg = VaeConfig { latent_dim: 3, width: 12, heads: 2, depth: 1, mlp_hidden: 16, window: Some(2), ..VaeConfig::default() };
    let (mut store, vae) = store_with(12, |pb| VaeModel::new(pb, "vae", vae_cfg).unwrap());
    randomize(&mut store, 13, 0.2);
    let mut rng = SeedRng::new(14);
    let x = at_least(&mut rng, 8, 3, 14, 4, 4);
    let target: Vec<f32> = (0..x.len() * 4).map(|_| rng.uniform() as f32).collect();
    let probe = VaeProbe {
        plan: vae.plan(x.structure()).unwrap(),
        vae: &vae,
        input: DenseTensor::new(vec![x.len(), 4], x.features().to_vec()).unwrap(),
        target: DenseTensor::new(vec![x.len(), 4], target).unwrap(),
        noise: DenseTensor::new(vec![x.len(), 3], rng.normal_vec(x.len() * 3)).unwrap(),
    };
    out.push(("vae_loss", grad_check_params(&probe, &store, 1e-3, 4, 15).unwrap().max_rel_err));

    let scfg = StructureFlowConfig { resolution: 4, patch: 2, width: 12, heads: 2, depth: 2, mlp_hidden: 8, window: Some(2), cond_dim: 4, freq_dim: 8 };
    let (mut store, flow) = store_with(16, |pb| StructureFlow::new(pb, "s", scfg).unwrap());
    randomize(&mut store, 18, 0.2);
    let mut rng = SeedRng::new(17);
    let x1 = DenseTensor::new(vec![24, 8], (0..192).map(|_| if rng.below(2) == 1 { 1.0 } else { -1.0 }).collect()).unwrap();
    let cond = cond_tokens(3, 2, 4, &mut rng);
    let draw = CfmDraw::for_model::<StructureFlow>(&mut rng, &x1);
    let probe = CfmProbe { model: &flow, x1, cond: &cond, draw };
    out.push(("structure_flow_cfm", grad_check_params(&probe, &store, 1e-3, 3, 19).unwrap().max_rel_err));

    let lcfg = LatentFlowConfig {
        latent_dim: 3,
        net: CompNetConfig { width: 12, heads: 2, depth: 2, mlp_hidden: 8, window: Some(2), cond_dim: Some(4), spatial_stages: 1, temporal_stages: 1, freq_dim: 8 },
    };
    let (mut store, flow) = store_with(20, |pb| LatentFlow::new(pb, "l", lcfg).unwrap());
    randomize(&mut store, 21, 0.2);
    let mut rng = SeedRng::new(22);
    let z = at_least(&mut rng, 8, 4, 16, 3, 4);
    let tokens = cond_tokens(4, 2, 4, &mut rng);
    let cond = flow.cond(z.structure(), &tokens).unwrap();
    let x1 = DenseTensor::new(vec![z.len(), 3], z.features().to_vec()).unwrap();
    let draw = CfmDraw::for_model::<LatentFlow>(&mut rng, &x1);
    let probe = CfmProbe { model: &flow, x1, cond: &cond, draw };
    out.push(("latent_flow_cfm", grad_check_params(&probe, &store, 1e-3, 3, 23).unwrap().max_rel_err));
    out
}
