use std::collections::HashSet;

use proptest::prelude::*;
use spacetime::numerics::*;
use spacetime::rng::SeedRng;
use spacetime::temporal::*;
use spacetime::Error;

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

#[test]
fn absolute_pe_examples() {
    let pe = absolute_pe_3d([0.0, 0.0, 0.0], 12).unwrap();
    for (i, v) in pe.iter().enumerate() {
        assert_eq!(*v, if i % 2 == 0 { 0.0 } else { 1.0 });
    }
    let a = absolute_pe_3d([3.0, 5.0, 7.0], 12).unwrap();
    let b = absolute_pe_3d([4.0, 5.0, 7.0], 12).unwrap();
    for i in 0..12 {
        assert_eq!(a[i] != b[i], i < 4 && a[i] != b[i]);
        if i >= 4 {
            assert_eq!(a[i], b[i]);
        }
    }
    assert!(a[..4] != b[..4]);
    assert!(matches!(absolute_pe_3d([0.0; 3], 8), Err(Error::BadDim(8))));
}

#[test]
fn absolute_pe_dot_depends_only_on_offset() {
    let mut rng = SeedRng::new(1);
    let dim = 24;
    for delta in [1.0, 2.0, 5.0, 13.0] {
        let block = |x: f64| -> Vec<f64> { absolute_pe_3d([x, 0.0, 0.0], dim).unwrap()[..dim / 3].iter().map(|&v| v as f64).collect() };
        let reference = dot(&block(0.0), &block(delta));
        for _ in 0..50 {
            let x = rng.below(200) as f64;
            assert!((dot(&block(x), &block(x + delta)) - reference).abs() < 1e-5);
        }
    }
}

#[test]
fn rope_examples() {
    let mut rng = SeedRng::new(2);
    let q: Vec<f64> = (0..8).map(|_| rng.normal()).collect();
    let k: Vec<f64> = (0..8).map(|_| rng.normal()).collect();
    let (q0, k0) = rope_1d(&q, &k, 0, 0, ROPE_BASE).unwrap();
    assert_eq!((q0.clone(), k0.clone()), (q.clone(), k.clone()));
    let (a, b) = rope_1d(&q, &k, 3, 1, ROPE_BASE).unwrap();
    let (c, d) = rope_1d(&q, &k, 7, 5, ROPE_BASE).unwrap();
    assert!((dot(&a, &b) - dot(&c, &d)).abs() < 1e-12);
    assert!(matches!(rope_1d(&q[..3], &k[..3], 0, 0, ROPE_BASE), Err(Error::OddDim(3))));

    // Complex-number oracle: pair j is multiplied by e^{i t θ_j}.
    let t = 9i64;
    let (r, _) = rope_1d(&q, &k, t, 0, ROPE_BASE).unwrap();
    for j in 0..4 {
        let theta = ROPE_BASE.powf(-2.0 * j as f64 / 8.0) * t as f64;
        let (re, im) = (q[2 * j], q[2 * j + 1]);
        let (cr, ci) = (theta.cos(), theta.sin());
        assert!((r[2 * j] - (re * cr - im * ci)).abs() < 1e-6);
        assert!((r[2 * j + 1] - (re * ci + im * cr)).abs() < 1e-6);
    }
}

#[test]
fn rope_relative_shift_invariance() {
    let mut rng = SeedRng::new(3);
    let mut worst = 0.0f64;
    for _ in 0..1000 {
        let q: Vec<f64> = (0..16).map(|_| rng.normal()).collect();
        let k: Vec<f64> = (0..16).map(|_| rng.normal()).collect();
        let (tq, tk) = (rng.below(64) as i64, rng.below(64) as i64);
        let delta = rng.below(129) as i64 - 64;
        let (a, b) = rope_1d(&q, &k, tq, tk, ROPE_BASE).unwrap();
        let (c, d) = rope_1d(&q, &k, tq + delta, tk + delta, ROPE_BASE).unwrap();
        worst = worst.max((dot(&a, &b) - dot(&c, &d)).abs());
    }
    assert!(worst < 1e-5, "{worst}");
}

#[test]
fn window_partitions_cover_exactly() {
    for t in 1..=64u32 {
        for w in 1..=t {
            for cfg in [TemporalWindowConfig::unshifted(w).unwrap(), TemporalWindowConfig::shifted(w).unwrap()] {
                let parts = partition_windows(t, cfg);
                let mut next = 0;
                for r in &parts {
                    assert_eq!(r.start, next);
                    assert!(r.end > r.start && r.end - r.start <= w);
                    next = r.end;
                }
                assert_eq!(next, t);
            }
        }
    }
}

#[test]
fn shifted_pair_connects_adjacent_frames() {
    for t in 2..=64u32 {
        for w in 2..=t {
            let mut pairs = HashSet::new();
            for cfg in [TemporalWindowConfig::unshifted(w).unwrap(), TemporalWindowConfig::shifted(w).unwrap()] {
                for r in partition_windows(t, cfg) {
                    for a in r.clone() {
                        if a + 1 < r.end {
                            pairs.insert(a);
                        }
                    }
                }
            }
            assert_eq!(pairs.len() as u32, t - 1, "T={t} w={w}");
        }
    }
}

proptest! {
    #[test]
    fn random_partitions_are_disjoint_covers(t in 1u32..200, w in 1u32..64, shifted in any::<bool>()) {
        let cfg = if shifted { TemporalWindowConfig::shifted(w) } else { TemporalWindowConfig::unshifted(w) }.unwrap();
        let parts = partition_windows(t, cfg);
        let total: u32 = parts.iter().map(|r| r.end - r.start).sum();
        prop_assert_eq!(total, t);
        prop_assert!(parts.windows(2).all(|p| p[0].end == p[1].start));
    }

    #[test]
    fn restore_inverts_rearrange(frames in prop::collection::vec(0u32..5, 0..40)) {
        let n = frames.len();
        let coords = (0..n).map(|i| [i as u16, 0, 0]).collect();
        let feats = DenseTensor::new(vec![n, 2], (0..2 * n).map(|v| v as f32).collect()).unwrap();
        let batch = TokenBatch::new(frames, coords, feats, 5).unwrap();
        let (sorted, order) = batch.rearrange();
        prop_assert!(sorted.frames.windows(2).all(|w| w[0] <= w[1]));
        prop_assert_eq!(sorted.restore(&order).unwrap(), batch);
    }
}

struct Fixture {
    store: ParamStore<f32>,
    layer: TemporalLayerParams,
}

fn fixture(width: usize, heads: usize, cfg: TemporalWindowConfig, seed: u64) -> Fixture {
    let mut store = ParamStore::new();
    let mut pb = ParamBuilder::new(&mut store, seed);
    let layer = TemporalLayerParams::new(&mut pb, "temporal", width, heads, cfg).unwrap();
    // Randomize the affine parameters so the check does not start from ones/zeros.
    let mut rng = SeedRng::new(seed + 1);
    for id in store.ids().collect::<Vec<_>>() {
        if store.name(id).contains("norm") {
            for v in store.get_mut(id).data_mut() {
                *v += 0.3 * rng.normal() as f32;
            }
        }
    }
    Fixture { store, layer }
}

fn batch(frame_lengths: &[usize], width: usize, seed: u64) -> TokenBatch {
    let mut rng = SeedRng::new(seed);
    let frames: Vec<u32> = frame_lengths.iter().enumerate().flat_map(|(t, &n)| std::iter::repeat_n(t as u32, n)).collect();
    let n = frames.len();
    let coords = (0..n).map(|i| [i as u16, 1, 2]).collect();
    TokenBatch::new(frames, coords, DenseTensor::new(vec![n, width], rng.normal_vec(n * width)).unwrap(), frame_lengths.len() as u32).unwrap()
}

/// Dense multi-head attention with RoPE over all rows, f64 throughout.
fn dense_oracle(store: &ParamStore<f32>, layer: &TemporalLayerParams, x: &DenseTensor<f32>, pos: &[i64]) -> Vec<f64> {
    let (n, c) = (x.rows(), x.cols());
    let heads = layer.attn.heads;
    let dh = c / heads;
    let proj = |id: ParamId| -> Vec<Vec<f64>> {
        let w = store.get(id);
        (0..n).map(|i| (0..c).map(|j| (0..c).map(|k| x.data()[i * c + k] as f64 * w.data()[k * c + j] as f64).sum()).collect()).collect()
    };
    let (q, k, v) = (proj(layer.attn.q.w), proj(layer.attn.k.w), proj(layer.attn.v.w));
    let mut att = vec![vec![0.0f64; c]; n];
    for h in 0..heads {
        let sl = |m: &Vec<f64>| m[h * dh..(h + 1) * dh].to_vec();
        for i in 0..n {
            let mut logits = Vec::new();
            for j in 0..n {
                let (qr, kr) = rope_1d(&sl(&q[i]), &sl(&k[j]), pos[i], pos[j], ROPE_BASE).unwrap();
                logits.push(dot(&qr, &kr) / (dh as f64).sqrt());
            }
            let m = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let w: Vec<f64> = logits.iter().map(|l| (l - m).exp()).collect();
            let z: f64 = w.iter().sum();
            for d in 0..dh {
                att[i][h * dh + d] = (0..n).map(|j| w[j] / z * v[j][h * dh + d]).sum();
            }
        }
    }
    let wo = store.get(layer.attn.o.w);
    let mut out = Vec::with_capacity(n * c);
    for i in 0..n {
        for j in 0..c {
            let o: f64 = (0..c).map(|k| att[i][k] * wo.data()[k * c + j] as f64).sum();
            out.push(x.data()[i * c + j] as f64 + o);
        }
    }
    out
}

#[test]
fn two_frames_match_dense_oracle() {
    let f = fixture(8, 2, TemporalWindowConfig::unshifted(2).unwrap(), 11);
    let b = batch(&[2, 2], 8, 12);
    let out = temporal_attention(&b, &f.store, &f.layer).unwrap();
    let want = dense_oracle(&f.store, &f.layer, &b.features, &[0, 0, 1, 1]);
    for (a, w) in out.features.data().iter().zip(&want) {
        assert!((*a as f64 - w).abs() < 1e-5, "{a} vs {w}");
    }
}

#[test]
fn single_frame_is_plain_self_attention() {
    let f = fixture(8, 2, TemporalWindowConfig::unshifted(1).unwrap(), 13);
    let b = batch(&[5], 8, 14);
    let out = temporal_attention(&b, &f.store, &f.layer).unwrap();
    // All positions are zero, so the rotation is the identity.
    let want = dense_oracle(&f.store, &f.layer, &b.features, &[0; 5]);
    for (a, w) in out.features.data().iter().zip(&want) {
        assert!((*a as f64 - w).abs() < 1e-5);
    }
}

#[test]
fn zero_value_projection_is_residual_only() {
    let mut f = fixture(8, 2, TemporalWindowConfig::unshifted(2).unwrap(), 15);
    f.store.get_mut(f.layer.attn.v.w).data_mut().fill(0.0);
    let b = batch(&[3, 1, 2], 8, 16);
    assert_eq!(temporal_attention(&b, &f.store, &f.layer).unwrap(), b);
    assert_eq!(temporal_layer_forward(&b, &f.store, &f.layer).unwrap(), b);
}

#[test]
fn identical_frames_match_at_equal_window_offsets() {
    let f = fixture(8, 2, TemporalWindowConfig::unshifted(2).unwrap(), 17);
    let one = batch(&[3], 8, 18);
    let mut data = Vec::new();
    for _ in 0..4 {
        data.extend_from_slice(one.features.data());
    }
    let frames: Vec<u32> = (0..4u32).flat_map(|t| [t; 3]).collect();
    let b = TokenBatch::new(frames, vec![[0, 0, 0]; 12], DenseTensor::new(vec![12, 8], data).unwrap(), 4).unwrap();
    let out = temporal_layer_forward(&b, &f.store, &f.layer).unwrap();
    let rows = |t: usize| &out.features.data()[t * 24..(t + 1) * 24];
    // Windows [0,2) and [2,4): only the offset inside a window matters.
    for (a, b) in rows(0).iter().zip(rows(2)) {
        assert!((a - b).abs() < 1e-5);
    }
    for (a, b) in rows(1).iter().zip(rows(3)) {
        assert!((a - b).abs() < 1e-5);
    }
    // With single-frame windows every frame is processed alike.
    let g = fixture(8, 2, TemporalWindowConfig::unshifted(1).unwrap(), 17);
    let out = temporal_layer_forward(&b, &g.store, &g.layer).unwrap();
    for t in 1..4 {
        for (a, b) in out.features.data()[..24].iter().zip(&out.features.data()[t * 24..(t + 1) * 24]) {
            assert!((a - b).abs() < 1e-5);
        }
    }
}

#[test]
fn width_mismatch() {
    let f = fixture(8, 2, TemporalWindowConfig::unshifted(2).unwrap(), 19);
    let b = batch(&[2], 6, 20);
    assert!(matches!(temporal_attention(&b, &f.store, &f.layer), Err(Error::WidthMismatch { got: 6, want: 8 })));
    let mut store = ParamStore::new();
    let mut pb = ParamBuilder::new(&mut store, 0);
    assert!(matches!(
        TemporalLayerParams::new(&mut pb, "t", 6, 2, TemporalWindowConfig::unshifted(2).unwrap()),
        Err(Error::OddDim(3))
    ));
}

#[test]
fn attention_rows_sum_to_one() {
    // With one-hot values each output row is the attention weight row.
    let mut rng = SeedRng::new(21);
    let (n, c) = (6, 8);
    let mut t = Tape::<f32>::new();
    let q = t.constant(DenseTensor::new(vec![n, c], rng.normal_vec(n * c).iter().map(|v| v * 30.0).collect()).unwrap());
    let k = t.constant(DenseTensor::new(vec![n, c], rng.normal_vec(n * c)).unwrap());
    let mut onehot = DenseTensor::zeros(vec![n, c]);
    for i in 0..n {
        onehot.data_mut()[i * c + i] = 1.0;
    }
    let v = t.constant(onehot);
    let layout = TokenLayout::from_frame_lengths(&[2, 3, 1]);
    let groups = layout.window_groups(TemporalWindowConfig::unshifted(2).unwrap());
    let o = t.attention(q, k, v, groups, 1).unwrap();
    for row in t.value(o).data().chunks(c) {
        let s: f64 = row.iter().map(|&v| v as f64).sum();
        assert!((s - 1.0).abs() < 1e-5);
    }
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

#[test]
fn temporal_layer_grad_check() {
    for (seed, cfg) in [(23, TemporalWindowConfig::unshifted(2).unwrap()), (24, TemporalWindowConfig::shifted(2).unwrap())] {
        let mut f = fixture(8, 2, cfg, seed);
        let b = batch(&[2, 3, 1], 8, seed + 100);
        let input = f.store.add("input", b.features.clone()).unwrap();
        let probe = LayerProbe { layer: &f.layer, input, layout: b.layout().unwrap() };
        let report = grad_check_params(&probe, &f.store, 1e-3, 24, seed).unwrap();
        assert!(report.max_rel_err < 1e-3, "{report:?}");
        assert!(f32_gradient_agreement(&probe, &f.store).unwrap() < 1e-4);
    }
}
