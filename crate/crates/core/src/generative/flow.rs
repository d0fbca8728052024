use crate::error::{Error, Result};
use crate::nn::{sinusoidal, Linear};
use crate::numerics::{DenseTensor, Graph, ParamBuilder, ParamStore, Real, Var};
use crate::rng::SeedRng;

pub const DEFAULT_EULER_STEPS: usize = 25;

/// A velocity field `v(x, t | cond)` over `[rows, cols]` states.
pub trait FlowNet {
    type Cond: ?Sized;

    /// One flow time per row when true (independent samples stacked as
    /// rows); otherwise one time for the whole state.
    const ROW_TIMES: bool = false;

    /// `t` has one entry per row or a single entry, see [`Self::ROW_TIMES`].
    fn velocity<T: Real>(&self, g: &mut Graph<'_, T>, x: Var, t: &[f64], cond: &Self::Cond) -> Result<Var>;
}

/// The random draws of one flow-matching loss evaluation.
#[derive(Debug, Clone, PartialEq)]
pub struct CfmDraw {
    pub t: Vec<f64>,
    pub x0: DenseTensor<f32>,
}

impl CfmDraw {
    /// Times first (`times` uniforms), then the noise.
    pub fn sample(rng: &mut SeedRng, rows: usize, cols: usize, times: usize) -> Self {
        let t = (0..times).map(|_| rng.uniform()).collect();
        let x0 = DenseTensor::new(vec![rows, cols], rng.normal_vec(rows * cols)).expect("shape");
        CfmDraw { t, x0 }
    }

    pub fn for_model<M: FlowNet>(rng: &mut SeedRng, x1: &DenseTensor<f32>) -> Self {
        let times = if M::ROW_TIMES { x1.rows() } else { 1 };
        Self::sample(rng, x1.rows(), x1.cols(), times)
    }

    fn time_of(&self, row: usize) -> f64 {
        if self.t.len() == 1 {
            self.t[0]
        } else {
            self.t[row]
        }
    }

    /// `x_t = (1 − t)·x0 + t·x1`.
    pub fn interpolate(&self, x1: &DenseTensor<f32>) -> Result<DenseTensor<f32>> {
        self.check(x1)?;
        let cols = x1.cols();
        let data = x1
            .data()
            .iter()
            .zip(self.x0.data())
            .enumerate()
            .map(|(i, (&a, &b))| {
                let t = self.time_of(i / cols);
                ((1.0 - t) * b as f64 + t * a as f64) as f32
            })
            .collect();
        DenseTensor::new(x1.shape().to_vec(), data)
    }

    /// `v* = x1 − x0`.
    pub fn target(&self, x1: &DenseTensor<f32>) -> Result<DenseTensor<f32>> {
        self.check(x1)?;
        let data = x1.data().iter().zip(self.x0.data()).map(|(a, b)| a - b).collect();
        DenseTensor::new(x1.shape().to_vec(), data)
    }

    fn check(&self, x1: &DenseTensor<f32>) -> Result<()> {
        if x1.shape() != self.x0.shape() {
            return Err(Error::shape(format!("x1 {:?} vs noise {:?}", x1.shape(), self.x0.shape())));
        }
        if self.t.len() != 1 && self.t.len() != x1.rows() {
            return Err(Error::shape(format!("{} times for {} rows", self.t.len(), x1.rows())));
        }
        Ok(())
    }
}

/// Rectified-flow matching loss `mean‖v(x_t, t) − (x1 − x0)‖²` on the graph.
pub fn cfm_loss_graph<T: Real, M: FlowNet>(g: &mut Graph<'_, T>, model: &M, x1: &DenseTensor<f32>, cond: &M::Cond, draw: &CfmDraw) -> Result<Var> {
    if !x1.all_finite() {
        return Err(Error::InvalidArgument("flow target is not finite".into()));
    }
    let xt = g.input(&draw.interpolate(x1)?);
    let target = g.input(&draw.target(x1)?);
    let v = model.velocity(g, xt, &draw.t, cond)?;
    g.mse(v, target)
}

/// Draws `t ~ U(0, 1)` and `x0 ~ N(0, I)` from `rng` and evaluates the loss.
pub fn cfm_loss<M: FlowNet>(model: &M, store: &ParamStore<f32>, x1: &DenseTensor<f32>, cond: &M::Cond, rng: &mut SeedRng) -> Result<f64> {
    let draw = CfmDraw::for_model::<M>(rng, x1);
    let mut g = Graph::inference(store);
    let l = cfm_loss_graph(&mut g, model, x1, cond, &draw)?;
    Ok(g.value(l).item() as f64)
}

/// Fixed-step Euler integration from `x0 ~ N(0, I)` at `t = 0` to `t = 1`.
/// The state is carried in f64 between steps.
pub fn euler_sample<M: FlowNet>(
    model: &M,
    store: &ParamStore<f32>,
    rows: usize,
    cols: usize,
    steps: usize,
    cond: &M::Cond,
    rng: &mut SeedRng,
) -> Result<DenseTensor<f32>> {
    if steps == 0 {
        return Err(Error::InvalidArgument("Euler sampling needs at least one step".into()));
    }
    let mut x: Vec<f64> = rng.normal_vec(rows * cols).into_iter().map(f64::from).collect();
    let dt = 1.0 / steps as f64;
    for i in 0..steps {
        let t = i as f64 * dt;
        let times = if M::ROW_TIMES { vec![t; rows] } else { vec![t] };
        let mut g = Graph::inference(store);
        let xv = g.input(&DenseTensor::from_f64(vec![rows, cols], &x)?);
        let v = model.velocity(&mut g, xv, &times, cond)?;
        if g.shape(v) != [rows, cols] {
            return Err(Error::shape(format!("velocity {:?} for state [{rows}, {cols}]", g.shape(v))));
        }
        for (a, b) in x.iter_mut().zip(g.value(v).data()) {
            *a += dt * *b as f64;
        }
    }
    DenseTensor::from_f64(vec![rows, cols], &x)
}

/// MLP velocity field on flat vectors: `[x ‖ time features]` through
/// SiLU hidden layers.
#[derive(Debug, Clone)]
pub struct MlpFlow {
    pub dim: usize,
    pub freq_dim: usize,
    pub layers: Vec<Linear>,
}

impl MlpFlow {
    pub fn new(pb: &mut ParamBuilder<'_>, name: &str, dim: usize, hidden: usize, depth: usize, freq_dim: usize) -> Result<Self> {
        if depth == 0 {
            return Err(Error::InvalidArgument("MLP flow needs at least one hidden layer".into()));
        }
        pb.scoped(name, |pb| {
            let mut layers = vec![Linear::new(pb, "in", dim + freq_dim, hidden, true)?];
            for i in 1..depth {
                layers.push(Linear::new(pb, &format!("hidden{i}"), hidden, hidden, true)?);
            }
            layers.push(Linear::new(pb, "out", hidden, dim, true)?);
            Ok(MlpFlow { dim, freq_dim, layers })
        })
    }
}

impl FlowNet for MlpFlow {
    type Cond = ();
    const ROW_TIMES: bool = true;

    fn velocity<T: Real>(&self, g: &mut Graph<'_, T>, x: Var, t: &[f64], _: &()) -> Result<Var> {
        let rows = g.rows(x);
        if t.len() != rows {
            return Err(Error::shape(format!("{} times for {rows} rows", t.len())));
        }
        let feats: Vec<f64> = t.iter().flat_map(|&t| sinusoidal(1000.0 * t, self.freq_dim, 10000.0)).collect();
        let tf = g.constant(DenseTensor::from_f64(vec![rows, self.freq_dim], &feats)?);
        let mut h = g.concat_cols(&[x, tf])?;
        let last = self.layers.len() - 1;
        for (i, l) in self.layers.iter().enumerate() {
            h = l.forward(g, h)?;
            if i < last {
                h = g.silu(h)?;
            }
        }
        Ok(h)
    }
}
