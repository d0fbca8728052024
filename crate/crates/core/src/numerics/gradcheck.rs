use super::dense::DenseTensor;
use super::params::{Graph, ParamStore};
use super::real::Real;
use super::tape::{Tape, Var};
use crate::error::Result;
use crate::rng::SeedRng;

/// A tensor function that can be evaluated at any precision.
pub trait Probe {
    fn eval<T: Real>(&self, tape: &mut Tape<T>, x: Var) -> Result<Var>;
}

/// A model evaluated against its own parameters.
pub trait ParamProbe {
    fn eval<T: Real>(&self, g: &mut Graph<'_, T>) -> Result<Var>;
}

/// Central difference at steps `eps` and `eps / 2`, combined by Richardson
/// extrapolation so the truncation error is fourth order.
fn central_difference(mut loss: impl FnMut(f64) -> Result<f64>, eps: f64) -> Result<f64> {
    let d1 = (loss(eps)? - loss(-eps)?) / (2.0 * eps);
    let h = eps / 2.0;
    let d2 = (loss(h)? - loss(-h)?) / (2.0 * h);
    Ok((4.0 * d2 - d1) / 3.0)
}

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / numeric.abs().max(1e-8)
}

fn projection(len: usize, seed: u64) -> DenseTensor<f64> {
    let mut rng = SeedRng::new(seed);
    DenseTensor::new(vec![len], (0..len).map(|_| rng.normal()).collect()).expect("shape")
}

/// `Σ r ⊙ out` with a fixed random `r`, so every output coordinate matters.
fn project<T: Real>(tape: &mut Tape<T>, out: Var, r: &DenseTensor<f64>) -> Result<Var> {
    let shape = tape.shape(out).to_vec();
    let w = tape.constant(r.cast::<T>().reshape(shape)?);
    let p = tape.mul(out, w)?;
    tape.sum(p)
}

fn output_len<P: Probe + ?Sized>(f: &P, x: &DenseTensor<f64>) -> Result<usize> {
    let mut tape = Tape::<f64>::new();
    let xv = tape.constant(x.clone());
    let out = f.eval(&mut tape, xv)?;
    Ok(tape.value(out).numel())
}

/// Max relative error between the analytic input gradient and central
/// differences with step `eps`, both in `f64`.
pub fn grad_check<P: Probe + ?Sized>(f: &P, x: &DenseTensor<f32>, eps: f64) -> Result<f64> {
    let x64: DenseTensor<f64> = x.cast();
    let r = projection(output_len(f, &x64)?, 0x5eed);
    let loss_at = |xv: &DenseTensor<f64>| -> Result<f64> {
        let mut tape = Tape::<f64>::new();
        let v = tape.constant(xv.clone());
        let out = f.eval(&mut tape, v)?;
        let l = project(&mut tape, out, &r)?;
        Ok(tape.value(l).item())
    };
    let mut tape = Tape::<f64>::new();
    let xv = tape.leaf(x64.clone().with_grad());
    let out = f.eval(&mut tape, xv)?;
    let l = project(&mut tape, out, &r)?;
    let grads = tape.backward(l)?;
    let zero = DenseTensor::zeros(x64.shape().to_vec());
    let analytic = grads.get(xv).unwrap_or(&zero);
    let mut worst = 0.0f64;
    for i in 0..x64.numel() {
        let fd = central_difference(
            |d| {
                let mut p = x64.clone();
                p.data_mut()[i] += d;
                loss_at(&p)
            },
            eps,
        )?;
        worst = worst.max(relative_error(analytic.data()[i], fd));
    }
    Ok(worst)
}

#[derive(Debug, Clone)]
pub struct GradCheckReport {
    pub max_rel_err: f64,
    /// Parameter name and flat index of the worst coordinate.
    pub worst: (String, usize),
    pub checked: usize,
}

/// Checks parameter gradients of `f`. At most `per_param` randomly chosen
/// coordinates of each parameter are differenced.
pub fn grad_check_params<P: ParamProbe + ?Sized>(
    f: &P,
    store: &ParamStore<f32>,
    eps: f64,
    per_param: usize,
    seed: u64,
) -> Result<GradCheckReport> {
    let base: ParamStore<f64> = store.cast();
    let len = {
        let mut g = Graph::inference(&base);
        let out = f.eval(&mut g)?;
        g.value(out).numel()
    };
    let r = projection(len, seed ^ 0x5eed);
    let loss_at = |s: &ParamStore<f64>| -> Result<f64> {
        let mut g = Graph::inference(s);
        let out = f.eval(&mut g)?;
        let l = project(&mut g, out, &r)?;
        Ok(g.value(l).item())
    };
    let grads = {
        let mut g = Graph::new(&base);
        let out = f.eval(&mut g)?;
        let l = project(&mut g, out, &r)?;
        g.backward(l)?
    };
    let mut rng = SeedRng::new(seed);
    let mut report = GradCheckReport {
        max_rel_err: 0.0,
        worst: (String::new(), 0),
        checked: 0,
    };
    let mut probe = base.clone();
    for (id, name, t) in base.iter() {
        let n = t.numel();
        let coords: Vec<usize> = if n <= per_param { (0..n).collect() } else { (0..per_param).map(|_| rng.below(n)).collect() };
        for i in coords {
            let analytic = grads.get(id).map(|g| g.data()[i]).unwrap_or(0.0);
            let orig = t.data()[i];
            let fd = central_difference(
                |d| {
                    probe.get_mut(id).data_mut()[i] = orig + d;
                    loss_at(&probe)
                },
                eps,
            )?;
            probe.get_mut(id).data_mut()[i] = orig;
            let err = relative_error(analytic, fd);
            report.checked += 1;
            if err > report.max_rel_err {
                report.max_rel_err = err;
                report.worst = (name.to_string(), i);
            }
        }
    }
    Ok(report)
}

/// Largest elementwise gap between `f32` and `f64` parameter gradients of
/// `f`, relative to the largest `f64` gradient magnitude.
pub fn f32_gradient_agreement<P: ParamProbe + ?Sized>(f: &P, store: &ParamStore<f32>) -> Result<f64> {
    let base: ParamStore<f64> = store.cast();
    let g64 = {
        let mut g = Graph::new(&base);
        let out = f.eval(&mut g)?;
        let l = g.sum(out)?;
        g.backward(l)?
    };
    let g32 = {
        let mut g = Graph::new(store);
        let out = f.eval(&mut g)?;
        let l = g.sum(out)?;
        g.backward(l)?
    };
    let (mut gap, mut scale) = (0.0f64, 1e-12f64);
    for id in store.ids() {
        if let (Some(a), Some(b)) = (g64.get(id), g32.get(id)) {
            for (x, y) in a.data().iter().zip(b.data()) {
                gap = gap.max((x - *y as f64).abs());
                scale = scale.max(x.abs());
            }
        }
    }
    Ok(gap / scale)
}
