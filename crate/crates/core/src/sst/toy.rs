//! Analytic animated primitives used to synthesize ground-truth 4D data.

use super::dense::DenseOccupancySequence;
use crate::error::{Error, Result};
use crate::rng::SeedRng;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Primitive {
    Sphere,
    /// Axis-aligned box with half extents `size * aspect`.
    Box { aspect: [f32; 3] },
    /// Two parallel capsules along y, centred at `x = ±separation * size`.
    /// Seen along x, one capsule hides the other.
    CapsulePair { separation: f32 },
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Motion {
    /// Amplitude of the sinusoidal translation, per axis.
    pub translation: [f32; 3],
    /// Radians of rotation about the y axis per unit time.
    pub rotation_rate: f32,
    /// Relative amplitude of the scale oscillation, `|s| < 1`.
    pub scale_oscillation: f32,
}

/// Smooth object-space colouring: `base + gradient · q + stripe(q.y)`,
/// clamped to `[0, 1]`, where `q` is the object-space point divided by the size.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ColorFn {
    pub base: [f32; 3],
    pub gradient: [[f32; 3]; 3],
    pub stripe_amplitude: f32,
    pub stripe_frequency: f32,
}

impl ColorFn {
    pub fn solid(rgb: [f32; 3]) -> Self {
        ColorFn {
            base: rgb,
            gradient: [[0.0; 3]; 3],
            stripe_amplitude: 0.0,
            stripe_frequency: 0.0,
        }
    }

    pub fn eval(&self, q: [f64; 3]) -> [f32; 3] {
        let stripe = self.stripe_amplitude as f64 * (self.stripe_frequency as f64 * q[1]).sin();
        let mut out = [0.0f32; 3];
        for (c, o) in out.iter_mut().enumerate() {
            let g = &self.gradient[c];
            let v = self.base[c] as f64
                + g[0] as f64 * q[0]
                + g[1] as f64 * q[1]
                + g[2] as f64 * q[2]
                + stripe;
            *o = v.clamp(0.0, 1.0) as f32;
        }
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ToyAnimationSpec {
    pub primitive: Primitive,
    /// Characteristic size as a fraction of the unit cube.
    pub size: f32,
    pub motion: Motion,
    pub color: ColorFn,
}

/// Voxelization mode: keep only the outer shell, or every interior voxel.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Fill {
    #[default]
    Surface,
    Solid,
}

fn length(v: [f64; 3]) -> f64 {
    (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt()
}

fn capsule_y(q: [f64; 3], cx: f64, half_len: f64, radius: f64) -> f64 {
    let y = q[1].clamp(-half_len, half_len);
    length([q[0] - cx, q[1] - y, q[2]]) - radius
}

impl ToyAnimationSpec {
    const CAPSULE_RADIUS: f64 = 0.4;
    const CAPSULE_HALF_LEN: f64 = 0.7;

    pub fn sphere(radius: f32) -> Self {
        ToyAnimationSpec {
            primitive: Primitive::Sphere,
            size: radius,
            motion: Motion::default(),
            color: ColorFn::solid([0.8, 0.3, 0.2]),
        }
    }

    /// Distance from the object origin to its farthest point, at unit scale.
    pub fn bounding_radius(&self) -> f64 {
        let s = self.size as f64;
        match self.primitive {
            Primitive::Sphere => s,
            Primitive::Box { aspect } => {
                length([aspect[0] as f64 * s, aspect[1] as f64 * s, aspect[2] as f64 * s])
            }
            Primitive::CapsulePair { separation } => {
                let d = separation as f64 * s;
                (d * d + (Self::CAPSULE_HALF_LEN * s).powi(2)).sqrt() + Self::CAPSULE_RADIUS * s
            }
        }
    }

    pub fn validate(&self) -> Result<()> {
        let finite = self.size.is_finite()
            && self.motion.translation.iter().all(|v| v.is_finite())
            && self.motion.rotation_rate.is_finite()
            && self.motion.scale_oscillation.is_finite();
        if !finite || self.size < 0.0 || self.motion.scale_oscillation.abs() >= 1.0 {
            return Err(Error::InvalidArgument("toy animation parameters out of range".into()));
        }
        match self.primitive {
            Primitive::Box { aspect } if aspect.iter().any(|a| !(*a > 0.0 && *a <= 1.0)) => {
                return Err(Error::InvalidArgument("box aspect must be in (0, 1]".into()))
            }
            Primitive::CapsulePair { separation } if !(separation >= 0.0 && separation.is_finite()) => {
                return Err(Error::InvalidArgument("capsule separation must be >= 0".into()))
            }
            _ => {}
        }
        let reach = self.bounding_radius() * (1.0 + self.motion.scale_oscillation.abs() as f64);
        for amp in self.motion.translation {
            if amp.abs() as f64 + reach > 0.5 + 1e-9 {
                return Err(Error::SpecOutOfCube);
            }
        }
        Ok(())
    }

    fn phase(tau: f64) -> f64 {
        (2.0 * std::f64::consts::PI * tau).sin()
    }

    pub fn center(&self, tau: f64) -> [f64; 3] {
        let p = Self::phase(tau);
        let a = self.motion.translation;
        [0.5 + a[0] as f64 * p, 0.5 + a[1] as f64 * p, 0.5 + a[2] as f64 * p]
    }

    pub fn scale(&self, tau: f64) -> f64 {
        1.0 + self.motion.scale_oscillation as f64 * Self::phase(tau)
    }

    /// World point to object space (rotation undone, scale divided out).
    pub fn to_object(&self, p: [f64; 3], tau: f64) -> [f64; 3] {
        let c = self.center(tau);
        let s = self.scale(tau);
        let d = [p[0] - c[0], p[1] - c[1], p[2] - c[2]];
        let theta = -(self.motion.rotation_rate as f64) * tau;
        let (sin, cos) = theta.sin_cos();
        [(cos * d[0] + sin * d[2]) / s, d[1] / s, (-sin * d[0] + cos * d[2]) / s]
    }

    fn object_sdf(&self, q: [f64; 3]) -> f64 {
        let s = self.size as f64;
        match self.primitive {
            Primitive::Sphere => length(q) - s,
            Primitive::Box { aspect } => {
                let b = [aspect[0] as f64 * s, aspect[1] as f64 * s, aspect[2] as f64 * s];
                let d = [q[0].abs() - b[0], q[1].abs() - b[1], q[2].abs() - b[2]];
                let outside = length([d[0].max(0.0), d[1].max(0.0), d[2].max(0.0)]);
                outside + d[0].max(d[1]).max(d[2]).min(0.0)
            }
            Primitive::CapsulePair { separation } => {
                let d = separation as f64 * s;
                let h = Self::CAPSULE_HALF_LEN * s;
                let r = Self::CAPSULE_RADIUS * s;
                capsule_y(q, -d, h, r).min(capsule_y(q, d, h, r))
            }
        }
    }

    /// Signed distance at world point `p` and normalized time `tau ∈ [0, 1]`.
    pub fn sdf(&self, p: [f64; 3], tau: f64) -> f64 {
        self.object_sdf(self.to_object(p, tau)) * self.scale(tau)
    }

    pub fn inside(&self, p: [f64; 3], tau: f64) -> bool {
        self.size > 0.0 && self.sdf(p, tau) <= 0.0
    }

    /// Colour of the material at world point `p`.
    pub fn color_at(&self, p: [f64; 3], tau: f64) -> [f32; 3] {
        let q = self.to_object(p, tau);
        let s = (self.size as f64).max(1e-6);
        self.color.eval([q[0] / s, q[1] / s, q[2] / s])
    }

    pub fn random(rng: &mut SeedRng) -> Self {
        let primitive = match rng.below(3) {
            0 => Primitive::Sphere,
            1 => Primitive::Box {
                aspect: [
                    rng.uniform_in(0.55, 1.0) as f32,
                    rng.uniform_in(0.55, 1.0) as f32,
                    rng.uniform_in(0.55, 1.0) as f32,
                ],
            },
            _ => Primitive::CapsulePair {
                separation: rng.uniform_in(0.9, 1.2) as f32,
            },
        };
        let size = match primitive {
            Primitive::CapsulePair { .. } => rng.uniform_in(0.12, 0.15),
            _ => rng.uniform_in(0.16, 0.24),
        } as f32;
        let mut spec = ToyAnimationSpec {
            primitive,
            size,
            motion: Motion {
                translation: [0.0; 3],
                rotation_rate: rng.uniform_in(-1.5, 1.5) as f32,
                scale_oscillation: rng.uniform_in(-0.12, 0.12) as f32,
            },
            color: ColorFn {
                base: [
                    rng.uniform_in(0.2, 0.8) as f32,
                    rng.uniform_in(0.2, 0.8) as f32,
                    rng.uniform_in(0.2, 0.8) as f32,
                ],
                gradient: std::array::from_fn(|_| {
                    std::array::from_fn(|_| rng.uniform_in(-0.25, 0.25) as f32)
                }),
                stripe_amplitude: rng.uniform_in(0.0, 0.15) as f32,
                stripe_frequency: rng.uniform_in(2.0, 6.0) as f32,
            },
        };
        let reach = spec.bounding_radius() * (1.0 + spec.motion.scale_oscillation.abs() as f64);
        let room = (0.5 - reach - 1e-3).max(0.0);
        for a in spec.motion.translation.iter_mut() {
            *a = (rng.uniform_in(-1.0, 1.0) * room.min(0.12)) as f32;
        }
        spec
    }
}

/// Normalized time of frame `t` out of `frames`.
pub fn frame_time(t: usize, frames: usize) -> f64 {
    if frames <= 1 {
        t as f64
    } else {
        t as f64 / (frames - 1) as f64
    }
}

/// Centre of voxel index `i` in a grid of `n` cells over the unit interval.
#[inline]
pub fn voxel_center(i: usize, n: usize) -> f64 {
    (i as f64 + 0.5) / n as f64
}

pub fn voxelize_toy_animation(
    spec: &ToyAnimationSpec,
    resolution: u32,
    frames: u32,
    fill: Fill,
) -> Result<DenseOccupancySequence> {
    if resolution < 4 {
        return Err(Error::InvalidArgument(format!("resolution {resolution} < 4")));
    }
    match spec.validate() {
        Err(Error::SpecOutOfCube) => return Err(Error::SpecOutOfCube),
        other => other?,
    }
    let mut out = DenseOccupancySequence::zeros(resolution, frames)?;
    let n = resolution as usize;
    for t in 0..frames as usize {
        let tau = frame_time(t, frames as usize);
        for x in 0..n {
            for y in 0..n {
                for z in 0..n {
                    let p = [voxel_center(x, n), voxel_center(y, n), voxel_center(z, n)];
                    if spec.inside(p, tau) {
                        out.set(t, x, y, z, 1.0);
                    }
                }
            }
        }
    }
    Ok(match fill {
        Fill::Solid => out,
        Fill::Surface => out.surface(0.5),
    })
}
