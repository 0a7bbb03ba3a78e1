//! Lorentz (hyperboloid) model kernel.
//!
//! A point is stored by its spatial coordinates only; the time coordinate
//! `x_0 = sqrt(gamma + |x|^2)` is always derived, so every point lies on the
//! hyperboloid `<x, x>_L = -gamma` by construction.
//!
//! The slice-level functions are what the trainer and selector use on their
//! flat parameter buffers; [`LorentzPoint`] wraps them for standalone use.

use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::rng;

pub const DEFAULT_GAMMA: f64 = 1.0;
pub const DEFAULT_INIT_STD: f64 = 0.1;

#[inline]
pub fn sq_norm(x: &[f64]) -> f64 {
    x.iter().map(|a| a * a).sum()
}

#[inline]
pub fn dot(x: &[f64], y: &[f64]) -> f64 {
    x.iter().zip(y).map(|(a, b)| a * b).sum()
}

/// Time coordinate of the point with the given spatial part.
#[inline]
pub fn time_coord(spatial: &[f64], gamma: f64) -> f64 {
    (gamma + sq_norm(spatial)).sqrt()
}

/// Lorentzian scalar product `-x0*y0 + <x, y>`.
#[inline]
pub fn inner_slices(x: &[f64], y: &[f64], gamma: f64) -> f64 {
    -time_coord(x, gamma) * time_coord(y, gamma) + dot(x, y)
}

/// Squared Lorentzian distance `-2*gamma - 2<x, y>_L`, clamped at zero.
///
/// Evaluated as `|x - y|^2 - (x0 - y0)^2` with the time difference rewritten
/// as `(|x|^2 - |y|^2) / (x0 + y0)`; algebraically identical but free of the
/// cancellation the textbook form suffers for nearby points. The result is
/// exactly symmetric and exactly zero for identical inputs.
#[inline]
pub fn sq_dist_slices(x: &[f64], y: &[f64], gamma: f64) -> f64 {
    let nx = sq_norm(x);
    let ny = sq_norm(y);
    let diff: f64 = x.iter().zip(y).map(|(a, b)| (a - b) * (a - b)).sum();
    let dt = (nx - ny) / ((gamma + nx).sqrt() + (gamma + ny).sqrt());
    (diff - dt * dt).max(0.0)
}

/// Squared distance to the origin `(sqrt(gamma), 0, ..., 0)`.
///
/// Equal to `-2*gamma + 2*sqrt(gamma)*x0`, evaluated as
/// `2*sqrt(gamma)*|x|^2 / (x0 + sqrt(gamma))`.
#[inline]
pub fn ldo_slice(x: &[f64], gamma: f64) -> f64 {
    let n2 = sq_norm(x);
    let sg = gamma.sqrt();
    2.0 * sg * n2 / ((gamma + n2).sqrt() + sg)
}

/// Applies the block rotation in place: each pair `(x[2i], x[2i+1])` is
/// turned by `angles[i]`.
#[inline]
pub fn rotate_in_place(angles: &[f64], x: &mut [f64]) {
    debug_assert_eq!(x.len(), 2 * angles.len());
    for (pair, &theta) in x.chunks_exact_mut(2).zip(angles) {
        let (s, c) = theta.sin_cos();
        let (a, b) = (pair[0], pair[1]);
        pair[0] = c * a - s * b;
        pair[1] = s * a + c * b;
    }
}

/// Same as [`rotate_in_place`] with precomputed `(sin, cos)` per block.
#[inline]
pub fn rotate_with(sincos: &[(f64, f64)], x: &[f64], out: &mut [f64]) {
    for ((o, pair), &(s, c)) in out.chunks_exact_mut(2).zip(x.chunks_exact(2)).zip(sincos) {
        o[0] = c * pair[0] - s * pair[1];
        o[1] = s * pair[0] + c * pair[1];
    }
}

/// Inverse (transpose) rotation with precomputed `(sin, cos)`.
#[inline]
pub fn rotate_back_with(sincos: &[(f64, f64)], x: &[f64], out: &mut [f64]) {
    for ((o, pair), &(s, c)) in out.chunks_exact_mut(2).zip(x.chunks_exact(2)).zip(sincos) {
        o[0] = c * pair[0] + s * pair[1];
        o[1] = -s * pair[0] + c * pair[1];
    }
}

/// Exponential map at the origin applied to the tangent vector `(0, v)`,
/// written into `v` as the resulting spatial coordinates.
pub fn exp_map_origin_in_place(v: &mut [f64], gamma: f64) {
    let r = sq_norm(v).sqrt();
    if r == 0.0 {
        return;
    }
    let sg = gamma.sqrt();
    let scale = sg * (r / sg).sinh() / r;
    for x in v.iter_mut() {
        *x *= scale;
    }
}

/// A point on the hyperboloid with curvature parameter `gamma`.
#[derive(Debug, Clone, PartialEq)]
pub struct LorentzPoint {
    spatial: Vec<f64>,
    gamma: f64,
}

impl LorentzPoint {
    pub fn new(spatial: Vec<f64>, gamma: f64) -> Result<Self> {
        if !(gamma > 0.0) || !gamma.is_finite() {
            return Err(Error::InvalidArgument(format!("gamma must be positive, got {gamma}")));
        }
        Ok(Self { spatial, gamma })
    }

    pub fn origin(dim: usize, gamma: f64) -> Result<Self> {
        Self::new(vec![0.0; dim], gamma)
    }

    pub fn spatial(&self) -> &[f64] {
        &self.spatial
    }

    pub fn gamma(&self) -> f64 {
        self.gamma
    }

    pub fn dim(&self) -> usize {
        self.spatial.len()
    }

    pub fn time(&self) -> f64 {
        time_coord(&self.spatial, self.gamma)
    }

    /// Full ambient coordinates `(x0, x1, ..., xn)`.
    pub fn coords(&self) -> Vec<f64> {
        std::iter::once(self.time()).chain(self.spatial.iter().copied()).collect()
    }

    fn compatible(&self, other: &Self) -> Result<()> {
        if self.dim() != other.dim() {
            return Err(Error::DimensionMismatch {
                left: self.dim(),
                right: other.dim(),
            });
        }
        if self.gamma != other.gamma {
            return Err(Error::CurvatureMismatch {
                left: self.gamma,
                right: other.gamma,
            });
        }
        Ok(())
    }
}

pub fn lorentz_inner(x: &LorentzPoint, y: &LorentzPoint) -> Result<f64> {
    x.compatible(y)?;
    Ok(inner_slices(&x.spatial, &y.spatial, x.gamma))
}

pub fn sq_lorentz_dist(x: &LorentzPoint, y: &LorentzPoint) -> Result<f64> {
    x.compatible(y)?;
    Ok(sq_dist_slices(&x.spatial, &y.spatial, x.gamma))
}

/// Lorentzian distance to origin.
pub fn ldo(x: &LorentzPoint) -> f64 {
    ldo_slice(&x.spatial, x.gamma)
}

/// One learnable angle per 2x2 block of spatial coordinates.
#[derive(Debug, Clone, PartialEq)]
pub struct RotationSet {
    pub angles: Vec<f64>,
}

impl RotationSet {
    pub fn identity(dim: usize) -> Result<Self> {
        if dim % 2 != 0 {
            return Err(Error::OddDimension(dim));
        }
        Ok(Self {
            angles: vec![0.0; dim / 2],
        })
    }

    pub fn new(angles: Vec<f64>) -> Self {
        Self { angles }
    }

    /// Blockwise angle sum; composing two rotations.
    pub fn compose(&self, other: &Self) -> Self {
        Self::new(self.angles.iter().zip(&other.angles).map(|(a, b)| a + b).collect())
    }

    pub fn sincos(&self) -> Vec<(f64, f64)> {
        self.angles.iter().map(|t| t.sin_cos()).collect()
    }
}

/// Rotates the spatial part; the time coordinate is unchanged because the
/// spatial norm is preserved.
pub fn rotate(r: &RotationSet, x: &LorentzPoint) -> Result<LorentzPoint> {
    if x.dim() % 2 != 0 {
        return Err(Error::OddDimension(x.dim()));
    }
    if r.angles.len() * 2 != x.dim() {
        return Err(Error::DimensionMismatch {
            left: r.angles.len() * 2,
            right: x.dim(),
        });
    }
    let mut spatial = x.spatial.clone();
    rotate_in_place(&r.angles, &mut spatial);
    Ok(LorentzPoint {
        spatial,
        gamma: x.gamma,
    })
}

/// Draws spatial coordinates from the wrapped normal at the origin into `out`.
pub fn wrapped_normal_fill<R: Rng + ?Sized>(out: &mut [f64], gamma: f64, std: f64, rng: &mut R) {
    let normal = Normal::new(0.0, std).expect("std must be finite and positive");
    for x in out.iter_mut() {
        *x = normal.sample(rng);
    }
    exp_map_origin_in_place(out, gamma);
}

/// Wrapped-normal sample: tangent vector with i.i.d. `N(0, std^2)` spatial
/// components, pushed onto the manifold by the exponential map at the origin.
pub fn wrapped_normal_init(dim: usize, gamma: f64, std: f64, seed: u64) -> Result<LorentzPoint> {
    if dim % 2 != 0 {
        return Err(Error::OddDimension(dim));
    }
    if !(std > 0.0) || !std.is_finite() {
        return Err(Error::InvalidArgument(format!("std must be positive, got {std}")));
    }
    let mut spatial = vec![0.0; dim];
    wrapped_normal_fill(&mut spatial, gamma, std, &mut rng::from_seed(seed));
    LorentzPoint::new(spatial, gamma)
}
