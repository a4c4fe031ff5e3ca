//! Misaligned preparation and measurement bases.
//!
//! Alice's second basis sits at angle `alpha` from her first and Bob's at
//! `beta` (both `pi/2` in ideal BB84). Everything Eve can exploit depends on
//! the half-difference `delta = (beta - alpha)/2` and the half-sum
//! `theta = (beta + alpha)/2`.

use nalgebra::Matrix4;

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Alignment {
    alpha: f64,
    beta: f64,
    delta: f64,
    theta: f64,
}

impl Alignment {
    /// Build from angles in degrees, each in `[0, 180]`.
    pub fn from_degrees(alpha_deg: f64, beta_deg: f64) -> Result<Self> {
        for (what, v) in [("alpha_deg", alpha_deg), ("beta_deg", beta_deg)] {
            if !v.is_finite() || !(0.0..=180.0).contains(&v) {
                return Err(Error::Domain {
                    what,
                    value: v,
                    lo: 0.0,
                    hi: 180.0,
                });
            }
        }
        Ok(Self::from_radians_unchecked(
            alpha_deg.to_radians(),
            beta_deg.to_radians(),
        ))
    }

    /// Build from angles in radians, each in `[0, pi]`.
    pub fn from_radians(alpha: f64, beta: f64) -> Result<Self> {
        use std::f64::consts::PI;
        for (what, v) in [("alpha", alpha), ("beta", beta)] {
            if !v.is_finite() || !(0.0..=PI).contains(&v) {
                return Err(Error::Domain {
                    what,
                    value: v,
                    lo: 0.0,
                    hi: PI,
                });
            }
        }
        Ok(Self::from_radians_unchecked(alpha, beta))
    }

    fn from_radians_unchecked(alpha: f64, beta: f64) -> Self {
        Self {
            alpha,
            beta,
            delta: 0.5 * (beta - alpha),
            theta: 0.5 * (beta + alpha),
        }
    }

    /// Worst-case convention `alpha = beta = theta`.
    pub fn symmetric_degrees(theta_deg: f64) -> Result<Self> {
        Self::from_degrees(theta_deg, theta_deg)
    }

    /// `alpha = beta = 90 - dtheta`, with the deviation `dtheta` in degrees.
    pub fn from_deviation_degrees(dtheta_deg: f64) -> Result<Self> {
        Self::symmetric_degrees(90.0 - dtheta_deg)
    }

    pub fn ideal() -> Self {
        Self::from_radians_unchecked(std::f64::consts::FRAC_PI_2, std::f64::consts::FRAC_PI_2)
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    pub fn beta(&self) -> f64 {
        self.beta
    }

    /// `(beta - alpha) / 2`.
    pub fn delta(&self) -> f64 {
        self.delta
    }

    /// `(beta + alpha) / 2`.
    pub fn theta(&self) -> f64 {
        self.theta
    }

    /// Deviation `90 - theta` in degrees.
    pub fn dtheta_degrees(&self) -> f64 {
        90.0 - self.theta.to_degrees()
    }
}

/// Real orthogonal map from Eve's basis-0 kets `(a, b, c, d)` to the primed
/// basis-1 kets: a rotation by `delta` on the `(a, d)` pair and by `theta`
/// on the `(b, c)` pair.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FrameRotation(Matrix4<f64>);

impl FrameRotation {
    pub fn new(delta: f64, theta: f64) -> Self {
        let (sd, cd) = delta.sin_cos();
        let (st, ct) = theta.sin_cos();
        #[rustfmt::skip]
        let r = Matrix4::new(
             cd, 0.0, 0.0,  sd,
            0.0,  ct,  st, 0.0,
            0.0, -st,  ct, 0.0,
            -sd, 0.0, 0.0,  cd,
        );
        Self(r)
    }

    pub fn matrix(&self) -> &Matrix4<f64> {
        &self.0
    }
}

pub fn frame_rotation(align: &Alignment) -> FrameRotation {
    FrameRotation::new(align.delta, align.theta)
}

/// Range of QBERs compatible with a given misalignment, whatever Eve does.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QberBounds {
    pub min: f64,
    pub max: f64,
}

impl QberBounds {
    pub fn contains(&self, q: f64) -> bool {
        q >= self.min && q <= self.max
    }
}

/// `1/2 -+ max(|cos delta|, |cos theta|) / 2`.
pub fn inherent_qber_bounds(align: &Alignment) -> QberBounds {
    let m = align.delta.cos().abs().max(align.theta.cos().abs());
    QberBounds {
        min: 0.5 - 0.5 * m,
        max: 0.5 + 0.5 * m,
    }
}
