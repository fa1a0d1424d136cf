//! Ground-truth concentration field: a 2-D Gaussian plume whose center
//! performs a fixed-length random walk clamped to the grid.

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::mobility::GridBounds;

/// Gaussian concentration bump with a wandering center.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PlumeField {
    pub center: (f64, f64),
    pub sigma_x: f64,
    pub sigma_y: f64,
    /// Peak concentration at the center.
    pub amplitude: f64,
    /// Length of one random-walk displacement of the center, in meters.
    pub walk_step: f64,
}

impl PlumeField {
    pub fn new(
        center: (f64, f64),
        sigma_x: f64,
        sigma_y: f64,
        amplitude: f64,
        walk_step: f64,
        bounds: &GridBounds,
    ) -> Result<Self> {
        if !(sigma_x > 0.0) || !(sigma_y > 0.0) {
            return Err(Error::Config(format!(
                "plume sigmas must be positive, got ({sigma_x}, {sigma_y})"
            )));
        }
        if !(amplitude > 0.0) {
            return Err(Error::Config(format!(
                "plume amplitude must be positive, got {amplitude}"
            )));
        }
        if !(walk_step >= 0.0) {
            return Err(Error::Config(format!(
                "plume walk step must be non-negative, got {walk_step}"
            )));
        }
        if !bounds.contains(center) {
            return Err(Error::Config(format!(
                "plume center {center:?} lies outside the grid"
            )));
        }
        Ok(Self {
            center,
            sigma_x,
            sigma_y,
            amplitude,
            walk_step,
        })
    }

    /// Concentration at `pos`: amplitude * exp(-((dx^2)/(2 sx^2) + (dy^2)/(2 sy^2))).
    /// Always in (0, amplitude].
    pub fn concentration(&self, pos: (f64, f64)) -> f64 {
        let dx = pos.0 - self.center.0;
        let dy = pos.1 - self.center.1;
        let exponent = dx * dx / (2.0 * self.sigma_x * self.sigma_x)
            + dy * dy / (2.0 * self.sigma_y * self.sigma_y);
        self.amplitude * (-exponent).exp()
    }

    /// Displaces the center by `walk_step` meters in a uniformly random
    /// direction, then clamps it to the grid. Other fields are unchanged.
    pub fn step(&self, bounds: &GridBounds, rng: &mut ChaCha8Rng) -> PlumeField {
        let mut next = *self;
        let angle = rng.random::<f64>() * std::f64::consts::TAU;
        let cx = (self.center.0 + self.walk_step * angle.cos()).clamp(0.0, bounds.width);
        let cy = (self.center.1 + self.walk_step * angle.sin()).clamp(0.0, bounds.height);
        next.center = (cx, cy);
        next
    }
}
