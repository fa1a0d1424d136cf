//! Random-waypoint mobility over a bounded 2-D grid and proximity-based
//! rendezvous detection.
//!
//! Sensors pick a uniform random destination, travel toward it at a random
//! speed, pause on arrival, and repeat. Rendezvous groups are the connected
//! components of the "pairwise distance <= range" graph with at least two
//! members, so every component shares a single consensus value downstream.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng;

/// Rectangular simulation area, origin at (0, 0), in meters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GridBounds {
    pub width: f64,
    pub height: f64,
}

impl GridBounds {
    pub fn new(width: f64, height: f64) -> Result<Self> {
        if !(width > 0.0) || !(height > 0.0) {
            return Err(Error::Config(format!(
                "grid bounds must be positive, got {width} x {height}"
            )));
        }
        Ok(Self { width, height })
    }

    pub fn contains(&self, pos: (f64, f64)) -> bool {
        pos.0 >= 0.0 && pos.0 <= self.width && pos.1 >= 0.0 && pos.1 <= self.height
    }

    pub fn center(&self) -> (f64, f64) {
        (self.width / 2.0, self.height / 2.0)
    }

    fn clamp(&self, pos: (f64, f64)) -> (f64, f64) {
        (pos.0.clamp(0.0, self.width), pos.1.clamp(0.0, self.height))
    }
}

/// Speed and pause ranges for the random-waypoint model.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RwpParams {
    /// Minimum speed in meters per step (must be > 0).
    pub v_min: f64,
    /// Maximum speed in meters per step.
    pub v_max: f64,
    /// Maximum pause after arriving at a waypoint, in steps.
    pub pause_max: u32,
}

impl RwpParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.v_min > 0.0) || !(self.v_max >= self.v_min) {
            return Err(Error::Config(format!(
                "speed range must satisfy 0 < v_min <= v_max, got [{}, {}]",
                self.v_min, self.v_max
            )));
        }
        Ok(())
    }
}

/// Per-sensor kinematic state under the random-waypoint model.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MobilityState {
    pub position: (f64, f64),
    pub waypoint: (f64, f64),
    /// Current travel speed in meters per step.
    pub speed: f64,
    /// Remaining pause steps before movement resumes.
    pub pause_remaining: u32,
}

/// A set of sensors in mutual (transitive) transmission range at one step.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RendezvousGroup {
    /// Member sensor ids, ascending.
    pub member_ids: Vec<usize>,
    /// Step index at which the group formed.
    pub timestamp: u64,
}

fn uniform_point(bounds: &GridBounds, rng: &mut ChaCha8Rng) -> (f64, f64) {
    (
        rng.random::<f64>() * bounds.width,
        rng.random::<f64>() * bounds.height,
    )
}

fn uniform_speed(params: &RwpParams, rng: &mut ChaCha8Rng) -> f64 {
    params.v_min + rng.random::<f64>() * (params.v_max - params.v_min)
}

/// Draws `n` initial states with positions and waypoints uniform over the
/// grid. Deterministic for a given seed.
pub fn init_mobility(
    n: usize,
    bounds: &GridBounds,
    params: &RwpParams,
    seed: u64,
) -> Result<Vec<MobilityState>> {
    if n == 0 {
        return Err(Error::Config("need at least one sensor".into()));
    }
    params.validate()?;
    let mut rng = rng::stream_rng(seed, rng::STREAM_MOBILITY_INIT);
    let mut states = Vec::with_capacity(n);
    for _ in 0..n {
        states.push(MobilityState {
            position: uniform_point(bounds, &mut rng),
            waypoint: uniform_point(bounds, &mut rng),
            speed: uniform_speed(params, &mut rng),
            pause_remaining: 0,
        });
    }
    Ok(states)
}

/// Advances one state by one step: pause if pausing, otherwise move `speed`
/// meters toward the waypoint; on arrival snap to it and draw a fresh
/// waypoint, speed, and pause. Positions never leave the grid.
pub fn step_mobility(
    state: &MobilityState,
    bounds: &GridBounds,
    params: &RwpParams,
    rng: &mut ChaCha8Rng,
) -> MobilityState {
    let mut next = *state;
    if next.pause_remaining > 0 {
        next.pause_remaining -= 1;
        return next;
    }
    let dx = next.waypoint.0 - next.position.0;
    let dy = next.waypoint.1 - next.position.1;
    let dist = (dx * dx + dy * dy).sqrt();
    if dist <= next.speed {
        next.position = next.waypoint;
        next.waypoint = uniform_point(bounds, rng);
        next.speed = uniform_speed(params, rng);
        next.pause_remaining = if params.pause_max == 0 {
            0
        } else {
            rng.random_range(0..=params.pause_max)
        };
    } else {
        let scale = next.speed / dist;
        next.position = bounds.clamp((next.position.0 + dx * scale, next.position.1 + dy * scale));
    }
    next
}

/// Groups sensors into connected components of the proximity graph
/// (pairwise Euclidean distance <= `range`), keeping only components with at
/// least two members. Exact O(n^2) pairwise distances; n stays small.
pub fn find_rendezvous(
    positions: &[(f64, f64)],
    range: f64,
    timestamp: u64,
) -> Vec<RendezvousGroup> {
    let n = positions.len();
    let range_sq = range * range;
    let mut adjacency: Vec<Vec<usize>> = vec![Vec::new(); n];
    for i in 0..n {
        for j in (i + 1)..n {
            let dx = positions[i].0 - positions[j].0;
            let dy = positions[i].1 - positions[j].1;
            if dx * dx + dy * dy <= range_sq {
                adjacency[i].push(j);
                adjacency[j].push(i);
            }
        }
    }

    let mut visited = vec![false; n];
    let mut groups = Vec::new();
    for start in 0..n {
        if visited[start] || adjacency[start].is_empty() {
            continue;
        }
        let mut component = Vec::new();
        let mut queue = std::collections::VecDeque::new();
        visited[start] = true;
        queue.push_back(start);
        while let Some(node) = queue.pop_front() {
            component.push(node);
            for &next in &adjacency[node] {
                if !visited[next] {
                    visited[next] = true;
                    queue.push_back(next);
                }
            }
        }
        component.sort_unstable();
        groups.push(RendezvousGroup {
            member_ids: component,
            timestamp,
        });
    }
    groups
}
