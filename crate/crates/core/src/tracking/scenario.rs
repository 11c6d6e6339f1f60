//! Object motion scenarios on the table.

use std::f64::consts::TAU;

use nalgebra::{Vector2, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::geometry::{rot_z, Pose};
use crate::seed;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScenarioKind {
    LinearMotion,
    CircularRotation,
    TemporaryOcclusion,
    RandomSpatial,
}

impl ScenarioKind {
    pub const ALL: [ScenarioKind; 4] = [
        ScenarioKind::LinearMotion,
        ScenarioKind::CircularRotation,
        ScenarioKind::TemporaryOcclusion,
        ScenarioKind::RandomSpatial,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            ScenarioKind::LinearMotion => "linear_motion",
            ScenarioKind::CircularRotation => "circular_rotation",
            ScenarioKind::TemporaryOcclusion => "temporary_occlusion",
            ScenarioKind::RandomSpatial => "random_spatial",
        }
    }

    pub fn parse(s: &str) -> Option<ScenarioKind> {
        let norm = s.replace('-', "_").to_ascii_lowercase();
        Self::ALL
            .into_iter()
            .find(|k| k.name() == norm || k.name().split('_').next() == Some(norm.as_str()))
    }
}

impl std::fmt::Display for ScenarioKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

/// Kind-specific parameters. Positions are in the robot base frame.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ScenarioParams {
    /// Nominal object position; z is the object's resting height.
    pub table_center: [f64; 3],
    /// Fixed yaw of the object, radians.
    pub yaw: f64,
    /// Start points are drawn uniformly from a disc of this radius.
    pub start_radius: f64,
    /// Length range of the straight segment.
    pub travel: (f64, f64),
    /// Explicit `(A, B)` endpoints; overrides the random draw.
    pub endpoints: Option<([f64; 3], [f64; 3])>,
    /// Center of the circular path; defaults to the table center.
    pub pivot: Option<[f64; 3]>,
    pub circle_radius: f64,
    /// Angle on the circle at time zero, radians.
    pub phase: f64,
    /// Radians per second; defaults to one revolution per duration.
    pub angular_speed: Option<f64>,
    pub occlusion_start: f64,
    pub occlusion_duration: f64,
    pub occluder_radius: f64,
    /// Mean reversion rate of the random walk, 1/s.
    pub ou_theta: f64,
    /// Velocity diffusion, m/s per √s.
    pub ou_sigma: f64,
    pub max_speed: f64,
    pub yaw_sigma: f64,
    pub max_yaw_rate: f64,
    /// The random walk stays within this distance of the table center.
    pub roam_radius: f64,
}

impl Default for ScenarioParams {
    fn default() -> Self {
        Self {
            table_center: [0.45, 0.0, 0.04],
            yaw: 0.0,
            start_radius: 0.05,
            travel: (0.28, 0.32),
            endpoints: None,
            pivot: None,
            circle_radius: 0.08,
            phase: 0.0,
            angular_speed: None,
            occlusion_start: 8.05,
            occlusion_duration: 0.4,
            occluder_radius: 0.03,
            ou_theta: 0.8,
            ou_sigma: 0.05,
            max_speed: 0.06,
            yaw_sigma: 0.4,
            max_yaw_rate: 0.5,
            roam_radius: 0.15,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scenario {
    pub kind: ScenarioKind,
    /// Seconds.
    pub duration: f64,
    /// Frames per second.
    pub rate: f64,
    pub seed: u64,
    #[serde(default)]
    pub params: ScenarioParams,
}

impl Scenario {
    /// 20 s at 10 Hz with default parameters.
    pub fn new(kind: ScenarioKind, seed: u64) -> Self {
        Self {
            kind,
            duration: 20.0,
            rate: 10.0,
            seed,
            params: ScenarioParams::default(),
        }
    }

    pub fn validate(&self) -> Result<(), String> {
        if !(self.duration > 0.0 && self.rate > 0.0) {
            return Err("duration and rate must be positive".into());
        }
        if self.kind == ScenarioKind::TemporaryOcclusion
            && !(self.params.occlusion_duration > 0.0 && self.params.occlusion_duration <= 1.0)
        {
            return Err("occlusion window must last between 0 and 1 s".into());
        }
        Ok(())
    }

    pub fn n_frames(&self) -> usize {
        (self.duration * self.rate).round() as usize
    }

    pub fn time(&self, frame: usize) -> f64 {
        frame as f64 / self.rate
    }

    pub fn table_center(&self) -> Vector3<f64> {
        Vector3::from(self.params.table_center)
    }

    /// Straight-segment endpoints for the linear scenarios.
    pub fn linear_endpoints(&self) -> (Vector3<f64>, Vector3<f64>) {
        if let Some((a, b)) = self.params.endpoints {
            return (Vector3::from(a), Vector3::from(b));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed!(self.seed, "linear-endpoints"));
        let c = self.table_center();
        let a = c + disc_point(&mut rng, self.params.start_radius);
        let heading = rng.random_range(0.0..TAU);
        let (lo, hi) = self.params.travel;
        let len = if hi > lo { rng.random_range(lo..hi) } else { lo };
        (a, a + Vector3::new(heading.cos(), heading.sin(), 0.0) * len)
    }
}

fn disc_point(rng: &mut ChaCha8Rng, radius: f64) -> Vector3<f64> {
    let r = radius * rng.random::<f64>().sqrt();
    let phi = rng.random_range(0.0..TAU);
    Vector3::new(r * phi.cos(), r * phi.sin(), 0.0)
}

/// Object poses at `frame / rate` for every frame of the scenario.
pub fn generate_object_trajectory(s: &Scenario) -> Vec<(f64, Pose)> {
    let n = s.n_frames();
    let p = &s.params;
    let times: Vec<f64> = (0..n).map(|i| s.time(i)).collect();
    let fixed = rot_z(p.yaw);
    match s.kind {
        ScenarioKind::LinearMotion | ScenarioKind::TemporaryOcclusion => {
            let (a, b) = s.linear_endpoints();
            let last = n.saturating_sub(1).max(1) as f64;
            times
                .iter()
                .enumerate()
                .map(|(i, &t)| (t, Pose::new(fixed, a + (b - a) * (i as f64 / last))))
                .collect()
        }
        ScenarioKind::CircularRotation => {
            let pivot = p.pivot.map(Vector3::from).unwrap_or_else(|| s.table_center());
            let omega = p.angular_speed.unwrap_or(TAU / s.duration);
            times
                .iter()
                .map(|&t| {
                    let phi = omega * t;
                    let at = p.phase + phi;
                    let offset = Vector3::new(at.cos(), at.sin(), 0.0) * p.circle_radius;
                    (t, Pose::new(rot_z(p.yaw + phi), pivot + offset))
                })
                .collect()
        }
        ScenarioKind::RandomSpatial => random_walk(s, &times),
    }
}

/// Ornstein–Uhlenbeck velocities in the table plane and in yaw, with
/// clamped speeds and a soft boundary around the table center.
fn random_walk(s: &Scenario, times: &[f64]) -> Vec<(f64, Pose)> {
    let p = &s.params;
    let mut rng = ChaCha8Rng::seed_from_u64(seed!(s.seed, "random-spatial"));
    let c = s.table_center();
    let dt = 1.0 / s.rate;
    let mut pos = c + disc_point(&mut rng, p.start_radius);
    let mut vel = Vector2::zeros();
    let mut yaw = p.yaw;
    let mut yaw_rate = 0.0;
    let mut out = Vec::with_capacity(times.len());
    for &t in times {
        out.push((t, Pose::new(rot_z(yaw), pos)));
        let xi = Vector2::new(
            rng.sample::<f64, _>(StandardNormal),
            rng.sample::<f64, _>(StandardNormal),
        );
        vel += -p.ou_theta * vel * dt + xi * (p.ou_sigma * dt.sqrt());
        let speed = vel.norm();
        if speed > p.max_speed {
            vel *= p.max_speed / speed;
        }
        yaw_rate += -p.ou_theta * yaw_rate * dt + rng.sample::<f64, _>(StandardNormal) * p.yaw_sigma * dt.sqrt();
        yaw_rate = yaw_rate.clamp(-p.max_yaw_rate, p.max_yaw_rate);

        pos.x += vel.x * dt;
        pos.y += vel.y * dt;
        yaw += yaw_rate * dt;
        let rel = Vector2::new(pos.x - c.x, pos.y - c.y);
        if rel.norm() > p.roam_radius {
            let n = rel.normalize();
            let back = c.xy() + n * p.roam_radius;
            pos.x = back.x;
            pos.y = back.y;
            let radial = vel.dot(&n);
            if radial > 0.0 {
                vel -= n * (2.0 * radial);
            }
        }
    }
    out
}
