//! Continuous 2D point-mass maze with epsilon-ball goal reaching.

use std::collections::VecDeque;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::goalspace::QuantGrid;
use crate::{Error, Result};

pub const OBS_DIM: usize = 4;
pub const ACTION_DIM: usize = 2;
const MAX_GOAL_DRAWS: usize = 100_000;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Rect {
    pub x: f64,
    pub y: f64,
    pub w: f64,
    pub h: f64,
}

impl Rect {
    /// Closed containment.
    pub fn contains(&self, p: [f64; 2]) -> bool {
        p[0] >= self.x && p[0] <= self.x + self.w && p[1] >= self.y && p[1] <= self.y + self.h
    }

    /// Open-interior containment; wall faces themselves are free space.
    pub fn interior(&self, p: [f64; 2]) -> bool {
        p[0] > self.x && p[0] < self.x + self.w && p[1] > self.y && p[1] < self.y + self.h
    }

    fn overlaps(&self, o: &Rect) -> bool {
        self.x < o.x + o.w && o.x < self.x + self.w && self.y < o.y + o.h && o.y < self.y + self.h
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Bounds {
    pub x_min: f64,
    pub x_max: f64,
    pub y_min: f64,
    pub y_max: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MazeSpec {
    pub bounds: Bounds,
    pub walls: Vec<Rect>,
    pub start_region: Rect,
    pub success_eps: f64,
}

/// Point-mass integration constants.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Dynamics {
    pub dt: f64,
    pub a_scale: f64,
    pub drag: f64,
    pub v_max: f64,
    pub t_max: u32,
}

impl Default for Dynamics {
    fn default() -> Self {
        Self {
            dt: 0.1,
            a_scale: 1.0,
            drag: 0.1,
            v_max: 2.0,
            t_max: 200,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PointState {
    pub pos: [f64; 2],
    pub vel: [f64; 2],
    pub step_count: u32,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ContGoal {
    pub target: [f64; 2],
}

impl MazeSpec {
    /// 8x8 U-maze: one wall arm from the left edge splits the lower and
    /// upper corridors, which join on the right.
    pub fn umaze() -> Self {
        Self {
            bounds: Bounds {
                x_min: 0.0,
                x_max: 8.0,
                y_min: 0.0,
                y_max: 8.0,
            },
            walls: vec![Rect {
                x: 0.0,
                y: 3.5,
                w: 5.5,
                h: 1.0,
            }],
            start_region: Rect {
                x: 0.5,
                y: 0.5,
                w: 1.0,
                h: 1.0,
            },
            success_eps: 0.5,
        }
    }

    pub fn named(name: &str) -> Result<Self> {
        match name {
            "umaze" => Ok(Self::umaze()),
            other => Err(Error::invalid(format!("unknown maze layout {other:?}"))),
        }
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let spec: Self = serde_json::from_str(text)?;
        spec.validate()?;
        Ok(spec)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }

    pub fn in_bounds(&self, p: [f64; 2]) -> bool {
        let b = &self.bounds;
        p[0] >= b.x_min && p[0] <= b.x_max && p[1] >= b.y_min && p[1] <= b.y_max
    }

    /// In bounds and not strictly inside any wall.
    pub fn is_free(&self, p: [f64; 2]) -> bool {
        self.in_bounds(p) && !self.walls.iter().any(|w| w.interior(p))
    }

    /// Valid goal location: in bounds and outside every (closed) wall.
    pub fn is_goal_location(&self, p: [f64; 2]) -> bool {
        self.in_bounds(p) && !self.walls.iter().any(|w| w.contains(p))
    }

    pub fn validate(&self) -> Result<()> {
        let b = &self.bounds;
        let bad = |m: &str| Err(Error::invalid(format!("maze spec: {m}")));
        if !(b.x_max > b.x_min && b.y_max > b.y_min) {
            return bad("empty bounds");
        }
        if !(self.success_eps > 0.0) {
            return bad("success_eps must be positive");
        }
        if self.walls.iter().any(|w| !(w.w > 0.0 && w.h > 0.0)) {
            return bad("walls need positive extent");
        }
        let s = &self.start_region;
        if !(s.w >= 0.0 && s.h >= 0.0)
            || !self.in_bounds([s.x, s.y])
            || !self.in_bounds([s.x + s.w, s.y + s.h])
        {
            return bad("start region outside bounds");
        }
        if self.walls.iter().any(|w| w.overlaps(s)) {
            return bad("start region intersects a wall");
        }
        if !self.free_space_connected(0.05) {
            return bad("free space is not connected");
        }
        Ok(())
    }

    /// Flood fill over a raster of free-space sample points.
    fn free_space_connected(&self, res: f64) -> bool {
        let b = &self.bounds;
        let nx = ((b.x_max - b.x_min) / res).ceil() as usize;
        let ny = ((b.y_max - b.y_min) / res).ceil() as usize;
        let free: Vec<bool> = (0..ny)
            .flat_map(|iy| (0..nx).map(move |ix| (ix, iy)))
            .map(|(ix, iy)| {
                let p = [
                    b.x_min + (ix as f64 + 0.5) * res,
                    b.y_min + (iy as f64 + 0.5) * res,
                ];
                self.is_goal_location(p)
            })
            .collect();
        let Some(start) = free.iter().position(|&f| f) else {
            return false;
        };
        let mut seen = vec![false; free.len()];
        seen[start] = true;
        let mut queue = VecDeque::from([start]);
        let mut count = 1;
        while let Some(i) = queue.pop_front() {
            let (ix, iy) = (i % nx, i / nx);
            let mut visit = |j: usize| {
                if free[j] && !seen[j] {
                    seen[j] = true;
                    count += 1;
                    queue.push_back(j);
                }
            };
            if ix > 0 {
                visit(i - 1);
            }
            if ix + 1 < nx {
                visit(i + 1);
            }
            if iy > 0 {
                visit(i - nx);
            }
            if iy + 1 < ny {
                visit(i + nx);
            }
        }
        count == free.iter().filter(|&&f| f).count()
    }

    /// Goal grid with spacing `h` anchored at the lower-left bound; a cell
    /// is valid when its center is a goal location.
    pub fn goal_grid(&self, h: f64) -> Result<QuantGrid> {
        let b = &self.bounds;
        let nx = ((b.x_max - b.x_min) / h).round() as usize;
        let ny = ((b.y_max - b.y_min) / h).round() as usize;
        QuantGrid::new((b.x_min, b.y_min), h, (nx, ny), |x, y| {
            self.is_goal_location([x, y])
        })
    }
}

/// Uniform draw from the free goal space by rejection.
pub fn sample_goal<R: Rng + ?Sized>(spec: &MazeSpec, rng: &mut R) -> ContGoal {
    let b = &spec.bounds;
    for _ in 0..MAX_GOAL_DRAWS {
        let p = [
            rng.random_range(b.x_min..=b.x_max),
            rng.random_range(b.y_min..=b.y_max),
        ];
        if spec.is_goal_location(p) {
            return ContGoal { target: p };
        }
    }
    // validated specs have free space of positive measure
    unreachable!("goal rejection sampler exhausted")
}

pub fn reset_with<R: Rng + ?Sized>(spec: &MazeSpec, rng: &mut R) -> (PointState, ContGoal) {
    let s = &spec.start_region;
    let pos = [
        s.x + rng.random::<f64>() * s.w,
        s.y + rng.random::<f64>() * s.h,
    ];
    let goal = sample_goal(spec, rng);
    (
        PointState {
            pos,
            vel: [0.0; 2],
            step_count: 0,
        },
        goal,
    )
}

/// Deterministic in `seed`.
pub fn reset(spec: &MazeSpec, seed: u64) -> (PointState, ContGoal) {
    reset_with(spec, &mut ChaCha8Rng::seed_from_u64(seed))
}

/// Moves along one axis, stopping at the first wall face or bound crossed.
fn move_axis(spec: &MazeSpec, pos: [f64; 2], v: f64, dt: f64, axis: usize) -> (f64, bool) {
    let other = 1 - axis;
    let from = pos[axis];
    let mut to = from + v * dt;
    let mut hit = false;
    let (lo, hi) = if axis == 0 {
        (spec.bounds.x_min, spec.bounds.x_max)
    } else {
        (spec.bounds.y_min, spec.bounds.y_max)
    };
    if to > hi {
        to = hi;
        hit = true;
    } else if to < lo {
        to = lo;
        hit = true;
    }
    for w in &spec.walls {
        let (a_lo, a_hi, o_lo, o_hi) = if axis == 0 {
            (w.x, w.x + w.w, w.y, w.y + w.h)
        } else {
            (w.y, w.y + w.h, w.x, w.x + w.w)
        };
        if !(pos[other] > o_lo && pos[other] < o_hi) {
            continue;
        }
        if v > 0.0 && from <= a_lo && to > a_lo {
            to = a_lo;
            hit = true;
        } else if v < 0.0 && from >= a_hi && to < a_hi {
            to = a_hi;
            hit = true;
        }
    }
    (to, hit)
}

/// Semi-implicit Euler step with axis-separated collisions: x moves first,
/// then y; a blocked axis stops at the face and loses its velocity.
pub fn step(spec: &MazeSpec, dynamics: &Dynamics, state: &PointState, action: [f64; 2]) -> PointState {
    let a = action.map(|v| if v.is_nan() { 0.0 } else { v.clamp(-1.0, 1.0) });
    let mut vel = [
        state.vel[0] * (1.0 - dynamics.drag) + a[0] * dynamics.a_scale,
        state.vel[1] * (1.0 - dynamics.drag) + a[1] * dynamics.a_scale,
    ];
    let speed = vel[0].hypot(vel[1]);
    if speed > dynamics.v_max {
        let k = dynamics.v_max / speed;
        vel = [vel[0] * k, vel[1] * k];
    }
    let mut pos = state.pos;
    for axis in 0..2 {
        let (to, hit) = move_axis(spec, pos, vel[axis], dynamics.dt, axis);
        pos[axis] = to;
        if hit {
            vel[axis] = 0.0;
        }
    }
    PointState {
        pos,
        vel,
        step_count: (state.step_count + 1).min(dynamics.t_max),
    }
}

/// Closed epsilon ball.
pub fn success(state: &PointState, goal: &ContGoal, eps: f64) -> bool {
    distance(state.pos, goal.target) <= eps
}

pub fn distance(a: [f64; 2], b: [f64; 2]) -> f64 {
    (a[0] - b[0]).hypot(a[1] - b[1])
}

/// Position scaled to [0,1] by the bounds and velocity divided by `v_max`.
pub fn observe_into(spec: &MazeSpec, dynamics: &Dynamics, state: &PointState, out: &mut Vec<f32>) {
    let b = &spec.bounds;
    out.clear();
    out.extend_from_slice(&[
        ((state.pos[0] - b.x_min) / (b.x_max - b.x_min)) as f32,
        ((state.pos[1] - b.y_min) / (b.y_max - b.y_min)) as f32,
        (state.vel[0] / dynamics.v_max) as f32,
        (state.vel[1] / dynamics.v_max) as f32,
    ]);
}
