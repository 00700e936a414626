use crate::{Error, Result};

use super::GoalId;

/// Regular grid of candidate goal locations. Cell `(ix, iy)` covers
/// `[x0 + ix*h, x0 + (ix+1)*h) x [y0 + iy*h, ...)` and its goal sits at the
/// cell center. Only cells whose center is in free space are goals; their
/// ids are dense in row-major `(iy, ix)` order.
#[derive(Clone, Debug, PartialEq)]
pub struct QuantGrid {
    origin: (f64, f64),
    spacing: f64,
    dims: (usize, usize),
    valid: Vec<bool>,
    cell_goal: Vec<Option<GoalId>>,
    centers: Vec<(f64, f64)>,
}

impl QuantGrid {
    /// `is_free` decides validity from a cell center.
    pub fn new(
        origin: (f64, f64),
        spacing: f64,
        dims: (usize, usize),
        is_free: impl Fn(f64, f64) -> bool,
    ) -> Result<Self> {
        if !(spacing > 0.0) || dims.0 == 0 || dims.1 == 0 {
            return Err(Error::invalid("grid needs positive spacing and dimensions"));
        }
        let mut valid = Vec::with_capacity(dims.0 * dims.1);
        let mut cell_goal = Vec::with_capacity(dims.0 * dims.1);
        let mut centers = Vec::new();
        for iy in 0..dims.1 {
            for ix in 0..dims.0 {
                let c = (
                    origin.0 + (ix as f64 + 0.5) * spacing,
                    origin.1 + (iy as f64 + 0.5) * spacing,
                );
                let ok = is_free(c.0, c.1);
                valid.push(ok);
                if ok {
                    cell_goal.push(Some(GoalId(centers.len())));
                    centers.push(c);
                } else {
                    cell_goal.push(None);
                }
            }
        }
        if centers.is_empty() {
            return Err(Error::invalid("quantization grid has no valid cell"));
        }
        Ok(Self {
            origin,
            spacing,
            dims,
            valid,
            cell_goal,
            centers,
        })
    }

    pub fn origin(&self) -> (f64, f64) {
        self.origin
    }

    pub fn spacing(&self) -> f64 {
        self.spacing
    }

    pub fn dims(&self) -> (usize, usize) {
        self.dims
    }

    pub fn valid_mask(&self) -> &[bool] {
        &self.valid
    }

    pub fn num_goals(&self) -> usize {
        self.centers.len()
    }

    pub fn center(&self, g: GoalId) -> (f64, f64) {
        self.centers[g.0]
    }

    pub fn centers(&self) -> &[(f64, f64)] {
        &self.centers
    }

    /// Cell index containing a point, clamped to the grid.
    pub fn cell_of(&self, x: f64, y: f64) -> (usize, usize) {
        let clamp = |v: f64, n: usize| -> usize {
            if v <= 0.0 {
                0
            } else {
                (v.floor() as usize).min(n - 1)
            }
        };
        (
            clamp((x - self.origin.0) / self.spacing, self.dims.0),
            clamp((y - self.origin.1) / self.spacing, self.dims.1),
        )
    }
}

/// Snaps a continuous goal to the nearest valid cell center (Euclidean).
pub fn quantize_goal(goal: (f64, f64), grid: &QuantGrid) -> Result<GoalId> {
    let (ix, iy) = grid.cell_of(goal.0, goal.1);
    if let Some(g) = grid.cell_goal[iy * grid.dims.0 + ix] {
        return Ok(g);
    }
    grid.centers
        .iter()
        .enumerate()
        .map(|(i, c)| (i, (c.0 - goal.0).powi(2) + (c.1 - goal.1).powi(2)))
        .min_by(|a, b| a.1.total_cmp(&b.1))
        .map(|(i, _)| GoalId(i))
        .ok_or_else(|| Error::invalid("quantization grid has no valid cell"))
}

/// True iff reaching a quantized goal within `eps_reach` guarantees reaching
/// the true goal within `eps`: `h*sqrt(2)/2 + eps_reach <= eps`.
///
/// The bound assumes the goal's own cell is valid, i.e. grid cells are
/// either entirely free or entirely blocked.
pub fn quantization_adequacy(grid: &QuantGrid, eps_reach: f64, eps: f64) -> bool {
    grid.spacing * std::f64::consts::SQRT_2 / 2.0 + eps_reach <= eps
}
