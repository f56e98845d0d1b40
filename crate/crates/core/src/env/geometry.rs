use core::f64::consts::PI;

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Pose {
    pub x: f64,
    pub y: f64,
    /// Radians, counter-clockwise from +x.
    pub heading: f64,
}

/// Axis-aligned rectangle `[x0, x1] × [y0, y1]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Rect {
    pub x0: f64,
    pub y0: f64,
    pub x1: f64,
    pub y1: f64,
}

impl Rect {
    pub fn new(x0: f64, y0: f64, x1: f64, y1: f64) -> Self {
        Self { x0, y0, x1, y1 }
    }

    pub fn is_valid(&self) -> bool {
        [self.x0, self.y0, self.x1, self.y1]
            .iter()
            .all(|v| v.is_finite())
            && self.x0 < self.x1
            && self.y0 < self.y1
    }

    pub fn contains(&self, x: f64, y: f64) -> bool {
        x >= self.x0 && x <= self.x1 && y >= self.y0 && y <= self.y1
    }

    pub fn center(&self) -> (f64, f64) {
        ((self.x0 + self.x1) / 2.0, (self.y0 + self.y1) / 2.0)
    }

    /// Whether a disc of `radius` centred at `(x, y)` overlaps the rectangle.
    pub fn overlaps_circle(&self, x: f64, y: f64, radius: f64) -> bool {
        let dx = x - x.clamp(self.x0, self.x1);
        let dy = y - y.clamp(self.y0, self.y1);
        dx * dx + dy * dy < radius * radius
    }

    /// Distance along the unit ray `(dx, dy)` from `(x, y)` to the rectangle
    /// boundary, if the ray hits it. Rays starting inside report 0.
    pub fn ray_hit(&self, x: f64, y: f64, dx: f64, dy: f64) -> Option<f64> {
        let mut t_min = f64::NEG_INFINITY;
        let mut t_max = f64::INFINITY;
        for (origin, dir, lo, hi) in [(x, dx, self.x0, self.x1), (y, dy, self.y0, self.y1)] {
            if dir.abs() < 1e-12 {
                if origin < lo || origin > hi {
                    return None;
                }
            } else {
                let a = (lo - origin) / dir;
                let b = (hi - origin) / dir;
                let (near, far) = if a < b { (a, b) } else { (b, a) };
                t_min = t_min.max(near);
                t_max = t_max.min(far);
            }
        }
        if t_max < t_min || t_max < 0.0 {
            None
        } else {
            Some(t_min.max(0.0))
        }
    }
}

/// Wraps an angle into `(-π, π]`.
pub fn wrap_angle(a: f64) -> f64 {
    let mut r = libm::fmod(a + PI, 2.0 * PI);
    if r <= 0.0 {
        r += 2.0 * PI;
    }
    r - PI
}
