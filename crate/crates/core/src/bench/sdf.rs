//! Analytic signed distance functions, surface sampling and IoU.

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{mat3_mul_vec, mat3_t_mul_vec, Rotation, UnitQuaternion};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum AnalyticSdf {
    Sphere { center: [f64; 3], radius: f64 },
    Box { center: [f64; 3], half: [f64; 3] },
    /// Box whose local frame is rotated by `rotation` into world space.
    RotatedBox { center: [f64; 3], half: [f64; 3], rotation: UnitQuaternion },
    Union { parts: Vec<AnalyticSdf> },
}

fn norm3(v: [f64; 3]) -> f64 {
    (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt()
}

fn box_sdf(p: [f64; 3], half: [f64; 3]) -> f64 {
    let q = [p[0].abs() - half[0], p[1].abs() - half[1], p[2].abs() - half[2]];
    let outside = norm3([q[0].max(0.0), q[1].max(0.0), q[2].max(0.0)]);
    outside + q[0].max(q[1]).max(q[2]).min(0.0)
}

impl AnalyticSdf {
    pub fn eval(&self, p: [f64; 3]) -> f64 {
        match self {
            Self::Sphere { center, radius } => norm3([p[0] - center[0], p[1] - center[1], p[2] - center[2]]) - radius,
            Self::Box { center, half } => box_sdf([p[0] - center[0], p[1] - center[1], p[2] - center[2]], *half),
            Self::RotatedBox { center, half, rotation } => {
                let local = mat3_t_mul_vec(&rotation.matrix3(), &[p[0] - center[0], p[1] - center[1], p[2] - center[2]]);
                box_sdf(local, *half)
            }
            Self::Union { parts } => parts.iter().map(|s| s.eval(p)).fold(f64::INFINITY, f64::min),
        }
    }

    /// Radius of a centered ball containing the shape.
    pub fn extent(&self) -> f64 {
        match self {
            Self::Sphere { center, radius } => norm3(*center) + radius,
            Self::Box { center, half } | Self::RotatedBox { center, half, .. } => norm3(*center) + norm3(*half),
            Self::Union { parts } => parts.iter().map(Self::extent).fold(0.0, f64::max),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let ok = match self {
            Self::Sphere { radius, .. } => *radius > 0.0,
            Self::Box { half, .. } | Self::RotatedBox { half, .. } => half.iter().all(|h| *h > 0.0),
            Self::Union { parts } => !parts.is_empty() && parts.iter().all(|s| s.validate().is_ok()),
        };
        if !ok {
            return Err(Error::InvalidArgument("shape sizes must be positive and unions non-empty".into()));
        }
        if !self.extent().is_finite() {
            return Err(Error::NonFinite("shape parameters".into()));
        }
        Ok(())
    }

    /// True when every point of the shape lies in `[−1, 1]³`.
    pub fn within_unit_box(&self) -> bool {
        match self {
            Self::Sphere { center, radius } => center.iter().all(|c| c.abs() + radius <= 1.0),
            Self::Box { center, half } => center.iter().zip(half).all(|(c, h)| c.abs() + h <= 1.0),
            Self::RotatedBox { center, half, rotation } => {
                let m = rotation.matrix3();
                (0..3).all(|a| {
                    let reach: f64 = (0..3).map(|b| m[a][b].abs() * half[b]).sum();
                    center[a].abs() + reach <= 1.0
                })
            }
            Self::Union { parts } => parts.iter().all(Self::within_unit_box),
        }
    }

    /// Central-difference gradient.
    pub fn gradient(&self, p: [f64; 3]) -> [f64; 3] {
        let h = 1e-6;
        let mut g = [0.0; 3];
        for (a, ga) in g.iter_mut().enumerate() {
            let (mut hi, mut lo) = (p, p);
            hi[a] += h;
            lo[a] -= h;
            *ga = (self.eval(hi) - self.eval(lo)) / (2.0 * h);
        }
        g
    }

    /// `count` points: a `uniform_fraction` share uniform in `[−1, 1]³`, the
    /// rest projected onto the surface and perturbed by `N(0, σ²)` per axis.
    pub fn sample_points<R: Rng>(&self, count: usize, uniform_fraction: f64, sigma: f64, rng: &mut R) -> Result<Vec<[f64; 3]>> {
        if !(0.0..=1.0).contains(&uniform_fraction) || !(sigma >= 0.0) {
            return Err(Error::InvalidArgument("uniform_fraction must be in [0, 1] and sigma >= 0".into()));
        }
        let noise = Normal::new(0.0, sigma).map_err(|e| Error::InvalidArgument(e.to_string()))?;
        let uniform = (count as f64 * uniform_fraction).round() as usize;
        let mut out = Vec::with_capacity(count);
        let cube = |rng: &mut R| [rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)];
        for _ in 0..uniform {
            out.push(cube(rng));
        }
        while out.len() < count {
            let mut p = cube(rng);
            for _ in 0..4 {
                let d = self.eval(p);
                let g = self.gradient(p);
                let gn = norm3(g);
                if gn < 1e-9 {
                    break;
                }
                for a in 0..3 {
                    p[a] -= d * g[a] / gn;
                }
            }
            let q = [p[0] + noise.sample(rng), p[1] + noise.sample(rng), p[2] + noise.sample(rng)];
            if q.iter().all(|v| v.abs() <= 1.0) {
                out.push(q);
            }
        }
        Ok(out)
    }

    pub fn rotated_by(&self, rotation: &UnitQuaternion) -> Self {
        match self {
            Self::Sphere { center, radius } => Self::Sphere { center: mat3_mul_vec(&rotation.matrix3(), center), radius: *radius },
            Self::Box { center, half } => Self::RotatedBox {
                center: mat3_mul_vec(&rotation.matrix3(), center),
                half: *half,
                rotation: *rotation,
            },
            Self::RotatedBox { center, half, rotation: r } => Self::RotatedBox {
                center: mat3_mul_vec(&rotation.matrix3(), center),
                half: *half,
                rotation: rotation.compose(r).canonical(),
            },
            Self::Union { parts } => Self::Union { parts: parts.iter().map(|s| s.rotated_by(rotation)).collect() },
        }
    }
}

/// Cell centers of a `res³` grid over `[−1, 1]³`, x slowest.
pub fn eval_grid(res: usize) -> Vec<[f64; 3]> {
    let c = |i: usize| -1.0 + (2 * i + 1) as f64 / res as f64;
    let mut pts = Vec::with_capacity(res * res * res);
    for i in 0..res {
        for j in 0..res {
            for k in 0..res {
                pts.push([c(i), c(j), c(k)]);
            }
        }
    }
    pts
}

/// `|pred ≤ 0 ∧ gt ≤ 0| / |pred ≤ 0 ∨ gt ≤ 0|`, 1 when both interiors are empty.
pub fn iou(pred: &[f64], gt: &[f64]) -> Result<f64> {
    if pred.len() != gt.len() {
        return Err(Error::Shape(format!("iou of {} vs {} samples", pred.len(), gt.len())));
    }
    let (mut inter, mut union) = (0usize, 0usize);
    for (p, g) in pred.iter().zip(gt) {
        let (a, b) = (*p <= 0.0, *g <= 0.0);
        inter += usize::from(a && b);
        union += usize::from(a || b);
    }
    Ok(if union == 0 { 1.0 } else { inter as f64 / union as f64 })
}
