//! Rotation manifolds for learned projections.
//!
//! 2D rotations live on the unit circle (stored as a unit complex number) and
//! 3D rotations on the unit quaternions. Both are updated by right
//! composition with the exponential of a Lie-algebra vector,
//! `τ ← τ · Exp(ξ)`, so gradients are always expressed in the body frame:
//! the tangent gradient `g` satisfies `⟨g, ξ⟩ = d/dt f(τ·Exp(tξ))|₀`.

use std::fmt::Debug;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Common interface of the two rotation parameterizations.
pub trait Rotation: Copy + Debug + PartialEq + Send + Sync + 'static {
    /// Dimension of the Lie algebra (1 for SO(2), 3 for SO(3)).
    const TANGENT_DIM: usize;
    /// Number of stored scalars (2 or 4).
    const PARAM_DIM: usize;
    /// Dimension of the points the rotation acts on.
    const POINT_DIM: usize;

    fn identity() -> Self;

    /// Group exponential at the identity.
    fn exp(tangent: &[f64]) -> Result<Self>;

    /// Group product `self · other`.
    fn compose(&self, other: &Self) -> Self;

    fn inverse(&self) -> Self;

    /// Stored parameters, `(re, im)` or `(w, x, y, z)`.
    fn params(&self) -> Vec<f64>;

    fn from_params(params: &[f64]) -> Result<Self>;

    /// Rotation matrix embedded in 3×3 (2D rotations act on the xy-plane).
    fn matrix3(&self) -> [[f64; 3]; 3];

    /// Projects a gradient taken with respect to the stored parameters onto
    /// the Lie algebra at `self`.
    fn euclidean_to_tangent(&self, euclidean_grad: &[f64]) -> Vec<f64>;

    /// Tangent gradient of a loss given the point `p` (before rotation) and
    /// the gradient of the loss with respect to the rotated point.
    ///
    /// Only the first `TANGENT_DIM` entries of the output are meaningful.
    fn tangent_from_point_grad(&self, p: &[f64; 3], grad_rotated: &[f64; 3]) -> [f64; 3];

    /// Returns a representative in canonical form (identity for S¹,
    /// non-negative scalar part for S³).
    fn canonical(&self) -> Self {
        *self
    }

    fn norm(&self) -> f64 {
        self.params().iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    /// `self · Exp(ξ)`.
    fn exp_map(&self, tangent: &[f64]) -> Result<Self> {
        Ok(self.compose(&Self::exp(tangent)?).canonical())
    }

    /// Applies the rotation to a point of dimension `POINT_DIM`.
    fn apply(&self, p: &[f64]) -> Vec<f64> {
        let m = self.matrix3();
        let mut q = [0.0; 3];
        q[..p.len().min(3)].copy_from_slice(&p[..p.len().min(3)]);
        let r = mat3_mul_vec(&m, &q);
        r[..p.len()].to_vec()
    }
}

/// Unit complex number `re + i·im` representing a planar rotation.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct UnitRotation2 {
    pub re: f64,
    pub im: f64,
}

impl UnitRotation2 {
    pub fn from_angle(theta: f64) -> Self {
        let (s, c) = theta.sin_cos();
        Self { re: c, im: s }
    }

    pub fn angle(&self) -> f64 {
        self.im.atan2(self.re)
    }

    fn normalized(re: f64, im: f64) -> Self {
        let n = (re * re + im * im).sqrt();
        Self {
            re: re / n,
            im: im / n,
        }
    }

    pub fn apply2(&self, p: [f64; 2]) -> [f64; 2] {
        [
            self.re * p[0] - self.im * p[1],
            self.im * p[0] + self.re * p[1],
        ]
    }
}

impl Rotation for UnitRotation2 {
    const TANGENT_DIM: usize = 1;
    const PARAM_DIM: usize = 2;
    const POINT_DIM: usize = 2;

    fn identity() -> Self {
        Self { re: 1.0, im: 0.0 }
    }

    fn exp(tangent: &[f64]) -> Result<Self> {
        check_tangent(tangent, 1)?;
        Ok(Self::from_angle(tangent[0]))
    }

    fn compose(&self, other: &Self) -> Self {
        Self::normalized(
            self.re * other.re - self.im * other.im,
            self.re * other.im + self.im * other.re,
        )
    }

    fn inverse(&self) -> Self {
        Self {
            re: self.re,
            im: -self.im,
        }
    }

    fn params(&self) -> Vec<f64> {
        vec![self.re, self.im]
    }

    fn from_params(params: &[f64]) -> Result<Self> {
        if params.len() != 2 {
            return Err(Error::Shape(format!(
                "S¹ rotation needs 2 parameters, got {}",
                params.len()
            )));
        }
        unit_from_params(params).map(|p| Self { re: p[0], im: p[1] })
    }

    fn matrix3(&self) -> [[f64; 3]; 3] {
        [
            [self.re, -self.im, 0.0],
            [self.im, self.re, 0.0],
            [0.0, 0.0, 1.0],
        ]
    }

    fn euclidean_to_tangent(&self, g: &[f64]) -> Vec<f64> {
        // d/dt (τ · e^{it}) at 0 is τ·i = (−im, re)
        vec![-self.im * g[0] + self.re * g[1]]
    }

    fn tangent_from_point_grad(&self, p: &[f64; 3], g: &[f64; 3]) -> [f64; 3] {
        // d/dt R(θ+t) p = R J p with J the quarter turn
        let jp = [-p[1], p[0]];
        let rjp = self.apply2(jp);
        [g[0] * rjp[0] + g[1] * rjp[1], 0.0, 0.0]
    }
}

/// Unit quaternion `w + xi + yj + zk`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct UnitQuaternion {
    pub w: f64,
    pub x: f64,
    pub y: f64,
    pub z: f64,
}

impl UnitQuaternion {
    fn normalized(w: f64, x: f64, y: f64, z: f64) -> Self {
        let n = (w * w + x * x + y * y + z * z).sqrt();
        Self {
            w: w / n,
            x: x / n,
            y: y / n,
            z: z / n,
        }
    }

    pub fn from_axis_angle(axis: [f64; 3], angle: f64) -> Self {
        let n = (axis[0] * axis[0] + axis[1] * axis[1] + axis[2] * axis[2]).sqrt();
        let s = (angle / 2.0).sin() / n;
        Self::normalized((angle / 2.0).cos(), axis[0] * s, axis[1] * s, axis[2] * s)
    }

    /// Uniformly distributed rotation from three uniforms in `[0, 1)`.
    pub fn from_uniforms(u1: f64, u2: f64, u3: f64) -> Self {
        use std::f64::consts::TAU;
        let a = (1.0 - u1).sqrt();
        let b = u1.sqrt();
        Self::normalized(
            b * (TAU * u3).cos(),
            a * (TAU * u2).sin(),
            a * (TAU * u2).cos(),
            b * (TAU * u3).sin(),
        )
        .canonical()
    }

    fn mul(&self, o: &Self) -> [f64; 4] {
        [
            self.w * o.w - self.x * o.x - self.y * o.y - self.z * o.z,
            self.w * o.x + self.x * o.w + self.y * o.z - self.z * o.y,
            self.w * o.y - self.x * o.z + self.y * o.w + self.z * o.x,
            self.w * o.z + self.x * o.y - self.y * o.x + self.z * o.w,
        ]
    }

    /// Rotation angle in `[0, π]`.
    pub fn angle(&self) -> f64 {
        let v = (self.x * self.x + self.y * self.y + self.z * self.z).sqrt();
        2.0 * v.atan2(self.w.abs())
    }
}

impl Rotation for UnitQuaternion {
    const TANGENT_DIM: usize = 3;
    const PARAM_DIM: usize = 4;
    const POINT_DIM: usize = 3;

    fn identity() -> Self {
        Self {
            w: 1.0,
            x: 0.0,
            y: 0.0,
            z: 0.0,
        }
    }

    fn exp(tangent: &[f64]) -> Result<Self> {
        check_tangent(tangent, 3)?;
        let theta2 = tangent.iter().map(|v| v * v).sum::<f64>();
        let theta = theta2.sqrt();
        // sin(θ/2)/θ, Taylor-expanded near zero
        let (w, k) = if theta < 1e-8 {
            (1.0 - theta2 / 8.0, 0.5 - theta2 / 48.0)
        } else {
            ((theta / 2.0).cos(), (theta / 2.0).sin() / theta)
        };
        Ok(Self::normalized(
            w,
            k * tangent[0],
            k * tangent[1],
            k * tangent[2],
        ))
    }

    fn compose(&self, other: &Self) -> Self {
        let q = self.mul(other);
        Self::normalized(q[0], q[1], q[2], q[3])
    }

    fn inverse(&self) -> Self {
        Self {
            w: self.w,
            x: -self.x,
            y: -self.y,
            z: -self.z,
        }
    }

    fn params(&self) -> Vec<f64> {
        vec![self.w, self.x, self.y, self.z]
    }

    fn from_params(params: &[f64]) -> Result<Self> {
        if params.len() != 4 {
            return Err(Error::Shape(format!(
                "S³ rotation needs 4 parameters, got {}",
                params.len()
            )));
        }
        unit_from_params(params).map(|p| Self {
            w: p[0],
            x: p[1],
            y: p[2],
            z: p[3],
        })
    }

    fn matrix3(&self) -> [[f64; 3]; 3] {
        let Self { w, x, y, z } = *self;
        [
            [
                1.0 - 2.0 * (y * y + z * z),
                2.0 * (x * y - w * z),
                2.0 * (x * z + w * y),
            ],
            [
                2.0 * (x * y + w * z),
                1.0 - 2.0 * (x * x + z * z),
                2.0 * (y * z - w * x),
            ],
            [
                2.0 * (x * z - w * y),
                2.0 * (y * z + w * x),
                1.0 - 2.0 * (x * x + y * y),
            ],
        ]
    }

    fn euclidean_to_tangent(&self, g: &[f64]) -> Vec<f64> {
        // d/dt q ⊗ Exp(t e_i) at 0 equals q ⊗ (0, e_i / 2)
        (0..3)
            .map(|i| {
                let mut e = [0.0; 3];
                e[i] = 0.5;
                let d = self.mul(&Self {
                    w: 0.0,
                    x: e[0],
                    y: e[1],
                    z: e[2],
                });
                d.iter().zip(g).map(|(a, b)| a * b).sum()
            })
            .collect()
    }

    fn tangent_from_point_grad(&self, p: &[f64; 3], g: &[f64; 3]) -> [f64; 3] {
        // R Exp(ξ) p ≈ R (p + ξ × p), so ∂/∂ξ = p × (Rᵀ g)
        let m = self.matrix3();
        let rtg = [
            m[0][0] * g[0] + m[1][0] * g[1] + m[2][0] * g[2],
            m[0][1] * g[0] + m[1][1] * g[1] + m[2][1] * g[2],
            m[0][2] * g[0] + m[1][2] * g[1] + m[2][2] * g[2],
        ];
        cross(p, &rtg)
    }

    fn canonical(&self) -> Self {
        if self.w < 0.0 {
            Self {
                w: -self.w,
                x: -self.x,
                y: -self.y,
                z: -self.z,
            }
        } else {
            *self
        }
    }
}

fn check_tangent(tangent: &[f64], dim: usize) -> Result<()> {
    if tangent.len() != dim {
        return Err(Error::Shape(format!(
            "tangent vector has {} entries, expected {dim}",
            tangent.len()
        )));
    }
    if tangent.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite(format!("tangent vector {tangent:?}")));
    }
    Ok(())
}

fn unit_from_params(params: &[f64]) -> Result<Vec<f64>> {
    if params.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite(format!("rotation parameters {params:?}")));
    }
    let n = params.iter().map(|v| v * v).sum::<f64>().sqrt();
    if n < 1e-12 {
        return Err(Error::InvalidArgument("zero rotation parameters".into()));
    }
    // parameters that are already unit up to rounding are kept bit-exact
    if (n - 1.0).abs() <= 1e-12 {
        return Ok(params.to_vec());
    }
    Ok(params.iter().map(|v| v / n).collect())
}

pub(crate) fn cross(a: &[f64; 3], b: &[f64; 3]) -> [f64; 3] {
    [
        a[1] * b[2] - a[2] * b[1],
        a[2] * b[0] - a[0] * b[2],
        a[0] * b[1] - a[1] * b[0],
    ]
}

#[inline]
pub(crate) fn mat3_mul_vec(m: &[[f64; 3]; 3], v: &[f64; 3]) -> [f64; 3] {
    [
        m[0][0] * v[0] + m[0][1] * v[1] + m[0][2] * v[2],
        m[1][0] * v[0] + m[1][1] * v[1] + m[1][2] * v[2],
        m[2][0] * v[0] + m[2][1] * v[1] + m[2][2] * v[2],
    ]
}

#[inline]
pub(crate) fn mat3_t_mul_vec(m: &[[f64; 3]; 3], v: &[f64; 3]) -> [f64; 3] {
    [
        m[0][0] * v[0] + m[1][0] * v[1] + m[2][0] * v[2],
        m[0][1] * v[0] + m[1][1] * v[1] + m[2][1] * v[2],
        m[0][2] * v[0] + m[1][2] * v[1] + m[2][2] * v[2],
    ]
}

/// Hyperparameters shared by the Euclidean and Riemannian ADAM updates.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// Per-step learning rate: `base · final_ratio^(k / steps)` (exponential
/// decay that reaches `base · final_ratio` at step `steps`).
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LrSchedule {
    pub base: f64,
    pub final_ratio: f64,
    pub steps: usize,
}

impl LrSchedule {
    pub fn constant(base: f64) -> Self {
        Self {
            base,
            final_ratio: 1.0,
            steps: 1,
        }
    }

    pub fn at(&self, step: usize) -> f64 {
        if self.final_ratio == 1.0 || self.steps == 0 {
            return self.base;
        }
        let t = (step as f64 / self.steps as f64).min(1.0);
        self.base * self.final_ratio.powf(t)
    }
}

/// First/second moment buffers and step counter of an ADAM optimizer.
#[derive(Clone, Debug, PartialEq)]
pub struct AdamState {
    pub m: Vec<f64>,
    pub v: Vec<f64>,
    pub step: usize,
    pub config: AdamConfig,
}

impl AdamState {
    pub fn new(dim: usize, config: AdamConfig) -> Self {
        Self {
            m: vec![0.0; dim],
            v: vec![0.0; dim],
            step: 0,
            config,
        }
    }

    /// Advances the moments with `grad` and writes the (un-scaled) descent
    /// direction `−m̂ / (√v̂ + ε)` into `direction`.
    fn advance(&mut self, grad: &[f64], direction: &mut [f64]) {
        self.step += 1;
        let AdamConfig { beta1, beta2, eps } = self.config;
        let c1 = 1.0 - beta1.powi(self.step as i32);
        let c2 = 1.0 - beta2.powi(self.step as i32);
        for (((m, v), &g), d) in self
            .m
            .iter_mut()
            .zip(self.v.iter_mut())
            .zip(grad)
            .zip(direction.iter_mut())
        {
            *m = beta1 * *m + (1.0 - beta1) * g;
            *v = beta2 * *v + (1.0 - beta2) * g * g;
            *d = -(*m / c1) / ((*v / c2).sqrt() + eps);
        }
    }

    /// In-place Euclidean ADAM update of `params`.
    pub fn step_euclidean(&mut self, params: &mut [f64], grad: &[f64], lr: f64) -> Result<()> {
        if params.len() != self.m.len() || grad.len() != self.m.len() {
            return Err(Error::Shape(format!(
                "adam state has {} entries, params {}, grads {}",
                self.m.len(),
                params.len(),
                grad.len()
            )));
        }
        let m_hat_scale = 1.0 / (1.0 - self.config.beta1.powi(self.step as i32 + 1));
        let v_hat_scale = 1.0 / (1.0 - self.config.beta2.powi(self.step as i32 + 1));
        self.step += 1;
        let AdamConfig { beta1, beta2, eps } = self.config;
        for (((p, m), v), &g) in params
            .iter_mut()
            .zip(self.m.iter_mut())
            .zip(self.v.iter_mut())
            .zip(grad)
        {
            *m = beta1 * *m + (1.0 - beta1) * g;
            *v = beta2 * *v + (1.0 - beta2) * g * g;
            *p -= lr * (*m * m_hat_scale) / ((*v * v_hat_scale).sqrt() + eps);
        }
        Ok(())
    }
}

/// ADAM on a product of rotation manifolds: moments live in the Lie algebra
/// and updates are applied with the exponential map.
#[derive(Clone, Debug, PartialEq)]
pub struct RiemannianAdamState {
    inner: AdamState,
    tangent_dim: usize,
}

impl RiemannianAdamState {
    pub fn new<R: Rotation>(count: usize, config: AdamConfig) -> Self {
        Self {
            inner: AdamState::new(count * R::TANGENT_DIM, config),
            tangent_dim: R::TANGENT_DIM,
        }
    }

    pub fn step_count(&self) -> usize {
        self.inner.step
    }

    pub fn moments(&self) -> (&[f64], &[f64]) {
        (&self.inner.m, &self.inner.v)
    }

    /// One update `τ_t ← τ_t · Exp(α · ξ_t)` with ADAM-scaled directions `ξ_t`.
    ///
    /// `grads` is the flat concatenation of per-rotation tangent gradients.
    pub fn step<R: Rotation>(&mut self, params: &mut [R], grads: &[f64], lr: f64) -> Result<()> {
        if R::TANGENT_DIM != self.tangent_dim
            || params.len() * R::TANGENT_DIM != self.inner.m.len()
            || grads.len() != self.inner.m.len()
        {
            return Err(Error::Shape(format!(
                "riemannian adam: state dim {}, {} rotations of tangent dim {}, {} gradients",
                self.inner.m.len(),
                params.len(),
                R::TANGENT_DIM,
                grads.len()
            )));
        }
        if grads.iter().any(|g| !g.is_finite()) {
            return Err(Error::NonFinite("rotation gradient".into()));
        }
        let mut dir = vec![0.0; grads.len()];
        self.inner.advance(grads, &mut dir);
        for (tau, d) in params.iter_mut().zip(dir.chunks(R::TANGENT_DIM)) {
            let xi: Vec<f64> = d.iter().map(|v| lr * v).collect();
            *tau = tau.exp_map(&xi)?;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use std::f64::consts::PI;

    fn rodrigues(axis_angle: [f64; 3]) -> [[f64; 3]; 3] {
        let th = (axis_angle.iter().map(|v| v * v).sum::<f64>()).sqrt();
        if th == 0.0 {
            return [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]];
        }
        let k = [axis_angle[0] / th, axis_angle[1] / th, axis_angle[2] / th];
        let kx = [[0.0, -k[2], k[1]], [k[2], 0.0, -k[0]], [-k[1], k[0], 0.0]];
        let mut out = [[0.0; 3]; 3];
        for i in 0..3 {
            for j in 0..3 {
                let mut kk = 0.0;
                for l in 0..3 {
                    kk += kx[i][l] * kx[l][j];
                }
                out[i][j] = (i == j) as u8 as f64 + th.sin() * kx[i][j] + (1.0 - th.cos()) * kk;
            }
        }
        out
    }

    #[test]
    fn exp_at_identity_on_circle() {
        let r = UnitRotation2::identity().exp_map(&[PI / 2.0]).unwrap();
        assert!(r.re.abs() < 1e-15 && (r.im - 1.0).abs() < 1e-15);
        let base = UnitRotation2::from_angle(0.7);
        assert_eq!(base.exp_map(&[0.0]).unwrap(), base);
    }

    #[test]
    fn half_turn_about_x() {
        let q = UnitQuaternion::identity().exp_map(&[PI, 0.0, 0.0]).unwrap();
        assert!(q.w.abs() < 1e-15 && (q.x - 1.0).abs() < 1e-15);
        let p = q.apply(&[0.0, 1.0, 0.0]);
        assert!((p[1] + 1.0).abs() < 1e-12 && p[0].abs() < 1e-12 && p[2].abs() < 1e-12);
    }

    #[test]
    fn exp_matches_rodrigues() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..200 {
            let xi = [
                rng.gen_range(-3.0..3.0),
                rng.gen_range(-3.0..3.0),
                rng.gen_range(-3.0..3.0),
            ];
            let q = UnitQuaternion::exp(&xi).unwrap();
            let a = q.matrix3();
            let b = rodrigues(xi);
            for i in 0..3 {
                for j in 0..3 {
                    assert!((a[i][j] - b[i][j]).abs() < 1e-12);
                }
            }
        }
        // tiny steps take the Taylor branch
        let q = UnitQuaternion::exp(&[1e-10, -2e-10, 0.0]).unwrap();
        assert!((q.x - 5e-11).abs() < 1e-20);
    }

    #[test]
    fn non_finite_tangent_rejected() {
        assert!(matches!(
            UnitRotation2::identity().exp_map(&[f64::NAN]),
            Err(Error::NonFinite(_))
        ));
        assert!(UnitQuaternion::identity()
            .exp_map(&[0.0, f64::INFINITY, 0.0])
            .is_err());
    }

    #[test]
    fn apply_matches_matrix_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for _ in 0..100 {
            let th: f64 = rng.gen_range(-PI..PI);
            let p = [rng.gen_range(-2.0..2.0), rng.gen_range(-2.0..2.0)];
            let r = UnitRotation2::from_angle(th).apply(&p);
            let oracle = [
                th.cos() * p[0] - th.sin() * p[1],
                th.sin() * p[0] + th.cos() * p[1],
            ];
            assert!((r[0] - oracle[0]).abs() < 1e-12 && (r[1] - oracle[1]).abs() < 1e-12);

            let xi = [rng.gen_range(-2.0..2.0), rng.gen_range(-2.0..2.0), 0.3];
            let p3 = [rng.gen::<f64>(), rng.gen::<f64>(), rng.gen::<f64>()];
            let q = UnitQuaternion::exp(&xi).unwrap();
            let r3 = q.apply(&p3);
            let m = rodrigues(xi);
            let o3 = mat3_mul_vec(&m, &p3);
            for k in 0..3 {
                assert!((r3[k] - o3[k]).abs() < 1e-12);
            }
        }
        assert_eq!(UnitRotation2::from_angle(PI / 2.0).apply(&[1.0, 0.0])[1], 1.0);
    }

    #[test]
    fn isometry_over_many_samples() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..100_000 {
            let q = UnitQuaternion::from_uniforms(rng.gen(), rng.gen(), rng.gen());
            let p = [rng.gen_range(-5.0..5.0), rng.gen_range(-5.0..5.0), rng.gen_range(-5.0..5.0)];
            let r = q.apply(&p);
            let n0 = p.iter().map(|v| v * v).sum::<f64>().sqrt();
            let n1 = r.iter().map(|v| v * v).sum::<f64>().sqrt();
            assert!((n0 - n1).abs() < 1e-9);
        }
    }

    #[test]
    fn circle_tangent_at_identity() {
        let t = UnitRotation2::identity().euclidean_to_tangent(&[0.0, 1.0]);
        assert_eq!(t, vec![1.0]);
        // ambient gradient along the radius is invisible to the manifold
        let tau = UnitRotation2::from_angle(1.1);
        let t = tau.euclidean_to_tangent(&[tau.re, tau.im]);
        assert!(t[0].abs() < 1e-15);
        let q = UnitQuaternion::from_axis_angle([1.0, 2.0, 3.0], 0.4);
        let t = q.euclidean_to_tangent(&q.params());
        assert!(t.iter().all(|v| v.abs() < 1e-15));
    }

    /// Loss f(τ) = ⟨a, R(τ) b⟩ + ⟨c, params(τ)⟩²; checks both gradient routes
    /// against central differences along τ·Exp(tξ).
    #[test]
    fn tangent_gradients_match_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let h = 1e-5;
        for _ in 0..100 {
            let a = [rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)];
            let b = [rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)];
            let c = [rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)];
            let q = UnitQuaternion::from_uniforms(rng.gen(), rng.gen(), rng.gen());
            let f = |q: &UnitQuaternion| {
                let r = mat3_mul_vec(&q.matrix3(), &b);
                let lin: f64 = (0..3).map(|i| a[i] * r[i]).sum();
                let s: f64 = q.params().iter().zip(&c).map(|(x, y)| x * y).sum();
                lin + s * s
            };
            // ambient gradient of the parameter term
            let s: f64 = q.params().iter().zip(&c).map(|(x, y)| x * y).sum();
            let ambient: Vec<f64> = c.iter().map(|v| 2.0 * s * v).collect();
            let t_param = q.euclidean_to_tangent(&ambient);
            let t_point = q.tangent_from_point_grad(&b, &a);
            let xi = [rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)];
            let fp = f(&q.compose(&UnitQuaternion::exp(&xi.map(|v| v * h)).unwrap()));
            let fm = f(&q.compose(&UnitQuaternion::exp(&xi.map(|v| -v * h)).unwrap()));
            let fd = (fp - fm) / (2.0 * h);
            let an: f64 = (0..3).map(|i| (t_param[i] + t_point[i]) * xi[i]).sum();
            assert!((fd - an).abs() <= 1e-4 * an.abs().max(1e-3), "fd {fd} an {an}");

            let tau = UnitRotation2::from_angle(rng.gen_range(-PI..PI));
            let f2 = |t: &UnitRotation2| {
                let r = t.apply2([b[0], b[1]]);
                a[0] * r[0] + a[1] * r[1] + (c[0] * t.re + c[1] * t.im).powi(2)
            };
            let s2 = c[0] * tau.re + c[1] * tau.im;
            let g = tau.euclidean_to_tangent(&[2.0 * s2 * c[0], 2.0 * s2 * c[1]])[0]
                + tau.tangent_from_point_grad(&b, &a)[0];
            let fd2 = (f2(&tau.exp_map(&[h]).unwrap()) - f2(&tau.exp_map(&[-h]).unwrap())) / (2.0 * h);
            assert!((fd2 - g).abs() <= 1e-4 * g.abs().max(1e-3));
        }
    }

    #[test]
    fn zero_gradient_leaves_rotations_unchanged() {
        let mut params = vec![UnitQuaternion::from_axis_angle([0.0, 1.0, 1.0], 0.3); 2];
        let before = params.clone();
        let mut st = RiemannianAdamState::new::<UnitQuaternion>(2, AdamConfig::default());
        st.step(&mut params, &[0.0; 6], 0.1).unwrap();
        for (a, b) in params.iter().zip(&before) {
            for (x, y) in a.params().iter().zip(b.params()) {
                assert!((x - y).abs() < 1e-15);
            }
        }
        assert_eq!(st.step_count(), 1);
    }

    #[test]
    fn first_step_matches_scalar_adam() {
        // scalar ADAM reference
        let cfg = AdamConfig::default();
        let g = -0.37;
        let lr = 0.05;
        let m = (1.0 - cfg.beta1) * g;
        let v = (1.0 - cfg.beta2) * g * g;
        let m_hat = m / (1.0 - cfg.beta1);
        let v_hat = v / (1.0 - cfg.beta2);
        let expected = -lr * m_hat / (v_hat.sqrt() + cfg.eps);

        let mut params = vec![UnitRotation2::identity()];
        let mut st = RiemannianAdamState::new::<UnitRotation2>(1, cfg);
        st.step(&mut params, &[g], lr).unwrap();
        assert!((params[0].angle() - expected).abs() < 1e-12);
        assert!(expected > 0.0);
    }

    #[test]
    fn dimension_mismatch_is_structural_error() {
        let mut params = vec![UnitRotation2::identity(); 2];
        let mut st = RiemannianAdamState::new::<UnitRotation2>(2, AdamConfig::default());
        assert!(matches!(
            st.step(&mut params, &[1.0], 0.1),
            Err(Error::Shape(_))
        ));
    }

    #[test]
    fn long_runs_stay_on_manifold() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut qs = vec![UnitQuaternion::identity(); 3];
        let mut cs = vec![UnitRotation2::identity(); 3];
        let mut sq = RiemannianAdamState::new::<UnitQuaternion>(3, AdamConfig::default());
        let mut sc = RiemannianAdamState::new::<UnitRotation2>(3, AdamConfig::default());
        for _ in 0..10_000 {
            let g: Vec<f64> = (0..9).map(|_| rng.gen_range(-10.0..10.0)).collect();
            sq.step(&mut qs, &g, 0.3).unwrap();
            sc.step(&mut cs, &g[..3], 0.3).unwrap();
        }
        for q in &qs {
            assert!((q.norm() - 1.0).abs() < 1e-9);
            assert!(q.w >= 0.0);
        }
        for c in &cs {
            assert!((c.norm() - 1.0).abs() < 1e-9);
        }
    }

    #[test]
    fn euclidean_adam_first_step() {
        let mut st = AdamState::new(2, AdamConfig::default());
        let mut p = vec![1.0, 1.0];
        st.step_euclidean(&mut p, &[2.0, -3.0], 0.1).unwrap();
        assert!((p[0] - 0.9).abs() < 1e-6 && (p[1] - 1.1).abs() < 1e-6);
    }

    #[test]
    fn schedule_decays_to_final_ratio() {
        let s = LrSchedule {
            base: 1e-2,
            final_ratio: 0.1,
            steps: 100,
        };
        assert!((s.at(0) - 1e-2).abs() < 1e-15);
        assert!((s.at(100) - 1e-3).abs() < 1e-15);
        assert!((s.at(500) - 1e-3).abs() < 1e-15);
        assert_eq!(LrSchedule::constant(0.5).at(77), 0.5);
    }
}
