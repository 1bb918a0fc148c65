//! Dense 1D/2D feature grids and their interpolation kernels.
//!
//! Node `i` of an `n`-node grid sits at normalized coordinate
//! `−1 + 2i/(n−1)`. Under [`BoundaryMode::Clamp`] queries outside `[−1, 1]`
//! are clipped to the boundary (and carry no coordinate gradient). Under
//! [`BoundaryMode::Wrap`] the grid is periodic with period 2 and node `i`
//! sits at `−1 + 2i/n`.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BoundaryMode {
    #[default]
    Clamp,
    Wrap,
}

/// Two-node linear interpolation stencil.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct Stencil1 {
    pub i0: usize,
    pub i1: usize,
    pub w0: f64,
    pub w1: f64,
    /// Derivative of `w1` with respect to the query coordinate (`w0` moves
    /// opposite). Zero when the coordinate was clipped.
    pub dw: f64,
}

impl Stencil1 {
    #[inline]
    pub fn new(n: usize, x: f64, mode: BoundaryMode) -> Self {
        debug_assert!(n >= 2);
        match mode {
            BoundaryMode::Clamp => {
                let scale = 0.5 * (n - 1) as f64;
                let t = (x + 1.0) * scale;
                if !(t > 0.0) {
                    // also catches NaN
                    let dw = if x >= -1.0 { scale } else { 0.0 };
                    Self { i0: 0, i1: 1, w0: 1.0, w1: 0.0, dw }
                } else if t >= (n - 1) as f64 {
                    let dw = if x <= 1.0 { scale } else { 0.0 };
                    Self { i0: n - 2, i1: n - 1, w0: 0.0, w1: 1.0, dw }
                } else {
                    let i0 = (t as usize).min(n - 2);
                    let f = t - i0 as f64;
                    Self { i0, i1: i0 + 1, w0: 1.0 - f, w1: f, dw: scale }
                }
            }
            BoundaryMode::Wrap => {
                let scale = 0.5 * n as f64;
                let t = ((x + 1.0) * scale).rem_euclid(n as f64);
                let i0 = (t as usize).min(n - 1);
                let f = t - i0 as f64;
                Self { i0, i1: (i0 + 1) % n, w0: 1.0 - f, w1: f, dw: scale }
            }
        }
    }
}

/// Four-node bilinear stencil over a row-major `n0 × n1` plane.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct Stencil2 {
    pub a: Stencil1,
    pub b: Stencil1,
}

impl Stencil2 {
    #[inline]
    pub fn new(n0: usize, n1: usize, u: f64, v: f64, mode: BoundaryMode) -> Self {
        Self {
            a: Stencil1::new(n0, u, mode),
            b: Stencil1::new(n1, v, mode),
        }
    }

    /// Node indices (row-major) and weights of the four corners.
    #[inline]
    pub fn corners(&self, n1: usize) -> [(usize, f64); 4] {
        let Self { a, b } = self;
        [
            (a.i0 * n1 + b.i0, a.w0 * b.w0),
            (a.i0 * n1 + b.i1, a.w0 * b.w1),
            (a.i1 * n1 + b.i0, a.w1 * b.w0),
            (a.i1 * n1 + b.i1, a.w1 * b.w1),
        ]
    }
}

/// Linear interpolation of a `[n][c]` row-major array.
#[inline]
pub fn lerp_into(values: &[f64], c: usize, s: &Stencil1, out: &mut [f64]) {
    let r0 = &values[s.i0 * c..s.i0 * c + c];
    let r1 = &values[s.i1 * c..s.i1 * c + c];
    for ((o, a), b) in out.iter_mut().zip(r0).zip(r1) {
        *o = s.w0 * a + s.w1 * b;
    }
}

/// Accumulates `grad_out` into the value gradient and returns the gradient
/// with respect to the query coordinate.
#[inline]
pub fn lerp_backward(
    values: &[f64],
    c: usize,
    s: &Stencil1,
    grad_out: &[f64],
    grad_values: &mut [f64],
) -> f64 {
    let mut dx = 0.0;
    let (r0, r1) = (s.i0 * c, s.i1 * c);
    for (ch, &g) in grad_out.iter().enumerate() {
        grad_values[r0 + ch] += s.w0 * g;
        grad_values[r1 + ch] += s.w1 * g;
        dx += g * (values[r1 + ch] - values[r0 + ch]);
    }
    dx * s.dw
}

/// Bilinear interpolation of a `[n0][n1][c]` row-major array.
#[inline]
pub fn bilerp_into(values: &[f64], n1: usize, c: usize, s: &Stencil2, out: &mut [f64]) {
    let k = s.corners(n1);
    let r = [
        &values[k[0].0 * c..k[0].0 * c + c],
        &values[k[1].0 * c..k[1].0 * c + c],
        &values[k[2].0 * c..k[2].0 * c + c],
        &values[k[3].0 * c..k[3].0 * c + c],
    ];
    for (ch, o) in out.iter_mut().enumerate().take(c) {
        *o = k[0].1 * r[0][ch] + k[1].1 * r[1][ch] + k[2].1 * r[2][ch] + k[3].1 * r[3][ch];
    }
}

/// Backward pass of [`bilerp_into`]; returns the gradient with respect to
/// both query coordinates.
#[inline]
pub fn bilerp_backward(
    values: &[f64],
    n1: usize,
    c: usize,
    s: &Stencil2,
    grad_out: &[f64],
    grad_values: &mut [f64],
) -> [f64; 2] {
    let k = s.corners(n1);
    let (a, b) = (&s.a, &s.b);
    let mut du = 0.0;
    let mut dv = 0.0;
    for (ch, &g) in grad_out.iter().enumerate() {
        let v00 = values[k[0].0 * c + ch];
        let v01 = values[k[1].0 * c + ch];
        let v10 = values[k[2].0 * c + ch];
        let v11 = values[k[3].0 * c + ch];
        for (idx, w) in k {
            grad_values[idx * c + ch] += w * g;
        }
        // ∂/∂w1a of Σ: b.w0 (v10 − v00) + b.w1 (v11 − v01)
        du += g * (b.w0 * (v10 - v00) + b.w1 * (v11 - v01));
        dv += g * (a.w0 * (v01 - v00) + a.w1 * (v11 - v10));
    }
    [du * a.dw, dv * b.dw]
}

fn check_finite(values: &[f64], what: &str) -> Result<()> {
    if values.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(Error::NonFiniteParameter(what.to_string()))
    }
}

/// A 1D feature grid with `resolution` nodes of `channels` features each.
#[derive(Clone, Debug, PartialEq)]
pub struct FeatureGrid1D {
    pub resolution: usize,
    pub channels: usize,
    pub values: Vec<f64>,
}

/// Interpolated features with gradients with respect to the query point.
#[derive(Clone, Debug, PartialEq)]
pub struct Interpolated<S> {
    pub value: Vec<f64>,
    /// `d value / d coord` per coordinate, each of length `channels`.
    pub d_coord: Vec<Vec<f64>>,
    pub stencil: S,
}

impl FeatureGrid1D {
    pub fn new(resolution: usize, channels: usize, values: Vec<f64>) -> Result<Self> {
        if resolution < 2 || channels < 1 || values.len() != resolution * channels {
            return Err(Error::Shape(format!(
                "1D grid {resolution}×{channels} with {} values",
                values.len()
            )));
        }
        check_finite(&values, "grid1d")?;
        Ok(Self { resolution, channels, values })
    }

    pub fn zeros(resolution: usize, channels: usize) -> Result<Self> {
        Self::new(resolution, channels, vec![0.0; resolution * channels])
    }

    pub fn random<R: Rng>(resolution: usize, channels: usize, low: f64, high: f64, rng: &mut R) -> Result<Self> {
        let values = (0..resolution * channels).map(|_| rng.gen_range(low..high)).collect();
        Self::new(resolution, channels, values)
    }

    pub fn interp_linear(&self, x: f64, mode: BoundaryMode) -> Interpolated<Stencil1> {
        let s = Stencil1::new(self.resolution, x, mode);
        let c = self.channels;
        let mut value = vec![0.0; c];
        lerp_into(&self.values, c, &s, &mut value);
        let d = (0..c)
            .map(|ch| s.dw * (self.values[s.i1 * c + ch] - self.values[s.i0 * c + ch]))
            .collect();
        Interpolated { value, d_coord: vec![d], stencil: s }
    }

    /// Scatters `grad_out` (per channel) into a value-gradient buffer shaped
    /// like `values`.
    pub fn scatter_grad(&self, s: &Stencil1, grad_out: &[f64], grad_values: &mut [f64]) {
        lerp_backward(&self.values, self.channels, s, grad_out, grad_values);
    }
}

/// A 2D feature grid of `n0 × n1` nodes, row-major, `channels` per node.
#[derive(Clone, Debug, PartialEq)]
pub struct FeatureGrid2D {
    pub n0: usize,
    pub n1: usize,
    pub channels: usize,
    pub values: Vec<f64>,
}

impl FeatureGrid2D {
    pub fn new(n0: usize, n1: usize, channels: usize, values: Vec<f64>) -> Result<Self> {
        if n0 < 2 || n1 < 2 || channels < 1 || values.len() != n0 * n1 * channels {
            return Err(Error::Shape(format!(
                "2D grid {n0}×{n1}×{channels} with {} values",
                values.len()
            )));
        }
        check_finite(&values, "grid2d")?;
        Ok(Self { n0, n1, channels, values })
    }

    pub fn zeros(n0: usize, n1: usize, channels: usize) -> Result<Self> {
        Self::new(n0, n1, channels, vec![0.0; n0 * n1 * channels])
    }

    pub fn random<R: Rng>(n0: usize, n1: usize, channels: usize, low: f64, high: f64, rng: &mut R) -> Result<Self> {
        let values = (0..n0 * n1 * channels).map(|_| rng.gen_range(low..high)).collect();
        Self::new(n0, n1, channels, values)
    }

    pub fn interp_bilinear(&self, uv: [f64; 2], mode: BoundaryMode) -> Interpolated<Stencil2> {
        let s = Stencil2::new(self.n0, self.n1, uv[0], uv[1], mode);
        let c = self.channels;
        let mut value = vec![0.0; c];
        bilerp_into(&self.values, self.n1, c, &s, &mut value);
        let mut du = vec![0.0; c];
        let mut dv = vec![0.0; c];
        for ch in 0..c {
            // one-hot output gradient per channel
            let mut g = vec![0.0; c];
            g[ch] = 1.0;
            let mut sink = vec![0.0; self.values.len()];
            let d = bilerp_backward(&self.values, self.n1, c, &s, &g, &mut sink);
            du[ch] = d[0];
            dv[ch] = d[1];
        }
        Interpolated { value, d_coord: vec![du, dv], stencil: s }
    }

    pub fn scatter_grad(&self, s: &Stencil2, grad_out: &[f64], grad_values: &mut [f64]) {
        bilerp_backward(&self.values, self.n1, self.channels, s, grad_out, grad_values);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn node(i: usize, n: usize) -> f64 {
        -1.0 + 2.0 * i as f64 / (n - 1) as f64
    }

    #[test]
    fn nodes_and_midpoints_1d() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let g = FeatureGrid1D::random(7, 3, -1.0, 1.0, &mut rng).unwrap();
        for i in 0..7 {
            let v = g.interp_linear(node(i, 7), BoundaryMode::Clamp).value;
            for ch in 0..3 {
                assert!((v[ch] - g.values[i * 3 + ch]).abs() < 1e-15);
            }
        }
        for i in 0..6 {
            let x = 0.5 * (node(i, 7) + node(i + 1, 7));
            let v = g.interp_linear(x, BoundaryMode::Clamp).value;
            for ch in 0..3 {
                let m = 0.5 * (g.values[i * 3 + ch] + g.values[(i + 1) * 3 + ch]);
                assert!((v[ch] - m).abs() < 1e-14);
            }
        }
    }

    #[test]
    fn clamped_outside_domain() {
        let g = FeatureGrid1D::new(3, 1, vec![1.0, 2.0, 5.0]).unwrap();
        let out = g.interp_linear(3.0, BoundaryMode::Clamp);
        assert_eq!(out.value, vec![5.0]);
        assert_eq!(out.d_coord[0], vec![0.0]);
        assert_eq!(g.interp_linear(-7.0, BoundaryMode::Clamp).value, vec![1.0]);
    }

    #[test]
    fn wrap_is_periodic() {
        let g = FeatureGrid1D::new(4, 1, vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let a = g.interp_linear(0.3, BoundaryMode::Wrap).value[0];
        let b = g.interp_linear(2.3, BoundaryMode::Wrap).value[0];
        assert!((a - b).abs() < 1e-12);
        // between the last and first node
        let v = g.interp_linear(0.75, BoundaryMode::Wrap).value[0];
        assert!((v - 2.5).abs() < 1e-12);
    }

    #[test]
    fn cell_center_is_corner_mean() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let g = FeatureGrid2D::random(5, 4, 2, -1.0, 1.0, &mut rng).unwrap();
        let u = 0.5 * (node(1, 5) + node(2, 5));
        let v = 0.5 * (node(2, 4) + node(3, 4));
        let out = g.interp_bilinear([u, v], BoundaryMode::Clamp).value;
        for ch in 0..2 {
            let at = |i: usize, j: usize| g.values[(i * 4 + j) * 2 + ch];
            let mean = 0.25 * (at(1, 2) + at(1, 3) + at(2, 2) + at(2, 3));
            assert!((out[ch] - mean).abs() < 1e-14);
        }
        let n = g.interp_bilinear([node(3, 5), node(1, 4)], BoundaryMode::Clamp).value;
        assert!((n[1] - g.values[(3 * 4 + 1) * 2 + 1]).abs() < 1e-15);
    }

    #[test]
    fn coordinate_gradients_match_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let h = 1e-6;
        for _ in 0..100 {
            let g1 = FeatureGrid1D::random(9, 3, -1.0, 1.0, &mut rng).unwrap();
            let g2 = FeatureGrid2D::random(6, 7, 3, -1.0, 1.0, &mut rng).unwrap();
            let x: f64 = rng.gen_range(-0.99..0.99);
            let y: f64 = rng.gen_range(-0.99..0.99);
            for mode in [BoundaryMode::Clamp, BoundaryMode::Wrap] {
                let a = g1.interp_linear(x, mode);
                let p = g1.interp_linear(x + h, mode).value;
                let m = g1.interp_linear(x - h, mode).value;
                for ch in 0..3 {
                    let fd = (p[ch] - m[ch]) / (2.0 * h);
                    assert!((fd - a.d_coord[0][ch]).abs() < 1e-6, "1d {fd} {}", a.d_coord[0][ch]);
                }
                let b = g2.interp_bilinear([x, y], mode);
                for axis in 0..2 {
                    let mut up = [x, y];
                    let mut dn = [x, y];
                    up[axis] += h;
                    dn[axis] -= h;
                    let p = g2.interp_bilinear(up, mode).value;
                    let m = g2.interp_bilinear(dn, mode).value;
                    for ch in 0..3 {
                        let fd = (p[ch] - m[ch]) / (2.0 * h);
                        assert!((fd - b.d_coord[axis][ch]).abs() < 1e-6);
                    }
                }
            }
        }
    }

    #[test]
    fn value_gradient_is_weight_scatter() {
        let g = FeatureGrid2D::zeros(3, 3, 1).unwrap();
        let s = Stencil2::new(3, 3, 0.25, -0.5, BoundaryMode::Clamp);
        let mut grad = vec![0.0; 9];
        g.scatter_grad(&s, &[2.0], &mut grad);
        let total: f64 = grad.iter().sum();
        assert!((total - 2.0).abs() < 1e-15);
        // u = 0.25 → t=1.25 (rows 1,2 weights .75/.25); v=−0.5 → t=0.5
        assert!((grad[1 * 3] - 2.0 * 0.75 * 0.5).abs() < 1e-15);
        assert!((grad[2 * 3 + 1] - 2.0 * 0.25 * 0.5).abs() < 1e-15);
    }

    #[test]
    fn shape_errors() {
        assert!(FeatureGrid1D::new(1, 1, vec![0.0]).is_err());
        assert!(FeatureGrid2D::new(2, 2, 1, vec![0.0; 3]).is_err());
        assert!(matches!(
            FeatureGrid1D::new(2, 1, vec![0.0, f64::NAN]),
            Err(Error::NonFiniteParameter(_))
        ));
    }
}
