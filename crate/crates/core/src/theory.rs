//! Numerical checks of the low-rank model problem: square templates and
//! their rotations, rank-F error floors, the diamond spectrum, power
//! iterations and the alternating align-then-factor algorithm.

use std::f64::consts::{FRAC_1_SQRT_2, FRAC_PI_2, FRAC_PI_4, PI};

use nalgebra::{DMatrix, SymmetricEigen};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Normalized coordinate of node `i` on an `n`-node grid over `[−1, 1]`.
#[inline]
pub fn grid_coord(i: usize, n: usize) -> f64 {
    -1.0 + 2.0 * i as f64 / (n - 1) as f64
}

/// Grid spacing `2/(n−1)`.
#[inline]
pub fn grid_step(n: usize) -> f64 {
    2.0 / (n - 1) as f64
}

fn check_template(n: usize, alpha: f64) -> Result<()> {
    if n < 3 {
        return Err(Error::InvalidArgument(format!("template needs n >= 3, got {n}")));
    }
    if !(alpha > 0.0 && alpha <= FRAC_1_SQRT_2 + 1e-12) {
        return Err(Error::InvalidArgument(format!("alpha must lie in (0, 1/sqrt 2], got {alpha}")));
    }
    Ok(())
}

const EDGE_TOL: f64 = 1e-9;

/// Centered square `1{max(|i'|, |j'|) ≤ α}` in normalized coordinates.
pub fn make_square(n: usize, alpha: f64) -> Result<DMatrix<f64>> {
    rotated_square(n, alpha, 0.0, Sampling::Direct)
}

/// The square's 1D factor `1{|s| ≤ α}` on the grid.
pub fn square_factor(n: usize, alpha: f64) -> Vec<f64> {
    (0..n)
        .map(|i| if grid_coord(i, n).abs() <= alpha + EDGE_TOL { 1.0 } else { 0.0 })
        .collect()
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Sampling {
    /// Evaluate the rotated indicator at every pixel.
    #[default]
    Direct,
    /// Bilinearly resample the axis-aligned template.
    Bilinear,
}

/// The square rotated counterclockwise by `nu`: `X(x) = X♮(R(−ν)x)`.
pub fn rotated_square(n: usize, alpha: f64, nu: f64, sampling: Sampling) -> Result<DMatrix<f64>> {
    check_template(n, alpha)?;
    if !nu.is_finite() {
        return Err(Error::NonFinite("rotation angle".into()));
    }
    match sampling {
        Sampling::Direct => {
            let (s, c) = nu.sin_cos();
            Ok(DMatrix::from_fn(n, n, |i, j| {
                let (x, y) = (grid_coord(i, n), grid_coord(j, n));
                let (a, b) = (c * x + s * y, -s * x + c * y);
                if a.abs().max(b.abs()) <= alpha + EDGE_TOL {
                    1.0
                } else {
                    0.0
                }
            }))
        }
        Sampling::Bilinear => resample_rotate(&make_square(n, alpha)?, nu),
    }
}

/// The π/4-rotated square with `α = 1/√2`, i.e. `1{|i'| + |j'| ≤ 1}`.
pub fn diamond(n: usize) -> Result<DMatrix<f64>> {
    rotated_square(n, FRAC_1_SQRT_2, FRAC_PI_4, Sampling::Direct)
}

/// Rotates image content counterclockwise by `nu` about the center with
/// bilinear interpolation; samples outside the image read 0.
pub fn resample_rotate(image: &DMatrix<f64>, nu: f64) -> Result<DMatrix<f64>> {
    let n = image.nrows();
    if n != image.ncols() || n < 2 {
        return Err(Error::Shape(format!("resample_rotate needs a square image, got {}x{}", n, image.ncols())));
    }
    let data: Vec<f64> = (0..n * n).map(|k| image[(k / n, k % n)]).collect();
    let out = resample_rotate_slice(&data, n, nu);
    Ok(DMatrix::from_fn(n, n, |i, j| out[i * n + j]))
}

/// Row-major version of [`resample_rotate`] for an `n × n` channel.
pub fn resample_rotate_slice(data: &[f64], n: usize, nu: f64) -> Vec<f64> {
    let (s, c) = nu.sin_cos();
    let half = (n - 1) as f64 / 2.0;
    let at = |i: isize, j: isize| -> f64 {
        if i < 0 || j < 0 || i >= n as isize || j >= n as isize {
            0.0
        } else {
            data[i as usize * n + j as usize]
        }
    };
    let mut out = vec![0.0; n * n];
    for i in 0..n {
        for j in 0..n {
            let (x, y) = (grid_coord(i, n), grid_coord(j, n));
            let (a, b) = (c * x + s * y, -s * x + c * y);
            let (u, v) = ((a + 1.0) * half, (b + 1.0) * half);
            // snap round-off so exact permutations stay exact
            let u = if (u - u.round()).abs() < 1e-9 { u.round() } else { u };
            let v = if (v - v.round()).abs() < 1e-9 { v.round() } else { v };
            let (i0, j0) = (u.floor(), v.floor());
            let (fu, fv) = (u - i0, v - j0);
            let (i0, j0) = (i0 as isize, j0 as isize);
            let mut val = (1.0 - fu) * (1.0 - fv) * at(i0, j0);
            if fv > 0.0 {
                val += (1.0 - fu) * fv * at(i0, j0 + 1);
            }
            if fu > 0.0 {
                val += fu * (1.0 - fv) * at(i0 + 1, j0);
                if fv > 0.0 {
                    val += fu * fv * at(i0 + 1, j0 + 1);
                }
            }
            out[i * n + j] = val;
        }
    }
    out
}

fn is_symmetric(x: &DMatrix<f64>) -> bool {
    x.is_square() && (0..x.nrows()).all(|i| (0..i).all(|j| x[(i, j)] == x[(j, i)]))
}

/// Singular values in decreasing order. Exactly symmetric inputs use a
/// symmetric eigendecomposition (`σ = |λ|`).
pub fn singular_values(x: &DMatrix<f64>) -> Result<Vec<f64>> {
    if x.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("matrix".into()));
    }
    let mut sv: Vec<f64> = if is_symmetric(x) {
        SymmetricEigen::try_new(x.clone(), 1e-14, 0)
            .ok_or_else(|| Error::Numeric("symmetric eigendecomposition did not converge".into()))?
            .eigenvalues
            .iter()
            .map(|v| v.abs())
            .collect()
    } else {
        x.clone()
            .try_svd(false, false, 1e-14, 0)
            .ok_or_else(|| Error::Numeric("SVD did not converge".into()))?
            .singular_values
            .iter()
            .copied()
            .collect()
    };
    sv.sort_by(|a, b| b.total_cmp(a));
    Ok(sv)
}

/// `mse(F) = (1/(rows·cols))·Σ_{i>F} σᵢ²` for `F = 0 … len(σ)`.
pub fn rank_errors(singular_values: &[f64], rows: usize, cols: usize) -> Vec<f64> {
    let total = (rows * cols) as f64;
    let mut tail: Vec<f64> = vec![0.0; singular_values.len() + 1];
    for k in (0..singular_values.len()).rev() {
        tail[k] = tail[k + 1] + singular_values[k] * singular_values[k];
    }
    tail.iter().map(|t| t / total).collect()
}

/// Mean squared error of the best rank-`f` approximation of `x`.
pub fn svd_rank_error(x: &DMatrix<f64>, f: usize) -> Result<f64> {
    let sv = singular_values(x)?;
    let errs = rank_errors(&sv, x.nrows(), x.ncols());
    Ok(errs[f.min(sv.len())])
}

/// Smallest `F` whose rank-F error reaches `target_db` PSNR (unit peak).
pub fn min_components_for_psnr(errors: &[f64], target_db: f64) -> usize {
    let mse = 10f64.powf(-target_db / 10.0);
    errors.iter().position(|&e| e <= mse).unwrap_or(errors.len() - 1)
}

/// Analytic eigenpairs of the diamond's integral operator on `[−1, 1]`.
#[derive(Clone, Debug, PartialEq)]
pub struct DiamondSpectrum {
    pub alpha: f64,
    pub eigenvalues: Vec<f64>,
    pub grid: Vec<f64>,
    /// `eigenfunctions[k][i]` is `g_{k+1}` at `grid[i]`.
    pub eigenfunctions: Vec<Vec<f64>>,
}

pub fn diamond_eigenvalue(alpha: f64, k: usize) -> f64 {
    let sign = if k % 2 == 1 { 1.0 } else { -1.0 };
    sign * 4.0 * 2f64.sqrt() * alpha / (PI * (2 * k - 1) as f64)
}

pub fn diamond_spectrum(alpha: f64, count: usize, n: usize) -> Result<DiamondSpectrum> {
    if count == 0 || n < 2 || !(alpha > 0.0) {
        return Err(Error::InvalidArgument("diamond spectrum needs K >= 1, n >= 2, alpha > 0".into()));
    }
    let grid: Vec<f64> = (0..n).map(|i| grid_coord(i, n)).collect();
    let half_width = 2f64.sqrt() * alpha;
    let amp = half_width.powf(-0.5);
    let eigenfunctions = (1..=count)
        .map(|k| {
            grid.iter()
                .map(|&s| {
                    if s.abs() <= half_width {
                        amp * (PI * (2 * k - 1) as f64 * s / (2.0 * half_width)).cos()
                    } else {
                        0.0
                    }
                })
                .collect()
        })
        .collect();
    Ok(DiamondSpectrum {
        alpha,
        eigenvalues: (1..=count).map(|k| diamond_eigenvalue(alpha, k)).collect(),
        grid,
        eigenfunctions,
    })
}

/// `h·Σ aᵢbᵢ` with `h = 2/(n−1)`.
pub fn grid_dot(a: &[f64], b: &[f64]) -> f64 {
    grid_step(a.len()) * a.iter().zip(b).map(|(x, y)| x * y).sum::<f64>()
}

pub fn grid_norm(a: &[f64]) -> f64 {
    grid_dot(a, a).sqrt()
}

/// `(Tu)ᵢ = h·Σⱼ Mᵢⱼ uⱼ`.
pub fn apply_operator(m: &DMatrix<f64>, u: &[f64]) -> Vec<f64> {
    let n = u.len();
    let h = grid_step(n);
    let mut out = vec![0.0; n];
    // column-major storage: accumulate column by column
    for (j, &uj) in u.iter().enumerate() {
        if uj == 0.0 {
            continue;
        }
        let col = m.column(j);
        for (o, &mij) in out.iter_mut().zip(col.iter()) {
            *o += mij * uj;
        }
    }
    out.iter_mut().for_each(|v| *v *= h);
    out
}

/// `(M + Mᵀ)/2`.
pub fn symmetrize(m: &DMatrix<f64>) -> DMatrix<f64> {
    (m + m.transpose()) * 0.5
}

#[derive(Clone, Debug, PartialEq)]
pub struct PowerOutcome {
    /// Unit-norm iterate after the last step.
    pub u: Vec<f64>,
    /// `√(⟨u, Tu⟩)·u`.
    pub factor: Vec<f64>,
    pub rayleigh: f64,
    /// Unit-norm iterates `u₀ … u_k`.
    pub history: Vec<Vec<f64>>,
}

/// Power iterations of the operator of a symmetric matrix on the grid.
pub fn power_stage(m: &DMatrix<f64>, u0: &[f64], steps: usize) -> Result<PowerOutcome> {
    if m.nrows() != u0.len() || !m.is_square() {
        return Err(Error::Shape(format!("operator is {}x{}, start vector {}", m.nrows(), m.ncols(), u0.len())));
    }
    if steps == 0 {
        return Err(Error::InvalidArgument("power method needs at least one step".into()));
    }
    let norm0 = grid_norm(u0);
    if !(norm0 > 0.0 && norm0.is_finite()) {
        return Err(Error::InvalidArgument("start vector must be non-zero and finite".into()));
    }
    let mut u: Vec<f64> = u0.iter().map(|v| v / norm0).collect();
    let mut history = vec![u.clone()];
    for _ in 0..steps {
        let tu = apply_operator(m, &u);
        let norm = grid_norm(&tu);
        if !(norm > 0.0 && norm.is_finite()) {
            return Err(Error::Numeric("power iterate vanished".into()));
        }
        u = tu.iter().map(|v| v / norm).collect();
        history.push(u.clone());
    }
    let rayleigh = grid_dot(&u, &apply_operator(m, &u));
    if !(rayleigh > 0.0) {
        return Err(Error::Numeric(format!(
            "Rayleigh quotient {rayleigh:.3e} is not positive, the factor would be complex"
        )));
    }
    let scale = rayleigh.sqrt();
    let factor = u.iter().map(|v| v * scale).collect();
    Ok(PowerOutcome { u, factor, rayleigh, history })
}

/// `‖a − b‖` on the grid, minimized over the sign of `b`.
pub fn grid_distance_up_to_sign(a: &[f64], b: &[f64]) -> f64 {
    let plus: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
    let minus: Vec<f64> = a.iter().zip(b).map(|(x, y)| x + y).collect();
    grid_norm(&plus).min(grid_norm(&minus))
}

/// Distance from `delta` to the nearest multiple of π/2, in `[0, π/4]`.
pub fn fold_angle(delta: f64) -> f64 {
    let d = delta.rem_euclid(FRAC_PI_2);
    d.min(FRAC_PI_2 - d)
}

/// Discrete unit-mass Gaussian and its unit-slope derivative, truncated at 5σ.
#[derive(Clone, Debug, PartialEq)]
pub struct GaussianKernel {
    pub radius: usize,
    pub smooth: Vec<f64>,
    pub derivative: Vec<f64>,
}

impl GaussianKernel {
    pub fn new(sigma: f64, h: f64) -> Result<Self> {
        if !(sigma > 0.0 && h > 0.0) {
            return Err(Error::InvalidArgument("smoothing needs sigma > 0".into()));
        }
        let radius = (5.0 * sigma / h).ceil() as usize;
        let offsets: Vec<f64> = (0..=2 * radius).map(|k| (k as f64 - radius as f64) * h).collect();
        let mut smooth: Vec<f64> = offsets.iter().map(|x| (-x * x / (2.0 * sigma * sigma)).exp()).collect();
        let mass: f64 = smooth.iter().sum();
        smooth.iter_mut().for_each(|v| *v /= mass);
        let mut derivative: Vec<f64> = offsets.iter().zip(&smooth).map(|(x, w)| -x / (sigma * sigma) * w).collect();
        // (f ∗ d)(x) = Σ d_k f(x − x_k) must return 1 for f(x) = x
        let slope: f64 = -offsets.iter().zip(&derivative).map(|(x, d)| x * d).sum::<f64>();
        derivative.iter_mut().for_each(|v| *v /= slope);
        Ok(Self { radius, smooth, derivative })
    }
}

/// Separable zero-padded convolution of a row-major `n × n` array: `kr`
/// along rows (first index), `kc` along columns.
pub fn convolve2(data: &[f64], n: usize, kr: &[f64], kc: &[f64]) -> Vec<f64> {
    let r = (kr.len() / 2) as isize;
    let mut tmp = vec![0.0; n * n];
    for i in 0..n {
        for j in 0..n {
            let mut acc = 0.0;
            for (k, w) in kc.iter().enumerate() {
                let jj = j as isize - (k as isize - r);
                if jj >= 0 && (jj as usize) < n {
                    acc += w * data[i * n + jj as usize];
                }
            }
            tmp[i * n + j] = acc;
        }
    }
    let mut out = vec![0.0; n * n];
    for i in 0..n {
        for (k, w) in kr.iter().enumerate() {
            let ii = i as isize - (k as isize - r);
            if ii >= 0 && (ii as usize) < n {
                let src = &tmp[ii as usize * n..ii as usize * n + n];
                for (o, s) in out[i * n..i * n + n].iter_mut().zip(src) {
                    *o += w * s;
                }
            }
        }
    }
    out
}

/// Linear interpolation of grid samples of `u` at `s`, treating `u` as zero
/// at the (virtual) nodes beyond `[−1, 1]`.
#[inline]
pub fn sample_factor(u: &[f64], s: f64) -> f64 {
    let n = u.len();
    let t = (s + 1.0) * 0.5 * (n - 1) as f64;
    if !(t > -1.0 && t < n as f64) {
        return 0.0;
    }
    let i = t.floor();
    let f = t - i;
    let i = i as isize;
    let at = |k: isize| if k < 0 || k >= n as isize { 0.0 } else { u[k as usize] };
    (1.0 - f) * at(i) + f * at(i + 1)
}

/// Zero-padded copy of a grid factor for branch-free interpolation anywhere
/// in `[−√2, √2]`.
struct PaddedFactor {
    start: f64,
    inv_h: f64,
    values: Vec<f64>,
}

impl PaddedFactor {
    fn new(u: &[f64]) -> Self {
        let n = u.len();
        let h = grid_step(n);
        let pad = ((2f64.sqrt() - 1.0) / h).ceil() as usize + 2;
        let mut values = vec![0.0; n + 2 * pad + 1];
        values[pad..pad + n].copy_from_slice(u);
        Self { start: -1.0 - pad as f64 * h, inv_h: 1.0 / h, values }
    }

    #[inline(always)]
    fn at(&self, s: f64) -> f64 {
        let t = (s - self.start) * self.inv_h;
        let i = t as usize;
        let f = t - i as f64;
        let a = self.values[i];
        a + f * (self.values[i + 1] - a)
    }
}

/// `(uuᵀ ∘ τ_θ)(x) = u(a)·u(b)` with `(a, b) = R(θ)x`, on the grid.
pub fn rotated_outer(u: &[f64], theta: f64) -> Vec<f64> {
    let n = u.len();
    let (s, c) = theta.sin_cos();
    let mut out = vec![0.0; n * n];
    for i in 0..n {
        let x = grid_coord(i, n);
        for j in 0..n {
            let y = grid_coord(j, n);
            out[i * n + j] = sample_factor(u, c * x - s * y) * sample_factor(u, s * x + c * y);
        }
    }
    out
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AlignConfig {
    pub n: usize,
    pub alpha: f64,
    pub nu_true: f64,
    pub sigma2: f64,
    pub beta: f64,
    pub t_rough: usize,
    pub t_nu: usize,
    pub t_u: usize,
    pub sampling: Sampling,
    /// Success thresholds: folded angle error and grid distance of `û`.
    pub angle_tol: f64,
    pub factor_tol: f64,
}

impl Default for AlignConfig {
    fn default() -> Self {
        Self {
            n: 512,
            alpha: FRAC_1_SQRT_2,
            nu_true: FRAC_PI_4,
            sigma2: 1e-4,
            beta: 0.05,
            t_rough: 40,
            t_nu: 2000,
            t_u: 16,
            sampling: Sampling::Direct,
            angle_tol: 0.01,
            factor_tol: 0.2,
        }
    }
}

/// Seed-independent precomputation for the alternating algorithm: the
/// smoothed curl field `φ ∗ C` on its support and the stage-one factor.
#[derive(Clone, Debug)]
pub struct AlignmentProblem {
    pub config: AlignConfig,
    pub kernel: GaussianKernel,
    /// `C(x) = ⟨∇(φ ∗ X♮)(x), Jx⟩`, row-major.
    pub curl: Vec<f64>,
    /// Row runs `(x₁, first column, offset into band_weights, length)`
    /// covering the support of `φ ∗ C`.
    band_runs: Vec<(f64, usize, usize, usize)>,
    /// `h²·(φ ∗ C)(x)` along the runs.
    band_weights: Vec<f64>,
    pub u_rough: Vec<f64>,
    pub rough: PowerOutcome,
}

/// Per-seed output of [`AlignmentProblem::run`].
#[derive(Clone, Debug, PartialEq)]
pub struct AlignOutcome {
    pub seed: u64,
    pub nu0: f64,
    pub nu_hat: f64,
    pub u_hat: Vec<f64>,
    pub angle_error: f64,
    pub factor_error: f64,
    pub success: bool,
    /// `ν₀ … ν_{T_ν}`.
    pub trace: Vec<f64>,
}

impl AlignmentProblem {
    pub fn new(config: AlignConfig) -> Result<Self> {
        let n = config.n;
        check_template(n, config.alpha)?;
        if !(config.sigma2 > 0.0 && config.beta > 0.0) {
            return Err(Error::InvalidArgument("sigma2 and beta must be positive".into()));
        }
        let h = grid_step(n);
        let kernel = GaussianKernel::new(config.sigma2.sqrt(), h)?;
        let square = square_factor(n, config.alpha);
        let x: Vec<f64> = (0..n * n).map(|k| square[k / n] * square[k % n]).collect();
        let d1 = convolve2(&x, n, &kernel.derivative, &kernel.smooth);
        let d2 = convolve2(&x, n, &kernel.smooth, &kernel.derivative);
        let curl: Vec<f64> = (0..n * n)
            .map(|k| {
                let (x1, x2) = (grid_coord(k / n, n), grid_coord(k % n, n));
                // J x = (−x₂, x₁)
                -d1[k] * x2 + d2[k] * x1
            })
            .collect();
        let smoothed = convolve2(&curl, n, &kernel.smooth, &kernel.smooth);
        let peak = smoothed.iter().fold(0.0_f64, |m, v| m.max(v.abs()));
        let mut band_runs = Vec::new();
        let mut band_weights = Vec::new();
        for i in 0..n {
            let row = &smoothed[i * n..(i + 1) * n];
            let mut j = 0;
            while j < n {
                if row[j].abs() > 1e-14 * peak {
                    let first = j;
                    while j < n && row[j].abs() > 1e-14 * peak {
                        j += 1;
                    }
                    band_runs.push((grid_coord(i, n), first, band_weights.len(), j - first));
                    band_weights.extend(row[first..j].iter().map(|v| h * h * v));
                } else {
                    j += 1;
                }
            }
        }
        let observation = symmetrize(&rotated_square(n, config.alpha, config.nu_true, config.sampling)?);
        let rough = power_stage(&observation, &vec![1.0; n], config.t_rough)?;
        Ok(Self { u_rough: rough.factor.clone(), rough, config, kernel, curl, band_runs, band_weights })
    }

    pub fn band_len(&self) -> usize {
        self.band_weights.len()
    }

    /// `∇_ν L^σ(ν, u) = −⟨φ ∗ (uuᵀ ∘ τ_{ν♮−ν}), C⟩`, evaluated as
    /// `−⟨uuᵀ ∘ τ_{ν♮−ν}, φ ∗ C⟩` over the support of `φ ∗ C`.
    pub fn gradient(&self, nu: f64, u: &[f64]) -> f64 {
        let n = self.config.n;
        let h = grid_step(n);
        let (s, c) = (self.config.nu_true - nu).sin_cos();
        let table = PaddedFactor::new(u);
        let mut acc = 0.0;
        for &(x1, first, offset, len) in &self.band_runs {
            let weights = &self.band_weights[offset..offset + len];
            let x2 = grid_coord(first, n);
            let (a0, b0) = (c * x1 - s * x2, s * x1 + c * x2);
            let (da, db) = (-s * h, c * h);
            for (k, &w) in weights.iter().enumerate() {
                let kf = k as f64;
                acc += w * table.at(a0 + kf * da) * table.at(b0 + kf * db);
            }
        }
        -acc
    }

    /// The same gradient with the smoothing applied to the rotated outer
    /// product, as in its defining formula.
    pub fn gradient_direct(&self, nu: f64, u: &[f64]) -> f64 {
        let n = self.config.n;
        let h = grid_step(n);
        let a = rotated_outer(u, self.config.nu_true - nu);
        let sa = convolve2(&a, n, &self.kernel.smooth, &self.kernel.smooth);
        -h * h * sa.iter().zip(&self.curl).map(|(x, y)| x * y).sum::<f64>()
    }

    /// `−⟨φ ∗ (uuᵀ ∘ τ_{ν♮−ν}), φ ∗ X♮⟩`, which differs from `L^σ(ν, u)` by a
    /// term that does not depend on `ν`.
    pub fn cross_objective(&self, nu: f64, u: &[f64]) -> f64 {
        let n = self.config.n;
        let h = grid_step(n);
        let square = square_factor(n, self.config.alpha);
        let x: Vec<f64> = (0..n * n).map(|k| square[k / n] * square[k % n]).collect();
        let sx = convolve2(&x, n, &self.kernel.smooth, &self.kernel.smooth);
        let a = rotated_outer(u, self.config.nu_true - nu);
        let sa = convolve2(&a, n, &self.kernel.smooth, &self.kernel.smooth);
        -h * h * sa.iter().zip(&sx).map(|(p, q)| p * q).sum::<f64>()
    }

    /// Stages two and three from `ν₀ ~ U[0, 2π)` drawn with `seed`.
    pub fn run(&self, seed: u64) -> Result<AlignOutcome> {
        let nu0 = ChaCha8Rng::seed_from_u64(seed).gen_range(0.0..2.0 * PI);
        self.run_from(seed, nu0)
    }

    pub fn run_from(&self, seed: u64, nu0: f64) -> Result<AlignOutcome> {
        let cfg = &self.config;
        let mut trace = Vec::with_capacity(cfg.t_nu + 1);
        let mut nu = nu0;
        trace.push(nu);
        for k in 0..cfg.t_nu {
            let g = self.gradient(nu, &self.u_rough);
            if !g.is_finite() {
                return Err(Error::Diverged { step: k, reason: "non-finite alignment gradient".into() });
            }
            nu -= cfg.beta * g;
            trace.push(nu);
        }
        let observation = symmetrize(&rotated_square(cfg.n, cfg.alpha, cfg.nu_true - nu, cfg.sampling)?);
        let refined = power_stage(&observation, &self.u_rough, cfg.t_u)?;
        let truth = square_factor(cfg.n, cfg.alpha);
        let angle_error = fold_angle(nu - cfg.nu_true);
        let factor_error = grid_distance_up_to_sign(&refined.factor, &truth);
        Ok(AlignOutcome {
            seed,
            nu0,
            nu_hat: nu,
            u_hat: refined.factor,
            angle_error,
            factor_error,
            success: angle_error <= cfg.angle_tol && factor_error <= cfg.factor_tol,
            trace,
        })
    }
}

/// First index after which every folded trace entry stays within `tol`, if
/// the trace ever enters that set.
pub fn entry_step(trace: &[f64], nu_true: f64, tol: f64) -> Option<usize> {
    trace.iter().position(|&v| fold_angle(v - nu_true) <= tol)
}

/// True when no iterate leaves the `tol`-neighborhood after first entering it.
pub fn never_escapes(trace: &[f64], nu_true: f64, tol: f64) -> bool {
    match entry_step(trace, nu_true, tol) {
        Some(k) => trace[k..].iter().all(|&v| fold_angle(v - nu_true) <= tol),
        None => true,
    }
}
