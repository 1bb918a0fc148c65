//! Tables for the rotated-square model problem: diamond spectrum, low-rank
//! error floors, power-method contraction and alternating alignment.

use std::f64::consts::FRAC_PI_4;
use std::io::Write;

use nalgebra::SymmetricEigen;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::theory::{
    diamond_eigenvalue, grid_distance_up_to_sign, grid_norm, min_components_for_psnr, power_stage, rank_errors, rotated_square,
    singular_values, symmetrize, AlignConfig, AlignOutcome, AlignmentProblem, Sampling,
};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SpectrumConfig {
    pub n: usize,
    pub k: usize,
    pub alpha: f64,
}

impl Default for SpectrumConfig {
    fn default() -> Self {
        Self { n: 1024, k: 8, alpha: std::f64::consts::FRAC_1_SQRT_2 }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SpectrumRow {
    pub k: usize,
    pub analytic: f64,
    pub measured: f64,
    pub rel_error: f64,
}

/// Top-`k` singular values of the directly sampled π/4-rotated square,
/// scaled by `2/n`, against `|λ_k|`.
pub fn spectrum_table(cfg: &SpectrumConfig) -> Result<Vec<SpectrumRow>> {
    if cfg.k == 0 || cfg.k > cfg.n || cfg.n < 2 {
        return Err(Error::InvalidArgument(format!("need 1 <= k <= n and n >= 2, got n={} k={}", cfg.n, cfg.k)));
    }
    let x = rotated_square(cfg.n, cfg.alpha, FRAC_PI_4, Sampling::Direct)?;
    let sv = singular_values(&x)?;
    Ok((1..=cfg.k)
        .map(|k| {
            let analytic = diamond_eigenvalue(cfg.alpha, k).abs();
            let measured = sv[k - 1] * 2.0 / cfg.n as f64;
            SpectrumRow { k, analytic, measured, rel_error: (measured - analytic).abs() / analytic }
        })
        .collect())
}

pub fn write_spectrum_csv<W: Write>(rows: &[SpectrumRow], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["k", "analytic", "measured", "rel_error"])?;
    for r in rows {
        w.write_record([r.k.to_string(), format!("{:.10}", r.analytic), format!("{:.10}", r.measured), format!("{:.6e}", r.rel_error)])?;
    }
    w.flush().map_err(|e| Error::io("<csv>", e))?;
    Ok(())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LowRankConfig {
    pub sizes: Vec<usize>,
    pub max_components: usize,
    pub psnr_targets: Vec<f64>,
}

impl Default for LowRankConfig {
    fn default() -> Self {
        Self { sizes: vec![128, 256, 512], max_components: 32, psnr_targets: vec![30.0, 40.0, 50.0] }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct LowRankTable {
    /// `(n, F, mse(F), mse(F)·(1+F))` for `F = 1 … max_components`.
    pub errors: Vec<(usize, usize, f64, f64)>,
    /// `(n, target dB, minimal F)`.
    pub components: Vec<(usize, f64, usize)>,
}

/// Best rank-F errors of the diamond at each size, via its singular values.
pub fn lowrank_table(cfg: &LowRankConfig) -> Result<LowRankTable> {
    if cfg.sizes.is_empty() || cfg.sizes.iter().any(|&n| n < 2) || cfg.max_components == 0 {
        return Err(Error::InvalidArgument("need sizes >= 2 and max_components >= 1".into()));
    }
    let mut table = LowRankTable { errors: Vec::new(), components: Vec::new() };
    for &n in &cfg.sizes {
        let x = rotated_square(n, std::f64::consts::FRAC_1_SQRT_2, FRAC_PI_4, Sampling::Direct)?;
        let errs = rank_errors(&singular_values(&x)?, n, n);
        for f in 1..=cfg.max_components.min(n) {
            table.errors.push((n, f, errs[f], errs[f] * (1 + f) as f64));
        }
        for &db in &cfg.psnr_targets {
            table.components.push((n, db, min_components_for_psnr(&errs, db)));
        }
    }
    Ok(table)
}

pub fn write_lowrank_csv<W: Write>(table: &LowRankTable, out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["n", "kind", "key", "value"])?;
    for (n, f, mse, scaled) in &table.errors {
        w.write_record([n.to_string(), "mse".into(), f.to_string(), format!("{mse:.10e}")])?;
        w.write_record([n.to_string(), "mse_times_1_plus_f".into(), f.to_string(), format!("{scaled:.10e}")])?;
    }
    for (n, db, f) in &table.components {
        w.write_record([n.to_string(), "min_components".into(), format!("{db}"), f.to_string()])?;
    }
    w.flush().map_err(|e| Error::io("<csv>", e))?;
    Ok(())
}

/// Grid distances (up to sign) between the power iterates of the
/// symmetrized diamond operator, started from the constant function, and
/// the operator's dominant eigenvector.
pub fn rough_stage_errors(n: usize, steps: usize) -> Result<Vec<f64>> {
    let m = symmetrize(&rotated_square(n, std::f64::consts::FRAC_1_SQRT_2, FRAC_PI_4, Sampling::Direct)?);
    let eig = SymmetricEigen::try_new(m.clone(), 1e-14, 0).ok_or_else(|| Error::Numeric("eigendecomposition did not converge".into()))?;
    let top = (0..n).max_by(|&a, &b| eig.eigenvalues[a].total_cmp(&eig.eigenvalues[b])).unwrap_or(0);
    let v: Vec<f64> = eig.eigenvectors.column(top).iter().copied().collect();
    let norm = grid_norm(&v);
    let v: Vec<f64> = v.iter().map(|x| x / norm).collect();
    let run = power_stage(&m, &vec![1.0; n], steps)?;
    Ok(run.history.iter().map(|u| grid_distance_up_to_sign(u, &v)).collect())
}

/// Geometric-mean per-step contraction of `errors` over the steps whose
/// error stays above `floor`.
pub fn contraction_rate(errors: &[f64], floor: f64) -> Option<f64> {
    let last = errors.iter().rposition(|&e| e > floor)?;
    if last == 0 || errors[0] <= 0.0 {
        return None;
    }
    Some((errors[last] / errors[0]).powf(1.0 / last as f64))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AlignRunConfig {
    pub problem: AlignConfig,
    pub seeds: Vec<u64>,
}

impl Default for AlignRunConfig {
    fn default() -> Self {
        Self { problem: AlignConfig::default(), seeds: (0..200).collect() }
    }
}

/// Runs the alternating algorithm from each seed's uniformly random start.
pub fn align_runs(cfg: &AlignRunConfig) -> Result<Vec<AlignOutcome>> {
    if cfg.seeds.is_empty() {
        return Err(Error::InvalidArgument("need at least one seed".into()));
    }
    let problem = AlignmentProblem::new(cfg.problem.clone())?;
    cfg.seeds.par_iter().map(|&s| problem.run(s)).collect()
}

pub fn write_align_csv<W: Write>(runs: &[AlignOutcome], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["seed", "nu0", "nu_hat", "angle_error", "factor_error", "success"])?;
    for r in runs {
        w.write_record([
            r.seed.to_string(),
            format!("{:.10}", r.nu0),
            format!("{:.10}", r.nu_hat),
            format!("{:.6e}", r.angle_error),
            format!("{:.6e}", r.factor_error),
            u8::from(r.success).to_string(),
        ])?;
    }
    let rate = runs.iter().filter(|r| r.success).count() as f64 / runs.len().max(1) as f64;
    w.write_record(["success_rate".to_string(), String::new(), String::new(), String::new(), String::new(), format!("{rate:.6}")])?;
    w.flush().map_err(|e| Error::io("<csv>", e))?;
    Ok(())
}
