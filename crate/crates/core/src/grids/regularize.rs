//! Grid regularizers: total variation and the group-sparsity ℓ2,1 penalty.

use crate::grids::decomposition::FactorAxes;
use crate::grids::grid::{FeatureGrid1D, FeatureGrid2D};
use crate::grids::volume::FactoredVolume;

/// Mean squared adjacent difference of a `[n][c]` line. Accumulates
/// `scale · ∂/∂v` into `grad` when given.
pub fn tv_line(values: &[f64], n: usize, c: usize, scale: f64, grad: Option<&mut [f64]>) -> f64 {
    if n < 2 {
        return 0.0;
    }
    let count = ((n - 1) * c) as f64;
    let mut sum = 0.0;
    let mut grad = grad;
    for i in 0..n - 1 {
        for ch in 0..c {
            let d = values[(i + 1) * c + ch] - values[i * c + ch];
            sum += d * d;
            if let Some(g) = grad.as_deref_mut() {
                let k = 2.0 * d * scale / count;
                g[(i + 1) * c + ch] += k;
                g[i * c + ch] -= k;
            }
        }
    }
    sum / count
}

/// Mean squared adjacent difference of a `[n0][n1][c]` plane, averaged over
/// all horizontal and vertical neighbor pairs.
pub fn tv_plane(values: &[f64], n0: usize, n1: usize, c: usize, scale: f64, grad: Option<&mut [f64]>) -> f64 {
    let pairs = n0 * n1.saturating_sub(1) + n0.saturating_sub(1) * n1;
    if pairs == 0 {
        return 0.0;
    }
    let count = (pairs * c) as f64;
    let mut sum = 0.0;
    let mut grad = grad;
    let mut visit = |a: usize, b: usize| {
        for ch in 0..c {
            let d = values[b * c + ch] - values[a * c + ch];
            sum += d * d;
            if let Some(g) = grad.as_deref_mut() {
                let k = 2.0 * d * scale / count;
                g[b * c + ch] += k;
                g[a * c + ch] -= k;
            }
        }
    };
    for i in 0..n0 {
        for j in 0..n1 {
            let here = i * n1 + j;
            if j + 1 < n1 {
                visit(here, here + 1);
            }
            if i + 1 < n0 {
                visit(here, here + n1);
            }
        }
    }
    sum / count
}

pub fn tv_grid_1d(grid: &FeatureGrid1D) -> f64 {
    tv_line(&grid.values, grid.resolution, grid.channels, 0.0, None)
}

pub fn tv_grid_2d(grid: &FeatureGrid2D) -> f64 {
    tv_plane(&grid.values, grid.n0, grid.n1, grid.channels, 0.0, None)
}

/// Mean over factor grids of their total variation. With `grad`, adds
/// `weight · ∂TV/∂params`.
pub fn tv_volume(volume: &FactoredVolume, weight: f64, grad: Option<&mut [f64]>) -> f64 {
    let c = volume.spec.group_channels();
    let factors = volume.layout().len() as f64;
    let scale = weight / factors;
    let mut grad = grad;
    let mut total = 0.0;
    for f in volume.layout() {
        let len = f.len(c);
        let vals = &volume.params[f.offset..f.offset + len];
        let g = grad.as_deref_mut().map(|g| &mut g[f.offset..f.offset + len]);
        total += match f.axes {
            FactorAxes::Line(_) => tv_line(vals, f.nodes, c, scale, g),
            FactorAxes::Plane(..) => tv_plane(vals, f.nodes, f.nodes, c, scale, g),
        };
    }
    total / factors
}

/// Sum over (transform, level, factor) columns of the column ℓ2 norm. The
/// subgradient at a zero column is taken as zero.
pub fn l21_volume(volume: &FactoredVolume, weight: f64, grad: Option<&mut [f64]>) -> f64 {
    let mut grad = grad;
    let mut total = 0.0;
    for (offset, len) in volume.columns() {
        let col = &volume.params[offset..offset + len];
        let norm = col.iter().map(|v| v * v).sum::<f64>().sqrt();
        total += norm;
        if let Some(g) = grad.as_deref_mut() {
            if norm > 0.0 {
                for (gi, v) in g[offset..offset + len].iter_mut().zip(col) {
                    *gi += weight * v / norm;
                }
            }
        }
    }
    total
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grids::decomposition::{DecompositionKind, DecompositionSpec};
    use crate::grids::volume::TransformSet;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn tv_of_constant_is_zero_and_ramp_is_known() {
        assert_eq!(tv_line(&[2.0; 10], 5, 2, 1.0, None), 0.0);
        // unit steps: every squared difference is 1
        let ramp: Vec<f64> = (0..6).map(|i| i as f64).collect();
        assert!((tv_line(&ramp, 6, 1, 1.0, None) - 1.0).abs() < 1e-15);
        // plane f(i, j) = i: half the pairs differ by 1
        let plane: Vec<f64> = (0..16).map(|k| (k / 4) as f64).collect();
        assert!((tv_plane(&plane, 4, 4, 1, 1.0, None) - 0.5).abs() < 1e-15);
    }

    fn random_volume(kind: DecompositionKind, seed: u64) -> FactoredVolume {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let spec = DecompositionSpec::new(kind, 4, 5).with_transforms(2).with_scales(vec![1, 2]);
        let dim = spec.point_dim();
        FactoredVolume::new(spec, TransformSet::identity(dim, 2), &mut rng).unwrap()
    }

    #[test]
    fn regularizer_gradients_match_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for kind in [DecompositionKind::Cp2d, DecompositionKind::KPlanes, DecompositionKind::VectorMatrix] {
            let vol = random_volume(kind, 9);
            for reg in [tv_volume, l21_volume] {
                let mut g = vec![0.0; vol.params.len()];
                reg(&vol, 0.7, Some(&mut g));
                for _ in 0..30 {
                    let i = rng.gen_range(0..vol.params.len());
                    let h = 1e-6;
                    let mut a = vol.clone();
                    a.params[i] += h;
                    let mut b = vol.clone();
                    b.params[i] -= h;
                    let fd = 0.7 * (reg(&a, 0.0, None) - reg(&b, 0.0, None)) / (2.0 * h);
                    assert!((fd - g[i]).abs() < 1e-7 + 1e-5 * fd.abs(), "{fd} {}", g[i]);
                }
            }
        }
    }

    #[test]
    fn l21_zero_column_has_zero_subgradient() {
        let mut vol = random_volume(DecompositionKind::Cp2d, 1);
        let (offset, len) = vol.columns().next().unwrap();
        vol.params[offset..offset + len].iter_mut().for_each(|v| *v = 0.0);
        let mut g = vec![0.0; vol.params.len()];
        l21_volume(&vol, 1.0, Some(&mut g));
        assert!(g[offset..offset + len].iter().all(|&v| v == 0.0));
        assert!(g.iter().all(|v| v.is_finite()));
    }

    #[test]
    fn l21_counts_each_column_once() {
        let mut vol = random_volume(DecompositionKind::KPlanes, 2);
        vol.params.iter_mut().for_each(|v| *v = 0.0);
        let columns: Vec<_> = vol.columns().collect();
        assert_eq!(columns.len(), 2 * 2 * 3);
        for &(o, _) in &columns {
            vol.params[o] = 3.0;
        }
        assert!((l21_volume(&vol, 1.0, None) - 36.0).abs() < 1e-12);
    }
}
