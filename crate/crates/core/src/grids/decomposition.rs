//! Decomposition families and their Project / Reduce rules.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::mat3_mul_vec;
use crate::grids::grid::BoundaryMode;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DecompositionKind {
    /// Two 1D factors over a 2D domain.
    Cp2d,
    /// Three 1D factors over a 3D domain.
    Cp3d,
    /// XY, YZ, XZ planes with multiplicative reduction (tri-plane / K-Planes).
    KPlanes,
    /// Three vector–matrix pairs, multiplied pairwise then concatenated.
    VectorMatrix,
}

/// Which input axes a factor reads.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum FactorAxes {
    Line(usize),
    Plane(usize, usize),
}

const CP2D_AXES: [FactorAxes; 2] = [FactorAxes::Line(0), FactorAxes::Line(1)];
const CP3D_AXES: [FactorAxes; 3] = [FactorAxes::Line(0), FactorAxes::Line(1), FactorAxes::Line(2)];
const KPLANES_AXES: [FactorAxes; 3] = [
    FactorAxes::Plane(0, 1),
    FactorAxes::Plane(1, 2),
    FactorAxes::Plane(0, 2),
];
const VM_AXES: [FactorAxes; 6] = [
    FactorAxes::Line(0),
    FactorAxes::Plane(1, 2),
    FactorAxes::Line(1),
    FactorAxes::Plane(0, 2),
    FactorAxes::Line(2),
    FactorAxes::Plane(0, 1),
];

impl DecompositionKind {
    pub fn factor_axes(&self) -> &'static [FactorAxes] {
        match self {
            Self::Cp2d => &CP2D_AXES,
            Self::Cp3d => &CP3D_AXES,
            Self::KPlanes => &KPLANES_AXES,
            Self::VectorMatrix => &VM_AXES,
        }
    }

    pub fn point_dim(&self) -> usize {
        match self {
            Self::Cp2d => 2,
            _ => 3,
        }
    }

    /// Reduced latent channels per factor channel and resolution level.
    pub fn reduce_multiplier(&self) -> usize {
        match self {
            Self::VectorMatrix => 3,
            _ => 1,
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            Self::Cp2d => "cp2d",
            Self::Cp3d => "cp3d",
            Self::KPlanes => "kplanes",
            Self::VectorMatrix => "vm",
        }
    }
}

fn default_scales() -> Vec<usize> {
    vec![1]
}

fn default_init() -> (f64, f64) {
    (-0.1, 0.1)
}

fn default_bound() -> f64 {
    1.0
}

/// Shape and combination rules of a factored feature volume.
///
/// `channels` counts factor channels per resolution level summed over all
/// transform groups; each of the `transforms` groups owns
/// `channels / transforms` of them. Level `r` uses grids with
/// `base_resolution · scales[r]` nodes per axis, which is how the per-level
/// scale `s_r` enters: projected coordinates stay normalized while the node
/// density grows with `s_r`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DecompositionSpec {
    pub kind: DecompositionKind,
    pub channels: usize,
    pub base_resolution: usize,
    #[serde(default = "default_scales")]
    pub scales: Vec<usize>,
    #[serde(default = "one")]
    pub transforms: usize,
    #[serde(default)]
    pub boundary: BoundaryMode,
    /// Half-extent of the domain mapped onto the grids' `[−1, 1]`.
    #[serde(default = "default_bound")]
    pub bound: f64,
    /// Uniform initialization range of factor values.
    #[serde(default = "default_init")]
    pub init_range: (f64, f64),
}

fn one() -> usize {
    1
}

impl DecompositionSpec {
    pub fn new(kind: DecompositionKind, channels: usize, base_resolution: usize) -> Self {
        Self {
            kind,
            channels,
            base_resolution,
            scales: default_scales(),
            transforms: 1,
            boundary: BoundaryMode::Clamp,
            bound: 1.0,
            init_range: default_init(),
        }
    }

    pub fn with_transforms(mut self, t: usize) -> Self {
        self.transforms = t;
        self
    }

    pub fn with_scales(mut self, scales: Vec<usize>) -> Self {
        self.scales = scales;
        self
    }

    pub fn with_bound(mut self, bound: f64) -> Self {
        self.bound = bound;
        self
    }

    pub fn with_init_range(mut self, low: f64, high: f64) -> Self {
        self.init_range = (low, high);
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.channels == 0 {
            return Err(Error::InvalidArgument("channels must be ≥ 1".into()));
        }
        if self.transforms == 0 || self.channels % self.transforms != 0 {
            return Err(Error::InvalidArgument(format!(
                "transform count {} must divide the channel count {}",
                self.transforms, self.channels
            )));
        }
        if self.scales.is_empty() {
            return Err(Error::InvalidArgument("at least one resolution level is required".into()));
        }
        if self.scales.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::InvalidArgument(format!(
                "resolution scales must be strictly increasing, got {:?}",
                self.scales
            )));
        }
        if self.base_resolution * self.scales[0] < 2 {
            return Err(Error::InvalidArgument("grids need at least 2 nodes per axis".into()));
        }
        if !(self.bound.is_finite() && self.bound > 0.0) {
            return Err(Error::InvalidArgument(format!("bound must be positive, got {}", self.bound)));
        }
        if !(self.init_range.0 < self.init_range.1) {
            return Err(Error::InvalidArgument(format!("empty init range {:?}", self.init_range)));
        }
        Ok(())
    }

    pub fn levels(&self) -> usize {
        self.scales.len()
    }

    pub fn level_resolution(&self, level: usize) -> usize {
        self.base_resolution * self.scales[level]
    }

    pub fn group_channels(&self) -> usize {
        self.channels / self.transforms
    }

    pub fn factors_per_level(&self) -> usize {
        self.kind.factor_axes().len()
    }

    /// Channel dimension `d` of the reduced latent `Z`.
    pub fn output_dim(&self) -> usize {
        self.kind.reduce_multiplier() * self.levels() * self.channels
    }

    /// Latent channels produced by one transform group.
    pub fn group_output_dim(&self) -> usize {
        self.output_dim() / self.transforms
    }

    pub fn point_dim(&self) -> usize {
        self.kind.point_dim()
    }

    /// Number of scalar grid parameters.
    pub fn parameter_count(&self) -> usize {
        let per_group: usize = (0..self.levels())
            .map(|l| {
                let n = self.level_resolution(l);
                self.kind
                    .factor_axes()
                    .iter()
                    .map(|a| match a {
                        FactorAxes::Line(_) => n,
                        FactorAxes::Plane(..) => n * n,
                    })
                    .sum::<usize>()
                    * self.group_channels()
            })
            .sum();
        per_group * self.transforms
    }
}

/// Projects `p` for factor `factor_index` (0-based): rotate first, then
/// select the factor's axes, then normalize by the domain bound.
///
/// `rotation` is a 3×3 matrix (2D rotations embed in the xy block).
pub fn project(spec: &DecompositionSpec, factor_index: usize, rotation: &[[f64; 3]; 3], p: &[f64]) -> Vec<f64> {
    let mut q = [0.0; 3];
    q[..p.len()].copy_from_slice(p);
    let r = mat3_mul_vec(rotation, &q);
    let inv = 1.0 / spec.bound;
    match spec.kind.factor_axes()[factor_index] {
        FactorAxes::Line(a) => vec![r[a] * inv],
        FactorAxes::Plane(a, b) => vec![r[a] * inv, r[b] * inv],
    }
}

/// Reduces per-factor latents of one transform group into its output.
///
/// `latents` is indexed `[level][factor]`, each of length
/// `spec.group_channels()`. Within a level factors are multiplied
/// elementwise (pairwise then concatenated for vector–matrix); levels are
/// concatenated.
pub fn reduce(spec: &DecompositionSpec, latents: &[Vec<Vec<f64>>]) -> Result<Vec<f64>> {
    let c = spec.group_channels();
    let f = spec.factors_per_level();
    if latents.len() != spec.levels() || latents.iter().any(|l| l.len() != f || l.iter().any(|z| z.len() != c)) {
        return Err(Error::Shape(format!(
            "reduce expects {} levels × {f} factors × {c} channels",
            spec.levels()
        )));
    }
    let mut out = Vec::with_capacity(spec.group_output_dim());
    for level in latents {
        match spec.kind {
            DecompositionKind::VectorMatrix => {
                for pair in level.chunks(2) {
                    out.extend(pair[0].iter().zip(&pair[1]).map(|(a, b)| a * b));
                }
            }
            _ => {
                let mut z = level[0].clone();
                for other in &level[1..] {
                    for (a, b) in z.iter_mut().zip(other) {
                        *a *= b;
                    }
                }
                out.extend(z);
            }
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    const I3: [[f64; 3]; 3] = [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]];

    #[test]
    fn axis_aligned_projections() {
        let tri = DecompositionSpec::new(DecompositionKind::KPlanes, 4, 8);
        assert_eq!(project(&tri, 0, &I3, &[0.3, -0.2, 0.9]), vec![0.3, -0.2]);
        let vm = DecompositionSpec::new(DecompositionKind::VectorMatrix, 4, 8);
        assert_eq!(project(&vm, 4, &I3, &[0.1, 0.2, 0.7]), vec![0.7]);
        assert_eq!(project(&vm, 3, &I3, &[0.1, 0.2, 0.7]), vec![0.1, 0.7]);
    }

    #[test]
    fn rotate_then_select() {
        // 90° about z maps x to y
        let rz = [[0.0, -1.0, 0.0], [1.0, 0.0, 0.0], [0.0, 0.0, 1.0]];
        let tri = DecompositionSpec::new(DecompositionKind::KPlanes, 4, 8);
        assert_eq!(project(&tri, 0, &rz, &[1.0, 0.0, 0.0]), vec![0.0, 1.0]);
    }

    #[test]
    fn reduce_shapes() {
        let cp = DecompositionSpec::new(DecompositionKind::Cp3d, 5, 8);
        let z = reduce(&cp, &[vec![vec![1.0; 5]; 3]]).unwrap();
        assert_eq!(z, vec![1.0; 5]);

        let vm = DecompositionSpec::new(DecompositionKind::VectorMatrix, 2, 8);
        let lat: Vec<Vec<f64>> = (0..6).map(|i| vec![i as f64 + 1.0, 1.0]).collect();
        let z = reduce(&vm, &[lat]).unwrap();
        assert_eq!(z, vec![2.0, 1.0, 12.0, 1.0, 30.0, 1.0]);

        let kp = DecompositionSpec::new(DecompositionKind::KPlanes, 8, 8).with_scales(vec![1, 2, 4, 8]);
        assert_eq!(kp.output_dim(), 32);
        let z = reduce(&kp, &vec![vec![vec![0.5; 8]; 3]; 4]).unwrap();
        assert_eq!(z.len(), 32);
        assert!(reduce(&kp, &[vec![vec![0.5; 8]; 3]]).is_err());
    }

    #[test]
    fn validation() {
        let s = DecompositionSpec::new(DecompositionKind::Cp2d, 64, 128).with_transforms(8);
        assert!(s.validate().is_ok());
        assert_eq!(s.group_channels(), 8);
        assert!(s.clone().with_transforms(7).validate().is_err());
        assert!(s.clone().with_scales(vec![2, 1]).validate().is_err());
        assert!(s.clone().with_scales(vec![]).validate().is_err());
    }

    #[test]
    fn parameter_count_doubles_with_resolution_for_lines() {
        let a = DecompositionSpec::new(DecompositionKind::Cp2d, 64, 64);
        let b = DecompositionSpec::new(DecompositionKind::Cp2d, 64, 128);
        assert_eq!(2 * a.parameter_count(), b.parameter_count());
        let vm = DecompositionSpec::new(DecompositionKind::VectorMatrix, 3, 4).with_transforms(3);
        assert_eq!(vm.parameter_count(), 3 * (4 * 3 + 16 * 3));
    }
}
