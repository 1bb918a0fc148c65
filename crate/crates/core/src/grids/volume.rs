//! Factored feature volumes with learned projection frames.

use rand::Rng;

use crate::error::{Error, Result};
use crate::geometry::{
    mat3_mul_vec, mat3_t_mul_vec, AdamConfig, RiemannianAdamState, Rotation, UnitQuaternion,
    UnitRotation2,
};
use crate::grids::decomposition::{DecompositionKind, DecompositionSpec, FactorAxes};
use crate::grids::grid::{
    bilerp_backward, bilerp_into, lerp_backward, lerp_into, FeatureGrid1D, FeatureGrid2D, Stencil1,
    Stencil2,
};

/// The learnable rotations `τ₁ … τ_T`.
#[derive(Clone, Debug, PartialEq)]
pub enum TransformSet {
    Planar(Vec<UnitRotation2>),
    Spatial(Vec<UnitQuaternion>),
}

impl TransformSet {
    pub fn identity(point_dim: usize, count: usize) -> Self {
        if point_dim == 2 {
            Self::Planar(vec![UnitRotation2::identity(); count])
        } else {
            Self::Spatial(vec![UnitQuaternion::identity(); count])
        }
    }

    /// Uniformly random rotations (uniform angle on S¹, Haar measure on S³).
    pub fn random<R: Rng>(point_dim: usize, count: usize, rng: &mut R) -> Self {
        if point_dim == 2 {
            Self::Planar(
                (0..count)
                    .map(|_| UnitRotation2::from_angle(rng.gen_range(0.0..std::f64::consts::TAU)))
                    .collect(),
            )
        } else {
            Self::Spatial(
                (0..count)
                    .map(|_| UnitQuaternion::from_uniforms(rng.gen(), rng.gen(), rng.gen()))
                    .collect(),
            )
        }
    }

    pub fn len(&self) -> usize {
        match self {
            Self::Planar(v) => v.len(),
            Self::Spatial(v) => v.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn point_dim(&self) -> usize {
        match self {
            Self::Planar(_) => 2,
            Self::Spatial(_) => 3,
        }
    }

    pub fn tangent_dim(&self) -> usize {
        match self {
            Self::Planar(_) => 1,
            Self::Spatial(_) => 3,
        }
    }

    pub fn param_dim(&self) -> usize {
        match self {
            Self::Planar(_) => 2,
            Self::Spatial(_) => 4,
        }
    }

    pub fn matrices(&self) -> Vec<[[f64; 3]; 3]> {
        match self {
            Self::Planar(v) => v.iter().map(|r| r.matrix3()).collect(),
            Self::Spatial(v) => v.iter().map(|r| r.matrix3()).collect(),
        }
    }

    /// Flat stored parameters (`2T` or `4T` scalars).
    pub fn params(&self) -> Vec<f64> {
        match self {
            Self::Planar(v) => v.iter().flat_map(|r| r.params()).collect(),
            Self::Spatial(v) => v.iter().flat_map(|r| r.params()).collect(),
        }
    }

    pub fn from_params(point_dim: usize, params: &[f64]) -> Result<Self> {
        if point_dim == 2 {
            params
                .chunks(2)
                .map(UnitRotation2::from_params)
                .collect::<Result<Vec<_>>>()
                .map(Self::Planar)
        } else {
            params
                .chunks(4)
                .map(UnitQuaternion::from_params)
                .collect::<Result<Vec<_>>>()
                .map(Self::Spatial)
        }
    }

    /// Rotation angle of each transform in radians (signed for S¹, in `[0, π]` for S³).
    pub fn angles(&self) -> Vec<f64> {
        match self {
            Self::Planar(v) => v.iter().map(|r| r.angle()).collect(),
            Self::Spatial(v) => v.iter().map(|r| r.angle()).collect(),
        }
    }

    #[inline]
    fn tangent_from_point_grad(&self, t: usize, p: &[f64; 3], g: &[f64; 3]) -> [f64; 3] {
        match self {
            Self::Planar(v) => v[t].tangent_from_point_grad(p, g),
            Self::Spatial(v) => v[t].tangent_from_point_grad(p, g),
        }
    }

    pub fn adam_state(&self, config: AdamConfig) -> RiemannianAdamState {
        match self {
            Self::Planar(v) => RiemannianAdamState::new::<UnitRotation2>(v.len(), config),
            Self::Spatial(v) => RiemannianAdamState::new::<UnitQuaternion>(v.len(), config),
        }
    }

    /// One Riemannian ADAM step with flat tangent gradients.
    pub fn adam_step(&mut self, state: &mut RiemannianAdamState, grads: &[f64], lr: f64) -> Result<()> {
        match self {
            Self::Planar(v) => state.step(v, grads, lr),
            Self::Spatial(v) => state.step(v, grads, lr),
        }
    }

    /// Pre-composes every transform with `delta` (`τ_t ← τ_t · δ`).
    pub fn precompose(&mut self, delta: &TransformSet) -> Result<()> {
        match (self, delta) {
            (Self::Planar(v), Self::Planar(d)) if d.len() == 1 => {
                v.iter_mut().for_each(|r| *r = r.compose(&d[0]));
                Ok(())
            }
            (Self::Spatial(v), Self::Spatial(d)) if d.len() == 1 => {
                v.iter_mut().for_each(|r| *r = r.compose(&d[0]).canonical());
                Ok(())
            }
            _ => Err(Error::Shape("precompose expects a single rotation of the same kind".into())),
        }
    }
}

/// Location of one factor grid inside the flat parameter vector.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct FactorLayout {
    pub offset: usize,
    pub axes: FactorAxes,
    pub nodes: usize,
    pub group: usize,
    pub level: usize,
    pub index: usize,
}

impl FactorLayout {
    pub fn len(&self, channels: usize) -> usize {
        match self.axes {
            FactorAxes::Line(_) => self.nodes * channels,
            FactorAxes::Plane(..) => self.nodes * self.nodes * channels,
        }
    }
}

/// Factor grids of a decomposition plus its transform set. All grid values
/// live in one flat vector ordered `[group][level][factor]`, each factor
/// row-major with channels innermost.
#[derive(Clone, Debug, PartialEq)]
pub struct FactoredVolume {
    pub spec: DecompositionSpec,
    pub params: Vec<f64>,
    pub transforms: TransformSet,
    layout: Vec<FactorLayout>,
}

/// Gradients with respect to the grid values and the transform tangents.
#[derive(Clone, Debug, PartialEq)]
pub struct VolumeGrads {
    pub params: Vec<f64>,
    pub tangents: Vec<f64>,
}

impl VolumeGrads {
    pub fn zeros_like(volume: &FactoredVolume) -> Self {
        Self {
            params: vec![0.0; volume.params.len()],
            tangents: vec![0.0; volume.transforms.len() * volume.transforms.tangent_dim()],
        }
    }

    pub fn clear(&mut self) {
        self.params.iter_mut().for_each(|v| *v = 0.0);
        self.tangents.iter_mut().for_each(|v| *v = 0.0);
    }
}

/// Per-query scratch space reused across samples of a batch.
#[derive(Clone, Debug)]
pub struct QueryWorkspace {
    matrices: Vec<[[f64; 3]; 3]>,
    stencils: Vec<Stencil2>,
    latents: Vec<f64>,
    dlatents: Vec<f64>,
}

impl QueryWorkspace {
    /// Refreshes the cached rotation matrices after the transforms changed.
    pub fn sync_transforms(&mut self, matrices: &[[[f64; 3]; 3]]) {
        self.matrices.clear();
        self.matrices.extend_from_slice(matrices);
    }
}

fn build_layout(spec: &DecompositionSpec) -> (Vec<FactorLayout>, usize) {
    let c = spec.group_channels();
    let mut layout = Vec::new();
    let mut offset = 0;
    for group in 0..spec.transforms {
        for level in 0..spec.levels() {
            let nodes = spec.level_resolution(level);
            for (index, &axes) in spec.kind.factor_axes().iter().enumerate() {
                let f = FactorLayout { offset, axes, nodes, group, level, index };
                offset += f.len(c);
                layout.push(f);
            }
        }
    }
    (layout, offset)
}

impl FactoredVolume {
    /// Random factor values uniform in `spec.init_range`.
    pub fn new<R: Rng>(spec: DecompositionSpec, transforms: TransformSet, rng: &mut R) -> Result<Self> {
        spec.validate()?;
        let (layout, total) = build_layout(&spec);
        let (lo, hi) = spec.init_range;
        let params = (0..total).map(|_| rng.gen_range(lo..hi)).collect();
        Self::check_transforms(&spec, &transforms)?;
        Ok(Self { spec, params, transforms, layout })
    }

    pub fn from_parts(spec: DecompositionSpec, params: Vec<f64>, transforms: TransformSet) -> Result<Self> {
        spec.validate()?;
        let (layout, total) = build_layout(&spec);
        if params.len() != total {
            return Err(Error::Shape(format!(
                "volume expects {total} grid values, got {}",
                params.len()
            )));
        }
        Self::check_transforms(&spec, &transforms)?;
        Ok(Self { spec, params, transforms, layout })
    }

    fn check_transforms(spec: &DecompositionSpec, t: &TransformSet) -> Result<()> {
        if t.len() != spec.transforms || t.point_dim() != spec.point_dim() {
            return Err(Error::Shape(format!(
                "spec wants {} rotations in {}D, got {} in {}D",
                spec.transforms,
                spec.point_dim(),
                t.len(),
                t.point_dim()
            )));
        }
        Ok(())
    }

    pub fn layout(&self) -> &[FactorLayout] {
        &self.layout
    }

    pub fn output_dim(&self) -> usize {
        self.spec.output_dim()
    }

    /// Values of one factor grid.
    pub fn factor_values(&self, f: &FactorLayout) -> &[f64] {
        &self.params[f.offset..f.offset + f.len(self.spec.group_channels())]
    }

    pub fn factor_grid_1d(&self, f: &FactorLayout) -> Option<FeatureGrid1D> {
        match f.axes {
            FactorAxes::Line(_) => FeatureGrid1D::new(f.nodes, self.spec.group_channels(), self.factor_values(f).to_vec()).ok(),
            FactorAxes::Plane(..) => None,
        }
    }

    pub fn factor_grid_2d(&self, f: &FactorLayout) -> Option<FeatureGrid2D> {
        match f.axes {
            FactorAxes::Plane(..) => {
                FeatureGrid2D::new(f.nodes, f.nodes, self.spec.group_channels(), self.factor_values(f).to_vec()).ok()
            }
            FactorAxes::Line(_) => None,
        }
    }

    pub fn check_finite(&self) -> Result<()> {
        if self.params.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFiniteParameter("volume.grids".into()));
        }
        if self.transforms.params().iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFiniteParameter("volume.transforms".into()));
        }
        Ok(())
    }

    pub fn workspace(&self) -> QueryWorkspace {
        let n = self.layout.len();
        let c = self.spec.group_channels();
        QueryWorkspace {
            matrices: self.transforms.matrices(),
            stencils: vec![Stencil2::default(); n],
            latents: vec![0.0; n * c],
            dlatents: vec![0.0; n * c],
        }
    }

    /// Latent `Z` at `p`.
    pub fn query(&self, p: &[f64]) -> Vec<f64> {
        let mut ws = self.workspace();
        let mut out = vec![0.0; self.output_dim()];
        self.query_into(p, &mut ws, &mut out);
        out
    }

    /// Forward pass into `out`, leaving interpolation state in `ws` for
    /// [`FactoredVolume::backward`]. `ws` must come from
    /// [`FactoredVolume::workspace`] after the latest transform update.
    pub fn query_into(&self, p: &[f64], ws: &mut QueryWorkspace, out: &mut [f64]) {
        let spec = &self.spec;
        let c = spec.group_channels();
        let fpl = spec.factors_per_level();
        let inv = 1.0 / spec.bound;
        let mode = spec.boundary;
        let mut q = [0.0; 3];
        q[..p.len()].copy_from_slice(p);
        let mut o = 0;
        let mut fi = 0;
        for g in 0..spec.transforms {
            let r = mat3_mul_vec(&ws.matrices[g], &q);
            let r = [r[0] * inv, r[1] * inv, r[2] * inv];
            for _level in 0..spec.levels() {
                let first = fi;
                for _ in 0..fpl {
                    let f = &self.layout[fi];
                    let vals = &self.params[f.offset..];
                    let lat = &mut ws.latents[fi * c..fi * c + c];
                    match f.axes {
                        FactorAxes::Line(a) => {
                            let s = Stencil1::new(f.nodes, r[a], mode);
                            lerp_into(vals, c, &s, lat);
                            ws.stencils[fi].a = s;
                        }
                        FactorAxes::Plane(a, b) => {
                            let s = Stencil2::new(f.nodes, f.nodes, r[a], r[b], mode);
                            bilerp_into(vals, f.nodes, c, &s, lat);
                            ws.stencils[fi] = s;
                        }
                    }
                    fi += 1;
                }
                let lat = &ws.latents[first * c..fi * c];
                match spec.kind {
                    DecompositionKind::VectorMatrix => {
                        for pair in 0..3 {
                            let (va, vb) = (&lat[2 * pair * c..], &lat[(2 * pair + 1) * c..]);
                            for ch in 0..c {
                                out[o + ch] = va[ch] * vb[ch];
                            }
                            o += c;
                        }
                    }
                    _ => {
                        for ch in 0..c {
                            let mut z = lat[ch];
                            for k in 1..fpl {
                                z *= lat[k * c + ch];
                            }
                            out[o + ch] = z;
                        }
                        o += c;
                    }
                }
            }
        }
    }

    /// Backward pass for the last [`FactoredVolume::query_into`] call at `p`.
    /// Accumulates into `grads` and, if given, into `d_point`.
    pub fn backward(
        &self,
        p: &[f64],
        ws: &mut QueryWorkspace,
        d_out: &[f64],
        grads: &mut VolumeGrads,
        mut d_point: Option<&mut [f64]>,
    ) {
        let spec = &self.spec;
        let c = spec.group_channels();
        let fpl = spec.factors_per_level();
        let inv = 1.0 / spec.bound;
        let td = self.transforms.tangent_dim();
        let mut q = [0.0; 3];
        q[..p.len()].copy_from_slice(p);
        let mut o = 0;
        let mut fi = 0;
        for g in 0..spec.transforms {
            let mut d_rot = [0.0; 3];
            for _level in 0..spec.levels() {
                let first = fi;
                {
                    let lat = &ws.latents[first * c..(first + fpl) * c];
                    let dl = &mut ws.dlatents[first * c..(first + fpl) * c];
                    match spec.kind {
                        DecompositionKind::VectorMatrix => {
                            for pair in 0..3 {
                                for ch in 0..c {
                                    let dz = d_out[o + ch];
                                    dl[2 * pair * c + ch] = dz * lat[(2 * pair + 1) * c + ch];
                                    dl[(2 * pair + 1) * c + ch] = dz * lat[2 * pair * c + ch];
                                }
                                o += c;
                            }
                        }
                        _ => {
                            for ch in 0..c {
                                let dz = d_out[o + ch];
                                for k in 0..fpl {
                                    let mut prod = dz;
                                    for m in 0..fpl {
                                        if m != k {
                                            prod *= lat[m * c + ch];
                                        }
                                    }
                                    dl[k * c + ch] = prod;
                                }
                            }
                            o += c;
                        }
                    }
                }
                for k in 0..fpl {
                    let f = &self.layout[first + k];
                    let len = f.len(c);
                    let vals = &self.params[f.offset..f.offset + len];
                    let gv = &mut grads.params[f.offset..f.offset + len];
                    let dl = &ws.dlatents[(first + k) * c..(first + k + 1) * c];
                    match f.axes {
                        FactorAxes::Line(a) => {
                            d_rot[a] += lerp_backward(vals, c, &ws.stencils[first + k].a, dl, gv) * inv;
                        }
                        FactorAxes::Plane(a, b) => {
                            let d = bilerp_backward(vals, f.nodes, c, &ws.stencils[first + k], dl, gv);
                            d_rot[a] += d[0] * inv;
                            d_rot[b] += d[1] * inv;
                        }
                    }
                }
                fi += fpl;
            }
            let t = self.transforms.tangent_from_point_grad(g, &q, &d_rot);
            for k in 0..td {
                grads.tangents[g * td + k] += t[k];
            }
            if let Some(dp) = d_point.as_deref_mut() {
                let back = mat3_t_mul_vec(&ws.matrices[g], &d_rot);
                for (k, v) in dp.iter_mut().enumerate() {
                    *v += back[k];
                }
            }
        }
    }

    /// Parameter count per (transform, level, factor) column.
    pub fn columns(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        let c = self.spec.group_channels();
        self.layout.iter().map(move |f| (f.offset, f.len(c)))
    }
}

/// ℓ∞ scene contraction into `(−2, 2)³`.
pub fn contract(p: [f64; 3]) -> [f64; 3] {
    let n = p.iter().fold(0.0_f64, |m, v| m.max(v.abs()));
    if n <= 1.0 {
        p
    } else {
        let s = (2.0 - 1.0 / n) / n;
        [p[0] * s, p[1] * s, p[2] * s]
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn kinds() -> [DecompositionKind; 4] {
        [
            DecompositionKind::Cp2d,
            DecompositionKind::Cp3d,
            DecompositionKind::KPlanes,
            DecompositionKind::VectorMatrix,
        ]
    }

    fn random_point(rng: &mut ChaCha8Rng, dim: usize, r: f64) -> Vec<f64> {
        (0..dim).map(|_| rng.gen_range(-r..r)).collect()
    }

    /// Dense voxel tensor implied by a single-level, single-group
    /// decomposition, evaluated at grid node `idx`.
    fn dense_at_node(vol: &FactoredVolume, idx: &[usize]) -> Vec<f64> {
        let c = vol.spec.group_channels();
        let node = |f: &FactorLayout, a: usize, ch: usize| vol.factor_values(f)[idx[a] * c + ch];
        let plane = |f: &FactorLayout, a: usize, b: usize, ch: usize| {
            vol.factor_values(f)[(idx[a] * f.nodes + idx[b]) * c + ch]
        };
        let lat = |f: &FactorLayout, ch: usize| match f.axes {
            FactorAxes::Line(a) => node(f, a, ch),
            FactorAxes::Plane(a, b) => plane(f, a, b, ch),
        };
        let l = vol.layout();
        match vol.spec.kind {
            DecompositionKind::VectorMatrix => (0..3)
                .flat_map(|pair| (0..c).map(move |ch| (pair, ch)))
                .map(|(pair, ch)| lat(&l[2 * pair], ch) * lat(&l[2 * pair + 1], ch))
                .collect(),
            _ => (0..c).map(|ch| l.iter().map(|f| lat(f, ch)).product()).collect(),
        }
    }

    #[test]
    fn identity_transforms_match_dense_oracle_at_nodes() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for kind in kinds() {
            let spec = DecompositionSpec::new(kind, 3, 5);
            let dim = spec.point_dim();
            let vol = FactoredVolume::new(spec, TransformSet::identity(dim, 1), &mut rng).unwrap();
            for _ in 0..50 {
                let idx: Vec<usize> = (0..dim).map(|_| rng.gen_range(0..5)).collect();
                let p: Vec<f64> = idx.iter().map(|&i| -1.0 + 2.0 * i as f64 / 4.0).collect();
                let z = vol.query(&p);
                let d = dense_at_node(&vol, &idx);
                for (a, b) in z.iter().zip(&d) {
                    assert!((a - b).abs() < 1e-9, "{kind:?}");
                }
            }
        }
    }

    #[test]
    fn cp_matches_trilinear_of_dense_tensor() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let spec = DecompositionSpec::new(DecompositionKind::Cp3d, 2, 6);
        let vol = FactoredVolume::new(spec, TransformSet::identity(3, 1), &mut rng).unwrap();
        let n = 6;
        for _ in 0..50 {
            let p = random_point(&mut rng, 3, 1.0);
            let z = vol.query(&p);
            // trilinear interpolation of the materialized tensor
            let t: Vec<(usize, f64)> = p
                .iter()
                .map(|&x| {
                    let t = (x + 1.0) * 0.5 * (n - 1) as f64;
                    let i = (t.floor() as usize).min(n - 2);
                    (i, t - i as f64)
                })
                .collect();
            let mut acc = vec![0.0; 2];
            for corner in 0..8 {
                let mut idx = vec![0; 3];
                let mut w = 1.0;
                for a in 0..3 {
                    let bit = (corner >> a) & 1;
                    idx[a] = t[a].0 + bit;
                    w *= if bit == 1 { t[a].1 } else { 1.0 - t[a].1 };
                }
                for (ch, v) in dense_at_node(&vol, &idx).iter().enumerate() {
                    acc[ch] += w * v;
                }
            }
            for ch in 0..2 {
                assert!((z[ch] - acc[ch]).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn constant_grids_ignore_point_and_rotation() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        for kind in kinds() {
            let spec = DecompositionSpec::new(kind, 4, 4).with_transforms(2).with_scales(vec![1, 2]);
            let dim = spec.point_dim();
            let mut vol = FactoredVolume::new(spec, TransformSet::random(dim, 2, &mut rng), &mut rng).unwrap();
            vol.params.iter_mut().for_each(|v| *v = 0.7);
            let a = vol.query(&random_point(&mut rng, dim, 1.5));
            let b = vol.query(&random_point(&mut rng, dim, 1.5));
            assert_eq!(a.len(), vol.output_dim());
            for (x, y) in a.iter().zip(&b) {
                assert!((x - y).abs() < 1e-14);
            }
        }
    }

    #[test]
    fn permuting_transforms_permutes_channel_groups() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let spec = DecompositionSpec::new(DecompositionKind::Cp2d, 64, 16).with_transforms(8);
        let vol = FactoredVolume::new(spec.clone(), TransformSet::random(2, 8, &mut rng), &mut rng).unwrap();
        // swap groups 1 and 5: both their rotations and their grids
        let perm = [0, 5, 2, 3, 4, 1, 6, 7];
        let TransformSet::Planar(r) = &vol.transforms else { unreachable!() };
        let rot: Vec<_> = perm.iter().map(|&g| r[g]).collect();
        let group_len = vol.params.len() / 8;
        let params: Vec<f64> = perm
            .iter()
            .flat_map(|&g| vol.params[g * group_len..(g + 1) * group_len].to_vec())
            .collect();
        let other = FactoredVolume::from_parts(spec, params, TransformSet::Planar(rot)).unwrap();
        let p = [0.3, -0.4];
        let (a, b) = (vol.query(&p), other.query(&p));
        for (k, &g) in perm.iter().enumerate() {
            assert_eq!(&a[g * 8..g * 8 + 8], &b[k * 8..k * 8 + 8]);
        }
    }

    /// f(θ) = ⟨w, Z(p)⟩ for random w; checks grid-value, tangent and point
    /// gradients against central differences.
    #[test]
    fn gradients_match_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let h = 1e-6;
        for kind in kinds() {
            for _ in 0..5 {
                let spec = DecompositionSpec::new(kind, 4, 5).with_transforms(2).with_scales(vec![1, 2]).with_bound(1.3);
                let dim = spec.point_dim();
                let vol = FactoredVolume::new(spec, TransformSet::random(dim, 2, &mut rng), &mut rng).unwrap();
                let w: Vec<f64> = (0..vol.output_dim()).map(|_| rng.gen_range(-1.0..1.0)).collect();
                let p = random_point(&mut rng, dim, 0.9);
                let f = |v: &FactoredVolume, p: &[f64]| -> f64 { v.query(p).iter().zip(&w).map(|(a, b)| a * b).sum() };
                let mut ws = vol.workspace();
                let mut z = vec![0.0; vol.output_dim()];
                vol.query_into(&p, &mut ws, &mut z);
                let mut grads = VolumeGrads::zeros_like(&vol);
                let mut dp = vec![0.0; dim];
                vol.backward(&p, &mut ws, &w, &mut grads, Some(&mut dp));

                for _ in 0..20 {
                    let i = rng.gen_range(0..vol.params.len());
                    let mut a = vol.clone();
                    a.params[i] += h;
                    let mut b = vol.clone();
                    b.params[i] -= h;
                    let fd = (f(&a, &p) - f(&b, &p)) / (2.0 * h);
                    assert!((fd - grads.params[i]).abs() <= 1e-6 + 1e-4 * fd.abs());
                }
                for k in 0..dim {
                    let mut a = p.clone();
                    a[k] += h;
                    let mut b = p.clone();
                    b[k] -= h;
                    let fd = (f(&vol, &a) - f(&vol, &b)) / (2.0 * h);
                    assert!((fd - dp[k]).abs() <= 1e-6 + 1e-4 * fd.abs(), "{kind:?} point {fd} {}", dp[k]);
                }
                let td = vol.transforms.tangent_dim();
                for t in 0..2 {
                    for k in 0..td {
                        let mut xi = vec![0.0; td];
                        xi[k] = h;
                        let perturb = |sign: f64| {
                            let mut v = vol.clone();
                            let xi: Vec<f64> = xi.iter().map(|x| x * sign).collect();
                            match &mut v.transforms {
                                TransformSet::Planar(r) => r[t] = r[t].exp_map(&xi).unwrap(),
                                TransformSet::Spatial(r) => r[t] = r[t].exp_map(&xi).unwrap(),
                            }
                            f(&v, &p)
                        };
                        let fd = (perturb(1.0) - perturb(-1.0)) / (2.0 * h);
                        let an = grads.tangents[t * td + k];
                        assert!((fd - an).abs() <= 1e-6 + 1e-4 * fd.abs(), "{kind:?} tangent {fd} {an}");
                    }
                }
            }
        }
    }

    #[test]
    fn contraction() {
        assert_eq!(contract([0.5, 0.0, 0.0]), [0.5, 0.0, 0.0]);
        assert_eq!(contract([4.0, 0.0, 0.0]), [1.75, 0.0, 0.0]);
        let mut prev = 0.0;
        for k in 1..60 {
            let r = 1.5_f64.powi(k);
            let c = contract([r, -0.3 * r, 0.1]);
            let n = c.iter().fold(0.0_f64, |m, v| m.max(v.abs()));
            assert!(n < 2.0 && n >= prev);
            prev = n;
        }
        assert!(2.0 - prev < 1e-6);
    }

    #[test]
    fn contraction_is_continuous_and_lipschitz() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let inf = |a: [f64; 3], b: [f64; 3]| (0..3).fold(0.0_f64, |m, k| m.max(f64::abs(a[k] - b[k])));
        for _ in 0..10_000 {
            let a = [rng.gen_range(-5.0..5.0), rng.gen_range(-5.0..5.0), rng.gen_range(-5.0..5.0)];
            let b = [rng.gen_range(-5.0..5.0), rng.gen_range(-5.0..5.0), rng.gen_range(-5.0..5.0)];
            let na = a.iter().fold(0.0_f64, |m, v: &f64| m.max(v.abs()));
            let nb = b.iter().fold(0.0_f64, |m, v: &f64| m.max(v.abs()));
            if na > 1.0 && nb > 1.0 {
                assert!(inf(contract(a), contract(b)) <= inf(a, b) + 1e-12);
            }
        }
        // continuity across the unit sphere of the ∞-norm
        let e = 1e-9;
        let inside = contract([1.0 - e, 0.2, 0.0]);
        let outside = contract([1.0 + e, 0.2, 0.0]);
        assert!(inf(inside, outside) < 1e-8);
    }
}
