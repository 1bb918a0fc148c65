//! Binary checkpoints of hybrid fields.
//!
//! Layout, all integers and floats little-endian:
//!
//! ```text
//! magic "TLTDCKPT" | version u32 | header length u32 | header (TOML FieldConfig)
//! grid count u64      | grid values f32, row-major factor order
//! transform count u64 | transform parameters f64, (re, im) or (w, x, y, z)
//! decoder count u64   | decoder parameters f32
//! ```

use std::io::{Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::field::{FieldConfig, FourierEncoding, HybridField, Mlp};
use crate::grids::{FactoredVolume, TransformSet};

pub const MAGIC: &[u8; 8] = b"TLTDCKPT";
pub const VERSION: u32 = 1;

/// Architecture description that rebuilds `field` with fresh parameters.
pub fn field_config(field: &HybridField) -> FieldConfig {
    let sizes = &field.decoder.sizes;
    FieldConfig {
        decomposition: field.volume.spec.clone(),
        fourier_levels: field.encoding.levels,
        include_identity: field.encoding.include_identity,
        hidden: sizes[1..sizes.len() - 1].to_vec(),
        output_dim: field.output_dim(),
        activation: field.decoder.output,
        contract: field.contract,
    }
}

pub fn write_checkpoint<W: Write>(field: &HybridField, mut out: W) -> Result<()> {
    let header = toml::to_string(&field_config(field)).map_err(|e| Error::Checkpoint(e.to_string()))?;
    let io = |e| Error::io("<checkpoint>", e);
    out.write_all(MAGIC).map_err(io)?;
    out.write_all(&VERSION.to_le_bytes()).map_err(io)?;
    out.write_all(&(header.len() as u32).to_le_bytes()).map_err(io)?;
    out.write_all(header.as_bytes()).map_err(io)?;
    let mut buf = Vec::new();
    buf.extend_from_slice(&(field.volume.params.len() as u64).to_le_bytes());
    for v in &field.volume.params {
        buf.extend_from_slice(&(*v as f32).to_le_bytes());
    }
    let tau = field.volume.transforms.params();
    buf.extend_from_slice(&(tau.len() as u64).to_le_bytes());
    for v in &tau {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    buf.extend_from_slice(&(field.decoder.params.len() as u64).to_le_bytes());
    for v in &field.decoder.params {
        buf.extend_from_slice(&(*v as f32).to_le_bytes());
    }
    out.write_all(&buf).map_err(io)
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        let end = end.ok_or_else(|| Error::Checkpoint(format!("truncated while reading {what}")))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().unwrap()))
    }

    fn count(&mut self, what: &str, width: usize) -> Result<usize> {
        let n = u64::from_le_bytes(self.take(8, what)?.try_into().unwrap());
        let n = usize::try_from(n).map_err(|_| Error::Checkpoint(format!("{what} count overflows")))?;
        if n.checked_mul(width).map_or(true, |b| b > self.bytes.len() - self.pos) {
            return Err(Error::Checkpoint(format!("truncated while reading {what}")));
        }
        Ok(n)
    }

    fn f32s(&mut self, what: &str) -> Result<Vec<f64>> {
        let n = self.count(what, 4)?;
        Ok(self.take(4 * n, what)?.chunks_exact(4).map(|c| f64::from(f32::from_le_bytes(c.try_into().unwrap()))).collect())
    }

    fn f64s(&mut self, what: &str) -> Result<Vec<f64>> {
        let n = self.count(what, 8)?;
        Ok(self.take(8 * n, what)?.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect())
    }
}

pub fn read_checkpoint<R: Read>(mut input: R) -> Result<HybridField> {
    let mut bytes = Vec::new();
    input.read_to_end(&mut bytes).map_err(|e| Error::io("<checkpoint>", e))?;
    let mut c = Cursor { bytes: &bytes, pos: 0 };
    if c.take(8, "magic")? != MAGIC {
        return Err(Error::Checkpoint("bad magic, not a checkpoint file".into()));
    }
    let version = c.u32("version")?;
    if version != VERSION {
        return Err(Error::Checkpoint(format!("unsupported version {version}, expected {VERSION}")));
    }
    let len = c.u32("header length")? as usize;
    let header = std::str::from_utf8(c.take(len, "header")?).map_err(|e| Error::Checkpoint(e.to_string()))?;
    let cfg: FieldConfig = toml::from_str(header).map_err(|e| Error::Checkpoint(format!("header: {e}")))?;
    let grids = c.f32s("grid values")?;
    let tau = c.f64s("transforms")?;
    let decoder = c.f32s("decoder")?;
    if c.pos != bytes.len() {
        return Err(Error::Checkpoint(format!("{} trailing bytes", bytes.len() - c.pos)));
    }
    let transforms = TransformSet::from_params(cfg.decomposition.point_dim(), &tau)?;
    let volume = FactoredVolume::from_parts(cfg.decomposition.clone(), grids, transforms)?;
    let decoder = Mlp::from_parts(cfg.decoder_sizes(), decoder, cfg.activation)?;
    let field = HybridField::from_parts(volume, FourierEncoding::new(cfg.fourier_levels, cfg.include_identity), decoder, cfg.contract)?;
    field.check_finite()?;
    Ok(field)
}

pub fn save_checkpoint(field: &HybridField, path: &Path) -> Result<()> {
    let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = std::io::BufWriter::new(file);
    write_checkpoint(field, &mut w)?;
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint(path: &Path) -> Result<HybridField> {
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    read_checkpoint(std::io::BufReader::new(file))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::field::OutputActivation;
    use crate::grids::{DecompositionKind, DecompositionSpec};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn field(kind: DecompositionKind) -> HybridField {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let spec = DecompositionSpec::new(kind, 4, 6).with_transforms(2).with_scales(vec![1, 2]).with_bound(1.3);
        let dim = spec.point_dim();
        let cfg = FieldConfig::new(spec, vec![8, 5], 3, OutputActivation::Sigmoid).with_fourier_levels(2);
        HybridField::new(&cfg, TransformSet::random(dim, 2, &mut rng), &mut rng).unwrap()
    }

    #[test]
    fn roundtrip_keeps_transforms_exact_and_values_to_f32() {
        for kind in [DecompositionKind::Cp2d, DecompositionKind::KPlanes, DecompositionKind::VectorMatrix] {
            let f = field(kind);
            let mut buf = Vec::new();
            write_checkpoint(&f, &mut buf).unwrap();
            let g = read_checkpoint(&buf[..]).unwrap();
            assert_eq!(g.volume.transforms, f.volume.transforms);
            assert_eq!(field_config(&g), field_config(&f));
            for (a, b) in f.volume.params.iter().chain(&f.decoder.params).zip(g.volume.params.iter().chain(&g.decoder.params)) {
                assert_eq!(*b, f64::from(*a as f32));
            }
            let mut again = Vec::new();
            write_checkpoint(&g, &mut again).unwrap();
            assert_eq!(again, buf);
        }
    }

    #[test]
    fn header_layout() {
        let f = field(DecompositionKind::Cp2d);
        let mut buf = Vec::new();
        write_checkpoint(&f, &mut buf).unwrap();
        assert_eq!(&buf[..8], MAGIC);
        assert_eq!(u32::from_le_bytes(buf[8..12].try_into().unwrap()), VERSION);
        let len = u32::from_le_bytes(buf[12..16].try_into().unwrap()) as usize;
        let n = u64::from_le_bytes(buf[16 + len..24 + len].try_into().unwrap()) as usize;
        assert_eq!(n, f.volume.params.len());
        let first = f32::from_le_bytes(buf[24 + len..28 + len].try_into().unwrap());
        assert_eq!(first, f.volume.params[0] as f32);
    }

    #[test]
    fn corrupt_files_are_rejected() {
        let f = field(DecompositionKind::KPlanes);
        let mut buf = Vec::new();
        write_checkpoint(&f, &mut buf).unwrap();
        let mut bad = buf.clone();
        bad[0] = b'X';
        assert!(matches!(read_checkpoint(&bad[..]), Err(Error::Checkpoint(_))));
        let mut bad = buf.clone();
        bad[8] = 9;
        assert!(read_checkpoint(&bad[..]).unwrap_err().to_string().contains("version"));
        for cut in [4, 20, buf.len() / 2, buf.len() - 1] {
            assert!(read_checkpoint(&buf[..cut]).is_err());
        }
        let mut long = buf.clone();
        long.push(0);
        assert!(read_checkpoint(&long[..]).is_err());
    }

    #[test]
    fn missing_file_names_the_path() {
        let err = load_checkpoint(Path::new("/nonexistent/model.ckpt")).unwrap_err();
        assert!(err.to_string().contains("/nonexistent/model.ckpt"));
    }
}
