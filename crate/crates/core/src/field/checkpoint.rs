use std::io::{Read, Write};
use std::path::Path;

use super::{FieldProvider, GridSpec, ParamBlock, SdfField, TpvField};
use crate::autodiff::{NodeId, Tape};
use crate::error::{Error, Result};
use crate::geometry::Vec3;
use crate::real::Real;

const GRID_MAGIC: &[u8; 4] = b"SOCF";
const TPV_MAGIC: &[u8; 4] = b"SOCT";
const VERSION: u32 = 1;

/// Either field provider, for code that picks the representation at run time.
#[derive(Clone, Debug, PartialEq)]
pub enum AnyField<F> {
    Grid(SdfField<F>),
    Tpv(TpvField<F>),
}

impl<F: Real> AnyField<F> {
    pub fn kind(&self) -> &'static str {
        match self {
            AnyField::Grid(_) => "grid",
            AnyField::Tpv(_) => "tpv",
        }
    }

    pub fn cast<G: Real>(&self) -> AnyField<G> {
        match self {
            AnyField::Grid(f) => AnyField::Grid(f.cast()),
            AnyField::Tpv(f) => AnyField::Tpv(f.cast()),
        }
    }
}

macro_rules! delegate {
    ($self:ident, $f:ident => $e:expr) => {
        match $self {
            AnyField::Grid($f) => $e,
            AnyField::Tpv($f) => $e,
        }
    };
}

impl<F: Real> FieldProvider<F> for AnyField<F> {
    fn spec(&self) -> &GridSpec {
        delegate!(self, f => f.spec())
    }
    fn params(&self) -> &[F] {
        delegate!(self, f => f.params())
    }
    fn params_mut(&mut self) -> &mut [F] {
        delegate!(self, f => f.params_mut())
    }
    fn blocks(&self) -> Vec<ParamBlock> {
        delegate!(self, f => f.blocks())
    }
    fn num_classes(&self) -> usize {
        delegate!(self, f => f.num_classes())
    }
    fn sdf(&self, tape: &mut Tape<F>, p: Vec3) -> NodeId {
        delegate!(self, f => f.sdf(tape, p))
    }
    fn sdf_with_gradient(&self, tape: &mut Tape<F>, p: Vec3) -> (NodeId, [NodeId; 3]) {
        delegate!(self, f => f.sdf_with_gradient(tape, p))
    }
    fn color(&self, tape: &mut Tape<F>, p: Vec3) -> [NodeId; 3] {
        delegate!(self, f => f.color(tape, p))
    }
    fn logits(&self, tape: &mut Tape<F>, p: Vec3) -> Vec<NodeId> {
        delegate!(self, f => f.logits(tape, p))
    }
    fn sharpness(&self, tape: &mut Tape<F>) -> NodeId {
        delegate!(self, f => f.sharpness(tape))
    }
    fn background(&self, tape: &mut Tape<F>) -> [NodeId; 3] {
        delegate!(self, f => f.background(tape))
    }
    fn sdf_at_voxel(&self, tape: &mut Tape<F>, ijk: [usize; 3]) -> NodeId {
        delegate!(self, f => f.sdf_at_voxel(tape, ijk))
    }
    fn sdf_value(&self, p: Vec3) -> f64 {
        delegate!(self, f => f.sdf_value(p))
    }
    fn logits_value(&self, p: Vec3) -> Vec<f64> {
        delegate!(self, f => f.logits_value(p))
    }
    fn sharpness_value(&self) -> f64 {
        delegate!(self, f => f.sharpness_value())
    }
}

fn put_spec(out: &mut Vec<u8>, spec: &GridSpec, num_classes: usize) {
    for r in spec.resolution {
        out.extend_from_slice(&(r as u32).to_le_bytes());
    }
    for a in 0..3 {
        out.extend_from_slice(&spec.bounds.min[a].to_le_bytes());
    }
    out.extend_from_slice(&spec.voxel_size.to_le_bytes());
    out.extend_from_slice(&(num_classes as u32).to_le_bytes());
}

/// Serializes a field. Values are stored at the field's own width, so a
/// save/load round trip is bit-exact.
pub fn field_to_bytes<F: Real>(field: &AnyField<F>) -> Vec<u8> {
    let mut out = Vec::new();
    let (magic, spec, nc) = match field {
        AnyField::Grid(f) => (GRID_MAGIC, &f.spec, f.num_classes()),
        AnyField::Tpv(f) => (TPV_MAGIC, &f.spec, f.num_classes()),
    };
    out.extend_from_slice(magic);
    out.extend_from_slice(&VERSION.to_le_bytes());
    put_spec(&mut out, spec, nc);
    if let AnyField::Tpv(f) = field {
        out.extend_from_slice(&(f.feature_dim as u32).to_le_bytes());
        out.extend_from_slice(&(f.hidden_dim as u32).to_le_bytes());
    }
    let params = field.params();
    let width = std::mem::size_of::<F>() as u8;
    out.push(width);
    out.extend_from_slice(&(params.len() as u64).to_le_bytes());
    for &v in params {
        if width == 4 {
            out.extend_from_slice(&(v.f64() as f32).to_le_bytes());
        } else {
            out.extend_from_slice(&v.f64().to_le_bytes());
        }
    }
    out
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
    name: &'a str,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.pos + n > self.buf.len() {
            return Err(Error::parse(self.name, self.pos, "unexpected end of file"));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }
    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }
    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }
    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }
    fn err(&self, msg: impl Into<String>) -> Error {
        Error::parse(self.name, self.pos, msg)
    }
}

pub fn field_from_bytes<F: Real>(buf: &[u8], name: &str) -> Result<AnyField<F>> {
    let mut r = Reader { buf, pos: 0, name };
    let magic: [u8; 4] = r.take(4)?.try_into().expect("4 bytes");
    let tpv = match &magic {
        m if m == GRID_MAGIC => false,
        m if m == TPV_MAGIC => true,
        _ => return Err(Error::parse(name, 0, "not a field checkpoint")),
    };
    let version = r.u32()?;
    if version != VERSION {
        return Err(r.err(format!("unsupported checkpoint version {version}")));
    }
    let res = [r.u32()? as usize, r.u32()? as usize, r.u32()? as usize];
    let min = Vec3([r.f64()?, r.f64()?, r.f64()?]);
    let voxel = r.f64()?;
    let nc = r.u32()? as usize;
    let spec = GridSpec::from_origin(min, voxel, res).map_err(|e| r.err(e.to_string()))?;
    let dims = if tpv { Some((r.u32()? as usize, r.u32()? as usize)) } else { None };
    let width = r.take(1)?[0];
    if width != 4 && width != 8 {
        return Err(r.err(format!("unsupported value width {width}")));
    }
    let n = r.u64()? as usize;
    if n.checked_mul(width as usize).is_none_or(|b| b > buf.len()) {
        return Err(r.err(format!("parameter count {n} exceeds file size")));
    }
    let mut params = Vec::with_capacity(n);
    for _ in 0..n {
        let v = if width == 4 {
            f32::from_le_bytes(r.take(4)?.try_into().expect("4 bytes")) as f64
        } else {
            r.f64()?
        };
        params.push(F::of(v));
    }
    if r.pos != buf.len() {
        return Err(r.err("trailing bytes"));
    }
    let at = r.pos;
    let wrap = |e: Error| Error::parse(name, at, e.to_string());
    Ok(match dims {
        None => AnyField::Grid(SdfField::from_params(spec, nc, params).map_err(wrap)?),
        Some((fd, hd)) => AnyField::Tpv(TpvField::from_params(spec, fd, hd, nc, params).map_err(wrap)?),
    })
}

pub fn save_field<F: Real>(path: &Path, field: &AnyField<F>) -> Result<()> {
    let bytes = field_to_bytes(field);
    let mut f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(&bytes).map_err(|e| Error::io(path, e))
}

pub fn load_field<F: Real>(path: &Path) -> Result<AnyField<F>> {
    let mut buf = Vec::new();
    std::fs::File::open(path)
        .and_then(|mut f| f.read_to_end(&mut buf))
        .map_err(|e| Error::io(path, e))?;
    field_from_bytes(&buf, &path.display().to_string())
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn spec() -> GridSpec {
        GridSpec::from_origin(Vec3::new(-1.0, 0.5, -0.25), 0.25, [4, 3, 5]).unwrap()
    }

    #[test]
    fn grid_round_trip_is_bit_exact() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let f = AnyField::Grid(SdfField::<f32>::init_ground_prior(spec(), 3, &mut rng));
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("a.socf");
        save_field(&p, &f).unwrap();
        let g: AnyField<f32> = load_field(&p).unwrap();
        assert_eq!(f.params().iter().map(|v| v.to_bits()).collect::<Vec<_>>(), g.params().iter().map(|v| v.to_bits()).collect::<Vec<_>>());
        assert_eq!(f, g);
    }

    #[test]
    fn tpv_round_trip() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let f = AnyField::Tpv(TpvField::<f64>::init_random(spec(), 3, 5, 2, &mut rng));
        let g: AnyField<f64> = field_from_bytes(&field_to_bytes(&f), "mem").unwrap();
        assert_eq!(f, g);
        assert_eq!(g.kind(), "tpv");
    }

    #[test]
    fn corrupt_inputs_are_rejected() {
        let f = AnyField::Grid(SdfField::<f32>::zeros(spec(), 0));
        let bytes = field_to_bytes(&f);
        assert!(matches!(field_from_bytes::<f32>(&bytes[..bytes.len() - 1], "x"), Err(Error::Parse { .. })));
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(matches!(field_from_bytes::<f32>(&bad, "x"), Err(Error::Parse { offset: 0, .. })));
        let mut extra = bytes.clone();
        extra.push(0);
        assert!(field_from_bytes::<f32>(&extra, "x").is_err());
    }
}
