//! File formats: CVOL volumes, KTRJ trajectories, KDAT k-space data, CMAP
//! coil maps, binary PGM slices and model checkpoints.
//!
//! Binary formats start with a four-letter tag followed by `\0\0\0\1`; all
//! integers and floats are little-endian.

use std::fs;
use std::path::Path;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::forward::{CoilSet, KSpaceData, KSpaceTrajectory};
use crate::rotation::{Rotation, RotationSet};
use crate::volume::{ComplexVolume, Dims};
use crate::wcrr::{ConvLayer, FilterBank, Potentials, WcrrModel};

pub const CVOL_MAGIC: [u8; 8] = *b"CVOL\0\0\0\x01";
pub const KTRJ_MAGIC: [u8; 8] = *b"KTRJ\0\0\0\x01";
pub const KDAT_MAGIC: [u8; 8] = *b"KDAT\0\0\0\x01";
pub const CMAP_MAGIC: [u8; 8] = *b"CMAP\0\0\0\x01";

pub const CHECKPOINT_MANIFEST: &str = "manifest.toml";
pub const CHECKPOINT_FORMAT: u32 = 1;

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn new(buf: &'a [u8], magic: &[u8; 8]) -> Result<Self> {
        if buf.len() < 8 || &buf[..8] != magic {
            return Err(Error::Format(format!(
                "missing {} header",
                String::from_utf8_lossy(&magic[..4])
            )));
        }
        Ok(Self { buf, pos: 8 })
    }

    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.buf.len());
        let end = end.ok_or_else(|| Error::Format(format!("truncated at byte {}", self.pos)))?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<usize> {
        let b = self.take(4)?;
        Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]) as usize)
    }

    /// Checks that exactly `count * width` bytes remain.
    fn expect_payload(&self, count: Option<usize>, width: usize) -> Result<()> {
        let want = count.and_then(|c| c.checked_mul(width));
        let have = self.buf.len() - self.pos;
        if want != Some(have) {
            return Err(Error::Format(format!(
                "payload is {have} bytes, header implies {}",
                want.map_or("an overflowing size".to_string(), |w| w.to_string())
            )));
        }
        Ok(())
    }

    fn f32s(&mut self, count: usize) -> Result<Vec<f64>> {
        let b = self.take(count * 4)?;
        let out: Vec<f64> = b
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64)
            .collect();
        if out.iter().any(|v| !v.is_finite()) {
            return Err(Error::Format("non-finite value in payload".into()));
        }
        Ok(out)
    }

    fn f64s(&mut self, count: usize) -> Result<Vec<f64>> {
        let b = self.take(count * 8)?;
        Ok(b.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes"))).collect())
    }
}

fn read_dims(r: &mut Reader) -> Result<Dims> {
    let dims = [r.u32()?, r.u32()?, r.u32()?];
    if dims.contains(&0) {
        return Err(Error::Format(format!("zero dimension in {dims:?}")));
    }
    Ok(dims)
}

fn voxels(dims: Dims) -> Option<usize> {
    dims[0].checked_mul(dims[1])?.checked_mul(dims[2])
}

fn dims_u32(dims: Dims) -> Result<[u32; 3]> {
    let mut out = [0u32; 3];
    for (o, &d) in out.iter_mut().zip(&dims) {
        *o = u32::try_from(d).map_err(|_| Error::InvalidArgument(format!("dimension {d} exceeds u32")))?;
    }
    Ok(out)
}

fn count_u32(n: usize, what: &str) -> Result<u32> {
    u32::try_from(n).map_err(|_| Error::InvalidArgument(format!("{what} count {n} exceeds u32")))
}

fn push_complex(out: &mut Vec<u8>, z: &[Complex64]) {
    for v in z {
        out.extend_from_slice(&(v.re as f32).to_le_bytes());
        out.extend_from_slice(&(v.im as f32).to_le_bytes());
    }
}

fn complex_from_pairs(v: &[f64]) -> Vec<Complex64> {
    v.chunks_exact(2).map(|p| Complex64::new(p[0], p[1])).collect()
}

pub fn encode_cvol(v: &ComplexVolume) -> Result<Vec<u8>> {
    let mut out = Vec::with_capacity(20 + 8 * v.len());
    out.extend_from_slice(&CVOL_MAGIC);
    for d in dims_u32(v.dims())? {
        out.extend_from_slice(&d.to_le_bytes());
    }
    push_complex(&mut out, v.data());
    Ok(out)
}

pub fn decode_cvol(bytes: &[u8]) -> Result<ComplexVolume> {
    let mut r = Reader::new(bytes, &CVOL_MAGIC)?;
    let dims = read_dims(&mut r)?;
    let n = voxels(dims);
    r.expect_payload(n, 8)?;
    let vals = r.f32s(2 * n.expect("checked"))?;
    ComplexVolume::from_vec(dims, complex_from_pairs(&vals))
}

pub fn encode_ktrj(t: &KSpaceTrajectory) -> Result<Vec<u8>> {
    let mut out = Vec::with_capacity(12 + 24 * t.len());
    out.extend_from_slice(&KTRJ_MAGIC);
    out.extend_from_slice(&count_u32(t.len(), "sample")?.to_le_bytes());
    for p in t.points() {
        for c in p {
            out.extend_from_slice(&c.to_le_bytes());
        }
    }
    Ok(out)
}

pub fn decode_ktrj(bytes: &[u8]) -> Result<KSpaceTrajectory> {
    let mut r = Reader::new(bytes, &KTRJ_MAGIC)?;
    let m = r.u32()?;
    r.expect_payload(m.checked_mul(3), 8)?;
    let vals = r.f64s(3 * m)?;
    let points = vals.chunks_exact(3).map(|c| [c[0], c[1], c[2]]).collect();
    KSpaceTrajectory::new(points).map_err(|e| Error::Format(e.to_string()))
}

pub fn encode_kdat(y: &KSpaceData) -> Result<Vec<u8>> {
    let mut out = Vec::with_capacity(16 + 8 * y.data().len());
    out.extend_from_slice(&KDAT_MAGIC);
    out.extend_from_slice(&count_u32(y.coils(), "coil")?.to_le_bytes());
    out.extend_from_slice(&count_u32(y.samples(), "sample")?.to_le_bytes());
    push_complex(&mut out, y.data());
    Ok(out)
}

pub fn decode_kdat(bytes: &[u8]) -> Result<KSpaceData> {
    let mut r = Reader::new(bytes, &KDAT_MAGIC)?;
    let c = r.u32()?;
    let m = r.u32()?;
    if c == 0 || m == 0 {
        return Err(Error::Format("empty k-space data".into()));
    }
    let n = c.checked_mul(m);
    r.expect_payload(n, 8)?;
    let vals = r.f32s(2 * n.expect("checked"))?;
    KSpaceData::new(c, m, complex_from_pairs(&vals))
}

/// Coil maps: tag, `u32` coil count, three `u32` dims, then every map as
/// interleaved `f32` pairs in CVOL voxel order.
pub fn encode_cmap(coils: &CoilSet) -> Result<Vec<u8>> {
    let n = coils.dims().iter().product::<usize>();
    let mut out = Vec::with_capacity(24 + 8 * n * coils.len());
    out.extend_from_slice(&CMAP_MAGIC);
    out.extend_from_slice(&count_u32(coils.len(), "coil")?.to_le_bytes());
    for d in dims_u32(coils.dims())? {
        out.extend_from_slice(&d.to_le_bytes());
    }
    for m in coils.maps() {
        push_complex(&mut out, m.data());
    }
    Ok(out)
}

pub fn decode_cmap(bytes: &[u8]) -> Result<CoilSet> {
    let mut r = Reader::new(bytes, &CMAP_MAGIC)?;
    let c = r.u32()?;
    if c == 0 {
        return Err(Error::Format("coil map file with zero coils".into()));
    }
    let dims = read_dims(&mut r)?;
    let n = voxels(dims);
    r.expect_payload(n.and_then(|n| n.checked_mul(c)), 8)?;
    let n = n.expect("checked");
    let maps = (0..c)
        .map(|_| ComplexVolume::from_vec(dims, complex_from_pairs(&r.f32s(2 * n)?)))
        .collect::<Result<Vec<_>>>()?;
    CoilSet::new(maps).map_err(|e| Error::Format(e.to_string()))
}

/// Grayscale image with 8-bit samples, row-major.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct GrayImage {
    pub width: usize,
    pub height: usize,
    pub pixels: Vec<u8>,
}

pub fn encode_pgm(img: &GrayImage) -> Result<Vec<u8>> {
    if img.pixels.len() != img.width * img.height || img.width == 0 || img.height == 0 {
        return Err(Error::InvalidArgument("image size does not match pixel count".into()));
    }
    let mut out = format!("P5\n{} {}\n255\n", img.width, img.height).into_bytes();
    out.extend_from_slice(&img.pixels);
    Ok(out)
}

/// Binary graymap with `maxval <= 255`; `#` comments allowed in the header.
pub fn decode_pgm(bytes: &[u8]) -> Result<GrayImage> {
    if bytes.len() < 2 || &bytes[..2] != b"P5" {
        return Err(Error::Format("not a binary PGM".into()));
    }
    let mut pos = 2;
    let mut fields = [0usize; 3];
    for f in fields.iter_mut() {
        loop {
            match bytes.get(pos) {
                Some(b'#') => {
                    while bytes.get(pos).is_some_and(|&b| b != b'\n') {
                        pos += 1;
                    }
                }
                Some(b) if b.is_ascii_whitespace() => pos += 1,
                Some(_) => break,
                None => return Err(Error::Format("truncated PGM header".into())),
            }
        }
        let start = pos;
        while bytes.get(pos).is_some_and(u8::is_ascii_digit) {
            pos += 1;
        }
        let text = std::str::from_utf8(&bytes[start..pos]).expect("ascii digits");
        *f = text.parse().map_err(|_| Error::Format("bad PGM header number".into()))?;
    }
    let [width, height, maxval] = fields;
    if width == 0 || height == 0 || maxval == 0 || maxval > 255 {
        return Err(Error::Format(format!("unsupported PGM {width}x{height} maxval {maxval}")));
    }
    if !bytes.get(pos).is_some_and(u8::is_ascii_whitespace) {
        return Err(Error::Format("PGM header not terminated".into()));
    }
    pos += 1;
    let n = width.checked_mul(height).ok_or_else(|| Error::Format("PGM size overflows".into()))?;
    if bytes.len() - pos != n {
        return Err(Error::Format(format!("PGM raster is {} bytes, expected {n}", bytes.len() - pos)));
    }
    Ok(GrayImage { width, height, pixels: bytes[pos..].to_vec() })
}

fn read_file(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(|e| Error::Io(std::io::Error::new(e.kind(), format!("{}: {e}", path.display()))))
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    fs::write(path, bytes).map_err(|e| Error::Io(std::io::Error::new(e.kind(), format!("{}: {e}", path.display()))))
}

pub fn read_cvol(path: &Path) -> Result<ComplexVolume> {
    decode_cvol(&read_file(path)?)
}

pub fn write_cvol(path: &Path, v: &ComplexVolume) -> Result<()> {
    write_file(path, &encode_cvol(v)?)
}

pub fn read_ktrj(path: &Path) -> Result<KSpaceTrajectory> {
    decode_ktrj(&read_file(path)?)
}

pub fn write_ktrj(path: &Path, t: &KSpaceTrajectory) -> Result<()> {
    write_file(path, &encode_ktrj(t)?)
}

pub fn read_kdat(path: &Path) -> Result<KSpaceData> {
    decode_kdat(&read_file(path)?)
}

pub fn write_kdat(path: &Path, y: &KSpaceData) -> Result<()> {
    write_file(path, &encode_kdat(y)?)
}

pub fn read_cmap(path: &Path) -> Result<CoilSet> {
    decode_cmap(&read_file(path)?)
}

pub fn write_cmap(path: &Path, c: &CoilSet) -> Result<()> {
    write_file(path, &encode_cmap(c)?)
}

pub fn read_pgm(path: &Path) -> Result<GrayImage> {
    decode_pgm(&read_file(path)?)
}

pub fn write_pgm(path: &Path, img: &GrayImage) -> Result<()> {
    write_file(path, &encode_pgm(img)?)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TensorEntry {
    pub name: String,
    pub file: String,
    pub shape: Vec<usize>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CheckpointManifest {
    pub format: u32,
    pub channel_plan: Vec<usize>,
    pub kernel_size: usize,
    pub knots: usize,
    pub sigma_min: f64,
    pub sigma_max: f64,
    pub beta: f64,
    pub seed: u64,
    pub zero_mean: bool,
    pub norm_grid: Dims,
    /// Spectral norm at save time; recomputed on load.
    pub norm: f64,
    pub rotations: Vec<Rotation>,
    pub tensors: Vec<TensorEntry>,
}

const MAX_CHANNELS: usize = 4096;
const MAX_KERNEL: usize = 15;

impl CheckpointManifest {
    fn from_model(model: &WcrrModel) -> Self {
        let bank = model.bank();
        let pot = model.potentials();
        let mut tensors: Vec<TensorEntry> = bank
            .layers()
            .iter()
            .enumerate()
            .map(|(i, l)| TensorEntry {
                name: format!("layer{i}"),
                file: format!("layer{i}.f32"),
                shape: vec![l.outputs, l.inputs, l.ksize, l.ksize, l.ksize],
            })
            .collect();
        tensors.push(TensorEntry { name: "log_beta".into(), file: "log_beta.f32".into(), shape: vec![1] });
        tensors.push(TensorEntry {
            name: "spline".into(),
            file: "spline.f32".into(),
            shape: vec![pot.channels, pot.knots],
        });
        Self {
            format: CHECKPOINT_FORMAT,
            channel_plan: bank.channel_plan(),
            kernel_size: bank.layers()[0].ksize,
            knots: pot.knots,
            sigma_min: pot.sigma_min,
            sigma_max: pot.sigma_max,
            beta: pot.beta(),
            seed: model.seed(),
            zero_mean: bank.zero_mean(),
            norm_grid: model.norm_grid(),
            norm: bank.norm(),
            rotations: model.rotations().elements().to_vec(),
            tensors,
        }
    }

    /// Shape expected for every tensor, in order.
    fn expected_tensors(&self) -> Vec<(String, Vec<usize>)> {
        let k = self.kernel_size;
        let mut out: Vec<(String, Vec<usize>)> = self
            .channel_plan
            .windows(2)
            .enumerate()
            .map(|(i, w)| (format!("layer{i}"), vec![w[1], w[0], k, k, k]))
            .collect();
        out.push(("log_beta".into(), vec![1]));
        out.push(("spline".into(), vec![*self.channel_plan.last().unwrap_or(&0), self.knots]));
        out
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Format(m));
        if self.format != CHECKPOINT_FORMAT {
            return bad(format!("unsupported checkpoint format {}", self.format));
        }
        if self.channel_plan.len() < 2 || self.channel_plan.iter().any(|&c| c == 0 || c > MAX_CHANNELS) {
            return bad(format!("bad channel plan {:?}", self.channel_plan));
        }
        if self.kernel_size == 0 || self.kernel_size > MAX_KERNEL || self.knots < 2 || self.knots > MAX_CHANNELS {
            return bad("bad kernel size or knot count".into());
        }
        if self.norm_grid.iter().any(|&n| n == 0 || n > 1024) {
            return bad(format!("bad norm grid {:?}", self.norm_grid));
        }
        let want = self.expected_tensors();
        if self.tensors.len() != want.len() {
            return bad(format!("expected {} tensors, found {}", want.len(), self.tensors.len()));
        }
        for (t, (name, shape)) in self.tensors.iter().zip(&want) {
            if &t.name != name || &t.shape != shape {
                return bad(format!("tensor {} {:?} does not match {name} {shape:?}", t.name, t.shape));
            }
            let plain = !t.file.is_empty()
                && t.file.chars().all(|c| c.is_ascii_alphanumeric() || matches!(c, '_' | '-' | '.'))
                && !t.file.starts_with('.');
            if !plain {
                return bad(format!("tensor file name {:?} must be a plain file name", t.file));
            }
        }
        if self.rotations.is_empty() {
            return bad("empty rotation set".into());
        }
        Ok(())
    }
}

pub fn decode_checkpoint_manifest(text: &str) -> Result<CheckpointManifest> {
    let m: CheckpointManifest = toml::from_str(text).map_err(|e| Error::Format(e.to_string()))?;
    m.validate()?;
    Ok(m)
}

fn f32_blob(values: &[f64]) -> Vec<u8> {
    values.iter().flat_map(|v| (*v as f32).to_le_bytes()).collect()
}

fn decode_f32_blob(bytes: &[u8], count: usize) -> Result<Vec<f64>> {
    if bytes.len() != count * 4 {
        return Err(Error::Format(format!("blob has {} bytes, expected {}", bytes.len(), count * 4)));
    }
    let out: Vec<f64> = bytes.chunks_exact(4).map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64).collect();
    if out.iter().any(|v| !v.is_finite()) {
        return Err(Error::Format("non-finite checkpoint value".into()));
    }
    Ok(out)
}

/// Writes `manifest.toml` plus one `f32` blob per tensor into `dir`.
pub fn save_checkpoint(dir: &Path, model: &WcrrModel) -> Result<()> {
    fs::create_dir_all(dir)?;
    let manifest = CheckpointManifest::from_model(model);
    let bank = model.bank();
    for (t, layer) in manifest.tensors.iter().zip(bank.layers()) {
        write_file(&dir.join(&t.file), &f32_blob(&layer.weights))?;
    }
    let pot = model.potentials();
    let n = manifest.tensors.len();
    write_file(&dir.join(&manifest.tensors[n - 2].file), &f32_blob(&[pot.b]))?;
    write_file(&dir.join(&manifest.tensors[n - 1].file), &f32_blob(&pot.c))?;
    let text = toml::to_string(&manifest).map_err(|e| Error::Format(e.to_string()))?;
    write_file(&dir.join(CHECKPOINT_MANIFEST), text.as_bytes())
}

/// Loads a checkpoint; the spectral norm is recomputed from the stored kernels.
pub fn load_checkpoint(dir: &Path) -> Result<WcrrModel> {
    let text = fs::read_to_string(dir.join(CHECKPOINT_MANIFEST))?;
    let m = decode_checkpoint_manifest(&text)?;
    let mut blobs = Vec::with_capacity(m.tensors.len());
    for t in &m.tensors {
        let count = t.shape.iter().product();
        blobs.push(decode_f32_blob(&read_file(&dir.join(&t.file))?, count)?);
    }
    let n = blobs.len();
    let layers = m
        .channel_plan
        .windows(2)
        .zip(&blobs[..n - 2])
        .map(|(w, b)| ConvLayer::new(w[0], w[1], m.kernel_size, b.clone()))
        .collect::<Result<Vec<_>>>()?;
    let bank = FilterBank::from_layers(layers)?.with_zero_mean(m.zero_mean);
    let j = m.channel_plan[m.channel_plan.len() - 1];
    let mut pot = Potentials::new(j, m.knots, m.sigma_min, m.sigma_max, m.beta)?;
    pot.b = blobs[n - 2][0];
    pot.c = blobs[n - 1].clone();
    let rotations = RotationSet::new(m.rotations.clone())?;
    let model = WcrrModel::new(bank, pot, rotations, m.norm_grid, m.seed)?;
    let drift = (model.bank().norm() - m.norm).abs() / m.norm.abs().max(f64::MIN_POSITIVE);
    if drift > 1e-3 {
        log::warn!("checkpoint norm {} differs from recomputed {}", m.norm, model.bank().norm());
    }
    Ok(model)
}
