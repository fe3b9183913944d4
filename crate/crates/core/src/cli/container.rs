//! On-disk dataset container: a directory holding `manifest.json`, the
//! experiment `config.json` and one raw little-endian binary per array.

use std::fs;
use std::path::{Path, PathBuf};

use ndarray::{ArrayD, IxDyn};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::{Grid, C64};

pub const SCHEMA_VERSION: u32 = 1;
pub const MANIFEST: &str = "manifest.json";
pub const CONFIG: &str = "config.json";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Dtype {
    #[serde(rename = "complex64-le")]
    Complex64,
    #[serde(rename = "float32-le")]
    Float32,
}

impl Dtype {
    pub fn size(self) -> usize {
        match self {
            Dtype::Complex64 => 8,
            Dtype::Float32 => 4,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ArrayEntry {
    pub name: String,
    pub shape: Vec<usize>,
    pub dtype: Dtype,
    pub file: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridInfo {
    pub size: usize,
    pub fov_m: f64,
    pub voxel_m: f64,
}

impl From<Grid> for GridInfo {
    fn from(g: Grid) -> Self {
        Self { size: g.size, fov_m: g.fov_m, voxel_m: g.voxel_size() }
    }
}

impl GridInfo {
    pub fn grid(&self) -> Grid {
        Grid::new(self.size, self.fov_m)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Provenance {
    pub seed: u64,
    /// SHA-256 of the serialized experiment configuration.
    pub config_hash: String,
    pub tool_version: String,
}

/// Which spiral arms each repetition holds.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Undersampling {
    pub arm_count: usize,
    pub arms_per_rep: usize,
    pub arms: Vec<Vec<usize>>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Manifest {
    pub schema_version: u32,
    /// Producing stage: `phantom`, `recon`, `wave` or `invert`.
    pub kind: String,
    /// Reconstruction method, for containers downstream of `recon`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub method: Option<String>,
    pub grid: GridInfo,
    pub arrays: Vec<ArrayEntry>,
    pub provenance: Provenance,
    pub undersampling: Undersampling,
}

impl Manifest {
    pub fn entry(&self, name: &str) -> Option<&ArrayEntry> {
        self.arrays.iter().find(|a| a.name == name)
    }
}

/// Real or complex array read from a container.
#[derive(Clone, Debug, PartialEq)]
pub enum Stored {
    Complex(ArrayD<C64>),
    Real(ArrayD<f32>),
}

fn encode_complex(a: &ArrayD<C64>) -> Vec<u8> {
    let mut out = Vec::with_capacity(a.len() * 8);
    for z in a.iter() {
        out.extend_from_slice(&(z.re as f32).to_le_bytes());
        out.extend_from_slice(&(z.im as f32).to_le_bytes());
    }
    out
}

fn encode_real(a: &ArrayD<f32>) -> Vec<u8> {
    a.iter().flat_map(|x| x.to_le_bytes()).collect()
}

fn f32_at(bytes: &[u8], i: usize) -> f32 {
    f32::from_le_bytes(bytes[4 * i..4 * i + 4].try_into().expect("4 bytes"))
}

/// Container being written into a temporary sibling directory; nothing
/// appears at the destination until [`Writer::commit`].
pub struct Writer {
    dest: PathBuf,
    tmp: PathBuf,
    pub manifest: Manifest,
    committed: bool,
}

impl Writer {
    pub fn create(dest: &Path, manifest: Manifest) -> Result<Self> {
        let name = dest
            .file_name()
            .ok_or_else(|| Error::Invalid(format!("bad output path {}", dest.display())))?
            .to_string_lossy()
            .into_owned();
        let tmp = dest.with_file_name(format!(".{name}.partial-{}", std::process::id()));
        if tmp.exists() {
            fs::remove_dir_all(&tmp)?;
        }
        fs::create_dir_all(&tmp)?;
        Ok(Self { dest: dest.to_path_buf(), tmp, manifest, committed: false })
    }

    pub fn path(&self) -> &Path {
        &self.tmp
    }

    fn register(&mut self, name: &str, shape: &[usize], dtype: Dtype, bytes: &[u8]) -> Result<()> {
        if self.manifest.entry(name).is_some() {
            return Err(Error::Invalid(format!("array {name} written twice")));
        }
        let file = format!("{name}.bin");
        fs::write(self.tmp.join(&file), bytes)?;
        self.manifest.arrays.push(ArrayEntry { name: name.into(), shape: shape.to_vec(), dtype, file });
        Ok(())
    }

    pub fn complex<D: ndarray::Dimension>(&mut self, name: &str, a: &ndarray::Array<C64, D>) -> Result<()> {
        let a = a.view().into_dyn().to_owned();
        self.register(name, a.shape(), Dtype::Complex64, &encode_complex(&a))
    }

    pub fn real<D: ndarray::Dimension>(&mut self, name: &str, a: &ndarray::Array<f64, D>) -> Result<()> {
        let a = a.view().into_dyn().mapv(|x| x as f32);
        self.register(name, a.shape(), Dtype::Float32, &encode_real(&a))
    }

    pub fn stored(&mut self, name: &str, a: &Stored) -> Result<()> {
        match a {
            Stored::Complex(c) => self.register(name, c.shape(), Dtype::Complex64, &encode_complex(c)),
            Stored::Real(r) => self.register(name, r.shape(), Dtype::Float32, &encode_real(r)),
        }
    }

    pub fn text(&self, file: &str, contents: &str) -> Result<()> {
        fs::write(self.tmp.join(file), contents)?;
        Ok(())
    }

    /// Writes the manifest and moves the container into place, replacing
    /// any previous container at the destination.
    pub fn commit(mut self) -> Result<PathBuf> {
        self.text(MANIFEST, &serde_json::to_string_pretty(&self.manifest)?)?;
        if self.dest.exists() {
            fs::remove_dir_all(&self.dest)?;
        }
        fs::rename(&self.tmp, &self.dest)?;
        self.committed = true;
        Ok(self.dest.clone())
    }

    /// Moves the partial contents to `dest` instead (used to keep a failed
    /// run's checkpoint), without a manifest.
    pub fn salvage(mut self, dest: &Path) -> Result<()> {
        if dest.exists() {
            fs::remove_dir_all(dest)?;
        }
        fs::rename(&self.tmp, dest)?;
        self.committed = true;
        Ok(())
    }
}

impl Drop for Writer {
    fn drop(&mut self) {
        if !self.committed {
            let _ = fs::remove_dir_all(&self.tmp);
        }
    }
}

/// Read access to a committed container.
#[derive(Clone, Debug)]
pub struct Container {
    pub dir: PathBuf,
    pub manifest: Manifest,
}

impl Container {
    pub fn open(dir: &Path) -> Result<Self> {
        let path = dir.join(MANIFEST);
        let text =
            fs::read_to_string(&path).map_err(|e| Error::Data(format!("cannot read {}: {e}", path.display())))?;
        let value: serde_json::Value = serde_json::from_str(&text)?;
        match value.get("schema_version").and_then(|v| v.as_u64()) {
            Some(v) if v == SCHEMA_VERSION as u64 => {}
            Some(v) => return Err(Error::Data(format!("unsupported schema version {v} (expected {SCHEMA_VERSION})"))),
            None => return Err(Error::Data(format!("{} has no schema_version", path.display()))),
        }
        let manifest: Manifest = serde_json::from_value(value)?;
        Ok(Self { dir: dir.to_path_buf(), manifest })
    }

    pub fn has(&self, name: &str) -> bool {
        self.manifest.entry(name).is_some()
    }

    pub fn read(&self, name: &str) -> Result<Stored> {
        let e = self
            .manifest
            .entry(name)
            .ok_or_else(|| Error::Data(format!("{} has no array {name}", self.dir.display())))?;
        let bytes =
            fs::read(self.dir.join(&e.file)).map_err(|err| Error::Data(format!("cannot read {}: {err}", e.file)))?;
        let count: usize = e.shape.iter().product();
        if bytes.len() != count * e.dtype.size() {
            return Err(Error::Data(format!("{}: {} bytes, expected {}", e.file, bytes.len(), count * e.dtype.size())));
        }
        let shape = IxDyn(&e.shape);
        Ok(match e.dtype {
            Dtype::Complex64 => Stored::Complex(
                ArrayD::from_shape_vec(
                    shape,
                    (0..count)
                        .map(|i| C64::new(f32_at(&bytes, 2 * i) as f64, f32_at(&bytes, 2 * i + 1) as f64))
                        .collect(),
                )
                .expect("length checked"),
            ),
            Dtype::Float32 => Stored::Real(
                ArrayD::from_shape_vec(shape, (0..count).map(|i| f32_at(&bytes, i)).collect()).expect("length checked"),
            ),
        })
    }

    pub fn complex<D: ndarray::Dimension>(&self, name: &str) -> Result<ndarray::Array<C64, D>> {
        match self.read(name)? {
            Stored::Complex(a) => {
                a.into_dimensionality().map_err(|_| Error::Data(format!("array {name} has the wrong rank")))
            }
            Stored::Real(_) => Err(Error::Data(format!("array {name} is not complex"))),
        }
    }

    pub fn real<D: ndarray::Dimension>(&self, name: &str) -> Result<ndarray::Array<f64, D>> {
        match self.read(name)? {
            Stored::Real(a) => a
                .mapv(f64::from)
                .into_dimensionality()
                .map_err(|_| Error::Data(format!("array {name} has the wrong rank"))),
            Stored::Complex(_) => Err(Error::Data(format!("array {name} is not real"))),
        }
    }

    pub fn text(&self, file: &str) -> Result<String> {
        fs::read_to_string(self.dir.join(file)).map_err(|e| Error::Data(format!("cannot read {file}: {e}")))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::{Array2, Array3};

    fn manifest() -> Manifest {
        Manifest {
            schema_version: SCHEMA_VERSION,
            kind: "test".into(),
            method: None,
            grid: Grid::new(4, 0.01).into(),
            arrays: vec![],
            provenance: Provenance { seed: 1, config_hash: "x".into(), tool_version: "0".into() },
            undersampling: Undersampling { arm_count: 1, arms_per_rep: 1, arms: vec![vec![0]] },
        }
    }

    #[test]
    fn arrays_round_trip_bit_exactly() {
        let dir = tempfile::tempdir().unwrap();
        let dest = dir.path().join("c");
        let z = Array3::from_shape_fn((2, 3, 4), |(a, b, c)| {
            C64::new(((a * 12 + b * 4 + c) as f32 * 0.1) as f64, -(c as f32 / 3.0) as f64)
        });
        let r = Array2::from_shape_fn((3, 4), |(a, b)| (a as f32 - 1.7 * b as f32) as f64);
        let mut w = Writer::create(&dest, manifest()).unwrap();
        w.complex("z", &z).unwrap();
        w.real("r", &r).unwrap();
        w.commit().unwrap();
        let c = Container::open(&dest).unwrap();
        assert_eq!(c.complex::<ndarray::Ix3>("z").unwrap(), z);
        assert_eq!(c.real::<ndarray::Ix2>("r").unwrap(), r);
        // Re-writing what was read reproduces the bytes.
        let dest2 = dir.path().join("d");
        let mut w = Writer::create(&dest2, manifest()).unwrap();
        w.stored("z", &c.read("z").unwrap()).unwrap();
        w.commit().unwrap();
        assert_eq!(fs::read(dest.join("z.bin")).unwrap(), fs::read(dest2.join("z.bin")).unwrap());
    }

    #[test]
    fn dropped_writer_leaves_nothing() {
        let dir = tempfile::tempdir().unwrap();
        let dest = dir.path().join("c");
        {
            let mut w = Writer::create(&dest, manifest()).unwrap();
            w.real("r", &Array2::<f64>::zeros((2, 2))).unwrap();
        }
        assert_eq!(fs::read_dir(dir.path()).unwrap().count(), 0);
    }

    #[test]
    fn rejects_bad_schema_and_truncated_files() {
        let dir = tempfile::tempdir().unwrap();
        let dest = dir.path().join("c");
        let mut w = Writer::create(&dest, manifest()).unwrap();
        w.real("r", &Array2::<f64>::zeros((2, 2))).unwrap();
        w.commit().unwrap();
        fs::write(dest.join("r.bin"), [0u8; 3]).unwrap();
        assert!(matches!(Container::open(&dest).unwrap().read("r"), Err(Error::Data(_))));
        let text =
            fs::read_to_string(dest.join(MANIFEST)).unwrap().replace("\"schema_version\": 1", "\"schema_version\": 9");
        fs::write(dest.join(MANIFEST), text).unwrap();
        assert!(matches!(Container::open(&dest), Err(Error::Data(_))));
    }
}
