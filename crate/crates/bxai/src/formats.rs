//! Little-endian binary files for spectrum datasets (`BXAI`), model weights
//! (`BXMW`) and health libraries (`BXHL`), plus CSV dataset import.

use std::fs;
use std::path::Path;

use bxai_core::dsp::{EnvelopeSpectrum, HealthClass, OrderGrid};
use bxai_core::library::{Algo, HealthLibrary, LibraryEntry, ModelFingerprint};
use bxai_core::nn::{Model, ModelArch};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

pub const DATASET_MAGIC: &[u8; 4] = b"BXAI";
pub const MODEL_MAGIC: &[u8; 4] = b"BXMW";
pub const LIBRARY_MAGIC: &[u8; 4] = b"BXHL";
pub const VERSION: u16 = 1;

/// Labelled spectra sharing one order grid.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub grid: OrderGrid,
    pub samples: Vec<EnvelopeSpectrum>,
}

impl Dataset {
    pub fn new(grid: OrderGrid, samples: Vec<EnvelopeSpectrum>) -> Result<Self> {
        for s in &samples {
            if s.grid != grid || s.amplitudes.len() != grid.n_bins {
                return Err(Error::Usage(format!("sample {} does not use the dataset grid", s.sample_id)));
            }
            if s.label.is_none() {
                return Err(Error::Usage(format!("sample {} has no label", s.sample_id)));
            }
        }
        Ok(Dataset { grid, samples })
    }

    pub fn find(&self, sample_id: u32) -> Option<&EnvelopeSpectrum> {
        self.samples.iter().find(|s| s.sample_id == sample_id)
    }
}

struct Writer(Vec<u8>);

impl Writer {
    fn header(magic: &[u8; 4]) -> Self {
        let mut w = Writer(Vec::new());
        w.0.extend_from_slice(magic);
        w.u16(VERSION);
        w
    }
    fn u8(&mut self, v: u8) {
        self.0.push(v);
    }
    fn u16(&mut self, v: u16) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }
    fn u32(&mut self, v: u32) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }
    fn usize(&mut self, v: usize) {
        self.u32(u32::try_from(v).expect("size fits in u32"));
    }
    fn f64(&mut self, v: f64) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }
    fn f32s(&mut self, vs: &[f32]) {
        for v in vs {
            self.0.extend_from_slice(&v.to_le_bytes());
        }
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
    path: &'a Path,
}

impl<'a> Reader<'a> {
    fn open(bytes: &'a [u8], path: &'a Path, magic: &[u8; 4]) -> Result<Self> {
        let mut r = Reader { bytes, pos: 0, path };
        let found = r.take(4)?;
        if found != magic {
            return Err(r.err(format!(
                "bad magic {:?}, expected {:?}",
                String::from_utf8_lossy(found),
                String::from_utf8_lossy(magic)
            )));
        }
        let version = r.u16()?;
        if version != VERSION {
            return Err(r.err(format!("unsupported format version {version}, expected {VERSION}")));
        }
        Ok(r)
    }

    fn err(&self, reason: impl Into<String>) -> Error {
        Error::format(self.path, reason)
    }

    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.bytes.len() - self.pos < n {
            return Err(self.err(format!("truncated at byte {}", self.pos)));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }
    fn u16(&mut self) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().unwrap()))
    }
    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }
    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
    fn f32s(&mut self, n: usize) -> Result<Vec<f32>> {
        let raw = self.take(n.checked_mul(4).ok_or_else(|| self.err("length overflow"))?)?;
        Ok(raw
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
            .collect())
    }
    fn class(&mut self) -> Result<HealthClass> {
        let v = self.u8()?;
        HealthClass::from_index(v as usize).ok_or_else(|| self.err(format!("invalid class code {v}")))
    }
    fn finish(&self) -> Result<()> {
        if self.pos != self.bytes.len() {
            return Err(self.err(format!("{} trailing bytes", self.bytes.len() - self.pos)));
        }
        Ok(())
    }
}

fn read(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(|e| Error::io(path, e))
}

pub fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

pub fn encode_dataset(ds: &Dataset) -> Vec<u8> {
    let mut w = Writer::header(DATASET_MAGIC);
    w.usize(ds.samples.len());
    w.usize(ds.grid.n_bins);
    w.f64(ds.grid.order_min);
    w.f64(ds.grid.order_max);
    for s in &ds.samples {
        w.u32(s.sample_id);
        w.u8(s.label.expect("dataset samples are labelled").index() as u8);
        w.f64(s.shaft_freq);
        w.f32s(&s.amplitudes);
    }
    w.0
}

pub fn decode_dataset(bytes: &[u8], path: &Path) -> Result<Dataset> {
    let mut r = Reader::open(bytes, path, DATASET_MAGIC)?;
    let n = r.u32()? as usize;
    let n_bins = r.u32()? as usize;
    let (lo, hi) = (r.f64()?, r.f64()?);
    let grid = OrderGrid::with_range(lo, hi, n_bins).map_err(|e| r.err(e.to_string()))?;
    let mut samples = Vec::with_capacity(n.min(bytes.len() / (13 + 4 * n_bins.max(1))));
    for _ in 0..n {
        let sample_id = r.u32()?;
        let label = r.class()?;
        let shaft_freq = r.f64()?;
        let amplitudes = r.f32s(n_bins)?;
        samples.push(EnvelopeSpectrum {
            amplitudes,
            grid,
            label: Some(label),
            sample_id,
            shaft_freq,
        });
    }
    r.finish()?;
    Ok(Dataset { grid, samples })
}

pub fn save_dataset(path: &Path, ds: &Dataset) -> Result<()> {
    write_file(path, &encode_dataset(ds))
}

/// Reads a `BXAI` file, or a CSV file when the extension is `.csv`.
pub fn load_dataset(path: &Path) -> Result<Dataset> {
    if path.extension().is_some_and(|e| e.eq_ignore_ascii_case("csv")) {
        return import_csv(path);
    }
    decode_dataset(&read(path)?, path)
}

/// CSV rows `sample_id,label,shaft_freq,a_0,...,a_{n-1}` on the default
/// order range. Labels are class names or codes 0-2.
pub fn import_csv(path: &Path) -> Result<Dataset> {
    let mut rdr = csv::Reader::from_path(path).map_err(|e| Error::format(path, e.to_string()))?;
    let headers = rdr.headers().map_err(|e| Error::format(path, e.to_string()))?.clone();
    if headers.len() < 4 || &headers[0] != "sample_id" || &headers[1] != "label" || &headers[2] != "shaft_freq" {
        return Err(Error::format(path, "header must start with sample_id,label,shaft_freq,a_0"));
    }
    let n_bins = headers.len() - 3;
    let grid = OrderGrid::new(n_bins).map_err(|e| Error::format(path, e.to_string()))?;
    let mut samples = Vec::new();
    for (line, rec) in rdr.records().enumerate() {
        let rec = rec.map_err(|e| Error::format(path, e.to_string()))?;
        let bad = |what: &str| Error::format(path, format!("row {}: invalid {what}", line + 2));
        let sample_id: u32 = rec[0].trim().parse().map_err(|_| bad("sample_id"))?;
        let label_field = rec[1].trim();
        let label = HealthClass::from_name(label_field)
            .or_else(|| label_field.parse::<usize>().ok().and_then(HealthClass::from_index))
            .ok_or_else(|| bad("label"))?;
        let shaft_freq: f64 = rec[2].trim().parse().map_err(|_| bad("shaft_freq"))?;
        let amplitudes = (3..rec.len())
            .map(|i| rec[i].trim().parse::<f32>().map_err(|_| bad("amplitude")))
            .collect::<Result<Vec<f32>>>()?;
        samples.push(EnvelopeSpectrum {
            amplitudes,
            grid,
            label: Some(label),
            sample_id,
            shaft_freq,
        });
    }
    Ok(Dataset { grid, samples })
}

pub fn encode_model(model: &Model<f32>) -> Vec<u8> {
    let mut w = Writer::header(MODEL_MAGIC);
    let arch = &model.arch;
    w.usize(arch.n_blocks());
    for (c, k) in arch.channels.iter().zip(&arch.kernels) {
        w.usize(*c);
        w.usize(*k);
    }
    w.usize(arch.input_len);
    w.usize(arch.n_classes);
    for p in model.params() {
        w.f32s(p);
    }
    for block in &model.blocks {
        w.f32s(&block.bn.running_mean);
        w.f32s(&block.bn.running_var);
        w.u8(block.bn.calibrated as u8);
    }
    w.0
}

pub fn decode_model(bytes: &[u8], path: &Path) -> Result<Model<f32>> {
    let mut r = Reader::open(bytes, path, MODEL_MAGIC)?;
    let n_blocks = r.u32()? as usize;
    if n_blocks == 0 || n_blocks > 16 {
        return Err(r.err(format!("implausible block count {n_blocks}")));
    }
    let mut channels = Vec::new();
    let mut kernels = Vec::new();
    for _ in 0..n_blocks {
        channels.push(r.u32()? as usize);
        kernels.push(r.u32()? as usize);
    }
    let arch = ModelArch {
        channels,
        kernels,
        input_len: r.u32()? as usize,
        n_classes: r.u32()? as usize,
    };
    let mut model = Model::<f32>::new(arch, 0).map_err(|e| r.err(format!("invalid architecture: {e}")))?;
    for p in model.params_mut() {
        let values = r.f32s(p.len())?;
        p.copy_from_slice(&values);
    }
    for block in &mut model.blocks {
        let c = block.bn.channels();
        block.bn.running_mean = r.f32s(c)?;
        block.bn.running_var = r.f32s(c)?;
        block.bn.calibrated = match r.u8()? {
            0 => false,
            1 => true,
            v => return Err(r.err(format!("invalid calibration flag {v}"))),
        };
    }
    r.finish()?;
    Ok(model)
}

pub fn fingerprint(model_bytes: &[u8]) -> ModelFingerprint {
    ModelFingerprint(Sha256::digest(model_bytes).into())
}

pub fn model_fingerprint(model: &Model<f32>) -> ModelFingerprint {
    fingerprint(&encode_model(model))
}

pub fn save_model(path: &Path, model: &Model<f32>) -> Result<ModelFingerprint> {
    let bytes = encode_model(model);
    write_file(path, &bytes)?;
    Ok(fingerprint(&bytes))
}

/// The model and the fingerprint of its file.
pub fn load_model(path: &Path) -> Result<(Model<f32>, ModelFingerprint)> {
    let bytes = read(path)?;
    Ok((decode_model(&bytes, path)?, fingerprint(&bytes)))
}

pub fn encode_library(lib: &HealthLibrary) -> Vec<u8> {
    let mut w = Writer::header(LIBRARY_MAGIC);
    w.u8(match lib.algo {
        Algo::CamFull => 0,
        Algo::CamSub => 1,
    });
    w.f64(lib.epsilon);
    w.usize(lib.entries.len());
    w.usize(lib.grid.n_bins);
    w.0.extend_from_slice(&lib.fingerprint.0);
    for e in &lib.entries {
        w.u32(e.sample_id);
        w.u8(e.class.index() as u8);
        w.f32s(&e.vector);
    }
    w.0
}

pub fn decode_library(bytes: &[u8], path: &Path) -> Result<HealthLibrary> {
    let mut r = Reader::open(bytes, path, LIBRARY_MAGIC)?;
    let algo = match r.u8()? {
        0 => Algo::CamFull,
        1 => Algo::CamSub,
        v => return Err(r.err(format!("invalid algorithm code {v}"))),
    };
    let epsilon = r.f64()?;
    let n = r.u32()? as usize;
    let n_bins = r.u32()? as usize;
    let grid = OrderGrid::new(n_bins).map_err(|e| r.err(e.to_string()))?;
    let fingerprint = ModelFingerprint(r.take(32)?.try_into().unwrap());
    let mut entries = Vec::with_capacity(n.min(bytes.len() / (5 + 4 * n_bins.max(1))));
    for _ in 0..n {
        let sample_id = r.u32()?;
        let class = r.class()?;
        let vector = r.f32s(n_bins)?;
        entries.push(LibraryEntry {
            sample_id,
            class,
            vector,
        });
    }
    r.finish()?;
    Ok(HealthLibrary {
        entries,
        algo,
        epsilon,
        grid,
        fingerprint,
    })
}

pub fn save_library(path: &Path, lib: &HealthLibrary) -> Result<()> {
    write_file(path, &encode_library(lib))
}

/// Loads a library and, when `expected` is given, rejects it unless it was
/// built from the model with that fingerprint.
pub fn load_library(path: &Path, expected: Option<&ModelFingerprint>) -> Result<HealthLibrary> {
    let lib = decode_library(&read(path)?, path)?;
    if let Some(fp) = expected {
        if &lib.fingerprint != fp {
            return Err(Error::format(
                path,
                format!(
                    "library is stale: built from model {} but the model file hashes to {}",
                    lib.fingerprint, fp
                ),
            ));
        }
    }
    Ok(lib)
}
