//! On-disk formats: binary subject records, dataset manifests, truth files
//! and checkpoints.
//!
//! Subject record layout (all little-endian):
//!
//! | bytes | field |
//! |-------|-------|
//! | 4     | magic `OVB1` |
//! | 4     | version (u32) |
//! | 8     | subject id (u64) |
//! | 4 × 3 | K, T, g (u32) |
//! | 4     | flags (u32); bit 0 permits NaN payload values |
//! | 8·T·K | Y, time-major |
//! | 8·T·K·g | X, time-major then site-major |

use std::fs::{self, File};
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::car::{CarParams, CarStructure, GridSpec, LogDetMethod};
use crate::error::{Error, Result};
use crate::model::{GlobalState, Hyperparams, Model, ModelConfig, SubjectData};
use crate::online::{DiscountSchedule, OnlineState};
use crate::simgen::{PopulationTruth, SubjectTruth};

pub const RECORD_MAGIC: [u8; 4] = *b"OVB1";
pub const RECORD_VERSION: u32 = 1;
pub const FLAG_ALLOW_NAN: u32 = 1;
const HEADER_LEN: usize = 32;

/// A subject record as stored on disk.
#[derive(Debug, Clone, PartialEq)]
pub struct SubjectRecord {
    pub id: u64,
    pub sites: u32,
    pub times: u32,
    pub covariates: u32,
    pub flags: u32,
    /// T·K values, time-major.
    pub y: Vec<f64>,
    /// T·K·g values, time-major then site-major.
    pub x: Vec<f64>,
}

impl SubjectRecord {
    pub fn from_subject(data: &SubjectData) -> Self {
        let (k, t, g) = (data.sites(), data.times(), data.covariates());
        let mut y = Vec::with_capacity(t * k);
        let mut x = Vec::with_capacity(t * k * g);
        for s in 0..t {
            y.extend(data.y(s).iter());
            let xs = data.x(s);
            for site in 0..k {
                x.extend(xs.row(site).iter());
            }
        }
        SubjectRecord {
            id: data.id(),
            sites: k as u32,
            times: t as u32,
            covariates: g as u32,
            flags: 0,
            y,
            x,
        }
    }

    fn dims(&self) -> (usize, usize, usize) {
        (
            self.sites as usize,
            self.times as usize,
            self.covariates as usize,
        )
    }

    pub fn validate(&self) -> Result<()> {
        let (k, t, g) = self.dims();
        if k == 0 || t == 0 || g == 0 {
            return Err(Error::Data(format!(
                "subject {}: zero dimension in header (K={k}, T={t}, g={g})",
                self.id
            )));
        }
        if self.y.len() != t * k || self.x.len() != t * k * g {
            return Err(Error::Data(format!(
                "subject {}: payload length does not match header",
                self.id
            )));
        }
        if self.flags & FLAG_ALLOW_NAN == 0 && self.y.iter().chain(&self.x).any(|v| v.is_nan()) {
            return Err(Error::Data(format!(
                "subject {}: NaN in payload without the NaN flag",
                self.id
            )));
        }
        Ok(())
    }

    pub fn to_subject(&self) -> Result<SubjectData> {
        self.validate()?;
        let (k, t, g) = self.dims();
        let y = (0..t)
            .map(|s| DVector::from_column_slice(&self.y[s * k..(s + 1) * k]))
            .collect();
        let x = (0..t)
            .map(|s| DMatrix::from_row_slice(k, g, &self.x[s * k * g..(s + 1) * k * g]))
            .collect();
        SubjectData::new(self.id, y, x)
    }

    pub fn write_to<W: Write>(&self, out: &mut W) -> Result<()> {
        self.validate()?;
        out.write_all(&RECORD_MAGIC)?;
        out.write_all(&RECORD_VERSION.to_le_bytes())?;
        out.write_all(&self.id.to_le_bytes())?;
        for v in [self.sites, self.times, self.covariates, self.flags] {
            out.write_all(&v.to_le_bytes())?;
        }
        for v in self.y.iter().chain(&self.x) {
            out.write_all(&v.to_le_bytes())?;
        }
        Ok(())
    }

    pub fn read_from<R: Read>(input: &mut R, path: &Path) -> Result<Self> {
        let mut head = [0u8; HEADER_LEN];
        read_exact(input, &mut head, path, "unexpected end of header")?;
        if head[0..4] != RECORD_MAGIC {
            return Err(Error::format(path, "bad magic, not a subject record"));
        }
        let u32_at = |i: usize| u32::from_le_bytes(head[i..i + 4].try_into().unwrap());
        let version = u32_at(4);
        if version != RECORD_VERSION {
            return Err(Error::format(
                path,
                format!("record version {version}, this build reads version {RECORD_VERSION}"),
            ));
        }
        let id = u64::from_le_bytes(head[8..16].try_into().unwrap());
        let (sites, times, covariates, flags) = (u32_at(16), u32_at(20), u32_at(24), u32_at(28));
        if sites == 0 || times == 0 || covariates == 0 {
            return Err(Error::format(
                path,
                format!("zero dimension in header (K={sites}, T={times}, g={covariates})"),
            ));
        }
        let ny = times as usize * sites as usize;
        let nx = ny
            .checked_mul(covariates as usize)
            .ok_or_else(|| Error::format(path, "payload size overflows"))?;
        let y = read_f64s(input, ny, path)?;
        let x = read_f64s(input, nx, path)?;
        let mut probe = [0u8; 1];
        if input.read(&mut probe)? != 0 {
            return Err(Error::format(path, "trailing bytes after payload"));
        }
        let record = SubjectRecord {
            id,
            sites,
            times,
            covariates,
            flags,
            y,
            x,
        };
        record
            .validate()
            .map_err(|e| Error::format(path, e.to_string()))?;
        Ok(record)
    }
}

fn read_exact<R: Read>(input: &mut R, buf: &mut [u8], path: &Path, what: &str) -> Result<()> {
    input.read_exact(buf).map_err(|e| match e.kind() {
        std::io::ErrorKind::UnexpectedEof => Error::format(path, what),
        _ => Error::Io(e),
    })
}

fn read_f64s<R: Read>(input: &mut R, n: usize, path: &Path) -> Result<Vec<f64>> {
    let mut bytes = vec![0u8; n * 8];
    read_exact(input, &mut bytes, path, "unexpected end of payload")?;
    Ok(bytes
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
        .collect())
}

pub fn write_subject(path: impl AsRef<Path>, record: &SubjectRecord) -> Result<()> {
    let mut out = BufWriter::new(File::create(path.as_ref())?);
    record.write_to(&mut out)?;
    out.flush()?;
    Ok(())
}

pub fn read_subject(path: impl AsRef<Path>) -> Result<SubjectRecord> {
    let path = path.as_ref();
    let mut input = BufReader::new(File::open(path)?);
    SubjectRecord::read_from(&mut input, path)
}

/// Dataset-level metadata; file paths are relative to the manifest.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub format_version: u32,
    pub sites: usize,
    pub times: usize,
    pub covariates: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub grid: Option<GridSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub example: Option<u8>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    pub subjects: Vec<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub truth: Option<PathBuf>,
}

pub const MANIFEST_FILE: &str = "manifest.json";

impl DatasetManifest {
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path)?;
        let manifest: DatasetManifest =
            serde_json::from_str(&text).map_err(|e| Error::format(path, e.to_string()))?;
        if manifest.format_version != RECORD_VERSION {
            return Err(Error::format(
                path,
                format!("manifest version {}", manifest.format_version),
            ));
        }
        Ok(manifest)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        write_atomic(
            path.as_ref(),
            serde_json::to_string_pretty(self)?.as_bytes(),
        )
    }

    /// Lazily reads the subjects in manifest order; `dir` is the directory
    /// holding the manifest.
    pub fn stream<'a>(&'a self, dir: &'a Path) -> impl Iterator<Item = Result<SubjectData>> + 'a {
        self.subjects.iter().map(move |rel| {
            let path = dir.join(rel);
            let record = read_subject(&path)?;
            let subject = record.to_subject()?;
            if subject.sites() != self.sites
                || subject.times() != self.times
                || subject.covariates() != self.covariates
            {
                return Err(Error::format(
                    &path,
                    "dimensions disagree with the manifest",
                ));
            }
            Ok(subject)
        })
    }
}

/// Ground truth written next to a simulated dataset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TruthFile {
    pub population: PopulationTruth,
    pub subjects: Vec<SubjectTruth>,
}

impl TruthFile {
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        serde_json::from_str(&fs::read_to_string(path)?)
            .map_err(|e| Error::format(path, e.to_string()))
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        write_atomic(
            path.as_ref(),
            serde_json::to_string_pretty(self)?.as_bytes(),
        )
    }
}

/// Writes a whole dataset under `dir`: one record per subject
/// (`subject_<id>.ovb`), the truth file and the manifest.
pub fn write_dataset(
    dir: impl AsRef<Path>,
    subjects: impl IntoIterator<Item = Result<(SubjectData, SubjectTruth)>>,
    population: PopulationTruth,
    grid: Option<GridSpec>,
    seed: Option<u64>,
) -> Result<DatasetManifest> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir)?;
    let mut files = Vec::new();
    let mut truths = Vec::new();
    let mut dims = None;
    for item in subjects {
        let (data, truth) = item?;
        let d = (data.sites(), data.times(), data.covariates());
        if *dims.get_or_insert(d) != d {
            return Err(Error::Data(format!(
                "subject {} changes dimensions",
                data.id()
            )));
        }
        let name = PathBuf::from(format!("subject_{:06}.ovb", data.id()));
        write_subject(dir.join(&name), &SubjectRecord::from_subject(&data))?;
        files.push(name);
        truths.push(truth);
    }
    let (sites, times, covariates) =
        dims.ok_or_else(|| Error::Data("dataset has no subjects".into()))?;
    let example = Some(population.example);
    let truth_name = PathBuf::from("truth.json");
    TruthFile {
        population,
        subjects: truths,
    }
    .save(dir.join(&truth_name))?;
    let manifest = DatasetManifest {
        format_version: RECORD_VERSION,
        sites,
        times,
        covariates,
        grid,
        example,
        seed,
        subjects: files,
        truth: Some(truth_name),
    };
    manifest.save(dir.join(MANIFEST_FILE))?;
    Ok(manifest)
}

/// Reads delimited text with a header `t,k,y,x1,...,xg` (any order of
/// rows; t and k zero-based) into one subject.
pub fn subject_from_csv<R: Read>(id: u64, input: R) -> Result<SubjectData> {
    let mut reader = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_reader(input);
    let header = reader.headers()?.clone();
    if header.len() < 4 || &header[0] != "t" || &header[1] != "k" || &header[2] != "y" {
        return Err(Error::Data(
            "expected header t,k,y followed by at least one covariate column".into(),
        ));
    }
    let g = header.len() - 3;
    let mut rows = Vec::new();
    for (line, row) in reader.records().enumerate() {
        let row = row?;
        let bad = |what: &str| Error::Data(format!("row {}: bad {what}", line + 2));
        let t: usize = row[0].parse().map_err(|_| bad("t"))?;
        let k: usize = row[1].parse().map_err(|_| bad("k"))?;
        let vals = (2..row.len())
            .map(|c| row[c].parse::<f64>().map_err(|_| bad(&header[c])))
            .collect::<Result<Vec<_>>>()?;
        rows.push((t, k, vals));
    }
    let times = rows.iter().map(|r| r.0 + 1).max().unwrap_or(0);
    let sites = rows.iter().map(|r| r.1 + 1).max().unwrap_or(0);
    if rows.len() != times * sites {
        return Err(Error::Data(format!(
            "{} rows do not cover a full {times} × {sites} (t, k) table",
            rows.len()
        )));
    }
    let mut y = vec![DVector::zeros(sites); times];
    let mut x = vec![DMatrix::zeros(sites, g); times];
    let mut seen = vec![false; times * sites];
    for (t, k, vals) in rows {
        if std::mem::replace(&mut seen[t * sites + k], true) {
            return Err(Error::Data(format!("duplicate row for t={t}, k={k}")));
        }
        y[t][k] = vals[0];
        for j in 0..g {
            x[t][(k, j)] = vals[1 + j];
        }
    }
    SubjectData::new(id, y, x)
}

/// Everything needed to rebuild a [`Model`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelSpec {
    pub config: ModelConfig,
    pub hyper: Hyperparams,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub car: Option<(GridSpec, CarParams)>,
}

impl ModelSpec {
    pub fn of(model: &Model) -> Self {
        ModelSpec {
            config: model.config.clone(),
            hyper: model.hyper.clone(),
            car: model.car.as_ref().map(|c| (c.grid(), c.params())),
        }
    }

    pub fn build(&self) -> Result<Model> {
        let car = self
            .car
            .map(|(grid, params)| CarStructure::new(grid, params, LogDetMethod::Exact))
            .transpose()?;
        Model::new(self.config.clone(), self.hyper.clone(), car)
    }
}

pub const CHECKPOINT_VERSION: u32 = 1;
const CHECKPOINT_TAG: &str = "OVBCKPT";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub model: ModelSpec,
    pub schedule: DiscountSchedule,
    pub processed: u64,
    pub global: GlobalState,
}

impl Checkpoint {
    pub fn new(model: &Model, schedule: DiscountSchedule, state: &OnlineState) -> Self {
        Checkpoint {
            model: ModelSpec::of(model),
            schedule,
            processed: state.processed,
            global: state.global.clone(),
        }
    }

    pub fn state(&self) -> OnlineState {
        OnlineState {
            global: self.global.clone(),
            processed: self.processed,
        }
    }
}

/// Writes `OVBCKPT <version> <sha256 of body>\n<json body>` atomically.
pub fn write_checkpoint(path: impl AsRef<Path>, checkpoint: &Checkpoint) -> Result<()> {
    let body = serde_json::to_vec(checkpoint)?;
    let digest = hex::encode(Sha256::digest(&body));
    let mut bytes = format!("{CHECKPOINT_TAG} {CHECKPOINT_VERSION} {digest}\n").into_bytes();
    bytes.extend_from_slice(&body);
    write_atomic(path.as_ref(), &bytes)
}

pub fn read_checkpoint(path: impl AsRef<Path>) -> Result<Checkpoint> {
    let path = path.as_ref();
    let bytes = fs::read(path)?;
    let corrupt = |m: &str| Error::Corruption {
        path: path.to_path_buf(),
        message: m.to_string(),
    };
    let split = bytes
        .iter()
        .position(|&b| b == b'\n')
        .ok_or_else(|| corrupt("missing header line"))?;
    let header = std::str::from_utf8(&bytes[..split]).map_err(|_| corrupt("header is not text"))?;
    let parts: Vec<&str> = header.split(' ').collect();
    if parts.len() != 3 || parts[0] != CHECKPOINT_TAG {
        return Err(Error::format(path, "not a checkpoint file"));
    }
    let version: u32 = parts[1]
        .parse()
        .map_err(|_| Error::format(path, "unreadable checkpoint version"))?;
    if version != CHECKPOINT_VERSION {
        return Err(Error::format(
            path,
            format!("checkpoint version {version}, this build reads version {CHECKPOINT_VERSION}"),
        ));
    }
    let body = &bytes[split + 1..];
    if hex::encode(Sha256::digest(body)) != parts[2] {
        return Err(corrupt("content hash mismatch"));
    }
    serde_json::from_slice(body).map_err(|e| corrupt(&e.to_string()))
}

/// Write to a sibling temp file, fsync, then rename over `path`.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = path
        .parent()
        .filter(|d| !d.as_os_str().is_empty())
        .unwrap_or(Path::new("."));
    let name = path
        .file_name()
        .ok_or_else(|| Error::Config(format!("{} is not a file path", path.display())))?;
    let tmp = dir.join(format!(
        ".{}.tmp{}",
        name.to_string_lossy(),
        std::process::id()
    ));
    {
        let mut f = File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_all()?;
    }
    fs::rename(&tmp, path)?;
    if let Ok(d) = File::open(dir) {
        let _ = d.sync_all();
    }
    Ok(())
}
