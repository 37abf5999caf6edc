use std::fs::{self, File};
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::stream::{Collector, Demonstration, EpisodeMeta, Stream, StreamData, StreamKind};
use super::DataError;

pub const MANIFEST_FILE: &str = "manifest.json";
pub const INDEX_FILE: &str = "index.json";
const FORMAT: &str = "visk-demo/1";

#[derive(Debug, Serialize, Deserialize)]
struct StreamDescriptor {
    name: String,
    kind: StreamKind,
    width: usize,
    rate: f64,
    count: usize,
    #[serde(rename = "H", default, skip_serializing_if = "Option::is_none")]
    h: Option<usize>,
    #[serde(rename = "W", default, skip_serializing_if = "Option::is_none")]
    w: Option<usize>,
}

#[derive(Debug, Serialize, Deserialize)]
struct Manifest {
    format: String,
    meta: EpisodeMeta,
    streams: Vec<StreamDescriptor>,
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> DataError + '_ {
    move |source| DataError::Io { path: path.to_path_buf(), source }
}

fn stream_file(dir: &Path, name: &str) -> PathBuf {
    dir.join(format!("{name}.bin"))
}

fn valid_name(name: &str) -> bool {
    !name.is_empty() && name.chars().all(|c| c.is_ascii_alphanumeric() || c == '_' || c == '-')
}

/// Writes `manifest.json` plus one little-endian `<name>.bin` per stream.
pub fn save_demo(demo: &Demonstration, dir: &Path) -> Result<(), DataError> {
    fs::create_dir_all(dir).map_err(io_err(dir))?;
    let mut descriptors = Vec::with_capacity(demo.streams.len());
    for stream in demo.streams.values() {
        if !valid_name(stream.name()) {
            return Err(DataError::InvalidStream { name: stream.name().into(), reason: "name not usable as a file name".into() });
        }
        stream.validate()?;
        let path = stream_file(dir, stream.name());
        let file = File::create(&path).map_err(io_err(&path))?;
        let mut out = BufWriter::new(file);
        for (i, t) in stream.timestamps().iter().enumerate() {
            out.write_all(&t.to_le_bytes()).map_err(io_err(&path))?;
            let w = stream.width();
            match stream.data() {
                StreamData::F32(buf) => {
                    for v in &buf[i * w..(i + 1) * w] {
                        out.write_all(&v.to_le_bytes()).map_err(io_err(&path))?;
                    }
                }
                StreamData::U8(buf) => out.write_all(&buf[i * w..(i + 1) * w]).map_err(io_err(&path))?,
            }
        }
        out.flush().map_err(io_err(&path))?;
        let (h, w) = match stream.frame_hw() {
            Some((h, w)) => (Some(h), Some(w)),
            None => (None, None),
        };
        descriptors.push(StreamDescriptor {
            name: stream.name().into(),
            kind: stream.kind(),
            width: stream.width(),
            rate: stream.nominal_rate(),
            count: stream.len(),
            h,
            w,
        });
    }
    let manifest = Manifest { format: FORMAT.into(), meta: demo.meta.clone(), streams: descriptors };
    let path = dir.join(MANIFEST_FILE);
    let text = serde_json::to_string_pretty(&manifest).expect("manifest serialises");
    fs::write(&path, text + "\n").map_err(io_err(&path))
}

pub fn load_demo(dir: &Path) -> Result<Demonstration, DataError> {
    let path = dir.join(MANIFEST_FILE);
    let text = fs::read_to_string(&path).map_err(io_err(&path))?;
    let corrupt = |reason: String| DataError::CorruptManifest { path: path.clone(), reason };
    let manifest: Manifest = serde_json::from_str(&text).map_err(|e| corrupt(e.to_string()))?;
    if manifest.format != FORMAT {
        return Err(corrupt(format!("unsupported format `{}`", manifest.format)));
    }
    let mut demo = Demonstration::new(manifest.meta);
    for d in manifest.streams {
        if !valid_name(&d.name) {
            return Err(corrupt(format!("bad stream name `{}`", d.name)));
        }
        let frame_hw = match (d.kind, d.h, d.w) {
            (StreamKind::Camera, Some(h), Some(w)) => {
                if h * w * 3 != d.width {
                    return Err(DataError::WidthMismatch { stream: d.name, expected: h * w * 3, actual: d.width });
                }
                Some((h, w))
            }
            (StreamKind::Camera, _, _) => return Err(corrupt(format!("camera stream `{}` lacks H/W", d.name))),
            (_, None, None) => None,
            _ => return Err(corrupt(format!("channel stream `{}` has frame dimensions", d.name))),
        };
        let value_bytes = if d.kind == StreamKind::Camera { 1 } else { 4 };
        let record = 8 + d.width * value_bytes;
        let bin = stream_file(dir, &d.name);
        let file = File::open(&bin).map_err(io_err(&bin))?;
        let actual = file.metadata().map_err(io_err(&bin))?.len();
        let expected = (record * d.count) as u64;
        if actual != expected {
            return Err(DataError::TruncatedStreamFile { path: bin, expected, actual });
        }
        let mut bytes = Vec::with_capacity(actual as usize);
        BufReader::new(file).read_to_end(&mut bytes).map_err(io_err(&bin))?;
        let mut timestamps = Vec::with_capacity(d.count);
        let data = if d.kind == StreamKind::Camera {
            let mut buf = Vec::with_capacity(d.count * d.width);
            for rec in bytes.chunks_exact(record) {
                timestamps.push(f64::from_le_bytes(rec[..8].try_into().unwrap()));
                buf.extend_from_slice(&rec[8..]);
            }
            StreamData::U8(buf)
        } else {
            let mut buf = Vec::with_capacity(d.count * d.width);
            for rec in bytes.chunks_exact(record) {
                timestamps.push(f64::from_le_bytes(rec[..8].try_into().unwrap()));
                buf.extend(rec[8..].chunks_exact(4).map(|b| f32::from_le_bytes(b.try_into().unwrap())));
            }
            StreamData::F32(buf)
        };
        let stream = Stream::from_parts(d.name, d.kind, d.width, d.rate, frame_hw, timestamps, data);
        stream.validate()?;
        demo.insert(stream);
    }
    Ok(demo)
}

/// One demonstration listed in a dataset's `index.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetEntry {
    /// Directory relative to the dataset root.
    pub dir: String,
    pub seed: u64,
    pub slot_xy: [f64; 2],
    pub duration: f64,
}

/// Dataset manifest: the saved demonstrations plus collection bookkeeping.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetIndex {
    pub collector: Collector,
    pub theta_max_deg: f64,
    pub estimate_err_cm: f64,
    pub seed: u64,
    /// Seed of the held-out set the training slots were kept away from.
    pub eval_seed: u64,
    /// Episodes run, including failed ones that were re-rolled.
    pub attempts: usize,
    pub demos: Vec<DatasetEntry>,
}

impl DatasetIndex {
    pub fn load(root: &Path) -> Result<Self, DataError> {
        let path = root.join(INDEX_FILE);
        let text = fs::read_to_string(&path).map_err(io_err(&path))?;
        serde_json::from_str(&text).map_err(|e| DataError::CorruptManifest { path, reason: e.to_string() })
    }

    pub fn save(&self, root: &Path) -> Result<(), DataError> {
        fs::create_dir_all(root).map_err(io_err(root))?;
        let path = root.join(INDEX_FILE);
        let text = serde_json::to_string_pretty(self).expect("index serialises");
        fs::write(&path, text + "\n").map_err(io_err(&path))
    }

    pub fn saved(&self) -> usize {
        self.demos.len()
    }

    /// Slot positions of every training demonstration.
    pub fn training_targets(&self) -> Vec<[f64; 2]> {
        self.demos.iter().map(|d| d.slot_xy).collect()
    }

    pub fn load_demos(&self, root: &Path) -> Result<Vec<Demonstration>, DataError> {
        self.demos.iter().map(|d| load_demo(&root.join(&d.dir))).collect()
    }
}
