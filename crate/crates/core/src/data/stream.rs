use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::DataError;
use crate::sim::TargetConfig;

pub const TACTILE_WIDTH: usize = 15;
pub const PROPRIO_WIDTH: usize = 4;
pub const ACTION_WIDTH: usize = 4;

pub const TACTILE_STREAM: &str = "tactile";
pub const PROPRIO_STREAM: &str = "proprio";
pub const ACTION_STREAM: &str = "action";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum StreamKind {
    Camera,
    Tactile,
    Proprio,
    Action,
}

/// Flat sample storage: `f32` channels, or `u8` RGB frames for cameras.
#[derive(Debug, Clone, PartialEq)]
pub enum StreamData {
    F32(Vec<f32>),
    U8(Vec<u8>),
}

/// One timestamped sensor stream with a fixed per-sample width.
#[derive(Debug, Clone, PartialEq)]
pub struct Stream {
    name: String,
    kind: StreamKind,
    width: usize,
    nominal_rate: f64,
    frame_hw: Option<(usize, usize)>,
    timestamps: Vec<f64>,
    data: StreamData,
}

/// Borrowed view of one sample.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum SampleRef<'a> {
    F32(&'a [f32]),
    U8(&'a [u8]),
}

impl Stream {
    /// Channel stream (tactile, proprio or action).
    pub fn new(name: impl Into<String>, kind: StreamKind, width: usize, nominal_rate: f64) -> Result<Self, DataError> {
        let name = name.into();
        if kind == StreamKind::Camera {
            return Err(DataError::InvalidStream { name, reason: "camera streams need frame dimensions".into() });
        }
        if width == 0 || !(nominal_rate > 0.0) {
            return Err(DataError::InvalidStream { name, reason: "width and rate must be positive".into() });
        }
        Ok(Self { name, kind, width, nominal_rate, frame_hw: None, timestamps: Vec::new(), data: StreamData::F32(Vec::new()) })
    }

    /// Camera stream of `h × w × 3` RGB frames.
    pub fn camera(name: impl Into<String>, h: usize, w: usize, nominal_rate: f64) -> Result<Self, DataError> {
        let name = name.into();
        if h == 0 || w == 0 || !(nominal_rate > 0.0) {
            return Err(DataError::InvalidStream { name, reason: "frame size and rate must be positive".into() });
        }
        Ok(Self {
            name,
            kind: StreamKind::Camera,
            width: h * w * 3,
            nominal_rate,
            frame_hw: Some((h, w)),
            timestamps: Vec::new(),
            data: StreamData::U8(Vec::new()),
        })
    }

    pub fn name(&self) -> &str {
        &self.name
    }
    pub fn kind(&self) -> StreamKind {
        self.kind
    }
    /// Values per sample (`h·w·3` for cameras).
    pub fn width(&self) -> usize {
        self.width
    }
    pub fn nominal_rate(&self) -> f64 {
        self.nominal_rate
    }
    pub fn frame_hw(&self) -> Option<(usize, usize)> {
        self.frame_hw
    }
    pub fn timestamps(&self) -> &[f64] {
        &self.timestamps
    }
    pub fn data(&self) -> &StreamData {
        &self.data
    }
    pub fn len(&self) -> usize {
        self.timestamps.len()
    }
    pub fn is_empty(&self) -> bool {
        self.timestamps.is_empty()
    }

    fn check_time(&self, t: f64) -> Result<(), DataError> {
        if !t.is_finite() {
            return Err(DataError::NonMonotoneTimestamps { stream: self.name.clone(), index: self.len() });
        }
        if let Some(&last) = self.timestamps.last() {
            if t <= last {
                return Err(DataError::NonMonotoneTimestamps { stream: self.name.clone(), index: self.len() });
            }
        }
        Ok(())
    }

    pub fn push_f32(&mut self, t: f64, values: &[f32]) -> Result<(), DataError> {
        self.check_time(t)?;
        if values.len() != self.width {
            return Err(DataError::WidthMismatch { stream: self.name.clone(), expected: self.width, actual: values.len() });
        }
        match &mut self.data {
            StreamData::F32(buf) => buf.extend_from_slice(values),
            StreamData::U8(_) => {
                return Err(DataError::InvalidStream { name: self.name.clone(), reason: "f32 sample pushed to camera stream".into() })
            }
        }
        self.timestamps.push(t);
        Ok(())
    }

    pub fn push_frame(&mut self, t: f64, rgb: &[u8]) -> Result<(), DataError> {
        self.check_time(t)?;
        if rgb.len() != self.width {
            return Err(DataError::WidthMismatch { stream: self.name.clone(), expected: self.width, actual: rgb.len() });
        }
        match &mut self.data {
            StreamData::U8(buf) => buf.extend_from_slice(rgb),
            StreamData::F32(_) => {
                return Err(DataError::InvalidStream { name: self.name.clone(), reason: "frame pushed to channel stream".into() })
            }
        }
        self.timestamps.push(t);
        Ok(())
    }

    pub fn sample(&self, i: usize) -> SampleRef<'_> {
        let w = self.width;
        match &self.data {
            StreamData::F32(buf) => SampleRef::F32(&buf[i * w..(i + 1) * w]),
            StreamData::U8(buf) => SampleRef::U8(&buf[i * w..(i + 1) * w]),
        }
    }

    /// Channel values of sample `i`; panics on camera streams.
    pub fn values(&self, i: usize) -> &[f32] {
        match self.sample(i) {
            SampleRef::F32(v) => v,
            SampleRef::U8(_) => panic!("stream {} holds frames, not channels", self.name),
        }
    }

    /// Frame bytes of sample `i`; panics on channel streams.
    pub fn frame(&self, i: usize) -> &[u8] {
        match self.sample(i) {
            SampleRef::U8(v) => v,
            SampleRef::F32(_) => panic!("stream {} holds channels, not frames", self.name),
        }
    }

    /// Index of the latest sample with timestamp `<= t` (zero-order hold).
    pub fn latest_at(&self, t: f64) -> Option<usize> {
        self.timestamps.partition_point(|&ts| ts <= t).checked_sub(1)
    }

    /// Rebuilds a channel stream from raw parts (used by the loader and
    /// by baseline subtraction).
    pub(crate) fn from_parts(
        name: String,
        kind: StreamKind,
        width: usize,
        nominal_rate: f64,
        frame_hw: Option<(usize, usize)>,
        timestamps: Vec<f64>,
        data: StreamData,
    ) -> Self {
        Self { name, kind, width, nominal_rate, frame_hw, timestamps, data }
    }

    /// Checks the per-stream invariants.
    pub fn validate(&self) -> Result<(), DataError> {
        if self.width == 0 || !(self.nominal_rate > 0.0) {
            return Err(DataError::InvalidStream { name: self.name.clone(), reason: "width and rate must be positive".into() });
        }
        for (i, w) in self.timestamps.windows(2).enumerate() {
            if !(w[1] > w[0]) {
                return Err(DataError::NonMonotoneTimestamps { stream: self.name.clone(), index: i + 1 });
            }
        }
        let stored = match &self.data {
            StreamData::F32(b) => b.len(),
            StreamData::U8(b) => b.len(),
        };
        if stored != self.width * self.len() {
            return Err(DataError::WidthMismatch { stream: self.name.clone(), expected: self.width * self.len(), actual: stored });
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Collector {
    Scripted,
    Teleop,
    /// Recorded while evaluating a controller.
    Rollout,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeMeta {
    pub target_config: TargetConfig,
    pub seed: u64,
    pub noise_max_deg: f64,
    pub success: bool,
    pub duration: f64,
    pub collector: Collector,
}

/// A recorded episode: named multi-rate streams plus metadata.
#[derive(Debug, Clone, PartialEq)]
pub struct Demonstration {
    pub streams: BTreeMap<String, Stream>,
    pub meta: EpisodeMeta,
}

impl Demonstration {
    pub fn new(meta: EpisodeMeta) -> Self {
        Self { streams: BTreeMap::new(), meta }
    }

    pub fn insert(&mut self, stream: Stream) {
        self.streams.insert(stream.name().to_string(), stream);
    }

    pub fn stream(&self, name: &str) -> Result<&Stream, DataError> {
        self.streams.get(name).ok_or_else(|| DataError::MissingStream(name.to_string()))
    }

    fn single_of_kind(&self, kind: StreamKind) -> Result<&Stream, DataError> {
        let mut found = self.streams.values().filter(|s| s.kind() == kind);
        let first = found.next().ok_or_else(|| DataError::MissingStream(format!("{kind:?}").to_lowercase()))?;
        if found.next().is_some() {
            return Err(DataError::InvalidDemo(format!("more than one {kind:?} stream")));
        }
        Ok(first)
    }

    pub fn action_stream(&self) -> Result<&Stream, DataError> {
        self.single_of_kind(StreamKind::Action)
    }

    pub fn tactile_stream(&self) -> Result<&Stream, DataError> {
        self.single_of_kind(StreamKind::Tactile)
    }

    /// Checks every structural invariant of a demonstration.
    pub fn validate(&self) -> Result<(), DataError> {
        if !(self.meta.duration > 0.0) {
            return Err(DataError::InvalidDemo("duration must be positive".into()));
        }
        if !(self.meta.noise_max_deg >= 0.0) {
            return Err(DataError::InvalidDemo("noise_max_deg must be non-negative".into()));
        }
        self.action_stream()?;
        let tactile = self.tactile_stream()?;
        if tactile.width() != TACTILE_WIDTH {
            return Err(DataError::WidthMismatch { stream: tactile.name().into(), expected: TACTILE_WIDTH, actual: tactile.width() });
        }
        if !self.streams.values().any(|s| s.kind() == StreamKind::Camera) {
            return Err(DataError::MissingStream("camera".into()));
        }
        for s in self.streams.values() {
            s.validate()?;
            let (Some(&first), Some(&last)) = (s.timestamps().first(), s.timestamps().last()) else {
                return Err(DataError::EmptyStream(s.name().into()));
            };
            if first > 0.0 {
                return Err(DataError::StreamStartsLate { stream: s.name().into(), first });
            }
            let period = 1.0 / s.nominal_rate();
            if last > self.meta.duration + 1e-9 || last < self.meta.duration - period - 1e-9 {
                return Err(DataError::InvalidDemo(format!(
                    "stream {} ends at {last} but the episode lasts {}",
                    s.name(),
                    self.meta.duration
                )));
            }
        }
        Ok(())
    }
}
