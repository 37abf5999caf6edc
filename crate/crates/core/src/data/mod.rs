//! Timestamped multi-rate streams, alignment to the policy clock and the
//! on-disk demonstration format.

mod io;
mod stream;

use std::path::PathBuf;

use thiserror::Error;

use crate::modality::{ModalityMask, View};

pub use io::{load_demo, save_demo, DatasetEntry, DatasetIndex, INDEX_FILE, MANIFEST_FILE};
pub use stream::{
    Collector, Demonstration, EpisodeMeta, SampleRef, Stream, StreamData, StreamKind, ACTION_STREAM, ACTION_WIDTH,
    PROPRIO_STREAM, PROPRIO_WIDTH, TACTILE_STREAM, TACTILE_WIDTH,
};

/// Number of initial tactile samples averaged into the baseline.
pub const DEFAULT_K_BASELINE: usize = 5;

#[derive(Debug, Error)]
pub enum DataError {
    #[error("missing stream `{0}`")]
    MissingStream(String),
    #[error("stream `{0}` has no samples")]
    EmptyStream(String),
    #[error("stream `{stream}`: timestamp at index {index} is not strictly increasing")]
    NonMonotoneTimestamps { stream: String, index: usize },
    #[error("stream `{stream}`: first sample at t={first} is after the first tick")]
    StreamStartsLate { stream: String, first: f64 },
    #[error("stream `{stream}`: expected width {expected}, got {actual}")]
    WidthMismatch { stream: String, expected: usize, actual: usize },
    #[error("invalid stream `{name}`: {reason}")]
    InvalidStream { name: String, reason: String },
    #[error("invalid demonstration: {0}")]
    InvalidDemo(String),
    #[error("need at least {need} samples for the baseline, have {have}")]
    TooFewSamples { have: usize, need: usize },
    #[error("index {index} out of range for {len} actions")]
    IndexOutOfRange { index: usize, len: usize },
    #[error("policy rate must be positive, got {0}")]
    InvalidRate(f64),
    #[error("corrupt manifest {path}: {reason}")]
    CorruptManifest { path: PathBuf, reason: String },
    #[error("stream file {path} is truncated: expected {expected} bytes, found {actual}")]
    TruncatedStreamFile { path: PathBuf, expected: u64, actual: u64 },
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

/// Observation and action at one policy tick.
#[derive(Debug, Clone, PartialEq)]
pub struct SyncedFrame {
    pub t: f64,
    /// `(view, H×W×3 RGB)` in token order of the modality mask.
    pub images: Vec<(View, Vec<u8>)>,
    pub tactile: Option<[f32; TACTILE_WIDTH]>,
    pub proprio: Option<[f32; PROPRIO_WIDTH]>,
    pub action: [f32; ACTION_WIDTH],
}

impl SyncedFrame {
    pub fn image(&self, view: View) -> Option<&[u8]> {
        self.images.iter().find(|(v, _)| *v == view).map(|(_, img)| img.as_slice())
    }
}

/// Number of policy ticks `t_k = k / rate` with `t_k <= duration`.
pub fn tick_count(duration: f64, policy_rate: f64) -> usize {
    // the epsilon absorbs durations that were themselves computed as k / rate
    (duration * policy_rate + 1e-9).floor() as usize + 1
}

fn tick_time(k: usize, policy_rate: f64) -> f64 {
    k as f64 / policy_rate
}

fn sample_at(stream: &Stream, t: f64) -> Result<usize, DataError> {
    if stream.is_empty() {
        return Err(DataError::EmptyStream(stream.name().into()));
    }
    stream
        .latest_at(t)
        .ok_or_else(|| DataError::StreamStartsLate { stream: stream.name().into(), first: stream.timestamps()[0] })
}

/// Aligns every enabled stream to the policy clock by zero-order hold.
///
/// When `k_baseline` is set the tactile channels are baseline-subtracted
/// before sampling.
pub fn synchronize(
    demo: &Demonstration,
    policy_rate: f64,
    modalities: &ModalityMask,
    k_baseline: Option<usize>,
) -> Result<Vec<SyncedFrame>, DataError> {
    if !(policy_rate > 0.0) || !policy_rate.is_finite() {
        return Err(DataError::InvalidRate(policy_rate));
    }
    let views = modalities.views();
    let cams: Vec<&Stream> = views.iter().map(|v| demo.stream(&v.stream_name())).collect::<Result<_, _>>()?;
    let tactile = if modalities.tactile {
        let raw = demo.tactile_stream()?;
        Some(match k_baseline {
            Some(k) => subtract_baseline(raw, k)?,
            None => raw.clone(),
        })
    } else {
        None
    };
    let proprio = if modalities.proprio { Some(demo.stream(PROPRIO_STREAM)?) } else { None };
    let action = demo.action_stream()?;
    for s in cams.iter().copied().chain(tactile.as_ref()).chain(proprio).chain(Some(action)) {
        s.validate()?;
    }

    let n = tick_count(demo.meta.duration, policy_rate);
    let mut frames = Vec::with_capacity(n);
    for k in 0..n {
        let t = tick_time(k, policy_rate);
        let mut images = Vec::with_capacity(cams.len());
        for (view, cam) in views.iter().zip(&cams) {
            images.push((*view, cam.frame(sample_at(cam, t)?).to_vec()));
        }
        let tactile = match &tactile {
            Some(s) => Some(fixed::<TACTILE_WIDTH>(s, sample_at(s, t)?)?),
            None => None,
        };
        let proprio = match proprio {
            Some(s) => Some(fixed::<PROPRIO_WIDTH>(s, sample_at(s, t)?)?),
            None => None,
        };
        let action = fixed::<ACTION_WIDTH>(action, sample_at(action, t)?)?;
        frames.push(SyncedFrame { t, images, tactile, proprio, action });
    }
    Ok(frames)
}

fn fixed<const N: usize>(stream: &Stream, i: usize) -> Result<[f32; N], DataError> {
    stream.values(i).try_into().map_err(|_| DataError::WidthMismatch {
        stream: stream.name().into(),
        expected: N,
        actual: stream.width(),
    })
}

/// Per-channel mean of the first `k` samples.
pub fn baseline(stream: &Stream, k: usize) -> Result<Vec<f32>, DataError> {
    if k == 0 || stream.len() < k {
        return Err(DataError::TooFewSamples { have: stream.len(), need: k.max(1) });
    }
    let w = stream.width();
    let mut acc = vec![0.0f64; w];
    for i in 0..k {
        for (a, &v) in acc.iter_mut().zip(stream.values(i)) {
            *a += v as f64;
        }
    }
    Ok(acc.into_iter().map(|a| (a / k as f64) as f32).collect())
}

/// Subtracts the mean of the first `k` samples from every sample.
pub fn subtract_baseline(stream: &Stream, k: usize) -> Result<Stream, DataError> {
    let base = baseline(stream, k)?;
    let w = stream.width();
    let data = match stream.data() {
        StreamData::F32(buf) => buf.iter().enumerate().map(|(i, v)| v - base[i % w]).collect(),
        StreamData::U8(_) => {
            return Err(DataError::InvalidStream { name: stream.name().into(), reason: "cannot baseline a camera".into() })
        }
    };
    Ok(Stream::from_parts(
        stream.name().into(),
        stream.kind(),
        w,
        stream.nominal_rate(),
        stream.frame_hw(),
        stream.timestamps().to_vec(),
        StreamData::F32(data),
    ))
}

/// `H` actions starting at `t`; positions past the end repeat the last action
/// and are masked out.
#[allow(clippy::type_complexity)]
pub fn chunk_targets(
    actions: &[[f32; ACTION_WIDTH]],
    t: usize,
    h: usize,
) -> Result<(Vec<[f32; ACTION_WIDTH]>, Vec<bool>), DataError> {
    if t >= actions.len() || h == 0 {
        return Err(DataError::IndexOutOfRange { index: t, len: actions.len() });
    }
    let last = actions.len() - 1;
    let chunk = (0..h).map(|i| actions[(t + i).min(last)]).collect();
    let mask = (0..h).map(|i| t + i <= last).collect();
    Ok((chunk, mask))
}
