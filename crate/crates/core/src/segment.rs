//! Growing-window segment detection over per-frame feature streams, plus
//! the two-threshold retention filter used when assembling a collection.
//!
//! The detector scores half-open frame windows `[start, end)` by the cosine
//! similarity between the window's mean-pooled frames and the mean-pooled
//! ground-truth reference. Starting from `[0, min_window)`, a window grows
//! by `step` frames at a time as long as it already scores above the
//! threshold, the grown window scores strictly higher, and the growth stays
//! within `max_window` and the stream; when growth stops, the window is
//! emitted if (and only if) it scores above the threshold, and scanning
//! restarts right after it. The result is a sorted, disjoint list of
//! segments with lengths in `[min_window, max_window]`.

use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};

use crate::dataset::Modality;
use crate::error::{Error, Result};
use crate::metric::NORM_EPSILON;

/// A uniformly-sampled sequence of feature vectors, one per frame.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrameStream {
    pub frame_rate: f64,
    pub frames: Vec<Vec<f64>>,
}

impl FrameStream {
    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    /// Dimensionality of the frames; `None` for an empty stream.
    pub fn dim(&self) -> Option<usize> {
        self.frames.first().map(Vec::len)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.frame_rate.is_finite() && self.frame_rate > 0.0) {
            return Err(Error::InvalidConfig(format!(
                "frame rate must be finite and positive, got {}",
                self.frame_rate
            )));
        }
        if let Some(dim) = self.dim() {
            if dim == 0 {
                return Err(Error::InvalidConfig("frames must not be empty vectors".into()));
            }
            for f in &self.frames {
                if f.len() != dim {
                    return Err(Error::DimensionMismatch {
                        context: "frame dimensionality within a stream",
                        left: f.len(),
                        right: dim,
                    });
                }
            }
        }
        Ok(())
    }
}

/// Detector parameters; window sizes are frame counts.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DetectorConfig {
    /// Minimum (and initial) window length.
    pub min_window: usize,
    /// Frames added per growth attempt.
    pub step: usize,
    /// Maximum window length; growth never exceeds it.
    pub max_window: usize,
    /// Score that a window must strictly exceed to grow or be emitted.
    pub threshold: f64,
}

impl Default for DetectorConfig {
    fn default() -> Self {
        Self {
            min_window: 8,
            step: 4,
            max_window: 64,
            threshold: 0.5,
        }
    }
}

impl DetectorConfig {
    pub fn validate(&self) -> Result<()> {
        if self.min_window == 0 || self.step == 0 {
            return Err(Error::InvalidConfig(
                "window sizes and step must be positive frame counts".into(),
            ));
        }
        if self.min_window > self.max_window {
            return Err(Error::InvalidConfig(format!(
                "min window {} exceeds max window {}",
                self.min_window, self.max_window
            )));
        }
        if !self.threshold.is_finite() {
            return Err(Error::InvalidConfig("threshold must be finite".into()));
        }
        Ok(())
    }
}

/// One detected segment: the half-open frame range `[start, end)` and its
/// final window score.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Segment {
    pub start: usize,
    pub end: usize,
    pub score: f64,
}

/// Cosine similarity between the mean-pooled window `[start, end)` of
/// `stream` and the mean-pooled `ground_truth`.
pub fn window_score(
    stream: &FrameStream,
    start: usize,
    end: usize,
    ground_truth: &FrameStream,
) -> Result<f64> {
    if start >= end || end > stream.len() {
        return Err(Error::InvalidConfig(format!(
            "window [{start}, {end}) is not a valid range of a {}-frame stream",
            stream.len()
        )));
    }
    let gt = mean_frames(&ground_truth.frames)?;
    check_dims(stream, ground_truth)?;
    let gt_norm = norm(&gt);
    if gt_norm <= NORM_EPSILON {
        return Err(Error::ZeroVector {
            norm: gt_norm,
            epsilon: NORM_EPSILON,
        });
    }
    let window = mean_frames(&stream.frames[start..end])?;
    let w_norm = norm(&window);
    if w_norm <= NORM_EPSILON {
        return Err(Error::ZeroVector {
            norm: w_norm,
            epsilon: NORM_EPSILON,
        });
    }
    Ok(cosine(&window, w_norm, &gt, gt_norm))
}

/// Runs the growing-window scan and returns the emitted segments in order.
///
/// Windows whose mean pools to (near-)zero score as negative infinity
/// inside the scan — they can neither grow nor be emitted — while a
/// ground truth with a zero mean is rejected up front, since no window
/// could ever be scored against it.
pub fn detect_segments(
    stream: &FrameStream,
    ground_truth: &FrameStream,
    cfg: &DetectorConfig,
) -> Result<Vec<Segment>> {
    cfg.validate()?;
    let len = stream.len();
    if len < cfg.min_window {
        return Err(Error::StreamTooShort {
            frames: len,
            min_frames: cfg.min_window,
        });
    }
    let gt = mean_frames(&ground_truth.frames)?;
    check_dims(stream, ground_truth)?;
    let gt_norm = norm(&gt);
    if gt_norm <= NORM_EPSILON {
        return Err(Error::ZeroVector {
            norm: gt_norm,
            epsilon: NORM_EPSILON,
        });
    }

    let score_of = |start: usize, end: usize| -> f64 {
        let window = mean_frames(&stream.frames[start..end]).expect("window ranges are non-empty");
        let w_norm = norm(&window);
        if w_norm <= NORM_EPSILON {
            f64::NEG_INFINITY
        } else {
            cosine(&window, w_norm, &gt, gt_norm)
        }
    };

    let mut segments = Vec::new();
    let mut start = 0;
    let mut end = cfg.min_window;
    while end <= len {
        let mut score = score_of(start, end);
        while score > cfg.threshold {
            let grown = end + cfg.step;
            if grown > len || grown - start > cfg.max_window {
                break;
            }
            let grown_score = score_of(start, grown);
            if grown_score > score {
                end = grown;
                score = grown_score;
            } else {
                break;
            }
        }
        if score > cfg.threshold {
            segments.push(Segment { start, end, score });
        }
        start = end;
        end = start + cfg.min_window;
    }
    Ok(segments)
}

/// A collected item carrying its quality score and source modality.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoredItem<T> {
    pub payload: T,
    pub modality: Modality,
    pub score: f64,
}

/// Keeps items scoring strictly above their modality's threshold,
/// preserving order.
pub fn retain_by_thresholds<T>(
    items: Vec<ScoredItem<T>>,
    voice_threshold: f64,
    face_threshold: f64,
) -> Vec<ScoredItem<T>> {
    items
        .into_iter()
        .filter(|item| {
            let threshold = match item.modality {
                Modality::Voice => voice_threshold,
                Modality::Face => face_threshold,
            };
            item.score > threshold
        })
        .collect()
}

pub const FRAME_STREAM_VERSION: u32 = 1;

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct StreamHeader {
    version: u32,
    frame_rate: f64,
    dim: usize,
}

/// Reads the frame-stream format: a JSON header line declaring
/// `{"version", "frame_rate", "dim"}`, then one JSON array of `dim` numbers
/// per line.
pub fn read_frame_stream(reader: impl BufRead) -> Result<FrameStream> {
    let mut lines = reader.lines().enumerate();
    let header: StreamHeader = match lines.next() {
        None => {
            return Err(Error::MalformedData(
                "frame stream is empty; expected a header line".into(),
            ))
        }
        Some((_, line)) => {
            let line = line.map_err(|e| Error::MalformedData(format!("line 1: {e}")))?;
            serde_json::from_str(&line)
                .map_err(|e| Error::MalformedData(format!("line 1 (header): {e}")))?
        }
    };
    if header.version != FRAME_STREAM_VERSION {
        return Err(Error::MalformedData(format!(
            "unsupported frame-stream version {} (expected {FRAME_STREAM_VERSION})",
            header.version
        )));
    }
    if header.dim == 0 {
        return Err(Error::MalformedData("header declares dim 0".into()));
    }
    let mut frames = Vec::new();
    for (idx, line) in lines {
        let line_no = idx + 1;
        let line = line.map_err(|e| Error::MalformedData(format!("line {line_no}: {e}")))?;
        let frame: Vec<f64> = serde_json::from_str(&line)
            .map_err(|e| Error::MalformedData(format!("line {line_no}: {e}")))?;
        if frame.len() != header.dim {
            return Err(Error::MalformedData(format!(
                "line {line_no}: frame has {} values, header declares {}",
                frame.len(),
                header.dim
            )));
        }
        frames.push(frame);
    }
    let stream = FrameStream {
        frame_rate: header.frame_rate,
        frames,
    };
    stream.validate()?;
    Ok(stream)
}

/// Writes the header-plus-one-frame-per-line format read by
/// [`read_frame_stream`].
pub fn write_frame_stream(stream: &FrameStream, mut writer: impl Write) -> Result<()> {
    stream.validate()?;
    let dim = stream.dim().ok_or_else(|| {
        Error::InsufficientData("cannot serialize an empty frame stream".into())
    })?;
    let header = StreamHeader {
        version: FRAME_STREAM_VERSION,
        frame_rate: stream.frame_rate,
        dim,
    };
    let io = |e: std::io::Error| Error::MalformedData(format!("write failed: {e}"));
    serde_json::to_writer(&mut writer, &header).map_err(|e| Error::MalformedData(e.to_string()))?;
    writer.write_all(b"\n").map_err(io)?;
    for frame in &stream.frames {
        serde_json::to_writer(&mut writer, frame)
            .map_err(|e| Error::MalformedData(e.to_string()))?;
        writer.write_all(b"\n").map_err(io)?;
    }
    Ok(())
}

fn check_dims(stream: &FrameStream, ground_truth: &FrameStream) -> Result<()> {
    stream.validate()?;
    ground_truth.validate()?;
    match (stream.dim(), ground_truth.dim()) {
        (Some(a), Some(b)) if a != b => Err(Error::DimensionMismatch {
            context: "stream frames vs ground-truth frames",
            left: a,
            right: b,
        }),
        _ => Ok(()),
    }
}

/// Component-wise mean of a non-empty frame slice.
fn mean_frames(frames: &[Vec<f64>]) -> Result<Vec<f64>> {
    let first = frames.first().ok_or(Error::StreamTooShort {
        frames: 0,
        min_frames: 1,
    })?;
    let mut mean = vec![0.0; first.len()];
    for frame in frames {
        for (m, v) in mean.iter_mut().zip(frame) {
            *m += v;
        }
    }
    let k = frames.len() as f64;
    for m in &mut mean {
        *m /= k;
    }
    Ok(mean)
}

fn norm(x: &[f64]) -> f64 {
    x.iter().map(|v| v * v).sum::<f64>().sqrt()
}

fn cosine(a: &[f64], a_norm: f64, b: &[f64], b_norm: f64) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    dot / (a_norm * b_norm)
}
