//! Skeleton sequences: parsing, the internal text format, temporal resizing,
//! motion, person regularisation and a synthetic data generator.
//!
//! A sequence of `T` frames with `N` joints is treated as a `T × N` image with
//! the three coordinates as channels. No coordinate normalisation happens
//! anywhere here; only [`resize_temporal`] changes values.

use std::collections::HashMap;
use std::f64::consts::PI;
use std::fmt::Write as _;

use log::warn;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::detector::window::{Window, WindowSet};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Joint {
    pub x: f64,
    pub y: f64,
    pub z: f64,
}

impl Joint {
    pub fn new(x: f64, y: f64, z: f64) -> Self {
        Joint { x, y, z }
    }

    pub fn coord(&self, c: usize) -> f64 {
        match c {
            0 => self.x,
            1 => self.y,
            _ => self.z,
        }
    }

    pub fn lerp(&self, other: &Joint, w: f64) -> Joint {
        Joint {
            x: self.x + (other.x - self.x) * w,
            y: self.y + (other.y - self.y) * w,
            z: self.z + (other.z - self.z) * w,
        }
    }

    pub fn is_finite(&self) -> bool {
        self.x.is_finite() && self.y.is_finite() && self.z.is_finite()
    }
}

/// One person's skeleton in one frame.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SkeletonFrame {
    pub person_id: usize,
    pub joints: Vec<Joint>,
}

/// `T` time steps, each holding the skeletons visible in that frame.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SkeletonSequence {
    pub frames: Vec<Vec<SkeletonFrame>>,
    pub fps: f64,
    pub label: Option<usize>,
    pub segments: Option<WindowSet>,
}

impl SkeletonSequence {
    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    /// Joint count shared by every skeleton, or `None` if no skeleton exists.
    pub fn joint_count(&self) -> Option<usize> {
        self.frames.iter().flatten().map(|s| s.joints.len()).next()
    }

    pub fn max_persons(&self) -> usize {
        self.frames.iter().map(Vec::len).max().unwrap_or(0)
    }

    pub fn validate(&self) -> Result<()> {
        if self.frames.is_empty() {
            return Err(Error::Data("sequence has no frames".into()));
        }
        let n = self.joint_count();
        for (t, frame) in self.frames.iter().enumerate() {
            for s in frame {
                if Some(s.joints.len()) != n {
                    return Err(Error::Data(format!(
                        "frame {t} person {} has {} joints, expected {}",
                        s.person_id,
                        s.joints.len(),
                        n.unwrap_or(0)
                    )));
                }
                if !s.joints.iter().all(Joint::is_finite) {
                    return Err(Error::Data(format!("non-finite joint in frame {t}")));
                }
            }
        }
        Ok(())
    }
}

/// Dense `T × N × 3` array, indexed `[t][joint][coord]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SkeletonImage {
    pub frames: usize,
    pub joints: usize,
    pub data: Vec<f64>,
}

impl SkeletonImage {
    pub fn zeros(frames: usize, joints: usize) -> Self {
        SkeletonImage {
            frames,
            joints,
            data: vec![0.0; frames * joints * 3],
        }
    }

    pub fn from_data(frames: usize, joints: usize, data: Vec<f64>) -> Result<Self> {
        if frames == 0 || joints == 0 || data.len() != frames * joints * 3 {
            return Err(Error::shape(&[frames, joints, 3], &[data.len()], "skeleton image"));
        }
        Ok(SkeletonImage { frames, joints, data })
    }

    #[inline]
    pub fn index(&self, t: usize, j: usize, c: usize) -> usize {
        (t * self.joints + j) * 3 + c
    }

    pub fn get(&self, t: usize, j: usize, c: usize) -> f64 {
        self.data[self.index(t, j, c)]
    }

    pub fn set(&mut self, t: usize, j: usize, c: usize, v: f64) {
        let i = self.index(t, j, c);
        self.data[i] = v;
    }

    /// Channel-first layout `[3, T, N]` as consumed by the convolution stack.
    pub fn to_channels_first(&self) -> Vec<f64> {
        let (t_len, n) = (self.frames, self.joints);
        let mut out = vec![0.0; 3 * t_len * n];
        for t in 0..t_len {
            for j in 0..n {
                for c in 0..3 {
                    out[(c * t_len + t) * n + j] = self.get(t, j, c);
                }
            }
        }
        out
    }
}

/// The two input streams for one person: raw coordinates and frame-to-frame motion.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SkeletonImagePair {
    pub coords: SkeletonImage,
    pub motion: SkeletonImage,
}

impl SkeletonImagePair {
    pub fn from_coords(coords: SkeletonImage) -> Self {
        let motion = compute_motion(&coords);
        SkeletonImagePair { coords, motion }
    }
}

/// Per-person streams after regularisation to a fixed person count.
#[derive(Debug, Clone, PartialEq)]
pub struct PersonStreams {
    pub pairs: Vec<SkeletonImagePair>,
    /// Number of distinct persons dropped because the sequence held more than requested.
    pub dropped_persons: usize,
}

fn parse_f64(tok: &str, line: usize) -> Result<f64> {
    tok.parse::<f64>()
        .ok()
        .filter(|v| v.is_finite())
        .ok_or_else(|| Error::parse(line, format!("non-numeric field {tok:?}")))
}

fn parse_usize(tok: &str, line: usize, what: &str) -> Result<usize> {
    tok.parse::<usize>()
        .map_err(|_| Error::parse(line, format!("expected {what}, found {tok:?}")))
}

/// Line reader that skips blank lines and remembers 1-based line numbers.
struct Lines<'a> {
    inner: std::iter::Enumerate<std::str::Lines<'a>>,
    last: usize,
}

impl<'a> Lines<'a> {
    fn new(text: &'a str) -> Self {
        Lines {
            inner: text.lines().enumerate(),
            last: 0,
        }
    }

    fn next_line(&mut self) -> Option<(usize, &'a str)> {
        for (i, l) in self.inner.by_ref() {
            self.last = i + 1;
            let l = l.trim();
            if !l.is_empty() {
                return Some((i + 1, l));
            }
        }
        None
    }

    fn expect(&mut self, what: &str) -> Result<(usize, &'a str)> {
        let last = self.last;
        self.next_line()
            .ok_or_else(|| Error::parse(last + 1, format!("unexpected end of input, expected {what}")))
    }
}

/// Parses the NTU RGB+D `.skeleton` text layout.
///
/// Bodies are numbered by order of first appearance of their tracking id, so
/// `person_id` is stable across frames. Fields after `x y z` are ignored.
pub fn parse_ntu_skeleton(text: &str) -> Result<SkeletonSequence> {
    let mut lines = Lines::new(text);
    let (ln, head) = lines.expect("frame count")?;
    let frame_count = parse_usize(head, ln, "frame count")?;
    let mut ids: HashMap<String, usize> = HashMap::new();
    let mut joint_count: Option<usize> = None;
    let mut frames = Vec::with_capacity(frame_count);
    for f in 0..frame_count {
        let Some((ln, l)) = lines.next_line() else {
            return Err(Error::parse(
                lines.last + 1,
                format!("frame count mismatch: header declares {frame_count}, found {f}"),
            ));
        };
        let bodies = parse_usize(l, ln, "body count")?;
        let mut frame = Vec::with_capacity(bodies);
        for _ in 0..bodies {
            let (ln, info) = lines.expect("body info line")?;
            let key = info
                .split_whitespace()
                .next()
                .ok_or_else(|| Error::parse(ln, "empty body info line"))?
                .to_string();
            let next_id = ids.len();
            let person_id = *ids.entry(key).or_insert(next_id);
            let (ln, jc) = lines.expect("joint count")?;
            let jc = parse_usize(jc, ln, "joint count")?;
            match joint_count {
                None => joint_count = Some(jc),
                Some(n) if n != jc => {
                    return Err(Error::parse(ln, format!("inconsistent joint count: {jc} after {n}")))
                }
                _ => {}
            }
            let mut joints = Vec::with_capacity(jc);
            for _ in 0..jc {
                let (ln, jl) = lines.expect("joint line")?;
                let mut toks = jl.split_whitespace();
                let mut xyz = [0.0; 3];
                for v in &mut xyz {
                    let tok = toks
                        .next()
                        .ok_or_else(|| Error::parse(ln, "joint line has fewer than 3 fields"))?;
                    *v = parse_f64(tok, ln)?;
                }
                joints.push(Joint::new(xyz[0], xyz[1], xyz[2]));
            }
            frame.push(SkeletonFrame { person_id, joints });
        }
        frame.sort_by_key(|s| s.person_id);
        frames.push(frame);
    }
    if let Some((ln, _)) = lines.next_line() {
        return Err(Error::parse(
            ln,
            format!("frame count mismatch: trailing data after {frame_count} frames"),
        ));
    }
    if frames.is_empty() {
        return Err(Error::parse(1, "sequence declares zero frames"));
    }
    Ok(SkeletonSequence {
        frames,
        fps: 30.0,
        label: None,
        segments: None,
    })
}

/// Windows parsed from a label file plus the number of rejected rows.
#[derive(Debug, Clone, PartialEq)]
pub struct LabelFile {
    pub windows: WindowSet,
    pub rejected: usize,
}

/// Parses PKU-MMD style `class_id,start_frame,end_frame,confidence` rows.
/// Rows with `start >= end` are skipped and counted; output is sorted by start.
pub fn parse_pkummd_labels(text: &str) -> Result<LabelFile> {
    let mut windows = Vec::new();
    let mut rejected = 0;
    for (i, line) in text.lines().enumerate() {
        let ln = i + 1;
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').map(str::trim).collect();
        if fields.len() < 3 {
            return Err(Error::parse(
                ln,
                format!("expected 4 comma-separated fields, got {}", fields.len()),
            ));
        }
        let class_id = parse_usize(fields[0], ln, "class id")?;
        let start = parse_f64(fields[1], ln)?;
        let end = parse_f64(fields[2], ln)?;
        let score = match fields.get(3) {
            Some(tok) => parse_f64(tok, ln)?,
            None => 1.0,
        };
        if start >= end {
            warn!("label line {ln}: start {start} >= end {end}, row rejected");
            rejected += 1;
            continue;
        }
        windows.push(Window::scored(start, end, score, Some(class_id)));
    }
    windows.sort_by(|a, b| a.start.total_cmp(&b.start));
    Ok(LabelFile { windows, rejected })
}

pub fn write_pkummd_labels(windows: &[Window]) -> String {
    let mut out = String::new();
    for w in windows {
        let _ = writeln!(out, "{},{},{},{}", w.class_id.unwrap_or(0), w.start, w.end, w.score);
    }
    out
}

const FORMAT_MAGIC: &str = "skelseq 1";

/// Serialises a sequence to the internal text format:
///
/// ```text
/// skelseq 1
/// T=<frames> N=<joints> P=<max persons> fps=<fps> label=<id|->
/// segments=<K>
/// <class> <start> <end> <score>         (K lines)
/// <t> <person_id> <joint> <x> <y> <z>   (one row per joint)
/// ```
pub fn write_sequence(seq: &SkeletonSequence) -> String {
    let mut out = String::new();
    let n = seq.joint_count().unwrap_or(0);
    let label = seq.label.map_or_else(|| "-".to_string(), |l| l.to_string());
    let _ = writeln!(out, "{FORMAT_MAGIC}");
    let _ = writeln!(
        out,
        "T={} N={} P={} fps={} label={}",
        seq.frames.len(),
        n,
        seq.max_persons(),
        seq.fps,
        label
    );
    match &seq.segments {
        None => {
            let _ = writeln!(out, "segments=-");
        }
        Some(segs) => {
            let _ = writeln!(out, "segments={}", segs.len());
            for w in segs {
                let _ = writeln!(out, "{} {} {} {}", w.class_id.unwrap_or(0), w.start, w.end, w.score);
            }
        }
    }
    for (t, frame) in seq.frames.iter().enumerate() {
        for s in frame {
            for (j, p) in s.joints.iter().enumerate() {
                let _ = writeln!(out, "{t} {} {j} {} {} {}", s.person_id, p.x, p.y, p.z);
            }
        }
    }
    out
}

fn header_field<'a>(tok: Option<&'a str>, key: &str, ln: usize) -> Result<&'a str> {
    tok.and_then(|t| t.strip_prefix(key))
        .and_then(|t| t.strip_prefix('='))
        .ok_or_else(|| Error::parse(ln, format!("expected header field {key}=...")))
}

/// Parses the format produced by [`write_sequence`].
pub fn read_sequence(text: &str) -> Result<SkeletonSequence> {
    let mut lines = Lines::new(text);
    let (ln, magic) = lines.expect("format header")?;
    if magic != FORMAT_MAGIC {
        return Err(Error::parse(ln, format!("expected {FORMAT_MAGIC:?}, found {magic:?}")));
    }
    let (ln, header) = lines.expect("sequence header")?;
    let mut toks = header.split_whitespace();
    let t_len = parse_usize(header_field(toks.next(), "T", ln)?, ln, "T")?;
    let n = parse_usize(header_field(toks.next(), "N", ln)?, ln, "N")?;
    let p = parse_usize(header_field(toks.next(), "P", ln)?, ln, "P")?;
    let fps = parse_f64(header_field(toks.next(), "fps", ln)?, ln)?;
    let label = match header_field(toks.next(), "label", ln)? {
        "-" => None,
        l => Some(parse_usize(l, ln, "label")?),
    };
    if t_len == 0 {
        return Err(Error::parse(ln, "T must be at least 1"));
    }
    let (ln, seg_line) = lines.expect("segments line")?;
    let segments = match header_field(Some(seg_line), "segments", ln)? {
        "-" => None,
        k => {
            let k = parse_usize(k, ln, "segment count")?;
            let mut segs = Vec::with_capacity(k);
            for _ in 0..k {
                let (ln, l) = lines.expect("segment row")?;
                let f: Vec<&str> = l.split_whitespace().collect();
                if f.len() != 4 {
                    return Err(Error::parse(ln, "segment row needs 4 fields"));
                }
                segs.push(Window::scored(
                    parse_f64(f[1], ln)?,
                    parse_f64(f[2], ln)?,
                    parse_f64(f[3], ln)?,
                    Some(parse_usize(f[0], ln, "class id")?),
                ));
            }
            Some(segs)
        }
    };
    let mut frames: Vec<Vec<SkeletonFrame>> = vec![Vec::new(); t_len];
    while let Some((ln, l)) = lines.next_line() {
        let f: Vec<&str> = l.split_whitespace().collect();
        if f.len() != 6 {
            return Err(Error::parse(ln, format!("joint row needs 6 fields, got {}", f.len())));
        }
        let t = parse_usize(f[0], ln, "frame index")?;
        let pid = parse_usize(f[1], ln, "person id")?;
        let j = parse_usize(f[2], ln, "joint index")?;
        if t >= t_len || j >= n {
            return Err(Error::parse(ln, format!("row index (t={t}, joint={j}) out of range")));
        }
        let joint = Joint::new(parse_f64(f[3], ln)?, parse_f64(f[4], ln)?, parse_f64(f[5], ln)?);
        let frame = &mut frames[t];
        let needs_new = frame.last().is_none_or(|s| s.person_id != pid);
        if needs_new {
            if j != 0 {
                return Err(Error::parse(ln, "person rows must start at joint 0"));
            }
            frame.push(SkeletonFrame {
                person_id: pid,
                joints: Vec::with_capacity(n),
            });
        }
        let s = frame.last_mut().expect("frame has a person");
        if s.joints.len() != j {
            return Err(Error::parse(ln, format!("joint {j} out of order")));
        }
        s.joints.push(joint);
    }
    for (t, frame) in frames.iter().enumerate() {
        if frame.len() > p {
            return Err(Error::parse(
                lines.last,
                format!("frame {t} has more than P={p} persons"),
            ));
        }
        if let Some(s) = frame.iter().find(|s| s.joints.len() != n) {
            return Err(Error::parse(
                lines.last,
                format!("frame {t} person {} has {} of {n} joints", s.person_id, s.joints.len()),
            ));
        }
    }
    Ok(SkeletonSequence {
        frames,
        fps,
        label,
        segments,
    })
}

/// Resizes the time axis to `t_fixed` steps by corner-aligned linear
/// interpolation: output step `i` samples source position `i·(T−1)/(t_fixed−1)`.
///
/// A person present on only one side of an interpolation pair is copied from
/// that side. Segment boundaries are scaled by `t_fixed / T`.
pub fn resize_temporal(seq: &SkeletonSequence, t_fixed: usize) -> Result<SkeletonSequence> {
    if t_fixed < 1 {
        return Err(Error::Argument("t_fixed must be at least 1".into()));
    }
    let t_len = seq.frames.len();
    if t_len == 0 {
        return Err(Error::Data("cannot resize an empty sequence".into()));
    }
    if t_len == t_fixed {
        return Ok(seq.clone());
    }
    let frames = (0..t_fixed)
        .map(|i| {
            let u = if t_fixed > 1 && t_len > 1 {
                i as f64 * (t_len - 1) as f64 / (t_fixed - 1) as f64
            } else {
                0.0
            };
            let lo = (u.floor() as usize).min(t_len - 1);
            let hi = (lo + 1).min(t_len - 1);
            let w = u - lo as f64;
            interpolate_frame(&seq.frames[lo], &seq.frames[hi], w)
        })
        .collect();
    let ratio = t_fixed as f64 / t_len as f64;
    let segments = seq.segments.as_ref().map(|segs| {
        segs.iter()
            .map(|w| Window {
                start: w.start * ratio,
                end: w.end * ratio,
                ..*w
            })
            .collect()
    });
    Ok(SkeletonSequence {
        frames,
        fps: seq.fps * ratio,
        label: seq.label,
        segments,
    })
}

fn interpolate_frame(lo: &[SkeletonFrame], hi: &[SkeletonFrame], w: f64) -> Vec<SkeletonFrame> {
    let mut ids: Vec<usize> = lo.iter().chain(hi).map(|s| s.person_id).collect();
    ids.sort_unstable();
    ids.dedup();
    ids.into_iter()
        .map(|pid| {
            let a = lo.iter().find(|s| s.person_id == pid);
            let b = hi.iter().find(|s| s.person_id == pid);
            match (a, b) {
                (Some(a), Some(b)) if w > 0.0 => SkeletonFrame {
                    person_id: pid,
                    joints: a.joints.iter().zip(&b.joints).map(|(p, q)| p.lerp(q, w)).collect(),
                },
                (Some(a), _) => a.clone(),
                (None, Some(b)) => b.clone(),
                (None, None) => unreachable!("person id taken from one of the frames"),
            }
        })
        .collect()
}

/// `out[t] = coords[t+1] − coords[t]`, with the last frame zero.
pub fn compute_motion(coords: &SkeletonImage) -> SkeletonImage {
    let stride = coords.joints * 3;
    let mut out = SkeletonImage::zeros(coords.frames, coords.joints);
    for t in 0..coords.frames.saturating_sub(1) {
        let (cur, next) = (
            &coords.data[t * stride..(t + 1) * stride],
            &coords.data[(t + 1) * stride..(t + 2) * stride],
        );
        for ((o, a), b) in out.data[t * stride..(t + 1) * stride].iter_mut().zip(cur).zip(next) {
            *o = b - a;
        }
    }
    out
}

/// Builds exactly `p_fixed` per-person stream pairs.
///
/// Persons are ordered by `person_id` and the lowest ids are kept. Missing
/// persons are filled with a copy of the first person's stream, and a frame
/// where a kept person is absent borrows that frame's lowest-id skeleton, so
/// the element-wise max over persons is unaffected by the padding.
pub fn regularize_persons(seq: &SkeletonSequence, p_fixed: usize) -> Result<PersonStreams> {
    if p_fixed < 1 {
        return Err(Error::Argument("p_fixed must be at least 1".into()));
    }
    seq.validate()?;
    if let Some(t) = seq.frames.iter().position(Vec::is_empty) {
        return Err(Error::Data(format!("frame {t} contains no persons")));
    }
    let n = seq.joint_count().expect("validated non-empty frames");
    let mut ids: Vec<usize> = seq.frames.iter().flatten().map(|s| s.person_id).collect();
    ids.sort_unstable();
    ids.dedup();
    let dropped = ids.len().saturating_sub(p_fixed);
    if dropped > 0 {
        warn!("sequence has {} persons, keeping the {p_fixed} lowest ids", ids.len());
        ids.truncate(p_fixed);
    }
    let t_len = seq.frames.len();
    let mut pairs: Vec<SkeletonImagePair> = ids
        .iter()
        .map(|&pid| {
            let mut img = SkeletonImage::zeros(t_len, n);
            for (t, frame) in seq.frames.iter().enumerate() {
                let s = frame
                    .iter()
                    .find(|s| s.person_id == pid)
                    .unwrap_or_else(|| frame.iter().min_by_key(|s| s.person_id).expect("non-empty"));
                for (j, p) in s.joints.iter().enumerate() {
                    img.set(t, j, 0, p.x);
                    img.set(t, j, 1, p.y);
                    img.set(t, j, 2, p.z);
                }
            }
            SkeletonImagePair::from_coords(img)
        })
        .collect();
    while pairs.len() < p_fixed {
        pairs.push(pairs[0].clone());
    }
    Ok(PersonStreams {
        pairs,
        dropped_persons: dropped,
    })
}

/// Resize, then regularise persons, then compute motion on the resized coordinates.
pub fn prepare_streams(seq: &SkeletonSequence, t_fixed: usize, p_fixed: usize) -> Result<PersonStreams> {
    let resized = resize_temporal(seq, t_fixed)?;
    regularize_persons(&resized, p_fixed)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SynthMode {
    /// One labelled action per sequence.
    Trimmed,
    /// Actions embedded in background, recorded as segments.
    Untrimmed,
}

/// Configuration for [`synthesize_dataset`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthConfig {
    pub mode: SynthMode,
    pub class_count: usize,
    /// Trimmed mode: sequences generated for every class.
    pub per_class: usize,
    /// Untrimmed mode: number of sequences.
    pub sequences: usize,
    pub joints: usize,
    /// Trimmed sequence length range (inclusive).
    pub frames_min: usize,
    pub frames_max: usize,
    /// Upper bound on persons per sequence; each sequence draws 1..=persons_max.
    pub persons_max: usize,
    pub noise: f64,
    pub fps: f64,
    /// Seed for the per-class motion patterns; shared by every split drawn from
    /// the same generator.
    pub pattern_seed: u64,
    pub segments_min: usize,
    pub segments_max: usize,
    pub segment_frames_min: usize,
    pub segment_frames_max: usize,
    pub background_min: usize,
    pub background_max: usize,
    pub background_noise: f64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            mode: SynthMode::Trimmed,
            class_count: 4,
            per_class: 10,
            sequences: 20,
            joints: 10,
            frames_min: 40,
            frames_max: 80,
            persons_max: 2,
            noise: 0.02,
            fps: 30.0,
            pattern_seed: 7,
            segments_min: 2,
            segments_max: 4,
            segment_frames_min: 32,
            segment_frames_max: 64,
            background_min: 16,
            background_max: 48,
            background_noise: 0.01,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Argument(m.to_string()));
        if self.class_count == 0 || self.joints == 0 || self.persons_max == 0 {
            return bad("class_count, joints and persons_max must be positive");
        }
        if !(self.noise >= 0.0 && self.background_noise >= 0.0 && self.fps > 0.0) {
            return bad("noise levels must be ≥ 0 and fps > 0");
        }
        match self.mode {
            SynthMode::Trimmed => {
                if self.per_class == 0 || self.frames_min < 2 || self.frames_min > self.frames_max {
                    return bad("trimmed mode needs per_class ≥ 1 and 2 ≤ frames_min ≤ frames_max");
                }
            }
            SynthMode::Untrimmed => {
                if self.sequences == 0
                    || (self.segments_min == 0 && self.background_min == 0)
                    || self.segments_min > self.segments_max
                    || self.segment_frames_min < 2
                    || self.segment_frames_min > self.segment_frames_max
                    || self.background_min > self.background_max
                {
                    return bad("untrimmed mode needs sequences ≥ 1, ordered segment/background ranges and a non-empty sequence");
                }
            }
        }
        Ok(())
    }
}

/// Per-class parametric trajectory: each joint axis oscillates around a rest
/// pose with class-specific amplitude, frequency and phase.
#[derive(Debug, Clone)]
struct ClassPattern {
    amplitude: Vec<[f64; 3]>,
    phase: Vec<[f64; 3]>,
    cycles: f64,
}

fn rest_pose(joints: usize) -> Vec<Joint> {
    // A vertical chain with alternating left/right offsets.
    (0..joints)
        .map(|j| {
            let side = if j % 2 == 0 { -0.15 } else { 0.15 };
            Joint::new(side * (1 + j % 3) as f64, 1.6 - 1.5 * j as f64 / joints as f64, 3.0)
        })
        .collect()
}

fn class_patterns(cfg: &SynthConfig) -> Vec<ClassPattern> {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.pattern_seed);
    (0..cfg.class_count)
        .map(|c| {
            let active: Vec<bool> = (0..cfg.joints).map(|_| rng.gen_bool(0.5)).collect();
            let amplitude = active
                .iter()
                .map(|&a| {
                    let mut amp = [0.0; 3];
                    for v in &mut amp {
                        *v = if a {
                            rng.gen_range(0.15..0.45)
                        } else {
                            rng.gen_range(0.0..0.03)
                        };
                    }
                    amp
                })
                .collect();
            let phase = (0..cfg.joints)
                .map(|_| {
                    [
                        rng.gen_range(0.0..2.0 * PI),
                        rng.gen_range(0.0..2.0 * PI),
                        rng.gen_range(0.0..2.0 * PI),
                    ]
                })
                .collect();
            ClassPattern {
                amplitude,
                phase,
                cycles: 1.0 + (c % 3) as f64 * 0.5 + rng.gen_range(0.0..0.25),
            }
        })
        .collect()
}

fn pattern_frame(
    pattern: &ClassPattern,
    rest: &[Joint],
    progress: f64,
    gain: f64,
    offset: f64,
    noise: f64,
    rng: &mut ChaCha8Rng,
) -> Vec<Joint> {
    rest.iter()
        .enumerate()
        .map(|(j, r)| {
            let mut v = [r.x + offset, r.y, r.z];
            for (c, val) in v.iter_mut().enumerate() {
                let arg = 2.0 * PI * pattern.cycles * progress + pattern.phase[j][c];
                *val += gain * pattern.amplitude[j][c] * arg.sin() + noise * rng.gen_range(-1.0..1.0);
            }
            Joint::new(v[0], v[1], v[2])
        })
        .collect()
}

/// Deterministic synthetic dataset. Trimmed mode labels classes `0..K`;
/// untrimmed mode records segments with class ids `1..=K` (0 is background).
pub fn synthesize_dataset(cfg: &SynthConfig, rng_seed: u64) -> Result<Vec<SkeletonSequence>> {
    cfg.validate()?;
    let patterns = class_patterns(cfg);
    let rest = rest_pose(cfg.joints);
    let mut rng = ChaCha8Rng::seed_from_u64(rng_seed);
    let mut out = Vec::new();
    match cfg.mode {
        SynthMode::Trimmed => {
            for i in 0..cfg.per_class * cfg.class_count {
                let label = i % cfg.class_count;
                let t_len = rng.gen_range(cfg.frames_min..=cfg.frames_max);
                let persons = rng.gen_range(1..=cfg.persons_max);
                let gains: Vec<f64> = (0..persons).map(|_| rng.gen_range(0.8..1.2)).collect();
                let shift = rng.gen_range(-0.05..0.05);
                let frames = (0..t_len)
                    .map(|t| {
                        let progress = t as f64 / (t_len - 1) as f64 + shift;
                        (0..persons)
                            .map(|p| SkeletonFrame {
                                person_id: p,
                                joints: pattern_frame(
                                    &patterns[label],
                                    &rest,
                                    progress,
                                    gains[p],
                                    p as f64 * 1.0,
                                    cfg.noise,
                                    &mut rng,
                                ),
                            })
                            .collect()
                    })
                    .collect();
                out.push(SkeletonSequence {
                    frames,
                    fps: cfg.fps,
                    label: Some(label),
                    segments: None,
                });
            }
        }
        SynthMode::Untrimmed => {
            for _ in 0..cfg.sequences {
                let count = rng.gen_range(cfg.segments_min..=cfg.segments_max);
                let mut frames: Vec<Vec<SkeletonFrame>> = Vec::new();
                let mut segments = Vec::with_capacity(count);
                let background = |len: usize, frames: &mut Vec<Vec<SkeletonFrame>>, rng: &mut ChaCha8Rng| {
                    for _ in 0..len {
                        let joints = rest
                            .iter()
                            .map(|r| {
                                Joint::new(
                                    r.x + cfg.background_noise * rng.gen_range(-1.0..1.0),
                                    r.y + cfg.background_noise * rng.gen_range(-1.0..1.0),
                                    r.z + cfg.background_noise * rng.gen_range(-1.0..1.0),
                                )
                            })
                            .collect();
                        frames.push(vec![SkeletonFrame { person_id: 0, joints }]);
                    }
                };
                for _ in 0..count {
                    let bg = rng.gen_range(cfg.background_min..=cfg.background_max);
                    background(bg, &mut frames, &mut rng);
                    let class = rng.gen_range(0..cfg.class_count);
                    let len = rng.gen_range(cfg.segment_frames_min..=cfg.segment_frames_max);
                    let gain = rng.gen_range(0.8..1.2);
                    let start = frames.len();
                    for t in 0..len {
                        let progress = t as f64 / (len - 1) as f64;
                        // Envelope keeps the segment boundaries continuous with the rest pose.
                        let envelope = (PI * progress).sin().max(0.0).sqrt();
                        frames.push(vec![SkeletonFrame {
                            person_id: 0,
                            joints: pattern_frame(
                                &patterns[class],
                                &rest,
                                progress,
                                gain * envelope,
                                0.0,
                                cfg.noise,
                                &mut rng,
                            ),
                        }]);
                    }
                    segments.push(Window::scored(start as f64, (start + len) as f64, 1.0, Some(class + 1)));
                }
                let bg = rng.gen_range(cfg.background_min..=cfg.background_max);
                background(bg, &mut frames, &mut rng);
                out.push(SkeletonSequence {
                    frames,
                    fps: cfg.fps,
                    label: None,
                    segments: Some(segments),
                });
            }
        }
    }
    Ok(out)
}
