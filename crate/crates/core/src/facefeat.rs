//! Geometric facial features from 66-point landmark shapes.
//!
//! Landmarks follow the iBUG 66-point layout: jaw 0-16, brows 17-21 (subject
//! right) and 22-26 (subject left), nose 27-35, eyes 36-41 (right) and 42-47
//! (left), outer lip 48-59, inner lip 60-65. Each geometric channel is a
//! tracked distance divided by the same distance on a reference shape:
//!
//! | channel | distance |
//! |---------|----------|
//! | inBrL / inBrR | inner brow point (22 / 21) to eye centre |
//! | otBrL / otBrR | outer brow point (26 / 17) to eye centre |
//! | eyeOL / eyeOR | upper-lid midpoint (43,44 / 37,38) to lower-lid midpoint (46,47 / 40,41) |
//! | oLipH | outer lip top (51) to bottom (57) |
//! | iLipH | inner lip top (61) to bottom (64) |
//! | LpCDt | lip corners (48, 54) |
//!
//! Yaw, pitch and roll pass through unchanged.

use std::io::Read;
use std::path::Path;

use ndarray::Array2;
use rayon::prelude::*;
use thiserror::Error;

use crate::dataset::{DatasetError, FeatureSeries, CHANNELS, N_CHANNELS};

pub const N_LANDMARKS: usize = 66;
pub const N_GEOMETRIC: usize = 9;

const FIELDS_PER_ROW: usize = 2 * N_LANDMARKS + 3;
const BUILTIN_REFERENCE: &str = include_str!("../data/reference_shape.csv");

#[derive(Debug, Error)]
pub enum FaceError {
    #[error("line {line}: expected {N_LANDMARKS} landmarks plus pose, found {found} fields")]
    MissingLandmark { line: usize, found: usize },
    #[error("line {line}: {reason}")]
    Malformed { line: usize, reason: String },
    #[error("non-finite landmark or pose value")]
    NonFinite,
    #[error("degenerate shape at frame {frame}: {channel} distance is not finite")]
    DegenerateShape { frame: usize, channel: &'static str },
    #[error("reference distance for {0} is not strictly positive")]
    DegenerateReference(&'static str),
    #[error("no landmark frames")]
    EmptyInput,
    #[error(transparent)]
    Dataset(#[from] DatasetError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// One tracked face: 66 points and head pose in degrees.
#[derive(Debug, Clone, PartialEq)]
pub struct LandmarkFrame {
    points: Vec<[f64; 2]>,
    pose: [f64; 3],
}

impl LandmarkFrame {
    pub fn new(points: Vec<[f64; 2]>, pose: [f64; 3]) -> Result<Self, FaceError> {
        if points.len() != N_LANDMARKS {
            return Err(FaceError::MissingLandmark { line: 0, found: 2 * points.len() + 3 });
        }
        if points.iter().flatten().chain(&pose).any(|v| !v.is_finite()) {
            return Err(FaceError::NonFinite);
        }
        Ok(LandmarkFrame { points, pose })
    }

    pub fn points(&self) -> &[[f64; 2]] {
        &self.points
    }

    pub fn pose(&self) -> [f64; 3] {
        self.pose
    }

    /// Every coordinate multiplied by `s`; pose unchanged.
    pub fn scaled(&self, s: f64) -> LandmarkFrame {
        LandmarkFrame { points: self.points.iter().map(|p| [p[0] * s, p[1] * s]).collect(), pose: self.pose }
    }

    fn mean(&self, idx: &[usize]) -> [f64; 2] {
        let k = idx.len() as f64;
        let (x, y) = idx.iter().fold((0.0, 0.0), |(x, y), &i| (x + self.points[i][0], y + self.points[i][1]));
        [x / k, y / k]
    }

    /// The nine tracked distances in channel order.
    pub fn distances(&self) -> [f64; N_GEOMETRIC] {
        let p = |i: usize| self.points[i];
        let right_eye = self.mean(&[36, 37, 38, 39, 40, 41]);
        let left_eye = self.mean(&[42, 43, 44, 45, 46, 47]);
        [
            dist(p(22), left_eye),
            dist(p(21), right_eye),
            dist(p(26), left_eye),
            dist(p(17), right_eye),
            dist(self.mean(&[43, 44]), self.mean(&[46, 47])),
            dist(self.mean(&[37, 38]), self.mean(&[40, 41])),
            dist(p(51), p(57)),
            dist(p(61), p(64)),
            dist(p(48), p(54)),
        ]
    }
}

fn dist(a: [f64; 2], b: [f64; 2]) -> f64 {
    (a[0] - b[0]).hypot(a[1] - b[1])
}

/// Canonical shape whose distances normalize the tracked ones.
#[derive(Debug, Clone, PartialEq)]
pub struct ReferenceShape {
    shape: LandmarkFrame,
    distances: [f64; N_GEOMETRIC],
}

impl ReferenceShape {
    pub fn new(shape: LandmarkFrame) -> Result<Self, FaceError> {
        let distances = shape.distances();
        for (d, name) in distances.iter().zip(CHANNELS) {
            if !(d.is_finite() && *d > 0.0) {
                return Err(FaceError::DegenerateReference(name));
            }
        }
        Ok(ReferenceShape { shape, distances })
    }

    /// The mean shape shipped with the crate.
    pub fn builtin() -> Self {
        let frames = read_landmarks(BUILTIN_REFERENCE.as_bytes()).expect("bundled reference shape parses");
        ReferenceShape::new(frames.into_iter().next().expect("one row")).expect("bundled reference shape is valid")
    }

    pub fn shape(&self) -> &LandmarkFrame {
        &self.shape
    }

    pub fn distances(&self) -> &[f64; N_GEOMETRIC] {
        &self.distances
    }
}

fn features_at(frame: &LandmarkFrame, reference: &ReferenceShape, index: usize) -> Result<[f64; N_CHANNELS], FaceError> {
    let mut out = [0.0; N_CHANNELS];
    for (c, (d, r)) in frame.distances().iter().zip(&reference.distances).enumerate() {
        if !d.is_finite() {
            return Err(FaceError::DegenerateShape { frame: index, channel: CHANNELS[c] });
        }
        out[c] = d / r;
    }
    out[N_GEOMETRIC..].copy_from_slice(&frame.pose);
    Ok(out)
}

/// The 12-channel feature vector of one frame.
pub fn compute_features(frame: &LandmarkFrame, reference: &ReferenceShape) -> Result<[f64; N_CHANNELS], FaceError> {
    features_at(frame, reference, 0)
}

/// Feature series with row `i` equal to `compute_features(frames[i])`.
pub fn extract_series(frames: &[LandmarkFrame], reference: &ReferenceShape, fps: f64) -> Result<FeatureSeries, FaceError> {
    if frames.is_empty() {
        return Err(FaceError::EmptyInput);
    }
    let rows: Vec<[f64; N_CHANNELS]> =
        frames.par_iter().enumerate().map(|(i, f)| features_at(f, reference, i)).collect::<Result<_, _>>()?;
    let mut data = Array2::zeros((rows.len(), N_CHANNELS));
    for (i, r) in rows.iter().enumerate() {
        for (c, v) in r.iter().enumerate() {
            data[[i, c]] = *v;
        }
    }
    Ok(FeatureSeries::new(data, fps)?)
}

/// Parses landmark rows: `x0,y0,...,x65,y65,yaw,pitch,roll`, with an
/// optional header row.
pub fn read_landmarks<R: Read>(rdr: R) -> Result<Vec<LandmarkFrame>, FaceError> {
    let mut reader = csv::ReaderBuilder::new().has_headers(false).flexible(true).trim(csv::Trim::All).from_reader(rdr);
    let mut frames = Vec::new();
    for (i, rec) in reader.records().enumerate() {
        let line = i + 1;
        let rec = rec.map_err(|e| FaceError::Malformed { line, reason: e.to_string() })?;
        if rec.iter().all(|f| f.is_empty()) {
            continue;
        }
        if i == 0 && rec.get(0).is_some_and(|f| f.parse::<f64>().is_err()) {
            continue;
        }
        if rec.len() != FIELDS_PER_ROW {
            return Err(FaceError::MissingLandmark { line, found: rec.len() });
        }
        let vals = rec
            .iter()
            .map(|f| f.parse::<f64>().map_err(|_| FaceError::Malformed { line, reason: format!("not a number: {f:?}") }))
            .collect::<Result<Vec<f64>, _>>()?;
        if vals.iter().any(|v| !v.is_finite()) {
            return Err(FaceError::Malformed { line, reason: "non-finite value".into() });
        }
        let points = vals[..2 * N_LANDMARKS].chunks(2).map(|c| [c[0], c[1]]).collect();
        let pose = [vals[2 * N_LANDMARKS], vals[2 * N_LANDMARKS + 1], vals[2 * N_LANDMARKS + 2]];
        frames.push(LandmarkFrame::new(points, pose)?);
    }
    Ok(frames)
}

pub fn load_landmarks(path: impl AsRef<Path>) -> Result<Vec<LandmarkFrame>, FaceError> {
    read_landmarks(crate::dataset::open(path.as_ref())?)
}

/// Reads a reference shape: the first landmark row of the file.
pub fn load_reference_shape(path: impl AsRef<Path>) -> Result<ReferenceShape, FaceError> {
    let frame = load_landmarks(path)?.into_iter().next().ok_or(FaceError::EmptyInput)?;
    ReferenceShape::new(frame)
}

/// Renders frames in the landmark CSV layout, header included.
pub fn write_landmarks(frames: &[LandmarkFrame]) -> String {
    let mut header: Vec<String> = (0..N_LANDMARKS).flat_map(|i| [format!("x{i}"), format!("y{i}")]).collect();
    header.extend(["yaw", "pitch", "roll"].map(String::from));
    let mut out = header.join(",");
    out.push('\n');
    for f in frames {
        let fields: Vec<String> =
            f.points.iter().flatten().chain(&f.pose).map(|v| format!("{v}")).collect();
        out.push_str(&fields.join(","));
        out.push('\n');
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identity_ratios() {
        let r = ReferenceShape::builtin();
        let f = compute_features(r.shape(), &r).unwrap();
        assert!(f[..N_GEOMETRIC].iter().all(|&v| v == 1.0));
    }

    #[test]
    fn closed_left_eye() {
        let r = ReferenceShape::builtin();
        let mut pts = r.shape().points().to_vec();
        for (up, low) in [(43, 47), (44, 46)] {
            pts[up] = pts[low];
        }
        let f = compute_features(&LandmarkFrame::new(pts, [0.0; 3]).unwrap(), &r).unwrap();
        assert_eq!(f[4], 0.0);
        assert_eq!(f[5], 1.0);
    }

    #[test]
    fn doubled_shape() {
        let r = ReferenceShape::builtin();
        let f = compute_features(&r.shape().scaled(2.0), &r).unwrap();
        for v in &f[..N_GEOMETRIC] {
            assert!((v - 2.0).abs() < 1e-12);
        }
    }

    #[test]
    fn pose_passes_through_and_ignores_scale() {
        let r = ReferenceShape::builtin();
        let frame = LandmarkFrame::new(r.shape().points().to_vec(), [12.5, -3.0, 4.25]).unwrap();
        let a = compute_features(&frame, &r).unwrap();
        let b = compute_features(&frame.scaled(3.7), &r).unwrap();
        assert_eq!(&a[N_GEOMETRIC..], &[12.5, -3.0, 4.25]);
        assert_eq!(&a[N_GEOMETRIC..], &b[N_GEOMETRIC..]);
    }

    #[test]
    fn empty_and_short_rows() {
        let r = ReferenceShape::builtin();
        assert!(matches!(extract_series(&[], &r, 25.0), Err(FaceError::EmptyInput)));
        let row: Vec<String> = (0..2 * 65 + 3).map(|i| format!("{}", i as f64 * 0.01)).collect();
        let err = read_landmarks(row.join(",").as_bytes()).unwrap_err();
        assert!(matches!(err, FaceError::MissingLandmark { line: 1, found: 133 }));
    }

    #[test]
    fn csv_round_trip() {
        let r = ReferenceShape::builtin();
        let frames = vec![r.shape().clone(), r.shape().scaled(1.5)];
        let back = read_landmarks(write_landmarks(&frames).as_bytes()).unwrap();
        assert_eq!(back, frames);
    }
}
