//! Feature extraction on frames built from the reference shape.

use ems_core::dataset::CHANNELS;
use ems_core::facefeat::{compute_features, extract_series, read_landmarks, write_landmarks, FaceError, LandmarkFrame, ReferenceShape};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn centre(p: &[[f64; 2]], idx: &[usize]) -> [f64; 2] {
    let k = idx.len() as f64;
    [idx.iter().map(|&i| p[i][0]).sum::<f64>() / k, idx.iter().map(|&i| p[i][1]).sum::<f64>() / k]
}

fn d(a: [f64; 2], b: [f64; 2]) -> f64 {
    ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2)).sqrt()
}

/// The nine distances written out point by point.
fn oracle_distances(p: &[[f64; 2]]) -> [f64; 9] {
    let right_eye = centre(p, &[36, 37, 38, 39, 40, 41]);
    let left_eye = centre(p, &[42, 43, 44, 45, 46, 47]);
    [
        d(p[22], left_eye),
        d(p[21], right_eye),
        d(p[26], left_eye),
        d(p[17], right_eye),
        d(centre(p, &[43, 44]), centre(p, &[46, 47])),
        d(centre(p, &[37, 38]), centre(p, &[40, 41])),
        d(p[51], p[57]),
        d(p[61], p[64]),
        d(p[48], p[54]),
    ]
}

fn mixed_frames(reference: &ReferenceShape, rng: &mut ChaCha8Rng) -> Vec<LandmarkFrame> {
    let base = reference.shape().points().to_vec();
    let mut frames = Vec::new();
    for i in 0..30 {
        let mut p = base.clone();
        match i % 4 {
            // Untouched neutral face.
            0 => {}
            // Uniform scale about the nose tip.
            1 => {
                let s = rng.gen_range(0.5..2.0);
                let o = base[30];
                for q in &mut p {
                    *q = [o[0] + s * (q[0] - o[0]), o[1] + s * (q[1] - o[1])];
                }
            }
            // Raised brows and an open mouth.
            2 => {
                for k in 17..27 {
                    p[k][1] -= rng.gen_range(0.0..8.0);
                }
                let drop = rng.gen_range(0.0..15.0);
                for k in [57, 64] {
                    p[k][1] += drop;
                }
            }
            // Independent jitter on every point.
            _ => {
                for q in &mut p {
                    q[0] += rng.gen_range(-1.5..1.5);
                    q[1] += rng.gen_range(-1.5..1.5);
                }
            }
        }
        let pose = [rng.gen_range(-30.0..30.0), rng.gen_range(-20.0..20.0), rng.gen_range(-15.0..15.0)];
        frames.push(LandmarkFrame::new(p, pose).unwrap());
    }
    frames
}

#[test]
fn mixed_frames_match_point_by_point_oracle() {
    let reference = ReferenceShape::builtin();
    let ref_d = oracle_distances(reference.shape().points());
    let mut rng = ChaCha8Rng::seed_from_u64(66);
    let frames = mixed_frames(&reference, &mut rng);
    let series = extract_series(&frames, &reference, 30.0).unwrap();
    assert_eq!(series.n_frames(), frames.len());
    assert_eq!(series.fps(), 30.0);
    for (t, f) in frames.iter().enumerate() {
        let want = oracle_distances(f.points());
        for c in 0..9 {
            let got = series.data()[[t, c]];
            assert!((got - want[c] / ref_d[c]).abs() < 1e-12, "frame {t} {}", CHANNELS[c]);
        }
        for c in 0..3 {
            assert_eq!(series.data()[[t, 9 + c]], f.pose()[c]);
        }
        if t % 4 == 0 {
            assert!(series.frame(t).iter().take(9).all(|v| (v - 1.0).abs() < 1e-12));
        }
    }
}

#[test]
fn scaling_a_frame_scales_every_geometric_channel() {
    let reference = ReferenceShape::builtin();
    let f = reference.shape().scaled(1.75);
    let feats = compute_features(&f, &reference).unwrap();
    assert!(feats[..9].iter().all(|v| (v - 1.75).abs() < 1e-12));
}

#[test]
fn csv_round_trip_preserves_features() {
    let reference = ReferenceShape::builtin();
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let frames = mixed_frames(&reference, &mut rng);
    let text = write_landmarks(&frames);
    let back = read_landmarks(text.as_bytes()).unwrap();
    assert_eq!(back, frames);
}

#[test]
fn short_rows_report_line_and_count() {
    let reference = ReferenceShape::builtin();
    let text = write_landmarks(&[reference.shape().clone()]);
    let mut lines: Vec<String> = text.lines().map(String::from).collect();
    let fields: Vec<&str> = lines[1].split(',').collect();
    // Drop one landmark (two coordinates).
    let short = [&fields[..130], &fields[132..]].concat().join(",");
    lines.push(short);
    match read_landmarks(lines.join("\n").as_bytes()) {
        Err(FaceError::MissingLandmark { line: 3, found: 133 }) => {}
        other => panic!("unexpected {other:?}"),
    }
}
