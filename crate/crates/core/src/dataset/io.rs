//! CSV readers and writers for feature series, traces, region labels and
//! session directories.

use std::fs::{self, File};
use std::io::{Read, Write};
use std::path::Path;

use ndarray::Array2;

use super::{
    channel_index, impute_gaps, AnnotationTrace, DatasetError, EmState, FeatureSeries, Session,
    CHANNELS, N_CHANNELS,
};
use crate::regions::{Region, RegionLabels};

fn parse_cell(cell: &str) -> Option<f64> {
    let cell = cell.trim();
    if cell.is_empty() || cell.eq_ignore_ascii_case("nan") || cell.eq_ignore_ascii_case("na") {
        return Some(f64::NAN);
    }
    cell.parse::<f64>().ok()
}

fn reader<R: Read>(rdr: R) -> csv::Reader<R> {
    csv::ReaderBuilder::new().has_headers(false).flexible(true).trim(csv::Trim::All).from_reader(rdr)
}

pub fn load_feature_series(path: impl AsRef<Path>, fps: f64) -> Result<FeatureSeries, DatasetError> {
    read_feature_series(super::open(path.as_ref())?, fps)
}

/// Reads a feature CSV. The header must name all twelve channels (any order,
/// case-insensitive); an optional `frame` column must increase strictly.
/// Blank or `NaN` cells are imputed.
pub fn read_feature_series<R: Read>(rdr: R, fps: f64) -> Result<FeatureSeries, DatasetError> {
    let mut rdr = reader(rdr);
    let mut records = rdr.records();
    let header = match records.next() {
        Some(rec) => rec?,
        None => return Err(DatasetError::EmptyFile),
    };
    let mut column_of = [usize::MAX; N_CHANNELS];
    let mut frame_col = None;
    for (col, name) in header.iter().enumerate() {
        if name.eq_ignore_ascii_case("frame") {
            frame_col = Some(col);
        } else if let Some(ch) = channel_index(name) {
            if column_of[ch] != usize::MAX {
                return Err(DatasetError::MalformedRow {
                    line: 1,
                    reason: format!("duplicate column {name}"),
                });
            }
            column_of[ch] = col;
        }
    }
    if let Some(ch) = column_of.iter().position(|&c| c == usize::MAX) {
        return Err(DatasetError::MissingChannel(CHANNELS[ch].to_string()));
    }

    let mut flat = Vec::new();
    let mut last_frame: Option<f64> = None;
    for rec in records {
        let rec = rec?;
        let line = rec.position().map_or(0, |p| p.line());
        if rec.len() != header.len() {
            return Err(DatasetError::MalformedRow {
                line,
                reason: format!("expected {} fields, found {}", header.len(), rec.len()),
            });
        }
        if let Some(fc) = frame_col {
            let frame = rec[fc].trim().parse::<f64>().map_err(|_| DatasetError::MalformedRow {
                line,
                reason: format!("bad frame index {:?}", &rec[fc]),
            })?;
            if last_frame.is_some_and(|prev| frame <= prev) {
                return Err(DatasetError::MalformedRow { line, reason: "frame index not increasing".into() });
            }
            last_frame = Some(frame);
        }
        for &col in &column_of {
            let v = parse_cell(&rec[col]).ok_or_else(|| DatasetError::MalformedRow {
                line,
                reason: format!("not a number: {:?}", &rec[col]),
            })?;
            flat.push(v);
        }
    }
    if flat.is_empty() {
        return Err(DatasetError::EmptyFile);
    }
    let n = flat.len() / N_CHANNELS;
    let mut data = Array2::from_shape_vec((n, N_CHANNELS), flat)
        .map_err(|e| DatasetError::InvalidSeries(e.to_string()))?;
    for (ch, mut column) in data.columns_mut().into_iter().enumerate() {
        let mut values = column.to_vec();
        if values.iter().any(|v| v.is_nan()) {
            if !impute_gaps(&mut values) {
                return Err(DatasetError::EmptyChannel(CHANNELS[ch].to_string()));
            }
            column.assign(&ndarray::ArrayView1::from(&values));
        }
    }
    FeatureSeries::new(data, fps)
}

/// Writes the canonical feature CSV (with a `frame` column). Values use the
/// shortest representation that parses back to the same `f64`.
pub fn write_feature_series<W: Write>(mut out: W, series: &FeatureSeries) -> Result<(), DatasetError> {
    write!(out, "frame")?;
    for name in CHANNELS {
        write!(out, ",{name}")?;
    }
    writeln!(out)?;
    for (i, row) in series.data().rows().into_iter().enumerate() {
        write!(out, "{i}")?;
        for v in row {
            write!(out, ",{v}")?;
        }
        writeln!(out)?;
    }
    Ok(())
}

pub fn load_annotation_trace(
    path: impl AsRef<Path>,
    state: EmState,
    fps: f64,
) -> Result<AnnotationTrace, DatasetError> {
    read_annotation_trace(super::open(path.as_ref())?, state, fps)
}

/// Reads a trace CSV: `frame,rating`, a single `rating` column, or the same
/// without a header. Ratings within 1e-6 outside [-1, +1] are clipped.
pub fn read_annotation_trace<R: Read>(
    rdr: R,
    state: EmState,
    fps: f64,
) -> Result<AnnotationTrace, DatasetError> {
    let mut rdr = reader(rdr);
    let mut values = Vec::new();
    let mut rating_col: Option<usize> = None;
    for (idx, rec) in rdr.records().enumerate() {
        let rec = rec?;
        let line = rec.position().map_or(0, |p| p.line());
        if rec.is_empty() || (rec.len() == 1 && rec[0].is_empty()) {
            continue;
        }
        if idx == 0 {
            if let Some(col) = rec.iter().position(|h| h.eq_ignore_ascii_case("rating")) {
                rating_col = Some(col);
                continue;
            }
        }
        let col = *rating_col.get_or_insert(rec.len() - 1);
        let cell = rec.get(col).ok_or_else(|| DatasetError::MalformedRow {
            line,
            reason: "missing rating field".into(),
        })?;
        let v = cell.parse::<f64>().map_err(|_| DatasetError::MalformedRow {
            line,
            reason: format!("not a number: {cell:?}"),
        })?;
        values.push(v);
    }
    if values.is_empty() {
        return Err(DatasetError::EmptyFile);
    }
    AnnotationTrace::with_tolerance(state, values, fps)
}

pub fn write_annotation_trace<W: Write>(mut out: W, trace: &AnnotationTrace) -> Result<(), DatasetError> {
    writeln!(out, "frame,rating")?;
    for (i, v) in trace.values().iter().enumerate() {
        writeln!(out, "{i},{v}")?;
    }
    Ok(())
}

pub fn write_region_labels<W: Write>(mut out: W, labels: &RegionLabels) -> Result<(), DatasetError> {
    writeln!(out, "frame,region")?;
    for (i, r) in labels.labels().iter().enumerate() {
        writeln!(out, "{i},{}", r.name())?;
    }
    Ok(())
}

pub fn load_region_labels(path: impl AsRef<Path>) -> Result<RegionLabels, DatasetError> {
    let mut rdr = reader(super::open(path.as_ref())?);
    let mut labels = Vec::new();
    for (idx, rec) in rdr.records().enumerate() {
        let rec = rec?;
        let line = rec.position().map_or(0, |p| p.line());
        let cell = rec.get(rec.len().saturating_sub(1)).unwrap_or("");
        if idx == 0 && cell.eq_ignore_ascii_case("region") {
            continue;
        }
        let region = cell.parse::<Region>().map_err(|_| DatasetError::MalformedRow {
            line,
            reason: format!("unknown region {cell:?}"),
        })?;
        labels.push(region);
    }
    if labels.is_empty() {
        return Err(DatasetError::EmptyFile);
    }
    Ok(RegionLabels::new(labels))
}

/// Writes `features.csv`, `trace.csv` (or `trace_<State>.csv` when the
/// session carries several states) and `regions.csv` when labels exist.
pub fn write_session_dir(dir: impl AsRef<Path>, session: &Session) -> Result<(), DatasetError> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir)?;
    write_feature_series(File::create(dir.join("features.csv"))?, &session.features)?;
    let single = session.traces.len() == 1;
    for (state, trace) in &session.traces {
        let name = if single { "trace.csv".to_string() } else { format!("trace_{state}.csv") };
        write_annotation_trace(File::create(dir.join(name))?, trace)?;
    }
    for (state, labels) in &session.regions {
        let name = if single { "regions.csv".to_string() } else { format!("regions_{state}.csv") };
        write_region_labels(File::create(dir.join(name))?, labels)?;
    }
    let mut meta = File::create(dir.join("session.txt"))?;
    writeln!(meta, "id={}", session.id)?;
    writeln!(meta, "fps={}", session.features.fps())?;
    let states: Vec<&str> = session.traces.keys().map(|s| s.name()).collect();
    writeln!(meta, "states={}", states.join(","))?;
    Ok(())
}

/// Loads a session directory written by [`write_session_dir`] (or laid out the
/// same way by hand) for one state. `trace_<State>.csv` is preferred over
/// `trace.csv`. The id comes from `session.txt` when present, else the
/// directory name.
pub fn load_session_dir(dir: impl AsRef<Path>, state: EmState, fps: f64) -> Result<Session, DatasetError> {
    let dir = dir.as_ref();
    let features = load_feature_series(dir.join("features.csv"), fps)?;
    let named = dir.join(format!("trace_{state}.csv"));
    let trace_path = if named.exists() { named } else { dir.join("trace.csv") };
    let trace = load_annotation_trace(trace_path, state, fps)?;
    let mut id = dir.file_name().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    if let Ok(meta) = fs::read_to_string(dir.join("session.txt")) {
        if let Some(v) = meta.lines().find_map(|l| l.strip_prefix("id=")) {
            id = v.trim().to_string();
        }
    }
    let mut session = Session::new(id, features, vec![trace])?;
    let named = dir.join(format!("regions_{state}.csv"));
    let regions_path = if named.exists() { named } else { dir.join("regions.csv") };
    if regions_path.exists() {
        let labels = load_region_labels(regions_path)?;
        let n = session.n_frames().min(labels.len());
        if n < session.n_frames() {
            session = session.frames(session.id.clone(), 0, n);
        }
        session.regions.insert(state, RegionLabels::new(labels.labels()[..n].to_vec()));
    }
    Ok(session)
}

#[cfg(test)]
mod tests {
    use super::*;

    const HEADER: &str = "frame,inBrL,inBrR,otBrL,otBrR,eyeOL,eyeOR,oLipH,iLipH,LpCDt,Yaw,Pitch,Roll";

    fn row(i: usize) -> String {
        let vals: Vec<String> = (0..12).map(|c| format!("{}", (i * 12 + c) as f64 * 0.5)).collect();
        format!("{i},{}", vals.join(","))
    }

    #[test]
    fn three_rows_all_headers() {
        let text = format!("{HEADER}\n{}\n{}\n{}\n", row(0), row(1), row(2));
        let s = read_feature_series(text.as_bytes(), 25.0).unwrap();
        assert_eq!(s.n_frames(), 3);
        assert_eq!(s.data()[[2, 11]], 35.0 * 0.5);
    }

    #[test]
    fn columns_reordered_to_canonical() {
        let names: Vec<&str> = CHANNELS.iter().rev().copied().collect();
        let vals: Vec<String> = (0..12).map(|c| c.to_string()).collect();
        let text = format!("{}\n{}\n", names.join(","), vals.join(","));
        let s = read_feature_series(text.as_bytes(), 25.0).unwrap();
        // reversed header: column 0 in the file is Roll
        assert_eq!(s.data()[[0, 11]], 0.0);
        assert_eq!(s.data()[[0, 0]], 11.0);
    }

    #[test]
    fn missing_roll_column() {
        let header = HEADER.trim_end_matches(",Roll");
        let text = format!("{header}\n0,1,2,3,4,5,6,7,8,9,10,11\n");
        match read_feature_series(text.as_bytes(), 25.0) {
            Err(DatasetError::MissingChannel(name)) => assert_eq!(name, "Roll"),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn blank_cell_is_interpolated() {
        // 5-row fixture, oLipH blank on frame 2
        let mut lines = vec![HEADER.to_string()];
        for i in 0..5 {
            let mut cells: Vec<String> = (0..12).map(|c| format!("{}", (c + 1) as f64 * i as f64)).collect();
            if i == 2 {
                cells[6] = String::new();
            }
            lines.push(format!("{i},{}", cells.join(",")));
        }
        let s = read_feature_series(lines.join("\n").as_bytes(), 25.0).unwrap();
        // neighbours are 7*1 and 7*3, so the midpoint is 14
        assert_eq!(s.data()[[2, 6]], 0.5 * (7.0 + 21.0));
    }

    #[test]
    fn malformed_and_empty() {
        assert!(matches!(read_feature_series("".as_bytes(), 25.0), Err(DatasetError::EmptyFile)));
        assert!(matches!(
            read_feature_series(format!("{HEADER}\n").as_bytes(), 25.0),
            Err(DatasetError::EmptyFile)
        ));
        let text = format!("{HEADER}\n{}\n0,1,2\n", row(0));
        assert!(matches!(
            read_feature_series(text.as_bytes(), 25.0),
            Err(DatasetError::MalformedRow { line: 3, .. })
        ));
        let text = format!("{HEADER}\n{}\n{}\n", row(1), row(0));
        assert!(matches!(
            read_feature_series(text.as_bytes(), 25.0),
            Err(DatasetError::MalformedRow { line: 3, .. })
        ));
    }

    #[test]
    fn trace_formats() {
        let t = read_annotation_trace("rating\n0.0\n0.5\n1.0\n".as_bytes(), EmState::Certain, 25.0).unwrap();
        assert_eq!(t.values(), &[0.0, 0.5, 1.0]);
        let t = read_annotation_trace("frame,rating\n0,0.25\n1,-0.25\n".as_bytes(), EmState::Certain, 25.0)
            .unwrap();
        assert_eq!(t.values(), &[0.25, -0.25]);
        let t = read_annotation_trace("0.0\n0.5\n1.0\n".as_bytes(), EmState::Certain, 25.0).unwrap();
        assert_eq!(t.len(), 3);
        let err = read_annotation_trace("rating\n0.0\n0.5\n1.7\n".as_bytes(), EmState::Certain, 25.0)
            .unwrap_err();
        assert!(matches!(err, DatasetError::OutOfRange { frame: 2, value } if value == 1.7));
        let t = read_annotation_trace("rating\n-1.0000001\n".as_bytes(), EmState::Certain, 25.0).unwrap();
        assert_eq!(t.values(), &[-1.0]);
        assert!(matches!(
            read_annotation_trace("rating\n".as_bytes(), EmState::Certain, 25.0),
            Err(DatasetError::EmptyFile)
        ));
    }
}
