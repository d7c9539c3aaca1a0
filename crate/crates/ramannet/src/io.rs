//! Spectrum files.
//!
//! Two UTF-8 CSV layouts are accepted, both with a header row:
//!
//! * **matrix form**: `label[,meta_*...],<shift_0>,<shift_1>,...`. Every
//!   column after the metadata is a numeric Raman shift; each row is one
//!   spectrum. All rows have the same number of fields.
//! * **pairs form**: columns `sample_id`, `label`, `shift`, `intensity` in any
//!   order, plus optional `meta_*` columns. Rows sharing a `sample_id` form one
//!   spectrum; its label and metadata must agree across rows. Points may come in
//!   any order and are sorted by shift.
//!
//! A file is in pairs form exactly when its header names both `shift` and
//! `intensity`. Fields are trimmed. Metadata columns must start with `meta_`.

use std::collections::BTreeMap;
use std::fs::File;
use std::path::Path;

use ramannet_core::numerics::Matrix;
use ramannet_core::preprocess::Spectrum;

use crate::error::{CliError, Result};

/// One spectrum read from a file.
#[derive(Debug, Clone, PartialEq)]
pub struct RawRecord {
    pub sample_id: String,
    pub label: String,
    /// `(column, value)` in header order.
    pub metadata: Vec<(String, String)>,
    pub spectrum: Spectrum,
}

/// A matrix-form file held as one feature matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct MatrixFile {
    pub shifts: Vec<f64>,
    pub labels: Vec<String>,
    pub meta_columns: Vec<String>,
    /// One row per sample, aligned with `meta_columns`.
    pub metadata: Vec<Vec<String>>,
    pub features: Matrix,
}

fn reader(path: &Path) -> Result<csv::Reader<File>> {
    let file = File::open(path).map_err(|e| CliError::io(path, e))?;
    Ok(csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_reader(file))
}

fn csv_error(path: &Path, e: csv::Error) -> CliError {
    let line = e.position().map_or(0, |p| p.line());
    match e.into_kind() {
        csv::ErrorKind::Io(io) => CliError::io(path, io),
        csv::ErrorKind::UnequalLengths {
            expected_len, len, ..
        } => CliError::parse(path, line, format!("expected {expected_len} fields, found {len}")),
        other => CliError::parse(path, line, format!("{other:?}")),
    }
}

fn number(path: &Path, line: u64, column: &str, field: &str) -> Result<f64> {
    field
        .parse::<f64>()
        .ok()
        .filter(|v| v.is_finite())
        .ok_or_else(|| CliError::parse(path, line, format!("column {column:?}: {field:?} is not a finite number")))
}

fn empty(path: &Path) -> CliError {
    CliError::core_in(
        path.display(),
        ramannet_core::Error::EmptyDataset("file contains no spectra".into()),
    )
}

fn headers(path: &Path, rdr: &mut csv::Reader<File>) -> Result<Vec<String>> {
    let h = rdr.headers().map_err(|e| csv_error(path, e))?;
    if h.is_empty() || (h.len() == 1 && h[0].is_empty()) {
        return Err(empty(path));
    }
    Ok(h.iter().map(str::to_string).collect())
}

fn is_pairs(headers: &[String]) -> bool {
    headers.iter().any(|h| h == "shift") && headers.iter().any(|h| h == "intensity")
}

/// Read any spectrum file (matrix or pairs form).
pub fn read_spectra(path: &Path) -> Result<Vec<RawRecord>> {
    let mut rdr = reader(path)?;
    let h = headers(path, &mut rdr)?;
    if is_pairs(&h) {
        read_pairs(path, rdr, &h)
    } else {
        let m = read_matrix_body(path, rdr, &h)?;
        let mut out = Vec::with_capacity(m.labels.len());
        let (shifts, reversed) = ascending(&m.shifts);
        for (r, label) in m.labels.iter().enumerate() {
            let mut values = m.features.row(r).to_vec();
            if reversed {
                values.reverse();
            }
            let spectrum = Spectrum::new(shifts.clone(), values)
                .map_err(|e| CliError::core_in(format!("{}:{}", path.display(), r + 2), e))?;
            out.push(RawRecord {
                sample_id: format!("row{}", r + 1),
                label: label.clone(),
                metadata: m.meta_columns.iter().cloned().zip(m.metadata[r].iter().cloned()).collect(),
                spectrum,
            });
        }
        Ok(out)
    }
}

/// Instruments often record shifts in descending order; flip those.
fn ascending(shifts: &[f64]) -> (Vec<f64>, bool) {
    let descending = shifts.len() > 1 && shifts.windows(2).all(|w| w[0] > w[1]);
    let mut s = shifts.to_vec();
    if descending {
        s.reverse();
    }
    (s, descending)
}

/// Read a matrix-form file (e.g. the output of `preprocess`).
pub fn read_matrix(path: &Path) -> Result<MatrixFile> {
    let mut rdr = reader(path)?;
    let h = headers(path, &mut rdr)?;
    if is_pairs(&h) {
        return Err(CliError::parse(
            path,
            1,
            "expected a matrix-form file; pairs-form files must be aligned with `preprocess` first",
        ));
    }
    read_matrix_body(path, rdr, &h)
}

fn read_matrix_body(path: &Path, mut rdr: csv::Reader<File>, h: &[String]) -> Result<MatrixFile> {
    if h[0] != "label" {
        return Err(CliError::parse(path, 1, format!("first column must be \"label\", found {:?}", h[0])));
    }
    let meta_end = 1 + h[1..].iter().take_while(|c| c.starts_with("meta_")).count();
    let shifts = h[meta_end..]
        .iter()
        .map(|c| number(path, 1, c, c))
        .collect::<Result<Vec<_>>>()?;
    if shifts.is_empty() {
        return Err(CliError::parse(path, 1, "header has no shift columns"));
    }
    let mut labels = Vec::new();
    let mut metadata = Vec::new();
    let mut values = Vec::new();
    for rec in rdr.records() {
        let rec = rec.map_err(|e| csv_error(path, e))?;
        let line = rec.position().map_or(0, |p| p.line());
        labels.push(rec[0].to_string());
        metadata.push(rec.iter().skip(1).take(meta_end - 1).map(str::to_string).collect());
        for (c, field) in rec.iter().enumerate().skip(meta_end) {
            values.push(number(path, line, &h[c], field)?);
        }
    }
    if labels.is_empty() {
        return Err(empty(path));
    }
    let features = Matrix::from_vec(labels.len(), shifts.len(), values)?;
    Ok(MatrixFile {
        shifts,
        labels,
        meta_columns: h[1..meta_end].to_vec(),
        metadata,
        features,
    })
}

fn read_pairs(path: &Path, mut rdr: csv::Reader<File>, h: &[String]) -> Result<Vec<RawRecord>> {
    let col = |name: &str| {
        h.iter()
            .position(|c| c == name)
            .ok_or_else(|| CliError::parse(path, 1, format!("pairs form needs a {name:?} column")))
    };
    let (id_col, label_col, shift_col, int_col) = (col("sample_id")?, col("label")?, col("shift")?, col("intensity")?);
    let meta: Vec<usize> = (0..h.len()).filter(|&c| h[c].starts_with("meta_")).collect();
    if let Some(c) = (0..h.len()).find(|c| ![id_col, label_col, shift_col, int_col].contains(c) && !meta.contains(c)) {
        return Err(CliError::parse(path, 1, format!("unexpected column {:?}", h[c])));
    }

    struct Group {
        label: String,
        metadata: Vec<(String, String)>,
        points: Vec<(f64, f64)>,
        first_line: u64,
    }
    let mut order: Vec<String> = Vec::new();
    let mut groups: BTreeMap<String, Group> = BTreeMap::new();
    for rec in rdr.records() {
        let rec = rec.map_err(|e| csv_error(path, e))?;
        let line = rec.position().map_or(0, |p| p.line());
        let id = rec[id_col].to_string();
        let shift = number(path, line, "shift", &rec[shift_col])?;
        let intensity = number(path, line, "intensity", &rec[int_col])?;
        let metadata: Vec<(String, String)> = meta.iter().map(|&c| (h[c].clone(), rec[c].to_string())).collect();
        match groups.get_mut(&id) {
            Some(g) => {
                if g.label != rec[label_col] || g.metadata != metadata {
                    return Err(CliError::parse(
                        path,
                        line,
                        format!("sample {id:?} changes label or metadata (first seen on line {})", g.first_line),
                    ));
                }
                g.points.push((shift, intensity));
            }
            None => {
                order.push(id.clone());
                groups.insert(
                    id,
                    Group {
                        label: rec[label_col].to_string(),
                        metadata,
                        points: vec![(shift, intensity)],
                        first_line: line,
                    },
                );
            }
        }
    }
    if order.is_empty() {
        return Err(empty(path));
    }
    order
        .into_iter()
        .map(|id| {
            let mut g = groups.remove(&id).expect("grouped");
            g.points.sort_by(|a, b| a.0.total_cmp(&b.0));
            let (shifts, intensities) = g.points.into_iter().unzip();
            let spectrum = Spectrum::new(shifts, intensities)
                .map_err(|e| CliError::core_in(format!("{}: sample {id:?}", path.display()), e))?;
            Ok(RawRecord {
                sample_id: id,
                label: g.label,
                metadata: g.metadata,
                spectrum,
            })
        })
        .collect()
}

/// Write `path` via a sibling temporary file so a failed write never leaves
/// a partial output behind.
pub fn write_atomically(path: &Path, write: impl FnOnce(&mut dyn std::io::Write) -> std::io::Result<()>) -> Result<()> {
    let mut tmp_name = path.file_name().unwrap_or_default().to_os_string();
    tmp_name.push(".partial");
    let tmp = path.with_file_name(tmp_name);
    let result = (|| {
        let mut file = std::io::BufWriter::new(File::create(&tmp)?);
        write(&mut file)?;
        std::io::Write::flush(&mut file)?;
        drop(file);
        std::fs::rename(&tmp, path)
    })();
    if let Err(e) = result {
        let _ = std::fs::remove_file(&tmp);
        return Err(CliError::io(path, e));
    }
    Ok(())
}

/// Write a matrix-form file. Numbers use the shortest representation that
/// parses back to the same `f64`.
pub fn write_matrix(path: &Path, file: &MatrixFile) -> Result<()> {
    write_atomically(path, |out| {
        let mut w = csv::Writer::from_writer(out);
        let mut header: Vec<String> = vec!["label".into()];
        header.extend(file.meta_columns.iter().cloned());
        header.extend(file.shifts.iter().map(|s| s.to_string()));
        w.write_record(&header)?;
        for (r, label) in file.labels.iter().enumerate() {
            let mut row: Vec<String> = vec![label.clone()];
            row.extend(file.metadata[r].iter().cloned());
            row.extend(file.features.row(r).iter().map(|v| v.to_string()));
            w.write_record(&row)?;
        }
        w.flush()
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn file(contents: &str) -> (tempfile::TempDir, std::path::PathBuf) {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("spectra.csv");
        std::fs::write(&path, contents).unwrap();
        (dir, path)
    }

    #[test]
    fn two_row_matrix_file() {
        let (_d, p) = file("label,meta_laser,100,200,300\na,785,1,2,3\nb,532,4,5,6\n");
        let recs = read_spectra(&p).unwrap();
        assert_eq!(recs.len(), 2);
        assert_eq!(recs[1].label, "b");
        assert_eq!(recs[0].metadata, vec![("meta_laser".to_string(), "785".to_string())]);
        assert_eq!(recs[1].spectrum.intensities(), &[4.0, 5.0, 6.0]);
    }

    #[test]
    fn descending_axis_is_flipped() {
        let (_d, p) = file("label,300,200,100\na,3,2,1\n");
        let recs = read_spectra(&p).unwrap();
        assert_eq!(recs[0].spectrum.shifts(), &[100.0, 200.0, 300.0]);
        assert_eq!(recs[0].spectrum.intensities(), &[1.0, 2.0, 3.0]);
    }

    #[test]
    fn non_numeric_intensity_reports_its_line() {
        let (_d, p) = file("label,100,200\na,1,2\nb,1,oops\n");
        match read_spectra(&p) {
            Err(CliError::Parse { line, .. }) => assert_eq!(line, 3),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn ragged_rows_are_rejected() {
        let (_d, p) = file("label,100,200\na,1,2\nb,1\n");
        assert!(matches!(read_spectra(&p), Err(CliError::Parse { line: 3, .. })));
    }

    #[test]
    fn empty_files_are_empty_datasets() {
        for contents in ["", "label,100,200\n"] {
            let (_d, p) = file(contents);
            let err = read_spectra(&p).unwrap_err();
            assert_eq!(err.kind(), "data", "{contents:?}: {err}");
        }
    }

    #[test]
    fn pairs_form_groups_by_sample() {
        let (_d, p) = file(
            "sample_id,label,shift,intensity,meta_site\n\
             s1,x,200,2,A\ns2,y,100,5,B\ns1,x,100,1,A\ns2,y,300,6,B\ns1,x,300,3,A\n",
        );
        let recs = read_spectra(&p).unwrap();
        assert_eq!(recs.len(), 2);
        assert_eq!(recs[0].sample_id, "s1");
        assert_eq!(recs[0].spectrum.shifts(), &[100.0, 200.0, 300.0]);
        assert_eq!(recs[0].spectrum.intensities(), &[1.0, 2.0, 3.0]);
        assert_eq!(recs[1].metadata[0].1, "B");
    }

    #[test]
    fn pairs_form_rejects_label_changes() {
        let (_d, p) = file("sample_id,label,shift,intensity\ns1,x,1,1\ns1,y,2,2\n");
        assert!(matches!(read_spectra(&p), Err(CliError::Parse { line: 3, .. })));
    }

    #[test]
    fn matrix_round_trip_is_exact() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.csv");
        let m = MatrixFile {
            shifts: vec![400.0, 400.5, 1e3 / 3.0],
            labels: vec!["a,b".into(), "c".into()],
            meta_columns: vec!["meta_k".into()],
            metadata: vec![vec!["1".into()], vec!["".into()]],
            features: Matrix::from_vec(2, 3, vec![0.1, 1.0 / 3.0, 0.0, 1.0, 2e-17, 0.5]).unwrap(),
        };
        write_matrix(&path, &m).unwrap();
        assert_eq!(read_matrix(&path).unwrap(), m);
        assert!(!dir.path().join("m.csv.partial").exists());
    }
}
