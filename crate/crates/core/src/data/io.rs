//! Triplet-CSV ingestion: `counts.csv` (`row,col,count`), `labels.csv`
//! (`row,label`) and `features.txt` (one name per line).

use std::fs;
use std::io::Write;
use std::path::Path;

use super::{CountMatrix, Dataset, SplitSpec};
use crate::{Error, Result};

pub const COUNTS_FILE: &str = "counts.csv";
pub const LABELS_FILE: &str = "labels.csv";
pub const FEATURES_FILE: &str = "features.txt";

fn parse_err(path: &Path, line: u64, message: impl Into<String>) -> Error {
    Error::Parse {
        path: path.to_path_buf(),
        line,
        message: message.into(),
    }
}

/// Reads a headed CSV of unsigned integer columns. Returns `(line, fields)`.
fn read_int_rows(path: &Path, header: &[&str]) -> Result<Vec<(u64, Vec<u64>)>> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| parse_err(path, 0, e.to_string()))?;
    let found = reader
        .headers()
        .map_err(|e| parse_err(path, 1, e.to_string()))?
        .clone();
    if found.iter().collect::<Vec<_>>() != header {
        return Err(parse_err(
            path,
            1,
            format!("expected header {:?}, found {:?}", header.join(","), found),
        ));
    }
    let mut rows = Vec::new();
    for record in reader.records() {
        let record = record.map_err(|e| {
            let line = e.position().map_or(0, |p| p.line());
            parse_err(path, line, e.to_string())
        })?;
        let line = record.position().map_or(0, |p| p.line());
        if record.len() != header.len() {
            return Err(parse_err(
                path,
                line,
                format!("expected {} fields, found {}", header.len(), record.len()),
            ));
        }
        let fields = record
            .iter()
            .map(|f| {
                f.parse::<u64>()
                    .map_err(|_| parse_err(path, line, format!("not a non-negative integer: {f:?}")))
            })
            .collect::<Result<Vec<_>>>()?;
        rows.push((line, fields));
    }
    Ok(rows)
}

pub fn read_feature_names(path: &Path) -> Result<Vec<String>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path.display().to_string(), e))?;
    let names: Vec<String> = text.lines().map(|l| l.trim_end_matches('\r').to_string()).collect();
    if let Some(k) = names.iter().position(|n| n.is_empty()) {
        return Err(parse_err(path, k as u64 + 1, "empty feature name"));
    }
    Ok(names)
}

/// Loads a dataset from the three files and assigns splits from `split_spec`.
///
/// The row count comes from the label file and the column count from the
/// feature-name file; every triplet must index inside those bounds.
pub fn load_dataset(
    counts_path: &Path,
    labels_path: &Path,
    names_path: &Path,
    split_spec: SplitSpec,
) -> Result<Dataset> {
    let names = read_feature_names(names_path)?;

    let label_rows = read_int_rows(labels_path, &["row", "label"])?;
    let n_rows = label_rows.len();
    let mut labels: Vec<Option<u8>> = vec![None; n_rows];
    for (line, f) in &label_rows {
        let (row, label) = (f[0] as usize, f[1]);
        if row >= n_rows {
            return Err(Error::Bounds {
                what: "label row",
                index: row,
                bound: n_rows,
            });
        }
        if label > 1 {
            return Err(parse_err(labels_path, *line, format!("label {label} is not 0 or 1")));
        }
        if labels[row].replace(label as u8).is_some() {
            return Err(parse_err(labels_path, *line, format!("row {row} labeled twice")));
        }
    }
    let y: Vec<u8> = labels.into_iter().map(|l| l.expect("every row labeled once")).collect();

    let mut triplets = Vec::new();
    for (line, f) in read_int_rows(counts_path, &["row", "col", "count"])? {
        let (row, col) = (f[0] as usize, f[1] as usize);
        if row >= n_rows {
            return Err(Error::Bounds {
                what: "row",
                index: row,
                bound: n_rows,
            });
        }
        if col >= names.len() {
            return Err(Error::Bounds {
                what: "column",
                index: col,
                bound: names.len(),
            });
        }
        let count = u32::try_from(f[2])
            .map_err(|_| parse_err(counts_path, line, "count does not fit 32 bits"))?;
        if count == 0 {
            return Err(parse_err(counts_path, line, "zero counts must be omitted"));
        }
        triplets.push((row, col, count));
    }
    let x = CountMatrix::from_triplets(n_rows, names.len(), triplets)?;
    Dataset::new(x, y, names, split_spec)
}

/// Writes the canonical triplet files (entries sorted by row then column).
pub fn write_dataset(d: &Dataset, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir.display().to_string(), e))?;
    let write = |name: &str, body: String| -> Result<()> {
        let path = dir.join(name);
        let mut f = fs::File::create(&path).map_err(|e| Error::io(path.display().to_string(), e))?;
        f.write_all(body.as_bytes())
            .map_err(|e| Error::io(path.display().to_string(), e))
    };

    let mut counts = String::from("row,col,count\n");
    for (r, c, v) in d.x.triplets() {
        counts.push_str(&format!("{r},{c},{v}\n"));
    }
    write(COUNTS_FILE, counts)?;

    let mut labels = String::from("row,label\n");
    for (r, y) in d.y.iter().enumerate() {
        labels.push_str(&format!("{r},{y}\n"));
    }
    write(LABELS_FILE, labels)?;

    let mut names = String::new();
    for n in &d.feature_names {
        names.push_str(n);
        names.push('\n');
    }
    write(FEATURES_FILE, names)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::SplitRatios;

    fn write_files(dir: &Path, counts: &str, labels: &str, names: &str) {
        fs::write(dir.join(COUNTS_FILE), counts).unwrap();
        fs::write(dir.join(LABELS_FILE), labels).unwrap();
        fs::write(dir.join(FEATURES_FILE), names).unwrap();
    }

    fn load(dir: &Path, spec: SplitSpec) -> Result<Dataset> {
        load_dataset(
            &dir.join(COUNTS_FILE),
            &dir.join(LABELS_FILE),
            &dir.join(FEATURES_FILE),
            spec,
        )
    }

    #[test]
    fn minimal_input_loads() {
        let tmp = tempfile::tempdir().unwrap();
        write_files(tmp.path(), "row,col,count\n0,0,2\n1,1,1\n", "row,label\n0,1\n1,0\n", "a\nb\n");
        let spec = SplitSpec {
            ratios: SplitRatios {
                train: 0.5,
                valid: 0.25,
                test: 0.25,
            },
            seed: 7,
        };
        let d = load(tmp.path(), spec).unwrap();
        assert_eq!((d.n_rows(), d.n_features()), (2, 2));
        assert_eq!(d.x.get(0, 0), 2);
        assert_eq!(d.y, vec![1, 0]);
    }

    #[test]
    fn out_of_range_column_is_bounds_error() {
        let tmp = tempfile::tempdir().unwrap();
        write_files(tmp.path(), "row,col,count\n0,99,1\n", "row,label\n0,1\n1,0\n", "a\nb\n");
        assert!(matches!(
            load(tmp.path(), SplitSpec::default()),
            Err(Error::Bounds { what: "column", index: 99, bound: 2 })
        ));
    }

    #[test]
    fn malformed_line_reports_line_number() {
        let tmp = tempfile::tempdir().unwrap();
        write_files(tmp.path(), "row,col,count\n0,0,1\n1,x,1\n", "row,label\n0,1\n1,0\n", "a\nb\n");
        match load(tmp.path(), SplitSpec::default()) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 3),
            other => panic!("expected parse error, got {other:?}"),
        }
    }

    #[test]
    fn duplicate_triplet_is_format_error() {
        let tmp = tempfile::tempdir().unwrap();
        write_files(tmp.path(), "row,col,count\n0,0,1\n0,0,3\n", "row,label\n0,1\n1,0\n", "a\nb\n");
        assert!(matches!(load(tmp.path(), SplitSpec::default()), Err(Error::Format(_))));
    }

    #[test]
    fn round_trip_is_byte_identical_after_sorting() {
        let tmp = tempfile::tempdir().unwrap();
        let sorted = "row,col,count\n0,1,3\n1,0,1\n2,0,4\n2,2,1\n";
        write_files(tmp.path(), "row,col,count\n2,2,1\n0,1,3\n2,0,4\n1,0,1\n", "row,label\n0,1\n1,0\n2,1\n", "a\nb\nc\n");
        let d = load(tmp.path(), SplitSpec::default()).unwrap();
        let out = tempfile::tempdir().unwrap();
        write_dataset(&d, out.path()).unwrap();
        assert_eq!(fs::read_to_string(out.path().join(COUNTS_FILE)).unwrap(), sorted);
        assert_eq!(
            fs::read_to_string(out.path().join(LABELS_FILE)).unwrap(),
            "row,label\n0,1\n1,0\n2,1\n"
        );
        assert_eq!(fs::read_to_string(out.path().join(FEATURES_FILE)).unwrap(), "a\nb\nc\n");
    }
}
