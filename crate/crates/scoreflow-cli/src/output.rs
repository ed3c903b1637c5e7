//! Deterministic JSON and CSV writers.
//!
//! Floats are written with 17 significant digits so every value round-trips
//! and repeated runs are byte-identical.

use std::io::{self, Write};
use std::path::{Path, PathBuf};

use ndarray::Array2;
use serde::Serialize;
use serde_json::ser::Formatter;

use crate::CliError;

/// Compact JSON formatter writing every float as `{:.16e}`. Non-finite
/// floats never reach it: `serde_json` writes them as `null`.
struct FixedDigits;

impl Formatter for FixedDigits {
    fn write_f64<W: ?Sized + Write>(&mut self, writer: &mut W, value: f64) -> io::Result<()> {
        write!(writer, "{value:.16e}")
    }

    fn write_f32<W: ?Sized + Write>(&mut self, writer: &mut W, value: f32) -> io::Result<()> {
        self.write_f64(writer, f64::from(value))
    }
}

pub fn float(v: f64) -> String {
    format!("{v:.16e}")
}

pub fn to_json<T: Serialize>(value: &T) -> Result<String, CliError> {
    let mut buf = Vec::new();
    let mut ser = serde_json::Serializer::with_formatter(&mut buf, FixedDigits);
    value.serialize(&mut ser).map_err(|e| CliError::Io(e.to_string()))?;
    buf.push(b'\n');
    String::from_utf8(buf).map_err(|e| CliError::Io(e.to_string()))
}

pub fn csv_string(header: &[String], rows: impl IntoIterator<Item = Vec<String>>) -> Result<String, CliError> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(header).map_err(|e| CliError::Io(e.to_string()))?;
    for row in rows {
        w.write_record(&row).map_err(|e| CliError::Io(e.to_string()))?;
    }
    let bytes = w.into_inner().map_err(|e| CliError::Io(e.to_string()))?;
    String::from_utf8(bytes).map_err(|e| CliError::Io(e.to_string()))
}

/// Samples as CSV with header `x0,x1,...`.
pub fn samples_csv(x: &Array2<f64>) -> Result<String, CliError> {
    let header: Vec<String> = (0..x.ncols()).map(|j| format!("x{j}")).collect();
    csv_string(&header, x.rows().into_iter().map(|r| r.iter().map(|v| float(*v)).collect()))
}

/// Reads a numeric CSV with a header row into an `n x d` array.
pub fn read_samples(path: &Path) -> Result<Array2<f64>, CliError> {
    let mut r = csv::Reader::from_path(path).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
    let d = r.headers().map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?.len();
    let mut data = Vec::new();
    for (i, rec) in r.records().enumerate() {
        let rec = rec.map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
        for field in rec.iter() {
            data.push(field.trim().parse::<f64>().map_err(|e| {
                CliError::Config(format!("{}: row {}: cannot parse {field:?}: {e}", path.display(), i + 1))
            })?);
        }
    }
    let n = if d == 0 { 0 } else { data.len() / d };
    if n == 0 {
        return Err(CliError::Config(format!("{}: no samples", path.display())));
    }
    Array2::from_shape_vec((n, d), data).map_err(|e| CliError::Config(e.to_string()))
}

/// Writes `contents` to `dir/name`, creating `dir` when needed.
pub fn write_artifact(dir: &Path, name: &str, contents: &str) -> Result<PathBuf, CliError> {
    std::fs::create_dir_all(dir).map_err(|e| CliError::Io(format!("{}: {e}", dir.display())))?;
    let path = dir.join(name);
    std::fs::write(&path, contents).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))?;
    Ok(path)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[derive(Serialize)]
    struct Row {
        b: f64,
        a: f64,
        nan: f64,
        v: Vec<f64>,
    }

    #[test]
    fn floats_have_seventeen_digits_and_fields_keep_order() {
        let s = to_json(&Row {
            b: 0.1,
            a: 3.0,
            nan: f64::NAN,
            v: vec![1.0 / 3.0],
        })
        .unwrap();
        assert_eq!(
            s,
            "{\"b\":1.0000000000000001e-1,\"a\":3.0000000000000000e0,\"nan\":null,\"v\":[3.3333333333333331e-1]}\n"
        );
        let back: serde_json::Value = serde_json::from_str(&s).unwrap();
        assert_eq!(back["b"].as_f64(), Some(0.1));
        assert_eq!(back["v"][0].as_f64(), Some(1.0 / 3.0));
    }

    #[test]
    fn samples_round_trip_through_csv() {
        let dir = tempfile::tempdir().unwrap();
        let x = Array2::from_shape_vec((2, 2), vec![0.1, -2.0, 1e-300, 5.5]).unwrap();
        let path = write_artifact(dir.path(), "s.csv", &samples_csv(&x).unwrap()).unwrap();
        assert_eq!(read_samples(&path).unwrap(), x);
    }
}
