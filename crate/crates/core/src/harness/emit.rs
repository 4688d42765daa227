//! Bit-stable JSON and CSV report files.

use std::io::{self, Write};
use std::path::Path;

use serde::Serialize;
use serde_json::ser::{Formatter, PrettyFormatter};

use crate::report::CheckReport;
use crate::{Error, Result};

/// Output format of [`emit_report`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Format {
    Json,
    Csv,
}

impl Format {
    /// Picks the format from a file extension, defaulting to JSON.
    pub fn from_path(path: &Path) -> Self {
        match path.extension().and_then(|e| e.to_str()) {
            Some(e) if e.eq_ignore_ascii_case("csv") => Format::Csv,
            _ => Format::Json,
        }
    }
}

/// Pretty JSON with every float written as `d.dddddddddddddddde±x`
/// (17 significant digits).
struct FixedFloats(PrettyFormatter<'static>);

impl Formatter for FixedFloats {
    fn write_f64<W: ?Sized + Write>(&mut self, w: &mut W, value: f64) -> io::Result<()> {
        write!(w, "{}", format_float(value))
    }
    fn write_f32<W: ?Sized + Write>(&mut self, w: &mut W, value: f32) -> io::Result<()> {
        self.write_f64(w, value as f64)
    }
    fn begin_array<W: ?Sized + Write>(&mut self, w: &mut W) -> io::Result<()> {
        self.0.begin_array(w)
    }
    fn end_array<W: ?Sized + Write>(&mut self, w: &mut W) -> io::Result<()> {
        self.0.end_array(w)
    }
    fn begin_array_value<W: ?Sized + Write>(&mut self, w: &mut W, first: bool) -> io::Result<()> {
        self.0.begin_array_value(w, first)
    }
    fn end_array_value<W: ?Sized + Write>(&mut self, w: &mut W) -> io::Result<()> {
        self.0.end_array_value(w)
    }
    fn begin_object<W: ?Sized + Write>(&mut self, w: &mut W) -> io::Result<()> {
        self.0.begin_object(w)
    }
    fn end_object<W: ?Sized + Write>(&mut self, w: &mut W) -> io::Result<()> {
        self.0.end_object(w)
    }
    fn begin_object_key<W: ?Sized + Write>(&mut self, w: &mut W, first: bool) -> io::Result<()> {
        self.0.begin_object_key(w, first)
    }
    fn begin_object_value<W: ?Sized + Write>(&mut self, w: &mut W) -> io::Result<()> {
        self.0.begin_object_value(w)
    }
    fn end_object_value<W: ?Sized + Write>(&mut self, w: &mut W) -> io::Result<()> {
        self.0.end_object_value(w)
    }
}

/// `value` with 17 significant digits in scientific notation.
pub fn format_float(value: f64) -> String {
    format!("{value:.16e}")
}

/// Serializes any value as JSON with sorted object keys and fixed float
/// formatting.
pub fn to_stable_json<T: Serialize>(value: &T) -> Result<String> {
    let tree = serde_json::to_value(value)?;
    let mut buf = Vec::new();
    let mut ser = serde_json::Serializer::with_formatter(&mut buf, FixedFloats(PrettyFormatter::new()));
    tree.serialize(&mut ser)?;
    buf.push(b'\n');
    Ok(String::from_utf8(buf).expect("serde_json writes UTF-8"))
}

/// The CSV rendering of `reports`.
pub fn to_csv(reports: &[CheckReport]) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["check_id", "paper_ref", "lhs", "rhs", "margin", "pass", "seed"])
        .map_err(csv_error)?;
    for r in reports {
        w.write_record([
            r.check_id.clone(),
            r.paper_ref.clone(),
            format_float(r.lhs),
            format_float(r.rhs),
            format_float(r.margin),
            r.pass.to_string(),
            r.seed.to_string(),
        ])
        .map_err(csv_error)?;
    }
    let bytes = w.into_inner().map_err(|e| Error::Io(e.into_error()))?;
    Ok(String::from_utf8(bytes).expect("CSV of UTF-8 strings"))
}

fn csv_error(e: csv::Error) -> Error {
    Error::Io(io::Error::other(e))
}

/// Writes `reports` to `path` in `format`.
pub fn emit_report(reports: &[CheckReport], format: Format, path: &Path) -> Result<()> {
    let text = match format {
        Format::Json => to_stable_json(&reports)?,
        Format::Csv => to_csv(reports)?,
    };
    std::fs::write(path, text)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> CheckReport {
        CheckReport::new("b.check", "a <= b, with commas", 0.1, 1.0 / 3.0, 0.0)
            .param("zeta", 1.5)
            .param("alpha", 2)
            .seed(9)
    }

    #[test]
    fn floats_have_seventeen_digits() {
        assert_eq!(format_float(0.1), "1.0000000000000001e-1");
        assert_eq!(format_float(1.0), "1.0000000000000000e0");
        assert_eq!(format_float(-2.5e-300), "-2.5000000000000000e-300");
    }

    #[test]
    fn json_is_sorted_and_round_trips() {
        let text = to_stable_json(&vec![sample()]).unwrap();
        let a = text.find("\"alpha\"").unwrap();
        let z = text.find("\"zeta\"").unwrap();
        assert!(a < z);
        assert!(text.find("\"check_id\"").unwrap() < text.find("\"lhs\"").unwrap());
        assert!(text.contains("3.3333333333333331e-1"));
        let back: serde_json::Value = serde_json::from_str(&text).unwrap();
        assert_eq!(back[0]["rhs"].as_f64().unwrap(), 1.0 / 3.0);
        assert_eq!(back[0]["pass"], serde_json::Value::Bool(true));
    }

    #[test]
    fn non_finite_values_become_null() {
        let r = CheckReport::new("x", "y", f64::NAN, 1.0, 0.0);
        let back: serde_json::Value = serde_json::from_str(&to_stable_json(&vec![r]).unwrap()).unwrap();
        assert!(back[0]["lhs"].is_null());
    }

    #[test]
    fn empty_reports() {
        assert_eq!(to_stable_json(&Vec::<CheckReport>::new()).unwrap(), "[]\n");
        assert_eq!(to_csv(&[]).unwrap(), "check_id,paper_ref,lhs,rhs,margin,pass,seed\n");
    }

    #[test]
    fn csv_quotes_commas() {
        let text = to_csv(&[sample()]).unwrap();
        let line = text.lines().nth(1).unwrap();
        assert!(line.starts_with("b.check,\"a <= b, with commas\",1.0000000000000001e-1,"));
        assert!(line.ends_with(",true,9"));
    }

    #[test]
    fn unwritable_path_is_an_error() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("missing").join("r.json");
        assert!(matches!(emit_report(&[], Format::Json, &path), Err(Error::Io(_))));
    }

    #[test]
    fn format_from_extension() {
        assert_eq!(Format::from_path(Path::new("a.CSV")), Format::Csv);
        assert_eq!(Format::from_path(Path::new("a.json")), Format::Json);
    }
}
