//! Weight files: a JSON object `{"domain": weight, ...}` or TSV
//! `domain<TAB>weight` rows (an optional `domain<TAB>weight` header is allowed).
//!
//! Published weight tables are rounded, so a file may sum to 1 only within
//! [`LOAD_TOLERANCE`]; such files are renormalized and a warning is recorded.

use std::fmt;
use std::fs;
use std::io::Write;
use std::path::Path;
use std::str::FromStr;

use serde_json::{Map, Value};

use crate::error::{Error, Result};
use crate::simplex::{normalize, ordered_sum, DomainSet, DomainWeights, SIMPLEX_TOLERANCE};

pub const LOAD_TOLERANCE: f64 = 5e-3;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum WeightFormat {
    Json,
    Tsv,
}

impl WeightFormat {
    pub fn from_path(path: &Path) -> Option<Self> {
        match path.extension()?.to_str()? {
            "json" => Some(WeightFormat::Json),
            "tsv" | "txt" => Some(WeightFormat::Tsv),
            _ => None,
        }
    }

    pub fn extension(self) -> &'static str {
        match self {
            WeightFormat::Json => "json",
            WeightFormat::Tsv => "tsv",
        }
    }
}

impl FromStr for WeightFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "json" => Ok(WeightFormat::Json),
            "tsv" => Ok(WeightFormat::Tsv),
            other => Err(Error::InvalidParameter(format!("unknown weight format `{other}`"))),
        }
    }
}

impl fmt::Display for WeightFormat {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.extension())
    }
}

/// Parsed weights plus any non-fatal issues found while loading.
#[derive(Clone, Debug)]
pub struct LoadedWeights {
    pub weights: DomainWeights,
    /// Sum of the values as written in the file.
    pub raw_sum: f64,
    pub warnings: Vec<String>,
}

pub fn parse_weights(text: &str, format: WeightFormat) -> Result<LoadedWeights> {
    let (names, values) = match format {
        WeightFormat::Json => parse_json(text)?,
        WeightFormat::Tsv => parse_tsv(text)?,
    };
    let domains = DomainSet::new(names)?;
    let raw_sum = ordered_sum(&values);
    if (raw_sum - 1.0).abs() > LOAD_TOLERANCE {
        return Err(Error::WeightSum {
            sum: raw_sum,
            tolerance: LOAD_TOLERANCE,
        });
    }
    let weights = normalize(&domains, &values)?;
    let mut warnings = Vec::new();
    if (raw_sum - 1.0).abs() > SIMPLEX_TOLERANCE {
        let msg = format!("weights sum to {raw_sum}; renormalized to 1");
        log::warn!("{msg}");
        warnings.push(msg);
    }
    Ok(LoadedWeights {
        weights,
        raw_sum,
        warnings,
    })
}

pub fn read_weights(path: &Path, format: Option<WeightFormat>) -> Result<LoadedWeights> {
    let format = format
        .or_else(|| WeightFormat::from_path(path))
        .ok_or_else(|| Error::InvalidParameter(format!("cannot infer weight format of {}", path.display())))?;
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_weights(&text, format).map_err(|e| match e {
        Error::Parse { location, message } => Error::Parse {
            location: format!("{}:{location}", path.display()),
            message,
        },
        other => other,
    })
}

pub fn render_weights(weights: &DomainWeights, format: WeightFormat) -> String {
    match format {
        WeightFormat::Json => {
            let mut out = serde_json::to_string_pretty(weights).expect("weights serialize");
            out.push('\n');
            out
        }
        WeightFormat::Tsv => {
            let mut out = String::from("domain\tweight\n");
            for (name, value) in weights.iter() {
                out.push_str(&format!("{name}\t{value}\n"));
            }
            out
        }
    }
}

pub fn write_weights(weights: &DomainWeights, path: &Path, format: WeightFormat) -> Result<()> {
    let mut file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    file.write_all(render_weights(weights, format).as_bytes())
        .map_err(|e| Error::io(path, e))
}

fn parse_json(text: &str) -> Result<(Vec<String>, Vec<f64>)> {
    let value: Value =
        serde_json::from_str(text).map_err(|e| Error::parse(format!("line {}", e.line()), e.to_string()))?;
    let map: Map<String, Value> = match value {
        Value::Object(map) => map,
        _ => return Err(Error::parse("root", "expected a JSON object of domain weights")),
    };
    let mut names = Vec::with_capacity(map.len());
    let mut values = Vec::with_capacity(map.len());
    for (name, v) in map {
        let w = v
            .as_f64()
            .ok_or_else(|| Error::parse(format!("key `{name}`"), "weight is not a number"))?;
        names.push(name);
        values.push(w);
    }
    Ok((names, values))
}

fn parse_tsv(text: &str) -> Result<(Vec<String>, Vec<f64>)> {
    let mut names = Vec::new();
    let mut values = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let lineno = i + 1;
        let line = line.trim_end_matches('\r');
        if line.trim().is_empty() || line.starts_with('#') {
            continue;
        }
        let mut cols = line.split('\t');
        let (Some(name), Some(weight), None) = (cols.next(), cols.next(), cols.next()) else {
            return Err(Error::parse(
                format!("line {lineno}"),
                "expected two tab-separated columns",
            ));
        };
        if names.is_empty() && values.is_empty() && name == "domain" && weight == "weight" {
            continue;
        }
        let w: f64 = weight
            .trim()
            .parse()
            .map_err(|_| Error::parse(format!("line {lineno}"), format!("invalid weight `{weight}`")))?;
        names.push(name.to_string());
        values.push(w);
    }
    if names.is_empty() {
        return Err(Error::parse("file", "no weight rows"));
    }
    Ok((names, values))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn tsv_and_json_agree() {
        let tsv = "domain\tweight\na b\t0.25\nc\t0.75\n";
        let json = r#"{"a b": 0.25, "c": 0.75}"#;
        let a = parse_weights(tsv, WeightFormat::Tsv).unwrap();
        let b = parse_weights(json, WeightFormat::Json).unwrap();
        assert_eq!(a.weights, b.weights);
        assert!(a.warnings.is_empty());
    }

    #[test]
    fn near_unit_sum_is_renormalized_with_warning() {
        let loaded = parse_weights("x\t0.5001\ny\t0.5\n", WeightFormat::Tsv).unwrap();
        assert_eq!(loaded.warnings.len(), 1);
        let sum: f64 = loaded.weights.values().iter().sum();
        assert!((sum - 1.0).abs() < 1e-12);
    }

    #[test]
    fn far_from_unit_sum_is_rejected() {
        assert!(matches!(
            parse_weights("x\t0.6\ny\t0.5\n", WeightFormat::Tsv),
            Err(Error::WeightSum { .. })
        ));
    }

    #[test]
    fn malformed_rows_report_line() {
        let err = parse_weights("x\t0.5\ny 0.5\n", WeightFormat::Tsv).unwrap_err();
        assert!(err.to_string().contains("line 2"), "{err}");
        assert!(parse_weights("[1, 2]", WeightFormat::Json).is_err());
        assert!(parse_weights(r#"{"a": "x"}"#, WeightFormat::Json).is_err());
        assert!(parse_weights("x\t0.5\nx\t0.5\n", WeightFormat::Tsv).is_err());
    }

    #[test]
    fn render_roundtrips_exactly() {
        let w = DomainWeights::new(
            DomainSet::new(["a", "b", "c"]).unwrap(),
            vec![0.1, 0.2, 0.7000000000000001],
        )
        .unwrap();
        for format in [WeightFormat::Json, WeightFormat::Tsv] {
            let back = parse_weights(&render_weights(&w, format), format).unwrap();
            assert_eq!(back.weights.domains(), w.domains());
            for (a, b) in back.weights.values().iter().zip(w.values()) {
                assert!((a - b).abs() < 1e-15);
            }
        }
    }
}
