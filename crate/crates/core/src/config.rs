//! JSON problem configuration.
//!
//! ```json
//! {
//!   "regimes": [{"mu": 0.45, "gamma": 0.35, "lambda": 2.0, "sigma": 0.0}],
//!   "generator": [[0.0]],
//!   "controls": {"u": [0.0, 1.0]},
//!   "cost": {"preset": "poly_regime", "a0": 1, "a1": 1, "a2": 1},
//!   "delta": 0.05,
//!   "xi": 0.02
//! }
//! ```
//!
//! Syntax and type errors carry the line and column of the offending token;
//! semantic errors name the dotted field path.

use std::path::Path;

use crate::error::{Error, Result};
use crate::model::ProblemSpec;

/// Largest accepted document, in bytes.
pub const MAX_CONFIG_BYTES: usize = 1 << 20;

pub fn parse_config_str(text: &str) -> Result<ProblemSpec> {
    if text.len() > MAX_CONFIG_BYTES {
        return Err(Error::Parse {
            line: 0,
            column: 0,
            message: format!("document exceeds {MAX_CONFIG_BYTES} bytes"),
        });
    }
    let spec: ProblemSpec = serde_json::from_str(text).map_err(|e| Error::Parse {
        line: e.line(),
        column: e.column(),
        message: e.to_string(),
    })?;
    spec.validate()?;
    Ok(spec)
}

pub fn parse_config(path: impl AsRef<Path>) -> Result<ProblemSpec> {
    let text = std::fs::read_to_string(path)?;
    parse_config_str(&text)
}

pub fn to_json(spec: &ProblemSpec) -> String {
    serde_json::to_string_pretty(spec).expect("problem spec serializes")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::CostModel;

    const SMALL: &str = r#"{
  "regimes": [{"mu": 0.45, "gamma": 0.35, "lambda": 2.0, "sigma": 0.0}],
  "generator": [[0.0]],
  "controls": {"u": [0.0, 1.0]},
  "cost": {"preset": "poly_regime", "a0": 1, "a1": 1, "a2": 1},
  "delta": 0.05,
  "xi": 0.02
}"#;

    #[test]
    fn parses_minimal_document() {
        let s = parse_config_str(SMALL).unwrap();
        assert_eq!(s.m0(), 1);
        assert_eq!(s.controls.u, vec![0.0, 1.0]);
        assert!(s.controls.vp.is_empty());
    }

    #[test]
    fn round_trips_examples() {
        for spec in [
            ProblemSpec::example1(CostModel::new_infection(1.0, 2.0, 1.0)),
            ProblemSpec::example2([0.1, 0.1]),
        ] {
            assert_eq!(parse_config_str(&to_json(&spec)).unwrap(), spec);
        }
    }

    #[test]
    fn syntax_error_has_position() {
        let bad = SMALL.replace("\"delta\": 0.05", "\"delta\": 0.05,,");
        match parse_config_str(&bad).unwrap_err() {
            Error::Parse { line, .. } => assert_eq!(line, 6),
            e => panic!("{e}"),
        }
    }

    #[test]
    fn unknown_field_is_rejected() {
        let bad = SMALL.replace("\"sigma\": 0.0", "\"sigma\": 0.0, \"sigmaa\": 1");
        match parse_config_str(&bad).unwrap_err() {
            Error::Parse { line, message, .. } => {
                assert_eq!(line, 2);
                assert!(message.contains("sigmaa"));
            }
            e => panic!("{e}"),
        }
    }

    #[test]
    fn semantic_error_names_field() {
        let bad = SMALL.replace("\"lambda\": 2.0", "\"lambda\": -2.0");
        let e = parse_config_str(&bad).unwrap_err();
        assert_eq!(e.code(), "E_CONFIG");
        assert!(e.to_string().contains("regimes[0].lambda"));
        let bad = SMALL.replace("\"xi\": 0.02", "\"xi\": 1.5");
        assert!(parse_config_str(&bad).unwrap_err().to_string().contains("xi"));
    }

    #[test]
    fn oversized_input_is_rejected() {
        let big = " ".repeat(MAX_CONFIG_BYTES + 1);
        assert_eq!(parse_config_str(&big).unwrap_err().code(), "E_PARSE");
    }
}
