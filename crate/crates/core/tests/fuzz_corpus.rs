//! Replays the fuzz corpus seeds through the same checks the fuzz targets
//! make, so regressions show up without a fuzzing toolchain.

use std::path::Path;

use hybrid_sis::chain::{check_stochastic, TransitionLaw};
use hybrid_sis::config::to_json;
use hybrid_sis::{parse_config_str, SisChain, SivChain};

fn seeds(target: &str) -> Vec<(String, Vec<u8>)> {
    let dir = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../fuzz/corpus").join(target);
    let mut out: Vec<_> = std::fs::read_dir(&dir)
        .unwrap_or_else(|e| panic!("{}: {e}", dir.display()))
        .map(|e| {
            let p = e.unwrap().path();
            (p.file_name().unwrap().to_string_lossy().into_owned(), std::fs::read(&p).unwrap())
        })
        .collect();
    out.sort();
    out
}

#[test]
fn parse_config_seeds() {
    let seeds = seeds("parse_config");
    assert!(seeds.len() >= 8);
    let mut accepted = 0;
    for (name, data) in seeds {
        let Ok(text) = std::str::from_utf8(&data) else { continue };
        if let Ok(spec) = parse_config_str(text) {
            assert_eq!(parse_config_str(&to_json(&spec)).unwrap(), spec, "{name}");
            accepted += 1;
        }
    }
    // the four shipped configs and the tabulated-cost seed
    assert_eq!(accepted, 5);
}

#[test]
fn build_chain_seeds() {
    for (name, data) in seeds("build_chain") {
        let text = String::from_utf8_lossy(&data);
        let Ok(spec) = parse_config_str(&text) else { continue };
        let chain = SisChain::new(spec.clone(), 0.25).unwrap();
        assert!(check_stochastic(&TransitionLaw::build(&chain)).passed(), "{name}");
        if spec.require_epsilon().is_ok() {
            let chain = SivChain::new(spec, 0.25).unwrap();
            assert!(check_stochastic(&TransitionLaw::build(&chain)).passed(), "{name}");
        }
    }
}
