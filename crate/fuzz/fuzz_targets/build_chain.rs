//! Accepted configurations must yield stochastic transition laws on a
//! coarse grid for both models.

#![no_main]

use hybrid_sis::chain::{check_stochastic, TransitionLaw};
use hybrid_sis::{SisChain, SivChain};
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    let text = String::from_utf8_lossy(data);
    let Ok(spec) = hybrid_sis::parse_config_str(&text) else {
        return;
    };
    // bound the work per input
    if spec.m0() > 8 || spec.controls.tuple_count() > 4096 {
        return;
    }
    let chain = SisChain::new(spec.clone(), 0.25).expect("validated spec builds");
    let report = check_stochastic(&TransitionLaw::build(&chain));
    assert!(report.passed(), "{:?}", report.violations.first());
    if spec.require_epsilon().is_ok() {
        let chain = SivChain::new(spec, 0.25).expect("validated spec builds");
        let report = check_stochastic(&TransitionLaw::build(&chain));
        assert!(report.passed(), "{:?}", report.violations.first());
    }
});
