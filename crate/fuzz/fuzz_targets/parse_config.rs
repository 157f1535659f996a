//! Arbitrary bytes into the JSON configuration loader. Must return an error,
//! never panic, and anything accepted must round-trip.

#![no_main]

use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else {
        return;
    };
    if let Ok(spec) = hybrid_sis::parse_config_str(text) {
        let again = hybrid_sis::parse_config_str(&hybrid_sis::config::to_json(&spec)).expect("accepted spec re-parses");
        assert_eq!(again, spec);
    }
});
