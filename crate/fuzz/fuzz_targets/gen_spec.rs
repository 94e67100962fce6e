#![no_main]

use libfuzzer_sys::fuzz_target;
use pgdr::config::GenSpec;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else {
        return;
    };
    if let Ok(spec) = GenSpec::parse(text) {
        let again = GenSpec::parse(&spec.to_text()).expect("canonical form reparses");
        assert_eq!(again, spec);
    }
});
