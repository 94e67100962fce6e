#![no_main]

use libfuzzer_sys::fuzz_target;
use pgdr::config::PgdrConfig;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else {
        return;
    };
    if let Ok(cfg) = PgdrConfig::parse(text) {
        let again = PgdrConfig::parse(&cfg.to_string()).expect("canonical form reparses");
        assert_eq!(again, cfg);
    }
});
