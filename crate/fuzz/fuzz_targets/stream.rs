#![no_main]

use libfuzzer_sys::fuzz_target;
use pgdr::formats::{parse_stream, write_stream};

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else {
        return;
    };
    if let Ok(stream) = parse_stream(text) {
        let again = parse_stream(&write_stream(&stream)).expect("written stream reparses");
        assert_eq!(again, stream);
    }
});
