#![no_main]

use libfuzzer_sys::fuzz_target;
use pgdr::formats::{parse_checkpoint, write_checkpoint};

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else {
        return;
    };
    if let Ok(ckpt) = parse_checkpoint(text) {
        let again =
            parse_checkpoint(&write_checkpoint(&ckpt)).expect("written checkpoint reparses");
        assert_eq!(again, ckpt);
    }
});
