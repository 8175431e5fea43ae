#![no_main]

use libfuzzer_sys::fuzz_target;
use triadground::corpus_io::read_triads;

fuzz_target!(|data: &[u8]| {
    if let Ok(rows) = read_triads(data) {
        for r in rows {
            assert!(r.k >= 1);
            r.triad.validate().unwrap();
        }
    }
});
