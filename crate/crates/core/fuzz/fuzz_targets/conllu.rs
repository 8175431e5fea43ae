#![no_main]

use libfuzzer_sys::fuzz_target;
use triadground::corpus_io::{read_parses, write_parses};
use triadground::triad::extract_triads;

fuzz_target!(|data: &[u8]| {
    let Ok(parses) = read_parses(data) else {
        return;
    };
    for p in &parses {
        let q = extract_triads(p);
        assert!(!q.triads.is_empty());
        for t in &q.triads {
            t.validate().expect("extracted triads are valid");
        }
    }
    // Whatever was accepted must survive a write/read round trip.
    let mut buf = Vec::new();
    write_parses(&mut buf, &parses).unwrap();
    assert_eq!(read_parses(buf.as_slice()).unwrap(), parses);
});
