#![no_main]

use libfuzzer_sys::fuzz_target;
use triadground::corpus_io::{read_checkpoint, write_checkpoint};

fuzz_target!(|data: &[u8]| {
    if let Ok(params) = read_checkpoint(data) {
        let bytes = write_checkpoint(&params).unwrap();
        let again = read_checkpoint(&bytes).expect("own output is readable");
        assert_eq!(write_checkpoint(&again).unwrap(), bytes);
    }
});
