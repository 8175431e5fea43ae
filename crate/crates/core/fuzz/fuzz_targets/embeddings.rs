#![no_main]

use libfuzzer_sys::fuzz_target;
use triadground::corpus_io::{load_embeddings, write_embeddings, SPECIAL_TOKENS};

fuzz_target!(|data: &[u8]| {
    let Some((&dim, text)) = data.split_first() else {
        return;
    };
    let dim = usize::from(dim % 8);
    let Ok(table) = load_embeddings(text, dim, 7) else {
        return;
    };
    for s in SPECIAL_TOKENS {
        assert!(table.contains(s));
    }
    let mut buf = Vec::new();
    write_embeddings(&mut buf, &table).unwrap();
    assert_eq!(load_embeddings(buf.as_slice(), dim, 7).unwrap(), table);
});
