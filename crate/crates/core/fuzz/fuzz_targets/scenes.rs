#![no_main]

use libfuzzer_sys::fuzz_target;
use triadground::scene::{read_scenes, read_training_scenes};

fuzz_target!(|data: &[u8]| {
    if let Ok(scenes) = read_scenes(data) {
        for s in &scenes {
            for q in &s.queries {
                assert!(q.ground_truth < s.proposals.len());
            }
        }
    }
    let _ = read_training_scenes(data);
});
