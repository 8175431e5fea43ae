#![no_main]

use libfuzzer_sys::fuzz_target;
use triadground::train::TrainConfig;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else {
        return;
    };
    if let Ok(cfg) = TrainConfig::from_toml(text) {
        assert_eq!(TrainConfig::from_toml(&cfg.to_toml()).unwrap(), cfg);
    }
});
