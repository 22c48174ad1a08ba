#![no_main]

use libfuzzer_sys::fuzz_target;
use nlgadapt::recipes::RecipeConfig;
use nlgadapt::sclstm::TrainConfig;

fuzz_target!(|data: &[u8]| {
    let Ok(s) = std::str::from_utf8(data) else { return };
    if let Ok(cfg) = toml::from_str::<TrainConfig>(s) {
        let _ = cfg.validate();
    }
    if let Ok(cfg) = toml::from_str::<RecipeConfig>(s) {
        let _ = cfg.validate();
    }
});
