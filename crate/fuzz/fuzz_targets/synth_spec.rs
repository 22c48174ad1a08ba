#![no_main]

use libfuzzer_sys::fuzz_target;
use nlgadapt::corpus::SynthSpec;

fuzz_target!(|data: &[u8]| {
    let Ok(s) = std::str::from_utf8(data) else { return };
    let _ = SynthSpec::from_json(s);
    let _ = SynthSpec::from_toml(s);
});
