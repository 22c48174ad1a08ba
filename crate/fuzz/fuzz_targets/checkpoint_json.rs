#![no_main]

use libfuzzer_sys::fuzz_target;
use nlgadapt::sclstm::Generator;

fuzz_target!(|data: &[u8]| {
    let Ok(s) = std::str::from_utf8(data) else { return };
    if let Ok((generator, hash)) = Generator::from_json(s) {
        let text = generator.to_json(&hash).unwrap();
        Generator::from_json(&text).expect("written checkpoint loads");
    }
});
