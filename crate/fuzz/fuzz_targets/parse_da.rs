#![no_main]

use libfuzzer_sys::fuzz_target;
use nlgadapt::da::DialogueAct;

fuzz_target!(|data: &[u8]| {
    let Ok(s) = std::str::from_utf8(data) else { return };
    if let Ok(da) = DialogueAct::parse(s) {
        let back = DialogueAct::parse(&da.to_string()).expect("displayed act parses");
        assert_eq!(back, da);
    }
});
