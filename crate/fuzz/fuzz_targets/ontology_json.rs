#![no_main]

use libfuzzer_sys::fuzz_target;
use nlgadapt::da::Ontology;

fuzz_target!(|data: &[u8]| {
    let Ok(s) = std::str::from_utf8(data) else { return };
    if let Ok(ont) = Ontology::from_json(s) {
        let back = Ontology::from_json(&ont.to_json().unwrap()).expect("written ontology loads");
        assert_eq!(back, ont);
    }
});
