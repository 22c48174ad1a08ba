#![no_main]

use std::sync::OnceLock;

use libfuzzer_sys::fuzz_target;
use nlgadapt::corpus::{format_line, parse_line, SynthSpec};
use nlgadapt::da::Ontology;

fn ontology() -> &'static Ontology {
    static ONT: OnceLock<Ontology> = OnceLock::new();
    ONT.get_or_init(|| SynthSpec::preset("similar").unwrap().source.ontology().unwrap())
}

fuzz_target!(|data: &[u8]| {
    let Ok(s) = std::str::from_utf8(data) else { return };
    if let Ok(inst) = parse_line(s, ontology()) {
        let line = format_line(&inst).expect("parsed instance formats");
        assert_eq!(parse_line(&line, ontology()).expect("formatted line parses"), inst);
    }
});
