#![no_main]

use std::sync::OnceLock;

use libfuzzer_sys::fuzz_target;
use nlgadapt::corpus::SynthSpec;
use nlgadapt::da::{delexicalise, lexicalise, DialogueAct, Ontology};

fn ontology() -> &'static Ontology {
    static ONT: OnceLock<Ontology> = OnceLock::new();
    ONT.get_or_init(|| SynthSpec::preset("similar").unwrap().target.ontology().unwrap())
}

// first line is the act, the rest is the surface text
fuzz_target!(|data: &[u8]| {
    let Ok(s) = std::str::from_utf8(data) else { return };
    let (head, text) = s.split_once('\n').unwrap_or((s, ""));
    let Ok(da) = DialogueAct::parse(head) else { return };
    if let Ok((tokens, _)) = delexicalise(text, &da, ontology()) {
        let _ = lexicalise(&tokens, &da);
    }
});
