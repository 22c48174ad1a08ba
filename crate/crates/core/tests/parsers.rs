use std::path::PathBuf;

use nlgadapt::corpus::{format_line, parse_line, SynthSpec};
use nlgadapt::da::{delexicalise, lexicalise, DialogueAct, Ontology};
use nlgadapt::recipes::RecipeConfig;
use nlgadapt::sclstm::{Generator, TrainConfig};
use proptest::prelude::*;

fn seeds(target: &str) -> Vec<(String, String)> {
    let dir = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../fuzz/corpus").join(target);
    let mut out: Vec<_> = std::fs::read_dir(&dir)
        .unwrap()
        .map(|e| {
            let path = e.unwrap().path();
            let name = path.file_name().unwrap().to_string_lossy().into_owned();
            (name, std::fs::read_to_string(&path).unwrap())
        })
        .collect();
    out.sort();
    assert!(!out.is_empty(), "no seeds for {target}");
    out
}

fn similar() -> SynthSpec {
    SynthSpec::preset("similar").unwrap()
}

fn da_round_trip(s: &str) -> bool {
    match DialogueAct::parse(s) {
        Ok(da) => {
            assert_eq!(DialogueAct::parse(&da.to_string()).unwrap(), da);
            true
        }
        Err(_) => false,
    }
}

fn line_round_trip(s: &str, ont: &Ontology) -> bool {
    match parse_line(s, ont) {
        Ok(inst) => {
            assert_eq!(parse_line(&format_line(&inst).unwrap(), ont).unwrap(), inst);
            true
        }
        Err(_) => false,
    }
}

fn delex_pair(s: &str, ont: &Ontology) -> bool {
    let (head, text) = s.split_once('\n').unwrap_or((s, ""));
    let Ok(da) = DialogueAct::parse(head) else { return false };
    match delexicalise(text, &da, ont) {
        Ok((tokens, _)) => lexicalise(&tokens, &da).is_ok(),
        Err(_) => false,
    }
}

#[test]
fn act_seeds_round_trip() {
    for (name, s) in seeds("parse_da") {
        assert!(da_round_trip(&s), "{name}");
    }
}

#[test]
fn corpus_line_seeds_round_trip() {
    let ont = similar().source.ontology().unwrap();
    for (name, s) in seeds("corpus_line") {
        assert!(line_round_trip(&s, &ont), "{name}");
    }
}

#[test]
fn ontology_seeds_round_trip() {
    for (name, s) in seeds("ontology_json") {
        let ont = Ontology::from_json(&s).unwrap_or_else(|e| panic!("{name}: {e}"));
        assert_eq!(Ontology::from_json(&ont.to_json().unwrap()).unwrap(), ont);
    }
}

#[test]
fn checkpoint_seeds_round_trip() {
    for (name, s) in seeds("checkpoint_json") {
        let (generator, hash) = Generator::from_json(&s).unwrap_or_else(|e| panic!("{name}: {e}"));
        let (_, again) = Generator::from_json(&generator.to_json(&hash).unwrap()).unwrap();
        assert_eq!(again, hash);
    }
}

#[test]
fn grammar_seeds_load() {
    let spec = SynthSpec::preset("disjoint").unwrap();
    for (name, s) in seeds("synth_spec") {
        let parsed = if name.ends_with(".toml") { SynthSpec::from_toml(&s) } else { SynthSpec::from_json(&s) };
        assert_eq!(parsed.unwrap_or_else(|e| panic!("{name}: {e}")), spec);
    }
}

#[test]
fn config_seeds_load() {
    for (name, s) in seeds("run_config") {
        let ok = match toml::from_str::<TrainConfig>(&s) {
            Ok(cfg) => cfg.validate().is_ok(),
            Err(_) => toml::from_str::<RecipeConfig>(&s).is_ok_and(|cfg| cfg.validate().is_ok()),
        };
        assert!(ok, "{name}");
    }
}

#[test]
fn delexicalise_seeds_succeed() {
    let ont = similar().target.ontology().unwrap();
    for (name, s) in seeds("delexicalise") {
        assert!(delex_pair(&s, &ont), "{name}");
    }
}

proptest! {
    #[test]
    fn arbitrary_acts_never_panic(s in "[a-z(),;=' \"_]{0,40}") {
        da_round_trip(&s);
    }

    #[test]
    fn arbitrary_lines_never_panic(s in "\\PC{0,80}") {
        let ont = similar().source.ontology().unwrap();
        line_round_trip(&s, &ont);
        let _ = Ontology::from_json(&s);
        let _ = Generator::from_json(&s);
        let _ = SynthSpec::from_toml(&s);
        let _ = toml::from_str::<RecipeConfig>(&s);
    }

    #[test]
    fn arbitrary_delex_pairs_never_panic(
        act in "inform\\((screensizerange|ecorating|hasusbport)=[a-z ]{0,8}\\)",
        text in "[a-z ]{0,40}",
    ) {
        let ont = similar().target.ontology().unwrap();
        delex_pair(&format!("{act}\n{text}"), &ont);
    }
}
