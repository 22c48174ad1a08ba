//! Corpus files (JSON lines) and a template-based synthetic domain generator.

use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use rand::seq::{IndexedRandom, SliceRandom};
use serde::{Deserialize, Serialize};

use crate::da::{DialogueAct, Instance, Ontology, SlotClass, SlotDef, Value};
use crate::error::{Error, Result};
use crate::nn::{seeded_rng, SeededRng};

#[derive(Serialize, Deserialize)]
#[serde(untagged)]
enum DaField {
    Compact(String),
    Full(DialogueAct),
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Record {
    da: DaField,
    text: String,
}

/// Parse one corpus line: `{"da": ..., "text": "..."}` where `da` is either
/// the compact string form or `{"act": .., "slots": [[name, value], ..]}`.
pub fn parse_line(line: &str, ont: &Ontology) -> Result<Instance> {
    let rec: Record = serde_json::from_str(line)?;
    let da = match rec.da {
        DaField::Compact(s) => DialogueAct::parse(&s)?,
        DaField::Full(da) => da,
    };
    Instance::new(da, rec.text, ont)
}

pub fn format_line(inst: &Instance) -> Result<String> {
    Ok(serde_json::to_string(&Record {
        da: DaField::Full(inst.da.clone()),
        text: inst.raw_text.clone(),
    })?)
}

/// Read a JSON-lines corpus. Blank lines are skipped; errors carry the
/// 1-based line number.
pub fn load_corpus(path: impl AsRef<Path>, ont: &Ontology) -> Result<Vec<Instance>> {
    let path = path.as_ref();
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let inst = parse_line(&line, ont).map_err(|e| Error::Parse {
            path: path.to_path_buf(),
            line: i + 1,
            msg: e.to_string(),
        })?;
        out.push(inst);
    }
    Ok(out)
}

pub fn save_corpus(path: impl AsRef<Path>, data: &[Instance]) -> Result<()> {
    let path = path.as_ref();
    let mut file = std::io::BufWriter::new(std::fs::File::create(path).map_err(|e| Error::io(path, e))?);
    for inst in data {
        writeln!(file, "{}", format_line(inst)?).map_err(|e| Error::io(path, e))?;
    }
    file.flush().map_err(|e| Error::io(path, e))
}

/// Surface realisations of one slot. `{v}` marks the value.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SlotGrammar {
    pub name: String,
    pub class: SlotClass,
    #[serde(default)]
    pub values: Vec<String>,
    #[serde(default)]
    pub phrase: String,
    #[serde(default)]
    pub dontcare: String,
    #[serde(default)]
    pub yes: String,
    #[serde(default)]
    pub no: String,
    #[serde(default)]
    pub request: String,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ActMode {
    /// Slots carry values and are realised by their phrases.
    Valued,
    /// Slots are mentioned without values and realised by request phrases.
    Request,
    /// No slots.
    Bare,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ActGrammar {
    pub act: String,
    pub mode: ActMode,
    /// One is drawn per instance; `{noun}` is replaced by the domain noun.
    pub openers: Vec<String>,
    /// One is drawn per instance; may be empty.
    #[serde(default)]
    pub closers: Vec<String>,
    #[serde(default)]
    pub min_slots: usize,
    #[serde(default)]
    pub max_slots: usize,
    #[serde(default)]
    pub classes: Vec<SlotClass>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DomainGrammar {
    pub domain: String,
    pub noun: String,
    /// Drawn independently between consecutive slot phrases.
    pub joiners: Vec<String>,
    /// Realise slots in a random order instead of act order.
    #[serde(default)]
    pub shuffle_slots: bool,
    pub slots: Vec<SlotGrammar>,
    pub acts: Vec<ActGrammar>,
    /// Keep a random subset of at most this many instances.
    #[serde(default)]
    pub max_instances: Option<usize>,
}

/// A source/target pair of synthetic domains.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SynthSpec {
    pub source: DomainGrammar,
    pub target: DomainGrammar,
}

impl SynthSpec {
    pub fn from_json(s: &str) -> Result<Self> {
        Ok(serde_json::from_str(s)?)
    }

    pub fn from_toml(s: &str) -> Result<Self> {
        Ok(toml::from_str(s)?)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let s = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        if path.extension().is_some_and(|e| e == "toml") {
            Self::from_toml(&s)
        } else {
            Self::from_json(&s)
        }
    }

    /// Built-in pairs: `similar` shares all carrier phrases between the two
    /// domains, `disjoint` gives the target its own wording.
    pub fn preset(name: &str) -> Result<Self> {
        match name {
            "similar" => Ok(SynthSpec {
                source: laptop(),
                target: television(false),
            }),
            "disjoint" => Ok(SynthSpec {
                source: laptop(),
                target: television(true),
            }),
            other => Err(Error::Config(format!("unknown preset `{other}` (similar, disjoint)"))),
        }
    }
}

impl DomainGrammar {
    pub fn ontology(&self) -> Result<Ontology> {
        Ontology::new(
            self.domain.clone(),
            self.acts.iter().map(|a| a.act.clone()).collect(),
            self.slots
                .iter()
                .map(|s| SlotDef {
                    name: s.name.clone(),
                    class: s.class,
                })
                .collect(),
        )
    }

    fn validate(&self) -> Result<()> {
        for s in &self.slots {
            let missing = |what: &str| Err(Error::Config(format!("slot `{}` needs {what}", s.name)));
            match s.class {
                SlotClass::Informable | SlotClass::Requestable => {
                    if s.values.is_empty() || !s.phrase.contains("{v}") {
                        return missing("values and a phrase containing {v}");
                    }
                }
                SlotClass::Binary => {
                    if s.yes.is_empty() || s.no.is_empty() || s.dontcare.is_empty() {
                        return missing("yes, no and dontcare phrases");
                    }
                }
            }
        }
        for a in &self.acts {
            if a.openers.is_empty() {
                return Err(Error::Config(format!("act `{}` has no openers", a.act)));
            }
            if a.max_slots > 1 && self.joiners.is_empty() {
                return Err(Error::Config("grammar has no joiners".into()));
            }
            if a.min_slots > a.max_slots {
                return Err(Error::Config(format!("act `{}`: min_slots > max_slots", a.act)));
            }
        }
        Ok(())
    }
}

/// Value choices a slot offers in a given act mode.
fn kinds(slot: &SlotGrammar, mode: ActMode) -> Vec<Value> {
    match (mode, slot.class) {
        (ActMode::Request, SlotClass::Informable) if !slot.request.is_empty() => vec![Value::None],
        (ActMode::Request, _) => vec![],
        (ActMode::Bare, _) => vec![],
        (ActMode::Valued, SlotClass::Informable) => {
            let mut v = vec![Value::Literal(String::new())];
            if !slot.dontcare.is_empty() {
                v.push(Value::DontCare);
            }
            v
        }
        (ActMode::Valued, SlotClass::Requestable) => vec![Value::Literal(String::new())],
        (ActMode::Valued, SlotClass::Binary) => vec![Value::Yes, Value::No, Value::DontCare],
    }
}

/// All ordered slot subsets with sizes in `min..=max`, each slot paired with
/// every value kind it admits.
fn enumerate_shapes(eligible: &[(usize, Vec<Value>)], min: usize, max: usize) -> Vec<Vec<(usize, Value)>> {
    fn rec(
        eligible: &[(usize, Vec<Value>)],
        start: usize,
        cur: &mut Vec<(usize, Value)>,
        min: usize,
        max: usize,
        out: &mut Vec<Vec<(usize, Value)>>,
    ) {
        if cur.len() >= min {
            out.push(cur.clone());
        }
        if cur.len() == max {
            return;
        }
        for i in start..eligible.len() {
            for k in &eligible[i].1 {
                cur.push((eligible[i].0, k.clone()));
                rec(eligible, i + 1, cur, min, max, out);
                cur.pop();
            }
        }
    }
    let mut out = Vec::new();
    rec(eligible, 0, &mut Vec::new(), min, max, &mut out);
    out
}

fn realise(grammar: &DomainGrammar, act: &ActGrammar, da: &DialogueAct, rng: &mut SeededRng) -> String {
    let opener = act.openers.choose(rng).expect("validated").replace("{noun}", &grammar.noun);
    let mut order: Vec<&(String, Value)> = da.slots.iter().collect();
    if grammar.shuffle_slots {
        order.shuffle(rng);
    }
    let phrases: Vec<String> = order
        .into_iter()
        .map(|(name, value)| {
            let s = grammar.slots.iter().find(|s| &s.name == name).expect("slot from grammar");
            match value {
                Value::Literal(v) => s.phrase.replace("{v}", v),
                Value::DontCare => s.dontcare.clone(),
                Value::Yes => s.yes.clone(),
                Value::No => s.no.clone(),
                Value::None => s.request.clone(),
            }
        })
        .collect();
    let mut parts = vec![opener];
    for (i, p) in phrases.into_iter().enumerate() {
        if i > 0 {
            parts.push(grammar.joiners.choose(rng).expect("validated").clone());
        }
        parts.push(p);
    }
    if let Some(c) = act.closers.choose(rng) {
        parts.push(c.clone());
    }
    parts.retain(|p| !p.is_empty());
    parts.join(" ")
}

/// Generate one instance per DA shape of the grammar, with literal values
/// drawn at random. Deterministic for a given seed.
pub fn generate_domain(grammar: &DomainGrammar, seed: u64) -> Result<(Ontology, Vec<Instance>)> {
    grammar.validate()?;
    let ont = grammar.ontology()?;
    let mut rng = seeded_rng(seed);
    let mut out = Vec::new();
    for act in &grammar.acts {
        let eligible: Vec<(usize, Vec<Value>)> = grammar
            .slots
            .iter()
            .enumerate()
            .filter(|(_, s)| act.classes.contains(&s.class))
            .map(|(i, s)| (i, kinds(s, act.mode)))
            .filter(|(_, k)| !k.is_empty())
            .collect();
        let (min, max) = match act.mode {
            ActMode::Bare => (0, 0),
            _ => (act.min_slots, act.max_slots),
        };
        for shape in enumerate_shapes(&eligible, min, max) {
            let mut da = DialogueAct::new(act.act.clone());
            for (i, kind) in shape {
                let s = &grammar.slots[i];
                let value = match kind {
                    Value::Literal(_) => Value::Literal(s.values.choose(&mut rng).expect("validated").clone()),
                    k => k,
                };
                da.slots.push((s.name.clone(), value));
            }
            let text = realise(grammar, act, &da, &mut rng);
            out.push(Instance::new(da, text, &ont)?);
        }
    }
    if let Some(cap) = grammar.max_instances {
        if out.len() > cap {
            let mut idx: Vec<usize> = (0..out.len()).collect();
            idx.shuffle(&mut rng);
            idx.truncate(cap);
            idx.sort_unstable();
            out = idx.into_iter().map(|i| out[i].clone()).collect();
        }
    }
    Ok((ont, out))
}

pub struct SynthCorpora {
    pub source_ontology: Ontology,
    pub source: Vec<Instance>,
    pub target_ontology: Ontology,
    pub target: Vec<Instance>,
}

pub fn generate_synthetic(spec: &SynthSpec, seed: u64) -> Result<SynthCorpora> {
    let (source_ontology, source) = generate_domain(&spec.source, crate::nn::derive_seed(seed, 0))?;
    let (target_ontology, target) = generate_domain(&spec.target, crate::nn::derive_seed(seed, 1))?;
    for s in target_ontology.slots() {
        if source_ontology.contains_slot(&s.name) {
            return Err(Error::Config(format!("slot `{}` occurs in both domains", s.name)));
        }
    }
    Ok(SynthCorpora {
        source_ontology,
        source,
        target_ontology,
        target,
    })
}

fn slot(name: &str, class: SlotClass, values: &[&str], phrase: &str, dontcare: &str, request: &str) -> SlotGrammar {
    SlotGrammar {
        name: name.into(),
        class,
        values: values.iter().map(|v| v.to_string()).collect(),
        phrase: phrase.into(),
        dontcare: dontcare.into(),
        yes: String::new(),
        no: String::new(),
        request: request.into(),
    }
}

fn binary(name: &str, yes: &str, no: &str, dontcare: &str) -> SlotGrammar {
    SlotGrammar {
        name: name.into(),
        class: SlotClass::Binary,
        values: vec![],
        phrase: String::new(),
        dontcare: dontcare.into(),
        yes: yes.into(),
        no: no.into(),
        request: String::new(),
    }
}

fn act(act: &str, mode: ActMode, openers: &[&str], closers: &[&str], slots: (usize, usize), classes: &[SlotClass]) -> ActGrammar {
    ActGrammar {
        act: act.into(),
        mode,
        openers: openers.iter().map(|o| o.to_string()).collect(),
        closers: closers.iter().map(|c| c.to_string()).collect(),
        min_slots: slots.0,
        max_slots: slots.1,
        classes: classes.to_vec(),
    }
}

use SlotClass::{Binary as B, Informable as I, Requestable as R};

fn strings(xs: &[&str]) -> Vec<String> {
    xs.iter().map(|x| x.to_string()).collect()
}

fn shared_acts() -> Vec<ActGrammar> {
    vec![
        act("inform", ActMode::Valued, &["there is a {noun}", "i found a {noun}", "here is a {noun}"], &[".", "!"], (1, 3), &[I, R, B]),
        act("recommend", ActMode::Valued, &["i recommend a {noun}", "how about a {noun}", "i suggest a {noun}"], &[".", "!"], (1, 3), &[I, R, B]),
        act("inform_no_match", ActMode::Valued, &["there is no {noun}", "sorry , there is no {noun}", "i can not find a {noun}"], &[".", "!"], (1, 2), &[I, B]),
        act("confirm", ActMode::Valued, &["do you want a {noun}", "you want a {noun}", "are you looking for a {noun}"], &["?"], (1, 1), &[I, B]),
        act("request", ActMode::Request, &["please tell me", "may i ask", "could you tell me"], &["?"], (1, 2), &[I]),
        act("goodbye", ActMode::Bare, &["thank you , goodbye", "goodbye", "thanks , bye"], &[".", "!"], (0, 0), &[]),
    ]
}

fn laptop() -> DomainGrammar {
    DomainGrammar {
        domain: "laptop".into(),
        noun: "laptop".into(),
        joiners: strings(&["and", "and", "and also"]),
        shuffle_slots: true,
        slots: vec![
            slot("family", I, &["satellite", "tecra", "portege", "qosmio"], "in the {v} family", "in any family", "which family you like"),
            slot("batteryrating", I, &["exceptional", "standard", "minimal"], "with a {v} battery rating", "with any battery rating", "what battery rating you need"),
            slot("driverange", I, &["small", "medium", "large"], "with a {v} drive", "with any drive size", "how big a drive you need"),
            slot("weightrange", I, &["light", "midweight", "heavy"], "that is {v} to carry", "of any weight", "how heavy it may be"),
            slot("warranty", R, &["one year", "two years", "three years"], "with a warranty of {v}", "", ""),
            slot("battery", R, &["4 hours", "6 hours", "9 hours"], "with a battery life of {v}", "", ""),
            slot("memory", R, &["8 gb", "16 gb", "32 gb"], "with {v} of memory", "", ""),
            slot("processor", R, &["intel i5", "intel i7", "amd ryzen"], "powered by an {v}", "", ""),
            binary("isforbusinesscomputing", "for business computing", "not for business computing", "for any kind of use"),
        ],
        acts: shared_acts(),
        max_instances: None,
    }
}

fn television(own_wording: bool) -> DomainGrammar {
    let acts = if own_wording {
        vec![
            act("inform", ActMode::Valued, &["we have a {noun}", "this {noun} is available", "we stock a {noun}"], &[".", "!"], (1, 3), &[I, R, B]),
            act("recommend", ActMode::Valued, &["you might enjoy a {noun}", "consider a {noun}", "try a {noun}"], &[".", "!"], (1, 3), &[I, R, B]),
            act("inform_no_match", ActMode::Valued, &["no {noun} matches", "nothing is available", "we have nothing"], &[".", "!"], (1, 2), &[I, B]),
            act("confirm", ActMode::Valued, &["shall i look for a {noun}", "looking for a {noun}", "so a {noun}"], &["?"], (1, 1), &[I, B]),
            act("request", ActMode::Request, &["could you say", "let me know", "i need to know"], &["?"], (1, 2), &[I]),
            act("goodbye", ActMode::Bare, &["bye now , enjoy the show", "see you", "take care"], &[".", "!"], (0, 0), &[]),
        ]
    } else {
        shared_acts()
    };
    DomainGrammar {
        domain: "tv".into(),
        noun: "television".into(),
        joiners: if own_wording {
            strings(&["plus", "plus", "as well as"])
        } else {
            strings(&["and", "and", "and also"])
        },
        shuffle_slots: true,
        slots: vec![
            slot("screensizerange", I, &["compact", "regular", "huge"], "with a {v} screen", "with any screen size", "how big a screen you want"),
            slot("ecorating", I, &["efficient", "average", "wasteful"], "with a {v} eco rating", "with any eco rating", "what eco rating you need"),
            slot("hdmiport", I, &["single", "double", "triple"], "with a {v} hdmi setup", "with any hdmi setup", "how many hdmi ports you need"),
            slot("audio", I, &["stereo", "surround", "premium"], "that has {v} sound", "with any sound", "what sound you like"),
            slot("resolution", R, &["720p", "1080p", "4k"], "with a resolution of {v}", "", ""),
            slot("powerconsumption", R, &["50 watts", "90 watts", "120 watts"], "with a power draw of {v}", "", ""),
            slot("color", R, &["black", "silver", "white"], "finished in {v}", "", ""),
            slot("accessories", R, &["remote control", "wall mount", "soundbar"], "shipped with a {v}", "", ""),
            binary("hasusbport", "with usb ports", "without usb ports", "with or without usb ports"),
        ],
        acts,
        max_instances: None,
    }
}
