//! Dialogue acts, ontologies, delexicalisation and the DA feature encoding.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Functional slot class. The three classes are also the similarity classes
/// used for counterfeiting.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SlotClass {
    /// Non-binary informable slots; may take "dontcare".
    Informable,
    Requestable,
    /// Boolean informable slots (yes/no/dontcare).
    Binary,
}

impl SlotClass {
    pub const ALL: [SlotClass; 3] = [SlotClass::Informable, SlotClass::Requestable, SlotClass::Binary];

    pub fn prefix(self) -> char {
        match self {
            SlotClass::Informable => 'I',
            SlotClass::Requestable => 'R',
            SlotClass::Binary => 'B',
        }
    }

    fn from_prefix(c: char) -> Option<Self> {
        match c {
            'I' => Some(SlotClass::Informable),
            'R' => Some(SlotClass::Requestable),
            'B' => Some(SlotClass::Binary),
            _ => None,
        }
    }

    /// Feature kinds a slot of this class can contribute to the DA vector.
    pub fn feature_kinds(self) -> &'static [FeatureKind] {
        match self {
            SlotClass::Informable => &[FeatureKind::Mention, FeatureKind::DontCare],
            SlotClass::Requestable => &[FeatureKind::Mention],
            SlotClass::Binary => &[FeatureKind::Yes, FeatureKind::No, FeatureKind::DontCare],
        }
    }
}

impl fmt::Display for SlotClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            SlotClass::Informable => "informable",
            SlotClass::Requestable => "requestable",
            SlotClass::Binary => "binary",
        })
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SlotDef {
    pub name: String,
    pub class: SlotClass,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "OntologyFile", into = "OntologyFile")]
pub struct Ontology {
    domain: String,
    act_types: Vec<String>,
    slots: Vec<SlotDef>,
    index: HashMap<String, usize>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct OntologyFile {
    domain: String,
    act_types: Vec<String>,
    slots: Vec<SlotDef>,
}

impl TryFrom<OntologyFile> for Ontology {
    type Error = Error;

    fn try_from(f: OntologyFile) -> Result<Self> {
        Ontology::new(f.domain, f.act_types, f.slots)
    }
}

impl From<Ontology> for OntologyFile {
    fn from(o: Ontology) -> Self {
        OntologyFile {
            domain: o.domain,
            act_types: o.act_types,
            slots: o.slots,
        }
    }
}

fn is_identifier(s: &str) -> bool {
    !s.is_empty()
        && s
            .chars()
            .all(|c| c.is_ascii_lowercase() || c.is_ascii_digit() || c == '_')
}

impl Ontology {
    pub fn new(domain: impl Into<String>, act_types: Vec<String>, slots: Vec<SlotDef>) -> Result<Self> {
        let mut index = HashMap::new();
        for (i, s) in slots.iter().enumerate() {
            if !is_identifier(&s.name) {
                return Err(Error::Config(format!("invalid slot name `{}`", s.name)));
            }
            if index.insert(s.name.clone(), i).is_some() {
                return Err(Error::Config(format!("duplicate slot `{}`", s.name)));
            }
        }
        let mut seen = BTreeSet::new();
        for a in &act_types {
            if !is_identifier(a) {
                return Err(Error::Config(format!("invalid act type `{a}`")));
            }
            if !seen.insert(a) {
                return Err(Error::Config(format!("duplicate act type `{a}`")));
            }
        }
        Ok(Ontology {
            domain: domain.into(),
            act_types,
            slots,
            index,
        })
    }

    pub fn domain(&self) -> &str {
        &self.domain
    }

    pub fn act_types(&self) -> &[String] {
        &self.act_types
    }

    pub fn slots(&self) -> &[SlotDef] {
        &self.slots
    }

    pub fn has_act(&self, act: &str) -> bool {
        self.act_types.iter().any(|a| a == act)
    }

    pub fn slot_class(&self, slot: &str) -> Result<SlotClass> {
        self.index
            .get(slot)
            .map(|&i| self.slots[i].class)
            .ok_or_else(|| Error::UnknownSlot(slot.to_string()))
    }

    pub fn slots_of_class(&self, class: SlotClass) -> impl Iterator<Item = &str> {
        self.slots
            .iter()
            .filter(move |s| s.class == class)
            .map(|s| s.name.as_str())
    }

    pub fn contains_slot(&self, slot: &str) -> bool {
        self.index.contains_key(slot)
    }

    /// Every slot token this ontology can produce, e.g. `<I.family>`.
    pub fn slot_tokens(&self) -> Vec<String> {
        self.slots.iter().map(|s| slot_token(s.class, &s.name)).collect()
    }

    pub fn from_json(s: &str) -> Result<Self> {
        Ok(serde_json::from_str(s)?)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let s = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&s).map_err(|e| Error::Parse {
            path: path.to_path_buf(),
            line: 0,
            msg: e.to_string(),
        })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_json()? + "\n").map_err(|e| Error::io(path, e))
    }
}

/// Functional class of a slot in an ontology.
pub fn slot_class(slot: &str, ont: &Ontology) -> Result<SlotClass> {
    ont.slot_class(slot)
}

#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Value {
    Literal(String),
    DontCare,
    Yes,
    No,
    /// Slot mentioned without a value, e.g. in `request(pricerange)`.
    None,
}

impl Value {
    pub fn parse(s: &str) -> Value {
        match s {
            "dontcare" => Value::DontCare,
            "yes" => Value::Yes,
            "no" => Value::No,
            other => Value::Literal(other.to_string()),
        }
    }

    pub fn as_literal(&self) -> Option<&str> {
        match self {
            Value::Literal(s) => Some(s),
            _ => None,
        }
    }

    fn as_json(&self) -> Option<String> {
        match self {
            Value::Literal(s) => Some(s.clone()),
            Value::DontCare => Some("dontcare".into()),
            Value::Yes => Some("yes".into()),
            Value::No => Some("no".into()),
            Value::None => None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct DialogueAct {
    pub act: String,
    pub slots: Vec<(String, Value)>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct DaRecord {
    act: String,
    #[serde(default)]
    slots: Vec<(String, Option<String>)>,
}

impl Serialize for DialogueAct {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        DaRecord {
            act: self.act.clone(),
            slots: self
                .slots
                .iter()
                .map(|(n, v)| (n.clone(), v.as_json()))
                .collect(),
        }
        .serialize(s)
    }
}

impl<'de> Deserialize<'de> for DialogueAct {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let rec = DaRecord::deserialize(d)?;
        Ok(DialogueAct {
            act: rec.act,
            slots: rec
                .slots
                .into_iter()
                .map(|(n, v)| (n, v.map_or(Value::None, |v| Value::parse(&v))))
                .collect(),
        })
    }
}

impl DialogueAct {
    pub fn new(act: impl Into<String>) -> Self {
        DialogueAct {
            act: act.into(),
            slots: Vec::new(),
        }
    }

    pub fn with(mut self, slot: impl Into<String>, value: Value) -> Self {
        self.slots.push((slot.into(), value));
        self
    }

    pub fn value(&self, slot: &str) -> Option<&Value> {
        self.slots.iter().find(|(n, _)| n == slot).map(|(_, v)| v)
    }

    /// Slots whose literal value is replaced by a slot token in the text.
    pub fn delexicalisable<'a>(&'a self, ont: &'a Ontology) -> impl Iterator<Item = (&'a str, &'a str)> + 'a {
        self.slots.iter().filter_map(move |(n, v)| {
            let class = ont.slot_class(n).ok()?;
            match (class, v) {
                (SlotClass::Informable | SlotClass::Requestable, Value::Literal(s)) => Some((n.as_str(), s.as_str())),
                _ => None,
            }
        })
    }

    /// Slot tokens the realisation of this DA must contain exactly once.
    pub fn required_slot_tokens(&self, ont: &Ontology) -> Vec<String> {
        self.delexicalisable(ont)
            .map(|(n, _)| slot_token(ont.slot_class(n).expect("checked"), n))
            .collect()
    }

    pub fn validate(&self, ont: &Ontology) -> Result<()> {
        if !ont.has_act(&self.act) {
            return Err(Error::UnknownAct(self.act.clone()));
        }
        let mut seen = BTreeSet::new();
        for (name, value) in &self.slots {
            let class = ont.slot_class(name)?;
            if !seen.insert(name) {
                return Err(Error::InvalidValue {
                    slot: name.clone(),
                    reason: "slot appears more than once".into(),
                });
            }
            let ok = match class {
                SlotClass::Informable => matches!(value, Value::Literal(_) | Value::DontCare | Value::None),
                SlotClass::Requestable => matches!(value, Value::Literal(_) | Value::None),
                SlotClass::Binary => matches!(value, Value::Yes | Value::No | Value::DontCare),
            };
            if !ok {
                return Err(Error::InvalidValue {
                    slot: name.clone(),
                    reason: format!("{value:?} is not allowed for a {class} slot"),
                });
            }
            if let Value::Literal(s) = value {
                if tokenize(s).is_empty() {
                    return Err(Error::InvalidValue {
                        slot: name.clone(),
                        reason: "empty literal".into(),
                    });
                }
            }
        }
        Ok(())
    }

    /// Parse the compact form `inform(name=seven days;pricerange=cheap)`.
    ///
    /// Pairs are separated by `;` or `,`; values may be quoted with `'` or `"`.
    /// A bare slot name (`request(pricerange)`) has no value.
    pub fn parse(input: &str) -> Result<Self> {
        let err = |reason: &str| Error::DaSyntax {
            input: input.to_string(),
            reason: reason.to_string(),
        };
        let s = input.trim();
        let open = s.find('(').ok_or_else(|| err("missing `(`"))?;
        if !s.ends_with(')') {
            return Err(err("missing closing `)`"));
        }
        let act = s[..open].trim();
        if !is_identifier(act) {
            return Err(err("act type must be a lowercase identifier"));
        }
        let body = &s[open + 1..s.len() - 1];
        let mut da = DialogueAct::new(act);
        let mut chars = body.char_indices().peekable();
        loop {
            while chars.peek().is_some_and(|(_, c)| c.is_whitespace()) {
                chars.next();
            }
            let Some(&(start, _)) = chars.peek() else { break };
            let mut name_end = body.len();
            let mut has_value = false;
            while let Some(&(i, c)) = chars.peek() {
                if c == '=' || c == ';' || c == ',' {
                    name_end = i;
                    has_value = c == '=';
                    chars.next();
                    break;
                }
                if c == '(' || c == ')' || c == '"' || c == '\'' {
                    return Err(err("unexpected character in slot name"));
                }
                chars.next();
            }
            let name = body[start..name_end].trim();
            if !is_identifier(name) {
                return Err(err("slot name must be a lowercase identifier"));
            }
            if !has_value {
                da.slots.push((name.to_string(), Value::None));
                continue;
            }
            while chars.peek().is_some_and(|(_, c)| c.is_whitespace()) {
                chars.next();
            }
            let value = match chars.peek().copied() {
                Some((qi, q @ ('"' | '\''))) => {
                    chars.next();
                    let mut end = None;
                    for (i, c) in chars.by_ref() {
                        if c == q {
                            end = Some(i);
                            break;
                        }
                    }
                    let end = end.ok_or_else(|| err("unterminated quote"))?;
                    let v = body[qi + 1..end].to_string();
                    while chars.peek().is_some_and(|(_, c)| c.is_whitespace()) {
                        chars.next();
                    }
                    match chars.next() {
                        None | Some((_, ';' | ',')) => {}
                        Some(_) => return Err(err("text after quoted value")),
                    }
                    v
                }
                Some((vs, _)) => {
                    let mut end = body.len();
                    for (i, c) in chars.by_ref() {
                        if c == ';' || c == ',' {
                            end = i;
                            break;
                        }
                        if c == '(' || c == ')' || c == '"' || c == '\'' {
                            return Err(err("unexpected character in value"));
                        }
                    }
                    body[vs..end].trim().to_string()
                }
                None => String::new(),
            };
            if value.is_empty() {
                return Err(err("empty value"));
            }
            da.slots.push((name.to_string(), Value::parse(&value)));
        }
        Ok(da)
    }
}

impl fmt::Display for DialogueAct {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}(", self.act)?;
        for (i, (n, v)) in self.slots.iter().enumerate() {
            if i > 0 {
                f.write_str(";")?;
            }
            match v.as_json() {
                None => write!(f, "{n}")?,
                Some(s) if s.contains(['(', ')', ';', ',', '\'', '"']) || s.trim() != s => {
                    let q = if s.contains('"') { '\'' } else { '"' };
                    write!(f, "{n}={q}{s}{q}")?
                }
                Some(s) => write!(f, "{n}={s}")?,
            }
        }
        f.write_str(")")
    }
}

pub fn slot_token(class: SlotClass, slot: &str) -> String {
    format!("<{}.{}>", class.prefix(), slot)
}

/// Split `<I.family>` into its class and slot name.
pub fn parse_slot_token(token: &str) -> Option<(SlotClass, &str)> {
    let inner = token.strip_prefix('<')?.strip_suffix('>')?;
    let mut chars = inner.chars();
    let class = SlotClass::from_prefix(chars.next()?)?;
    let name = chars.as_str().strip_prefix('.')?;
    is_identifier(name).then_some((class, name))
}

const PUNCTUATION: &[char] = &['.', ',', '!', '?', ';', ':', '(', ')', '"'];

/// Lowercase, pad punctuation with spaces, split on whitespace. Slot tokens
/// such as `<I.family>` pass through intact.
pub fn tokenize(text: &str) -> Vec<String> {
    let mut out = Vec::new();
    for word in text.split_whitespace() {
        if parse_slot_token(word).is_some() {
            out.push(word.to_string());
            continue;
        }
        let mut cur = String::new();
        for c in word.chars() {
            if PUNCTUATION.contains(&c) {
                if !cur.is_empty() {
                    out.push(std::mem::take(&mut cur));
                }
                out.push(c.to_string());
            } else {
                cur.extend(c.to_lowercase());
            }
        }
        if !cur.is_empty() {
            out.push(cur);
        }
    }
    out
}

/// Replace every literal slot value in `raw_text` by its slot token.
///
/// Values are matched at token level, longest value first; each value may
/// match several times but spans never overlap.
pub fn delexicalise(raw_text: &str, da: &DialogueAct, ont: &Ontology) -> Result<(Vec<String>, BTreeMap<String, String>)> {
    let tokens = tokenize(raw_text);
    let mut targets: Vec<(&str, &str, Vec<String>)> = da
        .delexicalisable(ont)
        .map(|(slot, value)| (slot, value, tokenize(value)))
        .collect();
    if let Some((slot, _, _)) = targets.iter().find(|(_, _, vt)| vt.is_empty()) {
        return Err(Error::InvalidValue {
            slot: slot.to_string(),
            reason: "empty literal".into(),
        });
    }
    targets.sort_by_key(|t| std::cmp::Reverse(t.2.len()));

    // owner[i] = index into `targets` of the span covering token i
    let mut owner: Vec<Option<usize>> = vec![None; tokens.len()];
    let mut span_start = vec![false; tokens.len()];
    for (ti, (slot, _, vt)) in targets.iter().enumerate() {
        let mut matched = false;
        let mut blocked_by = None;
        let mut i = 0;
        while i + vt.len() <= tokens.len() {
            if tokens[i..i + vt.len()] == vt[..] {
                if let Some(o) = owner[i..i + vt.len()].iter().flatten().next() {
                    blocked_by.get_or_insert(*o);
                    i += 1;
                    continue;
                }
                owner[i..i + vt.len()].iter_mut().for_each(|o| *o = Some(ti));
                span_start[i] = true;
                matched = true;
                i += vt.len();
            } else {
                i += 1;
            }
        }
        if !matched {
            return Err(match blocked_by {
                Some(o) => Error::Overlap {
                    first: targets[o].0.to_string(),
                    second: slot.to_string(),
                },
                None => Error::MissingValue { slot: slot.to_string() },
            });
        }
    }

    let mut out = Vec::with_capacity(tokens.len());
    let mut bindings = BTreeMap::new();
    for (i, tok) in tokens.iter().enumerate() {
        match owner[i] {
            None => out.push(tok.clone()),
            Some(ti) if span_start[i] => {
                let (slot, value, _) = &targets[ti];
                let st = slot_token(ont.slot_class(slot)?, slot);
                bindings.insert(st.clone(), value.to_string());
                out.push(st);
            }
            Some(_) => {}
        }
    }
    Ok((out, bindings))
}

/// Substitute slot values back into a delexicalised token sequence.
pub fn lexicalise<S: AsRef<str>>(delex_tokens: &[S], da: &DialogueAct) -> Result<String> {
    let mut words = Vec::with_capacity(delex_tokens.len());
    for tok in delex_tokens {
        let tok = tok.as_ref();
        match parse_slot_token(tok) {
            Some((_, slot)) => match da.value(slot) {
                Some(Value::Literal(v)) => words.push(v.clone()),
                _ => return Err(Error::UnboundSlot(tok.to_string())),
            },
            None => words.push(tok.to_string()),
        }
    }
    Ok(words.join(" "))
}

/// A dialogue act paired with its realisation.
#[derive(Clone, Debug, PartialEq)]
pub struct Instance {
    pub da: DialogueAct,
    pub raw_text: String,
    pub delex_tokens: Vec<String>,
    pub slot_bindings: BTreeMap<String, String>,
}

impl Instance {
    pub fn new(da: DialogueAct, raw_text: impl Into<String>, ont: &Ontology) -> Result<Self> {
        da.validate(ont)?;
        let raw_text = raw_text.into();
        let (delex_tokens, slot_bindings) = delexicalise(&raw_text, &da, ont)?;
        Ok(Instance {
            da,
            raw_text,
            delex_tokens,
            slot_bindings,
        })
    }

    /// Build from an already delexicalised token sequence (used for
    /// counterfeit data, which has no surface values of its own).
    pub fn from_delex(da: DialogueAct, delex_tokens: Vec<String>, ont: &Ontology) -> Result<Self> {
        da.validate(ont)?;
        let raw_text = lexicalise(&delex_tokens, &da)?;
        let mut slot_bindings = BTreeMap::new();
        for tok in &delex_tokens {
            if let Some((_, slot)) = parse_slot_token(tok) {
                if let Some(Value::Literal(v)) = da.value(slot) {
                    slot_bindings.insert(tok.clone(), v.clone());
                }
            }
        }
        Ok(Instance {
            da,
            raw_text,
            delex_tokens,
            slot_bindings,
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FeatureKind {
    /// The slot is present (with a literal value or none).
    Mention,
    DontCare,
    Yes,
    No,
}

impl FeatureKind {
    pub fn of(value: &Value) -> FeatureKind {
        match value {
            Value::Literal(_) | Value::None => FeatureKind::Mention,
            Value::DontCare => FeatureKind::DontCare,
            Value::Yes => FeatureKind::Yes,
            Value::No => FeatureKind::No,
        }
    }
}

/// Coordinate system of the 1-hot DA vector.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DaFeatureSpace {
    acts: Vec<String>,
    slot_features: Vec<(String, FeatureKind)>,
    #[serde(skip)]
    act_index: HashMap<String, usize>,
    #[serde(skip)]
    slot_index: HashMap<(String, FeatureKind), usize>,
}

impl DaFeatureSpace {
    /// Union feature space over several ontologies (source and target share
    /// one space so a single model can serve both).
    pub fn from_ontologies<'a>(onts: impl IntoIterator<Item = &'a Ontology>) -> Result<Self> {
        let mut acts: Vec<String> = Vec::new();
        let mut classes: BTreeMap<String, SlotClass> = BTreeMap::new();
        let mut order: Vec<String> = Vec::new();
        for ont in onts {
            for a in ont.act_types() {
                if !acts.contains(a) {
                    acts.push(a.clone());
                }
            }
            for s in ont.slots() {
                match classes.get(&s.name) {
                    Some(&c) if c != s.class => {
                        return Err(Error::Config(format!(
                            "slot `{}` is {c} in one ontology and {} in another",
                            s.name, s.class
                        )))
                    }
                    Some(_) => {}
                    None => {
                        classes.insert(s.name.clone(), s.class);
                        order.push(s.name.clone());
                    }
                }
            }
        }
        let slot_features = order
            .iter()
            .flat_map(|name| {
                classes[name]
                    .feature_kinds()
                    .iter()
                    .map(move |&k| (name.clone(), k))
            })
            .collect();
        Ok(Self::from_parts(acts, slot_features))
    }

    fn from_parts(acts: Vec<String>, slot_features: Vec<(String, FeatureKind)>) -> Self {
        let mut space = DaFeatureSpace {
            acts,
            slot_features,
            act_index: HashMap::new(),
            slot_index: HashMap::new(),
        };
        space.rebuild_index();
        space
    }

    pub(crate) fn rebuild_index(&mut self) {
        self.act_index = self.acts.iter().enumerate().map(|(i, a)| (a.clone(), i)).collect();
        let base = self.acts.len();
        self.slot_index = self
            .slot_features
            .iter()
            .enumerate()
            .map(|(i, f)| (f.clone(), base + i))
            .collect();
    }

    pub fn dim(&self) -> usize {
        self.acts.len() + self.slot_features.len()
    }

    pub fn num_acts(&self) -> usize {
        self.acts.len()
    }

    pub fn act_index(&self, act: &str) -> Option<usize> {
        self.act_index.get(act).copied()
    }

    pub fn feature_index(&self, slot: &str, kind: FeatureKind) -> Option<usize> {
        self.slot_index.get(&(slot.to_string(), kind)).copied()
    }

    pub fn encode(&self, da: &DialogueAct) -> Result<Vec<f64>> {
        let mut v = vec![0.0; self.dim()];
        let a = self
            .act_index(&da.act)
            .ok_or_else(|| Error::Encoding(format!("unknown act `{}`", da.act)))?;
        v[a] = 1.0;
        for (slot, value) in &da.slots {
            let kind = FeatureKind::of(value);
            let i = self
                .feature_index(slot, kind)
                .ok_or_else(|| Error::Encoding(format!("no feature for `{slot}` ({kind:?})")))?;
            v[i] = 1.0;
        }
        Ok(v)
    }

    /// Act type and `(slot, kind)` set of a binary feature vector.
    pub fn decode(&self, v: &[f64]) -> Result<(String, BTreeSet<(String, FeatureKind)>)> {
        if v.len() != self.dim() {
            return Err(Error::ShapeMismatch(format!("DA vector of length {} for dimension {}", v.len(), self.dim())));
        }
        let acts: Vec<usize> = (0..self.acts.len()).filter(|&i| v[i] > 0.5).collect();
        let [act] = acts[..] else {
            return Err(Error::Encoding(format!("{} active act features", acts.len())));
        };
        let slots = self
            .slot_features
            .iter()
            .enumerate()
            .filter(|(i, _)| v[self.acts.len() + i] > 0.5)
            .map(|(_, f)| f.clone())
            .collect();
        Ok((self.acts[act].clone(), slots))
    }
}

pub fn encode_da(da: &DialogueAct, space: &DaFeatureSpace) -> Result<Vec<f64>> {
    space.encode(da)
}
