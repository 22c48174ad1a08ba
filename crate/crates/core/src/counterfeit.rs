//! Class-preserving slot renaming that turns source-domain data into
//! pseudo target-domain data.

use std::collections::BTreeMap;

use rand::Rng;
use rayon::prelude::*;

use crate::da::{parse_slot_token, slot_token, DialogueAct, Instance, Ontology, SlotClass, Value};
use crate::error::{Error, Result};
use crate::nn::{derive_seed, seeded_rng, SeededRng};

#[derive(Clone, Debug)]
pub struct CounterfeitPlan {
    source: Ontology,
    target: Ontology,
    candidates: BTreeMap<SlotClass, Vec<String>>,
    /// Require an injective renaming within each instance.
    pub distinct_slots: bool,
}

impl CounterfeitPlan {
    pub fn new(source: Ontology, target: Ontology, distinct_slots: bool) -> Self {
        let candidates = SlotClass::ALL
            .iter()
            .map(|&c| (c, target.slots_of_class(c).map(String::from).collect()))
            .collect();
        CounterfeitPlan {
            source,
            target,
            candidates,
            distinct_slots,
        }
    }

    pub fn source(&self) -> &Ontology {
        &self.source
    }

    pub fn target(&self) -> &Ontology {
        &self.target
    }

    pub fn candidates(&self, class: SlotClass) -> &[String] {
        &self.candidates[&class]
    }
}

/// Slot names and values in the text must agree with the act.
fn check_consistent(inst: &Instance, ont: &Ontology) -> Result<()> {
    for tok in &inst.delex_tokens {
        if let Some((class, slot)) = parse_slot_token(tok) {
            let ok = ont.slot_class(slot).map(|c| c == class).unwrap_or(false)
                && matches!(inst.da.value(slot), Some(Value::Literal(_)));
            if !ok {
                return Err(Error::Inconsistent(format!("text token {tok} is not a valued slot of {}", inst.da)));
            }
        }
    }
    for st in inst.da.required_slot_tokens(ont) {
        if !inst.delex_tokens.contains(&st) {
            return Err(Error::Inconsistent(format!("{st} of {} is not realised in the text", inst.da)));
        }
    }
    Ok(())
}

/// Draw a renaming for every slot of `da`, in slot order.
pub fn draw_renaming(da: &DialogueAct, plan: &CounterfeitPlan, rng: &mut SeededRng) -> Result<BTreeMap<String, String>> {
    let mut map = BTreeMap::new();
    let mut used: Vec<&str> = Vec::new();
    for (slot, _) in &da.slots {
        if map.contains_key(slot) {
            continue;
        }
        let class = plan.source.slot_class(slot)?;
        let pool = plan.candidates(class);
        let choice = if plan.distinct_slots {
            let free: Vec<&String> = pool.iter().filter(|s| !used.contains(&s.as_str())).collect();
            if free.is_empty() {
                return Err(Error::EmptyClass(class));
            }
            free[rng.random_range(0..free.len())]
        } else {
            if pool.is_empty() {
                return Err(Error::EmptyClass(class));
            }
            &pool[rng.random_range(0..pool.len())]
        };
        used.push(choice);
        map.insert(slot.clone(), choice.clone());
    }
    Ok(map)
}

/// Apply a renaming. Slots that collide after renaming are merged, keeping
/// the first literal value.
pub fn apply_renaming(inst: &Instance, renaming: &BTreeMap<String, String>, plan: &CounterfeitPlan) -> Result<Instance> {
    let rename = |slot: &str| {
        renaming
            .get(slot)
            .cloned()
            .ok_or_else(|| Error::Inconsistent(format!("no renaming for slot `{slot}`")))
    };
    let mut da = DialogueAct::new(inst.da.act.clone());
    for (slot, value) in &inst.da.slots {
        let new = rename(slot)?;
        match da.slots.iter_mut().find(|(n, _)| *n == new) {
            None => da.slots.push((new, value.clone())),
            // a realised slot token needs a literal to bind to
            Some((_, v)) if v.as_literal().is_none() && value.as_literal().is_some() => *v = value.clone(),
            Some(_) => {}
        }
    }
    let mut tokens = Vec::with_capacity(inst.delex_tokens.len());
    for tok in &inst.delex_tokens {
        match parse_slot_token(tok) {
            Some((_, slot)) => {
                let new = rename(slot)?;
                tokens.push(slot_token(plan.target.slot_class(&new)?, &new));
            }
            None => tokens.push(tok.clone()),
        }
    }
    let raw_text = crate::da::lexicalise(&tokens, &da)?;
    let mut slot_bindings = BTreeMap::new();
    for tok in &tokens {
        if let Some((_, slot)) = parse_slot_token(tok) {
            if let Some(v) = da.value(slot).and_then(Value::as_literal) {
                slot_bindings.insert(tok.clone(), v.to_string());
            }
        }
    }
    Ok(Instance {
        da,
        raw_text,
        delex_tokens: tokens,
        slot_bindings,
    })
}

pub fn counterfeit_instance(inst: &Instance, plan: &CounterfeitPlan, rng: &mut SeededRng) -> Result<Instance> {
    check_consistent(inst, &plan.source)?;
    let renaming = draw_renaming(&inst.da, plan, rng)?;
    apply_renaming(inst, &renaming, plan)
}

/// Counterfeit a whole corpus. Instance `i` uses its own random stream
/// derived from `seed`, so the result does not depend on thread scheduling.
pub fn counterfeit_corpus(source: &[Instance], plan: &CounterfeitPlan, seed: u64) -> Result<Vec<Instance>> {
    source
        .par_iter()
        .enumerate()
        .map(|(i, inst)| counterfeit_instance(inst, plan, &mut seeded_rng(derive_seed(seed, i as u64))))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::da::SlotDef;
    use statrs::distribution::{ChiSquared, ContinuousCDF};

    fn ont(domain: &str, slots: &[(&str, SlotClass)]) -> Ontology {
        Ontology::new(
            domain,
            vec!["inform".into(), "request".into()],
            slots
                .iter()
                .map(|(n, c)| SlotDef { name: n.to_string(), class: *c })
                .collect(),
        )
        .unwrap()
    }

    fn source() -> Ontology {
        ont(
            "laptop",
            &[
                ("family", SlotClass::Informable),
                ("battery", SlotClass::Requestable),
                ("isforbusiness", SlotClass::Binary),
                ("drive", SlotClass::Informable),
            ],
        )
    }

    fn target() -> Ontology {
        ont(
            "tv",
            &[
                ("screensize", SlotClass::Informable),
                ("ecorating", SlotClass::Informable),
                ("color", SlotClass::Requestable),
                ("power", SlotClass::Requestable),
                ("resolution", SlotClass::Requestable),
                ("hasusb", SlotClass::Binary),
            ],
        )
    }

    fn sample_instance() -> Instance {
        let da = DialogueAct::new("inform")
            .with("family", Value::Literal("tecra".into()))
            .with("battery", Value::Literal("long".into()))
            .with("isforbusiness", Value::Yes);
        Instance::new(da, "the tecra has a long battery and is for business .", &source()).unwrap()
    }

    #[test]
    fn only_slot_tokens_change() {
        let plan = CounterfeitPlan::new(source(), target(), false);
        let inst = sample_instance();
        let mut rng = seeded_rng(4);
        for _ in 0..50 {
            let out = counterfeit_instance(&inst, &plan, &mut rng).unwrap();
            assert_eq!(out.delex_tokens.len(), inst.delex_tokens.len());
            for (a, b) in inst.delex_tokens.iter().zip(&out.delex_tokens) {
                match (parse_slot_token(a), parse_slot_token(b)) {
                    (Some((ca, _)), Some((cb, sb))) => {
                        assert_eq!(ca, cb);
                        assert_eq!(plan.target().slot_class(sb).unwrap(), cb);
                    }
                    (None, None) => assert_eq!(a, b),
                    _ => panic!("slot token position changed"),
                }
            }
            assert_eq!(out.da.act, inst.da.act);
            for (slot, value) in &out.da.slots {
                assert!(plan.target().contains_slot(slot));
                assert!(matches!(value, Value::Literal(_) | Value::Yes));
            }
            // binary slot has no token; its surface words stay
            assert!(out.raw_text.contains("for business"));
        }
    }

    #[test]
    fn renaming_is_uniform_over_class_products() {
        // one informable slot (2 candidates) and one requestable (3): 6 renamings
        let plan = CounterfeitPlan::new(source(), target(), false);
        let da = DialogueAct::new("inform")
            .with("family", Value::Literal("x".into()))
            .with("battery", Value::Literal("y".into()));
        let mut all = Vec::new();
        for a in plan.candidates(SlotClass::Informable) {
            for b in plan.candidates(SlotClass::Requestable) {
                all.push((a.clone(), b.clone()));
            }
        }
        assert_eq!(all.len(), 6);
        let draws = 10_000;
        let mut counts = vec![0usize; all.len()];
        let mut rng = seeded_rng(99);
        for _ in 0..draws {
            let m = draw_renaming(&da, &plan, &mut rng).unwrap();
            let key = (m["family"].clone(), m["battery"].clone());
            counts[all.iter().position(|k| *k == key).unwrap()] += 1;
        }
        let expected = draws as f64 / all.len() as f64;
        let chi2: f64 = counts.iter().map(|&c| (c as f64 - expected).powi(2) / expected).sum();
        let p = 1.0 - ChiSquared::new((all.len() - 1) as f64).unwrap().cdf(chi2);
        assert!(p > 0.01, "chi2 = {chi2}, p = {p}, counts = {counts:?}");
    }

    #[test]
    fn identity_when_target_equals_source() {
        let single = ont(
            "laptop",
            &[
                ("family", SlotClass::Informable),
                ("battery", SlotClass::Requestable),
                ("isforbusiness", SlotClass::Binary),
            ],
        );
        let plan = CounterfeitPlan::new(source(), single, false);
        let inst = sample_instance();
        let out = counterfeit_instance(&inst, &plan, &mut seeded_rng(0)).unwrap();
        assert_eq!(out, inst);
    }

    #[test]
    fn empty_target_class_is_an_error() {
        let no_binary = ont(
            "tv",
            &[("screensize", SlotClass::Informable), ("color", SlotClass::Requestable)],
        );
        let plan = CounterfeitPlan::new(source(), no_binary, false);
        let err = counterfeit_instance(&sample_instance(), &plan, &mut seeded_rng(0)).unwrap_err();
        assert!(matches!(err, Error::EmptyClass(SlotClass::Binary)));
    }

    #[test]
    fn inconsistent_instance_is_rejected() {
        let mut inst = sample_instance();
        inst.delex_tokens.push("<I.drive>".into());
        let plan = CounterfeitPlan::new(source(), target(), false);
        assert!(matches!(
            counterfeit_instance(&inst, &plan, &mut seeded_rng(0)),
            Err(Error::Inconsistent(_))
        ));
        let mut inst = sample_instance();
        inst.delex_tokens.retain(|t| t != "<I.family>");
        assert!(matches!(
            counterfeit_instance(&inst, &plan, &mut seeded_rng(0)),
            Err(Error::Inconsistent(_))
        ));
    }

    #[test]
    fn collisions_merge_and_distinct_mode_avoids_them() {
        let da = DialogueAct::new("inform")
            .with("family", Value::Literal("tecra".into()))
            .with("drive", Value::Literal("big".into()));
        let inst = Instance::new(da, "a tecra with a big drive", &source()).unwrap();
        let plan = CounterfeitPlan::new(source(), target(), false);
        let mut rng = seeded_rng(1);
        let mut saw_merge = false;
        for _ in 0..100 {
            let out = counterfeit_instance(&inst, &plan, &mut rng).unwrap();
            if out.da.slots.len() == 1 {
                saw_merge = true;
                let tok = &out.delex_tokens[1];
                assert_eq!(out.delex_tokens.iter().filter(|t| *t == tok).count(), 2);
            }
        }
        assert!(saw_merge);
        let plan = CounterfeitPlan::new(source(), target(), true);
        for _ in 0..100 {
            assert_eq!(counterfeit_instance(&inst, &plan, &mut rng).unwrap().da.slots.len(), 2);
        }
        let one_inf = ont(
            "tv",
            &[("screensize", SlotClass::Informable), ("color", SlotClass::Requestable)],
        );
        let plan = CounterfeitPlan::new(source(), one_inf, true);
        assert!(matches!(
            counterfeit_instance(&inst, &plan, &mut rng),
            Err(Error::EmptyClass(SlotClass::Informable))
        ));
    }

    #[test]
    fn merge_prefers_the_literal_value() {
        let da = DialogueAct::new("inform")
            .with("drive", Value::DontCare)
            .with("family", Value::Literal("tecra".into()));
        let inst = Instance::new(da, "a tecra with any drive", &source()).unwrap();
        let plan = CounterfeitPlan::new(source(), target(), false);
        let renaming = BTreeMap::from([
            ("drive".to_string(), "screensize".to_string()),
            ("family".to_string(), "screensize".to_string()),
        ]);
        let out = apply_renaming(&inst, &renaming, &plan).unwrap();
        assert_eq!(out.da.slots, vec![("screensize".to_string(), Value::Literal("tecra".into()))]);
        assert_eq!(out.raw_text, "a tecra with any drive");
        assert_eq!(out.slot_bindings["<I.screensize>"], "tecra");
    }

    #[test]
    fn corpus_is_deterministic() {
        let plan = CounterfeitPlan::new(source(), target(), false);
        let data = vec![sample_instance(); 40];
        let a = counterfeit_corpus(&data, &plan, 7).unwrap();
        let b = counterfeit_corpus(&data, &plan, 7).unwrap();
        assert_eq!(a, b);
        let c = counterfeit_corpus(&data, &plan, 8).unwrap();
        assert_ne!(a, c);
    }
}
