use nlgadapt::corpus::{generate_synthetic, SynthSpec};
use nlgadapt::da::{DaFeatureSpace, Instance};
use nlgadapt::eval::split_3_1_1;
use nlgadapt::nn::seeded_rng;
use nlgadapt::recipes::{sweep, Domains, RecipeConfig, Regime};
use nlgadapt::sclstm::{mean_cost, train_ml, Generator, TrainConfig, Vocab};

fn small_target(n: usize, seed: u64) -> (Generator, Vec<Instance>) {
    let corpora = generate_synthetic(&SynthSpec::preset("similar").unwrap(), seed).unwrap();
    let data: Vec<Instance> = split_3_1_1(&corpora.target, seed).0.into_iter().take(n).collect();
    let mut words = corpora.target_ontology.slot_tokens();
    words.extend(data.iter().flat_map(|i| i.delex_tokens.iter().cloned()));
    let space = DaFeatureSpace::from_ontologies([&corpora.target_ontology]).unwrap();
    let gen = Generator::new(Vocab::build(words), space, 16, 0.1, &mut seeded_rng(seed));
    (gen, data)
}

#[test]
fn cost_falls_over_first_epochs() {
    let (gen, data) = small_target(20, 2);
    let examples = gen.examples(&data).unwrap();
    let cfg = TrainConfig {
        hidden: 16,
        max_epochs: 5,
        patience: 5,
        ..Default::default()
    };
    let outcome = train_ml(&examples, &examples, gen.params.clone(), &cfg).unwrap();
    let costs: Vec<f64> = outcome.history.iter().map(|e| e.train_cost).collect();
    assert_eq!(costs.len(), 5);
    assert!(costs.windows(2).all(|w| w[1] < w[0]), "{costs:?}");
}

#[test]
fn single_sentence_is_memorised() {
    let (gen, data) = small_target(1, 3);
    let examples = gen.examples(&data).unwrap();
    let cfg = TrainConfig {
        hidden: 16,
        max_epochs: 1000,
        patience: 1000,
        lr_decay: 1.0,
        ..Default::default()
    };
    let outcome = train_ml(&examples, &examples, gen.params.clone(), &cfg).unwrap();
    let (_, nll) = mean_cost(&examples, &outcome.params).unwrap();
    assert!(nll < 0.01, "{nll}");
}

#[test]
fn more_target_data_does_not_hurt_scratch() {
    let mut spec = SynthSpec::preset("similar").unwrap();
    spec.source.max_instances = Some(50);
    spec.target.max_instances = Some(400);
    let c = generate_synthetic(&spec, 5).unwrap();
    let domains = Domains {
        source_ontology: c.source_ontology,
        source: c.source,
        target_ontology: c.target_ontology,
        target: c.target,
    };
    let cfg = RecipeConfig {
        regimes: vec![Regime::Scratch],
        fractions: vec![0.01, 1.0],
        seeds: vec![5],
        train: TrainConfig {
            hidden: 16,
            max_epochs: 10,
            ..Default::default()
        },
        ..Default::default()
    };
    let result = sweep(&domains, &cfg).unwrap();
    let bleu = |f: f64| result.rows.iter().find(|r| r.fraction == f).unwrap().bleu;
    assert!(bleu(1.0) >= bleu(0.01), "{} < {}", bleu(1.0), bleu(0.01));
    assert!(bleu(1.0) > 0.3, "{}", bleu(1.0));
}
