mod common;

use proptest::prelude::*;
use rand::rngs::StdRng;
use rand::SeedableRng;
use shieldgate::model::{Decision, Direction, Finding, Verdict};
use shieldgate::policy::{parse_predicate, EvaluationInput, PolicySet};

fn run(set: &PolicySet, text: &str, findings: Vec<Finding>, direction: Direction) -> Verdict {
    set.evaluate(EvaluationInput {
        text,
        direction,
        jurisdiction: "default",
        policy_ids: &["rand".to_string()],
        findings,
        timings: Default::default(),
        degraded: Vec::new(),
        fail_closed: Vec::new(),
    })
    .unwrap()
}

struct Instance {
    doc: String,
    set: PolicySet,
    text: String,
    findings: Vec<Finding>,
    extra: Finding,
    direction: Direction,
}

fn instance(seed: u64) -> Instance {
    let mut rng = StdRng::seed_from_u64(seed);
    let doc = common::random_policy(&mut rng, "rand");
    let mut set = PolicySet::builtin();
    set.insert_toml(&doc).unwrap_or_else(|e| panic!("{e}\n{doc}"));
    let text = common::random_text(&mut rng);
    let len = text.chars().count();
    let n = rand::Rng::gen_range(&mut rng, 0..6);
    let findings = (0..n).map(|_| common::random_finding(&mut rng, len)).collect();
    let extra = common::random_finding(&mut rng, len);
    let direction = if rand::Rng::gen_bool(&mut rng, 0.5) {
        Direction::Prompt
    } else {
        Direction::Response
    };
    Instance { doc, set, text, findings, extra, direction }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(300))]

    #[test]
    fn verdicts_are_deterministic(seed in any::<u64>()) {
        let i = instance(seed);
        let a = run(&i.set, &i.text, i.findings.clone(), i.direction);
        let b = run(&i.set, &i.text, i.findings.clone(), i.direction);
        prop_assert_eq!(a, b, "{}", i.doc);
    }

    #[test]
    fn extra_findings_never_lower_the_decision(seed in any::<u64>()) {
        let i = instance(seed);
        let before = run(&i.set, &i.text, i.findings.clone(), i.direction);
        let mut more = i.findings.clone();
        more.push(i.extra.clone());
        let after = run(&i.set, &i.text, more, i.direction);
        prop_assert!(after.decision >= before.decision, "{}", i.doc);
    }

    #[test]
    fn default_action_is_a_floor(seed in any::<u64>()) {
        let i = instance(seed);
        let floor = i.set.get("rand").unwrap().default_action;
        let v = run(&i.set, &i.text, i.findings.clone(), i.direction);
        prop_assert!(v.decision >= floor);
    }

    #[test]
    fn text_is_untouched_unless_masked(seed in any::<u64>()) {
        let i = instance(seed);
        let v = run(&i.set, &i.text, i.findings.clone(), i.direction);
        prop_assume!(v.decision != Decision::Block);
        let masked = v.audit.iter().any(|f| !f.masked_spans.is_empty());
        prop_assert_eq!(masked, v.output_text != i.text);
        if v.decision < Decision::Mask {
            prop_assert_eq!(&v.output_text, &i.text);
        }
    }

    #[test]
    fn predicate_display_round_trips(seed in any::<u64>()) {
        let mut rng = StdRng::seed_from_u64(seed);
        let src = common::predicate(&mut rng, 3);
        let p = parse_predicate(&src).unwrap_or_else(|e| panic!("{e}: {src}"));
        let again = parse_predicate(&p.to_string()).unwrap();
        prop_assert_eq!(p, again);
    }
}
