//! Fixture generators shared by the integration and acceptance tests.
#![allow(dead_code)]

use rand::rngs::StdRng;
use rand::seq::SliceRandom;
use rand::Rng;
use shieldgate::model::{Finding, PiiType, Sensitivity, Span};

/// Card numbers used by the PII fixtures. Luhn by hand, doubling every
/// second digit from the right (doubles above 9 lose 9):
///
/// ```text
/// 4111 1111 1111 1111   8+1+2+1+2+1+2+1+2+1+2+1+2+1+2+1 = 30
/// 5500 0000 0000 0004   1+5+0+...+0+4                   = 10
/// 3400 000000 00009     3+8+0+...+0+9                   = 20
/// 6011 0000 0000 0004   3+0+2+1+0+...+0+4               = 10
/// 4012 8888 8888 1881   8+0+2+2+7+8+7+8+7+8+7+8+2+8+7+1 = 90
/// ```
///
/// Bumping the last digit by one (the invalid list) adds 1 to each sum.
pub const VALID_CARDS: [&str; 5] = [
    "4111 1111 1111 1111",
    "5500 0000 0000 0004",
    "3400 000000 00009",
    "6011 0000 0000 0004",
    "4012 8888 8888 1881",
];
pub const INVALID_CARDS: [&str; 5] = [
    "4111 1111 1111 1112",
    "5500 0000 0000 0005",
    "3400 000000 00008",
    "6011 0000 0000 0005",
    "4012 8888 8888 1882",
];
/// mod-97 remainders 1 (valid) and 28 (invalid).
pub const VALID_IBANS: [&str; 2] = ["GB82 WEST 1234 5698 7654 32", "DE89 3704 0044 0532 0130 00"];
pub const INVALID_IBANS: [&str; 2] = ["GB82 WEST 1234 5698 7654 33", "DE89 3704 0044 0532 0130 01"];

const GIVEN: [&str; 6] = ["Alice", "Amanda", "Andrew", "Anna", "Brian", "Carlos"];
const SURNAMES: [&str; 5] = ["Lopez", "Chen", "Garcia", "Kim", "Davis"];
const STREETS: [&str; 4] = ["Maple", "Cedar Hill", "Oak", "Willow"];
const STREET_KINDS: [&str; 3] = ["Street", "Avenue", "Road"];
const FILLER: [&str; 16] = [
    "the committee reviewed the quarterly figures",
    "our team shipped the update",
    "nobody expected the weather to change",
    "the draft needs another pass",
    "please keep the notes short",
    "the meeting moved to the large room",
    "we archived the old tickets",
    "the river was calm that morning",
    "a short summary follows",
    "the budget stayed within limits",
    "results were logged as usual",
    "the library opens at nine",
    "everyone agreed on the schedule",
    "the samples arrived in good shape",
    "the printer jammed again",
    "lunch will be served outside",
];
const INVALID_EIN_PREFIXES: [u32; 8] = [7, 8, 9, 17, 18, 19, 28, 29];
const VALID_EIN_PREFIXES: [u32; 8] = [1, 12, 23, 35, 45, 56, 74, 95];

/// Types whose candidates go through a checksum or structure validator.
pub const VALIDATED: [PiiType; 6] = [
    PiiType::DateOfBirth,
    PiiType::PhoneNumber,
    PiiType::BankAccountNumber,
    PiiType::CreditCardNumber,
    PiiType::TaxId,
    PiiType::Ssn,
];

/// An entity planted in a sentence, with its char span in that sentence.
#[derive(Debug, Clone)]
pub struct Plant {
    pub pii_type: PiiType,
    pub valid: bool,
    pub sentence: String,
    pub span: Span,
}

fn entity(rng: &mut StdRng, ty: PiiType, valid: bool) -> (&'static str, String) {
    match ty {
        PiiType::PersonName => (
            "we asked ",
            format!("{} {}", GIVEN.choose(rng).unwrap(), SURNAMES.choose(rng).unwrap()),
        ),
        PiiType::StreetAddress => (
            "the parcel went to ",
            format!(
                "{} {} {}",
                rng.gen_range(1..9999),
                STREETS.choose(rng).unwrap(),
                STREET_KINDS.choose(rng).unwrap()
            ),
        ),
        PiiType::DateOfBirth => {
            let year = rng.gen_range(1940..2005);
            let date = if valid {
                let month = rng.gen_range(1..=12);
                format!("{year}-{month:02}-{:02}", rng.gen_range(1..=28))
            } else {
                let (m, d) = *[(2, 30), (2, 31), (4, 31), (6, 31), (13, 1)].choose(rng).unwrap();
                format!("{year}-{m:02}-{d:02}")
            };
            ("she was born on ", date)
        }
        PiiType::PhoneNumber => {
            let phone = if valid {
                let area = rng.gen_range(200..999);
                let exch = rng.gen_range(200..999);
                let line = rng.gen_range(0..10000);
                if rng.gen_bool(0.5) {
                    format!("({area}) {exch}-{line:04}")
                } else {
                    format!("{area}-{exch}-{line:04}")
                }
            } else {
                format!(
                    "({}) {:03}-{:04}",
                    rng.gen_range(100..200),
                    rng.gen_range(0..200),
                    rng.gen_range(0..10000)
                )
            };
            ("you can call ", phone)
        }
        PiiType::EmailAddress => (
            "send it to ",
            format!("user{}@example.org", rng.gen_range(1..100000)),
        ),
        PiiType::SocialMediaHandle => ("follow ", format!("@user_{}", rng.gen_range(1..100000))),
        PiiType::BankAccountNumber => {
            if !valid {
                ("wire it to ", INVALID_IBANS.choose(rng).unwrap().to_string())
            } else if rng.gen_bool(0.5) {
                ("wire it to ", VALID_IBANS.choose(rng).unwrap().to_string())
            } else {
                (
                    "use account number: ",
                    format!("{}", rng.gen_range(1_000_000_000u64..9_999_999_999)),
                )
            }
        }
        PiiType::CreditCardNumber => {
            let list = if valid { &VALID_CARDS } else { &INVALID_CARDS };
            ("the card is ", list.choose(rng).unwrap().to_string())
        }
        PiiType::TaxId => {
            let prefix = if valid {
                *VALID_EIN_PREFIXES.choose(rng).unwrap()
            } else {
                *INVALID_EIN_PREFIXES.choose(rng).unwrap()
            };
            ("the employer filed as ", format!("{prefix:02}-{:07}", rng.gen_range(0..10_000_000)))
        }
        PiiType::Ssn => {
            let ssn = if valid {
                format!(
                    "{:03}-{:02}-{:04}",
                    rng.gen_range(1..666),
                    rng.gen_range(1..100),
                    rng.gen_range(1..10000)
                )
            } else {
                let area = *[0, 666, 900, 987].choose(rng).unwrap();
                format!("{area:03}-{:02}-{:04}", rng.gen_range(1..100), rng.gen_range(1..10000))
            };
            ("the form lists ", ssn)
        }
        PiiType::PassportNumber => (
            "passport number: ",
            format!("X{}", rng.gen_range(10_000_000..99_999_999)),
        ),
        PiiType::DriversLicenseNumber => (
            "driver's license: ",
            format!("D{}", rng.gen_range(1_000_000..9_999_999)),
        ),
        PiiType::HealthIdentifier => (
            "MRN: ",
            format!("{}", rng.gen_range(10_000_000..99_999_999)),
        ),
    }
}

/// One sentence with a single planted entity.
pub fn plant(rng: &mut StdRng, ty: PiiType, valid: bool) -> Plant {
    let (cue, value) = entity(rng, ty, valid);
    let pre = FILLER.choose(rng).unwrap();
    let post = FILLER.choose(rng).unwrap();
    let head = format!("{pre} and {cue}");
    let start = head.chars().count();
    let end = start + value.chars().count();
    Plant {
        pii_type: ty,
        valid,
        sentence: format!("{head}{value} because {post}."),
        span: Span::new(start, end),
    }
}

/// `n` sentences cycling through all 13 types; validated types alternate
/// between valid and checksum-invalid plants.
pub fn pii_fixture(rng: &mut StdRng, n: usize) -> Vec<Plant> {
    (0..n)
        .map(|i| {
            let ty = PiiType::ALL[i % PiiType::ALL.len()];
            let round = i / PiiType::ALL.len();
            let valid = !VALIDATED.contains(&ty) || round % 2 == 0;
            plant(rng, ty, valid)
        })
        .collect()
}

/// Joins plants into one text, shifting spans to text offsets.
pub fn join(plants: &[Plant]) -> (String, Vec<Plant>) {
    let mut text = String::new();
    let mut shifted = Vec::with_capacity(plants.len());
    for p in plants {
        if !text.is_empty() {
            text.push(' ');
        }
        let offset = text.chars().count();
        text.push_str(&p.sentence);
        shifted.push(Plant {
            span: Span::new(p.span.start + offset, p.span.end + offset),
            ..p.clone()
        });
    }
    (text, shifted)
}

/// A clean filler sentence.
pub fn filler(rng: &mut StdRng) -> String {
    format!("{}.", FILLER.choose(rng).unwrap())
}

/// Random lowercase pseudo-words drawn from a vocabulary tagged by `prefix`
/// so different vocabularies never share a token.
pub fn vocabulary(prefix: &str, size: usize) -> Vec<String> {
    const SYL: [&str; 12] = ["ka", "lo", "mi", "ren", "tu", "sa", "vo", "ne", "pi", "dor", "qua", "li"];
    (0..size)
        .map(|i| {
            let mut w = prefix.to_string();
            let mut n = i;
            loop {
                w.push_str(SYL[n % SYL.len()]);
                n /= SYL.len();
                if n == 0 {
                    break;
                }
            }
            w
        })
        .collect()
}

pub fn words(rng: &mut StdRng, vocab: &[String], n: usize) -> Vec<String> {
    (0..n).map(|_| vocab.choose(rng).unwrap().clone()).collect()
}

const CATEGORIES: [&str; 7] = [
    "pii.email_address",
    "pii.person_name",
    "pii.ssn",
    "pii.credit_card_number",
    "hap",
    "attribution",
    "topic.finance",
];
const PATTERNS: [&str; 8] = [
    "pii.*",
    "pii.email_address",
    "pii.person_name",
    "pii.ssn",
    "hap",
    "attribution",
    "topic.*",
    "*",
];
const LEVELS: [&str; 3] = ["LOW", "MODERATE", "HIGH"];
const OPS: [&str; 6] = [">=", ">", "<=", "<", "==", "!="];
const ACTIONS: [&str; 4] = ["PASS", "WARN", "MASK", "BLOCK"];

/// A short multi-sentence text of filler words.
pub fn random_text(rng: &mut StdRng) -> String {
    let n = rng.gen_range(1..5);
    (0..n).map(|_| filler(rng)).collect::<Vec<_>>().join(" ")
}

pub fn random_finding(rng: &mut StdRng, text_len: usize) -> Finding {
    let category = *CATEGORIES.choose(rng).unwrap();
    let score = (rng.gen_range(0..=100) as f64) / 100.0;
    let mut f = Finding::new("rand", category, category, score);
    let spanned = category.starts_with("pii.") || category == "attribution" || rng.gen_bool(0.5);
    if spanned && text_len > 1 {
        let start = rng.gen_range(0..text_len - 1);
        let end = rng.gen_range(start + 1..=text_len.min(start + 25));
        f = f.with_span(Span::new(start, end));
    }
    if category.starts_with("pii.") {
        let level = *[Sensitivity::Low, Sensitivity::Moderate, Sensitivity::High]
            .choose(rng)
            .unwrap();
        f = f.with_sensitivity(level);
    }
    f
}

fn comparison(rng: &mut StdRng) -> String {
    if rng.gen_bool(0.5) {
        format!("score {} {}", OPS.choose(rng).unwrap(), rng.gen_range(0..=10) as f64 / 10.0)
    } else {
        format!(
            "sensitivity {} {}",
            OPS.choose(rng).unwrap(),
            LEVELS.choose(rng).unwrap()
        )
    }
}

/// A random predicate of nesting depth at most `depth`.
pub fn predicate(rng: &mut StdRng, depth: u32) -> String {
    let roll = if depth == 0 { rng.gen_range(0..5) } else { rng.gen_range(0..8) };
    match roll {
        0 => format!("category == \"{}\"", PATTERNS.choose(rng).unwrap()),
        1 => comparison(rng),
        2 => format!(
            "direction == {}",
            if rng.gen_bool(0.5) { "PROMPT" } else { "RESPONSE" }
        ),
        3 => format!(
            "SAME_SENTENCE(\"{}\", \"{}\")",
            PATTERNS.choose(rng).unwrap(),
            PATTERNS.choose(rng).unwrap()
        ),
        4 => format!("NOT ({})", comparison(rng)),
        5 => format!("({} AND {})", predicate(rng, depth - 1), predicate(rng, depth - 1)),
        6 => format!("({} OR {})", predicate(rng, depth - 1), predicate(rng, depth - 1)),
        _ => format!("NOT ({} OR {})", comparison(rng), comparison(rng)),
    }
}

/// A valid policy document with 1 to 5 random rules.
pub fn random_policy(rng: &mut StdRng, policy_id: &str) -> String {
    let mut doc = format!(
        "policy_id = \"{policy_id}\"\ndefault_action = \"{}\"\nblock_message = \"blocked\"\n",
        if rng.gen_bool(0.7) { "PASS" } else { ACTIONS.choose(rng).unwrap() }
    );
    for i in 0..rng.gen_range(1..=5) {
        let action = *ACTIONS.choose(rng).unwrap();
        let mut when = predicate(rng, 2);
        if action == "MASK" {
            when = format!("category == \"pii.*\" AND {when}");
        }
        doc.push_str(&format!(
            "\n[[rules]]\nid = \"r{i}\"\nwhen = '{when}'\naction = \"{action}\"\n"
        ));
        if action == "MASK" && rng.gen_bool(0.5) {
            doc.push_str("mask_style = \"REDACT_FULL\"\n");
        }
    }
    doc
}
