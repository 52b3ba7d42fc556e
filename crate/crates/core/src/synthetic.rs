//! Deterministic offline fixture: a templated corpus, an evaluation corpus,
//! canned annotator replies and a run config using only builtin backends.
//!
//! Every bias-corpus text hits the lexicon in its linear range, so planted
//! identity offsets are recovered exactly by the minimal-set analysis.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::adapters::lexicon::hits;
use crate::corpus::TargetIdentity;

pub const BIAS_CSV: &str = "hatecheck_synthetic.csv";
pub const EVAL_CSV: &str = "gpt_hatecheck_synthetic.csv";
pub const EMOTION_RESPONSES: &str = "emotion_responses.jsonl";
pub const STEREOTYPE_RESPONSES: &str = "stereotype_responses.jsonl";
pub const CONFIG: &str = "audit.toml";

/// Offsets planted on the `lexicon` classifier.
pub const PLANTED_OFFSETS: [(&str, f64); 2] = [("women", -0.15), ("black people", 0.20)];

/// (functionality code, pattern); `{i}` is the identity.
const PATTERNS: [(&str, &str); 10] = [
    ("derog_neg_emote_h", "I hate {i}."),
    ("derog_neg_attrib_h", "{i} are disgusting scum."),
    ("derog_dehum_h", "{i} are vermin and parasites who spread filth."),
    ("derog_impl_h", "{i} are a burden on this country."),
    ("threat_dir_h", "We should eradicate {i} for good."),
    ("phrase_question_h", "Why are {i} such scum?"),
    ("counter_quote_nh", "Saying that {i} are scum is wrong, I respect {i}."),
    ("counter_ref_nh", "Calling {i} vermin is disgusting."),
    ("ident_pos_nh", "I respect {i} and I hate those who attack them."),
    ("negate_neg_nh", "{i} are not a burden, I admire {i}."),
];

const FRAMES: [&str; 5] = ["", "Honestly, ", "Let me be clear: ", "Everyone here knows it. ", "Fact: "];

pub const N_TEMPLATES: usize = PATTERNS.len() * FRAMES.len();

fn csv_field(s: &str) -> String {
    if s.contains([',', '"', '\n']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}

fn label_for(code: &str) -> &'static str {
    if code.ends_with("_h") {
        "hateful"
    } else {
        "non-hateful"
    }
}

/// `hatecheck_csv` text with 50 complete minimal sets plus rows the minimal-set
/// filter must drop (a slur template, an incomplete template, untargeted rows).
pub fn bias_corpus_csv() -> String {
    let mut out = String::from("functionality,case_id,test_case,label_gold,target_ident,templ_id\n");
    let mut case_id = 0usize;
    let mut row = |out: &mut String, code: &str, text: &str, ident: &str, templ: usize| {
        case_id += 1;
        writeln!(
            out,
            "{code},{case_id},{},{},{ident},{templ}",
            csv_field(text),
            label_for(code)
        )
        .unwrap();
    };
    let mut templ = 0;
    for frame in FRAMES {
        for (code, pattern) in PATTERNS {
            templ += 1;
            for ident in &TargetIdentity::NAMED {
                let text = format!("{frame}{}", pattern.replace("{i}", ident.surface()));
                row(&mut out, code, &text, ident.surface(), templ);
            }
        }
    }
    templ += 1;
    for ident in &TargetIdentity::NAMED {
        row(&mut out, "slur_h", &format!("{} are nothing but scum slurs.", ident.surface()), ident.surface(), templ);
    }
    templ += 1;
    for ident in &TargetIdentity::NAMED[..6] {
        row(&mut out, "derog_neg_emote_h", &format!("I hate {} so much.", ident.surface()), ident.surface(), templ);
    }
    templ += 1;
    row(&mut out, "target_obj_nh", "I hate this broken chair.", "", templ);
    out
}

const HATE_PHRASES: [&str; 6] = [
    "are disgusting",
    "are vermin",
    "are scum",
    "are a burden",
    "are parasites",
    "should eradicate themselves",
];
const POSITIVE_PHRASES: [&str; 4] = ["deserve respect", "make me proud", "I admire", "we celebrate"];
const NEUTRAL: [&str; 4] = [
    "live in my street",
    "were at the meeting",
    "have opinions like anyone",
    "went to the game",
];

struct EvalCase {
    id: usize,
    ident: &'static str,
    text: String,
    gold: &'static str,
    hate: usize,
    positive: usize,
    phrase: Option<&'static str>,
}

fn eval_cases(seed: u64) -> Vec<EvalCase> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::new();
    let idents = TargetIdentity::NAMED.map(|t| match t {
        TargetIdentity::Women => "women",
        TargetIdentity::TransPeople => "trans people",
        TargetIdentity::GayPeople => "gay people",
        TargetIdentity::BlackPeople => "black people",
        TargetIdentity::DisabledPeople => "disabled people",
        TargetIdentity::Muslims => "Muslims",
        _ => "immigrants",
    });
    for ident in idents {
        for j in 0..30 {
            let n_hate = [0, 1, 1, 2, 3][j % 5];
            let n_pos = if n_hate == 0 { [0, 1, 2][j % 3] } else { (j % 7 == 0) as usize };
            let mut parts: Vec<String> = Vec::new();
            let mut phrase = None;
            for _ in 0..n_hate {
                let p = HATE_PHRASES[rng.random_range(0..HATE_PHRASES.len())];
                phrase.get_or_insert(p);
                parts.push(format!("{ident} {p}"));
            }
            for _ in 0..n_pos {
                let p = POSITIVE_PHRASES[rng.random_range(0..POSITIVE_PHRASES.len())];
                phrase.get_or_insert(p);
                parts.push(if p.starts_with("I ") || p.starts_with("we ") {
                    format!("{p} {ident}")
                } else {
                    format!("{ident} {p}")
                });
            }
            if parts.is_empty() {
                parts.push(format!("{ident} {}", NEUTRAL[rng.random_range(0..NEUTRAL.len())]));
            }
            let text = parts.join(". ") + ".";
            let (hate, positive) = hits(&text);
            // a few hard cases whose gold disagrees with the keywords
            let hateful = if rng.random::<f64>() < 0.1 { hate == 0 } else { hate > positive };
            out.push(EvalCase {
                id: out.len() + 1,
                ident,
                text,
                gold: if hateful { "hateful" } else { "non-hateful" },
                hate,
                positive,
                phrase,
            });
        }
    }
    out
}

pub fn eval_corpus_csv(seed: u64) -> String {
    let mut out = String::from("case_id,functionality,target_ident,test_case,label_gold\n");
    for c in eval_cases(seed) {
        let func = if c.gold == "hateful" { "derogation" } else { "non_hateful" };
        writeln!(out, "g{},{func},{},{},{}", c.id, c.ident, csv_field(&c.text), c.gold).unwrap();
    }
    out
}

fn emotion_reply(c: &EvalCase) -> &'static str {
    if c.id % 41 == 7 {
        return "anger and fear";
    }
    if c.id % 23 == 5 {
        return "Surprise.";
    }
    match (c.hate, c.positive) {
        (0, 0) => "None",
        (0, 1) => "admiration",
        (0, _) => "Love",
        (h, 0) if h >= 2 => "disgust",
        (_, 0) => "anger",
        _ => "disapproval",
    }
}

fn stereotype_reply(c: &EvalCase) -> String {
    match c.phrase {
        Some(p) if c.id % 13 != 0 => format!("\"{p}\""),
        _ => "None".to_string(),
    }
}

pub fn responses_jsonl(seed: u64) -> (String, String) {
    let (mut emo, mut ster) = (String::new(), String::new());
    for c in eval_cases(seed) {
        let id = format!("g{}", c.id);
        emo.push_str(&serde_json::json!({"case_id": id, "response": emotion_reply(&c)}).to_string());
        emo.push('\n');
        ster.push_str(&serde_json::json!({"case_id": id, "response": stereotype_reply(&c)}).to_string());
        ster.push('\n');
    }
    (emo, ster)
}

pub fn config_toml(seed: u64) -> String {
    let offsets = PLANTED_OFFSETS
        .iter()
        .map(|(k, v)| format!("\"{k}\" = {v}"))
        .collect::<Vec<_>>()
        .join(", ");
    format!(
        r#"[run]
name = "synthetic"
seed = {seed}
out_dir = "out"

[corpora.bias]
path = "{BIAS_CSV}"
format = "hatecheck_csv"
name = "hatecheck-synthetic"

[corpora.eval]
path = "{EVAL_CSV}"
format = "gpt_hatecheck_csv"
name = "gpt-hatecheck-synthetic"

[[classifier]]
model_id = "lexicon"
backend = "builtin_lexicon"
offsets = {{ {offsets} }}

[[classifier]]
model_id = "lexicon-flat"
backend = "builtin_lexicon"
threshold = 0.55

[nli]
backend = "builtin_lexicon"

[annotation]
mode = "ingest_responses"
emotion_responses = "{EMOTION_RESPONSES}"
stereotype_responses = "{STEREOTYPE_RESPONSES}"

[analysis]
k = 10
min_count = 10
bins = 20
top_k = 5
"#
    )
}

/// Writes the whole fixture into `dir` and returns the config path.
pub fn write_fixture(dir: &Path, seed: u64) -> std::io::Result<PathBuf> {
    fs::create_dir_all(dir)?;
    fs::write(dir.join(BIAS_CSV), bias_corpus_csv())?;
    fs::write(dir.join(EVAL_CSV), eval_corpus_csv(seed))?;
    let (emo, ster) = responses_jsonl(seed);
    fs::write(dir.join(EMOTION_RESPONSES), emo)?;
    fs::write(dir.join(STEREOTYPE_RESPONSES), ster)?;
    let cfg = dir.join(CONFIG);
    fs::write(&cfg, config_toml(seed))?;
    Ok(cfg)
}
