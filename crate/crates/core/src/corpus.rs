//! Functionality-test corpora: loading, validation, indexing and minimal sets.
//!
//! Three CSV layouts are understood:
//!
//! * `hatecheck_csv`: `functionality, case_id, test_case, label_gold, target_ident`
//!   plus a template id column (`case_templ_id`, or `templ_id` as shipped in the
//!   public release).
//! * `gpt_hatecheck_csv`: `case_id, functionality, target_ident, test_case, label_gold`.
//! * `generic_csv`: `case_id, text, identity, label` and optionally
//!   `functionality, template_id, dataset`.
//!
//! Rows failing validation abort the load; an audit never runs on a partial corpus.

use std::collections::{BTreeMap, HashMap};
use std::fmt;
use std::fs::File;
use std::io::{Read, Write};
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Deserializer, Serialize, Serializer};
use thiserror::Error;

/// Identity tag used for rows whose functionality targets no protected group.
pub const NO_IDENTITY: &str = "none";

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("missing required column `{column}`")]
    MissingColumn { column: String },
    #[error("row {row}: duplicate case_id `{case_id}`")]
    DuplicateCaseId { row: u64, case_id: String },
    #[error("row {row}: unknown label `{label}`")]
    UnknownLabel { row: u64, label: String },
    #[error("row {row}: label `{label}` contradicts the gold label of functionality `{functionality}`")]
    LabelConflict {
        row: u64,
        label: String,
        functionality: String,
    },
    #[error("row {row}: empty {field}")]
    EmptyField { row: u64, field: &'static str },
    #[error("row {row}: {message}")]
    Malformed { row: u64, message: String },
    #[error("corpus `{0}` has no template metadata")]
    NoTemplates(String),
    #[error("unknown corpus format `{0}`")]
    UnknownFormat(String),
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
}

/// Protected group a message refers to.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum TargetIdentity {
    Women,
    TransPeople,
    GayPeople,
    BlackPeople,
    DisabledPeople,
    Muslims,
    Immigrants,
    /// Free-form tag for generic corpora; `Other("none")` marks rows without a target.
    Other(String),
}

impl TargetIdentity {
    pub const NAMED: [TargetIdentity; 7] = [
        TargetIdentity::Women,
        TargetIdentity::TransPeople,
        TargetIdentity::GayPeople,
        TargetIdentity::BlackPeople,
        TargetIdentity::DisabledPeople,
        TargetIdentity::Muslims,
        TargetIdentity::Immigrants,
    ];

    pub fn none() -> Self {
        TargetIdentity::Other(NO_IDENTITY.to_string())
    }

    pub fn is_named(&self) -> bool {
        !matches!(self, TargetIdentity::Other(_))
    }

    pub fn is_none(&self) -> bool {
        matches!(self, TargetIdentity::Other(t) if t == NO_IDENTITY)
    }

    /// Canonical string substituted into hypotheses and prompts.
    pub fn surface(&self) -> &str {
        match self {
            TargetIdentity::Women => "women",
            TargetIdentity::TransPeople => "trans people",
            TargetIdentity::GayPeople => "gay people",
            TargetIdentity::BlackPeople => "black people",
            TargetIdentity::DisabledPeople => "disabled people",
            TargetIdentity::Muslims => "Muslims",
            TargetIdentity::Immigrants => "immigrants",
            TargetIdentity::Other(tag) => tag,
        }
    }

    /// Parses dataset spellings. Empty cells and `nan` map to `Other("none")`;
    /// anything unrecognised is kept verbatim as `Other`.
    pub fn parse(raw: &str) -> Self {
        let trimmed = raw.trim();
        let lower = trimmed.to_lowercase();
        match lower.as_str() {
            "" | "nan" | "none" | "null" => TargetIdentity::none(),
            "women" | "woman" => TargetIdentity::Women,
            "trans people" | "trans" | "trans ppl." | "transgender people" => {
                TargetIdentity::TransPeople
            }
            "gay people" | "gays" | "gay" | "gay ppl." => TargetIdentity::GayPeople,
            "black people" | "black" | "black ppl." => TargetIdentity::BlackPeople,
            "disabled people" | "disabled" | "disabled ppl." => TargetIdentity::DisabledPeople,
            "muslims" | "muslim" => TargetIdentity::Muslims,
            "immigrants" | "immigrant" => TargetIdentity::Immigrants,
            _ => TargetIdentity::Other(trimmed.to_string()),
        }
    }
}

impl fmt::Display for TargetIdentity {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.surface())
    }
}

impl Serialize for TargetIdentity {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(self.surface())
    }
}

impl<'de> Deserialize<'de> for TargetIdentity {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        Ok(TargetIdentity::parse(&s))
    }
}

/// Gold hatefulness label.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Gold {
    Hateful,
    NonHateful,
}

impl Gold {
    pub fn as_str(self) -> &'static str {
        match self {
            Gold::Hateful => "hateful",
            Gold::NonHateful => "non-hateful",
        }
    }

    pub fn is_hateful(self) -> bool {
        self == Gold::Hateful
    }
}

impl fmt::Display for Gold {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Gold {
    type Err = ();

    fn from_str(s: &str) -> Result<Self, ()> {
        match s.trim().to_lowercase().replace('_', "-").as_str() {
            "hateful" | "hate" | "1" | "true" => Ok(Gold::Hateful),
            "non-hateful" | "nonhateful" | "non-hate" | "not hateful" | "0" | "false" => {
                Ok(Gold::NonHateful)
            }
            _ => Err(()),
        }
    }
}

/// Static facts about one of the 24 functionalities (plus the spelling variants).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Functionality {
    /// 1..=24 for the shared functionalities, 25..=29 for spelling variations.
    pub number: u8,
    pub code: &'static str,
    pub gold: Gold,
    pub has_target: bool,
}

impl Functionality {
    pub fn is_slur(&self) -> bool {
        matches!(self.number, 7..=9)
    }
}

const FUNCTIONALITIES: [Functionality; 29] = {
    use Gold::{Hateful as H, NonHateful as N};
    const fn f(number: u8, code: &'static str, gold: Gold, has_target: bool) -> Functionality {
        Functionality {
            number,
            code,
            gold,
            has_target,
        }
    }
    [
        f(1, "derog_neg_emote_h", H, true),
        f(2, "derog_neg_attrib_h", H, true),
        f(3, "derog_dehum_h", H, true),
        f(4, "derog_impl_h", H, true),
        f(5, "threat_dir_h", H, true),
        f(6, "threat_norm_h", H, true),
        f(7, "slur_h", H, true),
        f(8, "slur_homonym_nh", N, true),
        f(9, "slur_reclaimed_nh", N, true),
        f(10, "profanity_h", H, true),
        f(11, "profanity_nh", N, false),
        f(12, "ref_subs_clause_h", H, true),
        f(13, "ref_subs_sent_h", H, true),
        f(14, "negate_pos_h", H, true),
        f(15, "negate_neg_nh", N, true),
        f(16, "phrase_question_h", H, true),
        f(17, "phrase_opinion_h", H, true),
        f(18, "ident_neutral_nh", N, true),
        f(19, "ident_pos_nh", N, true),
        f(20, "counter_quote_nh", N, true),
        f(21, "counter_ref_nh", N, true),
        f(22, "target_obj_nh", N, false),
        f(23, "target_indiv_nh", N, false),
        f(24, "target_group_nh", N, false),
        f(25, "spell_char_swap_h", H, true),
        f(26, "spell_char_del_h", H, true),
        f(27, "spell_space_del_h", H, true),
        f(28, "spell_space_add_h", H, true),
        f(29, "spell_leet_h", H, true),
    ]
};

/// Looks up a functionality by `F<n>` label or by its dataset code.
pub fn functionality(label: &str) -> Option<Functionality> {
    let t = label.trim();
    if let Some(n) = t
        .strip_prefix('F')
        .or_else(|| t.strip_prefix('f'))
        .and_then(|n| n.parse::<u8>().ok())
    {
        return FUNCTIONALITIES.iter().find(|f| f.number == n && n <= 24).copied();
    }
    let lower = t.to_lowercase();
    FUNCTIONALITIES.iter().find(|f| f.code == lower).copied()
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TestCase {
    pub case_id: String,
    pub text: String,
    pub identity: TargetIdentity,
    pub functionality: String,
    pub gold: Gold,
    pub template_id: Option<String>,
    pub dataset: String,
}

/// The seven instantiations of one template, ordered as [`TargetIdentity::NAMED`].
#[derive(Debug, Clone, PartialEq)]
pub struct TemplateGroup {
    pub template_id: String,
    pub cases: Vec<TestCase>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CorpusFormat {
    HatecheckCsv,
    GptHatecheckCsv,
    GenericCsv,
}

impl FromStr for CorpusFormat {
    type Err = CorpusError;

    fn from_str(s: &str) -> Result<Self, CorpusError> {
        match s {
            "hatecheck_csv" => Ok(CorpusFormat::HatecheckCsv),
            "gpt_hatecheck_csv" => Ok(CorpusFormat::GptHatecheckCsv),
            "generic_csv" => Ok(CorpusFormat::GenericCsv),
            other => Err(CorpusError::UnknownFormat(other.to_string())),
        }
    }
}

/// An immutable, validated collection of test cases.
#[derive(Debug, Clone, PartialEq)]
pub struct Corpus {
    name: String,
    cases: Vec<TestCase>,
    by_id: HashMap<String, usize>,
}

impl Corpus {
    /// Builds a corpus from already-validated cases. Fails on duplicate ids or empty text.
    pub fn new(name: impl Into<String>, cases: Vec<TestCase>) -> Result<Self, CorpusError> {
        let mut by_id = HashMap::with_capacity(cases.len());
        for (i, case) in cases.iter().enumerate() {
            let row = i as u64 + 1;
            if case.text.is_empty() {
                return Err(CorpusError::EmptyField { row, field: "text" });
            }
            if by_id.insert(case.case_id.clone(), i).is_some() {
                return Err(CorpusError::DuplicateCaseId {
                    row,
                    case_id: case.case_id.clone(),
                });
            }
        }
        Ok(Corpus {
            name: name.into(),
            cases,
            by_id,
        })
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn cases(&self) -> &[TestCase] {
        &self.cases
    }

    pub fn len(&self) -> usize {
        self.cases.len()
    }

    pub fn is_empty(&self) -> bool {
        self.cases.is_empty()
    }

    pub fn get(&self, case_id: &str) -> Option<&TestCase> {
        self.by_id.get(case_id).map(|&i| &self.cases[i])
    }

    pub fn by_identity(&self) -> BTreeMap<&TargetIdentity, Vec<&TestCase>> {
        let mut out: BTreeMap<_, Vec<_>> = BTreeMap::new();
        for c in &self.cases {
            out.entry(&c.identity).or_default().push(c);
        }
        out
    }

    pub fn by_functionality(&self) -> BTreeMap<&str, Vec<&TestCase>> {
        let mut out: BTreeMap<_, Vec<_>> = BTreeMap::new();
        for c in &self.cases {
            out.entry(c.functionality.as_str()).or_default().push(c);
        }
        out
    }

    pub fn by_template(&self) -> BTreeMap<&str, Vec<&TestCase>> {
        let mut out: BTreeMap<_, Vec<_>> = BTreeMap::new();
        for c in &self.cases {
            if let Some(t) = c.template_id.as_deref() {
                out.entry(t).or_default().push(c);
            }
        }
        out
    }
}

pub fn load_corpus(path: &Path, format: CorpusFormat) -> Result<Corpus, CorpusError> {
    let file = File::open(path).map_err(|source| CorpusError::Io {
        path: path.display().to_string(),
        source,
    })?;
    let name = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    read_corpus(file, format, &name)
}

struct Columns {
    case_id: usize,
    text: usize,
    identity: usize,
    label: usize,
    functionality: Option<usize>,
    template_id: Option<usize>,
    dataset: Option<usize>,
}

fn column(headers: &csv::StringRecord, names: &[&str]) -> Option<usize> {
    names
        .iter()
        .find_map(|n| headers.iter().position(|h| h.trim() == *n))
}

fn required(headers: &csv::StringRecord, names: &[&str]) -> Result<usize, CorpusError> {
    column(headers, names).ok_or_else(|| CorpusError::MissingColumn {
        column: names[0].to_string(),
    })
}

impl Columns {
    fn resolve(headers: &csv::StringRecord, format: CorpusFormat) -> Result<Self, CorpusError> {
        match format {
            CorpusFormat::HatecheckCsv => Ok(Columns {
                functionality: Some(required(headers, &["functionality"])?),
                case_id: required(headers, &["case_id"])?,
                text: required(headers, &["test_case"])?,
                label: required(headers, &["label_gold"])?,
                identity: required(headers, &["target_ident"])?,
                template_id: Some(required(headers, &["case_templ_id", "templ_id"])?),
                dataset: None,
            }),
            CorpusFormat::GptHatecheckCsv => Ok(Columns {
                case_id: required(headers, &["case_id"])?,
                functionality: Some(required(headers, &["functionality"])?),
                identity: required(headers, &["target_ident"])?,
                text: required(headers, &["test_case"])?,
                label: required(headers, &["label_gold"])?,
                template_id: None,
                dataset: None,
            }),
            CorpusFormat::GenericCsv => Ok(Columns {
                case_id: required(headers, &["case_id"])?,
                text: required(headers, &["text"])?,
                identity: required(headers, &["identity"])?,
                label: required(headers, &["label"])?,
                functionality: column(headers, &["functionality"]),
                template_id: column(headers, &["template_id"]),
                dataset: column(headers, &["dataset"]),
            }),
        }
    }
}

fn non_blank(s: &str) -> Option<String> {
    let t = s.trim();
    (!t.is_empty() && !t.eq_ignore_ascii_case("nan")).then(|| t.to_string())
}

/// Reads a corpus from any CSV source. `name` becomes the corpus name and the
/// default `dataset` tag.
pub fn read_corpus<R: Read>(
    reader: R,
    format: CorpusFormat,
    name: &str,
) -> Result<Corpus, CorpusError> {
    let mut rdr = csv::ReaderBuilder::new().flexible(false).from_reader(reader);
    let headers = rdr.headers()?.clone();
    let cols = Columns::resolve(&headers, format)?;

    let mut cases = Vec::new();
    let mut seen: HashMap<String, ()> = HashMap::new();
    for (i, record) in rdr.records().enumerate() {
        let record = record?;
        let row = i as u64 + 1;
        let field = |idx: usize| record.get(idx).unwrap_or("");

        let case_id = non_blank(field(cols.case_id))
            .ok_or(CorpusError::EmptyField { row, field: "case_id" })?;
        let text = field(cols.text).to_string();
        if text.trim().is_empty() {
            return Err(CorpusError::EmptyField { row, field: "text" });
        }
        let raw_label = field(cols.label);
        let label: Gold = raw_label.parse().map_err(|_| CorpusError::UnknownLabel {
            row,
            label: raw_label.to_string(),
        })?;
        let functionality_label = cols
            .functionality
            .map(|c| field(c).trim().to_string())
            .unwrap_or_default();
        let known = functionality(&functionality_label);
        let gold = match known {
            Some(f) if f.number <= 24 => {
                if f.gold != label {
                    return Err(CorpusError::LabelConflict {
                        row,
                        label: raw_label.to_string(),
                        functionality: functionality_label,
                    });
                }
                f.gold
            }
            _ => label,
        };
        let mut identity = TargetIdentity::parse(field(cols.identity));
        if known.is_some_and(|f| !f.has_target) {
            identity = TargetIdentity::none();
        }
        let template_id = cols.template_id.and_then(|c| non_blank(field(c)));
        let dataset = cols
            .dataset
            .and_then(|c| non_blank(field(c)))
            .unwrap_or_else(|| name.to_string());

        if seen.insert(case_id.clone(), ()).is_some() {
            return Err(CorpusError::DuplicateCaseId { row, case_id });
        }
        cases.push(TestCase {
            case_id,
            text,
            identity,
            functionality: functionality_label,
            gold,
            template_id,
            dataset,
        });
    }
    Corpus::new(name, cases)
}

/// Writes the corpus in `generic_csv` layout (with the optional columns).
pub fn write_generic_csv<W: Write>(corpus: &Corpus, writer: W) -> Result<(), CorpusError> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record([
        "case_id",
        "text",
        "identity",
        "label",
        "functionality",
        "template_id",
        "dataset",
    ])?;
    for c in corpus.cases() {
        w.write_record([
            c.case_id.as_str(),
            c.text.as_str(),
            c.identity.surface(),
            c.gold.as_str(),
            c.functionality.as_str(),
            c.template_id.as_deref().unwrap_or(""),
            c.dataset.as_str(),
        ])?;
    }
    w.flush().map_err(|source| CorpusError::Io {
        path: "<writer>".into(),
        source,
    })?;
    Ok(())
}

/// Numeric ids sort by value, everything else lexicographically after them.
fn template_order(a: &str, b: &str) -> std::cmp::Ordering {
    match (a.parse::<u64>(), b.parse::<u64>()) {
        (Ok(x), Ok(y)) => x.cmp(&y),
        (Ok(_), Err(_)) => std::cmp::Ordering::Less,
        (Err(_), Ok(_)) => std::cmp::Ordering::Greater,
        (Err(_), Err(_)) => a.cmp(b),
    }
}

/// Groups template instantiations into minimal sets of exactly seven cases, one
/// per named identity. Slur functionalities (F7–F9) and templates with mixed or
/// missing identities are dropped.
pub fn build_minimal_sets(corpus: &Corpus) -> Result<Vec<TemplateGroup>, CorpusError> {
    let by_template = corpus.by_template();
    if by_template.is_empty() {
        return Err(CorpusError::NoTemplates(corpus.name().to_string()));
    }
    let mut groups = Vec::new();
    for (template_id, cases) in by_template {
        if cases.len() != TargetIdentity::NAMED.len() {
            continue;
        }
        if cases
            .iter()
            .any(|c| functionality(&c.functionality).is_some_and(|f| f.is_slur()))
        {
            continue;
        }
        let gold = cases[0].gold;
        if cases.iter().any(|c| c.gold != gold) {
            continue;
        }
        let mut ordered = Vec::with_capacity(7);
        for ident in &TargetIdentity::NAMED {
            match cases.iter().filter(|c| &c.identity == ident).collect::<Vec<_>>()[..] {
                [one] => ordered.push((*one).clone()),
                _ => break,
            }
        }
        if ordered.len() == TargetIdentity::NAMED.len() {
            groups.push(TemplateGroup {
                template_id: template_id.to_string(),
                cases: ordered,
            });
        }
    }
    groups.sort_by(|a, b| template_order(&a.template_id, &b.template_id));
    Ok(groups)
}

/// Case counts per (identity, gold), excluding rows without a target identity.
pub fn corpus_stats(corpus: &Corpus) -> BTreeMap<(TargetIdentity, Gold), usize> {
    let mut out = BTreeMap::new();
    for c in corpus.cases().iter().filter(|c| !c.identity.is_none()) {
        *out.entry((c.identity.clone(), c.gold)).or_insert(0) += 1;
    }
    out
}

/// Per-identity totals collapsed over gold labels.
pub fn identity_totals(corpus: &Corpus) -> BTreeMap<TargetIdentity, usize> {
    let mut out = BTreeMap::new();
    for ((ident, _), n) in corpus_stats(corpus) {
        *out.entry(ident).or_insert(0) += n;
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    const GENERIC: &str = "case_id,text,identity,label,functionality,template_id\n\
        a1,I hate women.,women,hateful,F1,t1\n\
        a2,\"Muslims are great, really\",Muslims,non-hateful,F19,\n\
        a3,You stupid pencil,none,non-hateful,F22,\n";

    #[test]
    fn loads_three_row_fixture() {
        let c = read_corpus(GENERIC.as_bytes(), CorpusFormat::GenericCsv, "fx").unwrap();
        assert_eq!(c.len(), 3);
        let a1 = c.get("a1").unwrap();
        assert_eq!(a1.identity, TargetIdentity::Women);
        assert_eq!(a1.gold, Gold::Hateful);
        assert_eq!(a1.template_id.as_deref(), Some("t1"));
        assert_eq!(a1.dataset, "fx");
        let a2 = c.get("a2").unwrap();
        assert_eq!(a2.text, "Muslims are great, really");
        assert_eq!(a2.template_id, None);
        assert!(c.get("a3").unwrap().identity.is_none());
    }

    #[test]
    fn empty_file_with_header_is_empty_corpus() {
        let c = read_corpus(
            "case_id,text,identity,label\n".as_bytes(),
            CorpusFormat::GenericCsv,
            "e",
        )
        .unwrap();
        assert!(c.is_empty());
        assert!(corpus_stats(&c).is_empty());
    }

    #[test]
    fn missing_column_is_reported() {
        let err = read_corpus(
            "case_id,text,label\n1,x,hateful\n".as_bytes(),
            CorpusFormat::GenericCsv,
            "e",
        )
        .unwrap_err();
        assert!(matches!(err, CorpusError::MissingColumn { column } if column == "identity"));
    }

    #[test]
    fn duplicate_case_id_names_row() {
        let csv = "case_id,text,identity,label\n1,x,women,hateful\n1,y,women,hateful\n";
        let err = read_corpus(csv.as_bytes(), CorpusFormat::GenericCsv, "e").unwrap_err();
        assert!(matches!(err, CorpusError::DuplicateCaseId { row: 2, .. }));
    }

    #[test]
    fn unknown_label_names_row() {
        let csv = "case_id,text,identity,label\n1,x,women,hateful\n2,y,women,maybe\n";
        let err = read_corpus(csv.as_bytes(), CorpusFormat::GenericCsv, "e").unwrap_err();
        assert!(matches!(err, CorpusError::UnknownLabel { row: 2, ref label } if label == "maybe"));
    }

    #[test]
    fn gold_must_match_functionality() {
        let csv = "case_id,text,identity,label,functionality\n1,x,women,non-hateful,F1\n";
        let err = read_corpus(csv.as_bytes(), CorpusFormat::GenericCsv, "e").unwrap_err();
        assert!(matches!(err, CorpusError::LabelConflict { row: 1, .. }));
    }

    #[test]
    fn hatecheck_layout_with_public_column_names() {
        let csv = ",functionality,case_id,test_case,label_gold,target_ident,templ_id\n\
            0,derog_neg_emote_h,1,I hate women.,hateful,women,1\n\
            1,target_obj_nh,2,I really can't stand cauliflower.,non-hateful,,900\n";
        let c = read_corpus(csv.as_bytes(), CorpusFormat::HatecheckCsv, "hc").unwrap();
        assert_eq!(c.get("1").unwrap().identity, TargetIdentity::Women);
        assert!(c.get("2").unwrap().identity.is_none());
        assert_eq!(c.get("2").unwrap().template_id.as_deref(), Some("900"));
    }

    #[test]
    fn functionality_lookup_accepts_codes_and_numbers() {
        assert_eq!(functionality("F7").unwrap().code, "slur_h");
        assert_eq!(functionality("slur_reclaimed_nh").unwrap().number, 9);
        assert!(functionality("F25").is_none());
        assert_eq!(functionality("spell_leet_h").unwrap().gold, Gold::Hateful);
        assert!(!functionality("F23").unwrap().has_target);
    }

    #[test]
    fn identity_aliases() {
        assert_eq!(TargetIdentity::parse("Trans"), TargetIdentity::TransPeople);
        assert_eq!(TargetIdentity::parse("muslims"), TargetIdentity::Muslims);
        assert_eq!(
            TargetIdentity::parse("Jewish"),
            TargetIdentity::Other("Jewish".into())
        );
        assert!(TargetIdentity::parse("").is_none());
        for t in TargetIdentity::NAMED {
            assert_eq!(TargetIdentity::parse(t.surface()), t);
        }
    }

    fn case(id: &str, ident: TargetIdentity, func: &str, templ: Option<&str>) -> TestCase {
        let gold = functionality(func).map(|f| f.gold).unwrap_or(Gold::Hateful);
        TestCase {
            case_id: id.into(),
            text: format!("text {id}"),
            identity: ident,
            functionality: func.into(),
            gold,
            template_id: templ.map(str::to_string),
            dataset: "fx".into(),
        }
    }

    fn template(id: &str, func: &str, idents: &[TargetIdentity]) -> Vec<TestCase> {
        idents
            .iter()
            .enumerate()
            .map(|(i, t)| case(&format!("{id}-{i}"), t.clone(), func, Some(id)))
            .collect()
    }

    #[test]
    fn minimal_sets_filter_rules() {
        let all = TargetIdentity::NAMED.to_vec();
        let mut cases = Vec::new();
        cases.extend(template("10", "F1", &all));
        cases.extend(template("2", "F19", &all));
        cases.extend(template("3", "F7", &all));
        cases.extend(template("4", "F4", &all[..6]));
        let mut dup = all.clone();
        dup[6] = TargetIdentity::Women;
        cases.extend(template("5", "F2", &dup));
        cases.extend(template("6", "F3", &all));
        let corpus = Corpus::new("fx", cases).unwrap();

        // Oracle: keep templates with 7 distinct named identities, non-slur.
        let groups = build_minimal_sets(&corpus).unwrap();
        let ids: Vec<_> = groups.iter().map(|g| g.template_id.as_str()).collect();
        assert_eq!(ids, ["2", "6", "10"]);
        for g in &groups {
            let idents: Vec<_> = g.cases.iter().map(|c| c.identity.clone()).collect();
            assert_eq!(idents, TargetIdentity::NAMED.to_vec());
        }
    }

    #[test]
    fn no_templates_is_an_error() {
        let corpus = Corpus::new("fx", vec![case("a", TargetIdentity::Women, "F1", None)]).unwrap();
        assert!(matches!(
            build_minimal_sets(&corpus),
            Err(CorpusError::NoTemplates(_))
        ));
    }

    #[test]
    fn stats_hand_tally() {
        use TargetIdentity::*;
        let spec = [
            (Women, "F1"),
            (Women, "F1"),
            (Women, "F19"),
            (Muslims, "F2"),
            (Muslims, "F18"),
            (Muslims, "F18"),
            (Immigrants, "F5"),
            (TargetIdentity::none(), "F22"),
            (TargetIdentity::none(), "F23"),
            (GayPeople, "F20"),
        ];
        let cases = spec
            .iter()
            .enumerate()
            .map(|(i, (t, f))| case(&i.to_string(), t.clone(), f, None))
            .collect();
        let corpus = Corpus::new("fx", cases).unwrap();
        let stats = corpus_stats(&corpus);
        assert_eq!(stats[&(Women, Gold::Hateful)], 2);
        assert_eq!(stats[&(Women, Gold::NonHateful)], 1);
        assert_eq!(stats[&(Muslims, Gold::Hateful)], 1);
        assert_eq!(stats[&(Muslims, Gold::NonHateful)], 2);
        assert_eq!(stats[&(Immigrants, Gold::Hateful)], 1);
        assert_eq!(stats[&(GayPeople, Gold::NonHateful)], 1);
        assert_eq!(stats.values().sum::<usize>(), 8);
        assert_eq!(identity_totals(&corpus)[&Muslims], 3);
    }
}

#[cfg(test)]
mod props {
    use super::*;
    use proptest::prelude::*;

    fn case() -> impl Strategy<Value = TestCase> {
        (
            "[a-zA-Z][a-zA-Z ,.\"'!?]{0,38}[a-z.!?]",
            0usize..8,
            any::<bool>(),
            "[a-z_]{1,12}",
            proptest::option::of("[0-9]{1,4}"),
        )
            .prop_map(|(text, ident, hateful, func, templ)| TestCase {
                case_id: String::new(),
                text,
                identity: TargetIdentity::NAMED
                    .get(ident)
                    .cloned()
                    .unwrap_or_else(TargetIdentity::none),
                functionality: func,
                gold: if hateful { Gold::Hateful } else { Gold::NonHateful },
                template_id: templ,
                dataset: "p".into(),
            })
    }

    proptest! {
        #[test]
        fn generic_csv_round_trips(cases in proptest::collection::vec(case(), 1..30)) {
            let cases: Vec<TestCase> = cases
                .into_iter()
                .enumerate()
                .map(|(i, mut c)| { c.case_id = format!("c{i}"); c })
                .collect();
            let corpus = Corpus::new("p", cases).unwrap();
            let mut buf = Vec::new();
            write_generic_csv(&corpus, &mut buf).unwrap();
            let back = read_corpus(buf.as_slice(), CorpusFormat::GenericCsv, "p").unwrap();
            prop_assert_eq!(back.cases(), corpus.cases());
        }
    }
}
