//! Query decoupling: the frame-free first model call that turns a question
//! into typed retrieval requests, and the parsing and entity filtering applied
//! to its reply.

use std::collections::BTreeSet;
use std::collections::HashSet;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

use crate::templates::TemplateSet;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Query {
    pub question: String,
    #[serde(default)]
    pub options: Vec<String>,
    #[serde(default)]
    pub video_id: String,
}

impl Query {
    pub fn new(question: impl Into<String>) -> Self {
        Self { question: question.into(), options: Vec::new(), video_id: String::new() }
    }

    pub fn with_options<S: Into<String>>(mut self, options: impl IntoIterator<Item = S>) -> Self {
        self.options = options.into_iter().map(Into::into).collect();
        self
    }

    pub fn is_multiple_choice(&self) -> bool {
        !self.options.is_empty()
    }

    pub fn validate(&self) -> Result<(), DecoupleError> {
        if self.question.trim().is_empty() {
            return Err(DecoupleError::EmptyQuestion);
        }
        Ok(())
    }

    /// Letters the options answer to: an explicit `A.`/`A)`/`(A)` prefix when
    /// present, otherwise the option's position (A, B, C...).
    pub fn option_letters(&self) -> Vec<char> {
        self.options
            .iter()
            .enumerate()
            .map(|(i, o)| option_prefix_letter(o).unwrap_or((b'A' + (i as u8 % 26)) as char))
            .collect()
    }
}

fn option_prefix_letter(option: &str) -> Option<char> {
    let s = option.trim_start().trim_start_matches('(');
    let mut chars = s.chars();
    let c = chars.next()?;
    let next = chars.next();
    (c.is_ascii_uppercase() && matches!(next, Some('.' | ')' | ':') | None)).then_some(c)
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum DecoupleError {
    #[error("question is empty")]
    EmptyQuestion,
    #[error("no JSON object could be recovered from the model reply")]
    UnparseableReply,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DetType {
    Location,
    Number,
    Relation,
}

impl DetType {
    pub fn parse(s: &str) -> Option<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "location" => Some(Self::Location),
            "number" => Some(Self::Number),
            "relation" => Some(Self::Relation),
            _ => None,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Self::Location => "location",
            Self::Number => "number",
            Self::Relation => "relation",
        }
    }
}

/// Parsed retrieval requests. `None` / empty means the path is not needed.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct RetrievalRequestSet {
    pub asr_request: Option<String>,
    pub ocr_request: Option<String>,
    pub det_entities: Vec<String>,
    pub det_types: BTreeSet<DetType>,
}

impl RetrievalRequestSet {
    pub fn is_empty(&self) -> bool {
        self.asr_request.is_none() && self.ocr_request.is_none() && self.det_entities.is_empty()
    }

    /// The reply JSON document this set corresponds to (`ASR`, `DET`, `TYPE`
    /// and, when set, `OCR`).
    pub fn to_json(&self) -> Value {
        let mut m = Map::new();
        m.insert("ASR".into(), self.asr_request.clone().map_or(Value::Null, Value::String));
        m.insert(
            "DET".into(),
            if self.det_entities.is_empty() {
                Value::Null
            } else {
                Value::Array(self.det_entities.iter().cloned().map(Value::String).collect())
            },
        );
        m.insert(
            "TYPE".into(),
            if self.det_types.is_empty() {
                Value::Null
            } else {
                Value::Array(self.det_types.iter().map(|t| Value::String(t.as_str().into())).collect())
            },
        );
        if let Some(o) = &self.ocr_request {
            m.insert("OCR".into(), Value::String(o.clone()));
        }
        Value::Object(m)
    }
}

impl Serialize for RetrievalRequestSet {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        self.to_json().serialize(s)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct DecouplePrompt {
    pub template_id: String,
    pub rendered: String,
}

pub fn render_options_block(options: &[String]) -> String {
    if options.is_empty() {
        return String::new();
    }
    let mut s = String::from("Options:\n");
    for (i, o) in options.iter().enumerate() {
        if option_prefix_letter(o).is_none() {
            s.push((b'A' + (i as u8 % 26)) as char);
            s.push_str(". ");
        }
        s.push_str(o);
        s.push('\n');
    }
    s
}

pub fn render_decouple_prompt(templates: &TemplateSet, q: &Query) -> DecouplePrompt {
    let t = if q.is_multiple_choice() { &templates.decouple_mc } else { &templates.decouple_open };
    let options = render_options_block(&q.options);
    DecouplePrompt {
        template_id: t.id.clone(),
        rendered: t.render(&[("question", &q.question), ("options_block", &options)]),
    }
}

/// Recovers the first JSON object in arbitrary model text, tolerating code
/// fences and surrounding prose.
fn first_json_object(raw: &str) -> Option<Map<String, Value>> {
    for (pos, _) in raw.match_indices('{') {
        let mut stream = serde_json::Deserializer::from_str(&raw[pos..]).into_iter::<Value>();
        if let Some(Ok(Value::Object(m))) = stream.next() {
            return Some(m);
        }
    }
    None
}

fn is_null_marker(s: &str) -> bool {
    let t = s.trim();
    t.is_empty() || t.eq_ignore_ascii_case("null") || t.eq_ignore_ascii_case("none") || t.eq_ignore_ascii_case("n/a")
}

fn text_field(v: Option<&Value>) -> Option<String> {
    match v? {
        Value::String(s) if !is_null_marker(s) => Some(s.trim().to_string()),
        Value::Array(items) => {
            let parts: Vec<String> = items
                .iter()
                .filter_map(|i| i.as_str())
                .filter(|s| !is_null_marker(s))
                .map(|s| s.trim().to_string())
                .collect();
            (!parts.is_empty()).then(|| parts.join("; "))
        }
        _ => None,
    }
}

fn list_field(v: Option<&Value>) -> Vec<String> {
    let raw: Vec<String> = match v {
        Some(Value::String(s)) => s.split(',').map(str::to_string).collect(),
        Some(Value::Array(items)) => items
            .iter()
            .filter_map(|i| match i {
                Value::String(s) => Some(s.clone()),
                Value::Number(n) => Some(n.to_string()),
                _ => None,
            })
            .collect(),
        _ => Vec::new(),
    };
    raw.into_iter().map(|s| s.trim().to_string()).filter(|s| !is_null_marker(s)).collect()
}

fn lookup<'a>(m: &'a Map<String, Value>, key: &str) -> Option<&'a Value> {
    m.iter().find(|(k, _)| k.trim().eq_ignore_ascii_case(key)).map(|(_, v)| v)
}

/// Maps a model reply to a request set without entity filtering.
pub fn parse_reply(raw_reply: &str) -> Result<RetrievalRequestSet, DecoupleError> {
    let m = first_json_object(raw_reply).ok_or(DecoupleError::UnparseableReply)?;
    let det_types = list_field(lookup(&m, "TYPE")).iter().filter_map(|s| DetType::parse(s)).collect();
    let mut det_entities = Vec::new();
    for e in list_field(lookup(&m, "DET")) {
        if !det_entities.contains(&e) {
            det_entities.push(e);
        }
    }
    Ok(RetrievalRequestSet {
        asr_request: text_field(lookup(&m, "ASR")),
        ocr_request: text_field(lookup(&m, "OCR")),
        det_entities,
        det_types,
    })
}

/// Parses the reply and filters detection entities. A set whose entities were
/// all filtered away also loses its detection types.
pub fn parse_requests(raw_reply: &str, filter: &EntityFilter) -> Result<RetrievalRequestSet, DecoupleError> {
    let mut set = parse_reply(raw_reply)?;
    set.det_entities = filter.filter(&set.det_entities);
    if set.det_entities.is_empty() {
        set.det_types.clear();
    }
    Ok(set)
}

pub fn to_clip_prompts(entities: &[String]) -> Vec<String> {
    entities.iter().map(|e| format!("A picture of {e}")).collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Pos {
    Noun,
    Adjective,
    Verb,
    Participle,
    Adverb,
    Determiner,
    Pronoun,
    Preposition,
    Conjunction,
    Numeral,
}

/// Word-class tagging for entity phrases.
pub trait PosTagger: Send + Sync {
    fn tag(&self, words: &[&str]) -> Vec<Pos>;
}

/// Closed-class word lists plus suffix heuristics; words matching nothing
/// are treated as nouns.
#[derive(Debug, Default, Clone, Copy)]
pub struct RuleTagger;

const DETERMINERS: &[&str] = &[
    "a", "an", "the", "this", "that", "these", "those", "some", "any", "each", "every", "all", "both",
    "either", "neither", "no", "my", "your", "his", "her", "its", "our", "their", "another", "such",
];
const PRONOUNS: &[&str] = &[
    "i", "you", "he", "she", "it", "we", "they", "me", "him", "us", "them", "myself", "yourself", "himself",
    "herself", "itself", "ourselves", "themselves", "who", "whom", "whose", "what", "which", "someone",
    "somebody", "something", "anyone", "anybody", "anything", "everyone", "everybody", "everything",
    "nothing", "nobody", "one", "mine", "yours", "hers", "ours", "theirs",
];
const PREPOSITIONS: &[&str] = &[
    "in", "on", "at", "by", "for", "with", "about", "against", "between", "into", "through", "during",
    "before", "after", "above", "below", "to", "from", "up", "down", "of", "off", "over", "under", "near",
    "behind", "beside", "besides", "beneath", "across", "along", "among", "around", "inside", "outside",
    "within", "without", "toward", "towards", "upon", "via", "per", "than", "like",
];
const CONJUNCTIONS: &[&str] = &[
    "and", "or", "but", "nor", "so", "yet", "if", "because", "while", "although", "though", "unless",
    "whether", "whereas",
];
const VERBS: &[&str] = &[
    "is", "are", "was", "were", "be", "been", "being", "am", "do", "does", "did", "has", "have", "had", "can",
    "could", "will", "would", "shall", "should", "may", "might", "must", "said", "says", "say", "went", "go",
    "goes", "made", "took", "take", "saw", "see", "came", "come", "got", "get", "gave", "give", "knew", "know",
    "think", "thought", "want", "seem", "seems", "tell", "told", "ask", "become", "became", "happen",
    "happens", "explain", "explains", "describe", "describes", "mention", "mentions", "appear", "appears",
];
const ADVERBS: &[&str] = &[
    "very", "too", "also", "quite", "rather", "just", "only", "already", "still", "often", "always", "never",
    "sometimes", "soon", "now", "then", "here", "there", "almost", "again", "ever", "even", "not", "how",
    "why", "when", "where", "perhaps", "maybe", "together", "away", "else",
];
const ADJECTIVES: &[&str] = &[
    "red", "blue", "green", "yellow", "black", "white", "gray", "grey", "orange", "purple", "pink", "brown",
    "golden", "silver", "big", "small", "large", "little", "tall", "short", "long", "huge", "tiny", "old",
    "young", "new", "round", "square", "bright", "dark", "open", "closed", "empty", "full", "hot", "cold",
    "wet", "dry", "heavy", "happy", "sad", "fast", "slow", "left", "right", "upper", "lower", "main",
    "wooden", "striped", "plastic", "high", "low", "wide", "narrow", "thick", "thin", "clean", "dirty",
    "male", "female", "first", "second", "third", "last", "next", "other", "same", "different", "many",
    "few", "several", "more", "most", "less", "least", "much", "good", "bad", "great", "best", "worst",
];
const LY_NOUNS: &[&str] = &[
    "family", "fly", "belly", "jelly", "lily", "butterfly", "bully", "ally", "rally", "supply", "dragonfly",
    "firefly", "assembly", "anomaly", "italy", "july", "trolley", "pulley", "alley", "valley", "volleyball",
];
const LY_ADJECTIVES: &[&str] = &[
    "friendly", "lovely", "ugly", "silly", "curly", "early", "elderly", "lonely", "holy", "oily", "hilly",
    "chilly", "daily", "weekly", "monthly", "yearly", "wooly", "woolly", "lively", "likely", "costly",
];
const IC_NOUNS: &[&str] = &[
    "music", "traffic", "picnic", "clinic", "logic", "magic", "mechanic", "comic", "topic", "mosaic",
    "fabric", "brick", "stick", "tunic", "attic", "arsenic", "garlic", "republic", "public", "graphic",
];
const NUMERALS: &[&str] = &[
    "zero", "two", "three", "four", "five", "six", "seven", "eight", "nine", "ten", "eleven", "twelve",
    "twenty", "hundred", "thousand",
];

impl RuleTagger {
    pub fn tag_word(&self, word: &str) -> Pos {
        let w = word.to_ascii_lowercase();
        let w = w.as_str();
        let is = |list: &[&str]| list.contains(&w);
        if w.chars().all(|c| c.is_ascii_digit()) {
            return Pos::Numeral;
        }
        if is(DETERMINERS) {
            Pos::Determiner
        } else if is(PRONOUNS) {
            Pos::Pronoun
        } else if is(PREPOSITIONS) {
            Pos::Preposition
        } else if is(CONJUNCTIONS) {
            Pos::Conjunction
        } else if is(NUMERALS) {
            Pos::Numeral
        } else if is(VERBS) {
            Pos::Verb
        } else if is(ADVERBS) {
            Pos::Adverb
        } else if is(ADJECTIVES) || is(LY_ADJECTIVES) {
            Pos::Adjective
        } else if is(LY_NOUNS) || is(IC_NOUNS) {
            Pos::Noun
        } else if w.len() > 4 && w.ends_with("ly") {
            Pos::Adverb
        } else if w.len() > 4 && (w.ends_with("ing") || w.ends_with("ed")) {
            Pos::Participle
        } else if w.len() > 4
            && ["ous", "ful", "ive", "able", "ible", "less", "ish", "ic"].iter().any(|s| w.ends_with(s))
        {
            Pos::Adjective
        } else {
            Pos::Noun
        }
    }
}

impl PosTagger for RuleTagger {
    fn tag(&self, words: &[&str]) -> Vec<Pos> {
        words.iter().map(|w| self.tag_word(w)).collect()
    }
}

const BUILTIN_ABSTRACT_TERMS: &str = include_str!("../config/abstract_terms.txt");
/// Longest accepted phrase: up to three modifiers in front of the head noun.
const MAX_PHRASE_WORDS: usize = 4;

/// Keeps detection requests that name concrete, visible things: a single
/// noun, or a noun head preceded by adjective / noun modifiers.
pub struct EntityFilter {
    tagger: Box<dyn PosTagger>,
    abstract_terms: HashSet<String>,
}

impl std::fmt::Debug for EntityFilter {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("EntityFilter").field("abstract_terms", &self.abstract_terms.len()).finish()
    }
}

impl Default for EntityFilter {
    fn default() -> Self {
        Self::new(Box::new(RuleTagger), parse_lexicon(BUILTIN_ABSTRACT_TERMS))
    }
}

fn parse_lexicon(text: &str) -> HashSet<String> {
    text.lines()
        .map(|l| l.trim())
        .filter(|l| !l.is_empty() && !l.starts_with('#'))
        .map(normalize_phrase)
        .collect()
}

/// Lowercases, collapses whitespace, trims surrounding punctuation and drops a
/// leading article.
pub fn normalize_phrase(phrase: &str) -> String {
    let lowered = phrase.to_lowercase();
    let mut words: Vec<&str> = lowered
        .split_whitespace()
        .map(|w| w.trim_matches(|c: char| !c.is_alphanumeric() && c != '-'))
        .filter(|w| !w.is_empty())
        .collect();
    if matches!(words.first(), Some(&("a" | "an" | "the"))) && words.len() > 1 {
        words.remove(0);
    }
    words.join(" ")
}

impl EntityFilter {
    pub fn new(tagger: Box<dyn PosTagger>, abstract_terms: HashSet<String>) -> Self {
        Self { tagger, abstract_terms }
    }

    pub fn with_lexicon_file(tagger: Box<dyn PosTagger>, path: &Path) -> std::io::Result<Self> {
        Ok(Self::new(tagger, parse_lexicon(&fs::read_to_string(path)?)))
    }

    pub fn accepts(&self, normalized: &str) -> bool {
        let words: Vec<&str> = normalized.split(' ').filter(|w| !w.is_empty()).collect();
        if words.is_empty() || words.len() > MAX_PHRASE_WORDS {
            return false;
        }
        if self.abstract_terms.contains(normalized) || self.abstract_terms.contains(*words.last().unwrap()) {
            return false;
        }
        let tags = self.tagger.tag(&words);
        let (head, modifiers) = tags.split_last().expect("non-empty");
        *head == Pos::Noun
            && modifiers.iter().all(|p| matches!(p, Pos::Adjective | Pos::Noun | Pos::Participle))
    }

    /// Order-preserving, deduplicated subset of `phrases` (after
    /// normalization) that name concrete entities.
    pub fn filter(&self, phrases: &[String]) -> Vec<String> {
        let mut out: Vec<String> = Vec::new();
        for p in phrases {
            let n = normalize_phrase(p);
            if !out.contains(&n) && self.accepts(&n) {
                out.push(n);
            }
        }
        out
    }
}
