use std::collections::HashSet;
use std::sync::LazyLock;

use regex::Regex;

use super::{FeatureSchema, FeatureVector, ProxyModel, BASE_FEATURES};
use crate::error::{Error, Result};
use crate::text::tokens;

fn lexicon(raw: &'static str) -> HashSet<&'static str> {
    raw.lines().map(str::trim).filter(|l| !l.is_empty()).collect()
}

static DOMAIN_LEXICONS: LazyLock<[HashSet<&'static str>; 5]> = LazyLock::new(|| {
    [
        lexicon(include_str!("../../data/lexicon/science.txt")),
        lexicon(include_str!("../../data/lexicon/biology.txt")),
        lexicon(include_str!("../../data/lexicon/law.txt")),
        lexicon(include_str!("../../data/lexicon/history.txt")),
        lexicon(include_str!("../../data/lexicon/medicine.txt")),
    ]
});

static YEAR: LazyLock<Regex> = LazyLock::new(|| Regex::new(r"\b(1[0-9]{3}|20[0-9]{2})\b").unwrap());

const HEDGES: &[&str] = &[
    "might", "could", "probably", "possibly", "perhaps", "maybe", "likely", "may", "seem", "seems", "unclear",
];
const TEMPORAL: &[&str] = &["before", "after", "when", "during", "century", "ago", "until", "since", "year", "years"];
const PRONOUNS: &[&str] = &["he", "she", "they", "his", "her", "him", "them", "their", "i", "we", "my", "our"];
const PAST_TENSE: &[&str] = &[
    "was", "were", "had", "went", "said", "did", "came", "saw", "took", "made", "got", "told", "knew", "thought",
    "found", "began", "left", "felt",
];
const STEP_CONNECTIVES: &[&str] = &["therefore", "thus", "step", "steps", "hence"];

const MAX_CHARS: f64 = 4000.0;
const MAX_SENTENCES: f64 = 32.0;
const MAX_WORD_LEN: f64 = 12.0;
const MAX_NESTING: f64 = 8.0;
const MAX_OPTIONS: f64 = 10.0;
const DOMAIN_SATURATION: f64 = 4.0;

/// Maps a prompt to its feature vector under `schema`.
///
/// The proxy block is filled from `proxy` when given and zero otherwise. The
/// proxy's categories must equal the schema's proxy slots, in order.
pub fn extract_features(prompt: &str, schema: &FeatureSchema, proxy: Option<&ProxyModel>) -> Result<FeatureVector> {
    if prompt.trim().is_empty() {
        return Err(Error::EmptyPrompt);
    }
    let slots = schema.proxy_categories();
    let mut values = base_features(prompt).to_vec();
    match proxy {
        Some(p) => {
            if p.category_names.len() != slots.len()
                || p.category_names.iter().zip(&slots).any(|(a, b)| a != b)
            {
                return Err(Error::FingerprintMismatch(format!(
                    "proxy categories {:?} do not match schema proxy slots {slots:?}",
                    p.category_names
                )));
            }
            values.extend(p.predict_proba(prompt));
        }
        None => values.extend(std::iter::repeat_n(0.0, slots.len())),
    }
    for v in &mut values {
        *v = f64::from(v.clamp(0.0, 1.0) as f32);
    }
    Ok(FeatureVector {
        schema_version: schema.version,
        values,
    })
}

fn flag(b: bool) -> f64 {
    if b {
        1.0
    } else {
        0.0
    }
}

fn base_features(prompt: &str) -> [f64; BASE_FEATURES.len()] {
    let lower = prompt.to_lowercase();
    let toks = tokens(prompt);
    let n_tok = toks.len().max(1) as f64;
    let has_tok = |set: &[&str]| toks.iter().any(|t| set.contains(&t.as_str()));
    let count_tok = |set: &[&str]| toks.iter().filter(|t| set.contains(&t.as_str())).count();

    let n_chars = prompt.chars().count();
    let char_length = (n_chars as f64 / MAX_CHARS).min(1.0);
    let sentences = sentence_count(prompt);
    let mean_word_len = toks.iter().map(|t| t.chars().count()).sum::<usize>() as f64 / n_tok;
    let digits = prompt.chars().filter(char::is_ascii_digit).count();

    let options = option_count(prompt);
    let multiple_choice = options >= 2;
    let scenario = ["what happens next", "most likely", "what will happen", "happens next"]
        .iter()
        .any(|cue| lower.contains(cue));
    let narrative = narrative_opening(&toks);
    let math = arithmetic_operators(prompt) >= 2 || lower.contains("how many") || lower.contains("how much");
    let code = ["def ", "return", "`", "function"].iter().any(|cue| lower.contains(cue));

    let world_knowledge = proper_noun_density(prompt);
    let temporal = YEAR.is_match(prompt) || has_tok(TEMPORAL);
    let domain_hits: Vec<usize> = DOMAIN_LEXICONS
        .iter()
        .map(|lex| toks.iter().filter(|t| lex.contains(t.as_str())).count())
        .collect();

    let trimmed_lower = lower.trim_end();
    let single_char = lower.contains("single choice")
        || lower.contains("single letter")
        || lower.contains("only the letter")
        || trimmed_lower.ends_with("answer:");
    let deterministic = ["without explanation", "print only", "only output", "output only", "just the answer"]
        .iter()
        .any(|cue| lower.contains(cue));

    let passage = passage_before_question(prompt);
    let passage_words = tokens(passage).len();

    let mut out = [0.0; BASE_FEATURES.len()];
    out[0] = char_length;
    out[1] = (sentences as f64).min(MAX_SENTENCES) / MAX_SENTENCES;
    out[2] = (mean_word_len / MAX_WORD_LEN).min(1.0);
    out[3] = digits as f64 / n_chars.max(1) as f64;
    out[4] = (nesting_depth(prompt) as f64).min(MAX_NESTING) / MAX_NESTING;
    out[5] = flag(multiple_choice);
    out[6] = flag(scenario);
    out[7] = flag(narrative);
    out[8] = flag(math);
    out[9] = flag(code);
    out[10] = world_knowledge;
    out[11] = flag(temporal);
    for (slot, hits) in out[12..17].iter_mut().zip(&domain_hits) {
        *slot = (*hits as f64).min(DOMAIN_SATURATION) / DOMAIN_SATURATION;
    }
    out[17] = flag(single_char);
    out[18] = flag(!multiple_choice);
    out[19] = flag(deterministic);
    out[20] = (options as f64).min(MAX_OPTIONS) / MAX_OPTIONS;
    out[21] = count_tok(HEDGES) as f64 / n_tok;
    out[22] = (passage.chars().count() as f64 / MAX_CHARS).min(1.0);
    out[23] = flag(math || has_tok(STEP_CONNECTIVES));
    out[24] = flag(passage_words >= 30);
    out[25] = flag(domain_hits.iter().any(|&h| h > 0));
    out[26] = char_length;
    out[27] = flag(is_english(prompt));
    out
}

/// Runs of `.`, `!` or `?` followed by whitespace or end of text. At least one.
fn sentence_count(text: &str) -> usize {
    let chars: Vec<char> = text.trim().chars().collect();
    let mut count = 0;
    for (i, c) in chars.iter().enumerate() {
        if matches!(c, '.' | '!' | '?') {
            match chars.get(i + 1) {
                None => count += 1,
                Some(next) if next.is_whitespace() => count += 1,
                _ => {}
            }
        }
    }
    count.max(1)
}

fn nesting_depth(text: &str) -> usize {
    let (mut depth, mut max) = (0usize, 0usize);
    for c in text.chars() {
        match c {
            '(' | '[' | '{' => {
                depth += 1;
                max = max.max(depth);
            }
            ')' | ']' | '}' => depth = depth.saturating_sub(1),
            _ => {}
        }
    }
    max
}

/// Option label at the start of a line: `A)`, `A.`, `A:` or `(A)`.
fn option_label(line: &str) -> Option<char> {
    let mut chars = line.trim_start().chars();
    match chars.next()? {
        '(' => {
            let label = chars.next()?;
            (label.is_ascii_uppercase() && chars.next()? == ')').then_some(label)
        }
        label if label.is_ascii_uppercase() => {
            let sep = chars.next()?;
            let after = chars.next();
            (matches!(sep, ')' | '.' | ':') && after.is_none_or(char::is_whitespace)).then_some(label)
        }
        _ => None,
    }
}

/// Length of the run `A, B, C, ...` among line-initial option labels.
fn option_count(text: &str) -> usize {
    let labels: HashSet<char> = text.lines().filter_map(option_label).collect();
    ('A'..='Z').take_while(|c| labels.contains(c)).count()
}

fn arithmetic_operators(text: &str) -> usize {
    let chars: Vec<char> = text.chars().collect();
    let mut count = 0;
    for (i, &c) in chars.iter().enumerate() {
        let prev = i.checked_sub(1).and_then(|p| chars.get(p)).copied();
        let next = chars.get(i + 1).copied();
        let numeric_side = |ch: Option<char>| ch.is_some_and(|ch| ch.is_ascii_digit() || ch == ' ');
        match c {
            '+' | '*' | '=' | '^' | '×' | '÷' => count += 1,
            '-' | '/' if numeric_side(prev) && numeric_side(next) => count += 1,
            _ => {}
        }
    }
    count
}

/// A past-tense, pronoun-dense opening (first 40 tokens).
fn narrative_opening(toks: &[String]) -> bool {
    let head = &toks[..toks.len().min(40)];
    let pronouns = head.iter().filter(|t| PRONOUNS.contains(&t.as_str())).count();
    let past = head
        .iter()
        .filter(|t| PAST_TENSE.contains(&t.as_str()) || (t.len() > 4 && t.ends_with("ed")))
        .count();
    pronouns >= 2 && past >= 2
}

/// Fraction of words that are capitalized but not sentence-initial.
fn proper_noun_density(text: &str) -> f64 {
    let mut words = 0usize;
    let mut proper = 0usize;
    let mut sentence_start = true;
    for raw in text.split_whitespace() {
        let word: String = raw.chars().filter(|c| c.is_alphanumeric()).collect();
        if !word.is_empty() {
            words += 1;
            let mut chars = word.chars();
            let first = chars.next().unwrap();
            let rest_has_lower = chars.any(char::is_lowercase);
            if !sentence_start && first.is_uppercase() && rest_has_lower {
                proper += 1;
            }
        }
        sentence_start = raw.ends_with(['.', '!', '?', ':', ')']) || word.is_empty() && sentence_start;
    }
    if words == 0 {
        0.0
    } else {
        proper as f64 / words as f64
    }
}

/// Text preceding the first line containing `?`. Empty when the question opens the prompt.
fn passage_before_question(text: &str) -> &str {
    let mut offset = 0;
    for line in text.split_inclusive('\n') {
        if line.contains('?') {
            return text[..offset].trim();
        }
        offset += line.len();
    }
    ""
}

/// At least 90% of alphabetic characters are ASCII.
fn is_english(text: &str) -> bool {
    let (mut alpha, mut ascii) = (0usize, 0usize);
    for c in text.chars().filter(|c| c.is_alphabetic()) {
        alpha += 1;
        if c.is_ascii() {
            ascii += 1;
        }
    }
    alpha == 0 || ascii * 10 >= alpha * 9
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::features::FeatureGroup;

    const ARC_PROMPT: &str = "Which question would scientists studying prokaryotic organisms most likely ask?
A) How do lysosomes expel bacteria from cells?
B) What role does the cell membrane play in stability?
C) Why are ribosomes efficient protein producers?
D) How do chloroplasts convert light into energy?
Print only a single choice from 'A' or 'B' or 'C' or 'D' without explanation.
Answer:";

    fn schema() -> FeatureSchema {
        FeatureSchema::v1::<&str>(&[]).unwrap()
    }

    fn feature(v: &FeatureVector, name: &str) -> f64 {
        v.values[schema().index_of(name).unwrap()]
    }

    #[test]
    fn arc_prompt_is_single_char_multiple_choice() {
        let v = extract_features(ARC_PROMPT, &schema(), None).unwrap();
        assert_eq!(feature(&v, "multiple_choice"), 1.0);
        assert_eq!(feature(&v, "single_char_answer"), 1.0);
        assert_eq!(feature(&v, "deterministic_output"), 1.0);
        assert_eq!(feature(&v, "free_form"), 0.0);
        assert_eq!(feature(&v, "option_count"), f64::from(0.4f32));
        assert_eq!(feature(&v, "domain_biology"), 1.0);
        assert_eq!(feature(&v, "knowledge_needed"), 1.0);
        assert_eq!(feature(&v, "is_english"), 1.0);
        assert_eq!(feature(&v, "math"), 0.0);
    }

    #[test]
    fn what_happens_next_cue() {
        let v = extract_features("What happens next?", &schema(), None).unwrap();
        assert_eq!(feature(&v, "what_happens_next"), 1.0);
        assert_eq!(feature(&v, "multiple_choice"), 0.0);
        assert_eq!(feature(&v, "free_form"), 1.0);
    }

    #[test]
    fn empty_prompt_is_an_error() {
        assert!(matches!(extract_features("", &schema(), None), Err(Error::EmptyPrompt)));
        assert!(matches!(extract_features(" \n\t", &schema(), None), Err(Error::EmptyPrompt)));
    }

    #[test]
    fn math_and_code_cues() {
        let math = extract_features("Compute 3 + 4 * 2 = ?", &schema(), None).unwrap();
        assert_eq!(feature(&math, "math"), 1.0);
        assert_eq!(feature(&math, "reasoning_needed"), 1.0);
        let how_many = extract_features("How many apples are left", &schema(), None).unwrap();
        assert_eq!(feature(&how_many, "math"), 1.0);
        let code = extract_features("def f(x):\n    return x", &schema(), None).unwrap();
        assert_eq!(feature(&code, "code"), 1.0);
        assert_eq!(feature(&code, "math"), 0.0);
        // a hyphenated word is not subtraction
        let prose = extract_features("A well-known state-of-the-art idea.", &schema(), None).unwrap();
        assert_eq!(feature(&prose, "math"), 0.0);
    }

    #[test]
    fn narrative_and_temporal_cues() {
        let story = "She walked to the store after he called. They talked and she laughed.";
        let v = extract_features(story, &schema(), None).unwrap();
        assert_eq!(feature(&v, "narrative"), 1.0);
        assert_eq!(feature(&v, "temporal"), 1.0);
        let year = extract_features("What happened in 1815 at Waterloo?", &schema(), None).unwrap();
        assert_eq!(feature(&year, "temporal"), 1.0);
        assert!(feature(&year, "world_knowledge") > 0.0);
    }

    #[test]
    fn passage_sets_context_features() {
        let passage = "word ".repeat(40);
        let prompt = format!("{passage}\nWhat is the main idea?");
        let v = extract_features(&prompt, &schema(), None).unwrap();
        assert_eq!(feature(&v, "context_needed"), 1.0);
        assert!(feature(&v, "context_length") > 0.0);
        let v = extract_features("What is the main idea?\nword word", &schema(), None).unwrap();
        assert_eq!(feature(&v, "context_length"), 0.0);
    }

    #[test]
    fn structural_counts() {
        assert_eq!(nesting_depth("f(g[h{x}])"), 3);
        assert_eq!(nesting_depth(")))("), 1);
        assert_eq!(sentence_count("One. Two! Three? 3.14 stays"), 3);
        assert_eq!(sentence_count("no terminator"), 1);
        assert_eq!(option_count("A. x\nB. y\nD. z"), 2);
        assert_eq!(option_count("(A) x\n(B) y\n(C) z"), 3);
        assert_eq!(option_count("A cat sat.\nB"), 0);
    }

    #[test]
    fn non_latin_prompt_is_not_english() {
        let v = extract_features("这是一个中文问题吗", &schema(), None).unwrap();
        assert_eq!(feature(&v, "is_english"), 0.0);
    }

    #[test]
    fn quality_length_duplicates_difficulty_length() {
        let v = extract_features(&"x ".repeat(3000), &schema(), None).unwrap();
        assert_eq!(feature(&v, "char_length"), 1.0);
        assert_eq!(feature(&v, "length_normalized"), 1.0);
    }

    #[test]
    fn proxy_block_is_zero_without_proxy() {
        let schema = FeatureSchema::v1(&["a", "b", "c"]).unwrap();
        let v = extract_features("hello", &schema, None).unwrap();
        for i in schema.group_indices(FeatureGroup::Proxy) {
            assert_eq!(v.values[i], 0.0);
        }
        v.check(&schema).unwrap();
    }

    proptest::proptest! {
        #[test]
        fn values_are_bounded_and_deterministic(prompt in "\\PC{1,300}") {
            proptest::prop_assume!(!prompt.trim().is_empty());
            let s = schema();
            let a = extract_features(&prompt, &s, None).unwrap();
            let b = extract_features(&prompt, &s, None).unwrap();
            proptest::prop_assert_eq!(&a, &b);
            a.check(&s).unwrap();
        }
    }
}
