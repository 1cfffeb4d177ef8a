//! Prompt handling: template-grammar parsing into a partial scene graph,
//! human-action inference and the hashed prompt embedding.
//!
//! Accepted grammar, one clause per sentence:
//!
//! ```text
//! [There is|There are] a(n) {adjectives} {category} {predicate phrase} a(n) {adjectives} {category}.
//! ```
//!
//! Sentences are separated by `.`, `;`, `!`, `?` or by `and` followed by a
//! new `there is`. Inside one sentence subject and object are distinct
//! instances; across sentences, mentions of a category already seen refer
//! to that instance.

mod actions;
mod embed;

pub use actions::{
    build_llm_prompt, infer_actions, parse_llm_reply, ActionRuleTable, CompletionClient,
    ActionRule,
};
#[cfg(feature = "llm-http")]
pub use actions::{HttpCompletionClient, LlmClientConfig};
pub use embed::{embed_prompt, embed_prompt_with_dim, PromptEmbedding, DEFAULT_EMBED_DIM};

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::vocab::{CategoryVocabulary, HumanAction, RelationPredicate};

const DEFAULT_LEXICON: &str = include_str!("../../data/predicate_lexicon.json");

/// `<subject, predicate, object>` with category names.
#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Triplet {
    pub subject: String,
    pub predicate: RelationPredicate,
    pub object: String,
}

impl Triplet {
    /// Renders the triplet as one template sentence.
    pub fn to_sentence(&self) -> String {
        render_sentence(&[], &self.subject, self.predicate, &[], &self.object)
    }
}

fn article(word: &str) -> &'static str {
    match word.chars().next() {
        Some('a' | 'e' | 'i' | 'o' | 'u') => "an",
        _ => "a",
    }
}

/// Renders "There is a {adjs} {subject} {phrase} a {adjs} {object}."
pub fn render_sentence(
    subject_adjs: &[String],
    subject: &str,
    predicate: RelationPredicate,
    object_adjs: &[String],
    object: &str,
) -> String {
    let np = |adjs: &[String], noun: &str| {
        let mut words: Vec<&str> = adjs.iter().map(String::as_str).collect();
        words.push(noun);
        let phrase = words.join(" ");
        format!("{} {}", article(&phrase), phrase)
    };
    format!(
        "There is {} {} {}.",
        np(subject_adjs, subject),
        predicate.phrase(),
        np(object_adjs, object)
    )
}

/// Phrase-to-predicate table used by the parser.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct PredicateLexicon {
    /// Phrases as token lists, longest first.
    entries: Vec<(Vec<String>, RelationPredicate)>,
}

impl PredicateLexicon {
    pub fn from_json(text: &str) -> Result<Self> {
        let map: BTreeMap<String, RelationPredicate> = serde_json::from_str(text)?;
        let mut entries: Vec<(Vec<String>, RelationPredicate)> = map
            .into_iter()
            .filter(|(_, p)| *p != RelationPredicate::None)
            .map(|(k, p)| (tokenize(&k), p))
            .filter(|(k, _)| !k.is_empty())
            .collect();
        entries.sort_by(|a, b| b.0.len().cmp(&a.0.len()).then_with(|| a.0.cmp(&b.0)));
        Ok(Self { entries })
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }

    /// Longest phrase starting at `tokens[at..]`.
    fn match_at(&self, tokens: &[String], at: usize) -> Option<(usize, RelationPredicate)> {
        self.entries.iter().find_map(|(phrase, p)| {
            let end = at + phrase.len();
            (end <= tokens.len() && tokens[at..end] == phrase[..]).then_some((phrase.len(), *p))
        })
    }
}

impl Default for PredicateLexicon {
    fn default() -> Self {
        Self::from_json(DEFAULT_LEXICON).expect("bundled lexicon parses")
    }
}

/// Node fixed by the prompt. Unset attributes stay masked during sampling.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct AnchoredNode {
    pub category: usize,
    pub adjectives: Vec<String>,
    pub feature_code: Option<usize>,
    pub action: Option<HumanAction>,
}

/// Graph fragment recovered from a prompt.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct PartialGraph {
    pub nodes: Vec<AnchoredNode>,
    /// `(subject node, object node, predicate)`.
    pub edges: Vec<(usize, usize, RelationPredicate)>,
}

impl PartialGraph {
    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum ParseWarning {
    UnknownPredicatePhrase { sentence: String },
    UnknownCategory { sentence: String, phrase: String },
}

impl std::fmt::Display for ParseWarning {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            ParseWarning::UnknownPredicatePhrase { sentence } => {
                write!(f, "no known relation phrase in \"{sentence}\"; sentence skipped")
            }
            ParseWarning::UnknownCategory { sentence, phrase } => write!(
                f,
                "\"{phrase}\" is not a known category (in \"{sentence}\"); sentence skipped"
            ),
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct ParsedPrompt {
    pub partial: PartialGraph,
    pub triplets: Vec<Triplet>,
    pub warnings: Vec<ParseWarning>,
}

/// Lowercased alphanumeric words.
pub fn tokenize(text: &str) -> Vec<String> {
    text.split(|c: char| !(c.is_alphanumeric() || c == '\''))
        .filter(|w| !w.is_empty())
        .map(|w| w.to_lowercase())
        .collect()
}

fn split_sentences(text: &str) -> Vec<String> {
    let mut out = Vec::new();
    for chunk in text.split(['.', ';', '!', '?', '\n']) {
        let tokens = tokenize(chunk);
        let mut start = 0;
        for i in 0..tokens.len() {
            let next_is_there = tokens.get(i + 1).is_some_and(|t| t == "there");
            if tokens[i] == "and" && next_is_there && i > start {
                out.push(tokens[start..i].join(" "));
                start = i + 1;
            }
        }
        if start < tokens.len() {
            out.push(tokens[start..].join(" "));
        }
    }
    out
}

/// Category names as token lists, longest first.
fn category_patterns(vocab: &CategoryVocabulary) -> Vec<(Vec<String>, usize)> {
    let mut pats: Vec<(Vec<String>, usize)> = vocab
        .names()
        .iter()
        .enumerate()
        .map(|(i, name)| (tokenize(name), i))
        .collect();
    pats.sort_by(|a, b| b.0.len().cmp(&a.0.len()).then(a.1.cmp(&b.1)));
    pats
}

/// Noun phrase: optional article, adjectives, then a category suffix.
fn parse_noun_phrase(
    tokens: &[String],
    cats: &[(Vec<String>, usize)],
) -> Option<(usize, Vec<String>)> {
    let body = match tokens.first().map(String::as_str) {
        Some("a" | "an" | "the" | "another") => &tokens[1..],
        _ => tokens,
    };
    cats.iter().find_map(|(pat, idx)| {
        (body.len() >= pat.len() && body[body.len() - pat.len()..] == pat[..]).then(|| {
            let adjs = body[..body.len() - pat.len()]
                .iter()
                .filter(|w| !matches!(w.as_str(), "a" | "an" | "the"))
                .cloned()
                .collect();
            (*idx, adjs)
        })
    })
}

/// Number of non-overlapping category mentions, matched longest first.
fn mention_count(tokens: &[String], cats: &[(Vec<String>, usize)]) -> usize {
    let mut i = 0;
    let mut n = 0;
    while i < tokens.len() {
        match cats
            .iter()
            .find(|(pat, _)| tokens.len() - i >= pat.len() && tokens[i..i + pat.len()] == pat[..])
        {
            Some((pat, _)) => {
                n += 1;
                i += pat.len();
            }
            None => i += 1,
        }
    }
    n
}

/// Parses a prompt against a scene-type vocabulary. Never fails: unusable
/// sentences are skipped and reported in `warnings`.
pub fn parse_prompt(
    text: &str,
    vocab: &CategoryVocabulary,
    lexicon: &PredicateLexicon,
) -> ParsedPrompt {
    let cats = category_patterns(vocab);
    let mut out = ParsedPrompt::default();
    // Category -> first node instance mentioned in an earlier sentence.
    let mut first_instance: BTreeMap<usize, usize> = BTreeMap::new();

    for sentence in split_sentences(text) {
        let mut tokens = tokenize(&sentence);
        if tokens.first().is_some_and(|t| t == "there")
            && tokens.get(1).is_some_and(|t| t == "is" || t == "are" || t == "'s")
        {
            tokens.drain(..2);
        }
        if tokens.is_empty() {
            continue;
        }
        let found = (1..tokens.len()).find_map(|at| lexicon.match_at(&tokens, at).map(|m| (at, m)));
        let Some((at, (len, predicate))) = found else {
            // A lone noun phrase anchors a node without a relation.
            let lone = parse_noun_phrase(&tokens, &cats).filter(|_| mention_count(&tokens, &cats) == 1);
            if let Some((cat, adjs)) = lone {
                let idx = bind(&mut out.partial, &mut first_instance, cat, adjs, None);
                first_instance.entry(cat).or_insert(idx);
            } else {
                out.warnings.push(ParseWarning::UnknownPredicatePhrase {
                    sentence: sentence.clone(),
                });
            }
            continue;
        };
        let (left, right) = (&tokens[..at], &tokens[at + len..]);
        let subj = parse_noun_phrase(left, &cats);
        let obj = parse_noun_phrase(right, &cats);
        let (Some((sc, sadj)), Some((oc, oadj))) = (subj.clone(), obj.clone()) else {
            let phrase = if subj.is_none() { left } else { right }.join(" ");
            out.warnings.push(ParseWarning::UnknownCategory {
                sentence: sentence.clone(),
                phrase,
            });
            continue;
        };
        let s_idx = bind(&mut out.partial, &mut first_instance, sc, sadj, None);
        let o_idx = bind(&mut out.partial, &mut first_instance, oc, oadj, Some(s_idx));
        first_instance.entry(sc).or_insert(s_idx);
        first_instance.entry(oc).or_insert(o_idx);
        out.partial.edges.push((s_idx, o_idx, predicate));
        out.triplets.push(Triplet {
            subject: vocab.name(sc).to_string(),
            predicate,
            object: vocab.name(oc).to_string(),
        });
    }
    out
}

/// Resolves a mention to a node index, creating a node when needed.
/// `exclude` is the other mention of the same sentence.
fn bind(
    partial: &mut PartialGraph,
    first_instance: &mut BTreeMap<usize, usize>,
    category: usize,
    adjectives: Vec<String>,
    exclude: Option<usize>,
) -> usize {
    if let Some(&idx) = first_instance.get(&category) {
        if Some(idx) != exclude {
            let node = &mut partial.nodes[idx];
            for a in adjectives {
                if !node.adjectives.contains(&a) {
                    node.adjectives.push(a);
                }
            }
            return idx;
        }
    }
    partial.nodes.push(AnchoredNode {
        category,
        adjectives,
        feature_code: None,
        action: None,
    });
    partial.nodes.len() - 1
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::vocab::{SceneRegistry, SceneType};
    use proptest::prelude::*;

    fn bedroom() -> CategoryVocabulary {
        SceneRegistry::builtin()
            .get(&SceneType::Bedroom)
            .unwrap()
            .vocabulary
            .clone()
    }

    #[test]
    fn single_triplet() {
        let v = bedroom();
        let p = parse_prompt(
            "There is a double bed to the left of a nightstand.",
            &v,
            &PredicateLexicon::default(),
        );
        assert_eq!(p.partial.nodes.len(), 2);
        assert_eq!(v.name(p.partial.nodes[0].category), "double bed");
        assert_eq!(v.name(p.partial.nodes[1].category), "nightstand");
        assert_eq!(p.partial.edges, vec![(0, 1, RelationPredicate::LeftOf)]);
        assert_eq!(
            p.triplets,
            vec![Triplet {
                subject: "double bed".into(),
                predicate: RelationPredicate::LeftOf,
                object: "nightstand".into()
            }]
        );
        assert!(p.warnings.is_empty());
    }

    #[test]
    fn empty_prompt() {
        let p = parse_prompt("", &bedroom(), &PredicateLexicon::default());
        assert!(p.partial.is_empty());
        assert!(p.triplets.is_empty());
    }

    #[test]
    fn two_sentences() {
        let p = parse_prompt(
            "There is a modern wardrobe behind a chair. There is a grey desk closely in front of a pendant lamp.",
            &bedroom(),
            &PredicateLexicon::default(),
        );
        assert_eq!(p.partial.edges.len(), 2);
        assert!(p.partial.nodes.len() <= 4);
        assert_eq!(p.partial.nodes[0].adjectives, vec!["modern".to_string()]);
        assert_eq!(p.triplets[1].predicate, RelationPredicate::CloselyInFrontOf);
    }

    #[test]
    fn shared_mentions_bind_to_one_instance() {
        let p = parse_prompt(
            "There is a nightstand to the left of a double bed and there is a wardrobe behind a nightstand.",
            &bedroom(),
            &PredicateLexicon::default(),
        );
        assert_eq!(p.partial.nodes.len(), 3);
        assert_eq!(p.partial.edges[1], (2, 0, RelationPredicate::Behind));
    }

    #[test]
    fn same_category_subject_and_object_are_distinct() {
        let p = parse_prompt(
            "There is a nightstand to the left of a nightstand.",
            &bedroom(),
            &PredicateLexicon::default(),
        );
        assert_eq!(p.partial.nodes.len(), 2);
        assert_eq!(p.partial.edges, vec![(0, 1, RelationPredicate::LeftOf)]);
    }

    #[test]
    fn unknown_phrase_is_reported_and_skipped() {
        let p = parse_prompt(
            "There is a double bed hovering near a nightstand. There is a desk above a stool.",
            &bedroom(),
            &PredicateLexicon::default(),
        );
        assert_eq!(p.triplets.len(), 1);
        assert!(matches!(p.warnings[0], ParseWarning::UnknownPredicatePhrase { .. }));
    }

    #[test]
    fn unknown_category_is_reported() {
        let p = parse_prompt(
            "There is a spaceship to the left of a nightstand.",
            &bedroom(),
            &PredicateLexicon::default(),
        );
        assert!(p.triplets.is_empty());
        assert!(matches!(p.warnings[0], ParseWarning::UnknownCategory { .. }));
    }

    #[test]
    fn longest_category_match_wins() {
        let p = parse_prompt(
            "There is a dressing table in front of a table.",
            &bedroom(),
            &PredicateLexicon::default(),
        );
        assert_eq!(p.triplets[0].subject, "dressing table");
        assert_eq!(p.triplets[0].object, "table");
    }

    proptest! {
        #[test]
        fn parse_is_total(text in "\\PC{0,200}") {
            let _ = parse_prompt(&text, &bedroom(), &PredicateLexicon::default());
        }

        #[test]
        fn triplet_sentence_round_trip(s in 0usize..21, o in 0usize..21, p in 0usize..10) {
            let v = bedroom();
            let t = Triplet {
                subject: v.name(s).to_string(),
                predicate: RelationPredicate::from_index(p).unwrap(),
                object: v.name(o).to_string(),
            };
            let parsed = parse_prompt(&t.to_sentence(), &v, &PredicateLexicon::default());
            prop_assert_eq!(parsed.triplets, vec![t]);
        }
    }
}
