//! Frozen lexical-database snapshot and keyword expansion.
//!
//! Snapshot files are line oriented: `headword<TAB>relation<TAB>related_word`,
//! UTF-8. Relations are `synonym`, `hypernym`, `hyponym` and `part_whole`.

use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::path::Path;

use crate::error::{Error, Result};

const BUNDLED: &str = include_str!("../data/lexicon.tsv");

/// Lexical relations in expansion priority order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Relation {
    Synonym,
    Hypernym,
    Hyponym,
    PartWhole,
}

impl Relation {
    pub const PRIORITY: [Relation; 4] = [
        Relation::Synonym,
        Relation::Hypernym,
        Relation::Hyponym,
        Relation::PartWhole,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Relation::Synonym => "synonym",
            Relation::Hypernym => "hypernym",
            Relation::Hyponym => "hyponym",
            Relation::PartWhole => "part_whole",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Self::PRIORITY.into_iter().find(|r| r.as_str() == s)
    }
}

pub trait Lexicon {
    fn source(&self) -> &str;
    fn contains(&self, word: &str) -> bool;
    /// Related words, sorted and deduplicated.
    fn related(&self, word: &str, relation: Relation) -> Vec<String>;
}

#[derive(Debug, Clone)]
pub struct SnapshotLexicon {
    source: String,
    entries: BTreeMap<String, BTreeMap<Relation, BTreeSet<String>>>,
}

impl SnapshotLexicon {
    /// The snapshot compiled into the crate.
    pub fn bundled() -> Self {
        Self::parse("bundled", BUNDLED).expect("bundled lexicon is well formed")
    }

    pub fn from_file(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path)?;
        Self::parse(&path.display().to_string(), &text)
    }

    pub fn parse(source: &str, text: &str) -> Result<Self> {
        let mut entries: BTreeMap<String, BTreeMap<Relation, BTreeSet<String>>> = BTreeMap::new();
        for (lineno, line) in text.lines().enumerate() {
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let mut parts = line.split('\t');
            let (Some(head), Some(rel), Some(word), None) =
                (parts.next(), parts.next(), parts.next(), parts.next())
            else {
                return Err(Error::Config(format!(
                    "{source}:{}: expected three tab-separated fields",
                    lineno + 1
                )));
            };
            let relation = Relation::parse(rel).ok_or_else(|| {
                Error::Config(format!("{source}:{}: unknown relation `{rel}`", lineno + 1))
            })?;
            entries
                .entry(normalize_word(head))
                .or_default()
                .entry(relation)
                .or_default()
                .insert(normalize_word(word));
        }
        Ok(Self {
            source: source.to_string(),
            entries,
        })
    }

    pub fn headword_count(&self) -> usize {
        self.entries.len()
    }
}

impl Lexicon for SnapshotLexicon {
    fn source(&self) -> &str {
        &self.source
    }

    fn contains(&self, word: &str) -> bool {
        self.entries.contains_key(&normalize_word(word))
    }

    fn related(&self, word: &str, relation: Relation) -> Vec<String> {
        self.entries
            .get(&normalize_word(word))
            .and_then(|rels| rels.get(&relation))
            .map(|set| set.iter().cloned().collect())
            .unwrap_or_default()
    }
}

/// Lowercase, trimmed, with underscores read as spaces.
pub fn normalize_word(word: &str) -> String {
    word.trim().replace('_', " ").to_lowercase()
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct KeywordExpansion {
    pub object_word: String,
    pub words: Vec<String>,
    /// Set when the object word was absent from the lexicon and `words`
    /// holds only its singular/plural variant.
    pub fallback: bool,
}

impl KeywordExpansion {
    /// Turns a fallback expansion into `WordNotInLexicon`.
    pub fn require_lexicon(self) -> Result<Self> {
        if self.fallback {
            return Err(Error::WordNotInLexicon(self.object_word));
        }
        Ok(self)
    }
}

fn number_variant(word: &str) -> String {
    if let Some(stem) = word.strip_suffix("es").filter(|s| {
        s.ends_with('s') || s.ends_with('x') || s.ends_with("ch") || s.ends_with("sh")
    }) {
        stem.to_string()
    } else if let Some(stem) = word.strip_suffix('s').filter(|s| !s.is_empty() && !s.ends_with('s')) {
        stem.to_string()
    } else if word.ends_with('s') || word.ends_with('x') || word.ends_with("ch") || word.ends_with("sh")
    {
        format!("{word}es")
    } else {
        format!("{word}s")
    }
}

fn usable(word: &str) -> bool {
    !word.is_empty() && !word.contains('{') && !word.contains('}')
}

/// Breadth-first expansion of `object_word` through the lexicon.
///
/// Each depth emits relations in priority order, alphabetically within a
/// relation, skipping words already emitted. Stops at `t_max` words.
pub fn expand_keywords(
    object_word: &str,
    lexicon: &dyn Lexicon,
    t_max: usize,
) -> Result<KeywordExpansion> {
    let object = normalize_word(object_word);
    if object.is_empty() {
        return Err(Error::EmptyInput("object word"));
    }
    if t_max == 0 {
        return Err(Error::Config("t_max must be at least 1".into()));
    }
    if !lexicon.contains(&object) {
        return Ok(KeywordExpansion {
            words: vec![number_variant(&object)],
            object_word: object,
            fallback: true,
        });
    }

    let mut seen: HashSet<String> = HashSet::from([object.clone()]);
    let mut words = Vec::new();
    let mut frontier = vec![object.clone()];
    'outer: while !frontier.is_empty() {
        let mut next = Vec::new();
        for relation in Relation::PRIORITY {
            let mut level: BTreeSet<String> = BTreeSet::new();
            for word in &frontier {
                level.extend(lexicon.related(word, relation));
            }
            for word in level {
                if usable(&word) && seen.insert(word.clone()) {
                    words.push(word.clone());
                    next.push(word);
                    if words.len() == t_max {
                        break 'outer;
                    }
                }
            }
        }
        frontier = next;
    }
    Ok(KeywordExpansion {
        object_word: object,
        words,
        fallback: false,
    })
}
