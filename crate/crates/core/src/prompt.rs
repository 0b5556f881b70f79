//! Keyword-to-prompt generation: candidate sentences, distance-based outlier
//! removal against the original-image embedding, and cosine argmax selection.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::embedding::{cosine_similarity, l2_distance, EmbeddingBackend, EmbeddingVector};
use crate::error::{Error, Result};
use crate::lexicon::normalize_word;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PromptCandidate {
    pub object_word: String,
    pub status_word: String,
    pub text: String,
    pub index: usize,
}

impl PromptCandidate {
    pub fn new(object_word: &str, status_word: &str, index: usize) -> Result<Self> {
        if status_word.trim().is_empty() || status_word.contains('{') || status_word.contains('}') {
            return Err(Error::Config(format!("invalid status word `{status_word}`")));
        }
        Ok(Self {
            object_word: object_word.to_string(),
            status_word: status_word.to_string(),
            text: render(object_word, status_word),
            index,
        })
    }
}

pub fn render(object_word: &str, status_word: &str) -> String {
    format!("a {object_word} with {status_word}")
}

pub fn naive_prompt(object_word: &str) -> String {
    format!("a photo of a {object_word}")
}

pub fn build_candidates(object_word: &str, words: &[String]) -> Result<Vec<PromptCandidate>> {
    words
        .iter()
        .enumerate()
        .map(|(i, w)| PromptCandidate::new(object_word, w, i))
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Comparator {
    Greater,
    Less,
}

impl Comparator {
    pub fn keeps(self, distance: f64, threshold: f64) -> bool {
        match self {
            Comparator::Greater => distance > threshold,
            Comparator::Less => distance < threshold,
        }
    }
}

impl std::str::FromStr for Comparator {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "greater" => Ok(Comparator::Greater),
            "less" => Ok(Comparator::Less),
            other => Err(Error::Config(format!("unknown comparator `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Fallback {
    Error,
    Naive,
}

impl std::str::FromStr for Fallback {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "error" => Ok(Fallback::Error),
            "naive" => Ok(Fallback::Naive),
            other => Err(Error::Config(format!("unknown fallback `{other}`"))),
        }
    }
}

/// How the argmax over the positive set is scanned.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SelectionMode {
    Exhaustive,
    /// Scans the positive set in `iterations` contiguous chunks, keeping a
    /// running best. Same answer as `Exhaustive`; kept for parity with the
    /// iteration-count setting of earlier experiments.
    Batched { iterations: usize },
}

#[derive(Debug, Clone)]
pub struct EmbeddedCandidate {
    pub candidate: PromptCandidate,
    pub embedding: EmbeddingVector,
}

pub fn embed_candidates(
    candidates: &[PromptCandidate],
    backend: &dyn EmbeddingBackend,
) -> Result<Vec<EmbeddedCandidate>> {
    candidates
        .par_iter()
        .map(|c| {
            Ok(EmbeddedCandidate {
                embedding: crate::embedding::embed_text(&c.text, backend)?,
                candidate: c.clone(),
            })
        })
        .collect()
}

/// Indices of candidates whose distance to the image embedding satisfies
/// `comparator` against `threshold`. Both sides are unit normalized first.
pub fn filter_outliers(
    candidates: &[EmbeddedCandidate],
    image_embedding: &EmbeddingVector,
    threshold: f64,
    comparator: Comparator,
) -> Result<Vec<usize>> {
    if !(0.0..=2.0).contains(&threshold) {
        return Err(Error::Config(format!(
            "threshold {threshold} outside [0, 2]"
        )));
    }
    let image = image_embedding.clone().normalize()?;
    let mut positive = Vec::new();
    for (i, c) in candidates.iter().enumerate() {
        let text = c.embedding.clone().normalize()?;
        if comparator.keeps(l2_distance(&image, &text)?, threshold) {
            positive.push(i);
        }
    }
    if positive.is_empty() {
        return Err(Error::EmptyPositiveSet);
    }
    Ok(positive)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoredIndex {
    pub index: usize,
    pub score: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PromptSelection {
    pub object_word: String,
    pub candidates: Vec<PromptCandidate>,
    pub positive_set: Vec<usize>,
    /// Argmax candidate; `None` when the naive fallback was used.
    pub best: Option<ScoredIndex>,
    pub worst: Option<ScoredIndex>,
    /// The sentence whose text embedding guides generation.
    pub prompt: String,
    pub fallback: bool,
}

impl PromptSelection {
    pub fn best_candidate(&self) -> Option<&PromptCandidate> {
        self.best.as_ref().map(|b| &self.candidates[b.index])
    }

    pub fn worst_candidate(&self) -> Option<&PromptCandidate> {
        self.worst.as_ref().map(|w| &self.candidates[w.index])
    }

    pub fn naive(object_word: &str, candidates: Vec<PromptCandidate>) -> Self {
        Self {
            object_word: object_word.to_string(),
            candidates,
            positive_set: Vec::new(),
            best: None,
            worst: None,
            prompt: naive_prompt(object_word),
            fallback: true,
        }
    }
}

/// Argmax (and argmin, for diagnostics) of cosine similarity over the
/// positive set. Ties go to the smallest candidate index.
pub fn select_best_prompt(
    object_word: &str,
    candidates: &[EmbeddedCandidate],
    positive_set: &[usize],
    image_embedding: &EmbeddingVector,
    fallback: Fallback,
    mode: SelectionMode,
) -> Result<PromptSelection> {
    let plain: Vec<PromptCandidate> = candidates.iter().map(|c| c.candidate.clone()).collect();
    let mut members = positive_set.to_vec();
    members.sort_unstable();
    members.dedup();
    if members.is_empty() {
        return match fallback {
            Fallback::Error => Err(Error::EmptyPositiveSet),
            Fallback::Naive => Ok(PromptSelection::naive(object_word, plain)),
        };
    }
    if let Some(&bad) = members.iter().find(|&&i| i >= candidates.len()) {
        return Err(Error::DimensionMismatch {
            expected: candidates.len(),
            actual: bad,
        });
    }

    let scores: Vec<f64> = members
        .iter()
        .map(|&i| cosine_similarity(image_embedding, &candidates[i].embedding))
        .collect::<Result<_>>()?;

    let chunk = match mode {
        SelectionMode::Exhaustive => members.len(),
        SelectionMode::Batched { iterations } => members.len().div_ceil(iterations.max(1)),
    };
    let mut best = (0usize, f64::NEG_INFINITY);
    let mut worst = (0usize, f64::INFINITY);
    for (offset, block) in scores.chunks(chunk).enumerate() {
        for (j, &s) in block.iter().enumerate() {
            let pos = offset * chunk + j;
            if s > best.1 {
                best = (pos, s);
            }
            if s < worst.1 {
                worst = (pos, s);
            }
        }
    }
    let best_idx = members[best.0];
    Ok(PromptSelection {
        object_word: object_word.to_string(),
        prompt: plain[best_idx].text.clone(),
        candidates: plain,
        positive_set: members.clone(),
        best: Some(ScoredIndex {
            index: best_idx,
            score: best.1,
        }),
        worst: Some(ScoredIndex {
            index: members[worst.0],
            score: worst.1,
        }),
        fallback: false,
    })
}

/// Options for the full expand → filter → select chain.
#[derive(Debug, Clone)]
pub struct PromptOptions {
    pub t_max: usize,
    pub threshold: f64,
    pub comparator: Comparator,
    pub fallback: Fallback,
    pub mode: SelectionMode,
}

impl Default for PromptOptions {
    fn default() -> Self {
        Self {
            t_max: 1000,
            threshold: 0.5,
            comparator: Comparator::Greater,
            fallback: Fallback::Error,
            mode: SelectionMode::Exhaustive,
        }
    }
}

/// Runs the whole keyword-to-prompt chain for one object word.
pub fn generate_prompt(
    object_word: &str,
    lexicon: &dyn crate::lexicon::Lexicon,
    image_embedding: &EmbeddingVector,
    backend: &dyn EmbeddingBackend,
    options: &PromptOptions,
) -> Result<PromptSelection> {
    let object = normalize_word(object_word);
    let expansion = crate::lexicon::expand_keywords(&object, lexicon, options.t_max)?;
    let candidates = build_candidates(&object, &expansion.words)?;
    let embedded = embed_candidates(&candidates, backend)?;
    let positive = match filter_outliers(
        &embedded,
        image_embedding,
        options.threshold,
        options.comparator,
    ) {
        Ok(p) => p,
        Err(Error::EmptyPositiveSet) => Vec::new(),
        Err(e) => return Err(e),
    };
    select_best_prompt(
        &object,
        &embedded,
        &positive,
        image_embedding,
        options.fallback,
        options.mode,
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    fn unit(v: &[f64]) -> EmbeddingVector {
        EmbeddingVector::unit(v.to_vec()).unwrap()
    }

    /// Text embeddings at a chosen cosine to the image direction e0.
    fn at_cosine(c: f64) -> EmbeddingVector {
        unit(&[c, (1.0 - c * c).sqrt(), 0.0])
    }

    fn embedded(cosines: &[f64]) -> Vec<EmbeddedCandidate> {
        cosines
            .iter()
            .enumerate()
            .map(|(i, &c)| EmbeddedCandidate {
                candidate: PromptCandidate::new("hazelnut", &format!("w{i}"), i).unwrap(),
                embedding: at_cosine(c),
            })
            .collect()
    }

    #[test]
    fn template_is_verbatim() {
        let c = build_candidates("hazelnut", &["cobnut".to_string()]).unwrap();
        assert_eq!(c[0].text, "a hazelnut with cobnut");
        assert_eq!(c[0].index, 0);
        let z = build_candidates("zipper", &["metallization".to_string()]).unwrap();
        assert_eq!(z[0].text, "a zipper with metallization");
        assert!(PromptCandidate::new("x", "{bad}", 0).is_err());
    }

    #[test]
    fn filter_by_distance() {
        // d = sqrt(2 - 2c) for unit vectors; pick c for d = 0.3, 0.6, 1.2.
        let cos = |d: f64| 1.0 - d * d / 2.0;
        let cands = embedded(&[cos(0.3), cos(0.6), cos(1.2)]);
        let image = unit(&[1.0, 0.0, 0.0]);
        let greater = filter_outliers(&cands, &image, 0.5, Comparator::Greater).unwrap();
        assert_eq!(greater, vec![1, 2]);
        let less = filter_outliers(&cands, &image, 0.5, Comparator::Less).unwrap();
        assert_eq!(less, vec![0]);
        assert!(matches!(
            filter_outliers(&cands, &image, 2.0, Comparator::Greater),
            Err(Error::EmptyPositiveSet)
        ));
        assert!(filter_outliers(&cands, &image, 2.5, Comparator::Greater).is_err());
    }

    #[test]
    fn best_and_worst_mirror_figure_scores() {
        let cands = embedded(&[0.17, 0.25, 0.33]);
        let image = unit(&[1.0, 0.0, 0.0]);
        let sel = select_best_prompt(
            "hazelnut",
            &cands,
            &[0, 1, 2],
            &image,
            Fallback::Error,
            SelectionMode::Exhaustive,
        )
        .unwrap();
        assert_eq!(sel.best.as_ref().unwrap().index, 2);
        assert_eq!(sel.worst.as_ref().unwrap().index, 0);
        assert!((sel.best.unwrap().score - 0.33).abs() < 1e-12);
    }

    #[test]
    fn ties_pick_lowest_index() {
        let cands = embedded(&[0.4, 0.4, 0.4]);
        let image = unit(&[1.0, 0.0, 0.0]);
        let sel = select_best_prompt(
            "hazelnut",
            &cands,
            &[2, 1, 0],
            &image,
            Fallback::Error,
            SelectionMode::Exhaustive,
        )
        .unwrap();
        assert_eq!(sel.best.unwrap().index, 0);
    }

    #[test]
    fn empty_positive_set_fallbacks() {
        let cands = embedded(&[0.4]);
        let image = unit(&[1.0, 0.0, 0.0]);
        assert!(matches!(
            select_best_prompt("hazelnut", &cands, &[], &image, Fallback::Error, SelectionMode::Exhaustive),
            Err(Error::EmptyPositiveSet)
        ));
        let sel = select_best_prompt(
            "hazelnut",
            &cands,
            &[],
            &image,
            Fallback::Naive,
            SelectionMode::Exhaustive,
        )
        .unwrap();
        assert!(sel.fallback);
        assert_eq!(sel.prompt, "a photo of a hazelnut");
    }

    #[test]
    fn batched_mode_matches_exhaustive() {
        let cosines: Vec<f64> = (0..257).map(|i| ((i * 37 % 101) as f64 / 101.0) - 0.5).collect();
        let cands = embedded(&cosines);
        let image = unit(&[1.0, 0.0, 0.0]);
        let all: Vec<usize> = (0..cands.len()).collect();
        let ex = select_best_prompt("h", &cands, &all, &image, Fallback::Error, SelectionMode::Exhaustive)
            .unwrap();
        let ba = select_best_prompt(
            "h",
            &cands,
            &all,
            &image,
            Fallback::Error,
            SelectionMode::Batched { iterations: 100 },
        )
        .unwrap();
        assert_eq!(ex, ba);
    }
}
