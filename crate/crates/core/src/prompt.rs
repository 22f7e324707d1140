//! Interactive-prompt construction for caption refinement training.
//!
//! Nouns mentioned by a ground-truth caption but missing from the model's
//! rough caption become the prompt:
//!
//! ```text
//! Reference: <rough caption>
//! Prompt: An image contains <phrase list>.
//! Prediction: <ground-truth caption>
//! ```

use alloc::collections::BTreeSet;
use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::rng::Rng;

/// Literal emitted in place of a prompt when it is dropped.
pub const PADDING: &str = "<PAD-PROMPT>";

/// Prompt line used when no phrase survives filtering.
pub const EMPTY_PROMPT: &str = "nothing new";

/// Lowercases, splits on whitespace and trims ASCII punctuation from both
/// ends of each token.
pub fn tokenize_caption(text: &str) -> Vec<String> {
    text.split_whitespace()
        .map(|t| {
            t.trim_matches(|c: char| c.is_ascii_punctuation())
                .to_lowercase()
        })
        .filter(|t| !t.is_empty())
        .collect()
}

/// A set of lowercase noun phrases matched against caption tokens.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct NounLexicon {
    entries: BTreeSet<String>,
    max_tokens: usize,
}

impl NounLexicon {
    pub fn new<I, S>(phrases: I) -> Result<Self>
    where
        I: IntoIterator<Item = S>,
        S: AsRef<str>,
    {
        let mut entries = BTreeSet::new();
        let mut max_tokens = 0;
        for p in phrases {
            let tokens = tokenize_caption(p.as_ref());
            if tokens.is_empty() {
                continue;
            }
            max_tokens = max_tokens.max(tokens.len());
            entries.insert(tokens.join(" "));
        }
        if entries.is_empty() {
            return Err(Error::InvalidArgument("noun lexicon is empty".into()));
        }
        Ok(Self {
            entries,
            max_tokens,
        })
    }

    /// One phrase per line; `#` starts a comment.
    pub fn parse(text: &str) -> Result<Self> {
        Self::new(
            text.lines()
                .map(|l| l.split('#').next().unwrap_or("").trim())
                .filter(|l| !l.is_empty()),
        )
    }

    pub fn contains(&self, phrase: &str) -> bool {
        self.entries.contains(phrase)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

/// Lexicon phrases found in `gt`, longest match first at each position,
/// non-overlapping, in order of first occurrence.
pub fn extract_candidates(gt: &str, lexicon: &NounLexicon) -> Vec<String> {
    let tokens = tokenize_caption(gt);
    let mut out: Vec<String> = Vec::new();
    let mut i = 0;
    while i < tokens.len() {
        let longest = lexicon.max_tokens.min(tokens.len() - i);
        let hit = (1..=longest).rev().find_map(|len| {
            let phrase = tokens[i..i + len].join(" ");
            lexicon.contains(&phrase).then_some((phrase, len))
        });
        match hit {
            Some((phrase, len)) => {
                if !out.contains(&phrase) {
                    out.push(phrase);
                }
                i += len;
            }
            None => i += 1,
        }
    }
    out
}

fn contains_run(haystack: &[String], needle: &[String]) -> bool {
    !needle.is_empty() && haystack.windows(needle.len()).any(|w| w == needle)
}

/// Drops candidates that the rough caption already mentions.
pub fn filter_candidates(candidates: &[String], rough: &str) -> Vec<String> {
    let rough_tokens = tokenize_caption(rough);
    candidates
        .iter()
        .filter(|c| !contains_run(&rough_tokens, &tokenize_caption(c)))
        .cloned()
        .collect()
}

/// "a", "a and b", "a, b and c".
fn join_phrases(phrases: &[String]) -> String {
    match phrases {
        [] => String::from(EMPTY_PROMPT),
        [one] => one.clone(),
        [init @ .., last] => format!("{} and {}", init.join(", "), last),
    }
}

pub fn build_full_prompt(reference: &str, phrases: &[String], target: &str) -> String {
    format!(
        "Reference: {reference}\nPrompt: An image contains {}.\nPrediction: {target}",
        join_phrases(phrases)
    )
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Serialized {
    Prompt(String),
    Padding,
}

impl Serialized {
    pub fn as_str(&self) -> &str {
        match self {
            Serialized::Prompt(s) => s,
            Serialized::Padding => PADDING,
        }
    }

    pub fn is_padding(&self) -> bool {
        matches!(self, Serialized::Padding)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PromptRecord {
    pub reference: String,
    pub candidates: Vec<String>,
    pub filtered: Vec<String>,
    pub target: String,
    pub serialized: Serialized,
}

/// Builds the stage-two training prompt, replacing it with padding with
/// probability `p` or whenever the rough caption already equals the target
/// (compared token-wise). Exactly one uniform draw is consumed per call.
pub fn stage2_prompt_or_padding(
    rough: &str,
    gt: &str,
    lexicon: &NounLexicon,
    p: f64,
    rng: &mut Rng,
) -> Result<PromptRecord> {
    if !(0.0..=1.0).contains(&p) {
        return Err(Error::InvalidArgument(format!(
            "padding probability {p} outside [0, 1]"
        )));
    }
    let dropped = rng.bernoulli(p);
    let candidates = extract_candidates(gt, lexicon);
    let filtered = filter_candidates(&candidates, rough);
    let serialized = if dropped || tokenize_caption(rough) == tokenize_caption(gt) {
        Serialized::Padding
    } else {
        Serialized::Prompt(build_full_prompt(rough, &filtered, gt))
    };
    Ok(PromptRecord {
        reference: rough.into(),
        candidates,
        filtered,
        target: gt.into(),
        serialized,
    })
}
