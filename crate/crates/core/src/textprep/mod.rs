//! Deterministic normalization of raw legal text into filtered token sequences.
//!
//! The pipeline is `clean_text -> tokenize -> filter_tokens -> stem | lemma`.
//! Stopword filtering happens before stemming or lemmatization.

mod lemma;
mod porter;

use std::collections::HashSet;
use std::fmt;
use std::path::Path;
use std::str::FromStr;
use std::sync::OnceLock;

use regex::Regex;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use lemma::Lemmatizer;
pub use porter::porter_stem;

const DEFAULT_STOPWORDS: &str = include_str!("../../data/stopwords_en.txt");
const DEFAULT_BOILERPLATE: &str = include_str!("../../data/boilerplate.txt");

/// Token normalization applied after filtering.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PrepMode {
    RawFiltered,
    Stemmed,
    #[default]
    Lemmatized,
}

impl PrepMode {
    pub fn as_str(self) -> &'static str {
        match self {
            PrepMode::RawFiltered => "raw-filtered",
            PrepMode::Stemmed => "stemmed",
            PrepMode::Lemmatized => "lemmatized",
        }
    }
}

impl fmt::Display for PrepMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for PrepMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "raw-filtered" | "raw" => Ok(PrepMode::RawFiltered),
            "stemmed" | "stem" => Ok(PrepMode::Stemmed),
            "lemmatized" | "lemma" => Ok(PrepMode::Lemmatized),
            other => Err(Error::InvalidConfig(format!("unknown preprocessing mode {other:?}"))),
        }
    }
}

/// Cleaned, lowercase text.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CleanText(String);

impl CleanText {
    pub fn as_str(&self) -> &str {
        &self.0
    }

    pub fn into_string(self) -> String {
        self.0
    }
}

impl fmt::Display for CleanText {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

/// Ordered filtered tokens of one document plus the mode that produced them.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TokenSequence {
    pub tokens: Vec<String>,
    pub mode: PrepMode,
}

impl TokenSequence {
    pub fn new(tokens: Vec<String>, mode: PrepMode) -> Self {
        Self { tokens, mode }
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }
}

/// Preprocessing configuration.
#[derive(Debug, Clone)]
pub struct PrepConfig {
    pub stopwords: HashSet<String>,
    pub min_token_len: usize,
    /// Whole-word phrases, already normalized to cleaned form.
    pub boilerplate: Vec<String>,
    pub mode: PrepMode,
    pub lemmatizer: Lemmatizer,
    /// Prepend the case title to the body before preprocessing.
    pub include_title: bool,
}

impl Default for PrepConfig {
    fn default() -> Self {
        Self {
            stopwords: parse_list(DEFAULT_STOPWORDS).into_iter().collect(),
            min_token_len: 3,
            boilerplate: normalize_phrases(parse_list(DEFAULT_BOILERPLATE)),
            mode: PrepMode::Lemmatized,
            lemmatizer: Lemmatizer::default(),
            include_title: false,
        }
    }
}

impl PrepConfig {
    pub fn with_mode(mut self, mode: PrepMode) -> Self {
        self.mode = mode;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.min_token_len < 1 {
            return Err(Error::InvalidConfig("min token length must be >= 1".into()));
        }
        Ok(())
    }

    pub fn set_boilerplate(&mut self, phrases: Vec<String>) {
        self.boilerplate = normalize_phrases(phrases);
    }

    pub fn load_stopwords(&mut self, path: &Path) -> Result<()> {
        self.stopwords = read_list(path)?.into_iter().collect();
        Ok(())
    }

    pub fn load_boilerplate(&mut self, path: &Path) -> Result<()> {
        let phrases = read_list(path)?;
        self.set_boilerplate(phrases);
        Ok(())
    }

    pub fn load_lemma_exceptions(&mut self, path: &Path) -> Result<()> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        self.lemmatizer = Lemmatizer::from_table(&text)?;
        Ok(())
    }
}

/// Parses a line-oriented list: one entry per line, `#` starts a comment.
pub fn parse_list(text: &str) -> Vec<String> {
    text.lines()
        .map(|l| l.split('#').next().unwrap_or("").trim())
        .filter(|l| !l.is_empty())
        .map(str::to_string)
        .collect()
}

pub fn read_list(path: &Path) -> Result<Vec<String>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    Ok(parse_list(&text))
}

// Phrases go through the same character-level cleaning as text so they can
// match cleaned documents.
fn normalize_phrases(phrases: Vec<String>) -> Vec<String> {
    let mut out: Vec<String> = phrases
        .iter()
        .map(|p| normalize_chars(p))
        .filter(|p| !p.is_empty())
        .collect();
    out.sort();
    out.dedup();
    out
}

fn url_pattern() -> &'static Regex {
    static URL: OnceLock<Regex> = OnceLock::new();
    URL.get_or_init(|| Regex::new(r"(?:[a-z][a-z0-9+.\-]*://|www\.)\S*").unwrap())
}

/// Lowercase, drop URLs, digits and punctuation, collapse whitespace.
fn normalize_chars(raw: &str) -> String {
    let lowered = raw.to_lowercase();
    let no_urls = url_pattern().replace_all(&lowered, " ");
    let mut out = String::with_capacity(no_urls.len());
    for c in no_urls.chars() {
        if c.is_whitespace() {
            out.push(' ');
        } else if c.is_alphabetic() && !c.is_numeric() {
            out.push(c);
        }
        // Digits and every other non-alphanumeric character are dropped.
    }
    out.split_whitespace().collect::<Vec<_>>().join(" ")
}

/// Removes whole-word occurrences of each phrase until none remain.
fn strip_phrases(text: String, phrases: &[String]) -> String {
    let mut words: Vec<&str> = text.split(' ').filter(|w| !w.is_empty()).collect();
    let phrase_words: Vec<Vec<&str>> = phrases.iter().map(|p| p.split(' ').collect()).collect();
    loop {
        let mut changed = false;
        for pw in &phrase_words {
            let mut i = 0;
            while pw.len() <= words.len() && i + pw.len() <= words.len() {
                if words[i..i + pw.len()] == pw[..] {
                    words.drain(i..i + pw.len());
                    changed = true;
                    // A removal can join two halves into a new match.
                    i = i.saturating_sub(pw.len());
                } else {
                    i += 1;
                }
            }
        }
        if !changed {
            break;
        }
    }
    words.join(" ")
}

/// Cleans raw text.
///
/// Lowercases, removes URL spans (scheme-prefixed or `www.`-prefixed runs up
/// to whitespace), all digits, every character that is neither a letter nor
/// whitespace, and configured boilerplate phrases; then collapses whitespace.
pub fn clean_text(raw: &str, cfg: &PrepConfig) -> CleanText {
    let chars = normalize_chars(raw);
    if cfg.boilerplate.is_empty() {
        return CleanText(chars);
    }
    CleanText(strip_phrases(chars, &cfg.boilerplate))
}

pub fn tokenize(cleaned: &CleanText) -> Vec<String> {
    cleaned.0.split_whitespace().map(str::to_string).collect()
}

/// Drops stopwords and tokens shorter than the configured minimum, in order.
pub fn filter_tokens(tokens: Vec<String>, cfg: &PrepConfig) -> Vec<String> {
    tokens
        .into_iter()
        .filter(|t| t.chars().count() >= cfg.min_token_len && !cfg.stopwords.contains(t))
        .collect()
}

pub fn lemmatize(word: &str, cfg: &PrepConfig) -> String {
    cfg.lemmatizer.lemmatize(word)
}

fn normalize_token(token: String, cfg: &PrepConfig) -> String {
    match cfg.mode {
        PrepMode::RawFiltered => token,
        PrepMode::Stemmed => porter_stem(&token),
        PrepMode::Lemmatized => cfg.lemmatizer.lemmatize(&token),
    }
}

/// Full pipeline over one document body.
pub fn preprocess_document(raw: &str, cfg: &PrepConfig) -> TokenSequence {
    let cleaned = clean_text(raw, cfg);
    let tokens = filter_tokens(tokenize(&cleaned), cfg)
        .into_iter()
        .map(|t| normalize_token(t, cfg))
        // Normalization can land on a short form or a stopword ("others" -> "other").
        .filter(|t| t.chars().count() >= cfg.min_token_len && !cfg.stopwords.contains(t))
        .collect();
    TokenSequence::new(tokens, cfg.mode)
}

/// Text fed to the pipeline for a document, honouring `include_title`.
pub fn document_text(title: &str, body: &str, cfg: &PrepConfig) -> String {
    if cfg.include_title && !title.trim().is_empty() {
        format!("{title}\n{body}")
    } else {
        body.to_string()
    }
}
