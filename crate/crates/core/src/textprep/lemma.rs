//! Rule-based lemmatizer with verb-sense defaults.
//!
//! Lookup order: the exception table, then ordered suffix rules (`-ies`/`-ied`
//! to `-y`, `-ing`/`-ed` with consonant undoubling and `e` restoration,
//! `-es`/`-s`), else identity. A single rule application is repeated until the
//! word stops changing, so every output is a fixed point of the lemmatizer.

use std::collections::HashMap;

use crate::error::{Error, Result};

const DEFAULT_EXCEPTIONS: &str = include_str!("../../data/lemma_exceptions.txt");

const MIN_LEMMA_LEN: usize = 3;

fn is_vowel_at(w: &[u8], i: usize) -> bool {
    match w[i] {
        b'a' | b'e' | b'i' | b'o' | b'u' => true,
        b'y' => i > 0 && !is_vowel_at(w, i - 1),
        _ => false,
    }
}

fn is_consonant_at(w: &[u8], i: usize) -> bool {
    !is_vowel_at(w, i)
}

fn has_vowel(w: &[u8]) -> bool {
    (0..w.len()).any(|i| is_vowel_at(w, i))
}

fn measure(w: &[u8]) -> usize {
    let mut m = 0;
    let mut prev_vowel = false;
    for i in 0..w.len() {
        let v = is_vowel_at(w, i);
        if prev_vowel && !v {
            m += 1;
        }
        prev_vowel = v;
    }
    m
}

fn ends_cvc(w: &[u8]) -> bool {
    let n = w.len();
    n >= 3
        && is_consonant_at(w, n - 3)
        && is_vowel_at(w, n - 2)
        && is_consonant_at(w, n - 1)
        && !matches!(w[n - 1], b'w' | b'x' | b'y')
}

/// Whether a verb stem left after stripping `-ed`/`-ing` lost a final `e`.
fn needs_e(s: &[u8]) -> bool {
    let n = s.len();
    let last = s[n - 1];
    let prev = s[n - 2];
    // Consonant three from the end, for two-letter ending patterns.
    let c3 = n >= 3 && is_consonant_at(s, n - 3);
    let tail = |t: &str| s.ends_with(t.as_bytes());

    if matches!(last, b'u' | b'v' | b'c' | b'z') {
        return true;
    }
    if last == b'l' && matches!(prev, b'b' | b'c' | b'd' | b'f' | b'g' | b'k' | b'p' | b't' | b'z') {
        return true;
    }
    if tail("dg") || tail("rg") || tail("eng") || tail("ang") {
        return true;
    }
    if tail("is") || tail("os") || tail("ns") || tail("rs") || tail("ps") || tail("ls") {
        return true;
    }
    if tail("us") && n >= 3 && s[n - 3] != b'o' {
        return true;
    }
    if tail("as") && n >= 3 && (c3 || s[n - 3] == b'e') {
        return true;
    }
    if tail("ir") && n >= 3 && !matches!(s[n - 3], b'a' | b'e' | b'o') {
        return true;
    }
    let consonant_led = [
        "at", "ur", "ut", "id", "ud", "od", "ed", "ad", "ag", "ok", "uk", "um", "in", "ap", "ar",
        "il", "ul",
    ];
    if c3 && consonant_led.iter().any(|t| tail(t)) {
        return true;
    }
    measure(s) == 1 && ends_cvc(s)
}

fn verb_base(stem: &[u8]) -> Option<String> {
    if stem.len() < 2 || !has_vowel(stem) {
        return None;
    }
    let n = stem.len();
    let mut out = stem.to_vec();
    if stem[n - 1] == stem[n - 2] && is_consonant_at(stem, n - 1) {
        // ll, ss, zz and ff belong to the base form (fall, pass, buzz, staff).
        if !matches!(stem[n - 1], b'l' | b's' | b'z' | b'f') {
            out.pop();
        }
    } else if needs_e(stem) {
        out.push(b'e');
    }
    (out.len() >= MIN_LEMMA_LEN).then(|| String::from_utf8(out).unwrap())
}

/// Lemmatizer holding its exception table.
#[derive(Debug, Clone)]
pub struct Lemmatizer {
    exceptions: HashMap<String, String>,
}

impl Default for Lemmatizer {
    fn default() -> Self {
        Self::from_table(DEFAULT_EXCEPTIONS).expect("shipped exception table parses")
    }
}

impl Lemmatizer {
    /// Parses a `form lemma` table; blank lines and `#` comments are skipped.
    pub fn from_table(text: &str) -> Result<Self> {
        let mut exceptions = HashMap::new();
        for (i, line) in text.lines().enumerate() {
            let line = line.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let mut parts = line.split_whitespace();
            match (parts.next(), parts.next(), parts.next()) {
                (Some(form), Some(lemma), None) => {
                    exceptions.insert(form.to_lowercase(), lemma.to_lowercase());
                }
                _ => {
                    return Err(Error::BadRow {
                        row: i + 1,
                        message: format!("expected `form lemma`, got {line:?}"),
                    })
                }
            }
        }
        Ok(Self { exceptions })
    }

    pub fn exceptions(&self) -> impl Iterator<Item = (&str, &str)> {
        self.exceptions.iter().map(|(k, v)| (k.as_str(), v.as_str()))
    }

    /// One rule application.
    fn step(&self, word: &str) -> String {
        if let Some(lemma) = self.exceptions.get(word) {
            return lemma.clone();
        }
        let w = word.as_bytes();
        if w.len() <= MIN_LEMMA_LEN || !w.iter().all(u8::is_ascii_lowercase) {
            return word.to_string();
        }
        let strip = |suffix: &str| &w[..w.len() - suffix.len()];
        let keep_if_long = |s: &[u8]| {
            (s.len() >= MIN_LEMMA_LEN)
                .then(|| String::from_utf8(s.to_vec()).unwrap())
                .unwrap_or_else(|| word.to_string())
        };

        if word.len() >= 5 && (word.ends_with("ies") || word.ends_with("ied")) {
            return format!("{}y", &word[..word.len() - 3]);
        }
        if word.ends_with("ing") {
            return verb_base(strip("ing")).unwrap_or_else(|| word.to_string());
        }
        if word.ends_with("eed") {
            return word.to_string();
        }
        if word.ends_with("ed") {
            return verb_base(strip("ed")).unwrap_or_else(|| word.to_string());
        }
        for suffix in ["sses", "xes", "ches", "shes", "zzes"] {
            if word.ends_with(suffix) {
                return keep_if_long(strip("es"));
            }
        }
        if word.ends_with("ss") || word.ends_with("us") || word.ends_with("is") {
            return word.to_string();
        }
        if word.ends_with("as") && !word.ends_with("eas") {
            return word.to_string();
        }
        if word.ends_with('s') {
            return keep_if_long(strip("s"));
        }
        word.to_string()
    }

    /// Lemma of a lowercase word.
    pub fn lemmatize(&self, word: &str) -> String {
        let mut current = word.to_string();
        // Every rule shortens the word or lands on an exception target, so a
        // handful of rounds always reaches the fixed point.
        for _ in 0..8 {
            let next = self.step(&current);
            if next == current {
                break;
            }
            current = next;
        }
        current
    }
}
