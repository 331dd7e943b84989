use super::lexicon::ConceptDictionary;
use super::tokenize::canonical_surface;

pub const LOCAL_PREFIX: &str = "LOCAL:";

/// Edit distance (unit-cost insert, delete, substitute) over chars, two-row DP.
pub fn levenshtein(a: &[char], b: &[char]) -> usize {
    if a.is_empty() {
        return b.len();
    }
    if b.is_empty() {
        return a.len();
    }
    let mut prev: Vec<usize> = (0..=b.len()).collect();
    let mut curr = vec![0; b.len() + 1];
    for (i, ca) in a.iter().enumerate() {
        curr[0] = i + 1;
        for (j, cb) in b.iter().enumerate() {
            let sub = prev[j] + usize::from(ca != cb);
            curr[j + 1] = sub.min(prev[j + 1] + 1).min(curr[j] + 1);
        }
        std::mem::swap(&mut prev, &mut curr);
    }
    prev[b.len()]
}

/// `lev(a, b) / max(|a|, |b|)`, 0 for two empty strings.
pub fn normalized_levenshtein(a: &str, b: &str) -> f64 {
    let a: Vec<char> = a.chars().collect();
    let b: Vec<char> = b.chars().collect();
    normalized_levenshtein_chars(&a, &b)
}

pub fn normalized_levenshtein_chars(a: &[char], b: &[char]) -> f64 {
    let longest = a.len().max(b.len());
    if longest == 0 {
        return 0.0;
    }
    levenshtein(a, b) as f64 / longest as f64
}

/// Identifier minted for a surface with no dictionary concept within the
/// threshold: lowercase, internal whitespace collapsed to underscores.
pub fn local_id(surface: &str) -> String {
    format!("{LOCAL_PREFIX}{}", canonical_surface(surface).replace(' ', "_"))
}

/// Maps a surface string to a concept identifier: exact match, else the
/// closest dictionary term within `theta` (ties to the smallest CUI), else
/// a local identifier.
pub fn normalize(surface: &str, dictionary: &ConceptDictionary, theta: f64) -> String {
    let canonical = canonical_surface(surface);
    if let Some(cui) = dictionary.exact(&canonical) {
        return cui.to_string();
    }
    let query: Vec<char> = canonical.chars().collect();
    let mut best: Option<(f64, &str)> = None;
    for (term, cui) in dictionary.terms() {
        let longest = query.len().max(term.len());
        if longest == 0 {
            continue;
        }
        // Length difference is a lower bound on the edit distance.
        let bound = query.len().abs_diff(term.len()) as f64 / longest as f64;
        if bound > theta {
            continue;
        }
        let d = normalized_levenshtein_chars(&query, term);
        if d > theta {
            continue;
        }
        best = match best {
            None => Some((d, cui)),
            Some((bd, bc)) if d < bd || (d == bd && cui.as_str() < bc) => Some((d, cui)),
            keep => keep,
        };
    }
    match best {
        Some((_, cui)) => cui.to_string(),
        None => local_id(surface),
    }
}
