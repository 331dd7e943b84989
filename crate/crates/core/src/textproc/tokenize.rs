/// A lowercase word token with its character and byte offsets in the source.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Token {
    pub text: String,
    pub start: usize,
    pub end: usize,
    pub byte_start: usize,
    pub byte_end: usize,
}

/// Tokens plus, for each token, whether a sentence boundary (`.`, `;` or a
/// newline) separates it from the next token.
#[derive(Debug, Clone, Default)]
pub struct TokenStream {
    pub tokens: Vec<Token>,
    pub boundary_after: Vec<bool>,
}

impl TokenStream {
    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    /// True when tokens `start..end` lie within one sentence.
    pub fn same_sentence(&self, start: usize, end: usize) -> bool {
        end <= start + 1 || !self.boundary_after[start..end - 1].iter().any(|&b| b)
    }

    pub fn key(&self, start: usize, end: usize) -> String {
        let mut key = String::new();
        for (i, tok) in self.tokens[start..end].iter().enumerate() {
            if i > 0 {
                key.push(' ');
            }
            key.push_str(&tok.text);
        }
        key
    }
}

fn is_boundary(c: char) -> bool {
    matches!(c, '.' | ';' | '\n')
}

/// Splits on whitespace and punctuation: tokens are maximal runs of
/// alphanumeric characters, lowercased.
pub fn tokenize(text: &str) -> TokenStream {
    let mut stream = TokenStream::default();
    let mut current: Option<Token> = None;
    let mut pending_boundary = false;
    for (char_idx, (byte_idx, c)) in text.char_indices().enumerate() {
        if c.is_alphanumeric() {
            match current.as_mut() {
                Some(tok) => {
                    tok.text.extend(c.to_lowercase());
                    tok.end = char_idx + 1;
                    tok.byte_end = byte_idx + c.len_utf8();
                }
                None => {
                    if let Some(last) = stream.boundary_after.last_mut() {
                        *last = pending_boundary;
                    }
                    pending_boundary = false;
                    current = Some(Token {
                        text: c.to_lowercase().collect(),
                        start: char_idx,
                        end: char_idx + 1,
                        byte_start: byte_idx,
                        byte_end: byte_idx + c.len_utf8(),
                    });
                }
            }
        } else {
            if let Some(tok) = current.take() {
                stream.tokens.push(tok);
                stream.boundary_after.push(false);
            }
            pending_boundary |= is_boundary(c);
        }
    }
    if let Some(tok) = current.take() {
        stream.tokens.push(tok);
        stream.boundary_after.push(false);
    }
    stream
}

/// Lowercases and collapses internal whitespace to single spaces.
pub fn canonical_surface(s: &str) -> String {
    s.split_whitespace()
        .map(str::to_lowercase)
        .collect::<Vec<_>>()
        .join(" ")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn splits_on_punctuation_and_tracks_offsets() {
        let s = tokenize("No fever. Denies chest-pain;\nok");
        let words: Vec<&str> = s.tokens.iter().map(|t| t.text.as_str()).collect();
        assert_eq!(words, ["no", "fever", "denies", "chest", "pain", "ok"]);
        assert_eq!(s.boundary_after, [false, true, false, false, true, false]);
        assert_eq!((s.tokens[1].start, s.tokens[1].end), (3, 8));
        assert!(s.same_sentence(2, 5));
        assert!(!s.same_sentence(1, 3));
    }

    #[test]
    fn char_offsets_with_multibyte_text() {
        let s = tokenize("fièvre élevée");
        assert_eq!(s.tokens[0].text, "fièvre");
        assert_eq!((s.tokens[1].start, s.tokens[1].end), (7, 13));
        assert_eq!(s.tokens[1].byte_start, 8);
    }

    #[test]
    fn empty_text() {
        assert!(tokenize("").is_empty());
        assert!(tokenize(" ,; ").is_empty());
    }

    #[test]
    fn canonical_surface_collapses_whitespace() {
        assert_eq!(canonical_surface("  Shortness\tof  BREATH "), "shortness of breath");
    }
}
