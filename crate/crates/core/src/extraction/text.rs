//! Sentence splitting and tokenization over character offsets.

use std::collections::HashSet;
use std::io::BufRead;

use super::Token;

/// Character-indexed view of a document. All offsets in this crate count
/// Unicode scalar values, not bytes.
#[derive(Debug, Clone)]
pub struct DocText {
    chars: Vec<char>,
}

impl DocText {
    pub fn new(text: &str) -> Self {
        Self {
            chars: text.chars().collect(),
        }
    }

    pub fn len(&self) -> usize {
        self.chars.len()
    }

    pub fn is_empty(&self) -> bool {
        self.chars.is_empty()
    }

    pub fn chars(&self) -> &[char] {
        &self.chars
    }

    pub fn slice(&self, start: usize, end: usize) -> String {
        self.chars[start..end].iter().collect()
    }

    pub fn lower_slice(&self, start: usize, end: usize) -> String {
        self.slice(start, end).to_lowercase()
    }
}

const DEFAULT_FUNCTION_WORDS: &str = include_str!("../../data/function_words.txt");

/// Closed-class words (determiners, conjunctions, prepositions, auxiliaries)
/// that may not sit at either edge of a candidate span.
#[derive(Debug, Clone)]
pub struct FunctionWords {
    words: HashSet<String>,
}

impl Default for FunctionWords {
    fn default() -> Self {
        Self::from_lines(DEFAULT_FUNCTION_WORDS.lines())
    }
}

impl FunctionWords {
    /// One word per line; blank lines and `#` comments are skipped.
    pub fn from_reader<R: BufRead>(reader: R) -> std::io::Result<Self> {
        let lines = reader.lines().collect::<Result<Vec<_>, _>>()?;
        Ok(Self::from_lines(lines.iter().map(String::as_str)))
    }

    fn from_lines<'a>(lines: impl Iterator<Item = &'a str>) -> Self {
        let words = lines
            .map(str::trim)
            .filter(|l| !l.is_empty() && !l.starts_with('#'))
            .map(str::to_lowercase)
            .collect();
        Self { words }
    }

    pub fn contains(&self, word: &str) -> bool {
        self.words.contains(&word.to_lowercase())
    }

    pub fn len(&self) -> usize {
        self.words.len()
    }

    pub fn is_empty(&self) -> bool {
        self.words.is_empty()
    }
}

pub fn is_punctuation(c: char) -> bool {
    c.is_ascii_punctuation()
        || matches!(
            c,
            '\u{2018}'
                | '\u{2019}'
                | '\u{201C}'
                | '\u{201D}'
                | '\u{2013}'
                | '\u{2014}'
                | '\u{2026}'
                | '\u{2022}'
                | '\u{00B7}'
                | '\u{00AB}'
                | '\u{00BB}'
        )
}

const ABBREVIATIONS: &[&str] = &[
    "e.g", "i.e", "dr", "mr", "mrs", "ms", "prof", "st", "vs", "cf", "fig", "figs", "approx", "al",
    "jr", "sr", "inc", "ltd", "dept", "ca", "resp", "pt", "pts",
];

fn is_guarded_period(chars: &[char], dot: usize) -> bool {
    let mut begin = dot;
    while begin > 0 && !chars[begin - 1].is_whitespace() {
        begin -= 1;
    }
    let word: String = chars[begin..dot]
        .iter()
        .skip_while(|c| is_punctuation(**c))
        .collect::<String>()
        .to_lowercase();
    if word.chars().count() == 1 && word.chars().all(char::is_alphabetic) {
        return true;
    }
    ABBREVIATIONS.contains(&word.as_str())
}

/// Splits into trimmed sentences at `.`, `?`, `!` followed by whitespace or
/// end of text, and at every newline. A period after a single letter or a
/// known abbreviation does not end a sentence.
pub fn split_sentences(text: &DocText) -> Vec<(usize, usize)> {
    let chars = text.chars();
    let mut out = Vec::new();
    let mut start: Option<usize> = None;
    let mut last_end = 0;
    for (i, &c) in chars.iter().enumerate() {
        if c.is_whitespace() {
            if c == '\n' {
                if let Some(s) = start.take() {
                    out.push((s, last_end));
                }
            }
            continue;
        }
        if start.is_none() {
            start = Some(i);
        }
        last_end = i + 1;
        let at_break = chars.get(i + 1).is_none_or(|n| n.is_whitespace());
        let terminal = matches!(c, '?' | '!') || (c == '.' && !is_guarded_period(chars, i));
        if terminal && at_break {
            if let Some(s) = start.take() {
                out.push((s, i + 1));
            }
        }
    }
    if let Some(s) = start {
        out.push((s, last_end));
    }
    out
}

/// Tokenizes `text[start..end]` on whitespace, peeling leading and trailing
/// punctuation into single-character tokens. Offsets are document offsets.
pub fn tokenize(text: &DocText, start: usize, end: usize, lexicon: &FunctionWords) -> Vec<Token> {
    let chars = text.chars();
    let mut tokens = Vec::new();
    let mut i = start;
    while i < end {
        if chars[i].is_whitespace() {
            i += 1;
            continue;
        }
        let word_start = i;
        while i < end && !chars[i].is_whitespace() {
            i += 1;
        }
        let word_end = i;

        let mut core_start = word_start;
        while core_start < word_end && is_punctuation(chars[core_start]) {
            core_start += 1;
        }
        let mut core_end = word_end;
        while core_end > core_start && is_punctuation(chars[core_end - 1]) {
            core_end -= 1;
        }
        for p in word_start..core_start {
            tokens.push(make_token(text, p, p + 1, lexicon));
        }
        if core_start < core_end {
            tokens.push(make_token(text, core_start, core_end, lexicon));
        }
        for p in core_end.max(core_start)..word_end {
            tokens.push(make_token(text, p, p + 1, lexicon));
        }
    }
    tokens
}

fn make_token(text: &DocText, start: usize, end: usize, lexicon: &FunctionWords) -> Token {
    let s = text.slice(start, end);
    let is_punctuation = s.chars().all(is_punctuation);
    let is_function_word = !is_punctuation && lexicon.contains(&s);
    Token {
        text: s,
        start,
        end,
        is_function_word,
        is_punctuation,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sentences(s: &str) -> Vec<(usize, usize)> {
        split_sentences(&DocText::new(s))
    }

    fn tok(s: &str) -> Vec<Token> {
        let d = DocText::new(s);
        tokenize(&d, 0, d.len(), &FunctionWords::default())
    }

    #[test]
    fn empty_text_has_no_sentences() {
        assert!(sentences("").is_empty());
        assert!(sentences("   \n ").is_empty());
    }

    #[test]
    fn two_sentences_offsets() {
        assert_eq!(
            sentences("Small hernia. Mild distention."),
            [(0, 13), (14, 30)]
        );
    }

    #[test]
    fn abbreviation_guard() {
        assert_eq!(sentences("Dr. Smith noted pallor."), [(0, 23)]);
        assert_eq!(
            sentences("Some signs, e.g. pallor. More."),
            [(0, 24), (25, 30)]
        );
        assert_eq!(sentences("Seen by J. Doe today."), [(0, 21)]);
    }

    #[test]
    fn decimals_and_newlines() {
        assert_eq!(
            sentences("Weight 3.5 kg\nHEAD: normal"),
            [(0, 13), (14, 26)]
        );
        assert_eq!(sentences("Why? Because!"), [(0, 4), (5, 13)]);
    }

    #[test]
    fn sentences_tile_non_whitespace() {
        let text = "  ABDOMEN: Small umbilical hernia. Mild distention.\n\nSoft.  ";
        let d = DocText::new(text);
        let sents = split_sentences(&d);
        for (i, c) in d.chars().iter().enumerate() {
            let covered = sents.iter().filter(|(s, e)| *s <= i && i < *e).count();
            if c.is_whitespace() {
                assert!(covered <= 1);
            } else {
                assert_eq!(covered, 1, "char {i} `{c}`");
            }
        }
    }

    #[test]
    fn plain_tokens() {
        let t = tok("small umbilical hernia");
        assert_eq!(t.len(), 3);
        assert!(t.iter().all(|t| !t.is_function_word && !t.is_punctuation));
        assert_eq!((t[1].start, t[1].end), (6, 15));
    }

    #[test]
    fn trailing_punctuation_split() {
        let t = tok("hernia,");
        let texts: Vec<_> = t.iter().map(|t| t.text.as_str()).collect();
        assert_eq!(texts, ["hernia", ","]);
        assert!(t[1].is_punctuation);
        assert!(!t[0].is_punctuation);
    }

    #[test]
    fn function_words_flagged() {
        let t = tok("of the heart");
        assert!(t[0].is_function_word && t[1].is_function_word);
        assert!(!t[2].is_function_word);
        let t = tok("Of The heart");
        assert!(t[0].is_function_word && t[1].is_function_word);
    }

    #[test]
    fn inner_punctuation_kept() {
        let t = tok("(X-linked), e.g.");
        let texts: Vec<_> = t.iter().map(|t| t.text.as_str()).collect();
        assert_eq!(texts, ["(", "X-linked", ")", ",", "e.g", "."]);
    }

    #[test]
    fn token_offsets_match_source() {
        let text = "Fièvre élevée; (toux)…";
        let d = DocText::new(text);
        for t in tokenize(&d, 0, d.len(), &FunctionWords::default()) {
            assert!(t.start < t.end);
            assert_eq!(d.slice(t.start, t.end), t.text);
        }
    }

    #[test]
    fn shipped_lexicon_size() {
        let lex = FunctionWords::default();
        assert!((110..=140).contains(&lex.len()), "{}", lex.len());
        assert!(lex.contains("The"));
        assert!(!lex.contains("hernia"));
    }

    #[test]
    fn custom_lexicon() {
        let lex = FunctionWords::from_reader("# c\nfoo\n\nBar\n".as_bytes()).unwrap();
        assert_eq!(lex.len(), 2);
        assert!(lex.contains("bar"));
    }
}
