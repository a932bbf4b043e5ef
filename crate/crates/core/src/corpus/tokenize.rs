/// Characters split off the start or end of a whitespace-delimited chunk.
/// Symbols such as `%`, `$` or `-` stay attached to their word.
const SPLIT_PUNCT: &[char] = &[
    '.', ',', ';', ':', '!', '?', '"', '\'', '(', ')', '[', ']', '{', '}', '\u{201c}', '\u{201d}', '\u{2018}',
    '\u{2019}', '\u{ab}', '\u{bb}', '\u{2026}',
];

fn is_split_punct(c: char) -> bool {
    SPLIT_PUNCT.contains(&c)
}

/// A token with its `[begin, end)` offsets counted in characters (not bytes).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Token {
    pub text: String,
    pub begin: usize,
    pub end: usize,
}

/// Whitespace tokenization with leading and trailing punctuation split into
/// single-character tokens. Tokens keep their original casing.
pub fn tokenize(text: &str) -> Vec<Token> {
    let chars: Vec<char> = text.chars().collect();
    let mut tokens = Vec::new();
    let mut i = 0;
    while i < chars.len() {
        if chars[i].is_whitespace() {
            i += 1;
            continue;
        }
        let start = i;
        while i < chars.len() && !chars[i].is_whitespace() {
            i += 1;
        }
        split_chunk(&chars, start, i, &mut tokens);
    }
    tokens
}

fn split_chunk(chars: &[char], mut lo: usize, mut hi: usize, out: &mut Vec<Token>) {
    let single = |at: usize| Token {
        text: chars[at].to_string(),
        begin: at,
        end: at + 1,
    };
    while lo < hi && is_split_punct(chars[lo]) {
        out.push(single(lo));
        lo += 1;
    }
    let mut trailing = Vec::new();
    while hi > lo && is_split_punct(chars[hi - 1]) {
        trailing.push(single(hi - 1));
        hi -= 1;
    }
    if lo < hi {
        out.push(Token {
            text: chars[lo..hi].iter().collect(),
            begin: lo,
            end: hi,
        });
    }
    out.extend(trailing.into_iter().rev());
}

/// Substring between two character offsets.
pub fn char_slice(text: &str, begin: usize, end: usize) -> &str {
    let mut indices = text.char_indices().map(|(b, _)| b).chain(std::iter::once(text.len()));
    let b = indices.nth(begin).unwrap_or(text.len());
    let e = if end > begin {
        indices.nth(end - begin - 1).unwrap_or(text.len())
    } else {
        b
    };
    &text[b..e]
}
