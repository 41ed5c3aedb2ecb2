//! Rule-based tokenizer: split on whitespace, then break each chunk into
//! letter runs, digit runs, and single punctuation characters. Every token
//! carries its source character range, so concatenating the ranges recovers
//! all non-whitespace characters in order.

/// One token with its half-open character range `[start, end)` in the source
/// text. Offsets are Unicode scalar-value indices.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Token {
    pub text: String,
    pub start: usize,
    pub end: usize,
}

#[derive(Clone, Copy, PartialEq)]
enum CharClass {
    Letter,
    Digit,
    Punct,
}

fn classify(c: char) -> CharClass {
    if c.is_alphabetic() {
        CharClass::Letter
    } else if c.is_ascii_digit() {
        CharClass::Digit
    } else {
        CharClass::Punct
    }
}

pub fn tokenize(text: &str) -> Vec<Token> {
    let mut tokens = Vec::new();
    let mut current = String::new();
    let mut start = 0usize;
    let mut class = CharClass::Punct;

    let flush = |tokens: &mut Vec<Token>, current: &mut String, start: usize, end: usize| {
        if !current.is_empty() {
            tokens.push(Token {
                text: std::mem::take(current),
                start,
                end,
            });
        }
    };

    for (i, c) in text.chars().enumerate() {
        if c.is_whitespace() {
            flush(&mut tokens, &mut current, start, i);
            continue;
        }
        let cls = classify(c);
        // Punctuation is always a standalone single-character token;
        // letter and digit runs extend while the class stays the same.
        if current.is_empty() || cls != class || cls == CharClass::Punct {
            flush(&mut tokens, &mut current, start, i);
            start = i;
            class = cls;
        }
        current.push(c);
    }
    let total = text.chars().count();
    flush(&mut tokens, &mut current, start, total);
    tokens
}

/// Substring by character (not byte) indices.
pub fn char_slice(text: &str, start: usize, end: usize) -> String {
    text.chars().take(end).skip(start).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_text_gives_no_tokens() {
        assert!(tokenize("").is_empty());
        assert!(tokenize("   \n\t").is_empty());
    }

    #[test]
    fn splits_punctuation_and_digit_runs() {
        let toks: Vec<String> = tokenize("due 2019/04/01.")
            .into_iter()
            .map(|t| t.text)
            .collect();
        assert_eq!(toks, ["due", "2019", "/", "04", "/", "01", "."]);
    }

    #[test]
    fn mixed_alphanumeric_chunk() {
        let toks: Vec<String> = tokenize("ZQ-93X7").into_iter().map(|t| t.text).collect();
        assert_eq!(toks, ["ZQ", "-", "93", "X", "7"]);
    }

    #[test]
    fn currency_symbol_is_punctuation() {
        let toks: Vec<String> = tokenize("¥12,450,000")
            .into_iter()
            .map(|t| t.text)
            .collect();
        assert_eq!(toks, ["¥", "12", ",", "450", ",", "000"]);
    }

    #[test]
    fn offsets_recover_tokens_and_are_ordered() {
        let text = "Clause 3: supply from 2019/04/01 to ¥5,000 max.";
        let toks = tokenize(text);
        let mut prev_end = 0;
        for t in &toks {
            assert_eq!(char_slice(text, t.start, t.end), t.text);
            assert!(t.start >= prev_end, "offsets must not overlap");
            assert!(t.start < t.end);
            prev_end = t.end;
        }
        // Concatenated ranges give back every non-whitespace character.
        let joined: String = toks.iter().map(|t| t.text.as_str()).collect();
        let no_ws: String = text.chars().filter(|c| !c.is_whitespace()).collect();
        assert_eq!(joined, no_ws);
    }
}
