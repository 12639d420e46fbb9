use super::ast::Pos;
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Eq)]
pub(crate) enum Tok {
    Ident(String),
    Int(String),
    Str(String),
    Punct(&'static str),
    Eof,
}

impl Tok {
    pub(crate) fn describe(&self) -> String {
        match self {
            Tok::Ident(s) | Tok::Int(s) | Tok::Str(s) => format!("'{s}'"),
            Tok::Punct(p) => format!("'{p}'"),
            Tok::Eof => "end of input".to_string(),
        }
    }
}

#[derive(Debug, Clone)]
pub(crate) struct Token {
    pub tok: Tok,
    pub pos: Pos,
}

// Longest first so that maximal munch works by linear scan.
const PUNCTS: [&str; 46] = [
    "<<=", ">>=", "->", "++", "--", "<<", ">>", "<=", ">=", "==", "!=", "&&", "||", "+=", "-=",
    "*=", "/=", "%=", "&=", "|=", "^=", "+", "-", "*", "/", "%", "<", ">", "=", "!", "~", "&",
    "|", "^", "(", ")", "{", "}", "[", "]", ";", ",", ".", "?", ":", "#",
];

pub(crate) fn tokenize(src: &str) -> Result<Vec<Token>> {
    let chars: Vec<char> = src.chars().collect();
    let mut out = Vec::new();
    let (mut i, mut line, mut col) = (0usize, 1usize, 1usize);

    let advance = |i: &mut usize, line: &mut usize, col: &mut usize, n: usize, chars: &[char]| {
        for _ in 0..n {
            if chars[*i] == '\n' {
                *line += 1;
                *col = 1;
            } else {
                *col += 1;
            }
            *i += 1;
        }
    };

    while i < chars.len() {
        let c = chars[i];
        let pos = Pos { line, col };
        if c.is_whitespace() {
            advance(&mut i, &mut line, &mut col, 1, &chars);
            continue;
        }
        if c == '/' && chars.get(i + 1) == Some(&'/') {
            while i < chars.len() && chars[i] != '\n' {
                advance(&mut i, &mut line, &mut col, 1, &chars);
            }
            continue;
        }
        if c == '/' && chars.get(i + 1) == Some(&'*') {
            advance(&mut i, &mut line, &mut col, 2, &chars);
            loop {
                if i >= chars.len() {
                    return Err(Error::Syntax {
                        line: pos.line,
                        col: pos.col,
                        message: "unterminated comment".into(),
                    });
                }
                if chars[i] == '*' && chars.get(i + 1) == Some(&'/') {
                    advance(&mut i, &mut line, &mut col, 2, &chars);
                    break;
                }
                advance(&mut i, &mut line, &mut col, 1, &chars);
            }
            continue;
        }
        if c.is_ascii_alphabetic() || c == '_' {
            let start = i;
            while i < chars.len() && (chars[i].is_ascii_alphanumeric() || chars[i] == '_') {
                i += 1;
                col += 1;
            }
            out.push(Token {
                tok: Tok::Ident(chars[start..i].iter().collect()),
                pos,
            });
            continue;
        }
        if c.is_ascii_digit() {
            let start = i;
            while i < chars.len() && (chars[i].is_ascii_alphanumeric()) {
                i += 1;
                col += 1;
            }
            let text: String = chars[start..i].iter().collect();
            if chars.get(i) == Some(&'.') {
                return Err(Error::Syntax {
                    line: pos.line,
                    col: pos.col,
                    message: format!("floating-point literal '{text}.' is outside the supported subset"),
                });
            }
            out.push(Token { tok: Tok::Int(text), pos });
            continue;
        }
        if c == '"' {
            let start = i;
            advance(&mut i, &mut line, &mut col, 1, &chars);
            loop {
                match chars.get(i) {
                    None | Some('\n') => {
                        return Err(Error::Syntax {
                            line: pos.line,
                            col: pos.col,
                            message: "unterminated string literal".into(),
                        })
                    }
                    Some('\\') => {
                        let n = 2.min(chars.len() - i);
                        advance(&mut i, &mut line, &mut col, n, &chars)
                    }
                    Some('"') => {
                        advance(&mut i, &mut line, &mut col, 1, &chars);
                        break;
                    }
                    Some(_) => advance(&mut i, &mut line, &mut col, 1, &chars),
                }
            }
            out.push(Token {
                tok: Tok::Str(chars[start..i].iter().collect()),
                pos,
            });
            continue;
        }
        let rest: String = chars[i..chars.len().min(i + 3)].iter().collect();
        match PUNCTS.iter().find(|p| rest.starts_with(**p)) {
            Some(p) => {
                advance(&mut i, &mut line, &mut col, p.len(), &chars);
                out.push(Token { tok: Tok::Punct(p), pos });
            }
            None => {
                return Err(Error::Syntax {
                    line: pos.line,
                    col: pos.col,
                    message: format!("unexpected character '{c}'"),
                })
            }
        }
    }
    out.push(Token {
        tok: Tok::Eof,
        pos: Pos { line, col },
    });
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn positions_and_kinds() {
        let toks = tokenize("int f(\n  a->b += 0x1F; \"s\\\"t\" // c\n)").unwrap();
        let kinds: Vec<_> = toks.iter().map(|t| t.tok.clone()).collect();
        assert_eq!(kinds[0], Tok::Ident("int".into()));
        assert_eq!(kinds[4], Tok::Punct("->"));
        assert_eq!(kinds[6], Tok::Punct("+="));
        assert_eq!(kinds[7], Tok::Int("0x1F".into()));
        assert_eq!(kinds[9], Tok::Str("\"s\\\"t\"".into()));
        assert_eq!(toks[3].pos, Pos { line: 2, col: 3 });
        assert_eq!(toks[10].tok, Tok::Punct(")"));
        assert_eq!(toks[10].pos, Pos { line: 3, col: 1 });
    }

    #[test]
    fn rejects_stray_characters() {
        let err = tokenize("int f() { return @; }").unwrap_err();
        assert_eq!(err.to_string(), "1:18: unexpected character '@'");
    }
}
