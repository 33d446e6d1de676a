use crate::error::{Diagnostic, ErrorCode, Pos};

#[derive(Clone, Debug, PartialEq)]
pub(crate) enum Tok {
    Word { text: String, quoted: bool },
    LBrace,
    RBrace,
    LParen,
    RParen,
    Lt,
    Gt,
    Comma,
    Semi,
    Colon,
    Eq,
    Dot,
    /// `<-`
    LArrow,
    /// `->`
    RArrow,
    /// `=>`
    FatArrow,
}

impl Tok {
    pub(crate) fn describe(&self) -> String {
        match self {
            Tok::Word { text, quoted: true } => format!("\"{text}\""),
            Tok::Word { text, .. } => format!("`{text}`"),
            Tok::LBrace => "`{`".into(),
            Tok::RBrace => "`}`".into(),
            Tok::LParen => "`(`".into(),
            Tok::RParen => "`)`".into(),
            Tok::Lt => "`<`".into(),
            Tok::Gt => "`>`".into(),
            Tok::Comma => "`,`".into(),
            Tok::Semi => "`;`".into(),
            Tok::Colon => "`:`".into(),
            Tok::Eq => "`=`".into(),
            Tok::Dot => "`.`".into(),
            Tok::LArrow => "`<-`".into(),
            Tok::RArrow => "`->`".into(),
            Tok::FatArrow => "`=>`".into(),
        }
    }
}

#[derive(Clone, Debug)]
pub(crate) struct Token {
    pub tok: Tok,
    pub pos: Pos,
}

fn is_word_start(c: char) -> bool {
    c.is_alphanumeric() || c == '_' || c == '$'
}

fn is_word_char(c: char) -> bool {
    c.is_alphanumeric() || c == '_' || c == '$' || c == '+' || c == '-'
}

pub(crate) fn lex(src: &str) -> Result<Vec<Token>, Diagnostic> {
    let chars: Vec<char> = src.chars().collect();
    let mut out = Vec::new();
    let (mut i, mut line, mut col) = (0usize, 1u32, 1u32);

    macro_rules! bump {
        () => {{
            if chars[i] == '\n' {
                line += 1;
                col = 1;
            } else {
                col += 1;
            }
            i += 1;
        }};
    }

    while i < chars.len() {
        let c = chars[i];
        let pos = Pos::new(line, col);
        if c.is_whitespace() {
            bump!();
            continue;
        }
        if c == '/' && chars.get(i + 1) == Some(&'/') {
            while i < chars.len() && chars[i] != '\n' {
                bump!();
            }
            continue;
        }
        let next = chars.get(i + 1).copied();
        let two = |t: Tok| Token { tok: t, pos };
        let tok = match c {
            '{' => Tok::LBrace,
            '}' => Tok::RBrace,
            '(' => Tok::LParen,
            ')' => Tok::RParen,
            ',' => Tok::Comma,
            ';' => Tok::Semi,
            ':' => Tok::Colon,
            '.' => Tok::Dot,
            '>' => Tok::Gt,
            '<' if next == Some('-') => {
                bump!();
                bump!();
                out.push(two(Tok::LArrow));
                continue;
            }
            '<' => Tok::Lt,
            '=' if next == Some('>') => {
                bump!();
                bump!();
                out.push(two(Tok::FatArrow));
                continue;
            }
            '=' => Tok::Eq,
            '-' if next == Some('>') => {
                bump!();
                bump!();
                out.push(two(Tok::RArrow));
                continue;
            }
            '"' => {
                bump!();
                let mut text = String::new();
                loop {
                    match chars.get(i).copied() {
                        None | Some('\n') => {
                            return Err(Diagnostic::at(ErrorCode::Parse, pos, "unterminated string literal"))
                        }
                        Some('"') => {
                            bump!();
                            break;
                        }
                        Some('\\') => {
                            bump!();
                            match chars.get(i).copied() {
                                Some(e @ ('"' | '\\')) => {
                                    text.push(e);
                                    bump!();
                                }
                                _ => {
                                    return Err(Diagnostic::at(
                                        ErrorCode::Parse,
                                        Pos::new(line, col),
                                        "invalid escape in string literal",
                                    ))
                                }
                            }
                        }
                        Some(ch) => {
                            text.push(ch);
                            bump!();
                        }
                    }
                }
                out.push(Token { tok: Tok::Word { text, quoted: true }, pos });
                continue;
            }
            c if is_word_start(c) => {
                let numeric = c.is_ascii_digit();
                let mut text = String::new();
                while let Some(&ch) = chars.get(i) {
                    let ok = is_word_char(ch) || (numeric && ch == '.');
                    // `a->b` ends the word before the arrow.
                    if !ok || (ch == '-' && chars.get(i + 1) == Some(&'>')) {
                        break;
                    }
                    text.push(ch);
                    bump!();
                }
                out.push(Token { tok: Tok::Word { text, quoted: false }, pos });
                continue;
            }
            other => {
                return Err(Diagnostic::at(ErrorCode::Parse, pos, format!("unexpected character {other:?}")));
            }
        };
        bump!();
        out.push(Token { tok, pos });
    }
    Ok(out)
}
