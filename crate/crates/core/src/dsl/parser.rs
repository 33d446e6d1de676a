use std::collections::HashSet;

use super::ast::*;
use super::lexer::{lex, Tok, Token};
use crate::error::{Diagnostic, ErrorCode, Pos, Result};

pub(crate) const KEYWORDS: &[&str] = &[
    "type", "map", "class", "extends", "situation", "input", "output", "private", "given", "default", "edge",
];

/// Names that cannot be declared as types.
const BUILTIN_TYPES: &[&str] = &["Boolean", "Integer", "Real"];

/// Parses a model from raw bytes; invalid UTF-8 is reported as `E_PARSE`.
pub fn parse_model_bytes(bytes: &[u8]) -> Result<ModelSource> {
    match std::str::from_utf8(bytes) {
        Ok(s) => parse_model(s),
        Err(e) => {
            let prefix = &bytes[..e.valid_up_to()];
            let line = prefix.iter().filter(|&&b| b == b'\n').count() as u32 + 1;
            let last_line = prefix.rsplit(|&b| b == b'\n').next().unwrap_or(&[]);
            let col = String::from_utf8_lossy(last_line).chars().count() as u32 + 1;
            Err(Diagnostic::at(ErrorCode::Parse, Pos::new(line, col), "invalid UTF-8").into())
        }
    }
}

/// Parses `.oobn` source text into a [`ModelSource`].
pub fn parse_model(src: &str) -> Result<ModelSource> {
    let toks = lex(src)?;
    let mut p = Parser { toks, i: 0 };
    let mut types = Vec::new();
    let mut maps = Vec::new();
    let mut classes = Vec::new();
    let mut situations: Vec<ClassDecl> = Vec::new();
    while let Some(t) = p.peek() {
        let pos = t.pos;
        match p.keyword() {
            Some("type") => types.push(p.type_decl()?),
            Some("map") => maps.push(p.map_decl()?),
            Some("class") => classes.push(p.class_decl(false)?),
            Some("situation") => situations.push(p.class_decl(true)?),
            _ => {
                let what = p.peek().unwrap().tok.describe();
                return Err(Diagnostic::at(
                    ErrorCode::Parse,
                    pos,
                    format!("expected `type`, `map`, `class` or `situation`, found {what}"),
                )
                .into());
            }
        }
    }

    let mut diags = Vec::new();
    let mut seen = HashSet::new();
    for t in &types {
        if BUILTIN_TYPES.contains(&t.name.as_str()) || !seen.insert(t.name.as_str()) {
            diags.push(Diagnostic::at(ErrorCode::DuplicateName, t.pos, format!("type `{}` is already defined", t.name)));
        }
    }
    let mut seen = HashSet::new();
    for m in &maps {
        if !seen.insert((m.from.as_str(), m.to.as_str())) {
            diags.push(Diagnostic::at(
                ErrorCode::DuplicateName,
                m.pos,
                format!("map `{} -> {}` is already defined", m.from, m.to),
            ));
        }
    }
    let mut seen = HashSet::new();
    for c in &classes {
        if !seen.insert(c.name.as_str()) {
            diags.push(Diagnostic::at(ErrorCode::DuplicateName, c.pos, format!("class `{}` is already defined", c.name)));
        }
    }
    for s in situations.iter().skip(1) {
        diags.push(Diagnostic::at(ErrorCode::DuplicateName, s.pos, "a model has exactly one situation"));
    }
    for c in classes.iter().chain(situations.iter()) {
        let mut seen = HashSet::new();
        for m in &c.members {
            let (label, pos) = match m {
                Member::Input(i) => (&i.label, i.pos),
                Member::Value(v) => (&v.label, v.pos),
                _ => continue,
            };
            if !seen.insert(label.as_str()) {
                diags.push(Diagnostic::at(
                    ErrorCode::DuplicateName,
                    pos,
                    format!("attribute `{label}` is declared twice in `{}`", c.name),
                ));
            }
        }
    }
    if situations.is_empty() {
        let end = p.toks.last().map(|t| t.pos).unwrap_or(Pos::new(1, 1));
        diags.push(Diagnostic::at(ErrorCode::NoSituation, end, "the model declares no situation"));
    }
    if !diags.is_empty() {
        return Err(diags.into());
    }
    let situation = situations.into_iter().next().unwrap();
    Ok(ModelSource { types, maps, classes, situation })
}

struct Parser {
    toks: Vec<Token>,
    i: usize,
}

type PResult<T> = std::result::Result<T, Diagnostic>;

impl Parser {
    fn peek(&self) -> Option<&Token> {
        self.toks.get(self.i)
    }

    fn peek_tok(&self) -> Option<&Tok> {
        self.peek().map(|t| &t.tok)
    }

    fn here(&self) -> Pos {
        match self.peek() {
            Some(t) => t.pos,
            None => self.toks.last().map(|t| Pos::new(t.pos.line, t.pos.col + 1)).unwrap_or(Pos::new(1, 1)),
        }
    }

    /// The current token if it is an unquoted keyword.
    fn keyword(&self) -> Option<&'static str> {
        match self.peek_tok() {
            Some(Tok::Word { text, quoted: false }) => KEYWORDS.iter().copied().find(|k| k == text),
            _ => None,
        }
    }

    fn at_keyword(&self, kw: &str) -> bool {
        self.keyword() == Some(kw)
    }

    fn fail<T>(&self, expected: &str) -> PResult<T> {
        let found = match self.peek() {
            Some(t) => t.tok.describe(),
            None => "end of input".into(),
        };
        Err(Diagnostic::at(ErrorCode::Parse, self.here(), format!("expected {expected}, found {found}")))
    }

    fn eat(&mut self, tok: &Tok) -> bool {
        if self.peek_tok() == Some(tok) {
            self.i += 1;
            true
        } else {
            false
        }
    }

    fn expect(&mut self, tok: Tok) -> PResult<()> {
        if self.eat(&tok) {
            Ok(())
        } else {
            self.fail(&tok.describe())
        }
    }

    fn expect_keyword(&mut self, kw: &str) -> PResult<()> {
        if self.at_keyword(kw) {
            self.i += 1;
            Ok(())
        } else {
            self.fail(&format!("`{kw}`"))
        }
    }

    /// A name: an unquoted non-keyword word starting with a letter, `_` or
    /// `$`, or any quoted word.
    fn ident(&mut self, what: &str) -> PResult<String> {
        if let Some(Tok::Word { text, quoted }) = self.peek_tok() {
            let ok = *quoted
                || (!KEYWORDS.contains(&text.as_str()) && !text.starts_with(|c: char| c.is_ascii_digit()));
            if ok {
                let text = text.clone();
                self.i += 1;
                return Ok(text);
            }
        }
        self.fail(what)
    }

    /// A value literal; unlike names these may start with a digit.
    fn value(&mut self) -> PResult<String> {
        if let Some(Tok::Word { text, quoted }) = self.peek_tok() {
            if *quoted || !KEYWORDS.contains(&text.as_str()) {
                let text = text.clone();
                self.i += 1;
                return Ok(text);
            }
        }
        self.fail("a value")
    }

    fn at_number(&self) -> bool {
        matches!(self.peek_tok(), Some(Tok::Word { text, quoted: false }) if text.starts_with(|c: char| c.is_ascii_digit()))
    }

    fn number(&mut self) -> PResult<f64> {
        let pos = self.here();
        if self.at_number() {
            if let Some(Tok::Word { text, .. }) = self.peek_tok() {
                if let Ok(v) = text.parse::<f64>() {
                    if v.is_finite() {
                        self.i += 1;
                        return Ok(v);
                    }
                }
                return Err(Diagnostic::at(ErrorCode::Parse, pos, format!("`{text}` is not a probability")));
            }
        }
        self.fail("a probability")
    }

    /// Comma-separated list up to (and consuming) `close`.
    fn list<T>(&mut self, close: Tok, mut item: impl FnMut(&mut Self) -> PResult<T>) -> PResult<Vec<T>> {
        let mut out = Vec::new();
        if self.eat(&close) {
            return Ok(out);
        }
        loop {
            out.push(item(self)?);
            if self.eat(&close) {
                return Ok(out);
            }
            self.expect(Tok::Comma)?;
        }
    }

    fn type_decl(&mut self) -> PResult<TypeDecl> {
        let pos = self.here();
        self.expect_keyword("type")?;
        let name = self.ident("a type name")?;
        self.expect(Tok::Eq)?;
        let body = if self.eat(&Tok::LBrace) {
            TypeBody::Enum(self.list(Tok::RBrace, |p| p.value())?)
        } else if self.eat(&Tok::Lt) {
            TypeBody::Struct(self.list(Tok::Gt, |p| {
                let label = p.ident("a field label")?;
                p.expect(Tok::Colon)?;
                let ty = p.ident("a type name")?;
                Ok(FieldDecl { label, ty })
            })?)
        } else {
            return self.fail("`{` or `<`");
        };
        self.expect(Tok::Semi)?;
        Ok(TypeDecl { name, body, pos })
    }

    fn map_decl(&mut self) -> PResult<MapDecl> {
        let pos = self.here();
        self.expect_keyword("map")?;
        let from = self.ident("a type name")?;
        self.expect(Tok::RArrow)?;
        let to = self.ident("a type name")?;
        self.expect(Tok::LBrace)?;
        let pairs = self.list(Tok::RBrace, |p| {
            let a = p.value()?;
            p.expect(Tok::FatArrow)?;
            let b = p.value()?;
            Ok((a, b))
        })?;
        self.eat(&Tok::Semi);
        Ok(MapDecl { from, to, pairs, pos })
    }

    fn class_decl(&mut self, situation: bool) -> PResult<ClassDecl> {
        let pos = self.here();
        self.expect_keyword(if situation { "situation" } else { "class" })?;
        let name = self.ident("a class name")?;
        let parent = if !situation && self.at_keyword("extends") {
            self.i += 1;
            Some(self.ident("a class name")?)
        } else {
            None
        };
        self.expect(Tok::LBrace)?;
        let mut members = Vec::new();
        while !self.eat(&Tok::RBrace) {
            if self.peek().is_none() {
                return self.fail("`}`");
            }
            members.push(self.member()?);
        }
        self.eat(&Tok::Semi);
        Ok(ClassDecl { name, parent, members, pos })
    }

    fn member(&mut self) -> PResult<Member> {
        let pos = self.here();
        match self.keyword() {
            Some("input") => {
                self.i += 1;
                let label = self.ident("an attribute label")?;
                self.expect(Tok::Colon)?;
                let ty = self.ident("a type name")?;
                self.expect(Tok::Semi)?;
                Ok(Member::Input(InputDecl { label, ty, pos }))
            }
            Some(kw @ ("output" | "private")) => {
                self.i += 1;
                let visibility = if kw == "output" { Visibility::Output } else { Visibility::Private };
                self.value_decl(visibility, pos).map(Member::Value)
            }
            Some("edge") => {
                self.i += 1;
                let from = self.ident("an attribute label")?;
                self.expect(Tok::RArrow)?;
                let to = self.ident("an attribute label")?;
                self.expect(Tok::Semi)?;
                Ok(Member::Edge(EdgeDecl { from, to, pos }))
            }
            _ => {
                let attr = self.ident("a member declaration")?;
                self.expect(Tok::Dot)?;
                let input = self.ident("an input label")?;
                self.expect(Tok::LArrow)?;
                let source = self.ident("an attribute label")?;
                let mut chain = Vec::new();
                while self.eat(&Tok::Dot) {
                    chain.push(self.ident("an attribute label")?);
                }
                self.expect(Tok::Semi)?;
                Ok(Member::Annotation(AnnotationDecl { attr, input, source, chain, pos }))
            }
        }
    }

    fn value_decl(&mut self, visibility: Visibility, pos: Pos) -> PResult<ValueDecl> {
        let label = self.ident("an attribute label")?;
        self.expect(Tok::Colon)?;
        let ty = self.ident("a type or class name")?;
        let mut params = Vec::new();
        let mut given = false;
        if self.at_keyword("given") {
            given = true;
            self.i += 1;
            self.expect(Tok::LParen)?;
            params = self.list(Tok::RParen, |p| {
                let label = p.ident("a parameter label")?;
                p.expect(Tok::Colon)?;
                let ty = p.ident("a type name")?;
                Ok(ParamDecl { label, ty })
            })?;
        }
        let cpt = if self.eat(&Tok::LBrace) {
            Some(self.cpt_body()?)
        } else if given {
            return self.fail("a CPT block");
        } else {
            self.expect(Tok::Semi)?;
            None
        };
        Ok(ValueDecl { visibility, label, ty, params, cpt, pos })
    }

    /// Rows inside a CPT block; the opening brace is already consumed.
    fn cpt_body(&mut self) -> PResult<CptDecl> {
        let mut rows = Vec::new();
        loop {
            let pos = self.here();
            if self.eat(&Tok::RBrace) {
                break;
            }
            let key = if self.eat(&Tok::LParen) {
                let k = self.list(Tok::RParen, |p| p.value())?;
                self.expect(Tok::Colon)?;
                RowKey::Values(k)
            } else if self.at_keyword("default") {
                self.i += 1;
                self.expect(Tok::Colon)?;
                RowKey::Default
            } else if self.at_number() {
                RowKey::Values(Vec::new())
            } else {
                return self.fail("a CPT row");
            };
            let mut probs = Vec::new();
            while self.at_number() {
                probs.push(self.number()?);
            }
            if probs.is_empty() {
                return self.fail("a probability");
            }
            self.eat(&Tok::Semi);
            rows.push(CptRow { key, probs, pos });
        }
        self.eat(&Tok::Semi);
        Ok(CptDecl { rows })
    }
}
