use std::fmt::Write;

use super::ast::*;
use super::lexer::{lex, Tok};
use super::parser::KEYWORDS;

/// Renders a model back to canonical source text.
///
/// `parse_model(&render_model(&m))` reproduces `m` up to source positions.
pub fn render_model(m: &ModelSource) -> String {
    let mut out = String::new();
    for t in &m.types {
        match &t.body {
            TypeBody::Enum(vs) => {
                let vs: Vec<_> = vs.iter().map(|v| value(v)).collect();
                writeln!(out, "type {} = {{{}}};", ident(&t.name), vs.join(", ")).unwrap();
            }
            TypeBody::Struct(fs) => {
                let fs: Vec<_> = fs.iter().map(|f| format!("{}: {}", ident(&f.label), ident(&f.ty))).collect();
                writeln!(out, "type {} = <{}>;", ident(&t.name), fs.join(", ")).unwrap();
            }
        }
    }
    for mp in &m.maps {
        let pairs: Vec<_> = mp.pairs.iter().map(|(a, b)| format!("{} => {}", value(a), value(b))).collect();
        writeln!(out, "map {} -> {} {{{}}}", ident(&mp.from), ident(&mp.to), pairs.join(", ")).unwrap();
    }
    for c in &m.classes {
        out.push('\n');
        render_class(&mut out, c, "class");
    }
    out.push('\n');
    render_class(&mut out, &m.situation, "situation");
    out
}

fn render_class(out: &mut String, c: &ClassDecl, kw: &str) {
    write!(out, "{kw} {}", ident(&c.name)).unwrap();
    if let Some(p) = &c.parent {
        write!(out, " extends {}", ident(p)).unwrap();
    }
    out.push_str(" {\n");
    for m in &c.members {
        match m {
            Member::Input(i) => writeln!(out, "    input {}: {};", ident(&i.label), ident(&i.ty)).unwrap(),
            Member::Value(v) => render_value(out, v),
            Member::Annotation(a) => {
                write!(out, "    {}.{} <- {}", ident(&a.attr), ident(&a.input), ident(&a.source)).unwrap();
                for l in &a.chain {
                    write!(out, ".{}", ident(l)).unwrap();
                }
                out.push_str(";\n");
            }
            Member::Edge(e) => writeln!(out, "    edge {} -> {};", ident(&e.from), ident(&e.to)).unwrap(),
        }
    }
    out.push_str("}\n");
}

fn render_value(out: &mut String, v: &ValueDecl) {
    let vis = match v.visibility {
        Visibility::Output => "output",
        Visibility::Private => "private",
    };
    write!(out, "    {vis} {}: {}", ident(&v.label), ident(&v.ty)).unwrap();
    if !v.params.is_empty() {
        let ps: Vec<_> = v.params.iter().map(|p| format!("{}: {}", ident(&p.label), ident(&p.ty))).collect();
        write!(out, " given ({})", ps.join(", ")).unwrap();
    }
    let Some(cpt) = &v.cpt else {
        out.push_str(";\n");
        return;
    };
    if let [row] = cpt.rows.as_slice() {
        if row.key == RowKey::Values(Vec::new()) {
            writeln!(out, " {{ {} }}", probs(&row.probs)).unwrap();
            return;
        }
    }
    out.push_str(" {\n");
    for row in &cpt.rows {
        match &row.key {
            RowKey::Default => out.push_str("        default: "),
            RowKey::Values(k) => {
                let k: Vec<_> = k.iter().map(|v| value(v)).collect();
                write!(out, "        ({}): ", k.join(", ")).unwrap();
            }
        }
        writeln!(out, "{};", probs(&row.probs)).unwrap();
    }
    out.push_str("    }\n");
}

fn probs(ps: &[f64]) -> String {
    ps.iter().map(|p| p.to_string()).collect::<Vec<_>>().join(" ")
}

fn bare_word(s: &str) -> bool {
    match lex(s).as_deref() {
        Ok([t]) => matches!(&t.tok, Tok::Word { text, quoted: false } if text == s && !KEYWORDS.contains(&s)),
        _ => false,
    }
}

fn quote(s: &str) -> String {
    format!("\"{}\"", s.replace('\\', "\\\\").replace('"', "\\\""))
}

fn ident(s: &str) -> String {
    if bare_word(s) && !s.starts_with(|c: char| c.is_ascii_digit()) {
        s.to_string()
    } else {
        quote(s)
    }
}

fn value(s: &str) -> String {
    if bare_word(s) {
        s.to_string()
    } else {
        quote(s)
    }
}
