use std::collections::{BTreeMap, HashMap};
use std::sync::Arc;

use super::class::{AttrSpec, ClassDef};
use crate::dsl::ModelSource;
use crate::error::{Diagnostic, Error, ErrorCode, Result};
use crate::typesys::{self, projected_interface, InterfaceType, Type, TypeEnv};

/// A parsed, resolved and validated model.
#[derive(Debug, Clone)]
pub struct Model {
    pub source: ModelSource,
    pub env: TypeEnv,
    pub classes: BTreeMap<String, Arc<ClassDef>>,
    pub situation: Arc<ClassDef>,
    /// Extra is-a edges (sub, super) beyond `extends`, e.g. iconized classes.
    pub extra_supers: Vec<(String, String)>,
}

impl Model {
    pub fn class(&self, name: &str) -> Result<&Arc<ClassDef>> {
        self.classes.get(name).ok_or_else(|| Error::new(ErrorCode::UnknownClass, format!("unknown class `{name}`")))
    }

    /// Direct superclasses of `name`.
    pub fn supers(&self, name: &str) -> Vec<String> {
        let mut out: Vec<String> = self.classes.get(name).and_then(|c| c.parent.clone()).into_iter().collect();
        out.extend(self.extra_supers.iter().filter(|(s, _)| s == name).map(|(_, p)| p.clone()));
        out
    }

    /// Reflexive-transitive is-a.
    pub fn is_a(&self, sub: &str, sup: &str) -> bool {
        let mut stack = vec![sub.to_string()];
        let mut seen = std::collections::HashSet::new();
        while let Some(c) = stack.pop() {
            if c == sup {
                return true;
            }
            if seen.insert(c.clone()) {
                stack.extend(self.supers(&c));
            }
        }
        false
    }

    /// Type of `source.chain` evaluated inside class `c`.
    pub fn chain_type(&self, c: &ClassDef, source: &str, chain: &[String]) -> Result<Type> {
        let mut t = c
            .attr_type(source)
            .cloned()
            .ok_or_else(|| Error::new(ErrorCode::BadChain, format!("`{}` has no attribute `{source}`", c.name)))?;
        let mut at = source.to_string();
        for l in chain {
            t = t.field(l).cloned().ok_or_else(|| {
                Error::new(ErrorCode::BadChain, format!("`{at}` (of type {t}) has no visible attribute `{l}`"))
            })?;
            at = format!("{at}.{l}");
        }
        Ok(t)
    }

    /// Adds a class after compilation (used for iconized classes).
    pub fn with_class(&self, c: ClassDef, super_of: Option<&str>) -> Result<Model> {
        let mut m = self.clone();
        let name = c.name.clone();
        m.classes.insert(name.clone(), Arc::new(c));
        validate_class(&m.classes[&name], &m)?;
        if let Some(sub) = super_of {
            if !m.extra_supers.iter().any(|(s, p)| s == sub && *p == name) {
                m.extra_supers.push((sub.to_string(), name));
            }
        }
        Ok(m)
    }
}

/// Resolves and checks a parsed model.
pub fn compile(src: &ModelSource) -> Result<Model> {
    let env = TypeEnv::from_source(src)?;
    let (mut defs, mut sit) = typesys::resolve_hierarchy(src, &env)?;

    let mut diags = Vec::new();
    // Unknown class references and recursion.
    let all: Vec<&ClassDef> = defs.values().chain(std::iter::once(&sit)).collect();
    for c in &all {
        for v in &c.values {
            if let AttrSpec::Complex(cn) = &v.spec {
                if !defs.contains_key(cn) {
                    diags.push(Diagnostic::at(
                        ErrorCode::UnknownClass,
                        v.pos,
                        format!("`{}.{}` names unknown class `{cn}`", c.name, v.label),
                    ));
                }
            }
        }
    }
    if !diags.is_empty() {
        return Err(diags.into());
    }
    let order = class_order(&defs).map_err(|name| {
        Error::from(Diagnostic::at(
            ErrorCode::Recursion,
            defs[&name].pos,
            format!("class `{name}` contains itself through its attributes"),
        ))
    })?;

    // Fill complex attribute types bottom-up; prune inherited annotations
    // for inputs the attribute's class does not have.
    let mut classes: BTreeMap<String, Arc<ClassDef>> = BTreeMap::new();
    let fill = |c: &mut ClassDef, classes: &BTreeMap<String, Arc<ClassDef>>| {
        for v in &mut c.values {
            if let AttrSpec::Complex(cn) = &v.spec {
                let cc = &classes[cn];
                v.ty = cc.output_type();
                v.annotations.retain(|a| !a.inherited || cc.input(&a.input).is_some());
            }
        }
    };
    for name in order {
        let mut c = defs.remove(&name).unwrap();
        fill(&mut c, &classes);
        classes.insert(name, Arc::new(c));
    }
    fill(&mut sit, &classes);
    let situation = Arc::new(sit);
    let model = Model { source: src.clone(), env, classes, situation, extra_supers: Vec::new() };

    for c in model.classes.values().chain(std::iter::once(&model.situation)) {
        if let Err(e) = validate_class(c, &model) {
            diags.extend(e.diagnostics());
        }
    }
    if !diags.is_empty() {
        return Err(diags.into());
    }
    for c in model.classes.values() {
        let Some(pn) = &c.parent else { continue };
        let p = &model.classes[pn];
        for v in &c.values {
            let (Some(new), Some(old)) = (v.class_name(), p.value(&v.label).and_then(|o| o.class_name())) else {
                continue;
            };
            if new != old {
                if let Err(bad) = class_substitutable(&model, new, old) {
                    diags.push(Diagnostic::at(
                        ErrorCode::OverrideType,
                        v.pos,
                        format!("`{}` overrides `{old}` with incompatible `{new}` ({bad})", v.label),
                    ));
                }
            }
        }
        if let Err(e) = typesys::check_subclass(c, p, &model.env.maps) {
            diags.extend(e.diagnostics());
        }
    }
    if diags.is_empty() {
        Ok(model)
    } else {
        Err(diags.into())
    }
}

/// Whether class `new` may replace `old` in a slot: projected onto `old`'s
/// outputs, `new`'s interface must be a subtype of `old`'s.
fn class_substitutable(model: &Model, new: &str, old: &str) -> std::result::Result<(), String> {
    let (n, o) = (&model.classes[new], &model.classes[old]);
    let outs: Vec<String> = o.outputs().map(|v| v.label.clone()).collect();
    let proj = projected_interface(n, &outs).map_err(|e| e.to_string())?;
    let bad = typesys::interface_mismatches(&proj, &InterfaceType::of(o), &model.env.maps);
    if bad.is_empty() {
        Ok(())
    } else {
        Err(format!("mismatch on {}", bad.join(", ")))
    }
}

/// Classes ordered so that every class comes after the classes it
/// instantiates; `Err(name)` names a class on a containment cycle.
fn class_order(defs: &BTreeMap<String, ClassDef>) -> std::result::Result<Vec<String>, String> {
    let mut state: HashMap<&str, u8> = HashMap::new();
    let mut out = Vec::new();
    fn visit<'a>(
        n: &'a str,
        defs: &'a BTreeMap<String, ClassDef>,
        state: &mut HashMap<&'a str, u8>,
        out: &mut Vec<String>,
    ) -> std::result::Result<(), String> {
        match state.get(n) {
            Some(1) => return Err(n.to_string()),
            Some(_) => return Ok(()),
            None => {}
        }
        state.insert(n, 1);
        for v in &defs[n].values {
            if let Some(c) = v.class_name() {
                visit(c, defs, state, out)?;
            }
        }
        state.insert(n, 2);
        out.push(n.to_string());
        Ok(())
    }
    for n in defs.keys() {
        visit(n, defs, &mut state, &mut out)?;
    }
    Ok(out)
}

/// Checks acyclicity, annotation typing and coverage, explicit edges, and
/// CPT normalization.
pub fn validate_class(c: &ClassDef, model: &Model) -> Result<()> {
    let mut diags = Vec::new();
    if let Some(x) = c.find_cycle() {
        diags.push(Diagnostic::at(ErrorCode::Dag, c.pos, format!("attributes of `{}` form a cycle through `{x}`", c.name)));
    }
    for v in &c.values {
        let inputs = ClassDef::slot_inputs(v, |n| model.classes.get(n).cloned());
        for a in &v.annotations {
            let Some((_, want)) = inputs.iter().find(|(l, _)| *l == a.input) else {
                diags.push(Diagnostic::at(
                    ErrorCode::AnnotType,
                    a.pos,
                    format!("`{}` has no input `{}`", v.label, a.input),
                ));
                continue;
            };
            match model.chain_type(c, &a.source, &a.chain) {
                Ok(got) if model.env.is_subtype(&got, want) => {}
                Ok(got) => diags.push(Diagnostic::at(
                    ErrorCode::AnnotType,
                    a.pos,
                    format!("`{}.{} <- {}`: {got} is not a subtype of {want}", v.label, a.input, a.describe()),
                )),
                Err(e) => diags.extend(e.diagnostics().into_iter().map(|mut d| {
                    d.line = a.pos.line;
                    d.col = a.pos.col;
                    d
                })),
            }
        }
        for (l, _) in &inputs {
            if v.annotation(l).is_none() {
                diags.push(Diagnostic::at(
                    ErrorCode::MissingAnnot,
                    v.pos,
                    format!("input `{l}` of `{}.{}` is not annotated", c.name, v.label),
                ));
            }
        }
        if let AttrSpec::Simple(s) = &v.spec {
            let n = s.domain.size();
            for r in 0..s.rows() {
                let row = s.row(r);
                let sum: f64 = row.iter().sum();
                if row.iter().any(|p| !p.is_finite() || *p < 0.0) || (sum - 1.0).abs() > 1e-9 {
                    diags.push(Diagnostic::at(
                        ErrorCode::Cpt,
                        v.pos,
                        format!("row {r} of `{}.{}` sums to {sum} over {n} values", c.name, v.label),
                    ));
                }
            }
        }
    }
    for (a, b) in &c.edges {
        match c.value(b) {
            None => diags.push(Diagnostic::at(ErrorCode::Dag, c.pos, format!("edge `{a} -> {b}` points at an input"))),
            Some(v) if v.annotations.iter().all(|x| &x.source != a) => diags.push(Diagnostic::at(
                ErrorCode::UnusedParent,
                v.pos,
                format!("`{a}` is a parent of `{b}` but annotates none of its inputs"),
            )),
            Some(_) => {}
        }
    }
    if diags.is_empty() {
        Ok(())
    } else {
        Err(diags.into())
    }
}
