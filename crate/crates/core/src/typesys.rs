//! Value types, coarsening maps, interface types, subtyping and inheritance.

use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::fmt;
use std::sync::Arc;

use crate::dsl::{self, ClassDecl, Member, ModelSource, RowKey, TypeBody};
use crate::error::{Diagnostic, Error, ErrorCode, Pos, Result};
use crate::model::{Annotation, AttrSpec, ClassDef, InputAttr, Param, SimpleSpec, ValueAttr};

/// A finite enumerated type. Equality is nominal.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct BasicType {
    pub name: String,
    pub values: Vec<String>,
}

impl BasicType {
    pub fn new(name: impl Into<String>, values: impl IntoIterator<Item = impl Into<String>>) -> Self {
        BasicType { name: name.into(), values: values.into_iter().map(Into::into).collect() }
    }

    pub fn boolean() -> Self {
        BasicType::new("Boolean", ["true", "false"])
    }

    pub fn size(&self) -> usize {
        self.values.len()
    }

    pub fn index_of(&self, v: &str) -> Option<usize> {
        self.values.iter().position(|x| x == v)
    }
}

/// A tuple type `<A1: T1, ...>`. Equality is structural; the name is cosmetic.
#[derive(Debug, Clone)]
pub struct StructType {
    pub name: Option<String>,
    pub fields: Vec<(String, Type)>,
}

impl PartialEq for StructType {
    fn eq(&self, other: &Self) -> bool {
        self.fields == other.fields
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Type {
    Basic(Arc<BasicType>),
    Struct(Arc<StructType>),
}

impl Type {
    pub fn as_basic(&self) -> Option<&Arc<BasicType>> {
        match self {
            Type::Basic(b) => Some(b),
            Type::Struct(_) => None,
        }
    }

    pub fn field(&self, label: &str) -> Option<&Type> {
        match self {
            Type::Struct(s) => s.fields.iter().find(|(l, _)| l == label).map(|(_, t)| t),
            Type::Basic(_) => None,
        }
    }

    pub fn anonymous(fields: Vec<(String, Type)>) -> Type {
        Type::Struct(Arc::new(StructType { name: None, fields }))
    }
}

impl fmt::Display for Type {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Type::Basic(b) => f.write_str(&b.name),
            Type::Struct(s) => match &s.name {
                Some(n) => f.write_str(n),
                None => {
                    f.write_str("<")?;
                    for (i, (l, t)) in s.fields.iter().enumerate() {
                        if i > 0 {
                            f.write_str(", ")?;
                        }
                        write!(f, "{l}: {t}")?;
                    }
                    f.write_str(">")
                }
            },
        }
    }
}

/// A total surjective function between the values of two basic types.
#[derive(Debug, Clone, PartialEq)]
pub struct CoarseningMap {
    pub from: Arc<BasicType>,
    pub to: Arc<BasicType>,
    /// `map[i]` is the index in `to` of `from.values[i]`.
    pub map: Vec<usize>,
}

impl CoarseningMap {
    pub fn new(from: Arc<BasicType>, to: Arc<BasicType>, pairs: &[(String, String)]) -> Result<Self> {
        let what = format!("map `{} -> {}`", from.name, to.name);
        if from.name == to.name {
            return Err(Error::new(ErrorCode::Map, format!("{what} maps a type onto itself")));
        }
        let mut map = vec![usize::MAX; from.size()];
        for (a, b) in pairs {
            let i = from
                .index_of(a)
                .ok_or_else(|| Error::new(ErrorCode::Map, format!("{what}: `{a}` is not a value of {}", from.name)))?;
            let j = to
                .index_of(b)
                .ok_or_else(|| Error::new(ErrorCode::Map, format!("{what}: `{b}` is not a value of {}", to.name)))?;
            if map[i] != usize::MAX {
                return Err(Error::new(ErrorCode::Map, format!("{what}: `{a}` is mapped twice")));
            }
            map[i] = j;
        }
        if let Some(i) = map.iter().position(|&j| j == usize::MAX) {
            return Err(Error::new(ErrorCode::Map, format!("{what} is not total: `{}` is unmapped", from.values[i])));
        }
        let hit: HashSet<_> = map.iter().copied().collect();
        if let Some(v) = (0..to.size()).find(|j| !hit.contains(j)) {
            return Err(Error::new(ErrorCode::Map, format!("{what} is not onto: nothing maps to `{}`", to.values[v])));
        }
        Ok(CoarseningMap { from, to, map })
    }

    fn then(&self, next: &CoarseningMap) -> CoarseningMap {
        CoarseningMap { from: self.from.clone(), to: next.to.clone(), map: self.map.iter().map(|&j| next.map[j]).collect() }
    }
}

/// Declared coarsening maps closed under composition.
#[derive(Debug, Clone, Default)]
pub struct MapSet {
    maps: BTreeMap<(String, String), CoarseningMap>,
}

impl MapSet {
    /// Computes the transitive closure of `declared`. Cycles and two
    /// derivations that disagree on some value are `E_MAP` errors.
    pub fn closure(declared: Vec<CoarseningMap>) -> Result<Self> {
        let mut maps: BTreeMap<(String, String), CoarseningMap> = BTreeMap::new();
        for m in declared {
            let key = (m.from.name.clone(), m.to.name.clone());
            if maps.contains_key(&key) {
                return Err(Error::new(ErrorCode::Map, format!("map `{} -> {}` is declared twice", key.0, key.1)));
            }
            maps.insert(key, m);
        }
        loop {
            let mut added = Vec::new();
            for ab in maps.values() {
                for bc in maps.values().filter(|m| m.from.name == ab.to.name) {
                    let ac = ab.then(bc);
                    if ac.from.name == ac.to.name {
                        return Err(Error::new(
                            ErrorCode::Map,
                            format!("coarsening maps form a cycle through `{}`", ac.from.name),
                        ));
                    }
                    match maps.get(&(ac.from.name.clone(), ac.to.name.clone())) {
                        Some(existing) if existing.map != ac.map => {
                            return Err(Error::new(
                                ErrorCode::Map,
                                format!("maps from `{}` to `{}` disagree", ac.from.name, ac.to.name),
                            ))
                        }
                        Some(_) => {}
                        None => added.push(ac),
                    }
                }
            }
            if added.is_empty() {
                return Ok(MapSet { maps });
            }
            for m in added {
                maps.entry((m.from.name.clone(), m.to.name.clone())).or_insert(m);
            }
        }
    }

    pub fn get(&self, from: &str, to: &str) -> Option<&CoarseningMap> {
        self.maps.get(&(from.to_string(), to.to_string()))
    }

    /// Value translation from `from` to `to`: identity for equal types, the
    /// closed map otherwise.
    pub fn value_map(&self, from: &BasicType, to: &BasicType) -> Option<Vec<usize>> {
        if from.name == to.name {
            Some((0..from.size()).collect())
        } else {
            self.get(&from.name, &to.name).map(|m| m.map.clone())
        }
    }

    pub fn iter(&self) -> impl Iterator<Item = &CoarseningMap> {
        self.maps.values()
    }
}

/// `t1 ⊑ t2`: equal basic types, a (closed) coarsening map from `t1` to
/// `t2`, or width-and-depth structural subtyping matched by label.
pub fn is_value_subtype(t1: &Type, t2: &Type, maps: &MapSet) -> bool {
    match (t1, t2) {
        (Type::Basic(a), Type::Basic(b)) => a.name == b.name || maps.get(&a.name, &b.name).is_some(),
        (Type::Struct(a), Type::Struct(b)) => b.fields.iter().all(|(l, tb)| {
            a.fields.iter().find(|(la, _)| la == l).is_some_and(|(_, ta)| is_value_subtype(ta, tb, maps))
        }),
        _ => false,
    }
}

/// Named types of a model plus the closed coarsening maps.
#[derive(Debug, Clone)]
pub struct TypeEnv {
    pub basics: BTreeMap<String, Arc<BasicType>>,
    pub structs: BTreeMap<String, Type>,
    pub maps: MapSet,
}

impl TypeEnv {
    pub fn from_source(src: &ModelSource) -> Result<Self> {
        let mut diags = Vec::new();
        let mut basics = BTreeMap::new();
        basics.insert("Boolean".to_string(), Arc::new(BasicType::boolean()));
        for t in &src.types {
            if let TypeBody::Enum(values) = &t.body {
                if values.is_empty() {
                    diags.push(Diagnostic::at(ErrorCode::Parse, t.pos, format!("type `{}` has no values", t.name)));
                }
                let mut seen = HashSet::new();
                for v in values {
                    if !seen.insert(v) {
                        diags.push(Diagnostic::at(
                            ErrorCode::DuplicateName,
                            t.pos,
                            format!("value `{v}` appears twice in type `{}`", t.name),
                        ));
                    }
                }
                basics.insert(t.name.clone(), Arc::new(BasicType::new(&t.name, values.clone())));
            }
        }
        let mut env = TypeEnv { basics, structs: BTreeMap::new(), maps: MapSet::default() };
        for t in &src.types {
            if let TypeBody::Struct(_) = t.body {
                if let Err(e) = env.build_struct(src, &t.name, &mut Vec::new()) {
                    diags.extend(e.diagnostics().into_iter().map(|d| with_pos(d, t.pos)));
                }
            }
        }
        let mut declared = Vec::new();
        for m in &src.maps {
            let r = env.basic(&m.from).and_then(|from| {
                let to = env.basic(&m.to)?;
                CoarseningMap::new(from, to, &m.pairs)
            });
            match r {
                Ok(cm) => declared.push(cm),
                Err(e) => diags.extend(e.diagnostics().into_iter().map(|d| with_pos(d, m.pos))),
            }
        }
        if diags.is_empty() {
            match MapSet::closure(declared) {
                Ok(ms) => env.maps = ms,
                Err(e) => {
                    let pos = src.maps.first().map(|m| m.pos).unwrap_or_default();
                    diags.extend(e.diagnostics().into_iter().map(|d| with_pos(d, pos)));
                }
            }
        }
        if diags.is_empty() {
            Ok(env)
        } else {
            Err(diags.into())
        }
    }

    fn build_struct(&mut self, src: &ModelSource, name: &str, stack: &mut Vec<String>) -> Result<Type> {
        if let Some(t) = self.structs.get(name) {
            return Ok(t.clone());
        }
        if stack.iter().any(|s| s == name) {
            return Err(Error::new(ErrorCode::InfiniteType, format!("structured type `{name}` contains itself")));
        }
        let Some(TypeBody::Struct(fields)) = src.type_decl(name).map(|d| &d.body) else {
            return self.lookup(name);
        };
        stack.push(name.to_string());
        let mut out = Vec::new();
        let mut seen = HashSet::new();
        for f in fields {
            if !seen.insert(&f.label) {
                return Err(Error::new(
                    ErrorCode::DuplicateName,
                    format!("field `{}` appears twice in type `{name}`", f.label),
                ));
            }
            out.push((f.label.clone(), self.build_struct(src, &f.ty, stack)?));
        }
        stack.pop();
        let t = Type::Struct(Arc::new(StructType { name: Some(name.to_string()), fields: out }));
        self.structs.insert(name.to_string(), t.clone());
        Ok(t)
    }

    pub fn lookup(&self, name: &str) -> Result<Type> {
        if let Some(b) = self.basics.get(name) {
            return Ok(Type::Basic(b.clone()));
        }
        if let Some(s) = self.structs.get(name) {
            return Ok(s.clone());
        }
        if name == "Integer" || name == "Real" {
            return Err(Error::new(
                ErrorCode::InfiniteType,
                format!("`{name}` has infinitely many values; declare a finite enumeration instead"),
            ));
        }
        Err(Error::new(ErrorCode::UnknownType, format!("unknown type `{name}`")))
    }

    pub fn basic(&self, name: &str) -> Result<Arc<BasicType>> {
        match self.lookup(name)? {
            Type::Basic(b) => Ok(b),
            Type::Struct(_) => Err(Error::new(ErrorCode::UnknownType, format!("`{name}` is not a basic type"))),
        }
    }

    pub fn is_subtype(&self, t1: &Type, t2: &Type) -> bool {
        is_value_subtype(t1, t2, &self.maps)
    }
}

fn with_pos(mut d: Diagnostic, pos: Pos) -> Diagnostic {
    if d.line == 0 {
        d.line = pos.line;
        d.col = pos.col;
    }
    d
}

/// `⟨I1: t, ... → O1: t, ...⟩`
#[derive(Debug, Clone, PartialEq, Default)]
pub struct InterfaceType {
    pub inputs: Vec<(String, Type)>,
    pub outputs: Vec<(String, Type)>,
}

impl InterfaceType {
    pub fn of(c: &ClassDef) -> Self {
        InterfaceType {
            inputs: c.inputs.iter().map(|i| (i.label.clone(), i.ty.clone())).collect(),
            outputs: c.outputs().map(|v| (v.label.clone(), v.ty.clone())).collect(),
        }
    }
}

/// Labels that break `sub ⊑ sup`: outputs must be covariant, inputs
/// contravariant. Attributes correspond by label.
pub fn interface_mismatches(sub: &InterfaceType, sup: &InterfaceType, maps: &MapSet) -> Vec<String> {
    let mut bad = Vec::new();
    for (l, t) in &sup.outputs {
        match sub.outputs.iter().find(|(x, _)| x == l) {
            Some((_, ts)) if is_value_subtype(ts, t, maps) => {}
            _ => bad.push(l.clone()),
        }
    }
    for (l, t) in &sub.inputs {
        match sup.inputs.iter().find(|(x, _)| x == l) {
            Some((_, tp)) if is_value_subtype(tp, t, maps) => {}
            _ => bad.push(l.clone()),
        }
    }
    bad
}

pub fn is_interface_subtype(sub: &InterfaceType, sup: &InterfaceType, maps: &MapSet) -> bool {
    interface_mismatches(sub, sup, maps).is_empty()
}

/// Restricts `c`'s interface to `outs` and the inputs they depend on.
pub fn projected_interface(c: &ClassDef, outs: &[String]) -> Result<InterfaceType> {
    let mut outputs = Vec::new();
    for o in outs {
        match c.outputs().find(|v| &v.label == o) {
            Some(v) => outputs.push((v.label.clone(), v.ty.clone())),
            None => return Err(Error::new(ErrorCode::UnknownOutput, format!("`{}` has no output `{o}`", c.name))),
        }
    }
    let anc = c.ancestors(outs.iter().map(String::as_str));
    let inputs = c.inputs.iter().filter(|i| anc.contains(i.label.as_str())).map(|i| (i.label.clone(), i.ty.clone())).collect();
    Ok(InterfaceType { inputs, outputs })
}

/// Checks that `sub` can stand in for `sup`.
pub fn check_subclass(sub: &ClassDef, sup: &ClassDef, maps: &MapSet) -> Result<()> {
    let mut diags = Vec::new();
    let outs: Vec<String> = sup.outputs().map(|v| v.label.clone()).collect();
    for o in &outs {
        if !sub.outputs().any(|v| &v.label == o) {
            diags.push(Diagnostic::at(
                ErrorCode::MissingOutput,
                sub.pos,
                format!("`{}` lacks output `{o}` of `{}`", sub.name, sup.name),
            ));
        }
    }
    if diags.is_empty() {
        let proj = projected_interface(sub, &outs)?;
        for l in interface_mismatches(&proj, &InterfaceType::of(sup), maps) {
            diags.push(Diagnostic::at(
                ErrorCode::InterfaceMismatch,
                sub.pos,
                format!("attribute `{l}` of `{}` is not compatible with `{}`", sub.name, sup.name),
            ));
        }
    }
    if diags.is_empty() {
        Ok(())
    } else {
        Err(diags.into())
    }
}

/// Applies `decl` on top of an already resolved `parent`.
///
/// Inherited attributes keep their type, OONF and annotations unless the
/// subclass redeclares them. Annotations merge per input: a subclass
/// annotation for `A.I` replaces the inherited one for the same input.
/// Complex attribute types are placeholders until the model compiler fills
/// them in.
pub fn resolve_inheritance(decl: &ClassDecl, parent: Option<&ClassDef>, env: &TypeEnv) -> Result<ClassDef> {
    let mut diags = Vec::new();
    let mut c = match parent {
        Some(p) => ClassDef { name: decl.name.clone(), parent: Some(p.name.clone()), pos: decl.pos, ..p.clone() },
        None => ClassDef {
            name: decl.name.clone(),
            parent: None,
            inputs: Vec::new(),
            values: Vec::new(),
            edges: Vec::new(),
            pos: decl.pos,
        },
    };
    for a in c.values.iter_mut().flat_map(|v| v.annotations.iter_mut()) {
        a.inherited = true;
    }

    for m in &decl.members {
        match m {
            Member::Input(i) => {
                let ty = match env.lookup(&i.ty) {
                    Ok(t) => t,
                    Err(e) => {
                        diags.extend(e.diagnostics().into_iter().map(|d| with_pos(d, i.pos)));
                        continue;
                    }
                };
                let new = InputAttr { label: i.label.clone(), ty, pos: i.pos };
                if let Some(old) = c.inputs.iter_mut().find(|x| x.label == i.label) {
                    if !env.is_subtype(&old.ty, &new.ty) {
                        diags.push(Diagnostic::at(
                            ErrorCode::OverrideType,
                            i.pos,
                            format!("input `{}` narrows its type from {} to {}", i.label, old.ty, new.ty),
                        ));
                    }
                    *old = new;
                } else if c.values.iter().any(|v| v.label == i.label) {
                    diags.push(Diagnostic::at(
                        ErrorCode::OverrideType,
                        i.pos,
                        format!("`{}` turns inherited value attribute into an input", i.label),
                    ));
                } else {
                    c.inputs.push(new);
                }
            }
            Member::Value(v) => match value_attr(v, env) {
                Ok(new) => {
                    if let Some(old) = c.values.iter_mut().find(|x| x.label == v.label) {
                        if let (AttrSpec::Simple(o), AttrSpec::Simple(n)) = (&old.spec, &new.spec) {
                            let (ot, nt) = (Type::Basic(o.domain.clone()), Type::Basic(n.domain.clone()));
                            if !env.is_subtype(&nt, &ot) {
                                diags.push(Diagnostic::at(
                                    ErrorCode::OverrideType,
                                    v.pos,
                                    format!("`{}` changes type from {ot} to unrelated {nt}", v.label),
                                ));
                            }
                        } else if matches!(old.spec, AttrSpec::Simple(_)) != matches!(new.spec, AttrSpec::Simple(_)) {
                            diags.push(Diagnostic::at(
                                ErrorCode::OverrideType,
                                v.pos,
                                format!("`{}` switches between simple and complex", v.label),
                            ));
                        }
                        let inherited = std::mem::take(&mut old.annotations);
                        *old = ValueAttr { annotations: inherited, ..new };
                    } else if c.inputs.iter().any(|x| x.label == v.label) {
                        diags.push(Diagnostic::at(
                            ErrorCode::OverrideType,
                            v.pos,
                            format!("`{}` turns inherited input into a value attribute", v.label),
                        ));
                    } else {
                        c.values.push(new);
                    }
                }
                Err(e) => diags.extend(e.diagnostics()),
            },
            Member::Annotation(_) | Member::Edge(_) => {}
        }
    }

    // Simple attributes drop inherited annotations for parameters they no
    // longer have; complex ones are pruned once class inputs are known.
    for v in &mut c.values {
        if let AttrSpec::Simple(s) = &v.spec {
            v.annotations.retain(|a| !a.inherited || s.params.iter().any(|p| p.label == a.input));
        }
    }
    for a in decl.annotations() {
        let Some(v) = c.values.iter_mut().find(|v| v.label == a.attr) else {
            diags.push(Diagnostic::at(
                ErrorCode::AnnotType,
                a.pos,
                format!("`{}` is not a value attribute of `{}`", a.attr, decl.name),
            ));
            continue;
        };
        let new = Annotation { input: a.input.clone(), source: a.source.clone(), chain: a.chain.clone(), inherited: false, pos: a.pos };
        match v.annotations.iter_mut().find(|x| x.input == a.input) {
            Some(x) if !x.inherited => diags.push(Diagnostic::at(
                ErrorCode::DuplicateName,
                a.pos,
                format!("`{}.{}` is annotated twice", a.attr, a.input),
            )),
            Some(x) => *x = new,
            None => v.annotations.push(new),
        }
    }
    let labels: HashSet<String> = c.labels().map(str::to_string).collect();
    c.edges.retain(|(a, b)| labels.contains(a) && labels.contains(b));
    for e in decl.edges() {
        for l in [&e.from, &e.to] {
            if !labels.contains(l) {
                diags.push(Diagnostic::at(ErrorCode::Dag, e.pos, format!("edge names unknown attribute `{l}`")));
            }
        }
        c.edges.push((e.from.clone(), e.to.clone()));
    }
    if diags.is_empty() {
        if let Some(cycle) = c.find_cycle() {
            diags.push(Diagnostic::at(
                ErrorCode::Dag,
                decl.pos,
                format!("attributes of `{}` form a cycle through `{cycle}`", decl.name),
            ));
        }
    }
    if diags.is_empty() {
        Ok(c)
    } else {
        Err(diags.into())
    }
}

fn value_attr(v: &dsl::ValueDecl, env: &TypeEnv) -> Result<ValueAttr> {
    let spec = match &v.cpt {
        None => AttrSpec::Complex(v.ty.clone()),
        Some(cpt) => {
            let at = |e: Error| -> Error { e.diagnostics().into_iter().map(|d| with_pos(d, v.pos)).collect::<Vec<_>>().into() };
            let domain = env.basic(&v.ty).map_err(at)?;
            let mut params = Vec::new();
            let mut seen = HashSet::new();
            for p in &v.params {
                if !seen.insert(&p.label) {
                    return Err(Diagnostic::at(ErrorCode::DuplicateName, v.pos, format!("parameter `{}` appears twice", p.label)).into());
                }
                params.push(Param { label: p.label.clone(), ty: env.basic(&p.ty).map_err(at)? });
            }
            let table = dense_cpt(&v.label, &domain, &params, cpt)?;
            AttrSpec::Simple(Arc::new(SimpleSpec { domain, params, cpt: table }))
        }
    };
    let ty = match &spec {
        AttrSpec::Simple(s) => Type::Basic(s.domain.clone()),
        AttrSpec::Complex(class) => Type::Struct(Arc::new(StructType { name: Some(class.clone()), fields: Vec::new() })),
    };
    Ok(ValueAttr { label: v.label.clone(), visibility: v.visibility, spec, ty, annotations: Vec::new(), pos: v.pos })
}

/// Expands literal CPT rows (with an optional `default:` row) into a dense
/// row-major table; the first parameter varies slowest.
fn dense_cpt(label: &str, domain: &BasicType, params: &[Param], cpt: &dsl::CptDecl) -> Result<Vec<f64>> {
    let n = domain.size();
    let rows: usize = params.iter().map(|p| p.ty.size()).product();
    let mut table: Vec<Option<Vec<f64>>> = vec![None; rows];
    let mut default = None;
    let mut diags = Vec::new();
    for row in &cpt.rows {
        if row.probs.len() != n {
            diags.push(Diagnostic::at(
                ErrorCode::Cpt,
                row.pos,
                format!("`{label}` row has {} entries, expected {n}", row.probs.len()),
            ));
            continue;
        }
        match &row.key {
            RowKey::Default => {
                if default.replace(row.probs.clone()).is_some() {
                    diags.push(Diagnostic::at(ErrorCode::Cpt, row.pos, format!("`{label}` has two default rows")));
                }
            }
            RowKey::Values(key) => {
                if key.len() != params.len() {
                    diags.push(Diagnostic::at(
                        ErrorCode::Cpt,
                        row.pos,
                        format!("`{label}` row key has {} values, expected {}", key.len(), params.len()),
                    ));
                    continue;
                }
                let mut idx = 0;
                let mut ok = true;
                for (v, p) in key.iter().zip(params) {
                    match p.ty.index_of(v) {
                        Some(i) => idx = idx * p.ty.size() + i,
                        None => {
                            diags.push(Diagnostic::at(
                                ErrorCode::Cpt,
                                row.pos,
                                format!("`{v}` is not a value of {} (parameter `{}`)", p.ty.name, p.label),
                            ));
                            ok = false;
                        }
                    }
                }
                if ok && table[idx].replace(row.probs.clone()).is_some() {
                    diags.push(Diagnostic::at(ErrorCode::Cpt, row.pos, format!("`{label}` repeats a row")));
                }
            }
        }
    }
    if !diags.is_empty() {
        return Err(diags.into());
    }
    let mut out = Vec::with_capacity(rows * n);
    for (i, r) in table.into_iter().enumerate() {
        match r.or_else(|| default.clone()) {
            Some(r) => out.extend(r),
            None => {
                return Err(Error::new(
                    ErrorCode::Cpt,
                    format!("`{label}` has no row for parent values #{i} and no default row"),
                ))
            }
        }
    }
    Ok(out)
}

/// Resolves every class in `src` (situation included) in hierarchy order.
pub fn resolve_hierarchy(src: &ModelSource, env: &TypeEnv) -> Result<(BTreeMap<String, ClassDef>, ClassDef)> {
    let decls: BTreeMap<&str, &ClassDecl> = src.classes.iter().map(|c| (c.name.as_str(), c)).collect();
    let mut diags = Vec::new();
    let mut done: BTreeMap<String, ClassDef> = BTreeMap::new();
    let mut failed: BTreeSet<String> = BTreeSet::new();
    for c in &src.classes {
        // Walk up to the first resolved ancestor, then resolve downwards.
        let mut chain = vec![c];
        let mut cycle = false;
        while let Some(p) = chain.last().unwrap().parent.as_deref() {
            if done.contains_key(p) || failed.contains(p) {
                break;
            }
            match decls.get(p) {
                Some(pd) if chain.iter().any(|x| x.name == pd.name) => {
                    cycle = true;
                    break;
                }
                Some(pd) => chain.push(pd),
                None => break,
            }
        }
        if cycle {
            for x in &chain {
                if failed.insert(x.name.clone()) {
                    diags.push(Diagnostic::at(
                        ErrorCode::CycleInHierarchy,
                        x.pos,
                        format!("class `{}` inherits from itself", x.name),
                    ));
                }
            }
            continue;
        }
        for d in chain.into_iter().rev() {
            if done.contains_key(&d.name) || failed.contains(&d.name) {
                continue;
            }
            let parent = match d.parent.as_deref() {
                None => None,
                Some(p) if failed.contains(p) => {
                    failed.insert(d.name.clone());
                    continue;
                }
                Some(p) => match done.get(p) {
                    Some(pc) => Some(pc),
                    None => {
                        diags.push(Diagnostic::at(ErrorCode::UnknownClass, d.pos, format!("unknown parent class `{p}`")));
                        failed.insert(d.name.clone());
                        continue;
                    }
                },
            };
            match resolve_inheritance(d, parent, env) {
                Ok(r) => {
                    done.insert(d.name.clone(), r);
                }
                Err(e) => {
                    diags.extend(e.diagnostics());
                    failed.insert(d.name.clone());
                }
            }
        }
    }
    let situation = match resolve_inheritance(&src.situation, None, env) {
        Ok(s) => {
            if let Some(i) = s.inputs.first() {
                diags.push(Diagnostic::at(
                    ErrorCode::UnboundInput,
                    i.pos,
                    format!("the situation cannot declare input `{}`", i.label),
                ));
            }
            Some(s)
        }
        Err(e) => {
            diags.extend(e.diagnostics());
            None
        }
    };
    match situation {
        Some(s) if diags.is_empty() => Ok((done, s)),
        _ => Err(diags.into()),
    }
}
