use std::collections::{BTreeMap, HashMap};
use std::fmt::Write;
use std::sync::Arc;

use super::class::{Annotation, AttrSpec, ClassDef, SimpleSpec};
use super::compile::Model;
use crate::dsl::Visibility;
use crate::error::{Error, ErrorCode, Result};

pub type ObjId = usize;

/// Path of the root object; every variable id starts with it.
pub const ROOT: &str = "Situation";

#[derive(Debug, Clone)]
pub struct Object {
    pub label: String,
    /// Root-relative attribute path, e.g. `Situation.Car.Engine`.
    pub path: String,
    /// Position in the unrolled tree: `1`, `1.2`, `1.2.1`, ...
    pub sigma: String,
    pub parent: Option<ObjId>,
    pub visibility: Option<Visibility>,
    /// Annotations of the slot this object fills, from the container class.
    pub annotations: Vec<Annotation>,
    pub kind: ObjKind,
}

#[derive(Debug, Clone)]
pub enum ObjKind {
    Simple(Arc<SimpleSpec>),
    Complex(ComplexObj),
}

#[derive(Debug, Clone)]
pub struct ComplexObj {
    pub class: Arc<ClassDef>,
    pub children: Vec<(String, ObjId)>,
    /// Inputs bound by the slot's annotations (all of them unless a
    /// substituted class asks for inputs its slot does not provide).
    pub bound: Vec<String>,
}

impl Object {
    pub fn complex(&self) -> Option<&ComplexObj> {
        match &self.kind {
            ObjKind::Complex(c) => Some(c),
            ObjKind::Simple(_) => None,
        }
    }

    pub fn simple(&self) -> Option<&Arc<SimpleSpec>> {
        match &self.kind {
            ObjKind::Simple(s) => Some(s),
            ObjKind::Complex(_) => None,
        }
    }

    pub fn child(&self, label: &str) -> Option<ObjId> {
        self.complex()?.children.iter().find(|(l, _)| l == label).map(|(_, id)| *id)
    }
}

/// The unrolled object tree. Objects are stored in preorder with children
/// in σ order, so index order is a topological order of the flat network.
#[derive(Debug, Clone)]
pub struct GroundModel {
    pub objects: Vec<Object>,
    by_path: HashMap<String, ObjId>,
    /// True when the root is a class instance with free (boundary) inputs.
    pub standalone: bool,
}

/// Class substitutions by object path.
pub type Overrides = BTreeMap<String, String>;

impl GroundModel {
    pub fn root(&self) -> &Object {
        &self.objects[0]
    }

    pub fn obj(&self, id: ObjId) -> &Object {
        &self.objects[id]
    }

    /// Looks up a path with or without the root prefix.
    pub fn find(&self, path: &str) -> Option<ObjId> {
        let root = &self.objects[0].path;
        if let Some(&id) = self.by_path.get(path) {
            return Some(id);
        }
        if path.is_empty() {
            return Some(0);
        }
        self.by_path.get(&format!("{root}.{path}")).copied()
    }

    pub fn len(&self) -> usize {
        self.objects.len()
    }

    pub fn is_empty(&self) -> bool {
        self.objects.is_empty()
    }

    pub fn simple_ids(&self) -> impl Iterator<Item = ObjId> + '_ {
        (0..self.objects.len()).filter(|&i| self.objects[i].simple().is_some())
    }

    pub fn complex_ids(&self) -> impl Iterator<Item = ObjId> + '_ {
        (0..self.objects.len()).filter(|&i| self.objects[i].complex().is_some())
    }

    /// Whether `anc` is `id` or one of its containers.
    pub fn within(&self, id: ObjId, anc: ObjId) -> bool {
        let mut cur = Some(id);
        while let Some(c) = cur {
            if c == anc {
                return true;
            }
            cur = self.objects[c].parent;
        }
        false
    }

    /// `id` and everything nested inside it, in preorder.
    pub fn subtree(&self, id: ObjId) -> Vec<ObjId> {
        let mut out = vec![id];
        let mut i = 0;
        while i < out.len() {
            if let Some(c) = self.objects[out[i]].complex() {
                out.extend(c.children.iter().map(|(_, k)| *k));
            }
            i += 1;
        }
        out.sort_unstable();
        out
    }

    /// Indented listing of the tree with σ-labels and classes.
    pub fn render_tree(&self) -> String {
        let mut out = String::new();
        for o in &self.objects {
            let depth = o.sigma.matches('.').count();
            let what = match &o.kind {
                ObjKind::Simple(s) => s.domain.name.clone(),
                ObjKind::Complex(c) => c.class.name.clone(),
            };
            writeln!(out, "{}{} {} : {}", "  ".repeat(depth), o.sigma, o.label, what).unwrap();
        }
        out
    }
}

/// Unrolls the situation.
pub fn instantiate(model: &Model) -> Result<GroundModel> {
    instantiate_with(model, &Overrides::new())
}

/// Unrolls the situation with some objects' classes substituted.
pub fn instantiate_with(model: &Model, overrides: &Overrides) -> Result<GroundModel> {
    let mut b = Builder { model, overrides, objects: Vec::new(), standalone: false };
    b.build(model.situation.clone(), ROOT.to_string(), ROOT.to_string(), "1".into(), None, None, Vec::new(), Vec::new(), false)?;
    Ok(b.finish())
}

/// Unrolls a single class with all of its inputs left free, rooted at a
/// path named after the class.
pub fn instantiate_class(model: &Model, class: &str) -> Result<GroundModel> {
    let c = model.class(class)?.clone();
    let bound = c.inputs.iter().map(|i| i.label.clone()).collect();
    let mut b = Builder { model, overrides: &Overrides::new(), objects: Vec::new(), standalone: true };
    b.build(c, class.to_string(), class.to_string(), "1".into(), None, None, Vec::new(), bound, false)?;
    Ok(b.finish())
}

struct Builder<'a> {
    model: &'a Model,
    overrides: &'a Overrides,
    objects: Vec<Object>,
    standalone: bool,
}

impl Builder<'_> {
    fn finish(self) -> GroundModel {
        let by_path = self.objects.iter().enumerate().map(|(i, o)| (o.path.clone(), i)).collect();
        GroundModel { objects: self.objects, by_path, standalone: self.standalone }
    }

    #[allow(clippy::too_many_arguments)]
    fn build(
        &mut self,
        class: Arc<ClassDef>,
        label: String,
        path: String,
        sigma: String,
        parent: Option<ObjId>,
        visibility: Option<Visibility>,
        annotations: Vec<Annotation>,
        bound: Vec<String>,
        lenient: bool,
    ) -> Result<ObjId> {
        let me = self.objects.len();
        self.objects.push(Object {
            label,
            path: path.clone(),
            sigma: sigma.clone(),
            parent,
            visibility,
            annotations,
            kind: ObjKind::Complex(ComplexObj { class: class.clone(), children: Vec::new(), bound: bound.clone() }),
        });
        let mut k = 0;
        for v in class.topo_values() {
            let child_path = format!("{path}.{}", v.label);
            let avail = |a: &Annotation, b: &Self| b.available(me, &class, &bound, a);
            let built = match &v.spec {
                AttrSpec::Simple(s) => {
                    let ok = s.params.iter().all(|p| v.annotation(&p.label).is_some_and(|a| avail(a, self)));
                    if !ok {
                        if lenient {
                            continue;
                        }
                        return Err(Error::new(
                            ErrorCode::TypeCompat,
                            format!("`{child_path}` depends on an attribute that the substituted class does not provide"),
                        ));
                    }
                    k += 1;
                    let id = self.objects.len();
                    self.objects.push(Object {
                        label: v.label.clone(),
                        path: child_path,
                        sigma: format!("{sigma}.{k}"),
                        parent: Some(me),
                        visibility: Some(v.visibility),
                        annotations: v.annotations.clone(),
                        kind: ObjKind::Simple(s.clone()),
                    });
                    id
                }
                AttrSpec::Complex(declared) => {
                    let substituted = self.overrides.get(&child_path);
                    let cn = substituted.map(String::as_str).unwrap_or(declared);
                    let cc = self.model.class(cn)?.clone();
                    let mut child_bound = Vec::new();
                    for i in &cc.inputs {
                        let Some(a) = v.annotation(&i.label) else { continue };
                        if !avail(a, self) {
                            continue;
                        }
                        let got = self.model.chain_type(&class, &a.source, &a.chain)?;
                        if !self.model.env.is_subtype(&got, &i.ty) {
                            return Err(Error::new(
                                ErrorCode::TypeCompat,
                                format!("`{child_path}.{}` expects {} but its slot supplies {got}", i.label, i.ty),
                            ));
                        }
                        child_bound.push(i.label.clone());
                    }
                    k += 1;
                    let sig = format!("{sigma}.{k}");
                    let lenient_child = lenient || substituted.is_some();
                    self.build(
                        cc,
                        v.label.clone(),
                        child_path,
                        sig,
                        Some(me),
                        Some(v.visibility),
                        v.annotations.clone(),
                        child_bound,
                        lenient_child,
                    )?
                }
            };
            if let ObjKind::Complex(c) = &mut self.objects[me].kind {
                c.children.push((v.label.clone(), built));
            }
        }
        Ok(me)
    }

    /// Whether the source of `a` exists in the partially built object `me`.
    fn available(&self, me: ObjId, class: &ClassDef, bound: &[String], a: &Annotation) -> bool {
        if class.input(&a.source).is_some() {
            return bound.contains(&a.source);
        }
        let Some(mut cur) = self.objects[me].child(&a.source) else { return false };
        for l in &a.chain {
            let Some(c) = self.objects[cur].complex() else { return false };
            if !c.class.value(l).is_some_and(|v| v.is_output()) {
                return false;
            }
            match self.objects[cur].child(l) {
                Some(n) => cur = n,
                None => return false,
            }
        }
        true
    }
}
