use std::collections::{HashMap, HashSet};
use std::sync::Arc;

use crate::dsl::Visibility;
use crate::error::Pos;
use crate::typesys::{BasicType, StructType, Type};

/// A resolved class: inheritance applied, CPTs expanded.
#[derive(Debug, Clone, PartialEq)]
pub struct ClassDef {
    pub name: String,
    pub parent: Option<String>,
    pub inputs: Vec<InputAttr>,
    pub values: Vec<ValueAttr>,
    /// Explicit `edge` declarations; annotation edges are implied.
    pub edges: Vec<(String, String)>,
    pub pos: Pos,
}

#[derive(Debug, Clone, PartialEq)]
pub struct InputAttr {
    pub label: String,
    pub ty: Type,
    pub pos: Pos,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ValueAttr {
    pub label: String,
    pub visibility: Visibility,
    pub spec: AttrSpec,
    /// Basic type for simple attributes, the class's output type for
    /// complex ones.
    pub ty: Type,
    pub annotations: Vec<Annotation>,
    pub pos: Pos,
}

impl ValueAttr {
    pub fn is_output(&self) -> bool {
        self.visibility == Visibility::Output
    }

    pub fn simple(&self) -> Option<&Arc<SimpleSpec>> {
        match &self.spec {
            AttrSpec::Simple(s) => Some(s),
            AttrSpec::Complex(_) => None,
        }
    }

    pub fn class_name(&self) -> Option<&str> {
        match &self.spec {
            AttrSpec::Complex(c) => Some(c),
            AttrSpec::Simple(_) => None,
        }
    }

    pub fn annotation(&self, input: &str) -> Option<&Annotation> {
        self.annotations.iter().find(|a| a.input == input)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum AttrSpec {
    Simple(Arc<SimpleSpec>),
    /// Name of the class the attribute instantiates.
    Complex(String),
}

/// A simple attribute's OONF: a CPT over its domain given its parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct SimpleSpec {
    pub domain: Arc<BasicType>,
    pub params: Vec<Param>,
    /// Row-major over `params` (first slowest), then the domain.
    pub cpt: Vec<f64>,
}

impl SimpleSpec {
    pub fn rows(&self) -> usize {
        self.params.iter().map(|p| p.ty.size()).product()
    }

    pub fn row(&self, r: usize) -> &[f64] {
        let n = self.domain.size();
        &self.cpt[r * n..(r + 1) * n]
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Param {
    pub label: String,
    pub ty: Arc<BasicType>,
}

/// `A.input <- source.chain`, stored on attribute `A`.
#[derive(Debug, Clone)]
pub struct Annotation {
    pub input: String,
    pub source: String,
    pub chain: Vec<String>,
    /// Set while a subclass is being resolved for annotations taken from the
    /// parent.
    pub inherited: bool,
    pub pos: Pos,
}

impl PartialEq for Annotation {
    fn eq(&self, o: &Self) -> bool {
        self.input == o.input && self.source == o.source && self.chain == o.chain
    }
}

impl Annotation {
    pub fn describe(&self) -> String {
        let mut s = self.source.clone();
        for c in &self.chain {
            s.push('.');
            s.push_str(c);
        }
        s
    }
}

impl ClassDef {
    pub fn outputs(&self) -> impl Iterator<Item = &ValueAttr> {
        self.values.iter().filter(|v| v.is_output())
    }

    pub fn value(&self, label: &str) -> Option<&ValueAttr> {
        self.values.iter().find(|v| v.label == label)
    }

    pub fn input(&self, label: &str) -> Option<&InputAttr> {
        self.inputs.iter().find(|i| i.label == label)
    }

    pub fn labels(&self) -> impl Iterator<Item = &str> {
        self.inputs.iter().map(|i| i.label.as_str()).chain(self.values.iter().map(|v| v.label.as_str()))
    }

    /// Type of the attribute named `label`, input or value.
    pub fn attr_type(&self, label: &str) -> Option<&Type> {
        self.input(label).map(|i| &i.ty).or_else(|| self.value(label).map(|v| &v.ty))
    }

    /// DAG parents: annotation sources and explicit edge tails.
    pub fn dag_parents(&self, label: &str) -> Vec<&str> {
        let mut out: Vec<&str> = Vec::new();
        if let Some(v) = self.value(label) {
            for a in &v.annotations {
                if !out.contains(&a.source.as_str()) {
                    out.push(&a.source);
                }
            }
        }
        for (a, b) in &self.edges {
            if b == label && !out.contains(&a.as_str()) {
                out.push(a);
            }
        }
        out
    }

    /// All DAG ancestors of `seeds`, the seeds included.
    pub fn ancestors<'a>(&'a self, seeds: impl IntoIterator<Item = &'a str>) -> HashSet<&'a str> {
        let mut seen = HashSet::new();
        let mut stack: Vec<&str> = seeds.into_iter().collect();
        while let Some(x) = stack.pop() {
            if let Some(x) = self.labels().find(|l| *l == x) {
                if seen.insert(x) {
                    stack.extend(self.dag_parents(x));
                }
            }
        }
        seen
    }

    /// Some attribute on a directed cycle, if any.
    pub fn find_cycle(&self) -> Option<String> {
        // 0 = unvisited, 1 = on stack, 2 = done
        let mut state: HashMap<&str, u8> = HashMap::new();
        fn dfs<'a>(c: &'a ClassDef, x: &'a str, state: &mut HashMap<&'a str, u8>) -> Option<String> {
            match state.get(x) {
                Some(1) => return Some(x.to_string()),
                Some(_) => return None,
                None => {}
            }
            state.insert(x, 1);
            for p in c.dag_parents(x) {
                if c.labels().any(|l| l == p) {
                    if let Some(hit) = dfs(c, p, state) {
                        return Some(hit);
                    }
                }
            }
            state.insert(x, 2);
            None
        }
        let labels: Vec<&str> = self.labels().collect();
        labels.into_iter().find_map(|l| dfs(self, l, &mut state))
    }

    /// Value attributes in a DAG-consistent order, ties broken by
    /// declaration order. Assumes the DAG is acyclic.
    pub fn topo_values(&self) -> Vec<&ValueAttr> {
        let idx: HashMap<&str, usize> = self.values.iter().enumerate().map(|(i, v)| (v.label.as_str(), i)).collect();
        let n = self.values.len();
        let mut indeg = vec![0usize; n];
        let mut kids: Vec<Vec<usize>> = vec![Vec::new(); n];
        for (i, v) in self.values.iter().enumerate() {
            for p in self.dag_parents(&v.label) {
                if let Some(&j) = idx.get(p) {
                    indeg[i] += 1;
                    kids[j].push(i);
                }
            }
        }
        let mut ready: std::collections::BTreeSet<usize> = (0..n).filter(|&i| indeg[i] == 0).collect();
        let mut out = Vec::with_capacity(n);
        while let Some(i) = ready.pop_first() {
            out.push(&self.values[i]);
            for &k in &kids[i] {
                indeg[k] -= 1;
                if indeg[k] == 0 {
                    ready.insert(k);
                }
            }
        }
        out
    }

    /// The structured type over the outputs.
    pub fn output_type(&self) -> Type {
        Type::Struct(Arc::new(StructType {
            name: Some(self.name.clone()),
            fields: self.outputs().map(|v| (v.label.clone(), v.ty.clone())).collect(),
        }))
    }

    /// The structured type over all value attributes.
    pub fn value_type(&self) -> Type {
        Type::Struct(Arc::new(StructType {
            name: Some(format!("{}+", self.name)),
            fields: self.values.iter().map(|v| (v.label.clone(), v.ty.clone())).collect(),
        }))
    }

    /// Inputs of the attribute `v` with their types: CPT parameters for a
    /// simple attribute, class inputs for a complex one.
    pub fn slot_inputs(v: &ValueAttr, class_of: impl Fn(&str) -> Option<Arc<ClassDef>>) -> Vec<(String, Type)> {
        match &v.spec {
            AttrSpec::Simple(s) => s.params.iter().map(|p| (p.label.clone(), Type::Basic(p.ty.clone()))).collect(),
            AttrSpec::Complex(c) => class_of(c)
                .map(|c| c.inputs.iter().map(|i| (i.label.clone(), i.ty.clone())).collect())
                .unwrap_or_default(),
        }
    }
}
