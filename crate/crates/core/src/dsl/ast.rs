//! Syntax tree for `.oobn` sources.
//!
//! The tree mirrors the text closely (declaration order is preserved) so that
//! rendering and reparsing is an identity. Semantic checks live in
//! [`crate::typesys`] and [`crate::model`].

use crate::error::Pos;

#[derive(Clone, Debug, PartialEq)]
pub struct ModelSource {
    pub types: Vec<TypeDecl>,
    pub maps: Vec<MapDecl>,
    pub classes: Vec<ClassDecl>,
    pub situation: ClassDecl,
}

impl ModelSource {
    pub fn class(&self, name: &str) -> Option<&ClassDecl> {
        self.classes.iter().find(|c| c.name == name)
    }

    pub fn type_decl(&self, name: &str) -> Option<&TypeDecl> {
        self.types.iter().find(|t| t.name == name)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TypeDecl {
    pub name: String,
    pub body: TypeBody,
    pub pos: Pos,
}

#[derive(Clone, Debug, PartialEq)]
pub enum TypeBody {
    /// `{ v1, v2, ... }`
    Enum(Vec<String>),
    /// `< A: T, B: U, ... >`
    Struct(Vec<FieldDecl>),
}

#[derive(Clone, Debug, PartialEq)]
pub struct FieldDecl {
    pub label: String,
    pub ty: String,
}

/// `map FINE -> COARSE { a => x, b => x, ... }`
#[derive(Clone, Debug, PartialEq)]
pub struct MapDecl {
    pub from: String,
    pub to: String,
    pub pairs: Vec<(String, String)>,
    pub pos: Pos,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ClassDecl {
    pub name: String,
    pub parent: Option<String>,
    pub members: Vec<Member>,
    pub pos: Pos,
}

impl ClassDecl {
    pub fn inputs(&self) -> impl Iterator<Item = &InputDecl> {
        self.members.iter().filter_map(|m| match m {
            Member::Input(i) => Some(i),
            _ => None,
        })
    }

    pub fn values(&self) -> impl Iterator<Item = &ValueDecl> {
        self.members.iter().filter_map(|m| match m {
            Member::Value(v) => Some(v),
            _ => None,
        })
    }

    pub fn annotations(&self) -> impl Iterator<Item = &AnnotationDecl> {
        self.members.iter().filter_map(|m| match m {
            Member::Annotation(a) => Some(a),
            _ => None,
        })
    }

    pub fn edges(&self) -> impl Iterator<Item = &EdgeDecl> {
        self.members.iter().filter_map(|m| match m {
            Member::Edge(e) => Some(e),
            _ => None,
        })
    }

    /// Number of declared input and value attributes.
    pub fn attribute_count(&self) -> usize {
        self.inputs().count() + self.values().count()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum Member {
    Input(InputDecl),
    Value(ValueDecl),
    Annotation(AnnotationDecl),
    Edge(EdgeDecl),
}

#[derive(Clone, Debug, PartialEq)]
pub struct InputDecl {
    pub label: String,
    pub ty: String,
    pub pos: Pos,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Visibility {
    Output,
    Private,
}

/// A value attribute. With a CPT block it is a simple attribute whose type
/// names a basic type; without one, `ty` names the class of a complex
/// attribute.
#[derive(Clone, Debug, PartialEq)]
pub struct ValueDecl {
    pub visibility: Visibility,
    pub label: String,
    pub ty: String,
    pub params: Vec<ParamDecl>,
    pub cpt: Option<CptDecl>,
    pub pos: Pos,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ParamDecl {
    pub label: String,
    pub ty: String,
}

#[derive(Clone, Debug, PartialEq)]
pub struct CptDecl {
    pub rows: Vec<CptRow>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct CptRow {
    pub key: RowKey,
    pub probs: Vec<f64>,
    pub pos: Pos,
}

#[derive(Clone, Debug, PartialEq)]
pub enum RowKey {
    /// Parent values in parameter order; empty for parentless attributes.
    Values(Vec<String>),
    Default,
}

/// `Attr.Input <- Source.chain.of.labels`
#[derive(Clone, Debug, PartialEq)]
pub struct AnnotationDecl {
    pub attr: String,
    pub input: String,
    pub source: String,
    pub chain: Vec<String>,
    pub pos: Pos,
}

/// `edge Parent -> Child`: an explicit DAG edge.
#[derive(Clone, Debug, PartialEq)]
pub struct EdgeDecl {
    pub from: String,
    pub to: String,
    pub pos: Pos,
}
