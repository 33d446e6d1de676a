//! Iconization: replacing a class by an equivalent class with no
//! encapsulated attributes.

use std::sync::Arc;

use crate::dsl::Visibility;
use crate::error::{err, ErrorCode, Pos, Result};
use crate::flatten::{build_flat_bn, FlatBN, VarId, ENUM_CAP};
use crate::inference::{Factor, JunctionTree};
use crate::model::{instantiate_class, Annotation, AttrSpec, ClassDef, Model, Param, SimpleSpec, ValueAttr};
use crate::typesys::Type;

/// Prefix of generated class names.
pub const ICON_PREFIX: &str = "ICON-";

/// Builds the iconized form of `class`, named `name`.
///
/// The result keeps every input and every output label and type. Outputs
/// are chained in topological order: output `O_i` depends on the basic
/// input fields the class reads and on `O_1 .. O_{i-1}`, with its CPT
/// computed by exact inference over the original class. Rows whose
/// conditioning event is impossible are uniform.
pub fn iconize_class(model: &Model, class: &str, name: &str) -> Result<ClassDef> {
    let c = model.class(class)?.clone();
    let outputs: Vec<&ValueAttr> = c.topo_values().into_iter().filter(|v| v.is_output()).collect();
    if let Some(v) = outputs.iter().find(|v| v.simple().is_none()) {
        return err(
            ErrorCode::IncompatibleClass,
            format!("`{class}` has structured output `{}`; only classes with basic outputs can be iconized", v.label),
        );
    }
    let gm = instantiate_class(model, class)?;
    let bn = build_flat_bn(model, &gm)?;
    let leaves: Vec<VarId> = (0..bn.len()).filter(|&v| bn.vars[v].is_boundary()).collect();
    let outs: Vec<VarId> = outputs
        .iter()
        .map(|v| bn.index(&format!("{class}.{}", v.label)).expect("outputs are simple objects"))
        .collect();

    let cells = |vs: &[VarId]| vs.iter().map(|&v| bn.vars[v].card() as u64).product::<u64>();
    let leaf_rows = cells(&leaves);
    let joint_cells = cells(&outs);
    if leaf_rows.saturating_mul(joint_cells) > ENUM_CAP {
        return err(
            ErrorCode::TooLarge,
            format!("iconizing `{class}` needs {leaf_rows} x {joint_cells} cells, above the cap of {ENUM_CAP}"),
        );
    }

    // P(outputs | leaves), one block of the joint per leaf assignment.
    let mut jt = JunctionTree::new(&bn)?;
    let mut table = Vec::with_capacity((leaf_rows * joint_cells) as usize);
    let lcards: Vec<usize> = leaves.iter().map(|&v| bn.vars[v].card()).collect();
    let mut assign = vec![0usize; leaves.len()];
    for _ in 0..leaf_rows {
        for (k, &v) in leaves.iter().enumerate() {
            jt.set_evidence(v, assign[k])?;
        }
        table.extend(jt.query(&outs)?.table);
        for k in (0..assign.len()).rev() {
            assign[k] += 1;
            if assign[k] < lcards[k] {
                break;
            }
            assign[k] = 0;
        }
    }
    let mut scope = leaves.clone();
    scope.extend(&outs);
    let mut cards = lcards.clone();
    cards.extend(outs.iter().map(|&v| bn.vars[v].card()));
    let joint = Factor::new(scope, cards, table);

    let leaf_params: Vec<(Param, Annotation)> = leaves.iter().map(|&v| leaf_param(&bn, v, class)).collect();
    let mut values = Vec::new();
    for (i, v) in outputs.iter().enumerate() {
        let keep: Vec<VarId> = leaves.iter().chain(&outs[..=i]).copied().collect();
        let f = joint.marginalize(&keep);
        let card = bn.vars[outs[i]].card();
        let mut cpt = Vec::with_capacity(f.table.len());
        for row in f.table.chunks(card) {
            let z: f64 = row.iter().sum();
            if z > 0.0 {
                cpt.extend(row.iter().map(|p| p / z));
            } else {
                cpt.extend(std::iter::repeat_n(1.0 / card as f64, card));
            }
        }
        let mut params: Vec<Param> = leaf_params.iter().map(|(p, _)| p.clone()).collect();
        let mut annotations: Vec<Annotation> = leaf_params.iter().map(|(_, a)| a.clone()).collect();
        for prev in &outputs[..i] {
            params.push(Param { label: prev.label.clone(), ty: prev.simple().unwrap().domain.clone() });
            annotations.push(Annotation {
                input: prev.label.clone(),
                source: prev.label.clone(),
                chain: Vec::new(),
                inherited: false,
                pos: Pos::default(),
            });
        }
        let domain = v.simple().unwrap().domain.clone();
        values.push(ValueAttr {
            label: v.label.clone(),
            visibility: Visibility::Output,
            ty: Type::Basic(domain.clone()),
            spec: AttrSpec::Simple(Arc::new(SimpleSpec { domain, params, cpt })),
            annotations,
            pos: Pos::default(),
        });
    }
    Ok(ClassDef { name: name.to_string(), parent: None, inputs: c.inputs.clone(), values, edges: Vec::new(), pos: Pos::default() })
}

/// Parameter and annotation reading the free input field `v`, whose id
/// is `CLASS.Input.field...`.
fn leaf_param(bn: &FlatBN, v: VarId, class: &str) -> (Param, Annotation) {
    let id = &bn.vars[v].id;
    let chain: Vec<String> = id[class.len() + 1..].split('.').map(String::from).collect();
    let label = chain.join("_");
    let param = Param { label: label.clone(), ty: bn.vars[v].domain.clone() };
    let ann = Annotation {
        input: label,
        source: chain[0].clone(),
        chain: chain[1..].to_vec(),
        inherited: false,
        pos: Pos::default(),
    };
    (param, ann)
}

/// The model extended with the iconized form of `class`, registered as
/// a superclass of it, and the new class's name. Iconizing the same class
/// again reuses the earlier result.
pub fn iconize(model: &Model, class: &str) -> Result<(Model, String)> {
    model.class(class)?;
    let base = format!("{ICON_PREFIX}{class}");
    let mut name = base.clone();
    let mut k = 2;
    while model.classes.contains_key(&name) {
        if model.extra_supers.iter().any(|(s, p)| s == class && *p == name) {
            return Ok((model.clone(), name));
        }
        name = format!("{base}-{k}");
        k += 1;
    }
    let icon = iconize_class(model, class, &name)?;
    Ok((model.with_class(icon, Some(class))?, name))
}
