//! Attribute-chain resolution, the flat network BN(B), and a brute-force
//! enumeration oracle.

use std::collections::{BTreeMap, HashMap};
use std::sync::Arc;

use serde_json::{json, Value};

use crate::error::{err, Error, ErrorCode, Result};
use crate::inference::factor::{neumaier, Factor};
use crate::model::{GroundModel, Model, ObjId, ObjKind};
use crate::typesys::{BasicType, Type};

pub type VarId = usize;

/// Observed values by variable.
pub type Evidence = BTreeMap<VarId, usize>;

/// Default state-space cap for [`enumerate_joint`].
pub const ENUM_CAP: u64 = 1 << 22;

#[derive(Debug, Clone)]
pub struct Variable {
    /// Root-relative path, e.g. `Situation.Car.Engine.Power`.
    pub id: String,
    /// The simple object, or `None` for a free input of a stand-alone class.
    pub obj: Option<ObjId>,
    pub domain: Arc<BasicType>,
    /// Distinct parents in the order their CPT slots first mention them.
    pub parents: Vec<VarId>,
    /// For each CPT parameter slot, its index in `parents`.
    pub slots: Vec<usize>,
    /// P(self | parents), scoped `parents ++ [self]`.
    pub cpt: Factor,
}

impl Variable {
    pub fn card(&self) -> usize {
        self.domain.size()
    }

    pub fn is_boundary(&self) -> bool {
        self.obj.is_none()
    }

    /// The variable and its parents.
    pub fn family(&self, me: VarId) -> Vec<VarId> {
        let mut f = self.parents.clone();
        f.push(me);
        f
    }
}

/// One variable per simple object, in σ order (free inputs first).
#[derive(Debug, Clone)]
pub struct FlatBN {
    pub vars: Vec<Variable>,
    by_id: HashMap<String, VarId>,
    by_obj: HashMap<ObjId, VarId>,
}

impl FlatBN {
    pub fn len(&self) -> usize {
        self.vars.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vars.is_empty()
    }

    pub fn var(&self, v: VarId) -> &Variable {
        &self.vars[v]
    }

    /// Looks up a variable by full path.
    pub fn index(&self, id: &str) -> Option<VarId> {
        self.by_id.get(id).copied()
    }

    pub fn of_obj(&self, o: ObjId) -> Option<VarId> {
        self.by_obj.get(&o).copied()
    }

    pub fn cards(&self) -> Vec<usize> {
        self.vars.iter().map(Variable::card).collect()
    }

    pub fn children(&self) -> Vec<Vec<VarId>> {
        let mut ch = vec![Vec::new(); self.len()];
        for (v, x) in self.vars.iter().enumerate() {
            for &p in &x.parents {
                ch[p].push(v);
            }
        }
        ch
    }

    pub fn edges(&self) -> impl Iterator<Item = (VarId, VarId)> + '_ {
        self.vars.iter().enumerate().flat_map(|(v, x)| x.parents.iter().map(move |&p| (p, v)))
    }

    /// `seeds` and all their ancestors.
    pub fn ancestors(&self, seeds: impl IntoIterator<Item = VarId>) -> Vec<bool> {
        let mut mark = vec![false; self.len()];
        let mut stack: Vec<VarId> = seeds.into_iter().collect();
        while let Some(v) = stack.pop() {
            if !std::mem::replace(&mut mark[v], true) {
                stack.extend(&self.vars[v].parents);
            }
        }
        mark
    }

    /// Parses `value` for variable `v`.
    pub fn value_index(&self, v: VarId, value: &str) -> Result<usize> {
        let x = &self.vars[v];
        x.domain.index_of(value).ok_or_else(|| {
            Error::new(
                ErrorCode::BadValue,
                format!("`{value}` is not a value of `{}` (one of {})", x.id, x.domain.values.join(", ")),
            )
        })
    }

    /// The `bn-json` interchange form.
    pub fn to_json(&self) -> Value {
        let vars: Vec<Value> = self
            .vars
            .iter()
            .map(|x| {
                let n = x.card();
                let rows: Vec<Value> = x.cpt.table.chunks(n).map(|r| json!(r)).collect();
                json!({
                    "id": x.id,
                    "type": x.domain.name,
                    "domain": x.domain.values,
                    "parents": x.parents.iter().map(|&p| &self.vars[p].id).collect::<Vec<_>>(),
                    "cpt": rows,
                })
            })
            .collect();
        json!({ "schema_version": 1, "format": "bn-json", "variables": vars })
    }
}

/// What a chain denotes: a simple object, or (in a stand-alone class) a
/// basic field of a free input, named by its path.
#[derive(Debug, Clone, PartialEq, Eq)]
enum Ref {
    Obj(ObjId),
    Free(String),
}

/// Resolves `chain` starting at `origin` to a simple object. Chains through
/// an input are continued at the annotation that binds it in the container.
pub fn resolve_chain(gm: &GroundModel, origin: ObjId, chain: &[String]) -> Result<ObjId> {
    match resolve_ref(gm, origin, chain)? {
        Ref::Obj(o) => Ok(o),
        Ref::Free(p) => err(ErrorCode::UnboundInput, format!("`{p}` is a free input of the stand-alone class")),
    }
}

fn resolve_ref(gm: &GroundModel, origin: ObjId, chain: &[String]) -> Result<Ref> {
    let mut cur = origin;
    let mut chain: Vec<String> = chain.to_vec();
    let mut i = 0;
    loop {
        let o = gm.obj(cur);
        if i == chain.len() {
            return match o.kind {
                ObjKind::Simple(_) => Ok(Ref::Obj(cur)),
                ObjKind::Complex(_) => err(ErrorCode::BadChain, format!("`{}` is not a simple attribute", o.path)),
            };
        }
        let head = &chain[i];
        let Some(c) = o.complex() else {
            return err(ErrorCode::BadChain, format!("`{}` is simple and has no attribute `{head}`", o.path));
        };
        if let Some(k) = o.child(head) {
            cur = k;
            i += 1;
            continue;
        }
        if c.class.input(head).is_none() {
            return err(ErrorCode::BadChain, format!("`{}` has no attribute `{head}`", o.path));
        }
        let Some(parent) = o.parent else {
            if gm.standalone && c.bound.contains(head) {
                return Ok(Ref::Free(format!("{}.{}", o.path, chain[i..].join("."))));
            }
            return err(ErrorCode::UnboundInput, format!("input `{head}` of `{}` is not bound", o.path));
        };
        let Some(a) = o.annotations.iter().find(|a| &a.input == head) else {
            return err(ErrorCode::UnboundInput, format!("input `{head}` of `{}` is not bound", o.path));
        };
        let mut next = vec![a.source.clone()];
        next.extend(a.chain.iter().cloned());
        next.extend(chain[i + 1..].iter().cloned());
        chain = next;
        i = 0;
        cur = parent;
    }
}

/// Resolves a user path such as `Car.Engine.Power` (the root prefix is
/// optional) to a variable.
pub fn resolve_path(gm: &GroundModel, bn: &FlatBN, path: &str) -> Result<VarId> {
    let root = &gm.root().path;
    let rest = path.strip_prefix(root.as_str()).and_then(|r| r.strip_prefix('.')).unwrap_or(path);
    let chain: Vec<String> = if rest.is_empty() || path == root { Vec::new() } else { rest.split('.').map(String::from).collect() };
    let o = resolve_chain(gm, 0, &chain)?;
    bn.of_obj(o).ok_or_else(|| Error::new(ErrorCode::BadChain, format!("`{path}` has no variable")))
}

/// Builds BN(B): one node per simple object, parents from annotation
/// resolution, CPT columns mapped through coarsening maps where a parent's
/// type refines the slot type.
pub fn build_flat_bn(model: &Model, gm: &GroundModel) -> Result<FlatBN> {
    // Resolve every slot first so free inputs can be numbered up front.
    let mut refs: Vec<(ObjId, Vec<Ref>)> = Vec::new();
    let mut free: Vec<String> = Vec::new();
    for id in gm.simple_ids() {
        let o = gm.obj(id);
        let spec = o.simple().unwrap();
        let parent = o.parent.expect("simple objects are contained");
        let mut rs = Vec::with_capacity(spec.params.len());
        for p in &spec.params {
            let a = o.annotations.iter().find(|a| a.input == p.label).ok_or_else(|| {
                Error::new(ErrorCode::UnboundInput, format!("parameter `{}` of `{}` is not bound", p.label, o.path))
            })?;
            let mut chain = vec![a.source.clone()];
            chain.extend(a.chain.iter().cloned());
            let r = resolve_ref(gm, parent, &chain)?;
            if let Ref::Free(f) = &r {
                if !free.contains(f) {
                    free.push(f.clone());
                }
            }
            rs.push(r);
        }
        refs.push((id, rs));
    }

    let mut vars: Vec<Variable> = Vec::new();
    let root = gm.root().complex().unwrap();
    for f in &free {
        let mut parts = f.split('.').skip(1);
        let input = parts.next().unwrap();
        let mut t = root.class.input(input).unwrap().ty.clone();
        for l in parts {
            t = t.field(l).cloned().ok_or_else(|| Error::new(ErrorCode::BadChain, format!("`{f}` is not a field")))?;
        }
        let Type::Basic(domain) = t else {
            return err(ErrorCode::BadChain, format!("`{f}` is not basic"));
        };
        let n = domain.size();
        vars.push(Variable {
            id: f.clone(),
            obj: None,
            domain,
            parents: Vec::new(),
            slots: Vec::new(),
            cpt: Factor::new(vec![vars.len()], vec![n], vec![1.0 / n as f64; n]),
        });
    }
    let nfree = vars.len();
    let mut domains: Vec<Arc<BasicType>> = vars.iter().map(|v| v.domain.clone()).collect();
    domains.extend(refs.iter().map(|(o, _)| gm.obj(*o).simple().unwrap().domain.clone()));
    let by_obj: HashMap<ObjId, VarId> = refs.iter().enumerate().map(|(i, (o, _))| (*o, nfree + i)).collect();
    for (i, (oid, rs)) in refs.iter().enumerate() {
        let me = nfree + i;
        let o = gm.obj(*oid);
        let spec = o.simple().unwrap();
        let mut parents: Vec<VarId> = Vec::new();
        let mut slots = Vec::new();
        for r in rs {
            let v = match r {
                Ref::Obj(x) => by_obj[x],
                Ref::Free(f) => free.iter().position(|g| g == f).unwrap(),
            };
            if v >= me {
                return err(ErrorCode::Dag, format!("`{}` depends on a later variable", o.path));
            }
            slots.push(parents.iter().position(|&p| p == v).unwrap_or_else(|| {
                parents.push(v);
                parents.len() - 1
            }));
        }
        // Value maps from each parent's domain onto the slot's type.
        let mut maps = Vec::with_capacity(spec.params.len());
        for (s, p) in spec.params.iter().enumerate() {
            let pd = &domains[parents[slots[s]]];
            let m = model.env.maps.value_map(pd, &p.ty).ok_or_else(|| {
                Error::new(ErrorCode::TypeCompat, format!("`{}.{}` expects {} but gets {}", o.path, p.label, p.ty.name, pd.name))
            })?;
            maps.push(m);
        }
        let pcards: Vec<usize> = parents.iter().map(|&p| domains[p].size()).collect();
        let n = spec.domain.size();
        let rows: usize = pcards.iter().product();
        let mut table = Vec::with_capacity(rows * n);
        let mut assign = vec![0usize; parents.len()];
        for _ in 0..rows {
            let mut r = 0;
            for (s, p) in spec.params.iter().enumerate() {
                r = r * p.ty.size() + maps[s][assign[slots[s]]];
            }
            table.extend_from_slice(spec.row(r));
            for d in (0..assign.len()).rev() {
                assign[d] += 1;
                if assign[d] < pcards[d] {
                    break;
                }
                assign[d] = 0;
            }
        }
        let mut scope = parents.clone();
        scope.push(me);
        let mut cards = pcards;
        cards.push(n);
        vars.push(Variable {
            id: o.path.clone(),
            obj: Some(*oid),
            domain: spec.domain.clone(),
            parents,
            slots,
            cpt: Factor::new(scope, cards, table),
        });
    }
    let by_id = vars.iter().enumerate().map(|(i, v)| (v.id.clone(), i)).collect();
    Ok(FlatBN { vars, by_id, by_obj })
}

/// Exact posterior over `targets` by enumerating every assignment of the
/// targets' and evidence's ancestors.
pub fn enumerate_joint(bn: &FlatBN, evidence: &Evidence, targets: &[VarId], cap: u64) -> Result<Factor> {
    let rel = bn.ancestors(targets.iter().copied().chain(evidence.keys().copied()));
    let order: Vec<VarId> = (0..bn.len()).filter(|&v| rel[v]).collect();
    let mut space: u64 = 1;
    for &v in &order {
        if !evidence.contains_key(&v) {
            space = space.saturating_mul(bn.vars[v].card() as u64);
        }
    }
    if space > cap {
        return err(ErrorCode::TooLarge, format!("enumeration needs {space} states (cap {cap})"));
    }
    let cards: Vec<usize> = targets.iter().map(|&t| bn.vars[t].card()).collect();
    let n: usize = cards.iter().product();
    let mut acc = vec![(0.0f64, 0.0f64); n];
    let mut val = vec![0usize; bn.len()];
    for (&v, &x) in evidence {
        val[v] = x;
    }
    let free: Vec<VarId> = order.iter().copied().filter(|v| !evidence.contains_key(v)).collect();
    loop {
        let mut p = 1.0;
        for &v in &order {
            let x = &bn.vars[v];
            let mut idx = 0;
            for (i, &q) in x.cpt.vars.iter().enumerate() {
                idx = idx * x.cpt.cards[i] + val[q];
            }
            p *= x.cpt.table[idx];
            if p == 0.0 {
                break;
            }
        }
        if p != 0.0 {
            let mut ti = 0;
            for (i, &t) in targets.iter().enumerate() {
                ti = ti * cards[i] + val[t];
            }
            let (s, c) = &mut acc[ti];
            let t = *s + p;
            if s.abs() >= p.abs() {
                *c += (*s - t) + p;
            } else {
                *c += (p - t) + *s;
            }
            *s = t;
        }
        let mut d = free.len();
        loop {
            if d == 0 {
                let table: Vec<f64> = acc.iter().map(|(s, c)| s + c).collect();
                return Factor::new(targets.to_vec(), cards, table).normalized();
            }
            d -= 1;
            let v = free[d];
            val[v] += 1;
            if val[v] < bn.vars[v].card() {
                break;
            }
            val[v] = 0;
        }
    }
}

/// Probability of the evidence itself, by enumeration.
pub fn evidence_probability(bn: &FlatBN, evidence: &Evidence, cap: u64) -> Result<f64> {
    let rel = bn.ancestors(evidence.keys().copied());
    let mut f = Factor::scalar(1.0);
    let order: Vec<VarId> = (0..bn.len()).filter(|&v| rel[v]).collect();
    let space: u64 = order.iter().filter(|v| !evidence.contains_key(v)).map(|&v| bn.vars[v].card() as u64).product();
    if space > cap {
        return err(ErrorCode::TooLarge, format!("enumeration needs {space} states (cap {cap})"));
    }
    for &v in &order {
        f = f.product(&bn.vars[v].cpt);
    }
    for (&v, &x) in evidence {
        f.observe(v, x);
    }
    Ok(neumaier(f.table.iter().copied()))
}

/// Whether `sep` d-separates `inside` from every other variable.
pub fn verify_dsep(bn: &FlatBN, inside: &[VarId], sep: &[VarId]) -> bool {
    let n = bn.len();
    let mut in_sep = vec![false; n];
    for &s in sep {
        in_sep[s] = true;
    }
    let anc = bn.ancestors(sep.iter().copied());
    let children = bn.children();
    let mut inside_mark = vec![false; n];
    for &x in inside {
        inside_mark[x] = true;
    }
    // Reachability over (node, arrived-from-child) states.
    let mut seen = vec![[false; 2]; n];
    let mut stack: Vec<(VarId, bool)> = inside.iter().map(|&x| (x, true)).collect();
    while let Some((y, up)) = stack.pop() {
        if std::mem::replace(&mut seen[y][up as usize], true) {
            continue;
        }
        if !in_sep[y] && !inside_mark[y] {
            return false;
        }
        if up {
            if !in_sep[y] {
                stack.extend(bn.vars[y].parents.iter().map(|&p| (p, true)));
                stack.extend(children[y].iter().map(|&c| (c, false)));
            }
        } else {
            if !in_sep[y] {
                stack.extend(children[y].iter().map(|&c| (c, false)));
            }
            if anc[y] {
                stack.extend(bn.vars[y].parents.iter().map(|&p| (p, true)));
            }
        }
    }
    true
}
