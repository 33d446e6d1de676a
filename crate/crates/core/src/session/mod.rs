//! Live sessions over a model: queries, persistent evidence, refinement
//! (iconize, deiconize, substitute) and a replayable operation log.

mod iconize;

use std::collections::BTreeMap;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

pub use iconize::{iconize, iconize_class, ICON_PREFIX};

use crate::dsl::{parse_model, render_model};
use crate::error::{err, Error, ErrorCode, Result};
use crate::flatten::{build_flat_bn, resolve_path, FlatBN, VarId};
use crate::inference::{Factor, JunctionTree};
use crate::model::{compile, instantiate_with, GroundModel, Model, Overrides};
use crate::msbn::{carry_over, ClassCache, CostReport, HtOptions, Hypertree, Locality, SubnetCost, UpTo};
use crate::typesys::{interface_mismatches, projected_interface};

/// Version tag carried by every JSON document this crate emits.
pub const SCHEMA_VERSION: u32 = 1;

/// A probability as a decimal string with 12 significant digits.
pub fn fmt_prob(p: f64) -> String {
    let r: f64 = format!("{p:.11e}").parse().unwrap_or(p);
    format!("{r}")
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum EngineKind {
    Flat,
    #[default]
    Msbn,
}

impl std::str::FromStr for EngineKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "flat" => Ok(EngineKind::Flat),
            "msbn" => Ok(EngineKind::Msbn),
            _ => err(ErrorCode::Usage, format!("unknown engine `{s}` (expected flat or msbn)")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SessionOptions {
    pub engine: EngineKind,
    pub caching: bool,
}

impl Default for SessionOptions {
    fn default() -> Self {
        SessionOptions { engine: EngineKind::Msbn, caching: true }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum RefineKind {
    Iconize,
    Deiconize,
    Substitute,
}

impl std::str::FromStr for RefineKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_uppercase().as_str() {
            "ICONIZE" => Ok(RefineKind::Iconize),
            "DEICONIZE" => Ok(RefineKind::Deiconize),
            "SUBSTITUTE" => Ok(RefineKind::Substitute),
            _ => err(ErrorCode::Usage, format!("unknown refinement `{s}`")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RefinementOp {
    pub kind: RefineKind,
    pub path: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub class: Option<String>,
}

/// One line of the session log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "op", rename_all = "lowercase")]
pub enum LogEntry {
    Load {
        source: String,
        #[serde(default)]
        engine: EngineKind,
        #[serde(default = "yes")]
        caching: bool,
    },
    Evidence {
        path: String,
        value: String,
    },
    Retract {
        path: String,
    },
    Query {
        targets: Vec<String>,
        #[serde(default)]
        evidence: Vec<(String, String)>,
    },
    Refine(RefinementOp),
}

fn yes() -> bool {
    true
}

/// A normalized joint over query targets.
#[derive(Debug, Clone, PartialEq)]
pub struct Posterior {
    pub targets: Vec<String>,
    pub domains: Vec<Vec<String>>,
    /// Row-major over `targets`, first slowest.
    pub probs: Vec<f64>,
    pub evidence: Vec<(String, String)>,
    pub stats: CostReport,
}

impl Posterior {
    /// Every assignment with its probability, in table order.
    pub fn rows(&self) -> Vec<(Vec<&str>, f64)> {
        let mut out = Vec::with_capacity(self.probs.len());
        let mut idx = vec![0usize; self.targets.len()];
        for &p in &self.probs {
            out.push((idx.iter().enumerate().map(|(k, &i)| self.domains[k][i].as_str()).collect(), p));
            for k in (0..idx.len()).rev() {
                idx[k] += 1;
                if idx[k] < self.domains[k].len() {
                    break;
                }
                idx[k] = 0;
            }
        }
        out
    }

    pub fn to_json(&self) -> Value {
        let rows: Vec<Value> =
            self.rows().into_iter().map(|(vals, p)| json!({ "values": vals, "p": fmt_prob(p) })).collect();
        json!({
            "schema_version": SCHEMA_VERSION,
            "targets": self.targets,
            "domains": self.domains,
            "evidence": self.evidence.iter().map(|(p, v)| json!({"path": p, "value": v})).collect::<Vec<_>>(),
            "rows": rows,
        })
    }

    /// Plain-text table, one assignment per line.
    pub fn render(&self) -> String {
        let mut out = format!("P({}", self.targets.join(", "));
        if !self.evidence.is_empty() {
            let ev: Vec<String> = self.evidence.iter().map(|(p, v)| format!("{p}={v}")).collect();
            out.push_str(&format!(" | {}", ev.join(", ")));
        }
        out.push_str(")\n");
        let rows = self.rows();
        let width = rows.iter().map(|(v, _)| v.join(" ").len()).max().unwrap_or(0);
        for (vals, p) in rows {
            out.push_str(&format!("  {:<width$}  {}\n", vals.join(" "), fmt_prob(p)));
        }
        out
    }
}

#[derive(Debug, Clone)]
enum State {
    Flat(Box<JunctionTree>),
    Msbn(Box<Hypertree>),
}

/// A model under interactive use.
#[derive(Debug, Clone)]
pub struct Session {
    base: Model,
    model: Model,
    overrides: Overrides,
    /// Iconized objects and the class each one stands for.
    iconized: BTreeMap<String, String>,
    gm: GroundModel,
    bn: FlatBN,
    state: State,
    options: SessionOptions,
    cache: Arc<ClassCache>,
    /// Session evidence by variable id.
    evidence: BTreeMap<String, String>,
    log: Vec<LogEntry>,
    last_stats: CostReport,
    last_locality: Option<Locality>,
}

impl Session {
    pub fn new(model: Model, options: SessionOptions) -> Result<Self> {
        Self::with_cache(model, options, ClassCache::new())
    }

    pub fn from_source(src: &str, options: SessionOptions) -> Result<Self> {
        Self::new(compile(&parse_model(src)?)?, options)
    }

    /// A session sharing `cache` with others over the same classes.
    pub fn with_cache(model: Model, options: SessionOptions, cache: Arc<ClassCache>) -> Result<Self> {
        let gm = instantiate_with(&model, &Overrides::new())?;
        let bn = build_flat_bn(&model, &gm)?;
        let state = build_state(&gm, &bn, options, &cache)?;
        let source = render_model(&model.source);
        let mut s = Session {
            base: model.clone(),
            model,
            overrides: Overrides::new(),
            iconized: BTreeMap::new(),
            gm,
            bn,
            state,
            options,
            cache,
            evidence: BTreeMap::new(),
            log: vec![LogEntry::Load { source, engine: options.engine, caching: options.caching }],
            last_stats: CostReport::default(),
            last_locality: None,
        };
        s.last_stats = s.collect()?;
        Ok(s)
    }

    pub fn model(&self) -> &Model {
        &self.model
    }

    pub fn ground(&self) -> &GroundModel {
        &self.gm
    }

    pub fn bn(&self) -> &FlatBN {
        &self.bn
    }

    pub fn options(&self) -> SessionOptions {
        self.options
    }

    pub fn hypertree(&self) -> Option<&Hypertree> {
        match &self.state {
            State::Msbn(h) => Some(h),
            State::Flat(_) => None,
        }
    }

    pub fn evidence(&self) -> &BTreeMap<String, String> {
        &self.evidence
    }

    pub fn overrides(&self) -> &Overrides {
        &self.overrides
    }

    /// Iconized objects and the class each one stands for.
    pub fn iconized(&self) -> &BTreeMap<String, String> {
        &self.iconized
    }

    pub fn log(&self) -> &[LogEntry] {
        &self.log
    }

    pub fn log_jsonl(&self) -> String {
        self.log.iter().map(|e| serde_json::to_string(e).unwrap() + "\n").collect()
    }

    /// Cost of the last operation.
    pub fn stats(&self) -> &CostReport {
        &self.last_stats
    }

    pub fn last_locality(&self) -> Option<&Locality> {
        self.last_locality.as_ref()
    }

    /// Collect toward the root; reports zero-probability evidence.
    fn collect(&mut self) -> Result<CostReport> {
        calibrate_root(&mut self.state)
    }

    fn resolve(&self, path: &str) -> Result<VarId> {
        resolve_path(&self.gm, &self.bn, path)
    }

    /// Posterior over `targets` given the session evidence plus
    /// `evidence`, which applies to this call only.
    pub fn query(&mut self, targets: &[String], evidence: &[(String, String)]) -> Result<Posterior> {
        let vars: Vec<VarId> = targets.iter().map(|t| self.resolve(t)).collect::<Result<_>>()?;
        let mut extra = Vec::new();
        for (p, v) in evidence {
            let var = self.resolve(p)?;
            extra.push((var, self.bn.value_index(var, v)?));
        }
        let (f, stats) = if extra.is_empty() {
            query_state(&mut self.state, &vars)?
        } else {
            let mut scratch = self.state.clone();
            for &(v, x) in &extra {
                set_state_evidence(&mut scratch, v, x)?;
            }
            query_state(&mut scratch, &vars)?
        };
        self.log.push(LogEntry::Query { targets: targets.to_vec(), evidence: evidence.to_vec() });
        self.last_stats = stats.clone();
        let mut ev: Vec<(String, String)> = self.evidence.iter().map(|(k, v)| (k.clone(), v.clone())).collect();
        for &(v, x) in &extra {
            ev.push((self.bn.vars[v].id.clone(), self.bn.vars[v].domain.values[x].clone()));
        }
        Ok(Posterior {
            targets: vars.iter().map(|&v| self.bn.vars[v].id.clone()).collect(),
            domains: vars.iter().map(|&v| self.bn.vars[v].domain.values.clone()).collect(),
            probs: f.table,
            evidence: ev,
            stats,
        })
    }

    /// Enters `path = value` for all later queries. Evidence that makes the
    /// observations impossible is rejected and the session left unchanged.
    pub fn assert_evidence(&mut self, path: &str, value: &str) -> Result<()> {
        let v = self.resolve(path)?;
        let x = self.bn.value_index(v, value)?;
        let id = self.bn.vars[v].id.clone();
        let before = self.evidence.get(&id).cloned();
        set_state_evidence(&mut self.state, v, x)?;
        match self.collect() {
            Ok(stats) => self.last_stats = stats,
            Err(e) => {
                match &before {
                    Some(b) => set_state_evidence(&mut self.state, v, self.bn.value_index(v, b)?)?,
                    None => retract_state_evidence(&mut self.state, v),
                }
                return Err(e);
            }
        }
        self.evidence.insert(id, value.to_string());
        self.log.push(LogEntry::Evidence { path: path.to_string(), value: value.to_string() });
        Ok(())
    }

    pub fn retract_evidence(&mut self, path: &str) -> Result<()> {
        let v = self.resolve(path)?;
        retract_state_evidence(&mut self.state, v);
        self.evidence.remove(&self.bn.vars[v].id);
        self.last_stats = self.collect()?;
        self.log.push(LogEntry::Retract { path: path.to_string() });
        Ok(())
    }

    /// Applies a structural change and reports which subnets had to be
    /// rebuilt or recalibrated. On error the session is unchanged.
    pub fn apply_refinement(&mut self, op: &RefinementOp) -> Result<Locality> {
        let Some(t) = self.gm.find(&op.path).filter(|&t| t != 0 && self.gm.obj(t).complex().is_some()) else {
            return err(ErrorCode::UnknownPath, format!("`{}` is not a refinable complex object", op.path));
        };
        let target = self.gm.obj(t).path.clone();
        let current = self.gm.obj(t).complex().unwrap().class.name.clone();
        let mut iconized = self.iconized.clone();
        let mut model = self.model.clone();
        let new_class = match op.kind {
            RefineKind::Iconize => {
                if iconized.contains_key(&target) {
                    return err(ErrorCode::IncompatibleClass, format!("`{target}` is already iconized"));
                }
                let (m, name) = iconize(&model, &current)?;
                model = m;
                iconized.insert(target.clone(), current.clone());
                name
            }
            RefineKind::Deiconize => match iconized.remove(&target) {
                Some(orig) => orig,
                None => return err(ErrorCode::IncompatibleClass, format!("`{target}` is not iconized")),
            },
            RefineKind::Substitute => {
                let Some(cn) = &op.class else {
                    return err(ErrorCode::Usage, "SUBSTITUTE needs a class");
                };
                model.class(cn)?;
                let old = iconized.get(&target).cloned().unwrap_or(current.clone());
                self.check_substitution(t, &old, cn)?;
                if iconized.contains_key(&target) {
                    let (m, name) = iconize(&model, cn)?;
                    model = m;
                    iconized.insert(target.clone(), cn.clone());
                    name
                } else {
                    cn.clone()
                }
            }
        };

        let mut overrides = self.overrides.clone();
        let nested = format!("{target}.");
        overrides.retain(|p, _| !p.starts_with(&nested));
        iconized.retain(|p, _| !p.starts_with(&nested));
        let declared = self.declared_class(&target);
        if declared.as_deref() == Some(new_class.as_str()) {
            overrides.remove(&target);
        } else {
            overrides.insert(target.clone(), new_class.clone());
        }
        let gm = instantiate_with(&model, &overrides)
            .map_err(|e| Error::new(ErrorCode::IncompatibleClass, format!("`{new_class}` does not fit `{target}`: {e}")))?;
        let bn = build_flat_bn(&model, &gm)?;

        let mut ev: Vec<(VarId, usize)> = Vec::new();
        for (id, val) in &self.evidence {
            let orphan = || Error::new(ErrorCode::EvidenceOrphaned, format!("evidence on `{id}` has no attribute to attach to after the change; retract it first"));
            let v = bn.index(id).ok_or_else(orphan)?;
            ev.push((v, bn.vars[v].domain.index_of(val).ok_or_else(orphan)?));
        }

        let mut state = build_state(&gm, &bn, self.options, &self.cache)?;
        for &(v, x) in &ev {
            set_state_evidence(&mut state, v, x)?;
        }
        let locality = match (&mut self.state, &mut state) {
            (State::Msbn(old), State::Msbn(new)) => carry_over(old, new, &self.bn, &bn, &target)?,
            _ => Locality {
                target: target.clone(),
                rebuilt: vec![gm.root().path.clone()],
                kept: 0,
                ..Default::default()
            },
        };
        let stats = calibrate_root(&mut state)?;

        self.model = model;
        self.overrides = overrides;
        self.iconized = iconized;
        self.gm = gm;
        self.bn = bn;
        self.state = state;
        self.last_stats = stats;
        self.last_locality = Some(locality.clone());
        self.log.push(LogEntry::Refine(op.clone()));
        Ok(locality)
    }

    /// The class the situation declares for `path`, ignoring refinements.
    fn declared_class(&self, path: &str) -> Option<String> {
        let gm = instantiate_with(&self.base, &Overrides::new()).ok()?;
        let mut cur = 0;
        let root = gm.root().path.clone();
        let rest = path.strip_prefix(&root)?.strip_prefix('.')?;
        for l in rest.split('.') {
            let c = gm.obj(cur).complex()?;
            match c.class.value(l).and_then(|v| v.class_name()) {
                Some(_) => cur = gm.obj(cur).child(l)?,
                None => return None,
            }
        }
        Some(gm.obj(cur).complex()?.class.name.clone())
    }

    /// Outputs of the object at `t` that something outside it reads.
    pub fn used_outputs(&self, t: usize) -> Vec<String> {
        let path = &self.gm.obj(t).path;
        let prefix = format!("{path}.");
        let mut out: Vec<String> = Vec::new();
        for (p, c) in self.bn.edges() {
            let (pi, ci) = (&self.bn.vars[p].id, &self.bn.vars[c].id);
            if pi.starts_with(&prefix) && !ci.starts_with(&prefix) {
                let first = pi[prefix.len()..].split('.').next().unwrap().to_string();
                if !out.contains(&first) {
                    out.push(first);
                }
            }
        }
        out
    }

    /// Classes that may replace the one at `path`.
    pub fn compatible_classes(&self, path: &str) -> Result<Vec<String>> {
        let Some(t) = self.gm.find(path).filter(|&t| t != 0 && self.gm.obj(t).complex().is_some()) else {
            return err(ErrorCode::UnknownPath, format!("`{path}` is not a refinable complex object"));
        };
        let target = &self.gm.obj(t).path;
        let current = self.gm.obj(t).complex().unwrap().class.name.clone();
        let old = self.iconized.get(target).cloned().unwrap_or(current);
        Ok(self
            .model
            .classes
            .keys()
            .filter(|c| !c.starts_with(ICON_PREFIX) && self.check_substitution(t, &old, c).is_ok())
            .cloned()
            .collect())
    }

    fn check_substitution(&self, t: usize, old: &str, new: &str) -> Result<()> {
        if old == new {
            return Ok(());
        }
        let used = self.used_outputs(t);
        let (o, n) = (self.model.class(old)?, self.model.class(new)?);
        let incompatible = |why: String| err(ErrorCode::IncompatibleClass, format!("`{new}` cannot replace `{old}`: {why}"));
        if let Some(missing) = used.iter().find(|l| !n.outputs().any(|v| &v.label == *l)) {
            return incompatible(format!("no output `{missing}`"));
        }
        let pn = projected_interface(n, &used)?;
        let po = projected_interface(o, &used)?;
        let bad = interface_mismatches(&pn, &po, &self.model.env.maps);
        if !bad.is_empty() {
            return incompatible(format!("interface mismatch on {}", bad.join(", ")));
        }
        let slot = &self.gm.obj(t).annotations;
        if let Some((i, _)) = pn.inputs.iter().find(|(i, _)| !slot.iter().any(|a| &a.input == i)) {
            return incompatible(format!("input `{i}` is not supplied at `{}`", self.gm.obj(t).path));
        }
        Ok(())
    }

    /// Re-runs a JSON-lines log from its `load` line. Returns the session
    /// and the answers to every logged query.
    pub fn replay(log: &str) -> Result<(Session, Vec<Posterior>)> {
        let entries = parse_log(log)?;
        let Some(LogEntry::Load { source, engine, caching }) = entries.first() else {
            return err(ErrorCode::Parse, "a session log starts with a `load` line");
        };
        let mut s = Session::from_source(source, SessionOptions { engine: *engine, caching: *caching })?;
        let mut answers = Vec::new();
        for e in &entries[1..] {
            answers.extend(s.apply_entry(e)?);
        }
        Ok((s, answers))
    }

    /// Performs one logged operation; queries return their answer.
    pub fn apply_entry(&mut self, e: &LogEntry) -> Result<Option<Posterior>> {
        match e {
            LogEntry::Load { .. } => return err(ErrorCode::Parse, "`load` may only start a log"),
            LogEntry::Evidence { path, value } => self.assert_evidence(path, value)?,
            LogEntry::Retract { path } => self.retract_evidence(path)?,
            LogEntry::Query { targets, evidence } => return self.query(targets, evidence).map(Some),
            LogEntry::Refine(op) => {
                self.apply_refinement(op)?;
            }
        }
        Ok(None)
    }

    /// Object tree, class hierarchy and (for the structured engine) the
    /// hypertree, as served by the structure endpoint.
    pub fn structure_json(&self) -> Value {
        structure_json(&self.model, &self.gm, &self.bn, self.hypertree(), &self.iconized)
    }
}

/// Parses a JSON-lines session log, skipping blank lines.
pub fn parse_log(log: &str) -> Result<Vec<LogEntry>> {
    log.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(n, l)| serde_json::from_str(l).map_err(|e| Error::new(ErrorCode::Parse, format!("log line {}: {e}", n + 1))))
        .collect()
}

/// Structure document for a model instance.
pub fn structure_json(
    model: &Model,
    gm: &GroundModel,
    bn: &FlatBN,
    ht: Option<&Hypertree>,
    iconized: &BTreeMap<String, String>,
) -> Value {
    let objects: Vec<Value> = gm
        .objects
        .iter()
        .map(|o| {
            let mut v = json!({
                "path": o.path,
                "label": o.label,
                "sigma": o.sigma,
                "parent": o.parent.map(|p| gm.obj(p).path.clone()),
            });
            match &o.kind {
                crate::model::ObjKind::Simple(s) => {
                    v["kind"] = json!("simple");
                    v["type"] = json!(s.domain.name);
                    v["domain"] = json!(s.domain.values);
                }
                crate::model::ObjKind::Complex(c) => {
                    v["kind"] = json!("complex");
                    v["class"] = json!(c.class.name);
                    v["iconized"] = json!(iconized.contains_key(&o.path));
                }
            }
            v
        })
        .collect();
    let classes: Vec<Value> = model
        .classes
        .keys()
        .map(|c| json!({ "name": c, "supers": model.supers(c) }))
        .collect();
    let mut out = json!({
        "schema_version": SCHEMA_VERSION,
        "objects": objects,
        "classes": classes,
        "situation": model.situation.name,
    });
    if let Some(h) = ht {
        out["hypertree"] = h.structure_json(bn);
    }
    out
}

fn build_state(gm: &GroundModel, bn: &FlatBN, options: SessionOptions, cache: &Arc<ClassCache>) -> Result<State> {
    Ok(match options.engine {
        EngineKind::Flat => State::Flat(Box::new(JunctionTree::new(bn)?)),
        EngineKind::Msbn => State::Msbn(Box::new(Hypertree::build(
            gm,
            bn,
            HtOptions { caching: options.caching },
            Some(cache.clone()),
        )?)),
    })
}

fn flat_report(jt: &mut JunctionTree) -> CostReport {
    let cells = jt.cells();
    let touched = !jt.net.touched().is_empty();
    jt.net.reset_stats();
    CostReport {
        subnets: vec![SubnetCost { path: crate::model::ROOT.into(), class: String::new(), cells }],
        total_cells: cells,
        cache_hits: 0,
        subnets_recalibrated: if touched { vec![crate::model::ROOT.into()] } else { Vec::new() },
    }
}

fn calibrate_root(state: &mut State) -> Result<CostReport> {
    match state {
        State::Flat(jt) => {
            jt.net.reset_stats();
            jt.calibrate()?;
            Ok(flat_report(jt))
        }
        State::Msbn(h) => h.calibrate(UpTo::Subnet(0)),
    }
}

fn query_state(state: &mut State, vars: &[VarId]) -> Result<(Factor, CostReport)> {
    match state {
        State::Flat(jt) => {
            jt.net.reset_stats();
            let f = jt.query(vars)?;
            Ok((f, flat_report(jt)))
        }
        State::Msbn(h) => h.query(vars),
    }
}

fn set_state_evidence(state: &mut State, v: VarId, x: usize) -> Result<()> {
    match state {
        State::Flat(jt) => jt.set_evidence(v, x),
        State::Msbn(h) => h.set_evidence(v, x),
    }
}

fn retract_state_evidence(state: &mut State, v: VarId) {
    match state {
        State::Flat(jt) => jt.retract_evidence(v),
        State::Msbn(h) => h.retract_evidence(v),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus;

    fn accident(engine: EngineKind) -> Session {
        Session::from_source(&corpus::accident_source(), SessionOptions { engine, caching: true }).unwrap()
    }

    fn q(s: &mut Session, t: &str) -> Vec<f64> {
        s.query(&[t.to_string()], &[]).unwrap().probs
    }

    #[test]
    fn formats_twelve_significant_digits() {
        assert_eq!(fmt_prob(0.3), "0.3");
        assert_eq!(fmt_prob(1.0 / 3.0), "0.333333333333");
        assert_eq!(fmt_prob(2.0 / 3.0), "0.666666666667");
        assert_eq!(fmt_prob(1.0), "1");
        assert_eq!(fmt_prob(0.0), "0");
        assert_eq!(fmt_prob(1.234e-7), "0.0000001234");
    }

    #[test]
    fn call_evidence_does_not_stick() {
        let mut s = accident(EngineKind::Msbn);
        let prior = q(&mut s, "Damage");
        let ev = vec![("Driver.Age".to_string(), "0-20yr".to_string()), ("Road.Location".to_string(), "rural".to_string())];
        let post = s.query(&["Damage".into()], &ev).unwrap();
        assert!(post.probs.iter().zip(&prior).any(|(a, b)| (a - b).abs() > 1e-6));
        assert_eq!(q(&mut s, "Damage"), prior);
        s.assert_evidence("Road.Location", "rural").unwrap();
        s.retract_evidence("Road.Location").unwrap();
        let back = q(&mut s, "Damage");
        assert!(back.iter().zip(&prior).all(|(a, b)| (a - b).abs() < 1e-12));
    }

    #[test]
    fn bad_paths_and_values() {
        let mut s = accident(EngineKind::Flat);
        assert!(s.query(&["Nope".into()], &[]).unwrap_err().has_code(ErrorCode::BadChain));
        assert!(s.assert_evidence("Damage", "total").unwrap_err().has_code(ErrorCode::BadValue));
        let r = RefinementOp { kind: RefineKind::Deiconize, path: "Car".into(), class: None };
        assert!(s.apply_refinement(&r).unwrap_err().has_code(ErrorCode::IncompatibleClass));
        let r = RefinementOp { kind: RefineKind::Iconize, path: "Situation".into(), class: None };
        assert!(s.apply_refinement(&r).unwrap_err().has_code(ErrorCode::UnknownPath));
    }

    #[test]
    fn refinement_round_trip_and_replay() {
        let src = corpus::subclass_source();
        let mut s = Session::from_source(&src, SessionOptions::default()).unwrap();
        s.assert_evidence("Driver.Age", "0-20yr").unwrap();
        let before = q(&mut s, "Damage");
        let ic = RefinementOp { kind: RefineKind::Iconize, path: "Car".into(), class: None };
        let loc = s.apply_refinement(&ic).unwrap();
        assert!(loc.rebuilt.iter().all(|p| p.starts_with("Situation.Car")));
        let after = q(&mut s, "Damage");
        assert!(before.iter().zip(&after).all(|(a, b)| (a - b).abs() < 1e-9));
        let sub = RefinementOp { kind: RefineKind::Substitute, path: "Car".into(), class: Some("SPORTS-CAR".into()) };
        let loc = s.apply_refinement(&sub).unwrap();
        assert_eq!(loc.rebuilt_inside, 0);
        assert_eq!(s.iconized()["Situation.Car"], "SPORTS-CAR");
        let de = RefinementOp { kind: RefineKind::Deiconize, path: "Car".into(), class: None };
        let loc = s.apply_refinement(&de).unwrap();
        assert!(loc.subnets_recalibrated.iter().all(|p| p.starts_with("Situation.Car")));
        let end = q(&mut s, "Damage");

        let (r, answers) = Session::replay(&s.log_jsonl()).unwrap();
        assert_eq!(answers.len(), 3);
        assert_eq!(answers[2].probs, end);
        assert_eq!(r.overrides(), s.overrides());
    }

    #[test]
    fn contradictory_evidence_is_rolled_back() {
        let src = "type B = {t, f}; situation S { private A: B { 0.5 0.5 } private C: B given (a: B) { (t): 1 0; (f): 0 1; } C.a <- A; }";
        for engine in [EngineKind::Flat, EngineKind::Msbn] {
            let mut s = Session::from_source(src, SessionOptions { engine, caching: true }).unwrap();
            s.assert_evidence("A", "t").unwrap();
            assert!(s.assert_evidence("C", "f").unwrap_err().has_code(ErrorCode::ZeroProb));
            assert_eq!(q(&mut s, "C"), vec![1.0, 0.0]);
            assert_eq!(s.evidence().len(), 1);
        }
    }
}
