use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::sync::Arc;

use serde::Serialize;
use serde_json::{json, Value};
use sha2::{Digest, Sha256};

use super::cache::ClassCache;
use crate::error::{err, ErrorCode, Result};
use crate::flatten::{FlatBN, VarId};
use crate::inference::engine::{CliqueNet, LinkKey};
use crate::inference::factor::Factor;
use crate::inference::triangulate::{build_skeleton, triangulate, Skeleton};
use crate::model::{GroundModel, ObjId};

/// Variables a complex object imports and exports.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct IOSet {
    pub owner: ObjId,
    pub imported: BTreeSet<VarId>,
    pub exported: BTreeSet<VarId>,
}

impl IOSet {
    pub fn all(&self) -> BTreeSet<VarId> {
        self.imported.union(&self.exported).copied().collect()
    }
}

/// Complex objects strictly containing each variable's simple object,
/// innermost first.
fn containers(gm: &GroundModel, bn: &FlatBN) -> Vec<Vec<ObjId>> {
    bn.vars
        .iter()
        .map(|v| {
            let mut out = Vec::new();
            let mut cur = v.obj.and_then(|o| gm.obj(o).parent);
            while let Some(c) = cur {
                out.push(c);
                cur = gm.obj(c).parent;
            }
            out
        })
        .collect()
}

/// I/O-sets of every complex object, read off the network's edges: a
/// parent defined outside `X` feeding a child defined inside is imported
/// by `X`; the reverse is exported.
pub fn compute_io_sets(gm: &GroundModel, bn: &FlatBN) -> BTreeMap<ObjId, IOSet> {
    let mut out: BTreeMap<ObjId, IOSet> = gm.complex_ids().map(|x| (x, IOSet { owner: x, ..Default::default() })).collect();
    let anc = containers(gm, bn);
    for (p, c) in bn.edges() {
        for x in &anc[c] {
            if !anc[p].contains(x) {
                out.get_mut(x).unwrap().imported.insert(p);
            }
        }
        for x in &anc[p] {
            if !anc[c].contains(x) {
                out.get_mut(x).unwrap().exported.insert(p);
            }
        }
    }
    out
}

#[derive(Debug, Clone)]
pub struct Subnet {
    pub owner: ObjId,
    pub path: String,
    pub class: String,
    /// Σ_X in canonical order: variables defined in X by position, then
    /// imports in order of first use.
    pub vars: Vec<VarId>,
    /// Simple value attributes of X itself.
    pub local: Vec<VarId>,
    pub io: IOSet,
    pub parent: Option<usize>,
    pub children: Vec<usize>,
    /// Σ_parent ∩ Σ_X in canonical order.
    pub dsepset: Vec<VarId>,
    /// Clique ids in the shared net.
    pub cliques: Vec<usize>,
    /// This subnet's clique on the link to its parent.
    pub up: Option<usize>,
    /// This subnet's clique on the link to each child subnet.
    pub down: Vec<(usize, usize)>,
    /// Class, CPTs and wiring of the whole subtree rooted here.
    pub fingerprint: String,
    /// Structure and CPTs of this subnet alone.
    pub local_fp: String,
    pub skeleton: Arc<Skeleton>,
    /// Canonical names of `vars`.
    pub names: Vec<String>,
}

/// Which part of the hypertree to calibrate.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum UpTo {
    All,
    /// Every clique of one subnet (index into `subnets`).
    Subnet(usize),
}

#[derive(Debug, Clone, Serialize, PartialEq)]
pub struct SubnetCost {
    pub path: String,
    pub class: String,
    pub cells: u64,
}

/// Work done by the last operation: c(X) as factor cells touched per
/// subnet, cache hits, and which subnets did any work.
#[derive(Debug, Clone, Serialize, PartialEq, Default)]
pub struct CostReport {
    pub subnets: Vec<SubnetCost>,
    pub total_cells: u64,
    pub cache_hits: u64,
    pub subnets_recalibrated: Vec<String>,
}

#[derive(Debug, Clone, Copy)]
pub struct HtOptions {
    pub caching: bool,
}

impl Default for HtOptions {
    fn default() -> Self {
        HtOptions { caching: true }
    }
}

#[derive(Debug, Clone)]
pub struct Hypertree {
    pub subnets: Vec<Subnet>,
    by_obj: HashMap<ObjId, usize>,
    pub net: CliqueNet,
    pub options: HtOptions,
    cache: Arc<ClassCache>,
    anc: Vec<Vec<ObjId>>,
    /// Subnet whose junction tree holds each variable's CPT.
    home: Vec<usize>,
    /// Cumulative cells per subnet since construction.
    pub lifetime: Vec<u64>,
}

fn digest(parts: &[String]) -> String {
    let mut h = Sha256::new();
    for p in parts {
        h.update(p.as_bytes());
        h.update([0u8]);
    }
    hex::encode(h.finalize())
}

fn bits(f: &Factor) -> String {
    f.table.iter().map(|x| format!("{:016x}", x.to_bits())).collect::<Vec<_>>().join("")
}

impl Hypertree {
    pub fn build(gm: &GroundModel, bn: &FlatBN, options: HtOptions, cache: Option<Arc<ClassCache>>) -> Result<Self> {
        let cache = cache.unwrap_or_default();
        let io = compute_io_sets(gm, bn);
        let anc = containers(gm, bn);
        let objs: Vec<ObjId> = gm.complex_ids().collect();
        let by_obj: HashMap<ObjId, usize> = objs.iter().enumerate().map(|(i, &o)| (o, i)).collect();

        // Σ_X and canonical names first; d-sepsets need neighbours' Σ.
        let mut sigma: Vec<Vec<VarId>> = Vec::new();
        let mut names: Vec<HashMap<VarId, String>> = Vec::new();
        for &x in &objs {
            let xo = gm.obj(x);
            let defined: Vec<VarId> = (0..bn.len()).filter(|&v| anc[v].contains(&x)).collect();
            let mut nm: HashMap<VarId, String> = HashMap::new();
            for &v in &defined {
                let p = gm.obj(bn.vars[v].obj.unwrap()).path.as_str();
                nm.insert(v, format!("@{}", &p[xo.path.len() + 1..]));
            }
            let mut imports = Vec::new();
            for &v in &defined {
                for &p in &bn.vars[v].parents {
                    if !nm.contains_key(&p) {
                        nm.insert(p, format!("^{}", imports.len()));
                        imports.push(p);
                    }
                }
            }
            let mut set: BTreeSet<VarId> = io[&x].all();
            for &v in &defined {
                if bn.vars[v].obj.and_then(|o| gm.obj(o).parent) == Some(x) {
                    set.insert(v);
                }
            }
            for (_, k) in &xo.complex().unwrap().children {
                if let Some(s) = io.get(k) {
                    set.extend(s.all());
                }
            }
            let mut s: Vec<VarId> = defined.iter().copied().filter(|v| set.contains(v)).collect();
            s.extend(imports.iter().copied().filter(|v| set.contains(v)));
            sigma.push(s);
            names.push(nm);
        }

        let mut subnets: Vec<Subnet> = Vec::new();
        for (i, &x) in objs.iter().enumerate() {
            let xo = gm.obj(x);
            let nm = &names[i];
            let vars = sigma[i].clone();
            let pos: HashMap<VarId, usize> = vars.iter().enumerate().map(|(k, &v)| (v, k)).collect();
            let parent = xo.parent.map(|p| by_obj[&p]);
            let children: Vec<usize> = xo.complex().unwrap().children.iter().filter_map(|(_, k)| by_obj.get(k).copied()).collect();
            let inter = |a: &[VarId], b: &[VarId]| -> Vec<VarId> { a.iter().copied().filter(|v| b.contains(v)).collect() };
            let dsepset = parent.map(|p| inter(&vars, &sigma[p])).unwrap_or_default();
            let local: Vec<VarId> =
                vars.iter().copied().filter(|&v| bn.vars[v].obj.and_then(|o| gm.obj(o).parent) == Some(x)).collect();
            let families: Vec<Vec<usize>> =
                local.iter().map(|&v| bn.vars[v].family(v).iter().map(|p| pos[p]).collect()).collect();
            let mut required: Vec<Vec<usize>> = vec![dsepset.iter().map(|v| pos[v]).collect()];
            for &c in &children {
                required.push(inter(&vars, &sigma[c]).iter().map(|v| pos[v]).collect());
            }
            let cards: Vec<usize> = vars.iter().map(|&v| bn.vars[v].card()).collect();
            let canon = |v: &VarId| nm[v].clone();
            let mut skel_parts = vec![xo.complex().unwrap().class.name.clone()];
            skel_parts.extend(vars.iter().map(|v| format!("{}:{}", canon(v), bn.vars[*v].domain.values.join(","))));
            skel_parts.extend(families.iter().map(|f| format!("{f:?}")));
            skel_parts.extend(required.iter().map(|r| format!("{r:?}")));
            let skel_key = digest(&skel_parts);
            let skeleton = cache.skeleton(&skel_key, || {
                let rank: Vec<usize> = (0..vars.len()).collect();
                let mut edges = Vec::new();
                for f in &families {
                    for (a, &p) in f.iter().enumerate() {
                        for &q in &f[a + 1..] {
                            edges.push((p, q));
                        }
                    }
                }
                let mut cl = triangulate(&cards, &rank, &edges, &required).cliques;
                if cl.is_empty() {
                    cl.push(Vec::new());
                }
                build_skeleton(cl, &families)
            })?;
            let mut local_parts = vec![skel_key];
            local_parts.extend(local.iter().map(|&v| bits(&bn.vars[v].cpt)));
            let local_fp = digest(&local_parts);

            let mut tree_parts = vec![xo.complex().unwrap().class.name.clone()];
            for v in (0..bn.len()).filter(|&v| anc[v].contains(&x)) {
                let var = &bn.vars[v];
                let ps: Vec<String> = var.parents.iter().map(|p| nm[p].clone()).collect();
                tree_parts.push(format!("{}:{}:{}:{}", nm[&v], var.domain.values.join(","), ps.join(","), bits(&var.cpt)));
            }
            for o in gm.subtree(x).into_iter().skip(1) {
                if let Some(c) = gm.obj(o).complex() {
                    tree_parts.push(format!("{}:{}", &gm.obj(o).path[xo.path.len()..], c.class.name));
                }
            }
            let exp: Vec<String> = io[&x].exported.iter().map(|v| nm[v].clone()).collect();
            tree_parts.push(format!("exports {}", exp.join(",")));
            tree_parts.push(format!("imports {}", io[&x].imported.len()));
            let fingerprint = digest(&tree_parts);

            subnets.push(Subnet {
                owner: x,
                path: xo.path.clone(),
                class: xo.complex().unwrap().class.name.clone(),
                names: vars.iter().map(canon).collect(),
                vars,
                local,
                io: io[&x].clone(),
                parent,
                children,
                dsepset,
                cliques: Vec::new(),
                up: None,
                down: Vec::new(),
                fingerprint,
                local_fp,
                skeleton,
            });
        }

        let mut net = CliqueNet::new(subnets.len());
        let mut home = vec![usize::MAX; bn.len()];
        for (i, s) in subnets.iter_mut().enumerate() {
            for c in &s.skeleton.cliques {
                let scope: Vec<VarId> = c.iter().map(|&k| s.vars[k]).collect();
                let cards = scope.iter().map(|&v| bn.vars[v].card()).collect();
                s.cliques.push(net.add_clique(scope, cards, i));
            }
            for (a, b, _) in &s.skeleton.edges {
                net.connect(s.cliques[*a], s.cliques[*b]);
            }
            for (k, &v) in s.local.iter().enumerate() {
                net.assign(s.cliques[s.skeleton.assign[k]], v, bn.vars[v].cpt.clone());
                home[v] = i;
            }
        }
        let pick = |net: &CliqueNet, s: &Subnet, set: &[VarId]| -> usize {
            *s.cliques
                .iter()
                .filter(|&&c| set.iter().all(|v| net.scopes[c].contains(v)))
                .min_by_key(|&&c| (net.cards[c].iter().product::<usize>(), c))
                .expect("interface clique exists")
        };
        for i in 1..subnets.len() {
            let p = subnets[i].parent.unwrap();
            let up = pick(&net, &subnets[i], &subnets[i].dsepset);
            let down = pick(&net, &subnets[p], &subnets[i].dsepset);
            net.connect(up, down);
            subnets[i].up = Some(up);
            subnets[p].down.push((i, down));
        }
        if options.caching {
            net.cache = Some(cache.clone());
        }
        let n = subnets.len();
        let mut ht = Hypertree { subnets, by_obj, net, options, cache, anc, home, lifetime: vec![0; n] };
        ht.refresh_link_keys();
        Ok(ht)
    }

    pub fn cache(&self) -> &Arc<ClassCache> {
        &self.cache
    }

    pub fn subnet_of(&self, obj: ObjId) -> Option<usize> {
        self.by_obj.get(&obj).copied()
    }

    pub fn subnet_by_path(&self, path: &str) -> Option<usize> {
        self.subnets.iter().position(|s| s.path == path)
    }

    /// Subnet holding `v`'s CPT.
    pub fn home_subnet(&self, v: VarId) -> usize {
        self.home[v]
    }

    /// Subnets in the subtree rooted at `s`, `s` included.
    pub fn subtree(&self, s: usize) -> Vec<usize> {
        let mut out = vec![s];
        let mut i = 0;
        while i < out.len() {
            out.extend(self.subnets[out[i]].children.iter().copied());
            i += 1;
        }
        out.sort_unstable();
        out
    }

    fn subtree_has_evidence(&self, s: usize) -> bool {
        let x = self.subnets[s].owner;
        self.net.evidence().keys().any(|&v| self.anc[v].contains(&x))
    }

    /// Collect messages of evidence-free subtrees may come from the cache.
    fn refresh_link_keys(&mut self) {
        self.net.link_keys.clear();
        if !self.options.caching {
            return;
        }
        for i in 1..self.subnets.len() {
            if self.subtree_has_evidence(i) {
                continue;
            }
            let s = &self.subnets[i];
            let p = &self.subnets[s.parent.unwrap()];
            let down = p.down.iter().find(|(c, _)| *c == i).unwrap().1;
            let key = LinkKey { key: s.fingerprint.clone(), canon: s.dsepset.clone() };
            self.net.link_keys.insert((s.up.unwrap(), down), key);
        }
    }

    pub fn set_evidence(&mut self, v: VarId, value: usize) -> Result<()> {
        self.net.set_evidence(v, value)?;
        self.refresh_link_keys();
        Ok(())
    }

    pub fn retract_evidence(&mut self, v: VarId) {
        self.net.retract_evidence(v);
        self.refresh_link_keys();
    }

    /// Brings the selected cliques' beliefs up to date, computing only the
    /// messages that are missing.
    pub fn calibrate(&mut self, up_to: UpTo) -> Result<CostReport> {
        self.net.reset_stats();
        let group = self.net.group.clone();
        let res = match up_to {
            UpTo::All => self.net.calibrate_where(|_| true),
            UpTo::Subnet(s) => self.net.calibrate_where(|c| group[c] == s),
        };
        let report = self.report();
        res.map(|_| report)
    }

    /// Posterior over `vars`, worked out near the first variable's subnet.
    pub fn query(&mut self, vars: &[VarId]) -> Result<(Factor, CostReport)> {
        self.net.reset_stats();
        if vars.is_empty() {
            return Ok((Factor::scalar(1.0), self.report()));
        }
        let prefer = self.home[vars[0]];
        let res = self.net.marginal(vars, Some(prefer));
        let report = self.report();
        res.map(|f| (f, report))
    }

    /// Stats of the work done since the last reset.
    pub fn report(&mut self) -> CostReport {
        let cost = self.net.cost().to_vec();
        for (i, c) in cost.iter().enumerate() {
            self.lifetime[i] += c;
        }
        let subnets: Vec<SubnetCost> = self
            .subnets
            .iter()
            .enumerate()
            .map(|(i, s)| SubnetCost { path: s.path.clone(), class: s.class.clone(), cells: cost[i] })
            .collect();
        let touched = self.net.touched().iter().map(|&g| self.subnets[g].path.clone()).collect();
        let report = CostReport {
            total_cells: cost.iter().sum(),
            subnets,
            cache_hits: self.net.cache_hits(),
            subnets_recalibrated: touched,
        };
        self.net.reset_stats();
        report
    }

    /// Largest disagreement between any two subnets on a shared
    /// variable's marginal. Forces full calibration.
    pub fn shared_gap(&mut self) -> Result<f64> {
        self.net.calibrate_where(|_| true)?;
        let mut worst: f64 = 0.0;
        for s in 1..self.subnets.len() {
            let p = self.subnets[s].parent.unwrap();
            for &v in &self.subnets[s].dsepset.clone() {
                let a = self.subnets[s].cliques.iter().copied().find(|&c| self.net.scopes[c].contains(&v)).unwrap();
                let b = self.subnets[p].cliques.iter().copied().find(|&c| self.net.scopes[c].contains(&v)).unwrap();
                let x = self.net.belief(a).marginalize(&[v]).normalized()?;
                let y = self.net.belief(b).marginalize(&[v]).normalized()?;
                worst = worst.max(x.max_abs_diff(&y));
            }
        }
        Ok(worst)
    }

    /// Structure summary: subnets with members, I/O-sets and links.
    pub fn structure_json(&self, bn: &FlatBN) -> Value {
        let id = |v: &VarId| bn.vars[*v].id.clone();
        let subnets: Vec<Value> = self
            .subnets
            .iter()
            .map(|s| {
                json!({
                    "path": s.path,
                    "class": s.class,
                    "parent": s.parent.map(|p| self.subnets[p].path.clone()),
                    "variables": s.vars.iter().map(id).collect::<Vec<_>>(),
                    "local": s.local.iter().map(id).collect::<Vec<_>>(),
                    "imported": s.io.imported.iter().map(id).collect::<Vec<_>>(),
                    "exported": s.io.exported.iter().map(id).collect::<Vec<_>>(),
                    "dsepset": s.dsepset.iter().map(id).collect::<Vec<_>>(),
                    "cliques": s.cliques.iter().map(|&c| self.net.scopes[c].iter().map(id).collect::<Vec<_>>()).collect::<Vec<_>>(),
                })
            })
            .collect();
        let links: Vec<Value> = self
            .subnets
            .iter()
            .filter_map(|s| s.parent.map(|p| json!([self.subnets[p].path, s.path])))
            .collect();
        json!({ "subnets": subnets, "links": links })
    }
}

/// What a structural change cost the hypertree.
#[derive(Debug, Clone, Serialize, PartialEq, Default)]
pub struct Locality {
    pub target: String,
    /// Subnets whose junction trees were built anew.
    pub rebuilt: Vec<String>,
    /// Rebuilt subnets strictly inside the target.
    pub rebuilt_inside: usize,
    /// Subnets that did any message or belief computation.
    pub subnets_recalibrated: Vec<String>,
    /// Messages leaving the target's subtree whose value changed.
    pub outward_updates: usize,
    pub kept: usize,
}

/// Moves still-valid state from `old` into the freshly built `new`,
/// after a refinement of the object at path `target`.
///
/// A subnet is kept when an old subnet with the same path has the same
/// structure and CPTs; every other subnet counts as changed. A message is
/// carried over when nothing on its sending side changed. If the target's
/// own message to its container comes out the same as before, the change
/// is invisible outside and everything outside keeps its state.
pub fn carry_over(old: &mut Hypertree, new: &mut Hypertree, old_bn: &FlatBN, new_bn: &FlatBN, target: &str) -> Result<Locality> {
    let Some(t) = new.subnet_by_path(target) else {
        return err(ErrorCode::UnknownPath, format!("`{target}` is not a complex object"));
    };
    let inside: BTreeSet<usize> = new.subtree(t).into_iter().collect();
    let mut kept: Vec<Option<usize>> = vec![None; new.subnets.len()];
    for (i, s) in new.subnets.iter().enumerate() {
        if let Some(j) = old.subnet_by_path(&s.path) {
            let o = &old.subnets[j];
            let ev_same = s.local.iter().zip(&o.local).all(|(&a, &b)| {
                new.net.evidence().get(&a) == old.net.evidence().get(&b) && new_bn.vars[a].id == old_bn.vars[b].id
            });
            if o.local_fp == s.local_fp && ev_same {
                kept[i] = Some(j);
            }
        }
    }
    let changed_subnets: BTreeSet<usize> = (0..new.subnets.len()).filter(|&i| kept[i].is_none()).collect();
    let mut loc = Locality {
        target: target.to_string(),
        rebuilt: changed_subnets.iter().map(|&i| new.subnets[i].path.clone()).collect(),
        rebuilt_inside: changed_subnets.iter().filter(|&&i| i != t && inside.contains(&i)).count(),
        kept: kept.iter().filter(|k| k.is_some()).count(),
        ..Default::default()
    };

    // Old counterpart of each new clique in a kept subnet, and var maps.
    let mut old_clique: HashMap<usize, usize> = HashMap::new();
    let mut var_map: Vec<HashMap<VarId, VarId>> = vec![HashMap::new(); new.subnets.len()];
    for (i, k) in kept.iter().enumerate() {
        if let Some(j) = *k {
            for (a, b) in new.subnets[i].cliques.iter().zip(&old.subnets[j].cliques) {
                old_clique.insert(*a, *b);
            }
            for (a, b) in new.subnets[i].vars.iter().zip(&old.subnets[j].vars) {
                var_map[i].insert(*b, *a);
            }
        }
    }
    // Link ends in the old tree by child path: (child up, parent down).
    let old_links: HashMap<String, (usize, usize)> = (1..old.subnets.len())
        .map(|j| {
            let s = &old.subnets[j];
            let d = old.subnets[s.parent.unwrap()].down.iter().find(|(c, _)| *c == j).unwrap().1;
            (s.path.clone(), (s.up.unwrap(), d))
        })
        .collect();
    let new_links: HashMap<(usize, usize), (String, bool)> = (1..new.subnets.len())
        .flat_map(|i| {
            let s = &new.subnets[i];
            let d = new.subnets[s.parent.unwrap()].down.iter().find(|(c, _)| *c == i).unwrap().1;
            [((s.up.unwrap(), d), (s.path.clone(), true)), ((d, s.up.unwrap()), (s.path.clone(), false))]
        })
        .collect();
    let old_nbrs = old.net.nbrs.clone();
    let old_counterpart = |a: usize, b: usize| -> Option<(usize, usize)> {
        if let (Some(&x), Some(&y)) = (old_clique.get(&a), old_clique.get(&b)) {
            if old_nbrs[x].contains(&y) {
                return Some((x, y));
            }
        }
        let (path, upward) = new_links.get(&(a, b))?;
        let &(u, d) = old_links.get(path)?;
        Some(if *upward { (u, d) } else { (d, u) })
    };

    // Changed cliques on each side of every tree edge.
    let n = new.net.len();
    let group = new.net.group.clone();
    let counts = |only: &dyn Fn(usize) -> bool| -> (Vec<usize>, Vec<usize>, usize) {
        let mut parent = vec![usize::MAX; n];
        let mut order = Vec::with_capacity(n);
        let mut seen = vec![false; n];
        let mut stack = vec![0usize];
        seen[0] = true;
        while let Some(x) = stack.pop() {
            order.push(x);
            for &y in &new.net.nbrs[x] {
                if !seen[y] {
                    seen[y] = true;
                    parent[y] = x;
                    stack.push(y);
                }
            }
        }
        let mut cnt = vec![0usize; n];
        for &x in order.iter().rev() {
            if changed_subnets.contains(&group[x]) && only(group[x]) {
                cnt[x] += 1;
            }
            if parent[x] != usize::MAX {
                cnt[parent[x]] += cnt[x];
            }
        }
        let total = cnt[0];
        (parent, cnt, total)
    };
    let (parent, cnt_all, tot_all) = counts(&|_| true);
    let (_, cnt_in, tot_in) = counts(&|g| inside.contains(&g));
    let valid = |a: usize, b: usize, cnt: &[usize], tot: usize| -> bool {
        if parent[a] == b {
            cnt[a] == 0
        } else {
            tot - cnt[b] == 0
        }
    };

    let transfer = |old: &Hypertree, new: &Hypertree, a: usize, b: usize| -> Option<Factor> {
        let (x, y) = old_counterpart(a, b)?;
        let m = old.net.stored_message(x, y)?;
        let map = &var_map[group[a]];
        let f = m.relabel(|v| map.get(&v).copied().unwrap_or(usize::MAX));
        let want = new.net.separator(a, b);
        (f.vars.len() == want.len() && f.vars.iter().all(|v| want.contains(v))).then_some(f)
    };

    // Does the target look the same from outside?
    let mut outside_unaffected = false;
    new.net.reset_stats();
    if !changed_subnets.is_empty() && changed_subnets.iter().all(|g| inside.contains(g)) && t != 0 {
        let p = new.subnets[t].parent.unwrap();
        let up = new.subnets[t].up.unwrap();
        let down = new.subnets[p].down.iter().find(|(c, _)| *c == t).unwrap().1;
        // Messages from inside the target toward it may be carried first.
        for a in 0..n {
            for &b in &new.net.nbrs[a].clone() {
                if inside.contains(&group[a]) && valid(a, b, &cnt_all, tot_all) {
                    if let Some(f) = transfer(old, new, a, b) {
                        new.net.put_message(a, b, f);
                    }
                }
            }
        }
        let fresh = new.net.message(up, down);
        let before = match old_counterpart(up, down) {
            Some((x, y)) => {
                if !old.net.has_message(x, y) {
                    old.net.message(x, y);
                }
                transfer(old, new, up, down)
            }
            None => None,
        };
        match before {
            Some(b) if b.vars.len() == fresh.vars.len() && fresh.max_abs_diff(&b) <= 1e-9 => outside_unaffected = true,
            _ => loc.outward_updates += 1,
        }
    } else if changed_subnets.contains(&t) && t != 0 {
        loc.outward_updates += 1;
    }

    for a in 0..n {
        for &b in &new.net.nbrs[a].clone() {
            if new.net.has_message(a, b) {
                continue;
            }
            let out_edge = !inside.contains(&group[a]) && !inside.contains(&group[b]);
            let ok = if outside_unaffected && out_edge {
                valid(a, b, &cnt_all.iter().zip(&cnt_in).map(|(x, y)| x - y).collect::<Vec<_>>(), tot_all - tot_in)
            } else {
                valid(a, b, &cnt_all, tot_all)
            };
            if ok {
                if let Some(f) = transfer(old, new, a, b) {
                    new.net.put_message(a, b, f);
                }
            }
        }
    }
    loc.subnets_recalibrated = new.net.touched().iter().map(|&g| new.subnets[g].path.clone()).collect();
    new.net.reset_stats();
    Ok(loc)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::flatten::build_flat_bn;
    use crate::inference::jtree::JunctionTree;
    use crate::model::{instantiate, load};

    const NESTED: &str = "
        type B = {t, f};
        class Inner { input I: B; output O: B given (i: B) { (t): 0.9 0.1; (f): 0.2 0.8; } O.i <- I; }
        class Outer {
            input X: B;
            private H: B given (x: B) { (t): 0.65 0.35; (f): 0.15 0.85; }
            H.x <- X;
            output In: Inner;
            In.I <- H;
        }
        situation S {
            private A: B { 0.3 0.7 }
            private P: Outer; P.X <- A;
            private Q: Outer; Q.X <- A;
            private C: B given (x: B, y: B) { (t, t): 0.99 0.01; (t, f): 0.7 0.3; (f, t): 0.45 0.55; (f, f): 0.05 0.95; }
            C.x <- P.In.O; C.y <- Q.In.O;
        }";

    fn setup(src: &str) -> (GroundModel, FlatBN) {
        let m = load(src).unwrap();
        let gm = instantiate(&m).unwrap();
        let bn = build_flat_bn(&m, &gm).unwrap();
        (gm, bn)
    }

    #[test]
    fn io_sets_from_edges() {
        let (gm, bn) = setup(NESTED);
        let io = compute_io_sets(&gm, &bn);
        let p = gm.find("P").unwrap();
        let name = |s: &BTreeSet<VarId>| s.iter().map(|&v| bn.vars[v].id.clone()).collect::<Vec<_>>();
        assert_eq!(name(&io[&p].imported), ["Situation.A"]);
        assert_eq!(name(&io[&p].exported), ["Situation.P.In.O"]);
        assert!(io[&0].all().is_empty());
    }

    #[test]
    fn agrees_with_flat_engine_and_caches_the_twin() {
        let (gm, bn) = setup(NESTED);
        let mut ht = Hypertree::build(&gm, &bn, HtOptions::default(), None).unwrap();
        assert_eq!(ht.subnets.len(), 5);
        let r = ht.calibrate(UpTo::Subnet(0)).unwrap();
        assert_eq!(r.cache_hits, 1);
        let mut jt = JunctionTree::new(&bn).unwrap();
        for v in 0..bn.len() {
            let (a, _) = ht.query(&[v]).unwrap();
            let b = jt.query(&[v]).unwrap();
            assert!(a.max_abs_diff(&b) < 1e-12);
        }
        let c = bn.index("Situation.C").unwrap();
        ht.set_evidence(c, 1).unwrap();
        jt.set_evidence(c, 1).unwrap();
        for v in 0..bn.len() {
            let (a, _) = ht.query(&[v]).unwrap();
            let b = jt.query(&[v]).unwrap();
            assert!(a.max_abs_diff(&b) < 1e-12);
        }
        assert!(ht.shared_gap().unwrap() < 1e-12);
    }

    #[test]
    fn second_query_in_the_same_subnet_is_free() {
        let (gm, bn) = setup(NESTED);
        let mut ht = Hypertree::build(&gm, &bn, HtOptions::default(), None).unwrap();
        ht.calibrate(UpTo::Subnet(0)).unwrap();
        let o = bn.index("Situation.P.In.O").unwrap();
        let (_, r) = ht.query(&[o]).unwrap();
        assert_eq!(r.subnets_recalibrated, ["Situation", "Situation.P", "Situation.P.In"]);
        let (_, r) = ht.query(&[o]).unwrap();
        assert!(r.subnets_recalibrated.is_empty());
    }
}
