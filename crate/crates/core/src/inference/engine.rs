//! Division-free (Shafer–Shenoy) message passing over a tree of cliques.
//!
//! Messages, clique potentials and beliefs are computed on demand and kept
//! until evidence invalidates them, which gives lazy calibration for free.
//! Cliques carry a group id (one per subnet when used by the hypertree)
//! so work can be attributed.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::sync::Arc;

use super::factor::{eliminate, Factor, Var};
use crate::error::{err, ErrorCode, Result};
use crate::msbn::ClassCache;

/// Caching identity of a directed link: the owner's subtree fingerprint
/// and its separator variables in canonical order.
#[derive(Debug, Clone)]
pub struct LinkKey {
    pub key: String,
    pub canon: Vec<Var>,
}

#[derive(Debug, Clone, Default)]
pub struct CliqueNet {
    pub scopes: Vec<Vec<Var>>,
    pub cards: Vec<Vec<usize>>,
    pub group: Vec<usize>,
    /// Neighbours in a fixed order; incoming messages are multiplied in it.
    pub nbrs: Vec<Vec<usize>>,
    pub cpts: Vec<Vec<Factor>>,
    home: HashMap<Var, usize>,
    evidence: BTreeMap<Var, usize>,
    potentials: Vec<Option<Factor>>,
    msgs: HashMap<(usize, usize), Factor>,
    beliefs: Vec<Option<Factor>>,
    cost: Vec<u64>,
    touched: BTreeSet<usize>,
    pub link_keys: HashMap<(usize, usize), LinkKey>,
    pub cache: Option<Arc<ClassCache>>,
    hits: u64,
    computed: BTreeSet<(usize, usize)>,
}

impl CliqueNet {
    pub fn new(groups: usize) -> Self {
        CliqueNet { cost: vec![0; groups], ..Default::default() }
    }

    pub fn len(&self) -> usize {
        self.scopes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.scopes.is_empty()
    }

    pub fn add_clique(&mut self, scope: Vec<Var>, cards: Vec<usize>, group: usize) -> usize {
        self.scopes.push(scope);
        self.cards.push(cards);
        self.group.push(group);
        self.nbrs.push(Vec::new());
        self.cpts.push(Vec::new());
        self.potentials.push(None);
        self.beliefs.push(None);
        if group >= self.cost.len() {
            self.cost.resize(group + 1, 0);
        }
        self.scopes.len() - 1
    }

    pub fn connect(&mut self, a: usize, b: usize) {
        self.nbrs[a].push(b);
        self.nbrs[b].push(a);
    }

    /// Places a CPT in clique `c`; `var` is the child it belongs to and
    /// where its evidence will be entered.
    pub fn assign(&mut self, c: usize, var: Var, cpt: Factor) {
        self.cpts[c].push(cpt);
        self.home.insert(var, c);
    }

    pub fn home(&self, v: Var) -> Option<usize> {
        self.home.get(&v).copied()
    }

    pub fn separator(&self, from: usize, to: usize) -> Vec<Var> {
        self.scopes[from].iter().copied().filter(|v| self.scopes[to].contains(v)).collect()
    }

    pub fn evidence(&self) -> &BTreeMap<Var, usize> {
        &self.evidence
    }

    /// Enters `v = value`; a repeated identical call changes nothing.
    pub fn set_evidence(&mut self, v: Var, value: usize) -> Result<()> {
        let Some(c) = self.home(v) else {
            return err(ErrorCode::BadValue, format!("variable {v} is not part of this network"));
        };
        let pos = self.scopes[c].iter().position(|&x| x == v).unwrap();
        if value >= self.cards[c][pos] {
            return err(ErrorCode::BadValue, format!("value {value} out of range for variable {v}"));
        }
        if self.evidence.get(&v) == Some(&value) {
            return Ok(());
        }
        self.evidence.insert(v, value);
        self.invalidate_from(c);
        Ok(())
    }

    pub fn retract_evidence(&mut self, v: Var) {
        if self.evidence.remove(&v).is_some() {
            let c = self.home[&v];
            self.invalidate_from(c);
        }
    }

    /// Drops everything that depends on clique `c`'s potential.
    pub fn invalidate_from(&mut self, c: usize) {
        self.potentials[c] = None;
        for b in &mut self.beliefs {
            *b = None;
        }
        let mut stack = vec![(c, usize::MAX)];
        while let Some((x, prev)) = stack.pop() {
            for &n in &self.nbrs[x] {
                if n != prev {
                    self.msgs.remove(&(x, n));
                    stack.push((n, x));
                }
            }
        }
    }

    /// Forgets every message whose sending side contains a clique for
    /// which `changed` holds.
    pub fn invalidate_where(&mut self, changed: impl Fn(usize) -> bool) {
        let starts: Vec<usize> = (0..self.len()).filter(|&c| changed(c)).collect();
        for c in starts {
            self.invalidate_from(c);
        }
    }

    fn potential(&mut self, c: usize) -> Factor {
        if let Some(p) = &self.potentials[c] {
            return p.clone();
        }
        let mut p = Factor::ones(self.scopes[c].clone(), self.cards[c].clone());
        for f in &self.cpts[c] {
            p = p.product(f);
        }
        for (&v, &x) in &self.evidence {
            if self.home.get(&v) == Some(&c) {
                p.observe(v, x);
            }
        }
        self.potentials[c] = Some(p.clone());
        p
    }

    /// The message `from -> to`, computing whatever it depends on.
    pub fn message(&mut self, from: usize, to: usize) -> Factor {
        if let Some(m) = self.msgs.get(&(from, to)) {
            return m.clone();
        }
        let cached = match (&self.cache, self.link_keys.get(&(from, to))) {
            (Some(cache), Some(k)) => cache.get(&k.key).map(|f| f.relabel(|p| k.canon[p])),
            _ => None,
        };
        if let Some(m) = cached {
            self.hits += 1;
            self.msgs.insert((from, to), m.clone());
            return m;
        }
        let others: Vec<usize> = self.nbrs[from].iter().copied().filter(|&n| n != to).collect();
        let incoming: Vec<Factor> = others.iter().map(|&n| self.message(n, from)).collect();
        let mut acc = self.potential(from);
        for m in &incoming {
            acc = acc.product(m);
        }
        let out = acc.marginalize(&self.separator(from, to));
        let g = self.group[from];
        self.cost[g] += acc.len() as u64;
        self.touched.insert(g);
        self.computed.insert((from, to));
        if let (Some(cache), Some(k)) = (&self.cache, self.link_keys.get(&(from, to))) {
            cache.put(k.key.clone(), out.relabel(|v| k.canon.iter().position(|&x| x == v).unwrap()));
        }
        self.msgs.insert((from, to), out.clone());
        out
    }

    /// Unnormalized clique marginal.
    pub fn belief(&mut self, c: usize) -> Factor {
        if let Some(b) = &self.beliefs[c] {
            return b.clone();
        }
        let nb = self.nbrs[c].clone();
        let incoming: Vec<Factor> = nb.iter().map(|&n| self.message(n, c)).collect();
        let mut acc = self.potential(c);
        for m in &incoming {
            acc = acc.product(m);
        }
        let g = self.group[c];
        self.cost[g] += acc.len() as u64;
        self.touched.insert(g);
        self.beliefs[c] = Some(acc.clone());
        acc
    }

    pub fn has_belief(&self, c: usize) -> bool {
        self.beliefs[c].is_some()
    }

    pub fn has_message(&self, from: usize, to: usize) -> bool {
        self.msgs.contains_key(&(from, to))
    }

    pub fn stored_message(&self, from: usize, to: usize) -> Option<&Factor> {
        self.msgs.get(&(from, to))
    }

    pub fn put_message(&mut self, from: usize, to: usize, m: Factor) {
        self.msgs.insert((from, to), m);
    }

    pub fn take_message(&mut self, from: usize, to: usize) -> Option<Factor> {
        self.msgs.remove(&(from, to))
    }

    /// Computes every belief of the cliques selected by `which`.
    pub fn calibrate_where(&mut self, which: impl Fn(usize) -> bool) -> Result<()> {
        for c in 0..self.len() {
            if which(c) {
                let b = self.belief(c);
                if !(b.total() > 0.0) {
                    return err(ErrorCode::ZeroProb, "the evidence has probability zero");
                }
            }
        }
        Ok(())
    }

    /// Normalized joint over `vars` (in that order). A clique covering all
    /// of them is used when one exists, preferring `prefer`'s group;
    /// otherwise the smallest connecting subtree is eliminated.
    pub fn marginal(&mut self, vars: &[Var], prefer: Option<usize>) -> Result<Factor> {
        let rank = |s: &Self, c: usize| (prefer.is_some_and(|g| s.group[c] != g), s.cards[c].iter().product::<usize>(), c);
        let covering = (0..self.len()).filter(|&c| vars.iter().all(|v| self.scopes[c].contains(v))).min_by_key(|&c| rank(self, c));
        if let Some(c) = covering {
            let b = self.belief(c);
            return b.marginalize(vars).normalized();
        }
        let mut picks = Vec::new();
        for v in vars {
            let c = (0..self.len()).filter(|&c| self.scopes[c].contains(v)).min_by_key(|&c| rank(self, c));
            match c {
                Some(c) => picks.push(c),
                None => return err(ErrorCode::BadChain, format!("variable {v} is not part of this network")),
            }
        }
        let tree = self.steiner(&picks);
        let mut factors = Vec::new();
        for &c in &tree {
            factors.push(self.potential(c));
            for n in self.nbrs[c].clone() {
                if !tree.contains(&n) {
                    factors.push(self.message(n, c));
                }
            }
        }
        let (f, cells) = eliminate(factors, vars);
        let g = self.group[picks[0]];
        self.cost[g] += cells;
        self.touched.insert(g);
        f.normalized()
    }

    /// Cliques on the tree paths connecting `picks`.
    fn steiner(&self, picks: &[usize]) -> Vec<usize> {
        let n = self.len();
        let root = picks[0];
        let mut parent = vec![usize::MAX; n];
        let mut seen = vec![false; n];
        let mut stack = vec![root];
        seen[root] = true;
        while let Some(x) = stack.pop() {
            for &y in &self.nbrs[x] {
                if !seen[y] {
                    seen[y] = true;
                    parent[y] = x;
                    stack.push(y);
                }
            }
        }
        let mut keep = vec![false; n];
        keep[root] = true;
        for &p in picks {
            let mut x = p;
            while !keep[x] {
                keep[x] = true;
                x = parent[x];
            }
        }
        (0..n).filter(|&c| keep[c]).collect()
    }

    /// Cells touched per group since the last reset.
    pub fn cost(&self) -> &[u64] {
        &self.cost
    }

    pub fn touched(&self) -> &BTreeSet<usize> {
        &self.touched
    }

    /// Directed edges whose message was computed (not cached) since the
    /// last reset.
    pub fn computed(&self) -> &BTreeSet<(usize, usize)> {
        &self.computed
    }

    pub fn cache_hits(&self) -> u64 {
        self.hits
    }

    pub fn reset_stats(&mut self) {
        for c in &mut self.cost {
            *c = 0;
        }
        self.touched.clear();
        self.computed.clear();
        self.hits = 0;
    }

    /// Largest disagreement between adjacent beliefs on their separators.
    pub fn separator_gap(&mut self) -> f64 {
        let mut worst: f64 = 0.0;
        for a in 0..self.len() {
            for b in self.nbrs[a].clone() {
                if a < b {
                    let sep = self.separator(a, b);
                    let x = self.belief(a).marginalize(&sep);
                    let y = self.belief(b).marginalize(&sep);
                    worst = worst.max(x.max_abs_diff(&y));
                }
            }
        }
        worst
    }
}
