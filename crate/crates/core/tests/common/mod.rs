//! Test-side oracles, written against raw CPT arrays only.
#![allow(dead_code)]

use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::ChaCha8Rng;

use oobn::flatten::{FlatBN, VarId};

/// Dense table over `vars`, row-major with the last variable fastest.
#[derive(Clone, Debug)]
struct Tab {
    vars: Vec<VarId>,
    cards: Vec<usize>,
    data: Vec<f64>,
}

impl Tab {
    fn size(cards: &[usize]) -> usize {
        cards.iter().product()
    }

    fn index(&self, assign: &[(VarId, usize)]) -> usize {
        let mut i = 0;
        for (k, v) in self.vars.iter().enumerate() {
            let x = assign.iter().find(|(w, _)| w == v).unwrap().1;
            i = i * self.cards[k] + x;
        }
        i
    }

    fn mul(&self, o: &Tab) -> Tab {
        let mut vars = self.vars.clone();
        let mut cards = self.cards.clone();
        for (k, v) in o.vars.iter().enumerate() {
            if !vars.contains(v) {
                vars.push(*v);
                cards.push(o.cards[k]);
            }
        }
        let mut data = Vec::with_capacity(Tab::size(&cards));
        let mut idx = vec![0usize; vars.len()];
        for _ in 0..Tab::size(&cards) {
            let a: Vec<(VarId, usize)> = vars.iter().copied().zip(idx.iter().copied()).collect();
            data.push(self.data[self.index(&a)] * o.data[o.index(&a)]);
            for k in (0..idx.len()).rev() {
                idx[k] += 1;
                if idx[k] < cards[k] {
                    break;
                }
                idx[k] = 0;
            }
        }
        Tab { vars, cards, data }
    }

    fn sum_out(&self, v: VarId) -> Tab {
        let p = self.vars.iter().position(|&w| w == v).unwrap();
        let inner: usize = self.cards[p + 1..].iter().product();
        let c = self.cards[p];
        let outer = self.data.len() / (inner * c);
        let mut data = vec![0.0; outer * inner];
        for o in 0..outer {
            for x in 0..c {
                for i in 0..inner {
                    data[o * inner + i] += self.data[(o * c + x) * inner + i];
                }
            }
        }
        let mut vars = self.vars.clone();
        let mut cards = self.cards.clone();
        vars.remove(p);
        cards.remove(p);
        Tab { vars, cards, data }
    }

    fn fix(&self, v: VarId, x: usize) -> Tab {
        let p = self.vars.iter().position(|&w| w == v).unwrap();
        let inner: usize = self.cards[p + 1..].iter().product();
        let c = self.cards[p];
        let outer = self.data.len() / (inner * c);
        let mut data = Vec::with_capacity(outer * inner);
        for o in 0..outer {
            data.extend_from_slice(&self.data[(o * c + x) * inner..(o * c + x + 1) * inner]);
        }
        let mut vars = self.vars.clone();
        let mut cards = self.cards.clone();
        vars.remove(p);
        cards.remove(p);
        Tab { vars, cards, data }
    }
}

/// P(targets | evidence) by variable elimination over the ancestral
/// subgraph, row-major in `targets` order. `None` when P(evidence) = 0.
pub fn ve_posterior(bn: &FlatBN, evidence: &[(VarId, usize)], targets: &[VarId]) -> Option<Vec<f64>> {
    let n = bn.len();
    let mut keep = vec![false; n];
    let mut stack: Vec<VarId> = targets.iter().copied().chain(evidence.iter().map(|e| e.0)).collect();
    while let Some(v) = stack.pop() {
        if !std::mem::replace(&mut keep[v], true) {
            stack.extend(bn.vars[v].parents.iter().copied());
        }
    }
    let mut tabs: Vec<Tab> = Vec::new();
    for v in (0..n).filter(|&v| keep[v]) {
        let var = &bn.vars[v];
        let mut vars = var.parents.clone();
        vars.push(v);
        let cards: Vec<usize> = vars.iter().map(|&w| bn.vars[w].card()).collect();
        assert_eq!(var.cpt.table.len(), Tab::size(&cards));
        let mut t = Tab { vars, cards, data: var.cpt.table.clone() };
        for &(e, x) in evidence {
            if t.vars.contains(&e) {
                t = t.fix(e, x);
            }
        }
        tabs.push(t);
    }
    let observed: Vec<VarId> = evidence.iter().map(|e| e.0).collect();
    loop {
        let mut best: Option<(VarId, usize)> = None;
        for t in &tabs {
            for &v in &t.vars {
                if targets.contains(&v) || observed.contains(&v) {
                    continue;
                }
                let mut scope: Vec<VarId> = Vec::new();
                for u in tabs.iter().filter(|u| u.vars.contains(&v)) {
                    for &w in &u.vars {
                        if !scope.contains(&w) {
                            scope.push(w);
                        }
                    }
                }
                let size: usize = scope.iter().map(|&w| bn.vars[w].card()).product();
                if best.is_none_or(|(_, s)| size < s) {
                    best = Some((v, size));
                }
            }
        }
        let Some((v, _)) = best else { break };
        let (with, rest): (Vec<Tab>, Vec<Tab>) = tabs.into_iter().partition(|t| t.vars.contains(&v));
        let prod = with.iter().skip(1).fold(with[0].clone(), |a, b| a.mul(b));
        tabs = rest;
        tabs.push(prod.sum_out(v));
    }
    let mut joint = Tab { vars: vec![], cards: vec![], data: vec![1.0] };
    for t in &tabs {
        joint = joint.mul(t);
    }
    for &t in targets {
        if !joint.vars.contains(&t) {
            let c = bn.vars[t].card();
            joint = joint.mul(&Tab { vars: vec![t], cards: vec![c], data: vec![1.0; c] });
        }
    }
    // reorder to `targets`
    let cards: Vec<usize> = targets.iter().map(|&t| bn.vars[t].card()).collect();
    let mut out = Vec::with_capacity(Tab::size(&cards));
    let mut idx = vec![0usize; targets.len()];
    for _ in 0..Tab::size(&cards) {
        let a: Vec<(VarId, usize)> = targets.iter().copied().zip(idx.iter().copied()).collect();
        out.push(joint.data[joint.index(&a)]);
        for k in (0..idx.len()).rev() {
            idx[k] += 1;
            if idx[k] < cards[k] {
                break;
            }
            idx[k] = 0;
        }
    }
    let z: f64 = out.iter().sum();
    if z <= 0.0 {
        return None;
    }
    Some(out.into_iter().map(|p| p / z).collect())
}

pub fn max_diff(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

/// Random enumerations with coarsening maps and record types over them.
pub fn random_lattice(rng: &mut ChaCha8Rng) -> String {
    let mut src = String::new();
    let mut sizes: Vec<usize> = Vec::new();
    let nb = rng.gen_range(2..=7);
    for i in 0..nb {
        let coarser: Vec<usize> = (0..i).filter(|&j| sizes[j] >= 1).collect();
        let refine = !coarser.is_empty() && rng.gen_bool(0.6);
        let size = if refine {
            let j = *coarser.choose(rng).unwrap();
            let size = sizes[j] + rng.gen_range(0..=2);
            // onto: the first sizes[j] values hit every coarse value
            let mut pairs: Vec<String> = (0..sizes[j]).map(|v| format!("v{v} => v{v}")).collect();
            pairs.extend((sizes[j]..size).map(|v| format!("v{v} => v{}", rng.gen_range(0..sizes[j]))));
            src.push_str(&format!("map T{i} -> T{j} {{{}}}\n", pairs.join(", ")));
            size
        } else {
            rng.gen_range(1..=4)
        };
        sizes.push(size);
        let vals: Vec<String> = (0..size).map(|v| format!("v{v}")).collect();
        src.insert_str(0, &format!("type T{i} = {{{}}};\n", vals.join(", ")));
    }
    let labels = ["A", "B", "C", "D"];
    for s in 0..rng.gen_range(0..=5) {
        let mut fields: Vec<&str> = labels.to_vec();
        fields.shuffle(rng);
        let fields: Vec<String> = fields[..rng.gen_range(1..=4)]
            .iter()
            .map(|l| {
                let t = if s > 0 && rng.gen_bool(0.3) { format!("R{}", rng.gen_range(0..s)) } else { format!("T{}", rng.gen_range(0..nb)) };
                format!("{l}: {t}")
            })
            .collect();
        src.insert_str(0, &format!("type R{s} = <{}>;\n", fields.join(", ")));
    }
    src.push_str("situation S {}\n");
    src
}
