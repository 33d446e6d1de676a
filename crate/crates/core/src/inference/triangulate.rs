//! Min-fill triangulation and junction-tree skeletons.

use std::collections::BTreeSet;

use crate::error::{err, ErrorCode, Result};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Triangulation {
    pub order: Vec<usize>,
    /// Maximal cliques in creation order, members ascending.
    pub cliques: Vec<Vec<usize>>,
}

/// Eliminates vertices `0..cards.len()` of the undirected graph `edges`
/// by minimum fill-in, breaking ties by smallest clique weight (product of
/// domain sizes) and then by lowest `rank`. Each `required` set is made
/// complete first so that it ends up inside one clique.
pub fn triangulate(cards: &[usize], rank: &[usize], edges: &[(usize, usize)], required: &[Vec<usize>]) -> Triangulation {
    let n = cards.len();
    let mut adj: Vec<BTreeSet<usize>> = vec![BTreeSet::new(); n];
    let link = |a: usize, b: usize, adj: &mut Vec<BTreeSet<usize>>| {
        if a != b {
            adj[a].insert(b);
            adj[b].insert(a);
        }
    };
    for &(a, b) in edges {
        link(a, b, &mut adj);
    }
    for set in required {
        for (i, &a) in set.iter().enumerate() {
            for &b in &set[i + 1..] {
                link(a, b, &mut adj);
            }
        }
    }
    let logc: Vec<f64> = cards.iter().map(|&c| (c as f64).ln()).collect();
    let mut alive = vec![true; n];
    let mut order = Vec::with_capacity(n);
    let mut cliques: Vec<Vec<usize>> = Vec::new();
    for _ in 0..n {
        let mut best: Option<(usize, f64, usize, usize)> = None;
        for v in (0..n).filter(|&v| alive[v]) {
            let nb: Vec<usize> = adj[v].iter().copied().collect();
            let mut fill = 0;
            for (i, &a) in nb.iter().enumerate() {
                for &b in &nb[i + 1..] {
                    if !adj[a].contains(&b) {
                        fill += 1;
                    }
                }
            }
            let w = logc[v] + nb.iter().map(|&u| logc[u]).sum::<f64>();
            let better = match best {
                None => true,
                Some((f, bw, r, _)) => {
                    fill < f || (fill == f && (w < bw - 1e-12 || ((w - bw).abs() <= 1e-12 && rank[v] < r)))
                }
            };
            if better {
                best = Some((fill, w, rank[v], v));
            }
        }
        let v = best.unwrap().3;
        let nb: Vec<usize> = adj[v].iter().copied().collect();
        for (i, &a) in nb.iter().enumerate() {
            for &b in &nb[i + 1..] {
                adj[a].insert(b);
                adj[b].insert(a);
            }
        }
        let mut c = nb.clone();
        c.push(v);
        c.sort_unstable();
        if !cliques.iter().any(|k| c.iter().all(|x| k.binary_search(x).is_ok())) {
            cliques.push(c);
        }
        for &u in &nb {
            adj[u].remove(&v);
        }
        adj[v].clear();
        alive[v] = false;
        order.push(v);
    }
    Triangulation { order, cliques }
}

/// Tree edges over `cliques` with their separators.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Skeleton {
    pub cliques: Vec<Vec<usize>>,
    pub edges: Vec<(usize, usize, Vec<usize>)>,
    /// For each family, the clique it was assigned to.
    pub assign: Vec<usize>,
}

/// Connects `cliques` by a maximum-weight spanning tree on separator size
/// (Kruskal, ties by lowest clique pair), checks the running intersection
/// property, and assigns each family to the first clique covering it.
pub fn build_skeleton(cliques: Vec<Vec<usize>>, families: &[Vec<usize>]) -> Result<Skeleton> {
    let k = cliques.len();
    let mut cand: Vec<(usize, usize, usize)> = Vec::new();
    for i in 0..k {
        for j in i + 1..k {
            let w = cliques[i].iter().filter(|x| cliques[j].binary_search(x).is_ok()).count();
            cand.push((w, i, j));
        }
    }
    cand.sort_by(|a, b| b.0.cmp(&a.0).then(a.1.cmp(&b.1)).then(a.2.cmp(&b.2)));
    let mut uf: Vec<usize> = (0..k).collect();
    fn find(uf: &mut [usize], x: usize) -> usize {
        let mut r = x;
        while uf[r] != r {
            r = uf[r];
        }
        let mut y = x;
        while uf[y] != r {
            let n = uf[y];
            uf[y] = r;
            y = n;
        }
        r
    }
    let mut edges = Vec::new();
    for (_, i, j) in cand {
        let (a, b) = (find(&mut uf, i), find(&mut uf, j));
        if a != b {
            uf[a] = b;
            let sep: Vec<usize> = cliques[i].iter().copied().filter(|x| cliques[j].binary_search(x).is_ok()).collect();
            edges.push((i, j, sep));
        }
    }
    check_rip(&cliques, &edges)?;
    let mut assign = Vec::with_capacity(families.len());
    for f in families {
        match cliques.iter().position(|c| f.iter().all(|x| c.binary_search(x).is_ok())) {
            Some(c) => assign.push(c),
            None => return err(ErrorCode::Coverage, format!("no clique covers family {f:?}")),
        }
    }
    Ok(Skeleton { cliques, edges, assign })
}

/// Every variable's cliques must form a connected subtree.
pub fn check_rip(cliques: &[Vec<usize>], edges: &[(usize, usize, Vec<usize>)]) -> Result<()> {
    let vars: BTreeSet<usize> = cliques.iter().flatten().copied().collect();
    for v in vars {
        let holders: Vec<usize> = (0..cliques.len()).filter(|&c| cliques[c].binary_search(&v).is_ok()).collect();
        let mut seen = vec![false; cliques.len()];
        let mut stack = vec![holders[0]];
        let mut count = 0;
        while let Some(c) = stack.pop() {
            if std::mem::replace(&mut seen[c], true) {
                continue;
            }
            count += 1;
            for (a, b, _) in edges {
                let o = if *a == c { *b } else if *b == c { *a } else { continue };
                if cliques[o].binary_search(&v).is_ok() {
                    stack.push(o);
                }
            }
        }
        if count != holders.len() {
            return err(ErrorCode::Coverage, format!("variable {v} violates the running intersection property"));
        }
    }
    Ok(())
}
