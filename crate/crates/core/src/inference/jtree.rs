//! The flat junction-tree engine over a whole `FlatBN`.

use super::engine::CliqueNet;
use super::factor::Factor;
use super::triangulate::{build_skeleton, triangulate, Skeleton, Triangulation};
use crate::error::{err, ErrorCode, Result};
use crate::flatten::{FlatBN, VarId};

/// Moral-graph edges of a network: parent-child and parent-parent.
pub fn moral_edges(bn: &FlatBN) -> Vec<(usize, usize)> {
    let mut out = Vec::new();
    for (v, x) in bn.vars.iter().enumerate() {
        for (i, &p) in x.parents.iter().enumerate() {
            out.push((p, v));
            for &q in &x.parents[i + 1..] {
                out.push((p, q));
            }
        }
    }
    out
}

/// Min-fill triangulation of `bn` with ties broken by variable path.
pub fn triangulate_bn(bn: &FlatBN, required: &[Vec<VarId>]) -> Triangulation {
    let mut by_name: Vec<VarId> = (0..bn.len()).collect();
    by_name.sort_by(|&a, &b| bn.vars[a].id.cmp(&bn.vars[b].id));
    let mut rank = vec![0; bn.len()];
    for (r, &v) in by_name.iter().enumerate() {
        rank[v] = r;
    }
    triangulate(&bn.cards(), &rank, &moral_edges(bn), required)
}

#[derive(Debug, Clone)]
pub struct JunctionTree {
    pub net: CliqueNet,
    pub skeleton: Skeleton,
    pub order: Vec<VarId>,
    calibrated: bool,
}

impl JunctionTree {
    pub fn new(bn: &FlatBN) -> Result<Self> {
        let tri = triangulate_bn(bn, &[]);
        let families: Vec<Vec<VarId>> = (0..bn.len()).map(|v| bn.vars[v].family(v)).collect();
        let mut cliques = tri.cliques;
        if cliques.is_empty() {
            cliques.push(Vec::new());
        }
        let skeleton = build_skeleton(cliques, &families)?;
        let cards = bn.cards();
        let mut net = CliqueNet::new(1);
        for c in &skeleton.cliques {
            net.add_clique(c.clone(), c.iter().map(|&v| cards[v]).collect(), 0);
        }
        for (a, b, _) in &skeleton.edges {
            net.connect(*a, *b);
        }
        for (v, &c) in skeleton.assign.iter().enumerate() {
            net.assign(c, v, bn.vars[v].cpt.clone());
        }
        Ok(JunctionTree { net, skeleton, order: tri.order, calibrated: false })
    }

    pub fn set_evidence(&mut self, v: VarId, value: usize) -> Result<()> {
        let before = self.net.evidence().get(&v).copied();
        self.net.set_evidence(v, value)?;
        if before != Some(value) {
            self.calibrated = false;
        }
        Ok(())
    }

    pub fn retract_evidence(&mut self, v: VarId) {
        if self.net.evidence().contains_key(&v) {
            self.calibrated = false;
        }
        self.net.retract_evidence(v);
    }

    pub fn is_calibrated(&self) -> bool {
        self.calibrated
    }

    /// Collect and distribute: every clique's belief becomes available.
    pub fn calibrate(&mut self) -> Result<()> {
        self.net.calibrate_where(|_| true)?;
        self.calibrated = true;
        Ok(())
    }

    /// Normalized posterior over `vars`; requires calibration.
    pub fn marginal(&mut self, vars: &[VarId]) -> Result<Factor> {
        if !self.calibrated {
            return err(ErrorCode::NotCalibrated, "calibrate before asking for marginals");
        }
        if vars.is_empty() {
            return Ok(Factor::scalar(1.0));
        }
        self.net.marginal(vars, None)
    }

    /// Calibrates if needed and returns the posterior.
    pub fn query(&mut self, vars: &[VarId]) -> Result<Factor> {
        if !self.calibrated {
            self.calibrate()?;
        }
        self.marginal(vars)
    }

    /// Total factor cells touched since construction or the last reset.
    pub fn cells(&self) -> u64 {
        self.net.cost().iter().sum()
    }
}
