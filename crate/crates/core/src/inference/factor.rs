//! Dense discrete factors over small enumerated domains.

use crate::error::{Error, ErrorCode, Result};

/// Identifier of a variable; its meaning depends on the owner (a `FlatBN`
/// index in practice).
pub type Var = usize;

/// A non-negative table over `vars`, row-major with the first variable
/// varying slowest.
#[derive(Debug, Clone, PartialEq)]
pub struct Factor {
    pub vars: Vec<Var>,
    pub cards: Vec<usize>,
    pub table: Vec<f64>,
}

impl Factor {
    pub fn new(vars: Vec<Var>, cards: Vec<usize>, table: Vec<f64>) -> Self {
        debug_assert_eq!(vars.len(), cards.len());
        debug_assert_eq!(table.len(), cards.iter().product::<usize>());
        Factor { vars, cards, table }
    }

    pub fn scalar(v: f64) -> Self {
        Factor { vars: Vec::new(), cards: Vec::new(), table: vec![v] }
    }

    /// All-ones table.
    pub fn ones(vars: Vec<Var>, cards: Vec<usize>) -> Self {
        let n = cards.iter().product();
        Factor { vars, cards, table: vec![1.0; n] }
    }

    pub fn len(&self) -> usize {
        self.table.len()
    }

    pub fn is_empty(&self) -> bool {
        self.table.is_empty()
    }

    pub fn pos(&self, v: Var) -> Option<usize> {
        self.vars.iter().position(|&x| x == v)
    }

    pub fn card(&self, v: Var) -> Option<usize> {
        self.pos(v).map(|i| self.cards[i])
    }

    fn strides(cards: &[usize]) -> Vec<usize> {
        let mut s = vec![1; cards.len()];
        for i in (0..cards.len().saturating_sub(1)).rev() {
            s[i] = s[i + 1] * cards[i + 1];
        }
        s
    }

    /// Pointwise product. The result lists `self`'s variables first, then
    /// the ones only `other` has, in `other`'s order.
    pub fn product(&self, other: &Factor) -> Factor {
        let mut vars = self.vars.clone();
        let mut cards = self.cards.clone();
        for (i, &v) in other.vars.iter().enumerate() {
            if !vars.contains(&v) {
                vars.push(v);
                cards.push(other.cards[i]);
            }
        }
        let a_str = project_strides(&vars, &self.vars, &Self::strides(&self.cards));
        let b_str = project_strides(&vars, &other.vars, &Self::strides(&other.cards));
        let n: usize = cards.iter().product();
        let mut table = Vec::with_capacity(n);
        let mut idx = vec![0usize; vars.len()];
        let (mut ia, mut ib) = (0usize, 0usize);
        for _ in 0..n {
            table.push(self.table[ia] * other.table[ib]);
            for d in (0..vars.len()).rev() {
                idx[d] += 1;
                ia += a_str[d];
                ib += b_str[d];
                if idx[d] < cards[d] {
                    break;
                }
                ia -= a_str[d] * cards[d];
                ib -= b_str[d] * cards[d];
                idx[d] = 0;
            }
        }
        Factor { vars, cards, table }
    }

    /// Sums out everything except `keep`, which must be a subset of the
    /// scope. The result is ordered as `keep`.
    pub fn marginalize(&self, keep: &[Var]) -> Factor {
        let cards: Vec<usize> = keep.iter().map(|&v| self.card(v).expect("kept variable in scope")).collect();
        let out_str = Self::strides(&cards);
        let to_out = project_strides(&self.vars, keep, &out_str);
        let mut table = vec![0.0; cards.iter().product()];
        let mut idx = vec![0usize; self.vars.len()];
        let mut io = 0usize;
        for &x in &self.table {
            table[io] += x;
            for d in (0..self.vars.len()).rev() {
                idx[d] += 1;
                io += to_out[d];
                if idx[d] < self.cards[d] {
                    break;
                }
                io -= to_out[d] * self.cards[d];
                idx[d] = 0;
            }
        }
        Factor { vars: keep.to_vec(), cards, table }
    }

    pub fn sum_out(&self, v: Var) -> Factor {
        let keep: Vec<Var> = self.vars.iter().copied().filter(|&x| x != v).collect();
        self.marginalize(&keep)
    }

    /// Zeroes every entry inconsistent with `v = value`. The scope is kept.
    pub fn observe(&mut self, v: Var, value: usize) {
        let Some(p) = self.pos(v) else { return };
        let stride = Self::strides(&self.cards)[p];
        let card = self.cards[p];
        for (i, x) in self.table.iter_mut().enumerate() {
            if (i / stride) % card != value {
                *x = 0.0;
            }
        }
    }

    /// Same table with the scope reordered to `order`.
    pub fn permute(&self, order: &[Var]) -> Factor {
        debug_assert_eq!(order.len(), self.vars.len());
        self.marginalize(order)
    }

    /// Compensated sum of all entries.
    pub fn total(&self) -> f64 {
        neumaier(self.table.iter().copied())
    }

    pub fn normalized(&self) -> Result<Factor> {
        let z = self.total();
        if !(z > 0.0) || !z.is_finite() {
            return Err(Error::new(ErrorCode::ZeroProb, "the evidence has probability zero"));
        }
        let mut f = self.clone();
        for x in &mut f.table {
            *x /= z;
        }
        Ok(f)
    }

    /// Entry at an assignment given in scope order.
    pub fn at(&self, assign: &[usize]) -> f64 {
        let s = Self::strides(&self.cards);
        self.table[assign.iter().zip(&s).map(|(a, s)| a * s).sum::<usize>()]
    }

    /// Renames the scope; `f` must be injective.
    pub fn relabel(&self, f: impl Fn(Var) -> Var) -> Factor {
        Factor { vars: self.vars.iter().map(|&v| f(v)).collect(), cards: self.cards.clone(), table: self.table.clone() }
    }

    pub fn max_abs_diff(&self, other: &Factor) -> f64 {
        let o = other.permute(&self.vars);
        self.table.iter().zip(&o.table).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max)
    }
}

/// For each variable of `outer`, the stride it has in a table over `inner`
/// (0 when absent).
fn project_strides(outer: &[Var], inner: &[Var], inner_strides: &[usize]) -> Vec<usize> {
    outer.iter().map(|v| inner.iter().position(|x| x == v).map_or(0, |i| inner_strides[i])).collect()
}

/// Neumaier's compensated summation.
pub fn neumaier(xs: impl IntoIterator<Item = f64>) -> f64 {
    let (mut s, mut c) = (0.0f64, 0.0f64);
    for x in xs {
        let t = s + x;
        if s.abs() >= x.abs() {
            c += (s - t) + x;
        } else {
            c += (x - t) + s;
        }
        s = t;
    }
    s + c
}

/// Multiplies `factors` and sums out every variable not in `keep`,
/// eliminating greedily by smallest intermediate table. Returns the result
/// ordered as `keep` and the number of table cells produced along the way.
pub fn eliminate(mut factors: Vec<Factor>, keep: &[Var]) -> (Factor, u64) {
    let mut cells = 0u64;
    loop {
        let mut cand: Vec<(Var, usize)> = Vec::new();
        for f in &factors {
            for (i, &v) in f.vars.iter().enumerate() {
                if !keep.contains(&v) && !cand.iter().any(|(x, _)| *x == v) {
                    cand.push((v, f.cards[i]));
                }
            }
        }
        if cand.is_empty() {
            break;
        }
        let size_if = |v: Var| -> usize {
            let mut scope: Vec<(Var, usize)> = Vec::new();
            for f in factors.iter().filter(|f| f.vars.contains(&v)) {
                for (i, &x) in f.vars.iter().enumerate() {
                    if !scope.iter().any(|(y, _)| *y == x) {
                        scope.push((x, f.cards[i]));
                    }
                }
            }
            scope.iter().map(|(_, c)| c).product()
        };
        let v = cand.iter().map(|&(v, _)| (size_if(v), v)).min().unwrap().1;
        let (with, rest): (Vec<Factor>, Vec<Factor>) = factors.into_iter().partition(|f| f.vars.contains(&v));
        let mut prod = with[0].clone();
        for f in &with[1..] {
            prod = prod.product(f);
            cells += prod.len() as u64;
        }
        let reduced = prod.sum_out(v);
        cells += prod.len() as u64;
        factors = rest;
        factors.push(reduced);
    }
    let mut prod = Factor::scalar(1.0);
    for f in &factors {
        prod = prod.product(f);
        cells += prod.len() as u64;
    }
    (prod.marginalize(keep), cells)
}
