//! Linearly parameterized Q-function over products of a polynomial vector z.
//!
//! The feature vector holds every product z_i·z_j with i ≤ j, ordered
//! row-major over the upper triangle. Each z entry is a power of a single
//! variable from the concatenation v = [x, r, a], so every feature is a
//! monomial in v and derivatives come straight from its exponent table.

use std::cell::Cell;
use std::fmt;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::system::{ActionBounds, ActionVector, Policy, ReferenceState, SystemState};

pub const WEIGHTS_FORMAT: &str = "rlpi-qweights/1";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Var {
    X(usize),
    R(usize),
    A(usize),
}

/// One entry of z: `var^power`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct ZEntry {
    pub var: Var,
    pub power: u8,
}

impl fmt::Display for ZEntry {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let (c, k) = match self.var {
            Var::X(k) => ('x', k),
            Var::R(k) => ('r', k),
            Var::A(k) => ('a', k),
        };
        if self.power == 1 {
            write!(f, "{c}{}", k + 1)
        } else {
            write!(f, "{c}{}^{}", k + 1, self.power)
        }
    }
}

impl std::str::FromStr for ZEntry {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let bad = || Error::config(format!("cannot parse basis entry {s:?}"));
        let (head, power) = match s.split_once('^') {
            Some((h, p)) => (h, p.parse::<u8>().map_err(|_| bad())?),
            None => (s, 1),
        };
        let mut chars = head.chars();
        let kind = chars.next().ok_or_else(bad)?;
        let idx: usize = chars.as_str().parse().map_err(|_| bad())?;
        if idx == 0 || power == 0 {
            return Err(bad());
        }
        let var = match kind {
            'x' => Var::X(idx - 1),
            'r' => Var::R(idx - 1),
            'a' => Var::A(idx - 1),
            _ => return Err(bad()),
        };
        Ok(ZEntry { var, power })
    }
}

#[derive(Clone, Debug, PartialEq)]
struct Feature {
    i: usize,
    j: usize,
    /// (index into v, exponent) with distinct indices, sorted.
    factors: Vec<(usize, u8)>,
}

/// Fixed feature map Φ(x, r, a).
#[derive(Clone, Debug, PartialEq)]
pub struct BasisDescriptor {
    n: usize,
    p: usize,
    m: usize,
    z: Vec<ZEntry>,
    features: Vec<Feature>,
    max_power: usize,
}

impl BasisDescriptor {
    pub fn from_z(n: usize, p: usize, m: usize, z: Vec<ZEntry>) -> Result<Self> {
        if z.is_empty() {
            return Err(Error::config("empty basis vector"));
        }
        for e in &z {
            let ok = match e.var {
                Var::X(k) => k < n,
                Var::R(k) => k < p,
                Var::A(k) => k < m,
            };
            if !ok {
                return Err(Error::config(format!("basis entry {e} out of range for n={n}, p={p}, m={m}")));
            }
        }
        let index = |v: Var| match v {
            Var::X(k) => k,
            Var::R(k) => n + k,
            Var::A(k) => n + p + k,
        };
        let mut features = Vec::new();
        let mut seen = std::collections::HashSet::new();
        let mut max_power = 0usize;
        for i in 0..z.len() {
            for j in i..z.len() {
                let mut factors: Vec<(usize, u8)> = Vec::with_capacity(2);
                for e in [z[i], z[j]] {
                    let k = index(e.var);
                    match factors.iter_mut().find(|(idx, _)| *idx == k) {
                        Some(f) => f.1 += e.power,
                        None => factors.push((k, e.power)),
                    }
                }
                factors.sort_unstable();
                let action_degree: u32 =
                    factors.iter().filter(|(k, _)| *k >= n + p).map(|(_, e)| *e as u32).sum();
                if action_degree > 2 {
                    return Err(Error::config(format!(
                        "feature {}*{} is not at most quadratic in the action",
                        z[i], z[j]
                    )));
                }
                if !seen.insert(factors.clone()) {
                    return Err(Error::config(format!("feature {}*{} duplicates an earlier monomial", z[i], z[j])));
                }
                max_power = max_power.max(factors.iter().map(|f| f.1 as usize).max().unwrap_or(0));
                features.push(Feature { i, j, factors });
            }
        }
        if max_power > 8 {
            return Err(Error::config("basis monomials are limited to degree 8 per variable"));
        }
        Ok(Self { n, p, m, z, features, max_power })
    }

    /// z = [x, x², r, r², a] per dimension.
    pub fn standard(n: usize, p: usize, m: usize) -> Result<Self> {
        let mut z = Vec::new();
        z.extend((0..n).map(|k| ZEntry { var: Var::X(k), power: 1 }));
        z.extend((0..n).map(|k| ZEntry { var: Var::X(k), power: 2 }));
        z.extend((0..p).map(|k| ZEntry { var: Var::R(k), power: 1 }));
        z.extend((0..p).map(|k| ZEntry { var: Var::R(k), power: 2 }));
        z.extend((0..m).map(|k| ZEntry { var: Var::A(k), power: 1 }));
        Self::from_z(n, p, m, z)
    }

    /// The glucose harness basis: z = [x₁, x₂, x₁², x₂², r, r², a].
    pub fn harness() -> Self {
        Self::standard(2, 1, 1).expect("harness basis is valid")
    }

    pub fn n(&self) -> usize {
        self.n
    }
    pub fn p(&self) -> usize {
        self.p
    }
    pub fn m(&self) -> usize {
        self.m
    }
    pub fn len(&self) -> usize {
        self.features.len()
    }
    pub fn is_empty(&self) -> bool {
        self.features.is_empty()
    }
    pub fn z(&self) -> &[ZEntry] {
        &self.z
    }

    /// Index of the feature z_i·z_j (any order).
    pub fn feature_index(&self, i: usize, j: usize) -> Option<usize> {
        let (i, j) = if i <= j { (i, j) } else { (j, i) };
        self.features.iter().position(|f| f.i == i && f.j == j)
    }

    /// Index of the monomial with the given (variable, exponent) factors.
    pub fn monomial_index(&self, factors: &[(Var, u8)]) -> Option<usize> {
        let mut want: Vec<(usize, u8)> = factors.iter().map(|(v, e)| (self.var_index(*v), *e)).collect();
        want.sort_unstable();
        self.features.iter().position(|f| f.factors == want)
    }

    pub fn feature_names(&self) -> Vec<String> {
        self.features.iter().map(|f| format!("{}*{}", self.z[f.i], self.z[f.j])).collect()
    }

    pub fn z_spec(&self) -> Vec<String> {
        self.z.iter().map(|e| e.to_string()).collect()
    }

    pub fn hash(&self) -> String {
        let canonical = format!("n={};p={};m={};z={}", self.n, self.p, self.m, self.z_spec().join(","));
        hex::encode(Sha256::digest(canonical.as_bytes()))
    }

    fn var_index(&self, v: Var) -> usize {
        match v {
            Var::X(k) => k,
            Var::R(k) => self.n + k,
            Var::A(k) => self.n + self.p + k,
        }
    }

    fn check_dims(&self, x: &[f64], r: &[f64], a: &[f64]) -> Result<()> {
        for (what, got, expected) in [("state", x.len(), self.n), ("reference", r.len(), self.p), ("action", a.len(), self.m)] {
            if got != expected {
                return Err(Error::Dimension { what, expected, got });
            }
        }
        Ok(())
    }

    /// pw[k][e] = v_k^e for e ≤ max_power.
    fn powers(&self, x: &[f64], r: &[f64], a: &[f64]) -> Vec<[f64; 9]> {
        x.iter()
            .chain(r)
            .chain(a)
            .map(|&v| {
                let mut row = [1.0; 9];
                for e in 1..=self.max_power.min(8) {
                    row[e] = row[e - 1] * v;
                }
                row
            })
            .collect()
    }

    pub fn eval_into(&self, x: &[f64], r: &[f64], a: &[f64], out: &mut [f64]) {
        let pw = self.powers(x, r, a);
        for (o, f) in out.iter_mut().zip(&self.features) {
            *o = f.factors.iter().map(|&(k, e)| pw[k][e as usize]).product();
        }
    }

    pub fn eval(&self, x: &[f64], r: &[f64], a: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.len()];
        self.eval_into(x, r, a, &mut out);
        out
    }
}

/// Point (x, r, a) at which Q, its derivatives and costs are evaluated.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StateRefAction {
    pub x: SystemState,
    pub r: ReferenceState,
    pub a: ActionVector,
}

impl StateRefAction {
    pub fn new(x: Vec<f64>, r: Vec<f64>, a: Vec<f64>) -> Self {
        Self { x: SystemState(x), r: ReferenceState(r), a: ActionVector(a) }
    }
}

pub fn basis_eval(basis: &BasisDescriptor, p: &StateRefAction) -> Result<Vec<f64>> {
    basis.check_dims(&p.x, &p.r, &p.a)?;
    Ok(basis.eval(&p.x, &p.r, &p.a))
}

/// Q̂(x, r, a) = Φ(x, r, a)ᵀ w.
#[derive(Clone, Debug, PartialEq)]
pub struct QWeights {
    pub basis: Arc<BasisDescriptor>,
    pub w: Vec<f64>,
}

/// Quadratic model of Q̂ in the action at fixed (x, r):
/// Q̂ = aᵀ C₂ a + c₁ᵀ a + c₀.
#[derive(Clone, Debug, PartialEq)]
pub struct ActionQuadratic {
    pub c2: DMatrix<f64>,
    pub c1: DVector<f64>,
    pub c0: f64,
}

impl ActionQuadratic {
    pub fn value(&self, a: &[f64]) -> f64 {
        let av = DVector::from_column_slice(a);
        (av.transpose() * &self.c2 * &av)[(0, 0)] + self.c1.dot(&av) + self.c0
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Greedy {
    pub action: ActionVector,
    /// False when Q̂ was not strictly convex in the action at this point.
    pub convex: bool,
}

impl QWeights {
    pub fn new(basis: Arc<BasisDescriptor>, w: Vec<f64>) -> Result<Self> {
        if w.len() != basis.len() {
            return Err(Error::Dimension { what: "weights", expected: basis.len(), got: w.len() });
        }
        if !w.iter().all(|v| v.is_finite()) {
            return Err(Error::InvalidSample("non-finite weight".into()));
        }
        Ok(Self { basis, w })
    }

    pub fn zeros(basis: Arc<BasisDescriptor>) -> Self {
        let k = basis.len();
        Self { basis, w: vec![0.0; k] }
    }

    pub fn value(&self, x: &[f64], r: &[f64], a: &[f64]) -> f64 {
        let pw = self.basis.powers(x, r, a);
        self.basis
            .features
            .iter()
            .zip(&self.w)
            .map(|(f, w)| w * f.factors.iter().map(|&(k, e)| pw[k][e as usize]).product::<f64>())
            .sum()
    }

    pub fn grad_x(&self, x: &[f64], r: &[f64], a: &[f64]) -> Vec<f64> {
        let n = self.basis.n;
        let pw = self.basis.powers(x, r, a);
        let mut g = vec![0.0; n];
        for (f, &w) in self.basis.features.iter().zip(&self.w) {
            if w == 0.0 {
                continue;
            }
            for (pos, &(k, e)) in f.factors.iter().enumerate() {
                if k >= n {
                    continue;
                }
                let rest: f64 = f
                    .factors
                    .iter()
                    .enumerate()
                    .filter(|(q, _)| *q != pos)
                    .map(|(_, &(l, el))| pw[l][el as usize])
                    .product();
                g[k] += w * e as f64 * pw[k][e as usize - 1] * rest;
            }
        }
        g
    }

    pub fn hess_x(&self, x: &[f64], r: &[f64], a: &[f64]) -> DMatrix<f64> {
        let n = self.basis.n;
        let pw = self.basis.powers(x, r, a);
        let mut h = DMatrix::zeros(n, n);
        for (f, &w) in self.basis.features.iter().zip(&self.w) {
            if w == 0.0 {
                continue;
            }
            let fs = &f.factors;
            for (p1, &(k, ek)) in fs.iter().enumerate() {
                if k >= n {
                    continue;
                }
                if ek >= 2 {
                    let rest: f64 =
                        fs.iter().enumerate().filter(|(q, _)| *q != p1).map(|(_, &(l, el))| pw[l][el as usize]).product();
                    h[(k, k)] += w * (ek as f64) * (ek as f64 - 1.0) * pw[k][ek as usize - 2] * rest;
                }
                for (p2, &(l, el)) in fs.iter().enumerate() {
                    if p2 <= p1 || l >= n {
                        continue;
                    }
                    let rest: f64 = fs
                        .iter()
                        .enumerate()
                        .filter(|(q, _)| *q != p1 && *q != p2)
                        .map(|(_, &(s, es))| pw[s][es as usize])
                        .product();
                    let v = w * ek as f64 * el as f64 * pw[k][ek as usize - 1] * pw[l][el as usize - 1] * rest;
                    h[(k, l)] += v;
                    h[(l, k)] += v;
                }
            }
        }
        h
    }

    pub fn action_quadratic(&self, x: &[f64], r: &[f64]) -> ActionQuadratic {
        let b = &*self.basis;
        let (n, p, m) = (b.n, b.p, b.m);
        let zeros = vec![0.0; m];
        let pw = b.powers(x, r, &zeros);
        let mut c2 = DMatrix::zeros(m, m);
        let mut c1 = DVector::zeros(m);
        let mut c0 = 0.0;
        for (f, &w) in b.features.iter().zip(&self.w) {
            if w == 0.0 {
                continue;
            }
            let mut s = w;
            let mut act: [(usize, u8); 2] = [(0, 0); 2];
            let mut na = 0;
            for &(k, e) in &f.factors {
                if k >= n + p {
                    act[na] = (k - n - p, e);
                    na += 1;
                } else {
                    s *= pw[k][e as usize];
                }
            }
            match (na, act[0].1) {
                (0, _) => c0 += s,
                (1, 1) => c1[act[0].0] += s,
                (1, _) => c2[(act[0].0, act[0].0)] += s,
                _ => {
                    let (k, l) = (act[0].0, act[1].0);
                    c2[(k, l)] += 0.5 * s;
                    c2[(l, k)] += 0.5 * s;
                }
            }
        }
        ActionQuadratic { c2, c1, c0 }
    }

    pub fn greedy(&self, x: &[f64], r: &[f64], bounds: &ActionBounds) -> Greedy {
        minimize_box_quadratic(&self.action_quadratic(x, r), bounds)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(&WeightsFile::from(self))?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let file: WeightsFile = serde_json::from_str(text)?;
        file.try_into()
    }
}

fn minimize_box_quadratic(q: &ActionQuadratic, bounds: &ActionBounds) -> Greedy {
    let m = q.c1.len();
    if m == 1 {
        let (c2, c1) = (q.c2[(0, 0)], q.c1[0]);
        let (lo, hi) = (bounds.lo[0], bounds.hi[0]);
        if c2 > 0.0 {
            return Greedy { action: ActionVector(vec![(-c1 / (2.0 * c2)).clamp(lo, hi)]), convex: true };
        }
        let a = if q.value(&[hi]) < q.value(&[lo]) { hi } else { lo };
        return Greedy { action: ActionVector(vec![a]), convex: false };
    }
    if q.c2.clone().cholesky().is_some() {
        // Projected Gauss-Seidel converges for strictly convex box QPs.
        let mut a: Vec<f64> = (0..m).map(|k| 0.0_f64.clamp(bounds.lo[k], bounds.hi[k])).collect();
        for _ in 0..10_000 {
            let mut change = 0.0_f64;
            for k in 0..m {
                let mut lin = q.c1[k];
                for l in 0..m {
                    if l != k {
                        lin += 2.0 * q.c2[(k, l)] * a[l];
                    }
                }
                let v = (-lin / (2.0 * q.c2[(k, k)])).clamp(bounds.lo[k], bounds.hi[k]);
                change = change.max((v - a[k]).abs());
                a[k] = v;
            }
            if change <= 1e-15 {
                break;
            }
        }
        return Greedy { action: ActionVector(a), convex: true };
    }
    let mut best: Option<(f64, Vec<f64>)> = None;
    for mask in 0..(1usize << m) {
        let a: Vec<f64> = (0..m).map(|k| if mask >> k & 1 == 1 { bounds.hi[k] } else { bounds.lo[k] }).collect();
        let v = q.value(&a);
        if best.as_ref().is_none_or(|(bv, _)| v < *bv) {
            best = Some((v, a));
        }
    }
    Greedy { action: ActionVector(best.expect("at least one vertex").1), convex: false }
}

pub fn q_eval(w: &QWeights, p: &StateRefAction) -> f64 {
    w.value(&p.x, &p.r, &p.a)
}

pub fn q_grad_x(w: &QWeights, p: &StateRefAction) -> Vec<f64> {
    w.grad_x(&p.x, &p.r, &p.a)
}

pub fn q_hess_x(w: &QWeights, p: &StateRefAction) -> DMatrix<f64> {
    w.hess_x(&p.x, &p.r, &p.a)
}

pub fn policy_improve(w: &QWeights, x: &SystemState, r: &ReferenceState, bounds: &ActionBounds) -> Greedy {
    w.greedy(x, r, bounds)
}

/// Greedy policy of a weight vector, counting non-convex evaluations.
pub struct GreedyPolicy<'a> {
    pub weights: &'a QWeights,
    pub bounds: &'a ActionBounds,
    nonconvex: Cell<usize>,
}

impl<'a> GreedyPolicy<'a> {
    pub fn new(weights: &'a QWeights, bounds: &'a ActionBounds) -> Self {
        Self { weights, bounds, nonconvex: Cell::new(0) }
    }

    pub fn nonconvex_count(&self) -> usize {
        self.nonconvex.get()
    }
}

impl Policy for GreedyPolicy<'_> {
    fn action(&self, x: &SystemState, r: &ReferenceState) -> ActionVector {
        let g = self.weights.greedy(x, r, self.bounds);
        if !g.convex {
            self.nonconvex.set(self.nonconvex.get() + 1);
        }
        g.action
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct InitConfig {
    /// Weight on every squared z entry of a state or reference variable.
    pub c_base: f64,
    /// Multiplier applied to the squared action entries.
    pub action_ratio: f64,
}

impl Default for InitConfig {
    fn default() -> Self {
        Self { c_base: 1.0, action_ratio: 1e5 }
    }
}

/// Positive-definite diagonal form Σ c_i z_i².
pub fn init_q0(basis: Arc<BasisDescriptor>, cfg: &InitConfig) -> QWeights {
    let mut w = vec![0.0; basis.len()];
    for (idx, f) in basis.features.iter().enumerate() {
        if f.i == f.j {
            let is_action = matches!(basis.z[f.i].var, Var::A(_));
            w[idx] = if is_action { cfg.action_ratio * cfg.c_base } else { cfg.c_base };
        }
    }
    QWeights { basis, w }
}

#[derive(Serialize, Deserialize)]
struct BasisFile {
    hash: String,
    n: usize,
    p: usize,
    m: usize,
    z: Vec<String>,
    /// Feature order of `w`: z_i*z_j for i <= j, row-major.
    features: Vec<String>,
}

#[derive(Serialize, Deserialize)]
struct WeightsFile {
    format: String,
    basis: BasisFile,
    w: Vec<f64>,
}

impl From<&QWeights> for WeightsFile {
    fn from(q: &QWeights) -> Self {
        let b = &*q.basis;
        WeightsFile {
            format: WEIGHTS_FORMAT.into(),
            basis: BasisFile { hash: b.hash(), n: b.n, p: b.p, m: b.m, z: b.z_spec(), features: b.feature_names() },
            w: q.w.clone(),
        }
    }
}

impl TryFrom<WeightsFile> for QWeights {
    type Error = Error;

    fn try_from(f: WeightsFile) -> Result<Self> {
        if f.format != WEIGHTS_FORMAT {
            return Err(Error::config(format!("unsupported weights format {:?}", f.format)));
        }
        let z = f.basis.z.iter().map(|s| s.parse()).collect::<Result<Vec<ZEntry>>>()?;
        let basis = BasisDescriptor::from_z(f.basis.n, f.basis.p, f.basis.m, z)?;
        if basis.hash() != f.basis.hash || basis.feature_names() != f.basis.features {
            return Err(Error::config("weights file basis does not match its z specification"));
        }
        QWeights::new(Arc::new(basis), f.w)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn harness() -> Arc<BasisDescriptor> {
        Arc::new(BasisDescriptor::harness())
    }

    #[test]
    fn harness_feature_count_and_order() {
        let b = harness();
        assert_eq!(b.len(), 28);
        let names = b.feature_names();
        assert_eq!(names[0], "x1*x1");
        assert_eq!(names[1], "x1*x2");
        assert_eq!(names[6], "x1*a1");
        assert_eq!(names[27], "a1*a1");
        assert_eq!(b.z_spec(), vec!["x1", "x2", "x1^2", "x2^2", "r1", "r1^2", "a1"]);
    }

    #[test]
    fn basis_at_unit_x1() {
        let b = harness();
        let phi = basis_eval(&b, &StateRefAction::new(vec![1.0, 0.0], vec![0.0], vec![0.0])).unwrap();
        let names = b.feature_names();
        let nonzero: Vec<&str> = phi.iter().zip(&names).filter(|(v, _)| **v != 0.0).map(|(_, n)| n.as_str()).collect();
        assert_eq!(nonzero, vec!["x1*x1", "x1*x1^2", "x1^2*x1^2"]);
        assert!(phi.iter().all(|&v| v == 0.0 || v == 1.0));
    }

    #[test]
    fn dimension_mismatch() {
        let b = harness();
        let p = StateRefAction::new(vec![1.0], vec![0.0], vec![0.0]);
        assert!(matches!(basis_eval(&b, &p), Err(Error::Dimension { .. })));
    }

    #[test]
    fn hand_gradient_and_hessian() {
        let b = harness();
        let mut w = QWeights::zeros(b.clone());
        w.w[b.feature_index(0, 6).unwrap()] = 1.0;
        let g = q_grad_x(&w, &StateRefAction::new(vec![0.3, -0.7], vec![5.0], vec![2.0]));
        assert_eq!(g, vec![2.0, 0.0]);

        let mut w = QWeights::zeros(b.clone());
        w.w[b.feature_index(0, 0).unwrap()] = 3.5;
        let h = q_hess_x(&w, &StateRefAction::new(vec![0.3, -0.7], vec![5.0], vec![2.0]));
        assert_eq!(h, DMatrix::from_row_slice(2, 2, &[7.0, 0.0, 0.0, 0.0]));
    }

    #[test]
    fn scalar_greedy_examples() {
        let bounds = ActionBounds::new(vec![0.0], vec![5.0]).unwrap();
        let q = ActionQuadratic { c2: DMatrix::from_element(1, 1, 1.0), c1: DVector::from_element(1, -2.0), c0: 0.0 };
        assert_eq!(minimize_box_quadratic(&q, &bounds).action.0, vec![1.0]);
        let q = ActionQuadratic { c2: DMatrix::from_element(1, 1, 1.0), c1: DVector::from_element(1, 4.0), c0: 0.0 };
        assert_eq!(minimize_box_quadratic(&q, &bounds).action.0, vec![0.0]);
        let q = ActionQuadratic { c2: DMatrix::from_element(1, 1, -1.0), c1: DVector::from_element(1, 1.0), c0: 0.0 };
        let g = minimize_box_quadratic(&q, &bounds);
        assert!(!g.convex);
        assert_eq!(g.action.0, vec![5.0]);
    }

    #[test]
    fn q0_is_positive_definite_with_heavy_action_weight() {
        let b = harness();
        let q0 = init_q0(b.clone(), &InitConfig::default());
        assert_eq!(q0.w[b.feature_index(6, 6).unwrap()], 1e5);
        assert_eq!(q0.w[b.feature_index(0, 0).unwrap()], 1.0);
        assert_eq!(q0.w[b.feature_index(0, 1).unwrap()], 0.0);
        assert_eq!(q0.value(&[0.0, 0.0], &[0.0], &[0.0]), 0.0);
        for x1 in [-2.0, 0.5, 3.0] {
            for a in [0.0, 0.1] {
                assert!(q0.value(&[x1, 0.2], &[1.0], &[a]) > 0.0);
            }
        }
        let bounds = ActionBounds::new(vec![0.0], vec![5.0]).unwrap();
        let g = q0.greedy(&[180.0, 1.0], &[120.0], &bounds);
        assert!(g.convex && g.action[0] == 0.0);
    }

    #[test]
    fn action_quadratic_reproduces_value() {
        let b = Arc::new(BasisDescriptor::standard(2, 1, 2).unwrap());
        let w = QWeights::new(b.clone(), (0..b.len()).map(|k| ((k * 37 % 11) as f64 - 5.0) / 7.0).collect()).unwrap();
        let (x, r) = ([0.4, -1.2], [0.7]);
        let q = w.action_quadratic(&x, &r);
        for a in [[0.0, 0.0], [1.0, -0.5], [-2.0, 3.0]] {
            assert!((q.value(&a) - w.value(&x, &r, &a)).abs() < 1e-12);
        }
    }

    #[test]
    fn multi_action_box_qp() {
        let q = ActionQuadratic {
            c2: DMatrix::from_row_slice(2, 2, &[2.0, 0.5, 0.5, 1.0]),
            c1: DVector::from_vec(vec![-4.0, 6.0]),
            c0: 0.0,
        };
        let bounds = ActionBounds::symmetric(2, 1.0);
        let g = minimize_box_quadratic(&q, &bounds);
        let mut best = (f64::INFINITY, [0.0, 0.0]);
        for i in 0..=400 {
            for j in 0..=400 {
                let a = [-1.0 + i as f64 / 200.0, -1.0 + j as f64 / 200.0];
                let v = q.value(&a);
                if v < best.0 {
                    best = (v, a);
                }
            }
        }
        assert!(q.value(&g.action) <= best.0 + 1e-12);
    }

    #[test]
    fn json_round_trip() {
        let b = harness();
        let w = QWeights::new(b.clone(), (0..28).map(|k| k as f64 * 0.25 - 3.0).collect()).unwrap();
        let text = w.to_json().unwrap();
        assert_eq!(QWeights::from_json(&text).unwrap(), w);
        let tampered = text.replace("\"x1^2\"", "\"x1^3\"");
        assert!(QWeights::from_json(&tampered).is_err());
    }

    #[test]
    fn rejects_duplicate_monomials() {
        let z = vec![
            ZEntry { var: Var::X(0), power: 1 },
            ZEntry { var: Var::X(0), power: 2 },
            ZEntry { var: Var::X(0), power: 3 },
        ];
        // x1*x1^3 = x1^2*x1^2
        assert!(BasisDescriptor::from_z(1, 0, 0, z).is_err());
    }
}
