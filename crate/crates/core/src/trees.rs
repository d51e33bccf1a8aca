//! Ordered ternary trees and the multilinear Duhamel terms they index.
//!
//! A tree with `j` non-terminal nodes is mapped to a term of degree `2j + 1`
//! in the data: terminals become `S(t) u0`, a non-terminal node becomes the
//! Duhamel operator applied to the product of its three children. Summing
//! over all trees of generation `j` gives `Xi_j`, and `sum_j Xi_j` is the
//! power series of the solution of the plain cubic equation.

use std::fmt;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::duhamel::{duhamel_on_grid, Dispersion, PanelGrid, PanelRule, QuadratureSpec, WeightCache};
use crate::error::{LabError, Result};
use crate::field::{FieldPair, SpectralField};
use crate::par;

/// Largest generation handled by the enumerator.
pub const MAX_GENERATION: usize = 6;

/// Growth constant with `||Xi_j(t)||_{FL^1} <= C^j t^{2j} ||u0||^{2j+1}`:
/// at most `(27/4)^j` trees per generation, each bounded by `(t^2/2)^j`.
pub const XI_GROWTH_CONSTANT: f64 = 27.0 / 8.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Node {
    pub parent: Option<usize>,
    pub children: Option<[usize; 3]>,
}

/// Ordered ternary tree in preorder; node 0 is the root.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TernaryTree {
    nodes: Vec<Node>,
}

#[derive(Clone)]
enum Shape {
    Leaf,
    Inner(Box<[Shape; 3]>),
}

impl TernaryTree {
    pub fn leaf() -> Self {
        Self { nodes: vec![Node { parent: None, children: None }] }
    }

    /// Tree whose root has the three given subtrees.
    pub fn join(a: &TernaryTree, b: &TernaryTree, c: &TernaryTree) -> Self {
        let mut nodes = vec![Node { parent: None, children: None }];
        let mut kids = [0; 3];
        for (k, sub) in [a, b, c].into_iter().enumerate() {
            let off = nodes.len();
            kids[k] = off;
            for (i, n) in sub.nodes.iter().enumerate() {
                nodes.push(Node {
                    parent: Some(n.parent.map_or(0, |p| p + off)),
                    children: n.children.map(|ch| ch.map(|x| x + off)),
                });
                debug_assert!(i > 0 || n.parent.is_none());
            }
        }
        nodes[0].children = Some(kids);
        Self { nodes }
    }

    fn from_shape(s: &Shape) -> Self {
        match s {
            Shape::Leaf => Self::leaf(),
            Shape::Inner(k) => Self::join(&Self::from_shape(&k[0]), &Self::from_shape(&k[1]), &Self::from_shape(&k[2])),
        }
    }

    pub fn nodes(&self) -> &[Node] {
        &self.nodes
    }

    pub fn size(&self) -> usize {
        self.nodes.len()
    }

    /// Number of non-terminal nodes.
    pub fn generation(&self) -> usize {
        self.nodes.iter().filter(|n| n.children.is_some()).count()
    }

    pub fn terminals(&self) -> usize {
        self.size() - self.generation()
    }

    /// Bracket notation: `o` for a terminal, `(a b c)` for a node.
    pub fn notation(&self) -> String {
        fn go(t: &TernaryTree, i: usize, out: &mut String) {
            match t.nodes[i].children {
                None => out.push('o'),
                Some(ch) => {
                    out.push('(');
                    for (k, c) in ch.iter().enumerate() {
                        if k > 0 {
                            out.push(' ');
                        }
                        go(t, *c, out);
                    }
                    out.push(')');
                }
            }
        }
        let mut s = String::new();
        go(self, 0, &mut s);
        s
    }

    fn check(&self) -> bool {
        self.nodes.iter().enumerate().all(|(i, n)| {
            n.children.is_none_or(|ch| ch.iter().all(|&c| self.nodes[c].parent == Some(i)))
        }) && self.size() == 3 * self.generation() + 1
    }
}

impl fmt::Display for TernaryTree {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.notation())
    }
}

fn shapes(j: usize, memo: &mut Vec<Vec<Shape>>) -> Vec<Shape> {
    while memo.len() <= j {
        let g = memo.len();
        let mut out = Vec::new();
        if g == 0 {
            out.push(Shape::Leaf);
        } else {
            for j1 in 0..g {
                for j2 in 0..(g - j1) {
                    let j3 = g - 1 - j1 - j2;
                    for a in &memo[j1] {
                        for b in &memo[j2] {
                            for c in &memo[j3] {
                                out.push(Shape::Inner(Box::new([a.clone(), b.clone(), c.clone()])));
                            }
                        }
                    }
                }
            }
        }
        memo.push(out);
    }
    memo[j].clone()
}

/// All ordered ternary trees with `j` non-terminal nodes, ordered by the
/// generations of the root's children and then recursively.
pub fn enumerate_trees(j: usize) -> Result<Vec<TernaryTree>> {
    if j > MAX_GENERATION {
        return Err(LabError::Size(format!("tree enumeration limited to j <= {MAX_GENERATION}, got {j}")));
    }
    let mut memo = Vec::new();
    let trees: Vec<TernaryTree> = shapes(j, &mut memo).iter().map(TernaryTree::from_shape).collect();
    debug_assert!(trees.iter().all(TernaryTree::check));
    Ok(trees)
}

/// `C(3j, j) / (2j + 1)`.
pub fn fuss_catalan(j: usize) -> u64 {
    let mut c: u128 = 1;
    for i in 0..j as u128 {
        c = c * (3 * j as u128 - i) / (i + 1);
    }
    (c / (2 * j as u128 + 1)) as u64
}

/// Smallest `C` with `#trees(j) <= C^j` for `1 <= j <= j_max`.
pub fn fitted_count_constant(j_max: usize) -> f64 {
    (1..=j_max).map(|j| (fuss_catalan(j) as f64).powf(1.0 / j as f64)).fold(0.0, f64::max)
}

/// A tree together with its values at requested times.
#[derive(Debug, Clone)]
pub struct PicardTerm {
    pub tree: TernaryTree,
    pub times: Vec<f64>,
    pub values: Vec<SpectralField>,
    pub panels: usize,
}

struct Evaluation {
    grid: PanelGrid,
    linear: Vec<SpectralField>,
    linear_out: Vec<SpectralField>,
}

fn linear_samples(disp: &Dispersion, data: &FieldPair, grid: &PanelGrid, rule: &PanelRule, times: &[f64]) -> Evaluation {
    let nodes = grid.node_times(rule);
    let linear = par::map_slice(&nodes, |&t| disp.rotate_pos(data, t));
    let linear_out = times.iter().map(|&t| disp.rotate_pos(data, t)).collect();
    Evaluation { grid: grid.clone(), linear, linear_out }
}

fn check_times(times: &[f64]) -> Result<()> {
    if times.is_empty() || times.windows(2).any(|w| w[1] <= w[0]) || times[0] <= 0.0 {
        return Err(LabError::Domain(format!("evaluation times must be positive and increasing, got {times:?}")));
    }
    Ok(())
}

fn refine<T>(
    times: &[f64],
    spec: &QuadratureSpec,
    mut level: impl FnMut(&PanelGrid) -> Result<(Vec<SpectralField>, T)>,
) -> Result<(Vec<SpectralField>, T, usize)> {
    check_times(times)?;
    let mut prev: Option<Vec<SpectralField>> = None;
    let mut panels = 1;
    for _ in 0..=spec.max_doublings {
        let grid = PanelGrid::new(times, panels)?;
        let (vals, extra) = level(&grid)?;
        if let Some(p) = &prev {
            let ok = vals
                .iter()
                .zip(p)
                .all(|(a, b)| a.sub(b).wiener_norm() <= spec.tol * a.wiener_norm().max(1.0));
            if ok {
                return Ok((vals, extra, panels));
            }
        }
        prev = Some(vals);
        panels *= 2;
    }
    Err(LabError::Accuracy(format!(
        "tree quadrature did not reach tolerance {} with {} panels per interval",
        spec.tol,
        panels / 2
    )))
}

fn product3(a: &SpectralField, b: &SpectralField, c: &SpectralField) -> Result<SpectralField> {
    crate::field::pointwise(&[a, b, c], |v| v[0] * v[1] * v[2])
}

/// Evaluates one tree at the requested times (positive, increasing).
pub fn evaluate_term(tree: &TernaryTree, data: &FieldPair, times: &[f64], spec: &QuadratureSpec) -> Result<PicardTerm> {
    let disp = Dispersion::new(data.lattice(), 1.0)?;
    let rule = PanelRule::gauss(spec.nodes)?;
    let mut cache = WeightCache::new(Arc::new(disp.clone()), rule.clone());
    let (values, _, panels) = refine(times, spec, |grid| {
        let ev = linear_samples(&disp, data, grid, &rule, times);
        let (nodes_v, out_v) = eval_node(tree, 0, &ev, &mut cache)?;
        let _ = nodes_v;
        Ok((out_v, ()))
    })?;
    Ok(PicardTerm { tree: tree.clone(), times: times.to_vec(), values, panels })
}

fn eval_node(
    tree: &TernaryTree,
    i: usize,
    ev: &Evaluation,
    cache: &mut WeightCache,
) -> Result<(Vec<SpectralField>, Vec<SpectralField>)> {
    match tree.nodes[i].children {
        None => Ok((ev.linear.clone(), ev.linear_out.clone())),
        Some([a, b, c]) => {
            let (va, _) = eval_node(tree, a, ev, cache)?;
            let (vb, _) = eval_node(tree, b, ev, cache)?;
            let (vc, _) = eval_node(tree, c, ev, cache)?;
            let forcing = par::map_range(va.len(), |k| product3(&va[k], &vb[k], &vc[k]))
                .into_iter()
                .collect::<Result<Vec<_>>>()?;
            duhamel_on_grid(cache, &ev.grid, &forcing)
        }
    }
}

/// `Xi_0, .., Xi_J` at the requested times, from the recursion
/// `Xi_j = sum_{j1 + j2 + j3 = j - 1} I[Xi_j1, Xi_j2, Xi_j3]`, which is the
/// sum over ordered trees regrouped by the generations of the root's children.
pub fn xi_series(max_j: usize, data: &FieldPair, times: &[f64], spec: &QuadratureSpec) -> Result<Vec<Vec<SpectralField>>> {
    if max_j > MAX_GENERATION {
        return Err(LabError::Size(format!("Xi sums limited to j <= {MAX_GENERATION}, got {max_j}")));
    }
    let disp = Dispersion::new(data.lattice(), 1.0)?;
    let rule = PanelRule::gauss(spec.nodes)?;
    let mut cache = WeightCache::new(Arc::new(disp.clone()), rule.clone());
    let nt = times.len();
    let (flat, _, _) = refine(times, spec, |grid| {
        let ev = linear_samples(&disp, data, grid, &rule, times);
        let mut at_nodes = vec![ev.linear.clone()];
        let mut outs = ev.linear_out.clone();
        for j in 1..=max_j {
            let grid_nodes = at_nodes[0].len();
            let forcing = par::map_range(grid_nodes, |k| {
                let fields: Vec<&SpectralField> = (0..j).map(|g| &at_nodes[g][k]).collect();
                crate::field::pointwise(&fields, |v| {
                    let mut s = 0.0;
                    for j1 in 0..j {
                        for j2 in 0..(j - j1) {
                            s += v[j1] * v[j2] * v[j - 1 - j1 - j2];
                        }
                    }
                    s
                })
            })
            .into_iter()
            .collect::<Result<Vec<_>>>()?;
            let (n, o) = duhamel_on_grid(&mut cache, grid, &forcing)?;
            at_nodes.push(n);
            outs.extend(o);
        }
        Ok((outs, ()))
    })?;
    Ok(flat.chunks(nt).map(|c| c.to_vec()).collect())
}

/// `Xi_j(data)(t)`.
pub fn xi_sum(j: usize, data: &FieldPair, t: f64, spec: &QuadratureSpec) -> Result<SpectralField> {
    Ok(xi_series(j, data, &[t], spec)?.pop().unwrap().pop().unwrap())
}

/// Sum of all generation-`j` trees evaluated one by one; used to cross-check
/// the recursion.
pub fn xi_sum_by_trees(j: usize, data: &FieldPair, t: f64, spec: &QuadratureSpec) -> Result<SpectralField> {
    let mut acc = SpectralField::zeros(data.lattice());
    for tree in enumerate_trees(j)? {
        acc.axpy(1.0, &evaluate_term(&tree, data, &[t], spec)?.values[0]);
    }
    Ok(acc)
}

/// One row of the term-norm table.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TermNormRow {
    pub j: usize,
    pub t: f64,
    pub fl1: f64,
    /// `||Xi_j||_{FL^1} / (t^{2j} ||u0||^{2j+1})`.
    pub normalized: f64,
}

pub fn term_norm_table(xi: &[Vec<SpectralField>], times: &[f64], data_norm: f64) -> Vec<TermNormRow> {
    let mut rows = Vec::new();
    for (j, per_t) in xi.iter().enumerate() {
        for (k, f) in per_t.iter().enumerate() {
            let fl1 = f.wiener_norm();
            let t = times[k];
            rows.push(TermNormRow {
                j,
                t,
                fl1,
                normalized: fl1 / (t.powi(2 * j as i32) * data_norm.powi(2 * j as i32 + 1)),
            });
        }
    }
    rows
}

/// Smallest `C` with `normalized <= C^j` over the rows with `j >= 1`.
pub fn fitted_xi_constant(rows: &[TermNormRow]) -> f64 {
    rows.iter()
        .filter(|r| r.j >= 1 && r.normalized > 0.0)
        .map(|r| r.normalized.powf(1.0 / r.j as f64))
        .fold(0.0, f64::max)
}

pub fn term_norms_csv(rows: &[TermNormRow]) -> String {
    let mut s = String::from("j,t,fl1,normalized\n");
    for r in rows {
        s.push_str(&format!("{},{:.17e},{:.17e},{:.17e}\n", r.j, r.t, r.fl1, r.normalized));
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::field::Lattice;
    use approx::assert_relative_eq;

    #[test]
    fn counts() {
        let expect = [1, 1, 3, 12, 55, 273, 1428];
        for (j, &e) in expect.iter().enumerate() {
            assert_eq!(enumerate_trees(j).unwrap().len(), e);
            assert_eq!(fuss_catalan(j), e as u64);
        }
        assert!(matches!(enumerate_trees(7), Err(LabError::Size(_))));
    }

    #[test]
    fn structure() {
        for j in 0..=4 {
            for t in enumerate_trees(j).unwrap() {
                assert!(t.check());
                assert_eq!(t.generation(), j);
                assert_eq!(t.terminals(), 2 * j + 1);
            }
        }
        let two: Vec<String> = enumerate_trees(2).unwrap().iter().map(|t| t.notation()).collect();
        assert_eq!(two, vec!["(o o (o o o))", "(o (o o o) o)", "((o o o) o o)"]);
        let mut all: Vec<String> = enumerate_trees(4).unwrap().iter().map(|t| t.notation()).collect();
        all.sort();
        all.dedup();
        assert_eq!(all.len(), 55);
    }

    #[test]
    fn first_tree_constant_data() {
        let lat = Lattice::new(1, 2).unwrap();
        let c = 0.7;
        let data = FieldPair { pos: SpectralField::constant(&lat, c), vel: SpectralField::zeros(&lat) };
        let tree = &enumerate_trees(1).unwrap()[0];
        let times = [0.4, 1.0, 2.2];
        let term = evaluate_term(tree, &data, &times, &QuadratureSpec::default()).unwrap();
        for (k, &t) in times.iter().enumerate() {
            let exact = -c.powi(3) * (3.0 * t * t.sin() / 8.0 - ((3.0 * t).cos() - t.cos()) / 32.0);
            assert!((term.values[k].coeff([0, 0]).re - exact).abs() < 1e-8);
        }
    }

    #[test]
    fn recursion_matches_tree_sum() {
        let lat = Lattice::new(2, 3).unwrap();
        let data = FieldPair {
            pos: SpectralField::cosine(&lat, [1, 0], 0.3).unwrap(),
            vel: SpectralField::cosine(&lat, [0, 1], 0.2).unwrap(),
        };
        let spec = QuadratureSpec { tol: 1e-12, ..Default::default() };
        for j in 0..=3 {
            let a = xi_sum(j, &data, 0.6, &spec).unwrap();
            let b = xi_sum_by_trees(j, &data, 0.6, &spec).unwrap();
            assert!(a.sub(&b).wiener_norm() < 1e-11 * a.wiener_norm().max(1e-30), "j = {j}");
        }
    }

    #[test]
    fn zeroth_generation_is_free_flow() {
        let lat = Lattice::new(2, 2).unwrap();
        let data = FieldPair {
            pos: SpectralField::cosine(&lat, [1, 1], 0.3).unwrap(),
            vel: SpectralField::cosine(&lat, [0, 1], 0.2).unwrap(),
        };
        let x = xi_sum(0, &data, 0.9, &QuadratureSpec::default()).unwrap();
        assert!(x.sub(&data.propagate(0.9).pos).wiener_norm() < 1e-14);
    }

    #[test]
    fn multilinearity() {
        let lat = Lattice::new(1, 4).unwrap();
        let data = FieldPair {
            pos: SpectralField::cosine(&lat, [1, 0], 0.3).unwrap(),
            vel: SpectralField::cosine(&lat, [2, 0], 0.2).unwrap(),
        };
        let spec = QuadratureSpec { tol: 1e-13, ..Default::default() };
        let lambda: f64 = 1.7;
        for tree in enumerate_trees(2).unwrap() {
            let a = evaluate_term(&tree, &data, &[0.5], &spec).unwrap().values[0].scaled(lambda.powi(5));
            let b = evaluate_term(&tree, &data.scaled(lambda), &[0.5], &spec).unwrap().values.remove(0);
            assert!(a.sub(&b).wiener_norm() <= 1e-10 * b.wiener_norm());
        }
    }

    #[test]
    fn fitted_count() {
        assert_relative_eq!(fitted_count_constant(5), 3.0, max_relative = 0.03);
        assert!(fitted_count_constant(6) <= 27.0 / 4.0);
    }
}
