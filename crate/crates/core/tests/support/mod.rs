//! Independent reference implementations used as test oracles, plus
//! random case generators. Shared with the gateway acceptance suite.
#![allow(dead_code)]

use std::collections::{BTreeMap, BTreeSet};
use std::sync::Arc;

use rand::{RngExt, SeedableRng};
use rand_chacha::ChaCha8Rng;
use upho_core::graphstore::{parse_facts, KnowledgeGraph, NodeKind};
use upho_core::ontology::{parse_ontology, Arg, GuardRhs, Ontology, Term};

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Rank of each value: count of smaller values plus the midpoint of the
/// block of equal values. Quadratic, deliberately naive.
pub fn ranks_oracle(v: &[f64]) -> Vec<f64> {
    v.iter()
        .map(|&a| {
            let less = v.iter().filter(|&&b| b < a).count() as f64;
            let equal = v.iter().filter(|&&b| b == a).count() as f64;
            less + (equal + 1.0) / 2.0
        })
        .collect()
}

pub fn pearson_oracle(x: &[f64], y: &[f64]) -> f64 {
    let n = x.len() as f64;
    let (mx, my) = (x.iter().sum::<f64>() / n, y.iter().sum::<f64>() / n);
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let sxx: f64 = x.iter().map(|a| (a - mx).powi(2)).sum();
    let syy: f64 = y.iter().map(|b| (b - my).powi(2)).sum();
    sxy / (sxx * syy).sqrt()
}

pub fn spearman_oracle(x: &[f64], y: &[f64]) -> f64 {
    pearson_oracle(&ranks_oracle(x), &ranks_oracle(y))
}

/// Inverse of a square matrix by Gauss-Jordan elimination with partial
/// pivoting.
pub fn invert(m: &[Vec<f64>]) -> Option<Vec<Vec<f64>>> {
    let n = m.len();
    let mut a: Vec<Vec<f64>> = m
        .iter()
        .enumerate()
        .map(|(i, row)| {
            let mut r = row.clone();
            r.extend((0..n).map(|j| if i == j { 1.0 } else { 0.0 }));
            r
        })
        .collect();
    for col in 0..n {
        let piv = (col..n).max_by(|&i, &j| a[i][col].abs().total_cmp(&a[j][col].abs()))?;
        if a[piv][col].abs() < 1e-12 {
            return None;
        }
        a.swap(col, piv);
        let p = a[col][col];
        for v in a[col].iter_mut() {
            *v /= p;
        }
        for r in 0..n {
            if r != col {
                let f = a[r][col];
                if f != 0.0 {
                    for c in 0..2 * n {
                        a[r][c] -= f * a[col][c];
                    }
                }
            }
        }
    }
    Some(a.into_iter().map(|r| r[n..].to_vec()).collect())
}

/// VIF as the diagonal of the inverse correlation matrix.
pub fn vif_oracle(cols: &[Vec<f64>]) -> Option<Vec<f64>> {
    let p = cols.len();
    let corr: Vec<Vec<f64>> = (0..p).map(|i| (0..p).map(|j| pearson_oracle(&cols[i], &cols[j])).collect()).collect();
    let inv = invert(&corr)?;
    Some((0..p).map(|j| inv[j][j]).collect())
}

pub fn svr_objective_oracle(x: &[Vec<f64>], y: &[f64], w: &[f64], b: f64, c: f64, eps: f64) -> f64 {
    let reg: f64 = 0.5 * w.iter().map(|v| v * v).sum::<f64>();
    let loss: f64 = x
        .iter()
        .zip(y)
        .map(|(xi, yi)| {
            let f: f64 = xi.iter().zip(w).map(|(a, b)| a * b).sum::<f64>() + b;
            ((yi - f).abs() - eps).max(0.0)
        })
        .sum();
    reg + c * loss
}

/// Best objective for fixed w: the loss in b is piecewise linear, so some
/// breakpoint `rᵢ ± ε` attains the minimum.
fn svr_profile(x: &[Vec<f64>], y: &[f64], w: &[f64], c: f64, eps: f64) -> f64 {
    let mut best = f64::INFINITY;
    for (xi, yi) in x.iter().zip(y) {
        let r = yi - xi.iter().zip(w).map(|(a, b)| a * b).sum::<f64>();
        for b in [r - eps, r + eps] {
            best = best.min(svr_objective_oracle(x, y, w, b, c, eps));
        }
    }
    best
}

/// Dense-grid minimisation of the SVR primal over w (at most two
/// features), zooming in on the best grid cell.
pub fn svr_grid_oracle(x: &[Vec<f64>], y: &[f64], c: f64, eps: f64) -> f64 {
    let d = x[0].len();
    let g0 = svr_profile(x, y, &vec![0.0; d], c, eps);
    // 0.5‖w*‖² ≤ objective(w*) ≤ objective(0).
    let radius = (2.0 * g0).sqrt().max(1e-9) * 1.01;
    let mut centre = vec![0.0; d];
    let mut half = radius;
    let mut best = g0;
    let steps = 24usize;
    for _ in 0..80 {
        let h = 2.0 * half / steps as f64;
        let mut round_best = (f64::INFINITY, centre.clone());
        let mut idx = vec![0usize; d];
        loop {
            let w: Vec<f64> = (0..d).map(|k| centre[k] - half + h * idx[k] as f64).collect();
            let v = svr_profile(x, y, &w, c, eps);
            if v < round_best.0 {
                round_best = (v, w);
            }
            let mut k = 0;
            while k < d {
                idx[k] += 1;
                if idx[k] <= steps {
                    break;
                }
                idx[k] = 0;
                k += 1;
            }
            if k == d {
                break;
            }
        }
        best = best.min(round_best.0);
        centre = round_best.1;
        half = 3.0 * h;
        if half < 1e-13 {
            break;
        }
    }
    best
}

/// A random reasoning case: ontology text and facts text.
pub struct ReasonerCase {
    pub ontology: String,
    pub facts: String,
}

const CONCEPTS: [&str; 5] = ["A", "B", "C", "D", "E"];
const RELATIONS: [&str; 3] = ["r", "s", "t"];
const VARS: [&str; 3] = ["x", "y", "z"];

/// At most 8 nodes, 3 rules (plus ground axioms) and 2 guards per rule.
pub fn random_reasoner_case(seed: u64) -> ReasonerCase {
    let mut g = rng(seed);
    let mut ont = String::new();
    for c in CONCEPTS {
        ont.push_str(&format!("concept {c} .\n"));
    }
    for i in 1..CONCEPTS.len() {
        if g.random_bool(0.5) {
            let j = g.random_range(0..i);
            ont.push_str(&format!("{} isA {} .\n", CONCEPTS[i], CONCEPTS[j]));
        }
    }
    for r in RELATIONS {
        ont.push_str(&format!("relation {r} domain A range A .\n"));
    }
    let pick = |g: &mut ChaCha8Rng, xs: &[&'static str]| xs[g.random_range(0..xs.len())];
    for k in 0..g.random_range(0..=2) {
        let (a, b) = (pick(&mut g, &CONCEPTS), pick(&mut g, &CONCEPTS));
        ont.push_str(&format!("axiom G{k}: {a} {} {b} .\n", pick(&mut g, &RELATIONS)));
    }
    for k in 0..g.random_range(1..=3) {
        let n_atoms = g.random_range(1..=3);
        let mut body = Vec::new();
        let mut bound = Vec::new();
        for _ in 0..n_atoms {
            let mut arg = |g: &mut ChaCha8Rng| {
                if g.random_bool(0.85) {
                    let v = pick(g, &VARS);
                    bound.push(v);
                    format!("?{v}")
                } else {
                    pick(g, &CONCEPTS).to_string()
                }
            };
            let s = arg(&mut g);
            let o = arg(&mut g);
            body.push(format!("{s} {} {o}", pick(&mut g, &RELATIONS)));
        }
        if bound.is_empty() {
            bound.push("x");
            body.push(format!("?x {} ?x", pick(&mut g, &RELATIONS)));
        }
        for _ in 0..g.random_range(0..=2) {
            let v = bound[g.random_range(0..bound.len())];
            let op = pick(&mut g, &[">=", ">", "<=", "<"]);
            let rhs = if g.random_bool(0.5) {
                format!("{}", g.random_range(0..10))
            } else {
                format!("threshold(?{})", bound[g.random_range(0..bound.len())])
            };
            body.push(format!("value(?{v}) {op} {rhs}"));
        }
        let head_arg = |g: &mut ChaCha8Rng| {
            if g.random_bool(0.85) {
                format!("?{}", bound[g.random_range(0..bound.len())])
            } else {
                pick(g, &CONCEPTS).to_string()
            }
        };
        let hs = head_arg(&mut g);
        let ho = head_arg(&mut g);
        ont.push_str(&format!("rule Q{k}: {hs} {} {ho} :- {} .\n", pick(&mut g, &RELATIONS), body.join(", ")));
    }

    let mut facts = String::new();
    let n_nodes = g.random_range(2..=8);
    let mut ids = Vec::new();
    for i in 0..n_nodes {
        let c = pick(&mut g, &CONCEPTS);
        match g.random_range(0..3) {
            0 if !ids.contains(&format!("local:{c}")) => {
                facts.push_str(&format!("node local:{c} concept local:{c} \"{c}\"\n"));
                ids.push(format!("local:{c}"));
            }
            1 => {
                facts.push_str(&format!("node n{i} metric local:{c} {} percent \"n{i}\"\n", g.random_range(0..10)));
                ids.push(format!("n{i}"));
            }
            _ => {
                facts.push_str(&format!("node n{i} instance local:{c} \"n{i}\"\n"));
                ids.push(format!("n{i}"));
            }
        }
    }
    for c in CONCEPTS {
        if g.random_bool(0.4) {
            facts.push_str(&format!("threshold local:{c} {}\n", g.random_range(0..10)));
        }
    }
    let mut seen = BTreeSet::new();
    let mut next = 1;
    for _ in 0..g.random_range(0..=12) {
        let s = ids[g.random_range(0..ids.len())].clone();
        let o = ids[g.random_range(0..ids.len())].clone();
        let r = pick(&mut g, &RELATIONS);
        if seen.insert((s.clone(), r, o.clone())) {
            facts.push_str(&format!("fact F{next}: {s} {r} {o} .\n"));
            next += 1;
        }
    }
    ReasonerCase { ontology: ont, facts }
}

pub fn load_case(case: &ReasonerCase) -> KnowledgeGraph {
    let ont = parse_ontology(&case.ontology).unwrap_or_else(|e| panic!("{e}\n{}", case.ontology));
    parse_facts(Arc::new(ont), &case.facts).unwrap_or_else(|e| panic!("{e}\n{}", case.facts))
}

/// Reflexive-transitive isA closure by Floyd-Warshall over declared pairs.
pub fn subsumption_oracle(ont: &Ontology) -> BTreeSet<(Term, Term)> {
    let terms: Vec<Term> = ont.concepts().iter().cloned().collect();
    let n = terms.len();
    let pos: BTreeMap<&Term, usize> = terms.iter().enumerate().map(|(i, t)| (t, i)).collect();
    let mut reach = vec![vec![false; n]; n];
    for i in 0..n {
        reach[i][i] = true;
    }
    for (c, p) in ont.isa_edges() {
        reach[pos[c]][pos[p]] = true;
    }
    for k in 0..n {
        for i in 0..n {
            for j in 0..n {
                if reach[i][k] && reach[k][j] {
                    reach[i][j] = true;
                }
            }
        }
    }
    let mut out = BTreeSet::new();
    for i in 0..n {
        for j in 0..n {
            if reach[i][j] {
                out.insert((terms[i].clone(), terms[j].clone()));
            }
        }
    }
    out
}

pub type Triple = (String, String, String);

/// Fixpoint by exhaustive grounding: every rule is tried under every
/// assignment of nodes to its variables and constant positions.
pub fn reasoner_oracle(graph: &KnowledgeGraph) -> BTreeSet<Triple> {
    let ont = graph.ontology();
    let sub = subsumption_oracle(ont);
    let is_sub = |a: &Term, b: &Term| a == b || sub.contains(&(a.clone(), b.clone()));
    let nodes = graph.nodes();
    let n = nodes.len();
    let mut facts: BTreeSet<(usize, String, usize)> = graph
        .edges()
        .iter()
        .map(|e| {
            let s = nodes.iter().position(|x| x.id == e.subject).unwrap();
            let o = nodes.iter().position(|x| x.id == e.object).unwrap();
            (s, e.relation.clone(), o)
        })
        .collect();
    loop {
        let holds = |facts: &BTreeSet<(usize, String, usize)>, a: usize, rel: &str, b: usize| {
            facts.contains(&(a, rel.to_string(), b))
                || (nodes[a].kind != NodeKind::Concept
                    && nodes[b].kind == NodeKind::Concept
                    && (0..n).any(|c| {
                        nodes[c].kind == NodeKind::Concept
                            && is_sub(&nodes[a].term, &nodes[c].term)
                            && facts.contains(&(c, rel.to_string(), b))
                    }))
        };
        let mut derived = Vec::new();
        for rule in ont.rules() {
            // Slots: one per variable, one per constant occurrence in the body.
            let vars: Vec<&str> = rule.body.iter().flat_map(|a| a.vars()).collect::<BTreeSet<_>>().into_iter().collect();
            let mut consts: Vec<&Term> = Vec::new();
            for a in &rule.body {
                for arg in [&a.subject, &a.object] {
                    if let Arg::Const(t) = arg {
                        consts.push(t);
                    }
                }
            }
            let slots = vars.len() + consts.len();
            let total = n.pow(slots as u32);
            for code in 0..total {
                let mut assign = Vec::with_capacity(slots);
                let mut c = code;
                for _ in 0..slots {
                    assign.push(c % n);
                    c /= n;
                }
                if consts.iter().enumerate().any(|(k, t)| !is_sub(&nodes[assign[vars.len() + k]].term, t)) {
                    continue;
                }
                let var = |v: &str| assign[vars.iter().position(|x| *x == v).unwrap()];
                let mut ci = 0;
                let mut ok = true;
                for a in &rule.body {
                    let mut resolve = |arg: &Arg| match arg {
                        Arg::Var(v) => var(v),
                        Arg::Const(_) => {
                            ci += 1;
                            assign[vars.len() + ci - 1]
                        }
                    };
                    let s = resolve(&a.subject);
                    let o = resolve(&a.object);
                    if !holds(&facts, s, &a.relation, o) {
                        ok = false;
                        break;
                    }
                }
                if !ok {
                    continue;
                }
                let guards_ok = rule.guards.iter().all(|g| {
                    let lhs = nodes[var(&g.var)].value;
                    let rhs = match &g.rhs {
                        GuardRhs::Number(x) => Some(*x),
                        GuardRhs::Threshold(v) => graph.thresholds().get(&nodes[var(v)].term.key()).copied(),
                    };
                    matches!((lhs, rhs), (Some(l), Some(r)) if g.op.holds(l, r))
                });
                if !guards_ok {
                    continue;
                }
                let head = |arg: &Arg| match arg {
                    Arg::Var(v) => Some(var(v)),
                    Arg::Const(t) => nodes.iter().position(|x| x.id == t.key()),
                };
                if let (Some(s), Some(o)) = (head(&rule.head.subject), head(&rule.head.object)) {
                    derived.push((s, rule.head.relation.clone(), o));
                }
            }
        }
        let before = facts.len();
        facts.extend(derived);
        if facts.len() == before {
            break;
        }
    }
    facts.into_iter().map(|(s, r, o)| (nodes[s].id.clone(), r, nodes[o].id.clone())).collect()
}

pub fn graph_triples(graph: &KnowledgeGraph) -> BTreeSet<Triple> {
    graph.edges().iter().map(|e| (e.subject.clone(), e.relation.clone(), e.object.clone())).collect()
}

/// All simple paths by breadth-first expansion of edge sequences.
pub fn paths_oracle(graph: &KnowledgeGraph, source: &str, target: &str, whitelist: &BTreeSet<String>, max_len: usize) -> BTreeSet<Vec<String>> {
    let mut out = BTreeSet::new();
    if source == target {
        return out;
    }
    let mut frontier: Vec<(Vec<String>, Vec<String>)> = vec![(vec![], vec![source.to_string()])];
    for _ in 0..max_len {
        let mut next = Vec::new();
        for (edges, nodes) in &frontier {
            let last = nodes.last().unwrap();
            if last == target {
                continue;
            }
            for e in graph.edges() {
                if &e.subject == last && whitelist.contains(&e.relation) && !nodes.contains(&e.object) {
                    let mut es = edges.clone();
                    es.push(e.id.clone());
                    let mut ns = nodes.clone();
                    ns.push(e.object.clone());
                    if e.object == target {
                        out.insert(es.clone());
                    }
                    next.push((es, ns));
                }
            }
        }
        frontier = next;
    }
    out
}

/// Tract-level table with synthetic codes `47157xxxxxx`.
pub fn table_from(cols: &[(&str, Vec<f64>)]) -> upho_core::tabledata::FeatureTable {
    use upho_core::tabledata::{ColumnBinding, FeatureTable, GeoLevel, GeoUnit, Units};
    let n = cols[0].1.len();
    let rows = (0..n)
        .map(|i| (GeoUnit::tract(&format!("47157{:06}", (i + 1) * 100)).unwrap(), cols.iter().map(|c| c.1[i]).collect()))
        .collect();
    let bindings = cols
        .iter()
        .map(|(name, _)| ColumnBinding {
            column_name: name.to_string(),
            term: format!("HIO:{name}"),
            units: Units::Percent,
            description: String::new(),
        })
        .collect();
    FeatureTable::new(GeoLevel::CensusTract, rows, bindings, vec!["test".into(); cols.len()]).unwrap()
}

/// Column of `n` draws; `ties` draws from a handful of values.
pub fn random_vector(g: &mut ChaCha8Rng, n: usize, ties: bool) -> Vec<f64> {
    (0..n)
        .map(|_| if ties { g.random_range(0..5) as f64 } else { g.random_range(-1000.0..1000.0) })
        .collect()
}

/// Small design whose columns share a latent factor, so VIFs vary.
pub fn random_design(g: &mut ChaCha8Rng) -> Vec<Vec<f64>> {
    let n = g.random_range(12..40);
    let p = g.random_range(2..6);
    let latent: Vec<f64> = (0..n).map(|_| g.random_range(-1.0..1.0)).collect();
    (0..p)
        .map(|_| {
            let load = g.random_range(0.0..3.0);
            latent.iter().map(|l| load * l + g.random_range(-1.0..1.0)).collect()
        })
        .collect()
}
