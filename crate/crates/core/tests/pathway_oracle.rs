mod support;

use std::collections::BTreeSet;

use support::*;
use upho_core::explain::{pathway_score, trace_pathways, validate_pathway, ExplainError};
use upho_core::graphstore::infer;

#[test]
fn dfs_finds_exactly_the_simple_paths() {
    let whitelist: BTreeSet<String> = ["r", "s"].map(String::from).into();
    let mut checked = 0;
    for seed in 0..300 {
        let mut g = load_case(&random_reasoner_case(seed));
        infer(&mut g).unwrap();
        let ids: Vec<String> = g.nodes().iter().map(|n| n.id.clone()).collect();
        for max_len in [1, 3, 6] {
            for s in &ids {
                for t in &ids {
                    let got = trace_pathways(&g, s, t, &whitelist, max_len).unwrap();
                    let want = paths_oracle(&g, s, t, &whitelist, max_len);
                    let got_set: BTreeSet<Vec<String>> = got.iter().map(|p| p.edges.clone()).collect();
                    assert_eq!(got_set.len(), got.len(), "duplicate pathway");
                    assert_eq!(got_set, want, "seed {seed} {s} -> {t} within {max_len}");
                    for p in &got {
                        validate_pathway(&g, p, &whitelist).unwrap();
                        let edges: Vec<_> = p.edges.iter().map(|e| g.edge(e).unwrap()).collect();
                        assert_eq!(p.score, pathway_score(&edges));
                    }
                    assert!(got.windows(2).all(|w| w[0].score >= w[1].score));
                    checked += got.len();
                }
            }
        }
    }
    assert!(checked > 1000, "too few pathways exercised: {checked}");
}

#[test]
fn bad_arguments() {
    let g = load_case(&random_reasoner_case(1));
    let wl = BTreeSet::new();
    let id = g.nodes()[0].id.clone();
    assert!(matches!(trace_pathways(&g, "nowhere", &id, &wl, 3), Err(ExplainError::UnknownNode(_))));
    assert!(matches!(trace_pathways(&g, &id, &id, &wl, 0), Err(ExplainError::InvalidMaxLen)));
    assert!(trace_pathways(&g, &id, &id, &wl, 3).unwrap().is_empty());
}
