use std::collections::{BTreeMap, BTreeSet};

use proptest::prelude::*;
use qdh_core::gemd::{material_history, validate_fragment, validate_graph, ViolationCode};
use qdh_core::graph_store::{match_graph, Hop, NodePredicate};
use qdh_core::{EdgeLabel, GemdEdge, GemdGraph, GemdNode, NodeKind, PathPattern};

const FLOW_KINDS: [NodeKind; 3] = [NodeKind::MaterialRun, NodeKind::IngredientRun, NodeKind::ProcessRun];
const NAMES: [&str; 4] = ["Heating A", "Quenching B", "Grinding", "Heating C"];

/// Nodes `n0..nk` of flow kinds (each with a spec), flows_to edges only from
/// lower to higher index, so the flow subgraph is a DAG.
fn dag(kinds: &[usize], names: &[usize], edges: &[(usize, usize)]) -> GemdGraph {
    let mut g = GemdGraph::new("s");
    g.insert_node(GemdNode::new("s", NodeKind::SampleRoot, "root", "s"));
    for (i, (k, n)) in kinds.iter().zip(names).enumerate() {
        let kind = FLOW_KINDS[k % 3];
        let id = format!("n{i:02}");
        g.insert_node(GemdNode::new(id.clone(), kind, NAMES[n % 4], "s"));
        g.insert_node(GemdNode::new(format!("{id}-spec"), kind.spec_counterpart().unwrap(), "spec", "s"));
        g.insert_edge(GemdEdge::new(id.clone(), format!("{id}-spec"), EdgeLabel::HasSpec));
    }
    let n = kinds.len();
    for &(a, b) in edges {
        let (a, b) = (a % n, b % n);
        if a < b {
            g.insert_edge(GemdEdge::new(format!("n{a:02}"), format!("n{b:02}"), EdgeLabel::FlowsTo));
        }
    }
    if n > 0 {
        g.insert_edge(GemdEdge::new(format!("n{:02}", n - 1), "s", EdgeLabel::FlowsTo));
    }
    g
}

fn arb_dag() -> impl Strategy<Value = GemdGraph> {
    (2usize..25).prop_flat_map(|n| {
        (
            prop::collection::vec(0usize..3, n),
            prop::collection::vec(0usize..4, n),
            prop::collection::vec((0usize..n, 0usize..n), 0..n * 2),
        )
            .prop_map(|(k, names, e)| dag(&k, &names, &e))
    })
}

/// Successors along flows_to, by adjacency list.
fn succ(g: &GemdGraph) -> BTreeMap<String, Vec<String>> {
    let mut out: BTreeMap<String, Vec<String>> = BTreeMap::new();
    for e in g.edges().iter().filter(|e| e.label == EdgeLabel::FlowsTo) {
        out.entry(e.src.clone()).or_default().push(e.dst.clone());
    }
    out
}

fn reach_set(succ: &BTreeMap<String, Vec<String>>, from: &str) -> BTreeSet<String> {
    let mut seen = BTreeSet::new();
    let mut stack: Vec<String> = succ.get(from).cloned().unwrap_or_default();
    while let Some(n) = stack.pop() {
        if seen.insert(n.clone()) {
            stack.extend(succ.get(&n).cloned().unwrap_or_default());
        }
    }
    seen
}

fn rebuild(g: &GemdGraph, node_order: &[usize], edge_order: &[usize]) -> GemdGraph {
    let nodes: Vec<&GemdNode> = g.nodes().collect();
    let mut out = GemdGraph::new(g.sample_id.clone());
    for &i in node_order {
        out.insert_node(nodes[i % nodes.len()].clone());
    }
    for n in &nodes {
        out.insert_node((*n).clone());
    }
    for &i in edge_order {
        if !g.edges().is_empty() {
            out.insert_edge(g.edges()[i % g.edges().len()].clone());
        }
    }
    for e in g.edges() {
        out.insert_edge(e.clone());
    }
    out
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    #[test]
    fn random_dags_validate(g in arb_dag()) {
        let report = validate_graph(&g);
        prop_assert!(report.ok, "{:?}", report.violations);
    }

    #[test]
    fn validation_ignores_input_order(
        g in arb_dag(),
        node_order in prop::collection::vec(0usize..100, 0..40),
        edge_order in prop::collection::vec(0usize..100, 0..40),
        drop_spec in any::<bool>(),
    ) {
        let mut g = g;
        if drop_spec {
            // Break something so the violation list is non-trivial.
            let mut broken = GemdGraph::new(g.sample_id.clone());
            for n in g.nodes() { broken.insert_node(n.clone()); }
            for e in g.edges().iter().filter(|e| !(e.label == EdgeLabel::HasSpec && e.src == "n00")) {
                broken.insert_edge(e.clone());
            }
            g = broken;
        }
        let shuffled = rebuild(&g, &node_order, &edge_order);
        prop_assert_eq!(validate_graph(&g), validate_graph(&shuffled));
    }

    #[test]
    fn back_edge_flags_exactly_the_cycle(g in arb_dag(), pick in any::<prop::sample::Index>()) {
        let succ0 = succ(&g);
        // Pick a reachable pair (a ->* b) and add b -> a.
        let pairs: Vec<(String, String)> = succ0
            .keys()
            .filter(|a| a.starts_with('n'))
            .flat_map(|a| reach_set(&succ0, a).into_iter().filter(|b| b.starts_with('n')).map(move |b| (a.clone(), b)))
            .collect();
        prop_assume!(!pairs.is_empty());
        let (a, b) = pick.get(&pairs).clone();
        let mut cyclic = g.clone();
        cyclic.insert_edge(GemdEdge::new(b.clone(), a.clone(), EdgeLabel::FlowsTo));

        let succ1 = succ(&cyclic);
        let expected: BTreeSet<String> = cyclic
            .edges()
            .iter()
            .filter(|e| e.label == EdgeLabel::FlowsTo)
            .filter(|e| reach_set(&succ1, &e.dst).contains(&e.src))
            .map(|e| e.id())
            .collect();
        let flagged: BTreeSet<String> = validate_graph(&cyclic)
            .violations
            .into_iter()
            .filter(|v| v.code == ViolationCode::FlowCycle)
            .map(|v| v.target)
            .collect();
        prop_assert!(expected.contains(&GemdEdge::new(b, a, EdgeLabel::FlowsTo).id()));
        prop_assert_eq!(flagged, expected);
    }

    #[test]
    fn history_is_the_upstream_closure(g in arb_dag(), pick in any::<prop::sample::Index>()) {
        let flow: Vec<String> = g.nodes().filter(|n| n.kind.is_flow()).map(|n| n.node_id.clone()).collect();
        let target = pick.get(&flow).clone();
        let h = material_history(&g, &target).unwrap();

        let succ0 = succ(&g);
        let mut upstream: BTreeSet<String> = flow.iter().filter(|n| reach_set(&succ0, n).contains(&target)).cloned().collect();
        upstream.insert(target.clone());
        let mut expected = upstream.clone();
        for e in g.edges() {
            if upstream.contains(&e.src) && matches!(e.label, EdgeLabel::HasSpec | EdgeLabel::Uses) {
                expected.insert(e.dst.clone());
            }
        }
        let got: BTreeSet<String> = h.nodes().map(|n| n.node_id.clone()).collect();
        prop_assert_eq!(got, expected);
        prop_assert!(validate_fragment(&h).ok, "{:?}", validate_fragment(&h).violations);
        for e in g.edges() {
            prop_assert_eq!(
                h.edges().contains(e),
                h.contains(&e.src) && h.contains(&e.dst)
            );
        }
    }

    #[test]
    fn match_path_agrees_with_brute_force(
        g in arb_dag(),
        spec in prop::collection::vec((0usize..5, 0usize..5, any::<bool>()), 1..4),
        reverse in any::<bool>(),
    ) {
        let mut pattern: Option<PathPattern> = None;
        for (i, (k, name, reach)) in spec.iter().enumerate() {
            let kind = [None, Some(NodeKind::MaterialRun), Some(NodeKind::IngredientRun), Some(NodeKind::ProcessRun), Some(NodeKind::SampleRoot)][*k];
            let mut pred = NodePredicate::new(format!("v{i}"), kind);
            if *name < 4 {
                pred = pred.filter(qdh_core::graph_store::AttrFilter::regex("name", format!("{}.*", &NAMES[*name][..3])));
            }
            let hop = if *reach { Hop::Reachable } else { Hop::Direct };
            pattern = Some(match pattern {
                None => PathPattern::single(pred),
                Some(p) => p.then(hop, pred),
            });
        }
        let mut pattern = pattern.unwrap();
        if reverse {
            pattern = pattern.reversed();
        }

        let mut got: Vec<Vec<String>> = match_graph(&g, &pattern)
            .unwrap()
            .into_iter()
            .map(|b| b.entries.into_iter().map(|(_, id)| id).collect())
            .collect();
        got.sort();

        // Enumerate every tuple of nodes and keep the ones satisfying all
        // predicates and hops.
        let succ0 = succ(&g);
        let nodes: Vec<&GemdNode> = g.nodes().collect();
        let accepts = |n: &GemdNode, i: usize| {
            let (k, name, _) = spec[i];
            let kind_ok = match k {
                0 => true,
                1 => n.kind == NodeKind::MaterialRun,
                2 => n.kind == NodeKind::IngredientRun,
                3 => n.kind == NodeKind::ProcessRun,
                _ => n.kind == NodeKind::SampleRoot,
            };
            kind_ok && (name >= 4 || n.name.starts_with(&NAMES[name][..3]))
        };
        let linked = |a: &str, b: &str, reach: bool| {
            let (from, to) = if reverse { (b, a) } else { (a, b) };
            if reach {
                reach_set(&succ0, from).contains(to)
            } else {
                succ0.get(from).is_some_and(|s| s.iter().any(|x| x == to))
            }
        };
        let mut want: Vec<Vec<String>> = Vec::new();
        let mut stack: Vec<Vec<usize>> = vec![vec![]];
        while let Some(t) = stack.pop() {
            if t.len() == spec.len() {
                want.push(t.iter().map(|&i| nodes[i].node_id.clone()).collect());
                continue;
            }
            for (i, n) in nodes.iter().enumerate() {
                let pos = t.len();
                if !accepts(n, pos) {
                    continue;
                }
                if pos > 0 && !linked(&nodes[t[pos - 1]].node_id, &n.node_id, spec[pos].2) {
                    continue;
                }
                let mut next = t.clone();
                next.push(i);
                stack.push(next);
            }
        }
        want.sort();
        prop_assert_eq!(got, want);
    }

    #[test]
    fn reachability_is_transitive(g in arb_dag()) {
        let p = PathPattern::single(NodePredicate::new("a", None)).then(Hop::Reachable, NodePredicate::new("b", None));
        let pairs: BTreeSet<(String, String)> = match_graph(&g, &p)
            .unwrap()
            .into_iter()
            .map(|b| (b.get("a").unwrap().to_string(), b.get("b").unwrap().to_string()))
            .collect();
        for (a, b) in &pairs {
            for (b2, c) in &pairs {
                if b == b2 {
                    prop_assert!(pairs.contains(&(a.clone(), c.clone())), "{a}->{b}->{c}");
                }
            }
        }
        let direct = PathPattern::single(NodePredicate::new("a", None)).then(Hop::Direct, NodePredicate::new("b", None));
        for b in match_graph(&g, &direct).unwrap() {
            prop_assert!(pairs.contains(&(b.get("a").unwrap().to_string(), b.get("b").unwrap().to_string())));
        }
    }
}

#[test]
fn eus_fixture_passes_a_hand_written_checker() {
    let g = qdh_core::fixtures::eus_graph();
    // Exactly one root, carrying the sample id.
    let roots: Vec<_> = g.nodes().filter(|n| n.kind == NodeKind::SampleRoot).collect();
    assert_eq!(roots.len(), 1);
    assert_eq!(roots[0].node_id, g.sample_id);
    for n in g.nodes() {
        assert_eq!(n.sample_id, g.sample_id);
        if n.file_ref.is_some() {
            assert!(matches!(n.kind, NodeKind::MeasurementRun | NodeKind::Dataset | NodeKind::Report));
        }
        if n.kind.as_str().ends_with("_run") && n.kind != NodeKind::InstrumentRun {
            let specs: Vec<_> = g.edges().iter().filter(|e| e.src == n.node_id && e.label == EdgeLabel::HasSpec).collect();
            assert_eq!(specs.len(), 1, "{}", n.node_id);
            let spec = g.node(&specs[0].dst).unwrap();
            assert_eq!(spec.kind.as_str(), n.kind.as_str().replace("_run", "_spec"));
        }
    }
    for e in g.edges() {
        assert!(g.contains(&e.src) && g.contains(&e.dst));
        let (s, d) = (g.node(&e.src).unwrap().kind.as_str(), g.node(&e.dst).unwrap().kind.as_str());
        match e.label {
            EdgeLabel::FlowsTo => {
                for k in [s, d] {
                    assert!(["material_run", "ingredient_run", "process_run", "sample_root"].contains(&k));
                }
            }
            EdgeLabel::Uses => assert_eq!((s, d), ("measurement_run", "instrument_run")),
            EdgeLabel::RoleIn => {
                assert!(["person", "organization"].contains(&s));
                assert!(["project", "process_run"].contains(&d));
                assert!(e.attributes.contains_key("role"));
            }
            _ => {}
        }
    }
    // Acyclic: repeatedly strip flow sources.
    let mut remaining: BTreeSet<String> = g.nodes().map(|n| n.node_id.clone()).collect();
    loop {
        let sources: Vec<String> = remaining
            .iter()
            .filter(|n| !g.edges().iter().any(|e| e.label == EdgeLabel::FlowsTo && &e.dst == *n && remaining.contains(&e.src)))
            .cloned()
            .collect();
        if sources.is_empty() {
            break;
        }
        for s in sources {
            remaining.remove(&s);
        }
    }
    assert!(remaining.is_empty(), "flow cycle among {remaining:?}");
    assert!(validate_graph(&g).ok);
}

#[test]
fn eus_history_holds_the_six_heating_runs() {
    let g = qdh_core::fixtures::eus_graph();
    let h = material_history(&g, qdh_core::fixtures::EUS_SAMPLE_ID).unwrap();
    let mut heating: Vec<&str> = h
        .nodes()
        .filter(|n| n.kind == NodeKind::ProcessRun && n.name.contains("Heating"))
        .map(|n| n.name.as_str())
        .collect();
    heating.sort();
    assert_eq!(
        heating,
        [
            "Heating Chunked Europium,Ground Purified Sulfur",
            "Heating EusNb2Se4 pellets (sealed vessel)",
            "Heating EusNb2Se4 vessel",
            "Heating Ground NbSe2 Mixture",
            "Heating Selenium",
            "Heating Sulfur",
        ]
    );
}
