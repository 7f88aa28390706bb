use proptest::prelude::*;
use qec_stream::engine::{decode_exact, EngineError, ExactDecoder, MatchTarget};
use qec_stream::harness::codes::RepetitionCode;
use qec_stream::harness::{oracle_solve, Sampler};
use qec_stream::model::{build_matching_graph, DetectorId, ErrorMechanism, MatchingGraph, NoiseModel};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn prob(w: f64) -> f64 {
    1.0 / (1.0 + w.exp())
}

/// Graph with `nodes` detectors in one cycle from `(a, b, weight, mask)` edges;
/// `b == None` is a boundary edge.
fn graph(nodes: u32, edges: &[(u64, Option<u64>, f64, u64)]) -> MatchingGraph<f64> {
    let mut m = NoiseModel::new(nodes, 2);
    for &(a, b, w, obs) in edges {
        let dets: Vec<u64> = std::iter::once(a).chain(b).collect();
        m.mechanisms.push(ErrorMechanism::graphlike(prob(w), &dets, obs));
    }
    // One cycle of `nodes` detectors, so isolated detectors still exist.
    build_matching_graph(&m).unwrap()
}

fn random_instance(rng: &mut ChaCha8Rng) -> (MatchingGraph<f64>, Vec<DetectorId>) {
    let n = rng.gen_range(2..=30u32);
    let mut edges = Vec::new();
    for v in 1..n as u64 {
        let u = rng.gen_range(0..v);
        edges.push((u, Some(v), rng.gen_range(0.1..10.0), rng.gen_range(0..4)));
    }
    for _ in 0..rng.gen_range(0..2 * n) {
        let a = rng.gen_range(0..n as u64);
        let b = rng.gen_range(0..n as u64);
        if a != b && !edges.iter().any(|e| (e.0, e.1) == (a.min(b), Some(a.max(b))) || (e.0, e.1) == (a.max(b), Some(a.min(b)))) {
            edges.push((a, Some(b), rng.gen_range(0.1..10.0), rng.gen_range(0..4)));
        }
    }
    let boundaries = rng.gen_range(0..=n.min(4));
    for _ in 0..boundaries {
        let a = rng.gen_range(0..n as u64);
        if !edges.iter().any(|e| e.0 == a && e.1.is_none()) {
            edges.push((a, None, rng.gen_range(0.1..10.0), rng.gen_range(0..4)));
        }
    }
    let g = graph(n, &edges);
    let has_boundary = g.edges().iter().any(|e| e.is_boundary());
    let mut k = rng.gen_range(0..=14.min(n as usize));
    if !has_boundary && k % 2 == 1 {
        k -= 1;
    }
    let mut nodes: Vec<u64> = (0..n as u64).collect();
    for i in 0..k {
        let j = rng.gen_range(i..nodes.len());
        nodes.swap(i, j);
    }
    let events = nodes[..k].iter().map(|&d| DetectorId(d)).collect();
    (g, events)
}

#[test]
fn empty_event_set() {
    let g = graph(2, &[(0, Some(1), 1.0, 0)]);
    let m = decode_exact(&g, &[]).unwrap();
    assert!(m.pairs.is_empty());
    assert_eq!(m.total_weight, 0.0);
    assert_eq!(m.observable_mask, 0);
}

#[test]
fn path_pair_beats_boundaries() {
    let g = graph(2, &[(0, Some(1), 1.0, 0), (0, None, 3.0, 1), (1, None, 3.0, 0)]);
    let m = decode_exact(&g, &[DetectorId(0), DetectorId(1)]).unwrap();
    assert_eq!(m.pairing(), vec![(DetectorId(0), MatchTarget::Event(DetectorId(1)))]);
    assert!((m.total_weight - 1.0).abs() < 1e-12);
}

#[test]
fn out_of_range_and_unmatchable() {
    let g = graph(3, &[(0, Some(1), 1.0, 0), (1, Some(2), 1.0, 0)]);
    assert_eq!(decode_exact(&g, &[DetectorId(7)]).unwrap_err(), EngineError::EventOutOfRange(DetectorId(7)));
    assert_eq!(decode_exact(&g, &[DetectorId(0)]).unwrap_err(), EngineError::Unmatchable);
    assert_eq!(
        decode_exact(&g, &[DetectorId(0), DetectorId(0)]).unwrap_err(),
        EngineError::DuplicateEvent(DetectorId(0))
    );
}

#[test]
fn repetition_single_fault_is_undone() {
    let model = RepetitionCode::new(3, 6, 0.01).noise_model::<f64>();
    let g = build_matching_graph(&model).unwrap();
    let mut dec = ExactDecoder::new(&g);
    // Every mechanism of a middle cycle, alone.
    for mech in model.mechanisms.iter().filter(|m| m.detectors().map(|d| d.cycle(2)).max() == Some(3)) {
        let events: Vec<DetectorId> = mech.detectors().collect();
        let m = dec.decode(&events).unwrap();
        assert_eq!(m.observable_mask, mech.observables(), "{mech:?}");
        let oracle = oracle_solve(&g, &events).unwrap();
        assert!((oracle.matching.total_weight - m.total_weight).abs() < 1e-9);
    }
}

#[test]
fn random_instances_match_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    for trial in 0..300 {
        let (g, events) = random_instance(&mut rng);
        let oracle = oracle_solve(&g, &events);
        let engine = decode_exact(&g, &events);
        match (oracle, engine) {
            (Ok(o), Ok(e)) => {
                assert!((o.matching.total_weight - e.total_weight).abs() < 1e-9, "trial {trial}");
                if o.is_unique(1e-9) {
                    assert_eq!(o.matching.pairing(), e.pairing(), "trial {trial}");
                    assert_eq!(o.matching.observable_mask, e.observable_mask, "trial {trial}");
                }
            }
            (Err(a), Err(b)) => assert_eq!(a, b),
            (o, e) => panic!("trial {trial}: oracle {o:?} vs engine {e:?}"),
        }
    }
}

#[test]
fn observables_follow_realized_paths() {
    // Independent check: recompute each pair's mask along a path of the same weight.
    let model = RepetitionCode::new(5, 20, 0.05).noise_model::<f64>();
    let g = build_matching_graph(&model).unwrap();
    let sampler = Sampler::new(&model, 20).unwrap();
    let mut dec = ExactDecoder::new(&g);
    for shot in 0..200 {
        let s = sampler.sample(1, shot);
        let m = dec.decode(&s.events).unwrap();
        let mask = m.pairs.iter().fold(0, |acc, p| acc ^ p.observables);
        assert_eq!(mask, m.observable_mask);
        let total: f64 = m.pairs.iter().map(|p| p.weight).sum();
        assert!((total - m.total_weight).abs() < 1e-9);
        // Parity: event-targeted endpoints come in pairs.
        assert_eq!(m.num_events(), s.events.len());
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]
    #[test]
    fn decoding_is_deterministic(seed in 0u64..1_000_000) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (g, events) = random_instance(&mut rng);
        let a = decode_exact(&g, &events);
        let mut shuffled = events.clone();
        shuffled.reverse();
        let b = decode_exact(&g, &shuffled);
        prop_assert_eq!(a, b);
    }
}
