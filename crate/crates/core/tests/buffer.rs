use qec_stream::buffer::{BufferConfig, BufferError, GraphBuffer, SlotData};
use qec_stream::correlations::{apply_preweights, select_seed_edges, EdgeOverlay};
use qec_stream::harness::codes::{PlanarSurfaceCode, RepetitionCode};
use qec_stream::model::{build_matching_graph, DetectorId, Endpoint, ModelTemplate, NoiseModel};

fn top_cycle(a: DetectorId, b: Endpoint, dpc: u32) -> u64 {
    match b {
        Endpoint::Detector(b) => b.cycle(dpc),
        Endpoint::Boundary => a.cycle(dpc),
    }
}

/// Compares every published block with a from-scratch graph of the whole shot.
fn check_fidelity(model: &NoiseModel<f64>, shot: u64, m: u64, open_ended: bool) {
    let template = ModelTemplate::new(model).unwrap();
    let full = build_matching_graph(&template.extend_to(shot).unwrap()).unwrap();
    let dpc = full.detectors_per_cycle;
    let buffer = GraphBuffer::new(template, BufferConfig::new(m).with_capacity(8)).unwrap();
    if open_ended {
        buffer.begin_shot(None).unwrap();
        // Touch the first block before the end is known, then fix the length.
        let v = buffer.ensure_window(0).unwrap();
        buffer.release(v).unwrap();
        buffer.announce_end(shot).unwrap();
    } else {
        buffer.begin_shot(Some(shot)).unwrap();
    }
    let blocks = shot.div_ceil(m);
    let first = u64::from(open_ended);
    for b in first..blocks {
        let view = buffer.ensure_window(b).unwrap();
        {
            let slot = view.lock().unwrap();
            let mut got = slot.global_edges();
            got.sort_by_key(|e| (e.0, e.1.map_or(u64::MAX, |d| d.0)));
            let want: Vec<_> = full
                .edges()
                .iter()
                .filter(|e| top_cycle(e.a, e.b, dpc) / m == b)
                .collect();
            assert_eq!(got.len(), want.len(), "block {b}");
            for (g, w) in got.iter().zip(&want) {
                let wb = match w.b {
                    Endpoint::Detector(d) => Some(d),
                    Endpoint::Boundary => None,
                };
                assert_eq!((g.0, g.1, g.3), (w.a, wb, w.observables), "block {b}");
                assert!((g.2 - w.probability).abs() < 1e-15, "block {b}");
            }
            check_partners(&slot, &full, b, m);
        }
        buffer.release(view).unwrap();
    }
}

fn check_partners(slot: &SlotData<f64>, full: &qec_stream::model::MatchingGraph<f64>, b: u64, m: u64) {
    let dpc = full.detectors_per_cycle;
    let edges = slot.global_edges();
    for (i, e) in edges.iter().enumerate() {
        let fe = full
            .find_edge(e.0, e.1.map_or(Endpoint::Boundary, Endpoint::Detector))
            .unwrap();
        let mut want: Vec<_> = full
            .correlations()
            .partners(fe)
            .iter()
            .filter(|(p, _)| {
                let pe = full.edge(*p);
                top_cycle(pe.a, pe.b, dpc) / m == b
            })
            .map(|(p, ph)| (full.edge(*p).a, *ph))
            .collect();
        let mut got: Vec<_> = slot
            .partners(qec_stream::model::EdgeId(i as u32))
            .iter()
            .map(|(p, ph)| (edges[p.index()].0, *ph))
            .collect();
        want.sort_by(|x, y| x.partial_cmp(y).unwrap());
        got.sort_by(|x, y| x.partial_cmp(y).unwrap());
        assert_eq!(got.len(), want.len());
        for (g, w) in got.iter().zip(&want) {
            assert_eq!(g.0, w.0);
            assert!((g.1 - w.1).abs() < 1e-15);
        }
    }
}

#[test]
fn views_match_scratch_construction() {
    let rep = RepetitionCode::new(5, 20, 0.01).with_readout(0.003).noise_model::<f64>();
    for (shot, m) in [(47, 5), (40, 10), (3, 4), (23, 2)] {
        check_fidelity(&rep, shot, m, false);
    }
    check_fidelity(&rep, 61, 6, true);
    let planar = PlanarSurfaceCode::new(3, 6, 0.01).noise_model::<f64>();
    check_fidelity(&planar, 25, 4, false);
    check_fidelity(&planar, 25, 4, true);
}

#[test]
fn window_slides_and_guards() {
    let model = RepetitionCode::new(3, 10, 0.01).noise_model::<f64>();
    let buffer = GraphBuffer::new(ModelTemplate::new(&model).unwrap(), BufferConfig::new(2).with_capacity(8)).unwrap();
    buffer.begin_shot(Some(1000)).unwrap();
    let v0 = buffer.ensure_window(0).unwrap();
    assert_eq!(buffer.readers(0), 1);
    let again = buffer.ensure_window(0).unwrap();
    assert_eq!(buffer.readers(0), 2);
    buffer.release(again).unwrap();
    // The window cannot move past a held block.
    assert!(matches!(buffer.ensure_window(8), Err(BufferError::WindowFull { .. })));
    let v7 = buffer.ensure_window(7).unwrap();
    buffer.release(v0).unwrap();
    assert_eq!(buffer.readers(0), 0);
    let (lo, _) = buffer.window();
    assert_eq!(lo, 1);
    assert!(matches!(buffer.ensure_window(0), Err(BufferError::Rewind { block: 0, lo: 1 })));
    // Block 8 reuses slot 0 now that block 0 is retired.
    for b in 1..7 {
        let v = buffer.ensure_window(b).unwrap();
        buffer.release(v).unwrap();
    }
    let v8 = buffer.ensure_window(8).unwrap();
    assert_eq!(v8.lock().unwrap().block(), 8);
    buffer.release(v7).unwrap();
    buffer.release(v8).unwrap();
    assert!(matches!(buffer.ensure_window(500), Err(BufferError::PastEnd { .. })));
}

#[test]
fn release_errors() {
    let model = PlanarSurfaceCode::new(3, 6, 0.02).noise_model::<f64>();
    let buffer = GraphBuffer::new(ModelTemplate::new(&model).unwrap(), BufferConfig::new(3).with_capacity(8)).unwrap();
    buffer.begin_shot(Some(12)).unwrap();
    let v = buffer.ensure_window(1).unwrap();
    let log = {
        let mut slot = v.lock().unwrap();
        let base = slot.base();
        let events = [DetectorId(base), DetectorId(base + 1)];
        let seeds = select_seed_edges(&*slot, &events);
        let log = apply_preweights(&mut *slot, &seeds);
        assert!(!log.is_empty());
        log
    };
    assert_eq!(buffer.release(buffer.ensure_window(1).unwrap()), Err(BufferError::DirtyOverlay(1)));
    {
        let mut slot = v.lock().unwrap();
        let mut log = log;
        qec_stream::correlations::undo_reweights(&mut *slot, &mut log).unwrap();
        assert!(slot.is_clean());
        let e = qec_stream::model::EdgeId(0);
        assert_eq!(slot.weight(e), slot.structure().weights()[0]);
    }
    // Two holds are outstanding (the dirty release kept its hold).
    assert_eq!(buffer.readers(1), 2);
    let extra = buffer.ensure_window(1).unwrap();
    buffer.release(extra).unwrap();
    buffer.release(buffer.ensure_window(1).unwrap()).unwrap();
    buffer.release(v).unwrap();
    buffer.release(buffer.ensure_window(1).unwrap()).unwrap();
}

#[test]
fn double_release_is_rejected() {
    let model = RepetitionCode::new(3, 10, 0.01).noise_model::<f64>();
    let buffer = GraphBuffer::new(ModelTemplate::new(&model).unwrap(), BufferConfig::new(2).with_capacity(8)).unwrap();
    buffer.begin_shot(Some(20)).unwrap();
    let a = buffer.ensure_window(3).unwrap();
    let copy = a.clone();
    buffer.release(a).unwrap();
    assert_eq!(buffer.readers(3), 0);
    assert_eq!(buffer.release(copy), Err(BufferError::NotHeld(3)));
}

#[test]
fn bulk_blocks_are_never_rewritten() {
    let model = RepetitionCode::new(5, 10, 0.01).with_readout(0.01).noise_model::<f64>();
    let run = |cycles: u64| {
        let buffer =
            GraphBuffer::new(ModelTemplate::new(&model).unwrap(), BufferConfig::new(10).with_capacity(8)).unwrap();
        buffer.begin_shot(Some(cycles)).unwrap();
        for b in 0..cycles.div_ceil(10) {
            let v = buffer.ensure_window(b).unwrap();
            buffer.release(v).unwrap();
        }
        buffer.stats()
    };
    let short = run(1_000);
    let long = run(100_000);
    // Prologue, one bulk fill per slot, epilogue.
    assert!(long.structure_writes <= 8 + 4, "{long:?}");
    assert_eq!(short.structure_writes, long.structure_writes);
    assert!(long.structure_reuses > 9_000);
    assert_eq!(short.peak_structural_bytes, long.peak_structural_bytes);
}
