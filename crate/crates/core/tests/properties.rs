use proptest::prelude::*;
use storejourney::codec::{code_of_cell, GridCell};
use storejourney::corpus::Journey;
use storejourney::evaluator::{js_divergence, normalize, traffic_heatmap, zone_purchase_distribution};
use storejourney::purchase::PurchaseEvent;
use storejourney::synthstore::{make_layout, StorePreset};

fn distribution(len: usize) -> impl Strategy<Value = Vec<f64>> {
    proptest::collection::vec(0u64..50, len).prop_map(|c| {
        normalize(&c).unwrap_or_else(|| {
            let mut e = vec![0.0; c.len()];
            e[0] = 1.0;
            e
        })
    })
}

fn pair() -> impl Strategy<Value = (Vec<f64>, Vec<f64>)> {
    (1usize..40).prop_flat_map(|n| (distribution(n), distribution(n)))
}

fn journey() -> impl Strategy<Value = Journey> {
    proptest::collection::vec((0u8..64, 0u8..64, 0u32..3), 1..30).prop_map(|pts| {
        let codes = pts.iter().map(|&(i, j, _)| code_of_cell(GridCell::new(i, j).unwrap())).collect();
        let events = pts
            .iter()
            .enumerate()
            .filter(|(_, p)| p.2 > 0)
            .map(|(k, p)| PurchaseEvent { point_index: k, count: p.2 })
            .collect();
        Journey::new(codes, events)
    })
}

proptest! {
    #[test]
    fn js_is_symmetric_and_bounded((p, q) in pair()) {
        let a = js_divergence(&p, &q).unwrap();
        let b = js_divergence(&q, &p).unwrap();
        prop_assert!((a - b).abs() < 1e-15);
        prop_assert!((0.0..=1.0).contains(&a));
        prop_assert!(js_divergence(&p, &p).unwrap().abs() < 1e-15);
    }

    #[test]
    fn heatmap_conserves_mass(js in proptest::collection::vec(journey(), 0..20)) {
        let points: usize = js.iter().map(Journey::len).sum();
        prop_assert_eq!(traffic_heatmap(&js, 2000, 0).total(), points as u64);
    }

    #[test]
    fn zone_distribution_is_normalized(js in proptest::collection::vec(journey(), 1..20)) {
        let layout = make_layout(&StorePreset::a(), 1).unwrap().layout;
        let d = zone_purchase_distribution(&js, &layout);
        let bought: u64 = js.iter().map(Journey::total_purchases).sum();
        prop_assert_eq!(d.total(), bought);
        prop_assert_eq!(d.empty, bought == 0);
        if bought > 0 {
            prop_assert!((d.probabilities.iter().sum::<f64>() - 1.0).abs() < 1e-9);
        }
        prop_assert!(d.probabilities.iter().all(|&p| p >= 0.0));
    }
}

/// Shoppers walk aisles: no sample lies inside a shelf, so no cell wholly
/// covered by a shelf receives any traffic.
#[test]
fn synthetic_traffic_avoids_shelves() {
    use storejourney::codec::{cell_center, Point2D};
    use storejourney::purchase::{annotate, DbscanParams, DEFAULT_MATCH_WINDOW};
    use storejourney::synthstore::{simulate_journeys, ShopperModel};

    let store = make_layout(&StorePreset::b(), 3).unwrap();
    let shelves = &store.layout.shelves;
    let sim = simulate_journeys(&store, &ShopperModel::default(), 200, 3).unwrap();
    for p in sim.trajectories.iter().flat_map(|t| &t.points) {
        assert!(!shelves.iter().any(|s| s.contains_strict(p.pos())), "sample {p:?} inside a shelf");
    }
    let (ann, _) =
        annotate(&sim.trajectories, &sim.scanner, &store.layout, DbscanParams::default(), DEFAULT_MATCH_WINDOW, 3);
    let codec = storejourney::codec::Codec::with_side(store.layout.store_side);
    let journeys: Vec<Journey> = ann.iter().map(|a| Journey::from_annotated(a, &codec).unwrap()).collect();
    let map = traffic_heatmap(&journeys, 2000, 0);
    let mut covered = 0;
    for cell in GridCell::all() {
        let c = cell_center(cell);
        let corners = [(-0.25, -0.25), (-0.25, 0.25), (0.25, -0.25), (0.25, 0.25)]
            .map(|(dx, dy)| Point2D::new(c.x + dx, c.y + dy));
        if shelves.iter().any(|s| corners.iter().all(|&q| s.contains_strict(q))) {
            covered += 1;
            assert_eq!(map.counts[cell.flat_index()], 0, "shelf cell {cell:?} has traffic");
        }
    }
    assert!(covered > 100);
}
