mod common;

use common::{heatmap_case, FLOOR1_ROOMS};
use proptest::prelude::*;
use sitestream_core::api::{room_cells, Heatmap};
use sitestream_core::metadata::demo_site;
use sitestream_core::model::{Boundary, Feature};

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn incremental_equals_full_and_walls_hold(seed in any::<u64>(), steps in 1usize..40) {
        prop_assert_eq!(heatmap_case(seed, steps), 0);
    }

    #[test]
    fn room_cells_lie_inside(x0 in 0.0f64..50.0, y0 in 0.0f64..50.0, w in 0.5f64..20.0, h in 0.5f64..20.0, cell in 0.2f64..3.0) {
        let b = Boundary::new("WGB", vec![[x0, y0], [x0, y0 + h], [x0 + w, y0 + h], [x0 + w, y0]]).unwrap();
        let cells = room_cells(&b, cell);
        prop_assert!(cells.iter().all(|c| c[0] > x0 && c[0] < x0 + w && c[1] > y0 && c[1] < y0 + h));
        prop_assert!(cells.len() <= ((w / cell).ceil() * (h / cell).ceil()) as usize);
    }
}

#[test]
fn empty_floor_has_no_values() {
    let h = Heatmap::new(&demo_site(), 1, Feature::Co2, 1.0).unwrap();
    let g = h.grid();
    assert!(g.cells.iter().all(|c| c.value.is_none()));
    let rooms: Vec<&str> = FLOOR1_ROOMS.iter().map(|r| r.0).collect();
    assert!(g.cells.iter().all(|c| rooms.contains(&c.crate_id.as_str())));
    assert!(Heatmap::new(&demo_site(), 1, Feature::Co2, 0.0).is_err());
}
