use psdepth_core::oracle::{check_geometry, check_metrics};

#[test]
fn geometry_matches_reference() {
    let r = check_geometry(50, 40, 100, 17).unwrap();
    println!("{r:?}");
    assert_eq!(r.identity_failures, 0);
    assert!(r.round_trip_error < 1e-3, "{}", r.round_trip_error);
    assert_eq!(r.mask_failures, 0);
}

#[test]
fn metrics_match_reference() {
    let r = check_metrics(50, 23).unwrap();
    println!("{r:?}");
    assert!(r.max_error < 1e-10, "{}", r.max_error);
    assert!(r.identity_exact);
    assert!(r.scaled_exact);
}
