use psdepth_core::gradcheck::{check_losses, check_network, NetworkProbe};

#[test]
fn every_loss_matches_finite_differences() {
    for r in check_losses(5, 42) {
        println!(
            "{:<32} max rel err {:.3e} over {} coords",
            r.name, r.max_rel_error, r.coordinates
        );
        assert!(r.passed(), "{} failed: {:e}", r.name, r.max_rel_error);
    }
}

#[test]
fn networks_match_finite_differences() {
    for probe in [
        NetworkProbe::TeacherDepth,
        NetworkProbe::TeacherSegmentation,
        NetworkProbe::Student,
    ] {
        let r = check_network(probe, 16, 32, 5, 6, 7).unwrap();
        println!(
            "{:<32} max rel err {:.3e} over {} coords",
            r.name, r.max_rel_error, r.coordinates
        );
        assert!(r.passed(), "{} failed: {:e}", r.name, r.max_rel_error);
    }
}
