//! Cost volume and warp oracles, and raw-pixel shift recovery.

#[path = "cases/oracle.rs"]
mod oracle;
#[path = "cases/shift.rs"]
mod shift;

#[test]
fn oracle_checks() {
    for (name, check) in oracle::CHECKS {
        if let Err(e) = check() {
            panic!("{name}: {e}");
        }
    }
}

#[test]
fn raw_pixel_argmin_recovers_uniform_shifts() {
    let (s, rate) = shift::worst_rate();
    assert!(rate >= 0.99, "shift {s}: only {:.2}% recovered", rate * 100.0);
}

#[test]
fn shifted_pair_obeys_the_disparity_convention() {
    let (l, r) = shift::shifted_pair(4, 16, 3, 1);
    for j in 3..16 {
        assert_eq!(l.at(&[0, 1, 2, j]), r.at(&[0, 1, 2, j - 3]));
    }
}
