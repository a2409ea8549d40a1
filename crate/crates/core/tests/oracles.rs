mod common;

use common::Check;

fn assert_check(c: Check) {
    match c {
        Ok(detail) => println!("{detail}"),
        Err(why) => panic!("{why}"),
    }
}

#[test]
fn calibration_newton_matches_grid_search_dual() {
    assert_check(common::calibration_vs_grid_dual());
}

#[test]
fn mia_split_scan_matches_brute_force() {
    assert_check(common::mia_split_matches_enumeration(3000, 11));
}

#[test]
fn rubin_rules_hand_cases() {
    assert_check(common::rubin_hand_cases());
}

#[test]
fn mvn_em_matches_monotone_factored_likelihood() {
    assert_check(common::mvn_em_vs_monotone_closed_form(5));
}

#[test]
fn aipsw_reduces_to_ipsw_and_co() {
    for seed in 0..3 {
        assert_check(common::aipsw_reduction_identities(seed));
    }
}

#[test]
fn masked_values_never_reach_estimates() {
    assert_check(common::scramble_fuzz(21));
}

#[test]
fn calibration_hits_feasible_moments() {
    assert_check(common::calibration_feasibility(300, 9));
}
