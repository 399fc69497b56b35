mod common;

use common::checks::conjugate_check;

#[test]
fn single_component_posterior_matches_closed_form() {
    let (z, draws) = conjugate_check(11).unwrap();
    assert_eq!(draws, 800);
    assert!(
        z < 3.0,
        "sampler mean {z:.2} standard errors from the exact posterior mean"
    );
}

#[test]
fn long_run_is_unbiased() {
    // 39,800 retained draws: any bias of a tenth of a posterior sd would show as z > 6
    let (z, draws) = common::checks::conjugate_check_with(7, 200_000).unwrap();
    assert_eq!(draws, 39_800);
    assert!(z < 4.0, "{z}");
}
