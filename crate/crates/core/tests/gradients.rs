//! Central finite-difference checks of every differentiable op.

mod common;

#[test]
fn every_op_matches_finite_differences() {
    let suite = common::op_suite();
    assert!(suite.reports.len() >= 30);
    for (name, r) in &suite.reports {
        assert!(
            r.failures.is_empty(),
            "{name}: {} of {} coordinates off, worst {:.3e}, first {:?}",
            r.failures.len(),
            r.checked,
            r.worst_rel,
            r.failures.first()
        );
    }
}
