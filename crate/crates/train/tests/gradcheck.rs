use visk_policy::ImagePool;
use visk_train::gradcheck::{check_gradients, toy_problem};

fn run(pool: ImagePool) {
    let p = toy_problem(pool, 11).unwrap();
    let checks = check_gradients(&p, 1e-5).unwrap();
    assert_eq!(checks.len(), p.params.len());
    for c in &checks {
        assert!(c.passes(1e-4), "{}: relative error {:e}, norms {:e} / {:e}", c.name, c.rel_err, c.analytic_norm, c.numeric_norm);
    }
    // the check must have something to compare in the bulk of the network
    assert!(checks.iter().filter(|c| c.analytic_norm > 1e-6).count() > checks.len() / 2);
}

#[test]
fn full_network_gradients_flatten_pool() {
    run(ImagePool::Flatten);
}

#[test]
fn full_network_gradients_average_pool() {
    run(ImagePool::Gap);
}
