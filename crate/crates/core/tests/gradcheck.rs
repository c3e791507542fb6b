mod support;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use storejourney::nn::{loss_and_grad, Params};
use support::{gradcheck_config, gradient_check, random_batch};

#[test]
fn analytic_gradient_matches_central_differences() {
    let r = gradient_check();
    assert!(r.checked >= 200, "only {} coordinates checked", r.checked);
    assert_eq!(r.groups_covered, r.groups);
    assert!(r.worst.0 < 1e-5, "worst relative error {:e} at {}", r.worst.0, r.worst.1);
}

#[test]
fn masked_positions_contribute_nothing() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let params = Params::<f64>::init(&gradcheck_config()).unwrap();
    let mut b = random_batch(&mut rng);
    let (base, _) = loss_and_grad::<f64, ChaCha8Rng>(&params, &b, None).unwrap();
    for i in 0..b.mask.len() {
        if !b.mask[i] {
            b.targets[i] = (b.targets[i] + 7) % 40;
        }
    }
    let (again, _) = loss_and_grad::<f64, ChaCha8Rng>(&params, &b, None).unwrap();
    assert_eq!(base, again);
}
