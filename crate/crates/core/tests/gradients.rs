mod common;

use common::{fd_relative_error, random_grad_case, TERMS};

#[test]
fn analytic_gradients_match_central_differences() {
    let mut worst = 0.0f64;
    for seed in 0..50 {
        let case = random_grad_case(seed);
        for term in TERMS {
            let e = fd_relative_error(&case, term, 1e-5, 1e-6);
            println!("seed {seed} {term:?}: {e:.3e}");
            worst = worst.max(e);
        }
    }
    println!("worst {worst:.3e}");
    assert!(worst <= 1e-4, "worst relative error {worst:e}");
}
