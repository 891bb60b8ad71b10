mod common;

use common::{check_gradients, random_problem, rec_oracle};
use rgs_core::vqvae::TermWeights;
use rgs_core::nets::Parameterized;

#[test]
fn analytic_gradients_match_central_differences() {
    let report = check_gradients(20, 8);
    assert_eq!(report.configurations, 20);
    assert!(report.routing_violations.is_empty(), "{:?}", report.routing_violations);
    for term in ["reconstruction", "embed", "commit", "focal"] {
        let worst = report.worst[term];
        assert!(worst < 1e-4, "{term}: worst relative error {worst:e}");
    }
}

#[test]
fn reported_losses_match_the_oracles() {
    for seed in 0..5 {
        let (mut vq, _, c, y, _) = random_problem(seed);
        let losses = vq.vq_loss(&y, &c).unwrap();
        let (q, y_hat) = vq.reconstruct(&y, &c).unwrap();
        let rec = rec_oracle(&y_hat.to_array(), &y, &c, vq.config().lambda_rc);
        assert!((losses.rec - rec).abs() < 1e-12, "{} vs {rec}", losses.rec);
        let sq: f64 = q.z_e.iter().zip(&q.z_q).map(|(a, b)| (a - b) * (a - b)).sum();
        assert!((losses.embed - sq).abs() < 1e-12);
        assert!((losses.commit - 0.25 * sq).abs() < 1e-12);

        let mut g = vq.zero_grads();
        let trained = vq.accumulate_gradients(&y, &c, TermWeights::default(), &mut g).unwrap();
        assert_eq!(trained.total, losses.total);
    }
}
