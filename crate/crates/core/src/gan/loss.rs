use crate::error::{bail, Result};

/// One-sided Lipschitz penalty `mean(max(0, ‖∇‖ − 1)²)`.
pub fn lipschitz_penalty(grad_norms: &[f64]) -> f64 {
    if grad_norms.is_empty() {
        return 0.0;
    }
    grad_norms.iter().map(|n| (n - 1.0).max(0.0).powi(2)).sum::<f64>() / grad_norms.len() as f64
}

/// `(d_loss, g_loss)` with `d_loss = mean(fake) − mean(real) + λ·penalty` and
/// `g_loss = −mean(fake)`.
pub fn wgan_lp_loss(real_scores: &[f64], fake_scores: &[f64], grad_norms: &[f64], lambda: f64) -> Result<(f64, f64)> {
    if real_scores.is_empty() || fake_scores.is_empty() {
        bail!(InvalidInput, "wgan loss needs at least one real and one fake score");
    }
    if !(lambda >= 0.0) {
        bail!(InvalidInput, "penalty weight must be non-negative, got {lambda}");
    }
    let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
    let fake = mean(fake_scores);
    Ok((fake - mean(real_scores) + lambda * lipschitz_penalty(grad_norms), -fake))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn hand_values() {
        let (d, g) = wgan_lp_loss(&[2.0, 2.0], &[1.0, 3.0], &[1.5, 0.5], 10.0).unwrap();
        assert!((d - 1.25).abs() < 1e-12);
        assert_eq!(g, -2.0);
    }

    #[test]
    fn penalty_is_one_sided() {
        let (d, _) = wgan_lp_loss(&[0.5], &[0.25], &[0.1, 0.9, 1.0], 10.0).unwrap();
        assert_eq!(d, -0.25);
        let (d, _) = wgan_lp_loss(&[1.0, 2.0], &[1.0, 2.0], &[2.0, 3.0], 1.0).unwrap();
        assert_eq!(d, 2.5);
        assert!(wgan_lp_loss(&[], &[1.0], &[], 1.0).is_err());
        assert!(wgan_lp_loss(&[1.0], &[1.0], &[], -1.0).is_err());
    }

    proptest! {
        #[test]
        fn shrinking_small_norms_changes_nothing(
            norms in prop::collection::vec(0.0f64..3.0, 1..10),
            shrink in 0.0f64..1.0,
        ) {
            let reduced: Vec<f64> = norms.iter().map(|n| if *n <= 1.0 { n * shrink } else { *n }).collect();
            let a = wgan_lp_loss(&[0.3], &[0.1], &norms, 10.0).unwrap();
            let b = wgan_lp_loss(&[0.3], &[0.1], &reduced, 10.0).unwrap();
            prop_assert_eq!(a, b);
        }
    }
}
