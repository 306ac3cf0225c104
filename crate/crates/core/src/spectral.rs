//! The change of variables λ = η⁴ + η² between the spectral parameter of
//! H₀ = Δ² − Δ and the momentum-like variable η.

use serde::Serialize;

use crate::error::{domain, Result};

/// A point on the positive spectrum, stored in both coordinates.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SpectralPoint {
    pub lambda: f64,
    pub eta: f64,
}

impl SpectralPoint {
    pub fn from_lambda(lambda: f64) -> Result<Self> {
        Ok(Self { lambda, eta: eta_of_lambda(lambda)? })
    }

    pub fn from_eta(eta: f64) -> Result<Self> {
        Ok(Self { lambda: lambda_of_eta(eta)?, eta })
    }
}

/// Inverse of [`lambda_of_eta`].
///
/// Uses η² = λ / (√(1/4 + λ) + 1/2), which is the textbook
/// √(1/4 + λ) − 1/2 with the cancellation removed.
pub fn eta_of_lambda(lambda: f64) -> Result<f64> {
    if !lambda.is_finite() || lambda < 0.0 {
        return domain(format!("lambda must be finite and nonnegative, got {lambda}"));
    }
    let eta2 = lambda / ((0.25 + lambda).sqrt() + 0.5);
    Ok(eta2.sqrt())
}

pub fn lambda_of_eta(eta: f64) -> Result<f64> {
    if !eta.is_finite() || eta < 0.0 {
        return domain(format!("eta must be finite and nonnegative, got {eta}"));
    }
    Ok(lambda_unchecked(eta))
}

/// dλ/dη = 4η³ + 2η.
pub fn stone_jacobian(eta: f64) -> Result<f64> {
    if !eta.is_finite() || eta < 0.0 {
        return domain(format!("eta must be finite and nonnegative, got {eta}"));
    }
    Ok(jacobian_unchecked(eta))
}

#[inline]
pub(crate) fn lambda_unchecked(eta: f64) -> f64 {
    let e2 = eta * eta;
    e2 * e2 + e2
}

#[inline]
pub(crate) fn jacobian_unchecked(eta: f64) -> f64 {
    eta * (4.0 * eta * eta + 2.0)
}

#[inline]
pub(crate) fn eta_unchecked(lambda: f64) -> f64 {
    (lambda / ((0.25 + lambda).sqrt() + 0.5)).sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn fixed_points() {
        assert_eq!(eta_of_lambda(0.0).unwrap(), 0.0);
        assert!((eta_of_lambda(2.0).unwrap() - 1.0).abs() < 1e-15);
        assert_eq!(lambda_of_eta(0.0).unwrap(), 0.0);
        assert_eq!(lambda_of_eta(1.0).unwrap(), 2.0);
        assert_eq!(lambda_of_eta(0.5).unwrap(), 0.3125);
        assert_eq!(stone_jacobian(0.0).unwrap(), 0.0);
        assert_eq!(stone_jacobian(1.0).unwrap(), 6.0);
    }

    #[test]
    fn rejects_bad_input() {
        assert!(eta_of_lambda(-1e-300).is_err());
        assert!(eta_of_lambda(f64::NAN).is_err());
        assert!(eta_of_lambda(f64::INFINITY).is_err());
        assert!(lambda_of_eta(-0.1).is_err());
        assert!(stone_jacobian(-0.1).is_err());
    }

    #[test]
    fn roundtrip_random_lambda() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..1000 {
            let lam: f64 = rng.random_range(0.0..1e6);
            let back = lambda_of_eta(eta_of_lambda(lam).unwrap()).unwrap();
            assert!((back - lam).abs() <= 1e-13 * lam, "{lam} -> {back}");
        }
    }

    #[test]
    fn tiny_lambda_keeps_digits() {
        // the naive formula returns garbage here
        let lam = 1e-12;
        let eta = eta_of_lambda(lam).unwrap();
        let back = lambda_of_eta(eta).unwrap();
        assert!((back - lam).abs() <= 1e-14 * lam);
        assert!((eta - 1e-6).abs() < 1e-17);
    }

    #[test]
    fn jacobian_matches_central_difference() {
        let eta = 0.7;
        let exact = stone_jacobian(eta).unwrap();
        let mut prev = f64::INFINITY;
        for h in [1e-2, 5e-3, 2.5e-3] {
            let fd = (lambda_of_eta(eta + h).unwrap() - lambda_of_eta(eta - h).unwrap()) / (2.0 * h);
            let err = (fd - exact).abs();
            // truncation error is exactly 4η·h² for a quartic
            assert!((err - 4.0 * eta * h * h).abs() < 1e-12);
            assert!(err < prev);
            prev = err;
        }
    }

    #[test]
    fn monotone_on_grid() {
        let mut last = -1.0;
        for k in 0..2000 {
            let lam = 1e-10 * 1.02f64.powi(k);
            let eta = eta_of_lambda(lam).unwrap();
            assert!(eta > last);
            last = eta;
        }
    }

    proptest::proptest! {
        #[test]
        fn eta_roundtrip(eta in 1e-100f64..1e3) {
            let back = eta_of_lambda(lambda_of_eta(eta).unwrap()).unwrap();
            proptest::prop_assert!((back - eta).abs() <= 1e-13 * eta.max(1e-300));
        }
    }
}
