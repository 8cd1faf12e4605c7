//! Logarithmically discretized flat conduction band mapped onto a
//! semi-infinite tight-binding chain.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WilsonChain {
    pub lambda: f64,
    pub length: usize,
    /// Dimensionless coefficients, `xi[n] -> 1` for large `n`.
    pub xi: Vec<f64>,
    /// Hopping between sites `n` and `n + 1` in `D0` units.
    pub hop: Vec<f64>,
}

/// `xi_n = (1 - L^{-n-1}) / sqrt((1 - L^{-2n-1}) (1 - L^{-2n-3}))`.
pub fn wilson_xi(lambda: f64, n: usize) -> f64 {
    let n = n as f64;
    let num = 1.0 - lambda.powf(-n - 1.0);
    let den = (1.0 - lambda.powf(-2.0 * n - 1.0)) * (1.0 - lambda.powf(-2.0 * n - 3.0));
    num / den.sqrt()
}

/// Overall scale `(1 + 1/L) / 2` of the discretized band in `D0` units.
pub fn band_prefactor(lambda: f64) -> f64 {
    0.5 * (1.0 + 1.0 / lambda)
}

/// `A_Lambda = ln(L)/2 * (1 + 1/L) / (1 - 1/L)`: the discretized band has an
/// effective density of states `rho0 / A_Lambda` at low energies.
pub fn discretization_correction(lambda: f64) -> f64 {
    0.5 * lambda.ln() * (1.0 + 1.0 / lambda) / (1.0 - 1.0 / lambda)
}

impl WilsonChain {
    pub fn build(lambda: f64, n_max: usize) -> Result<Self> {
        if !(lambda > 1.0) || !lambda.is_finite() {
            return Err(Error::Domain(format!(
                "discretization parameter must exceed 1, got {lambda}"
            )));
        }
        if n_max == 0 {
            return Err(Error::Domain("chain needs at least one hopping".into()));
        }
        let pre = band_prefactor(lambda);
        let xi: Vec<f64> = (0..n_max).map(|n| wilson_xi(lambda, n)).collect();
        let hop = xi
            .iter()
            .enumerate()
            .map(|(n, x)| pre * x * lambda.powf(-(n as f64) / 2.0))
            .collect();
        Ok(WilsonChain {
            lambda,
            length: n_max,
            xi,
            hop,
        })
    }

    /// Hopping `n -> n+1` expressed in the rescaled units of iteration `n + 1`.
    pub fn rescaled_hop(&self, n: usize) -> f64 {
        self.hop[n] / energy_scale(self.lambda, n + 1)
    }
}

/// Characteristic energy `Lambda^{-(N-1)/2}` of iteration `N`.
pub fn energy_scale(lambda: f64, n: usize) -> f64 {
    lambda.powf(-(n as f64 - 1.0) / 2.0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use nalgebra::DMatrix;

    #[test]
    fn xi_zero_lambda_two() {
        let c = WilsonChain::build(2.0, 4).unwrap();
        // (1 - 1/2) / sqrt((1 - 1/2)(1 - 1/8))
        assert_abs_diff_eq!(c.xi[0], 0.5 / (0.5f64 * 0.875).sqrt(), epsilon = 1e-15);
        assert_abs_diff_eq!(c.xi[0], 0.755929, epsilon = 1e-6);
    }

    #[test]
    fn xi_approaches_one_monotonically() {
        for &lambda in &[1.5, 2.0, 3.0] {
            let c = WilsonChain::build(lambda, 80).unwrap();
            for w in c.xi.windows(2) {
                assert!(w[0] > 0.0 && w[0] <= 1.0);
                // strictly increasing until it rounds to 1
                assert!(w[1] > w[0] || (1.0 - w[0]) < 1e-15);
            }
            assert!(c.xi[10] < 1.0);
        }
        let c = WilsonChain::build(2.0, 60).unwrap();
        assert!((1.0 - c.xi[50]).abs() < 1e-6);
    }

    #[test]
    fn hoppings_decrease_geometrically() {
        let c = WilsonChain::build(2.0, 60).unwrap();
        for w in c.hop.windows(2) {
            assert!(w[1] < w[0]);
        }
        let ratio = c.hop[59] / c.hop[58];
        assert_abs_diff_eq!(ratio, 2f64.powf(-0.5), epsilon = 1e-12);
    }

    #[test]
    fn rejects_bad_lambda() {
        assert!(WilsonChain::build(1.0, 10).is_err());
        assert!(WilsonChain::build(0.5, 10).is_err());
        assert!(WilsonChain::build(2.0, 0).is_err());
    }

    #[test]
    fn energy_scale_examples() {
        assert_eq!(energy_scale(2.0, 1), 1.0);
        assert_abs_diff_eq!(energy_scale(2.0, 21), 2f64.powi(-10), epsilon = 1e-18);
        assert_abs_diff_eq!(energy_scale(2.0, 21), 9.765625e-4, epsilon = 1e-12);
        assert_abs_diff_eq!(energy_scale(1.5, 3), 1.0 / 1.5, epsilon = 1e-15);
    }

    #[test]
    fn doubling_length_keeps_prefix() {
        let a = WilsonChain::build(1.5, 30).unwrap();
        let b = WilsonChain::build(1.5, 60).unwrap();
        assert_eq!(a.xi[..], b.xi[..30]);
        assert_eq!(a.hop[..], b.hop[..30]);
    }

    #[test]
    fn single_particle_spectrum_is_particle_hole_symmetric() {
        for &(lambda, n) in &[(2.0, 12usize), (1.5, 25), (3.0, 7)] {
            let c = WilsonChain::build(lambda, n).unwrap();
            let m = DMatrix::from_fn(n + 1, n + 1, |i, j| {
                if i + 1 == j {
                    c.hop[i]
                } else if j + 1 == i {
                    c.hop[j]
                } else {
                    0.0
                }
            });
            let mut ev: Vec<f64> = m.symmetric_eigenvalues().iter().copied().collect();
            ev.sort_by(|a, b| a.partial_cmp(b).unwrap());
            for k in 0..ev.len() {
                assert_abs_diff_eq!(ev[k], -ev[ev.len() - 1 - k], epsilon = 1e-12);
            }
        }
    }

    #[test]
    fn correction_factor_values() {
        assert_abs_diff_eq!(
            discretization_correction(2.0),
            1.5 * 2f64.ln(),
            epsilon = 1e-15
        );
        assert_abs_diff_eq!(discretization_correction(1.5), 1.0137, epsilon = 1e-4);
        assert_abs_diff_eq!(discretization_correction(1.0 + 1e-6), 1.0, epsilon = 1e-9);
        assert!(discretization_correction(3.0) > discretization_correction(2.0));
    }

    #[test]
    fn rescaled_hop_tends_to_band_prefactor() {
        let c = WilsonChain::build(2.0, 60).unwrap();
        assert_abs_diff_eq!(c.rescaled_hop(55), band_prefactor(2.0), epsilon = 1e-12);
    }

    proptest::proptest! {
        #[test]
        fn chain_invariants_hold_for_any_lambda(lambda in 1.05f64..6.0, n_max in 1usize..90) {
            let c = WilsonChain::build(lambda, n_max).unwrap();
            proptest::prop_assert_eq!(c.hop.len(), n_max);
            for (x, w) in c.xi.iter().zip(c.hop.windows(2)) {
                proptest::prop_assert!(*x > 0.0 && *x <= 1.0);
                proptest::prop_assert!(w[1] < w[0] && w[1] > 0.0);
            }
        }
    }
}
