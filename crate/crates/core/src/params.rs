//! Translation between spin-boson parameters and anisotropic Kondo couplings.
//!
//! All energies are measured in units of the conduction half-bandwidth
//! `D0 = 1`. The flat density of states per spin is `rho0 = 1 / (2 D0)` and the
//! bath cutoff is pinned to `omega_c = 2 D0`, so the bare tunneling amplitude
//! equals the transverse exchange, `Delta = J_perp`.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Bath cutoff frequency in units of the half-bandwidth.
pub const OMEGA_C: f64 = 2.0;

/// Flat-band density of states per spin, `1 / (2 D0)`.
pub const RHO0: f64 = 0.5;

/// Largest `Delta / omega_c` for which the lowest-order mapping is accepted.
pub const MAX_DELTA_RATIO: f64 = 0.1;

/// A physical point of the ohmic spin-boson model.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SpinBosonPoint {
    /// Dimensionless dissipation strength.
    pub alpha: f64,
    /// Level asymmetry as the ratio `epsilon / Delta`.
    pub epsilon: f64,
    /// Bare tunneling over cutoff, `Delta / omega_c`.
    pub delta_ratio: f64,
    pub wc: f64,
}

impl SpinBosonPoint {
    pub fn new(alpha: f64, epsilon_over_delta: f64, delta_ratio: f64) -> Result<Self> {
        let p = SpinBosonPoint {
            alpha,
            epsilon: epsilon_over_delta,
            delta_ratio,
            wc: OMEGA_C,
        };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return Err(Error::UnsupportedSector(self.alpha));
        }
        if !(self.delta_ratio > 0.0 && self.delta_ratio <= MAX_DELTA_RATIO) {
            return Err(Error::Domain(format!(
                "delta_ratio = {} outside (0, {MAX_DELTA_RATIO}]",
                self.delta_ratio
            )));
        }
        if !(self.epsilon >= 0.0) || !self.epsilon.is_finite() {
            return Err(Error::Domain(format!(
                "epsilon/Delta = {} must be finite and non-negative",
                self.epsilon
            )));
        }
        Ok(())
    }

    /// Bare tunneling amplitude in `D0` units.
    pub fn delta(&self) -> f64 {
        self.delta_ratio * self.wc
    }

    /// Level asymmetry in `D0` units.
    pub fn epsilon_energy(&self) -> f64 {
        self.epsilon * self.delta()
    }
}

/// Dimensionless couplings of the anisotropic Kondo model.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KondoParams {
    pub rho0_jperp: f64,
    pub rho0_jpar: f64,
    /// Zeeman energy `g muB h` acting on the impurity spin, in `D0` units.
    pub field: f64,
    pub half_bandwidth: f64,
    /// Set when `rho0_jperp >= rho0_jpar`, i.e. outside the longitudinal sector.
    pub transverse_warning: bool,
}

impl KondoParams {
    pub fn new(rho0_jperp: f64, rho0_jpar: f64, field: f64) -> Self {
        KondoParams {
            rho0_jperp,
            rho0_jpar,
            field,
            half_bandwidth: 1.0,
            transverse_warning: rho0_jperp >= rho0_jpar,
        }
    }

    /// Builds couplings from exchange energies given in `D0` units.
    pub fn from_exchange(jperp: f64, jpar: f64, field: f64) -> Self {
        Self::new(jperp * RHO0, jpar * RHO0, field)
    }

    pub fn jperp(&self) -> f64 {
        self.rho0_jperp / RHO0
    }

    pub fn jpar(&self) -> f64 {
        self.rho0_jpar / RHO0
    }

    /// Both exchange couplings multiplied by `factor`.
    pub fn scaled_exchange(&self, factor: f64) -> Self {
        Self::new(
            self.rho0_jperp * factor,
            self.rho0_jpar * factor,
            self.field,
        )
    }

    pub fn with_jperp(&self, jperp: f64) -> Self {
        Self::new(jperp * RHO0, self.rho0_jpar, self.field)
    }

    /// Phase shift `delta` with `tan(delta) = -pi rho0 J_par / 4`.
    pub fn phase_shift(&self) -> f64 {
        (-PI * self.rho0_jpar / 4.0).atan()
    }

    /// Dissipation strength implied by the longitudinal coupling.
    pub fn alpha(&self) -> f64 {
        let r = 1.0 + 2.0 * self.phase_shift() / PI;
        r * r
    }
}

/// Maps a spin-boson point onto the equivalent Kondo couplings.
pub fn map_to_kondo(p: &SpinBosonPoint) -> Result<KondoParams> {
    p.validate()?;
    // branch delta in (-pi/2, 0)
    let delta = 0.5 * PI * (p.alpha.sqrt() - 1.0);
    let rho0_jpar = -(4.0 / PI) * delta.tan();
    let k = KondoParams::new(p.delta_ratio, rho0_jpar, p.epsilon_energy());
    if k.transverse_warning {
        log::warn!(
            "rho0*J_perp = {} >= rho0*J_par = {}: outside the longitudinal sector",
            k.rho0_jperp,
            k.rho0_jpar
        );
    }
    Ok(k)
}

/// Recovers `alpha` from a longitudinal coupling.
pub fn alpha_from_jpar(rho0_jpar: f64) -> f64 {
    KondoParams::new(0.0, rho0_jpar, 0.0).alpha()
}

/// Renormalized tunneling amplitude together with an underflow marker.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TunnelingScale {
    /// `Delta_r` in `D0` units.
    pub value: f64,
    pub underflow: bool,
}

/// `Delta_r = omega_c (Delta / omega_c)^(1 / (1 - alpha))`.
pub fn renormalized_tunneling(p: &SpinBosonPoint) -> Result<TunnelingScale> {
    if !(p.alpha > 0.0 && p.alpha < 1.0) {
        return Err(Error::UnsupportedSector(p.alpha));
    }
    let value = p.wc * p.delta_ratio.powf(1.0 / (1.0 - p.alpha));
    if value < f64::MIN_POSITIVE {
        Ok(TunnelingScale {
            value: f64::MIN_POSITIVE,
            underflow: true,
        })
    } else {
        Ok(TunnelingScale {
            value,
            underflow: false,
        })
    }
}

/// The `alpha = 0` values `(sx, sz) = (Delta, epsilon) / sqrt(epsilon^2 + Delta^2)`.
pub fn noninteracting_reference(delta: f64, epsilon: f64) -> (f64, f64) {
    let r = delta.hypot(epsilon);
    (delta / r, epsilon / r)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    #[test]
    fn quarter_alpha_gives_four_over_pi() {
        let p = SpinBosonPoint::new(0.25, 0.0, 0.04).unwrap();
        let k = map_to_kondo(&p).unwrap();
        assert_abs_diff_eq!(k.rho0_jpar, 4.0 / PI, epsilon = 1e-14);
        assert_abs_diff_eq!(k.rho0_jpar, 1.27324, epsilon = 1e-5);
        assert_eq!(k.rho0_jperp, 0.04);
        assert_eq!(k.field, 0.0);
        assert!(!k.transverse_warning);
    }

    #[test]
    fn alpha_one_is_zero_coupling_limit() {
        assert_abs_diff_eq!(alpha_from_jpar(0.0), 1.0, epsilon = 1e-15);
        assert!(matches!(
            SpinBosonPoint::new(1.0, 0.0, 0.04),
            Err(Error::UnsupportedSector(_))
        ));
    }

    #[test]
    fn rejects_out_of_range_inputs() {
        assert!(SpinBosonPoint::new(0.0, 0.0, 0.04).is_err());
        assert!(SpinBosonPoint::new(1.2, 0.0, 0.04).is_err());
        assert!(SpinBosonPoint::new(0.5, 0.0, 0.0).is_err());
        assert!(SpinBosonPoint::new(0.5, 0.0, 0.2).is_err());
        assert!(SpinBosonPoint::new(0.5, -0.1, 0.04).is_err());
        assert!(SpinBosonPoint::new(0.5, f64::NAN, 0.04).is_err());
    }

    #[test]
    fn field_is_epsilon_times_delta() {
        let p = SpinBosonPoint::new(0.5, 0.1, 0.04).unwrap();
        let k = map_to_kondo(&p).unwrap();
        assert_abs_diff_eq!(k.field, 0.1 * 0.08, epsilon = 1e-16);
        assert_abs_diff_eq!(k.jperp(), p.delta(), epsilon = 1e-16);
    }

    #[test]
    fn transverse_warning_set_when_jperp_exceeds_jpar() {
        // alpha = 0.999 gives rho0 J_par ~ 1e-3 < 0.04
        let p = SpinBosonPoint::new(0.999, 0.0, 0.04).unwrap();
        assert!(map_to_kondo(&p).unwrap().transverse_warning);
    }

    #[test]
    fn renormalized_tunneling_examples() {
        let p = SpinBosonPoint::new(0.5, 0.0, 0.04).unwrap();
        let s = renormalized_tunneling(&p).unwrap();
        assert_abs_diff_eq!(s.value / OMEGA_C, 1.6e-3, epsilon = 1e-15);

        let p = SpinBosonPoint::new(1e-9, 0.0, 0.04).unwrap();
        let s = renormalized_tunneling(&p).unwrap();
        assert_abs_diff_eq!(s.value / OMEGA_C, 0.04, epsilon = 1e-9);

        let p = SpinBosonPoint::new(0.9, 0.0, 0.04).unwrap();
        let s = renormalized_tunneling(&p).unwrap();
        let direct = 0.04f64 * 0.04 * 0.04 * 0.04 * 0.04 * 0.04 * 0.04 * 0.04 * 0.04 * 0.04;
        assert!(((s.value / OMEGA_C) / direct - 1.0).abs() < 1e-12);
        assert!(((s.value / OMEGA_C) / 1.048576e-14 - 1.0).abs() < 1e-6);
        assert!(!s.underflow);
    }

    #[test]
    fn renormalized_tunneling_underflow_clamps() {
        let p = SpinBosonPoint {
            alpha: 0.9999,
            epsilon: 0.0,
            delta_ratio: 0.04,
            wc: OMEGA_C,
        };
        let s = renormalized_tunneling(&p).unwrap();
        assert!(s.underflow);
        assert_eq!(s.value, f64::MIN_POSITIVE);
    }

    #[test]
    fn noninteracting_examples() {
        assert_eq!(noninteracting_reference(0.08, 0.0), (1.0, 0.0));
        let (sx, sz) = noninteracting_reference(1.0, 1.0);
        assert_abs_diff_eq!(sx, 0.5f64.sqrt(), epsilon = 1e-15);
        assert_abs_diff_eq!(sz, 0.5f64.sqrt(), epsilon = 1e-15);
        let (sx, sz) = noninteracting_reference(1.0, 3.0);
        assert_abs_diff_eq!(sx, 1.0 / 10f64.sqrt(), epsilon = 1e-15);
        assert_abs_diff_eq!(sz, 3.0 / 10f64.sqrt(), epsilon = 1e-15);
        assert_abs_diff_eq!(sx, 0.31623, epsilon = 1e-5);
        assert_abs_diff_eq!(sz, 0.94868, epsilon = 1e-5);
    }

    proptest! {
        #[test]
        fn alpha_round_trip(alpha in 1e-4f64..0.9999) {
            let p = SpinBosonPoint::new(alpha, 0.0, 0.04).unwrap();
            let k = map_to_kondo(&p).unwrap();
            prop_assert!(k.rho0_jpar > 0.0);
            prop_assert!((alpha_from_jpar(k.rho0_jpar) - alpha).abs() < 1e-12);
        }

        #[test]
        fn jpar_strictly_decreasing(a in 1e-3f64..0.99, da in 1e-4f64..0.005) {
            let b = (a + da).min(0.9999);
            let ka = map_to_kondo(&SpinBosonPoint::new(a, 0.0, 0.04).unwrap()).unwrap();
            let kb = map_to_kondo(&SpinBosonPoint::new(b, 0.0, 0.04).unwrap()).unwrap();
            prop_assert!(kb.rho0_jpar < ka.rho0_jpar);
        }

        #[test]
        fn renormalized_tunneling_decreasing(a in 0.01f64..0.9, da in 1e-3f64..0.05, r in 1e-3f64..0.1) {
            let pa = SpinBosonPoint::new(a, 0.0, r).unwrap();
            let pb = SpinBosonPoint::new(a + da, 0.0, r).unwrap();
            prop_assert!(renormalized_tunneling(&pb).unwrap().value < renormalized_tunneling(&pa).unwrap().value);
        }

        #[test]
        fn noninteracting_unit_norm(d in 1e-6f64..10.0, e in 0.0f64..100.0) {
            let (sx, sz) = noninteracting_reference(d, e);
            prop_assert!(((sx * sx + sz * sz).sqrt() - 1.0).abs() < 1e-14);
        }
    }

    #[test]
    fn jpar_diverges_toward_zero_alpha() {
        let k = map_to_kondo(&SpinBosonPoint::new(1e-8, 0.0, 0.04).unwrap()).unwrap();
        assert!(k.rho0_jpar > 1e3);
    }
}
