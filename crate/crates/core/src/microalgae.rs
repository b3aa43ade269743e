//! Light- and nutrient-limited Monod growth of a microalgae culture.
//!
//! Respiration is not modelled as a separate flux; it is folded into the
//! carbon fraction `K_CO2`, so carbon uptake is one-directional.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const STATE_NAMES: [&str; 2] = ["X_ALG", "S"];

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct MonodState {
    /// Biomass volume density, μm³/L.
    pub x_alg: f64,
    /// Nutrient concentration, μmol/L.
    pub s: f64,
}

impl MonodState {
    pub fn new(x_alg: f64, s: f64) -> Self {
        Self { x_alg, s }
    }

    pub fn to_array(&self) -> [f64; 2] {
        [self.x_alg, self.s]
    }

    pub fn from_array(a: [f64; 2]) -> Self {
        Self { x_alg: a[0], s: a[1] }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MonodParams {
    /// Maximum growth rate, 1/d.
    pub mu_alg: f64,
    /// Hydraulic retention time, d.
    pub th: f64,
    /// Nutrient half-saturation, μmol/L.
    pub ks: f64,
    /// Light half-saturation.
    pub ksi: f64,
    /// Light inhibition.
    pub kii: f64,
    /// Growth yield.
    pub y: f64,
    /// Inlet nutrient, μmol/L.
    pub s_in: f64,
    /// Carbon dioxide fraction of nutrient uptake.
    pub k_co2: f64,
}

impl MonodParams {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("mu_alg", self.mu_alg),
            ("th", self.th),
            ("ks", self.ks),
            ("ksi", self.ksi),
            ("kii", self.kii),
            ("y", self.y),
            ("s_in", self.s_in),
        ];
        for (name, v) in positive {
            if !(v > 0.0) || !v.is_finite() {
                return Err(Error::Configuration(format!(
                    "microalgae parameter {name} must be positive and finite, got {v}"
                )));
            }
        }
        if !(self.k_co2 > 0.0 && self.k_co2 < 1.0) {
            return Err(Error::Configuration(format!(
                "k_co2 must lie in (0, 1), got {}",
                self.k_co2
            )));
        }
        Ok(())
    }
}

fn check_inputs(s: f64, i: f64) -> Result<()> {
    if !(s >= 0.0) {
        return Err(Error::Domain { what: "S", value: s });
    }
    if !(i >= 0.0) || !i.is_finite() {
        return Err(Error::Domain {
            what: "light intensity",
            value: i,
        });
    }
    Ok(())
}

/// Light factor `I/(I + K_sI + I²/K_iI)`, unimodal with peak at `√(K_sI·K_iI)`.
pub fn light_factor(i: f64, p: &MonodParams) -> f64 {
    i / (i + p.ksi + i * i / p.kii)
}

pub fn growth_rate(s: f64, i: f64, p: &MonodParams) -> Result<f64> {
    check_inputs(s, i)?;
    Ok(p.mu_alg * light_factor(i, p) * (s / (s + p.ks)))
}

/// Specific nutrient uptake `μ/Y`.
pub fn uptake_rho(s: f64, i: f64, p: &MonodParams) -> Result<f64> {
    Ok(growth_rate(s, i, p)? / p.y)
}

/// CO2 flow from the atmosphere into the culture; also the RL reward.
pub fn carbon_uptake(s: f64, i: f64, p: &MonodParams) -> Result<f64> {
    Ok(p.k_co2 * uptake_rho(s, i, p)?)
}

pub fn monod_field(x: &MonodState, i: f64, p: &MonodParams) -> Result<[f64; 2]> {
    if !(x.x_alg >= 0.0) {
        return Err(Error::Domain {
            what: "X_ALG",
            value: x.x_alg,
        });
    }
    let mu = growth_rate(x.s, i, p)?;
    let dil = 1.0 / p.th;
    Ok([mu * x.x_alg - dil * x.x_alg, dil * (p.s_in - x.s) - mu / p.y * x.x_alg])
}

pub fn optimal_light(p: &MonodParams) -> f64 {
    (p.ksi * p.kii).sqrt()
}

/// Uptake at the non-trivial steady state under constant light, where growth
/// balances washout (`μ = 1/T_h`).
pub fn steady_uptake(p: &MonodParams) -> f64 {
    p.k_co2 / (p.y * p.th)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn reference() -> MonodParams {
        crate::config::Config::reference().microalgae.params
    }

    #[test]
    fn growth_rate_zeros() {
        let p = reference();
        assert_eq!(growth_rate(50.0, 0.0, &p).unwrap(), 0.0);
        assert_eq!(growth_rate(0.0, 500.0, &p).unwrap(), 0.0);
        assert!(growth_rate(-1.0, 500.0, &p).is_err());
        assert!(growth_rate(1.0, -500.0, &p).is_err());
    }

    #[test]
    fn optimal_light_examples() {
        let mut p = reference();
        p.ksi = 1.0;
        p.kii = 1.0;
        assert_eq!(optimal_light(&p), 1.0);
        p.ksi = 4.0;
        p.kii = 9.0;
        assert_eq!(optimal_light(&p), 6.0);
    }

    #[test]
    fn light_argmax_on_grid() {
        let p = reference();
        let i_star = optimal_light(&p);
        let h = 0.01;
        let (mut best_i, mut best) = (0.0, f64::MIN);
        for k in 0..300_000 {
            let i = k as f64 * h;
            let v = growth_rate(40.0, i, &p).unwrap();
            if v > best {
                best = v;
                best_i = i;
            }
        }
        assert!((best_i - i_star).abs() <= h);
    }

    #[test]
    fn light_factor_unimodal() {
        let p = reference();
        let i_star = optimal_light(&p);
        let h = i_star / 500.0;
        let mut prev = light_factor(0.0, &p);
        for k in 1..=5000 {
            let i = k as f64 * h;
            let v = light_factor(i, &p);
            if i <= i_star {
                assert!(v > prev, "not increasing at {i}");
            } else if i - h >= i_star {
                assert!(v < prev, "not decreasing at {i}");
            }
            prev = v;
        }
    }

    #[test]
    fn optimal_light_dominates_grid() {
        let p = reference();
        let i_star = optimal_light(&p);
        for k in 0..10 {
            let s = 3.7 + 17.3 * k as f64;
            let best = growth_rate(s, i_star, &p).unwrap();
            for j in 0..1000 {
                let i = 4.0 * i_star * j as f64 / 999.0;
                assert!(growth_rate(s, i, &p).unwrap() <= best);
            }
        }
    }

    #[test]
    fn uptake_chain() {
        let mut p = reference();
        let (s, i) = (30.0, 400.0);
        p.y = 1.0;
        assert_eq!(uptake_rho(s, i, &p).unwrap(), growth_rate(s, i, &p).unwrap());
        p.k_co2 = 0.0;
        assert_eq!(carbon_uptake(s, i, &p).unwrap(), 0.0);
    }

    #[test]
    fn field_equilibria() {
        let p = reference();
        let d = monod_field(&MonodState::new(0.0, 20.0), 300.0, &p).unwrap();
        assert_eq!(d[0], 0.0);
        let d = monod_field(&MonodState::new(0.0, p.s_in), 0.0, &p).unwrap();
        assert_eq!(d, [0.0, 0.0]);
    }

    #[test]
    fn steady_uptake_matches_balance() {
        let p = reference();
        // solve μ(S*, I) = 1/T_h for S* and evaluate uptake there
        let i = 500.0;
        let lf = light_factor(i, &p);
        let target = 1.0 / p.th;
        let s_star = target * p.ks / (p.mu_alg * lf - target);
        let u = carbon_uptake(s_star, i, &p).unwrap();
        assert!((u - steady_uptake(&p)).abs() < 1e-12);
    }

    proptest! {
        #[test]
        fn rho_times_y_is_mu(s in 0.0f64..500.0, i in 0.0f64..3000.0) {
            let p = reference();
            let mu = growth_rate(s, i, &p).unwrap();
            let rho = uptake_rho(s, i, &p).unwrap();
            prop_assert!((rho * p.y - mu).abs() <= 1e-15 * (1.0 + mu));
            prop_assert!(mu >= 0.0 && mu < p.mu_alg);
            prop_assert!(carbon_uptake(s, i, &p).unwrap() >= 0.0);
        }
    }
}
