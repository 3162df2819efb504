use crate::{Error, Result};
use serde::{Deserialize, Serialize};

/// Isotropic linear elastic material. Units: MPa.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MaterialModel {
    pub e: f64,
    pub nu: f64,
    pub lambda: f64,
    pub mu: f64,
}

/// Lame parameters from Young's modulus and Poisson's ratio.
pub fn lame_params(e: f64, nu: f64) -> Result<(f64, f64)> {
    if !(nu > 0.0 && nu < 0.5) || !(e > 0.0) {
        return Err(Error::InvalidMaterial { nu });
    }
    let lambda = e * nu / ((1.0 + nu) * (1.0 - 2.0 * nu));
    let mu = e / (2.0 * (1.0 + nu));
    Ok((lambda, mu))
}

impl MaterialModel {
    pub fn new(e: f64, nu: f64) -> Result<Self> {
        let (lambda, mu) = lame_params(e, nu)?;
        Ok(MaterialModel { e, nu, lambda, mu })
    }

    /// Shear modulus alias.
    pub fn shear_modulus(&self) -> f64 {
        self.mu
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn steel_reference_values() {
        let (lambda, mu) = lame_params(200_000.0, 0.3).unwrap();
        assert!((mu - 76_923.076923076923).abs() < 1e-9);
        assert!((lambda - 115_384.61538461539).abs() < 1e-9);
    }

    #[test]
    fn nu_to_zero_limit() {
        let (lambda, mu) = lame_params(100.0, 1e-12).unwrap();
        assert!(lambda.abs() < 1e-9);
        assert!((mu - 50.0).abs() < 1e-9);
    }

    #[test]
    fn lame_round_trip() {
        let (e, nu) = (190_000.0, 0.28);
        let (lambda, mu) = lame_params(e, nu).unwrap();
        // Inverse formulas.
        let e_back = mu * (3.0 * lambda + 2.0 * mu) / (lambda + mu);
        let nu_back = lambda / (2.0 * (lambda + mu));
        assert!(((e_back - e) / e).abs() < 1e-12);
        assert!(((nu_back - nu) / nu).abs() < 1e-12);
    }

    #[test]
    fn invalid_nu_rejected() {
        assert!(lame_params(100.0, 0.5).is_err());
        assert!(lame_params(100.0, -0.1).is_err());
        assert!(lame_params(100.0, 0.7).is_err());
    }
}
