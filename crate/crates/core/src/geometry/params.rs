use crate::{Error, Result};
use serde::{Deserialize, Serialize};

/// Nature of the traction applied on the free end face.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LoadType {
    /// Strong-axis bending: resultant (0, -P, 0).
    BendingY,
    /// Weak-axis bending: resultant (-P, 0, 0).
    BendingX,
    /// Pure couple about the section centroid, T = P * depth / 2.
    Torsion,
}

impl LoadType {
    pub fn code(self) -> u8 {
        match self {
            LoadType::BendingY => 0,
            LoadType::BendingX => 1,
            LoadType::Torsion => 2,
        }
    }

    pub fn from_code(c: u8) -> Result<Self> {
        match c {
            0 => Ok(LoadType::BendingY),
            1 => Ok(LoadType::BendingX),
            2 => Ok(LoadType::Torsion),
            _ => Err(Error::Other(format!("bad load type code {c}"))),
        }
    }
}

/// Spatial distribution of the traction over the end face.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LoadDist {
    Uniform,
    /// Traction weighted by w(y) = (y - y_min)/(y_max - y_min), rescaled to
    /// preserve the resultant.
    LinearY,
}

impl LoadDist {
    pub fn code(self) -> u8 {
        match self {
            LoadDist::Uniform => 0,
            LoadDist::LinearY => 1,
        }
    }

    pub fn from_code(c: u8) -> Result<Self> {
        match c {
            0 => Ok(LoadDist::Uniform),
            1 => Ok(LoadDist::LinearY),
            _ => Err(Error::Other(format!("bad load dist code {c}"))),
        }
    }
}

/// One sampled point of the parametric space. Units: mm, MPa, N.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BeamParams {
    pub length: f64,
    pub flange_width: f64,
    pub flange_thickness: f64,
    pub web_thickness: f64,
    pub depth: f64,
    pub fillet_radius: f64,
    pub youngs_modulus: f64,
    pub poissons_ratio: f64,
    pub force_magnitude: f64,
    pub load_type: LoadType,
    pub load_dist: LoadDist,
}

impl BeamParams {
    /// The nine continuous fields in canonical order.
    pub fn continuous(&self) -> [f64; 9] {
        [
            self.length,
            self.flange_width,
            self.flange_thickness,
            self.web_thickness,
            self.depth,
            self.fillet_radius,
            self.youngs_modulus,
            self.poissons_ratio,
            self.force_magnitude,
        ]
    }

    pub fn from_continuous(c: [f64; 9], load_type: LoadType, load_dist: LoadDist) -> Self {
        BeamParams {
            length: c[0],
            flange_width: c[1],
            flange_thickness: c[2],
            web_thickness: c[3],
            depth: c[4],
            fillet_radius: c[5],
            youngs_modulus: c[6],
            poissons_ratio: c[7],
            force_magnitude: c[8],
            load_type,
            load_dist,
        }
    }

    /// Structural validity independent of configured ranges.
    pub fn validate(&self) -> Result<()> {
        let err = |field: &str, message: String| {
            Err(Error::InvalidParam {
                field: field.into(),
                message,
            })
        };
        for (name, v) in [
            ("length", self.length),
            ("flange_width", self.flange_width),
            ("flange_thickness", self.flange_thickness),
            ("web_thickness", self.web_thickness),
            ("depth", self.depth),
            ("fillet_radius", self.fillet_radius),
            ("youngs_modulus", self.youngs_modulus),
            ("force_magnitude", self.force_magnitude),
        ] {
            if !(v.is_finite() && v > 0.0) {
                return err(name, format!("must be finite and positive, got {v}"));
            }
        }
        if !(self.poissons_ratio > 0.0 && self.poissons_ratio < 0.5) {
            return err(
                "poissons_ratio",
                format!("must be in (0, 0.5), got {}", self.poissons_ratio),
            );
        }
        if 2.0 * self.flange_thickness >= self.depth {
            return err("flange_thickness", "2*flange_thickness must be < depth".into());
        }
        if self.web_thickness >= self.flange_width {
            return err("web_thickness", "web_thickness must be < flange_width".into());
        }
        let r_max_x = (self.flange_width - self.web_thickness) / 2.0;
        let r_max_y = (self.depth - 2.0 * self.flange_thickness) / 2.0;
        if self.fillet_radius > r_max_x || self.fillet_radius > r_max_y {
            return err(
                "fillet_radius",
                format!(
                    "must be <= min({r_max_x}, {r_max_y}), got {}",
                    self.fillet_radius
                ),
            );
        }
        Ok(())
    }
}

/// Continuous parameter ranges. Defaults follow the published parametric
/// space; Young's modulus covers steel variations (190-210 GPa in MPa).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ParamRanges {
    pub length: (f64, f64),
    pub flange_width: (f64, f64),
    pub flange_thickness: (f64, f64),
    pub web_thickness: (f64, f64),
    pub depth: (f64, f64),
    pub fillet_radius: (f64, f64),
    pub youngs_modulus: (f64, f64),
    pub poissons_ratio: (f64, f64),
    pub force_magnitude: (f64, f64),
}

impl Default for ParamRanges {
    fn default() -> Self {
        ParamRanges {
            length: (280.0, 320.0),
            flange_width: (90.0, 110.0),
            flange_thickness: (13.0, 17.0),
            web_thickness: (8.0, 12.0),
            depth: (140.0, 160.0),
            fillet_radius: (10.0, 14.0),
            youngs_modulus: (190e3, 210e3),
            poissons_ratio: (0.28, 0.32),
            force_magnitude: (50e3, 100e3),
        }
    }
}

impl ParamRanges {
    pub fn as_array(&self) -> [(f64, f64); 9] {
        [
            self.length,
            self.flange_width,
            self.flange_thickness,
            self.web_thickness,
            self.depth,
            self.fillet_radius,
            self.youngs_modulus,
            self.poissons_ratio,
            self.force_magnitude,
        ]
    }

    /// Parameters at every range midpoint.
    pub fn midpoint(&self, load_type: LoadType, load_dist: LoadDist) -> BeamParams {
        let a = self.as_array();
        let mut c = [0.0; 9];
        for (i, (lo, hi)) in a.iter().enumerate() {
            c[i] = 0.5 * (lo + hi);
        }
        BeamParams::from_continuous(c, load_type, load_dist)
    }

    pub fn validate(&self) -> Result<()> {
        for (name, (lo, hi)) in [
            ("length", self.length),
            ("flange_width", self.flange_width),
            ("flange_thickness", self.flange_thickness),
            ("web_thickness", self.web_thickness),
            ("depth", self.depth),
            ("fillet_radius", self.fillet_radius),
            ("youngs_modulus", self.youngs_modulus),
            ("poissons_ratio", self.poissons_ratio),
            ("force_magnitude", self.force_magnitude),
        ] {
            if !(lo.is_finite() && hi.is_finite() && lo < hi) {
                return Err(Error::InvalidParam {
                    field: name.into(),
                    message: format!("bad range ({lo}, {hi})"),
                });
            }
        }
        Ok(())
    }
}

/// Template resolution: axial segment count and cross-section subdivision.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct MeshResolution {
    pub n_len: usize,
    pub n_cross: usize,
}

impl MeshResolution {
    pub fn new(n_len: usize, n_cross: usize) -> Result<Self> {
        if n_len < 2 {
            return Err(Error::InvalidParam {
                field: "n_len".into(),
                message: format!("must be >= 2, got {n_len}"),
            });
        }
        if n_cross < 1 {
            return Err(Error::InvalidParam {
                field: "n_cross".into(),
                message: format!("must be >= 1, got {n_cross}"),
            });
        }
        Ok(MeshResolution { n_len, n_cross })
    }
}
