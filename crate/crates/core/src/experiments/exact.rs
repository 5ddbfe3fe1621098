//! Analytic exact parameters, evaluable anywhere in the unit square.

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "shape", rename_all = "lowercase")]
pub enum Region {
    Rectangle { min: [f64; 2], max: [f64; 2] },
    Disk { center: [f64; 2], radius: f64 },
    Union { parts: Vec<Region> },
}

impl Region {
    /// Closed-set membership.
    pub fn contains(&self, x: f64, y: f64) -> bool {
        match self {
            Region::Rectangle { min, max } => min[0] <= x && x <= max[0] && min[1] <= y && y <= max[1],
            Region::Disk { center, radius } => (x - center[0]).hypot(y - center[1]) <= *radius,
            Region::Union { parts } => parts.iter().any(|r| r.contains(x, y)),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum ExactTerm {
    Constant {
        value: f64,
    },
    /// `amplitude · exp(-½ Σ ((scale_i x_i - offset_i) / width)²)`.
    Gaussian {
        amplitude: f64,
        scale: [f64; 2],
        offset: [f64; 2],
        width: f64,
    },
    Indicator {
        amplitude: f64,
        region: Region,
    },
    /// Pyramid of the given height over a square of side `support`.
    Hat {
        center: [f64; 2],
        support: f64,
        height: f64,
    },
}

impl ExactTerm {
    pub fn eval(&self, x: f64, y: f64) -> f64 {
        match self {
            ExactTerm::Constant { value } => *value,
            ExactTerm::Gaussian {
                amplitude,
                scale,
                offset,
                width,
            } => {
                let a = (scale[0] * x - offset[0]) / width;
                let b = (scale[1] * y - offset[1]) / width;
                amplitude * (-0.5 * (a * a + b * b)).exp()
            }
            ExactTerm::Indicator { amplitude, region } => {
                if region.contains(x, y) {
                    *amplitude
                } else {
                    0.0
                }
            }
            ExactTerm::Hat { center, support, height } => {
                let half = 0.5 * support;
                let d = ((x - center[0]).abs()).max((y - center[1]).abs());
                height * (1.0 - d / half).max(0.0)
            }
        }
    }

    /// Isotropic Gaussian bump of given center and standard deviation.
    pub fn bump(center: [f64; 2], sigma: f64, amplitude: f64) -> Self {
        ExactTerm::Gaussian {
            amplitude,
            scale: [1.0, 1.0],
            offset: center,
            width: sigma,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ExactParameterSpec {
    pub terms: Vec<ExactTerm>,
}

impl ExactParameterSpec {
    pub fn eval(&self, x: f64, y: f64) -> f64 {
        self.terms.iter().map(|t| t.eval(x, y)).sum()
    }

    /// Background plus two Gaussians with prefactor `1/(2πσ²)`.
    pub fn reaction_gaussians(background: f64, sigma: f64) -> Self {
        let amplitude = 1.0 / (2.0 * std::f64::consts::PI * sigma * sigma);
        let g = |s: f64| ExactTerm::Gaussian {
            amplitude,
            scale: [s, s],
            offset: [0.5, 0.5],
            width: 0.1,
        };
        Self {
            terms: vec![ExactTerm::Constant { value: background }, g(2.0), g(0.8)],
        }
    }

    /// Background with a raised frame-like region and a lowered disk.
    pub fn diffusion_inclusions(background: f64, contrast: f64) -> Self {
        let t = |v: f64| v / 30.0;
        let rect = |x0: f64, x1: f64, y0: f64, y1: f64| Region::Rectangle {
            min: [t(x0), t(y0)],
            max: [t(x1), t(y1)],
        };
        let omega1 = Region::Union {
            parts: vec![
                rect(5.0, 9.0, 3.0, 27.0),
                rect(9.0, 27.0, 3.0, 7.0),
                rect(9.0, 27.0, 23.0, 27.0),
            ],
        };
        let omega2 = Region::Disk {
            center: [t(18.0), t(15.0)],
            radius: t(4.0),
        };
        Self {
            terms: vec![
                ExactTerm::Constant { value: background },
                ExactTerm::Indicator {
                    amplitude: contrast,
                    region: omega1,
                },
                ExactTerm::Indicator {
                    amplitude: -2.0,
                    region: omega2,
                },
            ],
        }
    }

    /// Gaussian, pyramid and two square obstacles on a constant background.
    pub fn mixed_features(background: f64) -> Self {
        let square = |x0: f64, y0: f64| Region::Rectangle {
            min: [x0, y0],
            max: [x0 + 0.2, y0 + 0.2],
        };
        Self {
            terms: vec![
                ExactTerm::Constant { value: background },
                ExactTerm::bump([0.25, 0.75], 0.05, 2.0),
                ExactTerm::Hat {
                    center: [0.75, 0.75],
                    support: 0.3,
                    height: 2.0,
                },
                ExactTerm::Indicator {
                    amplitude: 2.0,
                    region: square(0.55, 0.15),
                },
                ExactTerm::Indicator {
                    amplitude: -1.5,
                    region: square(0.15, 0.15),
                },
            ],
        }
    }
}
