//! Device and noise-model configuration files (TOML) and built-in presets
//! for the two characterized devices.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fit::{FitReport, FluctuatorFit, NoiseParameters};
use crate::pulse::GateCalibration;
use crate::transmon::{fit_circuit_params, solve_spectrum, TransmonSpec, TransmonSpectrum};
use crate::units::mk_to_ghz;

pub const PRESETS: [&str; 2] = ["quito", "lima"];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DeviceConfig {
    pub name: String,
    /// Qubit frequency, GHz.
    pub qubit_frequency: f64,
    /// Anharmonicity magnitude, GHz.
    pub anharmonicity: f64,
    #[serde(default = "default_levels")]
    pub n_levels: usize,
    #[serde(default)]
    pub gates: GateCalibration,
}

fn default_levels() -> usize {
    4
}

impl DeviceConfig {
    pub fn preset(name: &str) -> Result<Self> {
        let (f, a) = match name.to_ascii_lowercase().as_str() {
            "quito" => (5.0806, 0.3192),
            "lima" => (5.1277, 0.3183),
            _ => return Err(Error::Config(format!("unknown device {name:?}; presets are {}", PRESETS.join(", ")))),
        };
        Ok(Self {
            name: name.to_ascii_lowercase(),
            qubit_frequency: f,
            anharmonicity: a,
            n_levels: default_levels(),
            gates: GateCalibration::default(),
        })
    }

    pub fn from_toml(s: &str) -> Result<Self> {
        toml::from_str(s).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string_pretty(self).map_err(|e| Error::Config(e.to_string()))
    }

    /// A preset name or a path to a TOML file.
    pub fn resolve(name_or_path: &str) -> Result<Self> {
        let path = Path::new(name_or_path);
        if path.exists() {
            Self::from_toml(&std::fs::read_to_string(path)?)
        } else {
            Self::preset(name_or_path)
        }
    }

    /// Circuit parameters reproducing the frequencies, then the truncated spectrum.
    pub fn spectrum(&self) -> Result<TransmonSpectrum> {
        let (e_c, e_j) = fit_circuit_params(self.qubit_frequency, self.anharmonicity)?;
        let spec = TransmonSpec::new(e_c, e_j)?;
        let spec = spec.with_truncation(spec.n_max, self.n_levels.max(spec.n_levels))?;
        solve_spectrum(&spec)?.truncated(self.n_levels)
    }
}

/// Fitted bath parameters of a preset device.
pub fn noise_preset(name: &str) -> Result<NoiseParameters> {
    let (g_x, g_z, omega_c_x, omega_c_z, b, gamma_max) = match name.to_ascii_lowercase().as_str() {
        "quito" => (5.734e-3, 4.413e-3, 1.948, 5.690e-3, 0.598e-3, 0.051),
        "lima" => (4.782e-3, 9.393e-3, 2.340, 5.979e-3, 0.323e-3, 0.083),
        _ => return Err(Error::Config(format!("no noise preset for {name:?}"))),
    };
    Ok(NoiseParameters {
        g_x,
        omega_c_x,
        g_z,
        omega_c_z,
        fluctuators: Some(FluctuatorFit { b, gamma_max }),
        temperature: mk_to_ghz(20.0),
        gamma_min: 1e-4,
        eta: 1e-4,
        n_fluctuators: 10,
        fluctuator_seed: 0,
    })
}

/// Reads noise parameters from a preset name, a parameter file or a fit
/// report.
pub fn resolve_noise(name_or_path: &str) -> Result<NoiseParameters> {
    let path = Path::new(name_or_path);
    if !path.exists() {
        return noise_preset(name_or_path);
    }
    let text = std::fs::read_to_string(path)?;
    if let Ok(report) = FitReport::from_toml(&text) {
        return Ok(report.parameters);
    }
    toml::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
}
