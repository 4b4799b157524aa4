//! Scenario constants and the JSON system configuration.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Deployment scenario for the 3GPP-style pathloss model.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
pub enum Scenario {
    #[default]
    UMi,
    UMa,
}

/// Geometry and propagation constants bundled with a [`Scenario`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScenarioParams {
    /// Distance coefficient of the pathloss in dB per decade.
    pub pathloss_exponent: f64,
    pub shadowing_std_db: f64,
    pub isd_m: f64,
    pub ap_height_m: f64,
    pub ue_height_m: f64,
    pub min_distance_m: f64,
    /// Distance at which the association threshold equals the
    /// shadowing-free pathloss.
    pub threshold_distance_m: f64,
    pub p_max_dbm: f64,
}

impl Scenario {
    pub fn params(self) -> ScenarioParams {
        match self {
            Scenario::UMi => ScenarioParams {
                pathloss_exponent: 31.9,
                shadowing_std_db: 8.2,
                isd_m: 200.0,
                ap_height_m: 10.0,
                ue_height_m: 1.5,
                min_distance_m: 10.0,
                threshold_distance_m: 200.0,
                p_max_dbm: 44.0,
            },
            Scenario::UMa => ScenarioParams {
                pathloss_exponent: 30.0,
                shadowing_std_db: 7.8,
                isd_m: 500.0,
                ap_height_m: 25.0,
                ue_height_m: 1.5,
                min_distance_m: 35.0,
                threshold_distance_m: 450.0,
                p_max_dbm: 49.0,
            },
        }
    }
}

/// Channel estimator variant.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum EstimatorMode {
    /// Pilot-length factor appears in both the observation and the Gram term.
    #[default]
    Consistent,
    /// Gram term without the pilot-length factor.
    Verbatim,
}

pub fn dbm_to_watts(dbm: f64) -> f64 {
    10f64.powf((dbm - 30.0) / 10.0)
}

pub fn db_to_linear(db: f64) -> f64 {
    10f64.powf(db / 10.0)
}

pub fn linear_to_db(x: f64) -> f64 {
    10.0 * x.log10()
}

/// System configuration; JSON field names follow the usual table notation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SystemConfig {
    #[serde(rename = "M")]
    pub m: usize,
    #[serde(rename = "N")]
    pub n: usize,
    #[serde(rename = "K")]
    pub k: usize,
    pub tau_c: usize,
    #[serde(rename = "N_T")]
    pub n_t: usize,
    /// Overrides the scenario default when present.
    #[serde(rename = "P_max_dBm", default, skip_serializing_if = "Option::is_none")]
    pub p_max_dbm: Option<f64>,
    #[serde(rename = "p_ul_dBm")]
    pub p_ul_dbm: f64,
    #[serde(rename = "f_c_GHz")]
    pub f_c_ghz: f64,
    #[serde(rename = "B_Hz")]
    pub bandwidth_hz: f64,
    #[serde(rename = "N0_dBm_per_Hz")]
    pub n0_dbm_per_hz: f64,
    #[serde(rename = "N_F_dB")]
    pub noise_figure_db: f64,
    #[serde(default)]
    pub scenario: Scenario,
    #[serde(rename = "ISD_m", default, skip_serializing_if = "Option::is_none")]
    pub isd_m: Option<f64>,
    #[serde(default)]
    pub estimator: EstimatorMode,
    #[serde(default)]
    pub rng_seed: u64,
}

impl Default for SystemConfig {
    fn default() -> Self {
        Self::table()
    }
}

impl SystemConfig {
    /// Full-scale UMi setup: 7 APs with 8 antennas, 35 UEs.
    pub fn table() -> Self {
        Self {
            m: 7,
            n: 8,
            k: 35,
            tau_c: 200,
            n_t: 10,
            p_max_dbm: None,
            p_ul_dbm: 23.0,
            f_c_ghz: 6.0,
            bandwidth_hz: 20e6,
            n0_dbm_per_hz: -174.0,
            noise_figure_db: 9.0,
            scenario: Scenario::UMi,
            isd_m: None,
            estimator: EstimatorMode::Consistent,
            rng_seed: 0,
        }
    }

    /// Laptop-scale default: small enough for exhaustive search (Bell(6)=203).
    pub fn desk() -> Self {
        Self { m: 3, n: 2, k: 6, tau_c: 100, n_t: 5, ..Self::table() }
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("M", self.m),
            ("N", self.n),
            ("K", self.k),
            ("tau_c", self.tau_c),
            ("N_T", self.n_t),
        ];
        for (name, v) in positive {
            if v == 0 {
                return Err(Error::Config(format!("{name} must be at least 1")));
            }
        }
        if !(self.bandwidth_hz > 0.0) {
            return Err(Error::Config("bandwidth must be positive".into()));
        }
        if !(self.f_c_ghz > 0.0) {
            return Err(Error::Config("carrier frequency must be positive".into()));
        }
        if !self.p_ul_dbm.is_finite() || !self.p_max_dbm().is_finite() {
            return Err(Error::Config("powers must be finite".into()));
        }
        if let Some(isd) = self.isd_m {
            if !(isd > 0.0) {
                return Err(Error::Config("ISD must be positive".into()));
            }
        }
        Ok(())
    }

    pub fn params(&self) -> ScenarioParams {
        let mut p = self.scenario.params();
        if let Some(isd) = self.isd_m {
            p.isd_m = isd;
        }
        p
    }

    pub fn p_max_dbm(&self) -> f64 {
        self.p_max_dbm.unwrap_or_else(|| self.scenario.params().p_max_dbm)
    }

    pub fn p_max_w(&self) -> f64 {
        dbm_to_watts(self.p_max_dbm())
    }

    pub fn p_ul_w(&self) -> f64 {
        dbm_to_watts(self.p_ul_dbm)
    }

    /// Thermal noise power over the band in dBm.
    pub fn noise_dbm(&self) -> f64 {
        self.n0_dbm_per_hz + 10.0 * self.bandwidth_hz.log10() + self.noise_figure_db
    }

    pub fn noise_w(&self) -> f64 {
        dbm_to_watts(self.noise_dbm())
    }

    /// Association threshold in dB.
    pub fn rho_db(&self) -> f64 {
        let p = self.params();
        -32.4 - 20.0 * self.f_c_ghz.log10() - p.pathloss_exponent * p.threshold_distance_m.log10()
    }

    pub fn rho(&self) -> f64 {
        db_to_linear(self.rho_db())
    }

    pub fn with_scale(&self, m: usize, n: usize, k: usize) -> Self {
        Self { m, n, k, ..self.clone() }
    }
}

/// Noise power in watts from the band parameters.
pub fn noise_power(config: &SystemConfig) -> f64 {
    config.noise_w()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn noise_power_for_20mhz() {
        let c = SystemConfig::table();
        // -174 + 10*log10(2e7) + 9 = -174 + 73.0103 + 9
        assert!((c.noise_dbm() - (-91.98970004336019)).abs() < 1e-9);
        assert!((linear_to_db(noise_power(&c)) + 30.0 - c.noise_dbm()).abs() < 1e-9);
    }

    #[test]
    fn noise_power_one_hz_no_figure() {
        let c = SystemConfig { bandwidth_hz: 1.0, noise_figure_db: 0.0, ..SystemConfig::table() };
        assert!((c.noise_dbm() + 174.0).abs() < 1e-12);
    }

    #[test]
    fn doubling_bandwidth_adds_3db() {
        let a = SystemConfig::table();
        let b = SystemConfig { bandwidth_hz: 40e6, ..a.clone() };
        assert!((b.noise_dbm() - a.noise_dbm() - 10.0 * 2f64.log10()).abs() < 1e-12);
    }

    #[test]
    fn json_uses_table_notation() {
        let c = SystemConfig::desk();
        let s = serde_json::to_string(&c).unwrap();
        for key in ["\"M\"", "\"N\"", "\"K\"", "\"tau_c\"", "\"N_T\"", "\"p_ul_dBm\"", "\"B_Hz\""] {
            assert!(s.contains(key), "{key} missing in {s}");
        }
        let back: SystemConfig = serde_json::from_str(&s).unwrap();
        assert_eq!(back, c);
        let with_pmax: SystemConfig =
            serde_json::from_str(&s.replace("\"M\":3", "\"M\":3,\"P_max_dBm\":40.0")).unwrap();
        assert_eq!(with_pmax.p_max_dbm(), 40.0);
    }

    #[test]
    fn validation_rejects_zero_dims() {
        let c = SystemConfig { k: 0, ..SystemConfig::desk() };
        assert!(c.validate().is_err());
        let c = SystemConfig { bandwidth_hz: 0.0, ..SystemConfig::desk() };
        assert!(c.validate().is_err());
    }
}
