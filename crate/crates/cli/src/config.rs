//! Flat `key = value` configuration with dotted section keys.
//!
//! Angles named `*_deg` are given in degrees and stored in radians.

use std::fmt::Write as _;

use lcsmooth::frontend::ClosureParams;
use lcsmooth::sim::SimConfig;
use lcsmooth::solver::{Hyperparameters, SolverConfig};
use sha2::{Digest, Sha256};

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum ConfigError {
    #[error("line {line}: expected `key = value`")]
    Syntax { line: usize },
    #[error("line {line}: unknown key `{key}`")]
    UnknownKey { line: usize, key: String },
    #[error("line {line}: `{key}` has invalid value `{value}`")]
    BadValue { line: usize, key: String, value: String },
    #[error("`{key}` must be {rule}, got {value}")]
    Invalid { key: String, rule: &'static str, value: String },
}

#[derive(Clone, Debug, PartialEq)]
pub struct PipelineConfig {
    pub seed: u64,
    pub hyper: Hyperparameters<f64>,
    pub frontend: ClosureParams,
    pub solver: SolverConfig<f64>,
    pub sim: SimConfig,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            seed: 1,
            hyper: Hyperparameters::default(),
            frontend: ClosureParams::default(),
            solver: SolverConfig::default(),
            sim: SimConfig::default(),
        }
    }
}

#[derive(Clone, Copy, PartialEq, Eq)]
enum Rule {
    Positive,
    NonNegative,
    Any,
}

enum Slot<'a> {
    F(&'a mut f64),
    Deg(&'a mut f64),
    U(&'a mut usize),
    Seed(&'a mut u64),
    B(&'a mut bool),
}

impl Slot<'_> {
    fn render(&self) -> String {
        match self {
            Slot::F(v) => v.to_string(),
            Slot::Deg(v) => v.to_degrees().to_string(),
            Slot::U(v) => v.to_string(),
            Slot::Seed(v) => v.to_string(),
            Slot::B(v) => v.to_string(),
        }
    }

    fn set(&mut self, s: &str) -> bool {
        match self {
            Slot::F(v) => s.parse().ok().filter(|x: &f64| x.is_finite()).map(|x| **v = x).is_some(),
            Slot::Deg(v) => s.parse().ok().filter(|x: &f64| x.is_finite()).map(|x| **v = x.to_radians()).is_some(),
            Slot::U(v) => s.parse().map(|x| **v = x).is_ok(),
            Slot::Seed(v) => s.parse().map(|x| **v = x).is_ok(),
            Slot::B(v) => s.parse().map(|x| **v = x).is_ok(),
        }
    }

    fn check(&self, rule: Rule) -> bool {
        let x = match self {
            Slot::F(v) | Slot::Deg(v) => **v,
            Slot::U(v) => **v as f64,
            Slot::Seed(_) | Slot::B(_) => return true,
        };
        match rule {
            Rule::Positive => x > 0.0,
            Rule::NonNegative => x >= 0.0,
            Rule::Any => true,
        }
    }
}

impl PipelineConfig {
    /// Every configurable key in canonical order.
    fn slots(&mut self) -> Vec<(&'static str, Slot<'_>, Rule)> {
        use Rule::*;
        use Slot::*;
        let h = &mut self.hyper;
        let f = &mut self.frontend;
        let s = &mut self.solver;
        let sim = &mut self.sim;
        let [pp_x, pp_y, pp_z] = &mut sim.drift.psd_phi;
        let [pr_x, pr_y, pr_z] = &mut sim.drift.psd_rho;
        vec![
            ("seed", Seed(&mut self.seed), Any),
            ("hyper.q_omega", F(&mut h.q_omega), Positive),
            ("hyper.q_nu", F(&mut h.q_nu), Positive),
            ("hyper.sigma_phi", F(&mut h.sigma_phi), Positive),
            ("hyper.sigma_rho", F(&mut h.sigma_rho), Positive),
            ("hyper.sigma_rp_deg", Deg(&mut h.sigma_rp), Positive),
            ("hyper.sigma_z", F(&mut h.sigma_z), Positive),
            ("frontend.delta_r", F(&mut f.delta_r), Positive),
            ("frontend.min_separation", F(&mut f.min_separation), NonNegative),
            ("frontend.time_window", F(&mut f.time_window), Positive),
            ("frontend.voxel", F(&mut f.voxel), Positive),
            ("frontend.k_normals", U(&mut f.k_normals), Positive),
            ("frontend.min_points", U(&mut f.min_points), Positive),
            ("frontend.sigma_phi_deg", Deg(&mut f.sigma_phi), Positive),
            ("frontend.sigma_rho", F(&mut f.sigma_rho), Positive),
            ("icp.max_iterations", U(&mut f.icp.max_iterations), Positive),
            ("icp.tol_phi", F(&mut f.icp.tol_phi), Positive),
            ("icp.tol_rho", F(&mut f.icp.tol_rho), Positive),
            ("icp.max_correspondence", F(&mut f.icp.max_correspondence), Positive),
            ("icp.plane_threshold", F(&mut f.icp.plane_threshold), NonNegative),
            ("icp.frmsd_lambda", F(&mut f.icp.frmsd_lambda), NonNegative),
            ("icp.frmsd_min_fraction", F(&mut f.icp.frmsd_min_fraction), Positive),
            ("icp.frmsd_step", F(&mut f.icp.frmsd_step), Positive),
            ("icp.min_inlier_fraction", F(&mut f.icp.min_inlier_fraction), NonNegative),
            ("icp.divergence_limit", U(&mut f.icp.divergence_limit), Positive),
            ("icp.point_sigma", F(&mut f.icp.point_sigma), Positive),
            ("solver.max_iterations", U(&mut s.max_iterations), Positive),
            ("solver.step_tolerance", F(&mut s.step_tolerance), Positive),
            ("solver.damping", F(&mut s.damping), NonNegative),
            ("solver.robust", B(&mut s.robust.enabled), Any),
            ("solver.sigma_phi_out_deg", Deg(&mut s.robust.sigma_phi_out), Positive),
            ("solver.sigma_rho_out", F(&mut s.robust.sigma_rho_out), Positive),
            ("sim.passes", U(&mut sim.passes), Positive),
            ("sim.pass_length", F(&mut sim.pass_length), Positive),
            ("sim.lane_spacing", F(&mut sim.lane_spacing), Positive),
            ("sim.pass_overhang", F(&mut sim.pass_overhang), NonNegative),
            ("sim.tie_overrun", F(&mut sim.tie_overrun), NonNegative),
            ("sim.speed", F(&mut sim.speed), Positive),
            ("sim.rate_hz", F(&mut sim.rate_hz), Positive),
            ("sim.vehicle_depth", F(&mut sim.vehicle_depth), Any),
            ("sim.drift.yaw_bias", F(&mut sim.drift.yaw_bias), Any),
            ("sim.drift.scale_factor", F(&mut sim.drift.scale_factor), Any),
            ("sim.drift.psd_phi_x", F(pp_x), NonNegative),
            ("sim.drift.psd_phi_y", F(pp_y), NonNegative),
            ("sim.drift.psd_phi_z", F(pp_z), NonNegative),
            ("sim.drift.psd_rho_x", F(pr_x), NonNegative),
            ("sim.drift.psd_rho_y", F(pr_y), NonNegative),
            ("sim.drift.psd_rho_z", F(pr_z), NonNegative),
            ("sim.terrain.base_depth", F(&mut sim.terrain.base_depth), Any),
            ("sim.terrain.bump_density", F(&mut sim.terrain.bump_density), NonNegative),
            ("sim.terrain.amplitude_min", F(&mut sim.terrain.amplitude.0), Any),
            ("sim.terrain.amplitude_max", F(&mut sim.terrain.amplitude.1), Any),
            ("sim.terrain.sigma_min", F(&mut sim.terrain.sigma.0), Positive),
            ("sim.terrain.sigma_max", F(&mut sim.terrain.sigma.1), Positive),
            ("sim.terrain.crossing_cluster", U(&mut sim.terrain.crossing_cluster), NonNegative),
            ("sim.scanner.rate_hz", F(&mut sim.scanner.rate_hz), Positive),
            ("sim.scanner.beams", U(&mut sim.scanner.beams), Positive),
            ("sim.scanner.half_angle_deg", Deg(&mut sim.scanner.half_angle), Positive),
            ("sim.scanner.max_range", F(&mut sim.scanner.max_range), Positive),
            ("sim.scanner.noise", F(&mut sim.scanner.noise), NonNegative),
            ("sim.closure_sigma_phi_deg", Deg(&mut sim.closure_sigma_phi), Positive),
            ("sim.closure_sigma_rho", F(&mut sim.closure_sigma_rho), Positive),
        ]
    }

    /// Applies the settings in `text` over the defaults and validates the
    /// result.
    pub fn parse(text: &str) -> Result<Self, ConfigError> {
        let mut cfg = Self::default();
        cfg.apply(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    fn apply(&mut self, text: &str) -> Result<(), ConfigError> {
        let mut slots = self.slots();
        for (i, raw) in text.lines().enumerate() {
            let line = i + 1;
            let content = raw.split('#').next().unwrap_or("").trim();
            if content.is_empty() {
                continue;
            }
            let (key, value) = content.split_once('=').ok_or(ConfigError::Syntax { line })?;
            let (key, value) = (key.trim(), value.trim());
            let slot = slots
                .iter_mut()
                .find(|(k, _, _)| *k == key)
                .ok_or_else(|| ConfigError::UnknownKey { line, key: key.to_string() })?;
            if !slot.1.set(value) {
                return Err(ConfigError::BadValue { line, key: key.to_string(), value: value.to_string() });
            }
        }
        Ok(())
    }

    pub fn validate(&mut self) -> Result<(), ConfigError> {
        for (key, slot, rule) in self.slots() {
            if !slot.check(rule) {
                let rule = if rule == Rule::Positive { "positive" } else { "non-negative" };
                return Err(ConfigError::Invalid { key: key.to_string(), rule, value: slot.render() });
            }
        }
        self.sim.validate().map_err(|e| {
            let lcsmooth::sim::SimError::Invalid(name) = e;
            ConfigError::Invalid { key: format!("sim.{name}"), rule: "valid", value: String::from("rejected") }
        })?;
        Ok(())
    }

    /// Every key with its current value, one per line in canonical order.
    pub fn render(&mut self) -> String {
        let mut out = String::new();
        for (key, slot, _) in self.slots() {
            writeln!(out, "{key} = {}", slot.render()).unwrap();
        }
        out
    }

    /// SHA-256 of the canonical rendering.
    pub fn hash(&mut self) -> String {
        hex(&Sha256::digest(self.render().as_bytes()))
    }
}

pub fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn render_parse_round_trip() {
        let mut cfg = PipelineConfig::default();
        cfg.seed = 99;
        cfg.sim.drift.psd_rho[1] = 3.5e-9;
        cfg.frontend.sigma_phi = 0.3f64.to_radians();
        let text = cfg.render();
        let mut back = PipelineConfig::parse(&text).unwrap();
        assert_eq!(back.render(), text);
        assert_eq!(back.hash(), cfg.hash());
        assert_eq!(back.sim.drift.psd_rho[1], 3.5e-9);
    }

    #[test]
    fn comments_and_blank_lines() {
        let cfg = PipelineConfig::parse("# tuning\n\nhyper.q_nu = 9e-4   # linear\nsolver.robust=false\n").unwrap();
        assert_eq!(cfg.hyper.q_nu, 9e-4);
        assert!(!cfg.solver.robust.enabled);
    }

    #[test]
    fn errors_name_the_key() {
        assert_eq!(
            PipelineConfig::parse("sim.drift.psd_phi_z = -1e-9"),
            Err(ConfigError::Invalid { key: "sim.drift.psd_phi_z".into(), rule: "non-negative", value: "-0.000000001".into() })
        );
        assert!(matches!(PipelineConfig::parse("a = 1"), Err(ConfigError::UnknownKey { line: 1, .. })));
        assert!(matches!(PipelineConfig::parse("\nseed"), Err(ConfigError::Syntax { line: 2 })));
        assert!(matches!(PipelineConfig::parse("hyper.q_nu = x"), Err(ConfigError::BadValue { line: 1, .. })));
        assert!(matches!(PipelineConfig::parse("sim.passes = 0"), Err(ConfigError::Invalid { .. })));
    }

    #[test]
    fn hash_is_stable_and_sensitive() {
        let (mut a, mut b) = (PipelineConfig::default(), PipelineConfig::default());
        assert_eq!(a.hash(), b.hash());
        b.seed = 2;
        assert_ne!(a.hash(), b.hash());
        assert_eq!(a.hash().len(), 64);
    }
}
