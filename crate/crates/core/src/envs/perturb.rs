use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::EnvConfig;
use crate::{Error, Result};

/// Named dynamics modification. Each name maps to one dynamics field:
///
/// | name      | field              | direction | magnitude range |
/// |-----------|--------------------|-----------|-----------------|
/// | mass      | `effect_scale`     | down      | `[0, 1)`        |
/// | dampening | `action_fail_prob` | up        | `[0, 1]`        |
/// | inertia   | `drift_prob`       | up        | `[0, 1]`        |
/// | friction  | `obs_noise_std`    | up        | `[0, 5]`        |
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PerturbName {
    Mass,
    Dampening,
    Inertia,
    Friction,
}

impl PerturbName {
    pub const ALL: [PerturbName; 4] = [Self::Mass, Self::Dampening, Self::Inertia, Self::Friction];

    pub fn as_str(&self) -> &'static str {
        match self {
            Self::Mass => "mass",
            Self::Dampening => "dampening",
            Self::Inertia => "inertia",
            Self::Friction => "friction",
        }
    }
}

impl fmt::Display for PerturbName {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for PerturbName {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|n| n.as_str() == s)
            .ok_or_else(|| Error::Argument(format!("unknown perturbation `{s}`")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PerturbationSpec {
    pub name: PerturbName,
    pub magnitude: f64,
}

impl PerturbationSpec {
    pub fn new(name: PerturbName, magnitude: f64) -> Self {
        Self { name, magnitude }
    }

    /// Parses `name` or `name:magnitude`; bare names take the default 0.2.
    pub fn parse(s: &str) -> Result<Self> {
        let (name, mag) = match s.split_once(':') {
            Some((n, m)) => (
                n,
                m.parse::<f64>()
                    .map_err(|e| Error::Argument(format!("bad magnitude in `{s}`: {e}")))?,
            ),
            None => (s, DEFAULT_MAGNITUDE),
        };
        Ok(Self::new(name.trim().parse()?, mag))
    }
}

pub const DEFAULT_MAGNITUDE: f64 = 0.2;

/// The four named perturbations at one magnitude.
pub fn standard_suite(magnitude: f64) -> Vec<PerturbationSpec> {
    PerturbName::ALL
        .into_iter()
        .map(|n| PerturbationSpec::new(n, magnitude))
        .collect()
}

/// Returns a copy of `config` with the single mapped dynamics field changed.
pub fn perturb(config: &EnvConfig, spec: &PerturbationSpec) -> Result<EnvConfig> {
    let m = spec.magnitude;
    let max = match spec.name {
        PerturbName::Mass => 1.0 - f64::EPSILON,
        PerturbName::Dampening | PerturbName::Inertia => 1.0,
        PerturbName::Friction => 5.0,
    };
    if !(0.0..=max).contains(&m) {
        return Err(Error::Argument(format!(
            "{} magnitude {m} outside [0, {max}]",
            spec.name
        )));
    }
    let mut out = config.clone();
    let d = &mut out.dynamics;
    match spec.name {
        PerturbName::Mass => d.effect_scale = config.dynamics.effect_scale * (1.0 - m),
        PerturbName::Dampening => d.action_fail_prob = (d.action_fail_prob + m).min(1.0),
        PerturbName::Inertia => d.drift_prob = (d.drift_prob + m).min(1.0),
        PerturbName::Friction => d.obs_noise_std += m,
    }
    out.validate()?;
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::envs::Dynamics;

    fn changed_fields(a: &Dynamics, b: &Dynamics) -> usize {
        [
            a.action_fail_prob != b.action_fail_prob,
            a.effect_scale != b.effect_scale,
            a.obs_noise_std != b.obs_noise_std,
            a.drift_prob != b.drift_prob,
        ]
        .iter()
        .filter(|x| **x)
        .count()
    }

    #[test]
    fn zero_magnitude_is_identity() {
        let base = EnvConfig::gather();
        for spec in standard_suite(0.0) {
            assert_eq!(perturb(&base, &spec).unwrap(), base);
        }
    }

    #[test]
    fn dampening_maps_to_action_fail() {
        let base = EnvConfig::gather();
        let p = perturb(&base, &PerturbationSpec::new(PerturbName::Dampening, 0.2)).unwrap();
        assert!((p.dynamics.action_fail_prob - 0.2).abs() < 1e-15);
        assert_eq!(changed_fields(&base.dynamics, &p.dynamics), 1);
        assert_eq!(
            EnvConfig {
                dynamics: base.dynamics.clone(),
                ..p.clone()
            },
            base
        );
    }

    #[test]
    fn each_name_changes_exactly_one_field() {
        for base in [EnvConfig::gather(), EnvConfig::blocks()] {
            let before = base.clone();
            for spec in standard_suite(0.2) {
                let p = perturb(&base, &spec).unwrap();
                assert_eq!(changed_fields(&base.dynamics, &p.dynamics), 1, "{spec:?}");
            }
            assert_eq!(base, before);
        }
    }

    #[test]
    fn suite_over_two_kinds_has_eight_cells() {
        let cells: Vec<_> = [EnvConfig::gather(), EnvConfig::blocks()]
            .iter()
            .flat_map(|c| standard_suite(0.2).into_iter().map(move |s| perturb(c, &s).unwrap()))
            .collect();
        assert_eq!(cells.len(), 8);
    }

    #[test]
    fn unknown_name_and_range() {
        assert!(matches!(PerturbationSpec::parse("gravity"), Err(Error::Argument(_))));
        let s = PerturbationSpec::parse("friction:0.5").unwrap();
        assert_eq!(s, PerturbationSpec::new(PerturbName::Friction, 0.5));
        assert_eq!(PerturbationSpec::parse("mass").unwrap().magnitude, 0.2);
        let base = EnvConfig::gather();
        assert!(perturb(&base, &PerturbationSpec::new(PerturbName::Mass, 1.0)).is_err());
        assert!(perturb(&base, &PerturbationSpec::new(PerturbName::Inertia, -0.1)).is_err());
    }
}
