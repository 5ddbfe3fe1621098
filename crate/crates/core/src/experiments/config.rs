//! Run configuration: TOML file, built-in run definitions and CLI overrides.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::exact::ExactParameterSpec;
use crate::algorithm::AlgorithmSettings;
use crate::error::{Error, Result};
use crate::forward::{H1Metric, ProblemKind};
use crate::irgnm::IrgnmConfig;
use crate::param_reduction::QrConfig;
use crate::tr_irgnm::TrConfig;
use crate::state_reduction::EstimatorMode;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    /// Built-in run 1–4, or `None` for a custom setup.
    pub run: Option<u32>,
    pub problem: Option<ProblemKind>,
    pub algorithm: String,
    pub n: usize,
    pub delta: f64,
    pub seed: u64,
    pub estimator: EstimatorMode,
    pub out: Option<PathBuf>,
    /// Constant used for `q∘`, `q⁰` and the exact background.
    pub background: f64,
    pub q_lower: f64,
    pub gaussian_sigma: f64,
    pub contrast: f64,
    pub h1_metric: H1Metric,
    /// Defaults to 1 for reaction and 1e-3 for diffusion.
    pub alpha0: Option<f64>,
    pub exact: Option<ExactParameterSpec>,
    pub irgnm: IrgnmConfig,
    pub qr: QrConfig,
    pub tr: TrConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            run: Some(1),
            problem: None,
            algorithm: "qr-vr".into(),
            n: 100,
            delta: 1e-5,
            seed: 42,
            estimator: EstimatorMode::Mixed,
            out: None,
            background: 3.0,
            q_lower: 0.001,
            gaussian_sigma: 0.1,
            contrast: 2.0,
            h1_metric: H1Metric::Full,
            alpha0: None,
            exact: None,
            irgnm: IrgnmConfig::default(),
            qr: QrConfig::default(),
            tr: TrConfig::default(),
        }
    }
}

/// Values given on the command line; each replaces the file value.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub run: Option<u32>,
    pub problem: Option<ProblemKind>,
    pub algorithm: Option<String>,
    pub n: Option<usize>,
    pub delta: Option<f64>,
    pub seed: Option<u64>,
    pub estimator: Option<EstimatorMode>,
    pub out: Option<PathBuf>,
}

/// Defaults of a built-in run.
pub fn build_run(id: u32, overrides: &Overrides) -> Result<RunConfig> {
    if !(1..=4).contains(&id) {
        return Err(Error::Unknown {
            kind: "run",
            name: id.to_string(),
        });
    }
    let mut cfg = RunConfig {
        run: Some(id),
        ..RunConfig::default()
    };
    cfg.apply(overrides);
    cfg.run = Some(id);
    Ok(cfg)
}

impl RunConfig {
    /// A file with an `[exact]` table and no `run` key is a custom run.
    pub fn from_toml(text: &str) -> Result<Self> {
        let table: toml::Table = toml::from_str(text)?;
        let custom = table.contains_key("exact") && !table.contains_key("run");
        let mut cfg: Self = table.try_into()?;
        if custom {
            cfg.run = None;
        }
        Ok(cfg)
    }

    pub fn load(path: Option<&Path>, overrides: &Overrides) -> Result<Self> {
        let mut cfg = match path {
            Some(p) => Self::from_toml(&std::fs::read_to_string(p).map_err(|e| Error::io(p, e))?)?,
            None => Self::default(),
        };
        cfg.apply(overrides);
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn apply(&mut self, o: &Overrides) {
        if let Some(r) = o.run {
            self.run = Some(r);
        }
        if o.problem.is_some() {
            self.problem = o.problem;
        }
        if let Some(a) = &o.algorithm {
            self.algorithm = a.clone();
        }
        if let Some(n) = o.n {
            self.n = n;
        }
        if let Some(d) = o.delta {
            self.delta = d;
        }
        if let Some(s) = o.seed {
            self.seed = s;
        }
        if let Some(e) = o.estimator {
            self.estimator = e;
        }
        if o.out.is_some() {
            self.out = o.out.clone();
        }
    }

    pub fn validate(&self) -> Result<()> {
        if let Some(r) = self.run {
            if !(1..=4).contains(&r) {
                return Err(Error::Unknown {
                    kind: "run",
                    name: r.to_string(),
                });
            }
        } else if self.exact.is_none() {
            return Err(Error::Config("a custom run needs an [exact] parameter".into()));
        }
        if self.n < 2 || self.delta < 0.0 {
            return Err(Error::Config(format!("invalid grid or noise level: n={}, delta={}", self.n, self.delta)));
        }
        Ok(())
    }

    pub fn problem(&self) -> ProblemKind {
        match (self.problem, self.run) {
            (Some(p), _) => p,
            (None, Some(2 | 4)) => ProblemKind::Diffusion,
            _ => ProblemKind::Reaction,
        }
    }

    pub fn exact_spec(&self) -> ExactParameterSpec {
        if let Some(e) = &self.exact {
            return e.clone();
        }
        match self.run {
            Some(2) => ExactParameterSpec::diffusion_inclusions(self.background, self.contrast),
            Some(3 | 4) => ExactParameterSpec::mixed_features(self.background),
            _ => ExactParameterSpec::reaction_gaussians(self.background, self.gaussian_sigma),
        }
    }

    pub fn alpha0(&self) -> f64 {
        self.alpha0.unwrap_or(match self.problem() {
            ProblemKind::Reaction => 1.0,
            ProblemKind::Diffusion => 1e-3,
        })
    }

    /// Algorithm settings with the run-level α₀ and estimator mode applied.
    pub fn resolved_settings(&self) -> AlgorithmSettings {
        let mut s = AlgorithmSettings {
            irgnm: self.irgnm.clone(),
            qr: self.qr.clone(),
            tr: self.tr.clone(),
        };
        s.irgnm.alpha0 = self.alpha0();
        s.tr.estimator = self.estimator;
        s
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults() {
        let c = RunConfig::default();
        let s = c.resolved_settings();
        assert_eq!((s.irgnm.theta, s.irgnm.big_theta, s.irgnm.tau), (0.4, 0.9, 3.5));
        assert_eq!((s.tr.beta1, s.tr.beta2, s.tr.beta3, s.tr.eta0, s.tr.kappa_arm), (0.95, 0.75, 0.5, 0.1, 1e-12));
        assert_eq!((s.qr.inner_max, s.qr.tau_tilde), (2, 1.0));
        assert_eq!((c.delta, c.background, c.q_lower, c.n), (1e-5, 3.0, 0.001, 100));
        assert_eq!(s.irgnm.alpha0, 1.0);
        assert_eq!(build_run(2, &Overrides::default()).unwrap().alpha0(), 1e-3);
    }

    #[test]
    fn runs_pick_problem_kind() {
        let kinds: Vec<_> = (1..=4)
            .map(|i| build_run(i, &Overrides::default()).unwrap().problem())
            .collect();
        use ProblemKind::*;
        assert_eq!(kinds, [Reaction, Diffusion, Reaction, Diffusion]);
        assert!(build_run(5, &Overrides::default()).is_err());
    }

    #[test]
    fn toml_with_overrides() {
        let text = r#"
            run = 2
            n = 40
            estimator = "offline"
            [tr]
            eta0 = 10.0
            [irgnm]
            max_outer = 7
        "#;
        let mut c = RunConfig::from_toml(text).unwrap();
        assert_eq!((c.n, c.tr.eta0, c.irgnm.max_outer), (40, 10.0, 7));
        assert_eq!(c.irgnm.theta, 0.4);
        c.apply(&Overrides {
            n: Some(20),
            estimator: Some(EstimatorMode::Online),
            ..Default::default()
        });
        assert_eq!((c.n, c.resolved_settings().tr.estimator), (20, EstimatorMode::Online));
    }

    #[test]
    fn unknown_keys_are_rejected() {
        assert!(RunConfig::from_toml("grid = 3").is_err());
    }
}
