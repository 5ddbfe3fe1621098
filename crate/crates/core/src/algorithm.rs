//! Inversion algorithms behind a common trait, selected by name at runtime.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::forward::ForwardModel;
use crate::irgnm::{fom_irgnm, IrgnmConfig, StartPoint};
use crate::param_reduction::{qr_irgnm, QrConfig};
use crate::report::RunReport;
use crate::tr_irgnm::{tr_irgnm, TrConfig};

/// Parameters of every registered algorithm; each reads what it needs.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AlgorithmSettings {
    pub irgnm: IrgnmConfig,
    pub qr: QrConfig,
    pub tr: TrConfig,
}

pub trait InversionAlgorithm: Send + Sync {
    fn name(&self) -> &'static str;

    fn description(&self) -> &'static str;

    fn run(&self, model: &ForwardModel, start: &StartPoint, settings: &AlgorithmSettings) -> Result<RunReport>;
}

struct FullOrder;

impl InversionAlgorithm for FullOrder {
    fn name(&self) -> &'static str {
        "fom"
    }

    fn description(&self) -> &'static str {
        "full-order IRGNM"
    }

    fn run(&self, model: &ForwardModel, start: &StartPoint, s: &AlgorithmSettings) -> Result<RunReport> {
        fom_irgnm(model, start, &s.irgnm)
    }
}

struct ParameterReduced;

impl InversionAlgorithm for ParameterReduced {
    fn name(&self) -> &'static str {
        "qr"
    }

    fn description(&self) -> &'static str {
        "IRGNM on an adaptive reduced parameter space"
    }

    fn run(&self, model: &ForwardModel, start: &StartPoint, s: &AlgorithmSettings) -> Result<RunReport> {
        qr_irgnm(model, start, &s.irgnm, &s.qr)
    }
}

struct TrustRegion;

impl InversionAlgorithm for TrustRegion {
    fn name(&self) -> &'static str {
        "qr-vr"
    }

    fn description(&self) -> &'static str {
        "error-aware trust-region IRGNM on reduced parameter and state spaces"
    }

    fn run(&self, model: &ForwardModel, start: &StartPoint, s: &AlgorithmSettings) -> Result<RunReport> {
        tr_irgnm(model, start, &s.irgnm, &s.tr)
    }
}

pub struct AlgorithmRegistry {
    entries: BTreeMap<&'static str, Box<dyn InversionAlgorithm>>,
}

impl AlgorithmRegistry {
    pub fn empty() -> Self {
        Self {
            entries: BTreeMap::new(),
        }
    }

    /// Registry holding `fom`, `qr` and `qr-vr`.
    pub fn with_builtin() -> Self {
        let mut r = Self::empty();
        r.register(Box::new(FullOrder));
        r.register(Box::new(ParameterReduced));
        r.register(Box::new(TrustRegion));
        r
    }

    /// Returns the entry previously registered under the same name, if any.
    pub fn register(&mut self, alg: Box<dyn InversionAlgorithm>) -> Option<Box<dyn InversionAlgorithm>> {
        self.entries.insert(alg.name(), alg)
    }

    pub fn get(&self, name: &str) -> Result<&dyn InversionAlgorithm> {
        self.entries.get(name).map(|b| b.as_ref()).ok_or_else(|| Error::Unknown {
            kind: "algorithm",
            name: name.to_string(),
        })
    }

    pub fn names(&self) -> impl Iterator<Item = &'static str> + '_ {
        self.entries.keys().copied()
    }

    pub fn iter(&self) -> impl Iterator<Item = &dyn InversionAlgorithm> {
        self.entries.values().map(|b| b.as_ref())
    }
}

impl Default for AlgorithmRegistry {
    fn default() -> Self {
        Self::with_builtin()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn builtin_names() {
        let r = AlgorithmRegistry::with_builtin();
        assert_eq!(r.names().collect::<Vec<_>>(), ["fom", "qr", "qr-vr"]);
        assert!(matches!(r.get("newton"), Err(Error::Unknown { .. })));
    }

    #[test]
    fn reregistering_replaces() {
        let mut r = AlgorithmRegistry::with_builtin();
        assert!(r.register(Box::new(FullOrder)).is_some());
        assert_eq!(r.names().count(), 3);
    }
}
