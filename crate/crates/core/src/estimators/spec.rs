//! Model and estimator specifications and their string identifiers.
//!
//! Identifiers look like `com/ridge?alpha=0.5`, `xlearner/ols+logistic_l2`
//! or `ipw/qda?trim=true&stabilized=true`. In X-learner identifiers,
//! propensity-model keys carry an `e.` prefix.

use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{arg_err, Error, Result};

/// One hyperparameter: its default and admissible range.
#[derive(Debug, Clone, Copy)]
pub struct ParamInfo {
    pub name: &'static str,
    /// `None` means the model picks a data-dependent value.
    pub default: Option<f64>,
    pub lower: f64,
    pub lower_inclusive: bool,
    pub upper: Option<f64>,
    pub integer: bool,
}

impl ParamInfo {
    const fn positive(name: &'static str, default: f64) -> Self {
        ParamInfo {
            name,
            default: Some(default),
            lower: 0.0,
            lower_inclusive: false,
            upper: None,
            integer: false,
        }
    }

    const fn count(name: &'static str, default: Option<f64>) -> Self {
        ParamInfo {
            name,
            default,
            lower: 1.0,
            lower_inclusive: true,
            upper: None,
            integer: true,
        }
    }

    const fn unit(name: &'static str, default: f64, lower_inclusive: bool) -> Self {
        ParamInfo {
            name,
            default: Some(default),
            lower: 0.0,
            lower_inclusive,
            upper: Some(1.0),
            integer: false,
        }
    }

    fn check(&self, value: f64) -> Result<()> {
        let above = if self.lower_inclusive {
            value >= self.lower
        } else {
            value > self.lower
        };
        let below = self.upper.is_none_or(|u| value <= u);
        if !value.is_finite() || !above || !below || (self.integer && value.fract() != 0.0) {
            return Err(arg_err(format!("hyperparameter {} = {value} is out of range", self.name)));
        }
        Ok(())
    }
}

/// `n` log-spaced values from `10^lo` to `10^hi`.
fn logspace(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    (0..n)
        .map(|i| 10f64.powf(lo + (hi - lo) * i as f64 / (n - 1) as f64))
        .collect()
}

const NEIGHBOR_SWEEP: [f64; 10] = [1.0, 2.0, 3.0, 5.0, 8.0, 12.0, 18.0, 27.0, 40.0, 60.0];
const DEPTH_SWEEP: [f64; 10] = [1.0, 2.0, 3.0, 4.0, 6.0, 8.0, 11.0, 16.0, 23.0, 32.0];

pub trait Family: Copy + Eq + fmt::Debug + 'static {
    fn name(self) -> &'static str;
    fn all() -> &'static [Self];
    fn params(self) -> &'static [ParamInfo];
    /// The hyperparameter searched when tuning, with its 10 candidates.
    fn sweep(self) -> Option<(&'static str, Vec<f64>)>;

    fn from_name(name: &str) -> Option<Self> {
        Self::all().iter().copied().find(|f| f.name() == name)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RegressorFamily {
    Ols,
    OlsInteract,
    OlsPoly2,
    OlsPoly3,
    Lasso,
    Ridge,
    ElasticNet,
    KernelRidgeRbf,
    KnnReg,
    DecisionTreeReg,
}

impl Family for RegressorFamily {
    fn name(self) -> &'static str {
        use RegressorFamily::*;
        match self {
            Ols => "ols",
            OlsInteract => "ols_interact",
            OlsPoly2 => "ols_poly2",
            OlsPoly3 => "ols_poly3",
            Lasso => "lasso",
            Ridge => "ridge",
            ElasticNet => "elastic_net",
            KernelRidgeRbf => "kernel_ridge_rbf",
            KnnReg => "knn_reg",
            DecisionTreeReg => "decision_tree_reg",
        }
    }

    fn all() -> &'static [Self] {
        use RegressorFamily::*;
        &[
            Ols,
            OlsInteract,
            OlsPoly2,
            OlsPoly3,
            Lasso,
            Ridge,
            ElasticNet,
            KernelRidgeRbf,
            KnnReg,
            DecisionTreeReg,
        ]
    }

    fn params(self) -> &'static [ParamInfo] {
        use RegressorFamily::*;
        const RIDGE: [ParamInfo; 1] = [ParamInfo::positive("alpha", 1.0)];
        const LASSO: [ParamInfo; 1] = [ParamInfo::positive("alpha", 0.01)];
        const ENET: [ParamInfo; 2] = [ParamInfo::positive("alpha", 0.01), ParamInfo::unit("l1_ratio", 0.5, false)];
        const KERNEL: [ParamInfo; 2] = [
            ParamInfo::positive("alpha", 1.0),
            ParamInfo {
                default: None,
                ..ParamInfo::positive("gamma", 1.0)
            },
        ];
        const KNN: [ParamInfo; 1] = [ParamInfo::count("k", Some(5.0))];
        const TREE: [ParamInfo; 2] = [ParamInfo::count("max_depth", None), ParamInfo::count("min_leaf", Some(5.0))];
        match self {
            Ols | OlsInteract | OlsPoly2 | OlsPoly3 => &[],
            Ridge => &RIDGE,
            Lasso => &LASSO,
            ElasticNet => &ENET,
            KernelRidgeRbf => &KERNEL,
            KnnReg => &KNN,
            DecisionTreeReg => &TREE,
        }
    }

    fn sweep(self) -> Option<(&'static str, Vec<f64>)> {
        use RegressorFamily::*;
        match self {
            Ols | OlsInteract | OlsPoly2 | OlsPoly3 => None,
            Ridge => Some(("alpha", logspace(-3.0, 3.0, 10))),
            Lasso | ElasticNet => Some(("alpha", logspace(-4.0, 1.0, 10))),
            KernelRidgeRbf => Some(("alpha", logspace(-3.0, 2.0, 10))),
            KnnReg => Some(("k", NEIGHBOR_SWEEP.to_vec())),
            DecisionTreeReg => Some(("max_depth", DEPTH_SWEEP.to_vec())),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ClassifierFamily {
    LogisticL2,
    LogisticL1,
    LogisticUnregularized,
    KnnClf,
    DecisionTreeClf,
    GaussianNb,
    Qda,
}

impl Family for ClassifierFamily {
    fn name(self) -> &'static str {
        use ClassifierFamily::*;
        match self {
            LogisticL2 => "logistic_l2",
            LogisticL1 => "logistic_l1",
            LogisticUnregularized => "logistic_unregularized",
            KnnClf => "knn_clf",
            DecisionTreeClf => "decision_tree_clf",
            GaussianNb => "gaussian_nb",
            Qda => "qda",
        }
    }

    fn all() -> &'static [Self] {
        use ClassifierFamily::*;
        &[LogisticL2, LogisticL1, LogisticUnregularized, KnnClf, DecisionTreeClf, GaussianNb, Qda]
    }

    fn params(self) -> &'static [ParamInfo] {
        use ClassifierFamily::*;
        const LOGISTIC: [ParamInfo; 1] = [ParamInfo::positive("lambda", 1e-3)];
        const KNN: [ParamInfo; 1] = [ParamInfo::count("k", Some(5.0))];
        const TREE: [ParamInfo; 2] = [ParamInfo::count("max_depth", None), ParamInfo::count("min_leaf", Some(5.0))];
        const NB: [ParamInfo; 1] = [ParamInfo {
            lower_inclusive: true,
            ..ParamInfo::positive("var_smoothing", 1e-9)
        }];
        const QDA: [ParamInfo; 1] = [ParamInfo::unit("reg", 0.0, true)];
        match self {
            LogisticL2 | LogisticL1 => &LOGISTIC,
            LogisticUnregularized => &[],
            KnnClf => &KNN,
            DecisionTreeClf => &TREE,
            GaussianNb => &NB,
            Qda => &QDA,
        }
    }

    fn sweep(self) -> Option<(&'static str, Vec<f64>)> {
        use ClassifierFamily::*;
        match self {
            LogisticL2 | LogisticL1 => Some(("lambda", logspace(-6.0, 1.0, 10))),
            LogisticUnregularized => None,
            KnnClf => Some(("k", NEIGHBOR_SWEEP.to_vec())),
            DecisionTreeClf => Some(("max_depth", DEPTH_SWEEP.to_vec())),
            GaussianNb => Some(("var_smoothing", logspace(-12.0, -3.0, 10))),
            Qda => Some(("reg", logspace(-5.0, 0.0, 10))),
        }
    }
}

/// A model family with explicit hyperparameters (absent keys take their
/// defaults), an input standardization flag and an optional tuning sweep.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "F: Serialize + serde::de::DeserializeOwned")]
pub struct ModelSpec<F> {
    pub family: F,
    pub params: BTreeMap<String, f64>,
    pub standardize: bool,
    /// Pick the swept hyperparameter by held-out loss before the final fit.
    pub tune: bool,
}

pub type RegressorSpec = ModelSpec<RegressorFamily>;
pub type ClassifierSpec = ModelSpec<ClassifierFamily>;

impl<F: Family> ModelSpec<F> {
    pub fn new(family: F) -> Self {
        ModelSpec {
            family,
            params: BTreeMap::new(),
            standardize: true,
            tune: false,
        }
    }

    pub fn with_param(mut self, name: &str, value: f64) -> Result<Self> {
        self.set(name, value)?;
        Ok(self)
    }

    pub fn set(&mut self, name: &str, value: f64) -> Result<()> {
        let info = self.info(name)?;
        info.check(value)?;
        self.params.insert(name.to_string(), value);
        Ok(())
    }

    fn info(&self, name: &str) -> Result<&'static ParamInfo> {
        self.family.params().iter().find(|p| p.name == name).ok_or_else(|| {
            arg_err(format!(
                "{} has no hyperparameter `{name}`",
                self.family.name()
            ))
        })
    }

    /// Explicit value or default; `None` for data-dependent defaults.
    pub fn param(&self, name: &str) -> Option<f64> {
        self.params
            .get(name)
            .copied()
            .or_else(|| self.info(name).ok().and_then(|p| p.default))
    }

    pub fn validate(&self) -> Result<()> {
        for (k, v) in &self.params {
            self.info(k)?.check(*v)?;
        }
        Ok(())
    }

    fn set_text(&mut self, key: &str, value: &str) -> Result<()> {
        match key {
            "standardize" => self.standardize = parse_bool(key, value)?,
            "tune" => self.tune = parse_bool(key, value)?,
            _ => {
                let v: f64 = value
                    .parse()
                    .map_err(|_| arg_err(format!("hyperparameter {key} = `{value}` is not a number")))?;
                self.set(key, v)?;
            }
        }
        Ok(())
    }

    fn query_pairs(&self, prefix: &str) -> Vec<(String, String)> {
        let mut out: Vec<(String, String)> = self
            .params
            .iter()
            .map(|(k, v)| (format!("{prefix}{k}"), format!("{v}")))
            .collect();
        if !self.standardize {
            out.push((format!("{prefix}standardize"), "false".into()));
        }
        if self.tune {
            out.push((format!("{prefix}tune"), "true".into()));
        }
        out
    }

    /// Short human-readable description.
    pub fn describe(&self) -> String {
        let pairs = self.query_pairs("");
        if pairs.is_empty() {
            self.family.name().to_string()
        } else {
            let q: Vec<String> = pairs.into_iter().map(|(k, v)| format!("{k}={v}")).collect();
            format!("{}({})", self.family.name(), q.join(","))
        }
    }
}

fn parse_bool(key: &str, value: &str) -> Result<bool> {
    match value {
        "true" | "1" => Ok(true),
        "false" | "0" => Ok(false),
        _ => Err(arg_err(format!("{key} must be true or false, got `{value}`"))),
    }
}

/// Where an estimator's propensity scores come from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum PropensityModel {
    Fitted(ClassifierSpec),
    /// Known propensities supplied by the caller (e.g. a generative model's
    /// ground truth).
    Oracle,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Trim {
    pub low: f64,
    pub high: f64,
}

impl Default for Trim {
    fn default() -> Self {
        Trim { low: 0.01, high: 0.99 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case")]
pub enum EstimatorSpec {
    Com {
        outcome: RegressorSpec,
    },
    Gcom {
        outcome: RegressorSpec,
    },
    Xlearner {
        outcome: RegressorSpec,
        propensity: PropensityModel,
    },
    Ipw {
        propensity: PropensityModel,
        /// Rows with propensity outside `[low, high]` are dropped.
        trim: Option<Trim>,
        stabilized: bool,
    },
}

fn parse_model<F: Family>(name: &str, id: &str) -> Result<ModelSpec<F>> {
    F::from_name(name)
        .map(ModelSpec::new)
        .ok_or_else(|| Error::UnknownEstimator(id.to_string()))
}

fn parse_propensity(name: &str, id: &str) -> Result<PropensityModel> {
    if name == "oracle" {
        Ok(PropensityModel::Oracle)
    } else {
        Ok(PropensityModel::Fitted(parse_model(name, id)?))
    }
}

impl EstimatorSpec {
    pub fn parse(id: &str) -> Result<Self> {
        let unknown = || Error::UnknownEstimator(id.to_string());
        let (path, query) = match id.split_once('?') {
            Some((p, q)) => (p, Some(q)),
            None => (id, None),
        };
        let (family, models) = path.split_once('/').ok_or_else(unknown)?;
        let mut spec = match family {
            "com" => EstimatorSpec::Com {
                outcome: parse_model(models, id)?,
            },
            "gcom" => EstimatorSpec::Gcom {
                outcome: parse_model(models, id)?,
            },
            "xlearner" => {
                let (reg, clf) = models.split_once('+').unwrap_or((models, "logistic_l2"));
                EstimatorSpec::Xlearner {
                    outcome: parse_model(reg, id)?,
                    propensity: parse_propensity(clf, id)?,
                }
            }
            "ipw" => EstimatorSpec::Ipw {
                propensity: parse_propensity(models, id)?,
                trim: None,
                stabilized: false,
            },
            _ => return Err(unknown()),
        };
        let mut trim_on = false;
        let mut bounds = Trim::default();
        for pair in query.into_iter().flat_map(|q| q.split('&')).filter(|p| !p.is_empty()) {
            let (key, value) = pair
                .split_once('=')
                .ok_or_else(|| arg_err(format!("`{pair}` in estimator id `{id}` is not key=value")))?;
            let wrap = |e: Error| arg_err(format!("estimator id `{id}`: {e}"));
            match (&mut spec, key) {
                (EstimatorSpec::Ipw { .. }, "trim") => trim_on = parse_bool(key, value).map_err(wrap)?,
                (EstimatorSpec::Ipw { .. }, "trim_low" | "trim_high") => {
                    let v: f64 = value.parse().map_err(|_| wrap(arg_err(format!("{key} is not a number"))))?;
                    if key == "trim_low" {
                        bounds.low = v;
                    } else {
                        bounds.high = v;
                    }
                }
                (EstimatorSpec::Ipw { stabilized, .. }, "stabilized") => {
                    *stabilized = parse_bool(key, value).map_err(wrap)?
                }
                (EstimatorSpec::Ipw { propensity, .. }, _) => match propensity {
                    PropensityModel::Fitted(c) => c.set_text(key, value).map_err(wrap)?,
                    PropensityModel::Oracle => return Err(wrap(arg_err(format!("oracle takes no `{key}`")))),
                },
                (EstimatorSpec::Xlearner { propensity, .. }, k) if k.starts_with("e.") => match propensity {
                    PropensityModel::Fitted(c) => c.set_text(&k[2..], value).map_err(wrap)?,
                    PropensityModel::Oracle => return Err(wrap(arg_err(format!("oracle takes no `{key}`")))),
                },
                (
                    EstimatorSpec::Com { outcome } | EstimatorSpec::Gcom { outcome } | EstimatorSpec::Xlearner { outcome, .. },
                    _,
                ) => outcome.set_text(key, value).map_err(wrap)?,
            }
        }
        if let EstimatorSpec::Ipw { trim, .. } = &mut spec {
            if trim_on {
                if !(0.0 <= bounds.low && bounds.low < bounds.high && bounds.high <= 1.0) {
                    return Err(arg_err(format!("estimator id `{id}`: invalid trim bounds")));
                }
                *trim = Some(bounds);
            }
        }
        Ok(spec)
    }

    /// Canonical identifier; `parse(id())` reproduces the spec.
    pub fn id(&self) -> String {
        let propensity_name = |p: &PropensityModel| match p {
            PropensityModel::Fitted(c) => c.family.name(),
            PropensityModel::Oracle => "oracle",
        };
        let propensity_pairs = |p: &PropensityModel, prefix: &str| match p {
            PropensityModel::Fitted(c) => c.query_pairs(prefix),
            PropensityModel::Oracle => Vec::new(),
        };
        let (path, mut pairs) = match self {
            EstimatorSpec::Com { outcome } => (format!("com/{}", outcome.family.name()), outcome.query_pairs("")),
            EstimatorSpec::Gcom { outcome } => (format!("gcom/{}", outcome.family.name()), outcome.query_pairs("")),
            EstimatorSpec::Xlearner { outcome, propensity } => {
                let mut pairs = outcome.query_pairs("");
                pairs.extend(propensity_pairs(propensity, "e."));
                (
                    format!("xlearner/{}+{}", outcome.family.name(), propensity_name(propensity)),
                    pairs,
                )
            }
            EstimatorSpec::Ipw {
                propensity,
                trim,
                stabilized,
            } => {
                let mut pairs = propensity_pairs(propensity, "");
                if let Some(t) = trim {
                    pairs.push(("trim".into(), "true".into()));
                    let d = Trim::default();
                    if t.low != d.low {
                        pairs.push(("trim_low".into(), format!("{}", t.low)));
                    }
                    if t.high != d.high {
                        pairs.push(("trim_high".into(), format!("{}", t.high)));
                    }
                }
                if *stabilized {
                    pairs.push(("stabilized".into(), "true".into()));
                }
                (format!("ipw/{}", propensity_name(propensity)), pairs)
            }
        };
        if pairs.is_empty() {
            return path;
        }
        pairs.sort();
        let q: Vec<String> = pairs.into_iter().map(|(k, v)| format!("{k}={v}")).collect();
        format!("{path}?{}", q.join("&"))
    }

    pub fn validate(&self) -> Result<()> {
        let check_prop = |p: &PropensityModel| match p {
            PropensityModel::Fitted(c) => c.validate(),
            PropensityModel::Oracle => Ok(()),
        };
        match self {
            EstimatorSpec::Com { outcome } | EstimatorSpec::Gcom { outcome } => outcome.validate(),
            EstimatorSpec::Xlearner { outcome, propensity } => {
                outcome.validate()?;
                check_prop(propensity)
            }
            EstimatorSpec::Ipw { propensity, trim, .. } => {
                if let Some(t) = trim {
                    if !(0.0 <= t.low && t.low < t.high && t.high <= 1.0) {
                        return Err(arg_err("trim bounds must satisfy 0 <= low < high <= 1"));
                    }
                }
                check_prop(propensity)
            }
        }
    }

    pub fn needs_oracle(&self) -> bool {
        matches!(
            self,
            EstimatorSpec::Ipw {
                propensity: PropensityModel::Oracle,
                ..
            } | EstimatorSpec::Xlearner {
                propensity: PropensityModel::Oracle,
                ..
            }
        )
    }
}

impl fmt::Display for EstimatorSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.id())
    }
}

impl std::str::FromStr for EstimatorSpec {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::parse(s)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ids_round_trip() {
        for id in [
            "com/ols",
            "com/ridge?alpha=0.5",
            "gcom/knn_reg?k=7&standardize=false",
            "xlearner/lasso+logistic_l1?alpha=0.1&e.lambda=0.01",
            "xlearner/ols+oracle",
            "ipw/logistic_l2?stabilized=true&trim=true",
            "ipw/qda?reg=0.1&trim=true&trim_high=0.95&trim_low=0.05",
            "ipw/oracle",
            "com/decision_tree_reg?max_depth=4&tune=true",
        ] {
            let spec = EstimatorSpec::parse(id).unwrap();
            assert_eq!(spec.id(), id);
            assert_eq!(EstimatorSpec::parse(&spec.id()).unwrap(), spec);
        }
    }

    #[test]
    fn defaults_and_errors() {
        let spec = EstimatorSpec::parse("xlearner/ridge").unwrap();
        assert_eq!(spec.id(), "xlearner/ridge+logistic_l2");
        assert!(matches!(EstimatorSpec::parse("com/svm"), Err(Error::UnknownEstimator(_))));
        assert!(matches!(EstimatorSpec::parse("dr/ols"), Err(Error::UnknownEstimator(_))));
        assert!(matches!(EstimatorSpec::parse("nonsense"), Err(Error::UnknownEstimator(_))));
        assert!(EstimatorSpec::parse("com/ridge?alpha=-1").is_err());
        assert!(EstimatorSpec::parse("com/ridge?k=3").is_err());
        assert!(EstimatorSpec::parse("com/knn_reg?k=2.5").is_err());
        assert!(EstimatorSpec::parse("ipw/oracle?lambda=1").is_err());
        assert!(EstimatorSpec::parse("ipw/logistic_l2?trim=true&trim_low=0.6&trim_high=0.4").is_err());
        let r = RegressorSpec::new(RegressorFamily::ElasticNet);
        assert_eq!(r.param("l1_ratio"), Some(0.5));
        assert_eq!(RegressorSpec::new(RegressorFamily::KernelRidgeRbf).param("gamma"), None);
    }

    #[test]
    fn sweeps_have_ten_points() {
        for f in RegressorFamily::all() {
            if let Some((name, values)) = f.sweep() {
                assert_eq!(values.len(), 10);
                assert!(f.params().iter().any(|p| p.name == name));
            }
        }
        for f in ClassifierFamily::all() {
            if let Some((name, values)) = f.sweep() {
                assert_eq!(values.len(), 10);
                assert!(f.params().iter().any(|p| p.name == name));
            }
        }
    }
}
