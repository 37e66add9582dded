//! Common predictor interface and the name-keyed registry of regression
//! methods.

use std::collections::BTreeMap;
use std::fmt::Debug;

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::data::{Dataset, DatasetDoc};
use crate::error::{Error, Result};
use crate::gp::{ExactGp, OutputGradients};
use crate::kernel::KernelParams;
use crate::sparse::{subset_of_data, FitcPosterior, InducingSet, SsgpModel, SubsetStrategy, VfePosterior};

/// Anything that yields per-output predictive moments and their input
/// derivatives. Variances are latent (observation noise excluded).
pub trait Regressor: Send + Sync + Debug {
    fn name(&self) -> &'static str;
    fn input_dim(&self) -> usize;
    fn output_dim(&self) -> usize;
    fn params(&self) -> Vec<KernelParams>;
    fn predict_mean(&self, z: &DVector<f64>) -> DVector<f64>;
    fn predict(&self, z: &DVector<f64>) -> (DVector<f64>, DVector<f64>);
    fn predict_gradients(&self, z: &DVector<f64>) -> Vec<OutputGradients>;

    /// Exact-GP view, required by closed-form moment matching.
    fn as_exact(&self) -> Option<&ExactGp> {
        None
    }
}

fn collect_mean_var(n: usize, f: impl Fn(usize) -> (f64, f64)) -> (DVector<f64>, DVector<f64>) {
    let mut mean = DVector::zeros(n);
    let mut var = DVector::zeros(n);
    for d in 0..n {
        let (m, v) = f(d);
        mean[d] = m;
        var[d] = v;
    }
    (mean, var)
}

impl Regressor for ExactGp {
    fn name(&self) -> &'static str {
        "exact"
    }
    fn input_dim(&self) -> usize {
        ExactGp::input_dim(self)
    }
    fn output_dim(&self) -> usize {
        ExactGp::output_dim(self)
    }
    fn params(&self) -> Vec<KernelParams> {
        ExactGp::params(self)
    }
    fn predict_mean(&self, z: &DVector<f64>) -> DVector<f64> {
        DVector::from_fn(self.output_dim(), |d, _| self.expansion(d).mean(z))
    }
    fn predict(&self, z: &DVector<f64>) -> (DVector<f64>, DVector<f64>) {
        collect_mean_var(self.output_dim(), |d| self.expansion(d).mean_var(z))
    }
    fn predict_gradients(&self, z: &DVector<f64>) -> Vec<OutputGradients> {
        (0..self.output_dim()).map(|d| self.expansion(d).gradients(z)).collect()
    }
    fn as_exact(&self) -> Option<&ExactGp> {
        Some(self)
    }
}

macro_rules! expansion_regressor {
    ($ty:ty, $name:literal) => {
        impl Regressor for $ty {
            fn name(&self) -> &'static str {
                $name
            }
            fn input_dim(&self) -> usize {
                <$ty>::input_dim(self)
            }
            fn output_dim(&self) -> usize {
                <$ty>::output_dim(self)
            }
            fn params(&self) -> Vec<KernelParams> {
                <$ty>::params(self)
            }
            fn predict_mean(&self, z: &DVector<f64>) -> DVector<f64> {
                DVector::from_fn(self.output_dim(), |d, _| self.expansion(d).mean(z))
            }
            fn predict(&self, z: &DVector<f64>) -> (DVector<f64>, DVector<f64>) {
                collect_mean_var(self.output_dim(), |d| self.expansion(d).mean_var(z))
            }
            fn predict_gradients(&self, z: &DVector<f64>) -> Vec<OutputGradients> {
                (0..self.output_dim()).map(|d| self.expansion(d).gradients(z)).collect()
            }
        }
    };
}

expansion_regressor!(FitcPosterior, "fitc");
expansion_regressor!(VfePosterior, "vfe");

impl Regressor for SsgpModel {
    fn name(&self) -> &'static str {
        "ssgp"
    }
    fn input_dim(&self) -> usize {
        SsgpModel::input_dim(self)
    }
    fn output_dim(&self) -> usize {
        SsgpModel::output_dim(self)
    }
    fn params(&self) -> Vec<KernelParams> {
        SsgpModel::params(self)
    }
    fn predict_mean(&self, z: &DVector<f64>) -> DVector<f64> {
        DVector::from_fn(self.output_dim(), |d, _| self.mean_output(d, z))
    }
    fn predict(&self, z: &DVector<f64>) -> (DVector<f64>, DVector<f64>) {
        collect_mean_var(self.output_dim(), |d| self.mean_var_output(d, z))
    }
    fn predict_gradients(&self, z: &DVector<f64>) -> Vec<OutputGradients> {
        (0..self.output_dim()).map(|d| self.gradients_output(d, z)).collect()
    }
}

/// Method-specific knobs; unused fields are ignored by methods that do not
/// need them.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelOptions {
    /// Subset / inducing-set size.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub inducing: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub strategy: Option<SubsetStrategy>,
    /// Number of trigonometric features (even).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub features: Option<usize>,
    #[serde(default)]
    pub seed: u64,
    /// Explicit inducing inputs; when absent they are selected from the data.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub inducing_points: Option<Vec<Vec<f64>>>,
}

impl ModelOptions {
    fn subset_size(&self, method: &str) -> Result<usize> {
        self.inducing
            .ok_or_else(|| Error::input(format!("method `{method}` needs `inducing`")))
    }

    fn strategy(&self) -> SubsetStrategy {
        self.strategy.unwrap_or(SubsetStrategy::FarthestPoint)
    }

    fn inducing_set(&self, method: &str, data: &Dataset) -> Result<InducingSet> {
        if let Some(points) = &self.inducing_points {
            return InducingSet::new(points.iter().map(|p| DVector::from_vec(p.clone())).collect());
        }
        let m = self.subset_size(method)?;
        let sub = subset_of_data(data, m, self.strategy(), self.seed)?;
        InducingSet::new(sub.inputs().to_vec())
    }
}

/// One regression method, constructible by name.
pub trait ModelBuilder: Send + Sync {
    fn name(&self) -> &'static str;

    fn build(&self, data: &Dataset, params: &[KernelParams], opts: &ModelOptions) -> Result<Box<dyn Regressor>>;

    /// Pins data-dependent choices (such as selected inducing inputs) so a
    /// saved model rebuilds identically.
    fn resolve(&self, _data: &Dataset, opts: &ModelOptions) -> Result<ModelOptions> {
        Ok(opts.clone())
    }
}

struct ExactBuilder;
struct SodBuilder;
struct FitcBuilder;
struct VfeBuilder;
struct SsgpBuilder;

impl ModelBuilder for ExactBuilder {
    fn name(&self) -> &'static str {
        "exact"
    }
    fn build(&self, data: &Dataset, params: &[KernelParams], _: &ModelOptions) -> Result<Box<dyn Regressor>> {
        Ok(Box::new(ExactGp::fit(data, params)?))
    }
}

impl ModelBuilder for SodBuilder {
    fn name(&self) -> &'static str {
        "sod"
    }
    fn build(&self, data: &Dataset, params: &[KernelParams], opts: &ModelOptions) -> Result<Box<dyn Regressor>> {
        let sub = subset_of_data(data, opts.subset_size("sod")?, opts.strategy(), opts.seed)?;
        Ok(Box::new(ExactGp::fit(&sub, params)?))
    }
}

fn pin_inducing(method: &str, data: &Dataset, opts: &ModelOptions) -> Result<ModelOptions> {
    let set = opts.inducing_set(method, data)?;
    let mut out = opts.clone();
    out.inducing = Some(set.len());
    out.inducing_points = Some(set.points().iter().map(|p| p.iter().copied().collect()).collect());
    Ok(out)
}

impl ModelBuilder for FitcBuilder {
    fn name(&self) -> &'static str {
        "fitc"
    }
    fn build(&self, data: &Dataset, params: &[KernelParams], opts: &ModelOptions) -> Result<Box<dyn Regressor>> {
        let set = opts.inducing_set("fitc", data)?;
        Ok(Box::new(FitcPosterior::fit(data, params, &set)?))
    }
    fn resolve(&self, data: &Dataset, opts: &ModelOptions) -> Result<ModelOptions> {
        pin_inducing("fitc", data, opts)
    }
}

impl ModelBuilder for VfeBuilder {
    fn name(&self) -> &'static str {
        "vfe"
    }
    fn build(&self, data: &Dataset, params: &[KernelParams], opts: &ModelOptions) -> Result<Box<dyn Regressor>> {
        let set = opts.inducing_set("vfe", data)?;
        Ok(Box::new(VfePosterior::fit(data, params, &set)?))
    }
    fn resolve(&self, data: &Dataset, opts: &ModelOptions) -> Result<ModelOptions> {
        pin_inducing("vfe", data, opts)
    }
}

impl ModelBuilder for SsgpBuilder {
    fn name(&self) -> &'static str {
        "ssgp"
    }
    fn build(&self, data: &Dataset, params: &[KernelParams], opts: &ModelOptions) -> Result<Box<dyn Regressor>> {
        let m = opts
            .features
            .ok_or_else(|| Error::input("method `ssgp` needs `features`"))?;
        Ok(Box::new(SsgpModel::fit(data, params, m, opts.seed)?))
    }
}

pub struct ModelRegistry {
    builders: BTreeMap<&'static str, Box<dyn ModelBuilder>>,
}

impl Default for ModelRegistry {
    fn default() -> Self {
        let mut r = ModelRegistry {
            builders: BTreeMap::new(),
        };
        r.register(Box::new(ExactBuilder));
        r.register(Box::new(SodBuilder));
        r.register(Box::new(FitcBuilder));
        r.register(Box::new(VfeBuilder));
        r.register(Box::new(SsgpBuilder));
        r
    }
}

impl ModelRegistry {
    pub fn register(&mut self, builder: Box<dyn ModelBuilder>) {
        self.builders.insert(builder.name(), builder);
    }

    pub fn names(&self) -> Vec<&'static str> {
        self.builders.keys().copied().collect()
    }

    pub fn get(&self, name: &str) -> Result<&dyn ModelBuilder> {
        self.builders
            .get(name)
            .map(|b| b.as_ref())
            .ok_or_else(|| Error::Unknown {
                kind: "model method",
                name: name.to_string(),
            })
    }

    pub fn build(
        &self,
        name: &str,
        data: &Dataset,
        params: &[KernelParams],
        opts: &ModelOptions,
    ) -> Result<Box<dyn Regressor>> {
        self.get(name)?.build(data, params, opts)
    }
}

/// JSON model file: method tag, hyperparameters, resolved options and the
/// training data. Factorizations are recomputed on load.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelDocument {
    pub method: String,
    pub params: Vec<KernelParams>,
    #[serde(default)]
    pub options: ModelOptions,
    pub data: DatasetDoc,
}

impl ModelDocument {
    pub fn new(
        registry: &ModelRegistry,
        method: &str,
        data: &Dataset,
        params: &[KernelParams],
        opts: &ModelOptions,
    ) -> Result<Self> {
        let options = registry.get(method)?.resolve(data, opts)?;
        Ok(ModelDocument {
            method: method.to_string(),
            params: params.to_vec(),
            options,
            data: data.into(),
        })
    }

    pub fn dataset(&self) -> Result<Dataset> {
        Dataset::try_from(&self.data)
    }

    pub fn build(&self, registry: &ModelRegistry) -> Result<Box<dyn Regressor>> {
        registry.build(&self.method, &self.dataset()?, &self.params, &self.options)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        Ok(serde_json::from_str(s)?)
    }
}
