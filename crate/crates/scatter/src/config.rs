//! JSON configuration for the command line. Experiment configs start from a
//! preset chosen by id and scale; a config file overrides any subset of the
//! preset's fields.

use std::fmt;
use std::str::FromStr;

use serde::de::{self, Visitor};
use serde::{Deserialize, Deserializer, Serialize, Serializer};
use serde_json::Value;

use scatter_core::forward::{BornOrder, CouplingConvention};
use scatter_core::geometry::{sphere_directions, Coverage, DirectionSet, VoxelGrid};
use scatter_core::models::ScattererModel;

use crate::error::{AppError, AppResult};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum Scale {
    Paper,
    Desk,
}

/// Born order written as a positive integer or `"inf"`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Order(pub BornOrder);

impl Serialize for Order {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        match self.0 {
            BornOrder::Finite(m) => s.serialize_u64(m as u64),
            BornOrder::Infinite => s.serialize_str("inf"),
        }
    }
}

impl<'de> Deserialize<'de> for Order {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        struct V;
        impl Visitor<'_> for V {
            type Value = Order;
            fn expecting(&self, f: &mut fmt::Formatter) -> fmt::Result {
                f.write_str("a positive integer or \"inf\"")
            }
            fn visit_u64<E: de::Error>(self, m: u64) -> Result<Order, E> {
                if m == 0 {
                    return Err(E::custom("Born order must be at least 1"));
                }
                Ok(Order(BornOrder::Finite(m as usize)))
            }
            fn visit_i64<E: de::Error>(self, m: i64) -> Result<Order, E> {
                if m < 1 {
                    return Err(E::custom("Born order must be at least 1"));
                }
                self.visit_u64(m as u64)
            }
            fn visit_str<E: de::Error>(self, s: &str) -> Result<Order, E> {
                s.parse().map_err(E::custom)
            }
        }
        d.deserialize_any(V)
    }
}

impl FromStr for Order {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "inf" | "infinite" => Ok(Order(BornOrder::Infinite)),
            _ => match s.parse::<usize>() {
                Ok(m) if m >= 1 => Ok(Order(BornOrder::Finite(m))),
                _ => Err(format!("expected a positive integer or \"inf\", got `{s}`")),
            },
        }
    }
}

impl fmt::Display for Order {
    fn fmt(&self, f: &mut fmt::Formatter) -> fmt::Result {
        self.0.fmt(f)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CoverageSpec {
    Full,
    Hemisphere,
}

impl From<CoverageSpec> for Coverage {
    fn from(c: CoverageSpec) -> Self {
        match c {
            CoverageSpec::Full => Coverage::FullSphere,
            CoverageSpec::Hemisphere => Coverage::Hemisphere,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ConventionSpec {
    Helmholtz,
    PointScatterer,
}

impl From<ConventionSpec> for CouplingConvention {
    fn from(c: ConventionSpec) -> Self {
        match c {
            ConventionSpec::Helmholtz => CouplingConvention::Helmholtz,
            ConventionSpec::PointScatterer => CouplingConvention::PointScatterer,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridSpec {
    pub side_length: f64,
    pub n_per_side: usize,
}

impl GridSpec {
    pub fn new(side_length: f64, n_per_side: usize) -> Self {
        Self { side_length, n_per_side }
    }

    pub fn build(&self) -> AppResult<VoxelGrid> {
        VoxelGrid::new(self.side_length, self.n_per_side).map_err(|e| AppError::config(format!("grid: {e}")))
    }
}

/// Grid and direction sets shared by the single-shot commands.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SetupSpec {
    pub grid: GridSpec,
    pub measurements: usize,
    pub sources: usize,
    #[serde(default = "default_coverage")]
    pub coverage: CoverageSpec,
    #[serde(default = "default_convention")]
    pub convention: ConventionSpec,
}

fn default_coverage() -> CoverageSpec {
    CoverageSpec::Full
}

fn default_convention() -> ConventionSpec {
    ConventionSpec::Helmholtz
}

pub fn directions(count: usize, coverage: CoverageSpec) -> AppResult<DirectionSet> {
    sphere_directions(count, coverage.into()).map_err(|e| AppError::config(format!("directions: {e}")))
}

/// Scatterer description; `random-voxels` draws its seed from the command
/// line.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum ModelSpec {
    TwoSpheres { radius: f64, separation: f64, eta0: f64 },
    RadialSphere { radius: f64, eta0: f64 },
    RandomVoxels { count: usize, eta0: f64 },
    /// Explicit `[index, re, im]` triples.
    Voxels { entries: Vec<(usize, f64, f64)> },
}

impl ModelSpec {
    pub fn to_model(&self, seed: u64) -> Option<ScattererModel> {
        Some(match *self {
            ModelSpec::TwoSpheres { radius, separation, eta0 } => ScattererModel::TwoSpheres { radius, separation, eta0 },
            ModelSpec::RadialSphere { radius, eta0 } => ScattererModel::RadialSphere { radius, eta0 },
            ModelSpec::RandomVoxels { count, eta0 } => ScattererModel::RandomVoxels { count, eta0, seed },
            ModelSpec::Voxels { .. } => return None,
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ForwardConfig {
    pub setup: SetupSpec,
    pub model: ModelSpec,
    #[serde(default = "infinite")]
    pub born_order: Order,
    #[serde(default)]
    pub noise_level: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ReconstructConfig {
    pub setup: SetupSpec,
    /// Measurement file, relative to the config file.
    pub measurement: String,
    /// Optional ground-truth potential, relative to the config file.
    #[serde(default)]
    pub truth: Option<String>,
    pub threshold: usize,
    #[serde(default = "infinite")]
    pub born_order: Order,
    #[serde(default = "default_iterations")]
    pub iterations: usize,
    #[serde(default)]
    pub tol: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CoherenceConfig {
    pub setup: SetupSpec,
    #[serde(default)]
    pub model: Option<ModelSpec>,
    #[serde(default = "second")]
    pub born_order: Order,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GenericSpec {
    pub mu0: f64,
    #[serde(default)]
    pub error_caps: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RipSpec {
    pub delta_2s: f64,
    pub gamma: f64,
    pub v_inf: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BoundsConfig {
    #[serde(default)]
    pub inputs: Option<crate::formats::BoundInputsJson>,
    /// Subset of `linear`, `second-born`, `full-nonlinear`.
    #[serde(default = "all_theorems")]
    pub theorems: Vec<String>,
    #[serde(default)]
    pub generic: Option<GenericSpec>,
    #[serde(default)]
    pub rip: Option<RipSpec>,
}

fn infinite() -> Order {
    Order(BornOrder::Infinite)
}

fn second() -> Order {
    Order(BornOrder::Finite(2))
}

fn default_iterations() -> usize {
    100
}

fn all_theorems() -> Vec<String> {
    ["linear", "second-born", "full-nonlinear"].map(String::from).to_vec()
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord)]
pub enum ExperimentId {
    CoherenceVsDirections,
    SingleScatterer,
    CoherenceVsSparsity,
    Convergence1,
    Convergence2,
    Model1,
    Model2,
    SuccessRate,
}

impl ExperimentId {
    pub const ALL: [ExperimentId; 8] = [
        ExperimentId::CoherenceVsDirections,
        ExperimentId::SingleScatterer,
        ExperimentId::CoherenceVsSparsity,
        ExperimentId::Convergence1,
        ExperimentId::Convergence2,
        ExperimentId::Model1,
        ExperimentId::Model2,
        ExperimentId::SuccessRate,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            ExperimentId::CoherenceVsDirections => "coherence-vs-directions",
            ExperimentId::SingleScatterer => "single-scatterer",
            ExperimentId::CoherenceVsSparsity => "coherence-vs-sparsity",
            ExperimentId::Convergence1 => "convergence-1",
            ExperimentId::Convergence2 => "convergence-2",
            ExperimentId::Model1 => "model-1",
            ExperimentId::Model2 => "model-2",
            ExperimentId::SuccessRate => "success-rate",
        }
    }

    pub fn figure(self) -> &'static str {
        match self {
            ExperimentId::CoherenceVsDirections => "Fig. 2",
            ExperimentId::SingleScatterer => "Fig. 3",
            ExperimentId::CoherenceVsSparsity => "Fig. 4",
            ExperimentId::Convergence1 => "Fig. 5 (left)",
            ExperimentId::Convergence2 => "Fig. 5 (right)",
            ExperimentId::Model1 => "Table 1, Figs. 6-7",
            ExperimentId::Model2 => "Table 2, Figs. 8-9",
            ExperimentId::SuccessRate => "Fig. 10",
        }
    }
}

impl FromStr for ExperimentId {
    type Err = AppError;
    fn from_str(s: &str) -> AppResult<Self> {
        Self::ALL.into_iter().find(|id| id.as_str() == s).ok_or_else(|| {
            let known: Vec<_> = Self::ALL.iter().map(|i| i.as_str()).collect();
            AppError::config(format!("unknown experiment `{s}`; expected one of {}", known.join(", ")))
        })
    }
}

impl fmt::Display for ExperimentId {
    fn fmt(&self, f: &mut fmt::Formatter) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub experiment: String,
    /// Reconstruction grid (and the only grid where no data grid is given).
    pub grid: GridSpec,
    /// Finer grid the synthetic data is generated on.
    pub data_grid: Option<GridSpec>,
    /// `N_d`
    pub measurements: usize,
    /// `N_s`
    pub sources: usize,
    /// Values of `N_d` swept by the direction study.
    pub direction_sweep: Vec<usize>,
    pub coverage: CoverageSpec,
    pub convention: ConventionSpec,
    pub eta0: Vec<f64>,
    /// Target `‖VΓ‖₁` for the fixed-coupling regime of the sparsity study.
    pub fixed_coupling: Option<f64>,
    pub sparsity: Vec<usize>,
    pub born_orders: Vec<Order>,
    /// Entries kept by the thresholding step; the true sparsity when absent.
    pub threshold: Option<usize>,
    pub iterations: usize,
    pub noise_level: f64,
    pub realizations: usize,
    pub seed: u64,
    /// Upper end of the distance axis of the single-scatterer curves.
    pub rho_max: f64,
    pub rho_samples: usize,
    pub out_dir: Option<String>,
}

fn orders(list: &[usize], inf: bool) -> Vec<Order> {
    let mut v: Vec<Order> = list.iter().map(|&m| Order(BornOrder::Finite(m))).collect();
    if inf {
        v.push(infinite());
    }
    v
}

impl ExperimentConfig {
    fn base(id: ExperimentId) -> Self {
        Self {
            experiment: id.as_str().into(),
            grid: GridSpec::new(3.0, 10),
            data_grid: None,
            measurements: 500,
            sources: 500,
            direction_sweep: Vec::new(),
            coverage: CoverageSpec::Full,
            convention: ConventionSpec::PointScatterer,
            eta0: Vec::new(),
            fixed_coupling: None,
            sparsity: Vec::new(),
            born_orders: orders(&[1, 2], true),
            threshold: None,
            iterations: 30,
            noise_level: 0.0,
            realizations: 1,
            seed: 2017,
            rho_max: 3.0,
            rho_samples: 600,
            out_dir: None,
        }
    }

    pub fn preset(id: ExperimentId, scale: Scale) -> Self {
        let paper = scale == Scale::Paper;
        let mut c = Self::base(id);
        match id {
            ExperimentId::CoherenceVsDirections => {
                c.direction_sweep = if paper {
                    vec![1, 2, 5, 10, 20, 50, 100, 200, 300, 400, 500, 750, 1000]
                } else {
                    vec![1, 10, 50, 100, 250, 500]
                };
                c.born_orders = orders(&[1], false);
            }
            ExperimentId::SingleScatterer => {
                c.eta0 = vec![0.05, 0.1, 0.2];
                c.born_orders = orders(&[2], false);
            }
            ExperimentId::CoherenceVsSparsity => {
                c.eta0 = vec![0.1];
                c.fixed_coupling = Some(0.3553);
                c.sparsity = if paper { (0..=10).collect() } else { vec![0, 1, 2, 4, 8] };
                c.realizations = if paper { 100 } else { 10 };
            }
            ExperimentId::Convergence1 | ExperimentId::Convergence2 => {
                let one = id == ExperimentId::Convergence1;
                c.grid = GridSpec::new(if one { 4.75 } else { 4.55 }, 10);
                c.measurements = 400;
                c.sources = 400;
                c.eta0 = vec![if one { 1e-5 } else { 1e-4 }];
                c.sparsity = vec![3];
            }
            ExperimentId::Model1 | ExperimentId::Model2 => {
                let one = id == ExperimentId::Model1;
                c.convention = ConventionSpec::Helmholtz;
                c.coverage = CoverageSpec::Hemisphere;
                c.noise_level = 0.01;
                if paper {
                    c.grid = GridSpec::new(5.0, 21);
                    c.data_grid = Some(GridSpec::new(5.0, 25));
                    c.measurements = 225;
                    c.sources = 225;
                    c.iterations = 100;
                    c.threshold = Some(if one { 230 } else { 1800 });
                    c.born_orders = if one { orders(&[1, 2, 3], true) } else { orders(&[1, 3, 5, 7, 9], true) };
                    c.eta0 = if one { vec![0.01, 0.06, 0.1, 0.4] } else { vec![0.09] };
                } else {
                    c.grid = GridSpec::new(5.0, 11);
                    c.data_grid = Some(GridSpec::new(5.0, 13));
                    c.measurements = 100;
                    c.sources = 100;
                    c.iterations = 30;
                    c.threshold = Some(if one { 40 } else { 240 });
                    c.born_orders = if one { orders(&[1, 2], true) } else { orders(&[1, 3], true) };
                    c.eta0 = if one { vec![0.01, 0.1] } else { vec![0.09] };
                }
            }
            ExperimentId::SuccessRate => {
                c.convention = ConventionSpec::Helmholtz;
                c.coverage = CoverageSpec::Hemisphere;
                c.grid = GridSpec::new(5.0, 10);
                c.measurements = 225;
                c.sources = 225;
                c.noise_level = 0.01;
                c.iterations = 50;
                c.eta0 = vec![0.05, 0.1];
                if paper {
                    c.sparsity = (1..=50).collect();
                    c.born_orders = orders(&[1, 2, 3, 4], true);
                    c.realizations = 500;
                } else {
                    c.sparsity = vec![5, 15, 25];
                    c.born_orders = orders(&[1, 2], true);
                    c.realizations = 50;
                }
            }
        }
        c
    }

    /// Preset for `id` at `scale` with `overrides` merged on top, validated.
    pub fn resolve(id: ExperimentId, scale: Scale, overrides: Option<&Value>) -> AppResult<Self> {
        let mut value = serde_json::to_value(Self::preset(id, scale)).expect("preset serializes");
        if let Some(o) = overrides {
            if !o.is_object() {
                return Err(AppError::config("experiment config must be a JSON object"));
            }
            if let Some(named) = o.get("experiment") {
                if named.as_str() != Some(id.as_str()) {
                    return Err(AppError::config(format!(
                        "config is for experiment {named}, but `{id}` was requested"
                    )));
                }
            }
            merge(&mut value, o);
        }
        let cfg: Self = serde_json::from_value(value).map_err(|e| AppError::config(e.to_string()))?;
        cfg.validate(id)?;
        Ok(cfg)
    }

    pub fn id(&self) -> AppResult<ExperimentId> {
        self.experiment.parse()
    }

    pub fn validate(&self, id: ExperimentId) -> AppResult<()> {
        let bad = |m: String| Err(AppError::config(m));
        self.grid.build()?;
        if let Some(g) = &self.data_grid {
            g.build()?;
        }
        if self.measurements == 0 || self.sources == 0 {
            return bad("direction counts must be positive".into());
        }
        if self.iterations == 0 {
            return bad("iterations must be at least 1".into());
        }
        if !(self.noise_level >= 0.0) {
            return bad(format!("noise_level must be non-negative, got {}", self.noise_level));
        }
        if let Some(e) = self.eta0.iter().find(|e| !(e.is_finite() && **e >= 0.0)) {
            return bad(format!("eta0 values must be finite and non-negative, got {e}"));
        }
        if self.threshold == Some(0) {
            return bad("threshold must be at least 1".into());
        }
        let needs = |ok: bool, what: &str| if ok { Ok(()) } else { bad(format!("{id} needs {what}")) };
        match id {
            ExperimentId::CoherenceVsDirections => {
                needs(!self.direction_sweep.is_empty() && !self.direction_sweep.contains(&0), "a non-empty direction_sweep of positive counts")?
            }
            ExperimentId::SingleScatterer => {
                needs(!self.eta0.is_empty(), "eta0 values")?;
                needs(self.rho_max >= self.grid.side_length / self.grid.n_per_side as f64, "rho_max of at least one voxel spacing")?;
                needs(self.rho_samples >= 2, "rho_samples ≥ 2")?;
            }
            ExperimentId::CoherenceVsSparsity => {
                needs(!self.sparsity.is_empty() && self.realizations > 0, "sparsity values and realizations")?;
                needs(self.eta0.len() == 1, "exactly one eta0")?;
                if let Some(g) = self.fixed_coupling {
                    needs(g > 0.0 && g.is_finite(), "a positive fixed_coupling")?;
                }
            }
            ExperimentId::Convergence1 | ExperimentId::Convergence2 => {
                needs(self.eta0.len() == 1 && self.sparsity.len() == 1, "exactly one eta0 and one sparsity")?;
                needs(self.sparsity[0] >= 1, "sparsity ≥ 1")?;
            }
            ExperimentId::Model1 | ExperimentId::Model2 => {
                needs(!self.eta0.is_empty() && !self.born_orders.is_empty(), "eta0 values and born_orders")?;
                needs(self.threshold.is_some(), "a threshold")?;
            }
            ExperimentId::SuccessRate => {
                needs(!self.eta0.is_empty() && !self.sparsity.is_empty(), "eta0 and sparsity values")?;
                needs(!self.born_orders.is_empty() && self.realizations > 0, "born_orders and realizations")?;
                let n = self.grid.n_per_side.pow(3);
                needs(self.sparsity.iter().all(|&s| s <= n), "sparsity values within the grid")?;
            }
        }
        Ok(())
    }
}

/// Recursive object merge; non-object values in `over` replace `base`.
pub fn merge(base: &mut Value, over: &Value) {
    match (base, over) {
        (Value::Object(b), Value::Object(o)) => {
            for (k, v) in o {
                match b.get_mut(k) {
                    Some(slot) if slot.is_object() && v.is_object() => merge(slot, v),
                    _ => {
                        b.insert(k.clone(), v.clone());
                    }
                }
            }
        }
        (b, o) => *b = o.clone(),
    }
}

pub fn parse_json<T: serde::de::DeserializeOwned>(text: &str, what: &str) -> AppResult<T> {
    serde_json::from_str(text).map_err(|e| AppError::config(format!("{what}: {e}")))
}
