//! Run configuration read from TOML.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::kernel::KernelSpec;
use crate::plant::{LtiPlant, Plant, PolynomialSisoPlant, ReferenceProfile};
use crate::solver::{BoxSet, CostWeights, DeepcConfig, GdConfig, RobustConfig};
use crate::trajectory::Dims;

/// Sections that must appear in every config file.
pub const REQUIRED_SECTIONS: [&str; 6] = [
    "plant",
    "excitation",
    "predictors",
    "cost",
    "controllers",
    "experiment",
];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub plant: PlantConfig,
    pub excitation: ExcitationConfig,
    pub predictors: PredictorConfig,
    pub cost: CostWeights,
    pub controllers: ControllerConfig,
    pub experiment: ExperimentConfig,
    #[serde(default)]
    pub montecarlo: MonteCarloConfig,
    #[serde(default)]
    pub output: OutputConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum PlantConfig {
    PolynomialSiso {
        #[serde(default)]
        y0: f64,
        #[serde(default)]
        u0: f64,
    },
    /// Random stable LTI system.
    Lti {
        order: usize,
        inputs: usize,
        outputs: usize,
        radius: f64,
        seed: u64,
    },
}

impl PlantConfig {
    pub fn build(&self) -> Result<Box<dyn Plant>> {
        Ok(match *self {
            PlantConfig::PolynomialSiso { y0, u0 } => {
                Box::new(PolynomialSisoPlant::with_state(y0, u0))
            }
            PlantConfig::Lti {
                order,
                inputs,
                outputs,
                radius,
                seed,
            } => {
                if order == 0 || inputs == 0 || outputs == 0 || !(radius > 0.0 && radius < 1.0) {
                    return Err(Error::config(
                        "plant",
                        "lti needs order, inputs, outputs >= 1 and 0 < radius < 1",
                    ));
                }
                Box::new(LtiPlant::random_stable(
                    order, inputs, outputs, radius, seed,
                ))
            }
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExcitationConfig {
    #[serde(default)]
    pub mean: f64,
    pub variance: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct KoopmanConfig {
    pub n_rbf: usize,
    pub half_width: f64,
    pub seed: u64,
}

impl Default for KoopmanConfig {
    fn default() -> Self {
        Self {
            n_rbf: 10,
            half_width: 1.5,
            seed: 7,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PredictorConfig {
    pub gamma: f64,
    pub kernels: Vec<KernelSpec>,
    #[serde(default)]
    pub koopman: KoopmanConfig,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    /// One controller per configured kernel.
    Rokdeepc,
    /// One controller per configured kernel.
    KernelMpc,
    Deepc,
    KoopmanMpc,
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BoundsConfig {
    pub u_lower: Option<f64>,
    pub u_upper: Option<f64>,
    pub y_lower: Option<f64>,
    pub y_upper: Option<f64>,
}

impl BoundsConfig {
    fn make(lower: Option<f64>, upper: Option<f64>, len: usize) -> Result<Option<BoxSet>> {
        if lower.is_none() && upper.is_none() {
            return Ok(None);
        }
        BoxSet::uniform(
            len,
            lower.unwrap_or(f64::NEG_INFINITY),
            upper.unwrap_or(f64::INFINITY),
        )
        .map(Some)
    }

    pub fn u_box(&self, dims: &Dims) -> Result<Option<BoxSet>> {
        Self::make(self.u_lower, self.u_upper, dims.u_len())
    }

    pub fn y_box(&self, dims: &Dims) -> Result<Option<BoxSet>> {
        Self::make(self.y_lower, self.y_upper, dims.y_len())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ControllerConfig {
    pub methods: Vec<Method>,
    #[serde(default)]
    pub robust: RobustConfig,
    #[serde(default)]
    pub gd: GdConfig,
    #[serde(default)]
    pub deepc: DeepcConfig,
    #[serde(default)]
    pub bounds: BoundsConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    /// Length of the recorded data trajectory.
    pub t_data: usize,
    pub t_ini: usize,
    /// Prediction horizon `N`.
    pub horizon: usize,
    /// Inputs applied per cycle (`k`).
    pub control_horizon: usize,
    /// Closed-loop length.
    pub steps: usize,
    /// Length of the open-loop prediction test.
    pub rollout_steps: usize,
    pub prediction_noise: Vec<f64>,
    /// Measurement noise for data and loop in single closed-loop runs.
    #[serde(default)]
    pub control_noise: f64,
    pub seed: u64,
    pub reference: ReferenceProfile,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MonteCarloConfig {
    pub n_runs: usize,
    pub noise_variance: f64,
    pub methods: Vec<Method>,
    /// Replaces `controllers.robust` for these runs.
    #[serde(default)]
    pub robust: Option<RobustConfig>,
}

impl Default for MonteCarloConfig {
    fn default() -> Self {
        Self {
            n_runs: 20,
            noise_variance: 1.5e-3,
            methods: vec![Method::Rokdeepc, Method::KernelMpc],
            robust: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputConfig {
    pub dir: PathBuf,
}

impl Default for OutputConfig {
    fn default() -> Self {
        Self {
            dir: PathBuf::from("results"),
        }
    }
}

impl RunConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let table: toml::Table = text
            .parse()
            .map_err(|e: toml::de::Error| Error::config("<document>", e.message().to_string()))?;
        for section in REQUIRED_SECTIONS {
            if !table.contains_key(section) {
                return Err(Error::config(section, "missing section"));
            }
        }
        let cfg: RunConfig =
            serde_path_to_error::deserialize(toml::Value::Table(table)).map_err(|e| {
                let path = e.path().to_string();
                Error::config(path, e.into_inner().message().to_string())
            })?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        Self::from_toml_str(&fs::read_to_string(path).map_err(|e| Error::io(path, e))?)
    }

    pub fn to_toml_string(&self) -> Result<String> {
        toml::to_string_pretty(self).map_err(|e| Error::Serde(e.to_string()))
    }

    /// Numeric range checks beyond what the types enforce.
    pub fn validate(&self) -> Result<()> {
        let e = &self.experiment;
        let bad = |path: &str, msg: &str| Err(Error::config(path, msg));
        if e.t_ini == 0 {
            return bad("experiment.t_ini", "must be >= 1");
        }
        if e.horizon == 0 {
            return bad("experiment.horizon", "must be >= 1");
        }
        if e.control_horizon == 0 || e.control_horizon > e.horizon {
            return bad("experiment.control_horizon", "must be in 1..=horizon");
        }
        if e.t_data < e.t_ini + e.horizon {
            return bad("experiment.t_data", "must be at least t_ini + horizon");
        }
        if e.steps < e.t_ini {
            return bad("experiment.steps", "must be at least t_ini");
        }
        if e.rollout_steps == 0 || !e.rollout_steps.is_multiple_of(e.horizon) {
            return bad(
                "experiment.rollout_steps",
                "must be a positive multiple of horizon",
            );
        }
        if e.prediction_noise
            .iter()
            .chain([&e.control_noise])
            .any(|v| !(*v >= 0.0 && v.is_finite()))
        {
            return bad(
                "experiment.prediction_noise",
                "noise variances must be finite and >= 0",
            );
        }
        if !(self.excitation.variance > 0.0 && self.excitation.variance.is_finite()) {
            return bad("excitation.variance", "must be positive");
        }
        if !(self.predictors.gamma > 0.0) {
            return bad("predictors.gamma", "must be positive");
        }
        for (i, k) in self.predictors.kernels.iter().enumerate() {
            k.validate().map_err(|err| {
                Error::config(format!("predictors.kernels[{i}]"), err.to_string())
            })?;
        }
        let needs_kernel = self
            .controllers
            .methods
            .iter()
            .chain(&self.montecarlo.methods)
            .any(|m| matches!(m, Method::Rokdeepc | Method::KernelMpc));
        if needs_kernel && self.predictors.kernels.is_empty() {
            return bad(
                "predictors.kernels",
                "kernel controllers need at least one kernel",
            );
        }
        self.cost
            .validate()
            .map_err(|err| Error::config("cost", err.to_string()))?;
        self.controllers
            .robust
            .validate()
            .map_err(|err| Error::config("controllers.robust", err.to_string()))?;
        if let Some(r) = &self.montecarlo.robust {
            r.validate()
                .map_err(|err| Error::config("montecarlo.robust", err.to_string()))?;
        }
        self.controllers
            .gd
            .validate()
            .map_err(|err| Error::config("controllers.gd", err.to_string()))?;
        if self.montecarlo.n_runs < 2 {
            return bad("montecarlo.n_runs", "must be >= 2");
        }
        if !(self.montecarlo.noise_variance >= 0.0) {
            return bad("montecarlo.noise_variance", "must be >= 0");
        }
        let b = &self.controllers.bounds;
        for (name, lo, hi) in [("u", b.u_lower, b.u_upper), ("y", b.y_lower, b.y_upper)] {
            if let (Some(lo), Some(hi)) = (lo, hi) {
                if lo > hi {
                    return Err(Error::config(
                        format!("controllers.bounds.{name}_lower"),
                        "lower bound exceeds upper bound",
                    ));
                }
            }
        }
        self.plant.build().map(|_| ())
    }

    pub fn dims(&self) -> Result<Dims> {
        let plant = self.plant.build()?;
        Dims::new(
            plant.m(),
            plant.p(),
            self.experiment.t_ini,
            self.experiment.horizon,
        )
    }

    /// Hex SHA-256 of the canonical JSON encoding, without the output directory.
    pub fn fingerprint(&self) -> String {
        let mut value = serde_json::to_value(self).expect("config serializes");
        if let Some(map) = value.as_object_mut() {
            map.remove("output");
        }
        let json = serde_json::to_string(&value).expect("config serializes");
        let digest = Sha256::digest(json.as_bytes());
        digest.iter().map(|b| format!("{b:02x}")).collect()
    }

    /// The polynomial SISO benchmark with the settings used throughout the tests.
    pub fn example1() -> Self {
        RunConfig {
            plant: PlantConfig::PolynomialSiso { y0: 0.0, u0: 0.0 },
            excitation: ExcitationConfig {
                mean: 0.0,
                variance: 0.01,
            },
            predictors: PredictorConfig {
                gamma: 0.01,
                kernels: vec![
                    KernelSpec::Polynomial {
                        offset: 1.0,
                        degree: 10,
                    },
                    KernelSpec::Gaussian { two_sigma_sq: 0.4 },
                    KernelSpec::Exponential { scale: 0.2 },
                ],
                koopman: KoopmanConfig::default(),
            },
            cost: CostWeights::default(),
            controllers: ControllerConfig {
                methods: vec![Method::Rokdeepc, Method::Deepc, Method::KoopmanMpc],
                robust: RobustConfig::default(),
                gd: GdConfig {
                    alpha: 1e-3,
                    ..GdConfig::default()
                },
                deepc: DeepcConfig::default(),
                bounds: BoundsConfig::default(),
            },
            experiment: ExperimentConfig {
                t_data: 600,
                t_ini: 1,
                horizon: 5,
                control_horizon: 1,
                steps: 200,
                rollout_steps: 50,
                prediction_noise: vec![0.0, 1e-3],
                control_noise: 0.0,
                seed: 1,
                reference: ReferenceProfile::example1(),
            },
            montecarlo: MonteCarloConfig {
                robust: Some(RobustConfig {
                    lambda_k_prime: 1e6,
                    ..RobustConfig::default()
                }),
                ..MonteCarloConfig::default()
            },
            output: OutputConfig::default(),
        }
    }
}
