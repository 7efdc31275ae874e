//! TOML run configuration and its translation into library objects.

use std::sync::Arc;

use dpi_core::closed_loop::{ControllerSpec, Scenario, ScheduleEntry, DEFAULT_NORMAL_CONE_SAMPLES};
use dpi_core::controller::{DpiController, DpiGains, Initialization};
use dpi_core::plants::{FourTankParams, FourTankPlant, LtiPlant, Plant};
use dpi_core::sets::{matrix_from_rows, SetSpec};
use dpi_core::{ConvexSet, Metric};
use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::CliError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub plant: PlantConfig,
    pub controller: ControllerConfig,
    /// Input constraint set `C`.
    pub constraint: SetSpec,
    #[serde(default)]
    pub metric: MatrixSpec,
    pub schedule: Vec<ScheduleConfig>,
    pub horizon: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub x0: Option<Vec<f64>>,
    #[serde(default)]
    pub seed: u64,
    /// Input-space box bounding the region where certificates are sampled.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub operating_box: Option<BoxConfig>,
    #[serde(default = "default_samples")]
    pub samples: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sweep: Option<SweepConfig>,
}

fn default_samples() -> usize {
    DEFAULT_NORMAL_CONE_SAMPLES
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
pub enum PlantConfig {
    FourTank {
        #[serde(default, skip_serializing_if = "Option::is_none")]
        areas: Option<[f64; 4]>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        gamma: Option<[f64; 2]>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        g: Option<f64>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        ts: Option<f64>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        substeps: Option<usize>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        outlets: Option<[f64; 4]>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        u_nominal: Option<[f64; 2]>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        h_nominal: Option<[f64; 4]>,
    },
    Lti {
        a: Vec<Vec<f64>>,
        b: Vec<Vec<f64>>,
        b_w: Vec<Vec<f64>>,
        c: Vec<Vec<f64>>,
        d: Vec<Vec<f64>>,
        d_w: Vec<Vec<f64>>,
        ts: f64,
    },
}

/// Either a named matrix (`"identity"`, `"pi_inverse"`) or explicit rows.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum MatrixSpec {
    Named(String),
    Rows(Vec<Vec<f64>>),
}

impl Default for MatrixSpec {
    fn default() -> Self {
        MatrixSpec::Named("identity".into())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
pub enum ControllerConfig {
    Dpi {
        gain: MatrixSpec,
        ti: f64,
        lambda: f64,
        #[serde(default)]
        allow_unit_damping: bool,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        eta0: Option<Vec<f64>>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        u0: Option<Vec<f64>>,
    },
    Classical {
        gain: MatrixSpec,
        ti: f64,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        eta0: Option<Vec<f64>>,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScheduleConfig {
    pub step: usize,
    pub w: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BoxConfig {
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepConfig {
    pub ti: Vec<f64>,
    pub lambda: Vec<f64>,
    pub certificate: CertificateSpec,
    /// Overrides the run horizon for every grid point.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub horizon: Option<usize>,
}

/// `"estimate"` or explicit `{ mu, lipschitz }` values.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum CertificateSpec {
    Values { mu: f64, lipschitz: f64 },
    Named(String),
}

/// A plant together with its concrete type, for LTI-only checks.
#[derive(Clone)]
pub enum BuiltPlant {
    Lti(Arc<LtiPlant>),
    FourTank(Arc<FourTankPlant>),
}

impl BuiltPlant {
    pub fn shared(&self) -> Arc<dyn Plant> {
        match self {
            BuiltPlant::Lti(p) => p.clone(),
            BuiltPlant::FourTank(p) => p.clone(),
        }
    }
}

/// Everything a command needs, validated.
#[derive(Clone)]
pub struct Built {
    pub plant: BuiltPlant,
    pub scenario: Scenario,
    pub constraint: ConvexSet,
    pub operating_box: Option<ConvexSet>,
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self, CliError> {
        toml::from_str(text).map_err(|e| CliError::Config(e.to_string()))
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("configs serialize")
    }

    pub fn build(&self) -> Result<Built, CliError> {
        let plant = self.plant.build()?;
        let shared = plant.shared();
        let (m, p) = (shared.input_dim(), shared.error_dim());
        if m != p {
            return Err(CliError::Config(format!(
                "plant: input dimension {m} differs from error dimension {p}; square loops only"
            )));
        }
        let constraint = self.constraint.build().map_err(at("constraint"))?;
        let metric = match &self.metric {
            MatrixSpec::Named(n) if n == "identity" => Metric::identity(p),
            MatrixSpec::Named(n) => {
                return Err(CliError::Config(format!("metric: unknown named metric `{n}`")))
            }
            MatrixSpec::Rows(rows) => {
                Metric::new(matrix_from_rows(rows, "metric").map_err(at("metric"))?).map_err(at("metric"))?
            }
        };
        let controller = self.controller.build(&plant, constraint.clone(), metric)?;
        let operating_box = match &self.operating_box {
            Some(b) => Some(
                ConvexSet::new_box(DVector::from_column_slice(&b.lower), DVector::from_column_slice(&b.upper))
                    .map_err(at("operating_box"))?,
            ),
            None => None,
        };
        let schedule = self
            .schedule
            .iter()
            .map(|s| ScheduleEntry {
                start: s.step,
                w: DVector::from_column_slice(&s.w),
            })
            .collect();
        let mut scenario = Scenario::new(shared, controller, schedule, self.horizon);
        scenario.x0 = self.x0.as_deref().map(DVector::from_column_slice);
        scenario.seed = self.seed;
        scenario.normal_cone_samples = self.samples;
        scenario.input_region = operating_box.clone();
        scenario.validate().map_err(at("scenario"))?;
        Ok(Built {
            plant,
            scenario,
            constraint,
            operating_box,
        })
    }
}

/// Prefixes a library error with the config section it came from.
fn at(section: &'static str) -> impl Fn(dpi_core::Error) -> CliError {
    move |e| CliError::Core {
        context: section.to_string(),
        source: e,
    }
}

impl PlantConfig {
    pub fn build(&self) -> Result<BuiltPlant, CliError> {
        match self {
            PlantConfig::FourTank {
                areas,
                gamma,
                g,
                ts,
                substeps,
                outlets,
                u_nominal,
                h_nominal,
            } => {
                let d = FourTankParams::default();
                let params = FourTankParams {
                    areas: areas.unwrap_or(d.areas),
                    gamma: gamma.unwrap_or(d.gamma),
                    g: g.unwrap_or(d.g),
                    ts: ts.unwrap_or(d.ts),
                    substeps: substeps.unwrap_or(d.substeps),
                    outlets: outlets.or(d.outlets),
                    u_nominal: u_nominal.unwrap_or(d.u_nominal),
                    h_nominal: h_nominal.unwrap_or(d.h_nominal),
                };
                Ok(BuiltPlant::FourTank(Arc::new(
                    FourTankPlant::new(&params).map_err(at("plant"))?,
                )))
            }
            PlantConfig::Lti {
                a,
                b,
                b_w,
                c,
                d,
                d_w,
                ts,
            } => {
                let mat = |rows: &Vec<Vec<f64>>, name: &'static str| {
                    matrix_from_rows(rows, name).map_err(at("plant"))
                };
                let plant = LtiPlant::new(
                    mat(a, "plant.a")?,
                    mat(b, "plant.b")?,
                    mat(b_w, "plant.b_w")?,
                    mat(c, "plant.c")?,
                    mat(d, "plant.d")?,
                    mat(d_w, "plant.d_w")?,
                    *ts,
                )
                .map_err(at("plant"))?;
                Ok(BuiltPlant::Lti(Arc::new(plant)))
            }
        }
    }
}

fn resolve_gain(spec: &MatrixSpec, plant: &BuiltPlant) -> Result<DMatrix<f64>, CliError> {
    match (spec, plant) {
        (MatrixSpec::Named(n), BuiltPlant::FourTank(p)) if n == "pi_inverse" => Ok(p.pi_inverse()),
        (MatrixSpec::Named(n), _) if n == "identity" => {
            let m = plant.shared().input_dim();
            Ok(DMatrix::identity(m, m))
        }
        (MatrixSpec::Named(n), _) => Err(CliError::Config(format!(
            "controller.gain: `{n}` is not available for this plant"
        ))),
        (MatrixSpec::Rows(rows), _) => matrix_from_rows(rows, "controller.gain").map_err(at("controller")),
    }
}

impl ControllerConfig {
    fn build(&self, plant: &BuiltPlant, constraint: ConvexSet, metric: Metric) -> Result<ControllerSpec, CliError> {
        match self {
            ControllerConfig::Dpi {
                gain,
                ti,
                lambda,
                allow_unit_damping,
                eta0,
                u0,
            } => {
                let init = match (eta0, u0) {
                    (Some(_), Some(_)) => {
                        return Err(CliError::Config(
                            "controller: set at most one of `eta0` and `u0`".into(),
                        ))
                    }
                    (Some(e), None) => Initialization::State(DVector::from_column_slice(e)),
                    (None, Some(u)) => Initialization::FromInput(DVector::from_column_slice(u)),
                    (None, None) => Initialization::Default,
                };
                let gains = DpiGains {
                    allow_unit_damping: *allow_unit_damping,
                    ..DpiGains::new(*ti, *lambda)
                };
                let k = resolve_gain(gain, plant)?;
                // Surface gain, constraint and damping problems at load time.
                DpiController::new(
                    k.clone(),
                    constraint.clone(),
                    metric.clone(),
                    plant.shared().sample_time(),
                    gains,
                    init.clone(),
                )
                .map_err(at("controller"))?;
                Ok(ControllerSpec::Dpi {
                    gain: k,
                    constraint,
                    metric,
                    gains,
                    init,
                })
            }
            ControllerConfig::Classical { gain, ti, eta0 } => {
                let k = resolve_gain(gain, plant)?;
                let eta0 = eta0
                    .as_deref()
                    .map(DVector::from_column_slice)
                    .unwrap_or_else(|| DVector::zeros(k.ncols()));
                Ok(ControllerSpec::Classical {
                    gain: k,
                    ti: *ti,
                    eta0,
                    metric,
                })
            }
        }
    }
}
