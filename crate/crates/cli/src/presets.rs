//! Built-in scenarios.

use crate::{CliError, RunConfig};

pub struct Preset {
    pub name: &'static str,
    pub description: &'static str,
    pub toml: &'static str,
}

const FOUR_TANK: &str = r#"
horizon = 2500
seed = 1
metric = "identity"

[plant]
type = "four_tank"

[controller]
type = "dpi"
gain = "pi_inverse"
ti = 15.0
lambda = 0.95
u0 = [32.64, 32.64]

[constraint]
type = "intersection"

[[constraint.sets]]
type = "box"
lower = [0.0, 0.0]
upper = [45.0, 45.0]

[[constraint.sets]]
type = "halfspace"
a = [1.0, 1.0]
b = 85.0

# Pump flows where the level map stays strongly monotone.
[operating_box]
lower = [15.0, 15.0]
upper = [45.0, 45.0]

[[schedule]]
step = 0
w = [10.0, 10.0]

[[schedule]]
step = 100
w = [12.0, 9.0]

[[schedule]]
step = 700
w = [9.0, 11.5]

# Needs u1 > 45.
[[schedule]]
step = 1300
w = [16.0, 12.0]

# Needs u1 + u2 > 85.
[[schedule]]
step = 1900
w = [18.0, 18.0]

[sweep]
ti = [2.0, 5.0, 10.0, 15.0, 30.0]
lambda = [0.1, 0.5, 0.95]
certificate = "estimate"
horizon = 7000
"#;

const LTI_DEMO: &str = r#"
horizon = 300
seed = 1
metric = [[1.0]]

[plant]
type = "lti"
a = [[0.5]]
b = [[1.0]]
b_w = [[0.0]]
c = [[1.0]]
d = [[0.0]]
d_w = [[-1.0]]
ts = 1.0

[controller]
type = "dpi"
gain = [[1.0]]
ti = 4.0
lambda = 0.5
eta0 = [0.0]

[constraint]
type = "box"
lower = [-1.0]
upper = [1.0]

[operating_box]
lower = [-1.0]
upper = [1.0]

[[schedule]]
step = 0
w = [0.0]

# Needs u = 0.5.
[[schedule]]
step = 50
w = [1.0]

# Needs u = 1.5, beyond the bound.
[[schedule]]
step = 150
w = [3.0]

[sweep]
ti = [0.5, 1.0, 2.0, 4.0, 8.0]
lambda = [0.1, 0.5, 0.9]
certificate = { mu = 2.0, lipschitz = 2.0 }
horizon = 3000
"#;

pub const PRESETS: &[Preset] = &[
    Preset {
        name: "four-tank",
        description: "quadruple-tank process, four set-point changes, the last two infeasible",
        toml: FOUR_TANK,
    },
    Preset {
        name: "lti-demo",
        description: "scalar stable LTI plant with a box input constraint",
        toml: LTI_DEMO,
    },
];

pub fn find(name: &str) -> Option<&'static Preset> {
    PRESETS.iter().find(|p| p.name == name)
}

pub fn load(name: &str) -> Result<RunConfig, CliError> {
    let preset = find(name).ok_or_else(|| {
        let known: Vec<_> = PRESETS.iter().map(|p| p.name).collect();
        CliError::Config(format!("preset: unknown name `{name}` (known: {})", known.join(", ")))
    })?;
    RunConfig::from_toml(preset.toml)
}
