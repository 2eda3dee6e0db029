//! Scenario files: strict TOML with a top-level `kind`.

use std::path::PathBuf;

use dqvi_core::{ControlSpec, PerturbationSpec, QviConfig, RodConfig, Scheme};
use serde::Deserialize;
use toml::{Table, Value};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Kind {
    Solve,
    Perturb,
    Control,
    Verify,
}

#[derive(Clone, Debug, PartialEq, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GridSection {
    pub steps: usize,
    pub horizon: f64,
    pub scheme: Scheme,
}

impl Default for GridSection {
    fn default() -> Self {
        GridSection {
            steps: 200,
            horizon: 1.0,
            scheme: Scheme::Heun,
        }
    }
}

fn default_times() -> Vec<f64> {
    vec![0.25, 0.5, 1.0]
}

fn default_max_n() -> usize {
    64
}

/// `[perturb]`: either a named family with an amplitude or an explicit `[perturb.spec]`.
#[derive(Clone, Debug, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PerturbSection {
    pub family: Option<String>,
    pub amplitude: Option<f64>,
    pub spec: Option<PerturbationSpec>,
    pub gap_bounds: Option<[f64; 2]>,
    #[serde(default = "default_max_n")]
    pub max_n: usize,
    #[serde(default = "default_times")]
    pub times: Vec<f64>,
}

impl PerturbSection {
    pub fn resolve(&self) -> Result<PerturbationSpec, String> {
        let mut spec = match (&self.family, &self.spec) {
            (Some(name), None) => PerturbationSpec::family(name, self.amplitude.unwrap_or(1.0)).map_err(|e| e.to_string())?,
            (None, Some(spec)) => {
                if self.amplitude.is_some() {
                    return Err("perturb.amplitude only applies to a named family".into());
                }
                spec.clone()
            }
            _ => return Err("[perturb] needs exactly one of `family` or `[perturb.spec]`".into()),
        };
        if self.gap_bounds.is_some() {
            spec.gap_bounds = self.gap_bounds;
        }
        Ok(spec)
    }
}

/// The problem a `solve` or `perturb` scenario integrates.
#[derive(Clone, Debug, PartialEq)]
pub enum Model {
    Rod(Box<RodConfig>),
    Instance(String),
}

#[derive(Clone, Debug, PartialEq)]
pub struct Scenario {
    pub kind: Kind,
    pub output_dir: Option<PathBuf>,
    pub seed: Option<u64>,
    pub model: Option<Model>,
    pub grid: GridSection,
    pub solver: QviConfig,
    pub perturb: Option<PerturbSection>,
    pub control: Option<ControlSpec>,
}

#[derive(Debug)]
pub enum ScenarioError {
    /// Unparseable TOML; the message carries line and column.
    Parse(String),
    UnknownKeys(Vec<String>),
    Invalid(String),
}

impl std::fmt::Display for ScenarioError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            ScenarioError::Parse(m) => write!(f, "cannot parse scenario: {m}"),
            ScenarioError::UnknownKeys(keys) => write!(f, "unknown keys: {}", keys.join(", ")),
            ScenarioError::Invalid(m) => write!(f, "invalid scenario: {m}"),
        }
    }
}

const TOP: &[&str] = &["kind", "output_dir", "seed", "instance", "rod", "grid", "solver", "perturb", "control"];
const GRID: &[&str] = &["steps", "horizon", "scheme"];
const SOLVER: &[&str] = &["inner_tol", "outer_tol", "max_inner", "max_outer", "step", "residual_samples", "seed"];
const PERTURB: &[&str] = &["family", "amplitude", "spec", "gap_bounds", "max_n", "times"];
const PERTURB_SPEC: &[&str] = &[
    "dynamics",
    "dynamics_offset",
    "operator",
    "operator_offset",
    "yield_shift",
    "load",
    "initial",
    "gap",
    "gap_bounds",
];
const CONTROL: &[&str] = &["amp_min", "amp_max", "gap_min", "gap_max", "target", "time", "rho", "grid", "refine"];
const ROD: &[&str] = &[
    "length",
    "elements",
    "modulus",
    "visco",
    "fnl_slope",
    "fnl_cap",
    "stiffness_k",
    "gap",
    "h0",
    "c1",
    "c2",
    "theta",
    "f0_amplitude",
    "u0",
    "sigma0",
];

fn unknown_in(table: &Table, allowed: &[&str], prefix: &str, out: &mut Vec<String>) {
    for key in table.keys() {
        if !allowed.contains(&key.as_str()) {
            out.push(format!("{prefix}{key}"));
        }
    }
}

/// Every key not understood by the runner, with its dotted path.
pub fn unknown_keys(root: &Table) -> Vec<String> {
    let mut out = Vec::new();
    unknown_in(root, TOP, "", &mut out);
    let sections: [(&str, &[&str]); 5] = [
        ("grid", GRID),
        ("solver", SOLVER),
        ("perturb", PERTURB),
        ("control", CONTROL),
        ("rod", ROD),
    ];
    for (name, allowed) in sections {
        if let Some(Value::Table(t)) = root.get(name) {
            unknown_in(t, allowed, &format!("{name}."), &mut out);
        }
    }
    if let Some(Value::Table(t)) = root.get("perturb").and_then(|p| p.get("spec")) {
        unknown_in(t, PERTURB_SPEC, "perturb.spec.", &mut out);
    }
    out
}

fn section<'de, T: Deserialize<'de>>(root: &Table, name: &str) -> Result<Option<T>, ScenarioError> {
    match root.get(name) {
        None => Ok(None),
        Some(v @ Value::Table(_)) => v
            .clone()
            .try_into()
            .map(Some)
            .map_err(|e: toml::de::Error| ScenarioError::Invalid(format!("[{name}]: {}", e.message()))),
        Some(_) => Err(ScenarioError::Invalid(format!("`{name}` must be a table"))),
    }
}

/// `[rod]` keys override the smoke rod.
fn rod_section(root: &Table) -> Result<Option<RodConfig>, ScenarioError> {
    let Some(value) = root.get("rod") else {
        return Ok(None);
    };
    let Value::Table(user) = value else {
        return Err(ScenarioError::Invalid("`rod` must be a table".into()));
    };
    let mut merged = Table::try_from(RodConfig::smoke()).map_err(|e| ScenarioError::Invalid(e.to_string()))?;
    for (k, v) in user {
        merged.insert(k.clone(), v.clone());
    }
    Value::Table(merged)
        .try_into()
        .map(Some)
        .map_err(|e: toml::de::Error| ScenarioError::Invalid(format!("[rod]: {}", e.message())))
}

pub fn parse(text: &str) -> Result<Scenario, ScenarioError> {
    let root: Table = text.parse().map_err(|e: toml::de::Error| ScenarioError::Parse(e.to_string()))?;
    let unknown = unknown_keys(&root);
    if !unknown.is_empty() {
        return Err(ScenarioError::UnknownKeys(unknown));
    }
    let kind: Kind = match root.get("kind") {
        Some(v) => v
            .clone()
            .try_into()
            .map_err(|_| ScenarioError::Invalid("kind must be one of solve, perturb, control, verify".into()))?,
        None => return Err(ScenarioError::Invalid("missing top-level `kind`".into())),
    };
    let output_dir = match root.get("output_dir") {
        Some(Value::String(s)) => Some(PathBuf::from(s)),
        Some(_) => return Err(ScenarioError::Invalid("output_dir must be a string".into())),
        None => None,
    };
    let seed = match root.get("seed") {
        Some(Value::Integer(s)) if *s >= 0 => Some(*s as u64),
        Some(_) => return Err(ScenarioError::Invalid("seed must be a nonnegative integer".into())),
        None => None,
    };
    let rod = rod_section(&root)?;
    let instance = match root.get("instance") {
        Some(Value::String(s)) => Some(s.clone()),
        Some(_) => return Err(ScenarioError::Invalid("instance must be a string".into())),
        None => None,
    };
    let model = match (rod, instance) {
        (Some(_), Some(_)) => return Err(ScenarioError::Invalid("give either [rod] or `instance`, not both".into())),
        (Some(r), None) => Some(Model::Rod(Box::new(r))),
        (None, Some(tag)) => {
            if !dqvi_core::oracle::SYNTHETIC_TAGS.contains(&tag.as_str()) {
                return Err(ScenarioError::Invalid(format!(
                    "unknown instance '{tag}' (known: {})",
                    dqvi_core::oracle::SYNTHETIC_TAGS.join(", ")
                )));
            }
            Some(Model::Instance(tag))
        }
        (None, None) => None,
    };
    let scenario = Scenario {
        kind,
        output_dir,
        seed,
        model,
        grid: section(&root, "grid")?.unwrap_or_default(),
        solver: section(&root, "solver")?.unwrap_or_default(),
        perturb: section(&root, "perturb")?,
        control: section(&root, "control")?,
    };
    scenario.check()?;
    Ok(scenario)
}

impl Scenario {
    fn check(&self) -> Result<(), ScenarioError> {
        let invalid = |m: &str| Err(ScenarioError::Invalid(m.into()));
        match self.kind {
            Kind::Solve if self.model.is_none() => return invalid("solve needs [rod] or `instance`"),
            Kind::Perturb if self.model.is_none() => return invalid("perturb needs [rod] or `instance`"),
            Kind::Perturb if self.perturb.is_none() => return invalid("perturb needs a [perturb] table"),
            Kind::Control if self.control.is_none() => return invalid("control needs a [control] table"),
            Kind::Control if matches!(self.model, Some(Model::Instance(_))) => {
                return invalid("control acts on a rod; use [rod] instead of `instance`")
            }
            _ => {}
        }
        if self.grid.steps == 0 || !(self.grid.horizon > 0.0) {
            return invalid("grid needs steps ≥ 1 and a positive horizon");
        }
        if let Some(p) = &self.perturb {
            p.resolve().map_err(ScenarioError::Invalid)?;
            if p.max_n == 0 {
                return invalid("perturb.max_n must be at least 1");
            }
        }
        self.solver.validate().map_err(|e| ScenarioError::Invalid(e.to_string()))?;
        Ok(())
    }

    /// Rod of a control scenario; the smoke rod when `[rod]` is absent.
    pub fn control_rod(&self) -> RodConfig {
        match &self.model {
            Some(Model::Rod(r)) => (**r).clone(),
            _ => RodConfig::smoke(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn key_lists_cover_every_serialized_field() {
        let rod = Table::try_from(RodConfig::smoke()).unwrap();
        assert!(rod.keys().all(|k| ROD.contains(&k.as_str())), "{:?}", rod.keys().collect::<Vec<_>>());
        assert_eq!(rod.len(), ROD.len());
        let solver = Table::try_from(QviConfig {
            step: Some(0.5),
            ..QviConfig::default()
        })
        .unwrap();
        assert_eq!(solver.len(), SOLVER.len());
        assert!(solver.keys().all(|k| SOLVER.contains(&k.as_str())));
        let spec = Table::try_from(PerturbationSpec {
            gap_bounds: Some([0.1, 0.2]),
            ..PerturbationSpec::default()
        })
        .unwrap();
        assert_eq!(spec.len(), PERTURB_SPEC.len());
    }

    #[test]
    fn rod_keys_override_the_smoke_rod() {
        let s = parse("kind = \"solve\"\n[rod]\nelements = 7\ngap = 0.3\n").unwrap();
        let Some(Model::Rod(r)) = s.model else { panic!() };
        assert_eq!(r.elements, 7);
        assert_eq!(r.gap, 0.3);
        assert_eq!(r.h0, RodConfig::smoke().h0);
    }

    #[test]
    fn unknown_keys_are_all_listed() {
        let err = parse("kind = \"solve\"\ncolour = 1\n[rod]\nlenght = 2\n[grid]\nstep = 3\n").unwrap_err();
        match err {
            ScenarioError::UnknownKeys(k) => assert_eq!(k, ["colour", "grid.step", "rod.lenght"]),
            other => panic!("{other}"),
        }
    }

    #[test]
    fn parse_errors_carry_a_position() {
        let err = parse("kind = \"solve\"\n[rod\n").unwrap_err();
        let msg = err.to_string();
        assert!(matches!(err, ScenarioError::Parse(_)));
        assert!(msg.contains("line 2"), "{msg}");
    }

    #[test]
    fn perturb_needs_one_source() {
        let both = "kind = \"perturb\"\ninstance = \"exp-decay\"\n[perturb]\nfamily = \"load\"\n[perturb.spec]\nload = 1.0\n";
        assert!(matches!(parse(both), Err(ScenarioError::Invalid(_))));
        let ok = "kind = \"perturb\"\ninstance = \"exp-decay\"\n[perturb]\nfamily = \"load\"\namplitude = 0.5\n";
        let s = parse(ok).unwrap();
        assert_eq!(s.perturb.unwrap().resolve().unwrap().load, 0.5);
    }

    #[test]
    fn unknown_instance_is_rejected() {
        assert!(matches!(
            parse("kind = \"solve\"\ninstance = \"nope\"\n"),
            Err(ScenarioError::Invalid(_))
        ));
    }
}
