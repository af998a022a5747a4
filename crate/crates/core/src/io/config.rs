//! JSON run configuration.
//!
//! ```json
//! {
//!   "n": 2, "a0": [0.1, 0.1], "a": [[1, 0.5], [1, 1]], "pi": [1, 0.5],
//!   "grid": {"dim": 1, "N": 64, "L": 1.0},
//!   "T": 0.5, "dt": 1e-4, "scheme": "entropy_variable", "epsilon": 1e-4,
//!   "noise": {"family": "bounded_ratio", "eta": 0.5},
//!   "initial": {"c": [1, 1], "delta": [0.3, -0.3]}
//! }
//! ```
//!
//! Unknown keys are rejected. Omitted optional keys take their defaults and
//! the fully resolved document is what gets hashed and echoed.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::error::{Result, SktError};
use crate::grid::Grid;
use crate::model::{DiffusionMode, SktParameters};
use crate::noise::NoiseFamily;
use crate::regularization::NewtonSettings;
use crate::simulator::{InitialCondition, Scheme, SimConfig, DEFAULT_EPSILON};
use crate::spectral::default_sobolev_index;

use super::{read_snapshot, sha256_hex};

/// Snapshots kept by default: about this many over the horizon.
const DEFAULT_SNAPSHOT_COUNT: usize = 100;

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawConfig {
    n: usize,
    a0: Vec<f64>,
    a: Vec<Vec<f64>>,
    #[serde(default)]
    pi: Option<Vec<f64>>,
    #[serde(default)]
    mode: Option<DiffusionMode>,
    grid: RawGrid,
    #[serde(rename = "T")]
    t_final: f64,
    dt: f64,
    #[serde(default)]
    scheme: Option<Scheme>,
    #[serde(default)]
    epsilon: Option<f64>,
    #[serde(default)]
    m: Option<u32>,
    #[serde(default)]
    newton: Option<RawNewton>,
    noise: RawNoise,
    #[serde(default)]
    save_every: Option<usize>,
    #[serde(default)]
    initial: Option<RawInitial>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawGrid {
    dim: usize,
    #[serde(rename = "N")]
    nx: usize,
    #[serde(rename = "Ny", default)]
    ny: Option<usize>,
    #[serde(rename = "L", default)]
    lx: Option<f64>,
    #[serde(rename = "Ly", default)]
    ly: Option<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawNewton {
    tol: Option<f64>,
    max_iter: Option<usize>,
    damping: Option<usize>,
    dense_limit: Option<usize>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawNoise {
    family: String,
    eta: Option<f64>,
    alpha: Option<f64>,
    beta: Option<f64>,
    rho: Option<f64>,
    #[serde(rename = "K")]
    k_modes: Option<usize>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(untagged, deny_unknown_fields)]
enum RawInitial {
    Cosine { c: Vec<f64>, delta: Vec<f64>, #[serde(default)] wavenumber: Option<u32> },
    File { file: PathBuf },
}

/// A validated configuration with its resolved echo and hash.
#[derive(Debug, Clone)]
pub struct ParsedConfig {
    pub config: SimConfig,
    /// Every setting the run uses, defaults included.
    pub resolved: Value,
    /// SHA-256 of the canonical (sorted-key, compact) resolved document.
    pub hash: String,
}

fn config_err(path: &str, message: impl Into<String>) -> SktError {
    SktError::Config { path: path.into(), message: message.into() }
}

fn noise_family(raw: &RawNoise) -> Result<NoiseFamily> {
    let allowed: &[&str] = match raw.family.as_str() {
        "zero" => &[],
        "bounded_ratio" => &["eta"],
        "power" => &["alpha"],
        "power_damped" => &["alpha", "beta"],
        other => return Err(config_err("noise.family", format!("unknown family `{other}`"))),
    };
    for (key, present) in [("eta", raw.eta.is_some()), ("alpha", raw.alpha.is_some()), ("beta", raw.beta.is_some())] {
        if present && !allowed.contains(&key) {
            return Err(config_err(&format!("noise.{key}"), format!("not a parameter of family `{}`", raw.family)));
        }
    }
    let need = |v: Option<f64>, key: &str| v.ok_or_else(|| config_err(&format!("noise.{key}"), "missing"));
    let fam = match raw.family.as_str() {
        "zero" => NoiseFamily::Zero,
        "bounded_ratio" => NoiseFamily::BoundedRatio { eta: need(raw.eta, "eta")? },
        "power" => NoiseFamily::Power { alpha: need(raw.alpha, "alpha")? },
        _ => NoiseFamily::PowerDamped { alpha: need(raw.alpha, "alpha")?, beta: need(raw.beta, "beta")? },
    };
    fam.validate()?;
    Ok(fam)
}

/// Parses and validates a configuration document. Relative initial-condition
/// files are resolved against `base_dir`.
pub fn parse_config(text: &str, base_dir: Option<&Path>) -> Result<ParsedConfig> {
    let de = &mut serde_json::Deserializer::from_str(text);
    let raw: RawConfig = serde_path_to_error::deserialize(de).map_err(|e| {
        let path = e.path().to_string();
        config_err(&path, e.into_inner().to_string())
    })?;

    if raw.a0.len() != raw.n || raw.a.len() != raw.n {
        return Err(config_err("n", format!("n = {} does not match the coefficient shapes", raw.n)));
    }
    let mode = match raw.mode {
        Some(m) => m,
        None => SktParameters::infer_mode(&raw.a0, &raw.a).ok_or_else(|| {
            config_err("mode", "coefficients fit neither the self-diffusion nor the no-self-diffusion hypotheses")
        })?,
    };
    let params = SktParameters::new(raw.a0.clone(), raw.a.clone(), raw.pi.clone(), mode)?;

    let g = &raw.grid;
    let lx = g.lx.unwrap_or(1.0);
    let ly = g.ly.unwrap_or(1.0);
    let grid = match g.dim {
        1 => {
            if g.ny.is_some() {
                return Err(config_err("grid.Ny", "only valid for dim = 2"));
            }
            Grid::new_1d(g.nx, lx)?
        }
        2 => Grid::new_2d(g.nx, g.ny.unwrap_or(g.nx), lx, ly)?,
        d => return Err(config_err("grid.dim", format!("dimension {d} not supported (1 or 2)"))),
    };

    let scheme = raw.scheme.unwrap_or(Scheme::EntropyVariable);
    let epsilon = raw.epsilon.unwrap_or(DEFAULT_EPSILON);
    let m = raw.m.unwrap_or_else(|| default_sobolev_index(grid.dim()));
    let d = NewtonSettings::default();
    let newton = match &raw.newton {
        Some(r) => NewtonSettings {
            tol: r.tol.unwrap_or(d.tol),
            max_iter: r.max_iter.unwrap_or(d.max_iter),
            damping: r.damping.unwrap_or(d.damping),
            dense_limit: r.dense_limit.unwrap_or(d.dense_limit),
        },
        None => d,
    };
    let family = noise_family(&raw.noise)?;

    let (initial, initial_echo) = match &raw.initial {
        None => {
            let n = raw.n;
            let ic = InitialCondition::Cosine { c: vec![1.0; n], delta: vec![0.5; n], wavenumber: 1 };
            (ic, serde_json::json!({"c": vec![1.0; n], "delta": vec![0.5; n], "wavenumber": 1}))
        }
        Some(RawInitial::Cosine { c, delta, wavenumber }) => {
            let k = wavenumber.unwrap_or(1);
            let ic = InitialCondition::Cosine { c: c.clone(), delta: delta.clone(), wavenumber: k };
            (ic, serde_json::json!({"c": c, "delta": delta, "wavenumber": k}))
        }
        Some(RawInitial::File { file }) => {
            let path = match base_dir {
                Some(b) if file.is_relative() => b.join(file),
                _ => file.clone(),
            };
            let snap = read_snapshot(&path).map_err(|e| config_err("initial.file", e.to_string()))?;
            if snap.grid != grid {
                return Err(config_err("initial.file", "snapshot grid differs from the configured grid"));
            }
            let payload = std::fs::read(snap.payload_path())?;
            let echo = serde_json::json!({"file": file, "sha256": sha256_hex(&payload)});
            (InitialCondition::Field(snap.field), echo)
        }
    };

    let config = SimConfig::new(params, grid.clone(), scheme, raw.t_final, raw.dt)?
        .with_sobolev_index(m)?
        .with_newton(newton)?
        .with_epsilon(epsilon)?
        .with_noise(family, raw.noise.rho, raw.noise.k_modes)?
        .with_initial(initial)?;
    let save_every = raw.save_every.unwrap_or_else(|| (config.n_steps() / DEFAULT_SNAPSHOT_COUNT).max(1));
    let config = config.with_save_every(save_every)?;

    let p = config.params();
    let noise = config.noise();
    let mut noise_echo = serde_json::to_value(noise.family()).expect("serializable");
    noise_echo["rho"] = noise.rho().into();
    noise_echo["K"] = noise.k_modes().into();
    noise_echo["tail_fraction"] = noise.tail_fraction().into();
    let resolved = serde_json::json!({
        "n": p.n(),
        "a0": p.a0(),
        "a": p.a_rows(),
        "pi": p.pi(),
        "mode": p.mode(),
        "grid": {"dim": grid.dim(), "N": grid.nx(), "Ny": grid.ny(), "L": grid.lx(), "Ly": grid.ly()},
        "T": config.t_final(),
        "dt": config.dt(),
        "n_steps": config.n_steps(),
        "scheme": scheme,
        "epsilon": epsilon,
        "m": m,
        "newton": newton,
        "noise": noise_echo,
        "save_every": save_every,
        "initial": initial_echo,
    });
    let hash = canonical_hash(&resolved);
    Ok(ParsedConfig { config, resolved, hash })
}

/// SHA-256 of the compact JSON rendering with keys sorted.
pub fn canonical_hash(value: &Value) -> String {
    sha256_hex(canonical_json(value).as_bytes())
}

/// Compact JSON with object keys in sorted order.
pub fn canonical_json(value: &Value) -> String {
    fn sorted(v: &Value) -> Value {
        match v {
            Value::Object(map) => {
                let mut keys: Vec<&String> = map.keys().collect();
                keys.sort();
                let mut out = serde_json::Map::new();
                for k in keys {
                    out.insert(k.clone(), sorted(&map[k]));
                }
                Value::Object(out)
            }
            Value::Array(a) => Value::Array(a.iter().map(sorted).collect()),
            other => other.clone(),
        }
    }
    serde_json::to_string(&sorted(value)).expect("serializable")
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = r#"{"n":1,"a0":[1],"a":[[0]],"grid":{"dim":1,"N":64},"T":0.1,"dt":1e-4,"noise":{"family":"zero"}}"#;

    #[test]
    fn minimal_config() {
        let p = parse_config(MINIMAL, None).unwrap();
        assert_eq!(p.config.grid().len(), 64);
        assert_eq!(p.config.n_steps(), 1000);
        assert_eq!(p.config.epsilon(), 1e-4);
        assert_eq!(p.resolved["m"], 2);
        assert_eq!(p.resolved["mode"], "without_self_diffusion");
        assert_eq!(p.resolved["save_every"], 10);
    }

    #[test]
    fn hash_ignores_key_order() {
        let reordered = r#"{"noise":{"family":"zero"},"dt":1e-4,"T":0.1,"grid":{"N":64,"dim":1},"a":[[0]],"a0":[1],"n":1}"#;
        assert_eq!(parse_config(MINIMAL, None).unwrap().hash, parse_config(reordered, None).unwrap().hash);
        let other = MINIMAL.replace("0.1", "0.2");
        assert_ne!(parse_config(MINIMAL, None).unwrap().hash, parse_config(&other, None).unwrap().hash);
    }

    #[test]
    fn reversible_measure_inferred_or_checked() {
        let base = r#"{"n":2,"a0":[0.1,0.1],"a":[[0,2],[1,0]],"grid":{"dim":1,"N":8},"T":0.1,"dt":0.01,"noise":{"family":"zero"}}"#;
        let p = parse_config(base, None).unwrap();
        assert_eq!(p.config.params().pi(), &[1.0, 2.0]);
        let bad = base.replace(r#""n":2,"#, r#""n":2,"pi":[1,1],"#);
        assert!(matches!(parse_config(&bad, None), Err(SktError::DetailedBalanceViolated { .. })));
    }

    #[test]
    fn errors_point_at_keys() {
        let unknown = MINIMAL.replace(r#""N":64"#, r#""N":64,"M":3"#);
        match parse_config(&unknown, None) {
            Err(SktError::Config { path, .. }) => assert_eq!(path, "grid.M"),
            other => panic!("{other:?}"),
        }
        let wrong = MINIMAL.replace(r#""dt":1e-4"#, r#""dt":"small""#);
        match parse_config(&wrong, None) {
            Err(SktError::Config { path, .. }) => assert_eq!(path, "dt"),
            other => panic!("{other:?}"),
        }
        let fam = MINIMAL.replace(r#""family":"zero""#, r#""family":"zero","eta":0.5"#);
        assert!(matches!(parse_config(&fam, None), Err(SktError::Config { .. })));
        let fam = MINIMAL.replace(r#""family":"zero""#, r#""family":"power","alpha":0.3"#);
        assert!(matches!(parse_config(&fam, None), Err(SktError::InvalidParameters(_))));
    }
}
