//! Pipeline configuration files.
//!
//! A config is a TOML document with optional `[mesh]`, `[offline]`, `[pod]`,
//! `[rom]`, `[angles]` and `[convergence]` tables. Unknown tables and keys are
//! rejected.
//!
//! ```toml
//! [mesh]
//! h = 0.05
//!
//! [offline]
//! dt = 2.5e-4      # required
//! t_end = 2.0      # required
//! nu = 0.01
//! eps = 1e-6
//! ```

use std::path::{Path, PathBuf};

use toml::{Table, Value};

use crate::error::{Error, Result};
use crate::mesh::OffsetCylinders;
use crate::offline::{Forcing, InitialState, OfflineConfig, SolvePath, DEFAULT_EPS, DEFAULT_NU};
use crate::rom::RomConfig;

#[derive(Debug, Clone, PartialEq)]
pub struct MeshConfig {
    pub h: f64,
    pub domain: OffsetCylinders<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PodConfig {
    pub r_velocity: usize,
    pub r_pressure: usize,
}

/// Online run: model parameters plus the time window. Missing window ends
/// default to the snapshot window.
#[derive(Debug, Clone, PartialEq)]
pub struct RomRunConfig {
    pub model: RomConfig,
    pub t_start: Option<f64>,
    pub t_end: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct AnglesConfig {
    /// Sweep `R = M = 1..=max_modes`.
    pub max_modes: usize,
}

/// What the time-step ladder is compared against.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Reference {
    /// The offline snapshots on the window.
    Snapshots,
    /// A reduced run at the given small step.
    Rom(f64),
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConvergenceConfig {
    pub dts: Vec<f64>,
    pub reference: Reference,
    pub t_start: Option<f64>,
    pub t_end: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct PipelineConfig {
    pub mesh: Option<MeshConfig>,
    pub offline: Option<OfflineConfig>,
    pub pod: Option<PodConfig>,
    pub rom: Option<RomRunConfig>,
    pub angles: Option<AnglesConfig>,
    pub convergence: Option<ConvergenceConfig>,
}

impl PipelineConfig {
    pub fn require_mesh(&self) -> Result<&MeshConfig> {
        self.mesh.as_ref().ok_or_else(|| Error::MissingKey("mesh.h".into()))
    }

    pub fn require_offline(&self) -> Result<&OfflineConfig> {
        self.offline
            .as_ref()
            .ok_or_else(|| Error::MissingKey("offline.dt".into()))
    }

    pub fn require_pod(&self) -> Result<&PodConfig> {
        self.pod
            .as_ref()
            .ok_or_else(|| Error::MissingKey("pod.r_velocity".into()))
    }

    pub fn require_convergence(&self) -> Result<&ConvergenceConfig> {
        self.convergence
            .as_ref()
            .ok_or_else(|| Error::MissingKey("convergence.dts".into()))
    }

    /// `[rom]` settings, or defaults taken from `[offline]`.
    pub fn rom_run(&self) -> RomRunConfig {
        self.rom.clone().unwrap_or_else(|| RomRunConfig {
            model: rom_defaults(self.offline.as_ref()),
            t_start: None,
            t_end: None,
        })
    }
}

const SECTIONS: [(&str, &[&str]); 6] = [
    ("mesh", &["h", "r1", "r2", "c1", "c2"]),
    (
        "offline",
        &[
            "dt",
            "t_end",
            "t_start",
            "nu",
            "eps",
            "snapshot_every",
            "snapshot_from",
            "initial_state",
            "forcing",
            "solve_path",
            "checkpoint",
            "checkpoint_every",
        ],
    ),
    ("pod", &["r_velocity", "r_pressure"]),
    ("rom", &["dt", "t_start", "t_end", "solve_path", "include_nu"]),
    ("angles", &["max_modes"]),
    ("convergence", &["dts", "reference_dt", "t_start", "t_end"]),
];

struct Section<'a> {
    name: &'static str,
    table: &'a Table,
}

impl Section<'_> {
    fn key(&self, k: &str) -> String {
        format!("{}.{k}", self.name)
    }

    fn type_error(&self, k: &str, want: &str) -> Error {
        Error::Config(format!("{} must be {want}", self.key(k)))
    }

    fn f64(&self, k: &str) -> Result<Option<f64>> {
        match self.table.get(k) {
            None => Ok(None),
            Some(Value::Float(v)) => Ok(Some(*v)),
            Some(Value::Integer(v)) => Ok(Some(*v as f64)),
            Some(_) => Err(self.type_error(k, "a number")),
        }
    }

    fn usize(&self, k: &str) -> Result<Option<usize>> {
        match self.table.get(k) {
            None => Ok(None),
            Some(Value::Integer(v)) if *v >= 0 => Ok(Some(*v as usize)),
            Some(_) => Err(self.type_error(k, "a non-negative integer")),
        }
    }

    fn str(&self, k: &str) -> Result<Option<&str>> {
        match self.table.get(k) {
            None => Ok(None),
            Some(Value::String(s)) => Ok(Some(s)),
            Some(_) => Err(self.type_error(k, "a string")),
        }
    }

    fn bool(&self, k: &str) -> Result<Option<bool>> {
        match self.table.get(k) {
            None => Ok(None),
            Some(Value::Boolean(b)) => Ok(Some(*b)),
            Some(_) => Err(self.type_error(k, "true or false")),
        }
    }

    fn f64_list(&self, k: &str) -> Result<Option<Vec<f64>>> {
        match self.table.get(k) {
            None => Ok(None),
            Some(Value::Array(a)) => a
                .iter()
                .map(|v| match v {
                    Value::Float(x) => Ok(*x),
                    Value::Integer(x) => Ok(*x as f64),
                    _ => Err(self.type_error(k, "a list of numbers")),
                })
                .collect::<Result<Vec<_>>>()
                .map(Some),
            Some(_) => Err(self.type_error(k, "a list of numbers")),
        }
    }

    fn required<V>(&self, k: &str, v: Option<V>) -> Result<V> {
        v.ok_or_else(|| Error::MissingKey(self.key(k)))
    }

    fn solve_path(&self, k: &str) -> Result<Option<SolvePath>> {
        self.str(k)?
            .map(|s| SolvePath::parse(s).ok_or_else(|| self.type_error(k, "\"monolithic\" or \"eliminated\"")))
            .transpose()
    }
}

fn positive(key: &str, v: f64) -> Result<f64> {
    if v.is_finite() && v > 0.0 {
        Ok(v)
    } else {
        Err(Error::Config(format!("{key} must be positive, got {v}")))
    }
}

fn rom_defaults(offline: Option<&OfflineConfig>) -> RomConfig {
    match offline {
        Some(o) => RomConfig {
            nu: o.nu,
            eps: o.eps,
            forcing: o.forcing,
            ..RomConfig::new(o.dt)
        },
        None => RomConfig {
            nu: DEFAULT_NU,
            eps: DEFAULT_EPS,
            ..RomConfig::new(f64::NAN)
        },
    }
}

/// Parses config text; `origin` names the source in error messages and
/// anchors relative paths.
pub fn parse_config_str(text: &str, origin: &Path) -> Result<PipelineConfig> {
    let doc: Table = text
        .parse()
        .map_err(|e: toml::de::Error| Error::Config(format!("{}: {}", origin.display(), e.message())))?;
    let base = origin.parent().unwrap_or(Path::new(""));
    let mut sections: Vec<Option<Section>> = SECTIONS.iter().map(|_| None).collect();
    for (name, value) in &doc {
        let Some(idx) = SECTIONS.iter().position(|(s, _)| s == name) else {
            return match value {
                Value::Table(_) => Err(Error::Config(format!("unknown section [{name}]"))),
                _ => Err(Error::UnknownKey {
                    section: String::new(),
                    key: name.clone(),
                }),
            };
        };
        let Value::Table(table) = value else {
            return Err(Error::Config(format!("[{name}] must be a table")));
        };
        for key in table.keys() {
            if !SECTIONS[idx].1.contains(&key.as_str()) {
                return Err(Error::UnknownKey {
                    section: name.clone(),
                    key: key.clone(),
                });
            }
        }
        sections[idx] = Some(Section {
            name: SECTIONS[idx].0,
            table,
        });
    }
    let [mesh, offline, pod, rom, angles, convergence]: [Option<Section>; 6] =
        sections.try_into().unwrap_or_else(|_| unreachable!());

    let mesh = mesh
        .map(|s| -> Result<MeshConfig> {
            let d = OffsetCylinders::<f64>::reference();
            let h = positive("mesh.h", s.required("h", s.f64("h")?)?)?;
            Ok(MeshConfig {
                h,
                domain: OffsetCylinders {
                    r1: positive("mesh.r1", s.f64("r1")?.unwrap_or(d.r1))?,
                    r2: positive("mesh.r2", s.f64("r2")?.unwrap_or(d.r2))?,
                    c1: s.f64("c1")?.unwrap_or(d.c1),
                    c2: s.f64("c2")?.unwrap_or(d.c2),
                },
            })
        })
        .transpose()?;

    let offline = offline
        .map(|s| -> Result<OfflineConfig> {
            let mut c = OfflineConfig::new(s.required("dt", s.f64("dt")?)?, s.required("t_end", s.f64("t_end")?)?);
            if let Some(v) = s.f64("t_start")? {
                c.t_start = v;
            }
            if let Some(v) = s.f64("nu")? {
                c.nu = v;
            }
            if let Some(v) = s.f64("eps")? {
                c.eps = v;
            }
            if let Some(v) = s.usize("snapshot_every")? {
                c.snapshot_every = v;
            }
            c.snapshot_from = s.f64("snapshot_from")?;
            if let Some(v) = s.str("initial_state")? {
                c.initial_state = if v == "rest" {
                    InitialState::Rest
                } else {
                    InitialState::FromFile(base.join(v))
                };
            }
            if let Some(v) = s.str("forcing")? {
                c.forcing = Forcing::parse(v).ok_or_else(|| s.type_error("forcing", "\"reference\" or \"zero\""))?;
            }
            if let Some(v) = s.solve_path("solve_path")? {
                c.solve_path = v;
            }
            c.checkpoint = s.str("checkpoint")?.map(|p| base.join(p));
            if let Some(v) = s.usize("checkpoint_every")? {
                c.checkpoint_every = v;
            }
            c.validate()?;
            Ok(c)
        })
        .transpose()?;

    let pod = pod
        .map(|s| -> Result<PodConfig> {
            let c = PodConfig {
                r_velocity: s.required("r_velocity", s.usize("r_velocity")?)?,
                r_pressure: s.required("r_pressure", s.usize("r_pressure")?)?,
            };
            if c.r_velocity == 0 || c.r_pressure == 0 {
                return Err(Error::Config("pod mode counts must be at least 1".into()));
            }
            Ok(c)
        })
        .transpose()?;

    let rom = rom
        .map(|s| -> Result<RomRunConfig> {
            let mut model = rom_defaults(offline.as_ref());
            if let Some(v) = s.f64("dt")? {
                model.dt = v;
            }
            if let Some(v) = s.solve_path("solve_path")? {
                model.solve_path = v;
            }
            if let Some(v) = s.bool("include_nu")? {
                model.include_nu = v;
            }
            if model.dt.is_nan() {
                return Err(Error::MissingKey("rom.dt".into()));
            }
            model.validate()?;
            let run = RomRunConfig {
                model,
                t_start: s.f64("t_start")?,
                t_end: s.f64("t_end")?,
            };
            if let (Some(a), Some(b)) = (run.t_start, run.t_end) {
                if b <= a {
                    return Err(Error::Config("rom.t_end must exceed rom.t_start".into()));
                }
            }
            Ok(run)
        })
        .transpose()?;

    let angles = angles
        .map(|s| -> Result<AnglesConfig> {
            let max_modes = s.required("max_modes", s.usize("max_modes")?)?;
            if max_modes == 0 {
                return Err(Error::Config("angles.max_modes must be at least 1".into()));
            }
            Ok(AnglesConfig { max_modes })
        })
        .transpose()?;

    let convergence = convergence
        .map(|s| -> Result<ConvergenceConfig> {
            let dts = s.required("dts", s.f64_list("dts")?)?;
            if dts.is_empty() {
                return Err(Error::Config("convergence.dts must not be empty".into()));
            }
            for &dt in &dts {
                positive("convergence.dts", dt)?;
            }
            let reference = match s.f64("reference_dt")? {
                Some(v) => Reference::Rom(positive("convergence.reference_dt", v)?),
                None => Reference::Snapshots,
            };
            Ok(ConvergenceConfig {
                dts,
                reference,
                t_start: s.f64("t_start")?,
                t_end: s.f64("t_end")?,
            })
        })
        .transpose()?;

    Ok(PipelineConfig {
        mesh,
        offline,
        pod,
        rom,
        angles,
        convergence,
    })
}

pub fn parse_config(path: impl AsRef<Path>) -> Result<PipelineConfig> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_config_str(&text, path)
}

/// Resolves `p` against the directory of `config`.
pub fn resolve_relative(config: &Path, p: &str) -> PathBuf {
    config.parent().unwrap_or(Path::new("")).join(p)
}
