//! The on-disk system description: a TOML document with sections for the
//! equations, boundary conditions, output, and the optional generator,
//! ansatz, and simulation blocks.

use std::collections::BTreeMap;

use anyhow::{anyhow, bail, Context, Result};
use serde::Deserialize;

use jetsym_core::expr::Rat;
use jetsym_core::linalg::{snap_rational, MAX_SNAP_DENOMINATOR};
use jetsym_core::sim::{Grid, SimConfig, DEFAULT_NEWTON_MAX_ITERATIONS, DEFAULT_NEWTON_TOL};
use jetsym_core::{
    parse, Ansatz, Expr, JetContext, JetCoordinate, SystemSpec, VerticalField,
};

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawDocument {
    system: RawSystem,
    equations: BTreeMap<String, String>,
    #[serde(default)]
    boundary: RawBoundary,
    output: RawOutput,
    generator: Option<BTreeMap<String, String>>,
    ansatz: Option<RawAnsatz>,
    sim: Option<RawSim>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawSystem {
    states: Vec<String>,
    #[serde(default = "default_input_name")]
    input: String,
}

fn default_input_name() -> String {
    "u".to_string()
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawBoundary {
    #[serde(default)]
    left: RawBoundarySide,
    #[serde(default)]
    right: RawBoundarySide,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawBoundarySide {
    #[serde(default)]
    conditions: Vec<String>,
    pivots: Option<Vec<String>>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawOutput {
    expr: String,
    at: f64,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawAnsatz {
    preset: Option<String>,
    basis: Option<BTreeMap<String, Vec<String>>>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawSim {
    n: usize,
    dt: f64,
    #[serde(rename = "T")]
    t_end: f64,
    #[serde(default = "zero_expr_text")]
    input: String,
    #[serde(default)]
    require_positive: Vec<String>,
    init: BTreeMap<String, String>,
}

fn zero_expr_text() -> String {
    "0".to_string()
}

/// Named ansatz preset or explicit basis lists, resolved lazily because the
/// CLI can override it.
#[derive(Debug, Clone)]
pub enum AnsatzChoice {
    Preset(String),
    Explicit(Vec<Vec<Expr>>),
}

/// Fully parsed and validated document.
pub struct SpecDocument {
    pub ctx: JetContext,
    pub spec: SystemSpec,
    pub left_pivots: Option<Vec<JetCoordinate>>,
    pub right_pivots: Option<Vec<JetCoordinate>>,
    pub generator: Option<VerticalField>,
    pub ansatz: Option<AnsatzChoice>,
    pub sim: Option<SimSection>,
}

pub struct SimSection {
    pub config: SimConfig,
    pub init: Vec<Expr>,
}

impl SpecDocument {
    pub fn load(text: &str) -> Result<SpecDocument> {
        let raw: RawDocument = toml::from_str(text).context("reading spec document")?;
        if raw.system.states.is_empty() {
            bail!("[system] must declare at least one state");
        }
        let ctx = JetContext::with_names(raw.system.states.clone(), raw.system.input.clone(), 3);
        let parse_in = |text: &str, place: &str| -> Result<Expr> {
            parse(text, &ctx).with_context(|| format!("parsing {place}: `{text}`"))
        };

        let mut rhs = Vec::new();
        for state in &raw.system.states {
            let key = format!("{state}_t");
            let text = raw
                .equations
                .get(&key)
                .ok_or_else(|| anyhow!("[equations] is missing `{key}`"))?;
            rhs.push(parse_in(text, &format!("equation {key}"))?);
        }
        for key in raw.equations.keys() {
            if !raw.system.states.iter().any(|s| format!("{s}_t") == *key) {
                bail!("[equations] key `{key}` does not match any declared state");
            }
        }

        let boundary = |side: &RawBoundarySide,
                            name: &str|
         -> Result<(Vec<Expr>, Option<Vec<JetCoordinate>>)> {
            let mut conditions = Vec::new();
            for (i, text) in side.conditions.iter().enumerate() {
                conditions.push(parse_in(text, &format!("boundary.{name} condition {}", i + 1))?);
            }
            let pivots = side
                .pivots
                .as_ref()
                .map(|names| {
                    names
                        .iter()
                        .map(|n| {
                            ctx.lookup(n)
                                .with_context(|| format!("boundary.{name} pivot `{n}`"))
                        })
                        .collect::<Result<Vec<_>>>()
                })
                .transpose()?;
            if let Some(p) = &pivots {
                if p.len() != conditions.len() {
                    bail!(
                        "boundary.{name}: {} pivots for {} conditions",
                        p.len(),
                        conditions.len()
                    );
                }
            }
            Ok((conditions, pivots))
        };
        let (left, left_pivots) = boundary(&raw.boundary.left, "left")?;
        let (right, right_pivots) = boundary(&raw.boundary.right, "right")?;

        if !(0.0..=1.0).contains(&raw.output.at) {
            bail!("[output] at = {} outside [0, 1]", raw.output.at);
        }
        let at = snap_rational(raw.output.at, MAX_SNAP_DENOMINATOR)
            .unwrap_or_else(|| Rat::from_float(raw.output.at).expect("finite output location"));
        let output = parse_in(&raw.output.expr, "output expr")?;
        let spec = SystemSpec::new(ctx.clone(), rhs, left, right, output, at)
            .map_err(|e| anyhow!("{e}"))?;

        let generator = raw
            .generator
            .as_ref()
            .map(|table| -> Result<VerticalField> {
                let mut v_x = Vec::new();
                for state in &raw.system.states {
                    let key = format!("v{state}");
                    let text = table
                        .get(&key)
                        .ok_or_else(|| anyhow!("[generator] is missing `{key}`"))?;
                    v_x.push(parse_in(text, &format!("generator {key}"))?);
                }
                let vu_key = format!("v{}", raw.system.input);
                let v_u = match table.get(&vu_key) {
                    Some(text) => parse_in(text, &format!("generator {vu_key}"))?,
                    None => Expr::zero(),
                };
                for key in table.keys() {
                    let known = key == &vu_key
                        || raw.system.states.iter().any(|s| format!("v{s}") == *key);
                    if !known {
                        bail!("[generator] key `{key}` does not match any state or the input");
                    }
                }
                VerticalField::new(v_x, v_u, &ctx).map_err(|e| anyhow!("{e}"))
            })
            .transpose()?;

        let ansatz = raw
            .ansatz
            .as_ref()
            .map(|a| -> Result<AnsatzChoice> {
                match (&a.preset, &a.basis) {
                    (Some(name), None) => Ok(AnsatzChoice::Preset(name.clone())),
                    (None, Some(table)) => {
                        let mut basis = Vec::new();
                        for state in &raw.system.states {
                            let fns = table
                                .get(state)
                                .ok_or_else(|| anyhow!("[ansatz.basis] is missing `{state}`"))?;
                            basis.push(
                                fns.iter()
                                    .map(|t| parse_in(t, &format!("ansatz basis for {state}")))
                                    .collect::<Result<Vec<_>>>()?,
                            );
                        }
                        Ok(AnsatzChoice::Explicit(basis))
                    }
                    _ => bail!("[ansatz] needs exactly one of `preset` or `basis`"),
                }
            })
            .transpose()?;

        let sim = raw
            .sim
            .as_ref()
            .map(|s| -> Result<SimSection> {
                let input = parse_in(&s.input, "sim input")?;
                let mut init = Vec::new();
                for state in &raw.system.states {
                    let text = s
                        .init
                        .get(state)
                        .ok_or_else(|| anyhow!("[sim.init] is missing `{state}`"))?;
                    let e = parse_in(text, &format!("sim init for {state}"))?;
                    for c in e.coords() {
                        if c != JetCoordinate::z() {
                            bail!("sim init for {state} may only depend on z, mentions {c}");
                        }
                    }
                    init.push(e);
                }
                let state_index = |name: &str| -> Result<usize> {
                    raw.system
                        .states
                        .iter()
                        .position(|s| s == name)
                        .ok_or_else(|| anyhow!("require_positive names unknown state `{name}`"))
                };
                let config = SimConfig {
                    n: s.n,
                    dt: s.dt,
                    t_end: s.t_end,
                    input,
                    left_pivots: left_pivots.clone().unwrap_or_default(),
                    right_pivots: right_pivots.clone().unwrap_or_default(),
                    require_positive: s
                        .require_positive
                        .iter()
                        .map(|n| state_index(n))
                        .collect::<Result<Vec<_>>>()?,
                    newton_tol: DEFAULT_NEWTON_TOL,
                    newton_max_iterations: DEFAULT_NEWTON_MAX_ITERATIONS,
                };
                config.validate(&spec).map_err(|e| anyhow!("{e}"))?;
                Ok(SimSection { config, init })
            })
            .transpose()?;

        Ok(SpecDocument {
            ctx,
            spec,
            left_pivots,
            right_pivots,
            generator,
            ansatz,
            sim,
        })
    }

    pub fn resolve_ansatz(&self, override_preset: Option<&str>) -> Result<Ansatz> {
        let choice = match override_preset {
            Some(name) => AnsatzChoice::Preset(name.to_string()),
            None => self
                .ansatz
                .clone()
                .ok_or_else(|| anyhow!("no [ansatz] section and no --basis given"))?,
        };
        match choice {
            AnsatzChoice::Preset(name) => match name.as_str() {
                "poly2" => Ok(Ansatz::poly2(&self.ctx)),
                "trig2" => Ok(Ansatz::trig2(&self.ctx)),
                other => bail!("unknown ansatz preset `{other}` (try poly2 or trig2)"),
            },
            AnsatzChoice::Explicit(basis) => {
                Ansatz::new(basis, &self.ctx).map_err(|e| anyhow!("{e}"))
            }
        }
    }

    /// Evaluate the init expressions on the grid.
    pub fn initial_values(&self) -> Result<Vec<Vec<f64>>> {
        let sim = self
            .sim
            .as_ref()
            .ok_or_else(|| anyhow!("spec has no [sim] section"))?;
        let grid = Grid::new(sim.config.n).map_err(|e| anyhow!("{e}"))?;
        let mut init = Vec::new();
        for (alpha, e) in sim.init.iter().enumerate() {
            let mut values = Vec::with_capacity(grid.n());
            for i in 0..grid.n() {
                let mut assignment = BTreeMap::new();
                assignment.insert(JetCoordinate::z(), grid.z(i));
                values.push(jetsym_core::eval(e, &assignment).with_context(|| {
                    format!(
                        "evaluating init for {} at z = {}",
                        self.ctx.state_names()[alpha],
                        grid.z(i)
                    )
                })?);
            }
            init.push(values);
        }
        Ok(init)
    }
}
