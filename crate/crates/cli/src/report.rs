//! JSON report rendering. Reports are deterministic for a fixed seed and
//! flag set, and always carry the tool version, seed, flags, and a digest
//! of the spec file they were produced from.

use std::collections::BTreeMap;

use serde::Serialize;
use sha2::{Digest, Sha256};

use jetsym_core::checker::{CheckReport, ConditionEntry, ConditionVerdict};
use jetsym_core::determining::Survivor;
use jetsym_core::expr::rat_to_f64;
use jetsym_core::sim::IndistReport;
use jetsym_core::{JetContext, ZeroVerdict};

#[derive(Serialize)]
pub struct Meta {
    pub tool: &'static str,
    pub version: &'static str,
    pub command: String,
    pub spec_file: String,
    pub spec_sha256: String,
    pub seed: u64,
    pub flags: BTreeMap<String, String>,
}

impl Meta {
    pub fn new(
        command: &str,
        spec_file: &str,
        spec_text: &str,
        seed: u64,
        flags: BTreeMap<String, String>,
    ) -> Meta {
        let mut hasher = Sha256::new();
        hasher.update(spec_text.as_bytes());
        Meta {
            tool: "jetsym",
            version: env!("CARGO_PKG_VERSION"),
            command: command.to_string(),
            spec_file: spec_file.to_string(),
            spec_sha256: format!("{:x}", hasher.finalize()),
            seed,
            flags,
        }
    }
}

#[derive(Serialize)]
pub struct ConditionJson {
    pub id: String,
    pub residual: String,
    pub reduction: String,
    pub verdict: VerdictJson,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub before_reduction: Option<Box<ResidualJson>>,
}

#[derive(Serialize)]
pub struct ResidualJson {
    pub residual: String,
    pub verdict: VerdictJson,
}

#[derive(Serialize)]
pub struct VerdictJson {
    pub kind: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub marginal: Option<bool>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub witness: Option<BTreeMap<String, f64>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub value: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub component: Option<String>,
}

fn zero_verdict_json(v: &ZeroVerdict, ctx: &JetContext) -> VerdictJson {
    match v {
        ZeroVerdict::ProvenZero => VerdictJson {
            kind: "proven-zero".to_string(),
            marginal: None,
            witness: None,
            value: None,
            component: None,
        },
        ZeroVerdict::NumericallyZero { marginal } => VerdictJson {
            kind: "numerically-zero".to_string(),
            marginal: Some(*marginal),
            witness: None,
            value: None,
            component: None,
        },
        ZeroVerdict::NonZero { witness, value } => VerdictJson {
            kind: "non-zero".to_string(),
            marginal: None,
            witness: Some(
                witness
                    .iter()
                    .map(|(c, v)| (ctx.render(c), *v))
                    .collect(),
            ),
            value: Some(*value),
            component: None,
        },
    }
}

fn verdict_json(v: &ConditionVerdict, ctx: &JetContext) -> VerdictJson {
    match v {
        ConditionVerdict::Zero(z) => zero_verdict_json(z, ctx),
        ConditionVerdict::NonVanishing {
            witness,
            component,
            value,
        } => VerdictJson {
            kind: "non-vanishing".to_string(),
            marginal: None,
            witness: Some(
                witness
                    .iter()
                    .map(|(c, v)| (ctx.render(c), *v))
                    .collect(),
            ),
            value: Some(*value),
            component: Some(ctx.state_names()[*component].clone()),
        },
        ConditionVerdict::IdenticallyZero => VerdictJson {
            kind: "identically-zero".to_string(),
            marginal: None,
            witness: None,
            value: None,
            component: None,
        },
        ConditionVerdict::WitnessNotFound => VerdictJson {
            kind: "witness-not-found".to_string(),
            marginal: Some(true),
            witness: None,
            value: None,
            component: None,
        },
    }
}

pub fn condition_json(entry: &ConditionEntry, ctx: &JetContext) -> ConditionJson {
    ConditionJson {
        id: entry.id.to_string(),
        residual: entry.residual.to_string(),
        reduction: format!("{:?}", entry.reduction).to_lowercase(),
        verdict: verdict_json(&entry.verdict, ctx),
        before_reduction: entry.unreduced.as_ref().map(|(e, v)| {
            Box::new(ResidualJson {
                residual: e.to_string(),
                verdict: zero_verdict_json(v, ctx),
            })
        }),
    }
}

#[derive(Serialize)]
pub struct CheckJson {
    pub meta: Meta,
    pub aggregate: String,
    pub conditions: Vec<ConditionJson>,
}

pub fn check_json(meta: Meta, report: &CheckReport, ctx: &JetContext) -> CheckJson {
    CheckJson {
        meta,
        aggregate: report.aggregate.to_string(),
        conditions: report
            .entries
            .iter()
            .map(|e| condition_json(e, ctx))
            .collect(),
    }
}

#[derive(Serialize)]
pub struct SurvivorJson {
    pub coefficients: Vec<String>,
    pub generator: BTreeMap<String, String>,
    pub aggregate: String,
    pub conditions: Vec<ConditionJson>,
}

#[derive(Serialize)]
pub struct DetermineJson {
    pub meta: Meta,
    pub strategy: String,
    pub unknowns: usize,
    pub equations: usize,
    pub float_mode: bool,
    pub nullspace_dimension: usize,
    pub survivors: Vec<SurvivorJson>,
}

pub fn survivor_json(s: &Survivor, ctx: &JetContext) -> SurvivorJson {
    let mut generator = BTreeMap::new();
    for (alpha, name) in ctx.state_names().iter().enumerate() {
        generator.insert(format!("v{name}"), s.field.v_x(alpha).to_string());
    }
    SurvivorJson {
        coefficients: s
            .coefficients
            .iter()
            .map(|c| format!("{}", rat_to_f64(c)))
            .collect(),
        generator,
        aggregate: s.report.aggregate.to_string(),
        conditions: s
            .report
            .entries
            .iter()
            .map(|e| condition_json(e, ctx))
            .collect(),
    }
}

#[derive(Serialize)]
pub struct SimulateJson {
    pub meta: Meta,
    pub n: usize,
    pub dt: f64,
    pub t_end: f64,
    pub samples: usize,
    pub output_node: usize,
    pub output_snap_error: f64,
    pub output_min: f64,
    pub output_max: f64,
    pub max_abs_output: f64,
    pub max_interior_residual: f64,
    pub warnings: Vec<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub csv_file: Option<String>,
}

#[derive(Serialize)]
pub struct IndistRunJson {
    pub eps: f64,
    pub delta_x0: f64,
    pub delta_y: f64,
    pub trajectory_residual: f64,
    pub pass: bool,
}

#[derive(Serialize)]
pub struct IndistJson {
    pub meta: Meta,
    pub check_aggregate: String,
    pub self_discrepancy: f64,
    pub tol_out: f64,
    pub field_scale: f64,
    pub runs: Vec<IndistRunJson>,
    pub pass: bool,
}

pub fn indist_json(meta: Meta, report: &IndistReport) -> IndistJson {
    IndistJson {
        meta,
        check_aggregate: report.check.aggregate.to_string(),
        self_discrepancy: report.self_discrepancy,
        tol_out: report.tol_out,
        field_scale: report.field_scale,
        runs: report
            .runs
            .iter()
            .map(|r| IndistRunJson {
                eps: r.eps,
                delta_x0: r.delta_x0,
                delta_y: r.delta_y,
                trajectory_residual: r.residual,
                pass: r.pass,
            })
            .collect(),
        pass: report.pass,
    }
}

pub fn print<T: Serialize>(value: &T) {
    println!(
        "{}",
        serde_json::to_string_pretty(value).expect("report serialization cannot fail")
    );
}
