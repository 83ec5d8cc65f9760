//! Acceptance gate: eight end-to-end criteria covering the golden checks,
//! negative controls, generator discovery, the numeric indistinguishability
//! experiment, simulator convergence, and the symbolic property suites.
//! Each test prints exactly one `criterion N: PASS/FAIL` line.

use std::collections::BTreeMap;
use std::path::PathBuf;
use std::process::Command;
use std::time::Instant;

use serde_json::Value;

use jetsym_core::expr::Rat;
use jetsym_core::jet::flow_at_t0;
use jetsym_core::{
    build_reduction, canonicalize, check_nonobservability, eval, parse, reduce, simulate,
    total_derivative, Aggregate, CheckOptions, Expr, Independent, JetContext, JetCoordinate,
    SimConfig, SystemSpec, VerticalField,
};

const BIN: &str = env!("CARGO_BIN_EXE_jetsym");

fn example(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR"))
        .join("../../examples")
        .join(name)
}

fn run(args: &[&str]) -> (i32, Value) {
    let out = Command::new(BIN).args(args).output().expect("spawn jetsym");
    let code = out.status.code().unwrap_or(-1);
    let json = serde_json::from_slice(&out.stdout).unwrap_or(Value::Null);
    (code, json)
}

fn conditions(report: &Value) -> Vec<&Value> {
    report["conditions"].as_array().map(|v| v.iter().collect()).unwrap_or_default()
}

fn verdict_kind<'a>(c: &'a Value) -> &'a str {
    c["verdict"]["kind"].as_str().unwrap_or("?")
}

fn gate(criterion: u32, pass: bool, detail: &str) {
    println!(
        "criterion {criterion}: {} — {detail}",
        if pass { "PASS" } else { "FAIL" }
    );
    assert!(pass, "criterion {criterion} failed: {detail}");
}

/// State translation proves the nonlinear wave system unobservable, every
/// condition settled by exact cancellation, in under a second.
#[test]
fn criterion_1_nonlinear_wave_golden_check() {
    let t = Instant::now();
    let (code, report) = run(&["check", example("nonlinear_wave.spec").to_str().unwrap()]);
    let elapsed = t.elapsed();
    let all_proven = conditions(&report)
        .iter()
        .all(|c| matches!(verdict_kind(c), "proven-zero" | "non-vanishing"));
    let pass = code == 0
        && report["aggregate"] == "PASS-proven"
        && all_proven
        && elapsed.as_secs_f64() < 1.0;
    gate(
        1,
        pass,
        &format!(
            "exit {code}, aggregate {}, all conditions proven: {all_proven}, {:.2?}",
            report["aggregate"], elapsed
        ),
    );
}

/// The coupled quasilinear system passes with the compensating generator;
/// the domain conditions are settled only modulo the defining equations
/// (the second raw residual is genuinely nonzero on the full jet space;
/// the first one happens to cancel identically before reduction).
#[test]
fn criterion_2_quasilinear_golden_check() {
    let t = Instant::now();
    let (code, report) = run(&["check", example("academic.spec").to_str().unwrap()]);
    let elapsed = t.elapsed();
    let conds = conditions(&report);
    let domains: Vec<&&Value> = conds
        .iter()
        .filter(|c| c["id"].as_str().unwrap_or("").starts_with("domain"))
        .collect();
    let both_reduced_proven = domains.len() == 2
        && domains.iter().all(|c| {
            verdict_kind(c) == "proven-zero" && c["reduction"] == "base"
        });
    let raw_nonzero = domains.iter().any(|c| {
        c["before_reduction"]["verdict"]["kind"] == "non-zero"
    });
    let pass = code == 0
        && both_reduced_proven
        && raw_nonzero
        && elapsed.as_secs_f64() < 2.0;
    gate(
        2,
        pass,
        &format!(
            "exit {code}, domain residuals proven after reduction: {both_reduced_proven}, \
             nonzero before reduction: {raw_nonzero}, {:.2?}",
            elapsed
        ),
    );
}

/// The time-dependent standing-mode field is an exact symmetry of the
/// forced linear wave system.
#[test]
fn criterion_3_linear_wave_symmetry() {
    let (code, report) = run(&["symmetry", example("linear_wave.spec").to_str().unwrap()]);
    let domains_proven = conditions(&report)
        .iter()
        .filter(|c| c["id"].as_str().unwrap_or("").starts_with("domain"))
        .all(|c| verdict_kind(c) == "proven-zero");
    let pass = code == 0 && report["aggregate"] == "PASS-proven" && domains_proven;
    gate(
        3,
        pass,
        &format!(
            "exit {code}, aggregate {}, domain residuals proven: {domains_proven}",
            report["aggregate"]
        ),
    );
}

/// Translating the velocity state instead of the displacement must fail
/// with the expected residuals and witnesses.
#[test]
fn criterion_4_negative_control() {
    let text = std::fs::read_to_string(example("nonlinear_wave.spec")).unwrap();
    let negated = text
        .replace("vx1 = \"1\"", "vx1 = \"0\"")
        .replace("vx2 = \"0\"", "vx2 = \"1\"");
    let path = std::env::temp_dir().join("jetsym_acceptance_negative.spec");
    std::fs::write(&path, negated).unwrap();
    let (code, report) = run(&["check", path.to_str().unwrap()]);
    let conds = conditions(&report);
    let domain1 = conds.iter().find(|c| c["id"] == "domain-1");
    let output = conds.iter().find(|c| c["id"] == "output");
    let domain_fails = domain1
        .map(|c| c["residual"] == "-1" && verdict_kind(c) == "non-zero")
        .unwrap_or(false);
    let output_fails = output
        .map(|c| c["residual"] == "1" && verdict_kind(c) == "non-zero")
        .unwrap_or(false);
    let witnessed = conds
        .iter()
        .filter(|c| verdict_kind(c) == "non-zero")
        .all(|c| c["verdict"]["witness"].is_object());
    let pass = code == 1 && domain_fails && output_fails && witnessed;
    gate(
        4,
        pass,
        &format!(
            "exit {code}, domain residual -1: {domain_fails}, output residual 1: {output_fails}, \
             witnesses reported: {witnessed}"
        ),
    );
}

/// Numeric proportionality of two coefficient pairs over a (z, t) grid.
fn proportional(ctx: &JetContext, got: (&str, &str), want: (&str, &str)) -> bool {
    let parse2 = |a: &str, b: &str| (parse(a, ctx).unwrap(), parse(b, ctx).unwrap());
    let (g1, g2) = parse2(got.0, got.1);
    let (w1, w2) = parse2(want.0, want.1);
    let mut ratio: Option<f64> = None;
    for i in 0..7 {
        for j in 0..7 {
            let mut at = BTreeMap::new();
            at.insert(JetCoordinate::z(), 0.05 + 0.13 * i as f64);
            at.insert(JetCoordinate::t(), 0.07 + 0.11 * j as f64);
            at.insert(JetCoordinate::dependent(0, 0, 0), 1.3);
            at.insert(JetCoordinate::dependent(1, 0, 0), -0.8);
            for (g, w) in [(&g1, &w1), (&g2, &w2)] {
                let (gv, wv) = (eval(g, &at).unwrap(), eval(w, &at).unwrap());
                if wv.abs() < 1e-9 {
                    if gv.abs() > 1e-6 {
                        return false;
                    }
                    continue;
                }
                let r = gv / wv;
                match ratio {
                    None if r.abs() > 1e-9 => ratio = Some(r),
                    Some(r0) if (r - r0).abs() > 1e-6 * r0.abs().max(1.0) => return false,
                    _ => {}
                }
            }
        }
    }
    ratio.map(|r| r.abs() > 1e-9).unwrap_or(false)
}

/// Discovery recovers the known generators from the finite ansatz spaces,
/// and every survivor is re-verified by the condition checker.
#[test]
fn criterion_5_determining_equation_discovery() {
    let ctx = JetContext::new(2);
    let t = Instant::now();
    let (code_a, rep_a) = run(&["determine", example("nonlinear_wave.spec").to_str().unwrap()]);
    let poly_time = t.elapsed();
    let t = Instant::now();
    let (code_b, rep_b) = run(&["determine", example("linear_wave.spec").to_str().unwrap()]);
    let trig_time = t.elapsed();
    let survivors = |r: &Value| -> Vec<(String, String, String)> {
        r["survivors"]
            .as_array()
            .map(|s| {
                s.iter()
                    .map(|v| {
                        (
                            v["generator"]["vx1"].as_str().unwrap_or("").to_string(),
                            v["generator"]["vx2"].as_str().unwrap_or("").to_string(),
                            v["aggregate"].as_str().unwrap_or("").to_string(),
                        )
                    })
                    .collect()
            })
            .unwrap_or_default()
    };
    let poly = survivors(&rep_a);
    let trig = survivors(&rep_b);
    let poly_hit = poly
        .iter()
        .any(|(v1, v2, agg)| proportional(&ctx, (v1, v2), ("1", "0")) && agg != "FAIL");
    let trig_hit = trig.iter().any(|(v1, v2, agg)| {
        proportional(
            &ctx,
            (v1, v2),
            ("sin(2*pi*z)*cos(2*pi*t)", "-2*pi*sin(2*pi*z)*sin(2*pi*t)"),
        ) && agg != "FAIL"
    });
    let pass = code_a == 0
        && code_b == 0
        && poly_hit
        && trig_hit
        && poly_time.as_secs_f64() < 30.0
        && trig_time.as_secs_f64() < 30.0;
    gate(
        5,
        pass,
        &format!(
            "polynomial basis: {} survivors, target found {poly_hit} ({poly_time:.2?}); \
             trigonometric basis: {} survivors, target found {trig_hit} ({trig_time:.2?})",
            poly.len(),
            trig.len()
        ),
    );
}

/// Transported initial conditions move measurably while the outputs agree
/// to solver precision: indistinguishability realized numerically.
#[test]
fn criterion_6_numeric_indistinguishability() {
    let t = Instant::now();
    let (code_a, rep_a) = run(&[
        "indist",
        example("nonlinear_wave.spec").to_str().unwrap(),
        "--eps",
        "0.25,0.5,1.0",
    ]);
    let exact_translation = rep_a["runs"]
        .as_array()
        .map(|runs| {
            runs.len() == 3
                && runs.iter().all(|r| {
                    let eps = r["eps"].as_f64().unwrap();
                    let dx = r["delta_x0"].as_f64().unwrap();
                    let dy = r["delta_y"].as_f64().unwrap();
                    (dx - eps).abs() < 1e-9 && dy < 1e-9
                })
        })
        .unwrap_or(false);
    let (code_b, rep_b) = run(&[
        "indist",
        example("academic.spec").to_str().unwrap(),
        "--eps",
        "0.2",
    ]);
    let quasilinear_ok = rep_b["runs"]
        .as_array()
        .and_then(|runs| runs.first())
        .map(|r| {
            let dx = r["delta_x0"].as_f64().unwrap();
            let dy = r["delta_y"].as_f64().unwrap();
            let tol = rep_b["tol_out"].as_f64().unwrap();
            dx >= 0.15 && dy <= tol
        })
        .unwrap_or(false);
    let elapsed = t.elapsed();
    let pass = code_a == 0
        && code_b == 0
        && exact_translation
        && quasilinear_ok
        && elapsed.as_secs_f64() < 60.0;
    gate(
        6,
        pass,
        &format!(
            "translation exact and output-silent: {exact_translation}; \
             quasilinear moved >= 0.15 within solver tolerance: {quasilinear_ok}; total {elapsed:.2?}"
        ),
    );
}

fn linear_wave_spec() -> SystemSpec {
    let ctx = JetContext::new(2);
    SystemSpec::new(
        ctx.clone(),
        vec![
            parse("x2", &ctx).unwrap(),
            parse("x1_zz + u", &ctx).unwrap(),
        ],
        vec![parse("x1", &ctx).unwrap()],
        vec![parse("x1", &ctx).unwrap()],
        parse("x1", &ctx).unwrap(),
        Rat::new(1.into(), 2.into()),
    )
    .unwrap()
}

fn standing_wave_error(n: usize) -> f64 {
    use std::f64::consts::PI;
    let spec = linear_wave_spec();
    let ctx = spec.ctx().clone();
    let mut config = SimConfig::new(n, 1e-4, 0.5, Expr::zero());
    config.left_pivots = vec![ctx.lookup("x1").unwrap()];
    config.right_pivots = vec![ctx.lookup("x1").unwrap()];
    let dz = 1.0 / (n - 1) as f64;
    let init: Vec<Vec<f64>> = vec![
        (0..n).map(|i| (2.0 * PI * i as f64 * dz).sin()).collect(),
        vec![0.0; n],
    ];
    let traj = simulate(&spec, &init, &config).unwrap();
    let last = traj.times.len() - 1;
    (0..n)
        .map(|i| {
            let exact = -(2.0 * PI * i as f64 * dz).sin();
            (traj.state(last, 0, i) - exact).abs()
        })
        .fold(0.0f64, f64::max)
}

/// At t = 1/2 the standing wave has flipped sign exactly; the discrete
/// solution reproduces it at second order in the grid spacing, and the
/// midpoint sensor stays silent over a full period.
#[test]
fn criterion_7_simulator_convergence() {
    let e101 = standing_wave_error(101);
    let e201 = standing_wave_error(201);
    let ratio = e101 / e201;
    let spec = linear_wave_spec();
    let ctx = spec.ctx().clone();
    let mut config = SimConfig::new(101, 1e-4, 1.0, Expr::zero());
    config.left_pivots = vec![ctx.lookup("x1").unwrap()];
    config.right_pivots = vec![ctx.lookup("x1").unwrap()];
    let dz = 1.0 / 100.0;
    let init: Vec<Vec<f64>> = vec![
        (0..101)
            .map(|i| (2.0 * std::f64::consts::PI * i as f64 * dz).sin())
            .collect(),
        vec![0.0; 101],
    ];
    let traj = simulate(&spec, &init, &config).unwrap();
    let max_output = traj.output.iter().fold(0.0f64, |m, y| m.max(y.abs()));
    let pass = e101 < 5e-3 && ratio >= 3.0 && max_output < 1e-3;
    gate(
        7,
        pass,
        &format!(
            "half-period error {e101:.2e} at N=101, refinement ratio {ratio:.2}, \
             max |y| {max_output:.2e} over a full period"
        ),
    );
}

/// Deterministic random expression trees (xorshift-driven) for the
/// canonicalization and commutation properties.
struct ExprGen(u64);

impl ExprGen {
    fn next(&mut self) -> u64 {
        let mut x = self.0;
        x ^= x << 13;
        x ^= x >> 7;
        x ^= x << 17;
        self.0 = x;
        x
    }

    fn gen(&mut self, depth: u32) -> Expr {
        let pick = self.next() % if depth == 0 { 3 } else { 7 };
        match pick {
            0 => Expr::int((self.next() % 11) as i64 - 5),
            1 => Expr::rational((self.next() % 9) as i64 - 4, (self.next() % 4) as i64 + 1),
            2 => {
                let coords = [
                    JetCoordinate::z(),
                    JetCoordinate::t(),
                    JetCoordinate::dependent(0, 0, 0),
                    JetCoordinate::dependent(1, 0, 0),
                    JetCoordinate::dependent(0, 1, 0),
                ];
                Expr::Coord(coords[(self.next() % 5) as usize])
            }
            3 => Expr::Sum((0..(self.next() % 3 + 1)).map(|_| self.gen(depth - 1)).collect()),
            4 => Expr::Product((0..(self.next() % 3 + 1)).map(|_| self.gen(depth - 1)).collect()),
            5 => Expr::Pow(
                Box::new(self.gen(depth - 1)),
                Rat::from_integer(([-1i64, 2, 3][(self.next() % 3) as usize]).into()),
            ),
            _ => Expr::Func(
                [jetsym_core::UnaryFn::Sin, jetsym_core::UnaryFn::Cos, jetsym_core::UnaryFn::Exp]
                    [(self.next() % 3) as usize],
                Box::new(self.gen(depth - 1)),
            ),
        }
    }
}

/// The symbolic-layer property suites, compact and deterministic: canonical
/// forms are fixed points that preserve values, total derivatives commute,
/// reduction is idempotent, flows compose additively, and checker verdicts
/// ignore coefficient scaling.
#[test]
fn criterion_8_property_suites() {
    let ctx = JetContext::new(2);
    let mut gen = ExprGen(0x6A65_7473);
    let mut canonical_ok = true;
    for _ in 0..1000 {
        let e = gen.gen(3);
        let c1 = canonicalize(&e);
        if c1 != canonicalize(&c1) {
            canonical_ok = false;
            break;
        }
        let at: BTreeMap<JetCoordinate, f64> = e
            .coords()
            .into_iter()
            .enumerate()
            .map(|(i, c)| (c, 0.35 + 0.21 * i as f64))
            .collect();
        if let (Ok(v), Ok(vc)) = (eval(&e, &at), eval(&c1, &at)) {
            if (v - vc).abs() > 1e-9 * v.abs().max(1.0) {
                canonical_ok = false;
                break;
            }
        }
    }
    let mut commute_ok = true;
    for _ in 0..200 {
        let e = gen.gen(3);
        let zt = total_derivative(&e, Independent::Z, &ctx)
            .and_then(|d| total_derivative(&d, Independent::T, &ctx));
        let tz = total_derivative(&e, Independent::T, &ctx)
            .and_then(|d| total_derivative(&d, Independent::Z, &ctx));
        if let (Ok(zt), Ok(tz)) = (zt, tz) {
            if zt != tz {
                commute_ok = false;
                break;
            }
        }
    }
    let spec = SystemSpec::new(
        ctx.clone(),
        vec![
            parse("x1*x2*x1_zz + u", &ctx).unwrap(),
            parse("x2_z - x2^2*x1_zz + (x2/x1)*(x1_z - u)", &ctx).unwrap(),
        ],
        vec![
            parse("x1_z", &ctx).unwrap(),
            parse("x1*x2 - 1", &ctx).unwrap(),
        ],
        vec![parse("x1_z", &ctx).unwrap()],
        parse("x1_z", &ctx).unwrap(),
        Rat::new(1.into(), 2.into()),
    )
    .unwrap();
    let map = build_reduction(&spec, true).unwrap();
    let mut reduce_ok = true;
    for _ in 0..100 {
        let e = gen.gen(3);
        if let Ok(once) = reduce(&e, &map) {
            if reduce(&once, &map).unwrap() != once {
                reduce_ok = false;
                break;
            }
        }
    }
    let field = VerticalField::new(
        vec![parse("1", &ctx).unwrap(), parse("-x2/x1", &ctx).unwrap()],
        Expr::zero(),
        &ctx,
    )
    .unwrap();
    let state = [1.6, 1.0 / 1.6];
    let once = flow_at_t0(&field, 0.3, &state, 0.45, 100).unwrap();
    let mid = flow_at_t0(&field, 0.3, &state, 0.3, 100).unwrap();
    let two = flow_at_t0(&field, 0.3, &mid, 0.15, 100).unwrap();
    let flow_ok = once
        .iter()
        .zip(&two)
        .all(|(a, b)| (a - b).abs() < 1e-8);
    let options = CheckOptions {
        left_pivots: Some(vec![
            ctx.lookup("x1_z").unwrap(),
            ctx.lookup("x2").unwrap(),
        ]),
        right_pivots: Some(vec![ctx.lookup("x1_z").unwrap()]),
        ..CheckOptions::default()
    };
    let base = check_nonobservability(&spec, &field, &options).unwrap();
    let scale_ok = [2i64, -3]
        .into_iter()
        .all(|k| {
            let scaled = field.scaled(Rat::from_integer(k.into()));
            let rep = check_nonobservability(&spec, &scaled, &options).unwrap();
            rep.aggregate == base.aggregate && rep.aggregate == Aggregate::PassProven
        });
    let pass = canonical_ok && commute_ok && reduce_ok && flow_ok && scale_ok;
    gate(
        8,
        pass,
        &format!(
            "canonicalization {canonical_ok}, derivative commutation {commute_ok}, \
             reduction idempotence {reduce_ok}, flow composition {flow_ok}, \
             scaling invariance {scale_ok}"
        ),
    );
}
