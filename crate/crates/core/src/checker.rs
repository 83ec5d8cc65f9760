//! Condition checkers for the two verdicts the tool produces: symmetry of
//! the boundary-controlled system, and non-observability along a vertical
//! field with no input component.

use std::collections::BTreeMap;

use crate::coord::{JetContext, JetCoordinate};
use crate::error::CoreError;
use crate::expr::{canonicalize, derive, eval, substitute, Expr};
use crate::jet::{lie_derivative, prolong, VerticalField};
use crate::sample::{is_zero, Sampler, ZeroVerdict, DEFAULT_SEED};
use crate::system::{boundary_reduce, build_reduction, reduce, BoundarySide, SystemSpec};

/// Draw budget for the t = 0 nonvanishing witness search.
pub const WITNESS_DRAWS: usize = 256;
/// Magnitude a field component must reach to count as a witness.
pub const WITNESS_THRESHOLD: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ConditionId {
    /// Lie derivative of x_t^alpha - f^alpha on the reduced submanifold.
    Domain(usize),
    /// Lie derivatives of u_z, u_zz, u_zt (indexed in that order).
    UAux(usize),
    BoundaryLeft(usize),
    BoundaryRight(usize),
    Output,
    /// d/du of the alpha-th field coefficient at t = 0.
    T0UIndependence(usize),
    T0NonVanishing,
}

impl std::fmt::Display for ConditionId {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            ConditionId::Domain(a) => write!(f, "domain-{}", a + 1),
            ConditionId::UAux(i) => {
                let name = ["u_z", "u_zz", "u_zt"][*i];
                write!(f, "u-aux-{name}")
            }
            ConditionId::BoundaryLeft(i) => write!(f, "boundary-left-{}", i + 1),
            ConditionId::BoundaryRight(i) => write!(f, "boundary-right-{}", i + 1),
            ConditionId::Output => write!(f, "output"),
            ConditionId::T0UIndependence(a) => write!(f, "t0-u-independence-{}", a + 1),
            ConditionId::T0NonVanishing => write!(f, "t0-nonvanishing"),
        }
    }
}

/// How much rewriting was applied to the residual before zero-testing.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Reduction {
    None,
    Base,
    Extended,
    Boundary,
}

#[derive(Debug, Clone, PartialEq)]
pub enum ConditionVerdict {
    Zero(ZeroVerdict),
    /// t0-nonvanishing satisfied: some component reaches the threshold.
    NonVanishing {
        witness: BTreeMap<JetCoordinate, f64>,
        component: usize,
        value: f64,
    },
    /// The field is the zero field at t = 0: non-observability cannot be
    /// concluded along it.
    IdenticallyZero,
    /// Not provably zero, but no witness within the draw budget; counts as
    /// marginal, degrading the aggregate to numeric at best.
    WitnessNotFound,
}

#[derive(Debug, Clone)]
pub struct ConditionEntry {
    pub id: ConditionId,
    /// The residual as zero-tested (after any reduction).
    pub residual: Expr,
    pub verdict: ConditionVerdict,
    pub reduction: Reduction,
    /// For domain conditions: the residual before submanifold reduction and
    /// its verdict, showing whether the condition needed the reduction.
    pub unreduced: Option<(Expr, ZeroVerdict)>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Aggregate {
    PassProven,
    PassNumeric,
    Fail,
}

impl std::fmt::Display for Aggregate {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Aggregate::PassProven => "PASS-proven",
            Aggregate::PassNumeric => "PASS-numeric",
            Aggregate::Fail => "FAIL",
        })
    }
}

#[derive(Debug, Clone)]
pub struct CheckReport {
    pub entries: Vec<ConditionEntry>,
    pub aggregate: Aggregate,
}

#[derive(Debug, Clone, Default)]
pub struct CheckOptions {
    /// Extend the submanifold reduction with the x_zt/x_tt consequences.
    pub extended_reduction: bool,
    /// Apply the submanifold reduction to the output residual before
    /// substituting z := z0.
    pub reduce_output: bool,
    /// Pivot declarations used to restrict boundary residuals further.
    pub left_pivots: Option<Vec<JetCoordinate>>,
    pub right_pivots: Option<Vec<JetCoordinate>>,
    /// Seed for the zero test and witness samplers (one fresh sampler per
    /// condition, so verdicts do not depend on condition order).
    pub seed: Option<u64>,
}

impl CheckOptions {
    fn seed(&self) -> u64 {
        self.seed.unwrap_or(DEFAULT_SEED)
    }
}

fn zero_entry(
    id: ConditionId,
    residual: Expr,
    reduction: Reduction,
    unreduced: Option<(Expr, ZeroVerdict)>,
    seed: u64,
) -> Result<ConditionEntry, CoreError> {
    let mut sampler = Sampler::new(seed);
    let verdict = is_zero(&residual, &mut sampler)?;
    Ok(ConditionEntry {
        id,
        residual: canonicalize(&residual),
        verdict: ConditionVerdict::Zero(verdict),
        reduction,
        unreduced,
    })
}

/// One entry per evolution equation: the Lie derivative of
/// x_t^alpha - f^alpha along the second prolongation, restricted to the
/// solution submanifold.
pub fn check_domain(
    spec: &SystemSpec,
    field: &VerticalField,
    options: &CheckOptions,
) -> Result<Vec<ConditionEntry>, CoreError> {
    let ctx = spec.ctx();
    let prolonged = prolong(field, 2, ctx)?;
    let map = build_reduction(spec, options.extended_reduction)?;
    let strength = if options.extended_reduction {
        Reduction::Extended
    } else {
        Reduction::Base
    };
    let mut entries = Vec::new();
    for alpha in 0..spec.n_x() {
        let lhs = Expr::coord(JetCoordinate::dependent(alpha, 0, 1));
        let defect = crate::expr::sub(lhs, spec.rhs(alpha).clone());
        let raw = lie_derivative(&prolonged, &defect);
        let reduced = reduce(&raw, &map)?;
        let mut sampler = Sampler::new(options.seed());
        let raw_verdict = is_zero(&raw, &mut sampler)?;
        entries.push(zero_entry(
            ConditionId::Domain(alpha),
            reduced,
            strength,
            Some((raw, raw_verdict)),
            options.seed(),
        )?);
    }
    Ok(entries)
}

/// The three auxiliary input conditions L u_z = L u_zz = L u_zt = 0. They
/// hold identically whenever v_u = 0, which short-circuits the computation.
pub fn check_u_aux(
    spec: &SystemSpec,
    field: &VerticalField,
    options: &CheckOptions,
) -> Result<Vec<ConditionEntry>, CoreError> {
    let ctx = spec.ctx();
    let targets = [
        JetCoordinate::input(1, 0),
        JetCoordinate::input(2, 0),
        JetCoordinate::input(1, 1),
    ];
    if field.has_zero_input_component() {
        return Ok(targets
            .iter()
            .enumerate()
            .map(|(i, _)| ConditionEntry {
                id: ConditionId::UAux(i),
                residual: Expr::zero(),
                verdict: ConditionVerdict::Zero(ZeroVerdict::ProvenZero),
                reduction: Reduction::None,
                unreduced: None,
            })
            .collect());
    }
    let prolonged = prolong(field, 2, ctx)?;
    let map = build_reduction(spec, options.extended_reduction)?;
    let strength = if options.extended_reduction {
        Reduction::Extended
    } else {
        Reduction::Base
    };
    let mut entries = Vec::new();
    for (i, target) in targets.iter().enumerate() {
        let raw = lie_derivative(&prolonged, &Expr::coord(*target));
        let reduced = reduce(&raw, &map)?;
        entries.push(zero_entry(
            ConditionId::UAux(i),
            reduced,
            strength,
            None,
            options.seed(),
        )?);
    }
    Ok(entries)
}

/// One entry per boundary function, restricted to its boundary (z
/// substituted, declared pivots solved out).
pub fn check_boundary(
    spec: &SystemSpec,
    field: &VerticalField,
    options: &CheckOptions,
) -> Result<Vec<ConditionEntry>, CoreError> {
    let ctx = spec.ctx();
    let prolonged = prolong(field, 1, ctx)?;
    let mut entries = Vec::new();
    for (side, pivots, make_id) in [
        (
            BoundarySide::Left,
            options.left_pivots.as_deref(),
            ConditionId::BoundaryLeft as fn(usize) -> ConditionId,
        ),
        (
            BoundarySide::Right,
            options.right_pivots.as_deref(),
            ConditionId::BoundaryRight as fn(usize) -> ConditionId,
        ),
    ] {
        for (i, g) in spec.boundary(side).iter().enumerate() {
            let raw = lie_derivative(&prolonged, g);
            let restricted = boundary_reduce(&raw, side, spec, pivots)?;
            entries.push(zero_entry(
                make_id(i),
                restricted,
                Reduction::Boundary,
                None,
                options.seed(),
            )?);
        }
    }
    Ok(entries)
}

/// The output condition: Lie derivative of the output function along the
/// first prolongation, evaluated at z = z0.
pub fn check_output(
    spec: &SystemSpec,
    field: &VerticalField,
    options: &CheckOptions,
) -> Result<ConditionEntry, CoreError> {
    let ctx = spec.ctx();
    let prolonged = prolong(field, 1, ctx)?;
    let mut residual = lie_derivative(&prolonged, spec.output());
    let reduction = if options.reduce_output {
        let map = build_reduction(spec, options.extended_reduction)?;
        residual = reduce(&residual, &map)?;
        if options.extended_reduction {
            Reduction::Extended
        } else {
            Reduction::Base
        }
    } else {
        Reduction::None
    };
    let mut at_z0 = BTreeMap::new();
    at_z0.insert(
        JetCoordinate::z(),
        Expr::Rational(spec.output_location().clone()),
    );
    let residual = substitute(&residual, &at_z0);
    zero_entry(ConditionId::Output, residual, reduction, None, options.seed())
}

/// The t = 0 conditions: each field coefficient must be independent of the
/// input at t = 0, and the field must not vanish identically there.
pub fn check_t0(
    field: &VerticalField,
    ctx: &JetContext,
    options: &CheckOptions,
) -> Result<Vec<ConditionEntry>, CoreError> {
    let mut at_t0 = BTreeMap::new();
    at_t0.insert(JetCoordinate::t(), Expr::zero());
    let mut entries = Vec::new();
    let u = JetCoordinate::input(0, 0);
    for alpha in 0..field.n_x() {
        let residual = substitute(&derive(field.v_x(alpha), &u), &at_t0);
        entries.push(zero_entry(
            ConditionId::T0UIndependence(alpha),
            residual,
            Reduction::None,
            None,
            options.seed(),
        )?);
    }
    let restricted: Vec<Expr> = (0..field.n_x())
        .map(|a| substitute(field.v_x(a), &at_t0))
        .collect();
    let residual = crate::expr::sum(restricted.clone());
    if restricted.iter().all(|e| e.is_literal_zero()) {
        entries.push(ConditionEntry {
            id: ConditionId::T0NonVanishing,
            residual,
            verdict: ConditionVerdict::IdenticallyZero,
            reduction: Reduction::None,
            unreduced: None,
        });
        return Ok(entries);
    }
    let coords: Vec<JetCoordinate> = restricted
        .iter()
        .flat_map(|e| e.coords())
        .collect();
    let mut sampler = Sampler::new(options.seed());
    let mut verdict = ConditionVerdict::WitnessNotFound;
    'search: for _ in 0..WITNESS_DRAWS {
        let assignment = sampler.assignment(coords.iter().copied());
        for (alpha, component) in restricted.iter().enumerate() {
            match eval(component, &assignment) {
                Ok(v) if v.abs() >= WITNESS_THRESHOLD => {
                    verdict = ConditionVerdict::NonVanishing {
                        witness: assignment,
                        component: alpha,
                        value: v,
                    };
                    break 'search;
                }
                Ok(_) => {}
                Err(CoreError::Domain { .. }) => {}
                Err(e) => return Err(e),
            }
        }
    }
    let _ = ctx;
    entries.push(ConditionEntry {
        id: ConditionId::T0NonVanishing,
        residual,
        verdict,
        reduction: Reduction::None,
        unreduced: None,
    });
    Ok(entries)
}

fn aggregate(entries: &[ConditionEntry]) -> Aggregate {
    let mut result = Aggregate::PassProven;
    for entry in entries {
        match &entry.verdict {
            ConditionVerdict::Zero(ZeroVerdict::ProvenZero) => {}
            ConditionVerdict::NonVanishing { .. } => {}
            ConditionVerdict::Zero(ZeroVerdict::NumericallyZero { .. })
            | ConditionVerdict::WitnessNotFound => {
                if result == Aggregate::PassProven {
                    result = Aggregate::PassNumeric;
                }
            }
            ConditionVerdict::Zero(ZeroVerdict::NonZero { .. })
            | ConditionVerdict::IdenticallyZero => return Aggregate::Fail,
        }
    }
    result
}

/// Full non-observability check. Requires v_u = 0; its conditions subsume
/// the symmetry conditions for such fields, and the report carries all of
/// them in fixed order: domain, input-auxiliary, boundary, output, t = 0.
pub fn check_nonobservability(
    spec: &SystemSpec,
    field: &VerticalField,
    options: &CheckOptions,
) -> Result<CheckReport, CoreError> {
    if !field.has_zero_input_component() {
        return Err(CoreError::NonzeroInputComponent(field.v_u().to_string()));
    }
    let mut entries = check_domain(spec, field, options)?;
    entries.extend(check_u_aux(spec, field, options)?);
    entries.extend(check_boundary(spec, field, options)?);
    entries.push(check_output(spec, field, options)?);
    entries.extend(check_t0(field, spec.ctx(), options)?);
    // Subsumption guard: every symmetry condition appears in this report.
    debug_assert!(entries
        .iter()
        .filter(|e| matches!(
            e.id,
            ConditionId::Domain(_)
                | ConditionId::UAux(_)
                | ConditionId::BoundaryLeft(_)
                | ConditionId::BoundaryRight(_)
        ))
        .count()
        == spec.n_x()
            + 3
            + spec.boundary(BoundarySide::Left).len()
            + spec.boundary(BoundarySide::Right).len());
    let aggregate = aggregate(&entries);
    Ok(CheckReport { entries, aggregate })
}

/// Symmetry check (no output or t = 0 conditions; v_u may be nonzero).
pub fn check_symmetry(
    spec: &SystemSpec,
    field: &VerticalField,
    options: &CheckOptions,
) -> Result<CheckReport, CoreError> {
    let mut entries = check_domain(spec, field, options)?;
    entries.extend(check_u_aux(spec, field, options)?);
    entries.extend(check_boundary(spec, field, options)?);
    let aggregate = aggregate(&entries);
    Ok(CheckReport { entries, aggregate })
}
