//! Generator discovery: pick a finite linear ansatz for the field
//! coefficients, turn the non-observability zero-conditions into a
//! homogeneous linear system for the ansatz constants, and solve it
//! exactly.

use std::collections::BTreeMap;

use num::traits::{One, Signed, Zero};
use num::BigInt;

use crate::checker::{check_nonobservability, CheckOptions, CheckReport, ConditionId};
use crate::coord::{JetContext, JetCoordinate};
use crate::error::CoreError;
use crate::expr::{
    self, canonicalize, derive, eval, func, mul, pow_int, split_term, substitute, Expr, Rat,
    UnaryFn,
};
use crate::jet::{lie_derivative, prolong, VerticalField};
use crate::linalg::{
    float_nullspace, rational_nullspace, snap_rational, FLOAT_RANK_TOL, MAX_SNAP_DENOMINATOR,
};
use crate::sample::{Sampler, DEFAULT_SEED};
use crate::system::{boundary_reduce, build_reduction, reduce, BoundarySide, SystemSpec};

/// Sample points per condition under the sampling strategy, as a multiple
/// of the unknown count.
pub const SAMPLES_PER_UNKNOWN: usize = 4;

/// Finite linear ansatz: per state, a list of basis functions over
/// (z, t, x, u); the unknowns are one rational constant per basis function.
#[derive(Debug, Clone)]
pub struct Ansatz {
    basis: Vec<Vec<Expr>>,
}

impl Ansatz {
    pub fn new(basis: Vec<Vec<Expr>>, ctx: &JetContext) -> Result<Self, CoreError> {
        if basis.len() != ctx.n_x() {
            return Err(CoreError::InvalidSystem(format!(
                "ansatz lists bases for {} states, system has {}",
                basis.len(),
                ctx.n_x()
            )));
        }
        for (alpha, fns) in basis.iter().enumerate() {
            for b in fns {
                for c in b.coords() {
                    if c.order() > 0 {
                        return Err(CoreError::DerivativeInGenerator {
                            coordinate: c.to_string(),
                            place: format!("ansatz basis for {}", ctx.state_names()[alpha]),
                        });
                    }
                }
            }
        }
        Ok(Ansatz {
            basis: basis
                .into_iter()
                .map(|fns| fns.iter().map(canonicalize).collect())
                .collect(),
        })
    }

    /// Polynomial preset: z^i t^j * X * U with i + j <= 2, X a state or 1,
    /// and U in {1, u}.
    pub fn poly2(ctx: &JetContext) -> Self {
        let z = Expr::coord(JetCoordinate::z());
        let t = Expr::coord(JetCoordinate::t());
        let mut state_factors = vec![Expr::one()];
        for beta in 0..ctx.n_x() {
            state_factors.push(Expr::coord(JetCoordinate::dependent(beta, 0, 0)));
        }
        let input_factors = [Expr::one(), Expr::coord(JetCoordinate::input(0, 0))];
        let mut fns = Vec::new();
        for i in 0..=2i64 {
            for j in 0..=(2 - i) {
                for x_factor in &state_factors {
                    for u_factor in &input_factors {
                        fns.push(canonicalize(&expr::product(vec![
                            pow_int(z.clone(), i),
                            pow_int(t.clone(), j),
                            x_factor.clone(),
                            u_factor.clone(),
                        ])));
                    }
                }
            }
        }
        Ansatz {
            basis: vec![fns; ctx.n_x()],
        }
    }

    /// Trigonometric preset for linear systems: pi^p * Z(z) * T(t) with
    /// p in {0, 1}, Z in {sin(k pi z), cos(k pi z)}, T in
    /// {1, sin(m pi t), cos(m pi t)}, k, m <= 2. The pi^p scaling keeps the
    /// unknowns rational when time differentiation brings factors of pi
    /// down from the arguments.
    pub fn trig2(ctx: &JetContext) -> Self {
        let z = Expr::coord(JetCoordinate::z());
        let t = Expr::coord(JetCoordinate::t());
        let mut z_factors = Vec::new();
        let mut t_factors = vec![Expr::one()];
        for k in 1..=2i64 {
            let arg_z = mul(Expr::int(k), mul(Expr::Pi, z.clone()));
            let arg_t = mul(Expr::int(k), mul(Expr::Pi, t.clone()));
            z_factors.push(func(UnaryFn::Sin, arg_z.clone()));
            z_factors.push(func(UnaryFn::Cos, arg_z));
            t_factors.push(func(UnaryFn::Sin, arg_t.clone()));
            t_factors.push(func(UnaryFn::Cos, arg_t));
        }
        let mut fns = Vec::new();
        for p in 0..=1i64 {
            for zf in &z_factors {
                for tf in &t_factors {
                    fns.push(canonicalize(&expr::product(vec![
                        pow_int(Expr::Pi, p),
                        zf.clone(),
                        tf.clone(),
                    ])));
                }
            }
        }
        Ansatz {
            basis: vec![fns; ctx.n_x()],
        }
    }

    pub fn basis(&self) -> &[Vec<Expr>] {
        &self.basis
    }

    pub fn total_unknowns(&self) -> usize {
        self.basis.iter().map(Vec::len).sum()
    }

    /// The field with coefficients v_x^alpha = sum_k c_{alpha,k} b_{alpha,k}
    /// and no input component.
    pub fn instantiate(&self, coefficients: &[Rat], ctx: &JetContext) -> VerticalField {
        assert_eq!(coefficients.len(), self.total_unknowns());
        let mut v_x = Vec::new();
        let mut offset = 0;
        for fns in &self.basis {
            let terms: Vec<Expr> = fns
                .iter()
                .zip(&coefficients[offset..offset + fns.len()])
                .map(|(b, c)| expr::scale(c.clone(), b.clone()))
                .collect();
            v_x.push(expr::sum(terms));
            offset += fns.len();
        }
        VerticalField::new(v_x, Expr::zero(), ctx).expect("ansatz basis already validated")
    }

    /// The field whose only nonzero coefficient is the k-th basis function
    /// of state alpha, with unit constant.
    fn unit_field(&self, flat_index: usize, ctx: &JetContext) -> VerticalField {
        let mut coefficients = vec![Rat::zero(); self.total_unknowns()];
        coefficients[flat_index] = Rat::one();
        self.instantiate(&coefficients, ctx)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Strategy {
    CoefficientCollection,
    Sampling,
}

/// Where one linear equation came from: a monomial of a collected residual,
/// or a sample point of one.
#[derive(Debug, Clone)]
pub enum Provenance {
    Collected { condition: ConditionId, monomial: String },
    Sampled { condition: ConditionId, sample: usize },
}

#[derive(Debug, Clone)]
pub struct DeterminingSystem {
    rows: Vec<Vec<Rat>>,
    provenance: Vec<Provenance>,
    n_unknowns: usize,
    /// Set when some sampled coefficient refused rationalization; the rows
    /// then hold snapped approximations and the solver runs in float mode.
    float_mode: bool,
    float_rows: Vec<Vec<f64>>,
}

impl DeterminingSystem {
    pub fn n_equations(&self) -> usize {
        if self.float_mode {
            self.float_rows.len()
        } else {
            self.rows.len()
        }
    }

    pub fn n_unknowns(&self) -> usize {
        self.n_unknowns
    }

    pub fn is_float_mode(&self) -> bool {
        self.float_mode
    }

    pub fn provenance(&self) -> &[Provenance] {
        &self.provenance
    }
}

/// Each residual is linear in the ansatz constants, so it is assembled per
/// unit basis vector: condition `cond` applied to the unit field of the
/// k-th unknown gives the k-th column of that condition's residual.
fn unit_residuals(
    spec: &SystemSpec,
    ansatz: &Ansatz,
    options: &CheckOptions,
) -> Result<Vec<(ConditionId, Vec<Expr>)>, CoreError> {
    let ctx = spec.ctx();
    let k_total = ansatz.total_unknowns();
    let map = build_reduction(spec, options.extended_reduction)?;
    let mut conditions: Vec<(ConditionId, Vec<Expr>)> = Vec::new();
    for alpha in 0..spec.n_x() {
        conditions.push((ConditionId::Domain(alpha), Vec::with_capacity(k_total)));
    }
    for (i, _) in spec.boundary(BoundarySide::Left).iter().enumerate() {
        conditions.push((ConditionId::BoundaryLeft(i), Vec::with_capacity(k_total)));
    }
    for (i, _) in spec.boundary(BoundarySide::Right).iter().enumerate() {
        conditions.push((ConditionId::BoundaryRight(i), Vec::with_capacity(k_total)));
    }
    conditions.push((ConditionId::Output, Vec::with_capacity(k_total)));
    for alpha in 0..spec.n_x() {
        conditions.push((
            ConditionId::T0UIndependence(alpha),
            Vec::with_capacity(k_total),
        ));
    }
    let mut at_z0 = BTreeMap::new();
    at_z0.insert(
        JetCoordinate::z(),
        Expr::Rational(spec.output_location().clone()),
    );
    let mut at_t0 = BTreeMap::new();
    at_t0.insert(JetCoordinate::t(), Expr::zero());
    let u = JetCoordinate::input(0, 0);
    for k in 0..k_total {
        let field = ansatz.unit_field(k, ctx);
        let second = prolong(&field, 2, ctx)?;
        let first = prolong(&field, 1, ctx)?;
        let mut slot = 0;
        for alpha in 0..spec.n_x() {
            let lhs = Expr::coord(JetCoordinate::dependent(alpha, 0, 1));
            let defect = expr::sub(lhs, spec.rhs(alpha).clone());
            let residual = reduce(&lie_derivative(&second, &defect), &map)?;
            conditions[slot].1.push(residual);
            slot += 1;
        }
        for (side, pivots) in [
            (BoundarySide::Left, options.left_pivots.as_deref()),
            (BoundarySide::Right, options.right_pivots.as_deref()),
        ] {
            for g in spec.boundary(side) {
                let residual =
                    boundary_reduce(&lie_derivative(&first, g), side, spec, pivots)?;
                conditions[slot].1.push(residual);
                slot += 1;
            }
        }
        let mut output_residual = lie_derivative(&first, spec.output());
        if options.reduce_output {
            output_residual = reduce(&output_residual, &map)?;
        }
        conditions[slot].1.push(substitute(&output_residual, &at_z0));
        slot += 1;
        for alpha in 0..spec.n_x() {
            let residual = substitute(&derive(field.v_x(alpha), &u), &at_t0);
            conditions[slot].1.push(residual);
            slot += 1;
        }
    }
    Ok(conditions)
}

/// Coordinate-free factors of a monomial key like sin(pi/2) or cos(pi) are
/// exact constants the canonical form keeps opaque. For collection they are
/// evaluated and, when they hit a small rational, folded into the term's
/// coefficient — so a vanishing factor such as sin(pi) removes the term
/// instead of spuriously constraining its unknown. Irrational constants
/// (pi itself in particular) stay in the key. Returns `None` when the whole
/// term vanishes.
fn fold_constant_factors(coeff: &mut Rat, key: Expr) -> Option<Expr> {
    let factors = match key {
        Expr::Product(factors) => factors,
        other => vec![other],
    };
    let empty = BTreeMap::new();
    let mut kept = Vec::new();
    for factor in factors {
        if !factor.coords().is_empty() {
            kept.push(factor);
            continue;
        }
        match eval(&factor, &empty).ok().and_then(|v| {
            snap_rational(v, MAX_SNAP_DENOMINATOR)
        }) {
            Some(r) if r.is_zero() => return None,
            Some(r) => *coeff = &*coeff * r,
            None => kept.push(factor),
        }
    }
    Some(expr::product(kept))
}

fn terms_of(e: &Expr) -> Vec<Expr> {
    match e {
        Expr::Sum(terms) => terms.clone(),
        other if other.is_literal_zero() => Vec::new(),
        other => vec![other.clone()],
    }
}

pub fn generate(
    spec: &SystemSpec,
    ansatz: &Ansatz,
    strategy: Strategy,
    options: &CheckOptions,
) -> Result<DeterminingSystem, CoreError> {
    let k_total = ansatz.total_unknowns();
    let conditions = unit_residuals(spec, ansatz, options)?;
    let mut system = DeterminingSystem {
        rows: Vec::new(),
        provenance: Vec::new(),
        n_unknowns: k_total,
        float_mode: false,
        float_rows: Vec::new(),
    };
    match strategy {
        Strategy::CoefficientCollection => {
            for (id, residuals) in &conditions {
                // Rows indexed by the monomial key: the canonical form of
                // each residual is a rational combination of products of
                // coordinate powers and transcendental atoms, and each
                // distinct product contributes one equation.
                let mut rows: BTreeMap<Expr, Vec<Rat>> = BTreeMap::new();
                for (k, residual) in residuals.iter().enumerate() {
                    for term in terms_of(residual) {
                        let (mut coeff, key) = split_term(&term);
                        let Some(key) = fold_constant_factors(&mut coeff, key) else {
                            continue;
                        };
                        let row =
                            rows.entry(key).or_insert_with(|| vec![Rat::zero(); k_total]);
                        row[k] = &row[k] + coeff;
                    }
                }
                for (key, row) in rows {
                    system.provenance.push(Provenance::Collected {
                        condition: id.clone(),
                        monomial: key.to_string(),
                    });
                    system.rows.push(row);
                }
            }
        }
        Strategy::Sampling => {
            let seed = options.seed.unwrap_or(DEFAULT_SEED);
            let mut sampler = Sampler::new(seed);
            let n_samples = SAMPLES_PER_UNKNOWN * k_total.max(1);
            for (id, residuals) in &conditions {
                let coords: Vec<JetCoordinate> = residuals
                    .iter()
                    .flat_map(|r| r.coords())
                    .collect::<std::collections::BTreeSet<_>>()
                    .into_iter()
                    .collect();
                for sample in 0..n_samples {
                    let assignment = sampler.assignment(coords.iter().copied());
                    let mut float_row = Vec::with_capacity(k_total);
                    let mut ok = true;
                    for residual in residuals {
                        match eval(residual, &assignment) {
                            Ok(v) => float_row.push(v),
                            Err(CoreError::Domain { .. }) => {
                                ok = false;
                                break;
                            }
                            Err(e) => return Err(e),
                        }
                    }
                    if !ok {
                        continue;
                    }
                    if float_row.iter().all(|v| v.abs() < 1e-14) {
                        continue;
                    }
                    let snapped: Option<Vec<Rat>> = float_row
                        .iter()
                        .map(|&v| snap_rational(v, MAX_SNAP_DENOMINATOR))
                        .collect();
                    system.provenance.push(Provenance::Sampled {
                        condition: id.clone(),
                        sample,
                    });
                    match snapped {
                        Some(row) if !system.float_mode => system.rows.push(row),
                        _ => system.float_mode = true,
                    }
                    system.float_rows.push(float_row);
                }
            }
            if system.float_mode {
                system.rows.clear();
            }
        }
    }
    Ok(system)
}

pub fn solve(system: &DeterminingSystem) -> Vec<Vec<Rat>> {
    if !system.float_mode {
        return rational_nullspace(&system.rows, system.n_unknowns)
            .into_iter()
            .map(|v| scale_to_integers(&v))
            .collect();
    }
    let float_basis = float_nullspace(&system.float_rows, system.n_unknowns, FLOAT_RANK_TOL);
    float_basis
        .iter()
        .map(|v| {
            // Normalize by the largest entry so genuine rational null
            // vectors snap exactly even after float elimination.
            let max = v.iter().fold(0.0f64, |m, x| m.max(x.abs())).max(1e-300);
            let snapped: Vec<Rat> = v
                .iter()
                .map(|&x| {
                    snap_rational(x / max, MAX_SNAP_DENOMINATOR)
                        .unwrap_or_else(|| Rat::from_float(x / max).unwrap_or_else(Rat::zero))
                })
                .collect();
            scale_to_integers(&snapped)
        })
        .collect()
}

/// Clear denominators and common factors so reported vectors are integral
/// and primitive, keeping the sign of the first nonzero entry.
pub fn scale_to_integers(v: &[Rat]) -> Vec<Rat> {
    let mut denominator_lcm = BigInt::one();
    for entry in v {
        denominator_lcm = num::integer::lcm(denominator_lcm, entry.denom().clone());
    }
    let scaled: Vec<BigInt> = v
        .iter()
        .map(|e| e.numer() * (&denominator_lcm / e.denom()))
        .collect();
    let mut gcd = BigInt::zero();
    for n in &scaled {
        gcd = num::integer::gcd(gcd, n.clone());
    }
    if gcd.is_zero() {
        return v.to_vec();
    }
    let sign = scaled
        .iter()
        .find(|n| !n.is_zero())
        .map(|n| if n.is_negative() { -BigInt::one() } else { BigInt::one() })
        .unwrap_or_else(BigInt::one);
    scaled
        .into_iter()
        .map(|n| Rat::from_integer(n / (&gcd * &sign)))
        .collect()
}

#[derive(Debug, Clone)]
pub struct Survivor {
    pub coefficients: Vec<Rat>,
    pub field: VerticalField,
    pub report: CheckReport,
}

/// Instantiate each null-space vector and keep those the full
/// non-observability check accepts; the zero field and anything vanishing
/// at t = 0 drop out here.
pub fn filter_solutions(
    basis: &[Vec<Rat>],
    spec: &SystemSpec,
    options: &CheckOptions,
    ansatz: &Ansatz,
) -> Result<Vec<Survivor>, CoreError> {
    let mut survivors = Vec::new();
    for vector in basis {
        let field = ansatz.instantiate(vector, spec.ctx());
        let report = check_nonobservability(spec, &field, options)?;
        if report.aggregate != crate::checker::Aggregate::Fail {
            survivors.push(Survivor {
                coefficients: vector.clone(),
                field,
                report,
            });
        }
    }
    Ok(survivors)
}

/// True when the field's coefficients match `reference`'s up to one common
/// nonzero rational factor. Used to recognise a known generator among the
/// survivors.
pub fn matches_up_to_scale(field: &VerticalField, reference: &VerticalField) -> bool {
    let mut ratio: Option<Rat> = None;
    for alpha in 0..field.n_x() {
        let ours = field.v_x(alpha);
        let theirs = reference.v_x(alpha);
        match (ours.is_literal_zero(), theirs.is_literal_zero()) {
            (true, true) => continue,
            (true, false) | (false, true) => return false,
            (false, false) => {}
        }
        // Compare term by term: same monomial keys, proportional weights.
        let ours_terms: BTreeMap<Expr, Rat> =
            terms_of(ours).iter().map(split_term).map(|(c, k)| (k, c)).collect();
        let theirs_terms: BTreeMap<Expr, Rat> =
            terms_of(theirs).iter().map(split_term).map(|(c, k)| (k, c)).collect();
        if ours_terms.len() != theirs_terms.len() {
            return false;
        }
        for (key, c_ours) in &ours_terms {
            let Some(c_theirs) = theirs_terms.get(key) else {
                return false;
            };
            if c_theirs.is_zero() {
                return false;
            }
            let this_ratio = c_ours / c_theirs;
            match &ratio {
                None => ratio = Some(this_ratio),
                Some(r) if *r == this_ratio => {}
                Some(_) => return false,
            }
        }
    }
    matches!(ratio, Some(r) if !r.is_zero())
}
