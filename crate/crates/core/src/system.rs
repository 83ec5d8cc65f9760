//! The PDE system class, its submanifold reduction, and boundary reduction.
//!
//! A system is n_x evolution equations x_t^alpha = f^alpha(z, t, x, x_z,
//! x_zz, u) on (0,1), boundary functions g^lambda(t, x, x_z) at z = 0 and
//! h^mu(t, x, x_z) at z = 1, and a point output c(t, x, x_z) at z_0.

use std::collections::BTreeMap;

use num::traits::Signed;

use crate::coord::{CoordRole, Independent, JetContext, JetCoordinate};
use crate::error::CoreError;
use crate::expr::{canonicalize, derive, eval, rat_to_f64, substitute, Expr, Rat};
use crate::jet::total_derivative;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BoundarySide {
    Left,
    Right,
}

impl BoundarySide {
    pub fn z_value(&self) -> Expr {
        match self {
            BoundarySide::Left => Expr::zero(),
            BoundarySide::Right => Expr::one(),
        }
    }
}

#[derive(Debug, Clone)]
pub struct SystemSpec {
    ctx: JetContext,
    rhs: Vec<Expr>,
    left: Vec<Expr>,
    right: Vec<Expr>,
    output: Expr,
    output_location: Rat,
}

impl SystemSpec {
    pub fn new(
        ctx: JetContext,
        rhs: Vec<Expr>,
        left: Vec<Expr>,
        right: Vec<Expr>,
        output: Expr,
        output_location: Rat,
    ) -> Result<Self, CoreError> {
        if rhs.len() != ctx.n_x() {
            return Err(CoreError::InvalidSystem(format!(
                "expected {} right-hand sides, got {}",
                ctx.n_x(),
                rhs.len()
            )));
        }
        if output_location.is_negative() || output_location > Rat::from_integer(1.into()) {
            return Err(CoreError::InvalidSystem(format!(
                "output location {} outside [0, 1]",
                rat_to_f64(&output_location)
            )));
        }
        let rhs_ok = |c: &JetCoordinate| match c.role {
            CoordRole::Z | CoordRole::T => true,
            CoordRole::Dependent(_) => c.dt == 0 && c.dz <= 2,
            CoordRole::Input => c.dz == 0 && c.dt == 0,
        };
        let boundary_ok = |c: &JetCoordinate| match c.role {
            CoordRole::T => true,
            CoordRole::Dependent(_) => c.dt == 0 && c.dz <= 1,
            _ => false,
        };
        let check = |e: &Expr, ok: &dyn Fn(&JetCoordinate) -> bool, place: String| {
            for c in e.coords() {
                if !ok(&c) {
                    return Err(CoreError::DisallowedCoordinate {
                        coordinate: c.to_string(),
                        place,
                    });
                }
            }
            Ok(())
        };
        for (alpha, f) in rhs.iter().enumerate() {
            check(f, &rhs_ok, format!("f{}", alpha + 1))?;
        }
        for (i, g) in left.iter().enumerate() {
            check(g, &boundary_ok, format!("g{}", i + 1))?;
        }
        for (i, h) in right.iter().enumerate() {
            check(h, &boundary_ok, format!("h{}", i + 1))?;
        }
        check(&output, &boundary_ok, "output".to_string())?;
        Ok(SystemSpec {
            ctx,
            rhs: rhs.iter().map(canonicalize).collect(),
            left: left.iter().map(canonicalize).collect(),
            right: right.iter().map(canonicalize).collect(),
            output: canonicalize(&output),
            output_location,
        })
    }

    pub fn ctx(&self) -> &JetContext {
        &self.ctx
    }

    pub fn n_x(&self) -> usize {
        self.ctx.n_x()
    }

    pub fn rhs(&self, alpha: usize) -> &Expr {
        &self.rhs[alpha]
    }

    pub fn boundary(&self, side: BoundarySide) -> &[Expr] {
        match side {
            BoundarySide::Left => &self.left,
            BoundarySide::Right => &self.right,
        }
    }

    pub fn output(&self) -> &Expr {
        &self.output
    }

    pub fn output_location(&self) -> &Rat {
        &self.output_location
    }

    pub fn output_location_f64(&self) -> f64 {
        rat_to_f64(&self.output_location)
    }
}

/// Ordered substitution list defining the submanifold reduction. The base
/// form carries the defining equations x_t^alpha = f^alpha, u_z = u_zz =
/// u_zt = 0; the extended form adds the differential consequences for
/// x_zt^alpha and x_tt^alpha, fully reduced.
#[derive(Debug, Clone)]
pub struct ReductionMap {
    entries: BTreeMap<JetCoordinate, Expr>,
    extended: bool,
}

const MAX_REDUCTION_PASSES: usize = 8;

impl ReductionMap {
    pub fn entries(&self) -> &BTreeMap<JetCoordinate, Expr> {
        &self.entries
    }

    pub fn is_extended(&self) -> bool {
        self.extended
    }
}

pub fn build_reduction(spec: &SystemSpec, extended: bool) -> Result<ReductionMap, CoreError> {
    let mut entries: BTreeMap<JetCoordinate, Expr> = BTreeMap::new();
    for alpha in 0..spec.n_x() {
        entries.insert(JetCoordinate::dependent(alpha, 0, 1), spec.rhs(alpha).clone());
    }
    entries.insert(JetCoordinate::input(1, 0), Expr::zero());
    entries.insert(JetCoordinate::input(2, 0), Expr::zero());
    entries.insert(JetCoordinate::input(1, 1), Expr::zero());
    let mut map = ReductionMap { entries, extended };
    if extended {
        let ctx = spec.ctx();
        for alpha in 0..spec.n_x() {
            let dzf = total_derivative(spec.rhs(alpha), Independent::Z, ctx)?;
            let dtf = total_derivative(spec.rhs(alpha), Independent::T, ctx)?;
            map.entries
                .insert(JetCoordinate::dependent(alpha, 1, 1), dzf);
            map.entries
                .insert(JetCoordinate::dependent(alpha, 0, 2), dtf);
        }
        // Reduce every right-hand side through the full map to fixed point.
        for _ in 0..MAX_REDUCTION_PASSES {
            let keys: Vec<JetCoordinate> = map.entries.keys().copied().collect();
            let mut changed = false;
            for k in &keys {
                let current = map.entries[k].clone();
                let next = substitute_once(&current, &map.entries);
                if next != current {
                    map.entries.insert(*k, next);
                    changed = true;
                }
            }
            if !changed {
                break;
            }
        }
        // Fixed-point property: no right-hand side mentions a substituted key.
        for (k, rhs) in &map.entries {
            for c in rhs.coords() {
                if map.entries.contains_key(&c) {
                    return Err(CoreError::NoFixedPoint(MAX_REDUCTION_PASSES));
                }
            }
            let _ = k;
        }
    }
    Ok(map)
}

fn substitute_once(e: &Expr, entries: &BTreeMap<JetCoordinate, Expr>) -> Expr {
    let needed: BTreeMap<JetCoordinate, Expr> = e
        .coords()
        .into_iter()
        .filter_map(|c| entries.get(&c).map(|r| (c, r.clone())))
        .collect();
    if needed.is_empty() {
        e.clone()
    } else {
        substitute(e, &needed)
    }
}

/// Substitute the defining equations until no substituted coordinate
/// remains; bounded by the coordinate grading, with a non-termination guard.
pub fn reduce(e: &Expr, map: &ReductionMap) -> Result<Expr, CoreError> {
    let mut current = canonicalize(e);
    for _ in 0..MAX_REDUCTION_PASSES {
        let next = substitute_once(&current, &map.entries);
        if next == current {
            return Ok(current);
        }
        current = next;
    }
    // One final check: the pass limit may be hit exactly at the fixed point.
    if substitute_once(&current, &map.entries) == current {
        Ok(current)
    } else {
        Err(CoreError::NoFixedPoint(MAX_REDUCTION_PASSES))
    }
}

/// Restrict an expression to a boundary: substitutes z := 0 (or 1), and, if
/// pivots are declared, solves each boundary equation for its pivot (affine
/// only) and substitutes the solution.
pub fn boundary_reduce(
    e: &Expr,
    side: BoundarySide,
    spec: &SystemSpec,
    pivots: Option<&[JetCoordinate]>,
) -> Result<Expr, CoreError> {
    let mut bindings = BTreeMap::new();
    bindings.insert(JetCoordinate::z(), side.z_value());
    let mut result = substitute(e, &bindings);
    let Some(pivots) = pivots else {
        return Ok(result);
    };
    let conditions = spec.boundary(side);
    if pivots.len() != conditions.len() {
        return Err(CoreError::PivotArity {
            pivots: pivots.len(),
            conditions: conditions.len(),
        });
    }
    let mut solved: BTreeMap<JetCoordinate, Expr> = BTreeMap::new();
    for (g, pivot) in conditions.iter().zip(pivots) {
        // Earlier pivot solutions feed into later boundary equations.
        let g = substitute(g, &solved);
        let coefficient = derive(&g, pivot);
        if !derive(&coefficient, pivot).is_literal_zero() {
            return Err(CoreError::NotAffine {
                function: g.to_string(),
                pivot: pivot.to_string(),
            });
        }
        if coefficient.is_literal_zero() {
            return Err(CoreError::PivotCoefficientZero {
                function: g.to_string(),
                pivot: pivot.to_string(),
            });
        }
        let mut zero_pivot = BTreeMap::new();
        zero_pivot.insert(*pivot, Expr::zero());
        let offset = substitute(&g, &zero_pivot);
        // g = offset + coefficient * pivot = 0  =>  pivot = -offset/coefficient
        let solution = crate::expr::div(crate::expr::neg(offset), coefficient);
        solved.insert(*pivot, solution);
    }
    result = substitute(&result, &solved);
    Ok(result)
}

/// Construct a random jet point satisfying the base defining equations:
/// free coordinates are drawn from the sampler, then x_t^alpha := f^alpha
/// and u_z = u_zz = u_zt := 0. Used by consistency tests and the soundness
/// re-check of proven verdicts.
pub fn on_shell_point(
    spec: &SystemSpec,
    map: &ReductionMap,
    sampler: &mut crate::sample::Sampler,
) -> Result<BTreeMap<JetCoordinate, f64>, CoreError> {
    let ctx = spec.ctx();
    let mut assignment = BTreeMap::new();
    for c in ctx.coordinates() {
        if map.entries.contains_key(&c) {
            continue;
        }
        assignment.insert(c, sampler.draw());
    }
    // Substituted coordinates ordered by total order so consequences see
    // their prerequisites: base x_t depends only on free coordinates, the
    // extended right-hand sides are already fully reduced.
    for (c, rhs) in &map.entries {
        let v = eval(rhs, &assignment)?;
        assignment.insert(*c, v);
    }
    Ok(assignment)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::parse::parse;
    use crate::sample::Sampler;
    use num::traits::Zero;

    pub(crate) fn nonlinear_wave() -> SystemSpec {
        let ctx = JetContext::new(2);
        SystemSpec::new(
            ctx.clone(),
            vec![
                parse("x2", &ctx).unwrap(),
                parse("x1_zz - x2^3 + u", &ctx).unwrap(),
            ],
            vec![parse("x1_z", &ctx).unwrap()],
            vec![parse("x1_z", &ctx).unwrap()],
            parse("x2", &ctx).unwrap(),
            Rat::zero(),
        )
        .unwrap()
    }

    #[test]
    fn base_reduction_of_nonlinear_wave() {
        let spec = nonlinear_wave();
        let map = build_reduction(&spec, false).unwrap();
        let ctx = spec.ctx();
        assert_eq!(map.entries().len(), 5);
        assert_eq!(
            map.entries()[&ctx.lookup("x1_t").unwrap()],
            parse("x2", ctx).unwrap()
        );
        assert_eq!(map.entries()[&ctx.lookup("u_z").unwrap()], Expr::zero());
    }

    #[test]
    fn extended_reduction_consequences() {
        let spec = nonlinear_wave();
        let map = build_reduction(&spec, true).unwrap();
        let ctx = spec.ctx();
        assert_eq!(
            map.entries()[&ctx.lookup("x1_zt").unwrap()],
            parse("x2_z", ctx).unwrap()
        );
        assert_eq!(
            map.entries()[&ctx.lookup("x1_tt").unwrap()],
            parse("x1_zz - x2^3 + u", ctx).unwrap()
        );
        assert_eq!(
            map.entries()[&ctx.lookup("x2_zt").unwrap()],
            parse("x1_zzz - 3*x2^2*x2_z", ctx).unwrap()
        );
        // x2_tt's consequence must be fully reduced: no x_t coordinates left.
        let x2tt = &map.entries()[&ctx.lookup("x2_tt").unwrap()];
        for c in x2tt.coords() {
            assert!(!map.entries().contains_key(&c), "unreduced {c} in x2_tt");
        }
    }

    #[test]
    fn heat_equation_base_map() {
        let ctx = JetContext::new(1);
        let spec = SystemSpec::new(
            ctx.clone(),
            vec![parse("x1_zz", &ctx).unwrap()],
            vec![parse("x1", &ctx).unwrap()],
            vec![parse("x1", &ctx).unwrap()],
            parse("x1", &ctx).unwrap(),
            Rat::new(1.into(), 2.into()),
        )
        .unwrap();
        let map = build_reduction(&spec, false).unwrap();
        assert_eq!(map.entries().len(), 4);
        assert_eq!(
            map.entries()[&ctx.lookup("x1_t").unwrap()],
            parse("x1_zz", &ctx).unwrap()
        );
    }

    #[test]
    fn reduce_defining_relation() {
        let spec = nonlinear_wave();
        let map = build_reduction(&spec, false).unwrap();
        let r = reduce(&parse("x1_t - x2", spec.ctx()).unwrap(), &map).unwrap();
        assert!(r.is_literal_zero());
    }

    #[test]
    fn reduce_leaves_free_coordinates() {
        let spec = nonlinear_wave();
        let map = build_reduction(&spec, false).unwrap();
        let ut = parse("u_t", spec.ctx()).unwrap();
        assert_eq!(reduce(&ut, &map).unwrap(), ut);
    }

    #[test]
    fn reduce_is_idempotent() {
        let spec = nonlinear_wave();
        let map = build_reduction(&spec, true).unwrap();
        let e = parse("x2_tt*x1_t + x1_zt^2 - u_z*x1", spec.ctx()).unwrap();
        let once = reduce(&e, &map).unwrap();
        assert_eq!(reduce(&once, &map).unwrap(), once);
    }

    #[test]
    fn allowlist_violations_rejected() {
        let ctx = JetContext::new(1);
        // f may not mention x_t.
        assert!(SystemSpec::new(
            ctx.clone(),
            vec![parse("x1_t", &ctx).unwrap()],
            vec![],
            vec![],
            parse("x1", &ctx).unwrap(),
            Rat::zero(),
        )
        .is_err());
        // boundary functions may not mention u or z.
        assert!(SystemSpec::new(
            ctx.clone(),
            vec![parse("x1_zz", &ctx).unwrap()],
            vec![parse("x1 + u", &ctx).unwrap()],
            vec![],
            parse("x1", &ctx).unwrap(),
            Rat::zero(),
        )
        .is_err());
    }

    #[test]
    fn boundary_reduce_substitutes_z() {
        let spec = nonlinear_wave();
        let e = parse("sin(2*pi*z)*x1", spec.ctx()).unwrap();
        let r = boundary_reduce(&e, BoundarySide::Left, &spec, None).unwrap();
        assert!(r.is_literal_zero());
    }

    #[test]
    fn dirichlet_pivot() {
        let ctx = JetContext::new(1);
        let spec = SystemSpec::new(
            ctx.clone(),
            vec![parse("x1_zz", &ctx).unwrap()],
            vec![parse("x1", &ctx).unwrap()],
            vec![],
            parse("x1", &ctx).unwrap(),
            Rat::zero(),
        )
        .unwrap();
        let e = parse("x1 + x1_z", &ctx).unwrap();
        let pivot = [ctx.lookup("x1").unwrap()];
        let r = boundary_reduce(&e, BoundarySide::Left, &spec, Some(&pivot)).unwrap();
        assert_eq!(r, parse("x1_z", &ctx).unwrap());
    }

    #[test]
    fn non_affine_pivot_rejected() {
        let ctx = JetContext::new(1);
        let spec = SystemSpec::new(
            ctx.clone(),
            vec![parse("x1_zz", &ctx).unwrap()],
            vec![parse("x1^2 - 1", &ctx).unwrap()],
            vec![],
            parse("x1", &ctx).unwrap(),
            Rat::zero(),
        )
        .unwrap();
        let pivot = [ctx.lookup("x1").unwrap()];
        assert!(matches!(
            boundary_reduce(
                &parse("x1", &ctx).unwrap(),
                BoundarySide::Left,
                &spec,
                Some(&pivot)
            ),
            Err(CoreError::NotAffine { .. })
        ));
    }

    #[test]
    fn on_shell_points_satisfy_defining_equations() {
        let spec = nonlinear_wave();
        let map = build_reduction(&spec, false).unwrap();
        let mut sampler = Sampler::default();
        for _ in 0..20 {
            let point = on_shell_point(&spec, &map, &mut sampler).unwrap();
            let lhs = point[&spec.ctx().lookup("x2_t").unwrap()];
            let rhs = eval(spec.rhs(1), &point).unwrap();
            assert!((lhs - rhs).abs() < 1e-12);
        }
    }

    #[test]
    fn reduction_preserves_on_shell_values() {
        let spec = nonlinear_wave();
        let map = build_reduction(&spec, false).unwrap();
        let e = parse("x1_t*x2_t - u_z + x2^2", spec.ctx()).unwrap();
        let r = reduce(&e, &map).unwrap();
        let mut sampler = Sampler::default();
        for _ in 0..20 {
            let point = on_shell_point(&spec, &map, &mut sampler).unwrap();
            let a = eval(&e, &point).unwrap();
            let b = eval(&r, &point).unwrap();
            assert!((a - b).abs() < 1e-9, "{a} vs {b}");
        }
    }
}
