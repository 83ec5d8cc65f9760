//! Total derivatives, prolongation of vertical fields, Lie derivatives, and
//! the numeric flow of a generator at t = 0.

use std::collections::BTreeMap;

use crate::coord::{CoordRole, Independent, JetContext, JetCoordinate};
use crate::error::CoreError;
use crate::expr::{self, canonicalize, derive, substitute, Expr};

/// Total derivative d_z or d_t on the jet manifold: the partial derivative
/// plus, for every dependent/input coordinate occurring in the expression,
/// the next-order coordinate times the partial with respect to it.
pub fn total_derivative(
    e: &Expr,
    wrt: Independent,
    ctx: &JetContext,
) -> Result<Expr, CoreError> {
    let mut terms = vec![derive(e, &wrt.coordinate())];
    for c in e.coords() {
        if c.is_independent() {
            continue;
        }
        let shifted = c.shifted(wrt);
        if shifted.order() > ctx.max_order() {
            return Err(CoreError::OrderOverflow {
                coordinate: shifted.to_string(),
                max_order: ctx.max_order(),
            });
        }
        terms.push(expr::mul(Expr::Coord(shifted), derive(e, &c)));
    }
    Ok(expr::sum(terms))
}

/// Candidate infinitesimal generator v = v_x^alpha d/dx^alpha + v_u d/du.
/// Coefficients may only mention z, t, the dependent variables, and u; no
/// derivative coordinate of order >= 1 is allowed.
#[derive(Debug, Clone, PartialEq)]
pub struct VerticalField {
    v_x: Vec<Expr>,
    v_u: Expr,
}

impl VerticalField {
    pub fn new(v_x: Vec<Expr>, v_u: Expr, ctx: &JetContext) -> Result<Self, CoreError> {
        assert_eq!(v_x.len(), ctx.n_x(), "one coefficient per dependent variable");
        let check = |e: &Expr, place: String| -> Result<(), CoreError> {
            for c in e.coords() {
                if !c.is_independent() && c.order() > 0 {
                    return Err(CoreError::DerivativeInGenerator {
                        coordinate: c.to_string(),
                        place,
                    });
                }
            }
            Ok(())
        };
        for (alpha, e) in v_x.iter().enumerate() {
            check(e, format!("v_x{}", alpha + 1))?;
        }
        check(&v_u, "v_u".to_string())?;
        Ok(VerticalField {
            v_x: v_x.iter().map(canonicalize).collect(),
            v_u: canonicalize(&v_u),
        })
    }

    /// The generator d/dx^alpha (all other coefficients zero).
    pub fn unit(alpha: usize, ctx: &JetContext) -> Self {
        let v_x = (0..ctx.n_x())
            .map(|i| if i == alpha { Expr::one() } else { Expr::zero() })
            .collect();
        VerticalField::new(v_x, Expr::zero(), ctx).expect("unit field is valid")
    }

    pub fn v_x(&self, alpha: usize) -> &Expr {
        &self.v_x[alpha]
    }

    pub fn coefficients(&self) -> &[Expr] {
        &self.v_x
    }

    pub fn v_u(&self) -> &Expr {
        &self.v_u
    }

    pub fn has_zero_input_component(&self) -> bool {
        self.v_u.is_literal_zero()
    }

    pub fn n_x(&self) -> usize {
        self.v_x.len()
    }

    /// All coefficients scaled by an exact rational.
    pub fn scaled(&self, factor: expr::Rat) -> Self {
        VerticalField {
            v_x: self
                .v_x
                .iter()
                .map(|e| expr::scale(factor.clone(), e.clone()))
                .collect(),
            v_u: expr::scale(factor, self.v_u.clone()),
        }
    }
}

/// Prolonged field: the d/d(coordinate) coefficient on every jet coordinate
/// up to the prolongation order. Vertical, so there are no z/t entries.
#[derive(Debug, Clone, PartialEq)]
pub struct ProlongedField {
    coefficients: BTreeMap<JetCoordinate, Expr>,
    order: u8,
}

impl ProlongedField {
    pub fn coefficient(&self, c: &JetCoordinate) -> Option<&Expr> {
        self.coefficients.get(c)
    }

    pub fn coefficients(&self) -> &BTreeMap<JetCoordinate, Expr> {
        &self.coefficients
    }

    pub fn order(&self) -> u8 {
        self.order
    }
}

/// Prolong a vertical field to order 1 or 2. The coefficient on a derivative
/// coordinate with multi-index J is the J-fold total derivative of the base
/// coefficient, with d_zt meaning d_t after d_z.
pub fn prolong(
    field: &VerticalField,
    order: u8,
    ctx: &JetContext,
) -> Result<ProlongedField, CoreError> {
    assert!(order == 1 || order == 2, "prolongation order must be 1 or 2");
    let mut coefficients = BTreeMap::new();
    let mut insert_family = |base: &Expr, mk: &dyn Fn(u8, u8) -> JetCoordinate| -> Result<(), CoreError> {
        let dz = total_derivative(base, Independent::Z, ctx)?;
        let dt = total_derivative(base, Independent::T, ctx)?;
        coefficients.insert(mk(0, 0), base.clone());
        coefficients.insert(mk(1, 0), dz.clone());
        coefficients.insert(mk(0, 1), dt.clone());
        if order == 2 {
            coefficients.insert(mk(2, 0), total_derivative(&dz, Independent::Z, ctx)?);
            coefficients.insert(mk(1, 1), total_derivative(&dz, Independent::T, ctx)?);
            coefficients.insert(mk(0, 2), total_derivative(&dt, Independent::T, ctx)?);
        }
        Ok(())
    };
    for alpha in 0..field.n_x() {
        insert_family(field.v_x(alpha), &move |dz, dt| {
            JetCoordinate::dependent(alpha, dz, dt)
        })?;
    }
    insert_family(field.v_u(), &JetCoordinate::input)?;
    Ok(ProlongedField {
        coefficients,
        order,
    })
}

/// L_p(e) = sum over jet coordinates of p(coordinate) * d e / d coordinate.
pub fn lie_derivative(p: &ProlongedField, e: &Expr) -> Expr {
    let mut terms = Vec::new();
    for (c, coeff) in p.coefficients() {
        if coeff.is_literal_zero() {
            continue;
        }
        terms.push(expr::mul(coeff.clone(), derive(e, c)));
    }
    expr::sum(terms)
}

/// Classic 4-stage Runge-Kutta flow of the generator restricted to t = 0:
/// integrates d xi^alpha / d eps = v_x^alpha(z, 0, xi) from 0 to eps.
///
/// The caller must have verified that the coefficients are independent of u
/// at t = 0; a residual u-dependence is an error.
pub fn flow_at_t0(
    field: &VerticalField,
    z: f64,
    state: &[f64],
    eps: f64,
    steps: usize,
) -> Result<Vec<f64>, CoreError> {
    assert!(steps >= 1);
    assert_eq!(state.len(), field.n_x());
    let n = field.n_x();
    // Freeze t = 0 once.
    let mut t0 = BTreeMap::new();
    t0.insert(JetCoordinate::t(), Expr::zero());
    let mut frozen = Vec::with_capacity(n);
    for alpha in 0..n {
        let e = substitute(field.v_x(alpha), &t0);
        if e.contains(&JetCoordinate::input(0, 0)) {
            return Err(CoreError::FlowDependsOnInput {
                place: format!("v_x{}", alpha + 1),
            });
        }
        frozen.push(e);
    }
    let rhs = |xi: &[f64]| -> Result<Vec<f64>, CoreError> {
        let mut assignment = BTreeMap::new();
        assignment.insert(JetCoordinate::z(), z);
        for (alpha, v) in xi.iter().enumerate() {
            assignment.insert(
                JetCoordinate {
                    role: CoordRole::Dependent(alpha),
                    dz: 0,
                    dt: 0,
                },
                *v,
            );
        }
        frozen
            .iter()
            .map(|e| crate::expr::eval(e, &assignment))
            .collect()
    };
    let h = eps / steps as f64;
    let mut xi = state.to_vec();
    for _ in 0..steps {
        let k1 = rhs(&xi)?;
        let mid1: Vec<f64> = xi.iter().zip(&k1).map(|(x, k)| x + 0.5 * h * k).collect();
        let k2 = rhs(&mid1)?;
        let mid2: Vec<f64> = xi.iter().zip(&k2).map(|(x, k)| x + 0.5 * h * k).collect();
        let k3 = rhs(&mid2)?;
        let end: Vec<f64> = xi.iter().zip(&k3).map(|(x, k)| x + h * k).collect();
        let k4 = rhs(&end)?;
        for i in 0..n {
            xi[i] += h / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
        }
    }
    Ok(xi)
}
