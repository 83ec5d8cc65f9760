//! Immutable symbolic expression trees over jet coordinates.
//!
//! The canonical form is a recursively flattened and sorted sum of products
//! with exact rational coefficients. Transcendental subterms (`sin`, `cos`,
//! `exp`, `ln` applications) are opaque atoms for collection; there is no
//! trigonometric identity rewriting. Division is a product with a power of
//! exponent -1, subtraction a sum with a coefficient -1 product.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use num::bigint::BigInt;
use num::rational::BigRational;
use num::traits::{One, Signed, ToPrimitive, Zero};
use num::Integer;

use crate::coord::JetCoordinate;
use crate::error::CoreError;

pub type Rat = BigRational;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum UnaryFn {
    Sin,
    Cos,
    Exp,
    Ln,
}

impl UnaryFn {
    pub fn name(&self) -> &'static str {
        match self {
            UnaryFn::Sin => "sin",
            UnaryFn::Cos => "cos",
            UnaryFn::Exp => "exp",
            UnaryFn::Ln => "ln",
        }
    }
}

/// Symbolic expression. The derived `Ord` is the fixed total order used to
/// sort children of sums and products in canonical form.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Expr {
    /// Exact rational constant, always in lowest terms with positive
    /// denominator (maintained by `BigRational`).
    Rational(Rat),
    /// The named constant pi.
    Pi,
    Coord(JetCoordinate),
    /// At least two ordered children, none of which is itself a sum.
    Sum(Vec<Expr>),
    /// At least two ordered children, none a product; a single rational
    /// coefficient, if present, is the first child.
    Product(Vec<Expr>),
    /// Base raised to an exact rational exponent, never 0 or 1.
    Pow(Box<Expr>, Rat),
    Func(UnaryFn, Box<Expr>),
}

impl Expr {
    pub fn int(n: i64) -> Expr {
        Expr::Rational(Rat::from_integer(BigInt::from(n)))
    }

    pub fn rational(num: i64, den: i64) -> Expr {
        Expr::Rational(Rat::new(BigInt::from(num), BigInt::from(den)))
    }

    pub fn zero() -> Expr {
        Expr::int(0)
    }

    pub fn one() -> Expr {
        Expr::int(1)
    }

    pub fn coord(c: JetCoordinate) -> Expr {
        Expr::Coord(c)
    }

    pub fn is_literal_zero(&self) -> bool {
        matches!(self, Expr::Rational(r) if r.is_zero())
    }

    pub fn is_literal_one(&self) -> bool {
        matches!(self, Expr::Rational(r) if r.is_one())
    }

    pub fn as_rational(&self) -> Option<&Rat> {
        match self {
            Expr::Rational(r) => Some(r),
            _ => None,
        }
    }

    /// All jet coordinates occurring in the expression.
    pub fn coords(&self) -> BTreeSet<JetCoordinate> {
        let mut set = BTreeSet::new();
        self.collect_coords(&mut set);
        set
    }

    fn collect_coords(&self, set: &mut BTreeSet<JetCoordinate>) {
        match self {
            Expr::Rational(_) | Expr::Pi => {}
            Expr::Coord(c) => {
                set.insert(*c);
            }
            Expr::Sum(ch) | Expr::Product(ch) => {
                for c in ch {
                    c.collect_coords(set);
                }
            }
            Expr::Pow(b, _) => b.collect_coords(set),
            Expr::Func(_, a) => a.collect_coords(set),
        }
    }

    pub fn contains(&self, coord: &JetCoordinate) -> bool {
        match self {
            Expr::Rational(_) | Expr::Pi => false,
            Expr::Coord(c) => c == coord,
            Expr::Sum(ch) | Expr::Product(ch) => ch.iter().any(|c| c.contains(coord)),
            Expr::Pow(b, _) => b.contains(coord),
            Expr::Func(_, a) => a.contains(coord),
        }
    }

    pub fn depth(&self) -> usize {
        match self {
            Expr::Rational(_) | Expr::Pi | Expr::Coord(_) => 1,
            Expr::Sum(ch) | Expr::Product(ch) => {
                1 + ch.iter().map(Expr::depth).max().unwrap_or(0)
            }
            Expr::Pow(b, _) => 1 + b.depth(),
            Expr::Func(_, a) => 1 + a.depth(),
        }
    }
}

// ---------------------------------------------------------------------------
// Smart constructors (always return canonical trees)
// ---------------------------------------------------------------------------

pub fn add(a: Expr, b: Expr) -> Expr {
    canonicalize(&Expr::Sum(vec![a, b]))
}

pub fn sum(terms: Vec<Expr>) -> Expr {
    canonicalize(&Expr::Sum(terms))
}

pub fn sub(a: Expr, b: Expr) -> Expr {
    add(a, neg(b))
}

pub fn neg(a: Expr) -> Expr {
    canonicalize(&Expr::Product(vec![Expr::int(-1), a]))
}

pub fn mul(a: Expr, b: Expr) -> Expr {
    canonicalize(&Expr::Product(vec![a, b]))
}

pub fn product(factors: Vec<Expr>) -> Expr {
    canonicalize(&Expr::Product(factors))
}

pub fn div(a: Expr, b: Expr) -> Expr {
    canonicalize(&Expr::Product(vec![
        a,
        Expr::Pow(Box::new(b), -Rat::one()),
    ]))
}

pub fn pow_int(a: Expr, n: i64) -> Expr {
    canonicalize(&Expr::Pow(
        Box::new(a),
        Rat::from_integer(BigInt::from(n)),
    ))
}

pub fn func(f: UnaryFn, a: Expr) -> Expr {
    canonicalize(&Expr::Func(f, Box::new(a)))
}

/// Scale by an exact rational.
pub fn scale(r: Rat, a: Expr) -> Expr {
    canonicalize(&Expr::Product(vec![Expr::Rational(r), a]))
}

// ---------------------------------------------------------------------------
// Canonicalization
// ---------------------------------------------------------------------------

/// Largest positive integer exponent at which a power of a sum is expanded.
const MAX_SUM_EXPANSION: i64 = 8;

pub fn canonicalize(e: &Expr) -> Expr {
    match e {
        Expr::Rational(_) | Expr::Pi | Expr::Coord(_) => e.clone(),
        Expr::Func(f, a) => canon_func(*f, canonicalize(a)),
        Expr::Pow(b, q) => canon_pow(canonicalize(b), q.clone()),
        Expr::Product(children) => {
            canon_product(children.iter().map(canonicalize).collect())
        }
        Expr::Sum(children) => canon_sum(children.iter().map(canonicalize).collect()),
    }
}

fn canon_func(f: UnaryFn, a: Expr) -> Expr {
    // Only fold the cheapest exact values; sin(pi) etc. stay symbolic, but
    // whole periods of sin/cos disappear so restrictions like z := 1 of
    // sin(2*pi*z) are structurally zero.
    if let Expr::Rational(r) = &a {
        if r.is_zero() {
            return match f {
                UnaryFn::Sin => Expr::zero(),
                UnaryFn::Cos | UnaryFn::Exp => Expr::one(),
                UnaryFn::Ln => Expr::Func(f, Box::new(a)),
            };
        }
        if r.is_one() && f == UnaryFn::Ln {
            return Expr::zero();
        }
    }
    if matches!(f, UnaryFn::Sin | UnaryFn::Cos) {
        if let Some(q) = pi_multiple(&a) {
            if q.is_integer() && q.to_integer().is_even() {
                return match f {
                    UnaryFn::Sin => Expr::zero(),
                    _ => Expr::one(),
                };
            }
        }
    }
    Expr::Func(f, Box::new(a))
}

/// If `e` is canonically q*pi for rational q, return q.
fn pi_multiple(e: &Expr) -> Option<Rat> {
    match e {
        Expr::Pi => Some(Rat::one()),
        Expr::Product(factors) => match factors.as_slice() {
            [Expr::Rational(q), Expr::Pi] => Some(q.clone()),
            _ => None,
        },
        _ => None,
    }
}

fn canon_pow(base: Expr, exp: Rat) -> Expr {
    if exp.is_zero() {
        return Expr::one();
    }
    if exp.is_one() {
        return base;
    }
    if let Expr::Rational(r) = &base {
        if exp.is_integer() {
            if r.is_zero() {
                if exp.is_positive() {
                    return Expr::zero();
                }
                // 0^negative: keep; surfaces as a domain error at evaluation.
                return Expr::Pow(Box::new(base), exp);
            }
            if let Some(n) = exp.to_integer().to_i32() {
                return Expr::Rational(num::pow::Pow::pow(r, n));
            }
        }
        return Expr::Pow(Box::new(base), exp);
    }
    if exp.is_integer() {
        match &base {
            // (b^a)^n = b^(a n) is exact for integer n.
            Expr::Pow(inner, q2) => return canon_pow((**inner).clone(), q2.clone() * exp),
            Expr::Product(children) => {
                return canon_product(
                    children
                        .iter()
                        .map(|c| canon_pow(c.clone(), exp.clone()))
                        .collect(),
                );
            }
            Expr::Sum(_) => {
                if let Some(n) = exp.to_integer().to_i64() {
                    if (2..=MAX_SUM_EXPANSION).contains(&n) {
                        return canon_product(vec![base; n as usize]);
                    }
                }
            }
            _ => {}
        }
    }
    Expr::Pow(Box::new(base), exp)
}

/// Children must already be canonical.
fn canon_product(children: Vec<Expr>) -> Expr {
    // Flatten nested products.
    let mut flat = Vec::with_capacity(children.len());
    for c in children {
        match c {
            Expr::Product(inner) => flat.extend(inner),
            other => flat.push(other),
        }
    }
    // Distribute over sums so the canonical form is a sum of products.
    if flat.iter().any(|c| matches!(c, Expr::Sum(_))) {
        let mut expanded: Vec<Vec<Expr>> = vec![Vec::new()];
        for c in flat {
            match c {
                Expr::Sum(terms) => {
                    let mut next = Vec::with_capacity(expanded.len() * terms.len());
                    for partial in &expanded {
                        for t in &terms {
                            let mut p = partial.clone();
                            p.push(t.clone());
                            next.push(p);
                        }
                    }
                    expanded = next;
                }
                other => {
                    for partial in &mut expanded {
                        partial.push(other.clone());
                    }
                }
            }
        }
        let terms = expanded.into_iter().map(canon_product).collect();
        return canon_sum(terms);
    }
    // Collect a single rational coefficient and merge exponents of like bases.
    let mut coeff = Rat::one();
    let mut bases: BTreeMap<Expr, Rat> = BTreeMap::new();
    let add_base = |b: Expr, q: Rat, coeff: &mut Rat, bases: &mut BTreeMap<Expr, Rat>| {
        if let Expr::Rational(r) = &b {
            if q.is_integer() && !r.is_zero() {
                if let Some(n) = q.to_integer().to_i32() {
                    *coeff *= num::pow::Pow::pow(r, n);
                    return;
                }
            }
        }
        *bases.entry(b).or_insert_with(Rat::zero) += q;
    };
    for c in flat {
        match c {
            Expr::Rational(r) => coeff *= r,
            Expr::Pow(b, q) => add_base(*b, q, &mut coeff, &mut bases),
            other => add_base(other, Rat::one(), &mut coeff, &mut bases),
        }
    }
    if coeff.is_zero() {
        return Expr::zero();
    }
    let mut factors: Vec<Expr> = Vec::new();
    for (b, q) in bases {
        if q.is_zero() {
            continue;
        }
        let f = canon_pow(b, q);
        match f {
            Expr::Rational(r) => coeff *= r,
            other => factors.push(other),
        }
    }
    factors.sort();
    if factors.is_empty() {
        return Expr::Rational(coeff);
    }
    if coeff.is_one() {
        if factors.len() == 1 {
            return factors.into_iter().next().unwrap();
        }
        return Expr::Product(factors);
    }
    let mut out = Vec::with_capacity(factors.len() + 1);
    out.push(Expr::Rational(coeff));
    out.extend(factors);
    Expr::Product(out)
}

/// Split a canonical term into (rational coefficient, monomial key). The key
/// of a constant is 1.
pub fn split_term(e: &Expr) -> (Rat, Expr) {
    match e {
        Expr::Rational(r) => (r.clone(), Expr::one()),
        Expr::Product(children) => {
            if let Some(Expr::Rational(r)) = children.first() {
                let rest: Vec<Expr> = children[1..].to_vec();
                let key = if rest.len() == 1 {
                    rest.into_iter().next().unwrap()
                } else {
                    Expr::Product(rest)
                };
                (r.clone(), key)
            } else {
                (Rat::one(), e.clone())
            }
        }
        _ => (Rat::one(), e.clone()),
    }
}

fn rebuild_term(coeff: Rat, key: Expr) -> Expr {
    if key.is_literal_one() {
        return Expr::Rational(coeff);
    }
    if coeff.is_one() {
        return key;
    }
    let mut children = vec![Expr::Rational(coeff)];
    match key {
        Expr::Product(parts) => children.extend(parts),
        other => children.push(other),
    }
    Expr::Product(children)
}

/// Children must already be canonical.
fn canon_sum(children: Vec<Expr>) -> Expr {
    let mut terms: BTreeMap<Expr, Rat> = BTreeMap::new();
    let mut stack = children;
    stack.reverse();
    while let Some(c) = stack.pop() {
        match c {
            Expr::Sum(inner) => {
                for i in inner.into_iter().rev() {
                    stack.push(i);
                }
            }
            other => {
                let (coeff, key) = split_term(&other);
                *terms.entry(key).or_insert_with(Rat::zero) += coeff;
            }
        }
    }
    let mut out: Vec<Expr> = terms
        .into_iter()
        .filter(|(_, coeff)| !coeff.is_zero())
        .map(|(key, coeff)| rebuild_term(coeff, key))
        .collect();
    out.sort();
    match out.len() {
        0 => Expr::zero(),
        1 => out.into_iter().next().unwrap(),
        _ => Expr::Sum(out),
    }
}

// ---------------------------------------------------------------------------
// Partial differentiation
// ---------------------------------------------------------------------------

/// Partial derivative treating every jet coordinate as an independent symbol.
/// The chain rule across coordinates is `total_derivative`'s job.
pub fn derive(e: &Expr, wrt: &JetCoordinate) -> Expr {
    canonicalize(&derive_raw(e, wrt))
}

fn derive_raw(e: &Expr, wrt: &JetCoordinate) -> Expr {
    match e {
        Expr::Rational(_) | Expr::Pi => Expr::zero(),
        Expr::Coord(c) => {
            if c == wrt {
                Expr::one()
            } else {
                Expr::zero()
            }
        }
        Expr::Sum(children) => Expr::Sum(children.iter().map(|c| derive_raw(c, wrt)).collect()),
        Expr::Product(children) => {
            let mut terms = Vec::with_capacity(children.len());
            for i in 0..children.len() {
                let mut factors = children.clone();
                factors[i] = derive_raw(&children[i], wrt);
                terms.push(Expr::Product(factors));
            }
            Expr::Sum(terms)
        }
        Expr::Pow(b, q) => {
            // q * b^(q-1) * b'
            Expr::Product(vec![
                Expr::Rational(q.clone()),
                Expr::Pow(b.clone(), q.clone() - Rat::one()),
                derive_raw(b, wrt),
            ])
        }
        Expr::Func(f, a) => {
            let outer = match f {
                UnaryFn::Sin => Expr::Func(UnaryFn::Cos, a.clone()),
                UnaryFn::Cos => Expr::Product(vec![
                    Expr::int(-1),
                    Expr::Func(UnaryFn::Sin, a.clone()),
                ]),
                UnaryFn::Exp => Expr::Func(UnaryFn::Exp, a.clone()),
                UnaryFn::Ln => Expr::Pow(a.clone(), -Rat::one()),
            };
            Expr::Product(vec![outer, derive_raw(a, wrt)])
        }
    }
}

// ---------------------------------------------------------------------------
// Substitution
// ---------------------------------------------------------------------------

/// Simultaneous single-pass replacement of coordinates, then canonicalize.
pub fn substitute(e: &Expr, bindings: &BTreeMap<JetCoordinate, Expr>) -> Expr {
    canonicalize(&substitute_raw(e, bindings))
}

fn substitute_raw(e: &Expr, bindings: &BTreeMap<JetCoordinate, Expr>) -> Expr {
    match e {
        Expr::Rational(_) | Expr::Pi => e.clone(),
        Expr::Coord(c) => bindings.get(c).cloned().unwrap_or_else(|| e.clone()),
        Expr::Sum(ch) => Expr::Sum(ch.iter().map(|c| substitute_raw(c, bindings)).collect()),
        Expr::Product(ch) => {
            Expr::Product(ch.iter().map(|c| substitute_raw(c, bindings)).collect())
        }
        Expr::Pow(b, q) => Expr::Pow(Box::new(substitute_raw(b, bindings)), q.clone()),
        Expr::Func(f, a) => Expr::Func(*f, Box::new(substitute_raw(a, bindings))),
    }
}

// ---------------------------------------------------------------------------
// Numeric evaluation
// ---------------------------------------------------------------------------

pub fn eval(e: &Expr, assignment: &BTreeMap<JetCoordinate, f64>) -> Result<f64, CoreError> {
    let v = eval_inner(e, assignment)?;
    if !v.is_finite() {
        return Err(CoreError::Domain {
            subterm: e.to_string(),
            message: "non-finite value".to_string(),
        });
    }
    Ok(v)
}

fn eval_inner(e: &Expr, assignment: &BTreeMap<JetCoordinate, f64>) -> Result<f64, CoreError> {
    match e {
        Expr::Rational(r) => Ok(rat_to_f64(r)),
        Expr::Pi => Ok(std::f64::consts::PI),
        Expr::Coord(c) => assignment
            .get(c)
            .copied()
            .ok_or(CoreError::Unassigned(*c)),
        Expr::Sum(ch) => {
            let mut acc = 0.0;
            for c in ch {
                acc += eval_inner(c, assignment)?;
            }
            Ok(acc)
        }
        Expr::Product(ch) => {
            let mut acc = 1.0;
            for c in ch {
                acc *= eval_inner(c, assignment)?;
            }
            Ok(acc)
        }
        Expr::Pow(b, q) => {
            let base = eval_inner(b, assignment)?;
            if q.is_integer() {
                let n = q.to_integer().to_i32().ok_or_else(|| CoreError::Domain {
                    subterm: e.to_string(),
                    message: "exponent out of range".to_string(),
                })?;
                if base == 0.0 && n < 0 {
                    return Err(CoreError::Domain {
                        subterm: e.to_string(),
                        message: "division by zero".to_string(),
                    });
                }
                Ok(base.powi(n))
            } else {
                let qf = rat_to_f64(q);
                if base < 0.0 {
                    return Err(CoreError::Domain {
                        subterm: e.to_string(),
                        message: "fractional power of negative base".to_string(),
                    });
                }
                if base == 0.0 && qf < 0.0 {
                    return Err(CoreError::Domain {
                        subterm: e.to_string(),
                        message: "division by zero".to_string(),
                    });
                }
                Ok(base.powf(qf))
            }
        }
        Expr::Func(f, a) => {
            let arg = eval_inner(a, assignment)?;
            match f {
                UnaryFn::Sin => Ok(arg.sin()),
                UnaryFn::Cos => Ok(arg.cos()),
                UnaryFn::Exp => Ok(arg.exp()),
                UnaryFn::Ln => {
                    if arg <= 0.0 {
                        Err(CoreError::Domain {
                            subterm: e.to_string(),
                            message: format!("ln of non-positive argument {arg}"),
                        })
                    } else {
                        Ok(arg.ln())
                    }
                }
            }
        }
    }
}

pub fn rat_to_f64(r: &Rat) -> f64 {
    r.to_f64().unwrap_or_else(|| {
        let n = r.numer().to_f64().unwrap_or(f64::NAN);
        let d = r.denom().to_f64().unwrap_or(f64::NAN);
        n / d
    })
}

// ---------------------------------------------------------------------------
// Rendering
// ---------------------------------------------------------------------------

fn fmt_rational(r: &Rat, f: &mut fmt::Formatter<'_>) -> fmt::Result {
    if r.is_integer() {
        write!(f, "{}", r.numer())
    } else {
        write!(f, "{}/{}", r.numer(), r.denom())
    }
}

/// True when the canonical term renders with a leading minus sign.
fn term_is_negative(e: &Expr) -> bool {
    let (coeff, _) = split_term(e);
    coeff.is_negative()
}

fn negate_for_render(e: &Expr) -> Expr {
    let (coeff, key) = split_term(e);
    rebuild_term(-coeff, key)
}

fn needs_parens_in_product(e: &Expr) -> bool {
    matches!(e, Expr::Sum(_)) || matches!(e, Expr::Rational(r) if r.is_negative())
}

fn needs_parens_as_base(e: &Expr) -> bool {
    match e {
        Expr::Coord(_) | Expr::Pi | Expr::Func(_, _) => false,
        Expr::Rational(r) => !r.is_integer() || r.is_negative(),
        _ => true,
    }
}

impl fmt::Display for Expr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Expr::Rational(r) => fmt_rational(r, f),
            Expr::Pi => write!(f, "pi"),
            Expr::Coord(c) => write!(f, "{c}"),
            Expr::Sum(children) => {
                for (i, c) in children.iter().enumerate() {
                    if i == 0 {
                        write!(f, "{c}")?;
                    } else if term_is_negative(c) {
                        write!(f, " - {}", negate_for_render(c))?;
                    } else {
                        write!(f, " + {c}")?;
                    }
                }
                Ok(())
            }
            Expr::Product(children) => {
                let mut rest: &[Expr] = children;
                if let Some(Expr::Rational(r)) = children.first() {
                    if r.is_negative() {
                        let pos = -r.clone();
                        rest = &children[1..];
                        write!(f, "-")?;
                        if !pos.is_one() {
                            fmt_rational(&pos, f)?;
                            write!(f, "*")?;
                        }
                        return fmt_factors(rest, f);
                    }
                }
                fmt_factors(rest, f)
            }
            Expr::Pow(b, q) => {
                if needs_parens_as_base(b) {
                    write!(f, "({b})")?;
                } else {
                    write!(f, "{b}")?;
                }
                if q.is_integer() && !q.is_negative() {
                    write!(f, "^{}", q.numer())
                } else if q.is_integer() {
                    write!(f, "^({})", q.numer())
                } else {
                    write!(f, "^({}/{})", q.numer(), q.denom())
                }
            }
            Expr::Func(fun, a) => write!(f, "{}({})", fun.name(), a),
        }
    }
}

fn fmt_factors(factors: &[Expr], f: &mut fmt::Formatter<'_>) -> fmt::Result {
    for (i, c) in factors.iter().enumerate() {
        if i > 0 {
            write!(f, "*")?;
        }
        if needs_parens_in_product(c) {
            write!(f, "({c})")?;
        } else {
            write!(f, "{c}")?;
        }
    }
    Ok(())
}
