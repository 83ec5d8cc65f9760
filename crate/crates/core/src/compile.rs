//! Slot-indexed bytecode for fast repeated evaluation of canonical
//! expressions. The simulator evaluates the right-hand sides millions of
//! times per run; walking the tree with a `BTreeMap` assignment each time
//! would dominate the cost.
//!
//! Domain violations (negative base to a fractional power, log of a
//! nonpositive value) propagate as NaN rather than errors; the simulator's
//! blow-up detection catches them.

use std::collections::BTreeMap;

use num::traits::ToPrimitive;

use crate::coord::JetCoordinate;
use crate::error::CoreError;
use crate::expr::{canonicalize, rat_to_f64, Expr, UnaryFn};

#[derive(Debug, Clone, Copy)]
enum Op {
    Const(f64),
    Slot(usize),
    /// Pop n values, push their sum.
    Add(usize),
    /// Pop n values, push their product.
    Mul(usize),
    Powi(i32),
    Powf(f64),
    Sin,
    Cos,
    Exp,
    Ln,
}

#[derive(Debug, Clone)]
pub struct Compiled {
    ops: Vec<Op>,
    max_stack: usize,
}

impl Compiled {
    /// Compile against a slot layout; every coordinate of `e` must be
    /// mapped.
    pub fn new(e: &Expr, slots: &BTreeMap<JetCoordinate, usize>) -> Result<Self, CoreError> {
        let canonical = canonicalize(e);
        let mut ops = Vec::new();
        emit(&canonical, slots, &mut ops)?;
        let mut depth = 0usize;
        let mut max_stack = 0usize;
        for op in &ops {
            match op {
                Op::Const(_) | Op::Slot(_) => depth += 1,
                Op::Add(n) | Op::Mul(n) => depth = depth - n + 1,
                _ => {}
            }
            max_stack = max_stack.max(depth);
        }
        Ok(Compiled { ops, max_stack })
    }

    pub fn max_stack(&self) -> usize {
        self.max_stack
    }

    /// Evaluate with a caller-provided scratch stack (cleared here), so hot
    /// loops avoid per-call allocation.
    pub fn eval_with(&self, slots: &[f64], stack: &mut Vec<f64>) -> f64 {
        stack.clear();
        for op in &self.ops {
            match op {
                Op::Const(c) => stack.push(*c),
                Op::Slot(i) => stack.push(slots[*i]),
                Op::Add(n) => {
                    let split = stack.len() - n;
                    let s: f64 = stack[split..].iter().sum();
                    stack.truncate(split);
                    stack.push(s);
                }
                Op::Mul(n) => {
                    let split = stack.len() - n;
                    let p: f64 = stack[split..].iter().product();
                    stack.truncate(split);
                    stack.push(p);
                }
                Op::Powi(n) => {
                    let top = stack.last_mut().unwrap();
                    *top = top.powi(*n);
                }
                Op::Powf(q) => {
                    let top = stack.last_mut().unwrap();
                    *top = top.powf(*q);
                }
                Op::Sin => {
                    let top = stack.last_mut().unwrap();
                    *top = top.sin();
                }
                Op::Cos => {
                    let top = stack.last_mut().unwrap();
                    *top = top.cos();
                }
                Op::Exp => {
                    let top = stack.last_mut().unwrap();
                    *top = top.exp();
                }
                Op::Ln => {
                    let top = stack.last_mut().unwrap();
                    *top = top.ln();
                }
            }
        }
        debug_assert_eq!(stack.len(), 1);
        stack[0]
    }

    pub fn eval(&self, slots: &[f64]) -> f64 {
        let mut stack = Vec::with_capacity(self.max_stack);
        self.eval_with(slots, &mut stack)
    }
}

fn emit(
    e: &Expr,
    slots: &BTreeMap<JetCoordinate, usize>,
    ops: &mut Vec<Op>,
) -> Result<(), CoreError> {
    match e {
        Expr::Rational(r) => ops.push(Op::Const(rat_to_f64(r))),
        Expr::Pi => ops.push(Op::Const(std::f64::consts::PI)),
        Expr::Coord(c) => {
            let slot = slots.get(c).ok_or(CoreError::Unassigned(*c))?;
            ops.push(Op::Slot(*slot));
        }
        Expr::Sum(terms) => {
            for t in terms {
                emit(t, slots, ops)?;
            }
            ops.push(Op::Add(terms.len()));
        }
        Expr::Product(factors) => {
            for f in factors {
                emit(f, slots, ops)?;
            }
            ops.push(Op::Mul(factors.len()));
        }
        Expr::Pow(base, exp) => {
            emit(base, slots, ops)?;
            match exp.to_integer().to_i32().filter(|_| exp.is_integer()) {
                Some(n) => ops.push(Op::Powi(n)),
                None => ops.push(Op::Powf(rat_to_f64(exp))),
            }
        }
        Expr::Func(f, a) => {
            emit(a, slots, ops)?;
            ops.push(match f {
                UnaryFn::Sin => Op::Sin,
                UnaryFn::Cos => Op::Cos,
                UnaryFn::Exp => Op::Exp,
                UnaryFn::Ln => Op::Ln,
            });
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::coord::JetContext;
    use crate::expr::eval;
    use crate::parse::parse;
    use crate::sample::Sampler;

    #[test]
    fn compiled_matches_tree_walker() {
        let ctx = JetContext::new(2);
        let sources = [
            "x1_zz - x2^3 + u",
            "sin(2*pi*z)*cos(2*pi*t) - x1*x2",
            "x2/x1 + exp(t)*z^2 - 1/4",
            "ln(x1^2 + 1) - t*u",
        ];
        let mut sampler = Sampler::default();
        for src in sources {
            let e = parse(src, &ctx).unwrap();
            let coords: Vec<JetCoordinate> = e.coords().into_iter().collect();
            let slots: BTreeMap<JetCoordinate, usize> =
                coords.iter().enumerate().map(|(i, c)| (*c, i)).collect();
            let compiled = Compiled::new(&e, &slots).unwrap();
            for _ in 0..50 {
                let assignment = sampler.assignment(coords.iter().copied());
                let values: Vec<f64> = coords.iter().map(|c| assignment[c]).collect();
                match eval(&e, &assignment) {
                    Ok(reference) => {
                        let got = compiled.eval(&values);
                        assert!(
                            (got - reference).abs() <= 1e-12 * reference.abs().max(1.0),
                            "{src}: {got} vs {reference}"
                        );
                    }
                    Err(_) => assert!(!compiled.eval(&values).is_finite()),
                }
            }
        }
    }

    #[test]
    fn domain_violations_become_nan() {
        let ctx = JetContext::new(1);
        let e = parse("ln(x1)", &ctx).unwrap();
        let slots: BTreeMap<JetCoordinate, usize> =
            [(ctx.lookup("x1").unwrap(), 0)].into_iter().collect();
        let compiled = Compiled::new(&e, &slots).unwrap();
        assert!(compiled.eval(&[-1.0]).is_nan());
        assert!(compiled.eval(&[1.0]).abs() < 1e-15);
    }

    #[test]
    fn unmapped_coordinate_is_an_error() {
        let ctx = JetContext::new(1);
        let e = parse("x1 + z", &ctx).unwrap();
        let slots: BTreeMap<JetCoordinate, usize> =
            [(ctx.lookup("x1").unwrap(), 0)].into_iter().collect();
        assert!(matches!(
            Compiled::new(&e, &slots),
            Err(CoreError::Unassigned(_))
        ));
    }

    #[test]
    fn stack_bound_is_respected() {
        let ctx = JetContext::new(1);
        let e = parse("(x1 + (x1 + (x1 + 1)*z)*z)*z", &ctx).unwrap();
        let coords: Vec<JetCoordinate> = e.coords().into_iter().collect();
        let slots: BTreeMap<JetCoordinate, usize> =
            coords.iter().enumerate().map(|(i, c)| (*c, i)).collect();
        let compiled = Compiled::new(&e, &slots).unwrap();
        assert!(compiled.max_stack() >= 2);
        compiled.eval(&vec![1.5; coords.len()]);
    }
}
