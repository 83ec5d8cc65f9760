//! Jet coordinate bookkeeping.
//!
//! A jet coordinate is a dependent variable (`x1`, ..), the input `u`, or an
//! independent variable (`z`, `t`), together with a derivative multi-index
//! counting `z`- and `t`-derivatives. The rendering convention is fixed:
//! `x1`, `x1_z`, `x1_zt`, `u_tt`, ... with all `z` letters before all `t`
//! letters.

use std::fmt;

use crate::error::CoreError;

/// What a jet coordinate refers to. The derived `Ord` fixes the enumeration
/// order: dependents by index, then the input, then `z`, then `t`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum CoordRole {
    /// Dependent variable x^alpha, zero-based index.
    Dependent(usize),
    /// The single input u.
    Input,
    /// Spatial independent variable z.
    Z,
    /// Time t.
    T,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct JetCoordinate {
    pub role: CoordRole,
    /// Number of z-derivatives.
    pub dz: u8,
    /// Number of t-derivatives.
    pub dt: u8,
}

impl JetCoordinate {
    pub fn dependent(alpha: usize, dz: u8, dt: u8) -> Self {
        JetCoordinate {
            role: CoordRole::Dependent(alpha),
            dz,
            dt,
        }
    }

    pub fn input(dz: u8, dt: u8) -> Self {
        JetCoordinate {
            role: CoordRole::Input,
            dz,
            dt,
        }
    }

    pub fn z() -> Self {
        JetCoordinate {
            role: CoordRole::Z,
            dz: 0,
            dt: 0,
        }
    }

    pub fn t() -> Self {
        JetCoordinate {
            role: CoordRole::T,
            dz: 0,
            dt: 0,
        }
    }

    pub fn order(&self) -> u8 {
        self.dz + self.dt
    }

    pub fn is_independent(&self) -> bool {
        matches!(self.role, CoordRole::Z | CoordRole::T)
    }

    /// The coordinate obtained by one more derivative in the given direction.
    pub fn shifted(&self, wrt: Independent) -> Self {
        debug_assert!(!self.is_independent());
        match wrt {
            Independent::Z => JetCoordinate {
                dz: self.dz + 1,
                ..*self
            },
            Independent::T => JetCoordinate {
                dt: self.dt + 1,
                ..*self
            },
        }
    }
}

impl fmt::Display for JetCoordinate {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.role {
            CoordRole::Z => return write!(f, "z"),
            CoordRole::T => return write!(f, "t"),
            CoordRole::Dependent(alpha) => write!(f, "x{}", alpha + 1)?,
            CoordRole::Input => write!(f, "u")?,
        }
        if self.dz > 0 || self.dt > 0 {
            write!(f, "_")?;
            for _ in 0..self.dz {
                write!(f, "z")?;
            }
            for _ in 0..self.dt {
                write!(f, "t")?;
            }
        }
        Ok(())
    }
}

/// One of the two independent variables.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Independent {
    Z,
    T,
}

impl Independent {
    pub fn coordinate(&self) -> JetCoordinate {
        match self {
            Independent::Z => JetCoordinate::z(),
            Independent::T => JetCoordinate::t(),
        }
    }
}

/// Naming and ordering of all jet coordinates up to a maximum derivative
/// order. The default maximum order is 3; the third order is only needed for
/// the differential consequences of the extended reduction.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct JetContext {
    n_x: usize,
    max_order: u8,
    /// Names of the dependent variables; defaults to `x1`, `x2`, ...
    names: Vec<String>,
    input_name: String,
}

pub const DEFAULT_MAX_ORDER: u8 = 3;

impl JetContext {
    pub fn new(n_x: usize) -> Self {
        Self::with_names(
            (0..n_x).map(|i| format!("x{}", i + 1)).collect(),
            "u".to_string(),
            DEFAULT_MAX_ORDER,
        )
    }

    pub fn with_names(names: Vec<String>, input_name: String, max_order: u8) -> Self {
        assert!(!names.is_empty(), "need at least one dependent variable");
        JetContext {
            n_x: names.len(),
            max_order,
            names,
            input_name,
        }
    }

    pub fn n_x(&self) -> usize {
        self.n_x
    }

    pub fn max_order(&self) -> u8 {
        self.max_order
    }

    pub fn state_names(&self) -> &[String] {
        &self.names
    }

    pub fn input_name(&self) -> &str {
        &self.input_name
    }

    /// All coordinates, in the fixed enumeration order: dependents by alpha
    /// then multi-index lexicographic, then input coordinates, then z, t.
    pub fn coordinates(&self) -> Vec<JetCoordinate> {
        let mut out = Vec::new();
        for alpha in 0..self.n_x {
            for dz in 0..=self.max_order {
                for dt in 0..=(self.max_order - dz) {
                    out.push(JetCoordinate::dependent(alpha, dz, dt));
                }
            }
        }
        for dz in 0..=self.max_order {
            for dt in 0..=(self.max_order - dz) {
                out.push(JetCoordinate::input(dz, dt));
            }
        }
        out.push(JetCoordinate::z());
        out.push(JetCoordinate::t());
        out
    }

    /// Resolve a coordinate name like `x1_zt`, `u_zz`, `z`.
    pub fn lookup(&self, name: &str) -> Result<JetCoordinate, CoreError> {
        if name == "z" {
            return Ok(JetCoordinate::z());
        }
        if name == "t" {
            return Ok(JetCoordinate::t());
        }
        let (base, deriv) = match name.split_once('_') {
            Some((b, d)) => (b, d),
            None => (name, ""),
        };
        let role = if base == self.input_name {
            CoordRole::Input
        } else if let Some(idx) = self.names.iter().position(|n| n == base) {
            CoordRole::Dependent(idx)
        } else {
            return Err(CoreError::UnknownCoordinate(name.to_string()));
        };
        let mut dz = 0u8;
        let mut dt = 0u8;
        let mut seen_t = false;
        for ch in deriv.chars() {
            match ch {
                'z' if !seen_t => dz += 1,
                't' => {
                    seen_t = true;
                    dt += 1;
                }
                _ => return Err(CoreError::UnknownCoordinate(name.to_string())),
            }
        }
        if dz + dt > self.max_order {
            return Err(CoreError::OrderOverflow {
                coordinate: name.to_string(),
                max_order: self.max_order,
            });
        }
        Ok(JetCoordinate { role, dz, dt })
    }

    /// Render a coordinate with the context's variable names.
    pub fn render(&self, c: &JetCoordinate) -> String {
        match c.role {
            CoordRole::Z => "z".to_string(),
            CoordRole::T => "t".to_string(),
            _ => {
                let base = match c.role {
                    CoordRole::Dependent(alpha) => self.names[alpha].clone(),
                    CoordRole::Input => self.input_name.clone(),
                    _ => unreachable!(),
                };
                if c.dz == 0 && c.dt == 0 {
                    base
                } else {
                    let mut s = base;
                    s.push('_');
                    for _ in 0..c.dz {
                        s.push('z');
                    }
                    for _ in 0..c.dt {
                        s.push('t');
                    }
                    s
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rendering_convention() {
        assert_eq!(JetCoordinate::dependent(0, 2, 1).to_string(), "x1_zzt");
        assert_eq!(JetCoordinate::input(0, 2).to_string(), "u_tt");
        assert_eq!(JetCoordinate::z().to_string(), "z");
    }

    #[test]
    fn lookup_round_trip() {
        let ctx = JetContext::new(2);
        for c in ctx.coordinates() {
            assert_eq!(ctx.lookup(&c.to_string()).unwrap(), c);
        }
    }

    #[test]
    fn lookup_rejects_bad_names() {
        let ctx = JetContext::new(1);
        assert!(ctx.lookup("x2").is_err());
        assert!(ctx.lookup("x1_tz").is_err()); // z after t violates the convention
        assert!(ctx.lookup("x1_zzzz").is_err()); // beyond max order
    }

    #[test]
    fn enumeration_is_deterministic() {
        let ctx = JetContext::new(2);
        let coords = ctx.coordinates();
        let mut sorted = coords.clone();
        sorted.sort();
        assert_eq!(coords, sorted);
        assert_eq!(coords.last(), Some(&JetCoordinate::t()));
    }
}
