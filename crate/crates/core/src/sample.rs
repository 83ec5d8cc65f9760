//! Seeded random sampling and the numeric zero test.

use std::collections::BTreeMap;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::coord::JetCoordinate;
use crate::error::CoreError;
use crate::expr::{canonicalize, eval, Expr};

/// Default seed, fixed for reproducibility ("jets" in ASCII).
pub const DEFAULT_SEED: u64 = 0x6A65_7473;

/// Accept band: all samples strictly below this magnitude count as zero.
pub const ZERO_ACCEPT: f64 = 1e-10;
/// Reject band: any sample at or above this magnitude is a nonzero witness.
pub const ZERO_REJECT: f64 = 1e-6;
/// Number of sample points for the zero test.
pub const ZERO_SAMPLES: usize = 32;

/// Explicit seeded random source. The only stateful object in the crate;
/// always passed explicitly.
#[derive(Debug, Clone)]
pub struct Sampler {
    rng: ChaCha8Rng,
}

impl Sampler {
    pub fn new(seed: u64) -> Self {
        Sampler {
            rng: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    /// Uniform draw from [-2, -0.1] u [0.1, 2], dodging singularities at 0.
    pub fn draw(&mut self) -> f64 {
        let magnitude = self.rng.gen_range(0.1..=2.0);
        if self.rng.gen_bool(0.5) {
            magnitude
        } else {
            -magnitude
        }
    }

    /// One full assignment for the given coordinates.
    pub fn assignment(
        &mut self,
        coords: impl IntoIterator<Item = JetCoordinate>,
    ) -> BTreeMap<JetCoordinate, f64> {
        coords.into_iter().map(|c| (c, self.draw())).collect()
    }
}

impl Default for Sampler {
    fn default() -> Self {
        Sampler::new(DEFAULT_SEED)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum ZeroVerdict {
    /// The canonical form is the literal 0.
    ProvenZero,
    /// All sampled magnitudes below the accept band; `marginal` is set when
    /// some sample fell between the accept and reject thresholds.
    NumericallyZero { marginal: bool },
    /// A concrete assignment where the value exceeds the reject threshold.
    NonZero {
        witness: BTreeMap<JetCoordinate, f64>,
        value: f64,
    },
}

impl ZeroVerdict {
    pub fn is_zero(&self) -> bool {
        !matches!(self, ZeroVerdict::NonZero { .. })
    }

    pub fn is_proven(&self) -> bool {
        matches!(self, ZeroVerdict::ProvenZero)
    }
}

/// Decision procedure behind every `= 0` condition. `ProvenZero` iff the
/// canonical form is literally 0; otherwise seeded sampling with the fixed
/// accept/reject bands.
pub fn is_zero(e: &Expr, sampler: &mut Sampler) -> Result<ZeroVerdict, CoreError> {
    let canonical = canonicalize(e);
    if canonical.is_literal_zero() {
        return Ok(ZeroVerdict::ProvenZero);
    }
    let coords: Vec<JetCoordinate> = canonical.coords().into_iter().collect();
    let mut valid = 0usize;
    let mut max_abs: f64 = 0.0;
    for _ in 0..ZERO_SAMPLES {
        let assignment = sampler.assignment(coords.iter().copied());
        match eval(&canonical, &assignment) {
            Ok(v) => {
                if v.abs() >= ZERO_REJECT {
                    return Ok(ZeroVerdict::NonZero {
                        witness: assignment,
                        value: v,
                    });
                }
                max_abs = max_abs.max(v.abs());
                valid += 1;
            }
            Err(CoreError::Unassigned(c)) => return Err(CoreError::Unassigned(c)),
            Err(_) => continue, // domain error at this sample point
        }
    }
    if valid == 0 {
        return Err(CoreError::Indeterminate);
    }
    Ok(ZeroVerdict::NumericallyZero {
        marginal: max_abs >= ZERO_ACCEPT,
    })
}
