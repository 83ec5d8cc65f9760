use thiserror::Error;

use crate::coord::JetCoordinate;

#[derive(Debug, Error)]
pub enum CoreError {
    #[error("syntax error at position {position}: {message}")]
    Syntax { position: usize, message: String },

    #[error("unknown coordinate `{0}`")]
    UnknownCoordinate(String),

    #[error("derivative order of `{coordinate}` exceeds context maximum {max_order}")]
    OrderOverflow { coordinate: String, max_order: u8 },

    #[error("unassigned coordinate `{0}` in numeric evaluation")]
    Unassigned(JetCoordinate),

    #[error("domain error evaluating `{subterm}`: {message}")]
    Domain { subterm: String, message: String },

    #[error("all sample points hit domain errors; zero test is indeterminate")]
    Indeterminate,

    #[error("coordinate `{coordinate}` is not allowed in {place}")]
    DisallowedCoordinate {
        coordinate: String,
        place: String,
    },

    #[error("generator coefficient for {place} mentions derivative coordinate `{coordinate}`")]
    DerivativeInGenerator {
        coordinate: String,
        place: String,
    },

    #[error("reduction did not reach a fixed point within {0} passes")]
    NoFixedPoint(usize),

    #[error("boundary function `{function}` is not affine in pivot `{pivot}`")]
    NotAffine { function: String, pivot: String },

    #[error("pivot coefficient of `{pivot}` in `{function}` may vanish; refusing to divide")]
    PivotCoefficientZero { function: String, pivot: String },

    #[error("pivot list has {pivots} entries but the side has {conditions} boundary conditions")]
    PivotArity { pivots: usize, conditions: usize },

    #[error("non-observability check requires v_u = 0, got `{0}`")]
    NonzeroInputComponent(String),

    #[error("flow coefficient for {place} still depends on u at t = 0")]
    FlowDependsOnInput { place: String },

    #[error("boundary Newton iteration diverged at z = {z} (t = {t}, {iterations} iterations)")]
    NewtonDiverged { z: f64, t: f64, iterations: usize },

    #[error("non-finite field value for {state} at node {node} (z = {z}), step {step} (t = {t})")]
    BlowUp {
        state: String,
        node: usize,
        z: f64,
        step: usize,
        t: f64,
    },

    #[error("{state} crossed zero at node {node} (z = {z}), step {step} (t = {t}); singular set reached")]
    SingularSet {
        state: String,
        node: usize,
        z: f64,
        step: usize,
        t: f64,
    },

    #[error("invalid system: {0}")]
    InvalidSystem(String),

    #[error("invalid simulation configuration: {0}")]
    InvalidConfig(String),
}
