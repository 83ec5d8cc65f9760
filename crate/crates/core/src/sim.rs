//! Method-of-lines simulator for the evolution-system class, transport of
//! initial conditions along a generator, and the indistinguishability
//! experiment that exhibits non-observability numerically.
//!
//! Spatial discretization: second-order central differences in the
//! interior, second-order one-sided stencils at the ends. Time stepping:
//! classic fixed-step 4-stage Runge-Kutta. Boundary conditions close the
//! boundary nodes through declared pivots, solved by damped Newton.

use std::collections::BTreeMap;

use crate::checker::{check_nonobservability, Aggregate, CheckOptions, CheckReport};
use crate::compile::Compiled;
use crate::coord::{CoordRole, JetContext, JetCoordinate};
use crate::error::CoreError;
use crate::expr::{eval, substitute, Expr};
use crate::jet::{flow_at_t0, VerticalField};
use crate::system::{BoundarySide, SystemSpec};

pub const DEFAULT_NEWTON_TOL: f64 = 1e-12;
pub const DEFAULT_NEWTON_MAX_ITERATIONS: usize = 25;
/// Flow integration steps used when transporting initial conditions inside
/// the indistinguishability experiment.
pub const INDIST_FLOW_STEPS: usize = 200;
/// Floor of the output-agreement tolerance; the solver's measured
/// self-discrepancy (half-dt and coarse-grid comparisons) scales on top.
pub const INDIST_TOL_FLOOR: f64 = 1e-6;

#[derive(Debug, Clone, Copy)]
pub struct Grid {
    n: usize,
    dz: f64,
}

impl Grid {
    pub fn new(n: usize) -> Result<Self, CoreError> {
        if n < 5 {
            return Err(CoreError::InvalidConfig(format!(
                "grid needs at least 5 nodes, got {n}"
            )));
        }
        Ok(Grid {
            n,
            dz: 1.0 / (n - 1) as f64,
        })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn dz(&self) -> f64 {
        self.dz
    }

    pub fn z(&self, i: usize) -> f64 {
        i as f64 * self.dz
    }

    /// Nearest node to a point of the closed unit interval, with the snap
    /// distance.
    pub fn snap(&self, z0: f64) -> (usize, f64) {
        let i = (z0 / self.dz).round().clamp(0.0, (self.n - 1) as f64) as usize;
        (i, (self.z(i) - z0).abs())
    }
}

/// What a boundary condition determines at its end.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum PivotTarget {
    /// The boundary value of state alpha.
    Value(usize),
    /// The one-sided first derivative of state alpha; the node value
    /// follows from inverting the stencil.
    Derivative(usize),
}

fn pivot_target(pivot: &JetCoordinate) -> Result<PivotTarget, CoreError> {
    match (pivot.role, pivot.dz, pivot.dt) {
        (CoordRole::Dependent(a), 0, 0) => Ok(PivotTarget::Value(a)),
        (CoordRole::Dependent(a), 1, 0) => Ok(PivotTarget::Derivative(a)),
        _ => Err(CoreError::InvalidConfig(format!(
            "boundary pivot must be a state value or its first z-derivative, got {pivot}"
        ))),
    }
}

#[derive(Debug, Clone)]
pub struct SimConfig {
    pub n: usize,
    pub dt: f64,
    pub t_end: f64,
    /// Input signal; an expression in t alone.
    pub input: Expr,
    pub left_pivots: Vec<JetCoordinate>,
    pub right_pivots: Vec<JetCoordinate>,
    /// States that must stay strictly positive; crossing zero aborts the
    /// run as a singular-set hit.
    pub require_positive: Vec<usize>,
    pub newton_tol: f64,
    pub newton_max_iterations: usize,
}

impl SimConfig {
    pub fn new(n: usize, dt: f64, t_end: f64, input: Expr) -> Self {
        SimConfig {
            n,
            dt,
            t_end,
            input,
            left_pivots: Vec::new(),
            right_pivots: Vec::new(),
            require_positive: Vec::new(),
            newton_tol: DEFAULT_NEWTON_TOL,
            newton_max_iterations: DEFAULT_NEWTON_MAX_ITERATIONS,
        }
    }

    pub fn validate(&self, spec: &SystemSpec) -> Result<(), CoreError> {
        if !(self.dt > 0.0) || !(self.t_end > 0.0) {
            return Err(CoreError::InvalidConfig(format!(
                "need positive dt and T, got dt = {}, T = {}",
                self.dt, self.t_end
            )));
        }
        for c in self.input.coords() {
            if c != JetCoordinate::t() {
                return Err(CoreError::InvalidConfig(format!(
                    "input signal may only depend on t, mentions {c}"
                )));
            }
        }
        for (pivots, side) in [
            (&self.left_pivots, BoundarySide::Left),
            (&self.right_pivots, BoundarySide::Right),
        ] {
            if pivots.len() != spec.boundary(side).len() {
                return Err(CoreError::PivotArity {
                    pivots: pivots.len(),
                    conditions: spec.boundary(side).len(),
                });
            }
            for p in pivots {
                pivot_target(p)?;
            }
        }
        for &alpha in &self.require_positive {
            if alpha >= spec.n_x() {
                return Err(CoreError::InvalidConfig(format!(
                    "require_positive index {alpha} out of range"
                )));
            }
        }
        Ok(())
    }

    /// Textual step-size advisories from the structure of the right-hand
    /// sides; never enforced.
    pub fn stability_advisories(&self, spec: &SystemSpec) -> Vec<String> {
        let grid = match Grid::new(self.n) {
            Ok(g) => g,
            Err(_) => return Vec::new(),
        };
        let dz = grid.dz();
        let mut advisories = Vec::new();
        let mut diffusive = false;
        let mut coupled = false;
        for alpha in 0..spec.n_x() {
            for beta in 0..spec.n_x() {
                if spec
                    .rhs(alpha)
                    .contains(&JetCoordinate::dependent(beta, 2, 0))
                {
                    if alpha == beta {
                        diffusive = true;
                    } else {
                        coupled = true;
                    }
                }
            }
        }
        if diffusive && self.dt > 0.25 * dz * dz {
            advisories.push(format!(
                "diffusive coupling: dt = {:.3e} exceeds 0.25*dz^2 = {:.3e}",
                self.dt,
                0.25 * dz * dz
            ));
        }
        if coupled && self.dt > 0.5 * dz {
            advisories.push(format!(
                "wave-like coupling: dt = {:.3e} exceeds 0.5*dz = {:.3e}",
                self.dt,
                0.5 * dz
            ));
        }
        advisories
    }
}

#[derive(Debug, Clone)]
pub struct Trajectory {
    pub n: usize,
    pub n_x: usize,
    pub times: Vec<f64>,
    /// One snapshot per sample; state alpha at node i sits at alpha*n + i.
    pub states: Vec<Vec<f64>>,
    pub output: Vec<f64>,
    pub input: Vec<f64>,
    pub output_node: usize,
    pub snap_error: f64,
    pub warnings: Vec<String>,
}

impl Trajectory {
    pub fn state(&self, sample: usize, alpha: usize, node: usize) -> f64 {
        self.states[sample][alpha * self.n + node]
    }

    /// Comma-separated export, row-major in (t, z).
    pub fn to_csv(&self, ctx: &JetContext) -> String {
        let grid = Grid::new(self.n).expect("trajectory grid was validated");
        let mut out = String::from("t,z");
        for name in ctx.state_names() {
            out.push(',');
            out.push_str(name);
        }
        out.push(',');
        out.push_str(ctx.input_name());
        out.push_str(",y\n");
        for (k, t) in self.times.iter().enumerate() {
            for i in 0..self.n {
                out.push_str(&format!("{t:.10e},{:.10e}", grid.z(i)));
                for alpha in 0..self.n_x {
                    out.push_str(&format!(",{:.10e}", self.state(k, alpha, i)));
                }
                out.push_str(&format!(",{:.10e},{:.10e}\n", self.input[k], self.output[k]));
            }
        }
        out
    }
}

/// One-sided and central first derivative, both second order.
fn d1(y: &[f64], i: usize, n: usize, dz: f64) -> f64 {
    if i == 0 {
        (-3.0 * y[0] + 4.0 * y[1] - y[2]) / (2.0 * dz)
    } else if i == n - 1 {
        (3.0 * y[n - 1] - 4.0 * y[n - 2] + y[n - 3]) / (2.0 * dz)
    } else {
        (y[i + 1] - y[i - 1]) / (2.0 * dz)
    }
}

/// Second derivative: 3-point central stencil inside, 4-point one-sided at
/// the ends (also second order).
fn d2(y: &[f64], i: usize, n: usize, dz: f64) -> f64 {
    let dz2 = dz * dz;
    if i == 0 {
        (2.0 * y[0] - 5.0 * y[1] + 4.0 * y[2] - y[3]) / dz2
    } else if i == n - 1 {
        (2.0 * y[n - 1] - 5.0 * y[n - 2] + 4.0 * y[n - 3] - y[n - 4]) / dz2
    } else {
        (y[i + 1] - 2.0 * y[i] + y[i - 1]) / dz2
    }
}

/// Slot layouts shared by the compiled expressions.
/// Right-hand sides: [z, t, u, x1, x1_z, x1_zz, x2, ...].
fn rhs_slots(ctx: &JetContext) -> BTreeMap<JetCoordinate, usize> {
    let mut slots = BTreeMap::new();
    slots.insert(JetCoordinate::z(), 0);
    slots.insert(JetCoordinate::t(), 1);
    slots.insert(JetCoordinate::input(0, 0), 2);
    for beta in 0..ctx.n_x() {
        slots.insert(JetCoordinate::dependent(beta, 0, 0), 3 + 3 * beta);
        slots.insert(JetCoordinate::dependent(beta, 1, 0), 4 + 3 * beta);
        slots.insert(JetCoordinate::dependent(beta, 2, 0), 5 + 3 * beta);
    }
    slots
}

/// Boundary functions and output: [t, x1, x1_z, x2, x2_z, ...].
fn trace_slots(ctx: &JetContext) -> BTreeMap<JetCoordinate, usize> {
    let mut slots = BTreeMap::new();
    slots.insert(JetCoordinate::t(), 0);
    for beta in 0..ctx.n_x() {
        slots.insert(JetCoordinate::dependent(beta, 0, 0), 1 + 2 * beta);
        slots.insert(JetCoordinate::dependent(beta, 1, 0), 2 + 2 * beta);
    }
    slots
}

struct Engine<'a> {
    spec: &'a SystemSpec,
    config: &'a SimConfig,
    grid: Grid,
    rhs: Vec<Compiled>,
    left: Vec<(Compiled, PivotTarget)>,
    right: Vec<(Compiled, PivotTarget)>,
    output: Compiled,
    input: Compiled,
}

struct Scratch {
    slots: Vec<f64>,
    trace: Vec<f64>,
    stack: Vec<f64>,
}

impl<'a> Engine<'a> {
    fn new(spec: &'a SystemSpec, config: &'a SimConfig) -> Result<Self, CoreError> {
        config.validate(spec)?;
        let ctx = spec.ctx();
        let grid = Grid::new(config.n)?;
        let rhs_layout = rhs_slots(ctx);
        let trace_layout = trace_slots(ctx);
        let rhs = (0..spec.n_x())
            .map(|a| Compiled::new(spec.rhs(a), &rhs_layout))
            .collect::<Result<_, _>>()?;
        let mut sides = Vec::new();
        for (side, pivots) in [
            (BoundarySide::Left, &config.left_pivots),
            (BoundarySide::Right, &config.right_pivots),
        ] {
            let mut compiled = Vec::new();
            for (g, pivot) in spec.boundary(side).iter().zip(pivots) {
                compiled.push((Compiled::new(g, &trace_layout)?, pivot_target(pivot)?));
            }
            sides.push(compiled);
        }
        let right = sides.pop().unwrap();
        let left = sides.pop().unwrap();
        let mut t_slot = BTreeMap::new();
        t_slot.insert(JetCoordinate::t(), 0);
        Ok(Engine {
            spec,
            config,
            grid,
            rhs,
            left,
            right,
            output: Compiled::new(spec.output(), &trace_layout)?,
            input: Compiled::new(&config.input, &t_slot)?,
        })
    }

    fn scratch(&self) -> Scratch {
        Scratch {
            slots: vec![0.0; 3 + 3 * self.spec.n_x()],
            trace: vec![0.0; 1 + 2 * self.spec.n_x()],
            stack: Vec::with_capacity(32),
        }
    }

    fn input_at(&self, t: f64, s: &mut Scratch) -> f64 {
        self.input.eval_with(&[t], &mut s.stack)
    }

    /// Fill the boundary-trace slots (t, values, one-sided derivatives) at
    /// one end of the grid.
    fn fill_trace(&self, y: &[f64], t: f64, node: usize, s: &mut Scratch) {
        let n = self.grid.n();
        s.trace[0] = t;
        for beta in 0..self.spec.n_x() {
            let states = &y[beta * n..(beta + 1) * n];
            s.trace[1 + 2 * beta] = states[node];
            s.trace[2 + 2 * beta] = d1(states, node, n, self.grid.dz());
        }
    }

    /// Enforce the boundary conditions at both ends by solving each one
    /// for its declared pivot, in declaration order.
    fn close_boundaries(&self, y: &mut [f64], t: f64, s: &mut Scratch) -> Result<(), CoreError> {
        let n = self.grid.n();
        let dz = self.grid.dz();
        for (conditions, node) in [(&self.left, 0usize), (&self.right, n - 1)] {
            for (g, target) in conditions {
                let alpha = match target {
                    PivotTarget::Value(a) | PivotTarget::Derivative(a) => *a,
                };
                // The boundary node value as a function of the scalar
                // unknown: the value itself, or the stencil inverted for a
                // prescribed one-sided derivative.
                let node_value = |slope: f64, y: &[f64]| -> f64 {
                    let states = &y[alpha * n..(alpha + 1) * n];
                    match target {
                        PivotTarget::Value(_) => slope,
                        PivotTarget::Derivative(_) => {
                            if node == 0 {
                                (4.0 * states[1] - states[2] - 2.0 * dz * slope) / 3.0
                            } else {
                                (4.0 * states[n - 2] - states[n - 3] + 2.0 * dz * slope) / 3.0
                            }
                        }
                    }
                };
                let residual_at = |unknown: f64, y: &mut [f64], s: &mut Scratch| -> f64 {
                    y[alpha * n + node] = node_value(unknown, y);
                    self.fill_trace(y, t, node, s);
                    let trace = std::mem::take(&mut s.trace);
                    let v = g.eval_with(&trace, &mut s.stack);
                    s.trace = trace;
                    v
                };
                let mut unknown = match target {
                    PivotTarget::Value(_) => y[alpha * n + node],
                    PivotTarget::Derivative(_) => {
                        d1(&y[alpha * n..(alpha + 1) * n], node, n, dz)
                    }
                };
                let mut residual = residual_at(unknown, y, s);
                let mut converged = residual.abs() <= self.config.newton_tol;
                let mut iterations = 0;
                while !converged && iterations < self.config.newton_max_iterations {
                    iterations += 1;
                    let h = 1e-7 * unknown.abs().max(1.0);
                    let upper = residual_at(unknown + h, y, s);
                    let lower = residual_at(unknown - h, y, s);
                    let slope = (upper - lower) / (2.0 * h);
                    if slope == 0.0 || !slope.is_finite() {
                        break;
                    }
                    let full_step = -residual / slope;
                    let mut damping = 1.0;
                    loop {
                        let candidate = unknown + damping * full_step;
                        let candidate_residual = residual_at(candidate, y, s);
                        if candidate_residual.abs() < residual.abs() || damping < 1.0 / 1024.0 {
                            unknown = candidate;
                            residual = candidate_residual;
                            break;
                        }
                        damping *= 0.5;
                    }
                    converged = residual.abs() <= self.config.newton_tol;
                }
                if !converged {
                    // Re-apply the best estimate before reporting.
                    residual_at(unknown, y, s);
                    if residual.abs() > self.config.newton_tol.max(1e-9) {
                        return Err(CoreError::NewtonDiverged {
                            z: self.grid.z(node),
                            t,
                            iterations,
                        });
                    }
                }
                y[alpha * n + node] = node_value(unknown, y);
            }
        }
        Ok(())
    }

    /// Semi-discrete right-hand side: du/dt for every state at every node.
    fn derivatives(&self, t: f64, y: &[f64], out: &mut [f64], s: &mut Scratch) {
        let n = self.grid.n();
        let dz = self.grid.dz();
        let u = self.input_at(t, s);
        s.slots[1] = t;
        s.slots[2] = u;
        for i in 0..n {
            s.slots[0] = self.grid.z(i);
            for beta in 0..self.spec.n_x() {
                let states = &y[beta * n..(beta + 1) * n];
                s.slots[3 + 3 * beta] = states[i];
                s.slots[4 + 3 * beta] = d1(states, i, n, dz);
                s.slots[5 + 3 * beta] = d2(states, i, n, dz);
            }
            let slots = std::mem::take(&mut s.slots);
            for (alpha, rhs) in self.rhs.iter().enumerate() {
                out[alpha * n + i] = rhs.eval_with(&slots, &mut s.stack);
            }
            s.slots = slots;
        }
    }

    fn output_at(&self, y: &[f64], t: f64, node: usize, s: &mut Scratch) -> f64 {
        let n = self.grid.n();
        s.trace[0] = t;
        for beta in 0..self.spec.n_x() {
            let states = &y[beta * n..(beta + 1) * n];
            s.trace[1 + 2 * beta] = states[node];
            s.trace[2 + 2 * beta] = d1(states, node, n, self.grid.dz());
        }
        let trace = std::mem::take(&mut s.trace);
        let v = self.output.eval_with(&trace, &mut s.stack);
        s.trace = trace;
        v
    }

    /// Blow-up and singular-set guard.
    fn audit(&self, y: &[f64], reference: &[f64], step: usize, t: f64) -> Result<(), CoreError> {
        let n = self.grid.n();
        for alpha in 0..self.spec.n_x() {
            for i in 0..n {
                let v = y[alpha * n + i];
                if !v.is_finite() {
                    return Err(CoreError::BlowUp {
                        state: self.spec.ctx().state_names()[alpha].clone(),
                        node: i,
                        z: self.grid.z(i),
                        step,
                        t,
                    });
                }
            }
        }
        for &alpha in &self.config.require_positive {
            for i in 0..n {
                if y[alpha * n + i] * reference[alpha * n + i] <= 0.0 {
                    return Err(CoreError::SingularSet {
                        state: self.spec.ctx().state_names()[alpha].clone(),
                        node: i,
                        z: self.grid.z(i),
                        step,
                        t,
                    });
                }
            }
        }
        Ok(())
    }
}

/// Integrate the semi-discretized system. `init` holds one value list per
/// state, each of length N.
pub fn simulate(
    spec: &SystemSpec,
    init: &[Vec<f64>],
    config: &SimConfig,
) -> Result<Trajectory, CoreError> {
    let engine = Engine::new(spec, config)?;
    let grid = engine.grid;
    let n = grid.n();
    let n_x = spec.n_x();
    if init.len() != n_x || init.iter().any(|v| v.len() != n) {
        return Err(CoreError::InvalidConfig(format!(
            "initial data must provide {n_x} states of {n} nodes"
        )));
    }
    let mut s = engine.scratch();
    let mut warnings: Vec<String> = engine
        .config
        .stability_advisories(spec)
        .into_iter()
        .collect();
    let mut y: Vec<f64> = Vec::with_capacity(n_x * n);
    for state in init {
        y.extend_from_slice(state);
    }
    // Initial boundary-condition audit (pre-closure).
    for (side, node) in [(BoundarySide::Left, 0usize), (BoundarySide::Right, n - 1)] {
        for (idx, _) in spec.boundary(side).iter().enumerate() {
            engine.fill_trace(&y, 0.0, node, &mut s);
            let compiled = match side {
                BoundarySide::Left => &engine.left[idx].0,
                BoundarySide::Right => &engine.right[idx].0,
            };
            let trace = std::mem::take(&mut s.trace);
            let v = compiled.eval_with(&trace, &mut s.stack);
            s.trace = trace;
            if v.abs() > 1e-8 {
                warnings.push(format!(
                    "initial data violates {side:?} boundary condition {} by {v:.3e}",
                    idx + 1
                ));
            }
        }
    }
    for &alpha in &config.require_positive {
        for i in 0..n {
            if y[alpha * n + i] <= 0.0 {
                return Err(CoreError::SingularSet {
                    state: spec.ctx().state_names()[alpha].clone(),
                    node: i,
                    z: grid.z(i),
                    step: 0,
                    t: 0.0,
                });
            }
        }
    }
    engine.close_boundaries(&mut y, 0.0, &mut s)?;

    let steps = (config.t_end / config.dt).ceil() as usize;
    let (output_node, snap_error) = grid.snap(spec.output_location_f64());
    if snap_error > 0.0 {
        warnings.push(format!(
            "output location {:.6} snapped to node {output_node} (distance {snap_error:.3e})",
            spec.output_location_f64()
        ));
    }
    let dt = config.dt;
    let mut trajectory = Trajectory {
        n,
        n_x,
        times: Vec::with_capacity(steps + 1),
        states: Vec::with_capacity(steps + 1),
        output: Vec::with_capacity(steps + 1),
        input: Vec::with_capacity(steps + 1),
        output_node,
        snap_error,
        warnings,
    };
    let mut k1 = vec![0.0; n_x * n];
    let mut k2 = vec![0.0; n_x * n];
    let mut k3 = vec![0.0; n_x * n];
    let mut k4 = vec![0.0; n_x * n];
    let mut stage = vec![0.0; n_x * n];
    let reference = y.clone();
    for step in 0..=steps {
        let t = step as f64 * dt;
        engine.audit(&y, &reference, step, t)?;
        trajectory.times.push(t);
        trajectory.states.push(y.clone());
        trajectory.output.push(engine.output_at(&y, t, output_node, &mut s));
        trajectory.input.push(engine.input_at(t, &mut s));
        if step == steps {
            break;
        }
        engine.derivatives(t, &y, &mut k1, &mut s);
        for i in 0..y.len() {
            stage[i] = y[i] + 0.5 * dt * k1[i];
        }
        engine.close_boundaries(&mut stage, t + 0.5 * dt, &mut s)?;
        engine.derivatives(t + 0.5 * dt, &stage, &mut k2, &mut s);
        for i in 0..y.len() {
            stage[i] = y[i] + 0.5 * dt * k2[i];
        }
        engine.close_boundaries(&mut stage, t + 0.5 * dt, &mut s)?;
        engine.derivatives(t + 0.5 * dt, &stage, &mut k3, &mut s);
        for i in 0..y.len() {
            stage[i] = y[i] + dt * k3[i];
        }
        engine.close_boundaries(&mut stage, t + dt, &mut s)?;
        engine.derivatives(t + dt, &stage, &mut k4, &mut s);
        for i in 0..y.len() {
            y[i] += dt / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
        }
        engine.close_boundaries(&mut y, (step + 1) as f64 * dt, &mut s)?;
    }
    Ok(trajectory)
}

/// Transport initial data along the generator's t = 0 flow, node by node.
/// Returns the transported data and the max-norm displacement.
pub fn transform_initial(
    field: &VerticalField,
    init: &[Vec<f64>],
    grid: Grid,
    eps: f64,
    steps: usize,
) -> Result<(Vec<Vec<f64>>, f64), CoreError> {
    let n = grid.n();
    let n_x = field.n_x();
    let mut transported = vec![vec![0.0; n]; n_x];
    let mut max_diff: f64 = 0.0;
    if eps == 0.0 {
        return Ok((init.to_vec(), 0.0));
    }
    let mut state = vec![0.0; n_x];
    for i in 0..n {
        for alpha in 0..n_x {
            state[alpha] = init[alpha][i];
        }
        let moved = flow_at_t0(field, grid.z(i), &state, eps, steps)?;
        for alpha in 0..n_x {
            transported[alpha][i] = moved[alpha];
            max_diff = max_diff.max((moved[alpha] - state[alpha]).abs());
        }
    }
    Ok((transported, max_diff))
}

/// Reconstruct all jet coordinates of a stored trajectory by central
/// differences and return the largest interior defect |x_t - f|.
pub fn residual_check(spec: &SystemSpec, traj: &Trajectory) -> Result<f64, CoreError> {
    if traj.times.len() < 3 {
        return Err(CoreError::InvalidConfig(
            "residual check needs at least 3 time samples".to_string(),
        ));
    }
    let grid = Grid::new(traj.n)?;
    let n = traj.n;
    let layout = rhs_slots(spec.ctx());
    let compiled: Vec<Compiled> = (0..spec.n_x())
        .map(|a| Compiled::new(spec.rhs(a), &layout))
        .collect::<Result<_, _>>()?;
    let mut slots = vec![0.0; 3 + 3 * spec.n_x()];
    let mut stack = Vec::with_capacity(32);
    let mut worst: f64 = 0.0;
    for k in 1..traj.times.len() - 1 {
        let dt = (traj.times[k + 1] - traj.times[k - 1]) / 2.0;
        slots[1] = traj.times[k];
        slots[2] = traj.input[k];
        for i in 1..n - 1 {
            slots[0] = grid.z(i);
            for beta in 0..spec.n_x() {
                let states = &traj.states[k][beta * n..(beta + 1) * n];
                slots[3 + 3 * beta] = states[i];
                slots[4 + 3 * beta] = d1(states, i, n, grid.dz());
                slots[5 + 3 * beta] = d2(states, i, n, grid.dz());
            }
            for (alpha, rhs) in compiled.iter().enumerate() {
                let x_t =
                    (traj.state(k + 1, alpha, i) - traj.state(k - 1, alpha, i)) / (2.0 * dt);
                let defect = (x_t - rhs.eval_with(&slots, &mut stack)).abs();
                worst = worst.max(defect);
            }
        }
    }
    Ok(worst)
}

#[derive(Debug, Clone)]
pub struct IndistRun {
    pub eps: f64,
    pub delta_x0: f64,
    pub delta_y: f64,
    pub residual: f64,
    pub pass: bool,
}

#[derive(Debug, Clone)]
pub struct IndistReport {
    pub check: CheckReport,
    pub self_discrepancy: f64,
    pub tol_out: f64,
    pub field_scale: f64,
    pub runs: Vec<IndistRun>,
    pub pass: bool,
}

/// Largest field-coefficient magnitude over the initial surface; gives the
/// scale against which the initial-condition displacement is judged.
fn field_scale_at_t0(
    field: &VerticalField,
    init: &[Vec<f64>],
    grid: Grid,
) -> Result<f64, CoreError> {
    let mut t0 = BTreeMap::new();
    t0.insert(JetCoordinate::t(), Expr::zero());
    let frozen: Vec<Expr> = (0..field.n_x())
        .map(|a| substitute(field.v_x(a), &t0))
        .collect();
    let mut scale: f64 = 0.0;
    for i in 0..grid.n() {
        let mut assignment = BTreeMap::new();
        assignment.insert(JetCoordinate::z(), grid.z(i));
        for alpha in 0..field.n_x() {
            assignment.insert(JetCoordinate::dependent(alpha, 0, 0), init[alpha][i]);
        }
        for e in &frozen {
            if let Ok(v) = eval(e, &assignment) {
                scale = scale.max(v.abs());
            }
        }
    }
    Ok(scale)
}

/// The end-to-end experiment: simulate, transport the initial condition by
/// each epsilon, re-simulate, and compare outputs. Indistinguishability
/// means the initial conditions move while the outputs agree to within the
/// solver's own discretization noise.
pub fn indist_experiment(
    spec: &SystemSpec,
    field: &VerticalField,
    init: &[Vec<f64>],
    config: &SimConfig,
    eps_list: &[f64],
    check_options: &CheckOptions,
    allow_failing_field: bool,
) -> Result<IndistReport, CoreError> {
    let check = check_nonobservability(spec, field, check_options)?;
    if check.aggregate == Aggregate::Fail && !allow_failing_field {
        return Err(CoreError::InvalidConfig(
            "field fails the non-observability check; pass the override to experiment anyway"
                .to_string(),
        ));
    }
    let grid = Grid::new(config.n)?;
    let base = simulate(spec, init, config)?;
    let mut half_config = config.clone();
    half_config.dt = config.dt / 2.0;
    let half = simulate(spec, init, &half_config)?;
    let mut self_discrepancy: f64 = 0.0;
    for (k, y) in base.output.iter().enumerate() {
        if let Some(y_half) = half.output.get(2 * k) {
            self_discrepancy = self_discrepancy.max((y - y_half).abs());
        }
    }
    // The half-dt run only sees the time-integration error; estimate the
    // spatial error by dropping every other node (coarsening keeps the
    // explicit step stable, refining would not) and re-running at the same
    // dt.  The coarse-vs-base gap over-estimates the base run's own spatial
    // error, which is what the output comparison has to be judged against.
    if config.n >= 9 && (config.n - 1) % 2 == 0 {
        let mut coarse_config = config.clone();
        coarse_config.n = (config.n + 1) / 2;
        let coarse_init: Vec<Vec<f64>> = init
            .iter()
            .map(|row| row.iter().copied().step_by(2).collect())
            .collect();
        let coarse = simulate(spec, &coarse_init, &coarse_config)?;
        for (y, y_coarse) in base.output.iter().zip(&coarse.output) {
            self_discrepancy = self_discrepancy.max((y - y_coarse).abs());
        }
    }
    let tol_out = INDIST_TOL_FLOOR + 10.0 * self_discrepancy;
    let field_scale = field_scale_at_t0(field, init, grid)?;
    let mut runs = Vec::new();
    for &eps in eps_list {
        let (transported, delta_x0) =
            transform_initial(field, init, grid, eps, INDIST_FLOW_STEPS)?;
        let moved = simulate(spec, &transported, config)?;
        let delta_y = base
            .output
            .iter()
            .zip(&moved.output)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0f64, f64::max);
        let residual = residual_check(spec, &moved)?;
        let pass = delta_y <= tol_out && delta_x0 >= 0.1 * eps.abs() * field_scale;
        runs.push(IndistRun {
            eps,
            delta_x0,
            delta_y,
            residual,
            pass,
        });
    }
    let pass = !runs.is_empty() && runs.iter().all(|r| r.pass);
    Ok(IndistReport {
        check,
        self_discrepancy,
        tol_out,
        field_scale,
        runs,
        pass,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::expr::Rat;
    use crate::parse::parse;
    use num::traits::Zero;

    fn nonlinear_wave() -> SystemSpec {
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

    fn linear_wave() -> SystemSpec {
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

    fn neumann_pivots(ctx: &JetContext) -> Vec<JetCoordinate> {
        vec![ctx.lookup("x1_z").unwrap()]
    }

    fn dirichlet_pivots(ctx: &JetContext) -> Vec<JetCoordinate> {
        vec![ctx.lookup("x1").unwrap()]
    }

    #[test]
    fn equilibrium_stays_at_rest() {
        let spec = nonlinear_wave();
        let ctx = spec.ctx().clone();
        let mut config = SimConfig::new(21, 1e-3, 0.1, Expr::zero());
        config.left_pivots = neumann_pivots(&ctx);
        config.right_pivots = neumann_pivots(&ctx);
        let init = vec![vec![0.0; 21], vec![0.0; 21]];
        let traj = simulate(&spec, &init, &config).unwrap();
        for snapshot in &traj.states {
            for v in snapshot {
                assert!(v.abs() < 1e-14);
            }
        }
        assert!(residual_check(&spec, &traj).unwrap() < 1e-12);
    }

    #[test]
    fn standing_wave_matches_exact_solution() {
        let spec = linear_wave();
        let ctx = spec.ctx().clone();
        let n = 101;
        let mut config = SimConfig::new(n, 1e-4, 0.5, Expr::zero());
        config.left_pivots = dirichlet_pivots(&ctx);
        config.right_pivots = dirichlet_pivots(&ctx);
        let grid = Grid::new(n).unwrap();
        let init = vec![
            (0..n)
                .map(|i| (2.0 * std::f64::consts::PI * grid.z(i)).sin())
                .collect(),
            vec![0.0; n],
        ];
        let traj = simulate(&spec, &init, &config).unwrap();
        // x1(z, 0.5) = sin(2 pi z) cos(pi) = -sin(2 pi z).
        let last = traj.states.last().unwrap();
        let mut worst: f64 = 0.0;
        for i in 0..n {
            let exact = -(2.0 * std::f64::consts::PI * grid.z(i)).sin();
            worst = worst.max((last[i] - exact).abs());
        }
        assert!(worst < 5e-3, "max-norm error {worst}");
        // The output at z = 1/2 stays within discretization error of zero.
        for y in &traj.output {
            assert!(y.abs() < 1e-3, "output {y}");
        }
    }

    #[test]
    fn blow_up_is_detected() {
        let ctx = JetContext::new(1);
        let spec = SystemSpec::new(
            ctx.clone(),
            vec![parse("x1^2", &ctx).unwrap()],
            vec![],
            vec![],
            parse("x1", &ctx).unwrap(),
            Rat::zero(),
        )
        .unwrap();
        let config = SimConfig::new(11, 0.05, 10.0, Expr::zero());
        let init = vec![vec![5.0; 11]];
        assert!(matches!(
            simulate(&spec, &init, &config),
            Err(CoreError::BlowUp { .. })
        ));
    }

    #[test]
    fn singular_set_positivity_guard() {
        let ctx = JetContext::new(1);
        let spec = SystemSpec::new(
            ctx.clone(),
            vec![parse("-1", &ctx).unwrap()],
            vec![],
            vec![],
            parse("x1", &ctx).unwrap(),
            Rat::zero(),
        )
        .unwrap();
        let mut config = SimConfig::new(11, 0.01, 2.0, Expr::zero());
        config.require_positive = vec![0];
        let init = vec![vec![0.5; 11]];
        assert!(matches!(
            simulate(&spec, &init, &config),
            Err(CoreError::SingularSet { .. })
        ));
    }

    #[test]
    fn transform_shifts_by_constant_for_translation_field() {
        let ctx = JetContext::new(2);
        let field = VerticalField::new(
            vec![Expr::one(), Expr::zero()],
            Expr::zero(),
            &ctx,
        )
        .unwrap();
        let grid = Grid::new(11).unwrap();
        let init = vec![vec![1.0; 11], vec![2.0; 11]];
        let (moved, delta) = transform_initial(&field, &init, grid, 0.5, 50).unwrap();
        assert!((delta - 0.5).abs() < 1e-12);
        for i in 0..11 {
            assert!((moved[0][i] - 1.5).abs() < 1e-12);
            assert!((moved[1][i] - 2.0).abs() < 1e-12);
        }
    }

    #[test]
    fn transform_with_zero_eps_is_identity() {
        let ctx = JetContext::new(1);
        let field = VerticalField::new(vec![parse("x1", &ctx).unwrap()], Expr::zero(), &ctx)
            .unwrap();
        let grid = Grid::new(11).unwrap();
        let init = vec![vec![1.25; 11]];
        let (moved, delta) = transform_initial(&field, &init, grid, 0.0, 10).unwrap();
        assert_eq!(moved, init);
        assert_eq!(delta, 0.0);
    }

    #[test]
    fn grid_snapping() {
        let grid = Grid::new(101).unwrap();
        assert_eq!(grid.snap(0.5), (50, 0.0));
        assert_eq!(grid.snap(0.0), (0, 0.0));
        let (node, err) = grid.snap(0.503);
        assert_eq!(node, 50);
        assert!((err - 0.003).abs() < 1e-12);
    }

    #[test]
    fn input_depending_on_state_is_rejected() {
        let spec = nonlinear_wave();
        let ctx = spec.ctx().clone();
        let mut config = SimConfig::new(21, 1e-3, 0.1, parse("x1", &ctx).unwrap());
        config.left_pivots = neumann_pivots(&ctx);
        config.right_pivots = neumann_pivots(&ctx);
        assert!(matches!(
            simulate(&spec, &[vec![0.0; 21], vec![0.0; 21]], &config),
            Err(CoreError::InvalidConfig(_))
        ));
    }

    #[test]
    fn stability_advisory_for_coarse_steps() {
        let ctx = JetContext::new(1);
        let spec = SystemSpec::new(
            ctx.clone(),
            vec![parse("x1_zz", &ctx).unwrap()],
            vec![parse("x1", &ctx).unwrap()],
            vec![parse("x1", &ctx).unwrap()],
            parse("x1", &ctx).unwrap(),
            Rat::zero(),
        )
        .unwrap();
        let config = SimConfig::new(101, 1e-2, 1.0, Expr::zero());
        assert!(!config.stability_advisories(&spec).is_empty());
        let fine = SimConfig::new(101, 1e-5, 1.0, Expr::zero());
        assert!(fine.stability_advisories(&spec).is_empty());
    }

    #[test]
    fn newton_closes_product_boundary_condition() {
        // Left end enforces x1_z = 0 and x1*x2 - 1 = 0 with pivots x1_z, x2.
        let ctx = JetContext::new(2);
        let spec = SystemSpec::new(
            ctx.clone(),
            vec![
                parse("x1_zz", &ctx).unwrap(),
                parse("x2_zz", &ctx).unwrap(),
            ],
            vec![
                parse("x1_z", &ctx).unwrap(),
                parse("x1*x2 - 1", &ctx).unwrap(),
            ],
            vec![parse("x1_z", &ctx).unwrap(), parse("x2_z", &ctx).unwrap()],
            parse("x1", &ctx).unwrap(),
            Rat::zero(),
        )
        .unwrap();
        let n = 21;
        let mut config = SimConfig::new(n, 1e-5, 0.001, Expr::zero());
        config.left_pivots = vec![ctx.lookup("x1_z").unwrap(), ctx.lookup("x2").unwrap()];
        config.right_pivots = vec![ctx.lookup("x1_z").unwrap(), ctx.lookup("x2_z").unwrap()];
        let grid = Grid::new(n).unwrap();
        let init: Vec<Vec<f64>> = vec![
            (0..n)
                .map(|i| 2.0 + (std::f64::consts::PI * grid.z(i)).cos())
                .collect(),
            (0..n)
                .map(|i| 1.0 / (2.0 + (std::f64::consts::PI * grid.z(i)).cos()))
                .collect(),
        ];
        let traj = simulate(&spec, &init, &config).unwrap();
        // The product condition holds at the left end of every snapshot.
        for snapshot in &traj.states {
            let product = snapshot[0] * snapshot[n];
            assert!((product - 1.0).abs() < 1e-9, "x1*x2 = {product}");
        }
    }
}
