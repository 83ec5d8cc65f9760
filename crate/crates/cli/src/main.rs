//! `jetsym`: symmetry and observability analysis of one-dimensional
//! second-order evolution systems with boundary control, plus a
//! method-of-lines simulator for watching the symmetries act.
//!
//! Exit codes: 0 = pass with every condition proven, 2 = pass with some
//! condition only numerically zero, 1 = fail, 3 = no surviving generator
//! (determine), 64 = spec parse/validation error.

mod report;
mod specdoc;

use std::collections::BTreeMap;
use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{anyhow, bail, Context, Result};
use clap::{Args, Parser, Subcommand};

use jetsym_core::checker::{check_nonobservability, check_symmetry, Aggregate, CheckOptions};
use jetsym_core::determining::{filter_solutions, generate, solve, Strategy};
use jetsym_core::sim::indist_experiment;
use jetsym_core::{residual_check, simulate, DEFAULT_SEED};

use report::Meta;
use specdoc::SpecDocument;

#[derive(Parser)]
#[command(
    name = "jetsym",
    version,
    about = "Symmetry-based non-observability analysis for boundary-controlled evolution systems"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// System description file.
    spec_file: PathBuf,
    /// Seed for the randomized zero tests and witness searches.
    #[arg(long, default_value_t = DEFAULT_SEED)]
    seed: u64,
}

#[derive(Args)]
struct ReductionFlags {
    /// Extend the solution-submanifold reduction with the mixed and second
    /// time-derivative consequences of the equations.
    #[arg(long)]
    extended_reduction: bool,
    /// Reduce the output residual through the solution submanifold before
    /// restricting it to the output location.
    #[arg(long)]
    reduce_output: bool,
}

#[derive(Subcommand)]
enum Command {
    /// Check the spec's generator for non-observability (requires a
    /// generator with no input component).
    Check {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        reduction: ReductionFlags,
    },
    /// Check the spec's generator for the symmetry conditions only.
    Symmetry {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        reduction: ReductionFlags,
    },
    /// Search the spec's ansatz space for non-observability generators.
    Determine {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        reduction: ReductionFlags,
        /// Equation-generation strategy.
        #[arg(long, value_parser = ["collect", "sample"], default_value = "collect")]
        strategy: String,
        /// Ansatz preset overriding the spec's [ansatz] section.
        #[arg(long)]
        basis: Option<String>,
    },
    /// Integrate the system and export the trajectory.
    Simulate {
        #[command(flatten)]
        common: Common,
        /// Write the trajectory as CSV to this file.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run the indistinguishability experiment along the spec's generator.
    Indist {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        reduction: ReductionFlags,
        /// Group parameters to test (repeat or comma-separate).
        #[arg(long, value_delimiter = ',', required = true)]
        eps: Vec<f64>,
        /// Run the experiment even if the generator fails the
        /// non-observability check (negative demonstrations).
        #[arg(long = "override")]
        override_check: bool,
        /// Write each perturbed trajectory as CSV into this directory.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let outcome = match &cli.command {
        Command::Check { common, reduction } => cmd_check(common, reduction, false),
        Command::Symmetry { common, reduction } => cmd_check(common, reduction, true),
        Command::Determine {
            common,
            reduction,
            strategy,
            basis,
        } => cmd_determine(common, reduction, strategy, basis.as_deref()),
        Command::Simulate { common, out } => cmd_simulate(common, out.as_deref()),
        Command::Indist {
            common,
            reduction,
            eps,
            override_check,
            out,
        } => cmd_indist(common, reduction, eps, *override_check, out.as_deref()),
    };
    match outcome {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(64)
        }
    }
}

fn load(common: &Common) -> Result<(SpecDocument, String)> {
    let text = std::fs::read_to_string(&common.spec_file)
        .with_context(|| format!("reading {}", common.spec_file.display()))?;
    let doc = SpecDocument::load(&text)?;
    Ok((doc, text))
}

fn check_options(doc: &SpecDocument, reduction: &ReductionFlags, seed: u64) -> CheckOptions {
    CheckOptions {
        extended_reduction: reduction.extended_reduction,
        reduce_output: reduction.reduce_output,
        left_pivots: doc.left_pivots.clone(),
        right_pivots: doc.right_pivots.clone(),
        seed: Some(seed),
    }
}

fn aggregate_exit(aggregate: Aggregate) -> u8 {
    match aggregate {
        Aggregate::PassProven => 0,
        Aggregate::PassNumeric => 2,
        Aggregate::Fail => 1,
    }
}

fn reduction_flag_map(reduction: &ReductionFlags) -> BTreeMap<String, String> {
    let mut flags = BTreeMap::new();
    flags.insert(
        "extended-reduction".to_string(),
        reduction.extended_reduction.to_string(),
    );
    flags.insert(
        "reduce-output".to_string(),
        reduction.reduce_output.to_string(),
    );
    flags
}

fn cmd_check(common: &Common, reduction: &ReductionFlags, symmetry_only: bool) -> Result<u8> {
    let (doc, text) = load(common)?;
    let field = doc
        .generator
        .as_ref()
        .ok_or_else(|| anyhow!("spec has no [generator] section"))?;
    let options = check_options(&doc, reduction, common.seed);
    let report = if symmetry_only {
        check_symmetry(&doc.spec, field, &options)
    } else {
        if !field.has_zero_input_component() {
            bail!("`check` requires a generator without input component (no vu); use `symmetry` for fields with one");
        }
        check_nonobservability(&doc.spec, field, &options)
    }
    .map_err(|e| anyhow!("{e}"))?;
    let meta = Meta::new(
        if symmetry_only { "symmetry" } else { "check" },
        &common.spec_file.display().to_string(),
        &text,
        common.seed,
        reduction_flag_map(reduction),
    );
    report::print(&report::check_json(meta, &report, &doc.ctx));
    Ok(aggregate_exit(report.aggregate))
}

fn cmd_determine(
    common: &Common,
    reduction: &ReductionFlags,
    strategy: &str,
    basis: Option<&str>,
) -> Result<u8> {
    let (doc, text) = load(common)?;
    let ansatz = doc.resolve_ansatz(basis)?;
    let options = check_options(&doc, reduction, common.seed);
    let strategy_enum = match strategy {
        "collect" => Strategy::CoefficientCollection,
        "sample" => Strategy::Sampling,
        other => bail!("unknown strategy `{other}`"),
    };
    let system =
        generate(&doc.spec, &ansatz, strategy_enum, &options).map_err(|e| anyhow!("{e}"))?;
    let nullspace = solve(&system);
    let survivors =
        filter_solutions(&nullspace, &doc.spec, &options, &ansatz).map_err(|e| anyhow!("{e}"))?;
    let mut flags = reduction_flag_map(reduction);
    flags.insert("strategy".to_string(), strategy.to_string());
    if let Some(b) = basis {
        flags.insert("basis".to_string(), b.to_string());
    }
    let meta = Meta::new(
        "determine",
        &common.spec_file.display().to_string(),
        &text,
        common.seed,
        flags,
    );
    let json = report::DetermineJson {
        meta,
        strategy: strategy.to_string(),
        unknowns: system.n_unknowns(),
        equations: system.n_equations(),
        float_mode: system.is_float_mode(),
        nullspace_dimension: nullspace.len(),
        survivors: survivors
            .iter()
            .map(|s| report::survivor_json(s, &doc.ctx))
            .collect(),
    };
    report::print(&json);
    Ok(if survivors.is_empty() { 3 } else { 0 })
}

fn cmd_simulate(common: &Common, out: Option<&std::path::Path>) -> Result<u8> {
    let (doc, text) = load(common)?;
    let sim = doc
        .sim
        .as_ref()
        .ok_or_else(|| anyhow!("spec has no [sim] section"))?;
    let init = doc.initial_values()?;
    let trajectory = simulate(&doc.spec, &init, &sim.config).map_err(|e| anyhow!("{e}"))?;
    let residual = residual_check(&doc.spec, &trajectory).map_err(|e| anyhow!("{e}"))?;
    let csv_file = out
        .map(|path| -> Result<String> {
            std::fs::write(path, trajectory.to_csv(&doc.ctx))
                .with_context(|| format!("writing {}", path.display()))?;
            Ok(path.display().to_string())
        })
        .transpose()?;
    let (min, max, max_abs) = trajectory.output.iter().fold(
        (f64::INFINITY, f64::NEG_INFINITY, 0.0f64),
        |(lo, hi, m), &y| (lo.min(y), hi.max(y), m.max(y.abs())),
    );
    let meta = Meta::new(
        "simulate",
        &common.spec_file.display().to_string(),
        &text,
        common.seed,
        BTreeMap::new(),
    );
    report::print(&report::SimulateJson {
        meta,
        n: sim.config.n,
        dt: sim.config.dt,
        t_end: sim.config.t_end,
        samples: trajectory.times.len(),
        output_node: trajectory.output_node,
        output_snap_error: trajectory.snap_error,
        output_min: min,
        output_max: max,
        max_abs_output: max_abs,
        max_interior_residual: residual,
        warnings: trajectory.warnings.clone(),
        csv_file,
    });
    Ok(0)
}

fn cmd_indist(
    common: &Common,
    reduction: &ReductionFlags,
    eps: &[f64],
    override_check: bool,
    out: Option<&std::path::Path>,
) -> Result<u8> {
    let (doc, text) = load(common)?;
    let field = doc
        .generator
        .as_ref()
        .ok_or_else(|| anyhow!("spec has no [generator] section"))?;
    let sim = doc
        .sim
        .as_ref()
        .ok_or_else(|| anyhow!("spec has no [sim] section"))?;
    let init = doc.initial_values()?;
    let options = check_options(&doc, reduction, common.seed);
    let experiment = indist_experiment(
        &doc.spec,
        field,
        &init,
        &sim.config,
        eps,
        &options,
        override_check,
    )
    .map_err(|e| anyhow!("{e}"))?;
    if let Some(dir) = out {
        std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
        // Re-simulate the perturbed runs for export; runs are deterministic.
        use jetsym_core::sim::{transform_initial, Grid, INDIST_FLOW_STEPS};
        let grid = Grid::new(sim.config.n).map_err(|e| anyhow!("{e}"))?;
        let base = simulate(&doc.spec, &init, &sim.config).map_err(|e| anyhow!("{e}"))?;
        std::fs::write(dir.join("base.csv"), base.to_csv(&doc.ctx))?;
        for (i, &e) in eps.iter().enumerate() {
            let (transported, _) = transform_initial(field, &init, grid, e, INDIST_FLOW_STEPS)
                .map_err(|err| anyhow!("{err}"))?;
            let traj =
                simulate(&doc.spec, &transported, &sim.config).map_err(|err| anyhow!("{err}"))?;
            std::fs::write(dir.join(format!("eps_{i}.csv")), traj.to_csv(&doc.ctx))?;
        }
    }
    let mut flags = reduction_flag_map(reduction);
    flags.insert(
        "eps".to_string(),
        eps.iter()
            .map(f64::to_string)
            .collect::<Vec<_>>()
            .join(","),
    );
    flags.insert("override".to_string(), override_check.to_string());
    let meta = Meta::new(
        "indist",
        &common.spec_file.display().to_string(),
        &text,
        common.seed,
        flags,
    );
    report::print(&report::indist_json(meta, &experiment));
    Ok(if experiment.pass { 0 } else { 1 })
}
