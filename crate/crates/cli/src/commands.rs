//! The three subcommands: sample, project, eval.
//!
//! Everything here is orchestration. Systems come from a spec file or the
//! built-in catalog, densities and samplers from the core crate; this
//! module resolves configuration precedence (flag > spec file > catalog
//! recommendation), lifts inequality systems over slack variables, and
//! formats the results.

use std::collections::BTreeMap;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::json;

use variety_core::batch::RowMeta;
use variety_core::catalog;
use variety_core::endgame::{self, TrackControls, TrackStatus};
use variety_core::hmc::{self, HmcConfig, HmcError, HmcInit};
use variety_core::poly::PolySystem;
use variety_core::rejection::{self, RejectionConfig, RejectionMode};
use variety_core::semialg::{self, LiftedSystem};
use variety_core::{AxisBox, DensityModel, SampleBatch};

use crate::io;
use crate::spec_file::{self, broadcast_box};
use crate::{EvalArgs, Format, ProjectArgs, SampleArgs, Sampler};

/// Failures carry the process exit code: 2 for configuration and input
/// problems, 3 when every chain failed.
#[derive(Debug)]
pub struct CmdError {
    pub message: String,
    pub code: u8,
}

impl CmdError {
    fn config(message: impl Into<String>) -> Self {
        CmdError { message: message.into(), code: 2 }
    }
}

impl<E: std::error::Error> From<E> for CmdError {
    fn from(e: E) -> Self {
        CmdError::config(e.to_string())
    }
}

struct SystemConfig {
    system: PolySystem,
    sigma: Option<f64>,
    bounds: Option<AxisBox>,
    truncate: Option<AxisBox>,
    /// The `--system` argument as given, echoed in summaries.
    origin: String,
}

fn resolve_system(arg: &str) -> Result<SystemConfig, CmdError> {
    if Path::new(arg).is_file() {
        let text = std::fs::read_to_string(arg)
            .map_err(|e| CmdError::config(format!("cannot read {arg}: {e}")))?;
        let spec = spec_file::parse_spec_file(&text)
            .map_err(|e| CmdError::config(format!("{arg}: {e}")))?;
        return Ok(SystemConfig {
            system: spec.system,
            sigma: spec.sigma,
            bounds: spec.bounds,
            truncate: spec.truncate,
            origin: arg.to_string(),
        });
    }

    let (name, params_src) = match arg.split_once(':') {
        Some((n, p)) => (n, Some(p)),
        None => (arg, None),
    };
    let mut params = BTreeMap::new();
    if let Some(src) = params_src {
        for item in src.split(',').filter(|s| !s.is_empty()) {
            let (k, v) = item.split_once('=').ok_or_else(|| {
                CmdError::config(format!("system parameter `{item}` is not of the form key=value"))
            })?;
            let v: f64 = v.parse().map_err(|_| {
                CmdError::config(format!("system parameter `{k}` has non-numeric value `{v}`"))
            })?;
            params.insert(k.to_string(), v);
        }
    }
    let entry = catalog::build(name, &params).map_err(|e| {
        CmdError::config(format!(
            "`{arg}` is neither a readable file nor a catalog system: {e}"
        ))
    })?;
    Ok(SystemConfig {
        system: entry.system,
        sigma: entry.recommended_sigma,
        bounds: entry.recommended_box,
        truncate: None,
        origin: arg.to_string(),
    })
}

fn parse_box_flag(src: &str) -> Result<AxisBox, CmdError> {
    let vals: Vec<f64> = src
        .split(',')
        .map(|s| {
            s.trim()
                .parse::<f64>()
                .map_err(|_| CmdError::config(format!("--box: `{}` is not a number", s.trim())))
        })
        .collect::<Result<_, _>>()?;
    if vals.is_empty() || vals.len() % 2 != 0 {
        return Err(CmdError::config(format!(
            "--box expects lo,hi pairs, got {} values",
            vals.len()
        )));
    }
    let (lo, hi): (Vec<f64>, Vec<f64>) = vals.chunks(2).map(|c| (c[0], c[1])).unzip();
    AxisBox::new(lo, hi).map_err(|e| CmdError::config(format!("--box: {e}")))
}

/// A slack axis must cover every value the slack can take inside the box,
/// i.e. ±sqrt(max h). The maximum is estimated by a seeded scan; the seed
/// is fixed so identical invocations derive identical bounds.
fn slack_bounds(sys: &PolySystem, bounds: &AxisBox) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(0x5eed);
    let n = sys.n_vars();
    let mut maxima = vec![0.0f64; sys.inequalities().len()];
    for _ in 0..4096 {
        let u: Vec<f64> = (0..n).map(|_| rng.gen::<f64>()).collect();
        let x = bounds.point_from_unit(&u);
        for (m, p) in maxima.iter_mut().zip(sys.inequalities()) {
            *m = m.max(p.eval(&x).expect("dimension checked"));
        }
    }
    maxima.iter().map(|m| m.max(0.0).sqrt() * 1.1 + 1e-3).collect()
}

fn extend_with_slacks(b: &AxisBox, slack: &[f64]) -> AxisBox {
    let mut lo = b.lo().to_vec();
    let mut hi = b.hi().to_vec();
    lo.extend(slack.iter().map(|s| -s));
    hi.extend(slack.iter().copied());
    AxisBox::new(lo, hi).expect("slack bounds are positive")
}

/// Sampling setup shared by both samplers: lift inequalities, resolve the
/// box and dispersion, build the density.
struct Prepared {
    model: DensityModel,
    lift: Option<LiftedSystem>,
    bounds: AxisBox,
    sigma: f64,
}

fn prepare(cfg: &SystemConfig, args: &SampleArgs) -> Result<Prepared, CmdError> {
    let sigma = args
        .sigma
        .or(cfg.sigma)
        .ok_or_else(|| CmdError::config("no --sigma given and the system recommends none"))?;
    if !(sigma > 0.0) || !sigma.is_finite() {
        return Err(CmdError::config("--sigma must be a positive number"));
    }

    let n_orig = cfg.system.n_vars();
    let bounds = match &args.r#box {
        Some(src) => parse_box_flag(src)?,
        None => cfg.bounds.clone().ok_or_else(|| {
            CmdError::config(
                "no --box given and the system recommends none; \
                 rejection proposals and chain initialization both need one",
            )
        })?,
    };
    let bounds = broadcast_box(&bounds, n_orig).ok_or_else(|| {
        CmdError::config(format!(
            "box has {} axes but the system has {n_orig} variables",
            bounds.dim()
        ))
    })?;

    let (sampling_sys, lift) = if cfg.system.inequalities().is_empty() {
        (cfg.system.clone(), None)
    } else {
        let lift = semialg::lift_with_slacks(&cfg.system)?;
        (lift.system().clone(), Some(lift))
    };

    let slack = match &lift {
        Some(_) => slack_bounds(&cfg.system, &bounds),
        None => Vec::new(),
    };
    let bounds = extend_with_slacks(&bounds, &slack);

    let sigma2 = sigma * sigma;
    let mut model = if sampling_sys.n_equalities() == 1 {
        DensityModel::vn(sampling_sys, sigma2)?
    } else {
        DensityModel::mvn_isotropic(sampling_sys, sigma2)?
    };
    if let Some(t) = &cfg.truncate {
        let t = broadcast_box(t, n_orig).ok_or_else(|| {
            CmdError::config(format!(
                "truncate has {} axes but the system has {n_orig} variables",
                t.dim()
            ))
        })?;
        model = model.with_truncation(extend_with_slacks(&t, &slack))?;
    }

    Ok(Prepared { model, lift, bounds, sigma })
}

pub fn cmd_sample(args: &SampleArgs) -> Result<(), CmdError> {
    let cfg = resolve_system(&args.system)?;
    let prep = prepare(&cfg, args)?;

    let batch = match args.sampler {
        Sampler::Rejection => {
            let mode = match args.band {
                Some(eps) => RejectionMode::Band { epsilon: eps },
                None => RejectionMode::Density,
            };
            let rcfg = RejectionConfig {
                bounds: prep.bounds.clone(),
                n_proposals: args.n,
                seed: args.seed,
                mode,
            };
            rejection::sample_rejection(&prep.model, &rcfg)?
        }
        Sampler::Hmc => {
            if args.band.is_some() {
                return Err(CmdError::config("--band only applies to --sampler rejection"));
            }
            if prep.model.truncation().is_none() {
                eprintln!(
                    "warning: no truncation window set; on an unbounded variety the \
                     density may not normalize and chains can wander off"
                );
            }
            let mut hcfg = HmcConfig::new(HmcInit::Overdispersed(prep.bounds.clone()));
            hcfg.n_chains = args.chains;
            hcfg.n_warmup = args.warmup;
            hcfg.n_samples = args.n;
            hcfg.step_size = args.step_size;
            hcfg.n_leapfrog = args.leapfrog;
            hcfg.mass = args.mass;
            hcfg.target_accept = args.target_accept;
            hcfg.seed = args.seed;
            match hmc::run_chains(&prep.model, &hcfg) {
                Ok(b) => b,
                Err(e @ HmcError::AllChainsFailed(_)) => {
                    return Err(CmdError { message: e.to_string(), code: 3 })
                }
                Err(e) => return Err(e.into()),
            }
        }
    };

    let batch = if args.project {
        endgame::project_batch(
            prep.model.system(),
            &batch,
            &TrackControls::default(),
            args.seed,
        )?
    } else {
        batch
    };

    let batch = match &prep.lift {
        Some(lift) => semialg::marginalize(&batch, lift)?,
        None => batch,
    };

    let with_chain = matches!(args.sampler, Sampler::Hmc);
    let mut sink = io::open_sink(args.out.as_deref())?;
    match args.format {
        Format::Csv => {
            let header = sample_header(&batch, with_chain, args.project);
            io::write_csv(&mut sink, &header, sample_rows(&batch, with_chain, args.project))?;
        }
        Format::Json => {
            let header = sample_header(&batch, with_chain, args.project);
            let rows: Vec<serde_json::Value> = (0..batch.len())
                .map(|i| sample_row_json(&batch, i, &header, with_chain, args.project))
                .collect();
            let doc = json!({ "rows": rows, "summary": summary_json(&cfg, args, &prep, &batch) });
            serde_json::to_writer_pretty(&mut sink, &doc)?;
            use std::io::Write as _;
            writeln!(sink)?;
        }
    }
    use std::io::Write as _;
    sink.flush()?;

    let summary = summary_json(&cfg, args, &prep, &batch);
    let text = serde_json::to_string_pretty(&summary).expect("summary serializes");
    match &args.summary {
        Some(path) => std::fs::write(path, text + "\n")
            .map_err(|e| CmdError::config(format!("cannot write {}: {e}", path.display())))?,
        None => eprintln!("{text}"),
    }
    Ok(())
}

fn sample_header(batch: &SampleBatch, with_chain: bool, projected: bool) -> Vec<String> {
    let mut header = batch.names().to_vec();
    if with_chain {
        header.push("chain_id".to_string());
    }
    header.push("log_density".to_string());
    header.push("residual_norm".to_string());
    if projected {
        header.push("status".to_string());
        header.push("residual".to_string());
    }
    header
}

fn status_name(s: TrackStatus) -> &'static str {
    match s {
        TrackStatus::Converged => "converged",
        TrackStatus::Stalled => "stalled",
    }
}

fn sample_rows<'a>(
    batch: &'a SampleBatch,
    with_chain: bool,
    projected: bool,
) -> impl Iterator<Item = Vec<String>> + 'a {
    (0..batch.len()).map(move |i| {
        let meta = batch.meta(i);
        let mut row: Vec<String> = batch.row(i).iter().copied().map(io::format_value).collect();
        if with_chain {
            row.push(meta.chain_id.to_string());
        }
        row.push(io::format_value(meta.log_density));
        row.push(io::format_value(meta.residual_norm));
        if projected {
            let p = &batch.projection().expect("projected batch")[i];
            row.push(status_name(p.status).to_string());
            row.push(io::format_value(p.residual));
        }
        row
    })
}

fn sample_row_json(
    batch: &SampleBatch,
    i: usize,
    header: &[String],
    with_chain: bool,
    projected: bool,
) -> serde_json::Value {
    let mut obj = serde_json::Map::new();
    let meta = batch.meta(i);
    for (name, v) in header.iter().zip(batch.row(i)) {
        obj.insert(name.clone(), json!(v));
    }
    if with_chain {
        obj.insert("chain_id".to_string(), json!(meta.chain_id));
    }
    obj.insert("log_density".to_string(), json!(meta.log_density));
    obj.insert("residual_norm".to_string(), json!(meta.residual_norm));
    if projected {
        let p = &batch.projection().expect("projected batch")[i];
        obj.insert("status".to_string(), json!(status_name(p.status)));
        obj.insert("residual".to_string(), json!(p.residual));
    }
    serde_json::Value::Object(obj)
}

fn summary_json(
    cfg: &SystemConfig,
    args: &SampleArgs,
    prep: &Prepared,
    batch: &SampleBatch,
) -> serde_json::Value {
    let s = &batch.summary;
    let chains: Vec<serde_json::Value> = s
        .chains
        .iter()
        .map(|c| {
            json!({
                "chain_id": c.chain_id,
                "transitions": c.transitions,
                "accepted": c.accepted,
                "acceptance_rate": c.acceptance_rate,
                "step_size": c.step_size,
                "clamped_gram_evals": c.clamped_gram_evals,
                "error": c.error,
            })
        })
        .collect();
    json!({
        "system": cfg.origin,
        "system_hash": io::system_hash(&cfg.system),
        "config": {
            "sampler": match args.sampler { Sampler::Rejection => "rejection", Sampler::Hmc => "hmc" },
            "n": args.n,
            "chains": args.chains,
            "sigma": prep.sigma,
            "seed": args.seed,
            "box": { "lo": prep.bounds.lo(), "hi": prep.bounds.hi() },
            "project": args.project,
            "band": args.band,
        },
        "proposed": s.proposed,
        "accepted": s.accepted,
        "acceptance_rate": s.acceptance_rate,
        "rank_deficient": s.rank_deficient,
        "chains": chains,
        "projection": s.projection.as_ref().map(|p| json!({
            "converged": p.converged,
            "stalled": p.stalled,
        })),
    })
}

/// Assemble a batch from the var-named columns of a CSV table. Extra
/// columns are ignored; missing ones are an error.
fn batch_from_table(
    table: &io::CsvTable,
    sys: &PolySystem,
    path: &Path,
) -> Result<SampleBatch, CmdError> {
    let names = sys.context().names();
    let cols: Vec<usize> = names
        .iter()
        .map(|n| {
            table.column(n).ok_or_else(|| {
                CmdError::config(format!("{}: missing column `{n}`", path.display()))
            })
        })
        .collect::<Result<_, _>>()?;
    let mut batch = SampleBatch::new(names.to_vec());
    for r in 0..table.rows.len() {
        let point: Vec<f64> = cols
            .iter()
            .map(|&c| table.parse_float(r, c).map_err(CmdError::config))
            .collect::<Result<_, _>>()?;
        batch.push_row(
            &point,
            RowMeta {
                proposal_index: r as u64,
                chain_id: 0,
                log_density: 0.0,
                residual_norm: 0.0,
                accepted: true,
            },
        );
    }
    Ok(batch)
}

pub fn cmd_project(args: &ProjectArgs) -> Result<(), CmdError> {
    let cfg = resolve_system(&args.system)?;
    if !cfg.system.inequalities().is_empty() {
        return Err(CmdError::config(
            "projection targets a variety; this system has inequalities \
             (sample with the lift instead, or project the lifted coordinates)",
        ));
    }
    let table = io::read_csv(&args.r#in).map_err(CmdError::config)?;
    if table.header.is_empty() {
        // Nothing to project: mirror the emptiness rather than erroring.
        return Ok(());
    }
    let batch = batch_from_table(&table, &cfg.system, &args.r#in)?;
    let projected =
        endgame::project_batch(&cfg.system, &batch, &TrackControls::default(), args.seed)?;

    let mut header = cfg.system.context().names().to_vec();
    header.push("status".to_string());
    header.push("residual".to_string());
    let ann = projected.projection().expect("projected batch");
    let rows = (0..projected.len()).map(|i| {
        let mut row: Vec<String> =
            projected.row(i).iter().copied().map(io::format_value).collect();
        row.push(status_name(ann[i].status).to_string());
        row.push(io::format_value(ann[i].residual));
        row
    });
    let mut sink = io::open_sink(args.out.as_deref())?;
    io::write_csv(&mut sink, &header, rows)?;
    use std::io::Write as _;
    sink.flush()?;
    Ok(())
}

fn parse_objective(src: &str) -> Result<Vec<u64>, CmdError> {
    let (name, params) = match src.split_once(':') {
        Some((n, p)) => (n, p),
        None => (src, ""),
    };
    if name != "loglik" {
        return Err(CmdError::config(format!(
            "unknown objective `{name}` (available: loglik:counts=a,b,...)"
        )));
    }
    let counts_src = params.strip_prefix("counts=").ok_or_else(|| {
        CmdError::config("loglik needs counts, e.g. loglik:counts=8,8,1,3")
    })?;
    counts_src
        .split(',')
        .map(|s| {
            s.trim()
                .parse::<u64>()
                .map_err(|_| CmdError::config(format!("bad count `{}`", s.trim())))
        })
        .collect()
}

pub fn cmd_eval(args: &EvalArgs) -> Result<(), CmdError> {
    let cfg = resolve_system(&args.system)?;
    let counts = parse_objective(&args.objective)?;
    if counts.len() != cfg.system.n_vars() {
        return Err(CmdError::config(format!(
            "{} counts for a {}-variable system",
            counts.len(),
            cfg.system.n_vars()
        )));
    }
    let table = io::read_csv(&args.r#in).map_err(CmdError::config)?;
    if table.header.is_empty() {
        return Ok(());
    }
    let names = cfg.system.context().names();
    let cols: Vec<usize> = names
        .iter()
        .map(|n| {
            table.column(n).ok_or_else(|| {
                CmdError::config(format!("{}: missing column `{n}`", args.r#in.display()))
            })
        })
        .collect::<Result<_, _>>()?;

    let mut header = table.header.clone();
    header.push("objective".to_string());
    let mut out_rows = Vec::with_capacity(table.rows.len());
    for r in 0..table.rows.len() {
        let p: Vec<f64> = cols
            .iter()
            .map(|&c| table.parse_float(r, c).map_err(CmdError::config))
            .collect::<Result<_, _>>()?;
        let val = catalog::log_likelihood_multinomial(&p, &counts);
        let mut row = table.rows[r].clone();
        row.push(io::format_value(val));
        out_rows.push(row);
    }
    let mut sink = io::open_sink(args.out.as_deref())?;
    io::write_csv(&mut sink, &header, out_rows.into_iter())?;
    use std::io::Write as _;
    sink.flush()?;
    Ok(())
}
