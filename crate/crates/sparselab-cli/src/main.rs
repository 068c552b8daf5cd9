mod config;

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;
use std::time::Instant;

use clap::{Parser, Subcommand};
use serde::Serialize;
use serde_json::json;

use sparselab::domination::{coverage_audit, cz_construct, DominationConfig};
use sparselab::dyadic::{build_shifted_adjacent, build_standard_lattice, random_sparse_family, select_witnesses, verify_sparse, DyadicLattice, SparseFamily};
use sparselab::operators::{sparse_basic, sparse_higher, sparse_plain};
use sparselab::space::{doubling_constant, DiscreteSpace};
use sparselab::verify::{default_battery, run_check, CheckReport, SCHEMA};
use sparselab::weights::{avg, weight_constant, WeightKind};
use sparselab::rng_for;

use config::ExperimentConfig;

#[derive(Parser, Debug)]
#[command(name = "sparselab", version, about = "Dyadic sparse operators, weights and sparse domination on finite spaces")]
struct Cli {
    /// Experiment file (JSON).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides the seed in the experiment file and in every check.
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Output directory.
    #[arg(long, global = true, default_value = ".")]
    out: PathBuf,
    /// Also write per-cube or per-point CSV tables.
    #[arg(long, global = true)]
    audit: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Space summary: masses, quasi-triangle and doubling constants.
    Space,
    /// Standard lattice and shifted adjacent systems.
    Lattice,
    /// Weight characteristics with argmax cubes.
    Constants,
    /// Sparse family and sparse operator values.
    Sparse,
    /// Stopping-time sparse domination certificate.
    Dominate,
    /// Run registry checks; exit 1 when any fails.
    Verify {
        /// Check ids; the experiment file's list, or the default battery, when empty.
        checks: Vec<String>,
        #[arg(long)]
        trials: Option<usize>,
        #[arg(long)]
        n: Option<usize>,
        /// Report path; defaults to <out>/report.json.
        #[arg(long)]
        report: Option<PathBuf>,
    },
    /// Sparse-sum throughput against n and |S|.
    Bench {
        #[arg(long, default_value_t = 20)]
        reps: usize,
    },
}

enum Status {
    Pass,
    Fail,
}

type CliResult<T> = Result<T, String>;

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(Status::Pass) => ExitCode::SUCCESS,
        Ok(Status::Fail) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}

fn err<E: std::fmt::Display>(e: E) -> String {
    e.to_string()
}

fn run(cli: Cli) -> CliResult<Status> {
    if let Some(t) = cli.threads {
        rayon::ThreadPoolBuilder::new().num_threads(t).build_global().map_err(err)?;
    }
    let mut cfg = ExperimentConfig::load(cli.config.as_deref())?;
    if let Some(s) = cli.seed {
        cfg.seed = s;
    }
    let space = Arc::new(cfg.space.build().map_err(err)?);
    match &cli.command {
        Command::Space => cmd_space(&cli, &cfg, &space),
        Command::Lattice => cmd_lattice(&cli, &cfg, &space),
        Command::Constants => cmd_constants(&cli, &cfg, &space),
        Command::Sparse => cmd_sparse(&cli, &cfg, &space),
        Command::Dominate => cmd_dominate(&cli, &cfg, &space),
        Command::Verify { checks, trials, n, report } => cmd_verify(&cli, &cfg, checks, *trials, *n, report.as_deref()),
        Command::Bench { reps } => cmd_bench(&cli, &cfg, *reps),
    }
}

/// Writes to `<path>.tmp` and renames, so a failed run leaves no partial file.
fn write_atomic(path: &Path, bytes: &[u8]) -> CliResult<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| format!("{}: {e}", dir.display()))?;
    }
    let tmp = path.with_extension(format!("{}.tmp", path.extension().and_then(|e| e.to_str()).unwrap_or("")));
    let mut f = fs::File::create(&tmp).map_err(|e| format!("{}: {e}", tmp.display()))?;
    f.write_all(bytes).and_then(|_| f.sync_all()).map_err(|e| format!("{}: {e}", tmp.display()))?;
    fs::rename(&tmp, path).map_err(|e| format!("{}: {e}", path.display()))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> CliResult<()> {
    let mut text = serde_json::to_string_pretty(value).map_err(err)?;
    text.push('\n');
    write_atomic(path, text.as_bytes())
}

fn write_csv(path: &Path, header: &[&str], rows: Vec<Vec<String>>) -> CliResult<()> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(header).map_err(err)?;
    for r in rows {
        w.write_record(&r).map_err(err)?;
    }
    let bytes = w.into_inner().map_err(err)?;
    write_atomic(path, &bytes)
}

fn standard(space: &Arc<DiscreteSpace>) -> CliResult<Arc<DyadicLattice>> {
    Ok(Arc::new(build_standard_lattice(Arc::clone(space)).map_err(err)?))
}

fn cmd_space(cli: &Cli, cfg: &ExperimentConfig, space: &Arc<DiscreteSpace>) -> CliResult<Status> {
    let doc = json!({
        "descriptor": space.descriptor(),
        "n": space.n(),
        "total_mass": space.total_mass(),
        "a0": space.a0(),
        "a0_declared": space.a0_declared(),
        "doubling_constant": doubling_constant(space),
        "diameter": space.diameter(),
        "seed": cfg.seed,
    });
    write_json(&cli.out.join("space.json"), &doc)?;
    println!("space: n = {}, A0 = {}, doubling = {}", space.n(), space.a0(), doc["doubling_constant"]);
    Ok(Status::Pass)
}

/// Configured family: listed cubes with greedy witnesses, or a seeded random family.
fn family(cfg: &ExperimentConfig, lattice: &Arc<DyadicLattice>) -> CliResult<SparseFamily> {
    match &cfg.sparse_cubes {
        Some(ids) => {
            if let Some(bad) = ids.iter().find(|&&id| id >= lattice.len()) {
                return Err(format!("sparse_cubes: cube {bad} does not exist ({} cubes)", lattice.len()));
            }
            select_witnesses(Arc::clone(lattice), ids, cfg.delta).map_err(err)
        }
        None => Ok(random_sparse_family(Arc::clone(lattice), cfg.delta, &mut rng_for(cfg.seed, 0))),
    }
}

fn cube_rows(lattice: &DyadicLattice, fam: Option<&SparseFamily>) -> Vec<Vec<String>> {
    let space = lattice.space();
    lattice
        .cubes()
        .iter()
        .map(|q| {
            let e = fam.and_then(|f| f.witness_of(q.id)).map(|e| space.measure(e).to_string()).unwrap_or_default();
            vec![q.id.to_string(), q.generation.to_string(), q.mass.to_string(), e]
        })
        .collect()
}

fn cmd_lattice(cli: &Cli, cfg: &ExperimentConfig, space: &Arc<DiscreteSpace>) -> CliResult<Status> {
    let lattice = standard(space)?;
    let fam = if cfg.sparse_cubes.is_some() { Some(family(cfg, &lattice)?) } else { None };
    let systems = if space.is_grid() && cfg.shifts > 0 { Some(build_shifted_adjacent(Arc::clone(space), cfg.shifts).map_err(err)?) } else { None };
    let cubes: Vec<_> = lattice
        .cubes()
        .iter()
        .map(|q| {
            json!({
                "id": q.id,
                "generation": q.generation,
                "members": q.members,
                "parent": q.parent,
                "children": q.children,
                "mass": q.mass,
                "witness": fam.as_ref().and_then(|f| f.witness_of(q.id)),
            })
        })
        .collect();
    let doc = json!({
        "n": space.n(),
        "cubes": cubes,
        "audit": lattice.audit(),
        "coverage": coverage_audit(&lattice),
        "systems": systems.as_ref().map(|s| s.lattices.iter().map(|l| l.len()).collect::<Vec<_>>()),
        "c_adj": systems.as_ref().map(|s| s.c_adj),
        "sparse": fam.as_ref().map(verify_sparse),
    });
    write_json(&cli.out.join("lattice.json"), &doc)?;
    write_csv(&cli.out.join("lattice.csv"), &["id", "k", "mu_q", "mu_e"], cube_rows(&lattice, fam.as_ref()))?;
    println!(
        "lattice: {} cubes, {} systems, c_adj = {}",
        lattice.len(),
        systems.as_ref().map_or(0, |s| s.lattices.len()),
        systems.as_ref().map_or(f64::NAN, |s| s.c_adj)
    );
    Ok(Status::Pass)
}

fn cmd_constants(cli: &Cli, cfg: &ExperimentConfig, space: &Arc<DiscreteSpace>) -> CliResult<Status> {
    let n = space.n();
    let lattice = standard(space)?;
    let kinds: Vec<WeightKind> = match &cfg.constants {
        Some(names) => names.iter().map(|s| WeightKind::parse(s)).collect::<Result<_, _>>().map_err(err)?,
        None => vec![WeightKind::Ap, WeightKind::AInfFujii, WeightKind::ApqStar, WeightKind::Apq],
    };
    let weights: Vec<Vec<f64>> = if cfg.weights.is_empty() {
        vec![vec![1.0; n]]
    } else {
        cfg.weights.iter().map(|w| w.weight(n)).collect::<Result<_, _>>()?
    };
    let m = weights.len();
    let exps = cfg.exponents.clone().unwrap_or_else(|| sparselab::weights::ExponentConfig::new(vec![2.0 * m as f64; m], 2.0));
    // u defaults to ∏ω_i^{q/p_i}
    let u = match &cfg.u {
        Some(v) => v.weight(n)?,
        None => (0..n).map(|x| (0..m).map(|i| weights[i][x].powf(exps.q / exps.p[i])).product()).collect(),
    };
    let mut rows = Vec::new();
    for kind in kinds {
        let c = weight_constant(kind, &lattice, Some(&u), &weights, &exps).map_err(err)?;
        println!("{:<20} {:>14.8} cube {}", kind.name(), c.value, c.argmax);
        rows.push(vec![kind.name(), c.value.to_string(), c.argmax.to_string()]);
    }
    write_csv(&cli.out.join("constants.csv"), &["kind", "value", "argmax"], rows)?;
    Ok(Status::Pass)
}

fn cmd_sparse(cli: &Cli, cfg: &ExperimentConfig, space: &Arc<DiscreteSpace>) -> CliResult<Status> {
    let n = space.n();
    let lattice = standard(space)?;
    let fam = family(cfg, &lattice)?;
    let report = verify_sparse(&fam);
    let fs = cfg.functions(n)?;
    let values = if fs.is_empty() {
        None
    } else if cfg.k.is_some() {
        let pair = cfg.pair(fs.len())?;
        let bs = cfg.symbols(n, fs.len())?;
        Some(sparse_higher(&fam, &bs, &fs, &pair, cfg.eta, cfg.r.unwrap_or(1.0)).map_err(err)?)
    } else if let Some(e) = &cfg.exponents {
        Some(sparse_basic(&fam, &fs, e).map_err(err)?)
    } else {
        Some(sparse_plain(&fam, &fs))
    };
    let doc = json!({
        "delta": fam.delta,
        "cubes": fam.cubes,
        "witnesses": fam.witnesses,
        "report": report,
        "values": values,
    });
    write_json(&cli.out.join("sparse.json"), &doc)?;
    if cli.audit {
        let rows = fam
            .cubes
            .iter()
            .zip(&fam.witnesses)
            .map(|(&id, e)| {
                let q = lattice.cube(id);
                let coeff: f64 = fs.iter().map(|f| avg(space, f, q, 1.0)).product();
                vec![id.to_string(), q.generation.to_string(), q.mass.to_string(), space.measure(e).to_string(), coeff.to_string()]
            })
            .collect();
        write_csv(&cli.out.join("sparse_cubes.csv"), &["id", "k", "mu_q", "mu_e", "coefficient"], rows)?;
    }
    println!("sparse: {} cubes, delta = {}, verified = {}", fam.len(), fam.delta, report.pass);
    Ok(if report.pass { Status::Pass } else { Status::Fail })
}

fn cmd_dominate(cli: &Cli, cfg: &ExperimentConfig, space: &Arc<DiscreteSpace>) -> CliResult<Status> {
    let n = space.n();
    let fs = cfg.functions(n)?;
    if fs.is_empty() {
        return Err("dominate: `functions` is empty".into());
    }
    let m = fs.len();
    let bs = cfg.symbols(n, m)?;
    let pair = cfg.pair(m)?;
    let systems = build_shifted_adjacent(Arc::clone(space), cfg.shifts.max(1)).map_err(err)?;
    let mut dc = DominationConfig::for_systems(&systems);
    if let Some(c) = cfg.dilation {
        dc = dc.with_dilation(c);
    }
    if let Some(d) = cfg.max_depth {
        dc = dc.with_max_depth(d);
    }
    if let Some(r) = cfg.r {
        dc.r = r;
    }
    let cert = cz_construct(&systems, &fs, &bs, &pair, cfg.eta, &dc).map_err(err)?;
    let report = cert.verify();
    let families: Vec<_> = cert
        .families
        .iter()
        .enumerate()
        .map(|(s, f)| json!({ "system": s, "delta": f.delta, "cubes": f.cubes, "witnesses": f.witnesses }))
        .collect();
    let doc = json!({
        "schema": SCHEMA,
        "pass": report.pass,
        "constant": cert.constant,
        "kappa_max": cert.kappa_max,
        "multiplicity": cert.multiplicity,
        "alpha": cert.alpha,
        "dilation": cert.dilation,
        "truncated": cert.truncated,
        "residual_bound": cert.residual_bound,
        "max_ratio": cert.max_ratio,
        "ratio": { "min": report.ratio_min, "median": report.ratio_median, "max": report.ratio_max },
        "families": families,
        "stages": cert.stages,
        "failures": report.failures,
    });
    write_json(&cli.out.join("certificate.json"), &doc)?;
    if cli.audit {
        let rows = (0..n)
            .map(|x| vec![x.to_string(), cert.lhs[x].to_string(), cert.rhs[x].to_string(), report.ratios[x].to_string()])
            .collect();
        write_csv(&cli.out.join("certificate_points.csv"), &["point", "lhs", "rhs", "ratio"], rows)?;
    }
    println!(
        "dominate: constant = {}, max ratio = {}, stages = {}, truncated = {}, pass = {}",
        cert.constant,
        cert.max_ratio,
        cert.stages.len(),
        cert.truncated,
        report.pass
    );
    Ok(if report.pass { Status::Pass } else { Status::Fail })
}

#[derive(Serialize)]
struct VerifyReport<'a> {
    schema: &'static str,
    pass: bool,
    seed: u64,
    reports: &'a [CheckReport],
}

fn cmd_verify(cli: &Cli, cfg: &ExperimentConfig, ids: &[String], trials: Option<usize>, n: Option<usize>, report: Option<&Path>) -> CliResult<Status> {
    let mut specs = if !ids.is_empty() {
        ids.iter().map(|id| sparselab::verify::CheckSpec::new(id).with_seed(cfg.seed)).collect()
    } else {
        match &cfg.checks {
            Some(list) => list.clone(),
            None => default_battery(cfg.seed),
        }
    };
    if specs.is_empty() {
        return Err("verify: the check list is empty".into());
    }
    for s in &mut specs {
        if let Some(seed) = cli.seed {
            s.seed = seed;
        }
        if trials.is_some() {
            s.trials = trials;
        }
        if n.is_some() {
            s.n = n;
        }
        sparselab::verify::registry_entry(&s.check_id).map_err(err)?;
    }
    let mut reports = Vec::with_capacity(specs.len());
    for s in &specs {
        let t = Instant::now();
        let r = run_check(s).map_err(err)?;
        println!(
            "{:<26} {:<5} trials {:>5}  worst ratio {:<12.6e} {:>8.1} ms",
            r.check_id,
            if r.pass { "pass" } else { "FAIL" },
            r.trials,
            r.worst_ratio,
            t.elapsed().as_secs_f64() * 1e3
        );
        reports.push(r);
    }
    let pass = reports.iter().all(|r| r.pass);
    let path = report.map(Path::to_path_buf).unwrap_or_else(|| cli.out.join("report.json"));
    write_json(&path, &VerifyReport { schema: SCHEMA, pass, seed: cfg.seed, reports: &reports })?;
    Ok(if pass { Status::Pass } else { Status::Fail })
}

fn cmd_bench(cli: &Cli, cfg: &ExperimentConfig, reps: usize) -> CliResult<Status> {
    let mut sizes = cfg.bench_sizes.clone().unwrap_or_else(|| vec![16, 32, 64, 128, 256]);
    sizes.sort_unstable();
    let mut rows = Vec::new();
    for n in sizes {
        let space = Arc::new(sparselab::space::uniform_grid(n).map_err(err)?);
        let lattice = standard(&space)?;
        let mut rng = rng_for(cfg.seed, n as u64);
        let f = sparselab::weights::random_function(n, &mut rng);
        let full = select_witnesses(Arc::clone(&lattice), &(0..lattice.len()).rev().collect::<Vec<_>>(), 0.0).map_err(err)?;
        for fam in [random_sparse_family(Arc::clone(&lattice), 0.5, &mut rng), full] {
            let start = Instant::now();
            let mut sink = 0.0;
            for _ in 0..reps.max(1) {
                sink += sparse_plain(&fam, std::slice::from_ref(&f))[0];
            }
            let per = start.elapsed().as_secs_f64() / reps.max(1) as f64;
            std::hint::black_box(sink);
            println!("n {:>5}  |S| {:>5}  {:>10.3} us", n, fam.len(), per * 1e6);
            rows.push(vec![n.to_string(), fam.len().to_string(), reps.to_string(), (per * 1e6).to_string()]);
        }
    }
    write_csv(&cli.out.join("bench.csv"), &["n", "cubes", "reps", "micros_per_eval"], rows)?;
    Ok(Status::Pass)
}
