//! The pipeline drivers behind each subcommand.

use std::path::{Path, PathBuf};

use regloss_core::advect::SolutionHandle;
use regloss_core::data::DataSpec;
use regloss_core::field::{norm_sq, Cube, Domain, FieldRef};
use regloss_core::norms::{growth_curve, velocity_norm_series, GrowthRow, VelocityNorms};
use regloss_core::plan::{
    default_schedule, find_density_point, gamma_of, plan_cubes, series_field, series_solution,
    verify_plan, CubePlan, DensityPoint, PlanChecks,
};
use regloss_core::shears::select_shear;
use regloss_core::track::TrackLayout;
use regloss_core::Error;
use serde::{Deserialize, Serialize};

use crate::config::ExperimentConfig;
use crate::error::CliResult;
use crate::report::{git_describe, write_atomic, Cell, Csv, Plot, Series};

/// A validated configuration with its output directory and provenance stamps.
pub struct Context {
    pub config: ExperimentConfig,
    pub out: PathBuf,
    pub hash: String,
    pub git: String,
}

impl Context {
    pub fn new(config: ExperimentConfig) -> Self {
        Self {
            out: PathBuf::from(&config.out),
            hash: config.hash(),
            git: git_describe(),
            config,
        }
    }

    pub fn path(&self, name: &str) -> PathBuf {
        self.out.join(name)
    }

    fn write_csv(&self, name: &str, csv: Csv) -> CliResult<PathBuf> {
        let p = self.path(name);
        write_atomic(&p, csv.finish(&self.hash, &self.git).as_bytes())?;
        Ok(p)
    }

    fn write_text(&self, name: &str, text: &str) -> CliResult<PathBuf> {
        let p = self.path(name);
        write_atomic(&p, text.as_bytes())?;
        Ok(p)
    }

    pub fn datum(&self) -> CliResult<FieldRef> {
        Ok(self.config.datum.build(self.config.dim)?)
    }
}

/// Region the shears are measured on: one period of a torus datum, the datum's own cube, or `Ω₀`.
pub fn shear_region(domain: &Domain) -> Cube {
    match domain {
        Domain::Torus { dim, period } => Cube::from_bounds(0.0, *period, *dim),
        Domain::Cube(c) => c.clone(),
        Domain::Whole(d) => Cube::unit(*d),
    }
}

#[derive(Serialize)]
struct ShearCertificate {
    datum: String,
    region: Cube,
    amplitude: f64,
    time: f64,
    n_quad: usize,
    winner: String,
    axis: usize,
    target: usize,
    profile: u8,
    sign: u8,
    ratio: f64,
    quad_error: f64,
    bound: f64,
    certified: bool,
    base_mass: f64,
    sum_defect: f64,
}

pub fn cmd_select_shear(ctx: &Context) -> CliResult<()> {
    let cfg = &ctx.config;
    let datum = ctx.datum()?;
    let region = shear_region(&datum.domain());
    let n = cfg.shear_quad();
    let sel = select_shear(&*datum, &region, cfg.shear.amplitude, cfg.shear.time, n)?;
    let mut csv = Csv::new(&[
        "axis",
        "target",
        "profile",
        "sign",
        "ratio",
        "selected",
        "sum_defect",
    ]);
    for (spec, ratio) in &sel.ratios {
        csv.row(&[
            Cell::U(spec.axis),
            Cell::U(spec.target()),
            Cell::U(spec.profile_index as usize),
            Cell::U(spec.sign_index as usize),
            Cell::F(*ratio),
            Cell::B(*spec == sel.spec),
            Cell::F(sel.sum_defect),
        ]);
    }
    let csv_path = ctx.write_csv("shears.csv", csv)?;
    let cert = ShearCertificate {
        datum: cfg.datum.label(),
        region: region.clone(),
        amplitude: cfg.shear.amplitude,
        time: cfg.shear.time,
        n_quad: n,
        winner: sel.spec.to_string(),
        axis: sel.spec.axis,
        target: sel.spec.target(),
        profile: sel.spec.profile_index,
        sign: sel.spec.sign_index,
        ratio: sel.ratio,
        quad_error: sel.quad_error,
        bound: sel.bound,
        certified: sel.certified(),
        base_mass: sel.base_mass,
        sum_defect: sel.sum_defect,
    };
    ctx.write_text(
        "shears.json",
        &(serde_json::to_string_pretty(&cert)? + "\n"),
    )?;
    println!("datum      {}", cfg.datum.label());
    println!("region     {region}");
    println!(
        "winner     {} (axis {} -> {})",
        sel.spec,
        sel.spec.axis,
        sel.spec.target()
    );
    println!("ratio      {} +- {}", sel.ratio, sel.quad_error);
    println!("bound      {}", sel.bound);
    println!("certified  {}", sel.certified());
    println!("sum defect {:e}", sel.sum_defect);
    println!("wrote {}", csv_path.display());
    Ok(())
}

/// Everything `plan` writes to `plan.json`.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct PlanFile {
    pub config_hash: String,
    pub datum: DataSpec,
    pub density: DensityPoint,
    /// Invariants recomputed from the stored scalars, masses re-integrated.
    pub verified: PlanChecks,
    pub plan: CubePlan,
}

/// Density point and cube plan for the configured datum.
pub fn compute_plan(
    cfg: &ExperimentConfig,
    datum: FieldRef,
) -> CliResult<(DensityPoint, CubePlan)> {
    let dp = find_density_point(&*datum, cfg.probe_r, &cfg.density_options())?;
    let plan = plan_cubes(datum, cfg.n_slots, &dp, &cfg.plan_options())?;
    Ok((dp, plan))
}

fn print_plan(file: &PlanFile) {
    let p = &file.plan;
    println!("x*        {:?}", p.x_star);
    println!("delta_bar {}", p.delta_bar);
    println!(
        "{:>4} {:>12} {:>12} {:>12} {:>9} {:>8}",
        "n", "lambda", "tau", "mass", "halvings", "beta"
    );
    for s in &p.slots {
        let beta = s
            .beta()
            .map(|b| format!("{b:.4}"))
            .unwrap_or_else(|| "-".into());
        println!(
            "{:>4} {:>12.5e} {:>12.5e} {:>12.5e} {:>9} {:>8}",
            s.n, s.lambda, s.tau, s.mass, s.halvings, beta
        );
    }
    for ((name, stored), (_, again)) in p.checks.rows().iter().zip(file.verified.rows()) {
        let ok = *stored && again;
        println!("{:<18} {}", name, if ok { "pass" } else { "FAIL" });
    }
}

pub fn cmd_plan(ctx: &Context) -> CliResult<PlanFile> {
    let datum = ctx.datum()?;
    let (density, plan) = compute_plan(&ctx.config, datum.clone())?;
    let verified = verify_plan(&plan, &*datum, ctx.config.plan_options().mass_quad)?;
    let file = PlanFile {
        config_hash: ctx.hash.clone(),
        datum: ctx.config.datum.clone(),
        density,
        verified,
        plan,
    };
    ctx.write_text("plan.json", &(serde_json::to_string_pretty(&file)? + "\n"))?;
    print_plan(&file);
    println!("wrote {}", ctx.path("plan.json").display());
    Ok(file)
}

/// The plan in the output directory if it was made from this configuration, else a fresh one.
pub fn load_or_plan(ctx: &Context) -> CliResult<PlanFile> {
    if let Ok(text) = std::fs::read_to_string(ctx.path("plan.json")) {
        if let Ok(file) = serde_json::from_str::<PlanFile>(&text) {
            if file.config_hash == ctx.hash {
                return Ok(file);
            }
        }
        eprintln!("plan.json does not match this configuration; replanning");
    }
    cmd_plan(ctx)
}

fn growth_csv(rows: &[GrowthRow]) -> Csv {
    let mut csv = Csv::new(&[
        "t",
        "cube",
        "measured_h1",
        "lower_bound_log",
        "aggregate_log",
    ]);
    for r in rows {
        csv.row(&[
            Cell::F(r.t),
            Cell::U(r.cube + 1),
            Cell::F(r.measured_h1),
            Cell::Opt(r.lower_bound_log),
            Cell::F(r.aggregate_log),
        ]);
    }
    csv
}

fn growth_plot(rows: &[GrowthRow], n_cubes: usize, tau1: f64) -> Plot {
    let mut series = Vec::new();
    for k in 0..n_cubes {
        let mine: Vec<&GrowthRow> = rows.iter().filter(|r| r.cube == k).collect();
        series.push(Series {
            name: format!("measured Q{}", k + 1),
            points: mine.iter().map(|r| (r.t / tau1, r.measured_h1)).collect(),
            scatter: false,
        });
        series.push(Series {
            name: format!("bound Q{}", k + 1),
            points: mine
                .iter()
                .filter_map(|r| Some((r.t / tau1, r.lower_bound_log?.exp())))
                .collect(),
            scatter: true,
        });
    }
    Plot {
        title: "gradient growth on the slot supports".into(),
        x_label: "t / tau_1".into(),
        y_label: "||grad rho||_L2".into(),
        log_y: true,
        series,
    }
}

/// Rows `(series, n, value, tail_bound)` for the solution, field and velocity series.
struct SeriesTable {
    csv: Csv,
    curves: Vec<Series>,
}

impl SeriesTable {
    fn push(&mut self, name: &str, n: usize, value: f64, tail: Option<f64>) {
        self.csv.row(&[
            Cell::S(name.into()),
            Cell::U(n),
            Cell::F(value),
            Cell::Opt(tail),
        ]);
        match self.curves.last_mut() {
            Some(c) if c.name == name => c.points.push((n as f64, value)),
            _ => self.curves.push(Series {
                name: name.into(),
                points: vec![(n as f64, value)],
                scatter: false,
            }),
        }
    }
}

fn fmt_num(x: f64) -> String {
    format!("{x}")
}

pub struct SimulateSummary {
    pub growth: Vec<GrowthRow>,
    pub velocity: Vec<VelocityNorms>,
    pub violations: usize,
}

pub fn cmd_simulate(ctx: &Context) -> CliResult<SimulateSummary> {
    let cfg = &ctx.config;
    let file = load_or_plan(ctx)?;
    let plan = &file.plan;
    let datum = ctx.datum()?;
    let handle = SolutionHandle::new(plan, datum)?;
    let tau1 = plan.slots[0].tau;

    let times: Vec<f64> = cfg.time_samples.iter().map(|s| s * tau1).collect();
    let cubes: Vec<Cube> = plan.slots.iter().map(|s| s.support()).collect();
    let growth = growth_curve(&handle, plan, &cubes, &times, cfg.growth_quad())?;
    let violations = growth
        .iter()
        .filter(|r| r.lower_bound_log.is_some_and(|b| r.measured_h1.ln() < b))
        .count();
    ctx.write_csv("growth.csv", growth_csv(&growth))?;
    ctx.write_text(
        "growth.svg",
        &growth_plot(&growth, cubes.len(), tau1).render(),
    )?;

    let mut table = SeriesTable {
        csv: Csv::new(&["series", "n", "value", "tail_bound"]),
        curves: Vec::new(),
    };
    let sched = default_schedule(cfg.series.n);
    for t in [cfg.series.t, 0.0] {
        let name = format!("solution_log_t={}", fmt_num(t));
        for (k, v) in series_solution(&sched, t, cfg.dim)?.into_iter().enumerate() {
            table.push(&name, k + 1, v, None);
        }
    }
    let name = format!("plan_solution_log_t={}", fmt_num(cfg.series.t));
    for (k, v) in series_solution(&plan.scales(), cfg.series.t, cfg.dim)?
        .into_iter()
        .enumerate()
    {
        table.push(&name, k + 1, v, None);
    }
    let solution_curves = table.curves.len();

    let mut gammas: Vec<f64> = Vec::new();
    for &(r, p) in &cfg.norms {
        let g = gamma_of(r, p, cfg.dim);
        if g > 0.0 && !gammas.contains(&g) {
            gammas.push(g);
        }
    }
    for &g in &gammas {
        let name = format!("field_gamma={}", fmt_num(g));
        for n in 1..=sched.len() {
            let s = series_field(&sched[..n], g)?;
            table.push(&name, n, s.partial, s.tail);
        }
    }

    let mut velocity = Vec::new();
    let mut vcsv = Csv::new(&[
        "r",
        "p",
        "gamma",
        "slot",
        "lambda",
        "tau",
        "factor",
        "reference",
        "value",
    ]);
    for &(r, p) in &cfg.norms {
        match velocity_norm_series(plan, r, p, cfg.norms_quad()) {
            Ok(v) => {
                let name = format!("velocity_norm_r={}_p={}", fmt_num(r), fmt_num(p));
                let max_ref = v.slots.iter().map(|s| s.reference).fold(0.0, f64::max);
                let mut acc = 0.0;
                for (k, s) in v.slots.iter().enumerate() {
                    acc += s.value;
                    let tail = series_field(&plan.scales()[..=k], v.gamma)?
                        .tail
                        .map(|t| t * max_ref);
                    table.push(&name, k + 1, acc, tail);
                    vcsv.row(&[
                        Cell::F(r),
                        Cell::F(p),
                        Cell::F(v.gamma),
                        Cell::U(s.n),
                        Cell::F(s.lambda),
                        Cell::F(s.tau),
                        Cell::F(s.factor),
                        Cell::F(s.reference),
                        Cell::F(s.value),
                    ]);
                }
                if v.alias_warning {
                    eprintln!("warning: (r, p) = ({r}, {p}) reference spectrum is under-resolved");
                }
                velocity.push(v);
            }
            Err(Error::SuperCritical(g)) => {
                println!("(r, p) = ({r}, {p}): gamma = {g} <= 0, skipped as super-critical")
            }
            Err(e) => return Err(e.into()),
        }
    }
    ctx.write_csv("velocity.csv", vcsv)?;

    let mut sol = std::mem::take(&mut table.curves);
    let rest = sol.split_off(solution_curves);
    ctx.write_csv("series.csv", table.csv)?;
    ctx.write_text(
        "series_solution.svg",
        &Plot {
            title: "log partial sums of e^(t/tau_n) M_n".into(),
            x_label: "N".into(),
            y_label: "log S_N".into(),
            log_y: false,
            series: sol,
        }
        .render(),
    )?;
    ctx.write_text(
        "series_field.svg",
        &Plot {
            title: "partial sums of the velocity norm series".into(),
            x_label: "N".into(),
            y_label: "S_N".into(),
            log_y: false,
            series: rest,
        }
        .render(),
    )?;

    ctx.write_csv("solution.csv", solution_samples(&handle, plan, &times)?)?;

    println!(
        "{:>10} {:>5} {:>14} {:>14}",
        "t/tau1", "cube", "measured", "bound"
    );
    for r in &growth {
        let b = r
            .lower_bound_log
            .map(|b| format!("{:.6e}", b.exp()))
            .unwrap_or_else(|| "-".into());
        println!(
            "{:>10.3} {:>5} {:>14.6e} {:>14}",
            r.t / tau1,
            r.cube + 1,
            r.measured_h1,
            b
        );
    }
    println!("bound violations: {violations}");
    for v in &velocity {
        let total = v
            .tail
            .map(|t| format!("{}", v.partial + t))
            .unwrap_or_else(|| "-".into());
        println!(
            "velocity (r, p) = ({}, {}): gamma = {}, partial = {}, with tail = {}",
            v.r, v.p, v.gamma, v.partial, total
        );
    }
    println!(
        "wrote growth.csv, series.csv, velocity.csv, solution.csv and plots to {}",
        ctx.out.display()
    );
    Ok(SimulateSummary {
        growth,
        velocity,
        violations,
    })
}

/// `(t, x, ρ, |∇ρ|)` on a lattice over the first slot's support at every sample time.
fn solution_samples(handle: &SolutionHandle, plan: &CubePlan, times: &[f64]) -> CliResult<Csv> {
    let d = plan.dim;
    let q = plan.slots[0].support();
    let per: usize = if d == 2 { 21 } else { 9 };
    let mut header: Vec<String> = vec!["t".into()];
    header.extend((1..=d).map(|k| format!("x{k}")));
    header.extend(["rho".into(), "grad_norm".into()]);
    let header: Vec<&str> = header.iter().map(String::as_str).collect();
    let mut csv = Csv::new(&header);
    for &t in times {
        for flat in 0..per.pow(d as u32) {
            let mut rem = flat;
            let mut s = vec![0.0; d];
            for c in (0..d).rev() {
                s[c] = (rem % per) as f64 / (per - 1) as f64;
                rem /= per;
            }
            let x = q.from_unit(&s);
            let (v, g) = handle.evaluate_both(&x, t)?;
            let mut row = vec![Cell::F(t)];
            row.extend(x.iter().map(|&c| Cell::F(c)));
            row.push(Cell::F(v));
            row.push(Cell::F(norm_sq(&g).sqrt()));
            csv.row(&row);
        }
    }
    Ok(csv)
}

#[derive(Serialize)]
struct TrackDump {
    r_in: f64,
    r_out: f64,
    width: f64,
    mean_radius: f64,
    pieces: Vec<regloss_core::track::Piece>,
    areas: Vec<f64>,
    outline: Vec<Vec<[f64; 2]>>,
}

pub fn cmd_track_dump(ctx: &Context) -> CliResult<()> {
    let t = &ctx.config.track;
    let lay = TrackLayout::with_radii(t.r_in, t.r_out)?;
    let outline = lay.outline(32);
    let dump = TrackDump {
        r_in: lay.r_in,
        r_out: lay.r_out,
        width: lay.width(),
        mean_radius: lay.mean_radius(),
        areas: (0..8).map(|k| lay.piece_area(k)).collect(),
        pieces: lay.pieces.clone(),
        outline: outline.clone(),
    };
    ctx.write_text("track.json", &(serde_json::to_string_pretty(&dump)? + "\n"))?;
    let series = outline
        .iter()
        .enumerate()
        .map(|(k, poly)| Series {
            name: format!("piece {k}"),
            points: poly
                .iter()
                .chain(poly.first())
                .map(|p| (p[0], p[1]))
                .collect(),
            scatter: false,
        })
        .collect();
    ctx.write_text(
        "track.svg",
        &Plot {
            title: "octagonal track".into(),
            x_label: "x1".into(),
            y_label: "x2".into(),
            log_y: false,
            series,
        }
        .render(),
    )?;
    for k in 0..8 {
        println!("piece {k}: area {}", lay.piece_area(k));
    }
    println!("wrote {}", ctx.path("track.json").display());
    Ok(())
}

/// Reads and validates a configuration file; relative paths inside it resolve against its directory.
pub fn load_config(
    path: &Path,
    out: Option<&Path>,
    seed: Option<u64>,
) -> CliResult<ExperimentConfig> {
    let mut cfg = ExperimentConfig::load(path)?;
    if let Some(o) = out {
        cfg.out = o.to_string_lossy().into_owned();
    }
    if let Some(s) = seed {
        cfg.seed = s;
    }
    cfg.validate(path.parent())?;
    Ok(cfg)
}

pub fn cmd_verify(ctx: &Context) -> CliResult<Vec<crate::checks::Check>> {
    let rows = crate::checks::run_battery(&ctx.config);
    let mut csv = Csv::new(&["criterion", "check", "value", "limit", "pass"]);
    println!(
        "{:>3}  {:<58} {:>13}  {:<28} {:>8}  result",
        "id", "check", "value", "limit", "seconds"
    );
    for r in &rows {
        println!(
            "{:>3}  {:<58} {:>13.4e}  {:<28} {:>8.2}  {}{}",
            r.id,
            r.name,
            r.value,
            r.limit,
            r.seconds,
            if r.pass { "PASS" } else { "FAIL" },
            if r.note.is_empty() {
                String::new()
            } else {
                format!("  ({})", r.note)
            }
        );
        csv.row(&[
            Cell::U(r.id),
            Cell::S(r.name.clone()),
            Cell::F(r.value),
            Cell::S(r.limit.clone()),
            Cell::B(r.pass),
        ]);
    }
    ctx.write_csv("verify.csv", csv)?;
    let failed = rows.iter().filter(|r| !r.pass).count();
    println!("{} of {} checks passed", rows.len() - failed, rows.len());
    if failed > 0 {
        return Err(crate::error::CliError::VerifyFailed {
            failed,
            total: rows.len(),
        });
    }
    Ok(rows)
}
