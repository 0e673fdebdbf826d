use crate::config::{
    parse_cutoff, parse_exponent, parse_methods, parse_schedule, DiffeoParams, FileConfig,
    MetricParams, NormParams, Resolved, Tolerances,
};
use crate::{Command, Common, DiffeoArgs, NormArgs, Outcome};
use adm_core::curvature::{
    bianchi_residual, curvature_from_jet_with, error_tensors_from_jet, ricci_christoffel,
    volume_comparison_bound, ScalarRemainder,
};
use adm_core::mass::{conformal_killing_residual, mass_by_method, weak_correction_decay, TestFunction};
use adm_core::metric::{audit_points, finite_difference_consistency, sample_annulus, MetricField};
use adm_core::report::{MassReport, Method};
use adm_core::transforms::{invariance_experiment, make_almost_identity, ChartMap, Isometry};
use adm_core::weighted::{
    check_ae_class, classify_falloff, holder_product_check, membership, Exponent,
    HolderExponents, MetricError, WeightedNormSpec,
};
use adm_core::{linalg, util, CutoffFamily, QuadratureScheme};
use anyhow::{anyhow, bail, Context, Result};
use serde::Serialize;
use std::fmt::Write as _;
use std::path::PathBuf;
use std::sync::Arc;

const DEFAULT_SCHEDULE: &str = "8:256:x2";
const DEFAULT_POINTS: usize = 1000;
const VERSION: &str = env!("CARGO_PKG_VERSION");

pub fn run(command: Command) -> Result<Outcome> {
    match command {
        Command::Mass(common) => {
            let ctx = Session::new("mass", &common, None, None)?;
            cmd_mass(&ctx)
        }
        Command::Validate {
            common,
            corrupt_qs_sign,
        } => {
            let ctx = Session::new("validate", &common, None, None)?;
            let remainder = if corrupt_qs_sign {
                ScalarRemainder::FlippedSign
            } else {
                ScalarRemainder::Correct
            };
            cmd_validate(&ctx, remainder)
        }
        Command::Invariance { common, diffeo } => {
            let ctx = Session::new("invariance", &common, Some(&diffeo), None)?;
            cmd_invariance(&ctx)
        }
        Command::Convergence(common) => {
            let ctx = Session::new("convergence", &common, None, None)?;
            cmd_convergence(&ctx)
        }
        Command::Norms { common, norms } => {
            let ctx = Session::new("norms", &common, None, Some(&norms))?;
            cmd_norms(&ctx)
        }
    }
}

/// Resolved configuration plus the built metric and output location.
struct Session {
    resolved: Resolved,
    digest: String,
    metric: Arc<dyn MetricField>,
    out: PathBuf,
}

impl Session {
    fn new(
        command: &str,
        common: &Common,
        diffeo: Option<&DiffeoArgs>,
        norms: Option<&NormArgs>,
    ) -> Result<Self> {
        let file = match &common.config {
            Some(path) => FileConfig::load(path)?,
            None => FileConfig::default(),
        };

        let mut metric = file.metric.clone();
        metric.overlay(&MetricParams {
            family: common.family.clone(),
            n: common.n,
            m: common.m,
            amplitude: common.amplitude,
            power: common.power,
            mean: common.mean,
            contrast: common.contrast,
            width: common.width,
            coeff: common.coeff.clone(),
            center: common.center.clone(),
            inner_radius: common.inner_radius,
            grid: common.grid.clone(),
        });
        let spec = metric.to_spec()?;

        let methods = if common.methods.is_empty() {
            file.methods.clone().unwrap_or_else(|| vec!["all".into()])
        } else {
            common.methods.clone()
        };
        let methods = parse_methods(&methods)?;

        let cutoff_name = common
            .cutoff
            .clone()
            .or(file.cutoff.clone())
            .unwrap_or_else(|| "smooth_ramp".into());
        let cutoff = parse_cutoff(&cutoff_name, common.lambda.or(file.lambda))?.kind;

        let schedule = common
            .schedule
            .clone()
            .or(file.schedule.clone())
            .unwrap_or_else(|| DEFAULT_SCHEDULE.into());
        let schedule = parse_schedule(&schedule)?;

        let mut quadrature = file.quadrature.clone().unwrap_or_default();
        if let Some(v) = common.angular_order {
            quadrature.angular_order = v;
        }
        if let Some(v) = common.radial_order {
            quadrature.radial_order = v;
        }
        if let Some(v) = common.qmc_points {
            quadrature.qmc_points = v;
        }
        if let Some(v) = common.replicates {
            quadrature.replicates = v;
        }
        if let Some(s) = common.seed.or(file.seed) {
            quadrature.seed = s;
        }
        quadrature.validate()?;

        let diffeo = diffeo.map(|d| {
            let mut p = file.diffeo.clone();
            p.overlay(&DiffeoParams {
                kind: d.kind.clone(),
                rotation: d.rotation.clone(),
                shift: d.shift.clone(),
                c: d.c,
                tau_prime: d.tau_prime,
                count: d.count,
                max_shift: d.max_shift,
            });
            p
        });
        let norms = norms.map(|a| {
            let mut p = file.norms.clone();
            p.overlay(&NormParams {
                k: a.k,
                p: a.p.clone(),
                tau: a.tau,
                r_in: a.r_in,
                r_out: a.r_out,
                sup_samples: a.sup_samples,
            });
            p
        });

        let resolved = Resolved {
            command: command.into(),
            metric: spec,
            methods,
            cutoff,
            schedule,
            points: common.points.or(file.points).unwrap_or(DEFAULT_POINTS),
            quadrature,
            tolerances: file.tolerances.clone().unwrap_or_else(Tolerances::default),
            diffeo,
            norms,
        };

        if let Some(w) = common.workers {
            if w == 0 {
                bail!("--workers must be at least 1");
            }
            // ignore the error if a pool already exists (tests call run twice)
            let _ = rayon::ThreadPoolBuilder::new().num_threads(w).build_global();
        }
        let metric = resolved
            .metric
            .build()
            .context("building metric")?;
        let out = common
            .out
            .clone()
            .or(file.out.clone())
            .unwrap_or_else(|| PathBuf::from("adm_out"));
        std::fs::create_dir_all(&out)
            .with_context(|| format!("creating output directory {}", out.display()))?;
        Ok(Session {
            digest: resolved.digest(),
            resolved,
            metric,
            out,
        })
    }

    fn scheme(&self) -> &QuadratureScheme {
        &self.resolved.quadrature
    }

    fn write_json<T: Serialize>(&self, name: &str, report: &T) -> Result<PathBuf> {
        #[derive(Serialize)]
        struct Envelope<'a, T> {
            version: &'a str,
            config_digest: &'a str,
            config: &'a Resolved,
            report: &'a T,
        }
        let env = Envelope {
            version: VERSION,
            config_digest: &self.digest,
            config: &self.resolved,
            report,
        };
        let path = self.out.join(format!("{name}.json"));
        let mut text = serde_json::to_string_pretty(&env)?;
        text.push('\n');
        std::fs::write(&path, text).with_context(|| format!("writing {}", path.display()))?;
        Ok(path)
    }

    fn write_csv(&self, name: &str, body: &str) -> Result<PathBuf> {
        let path = self.out.join(format!("{name}.csv"));
        let text = format!(
            "# adm {VERSION} config_digest={}\n{body}",
            self.digest
        );
        std::fs::write(&path, text).with_context(|| format!("writing {}", path.display()))?;
        Ok(path)
    }
}

fn summarize(r: &MassReport) -> String {
    let mut s = format!(
        "{:<16} limit {:+.10} ± {:.2e}  ({:?}",
        r.method.name(),
        r.limit,
        r.limit_stderr,
        r.fit_method
    );
    if let Some(q) = r.q {
        let _ = write!(s, ", q = {q:.3}");
    }
    s.push(')');
    if !r.flags.is_empty() {
        let _ = write!(s, "  flags: {}", r.flags.join(" "));
    }
    s
}

fn cmd_mass(ctx: &Session) -> Result<Outcome> {
    let family = ctx.resolved.cutoff_family();
    let mut outcome = Outcome::Ok;
    println!("metric {}  digest {}", ctx.metric.id(), &ctx.digest[..16]);
    if let Some(m) = ctx.resolved.metric.exact_mass() {
        println!("closed-form mass {m}");
    }
    for &method in &ctx.resolved.methods {
        let rep = mass_by_method(
            method,
            ctx.metric.as_ref(),
            &family,
            &ctx.resolved.schedule,
            ctx.scheme(),
        )
        .with_context(|| format!("method {}", method.name()))?;
        let name = format!("mass_{}", method.name());
        ctx.write_json(&name, &rep)?;
        ctx.write_csv(&name, &rep.to_csv())?;
        println!("{}", summarize(&rep));
        if !rep.converged() {
            outcome = outcome.worst(Outcome::NoConvergence);
        }
    }
    Ok(outcome)
}

#[derive(Debug, Clone, Serialize)]
struct Residual {
    name: &'static str,
    value: f64,
    threshold: f64,
    samples: usize,
    pass: bool,
    #[serde(skip_serializing_if = "Vec::is_empty")]
    flags: Vec<String>,
}

impl Residual {
    fn new(name: &'static str, value: f64, threshold: f64, samples: usize) -> Self {
        Residual {
            name,
            value,
            threshold,
            samples,
            // NaN never passes
            pass: value <= threshold,
            flags: Vec::new(),
        }
    }
}

fn validation_points(metric: &dyn MetricField, count: usize) -> Vec<Vec<f64>> {
    let r = metric.inner_radius();
    // keep difference stencils inside the domain
    let a = r * 1.01 + 1e-3;
    let b = (16.0 * r).min(metric.outer_radius() * 0.99);
    sample_annulus(metric.dim(), a, b, count)
}

fn residual_table(
    metric: &dyn MetricField,
    count: usize,
    tol: &Tolerances,
    scheme: &QuadratureScheme,
    remainder: ScalarRemainder,
) -> Result<Vec<Residual>> {
    let n = metric.dim();
    let points = validation_points(metric, count);
    let mut rows = Vec::new();

    let audit = audit_points(metric, &points)?;
    rows.push(Residual::new(
        "symmetry",
        audit
            .max_asymmetry
            .max(audit.max_d1_asymmetry)
            .max(audit.max_d2_asymmetry),
        tol.symmetry,
        points.len(),
    ));
    let c = metric.comparability();
    rows.push(Residual::new(
        "comparability",
        (audit.max_eigenvalue / c).max(1.0 / (c * audit.min_eigenvalue)),
        1.0 + 1e-12,
        points.len(),
    ));
    if metric.regularity().is_smooth() {
        let (e1, e2) = finite_difference_consistency(metric, &points)?;
        rows.push(Residual::new(
            "derivative_consistency",
            e1.max(e2),
            tol.derivative_consistency,
            points.len(),
        ));
    }

    let per_point = util::ordered_map(&points, |x| -> adm_core::Result<[f64; 4]> {
        let jet = metric.jet(x, 2)?;
        let err = error_tensors_from_jet(&jet, x)?;
        let curv = curvature_from_jet_with(&jet, x, remainder)?;
        let ric = ricci_christoffel(&jet, x)?;
        let routes = ric
            .iter()
            .zip(&curv.ric)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        let e_norm = util::frobenius(&curv.e);
        let vol = if e_norm > 0.0 {
            (linalg::determinant(n, &jet.g).sqrt() - 1.0).abs()
                / (volume_comparison_bound(n, c) * e_norm)
        } else {
            0.0
        };
        Ok([err.residual, curv.scalar_residual, routes, vol])
    });
    let mut maxima = [0.0f64; 4];
    for p in per_point {
        let v = p?;
        for (m, x) in maxima.iter_mut().zip(v) {
            *m = if x.is_nan() { f64::NAN } else { m.max(x) };
        }
    }
    rows.push(Residual::new(
        "inverse_derivative_identity",
        maxima[0],
        tol.inverse_derivative_identity,
        points.len(),
    ));
    rows.push(Residual::new(
        "scalar_decomposition",
        maxima[1],
        tol.scalar_decomposition,
        points.len(),
    ));
    rows.push(Residual::new("ricci_routes", maxima[2], tol.ricci_routes, points.len()));
    rows.push(Residual::new(
        "volume_comparison",
        maxima[3],
        tol.volume_comparison,
        points.len(),
    ));

    let step = |r: f64| adm_core::metric::validation_step(r);
    let bianchi = bianchi_residual(metric, &points, step(metric.inner_radius()))?;
    let mut row = Residual::new("bianchi", bianchi.max, tol.bianchi, bianchi.samples);
    row.flags = bianchi.flags;
    rows.push(row);

    let r = metric.inner_radius();
    let outer = (8.0 * r).min(metric.outer_radius() * 0.99);
    let phi = TestFunction::Bump {
        inner: 2.0 * r,
        outer,
    };
    let ck = conformal_killing_residual(metric, &phi, scheme)?;
    let mut row = Residual::new(
        "conformal_killing",
        ck.residual,
        tol.conformal_killing + ck.quad_error,
        1,
    );
    row.flags = ck.flags;
    rows.push(row);

    let e = MetricError { metric };
    let exps = HolderExponents {
        k: 0,
        p1: Exponent::Finite(4.0),
        p2: Exponent::Finite(4.0),
        q: Exponent::Finite(2.0),
        tau1: 0.25,
        tau2: 0.25,
    };
    let holder = holder_product_check(&e, &e, &exps, r, outer, scheme)?;
    rows.push(Residual::new("holder_product", holder.ratio, tol.holder_product, 1));
    Ok(rows)
}

fn cmd_validate(ctx: &Session, remainder: ScalarRemainder) -> Result<Outcome> {
    let rows = residual_table(
        ctx.metric.as_ref(),
        ctx.resolved.points,
        &ctx.resolved.tolerances,
        ctx.scheme(),
        remainder,
    )?;
    let mut csv = String::from("name,value,threshold,samples,pass\n");
    println!("metric {}  digest {}", ctx.metric.id(), &ctx.digest[..16]);
    for r in &rows {
        let _ = writeln!(
            csv,
            "{},{:.6e},{:.6e},{},{}",
            r.name, r.value, r.threshold, r.samples, r.pass
        );
        println!(
            "{:<28} {:>12.4e}  <= {:<10.3e} {}",
            r.name,
            r.value,
            r.threshold,
            if r.pass { "ok" } else { "FAIL" }
        );
    }
    ctx.write_json("validate", &rows)?;
    ctx.write_csv("residuals", &csv)?;
    let failed: Vec<&Residual> = rows.iter().filter(|r| !r.pass).collect();
    if failed.is_empty() {
        Ok(Outcome::Ok)
    } else {
        for r in &failed {
            eprintln!(
                "threshold breach: {} = {:.6e} exceeds {:.6e}",
                r.name, r.value, r.threshold
            );
        }
        Ok(Outcome::Breach)
    }
}

enum DiffeoKind {
    Isometry,
    AlmostIdentity,
}

fn build_diffeos(
    params: &DiffeoParams,
    n: usize,
    seed: u64,
) -> Result<Vec<(DiffeoKind, Arc<dyn ChartMap>)>> {
    let kind = params.kind.as_deref().unwrap_or("random_isometry");
    Ok(match kind {
        "isometry" => {
            let rotation = params.rotation.clone().unwrap_or_else(|| linalg::identity(n));
            let shift = params.shift.clone().unwrap_or_else(|| vec![0.0; n]);
            vec![(DiffeoKind::Isometry, Arc::new(Isometry::new(n, rotation, shift)?))]
        }
        "random_isometry" => Isometry::random(
            n,
            params.count.unwrap_or(5),
            params.max_shift.unwrap_or(1.0),
            seed,
        )?
        .into_iter()
        .map(|i| (DiffeoKind::Isometry, Arc::new(i) as Arc<dyn ChartMap>))
        .collect(),
        "almost_identity" => {
            let c = params.c.ok_or_else(|| anyhow!("almost_identity needs --c"))?;
            let tp = params
                .tau_prime
                .ok_or_else(|| anyhow!("almost_identity needs --tau-prime"))?;
            vec![(DiffeoKind::AlmostIdentity, Arc::new(make_almost_identity(n, c, tp)?))]
        }
        other => bail!("unknown diffeo kind {other:?}"),
    })
}

/// Whether `|δ_k|` decreases along the schedule beyond the quadrature noise.
fn deltas_decrease(deltas: &[f64], noise: &[f64]) -> bool {
    deltas
        .windows(2)
        .zip(noise.windows(2))
        .all(|(d, e)| d[1].abs() < d[0].abs() + e[0] + e[1])
}

fn cmd_invariance(ctx: &Session) -> Result<Outcome> {
    let params = ctx.resolved.diffeo.clone().unwrap_or_default();
    let n = ctx.metric.dim();
    let diffeos = build_diffeos(&params, n, ctx.scheme().seed)?;
    let family = ctx.resolved.cutoff_family();
    let tol = &ctx.resolved.tolerances;
    let mut outcome = Outcome::Ok;
    println!("metric {}  digest {}", ctx.metric.id(), &ctx.digest[..16]);
    for (idx, (kind, map)) in diffeos.iter().enumerate() {
        for &method in &ctx.resolved.methods {
            let rep = invariance_experiment(
                ctx.metric.clone(),
                map.as_ref(),
                method,
                &family,
                &ctx.resolved.schedule,
                ctx.scheme(),
            )
            .with_context(|| format!("{} under {}", method.name(), map.id()))?;
            let noise: Vec<f64> = rep
                .original
                .quad_errors
                .iter()
                .zip(&rep.transformed.quad_errors)
                .map(|(a, b)| a + b)
                .collect();
            let pass = match kind {
                DiffeoKind::Isometry => rep.limit_delta.abs() <= tol.isometry_delta + rep.quad_error,
                DiffeoKind::AlmostIdentity => {
                    rep.limit_delta.abs() <= tol.almost_identity_delta
                        && deltas_decrease(&rep.deltas, &noise)
                }
            };
            println!(
                "{:<3} {:<36} {:<16} Δlimit {:+.3e} (quad {:.1e}) {}",
                idx,
                rep.diffeo_id,
                method.name(),
                rep.limit_delta,
                rep.quad_error,
                if pass { "ok" } else { "FAIL" }
            );
            ctx.write_json(&format!("invariance_{idx}_{}", method.name()), &rep)?;
            let mut csv = String::from("scale,original,transformed,delta\n");
            for (((s, a), b), d) in rep
                .original
                .scales
                .iter()
                .zip(&rep.original.values)
                .zip(&rep.transformed.values)
                .zip(&rep.deltas)
            {
                let _ = writeln!(csv, "{s:.17e},{a:.17e},{b:.17e},{d:.17e}");
            }
            ctx.write_csv(&format!("invariance_{idx}_{}", method.name()), &csv)?;
            if !rep.original.converged() || !rep.transformed.converged() {
                outcome = outcome.worst(Outcome::NoConvergence);
            }
            if !pass {
                eprintln!("threshold breach: {} under {}", method.name(), rep.diffeo_id);
                outcome = outcome.worst(Outcome::Breach);
            }
        }
    }
    Ok(outcome)
}

#[derive(Serialize)]
struct ConvergenceReport {
    reports: Vec<MassReport>,
    /// Largest difference between extrapolated limits.
    spread: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    correction_decay: Option<adm_core::mass::CorrectionDecay>,
}

fn cmd_convergence(ctx: &Session) -> Result<Outcome> {
    let families = [
        CutoffFamily::ramp(),
        CutoffFamily::smooth_ramp(),
        CutoffFamily::wide_ramp(3.0)?,
    ];
    let mut reports = Vec::new();
    let mut outcome = Outcome::Ok;
    println!("metric {}  digest {}", ctx.metric.id(), &ctx.digest[..16]);
    for &method in &ctx.resolved.methods {
        let fams: &[CutoffFamily] = if method.uses_cutoff() {
            &families
        } else {
            &families[..1]
        };
        for fam in fams {
            let rep = mass_by_method(
                method,
                ctx.metric.as_ref(),
                fam,
                &ctx.resolved.schedule,
                ctx.scheme(),
            )
            .with_context(|| format!("method {}", method.name()))?;
            let label = if method.uses_cutoff() {
                format!("{} [{}]", method.name(), fam.name())
            } else {
                method.name().to_string()
            };
            println!("{label}");
            for (s, v) in rep.scales.iter().zip(&rep.values) {
                println!("    {s:>10.3}  {v:+.12}");
            }
            println!("    {}", summarize(&rep));
            if !rep.converged() {
                outcome = outcome.worst(Outcome::NoConvergence);
            }
            reports.push(rep);
        }
    }
    let limits: Vec<f64> = reports.iter().map(|r| r.limit).collect();
    let spread = limits.iter().cloned().fold(f64::NEG_INFINITY, f64::max)
        - limits.iter().cloned().fold(f64::INFINITY, f64::min);
    let correction_decay = if ctx.resolved.methods.contains(&Method::Weak) {
        Some(weak_correction_decay(
            ctx.metric.as_ref(),
            &ctx.resolved.cutoff_family(),
            &ctx.resolved.schedule,
            ctx.scheme(),
        )?)
    } else {
        None
    };
    println!("spread of limits {spread:.3e}");
    let mut csv = String::from("method,cutoff,scale,value,quad_error\n");
    for r in &reports {
        for ((s, v), e) in r.scales.iter().zip(&r.values).zip(&r.quad_errors) {
            let _ = writeln!(
                csv,
                "{},{},{s:.17e},{v:.17e},{e:.17e}",
                r.method.name(),
                r.cutoff.as_deref().unwrap_or("")
            );
        }
    }
    ctx.write_json(
        "convergence",
        &ConvergenceReport {
            reports,
            spread,
            correction_decay,
        },
    )?;
    ctx.write_csv("convergence", &csv)?;
    Ok(outcome)
}

#[derive(Serialize)]
struct NormsReport {
    spec: WeightedNormSpec,
    membership: adm_core::weighted::MembershipReport,
    falloff: adm_core::weighted::FalloffReport,
    ae_class: adm_core::weighted::AeClassReport,
}

fn cmd_norms(ctx: &Session) -> Result<Outcome> {
    let p = ctx.resolved.norms.clone().unwrap_or_default();
    let metric = ctx.metric.as_ref();
    let r_in = p.r_in.unwrap_or(metric.inner_radius());
    let r_out = p
        .r_out
        .unwrap_or_else(|| (r_in * 256.0).min(metric.outer_radius()));
    let exponent = parse_exponent(p.p.as_deref().unwrap_or("2"))?;
    let mut spec = WeightedNormSpec::new(p.k.unwrap_or(1), exponent, p.tau.unwrap_or(0.5), r_in, r_out);
    if let Some(s) = p.sup_samples {
        spec.sup_samples = s;
    }
    let field = MetricError { metric };
    let member = membership(&field, &spec, ctx.scheme())?;
    let mut radii = Vec::new();
    let mut r = r_in * 2.0;
    while r * 2.0 <= r_out {
        radii.push(r);
        r *= 2.0;
    }
    let falloff = classify_falloff(&field, &radii, ctx.scheme())
        .context("fall-off fit needs r_out >= 32 r_in")?;
    let ae = check_ae_class(metric, spec.k, spec.p, spec.tau, r_out, ctx.scheme())?;
    println!("metric {}  digest {}", metric.id(), &ctx.digest[..16]);
    println!(
        "norm on [r_in, r_out] {:.10e}  tail integral {:.3e}  with tail {:.10e}  surplus {:.3}  verdict {:?}",
        member.norm.value,
        member.norm.tail_estimate,
        member.norm.extrapolated,
        member.surplus,
        member.verdict
    );
    println!(
        "fall-off σ = {:.4}  C = {:.4e}  verdict at τ: {:?}",
        falloff.fitted_sigma,
        falloff.fitted_c,
        falloff.verdict(spec.tau)
    );
    println!(
        "AE class: comparable {} bounded {} eigenvalues [{:.6}, {:.6}] member {}",
        ae.comparable, ae.bounded, ae.min_eigenvalue, ae.max_eigenvalue, ae.member
    );
    let mut csv = String::from("l,annulus_inner,contribution\n");
    for (l, c) in member.norm.annulus_contributions.iter().enumerate() {
        for (r, v) in member.norm.annulus_radii.iter().zip(c) {
            let _ = writeln!(csv, "{l},{r:.17e},{v:.17e}");
        }
    }
    let report = NormsReport {
        spec,
        membership: member,
        falloff,
        ae_class: ae,
    };
    ctx.write_json("norms", &report)?;
    ctx.write_csv("norms", &csv)?;
    Ok(Outcome::Ok)
}
