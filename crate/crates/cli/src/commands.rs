use std::fs;
use std::io::Write;
use std::path::Path;

use dpi_core::closed_loop::{
    classify_convergence, gain_sweep, simulate as run_closed_loop, ti_threshold, Convergence, SimRecord,
    StabilityReport,
};
use dpi_core::plants::{davison_check, EquilibriumMap};
use dpi_core::vi::{estimate_mu_l, MonotonicityEstimate};
use dpi_core::{ConvexSet, Error};
use serde::Serialize;
use serde_json::json;

use crate::config::{Built, BuiltPlant, CertificateSpec};
use crate::{CliError, RunConfig};

fn core(context: &str) -> impl Fn(Error) -> CliError + '_ {
    move |source| CliError::Core {
        context: context.to_string(),
        source,
    }
}

/// Full-precision float text (17 significant digits).
pub fn fmt_f64(v: f64) -> String {
    format!("{v:.16e}")
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map(fmt_f64).unwrap_or_default()
}

fn ensure_dir(dir: &Path) -> Result<(), CliError> {
    fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))
}

fn write_file(path: &Path, contents: &str) -> Result<(), CliError> {
    fs::File::create(path)
        .and_then(|mut f| f.write_all(contents.as_bytes()))
        .map_err(|e| CliError::io(path, e))
}

fn write_json(path: &Path, value: &serde_json::Value) -> Result<(), CliError> {
    let mut text = serde_json::to_string_pretty(value).expect("json values serialize");
    text.push('\n');
    write_file(path, &text)
}

pub struct SimulateOutcome {
    pub record: SimRecord,
    pub convergence: Convergence,
    pub summary: serde_json::Value,
}

pub fn simulate(cfg: &RunConfig, out: Option<&Path>) -> Result<SimulateOutcome, CliError> {
    let built = cfg.build()?;
    let scenario = &built.scenario;
    let record = run_closed_loop(scenario).map_err(core("simulate"))?;
    let convergence = classify_convergence(scenario, &record).map_err(core("simulate"))?;
    let last = record.last();
    let segments: Vec<_> = record
        .segments
        .iter()
        .map(|s| {
            json!({
                "start": s.start,
                "end": s.end,
                "w": s.w.as_slice(),
                "final_vi_residual": s.final_vi_residual,
                "normal_cone_residual": s.normal_cone_residual,
                "tracking_error": s.tracking_error,
                "gamma_margin": finite_or_null(s.gamma_margin),
            })
        })
        .collect();
    let summary = json!({
        "converged": convergence.converged,
        "final_increment": convergence.final_increment,
        "steps": record.steps.len(),
        "min_constraint_margin": finite_or_null(
            record.steps.iter().map(|s| s.constraint_margin).fold(f64::INFINITY, f64::min)
        ),
        "input_region_exits": record.input_region_exits,
        "final": {
            "eta": record.final_eta.as_slice(),
            "u": last.u.as_slice(),
            "e": last.e.as_slice(),
            "vi_residual": last.vi_residual,
        },
        "segments": segments,
        "parameters": parameters(cfg, &built),
    });
    if let Some(dir) = out {
        ensure_dir(dir)?;
        write_file(&dir.join("trajectory.csv"), &trajectory_csv(&record))?;
        write_json(&dir.join("summary.json"), &summary)?;
    }
    Ok(SimulateOutcome {
        record,
        convergence,
        summary,
    })
}

fn finite_or_null(v: f64) -> Option<f64> {
    v.is_finite().then_some(v)
}

fn parameters(cfg: &RunConfig, built: &Built) -> serde_json::Value {
    let c = &built.scenario.controller;
    json!({
        "sample_time": built.scenario.plant.sample_time(),
        "horizon": cfg.horizon,
        "seed": cfg.seed,
        "controller": &cfg.controller,
        "gain": c.gain().row_iter().map(|r| r.iter().copied().collect::<Vec<_>>()).collect::<Vec<_>>(),
        "ti": c.ti(),
        "schedule": &cfg.schedule,
    })
}

/// `k,t,x…,u…,e…,eta…,constraint_margin,vi_residual`.
pub fn trajectory_csv(record: &SimRecord) -> String {
    let first = &record.steps[0];
    let mut header = vec!["k".to_string(), "t".to_string()];
    for (prefix, len) in [
        ("x", first.x.len()),
        ("u", first.u.len()),
        ("e", first.e.len()),
        ("eta", first.eta.len()),
    ] {
        header.extend((1..=len).map(|i| format!("{prefix}{i}")));
    }
    header.push("constraint_margin".into());
    header.push("vi_residual".into());

    let mut out = header.join(",");
    out.push('\n');
    for s in &record.steps {
        let mut row = vec![s.k.to_string(), fmt_f64(s.t)];
        for v in s.x.iter().chain(&s.u).chain(&s.e).chain(&s.eta) {
            row.push(fmt_f64(*v));
        }
        row.push(fmt_f64(s.constraint_margin));
        row.push(fmt_f64(s.vi_residual));
        out.push_str(&row.join(","));
        out.push('\n');
    }
    out
}

#[derive(Debug, Clone, Serialize)]
pub struct DavisonSummary {
    pub ok: bool,
    /// Real parts of the eigenvalues of `G(1)K`.
    pub loop_gain_real_parts: Vec<f64>,
    pub note: Option<String>,
}

#[derive(Debug, Clone, Serialize)]
pub struct Certificate {
    pub mu: f64,
    pub lipschitz: f64,
    pub pairs: usize,
    pub samples: usize,
    pub seed: u64,
    /// Step sizes `α ∈ (0, 2μ/L²)` give a contraction.
    pub alpha_upper: Option<f64>,
    pub default_alpha: Option<f64>,
    pub c_fb: Option<f64>,
    pub ti_star: Option<f64>,
    pub davison: Option<DavisonSummary>,
    pub certified: bool,
}

impl Certificate {
    pub fn render(&self) -> String {
        let opt = |v: Option<f64>| v.map_or("n/a".to_string(), |x| format!("{x:.6e}"));
        let mut s = format!(
            "mu_hat      {:.6e}\nL_hat       {:.6e}\npairs       {} (seed {})\nalpha       (0, {})\nc_fb        {} at alpha = {}\nTi_star     {}\n",
            self.mu,
            self.lipschitz,
            self.pairs,
            self.seed,
            opt(self.alpha_upper),
            opt(self.c_fb),
            opt(self.default_alpha),
            opt(self.ti_star),
        );
        if let Some(d) = &self.davison {
            s.push_str(&format!("davison     {}\n", if d.ok { "ok" } else { "violated" }));
        }
        s.push_str(&format!("certified   {}\n", self.certified));
        s
    }
}

/// The set over which `μ̂` and `L̂` are sampled: `Γ`, optionally cut down to
/// the preimage of the operating box.
fn sampling_set(built: &Built) -> Result<ConvexSet, CliError> {
    let inner = match &built.operating_box {
        Some(b) => ConvexSet::intersection(vec![built.constraint.clone(), b.clone()]).map_err(core("operating_box"))?,
        None => built.constraint.clone(),
    };
    ConvexSet::linear_preimage(built.scenario.controller.gain().clone(), inner).map_err(core("controller.gain"))
}

fn estimate(cfg: &RunConfig, built: &Built) -> Result<MonotonicityEstimate, CliError> {
    let set = sampling_set(built)?;
    let scenario = &built.scenario;
    let op = EquilibriumMap {
        plant: scenario.plant.as_ref(),
        gain: scenario.controller.gain(),
        w: &scenario.schedule[0].w,
    };
    estimate_mu_l(&op, &set, scenario.controller.metric(), cfg.samples, cfg.seed, None)
        .map_err(core("certify"))
}

pub fn certify(cfg: &RunConfig, out: Option<&Path>) -> Result<Certificate, CliError> {
    let built = cfg.build()?;
    let est = estimate(cfg, &built)?;
    let ts = built.scenario.plant.sample_time();
    let monotone = est.mu > 0.0;
    let l2 = est.lipschitz * est.lipschitz;
    let default_alpha = monotone.then(|| est.mu / l2);
    let davison = match &built.plant {
        BuiltPlant::Lti(p) => Some(match davison_check(p, built.scenario.controller.gain()) {
            Ok(r) => DavisonSummary {
                ok: r.ok,
                loop_gain_real_parts: r.loop_gain.complex_eigenvalues().iter().map(|z| z.re).collect(),
                note: None,
            },
            Err(Error::Singular(what)) => DavisonSummary {
                ok: false,
                loop_gain_real_parts: Vec::new(),
                note: Some(format!("singular {what}")),
            },
            Err(e) => return Err(core("certify")(e)),
        }),
        BuiltPlant::FourTank(_) => None,
    };
    let cert = Certificate {
        mu: est.mu,
        lipschitz: est.lipschitz,
        pairs: est.pairs,
        samples: cfg.samples,
        seed: cfg.seed,
        alpha_upper: monotone.then(|| 2.0 * est.mu / l2),
        default_alpha,
        c_fb: default_alpha.map(|a| (1.0 - 2.0 * a * est.mu + a * a * l2).max(0.0).sqrt()),
        ti_star: monotone.then(|| ti_threshold(ts, est.mu, est.lipschitz)),
        certified: monotone && davison.as_ref().is_none_or(|d| d.ok),
        davison,
    };
    if let Some(dir) = out {
        ensure_dir(dir)?;
        write_json(&dir.join("certificate.json"), &serde_json::to_value(&cert).expect("serializable"))?;
    }
    Ok(cert)
}

pub struct SweepOutcome {
    pub report: StabilityReport,
    /// `"supplied"` or `"estimate"`.
    pub certificate_source: &'static str,
    pub summary: serde_json::Value,
}

pub fn sweep(cfg: &RunConfig, out: Option<&Path>) -> Result<SweepOutcome, CliError> {
    let spec = cfg
        .sweep
        .as_ref()
        .ok_or_else(|| CliError::Config("sweep: section missing".into()))?;
    if spec.ti.is_empty() || spec.lambda.is_empty() {
        return Err(CliError::Config("sweep: `ti` and `lambda` need at least one value".into()));
    }
    if let Some(t) = spec.ti.iter().find(|t| !(**t > 0.0 && t.is_finite())) {
        return Err(CliError::Config(format!("sweep.ti: values must be positive, got {t}")));
    }
    if let Some(l) = spec.lambda.iter().find(|l| !(**l > 0.0 && **l < 1.0)) {
        return Err(CliError::Config(format!("sweep.lambda: values must lie in (0, 1), got {l}")));
    }
    let built = cfg.build()?;
    let (mu, lipschitz, source) = match &spec.certificate {
        CertificateSpec::Values { mu, lipschitz } => (*mu, *lipschitz, "supplied"),
        CertificateSpec::Named(n) if n == "estimate" => {
            let est = estimate(cfg, &built)?;
            (est.mu, est.lipschitz, "estimate")
        }
        CertificateSpec::Named(n) => {
            return Err(CliError::Config(format!(
                "sweep.certificate: expected \"estimate\" or {{ mu, lipschitz }}, got `{n}`"
            )))
        }
    };
    if !(mu > 0.0 && lipschitz >= mu) {
        return Err(CliError::NotCertified(format!(
            "sweep.certificate: need 0 < mu <= lipschitz, have mu = {mu}, lipschitz = {lipschitz}"
        )));
    }
    let mut scenario = built.scenario.clone();
    if let Some(h) = spec.horizon {
        scenario.horizon = h;
    }
    let report = gain_sweep(&scenario, &spec.ti, &spec.lambda, mu, lipschitz).map_err(core("sweep"))?;

    let lambda_star: Vec<_> = spec
        .ti
        .iter()
        .map(|&ti| json!({ "ti": ti, "lambda_star": report.empirical_lambda_star(ti) }))
        .collect();
    let points: Vec<_> = report
        .points
        .iter()
        .map(|p| {
            json!({
                "ti": p.ti,
                "lambda": p.lambda,
                "converged": p.converged,
                "decay_rate": p.decay_rate,
                "final_vi_residual": finite_or_null(p.final_vi_residual),
                "final_normal_cone_residual": p.final_normal_cone_residual,
                "final_increment": finite_or_null(p.final_increment),
                "final_error": finite_or_null(p.final_error),
                "error": p.error,
            })
        })
        .collect();
    let summary = json!({
        "ti_star": report.ti_star,
        "mu": mu,
        "lipschitz": lipschitz,
        "certificate_source": source,
        "seed": cfg.seed,
        "samples": cfg.samples,
        "sample_time": report.sample_time,
        "horizon": scenario.horizon,
        "eta_bar": report.eta_bar.as_slice(),
        "eta_bar_converged": report.eta_bar_converged,
        "empirical_lambda_star": lambda_star,
        "points": points,
    });
    if let Some(dir) = out {
        ensure_dir(dir)?;
        write_file(&dir.join("sweep.csv"), &sweep_csv(&report))?;
        write_json(&dir.join("sweep_summary.json"), &summary)?;
    }
    Ok(SweepOutcome {
        report,
        certificate_source: source,
        summary,
    })
}

/// `T_i,lambda,converged,decay_rate,final_vi_residual`; failed runs leave the
/// numeric fields empty.
pub fn sweep_csv(report: &StabilityReport) -> String {
    let mut out = String::from("T_i,lambda,converged,decay_rate,final_vi_residual\n");
    for p in &report.points {
        let residual = p.final_vi_residual.is_finite().then_some(p.final_vi_residual);
        out.push_str(&format!(
            "{},{},{},{},{}\n",
            fmt_f64(p.ti),
            fmt_f64(p.lambda),
            p.converged,
            fmt_opt(p.decay_rate),
            fmt_opt(residual)
        ));
    }
    out
}
