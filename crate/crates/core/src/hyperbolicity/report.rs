//! Ensemble evaluation of every condition and aggregation into a report.

use std::collections::BTreeMap;

use nalgebra::DVector;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use super::functionals::{ash_on, mnuse_on, nne_functional, nuse_functional, sectional_on, volume_on, BundleCocycle};
use super::msh::{msh_estimate, MshOptions};
use super::periodic::{nush_periodic_check, PeriodicOptions};
use super::singular::{classify_singularity, SingularityAnalysis};
use super::{Condition, Verdict};
use crate::error::{Error, Result};
use crate::flowcalc::{Flow, OrbitSegment, StepControl};
use crate::lpf::{lpf_along, LPFCocycle};
use crate::models::{FieldKind, MapKind, Model, Roof};
use crate::splitting::{contraction_rate, domination_rate, estimate_splitting, SplittingSeries, RATE_MARGIN};

/// `τ` values of the MNUSE sensitivity sweep.
pub const TAU_SWEEP: [f64; 3] = [0.5, 1.0, 2.0];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportConfig {
    pub conditions: Vec<Condition>,
    pub d_s: usize,
    pub ensemble: usize,
    pub seed: u64,
    /// Worker threads; 0 uses the global pool.
    pub workers: usize,
    /// Observation window `T` of the averaged conditions.
    pub window: f64,
    pub transient: f64,
    pub warmup: f64,
    pub tau: f64,
    /// Fit window of the uniform conditions (PH, SH, SingularHyp, MSH);
    /// base points are spaced by a tenth of it.
    pub uniform_window: f64,
    pub eta: f64,
    pub min_fraction: f64,
    pub singular_radius: f64,
    pub ctrl: StepControl,
}

impl ReportConfig {
    /// Defaults adapted to the model kind.
    pub fn for_model(model: &Model) -> Self {
        // uniform fits on a suspension must outlast the longest return,
        // during which the flow is the identity
        let (window, uniform_window, transient, dt) = match model {
            Model::Field(_) => (100.0, 10.0, 20.0, 0.01),
            Model::Suspension(m) => (1e4 * m.roof.mean(), (2.0 * m.roof.ceiling()).max(10.0).ceil(), 0.0, 0.25),
        };
        ReportConfig {
            conditions: Condition::ALL.to_vec(),
            d_s: 1,
            ensemble: 100,
            seed: 0,
            workers: 0,
            window,
            transient,
            warmup: 10.0,
            tau: 1.0,
            uniform_window,
            eta: -0.05,
            min_fraction: 0.9,
            singular_radius: 1.0,
            ctrl: StepControl::default().with_dt(dt),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("window", self.window),
            ("warmup", self.warmup),
            ("tau", self.tau),
            ("uniform_window", self.uniform_window),
            ("singular_radius", self.singular_radius),
        ];
        for (field, v) in positive {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::config(field, format!("must be positive and finite, got {v}")));
            }
        }
        if !(self.transient >= 0.0) {
            return Err(Error::config("transient", "must be nonnegative"));
        }
        if !(self.eta < 0.0) {
            return Err(Error::config("eta", "must be negative"));
        }
        if !(self.min_fraction > 0.0 && self.min_fraction <= 1.0) {
            return Err(Error::config("min_fraction", "must lie in (0, 1]"));
        }
        if self.ensemble == 0 {
            return Err(Error::config("ensemble", "must be at least 1"));
        }
        if self.d_s == 0 {
            return Err(Error::config("d_s", "must be at least 1"));
        }
        Ok(())
    }

    fn orbit_span(&self) -> f64 {
        2.0 * self.warmup + self.window + (2.0 * self.tau).max(self.uniform_window)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ConditionVerdict {
    pub condition: Condition,
    pub window: f64,
    /// Aggregated rate per the condition's direction; `None` when no member
    /// produced a value.
    pub rate: Option<f64>,
    pub fraction: f64,
    pub threshold: f64,
    pub verdict: Verdict,
    pub details: Value,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct HyperbolicityReport {
    pub model: String,
    pub params: BTreeMap<String, f64>,
    pub seed: u64,
    pub config_hash: Option<String>,
    pub version: String,
    pub ensemble: usize,
    pub singularities: Vec<SingularityAnalysis>,
    pub conditions: Vec<ConditionVerdict>,
    pub warnings: Vec<String>,
}

impl HyperbolicityReport {
    pub fn verdict(&self, condition: Condition) -> Option<&ConditionVerdict> {
        self.conditions.iter().find(|c| c.condition == condition)
    }

    /// 0 when every condition passes, 1 when any fails, 3 otherwise.
    pub fn exit_code(&self) -> i32 {
        let verdicts: Vec<Verdict> = self.conditions.iter().map(|c| c.verdict).collect();
        if verdicts.contains(&Verdict::Fail) {
            1
        } else if verdicts.contains(&Verdict::Inconclusive) {
            3
        } else {
            0
        }
    }
}

/// Direction in which a rate must clear its threshold.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Sense {
    AtLeast,
    AtMost,
}

fn sense(c: Condition) -> Sense {
    match c {
        Condition::PartialHyperbolicity | Condition::Nuse | Condition::Mnuse | Condition::NushPeriodic => Sense::AtMost,
        _ => Sense::AtLeast,
    }
}

fn threshold(c: Condition, cfg: &ReportConfig) -> f64 {
    match c {
        Condition::PartialHyperbolicity | Condition::Nne => -RATE_MARGIN,
        Condition::Nuse | Condition::Mnuse | Condition::NushPeriodic => cfg.eta,
        _ => RATE_MARGIN,
    }
}

fn is_uniform(c: Condition) -> bool {
    matches!(
        c,
        Condition::PartialHyperbolicity
            | Condition::SingularHyperbolicity
            | Condition::Sectional
            | Condition::Msh
            | Condition::NushPeriodic
    )
}

/// One condition evaluated on one orbit.
#[derive(Debug, Clone, PartialEq)]
struct Outcome {
    rate: Option<f64>,
    verdict: Verdict,
    error: Option<String>,
    details: Value,
}

impl Outcome {
    fn failed(e: &Error) -> Self {
        Outcome {
            rate: None,
            verdict: Verdict::Inconclusive,
            error: Some(e.to_string()),
            details: Value::Null,
        }
    }

    fn rated(rate: f64, pass: bool, details: Value) -> Self {
        Outcome {
            rate: Some(rate),
            verdict: Verdict::from_bool(pass),
            error: None,
            details,
        }
    }
}

type Outcomes = BTreeMap<Condition, Outcome>;

struct OrbitContext<'a> {
    cfg: &'a ReportConfig,
    singularities: &'a [SingularityAnalysis],
    sweep: bool,
}

fn needs_lpf(conditions: &[Condition]) -> bool {
    conditions.iter().any(|c| matches!(c, Condition::Nuse | Condition::Msh))
}

fn evaluate_orbit(orbit: &OrbitSegment, ctx: &OrbitContext<'_>, conditions: &[Condition]) -> Outcomes {
    let cfg = ctx.cfg;
    let wanted: Vec<Condition> = conditions.iter().copied().filter(|c| *c != Condition::NushPeriodic).collect();
    let splitting = match estimate_splitting(orbit, cfg.d_s, cfg.warmup) {
        Ok(s) => s,
        Err(e) => return wanted.iter().map(|&c| (c, Outcome::failed(&e))).collect(),
    };
    let cocycle = orbit.cocycle();
    let bundle = BundleCocycle::new(&cocycle, &splitting.ecu);
    let lpf = if needs_lpf(&wanted) { Some(lpf_along(orbit)) } else { None };
    let ph = partial_hyperbolicity(orbit, &splitting, cfg);
    let singular_ok = ctx.singularities.iter().all(|s| s.is_hyperbolic);
    let mut out = Outcomes::new();
    for c in wanted {
        let result: Result<Outcome> = (|| {
            let bundle = bundle.as_ref().map_err(|e| Error::InvalidInput(e.to_string()))?;
            match c {
                Condition::PartialHyperbolicity => ph.as_ref().map(Clone::clone).map_err(|e| Error::InvalidInput(e.to_string())),
                Condition::SingularHyperbolicity => {
                    let ph = ph.as_ref().map_err(|e| Error::InvalidInput(e.to_string()))?;
                    let v = volume_on(bundle, cfg.uniform_window)?;
                    let pass = ph.verdict == Verdict::Pass && v.rate >= RATE_MARGIN && singular_ok;
                    Ok(Outcome {
                        verdict: Verdict::from_bool(pass).and(ph.verdict),
                        ..Outcome::rated(v.rate, pass, json!({"volume": v, "singularities_hyperbolic": singular_ok}))
                    })
                }
                Condition::Sectional => {
                    let ph = ph.as_ref().map_err(|e| Error::InvalidInput(e.to_string()))?;
                    let s = sectional_on(bundle, cfg.uniform_window)?;
                    let pass = ph.verdict == Verdict::Pass && s.rate >= RATE_MARGIN && singular_ok;
                    Ok(Outcome {
                        verdict: Verdict::from_bool(pass).and(ph.verdict),
                        ..Outcome::rated(s.rate, pass, json!({"sectional": s, "singularities_hyperbolic": singular_ok}))
                    })
                }
                Condition::AsymptoticSectional => {
                    let a = ash_on(bundle, cfg.window)?;
                    Ok(Outcome::rated(a.tail, a.tail >= RATE_MARGIN, json!({"final_rate": a.final_rate, "window": a.window})))
                }
                Condition::Mnuse => {
                    let m = mnuse_on(bundle, cfg.tau, cfg.window)?;
                    let mut details = json!({"per_unit_time": m.per_unit_time, "tau": m.tau});
                    if ctx.sweep {
                        let sweep: Vec<Value> = TAU_SWEEP
                            .iter()
                            .map(|&t| match mnuse_on(bundle, t, cfg.window) {
                                Ok(r) => json!({"tau": r.tau, "per_unit_time": r.per_unit_time}),
                                Err(e) => json!({"tau": t, "error": e.to_string()}),
                            })
                            .collect();
                        details["tau_sensitivity"] = Value::Array(sweep);
                    }
                    Ok(Outcome::rated(m.rate, m.rate <= cfg.eta, details))
                }
                Condition::Nuse => {
                    let lpf = lpf_ref(&lpf)?;
                    let n = ((cfg.window / cfg.tau).round() as usize).max(1);
                    let r = nuse_functional(lpf, &splitting.ecu, cfg.tau, n)?;
                    Ok(Outcome::rated(r.rate, r.rate <= cfg.eta, json!({"per_unit_time": r.per_unit_time, "returns": n})))
                }
                Condition::Nne => {
                    let r = nne_functional(orbit, &splitting.ecu, cfg.window)?;
                    Ok(Outcome::rated(r.rate, r.rate >= -RATE_MARGIN, json!({"directions": r.directions})))
                }
                Condition::Msh => {
                    let lpf = lpf_ref(&lpf)?;
                    let opts = MshOptions {
                        d_s: cfg.d_s,
                        radius: cfg.singular_radius,
                        horizon: cfg.uniform_window,
                        window: cfg.uniform_window,
                        warmup: cfg.warmup,
                    };
                    let e = msh_estimate(orbit, lpf, ctx.singularities, &opts)?;
                    Ok(Outcome {
                        rate: e.rate,
                        verdict: e.verdict,
                        error: None,
                        details: json!({
                            "base_points": e.base_points,
                            "excluded_points": e.excluded_points,
                            "singularities_ok": e.singularities_ok,
                            "domination_slope": e.domination.as_ref().map(|d| d.slope),
                        }),
                    })
                }
                Condition::NushPeriodic => unreachable!("periodic checks run on probes only"),
            }
        })();
        out.insert(c, result.unwrap_or_else(|e| Outcome::failed(&e)));
    }
    out
}

fn lpf_ref(lpf: &Option<Result<LPFCocycle>>) -> Result<&LPFCocycle> {
    match lpf {
        Some(Ok(l)) => Ok(l),
        Some(Err(e)) => Err(Error::InvalidInput(e.to_string())),
        None => Err(Error::InvalidInput("linear Poincaré flow was not computed".into())),
    }
}

fn partial_hyperbolicity(orbit: &OrbitSegment, s: &SplittingSeries, cfg: &ReportConfig) -> Result<Outcome> {
    let cocycle = orbit.cocycle();
    let dom = domination_rate(&cocycle, &s.es, &s.ecu, cfg.uniform_window)?;
    let con = contraction_rate(&cocycle, &s.es, cfg.uniform_window)?;
    let rate = dom.slope.max(con.slope);
    Ok(Outcome::rated(rate, dom.verdict && con.verdict, json!({"domination": dom, "contraction": con})))
}

/// Post-transient initial state of ensemble member `index`: the origin for
/// linear fields, otherwise a sample from stream `index` of the run seed.
pub fn member_start(model: &Model, cfg: &ReportConfig, index: usize) -> Result<DVector<f64>> {
    if model.as_field().map(|m| m.is_linear()).unwrap_or(false) {
        return Ok(DVector::zeros(model.dim()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    rng.set_stream(index as u64);
    let x = model.sample_initial(&mut rng)?;
    if cfg.transient > 0.0 {
        model.advance(&x, cfg.transient, &cfg.ctrl)
    } else {
        Ok(x)
    }
}

pub fn member_orbit(model: &Model, cfg: &ReportConfig, index: usize) -> Result<OrbitSegment> {
    model.orbit(&member_start(model, cfg, index)?, cfg.orbit_span(), &cfg.ctrl)
}

/// Singularities relevant to the report: declared equilibria inside the
/// trapping region, when one is known.
pub fn analyse_singularities(model: &Model) -> Result<Vec<SingularityAnalysis>> {
    let Some(field) = model.as_field() else {
        return Ok(Vec::new());
    };
    field
        .singularities()
        .iter()
        .filter(|s| field.trapping_region().map(|r| r.contains(s)).unwrap_or(true))
        .map(|s| classify_singularity(field, s))
        .collect()
}

pub fn model_params(model: &Model) -> BTreeMap<String, f64> {
    let mut p = BTreeMap::new();
    match model {
        Model::Field(m) => {
            p.extend(m.params().iter().map(|(k, v)| (k.clone(), *v)));
            if let FieldKind::Lorenz { sigma, rho, beta } = m.kind() {
                p.insert("sigma".into(), *sigma);
                p.insert("rho".into(), *rho);
                p.insert("beta".into(), *beta);
            }
        }
        Model::Suspension(m) => {
            let map = &m.section_map;
            p.insert("c1".into(), map.c1);
            p.insert("c2".into(), map.c2);
            p.insert("c3".into(), map.c3);
            match map.base.kind() {
                MapKind::PowerLorenz { exponent } => p.insert("exponent".into(), *exponent),
                MapKind::Rotation { shift } => p.insert("shift".into(), *shift),
            };
            match m.roof {
                Roof::Log { tau0, delta } => {
                    p.insert("tau0".into(), tau0);
                    p.insert("delta".into(), delta);
                }
                Roof::Constant { height } => {
                    p.insert("roof_height".into(), height);
                }
            }
        }
    }
    p
}

/// Periodic orbits and equilibria probed by the uniform conditions.
struct Probe {
    label: String,
    state: DVector<f64>,
    period_guess: f64,
}

fn probes(model: &Model, singularities: &[SingularityAnalysis]) -> Vec<Probe> {
    match model {
        Model::Field(_) => singularities
            .iter()
            .map(|s| Probe {
                label: format!("equilibrium {:?}", s.location),
                state: DVector::from_vec(s.location.clone()),
                period_guess: 0.0,
            })
            .collect(),
        Model::Suspension(m) => m
            .boundary_periodic_states()
            .into_iter()
            .map(|s| Probe {
                label: format!("periodic orbit over x = {}", s[0]),
                period_guess: m.return_time(s[0]),
                state: s,
            })
            .collect(),
    }
}

struct ProbeResult {
    label: String,
    outcomes: Outcomes,
}

fn run_probes(model: &Model, cfg: &ReportConfig, ctx: &OrbitContext<'_>) -> Vec<ProbeResult> {
    let uniform: Vec<Condition> = cfg.conditions.iter().copied().filter(|&c| is_uniform(c)).collect();
    if uniform.is_empty() {
        return Vec::new();
    }
    let popts = PeriodicOptions {
        d_s: cfg.d_s,
        tau: cfg.tau,
        eta: cfg.eta,
        ..PeriodicOptions::default()
    };
    probes(model, ctx.singularities)
        .into_iter()
        .map(|p| {
            let mut outcomes = Outcomes::new();
            if uniform.contains(&Condition::NushPeriodic) {
                let o = match nush_periodic_check(model, &p.state, p.period_guess, &popts) {
                    Ok(c) => Outcome::rated(c.e_rate.max(c.f_rate), c.verdict == Verdict::Pass, json!(c)),
                    Err(e) => Outcome::failed(&e),
                };
                outcomes.insert(Condition::NushPeriodic, o);
            }
            // equilibria carry no orbit; their contribution to the uniform
            // conditions is the hyperbolicity flag already in `ctx`
            if p.period_guess > 0.0 {
                let rest: Vec<Condition> = uniform.iter().copied().filter(|&c| c != Condition::NushPeriodic).collect();
                match model.orbit(&p.state, cfg.orbit_span(), &cfg.ctrl) {
                    Ok(orbit) => outcomes.extend(evaluate_orbit(&orbit, ctx, &rest)),
                    Err(e) => outcomes.extend(rest.iter().map(|&c| (c, Outcome::failed(&e)))),
                }
            }
            ProbeResult { label: p.label, outcomes }
        })
        .collect()
}

fn worst(rates: impl Iterator<Item = f64>, s: Sense) -> Option<f64> {
    rates.reduce(|a, b| match s {
        Sense::AtLeast => a.min(b),
        Sense::AtMost => a.max(b),
    })
}

/// Rate cleared by a `q` fraction of members; missing values count as worst.
fn quantile_rate(rates: &[Option<f64>], q: f64, s: Sense) -> Option<f64> {
    let bad = match s {
        Sense::AtLeast => f64::NEG_INFINITY,
        Sense::AtMost => f64::INFINITY,
    };
    let mut v: Vec<f64> = rates.iter().map(|r| r.unwrap_or(bad)).collect();
    if v.is_empty() {
        return None;
    }
    match s {
        Sense::AtLeast => v.sort_by(|a, b| b.total_cmp(a)),
        Sense::AtMost => v.sort_by(|a, b| a.total_cmp(b)),
    }
    let idx = ((q * v.len() as f64).ceil() as usize).clamp(1, v.len()) - 1;
    Some(v[idx]).filter(|x| x.is_finite())
}

fn first_errors(outcomes: &[&Outcome]) -> Vec<String> {
    let mut errs: Vec<String> = outcomes.iter().filter_map(|o| o.error.clone()).collect();
    errs.dedup();
    errs.truncate(5);
    errs
}

fn aggregate(c: Condition, cfg: &ReportConfig, members: &[Outcomes], probes: &[ProbeResult]) -> ConditionVerdict {
    let s = sense(c);
    let thr = threshold(c, cfg);
    let member_outcomes: Vec<&Outcome> = members.iter().filter_map(|m| m.get(&c)).collect();
    let probe_outcomes: Vec<(&str, &Outcome)> = probes
        .iter()
        .filter_map(|p| p.outcomes.get(&c).map(|o| (p.label.as_str(), o)))
        .collect();
    let count = |o: &[&Outcome], v: Verdict| o.iter().filter(|x| x.verdict == v).count();
    let n = member_outcomes.len();
    let passes = count(&member_outcomes, Verdict::Pass);
    let undecided = count(&member_outcomes, Verdict::Inconclusive);
    let fraction = if n > 0 { passes as f64 / n as f64 } else { 0.0 };
    let window = match c {
        Condition::PartialHyperbolicity | Condition::SingularHyperbolicity | Condition::Sectional | Condition::Msh => cfg.uniform_window,
        Condition::NushPeriodic => cfg.tau,
        _ => cfg.window,
    };
    let probe_details: Vec<Value> = probe_outcomes
        .iter()
        .map(|(label, o)| json!({"probe": label, "rate": o.rate, "verdict": o.verdict, "error": o.error, "details": o.details}))
        .collect();
    let mut details = json!({
        "members": n,
        "member_failures": count(&member_outcomes, Verdict::Fail),
        "member_inconclusive": undecided,
        "probes": probe_details,
    });
    let all: Vec<&Outcome> = member_outcomes.iter().copied().chain(probe_outcomes.iter().map(|p| p.1)).collect();
    let errors = first_errors(&all);
    if !errors.is_empty() {
        details["errors"] = json!(errors);
    }
    if let Some(first) = member_outcomes.first() {
        if !first.details.is_null() {
            details["first_member"] = first.details.clone();
        }
    }
    if c == Condition::Nne {
        details["interpretation"] = json!(super::functionals::NNE_INTERPRETATION);
    }
    if c == Condition::Msh {
        details["horizon"] = json!(cfg.uniform_window);
        details["fit_window"] = json!(cfg.uniform_window);
    }

    let (rate, verdict) = if is_uniform(c) {
        let rate = worst(all.iter().filter_map(|o| o.rate), s);
        let verdict = all.iter().fold(
            if all.is_empty() { Verdict::Inconclusive } else { Verdict::Pass },
            |acc, o| acc.and(o.verdict),
        );
        (rate, verdict)
    } else {
        let rates: Vec<Option<f64>> = member_outcomes.iter().map(|o| o.rate).collect();
        let rate = quantile_rate(&rates, cfg.min_fraction, s);
        let verdict = if n > 0 && fraction >= cfg.min_fraction {
            Verdict::Pass
        } else if n > 0 && (passes + undecided) as f64 / n as f64 >= cfg.min_fraction {
            Verdict::Inconclusive
        } else {
            Verdict::Fail
        };
        if matches!(c, Condition::Mnuse | Condition::Nuse) {
            let per_unit: Vec<Option<f64>> = member_outcomes
                .iter()
                .map(|o| o.details.get("per_unit_time").and_then(Value::as_f64))
                .collect();
            details["rate_per_unit_time"] = json!(quantile_rate(&per_unit, cfg.min_fraction, s));
        }
        (rate, verdict)
    };
    ConditionVerdict {
        condition: c,
        window,
        rate,
        fraction,
        threshold: thr,
        verdict,
        details,
    }
}

fn consistency_warnings(conditions: &[ConditionVerdict]) -> Vec<String> {
    let get = |c: Condition| conditions.iter().find(|v| v.condition == c).map(|v| v.verdict);
    let mut out = Vec::new();
    if get(Condition::Sectional) == Some(Verdict::Pass) {
        for c in [Condition::AsymptoticSectional, Condition::Mnuse] {
            if get(c) == Some(Verdict::Fail) {
                out.push(format!(
                    "SH passes but {} fails on the same ensemble: integration accuracy failure",
                    c.label()
                ));
            }
        }
    }
    out
}

/// Runs the configured ensemble and aggregates all requested conditions.
pub fn assemble_report(model: &Model, cfg: &ReportConfig) -> Result<HyperbolicityReport> {
    cfg.validate()?;
    let n = model.dim();
    if cfg.d_s + 2 > n {
        return Err(Error::config("d_s", format!("needs a centre-unstable part of dimension >= 2 in dimension {n}")));
    }
    let singularities = analyse_singularities(model)?;
    let ctx_for = |sweep| OrbitContext {
        cfg,
        singularities: &singularities,
        sweep,
    };
    let member_conditions: Vec<Condition> = cfg.conditions.iter().copied().filter(|&c| c != Condition::NushPeriodic).collect();
    let run = || -> (Vec<Outcomes>, Vec<ProbeResult>) {
        let members: Vec<Outcomes> = (0..cfg.ensemble)
            .into_par_iter()
            .map(|i| match member_orbit(model, cfg, i) {
                Ok(orbit) => evaluate_orbit(&orbit, &ctx_for(i == 0), &member_conditions),
                Err(e) => member_conditions.iter().map(|&c| (c, Outcome::failed(&e))).collect(),
            })
            .collect();
        let probes = run_probes(model, cfg, &ctx_for(false));
        (members, probes)
    };
    let (members, probe_results) = if cfg.workers > 0 {
        rayon::ThreadPoolBuilder::new()
            .num_threads(cfg.workers)
            .build()
            .map_err(|e| Error::config("workers", e.to_string()))?
            .install(run)
    } else {
        run()
    };
    let mut conditions: Vec<Condition> = cfg.conditions.clone();
    conditions.sort();
    conditions.dedup();
    let verdicts: Vec<ConditionVerdict> = conditions
        .into_iter()
        .map(|c| aggregate(c, cfg, &members, &probe_results))
        .collect();
    let warnings = consistency_warnings(&verdicts);
    Ok(HyperbolicityReport {
        model: model.name().to_string(),
        params: model_params(model),
        seed: cfg.seed,
        config_hash: None,
        version: crate::VERSION.to_string(),
        ensemble: cfg.ensemble,
        singularities,
        conditions: verdicts,
        warnings,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::make_linear_saddle;

    fn small(model: &Model, conditions: &[Condition]) -> ReportConfig {
        ReportConfig {
            conditions: conditions.to_vec(),
            ensemble: 2,
            window: 10.0,
            ..ReportConfig::for_model(model)
        }
    }

    #[test]
    fn volume_without_area_expansion_report() {
        let model = Model::Field(make_linear_saddle(&[3.0, 1.0, -1.0, -5.0]).unwrap());
        let cfg = ReportConfig {
            ctrl: StepControl::default().with_dt(0.05),
            ..small(&model, &[Condition::PartialHyperbolicity, Condition::SingularHyperbolicity, Condition::Sectional, Condition::Mnuse])
        };
        let r = assemble_report(&model, &cfg).unwrap();
        assert_eq!(r.verdict(Condition::PartialHyperbolicity).unwrap().verdict, Verdict::Pass);
        assert_eq!(r.verdict(Condition::SingularHyperbolicity).unwrap().verdict, Verdict::Pass);
        assert_eq!(r.verdict(Condition::Sectional).unwrap().verdict, Verdict::Fail);
        assert_eq!(r.verdict(Condition::Mnuse).unwrap().verdict, Verdict::Fail);
        assert_eq!(r.exit_code(), 1);
        assert!(r.verdict(Condition::Sectional).unwrap().rate.unwrap().abs() < 1e-8);
    }

    #[test]
    fn quantile_counts_missing_as_worst() {
        let r = [Some(-1.0), Some(-0.5), None, Some(-2.0)];
        assert_eq!(quantile_rate(&r, 0.5, Sense::AtMost), Some(-1.0));
        assert_eq!(quantile_rate(&r, 1.0, Sense::AtMost), None);
        assert_eq!(quantile_rate(&r, 0.75, Sense::AtLeast), Some(-2.0));
    }

    #[test]
    fn exit_codes_follow_verdicts() {
        let v = |verdict| ConditionVerdict {
            condition: Condition::Sectional,
            window: 1.0,
            rate: None,
            fraction: 0.0,
            threshold: 0.0,
            verdict,
            details: Value::Null,
        };
        let mut r = HyperbolicityReport {
            model: "m".into(),
            params: BTreeMap::new(),
            seed: 0,
            config_hash: None,
            version: crate::VERSION.into(),
            ensemble: 1,
            singularities: Vec::new(),
            conditions: vec![v(Verdict::Pass)],
            warnings: Vec::new(),
        };
        assert_eq!(r.exit_code(), 0);
        r.conditions.push(v(Verdict::Inconclusive));
        assert_eq!(r.exit_code(), 3);
        r.conditions.push(v(Verdict::Fail));
        assert_eq!(r.exit_code(), 1);
    }

    #[test]
    fn invalid_settings_name_the_field() {
        let model = Model::Field(make_linear_saddle(&[1.0, 0.5, -1.0]).unwrap());
        let cfg = ReportConfig {
            eta: 0.1,
            ..ReportConfig::for_model(&model)
        };
        match assemble_report(&model, &cfg) {
            Err(Error::Config { field, .. }) => assert_eq!(field, "eta"),
            other => panic!("unexpected {other:?}"),
        }
    }
}
