//! Acceptance suite. Runs every criterion, prints one PASS/FAIL line per
//! criterion and exits nonzero when any fails.

use std::process::ExitCode;
use std::time::{Duration, Instant};

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use sechyp_core::flowcalc::{integrate, wedge2_of, Flow, OrbitSegment, StepControl};
use sechyp_core::hyperbolicity::functionals::{mnuse_on, BundleCocycle};
use sechyp_core::hyperbolicity::{assemble_report, classify_singularity, Condition, HyperbolicityReport, ReportConfig, Verdict};
use sechyp_core::io::{write_orbit_cache, Provenance};
use sechyp_core::linalg::{orthonormalize, subspace_distance};
use sechyp_core::lpf::{lpf_along, lpf_factor};
use sechyp_core::measures::{
    benettin_spectrum, birkhoff_map, ks_statistic, log_derivative, pesin_check_1d, pushforward_sample, uniform_seeds,
    PesinOptions,
};
use sechyp_core::models::{
    conjugate, make_geometric_lorenz_suspension, make_intermittent_lorenz_map, make_linear_saddle, make_lorenz, Model,
    SuspensionConfig, VectorFieldModel,
};
use sechyp_core::splitting::estimate_splitting;

type Outcome = Result<String, String>;

fn ensure(ok: bool, msg: impl Into<String>) -> Result<(), String> {
    if ok {
        Ok(())
    } else {
        Err(msg.into())
    }
}

fn rel_err(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    (a - b).norm() / b.norm().max(f64::MIN_POSITIVE)
}

fn lorenz() -> VectorFieldModel {
    make_lorenz(10.0, 28.0, 8.0 / 3.0).unwrap()
}

fn on_attractor(m: &VectorFieldModel, rng: &mut ChaCha8Rng, ctrl: &StepControl) -> DVector<f64> {
    let x = DVector::from_fn(3, |i, _| rng.gen_range(-5.0..5.0) + if i == 2 { 25.0 } else { 0.0 });
    m.advance(&x, 10.0, ctrl).unwrap()
}

fn random_matrix(rng: &mut ChaCha8Rng, n: usize) -> DMatrix<f64> {
    DMatrix::from_fn(n, n, |_, _| rng.gen_range(-2.0..2.0))
}

fn cocycle_algebra() -> Outcome {
    let tol = 1e-6;
    let m = lorenz();
    let ctrl = StepControl::default().with_dt(0.1);
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let (mut flow, mut lpf, mut wedge, mut det) = (0.0f64, 0.0f64, 0.0f64, 0.0f64);
    for _ in 0..100 {
        let x0 = on_attractor(&m, &mut rng, &ctrl);
        let fine = integrate(&m, &x0, 1.0, &ctrl).unwrap();
        let coarse = integrate(&m, &x0, 1.0, &ctrl.with_dt(1.0)).unwrap();
        flow = flow.max(rel_err(&fine.cocycle().compose(0, 10), &coarse.step_cocycles[0]));

        let l = lpf_along(&fine).unwrap();
        let direct = lpf_factor(&fine.cocycle().compose(0, 10), &l.frames[0], &l.frames[10]);
        let chained = l.lpf_factors.iter().fold(DMatrix::identity(2, 2), |acc, p| p * acc);
        lpf = lpf.max(rel_err(&chained, &direct));

        let n = rng.gen_range(3..6);
        let (a, b) = (random_matrix(&mut rng, n), random_matrix(&mut rng, n));
        wedge = wedge.max(rel_err(&(wedge2_of(&a) * wedge2_of(&b)), &wedge2_of(&(&a * &b))));
        let c = random_matrix(&mut rng, 3);
        let d = c.determinant().powi(2);
        det = det.max((wedge2_of(&c).determinant() - d).abs() / d.abs());
    }
    ensure(flow <= tol && lpf <= tol && wedge <= tol && det <= tol, format!("errors flow {flow:e} lpf {lpf:e} wedge {wedge:e} det {det:e}"))?;
    Ok(format!("max rel. errors: flow {flow:.1e}, LPF {lpf:.1e}, wedge {wedge:.1e}, det {det:.1e}"))
}

/// Roots of a monic cubic by Durand-Kerner iteration.
fn cubic_roots(c: [f64; 3]) -> Vec<Complex64> {
    let p = |z: Complex64| ((z + c[0]) * z + c[1]) * z + c[2];
    let seed = Complex64::new(0.4, 0.9);
    let mut roots: Vec<Complex64> = (0..3).map(|k| seed.powi(k as i32) * 10.0).collect();
    for _ in 0..500 {
        for i in 0..3 {
            let denom = (0..3).filter(|&j| j != i).fold(Complex64::new(1.0, 0.0), |acc, j| acc * (roots[i] - roots[j]));
            let z = roots[i];
            roots[i] = z - p(z) / denom;
        }
    }
    roots
}

/// `λ³ − tr λ² + (sum of principal 2-minors) λ − det`.
fn char_poly(j: &DMatrix<f64>) -> [f64; 3] {
    let minors = j[(0, 0)] * j[(1, 1)] - j[(0, 1)] * j[(1, 0)] + j[(0, 0)] * j[(2, 2)] - j[(0, 2)] * j[(2, 0)]
        + j[(1, 1)] * j[(2, 2)] - j[(1, 2)] * j[(2, 1)];
    [-j.trace(), minors, -j.determinant()]
}

fn matches_roots(eigs: &[Complex64], roots: &[Complex64], tol: f64) -> bool {
    roots.iter().all(|r| eigs.iter().any(|e| (e - r).norm() <= tol))
}

fn lorenz_classification() -> Outcome {
    let m = lorenz();
    let mut lines = Vec::new();
    for s in m.singularities() {
        let a = classify_singularity(&m, s).map_err(|e| e.to_string())?;
        let roots = cubic_roots(char_poly(&m.jacobian(s)));
        ensure(matches_roots(&a.eigenvalues, &roots, 1e-8), format!("eigenvalues {:?} vs roots {roots:?}", a.eigenvalues))?;
        if s.norm() == 0.0 {
            let r = 1201f64.sqrt();
            let closed = [Complex64::from((-11.0 + r) / 2.0), Complex64::from((-11.0 - r) / 2.0), Complex64::from(-8.0 / 3.0)];
            ensure(matches_roots(&a.eigenvalues, &closed, 1e-8), "origin eigenvalues differ from closed form")?;
            ensure(a.lorenz_like, "origin not Lorenz-like")?;
            lines.push("origin Lorenz-like".to_string());
        } else {
            let pair = a.eigenvalues.iter().filter(|e| e.im.abs() > 1e-9 && e.re > 0.0).count();
            ensure(pair == 2 && !a.lorenz_like, format!("nontrivial equilibrium {:?}: {:?}", s.as_slice(), a.eigenvalues))?;
            lines.push(format!("focus Re {:.3} not Lorenz-like", a.eigenvalues.iter().map(|e| e.re).fold(f64::MIN, f64::max)));
        }
    }
    Ok(lines.join(", "))
}

fn liouville() -> Outcome {
    let m = lorenz();
    let ctrl = StepControl::default();
    let x0 = m.advance(&DVector::from_vec(vec![1.0, 1.0, 20.0]), 20.0, &ctrl).unwrap();
    let o = integrate(&m, &x0, 2000.0, &ctrl).map_err(|e| e.to_string())?;
    let s = benettin_spectrum(&o, 3).map_err(|e| e.to_string())?;
    let msg = format!("exponents {:.4?}, sum {:.5}", s.exponents, s.sum());
    ensure((s.sum() + 41.0 / 3.0).abs() <= 0.05 && s.exponents[1].abs() <= 0.01, msg.clone())?;
    Ok(msg)
}

fn mnuse_volume_gap(orbit: &OrbitSegment, warmup: f64, window: f64) -> Result<(f64, f64), String> {
    let split = estimate_splitting(orbit, 1, warmup).map_err(|e| e.to_string())?;
    let bundle = BundleCocycle::new(&orbit.cocycle(), &split.ecu).map_err(|e| e.to_string())?;
    let mnuse = mnuse_on(&bundle, 1.0, window).map_err(|e| e.to_string())?;
    let tau = bundle.steps_for(1.0);
    let steps = bundle.steps_for(window);
    let volume = (bundle.start..bundle.start + steps).map(|k| bundle.log_volume(k, tau)).sum::<f64>() / steps as f64;
    Ok((mnuse.rate, volume))
}

fn plane_identity() -> Outcome {
    let m = lorenz();
    let ctrl = StepControl::default();
    let x0 = m.advance(&DVector::from_vec(vec![1.0, 1.0, 20.0]), 20.0, &ctrl).unwrap();
    let o = integrate(&m, &x0, 40.0, &ctrl).unwrap();
    let (a, va) = mnuse_volume_gap(&o, 10.0, 15.0)?;
    let saddle = make_linear_saddle(&[2.0, -0.5, -3.0]).unwrap();
    let os = integrate(&saddle, &DVector::zeros(3), 20.0, &ctrl.with_dt(0.05)).unwrap();
    let (b, vb) = mnuse_volume_gap(&os, 2.0, 10.0)?;
    let (ea, eb) = ((a + va).abs(), (b + vb).abs());
    let msg = format!("Lorenz {a:.6} vs {:.6} (gap {ea:.1e}), saddle {b:.6} vs {:.6} (gap {eb:.1e})", -va, -vb);
    ensure(ea <= 1e-9 * a.abs().max(1.0) && eb <= 1e-9 * b.abs().max(1.0), msg.clone())?;
    Ok(msg)
}

fn verdict_of<'a>(r: &'a HyperbolicityReport, c: Condition) -> Result<&'a sechyp_core::hyperbolicity::ConditionVerdict, String> {
    r.verdict(c).ok_or_else(|| format!("{} missing from report", c.label()))
}

fn lorenz_ensemble() -> Outcome {
    let model: Model = lorenz().into();
    let mut cfg = ReportConfig::for_model(&model);
    cfg.conditions = vec![Condition::Sectional, Condition::Mnuse];
    cfg.ensemble = 100;
    cfg.window = 100.0;
    let r = assemble_report(&model, &cfg).map_err(|e| e.to_string())?;
    let sh = verdict_of(&r, Condition::Sectional)?;
    let mn = verdict_of(&r, Condition::Mnuse)?;
    let eta = mn.details["rate_per_unit_time"].as_f64().unwrap_or(f64::NAN);
    let msg = format!(
        "SH {:?} (rate {:.3}), MNUSE {:?} fraction {:.2} eta {eta:.3}",
        sh.verdict,
        sh.rate.unwrap_or(f64::NAN),
        mn.verdict,
        mn.fraction
    );
    ensure(sh.verdict == Verdict::Pass && mn.verdict == Verdict::Pass && mn.fraction >= 0.95 && eta <= -0.5, msg.clone())?;
    Ok(msg)
}

fn intermittent_suspension() -> Outcome {
    let model: Model = make_geometric_lorenz_suspension(make_intermittent_lorenz_map(), &SuspensionConfig::default())
        .unwrap()
        .into();
    let mut cfg = ReportConfig::for_model(&model);
    cfg.conditions = vec![Condition::Sectional, Condition::Msh, Condition::AsymptoticSectional, Condition::Mnuse];
    cfg.ensemble = 200;
    let returns = cfg.window / model.as_suspension().unwrap().roof.mean();
    let r = assemble_report(&model, &cfg).map_err(|e| e.to_string())?;
    let sh = verdict_of(&r, Condition::Sectional)?;
    let msh = verdict_of(&r, Condition::Msh)?;
    let ash = verdict_of(&r, Condition::AsymptoticSectional)?;
    let mn = verdict_of(&r, Condition::Mnuse)?;
    let probes: Vec<f64> = sh.details["probes"]
        .as_array()
        .map(|a| a.iter().filter_map(|p| p["rate"].as_f64()).collect())
        .unwrap_or_default();
    let neutral = !probes.is_empty() && probes.iter().all(|r| r.abs() <= 1e-3);
    let msg = format!(
        "{returns:.0} returns: SH {:?} (neutral rates {probes:?}), MSH {:?}, ASH {:?} fraction {:.3}, MNUSE {:?} fraction {:.3}",
        sh.verdict, msh.verdict, ash.verdict, ash.fraction, mn.verdict, mn.fraction
    );
    ensure(
        sh.verdict == Verdict::Fail
            && neutral
            && msh.verdict == Verdict::Fail
            && ash.verdict == Verdict::Pass
            && mn.verdict == Verdict::Pass
            && mn.fraction >= 0.9,
        msg.clone(),
    )?;
    Ok(msg)
}

fn quotient_statistics() -> Outcome {
    let f = make_intermittent_lorenz_map();
    let seeds = uniform_seeds(-1.0, 1.0, 1_000_000, 11);
    let pushed = pushforward_sample(&f, &seeds, 10).map_err(|e| e.to_string())?;
    let ks = ks_statistic(&pushed, |x| (x + 1.0) / 2.0);
    let control = ks_statistic(&uniform_seeds(-1.0, 1.0, 1_000_000, 12), |x| (x + 1.0) / 2.0);
    let b = birkhoff_map(&f, seeds[0], 1_000_000, "log|f'|", log_derivative(&f)).map_err(|e| e.to_string())?;
    let neutral = birkhoff_map(&f, 1.0, 1_000_000, "log|f'|", log_derivative(&f)).map_err(|e| e.to_string())?;
    let msg = format!(
        "KS {ks:.2e} (i.i.d. control {control:.2e}), log|f'| average {:.4}, neutral {}",
        b.average, neutral.average
    );
    ensure(ks < 0.002 && (0.46..=0.54).contains(&b.average) && neutral.average == 0.0, msg.clone())?;
    Ok(msg)
}

fn pesin_chain() -> Outcome {
    let base = make_intermittent_lorenz_map();
    let s = make_geometric_lorenz_suspension(base.clone(), &SuspensionConfig::default()).unwrap();
    let r = pesin_check_1d(&base, &s, &PesinOptions::default()).map_err(|e| e.to_string())?;
    let msg = format!(
        "h {:.4}, mean roof {:.4}, quotient {:.4}, flow side {:.4}",
        r.base_entropy, r.roof_mean, r.quotient, r.flow_side
    );
    ensure((r.quotient - 0.25).abs() <= 0.05 && r.flow_side >= r.quotient - 0.05, msg.clone())?;
    Ok(msg)
}

fn volume_versus_area() -> Outcome {
    let model: Model = make_linear_saddle(&[3.0, 1.0, -1.0, -5.0]).unwrap().into();
    let mut cfg = ReportConfig::for_model(&model);
    cfg.conditions = vec![Condition::SingularHyperbolicity, Condition::Sectional, Condition::Mnuse];
    cfg.ensemble = 2;
    cfg.window = 10.0;
    cfg.ctrl = cfg.ctrl.with_dt(0.05);
    let orbit = integrate(model.as_field().unwrap(), &DVector::zeros(4), 40.0, &cfg.ctrl).unwrap();
    let split = estimate_splitting(&orbit, 1, 8.0).map_err(|e| e.to_string())?;
    let e123 = DMatrix::<f64>::identity(4, 3);
    let dist = split.ecu.bases.iter().map(|b| subspace_distance(b, &e123)).fold(0.0, f64::max);
    let r = assemble_report(&model, &cfg).map_err(|e| e.to_string())?;
    let v = |c| verdict_of(&r, c).map(|x| x.verdict);
    let (shy, sh, mn) = (v(Condition::SingularHyperbolicity)?, v(Condition::Sectional)?, v(Condition::Mnuse)?);
    let msg = format!("E^cu distance {dist:.1e}; SingularHyp {shy:?}, SH {sh:?}, MNUSE {mn:?}");
    ensure(dist < 1e-8 && shy == Verdict::Pass && sh == Verdict::Fail && mn == Verdict::Fail, msg.clone())?;
    Ok(msg)
}

fn random_rotation(rng: &mut ChaCha8Rng, n: usize) -> DMatrix<f64> {
    let mut q = orthonormalize(&random_matrix(rng, n));
    if q.determinant() < 0.0 {
        q.column_mut(0).neg_mut();
    }
    q
}

fn determinism_and_equivariance() -> Outcome {
    let model: Model = lorenz().into();
    let mut cfg = ReportConfig::for_model(&model);
    cfg.ensemble = 3;
    cfg.window = 20.0;
    let a = serde_json::to_string(&assemble_report(&model, &cfg).map_err(|e| e.to_string())?).unwrap();
    let b = serde_json::to_string(&assemble_report(&model, &cfg).map_err(|e| e.to_string())?).unwrap();
    ensure(a == b, "report reruns differ")?;
    let m = lorenz();
    let x0 = DVector::from_vec(vec![1.0, 2.0, 20.0]);
    let cache = |o: &OrbitSegment| {
        let mut buf = Vec::new();
        write_orbit_cache(&mut buf, o, &Provenance::new(None)).unwrap();
        buf
    };
    let ctrl = StepControl::default();
    ensure(cache(&integrate(&m, &x0, 20.0, &ctrl).unwrap()) == cache(&integrate(&m, &x0, 20.0, &ctrl).unwrap()), "orbit reruns differ")?;

    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let q = random_rotation(&mut rng, 3);
    let rotated = conjugate(&m, &q).map_err(|e| e.to_string())?;
    let mut classify_err: f64 = 0.0;
    for s in m.singularities() {
        let a = classify_singularity(&m, s).map_err(|e| e.to_string())?;
        let b = classify_singularity(&rotated, &(&q * s)).map_err(|e| e.to_string())?;
        ensure(a.lorenz_like == b.lorenz_like && a.index == b.index, "classification changed under rotation")?;
        let worst = a.eigenvalues.iter().map(|e| b.eigenvalues.iter().map(|f| (e - f).norm()).fold(f64::MAX, f64::min)).fold(0.0, f64::max);
        classify_err = classify_err.max(worst);
    }

    let orbit = integrate(&m, &m.advance(&x0, 10.0, &ctrl).unwrap(), 20.0, &ctrl).unwrap();
    let image = OrbitSegment {
        model: "rotated".into(),
        times: orbit.times.clone(),
        states: orbit.states.iter().map(|s| &q * s).collect(),
        velocities: orbit.velocities.iter().map(|v| &q * v).collect(),
        step_cocycles: orbit.step_cocycles.iter().map(|c| &q * c * q.transpose()).collect(),
        renorm_log: orbit.renorm_log.clone(),
    };
    let sa = estimate_splitting(&orbit, 1, 5.0).map_err(|e| e.to_string())?;
    let sb = estimate_splitting(&image, 1, 5.0).map_err(|e| e.to_string())?;
    let mut split_err: f64 = 0.0;
    for i in 0..sa.len() {
        split_err = split_err
            .max(subspace_distance(&(&q * &sa.es.bases[i]), &sb.es.bases[i]))
            .max(subspace_distance(&(&q * &sa.ecu.bases[i]), &sb.ecu.bases[i]));
    }
    let msg = format!("byte-identical reruns; rotation errors: eigenvalues {classify_err:.1e}, splitting {split_err:.1e}");
    ensure(classify_err <= 1e-8 && split_err <= 1e-8, msg.clone())?;
    Ok(msg)
}

fn main() -> ExitCode {
    let criteria: [(&str, Duration, fn() -> Outcome); 10] = [
        ("cocycle algebra", Duration::from_secs(60), cocycle_algebra),
        ("Lorenz singularity classification", Duration::from_secs(10), lorenz_classification),
        ("spectrum sum equals divergence", Duration::from_secs(120), liouville),
        ("plane MNUSE equals minus volume rate", Duration::from_secs(60), plane_identity),
        ("Lorenz ensemble SH and MNUSE", Duration::from_secs(600), lorenz_ensemble),
        ("intermittent suspension verdicts", Duration::from_secs(600), intermittent_suspension),
        ("quotient map statistics", Duration::from_secs(120), quotient_statistics),
        ("entropy chain", Duration::from_secs(300), pesin_chain),
        ("volume without area expansion", Duration::from_secs(10), volume_versus_area),
        ("determinism and rotation equivariance", Duration::from_secs(120), determinism_and_equivariance),
    ];
    let filter: Option<String> = std::env::args().skip(1).find(|a| !a.starts_with('-'));
    let mut failed = 0;
    for (i, (name, budget, check)) in criteria.iter().enumerate() {
        let label = format!("{:02} {name}", i + 1);
        if filter.as_ref().is_some_and(|f| !label.contains(f.as_str())) {
            continue;
        }
        let start = Instant::now();
        let outcome = check();
        let elapsed = start.elapsed();
        let outcome = match outcome {
            Ok(msg) if elapsed > *budget => Err(format!("{msg}; over budget {budget:?}")),
            other => other,
        };
        match outcome {
            Ok(msg) => println!("acceptance {label}: PASS [{elapsed:.1?}] {msg}"),
            Err(msg) => {
                failed += 1;
                println!("acceptance {label}: FAIL [{elapsed:.1?}] {msg}");
            }
        }
    }
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        println!("{failed} acceptance criteria failed");
        ExitCode::FAILURE
    }
}
