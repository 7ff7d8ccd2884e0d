use std::fs::{self, File};
use std::io::BufWriter;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use log::info;
use serde::Serialize;
use serde_json::{json, Value};
use sha2::{Digest, Sha256};

use sechyp_core::config::RunConfig;
use sechyp_core::flowcalc::Flow;
use sechyp_core::hyperbolicity::{assemble_report, classify_singularity, member_start, Verdict};
use sechyp_core::io::{write_histogram_csv, write_orbit_cache, write_orbit_csv, write_series_csv, Provenance};
use sechyp_core::measures::{
    basin_sample, benettin_spectrum_with, birkhoff_map, birkhoff_orbit, default_panel, divergence_average, empirical_measure,
    ks_statistic, log_derivative, map_iterates, panel_averages, pesin_check_1d, pushforward_sample, tv_distance,
    uniform_seeds, BasinOptions, PesinOptions,
};
use sechyp_core::models::Model;

use crate::{Cli, Command};

/// Missing or malformed command-line input.
#[derive(Debug, thiserror::Error)]
#[error("{0}")]
pub struct UsageError(String);

/// Stream offset of the i.i.d. control sample in `measure`.
const CONTROL_STREAM: u64 = 0x00c0_ffee;

struct Run {
    cfg: RunConfig,
    model: Model,
    out: PathBuf,
    prov: Provenance,
}

impl Run {
    fn load(cli: &Cli) -> Result<Self> {
        let path = cli.config.as_ref().ok_or_else(|| UsageError("--config is required".into()))?;
        let mut cfg = RunConfig::from_path(path).with_context(|| format!("loading {}", path.display()))?;
        if let Some(seed) = cli.seed {
            cfg.seed = seed;
        }
        let base_dir = path.parent().unwrap_or(Path::new("."));
        let model = cfg.build_model(base_dir)?;
        let hash = hex::encode(Sha256::digest(cfg.canonical_json().as_bytes()));
        let out = cli.out.clone().unwrap_or_else(|| cfg.output.dir.clone());
        fs::create_dir_all(&out).with_context(|| format!("creating {}", out.display()))?;
        info!("model {} seed {} config {}", model.name(), cfg.seed, hash);
        Ok(Run {
            cfg,
            model,
            out,
            prov: Provenance::new(Some(hash)),
        })
    }

    fn create(&self, name: &str) -> Result<BufWriter<File>> {
        let path = self.out.join(name);
        let f = File::create(&path).with_context(|| format!("creating {}", path.display()))?;
        Ok(BufWriter::new(f))
    }

    /// Writes `body` wrapped with the provenance fields.
    fn write_json(&self, name: &str, body: impl Serialize) -> Result<()> {
        let mut value = serde_json::to_value(body)?;
        if let Value::Object(map) = &mut value {
            map.insert("version".into(), json!(self.prov.version));
            map.insert("config_hash".into(), json!(self.prov.config_hash));
        }
        let mut w = self.create(name)?;
        serde_json::to_writer_pretty(&mut w, &value)?;
        use std::io::Write;
        writeln!(w)?;
        w.flush()?;
        info!("wrote {}", self.out.join(name).display());
        Ok(())
    }
}

pub fn run(cli: &Cli) -> Result<u8> {
    let run = Run::load(cli)?;
    match cli.command {
        Command::Simulate => simulate(&run),
        Command::Spectrum => spectrum(&run),
        Command::Classify => classify(&run),
        Command::Verify => verify(&run),
        Command::Measure => measure(&run),
        Command::Report => report(&run),
    }
}

fn simulate(run: &Run) -> Result<u8> {
    let rc = run.cfg.report_config(&run.model)?;
    let span = run.cfg.simulate.t.unwrap_or(rc.window);
    for i in 0..run.cfg.simulate.orbits {
        let x0 = member_start(&run.model, &rc, i)?;
        let orbit = run.model.orbit(&x0, span, &rc.ctrl)?;
        if run.cfg.output.csv {
            write_orbit_csv(run.create(&format!("orbit_{i:03}.csv"))?, &orbit, &run.prov)?;
        }
        if run.cfg.output.binary {
            write_orbit_cache(run.create(&format!("orbit_{i:03}.bin"))?, &orbit, &run.prov)?;
        }
    }
    Ok(0)
}

fn spectrum(run: &Run) -> Result<u8> {
    let rc = run.cfg.report_config(&run.model)?;
    let settings = &run.cfg.spectrum;
    let k = settings.k.unwrap_or(run.model.dim());
    let x0 = member_start(&run.model, &rc, 0)?;
    let orbit = run.model.orbit(&x0, settings.t, &rc.ctrl)?;
    let est = benettin_spectrum_with(&orbit, k, settings.transient)?;
    let divergence = run.model.as_field().map(|f| {
        let skip = orbit.steps() - (est.window / rc.ctrl.dt_out).round() as usize;
        divergence_average(f, &orbit, skip)
    });
    run.write_json(
        "spectrum.json",
        json!({
            "model": run.model.name(),
            "seed": run.cfg.seed,
            "spectrum": est,
            "divergence_average": divergence,
        }),
    )?;
    Ok(0)
}

fn classify(run: &Run) -> Result<u8> {
    let records = match &run.model {
        Model::Field(f) => f
            .singularities()
            .iter()
            .map(|s| classify_singularity(f, s))
            .collect::<sechyp_core::Result<Vec<_>>>()?,
        Model::Suspension(_) => Vec::new(),
    };
    run.write_json("singularities.json", json!({"model": run.model.name(), "singularities": records}))?;
    Ok(0)
}

fn verify(run: &Run) -> Result<u8> {
    let rc = run.cfg.report_config(&run.model)?;
    let mut report = assemble_report(&run.model, &rc)?;
    report.config_hash = run.prov.config_hash.clone();
    for c in &report.conditions {
        info!("{:<14} {:?}", c.condition.label(), c.verdict);
    }
    for w in &report.warnings {
        log::warn!("{w}");
    }
    run.write_json("report.json", &report)?;
    Ok(report.exit_code() as u8)
}

fn measure(run: &Run) -> Result<u8> {
    let m = &run.cfg.measure;
    let seed = run.cfg.seed;
    let body = match &run.model {
        Model::Suspension(s) => {
            let map = &s.section_map.base;
            let (lo, hi) = map.domain();
            let uniform = |x: f64| ((x - lo) / (hi - lo)).clamp(0.0, 1.0);
            let seeds = uniform_seeds(lo, hi, m.samples, seed);
            let pushed = pushforward_sample(map, &seeds, m.depth)?;
            let control = uniform_seeds(lo, hi, m.samples, seed ^ CONTROL_STREAM);
            let orbit = map_iterates(map, seeds[0], m.samples)?;
            let em = empirical_measure(&orbit, lo, hi, m.bins)?;
            let tv_pushforward = tv_distance(&em.histogram.pushforward(map, 1000)?, &em.histogram.masses());
            let entropy = birkhoff_map(map, seeds[0], m.samples, "log|f'|", log_derivative(map))?;
            let pesin = pesin_check_1d(
                map,
                s,
                &PesinOptions {
                    n: m.pesin_n,
                    seed,
                    ..PesinOptions::default()
                },
            )?;
            write_histogram_csv(run.create("histogram.csv")?, &em.histogram, &run.prov)?;
            write_series_csv(run.create("birkhoff_log_derivative.csv")?, &entropy, &run.prov)?;
            json!({
                "model": run.model.name(),
                "seed": seed,
                "invariance": {
                    "samples": m.samples,
                    "depth": m.depth,
                    "ks_statistic": ks_statistic(&pushed, uniform),
                    "iid_control_ks": ks_statistic(&control, uniform),
                },
                "orbit_histogram": {
                    "samples": em.samples,
                    "ks_uniform": em.ks_uniform,
                    "tv_uniform": em.tv_uniform,
                    "tv_halves": em.tv_halves,
                    "tv_pushforward": tv_pushforward,
                },
                "log_derivative": {
                    "average": entropy.average,
                    "half_width": entropy.half_width,
                    "tail_oscillation": entropy.tail_oscillation,
                },
                "pesin": pesin,
            })
        }
        Model::Field(f) => {
            let rc = run.cfg.report_config(&run.model)?;
            let x0 = member_start(&run.model, &rc, 0)?;
            let orbit = run.model.orbit(&x0, rc.window, &rc.ctrl)?;
            let panel = default_panel(f);
            let mut series = Vec::new();
            for (i, obs) in panel.iter().enumerate() {
                let s = birkhoff_orbit(&orbit, obs)?;
                write_series_csv(run.create(&format!("birkhoff_{i}.csv"))?, &s, &run.prov)?;
                series.push(s);
            }
            let basin = if m.basin_per_axis > 0 {
                let Some(region) = f.trapping_region() else {
                    bail!(sechyp_core::Error::Config {
                        field: "measure.basin_per_axis".into(),
                        message: "model has no trapping region to grid".into(),
                    });
                };
                let opts = BasinOptions {
                    tol: m.basin_tol,
                    ..BasinOptions::default()
                };
                let reference = panel_averages(f, &x0, &panel, opts.transient, 20.0 * opts.window, &opts.ctrl)?;
                Some(basin_sample(f, &reference, &panel, &region.grid(m.basin_per_axis), &opts)?)
            } else {
                None
            };
            json!({
                "model": run.model.name(),
                "seed": seed,
                "birkhoff": series,
                "basin": basin,
            })
        }
    };
    run.write_json("measure.json", body)?;
    Ok(0)
}

fn report(run: &Run) -> Result<u8> {
    let path = run.out.join("report.json");
    let text = fs::read_to_string(&path).with_context(|| format!("reading {} (run `verify` first)", path.display()))?;
    let report: Value = serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))?;
    let conditions = report["conditions"].as_array().cloned().unwrap_or_default();
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["condition", "verdict", "rate", "fraction", "threshold", "window"])?;
    let mut verdicts = Vec::new();
    for c in &conditions {
        let field = |k: &str| match &c[k] {
            Value::Null => String::new(),
            Value::String(s) => s.clone(),
            v => v.to_string(),
        };
        let verdict: Verdict = serde_json::from_value(c["verdict"].clone()).context("condition without a verdict")?;
        verdicts.push(verdict);
        println!("{:<14} {:<12} rate {}", field("condition"), field("verdict"), field("rate"));
        w.write_record([field("condition"), field("verdict"), field("rate"), field("fraction"), field("threshold"), field("window")])?;
    }
    let mut out = String::new();
    out.push_str(&format!("# sechyp {}\n", run.prov.version));
    if let Some(h) = report["config_hash"].as_str() {
        out.push_str(&format!("# config {h}\n"));
    }
    out.push_str(std::str::from_utf8(&w.into_inner()?)?);
    fs::write(run.out.join("summary.csv"), out)?;
    Ok(if verdicts.contains(&Verdict::Fail) {
        1
    } else if verdicts.contains(&Verdict::Inconclusive) {
        3
    } else {
        0
    })
}
