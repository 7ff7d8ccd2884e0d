//! Artifact formats: CSV dumps with a provenance preamble and the binary
//! orbit cache.
//!
//! CSV files start with `#` comment lines carrying the toolkit version and
//! the config hash. The binary cache is `SECHYP1` followed by little-endian
//! `u64` lengths and `f64` payloads:
//!
//! ```text
//! magic "SECHYP1"
//! str version, str config hash ("" if none), str model name
//! u64 dim, u64 points
//! f64 times[points], states[points][dim], velocities[points][dim]
//! f64 renorm_log[points]
//! f64 step cocycles[points - 1][dim * dim]   (column-major)
//! ```
//! where `str` is a `u64` byte length followed by UTF-8 bytes.

use std::io::{Read, Write};

use nalgebra::{DMatrix, DVector};
use serde::Serialize;

use crate::error::{Error, Result};
use crate::flowcalc::OrbitSegment;
use crate::measures::{BirkhoffSeries, Histogram};
use crate::splitting::SplittingSeries;

pub const MAGIC: &[u8; 7] = b"SECHYP1";

/// Identity stamped into every artifact.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Provenance {
    pub version: String,
    pub config_hash: Option<String>,
}

impl Provenance {
    pub fn new(config_hash: Option<String>) -> Self {
        Provenance {
            version: crate::VERSION.to_string(),
            config_hash,
        }
    }

    fn preamble<W: Write>(&self, w: &mut W) -> Result<()> {
        writeln!(w, "# sechyp {}", self.version)?;
        if let Some(h) = &self.config_hash {
            writeln!(w, "# config {h}")?;
        }
        Ok(())
    }
}

fn csv_writer<W: Write>(mut w: W, prov: &Provenance) -> Result<csv::Writer<W>> {
    prov.preamble(&mut w)?;
    Ok(csv::Writer::from_writer(w))
}

fn csv_err(e: csv::Error) -> Error {
    match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::Io(io),
        other => Error::InvalidInput(format!("csv: {other:?}")),
    }
}

fn record<W: Write>(w: &mut csv::Writer<W>, values: impl IntoIterator<Item = String>) -> Result<()> {
    w.write_record(values.into_iter().collect::<Vec<_>>()).map_err(csv_err)
}

fn num(x: f64) -> String {
    format!("{x:e}")
}

/// Columns `t, x0.., renorm_log`.
pub fn write_orbit_csv<W: Write>(w: W, orbit: &OrbitSegment, prov: &Provenance) -> Result<()> {
    let mut out = csv_writer(w, prov)?;
    let header = std::iter::once("t".to_string())
        .chain((0..orbit.dim()).map(|i| format!("x{i}")))
        .chain(std::iter::once("renorm_log".to_string()));
    record(&mut out, header)?;
    for (k, s) in orbit.states.iter().enumerate() {
        let row = std::iter::once(num(orbit.times[k]))
            .chain(s.iter().map(|&v| num(v)))
            .chain(std::iter::once(num(orbit.renorm_log[k])));
        record(&mut out, row)?;
    }
    out.flush()?;
    Ok(())
}

/// Rows of `(t, state)` read back from an orbit CSV.
pub fn read_orbit_csv<R: Read>(r: R) -> Result<Vec<(f64, DVector<f64>)>> {
    let mut rdr = csv::ReaderBuilder::new().comment(Some(b'#')).from_reader(r);
    let mut rows = Vec::new();
    for rec in rdr.records() {
        let rec = rec.map_err(csv_err)?;
        let vals = rec
            .iter()
            .map(|f| f.parse::<f64>().map_err(|e| Error::InvalidInput(format!("bad number `{f}`: {e}"))))
            .collect::<Result<Vec<f64>>>()?;
        if vals.len() < 3 {
            return Err(Error::InvalidInput("orbit rows need t, a state and renorm_log".into()));
        }
        rows.push((vals[0], DVector::from_column_slice(&vals[1..vals.len() - 1])));
    }
    Ok(rows)
}

/// Columns `t, x.., angle, es_defect, ecu_defect, es_0.., ecu_0..` with the
/// basis vectors flattened column by column.
pub fn write_splitting_csv<W: Write>(w: W, orbit: &OrbitSegment, split: &SplittingSeries, prov: &Provenance) -> Result<()> {
    let mut out = csv_writer(w, prov)?;
    let n = orbit.dim();
    let (ds, dcu) = (split.es.dim(), split.ecu.dim());
    let header = std::iter::once("t".to_string())
        .chain((0..n).map(|i| format!("x{i}")))
        .chain(["angle", "es_defect", "ecu_defect"].map(String::from))
        .chain((0..n * ds).map(|i| format!("es_{}_{}", i / n, i % n)))
        .chain((0..n * dcu).map(|i| format!("ecu_{}_{}", i / n, i % n)));
    record(&mut out, header)?;
    for i in 0..split.len() {
        let k = split.start() + i;
        let defect = |d: &[f64]| d.get(i).map(|&v| num(v)).unwrap_or_default();
        let row = std::iter::once(num(orbit.times[k]))
            .chain(orbit.states[k].iter().map(|&v| num(v)))
            .chain([num(split.angles[i]), defect(&split.es_defects), defect(&split.ecu_defects)])
            .chain(split.es.bases[i].iter().map(|&v| num(v)))
            .chain(split.ecu.bases[i].iter().map(|&v| num(v)));
        record(&mut out, row)?;
    }
    out.flush()?;
    Ok(())
}

/// Columns `time, average` of the series checkpoints.
pub fn write_series_csv<W: Write>(w: W, series: &BirkhoffSeries, prov: &Provenance) -> Result<()> {
    let mut out = csv_writer(w, prov)?;
    record(&mut out, ["time".to_string(), series.observable.clone()])?;
    for c in &series.checkpoints {
        record(&mut out, [num(c.time), num(c.average)])?;
    }
    out.flush()?;
    Ok(())
}

/// Columns `lo, hi, count, density`.
pub fn write_histogram_csv<W: Write>(w: W, hist: &Histogram, prov: &Provenance) -> Result<()> {
    let mut out = csv_writer(w, prov)?;
    record(&mut out, ["lo", "hi", "count", "density"].map(String::from))?;
    let width = hist.width();
    for (i, (&c, d)) in hist.counts.iter().zip(hist.densities()).enumerate() {
        let lo = hist.lo + i as f64 * width;
        record(&mut out, [num(lo), num(lo + width), c.to_string(), num(d)])?;
    }
    out.flush()?;
    Ok(())
}

fn put_u64<W: Write>(w: &mut W, v: u64) -> Result<()> {
    Ok(w.write_all(&v.to_le_bytes())?)
}

fn put_str<W: Write>(w: &mut W, s: &str) -> Result<()> {
    put_u64(w, s.len() as u64)?;
    Ok(w.write_all(s.as_bytes())?)
}

fn put_f64s<W: Write>(w: &mut W, xs: &[f64]) -> Result<()> {
    for x in xs {
        w.write_all(&x.to_le_bytes())?;
    }
    Ok(())
}

fn get_u64<R: Read>(r: &mut R) -> Result<u64> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b)?;
    Ok(u64::from_le_bytes(b))
}

fn get_str<R: Read>(r: &mut R) -> Result<String> {
    let len = get_u64(r)?;
    if len > 1 << 20 {
        return Err(Error::InvalidInput(format!("implausible string length {len} in cache")));
    }
    let mut b = vec![0u8; len as usize];
    r.read_exact(&mut b)?;
    String::from_utf8(b).map_err(|e| Error::InvalidInput(format!("cache string is not UTF-8: {e}")))
}

fn get_f64s<R: Read>(r: &mut R, n: usize) -> Result<Vec<f64>> {
    let mut b = vec![0u8; 8 * n];
    r.read_exact(&mut b)?;
    Ok(b.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().expect("chunk of 8"))).collect())
}

pub fn write_orbit_cache<W: Write>(mut w: W, orbit: &OrbitSegment, prov: &Provenance) -> Result<()> {
    w.write_all(MAGIC)?;
    put_str(&mut w, &prov.version)?;
    put_str(&mut w, prov.config_hash.as_deref().unwrap_or(""))?;
    put_str(&mut w, &orbit.model)?;
    put_u64(&mut w, orbit.dim() as u64)?;
    put_u64(&mut w, orbit.states.len() as u64)?;
    put_f64s(&mut w, &orbit.times)?;
    for s in &orbit.states {
        put_f64s(&mut w, s.as_slice())?;
    }
    for v in &orbit.velocities {
        put_f64s(&mut w, v.as_slice())?;
    }
    put_f64s(&mut w, &orbit.renorm_log)?;
    for c in &orbit.step_cocycles {
        put_f64s(&mut w, c.as_slice())?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_orbit_cache<R: Read>(mut r: R) -> Result<(OrbitSegment, Provenance)> {
    let mut magic = [0u8; 7];
    r.read_exact(&mut magic)?;
    if &magic != MAGIC {
        return Err(Error::InvalidInput("not a SECHYP1 orbit cache".into()));
    }
    let version = get_str(&mut r)?;
    let hash = get_str(&mut r)?;
    let model = get_str(&mut r)?;
    let dim = get_u64(&mut r)? as usize;
    let points = get_u64(&mut r)? as usize;
    if dim == 0 || points == 0 || dim > 1 << 10 || points > 1 << 32 {
        return Err(Error::InvalidInput(format!("implausible cache shape {points} × {dim}")));
    }
    let times = get_f64s(&mut r, points)?;
    let vectors = |r: &mut R| -> Result<Vec<DVector<f64>>> {
        (0..points).map(|_| Ok(DVector::from_vec(get_f64s(r, dim)?))).collect()
    };
    let states = vectors(&mut r)?;
    let velocities = vectors(&mut r)?;
    let renorm_log = get_f64s(&mut r, points)?;
    let step_cocycles = (0..points - 1)
        .map(|_| Ok(DMatrix::from_vec(dim, dim, get_f64s(&mut r, dim * dim)?)))
        .collect::<Result<Vec<_>>>()?;
    let prov = Provenance {
        version,
        config_hash: (!hash.is_empty()).then_some(hash),
    };
    Ok((
        OrbitSegment {
            model,
            times,
            states,
            velocities,
            step_cocycles,
            renorm_log,
        },
        prov,
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::flowcalc::{integrate, StepControl};
    use crate::models::make_lorenz;
    use proptest::prelude::*;

    fn orbit_strategy() -> impl Strategy<Value = OrbitSegment> {
        (1usize..4, 1usize..6).prop_flat_map(|(dim, points)| {
            let vals = prop::collection::vec(prop::num::f64::ANY, points * (1 + 2 * dim + 1) + (points - 1) * dim * dim);
            (vals, "[a-z_\\-]{0,12}").prop_map(move |(v, model)| {
                let mut it = v.into_iter();
                let mut take = |n: usize| it.by_ref().take(n).collect::<Vec<f64>>();
                OrbitSegment {
                    model,
                    times: take(points),
                    states: (0..points).map(|_| DVector::from_vec(take(dim))).collect(),
                    velocities: (0..points).map(|_| DVector::from_vec(take(dim))).collect(),
                    renorm_log: take(points),
                    step_cocycles: (0..points - 1).map(|_| DMatrix::from_vec(dim, dim, take(dim * dim))).collect(),
                }
            })
        })
    }

    fn same_bits(a: &[f64], b: &[f64]) -> bool {
        a.len() == b.len() && a.iter().zip(b).all(|(x, y)| x.to_bits() == y.to_bits())
    }

    proptest! {
        #[test]
        fn cache_round_trips_bit_for_bit(orbit in orbit_strategy(), hash in proptest::option::of("[0-9a-f]{8}")) {
            let prov = Provenance::new(hash);
            let mut buf = Vec::new();
            write_orbit_cache(&mut buf, &orbit, &prov).unwrap();
            let (back, p) = read_orbit_cache(buf.as_slice()).unwrap();
            prop_assert_eq!(p, prov);
            prop_assert_eq!(&back.model, &orbit.model);
            prop_assert!(same_bits(&back.times, &orbit.times));
            prop_assert!(same_bits(&back.renorm_log, &orbit.renorm_log));
            for (a, b) in back.states.iter().zip(&orbit.states).chain(back.velocities.iter().zip(&orbit.velocities)) {
                prop_assert!(same_bits(a.as_slice(), b.as_slice()));
            }
            prop_assert_eq!(back.step_cocycles.len(), orbit.step_cocycles.len());
            for (a, b) in back.step_cocycles.iter().zip(&orbit.step_cocycles) {
                prop_assert!(same_bits(a.as_slice(), b.as_slice()));
            }
        }
    }

    #[test]
    fn cache_rejects_foreign_files() {
        assert!(read_orbit_cache(&b"SECHYP2........"[..]).is_err());
        assert!(read_orbit_cache(&b"SECHYP1"[..]).is_err());
    }

    #[test]
    fn orbit_csv_has_provenance_and_monotone_time() {
        let m = make_lorenz(10.0, 28.0, 8.0 / 3.0).unwrap();
        let o = integrate(&m, &DVector::from_vec(vec![1.0, 1.0, 1.0]), 1.0, &StepControl::default().with_dt(0.1)).unwrap();
        let mut buf = Vec::new();
        write_orbit_csv(&mut buf, &o, &Provenance::new(Some("abc".into()))).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.starts_with(&format!("# sechyp {}\n# config abc\nt,x0,x1,x2,renorm_log\n", crate::VERSION)));
        let rows = read_orbit_csv(buf.as_slice()).unwrap();
        assert_eq!(rows.len(), o.states.len());
        assert!(rows.windows(2).all(|w| w[1].0 > w[0].0));
        assert_eq!(rows[3].1, o.states[3]);
    }
}
