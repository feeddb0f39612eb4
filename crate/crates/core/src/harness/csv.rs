//! CSV output of sweep results. Numbers use `{:.11e}` (12 significant
//! digits), missing values are empty cells and angles are in degrees.

use std::io::{Read, Write};
use std::path::Path;

use super::sweep::{SweepPoint, SweepResult};
use crate::bounds::BoundsReport;
use crate::estimation::Hypothesis;
use crate::{Error, Result};

/// Column names for `num_ris` RISs.
pub fn header(num_ris: usize) -> Vec<String> {
    let mut h: Vec<String> =
        ["sweep_var", "value", "rmse_pos_m", "crb_pos_m", "rmse_cfo_hz", "crb_cfo_hz"].map(String::from).into();
    for kind in ["rmse", "crb"] {
        for r in 1..=num_ris {
            for ax in ["az", "el"] {
                h.push(format!("{kind}_aod{r}_{ax}_deg"));
            }
        }
    }
    h.extend(["pfa", "pd", "trials", "seed"].map(String::from));
    h
}

fn num(v: f64) -> String {
    format!("{v:.11e}")
}

fn opt(v: Option<f64>) -> String {
    v.map(num).unwrap_or_default()
}

fn row(p: &SweepPoint, num_ris: usize) -> Vec<String> {
    let mut out = vec![
        p.sweep_var.clone(),
        num(p.value),
        num(p.rmse_pos),
        opt(p.crb_pos),
        num(p.rmse_cfo),
        opt(p.crb_cfo),
    ];
    for r in 0..num_ris {
        let (az, el) = p.rmse_aod.get(r).copied().unwrap_or((f64::NAN, f64::NAN));
        out.push(num(az.to_degrees()));
        out.push(num(el.to_degrees()));
    }
    for r in 0..num_ris {
        let v = p.crb_aod.as_ref().and_then(|c| c.get(r).copied());
        out.push(opt(v.map(|v| v.0.to_degrees())));
        out.push(opt(v.map(|v| v.1.to_degrees())));
    }
    out.extend([opt(p.pfa), opt(p.pd), p.trials.to_string(), p.seed.to_string()]);
    out
}

pub fn write_csv<W: Write>(result: &SweepResult, w: W) -> Result<()> {
    let mut wr = csv::Writer::from_writer(w);
    wr.write_record(header(result.num_ris))?;
    for p in &result.points {
        wr.write_record(row(p, result.num_ris))?;
    }
    wr.flush().map_err(|source| Error::Io { path: "<csv output>".into(), source })
}

/// Writes `result` to `path`, replacing any existing file.
pub fn emit_csv(result: &SweepResult, path: &Path) -> Result<()> {
    let file =
        std::fs::File::create(path).map_err(|source| Error::Io { path: path.display().to_string(), source })?;
    write_csv(result, std::io::BufWriter::new(file))
}

/// Parses CSV written by [`write_csv`]; angles come back in radians.
pub fn parse_csv<R: Read>(r: R) -> Result<Vec<SweepPoint>> {
    let mut rd = csv::Reader::from_reader(r);
    let head = rd.headers()?.clone();
    let num_ris = (head.len().saturating_sub(10)) / 4;
    let expected = header(num_ris);
    if head.iter().ne(expected.iter().map(String::as_str)) {
        return Err(Error::Config("unexpected CSV header".into()));
    }
    let mut points = Vec::new();
    for rec in rd.records() {
        let rec = rec?;
        let f = |i: usize| -> Result<Option<f64>> {
            let s = &rec[i];
            if s.is_empty() {
                Ok(None)
            } else {
                s.parse().map(Some).map_err(|_| Error::Config(format!("bad number '{s}'")))
            }
        };
        let req = |i: usize| f(i)?.ok_or_else(|| Error::Config(format!("empty cell in column {}", expected[i])));
        let a0 = 6;
        let c0 = a0 + 2 * num_ris;
        let t0 = c0 + 2 * num_ris;
        let rmse_aod = (0..num_ris)
            .map(|r| Ok((req(a0 + 2 * r)?.to_radians(), req(a0 + 2 * r + 1)?.to_radians())))
            .collect::<Result<Vec<_>>>()?;
        let crb_aod = (0..num_ris)
            .map(|r| Ok(f(c0 + 2 * r)?.zip(f(c0 + 2 * r + 1)?).map(|(a, e)| (a.to_radians(), e.to_radians()))))
            .collect::<Result<Option<Vec<_>>>>()?;
        let int = |i: usize| rec[i].parse::<u64>().map_err(|_| Error::Config(format!("bad integer '{}'", &rec[i])));
        points.push(SweepPoint {
            sweep_var: rec[0].to_string(),
            value: req(1)?,
            rmse_pos: req(2)?,
            crb_pos: f(3)?,
            rmse_cfo: req(4)?,
            crb_cfo: f(5)?,
            rmse_aod,
            crb_aod: if num_ris == 0 { None } else { crb_aod },
            pfa: f(t0)?,
            pd: f(t0 + 1)?,
            trials: int(t0 + 2)? as usize,
            seed: int(t0 + 3)?,
        });
    }
    Ok(points)
}

/// Bounds table: one row per hypothesis and power.
pub fn write_bounds_csv<W: Write>(rows: &[(Hypothesis, f64, BoundsReport)], num_ris: usize, w: W) -> Result<()> {
    let mut wr = csv::Writer::from_writer(w);
    let mut h: Vec<String> = ["hypothesis", "power_dbm", "peb_m", "crb_cfo_hz"].map(String::from).into();
    for r in 1..=num_ris {
        h.push(format!("crb_aod{r}_az_deg"));
        h.push(format!("crb_aod{r}_el_deg"));
    }
    h.push("conditioning".into());
    wr.write_record(&h)?;
    for (hyp, p, b) in rows {
        let mut rec = vec![
            match hyp {
                Hypothesis::Los => "los".to_string(),
                Hypothesis::Nlos => "nlos".to_string(),
            },
            num(*p),
            num(b.peb),
            num(b.cfo),
        ];
        for r in 0..num_ris {
            let v = b.aod.get(r).copied();
            rec.push(opt(v.map(|v| v.0.to_degrees())));
            rec.push(opt(v.map(|v| v.1.to_degrees())));
        }
        rec.push(num(b.conditioning));
        wr.write_record(&rec)?;
    }
    wr.flush().map_err(|source| Error::Io { path: "<csv output>".into(), source })
}
