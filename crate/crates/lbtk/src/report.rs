//! On-disk artifacts: timing and monitor CSVs, field dumps, fit and
//! prediction documents, run metadata, and gnuplot scripts.

use std::io::{BufRead, BufReader, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use lbtk_core::perfmodel::Prediction;

use crate::error::AppError;
use crate::executor::StepBreakdown;
use crate::runner::MonitorRow;

pub const TIMING_HEADER: [&str; 6] =
    ["step", "t_bulk", "t_borderL", "t_borderR", "t_exchange", "t_wall"];

/// Per-step wall-clock table, one row per step, seconds at nine
/// decimals (nanosecond granularity, stable for diffing).
pub fn write_timing_csv(path: &Path, log: &[StepBreakdown]) -> Result<(), AppError> {
    let mut w = csv::Writer::from_path(path).map_err(|e| csv_err(path, e))?;
    w.write_record(TIMING_HEADER).map_err(|e| csv_err(path, e))?;
    for (step, bd) in log.iter().enumerate() {
        let t = &bd.timings;
        w.write_record([
            step.to_string(),
            format!("{:.9}", t.t_bulk),
            format!("{:.9}", t.t_border_l),
            format!("{:.9}", t.t_border_r),
            format!("{:.9}", t.t_exchange),
            format!("{:.9}", t.t_wall),
        ])
        .map_err(|e| csv_err(path, e))?;
    }
    w.flush().map_err(|e| AppError::io(path, e))?;
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TimingRow {
    pub step: usize,
    pub t_bulk: f64,
    pub t_border_l: f64,
    pub t_border_r: f64,
    pub t_exchange: f64,
    pub t_wall: f64,
}

pub fn read_timing_csv(path: &Path) -> Result<Vec<TimingRow>, AppError> {
    let mut r = csv::Reader::from_path(path).map_err(|e| csv_err(path, e))?;
    {
        let headers = r.headers().map_err(|e| csv_err(path, e))?;
        if headers.iter().ne(TIMING_HEADER) {
            return Err(AppError::bad_input(
                path,
                format!("expected header {:?}, found {:?}", TIMING_HEADER.join(","), headers),
            ));
        }
    }
    let mut rows = Vec::new();
    for rec in r.records() {
        let rec = rec.map_err(|e| csv_err(path, e))?;
        let field = |i: usize| -> Result<f64, AppError> {
            rec.get(i)
                .and_then(|s| s.parse::<f64>().ok())
                .ok_or_else(|| AppError::bad_input(path, format!("bad number in row {rec:?}")))
        };
        rows.push(TimingRow {
            step: rec
                .get(0)
                .and_then(|s| s.parse::<usize>().ok())
                .ok_or_else(|| AppError::bad_input(path, format!("bad step in row {rec:?}")))?,
            t_bulk: field(1)?,
            t_border_l: field(2)?,
            t_border_r: field(3)?,
            t_exchange: field(4)?,
            t_wall: field(5)?,
        });
    }
    Ok(rows)
}

/// Geometry sidecar for one timing CSV: everything the calibrator needs
/// to know about where its rows came from. Lives next to the CSV as
/// `<name>.meta.json`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TimingMeta {
    pub lx_tot: usize,
    pub ly: usize,
    pub n_ranks: usize,
    pub steps: usize,
    pub model: String,
    pub variant: String,
    pub mode: String,
}

pub fn meta_path(csv_path: &Path) -> std::path::PathBuf {
    let mut s = csv_path.as_os_str().to_owned();
    s.push(".meta.json");
    std::path::PathBuf::from(s)
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), AppError> {
    let text = serde_json::to_string_pretty(value)
        .map_err(|e| AppError::bad_input(path, format!("serialize: {e}")))?;
    std::fs::write(path, text + "\n").map_err(|e| AppError::io(path, e))
}

pub fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T, AppError> {
    let text = std::fs::read_to_string(path).map_err(|e| AppError::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| AppError::bad_input(path, format!("{e}")))
}

pub fn write_monitor_csv(path: &Path, rows: &[MonitorRow]) -> Result<(), AppError> {
    let mut w = csv::Writer::from_path(path).map_err(|e| csv_err(path, e))?;
    w.write_record(["step", "mass", "mass_drift_rel", "jx_drift_rel", "jy_drift_rel"])
        .map_err(|e| csv_err(path, e))?;
    for r in rows {
        w.write_record([
            r.step.to_string(),
            format!("{:.17e}", r.mass),
            format!("{:.17e}", r.mass_drift_rel),
            format!("{:.17e}", r.jx_drift_rel),
            format!("{:.17e}", r.jy_drift_rel),
        ])
        .map_err(|e| csv_err(path, e))?;
    }
    w.flush().map_err(|e| AppError::io(path, e))?;
    Ok(())
}

/// Binary field dump: one ASCII header line `LBFIELD Q NX NY`, then
/// `Q·NX·NY` little-endian doubles in storage order
/// (`l·NX·NY + ix·NY + iy`). For global dumps NX/NY are the physical
/// extents of the whole lattice.
pub fn dump_field(path: &Path, q: usize, nx: usize, ny: usize, data: &[f64]) -> Result<(), AppError> {
    assert_eq!(data.len(), q * nx * ny, "dump shape mismatch");
    let f = std::fs::File::create(path).map_err(|e| AppError::io(path, e))?;
    let mut w = std::io::BufWriter::new(f);
    writeln!(w, "LBFIELD {q} {nx} {ny}").map_err(|e| AppError::io(path, e))?;
    for v in data {
        w.write_all(&v.to_le_bytes()).map_err(|e| AppError::io(path, e))?;
    }
    w.flush().map_err(|e| AppError::io(path, e))?;
    Ok(())
}

pub fn load_field(path: &Path) -> Result<(usize, usize, usize, Vec<f64>), AppError> {
    let f = std::fs::File::open(path).map_err(|e| AppError::io(path, e))?;
    let mut r = BufReader::new(f);
    let mut header = String::new();
    r.read_line(&mut header).map_err(|e| AppError::io(path, e))?;
    let fields: Vec<&str> = header.split_whitespace().collect();
    if fields.len() != 4 || fields[0] != "LBFIELD" {
        return Err(AppError::bad_input(path, format!("bad header {header:?}")));
    }
    let dim = |i: usize| -> Result<usize, AppError> {
        fields[i]
            .parse::<usize>()
            .map_err(|_| AppError::bad_input(path, format!("bad extent in header {header:?}")))
    };
    let (q, nx, ny) = (dim(1)?, dim(2)?, dim(3)?);
    let count = q
        .checked_mul(nx)
        .and_then(|v| v.checked_mul(ny))
        .ok_or_else(|| AppError::bad_input(path, "extent overflow"))?;
    let mut bytes = vec![0u8; count * 8];
    r.read_exact(&mut bytes).map_err(|e| AppError::io(path, e))?;
    let mut trailer = [0u8; 1];
    if r.read(&mut trailer).map_err(|e| AppError::io(path, e))? != 0 {
        return Err(AppError::bad_input(path, "trailing bytes after field data"));
    }
    let data = bytes
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
        .collect();
    Ok((q, nx, ny, data))
}

/// Calibration result plus its scaling forecast; the persisted schema
/// for `fit` and `predict` outputs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitDoc {
    pub alpha: f64,
    pub beta: f64,
    pub gamma: f64,
    pub delta: f64,
    /// Calibration residual; zero for hand-written parameter files.
    #[serde(default)]
    pub residual: f64,
    /// Optional on input so a hand-written file need only carry the
    /// four coefficients.
    #[serde(default)]
    pub predictions: Vec<PredictionRow>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictionRow {
    pub n: usize,
    #[serde(rename = "T")]
    pub t: f64,
    #[serde(rename = "S_r")]
    pub s_r: f64,
    pub efficiency: f64,
    pub regime: String,
}

impl From<&Prediction> for PredictionRow {
    fn from(p: &Prediction) -> Self {
        PredictionRow {
            n: p.n_ranks,
            t: p.t_step_s,
            s_r: p.speedup,
            efficiency: p.efficiency,
            regime: p.regime.to_string(),
        }
    }
}

/// Measured scaling points for overlaying on a predicted curve:
/// CSV with header `n,T` (ranks, seconds per step).
pub fn read_measured_csv(path: &Path) -> Result<Vec<(usize, f64)>, AppError> {
    let mut r = csv::Reader::from_path(path).map_err(|e| csv_err(path, e))?;
    {
        let headers = r.headers().map_err(|e| csv_err(path, e))?;
        if headers.iter().ne(["n", "T"]) {
            return Err(AppError::bad_input(path, format!("expected header n,T, found {headers:?}")));
        }
    }
    let mut rows = Vec::new();
    for rec in r.records() {
        let rec = rec.map_err(|e| csv_err(path, e))?;
        let n = rec
            .get(0)
            .and_then(|s| s.parse::<usize>().ok())
            .ok_or_else(|| AppError::bad_input(path, format!("bad n in {rec:?}")))?;
        let t = rec
            .get(1)
            .and_then(|s| s.parse::<f64>().ok())
            .ok_or_else(|| AppError::bad_input(path, format!("bad T in {rec:?}")))?;
        rows.push((n, t));
    }
    Ok(rows)
}

/// Writes `speedup.dat/.gp` and `efficiency.dat/.gp` into `dir`. The
/// model curve is drawn dashed; measured points, when given, are
/// plotted on top and their speedups use the measured single-rank time
/// as baseline when one exists.
pub fn write_gnuplot(
    dir: &Path,
    doc: &FitDoc,
    measured: Option<&[(usize, f64)]>,
) -> Result<(), AppError> {
    let measured_t1 = measured
        .and_then(|m| m.iter().find(|(n, _)| *n == 1).map(|&(_, t)| t))
        .or_else(|| doc.predictions.iter().find(|p| p.n == 1).map(|p| p.t));

    let dat = dir.join("speedup.dat");
    {
        let f = std::fs::File::create(&dat).map_err(|e| AppError::io(&dat, e))?;
        let mut w = std::io::BufWriter::new(f);
        writeln!(w, "# n model_speedup measured_speedup").map_err(|e| AppError::io(&dat, e))?;
        for p in &doc.predictions {
            let meas = measured
                .and_then(|m| m.iter().find(|(n, _)| *n == p.n))
                .and_then(|&(_, t)| measured_t1.map(|t1| t1 / t));
            match meas {
                Some(s) => writeln!(w, "{} {:.6} {:.6}", p.n, p.s_r, s),
                None => writeln!(w, "{} {:.6} ?", p.n, p.s_r),
            }
            .map_err(|e| AppError::io(&dat, e))?;
        }
    }

    let eff_dat = dir.join("efficiency.dat");
    {
        let f = std::fs::File::create(&eff_dat).map_err(|e| AppError::io(&eff_dat, e))?;
        let mut w = std::io::BufWriter::new(f);
        writeln!(w, "# n model_efficiency measured_efficiency")
            .map_err(|e| AppError::io(&eff_dat, e))?;
        for p in &doc.predictions {
            let meas = measured
                .and_then(|m| m.iter().find(|(n, _)| *n == p.n))
                .and_then(|&(_, t)| measured_t1.map(|t1| t1 / t / p.n as f64));
            match meas {
                Some(e) => writeln!(w, "{} {:.6} {:.6}", p.n, p.efficiency, e),
                None => writeln!(w, "{} {:.6} ?", p.n, p.efficiency),
            }
            .map_err(|e| AppError::io(&eff_dat, e))?;
        }
    }

    let with_measured = measured.is_some();
    let speedup_gp = format!(
        "set terminal pngcairo size 900,600\n\
         set output 'speedup.png'\n\
         set xlabel 'ranks'\n\
         set ylabel 'speedup'\n\
         set key left top\n\
         set datafile missing '?'\n\
         plot 'speedup.dat' using 1:2 with lines dashtype 2 lw 2 title 'model'{}\n",
        if with_measured {
            ", \\\n     'speedup.dat' using 1:3 with points pt 7 ps 1.5 title 'measured'"
        } else {
            ""
        }
    );
    let gp = dir.join("speedup.gp");
    std::fs::write(&gp, speedup_gp).map_err(|e| AppError::io(&gp, e))?;

    let eff_gp_text = format!(
        "set terminal pngcairo size 900,600\n\
         set output 'efficiency.png'\n\
         set xlabel 'ranks'\n\
         set ylabel 'parallel efficiency'\n\
         set yrange [0:1.05]\n\
         set key right top\n\
         set datafile missing '?'\n\
         plot 'efficiency.dat' using 1:2 with lines dashtype 2 lw 2 title 'model'{}\n",
        if with_measured {
            ", \\\n     'efficiency.dat' using 1:3 with points pt 7 ps 1.5 title 'measured'"
        } else {
            ""
        }
    );
    let eff_gp = dir.join("efficiency.gp");
    std::fs::write(&eff_gp, eff_gp_text).map_err(|e| AppError::io(&eff_gp, e))?;
    Ok(())
}

fn csv_err(path: &Path, e: csv::Error) -> AppError {
    match e.into_kind() {
        csv::ErrorKind::Io(io) => AppError::io(path, io),
        other => AppError::bad_input(path, format!("{other:?}")),
    }
}
