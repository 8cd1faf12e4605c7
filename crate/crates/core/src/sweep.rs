//! Parameter grids, figure presets, parallel sweeps and CSV/JSON output.

use std::fs;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::config::NrgConfig;
use crate::error::{Error, Result};
use crate::observables::ObservableRecord;
use crate::params::SpinBosonPoint;
use crate::solver::run_point;

pub const CSV_HEADER: &str =
    "alpha,eps_over_delta,delta_ratio,lambda,n_keep,n_m,converged,sx,sz,entropy,p_plus,p_minus,delta_r";

pub const SIGN_CONVENTION: &str = "sx = -<O_x + O_x^dag> and sz = -<2 S_z> of the Kondo model, \
so that sx -> +1 as alpha -> 0 and sz -> +1 for epsilon > 0 as alpha -> 1";

pub const PRESET_NOTE: &str = "preset grid: the Delta/omega_c and eps/Delta ladders are \
representative choices, except Delta/omega_c = 0.04 in fig2 and fig3";

pub const UNITS: &str = "energies in units of the half bandwidth D0 = 1 with omega_c = 2; \
epsilon given as epsilon/Delta, Delta as Delta/omega_c";

/// Parses `start:stop:step` (inclusive) or a comma-separated list.
pub fn parse_axis(text: &str) -> Result<Vec<f64>> {
    let text = text.trim();
    if text.is_empty() {
        return Err(Error::Config("empty axis".into()));
    }
    let num = |s: &str| -> Result<f64> {
        s.trim()
            .parse::<f64>()
            .map_err(|_| Error::Config(format!("cannot parse axis value {s:?}")))
    };
    if text.contains(':') {
        let parts: Vec<&str> = text.split(':').collect();
        let [start, stop, step] = parts[..] else {
            return Err(Error::Config(format!(
                "range {text:?} must be start:stop:step"
            )));
        };
        let (start, stop, step) = (num(start)?, num(stop)?, num(step)?);
        if !(step > 0.0) || !(stop >= start) {
            return Err(Error::Config(format!("invalid range {text:?}")));
        }
        let count = ((stop - start) / step + 1e-9).floor() as usize + 1;
        // round away accumulated binary noise so 0.05 * 3 prints as 0.15
        return Ok((0..count)
            .map(|i| {
                let v = start + i as f64 * step;
                format!("{v:.12}").parse().unwrap_or(v)
            })
            .collect());
    }
    text.split(',').map(num).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepSpec {
    pub alpha: Vec<f64>,
    pub epsilon_over_delta: Vec<f64>,
    pub delta_ratio: Vec<f64>,
}

impl SweepSpec {
    /// Builds a grid, rejecting empty axes and invalid points.
    pub fn new(
        alpha: Vec<f64>,
        epsilon_over_delta: Vec<f64>,
        delta_ratio: Vec<f64>,
    ) -> Result<Self> {
        for (name, axis) in [
            ("alpha", &alpha),
            ("eps-over-delta", &epsilon_over_delta),
            ("delta-ratio", &delta_ratio),
        ] {
            if axis.is_empty() {
                return Err(Error::Config(format!("{name} axis is empty")));
            }
        }
        let spec = SweepSpec {
            alpha,
            epsilon_over_delta,
            delta_ratio,
        };
        spec.points()?;
        Ok(spec)
    }

    pub fn parse(alpha: &str, epsilon_over_delta: &str, delta_ratio: &str) -> Result<Self> {
        Self::new(
            parse_axis(alpha)?,
            parse_axis(epsilon_over_delta)?,
            parse_axis(delta_ratio)?,
        )
    }

    /// Named grids. Only `Delta/omega_c = 0.04` in `fig2`/`fig3` is fixed; the
    /// other ratio and asymmetry ladders are representative choices (see
    /// [`PRESET_NOTE`]).
    pub fn preset(name: &str) -> Result<Self> {
        let alpha = parse_axis("0.05:0.95:0.05")?;
        match name {
            "fig1" => Self::new(alpha, vec![0.0], vec![0.01, 0.04, 0.1]),
            "fig2" => Self::new(alpha, vec![0.02, 0.1, 0.5], vec![0.04]),
            "fig3" => {
                let mut a = vec![0.01];
                a.extend(alpha);
                Self::new(a, vec![0.1, 0.5, 1.0], vec![0.04])
            }
            _ => Err(Error::Config(format!(
                "unknown preset {name:?}; expected fig1, fig2 or fig3"
            ))),
        }
    }

    pub fn len(&self) -> usize {
        self.alpha.len() * self.epsilon_over_delta.len() * self.delta_ratio.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Grid points in output order: by ratio, then asymmetry, then alpha.
    pub fn points(&self) -> Result<Vec<SpinBosonPoint>> {
        let mut out = Vec::with_capacity(self.len());
        for &dr in &self.delta_ratio {
            for &eps in &self.epsilon_over_delta {
                for &a in &self.alpha {
                    out.push(SpinBosonPoint::new(a, eps, dr)?);
                }
            }
        }
        Ok(out)
    }
}

fn sort_key(r: &ObservableRecord) -> (f64, f64, f64) {
    (r.delta_ratio, r.epsilon_over_delta, r.alpha)
}

/// Evaluates every grid point on a pool of `jobs` workers (all cores if `None`).
/// Failed points become rows with `error` set; the sweep carries on.
pub fn run_sweep(
    spec: &SweepSpec,
    cfg: &NrgConfig,
    jobs: Option<usize>,
) -> Result<Vec<ObservableRecord>> {
    cfg.validate()?;
    let points = spec.points()?;
    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Some(n) = jobs {
        if n == 0 {
            return Err(Error::Config("jobs must be positive".into()));
        }
        builder = builder.num_threads(n);
    }
    let pool = builder
        .build()
        .map_err(|e| Error::Config(format!("cannot start worker pool: {e}")))?;
    let mut rows: Vec<ObservableRecord> = pool.install(|| {
        points
            .par_iter()
            .map(|p| {
                run_point(p, cfg).unwrap_or_else(|e| {
                    log::warn!("point {p:?} failed: {e}");
                    ObservableRecord::failed(p, cfg, e.to_string())
                })
            })
            .collect()
    });
    rows.sort_by(|a, b| {
        let (ka, kb) = (sort_key(a), sort_key(b));
        ka.0.total_cmp(&kb.0)
            .then(ka.1.total_cmp(&kb.1))
            .then(ka.2.total_cmp(&kb.2))
    });
    Ok(rows)
}

/// `%.12g`: 12 significant digits, exponent form outside `[1e-4, 1e12)`.
pub fn format_g12(x: f64) -> String {
    if !x.is_finite() {
        return if x.is_nan() {
            "nan".into()
        } else if x > 0.0 {
            "inf".into()
        } else {
            "-inf".into()
        };
    }
    if x == 0.0 {
        return "0".into();
    }
    let sci = format!("{x:.11e}");
    let (mantissa, exp) = sci.split_once('e').expect("exponent present");
    let exp: i32 = exp.parse().expect("integer exponent");
    let trim = |s: String| -> String {
        if s.contains('.') {
            s.trim_end_matches('0').trim_end_matches('.').to_string()
        } else {
            s
        }
    };
    if (-4..12).contains(&exp) {
        let decimals = (11 - exp).max(0) as usize;
        trim(format!("{x:.decimals$}"))
    } else {
        let sign = if exp < 0 { '-' } else { '+' };
        format!("{}e{sign}{:02}", trim(mantissa.to_string()), exp.abs())
    }
}

pub fn csv_string(records: &[ObservableRecord]) -> String {
    let mut out = String::from(CSV_HEADER);
    out.push('\n');
    for r in records {
        let fields = [
            format_g12(r.alpha),
            format_g12(r.epsilon_over_delta),
            format_g12(r.delta_ratio),
            format_g12(r.lambda),
            r.n_keep.to_string(),
            r.n_m.to_string(),
            r.converged.to_string(),
            format_g12(r.sx),
            format_g12(r.sz),
            format_g12(r.entropy),
            format_g12(r.p_plus),
            format_g12(r.p_minus),
            format_g12(r.delta_r),
        ];
        out.push_str(&fields.join(","));
        out.push('\n');
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Metadata {
    pub solver: String,
    pub version: String,
    pub sign_convention: String,
    pub units: String,
    pub config: NrgConfig,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub note: Option<String>,
}

impl Metadata {
    pub fn new(cfg: &NrgConfig) -> Self {
        Metadata {
            solver: env!("CARGO_PKG_NAME").into(),
            version: env!("CARGO_PKG_VERSION").into(),
            sign_convention: SIGN_CONVENTION.into(),
            units: UNITS.into(),
            config: *cfg,
            note: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepOutput {
    pub metadata: Metadata,
    pub records: Vec<ObservableRecord>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Format {
    Csv,
    Json,
}

impl std::str::FromStr for Format {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "csv" => Ok(Format::Csv),
            "json" => Ok(Format::Json),
            _ => Err(Error::Config(format!(
                "unknown format {s:?}; expected csv or json"
            ))),
        }
    }
}

pub fn render(records: &[ObservableRecord], cfg: &NrgConfig, format: Format) -> Result<String> {
    render_annotated(records, cfg, format, None)
}

/// As [`render`]; JSON output carries `note` in its metadata.
pub fn render_annotated(
    records: &[ObservableRecord],
    cfg: &NrgConfig,
    format: Format,
    note: Option<&str>,
) -> Result<String> {
    match format {
        Format::Csv => Ok(csv_string(records)),
        Format::Json => {
            let out = SweepOutput {
                metadata: Metadata {
                    note: note.map(str::to_owned),
                    ..Metadata::new(cfg)
                },
                records: records.to_vec(),
            };
            Ok(serde_json::to_string_pretty(&out)? + "\n")
        }
    }
}

pub fn write_output(
    path: &Path,
    records: &[ObservableRecord],
    cfg: &NrgConfig,
    format: Format,
) -> Result<()> {
    fs::write(path, render(records, cfg, format)?)?;
    Ok(())
}

pub fn read_json(path: &Path) -> Result<SweepOutput> {
    Ok(serde_json::from_str(&fs::read_to_string(path)?)?)
}
