//! CSV and JSON renderings of trajectories, controls, solutions and spectra.
//!
//! Floats are written in shortest round-trip form, so equal inputs give
//! byte-identical files.

use serde::Serialize;
use serde_json::{json, Value};

use crate::error::{Error, Result};
use crate::grid::GridFunction;
use crate::model::{ControlSignal, Segment, SegmentLabel};
use crate::optimal::OptimalSolution;
use crate::simulation::{SystemTrajectory, Trajectory};
use crate::spectral::{MembershipReport, Spectrum};

fn csv_error(e: impl std::fmt::Display) -> Error {
    Error::Config(format!("csv: {e}"))
}

fn render<R: Serialize>(header: &[String], rows: impl IntoIterator<Item = R>) -> Result<String> {
    let mut w = csv::WriterBuilder::new().has_headers(false).from_writer(Vec::new());
    w.write_record(header).map_err(csv_error)?;
    for row in rows {
        w.serialize(row).map_err(csv_error)?;
    }
    let bytes = w.into_inner().map_err(csv_error)?;
    String::from_utf8(bytes).map_err(csv_error)
}

fn names(list: &[&str]) -> Vec<String> {
    list.iter().map(|s| s.to_string()).collect()
}

/// `t, x` on `[-1, t_end]`, with `dx` (right limits) when requested.
pub fn trajectory_csv(traj: &Trajectory, with_derivative: bool) -> Result<String> {
    let full = traj.values_full();
    let dx = &traj.deriv().right;
    if with_derivative {
        let offset = full.len() - dx.len();
        render(
            &names(&["t", "x", "dx"]),
            full.nodes().zip(full.samples()).enumerate().map(|(i, (t, x))| {
                let d = i.checked_sub(offset).map(|j| dx.samples()[j]);
                (t, *x, d)
            }),
        )
    } else {
        render(&names(&["t", "x"]), full.nodes().zip(full.samples().iter().copied()))
    }
}

/// `t, x_1, …, x_n` on `[-1, t_end]`.
pub fn system_trajectory_csv(traj: &SystemTrajectory) -> Result<String> {
    let parts: Vec<GridFunction> = traj.components().iter().map(|c| c.values_full()).collect();
    let mut header = vec!["t".to_string()];
    header.extend((1..=parts.len()).map(|j| format!("x_{j}")));
    render(
        &header,
        parts[0].nodes().enumerate().map(|(i, t)| {
            let mut row = vec![t];
            row.extend(parts.iter().map(|p| p.samples()[i]));
            row
        }),
    )
}

/// `t, u, segment_label`; segment ends appear once per segment.
pub fn control_csv(control: &ControlSignal) -> Result<String> {
    render(
        &names(&["t", "u", "segment_label"]),
        control.segments().iter().flat_map(|s| {
            s.values
                .nodes()
                .zip(s.values.samples().iter().copied())
                .map(move |(t, u)| (t, u, s.label.to_string()))
        }),
    )
}

/// Reads the output of [`control_csv`].
pub fn read_control_csv(text: &str) -> Result<ControlSignal> {
    let mut reader = csv::Reader::from_reader(text.as_bytes());
    let mut segments: Vec<(SegmentLabel, Vec<(f64, f64)>)> = Vec::new();
    for (line, record) in reader.deserialize::<(f64, f64, String)>().enumerate() {
        let (t, u, label) = record.map_err(|e| Error::Config(format!("control row {}: {e}", line + 2)))?;
        let label: SegmentLabel = label.parse()?;
        match segments.last_mut() {
            Some((l, rows)) if *l == label && rows.last().is_some_and(|r| r.0 < t) => {
                rows.push((t, u))
            }
            _ => segments.push((label, vec![(t, u)])),
        }
    }
    if segments.is_empty() {
        return Err(Error::Config("control file has no rows".into()));
    }
    let segments = segments
        .into_iter()
        .map(|(label, rows)| {
            let (first, last) = (rows[0].0, rows[rows.len() - 1].0);
            let values = GridFunction::from_samples(first, last, rows.iter().map(|r| r.1).collect())?;
            Ok(Segment { label, values })
        })
        .collect::<Result<Vec<_>>>()?;
    let generator = segments
        .iter()
        .find(|s| s.label == SegmentLabel::Generator)
        .map(|s| s.values.clone());
    ControlSignal::new(segments, generator)
}

/// `t, u_hat` for a generator on `[0, ε]`.
pub fn generator_csv(u0: &GridFunction) -> Result<String> {
    render(&names(&["t", "u_hat"]), u0.nodes().zip(u0.samples().iter().copied()))
}

pub fn solution_summary(sol: &OptimalSolution) -> Value {
    json!({
        "energy": sol.energy,
        "constants": sol.constants.as_slice(),
        "residuals": sol.moment_residuals,
        "epsilon": sol.epsilon(),
        "horizon": sol.horizon(),
    })
}

/// `re, im, residual`, one row per zero.
pub fn spectrum_csv(spectrum: &Spectrum) -> Result<String> {
    render(
        &names(&["re", "im", "residual"]),
        spectrum
            .zeros
            .iter()
            .zip(&spectrum.residuals)
            .map(|(z, r)| (z.re, z.im, *r)),
    )
}

pub fn membership_summary(report: &MembershipReport) -> Value {
    json!({
        "max_normalized_product": report.max_normalized_product,
        "witnesses": report.witnesses,
        "seed": report.seed,
    })
}

/// Pretty JSON with a trailing newline.
pub fn to_json_text(value: &Value) -> String {
    let mut s = serde_json::to_string_pretty(value).unwrap_or_default();
    s.push('\n');
    s
}
