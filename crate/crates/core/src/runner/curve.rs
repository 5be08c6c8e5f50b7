//! Optimization curves derived from a run log.

use std::path::Path;

use plotters::prelude::*;
use serde::Serialize;
use thiserror::Error;

use super::runlog::RunLog;

pub const DEFAULT_SMOOTHING: f64 = 0.3;

#[derive(Debug, Error)]
pub enum CurveError {
    #[error("run log has no iterations")]
    Empty,
    #[error("smoothing must be in (0, 1], got {0}")]
    BadSmoothing(f64),
    #[error("writing table: {0}")]
    Csv(#[from] csv::Error),
    #[error("rendering image: {0}")]
    Render(String),
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CurveRow {
    pub iteration: usize,
    pub best_candidate: Option<f64>,
    pub best_so_far: Option<f64>,
    pub ensemble: Option<f64>,
    /// Moving average of `best_candidate`.
    pub ema: Option<f64>,
}

/// Running maximum; gaps carry the previous value.
pub fn running_max(values: &[Option<f64>]) -> Vec<Option<f64>> {
    let mut best: Option<f64> = None;
    values
        .iter()
        .map(|v| {
            if let Some(x) = v {
                best = Some(best.map_or(*x, |b| b.max(*x)));
            }
            best
        })
        .collect()
}

/// `ema_t = s * x_t + (1 - s) * ema_{t-1}`, starting from the first value.
/// Gaps carry the previous average.
pub fn ema(values: &[Option<f64>], smoothing: f64) -> Vec<Option<f64>> {
    let mut acc: Option<f64> = None;
    values
        .iter()
        .map(|v| {
            if let Some(x) = v {
                acc = Some(match acc {
                    None => *x,
                    Some(prev) => smoothing * x + (1.0 - smoothing) * prev,
                });
            }
            acc
        })
        .collect()
}

/// One row per iteration, seed round included.
pub fn curve_rows(log: &RunLog, smoothing: f64) -> Result<Vec<CurveRow>, CurveError> {
    if !(smoothing > 0.0 && smoothing <= 1.0) {
        return Err(CurveError::BadSmoothing(smoothing));
    }
    if log.records.is_empty() {
        return Err(CurveError::Empty);
    }
    let records: Vec<_> = log.all_records().collect();
    let raw: Vec<Option<f64>> = records.iter().map(|r| r.best_candidate).collect();
    let best = running_max(&raw);
    let smooth = ema(&raw, smoothing);
    Ok(records
        .iter()
        .enumerate()
        .map(|(i, r)| CurveRow {
            iteration: r.iteration,
            best_candidate: raw[i],
            best_so_far: best[i],
            ensemble: r.ensemble_fitness,
            ema: smooth[i],
        })
        .collect())
}

/// Comma-separated table with a header row. Empty cells mark missing values.
pub fn to_csv(rows: &[CurveRow]) -> Result<String, CurveError> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for r in rows {
        w.serialize(r)?;
    }
    let bytes = w
        .into_inner()
        .map_err(|e| csv::Error::from(e.into_error()))?;
    Ok(String::from_utf8(bytes).expect("csv output is UTF-8"))
}

pub fn export_curve(log: &RunLog, smoothing: f64) -> Result<String, CurveError> {
    to_csv(&curve_rows(log, smoothing)?)
}

/// Renders the curves as an SVG line chart.
pub fn render_svg(rows: &[CurveRow], path: &Path) -> Result<(), CurveError> {
    render(rows, path).map_err(|e| CurveError::Render(e.to_string()))
}

fn render(rows: &[CurveRow], path: &Path) -> Result<(), Box<dyn std::error::Error>> {
    let last = rows.last().map_or(1, |r| r.iteration.max(1));
    let values = rows
        .iter()
        .flat_map(|r| [r.best_candidate, r.best_so_far, r.ensemble, r.ema])
        .flatten();
    let (lo, hi) = values.fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| {
        (lo.min(v), hi.max(v))
    });
    let (lo, hi) = if lo.is_finite() { (lo, hi) } else { (0.0, 1.0) };
    let pad = ((hi - lo) * 0.05).max(0.01);

    let root = SVGBackend::new(path, (800, 500)).into_drawing_area();
    root.fill(&WHITE)?;
    let mut chart = ChartBuilder::on(&root)
        .margin(20)
        .x_label_area_size(40)
        .y_label_area_size(60)
        .build_cartesian_2d(0f64..last as f64, (lo - pad)..(hi + pad))?;
    chart
        .configure_mesh()
        .x_desc("iteration")
        .y_desc("fitness")
        .draw()?;

    type Pick = fn(&CurveRow) -> Option<f64>;
    let series: [(&str, RGBColor, Pick); 4] = [
        ("best candidate", RGBColor(170, 170, 170), |r| {
            r.best_candidate
        }),
        ("best so far", RGBColor(200, 40, 40), |r| r.best_so_far),
        ("ensemble", RGBColor(40, 90, 200), |r| r.ensemble),
        ("ema", RGBColor(40, 150, 60), |r| r.ema),
    ];
    for (name, color, pick) in series {
        let points: Vec<(f64, f64)> = rows
            .iter()
            .filter_map(|r| pick(r).map(|v| (r.iteration as f64, v)))
            .collect();
        chart
            .draw_series(LineSeries::new(points, color.stroke_width(2)))?
            .label(name)
            .legend(move |(x, y)| PathElement::new(vec![(x, y), (x + 20, y)], color));
    }
    chart
        .configure_series_labels()
        .background_style(WHITE.mix(0.8))
        .border_style(BLACK)
        .draw()?;
    root.present()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::runner::runlog::tests::{header, record};
    use proptest::prelude::*;

    fn log(points: &[f64]) -> RunLog {
        let mut best = f64::NEG_INFINITY;
        let mut recs: Vec<_> = points
            .iter()
            .enumerate()
            .map(|(i, &p)| {
                best = best.max(p);
                record(i, p, best)
            })
            .collect();
        let initial = recs.remove(0);
        RunLog {
            header: header(initial),
            records: recs,
        }
    }

    #[test]
    fn three_point_curve() {
        let rows = curve_rows(&log(&[0.2, 0.5, 0.4]), DEFAULT_SMOOTHING).unwrap();
        let best: Vec<_> = rows.iter().map(|r| r.best_so_far.unwrap()).collect();
        assert_eq!(best, [0.2, 0.5, 0.5]);
        assert_eq!(rows[1].ema, Some(0.3 * 0.5 + 0.7 * 0.2));
        let csv = to_csv(&rows).unwrap();
        let mut lines = csv.lines();
        assert_eq!(
            lines.next(),
            Some("iteration,best_candidate,best_so_far,ensemble,ema")
        );
        assert_eq!(lines.next(), Some("0,0.2,0.2,0.2,0.2"));
    }

    #[test]
    fn ema_identity_and_gaps() {
        let raw = [Some(0.1), None, Some(0.7), Some(0.3)];
        assert_eq!(ema(&raw, 1.0), [Some(0.1), Some(0.1), Some(0.7), Some(0.3)]);
        assert_eq!(
            running_max(&raw),
            [Some(0.1), Some(0.1), Some(0.7), Some(0.7)]
        );
        assert_eq!(ema(&[None, Some(0.5)], 0.3), [None, Some(0.5)]);
        let mut rows = curve_rows(&log(&[0.2, 0.5]), 0.3).unwrap();
        rows[1].best_candidate = None;
        assert!(to_csv(&rows)
            .unwrap()
            .lines()
            .nth(2)
            .unwrap()
            .starts_with("1,,"));
    }

    #[test]
    fn rejects_empty_and_bad_smoothing() {
        assert!(matches!(
            curve_rows(&log(&[0.2]), 0.3),
            Err(CurveError::Empty)
        ));
        assert!(matches!(
            curve_rows(&log(&[0.2, 0.3]), 0.0),
            Err(CurveError::BadSmoothing(_))
        ));
    }

    #[test]
    fn renders_svg() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("curve.svg");
        render_svg(&curve_rows(&log(&[0.2, 0.5, 0.4]), 0.3).unwrap(), &path).unwrap();
        let svg = std::fs::read_to_string(&path).unwrap();
        assert!(svg.starts_with("<svg") && svg.contains("best so far"));
    }

    proptest! {
        #[test]
        fn best_so_far_monotone(points in prop::collection::vec(0.0f64..1.0, 2..40)) {
            let rows = curve_rows(&log(&points), DEFAULT_SMOOTHING).unwrap();
            for w in rows.windows(2) {
                prop_assert!(w[1].best_so_far >= w[0].best_so_far);
            }
            let raw: Vec<_> = points.iter().copied().map(Some).collect();
            prop_assert_eq!(ema(&raw, 1.0), raw);
        }
    }
}
