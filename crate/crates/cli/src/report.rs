//! Per-image metric rows and their CSV form.

use std::fmt::Write;

use cfdnet::fog::{disparity_to_depth, CameraRig};
use cfdnet::image::DisparityMap;
use cfdnet::metrics::{depth_eval, stereo_eval, DepthEval, StereoEval};
use cfdnet::{Error, Result};

/// Rates are written as percentages.
pub const METRICS_HEADER: &str =
    "image,domain,epe,p1_pct,px3_pct,d1_pct,rmse,mae,srd,ard,silog,delta1_pct,delta2_pct,delta3_pct";

#[derive(Clone, Debug, PartialEq)]
pub struct MetricRow {
    pub image: String,
    pub domain: String,
    pub stereo: StereoEval,
    /// Absent when no predicted disparity converts to a valid depth.
    pub depth: Option<DepthEval>,
}

/// Scores `pred` against `gt`; depth metrics use depths derived through `rig`.
pub fn metric_row(image: &str, domain: &str, pred: &DisparityMap, gt: &DisparityMap, rig: &CameraRig) -> Result<MetricRow> {
    let stereo = stereo_eval(pred, gt, None)?;
    let gt_depth = disparity_to_depth(gt, rig)?;
    let pred_depth = disparity_to_depth(pred, rig)?;
    let depth = match depth_eval(&pred_depth, &gt_depth, None) {
        Ok(d) => Some(d),
        Err(Error::EmptyMask) => None,
        Err(e) => return Err(e),
    };
    Ok(MetricRow {
        image: image.to_string(),
        domain: domain.to_string(),
        stereo,
        depth,
    })
}

fn fields(s: &StereoEval, d: Option<&DepthEval>) -> String {
    let mut out = format!("{},{},{},{}", s.epe, 100.0 * s.p1, 100.0 * s.px3, 100.0 * s.d1);
    match d {
        Some(d) => write!(
            out,
            ",{},{},{},{},{},{},{},{}",
            d.rmse,
            d.mae,
            d.srd,
            d.ard,
            d.silog,
            100.0 * d.delta1,
            100.0 * d.delta2,
            100.0 * d.delta3
        )
        .unwrap(),
        None => out.push_str(",,,,,,,,"),
    }
    out
}

fn mean_depth(items: &[DepthEval]) -> Option<DepthEval> {
    if items.is_empty() {
        return None;
    }
    let n = items.len() as f64;
    let mut m = DepthEval::default();
    for d in items {
        m.rmse += d.rmse / n;
        m.mae += d.mae / n;
        m.srd += d.srd / n;
        m.ard += d.ard / n;
        m.silog += d.silog / n;
        m.delta1 += d.delta1 / n;
        m.delta2 += d.delta2 / n;
        m.delta3 += d.delta3 / n;
    }
    Some(m)
}

/// Header, one line per row, then a `mean` line per domain in first-seen
/// order. Depth means cover the rows that have depth metrics.
pub fn metrics_csv(rows: &[MetricRow]) -> String {
    let mut out = format!("{METRICS_HEADER}\n");
    let mut domains: Vec<&str> = Vec::new();
    for r in rows {
        writeln!(out, "{},{},{}", r.image, r.domain, fields(&r.stereo, r.depth.as_ref())).unwrap();
        if !domains.contains(&r.domain.as_str()) {
            domains.push(&r.domain);
        }
    }
    for domain in domains {
        let of_domain: Vec<&MetricRow> = rows.iter().filter(|r| r.domain == domain).collect();
        let stereo: Vec<StereoEval> = of_domain.iter().map(|r| r.stereo).collect();
        let depth: Vec<DepthEval> = of_domain.iter().filter_map(|r| r.depth).collect();
        writeln!(out, "mean,{domain},{}", fields(&StereoEval::mean(&stereo), mean_depth(&depth).as_ref())).unwrap();
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn perfect_prediction_reports_zero_error() {
        let rig = CameraRig::new(200.0, 0.3).unwrap();
        let gt = DisparityMap::new(2, 2, vec![2.0, 4.0, 6.0, 8.0]).unwrap();
        let row = metric_row("a", "clean", &gt, &gt, &rig).unwrap();
        let csv = metrics_csv(&[row]);
        let lines: Vec<&str> = csv.lines().collect();
        assert_eq!(lines.len(), 3);
        assert!(lines[1].starts_with("a,clean,0,0,0,0,0,0,0,0,0,100,100,100"));
        assert!(lines[2].starts_with("mean,clean,0,"));
    }

    #[test]
    fn zero_disparity_prediction_has_no_depth() {
        let rig = CameraRig::new(200.0, 0.3).unwrap();
        let gt = DisparityMap::filled(2, 2, 3.0);
        let row = metric_row("a", "fog", &DisparityMap::filled(2, 2, 0.0), &gt, &rig).unwrap();
        assert_eq!(row.stereo.epe, 3.0);
        assert!(row.depth.is_none());
        assert!(metrics_csv(&[row]).lines().nth(1).unwrap().ends_with(",,,,,,,,"));
    }
}
