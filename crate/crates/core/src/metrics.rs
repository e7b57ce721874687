//! Stereo and depth evaluation metrics over a validity mask.

use crate::error::{Error, Result};
use crate::fog::{disparity_to_depth, CameraRig};
use crate::image::{DepthMap, DisparityMap};

/// Error threshold for P1, in pixels (strict `>`).
pub const P1_THRESHOLD: f64 = 1.0;
/// Error threshold for the 3px rate and the absolute part of D1.
pub const PX3_THRESHOLD: f64 = 3.0;
/// Relative part of D1: error above this fraction of the ground truth.
pub const D1_RELATIVE: f64 = 0.05;
/// Base of the delta accuracy thresholds `1.25^k`.
pub const DELTA_BASE: f64 = 1.25;

/// Disparity errors. Rates are fractions in `[0, 1]`.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct StereoEval {
    pub epe: f64,
    pub p1: f64,
    pub px3: f64,
    pub d1: f64,
}

/// Depth errors. `silog` is already scaled by 100; deltas are fractions.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct DepthEval {
    pub rmse: f64,
    pub mae: f64,
    pub srd: f64,
    pub ard: f64,
    pub silog: f64,
    pub delta1: f64,
    pub delta2: f64,
    pub delta3: f64,
}

fn check_len(op: &'static str, n: usize, lens: &[usize]) -> Result<()> {
    if lens.iter().any(|&l| l != n) {
        return Err(Error::shape(op, format!("lengths {lens:?} vs {n}")));
    }
    Ok(())
}

/// Disparity metrics on pixels where `mask` is true (all pixels if `None`).
pub fn stereo_eval(pred: &DisparityMap, gt: &DisparityMap, mask: Option<&[bool]>) -> Result<StereoEval> {
    let n = gt.data.len();
    check_len("stereo_eval", n, &[pred.data.len(), mask.map_or(n, |m| m.len())])?;
    let mut count = 0usize;
    let (mut sum, mut p1, mut px3, mut d1) = (0.0, 0usize, 0usize, 0usize);
    for i in 0..n {
        if mask.is_some_and(|m| !m[i]) {
            continue;
        }
        let err = (pred.data[i] - gt.data[i]).abs();
        count += 1;
        sum += err;
        p1 += usize::from(err > P1_THRESHOLD);
        px3 += usize::from(err > PX3_THRESHOLD);
        d1 += usize::from(err > PX3_THRESHOLD && err > D1_RELATIVE * gt.data[i].abs());
    }
    if count == 0 {
        return Err(Error::EmptyMask);
    }
    let c = count as f64;
    Ok(StereoEval {
        epe: sum / c,
        p1: p1 as f64 / c,
        px3: px3 as f64 / c,
        d1: d1 as f64 / c,
    })
}

/// Depth metrics on pixels valid in both maps and in `mask`.
pub fn depth_eval(pred: &DepthMap, gt: &DepthMap, mask: Option<&[bool]>) -> Result<DepthEval> {
    let n = gt.values.len();
    check_len("depth_eval", n, &[pred.values.len(), mask.map_or(n, |m| m.len())])?;
    let mut count = 0usize;
    let (mut sq, mut abs, mut srd, mut ard) = (0.0, 0.0, 0.0, 0.0);
    let mut logs = Vec::with_capacity(n);
    let mut deltas = [0usize; 3];
    for i in 0..n {
        if !(gt.valid[i] && pred.valid[i]) || mask.is_some_and(|m| !m[i]) {
            continue;
        }
        let (zp, zg) = (pred.values[i], gt.values[i]);
        if !(zp > 0.0) || !(zg > 0.0) {
            return Err(Error::InvalidArgument(format!(
                "non-positive depth at pixel {i}: pred {zp}, gt {zg}"
            )));
        }
        count += 1;
        let e = zp - zg;
        sq += e * e;
        abs += e.abs();
        srd += e * e / zg;
        ard += e.abs() / zg;
        logs.push(zp.ln() - zg.ln());
        let ratio = (zp / zg).max(zg / zp);
        for (k, slot) in deltas.iter_mut().enumerate() {
            *slot += usize::from(ratio < DELTA_BASE.powi(k as i32 + 1));
        }
    }
    if count == 0 {
        return Err(Error::EmptyMask);
    }
    let c = count as f64;
    // two-pass variance keeps constant-ratio predictions at zero
    let mean_d = logs.iter().sum::<f64>() / c;
    let var = logs.iter().map(|d| (d - mean_d).powi(2)).sum::<f64>() / c;
    Ok(DepthEval {
        rmse: (sq / c).sqrt(),
        mae: abs / c,
        srd: srd / c,
        ard: ard / c,
        silog: 100.0 * var.sqrt(),
        delta1: deltas[0] as f64 / c,
        delta2: deltas[1] as f64 / c,
        delta3: deltas[2] as f64 / c,
    })
}

/// Converts predicted disparity to depth through `rig` and evaluates it
/// against metric ground truth. Pixels with invalid predicted disparity are
/// excluded.
pub fn disparity_depth_bridge(
    pred_disp: &DisparityMap,
    gt_depth: &DepthMap,
    rig: &CameraRig,
    mask: Option<&[bool]>,
) -> Result<DepthEval> {
    let pred = disparity_to_depth(pred_disp, rig)?;
    depth_eval(&pred, gt_depth, mask)
}

impl StereoEval {
    /// Pixel-weighted mean of per-image results.
    pub fn mean(items: &[StereoEval]) -> StereoEval {
        let n = items.len().max(1) as f64;
        let mut acc = StereoEval::default();
        for e in items {
            acc.epe += e.epe;
            acc.p1 += e.p1;
            acc.px3 += e.px3;
            acc.d1 += e.d1;
        }
        StereoEval {
            epe: acc.epe / n,
            p1: acc.p1 / n,
            px3: acc.px3 / n,
            d1: acc.d1 / n,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn disp(v: Vec<f64>) -> DisparityMap {
        let n = v.len();
        DisparityMap::new(1, n, v).unwrap()
    }

    #[test]
    fn perfect_prediction() {
        let gt = disp(vec![3.0, 5.0, 8.0, 1.0]);
        let e = stereo_eval(&gt, &gt, None).unwrap();
        assert_eq!(e, StereoEval::default());
    }

    #[test]
    fn unit_offset_is_not_an_outlier() {
        let gt = disp(vec![3.0, 5.0, 8.0, 1.0]);
        let pred = disp(gt.data.iter().map(|v| v + 1.0).collect());
        let e = stereo_eval(&pred, &gt, None).unwrap();
        assert_eq!((e.epe, e.p1, e.px3, e.d1), (1.0, 0.0, 0.0, 0.0));
    }

    #[test]
    fn half_off_by_four() {
        let gt = disp(vec![10.0; 8]);
        let pred = disp((0..8).map(|i| if i % 2 == 0 { 14.0 } else { 10.0 }).collect());
        let e = stereo_eval(&pred, &gt, None).unwrap();
        assert_eq!((e.epe, e.px3, e.d1, e.p1), (2.0, 0.5, 0.5, 0.5));
    }

    #[test]
    fn empty_mask_is_an_error() {
        let gt = disp(vec![1.0, 2.0]);
        assert!(matches!(stereo_eval(&gt, &gt, Some(&[false, false])), Err(Error::EmptyMask)));
    }

    #[test]
    fn depth_identity_and_doubling() {
        let gt = DepthMap::from_values(1, 4, vec![1.0, 2.0, 5.0, 9.0]).unwrap();
        let e = depth_eval(&gt, &gt, None).unwrap();
        assert_eq!((e.rmse, e.mae, e.srd, e.ard, e.silog), (0.0, 0.0, 0.0, 0.0, 0.0));
        assert_eq!(e.delta3, 1.0);

        let doubled = DepthMap::from_values(1, 4, gt.values.iter().map(|z| 2.0 * z).collect()).unwrap();
        let e = depth_eval(&doubled, &gt, None).unwrap();
        assert!((e.ard - 1.0).abs() < 1e-15);
        assert_eq!(e.delta3, 0.0);
        assert!(e.silog.abs() < 1e-9);
    }

    #[test]
    fn non_positive_depth_on_mask_is_rejected() {
        let gt = DepthMap::from_values(1, 2, vec![1.0, 2.0]).unwrap();
        let mut pred = gt.clone();
        pred.values[1] = -1.0;
        assert!(depth_eval(&pred, &gt, None).is_err());
    }

    #[test]
    fn bridge_round_trip() {
        let rig = CameraRig::new(200.0, 0.3).unwrap();
        let d = disp(vec![2.0, 4.0, 6.0, 12.0]);
        let gt = disparity_to_depth(&d, &rig).unwrap();
        let e = disparity_depth_bridge(&d, &gt, &rig, None).unwrap();
        assert_eq!(e.rmse, 0.0);
        assert_eq!(e.delta1, 1.0);
    }
}
