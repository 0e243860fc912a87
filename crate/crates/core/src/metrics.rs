//! Fidelity metrics: PSNR, SSIM and the motion-direction score.
//!
//! SSIM follows the reference formulation: an 11×11 Gaussian window with
//! σ = 1.5, `K1 = 0.01`, `K2 = 0.03`, dynamic range 1, averaged over all
//! fully contained ("valid") window positions.

use std::io::Write;

use crate::error::{ImagingError, Result};
use crate::video::{Plane, VideoCube};

/// Reported for identical inputs, where the MSE is zero.
pub const PSNR_CAP_DB: f64 = 99.0;

pub const SSIM_WINDOW: usize = 11;
pub const SSIM_SIGMA: f64 = 1.5;
const SSIM_K1: f64 = 0.01;
const SSIM_K2: f64 = 0.03;

fn same_dims(a: &Plane, b: &Plane) -> Result<()> {
    if a.dims() != b.dims() {
        return Err(ImagingError::dims(format!(
            "images differ in size: {}x{} vs {}x{}",
            a.height(),
            a.width(),
            b.height(),
            b.width()
        )));
    }
    Ok(())
}

pub fn mse(a: &Plane, b: &Plane) -> Result<f64> {
    same_dims(a, b)?;
    let sum: f64 = a
        .as_slice()
        .iter()
        .zip(b.as_slice())
        .map(|(x, y)| (x - y) * (x - y))
        .sum();
    Ok(sum / a.as_slice().len() as f64)
}

/// `10 · log10(peak² / MSE)`, capped at [`PSNR_CAP_DB`].
pub fn psnr(a: &Plane, b: &Plane, peak: f64) -> Result<f64> {
    let err = mse(a, b)?;
    if err == 0.0 {
        return Ok(PSNR_CAP_DB);
    }
    Ok((10.0 * (peak * peak / err).log10()).min(PSNR_CAP_DB))
}

/// Normalized 1-D Gaussian taps; the 2-D window is their outer product.
pub fn gaussian_taps(size: usize, sigma: f64) -> Vec<f64> {
    let c = (size as f64 - 1.0) / 2.0;
    let raw: Vec<f64> = (0..size)
        .map(|i| (-((i as f64 - c).powi(2)) / (2.0 * sigma * sigma)).exp())
        .collect();
    let total: f64 = raw.iter().sum();
    raw.into_iter().map(|v| v / total).collect()
}

/// Separable valid-mode filtering.
fn filter_valid(data: &[f64], h: usize, w: usize, taps: &[f64]) -> Vec<f64> {
    let k = taps.len();
    let (oh, ow) = (h - k + 1, w - k + 1);
    let mut rows = vec![0.0; h * ow];
    for y in 0..h {
        for x in 0..ow {
            rows[y * ow + x] = taps.iter().enumerate().map(|(i, t)| t * data[y * w + x + i]).sum();
        }
    }
    let mut out = vec![0.0; oh * ow];
    for y in 0..oh {
        for x in 0..ow {
            out[y * ow + x] = taps.iter().enumerate().map(|(i, t)| t * rows[(y + i) * ow + x]).sum();
        }
    }
    out
}

pub fn ssim(a: &Plane, b: &Plane) -> Result<f64> {
    same_dims(a, b)?;
    let (h, w) = a.dims();
    if h < SSIM_WINDOW || w < SSIM_WINDOW {
        return Err(ImagingError::dims(format!(
            "SSIM needs at least {SSIM_WINDOW}x{SSIM_WINDOW}, got {h}x{w}"
        )));
    }
    let taps = gaussian_taps(SSIM_WINDOW, SSIM_SIGMA);
    let (xa, xb) = (a.as_slice(), b.as_slice());
    let sq = |v: &[f64]| v.iter().map(|x| x * x).collect::<Vec<_>>();
    let prod: Vec<f64> = xa.iter().zip(xb).map(|(x, y)| x * y).collect();
    let mu_a = filter_valid(xa, h, w, &taps);
    let mu_b = filter_valid(xb, h, w, &taps);
    let e_aa = filter_valid(&sq(xa), h, w, &taps);
    let e_bb = filter_valid(&sq(xb), h, w, &taps);
    let e_ab = filter_valid(&prod, h, w, &taps);
    let c1 = SSIM_K1 * SSIM_K1;
    let c2 = SSIM_K2 * SSIM_K2;
    let n = mu_a.len();
    let total: f64 = (0..n)
        .map(|i| {
            let (ma, mb) = (mu_a[i], mu_b[i]);
            let var_a = e_aa[i] - ma * ma;
            let var_b = e_bb[i] - mb * mb;
            let cov = e_ab[i] - ma * mb;
            ((2.0 * ma * mb + c1) * (2.0 * cov + c2)) / ((ma * ma + mb * mb + c1) * (var_a + var_b + c2))
        })
        .sum();
    Ok(total / n as f64)
}

#[derive(Debug, Clone, PartialEq)]
pub struct MetricReport {
    pub psnr: Vec<f64>,
    pub ssim: Vec<f64>,
    pub mean_psnr: f64,
    pub mean_ssim: f64,
    /// Frame `T / 2` (the fifth of nine).
    pub middle_psnr: f64,
    pub middle_ssim: f64,
}

fn same_video_dims(pred: &VideoCube, truth: &VideoCube) -> Result<()> {
    if pred.len() != truth.len() || pred.height() != truth.height() || pred.width() != truth.width() {
        return Err(ImagingError::dims(format!(
            "videos differ: {}x{}x{} vs {}x{}x{}",
            pred.height(),
            pred.width(),
            pred.len(),
            truth.height(),
            truth.width(),
            truth.len()
        )));
    }
    Ok(())
}

pub fn video_report(pred: &VideoCube, truth: &VideoCube) -> Result<MetricReport> {
    same_video_dims(pred, truth)?;
    let psnr_v = pred
        .frames()
        .iter()
        .zip(truth.frames())
        .map(|(p, t)| psnr(p, t, 1.0))
        .collect::<Result<Vec<_>>>()?;
    let ssim_v = pred
        .frames()
        .iter()
        .zip(truth.frames())
        .map(|(p, t)| ssim(p, t))
        .collect::<Result<Vec<_>>>()?;
    let mid = pred.len() / 2;
    Ok(MetricReport {
        mean_psnr: mean(&psnr_v),
        mean_ssim: mean(&ssim_v),
        middle_psnr: psnr_v[mid],
        middle_ssim: ssim_v[mid],
        psnr: psnr_v,
        ssim: ssim_v,
    })
}

pub fn mean(values: &[f64]) -> f64 {
    values.iter().sum::<f64>() / values.len() as f64
}

pub fn mean_psnr(pred: &VideoCube, truth: &VideoCube) -> Result<f64> {
    same_video_dims(pred, truth)?;
    let v = pred
        .frames()
        .iter()
        .zip(truth.frames())
        .map(|(p, t)| psnr(p, t, 1.0))
        .collect::<Result<Vec<_>>>()?;
    Ok(mean(&v))
}

/// Mean PSNR against the truth minus mean PSNR against the time-reversed
/// truth. Positive when the prediction follows the true motion direction.
pub fn direction_score(pred: &VideoCube, truth: &VideoCube) -> Result<f64> {
    let forward = mean_psnr(pred, truth)?;
    let backward = mean_psnr(pred, &truth.time_reversed())?;
    Ok(forward - backward)
}

/// One evaluated sequence for [`write_report_csv`].
pub struct SequenceReport<'a> {
    pub id: &'a str,
    pub report: &'a MetricReport,
    pub direction: Option<f64>,
}

pub const REPORT_HEADER: [&str; 5] = ["sequence", "frame", "psnr", "ssim", "direction"];

/// Writes per-frame rows, a `mean` row per sequence, and a final `all,mean`
/// row averaging the per-sequence means.
pub fn write_report_csv<W: Write>(out: W, sequences: &[SequenceReport<'_>]) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(out);
    let to_err = |e: csv::Error| ImagingError::Frames(format!("writing report: {e}"));
    wtr.write_record(REPORT_HEADER).map_err(to_err)?;
    for seq in sequences {
        for (i, (p, s)) in seq.report.psnr.iter().zip(&seq.report.ssim).enumerate() {
            wtr.write_record([seq.id, &i.to_string(), &format!("{p:.6}"), &format!("{s:.6}"), ""])
                .map_err(to_err)?;
        }
        let dir = seq.direction.map(|d| format!("{d:.6}")).unwrap_or_default();
        wtr.write_record([
            seq.id,
            "mean",
            &format!("{:.6}", seq.report.mean_psnr),
            &format!("{:.6}", seq.report.mean_ssim),
            &dir,
        ])
        .map_err(to_err)?;
    }
    if !sequences.is_empty() {
        let p: Vec<f64> = sequences.iter().map(|s| s.report.mean_psnr).collect();
        let s: Vec<f64> = sequences.iter().map(|s| s.report.mean_ssim).collect();
        let d: Vec<f64> = sequences.iter().filter_map(|s| s.direction).collect();
        let dir = if d.is_empty() { String::new() } else { format!("{:.6}", mean(&d)) };
        wtr.write_record(["all", "mean", &format!("{:.6}", mean(&p)), &format!("{:.6}", mean(&s)), &dir])
            .map_err(to_err)?;
    }
    wtr.flush()
        .map_err(|e| ImagingError::Frames(format!("writing report: {e}")))?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_plane(rng: &mut ChaCha8Rng, h: usize, w: usize) -> Plane {
        Plane::from_fn(h, w, |_, _| rng.random()).unwrap()
    }

    #[test]
    fn psnr_closed_form_and_cap() {
        let a = Plane::filled(4, 4, 0.2).unwrap();
        let b = Plane::filled(4, 4, 0.3).unwrap();
        // MSE = 0.1^2 = 0.01 up to rounding of 0.3 - 0.2
        let p = psnr(&a, &b, 1.0).unwrap();
        let exact_mse = (0.3f64 - 0.2).powi(2);
        assert!((p - 10.0 * (1.0 / exact_mse).log10()).abs() < 1e-12);
        assert!((p - 20.0).abs() < 1e-9);
        assert_eq!(psnr(&a, &a, 1.0).unwrap(), PSNR_CAP_DB);
    }

    #[test]
    fn psnr_matches_direct_mse_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let a = random_plane(&mut rng, 13, 17);
        let b = random_plane(&mut rng, 13, 17);
        let mut s = 0.0;
        for y in 0..13 {
            for x in 0..17 {
                s += (a.get(y, x) - b.get(y, x)).powi(2);
            }
        }
        let oracle = 10.0 * (1.0 / (s / (13.0 * 17.0))).log10();
        assert!((psnr(&a, &b, 1.0).unwrap() - oracle).abs() < 1e-9);
        assert_eq!(psnr(&a, &b, 1.0).unwrap(), psnr(&b, &a, 1.0).unwrap());
    }

    #[test]
    fn psnr_decreases_with_noise_amplitude() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let base = Plane::from_fn(16, 16, |_, _| 0.3 + 0.4 * rng.random::<f64>()).unwrap();
        let noise: Vec<f64> = (0..256).map(|_| rng.random::<f64>() * 2.0 - 1.0).collect();
        let scores: Vec<f64> = [0.01, 0.05, 0.2]
            .iter()
            .map(|&amp| {
                let noisy = Plane::new(
                    16,
                    16,
                    base.as_slice().iter().zip(&noise).map(|(v, n)| v + amp * n).collect(),
                )
                .unwrap();
                psnr(&base, &noisy, 1.0).unwrap()
            })
            .collect();
        assert!(scores[0] > scores[1] && scores[1] > scores[2], "{scores:?}");
    }

    #[test]
    fn ssim_identity_and_symmetry() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let a = random_plane(&mut rng, 20, 23);
        let b = random_plane(&mut rng, 20, 23);
        assert!((ssim(&a, &a).unwrap() - 1.0).abs() < 1e-9);
        assert!((ssim(&a, &b).unwrap() - ssim(&b, &a).unwrap()).abs() < 1e-12);
        assert!(ssim(&a, &b).unwrap() < 0.5);
        let small = random_plane(&mut rng, 10, 30);
        assert!(ssim(&small, &small).is_err());
    }

    /// Direct 2-D weighted sums over every valid window.
    fn ssim_oracle(a: &Plane, b: &Plane) -> f64 {
        let g = gaussian_taps(11, 1.5);
        let (h, w) = a.dims();
        let (c1, c2) = (0.0001, 0.0009);
        let mut total = 0.0;
        let mut count = 0;
        for y0 in 0..=h - 11 {
            for x0 in 0..=w - 11 {
                let (mut ma, mut mb, mut saa, mut sbb, mut sab) = (0.0, 0.0, 0.0, 0.0, 0.0);
                for i in 0..11 {
                    for j in 0..11 {
                        let wt = g[i] * g[j];
                        let (va, vb) = (a.get(y0 + i, x0 + j), b.get(y0 + i, x0 + j));
                        ma += wt * va;
                        mb += wt * vb;
                        saa += wt * va * va;
                        sbb += wt * vb * vb;
                        sab += wt * va * vb;
                    }
                }
                let (va, vb, cov) = (saa - ma * ma, sbb - mb * mb, sab - ma * mb);
                total += ((2.0 * ma * mb + c1) * (2.0 * cov + c2)) / ((ma * ma + mb * mb + c1) * (va + vb + c2));
                count += 1;
            }
        }
        total / count as f64
    }

    #[test]
    fn ssim_constant_offset_matches_windowed_oracle() {
        let a = Plane::filled(16, 16, 0.5).unwrap();
        let b = Plane::filled(16, 16, 0.6).unwrap();
        let oracle = ssim_oracle(&a, &b);
        assert!((ssim(&a, &b).unwrap() - oracle).abs() < 1e-6);
        // closed form for flat patches: luminance term only
        let closed = (2.0 * 0.5 * 0.6 + 0.0001) / (0.25 + 0.36 + 0.0001);
        assert!((oracle - closed).abs() < 1e-9);

        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let x = random_plane(&mut rng, 15, 14);
        let y = random_plane(&mut rng, 15, 14);
        assert!((ssim(&x, &y).unwrap() - ssim_oracle(&x, &y)).abs() < 1e-9);
    }

    fn moving_bar(reverse: bool) -> VideoCube {
        let v = VideoCube::from_fn(12, 12, 9, |t, _, x| if x == t + 1 { 0.9 } else { 0.1 }).unwrap();
        if reverse {
            v.time_reversed()
        } else {
            v
        }
    }

    #[test]
    fn direction_score_signs() {
        let truth = moving_bar(false);
        let s = direction_score(&truth, &truth).unwrap();
        assert!(s > 0.0);
        let rev = truth.time_reversed();
        let s_rev = direction_score(&truth, &rev).unwrap();
        assert!((s + s_rev).abs() < 1e-9);
        assert!((direction_score(&rev, &truth).unwrap() + s).abs() < 1e-9);
        let stat = VideoCube::from_fn(12, 12, 9, |_, y, x| ((y + x) % 5) as f64 / 5.0).unwrap();
        assert!(direction_score(&stat, &stat).unwrap().abs() < 1e-9);
        assert_eq!(moving_bar(true), rev);
    }

    #[test]
    fn report_means_and_csv() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let truth = VideoCube::from_fn(12, 12, 9, |_, _, _| rng.random()).unwrap();
        let pred = VideoCube::from_fn(12, 12, 9, |t, y, x| (truth.at(t, y, x) * 0.9 + 0.05).min(1.0)).unwrap();
        let r = video_report(&pred, &truth).unwrap();
        for t in 0..9 {
            assert_eq!(r.psnr[t], psnr(pred.frame(t), truth.frame(t), 1.0).unwrap());
            assert_eq!(r.ssim[t], ssim(pred.frame(t), truth.frame(t)).unwrap());
        }
        assert_eq!(r.mean_psnr, r.psnr.iter().sum::<f64>() / 9.0);
        assert_eq!(r.middle_psnr, r.psnr[4]);
        let same = video_report(&truth, &truth).unwrap();
        assert!((same.mean_ssim - 1.0).abs() < 1e-9);
        assert_eq!(same.mean_psnr, PSNR_CAP_DB);

        let mut buf = Vec::new();
        write_report_csv(
            &mut buf,
            &[SequenceReport { id: "seq0", report: &r, direction: Some(1.5) }],
        )
        .unwrap();
        let text = String::from_utf8(buf).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines[0], "sequence,frame,psnr,ssim,direction");
        assert_eq!(lines.len(), 1 + 9 + 1 + 1);
        assert!(lines[10].starts_with("seq0,mean,"));
        assert!(lines[11].starts_with("all,mean,"));
    }
}
