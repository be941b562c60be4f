//! SSIM and the expansion-by-architecture evaluation harness.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use thiserror::Error;

use crate::dataset::{Dataset, DatasetError, Expansion, Split};
use crate::exec::Exec;
use crate::grid::{Cell, OccGrid, FREE_PIXEL};
use crate::models::ModelKind;
use crate::train::{predict, predict_raw, Checkpoint, TrainError};

pub const WINDOW: usize = 11;
pub const SIGMA: f64 = 1.5;
pub const DYNAMIC_RANGE: f64 = 255.0;
pub const K1: f64 = 0.01;
pub const K2: f64 = 0.03;

/// Marker for a missing cell in the text table.
pub const ABSENT: &str = "-";
pub const CSV_HEADER: &str = "kind,expansion,n,mean_ssim";

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("image shapes differ: {a:?} vs {b:?}")]
    ShapeMismatch {
        a: (usize, usize),
        b: (usize, usize),
    },
    #[error("image {width}x{height} is smaller than the {WINDOW}x{WINDOW} window")]
    TooSmall { width: usize, height: usize },
    #[error("test split is empty")]
    EmptyTestSet,
    #[error("report csv line {line}: {reason}")]
    ReportParse { line: usize, reason: String },
    #[error(transparent)]
    Train(#[from] TrainError),
    #[error(transparent)]
    Dataset(#[from] DatasetError),
}

/// A grayscale image in the 8-bit value range, row-major.
#[derive(Debug, Clone, Copy)]
pub struct Image<'a> {
    pub width: usize,
    pub height: usize,
    pub pixels: &'a [f64],
}

impl<'a> Image<'a> {
    pub fn new(width: usize, height: usize, pixels: &'a [f64]) -> Self {
        assert_eq!(pixels.len(), width * height);
        Self {
            width,
            height,
            pixels,
        }
    }
}

/// Normalized 1-D Gaussian taps; the 2-D window is their outer product.
pub fn gaussian_taps() -> [f64; WINDOW] {
    let mut taps = [0.0; WINDOW];
    let mid = (WINDOW / 2) as f64;
    for (i, t) in taps.iter_mut().enumerate() {
        let d = i as f64 - mid;
        *t = (-d * d / (2.0 * SIGMA * SIGMA)).exp();
    }
    let sum: f64 = taps.iter().sum();
    taps.iter_mut().for_each(|t| *t /= sum);
    taps
}

/// Separable valid-mode filter of `src` (`w x h`) with the Gaussian window.
fn filter(src: &[f64], w: usize, h: usize, taps: &[f64; WINDOW]) -> Vec<f64> {
    let (ow, oh) = (w - WINDOW + 1, h - WINDOW + 1);
    let mut rows = vec![0.0; ow * h];
    for r in 0..h {
        let line = &src[r * w..(r + 1) * w];
        for c in 0..ow {
            rows[r * ow + c] = taps
                .iter()
                .zip(&line[c..c + WINDOW])
                .map(|(t, v)| t * v)
                .sum();
        }
    }
    let mut out = vec![0.0; ow * oh];
    for r in 0..oh {
        for c in 0..ow {
            out[r * ow + c] = taps
                .iter()
                .enumerate()
                .map(|(k, t)| t * rows[(r + k) * ow + c])
                .sum();
        }
    }
    out
}

fn check(a: Image, b: Image) -> Result<(), EvalError> {
    if (a.width, a.height) != (b.width, b.height) {
        return Err(EvalError::ShapeMismatch {
            a: (a.width, a.height),
            b: (b.width, b.height),
        });
    }
    if a.width < WINDOW || a.height < WINDOW {
        return Err(EvalError::TooSmall {
            width: a.width,
            height: a.height,
        });
    }
    Ok(())
}

/// Local SSIM at every valid window position, row-major,
/// `(w - 10) x (h - 10)`.
pub fn ssim_map(a: Image, b: Image) -> Result<Vec<f64>, EvalError> {
    check(a, b)?;
    let (w, h) = (a.width, a.height);
    let taps = gaussian_taps();
    let prod = |f: &dyn Fn(f64, f64) -> f64| -> Vec<f64> {
        let p: Vec<f64> = a
            .pixels
            .iter()
            .zip(b.pixels)
            .map(|(&x, &y)| f(x, y))
            .collect();
        filter(&p, w, h, &taps)
    };
    let mu_a = filter(a.pixels, w, h, &taps);
    let mu_b = filter(b.pixels, w, h, &taps);
    let aa = prod(&|x, _| x * x);
    let bb = prod(&|_, y| y * y);
    let ab = prod(&|x, y| x * y);
    let c1 = (K1 * DYNAMIC_RANGE).powi(2);
    let c2 = (K2 * DYNAMIC_RANGE).powi(2);
    Ok((0..mu_a.len())
        .map(|i| {
            let (ma, mb) = (mu_a[i], mu_b[i]);
            let va = aa[i] - ma * ma;
            let vb = bb[i] - mb * mb;
            let cov = ab[i] - ma * mb;
            ((2.0 * ma * mb + c1) * (2.0 * cov + c2)) / ((ma * ma + mb * mb + c1) * (va + vb + c2))
        })
        .collect())
}

/// Mean SSIM over all valid window positions.
pub fn ssim(a: Image, b: Image) -> Result<f64, EvalError> {
    let map = ssim_map(a, b)?;
    Ok(map.iter().sum::<f64>() / map.len() as f64)
}

/// [`ssim`] on two 8-bit images.
pub fn ssim_u8(a: &[u8], b: &[u8], width: usize, height: usize) -> Result<f64, EvalError> {
    let fa: Vec<f64> = a.iter().map(|&v| v as f64).collect();
    let fb: Vec<f64> = b.iter().map(|&v| v as f64).collect();
    ssim(
        Image::new(width, height, &fa),
        Image::new(width, height, &fb),
    )
}

/// Compare the ternarized prediction, or the network output before
/// ternarization.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum SsimMode {
    #[default]
    Ternarized,
    Raw,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SsimReport {
    pub kind: ModelKind,
    pub expansion: Expansion,
    /// In test-split order.
    pub per_image: Vec<f64>,
    pub mean: f64,
}

impl SsimReport {
    pub fn from_values(kind: ModelKind, expansion: Expansion, per_image: Vec<f64>) -> Self {
        let mean = per_image.iter().sum::<f64>() / per_image.len() as f64;
        Self {
            kind,
            expansion,
            per_image,
            mean,
        }
    }

    pub fn n(&self) -> usize {
        self.per_image.len()
    }
}

/// Scores `predictor(input)` against each target at the target's native
/// size. The predictor returns pixel values of a `target.width()` square.
pub fn evaluate_with<F>(
    exec: Exec,
    kind: ModelKind,
    expansion: Expansion,
    pairs: &[(OccGrid, OccGrid)],
    predictor: F,
) -> Result<SsimReport, EvalError>
where
    F: Fn(&OccGrid) -> Result<Vec<f64>, EvalError> + Sync + Send,
{
    if pairs.is_empty() {
        return Err(EvalError::EmptyTestSet);
    }
    let scores = exec.map_slice(pairs, |(input, target)| {
        let pred = predictor(input)?;
        let gt: Vec<f64> = target.encode_image().into_iter().map(f64::from).collect();
        let (w, h) = (target.width(), target.height());
        if pred.len() != w * h {
            return Err(EvalError::ShapeMismatch {
                a: (w, pred.len() / w.max(1)),
                b: (w, h),
            });
        }
        ssim(Image::new(w, h, &pred), Image::new(w, h, &gt))
    });
    let per_image = scores.into_iter().collect::<Result<Vec<_>, _>>()?;
    Ok(SsimReport::from_values(kind, expansion, per_image))
}

/// Runs `ckpt` over the test split of `data` at `expansion`.
pub fn evaluate(
    exec: Exec,
    ckpt: &Checkpoint,
    data: &Dataset,
    expansion: Expansion,
    mode: SsimMode,
) -> Result<SsimReport, EvalError> {
    let pairs = data.pairs(Split::Test, expansion)?;
    evaluate_pairs(exec, ckpt, &pairs, expansion, mode)
}

pub fn evaluate_pairs(
    exec: Exec,
    ckpt: &Checkpoint,
    pairs: &[(OccGrid, OccGrid)],
    expansion: Expansion,
    mode: SsimMode,
) -> Result<SsimReport, EvalError> {
    evaluate_with(
        exec,
        ckpt.spec().kind,
        expansion,
        pairs,
        |input| match mode {
            SsimMode::Ternarized => Ok(predict(ckpt, input, expansion)?
                .encode_image()
                .into_iter()
                .map(f64::from)
                .collect()),
            SsimMode::Raw => Ok(predict_raw(ckpt, input, expansion)?),
        },
    )
}

/// Aligned text table: one row per reported expansion, one column per
/// architecture, mean SSIM to three decimals. Expansions outside the
/// reported set get extra rows.
pub fn report_table(reports: &[SsimReport]) -> String {
    let cells: BTreeMap<(Expansion, ModelKind), f64> = reports
        .iter()
        .map(|r| ((r.expansion, r.kind), r.mean))
        .collect();
    let mut rows: Vec<Expansion> = Expansion::REPORTED.to_vec();
    rows.extend(
        reports
            .iter()
            .map(|r| r.expansion)
            .filter(|e| !Expansion::REPORTED.contains(e)),
    );
    rows.sort();
    rows.dedup();
    let mut out = format!("{:<10}", "expansion");
    for k in ModelKind::ALL {
        let _ = write!(out, "{:>11}", k.as_str());
    }
    out.push('\n');
    for e in rows {
        let _ = write!(out, "{:<10}", e.to_string());
        for k in ModelKind::ALL {
            match cells.get(&(e, k)) {
                Some(m) => {
                    let _ = write!(out, "{m:>11.3}");
                }
                None => {
                    let _ = write!(out, "{ABSENT:>11}");
                }
            }
        }
        out.push('\n');
    }
    out
}

/// `kind,expansion,n,mean_ssim`, one line per report in the given order.
/// Means are written in shortest round-trip form.
pub fn report_csv(reports: &[SsimReport]) -> String {
    let mut out = format!("{CSV_HEADER}\n");
    for r in reports {
        let _ = writeln!(
            out,
            "{},{:.2},{},{:?}",
            r.kind,
            r.expansion.factor(),
            r.n(),
            r.mean
        );
    }
    out
}

/// One parsed line of [`report_csv`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ReportRow {
    pub kind: ModelKind,
    pub expansion: Expansion,
    pub n: usize,
    pub mean_ssim: f64,
}

pub fn parse_report_csv(text: &str) -> Result<Vec<ReportRow>, EvalError> {
    let bad = |line: usize, reason: String| EvalError::ReportParse { line, reason };
    let mut lines = text.lines().enumerate();
    match lines.next() {
        Some((_, h)) if h.trim() == CSV_HEADER => {}
        _ => return Err(bad(1, format!("expected header `{CSV_HEADER}`"))),
    }
    let mut rows = Vec::new();
    for (i, line) in lines {
        if line.trim().is_empty() {
            continue;
        }
        let f: Vec<&str> = line.split(',').collect();
        if f.len() != 4 {
            return Err(bad(i + 1, format!("expected 4 fields, got {}", f.len())));
        }
        rows.push(ReportRow {
            kind: f[0].parse().map_err(|e: String| bad(i + 1, e))?,
            expansion: f[1]
                .parse()
                .map_err(|e: DatasetError| bad(i + 1, e.to_string()))?,
            n: f[2].parse().map_err(|e| bad(i + 1, format!("n: {e}")))?,
            mean_ssim: f[3]
                .parse()
                .map_err(|e| bad(i + 1, format!("mean_ssim: {e}")))?,
        });
    }
    Ok(rows)
}

/// Side-by-side `input | prediction | ground truth` image. The input is
/// drawn at its true scale in the middle of an Unknown canvas the size of
/// the target, so all three panels cover the same area. Panels are
/// separated by a white gutter. Returns `(pixels, width, height)`.
pub fn triptych(input: &OccGrid, prediction: &OccGrid, truth: &OccGrid) -> (Vec<u8>, usize, usize) {
    const GUTTER: usize = 4;
    let n = truth.width().max(prediction.width()).max(input.width());
    let panel = |g: &OccGrid| -> Vec<u8> {
        let mut p = vec![Cell::Unknown.to_pixel(); n * n];
        let (r0, c0) = ((n - g.height()) / 2, (n - g.width()) / 2);
        let img = g.encode_image();
        for r in 0..g.height() {
            p[(r0 + r) * n + c0..(r0 + r) * n + c0 + g.width()]
                .copy_from_slice(&img[r * g.width()..(r + 1) * g.width()]);
        }
        p
    };
    let panels = [panel(input), panel(prediction), panel(truth)];
    let width = 3 * n + 2 * GUTTER;
    let mut out = vec![FREE_PIXEL; width * n];
    for (k, p) in panels.iter().enumerate() {
        let c0 = k * (n + GUTTER);
        for r in 0..n {
            out[r * width + c0..r * width + c0 + n].copy_from_slice(&p[r * n..(r + 1) * n]);
        }
    }
    (out, width, n)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::Point2;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random(rng: &mut ChaCha8Rng, w: usize, h: usize) -> Vec<f64> {
        (0..w * h)
            .map(|_| rng.random_range(0..=255) as f64)
            .collect()
    }

    #[test]
    fn self_similarity_and_constant_pair() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let a = random(&mut rng, 40, 30);
        assert_eq!(
            ssim(Image::new(40, 30, &a), Image::new(40, 30, &a)).unwrap(),
            1.0
        );
        let zeros = vec![0.0; 400];
        let full = vec![255.0; 400];
        let c1 = (0.01f64 * 255.0).powi(2);
        let got = ssim(Image::new(20, 20, &zeros), Image::new(20, 20, &full)).unwrap();
        assert!((got - c1 / (255.0f64.powi(2) + c1)).abs() < 1e-9, "{got}");
    }

    #[test]
    fn errors() {
        let a = vec![0.0; 100];
        let b = vec![0.0; 120];
        assert!(matches!(
            ssim(Image::new(10, 10, &a), Image::new(10, 12, &b)),
            Err(EvalError::ShapeMismatch { .. })
        ));
        assert!(matches!(
            ssim(Image::new(10, 10, &a), Image::new(10, 10, &a)),
            Err(EvalError::TooSmall { .. })
        ));
    }

    #[test]
    fn window_taps() {
        let t = gaussian_taps();
        assert!((t.iter().sum::<f64>() - 1.0).abs() < 1e-15);
        assert!(t[5] > t[4] && t[4] == t[6]);
        assert!((t[4] / t[5] - (-1.0 / 4.5f64).exp()).abs() < 1e-15);
    }

    #[test]
    fn noise_decreases_similarity() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let a = random(&mut rng, 32, 32);
        let mut prev = 1.0;
        for amp in [10.0, 40.0, 80.0, 160.0] {
            let mut sum = 0.0;
            for _ in 0..20 {
                let b: Vec<f64> = a.iter().map(|&v| v + rng.random_range(-amp..amp)).collect();
                sum += ssim(Image::new(32, 32, &a), Image::new(32, 32, &b)).unwrap();
            }
            let mean = sum / 20.0;
            assert!(mean < prev, "amp {amp}: {mean} !< {prev}");
            prev = mean;
        }
    }

    fn grid(cells: Vec<Cell>, n: usize) -> OccGrid {
        OccGrid::from_cells(n, n, 0.05, Point2::default(), cells).unwrap()
    }

    fn random_grid(rng: &mut ChaCha8Rng, n: usize) -> OccGrid {
        let cells = (0..n * n)
            .map(|_| [Cell::Free, Cell::Occupied, Cell::Unknown][rng.random_range(0..3)])
            .collect();
        grid(cells, n)
    }

    #[test]
    fn oracle_and_constant_predictors() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let e = Expansion::from_percent(130).unwrap();
        let pairs: Vec<_> = (0..6)
            .map(|_| (random_grid(&mut rng, 100), random_grid(&mut rng, 130)))
            .collect();
        let truth: BTreeMap<usize, Vec<f64>> = pairs
            .iter()
            .enumerate()
            .map(|(i, (_, t))| (i, t.encode_image().into_iter().map(f64::from).collect()))
            .collect();
        let by_input = |input: &OccGrid| {
            let i = pairs.iter().position(|(x, _)| x == input).unwrap();
            Ok(truth[&i].clone())
        };
        let perfect =
            evaluate_with(Exec::Parallel, ModelKind::UnetFf, e, &pairs, by_input).unwrap();
        assert_eq!(perfect.n(), 6);
        assert!(perfect.per_image.iter().all(|&s| s == 1.0));
        assert_eq!(perfect.mean, 1.0);
        let unknown = |_: &OccGrid| Ok(vec![Cell::Unknown.to_pixel() as f64; 130 * 130]);
        let flat = evaluate_with(Exec::Sequential, ModelKind::UnetFf, e, &pairs, unknown).unwrap();
        assert!(flat.mean < perfect.mean);
        assert!(flat.per_image.iter().all(|s| (-1.0..=1.0).contains(s)));
        let seq = evaluate_with(Exec::Sequential, ModelKind::UnetFf, e, &pairs, by_input).unwrap();
        assert_eq!(seq, perfect);
        assert!(matches!(
            evaluate_with(Exec::Sequential, ModelKind::Gan, e, &[], unknown),
            Err(EvalError::EmptyTestSet)
        ));
    }

    #[test]
    fn table_shape_and_csv_roundtrip() {
        let mut reports = Vec::new();
        for (i, e) in Expansion::REPORTED.iter().enumerate() {
            for (j, k) in ModelKind::ALL.iter().enumerate() {
                let v = 0.9 - 0.05 * i as f64 - 0.01 * j as f64 + 1e-7;
                reports.push(SsimReport::from_values(*k, *e, vec![v, v + 0.01, v - 0.01]));
            }
        }
        let table = report_table(&reports);
        let lines: Vec<&str> = table.lines().collect();
        assert_eq!(lines.len(), 6);
        assert!(
            lines[0].contains("unet_ff")
                && lines[0].contains("resnet_ff")
                && lines[0].contains("gan")
        );
        assert!(lines[1].starts_with("1.10x") && lines[5].starts_with("2.00x"));
        assert!(lines[1..].iter().all(|l| l.split_whitespace().count() == 4));
        assert!(lines.iter().all(|l| l.len() == lines[0].len()));
        assert!(!table.contains(ABSENT));

        let partial = report_table(&reports[..14]);
        assert!(partial.lines().nth(5).unwrap().trim_end().ends_with(ABSENT));

        let parsed = parse_report_csv(&report_csv(&reports)).unwrap();
        assert_eq!(parsed.len(), 15);
        for (row, r) in parsed.iter().zip(&reports) {
            assert_eq!(
                (row.kind, row.expansion, row.n, row.mean_ssim),
                (r.kind, r.expansion, 3, r.mean)
            );
        }
        assert!(parse_report_csv("kind,n\n").is_err());
        assert!(parse_report_csv(&format!("{CSV_HEADER}\nunet_ff,1.10,x,0.5\n")).is_err());
    }

    #[test]
    fn triptych_layout() {
        let input = grid(vec![Cell::Occupied; 100 * 100], 100);
        let pred = grid(vec![Cell::Free; 130 * 130], 130);
        let truth = grid(vec![Cell::Occupied; 130 * 130], 130);
        let (px, w, h) = triptych(&input, &pred, &truth);
        assert_eq!((w, h), (3 * 130 + 8, 130));
        assert_eq!(px[0], Cell::Unknown.to_pixel());
        assert_eq!(px[65 * w + 65], Cell::Occupied.to_pixel());
        assert_eq!(px[65 * w + 134 + 65], Cell::Free.to_pixel());
        assert_eq!(px[w - 1], Cell::Occupied.to_pixel());
    }
}
