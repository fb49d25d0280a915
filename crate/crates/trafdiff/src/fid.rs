//! Distributional fidelity scoring: feature embeddings, Gaussian moment
//! matching, Fréchet distance, and pixel-histogram overlap.
//!
//! Lower distance means the synthetic set sits closer to the originals in
//! embedding space. Two embedders are built in: "pixel" (area-resize to
//! 8x8, d=64) and "convnet" (frozen fixed-seed conv stack, d=128).

use std::collections::BTreeMap;

use ndarray::{Array1, Array2, ArrayD, IxDyn};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::config::derive_seed;
use crate::enhance::{resize_area, PixelImage};
use crate::error::{Error, Result};
use crate::linalg::{symmetric_eigen, symmetric_sqrt, trace, EIG_CLAMP_REL_TOL};
use crate::nn::{Conv2d, Layer, SiLU};

/// Weight stream for the frozen convnet embedder; never varies per run so
/// scores stay comparable across runs and machines.
const CONVNET_SEED: u64 = 0x7472_6166_6469_6666;

/// Feature extractor choice.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Embedder {
    /// Flatten of an 8x8 area resize, d=64.
    Pixel,
    /// Frozen three-stage conv stack on a 32x32 area resize, d=128.
    Convnet,
}

impl Embedder {
    pub fn parse(id: &str) -> Result<Embedder> {
        match id {
            "pixel" => Ok(Embedder::Pixel),
            "convnet" => Ok(Embedder::Convnet),
            other => Err(Error::InvalidInput(format!("unknown embedder {other:?}"))),
        }
    }

    pub fn dim(&self) -> usize {
        match self {
            Embedder::Pixel => 64,
            Embedder::Convnet => 128,
        }
    }

    pub fn id(&self) -> &'static str {
        match self {
            Embedder::Pixel => "pixel",
            Embedder::Convnet => "convnet",
        }
    }
}

fn convnet_stack() -> (Conv2d<f64>, Conv2d<f64>, Conv2d<f64>, SiLU<f64>) {
    let mut rng = ChaCha8Rng::seed_from_u64(CONVNET_SEED);
    let c1 = Conv2d::halving(1, 8, &mut rng);
    let c2 = Conv2d::halving(8, 16, &mut rng);
    let c3 = Conv2d::halving(16, 8, &mut rng);
    (c1, c2, c3, SiLU::new())
}

/// Map images at a common resolution to d-vectors.
pub fn embed_images(images: &[PixelImage], embedder: Embedder) -> Result<Vec<Array1<f64>>> {
    if images.is_empty() {
        return Ok(Vec::new());
    }
    let (h, w) = (images[0].h, images[0].w);
    for (i, img) in images.iter().enumerate() {
        if img.h != h || img.w != w {
            return Err(Error::ShapeMismatch(format!(
                "image {i} is {}x{}, expected common {h}x{w}",
                img.h, img.w
            )));
        }
    }
    match embedder {
        Embedder::Pixel => images
            .iter()
            .map(|img| Ok(Array1::from_vec(resize_area(img, 8, 8)?.data)))
            .collect(),
        Embedder::Convnet => {
            let (mut c1, mut c2, mut c3, mut act) = convnet_stack();
            let mut out = Vec::with_capacity(images.len());
            for img in images {
                let small = resize_area(img, 32, 32)?;
                let x = ArrayD::from_shape_vec(IxDyn(&[1, 1, 32, 32]), small.data)
                    .expect("resize output is 32x32");
                let h1 = act.forward(&c1.forward(&x));
                let h2 = act.forward(&c2.forward(&h1));
                let h3 = act.forward(&c3.forward(&h2));
                out.push(Array1::from_iter(h3.iter().copied()));
            }
            Ok(out)
        }
    }
}

/// First two sample moments of a vector set.
#[derive(Debug, Clone)]
pub struct GaussianStats {
    pub mean: Array1<f64>,
    pub cov: Array2<f64>,
    pub count: usize,
}

/// Sample mean and covariance (1/(N-1) normalization). Needs N >= 2.
pub fn gaussian_stats(vectors: &[Array1<f64>]) -> Result<GaussianStats> {
    if vectors.len() < 2 {
        return Err(Error::InvalidInput(format!(
            "moment estimation needs >= 2 vectors, got {}",
            vectors.len()
        )));
    }
    let d = vectors[0].len();
    for (i, v) in vectors.iter().enumerate() {
        if v.len() != d {
            return Err(Error::ShapeMismatch(format!(
                "vector {i} has dimension {}, expected {d}",
                v.len()
            )));
        }
    }
    let n = vectors.len();
    let mut mean = Array1::<f64>::zeros(d);
    for v in vectors {
        mean += v;
    }
    mean /= n as f64;
    let mut cov = Array2::<f64>::zeros((d, d));
    for v in vectors {
        let c = v - &mean;
        for i in 0..d {
            let ci = c[i];
            for j in 0..d {
                cov[[i, j]] += ci * c[j];
            }
        }
    }
    cov /= (n - 1) as f64;
    Ok(GaussianStats { mean, cov, count: n })
}

/// Fréchet distance between two Gaussians:
/// |mu_a - mu_b|^2 + Tr(S_a + S_b - 2 (S_a S_b)^{1/2}).
///
/// The cross term uses Tr((S_a S_b)^{1/2}) = sum of sqrt eigenvalues of the
/// symmetric product A S_b A with A = S_a^{1/2}; eigenvalues negative within
/// tolerance clamp to zero, beyond it the call fails with diagnostics.
pub fn frechet_distance(a: &GaussianStats, b: &GaussianStats) -> Result<f64> {
    let d = a.mean.len();
    if b.mean.len() != d {
        return Err(Error::ShapeMismatch(format!(
            "dimension mismatch: {d} vs {}",
            b.mean.len()
        )));
    }
    let diff = &a.mean - &b.mean;
    let mean_term: f64 = diff.iter().map(|v| v * v).sum();

    let root_a = symmetric_sqrt(&a.cov)?;
    let prod = root_a.dot(&b.cov).dot(&root_a);
    // Exact symmetrization before the eigensolve; prod is symmetric only up
    // to roundoff.
    let sym = (&prod + &prod.t()) * 0.5;
    let (eigs, _) = symmetric_eigen(&sym)?;
    let max_eig = eigs.iter().cloned().fold(0.0f64, f64::max);
    let tol = EIG_CLAMP_REL_TOL * max_eig.max(1.0);
    let mut cross = 0.0;
    for &l in eigs.iter() {
        if l < -tol {
            return Err(Error::Numerical(format!(
                "cross-covariance eigenvalue {l} below -{tol} (max {max_eig})"
            )));
        }
        cross += l.max(0.0).sqrt();
    }
    let fid = mean_term + trace(&a.cov) + trace(&b.cov) - 2.0 * cross;
    // Self-comparison at d=64 accumulates ~1e-8 of eigensolve roundoff;
    // anything further below zero means the square root went wrong.
    if fid < -1e-6 {
        return Err(Error::Numerical(format!("distance {fid} is negative beyond tolerance")));
    }
    Ok(fid.max(0.0))
}

/// Per-class distances plus their mean and (population) spread.
#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
pub struct FidReport {
    pub dataset_id: String,
    pub embedder_id: String,
    pub per_class: Vec<(u32, f64)>,
    pub mean: f64,
    pub std: f64,
}

impl FidReport {
    /// Rows `dataset,class,fid` plus a `summary` row with mean and std.
    pub fn to_csv_string(&self) -> String {
        let mut s = String::from("dataset,class,fid\n");
        for (c, v) in &self.per_class {
            s.push_str(&format!("{},{},{}\n", self.dataset_id, c, v));
        }
        s.push_str(&format!(
            "{},summary,{} +/- {}\n",
            self.dataset_id, self.mean, self.std
        ));
        s
    }
}

pub(crate) fn mean_std(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    (mean, var.sqrt())
}

fn group_by_class(images: &[PixelImage]) -> BTreeMap<u32, Vec<&PixelImage>> {
    let mut map: BTreeMap<u32, Vec<&PixelImage>> = BTreeMap::new();
    for img in images {
        map.entry(img.meta.class_label).or_default().push(img);
    }
    map
}

/// Seeded size-n subset by partial shuffle; n == len returns everything.
fn sample_subset<'a>(
    pool: &[&'a PixelImage],
    n: usize,
    rng: &mut ChaCha8Rng,
) -> Vec<&'a PixelImage> {
    let mut idx: Vec<usize> = (0..pool.len()).collect();
    for i in 0..n {
        let j = rng.random_range(i..idx.len());
        idx.swap(i, j);
    }
    idx[..n].iter().map(|&i| pool[i]).collect()
}

/// Per-class Fréchet distance of n seeded synthetic samples against that
/// class's original images.
pub fn fid_per_class(
    original: &[PixelImage],
    synthetic: &[PixelImage],
    n: usize,
    embedder: Embedder,
    dataset_id: &str,
    seed: u64,
) -> Result<FidReport> {
    let orig = group_by_class(original);
    let synth = group_by_class(synthetic);
    if orig.is_empty() {
        return Err(Error::InvalidInput("original set is empty".into()));
    }
    for c in orig.keys() {
        if !synth.contains_key(c) {
            return Err(Error::MissingClass(format!("class {c} absent from synthetic set")));
        }
    }
    for c in synth.keys() {
        if !orig.contains_key(c) {
            return Err(Error::MissingClass(format!("class {c} absent from original set")));
        }
    }
    let mut per_class = Vec::with_capacity(orig.len());
    for (&c, o_imgs) in &orig {
        let s_imgs = &synth[&c];
        if o_imgs.len() < 2 {
            return Err(Error::InvalidInput(format!(
                "class {c} has {} original images, need >= 2",
                o_imgs.len()
            )));
        }
        if s_imgs.len() < n {
            return Err(Error::InvalidInput(format!(
                "class {c} has {} synthetic images, need >= {n}",
                s_imgs.len()
            )));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, &format!("fid/{c}")));
        let chosen = sample_subset(s_imgs, n, &mut rng);
        let o_vecs = embed_images(&o_imgs.iter().map(|&i| i.clone()).collect::<Vec<_>>(), embedder)?;
        let s_vecs = embed_images(&chosen.iter().map(|&i| i.clone()).collect::<Vec<_>>(), embedder)?;
        let fid = frechet_distance(&gaussian_stats(&o_vecs)?, &gaussian_stats(&s_vecs)?)?;
        per_class.push((c, fid));
    }
    let values: Vec<f64> = per_class.iter().map(|&(_, v)| v).collect();
    let (mean, std) = mean_std(&values);
    Ok(FidReport {
        dataset_id: dataset_id.to_string(),
        embedder_id: embedder.id().to_string(),
        per_class,
        mean,
        std,
    })
}

pub(crate) fn pooled_hists(
    original: &[PixelImage],
    synthetic: &[PixelImage],
    bins: usize,
) -> Result<(Vec<f64>, Vec<f64>)> {
    if bins < 2 {
        return Err(Error::InvalidInput("need at least 2 bins".into()));
    }
    if original.is_empty() || synthetic.is_empty() {
        return Err(Error::InvalidInput("histogram comparison needs non-empty sets".into()));
    }
    let hist = |imgs: &[PixelImage]| -> Vec<f64> {
        let mut h = vec![0.0f64; bins];
        let mut total = 0usize;
        for img in imgs {
            for &v in &img.data {
                let b = ((v.clamp(0.0, 1.0) * bins as f64) as usize).min(bins - 1);
                h[b] += 1.0;
                total += 1;
            }
        }
        for x in &mut h {
            *x /= total as f64;
        }
        h
    };
    Ok((hist(original), hist(synthetic)))
}

/// Histogram intersection of pooled pixel values over [0,1]: 1 when the
/// distributions coincide, 0 when their supports are disjoint.
pub fn histogram_compare(
    original: &[PixelImage],
    synthetic: &[PixelImage],
    bins: usize,
) -> Result<f64> {
    let (ho, hs) = pooled_hists(original, synthetic, bins)?;
    Ok(ho.iter().zip(&hs).map(|(a, b)| a.min(*b)).sum())
}

/// Pooled histograms as CSV rows `bin_low,bin_high,original,synthetic`.
pub fn histogram_csv(
    original: &[PixelImage],
    synthetic: &[PixelImage],
    bins: usize,
) -> Result<String> {
    let (ho, hs) = pooled_hists(original, synthetic, bins)?;
    let mut s = String::from("bin_low,bin_high,original,synthetic\n");
    for i in 0..bins {
        s.push_str(&format!(
            "{},{},{},{}\n",
            i as f64 / bins as f64,
            (i + 1) as f64 / bins as f64,
            ho[i],
            hs[i]
        ));
    }
    Ok(s)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::enhance::ImageMeta;

    fn img(h: usize, w: usize, data: Vec<f64>, class: u32) -> PixelImage {
        PixelImage {
            h,
            w,
            data,
            meta: ImageMeta { dataset_id: "t".into(), class_label: class, orig_n: h },
        }
    }

    fn const_img(h: usize, w: usize, v: f64, class: u32) -> PixelImage {
        img(h, w, vec![v; h * w], class)
    }

    fn stats1(mu: f64, var: f64) -> GaussianStats {
        GaussianStats {
            mean: Array1::from_vec(vec![mu]),
            cov: Array2::from_shape_vec((1, 1), vec![var]).unwrap(),
            count: 2,
        }
    }

    #[test]
    fn embedder_ids_parse() {
        assert_eq!(Embedder::parse("pixel").unwrap(), Embedder::Pixel);
        assert_eq!(Embedder::parse("convnet").unwrap(), Embedder::Convnet);
        assert!(Embedder::parse("inception").is_err());
    }

    #[test]
    fn pixel_embedding_of_constant_image_is_constant_vector() {
        let vecs = embed_images(&[const_img(16, 16, 0.37, 0)], Embedder::Pixel).unwrap();
        assert_eq!(vecs[0].len(), 64);
        assert!(vecs[0].iter().all(|&v| (v - 0.37).abs() < 1e-12));
    }

    #[test]
    fn embeddings_are_deterministic() {
        let a = const_img(16, 16, 0.2, 0);
        for e in [Embedder::Pixel, Embedder::Convnet] {
            let v1 = embed_images(std::slice::from_ref(&a), e).unwrap();
            let v2 = embed_images(std::slice::from_ref(&a), e).unwrap();
            assert_eq!(v1[0], v2[0]);
            assert_eq!(v1[0].len(), e.dim());
        }
    }

    #[test]
    fn pixel_embedding_is_local() {
        // 16x16 -> 8x8 resize has exact 2x2 cells; flipping one pixel may
        // move only the covering cell.
        let a = const_img(16, 16, 0.5, 0);
        let mut b = a.clone();
        b.data[0] = 1.0;
        let va = &embed_images(&[a], Embedder::Pixel).unwrap()[0];
        let vb = &embed_images(&[b], Embedder::Pixel).unwrap()[0];
        let changed: Vec<usize> =
            (0..64).filter(|&i| (va[i] - vb[i]).abs() > 1e-12).collect();
        assert_eq!(changed, vec![0]);
    }

    #[test]
    fn convnet_separates_distinct_images() {
        let a = const_img(16, 16, 0.1, 0);
        let b = const_img(16, 16, 0.9, 0);
        let vs = embed_images(&[a, b], Embedder::Convnet).unwrap();
        assert!((&vs[0] - &vs[1]).iter().any(|&d| d.abs() > 1e-6));
    }

    #[test]
    fn embed_rejects_mixed_resolutions() {
        let a = const_img(16, 16, 0.1, 0);
        let b = const_img(8, 8, 0.1, 0);
        assert!(embed_images(&[a, b], Embedder::Pixel).is_err());
    }

    #[test]
    fn stats_hand_example() {
        let vs = vec![Array1::from_vec(vec![0.0, 0.0]), Array1::from_vec(vec![2.0, 2.0])];
        let s = gaussian_stats(&vs).unwrap();
        assert_eq!(s.count, 2);
        assert_eq!(s.mean, Array1::from_vec(vec![1.0, 1.0]));
        for i in 0..2 {
            for j in 0..2 {
                assert!((s.cov[[i, j]] - 2.0).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn stats_identical_vectors_give_zero_covariance() {
        let vs = vec![Array1::from_vec(vec![3.0, 1.0]); 4];
        let s = gaussian_stats(&vs).unwrap();
        assert!(s.cov.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn stats_rejects_small_or_ragged_input() {
        assert!(gaussian_stats(&[Array1::from_vec(vec![1.0])]).is_err());
        let ragged = vec![Array1::from_vec(vec![1.0]), Array1::from_vec(vec![1.0, 2.0])];
        assert!(gaussian_stats(&ragged).is_err());
    }

    #[test]
    fn frechet_identical_stats_is_zero() {
        let vs: Vec<Array1<f64>> = (0..6)
            .map(|i| Array1::from_vec(vec![i as f64, (i * i) as f64 / 10.0, 1.0 - i as f64]))
            .collect();
        let s = gaussian_stats(&vs).unwrap();
        let d = frechet_distance(&s, &s).unwrap();
        assert!(d.abs() <= 1e-9, "self-distance {d}");
    }

    #[test]
    fn frechet_point_masses_measure_squared_mean_gap() {
        let a = GaussianStats {
            mean: Array1::from_vec(vec![0.0, 0.0]),
            cov: Array2::zeros((2, 2)),
            count: 2,
        };
        let b = GaussianStats {
            mean: Array1::from_vec(vec![3.0, 4.0]),
            cov: Array2::zeros((2, 2)),
            count: 2,
        };
        let d = frechet_distance(&a, &b).unwrap();
        assert!((d - 25.0).abs() < 1e-12);
    }

    #[test]
    fn frechet_scalar_closed_form_example() {
        let d = frechet_distance(&stats1(0.0, 1.0), &stats1(0.0, 4.0)).unwrap();
        assert!((d - 1.0).abs() < 1e-12, "got {d}");
    }

    #[test]
    fn frechet_matrix_path_matches_scalar_closed_form() {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        for _ in 0..50 {
            let (ma, mb) = (rng.random_range(-3.0..3.0), rng.random_range(-3.0..3.0));
            let (va, vb) = (rng.random_range(0.0..4.0), rng.random_range(0.0..4.0));
            let got = frechet_distance(&stats1(ma, va), &stats1(mb, vb)).unwrap();
            let want = (ma - mb).powi(2) + va + vb - 2.0 * (va * vb).sqrt();
            assert!((got - want).abs() < 1e-9, "{got} vs {want}");
        }
    }

    #[test]
    fn frechet_is_symmetric() {
        let vs_a: Vec<Array1<f64>> =
            (0..5).map(|i| Array1::from_vec(vec![i as f64, 2.0 * i as f64])).collect();
        let vs_b: Vec<Array1<f64>> =
            (0..5).map(|i| Array1::from_vec(vec![1.0 + i as f64, 3.0 - i as f64])).collect();
        let sa = gaussian_stats(&vs_a).unwrap();
        let sb = gaussian_stats(&vs_b).unwrap();
        let ab = frechet_distance(&sa, &sb).unwrap();
        let ba = frechet_distance(&sb, &sa).unwrap();
        assert!((ab - ba).abs() < 1e-9);
        assert!(ab > 0.0);
    }

    #[test]
    fn frechet_rejects_dimension_mismatch() {
        let a = stats1(0.0, 1.0);
        let b = GaussianStats {
            mean: Array1::zeros(2),
            cov: Array2::eye(2),
            count: 2,
        };
        assert!(frechet_distance(&a, &b).is_err());
    }

    fn noisy_set(base: &[PixelImage], amp: f64) -> Vec<PixelImage> {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        base.iter()
            .map(|img| {
                let data = img
                    .data
                    .iter()
                    .map(|&v| (v + rng.random_range(0.0..amp)).clamp(0.0, 1.0))
                    .collect();
                PixelImage { h: img.h, w: img.w, data, meta: img.meta.clone() }
            })
            .collect()
    }

    fn varied_set(class: u32, n: usize, offset: f64) -> Vec<PixelImage> {
        let mut rng = ChaCha8Rng::seed_from_u64(1000 + class as u64);
        (0..n)
            .map(|_| {
                let data = (0..16 * 16)
                    .map(|j| {
                        let base = (j % 16) as f64 / 16.0;
                        ((base + offset + rng.random_range(-0.05..0.05)) % 1.0).abs()
                    })
                    .collect();
                img(16, 16, data, class)
            })
            .collect()
    }

    #[test]
    fn self_comparison_fid_is_tiny_and_noise_increases_it() {
        let mut originals = varied_set(0, 8, 0.0);
        originals.extend(varied_set(1, 8, 0.3));
        let report =
            fid_per_class(&originals, &originals, 8, Embedder::Pixel, "t", 3).unwrap();
        assert_eq!(report.per_class.len(), 2);
        for &(_, v) in &report.per_class {
            assert!(v <= 1e-6, "self-comparison fid {v}");
        }
        let noisy = noisy_set(&originals, 0.5);
        let noisy_report =
            fid_per_class(&originals, &noisy, 8, Embedder::Pixel, "t", 3).unwrap();
        for (s, n) in report.per_class.iter().zip(&noisy_report.per_class) {
            assert!(n.1 > s.1, "noise did not raise fid: {} vs {}", n.1, s.1);
        }
    }

    #[test]
    fn fid_is_order_invariant() {
        let originals = varied_set(0, 6, 0.0);
        let synth = varied_set(0, 6, 0.2);
        let a = fid_per_class(&originals, &synth, 6, Embedder::Pixel, "t", 1).unwrap();
        let mut shuffled = originals.clone();
        shuffled.reverse();
        let mut synth_rev = synth.clone();
        synth_rev.reverse();
        // Subset sampling at n == full size makes order irrelevant.
        let b = fid_per_class(&shuffled, &synth_rev, 6, Embedder::Pixel, "t", 1).unwrap();
        assert!((a.per_class[0].1 - b.per_class[0].1).abs() < 1e-9);
    }

    #[test]
    fn fid_report_arithmetic_and_csv() {
        assert_eq!(mean_std(&[2.0, 4.0]), (3.0, 1.0));
        let report = FidReport {
            dataset_id: "d".into(),
            embedder_id: "pixel".into(),
            per_class: vec![(0, 2.0), (1, 4.0)],
            mean: 3.0,
            std: 1.0,
        };
        let csv = report.to_csv_string();
        assert!(csv.starts_with("dataset,class,fid\n"));
        assert!(csv.contains("d,0,2\n"));
        assert!(csv.contains("d,summary,3 +/- 1\n"));
    }

    #[test]
    fn fid_rejects_class_mismatch_and_small_pools() {
        let a = varied_set(0, 4, 0.0);
        let b = varied_set(1, 4, 0.0);
        assert!(fid_per_class(&a, &b, 2, Embedder::Pixel, "t", 1).is_err());
        let mut both = a.clone();
        both.extend(b.clone());
        assert!(fid_per_class(&both, &a, 2, Embedder::Pixel, "t", 1).is_err());
        // n larger than the synthetic pool.
        assert!(fid_per_class(&a, &a, 9, Embedder::Pixel, "t", 1).is_err());
        // one original image only
        let single = varied_set(0, 1, 0.0);
        assert!(fid_per_class(&single, &a, 2, Embedder::Pixel, "t", 1).is_err());
    }

    #[test]
    fn fid_subset_sampling_is_seeded() {
        let originals = varied_set(0, 6, 0.0);
        let synth = varied_set(0, 12, 0.25);
        let a = fid_per_class(&originals, &synth, 4, Embedder::Pixel, "t", 9).unwrap();
        let b = fid_per_class(&originals, &synth, 4, Embedder::Pixel, "t", 9).unwrap();
        assert_eq!(a.per_class[0].1, b.per_class[0].1);
    }

    #[test]
    fn histogram_identity_disjoint_and_half_overlap() {
        let zeros = vec![const_img(4, 4, 0.0, 0); 2];
        let ones = vec![const_img(4, 4, 0.999, 0); 2];
        assert!((histogram_compare(&zeros, &zeros, 8).unwrap() - 1.0).abs() < 1e-12);
        assert!(histogram_compare(&zeros, &ones, 8).unwrap() == 0.0);
        // Original mass all in the low bin; synthetic split across both.
        let low = vec![const_img(4, 4, 0.25, 0)];
        let split = vec![const_img(4, 4, 0.25, 0), const_img(4, 4, 0.75, 0)];
        assert!((histogram_compare(&low, &split, 2).unwrap() - 0.5).abs() < 1e-12);
    }

    #[test]
    fn histogram_rejects_bad_input() {
        let a = vec![const_img(4, 4, 0.5, 0)];
        assert!(histogram_compare(&a, &a, 1).is_err());
        assert!(histogram_compare(&a, &[], 4).is_err());
        assert!(histogram_compare(&[], &a, 4).is_err());
    }

    #[test]
    fn histogram_csv_shape() {
        let a = vec![const_img(4, 4, 0.1, 0)];
        let csv = histogram_csv(&a, &a, 4).unwrap();
        let lines: Vec<&str> = csv.trim().lines().collect();
        assert_eq!(lines.len(), 5);
        assert_eq!(lines[0], "bin_low,bin_high,original,synthetic");
    }
}
