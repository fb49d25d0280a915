//! Scratch calibration for the full-scale toy run: times DM training at
//! 64x64 and measures synth-only classifier accuracy.

use std::time::Instant;

use trafdiff::classify::{train_and_eval, ClassifierKind, LabeledSet, TrainParams};
use trafdiff::config::{derive_seed, Conditioning, DiffusionConfig, ImageConfig};
use trafdiff::diffusion::train_images;
use trafdiff::enhance::enhance_pipeline;
use trafdiff::fid::{fid_per_class, Embedder};
use trafdiff::gasf::encode;
use trafdiff::trace::{gen_toy_dataset, ingest_trace, split_dataset, DatasetSpec, SplitSpec, ToySpec};

fn main() {
    let t0 = Instant::now();
    let args: Vec<String> = std::env::args().collect();
    let steps: usize = args.get(1).and_then(|s| s.parse().ok()).unwrap_or(1000);
    let base_ch: usize = args.get(2).and_then(|s| s.parse().ok()).unwrap_or(8);
    let batch: usize = args.get(3).and_then(|s| s.parse().ok()).unwrap_or(16);
    let timesteps: usize = args.get(4).and_then(|s| s.parse().ok()).unwrap_or(200);
    let epochs: usize = args.get(5).and_then(|s| s.parse().ok()).unwrap_or(30);
    let per_class_cond = args.get(6).map(|s| s == "perclass").unwrap_or(false);
    println!("steps={steps} base_ch={base_ch} batch={batch} T={timesteps} epochs={epochs} perclass={per_class_cond}");

    let spec = DatasetSpec { target_length: 128, bin_width: None, num_classes: 2, traces_per_class: 100 };
    let toy = ToySpec::default();
    let raws = gen_toy_dataset(&spec, &toy, "video-cal", 42).unwrap();
    let traces: Vec<_> = raws.iter().map(|r| ingest_trace(r, &spec).unwrap()).collect();
    let (train, test) = split_dataset(&traces, &SplitSpec::default()).unwrap();
    println!("train {} test {}  [{:.1}s]", train.len(), test.len(), t0.elapsed().as_secs_f64());

    let img_cfg = ImageConfig { resolution: 64, gamma: 0.25, gain: 1.0 };
    let enc = |ts: &[trafdiff::trace::NormalizedTrace]| -> Vec<trafdiff::enhance::PixelImage> {
        ts.iter().map(|t| enhance_pipeline(&encode(t).unwrap(), &img_cfg).unwrap()).collect()
    };
    let train_imgs = enc(&train);
    let test_imgs = enc(&test);
    println!("encoded [{:.1}s]", t0.elapsed().as_secs_f64());

    if steps == 0 {
        let test_set = LabeledSet::from_images(&test_imgs, "t").unwrap();
        let train_set = LabeledSet::from_images(&train_imgs, "o").unwrap();
        for ep in [20usize, 40, 80] {
            for bs in [16usize, 32] {
                let params = TrainParams { epochs: ep, batch_size: bs, ..TrainParams::default() };
                let t = Instant::now();
                let acc =
                    train_and_eval(ClassifierKind::Conv2d, &train_set, &test_set, 5, &params)
                        .unwrap();
                println!("conv2d original ep={ep} bs={bs}: {acc:.1}%  [{:.1}s]", t.elapsed().as_secs_f64());
            }
        }
        return;
    }

    let dm_cfg = DiffusionConfig {
        timesteps,
        beta_start: 1e-4,
        beta_end: 0.02,
        train_steps: steps,
        batch_size: batch,
        learning_rate: 2e-3,
        ema_decay: 0.995,
        base_channels: base_ch,
        channel_mults: vec![1, 2, 2, 4, 4],
        conditioning: if per_class_cond { Conditioning::PerClass } else { Conditioning::ClassEmbedding },
    };
    let t_train = Instant::now();
    let (mut generator, log) = train_images(&train_imgs, &dm_cfg, "video-cal", 7).unwrap();
    let losses = &log[0].1;
    println!(
        "dm trained: {:.1}s ({:.0} ms/step), loss {:.4} -> {:.4}",
        t_train.elapsed().as_secs_f64(),
        t_train.elapsed().as_secs_f64() * 1000.0 / steps as f64,
        losses[..20.min(losses.len())].iter().sum::<f64>() / 20.0f64.min(losses.len() as f64),
        losses[losses.len().saturating_sub(20)..].iter().sum::<f64>() / 20.0f64.min(losses.len() as f64),
    );

    let t_sample = Instant::now();
    let mut synth = Vec::new();
    for class in [0u32, 1] {
        synth.extend(generator.sample(class, 80, derive_seed(7, "cal/sample")).unwrap());
    }
    println!("sampled 160 [{:.1}s]", t_sample.elapsed().as_secs_f64());

    let t_fid = Instant::now();
    let base = fid_per_class(&train_imgs, &test_imgs, 50, Embedder::Pixel, "base", 3).unwrap();
    println!("fid baseline train-vs-test: {:?}", base.per_class);
    let rep = fid_per_class(&train_imgs, &synth, 50, Embedder::Pixel, "video-cal", 3).unwrap();
    println!("fid per class: {:?} [{:.1}s]", rep.per_class, t_fid.elapsed().as_secs_f64());
    // Cross-class affinity: synth_c vs original_{c'}.
    let by_class = |imgs: &[trafdiff::enhance::PixelImage], c: u32| -> Vec<trafdiff::enhance::PixelImage> {
        imgs.iter().filter(|i| i.meta.class_label == c).cloned().collect()
    };
    for c in [0u32, 1] {
        let other = 1 - c;
        let sc = by_class(&synth, c);
        let mut oc = by_class(&train_imgs, other);
        oc.iter_mut().for_each(|i| i.meta.class_label = c);
        let cross = fid_per_class(&oc, &sc, 50, Embedder::Pixel, "x", 3).unwrap();
        println!("  cross fid synth_{c} vs orig_{other}: {:?}", cross.per_class);
    }

    let params = TrainParams { epochs, batch_size: 16, ..TrainParams::default() };
    let test_set = LabeledSet::from_images(&test_imgs, "t").unwrap();
    let t_cls = Instant::now();
    for (name, imgs) in [
        ("original", train_imgs.clone()),
        ("synth", synth.clone()),
        ("ori+synth", train_imgs.iter().chain(&synth).cloned().collect::<Vec<_>>()),
    ] {
        let set = LabeledSet::from_images(&imgs, "o").unwrap();
        let acc = train_and_eval(ClassifierKind::Conv2d, &set, &test_set, 5, &params).unwrap();
        println!("conv2d {name}: {acc:.1}%  [{:.1}s]", t_cls.elapsed().as_secs_f64());
    }
    println!("total [{:.1}s]", t0.elapsed().as_secs_f64());
}
