// Scratch probe: full desk-scale calibration of training and attacks.
use mnd_core::attacks::{baseline_attack, mnd_attack, AttackConfig, BaselineConfig, BaselineKind};
use mnd_core::classifier::{Classifier, TrainOptions};
use mnd_core::dataset::{Dataset, GenOptions};
use mnd_core::losses::{AttackMode, LossWeights, Preset};
use mnd_core::metrics;
use rayon::prelude::*;
use std::time::Instant;

fn main() {
    let t0 = Instant::now();
    let train = Dataset::generate(&GenOptions {
        num_classes: 10,
        samples_per_class: 500,
        height: 32,
        width: 32,
        seed: 1,
    })
    .unwrap();
    let test = Dataset::generate(&GenOptions {
        num_classes: 10,
        samples_per_class: 100,
        height: 32,
        width: 32,
        seed: 2,
    })
    .unwrap();
    println!("gen: {:.1?}", t0.elapsed());

    let (train_imgs, train_labels) = train.to_tensors();
    let (test_imgs, test_labels) = test.to_tensors();

    let t1 = Instant::now();
    let mut clf = Classifier::build_small_cnn([3, 32, 32], 10, 42).unwrap();
    let report = clf
        .train(
            &train_imgs,
            &train_labels,
            &TrainOptions {
                epochs: 20,
                learning_rate: 0.1,
                batch_size: 32,
                seed: 7,
            },
        )
        .unwrap();
    let train_time = t1.elapsed();
    println!(
        "train: {:.1?}; acc by epoch: {:?}",
        train_time,
        report
            .epochs
            .iter()
            .map(|e| (e.accuracy * 1000.0).round() / 10.0)
            .collect::<Vec<_>>()
    );

    let correct_test: Vec<usize> = (0..test_imgs.len())
        .into_par_iter()
        .filter(|&i| clf.predict(&test_imgs[i]).unwrap().class == test_labels[i])
        .collect();
    println!(
        "test acc: {:.3} ({} of {})",
        correct_test.len() as f64 / test_imgs.len() as f64,
        correct_test.len(),
        test_imgs.len()
    );

    // Logit gap distribution on correct test images.
    let mut gaps: Vec<f64> = correct_test
        .par_iter()
        .map(|&i| {
            let p = clf.predict(&test_imgs[i]).unwrap();
            let mut l = p.logits.clone();
            l.sort_by(|a, b| b.partial_cmp(a).unwrap());
            l[0] - l[1]
        })
        .collect();
    gaps.sort_by(|a, b| a.partial_cmp(b).unwrap());
    println!(
        "logit gap p10/p50/p90: {:.2}/{:.2}/{:.2}",
        gaps[gaps.len() / 10],
        gaps[gaps.len() / 2],
        gaps[gaps.len() * 9 / 10]
    );

    // First 10 correct per class -> 100-image suite.
    let mut per_class = vec![0usize; 10];
    let mut suite = Vec::new();
    for &i in &correct_test {
        let c = test_labels[i];
        if per_class[c] < 10 {
            per_class[c] += 1;
            suite.push(i);
        }
    }
    println!("suite size: {}", suite.len());
    let suite_imgs: Vec<_> = suite.iter().map(|&i| test_imgs[i].clone()).collect();
    let suite_labels: Vec<_> = suite.iter().map(|&i| test_labels[i]).collect();

    // Baselines at epsilon 8/255.
    let t2 = Instant::now();
    for kind in BaselineKind::ALL {
        let results: Vec<_> = suite_imgs
            .par_iter()
            .zip(suite_labels.par_iter())
            .map(|(x, &l)| {
                let cfg = BaselineConfig {
                    seed: 1000 + l as u64,
                    ..BaselineConfig::default()
                };
                baseline_attack(x, &clf, l, &cfg, kind).unwrap()
            })
            .collect();
        let succ = results.iter().filter(|r| r.success).count();
        let psnrs: Vec<f64> = results
            .iter()
            .zip(&suite_imgs)
            .filter(|(r, _)| r.success)
            .map(|(r, x)| metrics::psnr(&r.adversarial, x).unwrap())
            .collect();
        let ssims: Vec<f64> = results
            .iter()
            .zip(&suite_imgs)
            .filter(|(r, _)| r.success)
            .map(|(r, x)| metrics::ssim_eval(&r.adversarial, x).unwrap())
            .collect();
        let mp = psnrs.iter().sum::<f64>() / psnrs.len().max(1) as f64;
        let ms = ssims.iter().sum::<f64>() / ssims.len().max(1) as f64;
        let ratio: f64 = results
            .iter()
            .zip(&suite_imgs)
            .filter(|(r, _)| r.success)
            .map(|(r, x)| metrics::deviation_pixel_ratio(&r.adversarial, x, 0).unwrap())
            .sum::<f64>()
            / psnrs.len().max(1) as f64;
        println!(
            "{}: success {succ}/{} mean psnr {mp:.2} ssim {ms:.4} ratio {ratio:.3}",
            kind.label(),
            suite.len()
        );
    }
    println!("baselines: {:.1?}", t2.elapsed());

    // MND no-norm across alphas on a 20-image subset.
    for alpha in [1e-4, 1e-3, 3e-3, 1e-2] {
        let t = Instant::now();
        let results: Vec<_> = suite_imgs[..20]
            .par_iter()
            .zip(suite_labels[..20].par_iter())
            .map(|(x, &l)| {
                let cfg = AttackConfig {
                    weights: Preset::NoNorm.weights(&LossWeights::default()),
                    alpha,
                    max_iters: 1000,
                    ..AttackConfig::default()
                };
                mnd_attack(x, &clf, Some(l), &cfg).unwrap()
            })
            .collect();
        let succ = results.iter().filter(|r| r.success).count();
        let psnrs: Vec<f64> = results
            .iter()
            .zip(&suite_imgs[..20])
            .filter(|(r, _)| r.success)
            .map(|(r, x)| metrics::psnr(&r.adversarial, x).unwrap())
            .collect();
        let mp = psnrs.iter().sum::<f64>() / psnrs.len().max(1) as f64;
        let iters: f64 =
            results.iter().map(|r| r.iterations_used as f64).sum::<f64>() / results.len() as f64;
        println!(
            "no-norm alpha {alpha:.0e}: success {succ}/20 mean psnr {mp:.2} mean iters {iters:.0} ({:.1?})",
            t.elapsed()
        );
    }

    // Targeted no-norm r=0.0625 on the same subset.
    for alpha in [1e-3, 3e-3] {
        let t = Instant::now();
        let results: Vec<_> = suite_imgs[..20]
            .par_iter()
            .zip(suite_labels[..20].par_iter())
            .map(|(x, &l)| {
                let cfg = AttackConfig {
                    mode: AttackMode::Targeted,
                    weights: LossWeights {
                        r: 0.0625,
                        ..Preset::NoNorm.weights(&LossWeights::default())
                    },
                    alpha,
                    max_iters: 1000,
                    ..AttackConfig::default()
                };
                mnd_attack(x, &clf, Some(l), &cfg).unwrap()
            })
            .collect();
        let succ = results.iter().filter(|r| r.success).count();
        let psnrs: Vec<f64> = results
            .iter()
            .zip(&suite_imgs[..20])
            .filter(|(r, _)| r.success)
            .map(|(r, x)| metrics::psnr(&r.adversarial, x).unwrap())
            .collect();
        let mp = psnrs.iter().sum::<f64>() / psnrs.len().max(1) as f64;
        println!(
            "targeted alpha {alpha:.0e}: success {succ}/20 mean psnr {mp:.2} ({:.1?})",
            t.elapsed()
        );
    }
    println!("total: {:.1?}", t0.elapsed());
}
