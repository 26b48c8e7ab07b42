// Scratch probe: criterion-level finite-difference sweep across all losses.
use mnd_core::classifier::Classifier;
use mnd_core::losses::{self, AttackMode, LossWeights, NonTargetedForm, Norm};
use mnd_core::tape::{grad_check, DEFAULT_FD_EPS};
use mnd_core::Tensor;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use std::time::Instant;

fn main() {
    let start = Instant::now();
    let classifier = Classifier::build_small_cnn([3, 16, 16], 10, 7).unwrap();
    let n = 20;

    let mut run = |name: &str, f: &dyn Fn(u64) -> f64| {
        let mut worst = 0.0f64;
        let mut fails = 0;
        for seed in 0..n {
            let e = f(seed);
            if e > 1e-4 {
                fails += 1;
            }
            worst = worst.max(e);
        }
        println!("{name:>22}: worst {worst:.3e}  fails {fails}/{n}");
    };

    run("adv_nontargeted", &|seed| {
        let mut rng = ChaCha8Rng::seed_from_u64(1000 + seed);
        let logits = Tensor::rand_uniform(vec![3, 16, 16], -2.0, 2.0, &mut rng);
        let y_gt = losses::one_hot(rng.gen_range(0..768), 768);
        grad_check(
            move |tape, u| {
                let flat = tape.flatten(u)?;
                let y = tape.softmax(flat)?;
                losses::adv_nontargeted(tape, &y_gt, y, flat)
            },
            &logits,
            DEFAULT_FD_EPS,
        )
        .unwrap()
        .max_rel_err
    });

    run("adv_targeted", &|seed| {
        let mut rng = ChaCha8Rng::seed_from_u64(2000 + seed);
        let logits = Tensor::rand_uniform(vec![3, 16, 16], -2.0, 2.0, &mut rng);
        let y_t = losses::one_hot(rng.gen_range(0..768), 768);
        grad_check(
            move |tape, u| {
                let flat = tape.flatten(u)?;
                let y = tape.softmax(flat)?;
                losses::adv_targeted(tape, &y_t, y, 0.0625)
            },
            &logits,
            DEFAULT_FD_EPS,
        )
        .unwrap()
        .max_rel_err
    });

    for norm in [Norm::L1, Norm::L2] {
        run(&format!("deviation {norm:?}"), &|seed| {
            let (z, x) = losses::fd_test_pair([3, 16, 16], 3000 + seed).unwrap();
            grad_check(
                move |tape, zv| {
                    let xv = tape.constant(&x);
                    losses::deviation(tape, zv, xv, norm)
                },
                &z,
                DEFAULT_FD_EPS,
            )
            .unwrap()
            .max_rel_err
        });
    }

    run("ssim", &|seed| {
        let (z, x) = losses::fd_test_pair([3, 16, 16], 4000 + seed).unwrap();
        grad_check(
            move |tape, zv| {
                let xv = tape.constant(&x);
                losses::ssim(tape, zv, xv)
            },
            &z,
            DEFAULT_FD_EPS,
        )
        .unwrap()
        .max_rel_err
    });

    for norm in [Norm::L1, Norm::L2] {
        run(&format!("grad_similarity {norm:?}"), &|seed| {
            let (z, x) = losses::fd_test_pair([3, 16, 16], 5000 + seed).unwrap();
            grad_check(
                move |tape, zv| {
                    let xv = tape.constant(&x);
                    losses::grad_similarity(tape, zv, xv, norm)
                },
                &z,
                DEFAULT_FD_EPS,
            )
            .unwrap()
            .max_rel_err
        });
    }

    run("total_loss MND", &|seed| {
        let (z, x) = losses::fd_test_pair([3, 16, 16], 6000 + seed).unwrap();
        let (objective, _, _) = losses::resolve_objective(
            &classifier,
            &x,
            Some(3),
            AttackMode::NonTargeted,
            &LossWeights::default(),
            NonTargetedForm::ProbPlusLogit,
            false,
        )
        .unwrap();
        let clf = classifier.clone();
        let xc = x.clone();
        grad_check(
            move |tape, zv| Ok(losses::total_loss(tape, zv, &xc, &clf, &objective)?.loss),
            &z,
            DEFAULT_FD_EPS,
        )
        .unwrap()
        .max_rel_err
    });

    println!("elapsed: {:.1?}", start.elapsed());
}
