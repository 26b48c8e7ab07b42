// Scratch probe: attack dynamics on a small trained classifier.
use mnd_core::attacks::{mnd_attack, AttackConfig};
use mnd_core::classifier::{Classifier, TrainOptions};
use mnd_core::dataset::{Dataset, GenOptions};
use mnd_core::losses::{self, AttackMode, LossWeights, NonTargetedForm, Preset};
use mnd_core::tape::Tape;

fn main() {
    let ds = Dataset::generate(&GenOptions {
        num_classes: 4,
        samples_per_class: 40,
        height: 16,
        width: 16,
        seed: 91,
    })
    .unwrap();
    let (images, labels) = ds.to_tensors();
    let mut clf = Classifier::build_small_cnn([3, 16, 16], 4, 92).unwrap();
    let report = clf
        .train(
            &images,
            &labels,
            &TrainOptions {
                epochs: 6,
                learning_rate: 0.08,
                batch_size: 16,
                seed: 93,
            },
        )
        .unwrap();
    println!(
        "train acc per epoch: {:?}",
        report.epochs.iter().map(|e| (e.accuracy * 100.0).round()).collect::<Vec<_>>()
    );

    let idx = (0..images.len())
        .find(|&i| clf.predict(&images[i]).unwrap().class == labels[i])
        .unwrap();
    let x = &images[idx];
    let pred = clf.predict(x).unwrap();
    println!("clean logits: {:?}", pred.logits.iter().map(|v| (v * 100.0).round() / 100.0).collect::<Vec<_>>());

    // Gradient magnitude of the no-norm loss at Z = X.
    let weights = Preset::NoNorm.weights(&LossWeights::default());
    let (objective, _, _) = losses::resolve_objective(
        &clf, x, Some(labels[idx]), AttackMode::NonTargeted, &weights,
        NonTargetedForm::ProbPlusLogit, false,
    )
    .unwrap();
    let mut tape = Tape::new();
    let zv = tape.input(x, true);
    let out = losses::total_loss(&mut tape, zv, x, &clf, &objective).unwrap();
    tape.backward(out.loss).unwrap();
    let g = tape.grad(zv).unwrap();
    let gmax = g.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let gl1: f64 = g.iter().map(|v| v.abs()).sum::<f64>() / g.len() as f64;
    println!("no-norm grad at X: max {gmax:.4e} mean|.| {gl1:.4e}");

    for alpha in [1e-3, 1e-2, 3e-2] {
        let config = AttackConfig {
            weights: weights.clone(),
            alpha,
            max_iters: 1000,
            ..AttackConfig::default()
        };
        let r = mnd_attack(x, &clf, Some(labels[idx]), &config).unwrap();
        println!(
            "alpha {alpha:.0e}: success {} iters {} final_loss {:.3} linf {:.4}",
            r.success,
            r.iterations_used,
            r.final_loss,
            r.adversarial.linf_distance(x)
        );
    }
}
