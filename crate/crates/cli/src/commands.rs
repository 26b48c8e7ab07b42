//! The five pipeline commands: gen-data, train, attack, evaluate, reproduce.

use std::fs;
use std::path::{Path, PathBuf};
use std::time::{Duration, Instant};

use anyhow::{bail, Context, Result};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use mnd_core::attacks::{baseline_attack, mnd_attack, AttackConfig, BaselineKind};
use mnd_core::classifier::{Classifier, TrainOptions, TrainReport};
use mnd_core::dataset::{Dataset, GenOptions};
use mnd_core::losses::{AttackMode, Preset};
use mnd_core::metrics::{self, ImageRecord, IqaReport};
use mnd_core::pixmap;
use mnd_core::tensor::Tensor;

use crate::config::ExperimentConfig;
use crate::report;

/// One attack method: an MND ablation preset or a sign-step baseline.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Method {
    Preset(Preset),
    Baseline(BaselineKind),
}

impl Method {
    /// Row order used in the aggregate tables: baselines first, then the
    /// ablation presets from weakest to strongest.
    pub const TABLE_ORDER: [Method; 11] = [
        Method::Baseline(BaselineKind::Pgd),
        Method::Baseline(BaselineKind::Mifgsm),
        Method::Baseline(BaselineKind::Bim),
        Method::Baseline(BaselineKind::Di2fgsm),
        Method::Preset(Preset::NoNorm),
        Method::Preset(Preset::L2),
        Method::Preset(Preset::L1),
        Method::Preset(Preset::Ssim),
        Method::Preset(Preset::L2Ssim),
        Method::Preset(Preset::L1Ssim),
        Method::Preset(Preset::Mnd),
    ];

    pub fn label(&self) -> &'static str {
        match self {
            Method::Preset(p) => p.label(),
            Method::Baseline(b) => b.label(),
        }
    }

    /// Directory-safe lowercase name.
    pub fn dir_name(&self) -> &'static str {
        match self {
            Method::Preset(Preset::NoNorm) => "no-norm",
            Method::Preset(Preset::L2) => "l2",
            Method::Preset(Preset::L1) => "l1",
            Method::Preset(Preset::Ssim) => "ssim",
            Method::Preset(Preset::L2Ssim) => "l2-ssim",
            Method::Preset(Preset::L1Ssim) => "l1-ssim",
            Method::Preset(Preset::Mnd) => "mnd",
            Method::Baseline(BaselineKind::Bim) => "bim",
            Method::Baseline(BaselineKind::Pgd) => "pgd",
            Method::Baseline(BaselineKind::Mifgsm) => "mifgsm",
            Method::Baseline(BaselineKind::Di2fgsm) => "di2fgsm",
        }
    }

    pub fn parse(name: &str) -> Result<Method> {
        Method::TABLE_ORDER
            .iter()
            .copied()
            .find(|m| m.dir_name() == name)
            .with_context(|| {
                format!(
                    "unknown method {name:?}; expected one of {}",
                    Method::TABLE_ORDER.map(|m| m.dir_name()).join(", ")
                )
            })
    }

    /// Parse a comma-separated list; `all`, `ablation`, and `baselines`
    /// expand to groups.
    pub fn parse_list(spec: &str, mode: AttackMode) -> Result<Vec<Method>> {
        let mut methods = Vec::new();
        for token in spec.split(',').map(str::trim).filter(|t| !t.is_empty()) {
            match token {
                "all" => match mode {
                    AttackMode::NonTargeted => methods.extend(Method::TABLE_ORDER),
                    AttackMode::Targeted => methods.push(Method::Preset(Preset::Mnd)),
                },
                "ablation" => methods.extend(Preset::ALL.map(Method::Preset)),
                "baselines" => methods.extend(BaselineKind::ALL.map(Method::Baseline)),
                name => methods.push(Method::parse(name)?),
            }
        }
        methods.dedup();
        if methods.is_empty() {
            bail!("no methods selected");
        }
        if mode == AttackMode::Targeted {
            if let Some(b) = methods.iter().find(|m| matches!(m, Method::Baseline(_))) {
                bail!(
                    "method {} only supports non-targeted attacks",
                    b.dir_name()
                );
            }
        }
        Ok(methods)
    }
}

/// Fixed artifact layout under the output directory.
pub struct Workspace {
    pub root: PathBuf,
}

impl Workspace {
    pub fn new(root: &Path) -> Result<Self> {
        fs::create_dir_all(root)
            .with_context(|| format!("creating output dir {}", root.display()))?;
        Ok(Workspace {
            root: root.to_path_buf(),
        })
    }

    pub fn train_data(&self) -> PathBuf {
        self.root.join("dataset").join("train.bin")
    }
    pub fn test_data(&self) -> PathBuf {
        self.root.join("dataset").join("test.bin")
    }
    pub fn manifest(&self) -> PathBuf {
        self.root.join("dataset").join("manifest.csv")
    }
    pub fn checkpoint(&self) -> PathBuf {
        self.root.join("model.ckpt")
    }
    pub fn train_report(&self) -> PathBuf {
        self.root.join("train_report.csv")
    }
    pub fn attack_dir(&self, mode: AttackMode) -> PathBuf {
        self.root.join("attacks").join(mode_dir(mode))
    }
    pub fn method_dir(&self, mode: AttackMode, method: Method) -> PathBuf {
        self.attack_dir(mode).join(method.dir_name())
    }
    pub fn eval_dir(&self, mode: AttackMode) -> PathBuf {
        self.root.join("eval").join(mode_dir(mode))
    }
    pub fn summary(&self) -> PathBuf {
        self.root.join("summary.txt")
    }
    pub fn resolved_config(&self) -> PathBuf {
        self.root.join("config.resolved.json")
    }
}

pub fn mode_dir(mode: AttackMode) -> &'static str {
    match mode {
        AttackMode::NonTargeted => "non-targeted",
        AttackMode::Targeted => "targeted",
    }
}

/// Per-image attack record stored next to the adversarial pixmap.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct AttackRecord {
    pub image_id: usize,
    pub label: usize,
    pub clean_class: usize,
    pub adversarial_class: usize,
    pub target_class: Option<usize>,
    pub success: bool,
    pub iterations: usize,
    pub final_loss: f64,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SkippedImage {
    pub image_id: usize,
    pub label: usize,
    pub predicted: usize,
}

pub fn image_file(dir: &Path, image_id: usize) -> PathBuf {
    dir.join(format!("img_{image_id:05}.ppm"))
}

// ---- gen-data --------------------------------------------------------------

pub fn cmd_gen_data(config: &ExperimentConfig, ws: &Workspace) -> Result<(Dataset, Dataset)> {
    let d = &config.dataset;
    fs::create_dir_all(ws.root.join("dataset"))?;
    let train = Dataset::generate(&GenOptions {
        num_classes: d.classes,
        samples_per_class: d.train_per_class,
        height: d.height,
        width: d.width,
        seed: d.seed,
    })
    .context("[gen-data] generating training set")?;
    let test = Dataset::generate(&GenOptions {
        num_classes: d.classes,
        samples_per_class: d.test_per_class,
        height: d.height,
        width: d.width,
        seed: d.test_seed,
    })
    .context("[gen-data] generating held-out set")?;
    train.save(&ws.train_data()).context("[gen-data] writing train.bin")?;
    test.save(&ws.test_data()).context("[gen-data] writing test.bin")?;
    train
        .write_manifest(&ws.manifest())
        .context("[gen-data] writing manifest")?;
    Ok((train, test))
}

// ---- train -----------------------------------------------------------------

pub struct TrainOutcome {
    pub classifier: Classifier,
    pub report: TrainReport,
    pub duration: Duration,
}

pub fn cmd_train(config: &ExperimentConfig, ws: &Workspace) -> Result<TrainOutcome> {
    let train = Dataset::load(&ws.train_data())
        .context("[train] loading train.bin (run gen-data first)")?;
    let (images, labels) = train.to_tensors();
    let d = &config.dataset;
    let c = &config.classifier;
    let start = Instant::now();
    let mut classifier =
        Classifier::build_small_cnn([3, d.height, d.width], d.classes, c.init_seed)
            .context("[train] building classifier")?;
    let report = classifier
        .train(
            &images,
            &labels,
            &TrainOptions {
                epochs: c.epochs,
                learning_rate: c.learning_rate,
                batch_size: c.batch_size,
                seed: c.train_seed,
            },
        )
        .context("[train] training")?;
    let duration = start.elapsed();
    classifier
        .save(&ws.checkpoint())
        .context("[train] writing checkpoint")?;
    report::write_train_report_csv(&ws.train_report(), &report)
        .context("[train] writing training report")?;
    Ok(TrainOutcome {
        classifier,
        report,
        duration,
    })
}

// ---- attack ----------------------------------------------------------------

pub struct AttackOutcome {
    /// Records per method, in the order the methods were requested.
    pub per_method: Vec<(Method, Vec<AttackRecord>)>,
    pub skipped: Vec<SkippedImage>,
    pub selected: Vec<usize>,
    pub duration: Duration,
}

/// Pick the evaluation suite: the first `count/classes` correctly-classified
/// held-out images of each class (by id), topped up in id order if a class
/// runs short. Misclassified images are logged.
pub fn select_suite(
    classifier: &Classifier,
    test: &Dataset,
    count: usize,
) -> Result<(Vec<usize>, Vec<SkippedImage>)> {
    let classes = classifier.num_classes();
    let quota = count.div_ceil(classes);
    let verdicts: Vec<(usize, usize)> = (0..test.len())
        .into_par_iter()
        .map(|i| {
            let predicted = classifier.predict(&test.image(i)).map(|p| p.class)?;
            Ok((i, predicted))
        })
        .collect::<mnd_core::Result<Vec<_>>>()
        .context("[attack] classifying held-out images")?;

    let mut skipped = Vec::new();
    let mut per_class = vec![0usize; classes];
    let mut selected = Vec::new();
    let mut spare = Vec::new();
    for (i, predicted) in verdicts {
        let label = test.label(i);
        if predicted != label {
            skipped.push(SkippedImage {
                image_id: i,
                label,
                predicted,
            });
            continue;
        }
        if per_class[label] < quota && selected.len() < count {
            per_class[label] += 1;
            selected.push(i);
        } else {
            spare.push(i);
        }
    }
    for i in spare {
        if selected.len() >= count {
            break;
        }
        selected.push(i);
    }
    selected.sort_unstable();
    if selected.len() < count {
        bail!(
            "[attack] only {} correctly-classified held-out images available, need {count}",
            selected.len()
        );
    }
    Ok((selected, skipped))
}

pub fn cmd_attack(
    config: &ExperimentConfig,
    ws: &Workspace,
    mode: AttackMode,
    methods: &[Method],
) -> Result<AttackOutcome> {
    let classifier = Classifier::load(&ws.checkpoint())
        .context("[attack] loading checkpoint (run train first)")?;
    let test = Dataset::load(&ws.test_data()).context("[attack] loading test.bin")?;
    let start = Instant::now();
    let (selected, skipped) = select_suite(&classifier, &test, config.attack.count)?;

    let attack_root = ws.attack_dir(mode);
    fs::create_dir_all(&attack_root)?;
    let skip_text = {
        let mut t = String::from("image_id,label,predicted\n");
        for s in &skipped {
            t.push_str(&format!("{},{},{}\n", s.image_id, s.label, s.predicted));
        }
        t
    };
    fs::write(attack_root.join("skipped.csv"), skip_text)?;

    let full_weights = config.loss_weights(mode);
    let mut per_method = Vec::with_capacity(methods.len());
    for &method in methods {
        let dir = ws.method_dir(mode, method);
        fs::create_dir_all(&dir)?;
        let results: Vec<(usize, AttackRecord, Tensor)> = selected
            .par_iter()
            .map(|&i| {
                let x = test.image(i);
                let label = test.label(i);
                let result = match method {
                    Method::Preset(preset) => {
                        let cfg = AttackConfig {
                            weights: preset.weights(&full_weights),
                            ..config.attack_config(mode)
                        };
                        mnd_attack(&x, &classifier, Some(label), &cfg)
                    }
                    Method::Baseline(kind) => {
                        baseline_attack(&x, &classifier, label, &config.baseline_config(i), kind)
                    }
                }?;
                let record = AttackRecord {
                    image_id: i,
                    label,
                    clean_class: result.clean_class,
                    adversarial_class: result.adversarial_class,
                    target_class: result.target_class,
                    success: result.success,
                    iterations: result.iterations_used,
                    final_loss: result.final_loss,
                };
                Ok((i, record, result.adversarial))
            })
            .collect::<mnd_core::Result<Vec<_>>>()
            .with_context(|| format!("[attack] running {}", method.label()))?;

        let mut records = Vec::with_capacity(results.len());
        for (i, record, adversarial) in results {
            pixmap::write_p6(&image_file(&dir, i), &adversarial)
                .with_context(|| format!("[attack] writing image {i}"))?;
            records.push(record);
        }
        let json = serde_json::to_string_pretty(&records)?;
        fs::write(dir.join("records.json"), json + "\n")?;
        per_method.push((method, records));
    }
    Ok(AttackOutcome {
        per_method,
        skipped,
        selected,
        duration: start.elapsed(),
    })
}

// ---- evaluate ----------------------------------------------------------------

pub struct EvaluateOutcome {
    pub records: Vec<ImageRecord>,
    pub report: IqaReport,
}

pub fn cmd_evaluate(
    config: &ExperimentConfig,
    ws: &Workspace,
    mode: AttackMode,
) -> Result<EvaluateOutcome> {
    let test = Dataset::load(&ws.test_data()).context("[evaluate] loading test.bin")?;
    let attack_root = ws.attack_dir(mode);
    if !attack_root.exists() {
        bail!("[evaluate] no attack outputs under {}", attack_root.display());
    }
    let eval_dir = ws.eval_dir(mode);
    fs::create_dir_all(&eval_dir)?;

    let classifier = if config.evaluation.emit_heatmaps {
        Some(Classifier::load(&ws.checkpoint()).context("[evaluate] loading checkpoint")?)
    } else {
        None
    };

    let mut records: Vec<ImageRecord> = Vec::new();
    for method in Method::TABLE_ORDER {
        let dir = ws.method_dir(mode, method);
        let records_path = dir.join("records.json");
        if !records_path.exists() {
            continue;
        }
        let attack_records: Vec<AttackRecord> =
            serde_json::from_str(&fs::read_to_string(&records_path)?)
                .with_context(|| format!("[evaluate] parsing {}", records_path.display()))?;

        let method_records: Vec<ImageRecord> = attack_records
            .par_iter()
            .map(|r| {
                let clean = test.image(r.image_id);
                let adversarial = pixmap::read_p6(&image_file(&dir, r.image_id))?;
                Ok(ImageRecord {
                    method: method.label().to_string(),
                    image_id: r.image_id,
                    psnr: metrics::psnr(&adversarial, &clean)?,
                    ssim: metrics::ssim_eval(&adversarial, &clean)?,
                    success: r.success,
                    iterations: r.iterations,
                    deviation_ratio: metrics::deviation_pixel_ratio(&adversarial, &clean, 0)?,
                })
            })
            .collect::<mnd_core::Result<Vec<_>>>()
            .with_context(|| format!("[evaluate] scoring {}", method.label()))?;

        if config.evaluation.emit_diff_maps || config.evaluation.emit_heatmaps {
            let artifact_dir = eval_dir.join("artifacts").join(method.dir_name());
            fs::create_dir_all(&artifact_dir)?;
            for r in attack_records.iter().take(config.evaluation.artifact_limit) {
                let clean = test.image(r.image_id);
                let adversarial = pixmap::read_p6(&image_file(&dir, r.image_id))?;
                if config.evaluation.emit_diff_maps {
                    let map = metrics::abs_diff_map(&adversarial, &clean)?;
                    for (channel, name) in ["r", "g", "b"].iter().enumerate() {
                        let values: Vec<f64> = map.channels[channel]
                            .iter()
                            .map(|&v| v as f64 / 255.0)
                            .collect();
                        let gray = grayscale_image(&values, map.height, map.width)?;
                        pixmap::write_p6(
                            &artifact_dir.join(format!("img_{:05}_diff_{name}.ppm", r.image_id)),
                            &gray,
                        )?;
                    }
                }
                if let Some(classifier) = &classifier {
                    let clean_map = metrics::grad_cam(classifier, &clean, r.clean_class)?;
                    let adv_map = metrics::grad_cam(classifier, &adversarial, r.clean_class)?;
                    for (map, tag) in [(&clean_map, "clean"), (&adv_map, "adv")] {
                        let gray = grayscale_image(&map.values, map.height, map.width)?;
                        pixmap::write_p6(
                            &artifact_dir.join(format!("img_{:05}_cam_{tag}.ppm", r.image_id)),
                            &gray,
                        )?;
                    }
                }
            }
        }
        records.extend(method_records);
    }
    if records.is_empty() {
        bail!("[evaluate] no attack records found under {}", attack_root.display());
    }

    let report = metrics::aggregate(&records).context("[evaluate] aggregating")?;
    report::write_per_image_csv(&eval_dir.join("per_image.csv"), &records)?;
    report::write_aggregate_csv(&eval_dir.join("aggregate.csv"), &report)?;
    Ok(EvaluateOutcome { records, report })
}

fn grayscale_image(values: &[f64], height: usize, width: usize) -> mnd_core::Result<Tensor> {
    let mut rgb = Vec::with_capacity(3 * values.len());
    for _ in 0..3 {
        rgb.extend_from_slice(values);
    }
    Tensor::new(vec![3, height, width], rgb)
}

// ---- reproduce ---------------------------------------------------------------

pub struct ReproduceOutcome {
    pub train: TrainOutcome,
    pub nontargeted_attacks: AttackOutcome,
    pub targeted_attacks: AttackOutcome,
    pub nontargeted_eval: EvaluateOutcome,
    pub targeted_eval: EvaluateOutcome,
    pub verdicts: Vec<Verdict>,
}

#[derive(Clone, Debug)]
pub struct Verdict {
    pub claim: String,
    pub holds: bool,
    pub detail: String,
}

pub fn cmd_reproduce(config: &ExperimentConfig, ws: &Workspace) -> Result<ReproduceOutcome> {
    config.save(&ws.resolved_config())?;
    cmd_gen_data(config, ws)?;
    let train = cmd_train(config, ws)?;
    let nontargeted_methods = Method::parse_list("all", AttackMode::NonTargeted)?;
    let nontargeted_attacks = cmd_attack(config, ws, AttackMode::NonTargeted, &nontargeted_methods)?;
    let targeted_methods = Method::parse_list("all", AttackMode::Targeted)?;
    let targeted_attacks = cmd_attack(config, ws, AttackMode::Targeted, &targeted_methods)?;
    let nontargeted_eval = cmd_evaluate(config, ws, AttackMode::NonTargeted)?;
    let targeted_eval = cmd_evaluate(config, ws, AttackMode::Targeted)?;

    let verdicts = ordering_verdicts(&nontargeted_eval.report, &targeted_eval.report);
    let mut text = String::new();
    for v in &verdicts {
        text.push_str(&format!(
            "{} {} ({})\n",
            if v.holds { "HOLDS" } else { "FAILS" },
            v.claim,
            v.detail
        ));
    }
    fs::write(ws.summary(), text)?;
    Ok(ReproduceOutcome {
        train,
        nontargeted_attacks,
        targeted_attacks,
        nontargeted_eval,
        targeted_eval,
        verdicts,
    })
}

fn find<'a>(report: &'a IqaReport, label: &str) -> Option<&'a metrics::MethodAggregate> {
    report.methods.iter().find(|m| m.method == label)
}

/// One verdict per reference-table claim: MND beats each baseline on PSNR,
/// SSIM, and deviation-pixel ratio; the ablation chains are monotone; the
/// targeted attack is harder than the non-targeted one.
pub fn ordering_verdicts(nontargeted: &IqaReport, targeted: &IqaReport) -> Vec<Verdict> {
    let mut verdicts = Vec::new();
    let mnd = find(nontargeted, "MND");
    for baseline in ["PGD", "MIFGSM", "BIM", "DI2FGSM"] {
        let b = find(nontargeted, baseline);
        if let (Some(mnd), Some(b)) = (mnd, b) {
            verdicts.push(Verdict {
                claim: format!("mean PSNR: MND > {baseline}"),
                holds: mnd.mean_psnr > b.mean_psnr,
                detail: format!("{:.2} vs {:.2} dB", mnd.mean_psnr, b.mean_psnr),
            });
            verdicts.push(Verdict {
                claim: format!("mean SSIM: MND > {baseline}"),
                holds: mnd.mean_ssim > b.mean_ssim,
                detail: format!("{:.4} vs {:.4}", mnd.mean_ssim, b.mean_ssim),
            });
            verdicts.push(Verdict {
                claim: format!("deviation-pixel ratio: MND < {baseline}"),
                holds: mnd.mean_deviation_ratio < b.mean_deviation_ratio,
                detail: format!(
                    "{:.4} vs {:.4}",
                    mnd.mean_deviation_ratio, b.mean_deviation_ratio
                ),
            });
        }
    }
    for chain in [
        ["MND", "L1+SSIM", "L1", "No-norm"].as_slice(),
        ["MND", "SSIM", "No-norm"].as_slice(),
    ] {
        for metric in ["PSNR", "SSIM"] {
            let values: Vec<(String, f64)> = chain
                .iter()
                .filter_map(|label| {
                    find(nontargeted, label).map(|m| {
                        (
                            label.to_string(),
                            if metric == "PSNR" { m.mean_psnr } else { m.mean_ssim },
                        )
                    })
                })
                .collect();
            if values.len() == chain.len() {
                let holds = values.windows(2).all(|w| w[0].1 >= w[1].1);
                verdicts.push(Verdict {
                    claim: format!("mean {metric} ordering: {}", chain.join(" >= ")),
                    holds,
                    detail: values
                        .iter()
                        .map(|(_, v)| format!("{v:.4}"))
                        .collect::<Vec<_>>()
                        .join(" >= "),
                });
            }
        }
    }
    if let (Some(nt), Some(t)) = (mnd, find(targeted, "MND")) {
        verdicts.push(Verdict {
            claim: "targeted MND uses at least as many iterations as non-targeted".into(),
            holds: t.mean_iterations >= nt.mean_iterations,
            detail: format!("{:.1} vs {:.1}", t.mean_iterations, nt.mean_iterations),
        });
        verdicts.push(Verdict {
            claim: "targeted MND PSNR at most non-targeted PSNR".into(),
            holds: t.mean_psnr <= nt.mean_psnr,
            detail: format!("{:.2} vs {:.2} dB", t.mean_psnr, nt.mean_psnr),
        });
    }
    verdicts
}
