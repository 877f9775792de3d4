//! Experiment stages: split, VAE training, generation, classifier training,
//! evaluation and PCA export, driven by one resolved [`RunConfig`].
//!
//! All randomness derives from the master seed through named streams
//! (`split`, `split/val`, `vae/<class>`, `augment/<class>`, `clf`), so each
//! stage reproduces on its own.

use std::collections::BTreeMap;
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

use crate::augment::{generate_synthetic, AugmentPlan, ClassicalOp};
use crate::classifier::{
    self, train_classifier, Architecture, ClassifierConfig, EpochRecord, Sample,
};
use crate::data::image::{write_image, ImageBuffer};
use crate::data::manifest::{
    image_rel_path, Dataset, DatasetManifest, ManifestRow, Provenance, Split, MANIFEST_FILE,
};
use crate::data::split::{assign_validation, stratified_split};
use crate::data::toy::{write_toy_dataset, ToySpec};
use crate::error::{Error, Result};
use crate::eval::metrics::{build_confusion, metrics_from_confusion};
use crate::eval::pca::{mean_nearest_neighbor_distance, Pca};
use crate::eval::report::{emit_pca, emit_report, MetricsRow, PcaPoint};
use crate::rng::RngStream;
use crate::tensor::Tensor;
use crate::vae::{self, images_to_batch, train_class_vae, LossBreakdown, VaeConfig};

pub const RESOLVED_CONFIG: &str = "resolved_config.json";
pub const TEST_DIGEST_FILE: &str = "test_split.sha256";
pub const THREADS_ENV: &str = "LATENTAUG_THREADS";

/// The four training-data configurations compared by an experiment:
/// (name, use synthetic images, use classical augmentation).
pub const CONFIGURATIONS: [(&str, bool, bool); 4] = [
    ("real_noaug", false, false),
    ("real_aug", false, true),
    ("real_gen_noaug", true, false),
    ("real_gen_aug", true, true),
];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Profile {
    Desk,
    Paper,
}

impl FromStr for Profile {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "desk" => Ok(Profile::Desk),
            "paper" => Ok(Profile::Paper),
            _ => Err(Error::Contract(format!(
                "unknown profile {s:?}; expected desk or paper"
            ))),
        }
    }
}

impl fmt::Display for Profile {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Profile::Desk => "desk",
            Profile::Paper => "paper",
        })
    }
}

/// Feature space used for the PCA export.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PcaFeatures {
    Pixels,
    Latent,
}

/// Every knob of a run, flat so it maps one-to-one onto the JSON config file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    pub profile: Profile,
    pub data_root: PathBuf,
    pub out_dir: PathBuf,
    pub test_fraction: f64,
    pub val_fraction: f64,
    pub vae_latent_dim: usize,
    pub vae_hidden: Vec<usize>,
    pub vae_epochs: usize,
    pub vae_lr: f64,
    pub vae_batch_size: usize,
    pub clf_arch: Architecture,
    pub clf_conv_channels: Vec<usize>,
    pub clf_hidden: Vec<usize>,
    pub clf_epochs: usize,
    pub clf_batch_size: usize,
    pub clf_lr: f64,
    pub clf_patience: usize,
    pub clf_factor: f64,
    pub clf_threshold: f64,
    pub synthetic_per_class: usize,
    pub alpha_lo: f64,
    pub alpha_hi: f64,
    pub classical_ops: Vec<ClassicalOp>,
    pub augment_synthetic: bool,
    pub pca_features: PcaFeatures,
}

impl RunConfig {
    pub fn for_profile(profile: Profile) -> Self {
        let vae = match profile {
            Profile::Desk => VaeConfig::desk(),
            Profile::Paper => VaeConfig::default(),
        };
        let clf = ClassifierConfig::default();
        let plan = AugmentPlan::default();
        Self {
            seed: 42,
            profile,
            data_root: PathBuf::from("data"),
            out_dir: PathBuf::from("out"),
            test_fraction: 0.2,
            val_fraction: 0.15,
            vae_latent_dim: vae.latent_dim,
            vae_hidden: vae.hidden,
            vae_epochs: vae.epochs,
            vae_lr: vae.lr,
            vae_batch_size: vae.batch_size,
            clf_arch: clf.arch,
            clf_conv_channels: clf.conv_channels,
            clf_hidden: clf.hidden,
            clf_epochs: clf.epochs,
            clf_batch_size: clf.batch_size,
            clf_lr: clf.lr,
            clf_patience: clf.patience,
            clf_factor: clf.factor,
            clf_threshold: clf.threshold,
            synthetic_per_class: plan.counts[0],
            alpha_lo: plan.alpha_lo,
            alpha_hi: plan.alpha_hi,
            classical_ops: plan.classical_ops,
            augment_synthetic: plan.augment_synthetic,
            pca_features: PcaFeatures::Pixels,
        }
    }

    /// Layers command-line values over a config file over profile defaults.
    /// The profile itself follows the same precedence.
    pub fn resolve(file: Option<&Map<String, Value>>, cli: &Map<String, Value>) -> Result<Self> {
        let profile_value = cli
            .get("profile")
            .or_else(|| file.and_then(|f| f.get("profile")))
            .cloned()
            .unwrap_or(Value::String("desk".into()));
        let profile: Profile = serde_json::from_value(profile_value)?;
        let Value::Object(mut merged) = serde_json::to_value(Self::for_profile(profile))? else {
            unreachable!("RunConfig serializes to an object");
        };
        for layer in file.into_iter().chain([cli]) {
            for (k, v) in layer {
                if !merged.contains_key(k) {
                    return Err(Error::Contract(format!("unknown config key `{k}`")));
                }
                merged.insert(k.clone(), v.clone());
            }
        }
        let config: Self = serde_json::from_value(Value::Object(merged))?;
        config.validate()?;
        Ok(config)
    }

    pub fn from_json_file(path: &Path) -> Result<Map<String, Value>> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        match serde_json::from_str(&text)? {
            Value::Object(m) => Ok(m),
            _ => Err(Error::Data(format!(
                "{} must hold a JSON object",
                path.display()
            ))),
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.augment_plan(1).validate()?;
        for (name, f) in [
            ("test_fraction", self.test_fraction),
            ("val_fraction", self.val_fraction),
        ] {
            if !(f > 0.0 && f < 1.0) {
                return Err(Error::Contract(format!("{name} {f} must lie in (0, 1)")));
            }
        }
        if self.vae_epochs == 0 || self.clf_epochs == 0 {
            return Err(Error::Contract("epoch counts must be positive".into()));
        }
        Ok(())
    }

    pub fn vae_config(&self) -> VaeConfig {
        VaeConfig {
            latent_dim: self.vae_latent_dim,
            hidden: self.vae_hidden.clone(),
            epochs: self.vae_epochs,
            lr: self.vae_lr,
            batch_size: self.vae_batch_size,
        }
    }

    pub fn classifier_config(&self, classical: bool) -> ClassifierConfig {
        ClassifierConfig {
            arch: self.clf_arch,
            conv_channels: self.clf_conv_channels.clone(),
            hidden: self.clf_hidden.clone(),
            epochs: self.clf_epochs,
            batch_size: self.clf_batch_size,
            lr: self.clf_lr,
            patience: self.clf_patience,
            factor: self.clf_factor,
            threshold: self.clf_threshold,
            classical_ops: if classical {
                self.classical_ops.clone()
            } else {
                Vec::new()
            },
            augment_synthetic: self.augment_synthetic,
        }
    }

    pub fn augment_plan(&self, num_classes: usize) -> AugmentPlan {
        AugmentPlan {
            counts: vec![self.synthetic_per_class; num_classes],
            alpha_lo: self.alpha_lo,
            alpha_hi: self.alpha_hi,
            classical_ops: self.classical_ops.clone(),
            augment_synthetic: self.augment_synthetic,
            seed: self.seed,
        }
    }

    pub fn stream(&self, name: &str) -> RngStream {
        RngStream::new(self.seed, name)
    }

    pub fn vae_dir(&self) -> PathBuf {
        self.out_dir.join("vae")
    }

    pub fn clf_dir(&self) -> PathBuf {
        self.out_dir.join("clf")
    }

    pub fn vae_checkpoint(&self, class: usize) -> PathBuf {
        self.vae_dir().join(format!("class_{class}.ckpt"))
    }

    pub fn clf_checkpoint(&self, name: &str) -> PathBuf {
        self.clf_dir().join(format!("{name}.ckpt"))
    }

    pub fn save_resolved(&self) -> Result<PathBuf> {
        create_dir(&self.out_dir)?;
        let path = self.out_dir.join(RESOLVED_CONFIG);
        let mut text = serde_json::to_string_pretty(self)?;
        text.push('\n');
        std::fs::write(&path, text).map_err(|e| Error::io(&path, e))?;
        Ok(path)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let map = Self::from_json_file(path)?;
        Self::resolve(Some(&map), &Map::new())
    }
}

fn create_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    if let Some(dir) = path.parent() {
        create_dir(dir)?;
    }
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

/// Maximum number of concurrent per-class trainings.
pub fn thread_cap() -> usize {
    std::env::var(THREADS_ENV)
        .ok()
        .and_then(|v| v.parse::<usize>().ok())
        .filter(|&n| n > 0)
        .unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get()))
}

/// Runs `f` over `items` on up to `threads` workers, keeping input order.
fn parallel_map<T: Sync, R: Send>(
    items: &[T],
    threads: usize,
    f: impl Fn(&T) -> Result<R> + Sync,
) -> Result<Vec<R>> {
    if threads <= 1 || items.len() <= 1 {
        return items.iter().map(f).collect();
    }
    let next = AtomicUsize::new(0);
    let slots: Mutex<Vec<Option<Result<R>>>> = Mutex::new(items.iter().map(|_| None).collect());
    std::thread::scope(|s| {
        for _ in 0..threads.min(items.len()) {
            s.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::SeqCst);
                if i >= items.len() {
                    break;
                }
                let r = f(&items[i]);
                slots.lock().unwrap()[i] = Some(r);
            });
        }
    });
    slots
        .into_inner()
        .unwrap()
        .into_iter()
        .map(|r| r.expect("every item was processed"))
        .collect()
}

/// Writes the toy dataset, refusing to touch a non-empty directory unless
/// `force` is set.
pub fn gen_toy(spec: &ToySpec, root: &Path, force: bool) -> Result<DatasetManifest> {
    let non_empty = root
        .read_dir()
        .map(|mut d| d.next().is_some())
        .unwrap_or(false);
    if non_empty {
        if !force {
            return Err(Error::Contract(format!(
                "{} is not empty; pass --force to overwrite",
                root.display()
            )));
        }
        let images = root.join("images");
        if images.exists() {
            std::fs::remove_dir_all(&images).map_err(|e| Error::io(&images, e))?;
        }
    }
    write_toy_dataset(spec, root).map_err(|e| e.in_stage("gen-toy"))
}

fn open_dataset(cfg: &RunConfig) -> Result<Dataset> {
    Dataset::open(&cfg.data_root)
}

fn require_split(ds: &Dataset) -> Result<()> {
    if ds.manifest.has_split_assignment() {
        Ok(())
    } else {
        Err(Error::Contract(format!(
            "{} has no train/test assignment; run the `split` command first",
            ds.root.join(MANIFEST_FILE).display()
        )))
    }
}

/// Assigns test, then validation, splits in place.
pub fn split(cfg: &RunConfig) -> Result<DatasetManifest> {
    let run = || {
        let ds = open_dataset(cfg)?;
        let m = stratified_split(&ds.manifest, cfg.test_fraction, &mut cfg.stream("split"))?;
        let m = assign_validation(&m, cfg.val_fraction, &mut cfg.stream("split/val"))?;
        m.save(&ds.root.join(MANIFEST_FILE))?;
        Ok(m)
    };
    run().map_err(|e: Error| e.in_stage("split"))
}

fn class_images(
    ds: &Dataset,
    class: usize,
    filter: impl Fn(&ManifestRow) -> bool,
) -> Result<Vec<ImageBuffer>> {
    ds.manifest
        .rows_where(|r| r.label == class && filter(r))
        .map(|r| ds.read(r))
        .collect()
}

fn is_real_train(r: &ManifestRow) -> bool {
    r.provenance == Provenance::Real && r.split == Split::Train
}

/// Trains one VAE per class on its real training images; writes
/// `class_<k>.ckpt` and `class_<k>_loss.csv` under `<out>/vae`.
pub fn train_vaes(cfg: &RunConfig) -> Result<Vec<Vec<LossBreakdown>>> {
    let run = || {
        let ds = open_dataset(cfg)?;
        require_split(&ds)?;
        create_dir(&cfg.vae_dir())?;
        let classes: Vec<usize> = (0..ds.manifest.num_classes()).collect();
        let vae_cfg = cfg.vae_config();
        parallel_map(&classes, thread_cap(), |&class| {
            let images = class_images(&ds, class, is_real_train)?;
            let mut rng = cfg.stream(&format!("vae/{class}"));
            let (model, history) = train_class_vae(&images, class, &vae_cfg, &mut rng)?;
            vae::save_checkpoint(&model, &cfg.vae_checkpoint(class))?;
            let mut csv = String::from("epoch,total,reconstruction,kl\n");
            for (e, l) in history.iter().enumerate() {
                csv.push_str(&format!("{e},{},{},{}\n", l.total, l.reconstruction, l.kl));
            }
            write_text(&cfg.vae_dir().join(format!("class_{class}_loss.csv")), &csv)?;
            Ok(history)
        })
    };
    run().map_err(|e: Error| e.in_stage("train-vae"))
}

fn load_vae(cfg: &RunConfig, class: usize) -> Result<vae::VaeModel> {
    let path = cfg.vae_checkpoint(class);
    if !path.is_file() {
        return Err(Error::Data(format!(
            "no VAE checkpoint for class {class} at {}; run `train-vae` first",
            path.display()
        )));
    }
    vae::load_checkpoint(&path)
}

/// Replaces every synthetic row with `synthetic_per_class` fresh
/// interpolations per class, written next to the real images.
pub fn generate(cfg: &RunConfig) -> Result<DatasetManifest> {
    let run = || {
        let ds = open_dataset(cfg)?;
        require_split(&ds)?;
        if cfg.synthetic_per_class == 0 {
            return Ok(ds.manifest);
        }
        let num_classes = ds.manifest.num_classes();
        let plan = cfg.augment_plan(num_classes);
        let models = (0..num_classes)
            .map(|c| load_vae(cfg, c))
            .collect::<Result<Vec<_>>>()?;

        let mut rows: Vec<ManifestRow> = Vec::new();
        for row in &ds.manifest.rows {
            if row.provenance == Provenance::Synthetic {
                let p = ds.root.join(&row.path);
                if p.exists() {
                    std::fs::remove_file(&p).map_err(|e| Error::io(&p, e))?;
                }
            } else {
                rows.push(row.clone());
            }
        }
        for (class, model) in models.iter().enumerate() {
            let images = class_images(&ds, class, is_real_train)?;
            let synth = generate_synthetic(
                model,
                &images,
                plan.count_for(class),
                &plan,
                &mut plan.stream(class),
            )?;
            for (i, s) in synth.iter().enumerate() {
                let id = format!("syn_c{class}_{i:04}");
                let rel = image_rel_path(class, &id);
                write_image(&ds.root.join(&rel), &s.image)?;
                rows.push(ManifestRow {
                    image_id: id,
                    path: rel,
                    label: class,
                    split: Split::Train,
                    provenance: Provenance::Synthetic,
                });
            }
        }
        let m = DatasetManifest::new(rows)?;
        m.save(&ds.root.join(MANIFEST_FILE))?;
        Ok(m)
    };
    run().map_err(|e: Error| e.in_stage("generate"))
}

fn samples(ds: &Dataset, filter: impl Fn(&ManifestRow) -> bool) -> Result<Vec<Sample>> {
    ds.manifest
        .rows_where(filter)
        .map(|r| {
            Ok(Sample {
                image: ds.read(r)?,
                label: r.label,
                provenance: r.provenance,
            })
        })
        .collect()
}

/// Trains the classifier for one data configuration and writes its
/// checkpoint plus per-epoch history under `<out>/clf`.
pub fn train_clf(
    cfg: &RunConfig,
    name: &str,
    with_synthetic: bool,
    classical: bool,
) -> Result<(classifier::ClassifierModel, Vec<EpochRecord>)> {
    let run = || {
        let ds = open_dataset(cfg)?;
        require_split(&ds)?;
        let train = samples(&ds, |r| {
            r.split == Split::Train && (with_synthetic || r.provenance == Provenance::Real)
        })?;
        let val = samples(&ds, |r| r.split == Split::Val)?;
        let num_classes = ds.manifest.num_classes();
        let (model, history) = train_classifier(
            &train,
            &val,
            num_classes,
            &cfg.classifier_config(classical),
            &mut cfg.stream("clf"),
        )?;
        create_dir(&cfg.clf_dir())?;
        classifier::save_checkpoint(&model, &cfg.clf_checkpoint(name))?;
        let mut csv = String::from("epoch,train_loss,val_loss,val_acc,lr\n");
        for r in &history {
            csv.push_str(&format!(
                "{},{},{},{},{}\n",
                r.epoch, r.train_loss, r.val_loss, r.val_acc, r.lr
            ));
        }
        write_text(&cfg.clf_dir().join(format!("{name}_history.csv")), &csv)?;
        Ok((model, history))
    };
    run().map_err(|e: Error| e.in_stage("train-clf"))
}

/// Test-split metrics of the saved classifiers named in `names`; writes the
/// report files into the output directory.
pub fn evaluate(cfg: &RunConfig, names: &[&str]) -> Result<Vec<MetricsRow>> {
    let run = || {
        let ds = open_dataset(cfg)?;
        require_split(&ds)?;
        let test = samples(&ds, |r| r.split == Split::Test)?;
        let labels: Vec<usize> = test.iter().map(|s| s.label).collect();
        let images: Vec<ImageBuffer> = test.into_iter().map(|s| s.image).collect();
        let num_classes = ds.manifest.num_classes();
        let mut rows = Vec::new();
        for &name in names {
            let path = cfg.clf_checkpoint(name);
            if !path.is_file() {
                return Err(Error::Data(format!(
                    "no classifier checkpoint `{name}` at {}; run `train-clf` first",
                    path.display()
                )));
            }
            let model = classifier::load_checkpoint(&path)?;
            let predicted = model.predict_labels(&images)?;
            let cm = build_confusion(&labels, &predicted, num_classes)?;
            rows.push(MetricsRow::from_report(name, &metrics_from_confusion(&cm)?));
        }
        emit_report(&rows, &cfg.out_dir)?;
        Ok(rows)
    };
    run().map_err(|e: Error| e.in_stage("evaluate"))
}

/// Nearest-neighbour density of one class in its PC1–PC2 plane.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PcaSummary {
    pub class: usize,
    pub real_points: usize,
    pub synthetic_points: usize,
    pub real_nn_distance: f64,
    pub combined_nn_distance: f64,
    pub explained_variance: [f64; 2],
}

fn features(cfg: &RunConfig, class: usize, images: &[ImageBuffer]) -> Result<Vec<Vec<f64>>> {
    match cfg.pca_features {
        PcaFeatures::Pixels => Ok(images.iter().map(|i| i.pixels.clone()).collect()),
        PcaFeatures::Latent => {
            let model = load_vae(cfg, class)?;
            let (mu, _) = model.encode(&images_to_batch(&images.iter().collect::<Vec<_>>())?)?;
            Ok((0..images.len()).map(|i| mu.row(i).to_vec()).collect())
        }
    }
}

/// Fits a 2-component PCA per class on its real training and synthetic
/// images and writes `pca_<class>.csv`.
pub fn pca_export(cfg: &RunConfig) -> Result<Vec<PcaSummary>> {
    let run = || {
        let ds = open_dataset(cfg)?;
        require_split(&ds)?;
        let mut out = Vec::new();
        for class in 0..ds.manifest.num_classes() {
            let real = class_images(&ds, class, is_real_train)?;
            let synth = class_images(&ds, class, |r| r.provenance == Provenance::Synthetic)?;
            let all: Vec<ImageBuffer> = real.iter().chain(&synth).cloned().collect();
            let feats = features(cfg, class, &all)?;
            let pca = Pca::fit(&feats, 2)?;
            let coords: Vec<Vec<f64>> = feats.iter().map(|f| pca.project(f)).collect();
            let points: Vec<PcaPoint> = coords
                .iter()
                .enumerate()
                .map(|(i, c)| PcaPoint {
                    class,
                    provenance: if i < real.len() {
                        Provenance::Real
                    } else {
                        Provenance::Synthetic
                    },
                    pc1: c[0],
                    pc2: c[1],
                })
                .collect();
            emit_pca(class, &points, &cfg.out_dir)?;
            let real_nn = mean_nearest_neighbor_distance(&coords[..real.len()])?;
            out.push(PcaSummary {
                class,
                real_points: real.len(),
                synthetic_points: synth.len(),
                real_nn_distance: real_nn,
                combined_nn_distance: mean_nearest_neighbor_distance(&coords)?,
                explained_variance: [
                    pca.explained_variance_ratio[0],
                    pca.explained_variance_ratio[1],
                ],
            });
        }
        Ok(out)
    };
    run().map_err(|e: Error| e.in_stage("pca-export"))
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentSummary {
    pub rows: Vec<MetricsRow>,
    pub test_digest: String,
    pub vae_histories: Vec<Vec<LossBreakdown>>,
    pub pca: Vec<PcaSummary>,
}

fn test_digest(cfg: &RunConfig) -> Result<String> {
    DatasetManifest::load(&cfg.data_root.join(MANIFEST_FILE))?.digest(|r| r.split == Split::Test)
}

/// Split, VAE training and generation, then one classifier per data
/// configuration, the comparison report and the PCA export.
pub fn run_experiment(cfg: &RunConfig) -> Result<ExperimentSummary> {
    cfg.validate()?;
    cfg.save_resolved()?;
    split(cfg)?;
    let digest = test_digest(cfg).map_err(|e| e.in_stage("split"))?;
    write_text(&cfg.out_dir.join(TEST_DIGEST_FILE), &format!("{digest}\n"))?;

    let vae_histories = if cfg.synthetic_per_class > 0 {
        let h = train_vaes(cfg)?;
        generate(cfg)?;
        h
    } else {
        Vec::new()
    };

    let mut names = Vec::new();
    for (name, with_synthetic, classical) in CONFIGURATIONS {
        let now = test_digest(cfg).map_err(|e| e.in_stage("train-clf"))?;
        if now != digest {
            return Err(
                Error::Data("test split changed between configurations".into())
                    .in_stage("train-clf"),
            );
        }
        train_clf(cfg, name, with_synthetic, classical)?;
        names.push(name);
    }
    let rows = evaluate(cfg, &names)?;
    let pca = if cfg.synthetic_per_class > 0 {
        pca_export(cfg)?
    } else {
        Vec::new()
    };
    Ok(ExperimentSummary {
        rows,
        test_digest: digest,
        vae_histories,
        pca,
    })
}

/// Hex SHA-256 of every file under `dir`, keyed by relative path.
pub fn tree_digests(dir: &Path) -> Result<BTreeMap<String, String>> {
    use sha2::{Digest, Sha256};
    let mut out = BTreeMap::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for entry in std::fs::read_dir(&d).map_err(|e| Error::io(&d, e))? {
            let path = entry.map_err(|e| Error::io(&d, e))?.path();
            if path.is_dir() {
                stack.push(path);
            } else {
                let bytes = std::fs::read(&path).map_err(|e| Error::io(&path, e))?;
                let rel = path
                    .strip_prefix(dir)
                    .unwrap_or(&path)
                    .to_string_lossy()
                    .into_owned();
                let hex = Sha256::digest(&bytes)
                    .iter()
                    .map(|b| format!("{b:02x}"))
                    .collect();
                out.insert(rel, hex);
            }
        }
    }
    Ok(out)
}

/// Batch-major tensor of flattened pixels, for callers holding raw images.
pub fn pixel_matrix(images: &[ImageBuffer]) -> Result<Tensor> {
    images_to_batch(&images.iter().collect::<Vec<_>>())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn profiles_resolve_reference_values() {
        let full = RunConfig::for_profile(Profile::Paper);
        assert_eq!(
            (full.vae_latent_dim, full.vae_epochs, full.vae_lr),
            (256, 1000, 1e-4)
        );
        let desk = RunConfig::for_profile(Profile::Desk);
        assert_eq!(
            (desk.vae_latent_dim, desk.vae_epochs, desk.clf_epochs),
            (32, 300, 150)
        );
        assert_eq!(
            (desk.seed, desk.clf_batch_size, desk.synthetic_per_class),
            (42, 24, 300)
        );
    }

    #[test]
    fn precedence_is_cli_then_file_then_profile() {
        let file: Map<String, Value> =
            serde_json::from_str(r#"{"profile": "paper", "seed": 7, "vae_epochs": 5}"#).unwrap();
        let cli: Map<String, Value> = serde_json::from_str(r#"{"seed": 9}"#).unwrap();
        let c = RunConfig::resolve(Some(&file), &cli).unwrap();
        assert_eq!(
            (c.profile, c.seed, c.vae_epochs, c.vae_latent_dim),
            (Profile::Paper, 9, 5, 256)
        );
        let bad: Map<String, Value> = serde_json::from_str(r#"{"sed": 1}"#).unwrap();
        assert!(RunConfig::resolve(Some(&bad), &Map::new()).is_err());
    }

    #[test]
    fn resolved_config_round_trips() {
        let dir = tempfile::tempdir().unwrap();
        let mut c = RunConfig::for_profile(Profile::Desk);
        c.out_dir = dir.path().to_path_buf();
        c.classical_ops = vec![ClassicalOp::FlipH];
        let path = c.save_resolved().unwrap();
        assert_eq!(RunConfig::load(&path).unwrap(), c);
    }

    #[test]
    fn parallel_map_keeps_order_and_errors() {
        let items: Vec<usize> = (0..7).collect();
        let out = parallel_map(&items, 3, |&i| Ok(i * i)).unwrap();
        assert_eq!(out, vec![0, 1, 4, 9, 16, 25, 36]);
        let err = parallel_map(&items, 3, |&i| {
            if i == 4 {
                Err(Error::Data("boom".into()))
            } else {
                Ok(i)
            }
        });
        assert!(err.is_err());
    }
}
