//! Dataset generation: procedural classes, train/test splits, ground truth,
//! and the JSON manifest binding it all together.

use std::fs;
use std::path::{Path, PathBuf};

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::carve::{carve, DefectExtra, DefectKind, DefectSpec};
use super::shapes::{pose_jitter, sample_surface, subdivide, BaseShape};
use crate::error::{Error, Result};
use crate::geom::{estimate_normals_auto, PointCloud, Vec3};
use crate::io::{write_ply, PlyExtras, PlyFormat};
use crate::seed;

pub const MANIFEST_VERSION: &str = "1";
pub const TRAIN_PER_CLASS: usize = 4;
pub const TEST_RANGE: (usize, usize) = (28, 40);
pub const POINTS_RANGE: (usize, usize) = (8_000, 30_000);

/// Dataset build configuration.
#[derive(Debug, Clone)]
pub struct SynthConfig {
    pub classes: Vec<ClassSpec>,
    pub test_per_class: usize,
    pub points_per_cloud: usize,
    /// Multiplies the drawn defect magnitudes (1 = subtle, larger = easier).
    pub defect_scale: f64,
    /// Carve 2 defects per anomalous sample instead of 1.
    pub multi_defect: bool,
    pub subdivide_target: usize,
    pub format: PlyFormat,
    pub jobs: usize,
}

#[derive(Debug, Clone)]
pub struct ClassSpec {
    pub name: String,
    pub source: ClassSource,
}

#[derive(Debug, Clone)]
pub enum ClassSource {
    Shape(BaseShape),
    MeshFile(PathBuf),
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            classes: Self::builtin_classes(4),
            test_per_class: 30,
            points_per_cloud: 10_000,
            defect_scale: 1.0,
            multi_defect: false,
            subdivide_target: 2_500,
            format: PlyFormat::BinaryLittleEndian,
            jobs: 1,
        }
    }
}

impl SynthConfig {
    /// First `count` built-in shapes as classes, cycling with a numeric
    /// suffix past six.
    pub fn builtin_classes(count: usize) -> Vec<ClassSpec> {
        (0..count)
            .map(|i| {
                let shape = BaseShape::ALL[i % BaseShape::ALL.len()];
                let name = if i < BaseShape::ALL.len() {
                    shape.name().to_string()
                } else {
                    format!("{}{}", shape.name(), i / BaseShape::ALL.len() + 1)
                };
                ClassSpec {
                    name,
                    source: ClassSource::Shape(shape),
                }
            })
            .collect()
    }

    pub fn validate(&self) -> Result<()> {
        if self.classes.is_empty() {
            return Err(Error::InvalidConfig("no classes configured".into()));
        }
        if !(TEST_RANGE.0..=TEST_RANGE.1).contains(&self.test_per_class) {
            return Err(Error::InvalidConfig(format!(
                "test_per_class {} outside [{}, {}]",
                self.test_per_class, TEST_RANGE.0, TEST_RANGE.1
            )));
        }
        if !(POINTS_RANGE.0..=POINTS_RANGE.1).contains(&self.points_per_cloud) {
            return Err(Error::InvalidConfig(format!(
                "points_per_cloud {} outside [{}, {}]",
                self.points_per_cloud, POINTS_RANGE.0, POINTS_RANGE.1
            )));
        }
        if self.defect_scale <= 0.0 {
            return Err(Error::InvalidConfig("defect_scale must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct ClassRecord {
    pub name: String,
    pub source: String,
    pub train_count: usize,
    pub test_count: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct SampleRecord {
    pub class: String,
    /// Path relative to the manifest directory.
    pub path: String,
    pub split: String,
    pub is_anomalous: bool,
    pub defects: Vec<String>,
    pub point_count: usize,
}

/// Inventory of a generated dataset, stored as `manifest.json` next to the
/// class directories.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct DatasetManifest {
    pub version: String,
    pub seed: u64,
    pub generator: String,
    pub classes: Vec<ClassRecord>,
    pub samples: Vec<SampleRecord>,
}

impl DatasetManifest {
    pub fn save(&self, path: &Path) -> Result<()> {
        let mut text = serde_json::to_string_pretty(self)?;
        text.push('\n');
        fs::write(path, text)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path)?;
        let manifest: DatasetManifest = serde_json::from_str(&text)?;
        Ok(manifest)
    }

    /// Structural checks against the dataset rooted at `root`.
    pub fn validate(&self, root: &Path) -> Result<()> {
        if self.version != MANIFEST_VERSION {
            return Err(Error::ManifestMismatch(format!(
                "version {} (expected {MANIFEST_VERSION})",
                self.version
            )));
        }
        for class in &self.classes {
            let train = self.class_samples(&class.name, "train").count();
            let test = self.class_samples(&class.name, "test").count();
            if train != TRAIN_PER_CLASS {
                return Err(Error::ManifestMismatch(format!(
                    "class {}: {train} train samples",
                    class.name
                )));
            }
            if !(TEST_RANGE.0..=TEST_RANGE.1).contains(&test) {
                return Err(Error::ManifestMismatch(format!(
                    "class {}: {test} test samples",
                    class.name
                )));
            }
        }
        for sample in &self.samples {
            if !root.join(&sample.path).is_file() {
                return Err(Error::ManifestMismatch(format!(
                    "missing sample file {}",
                    sample.path
                )));
            }
        }
        Ok(())
    }

    pub fn class_samples<'a>(
        &'a self,
        class: &'a str,
        split: &'a str,
    ) -> impl Iterator<Item = &'a SampleRecord> {
        self.samples
            .iter()
            .filter(move |s| s.class == class && s.split == split)
    }
}

/// What one test slot should contain.
#[derive(Debug, Clone, Copy, PartialEq)]
enum TestPlan {
    Normal,
    Defect(DefectKind),
}

fn test_plan(test_per_class: usize) -> Vec<TestPlan> {
    let normals = (test_per_class + 4) / 5; // ~20% stay normal
    let mut plan = vec![TestPlan::Normal; normals];
    for i in 0..test_per_class - normals {
        plan.push(TestPlan::Defect(DefectKind::ALL[i % DefectKind::ALL.len()]));
    }
    plan
}

/// Generates the dataset under `out_dir` (atomically: the tree is built in a
/// temporary sibling directory and renamed into place) and returns the
/// manifest.
pub fn generate_dataset(config: &SynthConfig, out_dir: &Path, seed_value: u64) -> Result<DatasetManifest> {
    config.validate()?;
    let parent = out_dir.parent().unwrap_or_else(|| Path::new("."));
    if !parent.is_dir() {
        return Err(Error::InvalidConfig(format!(
            "parent directory {} does not exist",
            parent.display()
        )));
    }
    let stem = out_dir
        .file_name()
        .and_then(|s| s.to_str())
        .ok_or_else(|| Error::InvalidConfig("bad output directory name".into()))?;
    let tmp = parent.join(format!(".{stem}.tmp-{}", seed::derive(seed_value, "synth-tmp", &[])));
    if tmp.exists() {
        fs::remove_dir_all(&tmp)?;
    }
    fs::create_dir_all(&tmp)?;

    let result = build_dataset(config, &tmp, seed_value);
    match result {
        Ok(manifest) => {
            if out_dir.exists() {
                fs::remove_dir_all(out_dir)?;
            }
            fs::rename(&tmp, out_dir)?;
            Ok(manifest)
        }
        Err(e) => {
            let _ = fs::remove_dir_all(&tmp);
            Err(e)
        }
    }
}

fn build_dataset(config: &SynthConfig, root: &Path, seed_value: u64) -> Result<DatasetManifest> {
    let mut classes = Vec::new();
    let mut samples = Vec::new();
    let plan = test_plan(config.test_per_class);

    // Assemble per-sample jobs so generation can fan out across threads;
    // outputs land in slot order, so the manifest is identical for any job
    // count.
    struct Job {
        class_idx: usize,
        sample_idx: usize,
        split: &'static str,
        plan: TestPlan,
        rel_path: String,
    }

    let mut jobs = Vec::new();
    for (ci, class) in config.classes.iter().enumerate() {
        fs::create_dir_all(root.join(&class.name).join("train"))?;
        fs::create_dir_all(root.join(&class.name).join("test"))?;
        for ti in 0..TRAIN_PER_CLASS {
            jobs.push(Job {
                class_idx: ci,
                sample_idx: ti,
                split: "train",
                plan: TestPlan::Normal,
                rel_path: format!("{}/train/train_{ti:03}.ply", class.name),
            });
        }
        for (si, &p) in plan.iter().enumerate() {
            jobs.push(Job {
                class_idx: ci,
                sample_idx: TRAIN_PER_CLASS + si,
                split: "test",
                plan: p,
                rel_path: format!("{}/test/test_{si:03}.ply", class.name),
            });
        }
        classes.push(ClassRecord {
            name: class.name.clone(),
            source: match &class.source {
                ClassSource::Shape(s) => s.name().to_string(),
                ClassSource::MeshFile(p) => p.display().to_string(),
            },
            train_count: TRAIN_PER_CLASS,
            test_count: config.test_per_class,
        });
    }

    let base_meshes: Vec<_> = config
        .classes
        .iter()
        .map(|c| -> Result<_> {
            let mesh = match &c.source {
                ClassSource::Shape(s) => s.mesh(),
                ClassSource::MeshFile(p) => crate::io::read_mesh(p)?,
            };
            subdivide(&mesh, config.subdivide_target)
        })
        .collect::<Result<_>>()?;

    let jobs_n = config.jobs.max(1);
    let mut records: Vec<Option<SampleRecord>> = (0..jobs.len()).map(|_| None).collect();
    let chunks: Vec<Vec<usize>> = (0..jobs_n)
        .map(|w| (w..jobs.len()).step_by(jobs_n).collect())
        .collect();
    std::thread::scope(|scope| -> Result<()> {
        let mut handles = Vec::new();
        for chunk in &chunks {
            let jobs = &jobs;
            let base_meshes = &base_meshes;
            let classes_cfg = &config.classes;
            handles.push(scope.spawn(move || -> Result<Vec<(usize, SampleRecord)>> {
                let mut out = Vec::new();
                for &ji in chunk {
                    let job = &jobs[ji];
                    let record = generate_sample(
                        config,
                        &base_meshes[job.class_idx],
                        &classes_cfg[job.class_idx].name,
                        job.class_idx,
                        job.sample_idx,
                        job.split,
                        job.plan,
                        &job.rel_path,
                        root,
                        seed_value,
                    )?;
                    out.push((ji, record));
                }
                Ok(out)
            }));
        }
        for handle in handles {
            for (ji, record) in handle.join().expect("sample worker panicked")? {
                records[ji] = Some(record);
            }
        }
        Ok(())
    })?;
    samples.extend(records.into_iter().map(|r| r.expect("job not completed")));

    let manifest = DatasetManifest {
        version: MANIFEST_VERSION.to_string(),
        seed: seed_value,
        generator: format!("anomaly3d {}", env!("CARGO_PKG_VERSION")),
        classes,
        samples,
    };
    manifest.save(&root.join("manifest.json"))?;
    manifest.validate(root)?;
    Ok(manifest)
}

#[allow(clippy::too_many_arguments)]
fn generate_sample(
    config: &SynthConfig,
    base_mesh: &crate::geom::Mesh,
    class_name: &str,
    class_idx: usize,
    sample_idx: usize,
    split: &'static str,
    plan: TestPlan,
    rel_path: &str,
    root: &Path,
    seed_value: u64,
) -> Result<SampleRecord> {
    let ids = [class_idx as u64, sample_idx as u64];
    let mut rng = seed::rng(seed_value, "sample", &ids);
    let jittered = pose_jitter(base_mesh, (0.9, 1.1), &mut rng);
    let cloud = sample_surface(&jittered, config.points_per_cloud, &mut rng)?;

    let (mut cloud, defects) = match plan {
        TestPlan::Normal => {
            let mut c = cloud;
            c.gt_label = Some(vec![0; c.len()]);
            c.region_id = Some(vec![0; c.len()]);
            (c, Vec::new())
        }
        TestPlan::Defect(kind) => {
            let (with_normals, _) = estimate_normals_auto(&cloud)?;
            let n_defects = if config.multi_defect { 2 } else { 1 };
            apply_defects(&with_normals, kind, n_defects, config, &mut rng, seed_value, &ids)?
        }
    };
    cloud.normals = None;
    let record = SampleRecord {
        class: class_name.to_string(),
        path: rel_path.to_string(),
        split: split.to_string(),
        is_anomalous: !defects.is_empty(),
        defects,
        point_count: cloud.len(),
    };
    write_ply(&root.join(rel_path), &cloud, &PlyExtras::none(), config.format)?;
    Ok(record)
}

/// Draws and carves `n_defects` defects (the first of the requested kind,
/// extras cycling through the families), merging ground truth regions.
fn apply_defects(
    cloud: &PointCloud,
    first_kind: DefectKind,
    n_defects: usize,
    config: &SynthConfig,
    rng: &mut rand_chacha::ChaCha8Rng,
    seed_value: u64,
    ids: &[u64; 2],
) -> Result<(PointCloud, Vec<String>)> {
    let mut current = cloud.clone();
    let mut gt_acc: Vec<u8> = vec![0; cloud.len()];
    let mut region_acc: Vec<i32> = vec![0; cloud.len()];
    let mut names = Vec::new();
    let all = DefectKind::ALL;
    let start = all.iter().position(|&k| k == first_kind).unwrap();
    for d in 0..n_defects {
        let kind = all[(start + d) % all.len()];
        let spec = draw_spec(&current, kind, config.defect_scale, rng);
        let region = (d + 1) as i32;
        let (carved, gt) = carve(&current, &spec, seed::derive(seed_value, "carve", &[ids[0], ids[1], d as u64]), region)?;
        // Removal defects shrink the cloud; remap the accumulators through
        // the surviving indices before merging the new region.
        if carved.len() != current.len() {
            let survivors = surviving_indices(&current, &carved);
            gt_acc = survivors.iter().map(|&i| gt_acc[i]).collect();
            region_acc = survivors.iter().map(|&i| region_acc[i]).collect();
        }
        for i in 0..carved.len() {
            if gt.gt_label[i] == 1 && gt_acc[i] == 0 {
                gt_acc[i] = 1;
                region_acc[i] = region;
            }
        }
        names.push(kind.name().to_string());
        current = carved;
        // Re-estimate normals when a later defect still needs them.
        if d + 1 < n_defects {
            current.normals = None;
            current = estimate_normals_auto(&current)?.0;
        }
    }
    current.gt_label = Some(gt_acc);
    current.region_id = Some(region_acc);
    current.normals = None;
    Ok((current, names))
}

/// Maps each point of `after` back to its index in `before`. Removal
/// defects preserve point order, so a forward sweep suffices.
fn surviving_indices(before: &PointCloud, after: &PointCloud) -> Vec<usize> {
    let mut out = Vec::with_capacity(after.len());
    let mut cursor = 0usize;
    for p in &after.points {
        while cursor < before.len() && before.points[cursor] != *p {
            cursor += 1;
        }
        debug_assert!(cursor < before.len(), "point order changed under removal");
        out.push(cursor);
        cursor += 1;
    }
    out
}

fn draw_spec(
    cloud: &PointCloud,
    kind: DefectKind,
    scale: f64,
    rng: &mut rand_chacha::ChaCha8Rng,
) -> DefectSpec {
    let d = cloud.diameter();
    let seed_index = rng.gen_range(0..cloud.len());
    let s = cloud.points[seed_index];
    let centroid = cloud.centroid();
    let radial = {
        let v: Vec3 = s - centroid;
        if v.norm() > 1e-9 {
            v.normalize()
        } else {
            Vec3::z()
        }
    };
    match kind {
        DefectKind::Bulge | DefectKind::Concavity => DefectSpec {
            kind,
            seed_index,
            magnitude: scale * rng.gen_range(0.06..0.12) * d,
            sigma: rng.gen_range(0.05..0.09) * d,
            extra: DefectExtra::None,
        },
        DefectKind::Hole => DefectSpec {
            kind,
            seed_index,
            magnitude: rng.gen_range(0.08..0.12) * d,
            sigma: 0.0,
            extra: DefectExtra::None,
        },
        DefectKind::Break => DefectSpec {
            kind,
            seed_index,
            magnitude: rng.gen_range(0.04..0.08) * d,
            sigma: rng.gen_range(0.02..0.04) * d,
            extra: DefectExtra::Break {
                plane_normal: [radial.x, radial.y, radial.z],
            },
        },
        DefectKind::Bending => {
            let tangent = arbitrary_tangent(radial);
            let sigma = rng.gen_range(0.05..0.09) * d;
            DefectSpec {
                kind,
                seed_index,
                magnitude: 2.0 * sigma,
                sigma,
                extra: DefectExtra::Bend {
                    hinge_normal: [radial.x, radial.y, radial.z],
                    axis: [tangent.x, tangent.y, tangent.z],
                    angle: scale * rng.gen_range(0.25..0.5),
                },
            }
        }
        DefectKind::Crack => {
            let width = rng.gen_range(0.015..0.03) * d;
            DefectSpec {
                kind,
                seed_index,
                magnitude: width,
                sigma: width,
                extra: DefectExtra::Crack {
                    path_hops: 16,
                    width,
                },
            }
        }
    }
}

fn arbitrary_tangent(v: Vec3) -> Vec3 {
    let trial = if v.x.abs() < 0.9 { Vec3::x() } else { Vec3::y() };
    (trial - v * trial.dot(&v)).normalize()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny_config() -> SynthConfig {
        SynthConfig {
            classes: SynthConfig::builtin_classes(2),
            test_per_class: 28,
            points_per_cloud: 8_000,
            defect_scale: 1.5,
            ..SynthConfig::default()
        }
    }

    #[test]
    fn test_plan_covers_all_kinds() {
        let plan = test_plan(30);
        assert_eq!(plan.len(), 30);
        assert_eq!(plan.iter().filter(|p| **p == TestPlan::Normal).count(), 6);
        for kind in DefectKind::ALL {
            assert!(plan.contains(&TestPlan::Defect(kind)), "{kind:?} missing");
        }
    }

    #[test]
    fn generate_is_deterministic_and_valid() {
        let dir = tempfile::tempdir().unwrap();
        let config = tiny_config();
        let out_a = dir.path().join("a");
        let out_b = dir.path().join("b");
        let ma = generate_dataset(&config, &out_a, 7).unwrap();
        let mb = generate_dataset(&config, &out_b, 7).unwrap();
        assert_eq!(ma.classes, mb.classes);
        assert_eq!(ma.samples, mb.samples);
        ma.validate(&out_a).unwrap();
        // Byte-identical trees.
        for sample in &ma.samples {
            let ba = std::fs::read(out_a.join(&sample.path)).unwrap();
            let bb = std::fs::read(out_b.join(&sample.path)).unwrap();
            assert_eq!(ba, bb, "{}", sample.path);
        }
        // Defected samples carry in-range fractions; normals carry zeros.
        for sample in &ma.samples {
            let (cloud, _) = crate::io::read_ply(&out_a.join(&sample.path)).unwrap();
            cloud.validate().unwrap();
            let gt = cloud.gt_label.as_ref().unwrap();
            let frac =
                gt.iter().map(|&g| g as usize).sum::<usize>() as f64 / cloud.len() as f64;
            if sample.is_anomalous {
                assert!((0.01..=0.10).contains(&frac), "{}: {frac}", sample.path);
            } else {
                assert_eq!(frac, 0.0, "{}", sample.path);
            }
        }
    }

    #[test]
    fn parallel_generation_matches_serial() {
        let dir = tempfile::tempdir().unwrap();
        let mut config = tiny_config();
        config.classes = SynthConfig::builtin_classes(1);
        let serial = generate_dataset(&config, &dir.path().join("s"), 3).unwrap();
        config.jobs = 4;
        let parallel = generate_dataset(&config, &dir.path().join("p"), 3).unwrap();
        assert_eq!(serial.samples, parallel.samples);
        for sample in &serial.samples {
            let a = std::fs::read(dir.path().join("s").join(&sample.path)).unwrap();
            let b = std::fs::read(dir.path().join("p").join(&sample.path)).unwrap();
            assert_eq!(a, b);
        }
    }
}
