use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::{DataBundle, DataError, LabeledSet};

/// Upper bound on the total number of generated examples.
pub const MAX_STREAM_LEN: usize = 1 << 20;

const NOISE_STREAM: u64 = 0x6c61_6265_6c5f_6e7a;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Family {
    GaussianBlobs,
    ConcentricRings,
    TwoMoonsGrid,
}

impl std::str::FromStr for Family {
    type Err = DataError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "gaussian-blobs" => Ok(Family::GaussianBlobs),
            "concentric-rings" => Ok(Family::ConcentricRings),
            "two-moons-grid" => Ok(Family::TwoMoonsGrid),
            other => Err(DataError::InvalidSpec(format!("unknown family `{other}`"))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitSizes {
    pub teacher_train: usize,
    pub teacher_val: usize,
    pub student_train: usize,
    pub student_val: usize,
    pub unlabeled: usize,
    pub test: usize,
}

impl SplitSizes {
    pub fn uniform(n: usize) -> Self {
        SplitSizes {
            teacher_train: n,
            teacher_val: n,
            student_train: n,
            student_val: n,
            unlabeled: n,
            test: n,
        }
    }

    pub fn total(&self) -> usize {
        self.teacher_train
            + self.teacher_val
            + self.student_train
            + self.student_val
            + self.unlabeled
            + self.test
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TaskSpec {
    pub family: Family,
    pub num_classes: usize,
    pub feature_dim: usize,
    pub sizes: SplitSizes,
    /// Fraction of train/val labels replaced by a different random class.
    /// The test split is always clean.
    pub label_noise: f64,
    /// Distance scale between classes.
    pub separation: f64,
    /// Offset added to every unlabeled input (0 = same distribution).
    pub unlabeled_shift: f64,
    pub seed: u64,
}

impl TaskSpec {
    pub fn blobs(num_classes: usize, feature_dim: usize, sizes: SplitSizes, seed: u64) -> Self {
        TaskSpec {
            family: Family::GaussianBlobs,
            num_classes,
            feature_dim,
            sizes,
            label_noise: 0.0,
            separation: 3.0,
            unlabeled_shift: 0.0,
            seed,
        }
    }

    pub fn validate(&self) -> Result<(), DataError> {
        let s = &self.sizes;
        if [s.teacher_train, s.teacher_val, s.student_train, s.student_val, s.test].contains(&0) {
            return Err(DataError::InvalidSpec("labeled split sizes must be positive".into()));
        }
        if self.num_classes < 2 || self.feature_dim == 0 {
            return Err(DataError::InvalidSpec("need K >= 2 and feature_dim >= 1".into()));
        }
        if !(0.0..0.5).contains(&self.label_noise) {
            return Err(DataError::InvalidSpec("label noise must lie in [0, 0.5)".into()));
        }
        if !self.separation.is_finite() || self.separation <= 0.0 || !self.unlabeled_shift.is_finite() {
            return Err(DataError::InvalidSpec("separation must be positive and finite".into()));
        }
        if matches!(self.family, Family::ConcentricRings | Family::TwoMoonsGrid) && self.feature_dim < 2 {
            return Err(DataError::InvalidSpec(
                "ring and moon families need feature_dim >= 2".into(),
            ));
        }
        Ok(())
    }
}

fn sample(spec: &TaskSpec, label: usize, rng: &mut ChaCha8Rng, out: &mut Vec<f64>) {
    let d = spec.feature_dim;
    let k = spec.num_classes as f64;
    let unit = Normal::new(0.0, 1.0).expect("unit normal");
    let start = out.len();
    match spec.family {
        Family::GaussianBlobs => {
            let mut center = vec![0.0; d];
            if d == 1 {
                center[0] = spec.separation * label as f64;
            } else {
                let theta = 2.0 * PI * label as f64 / k;
                center[0] = spec.separation * theta.cos();
                center[1] = spec.separation * theta.sin();
            }
            out.extend(center.iter().map(|c| c + unit.sample(rng)));
        }
        Family::ConcentricRings => {
            let radius = spec.separation * (label as f64 + 1.0);
            let phi = rng.random_range(0.0..2.0 * PI);
            out.push(radius * phi.cos() + 0.25 * unit.sample(rng));
            out.push(radius * phi.sin() + 0.25 * unit.sample(rng));
            out.extend((2..d).map(|_| unit.sample(rng)));
        }
        Family::TwoMoonsGrid => {
            // moons come in interleaved pairs; pair p sits at grid column p
            let theta = rng.random_range(0.0..PI);
            let pair = (label / 2) as f64;
            let (x, y) = if label.is_multiple_of(2) {
                (theta.cos(), theta.sin())
            } else {
                (1.0 - theta.cos(), 0.5 - theta.sin())
            };
            let scale = spec.separation / 3.0;
            out.push(scale * (x + 3.5 * pair) + 0.1 * unit.sample(rng));
            out.push(scale * y + 0.1 * unit.sample(rng));
            out.extend((2..d).map(|_| 0.1 * unit.sample(rng)));
        }
    }
    debug_assert_eq!(out.len() - start, d);
}

/// Draws a deterministic sample stream and cuts it into consecutive
/// regions: teacher train, teacher val, student train, student val, test,
/// and finally the unlabeled pool. Labels cycle through the classes, so a
/// region whose start and length are multiples of K is exactly balanced.
pub fn generate(spec: &TaskSpec) -> Result<DataBundle, DataError> {
    spec.validate()?;
    let total = spec.sizes.total();
    if total > MAX_STREAM_LEN {
        return Err(DataError::Capacity {
            requested: total,
            capacity: MAX_STREAM_LEN,
        });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut noise_rng = ChaCha8Rng::seed_from_u64(spec.seed ^ NOISE_STREAM);
    let mut cursor = 0usize;

    let mut labeled = |n: usize, noisy: bool, cursor: &mut usize| -> LabeledSet {
        let mut set = LabeledSet {
            ids: Vec::with_capacity(n),
            dim: spec.feature_dim,
            features: Vec::with_capacity(n * spec.feature_dim),
            labels: Vec::with_capacity(n),
        };
        for _ in 0..n {
            let id = *cursor;
            *cursor += 1;
            let label = id % spec.num_classes;
            sample(spec, label, &mut rng, &mut set.features);
            // one draw per example keeps the noise stream aligned across rates
            let flip: f64 = noise_rng.random();
            let other: usize = noise_rng.random_range(1..spec.num_classes);
            let observed = if noisy && flip < spec.label_noise {
                (label + other) % spec.num_classes
            } else {
                label
            };
            set.ids.push(id);
            set.labels.push(observed);
        }
        set
    };

    let s = spec.sizes;
    let teacher_train = labeled(s.teacher_train, true, &mut cursor);
    let teacher_val = labeled(s.teacher_val, true, &mut cursor);
    let student_train = labeled(s.student_train, true, &mut cursor);
    let student_val = labeled(s.student_val, true, &mut cursor);
    let test = labeled(s.test, false, &mut cursor);
    let mut unlabeled = labeled(s.unlabeled, false, &mut cursor).unlabeled();
    for v in &mut unlabeled.features {
        *v += spec.unlabeled_shift;
    }

    let bundle = DataBundle {
        teacher_train,
        teacher_val,
        student_train,
        student_val,
        unlabeled,
        test,
        num_classes: spec.num_classes,
        feature_dim: spec.feature_dim,
    };
    bundle.validate()?;
    Ok(bundle)
}
