use std::f64::consts::PI;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::{Example, TaskDataset};
use crate::numkit::{Purpose, SeededRng, Tensor};
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct LabeledSet {
    pub features: Tensor,
    pub labels: Vec<usize>,
}

impl LabeledSet {
    pub fn new(features: Tensor, labels: Vec<usize>) -> Result<Self> {
        if features.rows() != labels.len() {
            return Err(Error::dim("labeled set", features.rows(), labels.len()));
        }
        Ok(Self { features, labels })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }
}

/// Source images before any task transform. `image_side` is the width of the
/// square images (28 for MNIST).
#[derive(Debug, Clone, PartialEq)]
pub struct BaseDataset {
    pub train: LabeledSet,
    pub test: LabeledSet,
    pub num_classes: usize,
    pub image_side: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StreamKind {
    Rotated,
    Permuted,
    Split,
    Synthetic,
}

#[derive(Debug, Clone, PartialEq)]
pub enum TaskTransform {
    None,
    RotationDeg(f64),
    /// `out[j] = in[perm[j]]`.
    Permutation(Vec<usize>),
}

#[derive(Debug, Clone, PartialEq)]
pub struct TaskStream {
    pub tasks: Vec<TaskDataset>,
    pub kind: StreamKind,
    pub requires_task_id: bool,
}

impl TaskStream {
    pub fn len(&self) -> usize {
        self.tasks.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tasks.is_empty()
    }

    /// Classifier width shared by every task.
    pub fn output_dim(&self) -> usize {
        self.tasks.iter().map(|t| t.num_classes).max().unwrap_or(0)
    }

    pub fn input_dim(&self) -> usize {
        self.tasks
            .first()
            .and_then(|t| t.train.first().or(t.test.first()))
            .map_or(0, |e| e.features.len())
    }

    /// Keeps the first `t` tasks.
    pub fn truncated(&self, t: usize) -> TaskStream {
        TaskStream {
            tasks: self.tasks[..t.min(self.tasks.len())].to_vec(),
            kind: self.kind,
            requires_task_id: self.requires_task_id,
        }
    }
}

/// Indices of the first examples of each class, `n / classes` per class with
/// the remainder going to the lowest classes. Original order is kept.
pub fn first_n_per_class(labels: &[usize], num_classes: usize, n: usize) -> Result<Vec<usize>> {
    let base = n / num_classes;
    let extra = n % num_classes;
    let quota: Vec<usize> = (0..num_classes).map(|c| base + usize::from(c < extra)).collect();
    let mut taken = vec![0; num_classes];
    let mut out = Vec::with_capacity(n);
    for (i, &y) in labels.iter().enumerate() {
        if y < num_classes && taken[y] < quota[y] {
            taken[y] += 1;
            out.push(i);
        }
    }
    if let Some(c) = (0..num_classes).find(|&c| taken[c] < quota[c]) {
        return Err(Error::input(format!(
            "class {c} has {} examples, {} requested",
            taken[c], quota[c]
        )));
    }
    Ok(out)
}

/// Rotates a square image counter-clockwise by `deg` about its center using
/// inverse-mapped bilinear interpolation; samples outside the image are 0.
pub fn rotate_image(img: &[f64], side: usize, deg: f64) -> Vec<f64> {
    if deg == 0.0 {
        return img.to_vec();
    }
    let theta = deg.to_radians();
    let (sin, cos) = theta.sin_cos();
    let c = (side as f64 - 1.0) / 2.0;
    let at = |y: isize, x: isize| -> f64 {
        if y < 0 || x < 0 || y >= side as isize || x >= side as isize {
            0.0
        } else {
            img[y as usize * side + x as usize]
        }
    };
    let mut out = vec![0.0; side * side];
    for y in 0..side {
        for x in 0..side {
            let (dx, dy) = (x as f64 - c, y as f64 - c);
            let sx = c + cos * dx + sin * dy;
            let sy = c - sin * dx + cos * dy;
            let (x0, y0) = (sx.floor(), sy.floor());
            let (fx, fy) = (sx - x0, sy - y0);
            let (x0, y0) = (x0 as isize, y0 as isize);
            out[y * side + x] = (1.0 - fy) * ((1.0 - fx) * at(y0, x0) + fx * at(y0, x0 + 1))
                + fy * ((1.0 - fx) * at(y0 + 1, x0) + fx * at(y0 + 1, x0 + 1));
        }
    }
    out
}

pub fn inverse_permutation(perm: &[usize]) -> Vec<usize> {
    let mut inv = vec![0; perm.len()];
    for (j, &p) in perm.iter().enumerate() {
        inv[p] = j;
    }
    inv
}

fn subset(set: &LabeledSet, idx: &[usize], task_id: usize, f: &dyn Fn(&[f64]) -> Vec<f64>) -> Vec<Example> {
    idx.iter()
        .map(|&i| Example {
            features: f(set.features.row(i)),
            label: set.labels[i],
            task_id,
        })
        .collect()
}

fn identity_map(k: usize) -> Vec<(usize, usize)> {
    (0..k).map(|c| (c, c)).collect()
}

/// Task `τ` shows the same base subset rotated by `(τ-1)·delta_deg`.
pub fn make_rotated_stream(
    base: &BaseDataset,
    tasks: usize,
    delta_deg: f64,
    per_task_train: usize,
    per_task_test: usize,
) -> Result<TaskStream> {
    if tasks == 0 {
        return Err(Error::input("a stream needs at least one task"));
    }
    let tr = first_n_per_class(&base.train.labels, base.num_classes, per_task_train)?;
    let te = first_n_per_class(&base.test.labels, base.num_classes, per_task_test)?;
    let side = base.image_side;
    let tasks = (1..=tasks)
        .map(|t| {
            let deg = (t - 1) as f64 * delta_deg;
            let rot = |img: &[f64]| rotate_image(img, side, deg);
            TaskDataset {
                task_id: t,
                train: subset(&base.train, &tr, t, &rot),
                test: subset(&base.test, &te, t, &rot),
                class_map: identity_map(base.num_classes),
                num_classes: base.num_classes,
                transform: TaskTransform::RotationDeg(deg),
            }
        })
        .collect();
    Ok(TaskStream {
        tasks,
        kind: StreamKind::Rotated,
        requires_task_id: false,
    })
}

/// Task 1 is unpermuted; later tasks use a seed-derived pixel permutation.
pub fn make_permuted_stream(
    base: &BaseDataset,
    tasks: usize,
    per_task_train: usize,
    per_task_test: usize,
    seed: u64,
) -> Result<TaskStream> {
    if tasks == 0 {
        return Err(Error::input("a stream needs at least one task"));
    }
    let tr = first_n_per_class(&base.train.labels, base.num_classes, per_task_train)?;
    let te = first_n_per_class(&base.test.labels, base.num_classes, per_task_test)?;
    let d = base.train.features.cols();
    let tasks = (1..=tasks)
        .map(|t| {
            let mut perm: Vec<usize> = (0..d).collect();
            if t > 1 {
                perm.shuffle(&mut SeededRng::for_purpose(seed, Purpose::Benchmark, t as u64));
            }
            let apply = |img: &[f64]| perm.iter().map(|&p| img[p]).collect::<Vec<_>>();
            TaskDataset {
                task_id: t,
                train: subset(&base.train, &tr, t, &apply),
                test: subset(&base.test, &te, t, &apply),
                class_map: identity_map(base.num_classes),
                num_classes: base.num_classes,
                transform: TaskTransform::Permutation(perm.clone()),
            }
        })
        .collect();
    Ok(TaskStream {
        tasks,
        kind: StreamKind::Permuted,
        requires_task_id: false,
    })
}

/// Disjoint class subsets drawn without replacement; labels become local.
pub fn make_split_stream(
    base: &BaseDataset,
    tasks: usize,
    classes_per_task: usize,
    per_class_train: usize,
    per_class_test: usize,
    seed: u64,
) -> Result<TaskStream> {
    if tasks == 0 || classes_per_task == 0 {
        return Err(Error::input("split streams need tasks >= 1 and classes_per_task >= 1"));
    }
    if tasks * classes_per_task > base.num_classes {
        return Err(Error::input(format!(
            "{tasks} tasks x {classes_per_task} classes exceeds the {} available",
            base.num_classes
        )));
    }
    let mut classes: Vec<usize> = (0..base.num_classes).collect();
    classes.shuffle(&mut SeededRng::for_purpose(seed, Purpose::Benchmark, 0));
    let pick = |set: &LabeledSet, cls: &[usize], per_class: usize| -> Result<Vec<usize>> {
        let mut count = vec![0; cls.len()];
        let mut out = Vec::new();
        for (i, y) in set.labels.iter().enumerate() {
            if let Some(pos) = cls.iter().position(|c| c == y) {
                if count[pos] < per_class {
                    count[pos] += 1;
                    out.push(i);
                }
            }
        }
        match count.iter().position(|&c| c < per_class) {
            Some(p) => Err(Error::input(format!("class {} has only {} examples", cls[p], count[p]))),
            None => Ok(out),
        }
    };
    let mut out = Vec::with_capacity(tasks);
    for t in 1..=tasks {
        let cls = &classes[(t - 1) * classes_per_task..t * classes_per_task];
        let relabel = |set: &LabeledSet, idx: Vec<usize>| -> Vec<Example> {
            idx.into_iter()
                .map(|i| Example {
                    features: set.features.row(i).to_vec(),
                    label: cls.iter().position(|&c| c == set.labels[i]).expect("picked class"),
                    task_id: t,
                })
                .collect()
        };
        out.push(TaskDataset {
            task_id: t,
            train: relabel(&base.train, pick(&base.train, cls, per_class_train)?),
            test: relabel(&base.test, pick(&base.test, cls, per_class_test)?),
            class_map: cls.iter().enumerate().map(|(local, &orig)| (orig, local)).collect(),
            num_classes: classes_per_task,
            transform: TaskTransform::None,
        });
    }
    Ok(TaskStream {
        tasks: out,
        kind: StreamKind::Split,
        requires_task_id: true,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SyntheticSpec {
    pub tasks: usize,
    pub classes: usize,
    pub dims: usize,
    pub train_per_class: usize,
    pub test_per_class: usize,
    pub cluster_spread: f64,
    pub drift_deg: f64,
}

/// Gaussian clusters around points on the unit circle of the first two
/// coordinates; task `τ` rotates that plane by `(τ-1)·drift_deg`.
pub fn make_synthetic_stream(spec: &SyntheticSpec, seed: u64) -> Result<TaskStream> {
    if spec.tasks == 0 || spec.classes < 2 || spec.dims < 2 {
        return Err(Error::input("synthetic streams need tasks >= 1, classes >= 2, dims >= 2"));
    }
    if spec.cluster_spread < 0.0 {
        return Err(Error::input("cluster_spread must be >= 0"));
    }
    let mut tasks = Vec::with_capacity(spec.tasks);
    for t in 1..=spec.tasks {
        let (sin, cos) = ((t - 1) as f64 * spec.drift_deg).to_radians().sin_cos();
        let mut rng = SeededRng::for_purpose(seed, Purpose::Benchmark, t as u64);
        let mut draw = |per_class: usize| -> Vec<Example> {
            let mut out = Vec::with_capacity(per_class * spec.classes);
            for _ in 0..per_class {
                for c in 0..spec.classes {
                    let angle = 2.0 * PI * c as f64 / spec.classes as f64;
                    let mut x: Vec<f64> = (0..spec.dims).map(|_| spec.cluster_spread * rng.normal()).collect();
                    x[0] += angle.cos();
                    x[1] += angle.sin();
                    let (a, b) = (x[0], x[1]);
                    x[0] = cos * a - sin * b;
                    x[1] = sin * a + cos * b;
                    out.push(Example {
                        features: x,
                        label: c,
                        task_id: t,
                    });
                }
            }
            out
        };
        let train = draw(spec.train_per_class);
        let test = draw(spec.test_per_class);
        tasks.push(TaskDataset {
            task_id: t,
            train,
            test,
            class_map: identity_map(spec.classes),
            num_classes: spec.classes,
            transform: TaskTransform::RotationDeg((t - 1) as f64 * spec.drift_deg),
        });
    }
    Ok(TaskStream {
        tasks,
        kind: StreamKind::Synthetic,
        requires_task_id: false,
    })
}
