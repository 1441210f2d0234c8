//! Task streams for continual learning and the replay buffer.

mod buffer;
mod idx;
mod stream;

pub use buffer::{ReplayBuffer, ReplayPolicy};
pub use idx::{load_idx, parse_idx_images, parse_idx_labels};
pub use stream::{
    first_n_per_class, inverse_permutation, make_permuted_stream, make_rotated_stream, make_split_stream,
    make_synthetic_stream, rotate_image, BaseDataset, LabeledSet, StreamKind, SyntheticSpec, TaskStream,
    TaskTransform,
};

use crate::numkit::Tensor;

#[derive(Debug, Clone, PartialEq)]
pub struct Example {
    pub features: Vec<f64>,
    pub label: usize,
    /// 1-based task index.
    pub task_id: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TaskDataset {
    pub task_id: usize,
    pub train: Vec<Example>,
    pub test: Vec<Example>,
    /// `(original class, local class)` pairs.
    pub class_map: Vec<(usize, usize)>,
    pub num_classes: usize,
    pub transform: TaskTransform,
}

/// Stacks examples into a `(b, d)` batch and their labels.
pub fn stack_examples<'a, I>(examples: I) -> (Tensor, Vec<usize>)
where
    I: IntoIterator<Item = &'a Example>,
{
    let mut data = Vec::new();
    let mut labels = Vec::new();
    let mut dim = 0;
    for ex in examples {
        dim = ex.features.len();
        data.extend_from_slice(&ex.features);
        labels.push(ex.label);
    }
    let rows = labels.len();
    (
        Tensor::new(vec![rows, dim], data).expect("examples share one feature width"),
        labels,
    )
}
