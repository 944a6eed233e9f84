//! Single-headed evaluation and the task-by-task accuracy matrix.

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::data::{single_headed_eval_set, TaskSequence};
use crate::error::{Error, Result};
use crate::nn::{ClassMask, Classifier, Critic};

/// Anything that maps images to class predictions given the active classes.
pub trait Predictor {
    fn predict(&self, x: &Array2<f32>, active: &ClassMask) -> Vec<usize>;
}

impl Predictor for Critic<f32> {
    fn predict(&self, x: &Array2<f32>, active: &ClassMask) -> Vec<usize> {
        Critic::predict(self, x, active)
    }
}

impl Predictor for Classifier<f32> {
    fn predict(&self, x: &Array2<f32>, active: &ClassMask) -> Vec<usize> {
        self.critic.predict(x, active)
    }
}

impl<F: Fn(&Array2<f32>, &ClassMask) -> Vec<usize>> Predictor for F {
    fn predict(&self, x: &Array2<f32>, active: &ClassMask) -> Vec<usize> {
        self(x, active)
    }
}

/// Correct counts per task after training through some task.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AccuracyRow {
    pub correct: Vec<usize>,
    pub total: Vec<usize>,
}

impl AccuracyRow {
    pub fn task_accuracy(&self, j: usize) -> f64 {
        if self.total[j] == 0 { 0.0 } else { self.correct[j] as f64 / self.total[j] as f64 }
    }

    /// Example-weighted accuracy over every scored task.
    pub fn average(&self) -> f64 {
        let n: usize = self.total.iter().sum();
        if n == 0 { 0.0 } else { self.correct.iter().sum::<usize>() as f64 / n as f64 }
    }
}

/// Single-headed evaluation: argmax over every class seen through
/// `through_task`, no task identity.
pub fn evaluate(model: &dyn Predictor, seq: &TaskSequence, through_task: usize) -> Result<AccuracyRow> {
    let eval = single_headed_eval_set(seq, through_task)?;
    let mask = ClassMask::from_classes(seq.num_classes, seq.classes_through(through_task));
    let mut task_of = vec![usize::MAX; seq.num_classes];
    for (j, task) in seq.tasks.iter().enumerate() {
        for &c in &task.class_ids {
            task_of[c] = j;
        }
    }
    let mut correct = vec![0; through_task];
    let mut total = vec![0; through_task];
    let positions: Vec<usize> = (0..eval.len()).collect();
    for chunk in positions.chunks(1000) {
        let (x, labels) = eval.gather(chunk);
        for (pred, y) in model.predict(&x, &mask).into_iter().zip(labels) {
            let j = task_of[y];
            total[j] += 1;
            if pred == y {
                correct[j] += 1;
            }
        }
    }
    Ok(AccuracyRow { correct, total })
}

/// `grid[i][j]`: accuracy on task `j` after finishing task `i` (`j <= i`),
/// plus the example-weighted running average `avg[i]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AccuracyMatrix {
    pub tasks: usize,
    pub rows: Vec<AccuracyRow>,
}

impl AccuracyMatrix {
    pub fn new(tasks: usize) -> Self {
        Self { tasks, rows: Vec::new() }
    }

    pub fn push(&mut self, row: AccuracyRow) -> Result<()> {
        let i = self.rows.len();
        if i >= self.tasks || row.total.len() != i + 1 || row.correct.len() != i + 1 {
            return Err(Error::contract(format!("row {i} must score exactly {} tasks", i + 1)));
        }
        self.rows.push(row);
        Ok(())
    }

    pub fn get(&self, i: usize, j: usize) -> Option<f64> {
        self.rows.get(i).filter(|_| j <= i).map(|r| r.task_accuracy(j))
    }

    pub fn grid(&self) -> Vec<Vec<Option<f64>>> {
        (0..self.rows.len()).map(|i| (0..self.tasks).map(|j| self.get(i, j)).collect()).collect()
    }

    pub fn avg(&self) -> Vec<f64> {
        self.rows.iter().map(AccuracyRow::average).collect()
    }

    /// Average after the last completed task.
    pub fn final_average(&self) -> Option<f64> {
        self.rows.last().map(AccuracyRow::average)
    }

    /// Accuracy on the most recent task after the last completed task.
    pub fn final_task_accuracy(&self) -> Option<f64> {
        self.rows.last().map(|r| r.task_accuracy(r.total.len() - 1))
    }

    /// `avg[i]` rebuilt from the grid entries and per-task eval sizes.
    pub fn recompute_avg(&self) -> Vec<f64> {
        self.rows
            .iter()
            .enumerate()
            .map(|(i, r)| {
                let n: usize = r.total.iter().sum();
                (0..=i).map(|j| self.get(i, j).expect("defined") * r.total[j] as f64).sum::<f64>() / n.max(1) as f64
            })
            .collect()
    }
}

/// One evaluation of the running average during training.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CurvePoint {
    pub task: usize,
    pub step: usize,
    pub average: f64,
}

/// Maximum running average inside each task's window.
pub fn max_average_per_task(curve: &[CurvePoint], tasks: usize) -> Vec<Option<f64>> {
    (1..=tasks)
        .map(|t| curve.iter().filter(|p| p.task == t).map(|p| p.average).fold(None, |m: Option<f64>, v| Some(m.map_or(v, |m| m.max(v)))))
        .collect()
}
