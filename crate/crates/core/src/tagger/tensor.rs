use std::collections::BTreeMap;

use rand::Rng;
use serde::{Deserialize, Serialize};

/// Row-major parameter matrix. Bias vectors are single-row matrices.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Tensor {
    pub name: String,
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f64>,
}

impl Tensor {
    pub fn zeros(name: impl Into<String>, rows: usize, cols: usize) -> Self {
        Tensor {
            name: name.into(),
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn uniform(
        name: impl Into<String>,
        rows: usize,
        cols: usize,
        bound: f64,
        rng: &mut impl Rng,
    ) -> Self {
        let mut t = Tensor::zeros(name, rows, cols);
        for x in &mut t.data {
            *x = rng.random_range(-bound..=bound);
        }
        t
    }

    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn row_mut(&mut self, r: usize) -> &mut [f64] {
        &mut self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|x| x.is_finite())
    }
}

/// Gradient of one tensor. Embedding tables only receive gradient on the
/// rows a batch touched, so they are kept sparse.
#[derive(Clone, Debug, PartialEq)]
pub enum Grad {
    Dense(Vec<f64>),
    Rows {
        cols: usize,
        rows: BTreeMap<usize, Vec<f64>>,
    },
}

impl Grad {
    pub fn add_assign(&mut self, other: &Grad) {
        match (self, other) {
            (Grad::Dense(a), Grad::Dense(b)) => {
                for (x, y) in a.iter_mut().zip(b) {
                    *x += y;
                }
            }
            (Grad::Rows { rows: a, cols }, Grad::Rows { rows: b, .. }) => {
                for (r, values) in b {
                    let row = a.entry(*r).or_insert_with(|| vec![0.0; *cols]);
                    for (x, y) in row.iter_mut().zip(values) {
                        *x += y;
                    }
                }
            }
            _ => panic!("gradient layout mismatch"),
        }
    }

    pub fn scale(&mut self, factor: f64) {
        match self {
            Grad::Dense(a) => a.iter_mut().for_each(|x| *x *= factor),
            Grad::Rows { rows, .. } => rows
                .values_mut()
                .flat_map(|r| r.iter_mut())
                .for_each(|x| *x *= factor),
        }
    }

    /// Gradient row `r`, allocated on first use.
    pub fn row_mut(&mut self, r: usize) -> &mut [f64] {
        match self {
            Grad::Dense(_) => panic!("row access on a dense gradient"),
            Grad::Rows { cols, rows } => rows.entry(r).or_insert_with(|| vec![0.0; *cols]),
        }
    }

    pub fn dense_mut(&mut self) -> &mut [f64] {
        match self {
            Grad::Dense(a) => a,
            Grad::Rows { .. } => panic!("dense access on a sparse gradient"),
        }
    }

    /// Expand to the full layout of `like`.
    pub fn to_dense(&self, like: &Tensor) -> Vec<f64> {
        match self {
            Grad::Dense(a) => a.clone(),
            Grad::Rows { cols, rows } => {
                let mut out = vec![0.0; like.data.len()];
                for (r, values) in rows {
                    out[r * cols..(r + 1) * cols].copy_from_slice(values);
                }
                out
            }
        }
    }

    pub fn squared_norm(&self) -> f64 {
        match self {
            Grad::Dense(a) => a.iter().map(|x| x * x).sum(),
            Grad::Rows { rows, .. } => rows.values().flatten().map(|x| x * x).sum(),
        }
    }

    pub fn is_finite(&self) -> bool {
        match self {
            Grad::Dense(a) => a.iter().all(|x| x.is_finite()),
            Grad::Rows { rows, .. } => rows.values().flatten().all(|x| x.is_finite()),
        }
    }
}

/// Gradients for every tensor of a model, in parameter order.
#[derive(Clone, Debug, PartialEq)]
pub struct Gradients {
    pub tensors: Vec<Grad>,
}

impl Gradients {
    /// Zero gradients shaped after `params`; the first `sparse` tensors get
    /// row-sparse storage.
    pub fn zeros(params: &[Tensor], sparse: usize) -> Self {
        Gradients {
            tensors: params
                .iter()
                .enumerate()
                .map(|(i, t)| {
                    if i < sparse {
                        Grad::Rows {
                            cols: t.cols,
                            rows: BTreeMap::new(),
                        }
                    } else {
                        Grad::Dense(vec![0.0; t.data.len()])
                    }
                })
                .collect(),
        }
    }

    pub fn add_assign(&mut self, other: &Gradients) {
        for (a, b) in self.tensors.iter_mut().zip(&other.tensors) {
            a.add_assign(b);
        }
    }

    pub fn scale(&mut self, factor: f64) {
        self.tensors.iter_mut().for_each(|g| g.scale(factor));
    }

    pub fn is_finite(&self) -> bool {
        self.tensors.iter().all(Grad::is_finite)
    }

    pub fn norm(&self) -> f64 {
        self.tensors
            .iter()
            .map(Grad::squared_norm)
            .sum::<f64>()
            .sqrt()
    }
}

/// Stochastic gradient descent with classical momentum.
#[derive(Clone, Debug)]
pub struct Sgd {
    pub momentum: f64,
    velocity: Vec<Vec<f64>>,
}

impl Sgd {
    pub fn new(params: &[Tensor], momentum: f64) -> Self {
        Sgd {
            momentum,
            velocity: if momentum > 0.0 {
                params.iter().map(|t| vec![0.0; t.data.len()]).collect()
            } else {
                Vec::new()
            },
        }
    }

    /// `v ← μ·v + g; θ ← θ − lr·v`, skipping tensors marked frozen.
    pub fn step(&mut self, params: &mut [Tensor], grads: &Gradients, lr: f64, frozen: &[bool]) {
        for (i, (param, grad)) in params.iter_mut().zip(&grads.tensors).enumerate() {
            if frozen.get(i).copied().unwrap_or(false) {
                continue;
            }
            if self.momentum == 0.0 {
                match grad {
                    Grad::Dense(g) => {
                        for (p, g) in param.data.iter_mut().zip(g) {
                            *p -= lr * g;
                        }
                    }
                    Grad::Rows { cols, rows } => {
                        for (r, g) in rows {
                            for (p, g) in param.data[r * cols..(r + 1) * cols].iter_mut().zip(g) {
                                *p -= lr * g;
                            }
                        }
                    }
                }
                continue;
            }

            let v = &mut self.velocity[i];
            v.iter_mut().for_each(|x| *x *= self.momentum);
            match grad {
                Grad::Dense(g) => {
                    for (x, g) in v.iter_mut().zip(g) {
                        *x += g;
                    }
                }
                Grad::Rows { cols, rows } => {
                    for (r, g) in rows {
                        for (x, g) in v[r * cols..(r + 1) * cols].iter_mut().zip(g) {
                            *x += g;
                        }
                    }
                }
            }
            for (p, x) in param.data.iter_mut().zip(v.iter()) {
                *p -= lr * x;
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sparse_rows_accumulate() {
        let t = Tensor::zeros("e", 4, 2);
        let mut a = Gradients::zeros(std::slice::from_ref(&t), 1);
        a.tensors[0].row_mut(1).copy_from_slice(&[1.0, 2.0]);
        let mut b = Gradients::zeros(std::slice::from_ref(&t), 1);
        b.tensors[0].row_mut(1)[0] = 1.0;
        b.tensors[0].row_mut(3)[1] = -1.0;
        a.add_assign(&b);
        assert_eq!(
            a.tensors[0].to_dense(&t),
            [0.0, 0.0, 2.0, 2.0, 0.0, 0.0, 0.0, -1.0]
        );
    }

    #[test]
    fn momentum_step() {
        let mut params = vec![Tensor::zeros("w", 1, 2)];
        let mut grads = Gradients::zeros(&params, 0);
        grads.tensors[0].dense_mut().copy_from_slice(&[1.0, -1.0]);
        let mut sgd = Sgd::new(&params, 0.5);
        sgd.step(&mut params, &grads, 0.1, &[]);
        assert_eq!(params[0].data, [-0.1, 0.1]);
        sgd.step(&mut params, &grads, 0.1, &[]);
        // v = 0.5 + 1 = 1.5
        assert!((params[0].data[0] + 0.25).abs() < 1e-12);
        sgd.step(&mut params, &grads, 0.1, &[true]);
        assert!((params[0].data[0] + 0.25).abs() < 1e-12);
    }
}
