use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::tensor::{Grad, Gradients, Tensor};
use super::vocab::{InputVocab, Vocab};
use super::{TaggerError, Task, TrainConfig};
use crate::encodings::{EncodedSentence, NComponent, Scheme, TagLabel};
use crate::treebank::Sentence;

/// Vocabularies for the inputs and for every task head.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Vocabularies {
    pub words: InputVocab,
    pub pos: InputVocab,
    /// Heads in model order: N, C, U, then auxiliary tasks.
    pub tasks: Vec<(Task, Vocab)>,
}

impl Vocabularies {
    pub fn task_index(&self, task: Task) -> Option<usize> {
        self.tasks.iter().position(|(t, _)| *t == task)
    }
}

/// Window ids for every token: `2r + 1` word ids and as many POS ids,
/// with padding ids outside the sentence.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Features {
    pub len: usize,
    pub width: usize,
    pub word_ids: Vec<usize>,
    pub pos_ids: Vec<usize>,
}

pub fn featurize(sentence: &Sentence, vocab: &Vocabularies, radius: usize) -> Features {
    let len = sentence.words.len();
    let width = 2 * radius + 1;
    let mut word_ids = Vec::with_capacity(len * width);
    let mut pos_ids = Vec::with_capacity(len * width);
    for t in 0..len {
        for offset in 0..width {
            let position = t as isize + offset as isize - radius as isize;
            let (w, p) = if position < 0 {
                (InputVocab::BEGIN, InputVocab::BEGIN)
            } else if position as usize >= len {
                (InputVocab::END, InputVocab::END)
            } else {
                let i = position as usize;
                (
                    vocab.words.id(&sentence.words[i]),
                    vocab.pos.id(&sentence.pos[i]),
                )
            };
            word_ids.push(w);
            pos_ids.push(p);
        }
    }
    Features {
        len,
        width,
        word_ids,
        pos_ids,
    }
}

/// Inverted dropout on the encoder output.
pub struct Dropout<'a> {
    pub rate: f64,
    pub rng: &'a mut ChaCha8Rng,
}

/// Activations kept from an encoder forward pass.
#[derive(Clone, Debug)]
pub struct EncoderPass {
    pub features: Features,
    /// Token inputs, `len × input_dim`.
    pub inputs: Vec<f64>,
    /// Activations before dropout, `len × hidden_dim`.
    pub activations: Vec<f64>,
    /// Dropout multipliers, when dropout was applied.
    pub mask: Option<Vec<f64>>,
    /// Shared representation every head reads, `len × hidden_dim`.
    pub hidden: Vec<f64>,
}

/// Produces one hidden vector per token from the leading parameter
/// tensors of a model.
pub trait ContextEncoder {
    /// Number of tensors the encoder owns at the front of the parameter list.
    fn tensor_count(&self) -> usize;
    /// Of those, how many are embedding tables (row-sparse gradients).
    fn embedding_count(&self) -> usize;
    fn hidden_dim(&self) -> usize;
    fn init(&self, vocab: &Vocabularies, rng: &mut ChaCha8Rng) -> Vec<Tensor>;
    fn forward(
        &self,
        params: &[Tensor],
        features: Features,
        dropout: Option<Dropout<'_>>,
    ) -> EncoderPass;
    /// Accumulate parameter gradients given the gradient on `pass.hidden`.
    fn backward(&self, params: &[Tensor], pass: &EncoderPass, d_hidden: &[f64], grads: &mut [Grad]);
}

/// Concatenated word and POS embeddings of a window around each token,
/// followed by one affine layer with tanh.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct WindowEncoder {
    pub radius: usize,
    pub word_dim: usize,
    pub pos_dim: usize,
    pub hidden: usize,
}

impl WindowEncoder {
    pub const WORD_EMBEDDINGS: usize = 0;
    pub const POS_EMBEDDINGS: usize = 1;
    pub const WEIGHTS: usize = 2;
    pub const BIAS: usize = 3;

    pub fn input_dim(&self) -> usize {
        (2 * self.radius + 1) * (self.word_dim + self.pos_dim)
    }

    /// Concatenated embeddings for every token, `len × input_dim`.
    pub fn input_vectors(&self, params: &[Tensor], features: &Features) -> Vec<f64> {
        let dim = self.input_dim();
        let mut out = Vec::with_capacity(features.len * dim);
        for slot in 0..features.len * features.width {
            out.extend_from_slice(params[Self::WORD_EMBEDDINGS].row(features.word_ids[slot]));
            out.extend_from_slice(params[Self::POS_EMBEDDINGS].row(features.pos_ids[slot]));
        }
        out
    }
}

impl ContextEncoder for WindowEncoder {
    fn tensor_count(&self) -> usize {
        4
    }

    fn embedding_count(&self) -> usize {
        2
    }

    fn hidden_dim(&self) -> usize {
        self.hidden
    }

    fn init(&self, vocab: &Vocabularies, rng: &mut ChaCha8Rng) -> Vec<Tensor> {
        let input = self.input_dim();
        vec![
            Tensor::uniform(
                "word_embeddings",
                vocab.words.len(),
                self.word_dim,
                (3.0 / self.word_dim as f64).sqrt(),
                rng,
            ),
            Tensor::uniform(
                "pos_embeddings",
                vocab.pos.len(),
                self.pos_dim,
                (3.0 / self.pos_dim as f64).sqrt(),
                rng,
            ),
            Tensor::uniform(
                "encoder_weights",
                self.hidden,
                input,
                (6.0 / (input + self.hidden) as f64).sqrt(),
                rng,
            ),
            Tensor::zeros("encoder_bias", 1, self.hidden),
        ]
    }

    fn forward(
        &self,
        params: &[Tensor],
        features: Features,
        dropout: Option<Dropout<'_>>,
    ) -> EncoderPass {
        let inputs = self.input_vectors(params, &features);
        let dim = self.input_dim();
        let weights = &params[Self::WEIGHTS];
        let bias = &params[Self::BIAS].data;

        let mut activations = Vec::with_capacity(features.len * self.hidden);
        for x in inputs.chunks_exact(dim) {
            for (h, b) in bias.iter().enumerate() {
                activations.push((b + dot(weights.row(h), x)).tanh());
            }
        }

        let (mask, hidden) = match dropout {
            Some(Dropout { rate, rng }) if rate > 0.0 => {
                let keep = 1.0 - rate;
                let mask: Vec<f64> = (0..activations.len())
                    .map(|_| {
                        if rng.random::<f64>() < keep {
                            1.0 / keep
                        } else {
                            0.0
                        }
                    })
                    .collect();
                let hidden = activations.iter().zip(&mask).map(|(a, m)| a * m).collect();
                (Some(mask), hidden)
            }
            _ => (None, activations.clone()),
        };

        EncoderPass {
            features,
            inputs,
            activations,
            mask,
            hidden,
        }
    }

    fn backward(
        &self,
        params: &[Tensor],
        pass: &EncoderPass,
        d_hidden: &[f64],
        grads: &mut [Grad],
    ) {
        let dim = self.input_dim();
        let weights = &params[Self::WEIGHTS];
        let features = &pass.features;
        let mut d_input = vec![0.0; dim];

        for t in 0..features.len {
            let span = t * self.hidden..(t + 1) * self.hidden;
            let x = &pass.inputs[t * dim..(t + 1) * dim];
            let mut dz = vec![0.0; self.hidden];
            for (k, h) in span.clone().enumerate() {
                let mut g = d_hidden[h];
                if let Some(mask) = &pass.mask {
                    g *= mask[h];
                }
                let a = pass.activations[h];
                dz[k] = g * (1.0 - a * a);
            }

            {
                let dw = grads[Self::WEIGHTS].dense_mut();
                for (k, g) in dz.iter().enumerate() {
                    if *g != 0.0 {
                        axpy(*g, x, &mut dw[k * dim..(k + 1) * dim]);
                    }
                }
            }
            for (b, g) in grads[Self::BIAS].dense_mut().iter_mut().zip(&dz) {
                *b += g;
            }

            d_input.iter_mut().for_each(|v| *v = 0.0);
            for (k, g) in dz.iter().enumerate() {
                if *g != 0.0 {
                    axpy(*g, weights.row(k), &mut d_input);
                }
            }

            let stride = self.word_dim + self.pos_dim;
            for slot in 0..features.width {
                let base = slot * stride;
                let id = features.word_ids[t * features.width + slot];
                add(
                    grads[Self::WORD_EMBEDDINGS].row_mut(id),
                    &d_input[base..base + self.word_dim],
                );
                let id = features.pos_ids[t * features.width + slot];
                add(
                    grads[Self::POS_EMBEDDINGS].row_mut(id),
                    &d_input[base + self.word_dim..base + stride],
                );
            }
        }
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn axpy(alpha: f64, x: &[f64], y: &mut [f64]) {
    for (y, x) in y.iter_mut().zip(x) {
        *y += alpha * x;
    }
}

fn add(y: &mut [f64], x: &[f64]) {
    axpy(1.0, x, y);
}

/// Numerically stable in-place softmax.
pub fn softmax_in_place(row: &mut [f64]) {
    let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for v in row.iter_mut() {
        *v = (*v - max).exp();
        sum += *v;
    }
    for v in row.iter_mut() {
        *v /= sum;
    }
}

pub fn softmax(row: &[f64]) -> Vec<f64> {
    let mut out = row.to_vec();
    softmax_in_place(&mut out);
    out
}

/// `log Σ exp(row)`.
pub fn log_sum_exp(row: &[f64]) -> f64 {
    let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    max + row.iter().map(|v| (v - max).exp()).sum::<f64>().ln()
}

/// Index of the largest value; the lowest index wins ties.
pub fn argmax(row: &[f64]) -> usize {
    let mut best = 0;
    for (i, v) in row.iter().enumerate() {
        if *v > row[best] {
            best = i;
        }
    }
    best
}

/// A forward pass through encoder and heads.
#[derive(Clone, Debug)]
pub struct Pass {
    pub encoder: EncoderPass,
    /// Per task, `len × |task|` scores.
    pub logits: Vec<Vec<f64>>,
}

/// Summed cross-entropy per task and the weighted total.
#[derive(Clone, Debug, PartialEq)]
pub struct LossBreakdown {
    pub per_task: Vec<f64>,
    pub total: f64,
}

/// Multi-task tagger: a shared encoder and one softmax head per task.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TaggerModel {
    pub vocab: Vocabularies,
    pub config: TrainConfig,
    pub scheme: Scheme,
    pub encoder: WindowEncoder,
    pub params: Vec<Tensor>,
}

impl TaggerModel {
    pub fn new(vocab: Vocabularies, scheme: Scheme, config: TrainConfig) -> Self {
        let encoder = WindowEncoder {
            radius: config.window_radius,
            word_dim: config.word_dim,
            pos_dim: config.pos_dim,
            hidden: config.hidden_dim,
        };
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let mut params = encoder.init(&vocab, &mut rng);
        let hidden = encoder.hidden;
        for (task, labels) in &vocab.tasks {
            let bound = (6.0 / (hidden + labels.len()) as f64).sqrt();
            params.push(Tensor::uniform(
                format!("head_{task}_weights"),
                labels.len(),
                hidden,
                bound,
                &mut rng,
            ));
            params.push(Tensor::zeros(format!("head_{task}_bias"), 1, labels.len()));
        }
        TaggerModel {
            vocab,
            config,
            scheme,
            encoder,
            params,
        }
    }

    pub fn task_count(&self) -> usize {
        self.vocab.tasks.len()
    }

    /// Parameter indices of a head's weights and bias.
    pub fn head_tensors(&self, task: usize) -> (usize, usize) {
        let base = self.encoder.tensor_count() + 2 * task;
        (base, base + 1)
    }

    /// Indices of the embedding tables.
    pub fn embedding_tensors(&self) -> std::ops::Range<usize> {
        0..self.encoder.embedding_count()
    }

    pub fn zero_gradients(&self) -> Gradients {
        Gradients::zeros(&self.params, self.encoder.embedding_count())
    }

    pub fn featurize(&self, sentence: &Sentence) -> Features {
        featurize(sentence, &self.vocab, self.encoder.radius)
    }

    pub fn pass(&self, features: Features, dropout: Option<Dropout<'_>>) -> Pass {
        let encoder = self.encoder.forward(&self.params, features, dropout);
        let hidden_dim = self.encoder.hidden;
        let logits = (0..self.task_count())
            .map(|task| {
                let (w, b) = self.head_tensors(task);
                let (w, b) = (&self.params[w], &self.params[b].data);
                let mut out = Vec::with_capacity(encoder.features.len * b.len());
                for h in encoder.hidden.chunks_exact(hidden_dim) {
                    for (j, bias) in b.iter().enumerate() {
                        out.push(bias + dot(w.row(j), h));
                    }
                }
                out
            })
            .collect();
        Pass { encoder, logits }
    }

    /// Per task, one probability distribution per token (`len × |task|`).
    pub fn forward(&self, sentence: &Sentence) -> Result<Vec<Vec<f64>>, TaggerError> {
        let pass = self.pass(self.featurize(sentence), None);
        let mut out = Vec::with_capacity(pass.logits.len());
        for (task, logits) in pass.logits.into_iter().enumerate() {
            if let Some(pos) = logits.iter().position(|v| !v.is_finite()) {
                let width = self.vocab.tasks[task].1.len();
                return Err(TaggerError::NonFinite(format!(
                    "score of head {} at token {} is {}",
                    self.vocab.tasks[task].0,
                    pos / width,
                    logits[pos]
                )));
            }
            let mut probs = logits;
            let width = self.vocab.tasks[task].1.len();
            for row in probs.chunks_exact_mut(width) {
                softmax_in_place(row);
            }
            out.push(probs);
        }
        Ok(out)
    }

    /// Backpropagate gradients on the head scores into every parameter.
    pub fn backward(&self, pass: &Pass, d_logits: &[Vec<f64>]) -> Gradients {
        let mut grads = self.zero_gradients();
        let hidden_dim = self.encoder.hidden;
        let len = pass.encoder.features.len;
        let mut d_hidden = vec![0.0; len * hidden_dim];

        for (task, d) in d_logits.iter().enumerate() {
            let (wi, bi) = self.head_tensors(task);
            let width = self.params[bi].cols;
            let weights = &self.params[wi];
            for t in 0..len {
                let h = &pass.encoder.hidden[t * hidden_dim..(t + 1) * hidden_dim];
                let dh = &mut d_hidden[t * hidden_dim..(t + 1) * hidden_dim];
                for (j, g) in d[t * width..(t + 1) * width].iter().enumerate() {
                    if *g == 0.0 {
                        continue;
                    }
                    axpy(
                        *g,
                        h,
                        &mut grads.tensors[wi].dense_mut()[j * hidden_dim..(j + 1) * hidden_dim],
                    );
                    grads.tensors[bi].dense_mut()[j] += g;
                    axpy(*g, weights.row(j), dh);
                }
            }
        }

        let count = self.encoder.tensor_count();
        self.encoder.backward(
            &self.params,
            &pass.encoder,
            &d_hidden,
            &mut grads.tensors[..count],
        );
        grads
    }

    /// Label ids of every task for a training example.
    pub fn targets(&self, labels: &[Vec<String>]) -> Result<Vec<Vec<usize>>, TaggerError> {
        self.vocab
            .tasks
            .iter()
            .zip(labels)
            .map(|((task, vocab), values)| {
                values
                    .iter()
                    .map(|v| {
                        vocab.id(v).ok_or_else(|| TaggerError::UnknownLabel {
                            task: task.to_string(),
                            label: v.clone(),
                        })
                    })
                    .collect()
            })
            .collect()
    }

    /// Cross-entropy of every task and its gradient. Main tasks weigh 1,
    /// auxiliary tasks `aux_weight`.
    pub fn loss_and_gradient(
        &self,
        features: Features,
        targets: &[Vec<usize>],
        aux_weight: f64,
        dropout: Option<Dropout<'_>>,
    ) -> (LossBreakdown, Gradients) {
        let pass = self.pass(features, dropout);
        let mut per_task = vec![0.0; self.task_count()];
        let mut total = 0.0;
        let mut d_logits = Vec::with_capacity(self.task_count());
        for (task, logits) in pass.logits.iter().enumerate() {
            let weight = if self.vocab.tasks[task].0.is_main() {
                1.0
            } else {
                aux_weight
            };
            let width = self.vocab.tasks[task].1.len();
            let mut d = vec![0.0; logits.len()];
            for (t, row) in logits.chunks_exact(width).enumerate() {
                let gold = targets[task][t];
                let nll = log_sum_exp(row) - row[gold];
                per_task[task] += nll;
                total += weight * nll;
                let probs = softmax(row);
                let drow = &mut d[t * width..(t + 1) * width];
                for (j, p) in probs.iter().enumerate() {
                    drow[j] = weight * (p - if j == gold { 1.0 } else { 0.0 });
                }
            }
            d_logits.push(d);
        }
        let grads = self.backward(&pass, &d_logits);
        (LossBreakdown { per_task, total }, grads)
    }

    /// Loss only, without gradient bookkeeping.
    pub fn loss(
        &self,
        sentence: &Sentence,
        targets: &[Vec<usize>],
        aux_weight: f64,
    ) -> LossBreakdown {
        let pass = self.pass(self.featurize(sentence), None);
        let mut per_task = vec![0.0; self.task_count()];
        let mut total = 0.0;
        for (task, logits) in pass.logits.iter().enumerate() {
            let weight = if self.vocab.tasks[task].0.is_main() {
                1.0
            } else {
                aux_weight
            };
            let width = self.vocab.tasks[task].1.len();
            for (t, row) in logits.chunks_exact(width).enumerate() {
                let nll = log_sum_exp(row) - row[targets[task][t]];
                per_task[task] += nll;
                total += weight * nll;
            }
        }
        LossBreakdown { per_task, total }
    }

    /// Assemble a label sequence from one chosen id per token for each of
    /// the N, C and U heads. The last token always gets a dummy `n` and `c`.
    pub fn assemble(
        &self,
        sentence: &Sentence,
        n: &[usize],
        c: &[usize],
        u: &[usize],
    ) -> EncodedSentence {
        let len = sentence.words.len();
        let (nv, cv, uv) = (
            &self.vocab.tasks[0].1,
            &self.vocab.tasks[1].1,
            &self.vocab.tasks[2].1,
        );
        let labels = (0..len)
            .map(|t| {
                let u = TagLabel::parse_u(uv.get(u[t]));
                if t + 1 == len {
                    return TagLabel::dummy(u);
                }
                TagLabel {
                    n: nv.get(n[t]).parse().unwrap_or(NComponent::Dummy),
                    c: TagLabel::parse_c(cv.get(c[t])),
                    u,
                }
            })
            .collect();
        EncodedSentence {
            sentence: sentence.clone(),
            labels,
            scheme: self.scheme,
        }
    }

    /// Most probable label of every main head at every token.
    pub fn predict_greedy(&self, sentence: &Sentence) -> EncodedSentence {
        let pass = self.pass(self.featurize(sentence), None);
        let choose = |task: usize| -> Vec<usize> {
            let width = self.vocab.tasks[task].1.len();
            pass.logits[task].chunks_exact(width).map(argmax).collect()
        };
        self.assemble(sentence, &choose(0), &choose(1), &choose(2))
    }

    pub fn is_finite(&self) -> bool {
        self.params.iter().all(Tensor::is_finite)
    }

    /// Name of the first tensor holding a non-finite value.
    pub fn first_non_finite(&self) -> Option<&str> {
        self.params
            .iter()
            .find(|t| !t.is_finite())
            .map(|t| t.name.as_str())
    }
}
