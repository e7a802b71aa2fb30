use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::model::{Dropout, TaggerModel, Vocabularies};
use super::tensor::Sgd;
use super::vocab::Vocab;
use super::{derive_seed, TaggerError, Task, TrainConfig};
use crate::auxlabels::{self, AuxKind, AuxTrack};
use crate::encodings::{self, EncodedSentence, Scheme};
use crate::exec::Execution;
use crate::metrics::{self, BracketScore, EvalOptions};
use crate::treebank::{Sentence, Tree};

/// A labelled sentence with its auxiliary tracks.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct TrainingExample {
    pub encoded: EncodedSentence,
    pub aux: Vec<AuxTrack>,
}

impl TrainingExample {
    pub fn from_tree(tree: &Tree, scheme: Scheme, aux: &[AuxKind]) -> Self {
        let encoded = encodings::encode(tree, scheme);
        let aux = aux
            .iter()
            .map(|kind| auxlabels::track(*kind, tree, &encoded))
            .collect();
        TrainingExample { encoded, aux }
    }

    pub fn sentence(&self) -> &Sentence {
        &self.encoded.sentence
    }

    /// Label strings per task: N, C, U, then the auxiliary tracks.
    pub fn task_labels(&self, distance_cap: Option<usize>) -> Vec<Vec<String>> {
        let labels = &self.encoded.labels;
        let mut out = vec![
            labels.iter().map(|l| l.n.to_string()).collect(),
            labels.iter().map(|l| l.c_token().to_owned()).collect(),
            labels.iter().map(|l| l.u_token().to_owned()).collect(),
        ];
        for track in &self.aux {
            let mut track = track.clone();
            if let Some(cap) = distance_cap {
                auxlabels::cap_distances(&mut track, cap);
            }
            out.push(track.values);
        }
        out
    }
}

/// Vocabularies covering every word, tag and label of `corpus`.
pub fn build_vocabularies(
    corpus: &[TrainingExample],
    distance_cap: Option<usize>,
) -> Result<Vocabularies, TaggerError> {
    let first = corpus.first().ok_or(TaggerError::EmptyCorpus)?;
    let aux_kinds: Vec<AuxKind> = first.aux.iter().map(|t| t.kind).collect();

    let mut vocab = Vocabularies {
        tasks: [Task::N, Task::C, Task::U]
            .into_iter()
            .chain(aux_kinds.iter().map(|k| Task::Aux(*k)))
            .map(|t| (t, Vocab::new()))
            .collect(),
        ..Default::default()
    };

    for example in corpus {
        if example
            .aux
            .iter()
            .map(|t| t.kind)
            .ne(aux_kinds.iter().copied())
        {
            return Err(TaggerError::InconsistentAux);
        }
        let sentence = example.sentence();
        for (w, p) in sentence.words.iter().zip(&sentence.pos) {
            vocab.words.add(w);
            vocab.pos.add(p);
        }
        for ((_, task_vocab), values) in vocab
            .tasks
            .iter_mut()
            .zip(example.task_labels(distance_cap))
        {
            for v in values {
                task_vocab.add(&v);
            }
        }
    }
    Ok(vocab)
}

/// Per-epoch training record.
#[derive(Clone, Debug, PartialEq)]
pub struct EpochStats {
    pub epoch: usize,
    pub learning_rate: f64,
    /// Weighted loss per token.
    pub loss: f64,
    pub dev_f1: f64,
}

#[derive(Clone, Debug)]
pub struct Trained {
    /// Model of the epoch with the best development F1.
    pub model: TaggerModel,
    pub best_epoch: Option<usize>,
    pub history: Vec<EpochStats>,
}

/// Accuracy and bracketing score of greedy predictions.
#[derive(Clone, Debug, PartialEq)]
pub struct Evaluation {
    pub bracket: BracketScore,
    /// Fraction of tokens whose full `(n, c, u)` label is right.
    pub label_accuracy: f64,
    pub predictions: Vec<EncodedSentence>,
}

pub fn predict_batch(
    model: &TaggerModel,
    sentences: &[Sentence],
    exec: Execution,
) -> Vec<EncodedSentence> {
    exec.map(sentences, |s| model.predict_greedy(s))
}

/// Score greedy predictions against gold label sequences.
pub fn evaluate(model: &TaggerModel, gold: &[EncodedSentence], exec: Execution) -> Evaluation {
    let scored = exec.map(gold, |g| {
        let pred = model.predict_greedy(&g.sentence);
        let gold_tree = encodings::decode(g).expect("gold labels match their sentence");
        let pred_tree = encodings::decode(&pred).expect("predictions match their sentence");
        let score = metrics::bracket_score_with(&gold_tree, &pred_tree, &EvalOptions::default())
            .expect("trees share their tokens");
        let correct = g
            .labels
            .iter()
            .zip(&pred.labels)
            .filter(|(a, b)| a == b)
            .count();
        (score, correct, pred)
    });

    let mut bracket = BracketScore::from_counts(0, 0, 0);
    let mut correct = 0;
    let mut total = 0;
    let mut predictions = Vec::with_capacity(scored.len());
    for (score, c, pred) in scored {
        bracket = bracket.merge(&score);
        correct += c;
        total += pred.labels.len();
        predictions.push(pred);
    }
    Evaluation {
        bracket,
        label_accuracy: if total == 0 {
            0.0
        } else {
            correct as f64 / total as f64
        },
        predictions,
    }
}

/// Train with mini-batch SGD on the summed task losses, keeping the model
/// of the epoch with the best bracketing F1 on `dev` (the training corpus
/// when `dev` is empty).
pub fn train_mtl(
    corpus: &[TrainingExample],
    dev: &[TrainingExample],
    config: &TrainConfig,
) -> Result<Trained, TaggerError> {
    let vocab = build_vocabularies(corpus, config.distance_cap)?;
    let scheme = corpus[0].encoded.scheme;
    let mut model = TaggerModel::new(vocab, scheme, config.clone());

    let targets: Vec<Vec<Vec<usize>>> = corpus
        .iter()
        .map(|ex| model.targets(&ex.task_labels(config.distance_cap)))
        .collect::<Result<_, _>>()?;
    let dev_gold: Vec<EncodedSentence> = if dev.is_empty() { corpus } else { dev }
        .iter()
        .map(|ex| ex.encoded.clone())
        .collect();

    let exec = config.execution;
    let mut optimizer = Sgd::new(&model.params, config.momentum);
    let mut order: Vec<usize> = (0..corpus.len()).collect();
    let mut shuffle_rng = ChaCha8Rng::seed_from_u64(derive_seed(config.seed, u64::MAX, 0));

    let mut best: Option<(f64, usize, TaggerModel)> = None;
    let mut history = Vec::with_capacity(config.epochs);

    for epoch in 0..config.epochs {
        let lr = config.learning_rate / (1.0 + config.lr_decay * epoch as f64);
        order.shuffle(&mut shuffle_rng);
        let mut epoch_loss = 0.0;
        let mut epoch_tokens = 0usize;

        for batch in order.chunks(config.batch_size.max(1)) {
            let results = exec.map(batch, |&i| {
                let mut rng =
                    ChaCha8Rng::seed_from_u64(derive_seed(config.seed, epoch as u64, i as u64));
                let dropout = Dropout {
                    rate: config.dropout,
                    rng: &mut rng,
                };
                model.loss_and_gradient(
                    model.featurize(corpus[i].sentence()),
                    &targets[i],
                    config.aux_weight,
                    Some(dropout),
                )
            });

            let tokens: usize = batch.iter().map(|&i| corpus[i].sentence().len()).sum();
            let mut grads = model.zero_gradients();
            for (loss, g) in &results {
                epoch_loss += loss.total;
                grads.add_assign(g);
            }
            epoch_tokens += tokens;
            grads.scale(1.0 / tokens as f64);

            if !epoch_loss.is_finite() || !grads.is_finite() {
                return Err(TaggerError::Diverged {
                    epoch,
                    detail: "loss or gradient is not finite".to_owned(),
                });
            }
            optimizer.step(&mut model.params, &grads, lr, &[]);
        }

        if let Some(name) = model.first_non_finite() {
            return Err(TaggerError::Diverged {
                epoch,
                detail: format!("parameter tensor {name} is not finite"),
            });
        }

        let dev_f1 = evaluate(&model, &dev_gold, exec).bracket.f1;
        history.push(EpochStats {
            epoch,
            learning_rate: lr,
            loss: epoch_loss / epoch_tokens.max(1) as f64,
            dev_f1,
        });
        if best.as_ref().is_none_or(|(f1, _, _)| dev_f1 > *f1) {
            best = Some((dev_f1, epoch, model.clone()));
        }
    }

    Ok(match best {
        Some((_, epoch, best_model)) => Trained {
            model: best_model,
            best_epoch: Some(epoch),
            history,
        },
        None => Trained {
            model,
            best_epoch: None,
            history,
        },
    })
}
