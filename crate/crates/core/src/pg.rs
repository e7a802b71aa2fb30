//! Policy-gradient fine-tuning of a trained tagger.
//!
//! The tagger is treated as a policy that picks an `n`, `c` and `u` label
//! at every token. Sampled label sequences are decoded and scored against
//! the gold tree; the reward minus the score of a frozen copy of the
//! starting model scales the log-likelihood gradient of the sample. Raw
//! advantages feed a running mean/std tracker and are standardized once a
//! burn-in count is reached. An entropy bonus keeps the policy from
//! collapsing, and optional Gaussian noise on the head scores, with an
//! adaptively scaled stddev, widens exploration.

use std::fmt::Write as _;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::encodings::{self, EncodedSentence};
use crate::exec::Execution;
use crate::metrics::{self, BracketScore};
use crate::tagger::{derive_seed, softmax, Gradients, Sgd, TaggerModel};
use crate::treebank::{Sentence, Tree};

/// Floor for the running standard deviation.
pub const STD_FLOOR: f64 = 1e-8;

/// Heads the policy acts through: N, C and U.
const POLICY_TASKS: usize = 3;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PgConfig {
    pub samples: usize,
    pub learning_rate: f64,
    pub entropy_coef: f64,
    /// Raw advantages observed before standardization kicks in.
    pub burn_in: u64,
    /// Names of parameter tensors left untouched.
    pub frozen: Vec<String>,
    pub noise: bool,
    pub noise_initial_std: f64,
    pub noise_desired_divergence: f64,
    pub noise_adaptation: f64,
    pub epochs: usize,
    /// Return the epoch with the best development F1 instead of the last one.
    pub select_best: bool,
    pub seed: u64,
    pub execution: Execution,
}

impl Default for PgConfig {
    fn default() -> Self {
        PgConfig {
            samples: 8,
            learning_rate: 0.0005,
            entropy_coef: 0.01,
            burn_in: 1000,
            frozen: vec!["word_embeddings".to_owned(), "pos_embeddings".to_owned()],
            noise: false,
            noise_initial_std: 0.1,
            noise_desired_divergence: 0.5,
            noise_adaptation: 1.05,
            epochs: 10,
            select_best: true,
            seed: 1,
            execution: Execution::default(),
        }
    }
}

#[derive(Clone, Debug, Error, PartialEq)]
pub enum PgError {
    #[error("policy gradient is not finite")]
    NonFiniteGradient,
    #[error("{trees} training trees but {sentences} sentences")]
    Misaligned { trees: usize, sentences: usize },
}

/// Running mean and standard deviation of raw advantages (Welford).
#[derive(Clone, Debug, Default, PartialEq)]
pub struct AdvantageTracker {
    pub count: u64,
    mean: f64,
    m2: f64,
    pub burn_in: u64,
}

impl AdvantageTracker {
    pub fn new(burn_in: u64) -> Self {
        AdvantageTracker {
            burn_in,
            ..Default::default()
        }
    }

    pub fn observe(&mut self, advantage: f64) {
        self.count += 1;
        let delta = advantage - self.mean;
        self.mean += delta / self.count as f64;
        self.m2 += delta * (advantage - self.mean);
    }

    pub fn mean(&self) -> f64 {
        self.mean
    }

    pub fn std(&self) -> f64 {
        if self.count == 0 {
            return STD_FLOOR;
        }
        (self.m2 / self.count as f64).sqrt().max(STD_FLOOR)
    }

    pub fn active(&self) -> bool {
        self.count >= self.burn_in
    }

    /// Standardized advantage once past burn-in, the raw value before.
    pub fn standardize(&self, advantage: f64) -> f64 {
        if self.active() {
            (advantage - self.mean) / self.std()
        } else {
            advantage
        }
    }
}

/// Adaptive stddev of the score noise.
#[derive(Clone, Debug, PartialEq)]
pub struct NoiseState {
    pub std: f64,
    pub desired: f64,
    pub adaptation: f64,
}

impl NoiseState {
    pub fn from_config(config: &PgConfig) -> Self {
        NoiseState {
            std: config.noise_initial_std,
            desired: config.noise_desired_divergence,
            adaptation: config.noise_adaptation,
        }
    }

    /// Grow the stddev while the measured divergence is below target and
    /// shrink it otherwise.
    pub fn adapt(&mut self, divergence: f64) -> f64 {
        if divergence < self.desired {
            self.std *= self.adaptation;
        } else {
            self.std /= self.adaptation;
        }
        self.std
    }
}

/// One sampled decision: head, token, chosen label and the distribution it
/// was drawn from.
#[derive(Clone, Debug)]
struct Decision {
    task: usize,
    token: usize,
    choice: usize,
    probs: Vec<f64>,
}

/// A label sequence drawn from the policy.
#[derive(Clone, Debug)]
pub struct Sample {
    pub encoded: EncodedSentence,
    /// Sum of log-probabilities of every sampled decision.
    pub log_prob: f64,
    decisions: Vec<Decision>,
    /// Mean L1 distance between noisy and clean distributions.
    pub divergence: f64,
}

/// Clean per-decision distributions of a sentence, shared by all samples.
struct PolicyView {
    pass: crate::tagger::Pass,
    /// `(task, token, probs)` for every decision the policy makes.
    decisions: Vec<(usize, usize, Vec<f64>)>,
}

impl PolicyView {
    fn new(policy: &TaggerModel, sentence: &Sentence) -> Self {
        let pass = policy.pass(policy.featurize(sentence), None);
        let len = sentence.words.len();
        let mut decisions = Vec::new();
        for task in 0..POLICY_TASKS {
            let width = policy.vocab.tasks[task].1.len();
            // The last token's n and c are fixed to the dummy.
            let tokens = if task == 2 { len } else { len - 1 };
            for t in 0..tokens {
                let logits = &pass.logits[task][t * width..(t + 1) * width];
                decisions.push((task, t, softmax(logits)));
            }
        }
        PolicyView { pass, decisions }
    }

    fn draw(
        &self,
        policy: &TaggerModel,
        sentence: &Sentence,
        noise_std: f64,
        rng: &mut impl Rng,
    ) -> Sample {
        let len = sentence.words.len();
        let mut choices = vec![vec![0usize; len]; POLICY_TASKS];
        let mut decisions = Vec::with_capacity(self.decisions.len());
        let mut log_prob = 0.0;
        let mut divergence = 0.0;
        let normal =
            (noise_std > 0.0).then(|| Normal::new(0.0, noise_std).expect("positive stddev"));

        for (task, t, clean) in &self.decisions {
            let probs = match &normal {
                Some(normal) => {
                    let width = clean.len();
                    let logits = &self.pass.logits[*task][t * width..(t + 1) * width];
                    let noisy: Vec<f64> = logits.iter().map(|z| z + normal.sample(rng)).collect();
                    let probs = softmax(&noisy);
                    divergence += probs
                        .iter()
                        .zip(clean)
                        .map(|(a, b)| (a - b).abs())
                        .sum::<f64>();
                    probs
                }
                None => clean.clone(),
            };
            let choice = sample_categorical(&probs, rng);
            log_prob += probs[choice].ln();
            choices[*task][*t] = choice;
            decisions.push(Decision {
                task: *task,
                token: *t,
                choice,
                probs,
            });
        }

        let encoded = policy.assemble(sentence, &choices[0], &choices[1], &choices[2]);
        let count = self.decisions.len().max(1) as f64;
        Sample {
            encoded,
            log_prob,
            decisions,
            divergence: divergence / count,
        }
    }
}

fn sample_categorical(probs: &[f64], rng: &mut impl Rng) -> usize {
    let mut u = rng.random::<f64>();
    for (i, p) in probs.iter().enumerate() {
        if u < *p {
            return i;
        }
        u -= p;
    }
    // Rounding left a sliver of mass: take the last label with support.
    probs.iter().rposition(|p| *p > 0.0).unwrap_or(0)
}

fn entropy(probs: &[f64]) -> f64 {
    -probs
        .iter()
        .filter(|p| **p > 0.0)
        .map(|p| p * p.ln())
        .sum::<f64>()
}

/// Draw one label sequence from the policy, optionally with Gaussian
/// noise of stddev `noise_std` on the head scores.
pub fn sample_sequence(
    policy: &TaggerModel,
    sentence: &Sentence,
    rng: &mut impl Rng,
    noise_std: f64,
) -> Sample {
    PolicyView::new(policy, sentence).draw(policy, sentence, noise_std, rng)
}

/// Bracketing F1 of the decoded sample against the gold tree.
pub fn tree_reward(sampled: &EncodedSentence, gold: &Tree) -> f64 {
    let predicted = encodings::decode(sampled).expect("sampled labels match their sentence");
    metrics::bracket_score(gold, &predicted)
        .map(|s| s.f1)
        .expect("sample and gold share their tokens")
}

/// Settings of one gradient estimate.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EstimatorSettings {
    pub samples: usize,
    pub entropy_coef: f64,
    pub noise_std: f64,
    pub seed: u64,
    pub execution: Execution,
}

/// A policy-gradient estimate for one sentence.
#[derive(Clone, Debug)]
pub struct Estimate {
    /// Gradient of the negated objective, ready for a descent step.
    pub gradients: Gradients,
    pub rewards: Vec<f64>,
    pub advantages: Vec<f64>,
    pub standardized: Vec<f64>,
    /// Mean entropy of the clean per-decision distributions.
    pub entropy: f64,
    pub divergence: f64,
}

/// Estimate the gradient of
/// `mean over samples [ Â · Σ log π(label) + β_H · Σ H(π) ]`
/// where `Â` is `reward − baseline`, standardized by `tracker` when given.
/// Every raw advantage is fed to the tracker in sample order.
pub fn reinforce_gradient<F>(
    policy: &TaggerModel,
    sentence: &Sentence,
    reward: F,
    baseline: f64,
    settings: &EstimatorSettings,
    mut tracker: Option<&mut AdvantageTracker>,
) -> Estimate
where
    F: Fn(&EncodedSentence) -> f64 + Sync + Send,
{
    let view = PolicyView::new(policy, sentence);
    let samples = settings.samples.max(1);
    let draws = settings.execution.map_range(samples, |s| {
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(settings.seed, s as u64, 1));
        let sample = view.draw(policy, sentence, settings.noise_std, &mut rng);
        let r = reward(&sample.encoded);
        (sample, r)
    });

    let mut d_logits: Vec<Vec<f64>> = view
        .pass
        .logits
        .iter()
        .map(|l| vec![0.0; l.len()])
        .collect();
    let scale = 1.0 / samples as f64;
    let mut rewards = Vec::with_capacity(samples);
    let mut advantages = Vec::with_capacity(samples);
    let mut standardized = Vec::with_capacity(samples);
    let mut divergence = 0.0;

    for (sample, r) in &draws {
        let advantage = r - baseline;
        let adjusted = match tracker.as_deref_mut() {
            Some(tracker) => {
                tracker.observe(advantage);
                tracker.standardize(advantage)
            }
            None => advantage,
        };
        rewards.push(*r);
        advantages.push(advantage);
        standardized.push(adjusted);
        divergence += sample.divergence;

        for decision in &sample.decisions {
            let width = decision.probs.len();
            let row =
                &mut d_logits[decision.task][decision.token * width..(decision.token + 1) * width];
            let h = entropy(&decision.probs);
            for (j, p) in decision.probs.iter().enumerate() {
                let onehot = if j == decision.choice { 1.0 } else { 0.0 };
                let d_log_prob = onehot - p;
                let d_entropy = if *p > 0.0 { -p * (p.ln() + h) } else { 0.0 };
                // Descent on the negated objective.
                row[j] -= scale * (adjusted * d_log_prob + settings.entropy_coef * d_entropy);
            }
        }
    }

    let entropy = view
        .decisions
        .iter()
        .map(|(_, _, p)| entropy(p))
        .sum::<f64>()
        / view.decisions.len().max(1) as f64;
    Estimate {
        gradients: policy.backward(&view.pass, &d_logits),
        rewards,
        advantages,
        standardized,
        entropy,
        divergence: divergence / samples as f64,
    }
}

/// Statistics of one update.
#[derive(Clone, Debug, PartialEq)]
pub struct UpdateStats {
    pub baseline_reward: f64,
    pub mean_reward: f64,
    pub mean_standardized: f64,
    pub entropy: f64,
    pub noise_std: f64,
}

fn frozen_mask(policy: &TaggerModel, config: &PgConfig) -> Vec<bool> {
    policy
        .params
        .iter()
        .map(|t| config.frozen.contains(&t.name))
        .collect()
}

/// One policy-gradient step on a single sentence.
#[allow(clippy::too_many_arguments)]
pub fn pg_update(
    policy: &mut TaggerModel,
    baseline: &TaggerModel,
    sentence: &Sentence,
    gold: &Tree,
    config: &PgConfig,
    tracker: &mut AdvantageTracker,
    noise: &mut NoiseState,
    seed: u64,
) -> Result<UpdateStats, PgError> {
    let baseline_reward = tree_reward(&baseline.predict_greedy(sentence), gold);
    let settings = EstimatorSettings {
        samples: config.samples,
        entropy_coef: config.entropy_coef,
        noise_std: if config.noise { noise.std } else { 0.0 },
        seed,
        execution: config.execution,
    };
    let estimate = reinforce_gradient(
        policy,
        sentence,
        |s| tree_reward(s, gold),
        baseline_reward,
        &settings,
        Some(tracker),
    );
    if !estimate.gradients.is_finite() {
        return Err(PgError::NonFiniteGradient);
    }

    let frozen = frozen_mask(policy, config);
    Sgd::new(&policy.params, 0.0).step(
        &mut policy.params,
        &estimate.gradients,
        config.learning_rate,
        &frozen,
    );
    if config.noise {
        noise.adapt(estimate.divergence);
    }

    let n = estimate.rewards.len() as f64;
    Ok(UpdateStats {
        baseline_reward,
        mean_reward: estimate.rewards.iter().sum::<f64>() / n,
        mean_standardized: estimate.standardized.iter().sum::<f64>() / n,
        entropy: estimate.entropy,
        noise_std: noise.std,
    })
}

/// One line of the fine-tuning log.
#[derive(Clone, Debug, PartialEq)]
pub struct PgEpochLog {
    pub epoch: usize,
    pub mean_reward: f64,
    pub mean_baseline: f64,
    pub mean_standardized: f64,
    pub entropy: f64,
    pub dev_f1: f64,
    pub noise_std: f64,
}

pub const LOG_HEADER: &str =
    "epoch\tmean_reward\tmean_baseline\tmean_std_advantage\tentropy\tdev_f1\tnoise_std";

pub fn log_tsv(log: &[PgEpochLog]) -> String {
    let mut out = String::from(LOG_HEADER);
    out.push('\n');
    for l in log {
        writeln!(
            out,
            "{}\t{:.6}\t{:.6}\t{:.6}\t{:.6}\t{:.6}\t{:.6}",
            l.epoch,
            l.mean_reward,
            l.mean_baseline,
            l.mean_standardized,
            l.entropy,
            l.dev_f1,
            l.noise_std
        )
        .unwrap();
    }
    out
}

#[derive(Clone, Debug)]
pub struct Finetuned {
    pub policy: TaggerModel,
    /// Epoch whose policy was returned; `None` for the starting policy.
    pub best_epoch: Option<usize>,
    pub initial_dev_f1: f64,
    pub log: Vec<PgEpochLog>,
    pub tracker: AdvantageTracker,
}

/// Bracketing score of greedy predictions on gold trees.
pub fn score_trees(model: &TaggerModel, gold: &[Tree], exec: Execution) -> BracketScore {
    let scores = exec.map(gold, |tree| {
        let predicted =
            encodings::decode(&model.predict_greedy(&tree.sentence())).expect("same sentence");
        metrics::bracket_score(tree, &predicted).expect("same tokens")
    });
    scores
        .iter()
        .fold(BracketScore::from_counts(0, 0, 0), |acc, s| acc.merge(s))
}

/// Fine-tune `policy` on `train` for `config.epochs` epochs against the
/// frozen `baseline`.
pub fn finetune(
    mut policy: TaggerModel,
    baseline: &TaggerModel,
    train: &[Tree],
    dev: &[Tree],
    config: &PgConfig,
) -> Result<Finetuned, PgError> {
    let dev = if dev.is_empty() { train } else { dev };
    let exec = config.execution;
    let sentences: Vec<Sentence> = train.iter().map(Tree::sentence).collect();
    let mut tracker = AdvantageTracker::new(config.burn_in);
    let mut noise = NoiseState::from_config(config);
    let mut order: Vec<usize> = (0..train.len()).collect();
    let mut shuffle_rng = ChaCha8Rng::seed_from_u64(derive_seed(config.seed, u64::MAX, 2));

    let initial_dev_f1 = score_trees(&policy, dev, exec).f1;
    let mut best = (initial_dev_f1, None, policy.clone());
    let mut log = Vec::with_capacity(config.epochs);

    for epoch in 0..config.epochs {
        use rand::seq::SliceRandom;
        order.shuffle(&mut shuffle_rng);
        let mut sums = [0.0; 4];
        for &i in &order {
            let seed = derive_seed(config.seed, epoch as u64, i as u64);
            let stats = pg_update(
                &mut policy,
                baseline,
                &sentences[i],
                &train[i],
                config,
                &mut tracker,
                &mut noise,
                seed,
            )?;
            sums[0] += stats.mean_reward;
            sums[1] += stats.baseline_reward;
            sums[2] += stats.mean_standardized;
            sums[3] += stats.entropy;
        }
        let n = train.len().max(1) as f64;
        let dev_f1 = score_trees(&policy, dev, exec).f1;
        log.push(PgEpochLog {
            epoch,
            mean_reward: sums[0] / n,
            mean_baseline: sums[1] / n,
            mean_standardized: sums[2] / n,
            entropy: sums[3] / n,
            dev_f1,
            noise_std: noise.std,
        });
        if dev_f1 > best.0 {
            best = (dev_f1, Some(epoch), policy.clone());
        }
    }

    let (policy, best_epoch) = if config.select_best {
        (best.2, best.1)
    } else {
        let last = config.epochs.checked_sub(1);
        (policy, last)
    };
    Ok(Finetuned {
        policy,
        best_epoch,
        initial_dev_f1,
        log,
        tracker,
    })
}
