use ndarray::Array2;
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::{Architecture, MlpClassifier, MlpGradient};
use crate::data::BinaryDataset;
use crate::error::{Error, Result};
use crate::labeler::{predict_u8_rows, AugmentedBatch, FilterMode};
use crate::math::all_finite;
use crate::rng;
use crate::sampler::SampleChain;

/// How labeled seeds and their generated samples are packed into updates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BatchPolicy {
    /// Labeled seeds per group; each brings its chains' kept samples.
    pub seeds_per_batch: usize,
    /// Consecutive groups are merged until a batch holds this many rows.
    pub min_batch: usize,
    /// Larger batches are shuffled and split into near-equal consecutive updates.
    pub max_batch: usize,
}

impl Default for BatchPolicy {
    fn default() -> Self {
        BatchPolicy {
            seeds_per_batch: 10,
            min_batch: 10,
            max_batch: 1024,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainSchedule {
    pub architecture: Architecture,
    pub epochs: usize,
    pub learning_rate: f64,
    pub momentum: f64,
    pub input_noise_sigma: f64,
    pub dropout_rate: f64,
    pub seed: u64,
    pub batch: BatchPolicy,
}

impl TrainSchedule {
    pub fn new(architecture: Architecture, seed: u64) -> Self {
        TrainSchedule {
            architecture,
            epochs: 200,
            learning_rate: 0.01,
            momentum: 0.9,
            input_noise_sigma: 0.3,
            dropout_rate: 0.5,
            seed,
            batch: BatchPolicy::default(),
        }
    }

    fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0) || !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::Config("learning rate must be positive and momentum in [0, 1)".into()));
        }
        if self.batch.min_batch == 0 || self.batch.max_batch < 4 || self.batch.seeds_per_batch == 0 {
            return Err(Error::Config(
                "min_batch and seeds_per_batch must be positive and max_batch at least 4".into(),
            ));
        }
        Ok(())
    }
}

/// Filter outcome for one epoch.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochKeep {
    pub epoch: usize,
    pub kept: usize,
    pub total: usize,
    /// Kept count per chain, in the order the chains were given.
    #[serde(skip)]
    pub per_chain: Vec<usize>,
}

impl EpochKeep {
    pub fn fraction(&self) -> f64 {
        if self.total == 0 {
            1.0
        } else {
            self.kept as f64 / self.total as f64
        }
    }
}

#[derive(Debug, Clone)]
pub struct TrainedClassifier {
    pub classifier: MlpClassifier,
    /// Row-weighted mean training loss per epoch.
    pub losses: Vec<f64>,
    /// Empty when no chains were given.
    pub keep: Vec<EpochKeep>,
}

/// Trains on `labeled` plus the generated samples of `chains`; see
/// [`train_classifier_observed`].
pub fn train_classifier(
    labeled: &BinaryDataset,
    chains: &[SampleChain],
    mode: FilterMode,
    sched: &TrainSchedule,
) -> Result<TrainedClassifier> {
    train_classifier_observed(labeled, chains, mode, sched, &mut |_| {})
}

/// Each epoch reshuffles the labeled seeds, refreshes the filter masks, then
/// performs one momentum-SGD update per batch. A batch is a group of seeds
/// with all currently kept samples of their chains. `observe` sees each
/// epoch's filter outcome.
pub fn train_classifier_observed(
    labeled: &BinaryDataset,
    chains: &[SampleChain],
    mode: FilterMode,
    sched: &TrainSchedule,
    observe: &mut dyn FnMut(&EpochKeep),
) -> Result<TrainedClassifier> {
    sched.validate()?;
    let labels = labeled.labels().ok_or(Error::MissingLabels("classifier training set"))?;
    if labeled.is_empty() {
        return Err(Error::InvalidCounts("classifier training set is empty".into()));
    }
    let mut chains_of_seed: Vec<Vec<usize>> = vec![Vec::new(); labeled.len()];
    for (c, chain) in chains.iter().enumerate() {
        if chain.seed_index >= labeled.len() || chain.seed_label != labels[chain.seed_index] {
            return Err(Error::InvalidCounts(format!(
                "chain {c} claims seed {} labeled {}, which is not in the labeled set",
                chain.seed_index, chain.seed_label
            )));
        }
        chains_of_seed[chain.seed_index].push(c);
    }
    let chain_refs: Vec<(usize, &SampleChain)> = chains.iter().enumerate().collect();
    let mut pool = AugmentedBatch::new(labeled.clone(), &chain_refs)?;
    // Generated rows of chain c occupy offsets[c]..offsets[c + 1].
    let mut offsets = vec![0];
    for chain in chains {
        offsets.push(offsets.last().unwrap() + chain.len());
    }

    let mut init_rng = rng::derived(sched.seed, &["mlp-init".into()]);
    let mut rng = rng::derived(sched.seed, &["mlp-train".into()]);
    let mut clf = MlpClassifier::init(
        sched.architecture.clone(),
        sched.dropout_rate,
        sched.input_noise_sigma,
        &mut init_rng,
    )?;
    let mut velocity: Option<MlpGradient> = None;
    let per_group = sched.batch.seeds_per_batch;
    let mut order: Vec<usize> = (0..labeled.len()).collect();
    let mut losses = Vec::with_capacity(sched.epochs);
    let mut keep = Vec::new();

    for epoch in 0..sched.epochs {
        order.shuffle(&mut rng);
        if !chains.is_empty() {
            refresh_mask(&mut pool, &clf, epoch, mode)?;
            let per_chain: Vec<usize> = (0..chains.len())
                .map(|c| pool.kept_mask[offsets[c]..offsets[c + 1]].iter().filter(|&&k| k).count())
                .collect();
            let record = EpochKeep {
                epoch,
                kept: per_chain.iter().sum(),
                total: pool.generated.len(),
                per_chain,
            };
            observe(&record);
            keep.push(record);
        }

        // Each row is (is_generated, index into labeled or generated).
        let groups: Vec<Vec<(bool, usize)>> = order
            .chunks(per_group)
            .map(|seeds| {
                let mut rows: Vec<(bool, usize)> = seeds.iter().map(|&s| (false, s)).collect();
                for &s in seeds {
                    for &c in &chains_of_seed[s] {
                        rows.extend((offsets[c]..offsets[c + 1]).filter(|&g| pool.kept_mask[g]).map(|g| (true, g)));
                    }
                }
                rows
            })
            .collect();

        let (mut loss_sum, mut rows_seen) = (0.0, 0usize);
        for batch in compose_batches(groups, &sched.batch, &mut rng) {
            if batch.is_empty() {
                return Err(Error::EmptyEffectiveBatch);
            }
            let (x, y) = gather(&pool, &batch);
            let (loss, grad, stats) = clf.loss_and_grad(&x, &y, &mut rng)?;
            step(&mut clf, &mut velocity, grad, sched)?;
            clf.update_running_stats(&stats);
            loss_sum += loss * batch.len() as f64;
            rows_seen += batch.len();
        }
        let mean_loss = loss_sum / rows_seen.max(1) as f64;
        log::debug!("mlp epoch={epoch} loss={mean_loss:.5} rows={rows_seen}");
        losses.push(mean_loss);
    }
    Ok(TrainedClassifier {
        classifier: clf,
        losses,
        keep,
    })
}

fn refresh_mask(pool: &mut AugmentedBatch, clf: &MlpClassifier, epoch: usize, mode: FilterMode) -> Result<()> {
    if matches!(mode, FilterMode::All) && pool.kept_mask.iter().all(|&k| k) {
        return Ok(());
    }
    pool.refilter(clf, epoch, mode)
}

/// Merges small groups and splits oversized ones. A trailing batch below
/// `min_batch` joins its predecessor.
fn compose_batches<R: rand::Rng + ?Sized>(
    groups: Vec<Vec<(bool, usize)>>,
    policy: &BatchPolicy,
    rng: &mut R,
) -> Vec<Vec<(bool, usize)>> {
    let mut merged: Vec<Vec<(bool, usize)>> = Vec::new();
    let mut current = Vec::new();
    for group in groups {
        current.extend(group);
        if current.len() >= policy.min_batch {
            merged.push(std::mem::take(&mut current));
        }
    }
    if !current.is_empty() {
        match merged.last_mut() {
            Some(last) => last.extend(current),
            None => merged.push(current),
        }
    }
    let mut out = Vec::with_capacity(merged.len());
    for mut batch in merged {
        if batch.len() <= policy.max_batch {
            out.push(batch);
            continue;
        }
        batch.shuffle(rng);
        let parts = batch.len().div_ceil(policy.max_batch);
        let (base, extra) = (batch.len() / parts, batch.len() % parts);
        let mut start = 0;
        for p in 0..parts {
            let len = base + usize::from(p < extra);
            out.push(batch[start..start + len].to_vec());
            start += len;
        }
    }
    out
}

fn gather(pool: &AugmentedBatch, rows: &[(bool, usize)]) -> (Array2<f64>, Vec<u8>) {
    let dim = pool.real.dim();
    let mut x = Array2::zeros((rows.len(), dim));
    let mut y = Vec::with_capacity(rows.len());
    for (r, &(generated, i)) in rows.iter().enumerate() {
        let source = if generated { &pool.generated } else { &pool.real };
        x.row_mut(r).assign(&source.image(i).mapv(f64::from));
        y.push(source.label(i).expect("pool is labeled"));
    }
    (x, y)
}

/// `v = momentum * v + g; theta -= lr * v`. The classifier is left untouched
/// if the step would make any parameter non-finite.
fn step(clf: &mut MlpClassifier, velocity: &mut Option<MlpGradient>, grad: MlpGradient, sched: &TrainSchedule) -> Result<()> {
    let v = match velocity.take() {
        None => grad,
        Some(mut v) => {
            let m = sched.momentum;
            for k in 0..v.hidden_weights.len() {
                v.hidden_weights[k] = &v.hidden_weights[k] * m + &grad.hidden_weights[k];
                v.gamma[k] = &v.gamma[k] * m + &grad.gamma[k];
                v.beta[k] = &v.beta[k] * m + &grad.beta[k];
            }
            v.output_weights = &v.output_weights * m + &grad.output_weights;
            v.output_bias = &v.output_bias * m + &grad.output_bias;
            v
        }
    };
    let finite = v.hidden_weights.iter().all(all_finite)
        && v.gamma.iter().all(all_finite)
        && v.beta.iter().all(all_finite)
        && all_finite(&v.output_weights)
        && all_finite(&v.output_bias);
    if !finite {
        return Err(Error::NonFiniteUpdate("classifier momentum step".into()));
    }
    let lr = sched.learning_rate;
    for (k, layer) in clf.hidden.iter_mut().enumerate() {
        layer.weights.scaled_add(-lr, &v.hidden_weights[k]);
        layer.gamma.scaled_add(-lr, &v.gamma[k]);
        layer.beta.scaled_add(-lr, &v.beta[k]);
    }
    clf.output_weights.scaled_add(-lr, &v.output_weights);
    clf.output_bias.scaled_add(-lr, &v.output_bias);
    *velocity = Some(v);
    Ok(())
}

/// Percentage of `test` misclassified by the Eval-mode argmax.
pub fn evaluate(clf: &MlpClassifier, test: &BinaryDataset) -> Result<f64> {
    let labels = test.labels().ok_or(Error::MissingLabels("test set"))?;
    if test.is_empty() {
        return Ok(0.0);
    }
    let predicted = predict_u8_rows(clf, test.images())?;
    let wrong = predicted.iter().zip(labels).filter(|(p, l)| p != l).count();
    Ok(100.0 * wrong as f64 / test.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::tests::synthetic_pool;
    use crate::data::{NUM_CLASSES, PIXELS};
    use crate::labeler::tests::constant_classifier;
    use ndarray::Array2;

    fn toy_schedule(seed: u64) -> TrainSchedule {
        let mut s = TrainSchedule::new(Architecture::Custom(vec![PIXELS, 16, NUM_CLASSES]), seed);
        s.epochs = 5;
        s
    }

    fn toy_chains(labeled: &BinaryDataset, length: usize) -> Vec<SampleChain> {
        (0..labeled.len())
            .map(|i| SampleChain {
                seed_index: i,
                seed_label: labeled.label(i).unwrap(),
                samples: Array2::from_shape_fn((length, PIXELS), |(r, c)| ((r * 31 + c * 7 + i) % 3 == 0) as u8),
            })
            .collect()
    }

    #[test]
    fn one_group_per_seed_merges_up_to_min_batch() {
        let groups: Vec<Vec<(bool, usize)>> = (0..10).map(|s| vec![(false, s)]).collect();
        let batches = compose_batches(groups, &BatchPolicy::default(), &mut rng::seeded(0));
        assert_eq!(batches.len(), 1);
        assert_eq!(batches[0].len(), 10);

        let groups: Vec<Vec<(bool, usize)>> = (0..3)
            .map(|s| std::iter::once((false, s)).chain((0..500).map(|g| (true, s * 500 + g))).collect())
            .collect();
        let batches = compose_batches(groups, &BatchPolicy::default(), &mut rng::seeded(0));
        assert_eq!(batches.iter().map(Vec::len).collect::<Vec<_>>(), vec![501, 501, 501]);
    }

    #[test]
    fn oversized_batches_split_evenly_and_small_tails_merge() {
        let policy = BatchPolicy {
            seeds_per_batch: 10,
            min_batch: 10,
            max_batch: 1000,
        };
        let big: Vec<(bool, usize)> = (0..2500).map(|g| (true, g)).collect();
        let tail = vec![(false, 0), (false, 1)];
        let batches = compose_batches(vec![big, tail], &policy, &mut rng::seeded(3));
        let sizes: Vec<usize> = batches.iter().map(Vec::len).collect();
        assert_eq!(sizes, vec![834, 834, 834]);
        let mut all: Vec<(bool, usize)> = batches.concat();
        all.sort();
        assert_eq!(all.len(), 2502);
        all.dedup();
        assert_eq!(all.len(), 2502);
    }

    #[test]
    fn training_is_deterministic_and_learns_the_toy_set() {
        let labeled = synthetic_pool(20, 4);
        let mut sched = toy_schedule(9);
        sched.epochs = 60;
        let a = train_classifier(&labeled, &[], FilterMode::All, &sched).unwrap();
        let b = train_classifier(&labeled, &[], FilterMode::All, &sched).unwrap();
        assert_eq!(a.classifier.to_bytes(), b.classifier.to_bytes());
        assert!(a.keep.is_empty());
        assert!(a.losses.last().unwrap() < &a.losses[0]);
        assert!(evaluate(&a.classifier, &labeled).unwrap() < 10.0);
    }

    #[test]
    fn empty_chains_match_no_chains_exactly() {
        let labeled = synthetic_pool(10, 5);
        let sched = toy_schedule(2);
        let plain = train_classifier(&labeled, &[], FilterMode::self_filtered(), &sched).unwrap();
        let empty = train_classifier(&labeled, &toy_chains(&labeled, 0), FilterMode::self_filtered(), &sched).unwrap();
        assert_eq!(plain.classifier.to_bytes(), empty.classifier.to_bytes());
        assert_eq!(plain.losses, empty.losses);
    }

    #[test]
    fn self_filtering_reports_keep_statistics() {
        let labeled = synthetic_pool(10, 6);
        let chains = toy_chains(&labeled, 30);
        let mut sched = toy_schedule(4);
        sched.epochs = 8;
        let mut seen = Vec::new();
        let out = train_classifier_observed(
            &labeled,
            &chains,
            FilterMode::SelfFiltered { warmup_epochs: 3 },
            &sched,
            &mut |k| seen.push(k.clone()),
        )
        .unwrap();
        assert_eq!(seen, out.keep);
        assert_eq!(out.keep.len(), 8);
        for k in &out.keep[..3] {
            assert_eq!((k.kept, k.total), (300, 300));
        }
        for k in &out.keep {
            assert_eq!(k.per_chain.len(), 10);
            assert_eq!(k.per_chain.iter().sum::<usize>(), k.kept);
        }
        let n = train_classifier(&labeled, &chains, FilterMode::All, &sched).unwrap();
        assert!(n.keep.iter().all(|k| k.fraction() == 1.0));
    }

    #[test]
    fn chains_must_point_at_labeled_seeds() {
        let labeled = synthetic_pool(10, 7);
        let mut chains = toy_chains(&labeled, 3);
        chains[0].seed_label = (chains[0].seed_label + 1) % 10;
        assert!(matches!(
            train_classifier(&labeled, &chains, FilterMode::All, &toy_schedule(1)),
            Err(Error::InvalidCounts(_))
        ));
        chains[0].seed_index = 99;
        assert!(train_classifier(&labeled, &chains, FilterMode::All, &toy_schedule(1)).is_err());
    }

    #[test]
    fn a_single_labeled_sample_cannot_fill_a_batch() {
        let labeled = synthetic_pool(1, 8);
        assert!(matches!(
            train_classifier(&labeled, &[], FilterMode::All, &toy_schedule(1)),
            Err(Error::BatchTooSmall(1))
        ));
    }

    #[test]
    fn evaluation_counts_misclassifications() {
        let test = synthetic_pool(100, 9);
        assert!((evaluate(&constant_classifier(3), &test).unwrap() - 90.0).abs() < 1e-12);
        assert!(matches!(
            evaluate(&constant_classifier(3), &test.without_labels()),
            Err(Error::MissingLabels(_))
        ));
    }
}
