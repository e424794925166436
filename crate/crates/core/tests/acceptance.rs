//! Acceptance suite. Runs every criterion and prints one PASS/FAIL line each.
//!
//! Criteria 1-7 and 11 are exact properties and fail the process when they
//! fail. Criteria 8-10 are directional comparisons on real MNIST at the
//! `desk` profile (quick generators, 50 classifier epochs, chain length 500,
//! R=3). Their verdict is printed but only fails the process when
//! `SGEN_ACCEPTANCE_STRICT=1`. `SGEN_ACCEPTANCE_PROFILE=full` switches them
//! to full-scale models. Without MNIST on disk, 8-11 are reported as SKIP.

use std::fs;
use std::path::{Path, PathBuf};
use std::time::{Duration, Instant};

use ndarray::{array, s, Array1, Array2};
use rand::Rng;

use sgen_core::data::{make_scenario, data_dir_or, BinaryDataset, Mnist, NUM_CLASSES, PIXELS};
use sgen_core::experiment::{
    emit_table, run_experiment, ExperimentConfig, ExperimentResult, FilterFlag, GeneratorKind, Profile, TableFormat,
};
use sgen_core::labeler::{filter_by_classifier, AugmentedBatch, FilterMode};
use sgen_core::mlp::{
    cross_entropy, train_classifier, Architecture, MlpClassifier, TrainSchedule,
};
use sgen_core::rbm::{train_rbm, RbmModel, RbmTrainConfig, Regime};
use sgen_core::sampler::{chain_rng, generate_chains, Generator, SampleChain};
use sgen_core::vae::{kl_to_standard_normal, train_vae, VaeModel, VaeTrainConfig};
use sgen_core::{math, rng};

#[derive(Clone, Copy, PartialEq)]
enum Verdict {
    Pass,
    Fail,
    Skip,
}

struct Outcome {
    id: u8,
    name: &'static str,
    verdict: Verdict,
    detail: String,
    elapsed: Duration,
    hard: bool,
}

fn verdict(ok: bool) -> Verdict {
    if ok {
        Verdict::Pass
    } else {
        Verdict::Fail
    }
}

fn run(id: u8, name: &'static str, hard: bool, f: impl FnOnce() -> (Verdict, String)) -> Outcome {
    let start = Instant::now();
    let (verdict, detail) = f();
    let out = Outcome {
        id,
        name,
        verdict,
        detail,
        elapsed: start.elapsed(),
        hard,
    };
    print_line(&out);
    out
}

fn print_line(o: &Outcome) {
    let tag = match o.verdict {
        Verdict::Pass => "PASS",
        Verdict::Fail => "FAIL",
        Verdict::Skip => "SKIP",
    };
    println!(
        "{tag} criterion {:>2} {:<28} {} [{:.1}s]",
        o.id,
        o.name,
        o.detail,
        o.elapsed.as_secs_f64()
    );
}

fn sigmoid(z: f64) -> f64 {
    1.0 / (1.0 + (-z).exp())
}

/// States of `n` binary units in counting order, bit 0 first.
fn states(n: usize) -> Vec<Vec<f64>> {
    (0..1usize << n)
        .map(|s| (0..n).map(|i| ((s >> i) & 1) as f64).collect())
        .collect()
}

fn state_index(x: &[f64]) -> usize {
    x.iter().enumerate().map(|(i, &v)| (v as usize) << i).sum()
}

/// `exp(b'x + c'h + h'Wx)` for one joint configuration.
fn boltzmann(w: &Array2<f64>, b: &Array1<f64>, c: &Array1<f64>, x: &[f64], h: &[f64]) -> f64 {
    let mut e = 0.0;
    for (i, &xi) in x.iter().enumerate() {
        e += b[i] * xi;
    }
    for (j, &hj) in h.iter().enumerate() {
        e += c[j] * hj;
        for (i, &xi) in x.iter().enumerate() {
            e += hj * w[[j, i]] * xi;
        }
    }
    e.exp()
}

/// Exact marginal `p(x)` by summing over every joint state.
fn enumerate_marginal(w: &Array2<f64>, b: &Array1<f64>, c: &Array1<f64>) -> Vec<f64> {
    let (hs, xs) = (states(w.nrows()), states(w.ncols()));
    let unnorm: Vec<f64> = xs
        .iter()
        .map(|x| hs.iter().map(|h| boltzmann(w, b, c, x, h)).sum())
        .collect();
    let z: f64 = unnorm.iter().sum();
    unnorm.iter().map(|u| u / z).collect()
}

/// Exact kernel `T(x'|x) = sum_h p(h|x) p(x'|h)` as `[from][to]`.
fn enumerate_kernel(w: &Array2<f64>, b: &Array1<f64>, c: &Array1<f64>) -> Vec<Vec<f64>> {
    let (hs, xs) = (states(w.nrows()), states(w.ncols()));
    let bern = |p: f64, v: f64| if v == 1.0 { p } else { 1.0 - p };
    xs.iter()
        .map(|x| {
            xs.iter()
                .map(|x2| {
                    hs.iter()
                        .map(|h| {
                            let ph: f64 = (0..h.len())
                                .map(|j| {
                                    let z = c[j] + (0..x.len()).map(|i| w[[j, i]] * x[i]).sum::<f64>();
                                    bern(sigmoid(z), h[j])
                                })
                                .product();
                            let px: f64 = (0..x2.len())
                                .map(|i| {
                                    let z = b[i] + (0..h.len()).map(|j| w[[j, i]] * h[j]).sum::<f64>();
                                    bern(sigmoid(z), x2[i])
                                })
                                .product();
                            ph * px
                        })
                        .sum()
                })
                .collect()
        })
        .collect()
}

fn random_rbm(visible: usize, hidden: usize, scale: f64, r: &mut rng::SeedRng) -> RbmModel {
    let mut u = || r.random_range(-scale..scale);
    RbmModel::new(
        Array2::from_shape_simple_fn((hidden, visible), &mut u),
        Array1::from_shape_simple_fn(visible, &mut u),
        Array1::from_shape_simple_fn(hidden, &mut u),
    )
    .unwrap()
}

fn criterion_1() -> (Verdict, String) {
    const MODELS: usize = 20;
    const DRAWS_PER_START: usize = 250_000;
    let mut r = rng::seeded(101);
    let (mut worst_p, mut worst_t) = (0.0f64, 0.0f64);
    for m in 0..MODELS {
        let model = random_rbm(2, 2, 2.0, &mut r);
        let (w, b, c) = (model.weights(), model.visible_bias(), model.hidden_bias());
        let exact = enumerate_marginal(w, b, c);
        let xs = states(2);
        let unnorm: Vec<f64> = xs
            .iter()
            .map(|x| (-model.free_energy(Array1::from(x.clone()).view()).unwrap()).exp())
            .collect();
        let z: f64 = unnorm.iter().sum();
        for (u, e) in unnorm.iter().zip(&exact) {
            worst_p = worst_p.max((u / z - e).abs());
        }

        let kernel = enumerate_kernel(w, b, c);
        let gen = Generator::Rbm(model.clone());
        let mut chain_r = rng::derived(101, &["kernel".into(), m.into()]);
        for (from, x) in xs.iter().enumerate() {
            let x = Array1::from(x.clone());
            let mut counts = [0usize; 4];
            for _ in 0..DRAWS_PER_START {
                let next = gen.transition(x.view(), &mut chain_r).unwrap();
                counts[state_index(next.as_slice().unwrap())] += 1;
            }
            for (to, &n) in counts.iter().enumerate() {
                worst_t = worst_t.max((n as f64 / DRAWS_PER_START as f64 - kernel[from][to]).abs());
            }
        }
    }
    (
        verdict(worst_p < 1e-10 && worst_t < 0.005),
        format!(
            "{MODELS} models: max |p - enum| = {worst_p:.2e} (tol 1e-10), max kernel dev = {worst_t:.4} over {} draws/model (tol 0.005)",
            4 * DRAWS_PER_START
        ),
    )
}

fn criterion_2() -> (Verdict, String) {
    const BURN_IN: usize = 1_000;
    const STEPS: usize = 200_000;
    let model = RbmModel::new(
        array![[1.2, -0.8, 0.5], [-0.6, 0.9, -1.1]],
        array![-0.3, 0.4, 0.1],
        array![0.2, -0.5],
    )
    .unwrap();
    let exact = enumerate_marginal(model.weights(), model.visible_bias(), model.hidden_bias());
    let gen = Generator::Rbm(model);
    let seed = Array1::<u8>::zeros(3);
    let chain = gen.generate_chain(seed.view(), BURN_IN + STEPS, &mut chain_rng(202, 0, 0)).unwrap();
    let mut counts = vec![0usize; exact.len()];
    for row in chain.slice(s![BURN_IN.., ..]).rows() {
        let x: Vec<f64> = row.iter().map(|&v| f64::from(v)).collect();
        counts[state_index(&x)] += 1;
    }
    let tv = 0.5
        * counts
            .iter()
            .zip(&exact)
            .map(|(&n, p)| (n as f64 / STEPS as f64 - p).abs())
            .sum::<f64>();
    (verdict(tv < 0.02), format!("3x2 RBM, {STEPS} steps after {BURN_IN} discarded: TV = {tv:.5} (tol 0.02)"))
}

fn rel_err(numeric: f64, analytic: f64) -> f64 {
    (numeric - analytic).abs() / numeric.abs().max(analytic.abs()).max(1e-6)
}

fn vae_fd_error() -> f64 {
    let mut r = rng::seeded(303);
    let mut m = VaeModel::init(6, 5, 3, &mut r);
    for layer in m.layers_mut() {
        layer.bias.mapv_inplace(|_| r.random_range(-0.5..0.5));
    }
    let x = Array2::from_shape_fn((4, 6), |_| f64::from(u8::from(r.random_bool(0.5))));
    let noise = math::standard_normal(4, 3, &mut r);
    let (_, grad) = m.elbo_and_grad(&x, &noise).unwrap();
    let step = 1e-5;
    let elbo = |m: &VaeModel| m.elbo_with_noise(&x, &noise).unwrap().elbo;
    let mut worst: f64 = 0.0;
    for l in 0..5 {
        let (rows, cols) = m.layers()[l].weights.dim();
        for i in 0..rows {
            for j in 0..=cols {
                let (mut plus, mut minus) = (m.clone(), m.clone());
                let analytic = if j < cols {
                    plus.layers_mut()[l].weights[[i, j]] += step;
                    minus.layers_mut()[l].weights[[i, j]] -= step;
                    grad.layers()[l].weights[[i, j]]
                } else {
                    plus.layers_mut()[l].bias[i] += step;
                    minus.layers_mut()[l].bias[i] -= step;
                    grad.layers()[l].bias[i]
                };
                let numeric = (elbo(&plus) - elbo(&minus)) / (2.0 * step);
                worst = worst.max(rel_err(numeric, analytic));
            }
        }
    }
    worst
}

fn mlp_fd_error() -> (f64, bool) {
    let mut r = rng::seeded(304);
    let mut clf = MlpClassifier::init(Architecture::Custom(vec![5, 4, 3, 3]), 0.5, 0.3, &mut r).unwrap();
    for l in &mut clf.hidden {
        l.gamma.mapv_inplace(|_| r.random_range(0.5..1.5));
        l.beta.mapv_inplace(|_| r.random_range(-0.5..0.5));
    }
    clf.output_bias.mapv_inplace(|_| r.random_range(-0.5..0.5));
    let x = Array2::from_shape_fn((6, 5), |_| f64::from(u8::from(r.random_bool(0.5))));
    let labels = [0u8, 1, 2, 1, 0, 2];
    let draws = clf.draw(6, &mut r);
    let dropped = draws.dropout_masks.iter().any(|m| m.iter().any(|&v| v == 0.0));
    let (_, grad, _) = clf.loss_and_grad_with(&x, &labels, &draws).unwrap();
    let step = 1e-5;
    let loss = |c: &MlpClassifier| cross_entropy(&c.forward_with(&x, &draws).unwrap(), &labels);
    let probe = |f: &dyn Fn(&mut MlpClassifier, f64)| {
        let (mut plus, mut minus) = (clf.clone(), clf.clone());
        f(&mut plus, step);
        f(&mut minus, -step);
        (loss(&plus) - loss(&minus)) / (2.0 * step)
    };
    let mut worst: f64 = 0.0;
    for k in 0..clf.hidden.len() {
        let (rows, cols) = clf.hidden[k].weights.dim();
        for i in 0..rows {
            for j in 0..cols {
                worst = worst.max(rel_err(probe(&|c, d| c.hidden[k].weights[[i, j]] += d), grad.hidden_weights[k][[i, j]]));
            }
            worst = worst.max(rel_err(probe(&|c, d| c.hidden[k].gamma[i] += d), grad.gamma[k][i]));
            worst = worst.max(rel_err(probe(&|c, d| c.hidden[k].beta[i] += d), grad.beta[k][i]));
        }
    }
    let (rows, cols) = clf.output_weights.dim();
    for i in 0..rows {
        for j in 0..cols {
            worst = worst.max(rel_err(probe(&|c, d| c.output_weights[[i, j]] += d), grad.output_weights[[i, j]]));
        }
        worst = worst.max(rel_err(probe(&|c, d| c.output_bias[i] += d), grad.output_bias[i]));
    }
    (worst, dropped)
}

fn criterion_3() -> (Verdict, String) {
    let vae = vae_fd_error();
    let (mlp, dropped) = mlp_fd_error();
    (
        verdict(vae < 1e-4 && mlp < 1e-4 && dropped),
        format!("max rel err: VAE ELBO {vae:.2e}, MLP loss {mlp:.2e} (dropout active: {dropped}) (tol 1e-4)"),
    )
}

fn criterion_4() -> (Verdict, String) {
    let kl0 = kl_to_standard_normal(array![0.0].view(), array![0.0].view());
    let kl1 = kl_to_standard_normal(array![1.0].view(), array![0.0].view());
    let ce = cross_entropy(&Array2::zeros((5, NUM_CLASSES)), &[0, 3, 9, 4, 4]);
    let decoder = VaeModel::zeros(PIXELS, 512, 20);
    let mut r = rng::seeded(404);
    let h = math::standard_normal(8, 20, &mut r);
    let probs = decoder.decode_rows(&h).unwrap();
    let half = probs.iter().all(|&p| p == 0.5);
    let ok = kl0.abs() <= 1e-12 && (kl1 - 0.5).abs() <= 1e-12 && (ce - 10f64.ln()).abs() <= 1e-12 && half;
    (
        verdict(ok),
        format!(
            "KL(0,0) = {kl0:e}, KL(1,0) = {kl1}, uniform CE - ln10 = {:.1e}, zero decoder all 0.5: {half}",
            ce - 10f64.ln()
        ),
    )
}

fn lcg(state: &mut u64) -> u64 {
    *state = state.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
    *state >> 33
}

/// Striped class-dependent binary images with 5% pixel noise.
fn synthetic(count: usize, seed: u64) -> BinaryDataset {
    let mut state = seed;
    let mut images = Array2::zeros((count, PIXELS));
    let mut labels = Vec::with_capacity(count);
    for i in 0..count {
        let class = i % NUM_CLASSES;
        labels.push(class as u8);
        for p in 0..PIXELS {
            let stripe = (p / 28) / 3 == class;
            let noise = lcg(&mut state) % 100 < 5;
            images[[i, p]] = u8::from(stripe ^ noise);
        }
    }
    BinaryDataset::new(images, Some(labels)).unwrap()
}

fn synthetic_mnist() -> Mnist {
    Mnist {
        train: synthetic(300, 1),
        test: synthetic(50, 2),
    }
}

fn tiny_config(kind: GeneratorKind, chain_length: usize, seed: u64) -> ExperimentConfig {
    let mut cfg = ExperimentConfig::new(
        100,
        10,
        kind,
        chain_length,
        FilterFlag::Y,
        Architecture::Custom(vec![PIXELS, 16, NUM_CLASSES]),
        seed,
    );
    cfg.replications = 2;
    cfg.rbm.hidden_units = 16;
    cfg.rbm.bad_epochs = 2;
    cfg.vae.hidden_units = 16;
    cfg.vae.epochs = 2;
    cfg.classifier.epochs = 6;
    cfg.labeler.warmup_epochs = 2;
    cfg
}

fn read_tree(root: &Path) -> Vec<(PathBuf, Vec<u8>)> {
    let mut out = Vec::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(dir) = stack.pop() {
        for entry in fs::read_dir(&dir).unwrap() {
            let path = entry.unwrap().path();
            if path.is_dir() {
                stack.push(path);
            } else if path.file_name().is_some_and(|n| n != "log.txt") {
                out.push((path.strip_prefix(root).unwrap().to_path_buf(), fs::read(&path).unwrap()));
            }
        }
    }
    out.sort();
    out
}

fn criterion_5() -> (Verdict, String) {
    let data = synthetic_mnist();
    let stage = |seed: u64| -> Vec<(&'static str, Vec<u8>)> {
        let split = make_scenario(&data.train, 100, 10, seed).unwrap();
        let pool = split.pool().without_labels();
        let mut rbm_cfg = RbmTrainConfig::for_regime(Regime::Bad, seed);
        rbm_cfg.hidden_units = 16;
        let rbm = train_rbm(&pool, &rbm_cfg).unwrap().model;
        let vae_cfg = VaeTrainConfig {
            hidden_units: 16,
            latent_dim: 4,
            epochs: 2,
            seed,
            ..VaeTrainConfig::default()
        };
        let vae = train_vae(&pool, &vae_cfg).unwrap().model;
        let labels = split.labeled.labels().unwrap();
        let seeds = (0..split.labeled.len()).map(|i| (i, split.labeled.image(i), labels[i]));
        let chains = generate_chains(&Generator::Rbm(rbm.clone()), seeds, 20, 1, seed).unwrap();
        let mut sched = TrainSchedule::new(Architecture::Custom(vec![PIXELS, 16, NUM_CLASSES]), seed);
        sched.epochs = 6;
        let clf = train_classifier(&split.labeled, &chains, FilterMode::SelfFiltered { warmup_epochs: 2 }, &sched)
            .unwrap()
            .classifier;
        let mut chain_bytes = Vec::new();
        for c in &chains {
            chain_bytes.extend(c.to_bytes().unwrap());
        }
        vec![
            ("scenario", split.manifest().to_toml().into_bytes()),
            ("rbm", rbm.to_bytes()),
            ("vae", vae.to_bytes()),
            ("chains", chain_bytes),
            ("classifier", clf.to_bytes()),
        ]
    };
    let (a, b, other) = (stage(55), stage(55), stage(56));
    let mut mismatched: Vec<&str> = a.iter().zip(&b).filter(|(x, y)| x.1 != y.1).map(|(x, _)| x.0).collect();
    let seed_sensitive = a.iter().zip(&other).all(|(x, y)| x.1 != y.1);

    let tmp = tempfile::tempdir().unwrap();
    let cfg = tiny_config(GeneratorKind::Vae, 20, 57);
    let (dir_a, dir_b) = (tmp.path().join("a"), tmp.path().join("b"));
    run_experiment(&cfg, &data, Some(&dir_a)).unwrap();
    run_experiment(&cfg, &data, Some(&dir_b)).unwrap();
    let (tree_a, tree_b) = (read_tree(&dir_a), read_tree(&dir_b));
    if tree_a != tree_b {
        mismatched.push("experiment directory");
    }
    (
        verdict(mismatched.is_empty() && seed_sensitive),
        format!(
            "scenario, RBM, VAE, chains, classifier and {} experiment files byte-identical across reruns: {}; \
             a different seed changes every stage: {seed_sensitive}",
            tree_a.len(),
            if mismatched.is_empty() { "yes".to_string() } else { format!("no ({})", mismatched.join(", ")) }
        ),
    )
}

/// Scores class `c` by the number of set pixels in rows `[78c, 78c + 78)`.
fn block_count_classifier() -> MlpClassifier {
    let mut w = Array2::zeros((NUM_CLASSES, PIXELS));
    for c in 0..NUM_CLASSES {
        w.slice_mut(s![c, 78 * c..78 * (c + 1)]).fill(1.0);
    }
    MlpClassifier {
        architecture: Architecture::Custom(vec![PIXELS, NUM_CLASSES]),
        hidden: Vec::new(),
        output_weights: w,
        output_bias: Array1::zeros(NUM_CLASSES),
        dropout_rate: 0.5,
        input_noise_sigma: 0.3,
    }
}

/// Hand-computable label of the block-count classifier: most set pixels
/// wins, the lower class on ties.
fn block_count_oracle(row: &[u8]) -> u8 {
    let counts: Vec<usize> = (0..NUM_CLASSES)
        .map(|c| row[78 * c..78 * (c + 1)].iter().map(|&v| usize::from(v)).sum())
        .collect();
    let best = *counts.iter().max().unwrap();
    counts.iter().position(|&n| n == best).unwrap() as u8
}

fn criterion_6() -> (Verdict, String) {
    let mut r = rng::seeded(606);
    let n = 400;
    let mut images = Array2::zeros((n, PIXELS));
    for i in 0..n {
        // Sparse rows make ties, the all-zero row among them.
        let density = if i % 5 == 0 { 0.0 } else { r.random_range(0.0..0.2) };
        for p in 0..PIXELS {
            images[[i, p]] = u8::from(r.random_bool(density));
        }
    }
    let labels: Vec<u8> = (0..n).map(|_| r.random_range(0..NUM_CLASSES as u8)).collect();
    let samples = BinaryDataset::new(images.clone(), Some(labels.clone())).unwrap();
    let clf = block_count_classifier();
    let oracle: Vec<bool> = (0..n)
        .map(|i| block_count_oracle(images.row(i).as_slice().unwrap()) == labels[i])
        .collect();
    let expected_kept = oracle.iter().filter(|&&k| k).count();

    let mode_y = FilterMode::SelfFiltered { warmup_epochs: 5 };
    let mut all_n = true;
    for epoch in [0, 5, 17] {
        all_n &= filter_by_classifier(&samples, &clf, epoch, FilterMode::All).unwrap().iter().all(|&k| k);
    }
    let y_mask = filter_by_classifier(&samples, &clf, 5, mode_y).unwrap();
    let y_exact = y_mask == oracle;

    // The same decision through the training-time batch, one chain per label.
    let real = samples.subset(&(0..NUM_CLASSES).collect::<Vec<_>>());
    let chains: Vec<SampleChain> = (0..NUM_CLASSES as u8)
        .map(|label| {
            let rows: Vec<usize> = (0..n).filter(|&i| i % NUM_CLASSES == label as usize).collect();
            SampleChain {
                seed_index: label as usize,
                seed_label: label,
                samples: images.select(ndarray::Axis(0), &rows),
            }
        })
        .collect();
    let chain_oracle: usize = chains
        .iter()
        .map(|c| {
            c.samples
                .rows()
                .into_iter()
                .filter(|row| block_count_oracle(row.as_slice().unwrap()) == c.seed_label)
                .count()
        })
        .sum();
    let mut real_labeled = real.clone();
    real_labeled = real_labeled.with_labels((0..NUM_CLASSES as u8).collect()).unwrap();
    let refs: Vec<(usize, &SampleChain)> = chains.iter().map(|c| (c.seed_index, c)).collect();
    let mut batch = AugmentedBatch::new(real_labeled, &refs).unwrap();
    batch.refilter(&clf, 5, mode_y).unwrap();
    let batch_exact = batch.kept_count() == chain_oracle;

    (
        verdict(all_n && y_exact && batch_exact && expected_kept > 0 && expected_kept < n),
        format!(
            "mode n keeps all: {all_n}; mode y mask equals oracle on {n} samples ({expected_kept} kept): {y_exact}; \
             batch refilter keeps {} of oracle {chain_oracle}",
            batch.kept_count()
        ),
    )
}

fn criterion_7() -> (Verdict, String) {
    let data = synthetic_mnist();
    let tmp = tempfile::tempdir().unwrap();
    let cfg = tiny_config(GeneratorKind::BRbm, 0, 77);
    let result = run_experiment(&cfg, &data, Some(tmp.path())).unwrap();
    let mut identical = true;
    for r in 0..cfg.replications {
        let rep = tmp.path().join(format!("rep-{r}"));
        identical &= fs::read(rep.join("baseline.mlp")).unwrap() == fs::read(rep.join("augmented.mlp")).unwrap();
    }
    let errors_equal = result
        .replications
        .iter()
        .all(|r| r.error.to_bits() == r.baseline_error.to_bits());
    (
        verdict(identical && errors_equal),
        format!(
            "{} replications: classifier bytes identical: {identical}; error bits equal: {errors_equal}",
            cfg.replications
        ),
    )
}

fn criterion_11(data: &Mnist) -> (Verdict, String) {
    let in_range = |d: &BinaryDataset| d.labels().is_some_and(|l| l.iter().all(|&v| v < 10));
    let binary = data.train.images().iter().chain(data.test.images().iter()).all(|&v| v <= 1);
    let ok = data.train.len() == 60_000 && data.test.len() == 10_000 && in_range(&data.train) && in_range(&data.test);
    (
        verdict(ok && binary),
        format!(
            "train {} / test {}, labels in 0..=9: {}, pixels binary: {binary}",
            data.train.len(),
            data.test.len(),
            in_range(&data.train) && in_range(&data.test)
        ),
    )
}

struct Cell {
    result: ExperimentResult,
    elapsed: Duration,
}

fn mnist_cell(data: &Mnist, kind: GeneratorKind, filter: FilterFlag, full: bool, out_root: &Path) -> Cell {
    let mut cfg = ExperimentConfig::new(100, 10, kind, 500, filter, Architecture::Fc1, 7);
    if !full {
        Profile::Quick.apply(&mut cfg);
        cfg.generator.chain_length = 500;
    }
    let dir = out_root.join(format!("{}-{}", kind.label(), filter.as_str()));
    let start = Instant::now();
    let result = run_experiment(&cfg, data, Some(&dir)).unwrap();
    println!(
        "      {}-500-{}: mean {:.2} (sd {:.2}) over {:?}; baseline {:.2} (sd {:.2}) [{:.0}s]",
        kind.label(),
        filter.as_str(),
        result.mean_error,
        result.std_error,
        result.replications.iter().map(|r| r.error).collect::<Vec<_>>(),
        result.baseline_mean,
        result.baseline_std,
        start.elapsed().as_secs_f64()
    );
    Cell {
        result,
        elapsed: start.elapsed(),
    }
}

fn main() {
    let strict = std::env::var("SGEN_ACCEPTANCE_STRICT").is_ok_and(|v| v == "1");
    let full = std::env::var("SGEN_ACCEPTANCE_PROFILE").is_ok_and(|v| v == "full");
    let mut outcomes = vec![
        run(1, "tiny-RBM enumeration", true, || {
            let start = Instant::now();
            let (v, d) = criterion_1();
            let fast = start.elapsed() < Duration::from_secs(60);
            (if fast { v } else { Verdict::Fail }, format!("{d}, under 1 min: {fast}"))
        }),
        run(2, "chain stationarity", true, || {
            let start = Instant::now();
            let (v, d) = criterion_2();
            let fast = start.elapsed() < Duration::from_secs(60);
            (if fast { v } else { Verdict::Fail }, format!("{d}, under 1 min: {fast}"))
        }),
        run(3, "gradient checks", true, || {
            let start = Instant::now();
            let (v, d) = criterion_3();
            let fast = start.elapsed() < Duration::from_secs(60);
            (if fast { v } else { Verdict::Fail }, format!("{d}, under 1 min: {fast}"))
        }),
        run(4, "analytic anchors", true, criterion_4),
        run(5, "determinism", true, criterion_5),
        run(6, "labeling semantics", true, criterion_6),
        run(7, "degenerate augmentation", true, criterion_7),
    ];

    let manifest_dir = Path::new(env!("CARGO_MANIFEST_DIR"));
    let data_dir = data_dir_or(manifest_dir.join("../../data/mnist"));
    match Mnist::load(&data_dir) {
        Err(e) => {
            let detail = format!("MNIST not available at {} ({e})", data_dir.display());
            for (id, name, hard) in [
                (8, "B-RBM-y beats baseline", false),
                (9, "B-RBM-y vs G-RBM-y", false),
                (10, "VAE-n vs VAE-y", false),
                (11, "MNIST ingestion", true),
            ] {
                let o = Outcome {
                    id,
                    name,
                    verdict: Verdict::Skip,
                    detail: detail.clone(),
                    elapsed: Duration::ZERO,
                    hard,
                };
                print_line(&o);
                outcomes.push(o);
            }
        }
        Ok(data) => {
            outcomes.push(run(11, "MNIST ingestion", true, || criterion_11(&data)));
            let profile = if full { "full" } else { "desk" };
            let out_root = Path::new(env!("CARGO_TARGET_TMPDIR")).join(format!("acceptance-{profile}"));
            println!("      MNIST cells, {profile} profile, outputs in {}", out_root.display());
            let by = mnist_cell(&data, GeneratorKind::BRbm, FilterFlag::Y, full, &out_root);
            let target = Duration::from_secs(if full { 45 * 60 } else { 10 * 60 });
            let gap = by.result.baseline_mean - by.result.mean_error;
            let on_time = by.elapsed < target;
            outcomes.push(run(8, "B-RBM-y beats baseline", false, || {
                (
                    verdict(gap >= 3.0 && on_time),
                    format!(
                        "B-RBM-y {:.2} vs baseline {:.2}: improvement {gap:.2} points (need >= 3); runtime {:.1} min (target < {} min)",
                        by.result.mean_error,
                        by.result.baseline_mean,
                        by.elapsed.as_secs_f64() / 60.0,
                        target.as_secs() / 60
                    ),
                )
            }));
            let gy = mnist_cell(&data, GeneratorKind::GRbm, FilterFlag::Y, full, &out_root);
            outcomes.push(run(9, "B-RBM-y vs G-RBM-y", false, || {
                let (b, g) = (by.result.mean_error, gy.result.mean_error);
                (verdict(b <= g + 1.0), format!("B-RBM-y {b:.2} vs G-RBM-y {g:.2} (need B <= G + 1)"))
            }));
            let vy = mnist_cell(&data, GeneratorKind::Vae, FilterFlag::Y, full, &out_root);
            let vn = mnist_cell(&data, GeneratorKind::Vae, FilterFlag::N, full, &out_root);
            outcomes.push(run(10, "VAE-n vs VAE-y", false, || {
                let (n, y) = (vn.result.mean_error, vy.result.mean_error);
                (verdict(n < y), format!("VAE-n {n:.2} vs VAE-y {y:.2} (need n < y)"))
            }));
            let cells = [by.result, gy.result, vy.result, vn.result];
            match emit_table(&cells, TableFormat::Markdown) {
                Ok(table) => {
                    for line in table.lines() {
                        println!("      {line}");
                    }
                }
                Err(e) => println!("      table unavailable: {e}"),
            }
        }
    }

    let count = |v: Verdict| outcomes.iter().filter(|o| o.verdict == v).count();
    println!(
        "acceptance: {} passed, {} failed, {} skipped",
        count(Verdict::Pass),
        count(Verdict::Fail),
        count(Verdict::Skip)
    );
    let fatal: Vec<u8> = outcomes
        .iter()
        .filter(|o| o.verdict == Verdict::Fail && (o.hard || strict))
        .map(|o| o.id)
        .collect();
    if !fatal.is_empty() {
        println!("acceptance: failing criteria {fatal:?}");
        std::process::exit(1);
    }
}
