//! Acceptance suite: one test per criterion, each printing a PASS/FAIL line.
//!
//! The heavyweight criteria share a single fixture: a 10-class synthetic
//! digit-style image corpus written to IDX files, a [784, 64, 32, 10] MLP,
//! a T=10 pruning run for the schedule/pooling checks, and three lighter
//! seed-paired runs (rewinding vs rewind-to-init) for the qualitative
//! contrasts. Tests in this binary run sequentially, so wall-clock budgets
//! are measured per stage.

use std::sync::OnceLock;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use lotpool::analysis::{ablate, adjacent_pair_mean, ensemble_comparison, pairwise_heatmap, AblationMode};
use lotpool::baselines::{ema_pool, swa_pool, SwaState};
use lotpool::data::{load_idx, split, write_idx, Dataset};
use lotpool::error::Error;
use lotpool::imp::{run_imp, ImpConfig, ImpRun, RewindMode};
use lotpool::model::{evaluate, init_params, loss_and_grads, Batch, MlpConfig};
use lotpool::pools::{
    greedy_pool_search, pool_average, pool_interpolate, CoefficientPool, PoolResult, PruneMode,
};
use lotpool::pruning::{prune_to_count, prune_to_density};
use lotpool::store::{load_checkpoint, save_checkpoint, Checkpoint, CheckpointMeta};
use lotpool::tensor::{lerp, ParamSet, Tensor};
use lotpool::training::TrainConfig;

const SIDE: usize = 28;
const CLASSES: usize = 10;

fn report(criterion: u32, name: &str, ok: bool) {
    println!(
        "acceptance {criterion:02} {name}: {}",
        if ok { "PASS" } else { "FAIL" }
    );
}

/// Synthetic digit-style images: each class is a Gaussian blob at a
/// class-specific position on a ring, with positional jitter, heavy pixel
/// noise, and a slice of label noise so checkpoints have headroom and
/// seed-to-seed variance.
fn synth_digit_images(n: usize, seed: u64) -> Dataset {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let d = SIDE * SIDE;
    let mut features = Vec::with_capacity(n * d);
    let mut labels = Vec::with_capacity(n);
    let radius = 7.0;
    let sigma = 3.0;
    for i in 0..n {
        let class = i % CLASSES;
        let angle = std::f64::consts::TAU * class as f64 / CLASSES as f64;
        let cx = 14.0 + radius * angle.cos() + rng.gen_range(-3.0..3.0);
        let cy = 14.0 + radius * angle.sin() + rng.gen_range(-3.0..3.0);
        for y in 0..SIDE {
            for x in 0..SIDE {
                let dx = x as f64 - cx;
                let dy = y as f64 - cy;
                let bump = (-(dx * dx + dy * dy) / (2.0 * sigma * sigma)).exp();
                let noise: f64 = rng.sample::<f64, _>(StandardNormal) * 0.30;
                features.push((bump + noise).clamp(0.0, 1.0) as f32);
            }
        }
        let label = if rng.gen_range(0.0..1.0) < 0.10 {
            rng.gen_range(0..CLASSES)
        } else {
            class
        };
        labels.push(label);
    }
    Dataset::new(Tensor::new(vec![n, d], features).unwrap(), labels, CLASSES).unwrap()
}

fn fixture_train_config(init_like_seed: u64) -> TrainConfig {
    TrainConfig {
        epochs: 6,
        batch_size: 64,
        base_lr: 0.2,
        lr_drop_factor: 10.0,
        lr_drop_epochs: vec![3],
        warmup_epochs: 0,
        momentum: 0.9,
        weight_decay: 1e-4,
        rewind_epoch: 3,
        shuffle_seed: 200 + init_like_seed,
    }
}

fn fixture_imp_config(iterations: usize, seed: u64, mode: RewindMode) -> ImpConfig {
    ImpConfig {
        model: MlpConfig {
            layer_sizes: vec![784, 64, 32, 10],
            init_seed: 100 + seed,
        },
        train: fixture_train_config(seed),
        iterations,
        prune_fraction: 0.2,
        rewind_mode: mode,
    }
}

struct SeedPair {
    rewind: ImpRun,
    init: ImpRun,
    val: Dataset,
}

struct Fixture {
    val: Dataset,
    test: Dataset,
    main_run: ImpRun,
    main_secs: f64,
    /// Per-t interpolation results over the main run (full candidate pool,
    /// 11 coefficients, prune-during).
    pooled_main: Vec<PoolResult>,
    seed_pairs: Vec<SeedPair>,
    seed_secs: f64,
}

fn fixture() -> &'static Fixture {
    static FIXTURE: OnceLock<Fixture> = OnceLock::new();
    FIXTURE.get_or_init(build_fixture)
}

fn build_fixture() -> Fixture {
    // Write the corpus through the IDX container and load it back, so the
    // pipeline under test is the same one the CLI exercises.
    let dir = tempfile::tempdir().expect("tempdir");
    let train_images = dir.path().join("train-images.idx");
    let train_labels = dir.path().join("train-labels.idx");
    let test_images = dir.path().join("test-images.idx");
    let test_labels = dir.path().join("test-labels.idx");
    let corpus = synth_digit_images(6000, 42);
    write_idx(&corpus, &train_images, &train_labels, SIDE, SIDE).unwrap();
    let test_corpus = synth_digit_images(1000, 43);
    write_idx(&test_corpus, &test_images, &test_labels, SIDE, SIDE).unwrap();

    let base = load_idx(&train_images, &train_labels)
        .unwrap()
        .take_first(5000)
        .unwrap();
    let test = load_idx(&test_images, &test_labels).unwrap();
    let (train, val) = split(&base, 0.1, 5).unwrap();

    let t0 = Instant::now();
    let main_run = run_imp(&fixture_imp_config(10, 0, RewindMode::ToEpoch), &train, &val)
        .expect("main fixture run");
    let main_secs = t0.elapsed().as_secs_f64();

    let coeffs = CoefficientPool::default_eleven();
    let pooled_main: Vec<PoolResult> = (0..=main_run.t_max())
        .map(|t| {
            pool_interpolate(&main_run, t, &coeffs, &val, PruneMode::During, None)
                .expect("pooling the main run")
        })
        .collect();

    let t0 = Instant::now();
    let seed_pairs: Vec<SeedPair> = (1..=3u64)
        .map(|seed| {
            let (seed_train, seed_val) = split(&base, 0.1, 500 + seed).unwrap();
            let rewind = run_imp(
                &fixture_imp_config(6, seed, RewindMode::ToEpoch),
                &seed_train,
                &seed_val,
            )
            .expect("seed rewind run");
            let init = run_imp(
                &fixture_imp_config(6, seed, RewindMode::ToInit),
                &seed_train,
                &seed_val,
            )
            .expect("seed init run");
            SeedPair {
                rewind,
                init,
                val: seed_val,
            }
        })
        .collect();
    let seed_secs = t0.elapsed().as_secs_f64();

    Fixture {
        val,
        test,
        main_run,
        main_secs,
        pooled_main,
        seed_pairs,
        seed_secs,
    }
}

fn params_bits(p: &ParamSet) -> Vec<u32> {
    p.iter()
        .flat_map(|(_, t)| t.data().iter().map(|v| v.to_bits()))
        .collect()
}

#[test]
fn criterion_01_gradient_correctness() {
    let t0 = Instant::now();
    let config = MlpConfig {
        layer_sizes: vec![3, 4, 2],
        init_seed: 12,
    };
    let params = init_params(&config).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    let inputs: Vec<f32> = (0..8 * 3).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let labels: Vec<usize> = (0..8).map(|_| rng.gen_range(0..2)).collect();
    let batch = Batch::new(Tensor::new(vec![8, 3], inputs).unwrap(), labels).unwrap();
    let (_, grads) = loss_and_grads(&params, None, &batch).unwrap();

    let eps = 1e-3f32;
    let mut max_rel = 0.0f64;
    for ei in 0..params.entries().len() {
        for vi in 0..params.entries()[ei].1.len() {
            let orig = params.entries()[ei].1.data()[vi];
            let perturbed = |v: f32| {
                let mut entries: Vec<(String, Tensor)> = params.entries().to_vec();
                entries[ei].1.data_mut()[vi] = v;
                let p = ParamSet::new(entries).unwrap();
                let realized = p.entries()[ei].1.data()[vi];
                (p, realized)
            };
            let (plus, rp) = perturbed(orig + eps);
            let (minus, rm) = perturbed(orig - eps);
            let (lp, _) = loss_and_grads(&plus, None, &batch).unwrap();
            let (lm, _) = loss_and_grads(&minus, None, &batch).unwrap();
            let numeric = (lp - lm) / (f64::from(rp) - f64::from(rm));
            let analytic = f64::from(grads.entries()[ei].1.data()[vi]);
            max_rel = max_rel.max((analytic - numeric).abs() / (numeric.abs() + 1e-8));
        }
    }
    let secs = t0.elapsed().as_secs_f64();
    let ok = max_rel < 1e-3 && secs < 1.0;
    println!("  max relative error {max_rel:.3e}, {secs:.2}s");
    report(1, "gradient correctness", ok);
    assert!(ok, "max rel {max_rel}, {secs}s");
}

#[test]
fn criterion_02_pruning_oracle_equivalence() {
    let t0 = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    for case in 0..100 {
        let rows = rng.gen_range(1..=100);
        let cols = rng.gen_range(1..=100);
        let w: Vec<f32> = (0..rows * cols).map(|_| rng.gen_range(-1.0f32..1.0)).collect();
        let b: Vec<f32> = (0..cols).map(|_| rng.gen_range(-1.0f32..1.0)).collect();
        let params = ParamSet::new(vec![
            ("w1".into(), Tensor::new(vec![rows, cols], w.clone()).unwrap()),
            ("b1".into(), Tensor::new(vec![cols], b).unwrap()),
        ])
        .unwrap();
        let density = rng.gen_range(0.05..1.0);
        let (_, mask) = prune_to_density(&params, density).unwrap();

        // Independent oracle: full sort of |w| with positional tie-break.
        let total = rows * cols;
        let keep = ((density * total as f64 + 0.5).floor() as usize).clamp(1, total);
        let mut order: Vec<usize> = (0..total).collect();
        order.sort_by(|&a, &b| w[a].abs().total_cmp(&w[b].abs()).then(a.cmp(&b)));
        let kept_oracle: std::collections::BTreeSet<usize> =
            order[total - keep..].iter().copied().collect();
        let kept_impl: std::collections::BTreeSet<usize> = mask.entries()[0]
            .1
            .data()
            .iter()
            .enumerate()
            .filter(|(_, &v)| v == 1.0)
            .map(|(i, _)| i)
            .collect();
        assert_eq!(kept_impl, kept_oracle, "case {case}");
    }
    let secs = t0.elapsed().as_secs_f64();
    let ok = secs < 5.0;
    println!("  100 instances in {secs:.2}s");
    report(2, "pruning oracle equivalence", ok);
    assert!(ok);
}

#[test]
fn criterion_03_imp_density_schedule() {
    let f = fixture();
    let total = f.main_run.checkpoints[0].mask.total_count() as f64;
    let mut worst = 0.0f64;
    for (t, ckpt) in f.main_run.checkpoints.iter().enumerate() {
        let scheduled = 0.8f64.powi(t as i32);
        let off_by_weights = (ckpt.mask.density() - scheduled).abs() * total;
        worst = worst.max(off_by_weights);
    }
    let ok = worst <= 1.0 && f.main_secs < 300.0;
    println!(
        "  worst schedule deviation {worst:.3} weights; run took {:.1}s",
        f.main_secs
    );
    report(3, "imp density schedule", ok);
    assert!(ok, "worst {worst} weights, {:.1}s", f.main_secs);
}

#[test]
fn criterion_04_greedy_monotonicity() {
    let f = fixture();
    let mut ok = true;
    for (t, pooled) in f.pooled_main.iter().enumerate() {
        let base = evaluate(&f.main_run.checkpoints[t].params, None, &f.val)
            .unwrap()
            .accuracy;
        println!(
            "  t={t}: original val {base:.4} -> pooled val {:.4}",
            pooled.val_accuracy
        );
        if pooled.val_accuracy < base {
            ok = false;
        }
    }
    report(4, "greedy monotonicity", ok);
    assert!(ok);
}

#[test]
fn criterion_05_reductions() {
    let f = fixture();
    let half = CoefficientPool::new(vec![0.5]).unwrap();
    let arm_rows = ablate(
        &f.main_run,
        AblationMode::CoeffCount,
        &[1],
        &f.val,
        &f.test,
    )
    .unwrap();
    let mut ok = true;
    for t in 0..=f.main_run.t_max() {
        let avg = pool_average(&f.main_run, t, &f.val).unwrap();
        let interp = pool_interpolate(&f.main_run, t, &half, &f.val, PruneMode::During, None)
            .unwrap();
        if params_bits(&interp.checkpoint.params) != params_bits(&avg.checkpoint.params)
            || interp.checkpoint.mask != avg.checkpoint.mask
        {
            println!("  t={t}: interpolate({{0.5}}) differs from average");
            ok = false;
        }
        let row = &arm_rows[t];
        if row.val_acc != avg.val_accuracy {
            println!("  t={t}: coeff-count arm 1 val acc differs from average");
            ok = false;
        }
    }
    report(5, "reductions bit-exact", ok);
    assert!(ok);
}

#[test]
fn criterion_06_sparsity_preservation() {
    let f = fixture();
    let mut ok = true;
    for (t, pooled) in f.pooled_main.iter().enumerate() {
        let target = f.main_run.checkpoints[t].mask.kept_count();
        if pooled.checkpoint.mask.kept_count() != target {
            println!("  pool t={t}: kept {} != {target}", pooled.checkpoint.mask.kept_count());
            ok = false;
        }
    }
    for t in [2usize, 5, 8] {
        let target = f.main_run.checkpoints[t].mask.kept_count();
        let swa = swa_pool(&f.main_run, t, &f.val).unwrap();
        let ema = ema_pool(&f.main_run, t, 0.95, &f.val).unwrap();
        for (label, got) in [
            ("swa", swa.checkpoint.mask.kept_count()),
            ("ema", ema.checkpoint.mask.kept_count()),
        ] {
            if got != target {
                println!("  {label} t={t}: kept {got} != {target}");
                ok = false;
            }
        }
    }
    report(6, "sparsity preservation", ok);
    assert!(ok);
}

#[test]
fn criterion_07_rewind_contrast() {
    let f = fixture();
    let t0 = Instant::now();
    let mut rewind_means = Vec::new();
    let mut init_means = Vec::new();
    for (i, pair) in f.seed_pairs.iter().enumerate() {
        let hr = pairwise_heatmap(&pair.rewind, &f.test).unwrap();
        let hi = pairwise_heatmap(&pair.init, &f.test).unwrap();
        let (mr, mi) = (adjacent_pair_mean(&hr), adjacent_pair_mean(&hi));
        println!("  seed {i}: adjacent-pair mean rewind {mr:.4} vs init {mi:.4}");
        rewind_means.push(mr);
        init_means.push(mi);
    }
    let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
    let (mr, mi) = (mean(&rewind_means), mean(&init_means));
    let total_secs = f.seed_secs + t0.elapsed().as_secs_f64();
    let ok = mr > mi && total_secs < 900.0;
    println!("  seed-mean rewind {mr:.4} vs init {mi:.4}; total {total_secs:.0}s");
    report(7, "rewinding heatmap contrast", ok);
    assert!(ok, "rewind {mr} vs init {mi}, {total_secs}s");
}

#[test]
fn criterion_08_pool_beats_original() {
    let f = fixture();
    let coeffs = CoefficientPool::default_eleven();
    let t_max = f.seed_pairs[0].rewind.t_max();
    let mut orig_sum = vec![0.0f64; t_max + 1];
    let mut pool_sum = vec![0.0f64; t_max + 1];
    for (i, pair) in f.seed_pairs.iter().enumerate() {
        for t in 0..=t_max {
            let orig = evaluate(&pair.rewind.checkpoints[t].params, None, &f.test)
                .unwrap()
                .accuracy;
            let pooled =
                pool_interpolate(&pair.rewind, t, &coeffs, &pair.val, PruneMode::During, None)
                    .unwrap();
            let pool = evaluate(&pooled.checkpoint.params, None, &f.test)
                .unwrap()
                .accuracy;
            println!(
                "  seed {i} t={t} density {:.3}: original {orig:.4} pooled {pool:.4} ({:+.4})",
                pair.rewind.checkpoints[t].mask.density(),
                pool - orig
            );
            orig_sum[t] += orig;
            pool_sum[t] += pool;
        }
    }
    let n_seeds = f.seed_pairs.len() as f64;
    let mut mean_gain = 0.0;
    let mut levels_ge = 0usize;
    for t in 0..=t_max {
        let orig = orig_sum[t] / n_seeds;
        let pool = pool_sum[t] / n_seeds;
        println!("  seed-mean t={t}: original {orig:.4} pooled {pool:.4} ({:+.4})", pool - orig);
        mean_gain += (pool - orig) / (t_max + 1) as f64;
        if pool >= orig {
            levels_ge += 1;
        }
    }
    let frac_ge = levels_ge as f64 / (t_max + 1) as f64;
    let ok = mean_gain > 0.0 && frac_ge >= 0.7;
    println!("  mean gain {mean_gain:+.4}; pooled >= original at {levels_ge}/{} levels", t_max + 1);
    report(8, "pooling beats original checkpoints", ok);
    assert!(ok, "mean gain {mean_gain}, fraction {frac_ge}");
}

#[test]
fn criterion_09_greedy_vs_exhaustive() {
    fn toy(values: &[f32]) -> ParamSet {
        ParamSet::new(vec![(
            "w1".into(),
            Tensor::new(vec![1, values.len()], values.to_vec()).unwrap(),
        )])
        .unwrap()
    }
    fn sq_dist(a: &ParamSet, b: &ParamSet) -> f64 {
        a.iter()
            .zip(b.iter())
            .flat_map(|((_, ta), (_, tb))| ta.data().iter().zip(tb.data()))
            .map(|(&x, &y)| (f64::from(x) - f64::from(y)).powi(2))
            .sum()
    }

    let coeffs = CoefficientPool::default_eleven();
    let mut failures = 0;
    for seed in 0..50u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(1000 + seed);
        let mut rand_toy = || {
            let v: Vec<f32> = (0..6).map(|_| rng.gen_range(-1.0f32..1.0)).collect();
            toy(&v)
        };
        let start = rand_toy();
        let c1 = rand_toy();
        let c2 = rand_toy();
        let goal = rand_toy();
        let (pruned, mask) = prune_to_density(&start, 0.5).unwrap();
        let kept = mask.kept_count();

        let score = {
            let goal = goal.clone();
            move |p: &ParamSet| Ok(-sq_dist(p, &goal))
        };
        let got = greedy_pool_search(
            &pruned,
            &mask,
            &[(1, &c1), (2, &c2)],
            &coeffs,
            PruneMode::During,
            &score,
        )
        .unwrap();

        // Exhaustive oracle: enumerate every (coefficient | reject) choice
        // per candidate, then walk the enumerated tree with the greedy
        // selection rule (first maximum; incumbent listed last so score ties
        // prefer interpolation).
        let mut current = pruned.clone();
        let mut current_score = -sq_dist(&current, &goal);
        for cand in [&c1, &c2] {
            let mut options: Vec<(ParamSet, f64)> = coeffs
                .values()
                .iter()
                .map(|&a| {
                    let merged = lerp(&current, cand, a).unwrap();
                    let p = prune_to_count(&merged, kept).unwrap().0;
                    let s = -sq_dist(&p, &goal);
                    (p, s)
                })
                .collect();
            options.push((current.clone(), current_score));
            let mut best = 0;
            for (i, o) in options.iter().enumerate() {
                if o.1 > options[best].1 {
                    best = i;
                }
            }
            let (p, s) = options.swap_remove(best);
            current = p;
            current_score = s;
        }

        if params_bits(&got.params) != params_bits(&current) {
            failures += 1;
            println!("  instance {seed}: greedy and enumeration disagree");
        }
    }
    let ok = failures == 0;
    println!("  50 instances, {failures} disagreements");
    report(9, "greedy equals exhaustive enumeration", ok);
    assert!(ok);
}

#[test]
fn criterion_10_swa_mean_equivalence() {
    let mut rng = ChaCha8Rng::seed_from_u64(31);
    let sets: Vec<ParamSet> = (0..5)
        .map(|_| {
            let w: Vec<f32> = (0..64).map(|_| rng.gen_range(-2.0f32..2.0)).collect();
            ParamSet::new(vec![(
                "w1".into(),
                Tensor::new(vec![8, 8], w).unwrap(),
            )])
            .unwrap()
        })
        .collect();
    let mut state = SwaState::new(sets[0].clone());
    for s in &sets[1..] {
        state.absorb(s).unwrap();
    }
    let mut max_abs = 0.0f64;
    for i in 0..64 {
        let batch: f64 = sets
            .iter()
            .map(|s| f64::from(s.get("w1").unwrap().data()[i]))
            .sum::<f64>()
            / 5.0;
        let inc = f64::from(state.mean().get("w1").unwrap().data()[i]);
        max_abs = max_abs.max((inc - batch).abs());
    }
    let ok = max_abs < 1e-5;
    println!("  max abs difference {max_abs:.2e}");
    report(10, "swa incremental equals batch mean", ok);
    assert!(ok);
}

#[test]
fn criterion_11_serialization() {
    let dir = tempfile::tempdir().unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(77);
    let mut ok = true;
    for case in 0..100 {
        let d_in = rng.gen_range(1..8);
        let hidden = rng.gen_range(1..8);
        let classes = rng.gen_range(2..6);
        let config = MlpConfig {
            layer_sizes: vec![d_in, hidden, classes],
            init_seed: case,
        };
        let params = init_params(&config).unwrap();
        let density = rng.gen_range(0.2..1.0);
        let (pruned, mask) = prune_to_density(&params, density).unwrap();
        let ckpt = Checkpoint {
            meta: CheckpointMeta {
                imp_iteration: case as usize % 20,
                density: mask.density(),
                rewind_epoch: 3,
                prune_fraction: 0.2,
                layer_sizes: config.layer_sizes.clone(),
                init_seed: case,
                shuffle_seed: case + 1,
            },
            params: pruned,
            mask,
        };
        let path = dir.path().join(format!("c{case}.lpck"));
        save_checkpoint(&ckpt, &path).unwrap();
        let loaded = load_checkpoint(&path).unwrap();
        if params_bits(&loaded.params) != params_bits(&ckpt.params)
            || loaded.mask != ckpt.mask
            || loaded.meta != ckpt.meta
        {
            println!("  case {case}: round-trip mismatch");
            ok = false;
        }
    }

    // Corrupted-byte fixtures: flips inside the first weight tensor's f32
    // payload, whose offset follows from the header layout (magic 4,
    // version 4, meta length prefix 4 + meta bytes, tensor count 4, name
    // length 4 + "w1", dtype 1, ndim 4, dims 8).
    let path = dir.path().join("corrupt.lpck");
    let params = init_params(&MlpConfig {
        layer_sizes: vec![4, 4, 3],
        init_seed: 9,
    })
    .unwrap();
    let (pruned, mask) = prune_to_density(&params, 0.7).unwrap();
    let ckpt = Checkpoint {
        meta: CheckpointMeta {
            imp_iteration: 1,
            density: mask.density(),
            rewind_epoch: 0,
            prune_fraction: 0.2,
            layer_sizes: vec![4, 4, 3],
            init_seed: 9,
            shuffle_seed: 10,
        },
        params: pruned,
        mask,
    };
    save_checkpoint(&ckpt, &path).unwrap();
    let good = std::fs::read(&path).unwrap();
    let meta_len = u32::from_le_bytes(good[8..12].try_into().unwrap()) as usize;
    let payload_start = 12 + meta_len + 4 + (4 + 2) + 1 + 4 + 8;
    let payload_len = 4 * 4 * 4; // w1 is [4,4] f32
    for frac in [0.0, 0.45, 0.95] {
        let at = payload_start + (payload_len as f64 * frac) as usize;
        let mut bytes = good.clone();
        bytes[at] ^= 0x10;
        std::fs::write(&path, &bytes).unwrap();
        if !matches!(load_checkpoint(&path), Err(Error::Corruption(_))) {
            println!("  payload flip at byte {at} did not raise a corruption error");
            ok = false;
        }
    }

    report(11, "serialization round-trip and corruption detection", ok);
    assert!(ok);
}

#[test]
fn criterion_12_ensemble_comparison_table() {
    let f = fixture();
    let rows = ensemble_comparison(&f.main_run, &f.val, &f.test, 3).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("ensemble_comparison.csv");
    let mut text = String::from(
        "t,density,pool_test_acc,pool_forward_passes,ensemble_test_acc,ensemble_forward_passes\n",
    );
    for r in &rows {
        text.push_str(&format!(
            "{},{},{},{},{},{}\n",
            r.t,
            r.density,
            r.pool_test_acc,
            r.pool_forward_passes,
            r.ensemble_test_acc,
            r.ensemble_forward_passes
        ));
    }
    std::fs::write(&path, &text).unwrap();
    let written = std::fs::read_to_string(&path).unwrap();
    let ok = rows.len() == f.main_run.t_max() + 1
        && rows.iter().all(|r| r.pool_forward_passes == 1 && r.ensemble_forward_passes == 3)
        && written.lines().count() == rows.len() + 1;
    for r in &rows {
        println!(
            "  t={} pool {:.4} (1 pass) vs ensemble {:.4} (3 passes)",
            r.t, r.pool_test_acc, r.ensemble_test_acc
        );
    }
    report(12, "ensemble comparison table with cost model", ok);
    assert!(ok);
}
