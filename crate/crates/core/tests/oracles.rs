//! Implementation checks against independent oracles.

use atelier_core::aggregate::{ensemble_objective, optimize_weights};
use atelier_core::classifier::{init_model, train, CnnConfig, CnnModel, ConvStage, Pool};
use atelier_core::dataset::{Label, TileDataset, TileSample};
use atelier_core::probmap::accumulate;
use atelier_core::{Executor, Serial, TileRecord};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Spawns one scoped thread per item; results in input order.
struct ThreadPerItem;

impl Executor for ThreadPerItem {
    fn map<T, R, F>(&self, items: &[T], f: F) -> Vec<R>
    where
        T: Sync,
        R: Send,
        F: Fn(&T) -> R + Sync + Send,
    {
        std::thread::scope(|s| {
            let handles: Vec<_> = items.iter().map(|it| s.spawn(|| f(it))).collect();
            handles.into_iter().map(|h| h.join().unwrap()).collect()
        })
    }
}

fn small_config(rng: &mut ChaCha8Rng) -> CnnConfig {
    let input_size = rng.random_range(6..=9);
    let pool = if rng.random_bool(0.5) { Pool::Max2 } else { Pool::None };
    CnnConfig {
        input_size,
        input_channels: rng.random_range(1..=2),
        conv_layers: vec![
            ConvStage::new(rng.random_range(1..=3), 3, pool),
            ConvStage::new(rng.random_range(1..=2), 2, Pool::None),
        ],
        dense_units: rng.random_range(1..=4),
        seed: rng.random(),
        learning_rate: 0.05,
        momentum: 0.9,
        epochs: 3,
        batch_size: 4,
    }
}

fn central_difference(model: &CnnModel, batch: &[(&[f64], f64)], t: usize, i: usize, h: f64) -> f64 {
    let mut m = model.clone();
    let orig = m.params().tensors()[t][i];
    m.params_mut().tensors_mut()[t][i] = orig + h;
    let plus = m.loss_and_gradients(batch).unwrap().0;
    m.params_mut().tensors_mut()[t][i] = orig - h;
    let minus = m.loss_and_gradients(batch).unwrap().0;
    (plus - minus) / (2.0 * h)
}

#[test]
fn gradients_match_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let mut worst: f64 = 0.0;
    for _ in 0..20 {
        let cfg = small_config(&mut rng);
        let mut model = init_model(&cfg).unwrap();
        assert!(model.params().len() <= 500);
        // Zero biases over dead ReLUs sit exactly on a kink; move off it.
        for v in model.params_mut().tensors_mut().iter_mut().flatten() {
            *v = rng.random_range(-0.6..0.6);
        }
        let n = cfg.input_channels * cfg.input_size * cfg.input_size;
        let tiles: Vec<Vec<f64>> = (0..3).map(|_| (0..n).map(|_| rng.random()).collect()).collect();
        let batch: Vec<(&[f64], f64)> = tiles
            .iter()
            .enumerate()
            .map(|(k, t)| (t.as_slice(), (k % 2) as f64))
            .collect();
        let (_, grads) = model.loss_and_gradients(&batch).unwrap();
        for (t, g) in grads.tensors().iter().enumerate() {
            for (i, &analytic) in g.iter().enumerate() {
                let numeric = central_difference(&model, &batch, t, i, 1e-4);
                let scale = analytic.abs().max(numeric.abs()).max(1e-6);
                worst = worst.max((analytic - numeric).abs() / scale);
            }
        }
    }
    assert!(worst < 1e-3, "max relative error {worst}");
}

#[test]
fn gradcam_single_filter_oracle() {
    // One 2x2 filter on a 4x4 tile, no pooling, one hidden unit.
    let cfg = CnnConfig {
        input_size: 4,
        input_channels: 1,
        conv_layers: vec![ConvStage::new(1, 2, Pool::None)],
        dense_units: 1,
        seed: 0,
        learning_rate: 0.1,
        momentum: 0.0,
        epochs: 1,
        batch_size: 1,
    };
    let mut m = init_model(&cfg).unwrap();
    let kernel = [0.5, -0.25, 1.0, 0.75];
    let hidden = [0.3, 0.1, 0.2, 0.4, 0.5, 0.1, 0.2, 0.3, 0.6];
    for (t, v) in m
        .params_mut()
        .tensors_mut()
        .iter_mut()
        .zip([&kernel[..], &[-0.1], &hidden, &[0.05], &[2.0], &[0.0]])
    {
        t.copy_from_slice(v);
    }
    let tile: Vec<f64> = (0..16).map(|i| ((i * 7) % 16) as f64 / 15.0).collect();

    // Conv + ReLU by hand.
    let mut act = [0.0; 9];
    for oy in 0..3 {
        for ox in 0..3 {
            let v = -0.1
                + 0.5 * tile[oy * 4 + ox]
                - 0.25 * tile[oy * 4 + ox + 1]
                + 1.0 * tile[(oy + 1) * 4 + ox]
                + 0.75 * tile[(oy + 1) * 4 + ox + 1];
            act[oy * 3 + ox] = v.max(0.0);
        }
    }
    let h: f64 = 0.05 + act.iter().zip(&hidden).map(|(a, w)| a * w).sum::<f64>();
    assert!(h > 0.0);
    // d score / d act = 2.0 * hidden weights, whose mean is positive, so the
    // map is the activation itself.
    let alpha = 2.0 * hidden.iter().sum::<f64>() / 9.0;
    let cam: Vec<f64> = act.iter().map(|a| (alpha * a).max(0.0)).collect();
    // Half-pixel bilinear 3 -> 4: source coordinates -0.125, 0.625, 1.375, 2.125.
    let taps = [(0, 0, 0.0), (0, 1, 0.625), (1, 2, 0.375), (2, 2, 0.0)];
    let mut up = [0.0; 16];
    for (dy, &(y0, y1, fy)) in taps.iter().enumerate() {
        for (dx, &(x0, x1, fx)) in taps.iter().enumerate() {
            let top = cam[y0 * 3 + x0] * (1.0 - fx) + cam[y0 * 3 + x1] * fx;
            let bottom = cam[y1 * 3 + x0] * (1.0 - fx) + cam[y1 * 3 + x1] * fx;
            up[dy * 4 + dx] = top * (1.0 - fy) + bottom * fy;
        }
    }
    let max = up.iter().copied().fold(0.0, f64::max);
    let expected: Vec<f64> = up.iter().map(|v| v / max).collect();

    let map = m.gradcam(&tile).unwrap();
    for (a, b) in map.iter().zip(&expected) {
        assert!((a - b).abs() < 1e-9, "{map:?} vs {expected:?}");
    }
}

#[test]
fn gradcam_range_and_scale_invariance() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for _ in 0..20 {
        let cfg = small_config(&mut rng);
        let m = init_model(&cfg).unwrap();
        let n = m.input_len();
        let tile: Vec<f64> = (0..n).map(|_| rng.random()).collect();
        let map = m.gradcam(&tile).unwrap();
        let max = map.iter().copied().fold(f64::MIN, f64::max);
        assert!(map.iter().all(|&v| v >= 0.0));
        assert!(max == 0.0 || max == 1.0);

        let mut scaled = m.clone();
        let out = scaled.params().tensors().len() - 2;
        for w in scaled.params_mut().tensors_mut()[out].iter_mut() {
            *w *= 3.5;
        }
        let map2 = scaled.gradcam(&tile).unwrap();
        for (a, b) in map.iter().zip(&map2) {
            assert!((a - b).abs() < 1e-12);
        }
    }
}

fn bright_dark_dataset(n: usize, seed: u64, size: usize) -> TileDataset {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut ds = TileDataset::new(size);
    for i in 0..n {
        let label = if i % 2 == 0 { Label::Positive } else { Label::Negative };
        let base = if label == Label::Positive { 0.75 } else { 0.25 };
        let pixels = (0..size * size).map(|_| base + rng.random_range(-0.15..0.15)).collect();
        ds.push(TileSample {
            pixels,
            label,
            painting_id: format!("p{}", i % 4),
            x: 0,
            y: 0,
        })
        .unwrap();
    }
    ds
}

fn tiny_trainable() -> CnnConfig {
    CnnConfig {
        input_size: 12,
        input_channels: 1,
        conv_layers: vec![ConvStage::new(4, 3, Pool::Max2)],
        dense_units: 8,
        seed: 9,
        learning_rate: 0.05,
        momentum: 0.9,
        epochs: 5,
        batch_size: 8,
    }
}

#[test]
fn separable_tiles_reach_full_accuracy() {
    let train_set = bright_dark_dataset(64, 1, 12);
    let val_set = bright_dark_dataset(32, 2, 12);
    let m = init_model(&tiny_trainable()).unwrap();
    let out = train(&m, &train_set, &val_set, &Serial).unwrap();
    assert_eq!(out.metrics.len(), 5);
    let best = out.metrics.iter().map(|e| e.val_accuracy).fold(0.0, f64::max);
    assert_eq!(best, 1.0, "{:?}", out.metrics);
    assert_eq!(out.model.trained_epochs(), out.best_epoch);
}

#[test]
fn zero_learning_rate_leaves_weights() {
    let ds = bright_dark_dataset(16, 3, 12);
    let cfg = CnnConfig {
        learning_rate: 0.0,
        ..tiny_trainable()
    };
    let m = init_model(&cfg).unwrap();
    let out = train(&m, &ds, &ds, &Serial).unwrap();
    assert_eq!(out.model.params(), m.params());
}

#[test]
fn training_is_deterministic_across_executors() {
    let train_set = bright_dark_dataset(24, 4, 12);
    let val_set = bright_dark_dataset(8, 5, 12);
    let m = init_model(&tiny_trainable()).unwrap();
    let a = train(&m, &train_set, &val_set, &Serial).unwrap();
    let b = train(&m, &train_set, &val_set, &Serial).unwrap();
    let c = train(&m, &train_set, &val_set, &ThreadPerItem).unwrap();
    assert_eq!(a.model, b.model);
    assert_eq!(a.model, c.model);
    assert_eq!(a.metrics, c.metrics);
}

#[test]
fn loss_drops_on_memorizable_set() {
    let ds = bright_dark_dataset(10, 6, 12);
    let cfg = CnnConfig {
        learning_rate: 0.01,
        epochs: 10,
        batch_size: 10,
        ..tiny_trainable()
    };
    let m = init_model(&cfg).unwrap();
    let batch: Vec<(&[f64], f64)> = ds
        .samples()
        .iter()
        .map(|s| (s.pixels.as_slice(), s.label.as_target()))
        .collect();
    let initial = m.loss_and_gradients(&batch).unwrap().0;
    let out = train(&m, &ds, &ds, &Serial).unwrap();
    let last = out.metrics.last().unwrap();
    assert!(last.val_loss < initial, "{initial} -> {:?}", out.metrics);
}

#[test]
fn forward_is_pure() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let m = init_model(&small_config(&mut rng)).unwrap();
    let tile: Vec<f64> = (0..m.input_len()).map(|_| rng.random()).collect();
    let first = m.forward(&tile).unwrap();
    for _ in 0..5 {
        assert_eq!(m.forward(&tile).unwrap().to_bits(), first.to_bits());
    }
    assert!(first > 0.0 && first < 1.0);
}

fn random_layout(rng: &mut ChaCha8Rng, w: usize, h: usize) -> Vec<TileRecord> {
    (0..rng.random_range(1..30))
        .map(|_| {
            let size = rng.random_range(8..=w.min(h));
            TileRecord {
                kept: rng.random_bool(0.7),
                probability: Some(rng.random()),
                ..TileRecord::at(rng.random_range(0..=w - size), rng.random_range(0..=h - size), size)
            }
        })
        .collect()
}

#[test]
fn map_matches_per_pixel_brute_force() {
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    for _ in 0..20 {
        let (w, h) = (rng.random_range(16..60), rng.random_range(16..60));
        let tiles = random_layout(&mut rng, w, h);
        let map = accumulate(w, h, &tiles).unwrap();
        for y in 0..h {
            for x in 0..w {
                let covering: Vec<f64> = tiles
                    .iter()
                    .filter(|t| t.kept && x >= t.x && x < t.x + t.size && y >= t.y && y < t.y + t.size)
                    .map(|t| t.probability.unwrap())
                    .collect();
                assert_eq!(map.coverage(x, y) as usize, covering.len());
                match map.prob(x, y) {
                    None => assert!(covering.is_empty()),
                    Some(p) => {
                        let mean = covering.iter().sum::<f64>() / covering.len() as f64;
                        assert!((p - mean).abs() < 1e-12);
                        let lo = covering.iter().copied().fold(f64::MAX, f64::min);
                        let hi = covering.iter().copied().fold(f64::MIN, f64::max);
                        assert!(p >= lo && p <= hi);
                    }
                }
            }
        }
    }
}

fn random_validation(rng: &mut ChaCha8Rng, n: usize) -> Vec<(f64, f64, Label)> {
    (0..n)
        .map(|_| {
            let label = if rng.random_bool(0.5) { Label::Positive } else { Label::Negative };
            (rng.random(), rng.random(), label)
        })
        .collect()
}

/// Re-evaluates every grid weight from scratch and applies the tie rules.
fn brute_force_weights(val: &[(f64, f64, Label)]) -> (usize, f64, usize) {
    let mut rows = Vec::new();
    for i in 0..=100usize {
        let w = i as f64 / 100.0;
        let mut err = 0.0;
        let mut miss = 0;
        for &(a, b, truth) in val {
            let p = if a == b { a } else { (w * a + (1.0 - w) * b).clamp(a.min(b), a.max(b)) };
            let predicted = if p >= 0.5 { Label::Positive } else { Label::Negative };
            if predicted != truth {
                err += (p - 0.5).abs();
                miss += 1;
            }
        }
        rows.push((i, err, miss));
    }
    rows.into_iter()
        .min_by(|a, b| a.1.partial_cmp(&b.1).unwrap().then(a.2.cmp(&b.2)).then(a.0.cmp(&b.0)))
        .unwrap()
}

#[test]
fn grid_search_matches_brute_force() {
    let mut rng = ChaCha8Rng::seed_from_u64(20);
    for _ in 0..50 {
        let val = random_validation(&mut rng, 20);
        let got = optimize_weights(&val).unwrap();
        let (i, err, miss) = brute_force_weights(&val);
        assert_eq!(got.w, i as f64 / 100.0);
        assert_eq!(got.achieved_error, err);
        assert_eq!(got.misclassified, miss);
        for w in [0.0, 0.5, 1.0] {
            assert!(got.achieved_error <= ensemble_objective(&val, w).0);
        }
    }
}

#[test]
fn swapping_models_mirrors_the_weight() {
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    let mut checked = 0;
    for _ in 0..200 {
        let val = random_validation(&mut rng, 12);
        let got = optimize_weights(&val).unwrap();
        // Only a unique optimum mirrors exactly; otherwise the smaller-w rule
        // picks a different end of the tied range.
        let ties = (0..=100)
            .filter(|&i| {
                let (e, m) = ensemble_objective(&val, i as f64 / 100.0);
                e == got.achieved_error && m == got.misclassified
            })
            .count();
        if ties != 1 {
            continue;
        }
        let swapped: Vec<_> = val.iter().map(|&(a, b, l)| (b, a, l)).collect();
        let mirrored = optimize_weights(&swapped).unwrap();
        assert_eq!(
            (mirrored.w * 100.0).round() as usize,
            100 - (got.w * 100.0).round() as usize
        );
        checked += 1;
    }
    assert!(checked > 10);
}
