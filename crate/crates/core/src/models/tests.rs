use super::*;
use crate::data::Sample;
use crate::hierarchy::Dimension;
use crate::tensor::grad_check;
use rand::Rng;

const KEYS: [&str; 3] = ["category", "brand", "price_bucket"];

fn keys() -> Vec<String> {
    KEYS.iter().map(|s| s.to_string()).collect()
}

fn sizes(items: usize) -> VocabSizes {
    VocabSizes {
        users: 20,
        items,
        attributes: KEYS.iter().map(|k| (k.to_string(), 8)).collect(),
    }
}

fn config(variant: Variant, d: usize, hierarchy: HierarchySpec) -> ModelConfig {
    ModelConfig {
        variant,
        embedding_dim: d,
        t_max: 50,
        attention_hidden: vec![6],
        head_hidden: vec![8, 4],
        attr_embedding: false,
        hierarchy,
    }
}

/// Item `i` has category `i % 3 + 1`, brand `i % 5 + 1`, price `i % 2 + 1`.
fn item_attrs(i: u32) -> Vec<u32> {
    vec![i % 3 + 1, i % 5 + 1, i % 2 + 1]
}

fn sample_from(history: &[u32], target: u32, label: u8) -> Sample {
    let attrs: Vec<Vec<u32>> = history.iter().map(|&i| item_attrs(i)).collect();
    Sample {
        label,
        user: 1 + target % 7,
        target,
        target_attrs: item_attrs(target),
        history: history.to_vec(),
        history_attrs: (0..KEYS.len()).map(|k| attrs.iter().map(|a| a[k]).collect()).collect(),
    }
}

fn random_samples(rng: &mut ChaCha8Rng, n: usize, items: u32, max_len: usize) -> Vec<Sample> {
    (0..n)
        .map(|_| {
            let len = rng.gen_range(1..=max_len);
            let hist: Vec<u32> = (0..len).map(|_| rng.gen_range(1..items)).collect();
            sample_from(&hist, rng.gen_range(1..items), rng.gen_range(0..2))
        })
        .collect()
}

fn run(model: &Model, params: &ParamStore<f64>, samples: &[Sample]) -> Vec<ForwardTrace> {
    let refs: Vec<&Sample> = samples.iter().collect();
    let batch = model.batch(&refs, &keys()).unwrap();
    let mut tape = Tape::new();
    let b = params.bind(&mut tape);
    let fwd = model.forward(&mut tape, &b, &batch).unwrap();
    fwd.traces(&tape, &batch)
}

fn model(variant: Variant, d: usize, hierarchy: HierarchySpec) -> Model {
    Model::new(config(variant, d, hierarchy), sizes(30)).unwrap()
}

fn zero_output(params: &mut ParamStore<f64>, prefix: &str) {
    let names: Vec<String> = params
        .names()
        .iter()
        .filter(|n| n.starts_with(prefix))
        .cloned()
        .collect();
    for n in names {
        if n.ends_with(".w1") || n.ends_with(".b1") {
            params.get_mut(&n).unwrap().data_mut().fill(0.0);
        }
    }
}

fn close(a: &[f64], b: &[f64], tol: f64) -> bool {
    a.len() == b.len() && a.iter().zip(b).all(|(x, y)| (x - y).abs() <= tol)
}

#[test]
fn pool_matches_hand_arithmetic() {
    let mut tape = Tape::<f64>::new();
    let w = tape.constant(Tensor::new([2, 1], vec![1.0, 3.0]).unwrap());
    let v = tape.constant(Tensor::new([2, 2], vec![1.0, 0.0, 0.0, 1.0]).unwrap());
    let seg = Segments::new(vec![Some(0), Some(0)], 1).unwrap();
    let c = attribute_pool(&mut tape, w, v, &seg).unwrap();
    assert_eq!(tape.value(c).data(), &[0.25, 0.75]);

    let w = tape.constant(Tensor::new([1, 1], vec![7.5]).unwrap());
    let v = tape.constant(Tensor::new([1, 2], vec![0.3, -0.4]).unwrap());
    let seg1 = Segments::new(vec![Some(0)], 1).unwrap();
    let c = attribute_pool(&mut tape, w, v, &seg1).unwrap();
    assert!(close(tape.value(c).data(), &[0.3, -0.4], 1e-15));

    let w = tape.constant(Tensor::new([2, 1], vec![2.0, 2.0]).unwrap());
    let v = tape.constant(Tensor::new([2, 2], vec![1.0, 4.0, 3.0, 0.0]).unwrap());
    let c = attribute_pool(&mut tape, w, v, &seg).unwrap();
    assert_eq!(tape.value(c).data(), &[2.0, 2.0]);

    let w = tape.constant(Tensor::new([2, 1], vec![0.0, 0.0]).unwrap());
    assert!(matches!(
        attribute_pool(&mut tape, w, v, &seg),
        Err(ModelError::DegenerateGroup)
    ));
}

#[test]
fn single_item_group_gets_full_weight() {
    let m = model(Variant::Dhan, 4, HierarchySpec::single("category"));
    let params = m.init_params::<f64>(1);
    // Items 1 and 2 fall in different categories.
    let tr = &run(&m, &params, &[sample_from(&[1, 2], 5, 1)])[0];
    assert_eq!(tr.dimensions[0].position_weights, vec![1.0, 1.0]);
}

#[test]
fn equal_scores_give_uniform_weights_and_mean_clusters() {
    let m = model(Variant::Dhan, 4, HierarchySpec::single("category"));
    let mut params = m.init_params::<f64>(2);
    zero_output(&mut params, "au.");
    // Items 1, 4, 7 share category 2; items 2 and 5 share category 3.
    let s = sample_from(&[1, 2, 4, 5, 7], 9, 1);
    let tr = &run(&m, &params, &[s])[0];
    let dim = &tr.dimensions[0];
    let third = 1.0 / 3.0;
    assert!(close(&dim.position_weights, &[third, 0.5, third, 0.5, third], 1e-12));
    let emb = params.get("emb.item").unwrap();
    let mean = |ids: &[usize]| -> Vec<f64> {
        (0..4)
            .map(|c| ids.iter().map(|&i| emb.row(i)[c]).sum::<f64>() / ids.len() as f64)
            .collect()
    };
    let groups = &dim.levels[0].groups;
    assert!(close(&groups[0].cluster, &mean(&[1, 4, 7]), 1e-12));
    assert!(close(&groups[1].cluster, &mean(&[2, 5]), 1e-12));
    // Equal cluster scores: x is the midpoint of the two clusters.
    let mid: Vec<f64> = (0..4)
        .map(|c| (groups[0].cluster[c] + groups[1].cluster[c]) / 2.0)
        .collect();
    assert!(close(&dim.overall, &mid, 1e-12));
    assert_eq!(groups[0].weight, 0.5);
    // Pooled i_x with equal scores is the plain mean.
    assert!(close(&tr.item_feature, &mean(&[1, 2, 4, 5, 7]), 1e-12));
}

#[test]
fn single_category_reduces_to_softmax_pooling() {
    let m = model(Variant::Dhan, 5, HierarchySpec::single("category"));
    let params = m.init_params::<f64>(3);
    // Items 3, 6, 9, 12 all have category 1.
    let tr = &run(&m, &params, &[sample_from(&[3, 6, 9, 12], 4, 0)])[0];
    let dim = &tr.dimensions[0];
    assert_eq!(dim.levels[0].groups.len(), 1);
    assert_eq!(dim.levels[0].groups[0].weight, 1.0);
    assert_eq!(dim.overall, dim.levels[0].groups[0].cluster);
    // The single group spans the whole history, so its weights are the
    // global softmax used for i_x.
    assert!(close(&dim.position_weights, &tr.item_weights, 1e-12));
    assert!(close(&dim.overall, &tr.item_feature, 1e-12));
}

#[test]
fn single_position_copies_embedding() {
    let m = model(Variant::Dhan, 3, HierarchySpec::single("category"));
    let params = m.init_params::<f64>(4);
    let tr = &run(&m, &params, &[sample_from(&[11], 2, 1)])[0];
    let e = params.get("emb.item").unwrap().row(11).to_vec();
    assert!(close(&tr.item_feature, &e, 1e-15));
    assert!(close(&tr.dimensions[0].overall, &e, 1e-15));
    assert!(tr.p > 0.0 && tr.p < 1.0);
}

#[test]
fn zero_gru_gives_zero_item_feature() {
    let m = model(Variant::DhanGru, 4, HierarchySpec::single("category"));
    let mut params = m.init_params::<f64>(5);
    for name in params.names().to_vec() {
        if name.starts_with("gru.") {
            params.get_mut(&name).unwrap().data_mut().fill(0.0);
        }
    }
    let tr = &run(&m, &params, &[sample_from(&[1, 2, 3], 4, 1)])[0];
    assert_eq!(tr.item_feature, vec![0.0; 4]);
}

fn permuted(s: &Sample, perm: &[usize]) -> Sample {
    let mut out = s.clone();
    out.history = perm.iter().map(|&i| s.history[i]).collect();
    for (k, a) in s.history_attrs.iter().enumerate() {
        out.history_attrs[k] = perm.iter().map(|&i| a[i]).collect();
    }
    out
}

#[test]
fn dhan_is_order_invariant_and_gru_is_not() {
    use rand::seq::SliceRandom;
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let s = sample_from(&[1, 2, 3, 4, 5, 6, 7, 8], 10, 1);
    let mut perm: Vec<usize> = (0..8).collect();
    perm.shuffle(&mut rng);
    let p = permuted(&s, &perm);

    let dhan = model(Variant::Dhan, 6, HierarchySpec::single("category"));
    let params = dhan.init_params::<f64>(7);
    let a = run(&dhan, &params, &[s.clone(), p.clone()]);
    assert!((a[0].p - a[1].p).abs() <= 1e-12);

    let gru = model(Variant::DhanGru, 6, HierarchySpec::single("category"));
    let params = gru.init_params::<f64>(7);
    let reversed = permuted(&s, &(0..8).rev().collect::<Vec<_>>());
    let b = run(&gru, &params, &[s, reversed]);
    assert!((b[0].p - b[1].p).abs() > 1e-9);
}

#[test]
fn normalizations_hold_on_deep_multi_dimension_hierarchy() {
    let spec = HierarchySpec {
        dimensions: vec![
            Dimension::new("cb", &["item", "brand", "category"]),
            Dimension::new("price", &["item", "price_bucket"]),
        ],
    };
    let m = model(Variant::Dhan, 4, spec);
    let params = m.init_params::<f64>(8);
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let samples = random_samples(&mut rng, 12, 30, 9);
    for (s, tr) in samples.iter().zip(run(&m, &params, &samples)) {
        assert_eq!(tr.dimensions.len(), 2);
        assert_eq!(tr.features.len(), 4 * 4);
        let total: f64 = tr.item_weights.iter().sum();
        assert!((total - 1.0).abs() < 1e-12);
        for dim in &tr.dimensions {
            assert_eq!(dim.position_weights.len(), s.history.len());
            // Per lowest group, position weights sum to one.
            for g in &dim.levels[0].groups {
                let sum: f64 = g.positions.iter().map(|&p| dim.position_weights[p]).sum();
                assert!((sum - 1.0).abs() < 1e-12);
            }
            // Sibling weights sum to one under every parent.
            for (j, lvl) in dim.levels.iter().enumerate() {
                let parents = dim.levels.get(j + 1).map_or(1, |l| l.groups.len());
                for parent in 0..parents {
                    let sum: f64 = lvl
                        .groups
                        .iter()
                        .filter(|g| g.parent.unwrap_or(0) == parent)
                        .map(|g| g.weight)
                        .sum();
                    assert!((sum - 1.0).abs() < 1e-12);
                }
            }
            let abs = dim.absolute_weights();
            for level in abs {
                assert!((level.iter().sum::<f64>() - 1.0).abs() < 1e-12);
            }
        }
    }
}

#[test]
fn din_single_position_scales_embedding() {
    let m = model(Variant::Din, 3, HierarchySpec::single("category"));
    let params = m.init_params::<f64>(10);
    let tr = &run(&m, &params, &[sample_from(&[4], 2, 1)])[0];
    let w = tr.item_weights[0];
    let e = params.get("emb.item").unwrap().row(4).to_vec();
    let scaled: Vec<f64> = e.iter().map(|v| v * w).collect();
    assert!(close(&tr.item_feature, &scaled, 1e-15));
}

#[test]
fn wdl_without_wide_weights_is_its_deep_part() {
    let m = model(Variant::Wdl, 3, HierarchySpec::single("category"));
    let mut params = m.init_params::<f64>(11);
    for name in params.names().to_vec() {
        if name.starts_with("wide.") {
            params.get_mut(&name).unwrap().data_mut().fill(0.0);
        }
    }
    let samples = [sample_from(&[1, 2, 3], 4, 1), sample_from(&[5], 6, 0)];
    let traces = run(&m, &params, &samples);
    let head = m.head();
    for tr in traces {
        let mut tape = Tape::<f64>::new();
        let b = params.bind(&mut tape);
        let x = tape.constant(Tensor::new([1, tr.features.len()], tr.features.clone()).unwrap());
        let logits = head.forward(&mut tape, &b, x).unwrap();
        let probs = tape.softmax_rows(logits).unwrap();
        assert!((tape.value(probs).data()[1] - tr.p).abs() < 1e-15);
    }
}

#[test]
fn pnn_inner_product_of_orthogonal_vectors_is_zero() {
    let m = model(Variant::Pnn, 2, HierarchySpec::single("category"));
    let mut params = m.init_params::<f64>(12);
    let emb = params.get_mut("emb.item").unwrap();
    emb.data_mut()[2..4].copy_from_slice(&[1.0, 0.0]);
    emb.data_mut()[4..6].copy_from_slice(&[0.0, 2.0]);
    let tr = &run(&m, &params, &[sample_from(&[1], 2, 1)])[0];
    assert_eq!(tr.features, vec![1.0, 0.0, 0.0, 2.0, 0.0]);
}

#[test]
fn probabilities_are_strictly_inside_unit_interval() {
    let mut rng = ChaCha8Rng::seed_from_u64(13);
    let samples = random_samples(&mut rng, 10, 30, 6);
    for v in Variant::ALL {
        let m = model(v, 4, HierarchySpec::single("category"));
        let params = m.init_params::<f64>(14);
        for tr in run(&m, &params, &samples) {
            assert!(tr.p > 0.0 && tr.p < 1.0, "{v}: {}", tr.p);
        }
    }
}

#[test]
fn every_variant_passes_gradient_check() {
    let spec = HierarchySpec {
        dimensions: vec![
            Dimension::new("cb", &["item", "brand", "category"]),
            Dimension::new("price", &["item", "price_bucket"]),
        ],
    };
    let mut rng = ChaCha8Rng::seed_from_u64(15);
    let samples = random_samples(&mut rng, 4, 30, 6);
    let refs: Vec<&Sample> = samples.iter().collect();
    for v in Variant::ALL {
        let mut cfg = config(v, 3, spec.clone());
        cfg.attr_embedding = v == Variant::Dhan;
        let m = Model::new(cfg, sizes(30)).unwrap();
        let batch = m.batch(&refs, &keys()).unwrap();
        let params = m.init_params::<f64>(16);
        let report = grad_check(
            &BatchLoss {
                model: &m,
                batch: &batch,
            },
            &params,
            17,
            6,
        )
        .unwrap();
        assert!(report.max_rel_error < 1e-3, "{v}: {report:?}");
    }
}

#[test]
fn config_validation() {
    let mut cfg = config(Variant::Dhan, 4, HierarchySpec::single("style"));
    assert!(Model::new(cfg.clone(), sizes(5)).is_err());
    cfg.hierarchy = HierarchySpec::single("category");
    cfg.head_hidden.clear();
    assert!(Model::new(cfg, sizes(5)).is_err());
    assert!("dhan_gru".parse::<Variant>().is_ok());
    assert!("dien".parse::<Variant>().is_err());
}

#[test]
fn params_are_deterministic_and_padding_is_zero() {
    let m = model(Variant::DhanGru, 4, HierarchySpec::single("category"));
    let a = m.init_params::<f32>(3);
    let b = m.init_params::<f32>(3);
    assert_eq!(a.tensors(), b.tensors());
    assert_eq!(&a.get("emb.item").unwrap().data()[..4], &[0.0; 4]);
    assert_eq!(a.get("head.a0").unwrap().data()[0], 0.25);
}
