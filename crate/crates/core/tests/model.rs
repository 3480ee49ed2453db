use approx::assert_relative_eq;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use dsparse_core::autodiff::{ParamStore, Tape};
use dsparse_core::model::{
    score_all, Activation, DSparsE, DecoderKind, Decoder, DynamicBranch, DynamicLayer, DynamicSlot, Mode,
    ModelConfig, RelationAwareLayer, SparseLinear,
};
use dsparse_core::Real;

fn small(dynamic: DynamicBranch) -> ModelConfig {
    ModelConfig {
        n_entities: 7,
        n_relations: 4,
        dim: 4,
        hidden: 5,
        experts: 2,
        depth: 2,
        dynamic,
        seed: 3,
        ..ModelConfig::default()
    }
}

fn fill(store: &mut ParamStore, layer: &SparseLinear, w: Real, b: &[Real]) {
    store.get_mut(layer.weight).value.values_mut().fill(w);
    store.get_mut(layer.weight).mask = None;
    if let Some(bias) = layer.bias {
        store.get_mut(bias).value.values_mut().copy_from_slice(b);
    }
}

#[test]
fn param_count_matches_allocation() {
    let configs = [
        small(DynamicBranch::Experts),
        small(DynamicBranch::PureMlp { width: 9 }),
        ModelConfig { relation_aware: false, ..small(DynamicBranch::Off) },
        ModelConfig { decoder: DecoderKind::WideLinear { width: 11 }, ..small(DynamicBranch::Experts) },
        ModelConfig { experts: 1, decoder: DecoderKind::Plain, depth: 4, ..small(DynamicBranch::Experts) },
    ];
    for cfg in configs {
        let model = DSparsE::new(cfg.clone()).unwrap();
        assert_eq!(cfg.param_count(), model.store().scalar_count(), "{cfg:?}");
        assert!(model.store().active_scalar_count() <= model.store().scalar_count());
    }
}

fn dynamic_layer(model: &mut DSparsE) -> DynamicLayer {
    match model.dynamic() {
        DynamicSlot::Experts(l) => l.clone(),
        _ => unreachable!(),
    }
}

#[test]
fn zero_gate_is_uniform() {
    let mut model = DSparsE::new(small(DynamicBranch::Experts)).unwrap();
    let layer = dynamic_layer(&mut model);
    fill(model.store_mut(), &layer.gate, 0.0, &[0.0, 0.0]);
    let g = model.gates(&[0, 1, 2], &[0, 1, 3]).unwrap().unwrap();
    assert!(g.iter().all(|&v| v == 0.5));
}

#[test]
fn huge_temperature_flattens_gate() {
    let mut cfg = small(DynamicBranch::Experts);
    cfg.experts = 3;
    cfg.temperature = 1e6;
    let mut model = DSparsE::new(cfg).unwrap();
    let layer = dynamic_layer(&mut model);
    let b = layer.gate.bias.unwrap();
    model.store_mut().get_mut(b).value.values_mut().fill(0.0);
    let g = model.gates(&[0, 4], &[1, 2]).unwrap().unwrap();
    assert!(g.iter().all(|&v| (v - 1.0 / 3.0).abs() < 1e-4));
}

#[test]
fn gate_bias_sets_logits() {
    let mut model = DSparsE::new(small(DynamicBranch::Experts)).unwrap();
    let layer = dynamic_layer(&mut model);
    fill(model.store_mut(), &layer.gate, 0.0, &[(2.0 as Real).ln(), 0.0]);
    let g = model.gates(&[5], &[2]).unwrap().unwrap();
    assert_relative_eq!(g[0], 2.0 / 3.0, epsilon = 1e-12);
    assert_relative_eq!(g[1], 1.0 / 3.0, epsilon = 1e-12);
}

fn layer_with(k: usize, store: &mut ParamStore) -> DynamicLayer {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    DynamicLayer {
        experts: (0..k)
            .map(|i| SparseLinear::new(store, &format!("e{i}"), 2, 4, 0.3, &mut rng).unwrap())
            .collect(),
        gate: SparseLinear::dense(store, "gate", k, 4, &mut rng).unwrap(),
        temperature: 1.0,
        activation: Activation::Relu,
    }
}

fn pair(tape: &mut Tape) -> dsparse_core::autodiff::Var {
    tape.constant(vec![2, 4], vec![0.3, -0.2, 0.9, 1.1, -0.5, 0.4, 0.0, 0.7]).unwrap()
}

#[test]
fn single_expert_passes_through() {
    let mut store = ParamStore::new();
    let layer = layer_with(1, &mut store);
    let mut tape = Tape::new();
    let x = pair(&mut tape);
    let (out, g) = layer.forward(&store, &mut tape, x).unwrap();
    assert!(tape.value(g).iter().all(|&v| v == 1.0));
    let y = layer.experts[0].forward(&store, &mut tape, x).unwrap();
    let y = tape.relu(y);
    assert_eq!(tape.value(out), tape.value(y));
}

#[test]
fn identical_experts_ignore_the_gate() {
    let mut store = ParamStore::new();
    let layer = layer_with(3, &mut store);
    let first = store.get(layer.experts[0].weight).clone();
    let first_b = store.value(layer.experts[0].bias.unwrap()).clone();
    for e in &layer.experts[1..] {
        let w = store.get_mut(e.weight);
        w.value.values_mut().copy_from_slice(first.value.values());
        w.mask = first.mask.clone();
        store.get_mut(e.bias.unwrap()).value.values_mut().copy_from_slice(first_b.values());
    }
    let mut tape = Tape::new();
    let x = pair(&mut tape);
    let (out, _) = layer.forward(&store, &mut tape, x).unwrap();
    let y = layer.experts[0].forward(&store, &mut tape, x).unwrap();
    let y = tape.relu(y);
    for (a, b) in tape.value(out).iter().zip(tape.value(y)) {
        assert_relative_eq!(*a, *b, epsilon = 1e-12);
    }
}

#[test]
fn hand_set_gate_mixes_experts() {
    let mut store = ParamStore::new();
    let layer = layer_with(2, &mut store);
    fill(&mut store, &layer.gate, 0.0, &[(0.25 as Real).ln(), (0.75 as Real).ln()]);
    fill(&mut store, &layer.experts[0], 0.0, &[1.0, 0.0]);
    fill(&mut store, &layer.experts[1], 0.0, &[0.0, 1.0]);
    let mut tape = Tape::new();
    let x = pair(&mut tape);
    let (out, _) = layer.forward(&store, &mut tape, x).unwrap();
    for row in tape.value(out).chunks(2) {
        assert_relative_eq!(row[0], 0.25, epsilon = 1e-12);
        assert_relative_eq!(row[1], 0.75, epsilon = 1e-12);
    }
}

fn relation_layer(store: &mut ParamStore) -> RelationAwareLayer {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    RelationAwareLayer {
        maps: (0..3)
            .map(|r| SparseLinear::new(store, &format!("rel{r}"), 3, 4, 0.0, &mut rng).unwrap())
            .collect(),
        activation: Activation::Tanh,
    }
}

#[test]
fn one_relation_batch_is_one_map() {
    let mut store = ParamStore::new();
    let layer = relation_layer(&mut store);
    let mut tape = Tape::new();
    let x = pair(&mut tape);
    let out = layer.forward(&store, &mut tape, x, &[1, 1]).unwrap();
    let y = layer.maps[1].forward(&store, &mut tape, x).unwrap();
    let y = tape.tanh(y);
    assert_eq!(tape.value(out), tape.value(y));
}

#[test]
fn relations_are_distinguished_and_gradients_stay_local() {
    let mut store = ParamStore::new();
    let layer = relation_layer(&mut store);
    let mut tape = Tape::new();
    let x = tape.constant(vec![2, 4], vec![0.3, -0.2, 0.9, 1.1, 0.3, -0.2, 0.9, 1.1]).unwrap();
    let out = layer.forward(&store, &mut tape, x, &[0, 2]).unwrap();
    let v = tape.value(out);
    assert_ne!(&v[..3], &v[3..]);
    let s = tape.sum(out);
    tape.backward(s).unwrap();
    let touched: Vec<_> = tape.param_grads().map(|(id, _)| id).collect();
    assert!(touched.contains(&layer.maps[0].weight));
    assert!(touched.contains(&layer.maps[2].weight));
    assert!(!touched.contains(&layer.maps[1].weight));
    assert!(layer.forward(&store, &mut tape, x, &[0, 3]).is_err());
}

fn encode(model: &DSparsE, s: &[usize], r: &[usize]) -> Vec<Real> {
    let mut tape = Tape::new();
    let (p, _) = model.embed_pairs(&mut tape, s, r).unwrap();
    let (out, _) = model.encode(&mut tape, p, r, &mut Mode::Eval).unwrap();
    assert_eq!(tape.shape(out), &[s.len(), model.config().dim]);
    tape.value(out).to_vec()
}

#[test]
fn encoder_shape_and_determinism() {
    for dynamic in [DynamicBranch::Experts, DynamicBranch::PureMlp { width: 6 }, DynamicBranch::Off] {
        for relation_aware in [true, false] {
            let model = DSparsE::new(ModelConfig { relation_aware, ..small(dynamic) }).unwrap();
            let a = encode(&model, &[0, 3, 6], &[1, 2, 1]);
            assert_eq!(a, encode(&model, &[0, 3, 6], &[1, 2, 1]));
        }
    }
}

#[test]
fn zeroed_relation_branch_drops_out_of_encoder() {
    let mut model = DSparsE::new(small(DynamicBranch::Experts)).unwrap();
    let maps = model.relation_aware().unwrap().maps.clone();
    for m in &maps {
        let out = m.out_dim;
        fill(model.store_mut(), m, 0.0, &vec![0.0; out]);
    }
    let before = encode(&model, &[1, 2, 5], &[0, 3, 2]);
    // rewrite the projection columns that read the relation block
    let (d, h) = (model.config().dim, model.config().hidden);
    let w = model.projection().weight;
    let vals = model.store_mut().get_mut(w).value.values_mut();
    for row in 0..d {
        for col in h..2 * h {
            vals[row * 2 * h + col] = 7.5;
        }
    }
    assert_eq!(before, encode(&model, &[1, 2, 5], &[0, 3, 2]));
}

fn zero_decoder(model: &mut DSparsE) -> usize {
    let Decoder::Blocks(blocks) = model.decoder().clone() else { unreachable!() };
    let d = model.config().dim;
    for b in &blocks {
        fill(model.store_mut(), &b.linear, 0.0, &vec![0.0; d]);
    }
    blocks.len()
}

fn decode(model: &DSparsE, x: &[Real]) -> Vec<Real> {
    let mut tape = Tape::new();
    let d = model.config().dim;
    let v = tape.constant(vec![x.len() / d, d], x.to_vec()).unwrap();
    let (y, stats) = model.decoder().forward(model.store(), &mut tape, v, &mut Mode::Eval).unwrap();
    assert!(stats.is_empty());
    tape.value(y).to_vec()
}

#[test]
fn zero_residual_blocks_are_relu_identity() {
    let mut model = DSparsE::new(small(DynamicBranch::Experts)).unwrap();
    let depth = zero_decoder(&mut model);
    assert_eq!(depth, 2);
    let x: [Real; 8] = [0.5, -1.0, 2.0, 0.0, 3.0, 0.25, -0.75, 1.5];
    let relu: Vec<Real> = x.iter().map(|v| v.max(0.0)).collect();
    assert_eq!(decode(&model, &x), relu);
    let pos: [Real; 4] = [0.5, 1.0, 2.0, 0.0];
    assert_eq!(decode(&model, &pos), pos);

    let mut deep = DSparsE::new(ModelConfig { depth: 6, ..small(DynamicBranch::Experts) }).unwrap();
    zero_decoder(&mut deep);
    assert_eq!(decode(&deep, &pos), pos);
}

#[test]
fn score_all_reference_values() {
    let mut tape = Tape::new();
    let decoded = tape.constant(vec![1, 2], vec![1.0, 0.0]).unwrap();
    let ents = tape.constant(vec![2, 2], vec![1.0, 0.0, 0.0, 1.0]).unwrap();
    let s = score_all(&mut tape, decoded, ents).unwrap();
    assert_relative_eq!(tape.value(s)[0], 0.731_058_578_630_004_9, epsilon = 1e-12);
    assert_eq!(tape.value(s)[1], 0.5);

    let q = [0.3, -1.2, 0.8];
    let e = [0.5, 0.1, -0.4, 1.0, 1.0, 1.0, -2.0, 0.3, 0.0];
    let decoded = tape.constant(vec![1, 3], q.to_vec()).unwrap();
    let ents = tape.constant(vec![3, 3], e.to_vec()).unwrap();
    let s = score_all(&mut tape, decoded, ents).unwrap();
    for j in 0..3 {
        let dot: Real = (0..3).map(|k| q[k] * e[j * 3 + k]).sum();
        let want = 1.0 / (1.0 + (-dot).exp());
        assert!((tape.value(s)[j] - want).abs() < 1e-12);
    }
}

#[test]
fn predictions_are_probabilities_and_permutation_equivariant() {
    let model = DSparsE::new(small(DynamicBranch::Experts)).unwrap();
    let (s, r) = (vec![0, 1, 2, 3, 6], vec![0, 3, 1, 2, 0]);
    let scores = model.predict(&s, &r).unwrap();
    assert_eq!(scores.len(), 5 * 7);
    assert!(scores.iter().all(|&p| p > 0.0 && p < 1.0));
    assert_eq!(scores, model.predict(&s, &r).unwrap());

    let perm = [3, 0, 4, 1, 2];
    let ps: Vec<usize> = perm.iter().map(|&i| s[i]).collect();
    let pr: Vec<usize> = perm.iter().map(|&i| r[i]).collect();
    let permuted = model.predict(&ps, &pr).unwrap();
    for (row, &i) in perm.iter().enumerate() {
        assert_eq!(&permuted[row * 7..(row + 1) * 7], &scores[i * 7..(i + 1) * 7]);
    }
}

#[test]
fn masks_follow_the_seed() {
    let a = DSparsE::new(small(DynamicBranch::Experts)).unwrap();
    let b = DSparsE::new(small(DynamicBranch::Experts)).unwrap();
    let c = DSparsE::new(ModelConfig { seed: 4, ..small(DynamicBranch::Experts) }).unwrap();
    let masks = |m: &DSparsE| m.store().iter().filter_map(|(_, p)| p.mask.clone()).collect::<Vec<_>>();
    assert_eq!(masks(&a), masks(&b));
    assert_ne!(masks(&a), masks(&c));
}
