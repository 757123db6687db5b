use rand::Rng;

use super::*;
use crate::graph::Graph;

fn small_config() -> ModelConfig {
    ModelConfig {
        latent_dim: 8,
        encoder_hidden: 8,
        head_hidden: 8,
        substeps: 2,
    }
}

struct Fixture {
    graph: Graph,
    ctx: GraphContext,
    x0: Vec<f64>,
    v: Tensor,
    a: Vec<Vec<u8>>,
    g: Vec<Vec<f64>>,
    y: Vec<Vec<f64>>,
}

fn fixture(seed: u64) -> Fixture {
    let mut rng = rng::stream(seed, 99);
    let n = 6;
    // node 5 isolated
    let graph = Graph::new(n, &[(0, 1), (1, 2), (2, 3), (3, 0), (1, 4)]).unwrap();
    let horizon = 3;
    let a: Vec<Vec<u8>> = (0..=horizon)
        .map(|_| (0..n).map(|_| rng.random_range(0..2u8)).collect())
        .collect();
    let g = a.iter().map(|row| graph.interference_summary(row).unwrap()).collect();
    let y = (0..=horizon)
        .map(|_| (0..n).map(|_| rng.random_range(-1.0..1.0)).collect())
        .collect();
    Fixture {
        ctx: GraphContext::new(&graph),
        graph,
        x0: (0..n).map(|_| rng.random_range(0.5..2.0)).collect(),
        v: Tensor::new(n, 3, (0..n * 3).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap(),
        a,
        g,
        y,
    }
}

#[derive(Clone, Copy)]
enum Which {
    Outcome,
    Treatment(bool),
    Interference(bool),
    Total,
}

fn build(model: &Model, f: &Fixture, tape: &mut Tape, b: &Bound, which: Which) -> Var {
    let fwd = model.forward(tape, b, &f.x0, &f.v, &f.a, &f.ctx).unwrap();
    match which {
        Which::Outcome => loss_outcome(tape, &fwd.outcomes, &f.y, None).unwrap(),
        Which::Treatment(r) => model.loss_treatment(tape, b, &fwd.latents, &f.a, None, r).unwrap(),
        Which::Interference(r) => model
            .loss_interference(tape, b, &fwd.latents, &f.a, &f.g, None, r)
            .unwrap(),
        Which::Total => {
            let ly = loss_outcome(tape, &fwd.outcomes, &f.y, Some(&[0, 2, 4, 5])).unwrap();
            let la = model
                .loss_treatment(tape, b, &fwd.latents, &f.a, Some(&[0, 2, 4, 5]), true)
                .unwrap();
            let lg = model
                .loss_interference(tape, b, &fwd.latents, &f.a, &f.g, Some(&[0, 2, 4, 5]), true)
                .unwrap();
            loss_total(tape, ly, la, lg, 0.5, 0.5).unwrap()
        }
    }
}

fn value(model: &Model, f: &Fixture, which: Which) -> f64 {
    let mut tape = Tape::new();
    let b = model.bind(&mut tape, &[]);
    let l = build(model, f, &mut tape, &b, which);
    tape.scalar(l)
}

fn analytic(model: &Model, f: &Fixture, which: Which) -> ParamSet {
    let mut tape = Tape::new();
    let b = model.bind(&mut tape, &Group::ALL);
    let l = build(model, f, &mut tape, &b, which);
    tape.backward(l).unwrap();
    let mut params = model.params.clone();
    params.collect_grads(&tape, &b.bindings);
    params
}

fn grad(ps: &ParamSet, idx: usize) -> &[f64] {
    ps.get(idx).grad.as_deref().unwrap()
}

/// Central differences of the forward value, which cannot see reversal;
/// callers reconcile signs.
fn numeric(model: &Model, f: &Fixture, which: Which, idx: usize) -> Vec<f64> {
    let h = 1e-6;
    let len = model.params.get(idx).value.len();
    (0..len)
        .map(|k| {
            let mut up = model.clone();
            up.params.get_mut(idx).value.data_mut()[k] += h;
            let mut dn = model.clone();
            dn.params.get_mut(idx).value.data_mut()[k] -= h;
            (value(&up, f, which) - value(&dn, f, which)) / (2.0 * h)
        })
        .collect()
}

fn rel_err(a: &[f64], b: &[f64]) -> f64 {
    let diff: f64 = a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
    let scale: f64 = a.iter().chain(b).map(|x| x * x).sum::<f64>().sqrt();
    if scale < 1e-12 {
        diff
    } else {
        diff / scale
    }
}

#[test]
fn gradients_match_finite_differences_for_every_loss() {
    let f = fixture(1);
    let model = Model::new(small_config(), 3, 7).unwrap();
    for which in [Which::Outcome, Which::Treatment(false), Which::Interference(false)] {
        let grads = analytic(&model, &f, which);
        for idx in 0..model.params.len() {
            let n = numeric(&model, &f, which, idx);
            let e = rel_err(grad(&grads, idx), &n);
            assert!(e < 1e-4, "{} rel err {e}", model.params.get(idx).name);
        }
    }
}

#[test]
fn reversal_negates_shared_gradients_and_keeps_head_gradients() {
    let f = fixture(2);
    let model = Model::new(small_config(), 3, 3).unwrap();
    let pairs = [
        (Which::Treatment(true), Which::Treatment(false), Group::TreatmentHead),
        (Which::Interference(true), Which::Interference(false), Group::InterferenceHead),
    ];
    for (rev, id, head) in pairs {
        assert_eq!(value(&model, &f, rev).to_bits(), value(&model, &f, id).to_bits());
        let gr = analytic(&model, &f, rev);
        let gi = analytic(&model, &f, id);
        for idx in 0..model.params.len() {
            let (a, b) = (grad(&gr, idx), grad(&gi, idx));
            match model.group_of(idx) {
                Group::Encoder | Group::OdeFunc => {
                    assert!(a.iter().zip(b).all(|(x, y)| *x == -*y), "{}", model.params.get(idx).name);
                    assert!(a.iter().any(|x| *x != 0.0));
                }
                g if g == head => assert_eq!(a, b),
                _ => assert!(a.iter().all(|x| *x == 0.0)),
            }
        }
    }
}

#[test]
fn zero_encoder_gives_zero_latents() {
    let f = fixture(3);
    let mut model = Model::new(small_config(), 3, 1).unwrap();
    model.zero_group(Group::Encoder);
    let mut tape = Tape::new();
    let b = model.bind(&mut tape, &[]);
    let z = model.encode_initial(&mut tape, &b, &f.x0, &f.v).unwrap();
    assert_eq!(tape.shape(z), [6, 8]);
    assert!(tape.value(z).iter().all(|&v| v == 0.0));
    let wrong = Tensor::zeros(6, 2);
    assert!(matches!(model.encode_initial(&mut tape, &b, &f.x0, &wrong), Err(Error::Dimension { .. })));
}

#[test]
fn zero_vector_field_keeps_latents_constant() {
    let f = fixture(4);
    let mut model = Model::new(small_config(), 3, 2).unwrap();
    model.zero_group(Group::OdeFunc);
    let pred = model.predict(&f.x0, &f.v, &f.a, &f.ctx).unwrap();
    for z in &pred.latents {
        assert_eq!(z, &pred.latents[0]);
    }
}

#[test]
fn isolated_node_ignores_other_nodes() {
    let f = fixture(5);
    let model = Model::new(small_config(), 3, 4).unwrap();
    let rhs_row5 = |z: Tensor| {
        let mut tape = Tape::new();
        let b = model.bind(&mut tape, &[]);
        let z = tape.constant(z);
        let dz = model.ode_rhs(&mut tape, &b, z, &f.a[0], &f.ctx).unwrap();
        tape.tensor(dz).row(5).to_vec()
    };
    let mut rng = rng::stream(0, 0);
    let z: Vec<f64> = (0..48).map(|_| rng.random_range(-1.0..1.0)).collect();
    let mut z2 = z.clone();
    for v in &mut z2[..40] {
        *v += 0.7;
    }
    assert_eq!(rhs_row5(Tensor::new(6, 8, z).unwrap()), rhs_row5(Tensor::new(6, 8, z2).unwrap()));
}

#[test]
fn vector_field_is_permutation_equivariant() {
    let model = Model::new(small_config(), 3, 8).unwrap();
    for seed in 0..5 {
        let mut rng = rng::stream(seed, 1);
        let edges: Vec<(usize, usize)> = (0..8).map(|_| (rng.random_range(0..6), rng.random_range(0..6))).collect();
        let graph = Graph::new(6, &edges).unwrap();
        let mut perm: Vec<usize> = (0..6).collect();
        rand::seq::SliceRandom::shuffle(perm.as_mut_slice(), &mut rng);
        let permuted = graph.permuted(&perm).unwrap();
        let z: Vec<f64> = (0..48).map(|_| rng.random_range(-1.0..1.0)).collect();
        let a: Vec<u8> = (0..6).map(|_| rng.random_range(0..2)).collect();
        // node i of the original graph is node perm[i] of the permuted one
        let mut zp = vec![0.0; 48];
        let mut ap = vec![0; 6];
        for i in 0..6 {
            zp[perm[i] * 8..perm[i] * 8 + 8].copy_from_slice(&z[i * 8..i * 8 + 8]);
            ap[perm[i]] = a[i];
        }
        let eval = |g: &Graph, z: Vec<f64>, a: &[u8]| {
            let mut tape = Tape::new();
            let b = model.bind(&mut tape, &[]);
            let z = tape.constant(Tensor::new(6, 8, z).unwrap());
            let dz = model.ode_rhs(&mut tape, &b, z, a, &GraphContext::new(g)).unwrap();
            tape.tensor(dz)
        };
        let d = eval(&graph, z, &a);
        let dp = eval(&permuted, zp, &ap);
        for i in 0..6 {
            for (x, y) in d.row(i).iter().zip(dp.row(perm[i])) {
                assert!((x - y).abs() < 1e-14);
            }
        }
    }
}

#[test]
fn outcome_loss_examples() {
    let mut tape = Tape::new();
    let p = tape.constant(Tensor::column(vec![1.0, 2.0]));
    let l = loss_outcome(&mut tape, &[p, p], &[vec![1.0, 2.0], vec![1.0, 2.0]], None).unwrap();
    assert_eq!(tape.scalar(l), 0.0);
    let l = loss_outcome(&mut tape, &[p], &[vec![0.0, 1.0]], None).unwrap();
    assert_eq!(tape.scalar(l), 1.0);
    assert!(loss_outcome(&mut tape, &[p], &[vec![0.0; 3]], None).is_err());
}

#[test]
fn uniform_treatment_head_gives_ln2() {
    let f = fixture(6);
    let mut model = Model::new(small_config(), 3, 5).unwrap();
    model.zero_group(Group::TreatmentHead);
    let l = value(&model, &f, Which::Treatment(true));
    assert!((l - std::f64::consts::LN_2).abs() < 1e-15);
}

#[test]
fn confident_treatment_head_gives_near_zero_loss() {
    let mut f = fixture(7);
    f.a.iter_mut().for_each(|r| r.fill(1));
    let mut model = Model::new(small_config(), 3, 5).unwrap();
    model.zero_group(Group::TreatmentHead);
    let b2 = model.params.index_of("treatment.b2").unwrap();
    model.params.get_mut(b2).value = Tensor::new(1, 2, vec![-30.0, 30.0]).unwrap();
    let l = value(&model, &f, Which::Treatment(true));
    assert!(l < 1e-20 && l >= 0.0, "{l}");
    let mut bad = f;
    bad.a[0][0] = 2;
    let mut tape = Tape::new();
    let b = model.bind(&mut tape, &[]);
    let z = tape.constant(Tensor::zeros(6, 8));
    assert!(matches!(
        model.loss_treatment(&mut tape, &b, &[z; 4], &bad.a, None, true),
        Err(Error::Domain(_))
    ));
}

#[test]
fn interference_loss_examples() {
    let f = fixture(8);
    let mut model = Model::new(small_config(), 3, 5).unwrap();
    model.zero_group(Group::InterferenceHead);
    let b2 = model.params.index_of("interference.b2").unwrap();
    let c = 0.3;
    model.params.get_mut(b2).value = Tensor::scalar(c);
    let all: Vec<f64> = f.g.iter().flatten().copied().collect();
    let m = all.iter().sum::<f64>() / all.len() as f64;
    let v = all.iter().map(|x| (x - m).powi(2)).sum::<f64>() / all.len() as f64;
    let l = value(&model, &f, Which::Interference(true));
    assert!((l - (v + (c - m).powi(2))).abs() < 1e-12);

    let mut perfect = f;
    perfect.g.iter_mut().for_each(|r| r.fill(c));
    assert_eq!(value(&model, &perfect, Which::Interference(true)), 0.0);
}

#[test]
fn total_loss_weights() {
    let mut tape = Tape::new();
    let (y, a, g) = (
        tape.constant(Tensor::scalar(1.0)),
        tape.constant(Tensor::scalar(2.0)),
        tape.constant(Tensor::scalar(3.0)),
    );
    let l = loss_total(&mut tape, y, a, g, 0.5, 0.5).unwrap();
    assert_eq!(tape.scalar(l), 3.5);
    let l = loss_total(&mut tape, y, a, g, 0.0, 0.0).unwrap();
    assert_eq!(tape.scalar(l), 1.0);
    let l = loss_total(&mut tape, y, a, g, 1.0, 0.0).unwrap();
    assert_eq!(tape.scalar(l), 3.0);
    let l = loss_total(&mut tape, y, a, g, 0.0, 1.0).unwrap();
    assert_eq!(tape.scalar(l), 4.0);
    assert!(matches!(loss_total(&mut tape, y, a, g, -0.1, 0.5), Err(Error::Parameter(_))));
}

#[test]
fn total_loss_gradient_matches_finite_differences_per_group() {
    let f = fixture(9);
    let model = Model::new(small_config(), 3, 11).unwrap();
    let grads = analytic(&model, &f, Which::Total);
    // finite differences see L_Y + 0.5 L_A + 0.5 L_G; reversal flips the
    // adversarial part for shared parameters
    for group in Group::ALL {
        let mut an = Vec::new();
        let mut nu = Vec::new();
        for idx in model.indices(&[group]) {
            an.extend_from_slice(grad(&grads, idx));
            let total = numeric(&model, &f, Which::Total, idx);
            if matches!(group, Group::Encoder | Group::OdeFunc) {
                // recover the reversed combination from the per-loss pieces
                let y = numeric_subset(&model, &f, idx, 0);
                let a = numeric_subset(&model, &f, idx, 1);
                let g = numeric_subset(&model, &f, idx, 2);
                for k in 0..total.len() {
                    nu.push(y[k] - 0.5 * a[k] - 0.5 * g[k]);
                }
            } else {
                nu.extend(total);
            }
        }
        let e = rel_err(&an, &nu);
        assert!(e < 1e-4, "{group:?} rel err {e}");
    }
}

fn numeric_subset(model: &Model, f: &Fixture, idx: usize, part: usize) -> Vec<f64> {
    let rows = [0usize, 2, 4, 5];
    let eval = |m: &Model| {
        let mut tape = Tape::new();
        let b = m.bind(&mut tape, &[]);
        let fwd = m.forward(&mut tape, &b, &f.x0, &f.v, &f.a, &f.ctx).unwrap();
        let l = match part {
            0 => loss_outcome(&mut tape, &fwd.outcomes, &f.y, Some(&rows)).unwrap(),
            1 => m.loss_treatment(&mut tape, &b, &fwd.latents, &f.a, Some(&rows), false).unwrap(),
            _ => m
                .loss_interference(&mut tape, &b, &fwd.latents, &f.a, &f.g, Some(&rows), false)
                .unwrap(),
        };
        tape.scalar(l)
    };
    let h = 1e-6;
    (0..model.params.get(idx).value.len())
        .map(|k| {
            let mut up = model.clone();
            up.params.get_mut(idx).value.data_mut()[k] += h;
            let mut dn = model.clone();
            dn.params.get_mut(idx).value.data_mut()[k] -= h;
            (eval(&up) - eval(&dn)) / (2.0 * h)
        })
        .collect()
}

#[test]
fn counterfactual_rollout_with_factual_path_matches_prediction() {
    let f = fixture(10);
    let model = Model::new(small_config(), 3, 12).unwrap();
    let factual = model.predict(&f.x0, &f.v, &f.a, &f.ctx).unwrap();
    for start in 0..=3 {
        let cf = model.predict_counterfactual(&f.x0, &f.v, &f.a, start, &f.ctx).unwrap();
        assert_eq!(cf, factual);
    }
    assert!(model.predict_counterfactual(&f.x0, &f.v, &f.a, 4, &f.ctx).is_err());
    let _ = &f.graph;
}

#[test]
fn checkpoint_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let mut model = Model::new(small_config(), 3, 13).unwrap();
    model.scaler = Scaler { mean: 4.2, std: 1.7 };
    let mut meta = toml::Table::new();
    meta.insert("seed".into(), toml::Value::Integer(13));
    model.save(dir.path(), meta.clone()).unwrap();
    let (back, meta_back) = Model::load(dir.path()).unwrap();
    assert_eq!(back, model);
    assert_eq!(meta_back, meta);
}

#[test]
fn scaler_fit_and_invert() {
    let s = Scaler::fit(&[1.0, 3.0]);
    assert_eq!((s.mean, s.std), (2.0, 1.0));
    assert_eq!(s.invert(s.apply(7.5)), 7.5);
    assert_eq!(Scaler::fit(&[5.0, 5.0]).std, 1.0);
}
