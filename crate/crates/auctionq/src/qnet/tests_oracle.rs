//! Hand-computed oracles for the forward pass and finite-difference checks
//! for the backward pass.

use crate::gridworld::{generate_maze, CompletionTimeDistribution, MotionModel};
use crate::linalg::Matrix;
use crate::mrrc::{
    initial_state, EdgeSet, Matching, MrrcEnv, ProblemState, RewardRule, Robot, Task,
};
use crate::rng;
use crate::samples::SampleSet;

use super::forward::presence_softmax;
use super::*;

/// Build a state directly: dummy geometry, explicit edges and ages.
fn synthetic_state(
    ages: &[u32],
    n_robots: usize,
    tt: impl Fn(u32, u32) -> f64,
    rt: impl Fn(u32, u32) -> f64,
) -> ProblemState {
    let tasks: Vec<Task> = ages
        .iter()
        .enumerate()
        .map(|(i, &age)| Task { id: i as u32, position: (i + 1, 1), age, alive: true })
        .collect();
    let robots: Vec<Robot> = (0..n_robots)
        .map(|i| Robot { id: i as u32, position: (0, i + 1), assigned: None })
        .collect();
    let mut tt_edges = EdgeSet::new();
    for a in &tasks {
        for b in &tasks {
            if a.id != b.id {
                tt_edges.insert(
                    (a.id, b.id),
                    CompletionTimeDistribution::new(
                        a.position,
                        b.position,
                        SampleSet::constant(tt(a.id, b.id), 4),
                    ),
                );
            }
        }
    }
    let mut rt_edges = EdgeSet::new();
    for r in &robots {
        for t in &tasks {
            rt_edges.insert(
                (r.id, t.id),
                CompletionTimeDistribution::new(
                    r.position,
                    t.position,
                    SampleSet::constant(rt(r.id, t.id), 4),
                ),
            );
        }
    }
    ProblemState { robots, tasks, rt_edges, tt_edges, clock: 0 }
}

fn small_params(arch: ArchConfig, seed: u64) -> QNetParams {
    QNetParams::init(arch, seed).unwrap()
}

#[test]
fn presence_uniform_when_readout_zero() {
    let state = synthetic_state(&[10, 20, 30], 1, |a, b| (a + b) as f64, |_, _| 1.0);
    let mut params = small_params(ArchConfig::test_profile(), 3);
    params.p1.scale(0.0);
    let p = infer_presence(&state, &params).unwrap();
    p.validate().unwrap();
    for i in 0..3 {
        for j in 0..3 {
            let expect = if i == j { 0.0 } else { 0.5 };
            assert!((p.at(i, j) - expect).abs() < 1e-12);
        }
    }
}

#[test]
fn presence_two_tasks_single_off_diagonal() {
    let state = synthetic_state(&[5, 9], 1, |_, _| 2.0, |_, _| 1.0);
    let params = small_params(ArchConfig::test_profile(), 4);
    let p = infer_presence(&state, &params).unwrap();
    assert_eq!(p.at(0, 1), 1.0);
    assert_eq!(p.at(1, 0), 1.0);
    assert_eq!(p.at(0, 0), 0.0);
}

#[test]
fn presence_single_task_is_zero_matrix() {
    let state = synthetic_state(&[5], 1, |_, _| 2.0, |_, _| 1.0);
    let params = small_params(ArchConfig::test_profile(), 4);
    let p = infer_presence(&state, &params).unwrap();
    assert_eq!(p.n, 1);
    assert_eq!(p.p, vec![0.0]);
}

/// Independent scalar recomputation of the presence pipeline on three tasks
/// with drawn (non-constant) pair samples.
#[test]
fn presence_matches_hand_computation() {
    let ages = [40u32, 70, 10];
    let mut state = synthetic_state(&ages, 1, |_, _| 0.0, |_, _| 1.0);
    // Re-insert tt edges with two distinct samples per pair.
    let sample_pair = |a: u32, b: u32| vec![(a * 3 + b) as f64, (a + 2 * b) as f64 + 0.5];
    let mut tt = EdgeSet::new();
    for a in 0..3u32 {
        for b in 0..3u32 {
            if a != b {
                tt.insert(
                    (a, b),
                    CompletionTimeDistribution::new(
                        (0, 0),
                        (0, 0),
                        SampleSet::drawn(sample_pair(a, b)),
                    ),
                );
            }
        }
    }
    state.tt_edges = tt;

    let mut arch = ArchConfig::test_profile();
    arch.p_hidden = 2;
    arch.m_presence = 2;
    arch.tau = 0.7;
    let mut params = small_params(arch, 9);
    params.p1 = Matrix::from_rows(&[&[0.8, -0.6]]);
    params.p2 = Matrix::from_rows(&[&[0.2, -0.4, 0.1], &[-0.3, 0.5, 0.25]]);

    let got = infer_presence(&state, &params).unwrap();
    got.validate().unwrap();

    // Scalar re-derivation.
    let relu = |v: f64| v.max(0.0);
    let mut g = [[0.0f64; 3]; 3];
    for i in 0..3usize {
        for j in 0..3usize {
            if i == j {
                continue;
            }
            let mut acc = 0.0;
            for k in 0..2usize {
                let e = sample_pair(i as u32, j as u32)[k] / 20.0;
                let (si, sj) = (ages[i] as f64 / 100.0, ages[j] as f64 / 100.0);
                let h0 = relu(0.2 * e - 0.4 * si + 0.1 * sj);
                let h1 = relu(-0.3 * e + 0.5 * si + 0.25 * sj);
                acc += 0.8 * h0 - 0.6 * h1;
            }
            g[i][j] = acc / 2.0;
        }
    }
    for i in 0..3usize {
        let exps: Vec<f64> =
            (0..3).filter(|&j| j != i).map(|j| (g[i][j] / 0.7).exp()).collect();
        let z: f64 = exps.iter().sum();
        let mut col = 0;
        for j in 0..3usize {
            if j == i {
                continue;
            }
            assert!(
                (got.at(i, j) - exps[col] / z).abs() < 1e-12,
                "p[{i}][{j}] = {} vs hand {}",
                got.at(i, j),
                exps[col] / z
            );
            col += 1;
        }
    }
}

#[test]
fn s2v_zero_message_map_is_pointwise() {
    let p = PresenceMatrix { n: 2, p: vec![0.0, 1.0, 1.0, 0.0], g: vec![0.0; 4] };
    let w_in = Matrix::from_rows(&[&[1.0, 0.0], &[0.5, -1.0]]);
    let w_msg = Matrix::zeros(2, 2);
    let feats = vec![vec![2.0, 1.0], vec![-1.0, 3.0]];
    let out = s2v_layer(&feats, &p, &w_in, &w_msg, 3).unwrap();
    assert_eq!(out[0], vec![2.0, 0.0]);
    assert_eq!(out[1], vec![0.0, 0.0f64.max(-0.5 - 3.0)]);

    // Zero presence gives the same result even with a non-zero message map.
    let p0 = PresenceMatrix { n: 2, p: vec![0.0; 4], g: vec![0.0; 4] };
    let w_msg = Matrix::from_rows(&[&[4.0, 4.0], &[4.0, 4.0]]);
    let out0 = s2v_layer(&feats, &p0, &w_in, &w_msg, 3).unwrap();
    assert_eq!(out0, out);
}

/// Manual fixed-point oracle: two nodes, d = 2, two sweeps, p01 = p10 = 1.
#[test]
fn s2v_two_sweeps_match_manual_computation() {
    let p = PresenceMatrix { n: 2, p: vec![0.0, 1.0, 1.0, 0.0], g: vec![0.0; 4] };
    let w_in = Matrix::from_rows(&[&[1.0], &[-0.5]]);
    let w_msg = Matrix::from_rows(&[&[0.5, 0.2], &[0.1, -0.3]]);
    let feats = vec![vec![2.0], vec![4.0]];

    // Sweep 1 (messages zero): mu_i = relu(W_in x_i)
    let mu0 = [2.0f64.max(0.0), (-1.0f64).max(0.0)]; // [2, 0]
    let mu1 = [4.0f64.max(0.0), (-2.0f64).max(0.0)]; // [4, 0]
    // Sweep 2: message into node 0 is p_{1,0} mu1 = mu1, into node 1 is mu0.
    let pre0 = [0.5 * mu1[0] + 0.2 * mu1[1] + 2.0, 0.1 * mu1[0] - 0.3 * mu1[1] - 1.0];
    let pre1 = [0.5 * mu0[0] + 0.2 * mu0[1] + 4.0, 0.1 * mu0[0] - 0.3 * mu0[1] - 2.0];
    let expect0: Vec<f64> = pre0.iter().map(|v| v.max(0.0)).collect();
    let expect1: Vec<f64> = pre1.iter().map(|v| v.max(0.0)).collect();

    let out = s2v_layer(&feats, &p, &w_in, &w_msg, 2).unwrap();
    assert_eq!(out[0], expect0);
    assert_eq!(out[1], expect1);
}

#[test]
fn q_zero_readout_gives_zero() {
    let state = synthetic_state(&[10, 60, 90], 2, |a, b| 1.0 + (a + b) as f64, |r, t| (r + t + 1) as f64);
    let mut params = small_params(ArchConfig::test_profile(), 6);
    params.e7.scale(0.0);
    let action = Matching::new(vec![(0, 1), (1, 2)]).unwrap();
    let q = q_value(&state, &action, &params, &mut rng::stream(3)).unwrap();
    assert_eq!(q.value, 0.0);
    assert!(q.per_sample.iter().all(|&v| v == 0.0));
}

#[test]
fn q_insensitive_to_sample_count_when_deterministic() {
    let state = synthetic_state(&[30, 45], 1, |a, b| (2 + a + b) as f64, |_, t| (3 + t) as f64);
    let action = Matching::new(vec![(0, 0)]).unwrap();
    let mut arch = ArchConfig::test_profile();
    arch.n_samples = 1;
    let p1 = small_params(arch, 8);
    let q1 = q_value(&state, &action, &p1, &mut rng::stream(1)).unwrap();
    let mut arch5 = arch;
    arch5.n_samples = 5;
    let mut p5 = small_params(arch5, 8);
    // Same weights, only N differs.
    p5.p1 = p1.p1.clone();
    p5.p2 = p1.p2.clone();
    p5.e3 = p1.e3.clone();
    p5.e4 = p1.e4.clone();
    p5.e5 = p1.e5.clone();
    p5.e6 = p1.e6.clone();
    p5.e7 = p1.e7.clone();
    let q5 = q_value(&state, &action, &p5, &mut rng::stream(1)).unwrap();
    // The N draws are identical; the mean only differs by summation rounding.
    assert!((q1.value - q5.value).abs() <= 1e-14 * q1.value.abs());
    assert_eq!(q5.per_sample.len(), 5);
    assert!(q5.per_sample.iter().all(|&v| v == q5.per_sample[0]));
    assert_eq!(q1.per_sample[0], q5.per_sample[0]);
}

/// Full end-to-end forward oracle: one robot, two tasks, d = 2, one sweep
/// per layer, deterministic edges, every number computed by hand.
#[test]
fn q_end_to_end_manual_forward() {
    let state = synthetic_state(&[50, 80], 1, |a, b| (4 + 2 * (a + b)) as f64, |_, _| 60.0);
    let arch = ArchConfig {
        d: 2,
        p_hidden: 1,
        feat_dim: 1,
        tau: 1.0,
        t1: 1,
        t2: 1,
        m_presence: 1,
        n_samples: 1,
        init: InitKind::Symmetric,
        flags: ArchFlags::default(),
    };
    let mut params = small_params(arch, 11);
    params.e4 = Matrix::from_rows(&[&[1.0], &[-0.5]]);
    params.e6 = Matrix::from_rows(&[&[0.5, 1.0, -1.0], &[0.25, -0.5, 0.5]]);
    params.e7 = Matrix::from_rows(&[&[2.0, -1.0]]);

    // With one sweep per layer, the zero init kills every message term:
    //   mu_0 = relu(E4 * 3)   = [3, 0]   (x_0 = edge sample 60 / time scale 20)
    //   mu_1 = relu(E4 * 0)   = [0, 0]
    //   c_0  = [3, 0, 0.5]  c_1 = [0, 0, 0.8]
    //   g_0  = relu(E6 c_0) = [1.0, 1.0]
    //   g_1  = relu(E6 c_1) = [0.0, 0.4]
    //   q    = E7 . ([1,1] + [0,0.4]) = 2*1.0 - 1.4 = 0.6
    let action = Matching::new(vec![(0, 0)]).unwrap();
    let q = q_value(&state, &action, &params, &mut rng::stream(2)).unwrap();
    assert!((q.value - 0.6).abs() < 1e-12, "q = {}", q.value);
}

fn batch_from<'a>(
    state: &'a ProblemState,
    action: &Matching,
    seed: u64,
    target: f64,
) -> BatchItem<'a> {
    let view = StateView::from_mrrc(state);
    let binding = ActionBinding::from_mrrc(state, &view, action).unwrap();
    BatchItem { view, binding, seed, target }
}

#[test]
fn loss_zero_when_targets_match() {
    let state = synthetic_state(&[10, 20, 30], 2, |a, b| (1 + a + b) as f64, |r, t| (1 + r + t) as f64);
    let params = small_params(ArchConfig::test_profile(), 5);
    let action = Matching::new(vec![(0, 0), (1, 2)]).unwrap();

    // Evaluate q with the same frozen draws the loss will use (context
    // seeded identically, common random numbers on).
    let q = {
        let view = StateView::from_mrrc(&state);
        let ctx = EvalContext::new(view, &params, 77, true).unwrap();
        ctx.q_mrrc(&state, &action, &params).unwrap().value
    };
    let item = batch_from(&state, &action, 77, q);
    let (loss, grads) = loss_and_gradients(std::slice::from_ref(&item), &params).unwrap();
    assert!(loss < 1e-20, "loss {loss}");
    for (name, g) in grads.blocks() {
        assert!(g.data.iter().all(|&v| v.abs() < 1e-9), "{name} grads non-zero");
    }
}

#[test]
fn finite_difference_readout_block() {
    let state = synthetic_state(&[15, 75], 1, |a, b| (2 + a + b) as f64, |_, t| (4 + t) as f64);
    let params = small_params(ArchConfig::test_profile(), 13);
    let action = Matching::new(vec![(0, 1)]).unwrap();
    let item = batch_from(&state, &action, 5, 2.5);
    let report = finite_difference_report(std::slice::from_ref(&item), &params, 1e-5).unwrap();
    let e7 = report.iter().find(|(n, _)| n == "e7").unwrap();
    assert!(e7.1 < 1e-4, "e7 relative error {}", e7.1);
}

/// Finite-difference sweep across every parameter block, in the default
/// joint-training mode, on states with both constant and drawn samples.
#[test]
fn finite_difference_all_blocks() {
    let maze = generate_maze(21, 9, 9, 0.4).unwrap();
    let env = MrrcEnv::new(maze, MotionModel::stochastic(), RewardRule::Linear)
        .with_edge_samples(6);
    let state = initial_state(&env, 2, 3, (0, 100), 40).unwrap();
    let action = Matching::new(vec![(0, 0), (1, 2)]).unwrap();
    let state2 = initial_state(&env, 1, 2, (0, 100), 41).unwrap();
    let action2 = Matching::new(vec![(0, 1)]).unwrap();

    let params = small_params(ArchConfig::test_profile(), 17);
    let items = vec![
        batch_from(&state, &action, 900, 45.0),
        batch_from(&state2, &action2, 901, -3.0),
    ];
    let report = finite_difference_report(&items, &params, 1e-5).unwrap();
    for (name, err) in &report {
        assert!(*err < 1e-4, "block {name} relative error {err}");
    }
}

/// The ablation variants must also carry exact gradients: unused blocks
/// stay zero, used blocks still match finite differences.
#[test]
fn finite_difference_ablation_modes() {
    let state = synthetic_state(&[25, 65, 85], 2, |a, b| (3 + a + b) as f64, |r, t| (2 + r + t) as f64);
    let action = Matching::new(vec![(0, 0), (1, 1)]).unwrap();

    let mut single = ArchConfig::test_profile();
    single.flags.single_layer = true;
    let params = small_params(single, 19);
    let item = batch_from(&state, &action, 7, 12.0);
    let report = finite_difference_report(std::slice::from_ref(&item), &params, 1e-5).unwrap();
    for (name, err) in &report {
        assert!(*err < 1e-4, "single-layer block {name} error {err}");
    }

    let mut uniform = ArchConfig::test_profile();
    uniform.flags.uniform_presence = true;
    let params = small_params(uniform, 23);
    let item = batch_from(&state, &action, 8, -4.0);
    let report = finite_difference_report(std::slice::from_ref(&item), &params, 1e-5).unwrap();
    for (name, err) in &report {
        assert!(*err < 1e-4, "uniform-presence block {name} error {err}");
    }

    // Frozen presence: p is a constant input, so only the embedding blocks
    // are expected to match finite differences.
    let mut frozen = ArchConfig::test_profile();
    frozen.flags.train_presence = false;
    let params = small_params(frozen, 29);
    let item = batch_from(&state, &action, 9, 6.0);
    let (_, grads) = loss_and_gradients(std::slice::from_ref(&item), &params).unwrap();
    assert!(grads.p1.data.iter().all(|&v| v == 0.0));
    assert!(grads.p2.data.iter().all(|&v| v == 0.0));
    let report = finite_difference_report(std::slice::from_ref(&item), &params, 1e-5).unwrap();
    for (name, err) in &report {
        if name != "p1" && name != "p2" {
            assert!(*err < 1e-4, "frozen-presence block {name} error {err}");
        }
    }
}

#[test]
fn presence_rows_sum_to_one_and_shift_invariance() {
    let mut r = rng::stream(31);
    use rand::Rng as _;
    for trial in 0..25 {
        let n = 2 + (trial % 4);
        let ages: Vec<u32> = (0..n).map(|_| r.gen_range(0..=100)).collect();
        let state = synthetic_state(&ages, 1, |a, b| ((a * 7 + b * 3) % 11) as f64 + 0.5, |_, _| 1.0);
        let params = small_params(ArchConfig::test_profile(), 100 + trial as u64);
        let p = infer_presence(&state, &params).unwrap();
        p.validate().unwrap();

        // Softmax shift invariance: adding a constant per row leaves p unchanged.
        let mut shifted_g = p.g.clone();
        for i in 0..p.n {
            let c = (i as f64 + 1.0) * 3.25;
            for j in 0..p.n {
                shifted_g[i * p.n + j] += c;
            }
        }
        let mut shifted_p = vec![0.0; p.n * p.n];
        presence_softmax(&shifted_g, p.n, params.arch.tau, &mut shifted_p);
        for (a, b) in p.p.iter().zip(&shifted_p) {
            assert!((a - b).abs() < 1e-12, "shift changed presence: {a} vs {b}");
        }
    }
}

/// Permuting the task list (ids unchanged) must not change the Q value.
#[test]
fn node_order_equivariance() {
    let maze = generate_maze(33, 9, 9, 0.2).unwrap();
    let env = MrrcEnv::new(maze, MotionModel::deterministic(), RewardRule::Linear)
        .with_edge_samples(4);
    let params = small_params(ArchConfig::test_profile(), 55);
    for seed in 0..10u64 {
        let state = initial_state(&env, 2, 4, (0, 100), 200 + seed).unwrap();
        let action = Matching::new(vec![(0, 1), (1, 3)]).unwrap();
        let q = q_value(&state, &action, &params, &mut rng::stream(seed)).unwrap();

        let mut permuted = state.clone();
        permuted.tasks.reverse();
        permuted.tasks.swap(0, 2);
        let qp = q_value(&permuted, &action, &params, &mut rng::stream(seed)).unwrap();
        assert!(
            (q.value - qp.value).abs() < 1e-9,
            "q changed under relabeling: {} vs {}",
            q.value,
            qp.value
        );
    }
}

#[test]
fn frozen_rng_makes_q_pure() {
    let maze = generate_maze(35, 9, 9, 0.5).unwrap();
    let env = MrrcEnv::new(maze, MotionModel::stochastic(), RewardRule::Linear)
        .with_edge_samples(12);
    let state = initial_state(&env, 2, 3, (0, 100), 77).unwrap();
    let action = Matching::new(vec![(0, 0), (1, 1)]).unwrap();
    let params = small_params(ArchConfig::test_profile(), 60);
    let a = q_value(&state, &action, &params, &mut rng::stream(9)).unwrap();
    let b = q_value(&state, &action, &params, &mut rng::stream(9)).unwrap();
    assert_eq!(a, b);
    let c = q_value(&state, &action, &params, &mut rng::stream(10)).unwrap();
    assert_ne!(a.value, c.value);
}

#[test]
fn q_errors_on_dead_task_reference() {
    let mut state = synthetic_state(&[10, 20], 1, |_, _| 1.0, |_, _| 1.0);
    state.tasks[1].alive = false;
    let params = small_params(ArchConfig::test_profile(), 61);
    let action = Matching::new(vec![(0, 1)]).unwrap();
    assert!(q_value(&state, &action, &params, &mut rng::stream(0)).is_err());
}
