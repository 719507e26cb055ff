//! Acceptance suite. Runs every criterion, prints one PASS/FAIL line each,
//! and exits non-zero if any fails.

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::time::{Duration, Instant};

use laguna_core::benchmark::{ablation_on, generate, median, ratio_sweep_on, HarnessConfig, SynthConfig};
use laguna_core::checkpoint;
use laguna_core::classifier::{
    batch_terms, cross_domain_attend_var, evaluate, export_embeddings, train_classifier, AblationPreset,
    AttentionHead, BatchData, ClassifierModel, LearnableAnchors, TrainConfig, TrainContext,
};
use laguna_core::data::{load_manifest, Dataset, Domain};
use laguna_core::io::sha256_file;
use laguna_core::losses::{cross_entropy_sum, structure_loss_sum, volume_regularizer_var, weighted_total};
use laguna_core::nn::TwoLayer;
use laguna_core::numeric::{cholesky_logdet, JitterPolicy, Parameter};
use laguna_core::relative::{
    init_learnable_anchors, reference_affinities, relative_matrix, relative_var, AnchorRole, AnchorSet,
};
use laguna_core::supervisor::{pseudo_label, supervisor_accuracy, train_supervisor, SupervisorConfig};
use laguna_core::{Matrix, Tape, Var};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const SEEDS: [u64; 5] = [0, 1, 2, 3, 4];
const FD_STEP: f64 = 1e-5;

type Check = (bool, String);

/// Builds a scalar from input leaves on a fresh tape.
type Scalarized<'a> = dyn for<'t> Fn(&'t Tape<f64>, &[Var<'t, f64>]) -> Var<'t, f64> + 'a;

type Criterion<'a> = (&'static str, Box<dyn Fn() -> Check + 'a>);

type Case = (&'static str, Box<dyn Fn(&mut ChaCha8Rng) -> f64>);

// ---------------------------------------------------------------- helpers

fn uniform(rows: usize, cols: usize, lo: f64, hi: f64, rng: &mut ChaCha8Rng) -> Matrix<f64> {
    Matrix::from_fn(rows, cols, |_, _| rng.random_range(lo..hi))
}

/// Entries bounded away from zero, for ops with a kink there.
fn away_from_zero(rows: usize, cols: usize, rng: &mut ChaCha8Rng) -> Matrix<f64> {
    Matrix::from_fn(rows, cols, |_, _| {
        let m: f64 = rng.random_range(0.1..1.5);
        if rng.random_bool(0.5) {
            m
        } else {
            -m
        }
    })
}

fn with_entry(m: &Matrix<f64>, k: usize, delta: f64) -> Matrix<f64> {
    let mut v = m.as_slice().to_vec();
    v[k] += delta;
    Matrix::new(m.rows(), m.cols(), v).unwrap()
}

/// `‖a − n‖ / (‖a‖ + ‖n‖)`, zero when both vanish.
fn relative_error(a: &[f64], n: &[f64]) -> f64 {
    let diff: f64 = a.iter().zip(n).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
    let scale: f64 = a.iter().map(|x| x * x).sum::<f64>().sqrt() + n.iter().map(|x| x * x).sum::<f64>().sqrt();
    if scale < 1e-300 {
        0.0
    } else {
        diff / scale
    }
}

/// Central differences of `f` against the tape gradient, for each input.
fn fd_check(inputs: &[Matrix<f64>], f: &Scalarized<'_>) -> f64 {
    let tape = Tape::new();
    let vars: Vec<Var<f64>> = inputs.iter().map(|m| tape.leaf(m.clone())).collect();
    let out = f(&tape, &vars);
    let grads = tape.backward(out).unwrap();
    let eval = |ms: &[Matrix<f64>]| -> f64 {
        let t = Tape::new();
        let vs: Vec<Var<f64>> = ms.iter().map(|m| t.leaf(m.clone())).collect();
        f(&t, &vs).item()
    };
    let mut worst: f64 = 0.0;
    for (i, m) in inputs.iter().enumerate() {
        let analytic = grads.get_or_zeros(vars[i]).into_vec();
        let numeric: Vec<f64> = (0..m.len())
            .map(|k| {
                let mut plus = inputs.to_vec();
                let mut minus = inputs.to_vec();
                plus[i] = with_entry(m, k, FD_STEP);
                minus[i] = with_entry(m, k, -FD_STEP);
                (eval(&plus) - eval(&minus)) / (2.0 * FD_STEP)
            })
            .collect();
        worst = worst.max(relative_error(&analytic, &numeric));
    }
    worst
}

/// Reduces a matrix-valued node to a scalar with fixed random weights.
fn project<'t>(tape: &'t Tape<f64>, v: Var<'t, f64>, seed: u64) -> Var<'t, f64> {
    let (r, c) = v.shape();
    let w = uniform(r, c, -1.0, 1.0, &mut ChaCha8Rng::seed_from_u64(seed ^ 0x5eed));
    v.mul(tape.constant(w)).unwrap().sum().unwrap()
}

fn synth_dir(cfg: &SynthConfig) -> (tempfile::TempDir, Dataset<f64>) {
    let dir = tempfile::tempdir().unwrap();
    let manifest = generate(cfg, dir.path()).unwrap();
    let d = load_manifest(&manifest).unwrap();
    (dir, d)
}

fn reference_of(d: &Dataset<f64>) -> AnchorSet<f64> {
    AnchorSet::reference(d.reference_anchors.clone()).unwrap()
}

// ---------------------------------------------------------------- 1

fn op_cases() -> Vec<Case> {
    fn one(rng: &mut ChaCha8Rng, shapes: &[(usize, usize)], f: &Scalarized<'_>) -> f64 {
        let ins: Vec<Matrix<f64>> = shapes.iter().map(|&(r, c)| uniform(r, c, -1.5, 1.5, rng)).collect();
        fd_check(&ins, f)
    }
    vec![
        ("matmul", Box::new(|rng| one(rng, &[(3, 4), (4, 2)], &|t, v| project(t, v[0].matmul(v[1]).unwrap(), 1)))),
        ("add", Box::new(|rng| one(rng, &[(3, 4), (3, 4)], &|t, v| project(t, v[0].add(v[1]).unwrap(), 2)))),
        ("sub", Box::new(|rng| one(rng, &[(3, 4), (3, 4)], &|t, v| project(t, v[0].sub(v[1]).unwrap(), 3)))),
        ("mul", Box::new(|rng| one(rng, &[(3, 4), (3, 4)], &|t, v| project(t, v[0].mul(v[1]).unwrap(), 4)))),
        ("add_row", Box::new(|rng| one(rng, &[(3, 4), (1, 4)], &|t, v| project(t, v[0].add_row(v[1]).unwrap(), 5)))),
        ("scale", Box::new(|rng| one(rng, &[(3, 4)], &|t, v| project(t, v[0].scale(-1.7).unwrap(), 6)))),
        ("offset", Box::new(|rng| one(rng, &[(3, 4)], &|t, v| project(t, v[0].offset(0.3).unwrap(), 7)))),
        ("transpose", Box::new(|rng| one(rng, &[(3, 4)], &|t, v| project(t, v[0].transpose().unwrap(), 8)))),
        ("tanh", Box::new(|rng| one(rng, &[(3, 4)], &|t, v| project(t, v[0].tanh().unwrap(), 9)))),
        (
            "abs",
            Box::new(|rng| {
                let x = away_from_zero(3, 4, rng);
                fd_check(&[x], &|t, v| project(t, v[0].abs().unwrap(), 10))
            }),
        ),
        ("softmax_rows", Box::new(|rng| one(rng, &[(3, 5)], &|t, v| project(t, v[0].softmax_rows(0.7).unwrap(), 11)))),
        ("log_softmax_rows", Box::new(|rng| one(rng, &[(3, 5)], &|t, v| project(t, v[0].log_softmax_rows().unwrap(), 12)))),
        (
            "l2_normalize_rows",
            Box::new(|rng| one(rng, &[(3, 5)], &|t, v| project(t, v[0].l2_normalize_rows(1e-12).unwrap(), 13))),
        ),
        ("gather", Box::new(|rng| one(rng, &[(4, 5)], &|t, v| project(t, v[0].gather(&[4, 0, 2, 2]).unwrap(), 14)))),
        ("select_rows", Box::new(|rng| one(rng, &[(4, 3)], &|t, v| project(t, v[0].select_rows(&[3, 1, 1]).unwrap(), 15)))),
        ("sum", Box::new(|rng| one(rng, &[(3, 4)], &|t, v| v[0].sum().unwrap().scale(1.3).unwrap().tanh().unwrap().mul(t.constant(Matrix::scalar(2.0).unwrap())).unwrap()))),
        ("mean", Box::new(|rng| one(rng, &[(3, 4)], &|_, v| v[0].mean().unwrap().tanh().unwrap()))),
        (
            "logdet",
            Box::new(|rng| {
                let x = uniform(4, 6, -1.0, 1.0, rng);
                fd_check(&[x], &|_, v| v[0].matmul(v[0].transpose().unwrap()).unwrap().logdet(&JitterPolicy::escalating()).unwrap())
            }),
        ),
        ("relative_var", Box::new(|rng| one(rng, &[(3, 5), (4, 5)], &|t, v| project(t, relative_var(v[0], v[1]).unwrap(), 16)))),
        (
            "cross_entropy_sum",
            Box::new(|rng| one(rng, &[(4, 3)], &|_, v| cross_entropy_sum(v[0], &[0, 2, 1, 2]).unwrap())),
        ),
        (
            "structure_loss_sum",
            Box::new(|rng| {
                let a = away_from_zero(3, 4, rng);
                let b = Matrix::zeros(3, 4);
                fd_check(&[a, b], &|_, v| structure_loss_sum(v[0], v[1]).unwrap())
            }),
        ),
        (
            "volume_regularizer",
            Box::new(|rng| {
                let s = uniform(3, 5, -1.0, 1.0, rng);
                let tt = uniform(3, 5, -1.0, 1.0, rng);
                // reference log-det placed far from both so the abs stays smooth
                fd_check(&[s, tt], &|_, v| {
                    let gs = v[0].matmul(v[0].transpose().unwrap()).unwrap();
                    let gt = v[1].matmul(v[1].transpose().unwrap()).unwrap();
                    volume_regularizer_var(gs, gt, 25.0, &JitterPolicy::escalating()).unwrap()
                })
            }),
        ),
        (
            "cross_domain_attention",
            Box::new(|rng| {
                let ins: Vec<Matrix<f64>> = [(3, 4), (5, 4), (5, 4), (4, 4), (4, 4), (4, 4), (4, 4), (4, 4), (4, 4)]
                    .iter()
                    .map(|&(r, c)| uniform(r, c, -1.0, 1.0, rng))
                    .collect();
                fd_check(&ins, &|t, v| {
                    let heads = [[v[3], v[4], v[5]], [v[6], v[7], v[8]]];
                    project(t, cross_domain_attend_var(v[0], v[1], v[2], &heads).unwrap(), 17)
                })
            }),
        ),
    ]
}

/// Stage-two loss over a tiny supervisor, gradient against every parameter.
fn stage2_check(rng: &mut ChaCha8Rng) -> f64 {
    let (n_c, d_l, d_c, hidden, batch) = (3, 4, 5, 6, 7);
    let params = vec![
        uniform(d_c, hidden, -0.8, 0.8, rng),
        uniform(1, hidden, -0.3, 0.3, rng),
        uniform(hidden, d_l, -0.8, 0.8, rng),
        uniform(1, d_l, -0.3, 0.3, rng),
    ];
    let caps = uniform(batch, d_c, -1.0, 1.0, rng);
    let anchors = uniform(n_c, d_l, -1.0, 1.0, rng);
    let labels: Vec<usize> = (0..batch).map(|i| i % n_c).collect();
    let aff = reference_affinities(&AnchorSet::reference(anchors.clone()).unwrap()).unwrap();
    fd_check(&params, &|t, v| {
        let h = caps.clone();
        let z = t
            .constant(h)
            .matmul(v[0])
            .and_then(|x| x.add_row(v[1]))
            .and_then(|x| x.tanh())
            .and_then(|x| x.matmul(v[2]))
            .and_then(|x| x.add_row(v[3]))
            .unwrap();
        let r = relative_var(z, t.constant(anchors.clone())).unwrap();
        let ce = cross_entropy_sum(r.scale(1.0 / 0.5).unwrap(), &labels).unwrap();
        let ls = structure_loss_sum(r, t.constant(aff.select_rows(&labels))).unwrap();
        weighted_total(&[(1.0, Some(ce)), (0.1, Some(ls))]).unwrap().unwrap()
    })
}

/// Stage-three loss with every component on, gradient against every parameter.
fn stage3_check(rng: &mut ChaCha8Rng) -> f64 {
    let (n_c, d_f, d_v) = (3, 5, 4);
    let reference = AnchorSet::reference(uniform(n_c, d_v, -1.0, 1.0, rng)).unwrap();
    let net = |i, h, o, rng: &mut ChaCha8Rng| {
        TwoLayer::from_parts(
            "x",
            uniform(i, h, -0.8, 0.8, rng),
            uniform(1, h, -0.2, 0.2, rng),
            uniform(h, o, -0.8, 0.8, rng),
            uniform(1, o, -0.2, 0.2, rng),
        )
    };
    let head = |h: usize, rng: &mut ChaCha8Rng| AttentionHead {
        query: Parameter::new(format!("attn{h}.q"), uniform(d_v, d_v, -0.8, 0.8, rng)),
        key: Parameter::new(format!("attn{h}.k"), uniform(d_v, d_v, -0.8, 0.8, rng)),
        value: Parameter::new(format!("attn{h}.v"), uniform(d_v, d_v, -0.8, 0.8, rng)),
    };
    let model = ClassifierModel {
        encoder: net(d_f, 6, d_v, rng),
        head: net(d_v, 5, n_c, rng),
        attention: vec![head(0, rng), head(1, rng)],
        anchors: Some(LearnableAnchors {
            // scaled off the reference volume so the regularizer's abs is smooth
            source: Parameter::new("anchors.source", uniform(n_c, d_v, -2.0, 2.0, rng)),
            target: Some(Parameter::new("anchors.target", uniform(n_c, d_v, -2.0, 2.0, rng))),
        }),
    };
    let cfg = TrainConfig::default().with_preset(AblationPreset::Full);
    let ctx = TrainContext::new(&reference, &cfg).unwrap();
    let batch = BatchData {
        source_x: uniform(3, d_f, -1.0, 1.0, rng),
        source_y: vec![0, 1, 2],
        source_r: uniform(3, n_c, -1.0, 1.0, rng),
        target_x: uniform(2, d_f, -1.0, 1.0, rng),
        target_y: vec![2, 1],
        target_r: uniform(2, n_c, -1.0, 1.0, rng),
    };
    let values: Vec<Matrix<f64>> = model.parameters().iter().map(|p| p.value.clone()).collect();
    let rebuild = |vals: &[Matrix<f64>]| {
        let mut m = model.clone();
        for (p, v) in m.parameters_mut(true).into_iter().zip(vals) {
            p.value = v.clone();
        }
        m
    };
    let loss_at = |vals: &[Matrix<f64>]| {
        let m = rebuild(vals);
        let tape = Tape::new();
        let bound = m.bind(&tape, true);
        batch_terms(&bound, &ctx, &batch).unwrap().total.item()
    };
    let mut m = rebuild(&values);
    let tape = Tape::new();
    let bound = m.bind(&tape, true);
    let total = batch_terms(&bound, &ctx, &batch).unwrap().total;
    let grads = tape.backward(total).unwrap();
    m.accumulate(&grads, &bound);
    let mut worst: f64 = 0.0;
    for (i, p) in m.parameters().iter().enumerate() {
        let numeric: Vec<f64> = (0..values[i].len())
            .map(|k| {
                let mut plus = values.clone();
                let mut minus = values.clone();
                plus[i] = with_entry(&values[i], k, FD_STEP);
                minus[i] = with_entry(&values[i], k, -FD_STEP);
                (loss_at(&plus) - loss_at(&minus)) / (2.0 * FD_STEP)
            })
            .collect();
        worst = worst.max(relative_error(p.grad.as_slice(), &numeric));
    }
    worst
}

fn criterion_gradients() -> Check {
    const TRIALS: u64 = 20;
    let start = Instant::now();
    let mut failures = Vec::new();
    let mut worst_op: f64 = 0.0;
    for (name, case) in op_cases() {
        let mut worst: f64 = 0.0;
        for trial in 0..TRIALS {
            worst = worst.max(case(&mut ChaCha8Rng::seed_from_u64(trial)));
        }
        if worst > 1e-4 {
            failures.push(format!("{name} {worst:.2e}"));
        }
        worst_op = worst_op.max(worst);
    }
    let mut worst_e2e: f64 = 0.0;
    for trial in 0..TRIALS {
        let mut rng = ChaCha8Rng::seed_from_u64(100 + trial);
        worst_e2e = worst_e2e.max(stage2_check(&mut rng)).max(stage3_check(&mut rng));
    }
    if worst_e2e > 1e-3 {
        failures.push(format!("end-to-end {worst_e2e:.2e}"));
    }
    let elapsed = start.elapsed();
    let ok = failures.is_empty() && elapsed < Duration::from_secs(60);
    (
        ok,
        format!(
            "worst op rel err {worst_op:.2e}, worst stage-2/3 {worst_e2e:.2e}, {TRIALS} trials each, {elapsed:.1?}{}",
            if failures.is_empty() { String::new() } else { format!("; over tolerance: {}", failures.join(", ")) }
        ),
    )
}

// ---------------------------------------------------------------- 2

/// Laplace expansion along the first row.
fn cofactor_det(m: &[Vec<f64>]) -> f64 {
    let n = m.len();
    if n == 1 {
        return m[0][0];
    }
    (0..n)
        .map(|j| {
            let minor: Vec<Vec<f64>> = m[1..]
                .iter()
                .map(|row| row.iter().enumerate().filter(|&(k, _)| k != j).map(|(_, &v)| v).collect())
                .collect();
            let sign = if j % 2 == 0 { 1.0 } else { -1.0 };
            sign * m[0][j] * cofactor_det(&minor)
        })
        .sum()
}

/// Gauss–Jordan inverse with partial pivoting.
fn gauss_jordan_inverse(m: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let n = m.len();
    let mut a: Vec<Vec<f64>> = m
        .iter()
        .enumerate()
        .map(|(i, row)| {
            let mut r = row.clone();
            r.extend((0..n).map(|j| if i == j { 1.0 } else { 0.0 }));
            r
        })
        .collect();
    for col in 0..n {
        let pivot = (col..n).max_by(|&x, &y| a[x][col].abs().total_cmp(&a[y][col].abs())).unwrap();
        a.swap(col, pivot);
        let p = a[col][col];
        a[col].iter_mut().for_each(|v| *v /= p);
        for r in 0..n {
            if r != col {
                let f = a[r][col];
                let pivot_row = a[col].clone();
                a[r].iter_mut().zip(&pivot_row).for_each(|(v, pv)| *v -= f * pv);
            }
        }
    }
    a.into_iter().map(|r| r[n..].to_vec()).collect()
}

fn criterion_logdet() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut worst_val: f64 = 0.0;
    let mut worst_grad: f64 = 0.0;
    #[allow(clippy::needless_range_loop)]
    for n in 1..=6 {
        for _ in 0..20 {
            let b = uniform(n, n, -1.0, 1.0, &mut rng);
            let m = b.matmul(&b.transpose()).unwrap().add(&Matrix::identity(n).scale(0.5)).unwrap();
            let rows: Vec<Vec<f64>> = m.iter_rows().map(<[f64]>::to_vec).collect();
            let want = cofactor_det(&rows).ln();
            let got = cholesky_logdet(&m, &JitterPolicy::fixed(0.0)).unwrap().value;
            worst_val = worst_val.max((got - want).abs());

            let tape = Tape::new();
            let x = tape.leaf(m.clone());
            let grads = tape.backward(x.logdet(&JitterPolicy::fixed(0.0)).unwrap()).unwrap();
            let g = grads.get_or_zeros(x);
            let inv = gauss_jordan_inverse(&rows);
            for i in 0..n {
                for j in 0..n {
                    worst_grad = worst_grad.max((g.get(i, j) - inv[i][j]).abs());
                }
            }
        }
    }
    (
        worst_val < 1e-8 && worst_grad < 1e-6,
        format!("max |logdet - ln cofactor det| {worst_val:.2e}, max |grad - inverse| {worst_grad:.2e}, n = 1..6"),
    )
}

// ---------------------------------------------------------------- 3

fn brute_cos(a: &[f64], b: &[f64]) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na = a.iter().map(|x| x * x).sum::<f64>().sqrt().max(1e-12);
    let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt().max(1e-12);
    dot / (na * nb)
}

fn criterion_relative() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let (mut rot, mut scale, mut oracle): (f64, f64, f64) = (0.0, 0.0, 0.0);
    let mut in_range = true;
    for _ in 0..50 {
        let dim = 6;
        let q = uniform(5, dim, -2.0, 2.0, &mut rng);
        let a = uniform(4, dim, -2.0, 2.0, &mut rng);
        let r = relative_matrix(&q, &a).unwrap();
        let rotation = laguna_core::benchmark::random_orthogonal(dim, &mut rng);
        let rr = relative_matrix(&q.matmul(&rotation).unwrap(), &a.matmul(&rotation).unwrap()).unwrap();
        rot = rot.max(rr.sub(&r).unwrap().max_abs());
        let c: f64 = rng.random_range(0.01..100.0);
        let rs = relative_matrix(&q.scale(c), &a).unwrap();
        scale = scale.max(rs.sub(&r).unwrap().max_abs());
        in_range &= r.as_slice().iter().all(|v| (-1.0..=1.0).contains(v));
        for i in 0..q.rows() {
            for j in 0..a.rows() {
                oracle = oracle.max((r.get(i, j) - brute_cos(q.row(i), a.row(j))).abs());
            }
        }
    }
    (
        rot < 1e-10 && scale < 1e-10 && in_range && oracle < 1e-12,
        format!("rotation {rot:.2e}, scale {scale:.2e}, range ok {in_range}, cosine oracle {oracle:.2e}"),
    )
}

// ---------------------------------------------------------------- 4

fn criterion_regularizer() -> Check {
    let policy = JitterPolicy::escalating();
    let mut worst_init: f64 = 0.0;
    let mut flips = true;
    for seed in 0..10u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n = 5;
        let reference = AnchorSet::reference(uniform(n, 8, -1.0, 1.0, &mut rng)).unwrap();
        let ld_ref = reference.gram_logdet(&policy).unwrap();
        let a = init_learnable_anchors(n, 8, &reference, AnchorRole::Source, seed).unwrap();
        worst_init = worst_init.max((a.gram_logdet(&policy).unwrap() - ld_ref).abs());

        // 1-parameter family c·A0; dL/dc = <∂L/∂A, A0>
        let a0 = uniform(n, 8, -1.0, 1.0, &mut rng);
        let ld0 = cholesky_logdet(&a0.matmul(&a0.transpose()).unwrap(), &policy).unwrap().value;
        let c_star = ((ld_ref - ld0) / (2.0 * n as f64)).exp();
        for k in -20..=20 {
            if k == 0 {
                continue;
            }
            let c = c_star * (k as f64 * 0.05).exp();
            let tape = Tape::new();
            let s = tape.leaf(a0.scale(c));
            let t = tape.leaf(a0.scale(c));
            let gs = s.matmul(s.transpose().unwrap()).unwrap();
            let gt = t.matmul(t.transpose().unwrap()).unwrap();
            let loss = volume_regularizer_var(gs, gt, ld_ref, &policy).unwrap();
            let grads = tape.backward(loss).unwrap();
            let dl_dc: f64 = [s, t]
                .iter()
                .map(|v| grads.get_or_zeros(*v).as_slice().iter().zip(a0.as_slice()).map(|(g, x)| g * x).sum::<f64>())
                .sum();
            flips &= if k < 0 { dl_dc < 0.0 } else { dl_dc > 0.0 };
        }
    }
    (
        worst_init < 1e-6 && flips,
        format!("max |init logdet - reference| {worst_init:.2e}, dL/dc negative below and positive above c*: {flips}"),
    )
}

// ---------------------------------------------------------------- 5

fn criterion_anti_collapse(d: &Dataset<f64>, desk: &HarnessConfig) -> Check {
    let start = Instant::now();
    let reference = reference_of(d);
    let mut worst_with: f64 = 0.0;
    let mut finals_without = Vec::new();
    for seed in SEEDS {
        let sup = train_supervisor(d, &reference, &SupervisorConfig { seed, ..desk.supervisor.clone() }).unwrap();
        let table = pseudo_label(&sup.model, d, &reference).unwrap();
        for lambda3 in [0.001, 0.0] {
            let mut cfg = TrainConfig { seed, ..desk.classifier.clone() }.with_preset(AblationPreset::Full);
            cfg.weights.lambda2 *= 10.0;
            cfg.weights.lambda3 = lambda3;
            let b = train_classifier(&d.without_target_labels(), &reference, &table, &cfg).unwrap();
            if lambda3 > 0.0 {
                for s in &b.log {
                    worst_with = worst_with.max((s.logdet_source.unwrap() - b.logdet_ref).abs());
                }
            } else {
                finals_without.push(b.anchor_logdets().unwrap().0 - b.logdet_ref);
            }
        }
    }
    let drop = median(&finals_without);
    let elapsed = start.elapsed();
    (
        worst_with < 5.0 && drop < -5.0 && elapsed < Duration::from_secs(600),
        format!(
            "with reg: max |logdet_s - ref| over all steps {worst_with:.3}; without: median final logdet_s - ref {drop:.3} ({:?}); {elapsed:.1?}",
            finals_without.iter().map(|v| (v * 100.0).round() / 100.0).collect::<Vec<_>>()
        ),
    )
}

// ---------------------------------------------------------------- 6

fn criterion_ablation(d: &Dataset<f64>, desk: &HarnessConfig) -> Check {
    let start = Instant::now();
    let rep = ablation_on(d, &AblationPreset::ALL, &SEEDS, desk).unwrap();
    let med = |p| rep.row(p).unwrap().median;
    let s1 = med(AblationPreset::S1);
    let full = med(AblationPreset::Full);
    let in_band = (60.0..=85.0).contains(&s1);
    let beats = full > s1;
    let near_best = AblationPreset::ALL[1..5].iter().all(|&p| full >= med(p) - 1.0);
    let elapsed = start.elapsed();
    let ladder: Vec<String> = rep.rows.iter().map(|r| format!("{} {:.1}", r.preset, r.median)).collect();
    (
        in_band && beats && near_best && elapsed < Duration::from_secs(1800),
        format!(
            "medians [{}]; s1 in 60-85: {in_band}, full > s1: {beats}, full >= intermediates - 1: {near_best}; {elapsed:.1?}",
            ladder.join(", ")
        ),
    )
}

// ---------------------------------------------------------------- 7

fn criterion_ratio(d: &Dataset<f64>, desk: &HarnessConfig) -> Check {
    let rep = ratio_sweep_on(d, &[0.1, 0.5, 1.0], &SEEDS, desk).unwrap();
    let m: Vec<f64> = rep.rows.iter().map(|r| r.median).collect();
    (
        m[2] >= m[0] && rep.non_decreasing(1.0),
        format!("medians at 10/50/100%: {:.1} / {:.1} / {:.1}", m[0], m[1], m[2]),
    )
}

// ---------------------------------------------------------------- 8

fn criterion_supervisor(desk: &HarnessConfig) -> Check {
    let clean = SynthConfig {
        noise_sigma_captions: 0.0,
        ..SynthConfig::default()
    };
    let (_dc, dclean) = synth_dir(&clean);
    let (_dn, dnoisy) = synth_dir(&SynthConfig::default());
    let mut clean_acc = Vec::new();
    let mut source_acc = Vec::new();
    for seed in SEEDS {
        let cfg = SupervisorConfig { seed, ..desk.supervisor.clone() };
        let reference = reference_of(&dclean);
        let run = train_supervisor(&dclean.without_target_labels(), &reference, &cfg).unwrap();
        let table = pseudo_label(&run.model, &dclean.without_target_labels(), &reference).unwrap();
        let truth = dclean.target_eval_labels().unwrap();
        let hits = table.rows().iter().filter(|p| truth[p.index] == p.label).count();
        clean_acc.push(hits as f64 / table.len() as f64);

        let reference = reference_of(&dnoisy);
        let run = train_supervisor(&dnoisy, &reference, &cfg).unwrap();
        source_acc.push(supervisor_accuracy(&run.model, &dnoisy, &reference, Domain::Source).unwrap());
    }
    let exact = clean_acc.iter().all(|&a| a == 1.0);
    let high = source_acc.iter().all(|&a| a >= 0.99);
    (
        exact && high,
        format!("zero-noise pseudo-label accuracy per seed {clean_acc:?}; sigma 0.05 source accuracy per seed {source_acc:?}"),
    )
}

// ---------------------------------------------------------------- 9

fn criterion_separation(d: &Dataset<f64>, desk: &HarnessConfig) -> Check {
    let reference = reference_of(d);
    let dir = tempfile::tempdir().unwrap();
    let mut wins = 0;
    let mut pairs = Vec::new();
    for seed in SEEDS {
        let sup = train_supervisor(d, &reference, &SupervisorConfig { seed, ..desk.supervisor.clone() }).unwrap();
        let table = pseudo_label(&sup.model, d, &reference).unwrap();
        let cfg = TrainConfig { seed, ..desk.classifier.clone() }.with_preset(AblationPreset::Full);
        let b = train_classifier(&d.without_target_labels(), &reference, &table, &cfg).unwrap();
        let s = export_embeddings(&b.model, d, Some(&table), &reference, &dir.path().join("e.csv")).unwrap();
        if s.separation.relative < s.separation.absolute {
            wins += 1;
        }
        pairs.push(format!("{:.3}/{:.3}", s.separation.relative, s.separation.absolute));
    }
    (
        wins >= 4,
        format!("relative < absolute in {wins}/5 seeds (relative/absolute: {})", pairs.join(", ")),
    )
}

// ---------------------------------------------------------------- 10

fn run_once(d: &Dataset<f64>, desk: &HarnessConfig, out: &Path) -> Vec<String> {
    let reference = reference_of(d);
    let sup = train_supervisor(d, &reference, &SupervisorConfig { seed: 7, ..desk.supervisor.clone() }).unwrap();
    sup.model.save(&out.join("sup"), serde_json::json!({})).unwrap();
    let table = pseudo_label(&sup.model, d, &reference).unwrap();
    table.save(&out.join("pseudo.csv"), &out.join("z.emb")).unwrap();
    let cfg = TrainConfig { seed: 7, ..desk.classifier.clone() };
    let b = train_classifier(&d.without_target_labels(), &reference, &table, &cfg).unwrap();
    b.save(&out.join("cls"), serde_json::json!({})).unwrap();
    let eval = evaluate(&b.model, d).unwrap();
    std::fs::write(out.join("metrics.json"), serde_json::to_vec(&eval).unwrap()).unwrap();
    b.write_loss_csv(&out.join("loss.csv")).unwrap();
    let mut files: Vec<_> = walk(out);
    files.sort();
    files.iter().map(|p| format!("{}:{}", p.strip_prefix(out).unwrap().display(), sha256_file(p).unwrap())).collect()
}

fn walk(dir: &Path) -> Vec<std::path::PathBuf> {
    let mut out = Vec::new();
    for e in std::fs::read_dir(dir).unwrap() {
        let p = e.unwrap().path();
        if p.is_dir() {
            out.extend(walk(&p));
        } else {
            out.push(p);
        }
    }
    out
}

fn criterion_determinism(d: &Dataset<f64>, desk: &HarnessConfig) -> Check {
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    let ha = run_once(d, desk, a.path());
    let hb = run_once(d, desk, b.path());
    let has_ckpt = ha.iter().any(|h| h.contains(checkpoint::DESCRIPTOR_FILE));
    (
        ha == hb && has_ckpt,
        format!("{} artifacts hashed (checkpoints, pseudo-labels, metrics, loss log), identical: {}", ha.len(), ha == hb),
    )
}

// ---------------------------------------------------------------- main

fn main() {
    let desk = HarnessConfig::desk();
    let (_dir, d) = synth_dir(&SynthConfig::default());
    let criteria: Vec<Criterion<'_>> = vec![
        ("gradient correctness", Box::new(criterion_gradients)),
        ("log-det oracle", Box::new(criterion_logdet)),
        ("relative-encoding invariances", Box::new(criterion_relative)),
        ("regularizer semantics", Box::new(criterion_regularizer)),
        ("anti-collapse", Box::new(|| criterion_anti_collapse(&d, &desk))),
        ("ablation trend", Box::new(|| criterion_ablation(&d, &desk))),
        ("ratio sweep", Box::new(|| criterion_ratio(&d, &desk))),
        ("supervisor fidelity", Box::new(|| criterion_supervisor(&desk))),
        ("relative-vs-absolute separation", Box::new(|| criterion_separation(&d, &desk))),
        ("determinism and provenance", Box::new(|| criterion_determinism(&d, &desk))),
    ];
    let mut failed = 0;
    for (i, (name, run)) in criteria.iter().enumerate() {
        let (ok, detail) = match catch_unwind(AssertUnwindSafe(run)) {
            Ok(r) => r,
            Err(e) => {
                let msg = e
                    .downcast_ref::<String>()
                    .cloned()
                    .or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()))
                    .unwrap_or_default();
                (false, format!("panicked: {msg}"))
            }
        };
        if !ok {
            failed += 1;
        }
        println!("[{}] criterion {:>2} {name}: {detail}", if ok { "PASS" } else { "FAIL" }, i + 1);
    }
    println!("acceptance: {} passed, {failed} failed", criteria.len() - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}
