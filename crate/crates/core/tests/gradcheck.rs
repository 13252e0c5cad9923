//! Reverse-mode gradients of random composite graphs against central
//! differences, in f64.

use rand::Rng;
use trx::rng::{rng_from_seed, Rng as ChaCha};
use trx::tensor::{Tape, Tensor, Var};

#[derive(Clone, Debug)]
enum Step {
    Linear { bias: bool },
    LayerNorm { affine: bool },
    Softmax(f64),
    Tanh,
    Scale(f64),
    Add,
    Sub,
    MatMulNt,
    MatMul,
    Gather { rows: Vec<usize>, group: usize },
    Slice { start: usize, len: usize },
    RowBias,
}

#[derive(Clone, Debug)]
enum Finish {
    Mean,
    Sum,
    NormsMean,
    ConcatMean,
    CrossEntropy(usize),
}

struct Graph {
    steps: Vec<Step>,
    finish: Finish,
    leaves: Vec<Tensor<f64>>,
}

fn random_tensor(rng: &mut ChaCha, shape: &[usize]) -> Tensor<f64> {
    let n = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap()
}

fn random_graph(seed: u64) -> Graph {
    let mut rng = rng_from_seed(seed);
    let (mut r, mut c) = (rng.random_range(2..5), rng.random_range(2..5));
    let mut leaves = vec![random_tensor(&mut rng, &[r, c])];
    let mut steps = Vec::new();
    for _ in 0..rng.random_range(2..7) {
        let step = match rng.random_range(0..12) {
            0 => {
                let out = rng.random_range(2..5);
                let bias = rng.random_bool(0.5);
                leaves.push(random_tensor(&mut rng, &[out, c]));
                if bias {
                    leaves.push(random_tensor(&mut rng, &[out]));
                }
                c = out;
                Step::Linear { bias }
            }
            1 => {
                let affine = rng.random_bool(0.5);
                if affine {
                    leaves.push(random_tensor(&mut rng, &[c]));
                    leaves.push(random_tensor(&mut rng, &[c]));
                }
                Step::LayerNorm { affine }
            }
            2 => Step::Softmax(rng.random_range(0.5..2.0)),
            3 => Step::Tanh,
            4 => Step::Scale(rng.random_range(-2.0..2.0)),
            5 => {
                leaves.push(random_tensor(&mut rng, &[r, c]));
                Step::Add
            }
            6 => {
                leaves.push(random_tensor(&mut rng, &[r, c]));
                Step::Sub
            }
            7 => {
                let rows = rng.random_range(2..5);
                leaves.push(random_tensor(&mut rng, &[rows, c]));
                c = rows;
                Step::MatMulNt
            }
            8 => {
                let out = rng.random_range(2..5);
                leaves.push(random_tensor(&mut rng, &[c, out]));
                c = out;
                Step::MatMul
            }
            9 => {
                let group = rng.random_range(1..3);
                let n_out = rng.random_range(1..4);
                let rows = (0..n_out * group).map(|_| rng.random_range(0..r)).collect();
                r = n_out;
                c *= group;
                Step::Gather { rows, group }
            }
            10 if r > 1 => {
                let len = rng.random_range(1..r);
                let start = rng.random_range(0..=r - len);
                r = len;
                Step::Slice { start, len }
            }
            11 => {
                leaves.push(random_tensor(&mut rng, &[c]));
                Step::RowBias
            }
            _ => {
                leaves.push(random_tensor(&mut rng, &[c]));
                Step::RowBias
            }
        };
        steps.push(step);
    }
    let finish = match rng.random_range(0..5) {
        0 => Finish::Mean,
        1 => Finish::Sum,
        2 => Finish::NormsMean,
        3 => Finish::ConcatMean,
        _ => Finish::CrossEntropy(rng.random_range(0..r + 2)),
    };
    if matches!(finish, Finish::ConcatMean | Finish::CrossEntropy(_)) {
        leaves.push(random_tensor(&mut rng, &[2, c]));
    }
    Graph { steps, finish, leaves }
}

fn build(tape: &mut Tape<f64>, graph: &Graph, leaves: &[Tensor<f64>]) -> (Var, Vec<Var>) {
    let vars: Vec<Var> = leaves.iter().map(|t| tape.variable(t.clone())).collect();
    let mut next = 1;
    let mut take = || {
        next += 1;
        vars[next - 1]
    };
    let mut x = vars[0];
    for step in &graph.steps {
        x = match step {
            Step::Linear { bias, .. } => {
                let w = take();
                let b = bias.then(&mut take);
                tape.linear(x, w, b).unwrap()
            }
            Step::LayerNorm { affine } => {
                let (g, b) = if *affine {
                    (Some(take()), Some(take()))
                } else {
                    (None, None)
                };
                tape.layer_norm(x, g, b, 1e-5).unwrap()
            }
            Step::Softmax(s) => tape.softmax(x, *s).unwrap(),
            Step::Tanh => tape.tanh(x),
            Step::Scale(f) => tape.scale(x, *f),
            Step::Add => {
                let y = take();
                tape.add(x, y).unwrap()
            }
            Step::Sub => {
                let y = take();
                tape.sub(x, y).unwrap()
            }
            Step::MatMulNt => {
                let y = take();
                tape.matmul_nt(x, y).unwrap()
            }
            Step::MatMul => {
                let y = take();
                tape.matmul(x, y).unwrap()
            }
            Step::Gather { rows, group } => tape.gather_rows(x, rows.clone(), *group).unwrap(),
            Step::Slice { start, len } => tape.slice_rows(x, *start, *len).unwrap(),
            Step::RowBias => {
                let b = take();
                tape.add_row_bias(x, b).unwrap()
            }
        };
    }
    let loss = match graph.finish {
        Finish::Mean => tape.mean(x).unwrap(),
        Finish::Sum => tape.sum(x),
        Finish::NormsMean => {
            let n = tape.row_norms(x);
            tape.mean(n).unwrap()
        }
        Finish::ConcatMean => {
            let y = take();
            let joined = tape.concat(&[x, y]);
            tape.mean(joined).unwrap()
        }
        Finish::CrossEntropy(target) => {
            let y = take();
            let (a, b) = (tape.row_norms(x), tape.row_norms(y));
            let joined = tape.concat(&[a, b]);
            tape.cross_entropy_from_distances(joined, target).unwrap()
        }
    };
    (loss, vars)
}

#[test]
fn random_graphs_match_central_differences() {
    let step = 1e-5;
    for seed in 0..100 {
        let graph = random_graph(seed);
        let mut tape = Tape::new();
        let (loss, vars) = build(&mut tape, &graph, &graph.leaves);
        let grads = tape.gradients(loss).unwrap();
        for (li, var) in vars.iter().enumerate() {
            let analytic = grads
                .wrt(*var)
                .map(<[f64]>::to_vec)
                .unwrap_or_else(|| vec![0.0; graph.leaves[li].len()]);
            let mut numeric = Vec::with_capacity(analytic.len());
            for i in 0..graph.leaves[li].len() {
                let eval = |delta: f64| {
                    let mut leaves = graph.leaves.clone();
                    leaves[li].data_mut()[i] += delta;
                    let mut t = Tape::new();
                    let (l, _) = build(&mut t, &graph, &leaves);
                    t.value(l).data()[0]
                };
                numeric.push((eval(step) - eval(-step)) / (2.0 * step));
            }
            let inf = |v: &[f64]| v.iter().fold(0.0f64, |m, x| m.max(x.abs()));
            let diff = analytic
                .iter()
                .zip(&numeric)
                .fold(0.0f64, |m, (a, n)| m.max((a - n).abs()));
            let rel = diff / inf(&analytic).max(inf(&numeric)).max(1e-6);
            assert!(rel < 1e-4, "graph {seed} leaf {li}: {rel} ({:?})", graph.steps);
        }
    }
}
