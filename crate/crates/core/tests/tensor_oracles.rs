mod common;

use common::{assert_close, rng, uniform};
use gacunet::{grad_check, Tape, Tensor, Var};

fn matmul_oracle(a: &[f64], b: &[f64], n: usize, k: usize, m: usize) -> Vec<f64> {
    let mut out = vec![0.0; n * m];
    for i in 0..n {
        for j in 0..m {
            for t in 0..k {
                out[i * m + j] += a[i * k + t] * b[t * m + j];
            }
        }
    }
    out
}

#[test]
fn matmul_matches_triple_loop() {
    let mut r = rng(1);
    for &(n, k, m) in &[(2, 3, 2), (1, 1, 1), (5, 4, 3), (7, 1, 6)] {
        let a = uniform(&[n, k], -1.0, 1.0, &mut r);
        let b = uniform(&[k, m], -1.0, 1.0, &mut r);
        let mut tape = Tape::new();
        let (va, vb) = (tape.constant(a.clone()), tape.constant(b.clone()));
        let c = tape.matmul(va, vb).unwrap();
        assert_eq!(tape.shape(c), [n, m]);
        assert_close(tape.value(c).data(), &matmul_oracle(a.data(), b.data(), n, k, m), 1e-14, "matmul");
    }
}

fn check(f: impl Fn(&mut Tape<f64>, &[Var]) -> gacunet::Result<Var>, inputs: &[Tensor<f64>], name: &str) {
    let report = grad_check(f, inputs, 1e-6, 1e-5).unwrap();
    assert!(report.passed(), "{name}: {report:?}");
}

#[test]
fn every_primitive_passes_gradient_check() {
    let mut r = rng(2);
    let a = uniform(&[3, 4], -1.0, 1.0, &mut r);
    let b = uniform(&[3, 4], -1.0, 1.0, &mut r);
    let pos = uniform(&[3, 4], 0.5, 2.0, &mut r);
    let w = uniform(&[4, 2], -1.0, 1.0, &mut r);
    // Weighted sums keep the objective from being symmetric in the coordinates.
    let probe = uniform(&[3, 4], -1.0, 1.0, &mut r);
    let weigh = move |t: &mut Tape<f64>, y: Var| -> gacunet::Result<Var> {
        let shape = t.shape(y).to_vec();
        let n: usize = shape.iter().product();
        let p = t.constant(Tensor::new(shape, probe.data().iter().cycle().take(n).copied().collect())?);
        let m = t.mul(y, p)?;
        t.sum(m)
    };
    let unary: Vec<(&str, Box<dyn Fn(&mut Tape<f64>, Var) -> gacunet::Result<Var>>)> = vec![
        ("exp", Box::new(|t, x| t.exp(x))),
        ("sigmoid", Box::new(|t, x| t.sigmoid(x))),
        ("relu", Box::new(|t, x| t.relu(x))),
        ("leaky_relu", Box::new(|t, x| t.leaky_relu(x, 0.2))),
        ("softmax0", Box::new(|t, x| t.softmax(x, 0))),
        ("softmax1", Box::new(|t, x| t.softmax(x, 1))),
        ("transpose", Box::new(|t, x| t.transpose(x))),
        ("reshape", Box::new(|t, x| t.reshape(x, &[2, 6]))),
        ("slice", Box::new(|t, x| t.slice(x, 1, 1, 2))),
        ("sum_axis", Box::new(|t, x| t.sum_axis(x, 0))),
        ("mean_axis", Box::new(|t, x| t.mean_axis(x, 1))),
        ("scale", Box::new(|t, x| t.scale(x, -1.5))),
    ];
    for (name, f) in &unary {
        check(|t, v| { let y = f(t, v[0])?; weigh(t, y) }, std::slice::from_ref(&a), name);
    }
    check(|t, v| { let y = t.log(v[0])?; weigh(t, y) }, std::slice::from_ref(&pos), "log");
    check(|t, v| t.sum(v[0]), std::slice::from_ref(&a), "sum");
    check(|t, v| t.mean(v[0]), std::slice::from_ref(&a), "mean");
    check(|t, v| { let y = t.add(v[0], v[1])?; weigh(t, y) }, &[a.clone(), b.clone()], "add");
    check(|t, v| { let y = t.sub(v[0], v[1])?; weigh(t, y) }, &[a.clone(), b.clone()], "sub");
    check(|t, v| { let y = t.mul(v[0], v[1])?; weigh(t, y) }, &[a.clone(), b.clone()], "mul");
    check(|t, v| { let y = t.div(v[0], v[1])?; weigh(t, y) }, &[a.clone(), pos.clone()], "div");
    check(|t, v| { let y = t.matmul(v[0], v[1])?; weigh(t, y) }, &[a.clone(), w.clone()], "matmul");
    check(|t, v| { let y = t.concat(&[v[0], v[1]], 0)?; weigh(t, y) }, &[a.clone(), b.clone()], "concat0");
    check(|t, v| { let y = t.concat(&[v[0], v[1]], 1)?; weigh(t, y) }, &[a.clone(), b.clone()], "concat1");
}

#[test]
fn sigmoid_matmul_chain_and_composite() {
    let mut r = rng(3);
    let x = uniform(&[4, 3], -1.0, 1.0, &mut r);
    let w = uniform(&[3, 2], -1.0, 1.0, &mut r);
    check(
        |t, v| {
            let h = t.matmul(v[0], v[1])?;
            let s = t.sigmoid(h)?;
            t.sum(s)
        },
        &[x.clone(), w.clone()],
        "sigmoid∘matmul",
    );
    // Five primitives: matmul, exp, softmax, mul, mean.
    check(
        |t, v| {
            let h = t.matmul(v[0], v[1])?;
            let e = t.exp(h)?;
            let s = t.softmax(h, 1)?;
            let m = t.mul(e, s)?;
            t.mean(m)
        },
        &[x, w],
        "composite",
    );
}

#[test]
fn backward_is_linear_in_the_loss() {
    let mut r = rng(4);
    for _ in 0..20 {
        let x = uniform(&[3, 3], -1.0, 1.0, &mut r);
        let w = uniform(&[3, 3], -1.0, 1.0, &mut r);
        let l1 = |t: &mut Tape<f64>, x: Var, w: Var| -> Var {
            let h = t.matmul(x, w).unwrap();
            let s = t.sigmoid(h).unwrap();
            t.sum(s).unwrap()
        };
        let l2 = |t: &mut Tape<f64>, x: Var, w: Var| -> Var {
            let e = t.exp(x).unwrap();
            let m = t.mul(e, w).unwrap();
            t.mean(m).unwrap()
        };
        let grads_of = |which: u8| -> (Vec<f64>, Vec<f64>) {
            let mut t = Tape::new();
            let (vx, vw) = (t.param(x.clone()), t.param(w.clone()));
            let loss = match which {
                1 => l1(&mut t, vx, vw),
                2 => l2(&mut t, vx, vw),
                _ => {
                    let a = l1(&mut t, vx, vw);
                    let b = l2(&mut t, vx, vw);
                    t.add(a, b).unwrap()
                }
            };
            let g = t.backward(loss).unwrap();
            (g.get(vx).unwrap().data().to_vec(), g.get(vw).unwrap().data().to_vec())
        };
        let (a, b, both) = (grads_of(1), grads_of(2), grads_of(0));
        let sum_x: Vec<f64> = a.0.iter().zip(&b.0).map(|(p, q)| p + q).collect();
        let sum_w: Vec<f64> = a.1.iter().zip(&b.1).map(|(p, q)| p + q).collect();
        assert_close(&both.0, &sum_x, 1e-10, "dx");
        assert_close(&both.1, &sum_w, 1e-10, "dw");
    }
}

#[test]
fn forward_is_bit_deterministic() {
    let mut r = rng(5);
    let x = uniform(&[2, 8, 8], -1.0, 1.0, &mut r);
    let k = uniform(&[3, 2, 3, 3], -1.0, 1.0, &mut r);
    let run = || {
        let mut t = Tape::new();
        let (vx, vk) = (t.constant(x.clone()), t.constant(k.clone()));
        let c = gacunet::nn::conv2d(&mut t, vx, vk, None).unwrap();
        let s = t.softmax(c, 0).unwrap();
        t.value(s).clone()
    };
    assert_eq!(run(), run());
}

#[test]
fn values_stay_finite_for_finite_inputs() {
    let mut t = Tape::<f64>::new();
    let x = t.constant(Tensor::from_f64(vec![4], &[-800.0, -1.0, 0.0, 800.0]).unwrap());
    for v in [t.sigmoid(x).unwrap(), t.softmax(x, 0).unwrap(), t.log(x).unwrap()] {
        assert!(t.value(v).all_finite(), "{:?}", t.value(v));
    }
}
