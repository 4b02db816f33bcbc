//! Builds a small expression on the tape, reads its gradients, and checks them
//! against central differences.

use gacunet::{grad_check, Tape, Tensor};

fn main() -> gacunet::Result<()> {
    let mut tape = Tape::<f64>::new();
    let x = tape.param(Tensor::from_f64(
        vec![2, 3],
        &[0.5, -1.0, 2.0, 0.1, 0.3, -0.7],
    )?);
    let w = tape.param(Tensor::from_f64(vec![3, 1], &[1.0, 0.5, -0.25])?);
    let h = tape.matmul(x, w)?;
    let s = tape.sigmoid(h)?;
    let loss = tape.mean(s)?;
    println!("loss = {:.6}", tape.value(loss).item());
    let grads = tape.backward(loss)?;
    println!("dL/dw = {:?}", grads.get(w).map(|g| g.data().to_vec()));

    // The same function, checked coordinate by coordinate.
    let inputs: [Tensor<f64>; 2] = [
        Tensor::from_f64(vec![2, 3], &[0.5, -1.0, 2.0, 0.1, 0.3, -0.7])?,
        Tensor::from_f64(vec![3, 1], &[1.0, 0.5, -0.25])?,
    ];
    let report = grad_check(
        |t, v| {
            let h = t.matmul(v[0], v[1])?;
            let s = t.sigmoid(h)?;
            t.mean(s)
        },
        &inputs,
        1e-6,
        1e-5,
    )?;
    println!(
        "max relative error {:.3e} over {} coordinates: {}",
        report.max_rel_error,
        report.coordinates,
        if report.passed() { "PASS" } else { "FAIL" }
    );

    // The full layer suite, as run by `gacunet gradcheck`.
    let results = gacunet::gradsuite::run_cases(&gacunet::gradsuite::layer_cases());
    print!("{}", gacunet::gradsuite::format_table(&results));
    Ok(())
}
