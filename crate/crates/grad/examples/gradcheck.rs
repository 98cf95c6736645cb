//! Differentiates a two-layer perceptron with a softmax readout and checks
//! the tape's gradients against central differences.

use siamdefect_grad::gradcheck::check_gradients;
use siamdefect_grad::{Tape, Tensor, Var};

fn main() {
    let x = Tensor::from_fn([4, 3], |i| ((i * 7) % 5) as f64 / 5.0 - 0.4);
    let w1 = Tensor::from_fn([3, 6], |i| ((i * 3) % 11) as f64 / 11.0 - 0.5);
    let w2 = Tensor::from_fn([6, 2], |i| ((i * 5) % 7) as f64 / 7.0 - 0.5);

    let f = |t: &mut Tape, v: &[Var]| {
        let h = t.matmul(v[0], v[1]);
        let h = t.gelu(h);
        let z = t.matmul(h, v[2]);
        let p = t.softmax_rows(z);
        let p = t.mul(p, p);
        t.sum_all(p)
    };
    let report = check_gradients(f, &[x, w1, w2], 1e-6);
    for (name, (rel, abs)) in ["x", "w1", "w2"]
        .iter()
        .zip(report.relative_errors.iter().zip(&report.absolute_errors))
    {
        println!("{name:3} relative error {rel:.2e}  absolute error {abs:.2e}");
    }
    println!("passes at 1e-6: {}", report.passes(1e-6));
}
