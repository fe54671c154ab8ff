//! Reverse-mode differentiation on a tape: build a small expression, run
//! the backward pass and compare with a hand-derived gradient.

use wlssgan::nn::{Activation, Tape, Tensor};

fn main() -> wlssgan::Result<()> {
    let x = Tensor::<f64>::from_f64(&[1, 4], &[0.5, -1.0, 2.0, 0.25])?.with_grad();
    let w = Tensor::<f64>::from_f64(&[2, 4], &[1.0, 0.0, -1.0, 2.0, 0.5, 0.5, 0.5, 0.5])?.with_grad();
    let b = Tensor::<f64>::from_f64(&[2], &[0.1, -0.2])?.with_grad();

    // loss = sum(tanh(W x + b))
    let mut tape = Tape::new();
    let (xv, wv, bv) = (tape.param(&x)?, tape.param(&w)?, tape.param(&b)?);
    let h = tape.linear(xv, wv, bv)?;
    let y = tape.activation(h, Activation::Tanh)?;
    let loss = tape.sum(y)?;
    let grads = tape.backward(loss)?;

    println!("loss = {:.6}", tape.value(loss).data()[0]);
    let pre = tape.value(h).data().to_vec();
    let db = grads.get(bv).expect("bias gradient");
    for (k, &z) in pre.iter().enumerate() {
        let by_hand = 1.0 - z.tanh().powi(2);
        println!("d loss / d b[{k}] = {:.6} (by hand {by_hand:.6})", db[k]);
    }
    println!("d loss / d x = {:?}", grads.get(xv).expect("input gradient"));
    Ok(())
}
