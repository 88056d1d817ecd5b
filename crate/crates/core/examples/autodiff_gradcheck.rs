//! Builds a small graph on the autodiff tape, runs backward and compares one
//! gradient against a central difference. Then takes a few RMSprop steps.

use rirlab::autodiff::{RmsProp, Tape, Tensor};

fn loss(x: &Tensor, w: &Tensor, target: &Tensor) -> (f64, Vec<Tensor>) {
    let tape = Tape::new();
    let xv = tape.constant(x.clone());
    let wv = tape.leaf(w.clone(), true);
    let t = tape.constant(target.clone());
    let y = tape.conv1d(xv, wv, None, 2, 1).unwrap();
    let y = tape.tanh(y).unwrap();
    let l = tape.mse_loss(y, t).unwrap();
    let value = tape.value(l).unwrap().item().unwrap();
    let mut g = tape.backward(l).unwrap();
    (value, vec![g.take(wv).unwrap()])
}

fn main() -> rirlab::error::Result<()> {
    let x = Tensor::new(vec![1, 1, 8], (0..8).map(|i| (i as f64 * 0.7).sin()).collect())?;
    let mut w = Tensor::new(vec![2, 1, 3], vec![0.3, -0.2, 0.5, 0.1, 0.4, -0.3])?;
    let target = Tensor::new(vec![1, 2, 4], vec![0.5, -0.5, 0.25, 0.0, 0.1, 0.2, -0.3, 0.4])?;

    let (l0, g) = loss(&x, &w, &target);
    let h = 1e-6;
    let (mut wp, mut wm) = (w.clone(), w.clone());
    wp.data_mut()[0] += h;
    wm.data_mut()[0] -= h;
    let fd = (loss(&x, &wp, &target).0 - loss(&x, &wm, &target).0) / (2.0 * h);
    println!("loss {l0:.6}; dL/dw[0] analytic {:.9} numeric {fd:.9}", g[0].data()[0]);

    let mut opt = RmsProp::new(1e-2);
    for step in 0..=200 {
        let (l, g) = loss(&x, &w, &target);
        if step % 50 == 0 {
            println!("step {step:3}: loss {l:.6}");
        }
        opt.step(std::slice::from_mut(&mut w), &g)?;
    }
    Ok(())
}
