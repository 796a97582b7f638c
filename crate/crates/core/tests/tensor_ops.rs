use semjpeg::tensor::{conv2d, conv2d_backward, LayerParams};
use semjpeg::Tensor64;

fn pattern(a: usize, m: usize, scale: f64) -> impl FnMut(usize) -> f64 {
    move |i| ((i * a % m) as f64 - (m / 2) as f64) / scale
}

/// Direct nested-loop convolution, zero padding, stride 1.
fn conv_oracle(x: &Tensor64, p: &LayerParams<f64>) -> Vec<f64> {
    let [_, cin, h, w] = [x.shape()[0], x.shape()[1], x.shape()[2], x.shape()[3]];
    let cout = p.kernel.shape()[0];
    let k = p.kernel.shape()[2];
    let r = (k / 2) as isize;
    let mut out = vec![0.0; cout * h * w];
    for o in 0..cout {
        for y in 0..h {
            for xx in 0..w {
                let mut acc = p.bias.data()[o];
                for i in 0..cin {
                    for ky in 0..k {
                        for kx in 0..k {
                            let (sy, sx) = (y as isize + ky as isize - r, xx as isize + kx as isize - r);
                            if sy < 0 || sx < 0 || sy >= h as isize || sx >= w as isize {
                                continue;
                            }
                            let kv = p.kernel.data()[((o * cin + i) * k + ky) * k + kx];
                            acc += kv * x.data()[(i * h + sy as usize) * w + sx as usize];
                        }
                    }
                }
                out[(o * h + y) * w + xx] = acc;
            }
        }
    }
    out
}

fn sample_layer() -> (LayerParams<f64>, Tensor64) {
    let mut p = LayerParams::<f64>::zeros(3, 2, 3);
    for (i, v) in p.kernel.data_mut().iter_mut().enumerate() {
        *v = ((i * 37 % 17) as f64 - 8.0) / 10.0;
    }
    for (i, v) in p.bias.data_mut().iter_mut().enumerate() {
        *v = i as f64 * 0.1 - 0.1;
    }
    let x = Tensor64::from_fn(&[1, 2, 5, 6], pattern(13, 11, 5.0));
    (p, x)
}

#[test]
fn conv_matches_nested_loops() {
    let (p, x) = sample_layer();
    let y = conv2d(&x, &p).unwrap();
    let oracle = conv_oracle(&x, &p);
    let worst = y.data().iter().zip(&oracle).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
    assert!(worst < 1e-12, "{worst}");
}

#[test]
fn conv_gradients_match_central_differences() {
    let (mut p, x) = sample_layer();
    let r = Tensor64::from_fn(&[1, 3, 5, 6], pattern(7, 5, 3.0));
    let f = |p: &LayerParams<f64>, x: &Tensor64| -> f64 {
        conv2d(x, p).unwrap().data().iter().zip(r.data()).map(|(a, b)| a * b).sum()
    };
    let grad_input = conv2d_backward(&x, &mut p, &r).unwrap();
    let h = 1e-5;
    let mut worst: f64 = 0.0;
    for i in 0..p.kernel.len() {
        let mut q = p.clone();
        q.kernel.data_mut()[i] += h;
        let a = f(&q, &x);
        q.kernel.data_mut()[i] -= 2.0 * h;
        let b = f(&q, &x);
        worst = worst.max(((a - b) / (2.0 * h) - p.grad_kernel.data()[i]).abs());
    }
    for i in 0..x.len() {
        let mut y = x.clone();
        y.data_mut()[i] += h;
        let a = f(&p, &y);
        y.data_mut()[i] -= 2.0 * h;
        let b = f(&p, &y);
        worst = worst.max(((a - b) / (2.0 * h) - grad_input.data()[i]).abs());
    }
    assert!(worst < 1e-6, "{worst}");
}
