use semjpeg::msroi::{MsroiNet, NetworkSpec};
use semjpeg::msroi::Classifier;
use semjpeg::tensor::{gradcheck, Model};
use semjpeg::Tensor64;

#[test]
fn full_network_gradients_at_32() {
    let mut net = MsroiNet::<f64>::new(NetworkSpec::default(), 21).unwrap();
    let x = Tensor64::from_fn(&[1, 3, 32, 32], |i| ((i * 7919) % 255) as f64 / 127.5 - 1.0);
    let target = vec![true, false, false, true, false, false];
    let r = gradcheck(&mut net, &x, &target, 1e-3, 6, 4).unwrap();
    eprintln!("{r:?}");
    assert!(r.max_relative_error < 1e-4, "{r:?}");
}

#[test]
fn loss_paths_agree() {
    let net = MsroiNet::<f64>::new(NetworkSpec::default(), 7).unwrap();
    let x = Tensor64::from_fn(&[1, 3, 64, 64], |i| ((i * 7919) % 255) as f64 / 127.5 - 1.0);
    let y = vec![true, false, false, true, false, false];
    let mut g = net.empty_gradients();
    let a = net.gradients_with_prediction(&x, &y, &mut g).unwrap().0;
    let b = net.loss_with_prediction(&x, &y).unwrap().0;
    let c = net.loss(&x, &y).unwrap();
    let d = net.loss_with_signature(&x, &y).unwrap().0;
    assert_eq!((a, a, a), (b, c, d));
}
