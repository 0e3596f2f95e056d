//! Analytic gradients versus central finite differences for every op.

use lednet_nn::{Graph, ParamId, ParamStore, Tensor};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

struct Net {
    store: ParamStore,
    conv1_w: ParamId,
    conv1_b: ParamId,
    ln_g: ParamId,
    ln_b: ParamId,
    conv2_w: ParamId,
    conv3_w: ParamId,
    bn_g: ParamId,
    bn_b: ParamId,
    fbn_g: ParamId,
    fbn_b: ParamId,
    fc1_w: ParamId,
    fc1_b: ParamId,
    fc2_w: ParamId,
    fc2_b: ParamId,
}

fn build(rng: &mut ChaCha8Rng) -> Net {
    let mut store = ParamStore::new();
    let conv1_w = store.add("conv1.w", Tensor::randn(&[4, 3, 3, 3], 0.4, rng));
    let conv1_b = store.add("conv1.b", Tensor::randn(&[4], 0.1, rng));
    let ln_g = store.add("ln.g", Tensor::randn(&[4], 0.3, rng));
    let ln_b = store.add("ln.b", Tensor::randn(&[4], 0.1, rng));
    let conv2_w = store.add("conv2.w", Tensor::randn(&[5, 4, 3, 3], 0.4, rng));
    let conv3_w = store.add("conv3.w", Tensor::randn(&[3, 9, 1, 1], 0.4, rng));
    let bn_g = store.add("bn.g", Tensor::randn(&[3], 0.5, rng));
    let bn_b = store.add("bn.b", Tensor::randn(&[3], 0.1, rng));
    let fbn_g = store.add("fbn.g", Tensor::randn(&[5], 0.5, rng));
    let fbn_b = store.add("fbn.b", Tensor::randn(&[5], 0.1, rng));
    let fc1_w = store.add("fc1.w", Tensor::randn(&[6, 3], 0.5, rng));
    let fc1_b = store.add("fc1.b", Tensor::randn(&[6], 0.1, rng));
    let fc2_w = store.add("fc2.w", Tensor::randn(&[2, 6], 0.5, rng));
    let fc2_b = store.add("fc2.b", Tensor::randn(&[2], 0.1, rng));
    Net {
        store,
        conv1_w,
        conv1_b,
        ln_g,
        ln_b,
        conv2_w,
        conv3_w,
        bn_g,
        bn_b,
        fbn_g,
        fbn_b,
        fc1_w,
        fc1_b,
        fc2_w,
        fc2_b,
    }
}

fn loss_graph<'a>(net: &Net, store: &'a ParamStore, x: &Tensor, y: &Tensor) -> (Graph<'a>, lednet_nn::Var) {
    let mut g = Graph::new(store);
    let xv = g.input(x.clone());
    let (w1, b1) = (g.param(net.conv1_w), g.param(net.conv1_b));
    let h = g.conv2d(xv, w1, Some(b1), 1, 1).unwrap();
    let (lg, lb) = (g.param(net.ln_g), g.param(net.ln_b));
    let h = g.layer_norm(h, lg, lb).unwrap();
    let h = g.relu(h);
    let skip = g.max_pool(h, 3, 2, 1).unwrap(); // 8x8 -> 4x4
    let w2 = g.param(net.conv2_w);
    let down = g.conv2d(skip, w2, None, 2, 1).unwrap(); // 4x4 -> 2x2
    let (fg, fb) = (g.param(net.fbn_g), g.param(net.fbn_b));
    let down = g
        .batch_norm_frozen(down, fg, fb, &[0.1, -0.2, 0.0, 0.3, 0.05], &[0.5, 1.5, 2.0, 0.8, 1.0])
        .unwrap();
    let up = g.upsample2(down).unwrap(); // 2x2 -> 4x4
    let cat = g.concat(&[skip, up]).unwrap(); // 9 channels
    let w3 = g.param(net.conv3_w);
    let h = g.conv2d(cat, w3, None, 1, 0).unwrap();
    let (bg, bb) = (g.param(net.bn_g), g.param(net.bn_b));
    let (h, _, _) = g.batch_norm(h, bg, bb).unwrap();
    let h = g.avg_pool2(h).unwrap();
    let f = g.global_avg_pool(h).unwrap();
    let (fw, fb) = (g.param(net.fc1_w), g.param(net.fc1_b));
    let f = g.linear(f, fw, fb).unwrap();
    let f = g.sigmoid(f);
    let (ow, ob) = (g.param(net.fc2_w), g.param(net.fc2_b));
    let z = g.linear(f, ow, ob).unwrap();
    let loss = g.bce_with_logits(z, y, 1e-7).unwrap();
    (g, loss)
}

#[test]
fn all_ops_match_central_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let net = build(&mut rng);
    let x = Tensor::randn(&[2, 3, 8, 8], 1.0, &mut rng);
    let y = Tensor::new(vec![2, 2], vec![1.0, 0.0, 0.0, 1.0]).unwrap();

    let grads = {
        let (g, loss) = loss_graph(&net, &net.store, &x, &y);
        g.backward(loss)
    };

    let h = 1e-6;
    let mut store = net.store.clone();
    let mut worst: f64 = 0.0;
    for id in net.store.ids() {
        let analytic = grads.get(id).expect("every parameter feeds the loss").clone();
        let n = store.get(id).numel();
        for _ in 0..4 {
            let i = rng.random_range(0..n);
            let orig = store.get(id).data()[i];
            store.get_mut(id).data_mut()[i] = orig + h;
            let plus = {
                let (g, l) = loss_graph(&net, &store, &x, &y);
                g.value(l).item()
            };
            store.get_mut(id).data_mut()[i] = orig - h;
            let minus = {
                let (g, l) = loss_graph(&net, &store, &x, &y);
                g.value(l).item()
            };
            store.get_mut(id).data_mut()[i] = orig;
            let numeric = (plus - minus) / (2.0 * h);
            let a = analytic.data()[i];
            let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(1e-7);
            worst = worst.max(rel);
            assert!(
                rel <= 1e-4,
                "{}[{i}]: analytic {a} numeric {numeric}",
                net.store.name(id)
            );
        }
    }
    eprintln!("worst relative error {worst:.2e}");
}

#[test]
fn backward_is_deterministic_across_runs() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let net = build(&mut rng);
    let x = Tensor::randn(&[5, 3, 8, 8], 1.0, &mut rng);
    let y = Tensor::full(&[5, 2], 1.0);
    let run = || {
        let (g, l) = loss_graph(&net, &net.store, &x, &y);
        let grads = g.backward(l);
        net.store
            .ids()
            .flat_map(|id| grads.get(id).unwrap().data().to_vec())
            .collect::<Vec<f64>>()
    };
    let first = run();
    for _ in 0..3 {
        assert_eq!(first, run());
    }
}
