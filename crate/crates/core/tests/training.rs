use std::ops::ControlFlow;

use trafficgraph::dataset::{synth_generate, ClassLabel, SynthSpec, Task};
use trafficgraph::model::{train, Architecture, Hyperparams, TrafficNet};
use trafficgraph::nn::LrnParams;

fn small_arch() -> Architecture {
    Architecture {
        conv1_filters: 4,
        conv2_filters: 4,
        kernel_width: 5,
        dense_units: 64,
        lstm_steps: 8,
        lstm_hidden: 16,
        lstm_layers: 3,
        ..Architecture::default()
    }
}

fn three_class(per_class: usize, seed: u64) -> (Vec<Vec<u8>>, Vec<usize>) {
    let labels = [ClassLabel::ALL[0], ClassLabel::BENIGN, ClassLabel::MALWARE];
    let data = synth_generate(&SynthSpec::marker_classes(&labels, per_class, seed)).unwrap();
    let targets = data.iter().map(|g| Task::ThreeClass.target(g.label).unwrap()).collect();
    (data.into_iter().map(|g| g.graph.pixels().to_vec()).collect(), targets)
}

#[test]
fn loss_never_rises_across_a_50_epoch_window_after_epoch_20() {
    let (x, y) = three_class(10, 3);
    let hp = Hyperparams {
        epoch: 100,
        batchsize: 20,
        ..Default::default()
    };
    let out = train(TrafficNet::build(3, 7).unwrap(), &x, &y, &hp, 11, |_, _| ControlFlow::Continue(()))
    .unwrap();
    let loss: Vec<f64> = out.history.iter().map(|r| r.mean_loss).collect();
    for t in 20..loss.len() - 50 {
        assert!(loss[t + 50] <= loss[t], "epoch {} loss {} > epoch {} loss {}", t + 51, loss[t + 50], t + 1, loss[t]);
    }
}

#[test]
fn separable_two_class_loss_drops_below_a_tenth() {
    let labels = [ClassLabel::BENIGN, ClassLabel::MALWARE];
    let data = synth_generate(&SynthSpec::marker_classes(&labels, 10, 5)).unwrap();
    let y: Vec<usize> = data.iter().map(|g| usize::from(g.label == ClassLabel::MALWARE)).collect();
    let hp = Hyperparams {
        epoch: 200,
        batchsize: 20,
        dropout: 0.0,
        lambda_conv: 0.0,
        lambda_lstm: 0.0,
        ..Default::default()
    };
    let mut best = f64::INFINITY;
    train(TrafficNet::build(2, 1).unwrap(), &data, &y, &hp, 2, |r, _| {
        best = best.min(r.mean_loss);
        if r.mean_loss < 0.1 {
            ControlFlow::Break(())
        } else {
            ControlFlow::Continue(())
        }
    })
    .unwrap();
    assert!(best < 0.1, "best loss {best}");
}

#[test]
fn same_seed_same_history() {
    let (x, y) = three_class(8, 9);
    let hp = Hyperparams {
        epoch: 3,
        batchsize: 10,
        ..Default::default()
    };
    let run = || {
        let model = TrafficNet::build_with(small_arch(), LrnParams::default(), 3, 4).unwrap();
        train(model, &x, &y, &hp, 5, |_, _| ControlFlow::Continue(())).unwrap()
    };
    let (a, b) = (run(), run());
    assert_eq!(a.history, b.history);
    assert_eq!(a.model, b.model);
    assert_eq!(a.optimizer_steps, 9);
}
