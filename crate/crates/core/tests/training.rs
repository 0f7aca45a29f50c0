mod common;

use common::*;
use motionnet::checkpoint::{decode_checkpoint, encode_checkpoint};
use motionnet::data::translating_dataset;
use motionnet::net::layers::softmax;
use motionnet::training::{
    classification_loss, select_targets, Schedule, TrainStatus, Trainer, TrainingSample,
};
use motionnet::{Error, FlowField, Layer, Mode, MotionDistribution, MotionNet, ValidMask};

fn tiny_data() -> Vec<TrainingSample> {
    translating_dataset(8, 2, (20, 20), 1.5, 5).unwrap()
}

fn tiny_schedule() -> Schedule {
    Schedule {
        patch_size: 16,
        batch_size: 2,
        steps_per_epoch: 3,
        max_epochs: 3,
        regression_epochs: 2,
        seed: 17,
        ..Schedule::default()
    }
}

#[test]
fn labels_and_loss_match_a_brute_force_oracle() {
    let (h, w, t, o) = (5, 6, 3, 4);
    let mut r = rng(1);
    let scores = random_tensor(&mut r, h, w, t * o).map(|v| 4.0 * v);
    let dist = MotionDistribution::new(softmax(&scores), t, o).unwrap();
    let targets: Vec<(f64, f64)> = (0..t * o)
        .map(|k| {
            let (s, a) = ((k / o) as f64 + 0.5, std::f64::consts::TAU * (k % o) as f64 / o as f64);
            (s * a.cos(), s * a.sin())
        })
        .collect();
    let gt = random_flow(&mut r, h, w, 3.0);
    let mask = ValidMask::from_fn(h, w, |i, j| (i * w + j) % 4 != 1);
    let loss = classification_loss(&dist, &gt, &targets, &mask).unwrap();
    let mut want = 0.0;
    for i in 0..h {
        for j in 0..w {
            if !mask.get(i, j) {
                assert!((0..t * o).all(|k| loss.grad[(i, j, k)] == 0.0));
                continue;
            }
            let (u, v) = gt.at(i, j);
            let dists: Vec<f64> = targets.iter().map(|&(a, b)| (a - u).hypot(b - v)).collect();
            let label = (0..dists.len()).min_by(|&a, &b| dists[a].total_cmp(&dists[b])).unwrap();
            want -= dist.at(i, j, label / o, label % o).ln();
            let g = loss.grad[(i, j, label)];
            assert!((g - (dist.pixel(i, j)[label] - 1.0) / mask.count() as f64).abs() < 1e-15);
        }
    }
    assert!((loss.value - want / mask.count() as f64).abs() < 1e-12);
}

#[test]
fn target_speeds_are_magnitude_quantiles() {
    let mut r = rng(2);
    let f = random_flow(&mut r, 9, 7, 4.0);
    let mask = ValidMask::from_fn(9, 7, |i, j| (i + 2 * j) % 5 != 0);
    let mut mags: Vec<f64> = Vec::new();
    for i in 0..9 {
        for j in 0..7 {
            if mask.get(i, j) {
                let (u, v) = f.at(i, j);
                mags.push((u * u + v * v).sqrt());
            }
        }
    }
    mags.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let speeds = select_targets(&[(&f, &mask)], 4).unwrap();
    for (t, s) in speeds.iter().enumerate() {
        let q = (2 * t + 1) as f64 / 8.0;
        let h = q * (mags.len() - 1) as f64;
        let (lo, frac) = (h as usize, h.fract());
        let want = mags[lo] * (1.0 - frac) + mags[(lo + 1).min(mags.len() - 1)] * frac;
        assert!((s - want).abs() < 1e-12, "speed {t}: {s} vs {want}");
    }
    assert!(speeds.windows(2).all(|p| p[0] <= p[1]));
}

#[test]
fn regression_init_decodes_the_expected_target() {
    let net = MotionNet::new(tiny_config()).unwrap();
    let cfg = net.config().clone();
    let speeds = [0.7, 2.1];
    let mut weights = net.init_weights(3).unwrap();
    *weights.layer_mut(Layer::Output) = net.output_layer_init(&speeds).unwrap();
    let ew = net.expand(&weights).unwrap();
    let mut r = rng(4);
    let frames: Vec<_> = (0..2).map(|_| random_tensor(&mut r, 16, 16, 1)).collect();
    let out = net.forward_single_scale(&ew, &frames, Mode::Inference).unwrap();
    let o = cfg.orientations;
    for i in 0..out.flow.height() {
        for j in 0..out.flow.width() {
            let (mut u, mut v) = (0.0, 0.0);
            for (t, s) in speeds.iter().enumerate() {
                for k in 0..o {
                    let p = out.distribution.at(i, j, t, k);
                    let a = std::f64::consts::TAU * k as f64 / o as f64;
                    u += p * s * a.cos();
                    v += p * s * a.sin();
                }
            }
            let (fu, fv) = out.flow.at(i, j);
            assert!((fu - u).abs() < 1e-12 && (fv - v).abs() < 1e-12);
        }
    }
}

#[test]
fn tiny_run_is_deterministic_and_learns() {
    let data = tiny_data();
    let run = || {
        let mut t = Trainer::new(tiny_config(), tiny_schedule(), &data).unwrap();
        t.run(&data, &[], None, |_| {}).unwrap();
        t.into_state()
    };
    let (a, b) = (run(), run());
    assert_eq!(a, b);
    assert_ne!(a.status, TrainStatus::Running);
    assert_eq!(a.step as usize, a.history.len() * 3);
    let first = &a.history[0];
    assert!(first.loss.is_finite() && first.loss > 0.0);
}

#[test]
fn resuming_from_a_checkpoint_matches_an_uninterrupted_run() {
    let data = tiny_data();
    let mut whole = Trainer::new(tiny_config(), tiny_schedule(), &data).unwrap();
    whole.run(&data, &data[..2], None, |_| {}).unwrap();

    let mut first = Trainer::new(tiny_config(), tiny_schedule(), &data).unwrap();
    first.run(&data, &data[..2], Some(2), |_| {}).unwrap();
    let bytes = encode_checkpoint(first.state());
    let mut second = Trainer::resume(decode_checkpoint(&bytes).unwrap()).unwrap();
    second.run(&data, &data[..2], None, |_| {}).unwrap();

    assert_eq!(second.state(), whole.state());
    assert_eq!(encode_checkpoint(second.state()), encode_checkpoint(whole.state()));
}

#[test]
fn divergence_rolls_back_the_epoch() {
    let data = tiny_data();
    let schedule = Schedule {
        learning_rate: 1e300,
        ..tiny_schedule()
    };
    let mut t = Trainer::new(tiny_config(), schedule, &data).unwrap();
    let before = t.state().clone();
    match t.run_epoch(&data, &[]) {
        Err(Error::Divergence(_)) => {}
        other => panic!("expected divergence, got {other:?}"),
    }
    assert_eq!(t.state().weights, before.weights);
    assert_eq!(t.state().step, 0);
}

#[test]
fn crops_with_no_valid_flow_are_never_drawn() {
    let mut data = tiny_data();
    for s in &mut data {
        s.mask = ValidMask::from_fn(20, 20, |i, j| i >= 14 && j >= 14);
    }
    let t = Trainer::new(tiny_config(), tiny_schedule(), &data).unwrap();
    for step in 0..50 {
        for crop in t.draw_batch(&data, step).unwrap() {
            assert!(crop.mask.count() > 0);
            assert_eq!((crop.height(), crop.width()), (16, 16));
        }
    }
    let mut r = rng(0);
    let flow = FlowField::zeros(20, 20);
    let too_small = TrainingSample {
        name: "small".into(),
        frames: vec![random_tensor(&mut r, 10, 10, 1); 2],
        flow: flow.resize(10, 10),
        mask: ValidMask::all(10, 10),
    };
    assert!(matches!(
        Trainer::new(tiny_config(), tiny_schedule(), &[too_small]),
        Err(Error::Data(_))
    ));
}
