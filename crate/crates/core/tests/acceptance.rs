//! One line per acceptance criterion. Run with
//! `cargo test -p motionnet --test acceptance`; set `MIDDLEBURY_ROOT` to
//! include the long Middlebury reproduction.

mod common;

use std::sync::OnceLock;
use std::time::{Duration, Instant};

use common::*;
use motionnet::data::{load_middlebury, synth_sequence, SyntheticSpec, TranslatingSet};
use motionnet::flow_io::{aae, epe, metrics};
use motionnet::net::layers::{center_surround, local_std, stack_input};
use motionnet::rotation::{OrientationSet, Parity, TieLayout, TiedLayerSpec};
use motionnet::tensor::{
    conv2d, conv3d as lib_conv3d, conv_bank as lib_conv_bank, maxpool as lib_maxpool,
    resize_bilinear, rotate_bilinear, warp_bilinear, KernelBank,
};
use motionnet::training::{evaluate, nearest_target, predict_full, Schedule, TrainStatus, Trainer};
use motionnet::{
    CanonicalWeights, FlowField, Kernel3, Mode, MotionNet, NetworkConfig, PaddingPolicy, Tensor3,
    ValidMask,
};
use rand::{Rng, SeedableRng};

enum Verdict {
    Pass(String),
    Fail(String),
    Skip(String),
}

fn verdict(ok: bool, detail: String) -> Verdict {
    if ok {
        Verdict::Pass(detail)
    } else {
        Verdict::Fail(detail)
    }
}

fn secs(d: Duration) -> String {
    format!("{:.1}s", d.as_secs_f64())
}

fn odd(r: &mut rand_chacha::ChaCha8Rng, max: usize) -> usize {
    2 * r.gen_range(0..=max / 2) + 1
}

fn kernel_diff(a: &Kernel3, b: &Kernel3) -> f64 {
    a.weights()
        .iter()
        .zip(b.weights())
        .map(|(x, y)| (x - y).abs())
        .fold(0.0, f64::max)
}

fn kernel_oracles() -> Verdict {
    let start = Instant::now();
    let mut worst: f64 = 0.0;
    let mut r = rng(1);
    for _ in 0..100 {
        let (h, w, c) = (r.gen_range(1..12), r.gen_range(1..12), r.gen_range(1..4));
        let x = random_tensor(&mut r, h, w, c);
        let x1 = x.channel(0);
        let (sy, sx) = (odd(&mut r, 7), odd(&mut r, 7));
        let k2 = random_kernel(&mut r, sy, sx, 1);
        worst = worst.max(max_abs(&conv2d(&x1, &k2, PaddingPolicy::ReplicateBorder).unwrap(), &conv3d(&x1, &k2, 0.0)));
        let s = odd(&mut r, 5);
        let k3 = random_kernel(&mut r, s, s, c);
        let b = r.gen_range(-1.0..1.0);
        worst = worst.max(max_abs(
            &lib_conv3d(&x, &k3, b, PaddingPolicy::ReplicateBorder).unwrap(),
            &conv3d(&x, &k3, b),
        ));
        let n = r.gen_range(1..4);
        let ks: Vec<Kernel3> = (0..n).map(|_| random_kernel(&mut r, s, s, c)).collect();
        let bs: Vec<f64> = (0..n).map(|_| r.gen_range(-1.0..1.0)).collect();
        let bank = KernelBank::from_kernels(&ks).unwrap();
        worst = worst.max(max_abs(&lib_conv_bank(&x, &bank, &bs).unwrap(), &conv_bank(&x, &ks, &bs)));
        let window = r.gen_range(1..5);
        worst = worst.max(max_abs(&lib_maxpool(&x, window).unwrap().0, &maxpool(&x, window)));
        let (nh, nw) = (r.gen_range(1..14), r.gen_range(1..14));
        worst = worst.max(max_abs(&resize_bilinear(&x, nh, nw).unwrap(), &resize(&x, nh, nw)));
        let flow = random_flow(&mut r, h, w, 3.0).into_tensor();
        let t = r.gen_range(-2.0..2.0);
        worst = worst.max(max_abs(&warp_bilinear(&x1, &flow, t).unwrap(), &warp(&x1, &flow, t)));
        let angle = r.gen_range(-7.0..7.0);
        worst = worst.max(kernel_diff(&rotate_bilinear(&k3, angle).unwrap(), &rotate(&k3, angle)));
    }
    let elapsed = start.elapsed();
    verdict(
        worst < 1e-12 && elapsed < Duration::from_secs(60),
        format!("7 ops x 100 instances, worst deviation {worst:.1e}, {}", secs(elapsed)),
    )
}

fn gradient_check() -> Verdict {
    let start = Instant::now();
    let (err, n) = finite_difference_check(tiny_config(), 16, 3);
    let elapsed = start.elapsed();
    verdict(
        err < 1e-4 && elapsed < Duration::from_secs(300),
        format!("{n} canonical parameters, max relative error {err:.2e}, {}", secs(elapsed)),
    )
}

fn rotation_ties() -> Verdict {
    let spec = |o| TiedLayerSpec {
        input: OrientationSet::Regular(o),
        output: OrientationSet::Regular(o),
        in_per_group: 2,
        out_per_group: 2,
        size: 5,
        parity: Parity::Even,
        tied: true,
        has_bias: true,
    };
    let mut notes = Vec::new();
    let mut ok = true;
    for o in [4, 12] {
        let layout = TieLayout::new(spec(o)).unwrap();
        let mut r = rand_chacha::ChaCha8Rng::seed_from_u64(o as u64);
        let canonical: Vec<f64> = (0..layout.canonical_len()).map(|_| r.gen_range(-1.0..1.0)).collect();
        let bank = layout.expand(&canonical).unwrap();
        match check_tied_bank(&bank, o, 2) {
            Ok(()) => notes.push(format!("O={o} ties exact")),
            Err(e) => {
                ok = false;
                notes.push(format!("O={o}: {e}"));
            }
        }
    }
    let layout = TieLayout::new(spec(12)).unwrap();
    let ratio = layout.expanded_len() as f64 / layout.canonical_len() as f64;
    ok &= ratio == 24.0;
    notes.push(format!(
        "storage ratio {}/{} = {ratio:.2} (required 24)",
        layout.expanded_len(),
        layout.canonical_len()
    ));
    verdict(ok, notes.join("; "))
}

/// The trained model of the synthetic run.
struct Trained {
    net: MotionNet,
    weights: CanonicalWeights,
    status: TrainStatus,
    epochs: usize,
    heldout_epe: f64,
    elapsed: Duration,
}

fn trained() -> &'static Trained {
    static MODEL: OnceLock<Trained> = OnceLock::new();
    MODEL.get_or_init(|| {
        let start = Instant::now();
        let config = NetworkConfig {
            frames: 3,
            kernel_size: 11,
            kernels_per_orientation: 2,
            orientations: 12,
            speeds: 4,
            num_scales: 3,
            scale_factor: 0.6,
            target_speeds: vec![1.0; 4],
            ..NetworkConfig::default()
        };
        let schedule = Schedule {
            patch_size: 36,
            batch_size: 4,
            steps_per_epoch: 20,
            max_epochs: 60,
            regression_epochs: 30,
            ..Schedule::default()
        };
        let train = TranslatingSet::default().generate(3).unwrap();
        let test = TranslatingSet {
            count: 8,
            seed: 2,
            ..TranslatingSet::default()
        }
        .generate(3)
        .unwrap();
        let mut trainer = Trainer::new(config, schedule, &train).unwrap();
        let status = trainer.run(&train, &test, None, |_| {}).unwrap();
        let state = trainer.state();
        let rows = evaluate(trainer.net(), &state.weights, &test, 1).unwrap();
        let heldout_epe = rows.iter().map(|r| r.1.epe).sum::<f64>() / rows.len() as f64;
        Trained {
            net: trainer.net().clone(),
            weights: state.weights.clone(),
            status,
            epochs: state.epoch,
            heldout_epe,
            elapsed: start.elapsed(),
        }
    })
}

fn equivariance() -> Verdict {
    let start = Instant::now();
    let model = trained();
    let random = MotionNet::new(NetworkConfig {
        kernel_size: 9,
        kernels_per_orientation: 2,
        speeds: 3,
        num_scales: 3,
        scale_factor: 0.6,
        target_speeds: vec![0.5, 1.5, 2.5],
        ..NetworkConfig::default()
    })
    .unwrap();
    let random_weights = random.init_weights(4).unwrap();
    let mut worst: f64 = 0.0;
    for (net, weights) in [(&random, &random_weights), (&model.net, &model.weights)] {
        let ew = net.expand(weights).unwrap();
        let mut r = rng(12);
        // odd sides at every level: 41, 25, 15
        let frames: Vec<Tensor3> = (0..3).map(|_| random_tensor(&mut r, 41, 41, 1)).collect();
        let rotated: Vec<Tensor3> = frames.iter().map(rot90).collect();
        let a = rot90_flow(&net.forward_recurrent(&ew, &frames, Mode::Inference).unwrap().flow);
        let b = net.forward_recurrent(&ew, &rotated, Mode::Inference).unwrap().flow;
        for i in 2..a.height() - 2 {
            for j in 2..a.width() - 2 {
                let (p, q) = (a.at(i, j), b.at(i, j));
                worst = worst.max((p.0 - q.0).hypot(p.1 - q.1));
            }
        }
    }
    verdict(
        worst < 1e-4,
        format!("random and trained O=12 weights, max interior EPE {worst:.1e}, {}", secs(start.elapsed())),
    )
}

fn brightness() -> Verdict {
    let model = trained();
    let net = &model.net;
    let ew = net.expand(&model.weights).unwrap();
    let mut r = rng(77);
    let frames: Vec<Tensor3> = (0..3).map(|_| random_tensor(&mut r, 40, 40, 1).map(|v| 0.5 + 0.4 * v)).collect();
    let w = net.config().kernel_size;
    let contrast = local_std(&center_surround(&stack_input(&frames).unwrap(), w), w);
    let min_std = contrast.data().iter().copied().fold(f64::INFINITY, f64::min);
    let base = net.forward_recurrent(&ew, &frames, Mode::Inference).unwrap().flow;
    let mut worst: f64 = 0.0;
    for alpha in [0.5, 2.0] {
        for beta in [-0.2, 0.3] {
            let changed: Vec<Tensor3> = frames.iter().map(|f| f.map(|v| alpha * v + beta)).collect();
            let flow = net.forward_recurrent(&ew, &changed, Mode::Inference).unwrap().flow;
            worst = worst.max(max_abs(flow.tensor(), base.tensor()));
        }
    }
    verdict(
        worst < 1e-6,
        format!(
            "max flow component change {worst:.1e} (smallest scaled local std {:.3}, floor {})",
            0.5 * min_std,
            net.config().std_floor
        ),
    )
}

fn softmax_sums() -> Verdict {
    let model = trained();
    let ew = model.net.expand(&model.weights).unwrap();
    let mut r = rng(30);
    let (mut pixels, mut worst) = (0usize, 0.0f64);
    while pixels < 1000 {
        let scale = 10f64.powi(r.gen_range(-2..3));
        let frames: Vec<Tensor3> = (0..3).map(|_| random_tensor(&mut r, 24, 24, 1).map(|v| scale * v)).collect();
        let dist = model.net.forward_multiscale(&ew, &frames, Mode::Inference).unwrap().distribution;
        for i in 0..dist.height() {
            for j in 0..dist.width() {
                let s: f64 = dist.pixel(i, j).iter().sum();
                worst = worst.max((s - 1.0).abs());
                pixels += 1;
            }
        }
    }
    verdict(worst < 1e-9, format!("{pixels} pixels, max |sum - 1| {worst:.1e}"))
}

fn synthetic_training() -> Verdict {
    let model = trained();
    verdict(
        model.heldout_epe < 0.3 && model.elapsed < Duration::from_secs(1800),
        format!(
            "held-out EPE {:.3} px after {} epochs ({:?}), {}",
            model.heldout_epe,
            model.epochs,
            model.status,
            secs(model.elapsed)
        ),
    )
}

fn transparency() -> Verdict {
    let model = trained();
    let net = &model.net;
    let ew = net.expand(&model.weights).unwrap();
    let targets = net.config().targets();
    let o = net.config().orientations;
    let bin = |u, v| {
        let k = nearest_target(&targets, u, v);
        (k / o, k % o)
    };
    let near = |a: (usize, usize), b: (usize, usize)| {
        let dt = a.0.abs_diff(b.0);
        let d = a.1.abs_diff(b.1);
        dt <= 1 && d.min(o - d) <= 1
    };
    let (ga, gb) = (bin(2.0, 0.0), bin(-2.0, 0.0));
    let (mut hits, mut total) = (0, 0);
    for seed in 50..54 {
        let spec = SyntheticSpec::transparent((2.0, 0.0), (-2.0, 0.0), 3, 40, 40, seed);
        let frames = synth_sequence(&spec).unwrap().sample.frames;
        let dist = net.forward_multiscale(&ew, &frames, Mode::Inference).unwrap().distribution;
        let classes = dist.speeds() * o;
        for i in 4..dist.height() - 4 {
            for j in 4..dist.width() - 4 {
                let p = dist.pixel(i, j);
                let best = |skip: Option<(usize, usize)>| {
                    (0..classes)
                        .filter(|&k| skip.is_none_or(|s| !near((k / o, k % o), s)))
                        .max_by(|&a, &b| p[a].total_cmp(&p[b]))
                        .map(|k| (k / o, k % o))
                        .unwrap()
                };
                let first = best(None);
                let second = best(Some(first));
                total += 1;
                if (near(first, ga) && near(second, gb)) || (near(first, gb) && near(second, ga)) {
                    hits += 1;
                }
            }
        }
    }
    let share = hits as f64 / total as f64;
    verdict(
        share >= 0.8,
        format!("{hits}/{total} probed pixels ({:.1}%) bimodal at the two motions", 100.0 * share),
    )
}

fn middlebury() -> Verdict {
    let Some(root) = std::env::var_os("MIDDLEBURY_ROOT") else {
        return Verdict::Skip("MIDDLEBURY_ROOT is not set".into());
    };
    let start = Instant::now();
    let run = || -> motionnet::Result<(f64, f64)> {
        let (train, test) = load_middlebury(&root, 3)?;
        let mut trainer = Trainer::new(NetworkConfig::default(), Schedule::default(), &train)?;
        trainer.run(&train, &test, None, |_| {})?;
        let rows = evaluate(trainer.net(), &trainer.state().weights, &test, 1)?;
        let n = rows.len() as f64;
        Ok((
            rows.iter().map(|r| r.1.epe).sum::<f64>() / n,
            rows.iter().map(|r| r.1.aae).sum::<f64>() / n,
        ))
    };
    match run() {
        Ok((e, a)) => verdict(
            e <= 1.0 && a <= 12.0,
            format!("test half EPE {e:.3} px, AAE {a:.2} deg, {}", secs(start.elapsed())),
        ),
        Err(e) => Verdict::Fail(e.to_string()),
    }
}

fn metric_sanity() -> Verdict {
    let mask = ValidMask::all(4, 4);
    let unit = FlowField::uniform(4, 4, 1.0, 0.0);
    let zero = FlowField::zeros(4, 4);
    let (e, a) = (epe(&unit, &zero, &mask).unwrap(), aae(&unit, &zero, &mask).unwrap());
    let mut worst: f64 = 0.0;
    let mut r = rng(40);
    for _ in 0..100 {
        let (h, w) = (r.gen_range(1..16), r.gen_range(1..16));
        let f = random_flow(&mut r, h, w, 6.0);
        let g = random_flow(&mut r, h, w, 6.0);
        let m = ValidMask::all(h, w);
        let rep = metrics(&f, &g, &m).unwrap();
        worst = worst.max((rep.epe - common::epe(&f, &g, &m)).abs());
        worst = worst.max((rep.aae - common::aae(&f, &g, &m)).abs());
    }
    verdict(
        e == 1.0 && a == 45.0 && worst < 1e-10,
        format!("unit error EPE {e}, AAE {a}; oracle deviation {worst:.1e}"),
    )
}

fn recurrent_benefit() -> Verdict {
    let model = trained();
    let ew = model.net.expand(&model.weights).unwrap();
    let mut mean = [0.0; 2];
    for k in 0..8u64 {
        let angle = k as f64 * 0.7;
        let spec = SyntheticSpec::translating((6.0 * angle.cos(), 6.0 * angle.sin()), 3, 64, 64, 200 + k);
        let sample = synth_sequence(&spec).unwrap().sample;
        let mask = ValidMask::interior(64, 64, 10);
        for (r, m) in mean.iter_mut().enumerate() {
            let flow = predict_full(&model.net, &ew, &sample.frames, r + 1).unwrap();
            *m += epe(&flow, &sample.flow, &mask).unwrap() / 8.0;
        }
    }
    verdict(
        mean[1] < mean[0],
        format!("6 px/frame EPE {:.3} (1 iteration) -> {:.3} (2 iterations)", mean[0], mean[1]),
    )
}

fn main() {
    let criteria: [(&str, fn() -> Verdict); 11] = [
        ("kernel oracles", kernel_oracles),
        ("finite-difference gradients", gradient_check),
        ("rotation tying", rotation_ties),
        ("quarter-turn equivariance", equivariance),
        ("brightness/contrast invariance", brightness),
        ("softmax normalization", softmax_sums),
        ("synthetic training", synthetic_training),
        ("transparent motion", transparency),
        ("Middlebury reproduction", middlebury),
        ("metric sanity", metric_sanity),
        ("recurrent warping", recurrent_benefit),
    ];
    let mut failed = Vec::new();
    for (n, (name, check)) in criteria.iter().enumerate() {
        let n = n + 1;
        let (tag, detail) = match check() {
            Verdict::Pass(d) => ("PASS", d),
            Verdict::Fail(d) => {
                // the Middlebury reproduction is informative only
                if n != 9 {
                    failed.push(n);
                }
                ("FAIL", d)
            }
            Verdict::Skip(d) => ("SKIP", d),
        };
        println!("criterion {n:>2} {tag} {name}: {detail}");
    }
    if !failed.is_empty() {
        println!("failed criteria: {failed:?}");
        std::process::exit(1);
    }
}
