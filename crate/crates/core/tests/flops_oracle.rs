//! FLOPs accounting checked against shapes recorded by an actual forward pass.

use trd_core::autograd::{OpKind, Tape};
use trd_core::model::flops::{flops_at_resolution, layer_trace, mflops, mflops_closed_form};
use trd_core::model::{zoo, Model};
use trd_core::schedule::{build_schedule, ScheduleParams};
use trd_core::{Policy, Resolution, Tensor};

/// MACs implied by the conv and linear shapes the tape saw.
fn traced_macs(model: &Model<f64>, r: Resolution) -> u64 {
    let cfg = model.config();
    let mut tape = Tape::new();
    let x = Tensor::zeros(vec![1, cfg.in_channels, r.height, r.width]);
    model.forward_eval(&mut tape, x).unwrap();
    tape.records()
        .iter()
        .map(|rec| match rec.kind {
            OpKind::Conv2d => {
                let w = &rec.inputs[1];
                (w[1] * w[2] * w[3] * rec.output[1] * rec.output[2] * rec.output[3]) as u64
            }
            OpKind::Linear => (rec.inputs[1][0] * rec.inputs[1][1]) as u64,
            _ => 0,
        })
        .sum()
}

#[test]
fn zoo_counts_match_traced_shapes() {
    for entry in zoo() {
        let model = Model::<f64>::new(&entry.config, 0).unwrap();
        let min = entry.config.min_input_resolution();
        let mut sizes = vec![min, entry.native.height, entry.native.height / 2, min + 3];
        sizes.retain(|&s| s >= min);
        for s in sizes {
            let r = Resolution::square(s);
            assert_eq!(
                flops_at_resolution(&entry.config, r).unwrap(),
                traced_macs(&model, r),
                "{} at {r}",
                entry.name
            );
        }
    }
}

#[test]
fn totals_strictly_increase_with_resolution() {
    for entry in zoo() {
        let min = entry.config.min_input_resolution();
        let totals: Vec<u64> = (min..=entry.native.height)
            .map(|s| flops_at_resolution(&entry.config, Resolution::square(s)).unwrap())
            .collect();
        assert!(totals.windows(2).all(|w| w[0] < w[1]), "{}", entry.name);
    }
}

#[test]
fn halving_gives_one_quarter_of_conv_work() {
    for entry in zoo() {
        let conv = |s: usize| -> u64 {
            layer_trace(&entry.config, Resolution::square(s))
                .unwrap()
                .iter()
                .filter(|l| l.kind == "conv2d")
                .map(|l| l.macs)
                .sum()
        };
        let n = entry.native.height;
        if n % (2 * entry.config.min_input_resolution()) == 0 {
            assert_eq!(conv(n), 4 * conv(n / 2), "{}", entry.name);
        }
        let ratio = conv(n / 2) as f64 / conv(n) as f64;
        assert!((ratio - 0.25).abs() < 0.0025 + 0.25 * 0.2, "{} ratio {ratio}", entry.name);
    }
}

#[test]
fn hand_counted_layers() {
    // 3x3 stem on a 1x4x4 input with one output channel: 9 * 16 MACs.
    let mut cfg = zoo().into_iter().find(|z| z.name == "plain-desk").unwrap().config;
    cfg.stem_channels = 1;
    let trace = layer_trace(&cfg, Resolution::square(4)).unwrap();
    assert_eq!(trace[0].macs, 144);
    let fc = trace.last().unwrap();
    assert_eq!(fc.macs, (cfg.final_channels() * cfg.class_count) as u64);
}

#[test]
fn schedule_mean_equals_closed_form_when_rate_is_realized() {
    let entry = zoo().into_iter().find(|z| z.name == "resnet10-desk").unwrap();
    let f = |r: Resolution| Ok(flops_at_resolution(&entry.config, r).unwrap() as f64);
    // Search seeds for a plan whose realized fraction is exactly P.
    let mut checked = 0;
    for seed in 0..400 {
        let s = build_schedule(&ScheduleParams {
            total_epochs: 40,
            original: Resolution::square(28),
            reduced: Resolution::square(14),
            participation_rate: 0.5,
            seed,
            lr_milestones: vec![],
            guard_radius: 0,
            policy: Policy::EpochWise,
        })
        .unwrap();
        if s.reduced_epochs.len() != 20 {
            continue;
        }
        let f_base = f(Resolution::square(28)).unwrap();
        let f_low = f(Resolution::square(14)).unwrap();
        let m = mflops(&s, f).unwrap();
        assert!((m - (0.5 * f_base + 0.5 * f_low)).abs() <= 1e-9 * f_base);
        // Conv work scales by exactly a quarter at 14; the classifier does not.
        let closed = mflops_closed_form(f_base, 28.0, 14.0, 0.5).unwrap();
        let fc = (entry.config.final_channels() * entry.config.class_count) as f64;
        assert!((m - (closed + 0.5 * 0.75 * fc)).abs() <= 1e-9 * f_base);
        checked += 1;
    }
    assert!(checked > 0);
}

#[test]
fn closed_form_examples() {
    let close = |a: f64, b: f64, tol: f64| assert!((a - b).abs() <= tol, "{a} vs {b}");
    close(mflops_closed_form(4.12, 224.0, 112.0, 0.5).unwrap(), 2.575, 1e-12);
    close(mflops_closed_form(90.34, 32.0, 16.0, 0.3).unwrap(), 70.0135, 1e-9);
    close(mflops_closed_form(4.12, 224.0, 84.0, 0.9).unwrap(), 0.9334375, 1e-9);
    assert_eq!(mflops_closed_form(4.12, 224.0, 84.0, 0.0).unwrap(), 4.12);
    assert!(mflops_closed_form(4.12, 224.0, 300.0, 0.5).is_err());
}
