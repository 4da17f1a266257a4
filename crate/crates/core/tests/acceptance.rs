//! Acceptance criteria, one PASS/FAIL line each. Exits nonzero if any fail.

mod common;

use std::fs;
use std::path::{Path, PathBuf};
use std::time::{Duration, Instant};

use common::*;
use gasca::data::{split, synth_pose_dataset, PairedDataset};
use gasca::experiment::{cmd_run, grid_pgm, CHECKPOINT_FILE, GRID_FILE, METRICS_FILE};
use gasca::gradcheck::{finite_diff_check, max_relative_error, numeric_gradient, DEFAULT_STEP};
use gasca::loss::{mse, mse_loss, mse_per_item};
use gasca::model::{stack_generator, Architecture, Sequential, StageFactory};
use gasca::objectives::{combined_generator_loss, discriminator_loss, generator_adversarial_loss};
use gasca::ops::{
    conv2d_forward, conv2d_output_hw, conv_transpose2d_forward, conv_transpose2d_output_hw,
};
use gasca::trainer::{
    ganglw_train, glw_baseline, joint_train_baseline, train_shallow_pair, LayerwiseOutcome,
    TraceEvent,
};
use gasca::{GeneratorObjective, GeneratorStack, LossWeights, SeededRng, StageConfig, Tensor};

type Outcome = Result<String, String>;

fn check(cond: bool, pass: String, fail: String) -> Outcome {
    if cond {
        Ok(pass)
    } else {
        Err(fail)
    }
}

fn within(elapsed: Duration, limit: Duration, detail: String) -> Outcome {
    check(
        elapsed < limit,
        detail.clone(),
        format!("{detail}; took {elapsed:.1?}, limit {limit:?}"),
    )
}

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

fn ac1() -> Outcome {
    let start = Instant::now();
    let mut rng = SeededRng::new(101);
    let mut worst = 0.0f64;
    let mut cases = 0;
    for kind in 0..5 {
        for _ in 0..20 {
            let (item, mut layer) = random_layer(kind, &mut rng);
            let mut shape = vec![1 + rng.below(2)];
            shape.extend(item);
            let x = away_from_kink(&shape, &mut rng);
            let y = layer.forward(&x).unwrap();
            let r = random_tensor(y.shape(), &mut rng);
            let gx = layer.backward(&x, &y, &r).unwrap();
            layer.params_mut().for_each(|p| p.zero_grad());
            let nx = numeric_gradient(
                |v| {
                    layer
                        .forward(&Tensor::new(shape.clone(), v.to_vec()).unwrap())
                        .unwrap()
                        .dot(&r)
                        .unwrap()
                },
                x.data(),
                DEFAULT_STEP,
            );
            worst = worst.max(max_relative_error(gx.data(), &nx));
            let e = finite_diff_check(
                &mut layer,
                |l| {
                    let y = l.forward(&x)?;
                    l.backward(&x, &y, &r)?;
                    y.dot(&r)
                },
                |l| l.params_mut().collect(),
                DEFAULT_STEP,
            )
            .unwrap();
            worst = worst.max(e);
            cases += 1;
        }
    }
    for _ in 0..20 {
        let m = 1 + rng.below(8);
        let p = |rng: &mut SeededRng| Tensor::from_fn(&[m, 1], |_| rng.uniform_range(0.02, 0.98));
        let (dr, df) = (p(&mut rng), p(&mut rng));
        let mk = |v: &[f64]| Tensor::new(vec![m, 1], v.to_vec()).unwrap();
        let l = discriminator_loss(&dr, &df).unwrap();
        worst = worst.max(max_relative_error(
            l.grad_real.data(),
            &numeric_gradient(
                |v| discriminator_loss(&mk(v), &df).unwrap().value,
                dr.data(),
                DEFAULT_STEP,
            ),
        ));
        worst = worst.max(max_relative_error(
            l.grad_fake.data(),
            &numeric_gradient(
                |v| discriminator_loss(&dr, &mk(v)).unwrap().value,
                df.data(),
                DEFAULT_STEP,
            ),
        ));
        for obj in [
            GeneratorObjective::Saturating,
            GeneratorObjective::NonSaturating,
        ] {
            let g = generator_adversarial_loss(&df, obj).unwrap();
            worst = worst.max(max_relative_error(
                g.grad_fake.data(),
                &numeric_gradient(
                    |v| generator_adversarial_loss(&mk(v), obj).unwrap().value,
                    df.data(),
                    DEFAULT_STEP,
                ),
            ));
        }
        let shape = [m, 1 + rng.below(2), 1 + rng.below(4), 1 + rng.below(4)];
        let y = random_tensor(&shape, &mut rng);
        let t = random_tensor(&shape, &mut rng);
        let (_, gy) = mse_loss(&y, &t).unwrap();
        let mkx = |v: &[f64]| Tensor::new(shape.to_vec(), v.to_vec()).unwrap();
        worst = worst.max(max_relative_error(
            gy.data(),
            &numeric_gradient(|v| mse(&mkx(v), &t).unwrap(), y.data(), DEFAULT_STEP),
        ));
        let w = LossWeights::new(rng.uniform(), rng.uniform() + 0.01).unwrap();
        let c = combined_generator_loss(&y, &t, &df, &w, GeneratorObjective::Saturating).unwrap();
        worst = worst.max(max_relative_error(
            c.grad_y.data(),
            &numeric_gradient(
                |v| {
                    combined_generator_loss(&mkx(v), &t, &df, &w, GeneratorObjective::Saturating)
                        .unwrap()
                        .value
                },
                y.data(),
                DEFAULT_STEP,
            ),
        ));
        worst = worst.max(max_relative_error(
            c.grad_fake.data(),
            &numeric_gradient(
                |v| {
                    combined_generator_loss(&y, &t, &mk(v), &w, GeneratorObjective::Saturating)
                        .unwrap()
                        .value
                },
                df.data(),
                DEFAULT_STEP,
            ),
        ));
        cases += 1;
    }

    let arch = Architecture::default();
    let mut ae = arch.autoencoder(1, &[1, 8, 8], &mut rng).unwrap();
    let x = Tensor::from_fn(&[1, 1, 8, 8], |_| rng.uniform());
    let target = Tensor::from_fn(&[1, 1, 8, 8], |_| rng.uniform());
    let ae_err = finite_diff_check(
        &mut ae,
        |m| {
            let tape = m.forward_taped(&x)?;
            let (l, g) = mse_loss(tape.output(), &target)?;
            m.backward(&tape, &g)?;
            Ok(l)
        },
        |m| m.params_mut(),
        DEFAULT_STEP,
    )
    .unwrap();
    let mut d = arch.discriminator(1, &[1, 8, 8], &mut rng).unwrap();
    let d_err = finite_diff_check(
        &mut d,
        |m| {
            let tr = m.forward_taped(&target)?;
            let tf = m.forward_taped(&x)?;
            let l = discriminator_loss(tr.output(), tf.output())?;
            m.backward(&tr, &l.grad_real)?;
            m.backward(&tf, &l.grad_fake)?;
            Ok(l.value)
        },
        |m| m.params_mut(),
        DEFAULT_STEP,
    )
    .unwrap();
    worst = worst.max(ae_err).max(d_err);
    let detail =
        format!("{cases} random cases + autoencoder + discriminator, max rel err {worst:.2e}");
    check(worst < 1e-4, detail.clone(), detail)?;
    within(
        start.elapsed(),
        Duration::from_secs(30),
        format!("max rel err {worst:.2e} over {cases} cases"),
    )
}

fn ac2() -> Outcome {
    let start = Instant::now();
    let mut rng = SeededRng::new(102);
    let (mut conv_err, mut convt_err, mut adj_err) = (0.0f64, 0.0f64, 0.0f64);
    let (mut n_conv, mut n_convt, mut n_adj) = (0, 0, 0);
    while n_conv < 100 || n_convt < 100 || n_adj < 100 {
        let (n, cin, cout, h, wd, k, s, p) = random_conv_case(&mut rng);
        let x = random_tensor(&[n, cin, h, wd], &mut rng);
        let w = random_tensor(&[cout, cin, k, k], &mut rng);
        let b = random_tensor(&[cout], &mut rng);
        let y = conv2d_forward(&x, &w, &b, s, p).unwrap();
        conv_err = conv_err.max(max_rel(y.data(), naive_conv2d(&x, &w, &b, s, p).data()));
        n_conv += 1;

        if (h - 1) * s + k > 2 * p && (wd - 1) * s + k > 2 * p {
            let wt = random_tensor(&[cin, cout, k, k], &mut rng);
            let yt = conv_transpose2d_forward(&x, &wt, &b, s, p).unwrap();
            convt_err = convt_err.max(max_rel(
                yt.data(),
                naive_conv_transpose2d(&x, &wt, &b, s, p).data(),
            ));
            n_convt += 1;
        }

        let (oh, ow) = conv2d_output_hw(h, wd, k, s, p).unwrap();
        if conv_transpose2d_output_hw(oh, ow, k, s, p) == Some((h, wd)) {
            let r = random_tensor(&[n, cout, oh, ow], &mut rng);
            let lhs = conv2d_forward(&x, &w, &Tensor::zeros(&[cout]), s, p)
                .unwrap()
                .dot(&r)
                .unwrap();
            let rhs = x
                .dot(&conv_transpose2d_forward(&r, &w, &Tensor::zeros(&[cin]), s, p).unwrap())
                .unwrap();
            adj_err = adj_err.max(rel(lhs, rhs));
            n_adj += 1;
        }
    }
    let detail = format!(
        "conv {n_conv} cases err {conv_err:.1e}, conv_transpose {n_convt} cases err {convt_err:.1e}, adjoint {n_adj} cases err {adj_err:.1e}"
    );
    check(
        conv_err < 1e-12 && convt_err < 1e-12 && adj_err < 1e-12,
        detail.clone(),
        detail.clone(),
    )?;
    within(start.elapsed(), Duration::from_secs(30), detail)
}

fn expected_trace(m: usize, fine_tune: bool) -> Vec<String> {
    let mut t = vec![
        "stage_train 1".to_string(),
        "stack_g 1".into(),
        "stack_d 1".into(),
    ];
    for k in 2..=m {
        t.extend([
            format!("encode_dataset {k}"),
            format!("stage_train {k}"),
            format!("stack_g {k}"),
            format!("stack_d {k}"),
        ]);
        if fine_tune {
            t.extend([
                "finetune_g".into(),
                "reconstruct_trainset".into(),
                "finetune_d".into(),
            ]);
        }
    }
    t
}

fn trace_strings(t: &[TraceEvent]) -> Vec<String> {
    t.iter().map(ToString::to_string).collect()
}

fn ac3() -> Outcome {
    let start = Instant::now();
    let mut rng = SeededRng::new(103);
    let ds = synth_pose_dataset(48, 16, 60.0, &mut rng).unwrap();
    let (train, val) = split(&ds, 0.25, &mut rng).unwrap();
    let arch = Architecture::default();
    let cfg = StageConfig {
        epochs_stage: 2,
        epochs_finetune_g: 2,
        epochs_finetune_d: 2,
        batch_size: 8,
        ..StageConfig::default()
    };
    for m in 1..=3 {
        let out = ganglw_train(m, &arch, &train, &val, &cfg, &mut SeededRng::new(7)).unwrap();
        if trace_strings(&out.trace) != expected_trace(m, true) {
            return Err(format!(
                "m_stages={m}: trace {:?}",
                trace_strings(&out.trace)
            ));
        }
        let glw = glw_baseline(m, &arch, &train, &val, &cfg, &mut SeededRng::new(7)).unwrap();
        if trace_strings(&glw.trace) != expected_trace(m, false) {
            return Err(format!(
                "glw m_stages={m}: trace {:?}",
                trace_strings(&glw.trace)
            ));
        }
    }

    let single = ganglw_train(1, &arch, &train, &val, &cfg, &mut SeededRng::new(8)).unwrap();
    let mut r = SeededRng::new(8);
    let g1 = arch.autoencoder(1, train.item_shape(), &mut r).unwrap();
    let d1 = arch.discriminator(1, train.item_shape(), &mut r).unwrap();
    let (g1, d1, _) = train_shallow_pair(g1, d1, &train, &val, &cfg, &mut r).unwrap();
    let bare = stack_generator(GeneratorStack::new(), g1).unwrap();
    if param_bytes(single.generator.params()) != param_bytes(bare.params())
        || param_bytes(single.discriminator.params()) != param_bytes(d1.params())
    {
        return Err("m_stages=1 differs from a bare train_shallow_pair run".into());
    }

    let no_ft = StageConfig {
        epochs_finetune_g: 0,
        epochs_finetune_d: 0,
        ..cfg
    };
    let a = ganglw_train(2, &arch, &train, &val, &no_ft, &mut SeededRng::new(9)).unwrap();
    let b = glw_baseline(2, &arch, &train, &val, &no_ft, &mut SeededRng::new(9)).unwrap();
    let same = |a: &LayerwiseOutcome, b: &LayerwiseOutcome| {
        a.generator == b.generator
            && a.discriminator == b.discriminator
            && a.report.same_trajectory(&b.report)
    };
    if !same(&a, &b) {
        return Err("ganglw and glw differ with zero fine-tune epochs".into());
    }
    within(
        start.elapsed(),
        Duration::from_secs(120),
        "traces for m_stages 1..3, m=1 bit-identical to bare pair, zero fine-tune ganglw == glw"
            .into(),
    )
}

fn ac4() -> Outcome {
    let start = Instant::now();
    let dir = PathBuf::from(env!("CARGO_TARGET_TMPDIR")).join("acceptance_ac4");
    let _ = fs::remove_dir_all(&dir);
    fs::create_dir_all(&dir).unwrap();
    fs::write(
        dir.join("data.manifest"),
        "source=synthetic\nn=64\nimage_size=16\nmax_angle_deg=60\nseed=11\n",
    )
    .unwrap();
    for regime in ["ganglw", "glw", "joint"] {
        let cfg = dir.join(format!("{regime}.cfg"));
        fs::write(
            &cfg,
            format!(
                "manifest=data.manifest\nregime={regime}\nm_stages=2\nseed=5\nepochs_stage=2\nepochs_finetune_g=1\n\
                 epochs_finetune_d=1\nbatch_size=16\noutput_dir=out_{regime}\n"
            ),
        )
        .unwrap();
        let read = || -> Result<Vec<Vec<u8>>, String> {
            let code = cmd_run(&cfg);
            if code != 0 {
                return Err(format!("{regime}: exit {code}"));
            }
            Ok([METRICS_FILE, CHECKPOINT_FILE, GRID_FILE]
                .iter()
                .map(|f| fs::read(dir.join(format!("out_{regime}")).join(f)).unwrap())
                .collect())
        };
        let (first, second) = (read()?, read()?);
        if first != second {
            return Err(format!("{regime}: outputs differ between identical runs"));
        }
    }
    within(
        start.elapsed(),
        Duration::from_secs(120),
        "metrics.csv, checkpoint and PGM byte-identical across reruns (ganglw, glw, joint)".into(),
    )
}

struct ScaleRuns {
    ganglw: Vec<f64>,
    glw: Vec<f64>,
    joint: Vec<f64>,
    median_run: Option<(f64, LayerwiseOutcome)>,
    val: PairedDataset,
    train: PairedDataset,
    elapsed: Duration,
}

fn scale_runs() -> ScaleRuns {
    let start = Instant::now();
    let mut rng = SeededRng::new(2024);
    let ds = synth_pose_dataset(512, 16, 60.0, &mut rng).unwrap();
    let (train, val) = split(&ds, 0.2, &mut rng).unwrap();
    let arch = Architecture::default();
    let cfg = StageConfig {
        epochs_stage: 20,
        epochs_finetune_g: 20,
        epochs_finetune_d: 2,
        batch_size: 16,
        ..StageConfig::default()
    };
    let mut runs = ScaleRuns {
        ganglw: vec![],
        glw: vec![],
        joint: vec![],
        median_run: None,
        val,
        train,
        elapsed: Duration::ZERO,
    };
    let mut outcomes = Vec::new();
    for seed in [1, 2, 3] {
        let g = ganglw_train(
            2,
            &arch,
            &runs.train,
            &runs.val,
            &cfg,
            &mut SeededRng::new(seed),
        )
        .unwrap();
        let v = g.report.final_val_mse.unwrap();
        runs.ganglw.push(v);
        outcomes.push((v, g));
        let b = glw_baseline(
            2,
            &arch,
            &runs.train,
            &runs.val,
            &cfg,
            &mut SeededRng::new(seed),
        )
        .unwrap();
        runs.glw.push(b.report.final_val_mse.unwrap());
        let (_, _, j) = joint_train_baseline(
            2,
            &arch,
            &runs.train,
            &runs.val,
            &cfg,
            &mut SeededRng::new(seed),
        )
        .unwrap();
        runs.joint.push(j.final_val_mse.unwrap());
    }
    outcomes.sort_by(|a, b| a.0.total_cmp(&b.0));
    runs.median_run = outcomes.into_iter().nth(1);
    runs.elapsed = start.elapsed();
    runs
}

fn ac5(r: &ScaleRuns) -> Outcome {
    let (g, j) = (median(r.ganglw.clone()), median(r.joint.clone()));
    let detail = format!(
        "median val MSE ganglw {g:.6} vs joint {j:.6} (runs {:?} vs {:?})",
        r.ganglw, r.joint
    );
    check(g <= j, detail.clone(), detail.clone())?;
    within(
        r.elapsed,
        Duration::from_secs(600),
        format!("{detail}; 9 runs in {:.1?}", r.elapsed),
    )
}

fn ac6(r: &ScaleRuns) -> Outcome {
    let (g, b) = (median(r.ganglw.clone()), median(r.glw.clone()));
    let detail = format!(
        "median val MSE ganglw {g:.6} vs glw {b:.6} (glw runs {:?})",
        r.glw
    );
    check(g <= b, detail.clone(), detail)
}

fn ac7(r: &ScaleRuns) -> Outcome {
    let (_, out) = r.median_run.as_ref().unwrap();
    let recon = out.generator.reconstruct(r.val.inputs()).unwrap();
    let model = median(mse_per_item(&recon, r.val.targets()).unwrap());
    let input = median(mse_per_item(r.val.inputs(), r.val.targets()).unwrap());
    let path = Path::new(env!("CARGO_TARGET_TMPDIR")).join("acceptance_pose_grid.pgm");
    fs::write(&path, grid_pgm(&out.generator, &r.val, 8).unwrap()).unwrap();
    let detail = format!(
        "median per-sample MSE(recon, x_mu) {model:.6} vs MSE(x_phi, x_mu) {input:.6}; grid {}",
        path.display()
    );
    check(model < input, detail.clone(), detail)
}

fn ac8(r: &ScaleRuns) -> Outcome {
    let (_, out) = r.median_run.as_ref().unwrap();
    let recon = out.generator.reconstruct(r.train.inputs()).unwrap();
    let p_fake = out.discriminator.discriminate(&recon).unwrap();
    let p_real = out.discriminator.discriminate(r.train.targets()).unwrap();
    let correct = p_real.data().iter().filter(|&&p| p >= 0.5).count()
        + p_fake.data().iter().filter(|&&p| p < 0.5).count();
    let acc = correct as f64 / (p_real.len() + p_fake.len()) as f64;
    let in_range = p_fake
        .data()
        .iter()
        .chain(p_real.data())
        .all(|&p| p > 0.0 && p < 1.0);
    let detail = format!(
        "accuracy {acc:.4} on {} training pairs, outputs in (0,1): {in_range}",
        r.train.len()
    );
    check(
        acc >= 0.5 && in_range && out.report.final_accuracy == Some(acc),
        detail.clone(),
        detail,
    )
}

fn main() {
    let mut failed = 0;
    let mut report = |name: &str, outcome: Outcome| match outcome {
        Ok(d) => println!("{name} PASS: {d}"),
        Err(d) => {
            failed += 1;
            println!("{name} FAIL: {d}");
        }
    };
    report("AC-1", ac1());
    report("AC-2", ac2());
    report("AC-3", ac3());
    report("AC-4", ac4());
    let runs = scale_runs();
    report("AC-5", ac5(&runs));
    report("AC-6", ac6(&runs));
    report("AC-7", ac7(&runs));
    report("AC-8", ac8(&runs));
    if failed > 0 {
        println!("{failed} acceptance criteria failed");
        std::process::exit(1);
    }
    println!("all acceptance criteria passed");
}
