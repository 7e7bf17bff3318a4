//! Acceptance suite. Each criterion prints one PASS/FAIL line; the process
//! exits non-zero if any criterion fails.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::process::{Command, ExitCode};
use std::time::{Duration, Instant};

use fp8emu::harness::{
    gradient_check, train, Dataset, GradCheckOptions, LayerKind, ModelSpec, Network, OptimizerState, ParamTensor,
    Precision, Regularizer, ScalerSpec, TrainConfig,
};
use fp8emu::quant::kernels::{conv2d_fp8, conv2d_im2col, gemm_fp8, Conv2dParams};
use fp8emu::scaling::{BackoffConfig, ThresholdSchedule};
use fp8emu::{
    FloatFormat, Fp16Code, Lfsr, LfsrWidth, LossScaler, QuantizedTensor, Rounding, RoundingMode, ScaleAction,
};
use fp8emu_cli::presets::run_sweep;
use fp8emu_cli::{run_experiment, ExperimentConfig, Preset};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const FP8: FloatFormat = FloatFormat::FP8;

type Outcome = Result<String, String>;
type Criterion<'a> = (&'static str, Box<dyn Fn() -> Outcome + 'a>);

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn within_time(t: Duration, limit: Duration) -> Result<(), String> {
    ensure(t <= limit, || format!("took {t:.1?}, limit {limit:?}"))
}

fn table1() -> Outcome {
    let start = Instant::now();
    let out = Command::new(env!("CARGO_BIN_EXE_fp8emu"))
        .arg("range-report")
        .output()
        .map_err(|e| e.to_string())?;
    within_time(start.elapsed(), Duration::from_secs(1))?;
    ensure(out.status.success(), || format!("exit {:?}", out.status))?;
    let text = String::from_utf8_lossy(&out.stdout);
    let row = |prefix: &str| -> Result<Vec<String>, String> {
        let line = text
            .lines()
            .find(|l| l.starts_with(prefix))
            .ok_or_else(|| format!("no `{prefix}` row"))?;
        Ok(line.split_whitespace().map(String::from).collect())
    };
    let fp8 = row("FP8")?;
    ensure(fp8[fp8.len() - 3..] == ["57344", "6.10e-5", "1.52e-5"], || {
        format!("FP8 row {fp8:?}")
    })?;
    let fp32 = row("IEEE-754 float")?;
    ensure(fp32[fp32.len() - 3..] == ["3.40e38", "1.17e-38", "1.40e-45"], || {
        format!("FP32 row {fp32:?}")
    })?;
    Ok("FP8 57344 / 6.10e-5 / 1.52e-5, FP32 3.40e38 / 1.17e-38 / 1.40e-45".into())
}

/// Nearest finite FP8 code by exhaustive search, ties to an even mantissa,
/// zero taking the sign of the input.
fn oracle(x: f64, finite: &[(u8, f64)]) -> u8 {
    let mut best: Option<(u8, f64)> = None;
    for &(c, v) in finite {
        let d = (x - v).abs();
        let better = match best {
            None => true,
            Some((bc, bd)) => {
                if d != bd {
                    d < bd
                } else if v == 0.0 {
                    (c & 0x80 != 0) == x.is_sign_negative()
                } else {
                    c & 1 == 0 && bc & 1 == 1
                }
            }
        };
        if better {
            best = Some((c, d));
        }
    }
    best.unwrap().0
}

fn codec_oracle() -> Outcome {
    let start = Instant::now();
    let modes = ["nearest-even", "toward-zero", "stochastic"];
    for code in 0..=255u32 {
        let v = FP8.decode(code);
        let mut lfsr = Lfsr::new(0xace1).unwrap();
        for (i, mode) in modes.iter().enumerate() {
            let r = match i {
                0 => Rounding::NearestEven,
                1 => Rounding::TowardZero,
                _ => Rounding::Stochastic(&mut lfsr),
            };
            let e = FP8.encode(v, r);
            ensure(e.bits == code, || {
                format!("code {code:#04x} -> {v} -> {:#04x} under {mode}", e.bits)
            })?;
        }
    }

    let finite: Vec<(u8, f64)> = (0..=255u8)
        .map(|c| (c, FP8.decode(u32::from(c))))
        .filter(|(_, v)| v.is_finite())
        .collect();
    let max = FP8.max_normal();
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let mut mismatches = 0usize;
    let mut first = None;
    let n = 1_000_000;
    for i in 0..n {
        let x = if i % 2 == 0 {
            rng.random_range(-max..=max) as f32
        } else {
            let mag = 2f64.powf(rng.random_range(-20.0..max.log2())) as f32;
            if rng.random::<bool>() {
                -mag
            } else {
                mag
            }
        };
        let x = f64::from(x);
        let got = FP8.encode(x, Rounding::NearestEven).bits as u8;
        let want = oracle(x, &finite);
        if got != want {
            mismatches += 1;
            first.get_or_insert((x, got, want));
        }
    }
    ensure(mismatches == 0, || format!("{mismatches} mismatches, first {first:?}"))?;

    // beyond the largest finite value the encoder reports overflow
    for x in [57344.0 * (1.0 + 1e-9), 61440.0, 1e6, f64::from(f32::MAX)] {
        for s in [1.0, -1.0] {
            let e = FP8.encode(s * x, Rounding::NearestEven);
            ensure(e.overflowed && FP8.decode(e.bits) == s * f64::INFINITY, || {
                format!("{} did not overflow", s * x)
            })?;
        }
    }
    within_time(start.elapsed(), Duration::from_secs(30))?;
    Ok(format!("256 codes x 3 modes stable, {n} inputs, 0 mismatches"))
}

fn sr_unbiased() -> Outcome {
    let start = Instant::now();
    let draws = 100_000u32;
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let min_normal = FP8.dynamic_range().min_normal;
    let mut worst = 0f64;
    for i in 0..100u32 {
        let mag = if i % 2 == 0 {
            2f64.powf(rng.random_range(min_normal.log2()..FP8.max_normal().log2()))
        } else {
            rng.random_range(0.0..min_normal)
        };
        let x = f64::from((if rng.random::<bool>() { -mag } else { mag }) as f32);
        let mut lfsr = Lfsr::derive(99, u64::from(i));
        let sum: f64 = (0..draws).map(|_| FP8.stochastic_round(x, &mut lfsr)).sum();
        let mean = sum / f64::from(draws);
        let bound = 3.0 * (FP8.ulp(x) / 2.0) / f64::from(draws).sqrt();
        let ratio = (mean - x).abs() / bound;
        ensure(ratio <= 1.0, || {
            format!("x = {x:e}: mean {mean:e}, |err| {:e} > {bound:e}", (mean - x).abs())
        })?;
        worst = worst.max(ratio);
    }
    within_time(start.elapsed(), Duration::from_secs(60))?;
    Ok(format!(
        "100 inputs x {draws} draws, worst |bias| = {worst:.3} of bound"
    ))
}

fn lfsr_period() -> Outcome {
    let start = Instant::now();
    let mut report = Vec::new();
    for (width, bits, seed) in [(LfsrWidth::Bits16, 16, 0xace1), (LfsrWidth::Bits8, 8, 0x5a)] {
        let mut r = Lfsr::with_config(width, seed, bits).map_err(|e| e.to_string())?;
        let first = r.state();
        let mut n = 0u64;
        loop {
            r.shift();
            n += 1;
            if r.state() == first || n > 1 << 20 {
                break;
            }
        }
        let want = (1u64 << bits) - 1;
        ensure(n == want && r.period() == want, || {
            format!("{bits}-bit register: cycle {n}, want {want}")
        })?;
        report.push(format!("{bits}-bit {n}"));
    }
    let default = Lfsr::new(1).map_err(|e| e.to_string())?;
    ensure(default.width() == LfsrWidth::Bits16, || {
        "default register is not 16-bit".into()
    })?;
    within_time(start.elapsed(), Duration::from_secs(10))?;
    Ok(format!("cycle lengths {}", report.join(", ")))
}

fn random_codes(rng: &mut ChaCha8Rng, n: usize) -> Vec<u16> {
    (0..n)
        .map(|_| loop {
            let c: u8 = rng.random();
            if c & 0x7c != 0x7c {
                break u16::from(c);
            }
        })
        .collect()
}

fn fp8_tensor(shape: Vec<usize>, codes: Vec<u16>) -> QuantizedTensor {
    QuantizedTensor::from_codes(shape, codes, FP8, RoundingMode::NearestEven).unwrap()
}

fn values(codes: &[u16]) -> Vec<f32> {
    codes.iter().map(|&c| FP8.decode(u32::from(c)) as f32).collect()
}

fn same_bits(a: &[f32], b: &[f32]) -> bool {
    a.len() == b.len() && a.iter().zip(b).all(|(x, y)| x.to_bits() == y.to_bits())
}

fn kernel_oracle() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for case in 0..100 {
        let (m, k, n) = (
            rng.random_range(1..=16),
            rng.random_range(1..=16),
            rng.random_range(1..=16),
        );
        let (ac, bc) = (random_codes(&mut rng, m * k), random_codes(&mut rng, k * n));
        let (av, bv) = (values(&ac), values(&bc));
        let mut want = vec![0f32; m * n];
        for i in 0..m {
            for j in 0..n {
                let mut acc = 0f32;
                for p in 0..k {
                    acc += av[i * k + p] * bv[p * n + j];
                }
                want[i * n + j] = acc;
            }
        }
        let got = gemm_fp8(&fp8_tensor(vec![m, k], ac), &fp8_tensor(vec![k, n], bc)).map_err(|e| e.to_string())?;
        ensure(same_bits(got.data(), &want), || {
            format!("gemm case {case} ({m}x{k}x{n}) differs")
        })?;
    }

    for case in 0..100 {
        let (nb, c, f) = (
            rng.random_range(1..=3),
            rng.random_range(1..=4),
            rng.random_range(1..=4),
        );
        let (h, w) = (rng.random_range(1..=12), rng.random_range(1..=12));
        let (kh, kw) = (rng.random_range(1..=h.min(5)), rng.random_range(1..=w.min(5)));
        let p = Conv2dParams {
            stride: rng.random_range(1..=2),
            padding: rng.random_range(0..=1),
        };
        let (oh, ow) = (p.output_size(h, kh).unwrap(), p.output_size(w, kw).unwrap());
        let (xc, wc) = (
            random_codes(&mut rng, nb * c * h * w),
            random_codes(&mut rng, f * c * kh * kw),
        );
        let (xv, wv) = (values(&xc), values(&wc));
        let mut want = vec![0f32; nb * f * oh * ow];
        for b in 0..nb {
            for fi in 0..f {
                for oy in 0..oh {
                    for ox in 0..ow {
                        let mut acc = 0f32;
                        for ci in 0..c {
                            for ky in 0..kh {
                                for kx in 0..kw {
                                    let iy = (oy * p.stride + ky) as isize - p.padding as isize;
                                    let ix = (ox * p.stride + kx) as isize - p.padding as isize;
                                    let inside = (0..h as isize).contains(&iy) && (0..w as isize).contains(&ix);
                                    let x = if inside {
                                        xv[((b * c + ci) * h + iy as usize) * w + ix as usize]
                                    } else {
                                        0.0
                                    };
                                    acc += x * wv[((fi * c + ci) * kh + ky) * kw + kx];
                                }
                            }
                        }
                        want[((b * f + fi) * oh + oy) * ow + ox] = acc;
                    }
                }
            }
        }
        let x = fp8_tensor(vec![nb, c, h, w], xc);
        let wt = fp8_tensor(vec![f, c, kh, kw], wc);
        let direct = conv2d_fp8(&x, &wt, p).map_err(|e| e.to_string())?;
        let lowered = conv2d_im2col(&x, &wt, p).map_err(|e| e.to_string())?;
        ensure(direct.shape() == [nb, f, oh, ow], || {
            format!("conv case {case}: shape {:?}", direct.shape())
        })?;
        ensure(same_bits(direct.data(), &want), || {
            format!("conv case {case} differs from the reference")
        })?;
        ensure(same_bits(direct.data(), lowered.data()), || {
            format!("conv case {case} differs from im2col")
        })?;
    }
    Ok("100 gemm + 100 conv instances bitwise equal, conv == im2col+gemm".into())
}

fn scaler_trace() -> Outcome {
    let schedule: ThresholdSchedule = "40:8192,150:32768"
        .parse()
        .map_err(|e: fp8emu::scaling::ScalerError| e.to_string())?;
    let interval = 20u64;
    let mut scaler = LossScaler::dynamic(BackoffConfig {
        initial_scale: 16384.0,
        backoff_factor: 0.5,
        growth_factor: 2.0,
        growth_interval: interval,
        schedule,
    })
    .map_err(|e| e.to_string())?;

    for (it, want) in [
        (0, 1.0),
        (39, 1.0),
        (40, 8192.0),
        (149, 8192.0),
        (150, 32768.0),
        (10_000, 32768.0),
    ] {
        let got = scaler.min_threshold(it);
        ensure(got == want, || format!("threshold at {it} is {got}, want {want}"))?;
    }

    let overflow = |i: u64| i < 10 || matches!(i, 60 | 61 | 140..=147 | 170 | 171);
    let mut prev = scaler.scale();
    let mut clean = 0u64;
    let (mut backoffs, mut growths, mut clamps) = (0, 0, 0);
    for i in 0..200u64 {
        let e = scaler.step(!overflow(i), i);
        let floor = scaler.min_threshold(i);
        ensure(e.scale_after >= floor, || {
            format!("step {i}: scale {} below threshold {floor}", e.scale_after)
        })?;
        let expected = if overflow(i) {
            clean = 0;
            prev * 0.5
        } else {
            clean += 1;
            if clean == interval {
                clean = 0;
                prev * 2.0
            } else {
                prev
            }
        };
        match e.action {
            ScaleAction::Backoff => {
                backoffs += 1;
                ensure(overflow(i) && e.scale_after == prev * 0.5, || {
                    format!("step {i}: bad backoff {e:?}")
                })?;
            }
            ScaleAction::Growth => {
                growths += 1;
                ensure(!overflow(i) && e.scale_after == prev * 2.0, || {
                    format!("step {i}: bad growth {e:?}")
                })?;
            }
            ScaleAction::ClampedToMin => {
                clamps += 1;
                ensure(expected < floor && e.scale_after == floor, || {
                    format!("step {i}: bad clamp {e:?}")
                })?;
            }
            ScaleAction::None => {
                ensure(e.scale_after == expected && expected == prev, || {
                    format!("step {i}: unexpected {e:?}")
                })?;
            }
        }
        if e.action != ScaleAction::Growth && e.action != ScaleAction::ClampedToMin {
            ensure(e.scale_after == expected, || {
                format!("step {i}: scale {} want {expected}", e.scale_after)
            })?;
        }
        prev = e.scale_after;
    }
    let events = scaler.events();
    for (it, action, scale) in [
        (0, ScaleAction::Backoff, 8192.0),
        (29, ScaleAction::Growth, 32.0),
        (40, ScaleAction::ClampedToMin, 8192.0),
        (49, ScaleAction::Growth, 16384.0),
        (60, ScaleAction::Backoff, 8192.0),
        (61, ScaleAction::ClampedToMin, 8192.0),
        (143, ScaleAction::ClampedToMin, 8192.0),
        (150, ScaleAction::ClampedToMin, 32768.0),
        (170, ScaleAction::Backoff, 32768.0),
        (171, ScaleAction::ClampedToMin, 32768.0),
        (191, ScaleAction::Growth, 65536.0),
    ] {
        let e = events[it];
        ensure(e.action == action && e.scale_after == scale, || {
            format!("step {it}: {e:?}, want {action} {scale}")
        })?;
    }

    // an overflowing step leaves weights and momentum untouched
    let net = Network::new(ModelSpec::mlp(3, &[4], 2, LayerKind::Relu)).map_err(|e| e.to_string())?;
    let init = net.init_params();
    let mut state = OptimizerState::new(&init, FloatFormat::FP16, 0.1, 0.9).map_err(|e| e.to_string())?;
    let mut s = LossScaler::dynamic(BackoffConfig::default()).map_err(|e| e.to_string())?;
    let mut grads: Vec<ParamTensor<f32>> = init.iter().map(|p| p.cast::<f32>()).collect();
    grads[0].weight[0] = f32::INFINITY;
    let before = state.clone();
    let (e, applied) = state
        .update(&grads, &mut s, 0, 1e-4, false)
        .map_err(|e| e.to_string())?;
    ensure(!applied && e.action == ScaleAction::Backoff && state == before, || {
        "Inf gradient changed the state".into()
    })?;
    grads[0].weight[0] = 0.5;
    let (_, applied) = state.update(&grads, &mut s, 1, 1e-4, true).map_err(|e| e.to_string())?;
    ensure(!applied && state == before, || {
        "backward overflow changed the state".into()
    })?;
    let (_, applied) = state
        .update(&grads, &mut s, 2, 1e-4, false)
        .map_err(|e| e.to_string())?;
    ensure(applied && state != before, || "clean step did not update".into())?;

    // end to end: a scale that overflows every backward pass never moves the weights
    let data = Dataset::gaussian_blobs(64, 2, 2, 2.0, 1);
    let net = Network::new(ModelSpec::mlp(2, &[8], 2, LayerKind::Relu)).map_err(|e| e.to_string())?;
    let cfg = TrainConfig {
        epochs: 1,
        batch_size: 16,
        precision: Precision::Fp8 {
            rounding: RoundingMode::NearestEven,
            saturate: false,
        },
        scaler: ScalerSpec::Constant(1e30),
        ..TrainConfig::default()
    };
    let out = train(&net, &data, None, &cfg).map_err(|e| e.to_string())?;
    ensure(out.steps.iter().all(|s| !s.applied && s.overflow_count > 0), || {
        "some overflow step was applied".into()
    })?;
    let fp16 = |v: f64| Fp16Code::encode(v, Rounding::NearestEven).0.to_f32();
    let untouched = out.state.weights().iter().zip(&net.init_params()).all(|(a, b)| {
        a.weight.iter().zip(&b.weight).all(|(x, y)| *x == fp16(*y))
            && a.bias.iter().zip(&b.bias).all(|(x, y)| *x == fp16(*y))
    });
    ensure(untouched, || "weights moved during skipped steps".into())?;
    Ok(format!(
        "200-step trace: {backoffs} backoffs, {growths} growths, {clamps} clamps; {} overflow steps skipped",
        out.steps.len()
    ))
}

fn grad_check() -> Outcome {
    let check = |net: &Network, data: &Dataset| {
        let idx: Vec<usize> = (0..data.len()).collect();
        let (x, t) = data.batch(&idx);
        let x: Vec<f64> = x.iter().map(|&v| f64::from(v)).collect();
        gradient_check(
            net,
            &net.init_params(),
            &x,
            &t,
            data.len(),
            &GradCheckOptions::default(),
        )
    };
    let mlp = Network::new(
        ModelSpec::mlp(4, &[8, 8], 3, LayerKind::Relu)
            .with_seed(5)
            .with_regularizer(Regularizer::L2(1e-3)),
    )
    .map_err(|e| e.to_string())?;
    let a = check(&mlp, &Dataset::gaussian_blobs(8, 4, 3, 3.0, 2)).map_err(|e| e.to_string())?;
    let conv = Network::new(ModelSpec::convnet([1, 6, 6], [3, 4], 2).with_seed(3)).map_err(|e| e.to_string())?;
    let b = check(&conv, &Dataset::bars(4, 6, 0.3, 9)).map_err(|e| e.to_string())?;
    for (name, r) in [("mlp", a), ("convnet", b)] {
        ensure(r.max_relative_deviation <= 1e-5, || format!("{name}: {r:?}"))?;
    }
    Ok(format!(
        "mlp {:.1e} over {} params, convnet {:.1e} over {} params",
        a.max_relative_deviation, a.checked, b.max_relative_deviation, b.checked
    ))
}

struct Sweeps {
    root: tempfile::TempDir,
}

impl Sweeps {
    fn dir(&self, name: &str) -> PathBuf {
        self.root.path().join(name)
    }
}

fn underflow(sweeps: &Sweeps) -> Outcome {
    let start = Instant::now();
    let report =
        run_sweep(Preset::LossscaleSweep, &sweeps.dir("lossscale"), &[1, 2, 3], false).map_err(|e| e.to_string())?;
    within_time(start.elapsed(), Duration::from_secs(300))?;
    let mut lines = Vec::new();
    for seed in report.seeds() {
        let get = |v: &str| report.get(seed, v).ok_or_else(|| format!("seed {seed}: no {v} run"));
        let (fp32, low, high) = (get("fp32")?, get("fp8-scale1")?, get("fp8-scale10000")?);
        let loss = |r: &fp8emu_cli::RunSummary| r.final_train_loss().unwrap_or(f64::NAN);
        ensure(low.mean_underflow_fraction > high.mean_underflow_fraction, || {
            format!(
                "seed {seed}: underflow {} vs {}",
                low.mean_underflow_fraction, high.mean_underflow_fraction
            )
        })?;
        ensure(loss(low) > loss(high), || {
            format!("seed {seed}: loss {} vs {}", loss(low), loss(high))
        })?;
        let rel = (loss(high) - loss(fp32)).abs() / loss(fp32);
        ensure(rel <= 0.10, || {
            format!("seed {seed}: scale 10000 is {:.1}% from FP32", rel * 100.0)
        })?;
        lines.push(format!(
            "s{seed}: uf {:.3}>{:.3} loss {:.4}>{:.4} gap {:.1}%",
            low.mean_underflow_fraction,
            high.mean_underflow_fraction,
            loss(low),
            loss(high),
            rel * 100.0
        ));
    }
    Ok(format!("{} ({:.0?})", lines.join("; "), start.elapsed()))
}

fn parity(sweeps: &Sweeps) -> Outcome {
    let start = Instant::now();
    let report = run_sweep(Preset::Parity, &sweeps.dir("parity"), &[1, 2, 3], false).map_err(|e| e.to_string())?;
    within_time(start.elapsed(), Duration::from_secs(600))?;
    let mut lines = Vec::new();
    for seed in report.seeds() {
        let acc = |v: &str| {
            report
                .get(seed, v)
                .and_then(|r| r.final_val_accuracy())
                .ok_or_else(|| format!("seed {seed}: no {v} accuracy"))
        };
        let (base, fp8) = (acc("fp32")?, acc("fp8-sr-l2")?);
        let gap = (fp8 - base) * 100.0;
        ensure(gap.abs() <= 2.0, || format!("seed {seed}: fp32 {base:.4} fp8 {fp8:.4}"))?;
        lines.push(format!("s{seed}: {base:.4} vs {fp8:.4}"));
    }
    ensure(lines.len() == 3, || "expected 3 seeds".into())?;
    Ok(format!("{} ({:.0?})", lines.join("; "), start.elapsed()))
}

fn csv_files(dir: &Path) -> BTreeMap<PathBuf, Vec<u8>> {
    fn walk(root: &Path, dir: &Path, out: &mut BTreeMap<PathBuf, Vec<u8>>) {
        for entry in std::fs::read_dir(dir).into_iter().flatten().flatten() {
            let p = entry.path();
            if p.is_dir() {
                walk(root, &p, out);
            } else if p.extension().is_some_and(|e| e == "csv") {
                out.insert(p.strip_prefix(root).unwrap().to_path_buf(), std::fs::read(&p).unwrap());
            }
        }
    }
    let mut out = BTreeMap::new();
    walk(dir, dir, &mut out);
    out
}

fn same_csvs(a: &Path, b: &Path) -> Result<usize, String> {
    let (x, y) = (csv_files(a), csv_files(b));
    ensure(!x.is_empty(), || format!("no CSV files under {}", a.display()))?;
    ensure(x.keys().eq(y.keys()), || {
        format!("file sets differ under {} and {}", a.display(), b.display())
    })?;
    for (name, bytes) in &x {
        ensure(y[name] == *bytes, || format!("{} differs", name.display()))?;
    }
    Ok(x.len())
}

fn determinism(sweeps: &Sweeps) -> Outcome {
    let mut files = 0;
    for (preset, seeds) in [
        (Preset::LossscaleSweep, vec![1, 2, 3]),
        (Preset::Parity, vec![1, 2, 3]),
        (Preset::Fp32Baseline, Preset::Fp32Baseline.default_seeds()),
        (Preset::RoundingAblation, Preset::RoundingAblation.default_seeds()),
    ] {
        let first = sweeps.dir(preset.name());
        if !first.join("comparison.csv").is_file() {
            run_sweep(preset, &first, &seeds, false).map_err(|e| e.to_string())?;
        }
        let again = sweeps.dir(&format!("{}-again", preset.name()));
        run_sweep(preset, &again, &seeds, true).map_err(|e| e.to_string())?;
        files += same_csvs(&first, &again)?;
    }

    // a run's config snapshot reproduces the run
    let original = sweeps.dir("lossscale").join("seed1/fp8-scale1");
    let mut cfg = ExperimentConfig::from_file(&original.join("config.ini")).map_err(|e| e.to_string())?;
    cfg.output_dir = sweeps.dir("snapshot-rerun");
    run_experiment(&cfg).map_err(|e| e.to_string())?;
    files += same_csvs(&original, &cfg.output_dir)?;
    Ok(format!(
        "{files} CSV files byte-identical across reruns (parallel and from snapshot)"
    ))
}

fn main() -> ExitCode {
    let sweeps = Sweeps {
        root: tempfile::tempdir().expect("temp dir"),
    };
    let criteria: Vec<Criterion> = vec![
        ("range table", Box::new(table1)),
        ("codec oracle", Box::new(codec_oracle)),
        ("stochastic rounding unbiased", Box::new(sr_unbiased)),
        ("lfsr period", Box::new(lfsr_period)),
        ("kernel oracle", Box::new(kernel_oracle)),
        ("scaler state machine", Box::new(scaler_trace)),
        ("gradient check", Box::new(grad_check)),
        ("underflow mechanism", Box::new(|| underflow(&sweeps))),
        ("training parity", Box::new(|| parity(&sweeps))),
        ("determinism", Box::new(|| determinism(&sweeps))),
    ];
    // optional name filters: `cargo test --test acceptance -- scaler`
    let filters: Vec<String> = std::env::args().skip(1).filter(|a| !a.starts_with('-')).collect();
    let selected: Vec<_> = criteria
        .iter()
        .filter(|(name, _)| filters.is_empty() || filters.iter().any(|f| name.contains(f.as_str())))
        .collect();
    let mut failed = 0;
    for (name, run) in &selected {
        let start = Instant::now();
        let outcome = run();
        let t = start.elapsed();
        match outcome {
            Ok(detail) => println!("PASS  {name:<30} {t:>8.2?}  {detail}"),
            Err(why) => {
                failed += 1;
                println!("FAIL  {name:<30} {t:>8.2?}  {why}");
            }
        }
    }
    println!("\n{} of {} criteria passed", selected.len() - failed, selected.len());
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
