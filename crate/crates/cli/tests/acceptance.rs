//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! non-zero if any fails. Pass criterion numbers as arguments to run a
//! subset, e.g. `cargo test --test acceptance -- 3 6`.

use std::f64::consts::PI;
use std::io::Write;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::time::{Duration, Instant};

use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use tempfile::TempDir;

use csnas::data::{simulate_acquisition, AccelMode, Acceleration, Dataset, PhaseMode, Sample};
use csnas::gradcore::gradcheck::check_gradients;
use csnas::gradcore::{ParamStore, Tensor};
use csnas::kspace::{
    apply_mask, data_consistency, fft2c, ifft2c, CartesianMask, ComplexImage, Lambda,
};
use csnas::model::{
    count_flops, count_params, discretize, AlphaParams, CandidateOp, Genotype, GenotypeNode,
    Network, NetworkConfig, OpKind, SearchSpace,
};
use csnas::search::{run_search, SearchConfig};
use csnas::traineval::{
    evaluate_samples, psnr, test_samples, train, tv_reconstruct_traced, Aggregate, TrainSchedule,
    Tv, ZeroFilled,
};

type Check = Result<String, String>;

fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn rel(value: f64, golden: f64) -> f64 {
    (value - golden).abs() / golden
}

fn golden_params() -> Check {
    let cases = [
        ("DCCNN B=3", NetworkConfig::dccnn(3), 170_022.0, 170_000.0),
        ("DCCNN B=11", NetworkConfig::dccnn(11), 613_926.0, 613_900.0),
        ("MoDL B=3", NetworkConfig::modl(3), 56_674.0, 56_700.0),
        ("MoDL B=11", NetworkConfig::modl(11), 204_642.0, 204_300.0),
        ("RDN B=3", NetworkConfig::rdn(3), 86_790.0, 86_790.0),
        ("RDN B=8", NetworkConfig::rdn(8), 86_790.0, 86_790.0),
    ];
    let mut out = Vec::new();
    for (name, config, exact, table) in cases {
        let n = count_params(&config, None).map_err(|e| e.to_string())? as f64;
        ensure(rel(n, table) <= 0.01, || format!("{name}: {n} vs {table}"))?;
        if name != "MoDL B=11" {
            ensure(n == exact, || format!("{name}: {n} vs exact {exact}"))?;
        }
        out.push(format!("{name} {n}"));
    }
    Ok(out.join(", "))
}

fn golden_flops() -> Check {
    let cases = [
        ("DCCNN B=3", NetworkConfig::dccnn(3), 17.41e9),
        ("DCCNN B=11", NetworkConfig::dccnn(11), 62.87e9),
        ("RDN B=3", NetworkConfig::rdn(3), 26.03e9),
        ("RDN B=8", NetworkConfig::rdn(8), 68.79e9),
    ];
    let mut out = Vec::new();
    for (name, config, table) in cases {
        let f = count_flops(&config, None, 320, 320).map_err(|e| e.to_string())? as f64;
        ensure(rel(f, table) <= 0.01, || format!("{name}: {f} vs {table}"))?;
        out.push(format!("{name} {:.2}G ({:+.2}%)", f / 1e9, 100.0 * (f - table) / table));
    }
    Ok(out.join(", "))
}

/// Centered orthonormal 1-D DFT matrix for even `n`.
fn dft_matrix(n: usize) -> Vec<Complex64> {
    let half = (n / 2) as f64;
    let mut m = Vec::with_capacity(n * n);
    for k in 0..n {
        for j in 0..n {
            let phase = -2.0 * PI * (k as f64 - half) * (j as f64 - half) / n as f64;
            m.push(Complex64::from_polar(1.0 / (n as f64).sqrt(), phase));
        }
    }
    m
}

/// Solves `a x = b` by Gaussian elimination with partial pivoting.
fn solve(mut a: Vec<Complex64>, mut b: Vec<Complex64>) -> Vec<Complex64> {
    let n = b.len();
    for col in 0..n {
        let pivot = (col..n)
            .max_by(|&i, &j| a[i * n + col].norm().total_cmp(&a[j * n + col].norm()))
            .unwrap();
        for k in 0..n {
            a.swap(col * n + k, pivot * n + k);
        }
        b.swap(col, pivot);
        let d = a[col * n + col];
        for row in col + 1..n {
            let f = a[row * n + col] / d;
            for k in col..n {
                let v = a[col * n + k];
                a[row * n + k] -= f * v;
            }
            let v = b[col];
            b[row] -= f * v;
        }
    }
    let mut x = vec![Complex64::new(0.0, 0.0); n];
    for row in (0..n).rev() {
        let mut acc = b[row];
        for k in row + 1..n {
            acc -= a[row * n + k] * x[k];
        }
        x[row] = acc / a[row * n + row];
    }
    x
}

fn random_complex(r: &mut ChaCha8Rng, n: usize) -> Vec<Complex64> {
    (0..n)
        .map(|_| Complex64::new(r.gen_range(-1.0..1.0), r.gen_range(-1.0..1.0)))
        .collect()
}

/// Dense minimizer of `lambda ||s - M F x||^2 + ||x - x_cnn||^2`.
fn dense_dc(x_cnn: &[Complex64], s: &[Complex64], sampled: &[bool], n: usize, lambda: f64) -> Vec<Complex64> {
    let f1 = dft_matrix(n);
    let size = n * n;
    // F is the Kronecker product of the row and column transforms.
    let f = |k: usize, j: usize| f1[(k / n) * n + j / n] * f1[(k % n) * n + j % n];
    let mut a = vec![Complex64::new(0.0, 0.0); size * size];
    let mut b = x_cnn.to_vec();
    for k in 0..size {
        if !sampled[k % n] {
            continue;
        }
        for i in 0..size {
            let fi = f(k, i).conj();
            b[i] += lambda * fi * s[k];
            for j in 0..size {
                a[i * size + j] += lambda * fi * f(k, j);
            }
        }
    }
    for i in 0..size {
        a[i * size + i] += 1.0;
    }
    solve(a, b)
}

fn dc_oracle() -> Check {
    let mut r = rng(3);
    let mut cases = 0;
    let mut worst: f64 = 0.0;
    for &n in &[4usize, 8] {
        for &lambda in &[0.1, 1.0, 10.0] {
            for _ in 0..20 {
                let x = random_complex(&mut r, n * n);
                let mut s = random_complex(&mut r, n * n);
                let mut sampled: Vec<bool> = (0..n).map(|_| r.gen_bool(0.5)).collect();
                sampled[r.gen_range(0..n)] = true;
                for (k, v) in s.iter_mut().enumerate() {
                    if !sampled[k % n] {
                        *v = Complex64::new(0.0, 0.0);
                    }
                }
                let want = dense_dc(&x, &s, &sampled, n, lambda);
                let mask = CartesianMask::from_columns(sampled.clone(), 1, 1.0);
                let xi = ComplexImage::new(n, n, x).map_err(|e| e.to_string())?;
                let si = csnas::kspace::KSpaceGrid::new(n, n, s).map_err(|e| e.to_string())?;
                let got = data_consistency(&xi, &si, &mask, lambda).map_err(|e| e.to_string())?;
                let err = got
                    .data()
                    .iter()
                    .zip(&want)
                    .map(|(a, b)| (a - b).norm())
                    .fold(0.0, f64::max);
                worst = worst.max(err);
                cases += 1;
            }
        }
    }
    ensure(worst <= 1e-10, || format!("max deviation {worst:.3e} over {cases} cases"))?;
    Ok(format!("{cases} cases, max deviation {worst:.2e}"))
}

fn random_tensor(r: &mut ChaCha8Rng, shape: [usize; 4]) -> Tensor<f64> {
    let n = shape.iter().product();
    Tensor::from_vec(shape, (0..n).map(|_| r.gen_range(-1.0..1.0)).collect()).unwrap()
}

fn gradchecks() -> Check {
    let mut worst: f64 = 0.0;
    let mut parts = Vec::new();
    for (k, kind) in OpKind::ALL.into_iter().enumerate() {
        let mut store = ParamStore::new();
        let op = CandidateOp::create(&mut store, &mut rng(k as u64), kind.name(), kind, 3);
        let x = store.add("x", random_tensor(&mut rng(50 + k as u64), [1, 3, 10, 10]));
        let target = Tensor::full([1, 3, 10, 10], 4.0);
        let mut params = op.param_ids();
        params.push(x);
        let report = check_gradients(&store, &params, 1e-6, |g| {
            let xn = g.param(x);
            let y = op.forward(g, xn, true)?;
            g.l1_loss(y, target.clone())
        })
        .map_err(|e| e.to_string())?;
        let e = report.max_relative_error();
        ensure(e < 1e-4, || format!("{kind}: relative error {e:.3e}"))?;
        worst = worst.max(e);
    }
    parts.push(format!("{} ops", OpKind::ALL.len()));

    let img = csnas::data::gen_phantom(&mut rng(7), 16, 16).unwrap();
    let sample = simulate_acquisition(&img, Acceleration::Fold(4), &mut rng(8)).unwrap();
    let single_cell = |space: SearchSpace| NetworkConfig {
        modules: 1,
        cells_per_module: 1,
        nodes_per_cell: 3,
        channels: 2,
        search_space: space,
        lambda: Lambda::new(2.0).unwrap(),
        ..NetworkConfig::nas()
    };
    let genotype = Genotype::new(
        SearchSpace::Extended,
        vec![
            GenotypeNode::new(1, OpKind::SepConv3, 0, OpKind::Conv9x1_1x9),
            GenotypeNode::new(2, OpKind::DilConv3r2, 0, OpKind::Skip),
            GenotypeNode::new(3, OpKind::DilConv3r3, 1, OpKind::SepConv3),
        ],
    )
    .unwrap();
    let discrete = Network::<f64>::new(single_cell(SearchSpace::Extended), Some(genotype), &mut rng(9))
        .map_err(|e| e.to_string())?;
    let report = check_gradients(discrete.store(), &discrete.weight_ids(), 1e-6, |g| {
        discrete.loss(g, &[&sample])
    })
    .map_err(|e| e.to_string())?;
    let e = report.max_relative_error();
    ensure(e < 1e-4, || format!("single-cell network: relative error {e:.3e}"))?;
    worst = worst.max(e);

    let mut supernet = Network::<f64>::new(single_cell(SearchSpace::A), None, &mut rng(10))
        .map_err(|e| e.to_string())?;
    let mut alpha = supernet.alpha().unwrap();
    let mut r = rng(11);
    for i in 0..3 {
        for j in 0..i + 2 {
            for v in alpha.edge_mut(i, j) {
                *v = r.gen_range(-1.0..1.0);
            }
        }
    }
    supernet.set_alpha(&alpha).map_err(|e| e.to_string())?;
    let mut ids = supernet.weight_ids();
    ids.extend(supernet.alpha_ids());
    let report = check_gradients(supernet.store(), &ids, 1e-6, |g| supernet.loss(g, &[&sample]))
        .map_err(|e| e.to_string())?;
    let e = report.global_relative_error;
    ensure(e < 1e-4, || format!("single-cell supernet: relative error {e:.3e}"))?;
    worst = worst.max(e);
    parts.push(format!(
        "single-cell network and supernet (largest single-tensor error {:.1e})",
        report.max_relative_error()
    ));
    Ok(format!("{}; max relative error {worst:.2e}", parts.join(", ")))
}

/// Exhaustive top-2 choice: the pair of distinct inputs and non-none ops
/// with the largest summed probability, stronger edge first.
fn exhaustive_node(alpha: &AlphaParams, i: usize) -> GenotypeNode {
    let ops = alpha.space().ops();
    let mut best: Option<(f64, (usize, OpKind, f64), (usize, OpKind, f64))> = None;
    for j1 in 0..i + 2 {
        let p1 = alpha.probabilities(i, j1);
        for j2 in 0..i + 2 {
            if j1 == j2 {
                continue;
            }
            let p2 = alpha.probabilities(i, j2);
            for (o1, &k1) in ops.iter().enumerate() {
                for (o2, &k2) in ops.iter().enumerate() {
                    if k1 == OpKind::NoneOp || k2 == OpKind::NoneOp || p1[o1] < p2[o2] {
                        continue;
                    }
                    let score = p1[o1] + p2[o2];
                    if best.as_ref().is_none_or(|b| score > b.0) {
                        best = Some((score, (j1, k1, p1[o1]), (j2, k2, p2[o2])));
                    }
                }
            }
        }
    }
    let (_, a, b) = best.unwrap();
    GenotypeNode::new(a.0, a.1, b.0, b.1)
}

fn discretization() -> Check {
    let spaces = [SearchSpace::A, SearchSpace::B, SearchSpace::Extended];
    let mut r = rng(5);
    for trial in 0..1000 {
        let space = spaces[trial % 3].clone();
        let nodes = 1 + trial % 5;
        let mut alpha = AlphaParams::zeros(space, nodes);
        for i in 0..nodes {
            for j in 0..i + 2 {
                for v in alpha.edge_mut(i, j) {
                    *v = r.gen_range(-3.0..3.0);
                }
            }
        }
        let g = discretize(&alpha).map_err(|e| e.to_string())?;
        ensure(g.len() == nodes, || format!("trial {trial}: {} nodes", g.len()))?;
        for (i, n) in g.nodes().iter().enumerate() {
            ensure(n.input1 < i + 2 && n.input2 < i + 2, || format!("trial {trial}: cycle at node {i}"))?;
            ensure(n.input1 != n.input2, || format!("trial {trial}: repeated input at node {i}"))?;
            ensure(n.op1 != OpKind::NoneOp && n.op2 != OpKind::NoneOp, || {
                format!("trial {trial}: none op at node {i}")
            })?;
            let want = exhaustive_node(&alpha, i);
            ensure(*n == want, || format!("trial {trial}, node {i}: {n:?} vs {want:?}"))?;
        }
        Genotype::from_json(&g.to_json()).map_err(|e| e.to_string())?;
    }
    Ok("1000 random draws agree with the exhaustive selector".into())
}

fn fft_checks() -> Check {
    let mut worst_rt: f64 = 0.0;
    let mut worst_parseval: f64 = 0.0;
    let mut r = rng(6);
    for &(h, w) in &[(4, 4), (8, 6), (16, 16), (64, 64), (33, 20)] {
        for _ in 0..5 {
            let x = ComplexImage::new(h, w, random_complex(&mut r, h * w)).unwrap();
            let k = fft2c(&x);
            worst_rt = worst_rt.max(ifft2c(&k).max_abs_diff(&x));
            worst_parseval = worst_parseval.max((k.energy() - x.energy()).abs() / x.energy());
        }
    }
    ensure(worst_rt <= 1e-12, || format!("round trip {worst_rt:.3e}"))?;
    ensure(worst_parseval <= 1e-12, || format!("parseval {worst_parseval:.3e}"))?;
    let (h, w) = (8, 12);
    let c = Complex64::new(0.7, -0.2);
    let k = fft2c(&ComplexImage::new(h, w, vec![c; h * w]).unwrap());
    let mut impulse_err: f64 = 0.0;
    for y in 0..h {
        for x in 0..w {
            let want = if (y, x) == (h / 2, w / 2) {
                c * ((h * w) as f64).sqrt()
            } else {
                Complex64::new(0.0, 0.0)
            };
            impulse_err = impulse_err.max((k.get(y, x) - want).norm());
        }
    }
    ensure(impulse_err <= 1e-12, || format!("impulse {impulse_err:.3e}"))?;
    Ok(format!(
        "round trip {worst_rt:.1e}, parseval {worst_parseval:.1e}, impulse {impulse_err:.1e}"
    ))
}

fn agg_line(name: &str, a4: &Aggregate, a8: &Aggregate) -> String {
    format!(
        "{name} {:.2}/{:.2} dB ssim {:.3}/{:.3}",
        a4.psnr.0, a8.psnr.0, a4.ssim.0, a8.ssim.0
    )
}

fn end_to_end() -> Check {
    let train_set = Dataset::synthetic(60, 64, 64, PhaseMode::Smooth, &mut rng(100)).unwrap();
    let test_set = Dataset::synthetic(20, 64, 64, PhaseMode::Smooth, &mut rng(200)).unwrap();
    let search = SearchConfig::default();
    let t = Instant::now();
    let outcome = run_search::<f32, _>(&search, &train_set, &mut rng(1)).map_err(|e| e.to_string())?;
    let search_time = t.elapsed().as_secs_f64();
    let schedule = TrainSchedule::default();
    let t = Instant::now();
    let mut nas = Network::<f32>::new(NetworkConfig::nas(), Some(outcome.genotype.clone()), &mut rng(2))
        .map_err(|e| e.to_string())?;
    let nas_loss = train(&mut nas, &train_set, &schedule, AccelMode::Random, &mut rng(3))
        .map_err(|e| e.to_string())?;
    let nas_time = t.elapsed().as_secs_f64();
    let t = Instant::now();
    let mut dccnn = Network::<f32>::new(NetworkConfig::dccnn(3), None, &mut rng(2)).map_err(|e| e.to_string())?;
    let dccnn_loss = train(&mut dccnn, &train_set, &schedule, AccelMode::Random, &mut rng(3))
        .map_err(|e| e.to_string())?;
    let dccnn_time = t.elapsed().as_secs_f64();
    ensure(
        nas_loss.losses.iter().chain(&dccnn_loss.losses).all(|l| l.is_finite()),
        || "non-finite training loss".into(),
    )?;

    let samples = test_samples(&test_set, &mut rng(4)).map_err(|e| e.to_string())?;
    let zf = evaluate_samples(&ZeroFilled, &samples).map_err(|e| e.to_string())?;
    let nas_rep = evaluate_samples(&nas, &samples).map_err(|e| e.to_string())?;
    let dccnn_rep = evaluate_samples(&dccnn, &samples).map_err(|e| e.to_string())?;
    let detail = format!(
        "genotype {:?} after {} search epochs ({search_time:.0} s); retrain nas {nas_time:.0} s, dccnn {dccnn_time:.0} s; \
         accel 4/8: {}; {}; {}",
        outcome.genotype.nodes(),
        outcome.history.len(),
        agg_line("zero-filled", &zf.by_accel(4), &zf.by_accel(8)),
        agg_line("nas", &nas_rep.by_accel(4), &nas_rep.by_accel(8)),
        agg_line("dccnn", &dccnn_rep.by_accel(4), &dccnn_rep.by_accel(8)),
    );
    for accel in [4, 8] {
        let (n, z, d) = (
            nas_rep.by_accel(accel).psnr.0,
            zf.by_accel(accel).psnr.0,
            dccnn_rep.by_accel(accel).psnr.0,
        );
        ensure(n >= z + 3.0, || format!("accel {accel}: nas {n:.2} < zero-filled {z:.2} + 3; {detail}"))?;
        ensure(n >= d - 0.2, || format!("accel {accel}: nas {n:.2} < dccnn {d:.2} - 0.2; {detail}"))?;
    }
    Ok(detail)
}

fn search_sanity() -> Check {
    let data = Dataset::synthetic(8, 32, 32, PhaseMode::Smooth, &mut rng(30)).unwrap();
    let space = SearchSpace::custom(vec![OpKind::Skip, OpKind::NoneOp, OpKind::SepConv3]).unwrap();
    let config = SearchConfig {
        network: NetworkConfig {
            search_space: space,
            channels: 16,
            lambda: Lambda::HARD,
            ..NetworkConfig::nas()
        },
        accel: AccelMode::Full,
        max_epochs: 20,
        patience: 5,
        ..SearchConfig::default()
    };
    let out = run_search::<f64, _>(&config, &data, &mut rng(31)).map_err(|e| e.to_string())?;
    ensure(out.genotype.contains_op(OpKind::Skip), || format!("genotype {:?}", out.genotype.nodes()))?;
    ensure(out.stopped_early, || "no early stop".into())?;
    ensure(out.history.len() <= 20, || format!("{} epochs", out.history.len()))?;
    Ok(format!(
        "genotype {:?}, stopped after {} epochs",
        out.genotype.nodes(),
        out.history.len()
    ))
}

fn tv_baseline() -> Check {
    let mut worst_rise: f64 = 0.0;
    let mut margins = Vec::new();
    let mut slices = 0;
    let t = Instant::now();
    for seed in 0..6u64 {
        let img = csnas::data::gen_phantom_with(&mut rng(seed), 64, 64, PhaseMode::Zero).unwrap();
        let sample: Sample = simulate_acquisition(&img, Acceleration::Fold(8), &mut rng(seed + 50)).unwrap();
        let tv = Tv::default();
        let (x, trace) = tv_reconstruct_traced(&sample.s, &sample.mask, tv.weight, tv.iters)
            .map_err(|e| e.to_string())?;
        ensure(trace.objective.len() == 201, || "missing iterations".into())?;
        for pair in trace.objective.windows(2) {
            worst_rise = worst_rise.max(pair[1] - pair[0]);
        }
        let gain = psnr(&x, &sample.target).unwrap() - psnr(&sample.zero_filled, &sample.target).unwrap();
        ensure(gain > 0.0, || format!("seed {seed}: tv below zero-filled by {:.3} dB", -gain))?;
        margins.push(gain);
        slices += 1;
    }
    ensure(worst_rise <= 0.0, || format!("objective rose by {worst_rise:.3e}"))?;
    let per_slice = t.elapsed().as_secs_f64() / slices as f64;
    ensure(per_slice < 10.0, || format!("{per_slice:.1} s per slice"))?;
    let min = margins.iter().copied().fold(f64::INFINITY, f64::min);
    Ok(format!(
        "{slices} slices, objective non-increasing over 200 iterations, psnr gain over zero-filled >= {min:.2} dB, {per_slice:.2} s per slice"
    ))
}

fn hard_consistency() -> Check {
    let train_set = Dataset::synthetic(6, 32, 32, PhaseMode::Smooth, &mut rng(40)).unwrap();
    let test_set = Dataset::synthetic(6, 32, 32, PhaseMode::Smooth, &mut rng(41)).unwrap();
    let small = |config: NetworkConfig| NetworkConfig {
        channels: 8,
        ..config
    };
    let genotype = Genotype::new(
        SearchSpace::A,
        vec![
            GenotypeNode::new(1, OpKind::SepConv3, 0, OpKind::DilConv3r2),
            GenotypeNode::new(2, OpKind::DilConv3r3, 1, OpKind::Skip),
            GenotypeNode::new(0, OpKind::SepConv3, 3, OpKind::DilConv3r2),
        ],
    )
    .unwrap();
    let schedule = TrainSchedule {
        epochs_phase1: 2,
        epochs_phase2: 1,
        ..TrainSchedule::default()
    };
    let samples = test_samples(&test_set, &mut rng(42)).map_err(|e| e.to_string())?;
    let mut worst: f64 = 0.0;
    let mut checked = 0;
    for (config, g) in [
        (small(NetworkConfig::nas()), Some(genotype)),
        (small(NetworkConfig::dccnn(3)), None),
        (small(NetworkConfig::rdn(3)), None),
    ] {
        let mut net = Network::<f64>::new(config, g, &mut rng(43)).map_err(|e| e.to_string())?;
        train(&mut net, &train_set, &schedule, AccelMode::Random, &mut rng(44)).map_err(|e| e.to_string())?;
        for (_, s) in &samples {
            let out = net.reconstruct(s).map_err(|e| e.to_string())?;
            let k = apply_mask(&fft2c(&out), &s.mask).map_err(|e| e.to_string())?;
            worst = worst.max(k.max_abs_diff(&s.s));
            checked += 1;
        }
    }
    ensure(worst <= 1e-10, || format!("sampled k-space deviates by {worst:.3e}"))?;
    Ok(format!("{checked} reconstructions from 3 trained networks, max deviation {worst:.2e}"))
}

fn cli(dir: &std::path::Path, args: &[&str]) -> Result<(), String> {
    let mut full = vec!["csnas"];
    full.extend_from_slice(args);
    let old = std::env::current_dir().map_err(|e| e.to_string())?;
    std::env::set_current_dir(dir).map_err(|e| e.to_string())?;
    let result = csnas_cli::run_from(full).map_err(|e| e.to_string());
    std::env::set_current_dir(old).map_err(|e| e.to_string())?;
    result
}

fn determinism() -> Check {
    let tmp = TempDir::new().map_err(|e| e.to_string())?;
    let p = tmp.path();
    cli(p, &["gen-data", "--count", "6", "--height", "32", "--width", "32", "--out", "d.bin", "--seed", "9"])?;
    let tiny = [
        "--dataset", "d.bin", "--out-dir", "o", "--channels", "4", "--modules", "2", "--cells", "2",
        "--nodes", "2", "--seed", "5", "--precision", "f64",
    ];
    let run = |args: &[&str], file: &str| -> Result<Vec<u8>, String> {
        let mut a = args.to_vec();
        a.extend_from_slice(&tiny);
        cli(p, &a)?;
        std::fs::read(p.join("o").join(file)).map_err(|e| e.to_string())
    };
    let search = ["search", "--max-epochs", "2"];
    let g1 = run(&search, "genotype.json")?;
    std::fs::copy(p.join("o/genotype.json"), p.join("g.json")).map_err(|e| e.to_string())?;
    let g2 = run(&search, "genotype.json")?;
    ensure(g1 == g2, || "genotype files differ".into())?;
    let retrain = ["retrain", "--genotype", "g.json", "--epochs1", "1", "--epochs2", "1"];
    let w1 = run(&retrain, "weights.bin")?;
    let w2 = run(&retrain, "weights.bin")?;
    ensure(w1 == w2, || "nas weight files differ".into())?;
    let baseline = ["retrain", "--model", "dccnn", "--epochs1", "1", "--epochs2", "1"];
    let d1 = run(&baseline, "weights.bin")?;
    let d2 = run(&baseline, "weights.bin")?;
    ensure(d1 == d2, || "dccnn weight files differ".into())?;
    Ok(format!(
        "genotype {} bytes, nas weights {} bytes, dccnn weights {} bytes identical across runs",
        g1.len(),
        w1.len(),
        d1.len()
    ))
}

struct Criterion {
    id: u32,
    name: &'static str,
    budget: Option<Duration>,
    run: fn() -> Check,
}

fn main() {
    let criteria = [
        Criterion { id: 1, name: "golden parameter counts", budget: Some(Duration::from_secs(1)), run: golden_params },
        Criterion { id: 2, name: "golden FLOPs counts", budget: Some(Duration::from_secs(1)), run: golden_flops },
        Criterion { id: 3, name: "data-consistency oracle", budget: Some(Duration::from_secs(60)), run: dc_oracle },
        Criterion { id: 4, name: "autodiff gradient checks", budget: Some(Duration::from_secs(60)), run: gradchecks },
        Criterion { id: 5, name: "discretization invariants", budget: Some(Duration::from_secs(60)), run: discretization },
        Criterion { id: 6, name: "FFT correctness", budget: Some(Duration::from_secs(1)), run: fft_checks },
        Criterion { id: 7, name: "end-to-end reconstruction", budget: Some(Duration::from_secs(7200)), run: end_to_end },
        Criterion { id: 8, name: "search sanity", budget: Some(Duration::from_secs(900)), run: search_sanity },
        Criterion { id: 9, name: "TV baseline", budget: None, run: tv_baseline },
        Criterion { id: 10, name: "hard consistency", budget: None, run: hard_consistency },
        Criterion { id: 11, name: "determinism", budget: None, run: determinism },
    ];
    let selected: Vec<u32> = std::env::args().skip(1).filter_map(|a| a.parse().ok()).collect();
    let mut stderr = std::io::stderr();
    let mut lines = Vec::new();
    let mut failed = 0;
    for c in criteria.iter().filter(|c| selected.is_empty() || selected.contains(&c.id)) {
        let start = Instant::now();
        let result = catch_unwind(AssertUnwindSafe(c.run)).unwrap_or_else(|p| {
            Err(p
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_else(|| "panic".into()))
        });
        let elapsed = start.elapsed();
        let result = match (result, c.budget) {
            (Ok(_), Some(b)) if elapsed > b => Err(format!("took {:.1} s, budget {} s", elapsed.as_secs_f64(), b.as_secs())),
            (r, _) => r,
        };
        let (tag, detail) = match &result {
            Ok(d) => ("PASS", d.clone()),
            Err(d) => {
                failed += 1;
                ("FAIL", d.clone())
            }
        };
        let line = format!(
            "criterion {:>2} {tag} {} ({:.1} s): {detail}",
            c.id,
            c.name,
            elapsed.as_secs_f64()
        );
        writeln!(stderr, "{line}").unwrap();
        lines.push(line);
    }
    writeln!(stderr, "\nacceptance summary").unwrap();
    for line in &lines {
        writeln!(stderr, "{}", line.split(": ").next().unwrap()).unwrap();
    }
    if failed > 0 {
        writeln!(stderr, "{failed} criterion(s) failed").unwrap();
        std::process::exit(1);
    }
}
