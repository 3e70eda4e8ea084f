//! Acceptance criteria, one reported line per criterion.
//!
//! Runs as a plain binary (`harness = false`) so the PASS/FAIL lines always
//! reach the test log. Exits non-zero if any criterion fails.

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::time::{Duration, Instant};

use freqselect::diffusion::{DEFAULT_RETENTION_END, DEFAULT_RETENTION_START, DEFAULT_STEPS, DEFAULT_T_INIT};
use freqselect::pipeline;
use freqselect::regression::default_lambda_grid;
use freqselect::train::{GradientPath, Stage1Objective};
use freqselect::*;
use num_complex::Complex;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn gauss(r: &mut ChaCha8Rng) -> f64 {
    r.sample(StandardNormal)
}

fn random_image(shape: Shape, seed: u64) -> Image {
    let mut r = rng(seed);
    ImageTensor::from_fn(shape, |_, _, _| r.random::<f64>())
}

struct Report(Vec<String>);

impl Report {
    fn check(&mut self, ok: bool, what: impl Into<String>) {
        if !ok {
            self.0.push(what.into());
        }
    }
}

// ---------------------------------------------------------------- criterion 1

/// Centered DFT straight from the definition.
fn naive_dft(plane: &[f64], h: usize, w: usize) -> Vec<Complex<f64>> {
    let mut out = vec![Complex::new(0.0, 0.0); h * w];
    for (su, ou) in (0..h).map(|su| (su, (su + h - h / 2) % h)) {
        for (sv, ov) in (0..w).map(|sv| (sv, (sv + w - w / 2) % w)) {
            let mut acc = Complex::new(0.0, 0.0);
            for y in 0..h {
                for x in 0..w {
                    let phase = -2.0 * std::f64::consts::PI
                        * ((ou * y) as f64 / h as f64 + (ov * x) as f64 / w as f64);
                    acc += Complex::from_polar(plane[y * w + x], phase);
                }
            }
            out[su * w + sv] = acc;
        }
    }
    out
}

fn spectral_suite(rep: &mut Report) {
    for (shape, seed) in [(Shape::new(3, 64, 64), 1), (Shape::new(1, 15, 22), 2), (Shape::new(2, 33, 17), 3)] {
        let x = random_image(shape, seed);
        let spec = dft2_shifted(&x).unwrap();
        let back = idft2_shifted(&spec).unwrap();
        let err = back.image.max_abs_diff(&x);
        rep.check(err <= 1e-9, format!("round trip {shape}: {err:e}"));

        let spatial = x.energy();
        let freq = spec.energy() / (shape.height * shape.width) as f64;
        let rel = (spatial - freq).abs() / spatial;
        rep.check(rel <= 1e-9, format!("Parseval {shape}: {rel:e}"));

        if shape.height <= 33 {
            for c in 0..shape.channels {
                let oracle = naive_dft(x.channel(c), shape.height, shape.width);
                let got = &spec.data()[c * shape.plane_len()..(c + 1) * shape.plane_len()];
                let err = got.iter().zip(&oracle).map(|(a, b)| (a - b).norm()).fold(0.0, f64::max);
                rep.check(err <= 1e-9, format!("naive DFT {shape}: {err:e}"));
            }
        }

        let nu_max = shape.height.min(shape.width) as f64 / 2.0;
        for n in [1, 4, 16] {
            let masks = make_band_masks(shape.height, shape.width, n, nu_max, MaskMode::PartitionComplete).unwrap();
            let d = band_decompose(&x, &masks).unwrap();
            let err = d.sum().max_abs_diff(&x);
            rep.check(err <= 1e-6, format!("band sum {shape} N={n}: {err:e}"));

            let plane = shape.plane_len();
            let masked: Vec<Vec<Complex<f64>>> = (0..n)
                .map(|i| {
                    let m = masks.mask(i);
                    spec.data()
                        .iter()
                        .enumerate()
                        .map(|(k, &z)| if m[k % plane] { z } else { Complex::new(0.0, 0.0) })
                        .collect()
                })
                .collect();
            for i in 0..n {
                for j in i + 1..n {
                    let overlap = masks.mask(i).iter().zip(masks.mask(j)).any(|(a, b)| *a && b);
                    rep.check(!overlap, format!("masks {i},{j} overlap"));
                    let inner: Complex<f64> = masked[i].iter().zip(&masked[j]).map(|(a, b)| a * b.conj()).sum();
                    rep.check(inner == Complex::new(0.0, 0.0), format!("band {i},{j} spectra not orthogonal"));
                }
            }
        }
    }
}

// ---------------------------------------------------------------- criterion 2

fn scalar_fuse(bands: &[&[f64]], w: &[f64], eps: f64) -> Vec<f64> {
    let alpha: Vec<f64> = w.iter().map(|&v| 1.0 / (1.0 + (-v).exp())).collect();
    let total: f64 = alpha.iter().sum::<f64>() + eps;
    (0..bands[0].len())
        .map(|p| {
            let mut acc = 0.0;
            for k in 0..bands.len() {
                acc += alpha[k] * bands[k][p];
            }
            acc / total
        })
        .collect()
}

fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-8)
}

fn gate_suite(rep: &mut Report) {
    let shape = Shape::new(3, 32, 32);
    let x = random_image(shape, 10);
    for (n, seed) in [(4usize, 11u64), (8, 12), (16, 13)] {
        let masks = make_band_masks(32, 32, n, 16.0, MaskMode::PartitionComplete).unwrap();
        let d = band_decompose(&x, &masks).unwrap();
        let mut r = rng(seed);
        let w: Vec<f64> = (0..n).map(|_| 2.0 * gauss(&mut r)).collect();
        let params = Gate::new(w.clone(), 1e-10).unwrap();

        let fused = fuse(&d, &params).unwrap();
        let refs: Vec<&[f64]> = d.bands().iter().map(|b| b.data()).collect();
        let oracle = scalar_fuse(&refs, &w, 1e-10);
        let err = fused.data().iter().zip(&oracle).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        rep.check(err <= 1e-9, format!("fuse N={n}: {err:e}"));

        let upstream = random_image(shape, seed + 100).map(|v| v - 0.5);
        let objective = |w: &[f64]| -> f64 {
            let f = scalar_fuse(&refs, w, 1e-10);
            f.iter().zip(upstream.data()).map(|(a, b)| a * b).sum()
        };
        let g = fuse_gradient(&d, &params, &upstream).unwrap().d_loss_d_w;
        let h = 1e-5;
        for k in 0..n {
            let (mut up, mut dn) = (w.clone(), w.clone());
            up[k] += h;
            dn[k] -= h;
            let fd = (objective(&up) - objective(&dn)) / (2.0 * h);
            let e = rel_err(g[k], fd);
            rep.check(e < 1e-5, format!("gate gradient N={n} band {k}: rel {e:e}"));
        }
    }

    let synth = SynthConfig {
        n_samples: 12,
        height: 32,
        width: 32,
        gt_profile: vec![1.0, 1.0, 0.0, 0.0],
        nu_max: 16.0,
        voxel_dim: 40,
        ..SynthConfig::default()
    };
    let data = generate::<f64>(&synth).unwrap();
    let encoders: Vec<Box<dyn FrozenEncoder<f64>>> = vec![
        Box::new(make_linear_projection_encoder(3, synth.shape(), 16).unwrap()),
        Box::new(make_block_dct_encoder(synth.shape(), 8, 6).unwrap()),
    ];
    let masks = make_band_masks(32, 32, 8, 16.0, MaskMode::PartitionComplete).unwrap();
    for enc in &encoders {
        for path in [GradientPath::Cached, GradientPath::Image] {
            let obj = Stage1Objective::new(&data.images, &masks, enc.as_ref(), path).unwrap();
            let params = Gate::new((0..8).map(|i| 1.0 - 0.3 * i as f64).collect(), 1e-10).unwrap();
            let ridge = ridge_fit(&data.voxels, &obj.latents(&params).unwrap(), 1.0).unwrap();
            let pred = ridge.predict_batch(&data.voxels).unwrap();
            let idx: Vec<usize> = (0..12).collect();
            let (_, g) = obj.loss_and_gradient(&params, &pred, &idx).unwrap();
            let w = params.weights().to_vec();
            let h = 1e-5;
            for k in 0..8 {
                let (mut up, mut dn) = (w.clone(), w.clone());
                up[k] += h;
                dn[k] -= h;
                let lu = obj.loss(&params.with_weights(up).unwrap(), &pred, &idx).unwrap();
                let ld = obj.loss(&params.with_weights(dn).unwrap(), &pred, &idx).unwrap();
                let fd = (lu - ld) / (2.0 * h);
                let e = rel_err(g[k], fd);
                rep.check(e < 1e-4, format!("end-to-end gradient {path:?} band {k}: rel {e:e}"));
            }
        }
    }
}

// ---------------------------------------------------------------- criterion 3

fn gauss_jordan_inverse(a: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let n = a.len();
    let mut m: Vec<Vec<f64>> = a
        .iter()
        .enumerate()
        .map(|(i, row)| {
            let mut r = row.clone();
            r.extend((0..n).map(|j| if i == j { 1.0 } else { 0.0 }));
            r
        })
        .collect();
    for col in 0..n {
        let piv = (col..n).max_by(|&p, &q| m[p][col].abs().total_cmp(&m[q][col].abs())).unwrap();
        m.swap(col, piv);
        let d = m[col][col];
        for v in m[col].iter_mut() {
            *v /= d;
        }
        for r in 0..n {
            if r != col {
                let f = m[r][col];
                if f != 0.0 {
                    let pivot_row = m[col].clone();
                    for (v, p) in m[r].iter_mut().zip(pivot_row) {
                        *v -= f * p;
                    }
                }
            }
        }
    }
    m.into_iter().map(|r| r[n..].to_vec()).collect()
}

/// Ridge with an unpenalised intercept via explicit inversion.
fn normal_equation_oracle(x: &[Vec<f64>], z: &[Vec<f64>], lambda: f64) -> (Vec<Vec<f64>>, Vec<f64>) {
    let (n, v, d) = (x.len(), x[0].len(), z[0].len());
    let xm: Vec<f64> = (0..v).map(|j| x.iter().map(|r| r[j]).sum::<f64>() / n as f64).collect();
    let zm: Vec<f64> = (0..d).map(|j| z.iter().map(|r| r[j]).sum::<f64>() / n as f64).collect();
    let mut gram = vec![vec![0.0; v]; v];
    let mut rhs = vec![vec![0.0; d]; v];
    for s in 0..n {
        for a in 0..v {
            let xa = x[s][a] - xm[a];
            for b in 0..v {
                gram[a][b] += xa * (x[s][b] - xm[b]);
            }
            for b in 0..d {
                rhs[a][b] += xa * (z[s][b] - zm[b]);
            }
        }
    }
    for (a, row) in gram.iter_mut().enumerate() {
        row[a] += lambda;
    }
    let inv = gauss_jordan_inverse(&gram);
    let w: Vec<Vec<f64>> = (0..v)
        .map(|a| (0..d).map(|b| (0..v).map(|k| inv[a][k] * rhs[k][b]).sum()).collect())
        .collect();
    let b: Vec<f64> = (0..d).map(|j| zm[j] - (0..v).map(|k| xm[k] * w[k][j]).sum::<f64>()).collect();
    (w, b)
}

fn random_rows(r: &mut ChaCha8Rng, n: usize, m: usize) -> Vec<Vec<f64>> {
    (0..n).map(|_| (0..m).map(|_| gauss(r)).collect()).collect()
}

fn ridge_suite(rep: &mut Report) {
    let mut r = rng(30);
    for inst in 0..20 {
        let v = r.random_range(1..=50);
        let d = r.random_range(1..=50);
        let n = r.random_range(5..=80);
        let lambda = 10f64.powf(r.random_range(-2.0..1.0));
        let x = random_rows(&mut r, n, v);
        let z = random_rows(&mut r, n, d);
        let model = ridge_fit(&Mat::from_rows(&x).unwrap(), &Mat::from_rows(&z).unwrap(), lambda).unwrap();
        let (w, b) = normal_equation_oracle(&x, &z, lambda);
        let mut err: f64 = 0.0;
        for a in 0..v {
            for c in 0..d {
                err = err.max((model.weights().get(a, c) - w[a][c]).abs());
            }
        }
        for c in 0..d {
            err = err.max((model.intercept()[c] - b[c]).abs());
        }
        rep.check(err <= 1e-8, format!("instance {inst} (n={n}, V={v}, D={d}): {err:e}"));
    }

    let x = random_rows(&mut r, 12, 11);
    let z = random_rows(&mut r, 12, 5);
    let xm = Mat::from_rows(&x).unwrap();
    let model = ridge_fit(&xm, &Mat::from_rows(&z).unwrap(), 0.0).unwrap();
    let mut err: f64 = 0.0;
    for (row, target) in x.iter().zip(&z) {
        let p = ridge_predict(&model, row).unwrap();
        for (a, b) in p.iter().zip(target) {
            err = err.max((a - b).abs());
        }
    }
    rep.check(err <= 1e-8, format!("lambda = 0 interpolation: {err:e}"));

    let x = Mat::from_rows(&random_rows(&mut r, 40, 20)).unwrap();
    let z = Mat::from_rows(&random_rows(&mut r, 40, 6)).unwrap();
    let mut grid = vec![0.0];
    grid.extend(default_lambda_grid());
    grid.push(1e6);
    let norms: Vec<f64> = grid
        .iter()
        .map(|&l| ridge_fit(&x, &z, l).unwrap().weights().frobenius_norm())
        .collect();
    rep.check(
        norms.windows(2).all(|p| p[1] < p[0]),
        format!("shrinkage not monotone: {norms:?}"),
    );
}

// ---------------------------------------------------------------- criterion 4

fn alpha_checks(rep: &mut Report, alpha: &[f64], profile: &[f64], label: &str) {
    let n = alpha.len();
    for (i, (&a, &g)) in alpha.iter().zip(profile).enumerate() {
        if g > 0.0 {
            rep.check(a > 0.7, format!("{label}: signal band {i} alpha {a:.4}"));
        } else {
            rep.check(a < 0.3, format!("{label}: zero band {i} alpha {a:.4}"));
        }
    }
    let q = n.div_ceil(4);
    let low = alpha[..q].iter().sum::<f64>() / q as f64;
    let top = alpha[n - q..].iter().sum::<f64>() / q as f64;
    rep.check(low > top, format!("{label}: low mean {low:.4} <= top mean {top:.4}"));
}

fn recovery_suite(rep: &mut Report) {
    let synth = SynthConfig::default();
    let stage1 = Stage1Config::default();
    rep.check(stage1.n_bands == 16 && stage1.epochs <= 300, "default config is not N=16, <= 300 epochs");
    rep.check(synth.shape() == Shape::new(3, 64, 64) && synth.noise_sigma == 0.1, "synth shape/noise");
    let profile: Vec<f64> = (0..16).map(|i| if i < 4 { 1.0 } else { 0.0 }).collect();
    rep.check(synth.gt_profile == profile, "gt_profile is not the lowest ceil(N/4) bands");

    let data = generate::<f64>(&synth).unwrap();
    let encoder = EncoderConfig::default().build::<f64>(synth.shape()).unwrap();
    let out = train_stage1(&data.images, &data.voxels, encoder.as_ref(), &stage1).unwrap();
    rep.check(
        (out.n_train, out.n_heldout) == (512, 128),
        format!("split {}/{}", out.n_train, out.n_heldout),
    );
    let alpha = pass_through_rates(&out.gate);
    alpha_checks(rep, &alpha, &profile, "recovery");
    let r = &out.log.records;
    rep.check(
        r.last().unwrap().loss_train < r[0].loss_train,
        "training loss did not decrease",
    );
}

// ---------------------------------------------------------------- criterion 5

fn diffusion_suite(rep: &mut Report) {
    let sched = make_schedule::<f64>(DEFAULT_STEPS, DEFAULT_RETENTION_START, DEFAULT_RETENTION_END).unwrap();
    rep.check(sched.steps() == 50, "schedule length");
    let mut r = rng(50);

    for t in [1, 10, 37, 50] {
        let z0: Vec<f64> = (0..64).map(|_| gauss(&mut r)).collect();
        let noise: Vec<f64> = (0..64).map(|_| gauss(&mut r)).collect();
        let zt = forward_noise(&z0, t, &sched, &noise).unwrap();
        let oracle = OraclePredictor { noise: noise.clone() };
        let back = reverse_denoise(&zt, t, &oracle, &[], &sched).unwrap();
        let err = back.z0.iter().zip(&z0).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        rep.check(err <= 1e-6, format!("oracle round trip t={t}: {err:e}"));
        rep.check(back.steps == t, format!("round trip t={t} took {} steps", back.steps));
    }

    for t in [1, 25, 37, 50] {
        let draws = 100_000;
        let mut sum = 0.0;
        let mut sq = 0.0;
        for _ in 0..draws {
            let z = forward_noise(&[gauss(&mut r)], t, &sched, &[gauss(&mut r)]).unwrap()[0];
            sum += z;
            sq += z * z;
        }
        let mean = sum / draws as f64;
        let var = sq / draws as f64 - mean * mean;
        rep.check((var - 1.0).abs() < 0.05, format!("variance at t={t}: {var:.4}"));
    }

    let dim = 64;
    let draws = 10_000;
    let mut total = 0.0;
    for i in 0..draws {
        let z0: Vec<f64> = (0..dim).map(|_| gauss(&mut r)).collect();
        let noise: Vec<f64> = (0..dim).map(|_| gauss(&mut r)).collect();
        let t = 1 + i % 50;
        total += noise_prediction_loss(&ZeroPredictor, &z0, t, &[], &sched, &noise).unwrap();
    }
    let mean = total / draws as f64;
    rep.check(
        (mean - dim as f64).abs() < 0.05 * dim as f64,
        format!("zero-predictor loss {mean:.3} vs {dim}"),
    );

    let z: Vec<f64> = (0..dim).map(|_| gauss(&mut r)).collect();
    let out = reverse_denoise(&z, DEFAULT_T_INIT, &ZeroPredictor, &[], &sched).unwrap();
    rep.check(
        DEFAULT_T_INIT == 37 && out.steps == 37,
        format!("reverse loop ran {} steps", out.steps),
    );
}

// ---------------------------------------------------------------- criterion 6

fn pearson_oracle(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len() as f64;
    let ma = a.iter().sum::<f64>() / n;
    let mb = b.iter().sum::<f64>() / n;
    let mut cov = 0.0;
    let mut va = 0.0;
    let mut vb = 0.0;
    for i in 0..a.len() {
        cov += (a[i] - ma) * (b[i] - mb);
        va += (a[i] - ma).powi(2);
        vb += (b[i] - mb).powi(2);
    }
    cov / (va * vb).sqrt()
}

fn metrics_suite(rep: &mut Report) {
    let shape = Shape::new(3, 32, 32);
    for seed in 60..65 {
        let a = random_image(shape, seed);
        let b = random_image(shape, seed + 100).map(|v| 0.3 * v + 0.7 * 0.5);
        let b = ImageTensor::from_fn(shape, |c, y, x| 0.5 * a.get(c, y, x) + b.get(c, y, x));

        let pa = pixcorr(&a, &a).unwrap().unwrap();
        rep.check((pa - 1.0).abs() < 1e-12, format!("pixcorr identity {pa}"));
        let sa = ssim(&a, &a).unwrap();
        rep.check((sa - 1.0).abs() < 1e-12, format!("ssim identity {sa}"));
        let neg = pixcorr(&a, &a.map(|v| 1.0 - v)).unwrap().unwrap();
        rep.check((neg + 1.0).abs() < 1e-12, format!("pixcorr anti-correlation {neg}"));

        let base = pixcorr(&a, &b).unwrap().unwrap();
        for (c, d) in [(2.5, -1.0), (0.01, 3.0), (1e3, 0.0)] {
            let moved = pixcorr(&a, &b.map(|v| c * v + d)).unwrap().unwrap();
            rep.check((moved - base).abs() < 1e-10, format!("scale/shift c={c} d={d}: {moved} vs {base}"));
        }
        let oracle = pearson_oracle(a.data(), b.data());
        rep.check((base - oracle).abs() <= 1e-10, format!("pixcorr oracle: {base} vs {oracle}"));
    }
}

// ---------------------------------------------------------------- criterion 7

fn run_pipeline(root: &Path) {
    std::fs::create_dir_all(root).unwrap();
    let config = root.join("experiment.json");
    std::fs::write(&config, "{\"dataset\": \"data\"}\n").unwrap();
    pipeline::synth_data(&config, &root.join("data")).unwrap();
    pipeline::train(&config, &root.join("run")).unwrap();
    pipeline::export_weights(&root.join("run").join(pipeline::GATE_FILE), &root.join("alpha.csv")).unwrap();
}

fn determinism_suite(rep: &mut Report) {
    let dir = tempfile::tempdir().unwrap();
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    run_pipeline(&a);
    run_pipeline(&b);
    for file in [
        "data/images.bin",
        "data/voxels.bin",
        "run/trajectory.csv",
        "run/gate.json",
        "run/ridge.bin",
        "run/ridge.json",
        "run/summary.json",
        "alpha.csv",
    ] {
        let x = std::fs::read(a.join(file)).unwrap();
        let y = std::fs::read(b.join(file)).unwrap();
        rep.check(!x.is_empty() && x == y, format!("{file} differs between runs"));
    }
    let csv = std::fs::read_to_string(a.join("alpha.csv")).unwrap();
    let alpha: Vec<f64> = csv
        .lines()
        .skip(1)
        .map(|l| l.rsplit(',').next().unwrap().parse().unwrap())
        .collect();
    let profile: Vec<f64> = (0..16).map(|i| if i < 4 { 1.0 } else { 0.0 }).collect();
    alpha_checks(rep, &alpha, &profile, "pipeline export");
}

// ---------------------------------------------------------------- driver

type Suite = fn(&mut Report);

fn main() {
    let criteria: [(&str, Suite, Duration); 7] = [
        ("spectral oracle suite", spectral_suite, Duration::from_secs(10)),
        ("fusion/gradient suite", gate_suite, Duration::from_secs(30)),
        ("ridge oracle suite", ridge_suite, Duration::from_secs(10)),
        ("gate recovery experiment", recovery_suite, Duration::from_secs(600)),
        ("diffusion suite", diffusion_suite, Duration::from_secs(60)),
        ("metrics suite", metrics_suite, Duration::from_secs(10)),
        ("determinism", determinism_suite, Duration::from_secs(600)),
    ];
    let filter: Vec<String> = std::env::args().skip(1).filter(|a| !a.starts_with('-')).collect();
    let mut failed = 0;
    for (i, (name, suite, budget)) in criteria.iter().enumerate() {
        let label = format!("criterion {} ({name})", i + 1);
        if !filter.is_empty() && !filter.iter().any(|f| label.contains(f.as_str())) {
            continue;
        }
        let start = Instant::now();
        let mut rep = Report(Vec::new());
        let outcome = catch_unwind(AssertUnwindSafe(|| suite(&mut rep)));
        let elapsed = start.elapsed();
        if outcome.is_err() {
            rep.0.push("panicked".into());
        }
        if elapsed > *budget {
            rep.0.push(format!("took {elapsed:.1?}, budget {budget:?}"));
        }
        if rep.0.is_empty() {
            println!("PASS {label} [{elapsed:.2?}]");
        } else {
            failed += 1;
            println!("FAIL {label} [{elapsed:.2?}]: {}", rep.0.join("; "));
        }
    }
    if failed > 0 {
        println!("acceptance: {failed} criterion(s) failed");
        std::process::exit(1);
    }
    println!("acceptance: all criteria passed");
}
