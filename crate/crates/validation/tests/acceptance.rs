//! End-to-end acceptance checks. Prints one PASS/FAIL line per criterion and
//! exits nonzero if any criterion fails.
//!
//! MNIST is read from `OPENHYBRID_MNIST_DIR`, else `<workspace>/data/mnist`.

use std::path::PathBuf;
use std::process::ExitCode;
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use openhybrid::autodiff::grad_check_many;
use openhybrid::data::idx::{self, IdxArray};
use openhybrid::data::{gen_gaussian_mixture, LabeledDataset};
use openhybrid::flow::FlowStack;
use openhybrid::metrics::{auroc, f_score_macro, openness};
use openhybrid::model::{Architecture, ModelParams, Regime};
use openhybrid::net::{Activation, Parameterized};
use openhybrid::protocol::{run_partitions, Aggregate, PartitionRun, Protocol};
use openhybrid::{Error, Tensor, TrainConfig};

mod common;
use common::fit_flow;

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: String) -> Outcome {
    Outcome { pass, detail }
}

fn gaussian(rng: &mut ChaCha8Rng, n: usize, d: usize, scale: f64) -> Tensor {
    Tensor::new(vec![n, d], (0..n * d).map(|_| scale * rng.sample::<f64, _>(StandardNormal)).collect()).unwrap()
}

fn perturb(params: Vec<&mut Tensor>, rng: &mut ChaCha8Rng, scale: f64) {
    for p in params {
        for v in p.data_mut() {
            *v += scale * rng.sample::<f64, _>(StandardNormal);
        }
    }
}

fn gradient_suite() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(101);
    let mut worst: f64 = 0.0;
    for trial in 0..20 {
        let regime = Regime::ALL[trial % 4];
        let input_dim = rng.random_range(2..=5);
        let classes = rng.random_range(2..=4);
        let latent = if regime.uses_encoder() { rng.random_range(2..=8) } else { input_dim };
        // Smooth activations only: central differences straddling a ReLU kink
        // measure the kink, not the gradient.
        let activation = if rng.random_bool(0.5) { Activation::Tanh } else { Activation::Identity };
        let arch = Architecture {
            input_dim,
            classes,
            latent_dim: latent,
            encoder_hidden: vec![rng.random_range(2..=6)],
            activation,
            classifier_hidden: if rng.random_bool(0.5) { vec![] } else { vec![rng.random_range(2..=5)] },
            flow_pairs: rng.random_range(1..=3),
            flow_hidden: rng.random_range(2..=6),
        };
        let mut model = ModelParams::new(&arch, regime, trial as u64).unwrap();
        let warm = gaussian(&mut rng, 32, input_dim, 1.0);
        model.flow.initialize(&model.features(&warm).unwrap()).unwrap();
        perturb(model.parameters_mut(), &mut rng, 0.3);

        let batch = rng.random_range(1..=4);
        let x = gaussian(&mut rng, batch, input_dim, 1.0);
        let labels: Vec<usize> = (0..batch).map(|_| rng.random_range(0..classes)).collect();
        let lambda = rng.random_range(0.0..2.0);
        let thetas: Vec<Tensor> = model.parameters().into_iter().cloned().collect();
        let err = grad_check_many(
            |g, ids| {
                let xi = g.constant(x.clone());
                Ok::<_, Error>(model.full_loss_bound(g, ids, xi, &labels, lambda)?.total)
            },
            &thetas,
            1e-5,
        )
        .unwrap();
        worst = worst.max(err);
    }
    outcome(worst < 1e-4, format!("max relative error {worst:.2e} over 20 configurations"))
}

/// log |det A| by Gaussian elimination with partial pivoting.
fn log_abs_det(mut a: Vec<Vec<f64>>) -> f64 {
    let n = a.len();
    let mut acc = 0.0;
    for c in 0..n {
        let p = (c..n).max_by(|&i, &j| a[i][c].abs().total_cmp(&a[j][c].abs())).unwrap();
        a.swap(c, p);
        let pivot = a[c][c];
        acc += pivot.abs().ln();
        let (top, rest) = a.split_at_mut(c + 1);
        for row in rest {
            let f = row[c] / pivot;
            for (x, &p) in row[c..].iter_mut().zip(&top[c][c..]) {
                *x -= f * p;
            }
        }
    }
    acc
}

fn flow_exactness() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(202);
    let h = 1e-6;
    let mut worst_det: f64 = 0.0;
    for _ in 0..100 {
        let d = rng.random_range(2..=8);
        let (pairs, hidden) = (rng.random_range(1..=4), rng.random_range(2..=8));
        let mut flow = FlowStack::new(&mut rng, d, pairs, hidden).unwrap();
        flow.initialize(&gaussian(&mut rng, 64, d, 2.0)).unwrap();
        perturb(flow.parameters_mut(), &mut rng, 0.3);
        let x = gaussian(&mut rng, 1, d, 1.0);
        let analytic = flow.forward(&x).unwrap().log_det.item();
        let mut jac = vec![vec![0.0; d]; d];
        for j in 0..d {
            let mut up = x.clone();
            up.data_mut()[j] += h;
            let mut down = x.clone();
            down.data_mut()[j] -= h;
            let zu = flow.forward(&up).unwrap().z;
            let zd = flow.forward(&down).unwrap().z;
            for (i, row) in jac.iter_mut().enumerate() {
                row[j] = (zu.data()[i] - zd.data()[i]) / (2.0 * h);
            }
        }
        let numeric = log_abs_det(jac);
        worst_det = worst_det.max((analytic - numeric).abs() / numeric.abs().max(1.0));
    }

    let mut flow = FlowStack::new(&mut rng, 8, 4, 8).unwrap();
    flow.initialize(&gaussian(&mut rng, 64, 8, 2.0)).unwrap();
    perturb(flow.parameters_mut(), &mut rng, 0.3);
    let x = gaussian(&mut rng, 1000, 8, 1.5);
    let back = flow.inverse(&flow.forward(&x).unwrap().z).unwrap();
    let round_trip = x.sub(&back).unwrap().data().iter().fold(0.0f64, |m, v| m.max(v.abs()));
    outcome(
        worst_det < 1e-4 && round_trip < 1e-9,
        format!("log-det relative error {worst_det:.2e} (100 draws), round-trip error {round_trip:.2e} (1000 points)"),
    )
}

fn normalization() -> Outcome {
    let ds = gen_gaussian_mixture(150, 3, 2, 0.4, 7).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(303);
    let mut flow = FlowStack::new(&mut rng, 2, 4, 32).unwrap();
    fit_flow(&mut flow, &ds.features, 1500, 5e-3);

    // The box spans 200k flow samples; an independent draw checks its coverage.
    let samples = flow.sample(200_000, 11).unwrap();
    let (mut lo, mut hi) = ([f64::INFINITY; 2], [f64::NEG_INFINITY; 2]);
    for i in 0..samples.rows() {
        for j in 0..2 {
            lo[j] = lo[j].min(samples.get2(i, j));
            hi[j] = hi[j].max(samples.get2(i, j));
        }
    }
    let check = flow.sample(200_000, 12).unwrap();
    let inside = (0..check.rows())
        .filter(|&i| (0..2).all(|j| (lo[j]..=hi[j]).contains(&check.get2(i, j))))
        .count() as f64
        / check.rows() as f64;

    let n = 800;
    let (dx, dy) = ((hi[0] - lo[0]) / n as f64, (hi[1] - lo[1]) / n as f64);
    let mut grid = Vec::with_capacity(2 * n * n);
    for a in 0..n {
        for b in 0..n {
            grid.push(lo[0] + (a as f64 + 0.5) * dx);
            grid.push(lo[1] + (b as f64 + 0.5) * dy);
        }
    }
    let grid = Tensor::new(vec![n * n, 2], grid).unwrap();
    let mass: f64 = flow.log_prob(&grid).unwrap().data().iter().map(|lp| lp.exp()).sum::<f64>() * dx * dy;
    let nll = flow.nll_bits_per_dim(&ds.features).unwrap();
    outcome(
        inside >= 0.999 && (mass - 1.0).abs() <= 0.02,
        format!(
            "integral {mass:.4} over [{:.1}, {:.1}] x [{:.1}, {:.1}] holding {:.3}% of an independent sample; fit {nll:.3} bits/dim",
            lo[0],
            hi[0],
            lo[1],
            hi[1],
            100.0 * inside
        ),
    )
}

fn openness_values() -> Outcome {
    let cases = [((6, 10), 22.54), ((4, 14), 46.54), ((4, 54), 72.78), ((20, 200), 68.37)];
    let mut worst: f64 = 0.0;
    let mut parts = Vec::new();
    for ((k, t), expected) in cases {
        let v = 100.0 * openness(k, t).unwrap();
        worst = worst.max((v - expected).abs());
        parts.push(format!("({k},{t})={v:.4}%"));
    }
    outcome(worst <= 0.01, format!("{} max deviation {worst:.4} points", parts.join(" ")))
}

struct Benchmark {
    joint: (Aggregate, Vec<PartitionRun>),
    pretrained: (Aggregate, Vec<PartitionRun>),
    softmax: Aggregate,
    raw: Aggregate,
    elapsed: Duration,
}

fn synthetic_benchmark() -> Benchmark {
    let start = Instant::now();
    let ds = gen_gaussian_mixture(200, 10, 2, 0.5, 0).unwrap();
    let threads = std::thread::available_parallelism().map(|n| n.get()).unwrap_or(1);
    let run = |regime: Regime| {
        let protocol = Protocol {
            k_known: 6,
            seeds: (0..5).collect(),
            arch: Architecture::small(2, 6),
            train: TrainConfig { regime, ..TrainConfig::default() },
            s: 0.0,
        };
        run_partitions(&ds, &protocol, threads).unwrap()
    };
    let joint = run(Regime::Joint);
    let pretrained = run(Regime::PretrainedEncoder);
    let softmax = run(Regime::SoftmaxOnly).0;
    let raw = run(Regime::RawInputFlow).0;
    Benchmark {
        joint,
        pretrained,
        softmax,
        raw,
        elapsed: start.elapsed(),
    }
}

fn per_seed(runs: &[PartitionRun], f: impl Fn(&PartitionRun) -> f64) -> String {
    runs.iter().map(|r| format!("{:.3}", f(r))).collect::<Vec<_>>().join(" ")
}

fn benchmark_margins(b: &Benchmark) -> Outcome {
    let j = b.joint.0.auroc.0;
    let (s, r) = (b.softmax.auroc.0, b.raw.auroc.0);
    outcome(
        j >= 0.95 && j - s >= 0.05 && j - r >= 0.05 && b.elapsed < Duration::from_secs(600),
        format!(
            "AUROC joint {j:.4} (per seed {}), softmax {s:.4}, raw-input flow {r:.4}; all regimes {:.0}s",
            per_seed(&b.joint.1, |r| r.evaluation.report.auroc),
            b.elapsed.as_secs_f64()
        ),
    )
}

fn ablation_direction(b: &Benchmark) -> Outcome {
    let (j, p) = (&b.joint.0, &b.pretrained.0);
    outcome(
        j.auroc.0 >= p.auroc.0 && j.f_score_macro.0 >= p.f_score_macro.0,
        format!(
            "mean over 5 partitions: AUROC joint {:.4} vs pretrained {:.4}, macro F {:.4} vs {:.4}; per-seed AUROC joint [{}] pretrained [{}]",
            j.auroc.0,
            p.auroc.0,
            j.f_score_macro.0,
            p.f_score_macro.0,
            per_seed(&b.joint.1, |r| r.evaluation.report.auroc),
            per_seed(&b.pretrained.1, |r| r.evaluation.report.auroc),
        ),
    )
}

fn quantile(sorted: &[f64], q: f64) -> f64 {
    let pos = q * (sorted.len() - 1) as f64;
    let (i, frac) = (pos.floor() as usize, pos.fract());
    if i + 1 < sorted.len() {
        sorted[i] + frac * (sorted[i + 1] - sorted[i])
    } else {
        sorted[i]
    }
}

fn histogram_separation(b: &Benchmark) -> Outcome {
    let mut medians_ok = true;
    let mut gaps = Vec::new();
    for run in &b.joint.1 {
        let k = run.spec.k();
        let lp = &run.evaluation.test_scores.log_prob;
        let mut known: Vec<f64> = (0..lp.len()).filter(|&i| run.test.labels[i] != k).map(|i| lp[i]).collect();
        let mut unknown: Vec<f64> = (0..lp.len()).filter(|&i| run.test.labels[i] == k).map(|i| lp[i]).collect();
        known.sort_by(f64::total_cmp);
        unknown.sort_by(f64::total_cmp);
        let (med, p5) = (quantile(&unknown, 0.5), quantile(&known, 0.05));
        medians_ok &= med < p5;
        gaps.push(format!("{:.2}<{:.2}", med, p5));
    }
    let overlap = |runs: &[PartitionRun]| -> Vec<f64> {
        runs.iter().map(|r| r.evaluation.overlap(&r.test, r.spec.k())).collect()
    };
    let (oj, op) = (overlap(&b.joint.1), overlap(&b.pretrained.1));
    let overlap_ok = oj.iter().zip(&op).all(|(a, b)| a < b);
    let fmt = |v: &[f64]| v.iter().map(|x| format!("{x:.3}")).collect::<Vec<_>>().join(" ");
    outcome(
        medians_ok && overlap_ok,
        format!(
            "unknown median vs known 5th percentile [{}]; overlap joint [{}] vs pretrained [{}]",
            gaps.join(" "),
            fmt(&oj),
            fmt(&op)
        ),
    )
}

fn mnist_dir() -> PathBuf {
    std::env::var_os("OPENHYBRID_MNIST_DIR")
        .map(PathBuf::from)
        .unwrap_or_else(|| PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../data/mnist"))
}

fn mnist() -> Outcome {
    let start = Instant::now();
    let dir = mnist_dir();
    let images = dir.join("train-images-idx3-ubyte");
    let labels = dir.join("train-labels-idx1-ubyte");
    let ds: LabeledDataset = match idx::load_idx(&images, &labels) {
        Ok(ds) => ds.subset_per_class(1000),
        Err(e) => return outcome(false, format!("MNIST not available in {}: {e}", dir.display())),
    };
    let protocol = Protocol {
        k_known: 6,
        seeds: vec![0],
        arch: Architecture::image(784, 6),
        train: TrainConfig::default(),
        s: 0.0,
    };
    let threads = std::thread::available_parallelism().map(|n| n.get()).unwrap_or(1);
    let (agg, _) = run_partitions(&ds, &protocol, threads).unwrap();
    let elapsed = start.elapsed();
    outcome(
        agg.auroc.0 >= 0.90 && elapsed < Duration::from_secs(1200),
        format!(
            "joint AUROC {:.4}, macro F {:.4} ({} samples, {:.0}s)",
            agg.auroc.0,
            agg.f_score_macro.0,
            ds.len(),
            elapsed.as_secs_f64()
        ),
    )
}

fn metric_oracles() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(909);
    let mut auroc_ok = true;
    for _ in 0..100 {
        let n1 = rng.random_range(1..=25);
        let n0 = rng.random_range(1..=25);
        let levels = rng.random_range(2..=20);
        let k: Vec<f64> = (0..n1).map(|_| rng.random_range(0..levels) as f64 / 4.0).collect();
        let u: Vec<f64> = (0..n0).map(|_| rng.random_range(0..levels) as f64 / 4.0).collect();
        let mut wins = 0.0;
        for &a in &k {
            for &b in &u {
                wins += if a > b { 1.0 } else if a == b { 0.5 } else { 0.0 };
            }
        }
        auroc_ok &= auroc(&k, &u).unwrap() == wins / (n1 * n0) as f64;
    }

    let mut worst_f: f64 = 0.0;
    for _ in 0..20 {
        let classes = rng.random_range(2..=7);
        let n = rng.random_range(1..=60);
        let truths: Vec<usize> = (0..n).map(|_| rng.random_range(0..classes)).collect();
        let preds: Vec<usize> = (0..n).map(|_| rng.random_range(0..classes)).collect();
        let mut confusion = vec![vec![0usize; classes]; classes];
        for (&t, &p) in truths.iter().zip(&preds) {
            confusion[t][p] += 1;
        }
        let mut f_sum = 0.0;
        let mut present = 0;
        for c in 0..classes {
            let tp = confusion[c][c] as f64;
            let actual: usize = confusion[c].iter().sum();
            let predicted: usize = confusion.iter().map(|row| row[c]).sum();
            if actual + predicted == 0 {
                continue;
            }
            present += 1;
            f_sum += 2.0 * tp / (actual + predicted) as f64;
        }
        let oracle = f_sum / present as f64;
        worst_f = worst_f.max((f_score_macro(&preds, &truths).unwrap() - oracle).abs());
    }
    outcome(
        auroc_ok && worst_f < 1e-12,
        format!("AUROC exact on 100 sets: {auroc_ok}; F-score max deviation {worst_f:.1e} on 20 sets"),
    )
}

fn idx_code(bytes: &[u8]) -> Option<&'static str> {
    idx::parse(bytes).err().map(|e| e.code())
}

fn idx_round_trip() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(1010);
    let dir = tempfile::tempdir().unwrap();
    let mut exact = true;
    for t in 0..10 {
        let rank = rng.random_range(1..=3);
        let dims: Vec<usize> = (0..rank).map(|_| rng.random_range(1..=12)).collect();
        let data: Vec<u8> = (0..dims.iter().product::<usize>()).map(|_| rng.random()).collect();
        let arr = IdxArray { dims, data };
        let path = dir.path().join(format!("a{t}.idx"));
        idx::write(&path, &arr).unwrap();
        let bytes = std::fs::read(&path).unwrap();
        exact &= idx::read(&path).unwrap() == arr && idx::encode(&idx::parse(&bytes).unwrap()) == bytes;
    }

    let images = IdxArray { dims: vec![3, 2, 2], data: (0..12).collect() };
    let labels = IdxArray { dims: vec![2], data: vec![0, 1] };
    let good = idx::encode(&images);
    let mut bad_magic = good.clone();
    bad_magic[0] = 1;
    let mut bad_type = good.clone();
    bad_type[2] = 0x0D;
    let count = match idx::to_dataset(&images, &labels) {
        Err(Error::Idx(e)) => Some(e.code()),
        _ => None,
    };
    let rank = match idx::to_dataset(&images, &images) {
        Err(Error::Idx(e)) => Some(e.code()),
        _ => None,
    };
    let codes = [
        (idx_code(&bad_magic), "IDX_BAD_MAGIC"),
        (idx_code(&bad_type), "IDX_UNSUPPORTED_TYPE"),
        (idx_code(&good[..10]), "IDX_TRUNCATED"),
        (idx_code(&good[..2]), "IDX_TRUNCATED"),
        (idx_code(&[good.as_slice(), &[0]].concat()), "IDX_TRAILING_BYTES"),
        (count, "IDX_COUNT_MISMATCH"),
        (rank, "IDX_BAD_RANK"),
    ];
    let codes_ok = codes.iter().all(|(got, want)| *got == Some(*want));
    outcome(
        exact && codes_ok,
        format!("bit-exact round trip: {exact}; {}/{} malformed inputs rejected with the right code", codes.iter().filter(|(g, w)| *g == Some(*w)).count(), codes.len()),
    )
}

fn report(failures: &mut usize, number: usize, name: &str, f: impl FnOnce() -> Outcome) {
    let start = Instant::now();
    let o = f();
    if !o.pass {
        *failures += 1;
    }
    println!(
        "criterion {number:>2} {} {name}: {} [{:.1}s]",
        if o.pass { "PASS" } else { "FAIL" },
        o.detail,
        start.elapsed().as_secs_f64()
    );
}

fn main() -> ExitCode {
    if std::env::args().any(|a| a == "--list") {
        return ExitCode::SUCCESS;
    }
    let mut failures = 0;
    report(&mut failures, 1, "gradient suite", gradient_suite);
    report(&mut failures, 2, "flow exactness", flow_exactness);
    report(&mut failures, 3, "density normalization", normalization);
    report(&mut failures, 4, "openness", openness_values);
    let bench = synthetic_benchmark();
    report(&mut failures, 5, "synthetic benchmark", || benchmark_margins(&bench));
    report(&mut failures, 6, "joint vs pretrained encoder", || ablation_direction(&bench));
    report(&mut failures, 7, "scaled-down MNIST", mnist);
    report(&mut failures, 8, "log-likelihood separation", || histogram_separation(&bench));
    report(&mut failures, 9, "metric oracles", metric_oracles);
    report(&mut failures, 10, "IDX round trip", idx_round_trip);
    println!("{} of 10 criteria passed", 10 - failures);
    if failures == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
