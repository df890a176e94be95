//! Acceptance suite: one line per criterion, non-zero exit if any fails.
//!
//! Every oracle below is written here, independently of the library code it
//! checks. Tolerances are pinned in the constants at the top.

use std::path::Path;
use std::process::Command;
use std::time::{Duration, Instant};

use aaaseg::anmetrics::{dice, jaccard, mann_whitney_u, minimum_enclosing_circle};
use aaaseg::gradsuite::{run_gradient_suite, Precision};
use aaaseg::hed3d::{train, weighted_dice_loss, Hed3DConfig, Hed3DNet, TrainConfig};
use aaaseg::nnengine::{conv3d, conv_transpose3d, Tensor};
use aaaseg::phantom::{generate_phantom, PhantomSpec};
use aaaseg::postseg::{otsu_cut, otsu_threshold, postprocess};
use aaaseg::prep::{to_sample, window_level, DEFAULT_WINDOW_CENTER, DEFAULT_WINDOW_WIDTH};
use aaaseg::volcore::{BinaryMask3D, Geometry, Volume3D};
use aaaseg::volio::{
    decode_checkpoint, encode_checkpoint, parse_report, read_mask, read_volume, write_mask, write_volume,
    ElementType, IoError,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const GRAD_F64_TOL: f64 = 1e-5;
const GRAD_F32_TOL: f64 = 1e-3;
const GRAD_SEEDS: usize = 20;
const GRAD_BUDGET: Duration = Duration::from_secs(120);

const CONV_INSTANCES: usize = 50;
const CONV_TOL: f64 = 1e-5;

const ADJOINT_INSTANCES: usize = 20;
const ADJOINT_TOL: f64 = 1e-9;

const OTSU_HISTOGRAMS: usize = 20;

const MEC_SETS: usize = 100;
const MEC_MAX_POINTS: usize = 50;
const MEC_TOL: f64 = 1e-9;
const MEC_BUDGET: Duration = Duration::from_secs(60);

const METRIC_PAIRS: usize = 200;
const METRIC_TOL: f64 = 1e-12;

const MW_MAX_POOLED: usize = 8;
const MW_TOL: f64 = 1e-12;

const LOSS_TOL: f64 = 1e-6;

const OVERFIT_EPOCHS: usize = 200;
const OVERFIT_LR: f64 = 1e-4;
const OVERFIT_MIN_DICE: f64 = 0.95;
const OVERFIT_BUDGET: Duration = Duration::from_secs(30 * 60);

const GEN_TRAIN_CASES: usize = 20;
const GEN_TEST_CASES: usize = 8;
const GEN_EPOCHS: usize = 20;
const GEN_LR: f64 = 1e-3;
const GEN_CROPS: usize = 1;
const GEN_TRANSFORMS: usize = 4;
const GEN_MIN_DICE: f64 = 0.80;
const GEN_MAX_DIAM_ERR_MM: f64 = 2.0;
const GEN_MAX_REL_VOL_DIFF: f64 = 0.15;
const GEN_BUDGET: Duration = Duration::from_secs(4 * 3600);

struct Outcome {
    id: u32,
    name: &'static str,
    passed: bool,
    detail: String,
}

fn bin() -> &'static str {
    env!("CARGO_BIN_EXE_aaaseg")
}

fn aaaseg(args: &[&str], cwd: &Path) -> std::process::Output {
    let out = Command::new(bin()).args(args).current_dir(cwd).output().expect("spawn aaaseg");
    if !out.status.success() {
        eprintln!("aaaseg {args:?} failed:\n{}", String::from_utf8_lossy(&out.stderr));
    }
    out
}

fn rand_tensor(rng: &mut ChaCha8Rng, shape: [usize; 5]) -> Tensor<f64> {
    Tensor::from_fn(shape, |_| rng.gen_range(-1.0..1.0))
}

// ---------------------------------------------------------------------------

fn c1_gradients() -> Outcome {
    let t = Instant::now();
    let rows = run_gradient_suite(0, GRAD_SEEDS).expect("gradient suite runs");
    let elapsed = t.elapsed();
    let worst = |p: Precision| {
        rows.iter()
            .filter(|r| r.precision == p)
            .map(|r| r.max_rel_error)
            .fold(0.0, f64::max)
    };
    let (w64, w32) = (worst(Precision::F64), worst(Precision::F32));
    let failing: Vec<String> = rows
        .iter()
        .filter(|r| r.instances < GRAD_SEEDS || r.max_rel_error >= r.tolerance)
        .map(|r| format!("{}/{}", r.op, r.precision))
        .collect();
    let ops: std::collections::BTreeSet<&str> = rows.iter().map(|r| r.op).collect();
    let passed = failing.is_empty() && w64 < GRAD_F64_TOL && w32 < GRAD_F32_TOL && elapsed < GRAD_BUDGET && ops.len() == 7;
    Outcome {
        id: 1,
        name: "gradient suite",
        passed,
        detail: format!(
            "{} ops x {GRAD_SEEDS} seeds; worst f64 {w64:.2e} (< {GRAD_F64_TOL:e}), worst f32 {w32:.2e} (< {GRAD_F32_TOL:e}); {:.1}s (< {}s){}",
            ops.len(),
            elapsed.as_secs_f64(),
            GRAD_BUDGET.as_secs(),
            if failing.is_empty() { String::new() } else { format!("; failing {failing:?}") }
        ),
    }
}

/// Six nested loops over output voxels and kernel taps, in f64.
fn naive_conv(x: &Tensor<f32>, w: &Tensor<f32>, b: &[f32], stride: usize, pad: usize) -> Vec<f64> {
    let [n, cin, d, h, wd] = x.shape();
    let [cout, _, kd, kh, kw] = w.shape();
    let od = (d + 2 * pad - kd) / stride + 1;
    let oh = (h + 2 * pad - kh) / stride + 1;
    let ow = (wd + 2 * pad - kw) / stride + 1;
    let mut out = Vec::with_capacity(n * cout * od * oh * ow);
    for bi in 0..n {
        for co in 0..cout {
            for z in 0..od {
                for y in 0..oh {
                    for xo in 0..ow {
                        let mut acc = b[co] as f64;
                        for ci in 0..cin {
                            for a in 0..kd {
                                for bb in 0..kh {
                                    for c in 0..kw {
                                        let iz = (z * stride + a) as isize - pad as isize;
                                        let iy = (y * stride + bb) as isize - pad as isize;
                                        let ix = (xo * stride + c) as isize - pad as isize;
                                        if iz < 0 || iy < 0 || ix < 0 {
                                            continue;
                                        }
                                        let (iz, iy, ix) = (iz as usize, iy as usize, ix as usize);
                                        if iz >= d || iy >= h || ix >= wd {
                                            continue;
                                        }
                                        acc += x.get([bi, ci, iz, iy, ix]) as f64 * w.get([co, ci, a, bb, c]) as f64;
                                    }
                                }
                            }
                        }
                        out.push(acc);
                    }
                }
            }
        }
    }
    out
}

fn c2_conv_oracle() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut worst = 0.0f64;
    let mut done = 0;
    while done < CONV_INSTANCES {
        let k = [rng.gen_range(1..=3), rng.gen_range(1..=3), rng.gen_range(1..=3)];
        let (stride, pad) = (rng.gen_range(1..=3), rng.gen_range(0..=2));
        let s = [rng.gen_range(1..=9), rng.gen_range(1..=9), rng.gen_range(1..=9)];
        if (0..3).any(|a| s[a] + 2 * pad < k[a]) {
            continue;
        }
        let (n, cin, cout) = (rng.gen_range(1..=2), rng.gen_range(1..=4), rng.gen_range(1..=4));
        let x = Tensor::<f32>::from_fn([n, cin, s[0], s[1], s[2]], |_| rng.gen_range(-1.0..1.0));
        let w = Tensor::<f32>::from_fn([cout, cin, k[0], k[1], k[2]], |_| rng.gen_range(-1.0..1.0));
        let b: Vec<f32> = (0..cout).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let fast = conv3d(&x, &w, Some(&b), stride, pad).expect("valid conv");
        let slow = naive_conv(&x, &w, &b, stride, pad);
        assert_eq!(fast.len(), slow.len());
        for (f, s) in fast.data().iter().zip(&slow) {
            worst = worst.max((*f as f64 - s).abs());
        }
        done += 1;
    }
    Outcome {
        id: 2,
        name: "convolution oracle",
        passed: worst <= CONV_TOL,
        detail: format!("{CONV_INSTANCES} instances; max |fast - naive| {worst:.2e} (<= {CONV_TOL:e})"),
    }
}

fn c3_adjoint() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut worst = 0.0f64;
    let mut done = 0;
    while done < ADJOINT_INSTANCES {
        let k = [rng.gen_range(1..=4), rng.gen_range(1..=4), rng.gen_range(1..=4)];
        let (stride, pad) = (rng.gen_range(1..=3), rng.gen_range(0..=1));
        // input dims that the strided window covers exactly, so convT(y) has x's shape
        let out_dims = [rng.gen_range(1..=5), rng.gen_range(1..=5), rng.gen_range(1..=5)];
        let s: Vec<isize> = (0..3)
            .map(|a| ((out_dims[a] - 1) * stride + k[a]) as isize - 2 * pad as isize)
            .collect();
        if s.iter().any(|&v| v < 1) {
            continue;
        }
        let (n, cin, cout) = (rng.gen_range(1..=2), rng.gen_range(1..=3), rng.gen_range(1..=3));
        let x = rand_tensor(&mut rng, [n, cin, s[0] as usize, s[1] as usize, s[2] as usize]);
        let w = rand_tensor(&mut rng, [cout, cin, k[0], k[1], k[2]]);
        let cx = conv3d(&x, &w, None, stride, pad).expect("valid conv");
        let y = rand_tensor(&mut rng, cx.shape());
        let ty = conv_transpose3d(&y, &w, stride, pad).expect("valid transposed conv");
        assert_eq!(ty.shape(), x.shape());
        let (lhs, rhs) = (cx.dot(&y), x.dot(&ty));
        worst = worst.max((lhs - rhs).abs() / lhs.abs().max(1.0));
        done += 1;
    }
    Outcome {
        id: 3,
        name: "adjoint identity",
        passed: worst <= ADJOINT_TOL,
        detail: format!("{ADJOINT_INSTANCES} instances (f64); max |<conv x, y> - <x, convT y>| {worst:.2e} (<= {ADJOINT_TOL:e})"),
    }
}

/// Exhaustive search in exact rational arithmetic: the between-class
/// variance of cut `k` is proportional to `(n1 s0 - n0 s1)^2 / (n0 n1)`.
fn brute_otsu(counts: &[u64]) -> Option<usize> {
    let mut best: Option<(usize, u128, u128)> = None;
    for k in 0..counts.len() - 1 {
        let (mut n0, mut s0, mut n1, mut s1) = (0u128, 0u128, 0u128, 0u128);
        for (i, &c) in counts.iter().enumerate() {
            if i <= k {
                n0 += c as u128;
                s0 += i as u128 * c as u128;
            } else {
                n1 += c as u128;
                s1 += i as u128 * c as u128;
            }
        }
        if n0 == 0 || n1 == 0 {
            continue;
        }
        let d = (n1 * s0).abs_diff(n0 * s1);
        let (num, den) = (d * d, n0 * n1);
        if best.map_or(true, |(_, bn, bd)| num * bd > bn * den) {
            best = Some((k, num, den));
        }
    }
    best.map(|b| b.0)
}

fn c4_otsu() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut mismatches = 0;
    for _ in 0..OTSU_HISTOGRAMS {
        let sparsity = rng.gen_range(0.0..0.8);
        let counts: Vec<u64> = (0..256)
            .map(|_| if rng.gen_bool(sparsity) { 0 } else { rng.gen_range(0..=40) })
            .collect();
        let expected = brute_otsu(&counts);
        if otsu_cut(&counts) != expected {
            mismatches += 1;
            continue;
        }
        // the same histogram as a probability map of bin centres
        let values: Vec<f32> = counts
            .iter()
            .enumerate()
            .flat_map(|(i, &c)| std::iter::repeat(((i as f64 + 0.5) / 256.0) as f32).take(c as usize))
            .collect();
        let len = values.len();
        let vol = Volume3D::new(Geometry::with_dims([len, 1, 1]).unwrap(), values).unwrap();
        let t = otsu_threshold(&vol).ok();
        if t != expected.map(|k| (k + 1) as f64 / 256.0) {
            mismatches += 1;
        }
    }
    Outcome {
        id: 4,
        name: "Otsu oracle",
        passed: mismatches == 0,
        detail: format!("{OTSU_HISTOGRAMS} random 256-bin histograms; {mismatches} mismatches against exhaustive search (exact)"),
    }
}

fn circle_through(a: [f64; 2], b: [f64; 2], c: [f64; 2]) -> Option<([f64; 2], f64)> {
    let d = 2.0 * (a[0] * (b[1] - c[1]) + b[0] * (c[1] - a[1]) + c[0] * (a[1] - b[1]));
    if d.abs() < 1e-12 {
        return None;
    }
    let sq = |p: [f64; 2]| p[0] * p[0] + p[1] * p[1];
    let ux = (sq(a) * (b[1] - c[1]) + sq(b) * (c[1] - a[1]) + sq(c) * (a[1] - b[1])) / d;
    let uy = (sq(a) * (c[0] - b[0]) + sq(b) * (a[0] - c[0]) + sq(c) * (b[0] - a[0])) / d;
    let r = ((a[0] - ux).powi(2) + (a[1] - uy).powi(2)).sqrt();
    Some(([ux, uy], r))
}

/// Smallest circle through two or three of the points that holds them all.
fn brute_mec(p: &[[f64; 2]]) -> f64 {
    if p.len() == 1 {
        return 0.0;
    }
    let holds = |c: [f64; 2], r: f64| {
        p.iter()
            .all(|q| ((q[0] - c[0]).powi(2) + (q[1] - c[1]).powi(2)).sqrt() <= r * (1.0 + 1e-12) + 1e-12)
    };
    let mut best = f64::INFINITY;
    for i in 0..p.len() {
        for j in i + 1..p.len() {
            let c = [(p[i][0] + p[j][0]) / 2.0, (p[i][1] + p[j][1]) / 2.0];
            let r = ((p[i][0] - p[j][0]).powi(2) + (p[i][1] - p[j][1]).powi(2)).sqrt() / 2.0;
            if r < best && holds(c, r) {
                best = r;
            }
            for k in j + 1..p.len() {
                if let Some((c, r)) = circle_through(p[i], p[j], p[k]) {
                    if r < best && holds(c, r) {
                        best = r;
                    }
                }
            }
        }
    }
    if best.is_infinite() {
        // all points coincide
        0.0
    } else {
        best
    }
}

fn c5_mec() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let t = Instant::now();
    let mut worst = 0.0f64;
    for set in 0..MEC_SETS {
        let n = rng.gen_range(1..=MEC_MAX_POINTS);
        // every fourth set sits on a small integer grid: duplicates and collinear runs
        let pts: Vec<[f64; 2]> = (0..n)
            .map(|_| {
                if set % 4 == 0 {
                    [rng.gen_range(0..5) as f64, rng.gen_range(0..5) as f64]
                } else {
                    [rng.gen_range(-50.0..50.0), rng.gen_range(-50.0..50.0)]
                }
            })
            .collect();
        let r = minimum_enclosing_circle(&pts).expect("non-empty").radius;
        let oracle = brute_mec(&pts);
        worst = worst.max((r - oracle).abs() / oracle.max(1e-300).max(1.0));
    }
    let elapsed = t.elapsed();
    Outcome {
        id: 5,
        name: "minimum enclosing circle oracle",
        passed: worst <= MEC_TOL && elapsed < MEC_BUDGET,
        detail: format!(
            "{MEC_SETS} sets, n <= {MEC_MAX_POINTS}; max relative radius error {worst:.2e} (<= {MEC_TOL:e}); {:.1}s (< {}s)",
            elapsed.as_secs_f64(),
            MEC_BUDGET.as_secs()
        ),
    }
}

fn c6_metrics() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let mut worst_identity = 0.0f64;
    let mut worst_count = 0.0f64;
    let mut violations = 0;
    for i in 0..METRIC_PAIRS {
        let dims = [rng.gen_range(1..=8), rng.gen_range(1..=8), rng.gen_range(1..=6)];
        let g = Geometry::with_dims(dims).unwrap();
        let (pa, pb) = if i % 10 == 0 { (0.0, 0.0) } else { (rng.gen_range(0.0..1.0), rng.gen_range(0.0..1.0)) };
        let a = BinaryMask3D::from_fn(g, |_, _, _| rng.gen_bool(pa));
        let b = BinaryMask3D::from_fn(g, |_, _, _| rng.gen_bool(pb));
        let (d, j) = (dice(&a, &b).unwrap(), jaccard(&a, &b).unwrap());
        let (inter, na, nb) = a.data().iter().zip(b.data()).fold((0usize, 0usize, 0usize), |acc, (&x, &y)| {
            (acc.0 + (x && y) as usize, acc.1 + x as usize, acc.2 + y as usize)
        });
        let (d_ref, j_ref) = if na + nb == 0 {
            (1.0, 1.0)
        } else {
            (2.0 * inter as f64 / (na + nb) as f64, inter as f64 / (na + nb - inter) as f64)
        };
        worst_identity = worst_identity.max((d - 2.0 * j / (1.0 + j)).abs());
        worst_count = worst_count.max((d - d_ref).abs()).max((j - j_ref).abs());
        if j > d + METRIC_TOL || dice(&b, &a).unwrap() != d || jaccard(&b, &a).unwrap() != j {
            violations += 1;
        }
    }
    let empty = BinaryMask3D::empty(Geometry::with_dims([3, 3, 3]).unwrap());
    let empty_ok = dice(&empty, &empty).unwrap() == 1.0 && jaccard(&empty, &empty).unwrap() == 1.0;
    Outcome {
        id: 6,
        name: "metric identities",
        passed: worst_identity <= METRIC_TOL && worst_count <= METRIC_TOL && violations == 0 && empty_ok,
        detail: format!(
            "{METRIC_PAIRS} pairs; max |d - 2j/(1+j)| {worst_identity:.1e}, max error vs counts {worst_count:.1e} (<= {METRIC_TOL:e}); {violations} order/symmetry violations; empty-empty = 1: {empty_ok}"
        ),
    }
}

/// U of `a` counted pair by pair, ties worth one half.
fn u_pairs(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .flat_map(|x| b.iter().map(move |y| (x, y)))
        .map(|(x, y)| if x > y { 1.0 } else if x == y { 0.5 } else { 0.0 })
        .sum()
}

/// One-sided p: the share of all orderings of the pooled values whose
/// first `na` entries reach at least the observed U.
fn enumerate_p(a: &[f64], b: &[f64]) -> f64 {
    fn walk(v: &mut Vec<f64>, k: usize, na: usize, u0: f64, hits: &mut u64, total: &mut u64) {
        if k == v.len() {
            *total += 1;
            if u_pairs(&v[..na], &v[na..]) >= u0 {
                *hits += 1;
            }
            return;
        }
        for i in k..v.len() {
            v.swap(k, i);
            walk(v, k + 1, na, u0, hits, total);
            v.swap(k, i);
        }
    }
    let u0 = u_pairs(a, b);
    let mut v: Vec<f64> = a.iter().chain(b).copied().collect();
    let (mut hits, mut total) = (0, 0);
    walk(&mut v, 0, a.len(), u0, &mut hits, &mut total);
    hits as f64 / total as f64
}

fn c7_mann_whitney() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let (mut worst_p, mut worst_sum, mut cases) = (0.0f64, 0.0f64, 0);
    let mut all_exact = true;
    for n in 2..=MW_MAX_POOLED {
        for na in 1..n {
            // small integer range so ties are common
            let a: Vec<f64> = (0..na).map(|_| rng.gen_range(0..5) as f64).collect();
            let b: Vec<f64> = (0..n - na).map(|_| rng.gen_range(0..5) as f64).collect();
            let r = mann_whitney_u(&a, &b).unwrap();
            all_exact &= r.exact;
            worst_p = worst_p.max((r.p_value - enumerate_p(&a, &b)).abs());
            worst_sum = worst_sum.max((r.u_a + r.u_b - (na * (n - na)) as f64).abs());
            worst_sum = worst_sum.max((r.u_a - u_pairs(&a, &b)).abs());
            cases += 1;
        }
    }
    // U_a + U_b = n_a n_b holds in the approximate regime too
    for _ in 0..20 {
        let a: Vec<f64> = (0..rng.gen_range(5..30)).map(|_| rng.gen_range(0..10) as f64).collect();
        let b: Vec<f64> = (0..rng.gen_range(5..30)).map(|_| rng.gen_range(0..10) as f64).collect();
        let r = mann_whitney_u(&a, &b).unwrap();
        worst_sum = worst_sum.max((r.u_a + r.u_b - (a.len() * b.len()) as f64).abs());
    }
    Outcome {
        id: 7,
        name: "Mann-Whitney exact test",
        passed: all_exact && worst_p <= MW_TOL && worst_sum == 0.0,
        detail: format!(
            "{cases} splits with n_a + n_b <= {MW_MAX_POOLED}; max |p - enumeration| {worst_p:.1e} (<= {MW_TOL:e}); max |U_a + U_b - n_a n_b| {worst_sum}"
        ),
    }
}

fn c8_loss() -> Outcome {
    // 2x2x2 all-foreground volume: the background term has nothing to score
    let target = Tensor::<f64>::filled([1, 1, 2, 2, 2], 1.0);
    let (perfect, _) = weighted_dice_loss(&target.clone(), &target).unwrap();
    let (miss, _) = weighted_dice_loss(&Tensor::zeros([1, 1, 2, 2, 2]), &target).unwrap();
    let expected = 1.0 - 0.9 * 16.0 / 17.0;
    let passed = (perfect - expected).abs() <= LOSS_TOL && (miss - 1.0).abs() <= LOSS_TOL;
    Outcome {
        id: 8,
        name: "weighted Dice loss values",
        passed,
        detail: format!(
            "perfect match {perfect:.7} (expected 1 - 0.9*16/17 = {expected:.7}), total miss {miss:.7} (expected 1); tolerance {LOSS_TOL:e}"
        ),
    }
}

fn c9_overfit() -> Outcome {
    let t = Instant::now();
    let spec = PhantomSpec::default_v1();
    let (image, mask) = generate_phantom(&spec).expect("default phantom");
    let windowed = window_level(&image, DEFAULT_WINDOW_CENTER, DEFAULT_WINDOW_WIDTH).unwrap();
    let set = vec![to_sample(&windowed, &mask).unwrap()];
    let tc = TrainConfig {
        epochs: OVERFIT_EPOCHS,
        batch_size: 1,
        learning_rate: OVERFIT_LR,
        ..TrainConfig::default()
    };
    let net = Hed3DNet::build(Hed3DConfig::desk(), 0).unwrap();
    let outcome = train(net, &set, &set, &tc).expect("training runs");
    let pred = postprocess(&outcome.net.predict(&windowed).unwrap()).unwrap();
    let d = dice(&pred, &mask).unwrap();
    let elapsed = t.elapsed();
    Outcome {
        id: 9,
        name: "overfit convergence",
        passed: d >= OVERFIT_MIN_DICE && elapsed < OVERFIT_BUDGET,
        detail: format!(
            "desk net, one 64x64x32 phantom, {OVERFIT_EPOCHS} epochs at lr {OVERFIT_LR:e}: post-processed Dice {d:.4} (>= {OVERFIT_MIN_DICE}); {:.0}s (< {}s)",
            elapsed.as_secs_f64(),
            OVERFIT_BUDGET.as_secs()
        ),
    }
}

fn c10_generalization(dir: &Path) -> Outcome {
    let t = Instant::now();
    let (ntr, nte) = (GEN_TRAIN_CASES.to_string(), GEN_TEST_CASES.to_string());
    let (ep, lr) = (GEN_EPOCHS.to_string(), GEN_LR.to_string());
    let (crops, tf) = (GEN_CROPS.to_string(), GEN_TRANSFORMS.to_string());
    let steps: [Vec<&str>; 5] = [
        vec!["phantom", "--n", &ntr, "--seed", "1000", "--out", "train"],
        vec!["phantom", "--n", &nte, "--seed", "2000", "--out", "test"],
        vec![
            "train", "--cohort", "train", "--out", "model.ckpt", "--epochs", &ep, "--learning-rate", &lr,
            "--crops-per-scan", &crops, "--transforms-per-crop", &tf, "--seed", "1",
        ],
        vec!["predict", "--checkpoint", "model.ckpt", "--input", "test", "--out", "pred"],
        vec!["evaluate", "--pred", "pred", "--gt", "test", "--out", "report.csv"],
    ];
    for s in &steps {
        if !aaaseg(s, dir).status.success() {
            return Outcome {
                id: 10,
                name: "phantom generalization",
                passed: false,
                detail: format!("command {:?} failed", s[0]),
            };
        }
    }
    let rows = parse_report(&std::fs::read_to_string(dir.join("report.csv")).unwrap()).unwrap();
    let n = rows.len() as f64;
    let mean_dice = rows.iter().map(|r| r.dice).sum::<f64>() / n;
    let mean_diam = rows.iter().map(|r| r.diameter_abs_err_mm).sum::<f64>() / n;
    let mean_rvd = rows.iter().map(|r| r.rel_vol_diff.unwrap_or(f64::INFINITY)).sum::<f64>() / n;
    let stages: std::collections::BTreeSet<String> = rows.iter().map(|r| r.stage.to_string()).collect();
    let elapsed = t.elapsed();
    Outcome {
        id: 10,
        name: "phantom generalization",
        passed: rows.len() == GEN_TEST_CASES
            && stages.len() == 2
            && mean_dice >= GEN_MIN_DICE
            && mean_diam <= GEN_MAX_DIAM_ERR_MM
            && mean_rvd <= GEN_MAX_REL_VOL_DIFF
            && elapsed < GEN_BUDGET,
        detail: format!(
            "train {GEN_TRAIN_CASES} / test {GEN_TEST_CASES} unseen ({stages:?}): Dice {mean_dice:.4} (>= {GEN_MIN_DICE}), diameter error {mean_diam:.3} mm (<= {GEN_MAX_DIAM_ERR_MM}), volume difference {mean_rvd:.4} (<= {GEN_MAX_REL_VOL_DIFF}); {:.0}s",
            elapsed.as_secs_f64()
        ),
    }
}

fn c11_determinism(dir: &Path) -> Outcome {
    let ok = aaaseg(&["phantom", "--n", "4", "--seed", "11", "--out", "cohort"], dir).status.success();
    let mut histories = Vec::new();
    let mut checkpoints = Vec::new();
    for run in ["a", "b"] {
        let out = format!("{run}.ckpt");
        let args = [
            "train", "--cohort", "cohort", "--out", &out, "--epochs", "2", "--crops-per-scan", "1",
            "--transforms-per-crop", "2", "--learning-rate", "1e-3", "--seed", "5", "--threads", "1",
        ];
        if ok && aaaseg(&args, dir).status.success() {
            histories.push(std::fs::read(dir.join(format!("{run}.ckpt.history.csv"))).unwrap());
            checkpoints.push(std::fs::read(dir.join(&out)).unwrap());
        }
    }
    let passed = histories.len() == 2 && histories[0] == histories[1] && checkpoints[0] == checkpoints[1];
    Outcome {
        id: 11,
        name: "training determinism",
        passed,
        detail: format!(
            "two train runs, seed 5, 1 thread: history CSV identical {}, checkpoint identical {}",
            histories.len() == 2 && histories[0] == histories[1],
            checkpoints.len() == 2 && checkpoints[0] == checkpoints[1]
        ),
    }
}

fn c12_io(dir: &Path) -> Outcome {
    let (image, mask) = generate_phantom(&PhantomSpec::default_v1()).unwrap();
    let mut failures = Vec::new();
    // float, and integer-valued data for the integer element types; `+ 0.0` folds -0.0 into 0.0
    let rounded = image.map(|v| v.round().clamp(-32768.0, 32767.0) + 0.0);
    let uchar = image.map(|v| v.round().clamp(0.0, 255.0) + 0.0);
    for (vol, ty, name) in [
        (&image, ElementType::Float, "float.mha"),
        (&image, ElementType::Float, "float.mhd"),
        (&rounded, ElementType::Short, "short.mha"),
        (&uchar, ElementType::UChar, "uchar.mhd"),
    ] {
        let p = dir.join(name);
        write_volume(vol, &p, ty).unwrap();
        let back = read_volume(&p).unwrap();
        let same = back.geometry() == vol.geometry()
            && back.data().iter().zip(vol.data()).all(|(a, b)| a.to_bits() == b.to_bits());
        if !same {
            failures.push(name.to_string());
        }
    }
    write_mask(&mask, &dir.join("mask.mha")).unwrap();
    if read_mask(&dir.join("mask.mha")).unwrap() != mask {
        failures.push("mask.mha".into());
    }
    let net = Hed3DNet::build(Hed3DConfig::desk(), 12).unwrap();
    let bytes = encode_checkpoint(&net);
    let back = decode_checkpoint(&bytes).unwrap();
    let params_equal = back
        .parameters()
        .iter()
        .zip(net.parameters())
        .all(|(a, b)| a.name == b.name && a.value.iter().zip(&b.value).all(|(x, y)| x.to_bits() == y.to_bits()));
    if !params_equal || encode_checkpoint(&back) != bytes || back.config() != net.config() {
        failures.push("checkpoint".into());
    }
    let mut corrupt = bytes.clone();
    let mid = corrupt.len() / 2;
    corrupt[mid] ^= 0x10;
    let rejected = matches!(decode_checkpoint(&corrupt), Err(IoError::ChecksumMismatch { .. }));
    if !rejected {
        failures.push("corrupted checkpoint accepted".into());
    }
    Outcome {
        id: 12,
        name: "I/O round trips",
        passed: failures.is_empty(),
        detail: format!(
            "MetaImage float/short/uchar (.mha, .mhd) and mask bit-exact; checkpoint bit-exact; corruption -> checksum error {rejected}{}",
            if failures.is_empty() { String::new() } else { format!("; failures {failures:?}") }
        ),
    }
}

fn main() {
    let tmp = tempfile::tempdir().expect("temp dir");
    let sub = |name: &str| {
        let p = tmp.path().join(name);
        std::fs::create_dir_all(&p).unwrap();
        p
    };
    let criteria: Vec<Box<dyn Fn() -> Outcome>> = vec![
        Box::new(c1_gradients),
        Box::new(c2_conv_oracle),
        Box::new(c3_adjoint),
        Box::new(c4_otsu),
        Box::new(c5_mec),
        Box::new(c6_metrics),
        Box::new(c7_mann_whitney),
        Box::new(c8_loss),
        Box::new(c9_overfit),
        Box::new({
            let d = sub("c10");
            move || c10_generalization(&d)
        }),
        Box::new({
            let d = sub("c11");
            move || c11_determinism(&d)
        }),
        Box::new({
            let d = sub("c12");
            move || c12_io(&d)
        }),
    ];
    let only: Option<u32> = std::env::var("ACCEPTANCE_ONLY").ok().and_then(|v| v.parse().ok());
    let mut failed = 0;
    for (i, run) in criteria.iter().enumerate() {
        let id = i as u32 + 1;
        if only.is_some_and(|o| o != id) {
            continue;
        }
        let o = run();
        let tag = if o.passed { "PASS" } else { "FAIL" };
        println!("[{tag}] criterion {:>2} {}: {}", o.id, o.name, o.detail);
        failed += usize::from(!o.passed);
    }
    if failed > 0 {
        println!("acceptance: {failed} criteria failed");
        std::process::exit(1);
    }
    println!("acceptance: all criteria passed");
}
