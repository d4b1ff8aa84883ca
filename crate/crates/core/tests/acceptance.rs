//! Acceptance run: one PASS/FAIL line per criterion, nonzero exit if any fail.
//!
//! `cargo test --test acceptance` (release builds are much faster:
//! `cargo test --release --test acceptance`).

use std::collections::BTreeMap;
use std::time::{Duration, Instant};

use half::f16;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use driftrisk::direction::{steer, DirectionLabel, DirectionSet};
use driftrisk::harness::{
    drift_run, ranking_run, sqsd_records, transfer_run, DriftRunConfig, RankingConfig,
    RankingOutcome, TransferConfig,
};
use driftrisk::safetensors::{
    parse_safetensors, serialize_safetensors, RawTensor, TensorData, TensorTable,
};
use driftrisk::sqsd::{score_sample, Variant};
use driftrisk::stats::spearman;
use driftrisk::tensor::{frobenius_inner, materialize, LoraDelta, WeightMatrix};
use driftrisk::toy::corpus::{generate_corpus, CorpusSpec, Sample};
use driftrisk::toy::model::{FinetuneMode, ToyConfig, ToyModel};
use driftrisk::toy::probe::{linearization_residual, taylor_gap, SampleUpdate};
use driftrisk::toy::world::{ToyWorld, WorldConfig};
use driftrisk::trajectory::project;

const ROOT_SEED: u64 = 7;

const ORACLE_REL_TOL: f64 = 1e-9;
const ORACLE_INSTANCES: usize = 100;
const ORACLE_MAX_DIM: usize = 16;
const ORACLE_BUDGET: Duration = Duration::from_secs(10);

const FD_STEP: f64 = 1e-4;
const FD_ABS_TOL: f64 = 1e-5;
const FD_REL_TOL: f64 = 1e-3;
const FD_SEEDS: u64 = 20;
const FD_BUDGET: Duration = Duration::from_secs(60);

const RESIDUAL_ETAS: [f64; 3] = [1e-2, 5e-3, 2.5e-3];
const RESIDUAL_RATIO: (f64, f64) = (3.0, 5.0);

const TAYLOR_TRIALS: u64 = 200;
const TAYLOR_MIN_SHRINK: f64 = 1.8;
const TAYLOR_MIN_SIGN_AGREEMENT: f64 = 0.95;

const DRIFT_BAND: f64 = 0.05;
const DRIFT_DOMINANCE: f64 = 3.0;
const DRIFT_JUDGE_TREND: f64 = -0.8;
const DRIFT_BUDGET: Duration = Duration::from_secs(300);

const RANKING_MIN_RHO: f64 = 0.8;
const RANKING_MIN_DELTA: f64 = 0.3;
const RANKING_BUDGET: Duration = Duration::from_secs(600);

const LENGTH_BIAS_MIN: f64 = 0.5;
const LENGTH_BIAS_MAX_FULL: f64 = 0.3;

const FORMAT_TABLES: usize = 100;

struct Verdict {
    pass: bool,
    detail: String,
}

fn verdict(pass: bool, detail: impl Into<String>) -> Verdict {
    Verdict {
        pass,
        detail: detail.into(),
    }
}

fn rel_close(got: f64, want: f64) -> bool {
    (got - want).abs() <= ORACLE_REL_TOL * want.abs().max(f64::MIN_POSITIVE)
}

fn random_matrix(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> WeightMatrix {
    WeightMatrix::new(
        rows,
        cols,
        (0..rows * cols)
            .map(|_| rng.gen_range(-2.0f32..2.0))
            .collect(),
    )
    .unwrap()
}

fn flat(m: &WeightMatrix) -> Vec<f64> {
    m.values().iter().map(|&v| v as f64).collect()
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Independent triple loop, reduction index outermost, rounded to storage.
fn materialize_oracle(a: &WeightMatrix, b: &WeightMatrix, scale: f64) -> Vec<f64> {
    let (n, r, m) = (b.rows(), a.rows(), a.cols());
    let mut acc = vec![0.0f64; n * m];
    for p in 0..r {
        for i in 0..n {
            for j in 0..m {
                acc[i * m + j] += b.get(i, p) as f64 * a.get(p, j) as f64;
            }
        }
    }
    acc.iter().map(|v| (scale * v) as f32 as f64).collect()
}

fn criterion_1() -> Verdict {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(ROOT_SEED);
    let mut failures = Vec::new();
    for inst in 0..ORACLE_INSTANCES {
        let dim = |rng: &mut ChaCha8Rng| rng.gen_range(1..=ORACLE_MAX_DIM);
        let (n, m, r) = (dim(&mut rng), dim(&mut rng), rng.gen_range(1..=8));
        let a = random_matrix(&mut rng, r, m);
        let b = random_matrix(&mut rng, n, r);
        let alpha = rng.gen_range(0.5..32.0);
        let delta = LoraDelta::new(a.clone(), b.clone(), alpha).unwrap();
        let got = flat(&materialize(&delta).unwrap());
        let want = materialize_oracle(&a, &b, alpha / r as f64);
        if got.iter().zip(&want).any(|(g, w)| !rel_close(*g, *w)) {
            failures.push(format!("materialize#{inst}"));
        }

        let x = random_matrix(&mut rng, n, m);
        let y = random_matrix(&mut rng, n, m);
        if !rel_close(frobenius_inner(&x, &y).unwrap(), dot(&flat(&x), &flat(&y))) {
            failures.push(format!("frobenius_inner#{inst}"));
        }

        let k = rng.gen_range(1..=4);
        let shapes: Vec<(usize, usize)> = (0..k).map(|_| (dim(&mut rng), dim(&mut rng))).collect();
        let module = |i: usize| format!("m{i}");
        let mk = |rng: &mut ChaCha8Rng| -> BTreeMap<String, WeightMatrix> {
            shapes
                .iter()
                .enumerate()
                .map(|(i, &(r, c))| (module(i), random_matrix(rng, r, c)))
                .collect()
        };
        let drift = mk(&mut rng);
        let vd = mk(&mut rng);
        let vs = mk(&mut rng);
        let update = mk(&mut rng);
        let danger = DirectionSet::from_modules(DirectionLabel::Danger, "d", vd.clone()).unwrap();
        let safety = DirectionSet::from_modules(DirectionLabel::Safety, "s", vs.clone()).unwrap();

        let concat = |ms: &BTreeMap<String, WeightMatrix>| -> Vec<f64> {
            ms.values().flat_map(flat).collect()
        };
        let (cd, cv) = (concat(&drift), concat(&vd));
        let want = dot(&cd, &cv) / dot(&cv, &cv).sqrt();
        if !rel_close(project(&drift, &danger).unwrap(), want) {
            failures.push(format!("project#{inst}"));
        }

        let unit = |v: Vec<f64>| {
            let n = dot(&v, &v).sqrt();
            v.into_iter().map(|x| x / n).collect::<Vec<f64>>()
        };
        let mut want_full = 0.0;
        let mut want_raw = 0.0;
        for name in update.keys() {
            let u = flat(&update[name]);
            let (d, s) = (unit(flat(&vd[name])), unit(flat(&vs[name])));
            let un = unit(u.clone());
            want_full += dot(&un, &d) - dot(&un, &s);
            want_raw += dot(&u, &d) - dot(&u, &s);
        }
        let upd = SampleUpdate {
            modules: update.clone(),
            eta: 1.0,
        };
        let rec = score_sample(&upd, &danger, &safety, Variant::Full).unwrap();
        if !rel_close(rec.score, want_full)
            || !rel_close(rec.variant_scores[&Variant::NoNorm], want_raw)
        {
            failures.push(format!("score_sample#{inst}"));
        }
    }
    let elapsed = start.elapsed();
    verdict(
        failures.is_empty() && elapsed < ORACLE_BUDGET,
        format!(
            "{} instances x 4 operations, {} mismatches{}",
            ORACLE_INSTANCES,
            failures.len(),
            failures
                .first()
                .map(|f| format!(" (first: {f})"))
                .unwrap_or_default()
        ),
    )
}

fn random_sample(rng: &mut ChaCha8Rng, vocab: usize) -> Sample {
    let plen = rng.gen_range(2..=6);
    let rlen = rng.gen_range(2..=10);
    Sample {
        id: "s".into(),
        prompt: (0..plen)
            .map(|_| rng.gen_range(0..vocab as u32) as _)
            .collect(),
        response: (0..rlen)
            .map(|_| rng.gen_range(0..vocab as u32) as _)
            .collect(),
        plant_intensity: None,
    }
}

fn small_config(mode: FinetuneMode) -> ToyConfig {
    ToyConfig {
        vocab: 16,
        width: 12,
        depth: 2,
        lora_rank: 3,
        lora_alpha: 6.0,
        max_seq_len: 24,
        mode,
    }
}

/// Toy LoRA model whose `B` factors are random and nonzero.
fn model_with_random_b(seed: u64, rng: &mut ChaCha8Rng) -> ToyModel {
    let mut m = ToyModel::init(small_config(FinetuneMode::Lora), seed).unwrap();
    let v: Vec<f64> = m
        .trainable_vector()
        .iter()
        .map(|&x| {
            if x == 0.0 {
                rng.gen_range(-0.5..0.5)
            } else {
                x
            }
        })
        .collect();
    m.set_trainable_vector(&v).unwrap();
    m
}

fn criterion_2() -> Verdict {
    let start = Instant::now();
    let mut checked = 0usize;
    let mut worst = 0.0f64;
    let mut bad = 0usize;
    for seed in 0..FD_SEEDS {
        let mut rng = ChaCha8Rng::seed_from_u64(1000 + seed);
        let mut m = model_with_random_b(seed, &mut rng);
        let s = random_sample(&mut rng, 16);
        let g = m.flat_grad(&m.grads(&s).unwrap());
        let theta = m.trainable_vector();
        for i in 0..theta.len() {
            let mut t = theta.clone();
            t[i] = theta[i] + FD_STEP;
            m.set_trainable_vector(&t).unwrap();
            let hi = m.loss(&s).unwrap();
            t[i] = theta[i] - FD_STEP;
            m.set_trainable_vector(&t).unwrap();
            let lo = m.loss(&s).unwrap();
            let fd = (hi - lo) / (2.0 * FD_STEP);
            let err = (fd - g[i]).abs();
            let tol = FD_ABS_TOL.max(FD_REL_TOL * g[i].abs());
            worst = worst.max(err / tol);
            if err > tol {
                bad += 1;
            }
            checked += 1;
        }
        m.set_trainable_vector(&theta).unwrap();
    }
    let elapsed = start.elapsed();
    verdict(
        bad == 0 && elapsed < FD_BUDGET,
        format!("{checked} A/B coordinates over {FD_SEEDS} seeds, {bad} outside tolerance, worst err/tol {worst:.3}"),
    )
}

fn criterion_3() -> Verdict {
    let mut ratios = Vec::new();
    for seed in 0..10u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(2000 + seed);
        let m = model_with_random_b(seed, &mut rng);
        let s = random_sample(&mut rng, 16);
        let r: Vec<f64> = RESIDUAL_ETAS
            .iter()
            .map(|&eta| linearization_residual(&m, &s, eta).unwrap())
            .collect();
        ratios.extend(r.windows(2).map(|w| w[0] / w[1]));
    }
    let (lo, hi) = ratios
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &r| {
            (a.min(r), b.max(r))
        });
    verdict(
        lo >= RESIDUAL_RATIO.0 && hi <= RESIDUAL_RATIO.1,
        format!(
            "{} halvings, residual ratio in [{lo:.4}, {hi:.4}]",
            ratios.len()
        ),
    )
}

fn criterion_4() -> Verdict {
    let eta = 1e-2;
    let mut agree = 0usize;
    let mut shrink = Vec::new();
    for trial in 0..TAYLOR_TRIALS {
        let mut rng = ChaCha8Rng::seed_from_u64(3000 + trial);
        let m = ToyModel::init(small_config(FinetuneMode::Full), trial).unwrap();
        let s = random_sample(&mut rng, 16);
        let theta = m.trainable_vector();
        let u: Vec<f64> = (0..theta.len()).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let scale = 1e-3 / dot(&u, &u).sqrt();
        let at = |c: f64| {
            let mut t = m.clone();
            let v: Vec<f64> = theta
                .iter()
                .zip(&u)
                .map(|(x, d)| x + c * scale * d)
                .collect();
            t.set_trainable_vector(&v).unwrap();
            taylor_gap(&m, &t, &s, eta).unwrap()
        };
        let (l1, r1) = at(1.0);
        let (l2, r2) = at(0.5);
        if l1.signum() == r1.signum() {
            agree += 1;
        }
        shrink.push((l1 - r1).abs() / (l2 - r2).abs());
    }
    shrink.sort_by(f64::total_cmp);
    let agreement = agree as f64 / TAYLOR_TRIALS as f64;
    let min = shrink[0];
    verdict(
        min >= TAYLOR_MIN_SHRINK && agreement >= TAYLOR_MIN_SIGN_AGREEMENT,
        format!(
            "{TAYLOR_TRIALS} trials, sign agreement {agreement:.3}, gap shrink min {min:.3} median {:.3}",
            shrink[shrink.len() / 2]
        ),
    )
}

fn criterion_5() -> Verdict {
    let start = Instant::now();
    let world = ToyWorld::build(WorldConfig::seeded(ROOT_SEED)).unwrap();
    let points = drift_run(&world, &DriftRunConfig::seeded(ROOT_SEED)).unwrap();
    let elapsed = start.elapsed();
    let last = points.last().unwrap();
    let safety_final = last.projections[&world.primary_safety().tag()];
    let mut notes = Vec::new();
    let mut pass = true;
    for v in &world.danger {
        let tag = v.tag();
        let series: Vec<f64> = points.iter().map(|p| p.projections[&tag]).collect();
        let fin = *series.last().unwrap();
        let band = DRIFT_BAND * fin.abs();
        let mut peak = f64::NEG_INFINITY;
        let mut worst_dip = 0.0f64;
        for &x in &series {
            peak = peak.max(x);
            worst_dip = worst_dip.max(peak - x);
        }
        let nondecreasing = worst_dip <= band;
        let dominant = fin > DRIFT_DOMINANCE * safety_final.abs();
        pass &= nondecreasing && dominant;
        notes.push(format!(
            "{tag} final {fin:.3} (max dip {worst_dip:.3} vs band {band:.3}, {:.2}x |safety|)",
            fin / safety_final.abs()
        ));
    }
    let steps: Vec<f64> = points
        .iter()
        .filter(|p| p.judge_score.is_some())
        .map(|p| p.step as f64)
        .collect();
    let judge: Vec<f64> = points.iter().filter_map(|p| p.judge_score).collect();
    let trend = spearman(&steps, &judge).unwrap_or(0.0);
    let declining = judge.last() < judge.first() && trend <= DRIFT_JUDGE_TREND;
    pass &= declining && elapsed < DRIFT_BUDGET;
    notes.push(format!(
        "safety final {safety_final:.3}, judge {:.3} -> {:.3} (spearman vs step {trend:.3})",
        judge[0],
        judge.last().unwrap()
    ));
    verdict(pass, notes.join("; "))
}

fn criterion_6(world: &ToyWorld, outcome: &RankingOutcome, elapsed: Duration) -> Verdict {
    let sqsd = outcome.rho[0].1;
    let best_baseline = outcome.rho[1..]
        .iter()
        .max_by(|a, b| a.1.total_cmp(&b.1))
        .cloned()
        .unwrap();
    let report = &outcome.reports[0];
    let pass = sqsd >= RANKING_MIN_RHO
        && sqsd > best_baseline.1
        && report.monotone
        && report.delta > RANKING_MIN_DELTA
        && elapsed < RANKING_BUDGET;
    let _ = world;
    verdict(
        pass,
        format!(
            "sqsd rho {sqsd:.3} (best baseline {} {:.3}); rank-eval ASR {:?} delta {:.3} monotone {}",
            best_baseline.0,
            best_baseline.1,
            report.asr_per_subset.iter().map(|a| format!("{a:.3}")).collect::<Vec<_>>(),
            report.delta,
            report.monotone
        ),
    )
}

fn criterion_7(world: &ToyWorld, outcome: &RankingOutcome) -> Verdict {
    let alpha = outcome.ranked[0].position;
    let spec = CorpusSpec {
        min_response: 2,
        max_response: 16,
        id_prefix: "len".into(),
        ..CorpusSpec::planted(500, driftrisk::toy::world::sub_seed(ROOT_SEED, 400))
    };
    let mixed = generate_corpus(&world.rules, &spec).unwrap();
    let recs = sqsd_records(world, &mixed, alpha, 1e-3, Variant::Full).unwrap();
    let inv_len: Vec<f64> = mixed
        .iter()
        .map(|s| 1.0 / s.response.len() as f64)
        .collect();
    let col = |v: Variant| {
        recs.iter()
            .map(|r| r.variant_scores[&v])
            .collect::<Vec<f64>>()
    };
    let bias_raw = spearman(&col(Variant::NoNorm), &inv_len).unwrap_or(0.0);
    let bias_full = spearman(&col(Variant::Full), &inv_len).unwrap_or(0.0);

    let truth: Vec<f64> = outcome
        .corpus
        .iter()
        .map(|s| s.plant_intensity.unwrap())
        .collect();
    let rho_of = |v: Variant| {
        let x: Vec<f64> = outcome
            .records
            .iter()
            .map(|r| r.variant_scores[&v])
            .collect();
        spearman(&x, &truth).unwrap_or(0.0)
    };
    let (full, d_only, s_only) = (
        rho_of(Variant::Full),
        rho_of(Variant::DangerOnly),
        rho_of(Variant::SafetyOnly),
    );

    let insensitive = outcome.ranked.last().unwrap().position;
    let recs_ins = sqsd_records(world, &outcome.corpus, insensitive, 1e-3, Variant::Full).unwrap();
    let x: Vec<f64> = recs_ins.iter().map(|r| r.score).collect();
    let rho_ins = spearman(&x, &truth).unwrap_or(0.0);

    let checks = [
        ("no_norm length bias", bias_raw >= LENGTH_BIAS_MIN),
        (
            "full length-neutral",
            bias_full.abs() <= LENGTH_BIAS_MAX_FULL,
        ),
        ("danger_only below full", d_only < full),
        ("safety_only below full", s_only < full),
        ("insensitive init below top", rho_ins < full),
    ];
    let failed: Vec<&str> = checks.iter().filter(|c| !c.1).map(|c| c.0).collect();
    verdict(
        failed.is_empty(),
        format!(
            "rho vs 1/len: no_norm {bias_raw:.3}, full {bias_full:.3}; plant rho full {full:.3}, danger_only {d_only:.3}, \
             safety_only {s_only:.3}; init alpha {alpha} vs insensitive alpha {insensitive}: {rho_ins:.3}{}",
            if failed.is_empty() { String::new() } else { format!("; failing: {}", failed.join(", ")) }
        ),
    )
}

fn criterion_8(world: &ToyWorld) -> Verdict {
    let scores: Vec<f64> = (0..=10)
        .map(|i| {
            let s = steer(&world.base_state, world.primary_danger(), i as f64 / 10.0).unwrap();
            world.judge.evaluate(&s).unwrap().safety
        })
        .collect();
    let monotone = scores.windows(2).all(|w| w[1] < w[0]);
    verdict(
        monotone,
        format!(
            "judge over alpha 0..1: {:?}",
            scores.iter().map(|s| format!("{s:.3}")).collect::<Vec<_>>()
        ),
    )
}

/// Uniform random bit pattern, redrawn until finite.
fn finite_bits<B, T>(rng: &mut ChaCha8Rng, from: impl Fn(B) -> T, ok: impl Fn(&T) -> bool) -> T
where
    rand::distributions::Standard: rand::distributions::Distribution<B>,
{
    loop {
        let x = from(rng.gen());
        if ok(&x) {
            return x;
        }
    }
}

fn random_table(rng: &mut ChaCha8Rng, force_f16: bool) -> TensorTable {
    let mut t = TensorTable::new();
    let n = if force_f16 {
        rng.gen_range(1..=4)
    } else {
        rng.gen_range(0..=5)
    };
    for i in 0..n {
        let rank = rng.gen_range(0..=3);
        let shape: Vec<usize> = (0..rank).map(|_| rng.gen_range(0..=5)).collect();
        let len: usize = shape.iter().product();
        let data = match if force_f16 { 0 } else { rng.gen_range(0..3) } {
            0 => TensorData::F16(
                (0..len)
                    .map(|_| finite_bits(rng, f16::from_bits, |x: &f16| x.is_finite()))
                    .collect(),
            ),
            1 => TensorData::F32(
                (0..len)
                    .map(|_| finite_bits(rng, f32::from_bits, |x: &f32| x.is_finite()))
                    .collect(),
            ),
            _ => TensorData::F64(
                (0..len)
                    .map(|_| finite_bits(rng, f64::from_bits, |x: &f64| x.is_finite()))
                    .collect(),
            ),
        };
        t.insert(format!("t{i}.weight"), RawTensor::new(shape, data).unwrap());
    }
    if rng.gen_bool(0.5) {
        t.metadata.insert("format".into(), "pt".into());
        t.metadata
            .insert("note".into(), format!("table {}", rng.gen::<u32>()));
    }
    t
}

fn bits(d: &TensorData) -> Vec<u64> {
    match d {
        TensorData::F16(v) => v.iter().map(|x| x.to_bits() as u64).collect(),
        TensorData::F32(v) => v.iter().map(|x| x.to_bits() as u64).collect(),
        TensorData::F64(v) => v.iter().map(|x| x.to_bits()).collect(),
    }
}

fn criterion_9() -> Verdict {
    let mut rng = ChaCha8Rng::seed_from_u64(ROOT_SEED);
    let mut bad = Vec::new();
    let dir = tempfile::tempdir().unwrap();
    for i in 0..FORMAT_TABLES {
        let table = match i {
            0 => TensorTable::new(),
            1..=10 => random_table(&mut rng, true),
            _ => random_table(&mut rng, false),
        };
        let bytes = serialize_safetensors(&table).unwrap();
        let path = dir.path().join(format!("t{i}.safetensors"));
        std::fs::write(&path, &bytes).unwrap();
        let back = parse_safetensors(&std::fs::read(&path).unwrap()).unwrap();
        let same_tensors = back.tensors.len() == table.tensors.len()
            && table.tensors.iter().all(|(k, t)| {
                back.tensors.get(k).is_some_and(|b| {
                    b.shape == t.shape
                        && b.data.dtype() == t.data.dtype()
                        && bits(&b.data) == bits(&t.data)
                })
            });
        if !same_tensors
            || back.metadata != table.metadata
            || serialize_safetensors(&back).unwrap() != bytes
        {
            bad.push(i);
        }
    }
    verdict(
        bad.is_empty(),
        format!("{FORMAT_TABLES} tables (1 empty, 10 f16-only, random finite bit patterns), {} not bit-exact", bad.len()),
    )
}

fn criterion_10() -> Verdict {
    let cfg = TransferConfig::seeded(ROOT_SEED);
    let outcome = transfer_run(&cfg).unwrap();
    let pass = outcome.reports.iter().all(|r| r.monotone);
    let detail = outcome
        .reports
        .iter()
        .map(|r| {
            format!(
                "{}: ASR {:?} delta {:.3} monotone {}",
                r.method,
                r.asr_per_subset
                    .iter()
                    .map(|a| format!("{a:.3}"))
                    .collect::<Vec<_>>(),
                r.delta,
                r.monotone
            )
        })
        .collect::<Vec<_>>()
        .join("; ");
    verdict(
        pass,
        format!("scorer alpha {}; {detail}", outcome.scorer_alpha),
    )
}

fn report(n: usize, start: Instant, v: Verdict, failed: &mut Vec<usize>) {
    if !v.pass {
        failed.push(n);
    }
    println!(
        "criterion {n:>2}: {} [{:.2}s] {}",
        if v.pass { "PASS" } else { "FAIL" },
        start.elapsed().as_secs_f64(),
        v.detail
    );
}

fn main() {
    // `cargo test` passes harness flags such as `--list`; nothing to enumerate.
    if std::env::args().any(|a| a == "--list") {
        return;
    }
    let mut failed = Vec::new();
    let singles: [(usize, fn() -> Verdict); 5] = [
        (1, criterion_1),
        (2, criterion_2),
        (3, criterion_3),
        (4, criterion_4),
        (5, criterion_5),
    ];
    for (n, f) in singles {
        let t = Instant::now();
        report(n, t, f(), &mut failed);
    }

    let t = Instant::now();
    let world = ToyWorld::build(WorldConfig::seeded(ROOT_SEED)).unwrap();
    let outcome = ranking_run(&world, &RankingConfig::seeded(ROOT_SEED)).unwrap();
    report(
        6,
        t,
        criterion_6(&world, &outcome, t.elapsed()),
        &mut failed,
    );
    let t = Instant::now();
    report(7, t, criterion_7(&world, &outcome), &mut failed);
    let t = Instant::now();
    report(8, t, criterion_8(&world), &mut failed);
    let t = Instant::now();
    report(9, t, criterion_9(), &mut failed);
    let t = Instant::now();
    report(10, t, criterion_10(), &mut failed);

    println!("acceptance: {} of 10 criteria pass", 10 - failed.len());
    if !failed.is_empty() {
        println!("failing: {failed:?}");
        std::process::exit(1);
    }
}
