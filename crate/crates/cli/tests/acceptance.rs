//! Acceptance suite: one PASS/FAIL line per criterion, non-zero exit if any fail.
//!
//! Golden files live in `tests/golden/`. Set `UPDATE_GOLDEN=1` to rewrite them
//! from the current build (only after auditing the numbers).

use std::fs;
use std::panic::{self, AssertUnwindSafe};
use std::path::{Path, PathBuf};
use std::time::{Duration, Instant};

use fovea_cli::config::{RunConfig, CONFIG_FILE};
use fovea_cli::{run_cli, system_census};
use fovea_core::enhance::{apply_ncm, apply_ppr, class_weights, cosine, cosine_similarity_field, fuse, threshold_mask};
use fovea_core::prototypes::{Prototype, PrototypeKind, RepositoryMetadata};
use fovea_core::toyenc::{encode_with_attention, generate_episode, EpisodeSpec, ShiftSpec};
use fovea_core::tsa::{check_gradients, contrastive_loss, random_matrix, AlignmentState, HashNgramEmbedder};
use fovea_core::{
    accumulate_from_support, AttentionMatrix, EnhancementConfig, Enhancer, FeatureMap, Matrix, PrototypeRepository,
    SuiteConfig, ToyEncoder,
};
use proptest::prelude::*;
use proptest::test_runner::{Config, TestRunner};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use tempfile::TempDir;

const TAU_SWEEP: [f64; 6] = [0.5, 0.6, 0.7, 0.75, 0.8, 0.9];
/// Central-difference step for the random-instance gradient check. Smaller
/// steps are roundoff-limited on entries near 1e-6; larger ones truncation-limited.
const FD_STEP: f64 = 1e-4;

type Outcome = Result<String, String>;

fn golden_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests").join("golden")
}

fn fovea(args: &[&str]) -> i32 {
    run_cli(std::iter::once("fovea").chain(args.iter().copied()))
}

fn path_str(p: &Path) -> &str {
    p.to_str().expect("utf-8 path")
}

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

/// Compares `produced` with the golden copy `name`, or rewrites it when updating.
fn check_golden(produced: &Path, name: &str) -> Result<(), String> {
    let golden = golden_dir().join(name);
    let bytes = fs::read(produced).map_err(|e| format!("{}: {e}", produced.display()))?;
    if std::env::var_os("UPDATE_GOLDEN").is_some() {
        fs::create_dir_all(golden_dir()).map_err(|e| e.to_string())?;
        fs::write(&golden, &bytes).map_err(|e| e.to_string())?;
        return Ok(());
    }
    let expected = fs::read(&golden).map_err(|e| format!("{}: {e} (run with UPDATE_GOLDEN=1 to create)", golden.display()))?;
    if expected == bytes {
        return Ok(());
    }
    let (a, b) = (String::from_utf8_lossy(&expected), String::from_utf8_lossy(&bytes));
    let line = a.lines().zip(b.lines()).position(|(x, y)| x != y).map_or(0, |i| i + 1);
    Err(format!("{name} differs from golden (first differing line {line})"))
}

struct MetricsRow {
    f1_baseline: f64,
    f1_enhanced: f64,
    dist_baseline: f64,
    dist_enhanced: f64,
}

fn read_metrics(path: &Path) -> Vec<MetricsRow> {
    let mut r = csv::Reader::from_path(path).expect("metrics.csv");
    r.records()
        .map(|rec| {
            let rec = rec.expect("metrics row");
            let f = |i: usize| rec[i].parse::<f64>().expect("float");
            MetricsRow {
                f1_baseline: f(1),
                f1_enhanced: f(2),
                dist_baseline: f(3),
                dist_enhanced: f(4),
            }
        })
        .collect()
}

fn random_stochastic_rows(rng: &mut ChaCha8Rng, rows: usize, n: usize) -> Vec<f64> {
    let mut w = Vec::with_capacity(rows * n);
    for _ in 0..rows {
        // a sparse mix keeps some rows peaked and some diffuse
        let sparsity: f64 = rng.random();
        let row: Vec<f64> = (0..n)
            .map(|_| if rng.random::<f64>() < sparsity { 0.0 } else { rng.random::<f64>() })
            .collect();
        let total: f64 = row.iter().sum();
        if total == 0.0 {
            let hot = rng.random_range(0..n);
            w.extend((0..n).map(|j| if j == hot { 1.0 } else { 0.0 }));
        } else {
            w.extend(row.iter().map(|v| v / total));
        }
    }
    w
}

fn criterion_1() -> Outcome {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut worst = 0.0f64;
    for trial in 0..1000 {
        let h = rng.random_range(1..=16usize);
        let w = rng.random_range(1..=(256 / h).min(16));
        let heads = 1 + trial % 3;
        let n = h * w;
        let weights = random_stochastic_rows(&mut rng, heads * n, n);
        let positions = AttentionMatrix::grid_positions(h, w);
        let a = AttentionMatrix::new("layer", positions.clone(), heads, weights.clone()).map_err(|e| e.to_string())?;
        let mut naive = 0.0;
        for head in 0..heads {
            let mut total = 0.0;
            for i in 0..n {
                for j in 0..n {
                    let dy = positions[i][0] - positions[j][0];
                    let dx = positions[i][1] - positions[j][1];
                    total += weights[(head * n + i) * n + j] * (dy * dy + dx * dx).sqrt();
                }
            }
            naive += total / n as f64;
        }
        naive /= heads as f64;
        let got = a.mean_attention_distance();
        worst = worst.max((got - naive).abs());
        ensure((got - naive).abs() <= 1e-10, || format!("trial {trial} ({h}x{w}, {heads} heads): {got} vs {naive}"))?;
    }
    let elapsed = start.elapsed();
    ensure(elapsed < Duration::from_secs(30), || format!("took {elapsed:?}"))?;
    Ok(format!("1000 matrices, max |diff| {worst:.1e}, {elapsed:.2?}"))
}

fn random_map(rng: &mut ChaCha8Rng, h: usize, w: usize, d: usize) -> FeatureMap {
    let data = (0..h * w * d).map(|_| rng.random_range(-2.0..2.0)).collect();
    FeatureMap::new(h, w, d, 0, data).expect("valid map")
}

fn random_repo(rng: &mut ChaCha8Rng, map: &FeatureMap, n_classes: usize) -> PrototypeRepository {
    // prototypes near random cells so that masks are non-trivial
    let near_cell = |rng: &mut ChaCha8Rng| -> Vec<f64> {
        let c = rng.random_range(0..map.n_cells());
        map.cell(c).iter().map(|v| v + rng.random_range(-0.5..0.5)).collect()
    };
    let mut protos: Vec<Prototype> = (0..n_classes)
        .map(|c| Prototype {
            vector: near_cell(rng),
            kind: PrototypeKind::Foreground(c),
            scale_id: 0,
            support_count: 1,
        })
        .collect();
    protos.push(Prototype {
        vector: near_cell(rng),
        kind: PrototypeKind::Background,
        scale_id: 0,
        support_count: 1,
    });
    let classes = (0..n_classes).map(|c| format!("class{c}")).collect();
    PrototypeRepository::from_entries(classes, 1, RepositoryMetadata::default(), protos).expect("valid repo")
}

fn criterion_2() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut masked = 0usize;
    for trial in 0..100 {
        let (h, w, d) = (rng.random_range(1..=12), rng.random_range(1..=12), rng.random_range(1..=8));
        let map = random_map(&mut rng, h, w, d);
        let n_classes = rng.random_range(1..=4);
        let repo = random_repo(&mut rng, &map, n_classes);
        let tau = if trial % 2 == 0 { 0.75 } else { rng.random_range(-0.9..0.9) };
        let config = EnhancementConfig {
            tau_fg: tau,
            tau_bg: tau,
            ..EnhancementConfig::default()
        }
        .with_zero_strength();
        let out = Enhancer::new(&repo, config).map_err(|e| e.to_string())?.enhance_map(&map).map_err(|e| e.to_string())?;
        masked += out.fg_mask.count() + out.bg_mask.count();
        let same = out.map.data().iter().zip(map.data()).all(|(a, b)| a.to_bits() == b.to_bits());
        ensure(same && out.map.dims() == map.dims(), || format!("trial {trial}: enhanced map differs from input"))?;
    }
    Ok(format!("100 maps bit-identical ({masked} masked cells exercised)"))
}

/// Per-cell reference: every quantity recomputed from scratch for one cell.
fn reference_cell(f: &[f64], repo: &PrototypeRepository, cfg: &EnhancementConfig) -> (Vec<f64>, bool, bool) {
    let dot = |a: &[f64], b: &[f64]| {
        let mut s = 0.0;
        for k in 0..a.len() {
            s += a[k] * b[k];
        }
        s
    };
    let norm = |a: &[f64]| dot(a, a).sqrt();
    let fg = repo.foreground(0).unwrap();
    let bg = repo.background(0).unwrap();
    let sims: Vec<f64> = fg.iter().map(|p| dot(f, &p.vector) / (norm(f) * norm(&p.vector) + cfg.epsilon)).collect();
    let sim_bg = dot(f, &bg.vector) / (norm(f) * norm(&bg.vector) + cfg.epsilon);
    let max_fg = sims.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let in_fg = max_fg > cfg.tau_fg;
    let in_bg = sim_bg > cfg.tau_bg;

    let mut exps = Vec::new();
    for s in &sims {
        exps.push(((s - max_fg) / cfg.temperature).exp());
    }
    let mut total = 0.0;
    for e in &exps {
        total += e;
    }
    let mut blend = vec![0.0; f.len()];
    for (e, p) in exps.iter().zip(&fg) {
        let w = e / total;
        for k in 0..f.len() {
            blend[k] += w * p.vector[k];
        }
    }
    let positive: Vec<f64> = (0..f.len()).map(|k| f[k] + cfg.gamma_fg * blend[k]).collect();
    let negative: Vec<f64> = (0..f.len()).map(|k| f[k] + cfg.gamma_bg * bg.vector[k]).collect();
    let out = match (in_fg, in_bg) {
        (false, false) => f.to_vec(),
        (true, false) => positive,
        (false, true) => negative,
        (true, true) => {
            if max_fg >= sim_bg {
                positive
            } else {
                negative
            }
        }
    };
    (out, in_fg, in_bg)
}

fn criterion_3() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let (mut fg_cells, mut bg_cells) = (0usize, 0usize);
    for trial in 0..500 {
        let map = random_map(&mut rng, 6, 6, 4);
        let n_classes = rng.random_range(1..=4);
        let repo = random_repo(&mut rng, &map, n_classes);
        let cfg = EnhancementConfig {
            tau_fg: rng.random_range(-0.5..0.95),
            tau_bg: rng.random_range(-0.5..0.95),
            gamma_fg: rng.random_range(0.0..2.0),
            gamma_bg: rng.random_range(0.0..2.0),
            temperature: rng.random_range(0.05..3.0),
            ..EnhancementConfig::default()
        };
        let ppr = apply_ppr(&map, &repo, &cfg).map_err(|e| e.to_string())?;
        let ncm = apply_ncm(&map, &repo, &cfg).map_err(|e| e.to_string())?;
        let fused = fuse(&map, &ppr, &ncm).map_err(|e| e.to_string())?;
        for cell in 0..map.n_cells() {
            let (expected, in_fg, in_bg) = reference_cell(map.cell(cell), &repo, &cfg);
            fg_cells += in_fg as usize;
            bg_cells += in_bg as usize;
            ensure(ppr.mask.get(cell) == in_fg && ncm.mask.get(cell) == in_bg, || {
                format!("trial {trial} cell {cell}: masks differ from reference")
            })?;
            let got = fused.cell(cell);
            let exact = got.iter().zip(&expected).all(|(a, b)| a.to_bits() == b.to_bits());
            ensure(exact, || format!("trial {trial} cell {cell}: {got:?} vs reference {expected:?}"))?;
        }
    }
    Ok(format!("500 instances exact; {fg_cells} positive-mask and {bg_cells} negative-mask cells"))
}

fn criterion_4() -> Outcome {
    let mut worst = 0.0f64;
    for seed in 0..200u64 {
        let n = 2 + (seed % 7) as usize;
        let d_v = 3 + (seed % 5) as usize;
        let d_t = 4 + (seed / 5 % 6) as usize;
        let d_s = 2 + (seed / 3 % 4) as usize;
        let tau = [0.5, 1.0, 2.0][(seed % 3) as usize];
        let visual = random_matrix(n, d_v, 2 * seed);
        let text = random_matrix(n, d_t, 2 * seed + 1);
        let state = AlignmentState::init(d_v, d_t, d_s, tau, 1000.0, seed).map_err(|e| e.to_string())?;
        let check = check_gradients(&visual, &text, &state, FD_STEP).map_err(|e| e.to_string())?;
        worst = worst.max(check.max_rel_error());
        ensure(check.passes(1e-4), || format!("seed {seed} (N={n}, τ={tau}): {check:?}"))?;
    }
    for v in [-3.5, 0.0, 1.0, 42.0, 1e-300] {
        let s = Matrix::from_rows(&[vec![v]]).map_err(|e| e.to_string())?;
        let (loss, _) = contrastive_loss(&s, 0.1).map_err(|e| e.to_string())?;
        ensure(loss == 0.0, || format!("1×1 loss at S={v} is {loss}"))?;
    }
    Ok(format!("200 instances, max relative error {worst:.2e}; 1×1 loss exactly 0"))
}

/// Runs the pinned acceptance suite at one threshold and returns its metrics.
fn run_suite(dir: &Path, tau: f64) -> Result<(PathBuf, Vec<MetricsRow>, Duration), String> {
    let out = dir.join(format!("tau_{tau}"));
    let tau_s = tau.to_string();
    let start = Instant::now();
    let code = fovea(&["run", "--episodes", "100", "--seed", "0", "--tau", &tau_s, "--out", path_str(&out)]);
    let elapsed = start.elapsed();
    ensure(code == 0, || format!("run at τ={tau} exited {code}"))?;
    let rows = read_metrics(&out.join("metrics.csv"));
    ensure(rows.len() == 100, || format!("expected 100 episodes, got {}", rows.len()))?;
    Ok((out, rows, elapsed))
}

struct SuiteRuns {
    default_out: PathBuf,
    default_rows: Vec<MetricsRow>,
    default_time: Duration,
    sweep: Vec<(f64, f64)>,
}

fn suite_runs(dir: &Path) -> Result<SuiteRuns, String> {
    let mut sweep = Vec::new();
    let mut default = None;
    for tau in TAU_SWEEP {
        let (out, rows, elapsed) = run_suite(dir, tau)?;
        sweep.push((tau, rows.iter().map(|r| r.f1_enhanced).sum::<f64>() / rows.len() as f64));
        if tau == 0.75 {
            default = Some((out, rows, elapsed));
        }
    }
    let (default_out, default_rows, default_time) = default.expect("0.75 is in the sweep");
    Ok(SuiteRuns {
        default_out,
        default_rows,
        default_time,
        sweep,
    })
}

fn criterion_5(runs: &SuiteRuns) -> Outcome {
    let rows = &runs.default_rows;
    let reduced = rows.iter().filter(|r| r.dist_enhanced < r.dist_baseline).count();
    let mean_delta = rows.iter().map(|r| r.dist_enhanced - r.dist_baseline).sum::<f64>() / rows.len() as f64;
    ensure(reduced >= 90, || format!("distance reduced in only {reduced}/100 episodes"))?;
    ensure(mean_delta < 0.0, || format!("mean delta {mean_delta} is not negative"))?;
    ensure(runs.default_time < Duration::from_secs(300), || format!("suite took {:?}", runs.default_time))?;
    check_golden(&runs.default_out.join("metrics.csv"), "acceptance_metrics.csv")?;
    check_golden(&runs.default_out.join("delta.csv"), "acceptance_delta.csv")?;
    Ok(format!(
        "distance reduced in {reduced}/100, mean delta {mean_delta:.4}, golden match, {:.1?}",
        runs.default_time
    ))
}

fn criterion_6(runs: &SuiteRuns) -> Outcome {
    let rows = &runs.default_rows;
    let wins = rows.iter().filter(|r| r.f1_enhanced >= r.f1_baseline).count();
    let base = rows.iter().map(|r| r.f1_baseline).sum::<f64>() / rows.len() as f64;
    let enh = rows.iter().map(|r| r.f1_enhanced).sum::<f64>() / rows.len() as f64;
    ensure(wins >= 85, || format!("enhanced F1 ≥ baseline in only {wins}/100 episodes"))?;
    Ok(format!("enhanced F1 ≥ baseline in {wins}/100 (mean {base:.4} → {enh:.4})"))
}

fn criterion_7(runs: &SuiteRuns) -> Outcome {
    let table: Vec<String> = runs.sweep.iter().map(|(t, f)| format!("{t}:{f:.4}")).collect();
    let (best_idx, _) = runs
        .sweep
        .iter()
        .enumerate()
        .fold((0, f64::NEG_INFINITY), |acc, (i, (_, f))| if *f > acc.1 { (i, *f) } else { acc });
    let interior = best_idx != 0 && best_idx != runs.sweep.len() - 1;
    let strictly = interior
        && runs.sweep[best_idx].1 > runs.sweep[0].1
        && runs.sweep[best_idx].1 > runs.sweep[runs.sweep.len() - 1].1;
    ensure(strictly, || format!("maximum at τ={} [{}]", runs.sweep[best_idx].0, table.join(" ")))?;
    Ok(format!("maximum at τ={} [{}]", runs.sweep[best_idx].0, table.join(" ")))
}

fn criterion_8() -> Outcome {
    let suite = SuiteConfig::default();
    let episode = suite.generate(0).map_err(|e| e.to_string())?;
    let repo = accumulate_from_support(&episode.support, RepositoryMetadata { seed: 0, shots: 5 }).map_err(|e| e.to_string())?;
    let encoder = suite.encoder().map_err(|e| e.to_string())?;
    let embedder = HashNgramEmbedder::default();
    let state = AlignmentState::init(suite.episode.dim, embedder.dim, 32, 0.1, 1000.0, 0).map_err(|e| e.to_string())?;
    let census = system_census(&repo, &encoder, &state, &embedder);
    let trainable = census.trainable_components();
    ensure(trainable == ["tsa.proj_v", "tsa.proj_t"], || format!("trainable components: {trainable:?}"))?;
    for name in ["ppr", "ncm", "prototype_repository", "toy_encoder"] {
        let entry = census.entries.iter().find(|e| e.component == name).ok_or(format!("{name} missing from census"))?;
        ensure(entry.count.trainable == 0, || format!("{name} reports {} trainable", entry.count.trainable))?;
    }
    let expected = suite.episode.dim * 32 + embedder.dim * 32;
    ensure(census.total_trainable() == expected, || {
        format!("{} trainable, expected {expected}", census.total_trainable())
    })?;
    Ok(format!("{expected} trainable values, all in tsa.proj_v / tsa.proj_t"))
}

fn run_property(cases: u32, name: &str, test: impl Fn(&mut TestRunner) -> Result<(), String>) -> Result<u32, String> {
    let mut runner = TestRunner::new(Config {
        cases,
        failure_persistence: None,
        ..Config::default()
    });
    test(&mut runner).map_err(|e| format!("{name}: {e}"))?;
    Ok(cases)
}

fn small_episode_spec() -> impl Strategy<Value = (EpisodeSpec, f64, f64, u64)> {
    (6usize..10, 1usize..4, 1usize..3, 0.0f64..1.0, 0.0f64..2.0, any::<u64>()).prop_map(|(side, classes, shots, clutter, style, seed)| {
        let spec = EpisodeSpec {
            height: side,
            width: side,
            dim: 4,
            n_classes: classes,
            shots,
            n_query: 1,
            min_side: 2,
            max_side: 3,
            ..EpisodeSpec::default()
        };
        (spec, clutter, style, seed)
    })
}

fn criterion_9() -> Outcome {
    let start = Instant::now();
    let mut total = 0u32;
    let sim_field = (1usize..6, 1usize..6, 1usize..5, 1usize..5).prop_flat_map(|(h, w, d, c)| {
        (
            proptest::collection::vec(-3.0f64..3.0, h * w * d),
            proptest::collection::vec(proptest::collection::vec(-3.0f64..3.0, d), c),
            Just((h, w, d)),
        )
    });
    let protos_of = |vs: &[Vec<f64>]| -> Vec<Prototype> {
        vs.iter()
            .enumerate()
            .map(|(c, v)| Prototype {
                vector: v.clone(),
                kind: PrototypeKind::Foreground(c),
                scale_id: 0,
                support_count: 1,
            })
            .collect()
    };

    total += run_property(2000, "mask monotonicity", |r| {
        r.run(&(sim_field.clone(), -1.0f64..1.0, -1.0f64..1.0), |((data, vs, (h, w, d)), a, b)| {
            let map = FeatureMap::new(h, w, d, 0, data).unwrap();
            let protos = protos_of(&vs);
            let refs: Vec<&Prototype> = protos.iter().collect();
            let sim = cosine_similarity_field(&map, &refs, 1e-8).unwrap();
            let (lo, hi) = (a.min(b), a.max(b));
            prop_assert!(threshold_mask(&sim, hi).is_subset_of(&threshold_mask(&sim, lo)));
            Ok(())
        })
        .map_err(|e| e.to_string())
    })?;

    total += run_property(2000, "weight normalization", |r| {
        r.run(&(sim_field.clone(), 0.01f64..10.0), |((data, vs, (h, w, d)), t)| {
            let map = FeatureMap::new(h, w, d, 0, data).unwrap();
            let protos = protos_of(&vs);
            let refs: Vec<&Prototype> = protos.iter().collect();
            let weights = class_weights(&cosine_similarity_field(&map, &refs, 1e-8).unwrap(), t).unwrap();
            for cell in 0..map.n_cells() {
                let ws = weights.at(cell);
                prop_assert!(ws.iter().all(|w| *w >= 0.0));
                prop_assert!((ws.iter().sum::<f64>() - 1.0).abs() < 1e-9);
            }
            Ok(())
        })
        .map_err(|e| e.to_string())
    })?;

    total += run_property(2000, "cosine bounds", |r| {
        let pair = (1usize..32).prop_flat_map(|d| {
            (proptest::collection::vec(-1e3f64..1e3, d), proptest::collection::vec(-1e3f64..1e3, d))
        });
        r.run(&pair, |(f, p)| {
            let c = cosine(&f, &p, 1e-8);
            prop_assert!(c.abs() <= 1.0, "cosine {c}");
            Ok(())
        })
        .map_err(|e| e.to_string())
    })?;

    total += run_property(2000, "loss nonnegativity", |r| {
        let square = (1usize..8).prop_flat_map(|n| (proptest::collection::vec(-50.0f64..50.0, n * n), Just(n)));
        r.run(&(square, 0.01f64..100.0), |((data, n), tau)| {
            let s = Matrix::new(n, n, data).unwrap();
            let (loss, _) = contrastive_loss(&s, tau).unwrap();
            prop_assert!(loss >= 0.0, "loss {loss}");
            Ok(())
        })
        .map_err(|e| e.to_string())
    })?;

    total += run_property(1500, "determinism", |r| {
        r.run(&small_episode_spec(), |(spec, clutter, style, seed)| {
            let shift = ShiftSpec::with_style_magnitude(spec.dim, style, clutter, 0.3, seed);
            let a = generate_episode(&shift, &spec);
            let b = generate_episode(&shift, &spec);
            match (a, b) {
                (Ok(a), Ok(b)) => {
                    prop_assert_eq!(&a.support, &b.support);
                    prop_assert_eq!(&a.query, &b.query);
                    let enc = ToyEncoder::new(spec.dim, 2, 0.25, seed).unwrap();
                    let x = encode_with_attention(a.query[0].map(0).unwrap(), &enc).unwrap();
                    let y = encode_with_attention(b.query[0].map(0).unwrap(), &enc).unwrap();
                    prop_assert_eq!(x, y);
                }
                (Err(a), Err(b)) => prop_assert_eq!(a.to_string(), b.to_string()),
                _ => prop_assert!(false, "one of two identical calls failed"),
            }
            Ok(())
        })
        .map_err(|e| e.to_string())
    })?;

    total += run_property(1000, "config serialization round trip", |r| {
        let cfg = (any::<u64>(), 1usize..500, -0.99f64..1.0, 0.0f64..3.0, 0.01f64..5.0, 0.0f64..1.0, any::<bool>());
        r.run(&cfg, |(seed, episodes, tau, gamma, t, clutter, enhance)| {
            let mut cfg = RunConfig {
                seed,
                episodes,
                enhance,
                ..RunConfig::default()
            };
            cfg.enhancement.tau_fg = tau;
            cfg.enhancement.gamma_bg = gamma;
            cfg.enhancement.temperature = t;
            cfg.suite.clutter_level = clutter;
            let text = fovea_cli::config::to_json(&cfg).unwrap();
            let back: RunConfig = serde_json::from_str(&text).unwrap();
            prop_assert_eq!(&back, &cfg);
            prop_assert_eq!(fovea_cli::config::to_json(&back).unwrap(), text);
            Ok(())
        })
        .map_err(|e| e.to_string())
    })?;

    let tmp = TempDir::new().map_err(|e| e.to_string())?;
    total += run_property(12, "config echo reruns", |r| {
        let cfg = (0u64..1000, 0.3f64..0.95, 0.0f64..1.5, 0.0f64..0.6);
        r.run(&cfg, |(seed, tau, gamma, clutter)| {
            let first = tmp.path().join(format!("first_{seed}_{tau}"));
            let second = tmp.path().join(format!("second_{seed}_{tau}"));
            let (tau, gamma, clutter) = (tau.to_string(), gamma.to_string(), clutter.to_string());
            let args = [
                "run", "--episodes", "2", "--seed", &seed.to_string(), "--tau", &tau, "--gamma", &gamma,
                "--clutter", &clutter, "--out", path_str(&first),
            ];
            prop_assert_eq!(fovea(&args), 0);
            let echoed = first.join(CONFIG_FILE);
            prop_assert_eq!(fovea(&["run", "--config", path_str(&echoed), "--out", path_str(&second)]), 0);
            for entry in fs::read_dir(&first).unwrap() {
                let name = entry.unwrap().file_name();
                prop_assert_eq!(fs::read(first.join(&name)).unwrap(), fs::read(second.join(&name)).unwrap());
            }
            let _ = fs::remove_dir_all(&first);
            let _ = fs::remove_dir_all(&second);
            Ok(())
        })
        .map_err(|e| e.to_string())
    })?;

    let elapsed = start.elapsed();
    ensure(total >= 10_000, || format!("only {total} cases"))?;
    ensure(elapsed < Duration::from_secs(120), || format!("took {elapsed:?}"))?;
    Ok(format!("{total} randomized cases across 7 property suites, {elapsed:.1?}"))
}

fn criterion_10(dir: &Path) -> Outcome {
    let out = dir.join("align");
    let code = fovea(&["align", "--seed", "0", "--steps", "200", "--out", path_str(&out)]);
    ensure(code == 0, || format!("align exited {code}"))?;
    let mut r = csv::Reader::from_path(out.join("loss_trace.csv")).map_err(|e| e.to_string())?;
    let trace: Vec<f64> = r.records().map(|rec| rec.unwrap()[1].parse().unwrap()).collect();
    ensure(trace.len() == 201, || format!("trace has {} entries", trace.len()))?;
    if let Some(k) = trace.windows(2).position(|w| w[1] >= w[0]) {
        return Err(format!("loss did not decrease at step {}: {} -> {}", k + 1, trace[k], trace[k + 1]));
    }
    check_golden(&out.join("loss_trace.csv"), "align_loss_trace.csv")?;
    let grad = dir.join("align_grad");
    let code = fovea(&["align", "--seed", "0", "--steps", "0", "--check-grad", "--out", path_str(&grad)]);
    ensure(code == 0, || format!("--check-grad exited {code}"))?;
    Ok(format!(
        "loss {:.6} → {:.6}, strictly decreasing over 200 steps, golden trace match, --check-grad passes",
        trace[0], trace[200]
    ))
}

fn report(lines: &mut Vec<String>, n: usize, name: &str, outcome: std::thread::Result<Outcome>) -> bool {
    let outcome = outcome.unwrap_or_else(|p| {
        Err(p
            .downcast_ref::<String>()
            .cloned()
            .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
            .unwrap_or_else(|| "panicked".into()))
    });
    let (pass, line) = match outcome {
        Ok(detail) => (true, format!("criterion {n:>2} PASS  {name}: {detail}")),
        Err(detail) => (false, format!("criterion {n:>2} FAIL  {name}: {detail}")),
    };
    println!("{line}");
    lines.push(line);
    pass
}

fn main() {
    let tmp = TempDir::new().expect("temp dir");
    let catch = |f: &dyn Fn() -> Outcome| panic::catch_unwind(AssertUnwindSafe(f));
    let mut ok = true;
    let mut lines = Vec::new();
    ok &= report(&mut lines, 1, "attention-distance oracle", catch(&criterion_1));
    ok &= report(&mut lines, 2, "identity pipeline", catch(&criterion_2));
    ok &= report(&mut lines, 3, "PPR/NCM reference equivalence", catch(&criterion_3));
    ok &= report(&mut lines, 4, "gradient correctness", catch(&criterion_4));
    match panic::catch_unwind(AssertUnwindSafe(|| suite_runs(tmp.path()))) {
        Ok(Ok(runs)) => {
            ok &= report(&mut lines, 5, "attention-distance reduction", Ok(criterion_5(&runs)));
            ok &= report(&mut lines, 6, "detection improvement", Ok(criterion_6(&runs)));
            ok &= report(&mut lines, 7, "threshold sensitivity shape", Ok(criterion_7(&runs)));
        }
        failed => {
            let err = match failed {
                Ok(Err(e)) => e,
                _ => "suite run panicked".into(),
            };
            for (n, name) in [(5, "attention-distance reduction"), (6, "detection improvement"), (7, "threshold sensitivity shape")] {
                ok &= report(&mut lines, n, name, Ok(Err(err.clone())));
            }
        }
    }
    ok &= report(&mut lines, 8, "zero-parameter census", catch(&criterion_8));
    ok &= report(&mut lines, 9, "property suites", catch(&criterion_9));
    ok &= report(&mut lines, 10, "alignment descent", catch(&|| criterion_10(tmp.path())));
    println!("\n==== acceptance summary ====");
    for line in &lines {
        println!("{line}");
    }
    if !ok {
        std::process::exit(1);
    }
}
