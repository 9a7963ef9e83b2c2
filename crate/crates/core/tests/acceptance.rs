//! End-to-end acceptance checks. Prints one PASS/FAIL line per criterion and
//! always exits 0, so failures are reported rather than hidden behind a
//! panic. By default only the quick criteria run; `PTSD_ACCEPTANCE=all` or a
//! list such as `3,5` selects others. Criteria 3-5 train dozens of networks
//! and take hours on one core.

use std::collections::BTreeMap;
use std::path::PathBuf;
use std::time::Instant;

use ndarray::Array2;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use ptsd_core::diffusion::{
    jacobian_trace, log_likelihood, GaussianOracle, ScoreField, TraceEstimator,
};
use ptsd_core::guidance::{GuidanceConfig, GuidedDenoiser};
use ptsd_core::mcmc::pt_swap_probability;
use ptsd_core::metrics::{wasserstein2, EvalReport};
use ptsd_core::network::{Denoiser, NetworkConfig, Preconditioning};
use ptsd_core::pipeline::{
    apply_override, evaluate_model, execute, method_name, new_manifest, run_ptsd, Discard, Method, RunConfig,
    RunManifest, StageKind, TemperedGaussianTrainer,
};
use ptsd_core::resampling::{effective_sample_size, normalized_weights, truncate_weights};
use ptsd_core::{make_target, CounterSnapshot, TargetSpec};

type Check = Result<(bool, String), String>;

fn presets_dir() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../presets")
}

fn load_preset(name: &str, overrides: &[String]) -> Result<RunConfig, String> {
    let path = presets_dir().join(format!("{name}.json"));
    let mut doc: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(&path).map_err(|e| format!("{}: {e}", path.display()))?)
            .map_err(|e| e.to_string())?;
    for o in overrides {
        apply_override(&mut doc, o).map_err(|e| e.to_string())?;
    }
    RunConfig::from_value(doc).map_err(|e| e.to_string())
}

/// Runs a preset and evaluates its deliverable model.
fn run_and_evaluate(name: &str, overrides: &[String], method: Method) -> Result<(RunManifest, EvalReport), String> {
    let cfg = load_preset(name, overrides)?;
    let target = make_target(&cfg.target).map_err(|e| e.to_string())?;
    let label = match method {
        Method::Ptsd => method_name(&cfg),
        Method::Ptdm => "ptdm".into(),
    };
    let mut manifest = new_manifest(&cfg, &label, overrides);
    let t0 = Instant::now();
    let model = execute(&target, &cfg, method, &mut manifest, &mut Discard).map_err(|e| e.to_string())?;
    let eval = evaluate_model(&target, &cfg, &model).map_err(|e| e.to_string())?;
    eprintln!(
        "    {name} {label} seed {}: W2 {:.3} TVD {:.3} calls {} ({:.0}s)",
        cfg.seed,
        eval.report.w2,
        eval.report.tvd,
        manifest.calls.density_calls,
        t0.elapsed().as_secs_f64()
    );
    Ok((manifest, eval.report))
}

fn seed_override(seed: u64) -> Vec<String> {
    vec![format!("seed={seed}")]
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

/// Criterion 1: analytic tempered-Gaussian denoisers through the whole loop,
/// over several seeds.
fn gaussian_oracle_loop() -> Check {
    let t0 = Instant::now();
    let (mut worst_var, mut worst_mae, mut all_scored) = (0.0f64, 0.0f64, true);
    for seed in 0..5u64 {
        let (variance, mae, scored) = gaussian_loop_once(seed)?;
        eprintln!("    seed {seed}: variance {variance:.4}, log-density MAE {mae:.4}");
        worst_var = worst_var.max((variance - 1.0).abs());
        worst_mae = worst_mae.max(mae);
        all_scored &= scored;
    }
    let secs = t0.elapsed().as_secs_f64();
    let pass = worst_var <= 0.03 && worst_mae < 0.05 && secs < 60.0 && all_scored;
    Ok((
        pass,
        format!("5 seeds: worst |variance - 1| {worst_var:.4} (<= 0.03), worst log-density MAE {worst_mae:.4} (< 0.05), {secs:.1}s (< 60s)"),
    ))
}

fn gaussian_loop_once(seed: u64) -> Result<(f64, f64, bool), String> {
    let cfg = load_preset("gaussian-k3", &seed_override(seed))?;
    let target = make_target(&cfg.target).map_err(|e| e.to_string())?;
    let TargetSpec::Gaussian { dim, scale } = cfg.target else { return Err("preset is not gaussian".into()) };
    let mut manifest = new_manifest(&cfg, "ptsd", &[]);
    let out = run_ptsd(&target, &cfg, &TemperedGaussianTrainer { scale }, &mut manifest, &mut Discard)
        .map_err(|e| e.to_string())?;
    let x = out.buffers[&1].samples();
    let variance = x.iter().map(|v| v * v).sum::<f64>() / x.len() as f64 - x.mean().unwrap_or(0.0).powi(2);
    let model = out.models.deliverable().ok_or("no level-1 model")?;
    let probe_rows = x.slice(ndarray::s![..2000.min(x.nrows()), ..]);
    let ll = log_likelihood(model, probe_rows, &cfg.schedule, TraceEstimator::Hutchinson { probes: 1 }, seed)
        .map_err(|e| e.to_string())?;
    let analytic = GaussianOracle::tempered(dim, scale, 1.0);
    let errors: Vec<f64> = ll
        .iter()
        .zip(probe_rows.outer_iter())
        .filter_map(|(l, row)| l.map(|l| (l - analytic.log_density(&row.to_vec())).abs()))
        .collect();
    Ok((variance, mean(&errors), errors.len() == probe_rows.nrows()))
}

/// Criterion 2: guided score of tempered Gaussians in closed form.
fn guidance_oracle() -> Check {
    let sigma = 1.0;
    let max_error = |t1: f64, t2: f64| -> Result<(f64, f64), String> {
        let cfg = GuidanceConfig::new(t1, t2, 1.0).map_err(|e| e.to_string())?;
        let guided = GuidedDenoiser::new(GaussianOracle::tempered(1, 1.0, t1), GaussianOracle::tempered(1, 1.0, t2), cfg)
            .map_err(|e| e.to_string())?;
        let field = ScoreField::new(&guided);
        let (mut vs_closed, mut vs_exact) = (0.0f64, 0.0f64);
        for i in 0..=600 {
            let x = -3.0 + 0.01 * i as f64;
            let s = field.score(&[x], sigma).map_err(|e| e.to_string())?[0];
            let w = cfg.weight();
            let closed = -(1.0 + w) * x / (t1 + sigma * sigma) + w * x / (t2 + sigma * sigma);
            vs_closed = vs_closed.max((s - closed).abs());
            vs_exact = vs_exact.max((s + x / (1.0 + sigma * sigma)).abs());
        }
        Ok((vs_closed, vs_exact))
    };
    let cfg = GuidanceConfig::new(2.0, 4.0, 1.0).map_err(|e| e.to_string())?;
    let guided = GuidedDenoiser::new(GaussianOracle::tempered(1, 1.0, 2.0), GaussianOracle::tempered(1, 1.0, 4.0), cfg)
        .map_err(|e| e.to_string())?;
    let field = ScoreField::new(&guided);
    let mut dev = 0.0f64;
    for i in 0..=600 {
        let x = -3.0 + 0.01 * i as f64;
        dev = dev.max((field.score(&[x], sigma).map_err(|e| e.to_string())?[0] + 0.4 * x).abs());
    }
    let (closed_full, err_full) = max_error(2.0, 4.0)?;
    let (closed_half, err_half) = max_error(1.5, 2.5)?;
    let pass = dev <= 1e-12 && closed_full <= 1e-12 && closed_half <= 1e-12 && err_half <= 0.5 * err_full;
    Ok((pass, format!("max |s + 0.4x| = {dev:.1e}; max error vs exact {err_full:.4} -> {err_half:.4} after halving the gaps")))
}

/// Criterion 3: GMM-40 desk reproduction at the published settings.
fn gmm_desk(cache: &mut BTreeMap<u64, (RunManifest, EvalReport)>) -> Check {
    let (manifest, report) = gmm_ptsd(cache, 0)?;
    let calls = manifest.calls.density_calls;
    let pass = report.w2 <= 3.0 && report.tvd <= 0.15 && calls <= 2_000_000;
    Ok((
        pass,
        format!(
            "W2 {:.3} (<= 3.0), TVD {:.3} (<= 0.15), {calls} density calls (<= 2e6; {} with energy and gradient counted apart)",
            report.w2,
            report.tvd,
            manifest.calls.total()
        ),
    ))
}

fn gmm_ptsd(cache: &mut BTreeMap<u64, (RunManifest, EvalReport)>, seed: u64) -> Result<(RunManifest, EvalReport), String> {
    if let Some(hit) = cache.get(&seed) {
        return Ok(hit.clone());
    }
    let run = run_and_evaluate("gmm40", &seed_override(seed), Method::Ptsd)?;
    cache.insert(seed, run.clone());
    Ok(run)
}

/// Criterion 4: ablation ordering on the 8-dimensional many-well.
fn ablation_ordering() -> Check {
    let mut w2: BTreeMap<&str, Vec<f64>> = BTreeMap::new();
    for seed in 0..3u64 {
        for (label, extra) in [("full", None), ("no_is", Some("ablation=no_is")), ("no_guidance", Some("ablation=no_guidance"))] {
            let mut o = seed_override(seed);
            o.extend(extra.map(String::from));
            let (_, report) = run_and_evaluate("mw8", &o, Method::Ptsd)?;
            w2.entry(label).or_default().push(report.w2);
        }
    }
    let (full, no_is, no_guidance) = (mean(&w2["full"]), mean(&w2["no_is"]), mean(&w2["no_guidance"]));
    let pass = full < no_is && no_is < no_guidance;
    Ok((pass, format!("mean W2 full {full:.3} < no-IS {no_is:.3} < no-guidance {no_guidance:.3}")))
}

/// Criterion 5: non-inferiority against full-ladder PT plus one model.
fn ptdm_comparison(cache: &mut BTreeMap<u64, (RunManifest, EvalReport)>) -> Check {
    let (mut ptsd, mut ptdm, mut notes) = (Vec::new(), Vec::new(), Vec::new());
    for seed in 0..3u64 {
        let (m_ptsd, r_ptsd) = gmm_ptsd(cache, seed)?;
        let (m_ptdm, r_ptdm) = run_and_evaluate("gmm40", &seed_override(seed), Method::Ptdm)?;
        notes.push(format!(
            "seed {seed}: {:.3} vs {:.3} ({} vs {} calls)",
            r_ptsd.w2, r_ptdm.w2, m_ptsd.calls.density_calls, m_ptdm.calls.density_calls
        ));
        if m_ptdm.calls.density_calls > m_ptsd.calls.density_calls {
            return Ok((false, format!("baseline exceeded the matched budget: {}", notes.join("; "))));
        }
        ptsd.push(r_ptsd.w2);
        ptdm.push(r_ptdm.w2);
    }
    let (a, b) = (mean(&ptsd), mean(&ptdm));
    Ok((a <= b + 0.5, format!("mean W2 PTSD {a:.3} <= PT+DM {b:.3} + 0.5; {}", notes.join("; "))))
}

/// Criterion 6: numerical kernels.
fn kernel_suite() -> Check {
    let t0 = Instant::now();
    let mut failures = Vec::new();
    let mut check = |name: &str, ok: bool| {
        if !ok {
            failures.push(name.to_string());
        }
    };

    // Parameter gradient and input JVP against central differences.
    let net = Denoiser::new(3, &NetworkConfig { width: 12, hidden_layers: 2, ..Default::default() }, 0.8, 4)
        .map_err(|e| e.to_string())?;
    let mut net = net;
    for (i, p) in net.params_mut().iter_mut().enumerate() {
        *p += 0.05 * ((i * 7919 % 13) as f64 - 6.0) / 6.0;
    }
    let clean = Array2::from_shape_fn((4, 3), |(i, j)| ((i * 3 + j) as f64 * 0.37).sin());
    let noise = Array2::from_shape_fn((4, 3), |(i, j)| ((i + 2 * j) as f64 * 0.91).cos());
    let sigmas = [0.1, 0.7, 2.0, 9.0];
    let (_, grads) = net.loss_and_param_grads(clean.view(), &sigmas, noise.view()).map_err(|e| e.to_string())?;
    let h = 1e-6;
    let mut worst = 0.0f64;
    for k in (0..net.num_params()).step_by(7) {
        let mut plus = net.clone();
        plus.params_mut()[k] += h;
        let mut minus = net.clone();
        minus.params_mut()[k] -= h;
        let lp = plus.loss_and_param_grads(clean.view(), &sigmas, noise.view()).map_err(|e| e.to_string())?.0;
        let lm = minus.loss_and_param_grads(clean.view(), &sigmas, noise.view()).map_err(|e| e.to_string())?.0;
        let fd = (lp - lm) / (2.0 * h);
        worst = worst.max((fd - grads[k]).abs() / grads[k].abs().max(1e-3));
    }
    check("parameter gradient", worst < 1e-4);
    let (x, v) = ([0.3, -1.2, 0.8], [0.5, 0.1, -0.7]);
    let jvp = net.input_jvp(&x, 0.9, &v).map_err(|e| e.to_string())?;
    let shifted = |s: f64| -> Result<Vec<f64>, String> {
        let xs: Vec<f64> = x.iter().zip(&v).map(|(a, b)| a + s * b).collect();
        net.forward(&xs, 0.9).map_err(|e| e.to_string())
    };
    let (fp, fm) = (shifted(h)?, shifted(-h)?);
    let jvp_err = (0..3)
        .map(|i| ((fp[i] - fm[i]) / (2.0 * h) - jvp[i]).abs() / jvp[i].abs().max(1e-3))
        .fold(0.0, f64::max);
    check("input JVP", jvp_err < 1e-4);

    // Swap acceptance closed form.
    check("swap probability exp(-1)", (pt_swap_probability(0.0, 2.0, 1.0, 2.0) - (-1f64).exp()).abs() < 1e-15);

    // Hungarian W2 against exhaustive permutations.
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for n in 1..=6 {
        let a = Array2::from_shape_fn((n, 2), |_| rand::Rng::random_range(&mut rng, -3.0..3.0));
        let b = Array2::from_shape_fn((n, 2), |_| rand::Rng::random_range(&mut rng, -3.0..3.0));
        let fast = wasserstein2(a.view(), b.view(), None).map_err(|e| e.to_string())?;
        let mut best = f64::INFINITY;
        let mut perm: Vec<usize> = (0..n).collect();
        permutations(&mut perm, 0, &mut |p| {
            let c: f64 = (0..n).map(|i| (&a.row(i) - &b.row(p[i])).mapv(|d| d * d).sum()).sum();
            best = best.min(c);
        });
        check("hungarian vs exhaustive", fast == (best / n as f64).sqrt());
    }

    // Rademacher trace on a linear field.
    let oracle = GaussianOracle::new(5, 2.0);
    let pts = Array2::from_shape_fn((6, 5), |(i, j)| (i as f64 - j as f64) * 0.3);
    let tr = jacobian_trace(&oracle, pts.view(), 1.5, TraceEstimator::Hutchinson { probes: 1 }, 1).map_err(|e| e.to_string())?;
    check("rademacher trace", tr.iter().all(|t| (t - 5.0 * oracle.shrinkage(1.5)).abs() < 1e-12));

    // Preconditioning: unit-variance network input and training target.
    for sigma in [0.002, 0.1, 1.0, 7.0, 40.0] {
        let sd = 1.3;
        let p = Preconditioning::new(sigma, sd);
        let input = p.c_in * p.c_in * (sd * sd + sigma * sigma);
        let target = ((1.0 - p.c_skip).powi(2) * sd * sd + p.c_skip.powi(2) * sigma * sigma) / (p.c_out * p.c_out);
        check("preconditioning variance", (input - 1.0).abs() < 1e-12 && (target - 1.0).abs() < 1e-12);
    }

    // Importance weights, truncation and ESS.
    let w = normalized_weights(&[2f64.ln(), 0.0], &[0.0, 0.0]).map_err(|e| e.to_string())?.weights;
    check("weights 2/3, 1/3", (w[0] - 2.0 / 3.0).abs() < 1e-15 && (w[1] - 1.0 / 3.0).abs() < 1e-15);
    let (t, _) = truncate_weights(&[0.7, 0.2, 0.1], 0.5).map_err(|e| e.to_string())?;
    check("truncation 0.4, 0.4, 0.2", t.iter().zip([0.4, 0.4, 0.2]).all(|(a, b)| (a - b).abs() < 1e-15));
    check("ESS bounds", (effective_sample_size(&[0.25; 4]) - 4.0).abs() < 1e-12 && effective_sample_size(&[1.0, 0.0, 0.0]) == 1.0);
    for _ in 0..50 {
        let raw: Vec<f64> = (0..20).map(|_| rand::Rng::random_range(&mut rng, 0.0..1.0f64).powi(4)).collect();
        let total: f64 = raw.iter().sum();
        let ess = effective_sample_size(&raw.iter().map(|r| r / total).collect::<Vec<_>>());
        check("ESS in [1, n]", (1.0 - 1e-12..=20.0 + 1e-12).contains(&ess));
    }

    let secs = t0.elapsed().as_secs_f64();
    failures.dedup();
    let pass = failures.is_empty() && secs < 30.0;
    Ok((pass, format!("gradient rel. err {worst:.1e}, JVP rel. err {jvp_err:.1e}, {secs:.2}s (< 30s){}", if failures.is_empty() { String::new() } else { format!("; failed: {}", failures.join(", ")) })))
}

fn permutations(p: &mut Vec<usize>, k: usize, visit: &mut impl FnMut(&[usize])) {
    if k == p.len() {
        visit(p);
        return;
    }
    for i in k..p.len() {
        p.swap(k, i);
        permutations(p, k + 1, visit);
        p.swap(k, i);
    }
}

/// Closed-form stage counts of a progressive run with full refinement.
fn reconcile(cfg: &RunConfig, m: &RunManifest) -> Result<(), String> {
    let pt = &cfg.initial_pt;
    let b = cfg.buffer_size as u64;
    let initial = 2 * pt.chains as u64 * (pt.steps as u64 + 1);
    let joint = |n: u64| CounterSnapshot { energy_calls: n, gradient_calls: n, density_calls: n };
    let mut expected: Vec<(StageKind, CounterSnapshot)> = vec![(StageKind::InitialPt, joint(initial))];
    let mut mid_rows = (pt.chains * ((pt.steps - pt.burn_in) / pt.interval)) as u64;
    for _ in 3..=cfg.ladder.levels {
        let pairs = if cfg.refine.steps > 0 { b.min(mid_rows) } else { 0 };
        let moves = 2 * pairs * cfg.refine.steps as u64;
        expected.push((StageKind::Resample, CounterSnapshot { energy_calls: b, gradient_calls: 0, density_calls: b }));
        expected.push((
            StageKind::Refine,
            CounterSnapshot { energy_calls: moves, gradient_calls: pairs + moves, density_calls: pairs + moves },
        ));
        mid_rows = b;
    }
    let counted: Vec<(StageKind, CounterSnapshot)> =
        m.stages.iter().filter(|s| s.calls.total() > 0).map(|s| (s.stage, s.calls)).collect();
    if counted != expected {
        return Err(format!("stage counts {counted:?} differ from {expected:?}"));
    }
    let total = expected.iter().fold(CounterSnapshot::default(), |acc, (_, c)| acc.add(c));
    if total != m.calls {
        return Err(format!("total {:?} differs from closed form {total:?}", m.calls));
    }
    Ok(())
}

/// Criterion 7: every preset's ledger closes; the GMM preset reconciles.
fn budget_ledger(cache: &BTreeMap<u64, (RunManifest, EvalReport)>) -> Check {
    let mut notes = Vec::new();
    let mut pass = true;
    // Target calls do not depend on training length, so the ledgers are
    // audited on runs with minimal training.
    let quick = vec!["training.iterations=2".to_string(), "baseline.iterations=2".to_string()];
    let mut entries: Vec<String> = std::fs::read_dir(presets_dir())
        .map_err(|e| e.to_string())?
        .filter_map(|e| e.ok())
        .filter_map(|e| e.path().file_stem().and_then(|s| s.to_str()).map(String::from))
        .collect();
    entries.sort();
    for name in entries {
        let cfg = load_preset(&name, &quick)?;
        let target = make_target(&cfg.target).map_err(|e| e.to_string())?;
        let methods: &[Method] = if cfg.baseline.is_some() { &[Method::Ptsd, Method::Ptdm] } else { &[Method::Ptsd] };
        for &method in methods {
            let mut m = new_manifest(&cfg, "audit", &quick);
            execute(&target, &cfg, method, &mut m, &mut Discard).map_err(|e| format!("{name}: {e}"))?;
            pass &= m.is_closed();
            notes.push(format!("{name}/{method:?} {} {}", if m.is_closed() { "closed" } else { "OPEN" }, m.calls.density_calls));
            if name == "gmm40" && method == Method::Ptsd {
                if let Err(e) = reconcile(&cfg, &m) {
                    pass = false;
                    notes.push(format!("gmm40 reconciliation: {e}"));
                } else {
                    notes.push("gmm40 stages match the closed form".into());
                }
            }
        }
    }
    for (seed, (m, _)) in cache {
        let cfg = RunConfig::from_value(m.config.clone()).map_err(|e| e.to_string())?;
        let ok = m.is_closed() && reconcile(&cfg, m).is_ok();
        pass &= ok;
        notes.push(format!("full gmm40 seed {seed} {}", if ok { "reconciled" } else { "MISMATCH" }));
    }
    Ok((pass, notes.join("; ")))
}

/// Criteria cheap enough for every `cargo test` run.
const QUICK: [u32; 4] = [1, 2, 6, 7];

fn main() {
    let selected: Vec<u32> = match std::env::var("PTSD_ACCEPTANCE").as_deref() {
        Ok("all") => (1..=7).collect(),
        Ok(list) => list.split(',').filter_map(|s| s.trim().parse().ok()).collect(),
        Err(_) => QUICK.to_vec(),
    };
    let mut cache = BTreeMap::new();
    let mut summary = Vec::new();
    for n in [6, 2, 1, 3, 5, 4, 7] {
        if !selected.contains(&n) {
            if !QUICK.contains(&n) {
                println!("SKIP criterion {n} ({}): hours of training; run with PTSD_ACCEPTANCE=all or ={n}", criterion_name(n));
            }
            continue;
        }
        let (name, t0) = (criterion_name(n), Instant::now());
        eprintln!("running criterion {n}: {name}");
        let outcome = match n {
            1 => gaussian_oracle_loop(),
            2 => guidance_oracle(),
            3 => gmm_desk(&mut cache),
            4 => ablation_ordering(),
            5 => ptdm_comparison(&mut cache),
            6 => kernel_suite(),
            _ => budget_ledger(&cache),
        };
        let line = match outcome {
            Ok((true, detail)) => format!("PASS criterion {n} ({name}): {detail}"),
            Ok((false, detail)) => format!("FAIL criterion {n} ({name}): {detail}"),
            Err(e) => format!("FAIL criterion {n} ({name}): error: {e}"),
        };
        println!("{line} [{:.0}s]", t0.elapsed().as_secs_f64());
        summary.push((n, line));
    }
    summary.sort_by_key(|(n, _)| *n);
    println!("\nacceptance summary");
    for (_, line) in summary {
        println!("  {}", line.split(':').next().unwrap_or(&line));
    }
}

fn criterion_name(n: u32) -> &'static str {
    match n {
        1 => "gaussian oracle end-to-end",
        2 => "temperature guidance oracle",
        3 => "gmm40 desk run",
        4 => "mw8 ablation ordering",
        5 => "pt+dm comparison",
        6 => "numerical kernel suite",
        _ => "budget ledger audit",
    }
}
