//! Acceptance report: one PASS/FAIL line per criterion.
//!
//! Criteria that need the Cora or Texas data read them from the directories in
//! `NEUCGC_CORA_DIR` and `NEUCGC_TEXAS_DIR` (the `features.txt` / `edges.txt` /
//! `labels.txt` layout). Without them those lines report FAIL as not evaluated
//! and do not change the exit status.

mod common;

use common::*;
use ndarray::Array2;
use neucgc::afc::afc_loss_with_grad;
use neucgc::contrast::{nca_loss_with_grad, CosineSimilarity};
use neucgc::distributions::{gda_loss_with_grad, PairwiseSkl};
use neucgc::encoder::{init_encoders, EncoderConfig};
use neucgc::train::objective_with_grad;
use neucgc::*;
use rand::Rng;
use std::path::PathBuf;
use std::time::{Duration, Instant};

enum Verdict {
    Pass,
    Fail,
    NotEvaluated,
}

struct Outcome {
    verdict: Verdict,
    detail: String,
}

fn outcome(pass: bool, detail: String) -> Outcome {
    Outcome {
        verdict: if pass { Verdict::Pass } else { Verdict::Fail },
        detail,
    }
}

fn dataset(var: &str) -> Option<PathBuf> {
    std::env::var_os(var)
        .map(PathBuf::from)
        .filter(|p| p.is_dir())
}

fn missing(var: &str) -> Outcome {
    Outcome {
        verdict: Verdict::NotEvaluated,
        detail: format!("dataset not available, set {var}"),
    }
}

fn random_distribution(r: &mut impl Rng, m: usize) -> ProbVector {
    let logits: Vec<f64> = (0..m).map(|_| r.gen_range(-6.0..6.0)).collect();
    node_distribution(&logits).unwrap()
}

fn criterion_1() -> Outcome {
    let Some(dir) = dataset("NEUCGC_CORA_DIR") else {
        return missing("NEUCGC_CORA_DIR");
    };
    let start = Instant::now();
    let stats = match load_graph(&dir).and_then(|g| GraphStats::compute(&g)) {
        Ok(s) => s,
        Err(e) => return outcome(false, format!("{e}")),
    };
    let elapsed = start.elapsed();
    let pass = (
        stats.n_nodes,
        stats.n_edges,
        stats.n_classes,
        stats.n_attributes,
    ) == (2708, 5278, 7, 1433)
        && (stats.homophily_ratio - 0.81).abs() <= 0.005
        && (stats.neighborhood_homophily_ratio - 0.83).abs() <= 0.005
        && (stats.congener_ratio - 0.0088).abs() <= 0.0005
        && elapsed < Duration::from_secs(5);
    outcome(
        pass,
        format!("{:?} in {:.2}s", stats, elapsed.as_secs_f64()),
    )
}

fn criterion_2() -> Outcome {
    let mut r = rng(2002);
    let mut worst_sym = 0.0f64;
    let mut worst_self = 0.0f64;
    let mut negatives = 0;
    for _ in 0..1000 {
        let m = r.gen_range(2..12);
        let p = random_distribution(&mut r, m);
        let q = random_distribution(&mut r, m);
        let pq = skl_divergence(&p, &q).unwrap();
        let qp = skl_divergence(&q, &p).unwrap();
        if pq < 0.0 {
            negatives += 1;
        }
        worst_sym = worst_sym.max((pq - qp).abs());
        worst_self = worst_self.max(skl_divergence(&p, &p).unwrap());
    }
    outcome(
        negatives == 0 && worst_sym <= 1e-12 && worst_self <= 1e-9,
        format!("negatives {negatives}, max asymmetry {worst_sym:e}, max skl(P,P) {worst_self:e}"),
    )
}

fn criterion_3() -> Outcome {
    const N: usize = 8;
    const D: usize = 6;
    const DIM: usize = 4;
    const STEP: f64 = 1e-5;
    const FLOOR: f64 = 1e-6;
    let start = Instant::now();
    let mut worst = [0.0f64; 4];
    for seed in 0..5u64 {
        let mut r = rng(3000 + seed);
        let z1 = random_matrix(&mut r, N, DIM, 1.0);
        let z2 = random_matrix(&mut r, N, DIM, 1.0);
        let adj = random_adjacency(&mut r, N, 0.4);
        let h = random_h(&mut r, N, 0.3);
        let eta = r.gen::<f64>();
        let both =
            |f: &dyn Fn(&Array2<f64>, &Array2<f64>) -> f64, a1: &Array2<f64>, a2: &Array2<f64>| {
                let n1 = finite_diff(|z| f(z, &z2), &z1, STEP);
                let n2 = finite_diff(|z| f(&z1, z), &z2, STEP);
                max_rel_error(a1, &n1, FLOOR).max(max_rel_error(a2, &n2, FLOOR))
            };

        let gda = gda_loss_with_grad(&z1, &z2).unwrap();
        worst[0] = worst[0].max(both(
            &|a, b| gda_loss(a, b).unwrap(),
            &gda.grad_z1,
            &gda.grad_z2,
        ));

        let pairwise = PairwiseSkl::forward(&z1, &z2, 3).unwrap();
        let (_, gk) = nca_loss_with_grad(&pairwise.matrix, &adj, eta).unwrap();
        let (a1, a2) = pairwise.backward(&gk);
        let nca = |a: &Array2<f64>, b: &Array2<f64>| {
            nca_loss(&pairwise_skl_matrix(a, b).unwrap(), &adj, eta).unwrap()
        };
        worst[1] = worst[1].max(both(&nca, &a1, &a2));

        let cos = CosineSimilarity::forward(&z1, &z2).unwrap();
        let (_, gs) = afc_loss_with_grad(&cos.s, &h).unwrap();
        let (a1, a2) = cos.backward(&gs);
        let afc = |a: &Array2<f64>, b: &Array2<f64>| {
            afc_loss(&cross_view_similarity(a, b).unwrap(), &h).unwrap()
        };
        worst[2] = worst[2].max(both(&afc, &a1, &a2));

        let cfg = EncoderConfig {
            latent_dim: DIM,
            depth: 1,
            output_activation: true,
        };
        let enc = init_encoders(D, &cfg, seed).unwrap();
        let x = random_matrix(&mut r, N, D, 1.0);
        let (l1, l2) = (r.gen_range(0.01..10.0), r.gen_range(0.01..10.0));
        let (_, grads) = objective_with_grad(&enc, &x, &adj, eta, &h, l1, l2).unwrap();
        let analytic: Vec<f64> = grads.slices().into_iter().flatten().copied().collect();
        let probe = std::cell::RefCell::new(enc.clone());
        let numeric = finite_diff_vec(
            |p| {
                let mut e = probe.borrow_mut();
                e.set_flat(p).unwrap();
                objective_with_grad(&e, &x, &adj, eta, &h, l1, l2)
                    .unwrap()
                    .0
                    .total
            },
            &enc.to_flat(),
            STEP,
        );
        worst[3] = worst[3].max(max_rel_error(&analytic, &numeric, FLOOR));
    }
    let elapsed = start.elapsed();
    outcome(
        worst.iter().all(|&e| e < 1e-4) && elapsed < Duration::from_secs(30),
        format!(
            "max rel error gda {:.1e}, nca {:.1e}, afc {:.1e}, total {:.1e} in {:.2}s",
            worst[0],
            worst[1],
            worst[2],
            worst[3],
            elapsed.as_secs_f64()
        ),
    )
}

fn criterion_4() -> Outcome {
    let mut worst = [0.0f64; 3];
    for seed in 0..50 {
        let mut r = rng(4000 + seed);
        let n = r.gen_range(2..=16);
        let d = r.gen_range(1..=8);
        let z1 = random_matrix(&mut r, n, d, 2.0);
        let z2 = random_matrix(&mut r, n, d, 2.0);
        let adj = random_adjacency(&mut r, n, 0.3);
        let eta = r.gen::<f64>();
        let h = random_h(&mut r, n, 0.3);
        let k = pairwise_skl_matrix(&z1, &z2).unwrap();
        let oracle_k = naive_k(&z1, &z2);
        worst[0] = worst[0].max((&k.values - &oracle_k).fold(0.0, |a: f64, v| a.max(v.abs())));
        worst[1] = worst[1]
            .max((nca_loss(&k, &adj, eta).unwrap() - naive_nca(&oracle_k, &adj, eta)).abs());
        let s = cross_view_similarity(&z1, &z2).unwrap();
        worst[2] = worst[2].max(
            (afc_loss(&s, &h).unwrap() - naive_afc(&naive_cosine(&z1, &z2), &h.weights)).abs(),
        );
    }
    outcome(
        worst.iter().all(|&e| e <= 1e-10),
        format!(
            "max abs diff K {:.1e}, nca {:.1e}, afc {:.1e}",
            worst[0], worst[1], worst[2]
        ),
    )
}

fn bound_chain_holds(s: &Array2<f64>, h: &HighConfidenceGraph) -> bool {
    let unit = h_from_weights(h.weights.mapv(|w| if w > 0.0 { 1.0 } else { 0.0 }));
    let weighted = -afc_loss(s, h).unwrap();
    let full = -afc_loss(s, &unit).unwrap();
    weighted <= full + 1e-9 && full <= infonce_bound(s).unwrap() + 1e-9
}

fn criterion_5() -> Outcome {
    let draws = 200;
    let mut violations = 0;
    let mut dense_violations = 0;
    for seed in 0..draws {
        let mut r = rng(5000 + seed);
        let n = r.gen_range(8..=64);
        let s = cross_view_similarity(
            &random_matrix(&mut r, n, 4, 1.0),
            &random_matrix(&mut r, n, 4, 1.0),
        )
        .unwrap();
        if !bound_chain_holds(&s, &random_sparse_h(&mut r, n)) {
            violations += 1;
        }
        let small = r.gen_range(2..=6);
        let s = cross_view_similarity(
            &random_matrix(&mut r, small, 4, 1.0),
            &random_matrix(&mut r, small, 4, 1.0),
        )
        .unwrap();
        if !bound_chain_holds(&s, &random_h(&mut r, small, 0.9)) {
            dense_violations += 1;
        }
    }
    outcome(
        violations == 0,
        format!(
            "{violations}/{draws} violations with support below n/e^2 per row; \
             {dense_violations}/{draws} on nearly complete supports with n <= 6 (outside the sparsity premise)"
        ),
    )
}

struct SbmRuns {
    records: Vec<EpochRecord>,
    homophilic: Vec<(f64, f64)>,
    estimated: Vec<f64>,
    forced: Vec<f64>,
    raw_heterophilic: Vec<f64>,
    slowest: Duration,
}

fn sbm_config(seed: u64, eta_override: Option<f64>) -> TrainConfig {
    let mut cfg = TrainConfig::default();
    cfg.encoder.latent_dim = 64;
    cfg.epochs = 200;
    cfg.learning_rate = 1e-3;
    cfg.lambda1 = 0.01;
    cfg.lambda2 = 0.01;
    cfg.seed = seed;
    cfg.eta_override = eta_override;
    cfg
}

fn sbm_runs() -> SbmRuns {
    let mut runs = SbmRuns {
        records: Vec::new(),
        homophilic: Vec::new(),
        estimated: Vec::new(),
        forced: Vec::new(),
        raw_heterophilic: Vec::new(),
        slowest: Duration::ZERO,
    };
    let raw_acc = |g: &AttributedGraph, seed| {
        let km = kmeans(g.attributes(), 3, seed, 300).unwrap();
        evaluate(&km.assignments, g.labels().unwrap()).unwrap().acc
    };
    for seed in 0..3 {
        let params = SbmParams {
            feature_noise: 1.5,
            seed,
            ..SbmParams::default()
        };
        let homo = generate_sbm(&SbmParams {
            p_in: 0.1,
            p_out: 0.005,
            ..params.clone()
        })
        .unwrap();
        let hetero = generate_sbm(&SbmParams {
            p_in: 0.005,
            p_out: 0.1,
            ..params
        })
        .unwrap();
        let mut run = |g: &AttributedGraph, eta| {
            let start = Instant::now();
            let res =
                train_with_observer(g, &sbm_config(seed, eta), |r| runs.records.push(r.clone()))
                    .unwrap();
            runs.slowest = runs.slowest.max(start.elapsed());
            res.final_metrics.unwrap().acc
        };
        let homo_acc = run(&homo, None);
        let est = run(&hetero, None);
        let forced = run(&hetero, Some(1.0));
        runs.homophilic.push((homo_acc, raw_acc(&homo, seed)));
        runs.estimated.push(est);
        runs.forced.push(forced);
        runs.raw_heterophilic.push(raw_acc(&hetero, seed));
    }
    runs
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

fn criterion_6(runs: &SbmRuns) -> Outcome {
    let bad_epochs = runs
        .records
        .iter()
        .filter(|r| !(r.l_gda >= 0.0 && r.l_nca >= 0.0 && r.l_afc >= 0.0))
        .count();
    let mut monotone_violations = 0;
    for seed in 0..1000 {
        let mut r = rng(6000 + seed);
        let n = r.gen_range(2..=16);
        let k = SklMatrix::new(Array2::from_shape_simple_fn((n, n), || {
            r.gen_range(1e-12..4.0)
        }))
        .unwrap();
        let adj = random_adjacency(&mut r, n, 0.4);
        let (a, b) = (r.gen::<f64>(), r.gen::<f64>());
        let (lo, hi) = (a.min(b), a.max(b));
        if nca_loss(&k, &adj, lo).unwrap() > nca_loss(&k, &adj, hi).unwrap() {
            monotone_violations += 1;
        }
    }
    outcome(
        bad_epochs == 0 && monotone_violations == 0,
        format!(
            "{bad_epochs} negative-loss epochs over {} recorded epochs; {monotone_violations}/1000 eta monotonicity violations",
            runs.records.len()
        ),
    )
}

fn criterion_7(runs: &SbmRuns) -> Outcome {
    let homo_min = runs
        .homophilic
        .iter()
        .map(|h| h.0)
        .fold(f64::INFINITY, f64::min);
    let gap = 100.0 * (mean(&runs.estimated) - mean(&runs.forced));
    outcome(
        homo_min >= 0.9 && gap >= 5.0 && runs.slowest < Duration::from_secs(120),
        format!(
            "homophilic ACC {:?} (raw k-means {:?}); heterophilic estimated {:.3} vs forced {:.3} \
             (gap {gap:.1} points, raw k-means {:.3}); slowest run {:.1}s",
            runs.homophilic.iter().map(|h| h.0).collect::<Vec<_>>(),
            runs.homophilic.iter().map(|h| h.1).collect::<Vec<_>>(),
            mean(&runs.estimated),
            mean(&runs.forced),
            mean(&runs.raw_heterophilic),
            runs.slowest.as_secs_f64()
        ),
    )
}

fn published_config(lambda1: f64, lambda2: f64, seed: u64) -> TrainConfig {
    TrainConfig {
        lambda1,
        lambda2,
        seed,
        ..TrainConfig::default()
    }
}

struct RealRuns {
    acc: Vec<f64>,
    nmi: Vec<f64>,
    slowest: Duration,
    first: TrainResult,
}

fn real_runs(dir: &PathBuf, lambda1: f64, lambda2: f64) -> Result<RealRuns> {
    let g = load_graph(dir)?;
    let mut acc = Vec::new();
    let mut nmi = Vec::new();
    let mut slowest = Duration::ZERO;
    let mut first = None;
    for seed in 0..10 {
        let start = Instant::now();
        let res = train(&g, &published_config(lambda1, lambda2, seed))?;
        slowest = slowest.max(start.elapsed());
        let m = res.final_metrics.ok_or(Error::MissingLabels)?;
        acc.push(100.0 * m.acc);
        nmi.push(100.0 * m.nmi);
        first.get_or_insert(res);
    }
    Ok(RealRuns {
        acc,
        nmi,
        slowest,
        first: first.expect("ten runs"),
    })
}

fn criterion_8(cora: &Option<Result<RealRuns>>) -> Outcome {
    let Some(cora) = cora else {
        return missing("NEUCGC_CORA_DIR");
    };
    let Some(texas_dir) = dataset("NEUCGC_TEXAS_DIR") else {
        return missing("NEUCGC_TEXAS_DIR");
    };
    let cora = match cora {
        Ok(c) => c,
        Err(e) => return outcome(false, format!("cora: {e}")),
    };
    let texas = match real_runs(&texas_dir, 0.01, 0.1) {
        Ok(t) => t,
        Err(e) => return outcome(false, format!("texas: {e}")),
    };
    let (ca, cn, ta) = (mean(&cora.acc), mean(&cora.nmi), mean(&texas.acc));
    let slowest = cora.slowest.max(texas.slowest);
    outcome(
        (ca - 77.1).abs() <= 3.0
            && (cn - 59.0).abs() <= 3.0
            && (ta - 73.1).abs() <= 5.0
            && slowest < Duration::from_secs(300),
        format!(
            "cora ACC {ca:.1} NMI {cn:.1}; texas ACC {ta:.1}; slowest run {:.0}s",
            slowest.as_secs_f64()
        ),
    )
}

fn criterion_9(cora: &Option<Result<RealRuns>>) -> Outcome {
    let Some(cora) = cora else {
        return missing("NEUCGC_CORA_DIR");
    };
    let cora = match cora {
        Ok(c) => c,
        Err(e) => return outcome(false, format!("{e}")),
    };
    let Some(input) = cora.first.input_diagnostics else {
        return outcome(false, "no labels".into());
    };
    let last = cora.first.per_epoch.last().expect("epochs");
    let (Some(rh), Some(delta)) = (last.hc_homophily, last.hc_congener) else {
        return outcome(false, "no high-confidence diagnostics".into());
    };
    let ratio = delta / input.congener_ratio;
    outcome(
        rh >= input.homophily_ratio && ratio >= 2.0,
        format!(
            "r_h(H) {rh:.3} vs r_h(A) {:.3}; delta(H)/delta(A) {ratio:.2}",
            input.homophily_ratio
        ),
    )
}

fn permutations(k: usize) -> Vec<Vec<usize>> {
    let mut out = Vec::new();
    let mut perm: Vec<usize> = (0..k).collect();
    fn rec(v: &mut Vec<usize>, i: usize, out: &mut Vec<Vec<usize>>) {
        if i == v.len() {
            out.push(v.clone());
            return;
        }
        for j in i..v.len() {
            v.swap(i, j);
            rec(v, i + 1, out);
            v.swap(i, j);
        }
    }
    rec(&mut perm, 0, &mut out);
    out
}

fn criterion_10() -> Outcome {
    let g = generate_sbm(&SbmParams {
        n_nodes: 90,
        feature_dim: 8,
        p_in: 0.15,
        p_out: 0.03,
        seed: 10,
        ..SbmParams::default()
    })
    .unwrap();
    let mut cfg = sbm_config(10, None);
    cfg.encoder.latent_dim = 16;
    cfg.epochs = 30;
    cfg.n_clusters = Some(3);
    let a = train(&g, &cfg).unwrap();
    let b = train(&g, &cfg).unwrap();
    let blind = train(&g.without_labels(), &cfg).unwrap();
    let key = |r: &EpochRecord| {
        (
            r.l_nca,
            r.l_afc,
            r.l_gda,
            r.l_total,
            r.eta,
            r.xi,
            r.hc_support,
        )
    };
    let hygiene = a.per_epoch.len() == blind.per_epoch.len()
        && a.per_epoch
            .iter()
            .zip(&blind.per_epoch)
            .all(|(x, y)| key(x) == key(y))
        && a.final_assignments == blind.final_assignments;
    let identical = a.per_epoch == b.per_epoch
        && a.final_assignments == b.final_assignments
        && a.encoder == b.encoder;

    let mut invariance_failures = 0;
    for seed in 0..40 {
        let mut r = rng(10_000 + seed);
        let k = r.gen_range(2..=5);
        let n = r.gen_range(k..40);
        let truth: Vec<usize> = (0..n).map(|_| r.gen_range(0..k)).collect();
        let pred: Vec<usize> = (0..n).map(|_| r.gen_range(0..k)).collect();
        let base = evaluate(&pred, &truth).unwrap();
        if (base.acc - brute_force_acc(&pred, &truth, k)).abs() > 1e-12 {
            invariance_failures += 1;
        }
        for p in permutations(k) {
            let relabeled: Vec<usize> = pred.iter().map(|&c| p[c]).collect();
            let m = evaluate(&relabeled, &truth).unwrap();
            if base
                .as_array()
                .iter()
                .zip(m.as_array())
                .any(|(x, y)| (x - y).abs() > 1e-12)
            {
                invariance_failures += 1;
            }
        }
    }
    outcome(
        hygiene && identical && invariance_failures == 0,
        format!("label-free losses identical {hygiene}; reruns bit-identical {identical}; {invariance_failures} metric permutation failures"),
    )
}

fn main() {
    let mut results: Vec<(usize, &str, Outcome)> = Vec::new();
    let mut report = |id: usize, name: &'static str, o: Outcome| {
        let tag = match o.verdict {
            Verdict::Pass => "PASS",
            Verdict::Fail => "FAIL",
            Verdict::NotEvaluated => "FAIL (not evaluated)",
        };
        println!("criterion {id:>2} {name}: {tag}: {}", o.detail);
        results.push((id, name, o));
    };
    report(1, "dataset statistics", criterion_1());
    report(2, "divergence axioms", criterion_2());
    report(3, "gradient suite", criterion_3());
    report(4, "oracle equivalence", criterion_4());
    report(5, "contrastive bound chain", criterion_5());
    let runs = sbm_runs();
    report(6, "loss signs", criterion_6(&runs));
    report(7, "sbm behaviour", criterion_7(&runs));
    let cora = dataset("NEUCGC_CORA_DIR").map(|d| real_runs(&d, 0.1, 1.0));
    report(8, "published-number reproduction", criterion_8(&cora));
    report(9, "high-confidence graph quality", criterion_9(&cora));
    report(10, "hygiene and determinism", criterion_10());

    let failed = results
        .iter()
        .filter(|r| matches!(r.2.verdict, Verdict::Fail))
        .count();
    let skipped = results
        .iter()
        .filter(|r| matches!(r.2.verdict, Verdict::NotEvaluated))
        .count();
    println!(
        "acceptance: {} passed, {failed} failed, {skipped} not evaluated",
        results.len() - failed - skipped
    );
    if failed > 0 {
        std::process::exit(1);
    }
}
