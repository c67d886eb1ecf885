//! End-to-end acceptance checks. Run with
//! `cargo test -p featforge --test acceptance -- --nocapture` to see one
//! PASS/FAIL line per criterion.

mod common;

use std::collections::HashSet;
use std::time::{Duration, Instant};

use featforge::demo::{bmi_dataset, bmi_knowledge_base, bmi_replay_script, proposal_reply, BMI_GOAL};
use featforge::engine::{self, Decision, EngineConfig, RunResult, StopReason};
use featforge::fexpr::{self, classify, render, OperationKind};
use featforge::knowledge::{cosine, Embedder, Hit};
use featforge::learners::{train, LearnerConfig, Model, Trained};
use featforge::metrics::{classification_report, conditional_entropy, information_gain};
use featforge::oracle::Gateway;
use featforge::tabular::{Dataset, FeatureKind, FeatureMeta, Origin};
use featforge::{parse, HashEmbedder, KnowledgeBase};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

type Outcome = Result<String, String>;

macro_rules! ensure {
    ($cond:expr, $($msg:tt)+) => {
        if !$cond {
            return Err(format!($($msg)+));
        }
    };
}

fn bmi_config() -> EngineConfig {
    EngineConfig {
        max_iterations: 10,
        patience: 2,
        learner: LearnerConfig::decision_tree(3),
        cv_folds: 5,
        seed: 7,
        task_goal: BMI_GOAL.into(),
        ..EngineConfig::default()
    }
}

fn bmi_run() -> RunResult {
    let d0 = bmi_dataset(400, 7);
    let emb = HashEmbedder::default();
    let kb = bmi_knowledge_base(&emb).unwrap();
    let mut gw = Gateway::replay(&bmi_replay_script(2));
    engine::run(&bmi_config(), &d0, &kb, &emb, &mut gw).unwrap()
}

fn bmi_end_to_end() -> Outcome {
    let start = Instant::now();
    let res = bmi_run();
    let elapsed = start.elapsed();
    let first = &res.iterations[0];
    ensure!(first.decision == Decision::Accepted, "iteration 1 rejected");
    let label = first.chosen.and_then(|i| first.candidates[i].label.clone());
    ensure!(label.as_deref() == Some("bmi"), "adopted {label:?}");
    ensure!(res.n_generated() == 1, "{} features generated", res.n_generated());
    ensure!(res.stop_reason == StopReason::Patience && res.iterations.len() == 3, "stopped {:?} after {}", res.stop_reason, res.iterations.len());
    let gain = res.best_score - res.base_score;
    ensure!(res.best_score >= 0.97, "cv accuracy with bmi {}", res.best_score);
    ensure!(gain >= 0.03, "improvement {gain}");
    ensure!(elapsed < Duration::from_secs(10), "took {elapsed:?}");
    Ok(format!(
        "base={:.5} with_bmi={:.5} gain={gain:.5} in {:.2?}",
        res.base_score, res.best_score, elapsed
    ))
}

const POOL: &[&str] = &[
    "x / y",
    "y / x",
    "log(x) - log(y)",
    "x - y",
    "x > y",
    "x * z",
    "z",
    "z - z",
    "x / (z - z)",
    "w + 1",
    "(x + y",
];

fn random_scenario(seed: u64) -> Result<(usize, usize), String> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let d0 = common::ratio_dataset(&mut rng, 120);
    let emb = HashEmbedder::default();
    let n_docs = rng.gen_range(2..8);
    let corpus = common::random_corpus(&mut rng, n_docs);
    let kb = KnowledgeBase::from_texts(corpus, &emb).unwrap();
    let cfg = EngineConfig {
        max_iterations: rng.gen_range(1..7),
        patience: rng.gen_range(1..4),
        top_k: rng.gen_range(1..4),
        learner: LearnerConfig::decision_tree(rng.gen_range(2..5)),
        cv_folds: rng.gen_range(3..6),
        seed,
        ..EngineConfig::default()
    };
    let mut prng = ChaCha8Rng::seed_from_u64(seed ^ 0xabc);
    let mut counter = 0;
    let transport = common::ScriptedTransport {
        query: "ratio index risk".into(),
        echo_label: rng.gen_bool(0.5),
        propose: move |_: &str| {
            counter += 1;
            match prng.gen_range(0..12) {
                0 => "No formula comes to mind.".into(),
                1 => proposal_reply("x", "x + 1", "collides with a column"),
                2 => proposal_reply("dup", "x / y", "may repeat"),
                _ => proposal_reply(&format!("g{counter}"), POOL[prng.gen_range(0..POOL.len())], "pool"),
            }
        },
    };
    let mut gw = Gateway::new(Box::new(transport));
    let res = engine::run(&cfg, &d0, &kb, &emb, &mut gw).map_err(|e| format!("seed {seed}: {e}"))?;

    let mut best = res.base_score;
    let mut desc = d0.description().to_string();
    let mut streak = 0;
    let mut accepted_ts = Vec::new();
    for r in &res.iterations {
        match r.decision {
            Decision::Accepted => {
                let s = r.chosen_score.ok_or("accepted without score")?;
                ensure!(s > best, "seed {seed} t={}: accepted {s} <= {best}", r.t);
                ensure!(r.best_score == s, "seed {seed}: best not updated");
                ensure!(r.description_after != desc, "seed {seed}: description unchanged");
                best = s;
                streak = 0;
                accepted_ts.push(r.t);
            }
            Decision::Rejected => {
                ensure!(r.chosen_score.map_or(true, |s| s <= best), "seed {seed}: rejected an improvement");
                ensure!(r.best_score.to_bits() == best.to_bits(), "seed {seed} t={}: best changed", r.t);
                ensure!(r.description_after == desc, "seed {seed} t={}: description changed", r.t);
                streak += 1;
            }
        }
        desc = r.description_after.clone();
        if r.t < res.iterations.len() {
            ensure!(streak < cfg.patience, "seed {seed}: ran past patience");
        }
    }
    match res.stop_reason {
        StopReason::Patience => ensure!(streak == cfg.patience, "seed {seed}: stopped at streak {streak}"),
        StopReason::MaxIterations => ensure!(res.iterations.len() == cfg.max_iterations, "seed {seed}: early max stop"),
    }

    // dataset: originals untouched, one column per accepted iteration,
    // each equal to its formula evaluated afresh
    let aug = &res.augmented;
    ensure!(aug.n_features() == d0.n_features() + accepted_ts.len(), "seed {seed}: feature accounting");
    for (a, b) in d0.columns().iter().zip(aug.columns()) {
        ensure!(a.values() == b.values() && a.name() == b.name(), "seed {seed}: original column changed");
    }
    for (col, &t) in aug.columns()[d0.n_features()..].iter().zip(&accepted_ts) {
        ensure!(col.meta.origin == Origin::Generated(t), "seed {seed}: origin mismatch");
        let r = &res.iterations[t - 1];
        let formula = r.candidates[r.chosen.unwrap()].formula.as_deref().unwrap();
        let fresh = fexpr::evaluate(&parse(formula).unwrap(), aug).unwrap();
        ensure!(fresh.iter().zip(col.values()).all(|(a, b)| a.to_bits() == b.to_bits()), "seed {seed}: column differs");
    }
    ensure!(aug.description() == desc, "seed {seed}: final description");
    let n_acc = accepted_ts.len();
    Ok((n_acc, res.iterations.len() - n_acc))
}

fn strict_improvement() -> Outcome {
    let (mut acc, mut rej) = (0, 0);
    for seed in 0..50 {
        let (a, r) = random_scenario(seed)?;
        acc += a;
        rej += r;
    }
    ensure!(acc > 0 && rej > 0, "scenarios exercised only one branch ({acc} accepted, {rej} rejected)");
    Ok(format!("50 scenarios, {acc} accepted and {rej} rejected iterations, 0 violations"))
}

fn patience_exactness() -> Outcome {
    let d0 = bmi_dataset(200, 7);
    let emb = HashEmbedder::default();
    let kb = bmi_knowledge_base(&emb).unwrap();
    for k in 1..=3 {
        let mut records = Vec::new();
        for i in 0..10 {
            records.push(format!("query {i}"));
            for (j, f) in ["height - height", "weight - weight", "0 * weight"].iter().enumerate() {
                records.push(proposal_reply(&format!("flat{i}_{j}"), f, "constant"));
            }
        }
        let mut gw = Gateway::replay(&records.join("\n---\n"));
        let cfg = EngineConfig { patience: k, ..bmi_config() };
        let res = engine::run(&cfg, &d0, &kb, &emb, &mut gw).map_err(|e| e.to_string())?;
        ensure!(res.iterations.len() == k, "K={k}: {} iterations", res.iterations.len());
        ensure!(res.stop_reason == StopReason::Patience, "K={k}: {:?}", res.stop_reason);
        ensure!(res.final_features == res.initial_features, "K={k}: features changed");
    }
    Ok("K=1,2,3 each stopped after exactly K iterations".into())
}

/// Full scan ranking by repeated selection of the best remaining document.
fn selection_ranking(hits: Vec<Hit>, k: usize) -> Vec<Hit> {
    let mut left = hits;
    let mut out = Vec::new();
    while out.len() < k && !left.is_empty() {
        let mut best = 0;
        for i in 1..left.len() {
            let (a, b) = (&left[i], &left[best]);
            if a.score > b.score || (a.score == b.score && a.id < b.id) {
                best = i;
            }
        }
        out.push(left.swap_remove(best));
    }
    out
}

fn retrieval_oracle() -> Outcome {
    let c = cosine(&[1.0, 2.0, 2.0], &[2.0, 0.0, 1.0]).unwrap();
    let hand = 4.0 / (3.0 * 5f64.sqrt());
    ensure!((c - 0.596_284_793_999_944).abs() < 1e-9 && (c - hand).abs() < 1e-9, "cosine {c}");
    let emb = HashEmbedder::new(256);
    let mut ties = 0;
    for seed in 0..20 {
        let mut rng = ChaCha8Rng::seed_from_u64(1000 + seed);
        let n = rng.gen_range(1..=100);
        let corpus = common::random_corpus(&mut rng, n);
        let kb = KnowledgeBase::from_texts(corpus.clone(), &emb).unwrap();
        let query = &common::random_corpus(&mut rng, 1)[0].1;
        let exclude: HashSet<String> = corpus.iter().filter(|_| rng.gen_bool(0.1)).map(|(id, _)| id.clone()).collect();
        let q = emb.embed(query).unwrap();
        let all: Vec<Hit> = corpus
            .iter()
            .filter(|(id, _)| !exclude.contains(id))
            .map(|(id, t)| Hit { id: id.clone(), score: cosine(&q, &emb.embed(t).unwrap()).unwrap() })
            .collect();
        let distinct: HashSet<u64> = all.iter().map(|h| h.score.to_bits()).collect();
        ties += all.len() - distinct.len();
        for k in [1, 3, 10, n + 5] {
            let got = kb.retrieve(&emb, query, k, &exclude).unwrap().ranked;
            let want = selection_ranking(all.clone(), k);
            ensure!(got == want, "corpus {seed}, k={k}: ranking differs");
        }
    }
    Ok(format!("cosine={c:.12}; 20 corpora x 4 k values identical ({ties} tied scores)"))
}

fn gci_table() -> Dataset {
    let cols = vec![
        ("Population", vec![5.2e6, 8.3e7, 1.4e9, 3.3e8, 6.7e7]),
        ("Land Area (Km2)", vec![4.3e4, 3.57e5, 9.6e6, 9.8e6, 2.4e5]),
        ("Agricultural Land (%)", vec![62.0, 47.7, 56.2, 44.4, 71.7]),
        ("Forested Area (%)", vec![14.7, 32.7, 22.4, 33.9, 13.1]),
        ("Gross Primary Enrollment (%)", vec![101.3, 104.1, 100.2, 101.8, 101.2]),
        ("Gross Tertiary Enrollment (%)", vec![80.6, 70.2, 50.6, 88.2, 60.0]),
        ("CO2 Emissions", vec![3.1e4, 7.3e5, 9.9e6, 5.0e6, 3.8e5]),
        ("GDP", vec![3.5e11, 3.8e12, 1.4e13, 2.1e13, 2.8e12]),
    ];
    Dataset::from_numeric(
        cols.into_iter().map(|(n, v)| (n.to_string(), v)).collect(),
        "Income Group",
        &["high", "high", "upper-middle", "high", "high"],
        "country indicators",
    )
    .unwrap()
}

fn dsl_corpus() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    for i in 0..1000 {
        let ast = common::random_expr(&mut rng, 7);
        let text = render(&ast);
        let back = parse(&text).map_err(|e| format!("ast {i}: `{text}`: {e}"))?;
        ensure!(back.ast == ast, "ast {i}: `{text}` re-parsed differently");
    }
    let d = gci_table();
    let schema = d.schema();
    let table = [
        ("Population Load Ratio", "Population / `Land Area (Km2)`", OperationKind::Transformation),
        ("Resource Utilization Rate", "(`Agricultural Land (%)` + `Forested Area (%)`) / 100", OperationKind::Transformation),
        ("Education Investment Effectiveness", "(`Gross Primary Enrollment (%)` + `Gross Tertiary Enrollment (%)`) / 2", OperationKind::Transformation),
        ("Environmental Stress Index", "`CO2 Emissions` / ((`Forested Area (%)` / 100) * `Land Area (Km2)`)", OperationKind::Transformation),
        ("GDP per Capita", "GDP / Population", OperationKind::Transformation),
        ("Wealthy", "GDP / Population > 40000", OperationKind::Judgment),
        ("Log Population", "log(Population)", OperationKind::Scaling),
    ];
    for (name, formula, kind) in table {
        let e = parse(formula).map_err(|err| format!("{name}: {err}"))?;
        let got = classify(&e, &schema).map_err(|err| format!("{name}: {err}"))?;
        ensure!(got == kind, "{name}: classified {got}, expected {kind}");
        let v = fexpr::evaluate(&e, &d).map_err(|err| format!("{name}: {err}"))?;
        ensure!(v.len() == 5 && v.iter().all(|x| x.is_finite()), "{name}: bad values");
    }
    let gdp = fexpr::evaluate(&parse("GDP / Population").unwrap(), &d).unwrap();
    ensure!((gdp[0] - 3.5e11 / 5.2e6).abs() < 1e-9 * gdp[0], "GDP per capita value {}", gdp[0]);
    let rich = fexpr::evaluate(&parse("GDP / Population > 40000").unwrap(), &d).unwrap();
    ensure!(rich == [1.0, 1.0, 0.0, 1.0, 1.0], "thresholded values {rich:?}");
    Ok("1000 random trees round-trip; 5 table formulas + judgment + scaling variants classify and evaluate".into())
}

fn metrics_correctness() -> Outcome {
    // TP=2, FP=1, FN=1, TN=1 with positive class 1
    let t = [1, 1, 1, 0, 0];
    let p = [1, 1, 0, 1, 0];
    let f1 = classification_report(&t, &p).unwrap().macro_f1;
    ensure!((f1 - 7.0 / 12.0).abs() < 1e-12, "macro f1 {f1}");

    let mut rng = ChaCha8Rng::seed_from_u64(99);
    let mut max_dev: f64 = 0.0;
    for i in 0..100 {
        let n = rng.gen_range(12..60);
        let p = rng.gen_range(1..4);
        let classes = rng.gen_range(2..4);
        let d = common::grid_dataset(&mut rng, n, p, classes);
        let bins = rng.gen_range(2..6);
        let names = d.feature_names();
        let all: Vec<&str> = names.iter().map(String::as_str).collect();
        let base = &all[..1];
        let same = information_gain(base, base, &d, bins).unwrap();
        ensure!(same == 0.0, "dataset {i}: IG(F0,F0)={same}");
        let ig = information_gain(base, &all, &d, bins).unwrap();
        ensure!(ig >= 0.0, "dataset {i}: IG={ig}");

        // A column equal to the class code predicts perfectly. Categorical
        // columns keep their codes; a numeric one is binned, which keeps two
        // distinct values apart but may merge rare values of a third.
        let code: Vec<f64> = d.target().iter().map(|&c| c as f64).collect();
        let categorical = FeatureMeta {
            kind: FeatureKind::Categorical,
            categories: d.classes().to_vec(),
            ..FeatureMeta::numeric("perfect_cat")
        };
        let dp = d
            .append_feature(categorical, code.clone())
            .and_then(|d| d.append_feature(FeatureMeta::numeric("perfect_num"), code))
            .unwrap();
        let h0 = conditional_entropy(&dp, base, bins).unwrap().bits;
        let mut variants = vec!["perfect_cat"];
        if classes == 2 {
            variants.push("perfect_num");
        }
        for v in variants {
            let ig_p = information_gain(base, &[base[0], v], &dp, bins).unwrap();
            max_dev = max_dev.max((ig_p - h0).abs());
            ensure!((ig_p - h0).abs() < 1e-12, "dataset {i} ({v}): IG={ig_p}, H(Y|F0)={h0}");
        }
    }
    Ok(format!("macro_f1={f1:.15}; 100 datasets: IG(F0,F0)=0, IG>=0, perfect predictor |IG-H|<={max_dev:e}"))
}

fn determinism() -> Outcome {
    let dir = tempfile::tempdir().unwrap();
    let mut outputs = Vec::new();
    for i in 0..2 {
        let res = bmi_run();
        let path = dir.path().join(format!("prov{i}.jsonl"));
        engine::write_provenance(&res.iterations, &path).unwrap();
        let prov = std::fs::read_to_string(&path).unwrap();
        let body: Vec<String> = prov.lines().skip(1).map(str::to_string).collect();
        let mut csv = Vec::new();
        res.augmented.write_csv(&mut csv).unwrap();
        outputs.push((body, csv));
    }
    ensure!(outputs[0].0 == outputs[1].0, "provenance differs");
    ensure!(outputs[0].1 == outputs[1].1, "augmented CSV differs");
    Ok(format!(
        "{} provenance lines and {} CSV bytes identical",
        outputs[0].0.len(),
        outputs[0].1.len()
    ))
}

fn learner_sanity() -> Outcome {
    let xor = Dataset::from_numeric(
        vec![("a".into(), vec![0.0, 0.0, 1.0, 1.0]), ("b".into(), vec![0.0, 1.0, 0.0, 1.0])],
        "y",
        &["0", "1", "1", "0"],
        "",
    )
    .unwrap();
    let rows = [0, 1, 2, 3];
    let pred = train(&LearnerConfig::decision_tree(2), &xor, &rows).unwrap().predict(&xor, &rows).unwrap();
    ensure!(pred == xor.target(), "xor predictions {pred:?}");

    let mut rng = ChaCha8Rng::seed_from_u64(8);
    for i in 0..20 {
        let (n, p, classes) = (rng.gen_range(20..80), rng.gen_range(1..5), rng.gen_range(2..4));
        let d = common::grid_dataset(&mut rng, n, p, classes);
        let rows: Vec<usize> = (0..d.n_rows()).collect();
        let c = rng.gen_range(-3.0..3.0);
        let wide = d.append_feature(FeatureMeta::numeric("flat"), vec![c; d.n_rows()]).unwrap();
        for cfg in [LearnerConfig::decision_tree(5), LearnerConfig::random_forest(15, 5, i)] {
            let a = train(&cfg, &d, &rows).unwrap().predict(&d, &rows).unwrap();
            let b = train(&cfg, &wide, &rows).unwrap().predict(&wide, &rows).unwrap();
            ensure!(a == b, "dataset {i}: constant column changed {:?} predictions", cfg.kind);
        }
        let Trained::Forest(f) = train(&LearnerConfig::random_forest(1, 5, i), &d, &rows).unwrap() else {
            return Err("forest config trained a tree".into());
        };
        ensure!(f.trees().len() == 1, "forest has {} trees", f.trees().len());
        ensure!(
            f.predict(&d, &rows).unwrap() == f.trees()[0].predict(&d, &rows).unwrap(),
            "dataset {i}: single-tree forest disagrees with its tree"
        );
    }
    Ok("xor depth-2 accuracy 1.0; 20 datasets constant-inert (tree and forest); forest(1) == its tree".into())
}

#[test]
fn acceptance_criteria() {
    let criteria: [(&str, fn() -> Outcome); 8] = [
        ("bmi end-to-end", bmi_end_to_end),
        ("strict improvement", strict_improvement),
        ("patience exactness", patience_exactness),
        ("retrieval oracle", retrieval_oracle),
        ("formula language", dsl_corpus),
        ("metrics", metrics_correctness),
        ("determinism", determinism),
        ("learners", learner_sanity),
    ];
    let mut failed = Vec::new();
    println!();
    for (i, (name, check)) in criteria.iter().enumerate() {
        match check() {
            Ok(detail) => println!("PASS {} {name}: {detail}", i + 1),
            Err(why) => {
                println!("FAIL {} {name}: {why}", i + 1);
                failed.push(*name);
            }
        }
    }
    assert!(failed.is_empty(), "failed criteria: {failed:?}");
}
