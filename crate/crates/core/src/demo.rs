//! Small self-contained scenario used by the guide, the examples and the
//! acceptance suite: predicting a high body-mass index from raw weight and
//! height, with a knowledge base in which one document explains BMI.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::knowledge::{Embedder, KnowledgeBase, KnowledgeError};
use crate::tabular::Dataset;

pub const BMI_DESCRIPTION: &str =
    "Adult patients with body weight in kilograms and height in meters. The label marks elevated cardiovascular risk.";

pub const BMI_GOAL: &str = "detect patients at elevated cardiovascular risk";

/// `n` rows with weight ~ U(45, 110) kg and height ~ U(1.50, 1.95) m;
/// `label` is 1 exactly when weight / height² > 27.
pub fn bmi_dataset(n: usize, seed: u64) -> Dataset {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut weight = Vec::with_capacity(n);
    let mut height = Vec::with_capacity(n);
    let mut labels = Vec::with_capacity(n);
    for _ in 0..n {
        let w: f64 = rng.gen_range(45.0..110.0);
        let h: f64 = rng.gen_range(1.50..1.95);
        weight.push(w);
        height.push(h);
        labels.push(if w / (h * h) > 27.0 { "1" } else { "0" });
    }
    Dataset::from_numeric(
        vec![("weight".into(), weight), ("height".into(), height)],
        "label",
        &labels,
        BMI_DESCRIPTION,
    )
    .expect("generated BMI data is well formed")
}

/// Three documents; `bmi` is the relevant one.
pub fn bmi_corpus() -> Vec<(&'static str, &'static str)> {
    vec![
        (
            "bmi",
            "# Body mass index\nThe body mass index relates body weight to height: weight in kilograms \
             divided by the square of height in meters. A body mass index above 27 marks overweight \
             adults with higher cardiovascular risk.",
        ),
        (
            "sleep",
            "# Sleep duration\nAdults who sleep fewer than six hours per night show more frequent \
             fatigue and reduced attention.",
        ),
        (
            "steps",
            "# Daily steps\nWalking ten thousand steps per day is a popular activity target; step \
             counts vary with occupation and season.",
        ),
    ]
}

pub fn bmi_knowledge_base(embedder: &dyn Embedder) -> Result<KnowledgeBase, KnowledgeError> {
    KnowledgeBase::from_texts(bmi_corpus(), embedder)
}

/// A proposal reply in the structured block format.
pub fn proposal_reply(label: &str, formula: &str, reasoning: &str) -> String {
    format!(
        "The document suggests combining existing measurements.\n```\nLabel: {label}\nCalculation: {formula}\nReasoning: {reasoning}\n```"
    )
}

/// Replay script for the BMI scenario with `top_k = 3`: the first iteration
/// adopts `bmi`, then `follow_ups` iterations each propose two constant
/// columns, which can never improve the score.
pub fn bmi_replay_script(follow_ups: usize) -> String {
    let mut records = vec![
        "body mass index from weight and height".to_string(),
        proposal_reply(
            "bmi",
            "weight / (height * height)",
            "Body mass index normalizes weight by height squared.",
        ),
        proposal_reply("sleep_proxy", "height - height", "No usable sleep data."),
        proposal_reply("steps_proxy", "weight - weight", "No usable activity data."),
        format!("{BMI_DESCRIPTION} Newly added: bmi, weight divided by height squared."),
    ];
    for i in 0..follow_ups {
        records.push(format!("lifestyle factors related to body mass index, round {}", i + 2));
        records.push(proposal_reply(&format!("flat_a{i}"), "height - height", "Constant."));
        records.push(proposal_reply(&format!("flat_b{i}"), "weight - weight", "Constant."));
    }
    records.join("\n---\n") + "\n"
}
