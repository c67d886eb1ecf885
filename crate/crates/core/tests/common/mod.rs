#![allow(dead_code)]

use featforge::fexpr::{BinOp, CmpOp, Expr, Func, LogicOp};
use featforge::oracle::{ChatTranscript, ChatTransport, TransportError};
use featforge::tabular::Dataset;
use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::ChaCha8Rng;

pub const NAMES: &[&str] = &[
    "x",
    "y_2",
    "weight",
    "Land Area (Km2)",
    "Forested Area (%)",
    "if",
    "log",
    "9lives",
    "a-b",
];

fn number(rng: &mut ChaCha8Rng) -> f64 {
    match rng.gen_range(0..4) {
        0 => rng.gen_range(0..100) as f64,
        1 => rng.gen_range(0.0..1.0),
        2 => rng.gen_range(0.0..1e6),
        _ => 10f64.powi(rng.gen_range(-12..22)) * rng.gen_range(1.0..10.0),
    }
}

/// Random syntax tree of depth at most `depth`. Literals are finite and
/// non-negative, as the parser produces them.
pub fn random_expr(rng: &mut ChaCha8Rng, depth: usize) -> Expr {
    if depth <= 1 || rng.gen_bool(0.25) {
        return if rng.gen_bool(0.6) {
            Expr::Column(NAMES.choose(rng).unwrap().to_string())
        } else {
            Expr::Number(number(rng))
        };
    }
    let sub = |rng: &mut ChaCha8Rng| Box::new(random_expr(rng, depth - 1));
    match rng.gen_range(0..6) {
        0 => Expr::Neg(sub(rng)),
        1 => {
            let op = *[BinOp::Add, BinOp::Sub, BinOp::Mul, BinOp::Div].choose(rng).unwrap();
            Expr::Binary(op, sub(rng), sub(rng))
        }
        2 => {
            let f = *Func::ALL.choose(rng).unwrap();
            let n = if f.is_variadic() { rng.gen_range(2..5) } else { 1 };
            Expr::Call(f, (0..n).map(|_| random_expr(rng, depth - 1)).collect())
        }
        3 => {
            let op = *[CmpOp::Lt, CmpOp::Le, CmpOp::Gt, CmpOp::Ge, CmpOp::Eq, CmpOp::Ne]
                .choose(rng)
                .unwrap();
            Expr::Compare(op, sub(rng), sub(rng))
        }
        4 => {
            let op = *[LogicOp::And, LogicOp::Or].choose(rng).unwrap();
            Expr::Logic(op, sub(rng), sub(rng))
        }
        _ => Expr::If(sub(rng), sub(rng), sub(rng)),
    }
}

/// Transport that answers by prompt type: queries and descriptions from
/// fixed text, proposals from a caller-supplied generator.
pub struct ScriptedTransport<F: FnMut(&str) -> String + Send> {
    pub query: String,
    pub propose: F,
    /// Whether description replies mention the adopted label.
    pub echo_label: bool,
}

impl<F: FnMut(&str) -> String + Send> ChatTransport for ScriptedTransport<F> {
    fn complete(&mut self, transcript: &ChatTranscript) -> Result<String, TransportError> {
        let text = transcript.text();
        if text.contains("Retrieved document `") {
            Ok((self.propose)(&text))
        } else if text.contains("A new feature was added") {
            let label = text
                .lines()
                .find_map(|l| l.strip_prefix("Label: "))
                .unwrap_or("")
                .to_string();
            if self.echo_label {
                Ok(format!("Updated description covering {label}."))
            } else {
                Ok("Updated description.".to_string())
            }
        } else {
            Ok(self.query.clone())
        }
    }
}

/// `n` rows over features `x`, `y`, `z` in (1, 10); the label is
/// `x / y > 1` with roughly 5% of labels flipped.
pub fn ratio_dataset(rng: &mut ChaCha8Rng, n: usize) -> Dataset {
    let mut cols = vec![Vec::with_capacity(n), Vec::with_capacity(n), Vec::with_capacity(n)];
    let mut labels = Vec::with_capacity(n);
    for _ in 0..n {
        let x: f64 = rng.gen_range(1.0..10.0);
        let y: f64 = rng.gen_range(1.0..10.0);
        let z: f64 = rng.gen_range(1.0..10.0);
        let mut l = x / y > 1.0;
        if rng.gen_bool(0.05) {
            l = !l;
        }
        cols[0].push(x);
        cols[1].push(y);
        cols[2].push(z);
        labels.push(if l { "yes" } else { "no" });
    }
    let [x, y, z]: [Vec<f64>; 3] = cols.try_into().unwrap();
    Dataset::from_numeric(
        vec![("x".into(), x), ("y".into(), y), ("z".into(), z)],
        "label",
        &labels,
        "three positive measurements",
    )
    .unwrap()
}

/// Small random dataset with `p` features drawn from a coarse grid (so ties
/// and repeated values occur) and `classes` labels.
pub fn grid_dataset(rng: &mut ChaCha8Rng, n: usize, p: usize, classes: usize) -> Dataset {
    let cols = (0..p)
        .map(|j| {
            let v = (0..n).map(|_| rng.gen_range(0..6) as f64 * 0.5).collect();
            (format!("f{j}"), v)
        })
        .collect();
    // the first rows cover every class
    let labels: Vec<String> = (0..n)
        .map(|i| format!("c{}", if i < classes { i } else { rng.gen_range(0..classes) }))
        .collect();
    Dataset::from_numeric(cols, "target", &labels, "").unwrap()
}

/// Documents built from a small vocabulary so that identical texts, and
/// therefore exact score ties, occur.
pub fn random_corpus(rng: &mut ChaCha8Rng, n: usize) -> Vec<(String, String)> {
    const VOCAB: &[&str] = &[
        "weight", "height", "ratio", "index", "risk", "income", "area", "forest", "land", "soil",
        "rain", "heart", "sleep", "steps", "glucose", "insulin",
    ];
    (0..n)
        .map(|i| {
            let len = rng.gen_range(1..6);
            let words: Vec<&str> = (0..len).map(|_| *VOCAB.choose(rng).unwrap()).collect();
            (format!("doc{:03}", rng.gen_range(0..1000) * 1000 + i), words.join(" "))
        })
        .collect()
}
