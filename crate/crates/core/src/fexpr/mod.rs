//! Feature-formula language.
//!
//! Formulas are row-wise expressions over dataset columns:
//!
//! ```text
//! expr     := or_expr
//! or_expr  := and_expr { "or" and_expr }
//! and_expr := cmp { "and" cmp }
//! cmp      := sum [ ("<" | "<=" | ">" | ">=" | "==" | "!=") sum ]
//! sum      := term { ("+" | "-") term }
//! term     := factor { ("*" | "/") factor }
//! factor   := number | column | "(" expr ")" | func "(" expr { "," expr } ")"
//!           | "-" factor | "if" expr "then" expr "else" expr
//! func     := log | exp | sqrt | abs | min | max
//! column   := identifier | "`" any characters except backtick "`"
//! ```
//!
//! A formula whose root is a comparison or boolean connective is a judgment;
//! its values are materialized as 0 or 1.

mod eval;
mod parse;
mod render;

use std::collections::BTreeSet;
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::tabular::FeatureMeta;

pub use eval::evaluate;
pub use parse::{parse, MAX_DEPTH};
pub use render::render;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum FexprError {
    #[error("syntax error at byte {offset}: {message}")]
    Syntax { offset: usize, message: String },
    #[error("expression nests deeper than {MAX_DEPTH} levels")]
    DepthExceeded,
    #[error("unknown column `{0}`")]
    UnknownColumn(String),
    #[error("type error: {0}")]
    Type(String),
    #[error("formula references no column")]
    NoColumns,
    #[error("non-finite result at row {row}")]
    NonFiniteResult { row: usize },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum BinOp {
    Add,
    Sub,
    Mul,
    Div,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum CmpOp {
    Lt,
    Le,
    Gt,
    Ge,
    Eq,
    Ne,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum LogicOp {
    And,
    Or,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Func {
    Log,
    Exp,
    Sqrt,
    Abs,
    Min,
    Max,
}

impl Func {
    pub const ALL: [Func; 6] = [Func::Log, Func::Exp, Func::Sqrt, Func::Abs, Func::Min, Func::Max];

    pub fn name(self) -> &'static str {
        match self {
            Func::Log => "log",
            Func::Exp => "exp",
            Func::Sqrt => "sqrt",
            Func::Abs => "abs",
            Func::Min => "min",
            Func::Max => "max",
        }
    }

    pub fn from_name(name: &str) -> Option<Func> {
        Func::ALL.into_iter().find(|f| f.name() == name)
    }

    /// `min` and `max` take two or more arguments, the rest exactly one.
    pub fn is_variadic(self) -> bool {
        matches!(self, Func::Min | Func::Max)
    }
}

/// Formula syntax tree. Numeric literals are finite and non-negative; a
/// leading minus parses as [`Expr::Neg`].
#[derive(Clone, Debug, PartialEq)]
pub enum Expr {
    Column(String),
    Number(f64),
    Neg(Box<Expr>),
    Binary(BinOp, Box<Expr>, Box<Expr>),
    Call(Func, Vec<Expr>),
    Compare(CmpOp, Box<Expr>, Box<Expr>),
    Logic(LogicOp, Box<Expr>, Box<Expr>),
    If(Box<Expr>, Box<Expr>, Box<Expr>),
}

impl Expr {
    pub fn depth(&self) -> usize {
        1 + match self {
            Expr::Column(_) | Expr::Number(_) => 0,
            Expr::Neg(e) => e.depth(),
            Expr::Binary(_, a, b) | Expr::Compare(_, a, b) | Expr::Logic(_, a, b) => a.depth().max(b.depth()),
            Expr::Call(_, args) => args.iter().map(Expr::depth).max().unwrap_or(0),
            Expr::If(c, t, e) => c.depth().max(t.depth()).max(e.depth()),
        }
    }

    fn collect_columns<'a>(&'a self, out: &mut BTreeSet<&'a str>) {
        match self {
            Expr::Column(name) => {
                out.insert(name);
            }
            Expr::Number(_) => {}
            Expr::Neg(e) => e.collect_columns(out),
            Expr::Binary(_, a, b) | Expr::Compare(_, a, b) | Expr::Logic(_, a, b) => {
                a.collect_columns(out);
                b.collect_columns(out);
            }
            Expr::Call(_, args) => args.iter().for_each(|a| a.collect_columns(out)),
            Expr::If(c, t, e) => {
                c.collect_columns(out);
                t.collect_columns(out);
                e.collect_columns(out);
            }
        }
    }
}

/// A parsed formula with its original text.
#[derive(Clone, Debug, PartialEq)]
pub struct FeatureExpr {
    pub ast: Expr,
    pub source_text: String,
}

impl FeatureExpr {
    /// Distinct column names referenced by the formula, sorted.
    pub fn free_columns(&self) -> BTreeSet<String> {
        free_columns(&self.ast)
    }
}

impl fmt::Display for FeatureExpr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&render(&self.ast))
    }
}

pub fn free_columns(e: &Expr) -> BTreeSet<String> {
    let mut names = BTreeSet::new();
    e.collect_columns(&mut names);
    names.into_iter().map(str::to_string).collect()
}

/// The three operation classes a generated feature can belong to.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum OperationKind {
    /// Numeric map of a single column.
    Scaling,
    /// Numeric fusion of two or more columns.
    Transformation,
    /// Rule-based binary decision.
    Judgment,
}

impl fmt::Display for OperationKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            OperationKind::Scaling => "scaling",
            OperationKind::Transformation => "transformation",
            OperationKind::Judgment => "judgment",
        };
        f.write_str(s)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub(crate) enum Ty {
    Num,
    Bool,
}

impl Ty {
    fn name(self) -> &'static str {
        match self {
            Ty::Num => "numeric",
            Ty::Bool => "boolean",
        }
    }
}

fn expect(e: &Expr, want: Ty, names: &dyn Fn(&str) -> bool, ctx: &str) -> Result<(), FexprError> {
    let got = type_of(e, names)?;
    if got != want {
        return Err(FexprError::Type(format!(
            "{ctx} expects a {} operand, found {} `{}`",
            want.name(),
            got.name(),
            render(e)
        )));
    }
    Ok(())
}

pub(crate) fn type_of(e: &Expr, names: &dyn Fn(&str) -> bool) -> Result<Ty, FexprError> {
    match e {
        Expr::Column(name) => {
            if names(name) {
                Ok(Ty::Num)
            } else {
                Err(FexprError::UnknownColumn(name.clone()))
            }
        }
        Expr::Number(_) => Ok(Ty::Num),
        Expr::Neg(inner) => expect(inner, Ty::Num, names, "negation").map(|_| Ty::Num),
        Expr::Binary(_, a, b) => {
            expect(a, Ty::Num, names, "arithmetic")?;
            expect(b, Ty::Num, names, "arithmetic")?;
            Ok(Ty::Num)
        }
        Expr::Call(func, args) => {
            for a in args {
                expect(a, Ty::Num, names, func.name())?;
            }
            Ok(Ty::Num)
        }
        Expr::Compare(_, a, b) => {
            expect(a, Ty::Num, names, "comparison")?;
            expect(b, Ty::Num, names, "comparison")?;
            Ok(Ty::Bool)
        }
        Expr::Logic(op, a, b) => {
            let ctx = if *op == LogicOp::And { "and" } else { "or" };
            expect(a, Ty::Bool, names, ctx)?;
            expect(b, Ty::Bool, names, ctx)?;
            Ok(Ty::Bool)
        }
        Expr::If(c, t, f) => {
            expect(c, Ty::Bool, names, "if condition")?;
            let tt = type_of(t, names)?;
            expect(f, tt, names, "else branch")?;
            Ok(tt)
        }
    }
}

/// Checks column references and typing against `schema`, then classifies
/// the formula by result type and number of distinct columns.
pub fn classify(e: &FeatureExpr, schema: &[FeatureMeta]) -> Result<OperationKind, FexprError> {
    let known = |name: &str| schema.iter().any(|m| m.name == name);
    let root = type_of(&e.ast, &known)?;
    let columns = e.free_columns().len();
    match (root, columns) {
        (_, 0) => Err(FexprError::NoColumns),
        (Ty::Bool, _) => Ok(OperationKind::Judgment),
        (Ty::Num, 1) => Ok(OperationKind::Scaling),
        (Ty::Num, _) => Ok(OperationKind::Transformation),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn schema(names: &[&str]) -> Vec<FeatureMeta> {
        names.iter().map(|n| FeatureMeta::numeric(*n)).collect()
    }

    fn kind(text: &str, names: &[&str]) -> Result<OperationKind, FexprError> {
        classify(&parse(text).unwrap(), &schema(names))
    }

    #[test]
    fn classifies_operation_kinds() {
        assert_eq!(kind("log(GDP)", &["GDP"]), Ok(OperationKind::Scaling));
        assert_eq!(
            kind(
                "(`Gross Primary Enrollment` + `Gross Tertiary Enrollment`) / 2",
                &["Gross Primary Enrollment", "Gross Tertiary Enrollment"]
            ),
            Ok(OperationKind::Transformation)
        );
        assert_eq!(
            kind("weight / (height*height) > 27", &["weight", "height"]),
            Ok(OperationKind::Judgment)
        );
        assert_eq!(kind("x > 1 and x < 5", &["x"]), Ok(OperationKind::Judgment));
        assert_eq!(kind("if x > 1 then x else 0", &["x"]), Ok(OperationKind::Scaling));
        assert_eq!(kind("x - x", &["x"]), Ok(OperationKind::Scaling));
    }

    #[test]
    fn classify_errors() {
        assert_eq!(kind("a + nope", &["a"]), Err(FexprError::UnknownColumn("nope".into())));
        assert!(matches!(kind("(a > 1) + 2", &["a"]), Err(FexprError::Type(_))));
        assert!(matches!(kind("a and a > 1", &["a"]), Err(FexprError::Type(_))));
        assert!(matches!(kind("if a then 1 else 0", &["a"]), Err(FexprError::Type(_))));
        assert!(matches!(kind("if a > 0 then a > 1 else 0", &["a"]), Err(FexprError::Type(_))));
        assert_eq!(kind("3.5 * 2", &["a"]), Err(FexprError::NoColumns));
    }

    #[test]
    fn free_column_sets() {
        let cols = |t: &str| parse(t).unwrap().free_columns().into_iter().collect::<Vec<_>>();
        assert_eq!(cols("a/(b+a)"), vec!["a", "b"]);
        assert!(cols("3.5").is_empty());
        assert_eq!(
            cols("`CO2 Emissions` / ((`Forested Area (%)` / 100) * `Land Area (Km2)`)"),
            vec!["CO2 Emissions", "Forested Area (%)", "Land Area (Km2)"]
        );
    }
}
