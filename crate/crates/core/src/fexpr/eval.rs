use super::{classify, BinOp, CmpOp, Expr, FeatureExpr, FexprError, Func, LogicOp};
use crate::tabular::Dataset;

/// Expression with column references resolved to dataset slices.
enum Node<'d> {
    Col(&'d [f64]),
    Num(f64),
    Neg(Box<Node<'d>>),
    Bin(BinOp, Box<Node<'d>>, Box<Node<'d>>),
    Call(Func, Vec<Node<'d>>),
    Cmp(CmpOp, Box<Node<'d>>, Box<Node<'d>>),
    Logic(LogicOp, Box<Node<'d>>, Box<Node<'d>>),
    If(Box<Node<'d>>, Box<Node<'d>>, Box<Node<'d>>),
}

fn compile<'d>(e: &Expr, d: &'d Dataset) -> Result<Node<'d>, FexprError> {
    let b = |x: &Expr| compile(x, d).map(Box::new);
    Ok(match e {
        Expr::Column(name) => Node::Col(
            d.column(name)
                .ok_or_else(|| FexprError::UnknownColumn(name.clone()))?
                .values(),
        ),
        Expr::Number(v) => Node::Num(*v),
        Expr::Neg(x) => Node::Neg(b(x)?),
        Expr::Binary(op, l, r) => Node::Bin(*op, b(l)?, b(r)?),
        Expr::Call(f, args) => Node::Call(*f, args.iter().map(|a| compile(a, d)).collect::<Result<_, _>>()?),
        Expr::Compare(op, l, r) => Node::Cmp(*op, b(l)?, b(r)?),
        Expr::Logic(op, l, r) => Node::Logic(*op, b(l)?, b(r)?),
        Expr::If(c, t, f) => Node::If(b(c)?, b(t)?, b(f)?),
    })
}

fn truth(v: bool) -> f64 {
    if v {
        1.0
    } else {
        0.0
    }
}

/// Evaluates one row. `None` signals a non-finite intermediate on a branch
/// that was actually taken.
fn eval_row(n: &Node<'_>, row: usize) -> Option<f64> {
    let v = match n {
        Node::Col(values) => values[row],
        Node::Num(v) => *v,
        Node::Neg(x) => -eval_row(x, row)?,
        Node::Bin(op, l, r) => {
            let (a, b) = (eval_row(l, row)?, eval_row(r, row)?);
            match op {
                BinOp::Add => a + b,
                BinOp::Sub => a - b,
                BinOp::Mul => a * b,
                BinOp::Div => a / b,
            }
        }
        Node::Call(f, args) => {
            let first = eval_row(&args[0], row)?;
            match f {
                Func::Log => first.ln(),
                Func::Exp => first.exp(),
                Func::Sqrt => first.sqrt(),
                Func::Abs => first.abs(),
                Func::Min | Func::Max => {
                    let mut acc = first;
                    for a in &args[1..] {
                        let v = eval_row(a, row)?;
                        acc = if *f == Func::Min { acc.min(v) } else { acc.max(v) };
                    }
                    acc
                }
            }
        }
        Node::Cmp(op, l, r) => {
            let (a, b) = (eval_row(l, row)?, eval_row(r, row)?);
            truth(match op {
                CmpOp::Lt => a < b,
                CmpOp::Le => a <= b,
                CmpOp::Gt => a > b,
                CmpOp::Ge => a >= b,
                CmpOp::Eq => a == b,
                CmpOp::Ne => a != b,
            })
        }
        Node::Logic(op, l, r) => {
            // both sides are evaluated so a broken operand is never masked
            let (a, b) = (eval_row(l, row)? != 0.0, eval_row(r, row)? != 0.0);
            truth(match op {
                LogicOp::And => a && b,
                LogicOp::Or => a || b,
            })
        }
        Node::If(c, t, f) => {
            if eval_row(c, row)? != 0.0 {
                eval_row(t, row)?
            } else {
                eval_row(f, row)?
            }
        }
    };
    v.is_finite().then_some(v)
}

/// Evaluates a formula over every row of `d`.
///
/// Any non-finite value on an evaluated path (division by zero, log of a
/// non-positive number, overflow) fails with the first offending row.
pub fn evaluate(e: &FeatureExpr, d: &Dataset) -> Result<Vec<f64>, FexprError> {
    classify(e, &d.schema())?;
    let node = compile(&e.ast, d)?;
    (0..d.n_rows())
        .map(|row| eval_row(&node, row).ok_or(FexprError::NonFiniteResult { row }))
        .collect()
}
