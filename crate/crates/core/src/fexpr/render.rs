use super::parse::{is_ident_char, is_ident_start, KEYWORDS};
use super::{BinOp, CmpOp, Expr, Func, LogicOp};

/// Canonical text for an expression. Every compound operand is wrapped in
/// parentheses so precedence is explicit, and column names that are not
/// plain identifiers are back-quoted.
pub fn render(e: &Expr) -> String {
    let mut out = String::new();
    write_expr(e, &mut out);
    out
}

fn column(name: &str, out: &mut String) {
    let mut chars = name.chars();
    let plain = chars.next().is_some_and(is_ident_start)
        && chars.all(is_ident_char)
        && !KEYWORDS.contains(&name)
        && Func::from_name(name).is_none();
    if plain {
        out.push_str(name);
    } else {
        out.push('`');
        out.push_str(name);
        out.push('`');
    }
}

fn operand(e: &Expr, out: &mut String) {
    let compound = matches!(
        e,
        Expr::Binary(..) | Expr::Compare(..) | Expr::Logic(..) | Expr::If(..)
    );
    if compound {
        out.push('(');
        write_expr(e, out);
        out.push(')');
    } else {
        write_expr(e, out);
    }
}

fn write_expr(e: &Expr, out: &mut String) {
    match e {
        Expr::Column(name) => column(name, out),
        Expr::Number(v) => out.push_str(&v.to_string()),
        Expr::Neg(inner) => {
            out.push('-');
            operand(inner, out);
        }
        Expr::Binary(op, a, b) => {
            let sym = match op {
                BinOp::Add => " + ",
                BinOp::Sub => " - ",
                BinOp::Mul => " * ",
                BinOp::Div => " / ",
            };
            operand(a, out);
            out.push_str(sym);
            operand(b, out);
        }
        Expr::Compare(op, a, b) => {
            let sym = match op {
                CmpOp::Lt => " < ",
                CmpOp::Le => " <= ",
                CmpOp::Gt => " > ",
                CmpOp::Ge => " >= ",
                CmpOp::Eq => " == ",
                CmpOp::Ne => " != ",
            };
            operand(a, out);
            out.push_str(sym);
            operand(b, out);
        }
        Expr::Logic(op, a, b) => {
            operand(a, out);
            out.push_str(match op {
                LogicOp::And => " and ",
                LogicOp::Or => " or ",
            });
            operand(b, out);
        }
        Expr::Call(func, args) => {
            out.push_str(func.name());
            out.push('(');
            for (i, a) in args.iter().enumerate() {
                if i > 0 {
                    out.push_str(", ");
                }
                write_expr(a, out);
            }
            out.push(')');
        }
        Expr::If(c, t, f) => {
            out.push_str("if ");
            write_expr(c, out);
            out.push_str(" then ");
            write_expr(t, out);
            out.push_str(" else ");
            write_expr(f, out);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::super::parse;
    use super::*;

    fn canon(text: &str) -> String {
        render(&parse(text).unwrap().ast)
    }

    #[test]
    fn explicit_precedence() {
        assert_eq!(canon("a+b*c"), "a + (b * c)");
        assert_eq!(canon("a+b+c"), "(a + b) + c");
        assert_eq!(canon("-(a+b)"), "-(a + b)");
        assert_eq!(canon("a * -b"), "a * -b");
        assert_eq!(canon("x>1 and y<=2"), "(x > 1) and (y <= 2)");
        assert_eq!(canon("1 + if a > 0 then a else 0"), "1 + (if a > 0 then a else 0)");
        assert_eq!(canon("min(a,b)"), "min(a, b)");
    }

    #[test]
    fn quoting() {
        assert_eq!(canon("`Land Area (Km2)` / 2"), "`Land Area (Km2)` / 2");
        assert_eq!(canon("`if` + `log` + `9lives`"), "(`if` + `log`) + `9lives`");
        assert_eq!(canon("`plain`"), "plain");
    }

    #[test]
    fn numbers_reparse_exactly() {
        for v in [0.0, 0.1, 1.0 / 3.0, 1e-9, 123456789.125, 1e21] {
            let text = render(&Expr::Number(v));
            assert_eq!(parse(&text).unwrap().ast, Expr::Number(v), "{text}");
        }
    }
}
