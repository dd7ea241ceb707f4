//! Text format for expression trees.
//!
//! Parenthesized prefix form with lowercase operator names, leaves `p`
//! and `q`, and decimal literals:
//!
//! ```text
//! (exp (div (mul 10 (softmax p)) (max (softmax p))))
//! ```
//!
//! `(div a b)` is sugar for `(mul a (inv b))` and `(sub a b)` for
//! `(add a (neg b))`; printing always emits the desugared form, so
//! `parse(print(t))` reproduces `t` structurally.

use thiserror::Error;

use super::{ExprTree, Leaf};
use crate::numerics::OpKind;

/// Parse failure with the byte offset where it happened.
#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ParseError {
    #[error("syntax error at byte {pos}: {message}")]
    Syntax { pos: usize, message: String },
    #[error("unknown operator `{name}` at byte {pos}")]
    UnknownOperator { pos: usize, name: String },
    #[error("operator `{name}` at byte {pos} expects {expected} argument(s), got {got}")]
    Arity {
        pos: usize,
        name: String,
        expected: usize,
        got: usize,
    },
    #[error("invalid numeric literal `{text}` at byte {pos}")]
    Number { pos: usize, text: String },
}

#[derive(Debug, Clone, PartialEq)]
enum Token {
    Open(usize),
    Close(usize),
    Atom(usize, String),
}

impl Token {
    fn pos(&self) -> usize {
        match self {
            Token::Open(p) | Token::Close(p) => *p,
            Token::Atom(p, _) => *p,
        }
    }
}

fn tokenize(source: &str) -> Vec<Token> {
    let mut tokens = Vec::new();
    let mut atom_start = None;
    for (i, ch) in source.char_indices() {
        if ch == '(' || ch == ')' || ch.is_whitespace() {
            if let Some(start) = atom_start.take() {
                tokens.push(Token::Atom(start, source[start..i].to_string()));
            }
            if ch == '(' {
                tokens.push(Token::Open(i));
            } else if ch == ')' {
                tokens.push(Token::Close(i));
            }
        } else if atom_start.is_none() {
            atom_start = Some(i);
        }
    }
    if let Some(start) = atom_start {
        tokens.push(Token::Atom(start, source[start..].to_string()));
    }
    tokens
}

fn op_by_name(name: &str) -> Option<OpKind> {
    OpKind::ALL.iter().copied().find(|k| k.name() == name)
}

struct Parser {
    tokens: Vec<Token>,
    cursor: usize,
    len: usize,
}

impl Parser {
    fn peek(&self) -> Option<&Token> {
        self.tokens.get(self.cursor)
    }

    fn next(&mut self) -> Option<Token> {
        let t = self.tokens.get(self.cursor).cloned();
        if t.is_some() {
            self.cursor += 1;
        }
        t
    }

    fn expr(&mut self) -> Result<ExprTree, ParseError> {
        match self.next() {
            None => Err(ParseError::Syntax {
                pos: self.len,
                message: "unexpected end of input".into(),
            }),
            Some(Token::Close(pos)) => Err(ParseError::Syntax {
                pos,
                message: "unexpected `)`".into(),
            }),
            Some(Token::Atom(pos, text)) => atom(&text, pos),
            Some(Token::Open(open_pos)) => {
                let (pos, name) = match self.next() {
                    Some(Token::Atom(pos, name)) => (pos, name),
                    Some(tok) => {
                        return Err(ParseError::Syntax {
                            pos: tok.pos(),
                            message: "expected operator name after `(`".into(),
                        })
                    }
                    None => {
                        return Err(ParseError::Syntax {
                            pos: open_pos,
                            message: "unclosed `(`".into(),
                        })
                    }
                };
                let mut args = Vec::new();
                loop {
                    match self.peek() {
                        Some(Token::Close(_)) => {
                            self.cursor += 1;
                            break;
                        }
                        None => {
                            return Err(ParseError::Syntax {
                                pos: open_pos,
                                message: "unclosed `(`".into(),
                            })
                        }
                        _ => args.push(self.expr()?),
                    }
                }
                build_call(&name, pos, args)
            }
        }
    }
}

fn atom(text: &str, pos: usize) -> Result<ExprTree, ParseError> {
    match text {
        "p" => Ok(ExprTree::Leaf(Leaf::P)),
        "q" => Ok(ExprTree::Leaf(Leaf::Q)),
        _ => {
            let first = text.chars().next().unwrap_or(' ');
            if first.is_ascii_digit() || first == '-' || first == '+' || first == '.' {
                match text.parse::<f64>() {
                    Ok(v) if v.is_finite() => Ok(ExprTree::Leaf(Leaf::Const(v))),
                    _ => Err(ParseError::Number {
                        pos,
                        text: text.to_string(),
                    }),
                }
            } else {
                Err(ParseError::UnknownOperator {
                    pos,
                    name: text.to_string(),
                })
            }
        }
    }
}

fn build_call(name: &str, pos: usize, mut args: Vec<ExprTree>) -> Result<ExprTree, ParseError> {
    let check = |expected: usize, got: usize| -> Result<(), ParseError> {
        if expected != got {
            Err(ParseError::Arity {
                pos,
                name: name.to_string(),
                expected,
                got,
            })
        } else {
            Ok(())
        }
    };
    match name {
        "div" => {
            check(2, args.len())?;
            let b = args.pop().unwrap();
            let a = args.pop().unwrap();
            Ok(ExprTree::binary(
                OpKind::Mul,
                a,
                ExprTree::unary(OpKind::Inv, b),
            ))
        }
        "sub" => {
            check(2, args.len())?;
            let b = args.pop().unwrap();
            let a = args.pop().unwrap();
            Ok(ExprTree::binary(
                OpKind::Add,
                a,
                ExprTree::unary(OpKind::Neg, b),
            ))
        }
        _ => match op_by_name(name) {
            Some(kind) => {
                check(kind.arity(), args.len())?;
                Ok(ExprTree::Op {
                    kind,
                    children: args,
                })
            }
            None => Err(ParseError::UnknownOperator {
                pos,
                name: name.to_string(),
            }),
        },
    }
}

/// Parse one expression; trailing input is an error.
pub fn parse(source: &str) -> Result<ExprTree, ParseError> {
    let tokens = tokenize(source);
    let mut parser = Parser {
        tokens,
        cursor: 0,
        len: source.len(),
    };
    let tree = parser.expr()?;
    if let Some(extra) = parser.peek() {
        return Err(ParseError::Syntax {
            pos: extra.pos(),
            message: "trailing input after expression".into(),
        });
    }
    Ok(tree)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::rngs::StdRng;
    use rand::SeedableRng;

    use crate::expr::{eval, random_tree, EvalContext, GrowMethod};
    use crate::numerics::BatchMatrix;

    #[test]
    fn parses_simple_add() {
        let tree = parse("(add p q)").unwrap();
        assert_eq!(
            tree,
            ExprTree::binary(OpKind::Add, ExprTree::leaf_p(), ExprTree::leaf_q())
        );
        assert_eq!(tree.to_string(), "(add p q)");
    }

    #[test]
    fn parses_literals_and_whitespace() {
        let tree = parse("  (mul\n 2.5  p)\t").unwrap();
        assert_eq!(
            tree,
            ExprTree::binary(OpKind::Mul, ExprTree::constant(2.5), ExprTree::leaf_p())
        );
        assert_eq!(parse("-3").unwrap(), ExprTree::constant(-3.0));
        assert_eq!(parse("1e-3").unwrap(), ExprTree::constant(0.001));
    }

    #[test]
    fn div_and_sub_are_sugar() {
        let div = parse("(div p q)").unwrap();
        assert_eq!(
            div,
            ExprTree::binary(
                OpKind::Mul,
                ExprTree::leaf_p(),
                ExprTree::unary(OpKind::Inv, ExprTree::leaf_q())
            )
        );
        let sub = parse("(sub p q)").unwrap();
        assert_eq!(
            sub,
            ExprTree::binary(
                OpKind::Add,
                ExprTree::leaf_p(),
                ExprTree::unary(OpKind::Neg, ExprTree::leaf_q())
            )
        );
    }

    #[test]
    fn max_is_unary() {
        match parse("(max p q)") {
            Err(ParseError::Arity {
                name,
                expected: 1,
                got: 2,
                ..
            }) => assert_eq!(name, "max"),
            other => panic!("expected arity error, got {other:?}"),
        }
    }

    #[test]
    fn reports_positions() {
        match parse("(add p r)") {
            Err(ParseError::UnknownOperator { pos, name }) => {
                assert_eq!(name, "r");
                assert_eq!(pos, 7);
            }
            other => panic!("unexpected {other:?}"),
        }
        assert!(matches!(parse("(add p"), Err(ParseError::Syntax { .. })));
        assert!(matches!(parse(")"), Err(ParseError::Syntax { pos: 0, .. })));
        assert!(matches!(parse("(add p q) q"), Err(ParseError::Syntax { .. })));
        assert!(matches!(parse(""), Err(ParseError::Syntax { .. })));
        assert!(matches!(parse("(3 p)"), Err(ParseError::UnknownOperator { .. })));
        assert!(matches!(parse("1.2.3"), Err(ParseError::Number { .. })));
        assert!(matches!(parse("inf"), Err(ParseError::UnknownOperator { .. })));
    }

    #[test]
    fn round_trip_ten_thousand_random_trees() {
        let mut rng = StdRng::seed_from_u64(2024);
        let contexts: Vec<EvalContext> = (0..10)
            .map(|i| {
                let mut p = BatchMatrix::zeros(2, 3);
                for j in 0..6 {
                    p.data_mut()[j] = ((i * 6 + j) as f64 * 0.37).sin() * 4.0;
                }
                EvalContext::from_labels(p, &[i as u32 % 3, (i as u32 + 1) % 3]).unwrap()
            })
            .collect();
        for trial in 0..10_000 {
            let tree = random_tree(&mut rng, 1, 6, GrowMethod::Grow);
            let text = tree.to_string();
            let reparsed = parse(&text).unwrap_or_else(|e| panic!("reparse `{text}`: {e}"));
            assert_eq!(reparsed, tree, "structural round-trip failed for `{text}`");
            if trial % 100 == 0 {
                for c in &contexts {
                    let a = eval(&tree, c).unwrap();
                    let b = eval(&reparsed, c).unwrap();
                    // Bitwise equality: same structure, same arithmetic.
                    assert!(a
                        .data()
                        .iter()
                        .zip(b.data())
                        .all(|(x, y)| x.to_bits() == y.to_bits()));
                }
            }
        }
    }
}
