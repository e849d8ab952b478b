//! A small arithmetic-expression interpreter for custom system
//! descriptions.
//!
//! Grammar: numbers, the state variables `x1 ... xd`, the constants `pi` and
//! `e`, unary minus, `+ - * /`, right-associative `^`, parentheses, and the
//! one-argument functions `sin cos tan sinh cosh tanh exp ln log sqrt abs`
//! (`log` is the natural logarithm). Expressions are parsed once into a
//! small AST and evaluated against a state slice.

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Func {
    Sin,
    Cos,
    Tan,
    Sinh,
    Cosh,
    Tanh,
    Exp,
    Ln,
    Sqrt,
    Abs,
}

impl Func {
    fn from_name(name: &str) -> Option<Self> {
        Some(match name {
            "sin" => Self::Sin,
            "cos" => Self::Cos,
            "tan" => Self::Tan,
            "sinh" => Self::Sinh,
            "cosh" => Self::Cosh,
            "tanh" => Self::Tanh,
            "exp" => Self::Exp,
            "ln" | "log" => Self::Ln,
            "sqrt" => Self::Sqrt,
            "abs" => Self::Abs,
            _ => return None,
        })
    }

    fn apply(&self, v: f64) -> f64 {
        match self {
            Self::Sin => v.sin(),
            Self::Cos => v.cos(),
            Self::Tan => v.tan(),
            Self::Sinh => v.sinh(),
            Self::Cosh => v.cosh(),
            Self::Tanh => v.tanh(),
            Self::Exp => v.exp(),
            Self::Ln => v.ln(),
            Self::Sqrt => v.sqrt(),
            Self::Abs => v.abs(),
        }
    }
}

#[derive(Debug, Clone)]
enum Node {
    Number(f64),
    Variable(usize),
    Neg(Box<Node>),
    Add(Box<Node>, Box<Node>),
    Sub(Box<Node>, Box<Node>),
    Mul(Box<Node>, Box<Node>),
    Div(Box<Node>, Box<Node>),
    Pow(Box<Node>, Box<Node>),
    Call(Func, Box<Node>),
}

/// A parsed scalar expression over state variables `x1 ... xd`.
#[derive(Debug, Clone)]
pub struct Expression {
    root: Node,
    source: String,
}

impl Expression {
    /// Parse `source` and check that every variable index is within `dim`.
    pub fn parse(source: &str, dim: usize) -> Result<Self> {
        let tokens = tokenize(source)?;
        let mut parser = Parser {
            tokens: &tokens,
            pos: 0,
            source,
            dim,
        };
        let root = parser.expression()?;
        if parser.pos != tokens.len() {
            return Err(parser.error("unexpected trailing input"));
        }
        Ok(Self {
            root,
            source: source.to_string(),
        })
    }

    pub fn source(&self) -> &str {
        &self.source
    }

    /// Evaluate against a state vector (`x1` is `state[0]`).
    pub fn eval(&self, state: &[f64]) -> f64 {
        eval_node(&self.root, state)
    }
}

fn eval_node(node: &Node, state: &[f64]) -> f64 {
    match node {
        Node::Number(v) => *v,
        Node::Variable(i) => state[*i],
        Node::Neg(a) => -eval_node(a, state),
        Node::Add(a, b) => eval_node(a, state) + eval_node(b, state),
        Node::Sub(a, b) => eval_node(a, state) - eval_node(b, state),
        Node::Mul(a, b) => eval_node(a, state) * eval_node(b, state),
        Node::Div(a, b) => eval_node(a, state) / eval_node(b, state),
        Node::Pow(a, b) => eval_node(a, state).powf(eval_node(b, state)),
        Node::Call(f, a) => f.apply(eval_node(a, state)),
    }
}

#[derive(Debug, Clone, PartialEq)]
enum Token {
    Number(f64),
    Ident(String),
    Plus,
    Minus,
    Star,
    Slash,
    Caret,
    LParen,
    RParen,
}

fn tokenize(source: &str) -> Result<Vec<Token>> {
    let mut tokens = Vec::new();
    let bytes = source.as_bytes();
    let mut i = 0;
    while i < bytes.len() {
        let c = bytes[i] as char;
        match c {
            ' ' | '\t' | '\n' | '\r' => i += 1,
            '+' => {
                tokens.push(Token::Plus);
                i += 1;
            }
            '-' => {
                tokens.push(Token::Minus);
                i += 1;
            }
            '*' => {
                tokens.push(Token::Star);
                i += 1;
            }
            '/' => {
                tokens.push(Token::Slash);
                i += 1;
            }
            '^' => {
                tokens.push(Token::Caret);
                i += 1;
            }
            '(' => {
                tokens.push(Token::LParen);
                i += 1;
            }
            ')' => {
                tokens.push(Token::RParen);
                i += 1;
            }
            '0'..='9' | '.' => {
                let start = i;
                while i < bytes.len() && matches!(bytes[i] as char, '0'..='9' | '.') {
                    i += 1;
                }
                // Scientific notation suffix.
                if i < bytes.len() && matches!(bytes[i] as char, 'e' | 'E') {
                    let mut j = i + 1;
                    if j < bytes.len() && matches!(bytes[j] as char, '+' | '-') {
                        j += 1;
                    }
                    if j < bytes.len() && (bytes[j] as char).is_ascii_digit() {
                        i = j;
                        while i < bytes.len() && (bytes[i] as char).is_ascii_digit() {
                            i += 1;
                        }
                    }
                }
                let text = &source[start..i];
                let value: f64 = text
                    .parse()
                    .map_err(|_| Error::Expression(format!("bad numeric literal '{text}'")))?;
                tokens.push(Token::Number(value));
            }
            'a'..='z' | 'A'..='Z' | '_' => {
                let start = i;
                while i < bytes.len()
                    && matches!(bytes[i] as char, 'a'..='z' | 'A'..='Z' | '0'..='9' | '_')
                {
                    i += 1;
                }
                tokens.push(Token::Ident(source[start..i].to_string()));
            }
            other => {
                return Err(Error::Expression(format!(
                    "unexpected character '{other}' at byte {i} in '{source}'"
                )))
            }
        }
    }
    Ok(tokens)
}

struct Parser<'a> {
    tokens: &'a [Token],
    pos: usize,
    source: &'a str,
    dim: usize,
}

impl<'a> Parser<'a> {
    fn error(&self, message: &str) -> Error {
        Error::Expression(format!("{message} (token {} of '{}')", self.pos, self.source))
    }

    fn peek(&self) -> Option<&Token> {
        self.tokens.get(self.pos)
    }

    fn advance(&mut self) -> Option<&Token> {
        let t = self.tokens.get(self.pos);
        if t.is_some() {
            self.pos += 1;
        }
        t
    }

    fn expression(&mut self) -> Result<Node> {
        let mut node = self.term()?;
        while let Some(op) = self.peek() {
            match op {
                Token::Plus => {
                    self.pos += 1;
                    node = Node::Add(Box::new(node), Box::new(self.term()?));
                }
                Token::Minus => {
                    self.pos += 1;
                    node = Node::Sub(Box::new(node), Box::new(self.term()?));
                }
                _ => break,
            }
        }
        Ok(node)
    }

    fn term(&mut self) -> Result<Node> {
        let mut node = self.unary()?;
        while let Some(op) = self.peek() {
            match op {
                Token::Star => {
                    self.pos += 1;
                    node = Node::Mul(Box::new(node), Box::new(self.unary()?));
                }
                Token::Slash => {
                    self.pos += 1;
                    node = Node::Div(Box::new(node), Box::new(self.unary()?));
                }
                _ => break,
            }
        }
        Ok(node)
    }

    fn unary(&mut self) -> Result<Node> {
        match self.peek() {
            Some(Token::Minus) => {
                self.pos += 1;
                Ok(Node::Neg(Box::new(self.unary()?)))
            }
            Some(Token::Plus) => {
                self.pos += 1;
                self.unary()
            }
            _ => self.power(),
        }
    }

    fn power(&mut self) -> Result<Node> {
        let base = self.atom()?;
        if matches!(self.peek(), Some(Token::Caret)) {
            self.pos += 1;
            // Right-associative; exponent may carry its own unary minus.
            let exponent = self.unary()?;
            return Ok(Node::Pow(Box::new(base), Box::new(exponent)));
        }
        Ok(base)
    }

    fn atom(&mut self) -> Result<Node> {
        match self.advance().cloned() {
            Some(Token::Number(v)) => Ok(Node::Number(v)),
            Some(Token::LParen) => {
                let inner = self.expression()?;
                match self.advance() {
                    Some(Token::RParen) => Ok(inner),
                    _ => Err(self.error("missing closing parenthesis")),
                }
            }
            Some(Token::Ident(name)) => self.ident(&name),
            _ => Err(self.error("expected a number, variable, function, or '('")),
        }
    }

    fn ident(&mut self, name: &str) -> Result<Node> {
        if let Some(func) = Func::from_name(name) {
            match self.advance() {
                Some(Token::LParen) => {}
                _ => return Err(self.error(&format!("function '{name}' needs parentheses"))),
            }
            let arg = self.expression()?;
            match self.advance() {
                Some(Token::RParen) => return Ok(Node::Call(func, Box::new(arg))),
                _ => return Err(self.error("missing closing parenthesis after function argument")),
            }
        }
        match name {
            "pi" => return Ok(Node::Number(std::f64::consts::PI)),
            "e" => return Ok(Node::Number(std::f64::consts::E)),
            _ => {}
        }
        if let Some(rest) = name.strip_prefix('x') {
            if let Ok(idx) = rest.parse::<usize>() {
                if idx >= 1 && idx <= self.dim {
                    return Ok(Node::Variable(idx - 1));
                }
                return Err(Error::Expression(format!(
                    "variable '{name}' out of range for dimension {}",
                    self.dim
                )));
            }
        }
        Err(Error::Expression(format!("unknown identifier '{name}'")))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn eval(src: &str, state: &[f64]) -> f64 {
        Expression::parse(src, state.len()).unwrap().eval(state)
    }

    #[test]
    fn arithmetic_and_precedence() {
        assert_relative_eq!(eval("1 + 2 * 3", &[]), 7.0);
        assert_relative_eq!(eval("(1 + 2) * 3", &[]), 9.0);
        assert_relative_eq!(eval("2 ^ 3 ^ 2", &[]), 512.0); // right-assoc
        assert_relative_eq!(eval("-2 ^ 2", &[]), 4.0); // unary binds the base
        assert_relative_eq!(eval("6 / 3 / 2", &[]), 1.0); // left-assoc
        assert_relative_eq!(eval("2e-3 + 1", &[]), 1.002);
    }

    #[test]
    fn variables_and_functions() {
        assert_relative_eq!(eval("-x1 / 2 + tanh(x2)", &[4.0, 0.0]), -2.0);
        assert_relative_eq!(eval("sin(pi / 2)", &[]), 1.0, epsilon = 1e-15);
        assert_relative_eq!(eval("ln(e)", &[]), 1.0, epsilon = 1e-15);
        assert_relative_eq!(eval("log(e)", &[]), 1.0, epsilon = 1e-15);
        assert_relative_eq!(eval("sqrt(abs(-9))", &[]), 3.0);
    }

    #[test]
    fn rejects_unknown_and_out_of_range_variables() {
        assert!(Expression::parse("x3", 2).is_err());
        assert!(Expression::parse("x0", 2).is_err());
        assert!(Expression::parse("y1", 2).is_err());
        assert!(Expression::parse("foo(1)", 1).is_err());
    }

    #[test]
    fn rejects_malformed_input() {
        assert!(Expression::parse("1 +", 0).is_err());
        assert!(Expression::parse("(1 + 2", 0).is_err());
        assert!(Expression::parse("sin 1", 0).is_err());
        assert!(Expression::parse("1 2", 0).is_err());
        assert!(Expression::parse("1 $ 2", 0).is_err());
        assert!(Expression::parse("1..2", 0).is_err());
    }

    #[test]
    fn nested_function_calls() {
        assert_relative_eq!(
            eval("exp(-(x1 - 1)^2 / 2)", &[1.0]),
            1.0,
            epsilon = 1e-15
        );
        assert_relative_eq!(eval("cosh(x1)^2 - sinh(x1)^2", &[0.73]), 1.0, epsilon = 1e-12);
    }
}
