//! Expressions in the torus coordinates `x1, …, x{2n}`.
//!
//! ```text
//! expr  := term (('+' | '-') term)*
//! term  := unary (('*' | '/') unary)*
//! unary := '-' unary | power
//! power := atom ('^' unary)?
//! atom  := number | 'pi' | 'x'k | func '(' expr ')' | '(' expr ')'
//! func  := 'sin' | 'cos' | 'exp'
//! ```

use cyflow::Error;

#[derive(Clone, Debug, PartialEq)]
enum Node {
    Const(f64),
    Coord(usize),
    Neg(Box<Node>),
    Bin(Op, Box<Node>, Box<Node>),
    Call(Func, Box<Node>),
}

#[derive(Clone, Copy, Debug, PartialEq)]
enum Op {
    Add,
    Sub,
    Mul,
    Div,
    Pow,
}

#[derive(Clone, Copy, Debug, PartialEq)]
enum Func {
    Sin,
    Cos,
    Exp,
}

/// A parsed formula over `dim` coordinates.
#[derive(Clone, Debug, PartialEq)]
pub struct Formula {
    root: Node,
}

impl Formula {
    pub fn parse(src: &str, dim: usize) -> Result<Self, Error> {
        let mut p = Parser { src: src.as_bytes(), pos: 0, dim };
        let root = p.expr()?;
        p.skip_ws();
        if p.pos != p.src.len() {
            return Err(p.error("unexpected trailing input"));
        }
        Ok(Formula { root })
    }

    pub fn eval(&self, x: &[f64]) -> f64 {
        eval(&self.root, x)
    }
}

fn eval(node: &Node, x: &[f64]) -> f64 {
    match node {
        Node::Const(c) => *c,
        Node::Coord(k) => x[*k],
        Node::Neg(a) => -eval(a, x),
        Node::Bin(op, a, b) => {
            let (a, b) = (eval(a, x), eval(b, x));
            match op {
                Op::Add => a + b,
                Op::Sub => a - b,
                Op::Mul => a * b,
                Op::Div => a / b,
                Op::Pow => a.powf(b),
            }
        }
        Node::Call(f, a) => {
            let a = eval(a, x);
            match f {
                Func::Sin => a.sin(),
                Func::Cos => a.cos(),
                Func::Exp => a.exp(),
            }
        }
    }
}

struct Parser<'a> {
    src: &'a [u8],
    pos: usize,
    dim: usize,
}

impl Parser<'_> {
    fn error(&self, msg: impl Into<String>) -> Error {
        Error::Formula {
            pos: self.pos,
            msg: msg.into(),
        }
    }

    fn skip_ws(&mut self) {
        while self.pos < self.src.len() && self.src[self.pos].is_ascii_whitespace() {
            self.pos += 1;
        }
    }

    fn peek(&mut self) -> Option<u8> {
        self.skip_ws();
        self.src.get(self.pos).copied()
    }

    fn eat(&mut self, c: u8) -> bool {
        if self.peek() == Some(c) {
            self.pos += 1;
            true
        } else {
            false
        }
    }

    fn expr(&mut self) -> Result<Node, Error> {
        let mut lhs = self.term()?;
        loop {
            let op = match self.peek() {
                Some(b'+') => Op::Add,
                Some(b'-') => Op::Sub,
                _ => return Ok(lhs),
            };
            self.pos += 1;
            lhs = Node::Bin(op, Box::new(lhs), Box::new(self.term()?));
        }
    }

    fn term(&mut self) -> Result<Node, Error> {
        let mut lhs = self.unary()?;
        loop {
            let op = match self.peek() {
                Some(b'*') => Op::Mul,
                Some(b'/') => Op::Div,
                _ => return Ok(lhs),
            };
            self.pos += 1;
            lhs = Node::Bin(op, Box::new(lhs), Box::new(self.unary()?));
        }
    }

    fn unary(&mut self) -> Result<Node, Error> {
        if self.eat(b'-') {
            return Ok(Node::Neg(Box::new(self.unary()?)));
        }
        if self.eat(b'+') {
            return self.unary();
        }
        let base = self.atom()?;
        if self.eat(b'^') {
            return Ok(Node::Bin(Op::Pow, Box::new(base), Box::new(self.unary()?)));
        }
        Ok(base)
    }

    fn atom(&mut self) -> Result<Node, Error> {
        match self.peek() {
            None => Err(self.error("unexpected end of formula")),
            Some(b'(') => {
                self.pos += 1;
                let inner = self.expr()?;
                if !self.eat(b')') {
                    return Err(self.error("expected ')'"));
                }
                Ok(inner)
            }
            Some(c) if c.is_ascii_digit() || c == b'.' => self.number(),
            Some(c) if c.is_ascii_alphabetic() => self.ident(),
            Some(c) => Err(self.error(format!("unexpected character '{}'", c as char))),
        }
    }

    fn number(&mut self) -> Result<Node, Error> {
        let start = self.pos;
        let digits = |p: &mut Self| {
            while p.pos < p.src.len() && p.src[p.pos].is_ascii_digit() {
                p.pos += 1;
            }
        };
        digits(self);
        if self.src.get(self.pos) == Some(&b'.') {
            self.pos += 1;
            digits(self);
        }
        if matches!(self.src.get(self.pos), Some(b'e' | b'E')) {
            let mark = self.pos;
            self.pos += 1;
            if matches!(self.src.get(self.pos), Some(b'+' | b'-')) {
                self.pos += 1;
            }
            let exp_start = self.pos;
            digits(self);
            if self.pos == exp_start {
                self.pos = mark;
            }
        }
        let text = std::str::from_utf8(&self.src[start..self.pos]).expect("ascii");
        text.parse::<f64>().map(Node::Const).map_err(|_| Error::Formula {
            pos: start,
            msg: format!("bad number '{text}'"),
        })
    }

    fn ident(&mut self) -> Result<Node, Error> {
        let start = self.pos;
        while self.pos < self.src.len() && self.src[self.pos].is_ascii_alphanumeric() {
            self.pos += 1;
        }
        let name = std::str::from_utf8(&self.src[start..self.pos]).expect("ascii");
        let func = match name {
            "pi" => return Ok(Node::Const(std::f64::consts::PI)),
            "sin" => Func::Sin,
            "cos" => Func::Cos,
            "exp" => Func::Exp,
            _ => {
                if let Some(k) = name.strip_prefix('x').and_then(|d| d.parse::<usize>().ok()) {
                    if (1..=self.dim).contains(&k) {
                        return Ok(Node::Coord(k - 1));
                    }
                    return Err(Error::Formula {
                        pos: start,
                        msg: format!("coordinate {name} out of range x1..x{}", self.dim),
                    });
                }
                return Err(Error::Formula {
                    pos: start,
                    msg: format!("unknown identifier '{name}'"),
                });
            }
        };
        if !self.eat(b'(') {
            return Err(self.error(format!("expected '(' after {name}")));
        }
        let arg = self.expr()?;
        if !self.eat(b')') {
            return Err(self.error("expected ')'"));
        }
        Ok(Node::Call(func, Box::new(arg)))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    fn at(src: &str, x: &[f64]) -> f64 {
        Formula::parse(src, x.len()).unwrap().eval(x)
    }

    #[test]
    fn precedence_and_associativity() {
        assert_eq!(at("1 + 2 * 3", &[]), 7.0);
        assert_eq!(at("8 - 3 - 2", &[]), 3.0);
        assert_eq!(at("8 / 4 / 2", &[]), 1.0);
        assert_eq!(at("-2^2", &[]), -4.0);
        assert_eq!(at("2^3^2", &[]), 512.0);
        assert_eq!(at("(1 + 2) * 3", &[]), 9.0);
        assert_eq!(at("1.5e-1 + 2E1", &[]), 20.15);
    }

    #[test]
    fn coordinates_and_functions() {
        let x = [0.25, 0.5];
        let v = at("-1 + 0.5*sin(2*pi*x1)*cos(2*pi*x2)", &x);
        assert!((v - (-1.0 + 0.5 * (0.5 * PI).sin() * PI.cos())).abs() < 1e-15);
        assert_eq!(at("exp(0) + x2", &x), 1.5);
    }

    #[test]
    fn errors_carry_positions() {
        let err = Formula::parse("1 + x3", 2).unwrap_err();
        assert!(matches!(err, Error::Formula { pos: 4, .. }), "{err}");
        assert!(Formula::parse("sin 1", 2).is_err());
        assert!(Formula::parse("1 +", 2).is_err());
        assert!(Formula::parse("(1", 2).is_err());
        assert!(Formula::parse("1 1", 2).is_err());
        assert!(Formula::parse("tan(1)", 2).is_err());
        assert!(Formula::parse("x0", 2).is_err());
    }
}
