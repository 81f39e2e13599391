//! Flat postfix form of an expression for fast repeated evaluation.

use alloc::vec::Vec;

use super::eval::call;
use super::{BinOp, Builtin, CmpOp, Expr};

#[derive(Debug, Clone, Copy, PartialEq)]
enum Op {
    Num(f64),
    Var(usize),
    Neg,
    Bin(BinOp),
    Cmp(CmpOp),
    Call(Builtin, usize),
    JumpIfZero(usize),
    Jump(usize),
}

/// An `Expr<usize>` compiled to stack code.
///
/// [`Program::run`] computes the same value as [`super::eval`], operation for
/// operation, but reports failure only as `None`; callers re-run the tree
/// evaluator to obtain the error.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Program {
    ops: Vec<Op>,
    depth: usize,
}

const INLINE_STACK: usize = 16;

fn any_nan(xs: &[f64]) -> bool {
    xs.iter().fold(false, |acc, x| acc | x.is_nan())
}

impl Program {
    pub fn compile(e: &Expr<usize>) -> Program {
        let mut p = Program::default();
        let mut depth = 0;
        p.emit(e, &mut depth);
        p
    }

    fn push(&mut self, op: Op, depth: &mut usize, delta: isize) {
        self.ops.push(op);
        *depth = depth.wrapping_add_signed(delta);
        self.depth = self.depth.max(*depth);
    }

    fn emit(&mut self, e: &Expr<usize>, depth: &mut usize) {
        match e {
            Expr::Num(x) => self.push(Op::Num(*x), depth, 1),
            Expr::Var(c) => self.push(Op::Var(*c), depth, 1),
            Expr::Neg(a) => {
                self.emit(a, depth);
                self.push(Op::Neg, depth, 0);
            }
            Expr::Binary(op, a, b) => {
                self.emit(a, depth);
                self.emit(b, depth);
                self.push(Op::Bin(*op), depth, -1);
            }
            Expr::Compare(op, a, b) => {
                self.emit(a, depth);
                self.emit(b, depth);
                self.push(Op::Cmp(*op), depth, -1);
            }
            Expr::If(c, a, b) => {
                self.emit(c, depth);
                let branch = self.ops.len();
                self.push(Op::JumpIfZero(0), depth, -1);
                self.emit(a, depth);
                let jump = self.ops.len();
                self.push(Op::Jump(0), depth, 0);
                // Only one branch runs, so its value occupies the same slot.
                *depth -= 1;
                let else_at = self.ops.len();
                self.emit(b, depth);
                let end = self.ops.len();
                self.ops[branch] = Op::JumpIfZero(else_at);
                self.ops[jump] = Op::Jump(end);
            }
            Expr::Call(f, args) => {
                for a in args {
                    self.emit(a, depth);
                }
                let n = args.len();
                self.push(Op::Call(*f, n), depth, 1 - n as isize);
            }
        }
    }

    /// Evaluates with variable `c` bound to `load(c)`.
    #[inline]
    pub fn run(&self, load: impl Fn(usize) -> f64) -> Option<f64> {
        if self.depth <= INLINE_STACK {
            let mut stack = [0.0; INLINE_STACK];
            self.run_on(&mut stack, load)
        } else {
            let mut stack = alloc::vec![0.0; self.depth];
            self.run_on(&mut stack, load)
        }
    }

    #[inline]
    fn run_on(&self, stack: &mut [f64], load: impl Fn(usize) -> f64) -> Option<f64> {
        let mut sp = 0;
        let mut pc = 0;
        while let Some(&op) = self.ops.get(pc) {
            pc += 1;
            let r = match op {
                Op::Num(x) => {
                    sp += 1;
                    x
                }
                Op::Var(c) => {
                    sp += 1;
                    load(c)
                }
                Op::Neg => -stack[sp - 1],
                Op::Bin(op) => {
                    sp -= 1;
                    let (x, y) = (stack[sp - 1], stack[sp]);
                    match op {
                        BinOp::Add => x + y,
                        BinOp::Sub => x - y,
                        BinOp::Mul => x * y,
                        BinOp::Div if y == 0.0 => return None,
                        BinOp::Div => x / y,
                        BinOp::Pow => libm::pow(x, y),
                    }
                }
                Op::Cmp(op) => {
                    sp -= 1;
                    let (x, y) = (stack[sp - 1], stack[sp]);
                    let t = match op {
                        CmpOp::Lt => x < y,
                        CmpOp::Le => x <= y,
                        CmpOp::Eq => x == y,
                        CmpOp::Ne => x != y,
                        CmpOp::Ge => x >= y,
                        CmpOp::Gt => x > y,
                    };
                    f64::from(u8::from(t))
                }
                Op::Call(f, n) => {
                    sp = sp + 1 - n;
                    call(f, &stack[sp - 1..sp - 1 + n]).ok()?
                }
                Op::JumpIfZero(to) => {
                    sp -= 1;
                    if stack[sp] == 0.0 {
                        pc = to;
                    }
                    continue;
                }
                Op::Jump(to) => {
                    pc = to;
                    continue;
                }
            };
            if r.is_nan() {
                return None;
            }
            stack[sp - 1] = r;
        }
        Some(stack[0])
    }

    /// Whether [`Program::run_block`] applies (no `if`).
    pub fn is_straight(&self) -> bool {
        !self.ops.iter().any(|op| matches!(op, Op::Jump(_) | Op::JumpIfZero(_)))
    }

    /// Evaluates a block of rows at once: `load(c)` is the block's slice of
    /// variable `c` and results go to `out`. Returns `false`, leaving `out`
    /// unspecified, if any row would fail or the program has jumps; the
    /// caller then falls back to [`Program::run`] row by row.
    pub fn run_block<'a>(&self, load: impl Fn(usize) -> &'a [f64], out: &mut [f64], scratch: &mut Vec<f64>) -> bool {
        let b = out.len();
        if b == 0 {
            return true;
        }
        scratch.clear();
        scratch.resize(self.depth.max(1) * b, 0.0);
        let mut sp = 0;
        for &op in &self.ops {
            match op {
                Op::Num(x) => {
                    if x.is_nan() {
                        return false;
                    }
                    scratch[sp * b..(sp + 1) * b].fill(x);
                    sp += 1;
                }
                Op::Var(c) => {
                    let src = load(c);
                    scratch[sp * b..(sp + 1) * b].copy_from_slice(&src[..b]);
                    sp += 1;
                }
                Op::Neg => {
                    for x in &mut scratch[(sp - 1) * b..sp * b] {
                        *x = -*x;
                    }
                }
                Op::Bin(op) => {
                    if op == BinOp::Pow && any_nan(&scratch[(sp - 2) * b..sp * b]) {
                        return false;
                    }
                    sp -= 1;
                    let (lo, hi) = scratch.split_at_mut(sp * b);
                    let (xs, ys) = (&mut lo[(sp - 1) * b..], &hi[..b]);
                    match op {
                        BinOp::Add => xs.iter_mut().zip(ys).for_each(|(x, y)| *x += y),
                        BinOp::Sub => xs.iter_mut().zip(ys).for_each(|(x, y)| *x -= y),
                        BinOp::Mul => xs.iter_mut().zip(ys).for_each(|(x, y)| *x *= y),
                        BinOp::Div => {
                            if ys.contains(&0.0) {
                                return false;
                            }
                            xs.iter_mut().zip(ys).for_each(|(x, y)| *x /= y);
                        }
                        BinOp::Pow => {
                            xs.iter_mut().zip(ys).for_each(|(x, y)| *x = libm::pow(*x, *y));
                            if any_nan(xs) {
                                return false;
                            }
                        }
                    }
                }
                Op::Cmp(op) => {
                    if any_nan(&scratch[(sp - 2) * b..sp * b]) {
                        return false;
                    }
                    sp -= 1;
                    let (lo, hi) = scratch.split_at_mut(sp * b);
                    for (x, &y) in lo[(sp - 1) * b..].iter_mut().zip(&hi[..b]) {
                        let t = match op {
                            CmpOp::Lt => *x < y,
                            CmpOp::Le => *x <= y,
                            CmpOp::Eq => *x == y,
                            CmpOp::Ne => *x != y,
                            CmpOp::Ge => *x >= y,
                            CmpOp::Gt => *x > y,
                        };
                        *x = f64::from(u8::from(t));
                    }
                }
                Op::Call(f, n) => {
                    let base = sp - n;
                    if any_nan(&scratch[base * b..sp * b]) {
                        return false;
                    }
                    let mut args = [0.0; INLINE_STACK];
                    if n > args.len() {
                        return false;
                    }
                    for i in 0..b {
                        for (k, a) in args[..n].iter_mut().enumerate() {
                            *a = scratch[(base + k) * b + i];
                        }
                        match call(f, &args[..n]) {
                            Ok(r) => scratch[base * b + i] = r,
                            Err(_) => return false,
                        }
                    }
                    sp = base + 1;
                    if any_nan(&scratch[base * b..sp * b]) {
                        return false;
                    }
                }
                Op::Jump(_) | Op::JumpIfZero(_) => return false,
            }
        }
        // Arithmetic carries NaN through, so checking the result covers it.
        if any_nan(&scratch[..b]) {
            return false;
        }
        out.copy_from_slice(&scratch[..b]);
        true
    }
}
