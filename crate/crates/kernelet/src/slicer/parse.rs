//! Recursive-descent parser for the PTX-lite grammar (see
//! docs/ptx-lite.md for the EBNF).

use super::ir::*;
use crate::error::{Error, Result};

struct Lexer<'a> {
    src: &'a [u8],
    pos: usize,
    line: usize,
    col: usize,
}

#[derive(Debug, Clone, PartialEq)]
enum Tok {
    Ident(String),
    /// `%name` or `%name.dim` (special register candidates keep the dot).
    Reg(String),
    Directive(String),
    Int(u64),
    Float(f64),
    Punct(char),
    Eof,
}

#[derive(Debug, Clone)]
struct Spanned {
    tok: Tok,
    line: usize,
    col: usize,
}

impl<'a> Lexer<'a> {
    fn new(src: &'a str) -> Self {
        Lexer {
            src: src.as_bytes(),
            pos: 0,
            line: 1,
            col: 1,
        }
    }

    fn bump(&mut self) -> Option<u8> {
        let c = *self.src.get(self.pos)?;
        self.pos += 1;
        if c == b'\n' {
            self.line += 1;
            self.col = 1;
        } else {
            self.col += 1;
        }
        Some(c)
    }

    fn peek(&self) -> Option<u8> {
        self.src.get(self.pos).copied()
    }

    fn err(&self, msg: impl Into<String>) -> Error {
        Error::Parse {
            line: self.line,
            col: self.col,
            msg: msg.into(),
        }
    }

    fn skip_ws(&mut self) {
        loop {
            match self.peek() {
                Some(c) if c.is_ascii_whitespace() => {
                    self.bump();
                }
                Some(b'/') if self.src.get(self.pos + 1) == Some(&b'/') => {
                    while let Some(c) = self.peek() {
                        if c == b'\n' {
                            break;
                        }
                        self.bump();
                    }
                }
                _ => break,
            }
        }
    }

    fn ident_tail(&mut self, first: u8) -> String {
        let mut s = String::new();
        s.push(first as char);
        while let Some(c) = self.peek() {
            if c.is_ascii_alphanumeric() || c == b'_' {
                s.push(c as char);
                self.bump();
            } else {
                break;
            }
        }
        s
    }

    fn next(&mut self) -> Result<Spanned> {
        self.skip_ws();
        let (line, col) = (self.line, self.col);
        let tok = match self.bump() {
            None => Tok::Eof,
            Some(b'%') => {
                let first = self
                    .bump()
                    .filter(|c| c.is_ascii_alphabetic() || *c == b'_')
                    .ok_or_else(|| self.err("expected register name after %"))?;
                let mut name = self.ident_tail(first);
                if self.peek() == Some(b'.') {
                    self.bump();
                    let d = self
                        .bump()
                        .ok_or_else(|| self.err("expected dimension after ."))?;
                    name.push('.');
                    name.push(d as char);
                }
                Tok::Reg(name)
            }
            Some(b'.') => {
                let first = self
                    .bump()
                    .filter(|c| c.is_ascii_alphabetic())
                    .ok_or_else(|| self.err("expected directive name after ."))?;
                Tok::Directive(self.ident_tail(first))
            }
            Some(c) if c.is_ascii_digit() => {
                let mut s = self.ident_tail(c);
                let mut float = false;
                if self.peek() == Some(b'.')
                    && self
                        .src
                        .get(self.pos + 1)
                        .is_some_and(|d| d.is_ascii_digit())
                {
                    float = true;
                    self.bump();
                    s.push('.');
                    while let Some(d) = self.peek() {
                        if d.is_ascii_digit() {
                            s.push(d as char);
                            self.bump();
                        } else {
                            break;
                        }
                    }
                }
                if float {
                    Tok::Float(s.parse().map_err(|_| self.err("bad float literal"))?)
                } else {
                    Tok::Int(s.parse().map_err(|_| self.err("bad integer literal"))?)
                }
            }
            Some(c) if c.is_ascii_alphabetic() || c == b'_' => {
                let mut s = self.ident_tail(c);
                // opcode suffixes: keep dotted parts attached (add.u32)
                while self.peek() == Some(b'.')
                    && self
                        .src
                        .get(self.pos + 1)
                        .is_some_and(|d| d.is_ascii_alphabetic())
                {
                    self.bump();
                    s.push('.');
                    let f = self.bump().unwrap();
                    s.push_str(&self.ident_tail(f));
                }
                Tok::Ident(s)
            }
            Some(c) if b"(){}[],;:@!<>+".contains(&c) => Tok::Punct(c as char),
            Some(c) => return Err(self.err(format!("unexpected character {:?}", c as char))),
        };
        Ok(Spanned { tok, line, col })
    }
}

struct Parser {
    toks: Vec<Spanned>,
    pos: usize,
}

impl Parser {
    fn peek(&self) -> &Spanned {
        &self.toks[self.pos.min(self.toks.len() - 1)]
    }

    fn next(&mut self) -> Spanned {
        let s = self.peek().clone();
        if self.pos < self.toks.len() - 1 {
            self.pos += 1;
        }
        s
    }

    fn err_at(&self, s: &Spanned, msg: impl Into<String>) -> Error {
        Error::Parse {
            line: s.line,
            col: s.col,
            msg: msg.into(),
        }
    }

    fn expect_punct(&mut self, c: char) -> Result<()> {
        let s = self.next();
        if s.tok == Tok::Punct(c) {
            Ok(())
        } else {
            Err(self.err_at(&s, format!("expected {c:?}, found {:?}", s.tok)))
        }
    }

    fn expect_ident(&mut self) -> Result<String> {
        let s = self.next();
        match s.tok {
            Tok::Ident(i) => Ok(i),
            _ => Err(self.err_at(&s, format!("expected identifier, found {:?}", s.tok))),
        }
    }

    fn expect_int(&mut self) -> Result<u64> {
        let s = self.next();
        match s.tok {
            Tok::Int(v) => Ok(v),
            _ => Err(self.err_at(&s, format!("expected integer, found {:?}", s.tok))),
        }
    }

    fn expect_directive(&mut self, name: &str) -> Result<()> {
        let s = self.next();
        match &s.tok {
            Tok::Directive(d) if d == name => Ok(()),
            _ => Err(self.err_at(&s, format!("expected .{name}, found {:?}", s.tok))),
        }
    }

    fn parse_ty(&mut self) -> Result<Ty> {
        let s = self.next();
        match &s.tok {
            Tok::Directive(d) => match d.as_str() {
                "u32" => Ok(Ty::U32),
                "f32" => Ok(Ty::F32),
                "pred" => Ok(Ty::Pred),
                _ => Err(self.err_at(&s, format!("unknown type .{d}"))),
            },
            _ => Err(self.err_at(&s, format!("expected a type, found {:?}", s.tok))),
        }
    }

    fn special_reg(&self, s: &Spanned, name: &str) -> Result<Option<SpecialReg>> {
        Ok(Some(match name {
            "ctaid.x" => SpecialReg::CtaidX,
            "ctaid.y" => SpecialReg::CtaidY,
            "tid.x" => SpecialReg::TidX,
            "tid.y" => SpecialReg::TidY,
            "ntid.x" => SpecialReg::NtidX,
            "ntid.y" => SpecialReg::NtidY,
            "ctaid.z" | "tid.z" | "ntid.z" => {
                return Err(self.err_at(s, format!("%{name}: only x/y dimensions are supported")))
            }
            _ if name.contains('.') => {
                return Err(self.err_at(s, format!("unknown special register %{name}")))
            }
            _ => return Ok(None),
        }))
    }

    /// Destination: must be a plain register.
    fn parse_dst(&mut self) -> Result<String> {
        let s = self.next();
        match &s.tok {
            Tok::Reg(name) => {
                if self.special_reg(&s, name)?.is_some() || name.contains('.') {
                    Err(self.err_at(&s, "special registers are read-only"))
                } else {
                    Ok(name.clone())
                }
            }
            _ => Err(self.err_at(&s, format!("expected destination register, found {:?}", s.tok))),
        }
    }

    fn parse_src(&mut self, ty: Ty) -> Result<Operand> {
        let s = self.next();
        match &s.tok {
            Tok::Reg(name) => match self.special_reg(&s, name)? {
                Some(sp) => Ok(Operand::Special(sp)),
                None => Ok(Operand::Reg(name.clone())),
            },
            Tok::Int(v) => {
                if ty == Ty::F32 {
                    Ok(Operand::ImmF(*v as f32))
                } else {
                    let v32 = u32::try_from(*v)
                        .map_err(|_| self.err_at(&s, "integer literal exceeds u32"))?;
                    Ok(Operand::ImmU(v32))
                }
            }
            Tok::Float(v) => {
                if ty == Ty::F32 {
                    Ok(Operand::ImmF(*v as f32))
                } else {
                    Err(self.err_at(&s, "float literal in integer instruction"))
                }
            }
            _ => Err(self.err_at(&s, format!("expected operand, found {:?}", s.tok))),
        }
    }

    /// `[%base]` or `[%base+imm]`.
    fn parse_address(&mut self) -> Result<Address> {
        self.expect_punct('[')?;
        let base = self.parse_dst()?;
        let s = self.next();
        match s.tok {
            Tok::Punct(']') => Ok(Address { base, offset: 0 }),
            Tok::Punct('+') => {
                let off = self.expect_int()?;
                let offset = u32::try_from(off)
                    .map_err(|_| self.err_at(&s, "address offset exceeds u32"))?;
                self.expect_punct(']')?;
                Ok(Address { base, offset })
            }
            _ => Err(self.err_at(&s, format!("expected ] or +, found {:?}", s.tok))),
        }
    }

    fn parse_instr_op(&mut self, mnemonic: &str, at: &Spanned) -> Result<Op> {
        let parts: Vec<&str> = mnemonic.split('.').collect();
        let ty_of = |t: &str| -> Result<Ty> {
            match t {
                "u32" => Ok(Ty::U32),
                "f32" => Ok(Ty::F32),
                "pred" => Ok(Ty::Pred),
                _ => Err(self.err_at(at, format!("unknown type suffix .{t}"))),
            }
        };
        let op = match parts.as_slice() {
            ["mov", t] => {
                let ty = ty_of(t)?;
                let dst = self.parse_dst()?;
                self.expect_punct(',')?;
                let src = self.parse_src(ty)?;
                Op::Mov { ty, dst, src }
            }
            [name @ ("add" | "sub" | "mul"), t] => {
                let ty = ty_of(t)?;
                let dst = self.parse_dst()?;
                self.expect_punct(',')?;
                let a = self.parse_src(ty)?;
                self.expect_punct(',')?;
                let b = self.parse_src(ty)?;
                match *name {
                    "add" => Op::Add { ty, dst, a, b },
                    "sub" => Op::Sub { ty, dst, a, b },
                    _ => Op::Mul { ty, dst, a, b },
                }
            }
            ["mad", t] => {
                let ty = ty_of(t)?;
                let dst = self.parse_dst()?;
                self.expect_punct(',')?;
                let a = self.parse_src(ty)?;
                self.expect_punct(',')?;
                let b = self.parse_src(ty)?;
                self.expect_punct(',')?;
                let c = self.parse_src(ty)?;
                Op::Mad { ty, dst, a, b, c }
            }
            ["ld", "param", t] => {
                let ty = ty_of(t)?;
                let dst = self.parse_dst()?;
                self.expect_punct(',')?;
                self.expect_punct('[')?;
                let param = self.expect_ident()?;
                self.expect_punct(']')?;
                Op::LdParam { ty, dst, param }
            }
            ["ld", "global", t] => {
                let ty = ty_of(t)?;
                let dst = self.parse_dst()?;
                self.expect_punct(',')?;
                let addr = self.parse_address()?;
                Op::LdGlobal { ty, dst, addr }
            }
            ["st", "global", t] => {
                let ty = ty_of(t)?;
                let addr = self.parse_address()?;
                self.expect_punct(',')?;
                let src = self.parse_src(ty)?;
                Op::StGlobal { ty, addr, src }
            }
            ["setp", c, t] => {
                let cmp = match *c {
                    "lt" => CmpOp::Lt,
                    "le" => CmpOp::Le,
                    "gt" => CmpOp::Gt,
                    "ge" => CmpOp::Ge,
                    "eq" => CmpOp::Eq,
                    "ne" => CmpOp::Ne,
                    _ => return Err(self.err_at(at, format!("unknown comparison .{c}"))),
                };
                let ty = ty_of(t)?;
                let dst = self.parse_dst()?;
                self.expect_punct(',')?;
                let a = self.parse_src(ty)?;
                self.expect_punct(',')?;
                let b = self.parse_src(ty)?;
                Op::Setp { cmp, ty, dst, a, b }
            }
            ["bra"] => {
                let target = self.expect_ident()?;
                Op::Bra { pred: None, target }
            }
            ["exit"] => Op::Exit,
            _ => return Err(self.err_at(at, format!("unknown instruction {mnemonic:?}"))),
        };
        Ok(op)
    }

    fn parse_body(&mut self) -> Result<(Vec<RegDecl>, Vec<Instr>)> {
        self.expect_punct('{')?;
        let mut regs = Vec::new();
        let mut body = Vec::new();
        let mut pending_label: Option<String> = None;
        loop {
            let s = self.next();
            match &s.tok {
                Tok::Punct('}') => break,
                Tok::Directive(d) if d == "reg" => {
                    let ty = self.parse_ty()?;
                    let r = self.next();
                    let name = match &r.tok {
                        Tok::Reg(n) if !n.contains('.') => n.clone(),
                        _ => return Err(self.err_at(&r, "expected register name")),
                    };
                    if self.peek().tok == Tok::Punct('<') {
                        self.next();
                        let count = self.expect_int()? as u32;
                        self.expect_punct('>')?;
                        regs.push(RegDecl::Range {
                            ty,
                            prefix: name,
                            count,
                        });
                    } else {
                        regs.push(RegDecl::Single { ty, name });
                    }
                    self.expect_punct(';')?;
                }
                Tok::Ident(name) if self.peek().tok == Tok::Punct(':') => {
                    self.next();
                    if pending_label.is_some() {
                        return Err(self.err_at(&s, "two labels on one instruction"));
                    }
                    pending_label = Some(name.clone());
                }
                Tok::Punct('@') => {
                    let mut negate = false;
                    if self.peek().tok == Tok::Punct('!') {
                        self.next();
                        negate = true;
                    }
                    let r = self.next();
                    let guard = match &r.tok {
                        Tok::Reg(n) if !n.contains('.') => n.clone(),
                        _ => return Err(self.err_at(&r, "expected predicate register")),
                    };
                    let m = self.next();
                    let op = match &m.tok {
                        Tok::Ident(i) if i == "bra" => {
                            let target = self.expect_ident()?;
                            Op::Bra {
                                pred: Some((negate, guard)),
                                target,
                            }
                        }
                        _ => return Err(self.err_at(&m, "only bra may be predicated")),
                    };
                    self.expect_punct(';')?;
                    body.push(Instr {
                        label: pending_label.take(),
                        op,
                    });
                }
                Tok::Ident(mnemonic) => {
                    let op = self.parse_instr_op(mnemonic, &s)?;
                    self.expect_punct(';')?;
                    body.push(Instr {
                        label: pending_label.take(),
                        op,
                    });
                }
                Tok::Eof => return Err(self.err_at(&s, "unexpected end of input in body")),
                other => {
                    return Err(self.err_at(&s, format!("unexpected token {other:?} in body")))
                }
            }
        }
        if let Some(l) = pending_label {
            return Err(self.err_at(self.peek(), format!("trailing label {l:?}")));
        }
        Ok((regs, body))
    }
}

fn validate(ir: &KernelIR, p: &Parser) -> Result<()> {
    let at = p.peek().clone();
    let err = |msg: String| Error::Parse {
        line: at.line,
        col: at.col,
        msg,
    };
    if ir.body.is_empty() || !ir.body.iter().any(|i| i.op == Op::Exit) {
        return Err(err("kernel body has no exit".into()));
    }
    match &ir.body.last().unwrap().op {
        Op::Exit | Op::Bra { pred: None, .. } => {}
        _ => return Err(err("control may fall off the end of the body".into())),
    }
    let regs: std::collections::HashMap<String, Ty> =
        ir.declared_regs().into_iter().collect();
    let params: std::collections::HashMap<&str, Ty> = ir
        .params
        .iter()
        .map(|p| (p.name.as_str(), p.ty))
        .collect();
    let labels: std::collections::HashSet<&str> = ir
        .body
        .iter()
        .filter_map(|i| i.label.as_deref())
        .collect();
    let mut defined: std::collections::HashSet<&str> = Default::default();
    let has_branch_target = |t: &str| labels.contains(t);
    for instr in &ir.body {
        let op = &instr.op;
        for r in KernelIR::reads(op) {
            let ty = regs
                .get(r)
                .ok_or_else(|| err(format!("undefined register %{r}")))?;
            // A register must be written on some earlier line before its
            // first read; backward branches re-read later definitions.
            if !defined.contains(r) {
                return Err(err(format!("register %{r} read before any definition")));
            }
            let _ = ty;
        }
        // type checks on typed operands
        let check_src = |o: &Operand, ty: Ty| -> Result<()> {
            match o {
                Operand::Reg(r) => {
                    let rt = regs
                        .get(r)
                        .ok_or_else(|| err(format!("undefined register %{r}")))?;
                    if *rt != ty {
                        return Err(err(format!(
                            "type mismatch: %{r} is .{} used as .{}",
                            rt.suffix(),
                            ty.suffix()
                        )));
                    }
                }
                Operand::Special(_) => {
                    if ty != Ty::U32 {
                        return Err(err("special registers are .u32".into()));
                    }
                }
                _ => {}
            }
            Ok(())
        };
        match op {
            Op::Mov { ty, src, .. } => check_src(src, *ty)?,
            Op::Add { ty, a, b, .. }
            | Op::Sub { ty, a, b, .. }
            | Op::Mul { ty, a, b, .. }
            | Op::Setp { ty, a, b, .. } => {
                check_src(a, *ty)?;
                check_src(b, *ty)?;
            }
            Op::Mad { ty, a, b, c, .. } => {
                check_src(a, *ty)?;
                check_src(b, *ty)?;
                check_src(c, *ty)?;
            }
            Op::StGlobal { ty, src, .. } => check_src(src, *ty)?,
            Op::LdParam { param, .. } => {
                if !params.contains_key(param.as_str()) {
                    return Err(err(format!("unknown parameter {param:?}")));
                }
            }
            Op::Bra { target, .. } => {
                if !has_branch_target(target) {
                    return Err(err(format!("unknown branch target {target:?}")));
                }
            }
            _ => {}
        }
        if let Some(d) = KernelIR::dest(op) {
            let want = match op {
                Op::Setp { .. } => Ty::Pred,
                Op::Mov { ty, .. }
                | Op::Add { ty, .. }
                | Op::Sub { ty, .. }
                | Op::Mul { ty, .. }
                | Op::Mad { ty, .. }
                | Op::LdParam { ty, .. }
                | Op::LdGlobal { ty, .. } => *ty,
                _ => unreachable!(),
            };
            let rt = regs
                .get(d)
                .ok_or_else(|| err(format!("undefined register %{d}")))?;
            if *rt != want {
                return Err(err(format!(
                    "type mismatch: %{d} is .{} written as .{}",
                    rt.suffix(),
                    want.suffix()
                )));
            }
            let d_owned: &str = regs.get_key_value(d).unwrap().0;
            defined.insert(d_owned);
        }
        if let Op::Bra {
            pred: Some((_, g)), ..
        } = op
        {
            match regs.get(g) {
                Some(Ty::Pred) => {}
                Some(_) => return Err(err(format!("guard %{g} is not a predicate"))),
                None => return Err(err(format!("undefined register %{g}"))),
            }
        }
    }
    Ok(())
}

/// Parse PTX-lite text into a [`KernelIR`], with line/column error
/// positions.
pub fn parse_kernel_ir(text: &str) -> Result<KernelIR> {
    let mut lx = Lexer::new(text);
    let mut toks = Vec::new();
    loop {
        let t = lx.next()?;
        let eof = t.tok == Tok::Eof;
        toks.push(t);
        if eof {
            break;
        }
    }
    let mut p = Parser { toks, pos: 0 };

    p.expect_directive("entry")?;
    let name = p.expect_ident()?;
    p.expect_punct('(')?;
    let mut params = Vec::new();
    if p.peek().tok != Tok::Punct(')') {
        loop {
            p.expect_directive("param")?;
            let ty = p.parse_ty()?;
            let pname = p.expect_ident()?;
            params.push(ParamDecl { name: pname, ty });
            if p.peek().tok == Tok::Punct(',') {
                p.next();
            } else {
                break;
            }
        }
    }
    p.expect_punct(')')?;
    p.expect_directive("grid")?;
    let gx = p.expect_int()? as u32;
    p.expect_punct(',')?;
    let gy = p.expect_int()? as u32;
    p.expect_directive("block")?;
    let tx = p.expect_int()? as u32;
    p.expect_punct(',')?;
    let ty_ = p.expect_int()? as u32;
    let (regs, body) = p.parse_body()?;

    if gx == 0 || gy == 0 || tx == 0 || ty_ == 0 {
        return Err(p.err_at(p.peek(), "grid and block dimensions must be positive"));
    }
    let ir = KernelIR {
        name,
        params,
        regs,
        body,
        grid_dims: (gx, gy),
        block_dims: (tx, ty_),
    };
    validate(&ir, &p)?;
    Ok(ir)
}
