//! In-memory form of a PTX-lite kernel.

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Ty {
    U32,
    F32,
    Pred,
}

impl Ty {
    pub fn suffix(self) -> &'static str {
        match self {
            Ty::U32 => "u32",
            Ty::F32 => "f32",
            Ty::Pred => "pred",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum SpecialReg {
    CtaidX,
    CtaidY,
    TidX,
    TidY,
    NtidX,
    NtidY,
}

impl SpecialReg {
    pub fn text(self) -> &'static str {
        match self {
            SpecialReg::CtaidX => "%ctaid.x",
            SpecialReg::CtaidY => "%ctaid.y",
            SpecialReg::TidX => "%tid.x",
            SpecialReg::TidY => "%tid.y",
            SpecialReg::NtidX => "%ntid.x",
            SpecialReg::NtidY => "%ntid.y",
        }
    }
}

/// Source operand. Register names are stored without the leading `%`.
/// Immediates are kept as bit patterns; `ImmF` compares by bits so the IR
/// derives a faithful `PartialEq`.
#[derive(Debug, Clone, PartialEq)]
pub enum Operand {
    Reg(String),
    Special(SpecialReg),
    ImmU(u32),
    ImmF(f32),
}

impl Operand {
    pub fn as_reg(&self) -> Option<&str> {
        match self {
            Operand::Reg(r) => Some(r),
            _ => None,
        }
    }
}

/// Global-memory address: base register plus constant byte offset.
#[derive(Debug, Clone, PartialEq)]
pub struct Address {
    pub base: String,
    pub offset: u32,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum CmpOp {
    Lt,
    Le,
    Gt,
    Ge,
    Eq,
    Ne,
}

impl CmpOp {
    pub fn text(self) -> &'static str {
        match self {
            CmpOp::Lt => "lt",
            CmpOp::Le => "le",
            CmpOp::Gt => "gt",
            CmpOp::Ge => "ge",
            CmpOp::Eq => "eq",
            CmpOp::Ne => "ne",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Op {
    Mov { ty: Ty, dst: String, src: Operand },
    Add { ty: Ty, dst: String, a: Operand, b: Operand },
    Sub { ty: Ty, dst: String, a: Operand, b: Operand },
    Mul { ty: Ty, dst: String, a: Operand, b: Operand },
    Mad { ty: Ty, dst: String, a: Operand, b: Operand, c: Operand },
    LdParam { ty: Ty, dst: String, param: String },
    LdGlobal { ty: Ty, dst: String, addr: Address },
    StGlobal { ty: Ty, addr: Address, src: Operand },
    Setp { cmp: CmpOp, ty: Ty, dst: String, a: Operand, b: Operand },
    /// Branch, optionally guarded by `@%p` / `@!%p`.
    Bra { pred: Option<(bool, String)>, target: String },
    Exit,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Instr {
    pub label: Option<String>,
    pub op: Op,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ParamDecl {
    pub name: String,
    pub ty: Ty,
}

/// Register declaration as written: either a `%r<N>` range or a single
/// named register. Kept verbatim so emit round-trips.
#[derive(Debug, Clone, PartialEq)]
pub enum RegDecl {
    Range { ty: Ty, prefix: String, count: u32 },
    Single { ty: Ty, name: String },
}

impl RegDecl {
    pub fn names(&self) -> Vec<(String, Ty)> {
        match self {
            RegDecl::Range { ty, prefix, count } => (0..*count)
                .map(|i| (format!("{prefix}{i}"), *ty))
                .collect(),
            RegDecl::Single { ty, name } => vec![(name.clone(), *ty)],
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct KernelIR {
    pub name: String,
    pub params: Vec<ParamDecl>,
    pub regs: Vec<RegDecl>,
    pub body: Vec<Instr>,
    pub grid_dims: (u32, u32),
    pub block_dims: (u32, u32),
}

impl KernelIR {
    pub fn grid_blocks(&self) -> u64 {
        self.grid_dims.0 as u64 * self.grid_dims.1 as u64
    }

    pub fn declared_regs(&self) -> Vec<(String, Ty)> {
        self.regs.iter().flat_map(|d| d.names()).collect()
    }

    /// Iterate source operands of one instruction.
    pub fn sources(op: &Op) -> Vec<&Operand> {
        match op {
            Op::Mov { src, .. } => vec![src],
            Op::Add { a, b, .. } | Op::Sub { a, b, .. } | Op::Mul { a, b, .. } => vec![a, b],
            Op::Mad { a, b, c, .. } => vec![a, b, c],
            Op::Setp { a, b, .. } => vec![a, b],
            Op::StGlobal { src, .. } => vec![src],
            _ => vec![],
        }
    }

    /// Destination register of one instruction, if any.
    pub fn dest(op: &Op) -> Option<&str> {
        match op {
            Op::Mov { dst, .. }
            | Op::Add { dst, .. }
            | Op::Sub { dst, .. }
            | Op::Mul { dst, .. }
            | Op::Mad { dst, .. }
            | Op::LdParam { dst, .. }
            | Op::LdGlobal { dst, .. }
            | Op::Setp { dst, .. } => Some(dst),
            _ => None,
        }
    }

    /// Registers read by one instruction (sources, address bases, branch
    /// guards).
    pub fn reads(op: &Op) -> Vec<&str> {
        let mut out: Vec<&str> = Self::sources(op)
            .into_iter()
            .filter_map(|o| o.as_reg())
            .collect();
        match op {
            Op::LdGlobal { addr, .. } | Op::StGlobal { addr, .. } => out.push(&addr.base),
            Op::Bra {
                pred: Some((_, p)), ..
            } => out.push(p),
            _ => {}
        }
        out
    }
}
