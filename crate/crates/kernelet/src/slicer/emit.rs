//! Canonical text form of a kernel; `parse(emit(ir))` reproduces the IR
//! and emit is idempotent.

use super::ir::*;

fn fmt_operand(o: &Operand) -> String {
    match o {
        Operand::Reg(r) => format!("%{r}"),
        Operand::Special(s) => s.text().to_string(),
        Operand::ImmU(v) => v.to_string(),
        Operand::ImmF(v) => {
            // shortest round-trip decimal; keep a trailing .0 so it lexes
            // as a float again
            let s = format!("{v:?}");
            if s.contains('.') {
                s
            } else {
                format!("{s}.0")
            }
        }
    }
}

fn fmt_addr(a: &Address) -> String {
    if a.offset == 0 {
        format!("[%{}]", a.base)
    } else {
        format!("[%{}+{}]", a.base, a.offset)
    }
}

fn fmt_op(op: &Op) -> String {
    match op {
        Op::Mov { ty, dst, src } => {
            format!("mov.{} %{dst}, {};", ty.suffix(), fmt_operand(src))
        }
        Op::Add { ty, dst, a, b } => format!(
            "add.{} %{dst}, {}, {};",
            ty.suffix(),
            fmt_operand(a),
            fmt_operand(b)
        ),
        Op::Sub { ty, dst, a, b } => format!(
            "sub.{} %{dst}, {}, {};",
            ty.suffix(),
            fmt_operand(a),
            fmt_operand(b)
        ),
        Op::Mul { ty, dst, a, b } => format!(
            "mul.{} %{dst}, {}, {};",
            ty.suffix(),
            fmt_operand(a),
            fmt_operand(b)
        ),
        Op::Mad { ty, dst, a, b, c } => format!(
            "mad.{} %{dst}, {}, {}, {};",
            ty.suffix(),
            fmt_operand(a),
            fmt_operand(b),
            fmt_operand(c)
        ),
        Op::LdParam { ty, dst, param } => {
            format!("ld.param.{} %{dst}, [{param}];", ty.suffix())
        }
        Op::LdGlobal { ty, dst, addr } => {
            format!("ld.global.{} %{dst}, {};", ty.suffix(), fmt_addr(addr))
        }
        Op::StGlobal { ty, addr, src } => format!(
            "st.global.{} {}, {};",
            ty.suffix(),
            fmt_addr(addr),
            fmt_operand(src)
        ),
        Op::Setp { cmp, ty, dst, a, b } => format!(
            "setp.{}.{} %{dst}, {}, {};",
            cmp.text(),
            ty.suffix(),
            fmt_operand(a),
            fmt_operand(b)
        ),
        Op::Bra { pred, target } => match pred {
            None => format!("bra {target};"),
            Some((false, g)) => format!("@%{g} bra {target};"),
            Some((true, g)) => format!("@!%{g} bra {target};"),
        },
        Op::Exit => "exit;".to_string(),
    }
}

/// Render a kernel back to PTX-lite text.
pub fn emit_kernel_ir(ir: &KernelIR) -> String {
    let mut out = String::new();
    out.push_str(&format!(".entry {} (\n", ir.name));
    for (i, p) in ir.params.iter().enumerate() {
        let sep = if i + 1 < ir.params.len() { "," } else { "" };
        out.push_str(&format!("    .param .{} {}{}\n", p.ty.suffix(), p.name, sep));
    }
    out.push_str(")\n");
    out.push_str(&format!(".grid {}, {}\n", ir.grid_dims.0, ir.grid_dims.1));
    out.push_str(&format!(".block {}, {}\n", ir.block_dims.0, ir.block_dims.1));
    out.push_str("{\n");
    for r in &ir.regs {
        match r {
            RegDecl::Range { ty, prefix, count } => {
                out.push_str(&format!("    .reg .{} %{}<{}>;\n", ty.suffix(), prefix, count))
            }
            RegDecl::Single { ty, name } => {
                out.push_str(&format!("    .reg .{} %{};\n", ty.suffix(), name))
            }
        }
    }
    out.push('\n');
    for instr in &ir.body {
        if let Some(l) = &instr.label {
            out.push_str(&format!("{l}:\n"));
        }
        out.push_str("    ");
        out.push_str(&fmt_op(&instr.op));
        out.push('\n');
    }
    out.push_str("}\n");
    out
}
