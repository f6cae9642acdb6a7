//! Index rectification: rewrite block-index reads to
//! hardware index + launch offset so a slice behaves as the original grid
//! region it covers.

use super::ir::*;

pub const OFFSET_X_PARAM: &str = "__off_x";
pub const OFFSET_Y_PARAM: &str = "__off_y";

/// True once a kernel already carries the offset parameters.
pub fn is_rectified(ir: &KernelIR) -> bool {
    ir.params.iter().any(|p| p.name == OFFSET_X_PARAM)
}

/// Instruction indices from which some instruction in `sites` is
/// reachable through the control-flow graph (including the sites
/// themselves).
fn backward_reachable(body: &[Instr], sites: &[usize]) -> Vec<bool> {
    let n = body.len();
    let label_at: std::collections::HashMap<&str, usize> = body
        .iter()
        .enumerate()
        .filter_map(|(i, ins)| ins.label.as_deref().map(|l| (l, i)))
        .collect();
    // predecessor edges
    let mut preds: Vec<Vec<usize>> = vec![vec![]; n];
    for (i, ins) in body.iter().enumerate() {
        match &ins.op {
            Op::Exit => {}
            Op::Bra { pred, target } => {
                let t = label_at[target.as_str()];
                preds[t].push(i);
                if pred.is_some() && i + 1 < n {
                    preds[i + 1].push(i);
                }
            }
            _ => {
                if i + 1 < n {
                    preds[i + 1].push(i);
                }
            }
        }
    }
    let mut mark = vec![false; n];
    let mut stack: Vec<usize> = sites.to_vec();
    while let Some(i) = stack.pop() {
        if mark[i] {
            continue;
        }
        mark[i] = true;
        for &p in &preds[i] {
            stack.push(p);
        }
    }
    mark
}

/// Pick a declared .u32 register that is safe to hold the rectified index:
/// it must not be read or written by any instruction lying on a path from
/// entry to a block-index read site. `taken` holds registers already
/// claimed for the other dimension.
fn reusable_register(
    ir: &KernelIR,
    on_path: &[bool],
    taken: &[String],
) -> Option<String> {
    let mut used_on_path: std::collections::HashSet<&str> = Default::default();
    for (i, ins) in ir.body.iter().enumerate() {
        if !on_path[i] {
            continue;
        }
        for r in KernelIR::reads(&ins.op) {
            used_on_path.insert(r);
        }
        if let Some(d) = KernelIR::dest(&ins.op) {
            used_on_path.insert(d);
        }
    }
    ir.declared_regs()
        .into_iter()
        .filter(|(name, ty)| {
            *ty == Ty::U32
                && !used_on_path.contains(name.as_str())
                && !taken.iter().any(|t| t == name)
        })
        .map(|(name, _)| name)
        .next()
}

fn replace_ctaid(op: &mut Op, dim: SpecialReg, reg: &str) {
    let fix = |o: &mut Operand| {
        if *o == Operand::Special(dim) {
            *o = Operand::Reg(reg.to_string());
        }
    };
    match op {
        Op::Mov { src, .. } => fix(src),
        Op::Add { a, b, .. } | Op::Sub { a, b, .. } | Op::Mul { a, b, .. } => {
            fix(a);
            fix(b);
        }
        Op::Mad { a, b, c, .. } => {
            fix(a);
            fix(b);
            fix(c);
        }
        Op::Setp { a, b, .. } => {
            fix(a);
            fix(b);
        }
        Op::StGlobal { src, .. } => fix(src),
        _ => {}
    }
}

/// Rewrite every read of %ctaid.x/.y into a register holding
/// %ctaid + offset, where the offsets arrive through two appended scalar
/// params. A single scan replaces the reads; a reachability analysis
/// reuses a dead register per dimension when one exists, so register
/// pressure usually stays unchanged (at most two registers are added
/// otherwise). Rectifying an already-rectified kernel is the identity.
pub fn rectify_indices(ir: &KernelIR) -> KernelIR {
    if is_rectified(ir) {
        return ir.clone();
    }
    let mut out = ir.clone();
    out.params.push(ParamDecl {
        name: OFFSET_X_PARAM.to_string(),
        ty: Ty::U32,
    });
    out.params.push(ParamDecl {
        name: OFFSET_Y_PARAM.to_string(),
        ty: Ty::U32,
    });

    let mut taken: Vec<String> = Vec::new();
    let mut prologue: Vec<Instr> = Vec::new();
    for (dim, param, fresh) in [
        (SpecialReg::CtaidX, OFFSET_X_PARAM, "__rx"),
        (SpecialReg::CtaidY, OFFSET_Y_PARAM, "__ry"),
    ] {
        let sites: Vec<usize> = out
            .body
            .iter()
            .enumerate()
            .filter(|(_, ins)| {
                KernelIR::sources(&ins.op)
                    .iter()
                    .any(|o| **o == Operand::Special(dim))
            })
            .map(|(i, _)| i)
            .collect();
        if sites.is_empty() {
            continue;
        }
        let on_path = backward_reachable(&out.body, &sites);
        let reg = match reusable_register(&out, &on_path, &taken) {
            Some(r) => r,
            None => {
                out.regs.push(RegDecl::Single {
                    ty: Ty::U32,
                    name: fresh.to_string(),
                });
                fresh.to_string()
            }
        };
        taken.push(reg.clone());
        prologue.push(Instr {
            label: None,
            op: Op::LdParam {
                ty: Ty::U32,
                dst: reg.clone(),
                param: param.to_string(),
            },
        });
        prologue.push(Instr {
            label: None,
            op: Op::Add {
                ty: Ty::U32,
                dst: reg.clone(),
                a: Operand::Reg(reg.clone()),
                b: Operand::Special(dim),
            },
        });
        for ins in out.body.iter_mut() {
            replace_ctaid(&mut ins.op, dim, &reg);
        }
    }
    // Prologue precedes the first instruction; labels stay on their
    // original instructions so branch targets skip it, as intended.
    prologue.extend(out.body);
    out.body = prologue;
    out
}
