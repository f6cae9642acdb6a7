//! Sequential PTX-lite interpreter used as a differential-testing oracle:
//! sliced and unsliced executions of a kernel must produce bit-identical
//! memory images.

use super::ir::*;
use super::plan::SlicingPlan;
use super::rectify::{OFFSET_X_PARAM, OFFSET_Y_PARAM};
use crate::error::{Error, Result};

/// Per-thread instruction budget; exceeding it traps (runaway loop).
const STEP_LIMIT: usize = 1_000_000;

/// Parameter values as 32-bit patterns, positionally matching
/// `ir.params`. Buffer params hold base byte addresses into the memory
/// image.
pub type Args = [u32];

struct ThreadCtx<'a> {
    regs: std::collections::HashMap<&'a str, u32>,
    preds: std::collections::HashMap<&'a str, bool>,
}

fn operand_value(
    o: &Operand,
    ctx: &ThreadCtx,
    special: &dyn Fn(SpecialReg) -> u32,
) -> Result<u32> {
    Ok(match o {
        Operand::Reg(r) => *ctx
            .regs
            .get(r.as_str())
            .ok_or_else(|| Error::Trap(format!("read of unwritten register %{r}")))?,
        Operand::Special(s) => special(*s),
        Operand::ImmU(v) => *v,
        Operand::ImmF(v) => v.to_bits(),
    })
}

fn load32(mem: &[u8], addr: u32) -> Result<u32> {
    let a = addr as usize;
    let end = a
        .checked_add(4)
        .filter(|&e| e <= mem.len())
        .ok_or_else(|| Error::Trap(format!("load of 4 bytes at {addr} out of bounds")))?;
    Ok(u32::from_le_bytes(mem[a..end].try_into().unwrap()))
}

fn store32(mem: &mut [u8], addr: u32, v: u32) -> Result<()> {
    let a = addr as usize;
    let end = a
        .checked_add(4)
        .filter(|&e| e <= mem.len())
        .ok_or_else(|| Error::Trap(format!("store of 4 bytes at {addr} out of bounds")))?;
    mem[a..end].copy_from_slice(&v.to_le_bytes());
    Ok(())
}

fn arith(ty: Ty, f_u: impl Fn(u32, u32) -> u32, f_f: impl Fn(f32, f32) -> f32, a: u32, b: u32) -> u32 {
    match ty {
        Ty::F32 => f_f(f32::from_bits(a), f32::from_bits(b)).to_bits(),
        _ => f_u(a, b),
    }
}

fn run_thread(
    ir: &KernelIR,
    args: &Args,
    mem: &mut [u8],
    ctaid: (u32, u32),
    tid: (u32, u32),
) -> Result<()> {
    let label_at: std::collections::HashMap<&str, usize> = ir
        .body
        .iter()
        .enumerate()
        .filter_map(|(i, ins)| ins.label.as_deref().map(|l| (l, i)))
        .collect();
    let param_val: std::collections::HashMap<&str, u32> = ir
        .params
        .iter()
        .zip(args)
        .map(|(p, &v)| (p.name.as_str(), v))
        .collect();
    let special = |s: SpecialReg| -> u32 {
        match s {
            SpecialReg::CtaidX => ctaid.0,
            SpecialReg::CtaidY => ctaid.1,
            SpecialReg::TidX => tid.0,
            SpecialReg::TidY => tid.1,
            SpecialReg::NtidX => ir.block_dims.0,
            SpecialReg::NtidY => ir.block_dims.1,
        }
    };
    let mut ctx = ThreadCtx {
        regs: Default::default(),
        preds: Default::default(),
    };
    let mut pc = 0usize;
    for _ in 0..STEP_LIMIT {
        let instr = ir
            .body
            .get(pc)
            .ok_or_else(|| Error::Trap("control fell off the end of the body".into()))?;
        let mut next = pc + 1;
        match &instr.op {
            Op::Exit => return Ok(()),
            Op::Mov { dst, src, .. } => {
                let v = operand_value(src, &ctx, &special)?;
                ctx.regs.insert(dst.as_str(), v);
            }
            Op::Add { ty, dst, a, b } => {
                let (a, b) = (
                    operand_value(a, &ctx, &special)?,
                    operand_value(b, &ctx, &special)?,
                );
                ctx.regs
                    .insert(dst.as_str(), arith(*ty, u32::wrapping_add, |x, y| x + y, a, b));
            }
            Op::Sub { ty, dst, a, b } => {
                let (a, b) = (
                    operand_value(a, &ctx, &special)?,
                    operand_value(b, &ctx, &special)?,
                );
                ctx.regs
                    .insert(dst.as_str(), arith(*ty, u32::wrapping_sub, |x, y| x - y, a, b));
            }
            Op::Mul { ty, dst, a, b } => {
                let (a, b) = (
                    operand_value(a, &ctx, &special)?,
                    operand_value(b, &ctx, &special)?,
                );
                ctx.regs
                    .insert(dst.as_str(), arith(*ty, u32::wrapping_mul, |x, y| x * y, a, b));
            }
            Op::Mad { ty, dst, a, b, c } => {
                let (a, b, c) = (
                    operand_value(a, &ctx, &special)?,
                    operand_value(b, &ctx, &special)?,
                    operand_value(c, &ctx, &special)?,
                );
                let v = match ty {
                    Ty::F32 => (f32::from_bits(a) * f32::from_bits(b) + f32::from_bits(c))
                        .to_bits(),
                    _ => a.wrapping_mul(b).wrapping_add(c),
                };
                ctx.regs.insert(dst.as_str(), v);
            }
            Op::LdParam { dst, param, .. } => {
                let v = *param_val
                    .get(param.as_str())
                    .ok_or_else(|| Error::Trap(format!("unbound parameter {param:?}")))?;
                ctx.regs.insert(dst.as_str(), v);
            }
            Op::LdGlobal { dst, addr, .. } => {
                let base = *ctx
                    .regs
                    .get(addr.base.as_str())
                    .ok_or_else(|| Error::Trap(format!("read of unwritten register %{}", addr.base)))?;
                let v = load32(mem, base.wrapping_add(addr.offset))?;
                ctx.regs.insert(dst.as_str(), v);
            }
            Op::StGlobal { addr, src, .. } => {
                let base = *ctx
                    .regs
                    .get(addr.base.as_str())
                    .ok_or_else(|| Error::Trap(format!("read of unwritten register %{}", addr.base)))?;
                let v = operand_value(src, &ctx, &special)?;
                store32(mem, base.wrapping_add(addr.offset), v)?;
            }
            Op::Setp { cmp, ty, dst, a, b } => {
                let (a, b) = (
                    operand_value(a, &ctx, &special)?,
                    operand_value(b, &ctx, &special)?,
                );
                let r = match ty {
                    Ty::F32 => {
                        let (x, y) = (f32::from_bits(a), f32::from_bits(b));
                        match cmp {
                            CmpOp::Lt => x < y,
                            CmpOp::Le => x <= y,
                            CmpOp::Gt => x > y,
                            CmpOp::Ge => x >= y,
                            CmpOp::Eq => x == y,
                            CmpOp::Ne => x != y,
                        }
                    }
                    _ => match cmp {
                        CmpOp::Lt => a < b,
                        CmpOp::Le => a <= b,
                        CmpOp::Gt => a > b,
                        CmpOp::Ge => a >= b,
                        CmpOp::Eq => a == b,
                        CmpOp::Ne => a != b,
                    },
                };
                ctx.preds.insert(dst.as_str(), r);
            }
            Op::Bra { pred, target } => {
                let take = match pred {
                    None => true,
                    Some((neg, g)) => {
                        let v = *ctx
                            .preds
                            .get(g.as_str())
                            .ok_or_else(|| Error::Trap(format!("read of unwritten predicate %{g}")))?;
                        v != *neg
                    }
                };
                if take {
                    next = *label_at
                        .get(target.as_str())
                        .ok_or_else(|| Error::Trap(format!("unknown branch target {target:?}")))?;
                }
            }
        }
        pc = next;
    }
    Err(Error::Trap(format!(
        "thread exceeded {STEP_LIMIT} instructions (runaway loop?)"
    )))
}

/// Execute the given blocks (linear row-major ids within `grid`) in the
/// given order, all threads of a block in row-major order. Blocks are
/// independent, so any order yields the same image.
pub fn interpret_blocks(
    ir: &KernelIR,
    grid: (u32, u32),
    block_ids: &[u32],
    args: &Args,
    mem: &mut [u8],
) -> Result<()> {
    if args.len() != ir.params.len() {
        return Err(Error::Trap(format!(
            "kernel {} takes {} params, got {} args",
            ir.name,
            ir.params.len(),
            args.len()
        )));
    }
    let n = grid.0 as u64 * grid.1 as u64;
    for &id in block_ids {
        if (id as u64) >= n {
            return Err(Error::Trap(format!("block id {id} outside grid {grid:?}")));
        }
        let ctaid = (id % grid.0, id / grid.0);
        for ty in 0..ir.block_dims.1 {
            for tx in 0..ir.block_dims.0 {
                run_thread(ir, args, mem, ctaid, (tx, ty))?;
            }
        }
    }
    Ok(())
}

/// Execute a full launch over `grid` in natural block order.
pub fn interpret_kernel(
    ir: &KernelIR,
    grid: (u32, u32),
    args: &Args,
    mem: &mut [u8],
) -> Result<()> {
    let ids: Vec<u32> = (0..grid.0 * grid.1).collect();
    interpret_blocks(ir, grid, &ids, args, mem)
}

/// Execute a rectified kernel slice by slice. Each slice is a contiguous
/// run of linear block ids over the original grid; it is decomposed into
/// row segments, and each segment launches the rectified kernel on a
/// (len, 1) grid with the segment's (x, y) origin passed through the
/// offset params — exactly the mechanism a host-side slicing loop uses.
pub fn run_sliced(
    rectified: &KernelIR,
    original_grid: (u32, u32),
    plan: &SlicingPlan,
    args: &Args,
    mem: &mut [u8],
) -> Result<()> {
    let n_params = rectified.params.len();
    let has_offsets = rectified
        .params
        .iter()
        .rev()
        .take(2)
        .any(|p| p.name == OFFSET_X_PARAM || p.name == OFFSET_Y_PARAM);
    if !has_offsets {
        return Err(Error::InvalidInput(format!(
            "kernel {} is not rectified",
            rectified.name
        )));
    }
    if args.len() + 2 != n_params {
        return Err(Error::Trap(format!(
            "rectified kernel {} takes {} base args, got {}",
            rectified.name,
            n_params - 2,
            args.len()
        )));
    }
    let gx = original_grid.0 as u64;
    for &(offset, count) in &plan.slices {
        let mut at = offset;
        let mut left = count;
        while left > 0 {
            let x = (at % gx) as u32;
            let y = (at / gx) as u32;
            let len = ((gx - x as u64).min(left)) as u32;
            let mut full_args = args.to_vec();
            full_args.push(x);
            full_args.push(y);
            interpret_kernel(rectified, (len, 1), &full_args, mem)?;
            at += len as u64;
            left -= len as u64;
        }
    }
    Ok(())
}
