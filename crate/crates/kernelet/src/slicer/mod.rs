//! PTX-lite kernels: parsing, emission, index rectification, slicing
//! plans, and a sequential interpreter for differential testing.
//!
//! The grammar is documented in docs/ptx-lite.md; sample kernels live in
//! the corpus/ directory as .ptxl files.

mod emit;
pub mod ir;
mod interp;
mod parse;
mod plan;
mod rectify;

pub use emit::emit_kernel_ir;
pub use interp::{interpret_blocks, interpret_kernel, run_sliced};
pub use ir::KernelIR;
pub use parse::parse_kernel_ir;
pub use plan::{make_slicing_plan, min_slice_size, MinSliceSize, SlicingPlan};
pub use rectify::{is_rectified, rectify_indices, OFFSET_X_PARAM, OFFSET_Y_PARAM};

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kernel::KernelDescriptor;

    const SMALL: &str = r#"
.entry small (
    .param .u32 out,
    .param .u32 n
)
.grid 4, 1
.block 8, 1
{
    .reg .u32 %r<6>;
    .reg .pred %p<1>;

    mov.u32 %r0, %ctaid.x;
    mul.u32 %r0, %r0, %ntid.x;
    add.u32 %r0, %r0, %tid.x;
    ld.param.u32 %r1, [n];
    setp.ge.u32 %p0, %r0, %r1;
    @%p0 bra DONE;
    mul.u32 %r2, %r0, 4;
    ld.param.u32 %r3, [out];
    add.u32 %r3, %r3, %r2;
    st.global.u32 [%r3], %r0;
DONE:
    exit;
}
"#;

    #[test]
    fn parse_emit_round_trip() {
        let ir = parse_kernel_ir(SMALL).unwrap();
        assert_eq!(ir.name, "small");
        assert_eq!(ir.params.len(), 2);
        assert_eq!(ir.grid_dims, (4, 1));
        let text = emit_kernel_ir(&ir);
        let ir2 = parse_kernel_ir(&text).unwrap();
        assert_eq!(ir, ir2);
        // idempotent formatting
        assert_eq!(text, emit_kernel_ir(&ir2));
    }

    #[test]
    fn parse_errors() {
        let empty = ".entry e () .grid 1, 1 .block 1, 1 { }";
        let e = parse_kernel_ir(empty).unwrap_err();
        assert!(e.to_string().contains("exit"), "{e}");

        let zdim = ".entry e () .grid 1, 1 .block 1, 1 {
            .reg .u32 %r<1>;
            mov.u32 %r0, %ctaid.z;
            exit;
        }";
        let e = parse_kernel_ir(zdim).unwrap_err();
        assert!(e.to_string().contains("x/y"), "{e}");

        let undef = ".entry e () .grid 1, 1 .block 1, 1 {
            .reg .u32 %r<1>;
            mov.u32 %r0, %q7;
            exit;
        }";
        let e = parse_kernel_ir(undef).unwrap_err();
        assert!(e.to_string().contains("%q7"), "{e}");

        let mismatch = ".entry e () .grid 1, 1 .block 1, 1 {
            .reg .u32 %r<1>;
            .reg .f32 %f<1>;
            mov.u32 %r0, 1;
            add.f32 %f0, %r0, 1.0;
            exit;
        }";
        let e = parse_kernel_ir(mismatch).unwrap_err();
        assert!(e.to_string().contains("mismatch"), "{e}");
    }

    #[test]
    fn interpret_writes_ids() {
        let ir = parse_kernel_ir(SMALL).unwrap();
        let mut mem = vec![0u8; 33 * 4];
        // out at byte 4, n = 32 threads
        interpret_kernel(&ir, ir.grid_dims, &[4, 32], &mut mem).unwrap();
        for i in 0..32u32 {
            let at = 4 + 4 * i as usize;
            let v = u32::from_le_bytes(mem[at..at + 4].try_into().unwrap());
            assert_eq!(v, i);
        }
    }

    #[test]
    fn zero_blocks_leaves_memory_unchanged() {
        let ir = parse_kernel_ir(SMALL).unwrap();
        let mut mem = vec![7u8; 64];
        let before = mem.clone();
        interpret_blocks(&ir, ir.grid_dims, &[], &[4, 0], &mut mem).unwrap();
        assert_eq!(mem, before);
    }

    #[test]
    fn out_of_bounds_traps() {
        let ir = parse_kernel_ir(SMALL).unwrap();
        let mut mem = vec![0u8; 16];
        let e = interpret_kernel(&ir, ir.grid_dims, &[4, 32], &mut mem).unwrap_err();
        assert!(e.to_string().contains("out of bounds"), "{e}");
    }

    #[test]
    fn rectified_slices_match_unsliced() {
        let ir = parse_kernel_ir(SMALL).unwrap();
        let rect = rectify_indices(&ir);
        assert_eq!(rect.params.len(), 4);
        // re-rectifying adds nothing
        assert_eq!(rectify_indices(&rect), rect);
        // %r4, %r5 are free, so the register count stays unchanged
        assert_eq!(rect.declared_regs().len(), ir.declared_regs().len());

        let desc = KernelDescriptor {
            name: "small".into(),
            grid_blocks: 4,
            warps_per_block: 1,
            instructions_per_block: 10,
            mem_instruction_ratio: 0.1,
            uncoalesced_fraction: 0.0,
            registers_per_thread: 6,
            shared_mem_per_block: 0,
            pur: None,
            mur: None,
            profile: None,
        };
        let args = [4u32, 32];
        let mut reference = vec![0u8; 33 * 4];
        interpret_kernel(&ir, ir.grid_dims, &args, &mut reference).unwrap();
        for s in 1..=4u64 {
            let plan = make_slicing_plan(&desc, s).unwrap();
            let mut mem = vec![0u8; 33 * 4];
            run_sliced(&rect, ir.grid_dims, &plan, &args, &mut mem).unwrap();
            assert_eq!(mem, reference, "slice size {s}");
        }
    }

    #[test]
    fn slicing_plan_shapes() {
        let mut desc = KernelDescriptor {
            name: "k".into(),
            grid_blocks: 256,
            warps_per_block: 1,
            instructions_per_block: 10,
            mem_instruction_ratio: 0.1,
            uncoalesced_fraction: 0.0,
            registers_per_thread: 4,
            shared_mem_per_block: 0,
            pur: None,
            mur: None,
            profile: None,
        };
        let p = make_slicing_plan(&desc, 8).unwrap();
        assert_eq!(p.slices.len(), 32);
        assert!(p.slices.iter().all(|&(_, c)| c == 8));

        desc.grid_blocks = 10;
        let p = make_slicing_plan(&desc, 3).unwrap();
        assert_eq!(p.slices, vec![(0, 3), (3, 3), (6, 3), (9, 1)]);

        desc.grid_blocks = 10;
        let p = make_slicing_plan(&desc, 10).unwrap();
        assert_eq!(p.slices, vec![(0, 10)]);
        assert!(make_slicing_plan(&desc, 0).is_err());
        assert!(make_slicing_plan(&desc, 11).is_err());
    }
}
