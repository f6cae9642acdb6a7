//! Parse a PTX-lite kernel, rectify its block-index reads so slices see
//! grid-relative coordinates, and print the rectified source next to an
//! 8-blocks-per-slice launch plan.

use kernelet::kernel::KernelDescriptor;
use kernelet::slicer::{emit_kernel_ir, make_slicing_plan, parse_kernel_ir, rectify_indices};

fn main() {
    let root = std::path::Path::new(env!("CARGO_MANIFEST_DIR")).join("../..");
    let src = std::fs::read_to_string(root.join("corpus/matrix_add.ptxl")).unwrap();
    let ir = parse_kernel_ir(&src).unwrap();
    let rectified = rectify_indices(&ir);
    println!("{}", emit_kernel_ir(&rectified));

    let desc = KernelDescriptor {
        name: ir.name.clone(),
        grid_blocks: ir.grid_blocks(),
        warps_per_block: 8,
        instructions_per_block: ir.body.len() as u64,
        mem_instruction_ratio: 0.2,
        uncoalesced_fraction: 0.0,
        registers_per_thread: ir.declared_regs().len() as u32,
        shared_mem_per_block: 0,
        pur: Some(0.5),
        mur: Some(0.1),
        profile: None,
    };
    let plan = make_slicing_plan(&desc, 8).unwrap();
    println!("{} blocks -> {} slices of 8:", desc.grid_blocks, plan.slices.len());
    for (i, (start, len)) in plan.slices.iter().enumerate() {
        println!("  slice {i:>2}: blocks {start}..{}", start + len);
    }
}
