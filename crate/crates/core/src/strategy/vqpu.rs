use crate::model::QpuAccess;

use super::AllocationStrategy;

/// Like co-scheduling, but quantum requests bind one of `k` virtual QPU
/// leases per physical QPU. The physical QPU serves tasks from all its leases
/// in arrival order.
#[derive(Clone, Copy, Debug)]
pub struct VirtualQpu {
    pub k: u32,
}

impl AllocationStrategy for VirtualQpu {
    fn name(&self) -> &'static str {
        "vqpu"
    }

    fn qpu_access(&self) -> QpuAccess {
        QpuAccess::Virtual
    }
}
