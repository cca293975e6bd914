#pragma once

namespace voxgan {

// Worker budget for intra-op parallelism on the calling thread. Conv kernels
// only split work across disjoint output slabs, so every element is computed
// by exactly one thread in a fixed order and results are bit-identical for
// any setting.
int intra_op_threads();

// Thread-local override. n <= 0 restores the process-wide default
// (hardware concurrency). Ensemble workers set 1 to avoid oversubscription.
void set_intra_op_threads(int n);

}  // namespace voxgan
