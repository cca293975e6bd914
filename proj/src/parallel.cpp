#include "voxgan/parallel.hpp"

#include <algorithm>
#include <thread>

namespace voxgan {

namespace {

int default_threads() {
    static const int n = [] {
        unsigned hw = std::thread::hardware_concurrency();
        return static_cast<int>(std::clamp(hw, 1u, 8u));
    }();
    return n;
}

thread_local int g_override = 0;

}  // namespace

int intra_op_threads() { return g_override > 0 ? g_override : default_threads(); }

void set_intra_op_threads(int n) { g_override = n > 0 ? n : 0; }

}  // namespace voxgan
