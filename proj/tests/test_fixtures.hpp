#pragma once

#include <cstdint>
#include <string>

#include "voxgan/arch.hpp"

// Conditioning fixtures. The default N(0, 0.02) initialization produces a
// generator whose outputs hug 0.5 until batch-norm running statistics adapt
// during training; unit tests instead use a variance-preserving random
// generator with healthy z-gradients and outputs spread across [0,1].
// Training-quality claims run against properly trained models in the
// acceptance suite.

namespace fixtures {

inline voxgan::GeneratorParams designed_generator(const voxgan::ArchSpec& spec,
                                                  std::uint64_t seed) {
    auto [gen, critic] = voxgan::init_params(spec, seed);
    std::size_t stage = 0;
    const std::size_t stages = spec.up_stages() + 1;
    for (auto& t : gen.tensors)
        if (t.name.find("kernel") != std::string::npos) {
            // roughly unit-variance signal per stage, wider at the tanh input
            const float sigma =
                stage + 1 == stages ? 0.35f : (stage == 0 ? 0.18f : 0.25f);
            for (auto& v : t.values) v *= sigma / 0.02f;
            ++stage;
        }
    return gen;
}

}  // namespace fixtures
