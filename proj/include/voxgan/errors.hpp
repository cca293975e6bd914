#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace voxgan {

// Rank or extent disagreement between tensors, kernels, or volumes.
class dimension_error : public std::invalid_argument {
  public:
    explicit dimension_error(const std::string& what) : std::invalid_argument(what) {}
};

// Malformed GVOX/GCKP payload; carries the byte offset of the first defect.
class format_error : public std::runtime_error {
  public:
    format_error(const std::string& what, std::size_t byte_offset)
        : std::runtime_error(what + " (byte offset " + std::to_string(byte_offset) + ")"),
          byte_offset_(byte_offset) {}

    std::size_t byte_offset() const noexcept { return byte_offset_; }

  private:
    std::size_t byte_offset_;
};

// An ensemble run finished with zero converged members.
class ensemble_error : public std::runtime_error {
  public:
    using std::runtime_error::runtime_error;
};

}  // namespace voxgan
