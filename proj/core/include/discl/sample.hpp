#pragma once

#include <cstdint>
#include <vector>

#include "discl/image.hpp"

namespace discl {

enum class Origin : std::uint8_t { real = 0, synthetic = 1 };

struct LabeledImage {
  Image image;
  int label = 0;
  Origin origin = Origin::real;
  /// Guidance level the sample was produced at; always 1 for real samples.
  double lambda = 1.0;
  std::uint64_t sample_id = 0;

  friend bool operator==(const LabeledImage&, const LabeledImage&) = default;
};

using Dataset = std::vector<LabeledImage>;

// Sample ids pack (split, class, index) so ids from different splits never
// collide and the class of any id (including spectrum sources) is recoverable.
enum class Split : std::uint16_t {
  train = 1,
  id_test = 2,
  ood_test = 3,
  corpus = 4,
  filter_corpus = 5,
  synthetic = 7,
};

constexpr std::uint64_t make_sample_id(Split split, int label, std::uint32_t index) noexcept {
  return (static_cast<std::uint64_t>(split) << 48) | (static_cast<std::uint64_t>(label & 0xffff) << 32) |
         static_cast<std::uint64_t>(index);
}
constexpr int label_of_id(std::uint64_t id) noexcept { return static_cast<int>((id >> 32) & 0xffff); }
constexpr Split split_of_id(std::uint64_t id) noexcept { return static_cast<Split>(id >> 48); }

}  // namespace discl
