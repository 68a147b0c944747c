#pragma once

#include <cstddef>
#include <functional>
#include <vector>

#include "owl/tensor.hpp"

namespace owl {

// Attention weights of the current decode position in one layer:
// weights(head, j) for every context position j (prior positions + self).
struct AttentionRecord {
  std::size_t layer = 0;
  Matrix weights;

  std::size_t heads() const { return weights.rows(); }
  std::size_t context() const { return weights.cols(); }
};

// Index sets of the visual prefix and of the text tokens (instruction and
// generated history, optionally including the current position).
struct TokenPartition {
  std::vector<std::size_t> visual;
  std::vector<std::size_t> text;

  // Visual prefix [0, visual_slots); text [visual_slots, length) when
  // self_in_text, else [visual_slots, length - 1).
  static TokenPartition for_sequence(std::size_t visual_slots, std::size_t length,
                                     bool self_in_text = true);

  // Throws kInvalidArgument if the sets overlap or reference a position
  // >= length.
  void validate(std::size_t length) const;
};

// Rewrites one layer's attention rows (heads x context) in place. Called
// after the softmax, before value mixing.
struct AttentionHook {
  std::function<void(std::size_t layer, Matrix& rows)> rewrite;
  // When false, forward_step rejects rows that do not sum to 1 +- 1e-4.
  bool allow_unnormalized = false;
};

}  // namespace owl
