#pragma once

#include <vector>

namespace lgmoe {

struct EditStats {
  int substitutions = 0;
  int insertions = 0;
  int deletions = 0;
  double rate = 0.0;       // (S+I+D) / max(1, len(ref))
  bool empty_ref = false;  // flagged when ref is empty but hyp is not

  int total() const { return substitutions + insertions + deletions; }
};

/// Levenshtein alignment with unit costs. Ties resolve match/substitution
/// first, then deletion, then insertion, so counts are deterministic.
EditStats edit_distance(const std::vector<int>& hyp, const std::vector<int>& ref);

}  // namespace lgmoe
